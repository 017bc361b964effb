//! Random aggregatable MDPs, stationary dispersions, value-and-action
//! aggregation experiments and the search for uplift losses under
//! value-and-policy-preserving aggregations.

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::abstraction::{build_surrogate, check_vpdp_with, near_optimal_actions, Dispersion, DispersionSource, TabularAbstraction};
use crate::error::{Error, Result};
use crate::mdp::{random_distribution, FiniteMdp};
use crate::planners::{avi, evaluate_exact, stationary_distribution, QTable};
use crate::policy::one_hot;
use crate::rng::split;
use crate::stats::{pearson_with_p, Correlation};

/// Planner tolerance used throughout the experiments.
pub const SOLVE_THETA: f64 = 1e-11;
/// Power-iteration tolerance for stationary distributions.
pub const STATIONARY_TOL: f64 = 1e-13;
/// Two actions closer than this are treated as tied by the checker.
pub const TIE_TOL: f64 = 1e-9;

/// Parameters of the random aggregatable-MDP generator.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GenSpec {
    pub n_states: usize,
    pub n_abstract: usize,
    pub n_actions: usize,
    pub branching: usize,
    /// Largest optimal-value gap between two states of one block.
    pub noise: f64,
    /// Additive smoothing applied to every transition entry before renormalizing.
    pub delta: f64,
    pub gamma: f64,
    pub seed: u64,
    /// Non-optimal actions lose a value gap drawn from `(min_gap, min_gap + action_gap]`.
    pub min_gap: f64,
    pub action_gap: f64,
    /// When false, optimal actions are drawn per state instead of per block.
    pub policy_uniform: bool,
}

impl GenSpec {
    pub fn new(n_states: usize, n_abstract: usize, n_actions: usize, branching: usize, noise: f64, gamma: f64) -> Self {
        GenSpec {
            n_states,
            n_abstract,
            n_actions,
            branching,
            noise,
            delta: 5e-6,
            gamma,
            seed: 0,
            min_gap: 0.0,
            action_gap: 1.0,
            policy_uniform: true,
        }
    }

    /// `n_states` micro states aggregated `aggregation` to a block.
    pub fn with_aggregation(n_states: usize, aggregation: usize, n_actions: usize, branching: usize, noise: f64, gamma: f64) -> Self {
        Self::new(n_states, n_states / aggregation.max(1), n_actions, branching, noise, gamma)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if self.n_states == 0 || self.n_abstract == 0 || self.n_states % self.n_abstract != 0 {
            return bad("n_states must be a positive multiple of n_abstract");
        }
        if self.n_actions == 0 {
            return bad("n_actions must be positive");
        }
        if self.branching == 0 || self.branching > self.n_states {
            return bad("branching must be in 1..=n_states");
        }
        if !(self.delta > 0.0) {
            return bad("delta must be positive");
        }
        if !(self.noise >= 0.0) || !(self.min_gap >= 0.0) || !(self.action_gap > 0.0) {
            return bad("noise and min_gap must be non-negative, action_gap positive");
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::BadGamma(self.gamma));
        }
        Ok(())
    }

    pub fn aggregation(&self) -> usize {
        self.n_states / self.n_abstract
    }
}

/// A generated MDP, its aggregation and the prescribed optimal action values.
#[derive(Debug, Clone)]
pub struct Generated {
    pub mdp: FiniteMdp,
    pub psi: TabularAbstraction,
    pub q_star: QTable,
}

/// Largest intra-block value gap and whether every block shares its
/// near-optimal action set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GenCheck {
    pub value_gap: f64,
    pub actions_agree: bool,
}

pub fn check_generated(q: &QTable, psi: &TabularAbstraction) -> GenCheck {
    let v = q.state_values();
    let mut value_gap: f64 = 0.0;
    let mut actions_agree = true;
    for block in psi.blocks() {
        let first = near_optimal_actions(q, block[0], TIE_TOL);
        for &x in &block {
            value_gap = value_gap.max((v[x] - v[block[0]]).abs());
            for &y in &block {
                value_gap = value_gap.max((v[x] - v[y]).abs());
            }
            if near_optimal_actions(q, x, TIE_TOL) != first {
                actions_agree = false;
            }
        }
    }
    GenCheck { value_gap, actions_agree }
}

/// Block of micro state `x`: consecutive runs of `aggregation` states.
fn block_labels(n_states: usize, aggregation: usize) -> Result<TabularAbstraction> {
    TabularAbstraction::new((0..n_states).map(|x| x / aggregation).collect(), n_states / aggregation)
}

/// Sparse random dynamics: every row has `branching` distinct successors, one
/// of which follows a shared random cycle through all states, then
/// `delta`-smoothing makes every entry positive.
fn random_dynamics<R: Rng + ?Sized>(n: usize, n_actions: usize, branching: usize, delta: f64, rng: &mut R) -> Vec<f64> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut next = vec![0; n];
    for i in 0..n {
        next[order[i]] = order[(i + 1) % n];
    }
    let norm = 1.0 + n as f64 * delta;
    let mut t = Vec::with_capacity(n * n_actions * n);
    let others: Vec<usize> = (0..n).collect();
    for x in 0..n {
        for _ in 0..n_actions {
            let mut succ = vec![next[x]];
            let pool: Vec<usize> = others.iter().copied().filter(|&y| y != next[x]).collect();
            succ.extend(pool.choose_multiple(rng, branching - 1));
            let w = random_distribution(branching, rng);
            let mut row = vec![delta; n];
            for (&y, &p) in succ.iter().zip(&w) {
                row[y] += p;
            }
            t.extend(row.into_iter().map(|p| p / norm));
        }
    }
    t
}

/// Draws one MDP by prescribing its optimal action values: block values
/// `v(s) ~ U[0, 1/(1-γ))`, micro values within `noise/2` of them, one optimal
/// action per block (or per state when policy uniformity is off) and the
/// remaining actions below it by a random gap. Rewards are solved from the
/// dynamics so that the prescribed table is the optimal one.
pub fn gen_aggregatable_mdp<R: Rng + ?Sized>(spec: &GenSpec, rng: &mut R) -> Result<Generated> {
    spec.validate()?;
    let (n, na, agg) = (spec.n_states, spec.n_actions, spec.aggregation());
    let psi = block_labels(n, agg)?;
    let block_value: Vec<f64> = (0..spec.n_abstract).map(|_| rng.gen::<f64>() / (1.0 - spec.gamma)).collect();
    let block_action: Vec<usize> = (0..spec.n_abstract).map(|_| rng.gen_range(0..na)).collect();
    let mut q = vec![0.0; n * na];
    for x in 0..n {
        let s = psi.label(x);
        let v = block_value[s] + spec.noise * (rng.gen::<f64>() - 0.5);
        let best = if spec.policy_uniform { block_action[s] } else { rng.gen_range(0..na) };
        for a in 0..na {
            q[x * na + a] = if a == best { v } else { v - spec.min_gap - spec.action_gap * (1.0 - rng.gen::<f64>()) };
        }
    }
    let t = random_dynamics(n, na, spec.branching, spec.delta, rng);
    let mdp = FiniteMdp::from_optimal_q(n, na, t, &q, spec.gamma)?;
    let q_star = QTable::from_values(n, na, q)?;
    Ok(Generated { mdp, psi, q_star })
}

/// Generator with the post-hoc check: the solved optimal values must respect
/// the noise bound and, when requested, the shared optimal actions.
pub fn gen_checked<R: Rng + ?Sized>(spec: &GenSpec, rng: &mut R, retries: usize) -> Result<Generated> {
    for _ in 0..retries.max(1) {
        let g = gen_aggregatable_mdp(spec, rng)?;
        let solved = avi(&g.mdp, SOLVE_THETA)?;
        let c = check_generated(&solved, &g.psi);
        let gap_ok = c.value_gap <= spec.noise + 1e-6;
        if gap_ok && (c.actions_agree || !spec.policy_uniform) {
            return Ok(Generated { q_star: solved, ..g });
        }
    }
    Err(Error::GenerationFailed(retries))
}

/// Optimal values equal within blocks, per action: an exact action-value
/// aggregation over `blocks` blocks assigned round-robin.
#[derive(Debug, Clone)]
pub struct QdpInstance {
    pub mdp: FiniteMdp,
    pub psi: TabularAbstraction,
}

pub fn exact_qdp_instance<R: Rng + ?Sized>(
    n_states: usize,
    blocks: usize,
    n_actions: usize,
    gamma: f64,
    rng: &mut R,
) -> Result<QdpInstance> {
    if blocks == 0 || blocks > n_states {
        return Err(Error::InvalidArgument("need 1..=n_states blocks".into()));
    }
    let psi = TabularAbstraction::new((0..n_states).map(|x| x % blocks).collect(), blocks)?;
    let block_q: Vec<f64> = (0..blocks * n_actions).map(|_| rng.gen::<f64>() / (1.0 - gamma)).collect();
    let q: Vec<f64> = (0..n_states * n_actions).map(|i| block_q[psi.label(i / n_actions) * n_actions + i % n_actions]).collect();
    let mut t = Vec::with_capacity(n_states * n_actions * n_states);
    for _ in 0..n_states * n_actions {
        t.extend(random_distribution(n_states, rng));
    }
    Ok(QdpInstance { mdp: FiniteMdp::from_optimal_q(n_states, n_actions, t, &q, gamma)?, psi })
}

/// `B(x | s, a) ∝ ρ^a(x)` within each block, where `ρ^a` is the stationary
/// distribution of always playing `a`.
pub fn dispersion_from_stationary(mdp: &FiniteMdp, psi: &TabularAbstraction) -> Result<Dispersion> {
    let weights: Vec<Vec<f64>> =
        (0..mdp.n_actions()).map(|a| stationary_distribution(&mdp.action_chain(a), STATIONARY_TOL)).collect::<Result<_>>()?;
    Dispersion::from_action_weights(psi, &weights)
}

/// Everything computed for one generated MDP.
#[derive(Debug, Clone)]
pub struct UpliftOutcome {
    /// Surrogate-optimal action per block.
    pub abstract_policy: Vec<usize>,
    pub v_star: Vec<f64>,
    pub v_uplift: Vec<f64>,
    /// Stationary distribution of the uplifted policy.
    pub rho: Vec<f64>,
    pub optimal: bool,
}

impl UpliftOutcome {
    pub fn loss(&self) -> f64 {
        self.v_star.iter().zip(&self.v_uplift).map(|(a, b)| a - b).fold(0.0, f64::max)
    }

    pub fn macro_expectation(&self) -> f64 {
        macro_expectation(&self.rho, &self.v_star, &self.v_uplift)
    }
}

/// Solves the stationary-dispersion surrogate, uplifts its greedy policy and
/// evaluates it in the original MDP.
pub fn uplift_outcome(g: &Generated) -> Result<UpliftOutcome> {
    let b = dispersion_from_stationary(&g.mdp, &g.psi)?;
    let sur = build_surrogate(&g.mdp, &g.psi, &b, DispersionSource::StationaryOfPolicy("constant action".into()))?;
    let abstract_policy = avi(&sur.mdp, SOLVE_THETA)?.greedy();
    let na = g.mdp.n_actions();
    let policy: Vec<Vec<f64>> = (0..g.mdp.n_states()).map(|x| one_hot(abstract_policy[g.psi.label(x)], na)).collect();
    let v_uplift = evaluate_exact(&g.mdp, &policy)?;
    let rho = stationary_distribution(&g.mdp.policy_chain(&policy), STATIONARY_TOL)?;
    let v_star = g.q_star.state_values();
    let optimal = (0..g.mdp.n_states()).all(|x| g.q_star.max(x) - g.q_star.get(x, abstract_policy[g.psi.label(x)]) <= TIE_TOL);
    Ok(UpliftOutcome { abstract_policy, v_star, v_uplift, rho, optimal })
}

/// `Σ_x ρ(x) |V*(x) - V(x)|`.
pub fn macro_expectation(rho: &[f64], v_star: &[f64], v: &[f64]) -> f64 {
    rho.iter().zip(v_star.iter().zip(v)).map(|(p, (a, b))| p * (a - b).abs()).sum()
}

/// The same quantity written per block: `Σ_s ρ(s) Σ_{x∈s} ρ(x|s) |V*(x) - V(x)|`.
pub fn macro_expectation_by_block(psi: &TabularAbstraction, rho: &[f64], v_star: &[f64], v: &[f64]) -> f64 {
    psi.blocks()
        .iter()
        .map(|block| {
            let mass: f64 = block.iter().map(|&x| rho[x]).sum();
            if mass == 0.0 {
                return 0.0;
            }
            let inner: f64 = block.iter().map(|&x| rho[x] / mass * (v_star[x] - v[x]).abs()).sum();
            mass * inner
        })
        .sum()
}

/// One micro state of one kept MDP.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct VaRow {
    pub mdp: usize,
    pub state: usize,
    pub v_star: f64,
    pub v_uplift: f64,
    pub diff: f64,
    pub rho: f64,
    pub neg_log2_rho: f64,
}

pub const VA_COLUMNS: [&str; 7] = ["mdp", "state", "v_star", "v_uplift", "diff", "rho", "neg_log2_rho"];

#[derive(Debug, Clone, Serialize)]
pub struct VaSummary {
    pub spec: GenSpec,
    pub n_kept: usize,
    pub n_attempts: usize,
    /// `None` when either series has zero variance.
    pub correlation: Option<Correlation>,
    pub macro_expectations: Vec<f64>,
    pub macro_max: f64,
    pub macro_mean: f64,
}

#[derive(Debug, Clone)]
pub struct VaResult {
    pub rows: Vec<VaRow>,
    pub summary: VaSummary,
}

impl VaResult {
    pub fn summary_json(&self) -> String {
        serde_json::to_string_pretty(&self.summary).expect("summary serializes")
    }
}

/// Generates instances in parallel, one rng stream per attempt, and keeps the
/// first `n` accepted by `keep` in attempt order.
fn collect_instances<F>(spec: &GenSpec, n: usize, max_attempts: usize, keep: F) -> Result<(Vec<(Generated, UpliftOutcome)>, usize)>
where
    F: Fn(&UpliftOutcome) -> bool + Sync,
{
    let mut kept = Vec::with_capacity(n);
    let mut attempts = 0;
    let batch = n.clamp(8, 256);
    while kept.len() < n {
        if attempts >= max_attempts {
            return Err(Error::GenerationFailed(attempts));
        }
        let end = (attempts + batch).min(max_attempts);
        let results: Vec<Result<Option<(Generated, UpliftOutcome)>>> = (attempts..end)
            .into_par_iter()
            .map(|i| {
                let mut rng = split(spec.seed, i as u64);
                let g = gen_checked(spec, &mut rng, 20)?;
                let out = uplift_outcome(&g)?;
                Ok(if keep(&out) { Some((g, out)) } else { None })
            })
            .collect();
        for r in results {
            if kept.len() == n {
                break;
            }
            attempts += 1;
            if let Some(x) = r? {
                kept.push(x);
            }
        }
    }
    Ok((kept, attempts))
}

/// Attempts allowed per requested instance before giving up.
pub const ATTEMPTS_PER_INSTANCE: usize = 50;

/// Generates MDPs until `n_mdps` have a non-optimal uplifted policy, then
/// correlates the per-state value loss with the surprisal of the uplifted
/// policy's stationary distribution.
pub fn run_va_experiment(spec: &GenSpec, n_mdps: usize) -> Result<VaResult> {
    if n_mdps < 2 {
        return Err(Error::InvalidArgument("need at least 2 MDPs".into()));
    }
    let (kept, n_attempts) = collect_instances(spec, n_mdps, n_mdps * ATTEMPTS_PER_INSTANCE, |o| !o.optimal)?;
    let mut rows = Vec::new();
    let mut macro_expectations = Vec::with_capacity(kept.len());
    for (i, (_, out)) in kept.iter().enumerate() {
        macro_expectations.push(out.macro_expectation());
        for x in 0..out.v_star.len() {
            let diff = (out.v_star[x] - out.v_uplift[x]).abs();
            rows.push(VaRow {
                mdp: i,
                state: x,
                v_star: out.v_star[x],
                v_uplift: out.v_uplift[x],
                diff,
                rho: out.rho[x],
                neg_log2_rho: -out.rho[x].log2(),
            });
        }
    }
    let diffs: Vec<f64> = rows.iter().map(|r| r.diff).collect();
    let surprisal: Vec<f64> = rows.iter().map(|r| r.neg_log2_rho).collect();
    let correlation = pearson_with_p(&diffs, &surprisal)?;
    let summary = summarize(spec, kept.len(), n_attempts, correlation, macro_expectations);
    Ok(VaResult { rows, summary })
}

fn summarize(spec: &GenSpec, n_kept: usize, n_attempts: usize, correlation: Option<Correlation>, m: Vec<f64>) -> VaSummary {
    let macro_max = m.iter().cloned().fold(0.0, f64::max);
    let macro_mean = if m.is_empty() { 0.0 } else { m.iter().sum::<f64>() / m.len() as f64 };
    VaSummary { spec: spec.clone(), n_kept, n_attempts, correlation, macro_expectations: m, macro_max, macro_mean }
}

/// Macro expectations of `n_mdps` consecutive instances with no discarding.
pub fn macro_expectations(spec: &GenSpec, n_mdps: usize) -> Result<Vec<f64>> {
    let (kept, _) = collect_instances(spec, n_mdps, n_mdps, |_| true)?;
    Ok(kept.iter().map(|(_, o)| o.macro_expectation()).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Counterexample {
    pub index: usize,
    pub loss: f64,
    pub threshold: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct VpdpReport {
    pub spec: GenSpec,
    pub eps1: f64,
    pub eps2: f64,
    pub threshold: f64,
    pub losses: Vec<f64>,
    pub counterexamples: Vec<Counterexample>,
    pub worst_loss: f64,
}

/// Generator settings whose blocks satisfy the value-and-policy condition:
/// optimal values within `eps1`, and every non-optimal action more than
/// `eps2` below the optimum so the `eps2`-optimal sets are the shared optimal action.
pub fn vpdp_spec(base: &GenSpec, eps1: f64, eps2: f64) -> GenSpec {
    GenSpec { noise: eps1, min_gap: eps2, ..base.clone() }
}

/// Uplift losses of `n_mdps` instances of `spec`; a counterexample is a loss
/// above `c (eps1 + eps2)`, with `c = 1/(1-γ)` by default.
pub fn vpdp_search(spec: &GenSpec, eps1: f64, eps2: f64, c: Option<f64>, n_mdps: usize) -> Result<VpdpReport> {
    let threshold = c.unwrap_or(1.0 / (1.0 - spec.gamma)) * (eps1 + eps2);
    let (kept, _) = collect_instances(spec, n_mdps, n_mdps, |_| true)?;
    let mut losses = Vec::with_capacity(kept.len());
    let mut counterexamples = Vec::new();
    for (index, (g, out)) in kept.iter().enumerate() {
        if spec.policy_uniform && !check_vpdp_with(&g.q_star, &g.psi, eps1 + 1e-9, eps2).holds {
            return Err(Error::PreconditionViolated(format!("instance {index} is not value-and-policy uniform")));
        }
        let loss = out.loss();
        if loss > threshold {
            counterexamples.push(Counterexample { index, loss, threshold });
        }
        losses.push(loss);
    }
    let worst_loss = losses.iter().cloned().fold(0.0, f64::max);
    Ok(VpdpReport { spec: spec.clone(), eps1, eps2, threshold, losses, counterexamples, worst_loss })
}
