//! State abstractions, dispersion distributions, surrogate MDPs and uniformity checks.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::sync::Arc;

use crate::env::{History, HistoryEnv, Percept};
use crate::error::{Error, Result};
use crate::mdp::{FiniteMdp, ROW_TOLERANCE};
use crate::planners::{avi, QTable};
use crate::policy::Policy;
use crate::rng::seeded;

/// Q* tolerance used by the checkers.
pub const CHECK_THETA: f64 = 1e-11;

/// A total map from histories to `0..n_states()`.
pub trait Abstraction: Send + Sync {
    fn n_states(&self) -> usize;
    fn state(&self, h: &History) -> usize;

    /// State of `h` extended by `(a, e)`.
    fn state_after(&self, h: &History, a: usize, e: Percept) -> usize {
        self.state(&h.extended(a, e))
    }
}

/// Abstraction of a finite MDP that labels the last observation (the underlying state).
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TabularAbstraction {
    labels: Vec<usize>,
    n_states: usize,
}

impl TabularAbstraction {
    pub fn new(labels: Vec<usize>, n_states: usize) -> Result<Self> {
        if let Some(&bad) = labels.iter().find(|&&l| l >= n_states) {
            return Err(Error::InvalidArgument(format!("label {bad} outside 0..{n_states}")));
        }
        Ok(TabularAbstraction { labels, n_states })
    }

    /// Relabels to `0..k` in order of first appearance; `k` becomes the state count.
    pub fn from_labels<T: Eq + std::hash::Hash + Clone>(raw: &[T]) -> Self {
        let mut ids: HashMap<T, usize> = HashMap::new();
        let labels: Vec<usize> = raw
            .iter()
            .map(|x| {
                let next = ids.len();
                *ids.entry(x.clone()).or_insert(next)
            })
            .collect();
        TabularAbstraction { n_states: ids.len(), labels }
    }

    pub fn identity(n: usize) -> Self {
        TabularAbstraction { labels: (0..n).collect(), n_states: n }
    }

    pub fn constant(n: usize) -> Self {
        TabularAbstraction { labels: vec![0; n], n_states: 1 }
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    #[inline]
    pub fn label(&self, x: usize) -> usize {
        self.labels[x]
    }

    pub fn n_underlying(&self) -> usize {
        self.labels.len()
    }

    /// Underlying states grouped by abstract state.
    pub fn blocks(&self) -> Vec<Vec<usize>> {
        let mut b = vec![Vec::new(); self.n_states];
        for (x, &s) in self.labels.iter().enumerate() {
            b[s].push(x);
        }
        b
    }

    /// Serialized form: the state count on the first line, then one label per underlying state.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{}", self.n_states);
        let labels: Vec<String> = self.labels.iter().map(|l| l.to_string()).collect();
        out.push_str(&labels.join(" "));
        out.push('\n');
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let n_states =
            lines.next().and_then(|l| l.trim().parse().ok()).ok_or(Error::Parse { line: 1, msg: "expected state count".into() })?;
        let labels = lines
            .flat_map(|l| l.split_whitespace())
            .map(|t| t.parse().map_err(|_| Error::Parse { line: 2, msg: format!("bad label `{t}`") }))
            .collect::<Result<Vec<usize>>>()?;
        Self::new(labels, n_states)
    }
}

impl Abstraction for TabularAbstraction {
    fn n_states(&self) -> usize {
        self.n_states
    }
    fn state(&self, h: &History) -> usize {
        self.labels[h.last().observation]
    }
    fn state_after(&self, _h: &History, _a: usize, e: Percept) -> usize {
        self.labels[e.observation]
    }
}

/// Abstraction given by a closure.
#[derive(Clone)]
pub struct FnAbstraction {
    n_states: usize,
    f: Arc<dyn Fn(&History) -> usize + Send + Sync>,
}

impl FnAbstraction {
    pub fn new<F: Fn(&History) -> usize + Send + Sync + 'static>(n_states: usize, f: F) -> Self {
        FnAbstraction { n_states, f: Arc::new(f) }
    }
}

impl Abstraction for FnAbstraction {
    fn n_states(&self) -> usize {
        self.n_states
    }
    fn state(&self, h: &History) -> usize {
        (self.f)(h)
    }
}

/// Pushforward of the next-percept distribution through `psi`, merged by `(state, reward)`.
pub fn state_process_kernel<E, A>(env: &E, psi: &A, h: &History, a: usize) -> Vec<(usize, f64, f64)>
where
    E: HistoryEnv + ?Sized,
    A: Abstraction + ?Sized,
{
    let mut out: Vec<(usize, f64, f64)> = Vec::new();
    for (e, p) in env.percept_distribution(h, a) {
        let s = psi.state_after(h, a, e);
        match out.iter_mut().find(|(t, r, _)| *t == s && *r == e.reward) {
            Some(entry) => entry.2 += p,
            None => out.push((s, e.reward, p)),
        }
    }
    out
}

/// Weights `B(x | s, a)` over underlying states of a tabular abstraction.
#[derive(Debug, Clone, PartialEq)]
pub struct Dispersion {
    n_abstract: usize,
    n_actions: usize,
    n_under: usize,
    /// Flat `[s][a][x]`.
    w: Vec<f64>,
}

impl Dispersion {
    pub fn from_fn(psi: &TabularAbstraction, n_actions: usize, f: impl Fn(usize, usize, usize) -> f64) -> Self {
        let (ns, nx) = (psi.n_states(), psi.n_underlying());
        let mut w = vec![0.0; ns * n_actions * nx];
        for s in 0..ns {
            for a in 0..n_actions {
                for x in 0..nx {
                    w[(s * n_actions + a) * nx + x] = f(s, a, x);
                }
            }
        }
        Dispersion { n_abstract: ns, n_actions, n_under: nx, w }
    }

    /// `B(x | s, a) ∝ weight[a][x]` within the block of `s`.
    pub fn from_action_weights(psi: &TabularAbstraction, weights: &[Vec<f64>]) -> Result<Self> {
        let n_actions = weights.len();
        let blocks = psi.blocks();
        let mut mass = vec![vec![0.0; psi.n_states()]; n_actions];
        for (a, wa) in weights.iter().enumerate() {
            if wa.len() != psi.n_underlying() {
                return Err(Error::InvalidDispersion("weight vector length".into()));
            }
            for (s, block) in blocks.iter().enumerate() {
                mass[a][s] = block.iter().map(|&x| wa[x]).sum();
                if !(mass[a][s] > 0.0) {
                    return Err(Error::InvalidDispersion(format!("no weight on block {s} for action {a}")));
                }
            }
        }
        Ok(Self::from_fn(psi, n_actions, |s, a, x| if psi.label(x) == s { weights[a][x] / mass[a][s] } else { 0.0 }))
    }

    /// Action-independent weights proportional to `rho` within each block.
    pub fn from_state_weights(psi: &TabularAbstraction, n_actions: usize, rho: &[f64]) -> Result<Self> {
        Self::from_action_weights(psi, &vec![rho.to_vec(); n_actions])
    }

    pub fn uniform(psi: &TabularAbstraction, n_actions: usize) -> Self {
        Self::from_state_weights(psi, n_actions, &vec![1.0; psi.n_underlying()])
            .unwrap_or_else(|_| Self::from_fn(psi, n_actions, |_, _, _| 0.0))
    }

    /// Random weights on every block member, for property tests.
    pub fn random<R: rand::Rng + ?Sized>(psi: &TabularAbstraction, n_actions: usize, rng: &mut R) -> Result<Self> {
        let weights: Vec<Vec<f64>> = (0..n_actions).map(|_| (0..psi.n_underlying()).map(|_| 0.05 + rng.gen::<f64>()).collect()).collect();
        Self::from_action_weights(psi, &weights)
    }

    #[inline]
    pub fn row(&self, s: usize, a: usize) -> &[f64] {
        let start = (s * self.n_actions + a) * self.n_under;
        &self.w[start..start + self.n_under]
    }

    pub fn validate(&self, psi: &TabularAbstraction) -> Result<()> {
        if self.n_abstract != psi.n_states() || self.n_under != psi.n_underlying() {
            return Err(Error::InvalidDispersion("dimensions do not match the abstraction".into()));
        }
        for s in 0..self.n_abstract {
            for a in 0..self.n_actions {
                let row = self.row(s, a);
                let mut sum = 0.0;
                for (x, &b) in row.iter().enumerate() {
                    if !(0.0..=1.0).contains(&b) || (b > 0.0 && psi.label(x) != s) {
                        return Err(Error::InvalidDispersion(format!("row ({s}, {a}) puts weight on state {x}")));
                    }
                    sum += b;
                }
                if (sum - 1.0).abs() > ROW_TOLERANCE {
                    return Err(Error::InvalidDispersion(format!("row ({s}, {a}) sums to {sum}")));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DispersionSource {
    Explicit,
    StationaryOfPolicy(String),
    EmpiricalFrequency { steps: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Provenance {
    pub abstraction: String,
    pub source: DispersionSource,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SurrogateMdp {
    pub mdp: FiniteMdp,
    pub provenance: Provenance,
}

/// Surrogate MDP of a tabular abstraction under dispersion `b`.
pub fn build_surrogate(under: &FiniteMdp, psi: &TabularAbstraction, b: &Dispersion, source: DispersionSource) -> Result<SurrogateMdp> {
    if psi.n_underlying() != under.n_states() || b.n_actions != under.n_actions() {
        return Err(Error::Shape("abstraction or dispersion does not match the MDP".into()));
    }
    b.validate(psi)?;
    let (ns, na) = (psi.n_states(), under.n_actions());
    let mut t = vec![0.0; ns * na * ns];
    let mut r = vec![0.0; ns * na];
    for s in 0..ns {
        for a in 0..na {
            for (x, &bx) in b.row(s, a).iter().enumerate() {
                if bx == 0.0 {
                    continue;
                }
                r[s * na + a] += bx * under.r(x, a);
                for (y, &p) in under.p(x, a).iter().enumerate() {
                    t[(s * na + a) * ns + psi.label(y)] += bx * p;
                }
            }
        }
    }
    let mdp = FiniteMdp::from_flat(ns, na, t, r, under.gamma())?;
    Ok(SurrogateMdp { mdp, provenance: Provenance { abstraction: abstraction_id(psi), source } })
}

/// Short identifier of a tabular abstraction.
pub fn abstraction_id(psi: &TabularAbstraction) -> String {
    let labels: Vec<String> = psi.labels().iter().map(|l| l.to_string()).collect();
    format!("tabular[{}:{}]", psi.n_states(), labels.join(","))
}

/// Result of a uniformity check. `secondary_gap` carries the second
/// criterion when a definition has two (reward gap, or optimal-set mismatch count).
#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub holds: bool,
    pub worst_gap: f64,
    pub secondary_gap: f64,
    pub witness: Option<Witness>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Witness {
    pub first: usize,
    pub second: usize,
    pub action: Option<usize>,
}

fn pairs_in_blocks(psi: &TabularAbstraction) -> Vec<(usize, usize)> {
    let mut pairs = Vec::new();
    for b in psi.blocks() {
        for i in 0..b.len() {
            for j in i + 1..b.len() {
                pairs.push((b[i], b[j]));
            }
        }
    }
    pairs
}

pub fn optimal_q(under: &FiniteMdp) -> Result<QTable> {
    avi(under, CHECK_THETA)
}

/// Largest action-value gap between co-mapped states.
pub fn check_qdp(under: &FiniteMdp, psi: &TabularAbstraction, eps: f64) -> Result<Report> {
    Ok(check_qdp_with(&optimal_q(under)?, psi, eps))
}

pub fn check_qdp_with(q: &QTable, psi: &TabularAbstraction, eps: f64) -> Report {
    let mut worst = 0.0;
    let mut witness = None;
    for (x, y) in pairs_in_blocks(psi) {
        for a in 0..q.n_actions() {
            let gap = (q.get(x, a) - q.get(y, a)).abs();
            if gap > worst {
                worst = gap;
                witness = Some(Witness { first: x, second: y, action: Some(a) });
            }
        }
    }
    Report { holds: worst <= eps, worst_gap: worst, secondary_gap: 0.0, witness }
}

/// ε₂-optimal action set `{a : V*(x) - Q*(x,a) ≤ ε₂}`.
pub fn near_optimal_actions(q: &QTable, x: usize, eps: f64) -> Vec<usize> {
    let v = q.max(x);
    (0..q.n_actions()).filter(|&a| v - q.get(x, a) <= eps).collect()
}

/// Value gap at most `eps1` and identical ε₂-optimal action sets within blocks.
/// `secondary_gap` counts co-mapped pairs whose sets differ.
pub fn check_vpdp(under: &FiniteMdp, psi: &TabularAbstraction, eps1: f64, eps2: f64) -> Result<Report> {
    Ok(check_vpdp_with(&optimal_q(under)?, psi, eps1, eps2))
}

pub fn check_vpdp_with(q: &QTable, psi: &TabularAbstraction, eps1: f64, eps2: f64) -> Report {
    let mut worst = 0.0;
    let mut witness = None;
    let mut mismatches = 0usize;
    for (x, y) in pairs_in_blocks(psi) {
        let gap = (q.max(x) - q.max(y)).abs();
        let same = near_optimal_actions(q, x, eps2) == near_optimal_actions(q, y, eps2);
        if !same {
            mismatches += 1;
        }
        if gap > worst || (!same && witness.is_none()) {
            worst = worst.max(gap);
            witness = Some(Witness { first: x, second: y, action: None });
        }
    }
    Report { holds: worst <= eps1 && mismatches == 0, worst_gap: worst, secondary_gap: mismatches as f64, witness }
}

/// Kernel L1 gap (`worst_gap`) and reward gap (`secondary_gap`) between
/// co-mapped states. With a dispersion, each state is compared against the
/// surrogate row of its block instead of against other states.
pub fn check_eps_mdp(under: &FiniteMdp, psi: &TabularAbstraction, b: Option<&Dispersion>, eps1: f64, eps2: f64) -> Result<Report> {
    let (ns, na) = (psi.n_states(), under.n_actions());
    let abstract_row = |x: usize, a: usize| {
        let mut row = vec![0.0; ns];
        for (y, &p) in under.p(x, a).iter().enumerate() {
            row[psi.label(y)] += p;
        }
        row
    };
    let l1 = |u: &[f64], v: &[f64]| u.iter().zip(v).map(|(a, b)| (a - b).abs()).sum::<f64>();
    let (mut k_worst, mut r_worst, mut witness) = (0.0f64, 0.0f64, None);
    let mut note = |k: f64, r: f64, w: Witness| {
        if k > eps1 || r > eps2 {
            if witness.is_none() || k > k_worst || r > r_worst {
                witness = Some(w);
            }
        }
        k_worst = k_worst.max(k);
        r_worst = r_worst.max(r);
    };
    match b {
        None => {
            for (x, y) in pairs_in_blocks(psi) {
                for a in 0..na {
                    let k = l1(&abstract_row(x, a), &abstract_row(y, a));
                    let r = (under.r(x, a) - under.r(y, a)).abs();
                    note(k, r, Witness { first: x, second: y, action: Some(a) });
                }
            }
        }
        Some(b) => {
            let sur = build_surrogate(under, psi, b, DispersionSource::Explicit)?;
            for x in 0..under.n_states() {
                let s = psi.label(x);
                for a in 0..na {
                    let k = l1(&abstract_row(x, a), sur.mdp.p(s, a));
                    let r = (under.r(x, a) - sur.mdp.r(s, a)).abs();
                    note(k, r, Witness { first: x, second: x, action: Some(a) });
                }
            }
        }
    }
    Ok(Report { holds: k_worst <= eps1 && r_worst <= eps2, worst_gap: k_worst, secondary_gap: r_worst, witness })
}

/// Action-value gap implied by pairwise kernel gap `eps1` (L1) and reward gap
/// `eps2`: `(ε₂ + γ ε₁ R / (2(1-γ))) / (1-γ)` with `R` the reward range.
pub fn eps_mdp_qdp_bound(eps1: f64, eps2: f64, gamma: f64, reward_range: f64) -> f64 {
    (eps2 + gamma * eps1 * reward_range / (2.0 * (1.0 - gamma))) / (1.0 - gamma)
}

/// Labels each state by its per-action bins `ceil(Q*(x,a)/eps)`, values on a
/// bin edge going to the lower bin.
pub fn extreme_qdp_map(under: &FiniteMdp, eps: f64) -> Result<TabularAbstraction> {
    if !(eps > 0.0) {
        return Err(Error::InvalidArgument("eps must be positive".into()));
    }
    Ok(extreme_qdp_map_with(&optimal_q(under)?, eps))
}

pub fn extreme_qdp_map_with(q: &QTable, eps: f64) -> TabularAbstraction {
    let keys: Vec<Vec<i64>> = (0..q.n_states()).map(|x| q.row(x).iter().map(|v| (v / eps - 1e-12).ceil() as i64).collect()).collect();
    TabularAbstraction::from_labels(&keys)
}

/// State-count bound `(3 / (ε (1-γ)³))^|A|` for rewards in `[0, 1]`.
pub fn extreme_qdp_bound(eps: f64, gamma: f64, n_actions: usize) -> f64 {
    (3.0 / (eps * (1.0 - gamma).powi(3))).powi(n_actions as i32)
}

/// Frequency estimate of the surrogate along one simulated history.
#[derive(Debug, Clone)]
pub struct EmpiricalSurrogate {
    /// Unvisited pairs get a self-loop with zero reward.
    pub surrogate: SurrogateMdp,
    pub visits: Vec<u64>,
    pub unvisited: Vec<(usize, usize)>,
}

impl EmpiricalSurrogate {
    pub fn into_result(self) -> Result<SurrogateMdp> {
        if self.unvisited.is_empty() {
            Ok(self.surrogate)
        } else {
            Err(Error::UnvisitedPairs(self.unvisited))
        }
    }
}

pub fn empirical_surrogate<E, A>(env: &E, psi: &A, behavior: &Policy, steps: usize, seed: u64) -> Result<EmpiricalSurrogate>
where
    E: HistoryEnv + ?Sized,
    A: Abstraction + ?Sized,
{
    if steps == 0 {
        return Err(Error::InvalidArgument("steps must be at least 1".into()));
    }
    let (ns, na) = (psi.n_states(), env.n_actions());
    let mut counts = vec![0u64; ns * na * ns];
    let mut visits = vec![0u64; ns * na];
    let mut reward_sum = vec![0.0; ns * na];
    let mut rng = seeded(seed);
    let mut h = env.initial_history();
    let mut s = psi.state(&h);
    for _ in 0..steps {
        let a = crate::rng::sample_index(&behavior.at(&h)?, &mut rng);
        let e = env.sample(&h, a, &mut rng);
        let next = psi.state_after(&h, a, e);
        h.push(a, e);
        counts[(s * na + a) * ns + next] += 1;
        visits[s * na + a] += 1;
        reward_sum[s * na + a] += e.reward;
        s = next;
    }
    let mut t = vec![0.0; ns * na * ns];
    let mut r = vec![0.0; ns * na];
    let mut unvisited = Vec::new();
    for s in 0..ns {
        for a in 0..na {
            let n = visits[s * na + a];
            if n == 0 {
                unvisited.push((s, a));
                t[(s * na + a) * ns + s] = 1.0;
                continue;
            }
            r[s * na + a] = reward_sum[s * na + a] / n as f64;
            for s2 in 0..ns {
                t[(s * na + a) * ns + s2] = counts[(s * na + a) * ns + s2] as f64 / n as f64;
            }
        }
    }
    let mdp = FiniteMdp::from_flat(ns, na, t, r, env.gamma())?;
    Ok(EmpiricalSurrogate {
        surrogate: SurrogateMdp {
            mdp,
            provenance: Provenance { abstraction: format!("history-map[{ns}]"), source: DispersionSource::EmpiricalFrequency { steps } },
        },
        visits,
        unvisited,
    })
}
