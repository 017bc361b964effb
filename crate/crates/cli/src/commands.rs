//! One runner per command: typed parameters, validation, computation, artifacts.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use num::rational::BigRational;
use rand::Rng;
use serde::{Deserialize, Serialize};

use grl::abstraction::{build_surrogate, check_qdp, Abstraction, Dispersion, DispersionSource, TabularAbstraction};
use grl::homomorphism::{check_q_homo, gridworld, make_region_example, q_uniform_instance, verify_value_loss, PairDispersion, RegionCase};
use grl::mdp::FiniteMdp;
use grl::ordering::{aleo, MapClass, Order, TRACE_COLUMNS};
use grl::planners::{avi, evaluate_exact};
use grl::policy::one_hot;
use grl::qlearning::{
    convergence_experiment, make_example1, make_example2, terminal_records, Behavior, QInit, RunConfig, Schedule, EXPERIMENT_COLUMNS,
};
use grl::report::Cell;
use grl::rng::seeded;
use grl::sequentialize::{format_exact, format_sci, make_codec, parse_decimal, sequentialize_markov, BoundRow, BOUND_COLUMNS};
use grl::vaexp::{
    dispersion_from_stationary, macro_expectations, run_va_experiment, vpdp_search, vpdp_spec, GenSpec, SOLVE_THETA, VA_COLUMNS,
};

use crate::config::{config_err, require, typed, Command, ConfigError, Resolved};
use crate::output::Output;

/// Runs the configured command, writing its artifacts through `out`.
pub fn dispatch(cfg: &Resolved, out: &mut Output) -> Result<()> {
    match cfg.command {
        Command::Qlearn => qlearn(cfg, out),
        Command::Surrogate => surrogate(cfg, out),
        Command::Homo => homo(cfg, out),
        Command::Binarize => binarize(cfg, out),
        Command::Bounds => bounds(cfg, out),
        Command::Vaexp => vaexp(cfg, out),
        Command::Vpdp => vpdp(cfg, out),
        Command::Order => order(cfg, out),
    }
}

fn gamma_field(g: f64) -> Result<(), ConfigError> {
    require((0.0..1.0).contains(&g), "gamma", "must lie in [0, 1)")
}

/// Resolves `path` against the directory of the config file.
fn resolve_path(base: &Path, path: &Path) -> PathBuf {
    if path.is_absolute() {
        path.to_path_buf()
    } else {
        base.join(path)
    }
}

fn row(cells: impl IntoIterator<Item = Cell>) -> Vec<Cell> {
    cells.into_iter().collect()
}

// ---- MDP sources ----

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RandomMdp {
    states: usize,
    actions: usize,
    gamma: f64,
}

/// An MDP from a file (relative to the config) or a seeded random draw.
fn load_mdp<R: Rng>(
    cfg: &Resolved,
    out: &mut Output,
    file: &Option<PathBuf>,
    random: &Option<RandomMdp>,
    rng: &mut R,
) -> Result<FiniteMdp> {
    match (file, random) {
        (Some(path), None) => {
            let path = resolve_path(&cfg.base_dir, path);
            let text = out.read_input(&path)?;
            FiniteMdp::parse(&text).with_context(|| format!("cannot parse MDP file {}", path.display()))
        }
        (None, Some(r)) => {
            require(r.states >= 1, "random.states", "must be at least 1")?;
            require(r.actions >= 1, "random.actions", "must be at least 1")?;
            require((0.0..1.0).contains(&r.gamma), "random.gamma", "must lie in [0, 1)")?;
            Ok(FiniteMdp::random(r.states, r.actions, r.gamma, rng)?)
        }
        _ => Err(ConfigError("field `mdp`: give exactly one of `mdp` (a file) or `random` (a table)".into()).into()),
    }
}

fn labels_field(labels: &[usize], n_states: usize, field: &str) -> Result<TabularAbstraction, ConfigError> {
    require(labels.len() == n_states, field, &format!("needs {n_states} labels, got {}", labels.len()))?;
    let k = labels.iter().max().map_or(0, |m| m + 1);
    TabularAbstraction::new(labels.to_vec(), k).map_err(|e| ConfigError(format!("field `{field}`: {e}")))
}

// ---- qlearn ----

#[derive(Debug, Deserialize)]
#[serde(rename_all = "lowercase")]
enum QDomain {
    Ex1,
    Ex2,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum QInitParam {
    Scalar(f64),
    Table(Vec<f64>),
}

fn default_omega() -> f64 {
    0.75
}

fn default_p_min() -> f64 {
    0.01
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct QlearnParams {
    domain: QDomain,
    gamma: f64,
    steps: usize,
    runs: usize,
    #[serde(default)]
    q_init: Option<QInitParam>,
    /// Exploration rate of an ε-greedy behavior; uniform behavior when absent.
    #[serde(default)]
    epsilon: Option<f64>,
    #[serde(default = "default_omega")]
    omega: f64,
    #[serde(default)]
    trace_every: Option<usize>,
    #[serde(default = "default_p_min")]
    p_min: f64,
}

#[derive(Serialize)]
struct TerminalEntry {
    state: usize,
    action: usize,
    mean: f64,
    std: f64,
    analytic: f64,
    gap: f64,
}

#[derive(Serialize)]
struct QlearnSummary {
    domain: &'static str,
    steps: usize,
    runs: usize,
    terminal: Vec<TerminalEntry>,
    max_gap: f64,
}

fn qlearn(cfg: &Resolved, out: &mut Output) -> Result<()> {
    let p: QlearnParams = typed(cfg.command, &cfg.params)?;
    gamma_field(p.gamma)?;
    require(p.steps >= 1, "steps", "must be at least 1")?;
    require(p.runs >= 1, "runs", "must be at least 1")?;
    require(p.omega > 0.5 && p.omega <= 1.0, "omega", "must lie in (0.5, 1]")?;
    require(p.p_min > 0.0 && p.p_min <= 1.0, "p_min", "must lie in (0, 1]")?;
    if let Some(e) = p.epsilon {
        require((0.0..=1.0).contains(&e), "epsilon", "must lie in [0, 1]")?;
    }
    let trace_every = p.trace_every.unwrap_or((p.steps / 100).max(1));
    require(trace_every >= 1, "trace_every", "must be at least 1")?;
    let domain = match p.domain {
        QDomain::Ex1 => make_example1(p.gamma)?,
        QDomain::Ex2 => make_example2(p.gamma, p.p_min)?,
    };
    let n_entries = domain.analytic.values().len();
    let q_init = match p.q_init {
        None => QInit::Scalar(0.0),
        Some(QInitParam::Scalar(v)) => QInit::Scalar(v),
        Some(QInitParam::Table(t)) => {
            require(t.len() == n_entries, "q_init", &format!("needs {n_entries} entries for domain {}", domain.name))?;
            QInit::Table(t)
        }
    };
    let config = RunConfig {
        gamma: p.gamma,
        steps: p.steps,
        n_runs: p.runs,
        seed: cfg.seed,
        q_init,
        behavior: p.epsilon.map_or(Behavior::Uniform, Behavior::EpsGreedy),
        schedule: if p.omega == 1.0 { Schedule::Harmonic } else { Schedule::Polynomial(p.omega) },
        trace_every,
    };
    let records = convergence_experiment(&domain, &config)?;
    let rows: Vec<Vec<Cell>> = records
        .iter()
        .map(|r| row([r.step.into(), r.n_runs.into(), r.state.into(), r.action.into(), r.mean.into(), r.std.into()]))
        .collect();
    out.csv("", &EXPERIMENT_COLUMNS, &rows)?;
    let terminal: Vec<TerminalEntry> = terminal_records(&records)
        .into_iter()
        .map(|r| {
            let analytic = domain.analytic.get(r.state, r.action);
            TerminalEntry { state: r.state, action: r.action, mean: r.mean, std: r.std, analytic, gap: (r.mean - analytic).abs() }
        })
        .collect();
    let max_gap = terminal.iter().map(|t| t.gap).fold(0.0, f64::max);
    out.json("_summary", &QlearnSummary { domain: domain.name, steps: p.steps, runs: p.runs, terminal, max_gap })?;
    Ok(())
}

// ---- surrogate ----

#[derive(Debug, Default, Deserialize, Serialize, Clone, Copy)]
#[serde(rename_all = "lowercase")]
enum DispersionKind {
    #[default]
    Uniform,
    Random,
    Stationary,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SurrogateParams {
    #[serde(default)]
    mdp: Option<PathBuf>,
    #[serde(default)]
    random: Option<RandomMdp>,
    labels: Vec<usize>,
    #[serde(default)]
    dispersion: DispersionKind,
}

#[derive(Serialize)]
struct SurrogateSummary {
    n_states: usize,
    n_abstract: usize,
    dispersion: DispersionKind,
    qdp_gap: f64,
    max_loss: f64,
}

fn surrogate(cfg: &Resolved, out: &mut Output) -> Result<()> {
    let p: SurrogateParams = typed(cfg.command, &cfg.params)?;
    let mut rng = seeded(cfg.seed);
    let m = load_mdp(cfg, out, &p.mdp, &p.random, &mut rng)?;
    let psi = labels_field(&p.labels, m.n_states(), "labels")?;
    let na = m.n_actions();
    let (b, source) = match p.dispersion {
        DispersionKind::Uniform => (Dispersion::uniform(&psi, na), DispersionSource::Explicit),
        DispersionKind::Random => (Dispersion::random(&psi, na, &mut rng)?, DispersionSource::Explicit),
        DispersionKind::Stationary => (dispersion_from_stationary(&m, &psi)?, DispersionSource::StationaryOfPolicy("uniform".into())),
    };
    let sur = build_surrogate(&m, &psi, &b, source)?;
    out.text("_surrogate.mdp", &sur.mdp.to_text())?;
    let greedy = avi(&sur.mdp, SOLVE_THETA)?.greedy();
    let policy: Vec<Vec<f64>> = (0..m.n_states()).map(|x| one_hot(greedy[psi.label(x)], na)).collect();
    let v_uplift = evaluate_exact(&m, &policy)?;
    let v_star = avi(&m, SOLVE_THETA)?.state_values();
    let rows: Vec<Vec<Cell>> = (0..m.n_states())
        .map(|x| row([x.into(), psi.label(x).into(), v_star[x].into(), v_uplift[x].into(), (v_star[x] - v_uplift[x]).into()]))
        .collect();
    out.csv("", &["state", "abstract_state", "v_star", "v_uplift", "loss"], &rows)?;
    let qdp_gap = check_qdp(&m, &psi, f64::INFINITY)?.worst_gap;
    let max_loss = v_star.iter().zip(&v_uplift).map(|(a, b)| a - b).fold(0.0, f64::max);
    out.json(
        "_summary",
        &SurrogateSummary { n_states: m.n_states(), n_abstract: psi.n_states(), dispersion: p.dispersion, qdp_gap, max_loss },
    )?;
    Ok(())
}

// ---- homo ----

#[derive(Debug, Deserialize, Clone, Copy)]
#[serde(rename_all = "kebab-case")]
enum HomoDomain {
    Regions,
    Gridworld,
    Random,
}

#[derive(Debug, Deserialize, Serialize, Clone, Copy)]
#[serde(rename_all = "kebab-case")]
enum RegionCaseName {
    NonMdp,
    ApproxQ,
    ApproxPolicy,
}

fn default_eps() -> f64 {
    0.1
}
fn default_eps_prime() -> f64 {
    0.2
}
fn default_grid() -> usize {
    5
}
fn default_step_cost() -> f64 {
    0.01
}
fn default_instances() -> usize {
    100
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct HomoParams {
    domain: HomoDomain,
    gamma: f64,
    #[serde(default)]
    case: Option<RegionCaseName>,
    #[serde(default = "default_eps")]
    eps: f64,
    #[serde(default = "default_eps_prime")]
    eps_prime: f64,
    #[serde(default = "default_grid")]
    size: usize,
    #[serde(default = "default_step_cost")]
    step_cost: f64,
    #[serde(default = "default_instances")]
    instances: usize,
    #[serde(default)]
    blocks: Option<usize>,
    #[serde(default)]
    abstract_actions: Option<usize>,
    #[serde(default)]
    actions: Option<usize>,
    #[serde(default)]
    clones: Option<usize>,
}

#[derive(Serialize)]
struct RegionSummary {
    case: RegionCaseName,
    gamma: f64,
    max_gap: f64,
}

#[derive(Serialize)]
struct LossSummary {
    instances: usize,
    violations: usize,
    worst_loss_over_bound: f64,
}

fn homo(cfg: &Resolved, out: &mut Output) -> Result<()> {
    let p: HomoParams = typed(cfg.command, &cfg.params)?;
    gamma_field(p.gamma)?;
    require(p.eps >= 0.0, "eps", "must be non-negative")?;
    match p.domain {
        HomoDomain::Regions => {
            let Some(case) = p.case else {
                return config_err("field `case`: required for domain `regions` (non-mdp, approx-q or approx-policy)").map_err(Into::into);
            };
            require((0.0..1.0).contains(&p.eps_prime), "eps_prime", "must lie in [0, 1)")?;
            let kind = match case {
                RegionCaseName::NonMdp => RegionCase::NonMdp,
                RegionCaseName::ApproxQ => RegionCase::ApproxQ,
                RegionCaseName::ApproxPolicy => RegionCase::ApproxPolicy,
            };
            let ex = make_region_example(kind, p.gamma, p.eps, p.eps_prime)?;
            let q = avi(&ex.mdp, 1e-13)?;
            let mut max_gap: f64 = 0.0;
            let rows: Vec<Vec<Cell>> = ex
                .region_names
                .iter()
                .enumerate()
                .map(|(i, name)| {
                    let gap = (q.get(i, 0) - ex.closed_form_q[i]).abs();
                    max_gap = max_gap.max(gap);
                    row([
                        (*name).into(),
                        ex.pair_names[ex.homo.state(i)].into(),
                        q.get(i, 0).into(),
                        ex.closed_form_q[i].into(),
                        gap.into(),
                    ])
                })
                .collect();
            out.csv("", &["region", "pair", "solved_q", "closed_form_q", "gap"], &rows)?;
            out.json("_summary", &RegionSummary { case, gamma: p.gamma, max_gap })?;
        }
        HomoDomain::Gridworld => {
            require(p.size >= 2, "size", "must be at least 2")?;
            let (m, h) = gridworld(p.size, p.gamma, p.step_cost)?;
            let gap = check_q_homo(&m, &h, f64::INFINITY)?.worst_gap;
            let r = verify_value_loss(&m, &h, &PairDispersion::uniform(&h)?, gap)?;
            let rows = vec![row([m.n_states().into(), h.n_states().into(), gap.into(), r.observed.into(), r.bound.into(), r.holds.into()])];
            out.csv("", &["n_states", "n_abstract", "q_gap", "loss", "bound", "holds"], &rows)?;
        }
        HomoDomain::Random => {
            let blocks = p.blocks.unwrap_or(3);
            let nb = p.abstract_actions.unwrap_or(2);
            let na = p.actions.unwrap_or(3);
            let clones = p.clones.unwrap_or(2);
            require(blocks >= 1, "blocks", "must be at least 1")?;
            require(nb >= 1, "abstract_actions", "must be at least 1")?;
            require(na >= nb, "actions", "must be at least `abstract_actions`")?;
            require(clones >= 1, "clones", "must be at least 1")?;
            require(p.instances >= 1, "instances", "must be at least 1")?;
            let mut rng = seeded(cfg.seed);
            let mut rows = Vec::with_capacity(p.instances);
            let (mut violations, mut worst): (usize, f64) = (0, 0.0);
            for i in 0..p.instances {
                let (m, h) = q_uniform_instance(blocks, nb, na, clones, p.gamma, p.eps, &mut rng)?;
                let w: Vec<f64> = (0..m.n_states() * na).map(|_| 0.05 + rng.gen::<f64>()).collect();
                let b = PairDispersion::from_weights(&h, |x, a| w[x * na + a])?;
                let r = verify_value_loss(&m, &h, &b, p.eps)?;
                violations += usize::from(!r.holds);
                if r.bound > 0.0 {
                    worst = worst.max(r.observed / r.bound);
                }
                rows.push(row([i.into(), r.observed.into(), r.bound.into(), r.holds.into()]));
            }
            out.csv("", &["instance", "loss", "bound", "holds"], &rows)?;
            out.json("_summary", &LossSummary { instances: p.instances, violations, worst_loss_over_bound: worst })?;
        }
    }
    Ok(())
}

// ---- binarize ----

fn default_base() -> usize {
    2
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct BinarizeParams {
    #[serde(default)]
    mdp: Option<PathBuf>,
    #[serde(default)]
    random: Option<RandomMdp>,
    #[serde(default = "default_base")]
    base: usize,
}

#[derive(Serialize)]
struct BinarizeSummary {
    n_observations: usize,
    n_actions: usize,
    base: usize,
    depth: usize,
    n_sequential_states: usize,
    lambda: f64,
    max_gap: f64,
}

fn binarize(cfg: &Resolved, out: &mut Output) -> Result<()> {
    let p: BinarizeParams = typed(cfg.command, &cfg.params)?;
    require(p.base >= 2, "base", "must be at least 2")?;
    let mut rng = seeded(cfg.seed);
    let m = load_mdp(cfg, out, &p.mdp, &p.random, &mut rng)?;
    let codec = make_codec(m.n_actions(), p.base)?;
    let seq = sequentialize_markov(&m, &codec)?;
    let q = avi(&m, 1e-13)?;
    let qs = avi(&seq.mdp, 1e-13)?;
    let d = codec.depth();
    let mut rows = Vec::new();
    let mut max_gap: f64 = 0.0;
    for o in 0..m.n_states() {
        for a in 0..m.n_actions() {
            let code = codec.encode(a);
            let qb = qs.get(seq.state(o, &code[..d - 1]), code[d - 1]);
            let gap = (qb - q.get(o, a)).abs();
            max_gap = max_gap.max(gap);
            let digits: Vec<String> = code.iter().map(|x| x.to_string()).collect();
            rows.push(row([o.into(), a.into(), digits.join("").into(), q.get(o, a).into(), qb.into(), gap.into()]));
        }
    }
    out.csv("", &["observation", "action", "code", "q_original", "q_binarized", "gap"], &rows)?;
    out.json(
        "_summary",
        &BinarizeSummary {
            n_observations: m.n_states(),
            n_actions: m.n_actions(),
            base: p.base,
            depth: d,
            n_sequential_states: seq.mdp.n_states(),
            lambda: seq.discount.lambda(),
            max_gap,
        },
    )?;
    Ok(())
}

// ---- bounds ----

/// A decimal given as text or as a TOML number; numbers are read through
/// their shortest decimal rendering, so `0.1` means exactly one tenth.
#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum Decimal {
    Int(i64),
    Float(f64),
    Text(String),
}

impl Decimal {
    fn text(&self) -> String {
        match self {
            Decimal::Int(i) => i.to_string(),
            Decimal::Float(f) => format!("{f}"),
            Decimal::Text(s) => s.trim().to_string(),
        }
    }

    fn exact(&self, field: &str) -> Result<BigRational, ConfigError> {
        parse_decimal(&self.text()).map_err(|e| ConfigError(format!("field `{field}`: {e}")))
    }
}

fn default_sig() -> usize {
    3
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct BoundsParams {
    eps: Decimal,
    gamma: Decimal,
    actions: Vec<usize>,
    /// Print exact rationals instead of rounded scientific notation.
    #[serde(default)]
    exact: bool,
    #[serde(default = "default_sig")]
    digits: usize,
}

fn bounds(cfg: &Resolved, out: &mut Output) -> Result<()> {
    let p: BoundsParams = typed(cfg.command, &cfg.params)?;
    let eps = p.eps.exact("eps")?;
    let gamma = p.gamma.exact("gamma")?;
    require(eps > BigRational::from_integer(0.into()), "eps", "must be positive")?;
    let one = BigRational::from_integer(1.into());
    require(gamma > BigRational::from_integer(0.into()) && gamma < one, "gamma", "must lie in (0, 1)")?;
    require(!p.actions.is_empty(), "actions", "needs at least one action count")?;
    require(p.actions.iter().all(|&a| a >= 2), "actions", "every action count must be at least 2")?;
    require(p.digits >= 1, "digits", "must be at least 1")?;
    let fmt = |r: &BigRational| if p.exact { format_exact(r) } else { format_sci(r, p.digits) };
    let mut rows = Vec::with_capacity(p.actions.len());
    for &a in &p.actions {
        let b = BoundRow::compute(&eps, &gamma, a)?;
        rows.push(row([
            p.eps.text().into(),
            p.gamma.text().into(),
            a.into(),
            fmt(&b.esa).into(),
            fmt(&b.binarized).into(),
            fmt(&b.ratio()).into(),
        ]));
    }
    let path = out.csv("", &BOUND_COLUMNS, &rows)?;
    crate::stdout(&std::fs::read_to_string(&path)?);
    Ok(())
}

// ---- vaexp / vpdp ----

fn default_true() -> bool {
    true
}

#[derive(Debug, Deserialize, Default, Clone, Copy, PartialEq)]
#[serde(rename_all = "lowercase")]
enum VaMode {
    /// Correlate value loss with stationary surprisal over non-optimal uplifts.
    #[default]
    Correlation,
    /// Macro expectations of consecutive instances, none discarded.
    Macro,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct VaexpParams {
    states: usize,
    #[serde(default)]
    abstract_states: Option<usize>,
    #[serde(default)]
    aggregation: Option<usize>,
    actions: usize,
    branching: usize,
    noise: f64,
    gamma: f64,
    mdps: usize,
    #[serde(default = "default_true")]
    policy_uniform: bool,
    #[serde(default)]
    delta: Option<f64>,
    #[serde(default)]
    min_gap: Option<f64>,
    #[serde(default)]
    action_gap: Option<f64>,
    #[serde(default)]
    mode: VaMode,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct VpdpParams {
    states: usize,
    #[serde(default)]
    abstract_states: Option<usize>,
    #[serde(default)]
    aggregation: Option<usize>,
    actions: usize,
    branching: usize,
    gamma: f64,
    mdps: usize,
    eps1: f64,
    eps2: f64,
    #[serde(default)]
    c: Option<f64>,
    #[serde(default = "default_true")]
    policy_uniform: bool,
    #[serde(default)]
    delta: Option<f64>,
    #[serde(default)]
    action_gap: Option<f64>,
}

struct GenFields {
    states: usize,
    abstract_states: Option<usize>,
    aggregation: Option<usize>,
    actions: usize,
    branching: usize,
    noise: f64,
    gamma: f64,
    policy_uniform: bool,
    delta: Option<f64>,
    min_gap: Option<f64>,
    action_gap: Option<f64>,
}

fn gen_spec(f: GenFields, seed: u64) -> Result<GenSpec, ConfigError> {
    gamma_field(f.gamma)?;
    let n_abstract = match (f.abstract_states, f.aggregation) {
        (Some(s), None) => s,
        (None, Some(a)) => {
            require(a >= 1 && f.states % a == 0, "aggregation", "must divide `states`")?;
            f.states / a
        }
        _ => return config_err("field `abstract_states`: give exactly one of `abstract_states` or `aggregation`"),
    };
    let mut spec = GenSpec::new(f.states, n_abstract, f.actions, f.branching, f.noise, f.gamma);
    spec.seed = seed;
    spec.policy_uniform = f.policy_uniform;
    if let Some(d) = f.delta {
        spec.delta = d;
    }
    if let Some(g) = f.min_gap {
        spec.min_gap = g;
    }
    if let Some(g) = f.action_gap {
        spec.action_gap = g;
    }
    spec.validate().map_err(|e| ConfigError(format!("generator settings: {e}")))?;
    Ok(spec)
}

#[derive(Serialize)]
struct MacroSummary<'a> {
    spec: &'a GenSpec,
    n_mdps: usize,
    macro_max: f64,
    macro_mean: f64,
}

fn vaexp(cfg: &Resolved, out: &mut Output) -> Result<()> {
    let p: VaexpParams = typed(cfg.command, &cfg.params)?;
    require(p.mdps >= 2, "mdps", "must be at least 2")?;
    let spec = gen_spec(
        GenFields {
            states: p.states,
            abstract_states: p.abstract_states,
            aggregation: p.aggregation,
            actions: p.actions,
            branching: p.branching,
            noise: p.noise,
            gamma: p.gamma,
            policy_uniform: p.policy_uniform,
            delta: p.delta,
            min_gap: p.min_gap,
            action_gap: p.action_gap,
        },
        cfg.seed,
    )?;
    match p.mode {
        VaMode::Correlation => {
            let r = run_va_experiment(&spec, p.mdps)?;
            let rows: Vec<Vec<Cell>> = r
                .rows
                .iter()
                .map(|v| {
                    row([
                        v.mdp.into(),
                        v.state.into(),
                        v.v_star.into(),
                        v.v_uplift.into(),
                        v.diff.into(),
                        v.rho.into(),
                        v.neg_log2_rho.into(),
                    ])
                })
                .collect();
            out.csv("", &VA_COLUMNS, &rows)?;
            out.text("_summary.json", &(r.summary_json() + "\n"))?;
        }
        VaMode::Macro => {
            let m = macro_expectations(&spec, p.mdps)?;
            let rows: Vec<Vec<Cell>> = m.iter().enumerate().map(|(i, &x)| row([i.into(), x.into()])).collect();
            out.csv("", &["mdp", "macro_expectation"], &rows)?;
            let macro_max = m.iter().cloned().fold(0.0, f64::max);
            let macro_mean = m.iter().sum::<f64>() / m.len() as f64;
            out.json("_summary", &MacroSummary { spec: &spec, n_mdps: m.len(), macro_max, macro_mean })?;
        }
    }
    Ok(())
}

fn vpdp(cfg: &Resolved, out: &mut Output) -> Result<()> {
    let p: VpdpParams = typed(cfg.command, &cfg.params)?;
    require(p.mdps >= 1, "mdps", "must be at least 1")?;
    require(p.eps1 >= 0.0, "eps1", "must be non-negative")?;
    require(p.eps2 >= 0.0, "eps2", "must be non-negative")?;
    if let Some(c) = p.c {
        require(c > 0.0, "c", "must be positive")?;
    }
    let base = gen_spec(
        GenFields {
            states: p.states,
            abstract_states: p.abstract_states,
            aggregation: p.aggregation,
            actions: p.actions,
            branching: p.branching,
            noise: 0.0,
            gamma: p.gamma,
            policy_uniform: p.policy_uniform,
            delta: p.delta,
            min_gap: None,
            action_gap: p.action_gap,
        },
        cfg.seed,
    )?;
    let spec = vpdp_spec(&base, p.eps1, p.eps2);
    let r = vpdp_search(&spec, p.eps1, p.eps2, p.c, p.mdps)?;
    let rows: Vec<Vec<Cell>> =
        r.losses.iter().enumerate().map(|(i, &l)| row([i.into(), l.into(), r.threshold.into(), (l > r.threshold).into()])).collect();
    out.csv("", &["instance", "loss", "threshold", "counterexample"], &rows)?;
    out.json("_summary", &r)?;
    Ok(())
}

// ---- order ----

#[derive(Debug, Deserialize, Default, Clone, Copy)]
#[serde(rename_all = "lowercase")]
enum OrderName {
    #[default]
    Eps,
    Cpd,
}

#[derive(Debug, Deserialize, Clone, Copy)]
#[serde(rename_all = "kebab-case")]
enum OrderDomain {
    ThreeBlock,
}

fn default_order_eps() -> f64 {
    1e-6
}
fn default_budget() -> usize {
    15
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct OrderParams {
    #[serde(default)]
    mdp: Option<PathBuf>,
    #[serde(default)]
    domain: Option<OrderDomain>,
    #[serde(default)]
    maps: Vec<Vec<usize>>,
    #[serde(default = "default_order_eps")]
    eps: f64,
    #[serde(default)]
    order: OrderName,
    #[serde(default = "default_budget")]
    budget: usize,
}

#[derive(Serialize)]
struct OrderSummary {
    winner: usize,
    winner_states: usize,
    comparisons: usize,
    stable: bool,
    labels: Vec<usize>,
    sizes: Vec<usize>,
    transitivity_violations: Vec<(usize, usize, usize)>,
}

/// Nine states in three blocks of equal optimal action values, and six
/// candidate maps: the block map, coarser and finer maps, and the identity.
fn three_block() -> Result<(FiniteMdp, Vec<Vec<usize>>)> {
    let (n, na, gamma) = (9, 2, 0.8);
    let block_q = [[4.0, 2.5], [1.0, 3.0], [2.0, 2.2]];
    let mut q = Vec::new();
    for x in 0..n {
        q.extend_from_slice(&block_q[x % 3]);
    }
    let mut t = Vec::new();
    for x in 0..n {
        for a in 0..na {
            let w: Vec<f64> = (0..n).map(|y| 1.0 + ((x + 2 * y + 3 * a) % 4) as f64).collect();
            let total: f64 = w.iter().sum();
            t.extend(w.into_iter().map(|v| v / total));
        }
    }
    let maps = vec![
        vec![0, 1, 2, 3, 4, 5, 0, 1, 2],
        vec![0, 0, 1, 0, 0, 1, 0, 0, 1],
        vec![0, 1, 2, 0, 1, 2, 3, 1, 2],
        (0..n).map(|x| x % 3).collect(),
        vec![0, 1, 1, 0, 1, 1, 0, 1, 1],
        (0..n).collect(),
    ];
    Ok((FiniteMdp::from_optimal_q(n, na, t, &q, gamma)?, maps))
}

fn order(cfg: &Resolved, out: &mut Output) -> Result<()> {
    let p: OrderParams = typed(cfg.command, &cfg.params)?;
    require(p.eps >= 0.0, "eps", "must be non-negative")?;
    require(p.budget >= 1, "budget", "must be at least 1")?;
    let (m, maps) = match (&p.mdp, p.domain) {
        (Some(path), None) => {
            let path = resolve_path(&cfg.base_dir, path);
            let m = FiniteMdp::parse(&out.read_input(&path)?).with_context(|| format!("cannot parse MDP file {}", path.display()))?;
            (m, p.maps.clone())
        }
        (None, Some(OrderDomain::ThreeBlock)) => {
            let (m, builtin) = three_block()?;
            (m, if p.maps.is_empty() { builtin } else { p.maps.clone() })
        }
        _ => return config_err("field `mdp`: give exactly one of `mdp` (a file) or `domain`").map_err(Into::into),
    };
    require(!maps.is_empty(), "maps", "needs at least one map")?;
    let tabs = maps.iter().enumerate().map(|(i, l)| labels_field(l, m.n_states(), &format!("maps[{i}]"))).collect::<Result<Vec<_>, _>>()?;
    let kind = match p.order {
        OrderName::Eps => Order::Eps,
        OrderName::Cpd => Order::Cpd,
    };
    let mut class = MapClass::new(m, tabs, p.eps)?;
    let r = aleo(&class, kind, p.budget)?;
    let rows: Vec<Vec<Cell>> = r
        .trace
        .iter()
        .map(|t| row([t.iteration.into(), t.candidate.into(), t.competitor.into(), t.decision.into(), t.case_fired.name().into()]))
        .collect();
    out.csv("_trace", &TRACE_COLUMNS, &rows)?;
    let sizes = (0..class.len()).map(|i| class.size(i)).collect();
    out.json(
        "_summary",
        &OrderSummary {
            winner: r.winner,
            winner_states: class.size(r.winner),
            comparisons: r.comparisons,
            stable: r.stable,
            labels: class.labels(),
            sizes,
            transitivity_violations: r.transitivity_violations.clone(),
        },
    )?;
    Ok(())
}
