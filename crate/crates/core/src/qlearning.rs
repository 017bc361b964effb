//! Tabular Q-learning on the state process induced by an abstraction, and the two example domains.

use std::sync::Arc;

use rayon::prelude::*;

use crate::abstraction::{Abstraction, TabularAbstraction};
use crate::env::{History, HistoryEnv, MdpEnv, Percept};
use crate::error::{Error, Result};
use crate::mdp::FiniteMdp;
use crate::planners::{argmax, QTable};
use crate::rng::{sample_index, split};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Schedule {
    /// `α = 1/n`.
    Harmonic,
    /// `α = 1/n^ω`, ω in (0.5, 1].
    Polynomial(f64),
}

impl Default for Schedule {
    fn default() -> Self {
        Schedule::Polynomial(0.75)
    }
}

impl Schedule {
    /// Step size at the `n`-th visit (n ≥ 1) of a pair.
    pub fn alpha(&self, n: u64) -> f64 {
        match *self {
            Schedule::Harmonic => 1.0 / n as f64,
            Schedule::Polynomial(w) => (n as f64).powf(-w),
        }
    }

    /// Whether Σα diverges and Σα² converges along visits.
    pub fn satisfies_robbins_monro(&self) -> bool {
        match *self {
            Schedule::Harmonic => true,
            Schedule::Polynomial(w) => w > 0.5 && w <= 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Behavior {
    Uniform,
    /// Greedy on the current estimate with probability `1 - eps`.
    EpsGreedy(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub enum QInit {
    Scalar(f64),
    /// Flat `[s][a]`.
    Table(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub gamma: f64,
    pub steps: usize,
    pub n_runs: usize,
    pub seed: u64,
    pub q_init: QInit,
    pub behavior: Behavior,
    pub schedule: Schedule,
    /// Trace every this many steps; the final step is always recorded.
    pub trace_every: usize,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 || self.n_runs == 0 || self.trace_every == 0 {
            return Err(Error::InvalidArgument("steps, n_runs and trace_every must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::BadGamma(self.gamma));
        }
        Ok(())
    }

    fn initial_table(&self, n_states: usize, n_actions: usize) -> Result<QTable> {
        match &self.q_init {
            QInit::Scalar(v) => Ok(QTable::new(n_states, n_actions, *v)),
            QInit::Table(t) => QTable::from_values(n_states, n_actions, t.clone()),
        }
    }
}

#[derive(Debug, Clone)]
pub struct QRun {
    pub q: QTable,
    /// `(step, flat q values)` snapshots.
    pub trace: Vec<(usize, Vec<f64>)>,
}

/// One Q-learning run; `run` selects the random stream.
pub fn q_learning<E, A>(env: &E, psi: &A, config: &RunConfig, run: u64) -> Result<QRun>
where
    E: HistoryEnv + ?Sized,
    A: Abstraction + ?Sized,
{
    config.validate()?;
    let na = env.n_actions();
    let mut q = config.initial_table(psi.n_states(), na)?;
    let mut rng = split(config.seed, run);
    let mut h = env.initial_history();
    let mut s = psi.state(&h);
    let mut trace = Vec::with_capacity(config.steps / config.trace_every + 1);
    let uniform = vec![1.0 / na as f64; na];
    for n in 1..=config.steps {
        let a = match config.behavior {
            Behavior::Uniform => sample_index(&uniform, &mut rng),
            Behavior::EpsGreedy(eps) => {
                if rand::Rng::gen::<f64>(&mut rng) < eps {
                    sample_index(&uniform, &mut rng)
                } else {
                    argmax(q.row(s))
                }
            }
        };
        let e = env.sample(&h, a, &mut rng);
        let next = psi.state_after(&h, a, e);
        h.push(a, e);
        let k = q.visit(s, a);
        let old = q.get(s, a);
        let target = e.reward + config.gamma * q.max(next);
        q.set(s, a, old + config.schedule.alpha(k) * (target - old));
        s = next;
        if n % config.trace_every == 0 || n == config.steps {
            trace.push((n, q.values().to_vec()));
        }
    }
    Ok(QRun { q, trace })
}

/// An environment, its abstraction and the action values the abstraction should learn.
#[derive(Clone)]
pub struct Domain {
    pub name: &'static str,
    pub env: Arc<dyn HistoryEnv>,
    pub psi: Arc<dyn Abstraction>,
    pub analytic: QTable,
}

/// Observation indices of the four-observation chain, in the order 00, 01, 10, 11.
pub const EX1_OBSERVATIONS: [&str; 4] = ["00", "01", "10", "11"];

/// Four-observation reward process whose last-bit-free pairing (00 with 10,
/// 01 with 11) has equal action values but different dynamics.
pub fn make_example1(gamma: f64) -> Result<Domain> {
    let g = gamma;
    let t = [[0.0, 0.5, 0.5, 0.0], [0.5, 0.0, 0.0, 0.5], [0.0, 1.0, 0.0, 0.0], [1.0, 0.0, 0.0, 0.0]];
    // Reward depends on the current observation.
    let r = [(g / 2.0) / (1.0 + g), (1.0 + g / 2.0) / (1.0 + g), 0.0, 1.0];
    let mdp = FiniteMdp::new(t.iter().map(|row| vec![row.to_vec()]).collect(), r.iter().map(|&x| vec![x]).collect(), gamma)?;
    let analytic = QTable::from_values(2, 1, vec![g / (1.0 - g * g), 1.0 / (1.0 - g * g)])?;
    Ok(Domain { name: "ex1", env: Arc::new(MdpEnv::new(mdp, 0)), psi: Arc::new(TabularAbstraction::new(vec![0, 1, 0, 1], 2)?), analytic })
}

pub const ACCEPT: usize = 0;
pub const REJECT: usize = 1;
/// Observation of the initial percept; maps to state 0 like an acceptance.
pub const START: usize = 2;
pub const KEY_X: usize = 0;
pub const KEY_Y: usize = 1;

/// Key-input environment: the correct key of the current state is accepted
/// with probability `max(p_min, fraction of accepted inputs so far)`.
#[derive(Debug, Clone)]
pub struct KeyEnv {
    pub gamma: f64,
    pub p_min: f64,
    pub keys: [usize; 3],
}

impl KeyEnv {
    pub fn new(gamma: f64, p_min: f64) -> Result<Self> {
        if !(p_min > 0.0 && p_min <= 1.0) {
            return Err(Error::InvalidArgument(format!("p_min must lie in (0, 1], got {p_min}")));
        }
        if !(0.0..1.0).contains(&gamma) {
            return Err(Error::BadGamma(gamma));
        }
        Ok(KeyEnv { gamma, p_min, keys: [KEY_X, KEY_X, KEY_Y] })
    }

    pub fn acceptance_probability(&self, h: &History) -> f64 {
        let frac = if h.n_steps() == 0 { 0.0 } else { h.observation_count(ACCEPT) as f64 / h.n_steps() as f64 };
        frac.max(self.p_min)
    }

    pub fn reward(&self, s: usize, a: usize, p: f64) -> f64 {
        let g = self.gamma;
        if a != self.keys[s] {
            return -3.0;
        }
        match s {
            0 => 3.0 - g - 2.0 * g * p,
            1 => 1.0 - 3.0 * g * p,
            _ => -3.0 * g * p,
        }
    }
}

/// State of the key environment: 0 after an acceptance or at the start, 1 after
/// one rejection, 2 after two or more consecutive rejections.
#[derive(Debug, Clone, Copy, Default)]
pub struct KeyAbstraction;

impl KeyAbstraction {
    fn classify(prev: Option<usize>, last: usize) -> usize {
        if last != REJECT {
            0
        } else if prev != Some(REJECT) {
            1
        } else {
            2
        }
    }
}

impl Abstraction for KeyAbstraction {
    fn n_states(&self) -> usize {
        3
    }
    fn state(&self, h: &History) -> usize {
        let n = h.len();
        let prev = (n >= 2).then(|| h.percept(n - 2).observation);
        Self::classify(prev, h.last().observation)
    }
    fn state_after(&self, h: &History, _a: usize, e: Percept) -> usize {
        Self::classify(Some(h.last().observation), e.observation)
    }
}

impl HistoryEnv for KeyEnv {
    fn n_actions(&self) -> usize {
        2
    }
    fn n_observations(&self) -> usize {
        3
    }
    fn gamma(&self) -> f64 {
        self.gamma
    }
    fn reward_bounds(&self) -> (f64, f64) {
        (-3.0, 3.0)
    }
    fn initial_percept(&self) -> Percept {
        Percept::new(START, 0.0)
    }
    fn percept_distribution(&self, h: &History, a: usize) -> Vec<(Percept, f64)> {
        let s = KeyAbstraction.state(h);
        let p = self.acceptance_probability(h);
        let r = self.reward(s, a, p);
        if a != self.keys[s] {
            return vec![(Percept::new(REJECT, r), 1.0)];
        }
        let mut out = vec![(Percept::new(ACCEPT, r), p)];
        if p < 1.0 {
            out.push((Percept::new(REJECT, r), 1.0 - p));
        }
        out
    }
}

/// Key domain with its state map and action values derived from the
/// transition and reward displays: row 0 is `(3, γ-3)`, row 1 `(1, -3)`, row 2 `(-3, 0)`.
pub fn make_example2(gamma: f64, p_min: f64) -> Result<Domain> {
    let env = KeyEnv::new(gamma, p_min)?;
    let analytic = QTable::from_rows(&[vec![3.0, gamma - 3.0], vec![1.0, -3.0], vec![-3.0, 0.0]])?;
    Ok(Domain { name: "ex2", env: Arc::new(env), psi: Arc::new(KeyAbstraction), analytic })
}

/// Per-step mean and standard deviation of one q entry across runs.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentRecord {
    pub step: usize,
    pub n_runs: usize,
    pub state: usize,
    pub action: usize,
    pub mean: f64,
    pub std: f64,
}

pub const EXPERIMENT_COLUMNS: [&str; 6] = ["step", "run_stat", "state", "action", "mean", "std"];

/// Runs `n_runs` independent learners (in parallel, reduced in run order)
/// and summarises each traced entry.
pub fn convergence_experiment(domain: &Domain, config: &RunConfig) -> Result<Vec<ExperimentRecord>> {
    config.validate()?;
    let runs: Vec<QRun> = (0..config.n_runs as u64)
        .into_par_iter()
        .map(|r| q_learning(domain.env.as_ref(), domain.psi.as_ref(), config, r))
        .collect::<Result<Vec<_>>>()?;
    let na = domain.env.n_actions();
    let n_points = runs[0].trace.len();
    let mut out = Vec::with_capacity(n_points * runs[0].q.values().len());
    for i in 0..n_points {
        let step = runs[0].trace[i].0;
        for (j, _) in runs[0].trace[i].1.iter().enumerate() {
            let xs: Vec<f64> = runs.iter().map(|r| r.trace[i].1[j]).collect();
            let (mean, std) = mean_std(&xs);
            out.push(ExperimentRecord { step, n_runs: config.n_runs, state: j / na, action: j % na, mean, std });
        }
    }
    Ok(out)
}

/// Mean and sample standard deviation (zero for a single value).
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Records at the last traced step.
pub fn terminal_records(records: &[ExperimentRecord]) -> Vec<&ExperimentRecord> {
    let last = records.iter().map(|r| r.step).max().unwrap_or(0);
    records.iter().filter(|r| r.step == last).collect()
}
