//! Percepts, histories and history-based environments.

use std::sync::Arc;

use rand::Rng;

use crate::error::{Error, Result};
use crate::mdp::FiniteMdp;
use crate::policy::Policy;
use crate::rng::{sample_index, seeded};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Percept {
    pub observation: usize,
    pub reward: f64,
}

impl Percept {
    pub fn new(observation: usize, reward: f64) -> Self {
        Percept { observation, reward }
    }
}

/// Initial percept followed by `(action, percept)` steps.
///
/// Append-only; per-observation counts are kept incrementally so that
/// frequency statistics cost O(1).
#[derive(Debug, Clone, PartialEq)]
pub struct History {
    initial: Percept,
    steps: Vec<(usize, Percept)>,
    obs_counts: Vec<u64>,
}

impl History {
    pub fn new(initial: Percept) -> Self {
        let mut obs_counts = vec![0; initial.observation + 1];
        obs_counts[initial.observation] = 1;
        History { initial, steps: Vec::new(), obs_counts }
    }

    /// Number of percepts, including the initial one.
    pub fn len(&self) -> usize {
        self.steps.len() + 1
    }

    /// Never true; histories always hold the initial percept.
    pub fn is_empty(&self) -> bool {
        false
    }

    /// Number of interaction cycles (actions taken).
    pub fn n_steps(&self) -> usize {
        self.steps.len()
    }

    pub fn initial(&self) -> Percept {
        self.initial
    }

    pub fn steps(&self) -> &[(usize, Percept)] {
        &self.steps
    }

    pub fn last(&self) -> Percept {
        self.steps.last().map_or(self.initial, |s| s.1)
    }

    /// Percept `i` counting from the initial percept at 0.
    pub fn percept(&self, i: usize) -> Percept {
        if i == 0 {
            self.initial
        } else {
            self.steps[i - 1].1
        }
    }

    pub fn observation_count(&self, o: usize) -> u64 {
        self.obs_counts.get(o).copied().unwrap_or(0)
    }

    pub fn push(&mut self, action: usize, percept: Percept) {
        if percept.observation >= self.obs_counts.len() {
            self.obs_counts.resize(percept.observation + 1, 0);
        }
        self.obs_counts[percept.observation] += 1;
        self.steps.push((action, percept));
    }

    pub fn extended(&self, action: usize, percept: Percept) -> History {
        let mut h = self.clone();
        h.push(action, percept);
        h
    }

    /// Prefix holding the first `n_steps` cycles.
    pub fn prefix(&self, n_steps: usize) -> History {
        let mut h = History::new(self.initial);
        for &(a, e) in &self.steps[..n_steps] {
            h.push(a, e);
        }
        h
    }

    /// Rewards received after each action, in order.
    pub fn rewards(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.1.reward).collect()
    }

    pub fn actions(&self) -> Vec<usize> {
        self.steps.iter().map(|s| s.0).collect()
    }
}

/// A stochastic process over percepts conditioned on the full history.
pub trait HistoryEnv: Send + Sync {
    fn n_actions(&self) -> usize;
    fn n_observations(&self) -> usize;
    fn gamma(&self) -> f64;
    fn reward_bounds(&self) -> (f64, f64);
    fn initial_percept(&self) -> Percept;

    /// Distribution over next percepts. Entries with zero mass may be omitted.
    fn percept_distribution(&self, h: &History, action: usize) -> Vec<(Percept, f64)>;

    fn sample(&self, h: &History, action: usize, rng: &mut dyn rand::RngCore) -> Percept {
        let dist = self.percept_distribution(h, action);
        let probs: Vec<f64> = dist.iter().map(|d| d.1).collect();
        dist[sample_index(&probs, rng)].0
    }

    fn initial_history(&self) -> History {
        History::new(self.initial_percept())
    }
}

impl<E: HistoryEnv + ?Sized> HistoryEnv for Arc<E> {
    fn n_actions(&self) -> usize {
        (**self).n_actions()
    }
    fn n_observations(&self) -> usize {
        (**self).n_observations()
    }
    fn gamma(&self) -> f64 {
        (**self).gamma()
    }
    fn reward_bounds(&self) -> (f64, f64) {
        (**self).reward_bounds()
    }
    fn initial_percept(&self) -> Percept {
        (**self).initial_percept()
    }
    fn percept_distribution(&self, h: &History, action: usize) -> Vec<(Percept, f64)> {
        (**self).percept_distribution(h, action)
    }
    fn sample(&self, h: &History, action: usize, rng: &mut dyn rand::RngCore) -> Percept {
        (**self).sample(h, action, rng)
    }
}

/// A finite MDP seen as a history-based environment: the observation is the
/// state and the reward of `(s, a)` arrives with the next percept.
#[derive(Debug, Clone)]
pub struct MdpEnv {
    pub mdp: FiniteMdp,
    pub start: usize,
}

impl MdpEnv {
    pub fn new(mdp: FiniteMdp, start: usize) -> Self {
        MdpEnv { mdp, start }
    }
}

impl HistoryEnv for MdpEnv {
    fn n_actions(&self) -> usize {
        self.mdp.n_actions()
    }
    fn n_observations(&self) -> usize {
        self.mdp.n_states()
    }
    fn gamma(&self) -> f64 {
        self.mdp.gamma()
    }
    fn reward_bounds(&self) -> (f64, f64) {
        self.mdp.reward_bounds()
    }
    fn initial_percept(&self) -> Percept {
        Percept::new(self.start, 0.0)
    }
    fn percept_distribution(&self, h: &History, action: usize) -> Vec<(Percept, f64)> {
        let s = h.last().observation;
        let r = self.mdp.r(s, action);
        self.mdp.p(s, action).iter().enumerate().filter(|(_, &p)| p > 0.0).map(|(t, &p)| (Percept::new(t, r), p)).collect()
    }
    fn sample(&self, h: &History, action: usize, rng: &mut dyn rand::RngCore) -> Percept {
        let s = h.last().observation;
        let t = sample_index(self.mdp.p(s, action), rng);
        Percept::new(t, self.mdp.r(s, action))
    }
}

/// Runs `steps` interaction cycles from the initial percept.
pub fn simulate<E: HistoryEnv + ?Sized>(env: &E, policy: &Policy, steps: usize, seed: u64) -> Result<History> {
    let mut rng = seeded(seed);
    simulate_with(env, policy, steps, &mut rng)
}

pub fn simulate_with<E: HistoryEnv + ?Sized, R: Rng>(env: &E, policy: &Policy, steps: usize, rng: &mut R) -> Result<History> {
    let mut h = env.initial_history();
    for _ in 0..steps {
        let dist = policy.at(&h)?;
        if dist.len() != env.n_actions() {
            return Err(Error::Shape(format!("policy gives {} actions, env has {}", dist.len(), env.n_actions())));
        }
        let a = sample_index(&dist, rng);
        let e = env.sample(&h, a, rng);
        h.push(a, e);
    }
    Ok(h)
}
