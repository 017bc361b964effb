//! Dynamic programming on finite MDPs.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::mdp::FiniteMdp;

pub const DEFAULT_CAP: usize = 1_000_000;
pub const PI_CAP: usize = 10_000;
pub const STATIONARY_CAP: usize = 200_000;

/// Dense state-action values with visit counts.
#[derive(Debug, Clone, PartialEq)]
pub struct QTable {
    n_states: usize,
    n_actions: usize,
    values: Vec<f64>,
    counts: Vec<u64>,
}

impl QTable {
    pub fn new(n_states: usize, n_actions: usize, init: f64) -> Self {
        QTable { n_states, n_actions, values: vec![init; n_states * n_actions], counts: vec![0; n_states * n_actions] }
    }

    pub fn from_values(n_states: usize, n_actions: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != n_states * n_actions {
            return Err(Error::Shape("q table length".into()));
        }
        Ok(QTable { n_states, n_actions, values, counts: vec![0; n_states * n_actions] })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n_actions = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != n_actions) {
            return Err(Error::Shape("ragged q rows".into()));
        }
        Self::from_values(rows.len(), n_actions, rows.concat())
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    #[inline]
    pub fn get(&self, s: usize, a: usize) -> f64 {
        self.values[s * self.n_actions + a]
    }

    #[inline]
    pub fn set(&mut self, s: usize, a: usize, v: f64) {
        self.values[s * self.n_actions + a] = v;
    }

    #[inline]
    pub fn row(&self, s: usize) -> &[f64] {
        &self.values[s * self.n_actions..(s + 1) * self.n_actions]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn count(&self, s: usize, a: usize) -> u64 {
        self.counts[s * self.n_actions + a]
    }

    /// Increments the visit count and returns the new count.
    pub fn visit(&mut self, s: usize, a: usize) -> u64 {
        let c = &mut self.counts[s * self.n_actions + a];
        *c += 1;
        *c
    }

    pub fn max(&self, s: usize) -> f64 {
        self.row(s).iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn state_values(&self) -> Vec<f64> {
        (0..self.n_states).map(|s| self.max(s)).collect()
    }

    /// Greedy action per state; ties go to the smallest index.
    pub fn greedy(&self) -> Vec<usize> {
        (0..self.n_states).map(|s| argmax(self.row(s))).collect()
    }

    /// Largest absolute entrywise difference.
    pub fn sup_distance(&self, other: &QTable) -> f64 {
        self.values.iter().zip(&other.values).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }
}

/// First index of the maximum.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

fn backup(mdp: &FiniteMdp, v: &[f64], s: usize, a: usize) -> f64 {
    let ev: f64 = mdp.p(s, a).iter().zip(v).map(|(p, x)| p * x).sum();
    mdp.r(s, a) + mdp.gamma() * ev
}

fn check_theta(theta: f64) -> Result<()> {
    if theta > 0.0 && theta.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("theta must be positive, got {theta}")))
    }
}

/// Action-value iteration from zero until successive iterates differ by at most `theta`.
pub fn avi(mdp: &FiniteMdp, theta: f64) -> Result<QTable> {
    avi_with_cap(mdp, theta, DEFAULT_CAP)
}

pub fn avi_with_cap(mdp: &FiniteMdp, theta: f64, cap: usize) -> Result<QTable> {
    check_theta(theta)?;
    let (ns, na) = (mdp.n_states(), mdp.n_actions());
    let mut q = QTable::new(ns, na, 0.0);
    for _ in 0..cap {
        let v = q.state_values();
        let mut delta: f64 = 0.0;
        for s in 0..ns {
            for a in 0..na {
                let new = backup(mdp, &v, s, a);
                delta = delta.max((new - q.get(s, a)).abs());
                q.set(s, a, new);
            }
        }
        if delta <= theta {
            return Ok(q);
        }
    }
    Err(Error::NoConvergence(cap))
}

/// State-value iteration.
pub fn vi(mdp: &FiniteMdp, theta: f64) -> Result<Vec<f64>> {
    vi_trace(mdp, theta, DEFAULT_CAP).map(|mut t| t.pop().unwrap_or_default())
}

/// All iterates of state-value iteration, last one being the result.
pub fn vi_trace(mdp: &FiniteMdp, theta: f64, cap: usize) -> Result<Vec<Vec<f64>>> {
    check_theta(theta)?;
    let (ns, na) = (mdp.n_states(), mdp.n_actions());
    let mut trace = vec![vec![0.0; ns]];
    for _ in 0..cap {
        let v = trace.last().unwrap();
        let next: Vec<f64> = (0..ns).map(|s| (0..na).map(|a| backup(mdp, v, s, a)).fold(f64::NEG_INFINITY, f64::max)).collect();
        let delta = next.iter().zip(v).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        trace.push(next);
        if delta <= theta {
            return Ok(trace);
        }
    }
    Err(Error::NoConvergence(cap))
}

fn check_policy(mdp: &FiniteMdp, policy: &[Vec<f64>]) -> Result<()> {
    if policy.len() != mdp.n_states() || policy.iter().any(|p| p.len() != mdp.n_actions()) {
        return Err(Error::Shape("policy table does not match the MDP".into()));
    }
    Ok(())
}

/// Iterative policy evaluation.
pub fn pe(mdp: &FiniteMdp, policy: &[Vec<f64>], theta: f64) -> Result<Vec<f64>> {
    check_theta(theta)?;
    check_policy(mdp, policy)?;
    let ns = mdp.n_states();
    let mut v = vec![0.0; ns];
    for _ in 0..DEFAULT_CAP {
        let next: Vec<f64> =
            (0..ns).map(|s| policy[s].iter().enumerate().filter(|p| *p.1 > 0.0).map(|(a, &pa)| pa * backup(mdp, &v, s, a)).sum()).collect();
        let delta = next.iter().zip(&v).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        v = next;
        if delta <= theta {
            return Ok(v);
        }
    }
    Err(Error::NoConvergence(DEFAULT_CAP))
}

/// Exact policy evaluation by an LU solve of `(I - γ P_π) v = r_π`.
pub fn evaluate_exact(mdp: &FiniteMdp, policy: &[Vec<f64>]) -> Result<Vec<f64>> {
    check_policy(mdp, policy)?;
    let ns = mdp.n_states();
    let chain = mdp.policy_chain(policy);
    let g = mdp.gamma();
    let m = DMatrix::from_fn(ns, ns, |i, j| if i == j { 1.0 } else { 0.0 } - g * chain[i][j]);
    let r = DVector::from_iterator(ns, (0..ns).map(|s| policy[s].iter().enumerate().map(|(a, pa)| pa * mdp.r(s, a)).sum::<f64>()));
    let sol = m.lu().solve(&r).ok_or(Error::SingularEvaluation)?;
    if sol.iter().any(|x| !x.is_finite()) {
        return Err(Error::SingularEvaluation);
    }
    Ok(sol.iter().copied().collect())
}

/// Action values of a state-value function.
pub fn q_from_v(mdp: &FiniteMdp, v: &[f64]) -> QTable {
    let (ns, na) = (mdp.n_states(), mdp.n_actions());
    let mut q = QTable::new(ns, na, 0.0);
    for s in 0..ns {
        for a in 0..na {
            q.set(s, a, backup(mdp, v, s, a));
        }
    }
    q
}

/// Policy iteration with exact evaluation. Each improved policy is uniform
/// over the θ-greedy actions; stops when the supports repeat.
pub fn pi(mdp: &FiniteMdp, theta: f64) -> Result<(Vec<Vec<f64>>, QTable)> {
    check_theta(theta)?;
    let (ns, na) = (mdp.n_states(), mdp.n_actions());
    let mut support: Vec<Vec<bool>> = vec![vec![true; na]; ns];
    for _ in 0..PI_CAP {
        let policy = support_policy(&support);
        let q = q_from_v(mdp, &evaluate_exact(mdp, &policy)?);
        let next: Vec<Vec<bool>> = (0..ns)
            .map(|s| {
                let v = q.max(s);
                q.row(s).iter().map(|&x| v - x <= theta).collect()
            })
            .collect();
        if next == support {
            return Ok((policy, q));
        }
        support = next;
    }
    Err(Error::NoConvergence(PI_CAP))
}

fn support_policy(support: &[Vec<bool>]) -> Vec<Vec<f64>> {
    support
        .iter()
        .map(|row| {
            let k = row.iter().filter(|&&b| b).count() as f64;
            row.iter().map(|&b| if b { 1.0 / k } else { 0.0 }).collect()
        })
        .collect()
}

/// Sup-norm residual of one action-value backup.
pub fn bellman_residual(mdp: &FiniteMdp, q: &QTable) -> f64 {
    let v = q.state_values();
    let mut worst: f64 = 0.0;
    for s in 0..mdp.n_states() {
        for a in 0..mdp.n_actions() {
            worst = worst.max((q.get(s, a) - backup(mdp, &v, s, a)).abs());
        }
    }
    worst
}

/// Stationary distribution by power iteration of the lazy chain `(I + P) / 2`,
/// which has the same fixed points and is aperiodic.
pub fn stationary_distribution(p: &[Vec<f64>], tol: f64) -> Result<Vec<f64>> {
    stationary_distribution_capped(p, tol, STATIONARY_CAP)
}

pub fn stationary_distribution_capped(p: &[Vec<f64>], tol: f64, cap: usize) -> Result<Vec<f64>> {
    check_theta(tol)?;
    let n = p.len();
    if n == 0 || p.iter().any(|r| r.len() != n) {
        return Err(Error::Shape("transition matrix must be square and non-empty".into()));
    }
    let mut rho = vec![1.0 / n as f64; n];
    let mut next = vec![0.0; n];
    for _ in 0..cap {
        next.iter_mut().zip(&rho).for_each(|(x, r)| *x = 0.5 * r);
        for (i, row) in p.iter().enumerate() {
            let w = 0.5 * rho[i];
            if w == 0.0 {
                continue;
            }
            for (j, &pij) in row.iter().enumerate() {
                next[j] += w * pij;
            }
        }
        let total: f64 = next.iter().sum();
        next.iter_mut().for_each(|x| *x /= total);
        let delta: f64 = next.iter().zip(&rho).map(|(a, b)| (a - b).abs()).sum();
        std::mem::swap(&mut rho, &mut next);
        if delta <= tol {
            return Ok(rho);
        }
    }
    Err(Error::NoConvergence(cap))
}
