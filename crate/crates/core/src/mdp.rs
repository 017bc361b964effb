//! Finite MDPs: validated construction, the text file format and small generators.

use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};

/// Row sums may deviate from one by at most this much.
pub const ROW_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct FiniteMdp {
    n_states: usize,
    n_actions: usize,
    /// Flat `[s][a][s']`.
    transition: Vec<f64>,
    /// Flat `[s][a]`.
    reward: Vec<f64>,
    gamma: f64,
    reward_bounds: (f64, f64),
}

impl FiniteMdp {
    /// Validates and builds an MDP. Rows are checked, never renormalized.
    /// Reward bounds default to the observed reward range widened to include `[0, 1]`.
    pub fn new(transition: Vec<Vec<Vec<f64>>>, reward: Vec<Vec<f64>>, gamma: f64) -> Result<Self> {
        let n_states = transition.len();
        if n_states == 0 {
            return Err(Error::Shape("no states".into()));
        }
        let n_actions = transition[0].len();
        if n_actions == 0 {
            return Err(Error::Shape("no actions".into()));
        }
        if reward.len() != n_states {
            return Err(Error::Shape(format!("reward has {} rows, expected {n_states}", reward.len())));
        }
        let mut flat_t = Vec::with_capacity(n_states * n_actions * n_states);
        let mut flat_r = Vec::with_capacity(n_states * n_actions);
        for (s, rows) in transition.iter().enumerate() {
            if rows.len() != n_actions {
                return Err(Error::Shape(format!("state {s} has {} actions, expected {n_actions}", rows.len())));
            }
            if reward[s].len() != n_actions {
                return Err(Error::Shape(format!("reward row {s} has wrong length")));
            }
            for row in rows {
                if row.len() != n_states {
                    return Err(Error::Shape(format!("transition row of state {s} has wrong length")));
                }
                flat_t.extend_from_slice(row);
            }
            flat_r.extend_from_slice(&reward[s]);
        }
        Self::from_flat(n_states, n_actions, flat_t, flat_r, gamma)
    }

    pub fn from_flat(n_states: usize, n_actions: usize, mut transition: Vec<f64>, reward: Vec<f64>, gamma: f64) -> Result<Self> {
        if transition.len() != n_states * n_actions * n_states || reward.len() != n_states * n_actions {
            return Err(Error::Shape("flat table lengths do not match dimensions".into()));
        }
        if !(0.0..1.0).contains(&gamma) {
            return Err(Error::BadGamma(gamma));
        }
        for s in 0..n_states {
            for a in 0..n_actions {
                let row = &transition[(s * n_actions + a) * n_states..][..n_states];
                if row.iter().any(|p| !(-ROW_TOLERANCE..=1.0 + ROW_TOLERANCE).contains(p)) {
                    return Err(Error::NonStochasticRow(s, a, row.iter().sum()));
                }
                let sum: f64 = row.iter().sum();
                if (sum - 1.0).abs() > ROW_TOLERANCE {
                    return Err(Error::NonStochasticRow(s, a, sum));
                }
            }
        }
        if reward.iter().any(|r| !r.is_finite()) {
            return Err(Error::Shape("non-finite reward".into()));
        }
        // Aggregated rows may overshoot [0, 1] by rounding.
        transition.iter_mut().for_each(|p| *p = p.clamp(0.0, 1.0));
        let lo = reward.iter().cloned().fold(0.0, f64::min);
        let hi = reward.iter().cloned().fold(1.0, f64::max);
        Ok(FiniteMdp { n_states, n_actions, transition, reward, gamma, reward_bounds: (lo, hi) })
    }

    /// Overrides the declared reward bounds. Fails if a reward falls outside.
    pub fn with_reward_bounds(mut self, lo: f64, hi: f64) -> Result<Self> {
        if lo > hi || self.reward.iter().any(|&r| r < lo || r > hi) {
            return Err(Error::InvalidArgument(format!("rewards outside bounds [{lo}, {hi}]")));
        }
        self.reward_bounds = (lo, hi);
        Ok(self)
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn reward_bounds(&self) -> (f64, f64) {
        self.reward_bounds
    }

    /// Next-state distribution of `(s, a)`.
    #[inline]
    pub fn p(&self, s: usize, a: usize) -> &[f64] {
        let start = (s * self.n_actions + a) * self.n_states;
        &self.transition[start..start + self.n_states]
    }

    #[inline]
    pub fn r(&self, s: usize, a: usize) -> f64 {
        self.reward[s * self.n_actions + a]
    }

    pub fn transition_flat(&self) -> &[f64] {
        &self.transition
    }

    pub fn reward_flat(&self) -> &[f64] {
        &self.reward
    }

    /// Same dynamics with a different discount.
    pub fn with_gamma(&self, gamma: f64) -> Result<Self> {
        Self::from_flat(self.n_states, self.n_actions, self.transition.clone(), self.reward.clone(), gamma)
    }

    /// Markov chain induced by a stochastic tabular policy.
    pub fn policy_chain(&self, policy: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let n = self.n_states;
        let mut m = vec![vec![0.0; n]; n];
        for s in 0..n {
            for (a, &pa) in policy[s].iter().enumerate() {
                if pa == 0.0 {
                    continue;
                }
                for (t, &p) in self.p(s, a).iter().enumerate() {
                    m[s][t] += pa * p;
                }
            }
        }
        m
    }

    /// Chain of the constant policy `a`.
    pub fn action_chain(&self, a: usize) -> Vec<Vec<f64>> {
        (0..self.n_states).map(|s| self.p(s, a).to_vec()).collect()
    }

    /// Builds the MDP whose optimal action-value function is `q` for the given dynamics.
    /// Rewards are `r(s,a) = q(s,a) - γ Σ P(s'|s,a) max_b q(s',b)`.
    pub fn from_optimal_q(n_states: usize, n_actions: usize, transition: Vec<f64>, q: &[f64], gamma: f64) -> Result<Self> {
        if q.len() != n_states * n_actions {
            return Err(Error::Shape("q table length".into()));
        }
        let v: Vec<f64> =
            (0..n_states).map(|s| q[s * n_actions..(s + 1) * n_actions].iter().cloned().fold(f64::NEG_INFINITY, f64::max)).collect();
        let mut reward = vec![0.0; n_states * n_actions];
        for s in 0..n_states {
            for a in 0..n_actions {
                let row = &transition[(s * n_actions + a) * n_states..][..n_states];
                let ev: f64 = row.iter().zip(&v).map(|(p, x)| p * x).sum();
                reward[s * n_actions + a] = q[s * n_actions + a] - gamma * ev;
            }
        }
        Self::from_flat(n_states, n_actions, transition, reward, gamma)
    }

    /// Random MDP with dense Dirichlet(1) rows and uniform rewards in `[0, 1]`.
    pub fn random<R: Rng + ?Sized>(n_states: usize, n_actions: usize, gamma: f64, rng: &mut R) -> Result<Self> {
        let mut t = Vec::with_capacity(n_states * n_actions * n_states);
        for _ in 0..n_states * n_actions {
            t.extend(random_distribution(n_states, rng));
        }
        let r = (0..n_states * n_actions).map(|_| rng.gen::<f64>()).collect();
        Self::from_flat(n_states, n_actions, t, r, gamma)
    }

    /// Renders the text format read by [`FiniteMdp::parse`].
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "states {}", self.n_states);
        let _ = writeln!(out, "actions {}", self.n_actions);
        let _ = writeln!(out, "gamma {}", self.gamma);
        let _ = writeln!(out, "reward_bounds {} {}", self.reward_bounds.0, self.reward_bounds.1);
        out.push_str("transition\n");
        for s in 0..self.n_states {
            for a in 0..self.n_actions {
                let row: Vec<String> = self.p(s, a).iter().map(|p| p.to_string()).collect();
                out.push_str(&row.join(" "));
                out.push('\n');
            }
        }
        out.push_str("reward\n");
        for s in 0..self.n_states {
            let row: Vec<String> = (0..self.n_actions).map(|a| self.r(s, a).to_string()).collect();
            out.push_str(&row.join(" "));
            out.push('\n');
        }
        out
    }

    /// Parses the text format (see `docs/mdp-format.md`).
    pub fn parse(text: &str) -> Result<Self> {
        let mut tokens = text
            .lines()
            .enumerate()
            .flat_map(|(i, line)| {
                let line = line.split('#').next().unwrap_or("");
                line.split_whitespace().map(move |t| (i + 1, t)).collect::<Vec<_>>()
            })
            .peekable();
        let mut last_line = 0;
        let mut next = |what: &str| -> Result<(usize, String)> {
            match tokens.next() {
                Some((l, t)) => {
                    last_line = l;
                    Ok((l, t.to_string()))
                }
                None => Err(Error::Parse { line: last_line, msg: format!("unexpected end of input, expected {what}") }),
            }
        };
        let keyword = |want: &str, next: &mut dyn FnMut(&str) -> Result<(usize, String)>| -> Result<()> {
            let (l, t) = next(want)?;
            if t != want {
                return Err(Error::Parse { line: l, msg: format!("expected `{want}`, found `{t}`") });
            }
            Ok(())
        };
        fn number<T: std::str::FromStr>(tok: (usize, String)) -> Result<T> {
            tok.1.parse().map_err(|_| Error::Parse { line: tok.0, msg: format!("bad number `{}`", tok.1) })
        }
        keyword("states", &mut next)?;
        let n_states: usize = number(next("state count")?)?;
        keyword("actions", &mut next)?;
        let n_actions: usize = number(next("action count")?)?;
        keyword("gamma", &mut next)?;
        let gamma: f64 = number(next("discount")?)?;
        keyword("reward_bounds", &mut next)?;
        let lo: f64 = number(next("lower reward bound")?)?;
        let hi: f64 = number(next("upper reward bound")?)?;
        keyword("transition", &mut next)?;
        let mut t = Vec::with_capacity(n_states * n_actions * n_states);
        for _ in 0..n_states * n_actions * n_states {
            t.push(number(next("transition entry")?)?);
        }
        keyword("reward", &mut next)?;
        let mut r = Vec::with_capacity(n_states * n_actions);
        for _ in 0..n_states * n_actions {
            r.push(number(next("reward entry")?)?);
        }
        if let Ok((l, t)) = next("end") {
            return Err(Error::Parse { line: l, msg: format!("trailing token `{t}`") });
        }
        Self::from_flat(n_states, n_actions, t, r, gamma)?.with_reward_bounds(lo, hi)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }
}

/// Uniformly random point of the simplex (Dirichlet(1)).
pub fn random_distribution<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<f64> {
    let mut w: Vec<f64> = (0..n).map(|_| -(1.0 - rng.gen::<f64>()).ln()).collect();
    let total: f64 = w.iter().sum();
    for x in &mut w {
        *x /= total;
    }
    w
}

/// Σ γ^(m-1) r_m over a finite reward sequence.
pub fn discounted_return(rewards: &[f64], gamma: f64) -> f64 {
    rewards.iter().rev().fold(0.0, |acc, r| r + gamma * acc)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_absorbing_state() {
        let m = FiniteMdp::new(vec![vec![vec![1.0]]], vec![vec![1.0]], 0.9).unwrap();
        assert_eq!(m.n_states(), 1);
        assert_eq!(m.r(0, 0), 1.0);
    }

    #[test]
    fn short_row_rejected() {
        let e = FiniteMdp::new(vec![vec![vec![0.5, 0.48]], vec![vec![0.5, 0.5]]], vec![vec![0.0], vec![0.0]], 0.9);
        assert!(matches!(e, Err(Error::NonStochasticRow(0, 0, _))));
    }

    #[test]
    fn bad_gamma() {
        assert_eq!(FiniteMdp::new(vec![vec![vec![1.0]]], vec![vec![0.0]], 1.0), Err(Error::BadGamma(1.0)));
    }

    #[test]
    fn return_gamma_zero_keeps_first() {
        assert_eq!(discounted_return(&[1.0; 10], 0.0), 1.0);
        assert_eq!(discounted_return(&[0.0; 7], 0.7), 0.0);
    }

    #[test]
    fn return_matches_geometric_series() {
        let t = 44;
        let direct: f64 = (0..t).map(|m| 0.9f64.powi(m)).sum();
        let closed = (1.0 - 0.9f64.powi(t)) / 0.1;
        assert!((discounted_return(&vec![1.0; t as usize], 0.9) - closed).abs() < 1e-12);
        assert!((direct - closed).abs() < 1e-12);
    }

    #[test]
    fn text_round_trip() {
        let mut rng = crate::rng::seeded(3);
        let m = FiniteMdp::random(3, 2, 0.8, &mut rng).unwrap();
        let back = FiniteMdp::parse(&m.to_text()).unwrap();
        assert_eq!(m, back);
    }

    #[test]
    fn parse_reports_line() {
        let text = "states 1\nactions 1\ngamma 0.5\nreward_bounds 0 1\ntransition\nx\nreward\n0\n";
        assert!(matches!(FiniteMdp::parse(text), Err(Error::Parse { line: 6, .. })));
    }

    #[test]
    fn optimal_q_construction_is_consistent() {
        let mut rng = crate::rng::seeded(9);
        let base = FiniteMdp::random(4, 3, 0.7, &mut rng).unwrap();
        let q: Vec<f64> = (0..12).map(|i| (i as f64 * 0.37).sin()).collect();
        let m = FiniteMdp::from_optimal_q(4, 3, base.transition_flat().to_vec(), &q, 0.7).unwrap();
        let qs = crate::planners::avi(&m, 1e-12).unwrap();
        for (x, y) in qs.values().iter().zip(&q) {
            assert!((x - y).abs() < 1e-9);
        }
    }
}
