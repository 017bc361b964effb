//! Tabular and history-based policies, and uplifting through an abstraction.

use std::fmt;
use std::sync::Arc;

use crate::abstraction::Abstraction;
use crate::env::History;
use crate::error::{Error, Result};

pub type HistoryPolicyFn = dyn Fn(&History) -> Result<Vec<f64>> + Send + Sync;

#[derive(Clone)]
pub enum Policy {
    /// One action distribution per state. Applied to a history it reads the last observation.
    Tabular(Vec<Vec<f64>>),
    History(Arc<HistoryPolicyFn>),
}

impl fmt::Debug for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Policy::Tabular(t) => f.debug_tuple("Tabular").field(t).finish(),
            Policy::History(_) => f.write_str("History(..)"),
        }
    }
}

impl Policy {
    pub fn uniform(n_states: usize, n_actions: usize) -> Self {
        Policy::Tabular(vec![vec![1.0 / n_actions as f64; n_actions]; n_states])
    }

    pub fn deterministic(actions: &[usize], n_actions: usize) -> Self {
        Policy::Tabular(actions.iter().map(|&a| one_hot(a, n_actions)).collect())
    }

    pub fn from_fn<F>(f: F) -> Self
    where
        F: Fn(&History) -> Result<Vec<f64>> + Send + Sync + 'static,
    {
        Policy::History(Arc::new(f))
    }

    pub fn at(&self, h: &History) -> Result<Vec<f64>> {
        match self {
            Policy::Tabular(t) => {
                let s = h.last().observation;
                t.get(s).cloned().ok_or(Error::UnknownState(s))
            }
            Policy::History(f) => f(h),
        }
    }

    pub fn table(&self) -> Option<&[Vec<f64>]> {
        match self {
            Policy::Tabular(t) => Some(t),
            Policy::History(_) => None,
        }
    }
}

pub fn one_hot(a: usize, n: usize) -> Vec<f64> {
    let mut v = vec![0.0; n];
    v[a] = 1.0;
    v
}

/// History policy `h ↦ table[ψ(h)]`.
pub fn uplift_policy(state_policy: &[Vec<f64>], psi: Arc<dyn Abstraction>) -> Policy {
    let table = state_policy.to_vec();
    Policy::from_fn(move |h| {
        let s = psi.state(h);
        table.get(s).cloned().ok_or(Error::UnknownState(s))
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::abstraction::TabularAbstraction;
    use crate::env::Percept;

    #[test]
    fn constant_map_gives_constant_policy() {
        let psi: Arc<dyn Abstraction> = Arc::new(TabularAbstraction::new(vec![0, 0, 0], 1).unwrap());
        let p = uplift_policy(&[vec![0.25, 0.75]], psi);
        let mut h = History::new(Percept::new(0, 0.0));
        for o in [1, 2, 0, 2] {
            assert_eq!(p.at(&h).unwrap(), vec![0.25, 0.75]);
            h.push(0, Percept::new(o, 0.0));
        }
    }

    #[test]
    fn identity_map_matches_table() {
        let table = vec![vec![1.0, 0.0], vec![0.3, 0.7]];
        let psi: Arc<dyn Abstraction> = Arc::new(TabularAbstraction::identity(2));
        let up = uplift_policy(&table, psi);
        let direct = Policy::Tabular(table);
        for o in 0..2 {
            let h = History::new(Percept::new(o, 0.0));
            assert_eq!(up.at(&h).unwrap(), direct.at(&h).unwrap());
        }
    }

    #[test]
    fn unknown_state_reported() {
        let psi: Arc<dyn Abstraction> = Arc::new(TabularAbstraction::identity(3));
        let up = uplift_policy(&[vec![1.0]], psi);
        assert_eq!(up.at(&History::new(Percept::new(2, 0.0))), Err(Error::UnknownState(2)));
    }
}
