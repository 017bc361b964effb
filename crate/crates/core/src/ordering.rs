//! Comparing abstractions of one MDP: refinement, products, grouping by
//! near-equal action values, two preference orders, a candidate/competitor
//! selection loop and a return-prediction score.

use std::collections::HashMap;

use rayon::prelude::*;

use crate::abstraction::{build_surrogate, Abstraction, Dispersion, DispersionSource, TabularAbstraction};
use crate::env::History;
use crate::error::{Error, Result};
use crate::mdp::FiniteMdp;
use crate::planners::{avi, stationary_distribution, QTable};

pub const ORDER_THETA: f64 = 1e-12;

/// Product of two maps over the same states, with projections back to each factor.
#[derive(Debug, Clone, PartialEq)]
pub struct Product {
    pub map: TabularAbstraction,
    pub chi: Vec<usize>,
    pub chi2: Vec<usize>,
}

/// Maps `x` to the pair `(ψ(x), ψ'(x))`; pairs are numbered by first appearance.
pub fn product_map(psi: &TabularAbstraction, psi2: &TabularAbstraction) -> Result<Product> {
    if psi.n_underlying() != psi2.n_underlying() {
        return Err(Error::Shape("maps have different domains".into()));
    }
    let pairs: Vec<(usize, usize)> = (0..psi.n_underlying()).map(|x| (psi.label(x), psi2.label(x))).collect();
    let map = TabularAbstraction::from_labels(&pairs);
    let mut chi = vec![0; map.n_states()];
    let mut chi2 = vec![0; map.n_states()];
    for (x, &(a, b)) in pairs.iter().enumerate() {
        chi[map.label(x)] = a;
        chi2[map.label(x)] = b;
    }
    Ok(Product { map, chi, chi2 })
}

/// Coarsening map `χ` with `coarse = χ ∘ fine`, if one exists.
pub fn is_refinement(fine: &TabularAbstraction, coarse: &TabularAbstraction) -> Option<Vec<usize>> {
    if fine.n_underlying() != coarse.n_underlying() {
        return None;
    }
    let mut chi: Vec<Option<usize>> = vec![None; fine.n_states()];
    for x in 0..fine.n_underlying() {
        let slot = &mut chi[fine.label(x)];
        match *slot {
            None => *slot = Some(coarse.label(x)),
            Some(c) if c != coarse.label(x) => return None,
            Some(_) => {}
        }
    }
    Some(chi.into_iter().map(|c| c.unwrap_or(0)).collect())
}

/// Largest `|q(ψ(x), a) - q'(ψ'(x), a)|` over underlying states, which ranges
/// over exactly the reachable pairs of the product.
pub fn q_gap(q: &QTable, psi: &TabularAbstraction, q2: &QTable, psi2: &TabularAbstraction) -> f64 {
    let mut worst: f64 = 0.0;
    for x in 0..psi.n_underlying() {
        let (a, b) = (q.row(psi.label(x)), q2.row(psi2.label(x)));
        for (u, v) in a.iter().zip(b) {
            worst = worst.max((u - v).abs());
        }
    }
    worst
}

/// Sequential grouping: each map joins the first label all of whose members
/// it is similar to, else opens a new label. Labels are never revised.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LabelStore {
    members: Vec<Vec<usize>>,
    of: HashMap<usize, usize>,
}

impl LabelStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn label(&mut self, id: usize, similar: impl Fn(usize, usize) -> bool) -> usize {
        if let Some(&l) = self.of.get(&id) {
            return l;
        }
        let l = self.members.iter().position(|m| m.iter().all(|&other| similar(id, other))).unwrap_or_else(|| {
            self.members.push(Vec::new());
            self.members.len() - 1
        });
        self.members[l].push(id);
        self.of.insert(id, l);
        l
    }

    pub fn get(&self, id: usize) -> Option<usize> {
        self.of.get(&id).copied()
    }

    pub fn members(&self, label: usize) -> &[usize] {
        &self.members[label]
    }

    pub fn n_labels(&self) -> usize {
        self.members.len()
    }
}

/// Optimal action values of the surrogate of `psi`, with dispersion
/// proportional to `rho` within each block.
pub fn map_q(mdp: &FiniteMdp, rho: &[f64], psi: &TabularAbstraction) -> Result<QTable> {
    let b = Dispersion::from_state_weights(psi, mdp.n_actions(), rho)?;
    let sur = build_surrogate(mdp, psi, &b, DispersionSource::StationaryOfPolicy("uniform".into()))?;
    avi(&sur.mdp, ORDER_THETA)
}

/// Stationary distribution of the uniformly random policy.
pub fn uniform_stationary(mdp: &FiniteMdp) -> Result<Vec<f64>> {
    let na = mdp.n_actions();
    let policy = vec![vec![1.0 / na as f64; na]; mdp.n_states()];
    stationary_distribution(&mdp.policy_chain(&policy), 1e-13)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Order {
    /// Isomorphism, then product, then size.
    Eps,
    /// Isomorphism and size, else product distance.
    Cpd,
}

/// Which clause of the order made the comparison true.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Case {
    None,
    SimilarSmaller,
    SimilarToProduct,
    UnrelatedSmaller,
    Distance,
}

impl Case {
    pub fn name(self) -> &'static str {
        match self {
            Case::None => "none",
            Case::SimilarSmaller => "similar_smaller",
            Case::SimilarToProduct => "similar_to_product",
            Case::UnrelatedSmaller => "unrelated_smaller",
            Case::Distance => "distance",
        }
    }

    pub fn holds(self) -> bool {
        self != Case::None
    }
}

/// Abstractions of one MDP with their surrogate action values and a label store.
#[derive(Debug, Clone)]
pub struct MapClass {
    pub mdp: FiniteMdp,
    pub maps: Vec<TabularAbstraction>,
    pub eps: f64,
    rho: Vec<f64>,
    q: Vec<QTable>,
    store: LabelStore,
}

impl MapClass {
    pub fn new(mdp: FiniteMdp, maps: Vec<TabularAbstraction>, eps: f64) -> Result<Self> {
        if maps.is_empty() {
            return Err(Error::InvalidArgument("empty map class".into()));
        }
        if maps.iter().any(|m| m.n_underlying() != mdp.n_states()) {
            return Err(Error::Shape("map domain differs from the MDP's states".into()));
        }
        let rho = uniform_stationary(&mdp)?;
        let q = maps.par_iter().map(|m| map_q(&mdp, &rho, m)).collect::<Result<Vec<_>>>()?;
        Ok(MapClass { mdp, maps, eps, rho, q, store: LabelStore::new() })
    }

    pub fn len(&self) -> usize {
        self.maps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.maps.is_empty()
    }

    pub fn q(&self, i: usize) -> &QTable {
        &self.q[i]
    }

    pub fn size(&self, i: usize) -> usize {
        self.maps[i].n_states()
    }

    pub fn gap(&self, i: usize, j: usize) -> f64 {
        q_gap(&self.q[i], &self.maps[i], &self.q[j], &self.maps[j])
    }

    pub fn similar(&self, i: usize, j: usize) -> bool {
        self.gap(i, j) <= self.eps
    }

    /// Label of map `i`; repeated queries return the stored label.
    pub fn partition_label(&mut self, i: usize) -> usize {
        let gaps: Vec<f64> = (0..self.len()).map(|j| self.gap(i, j)).collect();
        let eps = self.eps;
        self.store.label(i, |_, j| gaps[j] <= eps)
    }

    pub fn labels(&mut self) -> Vec<usize> {
        (0..self.len()).map(|i| self.partition_label(i)).collect()
    }

    /// Triples `(i, j, k)` with `i ≅ j`, `j ≅ k` but not `i ≅ k`.
    pub fn transitivity_violations(&self) -> Vec<(usize, usize, usize)> {
        let n = self.len();
        let sim: Vec<Vec<bool>> = (0..n).map(|i| (0..n).map(|j| self.similar(i, j)).collect()).collect();
        let mut out = Vec::new();
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    if i != k && j != i && j != k && sim[i][j] && sim[j][k] && !sim[i][k] {
                        out.push((i, j, k));
                    }
                }
            }
        }
        out
    }

    fn product_q(&self, i: usize, j: usize) -> Result<(Product, QTable)> {
        let p = product_map(&self.maps[i], &self.maps[j])?;
        let q = map_q(&self.mdp, &self.rho, &p.map)?;
        Ok((p, q))
    }

    /// Whether map `i` is at least as good as map `j` under the isomorphism order.
    pub fn order_eps(&self, i: usize, j: usize) -> Result<Case> {
        let (si, sj) = (self.size(i), self.size(j));
        if self.similar(i, j) {
            return Ok(if si <= sj { Case::SimilarSmaller } else { Case::None });
        }
        let (p, qp) = self.product_q(i, j)?;
        let i_phi = q_gap(&self.q[i], &self.maps[i], &qp, &p.map) <= self.eps;
        if i_phi {
            return Ok(Case::SimilarToProduct);
        }
        let phi_j = q_gap(&qp, &p.map, &self.q[j], &self.maps[j]) <= self.eps;
        Ok(if !phi_j && si <= sj { Case::UnrelatedSmaller } else { Case::None })
    }

    /// `(d_i, d_j)`: how far each factor's values, pulled back to the product,
    /// are from the product's own values.
    pub fn cart_distance(&self, i: usize, j: usize) -> Result<(f64, f64)> {
        let (p, qp) = self.product_q(i, j)?;
        let dist = |q: &QTable, chi: &[usize]| {
            let mut worst: f64 = 0.0;
            for t in 0..p.map.n_states() {
                for (u, v) in q.row(chi[t]).iter().zip(qp.row(t)) {
                    worst = worst.max((u - v).abs());
                }
            }
            worst
        };
        Ok((dist(&self.q[i], &p.chi), dist(&self.q[j], &p.chi2)))
    }

    pub fn order_cpd(&self, i: usize, j: usize) -> Result<Case> {
        if self.similar(i, j) {
            return Ok(if self.size(i) <= self.size(j) { Case::SimilarSmaller } else { Case::None });
        }
        let (di, dj) = self.cart_distance(i, j)?;
        Ok(if di <= dj { Case::Distance } else { Case::None })
    }

    pub fn order(&self, kind: Order, i: usize, j: usize) -> Result<Case> {
        match kind {
            Order::Eps => self.order_eps(i, j),
            Order::Cpd => self.order_cpd(i, j),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub iteration: usize,
    pub candidate: usize,
    pub competitor: usize,
    /// `"switch"` when the competitor takes over, `"keep"` otherwise.
    pub decision: &'static str,
    pub case_fired: Case,
}

pub const TRACE_COLUMNS: [&str; 5] = ["iteration", "candidate_id", "competitor_id", "decision", "case_fired"];

#[derive(Debug, Clone)]
pub struct AleoResult {
    pub winner: usize,
    pub comparisons: usize,
    pub trace: Vec<TraceRow>,
    /// True when the winner faced every other map without losing.
    pub stable: bool,
    pub transitivity_violations: Vec<(usize, usize, usize)>,
}

/// Candidate/competitor selection. Competitors are taken round-robin by
/// index; the loser of each comparison is rejected. A competitor replaces
/// the candidate only when it is strictly preferred. When every other map
/// has been rejected the rejected set is cleared. The loop ends once the
/// candidate has beaten every other map, or after `budget` comparisons.
pub fn aleo(class: &MapClass, order: Order, budget: usize) -> Result<AleoResult> {
    let n = class.len();
    let mut candidate = 0;
    let mut rejected = vec![false; n];
    let mut faced = vec![false; n];
    let mut trace = Vec::new();
    let mut cursor = 0;
    let stable = loop {
        if (0..n).all(|k| k == candidate || faced[k]) {
            break true;
        }
        if trace.len() >= budget {
            break false;
        }
        if (0..n).all(|k| k == candidate || rejected[k]) {
            rejected.iter_mut().for_each(|r| *r = false);
        }
        let competitor = loop {
            cursor = (cursor + 1) % n;
            if cursor != candidate && !rejected[cursor] && !faced[cursor] {
                break cursor;
            }
            if (0..n).all(|k| k == candidate || rejected[k] || faced[k]) {
                rejected.iter_mut().for_each(|r| *r = false);
            }
        };
        let challenger = class.order(order, competitor, candidate)?;
        let defender = class.order(order, candidate, competitor)?;
        let switch = challenger.holds() && !defender.holds();
        trace.push(TraceRow {
            iteration: trace.len(),
            candidate,
            competitor,
            decision: if switch { "switch" } else { "keep" },
            case_fired: if switch { challenger } else { defender },
        });
        if switch {
            rejected[candidate] = true;
            faced.iter_mut().for_each(|f| *f = false);
            faced[candidate] = true;
            candidate = competitor;
        } else {
            rejected[competitor] = true;
            faced[competitor] = true;
        }
    };
    Ok(AleoResult { winner: candidate, comparisons: trace.len(), trace, stable, transitivity_violations: class.transitivity_violations() })
}

/// Horizon after which the remaining discounted weight is below `eps`:
/// `⌈log(ε(1-γ)) / log γ⌉`.
pub fn eps_horizon(gamma: f64, eps: f64) -> Result<usize> {
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::BadGamma(gamma));
    }
    if !(eps > 0.0) {
        return Err(Error::InvalidArgument("eps must be positive".into()));
    }
    let t = ((eps * (1.0 - gamma)).ln() / gamma.ln()).ceil();
    Ok(t.max(1.0) as usize)
}

/// Mean squared error between `q_hat(ψ(h_<m), a_m)` and the return of the
/// next `T(ε)` rewards, over the first `n_steps - T(ε)` steps of `history`.
pub fn mse_score<A: Abstraction + ?Sized>(q_hat: &QTable, psi: &A, history: &History, gamma: f64, eps: f64) -> Result<f64> {
    let t = eps_horizon(gamma, eps)?;
    let len = history.n_steps();
    if len <= t {
        return Err(Error::HistoryTooShort(len, t));
    }
    let n = len - t;
    let rewards = history.rewards();
    let mut prefix = History::new(history.initial());
    let mut total = 0.0;
    for (m, &(a, e)) in history.steps().iter().take(n).enumerate() {
        let s = psi.state(&prefix);
        let g: f64 = rewards[m..m + t].iter().rev().fold(0.0, |acc, r| r + gamma * acc);
        total += (q_hat.get(s, a) - g).powi(2);
        prefix.push(a, e);
    }
    Ok(total / n as f64)
}
