//! State-action abstractions of finite MDPs and the value-loss check of their uplifted policies.

use crate::abstraction::{Report, Witness, CHECK_THETA};
use crate::error::{Error, Result};
use crate::mdp::{FiniteMdp, ROW_TOLERANCE};
use crate::planners::{avi, evaluate_exact, QTable};

/// Map `(x, a) ↦ (f(x), g(x, a))` where the abstract state depends on the state only.
#[derive(Debug, Clone, PartialEq)]
pub struct Homomorphism {
    state_map: Vec<usize>,
    /// Flat `[x][a]`.
    action_map: Vec<usize>,
    n_under_actions: usize,
    n_states: usize,
    n_actions: usize,
}

impl Homomorphism {
    pub fn new(state_map: Vec<usize>, action_map: Vec<Vec<usize>>, n_states: usize, n_actions: usize) -> Result<Self> {
        if action_map.len() != state_map.len() {
            return Err(Error::Shape("action map must have one row per underlying state".into()));
        }
        let n_under_actions = action_map.first().map_or(0, |r| r.len());
        if action_map.iter().any(|r| r.len() != n_under_actions) {
            return Err(Error::Shape("ragged action map".into()));
        }
        if state_map.iter().any(|&s| s >= n_states) || action_map.iter().flatten().any(|&b| b >= n_actions) {
            return Err(Error::InvalidArgument("homomorphism label out of range".into()));
        }
        Ok(Homomorphism { state_map, action_map: action_map.concat(), n_under_actions, n_states, n_actions })
    }

    pub fn identity(n_states: usize, n_actions: usize) -> Self {
        Homomorphism {
            state_map: (0..n_states).collect(),
            action_map: (0..n_states).flat_map(|_| 0..n_actions).collect(),
            n_under_actions: n_actions,
            n_states,
            n_actions,
        }
    }

    pub fn constant(n_states: usize, n_actions: usize) -> Self {
        Homomorphism {
            state_map: vec![0; n_states],
            action_map: vec![0; n_states * n_actions],
            n_under_actions: n_actions,
            n_states: 1,
            n_actions: 1,
        }
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    #[inline]
    pub fn state(&self, x: usize) -> usize {
        self.state_map[x]
    }

    #[inline]
    pub fn action(&self, x: usize, a: usize) -> usize {
        self.action_map[x * self.n_under_actions + a]
    }

    /// Underlying actions at `x` mapped to abstract action `b`.
    pub fn preimage_actions(&self, x: usize, b: usize) -> Vec<usize> {
        (0..self.n_under_actions).filter(|&a| self.action(x, a) == b).collect()
    }

    fn check_shape(&self, under: &FiniteMdp) -> Result<()> {
        if self.state_map.len() != under.n_states() || self.n_under_actions != under.n_actions() {
            return Err(Error::Shape("homomorphism does not match the MDP".into()));
        }
        Ok(())
    }
}

/// Weights `B(x, a | s, b)` over underlying state-action pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct PairDispersion {
    /// `rows[s][b]` lists `((x, a), weight)`.
    rows: Vec<Vec<Vec<((usize, usize), f64)>>>,
}

impl PairDispersion {
    /// Weight of `(x, a)` proportional to `w(x, a)` within its pre-image.
    pub fn from_weights(homo: &Homomorphism, w: impl Fn(usize, usize) -> f64) -> Result<Self> {
        let mut rows = vec![vec![Vec::new(); homo.n_actions]; homo.n_states];
        for x in 0..homo.state_map.len() {
            for a in 0..homo.n_under_actions {
                let wx = w(x, a);
                if wx > 0.0 {
                    rows[homo.state(x)][homo.action(x, a)].push(((x, a), wx));
                }
            }
        }
        for (s, row) in rows.iter_mut().enumerate() {
            for (b, cell) in row.iter_mut().enumerate() {
                let total: f64 = cell.iter().map(|c| c.1).sum();
                if !(total > 0.0) {
                    return Err(Error::InvalidDispersion(format!("no weight on pre-image of ({s}, {b})")));
                }
                cell.iter_mut().for_each(|c| c.1 /= total);
            }
        }
        Ok(PairDispersion { rows })
    }

    pub fn uniform(homo: &Homomorphism) -> Result<Self> {
        Self::from_weights(homo, |_, _| 1.0)
    }

    pub fn row(&self, s: usize, b: usize) -> &[((usize, usize), f64)] {
        &self.rows[s][b]
    }

    fn validate(&self, homo: &Homomorphism) -> Result<()> {
        if self.rows.len() != homo.n_states || self.rows.iter().any(|r| r.len() != homo.n_actions) {
            return Err(Error::InvalidDispersion("dimensions do not match the homomorphism".into()));
        }
        for (s, row) in self.rows.iter().enumerate() {
            for (b, cell) in row.iter().enumerate() {
                let mut sum = 0.0;
                for &((x, a), w) in cell {
                    if homo.state(x) != s || homo.action(x, a) != b || !(0.0..=1.0).contains(&w) {
                        return Err(Error::InvalidDispersion(format!("({x}, {a}) is outside the pre-image of ({s}, {b})")));
                    }
                    sum += w;
                }
                if (sum - 1.0).abs() > ROW_TOLERANCE {
                    return Err(Error::InvalidDispersion(format!("row ({s}, {b}) sums to {sum}")));
                }
            }
        }
        Ok(())
    }
}

/// Largest `|Q*(x,a) - Q*(y,a')|` over co-mapped pairs.
pub fn check_q_homo(under: &FiniteMdp, homo: &Homomorphism, eps: f64) -> Result<Report> {
    homo.check_shape(under)?;
    let q = avi(under, CHECK_THETA)?;
    Ok(check_q_homo_with(&q, homo, eps))
}

pub fn check_q_homo_with(q: &QTable, homo: &Homomorphism, eps: f64) -> Report {
    let mut groups: Vec<Vec<(usize, usize)>> = vec![Vec::new(); homo.n_states * homo.n_actions];
    for x in 0..homo.state_map.len() {
        for a in 0..homo.n_under_actions {
            groups[homo.state(x) * homo.n_actions + homo.action(x, a)].push((x, a));
        }
    }
    let mut worst = 0.0;
    let mut witness = None;
    for g in &groups {
        for i in 0..g.len() {
            for j in i + 1..g.len() {
                let gap = (q.get(g[i].0, g[i].1) - q.get(g[j].0, g[j].1)).abs();
                if gap > worst {
                    worst = gap;
                    witness = Some(Witness { first: g[i].0, second: g[j].0, action: Some(g[i].1) });
                }
            }
        }
    }
    Report { holds: worst <= eps, worst_gap: worst, secondary_gap: 0.0, witness }
}

/// Surrogate MDP over abstract states and abstract actions.
pub fn surrogate_from_homo(under: &FiniteMdp, homo: &Homomorphism, b: &PairDispersion) -> Result<FiniteMdp> {
    homo.check_shape(under)?;
    b.validate(homo)?;
    let (ns, nb) = (homo.n_states, homo.n_actions);
    let mut t = vec![0.0; ns * nb * ns];
    let mut r = vec![0.0; ns * nb];
    for s in 0..ns {
        for bb in 0..nb {
            for &((x, a), w) in b.row(s, bb) {
                r[s * nb + bb] += w * under.r(x, a);
                for (y, &p) in under.p(x, a).iter().enumerate() {
                    t[(s * nb + bb) * ns + homo.state(y)] += w * p;
                }
            }
        }
    }
    FiniteMdp::from_flat(ns, nb, t, r, under.gamma())
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossReport {
    pub bound: f64,
    pub observed: f64,
    pub holds: bool,
}

/// Planner tolerance allowed on the sign of the observed loss.
const LOSS_SLACK: f64 = 1e-8;

/// Uplifts the surrogate-optimal policy (uniform over pre-image actions) and
/// compares its value loss with `4ε/(1-γ)²`.
pub fn verify_value_loss(under: &FiniteMdp, homo: &Homomorphism, b: &PairDispersion, eps: f64) -> Result<LossReport> {
    let q = avi(under, CHECK_THETA)?;
    let gap = check_q_homo_with(&q, homo, eps);
    if !gap.holds {
        return Err(Error::PreconditionViolated(format!("Q gap {} exceeds eps {eps}", gap.worst_gap)));
    }
    let sur = surrogate_from_homo(under, homo, b)?;
    let greedy = avi(&sur, CHECK_THETA)?.greedy();
    let mut policy = Vec::with_capacity(under.n_states());
    for x in 0..under.n_states() {
        let pre = homo.preimage_actions(x, greedy[homo.state(x)]);
        if pre.is_empty() {
            return Err(Error::PreconditionViolated(format!("no underlying action at state {x} maps to the chosen one")));
        }
        let mut row = vec![0.0; under.n_actions()];
        for &a in &pre {
            row[a] = 1.0 / pre.len() as f64;
        }
        policy.push(row);
    }
    let v_pi = evaluate_exact(under, &policy)?;
    let observed = q.state_values().iter().zip(&v_pi).map(|(a, b)| a - b).fold(f64::NEG_INFINITY, f64::max);
    let g = under.gamma();
    let bound = 4.0 * eps / ((1.0 - g) * (1.0 - g));
    Ok(LossReport { bound, observed, holds: observed <= bound + LOSS_SLACK && observed >= -LOSS_SLACK })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RegionCase {
    /// Five regions; R4a and R4b share a pair despite different dynamics.
    NonMdp,
    /// Six regions; R3b carries reward ε.
    ApproxQ,
    /// Seven regions; R2 is split with policies differing by ε′.
    ApproxPolicy,
}

/// Region chain realized as a one-action MDP, its region-to-pair map and the
/// closed-form value vector stated alongside the example.
#[derive(Debug, Clone)]
pub struct RegionExample {
    pub mdp: FiniteMdp,
    pub homo: Homomorphism,
    pub region_names: Vec<&'static str>,
    pub pair_names: Vec<&'static str>,
    pub closed_form_q: Vec<f64>,
}

/// Pairs in index order: (Y,α), (Y,β), (X,β), (X,α).
const PAIRS: [&str; 4] = ["(Y,alpha)", "(Y,beta)", "(X,beta)", "(X,alpha)"];

pub fn make_region_example(case: RegionCase, gamma: f64, eps: f64, eps_prime: f64) -> Result<RegionExample> {
    if !(0.0..1.0).contains(&eps_prime) {
        return Err(Error::InvalidArgument("eps_prime must lie in [0, 1)".into()));
    }
    let g = gamma;
    let (rows, reward, names, pairs, q): (Vec<Vec<f64>>, Vec<f64>, Vec<&'static str>, Vec<usize>, Vec<f64>) = match case {
        RegionCase::NonMdp => {
            let c = 2.0 / (1.0 - g.powi(3));
            (
                vec![
                    vec![0.0, 1.0, 0.0, 0.0, 0.0],
                    vec![0.0, 0.0, 1.0, 0.0, 0.0],
                    vec![0.0, 0.0, 0.0, 0.5, 0.5],
                    vec![1.0, 0.0, 0.0, 0.0, 0.0],
                    vec![0.5, 0.0, 0.0, 0.25, 0.25],
                ],
                vec![0.0, 0.0, 0.0, g, 0.0],
                vec!["R1", "R2", "R3", "R4a", "R4b"],
                vec![0, 1, 2, 3, 3],
                vec![c - 2.0, g * g * c, g * c, c, c],
            )
        }
        RegionCase::ApproxQ => {
            let c = (g * g * eps + 4.0) / (2.0 * (1.0 - g.powi(3)));
            (
                vec![
                    vec![0.0, 1.0, 0.0, 0.0, 0.0, 0.0],
                    vec![0.0, 0.0, 0.5, 0.5, 0.0, 0.0],
                    vec![0.0, 0.0, 0.0, 0.0, 0.5, 0.5],
                    vec![0.0, 0.0, 0.0, 0.0, 0.5, 0.5],
                    vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.0],
                    vec![0.5, 0.0, 0.0, 0.0, 0.25, 0.25],
                ],
                vec![0.0, 0.0, 0.0, eps, g, 0.0],
                vec!["R1", "R2", "R3a", "R3b", "R4a", "R4b"],
                vec![0, 1, 2, 2, 3, 3],
                vec![c - 2.0, g * eps / 2.0 + g * g * c, g * c, g * c + eps, c, c],
            )
        }
        RegionCase::ApproxPolicy => {
            let ge = (1.0 - eps_prime) / (1.0 - g * eps_prime);
            let c = (4.0 + g * g * eps * ge) / (2.0 * (1.0 - g.powi(3) * ge));
            let e = eps_prime;
            (
                vec![
                    vec![e, 0.5, 0.5 - e, 0.0, 0.0, 0.0, 0.0],
                    vec![0.0, 0.0, 0.0, 0.5, 0.5, 0.0, 0.0],
                    vec![0.0, 0.0, 0.0, 0.5, 0.5, 0.0, 0.0],
                    vec![0.0, 0.0, 0.0, 0.0, 0.0, 0.5, 0.5],
                    vec![0.0, 0.0, 0.0, 0.0, 0.0, 0.5, 0.5],
                    vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
                    vec![0.5, 0.0, 0.0, 0.0, 0.0, 0.25, 0.25],
                ],
                vec![0.0, 0.0, 0.0, 0.0, eps, g, 0.0],
                vec!["R1", "R2a", "R2b", "R3a", "R3b", "R4a", "R4b"],
                vec![0, 1, 1, 2, 2, 3, 3],
                vec![g * g * ge * (eps / 2.0 + g * c), g * eps / 2.0 + g * g * c, g * eps / 2.0 + g * g * c, g * c, g * c + eps, c, c],
            )
        }
    };
    let n = rows.len();
    let mdp = FiniteMdp::new(rows.into_iter().map(|r| vec![r]).collect(), reward.into_iter().map(|r| vec![r]).collect(), gamma)?;
    let homo = Homomorphism::new(pairs, vec![vec![0]; n], 4, 1)?;
    Ok(RegionExample { mdp, homo, region_names: names, pair_names: PAIRS.to_vec(), closed_form_q: q })
}

/// Square navigation grid with the target in the top-right corner, four
/// deterministic moves, a small step cost and a unit reward for entering the
/// target, which is absorbing. The homomorphism folds the grid along its
/// diagonal and mirrors the actions. Demo domain without reference values.
pub fn gridworld(n: usize, gamma: f64, step_cost: f64) -> Result<(FiniteMdp, Homomorphism)> {
    if n < 2 {
        return Err(Error::InvalidArgument("grid side must be at least 2".into()));
    }
    // Actions: 0 up, 1 down, 2 left, 3 right. Cell (row, col) with row 0 at the top.
    let idx = |r: usize, c: usize| r * n + c;
    let target = idx(0, n - 1);
    let ns = n * n;
    let mut t = vec![vec![vec![0.0; ns]; 4]; ns];
    let mut rw = vec![vec![0.0; 4]; ns];
    for r in 0..n {
        for c in 0..n {
            let x = idx(r, c);
            for a in 0..4 {
                if x == target {
                    t[x][a][x] = 1.0;
                    continue;
                }
                let (r2, c2) = match a {
                    0 => (r.saturating_sub(1), c),
                    1 => ((r + 1).min(n - 1), c),
                    2 => (r, c.saturating_sub(1)),
                    _ => (r, (c + 1).min(n - 1)),
                };
                let y = idx(r2, c2);
                t[x][a][y] = 1.0;
                rw[x][a] = if y == target { 1.0 } else { -step_cost };
            }
        }
    }
    let mdp = FiniteMdp::new(t, rw, gamma)?;
    // Reflection across the anti-diagonal through the target: (r, c) -> (n-1-c, n-1-r),
    // which swaps up with right and down with left.
    let mut canon = vec![0usize; ns];
    let mut mirrored = vec![false; ns];
    for r in 0..n {
        for c in 0..n {
            let (mr, mc) = (n - 1 - c, n - 1 - r);
            let (x, y) = (idx(r, c), idx(mr, mc));
            canon[x] = x.min(y);
            mirrored[x] = y < x;
        }
    }
    let mut ids: Vec<usize> = canon.clone();
    ids.sort_unstable();
    ids.dedup();
    let state_map: Vec<usize> = canon.iter().map(|c| ids.binary_search(c).unwrap_or(0)).collect();
    let swap = [3, 2, 1, 0];
    let action_map: Vec<Vec<usize>> = (0..ns).map(|x| (0..4).map(|a| if mirrored[x] { swap[a] } else { a }).collect()).collect();
    let homo = Homomorphism::new(state_map, action_map, ids.len(), 4)?;
    Ok((mdp, homo))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    #[test]
    fn identity_homo_has_zero_gap_and_same_surrogate() {
        let mut rng = seeded(1);
        let m = FiniteMdp::random(4, 3, 0.9, &mut rng).unwrap();
        let id = Homomorphism::identity(4, 3);
        let r = check_q_homo(&m, &id, 0.0).unwrap();
        assert!(r.holds && r.worst_gap == 0.0);
        let s = surrogate_from_homo(&m, &id, &PairDispersion::uniform(&id).unwrap()).unwrap();
        assert_eq!(s, m);
    }

    #[test]
    fn constant_homo_gives_one_by_one() {
        let mut rng = seeded(2);
        let m = FiniteMdp::random(3, 2, 0.9, &mut rng).unwrap();
        let c = Homomorphism::constant(3, 2);
        let s = surrogate_from_homo(&m, &c, &PairDispersion::uniform(&c).unwrap()).unwrap();
        assert_eq!((s.n_states(), s.n_actions()), (1, 1));
    }

    #[test]
    fn closed_form_reference_numbers() {
        let ex = make_region_example(RegionCase::NonMdp, 0.5, 0.0, 0.0).unwrap();
        let want = [0.2857142857, 0.5714285714, 1.1428571429, 2.2857142857, 2.2857142857];
        for (q, w) in ex.closed_form_q.iter().zip(want) {
            assert!((q - w).abs() < 1e-9);
        }
        let c2 = make_region_example(RegionCase::ApproxQ, 0.5, 0.0, 0.0).unwrap();
        let c3 = make_region_example(RegionCase::ApproxPolicy, 0.5, 0.3, 0.0).unwrap();
        let c2e = make_region_example(RegionCase::ApproxQ, 0.5, 0.3, 0.0).unwrap();
        // Case 2 at ε = 0 collapses to case 1 once R3a and R3b are read as R3.
        let collapsed = [c2.closed_form_q[0], c2.closed_form_q[1], c2.closed_form_q[2], c2.closed_form_q[4], c2.closed_form_q[5]];
        for (a, b) in collapsed.iter().zip(&ex.closed_form_q) {
            assert!((a - b).abs() < 1e-12);
        }
        // Case 3 at ε′ = 0 matches case 2 with R2a, R2b read as R2.
        let c3q = &c3.closed_form_q;
        let as_c2 = [c3q[0], c3q[1], c3q[3], c3q[4], c3q[5], c3q[6]];
        for (a, b) in as_c2.iter().zip(&c2e.closed_form_q) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn region_chains_are_stochastic_and_solved_by_avi() {
        for case in [RegionCase::NonMdp, RegionCase::ApproxQ, RegionCase::ApproxPolicy] {
            for k in 1..10 {
                let g = k as f64 / 10.0;
                let ex = make_region_example(case, g, 0.1, 0.2).unwrap();
                let q = avi(&ex.mdp, 1e-12).unwrap();
                let exact = evaluate_exact(&ex.mdp, &vec![vec![1.0]; ex.mdp.n_states()]).unwrap();
                for (x, v) in exact.iter().enumerate() {
                    assert!((q.get(x, 0) - v).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn region_reaching_x_differs_between_4a_and_4b() {
        let ex = make_region_example(RegionCase::NonMdp, 0.5, 0.0, 0.0).unwrap();
        let to_x = |x: usize| -> f64 { (0..5).filter(|&y| ex.homo.state(y) >= 2).map(|y| ex.mdp.p(x, 0)[y]).sum() };
        assert_eq!(to_x(3), 0.0);
        assert_eq!(to_x(4), 0.5);
    }

    #[test]
    fn exact_homomorphism_has_no_loss() {
        let mut rng = seeded(3);
        for _ in 0..5 {
            let inst = q_uniform_instance(3, 2, 3, 3, 0.8, 0.0, &mut rng).unwrap();
            let w: Vec<f64> = (0..27).map(|_| 0.1 + rand::Rng::gen::<f64>(&mut rng)).collect();
            let b = PairDispersion::from_weights(&inst.1, |x, a| w[x * 3 + a]).unwrap();
            let r = verify_value_loss(&inst.0, &inst.1, &b, 1e-8).unwrap();
            assert!(r.observed.abs() < 1e-8, "{r:?}");
        }
    }

    #[test]
    fn bound_on_case_two() {
        let bound = 4.0 * 0.1 / 0.25;
        assert!((bound - 1.6f64).abs() < 1e-12);
    }

    #[test]
    fn gridworld_fold_is_near_q_uniform() {
        let (m, h) = gridworld(4, 0.9, 0.01).unwrap();
        assert_eq!(h.n_states(), 10);
        let r = check_q_homo(&m, &h, 1e-8).unwrap();
        assert!(r.holds, "{r:?}");
    }
}

/// Random MDP with a Q-uniform homomorphism of gap at most `eps`:
/// `blocks` abstract states of `clones` states each, `n_actions` underlying
/// actions onto `n_abstract_actions` abstract ones, random dense dynamics and
/// rewards solved from prescribed optimal action values.
pub fn q_uniform_instance<R: rand::Rng + ?Sized>(
    blocks: usize,
    n_abstract_actions: usize,
    n_actions: usize,
    clones: usize,
    gamma: f64,
    eps: f64,
    rng: &mut R,
) -> Result<(FiniteMdp, Homomorphism)> {
    if n_actions < n_abstract_actions {
        return Err(Error::InvalidArgument("need at least one underlying action per abstract action".into()));
    }
    let ns = blocks * clones;
    let abstract_q: Vec<f64> = (0..blocks * n_abstract_actions).map(|_| rng.gen::<f64>() / (1.0 - gamma)).collect();
    let mut action_map = Vec::with_capacity(ns);
    for _ in 0..ns {
        // Every abstract action gets a pre-image; the rest are assigned at random.
        let mut row: Vec<usize> =
            (0..n_actions).map(|a| if a < n_abstract_actions { a } else { rng.gen_range(0..n_abstract_actions) }).collect();
        for i in (1..row.len()).rev() {
            row.swap(i, rng.gen_range(0..=i));
        }
        action_map.push(row);
    }
    let state_map: Vec<usize> = (0..ns).map(|x| x / clones).collect();
    let mut q = vec![0.0; ns * n_actions];
    for x in 0..ns {
        for a in 0..n_actions {
            let base = abstract_q[state_map[x] * n_abstract_actions + action_map[x][a]];
            q[x * n_actions + a] = base + eps * (rng.gen::<f64>() - 0.5);
        }
    }
    let mut t = Vec::with_capacity(ns * n_actions * ns);
    for _ in 0..ns * n_actions {
        t.extend(crate::mdp::random_distribution(ns, rng));
    }
    let mdp = FiniteMdp::from_optimal_q(ns, n_actions, t, &q, gamma)?;
    let homo = Homomorphism::new(state_map, action_map, blocks, n_abstract_actions)?;
    Ok((mdp, homo))
}
