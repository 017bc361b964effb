//! Action sequentialization: codes over a small alphabet, the wrapped
//! environment, the Markov augmentation for finite MDPs and state-count bounds.

use num::bigint::BigInt;
use num::rational::BigRational;
use num::{One, Signed, ToPrimitive, Zero};

use crate::abstraction::Report;
use crate::env::{History, HistoryEnv, Percept};
use crate::error::{Error, Result};
use crate::mdp::FiniteMdp;
use crate::planners::{avi, QTable};

/// Fixed-length codes over `0..base` for `0..n_actions`. Codes past the last
/// action alias the last action.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActionCodec {
    n_actions: usize,
    base: usize,
    depth: usize,
}

pub fn make_codec(n_actions: usize, base: usize) -> Result<ActionCodec> {
    if base < 2 {
        return Err(Error::BadBase(base));
    }
    if n_actions == 0 {
        return Err(Error::InvalidArgument("need at least one action".into()));
    }
    let mut depth = 1;
    let mut size = base;
    while size < n_actions {
        size *= base;
        depth += 1;
    }
    Ok(ActionCodec { n_actions, base, depth })
}

impl ActionCodec {
    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn base(&self) -> usize {
        self.base
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    /// Size of the extended action set, `base^depth`.
    pub fn n_codes(&self) -> usize {
        self.base.pow(self.depth as u32)
    }

    /// Digits of code index `i`, most significant first.
    pub fn code_of_index(&self, mut i: usize) -> Vec<usize> {
        let mut digits = vec![0; self.depth];
        for d in digits.iter_mut().rev() {
            *d = i % self.base;
            i /= self.base;
        }
        digits
    }

    pub fn index_of_code(&self, code: &[usize]) -> usize {
        code.iter().fold(0, |acc, &x| acc * self.base + x)
    }

    pub fn encode(&self, a: usize) -> Vec<usize> {
        self.code_of_index(a)
    }

    pub fn decode(&self, code: &[usize]) -> usize {
        self.decode_index(self.index_of_code(code))
    }

    pub fn decode_index(&self, i: usize) -> usize {
        i.min(self.n_actions - 1)
    }

    /// Original actions whose extended codes start with `prefix`.
    pub fn restricted(&self, prefix: &[usize]) -> Vec<usize> {
        let rest = self.base.pow((self.depth - prefix.len()) as u32);
        let lo = self.index_of_code(prefix) * rest;
        let mut out: Vec<usize> = (lo..lo + rest).map(|i| self.decode_index(i)).collect();
        out.dedup();
        out
    }
}

/// Discount of the sequentialized process, kept as `γ` and `d` so that
/// powers of `λ = γ^(1/d)` are computed from the exponent directly.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeqDiscount {
    pub gamma: f64,
    pub depth: usize,
}

impl SeqDiscount {
    pub fn lambda(&self) -> f64 {
        self.lambda_pow(1)
    }

    /// `λ^k = γ^(k/d)`; exactly `γ` at `k = d`.
    pub fn lambda_pow(&self, k: usize) -> f64 {
        if k == self.depth {
            self.gamma
        } else {
            self.gamma.powf(k as f64 / self.depth as f64)
        }
    }
}

/// Environment over code symbols. The inner environment steps on every
/// `d`-th symbol; in between the last observation repeats with reward 0.
#[derive(Debug, Clone)]
pub struct SeqEnv<E> {
    pub inner: E,
    pub codec: ActionCodec,
    pub discount: SeqDiscount,
}

pub const R_BOT: f64 = 0.0;

pub fn sequentialize<E: HistoryEnv>(env: E, codec: ActionCodec) -> Result<SeqEnv<E>> {
    if codec.n_actions() != env.n_actions() {
        return Err(Error::Shape("codec does not match the environment's action count".into()));
    }
    let discount = SeqDiscount { gamma: env.gamma(), depth: codec.depth() };
    Ok(SeqEnv { inner: env, codec, discount })
}

impl<E: HistoryEnv> SeqEnv<E> {
    /// Inverse of the history transformation, plus the pending partial code.
    pub fn inner_history(&self, tau: &History) -> (History, Vec<usize>) {
        let d = self.codec.depth();
        let mut h = History::new(tau.initial());
        let mut buf = Vec::with_capacity(d);
        for &(x, e) in tau.steps() {
            buf.push(x);
            if buf.len() == d {
                h.push(self.codec.decode(&buf), e);
                buf.clear();
            }
        }
        (h, buf)
    }

    /// Expands an inner history into the symbol-level history.
    pub fn transform_history(&self, h: &History) -> History {
        let mut tau = History::new(h.initial());
        let mut last = h.initial().observation;
        for &(a, e) in h.steps() {
            let code = self.codec.encode(a);
            for &x in &code[..code.len() - 1] {
                tau.push(x, Percept::new(last, R_BOT));
            }
            tau.push(code[code.len() - 1], e);
            last = e.observation;
        }
        tau
    }
}

impl<E: HistoryEnv> HistoryEnv for SeqEnv<E> {
    fn n_actions(&self) -> usize {
        self.codec.base()
    }
    fn n_observations(&self) -> usize {
        self.inner.n_observations()
    }
    fn gamma(&self) -> f64 {
        self.discount.lambda()
    }
    fn reward_bounds(&self) -> (f64, f64) {
        let (lo, hi) = self.inner.reward_bounds();
        (lo.min(R_BOT), hi.max(R_BOT))
    }
    fn initial_percept(&self) -> Percept {
        self.inner.initial_percept()
    }
    fn percept_distribution(&self, tau: &History, x: usize) -> Vec<(Percept, f64)> {
        let (h, mut buf) = self.inner_history(tau);
        buf.push(x);
        if buf.len() < self.codec.depth() {
            return vec![(Percept::new(tau.last().observation, R_BOT), 1.0)];
        }
        self.inner.percept_distribution(&h, self.codec.decode(&buf))
    }
}

/// Finite MDP over augmented states `(o, x_1..x_{i-1})` with discount `λ`.
#[derive(Debug, Clone)]
pub struct MarkovSeq {
    pub mdp: FiniteMdp,
    pub codec: ActionCodec,
    pub discount: SeqDiscount,
    per_observation: usize,
}

impl MarkovSeq {
    /// Augmented state index of observation `o` with pending prefix `prefix`.
    pub fn state(&self, o: usize, prefix: &[usize]) -> usize {
        let b = self.codec.base();
        let offset = (b.pow(prefix.len() as u32) - 1) / (b - 1) + self.codec.index_of_code(prefix);
        o * self.per_observation + offset
    }

    /// Every prefix of length below the depth, shortest first.
    pub fn prefixes(&self) -> Vec<Vec<usize>> {
        let b = self.codec.base();
        let mut out = Vec::new();
        for len in 0..self.codec.depth() {
            for i in 0..b.pow(len as u32) {
                let mut p = vec![0; len];
                let mut k = i;
                for slot in p.iter_mut().rev() {
                    *slot = k % b;
                    k /= b;
                }
                out.push(p);
            }
        }
        out
    }

    /// Original-MDP policy induced by a stochastic policy over augmented states:
    /// the probability of an action is the summed probability of its codes.
    pub fn induced_policy(&self, seq_policy: &[Vec<f64>], n_observations: usize) -> Vec<Vec<f64>> {
        let na = self.codec.n_actions();
        (0..n_observations)
            .map(|o| {
                let mut row = vec![0.0; na];
                for i in 0..self.codec.n_codes() {
                    let code = self.codec.code_of_index(i);
                    let mut p = 1.0;
                    for k in 0..code.len() {
                        p *= seq_policy[self.state(o, &code[..k])][code[k]];
                    }
                    row[self.codec.decode_index(i)] += p;
                }
                row
            })
            .collect()
    }
}

pub fn sequentialize_markov(mdp: &FiniteMdp, codec: &ActionCodec) -> Result<MarkovSeq> {
    if codec.n_actions() != mdp.n_actions() {
        return Err(Error::Shape("codec does not match the MDP's action count".into()));
    }
    let (b, d) = (codec.base(), codec.depth());
    let per_observation = (b.pow(d as u32) - 1) / (b - 1);
    let no = mdp.n_states();
    let ns = no * per_observation;
    let discount = SeqDiscount { gamma: mdp.gamma(), depth: d };
    let mut seq =
        MarkovSeq { mdp: FiniteMdp::new(vec![vec![vec![1.0]]], vec![vec![0.0]], 0.0)?, codec: codec.clone(), discount, per_observation };
    let mut t = vec![0.0; ns * b * ns];
    let mut r = vec![0.0; ns * b];
    for o in 0..no {
        for prefix in seq.prefixes() {
            let s = seq.state(o, &prefix);
            for x in 0..b {
                let mut code = prefix.clone();
                code.push(x);
                let row = &mut t[(s * b + x) * ns..(s * b + x + 1) * ns];
                if code.len() < d {
                    row[seq.state(o, &code)] = 1.0;
                } else {
                    let a = codec.decode(&code);
                    for (o2, &p) in mdp.p(o, a).iter().enumerate() {
                        row[seq.state(o2, &[])] += p;
                    }
                    r[s * b + x] = mdp.r(o, a);
                }
            }
        }
    }
    seq.mdp = FiniteMdp::from_flat(ns, b, t, r, discount.lambda())?
        .with_reward_bounds(mdp.reward_bounds().0.min(R_BOT), mdp.reward_bounds().1.max(R_BOT))?;
    Ok(seq)
}

/// Largest deviation of `Q̄*((o, x_<i), x_i)` from `λ^(d-i) max_{a ∈ A(x_≤i)} Q*(o, a)`
/// over every observation, prefix and symbol.
pub fn check_q_relationship(mdp: &FiniteMdp, codec: &ActionCodec, tol: f64) -> Result<Report> {
    let seq = sequentialize_markov(mdp, codec)?;
    let q = avi(mdp, 1e-13)?;
    let qs = avi(&seq.mdp, 1e-13)?;
    Ok(q_relationship_gap(&seq, &q, &qs, tol))
}

pub fn q_relationship_gap(seq: &MarkovSeq, q: &QTable, qs: &QTable, tol: f64) -> Report {
    let d = seq.codec.depth();
    let mut worst = 0.0;
    let mut witness = None;
    for o in 0..q.n_states() {
        for prefix in seq.prefixes() {
            let s = seq.state(o, &prefix);
            for x in 0..seq.codec.base() {
                let mut code = prefix.clone();
                code.push(x);
                let best = seq.codec.restricted(&code).iter().map(|&a| q.get(o, a)).fold(f64::NEG_INFINITY, f64::max);
                let gap = (qs.get(s, x) - seq.discount.lambda_pow(d - code.len()) * best).abs();
                if gap > worst {
                    worst = gap;
                    witness = Some(crate::abstraction::Witness { first: o, second: s, action: Some(x) });
                }
            }
        }
    }
    Report { holds: worst <= tol, worst_gap: worst, secondary_gap: 0.0, witness }
}

/// Exact decimal value of the shortest representation of `x`.
pub fn exact_decimal(x: f64) -> Result<BigRational> {
    parse_decimal(&format!("{x}"))
}

/// Parses a plain decimal such as `0.125` or `-3` into an exact rational.
pub fn parse_decimal(s: &str) -> Result<BigRational> {
    let bad = || Error::InvalidArgument(format!("not a decimal number: `{s}`"));
    let t = s.trim();
    let (neg, t) = match t.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, t),
    };
    let (int, frac) = t.split_once('.').unwrap_or((t, ""));
    if int.is_empty() && frac.is_empty() || !int.chars().chain(frac.chars()).all(|c| c.is_ascii_digit()) {
        return Err(bad());
    }
    let digits: BigInt = format!("0{int}{frac}").parse().map_err(|_| bad())?;
    let den = num::pow(BigInt::from(10), frac.len());
    let r = BigRational::new(digits, den);
    Ok(if neg { -r } else { r })
}

fn check_bound_args(eps: &BigRational, gamma: &BigRational, n_actions: usize) -> Result<()> {
    if !eps.is_positive() || !gamma.is_positive() || gamma >= &BigRational::one() || n_actions < 2 {
        return Err(Error::InvalidArgument("need eps > 0, gamma in (0, 1), at least 2 actions".into()));
    }
    Ok(())
}

/// `(2 / (ε (1-γ)³))^|A|`.
pub fn esa_bound(eps: &BigRational, gamma: &BigRational, n_actions: usize) -> Result<BigRational> {
    check_bound_args(eps, gamma, n_actions)?;
    let delta = BigRational::one() - gamma;
    let base = BigRational::from_integer(2.into()) / (eps * num::pow(delta, 3));
    Ok(num::pow(base, n_actions))
}

/// `4 ⌈1 - γ + log2 |A|⌉⁶ / (γ² ε² (1-γ)⁶)`.
pub fn binarized_esa_bound(eps: &BigRational, gamma: &BigRational, n_actions: usize) -> Result<BigRational> {
    check_bound_args(eps, gamma, n_actions)?;
    let delta = BigRational::one() - gamma;
    let c = ceil_delta_plus_log2(&delta, n_actions);
    let num_ = BigRational::from_integer(BigInt::from(4) * num::pow(BigInt::from(c), 6));
    let den = num::pow(gamma.clone(), 2) * num::pow(eps.clone(), 2) * num::pow(delta, 6);
    Ok(num_ / den)
}

/// Exact `⌈δ + log2 n⌉` for rational `δ` in (0, 1).
fn ceil_delta_plus_log2(delta: &BigRational, n: usize) -> u64 {
    let k = usize::BITS as u64 - 1 - n.leading_zeros() as u64;
    if n.is_power_of_two() {
        return k + 1;
    }
    // δ + log2 n ≤ k + 1  ⇔  n^q ≤ 2^((k+1)q - p) with δ = p/q.
    let approx = delta.to_f64().unwrap_or(0.5) + (n as f64).log2();
    if (approx - approx.round()).abs() > 1e-9 {
        return approx.ceil() as u64;
    }
    let (p, q) = (delta.numer().to_u64(), delta.denom().to_u64());
    match (p, q) {
        (Some(p), Some(q)) if q <= 1 << 20 => {
            let lhs = num::pow(BigInt::from(n), q as usize);
            let rhs = num::pow(BigInt::from(2), ((k + 1) * q - p) as usize);
            if lhs <= rhs {
                k + 1
            } else {
                k + 2
            }
        }
        _ => approx.ceil() as u64,
    }
}

/// One row of the bound comparison table.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundRow {
    pub eps: BigRational,
    pub gamma: BigRational,
    pub n_actions: usize,
    pub esa: BigRational,
    pub binarized: BigRational,
}

impl BoundRow {
    pub fn compute(eps: &BigRational, gamma: &BigRational, n_actions: usize) -> Result<Self> {
        Ok(BoundRow {
            eps: eps.clone(),
            gamma: gamma.clone(),
            n_actions,
            esa: esa_bound(eps, gamma, n_actions)?,
            binarized: binarized_esa_bound(eps, gamma, n_actions)?,
        })
    }

    pub fn ratio(&self) -> BigRational {
        &self.esa / &self.binarized
    }
}

pub const BOUND_COLUMNS: [&str; 6] = ["eps", "gamma", "|A|", "esa", "binarized", "ratio"];

/// Exact rational as an integer or `p/q`.
pub fn format_exact(r: &BigRational) -> String {
    if r.is_integer() {
        r.numer().to_string()
    } else {
        format!("{}/{}", r.numer(), r.denom())
    }
}

/// Rounded scientific notation with `sig` significant digits, computed exactly.
pub fn format_sci(r: &BigRational, sig: usize) -> String {
    if r.is_zero() {
        return "0".into();
    }
    let sign = if r.is_negative() { "-" } else { "" };
    let n = r.numer().abs();
    let d = r.denom().clone();
    let ten = BigInt::from(10);
    let mut e = n.to_string().len() as i64 - d.to_string().len() as i64;
    let scaled = |e: i64| -> (BigInt, BigInt) {
        if e >= 0 {
            (n.clone(), &d * num::pow(ten.clone(), e as usize))
        } else {
            (&n * num::pow(ten.clone(), (-e) as usize), d.clone())
        }
    };
    loop {
        let (a, b) = scaled(e);
        if a < b {
            e -= 1;
        } else if a >= &b * &ten {
            e += 1;
        } else {
            break;
        }
    }
    let shift = sig as i64 - 1 - e;
    let (a, b) = if shift >= 0 {
        (&n * num::pow(ten.clone(), shift as usize), d.clone())
    } else {
        (n.clone(), &d * num::pow(ten.clone(), (-shift) as usize))
    };
    let mut m: BigInt = (&a * 2 + &b) / (&b * 2);
    if m >= num::pow(ten.clone(), sig) {
        m /= &ten;
        e += 1;
    }
    let digits = m.to_string();
    let (head, tail) = digits.split_at(1);
    if tail.is_empty() {
        format!("{sign}{head}e{e}")
    } else {
        format!("{sign}{head}.{tail}e{e}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{simulate, MdpEnv};
    use crate::planners::pe;
    use crate::policy::Policy;
    use crate::rng::seeded;

    fn r(s: &str) -> BigRational {
        parse_decimal(s).unwrap()
    }

    #[test]
    fn codec_shapes() {
        let c = make_codec(4, 2).unwrap();
        assert_eq!(c.depth(), 2);
        assert_eq!((0..4).map(|a| c.encode(a)).collect::<Vec<_>>(), vec![vec![0, 0], vec![0, 1], vec![1, 0], vec![1, 1]]);
        let c = make_codec(5, 2).unwrap();
        assert_eq!((c.depth(), c.n_codes()), (3, 8));
        assert_eq!((0..8).filter(|&i| c.decode_index(i) == 4).count(), 4);
        let c = make_codec(1, 2).unwrap();
        assert_eq!(c.depth(), 1);
        assert_eq!((c.decode(&[0]), c.decode(&[1])), (0, 0));
        assert_eq!(make_codec(3, 1), Err(Error::BadBase(1)));
        assert_eq!(make_codec(9, 3).unwrap().depth(), 2);
    }

    #[test]
    fn restricted_sets() {
        let c = make_codec(5, 2).unwrap();
        assert_eq!(c.restricted(&[]), vec![0, 1, 2, 3, 4]);
        assert_eq!(c.restricted(&[1]), vec![4]);
        assert_eq!(c.restricted(&[0, 1]), vec![2, 3]);
    }

    #[test]
    fn augmented_state_counts() {
        let mut rng = seeded(1);
        let m2 = FiniteMdp::random(3, 2, 0.9, &mut rng).unwrap();
        assert_eq!(sequentialize_markov(&m2, &make_codec(2, 2).unwrap()).unwrap().mdp.n_states(), 3);
        let m4 = FiniteMdp::random(3, 4, 0.9, &mut rng).unwrap();
        assert_eq!(sequentialize_markov(&m4, &make_codec(4, 2).unwrap()).unwrap().mdp.n_states(), 9);
    }

    #[test]
    fn lambda_power_is_exact() {
        for d in 1..6 {
            let sd = SeqDiscount { gamma: 0.9, depth: d };
            assert_eq!(sd.lambda_pow(d), 0.9);
            assert!((sd.lambda().powi(d as i32) - 0.9).abs() < 1e-12);
        }
    }

    #[test]
    fn depth_one_is_relabeling() {
        let mut rng = seeded(2);
        let m = FiniteMdp::random(3, 2, 0.8, &mut rng).unwrap();
        let env = MdpEnv::new(m.clone(), 0);
        let seq = sequentialize(env.clone(), make_codec(2, 2).unwrap()).unwrap();
        let p = Policy::uniform(3, 2);
        let a = simulate(&env, &p, 50, 4).unwrap();
        let b = simulate(&seq, &p, 50, 4).unwrap();
        assert_eq!(a, b);
        assert!(check_q_relationship(&m, &make_codec(2, 2).unwrap(), 1e-9).unwrap().holds);
    }

    #[test]
    fn history_transform_round_trip() {
        let mut rng = seeded(3);
        let m = FiniteMdp::random(3, 5, 0.9, &mut rng).unwrap();
        let env = MdpEnv::new(m, 1);
        let h = simulate(&env, &Policy::uniform(3, 5), 30, 8).unwrap();
        let seq = sequentialize(env, make_codec(5, 2).unwrap()).unwrap();
        let tau = seq.transform_history(&h);
        assert_eq!(tau.n_steps(), 90);
        let (back, pending) = seq.inner_history(&tau);
        assert_eq!(back, h);
        assert!(pending.is_empty());
        // Intermediate percepts repeat the last observation with zero reward.
        let mid = tau.steps()[4].1;
        assert_eq!(mid, Percept::new(h.steps()[0].1.observation, 0.0));
    }

    #[test]
    fn q_relationship_on_four_actions() {
        let mut rng = seeded(4);
        for _ in 0..5 {
            let m = FiniteMdp::random(5, 4, 0.9, &mut rng).unwrap();
            let r = check_q_relationship(&m, &make_codec(4, 2).unwrap(), 1e-8).unwrap();
            assert!(r.holds, "{r:?}");
        }
        let m = FiniteMdp::random(4, 5, 0.8, &mut rng).unwrap();
        assert!(check_q_relationship(&m, &make_codec(5, 2).unwrap(), 1e-8).unwrap().holds);
    }

    #[test]
    fn induced_policy_values_scale_by_lambda() {
        let mut rng = seeded(5);
        let m = FiniteMdp::random(4, 4, 0.9, &mut rng).unwrap();
        let seq = sequentialize_markov(&m, &make_codec(4, 2).unwrap()).unwrap();
        let sp: Vec<Vec<f64>> = (0..seq.mdp.n_states()).map(|_| crate::mdp::random_distribution(2, &mut rng)).collect();
        let vbar = pe(&seq.mdp, &sp, 1e-13).unwrap();
        let pol = seq.induced_policy(&sp, 4);
        let v = pe(&m, &pol, 1e-13).unwrap();
        for o in 0..4 {
            assert!((vbar[seq.state(o, &[])] - seq.discount.lambda_pow(1) * v[o]).abs() < 1e-9);
        }
    }

    #[test]
    fn bound_reference_values() {
        let (e, g) = (r("0.1"), r("0.9"));
        assert_eq!(esa_bound(&e, &g, 2).unwrap(), BigRational::from_integer(400_000_000.into()));
        assert_eq!(esa_bound(&e, &g, 4).unwrap(), BigRational::from_integer(160_000_000_000_000_000u64.into()));
        assert_eq!(binarized_esa_bound(&e, &g, 4).unwrap(), BigRational::from_integer(360_000_000_000u64.into()));
        assert_eq!(exact_decimal(0.1).unwrap(), e);
        assert_eq!(format_sci(&esa_bound(&e, &g, 4).unwrap(), 3), "1.60e17");
        assert_eq!(format_sci(&r("0.000123456"), 3), "1.23e-4");
        assert_eq!(format_sci(&r("9.996"), 3), "1.00e1");
    }

    #[test]
    fn ceiling_cases() {
        // δ = 0.1: ⌈0.1 + log2 3⌉ = 2, ⌈0.1 + log2 4⌉ = 3, ⌈0.5 + log2 3⌉ = 3 since log2 3 ≈ 1.585.
        assert_eq!(ceil_delta_plus_log2(&r("0.1"), 3), 2);
        assert_eq!(ceil_delta_plus_log2(&r("0.1"), 4), 3);
        assert_eq!(ceil_delta_plus_log2(&r("0.5"), 3), 3);
        assert_eq!(ceil_delta_plus_log2(&r("0.4"), 3), 2);
    }
}
