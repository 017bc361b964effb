//! Property checks shared by the property suite and the acceptance runner.
#![allow(dead_code)]

use proptest::prelude::*;
use proptest::test_runner::{Config, TestCaseError, TestRunner};
use rand::Rng;

use grl::abstraction::{build_surrogate, Abstraction, Dispersion, DispersionSource, TabularAbstraction};
use grl::mdp::{random_distribution, FiniteMdp};
use grl::ordering::LabelStore;
use grl::planners::{stationary_distribution, vi_trace};
use grl::rng::seeded;
use grl::sequentialize::make_codec;

pub const CASES: u32 = 1000;

pub fn config() -> Config {
    Config { cases: CASES, failure_persistence: None, ..Config::default() }
}

fn random_labels<R: Rng>(n: usize, k: usize, rng: &mut R) -> TabularAbstraction {
    // Every block gets at least one member.
    let mut raw: Vec<usize> = (0..n).map(|x| if x < k { x } else { rng.gen_range(0..k) }).collect();
    for i in (1..n).rev() {
        raw.swap(i, rng.gen_range(0..=i));
    }
    TabularAbstraction::from_labels(&raw)
}

pub fn surrogate_strategy() -> impl Strategy<Value = (u64, usize, usize, usize)> {
    (any::<u64>(), 1usize..10, 1usize..4, 1usize..10)
}

pub fn surrogate_rows_stochastic((seed, ns, na, k): (u64, usize, usize, usize)) -> Result<(), TestCaseError> {
    let mut rng = seeded(seed);
    let m = FiniteMdp::random(ns, na, 0.9, &mut rng).map_err(|e| TestCaseError::fail(e.to_string()))?;
    let psi = random_labels(ns, k.min(ns), &mut rng);
    let b = Dispersion::random(&psi, na, &mut rng).map_err(|e| TestCaseError::fail(e.to_string()))?;
    let sur = build_surrogate(&m, &psi, &b, DispersionSource::Explicit).map_err(|e| TestCaseError::fail(e.to_string()))?;
    for s in 0..psi.n_states() {
        for a in 0..na {
            let row = sur.mdp.p(s, a);
            prop_assert!(row.iter().all(|&p| p >= 0.0));
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }
    Ok(())
}

pub fn codec_strategy() -> impl Strategy<Value = (usize, usize)> {
    (1usize..300, 2usize..6)
}

pub fn codec_round_trip((n, base): (usize, usize)) -> Result<(), TestCaseError> {
    let c = make_codec(n, base).map_err(|e| TestCaseError::fail(e.to_string()))?;
    prop_assert!(base.pow(c.depth() as u32) >= n);
    prop_assert!(c.depth() == 1 || base.pow(c.depth() as u32 - 1) < n);
    for a in 0..n {
        let code = c.encode(a);
        prop_assert_eq!(code.len(), c.depth());
        prop_assert!(code.iter().all(|&x| x < base));
        prop_assert_eq!(c.decode(&code), a);
        for i in 0..=code.len() {
            prop_assert!(c.restricted(&code[..i]).contains(&a));
        }
    }
    for i in 0..c.n_codes() {
        prop_assert!(c.decode(&c.code_of_index(i)) < n);
    }
    Ok(())
}

pub fn vi_strategy() -> impl Strategy<Value = (u64, usize, usize, f64)> {
    (any::<u64>(), 1usize..10, 1usize..4, 0.0f64..0.97)
}

pub fn vi_contracts((seed, ns, na, gamma): (u64, usize, usize, f64)) -> Result<(), TestCaseError> {
    let mut rng = seeded(seed);
    let m = FiniteMdp::random(ns, na, gamma, &mut rng).map_err(|e| TestCaseError::fail(e.to_string()))?;
    let trace = vi_trace(&m, 1e-10, 1_000_000).map_err(|e| TestCaseError::fail(e.to_string()))?;
    let sup = |u: &[f64], v: &[f64]| u.iter().zip(v).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    for w in trace.windows(3) {
        let (prev, cur) = (sup(&w[1], &w[0]), sup(&w[2], &w[1]));
        prop_assert!(cur <= gamma * prev + 1e-12, "step {} after {}", cur, prev);
    }
    Ok(())
}

pub fn stationary_strategy() -> impl Strategy<Value = (u64, usize, bool)> {
    (any::<u64>(), 1usize..15, any::<bool>())
}

pub fn stationary_fixed_point((seed, n, sparse): (u64, usize, bool)) -> Result<(), TestCaseError> {
    let mut rng = seeded(seed);
    let p: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            if sparse {
                // A cycle plus one random jump keeps the chain irreducible.
                let mut row = vec![0.0; n];
                let w: f64 = rng.gen_range(0.1..0.9);
                row[(i + 1) % n] += w;
                row[rng.gen_range(0..n)] += 1.0 - w;
                row
            } else {
                random_distribution(n, &mut rng)
            }
        })
        .collect();
    let rho = stationary_distribution(&p, 1e-14).map_err(|e| TestCaseError::fail(e.to_string()))?;
    prop_assert!((rho.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    let image: Vec<f64> = (0..n).map(|j| (0..n).map(|i| rho[i] * p[i][j]).sum()).collect();
    let err: f64 = image.iter().zip(&rho).map(|(a, b)| (a - b).abs()).sum();
    prop_assert!(err < 1e-9, "residual {}", err);
    Ok(())
}

pub fn label_strategy() -> impl Strategy<Value = (u64, usize, f64)> {
    (any::<u64>(), 1usize..12, 0.05f64..1.0)
}

pub fn labels_idempotent((seed, n, eps): (u64, usize, f64)) -> Result<(), TestCaseError> {
    let mut rng = seeded(seed);
    let pts: Vec<f64> = (0..n).map(|_| rng.gen::<f64>()).collect();
    let similar = |i: usize, j: usize| (pts[i] - pts[j]).abs() <= eps;
    let mut store = LabelStore::new();
    let first: Vec<usize> = (0..n).map(|i| store.label(i, similar)).collect();
    let mut order: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        order.swap(i, rng.gen_range(0..=i));
    }
    for &i in &order {
        prop_assert_eq!(store.label(i, |_, _| false), first[i]);
    }
    for l in 0..store.n_labels() {
        let m = store.members(l);
        for &a in m {
            for &b in m {
                prop_assert!(similar(a, b));
            }
        }
    }
    Ok(())
}

/// Runs one property over `CASES` generated inputs.
pub fn run<S: Strategy>(strategy: S, test: impl Fn(S::Value) -> Result<(), TestCaseError>) -> Result<(), String>
where
    S::Value: std::fmt::Debug,
{
    TestRunner::new(config()).run(&strategy, test).map_err(|e| e.to_string())
}
