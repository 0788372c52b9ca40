mod common;

use ascc_core::factorization::*;
use common::{planted_first_layer, rng};
use ndarray::Array2;
use proptest::prelude::*;
use rand::Rng;

fn random(seed: u64, m: usize, n: usize, lo: f64) -> Array2<f64> {
    let mut rng = rng(seed);
    Array2::from_shape_simple_fn((m, n), || rng.random_range(lo..1.0))
}

#[test]
fn nmf_trace_matches_independent_objective() {
    let x = random(1, 20, 15, 0.0);
    let nx = NonNegMatrix::new(x.clone()).unwrap();
    // Re-running with a smaller budget reproduces a prefix of the trace.
    for iters in [1, 5, 40] {
        let cfg = SolverConfig { max_iters: iters, rel_tol: 1e-300, ..SolverConfig::with_seed(3) };
        let res = nmf_factorize(&nx, 5, &cfg).unwrap();
        let wh = res.w.dot(&res.h);
        let direct = 0.5 * x.iter().zip(wh.iter()).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
        assert_eq!(res.convergence.objective_trace.len(), iters + 1);
        assert!((res.convergence.final_objective() - direct).abs() <= 1e-12 * direct);
    }
}

#[test]
fn onmtf_diagonal_is_exact() {
    let x = Array2::from_diag(&ndarray::arr1(&[3.0, 1.5, 2.0, 0.5]));
    let layer = onmtf_first_layer(&NonNegMatrix::new(x.clone()).unwrap(), 4, &SolverConfig::default()).unwrap();
    assert!(layer.convergence.final_objective() <= 1e-6 * frobenius_sq(&x));
}

#[test]
fn onmtf_planted_factors_orthonormal() {
    let x = planted_first_layer(9, 30, 24, 6);
    let layer = onmtf_first_layer(&NonNegMatrix::new(x.clone()).unwrap(), 6, &SolverConfig::with_seed(2)).unwrap();
    let direct = |a: &Array2<f64>| {
        let g = a.t().dot(a) - Array2::<f64>::eye(a.ncols());
        g.iter().map(|v| v * v).sum::<f64>().sqrt()
    };
    assert!((direct(&layer.u) - layer.orth_u).abs() <= 1e-12);
    assert!(layer.orth_u <= 0.05 && layer.orth_v <= 0.05);
    assert!(layer.convergence.final_objective() <= 1e-4 * frobenius_sq(&x));
}

#[test]
fn make_nonneg_examples() {
    let x = ndarray::array![[-3.0, 0.0], [1.0, 2.0]];
    let nn = make_nonneg(&x).unwrap();
    assert_eq!(nn.offset(), 3.0);
    assert_eq!(*nn.data(), ndarray::array![[0.0, 3.0], [4.0, 5.0]]);
    let pos = random(2, 4, 4, 0.0);
    let nn = make_nonneg(&pos).unwrap();
    assert_eq!((nn.offset(), nn.data()), (0.0, &pos));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn shifted_minimum_is_zero(seed in any::<u64>(), lo in -5.0f64..1.0) {
        let x = random(seed, 5, 4, lo);
        let nn = make_nonneg(&x).unwrap();
        let min_in = x.iter().cloned().fold(f64::INFINITY, f64::min);
        let min_out = nn.data().iter().cloned().fold(f64::INFINITY, f64::min);
        prop_assert!(nn.data().iter().all(|&v| v >= 0.0));
        if min_in < 0.0 {
            prop_assert_eq!(min_out, 0.0);
            prop_assert_eq!(nn.offset(), -min_in);
        } else {
            prop_assert_eq!(nn.offset(), 0.0);
        }
    }

    #[test]
    fn solvers_keep_factors_nonnegative(seed in any::<u64>(), r in 1usize..5) {
        let x = NonNegMatrix::new(random(seed, 10, 8, 0.0)).unwrap();
        let cfg = SolverConfig { max_iters: 200, ..SolverConfig::with_seed(seed) };
        let nmf = nmf_factorize(&x, r, &cfg).unwrap();
        prop_assert!(nmf.w.iter().chain(nmf.h.iter()).all(|&v| v >= 0.0 && v.is_finite()));
        let tri = onmtf_first_layer(&x, r, &cfg).unwrap();
        prop_assert!(tri.u.iter().chain(tri.w.iter()).chain(tri.v.iter()).all(|&v| v >= 0.0 && v.is_finite()));
        prop_assert!(tri.convergence.objective_trace.iter().all(|v| v.is_finite()));
    }
}
