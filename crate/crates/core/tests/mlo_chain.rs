mod common;

use ascc_core::factorization::{frobenius_sq, NonNegMatrix, SolverConfig};
use ascc_core::mlo::*;
use ascc_core::AsccError;
use common::*;
use ndarray::Array2;
use rand::Rng;

#[test]
fn null_component_keeps_core() {
    let mut rng = rng(3);
    let wi = dyadic_positive(&mut rng, 6, 1.0);
    let layer = onmtf_constrained_layer(
        &NonNegMatrix::new(wi.clone()).unwrap(),
        &ComponentMatrix::zeros("null", 6),
        &SolverConfig::default(),
    )
    .unwrap();
    assert_eq!(layer.w_next, wi);
    assert!(layer.convergence.final_objective() <= 1e-6 * frobenius_sq(&wi));
}

#[test]
fn full_peel_leaves_constant_objective() {
    let mut rng = rng(4);
    let wi = dyadic_positive(&mut rng, 5, 1.0);
    let p = ComponentMatrix::new("all", wi.clone()).unwrap();
    let layer =
        onmtf_constrained_layer(&NonNegMatrix::new(wi.clone()).unwrap(), &p, &SolverConfig::default()).unwrap();
    assert!(layer.w_next.iter().all(|&v| v == 0.0));
    let half = 0.5 * frobenius_sq(&wi);
    for &obj in &layer.convergence.objective_trace {
        assert_eq!(obj, half);
    }
}

#[test]
fn planted_layer_recovered() {
    for (seed, r) in [(1u64, 4usize), (2, 8), (3, 16)] {
        let mut rng = rng(seed);
        let w_next = dyadic_positive(&mut rng, r, 1.0);
        let (wi, p) = planted_layer(&mut rng, &w_next);
        let layer = onmtf_constrained_layer(
            &NonNegMatrix::new(wi.clone()).unwrap(),
            &ComponentMatrix::new("p", p).unwrap(),
            &SolverConfig::with_seed(seed),
        )
        .unwrap();
        assert_eq!(layer.w_next, w_next);
        assert!(layer.convergence.final_objective() <= 1e-4 * frobenius_sq(&wi));
        assert!(layer.orth_v <= 0.05);
    }
}

#[test]
fn empty_chain_is_first_layer_only() {
    let x = NonNegMatrix::new(planted_first_layer(5, 12, 10, 4)).unwrap();
    let d = mlo_decompose(&x, &[], 4, &SolverConfig::default()).unwrap();
    assert!(d.layers.is_empty());
    assert_eq!(d.telescoping_residual, 0.0);
}

#[test]
fn null_chain_repeats_core() {
    let x = NonNegMatrix::new(planted_first_layer(6, 12, 10, 4)).unwrap();
    let comps: Vec<_> = (0..3).map(|i| ComponentMatrix::zeros(format!("z{i}"), 4)).collect();
    let d = mlo_decompose(&x, &comps, 4, &SolverConfig::default()).unwrap();
    let cores = d.cores();
    assert_eq!(cores.len(), 4);
    for c in &cores[1..] {
        assert_eq!(*c, cores[0]);
    }
    let scale = frobenius_sq(cores[0]);
    for l in &d.layers {
        assert!(l.convergence.final_objective() <= 1e-6 * scale);
    }
    assert_eq!(d.telescoping_residual, 0.0);
}

#[test]
fn planted_chain_telescopes_exactly() {
    let (w1, comps) = planted_chain(11, 6, 3);
    let (layers, residual) =
        constrained_chain(&NonNegMatrix::new(w1.clone()).unwrap(), &comps, &SolverConfig::default()).unwrap();
    assert_eq!(residual, 0.0);
    let mut wi = w1;
    for l in &layers {
        assert!(l.convergence.final_objective() <= 1e-4 * frobenius_sq(&wi));
        wi = l.w_next.clone();
    }
}

#[test]
fn earlier_layers_independent_of_later_ones() {
    let (w1, comps) = planted_chain(12, 5, 3);
    let w1 = NonNegMatrix::new(w1).unwrap();
    let cfg = SolverConfig::default();
    let (full, _) = constrained_chain(&w1, &comps, &cfg).unwrap();
    let (short, _) = constrained_chain(&w1, &comps[..1], &cfg).unwrap();
    assert_eq!(full[0], short[0]);
}

#[test]
fn infeasible_chain_reports_layer() {
    let (w1, mut comps) = planted_chain(13, 4, 3);
    comps[2].data *= 1e3;
    let err = constrained_chain(&NonNegMatrix::new(w1).unwrap(), &comps, &SolverConfig::default()).unwrap_err();
    match err {
        AsccError::Layer { layer, source } => {
            assert_eq!(layer, 3);
            assert!(matches!(*source, AsccError::ConstraintInfeasible { .. }));
        }
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn pooling_matches_block_average() {
    let mut rng = rng(21);
    let x = Array2::from_shape_simple_fn((64, 64), || rng.random::<f64>());
    let p = prepare_component("rand", &x, 16).unwrap();
    for i in 0..16 {
        for j in 0..16 {
            let mut acc = 0.0;
            for a in 0..4 {
                for b in 0..4 {
                    acc += x[(4 * i + a, 4 * j + b)];
                }
            }
            assert!((p.data[(i, j)] - acc / 16.0).abs() <= 1e-12);
        }
    }
}

#[test]
fn fractional_pooling_preserves_mean() {
    let mut rng = rng(22);
    let x = Array2::from_shape_simple_fn((10, 7), || rng.random::<f64>());
    let p = block_pool(&x, 3).unwrap();
    assert!((p.mean().unwrap() - x.mean().unwrap()).abs() < 1e-12);
}

#[test]
fn decomposition_error_matches_summation() {
    let mut rng = rng(23);
    let mut mat = |r, c| Array2::from_shape_simple_fn((r, c), || rng.random::<f64>());
    let (x, u, w, v) = (mat(8, 8), mat(8, 8), mat(8, 8), mat(8, 8));
    let fast = decomposition_error(&x, &u, &w, &v).unwrap();
    let mut slow = 0.0;
    for i in 0..8 {
        for j in 0..8 {
            let mut m = 0.0;
            for a in 0..8 {
                for b in 0..8 {
                    m += u[(i, a)] * w[(a, b)] * v[(j, b)];
                }
            }
            slow += (x[(i, j)] - m).powi(2);
        }
    }
    assert!((fast - slow).abs() <= 1e-12 * slow);
    let exact = u.dot(&w).dot(&v.t());
    assert!(decomposition_error(&exact, &u, &w, &v).unwrap() <= 1e-24);
}
