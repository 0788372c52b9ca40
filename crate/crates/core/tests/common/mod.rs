#![allow(dead_code)]

pub mod ssim_ref;

use ascc_core::extraction::AscDictionary;
use ascc_core::mlo::ComponentMatrix;
use ascc_core::scattering::PhaseHistory;
use num_complex::Complex64;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn permutation(rng: &mut ChaCha8Rng, r: usize) -> Array2<f64> {
    let mut p: Vec<usize> = (0..r).collect();
    for i in (1..r).rev() {
        let j = rng.random_range(0..=i);
        p.swap(i, j);
    }
    let mut a = Array2::zeros((r, r));
    for (i, &j) in p.iter().enumerate() {
        a[(i, j)] = 1.0;
    }
    a
}

/// Column-normalized indicator of a random assignment of `rows` items to `r`
/// groups, every group non-empty.
pub fn cluster_indicator(rng: &mut ChaCha8Rng, rows: usize, r: usize) -> Array2<f64> {
    let mut labels: Vec<usize> = (0..rows)
        .map(|i| if i < r { i } else { rng.random_range(0..r) })
        .collect();
    for i in (1..rows).rev() {
        let j = rng.random_range(0..=i);
        labels.swap(i, j);
    }
    let mut a = Array2::<f64>::zeros((rows, r));
    for (i, &l) in labels.iter().enumerate() {
        a[(i, l)] = 1.0;
    }
    for mut c in a.columns_mut() {
        let s = c.sum().sqrt();
        c /= s;
    }
    a
}

/// `X = U* W* V*ᵀ` with column-disjoint orthonormal U*, V*.
pub fn planted_first_layer(seed: u64, m: usize, n: usize, r: usize) -> Array2<f64> {
    let mut rng = rng(seed);
    let u = cluster_indicator(&mut rng, m, r);
    let v = cluster_indicator(&mut rng, n, r);
    let w = Array2::from_shape_simple_fn((r, r), || 0.5 + rng.random::<f64>());
    u.dot(&w).dot(&v.t())
}

/// Random r×r matrix with dyadic entries k/1024 in [lo, 2·lo], so sums and
/// scalings by 2.5 stay exact in binary floating point.
pub fn dyadic_positive(rng: &mut ChaCha8Rng, r: usize, lo: f64) -> Array2<f64> {
    Array2::from_shape_simple_fn((r, r), || lo * (1.0 + rng.random_range(0..=1024) as f64 / 1024.0))
}

/// Planted constrained layer: returns `(W_i, P, W_{i+1}*)` with
/// `W_i = 2.5·Π₁ W_{i+1}* Π₂ᵀ` and `P = W_i − W_{i+1}*`.
pub fn planted_layer(rng: &mut ChaCha8Rng, w_next: &Array2<f64>) -> (Array2<f64>, Array2<f64>) {
    let r = w_next.nrows();
    let p1 = permutation(rng, r);
    let p2 = permutation(rng, r);
    let wi = p1.dot(w_next).dot(&p2.t()) * 2.5;
    let p = &wi - w_next;
    assert!(p.iter().all(|&v| v >= 0.0));
    (wi, p)
}

/// Composed planted chain of `k` layers; returns `(W₁, components)` whose
/// constrained layers are each planted instances.
pub fn planted_chain(seed: u64, r: usize, k: usize) -> (Array2<f64>, Vec<ComponentMatrix>) {
    let mut rng = rng(seed);
    let mut w = dyadic_positive(&mut rng, r, 1.0);
    let mut comps = Vec::with_capacity(k);
    for i in (0..k).rev() {
        let (wi, p) = planted_layer(&mut rng, &w);
        comps.push(ComponentMatrix::new(format!("c{i}"), p).unwrap());
        w = wi;
    }
    comps.reverse();
    (w, comps)
}

/// Up to `count` atoms whose positions are at least `min_steps` lattice steps
/// apart and whose pairwise coherence is at most 0.2.
pub fn planted_atoms(rng: &mut ChaCha8Rng, dict: &AscDictionary, count: usize, min_steps: usize) -> Vec<usize> {
    let mut chosen: Vec<usize> = Vec::new();
    let mut attempts = 0;
    while chosen.len() < count && attempts < 10_000 {
        attempts += 1;
        let k = rng.random_range(0..dict.len());
        let idx = dict.atoms()[k].index;
        let far = chosen.iter().all(|&c| {
            let o = dict.atoms()[c].index;
            idx[0].abs_diff(o[0]).max(idx[1].abs_diff(o[1])) >= min_steps
        });
        let incoherent = chosen.iter().all(|&c| {
            let ip: Complex64 = dict.vector(c).iter().zip(dict.vector(k)).map(|(a, b)| a.conj() * b).sum();
            ip.norm() <= 0.2
        });
        if far && incoherent {
            chosen.push(k);
        }
    }
    chosen
}

pub struct PlantedScene {
    pub atoms: Vec<usize>,
    pub coeffs: Vec<Complex64>,
    pub ph: PhaseHistory,
}

/// 1 to 5 separated atoms with coefficient magnitudes in [1, 5).
pub fn planted_scene(rng: &mut ChaCha8Rng, dict: &AscDictionary) -> PlantedScene {
    let count = rng.random_range(1..=5);
    let atoms = planted_atoms(rng, dict, count, 3);
    let coeffs: Vec<Complex64> = atoms
        .iter()
        .map(|_| Complex64::from_polar(rng.random_range(1.0..5.0), rng.random_range(0.0..std::f64::consts::TAU)))
        .collect();
    let mut ph = PhaseHistory::zeros(dict.grid().shape());
    for (&k, &c) in atoms.iter().zip(&coeffs) {
        ph.data += &dict.atom_phase_history(k, c).data;
    }
    PlantedScene { atoms, coeffs, ph }
}
