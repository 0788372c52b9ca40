mod common;

use ascc_core::clustering::*;
use ascc_core::scattering::{form_image, synthesize_scene, AscParameterSet, RadarGrid, SPEED_OF_LIGHT};
use common::rng;
use proptest::prelude::*;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

const ALPHAS: [f64; 5] = [-1.0, -0.5, 0.0, 0.5, 1.0];

fn random_asc(rng: &mut ChaCha8Rng) -> AscParameterSet {
    AscParameterSet {
        amplitude: rng.random_range(0.5..5.0),
        x: rng.random_range(-1.0..1.0),
        y: rng.random_range(-1.0..1.0),
        alpha: ALPHAS[rng.random_range(0..5)],
        length: if rng.random_bool(0.5) { 0.0 } else { rng.random_range(0.1..0.8) },
        phi_bar: 0.0,
        gamma: 0.0,
    }
}

/// Random scatterer whose (alpha, L) is a table row.
fn table_asc(rng: &mut ChaCha8Rng) -> AscParameterSet {
    let (alpha, distributed) = GeometricType::ALL[rng.random_range(0..8)].signature();
    AscParameterSet {
        alpha,
        length: if distributed { rng.random_range(0.1..0.8) } else { 0.0 },
        ..random_asc(rng)
    }
}

/// Z-scores with population variance; constant columns dropped.
fn zscores(ascs: &[AscParameterSet]) -> Vec<Vec<f64>> {
    let n = ascs.len() as f64;
    let raw: Vec<[f64; 7]> = ascs.iter().map(|a| [a.amplitude, a.x, a.y, a.alpha, a.length, a.phi_bar, a.gamma]).collect();
    let mut out = vec![Vec::new(); ascs.len()];
    for d in 0..7 {
        let mean = raw.iter().map(|r| r[d]).sum::<f64>() / n;
        let var = raw.iter().map(|r| (r[d] - mean).powi(2)).sum::<f64>() / n;
        if var > 0.0 {
            for (o, r) in out.iter_mut().zip(&raw) {
                o.push((r[d] - mean) / var.sqrt());
            }
        }
    }
    out
}

fn inertia(points: &[Vec<f64>], labels: &[usize], k: usize) -> f64 {
    let mut total = 0.0;
    for c in 0..k {
        let members: Vec<&Vec<f64>> = points.iter().zip(labels).filter(|(_, &l)| l == c).map(|(p, _)| p).collect();
        if members.is_empty() {
            continue;
        }
        let dim = members[0].len();
        for d in 0..dim {
            let mean = members.iter().map(|p| p[d]).sum::<f64>() / members.len() as f64;
            total += members.iter().map(|p| (p[d] - mean).powi(2)).sum::<f64>();
        }
    }
    total
}

/// Global minimum over every split into two non-empty groups.
fn exhaustive_two_partition(points: &[Vec<f64>]) -> (f64, Vec<usize>) {
    let n = points.len();
    let mut best = (f64::INFINITY, Vec::new());
    // Point 0 stays in group 0, so each split is visited once.
    for mask in 1u32..(1 << (n - 1)) {
        let labels: Vec<usize> = (0..n).map(|i| if i == 0 { 0 } else { ((mask >> (i - 1)) & 1) as usize }).collect();
        let v = inertia(points, &labels, 2);
        if v < best.0 {
            best = (v, labels);
        }
    }
    best
}

fn same_partition(a: &[usize], b: &[usize]) -> bool {
    a.iter().zip(b).all(|(x, y)| (x == y) == (a[0] == b[0]))
}

#[test]
fn kmeans_attains_exhaustive_minimum() {
    let mut rng = rng(41);
    for trial in 0..50 {
        let n = rng.random_range(4..=12);
        let ascs: Vec<_> = (0..n).map(|_| random_asc(&mut rng)).collect();
        let p = kmeans_cluster(&ascs, 2, trial).unwrap();
        let points = zscores(&ascs);
        let (best, _) = exhaustive_two_partition(&points);
        let got = inertia(&points, &p.labels(n), 2);
        assert!(got <= best * (1.0 + 1e-9) + 1e-12, "trial {trial}: {got} vs {best}");
        assert!((p.inertia.unwrap() - got).abs() <= 1e-9 * got.max(1.0));
    }
}

#[test]
fn planted_blobs_recovered() {
    let mut rng = rng(42);
    let centres = [AscParameterSet::point(1.0, -1.0, -1.0, 0.0), AscParameterSet::point(4.0, 1.0, 1.0, 1.0)];
    let mut ascs = Vec::new();
    let mut truth = Vec::new();
    for i in 0..20 {
        let c = centres[i % 2];
        let mut a = c;
        a.amplitude += rng.random_range(-0.01..0.01);
        a.x += rng.random_range(-0.01..0.01);
        a.y += rng.random_range(-0.01..0.01);
        ascs.push(a);
        truth.push(i % 2);
    }
    let p = kmeans_cluster(&ascs, 2, 1).unwrap();
    let labels = p.labels(ascs.len());
    assert!(same_partition(&labels, &truth));
    let (_, oracle) = exhaustive_two_partition(&zscores(&ascs[..12]));
    assert!(same_partition(&oracle, &truth[..12]));
}

#[test]
fn component_images_sum_to_scene_image() {
    let grid = RadarGrid::uniform(10.0e9, 1.0e9, 32, 0.1, 32, SPEED_OF_LIGHT).unwrap();
    let mut rng = rng(43);
    let ascs: Vec<_> = (0..9).map(|_| table_asc(&mut rng)).collect();
    let whole = form_image(&synthesize_scene(&ascs, &grid).unwrap()).unwrap();
    for p in [kmeans_cluster(&ascs, 3, 0).unwrap(), table_cluster(&ascs).unwrap()] {
        let p = reconstruct_components(p, &grid).unwrap();
        let mut sum = whole.data.mapv(|_| num_complex::Complex64::new(0.0, 0.0));
        for c in &p.components {
            sum += &c.image.as_ref().unwrap().data;
        }
        let scale = whole.data.iter().map(|v| v.norm()).fold(0.0, f64::max);
        let err = sum.iter().zip(whole.data.iter()).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        assert!(err <= 1e-10 * scale);
    }
}

#[test]
fn single_trihedral_component_is_its_response() {
    let grid = RadarGrid::uniform(10.0e9, 1.0e9, 16, 0.1, 16, SPEED_OF_LIGHT).unwrap();
    let t = AscParameterSet::point(2.0, 0.3, -0.2, 1.0);
    let p = reconstruct_components(table_cluster(&[t]).unwrap(), &grid).unwrap();
    assert_eq!(p.components.len(), 1);
    assert_eq!(p.components[0].label, GeometricType::Trihedral.label());
    let direct = form_image(&synthesize_scene(&[t], &grid).unwrap()).unwrap();
    assert_eq!(p.components[0].image.as_ref().unwrap().data, direct.data);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn both_modes_partition_the_input(seed in any::<u64>(), n in 1usize..15, k in 1usize..6) {
        let mut rng = rng(seed);
        let ascs: Vec<_> = (0..n).map(|_| table_asc(&mut rng)).collect();
        let mut parts = vec![table_cluster(&ascs).unwrap()];
        if k <= n {
            parts.push(kmeans_cluster(&ascs, k, seed).unwrap());
        }
        for p in parts {
            let mut seen: Vec<usize> = p.components.iter().flat_map(|c| c.members.clone()).collect();
            seen.sort();
            prop_assert_eq!(seen, (0..n).collect::<Vec<_>>());
            if p.mode == ClusterMode::Table {
                prop_assert!(p.components.len() <= 8);
                prop_assert!(p.components.iter().all(|c| !c.members.is_empty()));
            }
        }
    }
}
