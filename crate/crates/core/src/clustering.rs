//! Grouping extracted scatterers into ASC components (ASCCs), either by
//! K-means over standardized parameter vectors or by the geometric-type
//! table keyed on frequency dependence and length.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{AsccError, Result};
use crate::scattering::{form_image, synthesize_scene, AscParameterSet, RadarGrid, SarImage};

/// Lengths at or below this are treated as `L = 0`, meters.
pub const LENGTH_EPS: f64 = 1e-6;
pub const DEFAULT_K_ASC: usize = 6;
pub const KMEANS_MAX_ITERS: usize = 300;
pub const KMEANS_RESTARTS: usize = 20;

const CANONICAL_ALPHAS: [f64; 5] = [-1.0, -0.5, 0.0, 0.5, 1.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeometricType {
    Dihedral,
    Trihedral,
    Cylinder,
    TopHat,
    Sphere,
    EdgeBroadside,
    EdgeDiffraction,
    CornerDiffraction,
}

impl GeometricType {
    pub const ALL: [GeometricType; 8] = [
        GeometricType::Dihedral,
        GeometricType::Trihedral,
        GeometricType::Cylinder,
        GeometricType::TopHat,
        GeometricType::Sphere,
        GeometricType::EdgeBroadside,
        GeometricType::EdgeDiffraction,
        GeometricType::CornerDiffraction,
    ];

    /// Table row: canonical frequency exponent and whether the scatterer is
    /// distributed (`L > 0`).
    pub fn signature(self) -> (f64, bool) {
        use GeometricType::*;
        match self {
            Dihedral => (1.0, true),
            Trihedral => (1.0, false),
            Cylinder => (0.5, true),
            TopHat => (0.5, false),
            Sphere => (0.0, false),
            EdgeBroadside => (0.0, true),
            EdgeDiffraction => (-0.5, true),
            CornerDiffraction => (-1.0, false),
        }
    }

    pub fn label(self) -> &'static str {
        use GeometricType::*;
        match self {
            Dihedral => "dihedral",
            Trihedral => "trihedral",
            Cylinder => "cylinder",
            TopHat => "top_hat",
            Sphere => "sphere",
            EdgeBroadside => "edge_broadside",
            EdgeDiffraction => "edge_diffraction",
            CornerDiffraction => "corner_diffraction",
        }
    }
}

impl fmt::Display for GeometricType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Nearest canonical exponent; ties go to the smaller value.
pub fn snap_alpha(alpha: f64) -> f64 {
    let mut best = CANONICAL_ALPHAS[0];
    for &a in &CANONICAL_ALPHAS[1..] {
        if (alpha - a).abs() < (alpha - best).abs() {
            best = a;
        }
    }
    best
}

pub fn geometric_classify(alpha: f64, length: f64) -> Result<GeometricType> {
    if !alpha.is_finite() || !length.is_finite() {
        return Err(AsccError::invalid("alpha and L must be finite"));
    }
    let snapped = snap_alpha(alpha);
    let distributed = length > LENGTH_EPS;
    GeometricType::ALL
        .into_iter()
        .find(|t| t.signature() == (snapped, distributed))
        .ok_or(AsccError::Unclassifiable {
            alpha,
            length,
            index: None,
        })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClusterMode {
    Kmeans,
    Table,
}

impl fmt::Display for ClusterMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ClusterMode::Kmeans => "kmeans",
            ClusterMode::Table => "table",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AsccComponent {
    pub label: String,
    /// Indices into the clustered input list, ascending.
    pub members: Vec<usize>,
    pub member_params: Vec<AscParameterSet>,
    /// K-means: mean of the standardized vectors (kept dimensions only).
    /// Table: mean raw parameter vector `[A, x, y, alpha, L, phi_bar, gamma]`.
    pub centroid: Vec<f64>,
    pub image: Option<SarImage>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AsccPartition {
    pub mode: ClusterMode,
    pub k: usize,
    pub components: Vec<AsccComponent>,
    /// Final within-cluster sum of squares (K-means only).
    pub inertia: Option<f64>,
    /// Inertia after seeding and after every Lloyd step of the winning restart.
    pub inertia_trace: Vec<f64>,
}

impl AsccPartition {
    /// Component index of every input scatterer.
    pub fn labels(&self, n: usize) -> Vec<usize> {
        let mut out = vec![usize::MAX; n];
        for (c, comp) in self.components.iter().enumerate() {
            for &m in &comp.members {
                out[m] = c;
            }
        }
        out
    }
}

/// Parameter vectors centered and scaled to unit (population) variance;
/// constant dimensions are dropped. Returns the vectors and kept dimensions.
pub fn standardize(ascs: &[AscParameterSet]) -> (Vec<Vec<f64>>, Vec<usize>) {
    let n = ascs.len() as f64;
    let raw: Vec<[f64; 7]> = ascs.iter().map(|a| a.to_vector()).collect();
    let mut kept = Vec::new();
    let mut stats = Vec::new();
    for d in 0..7 {
        let mean = raw.iter().map(|v| v[d]).sum::<f64>() / n;
        let var = raw.iter().map(|v| (v[d] - mean).powi(2)).sum::<f64>() / n;
        let std = var.sqrt();
        if std > 1e-12 * mean.abs().max(1e-300) && std > 0.0 {
            kept.push(d);
            stats.push((mean, std));
        }
    }
    let vectors = raw
        .iter()
        .map(|v| {
            kept.iter()
                .zip(&stats)
                .map(|(&d, &(mean, std))| (v[d] - mean) / std)
                .collect()
        })
        .collect();
    (vectors, kept)
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(p: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, centroid) in centroids.iter().enumerate() {
        let d = sq_dist(p, centroid);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn kmeans_pp_seed(points: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut centroids = vec![points[rng.random_range(0..n)].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                acc += d;
                if acc > target && d > 0.0 {
                    pick = i;
                    break;
                }
            }
            pick
        } else {
            rng.random_range(0..n)
        };
        centroids.push(points[next].clone());
        for (i, p) in points.iter().enumerate() {
            d2[i] = d2[i].min(sq_dist(p, &centroids[centroids.len() - 1]));
        }
    }
    centroids
}

/// Result of a K-means run over plain vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct KMeansFit {
    pub assignment: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    /// Inertia after seeding, after every Lloyd step and after every
    /// transfer sweep.
    pub inertia_trace: Vec<f64>,
}

impl KMeansFit {
    pub fn inertia(&self) -> f64 {
        *self.inertia_trace.last().unwrap_or(&f64::NAN)
    }
}

fn lloyd(points: &[Vec<f64>], mut centroids: Vec<Vec<f64>>, max_iters: usize) -> KMeansFit {
    let n = points.len();
    let k = centroids.len();
    let dim = points.first().map_or(0, Vec::len);
    let mut assignment: Vec<usize> = points.iter().map(|p| nearest(p, &centroids).0).collect();
    let inertia = |assignment: &[usize], centroids: &[Vec<f64>]| -> f64 {
        points
            .iter()
            .zip(assignment)
            .map(|(p, &c)| sq_dist(p, &centroids[c]))
            .sum()
    };
    let mut trace = vec![inertia(&assignment, &centroids)];

    for _ in 0..max_iters {
        // Update step with empty-cluster repair.
        loop {
            let mut counts = vec![0usize; k];
            for &c in &assignment {
                counts[c] += 1;
            }
            let Some(empty) = counts.iter().position(|&c| c == 0) else {
                break;
            };
            let mut far = (usize::MAX, -1.0);
            for (i, p) in points.iter().enumerate() {
                if counts[assignment[i]] < 2 {
                    continue;
                }
                let d = sq_dist(p, &centroids[assignment[i]]);
                if d > far.1 {
                    far = (i, d);
                }
            }
            if far.0 == usize::MAX {
                break;
            }
            assignment[far.0] = empty;
            centroids[empty] = points[far.0].clone();
        }
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &c) in points.iter().zip(&assignment) {
            counts[c] += 1;
            for (s, v) in sums[c].iter_mut().zip(p) {
                *s += v;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                centroids[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            }
        }

        let next: Vec<usize> = (0..n)
            .map(|i| {
                // Keep the current assignment unless strictly improved.
                let (c, d) = nearest(&points[i], &centroids);
                let cur = sq_dist(&points[i], &centroids[assignment[i]]);
                if d < cur {
                    c
                } else {
                    assignment[i]
                }
            })
            .collect();
        let changed = next != assignment;
        assignment = next;
        trace.push(inertia(&assignment, &centroids));
        if !changed {
            break;
        }
    }
    KMeansFit {
        assignment,
        centroids,
        inertia_trace: trace,
    }
}

fn means(points: &[Vec<f64>], assignment: &[usize], k: usize) -> (Vec<Vec<f64>>, Vec<usize>) {
    let dim = points.first().map_or(0, Vec::len);
    let mut sums = vec![vec![0.0; dim]; k];
    let mut counts = vec![0usize; k];
    for (p, &c) in points.iter().zip(assignment) {
        counts[c] += 1;
        for (s, v) in sums[c].iter_mut().zip(p) {
            *s += v;
        }
    }
    for (s, &n) in sums.iter_mut().zip(&counts) {
        if n > 0 {
            s.iter_mut().for_each(|v| *v /= n as f64);
        }
    }
    (sums, counts)
}

/// Hartigan single-point transfers: move a point to another cluster whenever
/// the exact inertia change, centroid shifts included, is negative. Lloyd
/// fixed points can still admit such moves.
fn hartigan(points: &[Vec<f64>], mut fit: KMeansFit) -> KMeansFit {
    let k = fit.centroids.len();
    let (mut centroids, mut counts) = means(points, &fit.assignment, k);
    loop {
        let mut moved = false;
        for (i, p) in points.iter().enumerate() {
            let a = fit.assignment[i];
            if counts[a] < 2 {
                continue;
            }
            let na = counts[a] as f64;
            let removal = na / (na - 1.0) * sq_dist(p, &centroids[a]);
            let mut best = (a, removal);
            for b in (0..k).filter(|&b| b != a) {
                let nb = counts[b] as f64;
                let cost = nb / (nb + 1.0) * sq_dist(p, &centroids[b]);
                if cost < best.1 {
                    best = (b, cost);
                }
            }
            if best.0 != a && best.1 < removal * (1.0 - 1e-12) {
                fit.assignment[i] = best.0;
                (centroids, counts) = means(points, &fit.assignment, k);
                moved = true;
            }
        }
        if !moved {
            break;
        }
        let inertia = points
            .iter()
            .zip(&fit.assignment)
            .map(|(p, &c)| sq_dist(p, &centroids[c]))
            .sum();
        fit.inertia_trace.push(inertia);
    }
    fit.centroids = centroids;
    fit
}

/// Lloyd's algorithm from k-means++ seeds followed by Hartigan transfers,
/// best of `restarts` runs (lowest final inertia, earliest on ties).
/// Requires `1 <= k <= points.len()`.
pub fn kmeans_points(points: &[Vec<f64>], k: usize, seed: u64, restarts: usize) -> KMeansFit {
    assert!(k >= 1 && k <= points.len(), "k must lie in 1..=points.len()");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<KMeansFit> = None;
    for _ in 0..restarts.max(1) {
        let seeds = kmeans_pp_seed(points, k, &mut rng);
        let run = hartigan(points, lloyd(points, seeds, KMEANS_MAX_ITERS));
        if best.as_ref().is_none_or(|b| run.inertia() < b.inertia()) {
            best = Some(run);
        }
    }
    best.expect("at least one restart")
}

/// K-means with k-means++ seeding over standardized parameter vectors.
///
/// Runs [`KMEANS_RESTARTS`] seeded restarts (each capped at
/// [`KMEANS_MAX_ITERS`] Lloyd iterations) and keeps the lowest inertia.
pub fn kmeans_cluster(ascs: &[AscParameterSet], k: usize, seed: u64) -> Result<AsccPartition> {
    kmeans_cluster_with(ascs, k, seed, KMEANS_RESTARTS)
}

pub fn kmeans_cluster_with(
    ascs: &[AscParameterSet],
    k: usize,
    seed: u64,
    restarts: usize,
) -> Result<AsccPartition> {
    if k == 0 {
        return Err(AsccError::invalid("K_asc must be >= 1"));
    }
    if ascs.len() < k {
        return Err(AsccError::invalid(format!(
            "cannot form {k} clusters from {} scatterers",
            ascs.len()
        )));
    }
    for a in ascs {
        a.validate()?;
    }
    let (points, _) = standardize(ascs);
    let run = kmeans_points(&points, k, seed, restarts);

    let components = (0..k)
        .map(|c| {
            let members: Vec<usize> = (0..ascs.len()).filter(|&i| run.assignment[i] == c).collect();
            AsccComponent {
                label: c.to_string(),
                member_params: members.iter().map(|&i| ascs[i]).collect(),
                members,
                centroid: run.centroids[c].clone(),
                image: None,
            }
        })
        .collect();

    Ok(AsccPartition {
        mode: ClusterMode::Kmeans,
        k,
        components,
        inertia: run.inertia_trace.last().copied(),
        inertia_trace: run.inertia_trace,
    })
}

/// Groups scatterers by geometric type; empty types are omitted and the
/// remaining components follow the table order.
pub fn table_cluster(ascs: &[AscParameterSet]) -> Result<AsccPartition> {
    let mut groups: Vec<Vec<usize>> = vec![Vec::new(); GeometricType::ALL.len()];
    for (i, a) in ascs.iter().enumerate() {
        let t = geometric_classify(a.alpha, a.length).map_err(|e| match e {
            AsccError::Unclassifiable { alpha, length, .. } => AsccError::Unclassifiable {
                alpha,
                length,
                index: Some(i),
            },
            other => other,
        })?;
        let row = GeometricType::ALL.iter().position(|&g| g == t).unwrap();
        groups[row].push(i);
    }

    let components: Vec<AsccComponent> = GeometricType::ALL
        .iter()
        .zip(groups)
        .filter(|(_, members)| !members.is_empty())
        .map(|(t, members)| {
            let mut centroid = vec![0.0; 7];
            for &i in &members {
                for (c, v) in centroid.iter_mut().zip(ascs[i].to_vector()) {
                    *c += v;
                }
            }
            centroid.iter_mut().for_each(|c| *c /= members.len() as f64);
            AsccComponent {
                label: t.label().to_string(),
                member_params: members.iter().map(|&i| ascs[i]).collect(),
                members,
                centroid,
                image: None,
            }
        })
        .collect();

    Ok(AsccPartition {
        mode: ClusterMode::Table,
        k: components.len(),
        components,
        inertia: None,
        inertia_trace: Vec::new(),
    })
}

/// Fills every component's image with the formed image of its members' scene.
pub fn reconstruct_components(mut p: AsccPartition, grid: &RadarGrid) -> Result<AsccPartition> {
    for comp in &mut p.components {
        let ph = synthesize_scene(&comp.member_params, grid)?;
        comp.image = Some(form_image(&ph)?);
    }
    Ok(p)
}
