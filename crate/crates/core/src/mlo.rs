//! Multi-layer orthogonal NMTF: after the first layer `X ≈ U₁W₁V₁ᵀ`, each
//! component matrix `P_i` is peeled off the core under `W_i − W_{i+1} = P_i`
//! and the remainder is re-expressed as `W_i ≈ U_{i+1} W_{i+1} V_{i+1}ᵀ`.

use nalgebra::DMatrix;
use ndarray::{Array2, Zip};
use pathfinding::kuhn_munkres::kuhn_munkres;
use pathfinding::matrix::Matrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{AsccError, Result};
use crate::factorization::{
    frobenius_sq, iterate, multiplicative_step, Damping, onmtf_first_layer, orthogonality_residual,
    random_factor, Convergence, FactorInit, NonNegMatrix, SolverConfig, TriFactorLayer,
};
use crate::scattering::SarImage;

/// Relative tolerance on the Frobenius norm of the entries clamped away in
/// `W_i − P`.
pub const VIOLATION_TOL: f64 = 1e-6;

pub const DEFAULT_RANK: usize = 16;

/// An r×r non-negative component matrix `P_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct ComponentMatrix {
    pub label: String,
    pub data: Array2<f64>,
    /// Shift added during preparation to make the pooled values non-negative.
    pub offset: f64,
}

impl ComponentMatrix {
    pub fn new(label: impl Into<String>, data: Array2<f64>) -> Result<Self> {
        let nn = NonNegMatrix::new(data)?;
        Ok(ComponentMatrix {
            label: label.into(),
            data: nn.into_inner(),
            offset: 0.0,
        })
    }

    pub fn zeros(label: impl Into<String>, r: usize) -> Self {
        ComponentMatrix {
            label: label.into(),
            data: Array2::zeros((r, r)),
            offset: 0.0,
        }
    }

    pub fn rank(&self) -> usize {
        self.data.nrows()
    }
}

/// Row weights that average `len` samples down (or up) to `r` equal bins;
/// a sample straddling two bins contributes to each by its overlap.
fn pooling_weights(len: usize, r: usize) -> Array2<f64> {
    let width = len as f64 / r as f64;
    let mut a = Array2::zeros((r, len));
    for i in 0..r {
        let (lo, hi) = (i as f64 * width, (i + 1) as f64 * width);
        let first = lo.floor() as usize;
        let last = (hi.ceil() as usize).min(len);
        for j in first..last {
            let overlap = hi.min((j + 1) as f64) - lo.max(j as f64);
            if overlap > 0.0 {
                a[(i, j)] = overlap / width;
            }
        }
    }
    a
}

/// Area-weighted average pooling of a real matrix to r×r.
pub fn block_pool(x: &Array2<f64>, r: usize) -> Result<Array2<f64>> {
    let (m, n) = x.dim();
    if r == 0 {
        return Err(AsccError::invalid("rank must be >= 1"));
    }
    if m == 0 || n == 0 {
        return Err(AsccError::invalid("cannot pool an empty matrix"));
    }
    if r > m && r > n {
        return Err(AsccError::invalid(format!(
            "rank {r} exceeds both input dimensions {m}x{n}"
        )));
    }
    if (m, n) == (r, r) {
        return Ok(x.clone());
    }
    Ok(pooling_weights(m, r).dot(x).dot(&pooling_weights(n, r).t()))
}

/// Pools a real matrix to r×r and min-shifts it non-negative.
pub fn prepare_component(label: impl Into<String>, x: &Array2<f64>, r: usize) -> Result<ComponentMatrix> {
    if x.iter().any(|v| !v.is_finite()) {
        return Err(AsccError::invalid("component contains non-finite values"));
    }
    let mut pooled = block_pool(x, r)?;
    let min = pooled.iter().copied().fold(f64::INFINITY, f64::min);
    let offset = if min < 0.0 { -min } else { 0.0 };
    if offset > 0.0 {
        pooled.mapv_inplace(|v| (v + offset).max(0.0));
    }
    Ok(ComponentMatrix {
        label: label.into(),
        data: pooled,
        offset,
    })
}

/// Magnitude of a component image, pooled to r×r.
pub fn prepare_component_image(label: impl Into<String>, image: &SarImage, r: usize) -> Result<ComponentMatrix> {
    prepare_component(label, &image.magnitude(), r)
}

/// One constrained layer `W_i ≈ U_{i+1} W_{i+1} V_{i+1}ᵀ`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstrainedLayer {
    pub u: Array2<f64>,
    pub v: Array2<f64>,
    /// `W_{i+1} = clamp(W_i − P_i, 0)`.
    pub w_next: Array2<f64>,
    pub convergence: Convergence,
    /// `‖V_{i+1}ᵀV_{i+1} − I‖_F`, the constrained factor.
    pub orth_v: f64,
    /// `‖U_{i+1}ᵀU_{i+1} − I‖_F`, reported only.
    pub orth_u: f64,
    /// Frobenius norm of the negative part clamped out of `W_i − P_i`.
    pub violation_norm: f64,
}

fn constrained_objective(wi: &Array2<f64>, u: &Array2<f64>, b: &Array2<f64>, v: &Array2<f64>) -> f64 {
    0.5 * frobenius_sq(&(wi - &u.dot(b).dot(&v.t())))
}

/// Column values sorted descending, scaled to unit norm.
fn column_profile(col: ndarray::ArrayView1<f64>) -> Vec<f64> {
    let mut p = col.to_vec();
    p.sort_by(|a, b| b.total_cmp(a));
    let norm = p.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > 0.0 {
        p.iter_mut().for_each(|v| *v /= norm);
    }
    p
}

/// Permutation `V` pairing column j of `W_i` with the column k of `W_{i+1}`
/// whose sorted profile is closest (minimum-cost assignment).
fn matched_permutation(wi: &Array2<f64>, b: &Array2<f64>) -> Array2<f64> {
    let r = wi.ncols();
    let pw: Vec<_> = wi.columns().into_iter().map(column_profile).collect();
    let pb: Vec<_> = b.columns().into_iter().map(column_profile).collect();
    // Profiles are unit vectors, so squared distances lie in [0, 4].
    let weights = Matrix::from_fn(r, r, |(j, k)| {
        let d: f64 = pw[j].iter().zip(&pb[k]).map(|(x, y)| (x - y).powi(2)).sum();
        -(d * 1e12).round() as i64
    });
    let (_, assignment) = kuhn_munkres(&weights);
    let mut v = Array2::zeros((r, r));
    for (j, &k) in assignment.iter().enumerate() {
        v[(j, k)] = 1.0;
    }
    v
}

/// Least-squares `U` for `W_i V ≈ U B`, floored slightly above zero so the
/// multiplicative updates can still move every entry.
fn least_squares_u(wi: &Array2<f64>, b: &Array2<f64>, v: &Array2<f64>) -> Array2<f64> {
    let r = b.nrows();
    let target = wi.dot(v);
    let bm = DMatrix::from_fn(r, r, |i, j| b[(i, j)]);
    let u = match bm.pseudo_inverse(1e-12) {
        Ok(pinv) => {
            let pinv = Array2::from_shape_fn((r, r), |(i, j)| pinv[(i, j)]);
            target.dot(&pinv)
        }
        Err(_) => Array2::zeros((r, r)),
    };
    let scale = u.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let floor = if scale > 0.0 { 1e-9 * scale } else { 1e-9 };
    u.mapv(|v| v.max(floor))
}

fn validate_pair(wi: &NonNegMatrix, p: &ComponentMatrix) -> Result<()> {
    let (r, c) = wi.dim();
    if r != c {
        return Err(AsccError::shape("square core", format!("{r}x{c}")));
    }
    if p.data.dim() != (r, r) {
        let (a, b) = p.data.dim();
        return Err(AsccError::shape(format!("{r}x{r} component"), format!("{a}x{b}")));
    }
    if p.data.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(AsccError::invalid("component entries must be finite and non-negative"));
    }
    Ok(())
}

/// Fits one constrained layer. `W_{i+1}` is fixed to `clamp(W_i − P, 0)`;
/// then, per sweep,
///
/// ```text
/// V ← V ⊙ (W_iᵀ U W_{i+1}) / (V W_{i+1}ᵀ Uᵀ W_i V + ε)
/// U ← U ⊙ (W_i V W_{i+1}ᵀ) / (U W_{i+1} W_{i+1}ᵀ + ε)
/// ```
pub fn onmtf_constrained_layer(
    wi: &NonNegMatrix,
    p: &ComponentMatrix,
    cfg: &SolverConfig,
) -> Result<ConstrainedLayer> {
    cfg.validate()?;
    validate_pair(wi, p)?;
    let wi = wi.data();
    let r = wi.nrows();

    let diff = wi - &p.data;
    let violation_norm = diff.iter().map(|v| v.min(0.0).powi(2)).sum::<f64>().sqrt();
    let tolerance = VIOLATION_TOL * frobenius_sq(wi).sqrt();
    if violation_norm > tolerance {
        return Err(AsccError::ConstraintInfeasible {
            violation_norm,
            tolerance,
        });
    }
    let b = diff.mapv(|v| v.max(0.0));

    let (mut u, mut v) = match cfg.init {
        FactorInit::Uniform => {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            let u = random_factor(&mut rng, r, r);
            let v = random_factor(&mut rng, r, r);
            (u, v)
        }
        FactorInit::Structured => {
            let v = matched_permutation(wi, &b);
            (least_squares_u(wi, &b, &v), v)
        }
    };

    let bbt = b.dot(&b.t());
    let initial = constrained_objective(wi, &u, &b, &v);
    let mut damping = Damping::new(cfg, initial);
    let mut convergence = iterate(cfg, initial, 0.5 * frobenius_sq(wi), || {
        let step = &damping.cfg;
        let wtu = wi.t().dot(&u);
        let numer = wtu.dot(&b);
        let denom = v.dot(&b.t().dot(&wtu.t()).dot(&v));
        multiplicative_step(&mut v, &numer, &denom, step);

        let numer = wi.dot(&v).dot(&b.t());
        let denom = u.dot(&bbt);
        multiplicative_step(&mut u, &numer, &denom, step);

        let obj = constrained_objective(wi, &u, &b, &v);
        damping.observe(obj);
        obj
    });
    convergence.damped_at = damping.damped_at;

    Ok(ConstrainedLayer {
        orth_v: orthogonality_residual(&v),
        orth_u: orthogonality_residual(&u),
        u,
        v,
        w_next: b,
        convergence,
        violation_norm,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct MloDecomposition {
    pub first: TriFactorLayer,
    pub layers: Vec<ConstrainedLayer>,
    pub components: Vec<ComponentMatrix>,
    /// `‖W₁ − (Σ_i P_i + W_{k+1})‖_F`.
    pub telescoping_residual: f64,
}

impl MloDecomposition {
    /// `W₁, W₂, …, W_{k+1}`.
    pub fn cores(&self) -> Vec<&Array2<f64>> {
        std::iter::once(&self.first.w)
            .chain(self.layers.iter().map(|l| &l.w_next))
            .collect()
    }
}

/// Chain of constrained layers starting from the core `W₁`.
///
/// Components are peeled in the given order. A failing layer is reported
/// with its 1-based index.
pub fn constrained_chain(
    w1: &NonNegMatrix,
    components: &[ComponentMatrix],
    cfg: &SolverConfig,
) -> Result<(Vec<ConstrainedLayer>, f64)> {
    let mut layers: Vec<ConstrainedLayer> = Vec::with_capacity(components.len());
    let mut current = w1.clone();
    for (i, p) in components.iter().enumerate() {
        let layer = onmtf_constrained_layer(&current, p, cfg).map_err(|e| AsccError::Layer {
            layer: i + 1,
            source: Box::new(e),
        })?;
        current = NonNegMatrix::new(layer.w_next.clone())?;
        layers.push(layer);
    }
    let residual = telescoping_residual(w1.data(), components, current.data());
    Ok((layers, residual))
}

/// `‖W₁ − (Σ_i P_i + W_{k+1})‖_F`, summing the components in order.
pub fn telescoping_residual(w1: &Array2<f64>, components: &[ComponentMatrix], w_last: &Array2<f64>) -> f64 {
    let mut total = Array2::<f64>::zeros(w1.dim());
    for p in components {
        total += &p.data;
    }
    total += w_last;
    frobenius_sq(&(w1 - &total)).sqrt()
}

/// First-layer ONMTF of `X` followed by the constrained chain over
/// `components`.
pub fn mlo_decompose(
    x: &NonNegMatrix,
    components: &[ComponentMatrix],
    r: usize,
    cfg: &SolverConfig,
) -> Result<MloDecomposition> {
    for (i, p) in components.iter().enumerate() {
        if p.data.dim() != (r, r) {
            let (a, b) = p.data.dim();
            return Err(AsccError::Layer {
                layer: i + 1,
                source: Box::new(AsccError::shape(format!("{r}x{r}"), format!("{a}x{b}"))),
            });
        }
    }
    let first = onmtf_first_layer(x, r, cfg)?;
    let w1 = NonNegMatrix::new(first.w.clone())?;
    let (layers, telescoping_residual) = constrained_chain(&w1, components, cfg)?;
    Ok(MloDecomposition {
        first,
        layers,
        components: components.to_vec(),
        telescoping_residual,
    })
}

/// `Σ_ij (X − U W Vᵀ)_ij²`.
pub fn decomposition_error(
    x: &Array2<f64>,
    u: &Array2<f64>,
    w: &Array2<f64>,
    v: &Array2<f64>,
) -> Result<f64> {
    let (m, n) = x.dim();
    let (um, ur) = u.dim();
    let (wr, wc) = w.dim();
    let (vn, vr) = v.dim();
    if um != m || vn != n || ur != wr || vr != wc {
        return Err(AsccError::shape(
            format!("U {m}xa, W axb, V {n}xb"),
            format!("U {um}x{ur}, W {wr}x{wc}, V {vn}x{vr}"),
        ));
    }
    let model = u.dot(w).dot(&v.t());
    let mut acc = 0.0;
    Zip::from(x).and(&model).for_each(|&a, &b| acc += (a - b) * (a - b));
    Ok(acc)
}
