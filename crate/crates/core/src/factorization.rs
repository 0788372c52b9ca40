//! Lee–Seung NMF and the first-layer orthogonal non-negative matrix
//! tri-factorization `X ≈ U W Vᵀ` with multiplicative updates on the
//! Stiefel manifold.

use ndarray::{Array2, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::clustering::{kmeans_points, KMEANS_RESTARTS};
use crate::error::{AsccError, Result};

/// Entrywise non-negative matrix plus the shift applied to make it so.
#[derive(Debug, Clone, PartialEq)]
pub struct NonNegMatrix {
    data: Array2<f64>,
    offset: f64,
}

impl NonNegMatrix {
    /// Wraps an already non-negative matrix (offset 0).
    pub fn new(data: Array2<f64>) -> Result<Self> {
        if data.iter().any(|v| !v.is_finite()) {
            return Err(AsccError::invalid("matrix has non-finite entries"));
        }
        if data.iter().any(|&v| v < 0.0) {
            return Err(AsccError::invalid("matrix has negative entries"));
        }
        Ok(Self { data, offset: 0.0 })
    }

    pub fn data(&self) -> &Array2<f64> {
        &self.data
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.data
    }

    pub fn offset(&self) -> f64 {
        self.offset
    }

    pub fn dim(&self) -> (usize, usize) {
        self.data.dim()
    }
}

/// Shifts `x` by `-min(x)` when it has negative entries.
pub fn make_nonneg(x: &Array2<f64>) -> Result<NonNegMatrix> {
    if x.iter().any(|v| !v.is_finite()) {
        return Err(AsccError::invalid("matrix has non-finite entries"));
    }
    let min = x.iter().copied().fold(f64::INFINITY, f64::min);
    if min < 0.0 {
        Ok(NonNegMatrix {
            data: x.mapv(|v| v - min),
            offset: -min,
        })
    } else {
        Ok(NonNegMatrix {
            data: x.clone(),
            offset: 0.0,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub max_iters: usize,
    pub rel_tol: f64,
    pub epsilon_guard: f64,
    pub seed: u64,
    /// Exponent applied to the update ratio; the derivation uses 1.
    pub learning_rate: f64,
    #[serde(default)]
    pub init: FactorInit,
}

/// Starting point of the tri-factorization solvers.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FactorInit {
    /// First layer: normalized k-means indicators of the rows (U) and
    /// columns (V) of X with `W = UᵀXV`. Constrained layers: V is the
    /// permutation matching sorted column profiles of `W_i` and `W_{i+1}`,
    /// U its non-negative least-squares completion.
    #[default]
    Structured,
    /// Every factor entry drawn from uniform(0, 1].
    Uniform,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            max_iters: 5000,
            rel_tol: 1e-8,
            epsilon_guard: 1e-12,
            seed: 0,
            learning_rate: 1.0,
            init: FactorInit::Structured,
        }
    }
}

impl SolverConfig {
    pub fn with_seed(seed: u64) -> Self {
        Self {
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_iters < 1 {
            return Err(AsccError::invalid("max_iters must be >= 1"));
        }
        if !(self.rel_tol > 0.0) {
            return Err(AsccError::invalid("rel_tol must be > 0"));
        }
        if !(self.epsilon_guard > 0.0) {
            return Err(AsccError::invalid("epsilon_guard must be > 0"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
            return Err(AsccError::invalid("learning rate must lie in (0, 1]"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolverTermination {
    RelTol,
    MaxIters,
}

/// Stopping bookkeeping shared by every multiplicative solver.
#[derive(Debug, Clone, PartialEq)]
pub struct Convergence {
    /// Objective at initialization and after every iteration.
    pub objective_trace: Vec<f64>,
    pub iters: usize,
    pub termination: SolverTermination,
    /// Relative objective change of the last iteration.
    pub final_rel_change: f64,
    /// Iteration whose objective increase switched the exponent to
    /// [`DAMPED_RATE`], if any.
    pub damped_at: Option<usize>,
}

impl Convergence {
    /// Ran out of iterations while still changing by more than `100·rel_tol`.
    pub fn failed(&self, rel_tol: f64) -> bool {
        self.termination == SolverTermination::MaxIters && self.final_rel_change > 100.0 * rel_tol
    }

    pub fn final_objective(&self) -> f64 {
        *self.objective_trace.last().unwrap_or(&f64::NAN)
    }
}

/// Objective change scaled by `scale`, the largest objective seen so far.
/// Scaling by the current value instead would never settle on instances
/// whose objective tends to zero.
pub(crate) fn relative_change(prev: f64, cur: f64, scale: f64) -> f64 {
    let diff = (prev - cur).abs();
    if diff == 0.0 {
        0.0
    } else {
        diff / scale.max(prev.abs()).max(cur.abs())
    }
}

/// Drives `step` until the scaled objective change drops below `rel_tol`
/// or `max_iters` is reached. `step` performs one sweep and returns the new
/// objective. `data_energy` is `½‖X‖²`; the scale never drops below machine
/// epsilon times it, so objectives at rounding level count as settled.
pub(crate) fn iterate(
    cfg: &SolverConfig,
    initial: f64,
    data_energy: f64,
    mut step: impl FnMut() -> f64,
) -> Convergence {
    let mut trace = Vec::with_capacity(cfg.max_iters.min(1 << 16) + 1);
    trace.push(initial);
    let mut prev = initial;
    let mut scale = initial.abs().max(f64::EPSILON * data_energy);
    let mut rel = f64::INFINITY;
    for it in 1..=cfg.max_iters {
        let cur = step();
        trace.push(cur);
        rel = relative_change(prev, cur, scale);
        scale = scale.max(cur.abs());
        prev = cur;
        if rel < cfg.rel_tol {
            return Convergence {
                objective_trace: trace,
                iters: it,
                termination: SolverTermination::RelTol,
                final_rel_change: rel,
                damped_at: None,
            };
        }
    }
    Convergence {
        objective_trace: trace,
        iters: cfg.max_iters,
        termination: SolverTermination::MaxIters,
        final_rel_change: rel,
        damped_at: None,
    }
}

/// Exponent used once an orthogonal solver's objective has gone up.
pub const DAMPED_RATE: f64 = 0.5;

/// Step exponent of the orthogonal solvers. With `η = 1` the coupled
/// updates can fall into a period-2 cycle; the first objective increase
/// beyond rounding drops `η` to [`DAMPED_RATE`] for the rest of the run.
pub(crate) struct Damping {
    pub cfg: SolverConfig,
    prev: f64,
    iter: usize,
    pub damped_at: Option<usize>,
}

impl Damping {
    pub fn new(cfg: &SolverConfig, initial: f64) -> Self {
        Damping {
            cfg: *cfg,
            prev: initial,
            iter: 0,
            damped_at: None,
        }
    }

    pub fn observe(&mut self, objective: f64) {
        self.iter += 1;
        if objective > self.prev * (1.0 + 1e-12) && self.cfg.learning_rate > DAMPED_RATE {
            self.cfg.learning_rate = DAMPED_RATE;
            self.damped_at = Some(self.iter);
        }
        self.prev = objective;
    }
}

/// `factor ⊙ (numer / (denom + ε))^η`, in place.
pub(crate) fn multiplicative_step(
    factor: &mut Array2<f64>,
    numer: &Array2<f64>,
    denom: &Array2<f64>,
    cfg: &SolverConfig,
) {
    let (eps, eta) = (cfg.epsilon_guard, cfg.learning_rate);
    Zip::from(factor).and(numer).and(denom).for_each(|f, &n, &d| {
        let ratio = n.max(0.0) / (d.max(0.0) + eps);
        *f *= if eta == 1.0 { ratio } else { ratio.powf(eta) };
    });
}

pub(crate) fn random_factor(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    // random::<f64>() is in [0, 1); flip it onto (0, 1].
    Array2::from_shape_simple_fn((rows, cols), || 1.0 - rng.random::<f64>())
}

pub fn frobenius_sq(a: &Array2<f64>) -> f64 {
    a.iter().map(|v| v * v).sum()
}

/// `‖AᵀA − I‖_F`.
pub fn orthogonality_residual(a: &Array2<f64>) -> f64 {
    let g = a.t().dot(a);
    g.indexed_iter()
        .map(|((i, j), &v)| {
            let d = if i == j { v - 1.0 } else { v };
            d * d
        })
        .sum::<f64>()
        .sqrt()
}

fn check_rank(dim: (usize, usize), r: usize) -> Result<()> {
    let (m, n) = dim;
    if r == 0 || r > m.min(n) {
        return Err(AsccError::invalid(format!(
            "rank {r} out of range for a {m}x{n} matrix"
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct NmfResult {
    pub w: Array2<f64>,
    pub h: Array2<f64>,
    pub convergence: Convergence,
}

/// `½‖X − WH‖_F²`.
pub fn nmf_objective(x: &Array2<f64>, w: &Array2<f64>, h: &Array2<f64>) -> f64 {
    0.5 * frobenius_sq(&(x - &w.dot(h)))
}

/// Lee–Seung multiplicative updates for `X ≈ W H` (H first, then W).
pub fn nmf_factorize(x: &NonNegMatrix, r: usize, cfg: &SolverConfig) -> Result<NmfResult> {
    cfg.validate()?;
    check_rank(x.dim(), r)?;
    let x = x.data();
    let (m, n) = x.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut w = random_factor(&mut rng, m, r);
    let mut h = random_factor(&mut rng, r, n);

    let initial = nmf_objective(x, &w, &h);
    let convergence = iterate(cfg, initial, 0.5 * frobenius_sq(x), || {
        let numer = w.t().dot(x);
        let denom = w.t().dot(&w).dot(&h);
        multiplicative_step(&mut h, &numer, &denom, cfg);
        let numer = x.dot(&h.t());
        let denom = w.dot(&h.dot(&h.t()));
        multiplicative_step(&mut w, &numer, &denom, cfg);
        nmf_objective(x, &w, &h)
    });
    Ok(NmfResult { w, h, convergence })
}

/// One `(U, W, V)` tri-factorization layer with diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct TriFactorLayer {
    pub u: Array2<f64>,
    pub w: Array2<f64>,
    pub v: Array2<f64>,
    pub convergence: Convergence,
    /// `‖UᵀU − I‖_F`.
    pub orth_u: f64,
    /// `‖VᵀV − I‖_F`.
    pub orth_v: f64,
}

/// Column-normalized cluster indicator matrix of k-means over `lines`.
fn indicator_factor<'a>(
    lines: impl Iterator<Item = ndarray::ArrayView1<'a, f64>>,
    r: usize,
    seed: u64,
) -> Array2<f64> {
    let points: Vec<Vec<f64>> = lines.map(|l| l.to_vec()).collect();
    let fit = kmeans_points(&points, r, seed, KMEANS_RESTARTS);
    let mut ind = Array2::<f64>::zeros((points.len(), r));
    for (i, &c) in fit.assignment.iter().enumerate() {
        ind[(i, c)] = 1.0;
    }
    for mut col in ind.columns_mut() {
        let count = col.sum();
        if count > 0.0 {
            col /= count.sqrt();
        }
    }
    ind
}

/// `½‖X − U W Vᵀ‖_F²`.
pub fn tri_objective(x: &Array2<f64>, u: &Array2<f64>, w: &Array2<f64>, v: &Array2<f64>) -> f64 {
    0.5 * frobenius_sq(&(x - &u.dot(w).dot(&v.t())))
}

/// Numerator/denominator pairs of the three first-layer updates, evaluated
/// at the given state: `[(U num, U den), (V num, V den), (W num, W den)]`.
pub fn onmtf_update_terms(
    x: &Array2<f64>,
    u: &Array2<f64>,
    w: &Array2<f64>,
    v: &Array2<f64>,
) -> [(Array2<f64>, Array2<f64>); 3] {
    let xv = x.dot(v);
    let xtu = x.t().dot(u);
    let utxv = u.t().dot(&xv);
    [
        (xv.dot(&w.t()), u.dot(&w.dot(&v.t().dot(&xtu)))),
        (xtu.dot(w), v.dot(&w.t().dot(&utxv))),
        (utxv.clone(), u.t().dot(u).dot(w).dot(&v.t().dot(v))),
    ]
}

/// First-layer ONMTF:
///
/// ```text
/// U ← U ⊙ (X V Wᵀ) / (U W Vᵀ Xᵀ U + ε)
/// V ← V ⊙ (Xᵀ U W) / (V Wᵀ Uᵀ X V + ε)
/// W ← W ⊙ (Uᵀ X V) / (Uᵀ U W Vᵀ V + ε)
/// ```
///
/// applied in that order each sweep, starting from `cfg.init`, with the
/// exponent damped as described on [`DAMPED_RATE`].
pub fn onmtf_first_layer(x: &NonNegMatrix, r: usize, cfg: &SolverConfig) -> Result<TriFactorLayer> {
    cfg.validate()?;
    check_rank(x.dim(), r)?;
    let x = x.data();
    let (m, n) = x.dim();
    let (mut u, mut w, mut v) = match cfg.init {
        FactorInit::Uniform => {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            let u = random_factor(&mut rng, m, r);
            let w = random_factor(&mut rng, r, r);
            let v = random_factor(&mut rng, n, r);
            (u, w, v)
        }
        FactorInit::Structured => {
            let u = indicator_factor(x.rows().into_iter(), r, cfg.seed);
            let v = indicator_factor(x.columns().into_iter(), r, cfg.seed.wrapping_add(1));
            let w = u.t().dot(x).dot(&v);
            (u, w, v)
        }
    };

    let initial = tri_objective(x, &u, &w, &v);
    let mut damping = Damping::new(cfg, initial);
    let mut convergence = iterate(cfg, initial, 0.5 * frobenius_sq(x), || {
        let step = &damping.cfg;
        let xv = x.dot(&v);
        let numer = xv.dot(&w.t());
        let denom = u.dot(&w.dot(&v.t().dot(&x.t().dot(&u))));
        multiplicative_step(&mut u, &numer, &denom, step);

        let xtu = x.t().dot(&u);
        let numer = xtu.dot(&w);
        let denom = v.dot(&w.t().dot(&xtu.t().dot(&v)));
        multiplicative_step(&mut v, &numer, &denom, step);

        let numer = u.t().dot(x).dot(&v);
        let denom = u.t().dot(&u).dot(&w).dot(&v.t().dot(&v));
        multiplicative_step(&mut w, &numer, &denom, step);

        let obj = tri_objective(x, &u, &w, &v);
        damping.observe(obj);
        obj
    });
    convergence.damped_at = damping.damped_at;

    Ok(TriFactorLayer {
        orth_u: orthogonality_residual(&u),
        orth_v: orthogonality_residual(&v),
        u,
        w,
        v,
        convergence,
    })
}
