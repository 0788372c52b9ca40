//! ASC parameter estimation by orthogonal matching pursuit over a
//! discretized dictionary of unit-norm scatterer responses.

use std::collections::HashMap;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{AsccError, Result};
use crate::scattering::{evaluate_asc_response, AscParameterSet, PhaseHistory, RadarGrid};

/// Atoms whose raw response norm falls below this are dropped.
pub const MIN_ATOM_NORM: f64 = 1e-12;
pub const DEFAULT_MAX_SCATTERERS: usize = 20;
pub const DEFAULT_RESIDUAL_TOL: f64 = 1e-3;

/// Discretization of the parameter space; the dictionary is the Cartesian
/// product of all axes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DictionarySpec {
    pub x_positions: Vec<f64>,
    pub y_positions: Vec<f64>,
    pub alphas: Vec<f64>,
    pub lengths: Vec<f64>,
    pub phi_bars: Vec<f64>,
    pub gammas: Vec<f64>,
}

impl DictionarySpec {
    /// Symmetric position lattice `k · step` for `k in -half_count..=half_count`
    /// on both axes, with the given shape axes and `γ ∈ {0}`.
    pub fn regular(step: f64, half_count: usize, alphas: Vec<f64>, lengths: Vec<f64>) -> Self {
        let positions: Vec<f64> = (-(half_count as i64)..=half_count as i64)
            .map(|k| k as f64 * step)
            .collect();
        Self {
            x_positions: positions.clone(),
            y_positions: positions,
            alphas,
            lengths,
            phi_bars: vec![0.0],
            gammas: vec![0.0],
        }
    }

    /// 9×9 positions two resolution cells apart, the five canonical
    /// frequency exponents and `L ∈ {0, 0.6 m}`: 810 atoms on the desk grid.
    pub fn desk_default(grid: &RadarGrid) -> Self {
        let step = 2.0 * grid.range_cell();
        Self::regular(
            step,
            4,
            vec![-1.0, -0.5, 0.0, 0.5, 1.0],
            vec![0.0, 0.6],
        )
    }

    fn axes(&self) -> [(&'static str, &[f64]); 6] {
        [
            ("x_positions", &self.x_positions),
            ("y_positions", &self.y_positions),
            ("alphas", &self.alphas),
            ("lengths", &self.lengths),
            ("phi_bars", &self.phi_bars),
            ("gammas", &self.gammas),
        ]
    }

    pub fn validate(&self) -> Result<()> {
        for (name, axis) in self.axes() {
            if axis.is_empty() {
                return Err(AsccError::invalid(format!("dictionary axis {name} is empty")));
            }
            if axis.iter().any(|v| !v.is_finite()) {
                return Err(AsccError::invalid(format!(
                    "dictionary axis {name} has non-finite values"
                )));
            }
            for (i, a) in axis.iter().enumerate() {
                if axis[..i].contains(a) {
                    return Err(AsccError::invalid(format!(
                        "dictionary axis {name} repeats value {a}"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn cardinality(&self) -> usize {
        self.axes().iter().map(|(_, a)| a.len()).product()
    }
}

/// Indices of an atom along each dictionary axis
/// (`x, y, alpha, L, phi_bar, gamma`).
pub type AtomIndex = [usize; 6];

#[derive(Debug, Clone, PartialEq)]
pub struct AscAtom {
    /// Parameters with `A = 1`.
    pub params: AscParameterSet,
    pub index: AtomIndex,
    /// Norm of the raw (unnormalized) response the atom was scaled by.
    pub raw_norm: f64,
}

/// Unit-norm vectorized responses, one per admissible parameter point.
#[derive(Debug, Clone)]
pub struct AscDictionary {
    grid: RadarGrid,
    spec: DictionarySpec,
    atoms: Vec<AscAtom>,
    /// Row-major `atoms.len() × signal_len` storage.
    vectors: Vec<Complex64>,
    signal_len: usize,
}

impl AscDictionary {
    pub fn grid(&self) -> &RadarGrid {
        &self.grid
    }

    pub fn spec(&self) -> &DictionarySpec {
        &self.spec
    }

    pub fn atoms(&self) -> &[AscAtom] {
        &self.atoms
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn signal_len(&self) -> usize {
        self.signal_len
    }

    /// Unit-norm vector of atom `k` (row-major over the grid).
    pub fn vector(&self, k: usize) -> &[Complex64] {
        &self.vectors[k * self.signal_len..(k + 1) * self.signal_len]
    }

    /// Position of the atom with the given axis indices, if it survived the
    /// norm filter.
    pub fn find(&self, index: &AtomIndex) -> Option<usize> {
        self.atoms.iter().position(|a| &a.index == index)
    }

    /// Phase history equal to `coefficient ×` atom `k`.
    pub fn atom_phase_history(&self, k: usize, coefficient: Complex64) -> PhaseHistory {
        let mut ph = PhaseHistory::zeros(self.grid.shape());
        for (dst, src) in ph.data.iter_mut().zip(self.vector(k)) {
            *dst = src * coefficient;
        }
        ph
    }
}

pub fn build_dictionary(grid: &RadarGrid, spec: &DictionarySpec) -> Result<AscDictionary> {
    grid.validate()?;
    spec.validate()?;
    let (m, n) = grid.shape();
    let signal_len = m * n;
    let mut atoms = Vec::with_capacity(spec.cardinality());
    let mut vectors = Vec::with_capacity(spec.cardinality() * signal_len);

    for (ix, &x) in spec.x_positions.iter().enumerate() {
        for (iy, &y) in spec.y_positions.iter().enumerate() {
            for (ia, &alpha) in spec.alphas.iter().enumerate() {
                for (il, &length) in spec.lengths.iter().enumerate() {
                    for (ip, &phi_bar) in spec.phi_bars.iter().enumerate() {
                        for (ig, &gamma) in spec.gammas.iter().enumerate() {
                            let params = AscParameterSet {
                                amplitude: 1.0,
                                x,
                                y,
                                alpha,
                                length,
                                phi_bar,
                                gamma,
                            };
                            let ph = evaluate_asc_response(&params, grid)?;
                            let norm = ph.energy().sqrt();
                            if !(norm >= MIN_ATOM_NORM) || !norm.is_finite() {
                                continue;
                            }
                            let inv = 1.0 / norm;
                            vectors.extend(ph.data.iter().map(|c| c * inv));
                            atoms.push(AscAtom {
                                params,
                                index: [ix, iy, ia, il, ip, ig],
                                raw_norm: norm,
                            });
                        }
                    }
                }
            }
        }
    }

    Ok(AscDictionary {
        grid: grid.clone(),
        spec: spec.clone(),
        atoms,
        vectors,
        signal_len,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Termination {
    ResidualTol,
    MaxScatterers,
    /// Every atom was selected or found linearly dependent on the selection.
    DictionaryExhausted,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExtractedScatterer {
    /// Physical parameters; `amplitude = |coefficient| / raw_norm`, so
    /// re-synthesizing these parameters reproduces the fitted atom magnitude.
    pub params: AscParameterSet,
    /// Least-squares coefficient against the unit-norm atom.
    pub coefficient: Complex64,
    pub atom: usize,
    pub index: AtomIndex,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExtractionResult {
    /// Scatterers in selection order.
    pub scatterers: Vec<ExtractedScatterer>,
    /// Residual norm before the first and after every iteration.
    pub residual_trace: Vec<f64>,
    pub termination: Termination,
}

impl ExtractionResult {
    pub fn parameter_sets(&self) -> Vec<AscParameterSet> {
        self.scatterers.iter().map(|s| s.params).collect()
    }
}

fn dot_conj(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    a.iter()
        .zip(b)
        .fold(Complex64::new(0.0, 0.0), |acc, (x, y)| acc + x.conj() * y)
}

fn norm(a: &[Complex64]) -> f64 {
    a.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt()
}

/// Coefficients at most this fraction of `‖s‖` are pruned after refinement.
pub const PRUNE_TOL: f64 = 1e-9;

/// Orthogonalized-norm threshold below which an atom counts as lying in the
/// span of the current selection.
const DEPENDENT_NORM: f64 = 1e-10;

/// Incremental QR of the selected atoms against a fixed signal.
struct Fit {
    basis: Vec<Vec<Complex64>>,
    r_cols: Vec<Vec<Complex64>>,
    projections: Vec<Complex64>,
    residual: Vec<Complex64>,
}

impl Fit {
    fn new(signal: &[Complex64]) -> Self {
        Fit {
            basis: Vec::new(),
            r_cols: Vec::new(),
            projections: Vec::new(),
            residual: signal.to_vec(),
        }
    }

    /// Gram–Schmidt with one re-orthogonalization pass; returns the
    /// component of `v` orthogonal to the basis, its norm and the
    /// coefficients removed.
    fn orthogonalize(&self, v: &[Complex64]) -> (Vec<Complex64>, f64, Vec<Complex64>) {
        let mut q = v.to_vec();
        let mut r_col = vec![Complex64::new(0.0, 0.0); self.basis.len() + 1];
        for _ in 0..2 {
            for (i, b) in self.basis.iter().enumerate() {
                let c = dot_conj(b, &q);
                r_col[i] += c;
                for (qv, bv) in q.iter_mut().zip(b) {
                    *qv -= bv * c;
                }
            }
        }
        let q_norm = norm(&q);
        (q, q_norm, r_col)
    }

    /// Appends `v`; false (and no change) when it is numerically dependent.
    fn push(&mut self, v: &[Complex64], signal: &[Complex64]) -> bool {
        let (mut q, q_norm, mut r_col) = self.orthogonalize(v);
        if q_norm < DEPENDENT_NORM {
            return false;
        }
        for x in q.iter_mut() {
            *x /= q_norm;
        }
        r_col[self.basis.len()] = Complex64::new(q_norm, 0.0);
        let step = dot_conj(&q, &self.residual);
        for (rv, qv) in self.residual.iter_mut().zip(&q) {
            *rv -= qv * step;
        }
        self.projections.push(dot_conj(&q, signal));
        self.basis.push(q);
        self.r_cols.push(r_col);
        true
    }

    fn residual_energy(&self) -> f64 {
        self.residual.iter().map(|c| c.norm_sqr()).sum()
    }

    /// Back-substitution `R c = Qᴴ s`.
    fn coefficients(&self) -> Vec<Complex64> {
        let s = self.basis.len();
        let mut coeffs = vec![Complex64::new(0.0, 0.0); s];
        for i in (0..s).rev() {
            let mut acc = self.projections[i];
            for j in i + 1..s {
                acc -= self.r_cols[j][i] * coeffs[j];
            }
            coeffs[i] = acc / self.r_cols[i][i];
        }
        coeffs
    }
}

fn fit_selection(dict: &AscDictionary, selected: &[usize], signal: &[Complex64]) -> Fit {
    let mut fit = Fit::new(signal);
    for &k in selected {
        let added = fit.push(dict.vector(k), signal);
        debug_assert!(added, "selected atoms stay independent");
    }
    fit
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OmpOptions {
    pub max_scatterers: usize,
    pub residual_tol: f64,
    /// After each selection, try replacing every selected atom by another
    /// atom at the same position (other α, L, φ̄, γ) and keep any swap that
    /// lowers the least-squares residual. Atoms left with a negligible
    /// coefficient at the end are pruned.
    pub refine: bool,
}

impl Default for OmpOptions {
    fn default() -> Self {
        OmpOptions {
            max_scatterers: DEFAULT_MAX_SCATTERERS,
            residual_tol: DEFAULT_RESIDUAL_TOL,
            refine: true,
        }
    }
}

/// Same-position swap search. Every accepted swap lowers the residual energy
/// by more than `min_gain`, so the loop terminates.
fn refine_selection(
    dict: &AscDictionary,
    signal: &[Complex64],
    selected: &mut [usize],
    excluded: &mut [bool],
    groups: &HashMap<(usize, usize), Vec<usize>>,
    fit: &mut Fit,
    min_gain: f64,
) {
    loop {
        let mut swapped = false;
        for i in 0..selected.len() {
            let current = selected[i];
            let idx = dict.atoms[current].index;
            let others: Vec<usize> = selected
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(_, &k)| k)
                .collect();
            let partial = fit_selection(dict, &others, signal);
            let base = partial.residual_energy();
            let mut best = (current, fit.residual_energy());
            for &a in &groups[&(idx[0], idx[1])] {
                if excluded[a] {
                    continue;
                }
                let (q, q_norm, _) = partial.orthogonalize(dict.vector(a));
                if q_norm < DEPENDENT_NORM {
                    continue;
                }
                let energy = base - dot_conj(&q, &partial.residual).norm_sqr() / (q_norm * q_norm);
                if energy < best.1 - min_gain {
                    best = (a, energy);
                }
            }
            if best.0 != current {
                excluded[current] = false;
                excluded[best.0] = true;
                selected[i] = best.0;
                *fit = fit_selection(dict, selected, signal);
                swapped = true;
            }
        }
        if !swapped {
            break;
        }
    }
}

/// Classical OMP with same-position refinement: see [`omp_extract_with`].
pub fn omp_extract(
    ph: &PhaseHistory,
    dict: &AscDictionary,
    max_scatterers: usize,
    residual_tol: f64,
) -> Result<ExtractionResult> {
    omp_extract_with(
        ph,
        dict,
        &OmpOptions {
            max_scatterers,
            residual_tol,
            refine: true,
        },
    )
}

/// OMP: pick the atom with the largest `|<d, r>|` (lowest index on ties),
/// refit all selected coefficients by least squares (incremental QR with
/// re-orthogonalization), optionally refine, update the residual, repeat.
pub fn omp_extract_with(ph: &PhaseHistory, dict: &AscDictionary, opts: &OmpOptions) -> Result<ExtractionResult> {
    if ph.shape() != dict.grid.shape() {
        return Err(AsccError::shape(
            format!("{:?} (dictionary grid)", dict.grid.shape()),
            format!("{:?}", ph.shape()),
        ));
    }
    if !(opts.residual_tol >= 0.0) {
        return Err(AsccError::invalid("residual_tol must be >= 0"));
    }
    if ph.data.iter().any(|c| !(c.re.is_finite() && c.im.is_finite())) {
        return Err(AsccError::invalid("phase history has non-finite entries"));
    }

    let signal: Vec<Complex64> = ph.data.iter().copied().collect();
    let signal_norm = norm(&signal);
    let threshold = opts.residual_tol * signal_norm;
    let min_gain = 1e-12 * signal_norm * signal_norm;

    let mut groups: HashMap<(usize, usize), Vec<usize>> = HashMap::new();
    if opts.refine {
        for (k, atom) in dict.atoms.iter().enumerate() {
            groups.entry((atom.index[0], atom.index[1])).or_default().push(k);
        }
    }

    let mut fit = Fit::new(&signal);
    let mut trace = vec![signal_norm];
    let mut selected: Vec<usize> = Vec::new();
    let mut excluded = vec![false; dict.len()];
    let mut dependent = vec![false; dict.len()];

    let termination = loop {
        if *trace.last().unwrap() <= threshold {
            break Termination::ResidualTol;
        }
        if selected.len() >= opts.max_scatterers {
            break Termination::MaxScatterers;
        }

        let mut best: Option<(usize, f64)> = None;
        for k in 0..dict.len() {
            if excluded[k] || dependent[k] {
                continue;
            }
            let score = dot_conj(dict.vector(k), &fit.residual).norm();
            if best.is_none_or(|(_, s)| score > s) {
                best = Some((k, score));
            }
        }
        let Some((k, _)) = best else {
            break Termination::DictionaryExhausted;
        };

        if !fit.push(dict.vector(k), &signal) {
            // In the span of the current selection; skip it.
            dependent[k] = true;
            continue;
        }
        excluded[k] = true;
        selected.push(k);
        if opts.refine {
            refine_selection(dict, &signal, &mut selected, &mut excluded, &groups, &mut fit, min_gain);
        }
        trace.push(fit.residual_energy().sqrt());
    };

    let mut coefficients = fit.coefficients();
    if opts.refine {
        // An early wrong pick can survive with a coefficient at rounding
        // level once the right atoms join; drop such atoms and refit.
        let floor = PRUNE_TOL * signal_norm;
        if coefficients.iter().any(|c| c.norm() <= floor) {
            selected = selected
                .iter()
                .zip(&coefficients)
                .filter(|(_, c)| c.norm() > floor)
                .map(|(&k, _)| k)
                .collect();
            coefficients = fit_selection(dict, &selected, &signal).coefficients();
        }
    }

    let scatterers = selected
        .iter()
        .zip(coefficients)
        .map(|(&k, coefficient)| {
            let atom = &dict.atoms[k];
            ExtractedScatterer {
                params: atom
                    .params
                    .with_amplitude(coefficient.norm() / atom.raw_norm),
                coefficient,
                atom: k,
                index: atom.index,
            }
        })
        .collect();

    Ok(ExtractionResult {
        scatterers,
        residual_trace: trace,
        termination,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scattering::SPEED_OF_LIGHT;

    fn small_grid() -> RadarGrid {
        RadarGrid::uniform(10e9, 1e9, 16, 0.1, 16, SPEED_OF_LIGHT).unwrap()
    }

    fn small_spec(grid: &RadarGrid) -> DictionarySpec {
        DictionarySpec::regular(grid.range_cell() * 2.0, 2, vec![0.0, 1.0], vec![0.0])
    }

    #[test]
    fn singleton_dictionary() {
        let grid = small_grid();
        let spec = DictionarySpec {
            x_positions: vec![0.1],
            y_positions: vec![-0.2],
            alphas: vec![0.5],
            lengths: vec![0.0],
            phi_bars: vec![0.0],
            gammas: vec![0.0],
        };
        let dict = build_dictionary(&grid, &spec).unwrap();
        assert_eq!(dict.len(), 1);
        assert!((norm(dict.vector(0)) - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn three_by_three_positions_give_nine_atoms() {
        let grid = small_grid();
        let spec = DictionarySpec::regular(0.3, 1, vec![0.0], vec![0.0]);
        assert_eq!(build_dictionary(&grid, &spec).unwrap().len(), 9);
    }

    #[test]
    fn empty_axis_rejected() {
        let grid = small_grid();
        let mut spec = small_spec(&grid);
        spec.alphas.clear();
        assert!(matches!(
            build_dictionary(&grid, &spec),
            Err(AsccError::InvalidInput(_))
        ));
    }

    #[test]
    fn atom_norms_by_direct_summation() {
        let grid = small_grid();
        let dict = build_dictionary(&grid, &small_spec(&grid)).unwrap();
        for k in 0..dict.len() {
            let mut s = 0.0;
            for c in dict.vector(k) {
                s += c.re * c.re + c.im * c.im;
            }
            assert!((s.sqrt() - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn zero_signal_terminates_immediately() {
        let grid = small_grid();
        let dict = build_dictionary(&grid, &small_spec(&grid)).unwrap();
        let res = omp_extract(&PhaseHistory::zeros(grid.shape()), &dict, 5, 1e-6).unwrap();
        assert!(res.scatterers.is_empty());
        assert_eq!(res.termination, Termination::ResidualTol);
        assert_eq!(res.residual_trace, vec![0.0]);
    }

    #[test]
    fn planted_single_atom() {
        let grid = small_grid();
        let dict = build_dictionary(&grid, &small_spec(&grid)).unwrap();
        let k = 17;
        let ph = dict.atom_phase_history(k, Complex64::new(3.0, 0.0));
        let res = omp_extract(&ph, &dict, 5, 1e-9).unwrap();
        assert_eq!(res.scatterers.len(), 1);
        assert_eq!(res.scatterers[0].index, dict.atoms()[k].index);
        assert!((res.scatterers[0].coefficient.norm() - 3.0).abs() <= 1e-9);
        let expected_a = 3.0 / dict.atoms()[k].raw_norm;
        assert!((res.scatterers[0].params.amplitude - expected_a).abs() <= 1e-9 * expected_a);
    }

    #[test]
    fn grid_mismatch_rejected() {
        let grid = small_grid();
        let dict = build_dictionary(&grid, &small_spec(&grid)).unwrap();
        let ph = PhaseHistory::zeros((4, 4));
        assert!(matches!(
            omp_extract(&ph, &dict, 3, 1e-3),
            Err(AsccError::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn max_scatterers_zero_returns_empty() {
        let grid = small_grid();
        let dict = build_dictionary(&grid, &small_spec(&grid)).unwrap();
        let ph = dict.atom_phase_history(3, Complex64::new(1.0, 0.0));
        let res = omp_extract(&ph, &dict, 0, 1e-6).unwrap();
        assert!(res.scatterers.is_empty());
        assert_eq!(res.termination, Termination::MaxScatterers);
    }
}
