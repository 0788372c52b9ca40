//! GTD-based attributed scattering center (ASC) model.
//!
//! A scatterer's frequency/aspect response is
//!
//! ```text
//! E(f, φ) = A · (j f/fc)^α · exp(−2π γ f sin φ)
//!             · exp(j 4π f/v (x cos φ + y sin φ))
//!             · sinc(2π L/v f sin(φ − φ̄))
//! ```
//!
//! with the unnormalized `sinc(x) = sin(x)/x`. A scene is the sum of its
//! scatterers' responses; images are formed by a centered 2-D inverse DFT.

use std::f64::consts::{FRAC_PI_2, PI};

use ndarray::Array2;
use num_complex::Complex64;
use rustfft::FftDirection;
use serde::{Deserialize, Serialize};

use crate::error::{AsccError, Result};
use crate::fft::{dft2_inplace, fftshift, ifftshift};

/// Speed of light used by the default grid, m/s.
pub const SPEED_OF_LIGHT: f64 = 3.0e8;

const SINC_SERIES_BOUND: f64 = 1e-4;

/// Physical parameters of one attributed scattering center.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AscParameterSet {
    /// Echo amplitude, dimensionless, `>= 0`.
    #[serde(rename = "A")]
    pub amplitude: f64,
    /// Range position, meters.
    pub x: f64,
    /// Cross-range position, meters.
    pub y: f64,
    /// Frequency dependence exponent.
    pub alpha: f64,
    /// Length of a distributed scatterer, meters, `>= 0`.
    #[serde(rename = "L")]
    pub length: f64,
    /// Orientation, radians in `[-π, π)`.
    pub phi_bar: f64,
    /// Aspect dependency, 1/Hz.
    pub gamma: f64,
}

impl AscParameterSet {
    /// A localized scatterer (`L = 0`, `γ = 0`).
    pub fn point(amplitude: f64, x: f64, y: f64, alpha: f64) -> Self {
        Self {
            amplitude,
            x,
            y,
            alpha,
            length: 0.0,
            phi_bar: 0.0,
            gamma: 0.0,
        }
    }

    pub fn with_amplitude(mut self, amplitude: f64) -> Self {
        self.amplitude = amplitude;
        self
    }

    /// Parameters in a fixed order: `[A, x, y, alpha, L, phi_bar, gamma]`.
    pub fn to_vector(&self) -> [f64; 7] {
        [
            self.amplitude,
            self.x,
            self.y,
            self.alpha,
            self.length,
            self.phi_bar,
            self.gamma,
        ]
    }

    pub fn validate(&self) -> Result<()> {
        if self.to_vector().iter().any(|v| !v.is_finite()) {
            return Err(AsccError::invalid(format!(
                "non-finite scatterer parameter: {self:?}"
            )));
        }
        if self.amplitude < 0.0 {
            return Err(AsccError::invalid(format!(
                "amplitude must be >= 0, got {}",
                self.amplitude
            )));
        }
        if self.length < 0.0 {
            return Err(AsccError::invalid(format!(
                "length must be >= 0, got {}",
                self.length
            )));
        }
        if !(-PI..PI).contains(&self.phi_bar) {
            return Err(AsccError::invalid(format!(
                "phi_bar must lie in [-pi, pi), got {}",
                self.phi_bar
            )));
        }
        Ok(())
    }
}

/// Frequency/aspect sampling lattice of a radar measurement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadarGrid {
    #[serde(rename = "fc_hz")]
    pub center_frequency: f64,
    #[serde(rename = "f_hz")]
    pub frequencies: Vec<f64>,
    #[serde(rename = "phi_rad")]
    pub aspects: Vec<f64>,
    #[serde(rename = "v_mps")]
    pub velocity: f64,
}

impl RadarGrid {
    pub fn new(
        center_frequency: f64,
        frequencies: Vec<f64>,
        aspects: Vec<f64>,
        velocity: f64,
    ) -> Result<Self> {
        let grid = Self {
            center_frequency,
            frequencies,
            aspects,
            velocity,
        };
        grid.validate()?;
        Ok(grid)
    }

    /// Uniform grid with `m` frequencies spanning `bandwidth` (the sample at
    /// index `m/2` is exactly `fc`) and `n` aspects spanning `aspect_span`
    /// radians (the sample at index `n/2` is exactly 0).
    pub fn uniform(
        center_frequency: f64,
        bandwidth: f64,
        m: usize,
        aspect_span: f64,
        n: usize,
        velocity: f64,
    ) -> Result<Self> {
        let df = bandwidth / m as f64;
        let dphi = aspect_span / n as f64;
        let half_m = (m / 2) as f64;
        let half_n = (n / 2) as f64;
        let frequencies = (0..m)
            .map(|i| center_frequency + (i as f64 - half_m) * df)
            .collect();
        let aspects = (0..n).map(|i| (i as f64 - half_n) * dphi).collect();
        Self::new(center_frequency, frequencies, aspects, velocity)
    }

    /// X-band desk-scale grid: 10 GHz center, 1 GHz bandwidth, 64×64 samples,
    /// 0.1 rad aspect span (square 0.15 m resolution cells).
    pub fn desk_default() -> Self {
        Self::uniform(10.0e9, 1.0e9, 64, 0.1, 64, SPEED_OF_LIGHT)
            .expect("default grid is valid")
    }

    pub fn validate(&self) -> Result<()> {
        let finite = |v: f64| v.is_finite();
        if !(finite(self.center_frequency) && self.center_frequency > 0.0) {
            return Err(AsccError::invalid("center frequency must be > 0"));
        }
        if !(finite(self.velocity) && self.velocity > 0.0) {
            return Err(AsccError::invalid("propagation velocity must be > 0"));
        }
        if self.frequencies.is_empty() || self.aspects.is_empty() {
            return Err(AsccError::invalid(
                "grid needs at least one frequency and one aspect sample",
            ));
        }
        if self.frequencies.iter().any(|&f| !(finite(f) && f > 0.0)) {
            return Err(AsccError::invalid("frequencies must be finite and > 0"));
        }
        if self.aspects.iter().any(|&p| !finite(p)) {
            return Err(AsccError::invalid("aspect samples must be finite"));
        }
        let increasing = |v: &[f64]| v.windows(2).all(|w| w[1] > w[0]);
        if !increasing(&self.frequencies) || !increasing(&self.aspects) {
            return Err(AsccError::invalid(
                "frequency and aspect samples must be strictly increasing",
            ));
        }
        Ok(())
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.frequencies.len(), self.aspects.len())
    }

    fn mean_step(v: &[f64]) -> f64 {
        if v.len() < 2 {
            return f64::NAN;
        }
        (v[v.len() - 1] - v[0]) / (v.len() - 1) as f64
    }

    /// Range extent of one image pixel, `v / (2 M Δf)`.
    pub fn range_cell(&self) -> f64 {
        let m = self.frequencies.len() as f64;
        self.velocity / (2.0 * m * Self::mean_step(&self.frequencies))
    }

    /// Cross-range extent of one image pixel, `v / (2 fc N Δφ)`.
    pub fn cross_range_cell(&self) -> f64 {
        let n = self.aspects.len() as f64;
        self.velocity / (2.0 * self.center_frequency * n * Self::mean_step(&self.aspects))
    }
}

/// Where a phase history came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Synthetic,
    Loaded,
}

/// Complex frequency × aspect response `S(f, φ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseHistory {
    pub data: Array2<Complex64>,
    pub provenance: Provenance,
}

impl PhaseHistory {
    pub fn zeros(shape: (usize, usize)) -> Self {
        Self {
            data: Array2::zeros(shape),
            provenance: Provenance::Synthetic,
        }
    }

    /// Wraps loaded data after checking finiteness and shape against `grid`.
    pub fn loaded(data: Array2<Complex64>, grid: &RadarGrid) -> Result<Self> {
        if data.dim() != grid.shape() {
            return Err(AsccError::shape(
                format!("{:?}", grid.shape()),
                format!("{:?}", data.dim()),
            ));
        }
        if data.iter().any(|c| !(c.re.is_finite() && c.im.is_finite())) {
            return Err(AsccError::invalid("phase history has non-finite entries"));
        }
        Ok(Self {
            data,
            provenance: Provenance::Loaded,
        })
    }

    pub fn shape(&self) -> (usize, usize) {
        self.data.dim()
    }

    pub fn energy(&self) -> f64 {
        self.data.iter().map(|c| c.norm_sqr()).sum()
    }
}

/// Complex spatial-domain image.
#[derive(Debug, Clone, PartialEq)]
pub struct SarImage {
    pub data: Array2<Complex64>,
}

impl SarImage {
    pub fn magnitude(&self) -> Array2<f64> {
        self.data.mapv(|c| c.norm())
    }

    pub fn shape(&self) -> (usize, usize) {
        self.data.dim()
    }
}

/// Unnormalized sinc, `sin(x)/x`, with a series expansion near zero.
pub fn sinc(x: f64) -> f64 {
    if x.abs() < SINC_SERIES_BOUND {
        let x2 = x * x;
        1.0 - x2 / 6.0 + x2 * x2 / 120.0
    } else {
        x.sin() / x
    }
}

/// `(j t)^α` on the principal branch for `t > 0`: `t^α · e^{jπα/2}`.
fn frequency_factor(ratio: f64, alpha: f64) -> Complex64 {
    Complex64::from_polar(ratio.powf(alpha), FRAC_PI_2 * alpha)
}

/// Single-entry response of one scatterer at `(f, φ)`.
pub fn asc_response_at(p: &AscParameterSet, f: f64, phi: f64, fc: f64, v: f64) -> Complex64 {
    let (sin_phi, cos_phi) = phi.sin_cos();
    let aspect_decay = (-2.0 * PI * p.gamma * f * sin_phi).exp();
    let phase = 4.0 * PI * f / v * (p.x * cos_phi + p.y * sin_phi);
    let length_term = sinc(2.0 * PI * p.length / v * f * (phi - p.phi_bar).sin());
    frequency_factor(f / fc, p.alpha)
        * Complex64::from_polar(p.amplitude * aspect_decay * length_term, phase)
}

/// Response of a single scatterer over the whole grid.
pub fn evaluate_asc_response(params: &AscParameterSet, grid: &RadarGrid) -> Result<PhaseHistory> {
    params.validate()?;
    grid.validate()?;
    let mut ph = PhaseHistory::zeros(grid.shape());
    accumulate_response(&mut ph.data, params, grid);
    Ok(ph)
}

fn accumulate_response(out: &mut Array2<Complex64>, p: &AscParameterSet, grid: &RadarGrid) {
    let (fc, v) = (grid.center_frequency, grid.velocity);
    for (m, &f) in grid.frequencies.iter().enumerate() {
        for (n, &phi) in grid.aspects.iter().enumerate() {
            out[(m, n)] += asc_response_at(p, f, phi, fc, v);
        }
    }
}

/// Sum of the responses of every scatterer in `scene`.
pub fn synthesize_scene(scene: &[AscParameterSet], grid: &RadarGrid) -> Result<PhaseHistory> {
    grid.validate()?;
    for p in scene {
        p.validate()?;
    }
    let mut ph = PhaseHistory::zeros(grid.shape());
    for p in scene {
        accumulate_response(&mut ph.data, p, grid);
    }
    Ok(ph)
}

/// Centered 2-D inverse DFT (normalized by `1/(MN)`, no window).
pub fn form_image(ph: &PhaseHistory) -> Result<SarImage> {
    if ph.data.iter().any(|c| !(c.re.is_finite() && c.im.is_finite())) {
        return Err(AsccError::invalid("phase history has non-finite entries"));
    }
    let (m, n) = ph.shape();
    let mut data = ph.data.clone();
    dft2_inplace(&mut data, FftDirection::Inverse);
    let scale = 1.0 / (m * n).max(1) as f64;
    data.mapv_inplace(|c| c * scale);
    Ok(SarImage {
        data: fftshift(&data),
    })
}

/// Forward transform undoing [`form_image`].
pub fn image_to_phase_history(image: &SarImage) -> PhaseHistory {
    let mut data = ifftshift(&image.data);
    dft2_inplace(&mut data, FftDirection::Forward);
    PhaseHistory {
        data,
        provenance: Provenance::Synthetic,
    }
}
