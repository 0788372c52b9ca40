//! Image-quality metrics (MSE, SSIM, MS-SSIM), the single-dense-layer
//! softmax readout and per-component weight attribution.

use ndarray::{s, Array1, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{AsccError, Result};

/// Standard five-scale MS-SSIM exponents, finest first.
pub const MS_SSIM_WEIGHTS: [f64; 5] = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333];
pub const DEFAULT_SCALES: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SsimConfig {
    pub window: usize,
    pub sigma: f64,
    pub k1: f64,
    pub k2: f64,
    /// Overrides the max-minus-min dynamic range of the two inputs.
    pub data_range: Option<f64>,
    pub scales: usize,
}

impl Default for SsimConfig {
    fn default() -> Self {
        SsimConfig {
            window: 11,
            sigma: 1.5,
            k1: 0.01,
            k2: 0.03,
            data_range: None,
            scales: DEFAULT_SCALES,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub metric: String,
    pub value: f64,
    pub window: Option<usize>,
    pub sigma: Option<f64>,
    pub scales: Option<usize>,
    pub data_range: Option<f64>,
}

fn check_same_shape(a: &Array2<f64>, b: &Array2<f64>) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(AsccError::shape(format!("{:?}", a.dim()), format!("{:?}", b.dim())));
    }
    if a.is_empty() {
        return Err(AsccError::invalid("empty image"));
    }
    Ok(())
}

pub fn mse(a: &Array2<f64>, b: &Array2<f64>) -> Result<f64> {
    check_same_shape(a, b)?;
    let sum: f64 = a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok(sum / a.len() as f64)
}

/// Normalized 1-D Gaussian taps.
pub fn gaussian_window(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let taps: Vec<f64> = (0..size)
        .map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = taps.iter().sum();
    taps.into_iter().map(|t| t / total).collect()
}

/// Max over both images minus min over both images; 1 when that is zero.
pub fn dynamic_range(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    let (lo, hi) = a
        .iter()
        .chain(b.iter())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let range = hi - lo;
    if range > 0.0 {
        range
    } else {
        1.0
    }
}

/// Separable "valid" filtering with the given taps.
fn filter_valid(x: &Array2<f64>, taps: &[f64]) -> Array2<f64> {
    let w = taps.len();
    let (m, n) = x.dim();
    let rows: Array2<f64> = Array2::from_shape_fn((m, n + 1 - w), |(i, j)| {
        taps.iter().enumerate().map(|(k, t)| t * x[(i, j + k)]).sum()
    });
    Array2::from_shape_fn((m + 1 - w, n + 1 - w), |(i, j)| {
        taps.iter().enumerate().map(|(k, t)| t * rows[(i + k, j)]).sum()
    })
}

/// Local luminance and contrast-structure maps.
pub struct SsimMaps {
    pub luminance: Array2<f64>,
    pub contrast_structure: Array2<f64>,
}

impl SsimMaps {
    pub fn ssim_map(&self) -> Array2<f64> {
        &self.luminance * &self.contrast_structure
    }
}

pub fn ssim_maps(a: &Array2<f64>, b: &Array2<f64>, cfg: &SsimConfig, data_range: f64) -> Result<SsimMaps> {
    check_same_shape(a, b)?;
    let (m, n) = a.dim();
    if cfg.window == 0 || m < cfg.window || n < cfg.window {
        return Err(AsccError::invalid(format!(
            "image {m}x{n} smaller than the {w}x{w} window",
            w = cfg.window
        )));
    }
    let taps = gaussian_window(cfg.window, cfg.sigma);
    let c1 = (cfg.k1 * data_range).powi(2);
    let c2 = (cfg.k2 * data_range).powi(2);
    let mu_a = filter_valid(a, &taps);
    let mu_b = filter_valid(b, &taps);
    let saa = filter_valid(&(a * a), &taps) - &mu_a * &mu_a;
    let sbb = filter_valid(&(b * b), &taps) - &mu_b * &mu_b;
    let sab = filter_valid(&(a * b), &taps) - &mu_a * &mu_b;
    let luminance = ndarray::Zip::from(&mu_a)
        .and(&mu_b)
        .map_collect(|&x, &y| (2.0 * x * y + c1) / (x * x + y * y + c1));
    let contrast_structure = ndarray::Zip::from(&saa)
        .and(&sbb)
        .and(&sab)
        .map_collect(|&va, &vb, &cov| (2.0 * cov + c2) / (va + vb + c2));
    Ok(SsimMaps {
        luminance,
        contrast_structure,
    })
}

fn range_for(a: &Array2<f64>, b: &Array2<f64>, cfg: &SsimConfig) -> Result<f64> {
    match cfg.data_range {
        Some(r) if r > 0.0 && r.is_finite() => Ok(r),
        Some(_) => Err(AsccError::invalid("data range must be finite and > 0")),
        None => Ok(dynamic_range(a, b)),
    }
}

/// Mean local SSIM over all valid window positions.
pub fn ssim(a: &Array2<f64>, b: &Array2<f64>, cfg: &SsimConfig) -> Result<f64> {
    let range = range_for(a, b, cfg)?;
    let maps = ssim_maps(a, b, cfg, range)?;
    Ok(maps.ssim_map().mean().expect("non-empty map"))
}

/// 2×2 average pooling (a trailing odd row or column is dropped).
pub fn downsample2(x: &Array2<f64>) -> Array2<f64> {
    let (m, n) = x.dim();
    Array2::from_shape_fn((m / 2, n / 2), |(i, j)| {
        0.25 * (x[(2 * i, 2 * j)] + x[(2 * i + 1, 2 * j)] + x[(2 * i, 2 * j + 1)] + x[(2 * i + 1, 2 * j + 1)])
    })
}

/// Renormalized leading `scales` entries of [`MS_SSIM_WEIGHTS`].
pub fn ms_ssim_weights(scales: usize) -> Result<Vec<f64>> {
    if scales == 0 || scales > MS_SSIM_WEIGHTS.len() {
        return Err(AsccError::invalid(format!("scale count {scales} outside 1..=5")));
    }
    let w = &MS_SSIM_WEIGHTS[..scales];
    let total: f64 = w.iter().sum();
    Ok(w.iter().map(|v| v / total).collect())
}

/// `Π_{j<S} mcs_j^{w_j} · ssim_S^{w_S}`, the dynamic range fixed from the
/// full-resolution pair. Negative per-scale terms are clamped to zero.
pub fn ms_ssim(a: &Array2<f64>, b: &Array2<f64>, cfg: &SsimConfig) -> Result<f64> {
    let weights = ms_ssim_weights(cfg.scales)?;
    check_same_shape(a, b)?;
    let (m, n) = a.dim();
    let coarsest = m.min(n) >> (cfg.scales - 1);
    if coarsest < cfg.window {
        return Err(AsccError::invalid(format!(
            "{m}x{n} image too small for {} scales with a {} window",
            cfg.scales, cfg.window
        )));
    }
    let range = range_for(a, b, cfg)?;
    let (mut x, mut y) = (a.clone(), b.clone());
    let mut value = 1.0;
    for (j, &w) in weights.iter().enumerate() {
        let maps = ssim_maps(&x, &y, cfg, range)?;
        if j + 1 == weights.len() {
            let s = maps.ssim_map().mean().expect("non-empty map");
            if weights.len() == 1 {
                return Ok(s);
            }
            value *= s.max(0.0).powf(w);
        } else {
            let cs = maps.contrast_structure.mean().expect("non-empty map");
            value *= cs.max(0.0).powf(w);
            x = downsample2(&x);
            y = downsample2(&y);
        }
    }
    Ok(value)
}

pub fn report(metric: &str, a: &Array2<f64>, b: &Array2<f64>, cfg: &SsimConfig) -> Result<MetricReport> {
    let range = range_for(a, b, cfg)?;
    let (value, windowed, scales) = match metric {
        "mse" => (mse(a, b)?, false, None),
        "ssim" => (ssim(a, b, cfg)?, true, None),
        "ms-ssim" | "ms_ssim" => (ms_ssim(a, b, cfg)?, true, Some(cfg.scales)),
        other => return Err(AsccError::invalid(format!("unknown metric `{other}`"))),
    };
    Ok(MetricReport {
        metric: metric.replace('_', "-"),
        value,
        window: windowed.then_some(cfg.window),
        sigma: windowed.then_some(cfg.sigma),
        scales,
        data_range: windowed.then_some(range),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReadoutConfig {
    pub epochs: usize,
    pub step: f64,
    pub seed: u64,
}

impl Default for ReadoutConfig {
    fn default() -> Self {
        ReadoutConfig {
            epochs: 200,
            step: 0.5,
            seed: 0,
        }
    }
}

/// Single dense layer `logits = W f + b` with softmax output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearReadout {
    /// classes × features.
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
    pub loss_trace: Vec<f64>,
}

impl LinearReadout {
    pub fn classes(&self) -> usize {
        self.weights.nrows()
    }

    pub fn logits(&self, features: &Array2<f64>) -> Array2<f64> {
        features.dot(&self.weights.t()) + &self.bias
    }

    pub fn predict(&self, features: &Array2<f64>) -> Vec<usize> {
        self.logits(features)
            .rows()
            .into_iter()
            .map(|row| {
                row.iter()
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |best, (k, &v)| if v > best.1 { (k, v) } else { best })
                    .0
            })
            .collect()
    }

    pub fn accuracy(&self, features: &Array2<f64>, labels: &[usize]) -> f64 {
        let hits = self.predict(features).iter().zip(labels).filter(|(p, l)| p == l).count();
        hits as f64 / labels.len().max(1) as f64
    }
}

/// Mean softmax cross-entropy and its gradients `(loss, ∂W, ∂b)`.
pub fn cross_entropy(
    weights: &Array2<f64>,
    bias: &Array1<f64>,
    features: &Array2<f64>,
    labels: &[usize],
) -> (f64, Array2<f64>, Array1<f64>) {
    let n = features.nrows() as f64;
    let mut probs = features.dot(&weights.t()) + bias;
    let mut loss = 0.0;
    for (mut row, &y) in probs.rows_mut().into_iter().zip(labels) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let z = row.sum();
        row /= z;
        loss -= row[y].ln();
        row[y] -= 1.0;
    }
    // probs now holds softmax − onehot.
    let gw = probs.t().dot(features) / n;
    let gb = probs.sum_axis(Axis(0)) / n;
    (loss / n, gw, gb)
}

fn check_readout_inputs(features: &Array2<f64>, labels: &[usize]) -> Result<usize> {
    if features.nrows() != labels.len() {
        return Err(AsccError::shape(format!("{} labels", features.nrows()), labels.len().to_string()));
    }
    if labels.is_empty() {
        return Err(AsccError::invalid("no training samples"));
    }
    if features.iter().any(|v| !v.is_finite()) {
        return Err(AsccError::invalid("features must be finite"));
    }
    let classes = labels.iter().max().expect("non-empty") + 1;
    let mut counts = vec![0usize; classes];
    for &l in labels {
        counts[l] += 1;
    }
    if classes < 2 {
        return Err(AsccError::invalid("labels contain a single class"));
    }
    if let Some(missing) = counts.iter().position(|&c| c == 0) {
        return Err(AsccError::invalid(format!("class {missing} has no samples")));
    }
    Ok(classes)
}

/// Full-batch gradient descent on softmax cross-entropy from a seeded small
/// start. A step that would raise the loss is retried at half the step size.
pub fn fit_linear_readout(features: &Array2<f64>, labels: &[usize], cfg: &ReadoutConfig) -> Result<LinearReadout> {
    let classes = check_readout_inputs(features, labels)?;
    if !(cfg.step > 0.0 && cfg.step.is_finite()) {
        return Err(AsccError::invalid("step must be finite and > 0"));
    }
    let d = features.ncols();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut weights = Array2::from_shape_simple_fn((classes, d), || rng.random_range(-0.01..0.01));
    let mut bias = Array1::zeros(classes);
    let mut step = cfg.step;
    let (mut loss, mut gw, mut gb) = cross_entropy(&weights, &bias, features, labels);
    let mut trace = vec![loss];
    for _ in 0..cfg.epochs {
        let mut accepted = false;
        for _ in 0..60 {
            let w_new = &weights - &(&gw * step);
            let b_new = &bias - &(&gb * step);
            let (l, g_w, g_b) = cross_entropy(&w_new, &b_new, features, labels);
            if l <= loss {
                weights = w_new;
                bias = b_new;
                (loss, gw, gb) = (l, g_w, g_b);
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            break;
        }
        trace.push(loss);
    }
    Ok(LinearReadout {
        weights,
        bias,
        loss_trace: trace,
    })
}

/// Per class, the mean |weight| of each of `blocks` equal feature blocks,
/// mapped affinely so the class minimum is 1 and maximum 10 (all 1 when
/// the class values are equal). Returns classes × blocks.
pub fn attribute_weights(readout: &LinearReadout, blocks: usize) -> Result<Array2<f64>> {
    let d = readout.weights.ncols();
    if blocks == 0 || !d.is_multiple_of(blocks) {
        return Err(AsccError::invalid(format!(
            "{d} features do not split into {blocks} equal blocks"
        )));
    }
    let width = d / blocks;
    let mut out = Array2::zeros((readout.classes(), blocks));
    for (c, row) in readout.weights.rows().into_iter().enumerate() {
        let means: Vec<f64> = (0..blocks)
            .map(|k| row.slice(s![k * width..(k + 1) * width]).iter().map(|v| v.abs()).sum::<f64>() / width as f64)
            .collect();
        let lo = means.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = means.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        for (k, &m) in means.iter().enumerate() {
            out[(c, k)] = if hi > lo { 1.0 + 9.0 * ((m - lo) / (hi - lo)) } else { 1.0 };
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn ramp(m: usize, n: usize) -> Array2<f64> {
        Array2::from_shape_fn((m, n), |(i, j)| ((i * 7 + j * 3) % 11) as f64)
    }

    #[test]
    fn mse_cases() {
        let a = ramp(4, 5);
        assert_eq!(mse(&a, &a).unwrap(), 0.0);
        assert!((mse(&a, &(&a + 1.5)).unwrap() - 2.25).abs() < 1e-12);
        assert!(mse(&a, &ramp(5, 4)).is_err());
    }

    #[test]
    fn window_taps_sum_to_one() {
        let t = gaussian_window(11, 1.5);
        assert!((t.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert_eq!(t[0], t[10]);
    }

    #[test]
    fn self_similarity_is_one() {
        let a = ramp(20, 16);
        assert!((ssim(&a, &a, &SsimConfig::default()).unwrap() - 1.0).abs() < 1e-12);
        let b = ramp(64, 64);
        assert!((ms_ssim(&b, &b, &SsimConfig::default()).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn constant_offset_only_luminance() {
        let a = Array2::from_elem((16, 16), 1.0);
        let b = Array2::from_elem((16, 16), 5.0);
        let v = ssim(&a, &b, &SsimConfig::default()).unwrap();
        let c1 = (0.01f64 * 4.0).powi(2);
        let lum = (2.0 * 5.0 + c1) / (1.0 + 25.0 + c1);
        assert!((v - lum).abs() < 1e-12);
        assert!(v < 1.0);
    }

    #[test]
    fn too_small_rejected() {
        let a = ramp(10, 20);
        assert!(ssim(&a, &a, &SsimConfig::default()).is_err());
        let b = ramp(32, 32);
        assert!(ms_ssim(&b, &b, &SsimConfig::default()).is_err());
    }

    #[test]
    fn single_scale_equals_ssim() {
        let a = ramp(24, 24);
        let b = a.mapv(|v| (v * 0.7).sin());
        let cfg = SsimConfig { scales: 1, ..Default::default() };
        assert_eq!(ms_ssim(&a, &b, &cfg).unwrap(), ssim(&a, &b, &cfg).unwrap());
    }

    #[test]
    fn renormalized_weights() {
        let w = ms_ssim_weights(3).unwrap();
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert!(ms_ssim_weights(0).is_err() && ms_ssim_weights(6).is_err());
    }

    #[test]
    fn attribution_examples() {
        let r = LinearReadout {
            weights: Array2::from_elem((2, 6), 0.3),
            bias: Array1::zeros(2),
            loss_trace: vec![],
        };
        assert!(attribute_weights(&r, 3).unwrap().iter().all(|&v| v == 1.0));
        assert!(attribute_weights(&r, 4).is_err());

        let r = LinearReadout {
            weights: array![[1.0, -1.0, 2.0, 2.0, 1.0, 1.0]],
            bias: Array1::zeros(1),
            loss_trace: vec![],
        };
        assert_eq!(attribute_weights(&r, 3).unwrap(), array![[1.0, 10.0, 1.0]]);
    }

    #[test]
    fn single_class_rejected() {
        let f = Array2::zeros((3, 2));
        assert!(fit_linear_readout(&f, &[0, 0, 0], &ReadoutConfig::default()).is_err());
        assert!(fit_linear_readout(&f, &[0, 2, 2], &ReadoutConfig::default()).is_err());
    }

    #[test]
    fn zero_features_predict_majority() {
        let f = Array2::zeros((5, 3));
        let labels = [1, 0, 1, 2, 1];
        let r = fit_linear_readout(&f, &labels, &ReadoutConfig::default()).unwrap();
        assert!(r.predict(&f).iter().all(|&p| p == 1));
    }
}
