//! Feature-disentangling losses on caller-supplied feature tensors: the
//! global discrimination loss, the gated local weight and the weighted
//! local pixel loss, each with an analytic gradient.

use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::error::{AsccError, Result};

/// Added after mapping similarities from [−1, 1] onto [0, 1].
pub const POSITIVITY_SHIFT: f64 = 1e-6;
pub const DEFAULT_RHO: f64 = 2.0;
pub const DEFAULT_GATE_EPS: f64 = 0.05;

/// `⟨a, b⟩ / (‖a‖‖b‖)`, clamped to [−1, 1].
pub fn cosine_sim(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(AsccError::shape(format!("length {}", a.len()), format!("length {}", b.len())));
    }
    let na = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if !(na > 0.0 && nb > 0.0) {
        return Err(AsccError::invalid("cosine similarity of a zero-norm vector"));
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

/// Deep features of the SAR image and the outputs of the successive filter
/// layers, all h×w×c.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStack {
    x_sar: Array3<f64>,
    mid: Vec<Array3<f64>>,
}

impl FeatureStack {
    pub fn new(x_sar: Array3<f64>, mid: Vec<Array3<f64>>) -> Result<Self> {
        for (i, f) in mid.iter().enumerate() {
            if f.dim() != x_sar.dim() {
                return Err(AsccError::shape(
                    format!("{:?}", x_sar.dim()),
                    format!("{:?} for filter output {}", f.dim(), i + 1),
                ));
            }
        }
        Ok(FeatureStack { x_sar, mid })
    }

    pub fn x_sar(&self) -> &Array3<f64> {
        &self.x_sar
    }

    pub fn mid(&self) -> &[Array3<f64>] {
        &self.mid
    }
}

/// `P̂_1 = X − f_1`, `P̂_i = f_{i−1} − f_i`.
pub fn derive_approx_components(stack: &FeatureStack) -> Vec<Array3<f64>> {
    let mut prev = &stack.x_sar;
    let mut out = Vec::with_capacity(stack.mid.len());
    for f in &stack.mid {
        out.push(prev - f);
        prev = f;
    }
    out
}

/// `(s + 1)/2 + 1e−6`.
pub fn positivity_map(s: f64) -> f64 {
    (s + 1.0) / 2.0 + POSITIVITY_SHIFT
}

/// Similarities of one anchor to its positive and to its negatives.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnchorSims {
    pub positive: f64,
    pub negatives: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlobalLoss {
    pub loss: f64,
    /// `∂L/∂s⁺` per anchor.
    pub grad_positive: Vec<f64>,
    /// `∂L/∂s⁻_j` per anchor.
    pub grad_negatives: Vec<Vec<f64>>,
}

/// `−Σ_a log(m(s⁺) / (m(s⁺) + Σ_j m(s⁻_j)))` with `m` the positivity map.
pub fn global_discrimination_loss(anchors: &[AnchorSims]) -> Result<GlobalLoss> {
    if anchors.is_empty() {
        return Err(AsccError::invalid("no positive similarities"));
    }
    let in_range = |s: f64| (-1.0..=1.0).contains(&s);
    let mut out = GlobalLoss {
        loss: 0.0,
        grad_positive: Vec::with_capacity(anchors.len()),
        grad_negatives: Vec::with_capacity(anchors.len()),
    };
    for a in anchors {
        if !in_range(a.positive) || !a.negatives.iter().all(|&s| in_range(s)) {
            return Err(AsccError::invalid("similarities must lie in [-1, 1]"));
        }
        let mp = positivity_map(a.positive);
        let denom = mp + a.negatives.iter().map(|&s| positivity_map(s)).sum::<f64>();
        out.loss += denom.ln() - mp.ln();
        out.grad_positive.push(0.5 * (1.0 / denom - 1.0 / mp));
        out.grad_negatives.push(vec![0.5 / denom; a.negatives.len()]);
    }
    Ok(out)
}

/// β gate: open when the relative similarity gain reaches `eps_gate`.
pub fn gate(d_t: f64, d_prev: f64, eps_gate: f64) -> f64 {
    if (d_t - d_prev) / d_t.abs().max(1e-12) >= eps_gate {
        1.0
    } else {
        0.0
    }
}

/// `clamp(1 − β(d_t + 2)/2, 0, 1)^ρ`.
pub fn gated_weight(d_t: f64, beta: f64, rho: f64) -> f64 {
    (1.0 - beta * (d_t + 2.0) / 2.0).clamp(0.0, 1.0).powf(rho)
}

/// Gate parameters plus the previous similarity per (component, pixel group).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalWeightState {
    pub rho: f64,
    pub eps_gate: f64,
    prev: Array2<f64>,
}

impl LocalWeightState {
    /// Every previous similarity starts at −1, so the first update compares
    /// against the worst possible value.
    pub fn new(components: usize, groups: usize, rho: f64, eps_gate: f64) -> Result<Self> {
        if !(rho >= 0.0 && rho.is_finite()) {
            return Err(AsccError::invalid("rho must be finite and >= 0"));
        }
        if !eps_gate.is_finite() {
            return Err(AsccError::invalid("gate threshold must be finite"));
        }
        Ok(LocalWeightState {
            rho,
            eps_gate,
            prev: Array2::from_elem((components, groups), -1.0),
        })
    }

    pub fn with_defaults(components: usize, groups: usize) -> Self {
        Self::new(components, groups, DEFAULT_RHO, DEFAULT_GATE_EPS).expect("defaults are valid")
    }

    pub fn previous(&self, component: usize, group: usize) -> f64 {
        self.prev[(component, group)]
    }

    /// λ for the new similarity `d_t`; stores `d_t` for the next call.
    pub fn update(&mut self, component: usize, group: usize, d_t: f64) -> Result<f64> {
        let (c, g) = self.prev.dim();
        if component >= c || group >= g {
            return Err(AsccError::invalid(format!(
                "index ({component}, {group}) outside {c}x{g} state"
            )));
        }
        let d_t = d_t.clamp(-1.0, 1.0);
        let lambda = local_weight(d_t, self.prev[(component, group)], self.rho, self.eps_gate);
        self.prev[(component, group)] = d_t;
        Ok(lambda)
    }
}

/// λ from the current and previous similarity.
pub fn local_weight(d_t: f64, d_prev: f64, rho: f64, eps_gate: f64) -> f64 {
    gated_weight(d_t, gate(d_t, d_prev, eps_gate), rho)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocalLoss {
    pub loss: f64,
    /// `∂L/∂f_k`, one row per feature vector.
    pub grad: Array2<f64>,
}

/// `−Σ_k λ_k cos(f_k, P)`; rows of `features` are the `f_k`.
pub fn local_pixel_loss(features: &Array2<f64>, prototype: &[f64], weights: &[f64]) -> Result<LocalLoss> {
    let (k, c) = features.dim();
    if prototype.len() != c {
        return Err(AsccError::shape(format!("prototype of length {c}"), format!("length {}", prototype.len())));
    }
    if weights.len() != k {
        return Err(AsccError::shape(format!("{k} weights"), format!("{}", weights.len())));
    }
    if weights.iter().any(|w| !(0.0..=1.0).contains(w)) {
        return Err(AsccError::invalid("weights must lie in [0, 1]"));
    }
    let np = prototype.iter().map(|v| v * v).sum::<f64>().sqrt();
    if !(np > 0.0) {
        return Err(AsccError::invalid("zero-norm prototype"));
    }
    let mut loss = 0.0;
    let mut grad = Array2::zeros((k, c));
    for (row, (f, &lambda)) in features.rows().into_iter().zip(weights).enumerate() {
        let nf = f.dot(&f).sqrt();
        if !(nf > 0.0) {
            return Err(AsccError::invalid(format!("zero-norm feature vector {row}")));
        }
        let dot: f64 = f.iter().zip(prototype).map(|(a, b)| a * b).sum();
        let cos = dot / (nf * np);
        loss -= lambda * cos;
        for (j, g) in grad.row_mut(row).iter_mut().enumerate() {
            *g = -lambda * (prototype[j] / (np * nf) - cos * f[j] / (nf * nf));
        }
    }
    Ok(LocalLoss { loss, grad })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cosine_special_cases() {
        let a = [1.0, 2.0, -0.5];
        assert!((cosine_sim(&a, &a).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(cosine_sim(&[1.0, 0.0], &[0.0, 3.0]).unwrap(), 0.0);
        let neg: Vec<f64> = a.iter().map(|v| -v).collect();
        assert!((cosine_sim(&a, &neg).unwrap() + 1.0).abs() < 1e-15);
        assert!(cosine_sim(&[0.0, 0.0], &[1.0, 0.0]).is_err());
        assert!(cosine_sim(&[1.0], &[1.0, 0.0]).is_err());
    }

    #[test]
    fn no_negatives_gives_zero_loss() {
        let l = global_discrimination_loss(&[AnchorSims { positive: 0.3, negatives: vec![] }]).unwrap();
        assert_eq!(l.loss, 0.0);
    }

    #[test]
    fn symmetric_ratio_is_log_two() {
        let anchors = vec![
            AnchorSims { positive: 0.4, negatives: vec![0.4] },
            AnchorSims { positive: -0.2, negatives: vec![-0.2] },
        ];
        let l = global_discrimination_loss(&anchors).unwrap();
        assert!((l.loss - 2.0 * 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn empty_and_out_of_range_rejected() {
        assert!(global_discrimination_loss(&[]).is_err());
        assert!(global_discrimination_loss(&[AnchorSims { positive: 1.5, negatives: vec![] }]).is_err());
    }

    #[test]
    fn weight_examples() {
        assert_eq!(gated_weight(0.7, 0.0, 2.0), 1.0);
        assert_eq!(gated_weight(0.0, 1.0, 1.0), 0.0);
        assert!((gated_weight(-1.0, 1.0, 2.0) - 0.25).abs() < 1e-15);
        // Closed gate: no improvement.
        assert_eq!(local_weight(0.5, 0.6, 2.0, 0.05), 1.0);
        // Open gate on a large gain.
        assert_eq!(gate(-0.2, -0.9, 0.05), 1.0);
        assert!((local_weight(-0.2, -0.9, 1.0, 0.05) - 0.1).abs() < 1e-12);
    }

    #[test]
    fn state_tracks_previous_similarity() {
        let mut st = LocalWeightState::with_defaults(2, 3);
        assert_eq!(st.previous(1, 2), -1.0);
        let l = st.update(1, 2, -0.5).unwrap();
        assert!((l - 0.0625).abs() < 1e-12);
        assert_eq!(st.previous(1, 2), -0.5);
        assert_eq!(st.update(1, 2, -0.5).unwrap(), 1.0);
        assert!(st.update(2, 0, 0.0).is_err());
        assert!(LocalWeightState::new(1, 1, -1.0, 0.05).is_err());
    }

    #[test]
    fn local_loss_trivial_cases() {
        let p = [0.5, -1.0, 2.0];
        let f = Array2::from_shape_fn((4, 3), |(_, j)| p[j] * 3.0);
        let l = local_pixel_loss(&f, &p, &[1.0; 4]).unwrap();
        assert!((l.loss + 4.0).abs() < 1e-12);
        let l = local_pixel_loss(&f, &p, &[0.0; 4]).unwrap();
        assert_eq!(l.loss, 0.0);
        assert!(l.grad.iter().all(|&g| g == 0.0));
        assert!(local_pixel_loss(&f, &[0.0; 3], &[1.0; 4]).is_err());
        assert!(local_pixel_loss(&f, &p, &[1.5; 4]).is_err());
    }

    #[test]
    fn linear_schedule_gives_equal_parts() {
        let x = Array3::from_shape_fn((2, 3, 4), |(i, j, k)| (i + 2 * j + 3 * k) as f64 / 8.0);
        let k = 4;
        let mid: Vec<_> = (1..=k).map(|i| &x * (1.0 - i as f64 / k as f64)).collect();
        let parts = derive_approx_components(&FeatureStack::new(x.clone(), mid).unwrap());
        for p in parts {
            assert_eq!(p, &x / k as f64);
        }
    }
}
