//! File formats: the NNMX binary matrix container and the JSON documents
//! exchanged between commands.
//!
//! NNMX layout (little endian):
//!
//! ```text
//! "NNMX" | u32 version = 1 | u8 complex | u64 rows | u64 cols | f64 data…
//! ```
//!
//! Data is row-major; complex entries are stored as interleaved `re, im`.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use ndarray::Array2;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::clustering::{AsccPartition, ClusterMode};
use crate::error::{AsccError, Result};
use crate::extraction::{ExtractionResult, Termination};
use crate::factorization::{Convergence, SolverTermination, TriFactorLayer};
use crate::mlo::MloDecomposition;
use crate::scattering::{AscParameterSet, RadarGrid};

pub const NNMX_MAGIC: &[u8; 4] = b"NNMX";
pub const NNMX_VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 1 + 8 + 8;

#[derive(Debug, Clone, PartialEq)]
pub enum Matrix {
    Real(Array2<f64>),
    Complex(Array2<Complex64>),
}

impl Matrix {
    pub fn dim(&self) -> (usize, usize) {
        match self {
            Matrix::Real(a) => a.dim(),
            Matrix::Complex(a) => a.dim(),
        }
    }

    pub fn is_complex(&self) -> bool {
        matches!(self, Matrix::Complex(_))
    }

    /// Real matrices as-is, complex ones by magnitude.
    pub fn to_real(&self) -> Array2<f64> {
        match self {
            Matrix::Real(a) => a.clone(),
            Matrix::Complex(a) => a.mapv(|c| c.norm()),
        }
    }

    pub fn into_complex(self) -> Array2<Complex64> {
        match self {
            Matrix::Real(a) => a.mapv(|v| Complex64::new(v, 0.0)),
            Matrix::Complex(a) => a,
        }
    }
}

fn header(complex: bool, (rows, cols): (usize, usize), payload: usize) -> Vec<u8> {
    let mut buf = Vec::with_capacity(HEADER_LEN + payload);
    buf.extend_from_slice(NNMX_MAGIC);
    buf.extend_from_slice(&NNMX_VERSION.to_le_bytes());
    buf.push(complex as u8);
    buf.extend_from_slice(&(rows as u64).to_le_bytes());
    buf.extend_from_slice(&(cols as u64).to_le_bytes());
    buf
}

pub fn encode_real(a: &Array2<f64>) -> Vec<u8> {
    let mut buf = header(false, a.dim(), a.len() * 8);
    for v in a.iter() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    buf
}

pub fn encode_complex(a: &Array2<Complex64>) -> Vec<u8> {
    let mut buf = header(true, a.dim(), a.len() * 16);
    for c in a.iter() {
        buf.extend_from_slice(&c.re.to_le_bytes());
        buf.extend_from_slice(&c.im.to_le_bytes());
    }
    buf
}

pub fn encode(m: &Matrix) -> Vec<u8> {
    match m {
        Matrix::Real(a) => encode_real(a),
        Matrix::Complex(a) => encode_complex(a),
    }
}

pub fn decode(bytes: &[u8]) -> Result<Matrix> {
    let fmt = |msg: String| AsccError::Format(msg);
    if bytes.len() < HEADER_LEN {
        return Err(fmt(format!("NNMX header truncated ({} bytes)", bytes.len())));
    }
    if &bytes[..4] != NNMX_MAGIC {
        return Err(fmt("bad NNMX magic".into()));
    }
    let u64_at = |o: usize| u64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != NNMX_VERSION {
        return Err(fmt(format!("unsupported NNMX version {version}")));
    }
    let complex = match bytes[8] {
        0 => false,
        1 => true,
        f => return Err(fmt(format!("bad NNMX complex flag {f}"))),
    };
    let (rows, cols) = (u64_at(9), u64_at(17));
    let width: u64 = if complex { 16 } else { 8 };
    let expected = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(width))
        .ok_or_else(|| fmt(format!("NNMX dimensions {rows}x{cols} overflow")))?;
    let body = &bytes[HEADER_LEN..];
    if body.len() as u64 != expected {
        return Err(fmt(format!(
            "NNMX payload is {} bytes, expected {expected} for {rows}x{cols}",
            body.len()
        )));
    }
    let vals: Vec<f64> = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let shape = (rows as usize, cols as usize);
    let bad_shape = |e: ndarray::ShapeError| fmt(e.to_string());
    Ok(if complex {
        let data = vals.chunks_exact(2).map(|p| Complex64::new(p[0], p[1])).collect();
        Matrix::Complex(Array2::from_shape_vec(shape, data).map_err(bad_shape)?)
    } else {
        Matrix::Real(Array2::from_shape_vec(shape, vals).map_err(bad_shape)?)
    })
}

pub fn write_matrix(path: &Path, m: &Matrix) -> Result<()> {
    fs::File::create(path)?.write_all(&encode(m))?;
    Ok(())
}

pub fn read_matrix(path: &Path) -> Result<Matrix> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    decode(&bytes)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneFile {
    pub grid: RadarGrid,
    pub scatterers: Vec<AscParameterSet>,
}

impl SceneFile {
    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        for (i, s) in self.scatterers.iter().enumerate() {
            s.validate()
                .map_err(|e| AsccError::invalid(format!("scatterer #{i}: {e}")))?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScattererRecord {
    #[serde(flatten)]
    pub params: AscParameterSet,
    pub coeff_re: f64,
    pub coeff_im: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractionFile {
    pub scatterers: Vec<ScattererRecord>,
    pub residual_trace: Vec<f64>,
    pub termination: Termination,
}

impl ExtractionFile {
    pub fn parameter_sets(&self) -> Vec<AscParameterSet> {
        self.scatterers.iter().map(|s| s.params).collect()
    }
}

impl From<&ExtractionResult> for ExtractionFile {
    fn from(r: &ExtractionResult) -> Self {
        ExtractionFile {
            scatterers: r
                .scatterers
                .iter()
                .map(|s| ScattererRecord {
                    params: s.params,
                    coeff_re: s.coefficient.re,
                    coeff_im: s.coefficient.im,
                })
                .collect(),
            residual_trace: r.residual_trace.clone(),
            termination: r.termination,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentRecord {
    pub label: String,
    pub members: Vec<usize>,
    pub centroid: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionFile {
    pub mode: ClusterMode,
    pub k: usize,
    pub components: Vec<ComponentRecord>,
}

impl From<&AsccPartition> for PartitionFile {
    fn from(p: &AsccPartition) -> Self {
        PartitionFile {
            mode: p.mode,
            k: p.k,
            components: p
                .components
                .iter()
                .map(|c| ComponentRecord {
                    label: c.label.clone(),
                    members: c.members.clone(),
                    centroid: c.centroid.clone(),
                })
                .collect(),
        }
    }
}

pub fn component_file_name(label: &str) -> String {
    format!("component_{label}.nnmx")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub objective_trace: Vec<f64>,
    pub orth_u: f64,
    pub orth_v: f64,
    pub iters: usize,
    pub termination: SolverTermination,
}

impl From<&TriFactorLayer> for ConvergenceReport {
    fn from(l: &TriFactorLayer) -> Self {
        ConvergenceReport {
            objective_trace: l.convergence.objective_trace.clone(),
            orth_u: l.orth_u,
            orth_v: l.orth_v,
            iters: l.convergence.iters,
            termination: l.convergence.termination,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSummary {
    pub objective_final: f64,
    pub orth_v: f64,
    pub iters: usize,
    pub violation_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecompositionReport {
    pub rank: usize,
    pub layers: Vec<LayerSummary>,
    pub telescoping_residual: f64,
}

impl From<&MloDecomposition> for DecompositionReport {
    fn from(d: &MloDecomposition) -> Self {
        DecompositionReport {
            rank: d.first.w.nrows(),
            layers: d
                .layers
                .iter()
                .map(|l| LayerSummary {
                    objective_final: l.convergence.final_objective(),
                    orth_v: l.orth_v,
                    iters: l.convergence.iters,
                    violation_norm: l.violation_norm,
                })
                .collect(),
            telescoping_residual: d.telescoping_residual,
        }
    }
}

/// Factor matrices of a decomposition with their file names:
/// `U1, W1, V1` then `U<i+1>, W<i+1>, V<i+1>` per constrained layer.
pub fn decomposition_factors(d: &MloDecomposition) -> Vec<(String, &Array2<f64>)> {
    let mut out = vec![
        ("U1.nnmx".to_string(), &d.first.u),
        ("W1.nnmx".to_string(), &d.first.w),
        ("V1.nnmx".to_string(), &d.first.v),
    ];
    for (i, l) in d.layers.iter().enumerate() {
        let n = i + 2;
        out.push((format!("U{n}.nnmx"), &l.u));
        out.push((format!("W{n}.nnmx"), &l.w_next));
        out.push((format!("V{n}.nnmx"), &l.v));
    }
    out
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

/// Convergence failure in the CLI's sense, as an error.
pub fn check_convergence(c: &Convergence, rel_tol: f64) -> Result<()> {
    if c.failed(rel_tol) {
        return Err(AsccError::NotConverged {
            iters: c.iters,
            rel_change: c.final_rel_change,
        });
    }
    Ok(())
}
