//! Seeded end-to-end run: synthesize → extract → cluster → decompose →
//! evaluate, with a report of per-stage timings and output digests.

use std::path::PathBuf;
use std::time::Instant;

use ndarray::Array2;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::clustering::{
    kmeans_cluster, reconstruct_components, table_cluster, AsccPartition, ClusterMode, DEFAULT_K_ASC,
};
use crate::error::{AsccError, Result};
use crate::extraction::{build_dictionary, omp_extract_with, AscDictionary, DictionarySpec, ExtractionResult, OmpOptions};
use crate::factorization::{onmtf_first_layer, NonNegMatrix, SolverConfig};
use crate::io::{self, ExtractionFile, PartitionFile};
use crate::metrics::{mse, ssim, SsimConfig};
use crate::mlo::{constrained_chain, decomposition_error, prepare_component_image, ComponentMatrix, MloDecomposition, DEFAULT_RANK};
use crate::scattering::{form_image, synthesize_scene, AscParameterSet, PhaseHistory, RadarGrid};

pub const STAGES: [&str; 5] = ["synthesize", "extract", "cluster", "decompose", "evaluate"];
pub const DEFAULT_SCENE_SIZE: usize = 10;
/// Iteration budget of the pipeline's solvers. Constrained layers on image
/// data converge sublinearly and can still be moving at 5000 iterations.
pub const PIPELINE_MAX_ITERS: usize = 20_000;
/// Fraction of the largest feasible component scale actually used.
pub const KAPPA_MARGIN: f64 = 0.5;

/// (α, L) pairs of the default dictionary that name a geometric type.
const TABLE_SHAPES: [(f64, f64); 8] = [
    (1.0, 0.6),
    (1.0, 0.0),
    (0.5, 0.6),
    (0.5, 0.0),
    (0.0, 0.0),
    (0.0, 0.6),
    (-0.5, 0.6),
    (-1.0, 0.0),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub seed: u64,
    pub k_asc: usize,
    pub rank: usize,
    pub mode: ClusterMode,
    pub scene_size: usize,
    /// Its `seed` is replaced by the pipeline seed.
    pub solver: SolverConfig,
    pub omp: OmpOptions,
    pub grid: RadarGrid,
    /// Defaults to the desk dictionary of `grid`.
    pub dictionary: Option<DictionarySpec>,
    /// Artifact directory; nothing is written when `None`.
    pub out: Option<PathBuf>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 0,
            k_asc: DEFAULT_K_ASC,
            rank: DEFAULT_RANK,
            mode: ClusterMode::Kmeans,
            scene_size: DEFAULT_SCENE_SIZE,
            solver: SolverConfig {
                max_iters: PIPELINE_MAX_ITERS,
                ..SolverConfig::default()
            },
            omp: OmpOptions::default(),
            grid: RadarGrid::desk_default(),
            dictionary: None,
            out: None,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k_asc < 1 {
            return Err(AsccError::invalid("K_asc must be >= 1"));
        }
        if self.rank < 1 {
            return Err(AsccError::invalid("rank must be >= 1"));
        }
        if self.scene_size < 1 {
            return Err(AsccError::invalid("scene size must be >= 1"));
        }
        self.solver.validate()?;
        self.grid.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub name: String,
    pub seconds: f64,
    /// SHA-256 of the stage's serialized outputs.
    pub digest: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerError {
    /// Squared Frobenius reconstruction error.
    pub squared_error: f64,
    pub mean_per_entry: f64,
}

impl LayerError {
    pub fn new(squared_error: f64, entries: usize) -> Self {
        LayerError {
            squared_error,
            mean_per_entry: squared_error / entries.max(1) as f64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub seed: u64,
    pub mode: ClusterMode,
    pub stages: Vec<StageReport>,
    pub scatterers_planted: usize,
    pub scatterers_extracted: usize,
    pub components: usize,
    /// Scale applied to the pooled component images before peeling.
    pub kappa: f64,
    /// `‖X − U₁W₁V₁ᵀ‖²`.
    pub first_layer_error: LayerError,
    /// `‖W_i − U_{i+1}W_{i+1}V_{i+1}ᵀ‖²` for every later layer.
    pub later_layer_errors: Vec<LayerError>,
    pub telescoping_residual: f64,
    pub ssim: f64,
    pub mse: f64,
}

impl RunReport {
    /// Stage digests only; timings vary between runs.
    pub fn digests(&self) -> Vec<&str> {
        self.stages.iter().map(|s| s.digest.as_str()).collect()
    }
}

/// All artifacts of a run, in memory.
#[derive(Debug, Clone)]
pub struct PipelineRun {
    pub report: RunReport,
    pub scene: Vec<AscParameterSet>,
    pub phase_history: PhaseHistory,
    pub extraction: ExtractionResult,
    pub partition: AsccPartition,
    pub decomposition: MloDecomposition,
    pub original: Array2<f64>,
    pub reconstruction: Array2<f64>,
}

/// `count` on-lattice scatterers of table-classifiable shape, positions at
/// least two lattice steps apart, pairwise atom coherence at most 0.2 and
/// amplitudes in `[1, 5)`.
pub fn synthetic_scene(dict: &AscDictionary, count: usize, seed: u64) -> Result<Vec<AscParameterSet>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let candidates: Vec<usize> = (0..dict.len())
        .filter(|&k| {
            let p = &dict.atoms()[k].params;
            p.phi_bar == 0.0 && p.gamma == 0.0 && TABLE_SHAPES.contains(&(p.alpha, p.length))
        })
        .collect();
    if candidates.is_empty() {
        return Err(AsccError::invalid("dictionary has no table-classifiable atoms"));
    }
    let mut chosen: Vec<usize> = Vec::new();
    for _ in 0..100_000 {
        if chosen.len() == count {
            break;
        }
        let k = candidates[rng.random_range(0..candidates.len())];
        let idx = dict.atoms()[k].index;
        let ok = chosen.iter().all(|&c| {
            let o = dict.atoms()[c].index;
            let far = idx[0].abs_diff(o[0]).max(idx[1].abs_diff(o[1])) >= 2;
            let ip: Complex64 = dict.vector(c).iter().zip(dict.vector(k)).map(|(a, b)| a.conj() * b).sum();
            far && ip.norm() <= 0.2
        });
        if ok {
            chosen.push(k);
        }
    }
    if chosen.len() < count {
        return Err(AsccError::invalid(format!(
            "could only place {} of {count} separated scatterers",
            chosen.len()
        )));
    }
    Ok(chosen
        .iter()
        .map(|&k| dict.atoms()[k].params.with_amplitude(rng.random_range(1.0..5.0)))
        .collect())
}

fn sha256(parts: &[&[u8]]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update(p);
    }
    hex::encode(h.finalize())
}

fn json_bytes<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    Ok(serde_json::to_vec_pretty(value)?)
}

/// Largest `κ` with `κ Σ_i P_i ≤ W₁` entrywise, times [`KAPPA_MARGIN`], so
/// every peel `W_i − κP_i` stays non-negative.
pub fn feasible_kappa(w1: &Array2<f64>, comps: &[ComponentMatrix]) -> f64 {
    if comps.is_empty() {
        return 1.0;
    }
    let mut total = Array2::<f64>::zeros(w1.dim());
    for c in comps {
        total += &c.data;
    }
    let limit = w1
        .iter()
        .zip(total.iter())
        .filter(|(_, &s)| s > 0.0)
        .map(|(&w, &s)| w / s)
        .fold(f64::INFINITY, f64::min);
    if limit.is_finite() {
        KAPPA_MARGIN * limit
    } else {
        1.0
    }
}

struct Writer {
    dir: Option<PathBuf>,
}

impl Writer {
    fn bytes(&self, name: &str, bytes: &[u8]) -> Result<()> {
        if let Some(dir) = &self.dir {
            std::fs::write(dir.join(name), bytes)?;
        }
        Ok(())
    }
}

pub fn run_pipeline(cfg: &PipelineConfig) -> Result<PipelineRun> {
    cfg.validate()?;
    let solver = SolverConfig {
        seed: cfg.seed,
        ..cfg.solver
    };
    let out = Writer { dir: cfg.out.clone() };
    if let Some(dir) = &cfg.out {
        std::fs::create_dir_all(dir)?;
    }
    let mut stages = Vec::with_capacity(STAGES.len());
    let mut stage = |name: &str, start: Instant, digest: String| {
        stages.push(StageReport {
            name: name.to_string(),
            seconds: start.elapsed().as_secs_f64(),
            digest,
        })
    };

    let t = Instant::now();
    let spec = cfg
        .dictionary
        .clone()
        .unwrap_or_else(|| DictionarySpec::desk_default(&cfg.grid));
    let dict = build_dictionary(&cfg.grid, &spec)?;
    let scene = synthetic_scene(&dict, cfg.scene_size, cfg.seed)?;
    let ph = synthesize_scene(&scene, &cfg.grid)?;
    let scene_json = json_bytes(&io::SceneFile {
        grid: cfg.grid.clone(),
        scatterers: scene.clone(),
    })?;
    let ph_bytes = io::encode_complex(&ph.data);
    out.bytes("scene.json", &scene_json)?;
    out.bytes("ph.nnmx", &ph_bytes)?;
    stage(STAGES[0], t, sha256(&[&scene_json, &ph_bytes]));

    let t = Instant::now();
    let extraction = omp_extract_with(&ph, &dict, &cfg.omp)?;
    let ascs = extraction.parameter_sets();
    let ascs_json = json_bytes(&ExtractionFile::from(&extraction))?;
    out.bytes("ascs.json", &ascs_json)?;
    stage(STAGES[1], t, sha256(&[&ascs_json]));

    let t = Instant::now();
    let partition = match cfg.mode {
        ClusterMode::Kmeans => kmeans_cluster(&ascs, cfg.k_asc, cfg.seed)?,
        ClusterMode::Table => table_cluster(&ascs)?,
    };
    let partition = reconstruct_components(partition, &cfg.grid)?;
    let partition_json = json_bytes(&PartitionFile::from(&partition))?;
    out.bytes("ascc.json", &partition_json)?;
    let mut parts = vec![partition_json];
    for c in &partition.components {
        let img = c.image.as_ref().expect("components reconstructed");
        let bytes = io::encode_complex(&img.data);
        out.bytes(&io::component_file_name(&c.label), &bytes)?;
        parts.push(bytes);
    }
    let refs: Vec<&[u8]> = parts.iter().map(|p| p.as_slice()).collect();
    stage(STAGES[2], t, sha256(&refs));

    let t = Instant::now();
    let original = form_image(&ph)?.magnitude();
    let x = NonNegMatrix::new(original.clone())?;
    let pooled = partition
        .components
        .iter()
        .map(|c| prepare_component_image(c.label.clone(), c.image.as_ref().unwrap(), cfg.rank))
        .collect::<Result<Vec<_>>>()?;
    let first = onmtf_first_layer(&x, cfg.rank, &solver)?;
    io::check_convergence(&first.convergence, solver.rel_tol)?;
    let kappa = feasible_kappa(&first.w, &pooled);
    let scaled: Vec<ComponentMatrix> = pooled
        .into_iter()
        .map(|mut c| {
            c.data *= kappa;
            c
        })
        .collect();
    let (layers, telescoping_residual) = constrained_chain(&NonNegMatrix::new(first.w.clone())?, &scaled, &solver)?;
    let decomposition = MloDecomposition {
        first,
        layers,
        components: scaled,
        telescoping_residual,
    };
    for (i, l) in decomposition.layers.iter().enumerate() {
        io::check_convergence(&l.convergence, solver.rel_tol).map_err(|e| AsccError::Layer {
            layer: i + 1,
            source: Box::new(e),
        })?;
    }
    let first_layer_error = LayerError::new(
        decomposition_error(&original, &decomposition.first.u, &decomposition.first.w, &decomposition.first.v)?,
        original.len(),
    );
    let cores = decomposition.cores();
    let later_layer_errors = decomposition
        .layers
        .iter()
        .zip(&cores)
        .map(|(l, wi)| Ok(LayerError::new(decomposition_error(wi, &l.u, &l.w_next, &l.v)?, wi.len())))
        .collect::<Result<Vec<_>>>()?;
    let report_json = json_bytes(&io::DecompositionReport::from(&decomposition))?;
    let convergence_json = json_bytes(&io::ConvergenceReport::from(&decomposition.first))?;
    out.bytes("decomposition.json", &report_json)?;
    out.bytes("convergence.json", &convergence_json)?;
    let mut parts = vec![report_json, convergence_json];
    for (name, m) in io::decomposition_factors(&decomposition) {
        let bytes = io::encode_real(m);
        out.bytes(&name, &bytes)?;
        parts.push(bytes);
    }
    let refs: Vec<&[u8]> = parts.iter().map(|p| p.as_slice()).collect();
    stage(STAGES[3], t, sha256(&refs));

    let t = Instant::now();
    let mut composite = PhaseHistory::zeros(cfg.grid.shape());
    for c in &partition.components {
        composite.data += &synthesize_scene(&c.member_params, &cfg.grid)?.data;
    }
    let reconstruction = form_image(&composite)?.magnitude();
    let ssim_cfg = SsimConfig::default();
    let ssim_value = ssim(&reconstruction, &original, &ssim_cfg)?;
    let mse_value = mse(&reconstruction, &original)?;
    let eval_json = json_bytes(&[
        crate::metrics::report("ssim", &reconstruction, &original, &ssim_cfg)?,
        crate::metrics::report("mse", &reconstruction, &original, &ssim_cfg)?,
    ])?;
    let recon_bytes = io::encode_real(&reconstruction);
    out.bytes("reconstruction.nnmx", &recon_bytes)?;
    out.bytes("metrics.json", &eval_json)?;
    stage(STAGES[4], t, sha256(&[&eval_json, &recon_bytes]));

    let report = RunReport {
        seed: cfg.seed,
        mode: cfg.mode,
        stages,
        scatterers_planted: scene.len(),
        scatterers_extracted: ascs.len(),
        components: partition.components.len(),
        kappa,
        first_layer_error,
        later_layer_errors,
        telescoping_residual: decomposition.telescoping_residual,
        ssim: ssim_value,
        mse: mse_value,
    };
    out.bytes("report.json", &json_bytes(&report)?)?;

    Ok(PipelineRun {
        report,
        scene,
        phase_history: ph,
        extraction,
        partition,
        decomposition,
        original,
        reconstruction,
    })
}
