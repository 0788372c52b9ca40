use std::fs;
use std::path::{Path, PathBuf};

use ascc_core::clustering::{kmeans_cluster, reconstruct_components, table_cluster, ClusterMode};
use ascc_core::extraction::{build_dictionary, omp_extract_with, DictionarySpec, OmpOptions};
use ascc_core::factorization::{NonNegMatrix, SolverConfig};
use ascc_core::io::{self, ExtractionFile, Matrix, PartitionFile, SceneFile};
use ascc_core::metrics::{self, SsimConfig};
use ascc_core::mlo::{decomposition_error, mlo_decompose, prepare_component, ComponentMatrix, MloDecomposition};
use ascc_core::pipeline::{run_pipeline, LayerError, PipelineConfig};
use ascc_core::scattering::{synthesize_scene, PhaseHistory, RadarGrid};
use ascc_core::{AsccError, Result};
use serde::Serialize;
use serde_json::{json, Value};

pub struct Output {
    pub json: Value,
    pub text: String,
}

impl Output {
    fn new<T: Serialize>(report: &T, text: String) -> Result<Self> {
        Ok(Output {
            json: serde_json::to_value(report)?,
            text,
        })
    }
}

pub fn load_grid(scene: Option<&Path>, grid: Option<&Path>) -> Result<RadarGrid> {
    let grid = match (scene, grid) {
        (Some(s), _) => io::read_json::<SceneFile>(s)?.grid,
        (None, Some(g)) => io::read_json::<RadarGrid>(g)?,
        (None, None) => RadarGrid::desk_default(),
    };
    grid.validate()?;
    Ok(grid)
}

pub fn synth(scene: &Path, out: &Path) -> Result<Output> {
    let scene: SceneFile = io::read_json(scene)?;
    scene.validate()?;
    let ph = synthesize_scene(&scene.scatterers, &scene.grid)?;
    io::write_matrix(out, &Matrix::Complex(ph.data.clone()))?;
    let (rows, cols) = ph.shape();
    Output::new(
        &json!({
            "out": out,
            "rows": rows,
            "cols": cols,
            "scatterers": scene.scatterers.len(),
        }),
        format!(
            "wrote {rows}x{cols} phase history of {} scatterers to {}",
            scene.scatterers.len(),
            out.display()
        ),
    )
}

pub fn extract(
    ph: &Path,
    grid: &RadarGrid,
    residual_tol: f64,
    max_scatterers: usize,
    refine: bool,
    out: &Path,
) -> Result<Output> {
    let ph = PhaseHistory::loaded(io::read_matrix(ph)?.into_complex(), grid)?;
    let dict = build_dictionary(grid, &DictionarySpec::desk_default(grid))?;
    let res = omp_extract_with(
        &ph,
        &dict,
        &OmpOptions {
            max_scatterers,
            residual_tol,
            refine,
        },
    )?;
    let file = ExtractionFile::from(&res);
    io::write_json(out, &file)?;
    Output::new(
        &file,
        format!(
            "extracted {} scatterers ({:?}), final residual {:.3e}",
            file.scatterers.len(),
            file.termination,
            file.residual_trace.last().copied().unwrap_or(0.0)
        ),
    )
}

pub fn cluster(ascs: &Path, grid: &RadarGrid, mode: ClusterMode, k: usize, seed: u64, out: &Path) -> Result<Output> {
    let ascs = io::read_json::<ExtractionFile>(ascs)?.parameter_sets();
    let partition = match mode {
        ClusterMode::Kmeans => kmeans_cluster(&ascs, k, seed)?,
        ClusterMode::Table => table_cluster(&ascs)?,
    };
    let partition = reconstruct_components(partition, grid)?;
    fs::create_dir_all(out)?;
    let file = PartitionFile::from(&partition);
    io::write_json(&out.join("ascc.json"), &file)?;
    for c in &partition.components {
        let img = c.image.as_ref().expect("components reconstructed");
        io::write_matrix(&out.join(io::component_file_name(&c.label)), &Matrix::Complex(img.data.clone()))?;
    }
    let sizes: Vec<String> = file
        .components
        .iter()
        .map(|c| format!("{}:{}", c.label, c.members.len()))
        .collect();
    Output::new(
        &file,
        format!("{} components [{}] in {}", file.components.len(), sizes.join(" "), out.display()),
    )
}

/// `component_<label>.nnmx` gives `<label>`; other names their stem.
fn component_label(path: &Path) -> String {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    stem.strip_prefix("component_").map(str::to_string).unwrap_or(stem)
}

/// r×r matrices are used as given; anything else is pooled to r×r.
pub fn load_component(path: &Path, r: usize) -> Result<ComponentMatrix> {
    let label = component_label(path);
    let m = io::read_matrix(path)?.to_real();
    if m.dim() == (r, r) {
        ComponentMatrix::new(label, m)
    } else {
        prepare_component(label, &m, r)
    }
}

#[derive(Serialize)]
struct ChannelReport {
    input: PathBuf,
    out: PathBuf,
    #[serde(flatten)]
    decomposition: io::DecompositionReport,
    first_layer_error: LayerError,
    later_layer_errors: Vec<LayerError>,
}

fn check_solvers(d: &MloDecomposition, rel_tol: f64) -> Result<()> {
    io::check_convergence(&d.first.convergence, rel_tol)?;
    for (i, l) in d.layers.iter().enumerate() {
        io::check_convergence(&l.convergence, rel_tol).map_err(|e| AsccError::Layer {
            layer: i + 1,
            source: Box::new(e),
        })?;
    }
    Ok(())
}

pub fn decompose(xs: &[PathBuf], components: &[PathBuf], r: usize, cfg: &SolverConfig, out: &Path) -> Result<Output> {
    let comps = components
        .iter()
        .map(|p| load_component(p, r))
        .collect::<Result<Vec<_>>>()?;
    let mut channels = Vec::with_capacity(xs.len());
    let mut failure = None;
    for (i, path) in xs.iter().enumerate() {
        let x = NonNegMatrix::new(io::read_matrix(path)?.to_real())?;
        let d = mlo_decompose(&x, &comps, r, cfg)?;
        let dir = if xs.len() == 1 {
            out.to_path_buf()
        } else {
            out.join(format!("channel_{i}"))
        };
        fs::create_dir_all(&dir)?;
        for (name, m) in io::decomposition_factors(&d) {
            io::write_matrix(&dir.join(name), &Matrix::Real(m.clone()))?;
        }
        let report = io::DecompositionReport::from(&d);
        io::write_json(&dir.join("decomposition.json"), &report)?;
        io::write_json(&dir.join("convergence.json"), &io::ConvergenceReport::from(&d.first))?;

        let first = decomposition_error(x.data(), &d.first.u, &d.first.w, &d.first.v)?;
        let later = d
            .layers
            .iter()
            .zip(d.cores())
            .map(|(l, wi)| Ok(LayerError::new(decomposition_error(wi, &l.u, &l.w_next, &l.v)?, wi.len())))
            .collect::<Result<Vec<_>>>()?;
        channels.push(ChannelReport {
            input: path.clone(),
            out: dir,
            decomposition: report,
            first_layer_error: LayerError::new(first, x.data().len()),
            later_layer_errors: later,
        });
        // Outputs are kept for inspection; the failure is reported at the end.
        if failure.is_none() {
            if let Err(e) = check_solvers(&d, cfg.rel_tol) {
                failure = Some(e);
            }
        }
    }
    if let Some(e) = failure {
        return Err(e);
    }
    let text = channels
        .iter()
        .map(|c| {
            format!(
                "{}: first-layer error {:.3e}, {} constrained layers, telescoping residual {:.3e}",
                c.input.display(),
                c.first_layer_error.squared_error,
                c.later_layer_errors.len(),
                c.decomposition.telescoping_residual
            )
        })
        .collect::<Vec<_>>()
        .join("\n");
    Output::new(&json!({ "channels": channels }), text)
}

pub fn eval(metric: &str, a: &Path, b: &Path, out: Option<&Path>) -> Result<Output> {
    let a = io::read_matrix(a)?.to_real();
    let b = io::read_matrix(b)?.to_real();
    let report = metrics::report(metric, &a, &b, &SsimConfig::default())?;
    if let Some(out) = out {
        io::write_json(out, &report)?;
    }
    Output::new(&report, format!("{} = {}", report.metric, report.value))
}

pub struct PipelineArgs {
    pub seed: u64,
    pub rank: usize,
    pub k_asc: usize,
    pub mode: ClusterMode,
    pub max_iters: usize,
    pub rel_tol: f64,
    pub residual_tol: f64,
    pub max_scatterers: usize,
    pub out: Option<PathBuf>,
}

pub fn pipeline(args: PipelineArgs) -> Result<Output> {
    let defaults = PipelineConfig::default();
    let cfg = PipelineConfig {
        seed: args.seed,
        k_asc: args.k_asc,
        rank: args.rank,
        mode: args.mode,
        solver: SolverConfig {
            max_iters: args.max_iters,
            rel_tol: args.rel_tol,
            seed: args.seed,
            ..defaults.solver
        },
        omp: OmpOptions {
            max_scatterers: args.max_scatterers,
            residual_tol: args.residual_tol,
            ..defaults.omp
        },
        out: args.out,
        ..defaults
    };
    let run = run_pipeline(&cfg)?;
    let rep = &run.report;
    let mut text: Vec<String> = rep
        .stages
        .iter()
        .map(|s| format!("{:<10} {:>8.3}s  {}", s.name, s.seconds, s.digest))
        .collect();
    text.push(format!(
        "{} planted, {} extracted, {} components ({}); first-layer error {:.3e}; ssim {:.6}",
        rep.scatterers_planted, rep.scatterers_extracted, rep.components, rep.mode, rep.first_layer_error.squared_error, rep.ssim
    ));
    Output::new(rep, text.join("\n"))
}
