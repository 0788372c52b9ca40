use std::path::PathBuf;
use std::process::ExitCode;

use ascc_core::clustering::{ClusterMode, DEFAULT_K_ASC};
use ascc_core::extraction::{DEFAULT_MAX_SCATTERERS, DEFAULT_RESIDUAL_TOL};
use ascc_core::factorization::SolverConfig;
use ascc_core::mlo::DEFAULT_RANK;
use ascc_core::pipeline::PIPELINE_MAX_ITERS;
use ascc_core::AsccError;
use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;

const EXIT_INPUT: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;

#[derive(Parser)]
#[command(name = "ascc", version, about = "ASC synthesis, extraction, clustering and multi-layer NMTF")]
struct Cli {
    /// Print the machine-readable report on stdout.
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize a phase history from a scene file.
    Synth {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Extract scatterers from a phase history by OMP.
    Extract {
        ph: PathBuf,
        #[command(flatten)]
        grid: GridArgs,
        #[arg(long, default_value_t = DEFAULT_RESIDUAL_TOL)]
        residual_tol: f64,
        #[arg(long, default_value_t = DEFAULT_MAX_SCATTERERS)]
        max_scatterers: usize,
        /// Plain OMP without same-position refinement.
        #[arg(long)]
        classical: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Partition extracted scatterers into components and form their images.
    Cluster {
        ascs: PathBuf,
        #[command(flatten)]
        grid: GridArgs,
        #[arg(long, value_enum, default_value_t = Mode::Kmeans)]
        mode: Mode,
        #[arg(long, default_value_t = DEFAULT_K_ASC)]
        k_asc: usize,
        #[arg(long)]
        seed: u64,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Multi-layer decomposition of one or more channel matrices.
    Decompose {
        /// Channel matrices, decomposed independently.
        #[arg(required = true)]
        x: Vec<PathBuf>,
        /// Component matrices peeled in the given order.
        #[arg(long = "component")]
        components: Vec<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_RANK)]
        rank: usize,
        #[arg(long)]
        seed: u64,
        #[command(flatten)]
        solver: SolverArgs,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare two matrices with mse, ssim or ms-ssim.
    Eval {
        metric: String,
        a: PathBuf,
        b: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Synthesize, extract, cluster, decompose and evaluate a seeded scene.
    Pipeline {
        #[arg(long)]
        seed: u64,
        #[arg(long, default_value_t = DEFAULT_RANK)]
        rank: usize,
        #[arg(long, default_value_t = DEFAULT_K_ASC)]
        k_asc: usize,
        #[arg(long, value_enum, default_value_t = Mode::Kmeans)]
        mode: Mode,
        #[arg(long, default_value_t = PIPELINE_MAX_ITERS)]
        max_iters: usize,
        #[arg(long, default_value_t = SolverConfig::default().rel_tol)]
        rel_tol: f64,
        #[arg(long, default_value_t = DEFAULT_RESIDUAL_TOL)]
        residual_tol: f64,
        #[arg(long, default_value_t = DEFAULT_MAX_SCATTERERS)]
        max_scatterers: usize,
        /// Artifact directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct GridArgs {
    /// Scene file whose grid is used.
    #[arg(long, conflicts_with = "grid")]
    scene: Option<PathBuf>,
    /// Grid file ({"fc_hz","f_hz","phi_rad","v_mps"}); the desk grid if
    /// neither this nor --scene is given.
    #[arg(long)]
    grid: Option<PathBuf>,
}

#[derive(Args)]
struct SolverArgs {
    #[arg(long, default_value_t = SolverConfig::default().max_iters)]
    max_iters: usize,
    #[arg(long, default_value_t = SolverConfig::default().rel_tol)]
    rel_tol: f64,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Kmeans,
    Table,
}

impl From<Mode> for ClusterMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Kmeans => ClusterMode::Kmeans,
            Mode::Table => ClusterMode::Table,
        }
    }
}

fn run(cli: Cli) -> Result<commands::Output, AsccError> {
    match cli.command {
        Command::Synth { scene, out } => commands::synth(&scene, &out),
        Command::Extract {
            ph,
            grid,
            residual_tol,
            max_scatterers,
            classical,
            out,
        } => {
            let grid = commands::load_grid(grid.scene.as_deref(), grid.grid.as_deref())?;
            commands::extract(&ph, &grid, residual_tol, max_scatterers, !classical, &out)
        }
        Command::Cluster {
            ascs,
            grid,
            mode,
            k_asc,
            seed,
            out,
        } => {
            let grid = commands::load_grid(grid.scene.as_deref(), grid.grid.as_deref())?;
            commands::cluster(&ascs, &grid, mode.into(), k_asc, seed, &out)
        }
        Command::Decompose {
            x,
            components,
            rank,
            seed,
            solver,
            out,
        } => {
            let cfg = SolverConfig {
                max_iters: solver.max_iters,
                rel_tol: solver.rel_tol,
                seed,
                ..SolverConfig::default()
            };
            commands::decompose(&x, &components, rank, &cfg, &out)
        }
        Command::Eval { metric, a, b, out } => commands::eval(&metric, &a, &b, out.as_deref()),
        Command::Pipeline {
            seed,
            rank,
            k_asc,
            mode,
            max_iters,
            rel_tol,
            residual_tol,
            max_scatterers,
            out,
        } => commands::pipeline(commands::PipelineArgs {
            seed,
            rank,
            k_asc,
            mode: mode.into(),
            max_iters,
            rel_tol,
            residual_tol,
            max_scatterers,
            out,
        }),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let json = cli.json;
    match run(cli) {
        Ok(out) => {
            if json {
                println!("{}", serde_json::to_string_pretty(&out.json).expect("report serializes"));
            } else {
                println!("{}", out.text);
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numerical() { EXIT_NUMERICAL } else { EXIT_INPUT })
        }
    }
}
