//! `corrseg`: batch evaluation, robustness sweeps, co-clustering and the
//! annotation server.

use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use corrseg::clustering::KMeansOptions;
use corrseg::correspondence::FlipAxis;
use corrseg::eval::{run_cluster, run_eval, run_robustness, EvalOptions, TaskManifest};
use corrseg_service::ServiceConfig;
use tracing_subscriber::EnvFilter;

#[derive(Debug, Parser)]
#[command(name = "corrseg", version, about = "Prompt propagation by dense-feature correspondence")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Score every model x target cell of a task manifest.
    Eval {
        #[command(flatten)]
        common: Common,
    },
    /// Localization with the template mirrored along each axis, next to the baseline.
    Robustness {
        #[command(flatten)]
        common: Common,
        /// Comma-separated axes: h, v. Empty runs the baseline only.
        #[arg(long, value_delimiter = ',', num_args = 0..)]
        axes: Vec<FlipAxis>,
    },
    /// Co-cluster template and target features; export label overlays.
    Cluster {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        k: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 100)]
        max_iterations: usize,
    },
    /// Run the annotation REST service.
    Serve {
        #[arg(long, env = "CORRSEG_LISTEN", default_value = "127.0.0.1:8080")]
        listen: SocketAddr,
        /// Default DFG1 feature root for sessions.
        #[arg(long, env = "CORRSEG_PROVIDER_ROOT")]
        provider_root: Option<PathBuf>,
        /// Mask predictor base URL; sessions fall back to oracle labels without it.
        #[arg(long, env = "CORRSEG_PREDICTOR_ENDPOINT")]
        predictor_endpoint: Option<String>,
    },
}

#[derive(Debug, Args)]
struct Common {
    #[arg(long)]
    manifest: PathBuf,
    /// Comma-separated model ids; defaults to the manifest's list.
    #[arg(long, value_delimiter = ',')]
    models: Option<Vec<String>>,
    /// Worker threads (default: hardware threads).
    #[arg(long)]
    jobs: Option<usize>,
}

impl Common {
    fn load(&self) -> corrseg::Result<(TaskManifest, EvalOptions)> {
        let manifest = TaskManifest::load(&self.manifest)?;
        let options = EvalOptions {
            models: self.models.clone(),
            jobs: self.jobs,
        };
        Ok((manifest, options))
    }
}

/// Exit status: 0 all cells succeeded, 1 some cell failed, 2 the run could not start.
fn finish(failed: usize, total: usize, written: &str) -> ExitCode {
    println!("{written}");
    if failed == 0 {
        println!("{total} cells, all succeeded");
        ExitCode::SUCCESS
    } else {
        println!("{total} cells, {failed} failed");
        ExitCode::from(1)
    }
}

fn run(command: Command) -> Result<ExitCode, Box<dyn std::error::Error>> {
    match command {
        Command::Eval { common } => {
            let (manifest, options) = common.load()?;
            let summary = run_eval(&manifest, &options)?;
            let written = format!("report: {}", summary.output_dir.join("report.csv").display());
            Ok(finish(summary.failed_cells(), summary.cells.len(), &written))
        }
        Command::Robustness { common, axes } => {
            let (manifest, options) = common.load()?;
            let summary = run_robustness(&manifest, &axes, &options)?;
            let written = format!("report: {}", summary.output_dir.join("robustness.csv").display());
            Ok(finish(summary.failed_cells(), summary.cells.len(), &written))
        }
        Command::Cluster {
            common,
            k,
            seed,
            max_iterations,
        } => {
            let (manifest, options) = common.load()?;
            let kmeans = KMeansOptions {
                max_iterations,
                ..KMeansOptions::default()
            };
            let results = run_cluster(&manifest, k, seed, kmeans, &options)?;
            let failed = results.iter().filter(|r| r.failure.is_some()).count();
            let written = format!("overlays: {}", manifest.output_dir().join("cluster").display());
            Ok(finish(failed, results.len(), &written))
        }
        Command::Serve {
            listen,
            provider_root,
            predictor_endpoint,
        } => {
            let runtime = tokio::runtime::Runtime::new()?;
            let config = ServiceConfig {
                provider_root,
                predictor_endpoint,
            };
            runtime
                .block_on(corrseg_service::serve(listen, config))
                .map_err(|e| format!("serving on {listen}: {e}"))?;
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("info")))
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
