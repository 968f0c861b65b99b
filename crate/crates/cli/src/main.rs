mod commands;
mod spec;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "srsi", version, about = "Sequential risk set inference experiments")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone, Default)]
pub struct GlobalArgs {
    /// Overrides the run seed (or the first benchmark seed).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory; defaults to `output.dir` in the spec.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads for the rayon pool.
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// Replaces the replication budget (benchmark: the budget list).
    #[arg(long, global = true)]
    pub budget_override: Option<u64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run one procedure and write its trace, risk set and checkpoint.
    Run {
        spec: PathBuf,
        /// Overrides `run.variant`.
        #[arg(long)]
        variant: Option<String>,
    },
    /// Repeat runs over seeds and variants and score them against the oracle.
    Benchmark { spec: PathBuf },
    /// Recompute risk sets from a checkpoint over a grid of alpha and delta.
    Reclassify {
        checkpoint: PathBuf,
        /// Spec providing the default grids.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long, value_delimiter = ',')]
        alphas: Option<Vec<f64>>,
        #[arg(long, value_delimiter = ',')]
        deltas: Option<Vec<f64>>,
    },
    /// Print raw replications of one solution under the posterior mode.
    Simulate {
        spec: PathBuf,
        /// Solution label.
        #[arg(long)]
        solution: String,
        #[arg(long, default_value_t = 10)]
        reps: usize,
    },
    /// Write synthetic real-world data files.
    GenData { spec: PathBuf },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.global.workers {
        if n == 0 {
            eprintln!("error: --workers must be at least 1");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    let g = &cli.global;
    let outcome = match &cli.command {
        Command::Run { spec, variant } => commands::run(g, spec, variant.as_deref()),
        Command::Benchmark { spec } => commands::benchmark(g, spec),
        Command::Reclassify {
            checkpoint,
            spec,
            alphas,
            deltas,
        } => commands::reclassify(g, checkpoint, spec.as_deref(), alphas.clone(), deltas.clone()),
        Command::Simulate { spec, solution, reps } => commands::simulate(g, spec, solution, *reps),
        Command::GenData { spec } => commands::gen_data(g, spec),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(commands::exit_code(&e))
        }
    }
}
