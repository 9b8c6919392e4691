//! `phaseforge`: phase-order exploration and suggestion from the command line.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 domain failure
//! (no valid candidate, degenerate features, empty knowledge base).

mod commands;
mod suite;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{error::ErrorKind, Args, Parser, Subcommand, ValueEnum};
use phaseforge::explorer::ExplorationConfig;

use commands::{Failure, Settings};
use suite::BackendKind;

#[derive(Parser)]
#[command(name = "phaseforge", version, about = "Compiler phase-order exploration and suggestion")]
struct Cli {
    #[command(flatten)]
    opts: Options,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum BackendArg {
    Simulator,
    Toolchain,
}

#[derive(Args)]
struct Options {
    #[arg(long, global = true, value_enum, default_value = "simulator")]
    backend: BackendArg,
    /// Pass catalog file.
    #[arg(long, global = true)]
    catalog: Option<PathBuf>,
    /// Suite manifest (JSON).
    #[arg(long, global = true)]
    suite: Option<PathBuf>,
    /// Toolchain spec (JSON) for `--backend toolchain`.
    #[arg(long, global = true, env = "PHASEFORGE_TOOLCHAIN")]
    toolchain: Option<PathBuf>,
    /// Knowledge base file [default: <out-dir>/kb.json].
    #[arg(long, global = true)]
    kb: Option<PathBuf>,
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,
    #[arg(long, global = true, default_value_t = ExplorationConfig::default().seed)]
    seed: u64,
    #[arg(long, global = true, default_value_t = 10_000)]
    num_sequences: usize,
    #[arg(long, global = true, default_value_t = 256)]
    max_len: usize,
    #[arg(long, global = true, default_value_t = 10)]
    top_k: usize,
    #[arg(long, global = true, default_value_t = 30)]
    final_reps: usize,
    #[arg(long, global = true, default_value_t = 30)]
    final_random_inputs: usize,
    #[arg(long, global = true, default_value_t = 0.01)]
    rtol: f64,
    #[arg(long, global = true, default_value_t = 1e-6)]
    atol: f64,
    /// Simulator timeout as a multiple of the kernel's baseline time.
    #[arg(long, global = true, default_value_t = 4.0)]
    timeout_factor: f64,
    /// Slack allowed when dropping passes during reduction.
    #[arg(long, global = true, default_value_t = 0.01)]
    epsilon: f64,
    #[arg(long, global = true, default_value_t = 1000)]
    trials: usize,
    /// Suggestions to evaluate [suggest: 3; loo: all other kernels].
    #[arg(long, global = true)]
    k: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Explore, finalize and reduce phase orders; update the knowledge base.
    Explore {
        /// Kernel ids from the suite [default: all].
        kernels: Vec<String>,
    },
    /// Rank knowledge-base orders for a kernel by feature similarity.
    Suggest {
        kernel: String,
        /// Print suggestions without evaluating them.
        #[arg(long)]
        dry_run: bool,
    },
    /// Studies over the knowledge base and recorded runs.
    Experiments {
        #[command(subcommand)]
        which: Experiment,
    },
}

#[derive(Subcommand)]
enum Experiment {
    /// Apply every kernel's best order to every kernel (matrix.csv).
    CrossApply,
    /// Speed distribution over permutations of each best order (permute.csv).
    Permute {
        kernels: Vec<String>,
        #[arg(long, default_value_t = 1000)]
        permutations: usize,
        #[arg(long, default_value_t = 0.05)]
        bucket_width: f64,
    },
    /// Leave-one-out comparison of kNN, random and IterGraph (loo.csv).
    Loo,
    /// Status fractions from records.csv (failures.csv).
    Failures {
        #[arg(long)]
        kernel: Option<String>,
    },
}

fn settings(o: Options) -> Settings {
    Settings {
        backend: match o.backend {
            BackendArg::Simulator => BackendKind::Simulator,
            BackendArg::Toolchain => BackendKind::Toolchain,
        },
        catalog: o.catalog,
        suite: o.suite,
        toolchain: o.toolchain,
        kb: o.kb,
        out_dir: o.out_dir,
        exploration: ExplorationConfig {
            num_sequences: o.num_sequences,
            max_len: o.max_len,
            seed: o.seed,
            top_k: o.top_k,
            final_reps: o.final_reps,
            final_random_inputs: o.final_random_inputs,
            rtol: o.rtol,
            atol: o.atol,
        },
        timeout_factor: o.timeout_factor,
        epsilon: o.epsilon,
        trials: o.trials,
        k: o.k,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    let s = settings(cli.opts);
    let result = match &cli.command {
        Command::Explore { kernels } => commands::cmd_explore(&s, kernels),
        Command::Suggest { kernel, dry_run } => commands::cmd_suggest(&s, kernel, *dry_run),
        Command::Experiments { which } => match which {
            Experiment::CrossApply => commands::cmd_cross_apply(&s),
            Experiment::Permute {
                kernels,
                permutations,
                bucket_width,
            } => commands::cmd_permute(&s, kernels, *permutations, *bucket_width),
            Experiment::Loo => commands::cmd_loo(&s),
            Experiment::Failures { kernel } => commands::cmd_failures(&s, kernel.as_deref()),
        },
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Domain(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
