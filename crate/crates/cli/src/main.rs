use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use qdr_cli::{commands, exit_code, Global};

#[derive(Parser)]
#[command(
    name = "qdr",
    version,
    about = "Dilate stochastic models, compress their quantum samples, and compare rates"
)]
struct Cli {
    /// Master seed; every stochastic step derives its own stream from it.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,

    /// Directory for emitted artifacts.
    #[arg(long, global = true, env = "QDR_OUT_DIR", default_value = "out")]
    out_dir: PathBuf,

    /// Worker threads for parallel rows (default: all cores).
    #[arg(long, global = true, env = "QDR_THREADS")]
    threads: Option<usize>,

    /// Fixed-point solver tolerance.
    #[arg(long, global = true, default_value_t = 1e-13)]
    tolerance: f64,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Dilate one model and compress it at a single bond budget.
    Compress {
        #[arg(long)]
        hmm: PathBuf,
        #[arg(long)]
        d_tilde: usize,
        /// sequential | prob-ascending | prob-descending | random
        #[arg(long, default_value = "sequential")]
        strategy: String,
        /// Seed for the random labelling strategy (derived from --seed if omitted).
        #[arg(long)]
        strategy_seed: Option<u64>,
        #[arg(long, default_value_t = 3)]
        restarts: usize,
    },
    /// Run a model x strategy x budget x seed grid from a JSON config; resumable.
    Sweep {
        #[arg(long)]
        config: PathBuf,
    },
    /// Quantum compression against greedy state merging on one model.
    CompareBaseline {
        #[arg(long)]
        hmm: PathBuf,
        #[arg(long, value_delimiter = ',', required = true)]
        d_tilde: Vec<usize>,
        #[arg(long, value_delimiter = ',', required = true)]
        merge_states: Vec<usize>,
        #[arg(long, default_value = "sequential")]
        strategy: String,
        #[arg(long, default_value_t = 3)]
        restarts: usize,
    },
    /// Fit a model to symbol sequences, or to feature vectors via a codebook.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        states: usize,
        #[arg(long, default_value_t = 200)]
        max_iters: usize,
        #[arg(long, default_value_t = 1e-7)]
        train_tol: f64,
        /// random | flat
        #[arg(long, default_value = "random")]
        init: String,
        /// Treat the data file as numeric feature rows and quantize first.
        #[arg(long)]
        features: bool,
        /// Codebook size for --features.
        #[arg(long)]
        clusters: Option<usize>,
        /// The feature file starts with a header line.
        #[arg(long)]
        header: bool,
    },
    /// Check spectrum bound certificates for a stored state.
    Certify {
        #[arg(long)]
        imps: PathBuf,
        /// Single budget to certify (default: every budget from 2 up).
        #[arg(long)]
        d_tilde: Option<usize>,
    },
    /// Draw sequences from a stored quantum model.
    Sample {
        #[arg(long)]
        qhmm: PathBuf,
        #[arg(long)]
        length: usize,
        #[arg(long, default_value_t = 1)]
        count: usize,
    },
    /// Co-emission divergence rate between two stored models, as JSON on stdout.
    Cdr {
        #[arg(long)]
        model_a: PathBuf,
        #[arg(long)]
        model_b: PathBuf,
        /// Also report finite-length overlap rates up to this length.
        #[arg(long)]
        finite_l: Option<usize>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(threads) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
        {
            eprintln!("error: thread pool: {e}");
            return ExitCode::from(1);
        }
    }
    let g = Global {
        seed: cli.seed,
        out_dir: cli.out_dir,
        tolerance: cli.tolerance,
    };
    let outcome = match cli.command {
        Command::Compress {
            hmm,
            d_tilde,
            strategy,
            strategy_seed,
            restarts,
        } => commands::cmd_compress(&g, &hmm, d_tilde, &strategy, strategy_seed, restarts),
        Command::Sweep { config } => commands::cmd_sweep(&g, &config),
        Command::CompareBaseline {
            hmm,
            d_tilde,
            merge_states,
            strategy,
            restarts,
        } => commands::cmd_compare_baseline(&g, &hmm, &d_tilde, &merge_states, &strategy, restarts),
        Command::Train {
            data,
            states,
            max_iters,
            train_tol,
            init,
            features,
            clusters,
            header,
        } => commands::cmd_train(
            &g, &data, states, max_iters, train_tol, &init, features, clusters, header,
        ),
        Command::Certify { imps, d_tilde } => commands::cmd_certify(&g, &imps, d_tilde),
        Command::Sample {
            qhmm,
            length,
            count,
        } => commands::cmd_sample(&g, &qhmm, length, count),
        Command::Cdr {
            model_a,
            model_b,
            finite_l,
        } => commands::cmd_cdr(&g, &model_a, &model_b, finite_l),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
