//! `recnet`: prepare data, train, evaluate, rank, and compute bounds.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(
    name = "recnet",
    version,
    about = "Pairwise neural ranking for implicit feedback"
)]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug)]
pub struct Global {
    /// TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Root seed; overrides the config's.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for evaluation (default: available cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Binarize, filter and split a raw interaction file.
    Prepare {
        /// Raw `user \t item \t value \t timestamp` file.
        #[arg(long)]
        raw: Option<PathBuf>,
        /// `tsv_rating` or `tsv_click`.
        #[arg(long)]
        format: Option<String>,
    },
    /// Train a model on a prepared dataset.
    Train {
        /// Prepared dataset directory.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// MAP@ℓ of a checkpoint on the test partition.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
        /// `interacted` or `all`.
        #[arg(long)]
        setting: Option<String>,
        /// Comma-separated cutoffs, e.g. `1,5,10`.
        #[arg(long, value_delimiter = ',')]
        cutoffs: Option<Vec<usize>>,
        /// Leave out users without a relevant candidate.
        #[arg(long)]
        skip_no_relevant: bool,
    },
    /// Top-k lists per test user.
    Rank {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
        /// Comma-separated user ids (default: every test user).
        #[arg(long, value_delimiter = ',')]
        users: Option<Vec<String>>,
        #[arg(long, default_value_t = 10)]
        k: usize,
        #[arg(long)]
        setting: Option<String>,
    },
    /// Generalization-bound report for one or more checkpoints.
    Bound {
        #[arg(long, required = true, num_args = 1..)]
        checkpoint: Vec<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        delta: Option<f64>,
        /// `lp`, `exhaustive` or `diagonal`.
        #[arg(long)]
        method: Option<String>,
    },
    /// Fractional chromatic number of a single-user rook grid.
    Cover {
        n_pos: usize,
        n_neg: usize,
        #[arg(long, default_value = "lp")]
        method: String,
    },
    /// Wilcoxon rank-sum test between two per-user AP tables.
    Compare {
        a: PathBuf,
        b: PathBuf,
        #[arg(long, default_value_t = 1)]
        cutoff: usize,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
