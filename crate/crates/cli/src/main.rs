//! `ionreadout` command-line driver.
//!
//! Exit status: 0 on success, 1 when `--assert` finds a violated threshold,
//! 2 on usage, parse or input errors.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "ionreadout", version, about = "Photon-count qubit readout workbench")]
pub struct Cli {
    /// Master seed; every derived stream is a function of it.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output file, or output directory for `bench`.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker thread cap.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Exit with status 1 when an acceptance threshold is violated.
    #[arg(long, global = true)]
    pub assert: bool,
    /// key=value file; command-line flags take precedence.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args, Default)]
pub struct PhysicsArgs {
    /// Base physics: software (100 x 3 us), embedded (10 x 30 us) or toy
    /// (embedded binning without flips or background).
    #[arg(long)]
    pub physics: Option<String>,
    /// Physics parameter file, applied on top of the base.
    #[arg(long)]
    pub params: Option<PathBuf>,
    /// Single field override, e.g. `--param dark_rate=500`. Repeatable.
    #[arg(long = "param", value_name = "KEY=VALUE")]
    pub param: Vec<String>,
}

#[derive(Debug, Clone, Args, Default)]
pub struct CounterArgs {
    #[arg(long)]
    pub clock_mhz: Option<f64>,
    #[arg(long)]
    pub ratio: Option<u32>,
    #[arg(long)]
    pub gate_ns: Option<u64>,
    #[arg(long)]
    pub gate_hz: Option<f64>,
    #[arg(long)]
    pub sub_bins: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a labeled dataset file.
    Simulate {
        #[command(flatten)]
        physics: PhysicsArgs,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        balance: Option<f64>,
        /// Index of the first shot in the seed stream.
        #[arg(long)]
        first_index: Option<u64>,
    },
    /// Fit physics parameters to the threshold accuracy target.
    Calibrate {
        #[command(flatten)]
        physics: PhysicsArgs,
        #[arg(long)]
        target: Option<f64>,
        #[arg(long)]
        tolerance: Option<f64>,
        #[arg(long)]
        n_train: Option<usize>,
        #[arg(long)]
        n_test: Option<usize>,
    },
    /// Fit the photon-count threshold on a dataset.
    FitThreshold {
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Build the likelihood model from physics parameters.
    FitMl {
        #[command(flatten)]
        physics: PhysicsArgs,
        /// Dataset whose class balance sets the prior.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Train a network and write its weight file.
    Train {
        #[command(flatten)]
        physics: PhysicsArgs,
        /// Training dataset; generated from the physics when absent.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Held-out dataset; generated from the physics when absent.
        #[arg(long)]
        test: Option<PathBuf>,
        /// fcnn, cnn, onboard-fcnn or linear.
        #[arg(long)]
        method: Option<String>,
        #[arg(long)]
        n_train: Option<usize>,
        #[arg(long)]
        n_test: Option<usize>,
        #[arg(long)]
        passes: Option<usize>,
        #[arg(long)]
        standardize: bool,
    },
    /// Score a weight, threshold or likelihood file on a dataset.
    Eval {
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
        /// Also run the quantized network and compare verdicts.
        #[arg(long)]
        fixed_point: bool,
    },
    /// Convert a weight file to Q16.16.
    Quantize {
        #[arg(long)]
        weights: Option<PathBuf>,
    },
    /// Counts to TTL edges and back through the divider and counter.
    TtlRoundtrip {
        #[command(flatten)]
        physics: PhysicsArgs,
        #[command(flatten)]
        counter: CounterArgs,
        /// Dataset to replay; generated from the physics when absent.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        phases: Option<usize>,
    },
    /// Run a reproduction preset: table1, fig4, fig6, fig7 or onboard.
    Bench {
        preset: String,
        #[command(flatten)]
        physics: PhysicsArgs,
        #[command(flatten)]
        counter: CounterArgs,
        #[arg(long)]
        n_train: Option<usize>,
        #[arg(long)]
        n_test: Option<usize>,
        #[arg(long)]
        passes: Option<usize>,
        /// Comma-separated laser powers in microwatt.
        #[arg(long)]
        powers: Option<String>,
        #[arg(long)]
        latency_trials: Option<usize>,
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
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
