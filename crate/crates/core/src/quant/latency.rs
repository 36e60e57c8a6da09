//! Wall-clock timing of fixed-point inference.

use std::fmt;
use std::hint::black_box;
use std::time::Instant;

use rand::Rng as _;

use super::fixed::FixedPointNet;
use crate::error::{Error, Result};
use crate::rng::rng_from;

const WARMUP: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatencyStats {
    pub trials: usize,
    pub median_ns: u64,
    pub p99_ns: u64,
    pub mean_ns: f64,
    pub min_ns: u64,
}

impl fmt::Display for LatencyStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "trials {}", self.trials)?;
        writeln!(f, "median_ns {}", self.median_ns)?;
        writeln!(f, "p99_ns {}", self.p99_ns)?;
        writeln!(f, "mean_ns {:.1}", self.mean_ns)?;
        writeln!(f, "min_ns {}", self.min_ns)?;
        writeln!(f, "reference_board_inference_ns 21000")?;
        write!(f, "reference_board_pc_inference_ns 72000")
    }
}

/// Times `n_trials` single-shot inferences on random counts in `0..30`.
/// Runs on the calling thread.
pub fn latency_bench(net: &FixedPointNet, n_trials: usize, seed: u64) -> Result<LatencyStats> {
    if n_trials == 0 {
        return Err(Error::EmptyStatistics);
    }
    let mut rng = rng_from(seed);
    let inputs: Vec<Vec<u32>> = (0..n_trials.min(4096))
        .map(|_| (0..net.input_length).map(|_| rng.gen_range(0..30)).collect())
        .collect();
    for x in inputs.iter().cycle().take(WARMUP) {
        black_box(net.classify(black_box(x))?);
    }
    let mut samples = Vec::with_capacity(n_trials);
    for x in inputs.iter().cycle().take(n_trials) {
        let t0 = Instant::now();
        black_box(net.classify(black_box(x))?);
        samples.push(t0.elapsed().as_nanos() as u64);
    }
    samples.sort_unstable();
    let rank = |q: f64| samples[((q * n_trials as f64).ceil() as usize).clamp(1, n_trials) - 1];
    Ok(LatencyStats {
        trials: n_trials,
        median_ns: rank(0.5),
        p99_ns: rank(0.99),
        mean_ns: samples.iter().sum::<u64>() as f64 / n_trials as f64,
        min_ns: samples[0],
    })
}
