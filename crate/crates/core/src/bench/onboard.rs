//! End-to-end embedded path: train the small network, quantize it, and
//! check fixed-point verdicts and the TTL front end against the float model.

use std::fmt::{self, Write as _};

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::nn::{train, Model, TrainConfig};
use crate::physics::{DataSplit, PhysicsParams};
use crate::quant::{
    divider_counter, quantize, simulate_ttl, simulated_boundaries, CounterConfig, FixedPointNet,
    IntervalBound,
};
use crate::rng::{derive_named, derive_seed, rng_from};

use super::experiments::{Method, ONBOARD_HIDDEN};

/// Largest count per sub-bin the interval bound is computed for.
pub const BOUND_MAX_COUNT: u32 = 50;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OnboardBudget {
    pub n_train: usize,
    pub n_eval: usize,
    pub passes: usize,
    pub gate_phases: usize,
    pub exec: Execution,
}

impl Default for OnboardBudget {
    fn default() -> Self {
        Self {
            n_train: 200_000,
            n_eval: 100_000,
            passes: Method::OnboardFcnn.default_passes(),
            gate_phases: 1000,
            exec: Execution::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OnboardSummary {
    pub n: usize,
    pub float_correct: usize,
    pub fixed_correct: usize,
    pub agreements: usize,
    pub saturation_events: u64,
    pub max_count: u32,
    pub bound: IntervalBound,
    pub max_quantization_error: f64,
    /// Shots whose counts survived the TTL round trip exactly.
    pub ttl_exact: usize,
    /// Shots where the verdict from recovered counts equals the direct one.
    pub pipeline_agreements: usize,
    pub gate_phases: usize,
    pub max_boundary_error_ns: u64,
}

impl OnboardSummary {
    pub fn agreement(&self) -> f64 {
        self.agreements as f64 / self.n as f64
    }

    pub fn float_accuracy(&self) -> f64 {
        self.float_correct as f64 / self.n as f64
    }

    pub fn fixed_accuracy(&self) -> f64 {
        self.fixed_correct as f64 / self.n as f64
    }
}

impl fmt::Display for OnboardSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut s = String::new();
        let pct = |x: f64| 100.0 * x;
        writeln!(s, "shots {}", self.n)?;
        writeln!(s, "float_accuracy {:.4}%", pct(self.float_accuracy()))?;
        writeln!(s, "fixed_accuracy {:.4}%", pct(self.fixed_accuracy()))?;
        writeln!(s, "agreement {:.4}% ({} of {})", pct(self.agreement()), self.agreements, self.n)?;
        writeln!(s, "max_quantization_error {:e}", self.max_quantization_error)?;
        writeln!(
            s,
            "interval_bound max_count={} max_activation={:.3} max_accumulator={:.3} saturation_free={}",
            self.bound.max_count,
            self.bound.max_activation,
            self.bound.max_accumulator,
            self.bound.saturation_free()
        )?;
        writeln!(s, "largest_observed_count {}", self.max_count)?;
        writeln!(s, "saturation_events {}", self.saturation_events)?;
        writeln!(s, "ttl_roundtrip_exact {} of {}", self.ttl_exact, self.n)?;
        writeln!(s, "pipeline_verdicts_equal {} of {}", self.pipeline_agreements, self.n)?;
        write!(
            s,
            "max_boundary_error_ns {} over {} gate phases",
            self.max_boundary_error_ns, self.gate_phases
        )?;
        f.write_str(&s)
    }
}

/// Largest distance between a divider boundary and its nominal time
/// `gate_start + k * sub_bin`, over random gate phases.
pub fn max_boundary_error(cfg: &CounterConfig, phases: usize, seed: u64) -> Result<u64> {
    cfg.validate()?;
    let mut rng = rng_from(seed);
    let mut worst = 0;
    for _ in 0..phases {
        let start: u64 = rng.gen_range(0..10_000_000);
        let got = simulated_boundaries(start, cfg);
        if got.len() != cfg.n_sub_bins {
            return Err(Error::Argument(format!(
                "divider produced {} boundaries, expected {}",
                got.len(),
                cfg.n_sub_bins
            )));
        }
        for (k, t) in got.into_iter().enumerate() {
            worst = worst.max(t.abs_diff(start + k as u64 * cfg.sub_bin_ns()));
        }
    }
    Ok(worst)
}

pub fn train_onboard(params: &PhysicsParams, split: &DataSplit, budget: &OnboardBudget, seed: u64) -> Result<Model> {
    let spec = crate::nn::build_fcnn(params.n_sub_bins, ONBOARD_HIDDEN)?;
    let cfg = TrainConfig {
        total_samples: budget.passes * split.train.len(),
        seed: derive_named(seed, Method::OnboardFcnn.name()),
        exec: budget.exec,
        ..TrainConfig::default()
    };
    Ok(train(&spec, &split.train, None, &cfg)?.model)
}

/// Compares a quantized network with its float original on `split.test`
/// and runs every held-out shot through the TTL front end.
pub fn check_onboard(
    model: &Model,
    net: &FixedPointNet,
    split: &DataSplit,
    counter: &CounterConfig,
    gate_phases: usize,
    exec: Execution,
    seed: u64,
) -> Result<OnboardSummary> {
    let ttl_seed = derive_named(seed, "ttl");
    let per_shot = exec.map_range(split.test.len(), |i| -> Result<[u64; 6]> {
        let t = &split.test.trajectories[i];
        let float = model.predict(&t.counts)?;
        let fixed = net.classify(&t.counts)?;
        let stream = simulate_ttl(t, counter, derive_seed(ttl_seed, i as u64))?;
        let recovered = divider_counter(&stream, counter);
        let exact = recovered[..] == t.counts[..];
        let via_ttl = net.classify(&recovered[..t.counts.len()])?;
        Ok([
            u64::from(float == t.true_label),
            u64::from(fixed.0 == t.true_label),
            u64::from(float == fixed.0),
            u64::from(fixed.1),
            u64::from(exact),
            u64::from(via_ttl.0 == fixed.0),
        ])
    });
    let mut sums = [0u64; 6];
    for r in per_shot {
        for (s, v) in sums.iter_mut().zip(r?) {
            *s += v;
        }
    }
    let max_count = split
        .test
        .trajectories
        .iter()
        .flat_map(|t| t.counts.iter().copied())
        .max()
        .unwrap_or(0);
    Ok(OnboardSummary {
        n: split.test.len(),
        float_correct: sums[0] as usize,
        fixed_correct: sums[1] as usize,
        agreements: sums[2] as usize,
        saturation_events: sums[3],
        max_count,
        bound: net.activation_bounds(BOUND_MAX_COUNT),
        max_quantization_error: net.max_quantization_error,
        ttl_exact: sums[4] as usize,
        pipeline_agreements: sums[5] as usize,
        gate_phases,
        max_boundary_error_ns: max_boundary_error(counter, gate_phases, derive_named(seed, "phases"))?,
    })
}

/// Trains, quantizes and checks the embedded network at `params`, whose
/// binning must match `counter`.
pub fn onboard_pipeline(
    params: &PhysicsParams,
    counter: &CounterConfig,
    budget: &OnboardBudget,
    seed: u64,
) -> Result<(Model, FixedPointNet, OnboardSummary)> {
    let split = DataSplit::generate(params, budget.n_train, budget.n_eval, seed, budget.exec)?;
    let model = train_onboard(params, &split, budget, seed)?;
    let net = quantize(&model)?;
    let summary = check_onboard(&model, &net, &split, counter, budget.gate_phases, budget.exec, seed)?;
    Ok((model, net, summary))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn boundary_error_within_one_tick() {
        let e = max_boundary_error(&CounterConfig::default(), 50, 3).unwrap();
        assert!(e < 10);
    }

    #[test]
    fn small_pipeline_runs() {
        let params = PhysicsParams::embedded_preset();
        let budget = OnboardBudget {
            n_train: 3000,
            n_eval: 2000,
            passes: 2,
            gate_phases: 10,
            exec: Execution::Parallel,
        };
        let (_, net, s) = onboard_pipeline(&params, &CounterConfig::default(), &budget, 2).unwrap();
        assert_eq!(net.param_count(), 262);
        assert_eq!(s.ttl_exact, s.n);
        assert_eq!(s.pipeline_agreements, s.n);
        assert!(s.agreement() > 0.99);
    }
}
