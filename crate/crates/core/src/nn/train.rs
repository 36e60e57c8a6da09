use rand::seq::SliceRandom;

use super::adam::{adam_step, AdamState};
use super::model::{one_hot, InputTransform, Model};
use super::network::{backward, Parameters};
use super::spec::NetworkSpec;
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::physics::LabeledDataset;
use crate::rng::{derive_named, rng_from};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub lr_start: f64,
    pub lr_end: f64,
    pub batch_size: usize,
    /// Samples drawn over the whole run; the training set is reshuffled and
    /// revisited when this exceeds its size.
    pub total_samples: usize,
    pub seed: u64,
    /// Feed standardized counts instead of raw counts.
    pub standardize: bool,
    /// Steps between log entries.
    pub log_every: usize,
    pub exec: Execution,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr_start: 1e-3,
            lr_end: 1e-4,
            batch_size: 64,
            total_samples: 200_000,
            seed: 0,
            standardize: false,
            log_every: 500,
            exec: Execution::default(),
        }
    }
}

impl TrainConfig {
    pub fn steps(&self) -> usize {
        self.total_samples.div_ceil(self.batch_size)
    }

    /// Exponential interpolation from `lr_start` at step 0 to `lr_end` at the
    /// final step.
    pub fn learning_rate(&self, step: usize) -> f64 {
        let steps = self.steps();
        if steps <= 1 {
            return self.lr_start;
        }
        let frac = step as f64 / (steps - 1) as f64;
        self.lr_start * (self.lr_end / self.lr_start).powf(frac)
    }

    fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.total_samples == 0 {
            return Err(Error::Argument("batch_size and total_samples must be >= 1".into()));
        }
        if !(self.lr_end > 0.0 && self.lr_end <= self.lr_start) {
            return Err(Error::Argument(format!(
                "need 0 < lr_end <= lr_start, got {} / {}",
                self.lr_end, self.lr_start
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogEntry {
    pub step: usize,
    pub samples_seen: usize,
    /// Mean per-sample L1 loss since the previous entry.
    pub mean_loss: f64,
    pub lr: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Model,
    pub log: Vec<LogEntry>,
    pub held_out_accuracy: Option<f64>,
}

/// Adam on the summed L1 loss. Bit-reproducible for a fixed config.
pub fn train(
    spec: &NetworkSpec,
    data: &LabeledDataset,
    held_out: Option<&LabeledDataset>,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    spec.extents()?;
    if data.n_sub_bins != spec.input_length {
        return Err(Error::Shape(format!(
            "dataset has {} sub-bins, network expects {}",
            data.n_sub_bins, spec.input_length
        )));
    }
    let n_bright = data.labels().filter(|s| s.is_bright()).count();
    if n_bright == 0 || n_bright == data.len() {
        return Err(Error::Fit(format!(
            "training data needs both classes ({n_bright} bright of {})",
            data.len()
        )));
    }

    let input = if cfg.standardize {
        InputTransform::standardizing(data)
    } else {
        InputTransform::default()
    };
    let mut params = Parameters::glorot(spec, derive_named(cfg.seed, "init"));
    let mut adam = AdamState::new(&params);
    let mut shuffle_rng = rng_from(derive_named(cfg.seed, "shuffle"));
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(&mut shuffle_rng);
    let mut cursor = 0;

    let steps = cfg.steps();
    let width = spec.input_length;
    let mut log = Vec::new();
    let mut window_loss = 0.0;
    let mut window_samples = 0;
    let mut seen = 0;
    let mut x = Vec::with_capacity(cfg.batch_size * width);
    let mut targets = Vec::with_capacity(cfg.batch_size);

    for step in 0..steps {
        let this_batch = cfg.batch_size.min(cfg.total_samples - seen);
        x.clear();
        targets.clear();
        for _ in 0..this_batch {
            if cursor == order.len() {
                order.shuffle(&mut shuffle_rng);
                cursor = 0;
            }
            let t = &data.trajectories[order[cursor]];
            cursor += 1;
            input.apply(&t.counts, &mut x);
            targets.push(one_hot(t.true_label));
        }
        let (loss, grads) = backward(spec, &params, &x, &targets, cfg.exec)?;
        if !loss.is_finite() || !grads.max_abs().is_finite() {
            return Err(Error::Divergence { step, loss });
        }
        let lr = cfg.learning_rate(step);
        adam_step(&mut params, &grads, &mut adam, lr);
        seen += this_batch;
        window_loss += loss;
        window_samples += this_batch;
        if (step + 1) % cfg.log_every.max(1) == 0 || step + 1 == steps {
            log.push(LogEntry {
                step: step + 1,
                samples_seen: seen,
                mean_loss: window_loss / window_samples as f64,
                lr,
            });
            window_loss = 0.0;
            window_samples = 0;
        }
    }

    let model = Model {
        spec: spec.clone(),
        params,
        input,
    };
    let held_out_accuracy = held_out
        .map(|h| model.accuracy(h, cfg.exec))
        .transpose()?;
    Ok(TrainOutcome {
        model,
        log,
        held_out_accuracy,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_endpoints() {
        let cfg = TrainConfig {
            total_samples: 6400,
            ..TrainConfig::default()
        };
        assert_eq!(cfg.steps(), 100);
        assert!((cfg.learning_rate(0) - 1e-3).abs() < 1e-18);
        assert!((cfg.learning_rate(99) - 1e-4).abs() < 1e-15);
        assert!(cfg.learning_rate(50) < 1e-3 && cfg.learning_rate(50) > 1e-4);
    }

    #[test]
    fn bad_config_rejected() {
        let cfg = TrainConfig {
            lr_end: 1e-2,
            ..TrainConfig::default()
        };
        assert!(cfg.validate().is_err());
        let cfg = TrainConfig {
            batch_size: 0,
            ..TrainConfig::default()
        };
        assert!(cfg.validate().is_err());
    }
}
