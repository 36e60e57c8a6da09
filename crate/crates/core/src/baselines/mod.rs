//! Threshold and maximum-likelihood discriminators.

mod hmm;
mod threshold;

pub use hmm::{
    brute_force_posterior, forward_posterior, hmm_loglik, ml_classify, ml_classify_adaptive,
    AdaptiveVerdict, HmmModel, MlVerdict, ENUMERATION_LIMIT,
};
pub use threshold::{fit_threshold, threshold_classify, ThresholdModel};

use crate::physics::State;

/// Counts in, verdict out.
pub trait Discriminator: Sync {
    fn name(&self) -> &str;

    fn classify(&self, counts: &[u32]) -> State;
}

impl Discriminator for ThresholdModel {
    fn name(&self) -> &str {
        "threshold"
    }

    fn classify(&self, counts: &[u32]) -> State {
        threshold_classify(counts, self)
    }
}

impl Discriminator for HmmModel {
    fn name(&self) -> &str {
        "max-likelihood"
    }

    fn classify(&self, counts: &[u32]) -> State {
        ml_classify(counts, self).state
    }
}
