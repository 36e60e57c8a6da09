use crate::error::{Error, Result};
use crate::kv::{Document, Section};
use crate::physics::{LabeledDataset, State};

/// Bright iff the total count reaches `threshold`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ThresholdModel {
    pub threshold: u64,
    /// Fingerprint of the training data's generating parameters.
    pub fitted_on: u64,
}

pub fn threshold_classify(counts: &[u32], model: &ThresholdModel) -> State {
    let sum: u64 = counts.iter().map(|&c| u64::from(c)).sum();
    State::from_bright(sum >= model.threshold)
}

/// Integer cutoff maximizing training accuracy; the smallest one on ties.
pub fn fit_threshold(data: &LabeledDataset) -> Result<ThresholdModel> {
    let sums: Vec<(u64, bool)> = data
        .trajectories
        .iter()
        .map(|t| (t.total(), t.true_label.is_bright()))
        .collect();
    let n_bright = sums.iter().filter(|s| s.1).count();
    if n_bright == 0 || n_bright == sums.len() {
        return Err(Error::Fit(format!(
            "need both classes, got {n_bright} bright of {}",
            sums.len()
        )));
    }
    let max_sum = sums.iter().map(|s| s.0).max().unwrap_or(0) as usize;
    let mut bright_hist = vec![0usize; max_sum + 1];
    let mut dark_hist = vec![0usize; max_sum + 1];
    for &(s, bright) in &sums {
        if bright {
            bright_hist[s as usize] += 1;
        } else {
            dark_hist[s as usize] += 1;
        }
    }
    // correct(t) = #bright with sum >= t + #dark with sum < t
    let mut bright_at_or_above = n_bright;
    let mut dark_below = 0usize;
    let mut best = (bright_at_or_above + dark_below, 0usize);
    for t in 1..=max_sum + 1 {
        bright_at_or_above -= bright_hist[t - 1];
        dark_below += dark_hist[t - 1];
        let correct = bright_at_or_above + dark_below;
        if correct > best.0 {
            best = (correct, t);
        }
    }
    Ok(ThresholdModel {
        threshold: best.1 as u64,
        fitted_on: data.params_fingerprint,
    })
}

impl ThresholdModel {
    pub fn to_section(&self) -> Section {
        let mut s = Section::new("threshold");
        s.set("threshold", self.threshold);
        s.set("fitted_on", format!("{:016x}", self.fitted_on));
        s
    }

    pub fn from_document(doc: &Document) -> Result<Self> {
        let s = doc.section("threshold")?;
        Ok(Self {
            threshold: s.parse("threshold")?,
            fitted_on: s.parse_hex("fitted_on")?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::physics::PhotonTrajectory;

    fn dataset(items: &[(State, Vec<u32>)]) -> LabeledDataset {
        LabeledDataset {
            trajectories: items
                .iter()
                .map(|(s, c)| PhotonTrajectory {
                    counts: c.clone(),
                    hidden_path: None,
                    true_label: *s,
                    sub_bin_duration: 3e-6,
                    params_fingerprint: 0,
                })
                .collect(),
            seed: 0,
            class_balance: 0.5,
            first_index: 0,
            n_sub_bins: items[0].1.len(),
            sub_bin_duration: 3e-6,
            params_fingerprint: 0,
        }
    }

    fn accuracy(data: &LabeledDataset, t: u64) -> f64 {
        let m = ThresholdModel {
            threshold: t,
            fitted_on: 0,
        };
        data.trajectories
            .iter()
            .filter(|x| threshold_classify(&x.counts, &m) == x.true_label)
            .count() as f64
            / data.len() as f64
    }

    #[test]
    fn separable_case_picks_smallest_optimal() {
        let d = dataset(&[
            (State::Bright, vec![3, 2]),
            (State::Bright, vec![4, 4]),
            (State::Dark, vec![0, 1]),
            (State::Dark, vec![0, 0]),
        ]);
        assert_eq!(fit_threshold(&d).unwrap().threshold, 2);
    }

    #[test]
    fn tie_returns_smallest_enumerated_optimum() {
        let d = dataset(&[(State::Bright, vec![3]), (State::Dark, vec![3])]);
        // Enumerate every cutoff independently of the fitting routine.
        let accs: Vec<f64> = (0..=4).map(|t| accuracy(&d, t)).collect();
        let best = accs.iter().cloned().fold(f64::MIN, f64::max);
        let smallest = accs.iter().position(|&a| a == best).unwrap() as u64;
        assert_eq!(accs, vec![0.5; 5]);
        assert_eq!(fit_threshold(&d).unwrap().threshold, smallest);
    }

    #[test]
    fn single_class_is_an_error() {
        let d = dataset(&[(State::Dark, vec![0]), (State::Dark, vec![1])]);
        assert!(matches!(fit_threshold(&d), Err(Error::Fit(_))));
    }

    #[test]
    fn boundary_convention() {
        let m = ThresholdModel {
            threshold: 1,
            fitted_on: 0,
        };
        assert_eq!(threshold_classify(&[0, 0, 0], &m), State::Dark);
        let m = ThresholdModel {
            threshold: 4,
            fitted_on: 0,
        };
        assert_eq!(threshold_classify(&[1, 3], &m), State::Bright);
        assert_eq!(threshold_classify(&[1, 2], &m), State::Dark);
    }
}
