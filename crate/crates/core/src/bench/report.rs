//! Binomial intervals and per-experiment result files.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

/// Two-sided 95% normal quantile.
pub const Z95: f64 = 1.959_963_984_540_054;

/// Wilson score interval for `correct` successes out of `n`.
pub fn wilson_interval(correct: usize, n: usize) -> Result<(f64, f64)> {
    if n == 0 {
        return Err(Error::EmptyStatistics);
    }
    if correct > n {
        return Err(Error::Argument(format!("{correct} successes out of {n}")));
    }
    let n_f = n as f64;
    let p = correct as f64 / n_f;
    let z2 = Z95 * Z95;
    let denom = 1.0 + z2 / n_f;
    let centre = (p + z2 / (2.0 * n_f)) / denom;
    let half = Z95 * (p * (1.0 - p) / n_f + z2 / (4.0 * n_f * n_f)).sqrt() / denom;
    Ok(((centre - half).max(0.0), (centre + half).min(1.0)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub condition: String,
    pub n: usize,
    pub correct: usize,
    pub accuracy: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

impl ReportRow {
    pub fn new(condition: impl Into<String>, correct: usize, n: usize) -> Result<Self> {
        let (ci_low, ci_high) = wilson_interval(correct, n)?;
        Ok(Self {
            condition: condition.into(),
            n,
            correct,
            accuracy: correct as f64 / n as f64,
            ci_low,
            ci_high,
        })
    }

    pub fn ci_width(&self) -> f64 {
        self.ci_high - self.ci_low
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentReport {
    pub experiment: String,
    pub method: String,
    pub seed: u64,
    pub fingerprint: u64,
    pub rows: Vec<ReportRow>,
}

impl ExperimentReport {
    pub fn new(experiment: &str, method: &str, seed: u64, fingerprint: u64) -> Self {
        Self {
            experiment: experiment.to_string(),
            method: method.to_string(),
            seed,
            fingerprint,
            rows: Vec::new(),
        }
    }

    pub fn row(&self, condition: &str) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.condition == condition)
    }

    pub fn accuracy(&self, condition: &str) -> Option<f64> {
        self.row(condition).map(|r| r.accuracy)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("condition,n,correct,accuracy,ci_low,ci_high\n");
        for r in &self.rows {
            writeln!(
                s,
                "{},{},{},{},{},{}",
                r.condition, r.n, r.correct, r.accuracy, r.ci_low, r.ci_high
            )
            .expect("write to String");
        }
        s
    }

    pub fn file_name(&self) -> String {
        let method: String = self
            .method
            .chars()
            .map(|c| if c.is_ascii_alphanumeric() { c.to_ascii_lowercase() } else { '-' })
            .collect();
        format!(
            "{}_{}_seed{}_{:016x}.csv",
            self.experiment, method, self.seed, self.fingerprint
        )
    }

    /// Writes the CSV into `dir` and returns its path.
    pub fn write_csv(&self, dir: impl AsRef<Path>) -> Result<PathBuf> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(self.file_name());
        fs::write(&path, self.to_csv()).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }

    pub fn render(&self) -> String {
        let mut s = format!(
            "{} / {} (seed {}, physics {:016x})\n",
            self.experiment, self.method, self.seed, self.fingerprint
        );
        let w = self.rows.iter().map(|r| r.condition.len()).max().unwrap_or(9).max(9);
        writeln!(s, "{:<w$}  {:>8}  {:>9}  {:>19}", "condition", "n", "accuracy", "95% interval")
            .expect("write to String");
        for r in &self.rows {
            writeln!(
                s,
                "{:<w$}  {:>8}  {:>8.3}%  [{:.3}%, {:.3}%]",
                r.condition,
                r.n,
                100.0 * r.accuracy,
                100.0 * r.ci_low,
                100.0 * r.ci_high
            )
            .expect("write to String");
        }
        s
    }
}
