//! Method evaluation on shared held-out data: fidelity-versus-sub-bin
//! curves, laser power sweeps and the method comparison table.

use std::fmt::{self, Write as _};
use std::str::FromStr;
use std::time::Instant;

use crate::baselines::{fit_threshold, Discriminator, HmmModel, ThresholdModel};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::nn::{build_cnn, build_fcnn, build_linear, train, Model, NetworkSpec, TrainConfig, FCNN_HIDDEN};
use crate::physics::{DataSplit, LabeledDataset, PhysicsParams, State};
use crate::rng::{derive_named, derive_seed};

use super::report::{ExperimentReport, ReportRow};

/// Hidden width of the embedded network.
pub const ONBOARD_HIDDEN: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    Threshold,
    MaxLikelihood,
    /// One hidden dense layer of 64.
    Fcnn,
    Cnn,
    /// One hidden dense layer of 20.
    OnboardFcnn,
    /// No hidden layer (logistic-regression-like baseline).
    Linear,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::Threshold,
        Method::MaxLikelihood,
        Method::Fcnn,
        Method::Cnn,
        Method::OnboardFcnn,
        Method::Linear,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Threshold => "threshold",
            Method::MaxLikelihood => "max-likelihood",
            Method::Fcnn => "fcnn",
            Method::Cnn => "cnn",
            Method::OnboardFcnn => "onboard-fcnn",
            Method::Linear => "linear",
        }
    }

    pub fn is_neural(self) -> bool {
        !matches!(self, Method::Threshold | Method::MaxLikelihood)
    }

    /// Training passes over the training set. The small networks are cheap
    /// and need more passes to settle.
    pub fn default_passes(self) -> usize {
        match self {
            Method::Threshold | Method::MaxLikelihood => 0,
            Method::Fcnn | Method::Cnn => 5,
            Method::OnboardFcnn | Method::Linear => 10,
        }
    }

    pub fn network(self, bins: usize) -> Result<NetworkSpec> {
        match self {
            Method::Fcnn => build_fcnn(bins, FCNN_HIDDEN),
            Method::Cnn => build_cnn(bins),
            Method::OnboardFcnn => build_fcnn(bins, ONBOARD_HIDDEN),
            Method::Linear => build_linear(bins),
            Method::Threshold | Method::MaxLikelihood => {
                Err(Error::Unsupported(format!("{self} is not a network")))
            }
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .or(match s {
                "ml" => Some(Method::MaxLikelihood),
                "onboard" => Some(Method::OnboardFcnn),
                _ => None,
            })
            .ok_or_else(|| Error::Argument(format!("unknown method `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Budget {
    pub n_train: usize,
    pub n_test: usize,
    /// Overrides [`Method::default_passes`] when set.
    pub passes: Option<usize>,
    pub exec: Execution,
}

impl Default for Budget {
    fn default() -> Self {
        Self {
            n_train: 200_000,
            n_test: 50_000,
            passes: None,
            exec: Execution::default(),
        }
    }
}

impl Budget {
    pub fn passes_for(&self, method: Method) -> usize {
        self.passes.unwrap_or_else(|| method.default_passes())
    }
}

/// A fitted discriminator of any kind.
#[derive(Debug, Clone)]
pub enum Fitted {
    Threshold(ThresholdModel),
    Hmm(HmmModel),
    Network(Box<Model>),
}

impl Discriminator for Fitted {
    fn name(&self) -> &str {
        match self {
            Fitted::Threshold(t) => t.name(),
            Fitted::Hmm(h) => h.name(),
            Fitted::Network(_) => "network",
        }
    }

    fn classify(&self, counts: &[u32]) -> State {
        match self {
            Fitted::Threshold(t) => t.classify(counts),
            Fitted::Hmm(h) => h.classify(counts),
            Fitted::Network(m) => m.predict(counts).expect("input width checked before evaluation"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub correct: usize,
    pub n: usize,
    /// Mean wall time per classified shot. Report-only.
    pub per_sample_ns: f64,
    pub fitted: Fitted,
}

impl Evaluation {
    pub fn accuracy(&self) -> f64 {
        self.correct as f64 / self.n as f64
    }
}

/// Fits `method` on `split.train` and scores it on `split.test`. The
/// likelihood model is built from `params`, not fitted.
pub fn evaluate_method(
    method: Method,
    params: &PhysicsParams,
    split: &DataSplit,
    budget: &Budget,
    seed: u64,
) -> Result<Evaluation> {
    let bins = split.test.n_sub_bins;
    if split.train.n_sub_bins != bins {
        return Err(Error::Shape("train and test sub-bin counts differ".into()));
    }
    let fitted = match method {
        Method::Threshold => Fitted::Threshold(fit_threshold(&split.train)?),
        Method::MaxLikelihood => Fitted::Hmm(HmmModel::from_params(params)?),
        _ => {
            let spec = method.network(bins)?;
            let cfg = TrainConfig {
                total_samples: budget.passes_for(method) * split.train.len(),
                seed: derive_named(seed, method.name()),
                exec: budget.exec,
                ..TrainConfig::default()
            };
            Fitted::Network(Box::new(train(&spec, &split.train, None, &cfg)?.model))
        }
    };
    let (correct, per_sample_ns) = score(&fitted, &split.test, budget.exec);
    Ok(Evaluation {
        correct,
        n: split.test.len(),
        per_sample_ns,
        fitted,
    })
}

fn score(d: &impl Discriminator, data: &LabeledDataset, exec: Execution) -> (usize, f64) {
    let t0 = Instant::now();
    let hits = exec.map_slice(&data.trajectories, |t| d.classify(&t.counts) == t.true_label);
    let ns = t0.elapsed().as_nanos() as f64 / data.len() as f64;
    (hits.into_iter().filter(|&h| h).count(), ns)
}

pub fn bins_condition(bins: usize) -> String {
    format!("bins={bins}")
}

/// Parses the sub-bin count back out of a row condition.
pub fn condition_bins(condition: &str) -> Option<usize> {
    condition
        .split(';')
        .find_map(|part| part.strip_prefix("bins="))
        .and_then(|v| v.parse().ok())
}

/// Smallest sub-bin count in `report` whose accuracy reaches `target`,
/// scanning rows in order.
pub fn min_bins_for(report: &ExperimentReport, target: f64) -> Option<usize> {
    report
        .rows
        .iter()
        .find(|r| r.accuracy >= target)
        .and_then(|r| condition_bins(&r.condition))
}

fn check_bins(bins_list: &[usize], params: &PhysicsParams) -> Result<()> {
    if bins_list.is_empty() {
        return Err(Error::Argument("empty bin list".into()));
    }
    if let Some(&b) = bins_list.iter().find(|&&b| b == 0 || b > params.n_sub_bins) {
        return Err(Error::Argument(format!(
            "bin count {b} outside 1..={}",
            params.n_sub_bins
        )));
    }
    Ok(())
}

/// Accuracy per analysis window. One data split is drawn at the full length
/// and truncated to each prefix.
pub fn fidelity_curve(
    method: Method,
    params: &PhysicsParams,
    bins_list: &[usize],
    budget: &Budget,
    seed: u64,
) -> Result<ExperimentReport> {
    check_bins(bins_list, params)?;
    let split = DataSplit::generate(params, budget.n_train, budget.n_test, seed, budget.exec)?;
    let rows = budget.exec.map_slice(bins_list, |&b| -> Result<ReportRow> {
        let s = split.truncated(b)?;
        let e = evaluate_method(method, params, &s, budget, derive_seed(seed, b as u64))?;
        ReportRow::new(bins_condition(b), e.correct, e.n)
    });
    let mut report = ExperimentReport::new("fidelity", method.name(), seed, params.fingerprint());
    report.rows = rows.into_iter().collect::<Result<_>>()?;
    Ok(report)
}

/// Like [`fidelity_curve`] but walks `bins_list` in order and stops at the
/// first window reaching `target`.
pub fn first_bins_reaching(
    method: Method,
    params: &PhysicsParams,
    bins_list: &[usize],
    target: f64,
    budget: &Budget,
    seed: u64,
) -> Result<(Option<usize>, ExperimentReport)> {
    check_bins(bins_list, params)?;
    let split = DataSplit::generate(params, budget.n_train, budget.n_test, seed, budget.exec)?;
    let mut report = ExperimentReport::new("fidelity", method.name(), seed, params.fingerprint());
    for &b in bins_list {
        let s = split.truncated(b)?;
        let e = evaluate_method(method, params, &s, budget, derive_seed(seed, b as u64))?;
        report.rows.push(ReportRow::new(bins_condition(b), e.correct, e.n)?);
        if e.accuracy() >= target {
            return Ok((Some(b), report));
        }
    }
    Ok((None, report))
}

pub fn power_condition(power: f64, bins: usize) -> String {
    format!("P={power}uW;bins={bins}")
}

/// Regenerates data at each laser power (rates and flip probabilities
/// follow the power) and evaluates every prefix in `bins_list`.
pub fn power_sweep(
    method: Method,
    base: &PhysicsParams,
    powers: &[f64],
    bins_list: &[usize],
    budget: &Budget,
    seed: u64,
) -> Result<ExperimentReport> {
    check_bins(bins_list, base)?;
    if let Some(p) = powers.iter().find(|p| !(**p > 0.0)) {
        return Err(Error::Argument(format!("laser power {p} must be positive")));
    }
    let conditions: Vec<(usize, f64, usize)> = powers
        .iter()
        .enumerate()
        .flat_map(|(j, &p)| bins_list.iter().map(move |&b| (j, p, b)))
        .collect();
    let splits = powers
        .iter()
        .map(|&p| {
            let params = base.with_power(p);
            let split = DataSplit::generate(&params, budget.n_train, budget.n_test, seed, budget.exec)?;
            Ok((params, split))
        })
        .collect::<Result<Vec<_>>>()?;
    let rows = budget.exec.map_slice(&conditions, |&(j, p, b)| -> Result<ReportRow> {
        let (params, split) = &splits[j];
        let s = split.truncated(b)?;
        let train_seed = derive_seed(derive_seed(seed, j as u64), b as u64);
        let e = evaluate_method(method, params, &s, budget, train_seed)?;
        ReportRow::new(power_condition(p, b), e.correct, e.n)
    });
    let mut report = ExperimentReport::new("power-sweep", method.name(), seed, base.fingerprint());
    report.rows = rows.into_iter().collect::<Result<_>>()?;
    Ok(report)
}

#[derive(Debug, Clone)]
pub struct MethodTable {
    pub reports: Vec<ExperimentReport>,
    /// Mean classification time per shot in ns, by method. Report-only.
    pub per_sample_ns: Vec<(Method, f64)>,
    pub bins: usize,
}

impl MethodTable {
    pub fn accuracy(&self, method: Method) -> Option<f64> {
        self.reports
            .iter()
            .find(|r| r.method == method.name())
            .and_then(|r| r.rows.first())
            .map(|r| r.accuracy)
    }

    pub fn render(&self) -> String {
        let mut s = format!("{:<16}{:>12}{:>22}{:>16}\n", "method", "accuracy", "95% interval", "ns/shot");
        for (r, (_, ns)) in self.reports.iter().zip(&self.per_sample_ns) {
            let row = &r.rows[0];
            writeln!(
                s,
                "{:<16}{:>11.3}%   [{:.3}%, {:.3}%]{:>16.0}",
                r.method,
                100.0 * row.accuracy,
                100.0 * row.ci_low,
                100.0 * row.ci_high,
                ns
            )
            .expect("write to String");
        }
        s
    }
}

/// Scores every method on one shared held-out set at full length.
pub fn method_table(
    params: &PhysicsParams,
    methods: &[Method],
    budget: &Budget,
    seed: u64,
) -> Result<MethodTable> {
    let split = DataSplit::generate(params, budget.n_train, budget.n_test, seed, budget.exec)?;
    let mut reports = Vec::new();
    let mut per_sample_ns = Vec::new();
    for &m in methods {
        let e = evaluate_method(m, params, &split, budget, seed)?;
        let mut r = ExperimentReport::new("table1", m.name(), seed, params.fingerprint());
        r.rows.push(ReportRow::new(bins_condition(params.n_sub_bins), e.correct, e.n)?);
        reports.push(r);
        per_sample_ns.push((m, e.per_sample_ns));
    }
    Ok(MethodTable {
        reports,
        per_sample_ns,
        bins: params.n_sub_bins,
    })
}
