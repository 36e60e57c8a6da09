//! Named reproduction recipes. Each preset runs its experiments, renders a
//! plain-text summary and evaluates its pass/fail checks.

use std::fmt::Write as _;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::nn::Model;
use crate::physics::PhysicsParams;
use crate::quant::{latency_bench, CounterConfig, LatencyStats};

use super::calibrate::{calibrate_from, CalibrationBudget, CalibrationTarget};
use super::experiments::{
    first_bins_reaching, fidelity_curve, method_table, min_bins_for, power_condition, power_sweep,
    Budget, Method,
};
use super::onboard::{onboard_pipeline, OnboardBudget};
use super::report::ExperimentReport;

pub const DEFAULT_POWERS: [f64; 3] = [1.26, 2.95, 5.90];
pub const FIDELITY_TARGET: f64 = 0.99;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    Table1,
    Fig4,
    Fig6,
    Fig7,
    Onboard,
}

impl Preset {
    pub const ALL: [Preset; 5] = [Preset::Table1, Preset::Fig4, Preset::Fig6, Preset::Fig7, Preset::Onboard];

    pub fn name(self) -> &'static str {
        match self {
            Preset::Table1 => "table1",
            Preset::Fig4 => "fig4",
            Preset::Fig6 => "fig6",
            Preset::Fig7 => "fig7",
            Preset::Onboard => "onboard",
        }
    }

    /// Whether the preset runs at the embedded (counter) binning.
    pub fn embedded(self) -> bool {
        matches!(self, Preset::Fig6 | Preset::Fig7 | Preset::Onboard)
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Preset::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::Argument(format!("unknown preset `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PresetConfig {
    pub seed: u64,
    /// Software-binning physics. Calibrated from scratch when absent.
    pub params: Option<PhysicsParams>,
    pub target: CalibrationTarget,
    pub calibration: CalibrationBudget,
    pub budget: Budget,
    pub onboard: OnboardBudget,
    pub counter: CounterConfig,
    pub powers: Vec<f64>,
    pub latency_trials: usize,
}

impl Default for PresetConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            params: None,
            target: CalibrationTarget::default(),
            calibration: CalibrationBudget::default(),
            budget: Budget::default(),
            onboard: OnboardBudget::default(),
            counter: CounterConfig::default(),
            powers: DEFAULT_POWERS.to_vec(),
            latency_trials: 100_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(name: &str, passed: bool, detail: String) -> Self {
        Self {
            name: name.to_string(),
            passed,
            detail,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PresetOutcome {
    pub preset: Preset,
    /// Physics the experiments ran at.
    pub params: PhysicsParams,
    pub reports: Vec<ExperimentReport>,
    pub text: String,
    pub checks: Vec<Check>,
    pub model: Option<Model>,
    pub latency: Option<LatencyStats>,
}

impl PresetOutcome {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

fn pct(x: f64) -> String {
    format!("{:.3}%", 100.0 * x)
}

/// The software-binning physics for `cfg`, calibrating when needed.
pub fn resolve_params(cfg: &PresetConfig) -> Result<PhysicsParams> {
    match cfg.params {
        Some(p) => {
            p.validate()?;
            Ok(p)
        }
        None => Ok(calibrate_from(cfg.target, &PhysicsParams::software_preset(), &cfg.calibration, cfg.seed)?.params),
    }
}

pub fn run_preset(preset: Preset, cfg: &PresetConfig) -> Result<PresetOutcome> {
    let software = resolve_params(cfg)?;
    let params = if preset.embedded() {
        software.with_binning(cfg.counter.sub_bin_seconds(), cfg.counter.n_sub_bins)
    } else {
        software
    };
    let mut out = PresetOutcome {
        preset,
        params,
        reports: Vec::new(),
        text: String::new(),
        checks: Vec::new(),
        model: None,
        latency: None,
    };
    match preset {
        Preset::Table1 => table1(&mut out, cfg)?,
        Preset::Fig4 => fig4(&mut out, cfg)?,
        Preset::Fig6 => fig6(&mut out, cfg)?,
        Preset::Fig7 => fig7(&mut out, cfg)?,
        Preset::Onboard => onboard(&mut out, cfg)?,
    }
    Ok(out)
}

fn table1(out: &mut PresetOutcome, cfg: &PresetConfig) -> Result<()> {
    let methods = [Method::Threshold, Method::MaxLikelihood, Method::Fcnn, Method::Cnn];
    let table = method_table(&out.params, &methods, &cfg.budget, cfg.seed)?;
    let acc = |m| table.accuracy(m).expect("method evaluated");
    let (thr, ml, cnn) = (acc(Method::Threshold), acc(Method::MaxLikelihood), acc(Method::Cnn));
    let floor = methods.iter().map(|&m| acc(m)).fold(1.0, f64::min);
    out.checks.push(Check::new(
        "ordering",
        ml >= thr && cnn >= ml - 0.001 && [thr, ml, cnn].iter().all(|&a| a >= 0.985),
        format!("threshold {} <= ml {}, cnn {} >= ml - 0.1pp, all >= 98.5%", pct(thr), pct(ml), pct(cnn)),
    ));
    out.text = table.render();
    writeln!(out.text, "lowest accuracy {}", pct(floor)).expect("write to String");
    out.reports = table.reports;
    Ok(())
}

fn fig4(out: &mut PresetOutcome, cfg: &PresetConfig) -> Result<()> {
    let all: Vec<usize> = (1..=out.params.n_sub_bins).collect();
    let by4: Vec<usize> = (4..=out.params.n_sub_bins).step_by(4).collect();
    let thr = fidelity_curve(Method::Threshold, &out.params, &all, &cfg.budget, cfg.seed)?;
    let ml = fidelity_curve(Method::MaxLikelihood, &out.params, &all, &cfg.budget, cfg.seed)?;
    let (cnn_bins, cnn) =
        first_bins_reaching(Method::Cnn, &out.params, &by4, FIDELITY_TARGET, &cfg.budget, cfg.seed)?;
    let thr_bins = min_bins_for(&thr, FIDELITY_TARGET);
    let ml_bins = min_bins_for(&ml, FIDELITY_TARGET);
    let show = |b: Option<usize>| b.map_or("never".to_string(), |b| b.to_string());
    writeln!(
        out.text,
        "sub-bins to reach {}: threshold {}, max-likelihood {}, cnn {}",
        pct(FIDELITY_TARGET),
        show(thr_bins),
        show(ml_bins),
        show(cnn_bins)
    )
    .expect("write to String");
    let passed = matches!((cnn_bins, thr_bins), (Some(c), Some(t)) if c as f64 <= 0.7 * t as f64);
    out.checks.push(Check::new(
        "cnn-window",
        passed,
        format!("cnn {} vs threshold {} (need ratio <= 0.7)", show(cnn_bins), show(thr_bins)),
    ));
    out.reports = vec![thr, ml, cnn];
    for r in &out.reports {
        out.text.push_str(&r.render());
    }
    Ok(())
}

fn fig6(out: &mut PresetOutcome, cfg: &PresetConfig) -> Result<()> {
    let bins: Vec<usize> = (1..=out.params.n_sub_bins).collect();
    let sweep = power_sweep(Method::OnboardFcnn, &out.params, &cfg.powers, &bins, &cfg.budget, cfg.seed)?;
    let mid = cfg.powers[cfg.powers.len() / 2];
    let five = out.params.n_sub_bins.min(5);
    let acc = sweep.accuracy(&power_condition(mid, five)).expect("condition evaluated");
    out.checks.push(Check::new(
        "onboard-5-bins",
        acc >= 0.99,
        format!("onboard fcnn at {mid} uW, {five} bins: {} (need >= 99%)", pct(acc)),
    ));
    out.text = sweep.render();
    out.reports.push(sweep);
    Ok(())
}

fn fig7(out: &mut PresetOutcome, cfg: &PresetConfig) -> Result<()> {
    let bins: Vec<usize> = (1..=out.params.n_sub_bins).collect();
    let high = cfg.powers.iter().copied().fold(f64::MIN, f64::max);
    let thr = power_sweep(Method::Threshold, &out.params, &[high], &bins, &cfg.budget, cfg.seed)?;
    let nn = power_sweep(Method::OnboardFcnn, &out.params, &[high], &bins, &cfg.budget, cfg.seed)?;
    let (lo, hi) = (5.min(out.params.n_sub_bins), out.params.n_sub_bins);
    let a = |r: &ExperimentReport, b| r.accuracy(&power_condition(high, b)).expect("condition evaluated");
    let (t5, t10, n5, n10) = (a(&thr, lo), a(&thr, hi), a(&nn, lo), a(&nn, hi));
    out.checks.push(Check::new(
        "threshold-drops",
        t10 < t5 && n10 >= n5 - 0.002,
        format!(
            "at {high} uW threshold {} -> {}, onboard fcnn {} -> {} ({lo} -> {hi} bins)",
            pct(t5),
            pct(t10),
            pct(n5),
            pct(n10)
        ),
    ));
    out.text = format!("{}{}", thr.render(), nn.render());
    out.reports = vec![thr, nn];
    Ok(())
}

fn onboard(out: &mut PresetOutcome, cfg: &PresetConfig) -> Result<()> {
    let (model, net, s) = onboard_pipeline(&out.params, &cfg.counter, &cfg.onboard, cfg.seed)?;
    out.checks.push(Check::new(
        "quantized-agreement",
        s.agreement() >= 0.999,
        format!("{} of {} verdicts agree ({})", s.agreements, s.n, pct(s.agreement())),
    ));
    out.checks.push(Check::new(
        "no-saturation",
        s.bound.saturation_free() && s.max_count <= s.bound.max_count && s.saturation_events == 0,
        format!(
            "bound saturation-free: {}, largest count {}, events {}",
            s.bound.saturation_free(),
            s.max_count,
            s.saturation_events
        ),
    ));
    out.checks.push(Check::new(
        "ttl-roundtrip",
        s.ttl_exact == s.n && s.pipeline_agreements == s.n,
        format!("{} of {} exact, {} equal verdicts", s.ttl_exact, s.n, s.pipeline_agreements),
    ));
    out.checks.push(Check::new(
        "boundary-error",
        s.max_boundary_error_ns <= 10,
        format!("{} ns over {} gate phases", s.max_boundary_error_ns, s.gate_phases),
    ));
    out.text = format!("{s}\n");
    if cfg.latency_trials > 0 {
        let lat = latency_bench(&net, cfg.latency_trials, cfg.seed)?;
        writeln!(out.text, "{lat}").expect("write to String");
        out.latency = Some(lat);
    }
    out.model = Some(model);
    Ok(())
}
