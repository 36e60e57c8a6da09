//! Fits the simulator's free physics parameters to a threshold accuracy.

use crate::baselines::{fit_threshold, threshold_classify};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::physics::{DataSplit, PhysicsParams};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibrationTarget {
    /// Held-out threshold accuracy at the full detection window.
    pub accuracy: f64,
    pub tolerance: f64,
}

impl Default for CalibrationTarget {
    fn default() -> Self {
        Self {
            accuracy: 0.99248,
            tolerance: 0.003,
        }
    }
}

impl CalibrationTarget {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.accuracy) || !(self.tolerance >= 0.0) {
            return Err(Error::Params(format!(
                "target {} with tolerance {} is not meaningful",
                self.accuracy, self.tolerance
            )));
        }
        Ok(())
    }

    pub fn contains(&self, accuracy: f64) -> bool {
        (accuracy - self.accuracy).abs() <= self.tolerance
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibrationBudget {
    pub n_train: usize,
    pub n_test: usize,
    pub max_evaluations: usize,
    pub exec: Execution,
}

impl Default for CalibrationBudget {
    fn default() -> Self {
        Self {
            n_train: 200_000,
            n_test: 50_000,
            max_evaluations: 60,
            exec: Execution::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Calibration {
    pub params: PhysicsParams,
    /// Held-out threshold accuracy at `params`.
    pub accuracy: f64,
    /// Every evaluated point, in order.
    pub trace: Vec<(PhysicsParams, f64)>,
}

#[derive(Debug, Clone, Copy)]
enum Coordinate {
    DarkPumpTau,
    BrightDecayTau,
    DarkRate,
}

impl Coordinate {
    const ORDER: [Coordinate; 3] = [
        Coordinate::DarkPumpTau,
        Coordinate::BrightDecayTau,
        Coordinate::DarkRate,
    ];

    /// Search range, seconds or counts per second.
    fn range(self) -> (f64, f64) {
        match self {
            Coordinate::DarkPumpTau | Coordinate::BrightDecayTau => (1e-4, 10.0),
            Coordinate::DarkRate => (1.0, 1e5),
        }
    }

    /// Whether accuracy grows with the coordinate.
    fn helps(self) -> bool {
        !matches!(self, Coordinate::DarkRate)
    }

    fn get(self, p: &PhysicsParams) -> f64 {
        let (lo, hi) = self.range();
        let v = match self {
            Coordinate::DarkPumpTau => p.dark_pump_tau_ref,
            Coordinate::BrightDecayTau => p.bright_decay_tau,
            Coordinate::DarkRate => p.dark_rate,
        };
        v.clamp(lo, hi)
    }

    fn set(self, p: &PhysicsParams, v: f64) -> PhysicsParams {
        let mut q = *p;
        match self {
            Coordinate::DarkPumpTau => q.dark_pump_tau_ref = v,
            Coordinate::BrightDecayTau => q.bright_decay_tau = v,
            Coordinate::DarkRate => q.dark_rate = v,
        }
        q
    }
}

struct Search<'a> {
    target: CalibrationTarget,
    budget: &'a CalibrationBudget,
    seed: u64,
    trace: Vec<(PhysicsParams, f64)>,
}

impl Search<'_> {
    fn evaluate(&mut self, p: &PhysicsParams) -> Result<Option<f64>> {
        if self.trace.len() >= self.budget.max_evaluations {
            return Ok(None);
        }
        let split = DataSplit::generate(p, self.budget.n_train, self.budget.n_test, self.seed, self.budget.exec)?;
        let model = fit_threshold(&split.train)?;
        let correct = split
            .test
            .trajectories
            .iter()
            .filter(|t| threshold_classify(&t.counts, &model) == t.true_label)
            .count();
        let acc = correct as f64 / split.test.len() as f64;
        self.trace.push((*p, acc));
        Ok(Some(acc))
    }

    fn best(&self) -> (PhysicsParams, f64) {
        self.trace
            .iter()
            .min_by(|a, b| {
                let da = (a.1 - self.target.accuracy).abs();
                let db = (b.1 - self.target.accuracy).abs();
                da.total_cmp(&db)
            })
            .copied()
            .expect("at least one evaluation")
    }

    /// Aim well inside the tolerance so the result survives a fresh sample.
    fn settled(&self, acc: f64) -> bool {
        (acc - self.target.accuracy).abs() <= self.target.tolerance / 10.0
    }
}

/// Calibrates from the 3 µs software preset with the default budget.
pub fn calibrate(target: CalibrationTarget, seed: u64) -> Result<Calibration> {
    calibrate_from(target, &PhysicsParams::software_preset(), &CalibrationBudget::default(), seed)
}

/// Coordinate descent over (dark pumping time, bright decay time, dark rate)
/// in that order. Each coordinate is bisected in log space between its
/// current value and the end of its range that moves accuracy towards the
/// target. All evaluations share one data seed, so the search is
/// deterministic.
pub fn calibrate_from(
    target: CalibrationTarget,
    start: &PhysicsParams,
    budget: &CalibrationBudget,
    seed: u64,
) -> Result<Calibration> {
    target.validate()?;
    start.validate()?;
    let mut s = Search {
        target,
        budget,
        seed,
        trace: Vec::new(),
    };
    let mut current = *start;
    let mut acc = s.evaluate(&current)?.expect("budget allows one evaluation");

    'coords: for coord in Coordinate::ORDER {
        if s.settled(acc) {
            break;
        }
        let (lo, hi) = coord.range();
        let raise = (acc > target.accuracy) != coord.helps();
        let here = coord.get(&current).ln();
        let edge = if raise { hi.ln() } else { lo.ln() };
        let edge_params = coord.set(&current, edge.exp());
        let Some(edge_acc) = s.evaluate(&edge_params)? else {
            break;
        };
        let crosses = (edge_acc - target.accuracy).signum() != (acc - target.accuracy).signum();
        if !crosses {
            current = edge_params;
            acc = edge_acc;
            continue;
        }
        // Invariant: `near` is on the starting side of the target, `far` beyond it.
        let (mut near, mut far) = (here, edge);
        let start_side = acc > target.accuracy;
        while (far - near).abs() > 1e-4 {
            let mid = 0.5 * (near + far);
            let p = coord.set(&current, mid.exp());
            let Some(a) = s.evaluate(&p)? else {
                break 'coords;
            };
            if s.settled(a) {
                break 'coords;
            }
            if (a > target.accuracy) == start_side {
                near = mid;
            } else {
                far = mid;
            }
        }
        let (p, a) = s.best();
        current = p;
        acc = a;
    }

    let (best, best_acc) = s.best();
    if !target.contains(best_acc) {
        return Err(Error::Calibration {
            target: target.accuracy,
            best_accuracy: best_acc,
            best: format!(
                "dark_rate={} bright_decay_tau={} dark_pump_tau_ref={}",
                best.dark_rate, best.bright_decay_tau, best.dark_pump_tau_ref
            ),
        });
    }
    Ok(Calibration {
        params: best,
        accuracy: best_acc,
        trace: s.trace,
    })
}
