//! Calibration and reproduction experiments with binomial intervals.

mod calibrate;
mod experiments;
mod onboard;
mod presets;
mod report;

pub use calibrate::{calibrate, calibrate_from, Calibration, CalibrationBudget, CalibrationTarget};
pub use experiments::{
    bins_condition, condition_bins, evaluate_method, fidelity_curve, first_bins_reaching,
    method_table, min_bins_for, power_condition, power_sweep, Budget, Evaluation, Fitted, Method,
    MethodTable, ONBOARD_HIDDEN,
};
pub use onboard::{
    check_onboard, max_boundary_error, onboard_pipeline, train_onboard, OnboardBudget,
    OnboardSummary, BOUND_MAX_COUNT,
};
pub use presets::{
    resolve_params, run_preset, Check, Preset, PresetConfig, PresetOutcome, DEFAULT_POWERS,
    FIDELITY_TARGET,
};
pub use report::{wilson_interval, ExperimentReport, ReportRow, Z95};
