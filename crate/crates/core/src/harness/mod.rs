//! Cross-validated sweeps, bound runs and their CSV/SVG reports.

mod bound_run;
mod config;
mod cv;
mod experiment;
mod report;
mod svg;

pub use bound_run::{run_bounds, run_bounds_on, BoundRow, BoundRun};
pub use config::{
    load_config, parse_config, BoundSettings, DataSource, ExperimentConfig, Method, MethodSpec, DEFAULT_SWEEP,
};
pub use cv::{cross_validate, Split, DEFAULT_HOLDOUT};
pub use experiment::{evaluate_method, knn_accuracy, load_data, run_experiment, run_on_data, LoadedData, MethodEval};
pub use report::{emit_reports, CurvePoint, MethodCurve, ReportFiles, ResultRow, ResultTable};
pub use svg::render_curves;
