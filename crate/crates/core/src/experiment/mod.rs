//! Experiment orchestration: configuration files, hyper-parameter grid
//! search, the cutout, robustness and stain-normalization studies, and
//! report emission.

mod config;
mod evaluate;
mod report;
mod runs;
mod search;

pub use config::{
    BenchConfig, DataConfig, DatasetKind, ExperimentConfig, ExperimentKind, ModelConfig, RobustnessConfig,
};
pub use evaluate::{evaluate_predictions, read_predictions, PredictionSet, DEFAULT_MODEL_ID, METRICS_HEADER};
pub use report::{emit_report, Chart, CsvTable, Report, SUMMARY_FILE};
pub use runs::{
    bench_report, build_splits, predictions_table, run_bench, run_cutout_experiment, run_gridsearch,
    run_robustness_experiment, run_stain_norm_comparison, run_training, Arm, ArmScores, CutoutReport,
    RobustnessReport, SeedScore, StainComparisonReport, StainRow, TrainingRun, CUTOUT_ARMS, PREDICTION_HEADER,
    ROBUSTNESS_ARMS, STAIN_ARMS,
};
pub use search::{grid_search, Equation, GridResult, GridRow, SearchSpace, GRID_CSV_HEADER, S1, S2};
