//! Datasets, configuration files, metrics, checkpoints and experiment drivers.

mod checkpoint;
mod checks;
mod config;
mod dataset;
mod experiment;
mod metrics;

pub use checkpoint::{
    load_checkpoint, load_checkpoint_into, read_checkpoint, save_checkpoint, CheckpointHeader,
    CHECKPOINT_VERSION,
};
pub use checks::{
    equivalence_config, equivalence_dataset, equivalence_experiment, gradcheck_suite,
    run_equivalence, wireless_unbiasedness, CheckCase, EquivalenceReport, GradcheckReport,
    UnbiasednessReport, DEVIATION_FLOOR, EQUIVALENCE_TOLERANCE, GRADCHECK_FLOOR,
    GRADCHECK_TOLERANCE, UNBIASEDNESS_Z,
};
pub use config::{DataSource, ExperimentConfig, Preset};
pub use dataset::{
    calibrate, logistic_regression_accuracy, Calibration, GridDataset, SyntheticSpec,
    FLAT_VALIDATION_FRACTION,
};
pub use experiment::{
    evaluate_grid, grid_axes, load_dataset, run_experiment, write_grid_csv, EvalPoint,
    ExperimentResult, NTEST_SWEEP_MAX, SNR_SWEEP_DB,
};
pub use metrics::{MetricsWriter, METRICS_COLUMNS};
