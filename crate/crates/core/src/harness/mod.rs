//! Experiment configuration and the commands behind the `vitlab` binary.

mod commands;
mod config;

pub use commands::{
    cmd_benchmark, cmd_compare, cmd_evaluate, cmd_synth, cmd_train, cmd_validate_manifest, compare_csv,
    expected_counts, score_dataset, BenchmarkOutcome, CompareArgs, CompareRow, EpochRecord, EvaluateArgs,
    EvaluateOutcome, TrainOutcome, CHECKPOINT_DIR, COMPARE_CSV, CONFUSION_CSV, PREDS_CSV, REPORT, ROC_CSV, RUN_META,
    TRAIN_LOG,
};
pub use config::{
    load_config, parse_config, AugmentSpec, DatasetSection, EvalSection, ExperimentConfig, ModelSection, Overrides,
    Resolution, CNN_BASELINE,
};
