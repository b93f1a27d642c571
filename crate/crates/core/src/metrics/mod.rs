//! Classification metrics, ROC analysis, significance tests and throughput.

mod classification;
mod report;
mod roc;
mod stats;
mod throughput;

pub use classification::{
    confusion, macro_prf, mcc, per_class_scores, weighted_prf, ClassScores, ConfusionMatrix, MeanStd, PrfSummary,
};
pub use report::{evaluate_scores, format_p, ClassReport, Evaluation, EvaluationReport, MacroBlock, TABLE_HEADER};
pub use roc::{roc_auc, roc_csv, ClassRoc, RocPoint, RocSummary};
pub use stats::{
    bootstrap_indices, bootstrap_mcc_samples, incomplete_beta, ln_gamma, paired_t_test, student_t_two_sided, TTest,
};
pub use throughput::{fps, FpsMeasurement};
