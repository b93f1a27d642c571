use serde::{Deserialize, Serialize};

use super::classification::{confusion, macro_prf, mcc, weighted_prf, ConfusionMatrix, PrfSummary};
use super::roc::{roc_auc, RocSummary};
use crate::error::{shape_str, Error, Result};
use crate::tensor::Tensor;
use crate::training::argmax;

/// Everything computed from one model's scores on one split.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub preds: Vec<usize>,
    pub labels: Vec<usize>,
    pub confusion: ConfusionMatrix,
    pub weighted: PrfSummary,
    pub macro_avg: PrfSummary,
    pub mcc: f64,
    pub roc: RocSummary,
}

/// `scores` is `[n, K]` class probabilities; predictions are row argmaxes.
pub fn evaluate_scores(scores: &Tensor, labels: &[usize], classes: &[String]) -> Result<Evaluation> {
    let &[_, k] = scores.shape() else {
        return Err(Error::Contract(format!("scores must be [n, K], got {}", shape_str(scores.shape()))));
    };
    let preds: Vec<usize> = scores.data().chunks(k).map(argmax).collect();
    let cm = confusion(&preds, labels, k)?.with_classes(classes.to_vec())?;
    Ok(Evaluation {
        weighted: weighted_prf(&cm)?,
        macro_avg: macro_prf(&cm)?,
        mcc: mcc(&cm)?,
        roc: roc_auc(scores, labels)?,
        confusion: cm,
        preds,
        labels: labels.to_vec(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MacroBlock {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassReport {
    pub name: String,
    pub support: u64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub auc: Option<f64>,
}

/// Column order follows the published result tables: precision, recall,
/// F1 (each with its across-class std), accuracy, MCC, p-value, FPS.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub model: String,
    pub split: String,
    pub samples: u64,
    pub precision: f64,
    pub precision_std: f64,
    pub recall: f64,
    pub recall_std: f64,
    pub f1: f64,
    pub f1_std: f64,
    pub accuracy: f64,
    pub mcc: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_value: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fps: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub macro_auc: Option<f64>,
    #[serde(default)]
    pub auc_undefined: Vec<String>,
    #[serde(rename = "macro")]
    pub macro_avg: MacroBlock,
    pub per_class: Vec<ClassReport>,
}

impl EvaluationReport {
    pub fn new(model: &str, split: &str, ev: &Evaluation) -> Self {
        let names = ev.confusion.classes();
        let w = &ev.weighted;
        EvaluationReport {
            model: model.to_string(),
            split: split.to_string(),
            samples: ev.confusion.total(),
            precision: w.precision.mean,
            precision_std: w.precision.std,
            recall: w.recall.mean,
            recall_std: w.recall.std,
            f1: w.f1.mean,
            f1_std: w.f1.std,
            accuracy: w.accuracy,
            mcc: ev.mcc,
            p_value: None,
            fps: None,
            macro_auc: ev.roc.macro_auc,
            auc_undefined: ev.roc.undefined.iter().map(|&k| names[k].clone()).collect(),
            macro_avg: MacroBlock {
                precision: ev.macro_avg.precision.mean,
                recall: ev.macro_avg.recall.mean,
                f1: ev.macro_avg.f1.mean,
            },
            per_class: w
                .per_class
                .iter()
                .zip(names)
                .zip(&ev.roc.per_class)
                .map(|((c, name), roc)| ClassReport {
                    name: name.clone(),
                    support: c.support,
                    precision: c.precision,
                    recall: c.recall,
                    f1: c.f1,
                    auc: roc.auc,
                })
                .collect(),
        }
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Contract(format!("report serialization: {e}")))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(format!("report: {e}")))
    }

    /// Markdown-style row; an absent p-value prints as `-`.
    pub fn table_row(&self) -> String {
        let p = self.p_value.map_or("-".to_string(), format_p);
        let fps = self.fps.map_or("-".to_string(), |v| format!("{v:.1}"));
        format!(
            "| {} | {:.4} ± {:.4} | {:.4} ± {:.4} | {:.4} ± {:.4} | {:.4} | {:.4} | {p} | {fps} |",
            self.model,
            self.precision,
            self.precision_std,
            self.recall,
            self.recall_std,
            self.f1,
            self.f1_std,
            self.accuracy,
            self.mcc
        )
    }
}

pub const TABLE_HEADER: &str =
    "| Model | Precision | Recall | F1-score | Accuracy | MCC | P-values | FPS |\n|---|---|---|---|---|---|---|---|";

pub fn format_p(p: f64) -> String {
    if p != 0.0 && p < 1e-4 {
        format!("{p:.2e}")
    } else {
        format!("{p:.4}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Evaluation {
        let scores =
            Tensor::from_vec(vec![0.8, 0.1, 0.1, 0.2, 0.7, 0.1, 0.6, 0.3, 0.1, 0.1, 0.2, 0.7], &[4, 3]).unwrap();
        evaluate_scores(&scores, &[0, 1, 1, 0], &["a".into(), "b".into(), "c".into()]).unwrap()
    }

    #[test]
    fn predictions_and_consistency() {
        let ev = sample();
        assert_eq!(ev.preds, vec![0, 1, 0, 2]);
        let r = EvaluationReport::new("m", "test", &ev);
        assert_eq!(r.samples, 4);
        assert_eq!(r.recall, r.accuracy);
        assert_eq!(r.accuracy, 0.5);
        assert_eq!(r.auc_undefined, vec!["c"]);
        assert_eq!(r.per_class[2].auc, None);
    }

    #[test]
    fn toml_round_trip_and_key_order() {
        let r = EvaluationReport::new("m", "test", &sample());
        let text = r.to_toml().unwrap();
        assert_eq!(EvaluationReport::from_toml(&text).unwrap(), r);
        let pos = |k: &str| text.find(&format!("\n{k} =")).unwrap_or_else(|| panic!("{k} missing:\n{text}"));
        let order = ["precision", "recall", "f1", "accuracy", "mcc"];
        for w in order.windows(2) {
            assert!(pos(w[0]) < pos(w[1]));
        }
        assert!(!text.contains("p_value"));
    }

    #[test]
    fn table_row_dash_for_missing_p() {
        let mut r = EvaluationReport::new("best", "test", &sample());
        assert!(r.table_row().contains("| - |"));
        r.p_value = Some(0.01234);
        assert!(r.table_row().contains("| 0.0123 |"));
        assert_eq!(format_p(3e-7), "3.00e-7");
        assert_eq!(format_p(0.0), "0.0000");
    }
}
