use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Rows are true classes, columns predicted classes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    counts: Vec<Vec<u64>>,
    classes: Vec<String>,
}

impl ConfusionMatrix {
    pub fn from_counts(counts: Vec<Vec<u64>>) -> Result<Self> {
        let k = counts.len();
        if k == 0 || counts.iter().any(|r| r.len() != k) {
            return Err(Error::Contract("confusion matrix must be square and non-empty".into()));
        }
        Ok(ConfusionMatrix { counts, classes: (0..k).map(|i| i.to_string()).collect() })
    }

    pub fn with_classes(mut self, classes: Vec<String>) -> Result<Self> {
        if classes.len() != self.num_classes() {
            return Err(Error::Contract(format!(
                "{} class names for a {}-class confusion matrix",
                classes.len(),
                self.num_classes()
            )));
        }
        self.classes = classes;
        Ok(self)
    }

    pub fn counts(&self) -> &[Vec<u64>] {
        &self.counts
    }

    pub fn classes(&self) -> &[String] {
        &self.classes
    }

    pub fn num_classes(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.num_classes()).map(|i| self.counts[i][i]).sum()
    }

    /// Row sums (support).
    pub fn true_counts(&self) -> Vec<u64> {
        self.counts.iter().map(|r| r.iter().sum()).collect()
    }

    /// Column sums.
    pub fn predicted_counts(&self) -> Vec<u64> {
        (0..self.num_classes()).map(|j| self.counts.iter().map(|r| r[j]).sum()).collect()
    }

    /// Header row and first column carry class names.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("true\\pred");
        for c in &self.classes {
            out.push(',');
            out.push_str(c);
        }
        out.push('\n');
        for (name, row) in self.classes.iter().zip(&self.counts) {
            out.push_str(name);
            for v in row {
                out.push_str(&format!(",{v}"));
            }
            out.push('\n');
        }
        out
    }

    fn require_samples(&self) -> Result<u64> {
        match self.total() {
            0 => Err(Error::Contract("confusion matrix has no samples".into())),
            n => Ok(n),
        }
    }
}

pub fn confusion(preds: &[usize], labels: &[usize], num_classes: usize) -> Result<ConfusionMatrix> {
    if preds.len() != labels.len() {
        return Err(Error::Contract(format!("{} predictions for {} labels", preds.len(), labels.len())));
    }
    if num_classes == 0 {
        return Err(Error::Contract("confusion matrix needs at least one class".into()));
    }
    let mut counts = vec![vec![0u64; num_classes]; num_classes];
    for (i, (&p, &t)) in preds.iter().zip(labels).enumerate() {
        if p >= num_classes || t >= num_classes {
            return Err(Error::Contract(format!(
                "sample {i}: class index out of range (pred {p}, true {t}, K={num_classes})"
            )));
        }
        counts[t][p] += 1;
    }
    ConfusionMatrix::from_counts(counts)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrfSummary {
    pub precision: MeanStd,
    pub recall: MeanStd,
    pub f1: MeanStd,
    pub accuracy: f64,
    pub per_class: Vec<ClassScores>,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Zero denominators score 0.
pub fn per_class_scores(cm: &ConfusionMatrix) -> Vec<ClassScores> {
    let (support, predicted) = (cm.true_counts(), cm.predicted_counts());
    (0..cm.num_classes())
        .map(|k| {
            let tp = cm.counts[k][k];
            let precision = ratio(tp, predicted[k]);
            let recall = ratio(tp, support[k]);
            let f1 = if precision + recall == 0.0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
            ClassScores { precision, recall, f1, support: support[k] }
        })
        .collect()
}

fn population_std(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt()
}

fn summarise(cm: &ConfusionMatrix, weighted: bool) -> Result<PrfSummary> {
    let total = cm.require_samples()?;
    let per_class = per_class_scores(cm);
    let k = per_class.len() as f64;
    let block = |f: fn(&ClassScores) -> f64| {
        let vals: Vec<f64> = per_class.iter().map(f).collect();
        let mean = if weighted {
            per_class.iter().zip(&vals).map(|(c, v)| v * c.support as f64).sum::<f64>() / total as f64
        } else {
            vals.iter().sum::<f64>() / k
        };
        MeanStd { mean, std: population_std(&vals) }
    };
    Ok(PrfSummary {
        precision: block(|c| c.precision),
        recall: block(|c| c.recall),
        f1: block(|c| c.f1),
        accuracy: cm.trace() as f64 / total as f64,
        per_class: per_class.clone(),
    })
}

/// Support-weighted means with the unweighted across-class population std.
pub fn weighted_prf(cm: &ConfusionMatrix) -> Result<PrfSummary> {
    summarise(cm, true)
}

/// Unweighted means over all classes.
pub fn macro_prf(cm: &ConfusionMatrix) -> Result<PrfSummary> {
    summarise(cm, false)
}

/// Multiclass Matthews correlation (Gorodkin's R_K). Returns 0 when either
/// factor under the square root vanishes.
pub fn mcc(cm: &ConfusionMatrix) -> Result<f64> {
    let s = cm.require_samples()? as f64;
    let c = cm.trace() as f64;
    let t: Vec<f64> = cm.true_counts().iter().map(|&v| v as f64).collect();
    let p: Vec<f64> = cm.predicted_counts().iter().map(|&v| v as f64).collect();
    let tp: f64 = t.iter().zip(&p).map(|(a, b)| a * b).sum();
    let pp: f64 = p.iter().map(|v| v * v).sum();
    let tt: f64 = t.iter().map(|v| v * v).sum();
    let (fp, ft) = (s * s - pp, s * s - tt);
    if fp == 0.0 || ft == 0.0 {
        return Ok(0.0);
    }
    Ok(((c * s - tp) / (fp * ft).sqrt()).clamp(-1.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cm(rows: Vec<Vec<u64>>) -> ConfusionMatrix {
        ConfusionMatrix::from_counts(rows).unwrap()
    }

    #[test]
    fn hand_counted_matrix() {
        let m = confusion(&[0, 1, 1, 0], &[0, 1, 0, 0], 2).unwrap();
        assert_eq!(m.counts(), &[vec![2, 1], vec![0, 1]]);
        assert_eq!(m.true_counts(), vec![3, 1]);
        assert_eq!(m.predicted_counts(), vec![2, 2]);
    }

    #[test]
    fn perfect_and_empty() {
        let m = confusion(&[0, 1, 2, 2], &[0, 1, 2, 2], 3).unwrap();
        assert_eq!(m.counts(), &[vec![1, 0, 0], vec![0, 1, 0], vec![0, 0, 2]]);
        let s = weighted_prf(&m).unwrap();
        for v in [s.precision, s.recall, s.f1] {
            assert_eq!(v, MeanStd { mean: 1.0, std: 0.0 });
        }
        assert_eq!(mcc(&m).unwrap(), 1.0);

        let empty = confusion(&[], &[], 3).unwrap();
        assert_eq!(empty.total(), 0);
        assert!(matches!(weighted_prf(&empty), Err(Error::Contract(_))));
        assert!(matches!(mcc(&empty), Err(Error::Contract(_))));
    }

    #[test]
    fn contract_errors() {
        assert!(matches!(confusion(&[0], &[0, 1], 2), Err(Error::Contract(_))));
        let err = confusion(&[0, 5], &[0, 1], 2).unwrap_err().to_string();
        assert!(err.contains("sample 1"), "{err}");
        assert!(ConfusionMatrix::from_counts(vec![vec![1, 2]]).is_err());
    }

    #[test]
    fn binary_weighted_values() {
        let m = cm(vec![vec![45, 5], vec![10, 40]]);
        let s = weighted_prf(&m).unwrap();
        assert!((s.recall.mean - 0.85).abs() < 1e-15);
        assert!((s.recall.mean - s.accuracy).abs() < 1e-15);
        // precision: 45/55 and 40/45, equal supports
        let (p0, p1) = (45.0 / 55.0, 40.0 / 45.0);
        assert!((s.precision.mean - (p0 + p1) / 2.0).abs() < 1e-15);
        assert!((s.precision.std - (p1 - p0).abs() / 2.0).abs() < 1e-15);
        let f = |p: f64, r: f64| 2.0 * p * r / (p + r);
        assert!((s.f1.mean - (f(p0, 0.9) + f(p1, 0.8)) / 2.0).abs() < 1e-15);
    }

    #[test]
    fn zero_denominator_rates_are_zero() {
        // class 1 never predicted and class 2 absent
        let m = cm(vec![vec![3, 0, 0], vec![2, 0, 0], vec![0, 0, 0]]);
        let pc = per_class_scores(&m);
        assert_eq!(pc[1].precision, 0.0);
        assert_eq!(pc[1].f1, 0.0);
        assert_eq!(pc[2].recall, 0.0);
        assert_eq!(mcc(&m).unwrap(), 0.0);
    }

    #[test]
    fn macro_block_is_unweighted() {
        let m = cm(vec![vec![9, 1], vec![1, 1]]);
        let s = macro_prf(&m).unwrap();
        assert!((s.recall.mean - (0.9 + 0.5) / 2.0).abs() < 1e-15);
    }

    fn binary_mcc(tn: f64, fp: f64, fn_: f64, tp: f64) -> f64 {
        let den = ((tp + fp) * (tp + fn_) * (tn + fp) * (tn + fn_)).sqrt();
        if den == 0.0 {
            0.0
        } else {
            (tp * tn - fp * fn_) / den
        }
    }

    #[test]
    fn chance_and_binary_oracle() {
        assert_eq!(mcc(&cm(vec![vec![1, 1], vec![1, 1]])).unwrap(), 0.0);
        let got = mcc(&cm(vec![vec![45, 5], vec![10, 40]])).unwrap();
        assert!((got - binary_mcc(45.0, 5.0, 10.0, 40.0)).abs() < 1e-15);
    }

    #[test]
    fn binary_oracle_exhaustive_small() {
        for a in 0..=12u64 {
            for b in 0..=12 - a {
                for c in 0..=12 - a - b {
                    for d in 0..=12 - a - b - c {
                        if a + b + c + d == 0 {
                            continue;
                        }
                        let got = mcc(&cm(vec![vec![a, b], vec![c, d]])).unwrap();
                        let want = binary_mcc(a as f64, b as f64, c as f64, d as f64);
                        assert!((got - want).abs() < 1e-12, "{a} {b} {c} {d}: {got} vs {want}");
                    }
                }
            }
        }
    }

    proptest! {
        #[test]
        fn weighted_recall_is_accuracy(k in 2usize..6, seed in proptest::collection::vec(0u64..20, 36)) {
            let rows: Vec<Vec<u64>> = (0..k).map(|i| seed[i * 6..i * 6 + k].to_vec()).collect();
            let m = cm(rows);
            prop_assume!(m.total() > 0);
            let s = weighted_prf(&m).unwrap();
            prop_assert!((s.recall.mean - s.accuracy).abs() < 1e-12);
            let v = mcc(&m).unwrap();
            prop_assert!((-1.0..=1.0).contains(&v));
            prop_assert!(s.precision.std >= 0.0);
        }

        #[test]
        fn mcc_invariant_under_relabeling(seed in proptest::collection::vec(0u64..10, 16), rot in 1usize..4) {
            let rows: Vec<Vec<u64>> = (0..4).map(|i| seed[i * 4..i * 4 + 4].to_vec()).collect();
            let m = cm(rows.clone());
            prop_assume!(m.total() > 0);
            let perm = |i: usize| (i + rot) % 4;
            let mut permuted = vec![vec![0; 4]; 4];
            for i in 0..4 {
                for j in 0..4 {
                    permuted[perm(i)][perm(j)] = rows[i][j];
                }
            }
            let a = mcc(&m).unwrap();
            let b = mcc(&cm(permuted)).unwrap();
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn csv_has_named_header_and_column() {
        let m = cm(vec![vec![2, 1], vec![0, 3]]).with_classes(vec!["normal".into(), "pneumonia".into()]).unwrap();
        assert_eq!(m.to_csv(), "true\\pred,normal,pneumonia\nnormal,2,1\npneumonia,0,3\n");
    }
}
