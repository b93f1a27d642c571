use crate::error::{shape_str, Error, Result};
use crate::tensor::Tensor;

const ROW_SUM_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RocPoint {
    /// Samples with score `>= threshold` are called positive. The first
    /// point uses `+inf`.
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassRoc {
    pub class: usize,
    /// Empty when the class has no positives or no negatives.
    pub points: Vec<RocPoint>,
    pub auc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RocSummary {
    pub per_class: Vec<ClassRoc>,
    /// Mean over classes with a defined AUC.
    pub macro_auc: Option<f64>,
    /// Classes whose AUC is undefined and excluded from the mean.
    pub undefined: Vec<usize>,
}

/// One-vs-rest curves over the distinct scores of each class column.
pub fn roc_auc(scores: &Tensor, labels: &[usize]) -> Result<RocSummary> {
    let &[n, k] = scores.shape() else {
        return Err(Error::Contract(format!("scores must be [n, K], got {}", shape_str(scores.shape()))));
    };
    if labels.len() != n {
        return Err(Error::Contract(format!("{} labels for {n} score rows", labels.len())));
    }
    for (i, row) in scores.data().chunks(k).enumerate() {
        let sum: f64 = row.iter().sum();
        if row.iter().any(|v| !v.is_finite() || *v < 0.0) || (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
            return Err(Error::Contract(format!("row {i} is not a probability vector (sum {sum})")));
        }
    }
    if let Some((i, &l)) = labels.iter().enumerate().find(|(_, &l)| l >= k) {
        return Err(Error::Contract(format!("sample {i}: label {l} out of range for K={k}")));
    }
    let data = scores.data();
    let per_class: Vec<ClassRoc> = (0..k)
        .map(|c| {
            let column: Vec<(f64, bool)> = (0..n).map(|i| (data[i * k + c], labels[i] == c)).collect();
            class_curve(c, column)
        })
        .collect();
    let defined: Vec<f64> = per_class.iter().filter_map(|r| r.auc).collect();
    let undefined = per_class.iter().filter(|r| r.auc.is_none()).map(|r| r.class).collect();
    let macro_auc = (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64);
    Ok(RocSummary { per_class, macro_auc, undefined })
}

fn class_curve(class: usize, mut column: Vec<(f64, bool)>) -> ClassRoc {
    let pos = column.iter().filter(|(_, y)| *y).count();
    let neg = column.len() - pos;
    if pos == 0 || neg == 0 {
        return ClassRoc { class, points: Vec::new(), auc: None };
    }
    column.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut points = vec![RocPoint { threshold: f64::INFINITY, fpr: 0.0, tpr: 0.0 }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut auc = 0.0;
    let mut i = 0;
    while i < column.len() {
        let threshold = column[i].0;
        while i < column.len() && column[i].0 == threshold {
            if column[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let prev = *points.last().expect("curve starts at origin");
        let point = RocPoint { threshold, fpr: fp as f64 / neg as f64, tpr: tp as f64 / pos as f64 };
        auc += (point.fpr - prev.fpr) * (point.tpr + prev.tpr) / 2.0;
        points.push(point);
    }
    ClassRoc { class, points, auc: Some(auc) }
}

/// `class,threshold,fpr,tpr` rows for every defined curve.
pub fn roc_csv(summary: &RocSummary, class_names: &[String]) -> String {
    let mut out = String::from("class,threshold,fpr,tpr\n");
    for curve in &summary.per_class {
        let name = class_names.get(curve.class).cloned().unwrap_or_else(|| curve.class.to_string());
        for p in &curve.points {
            out.push_str(&format!("{name},{},{},{}\n", p.threshold, p.fpr, p.tpr));
        }
    }
    out
}
