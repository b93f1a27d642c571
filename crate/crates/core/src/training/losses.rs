use crate::error::{shape_str, Error, Result};
use crate::tensor::Tensor;

/// Lower bound on the label probability inside logarithms.
pub const PROB_FLOOR: f64 = 1e-12;

fn check_inputs(logits: &Tensor, labels: &[usize]) -> Result<(usize, usize)> {
    let &[b, k] = logits.shape() else {
        return Err(Error::Dimension(format!("logits must be [B, K], got {}", shape_str(logits.shape()))));
    };
    if labels.len() != b {
        return Err(Error::Dimension(format!("{} labels for {b} logit rows", labels.len())));
    }
    if let Some((i, &l)) = labels.iter().enumerate().find(|(_, &l)| l >= k) {
        return Err(Error::Data(format!("sample {i}: label {l} out of range for {k} classes")));
    }
    Ok((b, k))
}

/// Row-wise log-softmax and softmax.
fn log_softmax_rows(logits: &[f64], k: usize) -> (Vec<f64>, Vec<f64>) {
    let mut logp = Vec::with_capacity(logits.len());
    let mut probs = Vec::with_capacity(logits.len());
    for row in logits.chunks(k) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        for &v in row {
            let lp = v - lse;
            logp.push(lp);
            probs.push(lp.exp());
        }
    }
    (logp, probs)
}

/// Batch mean of `-ln softmax(logits)[label]`.
pub fn cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<Tensor> {
    let (b, k) = check_inputs(logits, labels)?;
    let (logp, probs) = log_softmax_rows(logits.data(), k);
    let floor = PROB_FLOOR.ln();
    let mut total = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        total += -logp[i * k + y].max(floor);
    }
    let loss = total / b as f64;
    let labels = labels.to_vec();
    Ok(Tensor::from_op(
        vec![loss],
        vec![1],
        vec![logits.clone()],
        Box::new(move |g, _| {
            let scale = g[0] / b as f64;
            let mut gx = vec![0.0; b * k];
            for (i, &y) in labels.iter().enumerate() {
                let clamped = logp[i * k + y] < floor;
                if clamped {
                    continue;
                }
                for j in 0..k {
                    let target = if j == y { 1.0 } else { 0.0 };
                    gx[i * k + j] = scale * (probs[i * k + j] - target);
                }
            }
            vec![Some(gx)]
        }),
    ))
}

/// Batch mean of `-alpha[y]·(1-p_y)^gamma·ln p_y`, `p = softmax(logits)`.
pub fn focal_loss(logits: &Tensor, labels: &[usize], gamma: f64, alpha: &[f64]) -> Result<Tensor> {
    let (b, k) = check_inputs(logits, labels)?;
    if !(gamma >= 0.0) {
        return Err(Error::Contract(format!("focal gamma must be >= 0, got {gamma}")));
    }
    if alpha.len() != k {
        return Err(Error::Dimension(format!("{} focal weights for {k} classes", alpha.len())));
    }
    let (logp, probs) = log_softmax_rows(logits.data(), k);
    let floor = PROB_FLOOR.ln();
    let mut total = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        let p = probs[i * k + y];
        total += -alpha[y] * (1.0 - p).powf(gamma) * logp[i * k + y].max(floor);
    }
    let loss = total / b as f64;
    let labels = labels.to_vec();
    let alpha = alpha.to_vec();
    Ok(Tensor::from_op(
        vec![loss],
        vec![1],
        vec![logits.clone()],
        Box::new(move |g, _| {
            let scale = g[0] / b as f64;
            let mut gx = vec![0.0; b * k];
            for (i, &y) in labels.iter().enumerate() {
                let p = probs[i * k + y];
                let lp_raw = logp[i * k + y];
                let clamped = lp_raw < floor;
                let lp = lp_raw.max(floor);
                let q = 1.0 - p;
                // d(loss_i)/d(p)·p
                let modulating = if gamma == 0.0 || q <= 0.0 { 0.0 } else { gamma * q.powf(gamma - 1.0) * lp * p };
                let log_term = if clamped { 0.0 } else { q.powf(gamma) };
                let coeff = -alpha[y] * (log_term - modulating);
                for j in 0..k {
                    let target = if j == y { 1.0 } else { 0.0 };
                    gx[i * k + j] = scale * coeff * (target - probs[i * k + j]);
                }
            }
            vec![Some(gx)]
        }),
    ))
}

/// Per-class weights proportional to `1/count`, normalized to mean 1 over
/// the classes that occur. Absent classes get weight 0.
pub fn inverse_frequency_weights(counts: &[usize]) -> Result<Vec<f64>> {
    let present = counts.iter().filter(|&&c| c > 0).count();
    if present == 0 {
        return Err(Error::Data("cannot derive class weights from an empty label set".into()));
    }
    let raw: Vec<f64> = counts.iter().map(|&c| if c > 0 { 1.0 / c as f64 } else { 0.0 }).collect();
    let mean = raw.iter().sum::<f64>() / present as f64;
    Ok(raw.iter().map(|w| w / mean).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::finite_difference_check;

    fn logits(data: &[f64], k: usize) -> Tensor {
        Tensor::from_vec(data.to_vec(), &[data.len() / k, k]).unwrap()
    }

    #[test]
    fn uniform_logits_give_ln_k() {
        let l = cross_entropy(&logits(&[0.3; 8], 4), &[1, 3]).unwrap().item().unwrap();
        assert!((l - 4f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn hand_value() {
        let l = cross_entropy(&logits(&[2., 1., 0.], 3), &[0]).unwrap().item().unwrap();
        assert!((l - 0.40760596444437).abs() < 1e-10, "{l}");
    }

    #[test]
    fn margin_drives_loss_to_zero() {
        let mut last = f64::INFINITY;
        for m in [1.0, 5.0, 20.0, 40.0] {
            let l = cross_entropy(&logits(&[m, 0.0], 2), &[0]).unwrap().item().unwrap();
            assert!(l < last);
            last = l;
        }
        assert!(last < 1e-15);
    }

    #[test]
    fn out_of_range_label_names_sample() {
        let err = cross_entropy(&logits(&[0.; 6], 3), &[0, 3]).unwrap_err();
        assert!(matches!(err, Error::Data(_)));
        assert!(err.to_string().contains("sample 1"));
    }

    #[test]
    fn focal_closed_form() {
        // two logits with p = 0.9 for the label: z0 - z1 = ln 9
        let l = focal_loss(&logits(&[9f64.ln(), 0.0], 2), &[0], 2.0, &[1.0, 1.0]).unwrap().item().unwrap();
        assert!((l - 0.01 * -(0.9f64.ln())).abs() < 1e-12);
        assert!((l - 0.0010536).abs() < 1e-6);
    }

    #[test]
    fn focal_saturated_is_zero() {
        let l = focal_loss(&logits(&[800.0, 0.0], 2), &[0], 2.0, &[1.0, 1.0]).unwrap().item().unwrap();
        assert_eq!(l, 0.0);
    }

    #[test]
    fn focal_reduces_to_cross_entropy() {
        let x = logits(&[0.2, -1.3, 2.2, 0.0, 0.4, 1.1, -0.5, 0.9, 3.0], 3);
        let labels = [2, 0, 1];
        let a = cross_entropy(&x, &labels).unwrap().item().unwrap();
        let b = focal_loss(&x, &labels, 0.0, &[1.0; 3]).unwrap().item().unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn focal_nonincreasing_in_label_probability() {
        let mut last = f64::INFINITY;
        for i in 1..100 {
            let p = i as f64 / 100.0;
            // binary logits giving p for class 0
            let z = (p / (1.0 - p)).ln();
            let l = focal_loss(&logits(&[z, 0.0], 2), &[0], 2.0, &[1.0, 1.0]).unwrap().item().unwrap();
            assert!(l <= last + 1e-15);
            last = l;
        }
    }

    #[test]
    fn gradients_match_fd() {
        let x = logits(&[0.2, -1.3, 2.2, 0.0, 0.4, 1.1, -0.5, 0.9, 3.0], 3);
        let labels = [2, 0, 1];
        let err = finite_difference_check(|x| cross_entropy(x, &labels), &x, 1e-6).unwrap();
        assert!(err < 1e-6, "{err}");
        for gamma in [0.0, 0.5, 1.0, 2.0, 3.5] {
            let err = finite_difference_check(|x| focal_loss(x, &labels, gamma, &[0.5, 1.0, 2.0]), &x, 1e-6).unwrap();
            assert!(err < 1e-6, "gamma {gamma}: {err}");
        }
    }

    #[test]
    fn inverse_frequency_normalized() {
        let w = inverse_frequency_weights(&[160, 16]).unwrap();
        assert!((w.iter().sum::<f64>() / 2.0 - 1.0).abs() < 1e-12);
        assert!((w[1] / w[0] - 10.0).abs() < 1e-12);
        let w = inverse_frequency_weights(&[4, 0, 4]).unwrap();
        assert_eq!(w, vec![1.0, 0.0, 1.0]);
        assert!(inverse_frequency_weights(&[0, 0]).is_err());
    }
}
