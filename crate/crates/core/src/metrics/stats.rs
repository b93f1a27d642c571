use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::classification::{confusion, mcc};
use crate::error::{Error, Result};

const LANCZOS_G: f64 = 7.0;
const LANCZOS: [f64; 9] = [
    0.999_999_999_999_809_9,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_1,
    -176.615_029_162_140_6,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_572e-6,
    1.505_632_735_149_311_6e-7,
];

/// `ln Γ(x)` for `x > 0`.
pub fn ln_gamma(x: f64) -> f64 {
    if x < 0.5 {
        // reflection
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = LANCZOS[0];
    let t = x + LANCZOS_G + 0.5;
    for (i, c) in LANCZOS.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

/// Regularized incomplete beta `I_x(a, b)`.
pub fn incomplete_beta(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    if x < (a + 1.0) / (a + b + 2.0) {
        ln_front.exp() * beta_fraction(a, b, x) / a
    } else {
        1.0 - ln_front.exp() * beta_fraction(b, a, 1.0 - x) / b
    }
}

/// Continued fraction for the incomplete beta, modified Lentz.
fn beta_fraction(a: f64, b: f64, x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    const EPS: f64 = 1e-16;
    let clamp = |v: f64| if v.abs() < TINY { TINY } else { v };
    let (qab, qap, qam) = (a + b, a + 1.0, a - 1.0);
    let mut c = 1.0;
    let mut d = 1.0 / clamp(1.0 - qab * x / qap);
    let mut h = d;
    for m in 1..=500 {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 / clamp(1.0 + aa * d);
        c = clamp(1.0 + aa / c);
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 / clamp(1.0 + aa * d);
        c = clamp(1.0 + aa / c);
        let delta = d * c;
        h *= delta;
        if (delta - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

/// Two-sided tail probability `P(|T| >= |t|)` for Student's t.
pub fn student_t_two_sided(t: f64, df: f64) -> f64 {
    if t.is_infinite() {
        return 0.0;
    }
    incomplete_beta(df / 2.0, 0.5, df / (df + t * t))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TTest {
    pub t: f64,
    pub p: f64,
    pub df: usize,
}

/// Paired t-test on `a - b`. With zero spread in the differences, p is 1
/// for a zero mean and 0 otherwise.
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<TTest> {
    if a.len() != b.len() {
        return Err(Error::Contract(format!("paired samples differ in length ({} vs {})", a.len(), b.len())));
    }
    let m = a.len();
    if m < 2 {
        return Err(Error::Contract(format!("paired t-test needs at least 2 pairs, got {m}")));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let mean = d.iter().sum::<f64>() / m as f64;
    let var = d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m - 1) as f64;
    let df = m - 1;
    if var == 0.0 {
        let (t, p) = if mean == 0.0 { (0.0, 1.0) } else { (mean.signum() * f64::INFINITY, 0.0) };
        return Ok(TTest { t, p, df });
    }
    let t = mean / (var.sqrt() / (m as f64).sqrt());
    Ok(TTest { t, p: student_t_two_sided(t, df as f64), df })
}

/// With-replacement resamples of `0..n`, a pure function of `(n, seed)`.
pub fn bootstrap_indices(n: usize, n_resamples: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n_resamples).map(|_| (0..n).map(|_| rng.random_range(0..n)).collect()).collect()
}

/// MCC on each bootstrap resample of the test set.
pub fn bootstrap_mcc_samples(
    preds: &[usize],
    labels: &[usize],
    num_classes: usize,
    n_resamples: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    if n_resamples < 2 {
        return Err(Error::Contract(format!("need at least 2 resamples, got {n_resamples}")));
    }
    if preds.len() != labels.len() || preds.is_empty() {
        return Err(Error::Contract(format!("{} predictions for {} labels", preds.len(), labels.len())));
    }
    bootstrap_indices(preds.len(), n_resamples, seed)
        .iter()
        .map(|idx| {
            let p: Vec<usize> = idx.iter().map(|&i| preds[i]).collect();
            let l: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
            mcc(&confusion(&p, &l, num_classes)?)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use statrs::distribution::{ContinuousCDF, StudentsT};
    use statrs::function::gamma::ln_gamma as ln_gamma_oracle;

    #[test]
    fn ln_gamma_against_oracle() {
        for x in [0.1, 0.5, 1.0, 1.5, 2.0, 3.7, 10.0, 25.5, 171.0] {
            let (a, b) = (ln_gamma(x), ln_gamma_oracle(x));
            assert!((a - b).abs() < 1e-12 * b.abs().max(1.0), "{x}: {a} vs {b}");
        }
    }

    #[test]
    fn incomplete_beta_closed_forms() {
        // I_x(1, 1) = x ; I_x(a, 1) = x^a
        for x in [0.1, 0.37, 0.9] {
            assert!((incomplete_beta(1.0, 1.0, x) - x).abs() < 1e-14);
            assert!((incomplete_beta(3.0, 1.0, x) - x.powi(3)).abs() < 1e-14);
        }
        assert_eq!(incomplete_beta(2.0, 3.0, 0.0), 0.0);
        assert_eq!(incomplete_beta(2.0, 3.0, 1.0), 1.0);
    }

    #[test]
    fn worked_example() {
        let a = [1.0, 2.0, 3.0, 4.0, 5.0];
        let r = paired_t_test(&a, &[0.0; 5]).unwrap();
        assert!((r.t - 4.242640687119285).abs() < 1e-12);
        assert!((r.p - 0.013236).abs() < 5e-6, "{}", r.p);
        assert_eq!(r.df, 4);
    }

    #[test]
    fn p_values_match_oracle_across_df() {
        for df in 2..=50usize {
            let dist = StudentsT::new(0.0, 1.0, df as f64).unwrap();
            for t in [0.0, 0.3, 1.0, 2.1, 3.5, 7.0] {
                let want = 2.0 * (1.0 - dist.cdf(t));
                let got = student_t_two_sided(t, df as f64);
                assert!((got - want).abs() < 1e-6, "df {df} t {t}: {got} vs {want}");
            }
        }
    }

    #[test]
    fn degenerate_and_antisymmetric_cases() {
        let a = [0.5, 1.0, 2.0];
        assert_eq!(paired_t_test(&a, &a).unwrap().p, 1.0);
        let shifted: Vec<f64> = a.iter().map(|v| v + 0.25).collect();
        assert_eq!(paired_t_test(&shifted, &a).unwrap().p, 0.0);
        let b = [0.1, 0.6, 0.2];
        let (x, y) = (paired_t_test(&a, &b).unwrap(), paired_t_test(&b, &a).unwrap());
        assert_eq!(x.t, -y.t);
        assert_eq!(x.p, y.p);
        assert!(paired_t_test(&[1.0], &[2.0]).is_err());
        assert!(paired_t_test(&[1.0, 2.0], &[2.0]).is_err());
    }

    #[test]
    fn bootstrap_pairing_and_degenerate_resamples() {
        assert_eq!(bootstrap_indices(40, 5, 3), bootstrap_indices(40, 5, 3));
        assert_ne!(bootstrap_indices(40, 5, 3), bootstrap_indices(40, 5, 4));
        let labels = [0, 1, 0, 1, 1, 0];
        let perfect = bootstrap_mcc_samples(&labels, &labels, 2, 20, 1).unwrap();
        // resamples drawing a single class hit the zero convention
        assert!(perfect.iter().all(|&v| v == 1.0 || v == 0.0));
        assert!(perfect.iter().filter(|&&v| v == 1.0).count() > 15);
        assert_eq!(perfect, bootstrap_mcc_samples(&labels, &labels, 2, 20, 1).unwrap());
        assert!(bootstrap_mcc_samples(&labels, &labels, 2, 1, 1).is_err());
    }

    #[test]
    fn bootstrap_mean_tracks_full_set() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let labels: Vec<usize> = (0..500).map(|_| rng.random_range(0..3)).collect();
        let preds: Vec<usize> =
            labels.iter().map(|&l| if rng.random::<f64>() < 0.75 { l } else { rng.random_range(0..3) }).collect();
        let full = mcc(&confusion(&preds, &labels, 3).unwrap()).unwrap();
        let samples = bootstrap_mcc_samples(&preds, &labels, 3, 1000, 9).unwrap();
        let mean = samples.iter().sum::<f64>() / samples.len() as f64;
        assert!((mean - full).abs() < 0.05, "{mean} vs {full}");
    }
}
