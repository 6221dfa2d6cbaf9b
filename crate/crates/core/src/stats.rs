//! Goodness-of-fit tests and small estimators shared by the experiments.

use rand::Rng;
use serde::Serialize;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{invalid, Error, Result};

/// Sample mean and its standard error.
pub fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let m = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (m, f64::NAN);
    }
    let var = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0);
    (m, (var / n).sqrt())
}

/// Binomial proportion and standard error.
pub fn proportion(hits: usize, n: usize) -> (f64, f64) {
    let p = hits as f64 / n as f64;
    (p, (p * (1.0 - p) / n as f64).sqrt())
}

/// Kolmogorov distribution tail `Q(t) = 2 sum_{k>=1} (-1)^{k-1} exp(-2 k^2 t^2)`.
pub fn kolmogorov_q(t: f64) -> f64 {
    if t < 0.2 {
        return 1.0;
    }
    let mut s = 0.0;
    for k in 1..=100 {
        let kf = k as f64;
        let term = (-2.0 * kf * kf * t * t).exp();
        s += if k % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * s).clamp(0.0, 1.0)
}

#[derive(Clone, Debug, Serialize)]
pub struct KsResult {
    pub n: usize,
    pub statistic: f64,
    pub p_value: f64,
}

/// One-sample Kolmogorov-Smirnov test against a continuous CDF, with the
/// `sqrt(n) + 0.12 + 0.11/sqrt(n)` small-sample correction.
pub fn ks_test(sample: &[f64], cdf: impl Fn(f64) -> f64) -> Result<KsResult> {
    if sample.is_empty() {
        return invalid("KS test on an empty sample");
    }
    let mut xs = sample.to_vec();
    xs.sort_by(|a, b| a.partial_cmp(b).expect("finite sample"));
    let n = xs.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in xs.iter().enumerate() {
        let f = cdf(x);
        d = d.max(f - i as f64 / n).max((i + 1) as f64 / n - f);
    }
    let sn = n.sqrt();
    Ok(KsResult { n: xs.len(), statistic: d, p_value: kolmogorov_q((sn + 0.12 + 0.11 / sn) * d) })
}

/// CDF of the unit exponential.
pub fn exp1_cdf(x: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else {
        1.0 - (-x).exp()
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ChiSquareResult {
    pub statistic: f64,
    pub dof: f64,
    pub p_value: f64,
    /// Bins after merging.
    pub bins: usize,
}

/// Pearson chi-square of observed against expected counts. Adjacent bins are merged
/// until each expected count is at least `min_expected`; `fitted` parameters are
/// subtracted from the degrees of freedom.
pub fn chi_square(observed: &[f64], expected: &[f64], fitted: usize, min_expected: f64) -> Result<ChiSquareResult> {
    if observed.len() != expected.len() {
        return Err(Error::LengthMismatch(format!("{} observed vs {} expected", observed.len(), expected.len())));
    }
    let mut bins: Vec<(f64, f64)> = Vec::new();
    let (mut o, mut e) = (0.0, 0.0);
    for (&a, &b) in observed.iter().zip(expected) {
        o += a;
        e += b;
        if e >= min_expected {
            bins.push((o, e));
            o = 0.0;
            e = 0.0;
        }
    }
    if e > 0.0 || o > 0.0 {
        match bins.last_mut() {
            Some(last) => {
                last.0 += o;
                last.1 += e;
            }
            None => bins.push((o, e)),
        }
    }
    let dof = bins.len() as f64 - 1.0 - fitted as f64;
    if dof < 1.0 {
        return Err(Error::Inconclusive(format!("{} bins leave no degrees of freedom", bins.len())));
    }
    let statistic: f64 = bins.iter().map(|(o, e)| (o - e) * (o - e) / e).sum();
    let dist = ChiSquared::new(dof).map_err(|e| Error::InvalidParameter(format!("chi-square dof: {e}")))?;
    Ok(ChiSquareResult { statistic, dof, p_value: dist.sf(statistic), bins: bins.len() })
}

/// Total variation distance between two probability vectors.
pub fn total_variation(p: &[f64], q: &[f64]) -> f64 {
    p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>() / 2.0
}

/// Least-squares line `y = a + b x`; returns `(a, b)`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> Result<(f64, f64)> {
    if x.len() != y.len() || x.len() < 2 {
        return invalid("linear fit needs at least two paired points");
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx) * (v - mx)).sum();
    if sxx == 0.0 {
        return invalid("degenerate abscissae");
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let b = sxy / sxx;
    Ok((my - b * mx, b))
}

/// Percentile bootstrap interval of `stat` over resamples of `groups`, each group being
/// resampled with replacement independently.
pub fn bootstrap_ci<R: Rng + ?Sized>(
    groups: &[Vec<f64>],
    stat: impl Fn(&[Vec<f64>]) -> Option<f64>,
    resamples: usize,
    level: f64,
    rng: &mut R,
) -> Option<(f64, f64)> {
    let mut vals = Vec::with_capacity(resamples);
    for _ in 0..resamples {
        let rs: Vec<Vec<f64>> =
            groups.iter().map(|g| (0..g.len()).map(|_| g[rng.random_range(0..g.len())]).collect()).collect();
        if let Some(v) = stat(&rs) {
            vals.push(v);
        }
    }
    if vals.is_empty() {
        return None;
    }
    vals.sort_by(|a, b| a.partial_cmp(b).expect("finite statistic"));
    let q = |p: f64| vals[((p * (vals.len() - 1) as f64).round() as usize).min(vals.len() - 1)];
    Some((q((1.0 - level) / 2.0), q((1.0 + level) / 2.0)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::replica_rng;
    use rand_distr::{Distribution, Exp1};

    #[test]
    fn kolmogorov_tail_reference_points() {
        // Q(1.3581) = 0.05 and Q(1.6276) = 0.01 are the classical critical values.
        assert!((kolmogorov_q(1.3581) - 0.05).abs() < 1e-4);
        assert!((kolmogorov_q(1.6276) - 0.01).abs() < 1e-4);
        assert_eq!(kolmogorov_q(0.0), 1.0);
    }

    #[test]
    fn ks_null_calibration() {
        // p-values of exact Exp(1) samples should be roughly uniform.
        let mut below = 0;
        for i in 0..400 {
            let mut rng = replica_rng(31, i);
            let xs: Vec<f64> = (0..200).map(|_| -> f64 { Exp1.sample(&mut rng) }).collect();
            if ks_test(&xs, exp1_cdf).unwrap().p_value < 0.1 {
                below += 1;
            }
        }
        // Binomial(400, 0.1): mean 40, sd 6.
        assert!((below as f64 - 40.0).abs() < 20.0, "{below}");
    }

    #[test]
    fn ks_detects_wrong_scale() {
        let mut rng = replica_rng(32, 0);
        let xs: Vec<f64> = (0..2000)
            .map(|_| -> f64 {
                let e: f64 = Exp1.sample(&mut rng);
                1.3 * e
            })
            .collect();
        assert!(ks_test(&xs, exp1_cdf).unwrap().p_value < 1e-6);
    }

    #[test]
    fn chi_square_merges_small_bins() {
        let r = chi_square(&[10.0, 12.0, 0.0, 1.0, 9.0], &[11.0, 11.0, 0.5, 0.5, 10.0], 0, 5.0).unwrap();
        assert_eq!(r.bins, 3);
        assert!(r.p_value > 0.5);
        // statrs survival function at a textbook point: P(chi2_2 > 5.991) = 0.05.
        let d = ChiSquared::new(2.0).unwrap();
        assert!((d.sf(5.991464547107979) - 0.05).abs() < 1e-12);
    }

    #[test]
    fn linear_fit_recovers_line() {
        let x = [1.0, 2.0, 3.0, 4.0];
        let y: Vec<f64> = x.iter().map(|v| 2.0 - 0.5 * v).collect();
        let (a, b) = linear_fit(&x, &y).unwrap();
        assert!((a - 2.0).abs() < 1e-14 && (b + 0.5).abs() < 1e-14);
    }

    #[test]
    fn mean_se_and_tv() {
        let (m, se) = mean_se(&[1.0, 2.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((se - (1.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert_eq!(total_variation(&[0.5, 0.5], &[1.0, 0.0]), 0.5);
    }
}
