//! The two approximants of the scaled modified Bessel function `e^{-t} I_k(t)`:
//! the truncated power series (small `t`) and the Hankel asymptotic expansion (large `t`).

use crate::error::{invalid, Result};
use crate::real::Real;

/// Truncated series `e^{-t} (t/2)^k sum_{j<=J} (t^2/4)^j / (j! (j+k)!)`.
///
/// The `j = 0` term is formed in log space and the rest by the ratio
/// `t^2 / (4 j (j+k))`, so no factorial is ever materialised. Terms past the peak are
/// dropped once they fall below the working precision.
pub fn series_t<R: Real>(ctx: &R::Ctx, t: &R, k: u32, j_max: u32) -> Result<R> {
    let tf = t.to_f64();
    if tf < 0.0 {
        return invalid(format!("series argument must be non-negative, got {tf}"));
    }
    if tf > j_max as f64 {
        return invalid(format!("series argument {tf} exceeds J = {j_max}"));
    }
    let zero = R::from_i64(ctx, 0);
    if tf == 0.0 {
        return Ok(if k == 0 { R::from_i64(ctx, 1) } else { zero });
    }
    let half = R::ratio(ctx, 1, 2);
    let mut log0 = -t.clone() + R::from_i64(ctx, k as i64) * (t.clone() * half).ln();
    for i in 2..=k as i64 {
        log0 = log0 - R::from_i64(ctx, i).ln();
    }
    let q = t.clone() * t.clone() / R::from_i64(ctx, 4);
    // Terms are carried relative to exp(log0) and rescaled whenever they grow large,
    // so that neither factor over- or underflows for large t in f64.
    let rescale = R::from_f64(ctx, 1e-200);
    let rescale_log = R::from_f64(ctx, 200.0 * std::f64::consts::LN_10);
    let mut term = R::from_i64(ctx, 1);
    let mut sum = term.clone();
    let eps = R::epsilon(ctx) * 1e-3;
    for j in 1..=j_max as i64 {
        term = term * q.clone() / R::from_i64(ctx, j * (j + k as i64));
        sum = sum + term.clone();
        if sum.to_f64() > 1e200 {
            term = term * rescale.clone();
            sum = sum * rescale.clone();
            log0 = log0 + rescale_log.clone();
        }
        if (j as f64) > tf / 2.0 && term.to_f64() <= eps * sum.to_f64() {
            break;
        }
    }
    Ok(sum * log0.exp())
}

/// The coefficient `(k, j) = prod_{i<=j} (4k^2 - (2i-1)^2) / (4^j j!)`.
pub fn asymptotic_coeff(k: u32, j: u32) -> f64 {
    let k2 = 4.0 * (k as f64) * (k as f64);
    (1..=j).fold(1.0, |acc, i| {
        let odd = (2 * i - 1) as f64;
        acc * (k2 - odd * odd) / (4.0 * i as f64)
    })
}

/// Asymptotic expansion `(2 pi t)^{-1/2} sum_{j<=J~} (-1)^j (k,j) / (2t)^j`.
pub fn asymptotic_a<R: Real>(ctx: &R::Ctx, t: &R, k: u32, j_tilde: u32) -> R {
    let (sum, _) = asymptotic_with_last(ctx, t, k, j_tilde);
    sum
}

/// Returns the expansion together with the magnitude of its last retained term
/// relative to the leading one (a cheap validity indicator).
pub(crate) fn asymptotic_with_last<R: Real>(ctx: &R::Ctx, t: &R, k: u32, j_tilde: u32) -> (R, f64) {
    let k2 = R::from_i64(ctx, 4 * (k as i64) * (k as i64));
    let two_t = R::from_i64(ctx, 2) * t.clone();
    let mut c = R::from_i64(ctx, 1);
    let mut sum = c.clone();
    for j in 1..=j_tilde as i64 {
        let odd = R::from_i64(ctx, (2 * j - 1) * (2 * j - 1));
        c = -(c * (k2.clone() - odd)) / (R::from_i64(ctx, 4 * j) * two_t.clone());
        sum = sum + c.clone();
    }
    let last = c.abs().to_f64();
    let norm = (R::from_i64(ctx, 2) * R::pi(ctx) * t.clone()).sqrt();
    (sum / norm, last)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::real::{Ext, ExtCtx};

    // Independent oracle: the raw series at 200 terms with explicit factorials in
    // multi-precision, no ratio recursion and no log space.
    fn brute_series(t: i64, k: u32, terms: u32) -> f64 {
        let ctx = ExtCtx { bits: 256 };
        let t = Ext::from_i64(&ctx, t);
        let mut fact = vec![Ext::from_i64(&ctx, 1)];
        for i in 1..=(terms + k + 1) as i64 {
            let prev = fact.last().unwrap().clone();
            fact.push(prev * Ext::from_i64(&ctx, i));
        }
        let half_t = t.clone() / Ext::from_i64(&ctx, 2);
        let mut pow_half = Ext::from_i64(&ctx, 1);
        for _ in 0..k {
            pow_half = pow_half * half_t.clone();
        }
        let q = half_t.clone() * half_t;
        let mut qj = Ext::from_i64(&ctx, 1);
        let mut sum = Ext::from_i64(&ctx, 0);
        for j in 0..=terms as usize {
            sum = sum + qj.clone() / (fact[j].clone() * fact[j + k as usize].clone());
            qj = qj * q.clone();
        }
        ((-t).exp() * pow_half * sum).to_f64()
    }

    #[test]
    fn series_at_zero() {
        assert_eq!(series_t::<f64>(&(), &0.0, 0, 139).unwrap(), 1.0);
        assert_eq!(series_t::<f64>(&(), &0.0, 2, 139).unwrap(), 0.0);
    }

    #[test]
    fn series_matches_brute_force_oracle() {
        let oracle = brute_series(1, 0, 200);
        assert!((oracle - 0.465_759_607_6).abs() < 1e-10);
        let v = series_t::<f64>(&(), &1.0, 0, 139).unwrap();
        assert!((v - oracle).abs() < 1e-15, "{v} vs {oracle}");
        for (t, k) in [(5, 1), (20, 3), (60, 2), (79, 0)] {
            let v = series_t::<f64>(&(), &(t as f64), k, 139).unwrap();
            let o = brute_series(t, k, 200);
            assert!(((v - o) / o).abs() < 1e-13, "t={t} k={k}: {v} vs {o}");
        }
    }

    #[test]
    fn series_rejects_large_argument() {
        assert!(series_t::<f64>(&(), &150.0, 0, 139).is_err());
        assert!(series_t::<f64>(&(), &-1.0, 0, 139).is_err());
    }

    #[test]
    fn asymptotic_leading_term() {
        let t = 1.0e6;
        let v = asymptotic_a::<f64>(&(), &t, 0, 0);
        assert_eq!(v, 1.0 / (2.0 * std::f64::consts::PI * t).sqrt());
    }

    #[test]
    fn asymptotic_coefficient_one_one() {
        // (4 - 1) / (4 * 1!)
        assert_eq!(asymptotic_coeff(1, 1), 0.75);
        assert_eq!(asymptotic_coeff(3, 0), 1.0);
    }

    #[test]
    fn asymptotic_at_crossover_matches_series_oracle() {
        let oracle = brute_series(80, 0, 200);
        let a = asymptotic_a::<f64>(&(), &80.0, 0, 30);
        assert!(((a - oracle) / oracle).abs() < 1e-12, "{a} vs {oracle}");
    }

    #[test]
    fn series_survives_large_argument() {
        // Large-t leading behaviour e^{-t} I_0(t) ~ (2 pi t)^{-1/2} (1 + 1/(8t)).
        let t = 5000.0;
        let v = series_t::<f64>(&(), &t, 0, 6000).unwrap();
        let a = (1.0 + 1.0 / (8.0 * t)) / (2.0 * std::f64::consts::PI * t).sqrt();
        assert!(((v - a) / a).abs() < 1e-7, "{v} vs {a}");
    }

    #[test]
    fn ext_series_agrees_with_f64() {
        let ctx = ExtCtx::default();
        let t = Ext::from_i64(&ctx, 33);
        let e = series_t::<Ext>(&ctx, &t, 2, 139).unwrap().to_f64();
        let f = series_t::<f64>(&(), &33.0, 2, 139).unwrap();
        assert!(((e - f) / e).abs() < 1e-14);
    }
}
