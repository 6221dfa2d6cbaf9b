//! Lattice Green's function by quadrature of the Bessel-product integral
//! `g(x) = ∫ d e^u prod_k e^{-e^u} I_{|x_k|}(e^u) du`.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::bessel::{asymptotic_with_last, series_t};
use crate::error::{invalid, Error, Result};
use crate::lattice::PointZ;
use crate::real::{Ext, ExtCtx, Real};

/// Largest coordinate magnitude the quadrature is trusted for.
pub const MAX_ORDER_LIMIT: u32 = 54;
/// Minimal `M h` for the analytic tail replacement.
pub const MIN_MH: f64 = 45.0;

/// Discretisation parameters of the quadrature.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GreenParams {
    /// Step `h = h_num / h_den`.
    pub h_num: i64,
    pub h_den: i64,
    /// Riemann sum over `m` in `[-M, M]`.
    pub m: i64,
    /// Series/asymptotic crossover.
    pub t: f64,
    /// Series order.
    pub j: u32,
    /// Asymptotic order.
    pub j_tilde: u32,
    /// Largest admissible `|x_k|`.
    pub max_order: u32,
}

impl Default for GreenParams {
    fn default() -> Self {
        GreenParams { h_num: 76, h_den: 630, m: 630, t: 80.0, j: 139, j_tilde: 30, max_order: 3 }
    }
}

impl GreenParams {
    pub fn h(&self) -> f64 {
        self.h_num as f64 / self.h_den as f64
    }

    /// Parameters able to reach coordinates up to `radius`. The crossover moves out
    /// so that the asymptotic expansion stays convergent for orders up to `radius`,
    /// and the series order follows it in the default `J / T` ratio.
    pub fn for_radius(radius: u32) -> Result<Self> {
        if radius > MAX_ORDER_LIMIT {
            return invalid(format!("radius {radius} exceeds the supported maximum {MAX_ORDER_LIMIT}"));
        }
        let mut p = GreenParams { max_order: radius.max(3), ..GreenParams::default() };
        while asymptotic_indicator(p.t, p.max_order, p.j_tilde) > 1e-17 {
            p.t = (p.t * 1.1).ceil();
        }
        p.j = p.j.max((p.t * 139.0 / 80.0).ceil() as u32);
        p.validate(3)?;
        Ok(p)
    }

    /// Refined parameters used for the error estimate: `h/2`, `2M`, `2T`, `2J`.
    pub fn refined(&self) -> Self {
        GreenParams {
            h_num: self.h_num,
            h_den: self.h_den * 2,
            m: self.m * 2,
            t: self.t * 2.0,
            j: self.j * 2,
            j_tilde: self.j_tilde,
            max_order: self.max_order,
        }
    }

    pub fn validate(&self, d: usize) -> Result<()> {
        if d < 3 {
            return invalid(format!("the lattice Green function needs d >= 3, got {d}"));
        }
        if self.h_num <= 0 || self.h_den <= 0 {
            return invalid("h must be positive");
        }
        if self.m < 1 {
            return invalid("M must be at least 1");
        }
        if !(self.t > 0.0 && self.t <= self.j as f64) {
            return invalid(format!("crossover T = {} must lie in (0, J = {}]", self.t, self.j));
        }
        if self.j_tilde < 1 {
            return invalid("J~ must be at least 1");
        }
        if self.max_order > MAX_ORDER_LIMIT {
            return invalid(format!("maxOrder {} exceeds {MAX_ORDER_LIMIT}", self.max_order));
        }
        if (self.m as f64) * self.h() < MIN_MH {
            return invalid(format!("M h = {} is below {MIN_MH}", self.m as f64 * self.h()));
        }
        let ind = asymptotic_indicator(self.t, self.max_order, self.j_tilde);
        if ind > 1e-12 {
            return invalid(format!(
                "asymptotic expansion not converged at T = {} for order {} (last term {ind:e})",
                self.t, self.max_order
            ));
        }
        Ok(())
    }
}

/// Largest partial-term magnitude relative to the leading term, taken over the
/// retained terms and the last one, at `t` and order `k`.
fn asymptotic_indicator(t: f64, k: u32, j_tilde: u32) -> f64 {
    let (_, last) = asymptotic_with_last::<f64>(&(), &t, k, j_tilde);
    last
}

/// The quadrature `g~(x)` for a batch of canonical keys (sorted `|x_k|`).
pub fn quadrature<R: Real>(ctx: &R::Ctx, d: usize, keys: &[Vec<u32>], p: &GreenParams) -> Result<Vec<R>> {
    p.validate(d)?;
    let max_k = keys.iter().flat_map(|k| k.iter().copied()).max().unwrap_or(0);
    if max_k > p.max_order {
        return invalid(format!("coordinate {max_k} exceeds maxOrder {}", p.max_order));
    }
    for key in keys {
        if key.len() != d {
            return Err(Error::DimensionMismatch { expected: d, got: key.len() });
        }
    }
    let zero = R::from_i64(ctx, 0);
    let h = R::ratio(ctx, p.h_num, p.h_den);
    let dr = R::from_i64(ctx, d as i64);
    let crossover = R::from_f64(ctx, p.t);
    let mut acc = vec![zero.clone(); keys.len()];
    let mut e = vec![zero.clone(); max_k as usize + 1];
    for m in -p.m..=p.m {
        let t = (h.clone() * R::from_i64(ctx, m)).exp();
        if t <= crossover {
            for (k, slot) in e.iter_mut().enumerate() {
                *slot = series_t(ctx, &t, k as u32, p.j)?;
            }
        } else {
            for (k, slot) in e.iter_mut().enumerate() {
                *slot = asymptotic_with_last(ctx, &t, k as u32, p.j_tilde).0;
            }
        }
        let w = dr.clone() * h.clone() * t;
        for (a, key) in acc.iter_mut().zip(keys) {
            let mut prod = w.clone();
            for &k in key {
                prod = prod * e[k as usize].clone();
            }
            *a = a.clone() + prod;
        }
    }
    let one = R::from_i64(ctx, 1);
    let expo = dr.clone() / R::from_i64(ctx, 2) - one.clone();
    let two_pi = R::from_i64(ctx, 2) * R::pi(ctx);
    let norm = (dr.clone() / R::from_i64(ctx, 2) * two_pi.ln()).exp();
    let tail = dr / norm * h.clone() * (-(R::from_i64(ctx, p.m + 1) * expo.clone() * h.clone())).exp()
        / (one - (-(expo * h)).exp());
    Ok(acc.into_iter().map(|a| a + tail.clone()).collect())
}

/// One Green value with its refinement error estimate `4 |g~(params) - g~(refined)|`.
pub fn green_value(x: &PointZ, params: &GreenParams) -> Result<(f64, f64)> {
    let key = x.green_key();
    let d = x.dim();
    let v = quadrature::<f64>(&(), d, std::slice::from_ref(&key), params)?[0];
    let r = quadrature::<f64>(&(), d, std::slice::from_ref(&key), &params.refined())?[0];
    Ok((v, 4.0 * (v - r).abs()))
}

/// Multi-precision variant of [`green_value`].
pub fn green_value_ext(x: &PointZ, params: &GreenParams, ctx: &ExtCtx) -> Result<(Ext, Ext)> {
    let key = x.green_key();
    let d = x.dim();
    let v = quadrature::<Ext>(ctx, d, std::slice::from_ref(&key), params)?.remove(0);
    let r = quadrature::<Ext>(ctx, d, std::slice::from_ref(&key), &params.refined())?.remove(0);
    let err = (v.clone() - r).abs() * Ext::from_i64(ctx, 4);
    Ok((v, err))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GreenEntry {
    pub value: f64,
    pub err: f64,
}

/// Green values for all offsets with `|x|_inf <= radius`, stored once per symmetry class.
#[derive(Clone, Debug)]
pub struct GreenTable {
    d: usize,
    radius: u32,
    params: GreenParams,
    entries: BTreeMap<Vec<u32>, GreenEntry>,
    dense: Option<Vec<f64>>,
}

/// Every non-decreasing `d`-tuple with entries in `0..=radius`.
pub fn canonical_keys(d: usize, radius: u32) -> Vec<Vec<u32>> {
    fn rec(d: usize, lo: u32, radius: u32, cur: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
        if cur.len() == d {
            out.push(cur.clone());
            return;
        }
        for v in lo..=radius {
            cur.push(v);
            rec(d, v, radius, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(d, 0, radius, &mut Vec::with_capacity(d), &mut out);
    out
}

const DENSE_LIMIT: usize = 1 << 24;

impl GreenTable {
    /// Builds the table with the given parameters (`radius <= params.max_order`).
    pub fn build(d: usize, radius: u32, params: &GreenParams) -> Result<Self> {
        if radius > params.max_order {
            return invalid(format!("radius {radius} exceeds maxOrder {}", params.max_order));
        }
        let keys = canonical_keys(d, radius);
        let base = quadrature::<f64>(&(), d, &keys, params)?;
        let fine = quadrature::<f64>(&(), d, &keys, &params.refined())?;
        let entries = keys
            .into_iter()
            .zip(base.into_iter().zip(fine))
            .map(|(k, (v, r))| (k, GreenEntry { value: v, err: 4.0 * (v - r).abs() }))
            .collect();
        let table = GreenTable::from_entries(d, radius, params.clone(), entries)?;
        table.check_invariants()?;
        Ok(table)
    }

    /// Default parameters when `radius <= 3`, otherwise [`GreenParams::for_radius`].
    pub fn for_radius(d: usize, radius: u32) -> Result<Self> {
        let params = if radius <= 3 { GreenParams::default() } else { GreenParams::for_radius(radius)? };
        GreenTable::build(d, radius, &params)
    }

    fn from_entries(
        d: usize,
        radius: u32,
        params: GreenParams,
        entries: BTreeMap<Vec<u32>, GreenEntry>,
    ) -> Result<Self> {
        let side = radius as usize + 1;
        let size = side.checked_pow(d as u32).unwrap_or(usize::MAX);
        let dense = if size <= DENSE_LIMIT {
            let mut v = vec![f64::NAN; size];
            let mut idx = vec![0usize; d];
            for (i, slot) in v.iter_mut().enumerate() {
                let mut rem = i;
                for c in idx.iter_mut().rev() {
                    *c = rem % side;
                    rem /= side;
                }
                let mut key: Vec<u32> = idx.iter().map(|&c| c as u32).collect();
                key.sort_unstable();
                if let Some(e) = entries.get(&key) {
                    *slot = e.value;
                }
            }
            Some(v)
        } else {
            None
        };
        Ok(GreenTable { d, radius, params, entries, dense })
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn radius(&self) -> u32 {
        self.radius
    }

    pub fn params(&self) -> &GreenParams {
        &self.params
    }

    pub fn entries(&self) -> &BTreeMap<Vec<u32>, GreenEntry> {
        &self.entries
    }

    pub fn g0(&self) -> f64 {
        self.entries[&vec![0; self.d]].value
    }

    pub fn g0_err(&self) -> f64 {
        self.entries[&vec![0; self.d]].err
    }

    pub fn covers(&self, x: &PointZ) -> bool {
        x.dim() == self.d && x.linf() <= self.radius as i64
    }

    pub fn entry(&self, x: &PointZ) -> Result<GreenEntry> {
        if !self.covers(x) {
            return Err(Error::TableCoverage(x.0.clone()));
        }
        Ok(self.entries[&x.green_key()])
    }

    pub fn g(&self, x: &PointZ) -> Result<f64> {
        Ok(self.entry(x)?.value)
    }

    /// Fast lookup by raw offset; `None` outside the table.
    #[inline]
    pub fn g_offset(&self, x: &[i64]) -> Option<f64> {
        let r = self.radius as i64;
        if let Some(dense) = &self.dense {
            let side = r as usize + 1;
            let mut i = 0usize;
            for &c in x {
                let a = c.abs();
                if a > r {
                    return None;
                }
                i = i * side + a as usize;
            }
            Some(dense[i])
        } else {
            if x.iter().any(|c| c.abs() > r) {
                return None;
            }
            let mut key: Vec<u32> = x.iter().map(|c| c.unsigned_abs() as u32).collect();
            key.sort_unstable();
            self.entries.get(&key).map(|e| e.value)
        }
    }

    /// Positivity, maximality of `g(0)` and the strict l1-monotonicity
    /// `sup_{|x|_1 > n} g < sup_{|x|_1 = n} g` with a margin above the error estimates.
    pub fn check_invariants(&self) -> Result<()> {
        let g0 = self.g0();
        for (k, e) in &self.entries {
            if !(e.value > 0.0) {
                return invalid(format!("non-positive Green value at {k:?}"));
            }
            if k.iter().any(|&c| c != 0) && e.value >= g0 {
                return invalid(format!("g({k:?}) >= g(0)"));
            }
        }
        let max_l1 = self.entries.keys().map(|k| k.iter().sum::<u32>()).max().unwrap_or(0);
        let mut sup_at = vec![(f64::NEG_INFINITY, 0.0f64); max_l1 as usize + 1];
        for (k, e) in &self.entries {
            let n = k.iter().sum::<u32>() as usize;
            if e.value > sup_at[n].0 {
                sup_at[n] = (e.value, e.err);
            }
        }
        let mut beyond = (f64::NEG_INFINITY, 0.0f64);
        for n in (0..sup_at.len()).rev() {
            let here = sup_at[n];
            if here.0.is_finite() && beyond.0.is_finite() {
                let margin = here.0 - beyond.0;
                if margin <= here.1 + beyond.1 {
                    return Err(Error::InsufficientPrecision { margin, required: here.1 + beyond.1 });
                }
            }
            if here.0 > beyond.0 {
                beyond = here;
            }
        }
        Ok(())
    }

    /// CSV with header `d,key,value,err`; keys are sorted `|x_k|` joined by `:`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("d,key,value,err\n");
        for (k, e) in &self.entries {
            let key: Vec<String> = k.iter().map(|c| c.to_string()).collect();
            let _ = writeln!(s, "{},{},{:.17e},{:.3e}", self.d, key.join(":"), e.value, e.err);
        }
        s
    }

    /// Reads a table written by [`GreenTable::to_csv`]. The table must contain every key
    /// up to its largest coordinate.
    pub fn from_csv(text: &str, params: GreenParams) -> Result<Self> {
        let mut entries = BTreeMap::new();
        let mut d = None;
        for (lineno, line) in text.lines().enumerate() {
            if lineno == 0 || line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 4 {
                return invalid(format!("line {}: expected 4 fields", lineno + 1));
            }
            let parse_err = |what: &str| Error::InvalidParameter(format!("line {}: bad {what}", lineno + 1));
            let dd: usize = f[0].trim().parse().map_err(|_| parse_err("d"))?;
            if *d.get_or_insert(dd) != dd {
                return invalid("mixed dimensions in green table");
            }
            let mut key = f[1]
                .split(':')
                .map(|c| c.trim().parse::<u32>().map_err(|_| parse_err("key")))
                .collect::<Result<Vec<_>>>()?;
            key.sort_unstable();
            if key.len() != dd {
                return Err(parse_err("key length"));
            }
            let value: f64 = f[2].trim().parse().map_err(|_| parse_err("value"))?;
            let err: f64 = f[3].trim().parse().map_err(|_| parse_err("err"))?;
            entries.insert(key, GreenEntry { value, err });
        }
        let d = d.ok_or_else(|| Error::InvalidParameter("empty green table".into()))?;
        let radius = entries.keys().flat_map(|k| k.iter().copied()).max().unwrap_or(0);
        if entries.len() != canonical_keys(d, radius).len() {
            return invalid("green table is missing keys");
        }
        let table = GreenTable::from_entries(d, radius, params, entries)?;
        table.check_invariants()?;
        Ok(table)
    }
}
