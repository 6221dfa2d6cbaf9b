//! Capacities and equilibrium measures from the Green matrix `G_K e_K = 1`.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use super::green::{quadrature, GreenParams, GreenTable};
use crate::error::{invalid, Error, Result};
use crate::lattice::{FiniteSet, PointZ};
use crate::real::{Ext, ExtCtx, Real};

#[derive(Clone, Debug)]
pub struct CapacityResult {
    pub set: FiniteSet,
    pub cap: f64,
    /// `e_K`, indexed like `set.points()`.
    pub equilibrium: Vec<f64>,
    /// `1 / (g(0) cap)`.
    pub alpha_star: f64,
    /// Propagated table error plus the solver residual contribution.
    pub err: f64,
    /// `|G_K e_K - 1|_inf`.
    pub residual: f64,
    /// `cap <= 2 / g(0)`.
    pub admissible: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct EquilibriumMass {
    pub point: Vec<i64>,
    pub mass: f64,
}

/// JSON shape of a capacity result.
#[derive(Clone, Debug, Serialize)]
pub struct CapacityReport {
    pub set: Vec<Vec<i64>>,
    pub cap: f64,
    pub err: f64,
    #[serde(rename = "alphaStar")]
    pub alpha_star: f64,
    pub admissible: bool,
    pub equilibrium: Vec<EquilibriumMass>,
}

impl CapacityResult {
    pub fn report(&self) -> CapacityReport {
        CapacityReport {
            set: self.set.points().iter().map(|p| p.0.clone()).collect(),
            cap: self.cap,
            err: self.err,
            alpha_star: self.alpha_star,
            admissible: self.admissible,
            equilibrium: self
                .set
                .points()
                .iter()
                .zip(&self.equilibrium)
                .map(|(p, &m)| EquilibriumMass { point: p.0.clone(), mass: m })
                .collect(),
        }
    }

    /// Largest equilibrium mass found off the internal boundary.
    pub fn interior_mass(&self) -> f64 {
        let boundary = self.set.internal_boundary();
        self.set
            .points()
            .iter()
            .zip(&self.equilibrium)
            .filter(|(p, _)| !boundary.contains(p))
            .map(|(_, m)| m.abs())
            .fold(0.0, f64::max)
    }
}

fn check_dim(k: &FiniteSet, table: &GreenTable) -> Result<()> {
    if k.dim() != table.dim() {
        return Err(Error::DimensionMismatch { expected: table.dim(), got: k.dim() });
    }
    if k.is_empty() {
        return invalid("capacity of the empty set requested");
    }
    Ok(())
}

/// The matrix `(g(x - y))_{x, y in pts}` and the matching entrywise error estimates.
pub fn green_matrix(pts: &[PointZ], table: &GreenTable) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let n = pts.len();
    let mut g = DMatrix::zeros(n, n);
    let mut e = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let entry = table.entry(&pts[i].sub(&pts[j]))?;
            g[(i, j)] = entry.value;
            g[(j, i)] = entry.value;
            e[(i, j)] = entry.err;
            e[(j, i)] = entry.err;
        }
    }
    Ok((g, e))
}

/// Solves `G x = 1` by Cholesky, falling back to LU with partial pivoting.
pub(crate) fn solve_ones(g: &DMatrix<f64>) -> Result<DVector<f64>> {
    let n = g.nrows();
    let ones = DVector::from_element(n, 1.0);
    if let Some(ch) = g.clone().cholesky() {
        return Ok(ch.solve(&ones));
    }
    g.clone().lu().solve(&ones).ok_or_else(|| Error::Singular(format!("Green matrix of size {n} is singular")))
}

/// `cap(K)` and `e_K` for a finite set whose difference vectors the table covers.
pub fn capacity(k: &FiniteSet, table: &GreenTable) -> Result<CapacityResult> {
    check_dim(k, table)?;
    let (g, gerr) = green_matrix(k.points(), table)?;
    let e = solve_ones(&g)?;
    let r = &g * &e - DVector::from_element(e.len(), 1.0);
    let residual = r.amax();
    if !residual.is_finite() || residual > 1e-6 {
        return Err(Error::Singular(format!("residual {residual:e} after solve")));
    }
    let cap = e.sum();
    // First-order perturbation: d cap = -e^T dG e, and a residual r shifts cap by e^T r.
    let ea = e.abs();
    let err = (ea.transpose() * &gerr * &ea)[(0, 0)] + e.iter().zip(r.iter()).map(|(a, b)| a * b).sum::<f64>().abs();
    let g0 = table.g0();
    Ok(CapacityResult {
        set: k.clone(),
        cap,
        equilibrium: e.iter().copied().collect(),
        alpha_star: 1.0 / (g0 * cap),
        err,
        residual,
        admissible: cap <= 2.0 / g0,
    })
}

/// `alpha_* = 1 - 1 / (2 g(0))`, the threshold of a nearest-neighbour pair.
pub fn alpha_star_neighbors(table: &GreenTable) -> f64 {
    1.0 - 1.0 / (2.0 * table.g0())
}

/// `cap(K) + cap(K') - cap(K u K')` for disjoint sets.
pub fn subadditivity_defect(k: &FiniteSet, kp: &FiniteSet, table: &GreenTable) -> Result<f64> {
    if k.points().iter().any(|p| kp.contains(p)) {
        return invalid("subadditivity check needs disjoint sets");
    }
    let union = k.union(kp)?;
    Ok(capacity(k, table)?.cap + capacity(kp, table)?.cap - capacity(&union, table)?.cap)
}

/// Capacity in multi-precision: Green values at `params` (and at the refined
/// parameters for the error estimate), then Gaussian elimination in `Ext`.
pub fn capacity_ext(k: &FiniteSet, params: &GreenParams, ctx: &ExtCtx) -> Result<(Ext, Ext)> {
    let pts = k.points();
    if pts.is_empty() {
        return invalid("capacity of the empty set requested");
    }
    let mut keys: Vec<Vec<u32>> = Vec::new();
    for a in pts {
        for b in pts {
            keys.push(a.sub(b).green_key());
        }
    }
    keys.sort();
    keys.dedup();
    if keys.iter().flatten().any(|&c| c > params.max_order) {
        return invalid(format!("set needs coordinates beyond maxOrder {}", params.max_order));
    }
    let cap_at = |p: &GreenParams| -> Result<Ext> {
        let vals = quadrature::<Ext>(ctx, k.dim(), &keys, p)?;
        let n = pts.len();
        let mut m: Vec<Vec<Ext>> = Vec::with_capacity(n);
        for a in pts {
            m.push(
                pts.iter()
                    .map(|b| {
                        let idx = keys.binary_search(&a.sub(b).green_key()).expect("key present");
                        vals[idx].clone()
                    })
                    .collect(),
            );
        }
        let x = gauss_solve(ctx, m, vec![Ext::from_i64(ctx, 1); n])?;
        Ok(x.into_iter().fold(Ext::from_i64(ctx, 0), |s, v| s + v))
    };
    let c = cap_at(params)?;
    let fine = cap_at(&params.refined())?;
    let err = (c.clone() - fine).abs() * Ext::from_i64(ctx, 4);
    Ok((c, err))
}

/// Gaussian elimination with partial pivoting over a generic [`Real`].
pub fn gauss_solve<R: Real>(ctx: &R::Ctx, mut a: Vec<Vec<R>>, mut b: Vec<R>) -> Result<Vec<R>> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&i, &j| a[i][col].abs().partial_cmp(&a[j][col].abs()).expect("comparable"))
            .expect("non-empty range");
        if a[piv][col].abs().to_f64() == 0.0 {
            return Err(Error::Singular(format!("zero pivot in column {col}")));
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..n {
            let f = a[row][col].clone() / a[col][col].clone();
            for c in col..n {
                let v = a[col][c].clone() * f.clone();
                a[row][c] = a[row][c].clone() - v;
            }
            b[row] = b[row].clone() - f * b[col].clone();
        }
    }
    let mut x = vec![R::from_i64(ctx, 0); n];
    for row in (0..n).rev() {
        let mut s = b[row].clone();
        for c in row + 1..n {
            s = s - a[row][c].clone() * x[c].clone();
        }
        x[row] = s / a[row][row].clone();
    }
    Ok(x)
}

/// Sets used in the admissibility classification.
pub mod shapes {
    use crate::lattice::FiniteSet;

    /// The straight triple `{0, e2, 2 e2}`.
    pub fn k1(d: usize) -> FiniteSet {
        FiniteSet::from_coords(d, &[&[0, 0], &[0, 1], &[0, 2]]).expect("valid")
    }

    /// The bent triple `{0, e2, e1}`.
    pub fn k2(d: usize) -> FiniteSet {
        FiniteSet::from_coords(d, &[&[0, 0], &[0, 1], &[1, 0]]).expect("valid")
    }

    /// The eight reference sets `A_1, ..., A_8` in `Z^3`.
    pub fn a_sets() -> Vec<FiniteSet> {
        let raw: [&[&[i64]]; 8] = [
            &[&[0, 0, 0], &[0, 2, 0], &[0, 1, 1]],
            &[&[0, 0, 0], &[0, 2, 0], &[0, 3, 0]],
            &[&[0, 0, 0], &[1, 1, 0], &[0, 3, 0]],
            &[&[0, 0, 0], &[0, 2, 0], &[1, 2, 0]],
            &[&[0, 0, 0], &[1, 1, 0], &[1, 2, 0]],
            &[&[0, 0, 0], &[0, 2, 0], &[1, 1, 1]],
            &[&[0, 0, 0], &[1, 1, 0], &[1, 1, 1]],
            &[&[0, 0, 0], &[0, 0, 1], &[0, 1, 0], &[0, 1, 1]],
        ];
        raw.iter().map(|c| FiniteSet::from_coords(3, c).expect("valid")).collect()
    }
}
