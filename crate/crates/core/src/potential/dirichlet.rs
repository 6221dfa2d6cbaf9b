//! Capacity relative to a finite region `U`: `e_K^U(x) = P_x(H~_K > T_U)`.
//!
//! The escape probability `h(y) = P_y(H_K > T_U)` is harmonic on `U \ K`, vanishes
//! on `K` and equals one outside `U`. The system `(I - P) h = b` restricted to
//! `U \ K` is symmetric positive definite and is solved by conjugate gradients.

use std::collections::HashSet;

use crate::error::{invalid, Error, Result};
use crate::lattice::{FiniteSet, LatticeBox, PointZ};

/// Relative tolerance on the residual of the conjugate-gradient solve.
pub const CG_TOLERANCE: f64 = 1e-12;

#[derive(Clone, Debug)]
pub struct RelativeCapacity {
    pub set: FiniteSet,
    pub region: LatticeBox,
    pub cap: f64,
    /// `e_K^U`, indexed like `set.points()`.
    pub equilibrium: Vec<f64>,
    pub residual: f64,
    pub iterations: usize,
}

/// Sites of `U`, with `K` excluded, indexed for the linear system.
struct Layout {
    lo: Vec<i64>,
    side: usize,
    d: usize,
    /// For each box site: `Some(unknown index)`, or `None` when the site lies in `K`.
    slot: Vec<Option<usize>>,
    unknowns: Vec<usize>,
}

impl Layout {
    fn site_index(&self, p: &[i64]) -> Option<usize> {
        let mut i = 0usize;
        for k in 0..self.d {
            let c = p[k] - self.lo[k];
            if c < 0 || c >= self.side as i64 {
                return None;
            }
            i = i * self.side + c as usize;
        }
        Some(i)
    }

    fn coords(&self, mut i: usize) -> Vec<i64> {
        let mut c = vec![0i64; self.d];
        for k in (0..self.d).rev() {
            c[k] = self.lo[k] + (i % self.side) as i64;
            i /= self.side;
        }
        c
    }
}

enum Nb {
    Outside,
    InK,
    Unknown(usize),
}

fn neighbour_kinds(layout: &Layout, site: usize) -> Vec<Nb> {
    let c = layout.coords(site);
    let mut out = Vec::with_capacity(2 * layout.d);
    for k in 0..layout.d {
        for s in [-1i64, 1] {
            let mut q = c.clone();
            q[k] += s;
            out.push(match layout.site_index(&q) {
                None => Nb::Outside,
                Some(j) => match layout.slot[j] {
                    None => Nb::InK,
                    Some(u) => Nb::Unknown(u),
                },
            });
        }
    }
    out
}

/// `cap_U(K)` for `K` inside the box `U`.
pub fn relative_capacity(k: &FiniteSet, region: &LatticeBox) -> Result<RelativeCapacity> {
    let d = region.dim();
    if k.dim() != d {
        return Err(Error::DimensionMismatch { expected: d, got: k.dim() });
    }
    if k.is_empty() {
        return invalid("relative capacity of the empty set requested");
    }
    if let Some(p) = k.points().iter().find(|p| !region.contains(p)) {
        return invalid(format!("point {:?} of K lies outside U", p.0));
    }
    let side = region.side as usize;
    let n_sites = side.pow(d as u32);
    let mut layout = Layout { lo: region.lo(), side, d, slot: vec![None; n_sites], unknowns: Vec::new() };
    let in_k: HashSet<usize> = k.points().iter().map(|p| layout.site_index(&p.0).expect("inside U")).collect();
    for i in 0..n_sites {
        if !in_k.contains(&i) {
            layout.slot[i] = Some(layout.unknowns.len());
            layout.unknowns.push(i);
        }
    }
    let n = layout.unknowns.len();
    let two_d = (2 * d) as f64;
    // Off-diagonal couplings and right-hand side of (I - P) h = b.
    let mut nbrs: Vec<Vec<usize>> = Vec::with_capacity(n);
    let mut b = vec![0.0; n];
    for (u, &site) in layout.unknowns.iter().enumerate() {
        let mut row = Vec::with_capacity(2 * d);
        for nb in neighbour_kinds(&layout, site) {
            match nb {
                Nb::Outside => b[u] += 1.0 / two_d,
                Nb::InK => {}
                Nb::Unknown(v) => row.push(v),
            }
        }
        nbrs.push(row);
    }
    let apply = |x: &[f64], y: &mut [f64]| {
        for u in 0..n {
            let s: f64 = nbrs[u].iter().map(|&v| x[v]).sum();
            y[u] = x[u] - s / two_d;
        }
    };
    let (h, residual, iterations) = conjugate_gradient(n, &apply, &b, CG_TOLERANCE, 10 * n + 100)?;
    let equilibrium: Vec<f64> = k
        .points()
        .iter()
        .map(|p| {
            let site = layout.site_index(&p.0).expect("inside U");
            neighbour_kinds(&layout, site)
                .into_iter()
                .map(|nb| match nb {
                    Nb::Outside => 1.0,
                    Nb::InK => 0.0,
                    Nb::Unknown(v) => h[v],
                })
                .sum::<f64>()
                / two_d
        })
        .collect();
    Ok(RelativeCapacity {
        set: k.clone(),
        region: region.clone(),
        cap: equilibrium.iter().sum(),
        equilibrium,
        residual,
        iterations,
    })
}

/// Conjugate gradients for a symmetric positive definite operator. Returns the
/// solution, the final relative residual and the iteration count.
pub fn conjugate_gradient(
    n: usize,
    apply: &dyn Fn(&[f64], &mut [f64]),
    b: &[f64],
    tol: f64,
    max_iter: usize,
) -> Result<(Vec<f64>, f64, usize)> {
    let bnorm = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    let mut x = vec![0.0; n];
    if n == 0 || bnorm == 0.0 {
        return Ok((x, 0.0, 0));
    }
    let mut r = b.to_vec();
    let mut p = r.clone();
    let mut ap = vec![0.0; n];
    let mut rr: f64 = r.iter().map(|v| v * v).sum();
    for it in 1..=max_iter {
        apply(&p, &mut ap);
        let pap: f64 = p.iter().zip(&ap).map(|(a, b)| a * b).sum();
        let step = rr / pap;
        for i in 0..n {
            x[i] += step * p[i];
            r[i] -= step * ap[i];
        }
        let rr_new: f64 = r.iter().map(|v| v * v).sum();
        if rr_new.sqrt() <= tol * bnorm {
            // Confirm with a true residual to guard against drift.
            apply(&x, &mut ap);
            let res = ap.iter().zip(b).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt() / bnorm;
            if res <= 10.0 * tol {
                return Ok((x, res, it));
            }
        }
        let beta = rr_new / rr;
        for i in 0..n {
            p[i] = r[i] + beta * p[i];
        }
        rr = rr_new;
    }
    Err(Error::NoConvergence { residual: rr.sqrt() / bnorm, iterations: max_iter })
}

/// Relative capacity of one point at the centre of `Q(0, side)`.
pub fn point_relative_capacity(d: usize, side: i64) -> Result<f64> {
    let k = FiniteSet::singleton(PointZ::origin(d));
    Ok(relative_capacity(&k, &LatticeBox::centered(d, side)?)?.cap)
}
