//! Points, finite sets and boxes of `Z^d`.
//!
//! Boxes follow the asymmetric convention `Q(x, r) = x + [-floor((r-1)/2), ceil((r-1)/2)]^d`,
//! so `Q(x, r)` has side length `r` and contains `r^d` sites. Every module builds its
//! boxes through [`LatticeBox`].

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PointZ(pub Vec<i64>);

impl PointZ {
    pub fn new(coords: Vec<i64>) -> Self {
        PointZ(coords)
    }

    pub fn origin(d: usize) -> Self {
        PointZ(vec![0; d])
    }

    /// Unit vector along axis `k`.
    pub fn unit(d: usize, k: usize) -> Self {
        let mut c = vec![0; d];
        c[k] = 1;
        PointZ(c)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn sub(&self, other: &PointZ) -> PointZ {
        PointZ(self.0.iter().zip(&other.0).map(|(a, b)| a - b).collect())
    }

    pub fn add(&self, other: &PointZ) -> PointZ {
        PointZ(self.0.iter().zip(&other.0).map(|(a, b)| a + b).collect())
    }

    pub fn l1(&self) -> i64 {
        self.0.iter().map(|c| c.abs()).sum()
    }

    pub fn linf(&self) -> i64 {
        self.0.iter().map(|c| c.abs()).max().unwrap_or(0)
    }

    pub fn euclid(&self) -> f64 {
        self.0.iter().map(|&c| (c * c) as f64).sum::<f64>().sqrt()
    }

    /// Pads with zeros up to dimension `d` (the embedding `Z^k x {0}^(d-k)`).
    pub fn embed(&self, d: usize) -> PointZ {
        let mut c = self.0.clone();
        c.resize(d.max(c.len()), 0);
        PointZ(c)
    }

    /// The 2d nearest neighbours.
    pub fn neighbors(&self) -> impl Iterator<Item = PointZ> + '_ {
        (0..2 * self.dim()).map(move |dir| {
            let mut c = self.0.clone();
            c[dir / 2] += if dir % 2 == 0 { 1 } else { -1 };
            PointZ(c)
        })
    }

    /// Sorted absolute coordinates: the key under which the Green function is stored.
    pub fn green_key(&self) -> Vec<u32> {
        let mut k: Vec<u32> = self.0.iter().map(|c| c.unsigned_abs() as u32).collect();
        k.sort_unstable();
        k
    }
}

/// A finite subset of `Z^d`, deduplicated and sorted lexicographically.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FiniteSet {
    d: usize,
    points: Vec<PointZ>,
}

impl FiniteSet {
    pub fn new(d: usize, points: Vec<PointZ>) -> Result<Self> {
        if d < 1 {
            return invalid("dimension must be positive");
        }
        for p in &points {
            if p.dim() != d {
                return Err(Error::DimensionMismatch { expected: d, got: p.dim() });
            }
        }
        let mut points = points;
        points.sort();
        points.dedup();
        Ok(FiniteSet { d, points })
    }

    /// Builds a set from coordinate slices, embedding lower-dimensional points into `Z^d`.
    pub fn from_coords(d: usize, coords: &[&[i64]]) -> Result<Self> {
        let pts = coords
            .iter()
            .map(|c| {
                if c.len() > d {
                    Err(Error::DimensionMismatch { expected: d, got: c.len() })
                } else {
                    Ok(PointZ(c.to_vec()).embed(d))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        FiniteSet::new(d, pts)
    }

    pub fn singleton(p: PointZ) -> Self {
        FiniteSet { d: p.dim(), points: vec![p] }
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[PointZ] {
        &self.points
    }

    pub fn contains(&self, p: &PointZ) -> bool {
        self.points.binary_search(p).is_ok()
    }

    pub fn translate(&self, v: &PointZ) -> FiniteSet {
        let pts = self.points.iter().map(|p| p.add(v)).collect();
        FiniteSet::new(self.d, pts).expect("translation preserves dimension")
    }

    pub fn union(&self, other: &FiniteSet) -> Result<FiniteSet> {
        if other.d != self.d {
            return Err(Error::DimensionMismatch { expected: self.d, got: other.d });
        }
        let mut pts = self.points.clone();
        pts.extend(other.points.iter().cloned());
        FiniteSet::new(self.d, pts)
    }

    pub fn with_point(&self, p: PointZ) -> Result<FiniteSet> {
        let mut pts = self.points.clone();
        pts.push(p);
        FiniteSet::new(self.d, pts)
    }

    pub fn embed(&self, d: usize) -> FiniteSet {
        let pts = self.points.iter().map(|p| p.embed(d)).collect();
        FiniteSet::new(d.max(self.d), pts).expect("embedding is consistent")
    }

    /// Diameter in the box sense: the smallest `R` with `K` inside some `Q(x, R)`.
    pub fn diameter(&self) -> i64 {
        if self.points.is_empty() {
            return 0;
        }
        (0..self.d)
            .map(|k| {
                let lo = self.points.iter().map(|p| p.0[k]).min().unwrap();
                let hi = self.points.iter().map(|p| p.0[k]).max().unwrap();
                hi - lo + 1
            })
            .max()
            .unwrap()
    }

    /// Largest l1 distance between two points.
    pub fn l1_diameter(&self) -> i64 {
        let mut best = 0;
        for (i, a) in self.points.iter().enumerate() {
            for b in &self.points[i + 1..] {
                best = best.max(a.sub(b).l1());
            }
        }
        best
    }

    /// Internal vertex boundary: points with a neighbour outside the set.
    pub fn internal_boundary(&self) -> Vec<PointZ> {
        self.points.iter().filter(|p| p.neighbors().any(|q| !self.contains(&q))).cloned().collect()
    }

    pub fn is_connected(&self) -> bool {
        if self.points.is_empty() {
            return true;
        }
        let mut seen = vec![false; self.points.len()];
        let mut stack = vec![0usize];
        seen[0] = true;
        while let Some(i) = stack.pop() {
            for (j, q) in self.points.iter().enumerate() {
                if !seen[j] && self.points[i].sub(q).l1() == 1 {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }

    /// Canonical representative of the class of `K` under translations and lattice
    /// symmetries (coordinate permutations and sign flips).
    pub fn canonical(&self) -> FiniteSet {
        let mut best: Option<Vec<PointZ>> = None;
        for sym in symmetries(self.d) {
            let mut img: Vec<PointZ> = self.points.iter().map(|p| sym.apply(p)).collect();
            let lo: Vec<i64> = (0..self.d).map(|k| img.iter().map(|p| p.0[k]).min().unwrap_or(0)).collect();
            for p in img.iter_mut() {
                for k in 0..self.d {
                    p.0[k] -= lo[k];
                }
            }
            img.sort();
            if best.as_ref().is_none_or(|b| img < *b) {
                best = Some(img);
            }
        }
        FiniteSet { d: self.d, points: best.unwrap_or_default() }
    }

    /// Translate so that the componentwise minimum sits at the origin.
    pub fn normalized(&self) -> FiniteSet {
        if self.points.is_empty() {
            return self.clone();
        }
        let lo: Vec<i64> = (0..self.d).map(|k| self.points.iter().map(|p| p.0[k]).min().unwrap()).collect();
        self.translate(&PointZ(lo.iter().map(|c| -c).collect()))
    }

    /// All distinct images of the set under lattice symmetries, normalized.
    pub fn images(&self) -> Vec<FiniteSet> {
        let mut out: Vec<FiniteSet> = Vec::new();
        let mut seen = HashSet::new();
        for sym in symmetries(self.d) {
            let pts = self.points.iter().map(|p| sym.apply(p)).collect();
            let img = FiniteSet::new(self.d, pts).unwrap().normalized();
            if seen.insert(img.points.clone()) {
                out.push(img);
            }
        }
        out
    }
}

/// A signed permutation of coordinates.
#[derive(Clone, Debug)]
pub struct Symmetry {
    perm: Vec<usize>,
    signs: Vec<i64>,
}

impl Symmetry {
    pub fn apply(&self, p: &PointZ) -> PointZ {
        PointZ(self.perm.iter().zip(&self.signs).map(|(&k, &s)| s * p.0[k]).collect())
    }
}

/// The hyperoctahedral group of `Z^d` (order `2^d d!`).
pub fn symmetries(d: usize) -> Vec<Symmetry> {
    let mut perms = Vec::new();
    permutations(&mut (0..d).collect::<Vec<_>>(), 0, &mut perms);
    let mut out = Vec::with_capacity(perms.len() << d);
    for perm in perms {
        for mask in 0..(1u32 << d) {
            let signs = (0..d).map(|k| if mask >> k & 1 == 1 { -1 } else { 1 }).collect();
            out.push(Symmetry { perm: perm.clone(), signs });
        }
    }
    out
}

fn permutations(v: &mut Vec<usize>, k: usize, out: &mut Vec<Vec<usize>>) {
    if k == v.len() {
        out.push(v.clone());
        return;
    }
    for i in k..v.len() {
        v.swap(k, i);
        permutations(v, k + 1, out);
        v.swap(k, i);
    }
}

/// The box `Q(center, side)`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LatticeBox {
    pub center: PointZ,
    pub side: i64,
}

impl LatticeBox {
    pub fn new(center: PointZ, side: i64) -> Result<Self> {
        if side < 1 {
            return invalid(format!("box side must be >= 1, got {side}"));
        }
        Ok(LatticeBox { center, side })
    }

    /// `Q(0, side)` in dimension `d`.
    pub fn centered(d: usize, side: i64) -> Result<Self> {
        LatticeBox::new(PointZ::origin(d), side)
    }

    pub fn dim(&self) -> usize {
        self.center.dim()
    }

    /// Lower offset `floor((r-1)/2)`.
    pub fn lo_offset(&self) -> i64 {
        (self.side - 1).div_euclid(2)
    }

    /// Upper offset `ceil((r-1)/2)`.
    pub fn hi_offset(&self) -> i64 {
        self.side - 1 - self.lo_offset()
    }

    pub fn lo(&self) -> Vec<i64> {
        self.center.0.iter().map(|c| c - self.lo_offset()).collect()
    }

    pub fn hi(&self) -> Vec<i64> {
        self.center.0.iter().map(|c| c + self.hi_offset()).collect()
    }

    pub fn contains(&self, p: &PointZ) -> bool {
        let (lo, hi) = (self.lo_offset(), self.hi_offset());
        p.0.iter().zip(&self.center.0).all(|(x, c)| *x >= c - lo && *x <= c + hi)
    }

    pub fn volume(&self) -> u64 {
        (self.side as u64).pow(self.dim() as u32)
    }

    /// All sites, in lexicographic order.
    pub fn points(&self) -> Vec<PointZ> {
        let lo = self.lo();
        let d = self.dim();
        let s = self.side as usize;
        let mut out = Vec::with_capacity(self.volume() as usize);
        let mut idx = vec![0usize; d];
        loop {
            out.push(PointZ((0..d).map(|k| lo[k] + idx[k] as i64).collect()));
            let mut k = d;
            loop {
                if k == 0 {
                    return out;
                }
                k -= 1;
                idx[k] += 1;
                if idx[k] < s {
                    break;
                }
                idx[k] = 0;
            }
        }
    }

    pub fn as_set(&self) -> FiniteSet {
        FiniteSet::new(self.dim(), self.points()).expect("box points share dimension")
    }

    /// Internal boundary `∂Q`: sites with a neighbour outside the box.
    pub fn internal_boundary(&self) -> Vec<PointZ> {
        let lo = self.lo();
        let hi = self.hi();
        self.points().into_iter().filter(|p| p.0.iter().enumerate().any(|(k, &x)| x == lo[k] || x == hi[k])).collect()
    }

    pub fn on_internal_boundary(&self, p: &PointZ) -> bool {
        if !self.contains(p) {
            return false;
        }
        let lo = self.lo();
        let hi = self.hi();
        p.0.iter().enumerate().any(|(k, &x)| x == lo[k] || x == hi[k])
    }

    /// Exterior boundary `∂(Q^c)`: sites outside the box adjacent to it.
    pub fn on_exterior_boundary(&self, p: &PointZ) -> bool {
        !self.contains(p) && p.neighbors().any(|q| self.contains(&q))
    }

    /// Whether `inner` is contained in `self`.
    pub fn contains_box(&self, inner: &LatticeBox) -> bool {
        let (a, b) = (self.lo(), self.hi());
        let (c, e) = (inner.lo(), inner.hi());
        (0..self.dim()).all(|k| a[k] <= c[k] && e[k] <= b[k])
    }

    /// Whether `inner` sits strictly inside (no shared boundary layer).
    pub fn strictly_contains_box(&self, inner: &LatticeBox) -> bool {
        let (a, b) = (self.lo(), self.hi());
        let (c, e) = (inner.lo(), inner.hi());
        (0..self.dim()).all(|k| a[k] < c[k] && e[k] < b[k])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn box_convention_offsets() {
        let b = LatticeBox::centered(3, 4).unwrap();
        assert_eq!(b.lo(), vec![-1, -1, -1]);
        assert_eq!(b.hi(), vec![2, 2, 2]);
        let b = LatticeBox::centered(3, 5).unwrap();
        assert_eq!(b.lo(), vec![-2, -2, -2]);
        assert_eq!(b.hi(), vec![2, 2, 2]);
        let b = LatticeBox::centered(2, 1).unwrap();
        assert_eq!(b.points(), vec![PointZ(vec![0, 0])]);
    }

    #[test]
    fn box_points_count_and_boundary() {
        let b = LatticeBox::centered(3, 5).unwrap();
        assert_eq!(b.points().len(), 125);
        assert_eq!(b.internal_boundary().len(), 125 - 27);
        assert!(b.on_exterior_boundary(&PointZ(vec![3, 0, 0])));
        assert!(!b.on_exterior_boundary(&PointZ(vec![3, 3, 0])));
    }

    #[test]
    fn diameter_is_box_side() {
        let k = FiniteSet::from_coords(3, &[&[0, 0], &[0, 1], &[0, 2]]).unwrap();
        assert_eq!(k.diameter(), 3);
        assert_eq!(FiniteSet::singleton(PointZ::origin(3)).diameter(), 1);
    }

    #[test]
    fn symmetry_group_order() {
        assert_eq!(symmetries(3).len(), 48);
        assert_eq!(symmetries(4).len(), 384);
    }

    #[test]
    fn canonical_identifies_images() {
        let k1 = FiniteSet::from_coords(3, &[&[0, 0], &[0, 1], &[0, 2]]).unwrap();
        let rotated = FiniteSet::from_coords(3, &[&[5, 5, 5], &[5, 5, 4], &[5, 5, 3]]).unwrap();
        assert_eq!(k1.canonical(), rotated.canonical());
        let k2 = FiniteSet::from_coords(3, &[&[0, 0], &[0, 1], &[1, 0]]).unwrap();
        assert_ne!(k1.canonical(), k2.canonical());
        assert_eq!(k1.images().len(), 3);
        assert_eq!(k2.images().len(), 12);
    }

    #[test]
    fn connectivity() {
        let k2 = FiniteSet::from_coords(3, &[&[0, 0], &[0, 1], &[1, 0]]).unwrap();
        assert!(k2.is_connected());
        let a2 = FiniteSet::from_coords(3, &[&[0, 0, 0], &[0, 2, 0], &[0, 3, 0]]).unwrap();
        assert!(!a2.is_connected());
    }
}
