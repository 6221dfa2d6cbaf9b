//! Random interlacements seen from a box `B`: `N ~ Poisson(u cap(B))` forward
//! trajectories started from the normalised equilibrium measure of `B`.
//!
//! Trajectories are simple random walks until they leave a truncation box
//! `Q(0, W)`. What happens next depends on [`Transience`]:
//!
//! * `HarmonicReturn` keeps the law of the trace on `B` exact. From the exit site `x`
//!   the walk re-enters `B` at `y` with probability `H_x(y) = P_x(X_{H_B} = y)`, where
//!   `H_x` solves `sum_y' H_x(y') g(y' - y) = g(x - y)` on `∂B`; with the remaining
//!   probability `1 - sum H_x` it escapes. The path outside `B` is not generated.
//! * `Truncate` stops at the first exit and reports the bias bound
//!   `cap(B) g(R e_1)`, with `R` the distance from `B` to the exit layer.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use nalgebra::{Cholesky, DVector, Dyn};
use rand::Rng;
use rand_distr::weighted::WeightedAliasIndex;
use rand_distr::{Distribution, Poisson};
use serde::Serialize;
use statrs::function::gamma::gamma;

use crate::error::{invalid, Error, Result};
use crate::lattice::{LatticeBox, PointZ};
use crate::potential::capacity::{green_matrix, solve_ones};
use crate::potential::GreenTable;
use crate::rng::open_unit;
use crate::torus::{u_scale, LateSet};

/// Default tolerance for the truncation bias.
pub const DEFAULT_BIAS_TOLERANCE: f64 = 1e-4;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub enum Transience {
    HarmonicReturn,
    Truncate { tolerance: f64, accept_bias: bool },
}

/// Leading asymptotics `g(x) ~ (d/2) Gamma(d/2 - 1) pi^{-d/2} |x|^{2-d}`.
pub fn green_far_field(d: usize, x: &[i64]) -> f64 {
    let r = x.iter().map(|&c| (c * c) as f64).sum::<f64>().sqrt();
    let dh = d as f64 / 2.0;
    dh * gamma(dh - 1.0) * std::f64::consts::PI.powf(-dh) * r.powf(2.0 - d as f64)
}

/// Exact vacancy law `P(K in V^u) = exp(-u cap(K))`.
pub fn vacant_probability(cap: f64, u: f64) -> f64 {
    (-u * cap).exp()
}

/// Equilibrium measure of a box from the system on its internal boundary.
#[derive(Clone, Debug)]
pub struct BoxEquilibrium {
    pub boundary: Vec<PointZ>,
    pub e: Vec<f64>,
    pub cap: f64,
    /// `max |G e - 1|` over interior sites of the box.
    pub interior_residual: f64,
}

pub fn box_equilibrium(b: &LatticeBox, table: &GreenTable) -> Result<BoxEquilibrium> {
    if b.dim() != table.dim() {
        return Err(Error::DimensionMismatch { expected: table.dim(), got: b.dim() });
    }
    let boundary = b.internal_boundary();
    let (g, _) = green_matrix(&boundary, table)?;
    let e = solve_ones(&g)?;
    if let Some(m) = e.iter().copied().find(|&m| m < 0.0) {
        return Err(Error::Singular(format!("negative equilibrium mass {m:e} on the box boundary")));
    }
    let mut interior_residual: f64 = 0.0;
    for z in b.points().into_iter().filter(|z| !b.on_internal_boundary(z)) {
        let s: f64 =
            boundary.iter().zip(e.iter()).map(|(y, m)| table.g(&z.sub(y)).map(|v| v * m)).sum::<Result<f64>>()?;
        interior_residual = interior_residual.max((s - 1.0).abs());
    }
    if interior_residual > 1e-10 {
        return Err(Error::Singular(format!("interior residual {interior_residual:e} exceeds 1e-10")));
    }
    let cap = e.iter().sum();
    Ok(BoxEquilibrium { boundary, e: e.iter().copied().collect(), cap, interior_residual })
}

/// Hitting distribution of `∂B` from one site outside `B`.
struct Entrance {
    prob: f64,
    alias: Option<WeightedAliasIndex<f64>>,
}

/// Sampler for interlacement trajectories entering the box `B`.
pub struct RiSampler {
    d: usize,
    sample_box: LatticeBox,
    trunc_box: LatticeBox,
    mode: Transience,
    eq: BoxEquilibrium,
    alias: WeightedAliasIndex<f64>,
    bias_bound: f64,
    table: GreenTable,
    chol: Option<Cholesky<f64, Dyn>>,
    entrances: Mutex<HashMap<Vec<i64>, Arc<Entrance>>>,
}

impl RiSampler {
    /// `B = Q(0, box_side)` and truncation box `Q(0, trunc_side)`. With
    /// `HarmonicReturn` the table must cover offsets from the exit layer to `B`.
    pub fn new(table: &GreenTable, box_side: i64, trunc_side: i64, mode: Transience) -> Result<Self> {
        let d = table.dim();
        let sample_box = LatticeBox::centered(d, box_side)?;
        let trunc_box = LatticeBox::centered(d, trunc_side)?;
        if !trunc_box.strictly_contains_box(&sample_box) {
            return invalid("the truncation box must strictly contain the sampling box");
        }
        let eq = box_equilibrium(&sample_box, table)?;
        let alias = WeightedAliasIndex::new(eq.e.clone())
            .map_err(|e| Error::InvalidParameter(format!("equilibrium weights: {e}")))?;
        // Distance in sup-norm from B to the first layer outside the truncation box.
        let gap = (trunc_box.lo_offset() + 1 - sample_box.lo_offset())
            .min(trunc_box.hi_offset() + 1 - sample_box.hi_offset());
        let mut e1 = vec![0i64; d];
        e1[0] = gap;
        let g_gap = table.g_offset(&e1).unwrap_or_else(|| green_far_field(d, &e1) * (1.0 + 1.0 / gap as f64));
        let bias_bound = eq.cap * g_gap;
        let chol = match mode {
            Transience::Truncate { tolerance, accept_bias } => {
                if bias_bound > tolerance && !accept_bias {
                    return Err(Error::TruncationBias { bound: bias_bound, tolerance });
                }
                None
            }
            Transience::HarmonicReturn => {
                let reach = trunc_box.lo_offset().max(trunc_box.hi_offset())
                    + 1
                    + sample_box.lo_offset().max(sample_box.hi_offset());
                if reach > table.radius() as i64 {
                    return invalid(format!("Green table radius {} below the return reach {reach}", table.radius()));
                }
                let (g, _) = green_matrix(&eq.boundary, table)?;
                Some(
                    g.cholesky()
                        .ok_or_else(|| Error::Singular("boundary Green matrix is not positive definite".into()))?,
                )
            }
        };
        Ok(RiSampler {
            d,
            sample_box,
            trunc_box,
            mode,
            eq,
            alias,
            bias_bound,
            table: table.clone(),
            chol,
            entrances: Mutex::new(HashMap::new()),
        })
    }

    fn solve_entrance(&self, x: &[i64]) -> Result<Entrance> {
        let chol =
            self.chol.as_ref().ok_or_else(|| Error::InvalidParameter("no return law in truncate mode".into()))?;
        let mut off = vec![0i64; self.d];
        let mut rhs = DVector::zeros(self.eq.boundary.len());
        for (i, y) in self.eq.boundary.iter().enumerate() {
            for k in 0..self.d {
                off[k] = x[k] - y.0[k];
            }
            rhs[i] = self.table.g_offset(&off).ok_or_else(|| Error::TableCoverage(off.clone()))?;
        }
        let w: Vec<f64> = chol.solve(&rhs).iter().map(|v| v.max(0.0)).collect();
        let prob: f64 = w.iter().sum();
        if prob > 1.0 + 1e-9 {
            return Err(Error::Singular(format!("hitting probability {prob} above one")));
        }
        let alias = if prob > 0.0 { WeightedAliasIndex::new(w).ok() } else { None };
        Ok(Entrance { prob: prob.min(1.0), alias })
    }

    fn entrance(&self, x: &[i64]) -> Arc<Entrance> {
        if let Some(e) = self.entrances.lock().expect("entrance cache").get(x) {
            return e.clone();
        }
        // Exit sites are within the reach checked at construction.
        let e = Arc::new(self.solve_entrance(x).expect("exit site covered by the table"));
        self.entrances.lock().expect("entrance cache").insert(x.to_vec(), e.clone());
        e
    }

    /// `h_B(z) = P_z(H_B < infinity)`.
    pub fn hit_probability(&self, z: &[i64]) -> Result<f64> {
        if self.sample_box.contains(&PointZ(z.to_vec())) {
            return Ok(1.0);
        }
        Ok(self.solve_entrance(z)?.prob)
    }

    pub fn cap(&self) -> f64 {
        self.eq.cap
    }

    pub fn equilibrium(&self) -> &BoxEquilibrium {
        &self.eq
    }

    pub fn sample_box(&self) -> &LatticeBox {
        &self.sample_box
    }

    pub fn trunc_box(&self) -> &LatticeBox {
        &self.trunc_box
    }

    pub fn bias_bound(&self) -> f64 {
        self.bias_bound
    }

    pub fn mode(&self) -> Transience {
        self.mode
    }

    /// Lexicographic index of a site of `B`, if inside.
    pub fn box_index(&self, x: &[i64]) -> Option<usize> {
        let lo = self.sample_box.lo_offset();
        let side = self.sample_box.side;
        let mut i = 0usize;
        for &c in x {
            let v = c + lo;
            if v < 0 || v >= side {
                return None;
            }
            i = i * side as usize + v as usize;
        }
        Some(i)
    }

    /// Runs one trajectory, calling `visit` on every position inside `B` in time order
    /// (positions outside `B` may be skipped).
    pub fn trajectory<R: Rng + ?Sized>(&self, rng: &mut R, visit: &mut dyn FnMut(&[i64])) {
        let d = self.d;
        let start = &self.eq.boundary[self.alias.sample(rng)];
        let mut x = start.0.clone();
        let (tlo, thi) = (-self.trunc_box.lo_offset(), self.trunc_box.hi_offset());
        let (blo, bhi) = (-self.sample_box.lo_offset(), self.sample_box.hi_offset());
        loop {
            // Plain walk inside the truncation box, starting in B.
            visit(&x);
            let mut outside_b = 0usize;
            loop {
                let dir = rng.random_range(0..2 * d);
                let k = dir / 2;
                let old = x[k];
                x[k] += if dir % 2 == 0 { 1 } else { -1 };
                if x[k] < tlo || x[k] > thi {
                    break;
                }
                let was_out = old < blo || old > bhi;
                let now_out = x[k] < blo || x[k] > bhi;
                if was_out != now_out {
                    if now_out {
                        outside_b += 1;
                    } else {
                        outside_b -= 1;
                    }
                }
                if outside_b == 0 {
                    visit(&x);
                }
            }
            if !matches!(self.mode, Transience::HarmonicReturn) {
                return;
            }
            let ent = self.entrance(&x);
            match &ent.alias {
                Some(alias) if open_unit(rng) <= ent.prob => {
                    x.clone_from(&self.eq.boundary[alias.sample(rng)].0);
                }
                _ => return,
            }
        }
    }

    /// `N_B^u ~ Poisson(u cap(B))`.
    pub fn trajectory_count<R: Rng + ?Sized>(&self, u: f64, rng: &mut R) -> Result<usize> {
        if !(u >= 0.0) || !u.is_finite() {
            return invalid(format!("level must be finite and non-negative, got {u}"));
        }
        if u == 0.0 {
            return Ok(0);
        }
        let p = Poisson::new(u * self.eq.cap).map_err(|e| Error::InvalidParameter(format!("poisson mean: {e}")))?;
        Ok(p.sample(rng) as usize)
    }

    /// One sample of the layered process up to level `u_max`.
    pub fn sample<R: Rng + ?Sized>(&self, u_max: f64, rng: &mut R) -> Result<RiSample> {
        let count = self.trajectory_count(u_max, rng)?;
        let mut labels: Vec<f64> = (0..count).map(|_| open_unit(rng) * u_max).collect();
        labels.sort_by(|a, b| a.partial_cmp(b).expect("finite labels"));
        let vol = self.sample_box.volume() as usize;
        let mut local_times = vec![0u32; vol];
        let mut first_level = vec![f64::INFINITY; vol];
        for &label in &labels {
            self.trajectory(rng, &mut |x| {
                if let Some(i) = self.box_index(x) {
                    local_times[i] = local_times[i].saturating_add(1);
                    if first_level[i] == f64::INFINITY {
                        first_level[i] = label;
                    }
                }
            });
        }
        Ok(RiSample {
            u_max,
            traj_count: count,
            labels,
            local_times,
            first_level,
            trunc_side: self.trunc_box.side,
            bias_bound: match self.mode {
                Transience::HarmonicReturn => 0.0,
                Transience::Truncate { .. } => self.bias_bound,
            },
        })
    }
}

/// Local times in `B` of all trajectories with label at most `u_max`, together with
/// the smallest label reaching each site.
#[derive(Clone, Debug, Serialize)]
pub struct RiSample {
    pub u_max: f64,
    pub traj_count: usize,
    pub labels: Vec<f64>,
    pub local_times: Vec<u32>,
    /// `inf{u : site in the interlacement at level u}`.
    pub first_level: Vec<f64>,
    pub trunc_side: i64,
    pub bias_bound: f64,
}

impl RiSample {
    pub fn is_vacant(&self, site: usize, u: f64) -> bool {
        self.first_level[site] > u
    }

    /// Number of trajectories with label at most `u`.
    pub fn count_at(&self, u: f64) -> usize {
        self.labels.partition_point(|&l| l <= u)
    }

    /// Vacant sites at level `u` among `sites`.
    pub fn vacant_among(&self, sites: &[usize], u: f64) -> Vec<usize> {
        sites.iter().copied().filter(|&s| self.is_vacant(s, u)).collect()
    }

    /// Summary record `{box, u, trajCount, truncationRadius, biasBound}`.
    pub fn summary_json(&self, sampler: &RiSampler) -> serde_json::Value {
        serde_json::json!({
            "box": { "d": sampler.d, "side": sampler.sample_box.side },
            "u": self.u_max,
            "trajCount": self.traj_count,
            "truncationRadius": self.trunc_side,
            "biasBound": self.bias_bound,
            "mode": sampler.mode,
        })
    }

    /// Per-site local times, one row per site of `B` in lexicographic order.
    pub fn local_times_csv(&self, sampler: &RiSampler) -> String {
        let d = sampler.d;
        let mut out = (0..d).map(|k| format!("x{k}")).collect::<Vec<_>>().join(",");
        out.push_str(",local_time,first_level\n");
        for (p, (lt, fl)) in sampler.sample_box.points().iter().zip(self.local_times.iter().zip(&self.first_level)) {
            for c in &p.0 {
                out.push_str(&format!("{c},"));
            }
            let fl = if fl.is_finite() { format!("{fl}") } else { "inf".to_string() };
            out.push_str(&format!("{lt},{fl}\n"));
        }
        out
    }
}

/// `V^{u_F(alpha)} ∩ F` for a sample drawn at level at least `u_F(alpha)`; `f_sites`
/// are indices into `B`.
pub fn late_set_ri(sample: &RiSample, alpha: f64, card_f: usize, g0: f64, f_sites: &[usize]) -> Result<LateSet> {
    let u = u_scale(alpha, card_f, g0);
    if u > sample.u_max * (1.0 + 1e-12) {
        return invalid(format!("sample level {} below u_F(alpha) = {u}", sample.u_max));
    }
    let mut members = sample.vacant_among(f_sites, u);
    members.sort_unstable();
    Ok(LateSet { alpha, u, threshold: 0, card_f, members })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::potential::GreenParams;
    use crate::rng::replica_rng;

    fn table() -> GreenTable {
        GreenTable::build(3, 20, &GreenParams::for_radius(20).unwrap()).unwrap()
    }

    #[test]
    fn far_field_constant() {
        let v = green_far_field(3, &[10, 0, 0]);
        assert!((v - 3.0 / (2.0 * std::f64::consts::PI * 10.0)).abs() < 1e-15);
    }

    #[test]
    fn box_equilibrium_matches_full_solve() {
        let t = table();
        let b = LatticeBox::centered(3, 3).unwrap();
        let eq = box_equilibrium(&b, &t).unwrap();
        let full = crate::potential::capacity(&b.as_set(), &t).unwrap();
        assert!((eq.cap - full.cap).abs() < 1e-10);
        assert!(eq.interior_residual < 1e-10);
    }

    #[test]
    fn zero_level_is_empty() {
        let t = table();
        let s = RiSampler::new(&t, 3, 9, Transience::HarmonicReturn).unwrap();
        let mut rng = replica_rng(1, 0);
        let r = s.sample(0.0, &mut rng).unwrap();
        assert_eq!(r.traj_count, 0);
        assert!(r.local_times.iter().all(|&v| v == 0));
    }

    #[test]
    fn hit_probability_is_harmonic_outside() {
        let t = table();
        let s = RiSampler::new(&t, 3, 9, Transience::HarmonicReturn).unwrap();
        for z in [[4i64, 0, 0], [3, 2, -1], [6, 6, 1]] {
            let mut avg = 0.0;
            for dir in 0..6 {
                let mut y = z;
                y[dir / 2] += if dir % 2 == 0 { 1 } else { -1 };
                avg += s.hit_probability(&y).unwrap() / 6.0;
            }
            assert!((avg - s.hit_probability(&z).unwrap()).abs() < 1e-12);
        }
        assert_eq!(s.hit_probability(&[0, 1, 1]).unwrap(), 1.0);
    }

    #[test]
    fn truncation_refuses_large_bias() {
        let t = table();
        let r = RiSampler::new(&t, 3, 9, Transience::Truncate { tolerance: 1e-4, accept_bias: false });
        assert!(matches!(r, Err(Error::TruncationBias { .. })));
        let ok = RiSampler::new(&t, 3, 9, Transience::Truncate { tolerance: 1e-4, accept_bias: true }).unwrap();
        assert!(ok.bias_bound() > 1e-4);
    }

    #[test]
    fn vacant_probability_edges() {
        assert_eq!(vacant_probability(3.0, 0.0), 1.0);
        assert!(vacant_probability(1.0, 2.0) < vacant_probability(1.0, 1.0));
    }

    #[test]
    fn vacancy_matches_exponential_law() {
        let t = table();
        let s = RiSampler::new(&t, 5, 11, Transience::HarmonicReturn).unwrap();
        let origin = s.box_index(&[0, 0, 0]).unwrap();
        let corner = s.box_index(&[2, 2, 2]).unwrap();
        let reps = 20_000;
        let (mut v0, mut v1) = (0usize, 0usize);
        let mut count = 0usize;
        for i in 0..reps {
            let r = s.sample(1.0, &mut replica_rng(11, i)).unwrap();
            v0 += r.is_vacant(origin, 1.0) as usize;
            v1 += r.is_vacant(corner, 0.5) as usize;
            count += r.traj_count;
        }
        let cap1 = 1.0 / t.g0();
        for (hits, u) in [(v0, 1.0), (v1, 0.5)] {
            let p = vacant_probability(cap1, u);
            let sd = (p * (1.0 - p) / reps as f64).sqrt();
            let est = hits as f64 / reps as f64;
            assert!((est - p).abs() < 4.0 * sd, "u={u}: {est} vs {p}");
        }
        let mean = count as f64 / reps as f64;
        assert!((mean - s.cap()).abs() < 4.0 * (s.cap() / reps as f64).sqrt());
    }

    #[test]
    fn layered_levels_are_nested() {
        let t = table();
        let s = RiSampler::new(&t, 5, 11, Transience::HarmonicReturn).unwrap();
        let r = s.sample(2.0, &mut replica_rng(5, 0)).unwrap();
        for site in 0..125 {
            if !r.is_vacant(site, 1.5) {
                assert!(!r.is_vacant(site, 2.0));
            }
        }
        assert!(r.count_at(1.0) <= r.count_at(2.0));
        assert_eq!(r.count_at(2.0), r.traj_count);
    }

    #[test]
    fn late_set_at_level_zero_is_everything() {
        let t = table();
        let s = RiSampler::new(&t, 3, 9, Transience::HarmonicReturn).unwrap();
        let r = s.sample(1.0, &mut replica_rng(3, 0)).unwrap();
        let f: Vec<usize> = (0..27).collect();
        assert_eq!(late_set_ri(&r, 0.0, 27, t.g0(), &f).unwrap().members, f);
        assert!(late_set_ri(&r, 5.0, 27, t.g0(), &f).is_err());
    }

    #[test]
    fn exports() {
        let t = table();
        let s = RiSampler::new(&t, 3, 9, Transience::HarmonicReturn).unwrap();
        let r = s.sample(0.5, &mut replica_rng(3, 1)).unwrap();
        let j = r.summary_json(&s);
        assert_eq!(j["trajCount"], r.traj_count);
        assert_eq!(r.local_times_csv(&s).lines().count(), 28);
    }
}
