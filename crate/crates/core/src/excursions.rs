//! Excursions of a trace across the annulus `B3 \ B2` and the derived counts.
//!
//! With `D_0` the first exit from `B3`, returns and departures alternate:
//! `R_{k+1}` is the first visit to `∂B2` after `D_k`, and `D_{k+1}` the first visit to
//! the exterior boundary of `B3` after `R_{k+1}`. The hit `H_k` is the first visit to
//! `∂B1` in `[R_k, D_k]`. The range `Z_k` runs from `H_k` to the last visit of `B2`
//! before `D_k`, or is the cemetery when `∂B1` is missed.
//!
//! Traces are nearest-neighbour paths in `Z^d`, so the first visit to `B2` from outside
//! lies on `∂B2` and the first site outside `B3` lies on its exterior boundary.

use rand::Rng;
use serde::Serialize;

use crate::error::{invalid, Result};
use crate::interlacements::RiSampler;
use crate::lattice::{LatticeBox, PointZ};
use crate::potential::dirichlet::relative_capacity;
use crate::torus::{TorusConfig, Walker};

/// Concentric boxes `B1 ⊆ B2 ⊊ B3` centred at the origin.
#[derive(Clone, Debug, Serialize)]
pub struct Annuli {
    pub b1: LatticeBox,
    pub b2: LatticeBox,
    pub b3: LatticeBox,
}

impl Annuli {
    pub fn new(d: usize, side1: i64, side2: i64, side3: i64) -> Result<Self> {
        let b1 = LatticeBox::centered(d, side1)?;
        let b2 = LatticeBox::centered(d, side2)?;
        let b3 = LatticeBox::centered(d, side3)?;
        if !b2.contains_box(&b1) || !b3.strictly_contains_box(&b2) {
            return invalid(format!("boxes of sides {side1}, {side2}, {side3} are not nested as B1 ⊆ B2 ⊊ B3"));
        }
        Ok(Annuli { b1, b2, b3 })
    }

    pub fn dim(&self) -> usize {
        self.b1.dim()
    }

    /// `M = cap_{B3}(B2)` and the relative equilibrium measure on `B2`.
    pub fn relative_capacity(&self) -> Result<(f64, Vec<(PointZ, f64)>)> {
        let rc = relative_capacity(&self.b2.as_set(), &self.b3)?;
        let eq =
            rc.set.points().iter().cloned().zip(rc.equilibrium.iter().copied()).filter(|(_, m)| *m > 0.0).collect();
        Ok((rc.cap, eq))
    }
}

fn inside(b: &LatticeBox, x: &[i64]) -> bool {
    let (lo, hi) = (b.lo_offset(), b.hi_offset());
    x.iter().zip(&b.center.0).all(|(&c, &m)| c >= m - lo && c <= m + hi)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Excursion {
    /// Index `k >= 1`.
    pub k: usize,
    pub r: u64,
    /// `None` when the trace ends before leaving `B3`.
    pub d: Option<u64>,
    /// `None` encodes `H_k = ∞`.
    pub h: Option<u64>,
    /// `x_{R_k}` on `∂B2`.
    pub entry: Vec<i64>,
    /// `x_{D_k}` on the exterior boundary of `B3`.
    pub exit: Option<Vec<i64>>,
    /// `Z_k`; `None` is the cemetery. Left empty when ranges are not kept.
    pub range: Option<Vec<Vec<i64>>>,
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct ExcursionSchedule {
    pub d0: Option<u64>,
    pub excursions: Vec<Excursion>,
}

impl ExcursionSchedule {
    /// Number of returns `R_k`, `k >= 1`, strictly before time `t`.
    pub fn returns_before(&self, t: f64) -> usize {
        self.excursions.partition_point(|e| (e.r as f64) < t)
    }

    /// Completed excursions, i.e. those with a departure.
    pub fn completed(&self) -> usize {
        self.excursions.iter().filter(|e| e.d.is_some()).count()
    }

    /// Checks `D_k <= R_{k+1} <= D_{k+1}`, the boundary placement of `ζ_k` and
    /// `Z_k = Θ` exactly when `H_k = ∞`.
    pub fn check(&self, annuli: &Annuli) -> Result<()> {
        let mut prev_d = match self.d0 {
            Some(t) => t,
            None if self.excursions.is_empty() => return Ok(()),
            None => return invalid("returns recorded before the first exit from B3"),
        };
        for e in &self.excursions {
            if e.r < prev_d {
                return invalid(format!("R_{} = {} precedes D_{} = {prev_d}", e.k, e.r, e.k - 1));
            }
            if !annuli.b2.on_internal_boundary(&PointZ(e.entry.clone())) {
                return invalid(format!("entry {:?} of excursion {} is not on ∂B2", e.entry, e.k));
            }
            if let Some(h) = e.h {
                if h < e.r || e.d.is_some_and(|d| h > d) {
                    return invalid(format!("H_{} = {h} outside [R, D]", e.k));
                }
            }
            match (&e.d, &e.exit) {
                (Some(d), Some(x)) => {
                    if *d < e.r || !annuli.b3.on_exterior_boundary(&PointZ(x.clone())) {
                        return invalid(format!("departure of excursion {} is malformed", e.k));
                    }
                    prev_d = *d;
                }
                (None, None) => prev_d = u64::MAX,
                _ => return invalid("departure time and exit point disagree"),
            }
            if e.h.is_none() && e.range.is_some() {
                return invalid(format!("excursion {} misses ∂B1 but has a range", e.k));
            }
        }
        Ok(())
    }

    /// CSV with columns `k,R_k,D_k,H_k,entry,exit`; points are `;`-separated, `inf` marks
    /// an infinite time.
    pub fn to_csv(&self) -> String {
        let pt = |p: &[i64]| p.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(";");
        let t = |x: Option<u64>| x.map_or("inf".to_string(), |v| v.to_string());
        let mut out = String::from("k,R_k,D_k,H_k,entry,exit\n");
        out.push_str(&format!("0,0,{},inf,,\n", t(self.d0)));
        for e in &self.excursions {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                e.k,
                e.r,
                t(e.d),
                t(e.h),
                pt(&e.entry),
                e.exit.as_deref().map_or(String::new(), pt)
            ));
        }
        out
    }
}

enum Phase {
    BeforeExit,
    Outside,
    Inside,
}

/// Single-pass decomposition of a trace fed point by point.
pub struct Decomposer<'a> {
    annuli: &'a Annuli,
    keep_ranges: bool,
    phase: Phase,
    schedule: ExcursionSchedule,
    buffer: Vec<Vec<i64>>,
    last_b2: usize,
}

impl<'a> Decomposer<'a> {
    pub fn new(annuli: &'a Annuli, keep_ranges: bool) -> Self {
        Decomposer {
            annuli,
            keep_ranges,
            phase: Phase::BeforeExit,
            schedule: ExcursionSchedule::default(),
            buffer: Vec::new(),
            last_b2: 0,
        }
    }

    pub fn push(&mut self, t: u64, x: &[i64]) {
        let a = self.annuli;
        match self.phase {
            Phase::BeforeExit => {
                if !inside(&a.b3, x) {
                    self.schedule.d0 = Some(t);
                    self.phase = Phase::Outside;
                }
            }
            Phase::Outside => {
                if inside(&a.b2, x) {
                    let k = self.schedule.excursions.len() + 1;
                    self.schedule.excursions.push(Excursion {
                        k,
                        r: t,
                        d: None,
                        h: None,
                        entry: x.to_vec(),
                        exit: None,
                        range: None,
                    });
                    self.buffer.clear();
                    self.phase = Phase::Inside;
                    self.track_inside(t, x);
                }
            }
            Phase::Inside => {
                if !inside(&a.b3, x) {
                    let keep = self.keep_ranges;
                    let e = self.schedule.excursions.last_mut().expect("open excursion");
                    e.d = Some(t);
                    e.exit = Some(x.to_vec());
                    if e.h.is_some() {
                        e.range = Some(if keep { self.buffer[..self.last_b2].to_vec() } else { Vec::new() });
                    }
                    self.phase = Phase::Outside;
                } else {
                    self.track_inside(t, x);
                }
            }
        }
    }

    fn track_inside(&mut self, t: u64, x: &[i64]) {
        let e = self.schedule.excursions.last_mut().expect("open excursion");
        if e.h.is_none() && inside(&self.annuli.b1, x) {
            e.h = Some(t);
        }
        if e.h.is_some() {
            if self.keep_ranges {
                self.buffer.push(x.to_vec());
            }
            if inside(&self.annuli.b2, x) {
                self.last_b2 = self.buffer.len();
            }
        }
    }

    pub fn finish(self) -> ExcursionSchedule {
        self.schedule
    }
}

/// Decomposes a complete trace given as points at times `0, 1, ...`.
pub fn decompose(trace: &[Vec<i64>], annuli: &Annuli, keep_ranges: bool) -> Result<ExcursionSchedule> {
    let mut dec = Decomposer::new(annuli, keep_ranges);
    for (t, x) in trace.iter().enumerate() {
        if x.len() != annuli.dim() {
            return invalid(format!("trace point {t} has dimension {}", x.len()));
        }
        if t > 0 && trace[t - 1].iter().zip(x).map(|(a, b)| (a - b).abs()).sum::<i64>() != 1 {
            return invalid(format!("trace is not nearest-neighbour at step {t}"));
        }
        dec.push(t as u64, x);
    }
    Ok(dec.finish())
}

/// Schedule of a torus walk run for `steps` steps, lifted around `center` so that the
/// annuli surround it.
pub fn torus_schedule(config: &TorusConfig, annuli: &Annuli, center: usize, steps: u64) -> Result<ExcursionSchedule> {
    if annuli.b3.side + 2 > config.n as i64 {
        return invalid(format!("B3 of side {} does not fit in the torus of side {}", annuli.b3.side, config.n));
    }
    let mut walker = Walker::new(config)?;
    let torus = walker.torus().clone();
    let mut dec = Decomposer::new(annuli, false);
    let mut buf = torus.lift(walker.position(), center);
    dec.push(0, &buf);
    walker.run(steps, |t, x| {
        torus.lift_into(x, center, &mut buf);
        dec.push(t, &buf);
        true
    });
    Ok(dec.finish())
}

/// `N_RW(B2, B3, u) = sup{k >= 0 : R_k < u N^d}`.
pub fn n_rw(schedule: &ExcursionSchedule, u: f64, volume: usize) -> usize {
    schedule.returns_before(u * volume as f64)
}

/// Mean return gap `R_{k+1} - R_k` over consecutive recorded returns.
pub fn mean_return_gap(schedule: &ExcursionSchedule) -> Option<f64> {
    let r: Vec<u64> = schedule.excursions.iter().map(|e| e.r).collect();
    if r.len() < 2 {
        return None;
    }
    Some((r[r.len() - 1] - r[0]) as f64 / (r.len() - 1) as f64)
}

/// Second estimator `M' = N^d / E[V_0]` from pooled return gaps.
pub fn m_prime(schedules: &[ExcursionSchedule], volume: usize) -> Option<f64> {
    let (mut span, mut gaps) = (0u64, 0usize);
    for s in schedules {
        if s.excursions.len() >= 2 {
            span += s.excursions.last().expect("non-empty").r - s.excursions[0].r;
            gaps += s.excursions.len() - 1;
        }
    }
    (gaps > 0).then(|| volume as f64 * gaps as f64 / span as f64)
}

/// Total variation between the empirical law of the entry points `x_{R_k}` and the
/// normalised relative equilibrium measure of `B2` in `B3`.
pub fn entry_law_distance(schedules: &[ExcursionSchedule], annuli: &Annuli) -> Result<(f64, usize)> {
    let (cap, eq) = annuli.relative_capacity()?;
    let mut counts = std::collections::HashMap::<Vec<i64>, usize>::new();
    let mut total = 0usize;
    for s in schedules {
        for e in &s.excursions {
            *counts.entry(e.entry.clone()).or_default() += 1;
            total += 1;
        }
    }
    if total == 0 {
        return invalid("no returns recorded");
    }
    let mut tv = 0.0;
    let mut seen = 0usize;
    for (p, m) in &eq {
        let c = counts.get(&p.0).copied().unwrap_or(0);
        seen += c;
        tv += (c as f64 / total as f64 - m / cap).abs();
    }
    tv += (total - seen) as f64 / total as f64;
    Ok((tv / 2.0, total))
}

/// Excursion counts of one interlacement sample at level `u`: `T^j` for each trajectory.
#[derive(Clone, Debug, Serialize)]
pub struct RiExcursions {
    pub u: f64,
    pub per_trajectory: Vec<usize>,
    /// Trajectories visiting `B2`.
    pub visiting_b2: usize,
}

impl RiExcursions {
    /// `N_RI = sum_j T^j`.
    pub fn n_ri(&self) -> usize {
        self.per_trajectory.iter().sum()
    }
}

/// Draws `N ~ Poisson(u cap(B))` trajectories and counts their returns to `B2`. Positions
/// outside the sampling box are skipped, so times are visit counts in `B`.
pub fn ri_excursions<R: Rng + ?Sized>(
    sampler: &RiSampler,
    annuli: &Annuli,
    u: f64,
    rng: &mut R,
) -> Result<RiExcursions> {
    if !sampler.sample_box().strictly_contains_box(&annuli.b3) {
        return invalid("the sampling box must strictly contain B3");
    }
    let n = sampler.trajectory_count(u, rng)?;
    let mut per_trajectory = Vec::with_capacity(n);
    let mut visiting_b2 = 0;
    for _ in 0..n {
        let mut dec = Decomposer::new(annuli, false);
        let mut t = 0u64;
        let mut hit_b2 = false;
        sampler.trajectory(rng, &mut |x| {
            hit_b2 |= inside(&annuli.b2, x);
            dec.push(t, x);
            t += 1;
        });
        visiting_b2 += hit_b2 as usize;
        per_trajectory.push(dec.finish().excursions.len());
    }
    Ok(RiExcursions { u, per_trajectory, visiting_b2 })
}

/// Empirical tails `P(|X - m| > eps m)` over an `eps` grid.
#[derive(Clone, Debug, Serialize)]
pub struct ConcentrationReport {
    pub mean_target: f64,
    pub empirical_mean: f64,
    pub replicas: usize,
    pub tails: Vec<(f64, f64)>,
}

pub fn concentration_report(samples: &[f64], target: f64, eps_grid: &[f64]) -> Result<ConcentrationReport> {
    if samples.is_empty() {
        return invalid("no samples");
    }
    let n = samples.len() as f64;
    let tails = eps_grid
        .iter()
        .map(|&eps| {
            // eps = 0 counts every sample, including exact hits of the target.
            let c = samples.iter().filter(|&&x| eps == 0.0 || (x - target).abs() > eps * target).count();
            (eps, c as f64 / n)
        })
        .collect();
    Ok(ConcentrationReport {
        mean_target: target,
        empirical_mean: samples.iter().sum::<f64>() / n,
        replicas: samples.len(),
        tails,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(xs: &[i64]) -> Vec<Vec<i64>> {
        xs.iter().map(|&x| vec![x, 0, 0]).collect()
    }

    #[test]
    fn hand_computed_fixture() {
        let a = Annuli::new(3, 3, 5, 9).unwrap();
        let trace = line(&[4, 5, 4, 3, 2, 1, 2, 3, 4, 5, 4, 3, 2, 3, 4, 5]);
        let s = decompose(&trace, &a, true).unwrap();
        s.check(&a).unwrap();
        assert_eq!(s.d0, Some(1));
        assert_eq!(s.excursions.len(), 2);
        let e1 = &s.excursions[0];
        assert_eq!((e1.r, e1.h, e1.d), (4, Some(5), Some(9)));
        assert_eq!(e1.entry, vec![2, 0, 0]);
        assert_eq!(e1.exit, Some(vec![5, 0, 0]));
        assert_eq!(e1.range, Some(line(&[1, 2])));
        let e2 = &s.excursions[1];
        assert_eq!((e2.r, e2.h, e2.d), (12, None, Some(15)));
        assert_eq!(e2.range, None);
        assert_eq!(n_rw(&s, 0.0, 1000), 0);
        assert_eq!(s.returns_before(12.0), 1);
        assert_eq!(s.returns_before(13.0), 2);
        assert!(s.to_csv().starts_with("k,R_k,D_k,H_k,entry,exit\n0,0,1,inf,,\n1,4,9,5,2;0;0,5;0;0\n"));
    }

    #[test]
    fn no_return_after_first_exit() {
        let a = Annuli::new(3, 3, 5, 9).unwrap();
        let s = decompose(&line(&[3, 4, 5, 6, 7]), &a, false).unwrap();
        assert_eq!(s.d0, Some(2));
        assert!(s.excursions.is_empty());
    }

    #[test]
    fn rejects_bad_nesting_and_jumps() {
        assert!(Annuli::new(3, 5, 3, 9).is_err());
        assert!(Annuli::new(3, 3, 9, 9).is_err());
        let a = Annuli::new(3, 3, 5, 9).unwrap();
        assert!(decompose(&line(&[0, 2]), &a, false).is_err());
    }

    #[test]
    fn torus_walk_schedule_is_well_formed() {
        let a = Annuli::new(3, 3, 5, 11).unwrap();
        let cfg = TorusConfig::new(16, 3, 9, 0).unwrap();
        let s = torus_schedule(&cfg, &a, 0, 200_000).unwrap();
        s.check(&a).unwrap();
        assert!(s.excursions.len() > 5);
    }

    #[test]
    fn concentration_edges() {
        let r = concentration_report(&[10.0, 10.0, 12.0], 10.0, &[0.0, 0.1, 0.5]).unwrap();
        assert_eq!(r.tails[0].1, 1.0);
        assert!((r.tails[1].1 - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(r.tails[2].1, 0.0);
    }
}
