//! Statistics of late sets: double points and pattern counts, Bernoulli comparison
//! fields, Chen-Stein bounds, separation checks and goodness-of-fit tests.

use std::collections::{BTreeMap, HashSet};

use rand::Rng;
use rand_distr::{Distribution, Geometric};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::interlacements::{green_far_field, RiSampler};
use crate::lattice::{FiniteSet, PointZ};
use crate::potential::{capacity, GreenTable};
use crate::rng::{open_unit, replica_rng};
use crate::stats::{bootstrap_ci, chi_square, exp1_cdf, ks_test, linear_fit, mean_se, ChiSquareResult, KsResult};
use crate::torus::{time_threshold, u_scale, visited_bitset, AlphaField, Torus, TorusConfig};

/// Significance level used for pass/fail verdicts.
pub const P_THRESHOLD: f64 = 0.01;
/// Minimum pooled sample for the exponential-law test.
pub const MIN_EXP_POOL: usize = 50;

fn sorted_unique(sites: &[usize]) -> Vec<usize> {
    let mut s = sites.to_vec();
    s.sort_unstable();
    s.dedup();
    s
}

fn shift(torus: &Torus, x: usize, off: &[i64]) -> usize {
    let mut c = torus.coords(x);
    for (a, b) in c.iter_mut().zip(off) {
        *a += b;
    }
    torus.index(&c)
}

fn span(k: &FiniteSet) -> i64 {
    k.diameter() - 1
}

/// `R_F = log(|F|)^{1/(d-2)}`.
pub fn neighborhood_radius(card_f: usize, d: usize) -> Result<f64> {
    if d < 3 {
        return invalid("R_F needs d >= 3");
    }
    Ok((card_f as f64).ln().powf(1.0 / (d as f64 - 2.0)))
}

/// Number of nearest-neighbour pairs inside `sites`, with wraparound.
pub fn double_points(sites: &[usize], torus: &Torus) -> usize {
    let set = sorted_unique(sites);
    set.iter().map(|&x| (0..torus.d).filter(|&k| set.binary_search(&torus.neighbor(x, 2 * k)).is_ok()).count()).sum()
}

/// Number of nearest-neighbour pairs inside a finite subset of `Z^d`.
pub fn double_points_zd(set: &FiniteSet) -> usize {
    let d = set.dim();
    set.points().iter().map(|p| (0..d).filter(|&k| set.contains(&p.add(&PointZ::unit(d, k)))).count()).sum()
}

/// `sum_x 1{x + K in S}` over torus anchors; the shape is projected modulo `N`.
pub fn pattern_count(sites: &[usize], torus: &Torus, k: &FiniteSet) -> Result<usize> {
    if k.dim() != torus.d {
        return Err(Error::DimensionMismatch { expected: torus.d, got: k.dim() });
    }
    if k.is_empty() {
        return invalid("empty pattern");
    }
    if span(k) >= torus.n as i64 {
        return invalid(format!("pattern of span {} does not fit on a torus of side {}", span(k), torus.n));
    }
    let set = sorted_unique(sites);
    let k0 = &k.points()[0];
    let offs: Vec<Vec<i64>> = k.points()[1..].iter().map(|p| p.sub(k0).0).collect();
    Ok(set.iter().filter(|&&s| offs.iter().all(|o| set.binary_search(&shift(torus, s, o)).is_ok())).count())
}

/// Pattern count summed over all symmetry images of `k`.
pub fn pattern_count_class(sites: &[usize], torus: &Torus, k: &FiniteSet) -> Result<usize> {
    k.images().iter().map(|img| pattern_count(sites, torus, img)).sum()
}

/// The `d` axis neighbour pairs `{0, e_k}`.
pub fn axis_pairs(d: usize) -> Vec<FiniteSet> {
    (0..d).map(|k| FiniteSet::new(d, vec![PointZ::origin(d), PointZ::unit(d, k)]).expect("valid pair")).collect()
}

/// Canonical pattern with its capacity and `alpha_*(K) = 1 / (g(0) cap(K))`.
#[derive(Clone, Debug, Serialize)]
pub struct PatternShape {
    pub set: FiniteSet,
    pub cap: f64,
    pub alpha_star: f64,
}

impl PatternShape {
    pub fn new(k: &FiniteSet, table: &GreenTable) -> Result<Self> {
        let set = k.canonical();
        let cap = capacity(&set, table)?.cap;
        Ok(PatternShape { set, cap, alpha_star: 1.0 / (table.g0() * cap) })
    }
}

/// Largest `|x|_1` below which some pair `{0, x}` can still have `g(x) >= bound`,
/// relying on the table's l1-monotonicity of the shell suprema.
fn pair_l1_reach(table: &GreenTable, bound: f64) -> Result<i64> {
    let r = table.radius() as i64;
    let mut shell_sup: BTreeMap<i64, f64> = BTreeMap::new();
    for (key, e) in table.entries() {
        let l1: i64 = key.iter().map(|&c| c as i64).sum();
        let s = shell_sup.entry(l1).or_insert(0.0);
        *s = s.max(e.value);
    }
    for n in 1..=r {
        if shell_sup.get(&n).is_some_and(|&s| s < bound) {
            return Ok(n - 1);
        }
    }
    Err(Error::TableCoverage(vec![r + 1; table.dim()]))
}

/// All symmetry classes `A` containing the origin with `alpha_*(A) > floor` and span
/// at most `diameter_cap`, grown level by level from the singleton. Candidate supersets
/// are pruned by the uniform-measure bound `cap(A) >= |A|^2 / sum_{x,y in A} g(x - y)`
/// before the exact solve; supersets of a rejected set are never admissible since
/// capacity is monotone.
pub fn enumerate_patterns(table: &GreenTable, floor: f64, diameter_cap: Option<i64>) -> Result<Vec<PatternShape>> {
    if !(0.0..1.0).contains(&floor) {
        return invalid(format!("alpha_* floor must lie in [0, 1), got {floor}"));
    }
    let d = table.dim();
    let g0 = table.g0();
    let threshold = if floor == 0.0 { f64::INFINITY } else { (1.0 - 1e-12) / (g0 * floor) };
    let r_table = table.radius() as i64;
    let dcap = match diameter_cap {
        Some(c) if c > r_table => return Err(Error::TableCoverage(vec![c; d])),
        Some(c) => c,
        None if floor <= 0.5 => {
            return invalid("alpha_* floor <= 1/2 without a diameter cap is an infinite family");
        }
        // cap({0,x}) < threshold iff g(x) > 2/threshold - g(0).
        None => pair_l1_reach(table, 2.0 / threshold - g0)?,
    };
    let g = |x: &[i64]| table.g_offset(x).ok_or_else(|| Error::TableCoverage(x.to_vec()));

    let origin = FiniteSet::singleton(PointZ::origin(d));
    let mut out = vec![PatternShape::new(&origin, table)?];
    let mut level = vec![origin];
    let mut seen: HashSet<FiniteSet> = HashSet::new();
    let mut diff = vec![0i64; d];
    while !level.is_empty() {
        let mut next: BTreeMap<Vec<PointZ>, PatternShape> = BTreeMap::new();
        for a in &level {
            let pts = a.points();
            let mut base = 0.0;
            for p in pts {
                for q in pts {
                    base += g(&p.sub(q).0)?;
                }
            }
            let m = (pts.len() + 1) as f64;
            let lo: Vec<i64> = (0..d).map(|k| pts.iter().map(|p| p.0[k]).max().unwrap() - dcap).collect();
            let hi: Vec<i64> = (0..d).map(|k| pts.iter().map(|p| p.0[k]).min().unwrap() + dcap).collect();
            let mut y = lo.clone();
            'cand: loop {
                let yp = PointZ(y.clone());
                if !a.contains(&yp) {
                    let mut sum = base + g0;
                    for p in pts {
                        for k in 0..d {
                            diff[k] = y[k] - p.0[k];
                        }
                        sum += 2.0 * g(&diff)?;
                    }
                    if m * m / sum < threshold {
                        let cand = a.with_point(yp)?.canonical();
                        if !seen.contains(&cand) {
                            if capacity(&cand, table)?.cap < threshold {
                                next.insert(cand.points().to_vec(), PatternShape::new(&cand, table)?);
                            }
                            seen.insert(cand);
                        }
                    }
                }
                for k in (0..d).rev() {
                    if y[k] < hi[k] {
                        y[k] += 1;
                        continue 'cand;
                    }
                    y[k] = lo[k];
                }
                break;
            }
        }
        level = next.values().map(|s| s.set.clone()).collect();
        out.extend(next.into_values());
    }
    Ok(out)
}

/// Uniform marks of a pattern field at one placement.
#[derive(Clone, Debug, PartialEq)]
pub struct Mark {
    pub shape: usize,
    pub anchor: usize,
    pub u: f64,
}

/// Union of independently placed pattern translates on the torus. Only marks with
/// `U <= p_max` are materialised: anchors are reached by geometric skips and
/// `U | U <= p_max` is uniform on `(0, p_max]`, which is the same law as marking every
/// anchor. Realizations at densities `p <= p_max` share these marks, so they are nested.
#[derive(Clone, Debug)]
pub struct PatternField {
    pub torus: Torus,
    pub shapes: Vec<FiniteSet>,
    pub p_max: Vec<f64>,
    pub seed: u64,
    marks: Vec<Mark>,
}

impl PatternField {
    /// Marks for shape `i` come from stream `i` of `seed`, so each placement's mark is a
    /// function of (shape id, anchor, seed).
    pub fn new(torus: Torus, shapes: Vec<FiniteSet>, p_max: Vec<f64>, seed: u64) -> Result<Self> {
        if shapes.len() != p_max.len() {
            return Err(Error::LengthMismatch(format!("{} shapes vs {} densities", shapes.len(), p_max.len())));
        }
        for (s, &p) in shapes.iter().zip(&p_max) {
            if !(0.0..=1.0).contains(&p) {
                return invalid(format!("density {p} outside [0, 1]"));
            }
            if s.is_empty() || s.dim() != torus.d || span(s) >= torus.n as i64 {
                return invalid("pattern shapes must be non-empty, of the torus dimension, and fit the torus");
            }
        }
        let vol = torus.volume() as u64;
        let mut marks = Vec::new();
        for (i, &p) in p_max.iter().enumerate() {
            if p == 0.0 {
                continue;
            }
            let mut rng = replica_rng(seed, i as u64);
            let geo = Geometric::new(p).map_err(|e| Error::InvalidParameter(format!("density {p}: {e}")))?;
            let mut x = geo.sample(&mut rng);
            while x < vol {
                marks.push(Mark { shape: i, anchor: x as usize, u: p * open_unit(&mut rng) });
                x = x.saturating_add(1).saturating_add(geo.sample(&mut rng));
            }
        }
        Ok(PatternField { torus, shapes, p_max, seed, marks })
    }

    pub fn marks(&self) -> &[Mark] {
        &self.marks
    }

    /// Placements selected at densities `p` (one per shape).
    pub fn placements(&self, p: &[f64]) -> Result<Vec<&Mark>> {
        if p.len() != self.shapes.len() {
            return Err(Error::LengthMismatch(format!("{} densities for {} shapes", p.len(), self.shapes.len())));
        }
        if p.iter().zip(&self.p_max).any(|(a, b)| *a > *b) {
            return invalid("realization density above the generated maximum");
        }
        Ok(self.marks.iter().filter(|m| m.u <= p[m.shape]).collect())
    }

    /// Union of the selected translates, as sorted site indices.
    pub fn realize(&self, p: &[f64]) -> Result<Vec<usize>> {
        let mut sites = Vec::new();
        for m in self.placements(p)? {
            for q in self.shapes[m.shape].points() {
                sites.push(shift(&self.torus, m.anchor, &q.0));
            }
        }
        Ok(sorted_unique(&sites))
    }
}

/// Singleton field `B = {x : U_x <= density}`, realizable at any density up to `density_max`.
pub fn bernoulli_field(torus: Torus, density_max: f64, seed: u64) -> Result<PatternField> {
    let d = torus.d;
    PatternField::new(torus, vec![FiniteSet::singleton(PointZ::origin(d))], vec![density_max], seed)
}

/// Field of translates of every `(shape, p)` pair; symmetry images must be listed as
/// separate shapes.
pub fn build_pattern_bernoulli(torus: Torus, shapes: &[(FiniteSet, f64)], seed: u64) -> Result<PatternField> {
    PatternField::new(torus, shapes.iter().map(|s| s.0.clone()).collect(), shapes.iter().map(|s| s.1).collect(), seed)
}

/// `Q(K, R)`: sites within sup-distance `R` of `K`.
pub fn neighborhood(k: &FiniteSet, radius: i64) -> Vec<PointZ> {
    let d = k.dim();
    let pts = k.points();
    let lo: Vec<i64> = (0..d).map(|j| pts.iter().map(|p| p.0[j]).min().unwrap() - radius).collect();
    let hi: Vec<i64> = (0..d).map(|j| pts.iter().map(|p| p.0[j]).max().unwrap() + radius).collect();
    let mut out = Vec::new();
    let mut y = lo.clone();
    loop {
        if pts.iter().any(|p| p.0.iter().zip(&y).all(|(a, b)| (a - b).abs() <= radius)) {
            out.push(PointZ(y.clone()));
        }
        let mut k = d;
        loop {
            if k == 0 {
                return out;
            }
            k -= 1;
            if y[k] < hi[k] {
                y[k] += 1;
                break;
            }
            y[k] = lo[k];
        }
    }
}

/// Closed-form interlacement brackets of the isolated-occurrence probability
/// `P(V^u cap Q(K,R) = K)`.
#[derive(Clone, Debug, Serialize)]
pub struct IsolationBrackets {
    /// `exp(-u cap(K))`.
    pub upper: f64,
    /// `upper - sum_{x in Q(K,R) \ K} exp(-u cap(K + x))`, clamped at zero.
    pub lower: f64,
    pub terms: usize,
}

pub fn isolation_brackets(k: &FiniteSet, u: f64, radius: i64, table: &GreenTable) -> Result<IsolationBrackets> {
    let upper = (-u * capacity(k, table)?.cap).exp();
    let mut sub = 0.0;
    let mut terms = 0;
    for y in neighborhood(k, radius) {
        if k.contains(&y) {
            continue;
        }
        sub += (-u * capacity(&k.with_point(y)?, table)?.cap).exp();
        terms += 1;
    }
    Ok(IsolationBrackets { upper, lower: (upper - sub).max(0.0), terms })
}

/// Monte Carlo estimate of `p^alpha(K)` with binomial or replica standard error.
#[derive(Clone, Debug, Serialize)]
pub struct IsolationEstimate {
    pub p: f64,
    pub se: f64,
    pub replicas: usize,
    pub u: f64,
    pub radius: i64,
    pub brackets: Option<IsolationBrackets>,
}

/// Interlacement estimate: `K` is centred in the sampler box, which must contain `Q(K, R)`.
#[allow(clippy::too_many_arguments)]
pub fn estimate_pf_alpha_ri(
    sampler: &RiSampler,
    table: &GreenTable,
    k: &FiniteSet,
    card_f: usize,
    alpha: f64,
    radius: i64,
    replicas: usize,
    seed: u64,
) -> Result<IsolationEstimate> {
    if replicas == 0 {
        return invalid("no replicas");
    }
    let d = k.dim();
    let pts = k.points();
    let mid = PointZ(
        (0..d)
            .map(|j| {
                -(pts.iter().map(|p| p.0[j]).min().unwrap() + pts.iter().map(|p| p.0[j]).max().unwrap()).div_euclid(2)
            })
            .collect(),
    );
    let kc = k.translate(&mid);
    let mut inside = Vec::new();
    let mut outside = Vec::new();
    for y in neighborhood(&kc, radius) {
        let i = sampler
            .box_index(&y.0)
            .ok_or_else(|| Error::InvalidParameter(format!("Q(K, {radius}) leaves the sampling box at {:?}", y.0)))?;
        if kc.contains(&y) {
            inside.push(i);
        } else {
            outside.push(i);
        }
    }
    let u = u_scale(alpha, card_f, table.g0());
    let hits: Result<Vec<bool>> = (0..replicas)
        .into_par_iter()
        .map(|r| {
            let s = sampler.sample(u, &mut replica_rng(seed, r as u64))?;
            Ok(inside.iter().all(|&i| s.is_vacant(i, u)) && outside.iter().all(|&i| !s.is_vacant(i, u)))
        })
        .collect();
    let h = hits?.into_iter().filter(|&b| b).count();
    let p = h as f64 / replicas as f64;
    Ok(IsolationEstimate {
        p,
        se: (p * (1.0 - p) / replicas as f64).sqrt(),
        replicas,
        u,
        radius,
        brackets: Some(isolation_brackets(&kc, u, radius, table)?),
    })
}

/// Late sites `L^alpha` of one torus walk replica.
pub fn walk_late_sites(config: &TorusConfig, alpha: f64, g0: f64) -> Result<Vec<usize>> {
    let vol = config.volume();
    let t = time_threshold(u_scale(alpha, vol, g0), vol);
    Ok(visited_bitset(config, t)?.vacant_sites())
}

/// Torus-walk estimate: per replica, the fraction of anchors `x` with
/// `L^alpha cap Q(x+K, R) = x+K`.
pub fn estimate_pf_alpha_walk(
    n: usize,
    k: &FiniteSet,
    alpha: f64,
    radius: i64,
    replicas: usize,
    seed: u64,
    g0: f64,
) -> Result<IsolationEstimate> {
    let d = k.dim();
    if 2 * radius + span(k) >= n as i64 {
        return invalid("Q(K, R) does not fit in the torus");
    }
    if replicas < 2 {
        return invalid("need at least two replicas");
    }
    let torus = Torus::new(n, d);
    let k0 = k.points()[0].clone();
    let kz = k.translate(&PointZ(k0.0.iter().map(|c| -c).collect()));
    let ring: Vec<PointZ> = neighborhood(&kz, radius).into_iter().filter(|y| !kz.contains(y)).collect();
    let fracs: Result<Vec<f64>> = (0..replicas)
        .into_par_iter()
        .map(|r| {
            let config = TorusConfig::new(n, d, seed, r as u64)?;
            let late = walk_late_sites(&config, alpha, g0)?;
            let hit = late
                .iter()
                .filter(|&&x| {
                    kz.points().iter().all(|p| late.binary_search(&shift(&torus, x, &p.0)).is_ok())
                        && ring.iter().all(|y| late.binary_search(&shift(&torus, x, &y.0)).is_err())
                })
                .count();
            Ok(hit as f64 / torus.volume() as f64)
        })
        .collect();
    let (p, se) = mean_se(&fracs?);
    Ok(IsolationEstimate { p, se, replicas, u: u_scale(alpha, torus.volume(), g0), radius, brackets: None })
}

/// Chen-Stein quantities for the singleton field over the whole torus with
/// neighbourhoods `Q(x, R) cap F`.
#[derive(Clone, Debug, Serialize)]
pub struct ChenStein {
    pub alpha: f64,
    pub epsilon: f64,
    pub n: usize,
    pub d: usize,
    pub radius: f64,
    /// Levels `alpha - 2 epsilon` and `alpha`.
    pub levels: [f64; 2],
    pub b1: [f64; 2],
    pub b2: [f64; 2],
    /// Caller-supplied `d_eps(Y, Z)` (zero by default).
    pub d_eps: f64,
    pub bound: f64,
}

/// `R = (lambda / epsilon)^{2/(d-2)} R_F`.
pub fn chen_stein_radius(lambda: f64, epsilon: f64, card_f: usize, d: usize) -> Result<f64> {
    Ok((lambda / epsilon).powf(2.0 / (d as f64 - 2.0)) * neighborhood_radius(card_f, d)?)
}

/// `b_1`, `b_2` from exact one- and two-point vacancy probabilities
/// `|F|^{-alpha' g(0) cap}`; offsets beyond the table use the far-field Green function.
pub fn chen_stein_bounds(
    alpha: f64,
    epsilon: f64,
    n: usize,
    d: usize,
    radius: f64,
    d_eps: f64,
    table: &GreenTable,
) -> Result<ChenStein> {
    if table.dim() != d {
        return Err(Error::DimensionMismatch { expected: d, got: table.dim() });
    }
    if !(radius >= 0.0) || epsilon < 0.0 {
        return invalid("radius and epsilon must be non-negative");
    }
    let g0 = table.g0();
    let card_f = n.pow(d as u32) as f64;
    let r = radius.floor() as i64;
    let (lo, hi) = if 2 * r + 1 >= n as i64 {
        let lo = -(n as i64 / 2);
        (lo, lo + n as i64 - 1)
    } else {
        (-r, r)
    };
    let side = (hi - lo + 1) as f64;
    let nbhd = side.powi(d as i32);
    // Pair capacities over the neighbourhood offsets, zero offset excluded.
    let mut caps = Vec::new();
    let mut z = vec![lo; d];
    loop {
        if z.iter().any(|&c| c != 0) {
            let gz = table.g_offset(&z).unwrap_or_else(|| green_far_field(d, &z));
            caps.push(2.0 / (g0 + gz));
        }
        let mut k = d;
        let done = loop {
            if k == 0 {
                break true;
            }
            k -= 1;
            if z[k] < hi {
                z[k] += 1;
                break false;
            }
            z[k] = lo;
        };
        if done {
            break;
        }
    }
    let levels = [alpha - 2.0 * epsilon, alpha];
    let mut b1 = [0.0; 2];
    let mut b2 = [0.0; 2];
    for (i, &a) in levels.iter().enumerate() {
        let p1 = card_f.powf(-a);
        b1[i] = card_f * nbhd * p1 * p1;
        b2[i] = card_f * caps.iter().map(|c| card_f.powf(-a * g0 * c)).sum::<f64>();
    }
    let sup = (0..2).map(|i| b1[i] + b2[i] + d_eps * card_f * card_f).fold(f64::NEG_INFINITY, f64::max);
    Ok(ChenStein { alpha, epsilon, n, d, radius, levels, b1, b2, d_eps, bound: 400.0 * sup })
}

/// Sites `x` of `sites` for which `S cap Q(x, R)` is not an admissible pattern
/// (`cap <= 2/g(0)`) of span at most `R_F`.
pub fn separation_check(
    sites: &[usize],
    torus: &Torus,
    radius: i64,
    r_f: f64,
    table: &GreenTable,
) -> Result<Vec<usize>> {
    if 2 * radius + 1 > torus.n as i64 {
        return invalid("separation radius wraps the torus");
    }
    let g0 = table.g0();
    let limit = 2.0 / g0 * (1.0 + 1e-12);
    let max_span = r_f.floor() as i64;
    let set = sorted_unique(sites);
    let mut lift = vec![0i64; torus.d];
    let mut out = Vec::new();
    for &x in &set {
        let mut local = Vec::new();
        for &y in &set {
            torus.lift_into(y, x, &mut lift);
            if lift.iter().all(|c| c.abs() <= radius) {
                local.push(PointZ(lift.clone()));
            }
        }
        let k = FiniteSet::new(torus.d, local)?;
        if span(&k) > max_span {
            out.push(x);
            continue;
        }
        if !table.covers(&PointZ(vec![span(&k); torus.d])) {
            return Err(Error::TableCoverage(vec![span(&k); torus.d]));
        }
        if capacity(&k, table)?.cap > limit {
            out.push(x);
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Pass,
    Fail,
    Inconclusive,
}

#[derive(Clone, Debug, Serialize)]
pub struct ExpLawReport {
    pub pooled: usize,
    pub excluded: usize,
    pub ks: Option<KsResult>,
    pub verdict: Verdict,
}

/// KS test of a pooled sample against Exp(1); fewer than [`MIN_EXP_POOL`] points is
/// inconclusive.
pub fn exp1_verdict(pool: &[f64], excluded: usize) -> Result<ExpLawReport> {
    if pool.len() < MIN_EXP_POOL {
        return Ok(ExpLawReport { pooled: pool.len(), excluded, ks: None, verdict: Verdict::Inconclusive });
    }
    let ks = ks_test(pool, exp1_cdf)?;
    let verdict = if ks.p_value > P_THRESHOLD { Verdict::Pass } else { Verdict::Fail };
    Ok(ExpLawReport { pooled: pool.len(), excluded, ks: Some(ks), verdict })
}

/// `(alpha_x - alpha_*) d log N` for the points of `L^{alpha_*}` with
/// `L^{alpha_*} cap Q(x, 2R) = {x}`; returns the values and the number excluded.
pub fn exp_law_values(field: &AlphaField, alpha_star: f64, radius: i64) -> Result<(Vec<f64>, usize)> {
    let torus = Torus::new(field.n, field.d);
    let late = crate::torus::late_set(field, alpha_star, None)?;
    if late.members.iter().any(|&x| field.first_hit[x] == crate::torus::NEVER) {
        return Err(Error::HorizonTooShort { needed: u64::MAX, available: field.horizon });
    }
    if 4 * radius + 1 > field.n as i64 {
        return invalid("isolation radius wraps the torus");
    }
    let scale = field.d as f64 * (field.n as f64).ln();
    let mut lift = vec![0i64; field.d];
    let mut values = Vec::new();
    let mut excluded = 0;
    for &x in &late.members {
        let crowded = late.members.iter().any(|&y| {
            y != x && {
                torus.lift_into(y, x, &mut lift);
                lift.iter().all(|c| c.abs() <= 2 * radius)
            }
        });
        let a = field.alpha(x);
        if crowded || a <= alpha_star {
            excluded += 1;
        } else {
            values.push((a - alpha_star) * scale);
        }
    }
    Ok((values, excluded))
}

/// Pooled exponential-law test across replicas.
pub fn exp_law_test(fields: &[AlphaField], alpha_star: f64, radius: i64) -> Result<ExpLawReport> {
    let mut pool = Vec::new();
    let mut excluded = 0;
    for f in fields {
        let (v, e) = exp_law_values(f, alpha_star, radius)?;
        pool.extend(v);
        excluded += e;
    }
    exp1_verdict(&pool, excluded)
}

#[derive(Clone, Debug, Serialize)]
pub struct PoissonPpReport {
    pub cells_per_axis: usize,
    pub cells: usize,
    pub points: usize,
    pub mean: f64,
    /// Variance-to-mean ratio of the cell counts.
    pub dispersion: f64,
    pub chi_square: ChiSquareResult,
}

/// Minimum expected frequency of a count class in [`poisson_pp_test`].
pub const MIN_CLASS_EXPECTED: f64 = 1.0;

fn cell_count_histogram(set: &[usize], torus: &Torus, m: usize) -> Result<(Vec<f64>, f64, ChiSquareResult)> {
    let cells = m.pow(torus.d as u32);
    let w = torus.n / m;
    let mut counts = vec![0usize; cells];
    for &x in set {
        let idx = torus.coords(x).iter().fold(0usize, |acc, &v| acc * m + v as usize / w);
        counts[idx] += 1;
    }
    let mean = set.len() as f64 / cells as f64;
    let top = counts.iter().copied().max().unwrap_or(0);
    let mut observed = vec![0.0; top + 1];
    for &c in &counts {
        observed[c] += 1.0;
    }
    // Classes 0..top-1 and the tail {>= top}.
    let mut expected = vec![0.0; top + 1];
    let mut pk = (-mean).exp();
    let mut head = 0.0;
    for (k, e) in expected.iter_mut().enumerate().take(top) {
        *e = cells as f64 * pk;
        head += pk;
        pk *= mean / (k + 1) as f64;
    }
    expected[top] = cells as f64 * (1.0 - head).max(0.0);
    let counts: Vec<f64> = counts.into_iter().map(|c| c as f64).collect();
    let chi = chi_square(&observed, &expected, 1, MIN_CLASS_EXPECTED)?;
    Ok((counts, mean, chi))
}

/// Cell-count test of complete spatial randomness: the torus is cut into
/// `cells_per_axis^d` congruent boxes and the histogram of counts is compared with
/// Poisson of the fitted mean by Pearson chi-square (one fitted parameter). Count
/// classes are merged until each expects at least [`MIN_CLASS_EXPECTED`] cells; when
/// that leaves no degree of freedom the grid is coarsened to the next divisor of `N`.
pub fn poisson_pp_test(sites: &[usize], torus: &Torus, cells_per_axis: usize) -> Result<PoissonPpReport> {
    if cells_per_axis == 0 || torus.n % cells_per_axis != 0 {
        return invalid(format!("{cells_per_axis} cells per axis do not divide N = {}", torus.n));
    }
    let set = sorted_unique(sites);
    let mut m = cells_per_axis;
    loop {
        match cell_count_histogram(&set, torus, m) {
            Ok((counts, mean, chi_square)) => {
                let dispersion = if mean > 0.0 && counts.len() > 1 {
                    counts.iter().map(|n| (n - mean) * (n - mean)).sum::<f64>() / (counts.len() - 1) as f64 / mean
                } else {
                    f64::NAN
                };
                return Ok(PoissonPpReport {
                    cells_per_axis: m,
                    cells: counts.len(),
                    points: set.len(),
                    mean,
                    dispersion,
                    chi_square,
                });
            }
            Err(Error::Inconclusive(_)) if m > 1 => {
                m = (1..m).rev().find(|c| torus.n % c == 0).unwrap_or(1);
            }
            Err(e) => return Err(e),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Regime {
    Supercritical,
    Subcritical,
}

#[derive(Clone, Debug, Serialize)]
pub struct ScalingPoint {
    pub n: usize,
    pub mean: f64,
    pub se: f64,
    pub replicas: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct ScalingFit {
    pub alpha: f64,
    pub alpha_star: f64,
    pub theory_slope: f64,
    pub points: Vec<ScalingPoint>,
    pub regime: Regime,
    pub slope: Option<f64>,
    pub ci: Option<(f64, f64)>,
}

/// Regression of `log E[D_K]` on `log N` with a bootstrap interval over replicas.
/// For `alpha >= alpha_*(K)` the means vanish with `N` and no slope is fitted.
pub fn scaling_fit<R: Rng + ?Sized>(
    alpha: f64,
    alpha_star: f64,
    d: usize,
    ns: &[usize],
    counts: &[Vec<f64>],
    resamples: usize,
    rng: &mut R,
) -> Result<ScalingFit> {
    if ns.len() < 3 {
        return invalid("scaling fit needs at least three values of N");
    }
    if ns.len() != counts.len() {
        return Err(Error::LengthMismatch(format!("{} sizes vs {} count lists", ns.len(), counts.len())));
    }
    let points: Vec<ScalingPoint> = ns
        .iter()
        .zip(counts)
        .map(|(&n, c)| {
            let (mean, se) = mean_se(c);
            ScalingPoint { n, mean, se, replicas: c.len() }
        })
        .collect();
    if points.iter().all(|p| p.mean == 0.0) {
        return invalid(format!("zero pattern counts at every N; try alpha below {alpha}"));
    }
    let theory_slope = d as f64 * (1.0 - alpha / alpha_star);
    if alpha >= alpha_star {
        return Ok(ScalingFit {
            alpha,
            alpha_star,
            theory_slope,
            points,
            regime: Regime::Subcritical,
            slope: None,
            ci: None,
        });
    }
    if let Some(p) = points.iter().find(|p| p.mean == 0.0) {
        return invalid(format!("zero mean count at N = {}; increase replicas", p.n));
    }
    let x: Vec<f64> = ns.iter().map(|&n| (n as f64).ln()).collect();
    let fit = |groups: &[Vec<f64>]| -> Option<f64> {
        let y: Option<Vec<f64>> = groups
            .iter()
            .map(|g| {
                let m = g.iter().sum::<f64>() / g.len() as f64;
                (m > 0.0).then(|| m.ln())
            })
            .collect();
        linear_fit(&x, &y?).ok().map(|(_, b)| b)
    };
    let slope = fit(counts);
    let ci = bootstrap_ci(counts, fit, resamples, 0.95, rng);
    Ok(ScalingFit { alpha, alpha_star, theory_slope, points, regime: Regime::Supercritical, slope, ci })
}

/// Pattern counts (summed over `shapes`) of `L^alpha` for independent walk replicas.
pub fn walk_pattern_counts(
    n: usize,
    d: usize,
    alpha: f64,
    shapes: &[FiniteSet],
    replicas: usize,
    seed: u64,
    g0: f64,
) -> Result<Vec<f64>> {
    let torus = Torus::new(n, d);
    (0..replicas)
        .into_par_iter()
        .map(|r| {
            let late = walk_late_sites(&TorusConfig::new(n, d, seed, r as u64)?, alpha, g0)?;
            let mut c = 0;
            for k in shapes {
                c += pattern_count(&late, &torus, k)?;
            }
            Ok(c as f64)
        })
        .collect()
}

/// One named statistic with its Monte Carlo standard error.
#[derive(Clone, Debug, Serialize)]
pub struct StatEntry {
    pub statistic: String,
    pub value: f64,
    pub se: f64,
    pub replicas: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct StatsReport {
    pub command: String,
    pub seed: u64,
    pub config_digest: String,
    pub entries: Vec<StatEntry>,
}

impl StatsReport {
    pub fn new(command: impl Into<String>, seed: u64, config_digest: impl Into<String>) -> Self {
        StatsReport { command: command.into(), seed, config_digest: config_digest.into(), entries: Vec::new() }
    }

    /// Exact quantities are recorded with `se = 0`.
    pub fn push(&mut self, statistic: impl Into<String>, value: f64, se: f64, replicas: usize) {
        self.entries.push(StatEntry { statistic: statistic.into(), value, se, replicas });
    }

    pub fn get(&self, statistic: &str) -> Option<&StatEntry> {
        self.entries.iter().find(|e| e.statistic == statistic)
    }

    /// Long-format CSV: `statistic,value,se,replicas,config_digest`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("statistic,value,se,replicas,config_digest\n");
        for e in &self.entries {
            s.push_str(&format!("{},{},{},{},{}\n", e.statistic, e.value, e.se, e.replicas, self.config_digest));
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::interlacements::Transience;
    use crate::potential::capacity::shapes;

    fn table() -> GreenTable {
        GreenTable::for_radius(3, 13).unwrap()
    }

    fn set(d: usize, pts: &[&[i64]]) -> FiniteSet {
        FiniteSet::from_coords(d, pts).unwrap()
    }

    #[test]
    fn double_points_trivial_cases() {
        let t = Torus::new(5, 3);
        let x = t.index(&[1, 2, 3]);
        let y = t.index(&[1, 2, 4]);
        assert_eq!(double_points(&[x, y], &t), 1);
        assert_eq!(double_points(&[x], &t), 0);
        let all: Vec<usize> = (0..t.volume()).collect();
        assert_eq!(double_points(&all, &t), 3 * 125);
        // Wraparound neighbours.
        assert_eq!(double_points(&[t.index(&[0, 0, 0]), t.index(&[4, 0, 0])], &t), 1);
        assert_eq!(double_points_zd(&set(3, &[&[0, 0, 0], &[0, 0, 1], &[0, 1, 1]])), 2);
    }

    #[test]
    fn pattern_count_trivial_cases() {
        let t = Torus::new(6, 3);
        let s: Vec<usize> = vec![t.index(&[0, 0, 0]), t.index(&[1, 0, 0]), t.index(&[3, 3, 3])];
        let single = FiniteSet::singleton(PointZ::origin(3));
        assert_eq!(pattern_count(&s, &t, &single).unwrap(), 3);
        assert_eq!(pattern_count(&s, &t, &set(3, &[&[0, 0, 0], &[1, 0, 0]])).unwrap(), 1);
        assert_eq!(pattern_count(&s, &t, &set(3, &[&[0, 0, 0], &[0, 1, 0]])).unwrap(), 0);
        assert_eq!(pattern_count_class(&s, &t, &set(3, &[&[0, 0, 0], &[0, 1, 0]])).unwrap(), 1);
        assert!(pattern_count(&s, &t, &set(3, &[&[0, 0, 0], &[6, 0, 0]])).is_err());
    }

    #[test]
    fn bernoulli_field_density_one_and_mean() {
        let t = Torus::new(8, 3);
        let full = bernoulli_field(t.clone(), 1.0, 1).unwrap();
        assert_eq!(full.realize(&[1.0]).unwrap().len(), 512);
        // E|B| = |F| p, checked within 3 SE over seeds.
        let p = 0.05;
        let sizes: Vec<f64> =
            (0..400).map(|s| bernoulli_field(t.clone(), p, s).unwrap().realize(&[p]).unwrap().len() as f64).collect();
        let (m, se) = mean_se(&sizes);
        assert!((m - 512.0 * p).abs() < 3.0 * se, "{m} {se}");
        let b = bernoulli_field(t.clone(), 0.3, 5).unwrap();
        let lo = b.realize(&[0.1]).unwrap();
        let hi = b.realize(&[0.3]).unwrap();
        assert!(lo.iter().all(|x| hi.binary_search(x).is_ok()));
        let empty = build_pattern_bernoulli(t, &[(set(3, &[&[0, 0, 0], &[1, 0, 0]]), 0.0)], 3).unwrap();
        assert!(empty.realize(&[0.0]).unwrap().is_empty());
    }

    #[test]
    fn bernoulli_marks_are_uniform_per_site() {
        // Chi-square of the selection frequency over sites: each site is selected
        // with probability p independently.
        let t = Torus::new(4, 2);
        let p = 0.2;
        let mut hits = vec![0.0; 16];
        let reps = 4000;
        for s in 0..reps {
            for x in bernoulli_field(t.clone(), p, 1000 + s).unwrap().realize(&[p]).unwrap() {
                hits[x] += 1.0;
            }
        }
        let expected = vec![reps as f64 * p; 16];
        assert!(chi_square(&hits, &expected, 0, 5.0).unwrap().p_value > 1e-3);
    }

    #[test]
    fn enumeration_matches_pair_formula_and_classification() {
        let tb = table();
        let g0 = tb.g0();
        let nbr = 1.0 - 1.0 / (2.0 * g0);
        let only = enumerate_patterns(&tb, nbr, None).unwrap();
        assert_eq!(only.len(), 1);
        assert_eq!(only[0].set.len(), 1);

        // Independent oracle: pairs {0, x} with |x|_1 <= 6 and 2/(g0 + g(x)) < 1/(0.58 g0).
        let thr = 1.0 / (g0 * 0.58);
        let mut oracle = std::collections::BTreeSet::new();
        for a in 0..=6i64 {
            for b in 0..=a {
                for c in 0..=b {
                    if a + b + c == 0 || a + b + c > 6 {
                        continue;
                    }
                    let gx = tb.g(&PointZ(vec![a, b, c])).unwrap();
                    if 2.0 / (g0 + gx) < thr {
                        oracle.insert(set(3, &[&[0, 0, 0], &[a, b, c]]).canonical().points().to_vec());
                    }
                }
            }
        }
        let got = enumerate_patterns(&tb, 0.58, None).unwrap();
        let pairs: std::collections::BTreeSet<_> =
            got.iter().filter(|s| s.set.len() == 2).map(|s| s.set.points().to_vec()).collect();
        assert_eq!(got.iter().filter(|s| s.set.len() == 1).count(), 1);
        assert!(got.iter().all(|s| s.set.len() <= 2));
        assert_eq!(pairs.len(), oracle.len());
        assert_eq!(pairs, oracle);
        assert!(enumerate_patterns(&tb, 0.5, None).is_err());
    }

    #[test]
    fn enumeration_at_one_half_has_exactly_the_connected_triples() {
        let tb = table();
        let r_f = neighborhood_radius(64usize.pow(3), 3).unwrap().floor() as i64;
        let got = enumerate_patterns(&tb, 0.5, Some(r_f)).unwrap();
        let triples: Vec<&PatternShape> = got.iter().filter(|s| s.set.len() == 3).collect();
        assert_eq!(triples.len(), 2);
        let k1 = shapes::k1(3).canonical();
        let k2 = shapes::k2(3).canonical();
        assert!(triples.iter().any(|s| s.set == k1) && triples.iter().any(|s| s.set == k2));
        assert!(triples.iter().all(|s| s.set.is_connected()));
        assert!(got.iter().all(|s| s.set.len() <= 3 && s.alpha_star > 0.5));
        // Every pair class within the span cap is present.
        let pairs = got.iter().filter(|s| s.set.len() == 2).count();
        let r = r_f as usize;
        let expected = (0..=r).flat_map(|a| (0..=a).flat_map(move |b| (0..=b).map(move |c| (a, b, c)))).count() - 1;
        assert_eq!(pairs, expected);
        let classes = crate::potential::classify_admissible(3).unwrap();
        for s in &got {
            if let Some(v) = classes.is_admissible(&s.set) {
                assert!(v, "{:?}", s.set);
            }
        }
    }

    #[test]
    fn chen_stein_closed_forms() {
        let tb = table();
        let n = 64;
        let d = 3;
        let r = 5.0;
        let cs = chen_stein_bounds(1.0, 0.01, n, d, r, 0.0, &tb).unwrap();
        let nf = n as f64;
        let spot = nf.powi(3) * (2.0 * r + 1.0).powi(3) * nf.powi(-6);
        assert!((cs.b1[1] - spot).abs() < 1e-12 * spot);
        // b2 at alpha = 1 summed by hand over the same box.
        let card = nf.powi(3);
        let mut b2 = 0.0;
        for a in -5i64..=5 {
            for b in -5i64..=5 {
                for c in -5i64..=5 {
                    if (a, b, c) != (0, 0, 0) {
                        let g = tb.g(&PointZ(vec![a, b, c])).unwrap();
                        b2 += card.powf(-tb.g0() * 2.0 / (tb.g0() + g));
                    }
                }
            }
        }
        assert!((cs.b2[1] - card * b2).abs() < 1e-10 * cs.b2[1]);
        // Two-point terms decrease with distance.
        let far = |k: i64| card.powf(-tb.g0() * 2.0 / (tb.g0() + tb.g(&PointZ(vec![k, 0, 0])).unwrap()));
        assert!(far(7) < far(6) && far(13) < far(7));
        assert!(cs.bound >= 400.0 * (cs.b1[1] + cs.b2[1]));
    }

    #[test]
    fn separation_trivial_cases() {
        let tb = table();
        let t = Torus::new(32, 3);
        assert!(separation_check(&[], &t, 5, 10.0, &tb).unwrap().is_empty());
        let k1: Vec<usize> = shapes::k1(3).points().iter().map(|p| t.index(&p.0)).collect();
        assert!(separation_check(&k1, &t, 5, 10.0, &tb).unwrap().is_empty());
        // A neighbour square has capacity above 2/g(0).
        let sq: Vec<usize> = [[0, 0, 0], [1, 0, 0], [0, 1, 0], [1, 1, 0]].iter().map(|p| t.index(p)).collect();
        assert_eq!(separation_check(&sq, &t, 5, 10.0, &tb).unwrap().len(), 4);
    }

    #[test]
    fn exp_law_null_calibration_and_inconclusive() {
        let mut below = 0;
        for s in 0..200 {
            let mut rng = replica_rng(77, s);
            let xs: Vec<f64> = (0..300).map(|_| -open_unit(&mut rng).ln()).collect();
            if exp1_verdict(&xs, 0).unwrap().verdict == Verdict::Fail {
                below += 1;
            }
        }
        // Binomial(200, 0.01).
        assert!(below <= 8, "{below}");
        assert_eq!(exp1_verdict(&[1.0; 10], 0).unwrap().verdict, Verdict::Inconclusive);
    }

    #[test]
    fn exp_law_pool_excludes_early_points() {
        let tb = table();
        let alpha_star = 1.0 - 1.0 / (2.0 * tb.g0());
        let config = TorusConfig::new(12, 3, 5, 0).unwrap();
        let field = crate::torus::run_until_cover(&config, tb.g0()).unwrap();
        let (vals, _) = exp_law_values(&field, alpha_star, 1).unwrap();
        assert!(vals.iter().all(|&v| v > 0.0));
    }

    #[test]
    fn poisson_pp_null_calibration_and_merging() {
        let t = Torus::new(32, 3);
        let mut fails = 0;
        for s in 0..200u64 {
            let mut rng = replica_rng(91, s);
            let pts: Vec<usize> = (0..600).map(|_| rng.random_range(0..t.volume())).collect();
            let r = poisson_pp_test(&pts, &t, 4).unwrap();
            assert_eq!(r.cells, 64);
            if r.chi_square.p_value < P_THRESHOLD {
                fails += 1;
            }
        }
        // Duplicates are rare; Binomial(200, 0.01) rejections.
        assert!(fails <= 8, "{fails}");
        // Ten points on 512 cells leave no degree of freedom; the grid is coarsened.
        let few: Vec<usize> = (0..10).map(|k| t.index(&[3 * k, 7 * k, 11 * k])).collect();
        assert!(poisson_pp_test(&few, &t, 8).unwrap().cells_per_axis < 8);
        // Clustered input is rejected.
        let mut clustered = Vec::new();
        for k in 0..100 {
            clustered.push(t.index(&[k % 8, (k / 8) % 8, 0]));
        }
        let r = poisson_pp_test(&clustered, &t, 4).unwrap();
        assert!(r.chi_square.p_value < 1e-6 && r.dispersion > 10.0);
    }

    #[test]
    fn scaling_fit_recovers_power_law() {
        let mut rng = replica_rng(5, 0);
        let ns = [16usize, 24, 32, 48];
        let counts: Vec<Vec<f64>> = ns
            .iter()
            .map(|&n| {
                let m = 0.5 * (n as f64).powf(1.5);
                (0..300).map(|_| m * (0.9 + 0.2 * open_unit(&mut rng))).collect()
            })
            .collect();
        let fit = scaling_fit(0.5, 1.0, 3, &ns, &counts, 200, &mut rng).unwrap();
        assert!((fit.slope.unwrap() - 1.5).abs() < 0.02);
        assert!((fit.theory_slope - 1.5).abs() < 1e-15);
        let (lo, hi) = fit.ci.unwrap();
        assert!(lo < 1.5 && 1.5 < hi);
        let sub = scaling_fit(0.75, 0.670269, 3, &ns, &counts, 10, &mut rng).unwrap();
        assert_eq!(sub.regime, Regime::Subcritical);
        assert!(sub.slope.is_none());
        let zeros = vec![vec![0.0; 5]; 4];
        assert!(scaling_fit(0.5, 1.0, 3, &ns, &zeros, 10, &mut rng).is_err());
    }

    #[test]
    fn ri_isolation_estimate_lies_between_brackets() {
        let tb = GreenTable::for_radius(3, 22).unwrap();
        let sampler = RiSampler::new(&tb, 9, 11, Transience::HarmonicReturn).unwrap();
        let k = FiniteSet::singleton(PointZ::origin(3));
        // |F| = 64 gives R_F = log 64, large enough to matter but small enough to fit.
        let est = estimate_pf_alpha_ri(&sampler, &tb, &k, 64, 0.5, 3, 4000, 12).unwrap();
        let b = est.brackets.as_ref().unwrap();
        assert!((b.upper - (64f64).powf(-0.5 * tb.g0() / tb.g0())).abs() < 1e-12);
        assert!(est.p <= b.upper + 3.0 * est.se && est.p >= b.lower - 3.0 * est.se, "{est:?}");
        // Empty neighbourhood ring: the estimate is the exact vacancy law.
        let solo = estimate_pf_alpha_ri(&sampler, &tb, &k, 64, 0.5, 0, 4000, 13).unwrap();
        assert!((solo.p - b.upper).abs() < 3.0 * solo.se, "{solo:?}");
        let never = estimate_pf_alpha_ri(&sampler, &tb, &k, 64, 20.0, 1, 200, 14).unwrap();
        assert_eq!(never.p, 0.0);
    }

    #[test]
    fn pattern_field_pairs_match_placement_rate() {
        // Neighbour-pair shapes (all d images) placed with probability p: the mean number
        // of axis-pair translates in the union is about N^d d p.
        let t = Torus::new(32, 3);
        let p = 2e-4;
        let shapes: Vec<(FiniteSet, f64)> = axis_pairs(3).into_iter().map(|s| (s, p)).collect();
        let counts: Vec<f64> = (0..300)
            .map(|s| {
                let f = build_pattern_bernoulli(t.clone(), &shapes, s).unwrap();
                let sites = f.realize(&[p; 3]).unwrap();
                axis_pairs(3).iter().map(|k| pattern_count(&sites, &t, k).unwrap()).sum::<usize>() as f64
            })
            .collect();
        let (m, se) = mean_se(&counts);
        let expect = 32768.0 * 3.0 * p;
        assert!((m - expect).abs() < 3.0 * se + 0.05 * expect, "{m} {se} {expect}");
    }

    #[test]
    fn stats_report_csv() {
        let mut r = StatsReport::new("phase", 7, "abc");
        r.push("mean_D", 1.5, 0.1, 300);
        assert_eq!(r.to_csv(), "statistic,value,se,replicas,config_digest\nmean_D,1.5,0.1,300,abc\n");
        assert_eq!(r.get("mean_D").unwrap().replicas, 300);
    }
}
