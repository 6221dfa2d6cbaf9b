//! Typed experiments. The subcommands wrap these with configuration and artifact
//! emission; the acceptance suite calls them directly.

use anyhow::{bail, ensure, Context, Result};
use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use latepoints::excursions::{entry_law_distance, m_prime, n_rw, ri_excursions, torus_schedule, Annuli};
use latepoints::interlacements::RiSampler;
use latepoints::late_stats::{
    axis_pairs, bernoulli_field, chen_stein_bounds, chen_stein_radius, double_points, exp1_verdict, exp_law_values,
    poisson_pp_test, scaling_fit, walk_late_sites, walk_pattern_counts, ChenStein, ExpLawReport, ScalingFit,
};
use latepoints::lattice::{FiniteSet, PointZ};
use latepoints::potential::capacity::{capacity, shapes};
use latepoints::potential::green::{green_value, green_value_ext};
use latepoints::potential::{GreenParams, GreenTable};
use latepoints::real::{Ext, ExtCtx, Real};
use latepoints::rng::replica_rng;
use latepoints::slt::{
    check_round_trip, couple_chains, exp_marks, forward_slt, inverse_slt, sample_chain, ChainSpec, Eta,
};
use latepoints::stats::{exp1_cdf, ks_test, mean_se, total_variation, KsResult};
use latepoints::torus::{late_set, run_until_cover, run_walk, time_threshold, u_scale, Torus, TorusConfig};

/// Reference digits of `g(0)`.
pub const G0_DIGITS: [(usize, &str); 2] =
    [(3, "1.516386059151978018156012159681"), (4, "1.239467121848481712678697664859")];

pub fn g0_digits(d: usize) -> Option<&'static str> {
    G0_DIGITS.iter().find(|(k, _)| *k == d).map(|(_, s)| *s)
}

/// Parses a plain decimal literal exactly into extended precision, six digits at a time.
pub fn ext_from_decimal(ctx: &ExtCtx, s: &str) -> Result<Ext> {
    let (int, frac) = s.split_once('.').unwrap_or((s, ""));
    ensure!(!int.is_empty() && int.chars().chain(frac.chars()).all(|c| c.is_ascii_digit()), "not a plain decimal: {s}");
    let mut acc = Ext::from_i64(ctx, int.parse()?);
    let mut scale = Ext::from_i64(ctx, 1);
    for chunk in frac.as_bytes().chunks(6) {
        let width = chunk.len() as u32;
        let step = Ext::from_i64(ctx, 10i64.pow(width));
        let v: i64 = std::str::from_utf8(chunk)?.parse()?;
        acc = acc * step.clone() + Ext::from_i64(ctx, v);
        scale = scale * step;
    }
    Ok(acc / scale)
}

#[derive(Clone, Debug, Serialize)]
pub struct GreenOrigin {
    pub d: usize,
    pub extended: bool,
    pub value: f64,
    /// Decimal expansion at the working precision.
    pub digits: String,
    /// Refinement error estimate.
    pub err: f64,
    pub reference: Option<String>,
    /// `|value - reference|`, evaluated at the working precision.
    pub deviation: Option<f64>,
}

pub fn green_origin(d: usize, params: &GreenParams) -> Result<GreenOrigin> {
    let (value, err) = green_value(&PointZ::origin(d), params)?;
    let reference = g0_digits(d);
    let deviation = reference.map(|r| r.parse::<f64>().map(|v| (value - v).abs())).transpose()?;
    Ok(GreenOrigin {
        d,
        extended: false,
        value,
        digits: format!("{value:.15}"),
        err,
        reference: reference.map(String::from),
        deviation,
    })
}

pub fn green_origin_ext(d: usize, params: &GreenParams, ctx: &ExtCtx) -> Result<GreenOrigin> {
    let (value, err) = green_value_ext(&PointZ::origin(d), params, ctx)?;
    let reference = g0_digits(d);
    let deviation = match reference {
        Some(r) => Some((value.clone() - ext_from_decimal(ctx, r)?).abs().to_f64()),
        None => None,
    };
    Ok(GreenOrigin {
        d,
        extended: true,
        value: value.to_f64(),
        digits: value.to_decimal(32),
        err: err.to_f64(),
        reference: reference.map(String::from),
        deviation,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct Refinement {
    pub d: usize,
    pub base: f64,
    pub refined: f64,
    pub delta: f64,
    pub params: GreenParams,
    pub refined_params: GreenParams,
}

/// `g(0)` at the given parameters and at `h/2, 2M, 2T, 2J`.
pub fn green_refinement(d: usize, params: &GreenParams) -> Result<Refinement> {
    let fine = params.refined();
    let (base, _) = green_value(&PointZ::origin(d), params)?;
    let (refined, _) = green_value(&PointZ::origin(d), &fine)?;
    Ok(Refinement { d, base, refined, delta: (refined - base).abs(), params: params.clone(), refined_params: fine })
}

/// A computed quantity against a reference value.
#[derive(Clone, Debug, Serialize)]
pub struct Target {
    pub name: String,
    pub value: f64,
    pub reference: f64,
    pub tolerance: f64,
    pub deviation: f64,
    pub pass: bool,
}

impl Target {
    pub fn new(name: impl Into<String>, value: f64, reference: f64, tolerance: f64) -> Self {
        let deviation = (value - reference).abs();
        Target { name: name.into(), value, reference, tolerance, deviation, pass: deviation <= tolerance }
    }
}

/// Tables with the default quadrature and radius 3, as used for classification.
pub fn default_table(d: usize) -> Result<GreenTable> {
    Ok(GreenTable::build(d, 3, &GreenParams::default())?)
}

/// Extremal capacities of the reference triples, from tables of dimension 3 and 4.
pub fn capacity_targets(t3: &GreenTable, t4: &GreenTable) -> Result<Vec<Target>> {
    let cap = |k: &FiniteSet, t: &GreenTable| capacity(k, t).map(|c| c.cap);
    let (k1, k2) = (cap(&shapes::k1(3), t3)?, cap(&shapes::k2(3), t3)?);
    let a_min = shapes::a_sets().iter().map(|a| cap(a, t3)).collect::<Result<Vec<_>, _>>()?;
    let a_min = a_min.into_iter().fold(f64::INFINITY, f64::min);
    let (k1_4, k2_4) = (cap(&shapes::k1(4), t4)?, cap(&shapes::k2(4), t4)?);
    Ok(vec![
        Target::new("max cap(K1), cap(K2), d=3", k1.max(k2), 1.271113197749, 1e-8),
        Target::new("min cap(A1..A8), d=3", a_min, 1.335471948364, 1e-8),
        Target::new("min cap(K1), cap(K2), d=4", k1_4.min(k2_4), 1.849398784221, 1e-8),
    ])
}

/// Translate of `k` whose bounding box is centred at the origin (rounding down).
pub fn centred(k: &FiniteSet) -> FiniteSet {
    let pts = k.points();
    let mid = (0..k.dim())
        .map(|j| {
            let lo = pts.iter().map(|p| p.0[j]).min().expect("non-empty");
            let hi = pts.iter().map(|p| p.0[j]).max().expect("non-empty");
            -(lo + hi).div_euclid(2)
        })
        .collect();
    k.translate(&PointZ(mid))
}

#[derive(Clone, Debug, Serialize)]
pub struct VacancyRow {
    pub set: String,
    pub u: f64,
    pub replicas: usize,
    pub vacant: usize,
    pub p_hat: f64,
    pub se: f64,
    /// `exp(-u cap(K))`.
    pub exact: f64,
    /// `(p_hat - exact) / se_exact`, with the binomial SE of the exact probability.
    pub z: f64,
}

/// Monte Carlo `P(K ⊂ vacant set)` at every level in `us` from one layered sample per
/// replica drawn at the largest level.
pub fn ri_vacancy(
    sampler: &RiSampler,
    table: &GreenTable,
    sets: &[(String, FiniteSet)],
    us: &[f64],
    replicas: usize,
    seed: u64,
) -> Result<Vec<VacancyRow>> {
    ensure!(replicas > 0 && !us.is_empty(), "need replicas and levels");
    let u_max = us.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut indices = Vec::with_capacity(sets.len());
    for (name, k) in sets {
        let idx: Option<Vec<usize>> = centred(k).points().iter().map(|p| sampler.box_index(&p.0)).collect();
        indices.push(idx.with_context(|| format!("{name} does not fit in the sampling box"))?);
    }
    let cells = sets.len() * us.len();
    let hits = (0..replicas)
        .into_par_iter()
        .map(|r| -> Result<Vec<usize>> {
            let s = sampler.sample(u_max, &mut replica_rng(seed, r as u64))?;
            let mut v = vec![0usize; cells];
            for (i, idx) in indices.iter().enumerate() {
                for (j, &u) in us.iter().enumerate() {
                    v[i * us.len() + j] = idx.iter().all(|&x| s.is_vacant(x, u)) as usize;
                }
            }
            Ok(v)
        })
        .try_reduce(|| vec![0; cells], |a, b| Ok(a.iter().zip(&b).map(|(x, y)| x + y).collect()))?;
    let mut rows = Vec::with_capacity(cells);
    for (i, (name, k)) in sets.iter().enumerate() {
        let cap = capacity(k, table)?.cap;
        for (j, &u) in us.iter().enumerate() {
            let vacant = hits[i * us.len() + j];
            let n = replicas as f64;
            let p_hat = vacant as f64 / n;
            let exact = (-u * cap).exp();
            let se = (exact * (1.0 - exact) / n).sqrt();
            rows.push(VacancyRow { set: name.clone(), u, replicas, vacant, p_hat, se, exact, z: (p_hat - exact) / se });
        }
    }
    Ok(rows)
}

/// The singleton, the neighbour pair and the straight triple, in dimension `d`.
pub fn vacancy_sets(d: usize) -> Vec<(String, FiniteSet)> {
    vec![
        ("singleton".into(), FiniteSet::singleton(PointZ::origin(d))),
        ("neighbor pair".into(), FiniteSet::new(d, vec![PointZ::origin(d), PointZ::unit(d, 0)]).expect("valid")),
        ("K1".into(), shapes::k1(d)),
    ]
}

#[derive(Clone, Debug, Serialize)]
pub struct RiExcursionStat {
    pub u: f64,
    pub samples: usize,
    /// Sample mean of `N_RI / u`.
    pub mean: f64,
    pub se: f64,
    /// `cap_{B3}(B2)` from the Dirichlet solve.
    pub capacity: f64,
    pub z: f64,
}

pub fn ri_excursion_mean(
    sampler: &RiSampler,
    annuli: &Annuli,
    u: f64,
    samples: usize,
    seed: u64,
) -> Result<RiExcursionStat> {
    let (capacity, _) = annuli.relative_capacity()?;
    let xs = (0..samples)
        .into_par_iter()
        .map(|r| Ok(ri_excursions(sampler, annuli, u, &mut replica_rng(seed, r as u64))?.n_ri() as f64 / u))
        .collect::<Result<Vec<f64>>>()?;
    let (mean, se) = mean_se(&xs);
    Ok(RiExcursionStat { u, samples, mean, se, capacity, z: (mean - capacity) / se })
}

#[derive(Clone, Debug, Serialize)]
pub struct RwExcursionStat {
    pub n: usize,
    pub u: f64,
    pub replicas: usize,
    /// Mean of `N_RW / u`.
    pub mean: f64,
    pub se: f64,
    pub capacity: f64,
    /// Return-gap estimator `N^d / E[R_{k+1} - R_k]`.
    pub m_prime: f64,
    pub ratio_capacity: f64,
    pub ratio_m_prime: f64,
    /// Total variation between entry points and the normalised equilibrium measure.
    pub entry_tv: f64,
    pub returns: usize,
}

/// Torus walk excursions around the origin for `u = um / cap_{B3}(B2)`.
pub fn rw_excursion_mean(annuli: &Annuli, n: usize, um: f64, replicas: usize, seed: u64) -> Result<RwExcursionStat> {
    let d = annuli.dim();
    let (capacity, _) = annuli.relative_capacity()?;
    let u = um / capacity;
    let torus = Torus::new(n, d);
    let vol = torus.volume();
    let steps = time_threshold(u, vol) + 1;
    let center = torus.index(&vec![0; d]);
    let schedules = (0..replicas)
        .into_par_iter()
        .map(|r| Ok(torus_schedule(&TorusConfig::new(n, d, seed, r as u64)?, annuli, center, steps)?))
        .collect::<Result<Vec<_>>>()?;
    let xs: Vec<f64> = schedules.iter().map(|s| n_rw(s, u, vol) as f64 / u).collect();
    let (mean, se) = mean_se(&xs);
    let mp = m_prime(&schedules, vol).context("too few returns for the gap estimator")?;
    let (entry_tv, returns) = entry_law_distance(&schedules, annuli)?;
    Ok(RwExcursionStat {
        n,
        u,
        replicas,
        mean,
        se,
        capacity,
        m_prime: mp,
        ratio_capacity: mean / capacity,
        ratio_m_prime: mean / mp,
        entry_tv,
        returns,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct RoundTrips {
    pub instances: usize,
    pub states: usize,
    pub max_steps: usize,
    pub failures: usize,
    pub first_failure: Option<String>,
}

/// Draws a chain and marks directly, rebuilds the cloud and runs forward SLT on it;
/// the forward run must return the same chain and marks.
pub fn slt_round_trips(states: usize, max_steps: usize, instances: usize, seed: u64) -> Result<RoundTrips> {
    ensure!(max_steps >= 1 && states >= 1, "need at least one state and one step");
    let outcomes = (0..instances)
        .into_par_iter()
        .map(|i| -> Result<Option<String>> {
            let mut rng = replica_rng(seed, i as u64);
            let steps = rng.random_range(1..=max_steps);
            let spec = ChainSpec::random(states, steps, &mut rng);
            let z0 = rng.random_range(0..states);
            let chain = sample_chain(&spec, z0, steps, &mut rng);
            let xi = exp_marks(steps, &mut rng);
            let mut eta = inverse_slt(&spec, &chain, &xi, rng.random())?;
            let run = forward_slt(&spec, &mut eta, z0, steps)?;
            Ok(check_round_trip(&spec, &chain, &xi, &run).err().map(|e| format!("instance {i}: {e}")))
        })
        .collect::<Result<Vec<_>>>()?;
    let failures: Vec<String> = outcomes.into_iter().flatten().collect();
    Ok(RoundTrips {
        instances,
        states,
        max_steps,
        failures: failures.len(),
        first_failure: failures.into_iter().next(),
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct TwoStepLaw {
    pub runs: usize,
    pub z0: usize,
    /// Row-major `P(Z_1 = a, Z_2 = b)`.
    pub empirical: Vec<f64>,
    pub oracle: Vec<f64>,
    pub tv: f64,
    /// KS of `xi_1` over runs against Exp(1).
    pub xi_ks: KsResult,
}

/// Law of `(Z_1, Z_2)` under forward SLT on independent clouds, against the product of
/// the transition matrices.
pub fn slt_two_step(spec: &ChainSpec, z0: usize, runs: usize, seed: u64) -> Result<TwoStepLaw> {
    let n = spec.len();
    let draws = (0..runs)
        .into_par_iter()
        .map(|r| -> Result<(usize, usize, f64)> {
            let mut eta = Eta::poisson(&spec.mu, replica_rng(seed, r as u64).random())?;
            let run = forward_slt(spec, &mut eta, z0, 2)?;
            Ok((run.chain[1], run.chain[2], run.xi[0]))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut empirical = vec![0.0; n * n];
    for &(a, b, _) in &draws {
        empirical[a * n + b] += 1.0 / runs as f64;
    }
    let (p1, p2) = (spec.transition(1), spec.transition(2));
    let oracle: Vec<f64> = (0..n * n).map(|i| p1[z0][i / n] * p2[i / n][i % n]).collect();
    let xi: Vec<f64> = draws.iter().map(|d| d.2).collect();
    Ok(TwoStepLaw {
        runs,
        z0,
        tv: total_variation(&empirical, &oracle),
        empirical,
        oracle,
        xi_ks: ks_test(&xi, exp1_cdf)?,
    })
}

/// Random spec on the reference measure `mu`.
pub fn random_spec_on<R: Rng + ?Sized>(mu: &[f64], steps: usize, rng: &mut R) -> ChainSpec {
    let mut spec = ChainSpec::random(mu.len(), steps, rng);
    spec.mu = mu.to_vec();
    for g in &mut spec.densities {
        for row in g.iter_mut() {
            let s: f64 = row.iter().zip(mu).map(|(a, m)| a * m).sum();
            row.iter_mut().for_each(|v| *v /= s);
        }
    }
    spec
}

#[derive(Clone, Debug, Serialize)]
pub struct CouplingStudy {
    pub instances: usize,
    pub states: usize,
    pub steps: usize,
    pub triples: usize,
    /// Triples where the surface sandwich held.
    pub sandwiches: usize,
    pub violations: usize,
}

/// Couples a second chain with independent densities to a realised chain through the
/// rebuilt cloud and checks range inclusion on every sandwiched triple.
pub fn slt_coupling(states: usize, steps: usize, instances: usize, seed: u64) -> Result<CouplingStudy> {
    let per = (0..instances)
        .into_par_iter()
        .map(|i| -> Result<(usize, usize, usize)> {
            let mut rng = replica_rng(seed, i as u64);
            let spec = ChainSpec::random(states, steps, &mut rng);
            let tilde = random_spec_on(&spec.mu, steps, &mut rng);
            let z0 = rng.random_range(0..states);
            let chain = sample_chain(&spec, z0, steps, &mut rng);
            let xi = exp_marks(steps, &mut rng);
            let zt = rng.random_range(0..states);
            let rep = couple_chains(&spec, &chain, &xi, rng.random(), &tilde, zt, None)?;
            Ok((rep.checks.len(), rep.checks.iter().filter(|c| c.sandwich).count(), rep.violations))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CouplingStudy {
        instances,
        states,
        steps,
        triples: per.iter().map(|p| p.0).sum(),
        sandwiches: per.iter().map(|p| p.1).sum(),
        violations: per.iter().map(|p| p.2).sum(),
    })
}

/// Double-point scaling: one fit per level over the grid of torus sides.
pub fn phase_study(
    alphas: &[f64],
    ns: &[usize],
    replicas: usize,
    seed: u64,
    table: &GreenTable,
) -> Result<Vec<ScalingFit>> {
    let d = table.dim();
    let g0 = table.g0();
    let alpha_star = 1.0 / (g0 * capacity(&axis_pairs(d)[0], table)?.cap);
    let shapes = axis_pairs(d);
    let mut fits = Vec::with_capacity(alphas.len());
    for (i, &alpha) in alphas.iter().enumerate() {
        let counts = ns
            .iter()
            .map(|&n| Ok(walk_pattern_counts(n, d, alpha, &shapes, replicas, seed, g0)?))
            .collect::<Result<Vec<_>>>()?;
        let mut rng = replica_rng(seed, u64::MAX - i as u64);
        fits.push(scaling_fit(alpha, alpha_star, d, ns, &counts, 1000, &mut rng)?);
    }
    Ok(fits)
}

/// One panel of the figure: plotted sites and whether each has a neighbour in the set.
#[derive(Clone, Debug, Serialize)]
pub struct Panel {
    pub sites: Vec<usize>,
    pub red: Vec<bool>,
    pub double_points: usize,
}

impl Panel {
    pub fn new(mut sites: Vec<usize>, torus: &Torus) -> Self {
        sites.sort_unstable();
        sites.dedup();
        let red = sites
            .iter()
            .map(|&x| (0..2 * torus.d).any(|k| sites.binary_search(&torus.neighbor(x, k)).is_ok()))
            .collect();
        let double_points = double_points(&sites, torus);
        Panel { sites, red, double_points }
    }

    pub fn red_count(&self) -> usize {
        self.red.iter().filter(|&&r| r).count()
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Figure1 {
    pub n: usize,
    pub d: usize,
    pub alpha: f64,
    pub seed: u64,
    /// Bernoulli density `N^{-alpha d}`.
    pub density: f64,
    pub late: Panel,
    pub bernoulli: Panel,
}

/// Salt separating the Bernoulli stream from the walk stream of the same seed.
const BERNOULLI_SALT: u64 = 0x9e37_79b9_7f4a_7c15;

pub fn figure1(n: usize, d: usize, alpha: f64, seed: u64, g0: f64) -> Result<Figure1> {
    let config = TorusConfig::new(n, d, seed, 0)?;
    let torus = config.torus();
    let late = Panel::new(walk_late_sites(&config, alpha, g0)?, &torus);
    let density = (n as f64).powf(-alpha * d as f64);
    let field = bernoulli_field(torus.clone(), density, seed ^ BERNOULLI_SALT)?;
    let bernoulli = Panel::new(field.realize(&[density])?, &torus);
    Ok(Figure1 { n, d, alpha, seed, density, late, bernoulli })
}

#[derive(Clone, Debug, Serialize)]
pub struct ExpLawStudy {
    pub n: usize,
    pub seeds: usize,
    pub radius: i64,
    pub alpha_star: f64,
    pub mean: f64,
    pub se: f64,
    pub report: ExpLawReport,
}

/// Pools `(alpha_x - alpha_*) d log N` over isolated late points of `seeds` walks run to cover.
pub fn exp_law_study(
    n: usize,
    d: usize,
    seeds: usize,
    radius: i64,
    seed: u64,
    table: &GreenTable,
) -> Result<ExpLawStudy> {
    let g0 = table.g0();
    let alpha_star = 1.0 / (g0 * capacity(&axis_pairs(d)[0], table)?.cap);
    let per = (0..seeds)
        .into_par_iter()
        .map(|r| -> Result<(Vec<f64>, usize)> {
            let field = run_until_cover(&TorusConfig::new(n, d, seed, r as u64)?, g0)?;
            Ok(exp_law_values(&field, alpha_star, radius)?)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut pool = Vec::new();
    let mut excluded = 0;
    for (v, e) in per {
        pool.extend(v);
        excluded += e;
    }
    let (mean, se) = mean_se(&pool);
    Ok(ExpLawStudy { n, seeds, radius, alpha_star, mean, se, report: exp1_verdict(&pool, excluded)? })
}

#[derive(Clone, Debug, Serialize)]
pub struct NullCalibration {
    pub pools: usize,
    pub pool_size: usize,
    pub level: f64,
    pub rejections: usize,
    /// `level + 3 sqrt(level (1 - level) / pools)`.
    pub max_rate: f64,
    pub pass: bool,
}

/// Rejection rate of the pooled KS test on exact Exp(1) samples of the given size.
pub fn exp_null_calibration(pool_size: usize, pools: usize, seed: u64) -> Result<NullCalibration> {
    use rand_distr::{Distribution, Exp1};
    ensure!(pools > 0 && pool_size > 0, "empty calibration");
    let level = 0.01;
    let rejections = (0..pools)
        .into_par_iter()
        .map(|i| -> Result<usize> {
            let mut rng = replica_rng(seed, i as u64);
            let xs: Vec<f64> = (0..pool_size).map(|_| Exp1.sample(&mut rng)).collect();
            let r = exp1_verdict(&xs, 0)?;
            Ok((r.ks.map(|k| k.p_value).unwrap_or(1.0) <= level) as usize)
        })
        .sum::<Result<usize>>()?;
    let max_rate = level + 3.0 * (level * (1.0 - level) / pools as f64).sqrt();
    Ok(NullCalibration {
        pools,
        pool_size,
        level,
        rejections,
        max_rate,
        pass: (rejections as f64 / pools as f64) <= max_rate,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct PoissonRow {
    pub replica: usize,
    pub alpha: f64,
    pub points: usize,
    pub cells_per_axis: usize,
    pub dispersion: f64,
    pub p_value: f64,
}

/// Cell-count tests of the late sets at each level, one walk per replica run to the
/// largest threshold.
pub fn poisson_study(
    n: usize,
    d: usize,
    alphas: &[f64],
    replicas: usize,
    cells_per_axis: usize,
    seed: u64,
    g0: f64,
) -> Result<Vec<PoissonRow>> {
    let top = alphas.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    ensure!(top.is_finite(), "no levels");
    let torus = Torus::new(n, d);
    let horizon = time_threshold(u_scale(top, torus.volume(), g0), torus.volume());
    let rows = (0..replicas)
        .into_par_iter()
        .map(|r| -> Result<Vec<PoissonRow>> {
            let (_, field) = run_walk(&TorusConfig::new(n, d, seed, r as u64)?, horizon, g0, false)?;
            alphas
                .iter()
                .map(|&alpha| {
                    let late = late_set(&field, alpha, None)?;
                    let rep = poisson_pp_test(&late.members, &torus, cells_per_axis)?;
                    Ok(PoissonRow {
                        replica: r,
                        alpha,
                        points: rep.points,
                        cells_per_axis: rep.cells_per_axis,
                        dispersion: rep.dispersion,
                        p_value: rep.chi_square.p_value,
                    })
                })
                .collect()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(rows.into_iter().flatten().collect())
}

/// Chen-Stein bounds with `R` chosen at `lambda = epsilon`, i.e. `R = R_F`.
pub fn chen_stein_decay(alpha: f64, epsilon: f64, ns: &[usize], table: &GreenTable) -> Result<Vec<ChenStein>> {
    let d = table.dim();
    if ns.is_empty() {
        bail!("no torus sides given");
    }
    ns.iter()
        .map(|&n| {
            let radius = chen_stein_radius(epsilon, epsilon, n.pow(d as u32), d)?;
            Ok(chen_stein_bounds(alpha, epsilon, n, d, radius, 0.0, table)?)
        })
        .collect()
}
