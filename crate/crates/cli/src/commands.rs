//! Subcommands. Each one merges `--config` into its flags, stamps a digest and
//! returns whether its checks passed.

use std::path::PathBuf;

use anyhow::{bail, ensure, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use latepoints::excursions::{torus_schedule, Annuli};
use latepoints::interlacements::{RiSampler, Transience};
use latepoints::late_stats::{
    axis_pairs, chen_stein_bounds, chen_stein_radius, double_points, neighborhood_radius, poisson_pp_test,
    walk_late_sites, Regime, StatsReport,
};
use latepoints::lattice::{FiniteSet, PointZ};
use latepoints::potential::capacity::{capacity, capacity_ext};
use latepoints::potential::classify::classify_with_table;
use latepoints::potential::{GreenParams, GreenTable};
use latepoints::real::{ExtCtx, Real};
use latepoints::rng::replica_rng;
use latepoints::slt::ChainSpec;
use latepoints::stats::mean_se;
use latepoints::torus::{
    late_set, late_set_csv, run_until_cover, run_walk, time_threshold, u_scale, Torus, TorusConfig,
};

use crate::artifacts::{config_digest, Artifacts};
use crate::experiments as ex;
use crate::svg::{figure1_svg, View};

/// Environment variable read when `--jobs` is absent.
pub const THREADS_ENV: &str = "LATEPOINTS_THREADS";

#[derive(Debug, Parser)]
#[command(name = "latepoints", version, about = "Late points of random walk on the discrete torus")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Lattice Green function at the origin, optionally a table of values.
    Green(GreenArgs),
    /// Capacities and equilibrium measures of finite sets.
    Cap(CapArgs),
    /// Admissible-set classification by capacity margins.
    Classify(ClassifyArgs),
    /// Torus walk late sets.
    Walk(WalkArgs),
    /// Random interlacement samples and vacancy checks.
    Ri(RiArgs),
    /// Late-set statistics: pattern counts, cell-count test, Chen-Stein bounds.
    Latepoints(LatepointsArgs),
    /// Double-point scaling across torus sides and levels.
    Phase(PhaseArgs),
    /// Late set against a matched Bernoulli field, as SVG and CSV.
    Figure1(Figure1Args),
    /// Soft local time round trips, two-step law and coupling checks.
    SltDemo(SltArgs),
    /// Excursion counts across an annulus for the walk and for interlacements.
    Excursions(ExcursionArgs),
    /// Exponential law of rescaled hitting levels of isolated late points.
    ExpLaw(ExpLawArgs),
}

/// Flags shared by every subcommand. Only `seed` enters the digest.
#[derive(Clone, Debug, Args, Serialize, Deserialize)]
pub struct Common {
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Worker threads; defaults to LATEPOINTS_THREADS, then the number of cores.
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Exit with status 2 when a check fails.
    #[arg(long)]
    pub check: bool,
    /// JSON object whose keys override the flags.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

const NON_DIGEST_KEYS: [&str; 4] = ["jobs", "out", "check", "config"];

/// Applies `--config`, sets up the thread pool and the artifact directory.
fn prepare<T>(name: &str, args: &T, common: impl Fn(&T) -> &Common) -> Result<(T, Artifacts)>
where
    T: Serialize + DeserializeOwned,
{
    let mut value = serde_json::to_value(args)?;
    if let Some(path) = &common(args).config {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let over: Value = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        let Value::Object(over) = over else { bail!("{} must hold a JSON object", path.display()) };
        let obj = value.as_object_mut().expect("arguments serialise to an object");
        for (k, v) in over {
            ensure!(obj.contains_key(&k) || k == "params", "unknown configuration key {k:?} for {name}");
            obj.insert(k, v);
        }
    }
    let merged: T = serde_json::from_value(value.clone()).context("configuration does not match the flags")?;
    let c = common(&merged);
    let threads = match c.jobs {
        Some(j) => Some(j),
        None => std::env::var(THREADS_ENV).ok().map(|s| s.parse()).transpose().context(THREADS_ENV)?,
    };
    if let Some(t) = threads {
        // A second call in the same process keeps the first pool.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(t.max(1)).build_global();
    }
    let obj = value.as_object_mut().expect("object");
    for k in NON_DIGEST_KEYS {
        obj.remove(k);
    }
    let digest = config_digest(name, &value);
    let artifacts = Artifacts::new(&c.out, digest, c.seed)?;
    Ok((merged, artifacts))
}

fn verdict(ok: bool) -> &'static str {
    if ok {
        "PASS"
    } else {
        "FAIL"
    }
}

/// Runs a subcommand; `Ok(false)` means a gated check failed.
pub fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Green(a) => green(a),
        Command::Cap(a) => cap(a),
        Command::Classify(a) => classify(a),
        Command::Walk(a) => walk(a),
        Command::Ri(a) => ri(a),
        Command::Latepoints(a) => latepoints(a),
        Command::Phase(a) => phase(a),
        Command::Figure1(a) => figure1(a),
        Command::SltDemo(a) => slt_demo(a),
        Command::Excursions(a) => excursions(a),
        Command::ExpLaw(a) => exp_law(a),
    }
}

#[derive(Clone, Debug, Args, Serialize, Deserialize)]
pub struct GreenArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub common: Common,
    #[arg(long, default_value_t = 3)]
    pub d: usize,
    /// Also export the table of `g(x)` for `|x|_inf <= radius`.
    #[arg(long, default_value_t = 0)]
    pub radius: u32,
    /// Compare with the refined quadrature and report the difference.
    #[arg(long)]
    pub refine: bool,
    /// 192-bit arithmetic instead of double precision.
    #[arg(long)]
    pub extended: bool,
    /// Evaluate dimensions other than 3 and 4 (values only, no guarantees).
    #[arg(long)]
    pub allow_any_d: bool,
    /// Quadrature parameters; settable through `--config` only.
    #[arg(skip)]
    #[serde(default)]
    pub params: Option<GreenParams>,
}

fn green(a: GreenArgs) -> Result<bool> {
    let (a, out) = prepare("green", &a, |a| &a.common)?;
    if !(3..=4).contains(&a.d) {
        ensure!(
            a.allow_any_d,
            "d = {} is outside the supported dimensions 3 and 4; pass --allow-any-d for plain values",
            a.d
        );
        eprintln!("warning: d = {} is unsupported; values carry no accuracy guarantee", a.d);
    }
    let params = match &a.params {
        Some(p) => p.clone(),
        None if a.radius > 3 => GreenParams::for_radius(a.radius)?,
        None => GreenParams::default(),
    };
    let origin = if a.extended {
        ex::green_origin_ext(a.d, &params, &ExtCtx::default())?
    } else {
        ex::green_origin(a.d, &params)?
    };
    let tol = if a.extended { 1e-25 } else { 1e-9 };
    let mut ok = origin.deviation.is_none_or(|dev| dev <= tol);
    println!("g(0)={:.12}", origin.value);
    if a.extended {
        println!("digits={}", origin.digits);
    }
    if let Some(dev) = origin.deviation {
        println!("deviation from reference {dev:.3e} (tolerance {tol:e}): {}", verdict(dev <= tol));
    }
    let refinement = if a.refine {
        let r = ex::green_refinement(a.d, &params)?;
        println!("refined g(0)={:.15} delta={:.3e}", r.refined, r.delta);
        Some(r)
    } else {
        None
    };
    if a.radius > 0 {
        let table = GreenTable::build(a.d, a.radius, &params)?;
        let invariants = table.check_invariants();
        if let Err(e) = &invariants {
            eprintln!("table invariant violated: {e}");
        }
        ok &= invariants.is_ok();
        out.stamped("green_table.csv", &table.to_csv())?;
    }
    out.json("green.json", &serde_json::json!({ "origin": origin, "refinement": refinement, "params": params }))?;
    Ok(ok || !a.common.check)
}

#[derive(Clone, Debug, Args, Serialize, Deserialize)]
pub struct CapArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub common: Common,
    #[arg(long, default_value_t = 3)]
    pub d: usize,
    /// Set as a JSON list of points, e.g. `[[0,0,0],[1,0,0]]`; repeatable. Without it
    /// the reference capacities are computed and checked.
    #[arg(long = "set")]
    pub sets: Vec<String>,
    /// Also solve in 192-bit arithmetic.
    #[arg(long)]
    pub extended: bool,
}

fn parse_set(d: usize, text: &str) -> Result<FiniteSet> {
    let pts: Vec<Vec<i64>> = serde_json::from_str(text).with_context(|| format!("set {text:?}"))?;
    Ok(FiniteSet::new(d, pts.into_iter().map(PointZ).collect())?)
}

fn cap(a: CapArgs) -> Result<bool> {
    let (a, out) = prepare("cap", &a, |a| &a.common)?;
    if a.sets.is_empty() {
        let targets = ex::capacity_targets(&ex::default_table(3)?, &ex::default_table(4)?)?;
        for t in &targets {
            println!("{}: {:.12} (reference {:.12}) {}", t.name, t.value, t.reference, verdict(t.pass));
        }
        let ok = targets.iter().all(|t| t.pass);
        out.json("cap.json", &serde_json::json!({ "targets": targets }))?;
        return Ok(ok || !a.common.check);
    }
    let mut reports = Vec::new();
    for text in &a.sets {
        let k = parse_set(a.d, text)?;
        let reach = k.points().iter().flat_map(|p| k.points().iter().map(move |q| p.sub(q).linf())).max().unwrap_or(0);
        let table = GreenTable::for_radius(a.d, (reach as u32).max(1))?;
        let c = capacity(&k, &table)?;
        println!("{text}: cap={:.12} err={:.1e} alpha_*={:.9} admissible={}", c.cap, c.err, c.alpha_star, c.admissible);
        let ext = if a.extended {
            let (v, err) = capacity_ext(&k, table.params(), &ExtCtx::default())?;
            println!("  extended cap={} err={:.1e}", v.to_decimal(30), err.to_f64());
            Some(v.to_decimal(30))
        } else {
            None
        };
        reports.push(serde_json::json!({ "capacity": c.report(), "extended": ext }));
    }
    out.json("cap.json", &serde_json::json!({ "sets": reports }))?;
    Ok(true)
}

#[derive(Clone, Debug, Args, Serialize, Deserialize)]
pub struct ClassifyArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub common: Common,
    #[arg(long, default_value_t = 3)]
    pub d: usize,
    /// Smallest acceptable distance between a capacity and the threshold `2/g(0)`.
    #[arg(long, default_value_t = 0.015)]
    pub min_margin: f64,
}

fn classify(a: ClassifyArgs) -> Result<bool> {
    let (a, out) = prepare("classify", &a, |a| &a.common)?;
    let table = ex::default_table(a.d.min(4))?;
    let c = match classify_with_table(a.d, &table) {
        Ok(c) => c,
        Err(e @ latepoints::Error::InsufficientPrecision { .. }) => {
            eprintln!("{e}");
            return Ok(!a.common.check);
        }
        Err(e) => return Err(e.into()),
    };
    for k in &c.comparisons {
        println!("{:>3}: cap={:.12} margin={:.5} admissible={}", k.name, k.cap, k.margin, k.admissible);
    }
    let expected_triples = a.d == 3;
    let ok = c.min_margin >= a.min_margin
        && c.connected_triples_admissible == expected_triples
        && c.larger_sets_inadmissible;
    println!("{}; min margin {:.5}: {}", c.summary, c.min_margin, verdict(ok));
    out.json("classify.json", &c)?;
    Ok(ok || !a.common.check)
}

#[derive(Clone, Debug, Args, Serialize, Deserialize)]
pub struct WalkArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub common: Common,
    #[arg(long, default_value_t = 32)]
    pub n: usize,
    #[arg(long, default_value_t = 3)]
    pub d: usize,
    #[arg(long, value_delimiter = ',', default_value = "0.6")]
    pub alpha: Vec<f64>,
    /// Run until every site is visited and report the cover time.
    #[arg(long)]
    pub cover: bool,
    /// Also write the first hitting times as little-endian u64 with a JSON sidecar.
    #[arg(long)]
    pub dump_field: bool,
}

fn walk(a: WalkArgs) -> Result<bool> {
    let (a, out) = prepare("walk", &a, |a| &a.common)?;
    ensure!(!a.alpha.is_empty(), "no levels given");
    let g0 = ex::default_table(a.d)?.g0();
    let config = TorusConfig::new(a.n, a.d, a.common.seed, 0)?;
    let torus = config.torus();
    let field = if a.cover {
        run_until_cover(&config, g0)?
    } else {
        let top = a.alpha.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        run_walk(&config, time_threshold(u_scale(top, torus.volume(), g0), torus.volume()), g0, false)?.1
    };
    let mut report = StatsReport::new("walk", a.common.seed, out.digest.clone());
    if let Some(c) = field.cover_time() {
        println!("cover time {c}");
        report.push("cover_time", c as f64, f64::NAN, 1);
    }
    for &alpha in &a.alpha {
        let late = late_set(&field, alpha, None)?;
        let dp = double_points(&late.members, &torus);
        println!("alpha={alpha}: |L|={} D={dp}", late.members.len());
        report.push(format!("late_size[alpha={alpha}]"), late.members.len() as f64, f64::NAN, 1);
        report.push(format!("double_points[alpha={alpha}]"), dp as f64, f64::NAN, 1);
        out.text(&format!("late_{alpha}.csv"), &late_set_csv(&late, &torus, a.common.seed, &out.digest))?;
    }
    if a.dump_field {
        std::fs::write(out.dir.join("first_hit.bin"), field.to_le_bytes())?;
        out.json("first_hit.json", &field.sidecar_json(a.common.seed))?;
    }
    out.stamped("walk_stats.csv", &report.to_csv())?;
    out.json("walk_stats.json", &report)?;
    Ok(true)
}

#[derive(Clone, Debug, Args, Serialize, Deserialize)]
pub struct RiArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub common: Common,
    #[arg(long, default_value_t = 3)]
    pub d: usize,
    /// Side of the sampling box.
    #[arg(long = "box", default_value_t = 5)]
    pub box_side: i64,
    /// Side of the box where trajectories are started.
    #[arg(long, default_value_t = 9)]
    pub trunc: i64,
    /// Levels at which vacancy is checked; samples are drawn at the largest.
    #[arg(long, value_delimiter = ',', default_value = "0.5,1,2")]
    pub u: Vec<f64>,
    #[arg(long, default_value_t = 10_000)]
    pub replicas: usize,
}

fn ri(a: RiArgs) -> Result<bool> {
    let (a, out) = prepare("ri", &a, |a| &a.common)?;
    ensure!(!a.u.is_empty(), "no levels given");
    let table = GreenTable::for_radius(a.d, (a.trunc + 1) as u32)?;
    let sampler = RiSampler::new(&table, a.box_side, a.trunc, Transience::HarmonicReturn)?;
    let u_max = a.u.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let first = sampler.sample(u_max, &mut replica_rng(a.common.seed, 0))?;
    out.json("ri_summary.json", &first.summary_json(&sampler))?;
    out.stamped("ri_local_times.csv", &first.local_times_csv(&sampler))?;
    let rows = ex::ri_vacancy(&sampler, &table, &ex::vacancy_sets(a.d), &a.u, a.replicas, a.common.seed)?;
    let mut report = StatsReport::new("ri", a.common.seed, out.digest.clone());
    let mut ok = true;
    for r in &rows {
        let pass = r.z.abs() <= 3.0;
        ok &= pass;
        println!("{} u={}: p={:.5} exact={:.5} z={:+.2} {}", r.set, r.u, r.p_hat, r.exact, r.z, verdict(pass));
        report.push(format!("vacancy[{},u={}]", r.set, r.u), r.p_hat, r.se, r.replicas);
    }
    out.stamped("ri_stats.csv", &report.to_csv())?;
    out.json("ri_stats.json", &serde_json::json!({ "report": report, "rows": rows }))?;
    Ok(ok)
}

#[derive(Clone, Debug, Args, Serialize, Deserialize)]
pub struct LatepointsArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub common: Common,
    #[arg(long, default_value_t = 32)]
    pub n: usize,
    #[arg(long, default_value_t = 3)]
    pub d: usize,
    #[arg(long, default_value_t = 0.6)]
    pub alpha: f64,
    #[arg(long, default_value_t = 20)]
    pub replicas: usize,
    /// Cells per axis of the count test (coarsened when classes run out).
    #[arg(long, default_value_t = 8)]
    pub cells: usize,
    /// Sprinkling width for the Chen-Stein bound.
    #[arg(long, default_value_t = 0.01)]
    pub epsilon: f64,
}

fn latepoints(a: LatepointsArgs) -> Result<bool> {
    let (a, out) = prepare("latepoints", &a, |a| &a.common)?;
    let table = ex::default_table(a.d)?;
    let g0 = table.g0();
    let torus = Torus::new(a.n, a.d);
    let shapes = axis_pairs(a.d);
    let per = (0..a.replicas)
        .map(|r| -> Result<(f64, f64, f64)> {
            let late = walk_late_sites(&TorusConfig::new(a.n, a.d, a.common.seed, r as u64)?, a.alpha, g0)?;
            let pp = poisson_pp_test(&late, &torus, a.cells)?;
            Ok((late.len() as f64, double_points(&late, &torus) as f64, pp.chi_square.p_value))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut report = StatsReport::new("latepoints", a.common.seed, out.digest.clone());
    let (m, se) = mean_se(&per.iter().map(|p| p.0).collect::<Vec<_>>());
    report.push("late_size", m, se, a.replicas);
    let (m, se) = mean_se(&per.iter().map(|p| p.1).collect::<Vec<_>>());
    report.push("double_points", m, se, a.replicas);
    let pass = per.iter().filter(|p| p.2 > 0.01).count();
    report.push("poisson_pass_fraction", pass as f64 / a.replicas as f64, f64::NAN, a.replicas);
    let vol = torus.volume();
    let r_f = neighborhood_radius(vol, a.d)?;
    let cs = chen_stein_bounds(
        a.alpha,
        a.epsilon,
        a.n,
        a.d,
        chen_stein_radius(a.epsilon, a.epsilon, vol, a.d)?,
        0.0,
        &table,
    )?;
    report.push("neighborhood_radius", r_f, f64::NAN, 1);
    report.push("chen_stein_bound", cs.bound, f64::NAN, 1);
    report.push("alpha_star_pair", 1.0 / (g0 * capacity(&shapes[0], &table)?.cap), f64::NAN, 1);
    for e in &report.entries {
        println!("{} = {:.6} (se {:.2e}, {} replicas)", e.statistic, e.value, e.se, e.replicas);
    }
    out.stamped("latepoints_stats.csv", &report.to_csv())?;
    out.json("latepoints_stats.json", &report)?;
    Ok(true)
}

#[derive(Clone, Debug, Args, Serialize, Deserialize)]
pub struct PhaseArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub common: Common,
    #[arg(long, value_delimiter = ',', default_value = "0.5,0.6,0.75")]
    pub alpha: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "16,24,32,48")]
    pub n: Vec<usize>,
    #[arg(long, default_value_t = 300)]
    pub replicas: usize,
    /// Allowed distance between the fitted and the limiting slope.
    #[arg(long, default_value_t = 0.3)]
    pub slope_tolerance: f64,
}

fn phase(a: PhaseArgs) -> Result<bool> {
    let (a, out) = prepare("phase", &a, |a| &a.common)?;
    let table = ex::default_table(3)?;
    let fits = ex::phase_study(&a.alpha, &a.n, a.replicas, a.common.seed, &table)?;
    let mut rows = Vec::new();
    let mut ok = true;
    for f in &fits {
        for p in &f.points {
            rows.push(vec![
                f.alpha.to_string(),
                p.n.to_string(),
                p.mean.to_string(),
                p.se.to_string(),
                p.replicas.to_string(),
            ]);
        }
        let pass = match f.regime {
            Regime::Supercritical => f.slope.is_some_and(|s| (s - f.theory_slope).abs() <= a.slope_tolerance),
            Regime::Subcritical => {
                let last = f.points.last().expect("at least three sides");
                last.mean < 0.5 && f.points.windows(2).all(|w| w[1].mean < w[0].mean)
            }
        };
        ok &= pass;
        println!(
            "alpha={} {:?}: slope={} theory={:.3} {}",
            f.alpha,
            f.regime,
            f.slope.map_or("-".into(), |s| format!("{s:.3}")),
            f.theory_slope,
            verdict(pass)
        );
    }
    out.csv("phase.csv", &["alpha", "N", "mean_D", "se", "replicas"], &rows)?;
    out.json("phase.json", &serde_json::json!({ "fits": fits }))?;
    Ok(ok || !a.common.check)
}

#[derive(Clone, Debug, Args, Serialize, Deserialize)]
pub struct Figure1Args {
    #[command(flatten)]
    #[serde(flatten)]
    pub common: Common,
    #[arg(long, default_value_t = 400)]
    pub n: usize,
    #[arg(long, default_value_t = 3)]
    pub d: usize,
    #[arg(long, default_value_t = 0.6)]
    pub alpha: f64,
    #[arg(long, value_enum, default_value = "projection")]
    pub view: View,
    /// Last coordinate shown by the slice view.
    #[arg(long, default_value_t = 0)]
    pub slice: i64,
    /// Number of consecutive seeds, starting at `--seed`; the first is drawn.
    #[arg(long, default_value_t = 1)]
    pub seeds: u64,
}

fn figure1(a: Figure1Args) -> Result<bool> {
    let (a, out) = prepare("figure1", &a, |a| &a.common)?;
    ensure!(a.seeds >= 1, "need at least one seed");
    let g0 = ex::default_table(a.d)?.g0();
    let torus = Torus::new(a.n, a.d);
    let mut summary = Vec::new();
    let (mut late_ok, mut bern_ok) = (0, 0);
    for s in a.common.seed..a.common.seed + a.seeds {
        let fig = ex::figure1(a.n, a.d, a.alpha, s, g0)?;
        late_ok += (fig.late.double_points >= 1) as u64;
        bern_ok += (fig.bernoulli.double_points == 0) as u64;
        println!(
            "seed {s}: |L|={} D(L)={} |B|={} D(B)={}",
            fig.late.sites.len(),
            fig.late.double_points,
            fig.bernoulli.sites.len(),
            fig.bernoulli.double_points
        );
        summary.push(vec![
            s.to_string(),
            fig.late.sites.len().to_string(),
            fig.late.double_points.to_string(),
            fig.bernoulli.sites.len().to_string(),
            fig.bernoulli.double_points.to_string(),
        ]);
        if s == a.common.seed {
            out.svg("figure1.svg", &figure1_svg(&fig, a.view, a.slice, &out.digest, out.seed))?;
            let mut rows = Vec::new();
            for (name, p) in [("late", &fig.late), ("bernoulli", &fig.bernoulli)] {
                for (&x, &red) in p.sites.iter().zip(&p.red) {
                    let mut row = vec![name.to_string()];
                    row.extend(torus.coords(x).iter().map(|c| c.to_string()));
                    row.push((red as u8).to_string());
                    rows.push(row);
                }
            }
            let mut header = vec!["panel".to_string()];
            header.extend((0..a.d).map(|k| format!("x{k}")));
            header.push("red".into());
            let header: Vec<&str> = header.iter().map(String::as_str).collect();
            out.csv("figure1_sites.csv", &header, &rows)?;
        }
    }
    out.csv("figure1_seeds.csv", &["seed", "late_size", "late_D", "bernoulli_size", "bernoulli_D"], &summary)?;
    let need = (0.8 * a.seeds as f64).ceil() as u64;
    let ok = late_ok >= need && bern_ok >= need;
    println!("D(L) >= 1 in {late_ok}/{}, D(B) = 0 in {bern_ok}/{}: {}", a.seeds, a.seeds, verdict(ok));
    Ok(ok || !a.common.check)
}

#[derive(Clone, Debug, Args, Serialize, Deserialize)]
pub struct SltArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub common: Common,
    #[arg(long, default_value_t = 5)]
    pub states: usize,
    #[arg(long, default_value_t = 50)]
    pub max_steps: usize,
    #[arg(long, default_value_t = 10_000)]
    pub instances: usize,
    /// Forward runs for the two-step law.
    #[arg(long, default_value_t = 100_000)]
    pub runs: usize,
    /// Chain specification (JSON) for the two-step law; random when absent.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long, default_value_t = 10_000)]
    pub coupling_instances: usize,
    #[arg(long, default_value_t = 8)]
    pub coupling_steps: usize,
}

fn slt_demo(a: SltArgs) -> Result<bool> {
    let (a, out) = prepare("slt-demo", &a, |a| &a.common)?;
    let seed = a.common.seed;
    let trips = ex::slt_round_trips(a.states, a.max_steps, a.instances, seed)?;
    let spec = match &a.spec {
        Some(p) => ChainSpec::from_json(&std::fs::read_to_string(p)?)?,
        None => ChainSpec::random(a.states, 2, &mut replica_rng(seed, u64::MAX)),
    };
    let law = ex::slt_two_step(&spec, 0, a.runs, seed.wrapping_add(1))?;
    let coupling = ex::slt_coupling(a.states, a.coupling_steps, a.coupling_instances, seed.wrapping_add(2))?;
    let checks = [
        ("round_trip_failures", trips.failures == 0, trips.failures as f64),
        ("two_step_tv", law.tv < 0.01, law.tv),
        ("xi_ks_p", law.xi_ks.p_value > 0.01, law.xi_ks.p_value),
        ("coupling_violations", coupling.violations == 0, coupling.violations as f64),
    ];
    let mut report = StatsReport::new("slt-demo", seed, out.digest.clone());
    for (name, pass, value) in checks {
        println!("{name} = {value:.6}: {}", verdict(pass));
        report.push(name, value, f64::NAN, 0);
    }
    report.push("coupling_sandwiches", coupling.sandwiches as f64, f64::NAN, coupling.instances);
    out.stamped("slt_stats.csv", &report.to_csv())?;
    out.json(
        "slt_stats.json",
        &serde_json::json!({ "report": report, "round_trips": trips, "two_step": law, "coupling": coupling }),
    )?;
    Ok(checks.iter().all(|c| c.1))
}

#[derive(Clone, Debug, Args, Serialize, Deserialize)]
pub struct ExcursionArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub common: Common,
    /// Sides of B1, B2, B3.
    #[arg(long, value_delimiter = ',', default_value = "3,5,11")]
    pub sides: Vec<i64>,
    #[arg(long, default_value_t = 32)]
    pub n: usize,
    /// Target `u M` for the walk, which sets `u`.
    #[arg(long, default_value_t = 200.0)]
    pub um: f64,
    #[arg(long, default_value_t = 100)]
    pub replicas: usize,
    /// Interlacement level.
    #[arg(long, default_value_t = 1.0)]
    pub u: f64,
    #[arg(long, default_value_t = 10_000)]
    pub ri_samples: usize,
    /// Interlacement sampling box and start box sides.
    #[arg(long = "box", default_value_t = 13)]
    pub box_side: i64,
    #[arg(long, default_value_t = 21)]
    pub trunc: i64,
}

fn excursions(a: ExcursionArgs) -> Result<bool> {
    let (a, out) = prepare("excursions", &a, |a| &a.common)?;
    let [s1, s2, s3] = a.sides[..] else { bail!("--sides takes three values") };
    let annuli = Annuli::new(3, s1, s2, s3)?;
    let seed = a.common.seed;
    let rw = ex::rw_excursion_mean(&annuli, a.n, a.um, a.replicas, seed)?;
    let table = GreenTable::for_radius(3, (a.trunc + 1) as u32)?;
    let sampler = RiSampler::new(&table, a.box_side, a.trunc, Transience::HarmonicReturn)?;
    let ri = ex::ri_excursion_mean(&sampler, &annuli, a.u, a.ri_samples, seed.wrapping_add(1))?;
    let ri_ok = ri.z.abs() <= 3.0;
    let rw_ok = (rw.ratio_capacity - 1.0).abs() <= 0.15 && (rw.ratio_m_prime - 1.0).abs() <= 0.15;
    println!("M = {:.6}", ri.capacity);
    println!("RI: E[N]/u = {:.4} +- {:.4}, z = {:+.2}: {}", ri.mean, ri.se, ri.z, verdict(ri_ok));
    println!(
        "RW: E[N]/u = {:.4}, ratio to M {:.4}, M' = {:.4}, ratio to M' {:.4}, entry TV {:.4}: {}",
        rw.mean,
        rw.ratio_capacity,
        rw.m_prime,
        rw.ratio_m_prime,
        rw.entry_tv,
        verdict(rw_ok)
    );
    let mut report = StatsReport::new("excursions", seed, out.digest.clone());
    report.push("capacity_B3_B2", ri.capacity, f64::NAN, 1);
    report.push("ri_mean_over_u", ri.mean, ri.se, ri.samples);
    report.push("rw_mean_over_u", rw.mean, rw.se, rw.replicas);
    report.push("rw_m_prime", rw.m_prime, f64::NAN, rw.replicas);
    report.push("rw_entry_tv", rw.entry_tv, f64::NAN, rw.returns);
    let vol = Torus::new(a.n, 3).volume();
    let first = torus_schedule(&TorusConfig::new(a.n, 3, seed, 0)?, &annuli, 0, time_threshold(rw.u, vol) + 1)?;
    out.stamped("excursions_schedule.csv", &first.to_csv())?;
    out.stamped("excursions_stats.csv", &report.to_csv())?;
    out.json("excursions_stats.json", &serde_json::json!({ "report": report, "ri": ri, "rw": rw }))?;
    Ok(ri_ok && rw_ok)
}

#[derive(Clone, Debug, Args, Serialize, Deserialize)]
pub struct ExpLawArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub common: Common,
    #[arg(long, default_value_t = 64)]
    pub n: usize,
    #[arg(long, default_value_t = 500)]
    pub seeds: usize,
    /// Isolation radius: other late points within `2R` exclude a point.
    #[arg(long, default_value_t = 2)]
    pub radius: i64,
    /// Synthetic pools for the null calibration.
    #[arg(long, default_value_t = 1000)]
    pub calibration: usize,
}

fn exp_law(a: ExpLawArgs) -> Result<bool> {
    let (a, out) = prepare("exp-law", &a, |a| &a.common)?;
    let table = ex::default_table(3)?;
    let study = ex::exp_law_study(a.n, 3, a.seeds, a.radius, a.common.seed, &table)?;
    let null = ex::exp_null_calibration(study.report.pooled.max(1), a.calibration, a.common.seed.wrapping_add(1))?;
    let p = study.report.ks.as_ref().map_or(f64::NAN, |k| k.p_value);
    let ok = study.report.verdict == latepoints::late_stats::Verdict::Pass && null.pass;
    println!(
        "pooled {} (excluded {}), mean {:.4} +- {:.4}, KS p = {p:.4}, verdict {:?}",
        study.report.pooled, study.report.excluded, study.mean, study.se, study.report.verdict
    );
    println!(
        "null calibration: {}/{} rejections at {}: {}",
        null.rejections,
        null.pools,
        null.level,
        verdict(null.pass)
    );
    let mut report = StatsReport::new("exp-law", a.common.seed, out.digest.clone());
    report.push("pooled", study.report.pooled as f64, f64::NAN, a.seeds);
    report.push("mean", study.mean, study.se, study.report.pooled);
    report.push("ks_p", p, f64::NAN, study.report.pooled);
    report.push("null_rejection_rate", null.rejections as f64 / null.pools as f64, f64::NAN, null.pools);
    out.stamped("exp_law_stats.csv", &report.to_csv())?;
    out.json("exp_law_stats.json", &serde_json::json!({ "report": report, "study": study, "calibration": null }))?;
    Ok(ok)
}
