//! Acceptance suite: one check per criterion, each printing a PASS or FAIL line.
//! Run with `cargo test -p latepoints-cli --test acceptance`; pass criterion numbers
//! as arguments to run a subset.

use std::f64::consts::PI;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::Result;
use latepoints::excursions::Annuli;
use latepoints::interlacements::{RiSampler, Transience};
use latepoints::late_stats::{Regime, Verdict};
use latepoints::lattice::PointZ;
use latepoints::potential::capacity::{alpha_star_neighbors, shapes};
use latepoints::potential::classify::classify_with_table;
use latepoints::potential::{GreenParams, GreenTable};
use latepoints::real::ExtCtx;
use latepoints::rng::replica_rng;
use latepoints::slt::ChainSpec;
use latepoints::torus::u_scale;
use latepoints_cli::experiments as ex;
use latepoints_cli::svg::{figure1_svg, View};

/// Outcome of one criterion: pass flag and a one-line summary.
type Outcome = Result<(bool, String)>;

const G0_3: &str = "1.516386059151978018156012159681";
const G0_4: &str = "1.239467121848481712678697664859";

fn c1_green() -> Outcome {
    let mut ok = true;
    let mut notes = Vec::new();
    for (d, digits) in [(3, G0_3), (4, G0_4)] {
        let t = Instant::now();
        let g = ex::green_origin(d, &GreenParams::default())?;
        let dev = (g.value - digits.parse::<f64>()?).abs();
        let fast = t.elapsed().as_secs_f64();
        let t = Instant::now();
        let ge = ex::green_origin_ext(d, &GreenParams::default(), &ExtCtx::default())?;
        let dev_ext = ge.deviation.expect("reference known");
        let slow = t.elapsed().as_secs_f64();
        // Leading digits of the extended value must spell the reference.
        let shared = ge.digits.chars().zip(digits.chars()).take_while(|(a, b)| a == b).count();
        ok &= dev <= 1e-9 && dev_ext <= 1e-25 && shared >= 27 && fast < 5.0 && slow < 300.0;
        notes.push(format!(
            "d={d}: double {dev:.1e} ({fast:.2}s), extended {dev_ext:.1e} ({slow:.2}s, {shared} chars agree)"
        ));
    }
    Ok((ok, notes.join("; ")))
}

fn c2_capacity() -> Outcome {
    let t = Instant::now();
    let targets = ex::capacity_targets(&ex::default_table(3)?, &ex::default_table(4)?)?;
    let secs = t.elapsed().as_secs_f64();
    let expected = [1.271113197749, 1.335471948364, 1.849398784221];
    let ok = targets.iter().zip(expected).all(|(t, r)| (t.value - r).abs() <= 1e-8) && secs < 60.0;
    let notes: Vec<String> = targets.iter().map(|t| format!("{} = {:.12}", t.name, t.value)).collect();
    Ok((ok, format!("{} ({secs:.2}s)", notes.join(", "))))
}

fn c3_classification() -> Outcome {
    let c3 = classify_with_table(3, &ex::default_table(3)?)?;
    let c4 = classify_with_table(4, &ex::default_table(4)?)?;
    let verdicts3: Vec<bool> = c3.comparisons.iter().map(|c| c.admissible).collect();
    // K1, K2 admissible and A1..A8 not, in d = 3; neither triple in d = 4.
    let mut want3 = vec![true, true];
    want3.extend([false; 8]);
    let ok3 = verdicts3 == want3 && c3.connected_triples_admissible && c3.larger_sets_inadmissible;
    let ok4 =
        c4.comparisons.iter().all(|c| !c.admissible) && !c4.connected_triples_admissible && c4.larger_sets_inadmissible;
    let margin = c3.min_margin.min(c4.min_margin);
    // Verdicts for arbitrary sets follow the stated classes.
    let pair = latepoints::lattice::FiniteSet::from_coords(3, &[&[0, 0, 0], &[5, -2, 1]])?;
    let ok_sets = c3.is_admissible(&pair) == Some(true)
        && c3.is_admissible(&shapes::a_sets()[7]) == Some(false)
        && c4.is_admissible(&shapes::k2(4)) == Some(false);
    let ok = ok3 && ok4 && ok_sets && margin >= 0.015;
    Ok((ok, format!("d=3: {}; d=4: {}; min margin {margin:.5}", c3.summary, c4.summary)))
}

fn c4_alpha_star() -> Outcome {
    let table = ex::default_table(3)?;
    let a = alpha_star_neighbors(&table);
    // Independent route: 1 - 1/(2 g(0)) from the reference digits.
    let oracle = 1.0 - 1.0 / (2.0 * G0_3.parse::<f64>()?);
    let ok = (a - 0.670268665).abs() <= 1e-8 && (a - oracle).abs() <= 1e-12;
    Ok((ok, format!("alpha_* = {a:.12}, oracle {oracle:.12}")))
}

/// Capacity of a set of at most three points by Cramer's rule on its Green matrix.
fn capacity_oracle(pts: &[PointZ], table: &GreenTable) -> Result<f64> {
    let g = |a: &PointZ, b: &PointZ| table.g(&a.sub(b));
    let n = pts.len();
    let mut m = [[0.0; 3]; 3];
    for i in 0..n {
        for j in 0..n {
            m[i][j] = g(&pts[i], &pts[j])?;
        }
    }
    let det3 = |a: [[f64; 3]; 3]| {
        a[0][0] * (a[1][1] * a[2][2] - a[1][2] * a[2][1]) - a[0][1] * (a[1][0] * a[2][2] - a[1][2] * a[2][0])
            + a[0][2] * (a[1][0] * a[2][1] - a[1][1] * a[2][0])
    };
    Ok(match n {
        1 => 1.0 / m[0][0],
        2 => 2.0 / (m[0][0] + m[0][1]),
        3 => {
            let det = det3(m);
            (0..3)
                .map(|k| {
                    let mut mk = m;
                    (0..3).for_each(|r| mk[r][k] = 1.0);
                    det3(mk) / det
                })
                .sum()
        }
        _ => anyhow::bail!("oracle handles up to three points"),
    })
}

fn c5_interlacements() -> Outcome {
    let t = Instant::now();
    let table = GreenTable::for_radius(3, 10)?;
    let sampler = RiSampler::new(&table, 5, 9, Transience::HarmonicReturn)?;
    let us = [0.5, 1.0, 2.0];
    let sets = ex::vacancy_sets(3);
    let rows = ex::ri_vacancy(&sampler, &table, &sets, &us, 100_000, 5)?;
    let mut ok = true;
    let mut worst: f64 = 0.0;
    for r in &rows {
        let k = &sets.iter().find(|s| s.0 == r.set).expect("known set").1;
        let exact = (-r.u * capacity_oracle(k.points(), &table)?).exp();
        let se = (exact * (1.0 - exact) / r.replicas as f64).sqrt();
        let z = (r.p_hat - exact) / se;
        worst = worst.max(z.abs());
        ok &= z.abs() <= 3.0;
    }
    let secs = t.elapsed().as_secs_f64();
    ok &= secs < 120.0;
    Ok((ok, format!("{} cells at 1e5 replicas, max |z| = {worst:.2} ({secs:.1}s)", rows.len())))
}

fn c6_excursions() -> Outcome {
    let t = Instant::now();
    let annuli = Annuli::new(3, 3, 5, 11)?;
    let table = GreenTable::for_radius(3, 22)?;
    let sampler = RiSampler::new(&table, 13, 21, Transience::HarmonicReturn)?;
    let ri = ex::ri_excursion_mean(&sampler, &annuli, 1.0, 10_000, 6)?;
    let rw = ex::rw_excursion_mean(&annuli, 32, 200.0, 100, 6)?;
    let secs = t.elapsed().as_secs_f64();
    let ri_ok = ri.z.abs() <= 3.0;
    let rw_ok = (rw.mean / rw.capacity - 1.0).abs() <= 0.15 && (rw.mean / rw.m_prime - 1.0).abs() <= 0.15;
    Ok((
        ri_ok && rw_ok && secs < 600.0,
        format!(
            "M = {:.5}; RI mean/u = {:.4} (z = {:+.2}); RW mean/u = {:.4}, /M = {:.4}, /M' = {:.4} ({secs:.1}s)",
            ri.capacity,
            ri.mean,
            ri.z,
            rw.mean,
            rw.mean / rw.capacity,
            rw.mean / rw.m_prime
        ),
    ))
}

fn c7_slt() -> Outcome {
    let t = Instant::now();
    let trips = ex::slt_round_trips(5, 50, 10_000, 71)?;
    let spec = ChainSpec::random(5, 2, &mut replica_rng(72, 0));
    let law = ex::slt_two_step(&spec, 0, 100_000, 73)?;
    // Oracle: sum over the intermediate state of g_1(z0, a) mu(a) g_2(a, b) mu(b).
    let n = spec.len();
    let mut oracle_tv = 0.0;
    for a in 0..n {
        for b in 0..n {
            let p = spec.densities[0][0][a] * spec.mu[a] * spec.densities[1][a][b] * spec.mu[b];
            oracle_tv += (law.empirical[a * n + b] - p).abs() / 2.0;
        }
    }
    let coupling = ex::slt_coupling(5, 8, 10_000, 74)?;
    let secs = t.elapsed().as_secs_f64();
    let a = trips.failures == 0;
    let b = oracle_tv < 0.01;
    let c = law.xi_ks.p_value > 0.01;
    let d = coupling.violations == 0 && coupling.sandwiches > 0;
    Ok((
        a && b && c && d && secs < 300.0,
        format!(
            "(a) {} failures / {} round trips; (b) TV {oracle_tv:.4}; (c) KS p = {:.3}; (d) {} violations over {} sandwiched triples ({secs:.1}s)",
            trips.failures, trips.instances, law.xi_ks.p_value, coupling.violations, coupling.sandwiches
        ),
    ))
}

/// Regularised torus Green function at the origin and at a neighbour, by the spectral sum
/// over non-zero modes.
fn torus_green_pair(n: usize) -> (f64, f64) {
    let c: Vec<f64> = (0..n).map(|k| (2.0 * PI * k as f64 / n as f64).cos()).collect();
    let (mut g0, mut g1) = (0.0, 0.0);
    for a in 0..n {
        for b in 0..n {
            for e in 0..n {
                if a + b + e == 0 {
                    continue;
                }
                let w = 1.0 / (1.0 - (c[a] + c[b] + c[e]) / 3.0);
                g0 += w;
                g1 += w * c[a];
            }
        }
    }
    let v = (n * n * n) as f64;
    (g0 / v, g1 / v)
}

fn c8_phase() -> Outcome {
    let t = Instant::now();
    let table = ex::default_table(3)?;
    let ns = [16, 24, 32, 48];
    let fits = ex::phase_study(&[0.5, 0.6, 0.75], &ns, 300, 8, &table)?;
    let secs = t.elapsed().as_secs_f64();
    let g0 = table.g0();
    let mut ok = secs < 3600.0;
    let mut notes = Vec::new();
    for f in &fits {
        let theory = 3.0 * (1.0 - f.alpha / 0.670269);
        let means: Vec<String> = f.points.iter().map(|p| format!("{:.2}", p.mean)).collect();
        // Finite-N prediction from the torus Green function, for context.
        let pred: Vec<String> = ns
            .iter()
            .map(|&n| {
                let (a, b) = torus_green_pair(n);
                let v = (n * n * n) as f64;
                format!("{:.2}", 3.0 * v * (-u_scale(f.alpha, n * n * n, g0) * 2.0 / (a + b)).exp())
            })
            .collect();
        let pass = if f.alpha < 0.7 {
            f.regime == Regime::Supercritical && f.slope.is_some_and(|s| (s - theory).abs() <= 0.3)
        } else {
            let last = f.points.last().expect("four sides").mean;
            last < 0.5 && f.points.windows(2).all(|w| w[1].mean < w[0].mean)
        };
        ok &= pass;
        notes.push(format!(
            "alpha={}: mean D [{}] torus-Green prediction [{}], slope {} vs {theory:.3} {}",
            f.alpha,
            means.join(", "),
            pred.join(", "),
            f.slope.map_or("-".into(), |s| format!("{s:.3}")),
            if pass { "ok" } else { "off" }
        ));
    }
    Ok((ok, format!("{} ({secs:.1}s)", notes.join("; "))))
}

fn c9_figure() -> Outcome {
    let t = Instant::now();
    let g0 = ex::default_table(3)?.g0();
    let (mut late_ok, mut bern_ok) = (0, 0);
    let mut svg_ok = true;
    for seed in 0..10 {
        let fig = ex::figure1(400, 3, 0.6, 900 + seed, g0)?;
        late_ok += (fig.late.double_points >= 1) as usize;
        bern_ok += (fig.bernoulli.double_points == 0) as usize;
        if seed == 0 {
            let svg = figure1_svg(&fig, View::Projection, 0, "acceptance", 900);
            let red = svg.matches(r#"fill="red""#).count();
            svg_ok = svg.trim_end().ends_with("</svg>") && red == fig.late.red_count() + fig.bernoulli.red_count();
            let dir = std::env::temp_dir().join("latepoints-acceptance");
            std::fs::create_dir_all(&dir)?;
            std::fs::write(dir.join("figure1.svg"), svg)?;
        }
    }
    let secs = t.elapsed().as_secs_f64();
    Ok((
        late_ok >= 8 && bern_ok >= 8 && svg_ok && secs < 600.0,
        format!("D(L) >= 1 in {late_ok}/10, D(B) = 0 in {bern_ok}/10, SVG emitted ({secs:.1}s)"),
    ))
}

fn c10_exp_law() -> Outcome {
    let t = Instant::now();
    let study = ex::exp_law_study(64, 3, 500, 2, 10, &ex::default_table(3)?)?;
    let null = ex::exp_null_calibration(study.report.pooled, 1000, 11)?;
    let secs = t.elapsed().as_secs_f64();
    let p = study.report.ks.as_ref().map_or(f64::NAN, |k| k.p_value);
    let ok = study.report.verdict == Verdict::Pass && p > 0.01 && null.pass;
    Ok((
        ok,
        format!(
            "pooled {} isolated points from 500 seeds, mean {:.3} +- {:.3}, KS p = {p:.3}; null calibration {}/{} rejections ({secs:.1}s)",
            study.report.pooled, study.mean, study.se, null.rejections, null.pools
        ),
    ))
}

fn c11_poisson() -> Outcome {
    let t = Instant::now();
    let g0 = ex::default_table(3)?.g0();
    let rows = ex::poisson_study(128, 3, &[0.6, 0.8], 200, 16, 12, g0)?;
    let secs = t.elapsed().as_secs_f64();
    let mut ok = true;
    let mut notes = Vec::new();
    for alpha in [0.6, 0.8] {
        let r: Vec<_> = rows.iter().filter(|r| r.alpha == alpha).collect();
        let pass = r.iter().filter(|r| r.p_value > 0.01).count();
        let disp = r.iter().map(|r| r.dispersion).sum::<f64>() / r.len() as f64;
        let cells = r.iter().map(|r| r.cells_per_axis).min().unwrap_or(0);
        ok &= pass as f64 >= 0.9 * r.len() as f64;
        notes.push(format!(
            "alpha={alpha}: {pass}/{} pass, mean dispersion {disp:.2}, cells per axis >= {cells}",
            r.len()
        ));
    }
    Ok((ok, format!("{} ({secs:.1}s)", notes.join("; "))))
}

fn c12_chen_stein() -> Outcome {
    let cs = ex::chen_stein_decay(0.8, 0.01, &[32, 64, 128, 256], &ex::default_table(3)?)?;
    let bounds: Vec<f64> = cs.iter().map(|c| c.bound).collect();
    let ok = bounds.windows(2).all(|w| w[1] < w[0]) && bounds.iter().all(|b| b.is_finite());
    println!("    not reproduced at desk scale: the optimal sprinkled couplings, the critical constant exp(-d), certified 1e-30 error bounds");
    let shown: Vec<String> = cs.iter().map(|c| format!("N={}: {:.1}", c.n, c.bound)).collect();
    Ok((ok, format!("bound decreasing in N: {}", shown.join(", "))))
}

fn main() -> ExitCode {
    let criteria: [(u32, &str, fn() -> Outcome); 12] = [
        (1, "green function at the origin", c1_green),
        (2, "capacity reference values", c2_capacity),
        (3, "admissible-set classification", c3_classification),
        (4, "alpha_* value", c4_alpha_star),
        (5, "interlacement vacancy law", c5_interlacements),
        (6, "excursion means", c6_excursions),
        (7, "soft local times", c7_slt),
        (8, "double-point phase transition", c8_phase),
        (9, "figure reproduction", c9_figure),
        (10, "exponential law", c10_exp_law),
        (11, "Poisson cell counts", c11_poisson),
        (12, "Chen-Stein decay", c12_chen_stein),
    ];
    let only: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = Vec::new();
    for (k, name, f) in criteria {
        if !only.is_empty() && !only.contains(&k) {
            continue;
        }
        let outcome = match catch_unwind(AssertUnwindSafe(f)) {
            Ok(r) => r,
            Err(_) => Err(anyhow::anyhow!("panicked")),
        };
        let (pass, detail) = match outcome {
            Ok(v) => v,
            Err(e) => (false, format!("error: {e:#}")),
        };
        println!("criterion {k:>2} {name}: {} | {detail}", if pass { "PASS" } else { "FAIL" });
        if !pass {
            failed.push(k);
        }
    }
    if failed.is_empty() {
        println!("acceptance: all criteria passed");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: failed criteria {failed:?}");
        ExitCode::FAILURE
    }
}
