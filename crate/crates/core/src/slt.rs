//! Soft local times on a finite state space, forwards and backwards.
//!
//! A Poisson cloud `eta` on `Σ × R_+` with intensity `mu ⊗ dv` drives a chain with
//! transition densities `g_i` relative to `mu`: at each step the point minimising
//! `(v - G_i(z)) / g_{i+1}(z_i, z)` over unconsumed points is consumed, and the soft
//! local time grows by `xi_{i+1} g_{i+1}(z_i, ·)`.
//!
//! The inverse direction rebuilds a cloud from a realised chain `(Z_0..Z_T)` and marks
//! `xi_hat`: the explicit points `(Z_j, G_j(Z_j))` plus an independent cloud shifted
//! up by `G_T`, with `G_j(z) = sum_{k <= j} xi_hat_k g_k(Z_{k-1}, z)`. Running the
//! forward construction on that cloud returns the same chain and marks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Exp1};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Tolerance on `sum_z g(z', z) mu(z) = 1`.
pub const ROW_TOLERANCE: f64 = 1e-12;
/// Relative gap below which two candidates count as tied.
pub const TIE_TOLERANCE: f64 = 1e-14;

/// Inhomogeneous chain on a finite state space. Step `i >= 1` uses
/// `densities[min(i, len) - 1]`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ChainSpec {
    pub states: Vec<String>,
    pub mu: Vec<f64>,
    /// Row-major matrices, rows indexed by the previous state.
    pub densities: Vec<Vec<Vec<f64>>>,
    pub initial: Vec<f64>,
}

impl ChainSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        let spec: ChainSpec =
            serde_json::from_str(text).map_err(|e| Error::InvalidParameter(format!("chain spec: {e}")))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn len(&self) -> usize {
        self.mu.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mu.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.mu.len();
        if n == 0 || self.states.len() != n || self.initial.len() != n {
            return invalid("states, mu and initial must have the same non-zero length");
        }
        if self.mu.iter().any(|&m| !(m > 0.0) || !m.is_finite()) {
            return invalid("mu must be positive and finite");
        }
        if self.densities.is_empty() {
            return invalid("at least one density matrix is required");
        }
        for (i, g) in self.densities.iter().enumerate() {
            if g.len() != n || g.iter().any(|r| r.len() != n) {
                return invalid(format!("density {} is not {n}x{n}", i + 1));
            }
            for (a, row) in g.iter().enumerate() {
                if row.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
                    return invalid(format!("density {} row {a} has a negative or non-finite entry", i + 1));
                }
                let s: f64 = row.iter().zip(&self.mu).map(|(g, m)| g * m).sum();
                if (s - 1.0).abs() > ROW_TOLERANCE {
                    return invalid(format!("density {} row {a} integrates to {s} against mu", i + 1));
                }
            }
        }
        let s: f64 = self.initial.iter().sum();
        if self.initial.iter().any(|&p| p < 0.0) || (s - 1.0).abs() > ROW_TOLERANCE {
            return invalid("initial law must be a probability vector");
        }
        Ok(())
    }

    /// `g_i(a, b)` for `i >= 1`.
    #[inline]
    pub fn g(&self, i: usize, a: usize, b: usize) -> f64 {
        self.densities[i.min(self.densities.len()) - 1][a][b]
    }

    /// Transition matrix `P_i(a, b) = g_i(a, b) mu(b)`.
    pub fn transition(&self, i: usize) -> Vec<Vec<f64>> {
        let n = self.len();
        (0..n).map(|a| (0..n).map(|b| self.g(i, a, b) * self.mu[b]).collect()).collect()
    }

    /// Random spec with `steps` independent density matrices; rows are normalised
    /// against `mu` and a few entries are zeroed.
    pub fn random<R: Rng + ?Sized>(n: usize, steps: usize, rng: &mut R) -> Self {
        let mu: Vec<f64> = (0..n).map(|_| rng.random_range(0.2..2.0)).collect();
        let densities = (0..steps)
            .map(|_| {
                (0..n)
                    .map(|_| {
                        let mut row: Vec<f64> = (0..n)
                            .map(|_| if rng.random_bool(0.2) { 0.0 } else { rng.random_range(0.05..1.0) })
                            .collect();
                        if row.iter().all(|&v| v == 0.0) {
                            row[rng.random_range(0..n)] = 1.0;
                        }
                        let s: f64 = row.iter().zip(&mu).map(|(g, m)| g * m).sum();
                        row.iter_mut().for_each(|v| *v /= s);
                        row
                    })
                    .collect()
            })
            .collect();
        let mut initial = vec![0.0; n];
        initial[0] = 1.0;
        ChainSpec { states: (0..n).map(|i| format!("s{i}")).collect(), mu, densities, initial }
    }
}

/// Poisson process on `Σ × R_+` with intensity `mu ⊗ dv`, realised lazily state by
/// state. Each state has its own stream, so points do not depend on query order.
#[derive(Clone, Debug)]
pub struct PoissonCloud {
    points: Vec<Vec<f64>>,
    rngs: Vec<ChaCha8Rng>,
    gaps: Vec<Exp<f64>>,
}

impl PoissonCloud {
    pub fn new(mu: &[f64], seed: u64) -> Result<Self> {
        let gaps = mu
            .iter()
            .map(|&m| Exp::new(m).map_err(|e| Error::InvalidParameter(format!("rate {m}: {e}"))))
            .collect::<Result<Vec<_>>>()?;
        let rngs = (0..mu.len())
            .map(|z| {
                let mut r = ChaCha8Rng::seed_from_u64(seed);
                r.set_stream(z as u64);
                r
            })
            .collect();
        Ok(PoissonCloud { points: vec![Vec::new(); mu.len()], rngs, gaps })
    }

    /// The `idx`-th lowest point of state `z`.
    pub fn point(&mut self, z: usize, idx: usize) -> f64 {
        while self.points[z].len() <= idx {
            let last = self.points[z].last().copied().unwrap_or(0.0);
            let gap = self.gaps[z].sample(&mut self.rngs[z]);
            self.points[z].push(last + gap);
        }
        self.points[z][idx]
    }

    /// Points of state `z` in `[0, v_max]`.
    pub fn points_below(&mut self, z: usize, v_max: f64) -> Vec<f64> {
        let mut i = 0;
        while self.point(z, i) <= v_max {
            i += 1;
        }
        self.points[z][..i].to_vec()
    }
}

/// A cloud given by finitely many explicit points per state below `shift(z)`, followed
/// by a lazy Poisson cloud translated up by `shift(z)`.
#[derive(Clone, Debug)]
pub struct Eta {
    explicit: Vec<Vec<f64>>,
    shift: Vec<f64>,
    cloud: PoissonCloud,
}

impl Eta {
    pub fn poisson(mu: &[f64], seed: u64) -> Result<Self> {
        Ok(Eta {
            explicit: vec![Vec::new(); mu.len()],
            shift: vec![0.0; mu.len()],
            cloud: PoissonCloud::new(mu, seed)?,
        })
    }

    pub fn point(&mut self, z: usize, idx: usize) -> f64 {
        let e = &self.explicit[z];
        if idx < e.len() {
            e[idx]
        } else {
            self.shift[z] + self.cloud.point(z, idx - e.len())
        }
    }

    /// Points of state `z` in `[0, v_max]`.
    pub fn points_below(&mut self, z: usize, v_max: f64) -> Vec<f64> {
        let mut out: Vec<f64> = self.explicit[z].iter().copied().filter(|&v| v <= v_max).collect();
        if v_max >= self.shift[z] {
            out.extend(self.cloud.points_below(z, v_max - self.shift[z]).into_iter().map(|v| v + self.shift[z]));
        }
        out
    }
}

/// Result of a forward run.
#[derive(Clone, Debug, Serialize)]
pub struct SltRun {
    /// `z_0, .., z_T`.
    pub chain: Vec<usize>,
    /// `xi_1, .., xi_T`.
    pub xi: Vec<f64>,
    /// Consumed points `(step, state, v)`.
    pub consumed: Vec<(usize, usize, f64)>,
    /// `G_i` for `i = 0..=T`.
    pub g_history: Vec<Vec<f64>>,
    /// Steps whose minimiser was within the tie tolerance of another candidate.
    pub ties: Vec<usize>,
    /// Per state, number of consumed points.
    pub next: Vec<usize>,
}

impl SltRun {
    pub fn g_final(&self) -> &[f64] {
        self.g_history.last().expect("G_0 is always present")
    }

    /// Sites visited in steps `1..=m`.
    pub fn range(&self, m: usize) -> Vec<bool> {
        let mut seen = vec![false; self.next.len()];
        for &z in &self.chain[1..=m] {
            seen[z] = true;
        }
        seen
    }

    /// Consumed points lie on the surface of their step; the lowest unconsumed point
    /// of each state lies strictly above the final surface.
    pub fn check_invariants(&self, spec: &ChainSpec, eta: &mut Eta) -> Result<()> {
        if self.consumed.len() != self.xi.len() {
            return Err(Error::Inconclusive("consumed count differs from the number of steps".into()));
        }
        for &(step, z, v) in &self.consumed {
            let g = self.g_history[step][z];
            if (g - v).abs() > 1e-12 * v.max(1.0) {
                return Err(Error::Inconclusive(format!(
                    "point consumed at step {step} lies off the surface ({v} vs {g})"
                )));
            }
        }
        let g = self.g_final();
        for z in 0..spec.len() {
            if eta.point(z, self.next[z]) <= g[z] {
                return Err(Error::Inconclusive(format!("live point of state {z} below the surface")));
            }
        }
        Ok(())
    }
}

/// Forward soft local times for `steps` steps from `z0`.
pub fn forward_slt(spec: &ChainSpec, eta: &mut Eta, z0: usize, steps: usize) -> Result<SltRun> {
    let n = spec.len();
    if steps == 0 {
        return invalid("steps must be at least 1");
    }
    if z0 >= n {
        return invalid(format!("initial state {z0} out of range"));
    }
    let mut g = vec![0.0; n];
    let mut next = vec![0usize; n];
    let mut chain = vec![z0];
    let mut xi = Vec::with_capacity(steps);
    let mut consumed = Vec::with_capacity(steps);
    let mut g_history = vec![g.clone()];
    let mut ties = Vec::new();
    let mut cur = z0;
    for i in 1..=steps {
        // Best candidate by (ratio, v, state).
        let mut best: Option<(f64, f64, usize)> = None;
        let mut runner_up = f64::INFINITY;
        for z in 0..n {
            let w = spec.g(i, cur, z);
            if w <= 0.0 {
                continue;
            }
            let v = eta.point(z, next[z]);
            let r = (v - g[z]) / w;
            match best {
                None => best = Some((r, v, z)),
                Some((br, bv, _)) => {
                    if r < br || (r == br && v < bv) {
                        runner_up = br;
                        best = Some((r, v, z));
                    } else {
                        runner_up = runner_up.min(r);
                    }
                }
            }
        }
        let (r, v, z) = best.ok_or_else(|| Error::InvalidParameter(format!("row {cur} of density {i} vanishes")))?;
        if runner_up - r <= TIE_TOLERANCE * r.abs().max(f64::MIN_POSITIVE) {
            ties.push(i);
        }
        for (y, gy) in g.iter_mut().enumerate() {
            *gy += r * spec.g(i, cur, y);
        }
        g[z] = v;
        next[z] += 1;
        xi.push(r);
        consumed.push((i, z, v));
        chain.push(z);
        g_history.push(g.clone());
        cur = z;
    }
    Ok(SltRun { chain, xi, consumed, g_history, ties, next })
}

/// Soft local times `G_j(z) = sum_{k <= j} xi_hat_k g_k(Z_{k-1}, z)` for `j = 0..=T`.
pub fn inverse_slt_surfaces(spec: &ChainSpec, chain: &[usize], xi_hat: &[f64]) -> Result<Vec<Vec<f64>>> {
    if chain.len() != xi_hat.len() + 1 {
        return Err(Error::LengthMismatch(format!("{} states for {} marks", chain.len(), xi_hat.len())));
    }
    let n = spec.len();
    let mut out = vec![vec![0.0; n]];
    for (k, &x) in xi_hat.iter().enumerate() {
        let prev = out.last().expect("non-empty").clone();
        out.push((0..n).map(|z| prev[z] + x * spec.g(k + 1, chain[k], z)).collect());
    }
    Ok(out)
}

/// Rebuilds the cloud from a realised chain `Z_0..Z_T`, marks `xi_hat_1..xi_hat_T` and an
/// independent cloud `eta_hat_0` seeded by `seed`.
pub fn inverse_slt(spec: &ChainSpec, chain: &[usize], xi_hat: &[f64], seed: u64) -> Result<Eta> {
    let surfaces = inverse_slt_surfaces(spec, chain, xi_hat)?;
    if chain.iter().any(|&z| z >= spec.len()) {
        return invalid("chain visits an unknown state");
    }
    let n = spec.len();
    let mut explicit = vec![Vec::new(); n];
    for j in 1..chain.len() {
        explicit[chain[j]].push(surfaces[j][chain[j]]);
    }
    Ok(Eta { explicit, shift: surfaces.last().expect("non-empty").clone(), cloud: PoissonCloud::new(&spec.mu, seed)? })
}

/// Compares a forward run on the rebuilt cloud with the chain and marks it came from.
/// Chains must agree exactly. Each mark is recovered as `(v - G)/g`, so rounding in
/// `v` and `G` is divided by `g` and carried into later surfaces through the other
/// states; marks must agree within four times a first-order bound on that propagated
/// error, and never closer than `1e-12 max(1, v / g)`.
pub fn check_round_trip(spec: &ChainSpec, chain: &[usize], xi_hat: &[f64], run: &SltRun) -> Result<()> {
    if run.chain != chain {
        return Err(Error::Inconclusive("forward run left the given chain".into()));
    }
    let eps = f64::EPSILON;
    // Bound on the absolute error of the forward surface, per state.
    let mut err = vec![0.0f64; spec.len()];
    for (k, ((&a, &b), &(_, z, v))) in run.xi.iter().zip(xi_hat).zip(&run.consumed).enumerate() {
        let i = k + 1;
        let w = spec.g(i, chain[k], z);
        let g_prev = run.g_history[k][z];
        let dr = (eps * (i as f64 * v.abs() + g_prev.abs()) + err[z]) / w;
        let tol = (1e-12 * (v / w).max(1.0)).max(4.0 * dr);
        if (a - b).abs() > tol {
            return Err(Error::Inconclusive(format!("mark {i} recovered as {a}, expected {b} (tolerance {tol:e})")));
        }
        for (y, e) in err.iter_mut().enumerate() {
            *e += dr * spec.g(i, chain[k], y) + eps * run.g_history[i][y].abs();
        }
        // The consumed state's surface is reset to the exact point.
        err[z] = 0.0;
    }
    Ok(())
}

/// Sandwich and inclusion outcome for one `(p, m, n)`.
#[derive(Clone, Debug, Serialize)]
pub struct InclusionCheck {
    pub p: usize,
    pub m: usize,
    pub n: usize,
    pub sandwich: bool,
    pub inclusion: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct CouplingReport {
    pub chain_tilde: Vec<usize>,
    pub xi_tilde: Vec<f64>,
    /// `G_0..G_T` of the given chain.
    pub surfaces: Vec<Vec<f64>>,
    /// `G~_0..G~_T` of the coupled chain.
    pub surfaces_tilde: Vec<Vec<f64>>,
    pub checks: Vec<InclusionCheck>,
    /// Triples where the sandwich held but the inclusions failed.
    pub violations: usize,
}

/// Couples a chain with densities from `spec_tilde` to the realised `chain` through the
/// rebuilt cloud, and checks `G~_p <= G_m <= G~_n => ranges nested` on `triples`
/// (every triple in `1..=T` when `None`).
pub fn couple_chains(
    spec: &ChainSpec,
    chain: &[usize],
    xi_hat: &[f64],
    seed: u64,
    spec_tilde: &ChainSpec,
    z_tilde0: usize,
    triples: Option<&[(usize, usize, usize)]>,
) -> Result<CouplingReport> {
    if spec.mu != spec_tilde.mu {
        return invalid("both chains must share the reference measure");
    }
    let t = xi_hat.len();
    let surfaces = inverse_slt_surfaces(spec, chain, xi_hat)?;
    let mut eta = inverse_slt(spec, chain, xi_hat, seed)?;
    let tilde = forward_slt(spec_tilde, &mut eta, z_tilde0, t)?;
    let all: Vec<(usize, usize, usize)>;
    let triples = match triples {
        Some(tr) => tr,
        None => {
            all = (1..=t).flat_map(|p| (1..=t).flat_map(move |m| (1..=t).map(move |n| (p, m, n)))).collect();
            &all
        }
    };
    let n_states = spec.len();
    let range = |c: &[usize], k: usize| {
        let mut s = vec![false; n_states];
        c[1..=k].iter().for_each(|&z| s[z] = true);
        s
    };
    let mut checks = Vec::with_capacity(triples.len());
    let mut violations = 0;
    for &(p, m, n) in triples {
        if p == 0 || m == 0 || n == 0 || p > t || m > t || n > t {
            return invalid(format!("triple ({p}, {m}, {n}) outside 1..={t}"));
        }
        let sandwich =
            (0..n_states).all(|z| tilde.g_history[p][z] <= surfaces[m][z] && surfaces[m][z] <= tilde.g_history[n][z]);
        let (rp, rm, rn) = (range(&tilde.chain, p), range(chain, m), range(&tilde.chain, n));
        let inclusion = (0..n_states).all(|z| (!rp[z] || rm[z]) && (!rm[z] || rn[z]));
        if sandwich && !inclusion {
            violations += 1;
        }
        checks.push(InclusionCheck { p, m, n, sandwich, inclusion });
    }
    Ok(CouplingReport {
        chain_tilde: tilde.chain,
        xi_tilde: tilde.xi,
        surfaces,
        surfaces_tilde: tilde.g_history,
        checks,
        violations,
    })
}

/// Samples `Z_0..Z_T` directly from the transition matrices.
pub fn sample_chain<R: Rng + ?Sized>(spec: &ChainSpec, z0: usize, steps: usize, rng: &mut R) -> Vec<usize> {
    let mut chain = vec![z0];
    for i in 1..=steps {
        let cur = *chain.last().expect("non-empty");
        let mut u: f64 = rng.random();
        // Rounding leftovers go to the last reachable state.
        let mut pick = (0..spec.len()).rev().find(|&z| spec.g(i, cur, z) > 0.0).expect("validated row");
        for z in 0..spec.len() {
            let p = spec.g(i, cur, z) * spec.mu[z];
            if u < p {
                pick = z;
                break;
            }
            u -= p;
        }
        chain.push(pick);
    }
    chain
}

/// `T` i.i.d. unit exponentials.
pub fn exp_marks<R: Rng + ?Sized>(t: usize, rng: &mut R) -> Vec<f64> {
    (0..t).map(|_| Exp1.sample(rng)).collect()
}
