//! Simple random walk on the torus `(Z/NZ)^d` from a uniform start: local times,
//! first hitting times, late sets and cover times.

use std::fmt::Write as _;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::rng::{replica_rng, SmallUniform};

/// Sentinel for a site not hit within the horizon.
pub const NEVER: u64 = u64::MAX;
/// Default refusal threshold for `N^d`.
pub const DEFAULT_SITE_CAP: u64 = 1_000_000_000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TorusConfig {
    pub n: usize,
    pub d: usize,
    pub seed: u64,
    pub stream: u64,
    pub site_cap: u64,
}

impl TorusConfig {
    pub fn new(n: usize, d: usize, seed: u64, stream: u64) -> Result<Self> {
        let c = TorusConfig { n, d, seed, stream, site_cap: DEFAULT_SITE_CAP };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return invalid(format!("torus side must be >= 2, got {}", self.n));
        }
        if self.d < 1 {
            return invalid("torus dimension must be positive");
        }
        let sites = (self.n as u64).checked_pow(self.d as u32).unwrap_or(u64::MAX);
        if sites > self.site_cap {
            return Err(Error::MemoryGuard { sites, cap: self.site_cap });
        }
        Ok(())
    }

    pub fn volume(&self) -> usize {
        self.n.pow(self.d as u32)
    }

    pub fn torus(&self) -> Torus {
        Torus::new(self.n, self.d)
    }
}

/// Geometry of `(Z/NZ)^d` with sites indexed lexicographically (last axis fastest).
#[derive(Clone, Debug, PartialEq)]
pub struct Torus {
    pub n: usize,
    pub d: usize,
    strides: Vec<usize>,
}

impl Torus {
    pub fn new(n: usize, d: usize) -> Self {
        let mut strides = vec![1usize; d];
        for k in (0..d.saturating_sub(1)).rev() {
            strides[k] = strides[k + 1] * n;
        }
        Torus { n, d, strides }
    }

    pub fn volume(&self) -> usize {
        self.n.pow(self.d as u32)
    }

    pub fn stride(&self, axis: usize) -> usize {
        self.strides[axis]
    }

    /// Index of a point of `Z^d`, reduced modulo `N`.
    pub fn index(&self, x: &[i64]) -> usize {
        x.iter().zip(&self.strides).map(|(&c, &s)| c.rem_euclid(self.n as i64) as usize * s).sum()
    }

    pub fn coords(&self, mut i: usize) -> Vec<i64> {
        let mut c = vec![0i64; self.d];
        for k in (0..self.d).rev() {
            c[k] = (i % self.n) as i64;
            i /= self.n;
        }
        c
    }

    /// Neighbour in direction `dir` (axis `dir / 2`, sign `+` for even `dir`).
    #[inline]
    pub fn neighbor(&self, i: usize, dir: usize) -> usize {
        let k = dir / 2;
        let s = self.strides[k];
        let c = (i / s) % self.n;
        if dir % 2 == 0 {
            if c + 1 == self.n {
                i - (self.n - 1) * s
            } else {
                i + s
            }
        } else if c == 0 {
            i + (self.n - 1) * s
        } else {
            i - s
        }
    }

    /// Shortest-representative lift of `x - origin` to `Z^d`, coordinates in `[-N/2, N/2)`.
    pub fn lift(&self, x: usize, origin: usize) -> Vec<i64> {
        let mut out = vec![0i64; self.d];
        self.lift_into(x, origin, &mut out);
        out
    }

    /// [`Torus::lift`] into a caller-provided buffer.
    #[inline]
    pub fn lift_into(&self, mut x: usize, mut origin: usize, out: &mut [i64]) {
        let n = self.n as i64;
        for k in (0..self.d).rev() {
            let v = ((x % self.n) as i64 - (origin % self.n) as i64).rem_euclid(n);
            out[k] = if v >= (n + 1) / 2 { v - n } else { v };
            x /= self.n;
            origin /= self.n;
        }
    }
}

/// A walker on the torus with its own random stream.
pub struct Walker {
    torus: Torus,
    coords: Vec<usize>,
    pos: usize,
    time: u64,
    rng: ChaCha8Rng,
    dirs: SmallUniform,
}

impl Walker {
    /// Uniformly distributed start.
    pub fn new(config: &TorusConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = replica_rng(config.seed, config.stream);
        let start = rng.random_range(0..config.volume());
        Ok(Self::with_rng(config, start, rng))
    }

    /// Deterministic start at site `start`.
    pub fn from_site(config: &TorusConfig, start: usize) -> Result<Self> {
        config.validate()?;
        if start >= config.volume() {
            return invalid(format!("start site {start} outside the torus"));
        }
        Ok(Self::with_rng(config, start, replica_rng(config.seed, config.stream)))
    }

    fn with_rng(config: &TorusConfig, start: usize, rng: ChaCha8Rng) -> Self {
        let torus = config.torus();
        let coords = torus.coords(start).into_iter().map(|c| c as usize).collect();
        Walker { dirs: SmallUniform::new(2 * config.d as u64), torus, coords, pos: start, time: 0, rng }
    }

    pub fn position(&self) -> usize {
        self.pos
    }

    pub fn time(&self) -> u64 {
        self.time
    }

    pub fn torus(&self) -> &Torus {
        &self.torus
    }

    #[inline(always)]
    pub fn step(&mut self) -> usize {
        let dir = self.dirs.sample(&mut self.rng);
        let k = dir >> 1;
        let n = self.torus.n as isize;
        let c = self.coords[k] as isize;
        // Branch-free wrap: directions are random, so branches would mispredict.
        let mut nc = c + 1 - 2 * (dir as isize & 1);
        nc = if nc == n { 0 } else { nc };
        nc = if nc < 0 { n - 1 } else { nc };
        self.coords[k] = nc as usize;
        self.pos = (self.pos as isize + (nc - c) * self.torus.strides[k] as isize) as usize;
        self.time += 1;
        self.pos
    }

    /// Takes up to `steps` steps, calling `visit(time, site)` after each; stops early
    /// when `visit` returns `false`.
    #[inline]
    pub fn run<F: FnMut(u64, usize) -> bool>(&mut self, steps: u64, mut visit: F) {
        for _ in 0..steps {
            let p = self.step();
            if !visit(self.time, p) {
                return;
            }
        }
    }
}

/// Visit counts `l_x(t) = sum_{n <= t} 1{X_n = x}`.
#[derive(Clone, Debug)]
pub struct LocalTimeField {
    pub counts: Vec<u32>,
    pub steps: u64,
    /// Set when some count hit `u32::MAX`.
    pub saturated: bool,
    pub config: TorusConfig,
}

impl LocalTimeField {
    pub fn total(&self) -> u64 {
        self.counts.iter().map(|&c| c as u64).sum()
    }
}

/// First hitting times `H_x` and the induced levels `alpha_x`.
#[derive(Clone, Debug)]
pub struct AlphaField {
    pub first_hit: Vec<u64>,
    /// Last time index covered by the trace.
    pub horizon: u64,
    pub n: usize,
    pub d: usize,
    pub g0: f64,
}

impl AlphaField {
    fn norm(&self) -> f64 {
        let v = self.first_hit.len() as f64;
        self.g0 * v * v.ln()
    }

    /// `alpha_x = H_x / (g(0) N^d log N^d)`; infinite when unhit.
    pub fn alpha(&self, x: usize) -> f64 {
        match self.first_hit[x] {
            NEVER => f64::INFINITY,
            h => h as f64 / self.norm(),
        }
    }

    /// `max_x H_x` if every site was hit.
    pub fn cover_time(&self) -> Option<u64> {
        let m = *self.first_hit.iter().max()?;
        (m != NEVER).then_some(m)
    }

    /// Little-endian `u64` array.
    pub fn to_le_bytes(&self) -> Vec<u8> {
        self.first_hit.iter().flat_map(|h| h.to_le_bytes()).collect()
    }

    pub fn sidecar_json(&self, seed: u64) -> serde_json::Value {
        serde_json::json!({ "N": self.n, "d": self.d, "seed": seed, "g0": self.g0 })
    }
}

/// `u_F(alpha) = alpha g(0) log |F|`.
pub fn u_scale(alpha: f64, card_f: usize, g0: f64) -> f64 {
    alpha * g0 * (card_f as f64).ln()
}

/// Integer time `floor(u N^d)`.
pub fn time_threshold(u: f64, volume: usize) -> u64 {
    (u * volume as f64).floor() as u64
}

/// Runs a walk for `horizon` steps, recording first hitting times and optionally counts.
pub fn run_walk(
    config: &TorusConfig,
    horizon: u64,
    g0: f64,
    record_counts: bool,
) -> Result<(Option<LocalTimeField>, AlphaField)> {
    let mut w = Walker::new(config)?;
    let vol = config.volume();
    let mut first_hit = vec![NEVER; vol];
    first_hit[w.position()] = 0;
    let field = if record_counts {
        let mut counts = vec![0u32; vol];
        let mut saturated = false;
        counts[w.position()] = 1;
        w.run(horizon, |t, x| {
            if first_hit[x] == NEVER {
                first_hit[x] = t;
            }
            let c = &mut counts[x];
            if *c == u32::MAX {
                saturated = true;
            } else {
                *c += 1;
            }
            true
        });
        Some(LocalTimeField { counts, steps: horizon, saturated, config: config.clone() })
    } else {
        w.run(horizon, |t, x| {
            if first_hit[x] == NEVER {
                first_hit[x] = t;
            }
            true
        });
        None
    };
    Ok((field, AlphaField { first_hit, horizon, n: config.n, d: config.d, g0 }))
}

/// `100 g(0) N^d log N^d`.
pub fn safety_horizon(config: &TorusConfig, g0: f64) -> u64 {
    let v = config.volume() as f64;
    (100.0 * g0 * v * v.ln()).ceil() as u64
}

/// Runs until every site is visited; the returned field has `horizon = C_N`.
pub fn run_until_cover(config: &TorusConfig, g0: f64) -> Result<AlphaField> {
    let mut w = Walker::new(config)?;
    let vol = config.volume();
    let mut first_hit = vec![NEVER; vol];
    first_hit[w.position()] = 0;
    let mut remaining = vol - 1;
    let cap = safety_horizon(config, g0);
    if remaining > 0 {
        w.run(cap, |t, x| {
            if first_hit[x] == NEVER {
                first_hit[x] = t;
                remaining -= 1;
            }
            remaining > 0
        });
    }
    if remaining > 0 {
        return Err(Error::SafetyHorizon(cap));
    }
    Ok(AlphaField { first_hit, horizon: w.time(), n: config.n, d: config.d, g0 })
}

/// Cover time `C_N`.
pub fn cover_time(config: &TorusConfig, g0: f64) -> Result<u64> {
    Ok(run_until_cover(config, g0)?.horizon)
}

/// `L^alpha_F`: sites of `F` not visited by time `floor(u_F(alpha) N^d)`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LateSet {
    pub alpha: f64,
    pub u: f64,
    pub threshold: u64,
    pub card_f: usize,
    /// Site indices, ascending.
    pub members: Vec<usize>,
}

/// Late set derived from first hitting times; `f = None` means the whole torus.
pub fn late_set(field: &AlphaField, alpha: f64, f: Option<&[usize]>) -> Result<LateSet> {
    let vol = field.first_hit.len();
    let card_f = f.map_or(vol, |s| s.len());
    if card_f < 2 {
        return invalid("late sets need |F| >= 2");
    }
    let u = u_scale(alpha, card_f, field.g0);
    let threshold = time_threshold(u, vol);
    let late = |x: usize| field.first_hit[x] > threshold;
    let members: Vec<usize> = match f {
        None => (0..vol).filter(|&x| late(x)).collect(),
        Some(s) => {
            let mut m: Vec<usize> = s.iter().copied().filter(|&x| late(x)).collect();
            m.sort_unstable();
            m
        }
    };
    // A short trace is only acceptable when it already settles every member.
    if threshold > field.horizon && members.iter().any(|&x| field.first_hit[x] == NEVER) {
        return Err(Error::HorizonTooShort { needed: threshold, available: field.horizon });
    }
    Ok(LateSet { alpha, u, threshold, card_f, members })
}

/// Visited sites of a walk run for a fixed number of steps, as a bitset.
#[derive(Clone, Debug)]
pub struct Visited {
    bits: Vec<u64>,
    volume: usize,
}

impl Visited {
    pub fn contains(&self, x: usize) -> bool {
        self.bits[x >> 6] >> (x & 63) & 1 == 1
    }

    pub fn vacant_sites(&self) -> Vec<usize> {
        (0..self.volume).filter(|&x| !self.contains(x)).collect()
    }
}

/// Range of the walk up to time `steps`, using one bit per site.
pub fn visited_bitset(config: &TorusConfig, steps: u64) -> Result<Visited> {
    let mut w = Walker::new(config)?;
    let vol = config.volume();
    let mut bits = vec![0u64; vol.div_ceil(64)];
    let p = w.position();
    bits[p >> 6] |= 1 << (p & 63);
    w.run(steps, |_, x| {
        bits[x >> 6] |= 1 << (x & 63);
        true
    });
    Ok(Visited { bits, volume: vol })
}

/// CSV with one late site per row, preceded by comment lines carrying the parameters.
pub fn late_set_csv(late: &LateSet, torus: &Torus, seed: u64, digest: &str) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "# N={},d={},alpha={},u={},seed={},config_digest={}",
        torus.n, torus.d, late.alpha, late.u, seed, digest
    );
    let header: Vec<String> = (1..=torus.d).map(|k| format!("x{k}")).collect();
    let _ = writeln!(s, "{}", header.join(","));
    for &x in &late.members {
        let c: Vec<String> = torus.coords(x).iter().map(|v| v.to_string()).collect();
        let _ = writeln!(s, "{}", c.join(","));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    const G0: f64 = 1.516386059151978;

    #[test]
    fn zero_horizon() {
        let c = TorusConfig::new(5, 3, 1, 0).unwrap();
        let (f, a) = run_walk(&c, 0, G0, true).unwrap();
        let f = f.unwrap();
        assert_eq!(f.counts.iter().filter(|&&v| v == 1).count(), 1);
        assert_eq!(f.total(), 1);
        assert_eq!(a.first_hit.iter().filter(|&&h| h == 0).count(), 1);
    }

    #[test]
    fn conservation_and_determinism() {
        let c = TorusConfig::new(6, 3, 9, 2).unwrap();
        let (f1, a1) = run_walk(&c, 5000, G0, true).unwrap();
        let (f2, a2) = run_walk(&c, 5000, G0, true).unwrap();
        assert_eq!(f1.as_ref().unwrap().total(), 5001);
        assert_eq!(f1.unwrap().counts, f2.unwrap().counts);
        assert_eq!(a1.first_hit, a2.first_hit);
    }

    #[test]
    fn neighbor_wraps() {
        let t = Torus::new(4, 2);
        assert_eq!(t.neighbor(t.index(&[3, 1]), 0), t.index(&[0, 1]));
        assert_eq!(t.neighbor(t.index(&[0, 1]), 1), t.index(&[3, 1]));
        assert_eq!(t.neighbor(t.index(&[2, 3]), 2), t.index(&[2, 0]));
        assert_eq!(t.lift(t.index(&[3, 0]), t.index(&[0, 0])), vec![-1, 0]);
    }

    #[test]
    fn walker_matches_geometry() {
        let c = TorusConfig::new(5, 3, 4, 0).unwrap();
        let mut w = Walker::new(&c).unwrap();
        let t = c.torus();
        let mut prev = w.position();
        for _ in 0..2000 {
            let x = w.step();
            assert!((0..6).any(|dir| t.neighbor(prev, dir) == x));
            prev = x;
        }
    }

    #[test]
    fn cover_time_is_max_first_hit() {
        let c = TorusConfig::new(2, 3, 3, 0).unwrap();
        let a = run_until_cover(&c, G0).unwrap();
        assert!(a.horizon >= 7);
        assert_eq!(a.cover_time(), Some(a.horizon));
    }

    #[test]
    fn late_set_edges() {
        let c = TorusConfig::new(8, 3, 5, 0).unwrap();
        let a = run_until_cover(&c, G0).unwrap();
        let tiny = late_set(&a, 1e-9, None).unwrap();
        assert_eq!(tiny.members.len(), 511);
        let big = late_set(&a, 50.0, None).unwrap();
        assert!(big.members.is_empty());
    }

    #[test]
    fn short_horizon_is_refused() {
        let c = TorusConfig::new(8, 3, 5, 0).unwrap();
        let (_, a) = run_walk(&c, 100, G0, false).unwrap();
        assert!(matches!(late_set(&a, 0.5, None), Err(Error::HorizonTooShort { .. })));
    }

    #[test]
    fn u_scale_values() {
        assert_eq!(u_scale(0.0, 100, G0), 0.0);
        let u = u_scale(1.0, 400usize.pow(3), G0);
        assert!((u - 27.256).abs() < 1e-3, "{u}");
        assert!((u_scale(2.0, 77, G0) - 2.0 * u_scale(1.0, 77, G0)).abs() < 1e-12);
    }

    #[test]
    fn memory_guard() {
        let mut c = TorusConfig::new(10, 3, 0, 0).unwrap();
        c.site_cap = 999;
        assert!(matches!(c.validate(), Err(Error::MemoryGuard { .. })));
    }

    #[test]
    fn bitset_agrees_with_first_hits() {
        let c = TorusConfig::new(9, 3, 11, 1).unwrap();
        let (_, a) = run_walk(&c, 3000, G0, false).unwrap();
        let v = visited_bitset(&c, 3000).unwrap();
        for x in 0..c.volume() {
            assert_eq!(v.contains(x), a.first_hit[x] != NEVER);
        }
    }
}
