//! Admissible sets: finite `K` with `cap(K) <= 2 / g(0)`.
//!
//! The verdict is computed from the capacities of the two connected triples and of
//! the eight reference sets, never assumed. For `d >= 5` the `d = 4` verdict is reused,
//! since capacities of a fixed set are non-decreasing in the dimension.

use serde::Serialize;

use super::capacity::{capacity, shapes};
use super::green::{GreenParams, GreenTable};
use crate::error::{invalid, Error, Result};
use crate::lattice::FiniteSet;

/// Margins below this multiple of the combined error refuse classification.
pub const MARGIN_SAFETY: f64 = 10.0;

#[derive(Clone, Debug, Serialize)]
pub struct Comparison {
    pub name: String,
    pub set: Vec<Vec<i64>>,
    pub cap: f64,
    pub err: f64,
    /// `|cap - 2/g(0)|`.
    pub margin: f64,
    pub admissible: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct Classification {
    pub d: usize,
    /// Dimension in which the capacities were evaluated.
    pub evaluated_in: usize,
    pub g0: f64,
    pub threshold: f64,
    pub threshold_err: f64,
    pub comparisons: Vec<Comparison>,
    /// Connected triples are admissible (only possible in `d = 3`).
    pub connected_triples_admissible: bool,
    /// Every set of three or more points other than a connected triple is inadmissible.
    pub larger_sets_inadmissible: bool,
    pub min_margin: f64,
    pub summary: String,
}

impl Classification {
    /// Verdict for an arbitrary finite set of the classified dimension.
    pub fn is_admissible(&self, k: &FiniteSet) -> Option<bool> {
        match k.len() {
            0..=2 => Some(true),
            3 if k.is_connected() => Some(self.connected_triples_admissible),
            _ if self.larger_sets_inadmissible => Some(false),
            _ => None,
        }
    }
}

fn compare(name: &str, k: &FiniteSet, table: &GreenTable, threshold: f64, threshold_err: f64) -> Result<Comparison> {
    let c = capacity(k, table)?;
    let margin = (c.cap - threshold).abs();
    let tol = MARGIN_SAFETY * (c.err + threshold_err);
    if margin < tol {
        return Err(Error::InsufficientPrecision { margin, required: tol });
    }
    Ok(Comparison {
        name: name.to_string(),
        set: k.points().iter().map(|p| p.0.clone()).collect(),
        cap: c.cap,
        err: c.err,
        margin,
        admissible: c.cap <= threshold,
    })
}

/// Classifies admissible sets in dimension `d` with the default quadrature parameters.
pub fn classify_admissible(d: usize) -> Result<Classification> {
    if d < 3 {
        return invalid(format!("classification needs d >= 3, got {d}"));
    }
    let eval_d = d.min(4);
    let table = GreenTable::build(eval_d, 3, &GreenParams::default())?;
    classify_with_table(d, &table)
}

/// As [`classify_admissible`], with a caller-supplied table of dimension `min(d, 4)`.
pub fn classify_with_table(d: usize, table: &GreenTable) -> Result<Classification> {
    let eval_d = d.min(4);
    if table.dim() != eval_d {
        return Err(Error::DimensionMismatch { expected: eval_d, got: table.dim() });
    }
    let g0 = table.g0();
    let threshold = 2.0 / g0;
    let threshold_err = 2.0 * table.g0_err() / (g0 * g0);
    let mut comparisons = vec![
        compare("K1", &shapes::k1(eval_d), table, threshold, threshold_err)?,
        compare("K2", &shapes::k2(eval_d), table, threshold, threshold_err)?,
    ];
    let triples = comparisons[0].admissible && comparisons[1].admissible;
    let larger = if eval_d == 3 {
        for (i, a) in shapes::a_sets().iter().enumerate() {
            comparisons.push(compare(&format!("A{}", i + 1), a, table, threshold, threshold_err)?);
        }
        comparisons[2..].iter().all(|c| !c.admissible)
    } else {
        // Every set of three or more points dominates K1 or K2 in capacity.
        !comparisons[0].admissible && !comparisons[1].admissible
    };
    let min_margin = comparisons.iter().map(|c| c.margin).fold(f64::INFINITY, f64::min);
    let summary = match (triples, larger) {
        (true, true) => "admissible = {|K| <= 2} u {connected triples}".to_string(),
        (false, true) => "admissible = {|K| <= 2}".to_string(),
        _ => "classification incomplete: a reference set is admissible".to_string(),
    };
    Ok(Classification {
        d,
        evaluated_in: eval_d,
        g0,
        threshold,
        threshold_err,
        comparisons,
        connected_triples_admissible: triples,
        larger_sets_inadmissible: larger,
        min_margin,
        summary,
    })
}
