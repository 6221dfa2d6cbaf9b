//! Hand-written SVG for the late-set figure.

use std::fmt::Write;

use latepoints::torus::Torus;

use crate::experiments::{Figure1, Panel};

/// How three-dimensional sites are placed in the plane.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum View {
    /// Orthogonal projection along the last axis.
    Projection,
    /// Sites whose last coordinate equals the slice index.
    Slice,
    /// Isometric view of the whole torus box.
    Axonometric,
}

const PANEL: f64 = 480.0;
const MARGIN: f64 = 24.0;
const RADIUS: f64 = 1.6;

/// Plane coordinates in `[0, 1]^2` of site `x`, or `None` when the view hides it.
fn place(view: View, slice: i64, torus: &Torus, x: usize) -> Option<(f64, f64)> {
    let c = torus.coords(x);
    let n = torus.n as f64;
    let z = if torus.d >= 3 { c[2] } else { 0 };
    match view {
        View::Projection => Some((c[0] as f64 / n, c[1] as f64 / n)),
        View::Slice => (z == slice).then(|| (c[0] as f64 / n, c[1] as f64 / n)),
        View::Axonometric => {
            let (x, y, z) = (c[0] as f64 / n, c[1] as f64 / n, z as f64 / n);
            let cos = 30f64.to_radians().cos();
            // Spans [-cos, cos] horizontally and [-1, 1] vertically before rescaling.
            let px = (x - y) * cos;
            let py = (x + y) * 0.5 - z;
            Some(((px + cos) / (2.0 * cos), (py + 1.0) / 2.0))
        }
    }
}

fn panel(out: &mut String, p: &Panel, torus: &Torus, view: View, slice: i64, left: f64, title: &str) {
    let _ = writeln!(
        out,
        r#"<g transform="translate({left},{MARGIN})"><rect width="{PANEL}" height="{PANEL}" fill="white" stroke="black"/>"#
    );
    let _ = writeln!(out, r#"<text x="{}" y="-6" font-size="13" text-anchor="middle">{title}</text>"#, PANEL / 2.0);
    // Black first so red sites stay visible where they overlap.
    for pass_red in [false, true] {
        for (&x, &red) in p.sites.iter().zip(&p.red) {
            if red != pass_red {
                continue;
            }
            if let Some((u, v)) = place(view, slice, torus, x) {
                let fill = if red { "red" } else { "black" };
                let _ = writeln!(
                    out,
                    r#"<circle cx="{:.2}" cy="{:.2}" r="{RADIUS}" fill="{fill}"/>"#,
                    u * PANEL,
                    (1.0 - v) * PANEL
                );
            }
        }
    }
    out.push_str("</g>\n");
}

/// Side-by-side panels: the late set and the matched Bernoulli field.
pub fn figure1_svg(fig: &Figure1, view: View, slice: i64, digest: &str, seed: u64) -> String {
    let torus = Torus::new(fig.n, fig.d);
    let width = 3.0 * MARGIN + 2.0 * PANEL;
    let height = 2.0 * MARGIN + PANEL + 20.0;
    let mut out = String::new();
    let _ = writeln!(out, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(out, "<!-- config_digest={digest} seed={seed} -->");
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">"#
    );
    let _ = writeln!(out, r#"<metadata>config_digest={digest} seed={seed}</metadata>"#);
    let late = format!("late set, alpha = {}, N = {}: D = {}", fig.alpha, fig.n, fig.late.double_points);
    let bern = format!("Bernoulli, p = N^(-alpha d): D = {}", fig.bernoulli.double_points);
    panel(&mut out, &fig.late, &torus, view, slice, MARGIN, &late);
    panel(&mut out, &fig.bernoulli, &torus, view, slice, 2.0 * MARGIN + PANEL, &bern);
    let _ = writeln!(
        out,
        r#"<text x="{MARGIN}" y="{}" font-size="11">red: a neighbour is in the set; view: {view:?}</text>"#,
        height - 6.0
    );
    out.push_str("</svg>\n");
    out
}
