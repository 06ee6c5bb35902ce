//! Browser bindings: mapped vessel mesh, growth law curves and periodic
//! solver histories on the small cavity.

use wasm_bindgen::prelude::*;

use pulsegrowth::geometry::{Point, UniformGrowth, VesselGeometry};
use pulsegrowth::growth::{clip, window, GrowthParams};
use pulsegrowth::periodic::{CavityProblem, PeriodicMode};

/// Mapped mesh nodes of the default vessel for uniform growth `c`, row by
/// row: `[y1, y2, det]` per node on an `(nx+1) × (ny+1)` lattice.
#[wasm_bindgen]
pub fn vessel_mesh(c: f64, nx: usize, ny: usize) -> Result<Vec<f64>, JsError> {
    if nx == 0 || ny == 0 {
        return Err(JsError::new("mesh needs at least one interval per direction"));
    }
    let g = VesselGeometry::default();
    let d = g.domain;
    let growth = UniformGrowth(c);
    let mut out = Vec::with_capacity(3 * (nx + 1) * (ny + 1));
    for j in 0..=ny {
        for i in 0..=nx {
            let x = Point::new(d.length * i as f64 / nx as f64, d.diameter * (j as f64 / ny as f64 - 0.5), 0.0);
            let m = g.composite_map(&x, &growth).map_err(|e| JsError::new(&e.to_string()))?;
            out.extend([m.mapped[0], m.mapped[1], m.det]);
        }
    }
    Ok(out)
}

/// Tip windows along the axis: `[x1, Θ(s0; x1), Θ(s1; x1)]` per sample.
#[wasm_bindgen]
pub fn tip_windows(samples: usize) -> Vec<f64> {
    let d = VesselGeometry::default().domain;
    let n = samples.max(2);
    (0..n)
        .flat_map(|i| {
            let x = d.length * i as f64 / (n - 1) as f64;
            [x, window(d.stent_start, x), window(d.stent_end, x)]
        })
        .collect()
}

/// Reaction against wall stress for growth `c`: `[σ, R]` per sample with
/// `σ ∈ [0, sigma_max_plot]`.
#[wasm_bindgen]
pub fn reaction_curve(c: f64, alpha: f64, beta: f64, sigma_max_plot: f64, samples: usize) -> Vec<f64> {
    let p = GrowthParams { alpha, beta, ..GrowthParams::default() };
    let n = samples.max(2);
    (0..n)
        .flat_map(|i| {
            let s = sigma_max_plot * i as f64 / (n - 1) as f64;
            [s, alpha / (1.0 + beta * c) * clip(s, &p)]
        })
        .collect()
}

/// Periodicity error per cycle on the forced cavity (Stokes, `n × n`).
#[wasm_bindgen]
pub fn cavity_history(nu: f64, n: usize, averaging: bool) -> Result<Vec<f64>, JsError> {
    if !(nu > 0.0) || n < 4 || n % 2 != 0 {
        return Err(JsError::new("need nu > 0 and an even n of at least 4"));
    }
    let mode = if averaging { PeriodicMode::Averaging } else { PeriodicMode::Forward };
    let p = CavityProblem { n, nu, max_cycles: 300, ..CavityProblem::default() };
    let sol = p.solve(mode).map_err(|e| JsError::new(&e.to_string()))?;
    Ok(sol.report.error_history)
}
