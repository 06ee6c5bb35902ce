//! Shared fixtures for the integration and acceptance targets.

#![allow(dead_code)]

use std::f64::consts::PI;

use pulsegrowth::config::RunConfig;
use pulsegrowth::grid::Grid;
use pulsegrowth::microflow::{BodyForce, Discretization, DomainMap, FlowMode, FluidParams, Forcing, MicroSolver};

/// Manufactured channel flow `v = (sin(2πt)(1 − 4x₂²), 0)`, `p = 0` on
/// `[0, 1] × [−½, ½]`. The profile is exact in the Q2 space, so the error
/// at `t = 1` is purely temporal.
pub fn manufactured_error(theta: Option<f64>, dt: f64) -> f64 {
    let nu = 0.1;
    let g = |t: f64| (2.0 * PI * t).sin();
    let dg = |t: f64| 2.0 * PI * (2.0 * PI * t).cos();
    let grid = Grid::channel(1.0, 1.0, 4, 4).unwrap();
    let disc = Discretization::new(grid, DomainMap::Identity).unwrap();
    let fluid = FluidParams { rho_f: 1.0, nu_f: nu, mode: FlowMode::Stokes, theta };
    let force = BodyForce::new(move |_, y, t| [dg(t) * (1.0 - 4.0 * y * y) + 8.0 * nu * g(t), 0.0]);
    let mut s = MicroSolver::new(disc, fluid, Forcing::body(force), dt).unwrap();
    let mut x = s.rest();
    let m = s.steps_per_period();
    for i in 0..m {
        x = s.theta_step(&x, i as f64 * dt).unwrap();
    }
    let exact_v = s.disc.grid().vector(|_, y| (g(1.0) * (1.0 - 4.0 * y * y), 0.0));
    let exact_p = s.disc.pressure_grid().scalar(|_, _| 0.0);
    let exact = s.disc.pack(&exact_v, &exact_p).unwrap();
    let e: Vec<f64> = x.iter().zip(&exact).map(|(a, b)| a - b).collect();
    s.disc.velocity_norm(&e)
}

/// Observed orders `log₂(eᵢ/eᵢ₊₁)` under step halving from `dt0`.
pub fn temporal_orders(theta: Option<f64>, dt0: f64, levels: usize) -> Vec<f64> {
    let errs: Vec<f64> = (0..levels).map(|l| manufactured_error(theta, dt0 / 2f64.powi(l as i32))).collect();
    errs.windows(2).map(|w| (w[0] / w[1]).log2()).collect()
}

/// Small channel configuration for quick coupled runs.
pub fn small_config() -> RunConfig {
    let mut c = RunConfig::default();
    c.grid.nx = 40;
    c.grid.ny = 8;
    c.schedule.horizon = 16.0;
    c.schedule.steps = 4;
    c.schedule.micro_step = 0.05;
    c
}
