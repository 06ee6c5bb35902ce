//! Unsteady incompressible flow on the frozen deformed domain.
//!
//! The ALE-transformed momentum and continuity equations are discretised on
//! the structured reference grid with quadratic velocity and bilinear
//! pressure elements; `J` and `F⁻¹` enter through the quadrature. Time
//! stepping is the θ-scheme with implicit pressure. Inflow and outflow carry
//! mean-traction (do-nothing) conditions, walls are no-slip.

mod fem;
mod solver;
mod sparse;
mod wss;

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::GeometryError;
use crate::grid::{GridError, ScalarField, VectorField};

pub use fem::{Discretization, DomainMap};
pub use solver::{CycleResult, MicroSolver, SolveCounters};
pub use wss::WssWindow;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FlowError {
    #[error("linear solver failed: {0}")]
    LinearSolver(String),
    #[error("divergence residual {residual:.3e} above tolerance {tolerance:.1e}")]
    Divergence { residual: f64, tolerance: f64 },
    #[error("nonlinear iteration did not converge (last update {update:.3e})")]
    Nonlinear { update: f64 },
    #[error("time step {dt} does not divide the unit period")]
    Period { dt: f64 },
    #[error("invalid flow setup: {0}")]
    Invalid(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Grid(#[from] GridError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlowMode {
    Stokes,
    #[default]
    NavierStokes,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FluidParams {
    /// Density in g/cm³.
    pub rho_f: f64,
    /// Kinematic viscosity in cm²/s.
    pub nu_f: f64,
    /// Fixed θ; `None` selects `1/2 + Δt`.
    pub theta: Option<f64>,
    pub mode: FlowMode,
}

impl Default for FluidParams {
    fn default() -> Self {
        Self { rho_f: 1.06, nu_f: 0.03, theta: None, mode: FlowMode::NavierStokes }
    }
}

impl FluidParams {
    pub fn theta_for(&self, dt: f64) -> f64 {
        self.theta.unwrap_or(0.5 + dt)
    }

    pub fn validate(&self, dt: f64) -> Result<(), FlowError> {
        if !(self.rho_f > 0.0 && self.nu_f > 0.0) {
            return Err(FlowError::Invalid("rho_f and nu_f must be positive".into()));
        }
        let theta = self.theta_for(dt);
        if !(0.5..=1.0).contains(&theta) {
            return Err(FlowError::Invalid(format!("theta {theta} outside [0.5, 1]")));
        }
        Ok(())
    }
}

/// Piecewise-linear inflow pressure over one period, extended periodically.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PressureProfile {
    /// `(t, P)` breakpoints with `t` strictly increasing from 0 to 1.
    pub breakpoints: Vec<(f64, f64)>,
}

impl Default for PressureProfile {
    /// `10 + 25t` on `[0, 0.4)`, `(140 − 200t)/3` on `[0.4, 0.7)` and
    /// `(100t − 70)/3` on `[0.7, 1)`.
    fn default() -> Self {
        Self { breakpoints: vec![(0.0, 10.0), (0.4, 20.0), (0.7, 0.0), (1.0, 10.0)] }
    }
}

impl PressureProfile {
    pub fn constant(p: f64) -> Self {
        Self { breakpoints: vec![(0.0, p), (1.0, p)] }
    }

    pub fn validate(&self) -> Result<(), FlowError> {
        let b = &self.breakpoints;
        let bad = |m: &str| Err(FlowError::Invalid(format!("pressure profile: {m}")));
        if b.len() < 2 || b[0].0 != 0.0 || b[b.len() - 1].0 != 1.0 {
            return bad("breakpoints must start at t = 0 and end at t = 1");
        }
        if b.windows(2).any(|w| !(w[1].0 > w[0].0)) {
            return bad("breakpoint times must increase");
        }
        if (b[0].1 - b[b.len() - 1].1).abs() > 1e-12 {
            return bad("profile must be periodic");
        }
        Ok(())
    }

    /// `P_in(t)` with `t` reduced modulo one period.
    pub fn eval(&self, t: f64) -> f64 {
        let tau = t - t.floor();
        let b = &self.breakpoints;
        let k = b.partition_point(|&(s, _)| s <= tau).clamp(1, b.len() - 1);
        let (t0, p0) = b[k - 1];
        let (t1, p1) = b[k];
        p0 + (p1 - p0) * (tau - t0) / (t1 - t0)
    }
}

/// Spatially varying body force `f(x₁, x₂, t)` per unit mass.
#[derive(Clone)]
pub struct BodyForce(pub Arc<dyn Fn(f64, f64, f64) -> [f64; 2] + Send + Sync>);

impl fmt::Debug for BodyForce {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("BodyForce(..)")
    }
}

impl BodyForce {
    pub fn new(f: impl Fn(f64, f64, f64) -> [f64; 2] + Send + Sync + 'static) -> Self {
        Self(Arc::new(f))
    }

    /// Periodic cavity forcing `sin(2πt)/6 · (3 tanh x₂, tanh x₁)`.
    pub fn cavity() -> Self {
        Self::new(|x, y, t| {
            let s = (2.0 * std::f64::consts::PI * t).sin() / 6.0;
            [s * 3.0 * y.tanh(), s * x.tanh()]
        })
    }
}

/// What drives the flow.
#[derive(Debug, Clone, Default)]
pub struct Forcing {
    /// Mean traction on the inflow boundary; outflow traction is zero.
    pub inflow_pressure: Option<PressureProfile>,
    pub body_force: Option<BodyForce>,
}

impl Forcing {
    pub fn pressure_drop(profile: PressureProfile) -> Self {
        Self { inflow_pressure: Some(profile), body_force: None }
    }

    pub fn body(force: BodyForce) -> Self {
        Self { inflow_pressure: None, body_force: Some(force) }
    }

    pub fn none() -> Self {
        Self::default()
    }
}

/// Velocity on the velocity nodes and pressure on the (coarser) pressure
/// vertices at time `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowState {
    pub v: VectorField,
    pub p: ScalarField,
    pub t: f64,
}
