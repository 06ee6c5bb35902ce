//! Time-periodic micro solutions: plain forward cycling and the averaging
//! acceleration, which corrects each cycle's end state by a stationary solve
//! driven by the cycle defect.

use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::grid::{Grid, GridError, VectorField};
use crate::microflow::{
    BodyForce, CycleResult, Discretization, DomainMap, FlowError, FlowMode, FluidParams, Forcing, MicroSolver,
};
use crate::report::write_csv_rows;

pub const DEFAULT_EPS_P: f64 = 1e-8;

/// Errors above this are treated as divergence of the cycle map.
const BLOWUP: f64 = 1e8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PeriodicMode {
    Forward,
    #[default]
    Averaging,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CycleDiagnostics {
    pub cycle: usize,
    pub error: f64,
    pub outflow_mean: f64,
    pub max_velocity: f64,
    pub max_divergence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeriodicSolveReport {
    pub mode: PeriodicMode,
    pub cycles: usize,
    pub error_history: Vec<f64>,
    pub contraction_ratios: Vec<f64>,
    pub converged: bool,
    pub stationary_solves: usize,
    pub diagnostics: Vec<CycleDiagnostics>,
}

impl PeriodicSolveReport {
    /// Geometric mean of the contraction ratios.
    pub fn mean_ratio(&self) -> Option<f64> {
        if self.contraction_ratios.is_empty() {
            return None;
        }
        let s: f64 = self.contraction_ratios.iter().map(|r| r.ln()).sum();
        Some((s / self.contraction_ratios.len() as f64).exp())
    }

    pub fn write_error_csv(&self, path: &Path) -> io::Result<()> {
        write_csv_rows(
            path,
            &["cycle", "error", "outflow_mean", "max_velocity", "max_divergence"],
            self.diagnostics
                .iter()
                .map(|d| vec![d.cycle as f64, d.error, d.outflow_mean, d.max_velocity, d.max_divergence]),
        )
    }
}

/// Intermediate fields of one averaging iteration.
#[derive(Debug, Clone, Default)]
pub struct AveragingWorkspace {
    /// Cycle average of the unknowns.
    pub vbar: Vec<f64>,
    /// `v(1) − v(0)`.
    pub defect: Vec<f64>,
    pub wbar: Vec<f64>,
    pub qbar: Vec<f64>,
}

impl AveragingWorkspace {
    /// Fills `defect` and `vbar` from a completed cycle.
    pub fn load(&mut self, start: &[f64], cycle: &CycleResult) {
        self.defect = cycle.end.iter().zip(start).map(|(a, b)| a - b).collect();
        self.vbar = cycle.average.clone();
    }

    /// Runs the stationary correction solve and splits the result.
    pub fn correct(&mut self, solver: &mut MicroSolver) -> Result<(), FlowError> {
        let nv = solver.disc.velocity_unknowns();
        let sol = solver.averaging_correction(&self.defect, &self.vbar)?;
        self.wbar = sol[..nv].to_vec();
        self.qbar = sol[nv..].to_vec();
        Ok(())
    }
}

/// The periodic state at `t = 0` with the last integrated cycle.
#[derive(Debug, Clone)]
pub struct PeriodicSolution {
    pub start: Vec<f64>,
    pub last_cycle: CycleResult,
    pub report: PeriodicSolveReport,
}

/// Discrete `L²` distance between two velocity fields on the mapped domain.
pub fn periodicity_error(disc: &Discretization, v_end: &VectorField, v_start: &VectorField) -> Result<f64, FlowError> {
    if v_end.grid != v_start.grid {
        return Err(GridError::GridMismatch.into());
    }
    let mut d = v_end.clone();
    for (a, b) in d.x.iter_mut().zip(&v_start.x) {
        *a -= b;
    }
    for (a, b) in d.y.iter_mut().zip(&v_start.y) {
        *a -= b;
    }
    disc.field_l2_norm(&d)
}

/// Iterates cycles until `‖v(1) − v(0)‖ < eps_p` or `max_cycles` is spent.
/// Non-convergence is reported through `report.converged`.
pub fn solve_periodic(
    solver: &mut MicroSolver,
    initial: &[f64],
    mode: PeriodicMode,
    eps_p: f64,
    max_cycles: usize,
) -> Result<PeriodicSolution, FlowError> {
    if !(eps_p > 0.0) || max_cycles == 0 {
        return Err(FlowError::Invalid("eps_p must be positive and max_cycles at least 1".into()));
    }
    let nv = solver.disc.velocity_unknowns();
    let solves_before = solver.counters.stationary_solves;
    let mut x0 = initial.to_vec();
    let mut errors: Vec<f64> = Vec::new();
    let mut diagnostics = Vec::new();
    let mut ws = AveragingWorkspace::default();
    let mut converged = false;
    let mut last = None;

    for cycle in 1..=max_cycles {
        let r = solver.cycle_integrate(&x0, 0.0)?;
        ws.load(&x0, &r);
        let err = solver.disc.velocity_norm(&ws.defect);
        errors.push(err);
        diagnostics.push(CycleDiagnostics {
            cycle,
            error: err,
            outflow_mean: r.outflow_mean,
            max_velocity: r.max_velocity,
            max_divergence: r.max_divergence,
        });
        log::debug!("{mode:?} cycle {cycle}: periodicity error {err:.3e}");
        if err < eps_p {
            converged = true;
            last = Some(r);
            break;
        }
        if !err.is_finite() || err > BLOWUP {
            log::warn!("periodic iteration diverged at cycle {cycle} (error {err:.3e})");
            last = Some(r);
            break;
        }
        let mut next = r.end.clone();
        if mode == PeriodicMode::Averaging && cycle < max_cycles {
            ws.correct(solver)?;
            for (a, w) in next[..nv].iter_mut().zip(&ws.wbar) {
                *a += w;
            }
        }
        last = Some(r);
        x0 = next;
    }

    let last_cycle = last.expect("at least one cycle");
    let contraction_ratios = errors.windows(2).map(|w| w[1] / w[0]).collect();
    let report = PeriodicSolveReport {
        mode,
        cycles: errors.len(),
        error_history: errors,
        contraction_ratios,
        converged,
        stationary_solves: solver.counters.stationary_solves - solves_before,
        diagnostics,
    };
    Ok(PeriodicSolution { start: last_cycle.end.clone(), last_cycle, report })
}

/// Closed box `[-2, 2]²` driven by the periodic body force, Stokes flow with
/// unit density. The desk test for periodic solvers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CavityProblem {
    pub n: usize,
    pub dt: f64,
    pub nu: f64,
    pub eps_p: f64,
    pub max_cycles: usize,
}

impl Default for CavityProblem {
    fn default() -> Self {
        Self { n: 16, dt: 0.02, nu: 0.1, eps_p: DEFAULT_EPS_P, max_cycles: 400 }
    }
}

impl CavityProblem {
    pub fn solver(&self) -> Result<MicroSolver, FlowError> {
        let g = Grid::cavity((-2.0, -2.0), (2.0, 2.0), self.n, self.n)?;
        let d = Discretization::new(g, DomainMap::Identity)?;
        let fluid = FluidParams { rho_f: 1.0, nu_f: self.nu, mode: FlowMode::Stokes, theta: None };
        let mut s = MicroSolver::new(d, fluid, Forcing::body(BodyForce::cavity()), self.dt)?;
        s.record_wss = false;
        Ok(s)
    }

    /// Periodic solve from rest.
    pub fn solve(&self, mode: PeriodicMode) -> Result<PeriodicSolution, FlowError> {
        let mut s = self.solver()?;
        let x0 = s.rest();
        solve_periodic(&mut s, &x0, mode, self.eps_p, self.max_cycles)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid;
    use crate::microflow::{BodyForce, DomainMap, FlowMode, FluidParams, Forcing};

    fn cavity(nu: f64) -> MicroSolver {
        let g = Grid::cavity((-2.0, -2.0), (2.0, 2.0), 8, 8).unwrap();
        let d = Discretization::new(g, DomainMap::Identity).unwrap();
        let fluid = FluidParams { rho_f: 1.0, nu_f: nu, mode: FlowMode::Stokes, theta: None };
        let mut s = MicroSolver::new(d, fluid, Forcing::body(BodyForce::cavity()), 0.05).unwrap();
        s.record_wss = false;
        s
    }

    #[test]
    fn error_of_identical_and_shifted_fields() {
        let g = Grid::cavity((0.0, 0.0), (1.0, 1.0), 8, 8).unwrap();
        let d = Discretization::new(g, DomainMap::Identity).unwrap();
        let a = g.vector(|x, y| (x.sin(), y * x));
        assert_eq!(periodicity_error(&d, &a, &a).unwrap(), 0.0);
        let b = g.vector(|x, y| (x.sin() + 1.0, y * x));
        assert!((periodicity_error(&d, &b, &a).unwrap() - 1.0).abs() < 1e-12);
        let other = Grid::cavity((0.0, 0.0), (2.0, 1.0), 8, 8).unwrap().vector(|_, _| (0.0, 0.0));
        assert!(periodicity_error(&d, &a, &other).is_err());
    }

    #[test]
    fn rest_with_no_forcing_is_periodic_immediately() {
        let mut s = cavity(0.1);
        s.forcing = Forcing::none();
        let x0 = s.rest();
        let sol = solve_periodic(&mut s, &x0, PeriodicMode::Averaging, 1e-8, 5).unwrap();
        assert!(sol.report.converged);
        assert_eq!(sol.report.cycles, 1);
        assert_eq!(sol.report.stationary_solves, 0);
    }

    #[test]
    fn averaging_beats_forward_and_agrees() {
        let mut f = cavity(0.1);
        let mut a = cavity(0.1);
        let x_f = f.rest();
        let fw = solve_periodic(&mut f, &x_f, PeriodicMode::Forward, 1e-8, 200).unwrap();
        let x_a = a.rest();
        let av = solve_periodic(&mut a, &x_a, PeriodicMode::Averaging, 1e-8, 200).unwrap();
        assert!(fw.report.converged && av.report.converged);
        assert!(2 * av.report.cycles <= fw.report.cycles, "{} vs {}", av.report.cycles, fw.report.cycles);
        assert_eq!(av.report.stationary_solves, av.report.cycles - 1);
        assert_eq!(fw.report.stationary_solves, 0);
        let d: Vec<f64> = fw.start.iter().zip(&av.start).map(|(p, q)| p - q).collect();
        assert!(a.disc.velocity_norm(&d) < 10.0 * 1e-8);
    }

    #[test]
    fn nonconvergence_is_reported() {
        let mut s = cavity(0.1);
        let x0 = s.rest();
        let sol = solve_periodic(&mut s, &x0, PeriodicMode::Forward, 1e-8, 3).unwrap();
        assert!(!sol.report.converged);
        assert_eq!(sol.report.cycles, 3);
        assert_eq!(sol.report.contraction_ratios.len(), 2);
    }
}
