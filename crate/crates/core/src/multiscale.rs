//! The macro driver: on each macro step the flow is solved to periodicity on
//! the frozen domain of the current growth field, the reaction is averaged
//! over the last cycle and the growth field takes one semi-implicit step.

use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::RunConfig;
use crate::geometry::GeometryError;
use crate::grid::WallField;
use crate::growth::{averaged_reaction, macro_step, GrowthError, GrowthField, MacroScheme, Walls};
use crate::microflow::{CycleResult, Discretization, DomainMap, FlowError, Forcing, MicroSolver, SolveCounters};
use crate::periodic::{solve_periodic, PeriodicSolution, PeriodicSolveReport};

#[derive(Debug, Error)]
pub enum MultiscaleError {
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error(transparent)]
    Growth(#[from] GrowthError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("invalid schedule: {0}")]
    Schedule(String),
    #[error("periodic solve did not converge in macro step {step} after {cycles} cycles")]
    NotConverged { step: usize, cycles: usize, partial: Box<MultiscaleRun> },
    #[error("non-convergent sequence: {0}")]
    NonConvergent(String),
}

/// Horizon `T = N·K` split into `N` macro steps; micro step `k` with `M·k = 1 s`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MacroSchedule {
    pub horizon: f64,
    pub steps: usize,
    pub micro_step: f64,
}

impl Default for MacroSchedule {
    fn default() -> Self {
        Self { horizon: 1024.0, steps: 16, micro_step: 0.02 }
    }
}

impl MacroSchedule {
    /// `K = T/N`.
    pub fn macro_step(&self) -> f64 {
        self.horizon / self.steps as f64
    }

    pub fn micro_steps_per_period(&self) -> usize {
        (1.0 / self.micro_step).round() as usize
    }

    pub fn validate(&self) -> Result<(), MultiscaleError> {
        let bad = |m: String| Err(MultiscaleError::Schedule(m));
        if !(self.horizon > 0.0) || self.steps == 0 {
            return bad("horizon must be positive and steps at least 1".into());
        }
        let m = (1.0 / self.micro_step).round();
        if !(self.micro_step > 0.0) || (m * self.micro_step - 1.0).abs() > 1e-9 {
            return bad(format!("micro step {} does not divide the period", self.micro_step));
        }
        if self.macro_step() < 1.0 {
            return bad(format!("macro step {} shorter than one period", self.macro_step()));
        }
        Ok(())
    }

    pub fn times(&self) -> Vec<f64> {
        (0..=self.steps).map(|n| n as f64 * self.macro_step()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MacroRecord {
    pub step: usize,
    /// Macro time at which the flow was solved (start of the step).
    pub time: f64,
    pub jout: f64,
    pub cycles: usize,
    pub converged: bool,
    pub stationary_solves: usize,
    pub max_c: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MultiscaleRun {
    pub schedule: MacroSchedule,
    pub records: Vec<MacroRecord>,
    pub reports: Vec<PeriodicSolveReport>,
    /// `J_out` of the final growth field.
    pub jout_final: Option<f64>,
    pub baseline_outflow: f64,
    /// `c̄₀, …, c̄_N`.
    pub snapshots: Vec<GrowthField>,
    pub wall_seconds: f64,
    pub config_hash: String,
    pub physics_hash: String,
    pub counters: SolveCounters,
    /// Periodic start state used as warm start for each step.
    #[serde(skip)]
    pub warm_starts: Vec<Vec<f64>>,
}

impl MultiscaleRun {
    pub fn c_final(&self) -> &GrowthField {
        self.snapshots.last().expect("initial snapshot always present")
    }

    /// `(t, J_out)` at the macro times.
    pub fn jout_trace(&self) -> Vec<(f64, f64)> {
        let mut v: Vec<(f64, f64)> = self.records.iter().map(|r| (r.time, r.jout)).collect();
        if let Some(j) = self.jout_final {
            v.push((self.schedule.horizon, j));
        }
        v
    }
}

/// Period-averaged outflow normalised by the ungrown baseline.
pub fn outflow_functional(cycle: &CycleResult, baseline: f64) -> f64 {
    if baseline == 0.0 {
        0.0
    } else {
        cycle.outflow_mean / baseline
    }
}

/// Convergence order and Aitken limit from values at `h`, `h/2`, `h/4`.
pub fn richardson_rate(j1: f64, j2: f64, j3: f64) -> Result<(f64, f64), MultiscaleError> {
    let d1 = j1 - j2;
    let d2 = j2 - j3;
    let denom = j1 - 2.0 * j2 + j3;
    let scale = j1.abs().max(j2.abs()).max(j3.abs()).max(f64::MIN_POSITIVE);
    if d1 == 0.0 || d2 == 0.0 || d1.signum() != d2.signum() {
        return Err(MultiscaleError::NonConvergent(format!("differences {d1:e}, {d2:e} do not share a sign")));
    }
    if denom.abs() <= 1e-14 * scale {
        return Err(MultiscaleError::NonConvergent("second difference vanishes".into()));
    }
    Ok(((d1 / d2).log2(), (j1 * j3 - j2 * j2) / denom))
}

/// Wall nodes of the channel grid carrying `value`, arc lengths on the
/// mapped walls.
pub fn initial_growth(cfg: &RunConfig, value: f64) -> Result<GrowthField, MultiscaleError> {
    let grid = cfg.channel_grid().map_err(|e| MultiscaleError::Schedule(e.to_string()))?;
    let x1: Vec<f64> = (0..=grid.nx).map(|i| grid.coords(i, 0).0).collect();
    let mut c = GrowthField::uniform(&x1, value)?;
    c.refresh_arc_lengths(&cfg.geometry)?;
    Ok(c)
}

/// Flow solver on the domain deformed by `c`.
pub fn build_solver(cfg: &RunConfig, c: &GrowthField) -> Result<MicroSolver, MultiscaleError> {
    let grid = cfg.channel_grid().map_err(|e| MultiscaleError::Schedule(e.to_string()))?;
    let disc = Discretization::new(grid, vessel_map(cfg, c))?;
    let mut s = MicroSolver::new(disc, cfg.fluid, Forcing::pressure_drop(cfg.pressure.clone()), cfg.schedule.micro_step)?;
    s.window = cfg.wall.window;
    Ok(s)
}

pub(crate) fn vessel_map(cfg: &RunConfig, c: &GrowthField) -> DomainMap {
    DomainMap::Vessel { geometry: cfg.geometry, growth: c.clone() }
}

pub(crate) fn periodic_solve(cfg: &RunConfig, solver: &mut MicroSolver, warm: &[f64]) -> Result<PeriodicSolution, FlowError> {
    solve_periodic(solver, warm, cfg.periodic.mode, cfg.periodic.eps_p, cfg.periodic.max_cycles)
}

/// Outcome of one macro iteration.
#[derive(Debug, Clone)]
pub struct MacroOutcome {
    pub periodic: PeriodicSolution,
    pub rbar: Walls<WallField>,
    pub next: GrowthField,
}

/// One macro step from `c_prev`: periodic flow, averaged reaction, growth
/// update. The solver's map is rebuilt from `c_prev`.
pub fn macro_iteration(
    cfg: &RunConfig,
    solver: &mut MicroSolver,
    c_prev: &GrowthField,
    warm: &[f64],
    rbar_prev: Option<&Walls<WallField>>,
) -> Result<MacroOutcome, MultiscaleError> {
    solver.set_map(vessel_map(cfg, c_prev))?;
    let periodic = periodic_solve(cfg, solver, warm)?;
    if !periodic.report.converged {
        return Ok(MacroOutcome { rbar: Walls { lower: c_prev.walls.lower.clone(), upper: c_prev.walls.upper.clone() }, next: c_prev.clone(), periodic });
    }
    let rbar = averaged_reaction(c_prev, &periodic.last_cycle.traces, cfg.schedule.micro_step, &cfg.growth)?;
    let scheme = match (cfg.scheme.macro_scheme, rbar_prev) {
        (MacroScheme::AdamsBashforth2, None) => MacroScheme::SemiImplicitEuler,
        (s, _) => s,
    };
    let mut next = macro_step(c_prev, &rbar, rbar_prev, cfg.schedule.macro_step(), &cfg.growth, scheme)?;
    next.refresh_arc_lengths(&cfg.geometry)?;
    Ok(MacroOutcome { periodic, rbar, next })
}

/// Ungrown reference outflow (periodic, `c̄ ≡ 0`) with its periodic state.
pub fn baseline(cfg: &RunConfig) -> Result<(f64, Vec<f64>), MultiscaleError> {
    let c0 = initial_growth(cfg, 0.0)?;
    let mut s = build_solver(cfg, &c0)?;
    s.record_wss = false;
    let rest = s.rest();
    let sol = periodic_solve(cfg, &mut s, &rest)?;
    if !sol.report.converged {
        return Err(MultiscaleError::NotConverged {
            step: 0,
            cycles: sol.report.cycles,
            partial: Box::new(empty_run(cfg, 0.0)),
        });
    }
    Ok((sol.last_cycle.outflow_mean, sol.start))
}

fn empty_run(cfg: &RunConfig, baseline_outflow: f64) -> MultiscaleRun {
    MultiscaleRun {
        schedule: cfg.schedule,
        records: Vec::new(),
        reports: Vec::new(),
        jout_final: None,
        baseline_outflow,
        snapshots: Vec::new(),
        wall_seconds: 0.0,
        config_hash: cfg.hash(),
        physics_hash: cfg.physics_hash(),
        counters: SolveCounters::default(),
        warm_starts: Vec::new(),
    }
}

pub fn run_multiscale(cfg: &RunConfig) -> Result<MultiscaleRun, MultiscaleError> {
    cfg.schedule.validate()?;
    let start = Instant::now();
    let c0 = initial_growth(cfg, cfg.wall.initial_c)?;
    let (base, mut warm) = if cfg.wall.initial_c == 0.0 { (None, None) } else {
        let (b, w) = baseline(cfg)?;
        (Some(b), Some(w))
    };
    let mut solver = build_solver(cfg, &c0)?;
    let mut run = empty_run(cfg, base.unwrap_or(0.0));
    run.snapshots.push(c0);
    let mut rbar_prev: Option<Walls<WallField>> = None;

    for n in 1..=cfg.schedule.steps {
        let t0 = Instant::now();
        let c_prev = run.snapshots.last().expect("non-empty").clone();
        let w = warm.take().unwrap_or_else(|| solver.rest());
        let out = macro_iteration(cfg, &mut solver, &c_prev, &w, rbar_prev.as_ref())?;
        run.warm_starts.push(w);
        let rep = out.periodic.report.clone();
        if n == 1 && base.is_none() {
            run.baseline_outflow = out.periodic.last_cycle.outflow_mean;
        }
        run.records.push(MacroRecord {
            step: n,
            time: (n - 1) as f64 * cfg.schedule.macro_step(),
            jout: outflow_functional(&out.periodic.last_cycle, run.baseline_outflow),
            cycles: rep.cycles,
            converged: rep.converged,
            stationary_solves: rep.stationary_solves,
            max_c: c_prev.max(),
            seconds: t0.elapsed().as_secs_f64(),
        });
        run.reports.push(rep.clone());
        if !rep.converged {
            run.wall_seconds = start.elapsed().as_secs_f64();
            run.counters = solver.counters;
            return Err(MultiscaleError::NotConverged { step: n, cycles: rep.cycles, partial: Box::new(run) });
        }
        log::info!(
            "macro step {n}/{}: {} cycles, J_out {:.6}, max c {:.4}",
            cfg.schedule.steps,
            rep.cycles,
            run.records[n - 1].jout,
            out.next.max()
        );
        warm = Some(out.periodic.start);
        run.snapshots.push(out.next);
        rbar_prev = Some(out.rbar);
    }

    let c_last = run.snapshots.last().expect("non-empty").clone();
    solver.set_map(vessel_map(cfg, &c_last))?;
    solver.record_wss = false;
    let w = warm.take().unwrap_or_else(|| solver.rest());
    let fin = periodic_solve(cfg, &mut solver, &w)?;
    if fin.report.converged {
        run.jout_final = Some(outflow_functional(&fin.last_cycle, run.baseline_outflow));
    }
    run.reports.push(fin.report.clone());
    run.wall_seconds = start.elapsed().as_secs_f64();
    run.counters = solver.counters;
    if !fin.report.converged {
        let cycles = fin.report.cycles;
        return Err(MultiscaleError::NotConverged { step: cfg.schedule.steps + 1, cycles, partial: Box::new(run) });
    }
    Ok(run)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn richardson_table_rows() {
        let (r, e) = richardson_rate(0.9359, 0.9138, 0.9043).unwrap();
        assert!((r - 1.22).abs() < 0.01);
        assert!((e - 0.8971).abs() < 0.0002);
        let (r, _) = richardson_rate(0.9132, 0.9138, 0.9140).unwrap();
        assert!((r - 1.58).abs() < 0.01);
    }

    #[test]
    fn richardson_exact_geometric() {
        for p in [1.0, 1.5, 2.0] {
            let j = |i: i32| 0.75 + 0.3 * 2f64.powf(-(i as f64) * p);
            let (r, e) = richardson_rate(j(0), j(1), j(2)).unwrap();
            assert!((r - p).abs() < 1e-12);
            assert!((e - 0.75).abs() < 1e-14);
        }
    }

    #[test]
    fn richardson_rejects_bad_sequences() {
        assert!(richardson_rate(1.0, 0.9, 0.95).is_err());
        assert!(richardson_rate(1.0, 1.0, 0.9).is_err());
    }

    #[test]
    fn schedule_checks() {
        let s = MacroSchedule::default();
        s.validate().unwrap();
        assert_eq!(s.macro_step(), 64.0);
        assert_eq!(s.micro_steps_per_period(), 50);
        assert_eq!(s.times().len(), 17);
        assert!(MacroSchedule { micro_step: 0.03, ..s }.validate().is_err());
        assert!(MacroSchedule { horizon: 8.0, steps: 16, ..s }.validate().is_err());
    }
}
