//! Brute-force reference: flow and growth advanced together at the micro
//! step over the whole horizon, with the instantaneous reaction.

use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::RunConfig;
use crate::growth::{macro_step, reaction, GrowthError, GrowthField, MacroScheme};
use crate::microflow::{FlowError, SolveCounters};
use crate::multiscale::{baseline, build_solver, initial_growth, periodic_solve, vessel_map, MultiscaleError, MultiscaleRun};
use crate::periodic::PeriodicSolveReport;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("resolved run needs {steps} micro steps, budget is {limit}")]
    Budget { steps: u64, limit: u64 },
    #[error("config mismatch: {0} vs {1}")]
    ConfigMismatch(String, String),
    #[error("initial periodic solve did not converge")]
    NotConverged,
    #[error(transparent)]
    Run(#[from] MultiscaleError),
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error(transparent)]
    Growth(#[from] GrowthError),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ResolvedRun {
    /// Growth at the macro times of the configured schedule, `c(0)` first.
    pub snapshots: Vec<GrowthField>,
    /// `(end of period, J_out)` for every period.
    pub jout_trace: Vec<(f64, f64)>,
    pub total_steps: u64,
    pub map_refresh: usize,
    pub baseline_outflow: f64,
    pub wall_seconds: f64,
    pub config_hash: String,
    pub physics_hash: String,
    pub counters: SolveCounters,
    /// Periodic solve on the initial domain that provides the start state.
    pub initial_periodic: PeriodicSolveReport,
}

impl ResolvedRun {
    pub fn c_final(&self) -> &GrowthField {
        self.snapshots.last().expect("initial snapshot always present")
    }
}

/// Common view of resolved and multiscale runs.
pub trait GrowthRun {
    fn final_growth(&self) -> &GrowthField;
    /// `(t, J_out)` pairs.
    fn jout(&self) -> Vec<(f64, f64)>;
    fn seconds(&self) -> f64;
    fn physics_hash(&self) -> &str;
}

impl GrowthRun for ResolvedRun {
    fn final_growth(&self) -> &GrowthField {
        self.c_final()
    }
    fn jout(&self) -> Vec<(f64, f64)> {
        self.jout_trace.clone()
    }
    fn seconds(&self) -> f64 {
        self.wall_seconds
    }
    fn physics_hash(&self) -> &str {
        &self.physics_hash
    }
}

impl GrowthRun for MultiscaleRun {
    fn final_growth(&self) -> &GrowthField {
        self.c_final()
    }
    fn jout(&self) -> Vec<(f64, f64)> {
        self.jout_trace()
    }
    fn seconds(&self) -> f64 {
        self.wall_seconds
    }
    fn physics_hash(&self) -> &str {
        &self.physics_hash
    }
}

pub fn run_resolved(cfg: &RunConfig) -> Result<ResolvedRun, OracleError> {
    cfg.schedule.validate()?;
    let m = cfg.schedule.micro_steps_per_period();
    let k = cfg.schedule.micro_step;
    let total = (cfg.schedule.horizon / k).round() as u64;
    if total > cfg.oracle.max_steps {
        return Err(OracleError::Budget { steps: total, limit: cfg.oracle.max_steps });
    }
    let refresh = cfg.oracle.map_refresh.unwrap_or(m);
    let per_macro = (cfg.schedule.macro_step() / k).round() as u64;
    let start = Instant::now();

    let mut c = initial_growth(cfg, cfg.wall.initial_c)?;
    let mut solver = build_solver(cfg, &c)?;
    solver.record_wss = false;
    let rest = solver.rest();
    let init = periodic_solve(cfg, &mut solver, &rest)?;
    if !init.report.converged {
        return Err(OracleError::NotConverged);
    }
    let base = if cfg.wall.initial_c == 0.0 { init.last_cycle.outflow_mean } else { baseline(cfg)?.0 };

    let nv = solver.disc.velocity_unknowns();
    let mut x = init.start.clone();
    let mut snapshots = vec![c.clone()];
    let mut jout_trace = Vec::with_capacity((total / m as u64) as usize);
    let mut period_flow = 0.0;
    for s in 0..total {
        if s > 0 && s % refresh as u64 == 0 {
            solver.set_map(vessel_map(cfg, &c))?;
        }
        let t = s as f64 * k;
        let next = solver.theta_step(&x, t)?;
        let mut mid = next.clone();
        for i in 0..nv {
            mid[i] = 0.5 * (next[i] + x[i]);
        }
        period_flow += solver.disc.outflow_rate(&mid);
        let wss = solver.disc.wall_shear_stress(&mid, &solver.fluid, solver.window);
        let r = c.walls.zip_with(&wss, |cv, sv| reaction(cv, sv, &cfg.growth));
        c = macro_step(&c, &r, None, k, &cfg.growth, MacroScheme::SemiImplicitEuler)?;
        if (s + 1) % refresh as u64 == 0 {
            c.refresh_arc_lengths(&cfg.geometry)?;
        }
        x = next;
        if (s + 1) % m as u64 == 0 {
            let mean = period_flow / m as f64;
            jout_trace.push(((s + 1) as f64 * k, if base == 0.0 { 0.0 } else { mean / base }));
            period_flow = 0.0;
        }
        if (s + 1) % per_macro == 0 {
            snapshots.push(c.clone());
        }
    }
    c.refresh_arc_lengths(&cfg.geometry)?;
    if let Some(last) = snapshots.last_mut() {
        *last = c;
    }

    Ok(ResolvedRun {
        snapshots,
        jout_trace,
        total_steps: total,
        map_refresh: refresh,
        baseline_outflow: base,
        wall_seconds: start.elapsed().as_secs_f64(),
        config_hash: cfg.hash(),
        physics_hash: cfg.physics_hash(),
        counters: solver.counters,
        initial_periodic: init.report,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JoutPair {
    pub t: f64,
    pub candidate: f64,
    pub reference: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareReport {
    pub linf_rel: f64,
    pub l2_rel: f64,
    pub jout: Vec<JoutPair>,
    pub jout_max_abs_diff: f64,
    /// Reference wall time over candidate wall time.
    pub speedup: f64,
}

/// Errors of `candidate` against `reference`.
pub fn compare(reference: &dyn GrowthRun, candidate: &dyn GrowthRun) -> Result<CompareReport, OracleError> {
    if reference.physics_hash() != candidate.physics_hash() {
        return Err(OracleError::ConfigMismatch(reference.physics_hash().into(), candidate.physics_hash().into()));
    }
    let a = candidate.final_growth();
    let b = reference.final_growth();
    let (mut max_diff, mut max_ref, mut l2_diff, mut l2_ref) = (0.0f64, 0.0f64, 0.0, 0.0);
    for (wa, wb) in a.walls.iter().zip(b.walls.iter()) {
        let w = wb.arc_measure();
        for i in 0..wb.len() {
            let d = wa.values[i] - wb.values[i];
            max_diff = max_diff.max(d.abs());
            max_ref = max_ref.max(wb.values[i].abs());
            l2_diff += w[i] * d * d;
            l2_ref += w[i] * wb.values[i] * wb.values[i];
        }
    }
    let rel = |num: f64, den: f64| if den > 0.0 { num / den } else if num == 0.0 { 0.0 } else { f64::INFINITY };
    let rtrace = reference.jout();
    let jout: Vec<JoutPair> = candidate
        .jout()
        .into_iter()
        .filter_map(|(t, j)| {
            let nearest = rtrace.iter().min_by(|p, q| (p.0 - t).abs().total_cmp(&(q.0 - t).abs()))?;
            Some(JoutPair { t, candidate: j, reference: nearest.1 })
        })
        .collect();
    let jout_max_abs_diff = jout.iter().fold(0.0f64, |m, p| m.max((p.candidate - p.reference).abs()));
    Ok(CompareReport {
        linf_rel: rel(max_diff, max_ref),
        l2_rel: rel(l2_diff.sqrt(), l2_ref.sqrt()),
        jout,
        jout_max_abs_diff,
        speedup: reference.seconds() / candidate.seconds(),
    })
}
