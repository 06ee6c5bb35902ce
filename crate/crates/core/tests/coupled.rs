mod common;

use common::small_config;
use pulsegrowth::config::RunConfig;
use pulsegrowth::microflow::{FlowMode, PressureProfile};
use pulsegrowth::multiscale::{build_solver, initial_growth, macro_iteration, run_multiscale};
use pulsegrowth::oracle::{compare, run_resolved};
use pulsegrowth::periodic::{periodicity_error, solve_periodic};

#[test]
fn frozen_growth_without_reaction() {
    let mut cfg = small_config();
    cfg.growth.alpha = 0.0;
    cfg.wall.initial_c = 0.2;
    let run = run_multiscale(&cfg).unwrap();
    for s in &run.snapshots {
        assert_eq!(s.walls, run.snapshots[0].walls);
    }
    for r in &run.records[1..] {
        assert!(r.cycles <= 2, "warm started step took {} cycles", r.cycles);
    }
    let resolved = run_resolved(&cfg).unwrap();
    assert_eq!(resolved.c_final().walls, run.c_final().walls);
    let cmp = compare(&resolved, &run).unwrap();
    assert_eq!(cmp.linf_rel, 0.0);
    assert_eq!(cmp.l2_rel, 0.0);
}

#[test]
fn macro_step_replays_bit_identically() {
    let cfg = small_config();
    let run = run_multiscale(&cfg).unwrap();
    let n = 2;
    let c_prev = &run.snapshots[n - 1];
    let mut solver = build_solver(&cfg, c_prev).unwrap();
    let out = macro_iteration(&cfg, &mut solver, c_prev, &run.warm_starts[n - 1], None).unwrap();
    assert_eq!(out.next.walls, run.snapshots[n].walls);
    let again = run_multiscale(&cfg).unwrap();
    assert_eq!(again.c_final().walls, run.c_final().walls);
    assert_eq!(again.jout_trace(), run.jout_trace());
}

#[test]
fn warm_start_keeps_the_fixed_point() {
    let cfg = small_config();
    let run = run_multiscale(&cfg).unwrap();
    let c = run.snapshots[3].clone();
    let mut s = build_solver(&cfg, &c).unwrap();
    s.record_wss = false;
    let cold0 = s.rest();
    let cold = solve_periodic(&mut s, &cold0, cfg.periodic.mode, cfg.periodic.eps_p, 50).unwrap();
    let warm = solve_periodic(&mut s, &run.warm_starts[3], cfg.periodic.mode, cfg.periodic.eps_p, 50).unwrap();
    assert!(cold.report.converged && warm.report.converged);
    assert!(warm.report.cycles < cold.report.cycles);
    let d = periodicity_error(&s.disc, &s.disc.unpack_velocity(&warm.start), &s.disc.unpack_velocity(&cold.start)).unwrap();
    assert!(d < 10.0 * cfg.periodic.eps_p, "distance {d}");
}

#[test]
fn outflow_follows_cubic_law_for_uniform_narrowing() {
    let mut cfg = small_config();
    cfg.geometry.stent.rho_stent = 0.0;
    cfg.geometry.centerline.coefficient = 0.0;
    cfg.fluid.mode = FlowMode::Stokes;
    let flow = |value: f64| {
        let c = initial_growth(&cfg, value).unwrap();
        let mut s = build_solver(&cfg, &c).unwrap();
        s.record_wss = false;
        let x0 = s.rest();
        let sol = solve_periodic(&mut s, &x0, cfg.periodic.mode, 1e-8, 50).unwrap();
        sol.last_cycle.outflow_mean
    };
    let j = flow(0.1) / flow(0.0);
    assert!((j - 0.729).abs() < 0.0729, "J_out {j}");
}

#[test]
fn zero_pressure_drop_gives_zero_outflow() {
    let mut cfg = small_config();
    cfg.pressure = PressureProfile::constant(0.0);
    let run = run_multiscale(&cfg).unwrap();
    assert!(run.jout_trace().iter().all(|(_, j)| *j == 0.0));
}

fn oracle_config(alpha: f64) -> RunConfig {
    let mut cfg = small_config();
    cfg.schedule.horizon = 32.0;
    cfg.growth.alpha = alpha;
    cfg
}

#[test]
fn comparison_against_the_resolved_run() {
    let cfg = oracle_config(2e-3);
    let resolved = run_resolved(&cfg).unwrap();
    let again = run_resolved(&cfg).unwrap();
    assert_eq!(again.c_final().walls, resolved.c_final().walls);
    let same = compare(&resolved, &resolved).unwrap();
    assert_eq!((same.linf_rel, same.l2_rel, same.speedup), (0.0, 0.0, 1.0));

    let err = |cfg: &RunConfig, reference| compare(reference, &run_multiscale(cfg).unwrap()).unwrap().linf_rel;
    let mut errors = Vec::new();
    for steps in [2, 4, 8] {
        let mut c = cfg.clone();
        c.schedule.steps = steps;
        errors.push(err(&c, &resolved));
    }
    assert!(errors.windows(2).all(|w| w[1] < w[0]), "errors under K halving {errors:?}");

    let weak = oracle_config(4e-3);
    let weak_ref = run_resolved(&weak).unwrap();
    let mut c = weak.clone();
    c.schedule.steps = 2;
    let e_weak = err(&c, &weak_ref);
    assert!(e_weak > errors[0], "doubling alpha: {e_weak} vs {}", errors[0]);

    let mut other = cfg.clone();
    other.growth.beta = 2.0;
    assert!(compare(&resolved, &run_multiscale(&other).unwrap()).is_err());
}
