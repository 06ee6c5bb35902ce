mod common;

use pulsegrowth::multiscale::{build_solver, initial_growth};
use pulsegrowth::periodic::{periodicity_error, solve_periodic, CavityProblem, PeriodicMode, PeriodicSolveReport};

fn monotone_after_transient(r: &PeriodicSolveReport) -> bool {
    r.error_history.iter().skip(3).collect::<Vec<_>>().windows(2).all(|w| w[1] < w[0])
}

#[test]
fn forward_errors_decrease_after_transient() {
    for nu in [0.1, 0.05] {
        let sol = CavityProblem { nu, ..Default::default() }.solve(PeriodicMode::Forward).unwrap();
        assert!(sol.report.converged);
        assert!(monotone_after_transient(&sol.report), "nu {nu}: {:?}", sol.report.error_history);
    }
    let cfg = common::small_config();
    let c = initial_growth(&cfg, 0.2).unwrap();
    let mut s = build_solver(&cfg, &c).unwrap();
    s.record_wss = false;
    let x0 = s.rest();
    let sol = solve_periodic(&mut s, &x0, PeriodicMode::Forward, 1e-8, 50).unwrap();
    assert!(sol.report.converged);
    assert!(monotone_after_transient(&sol.report), "{:?}", sol.report.error_history);
}

#[test]
fn both_modes_reach_the_same_periodic_state() {
    let p = CavityProblem::default();
    let f = p.solve(PeriodicMode::Forward).unwrap();
    let a = p.solve(PeriodicMode::Averaging).unwrap();
    assert!(f.report.converged && a.report.converged);
    assert!(*a.report.error_history.last().unwrap() < p.eps_p);
    let s = p.solver().unwrap();
    let dist = periodicity_error(&s.disc, &s.disc.unpack_velocity(&a.start), &s.disc.unpack_velocity(&f.start)).unwrap();
    assert!(dist < 10.0 * p.eps_p, "distance {dist}");
}

#[test]
fn averaging_costs_one_stationary_solve_per_corrected_cycle() {
    let p = CavityProblem::default();
    let a = p.solve(PeriodicMode::Averaging).unwrap();
    assert_eq!(a.report.stationary_solves, a.report.cycles - 1);
    let f = p.solve(PeriodicMode::Forward).unwrap();
    assert_eq!(f.report.stationary_solves, 0);
}

#[test]
fn gradient_defect_is_absorbed_by_pressure() {
    let p = CavityProblem { n: 8, ..Default::default() };
    let mut s = p.solver().unwrap();
    let q = s.disc.pressure_grid().scalar(|x, y| x * y + (x - y).sin());
    let d = s.disc.discrete_gradient(&q).unwrap();
    let dmax = d.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    assert!(dmax > 0.1);
    let zero = s.rest();
    let w = s.averaging_correction(&d, &zero).unwrap();
    let nv = s.disc.velocity_unknowns();
    let wmax = w[..nv].iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let qmax = w[nv..].iter().fold(0.0f64, |m, x| m.max(x.abs()));
    assert!(wmax < 1e-12 * dmax, "velocity correction {wmax}");
    assert!(qmax > 0.1);
}
