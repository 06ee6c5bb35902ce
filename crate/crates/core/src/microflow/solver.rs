//! θ-scheme time stepping, cycle integration and the stationary correction
//! solve.

use serde::{Deserialize, Serialize};

use super::fem::{Discretization, DomainMap};
use super::sparse::Factors;
use super::{FlowError, FlowMode, FlowState, FluidParams, Forcing, WssWindow};
use crate::grid::WallField;
use crate::growth::Walls;

/// Relative divergence residual accepted after a step.
pub const DIV_TOL: f64 = 1e-8;
/// Relative update size that ends the nonlinear iteration.
pub const NONLINEAR_TOL: f64 = 1e-10;
const MAX_FIXED_POINT: usize = 40;
const MAX_NEWTON: usize = 8;

/// Work counters; the averaging scheme's extra stationary solves are
/// tracked separately from time steps.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SolveCounters {
    pub steps: usize,
    pub factorizations: usize,
    pub stationary_solves: usize,
    pub nonlinear_iterations: usize,
    pub newton_fallbacks: usize,
}

/// Outcome of one period of time stepping.
#[derive(Debug, Clone)]
pub struct CycleResult {
    /// Unknowns at the end of the cycle.
    pub end: Vec<f64>,
    /// θ-weighted time average `k Σ (θ xₘ + (1−θ) xₘ₋₁)`.
    pub average: Vec<f64>,
    /// Wall stress per step, sampled at the step midpoints.
    pub traces: Vec<Walls<WallField>>,
    /// Outflow rate per step at the step midpoints.
    pub outflow: Vec<f64>,
    pub outflow_mean: f64,
    pub max_divergence: f64,
    pub max_velocity: f64,
}

#[derive(Debug, Clone)]
pub struct MicroSolver {
    pub disc: Discretization,
    pub fluid: FluidParams,
    pub forcing: Forcing,
    pub dt: f64,
    pub theta: f64,
    pub window: WssWindow,
    /// Record wall stress traces during cycles.
    pub record_wss: bool,
    step_matrix: Vec<f64>,
    step_lu: Option<Factors>,
    stationary_lu: Option<Factors>,
    pub counters: SolveCounters,
    /// Divergence residual of the last accepted step.
    pub last_divergence: f64,
}

impl MicroSolver {
    pub fn new(disc: Discretization, fluid: FluidParams, forcing: Forcing, dt: f64) -> Result<Self, FlowError> {
        steps_per_period(dt)?;
        fluid.validate(dt)?;
        if let Some(p) = &forcing.inflow_pressure {
            p.validate()?;
        }
        let mut s = Self {
            disc,
            fluid,
            forcing,
            dt,
            theta: fluid.theta_for(dt),
            window: WssWindow::default(),
            record_wss: true,
            step_matrix: Vec::new(),
            step_lu: None,
            stationary_lu: None,
            counters: SolveCounters::default(),
            last_divergence: 0.0,
        };
        s.rebuild_step_matrix();
        Ok(s)
    }

    /// Replaces the frozen domain map, keeping the pattern and counters.
    pub fn set_map(&mut self, map: DomainMap) -> Result<(), FlowError> {
        self.disc = self.disc.remap(map)?;
        self.rebuild_step_matrix();
        Ok(())
    }

    fn rebuild_step_matrix(&mut self) {
        let d = &self.disc;
        let (rho, nu) = (self.fluid.rho_f, self.fluid.nu_f);
        let a = rho / self.dt;
        let b = self.theta * rho * nu;
        self.step_matrix = d.mass.iter().zip(&d.stiff).zip(&d.div).map(|((m, k), q)| a * m + b * k + q).collect();
        self.step_lu = None;
        self.stationary_lu = None;
    }

    pub fn steps_per_period(&self) -> usize {
        steps_per_period(self.dt).expect("validated at construction")
    }

    pub fn rest(&self) -> Vec<f64> {
        vec![0.0; self.disc.unknowns()]
    }

    pub fn to_state(&self, x: &[f64], t: f64) -> FlowState {
        FlowState { v: self.disc.unpack_velocity(x), p: self.disc.unpack_pressure(x), t }
    }

    pub fn from_state(&self, s: &FlowState) -> Result<Vec<f64>, FlowError> {
        self.disc.pack(&s.v, &s.p)
    }

    /// Right-hand side contribution of the forcing at time `t`.
    pub fn load(&self, t: f64) -> Vec<f64> {
        let d = &self.disc;
        let mut f = match &self.forcing.body_force {
            Some(b) => d.body_load(&*b.0, t, self.fluid.rho_f),
            None => vec![0.0; d.unknowns()],
        };
        if let Some(p) = &self.forcing.inflow_pressure {
            let pin = p.eval(t);
            for (fi, l) in f.iter_mut().zip(&d.inflow_load) {
                *fi += pin * l;
            }
        }
        f
    }

    fn factor(&mut self, vals: &[f64]) -> Result<Factors, FlowError> {
        self.counters.factorizations += 1;
        let topo = &self.disc.topo;
        topo.factorizer.factor(&topo.pattern, vals)
    }

    fn step_factors(&mut self) -> Result<Factors, FlowError> {
        if self.step_lu.is_none() {
            let vals = self.step_matrix.clone();
            self.step_lu = Some(self.factor(&vals)?);
        }
        Ok(self.step_lu.clone().expect("just set"))
    }

    fn is_nonlinear(&self) -> bool {
        self.fluid.mode == FlowMode::NavierStokes
    }

    /// One θ-step from `x_old` at `t_old` to `t_old + dt`.
    pub fn theta_step(&mut self, x_old: &[f64], t_old: f64) -> Result<Vec<f64>, FlowError> {
        self.theta_step_with_guess(x_old, t_old, None)
    }

    /// θ-step whose nonlinear iteration starts from `guess` (default `x_old`).
    /// The converged result does not depend on the guess beyond the
    /// iteration tolerance.
    pub fn theta_step_with_guess(&mut self, x_old: &[f64], t_old: f64, guess: Option<&[f64]>) -> Result<Vec<f64>, FlowError> {
        let (k, th) = (self.dt, self.theta);
        let (rho, nu) = (self.fluid.rho_f, self.fluid.nu_f);
        let d = &self.disc;
        let pat = &d.topo.pattern;
        let mut rhs = vec![0.0; d.unknowns()];
        pat.mul_add(&d.mass, x_old, rho / k, &mut rhs);
        pat.mul_add(&d.stiff, x_old, -(1.0 - th) * rho * nu, &mut rhs);
        if self.is_nonlinear() && th < 1.0 {
            let (n_old, _) = d.convection(x_old, rho, false);
            for (r, n) in rhs.iter_mut().zip(&n_old) {
                *r -= (1.0 - th) * n;
            }
        }
        let f_new = self.load(t_old + k);
        let f_old = self.load(t_old);
        for ((r, a), b) in rhs.iter_mut().zip(&f_new).zip(&f_old) {
            *r += th * a + (1.0 - th) * b;
        }

        let lu = self.step_factors()?;
        let x = if self.is_nonlinear() { self.nonlinear_solve(&lu, &rhs, guess.unwrap_or(x_old))? } else {
            let mut x = rhs;
            lu.solve_in_place(&mut x)?;
            x
        };
        let residual = self.disc.divergence_residual(&x);
        self.last_divergence = residual;
        if !(residual <= DIV_TOL) {
            return Err(FlowError::Divergence { residual, tolerance: DIV_TOL });
        }
        self.counters.steps += 1;
        Ok(x)
    }

    /// Solves `S x + θ N(x) = rhs`. A fixed-point iteration on the factored
    /// linear part runs first; Newton with refactorisation takes over if it
    /// stalls.
    fn nonlinear_solve(&mut self, lu: &Factors, rhs: &[f64], guess: &[f64]) -> Result<Vec<f64>, FlowError> {
        let th = self.theta;
        let rho = self.fluid.rho_f;
        let nv = self.disc.velocity_unknowns();
        let vmax = |x: &[f64]| x[..nv].iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let residual = |s: &Self, x: &[f64]| -> Vec<f64> {
            let (n, _) = s.disc.convection(x, rho, false);
            let sx = s.disc.topo.pattern.mul(&s.step_matrix, x);
            rhs.iter().zip(&sx).zip(&n).map(|((r, a), b)| r - a - th * b).collect()
        };

        let mut x = guess.to_vec();
        let mut last = f64::INFINITY;
        for _ in 0..MAX_FIXED_POINT {
            self.counters.nonlinear_iterations += 1;
            let mut dx = residual(self, &x);
            lu.solve_in_place(&mut dx)?;
            let upd = vmax(&dx);
            for (a, b) in x.iter_mut().zip(&dx) {
                *a += b;
            }
            if upd <= NONLINEAR_TOL * vmax(&x).max(1e-30) || upd == 0.0 {
                return Ok(x);
            }
            if upd > 0.7 * last {
                break;
            }
            last = upd;
        }

        self.counters.newton_fallbacks += 1;
        let mut x = guess.to_vec();
        let mut upd = f64::INFINITY;
        for _ in 0..MAX_NEWTON {
            self.counters.nonlinear_iterations += 1;
            let (_, jac) = self.disc.convection(&x, rho, true);
            let jac = jac.expect("jacobian requested");
            let vals: Vec<f64> = self.step_matrix.iter().zip(&jac).map(|(s, j)| s + th * j).collect();
            let f = self.factor(&vals)?;
            let mut dx = residual(self, &x);
            f.solve_in_place(&mut dx)?;
            upd = vmax(&dx);
            for (a, b) in x.iter_mut().zip(&dx) {
                *a += b;
            }
            if upd <= NONLINEAR_TOL * vmax(&x).max(1e-30) {
                return Ok(x);
            }
        }
        Err(FlowError::Nonlinear { update: upd })
    }

    /// Integrates one period starting at `t0`.
    pub fn cycle_integrate(&mut self, x0: &[f64], t0: f64) -> Result<CycleResult, FlowError> {
        let m = self.steps_per_period();
        let (k, th) = (self.dt, self.theta);
        let nv = self.disc.velocity_unknowns();
        let mut x = x0.to_vec();
        let mut average = vec![0.0; x.len()];
        let mut traces = Vec::with_capacity(if self.record_wss { m } else { 0 });
        let mut outflow = Vec::with_capacity(m);
        let mut max_div = 0.0f64;
        let mut max_v = 0.0f64;
        let mut prev: Option<Vec<f64>> = None;
        for step in 0..m {
            let t = t0 + step as f64 * k;
            let guess = prev.as_ref().map(|p| x.iter().zip(p).map(|(a, b)| 2.0 * a - b).collect::<Vec<f64>>());
            let next = self.theta_step_with_guess(&x, t, guess.as_deref())?;
            for ((a, new), old) in average.iter_mut().zip(&next).zip(&x) {
                *a += k * (th * new + (1.0 - th) * old);
            }
            let mut mid: Vec<f64> = next.clone();
            for i in 0..nv {
                mid[i] = 0.5 * (next[i] + x[i]);
            }
            outflow.push(self.disc.outflow_rate(&mid));
            if self.record_wss {
                traces.push(self.disc.wall_shear_stress(&mid, &self.fluid, self.window));
            }
            max_div = max_div.max(self.last_divergence);
            prev = Some(std::mem::replace(&mut x, next));
            max_v = max_v.max(self.disc.unpack_velocity(&x).max_magnitude());
        }
        let outflow_mean = outflow.iter().sum::<f64>() / m as f64;
        Ok(CycleResult { end: x, average, traces, outflow, outflow_mean, max_divergence: max_div, max_velocity: max_v })
    }

    /// Solves the stationary linearised problem
    /// `[ρνK (+ρDN(v̄)), −Bᵀ; −B, 0] [w; q] = [ρ M d; 0]`
    /// for the defect `d = v(1) − v(0)`.
    pub fn averaging_correction(&mut self, defect: &[f64], vbar: &[f64]) -> Result<Vec<f64>, FlowError> {
        let (rho, nu) = (self.fluid.rho_f, self.fluid.nu_f);
        let nv = self.disc.velocity_unknowns();
        let mut dv = defect.to_vec();
        dv[nv..].iter_mut().for_each(|v| *v = 0.0);
        let mut rhs = vec![0.0; dv.len()];
        self.disc.topo.pattern.mul_add(&self.disc.mass, &dv, rho, &mut rhs);
        let base = |s: &Self| -> Vec<f64> { s.disc.stiff.iter().zip(&s.disc.div).map(|(k, q)| rho * nu * k + q).collect() };
        let lu = if self.is_nonlinear() {
            let (_, jac) = self.disc.convection(vbar, rho, true);
            let vals: Vec<f64> = base(self).iter().zip(&jac.expect("jacobian requested")).map(|(a, b)| a + b).collect();
            self.factor(&vals)?
        } else {
            if self.stationary_lu.is_none() {
                let vals = base(self);
                self.stationary_lu = Some(self.factor(&vals)?);
            }
            self.stationary_lu.clone().expect("just set")
        };
        lu.solve_in_place(&mut rhs)?;
        self.counters.stationary_solves += 1;
        Ok(rhs)
    }

    /// Steady Stokes solution for the forcing frozen at time `t`.
    pub fn steady_stokes(&mut self, t: f64) -> Result<Vec<f64>, FlowError> {
        let (rho, nu) = (self.fluid.rho_f, self.fluid.nu_f);
        let vals: Vec<f64> = self.disc.stiff.iter().zip(&self.disc.div).map(|(k, q)| rho * nu * k + q).collect();
        let lu = self.factor(&vals)?;
        let mut x = self.load(t);
        lu.solve_in_place(&mut x)?;
        Ok(x)
    }
}

fn steps_per_period(dt: f64) -> Result<usize, FlowError> {
    if !(dt > 0.0 && dt <= 1.0) {
        return Err(FlowError::Period { dt });
    }
    let m = (1.0 / dt).round();
    if (m * dt - 1.0).abs() > 1e-9 {
        return Err(FlowError::Period { dt });
    }
    Ok(m as usize)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid;
    use crate::microflow::{BodyForce, PressureProfile};

    fn channel_solver(mode: FlowMode, p: f64, dt: f64) -> MicroSolver {
        let d = Discretization::new(Grid::channel(2.0, 0.2, 16, 8).unwrap(), DomainMap::Identity).unwrap();
        let fluid = FluidParams { mode, ..Default::default() };
        MicroSolver::new(d, fluid, Forcing::pressure_drop(PressureProfile::constant(p)), dt).unwrap()
    }

    #[test]
    fn rest_stays_at_rest() {
        for mode in [FlowMode::Stokes, FlowMode::NavierStokes] {
            let mut s = channel_solver(mode, 0.0, 0.1);
            let mut x = s.rest();
            for n in 0..5 {
                x = s.theta_step(&x, n as f64 * 0.1).unwrap();
            }
            assert!(x.iter().all(|v| *v == 0.0));
        }
    }

    #[test]
    fn rejects_non_dividing_step() {
        let d = Discretization::new(Grid::channel(2.0, 0.2, 16, 8).unwrap(), DomainMap::Identity).unwrap();
        assert!(matches!(
            MicroSolver::new(d, FluidParams::default(), Forcing::none(), 0.3),
            Err(FlowError::Period { .. })
        ));
    }

    #[test]
    fn first_iterate_from_rest_matches_stokes() {
        let mut a = channel_solver(FlowMode::Stokes, 5.0, 0.05);
        let mut b = channel_solver(FlowMode::NavierStokes, 5.0, 0.05);
        let xs = a.theta_step(&a.rest(), 0.0).unwrap();
        let xn = b.theta_step(&b.rest(), 0.0).unwrap();
        // Convection is weak here: the states agree closely but not exactly.
        let diff = xs.iter().zip(&xn).fold(0.0f64, |m, (p, q)| m.max((p - q).abs()));
        assert!(diff < 1e-2 * xs.iter().fold(0.0f64, |m, v| m.max(v.abs())));
    }

    #[test]
    fn stokes_correction_is_linear() {
        let g = Grid::cavity((-2.0, -2.0), (2.0, 2.0), 8, 8).unwrap();
        let d = Discretization::new(g, DomainMap::Identity).unwrap();
        let fluid = FluidParams { mode: FlowMode::Stokes, nu_f: 0.1, rho_f: 1.0, theta: None };
        let mut s = MicroSolver::new(d, fluid, Forcing::body(BodyForce::cavity()), 0.05).unwrap();
        let r = s.cycle_integrate(&s.rest(), 0.0).unwrap();
        let w1 = s.averaging_correction(&r.end, &r.average).unwrap();
        let scaled: Vec<f64> = r.end.iter().map(|v| 3.0 * v).collect();
        let w3 = s.averaging_correction(&scaled, &r.average).unwrap();
        for (a, b) in w1.iter().zip(&w3) {
            assert!((3.0 * a - b).abs() < 1e-10 * (1.0 + b.abs()));
        }
        let zero = s.averaging_correction(&s.rest(), &r.average).unwrap();
        assert!(zero.iter().all(|v| *v == 0.0));
        assert_eq!(s.counters.stationary_solves, 3);
        assert_eq!(s.counters.steps, 20);
    }
}
