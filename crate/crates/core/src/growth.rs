//! Slow-scale surface growth: activation windows, the reaction term, its
//! cycle average and the macro time step for the averaged growth variable.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{GeometryError, GrowthSample, Point, VesselGeometry, WallGrowth, C_MAX};
use crate::grid::{GridError, WallField};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GrowthError {
    #[error("traces cover {covered} s instead of one period")]
    TraceMismatch { covered: f64 },
    #[error("tridiagonal solve failed at row {row}")]
    Tridiagonal { row: usize },
    #[error("adams-bashforth step needs the previous averaged reaction")]
    MissingHistory,
    #[error("invalid growth parameters: {0}")]
    InvalidParams(String),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GrowthParams {
    /// Growth rate in s⁻¹; sets the scale separation.
    pub alpha: f64,
    /// Saturation.
    pub beta: f64,
    /// Surface diffusion in cm²/s, a stabiliser only.
    pub lambda_c: f64,
    pub sigma_min: f64,
    pub sigma_max: f64,
}

impl Default for GrowthParams {
    fn default() -> Self {
        Self { alpha: 1e-3, beta: 1.0, lambda_c: 5e-7, sigma_min: 5.0, sigma_max: 8.0 }
    }
}

impl GrowthParams {
    pub fn validate(&self) -> Result<(), GrowthError> {
        if !(self.alpha >= 0.0 && self.beta >= 0.0 && self.lambda_c >= 0.0) {
            return Err(GrowthError::InvalidParams("alpha, beta and lambda_c must be non-negative".into()));
        }
        if !(self.sigma_min < self.sigma_max) {
            return Err(GrowthError::InvalidParams("sigma_min must be below sigma_max".into()));
        }
        Ok(())
    }
}

/// Smooth plateau `Θ(s; x)` of half-width 1 around `center`.
pub fn window(center: f64, x: f64) -> f64 {
    1.0 / (1.0 + (2.0 * (center - 1.0 - x)).exp()) / (1.0 + (2.0 * (x - center - 1.0)).exp())
}

/// Activation band `γ(S)`: close to one between `sigma_min` and `sigma_max`.
pub fn clip(stress: f64, params: &GrowthParams) -> f64 {
    1.0 / (1.0 + (3.0 * (params.sigma_min - stress)).exp()) / (1.0 + (3.0 * (stress - params.sigma_max)).exp())
}

/// Pointwise reaction `R = α/(1+βc) γ(σ_WSS)`; `sigma_wss` already carries the
/// tip windows.
pub fn reaction(c: f64, sigma_wss: f64, params: &GrowthParams) -> f64 {
    params.alpha / (1.0 + params.beta * c) * clip(sigma_wss, params)
}

/// A quantity defined on both walls of the planar vessel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Walls<T> {
    pub lower: T,
    pub upper: T,
}

impl<T> Walls<T> {
    pub fn map<U>(&self, mut f: impl FnMut(&T) -> U) -> Walls<U> {
        Walls { lower: f(&self.lower), upper: f(&self.upper) }
    }

    pub fn try_map<U, E>(&self, mut f: impl FnMut(&T) -> Result<U, E>) -> Result<Walls<U>, E> {
        Ok(Walls { lower: f(&self.lower)?, upper: f(&self.upper)? })
    }

    pub fn iter(&self) -> impl Iterator<Item = &T> {
        [&self.lower, &self.upper].into_iter()
    }
}

impl Walls<WallField> {
    pub fn max(&self) -> f64 {
        self.lower.max().max(self.upper.max())
    }

    pub fn zip_with(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Self {
        let comb = |a: &WallField, b: &WallField| a.with_values(a.values.iter().zip(&b.values).map(|(x, y)| f(*x, *y)).collect());
        Walls { lower: comb(&self.lower, &other.lower), upper: comb(&self.upper, &other.upper) }
    }
}

/// Averaged growth variable `c̄` on both walls at macro time `time`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrowthField {
    pub walls: Walls<WallField>,
    pub time: f64,
}

impl GrowthField {
    /// Uniform value on wall nodes at the given reference axial positions.
    pub fn uniform(x1: &[f64], value: f64) -> Result<Self, GrowthError> {
        let wall = WallField::straight(x1.to_vec(), vec![value; x1.len()])?;
        Ok(Self { walls: Walls { lower: wall.clone(), upper: wall }, time: 0.0 })
    }

    pub fn max(&self) -> f64 {
        self.walls.max()
    }

    /// Recomputes arc lengths on the mapped wall polylines for the current
    /// values.
    pub fn refresh_arc_lengths(&mut self, geometry: &VesselGeometry) -> Result<(), GrowthError> {
        let r = geometry.domain.radius();
        for (side, sign) in [(0usize, -1.0), (1, 1.0)] {
            let x1 = if side == 0 { self.walls.lower.x1.clone() } else { self.walls.upper.x1.clone() };
            let mut arc = Vec::with_capacity(x1.len());
            let mut prev: Option<Point> = None;
            let mut s = 0.0;
            for &x in &x1 {
                let p = geometry.map_point(&Point::new(x, sign * r, 0.0), self)?;
                if let Some(q) = prev {
                    s += (p - q).norm();
                }
                arc.push(s);
                prev = Some(p);
            }
            let wall = if side == 0 { &mut self.walls.lower } else { &mut self.walls.upper };
            wall.arc = arc;
            wall.validate()?;
        }
        Ok(())
    }

    fn wall_for_angle(&self, angle: f64) -> &WallField {
        if angle.cos() >= 0.0 {
            &self.walls.upper
        } else {
            &self.walls.lower
        }
    }
}

/// Piecewise-quadratic interpolation over consecutive node triples, which
/// matches the quadratic elements of the flow discretisation.
pub fn interpolate_quadratic(x: &[f64], v: &[f64], at: f64) -> (f64, f64) {
    let n = x.len();
    if n < 3 {
        return (v[0], 0.0);
    }
    let i = match x.binary_search_by(|p| p.total_cmp(&at)) {
        Ok(i) => i,
        Err(i) => i.saturating_sub(1),
    }
    .min(n - 2);
    let start = (i - i % 2).min(n - 3);
    let (x0, x1, x2) = (x[start], x[start + 1], x[start + 2]);
    let (v0, v1, v2) = (v[start], v[start + 1], v[start + 2]);
    let l0 = (at - x1) * (at - x2) / ((x0 - x1) * (x0 - x2));
    let l1 = (at - x0) * (at - x2) / ((x1 - x0) * (x1 - x2));
    let l2 = (at - x0) * (at - x1) / ((x2 - x0) * (x2 - x1));
    let d0 = (2.0 * at - x1 - x2) / ((x0 - x1) * (x0 - x2));
    let d1 = (2.0 * at - x0 - x2) / ((x1 - x0) * (x1 - x2));
    let d2 = (2.0 * at - x0 - x1) / ((x2 - x0) * (x2 - x1));
    (v0 * l0 + v1 * l1 + v2 * l2, v0 * d0 + v1 * d1 + v2 * d2)
}

impl WallGrowth for GrowthField {
    fn sample(&self, x1: f64, angle: f64) -> GrowthSample {
        let w = self.wall_for_angle(angle);
        let (value, d_axial) = interpolate_quadratic(&w.x1, &w.values, x1);
        // The quadratic interpolant can dip below zero next to ungrown nodes.
        if value < 0.0 {
            return GrowthSample::default();
        }
        GrowthSample { value, d_axial, d_angle: 0.0 }
    }
}

/// Cycle average `R̄ = α/(1+βc̄) · ⟨γ(σ_WSS)⟩` from per-step wall stress
/// traces. The traces are equally spaced samples of one period, so the
/// periodic trapezoidal rule reduces to their arithmetic mean.
pub fn averaged_reaction(
    cbar: &GrowthField,
    traces: &[Walls<WallField>],
    dt: f64,
    params: &GrowthParams,
) -> Result<Walls<WallField>, GrowthError> {
    let covered = traces.len() as f64 * dt;
    if traces.is_empty() || (covered - 1.0).abs() > 1e-9 {
        return Err(GrowthError::TraceMismatch { covered });
    }
    let m = traces.len() as f64;
    let average = |pick: fn(&Walls<WallField>) -> &WallField, c: &WallField| {
        let mut acc = vec![0.0; c.len()];
        for t in traces {
            for (a, s) in acc.iter_mut().zip(&pick(t).values) {
                *a += clip(*s, params);
            }
        }
        let values = acc
            .iter()
            .zip(&c.values)
            .map(|(g, cv)| params.alpha / (1.0 + params.beta * cv) * g / m)
            .collect();
        c.with_values(values)
    };
    Ok(Walls {
        lower: average(|w| &w.lower, &cbar.walls.lower),
        upper: average(|w| &w.upper, &cbar.walls.upper),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MacroScheme {
    #[default]
    SemiImplicitEuler,
    AdamsBashforth2,
}

/// Solves `(W + KλL) c = W b` where `L` is the Neumann flux Laplacian and
/// `W` the arc measure; diffusion implicit, source explicit in `b`.
/// Solves `(W + kλA) δ = W s − kλ A c` for the increment `δ` and returns
/// `c + δ`, so a field the operator annihilates stays bit-identical when
/// the source vanishes.
fn implicit_diffusion(wall: &WallField, source: &[f64], k_lambda: f64) -> Result<Vec<f64>, GrowthError> {
    let n = wall.len();
    let c = &wall.values;
    let w = wall.arc_measure();
    let mut lower = vec![0.0; n];
    let mut diag = w.clone();
    let mut upper = vec![0.0; n];
    let mut b: Vec<f64> = source.iter().zip(&w).map(|(r, wi)| r * wi).collect();
    for i in 0..n - 1 {
        let g = k_lambda / (wall.arc[i + 1] - wall.arc[i]);
        diag[i] += g;
        diag[i + 1] += g;
        upper[i] = -g;
        lower[i + 1] = -g;
        let flux = g * (c[i + 1] - c[i]);
        b[i] += flux;
        b[i + 1] -= flux;
    }
    // Thomas algorithm
    for i in 1..n {
        if diag[i - 1] == 0.0 {
            return Err(GrowthError::Tridiagonal { row: i - 1 });
        }
        let m = lower[i] / diag[i - 1];
        diag[i] -= m * upper[i - 1];
        b[i] -= m * b[i - 1];
    }
    if !(diag[n - 1].abs() > 0.0) {
        return Err(GrowthError::Tridiagonal { row: n - 1 });
    }
    let mut x = vec![0.0; n];
    x[n - 1] = b[n - 1] / diag[n - 1];
    for i in (0..n - 1).rev() {
        x[i] = (b[i] - upper[i] * x[i + 1]) / diag[i];
    }
    Ok(c.iter().zip(&x).map(|(ci, d)| ci + d).collect())
}

/// One macro step `(c̄ₙ − c̄ₙ₋₁)/K − λ_c Δ_Γ c̄ₙ = R̄` with the reaction
/// explicit. The Adams–Bashforth variant uses `(3R̄ₙ₋₁ − R̄ₙ₋₂)/2`. Values
/// are clamped to `[0, C_MAX]`.
pub fn macro_step(
    prev: &GrowthField,
    rbar: &Walls<WallField>,
    rbar_prev: Option<&Walls<WallField>>,
    k: f64,
    params: &GrowthParams,
    scheme: MacroScheme,
) -> Result<GrowthField, GrowthError> {
    if !(k > 0.0) {
        return Err(GrowthError::InvalidParams(format!("macro step must be positive, got {k}")));
    }
    let source = match scheme {
        MacroScheme::SemiImplicitEuler => rbar.clone(),
        MacroScheme::AdamsBashforth2 => {
            let old = rbar_prev.ok_or(GrowthError::MissingHistory)?;
            rbar.zip_with(old, |a, b| 1.5 * a - 0.5 * b)
        }
    };
    let step = |c: &WallField, r: &WallField| -> Result<WallField, GrowthError> {
        let source: Vec<f64> = r.values.iter().map(|rv| k * rv).collect();
        let mut next = implicit_diffusion(c, &source, k * params.lambda_c)?;
        let mut clamped = 0usize;
        for v in next.iter_mut() {
            if *v < 0.0 || *v > C_MAX {
                clamped += 1;
                *v = v.clamp(0.0, C_MAX);
            }
        }
        if clamped > 0 {
            log::warn!("clamped {clamped} growth values to [0, {C_MAX}]");
        }
        Ok(c.with_values(next))
    };
    Ok(GrowthField {
        walls: Walls { lower: step(&prev.walls.lower, &source.lower)?, upper: step(&prev.walls.upper, &source.upper)? },
        time: prev.time + k,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn window_values() {
        assert!((window(2.0, 2.0) - 0.775_803_492_574_375_8).abs() < 1e-15);
        assert!(window(2.0, 12.0) < 1e-7);
        for d in [0.1, 0.7, 1.3, 4.0] {
            assert!((window(5.0, 5.0 + d) - window(5.0, 5.0 - d)).abs() < 1e-15);
        }
    }

    #[test]
    fn clip_values() {
        let p = GrowthParams::default();
        assert!((clip(6.5, &p) - 0.978_146_827_647_181_6).abs() < 1e-14);
        assert!((clip(5.0, &p) - 0.499_938_302_712_006_8).abs() < 1e-14);
        assert!(clip(0.0, &p) < 1e-6);
    }

    #[test]
    fn reaction_prefactor() {
        let p = GrowthParams { alpha: 0.3, beta: 1.0, ..Default::default() };
        assert!(reaction(0.2, 100.0, &p) < 1e-20);
        let g = clip(6.5, &p);
        assert!((reaction(0.0, 6.5, &p) - 0.3 * g).abs() < 1e-16);
        assert!((reaction(1.0, 6.5, &p) - 0.15 * g).abs() < 1e-16);
    }

    proptest! {
        #[test]
        fn reaction_is_bounded(c in 0.0..10.0f64, s in -50.0..50.0f64, alpha in 0.0..2.0f64, beta in 0.0..5.0f64) {
            let p = GrowthParams { alpha, beta, ..Default::default() };
            let r = reaction(c, s, &p);
            prop_assert!(r >= 0.0 && r <= alpha);
        }

        #[test]
        fn reaction_decreases_in_c(c in 0.0..5.0f64, dc in 0.0..5.0f64, s in 0.0..15.0f64, beta in 0.01..5.0f64) {
            let p = GrowthParams { alpha: 1.0, beta, ..Default::default() };
            prop_assert!(reaction(c + dc, s, &p) <= reaction(c, s, &p));
        }
    }

    fn x1_nodes(n: usize, len: f64) -> Vec<f64> {
        (0..=n).map(|i| len * i as f64 / n as f64).collect()
    }

    fn traces(n: usize, m: usize, f: impl Fn(usize, f64) -> f64) -> Vec<Walls<WallField>> {
        let x = x1_nodes(n, 7.0);
        (0..m)
            .map(|t| {
                let w = WallField::straight(x.clone(), x.iter().map(|&xi| f(t, xi)).collect()).unwrap();
                Walls { lower: w.clone(), upper: w }
            })
            .collect()
    }

    #[test]
    fn averaged_reaction_cases() {
        let p = GrowthParams { alpha: 2.0, beta: 1.0, ..Default::default() };
        let c = GrowthField::uniform(&x1_nodes(10, 7.0), 0.25).unwrap();
        let zero = averaged_reaction(&c, &traces(10, 50, |_, _| 0.0), 0.02, &p).unwrap();
        assert!(zero.max() < 1e-5);
        let constant = averaged_reaction(&c, &traces(10, 50, |_, x| 4.0 + x / 3.0), 0.02, &p).unwrap();
        for (i, &x) in constant.lower.x1.iter().enumerate() {
            let expected = reaction(0.25, 4.0 + x / 3.0, &p);
            assert!((constant.lower.values[i] - expected).abs() < 1e-14);
        }
        // square wave: active half the period, inactive the other half
        let sq = averaged_reaction(&c, &traces(10, 50, |t, _| if t < 25 { 6.5 } else { -40.0 }), 0.02, &p).unwrap();
        let expected = 2.0 / (2.0 * 1.25) * clip(6.5, &p);
        assert!((sq.upper.values[3] - expected).abs() < 1e-12);
        assert!((sq.upper.values[3] - 0.8).abs() < 0.02);
        assert!(matches!(
            averaged_reaction(&c, &traces(10, 49, |_, _| 0.0), 0.02, &p),
            Err(GrowthError::TraceMismatch { .. })
        ));
    }

    fn field_from(x: &[f64], f: impl Fn(f64) -> f64) -> GrowthField {
        let w = WallField::straight(x.to_vec(), x.iter().map(|&v| f(v)).collect()).unwrap();
        GrowthField { walls: Walls { lower: w.clone(), upper: w }, time: 0.0 }
    }

    #[test]
    fn diffusion_free_step_is_pointwise() {
        let x = x1_nodes(20, 7.0);
        let p = GrowthParams { lambda_c: 0.0, ..Default::default() };
        let c = field_from(&x, |v| 0.1 * (v / 7.0));
        let r = field_from(&x, |v| 1e-3 * v).walls;
        let next = macro_step(&c, &r, None, 10.0, &p, MacroScheme::SemiImplicitEuler).unwrap();
        for i in 0..x.len() {
            assert!((next.walls.lower.values[i] - (c.walls.lower.values[i] + 10.0 * r.lower.values[i])).abs() < 1e-15);
        }
        assert_eq!(next.time, 10.0);
    }

    #[test]
    fn diffusion_conserves_mean() {
        let x = x1_nodes(30, 7.0);
        let p = GrowthParams { lambda_c: 0.05, ..Default::default() };
        let c = field_from(&x, |v| 0.3 * (-(v - 2.0) * (v - 2.0)).exp());
        let r = field_from(&x, |_| 0.0).walls;
        let mut cur = c.clone();
        for _ in 0..5 {
            cur = macro_step(&cur, &r, None, 3.0, &p, MacroScheme::SemiImplicitEuler).unwrap();
        }
        assert!((cur.walls.lower.mean() - c.walls.lower.mean()).abs() < 1e-14);
        assert!(cur.max() < c.max());
    }

    #[test]
    fn linear_growth_closed_form() {
        let x = x1_nodes(10, 7.0);
        let p = GrowthParams { alpha: 1e-3, beta: 0.0, lambda_c: 0.0, ..Default::default() };
        let r = field_from(&x, |_| p.alpha).walls;
        let mut c = GrowthField::uniform(&x, 0.0).unwrap();
        for _ in 0..8 {
            c = macro_step(&c, &r, None, 25.0, &p, MacroScheme::SemiImplicitEuler).unwrap();
        }
        for v in c.walls.upper.values.iter() {
            assert!((v - 8.0 * 25.0 * 1e-3).abs() < 1e-15);
        }
    }

    #[test]
    fn nonnegative_reaction_never_lowers_mean() {
        let x = x1_nodes(24, 7.0);
        let p = GrowthParams { lambda_c: 1e-2, ..Default::default() };
        let mut c = field_from(&x, |v| 0.05 * (v * 1.7).sin().abs());
        let r = field_from(&x, |v| 1e-3 * (-(v - 2.0).powi(2)).exp()).walls;
        for _ in 0..10 {
            let next = macro_step(&c, &r, None, 4.0, &p, MacroScheme::SemiImplicitEuler).unwrap();
            assert!(next.walls.lower.mean() >= c.walls.lower.mean() - 1e-15);
            c = next;
        }
    }

    #[test]
    fn semi_implicit_diffusion_never_oscillates() {
        let x = x1_nodes(40, 7.0);
        let rbar = field_from(&x, |v| 1e-3 * (-(v - 2.0f64).powi(2) * 8.0).exp()).walls;
        for lambda_c in [0.0, 1e-6, 1e-3, 1.0, 1e3] {
            for k in [0.1, 10.0, 1000.0] {
                let p = GrowthParams { lambda_c, ..Default::default() };
                let c0 = field_from(&x, |v| 0.2 * (-(v - 3.0f64).powi(2) * 10.0).exp());
                let next = macro_step(&c0, &rbar, None, k, &p, MacroScheme::SemiImplicitEuler).unwrap();
                // discrete maximum principle: bounded by old max plus K·max R̄
                assert!(next.max() <= c0.max() + k * rbar.max() + 1e-14);
                assert!(next.walls.lower.values.iter().all(|v| *v >= 0.0));
            }
        }
    }

    #[test]
    fn adams_bashforth_needs_history() {
        let x = x1_nodes(6, 7.0);
        let c = GrowthField::uniform(&x, 0.0).unwrap();
        let r = c.walls.clone();
        let p = GrowthParams::default();
        assert_eq!(
            macro_step(&c, &r, None, 1.0, &p, MacroScheme::AdamsBashforth2).unwrap_err(),
            GrowthError::MissingHistory
        );
    }

    /// `c′ = R(t)` with a smooth synthetic source; error at `t = 2` under
    /// step halving.
    fn synthetic_error(scheme: MacroScheme, n: usize) -> f64 {
        let x = x1_nodes(6, 7.0);
        let p = GrowthParams { lambda_c: 0.0, ..Default::default() };
        let src = |t: f64| 0.05 * (1.0 + t.sin());
        let exact = 0.05 * (2.0 + 1.0 - 2f64.cos());
        let k = 2.0 / n as f64;
        let mut c = GrowthField::uniform(&x, 0.0).unwrap();
        let mut prev: Option<Walls<WallField>> = None;
        for step in 0..n {
            let t = step as f64 * k;
            let r = field_from(&x, |_| src(t)).walls;
            let use_scheme = if prev.is_none() { MacroScheme::SemiImplicitEuler } else { scheme };
            c = macro_step(&c, &r, prev.as_ref(), k, &p, use_scheme).unwrap();
            prev = Some(r);
        }
        (c.walls.lower.values[0] - exact).abs()
    }

    #[test]
    fn macro_scheme_orders() {
        for (scheme, lo, hi) in [(MacroScheme::SemiImplicitEuler, 0.9, 1.1), (MacroScheme::AdamsBashforth2, 1.85, 2.15)] {
            let e1 = synthetic_error(scheme, 32);
            let e2 = synthetic_error(scheme, 64);
            let order = (e1 / e2).log2();
            assert!((lo..=hi).contains(&order), "{scheme:?} order {order}");
        }
    }

    #[test]
    fn quadratic_interpolation_is_exact_for_parabolas() {
        let x = x1_nodes(8, 4.0);
        let v: Vec<f64> = x.iter().map(|t| 1.0 + 2.0 * t - 0.5 * t * t).collect();
        for at in [0.0, 0.3, 1.0, 2.2, 3.99, 4.0] {
            let (f, df) = interpolate_quadratic(&x, &v, at);
            assert!((f - (1.0 + 2.0 * at - 0.5 * at * at)).abs() < 1e-13);
            assert!((df - (2.0 - at)).abs() < 1e-12);
        }
    }

    #[test]
    fn lambda_calibration_on_tip_profile() {
        // desk horizon: 16 steps of 64 s with a reaction concentrated near the
        // inflow tip; halving λ_c must leave the result within 0.5 %
        let x = x1_nodes(140, 7.0);
        let r = field_from(&x, |v| 3e-4 * (-(v - 1.2f64).powi(2) / 0.1).exp()).walls;
        let run = |lambda_c: f64| {
            let p = GrowthParams { lambda_c, ..Default::default() };
            let mut c = GrowthField::uniform(&x, 0.0).unwrap();
            for _ in 0..16 {
                c = macro_step(&c, &r, None, 64.0, &p, MacroScheme::SemiImplicitEuler).unwrap();
            }
            c
        };
        let full = run(GrowthParams::default().lambda_c);
        let half = run(0.5 * GrowthParams::default().lambda_c);
        let diff = full.walls.lower.values.iter().zip(&half.walls.lower.values).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(diff / full.max() < 5e-3);
    }
}
