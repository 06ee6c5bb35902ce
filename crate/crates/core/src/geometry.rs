//! Reference vessel and the composite deformation
//! `T = T_geometry ∘ T_stenosis ∘ T_stent` with analytic gradients.
//!
//! All points are carried as three-component vectors. In the planar (2D)
//! reduction the third component is ignored by every factor and the
//! gradient keeps an identity third row and column, so `det F` equals the
//! determinant of the leading 2×2 block.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Point = Vector3<f64>;

/// Upper bound for the growth variable; keeps `T_stenosis` invertible.
pub const C_MAX: f64 = 0.95;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("growth value {c} outside [0, 1): the lumen would collapse")]
    InvalidGrowth { c: f64 },
    #[error("degenerate mapping at ({:.6}, {:.6}, {:.6}): det F = {det:.3e}", x[0], x[1], x[2])]
    Degenerate { x: [f64; 3], det: f64 },
    #[error("invalid reference domain: {0}")]
    InvalidDomain(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReferenceDomain {
    /// Axial length in cm.
    pub length: f64,
    /// Vessel diameter in cm.
    pub diameter: f64,
    /// 2 (planar channel) or 3 (pipe).
    pub dimension: usize,
    pub stent_start: f64,
    pub stent_end: f64,
    /// Axial position where the centerline curvature switches planes.
    pub midpoint: f64,
}

impl Default for ReferenceDomain {
    fn default() -> Self {
        Self {
            length: 7.0,
            diameter: 0.2,
            dimension: 2,
            stent_start: 2.0,
            stent_end: 5.0,
            midpoint: 3.5,
        }
    }
}

impl ReferenceDomain {
    pub fn validate(&self) -> Result<(), GeometryError> {
        let bad = |m: &str| Err(GeometryError::InvalidDomain(m.to_string()));
        if !(self.diameter > 0.0) {
            return bad("diameter must be positive");
        }
        if !(0.0 < self.stent_start && self.stent_start < self.stent_end && self.stent_end < self.length) {
            return bad("need 0 < stent_start < stent_end < length");
        }
        if self.dimension != 2 && self.dimension != 3 {
            return bad("dimension must be 2 or 3");
        }
        Ok(())
    }

    pub fn radius(&self) -> f64 {
        0.5 * self.diameter
    }

    pub fn is_planar(&self) -> bool {
        self.dimension == 2
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StentParams {
    pub rho_stent: f64,
    /// Bump sharpness in cm⁻².
    pub gamma_stent: f64,
}

impl Default for StentParams {
    fn default() -> Self {
        Self { rho_stent: 0.1, gamma_stent: 50.0 }
    }
}

/// Centerline `τ(x₁) = coefficient · (x₁ − s_m)^exponent`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CenterlineParams {
    pub coefficient: f64,
    pub exponent: i32,
}

impl Default for CenterlineParams {
    fn default() -> Self {
        Self { coefficient: 4e-3, exponent: 4 }
    }
}

impl CenterlineParams {
    /// Returns `(τ, τ′, τ″)` at the axial offset `d = x₁ − s_m`.
    pub fn profile(&self, d: f64) -> (f64, f64, f64) {
        let p = self.exponent;
        let a = self.coefficient;
        let pf = p as f64;
        let tau = a * d.powi(p);
        let dtau = if p >= 1 { a * pf * d.powi(p - 1) } else { 0.0 };
        let ddtau = if p >= 2 { a * pf * (pf - 1.0) * d.powi(p - 2) } else { 0.0 };
        (tau, dtau, ddtau)
    }
}

/// Growth value at a wall footprint with its partial derivatives.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct GrowthSample {
    pub value: f64,
    pub d_axial: f64,
    pub d_angle: f64,
}

/// Anything that can report the growth variable on the vessel wall.
///
/// The footprint of an interior point is the wall point with the same axial
/// coordinate and the same polar angle `atan2(x₃, x₂)`. In the planar
/// reduction the angle is `0` for the upper wall and `π` for the lower one.
pub trait WallGrowth {
    fn sample(&self, x1: f64, angle: f64) -> GrowthSample;
}

/// Spatially constant growth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UniformGrowth(pub f64);

impl WallGrowth for UniformGrowth {
    fn sample(&self, _x1: f64, _angle: f64) -> GrowthSample {
        GrowthSample { value: self.0, ..Default::default() }
    }
}

/// Axisymmetric growth given as a closure of the axial coordinate together
/// with its derivative.
pub struct AxialGrowth<F: Fn(f64) -> (f64, f64)>(pub F);

impl<F: Fn(f64) -> (f64, f64)> WallGrowth for AxialGrowth<F> {
    fn sample(&self, x1: f64, _angle: f64) -> GrowthSample {
        let (value, d_axial) = (self.0)(x1);
        GrowthSample { value, d_axial, d_angle: 0.0 }
    }
}

/// Mapped point together with `F = ∇T` and `J = det F`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AleMap {
    pub reference: Point,
    pub mapped: Point,
    pub gradient: Matrix3<f64>,
    pub det: f64,
}

impl AleMap {
    /// Leading 2×2 block of `F`, the planar deformation gradient.
    pub fn gradient_2d(&self) -> nalgebra::Matrix2<f64> {
        self.gradient.fixed_view::<2, 2>(0, 0).into_owned()
    }
}

/// All geometric parameters of the vessel.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VesselGeometry {
    pub domain: ReferenceDomain,
    pub stent: StentParams,
    pub centerline: CenterlineParams,
}

fn footprint_angle(x: &Point, planar: bool) -> f64 {
    if planar {
        if x[1] >= 0.0 {
            0.0
        } else {
            std::f64::consts::PI
        }
    } else {
        x[2].atan2(x[1])
    }
}

/// Radial widening `1 + ρ e^{−γ(x₁−s₀)²} + ρ e^{−γ(x₁−s₁)²}` and its derivative.
pub fn stent_factor(x1: f64, params: &StentParams, domain: &ReferenceDomain) -> (f64, f64) {
    let g = params.gamma_stent;
    let d0 = x1 - domain.stent_start;
    let d1 = x1 - domain.stent_end;
    let e0 = (-g * d0 * d0).exp();
    let e1 = (-g * d1 * d1).exp();
    let value = 1.0 + params.rho_stent * (e0 + e1);
    let deriv = params.rho_stent * (-2.0 * g * d0 * e0 - 2.0 * g * d1 * e1);
    (value, deriv)
}

pub fn stent_map(x: &Point, params: &StentParams, domain: &ReferenceDomain) -> Point {
    stent_map_with_gradient(x, params, domain).0
}

fn stent_map_with_gradient(x: &Point, params: &StentParams, domain: &ReferenceDomain) -> (Point, Matrix3<f64>) {
    let (s, ds) = stent_factor(x[0], params, domain);
    let mut grad = Matrix3::identity();
    grad[(1, 0)] = ds * x[1];
    grad[(1, 1)] = s;
    let mut y = Point::new(x[0], s * x[1], x[2]);
    if !domain.is_planar() {
        grad[(2, 0)] = ds * x[2];
        grad[(2, 2)] = s;
        y[2] = s * x[2];
    }
    (y, grad)
}

/// Scales the transverse coordinates by `1 − c`.
pub fn stenosis_map(x: &Point, c_at_x: f64) -> Result<Point, GeometryError> {
    check_growth(c_at_x)?;
    let s = 1.0 - c_at_x;
    Ok(Point::new(x[0], s * x[1], s * x[2]))
}

fn check_growth(c: f64) -> Result<(), GeometryError> {
    if !(0.0..1.0).contains(&c) {
        return Err(GeometryError::InvalidGrowth { c });
    }
    Ok(())
}

fn stenosis_map_with_gradient(
    y: &Point,
    growth: &dyn WallGrowth,
    planar: bool,
) -> Result<(Point, Matrix3<f64>), GeometryError> {
    let angle = footprint_angle(y, planar);
    let c = growth.sample(y[0], angle);
    check_growth(c.value)?;
    let s = 1.0 - c.value;
    let mut grad = Matrix3::identity();
    if planar {
        grad[(1, 0)] = -c.d_axial * y[1];
        grad[(1, 1)] = s;
        return Ok((Point::new(y[0], s * y[1], y[2]), grad));
    }
    let r2 = y[1] * y[1] + y[2] * y[2];
    let (dphi2, dphi3) = if r2 > 0.0 { (-y[2] / r2, y[1] / r2) } else { (0.0, 0.0) };
    grad[(1, 0)] = -c.d_axial * y[1];
    grad[(2, 0)] = -c.d_axial * y[2];
    grad[(1, 1)] = s - c.d_angle * dphi2 * y[1];
    grad[(1, 2)] = -c.d_angle * dphi3 * y[1];
    grad[(2, 1)] = -c.d_angle * dphi2 * y[2];
    grad[(2, 2)] = s - c.d_angle * dphi3 * y[2];
    Ok((Point::new(y[0], s * y[1], s * y[2]), grad))
}

pub fn centerline_map(x: &Point, params: &CenterlineParams, domain: &ReferenceDomain) -> Point {
    centerline_map_with_gradient(x, params, domain).0
}

/// Normal-offset tube map around the curve `y = τ(x₁)`. Left of the midpoint
/// the curve lies in the x/y plane; right of it (3D only) in the x/z plane.
fn centerline_map_with_gradient(
    x: &Point,
    params: &CenterlineParams,
    domain: &ReferenceDomain,
) -> (Point, Matrix3<f64>) {
    let d = x[0] - domain.midpoint;
    // transverse component that carries the offset
    let k = if d < 0.0 {
        1
    } else if domain.is_planar() {
        return (*x, Matrix3::identity());
    } else {
        2
    };
    let (tau, dtau, ddtau) = params.profile(d);
    let q = 1.0 + dtau * dtau;
    let n = q.powf(-0.5);
    let dn = -dtau * ddtau * q.powf(-1.5);
    let xt = x[k];

    let mut z = *x;
    z[0] = x[0] - dtau * n * xt;
    z[k] = tau + n * xt;

    let mut grad = Matrix3::identity();
    grad[(0, 0)] = 1.0 - (ddtau * n + dtau * dn) * xt;
    grad[(0, k)] = -dtau * n;
    grad[(k, 0)] = dtau + dn * xt;
    grad[(k, k)] = n;
    (z, grad)
}

impl VesselGeometry {
    pub fn planar() -> Self {
        Self::default()
    }

    /// Straight vessel without stent: only the stenosis factor remains.
    pub fn straight(domain: ReferenceDomain) -> Self {
        Self {
            domain,
            stent: StentParams { rho_stent: 0.0, ..Default::default() },
            centerline: CenterlineParams { coefficient: 0.0, ..Default::default() },
        }
    }

    /// Evaluates `T`, `F` (chain rule over the three factors) and `J`.
    pub fn composite_map(&self, x: &Point, growth: &dyn WallGrowth) -> Result<AleMap, GeometryError> {
        let planar = self.domain.is_planar();
        let (y, f_stent) = stent_map_with_gradient(x, &self.stent, &self.domain);
        let (z, f_sten) = stenosis_map_with_gradient(&y, growth, planar)?;
        let (w, f_geo) = centerline_map_with_gradient(&z, &self.centerline, &self.domain);
        let gradient = f_geo * f_sten * f_stent;
        let det = gradient.determinant();
        if !(det > 0.0) {
            return Err(GeometryError::Degenerate { x: [x[0], x[1], x[2]], det });
        }
        Ok(AleMap { reference: *x, mapped: w, gradient, det })
    }

    /// Mapped point only, without the positivity check.
    pub fn map_point(&self, x: &Point, growth: &dyn WallGrowth) -> Result<Point, GeometryError> {
        let planar = self.domain.is_planar();
        let (y, _) = stent_map_with_gradient(x, &self.stent, &self.domain);
        let (z, _) = stenosis_map_with_gradient(&y, growth, planar)?;
        Ok(centerline_map_with_gradient(&z, &self.centerline, &self.domain).0)
    }

    /// Central finite-difference gradient of the composite map; an
    /// independent cross-check of the analytic chain rule.
    pub fn finite_difference_gradient(
        &self,
        x: &Point,
        growth: &dyn WallGrowth,
        h: f64,
    ) -> Result<Matrix3<f64>, GeometryError> {
        let dims = if self.domain.is_planar() { 2 } else { 3 };
        let mut grad = Matrix3::identity();
        for j in 0..dims {
            let mut xp = *x;
            let mut xm = *x;
            xp[j] += h;
            xm[j] -= h;
            let dp = self.map_point(&xp, growth)?;
            let dm = self.map_point(&xm, growth)?;
            for i in 0..dims {
                grad[(i, j)] = (dp[i] - dm[i]) / (2.0 * h);
            }
        }
        Ok(grad)
    }
}
