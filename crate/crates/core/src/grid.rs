//! Structured tensor grid on a rectangle, nodal fields, second-order
//! finite-difference operators and the arc-length surface Laplacian on a
//! wall curve.

use std::io::{self, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::report::fmt_sig;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GridError {
    #[error("operator {op:?} expects a {expected} field")]
    DimensionMismatch { op: OperatorKind, expected: &'static str },
    #[error("fields live on different grids")]
    GridMismatch,
    #[error("invalid grid: {0}")]
    Invalid(String),
    #[error("invalid wall field: {0}")]
    InvalidWall(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryTag {
    Inflow,
    Outflow,
    Wall,
}

/// Tags for the four edges: `left` is `x₁ = x0`, `bottom` is `x₂ = y0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EdgeTags {
    pub left: BoundaryTag,
    pub right: BoundaryTag,
    pub bottom: BoundaryTag,
    pub top: BoundaryTag,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    /// Number of intervals in x₁.
    pub nx: usize,
    /// Number of intervals in x₂.
    pub ny: usize,
    pub x0: f64,
    pub y0: f64,
    pub hx: f64,
    pub hy: f64,
    pub edges: EdgeTags,
}

impl Grid {
    /// Channel `[0, length] × [−diameter/2, diameter/2]` with inflow on the
    /// left, outflow on the right and walls on the transverse edges.
    pub fn channel(length: f64, diameter: f64, nx: usize, ny: usize) -> Result<Self, GridError> {
        Self::rectangle(
            (0.0, -0.5 * diameter),
            (length, 0.5 * diameter),
            nx,
            ny,
            EdgeTags {
                left: BoundaryTag::Inflow,
                right: BoundaryTag::Outflow,
                bottom: BoundaryTag::Wall,
                top: BoundaryTag::Wall,
            },
        )
    }

    /// Closed box with walls on all four edges.
    pub fn cavity(lo: (f64, f64), hi: (f64, f64), nx: usize, ny: usize) -> Result<Self, GridError> {
        let w = BoundaryTag::Wall;
        Self::rectangle(lo, hi, nx, ny, EdgeTags { left: w, right: w, bottom: w, top: w })
    }

    pub fn rectangle(lo: (f64, f64), hi: (f64, f64), nx: usize, ny: usize, edges: EdgeTags) -> Result<Self, GridError> {
        if nx < 4 || ny < 4 {
            return Err(GridError::Invalid(format!("need at least 4 intervals per direction, got {nx}×{ny}")));
        }
        if !(hi.0 > lo.0 && hi.1 > lo.1) {
            return Err(GridError::Invalid("empty rectangle".into()));
        }
        Ok(Self {
            nx,
            ny,
            x0: lo.0,
            y0: lo.1,
            hx: (hi.0 - lo.0) / nx as f64,
            hy: (hi.1 - lo.1) / ny as f64,
            edges,
        })
    }

    pub fn node_count(&self) -> usize {
        (self.nx + 1) * (self.ny + 1)
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize) -> usize {
        i + j * (self.nx + 1)
    }

    #[inline]
    pub fn coords(&self, i: usize, j: usize) -> (f64, f64) {
        (self.x0 + i as f64 * self.hx, self.y0 + j as f64 * self.hy)
    }

    pub fn width(&self) -> f64 {
        self.hx * self.nx as f64
    }

    pub fn height(&self) -> f64 {
        self.hy * self.ny as f64
    }

    /// Tag of a boundary node; corners belong to the wall when one of their
    /// edges is a wall.
    pub fn boundary_tag(&self, i: usize, j: usize) -> Option<BoundaryTag> {
        let mut tags = Vec::with_capacity(2);
        if i == 0 {
            tags.push(self.edges.left);
        }
        if i == self.nx {
            tags.push(self.edges.right);
        }
        if j == 0 {
            tags.push(self.edges.bottom);
        }
        if j == self.ny {
            tags.push(self.edges.top);
        }
        if tags.contains(&BoundaryTag::Wall) {
            Some(BoundaryTag::Wall)
        } else {
            tags.first().copied()
        }
    }

    pub fn scalar(&self, f: impl Fn(f64, f64) -> f64) -> ScalarField {
        let mut values = Vec::with_capacity(self.node_count());
        for j in 0..=self.ny {
            for i in 0..=self.nx {
                let (x, y) = self.coords(i, j);
                values.push(f(x, y));
            }
        }
        ScalarField { grid: *self, values }
    }

    pub fn vector(&self, f: impl Fn(f64, f64) -> (f64, f64)) -> VectorField {
        let n = self.node_count();
        let mut out = VectorField { grid: *self, x: Vec::with_capacity(n), y: Vec::with_capacity(n) };
        for j in 0..=self.ny {
            for i in 0..=self.nx {
                let (x, y) = self.coords(i, j);
                let (a, b) = f(x, y);
                out.x.push(a);
                out.y.push(b);
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    pub grid: Grid,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VectorField {
    pub grid: Grid,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

impl ScalarField {
    pub fn zeros(grid: Grid) -> Self {
        Self { grid, values: vec![0.0; grid.node_count()] }
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "x1,x2,value")?;
        let g = &self.grid;
        for j in 0..=g.ny {
            for i in 0..=g.nx {
                let (x, y) = g.coords(i, j);
                writeln!(w, "{},{},{}", fmt_sig(x), fmt_sig(y), fmt_sig(self.values[g.index(i, j)]))?;
            }
        }
        Ok(())
    }
}

impl VectorField {
    pub fn zeros(grid: Grid) -> Self {
        let n = grid.node_count();
        Self { grid, x: vec![0.0; n], y: vec![0.0; n] }
    }

    pub fn max_magnitude(&self) -> f64 {
        self.x.iter().zip(&self.y).map(|(a, b)| a.hypot(*b)).fold(0.0, f64::max)
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "x1,x2,v1,v2")?;
        let g = &self.grid;
        for j in 0..=g.ny {
            for i in 0..=g.nx {
                let (x, y) = g.coords(i, j);
                let k = g.index(i, j);
                writeln!(w, "{},{},{},{}", fmt_sig(x), fmt_sig(y), fmt_sig(self.x[k]), fmt_sig(self.y[k]))?;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Field {
    Scalar(ScalarField),
    Vector(VectorField),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OperatorKind {
    Gradient,
    Divergence,
    Laplacian,
}

/// Dispatches one of the nodal difference operators, checking that the
/// field kind fits the operator.
pub fn apply_operator(kind: OperatorKind, field: &Field) -> Result<Field, GridError> {
    match (kind, field) {
        (OperatorKind::Gradient, Field::Scalar(f)) => Ok(Field::Vector(gradient(f))),
        (OperatorKind::Divergence, Field::Vector(v)) => Ok(Field::Scalar(divergence(v))),
        (OperatorKind::Laplacian, Field::Scalar(f)) => Ok(Field::Scalar(laplacian(f))),
        (OperatorKind::Divergence, _) => Err(GridError::DimensionMismatch { op: kind, expected: "vector" }),
        (op, _) => Err(GridError::DimensionMismatch { op, expected: "scalar" }),
    }
}

/// Second-order first derivative of a strided line of `n + 1` samples.
fn diff_line(vals: &[f64], n: usize, stride: usize, offset: usize, h: f64, out: &mut [f64]) {
    let at = |i: usize| vals[offset + i * stride];
    for i in 0..=n {
        let d = if i == 0 {
            (-3.0 * at(0) + 4.0 * at(1) - at(2)) / (2.0 * h)
        } else if i == n {
            (3.0 * at(n) - 4.0 * at(n - 1) + at(n - 2)) / (2.0 * h)
        } else {
            (at(i + 1) - at(i - 1)) / (2.0 * h)
        };
        out[offset + i * stride] = d;
    }
}

fn partial_x(values: &[f64], g: &Grid) -> Vec<f64> {
    let mut out = vec![0.0; values.len()];
    for j in 0..=g.ny {
        diff_line(values, g.nx, 1, g.index(0, j), g.hx, &mut out);
    }
    out
}

fn partial_y(values: &[f64], g: &Grid) -> Vec<f64> {
    let mut out = vec![0.0; values.len()];
    for i in 0..=g.nx {
        diff_line(values, g.ny, g.nx + 1, i, g.hy, &mut out);
    }
    out
}

pub fn gradient(f: &ScalarField) -> VectorField {
    VectorField { grid: f.grid, x: partial_x(&f.values, &f.grid), y: partial_y(&f.values, &f.grid) }
}

pub fn divergence(v: &VectorField) -> ScalarField {
    let dx = partial_x(&v.x, &v.grid);
    let dy = partial_y(&v.y, &v.grid);
    ScalarField { grid: v.grid, values: dx.iter().zip(&dy).map(|(a, b)| a + b).collect() }
}

/// `div ∘ grad`: on interior nodes this is the five-point stencil with
/// spacing `2h`, exact for quadratics.
pub fn laplacian(f: &ScalarField) -> ScalarField {
    divergence(&gradient(f))
}

/// Scalar samples along a wall curve, parameterised by arc length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WallField {
    /// Reference axial coordinate of each wall node.
    pub x1: Vec<f64>,
    /// Arc length along the (mapped) wall curve, strictly increasing.
    pub arc: Vec<f64>,
    pub values: Vec<f64>,
}

impl WallField {
    pub fn new(x1: Vec<f64>, arc: Vec<f64>, values: Vec<f64>) -> Result<Self, GridError> {
        let w = Self { x1, arc, values };
        w.validate()?;
        Ok(w)
    }

    /// Wall nodes along a straight reference wall with arc length equal to x₁.
    pub fn straight(x1: Vec<f64>, values: Vec<f64>) -> Result<Self, GridError> {
        let arc = x1.iter().map(|x| x - x1[0]).collect();
        Self::new(x1, arc, values)
    }

    pub fn validate(&self) -> Result<(), GridError> {
        let n = self.values.len();
        if self.arc.len() != n || self.x1.len() != n {
            return Err(GridError::InvalidWall(format!(
                "length mismatch: {} values, {} arc, {} x1",
                n,
                self.arc.len(),
                self.x1.len()
            )));
        }
        if self.arc.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(GridError::InvalidWall("arc length must be strictly increasing".into()));
        }
        if self.values.iter().any(|v| !v.is_finite()) {
            return Err(GridError::InvalidWall("non-finite value".into()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn with_values(&self, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), self.len());
        Self { x1: self.x1.clone(), arc: self.arc.clone(), values }
    }

    /// Dual-cell lengths: half of each adjacent arc interval.
    pub fn arc_measure(&self) -> Vec<f64> {
        let n = self.len();
        let mut w = vec![0.0; n];
        for i in 0..n.saturating_sub(1) {
            let h = self.arc[i + 1] - self.arc[i];
            w[i] += 0.5 * h;
            w[i + 1] += 0.5 * h;
        }
        w
    }

    /// Arc-length weighted mean.
    pub fn mean(&self) -> f64 {
        let w = self.arc_measure();
        let total: f64 = w.iter().sum();
        w.iter().zip(&self.values).map(|(a, b)| a * b).sum::<f64>() / total
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Second derivative with respect to arc length, three-point flux form with
/// homogeneous Neumann ends. The measure-weighted sum of the output is zero.
pub fn surface_laplacian(c: &WallField) -> Result<WallField, GridError> {
    let n = c.len();
    if n < 4 {
        return Err(GridError::InvalidWall(format!("need at least 4 wall nodes, got {n}")));
    }
    let w = c.arc_measure();
    let mut out = vec![0.0; n];
    for i in 0..n - 1 {
        let flux = (c.values[i + 1] - c.values[i]) / (c.arc[i + 1] - c.arc[i]);
        out[i] += flux;
        out[i + 1] -= flux;
    }
    for (o, wi) in out.iter_mut().zip(&w) {
        *o /= wi;
    }
    Ok(c.with_values(out))
}
