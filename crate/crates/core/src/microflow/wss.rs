//! Normal wall stress and outflow rate.

use serde::{Deserialize, Serialize};

use super::fem::{q1_2d, q2_2d, Discretization, WallNode};
use super::FluidParams;
use crate::grid::WallField;
use crate::growth::{window, Walls};

/// Window applied to the wall stress.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WssWindow {
    /// `Θ(s₀; x₁) + Θ(s₁; x₁)`.
    #[default]
    Axial,
    /// `Θ(s₀; x₁) + Θ(s₁; x₂)` with the transverse wall coordinate.
    Literal,
    /// Unwindowed `|σn·n|`.
    Off,
}

impl WssWindow {
    pub fn factor(self, tips: (f64, f64), x1: f64, x2: f64) -> f64 {
        match self {
            WssWindow::Axial => window(tips.0, x1) + window(tips.1, x1),
            WssWindow::Literal => window(tips.0, x1) + window(tips.1, x2),
            WssWindow::Off => 1.0,
        }
    }
}

impl Discretization {
    /// Nodal `|σn·n|` with `σ = −pI + ρν(∇v + ∇vᵀ)`, times the window sum.
    /// Velocity gradients come from the adjacent elements (averaged at
    /// element corners), which gives a one-sided second-order normal
    /// derivative.
    pub fn wall_shear_stress(&self, x: &[f64], fluid: &FluidParams, win: WssWindow) -> Walls<WallField> {
        let tips = self.map.tips();
        let [lower, upper] = &self.walls;
        let one = |nodes: &Vec<WallNode>| {
            let mut x1 = Vec::with_capacity(nodes.len());
            let mut arc = Vec::with_capacity(nodes.len());
            let mut vals = Vec::with_capacity(nodes.len());
            let mut s = 0.0;
            for (k, w) in nodes.iter().enumerate() {
                if k > 0 {
                    let q = nodes[k - 1].pos;
                    s += ((w.pos[0] - q[0]).powi(2) + (w.pos[1] - q[1]).powi(2)).sqrt();
                }
                x1.push(w.x1);
                arc.push(s);
                vals.push(self.normal_stress(w, x, fluid).abs() * win.factor(tips, w.x1, w.x2));
            }
            WallField { x1, arc, values: vals }
        };
        Walls { lower: one(lower), upper: one(upper) }
    }

    fn normal_stress(&self, w: &WallNode, x: &[f64], fluid: &FluidParams) -> f64 {
        let t = &self.topo;
        let (hx, hy) = (t.grid.hx, t.grid.hy);
        let n = w.normal;
        let mut total = 0.0;
        for &(e, xi, eta) in &w.cells {
            let vl = self.local_velocity(e, x);
            let (_, dref) = q2_2d(xi, eta);
            let mut g = [[0.0; 2]; 2];
            for a in 0..9 {
                let p = w.finv_t * nalgebra::Vector2::new(dref[a][0] / (2.0 * hx), dref[a][1] / (2.0 * hy));
                for c in 0..2 {
                    g[c][0] += vl[c][a] * p[0];
                    g[c][1] += vl[c][a] * p[1];
                }
            }
            let psi = q1_2d(xi, eta);
            let mut p = 0.0;
            for (k, vert) in t.verts[e].iter().enumerate() {
                if let Some(d) = t.p_dof[*vert] {
                    p += psi[k] * x[d];
                }
            }
            let ngn: f64 = (0..2).map(|c| (0..2).map(|d| n[c] * g[c][d] * n[d]).sum::<f64>()).sum();
            total += -p + 2.0 * fluid.rho_f * fluid.nu_f * ngn;
        }
        total / w.cells.len() as f64
    }

    /// Volumetric rate through the outflow boundary (per unit depth).
    pub fn outflow_rate(&self, x: &[f64]) -> f64 {
        self.outflow_flux.iter().zip(x).map(|(a, b)| a * b).sum()
    }
}
