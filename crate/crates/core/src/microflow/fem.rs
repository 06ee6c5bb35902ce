//! Taylor–Hood (Q2 velocity, Q1 pressure) elements on the structured
//! reference grid with the ALE metric folded into the quadrature.

use std::sync::Arc;

use nalgebra::Matrix2;

use super::sparse::{Factorizer, Pattern};
use super::FlowError;
use crate::geometry::{Point, ReferenceDomain, VesselGeometry};
use crate::grid::{BoundaryTag, Grid, ScalarField, VectorField};
use crate::growth::GrowthField;

/// Local dofs per element: 9 nodes × 2 components plus 4 pressure vertices.
pub(crate) const LOCAL: usize = 22;

/// The frozen map from the reference grid to the flow domain.
#[derive(Debug, Clone)]
pub enum DomainMap {
    Identity,
    Vessel { geometry: VesselGeometry, growth: GrowthField },
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct MapSample {
    pub pos: [f64; 2],
    pub finv_t: Matrix2<f64>,
    pub det: f64,
}

impl DomainMap {
    pub(crate) fn eval(&self, x: f64, y: f64) -> Result<MapSample, FlowError> {
        match self {
            DomainMap::Identity => Ok(MapSample { pos: [x, y], finv_t: Matrix2::identity(), det: 1.0 }),
            DomainMap::Vessel { geometry, growth } => {
                let m = geometry.composite_map(&Point::new(x, y, 0.0), growth)?;
                let f = m.gradient_2d();
                let inv = f.try_inverse().ok_or_else(|| FlowError::Invalid(format!("singular map at ({x}, {y})")))?;
                Ok(MapSample { pos: [m.mapped[0], m.mapped[1]], finv_t: inv.transpose(), det: f.determinant() })
            }
        }
    }

    /// Axial positions of the two stent tips.
    pub fn tips(&self) -> (f64, f64) {
        let d = match self {
            DomainMap::Identity => ReferenceDomain::default(),
            DomainMap::Vessel { geometry, .. } => geometry.domain,
        };
        (d.stent_start, d.stent_end)
    }
}

fn gauss3() -> [(f64, f64); 3] {
    let a = 0.5 * (0.6f64).sqrt();
    [(0.5 - a, 5.0 / 18.0), (0.5, 8.0 / 18.0), (0.5 + a, 5.0 / 18.0)]
}

/// Quadratic Lagrange basis on `[0, 1]` with nodes 0, ½, 1: values and derivatives.
pub(crate) fn q2(t: f64) -> ([f64; 3], [f64; 3]) {
    (
        [2.0 * (t - 0.5) * (t - 1.0), -4.0 * t * (t - 1.0), 2.0 * t * (t - 0.5)],
        [4.0 * t - 3.0, 4.0 - 8.0 * t, 4.0 * t - 1.0],
    )
}

/// Tensor Q2 basis at `(ξ, η)`: values and reference derivatives `∂/∂ξ, ∂/∂η`.
pub(crate) fn q2_2d(xi: f64, eta: f64) -> ([f64; 9], [[f64; 2]; 9]) {
    let (nx, dx) = q2(xi);
    let (ny, dy) = q2(eta);
    let mut v = [0.0; 9];
    let mut d = [[0.0; 2]; 9];
    for jj in 0..3 {
        for ii in 0..3 {
            let a = ii + 3 * jj;
            v[a] = nx[ii] * ny[jj];
            d[a] = [dx[ii] * ny[jj], nx[ii] * dy[jj]];
        }
    }
    (v, d)
}

pub(crate) fn q1_2d(xi: f64, eta: f64) -> [f64; 4] {
    [(1.0 - xi) * (1.0 - eta), xi * (1.0 - eta), (1.0 - xi) * eta, xi * eta]
}

/// Map-independent connectivity, dof numbering and sparsity pattern.
#[derive(Debug)]
pub(crate) struct Topology {
    pub grid: Grid,
    pub pgrid: Grid,
    pub ex: usize,
    pub ey: usize,
    pub vel_dof: Vec<[Option<usize>; 2]>,
    pub p_dof: Vec<Option<usize>>,
    pub n_vel: usize,
    pub n: usize,
    pub nodes: Vec<[usize; 9]>,
    pub verts: Vec<[usize; 4]>,
    pub dofs: Vec<[Option<usize>; LOCAL]>,
    /// Storage position of each local pair, row-major `r * LOCAL + c`.
    pub pos: Vec<Vec<Option<usize>>>,
    pub pattern: Pattern,
    pub factorizer: Factorizer,
    pub qpoints: Vec<(f64, f64, f64)>,
    pub phi: Vec<[f64; 9]>,
    pub dphi_ref: Vec<[[f64; 2]; 9]>,
    pub psi: Vec<[f64; 4]>,
}

impl Topology {
    fn new(grid: Grid) -> Result<Self, FlowError> {
        if grid.nx % 2 != 0 || grid.ny % 2 != 0 {
            return Err(FlowError::Invalid(format!("grid intervals must be even, got {}×{}", grid.nx, grid.ny)));
        }
        let (ex, ey) = (grid.nx / 2, grid.ny / 2);
        let pgrid = Grid { nx: ex, ny: ey, hx: 2.0 * grid.hx, hy: 2.0 * grid.hy, ..grid };

        let mut vel_dof = vec![[None; 2]; grid.node_count()];
        let mut n_vel = 0;
        for j in 0..=grid.ny {
            for i in 0..=grid.nx {
                if grid.boundary_tag(i, j) != Some(BoundaryTag::Wall) {
                    vel_dof[grid.index(i, j)] = [Some(n_vel), Some(n_vel + 1)];
                    n_vel += 2;
                }
            }
        }
        // Without any traction boundary the pressure is fixed only up to a
        // constant; vertex 0 is pinned to zero.
        let e = grid.edges;
        let all_walls = [e.left, e.right, e.bottom, e.top].iter().all(|t| *t == BoundaryTag::Wall);
        let mut p_dof = Vec::with_capacity(pgrid.node_count());
        let mut n = n_vel;
        for v in 0..pgrid.node_count() {
            if all_walls && v == 0 {
                p_dof.push(None);
            } else {
                p_dof.push(Some(n));
                n += 1;
            }
        }

        let mut nodes = Vec::with_capacity(ex * ey);
        let mut verts = Vec::with_capacity(ex * ey);
        let mut dofs = Vec::with_capacity(ex * ey);
        for eb in 0..ey {
            for ea in 0..ex {
                let mut nd = [0; 9];
                for jj in 0..3 {
                    for ii in 0..3 {
                        nd[ii + 3 * jj] = grid.index(2 * ea + ii, 2 * eb + jj);
                    }
                }
                let vt = [pgrid.index(ea, eb), pgrid.index(ea + 1, eb), pgrid.index(ea, eb + 1), pgrid.index(ea + 1, eb + 1)];
                let mut d = [None; LOCAL];
                for c in 0..2 {
                    for a in 0..9 {
                        d[c * 9 + a] = vel_dof[nd[a]][c];
                    }
                }
                for k in 0..4 {
                    d[18 + k] = p_dof[vt[k]];
                }
                nodes.push(nd);
                verts.push(vt);
                dofs.push(d);
            }
        }

        let coupled = |r: usize, c: usize| r < 18 || c < 18;
        let mut entries = Vec::new();
        for d in &dofs {
            for r in 0..LOCAL {
                for c in 0..LOCAL {
                    if let (Some(gr), Some(gc)) = (d[r], d[c]) {
                        if coupled(r, c) {
                            entries.push((gr, gc));
                        }
                    }
                }
            }
        }
        let pattern = Pattern::from_entries(n, entries);
        let pos = dofs
            .iter()
            .map(|d| {
                let mut p = vec![None; LOCAL * LOCAL];
                for r in 0..LOCAL {
                    for c in 0..LOCAL {
                        if let (Some(gr), Some(gc)) = (d[r], d[c]) {
                            if coupled(r, c) {
                                p[r * LOCAL + c] = pattern.position(gr, gc);
                            }
                        }
                    }
                }
                p
            })
            .collect();
        let factorizer = Factorizer::new(&pattern)?;

        let g = gauss3();
        let mut qpoints = Vec::with_capacity(9);
        let (mut phi, mut dphi_ref, mut psi) = (Vec::new(), Vec::new(), Vec::new());
        for &(eta, we) in &g {
            for &(xi, wx) in &g {
                qpoints.push((xi, eta, wx * we));
                let (v, d) = q2_2d(xi, eta);
                phi.push(v);
                dphi_ref.push(d);
                psi.push(q1_2d(xi, eta));
            }
        }

        Ok(Self {
            grid,
            pgrid,
            ex,
            ey,
            vel_dof,
            p_dof,
            n_vel,
            n,
            nodes,
            verts,
            dofs,
            pos,
            pattern,
            factorizer,
            qpoints,
            phi,
            dphi_ref,
            psi,
        })
    }

    /// Reference-cell corner of element `e`.
    fn origin(&self, e: usize) -> (f64, f64) {
        let (ea, eb) = (e % self.ex, e / self.ex);
        self.grid.coords(2 * ea, 2 * eb)
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct QuadPoint {
    /// Quadrature weight times reference cell area times `J`.
    pub w: f64,
    /// Physical gradients `F⁻ᵀ ∇̂φ` of the nine velocity basis functions.
    pub dphi: [[f64; 2]; 9],
    pub pos: [f64; 2],
}

/// Wall node data used for stress extraction.
#[derive(Debug, Clone)]
pub(crate) struct WallNode {
    pub x1: f64,
    pub x2: f64,
    pub pos: [f64; 2],
    pub normal: [f64; 2],
    pub finv_t: Matrix2<f64>,
    /// Adjacent elements with the node's local coordinates.
    pub cells: Vec<(usize, f64, f64)>,
}

/// The discrete operators of one frozen domain.
#[derive(Debug, Clone)]
pub struct Discretization {
    pub(crate) topo: Arc<Topology>,
    pub map: DomainMap,
    pub(crate) quad: Vec<[QuadPoint; 9]>,
    /// `∫ J φ·φ` (density free).
    pub(crate) mass: Vec<f64>,
    /// `∫ J ∇φ : ∇φ` (viscosity free).
    pub(crate) stiff: Vec<f64>,
    /// `−∫ J ψ div φ` in both the momentum and continuity blocks.
    pub(crate) div: Vec<f64>,
    div_abs: Vec<f64>,
    /// Right-hand side per unit inflow pressure.
    pub(crate) inflow_load: Vec<f64>,
    /// Outflow rate is `outflow_flux · x`.
    pub(crate) outflow_flux: Vec<f64>,
    /// Lower and upper wall nodes.
    pub(crate) walls: [Vec<WallNode>; 2],
}

impl Discretization {
    pub fn new(grid: Grid, map: DomainMap) -> Result<Self, FlowError> {
        Self::assemble(Arc::new(Topology::new(grid)?), map)
    }

    /// Same grid and pattern, new map.
    pub fn remap(&self, map: DomainMap) -> Result<Self, FlowError> {
        Self::assemble(self.topo.clone(), map)
    }

    pub fn grid(&self) -> &Grid {
        &self.topo.grid
    }

    pub fn pressure_grid(&self) -> &Grid {
        &self.topo.pgrid
    }

    /// Number of unknowns (free velocity components plus pressures).
    pub fn unknowns(&self) -> usize {
        self.topo.n
    }

    pub fn velocity_unknowns(&self) -> usize {
        self.topo.n_vel
    }

    fn assemble(topo: Arc<Topology>, map: DomainMap) -> Result<Self, FlowError> {
        let t = &*topo;
        let (hx, hy) = (t.grid.hx, t.grid.hy);
        let area = 4.0 * hx * hy;
        let mut quad = Vec::with_capacity(t.nodes.len());
        for e in 0..t.nodes.len() {
            let (x0, y0) = t.origin(e);
            let mut qs = [QuadPoint { w: 0.0, dphi: [[0.0; 2]; 9], pos: [0.0; 2] }; 9];
            for (q, &(xi, eta, wq)) in t.qpoints.iter().enumerate() {
                let m = map.eval(x0 + 2.0 * hx * xi, y0 + 2.0 * hy * eta)?;
                if !(m.det > 0.0) {
                    return Err(FlowError::Invalid(format!("non-positive Jacobian {} in element {e}", m.det)));
                }
                let mut dphi = [[0.0; 2]; 9];
                for a in 0..9 {
                    let g = nalgebra::Vector2::new(t.dphi_ref[q][a][0] / (2.0 * hx), t.dphi_ref[q][a][1] / (2.0 * hy));
                    let p = m.finv_t * g;
                    dphi[a] = [p[0], p[1]];
                }
                qs[q] = QuadPoint { w: wq * area * m.det, dphi, pos: m.pos };
            }
            quad.push(qs);
        }

        let nnz = t.pattern.nnz();
        let (mut mass, mut stiff, mut div) = (vec![0.0; nnz], vec![0.0; nnz], vec![0.0; nnz]);
        for (e, qs) in quad.iter().enumerate() {
            let pos = &t.pos[e];
            let add = |arr: &mut [f64], r: usize, c: usize, v: f64| {
                if let Some(p) = pos[r * LOCAL + c] {
                    arr[p] += v;
                }
            };
            for (q, qp) in qs.iter().enumerate() {
                let phi = &t.phi[q];
                for a in 0..9 {
                    for b in 0..9 {
                        let m = qp.w * phi[a] * phi[b];
                        let k = qp.w * (qp.dphi[a][0] * qp.dphi[b][0] + qp.dphi[a][1] * qp.dphi[b][1]);
                        for c in 0..2 {
                            add(&mut mass, c * 9 + a, c * 9 + b, m);
                            add(&mut stiff, c * 9 + a, c * 9 + b, k);
                        }
                    }
                }
                for k in 0..4 {
                    for a in 0..9 {
                        for c in 0..2 {
                            let v = -qp.w * t.psi[q][k] * qp.dphi[a][c];
                            add(&mut div, 18 + k, c * 9 + a, v);
                            add(&mut div, c * 9 + a, 18 + k, v);
                        }
                    }
                }
            }
        }

        let inflow_load = boundary_vector(t, &map, BoundaryTag::Inflow)?.into_iter().map(|v| -v).collect();
        let outflow_flux = boundary_vector(t, &map, BoundaryTag::Outflow)?;
        let walls = [wall_nodes(t, &map, false)?, wall_nodes(t, &map, true)?];

        let div_abs = div.iter().map(|v| v.abs()).collect();
        Ok(Self { topo, map, quad, mass, stiff, div, div_abs, inflow_load, outflow_flux, walls })
    }

    /// Full-length unknown vector from a state.
    pub fn pack(&self, v: &VectorField, p: &ScalarField) -> Result<Vec<f64>, FlowError> {
        let t = &self.topo;
        if v.grid != t.grid || p.grid != t.pgrid {
            return Err(crate::grid::GridError::GridMismatch.into());
        }
        let mut x = vec![0.0; t.n];
        for (node, d) in t.vel_dof.iter().enumerate() {
            if let [Some(a), Some(b)] = d {
                x[*a] = v.x[node];
                x[*b] = v.y[node];
            }
        }
        for (vert, d) in t.p_dof.iter().enumerate() {
            if let Some(k) = d {
                x[*k] = p.values[vert];
            }
        }
        Ok(x)
    }

    pub fn unpack_velocity(&self, x: &[f64]) -> VectorField {
        let t = &self.topo;
        let mut v = VectorField::zeros(t.grid);
        for (node, d) in t.vel_dof.iter().enumerate() {
            if let [Some(a), Some(b)] = d {
                v.x[node] = x[*a];
                v.y[node] = x[*b];
            }
        }
        v
    }

    pub fn unpack_pressure(&self, x: &[f64]) -> ScalarField {
        let t = &self.topo;
        let mut p = ScalarField::zeros(t.pgrid);
        for (vert, d) in t.p_dof.iter().enumerate() {
            if let Some(k) = d {
                p.values[vert] = x[*k];
            }
        }
        p
    }

    /// Local velocity coefficients `[component][node]` of element `e`.
    pub(crate) fn local_velocity(&self, e: usize, x: &[f64]) -> [[f64; 9]; 2] {
        let d = &self.topo.dofs[e];
        let mut vl = [[0.0; 9]; 2];
        for c in 0..2 {
            for a in 0..9 {
                if let Some(g) = d[c * 9 + a] {
                    vl[c][a] = x[g];
                }
            }
        }
        vl
    }

    /// `√(xᵀ M x)` over the velocity part.
    pub fn velocity_norm(&self, x: &[f64]) -> f64 {
        let n = self.topo.n_vel;
        let mut xv = x[..n].to_vec();
        xv.resize(self.topo.n, 0.0);
        let mx = self.topo.pattern.mul(&self.mass, &xv);
        xv.iter().zip(&mx).map(|(a, b)| a * b).sum::<f64>().max(0.0).sqrt()
    }

    /// `L²` norm of a nodal vector field over the mapped domain, boundary
    /// nodes included.
    pub fn field_l2_norm(&self, v: &VectorField) -> Result<f64, FlowError> {
        let t = &self.topo;
        if v.grid != t.grid {
            return Err(crate::grid::GridError::GridMismatch.into());
        }
        let mut s = 0.0;
        for (e, qs) in self.quad.iter().enumerate() {
            let nd = &t.nodes[e];
            for (q, qp) in qs.iter().enumerate() {
                let (mut a, mut b) = (0.0, 0.0);
                for k in 0..9 {
                    a += t.phi[q][k] * v.x[nd[k]];
                    b += t.phi[q][k] * v.y[nd[k]];
                }
                s += qp.w * (a * a + b * b);
            }
        }
        Ok(s.sqrt())
    }

    /// Mapped measure of the flow domain.
    pub fn area(&self) -> f64 {
        self.quad.iter().flatten().map(|q| q.w).sum()
    }

    /// Convective term `ρ ∫ J (v·∇)v · φ` and optionally its Jacobian values.
    pub(crate) fn convection(&self, x: &[f64], rho: f64, jacobian: bool) -> (Vec<f64>, Option<Vec<f64>>) {
        let t = &self.topo;
        let mut out = vec![0.0; t.n];
        let mut jac = jacobian.then(|| t.pattern.zeros());
        for (e, qs) in self.quad.iter().enumerate() {
            let vl = self.local_velocity(e, x);
            let d = &t.dofs[e];
            let pos = &t.pos[e];
            for (q, qp) in qs.iter().enumerate() {
                let phi = &t.phi[q];
                let mut vq = [0.0; 2];
                let mut g = [[0.0; 2]; 2];
                for c in 0..2 {
                    for a in 0..9 {
                        vq[c] += phi[a] * vl[c][a];
                        g[c][0] += qp.dphi[a][0] * vl[c][a];
                        g[c][1] += qp.dphi[a][1] * vl[c][a];
                    }
                }
                let rw = rho * qp.w;
                for c in 0..2 {
                    let conv = vq[0] * g[c][0] + vq[1] * g[c][1];
                    for a in 0..9 {
                        if let Some(r) = d[c * 9 + a] {
                            out[r] += rw * conv * phi[a];
                        }
                    }
                }
                if let Some(jv) = jac.as_mut() {
                    for b in 0..9 {
                        let adv = vq[0] * qp.dphi[b][0] + vq[1] * qp.dphi[b][1];
                        for a in 0..9 {
                            let s = rw * phi[a];
                            for c in 0..2 {
                                for dd in 0..2 {
                                    let mut v = phi[b] * g[c][dd];
                                    if c == dd {
                                        v += adv;
                                    }
                                    if let Some(p) = pos[(c * 9 + a) * LOCAL + dd * 9 + b] {
                                        jv[p] += s * v;
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        (out, jac)
    }

    /// `ρ ∫ J f(T(x̂), t) · φ`.
    pub(crate) fn body_load(&self, f: &(dyn Fn(f64, f64, f64) -> [f64; 2] + Send + Sync), t: f64, rho: f64) -> Vec<f64> {
        let topo = &self.topo;
        let mut out = vec![0.0; topo.n];
        for (e, qs) in self.quad.iter().enumerate() {
            let d = &topo.dofs[e];
            for (q, qp) in qs.iter().enumerate() {
                let fv = f(qp.pos[0], qp.pos[1], t);
                for a in 0..9 {
                    let s = rho * qp.w * topo.phi[q][a];
                    for c in 0..2 {
                        if let Some(r) = d[c * 9 + a] {
                            out[r] += s * fv[c];
                        }
                    }
                }
            }
        }
        out
    }

    /// Discrete gradient of a pressure field: the velocity `d` with
    /// `M d = −Bᵀ q`, packed with zero pressure.
    pub fn discrete_gradient(&self, q: &ScalarField) -> Result<Vec<f64>, FlowError> {
        let t = &self.topo;
        let zero = VectorField::zeros(t.grid);
        let xq = self.pack(&zero, q)?;
        let mut rhs = t.pattern.mul(&self.div, &xq);
        rhs[t.n_vel..].iter_mut().for_each(|v| *v = 0.0);
        rhs.iter_mut().for_each(|v| *v = -*v);
        let mut vals = self.mass.clone();
        for i in t.n_vel..t.n {
            let k = t.pattern.position(i, i).expect("diagonal is stored");
            vals[k] = 1.0;
        }
        t.factorizer.factor(&t.pattern, &vals)?.solve_in_place(&mut rhs)?;
        Ok(rhs)
    }

    /// `‖Bv‖∞ / ‖|B||v|‖∞` over the continuity rows.
    pub fn divergence_residual(&self, x: &[f64]) -> f64 {
        let t = &self.topo;
        let n = t.n_vel;
        let mut xv = x[..n].to_vec();
        xv.resize(t.n, 0.0);
        let bv = t.pattern.mul(&self.div, &xv);
        let abs_x: Vec<f64> = xv.iter().map(|v| v.abs()).collect();
        let scale = t.pattern.mul(&self.div_abs, &abs_x);
        let num = bv[n..].iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let den = scale[n..].iter().fold(0.0f64, |m, v| m.max(*v));
        if den > 0.0 {
            num / den
        } else {
            0.0
        }
    }
}

/// `∫ φ · (J F⁻ᵀ n̂) dŝ` over the edge carrying `tag` (left or right edge).
fn boundary_vector(t: &Topology, map: &DomainMap, tag: BoundaryTag) -> Result<Vec<f64>, FlowError> {
    let mut out = vec![0.0; t.n];
    let g = t.grid;
    let sides = [(g.edges.left, 0usize, -1.0), (g.edges.right, g.nx, 1.0)];
    for (edge_tag, i, sign) in sides {
        if edge_tag != tag {
            continue;
        }
        let x = g.coords(i, 0).0;
        for eb in 0..t.ey {
            let y0 = g.coords(i, 2 * eb).1;
            for (eta, w) in gauss3() {
                let m = map.eval(x, y0 + 2.0 * g.hy * eta)?;
                let nv = m.finv_t * nalgebra::Vector2::new(sign, 0.0) * m.det;
                let (shape, _) = q2(eta);
                for jj in 0..3 {
                    let node = g.index(i, 2 * eb + jj);
                    let s = w * 2.0 * g.hy * shape[jj];
                    for c in 0..2 {
                        if let Some(d) = t.vel_dof[node][c] {
                            out[d] += s * nv[c];
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

fn wall_nodes(t: &Topology, map: &DomainMap, upper: bool) -> Result<Vec<WallNode>, FlowError> {
    let g = t.grid;
    let (j, eb, eta, nref) = if upper { (g.ny, t.ey - 1, 1.0, 1.0) } else { (0, 0, 0.0, -1.0) };
    (0..=g.nx)
        .map(|i| {
            let (x1, x2) = g.coords(i, j);
            let m = map.eval(x1, x2)?;
            let nv = m.finv_t * nalgebra::Vector2::new(0.0, nref);
            let nv = nv / nv.norm();
            let mut cells = Vec::with_capacity(2);
            if i % 2 == 1 {
                cells.push(((i - 1) / 2 + eb * t.ex, 0.5, eta));
            } else {
                if i > 0 {
                    cells.push((i / 2 - 1 + eb * t.ex, 1.0, eta));
                }
                if i < g.nx {
                    cells.push((i / 2 + eb * t.ex, 0.0, eta));
                }
            }
            Ok(WallNode { x1, x2, pos: m.pos, normal: [nv[0], nv[1]], finv_t: m.finv_t, cells })
        })
        .collect()
}
