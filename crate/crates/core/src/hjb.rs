//! Value functions, HJB residuals and the feedback policy.
//!
//! The transformed unknowns map back through `z_j = −2σ_j² ln u_j`. The
//! minimization inside the HJB operator is explicit,
//! `inf_p { p·∇z + |p|² } = −¼|∇z|²` attained at `p = −½∇z`, which gives the
//! feedback policy `p̄(x, j) = −½∇z_j(x)`.

use std::sync::Arc;

use thiserror::Error;

use crate::grid::{apply_laplacian, BallGrid, GridField};
use crate::model::{ProblemInstance, Regime, MAX_DIM};

#[derive(Debug, Error)]
pub enum HjbError {
    #[error("transformed field u{regime} has non-positive value {value} at node {node}")]
    NonPositive { regime: Regime, node: usize, value: f64 },
    #[error("query point {point:?} lies outside the closed ball of radius {radius}")]
    OutsideDomain { point: Vec<f64>, radius: f64 },
    #[error("fields live on different grids")]
    GridMismatch,
}

/// `z₁, z₂` on the interior nodes (ghosts at 0) with their gradients.
#[derive(Debug, Clone)]
pub struct ValueFields {
    pub z: [GridField; 2],
    /// Node-major gradients, `dim` entries per node.
    pub grad: [Vec<f64>; 2],
}

impl ValueFields {
    pub fn grid(&self) -> &Arc<BallGrid> {
        &self.z[0].grid
    }

    pub fn z(&self, regime: Regime) -> &GridField {
        &self.z[regime.index()]
    }

    pub fn grad_at(&self, regime: Regime, node: usize) -> &[f64] {
        let d = self.grid().dim();
        &self.grad[regime.index()][node * d..(node + 1) * d]
    }

    /// Multilinear interpolation of `z_j` (zero on ghosts).
    pub fn value_at(&self, regime: Regime, x: &[f64]) -> f64 {
        self.z(regime).interpolate(x)
    }

    /// Builds value fields from `z` samples, computing gradients.
    pub fn from_z(z1: GridField, z2: GridField) -> Result<Self, HjbError> {
        if !Arc::ptr_eq(&z1.grid, &z2.grid) {
            return Err(HjbError::GridMismatch);
        }
        let grad = [central_gradient(&z1), central_gradient(&z2)];
        Ok(ValueFields { z: [z1, z2], grad })
    }
}

/// Central differences with ghost arms closing the stencil at the boundary
/// value.
fn central_gradient(field: &GridField) -> Vec<f64> {
    let grid = &field.grid;
    let d = grid.dim();
    let inv_2h = 0.5 / grid.h();
    let mut out = vec![0.0; grid.len() * d];
    for node in 0..grid.len() {
        for axis in 0..d {
            let read = |nb: Option<usize>| nb.map_or(field.boundary_value, |k| field.values[k]);
            let plus = read(grid.neighbor(node, axis, true));
            let minus = read(grid.neighbor(node, axis, false));
            out[node * d + axis] = (plus - minus) * inv_2h;
        }
    }
    out
}

/// `z_j = −2σ_j² ln u_j` nodewise, ghosts at zero.
pub fn transform_to_z(u1: &GridField, u2: &GridField, inst: &ProblemInstance) -> Result<ValueFields, HjbError> {
    if !Arc::ptr_eq(&u1.grid, &u2.grid) {
        return Err(HjbError::GridMismatch);
    }
    let mut z = Vec::with_capacity(2);
    for (regime, u) in Regime::BOTH.into_iter().zip([u1, u2]) {
        let scale = -2.0 * inst.sigma(regime).powi(2);
        let mut values = Vec::with_capacity(u.values.len());
        for (node, &v) in u.values.iter().enumerate() {
            if !(v > 0.0) {
                return Err(HjbError::NonPositive { regime, node, value: v });
            }
            values.push(scale * v.ln());
        }
        z.push(GridField {
            grid: u.grid.clone(),
            values,
            boundary_value: 0.0,
        });
    }
    let z2 = z.pop().unwrap();
    let z1 = z.pop().unwrap();
    ValueFields::from_z(z1, z2)
}

/// Inverse transform `u_j = exp(−z_j / 2σ_j²)`.
pub fn transform_to_u(values: &ValueFields, inst: &ProblemInstance) -> [GridField; 2] {
    Regime::BOTH.map(|r| {
        let z = values.z(r);
        let scale = -0.5 / inst.sigma(r).powi(2);
        GridField {
            grid: z.grid.clone(),
            values: z.values.iter().map(|v| (scale * v).exp()).collect(),
            boundary_value: 1.0,
        }
    })
}

/// Exact infimum of `p·grad + |p|²` over `p ∈ ℝᴺ` and its minimizer:
/// `(−¼|grad|², −½ grad)`.
pub fn foc_infimum(grad: &[f64]) -> (f64, Vec<f64>) {
    let norm2: f64 = grad.iter().map(|g| g * g).sum();
    (-0.25 * norm2, grad.iter().map(|g| -0.5 * g).collect())
}

/// Nodewise residual of the value system with discrete operators:
/// `r_j = −a_j z_o + (a_j+α_j) z_j − σ_j²/2 Δ_h z_j − f_j + ¼|∇_h z_j|²`.
pub fn hjb_residual(values: &ValueFields, inst: &ProblemInstance) -> [GridField; 2] {
    let grid = values.grid().clone();
    let d = grid.dim();
    Regime::BOTH.map(|r| {
        let j = r.index();
        let o = r.other().index();
        let a = inst.leave_rate(r);
        let alpha = inst.alpha(r);
        let half_s2 = 0.5 * inst.sigma(r).powi(2);
        let lap = apply_laplacian(&values.z[j]);
        let f = inst.cost(r);
        let res = (0..grid.len())
            .map(|i| {
                let g = &values.grad[j][i * d..(i + 1) * d];
                let g2: f64 = g.iter().map(|v| v * v).sum();
                -a * values.z[o].values[i] + (a + alpha) * values.z[j].values[i] - half_s2 * lap.values[i]
                    - f.value(grid.coord(i))
                    + 0.25 * g2
            })
            .collect();
        GridField {
            grid: grid.clone(),
            values: res,
            boundary_value: 0.0,
        }
    })
}

/// Feedback policy `p̄(x, j) = −½∇z_j(x)` with multilinear interpolation
/// between lattice points.
#[derive(Debug, Clone)]
pub struct PolicyField {
    grid: Arc<BallGrid>,
    /// Node-major policy at interior nodes.
    node: [Vec<f64>; 2],
    /// Lattice-major policy at every lattice point (ghosts extrapolated).
    lattice: [Vec<f64>; 2],
}

impl PolicyField {
    pub fn grid(&self) -> &Arc<BallGrid> {
        &self.grid
    }

    /// Policy at an interior node.
    pub fn at_node(&self, regime: Regime, node: usize) -> &[f64] {
        let d = self.grid.dim();
        &self.node[regime.index()][node * d..(node + 1) * d]
    }

    /// Interpolated policy, without a domain check. `out` has `dim` entries.
    pub fn control_into(&self, x: &[f64], regime: Regime, out: &mut [f64]) {
        let d = self.grid.dim();
        let data = &self.lattice[regime.index()];
        if d == 1 {
            let last = self.grid.nodes_per_axis() - 2;
            let t = ((x[0] + self.grid.radius()) / self.grid.h()).clamp(0.0, (last + 1) as f64);
            let k = (t as usize).min(last);
            let f = t - k as f64;
            out[0] = data[k] * (1.0 - f) + data[k + 1] * f;
            return;
        }
        let (base, frac) = self.grid.locate(x);
        out.iter_mut().for_each(|v| *v = 0.0);
        for corner in 0..(1usize << d) {
            let mut w = 1.0;
            let mut idx = base;
            for axis in 0..d {
                if corner >> axis & 1 == 1 {
                    idx[axis] += 1;
                    w *= frac[axis];
                } else {
                    w *= 1.0 - frac[axis];
                }
            }
            if w != 0.0 {
                let flat = self.grid.lattice_flat(&idx);
                for (o, v) in out.iter_mut().zip(&data[flat * d..(flat + 1) * d]) {
                    *o += w * v;
                }
            }
        }
    }

    /// Interpolated policy at a point of the closed ball.
    pub fn query(&self, x: &[f64], regime: Regime) -> Result<Vec<f64>, HjbError> {
        let r = self.grid.radius();
        let n2: f64 = x.iter().map(|v| v * v).sum();
        if x.len() != self.grid.dim() || n2 > r * r * (1.0 + 1e-12) {
            return Err(HjbError::OutsideDomain {
                point: x.to_vec(),
                radius: r,
            });
        }
        let mut out = vec![0.0; self.grid.dim()];
        self.control_into(x, regime, &mut out);
        Ok(out)
    }

    /// Largest policy component over all nodes and regimes.
    pub fn max_abs(&self) -> f64 {
        self.node
            .iter()
            .flat_map(|v| v.iter())
            .fold(0.0, |m, v| m.max(v.abs()))
    }

    /// CSV with columns `x1..xN, p1_1..p1_N, p2_1..p2_N` over interior nodes.
    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        let d = self.grid.dim();
        let mut header: Vec<String> = (1..=d).map(|i| format!("x{i}")).collect();
        for j in 1..=2 {
            header.extend((1..=d).map(|i| format!("p{j}_{i}")));
        }
        writeln!(w, "{}", header.join(","))?;
        for node in 0..self.grid.len() {
            let mut row: Vec<String> = self.grid.coord(node).iter().map(|v| format!("{v:e}")).collect();
            for r in Regime::BOTH {
                row.extend(self.at_node(r, node).iter().map(|v| format!("{v:e}")));
            }
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// Gradient of `z` at a ghost lattice point. Along each axis the boundary
/// value `z = 0` at the ghost is combined with up to two interior
/// neighbours (second-order one-sided when both exist).
fn ghost_gradient(field: &GridField, idx: [usize; MAX_DIM], out: &mut [f64]) -> bool {
    let grid = &field.grid;
    let n = grid.nodes_per_axis();
    let h = grid.h();
    let zb = field.boundary_value;
    let mut any = false;
    for axis in 0..grid.dim() {
        let step = |k: isize| -> Option<f64> {
            let pos = idx[axis] as isize + k;
            if pos < 0 || pos >= n as isize {
                return None;
            }
            let mut j = idx;
            j[axis] = pos as usize;
            grid.node_at_lattice(grid.lattice_flat(&j)).map(|node| field.values[node])
        };
        out[axis] = match (step(-1), step(-2), step(1), step(2)) {
            (Some(m1), Some(m2), _, _) => (3.0 * zb - 4.0 * m1 + m2) / (2.0 * h),
            (_, _, Some(p1), Some(p2)) => (-3.0 * zb + 4.0 * p1 - p2) / (2.0 * h),
            (Some(m1), _, _, _) => (zb - m1) / h,
            (_, _, Some(p1), _) => (p1 - zb) / h,
            _ => continue,
        };
        any = true;
    }
    any
}

/// `p̄ = −½∇z_j` at every node, extended to the ghost lattice points so that
/// off-grid queries anywhere in the closed ball interpolate between defined
/// values.
pub fn extract_policy(values: &ValueFields) -> PolicyField {
    let grid = values.grid().clone();
    let d = grid.dim();
    let node = values.grad.clone().map(|g| g.into_iter().map(|v| -0.5 * v).collect::<Vec<_>>());
    let lattice = Regime::BOTH.map(|r| {
        let j = r.index();
        let mut data = vec![0.0; grid.lattice_len() * d];
        let mut defined = vec![false; grid.lattice_len()];
        let mut g = [0.0; MAX_DIM];
        for flat in 0..grid.lattice_len() {
            match grid.node_at_lattice(flat) {
                Some(k) => {
                    data[flat * d..(flat + 1) * d].copy_from_slice(&node[j][k * d..(k + 1) * d]);
                    defined[flat] = true;
                }
                None => {
                    g[..d].iter_mut().for_each(|v| *v = 0.0);
                    if ghost_gradient(values.z(r), grid.lattice_multi(flat), &mut g[..d]) {
                        for axis in 0..d {
                            data[flat * d + axis] = -0.5 * g[axis];
                        }
                        defined[flat] = true;
                    }
                }
            }
        }
        fill_from_neighbours(&grid, &mut data, &defined);
        data
    });
    PolicyField { grid, node, lattice }
}

/// Lattice points with no interior neighbour on any axis take the mean of
/// the defined points in their 3^N neighbourhood (zero if there are none).
fn fill_from_neighbours(grid: &BallGrid, data: &mut [f64], defined: &[bool]) {
    let d = grid.dim();
    let n = grid.nodes_per_axis() as isize;
    let snapshot = data.to_vec();
    for flat in 0..grid.lattice_len() {
        if defined[flat] {
            continue;
        }
        let idx = grid.lattice_multi(flat);
        let mut acc = [0.0; MAX_DIM];
        let mut count = 0usize;
        for offset in 0..3usize.pow(d as u32) {
            let mut j = idx;
            let mut o = offset;
            let mut inside = true;
            for axis in 0..d {
                let pos = idx[axis] as isize + (o % 3) as isize - 1;
                o /= 3;
                if pos < 0 || pos >= n {
                    inside = false;
                    break;
                }
                j[axis] = pos as usize;
            }
            let nb = grid.lattice_flat(&j);
            if inside && defined[nb] {
                for axis in 0..d {
                    acc[axis] += snapshot[nb * d + axis];
                }
                count += 1;
            }
        }
        if count > 0 {
            for axis in 0..d {
                data[flat * d + axis] = acc[axis] / count as f64;
            }
        }
    }
}
