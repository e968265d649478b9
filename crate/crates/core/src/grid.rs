//! Finite-difference discretization of the ball `B_R`.
//!
//! The ball is embedded in the uniform lattice over `[-R, R]^N`. Lattice
//! points with `|x| < R` are unknowns; every other lattice point acts as a
//! Dirichlet ghost that reads the boundary constant (staircase boundary).
//! The five/seven-point Laplacian keeps the M-matrix structure, so
//! `-(Δ_h + Λ)` with `Λ < 0` is symmetric positive definite and monotone.

use std::sync::Arc;

use thiserror::Error;

use crate::model::{ProblemInstance, MAX_DIM};

pub const MIN_NODES_PER_AXIS: usize = 17;

/// Default relative residual target of [`solve_shifted`].
pub const LINEAR_REL_TOL: f64 = 1e-10;

const NONE: usize = usize::MAX;

#[derive(Debug, Error)]
pub enum GridError {
    #[error("nodes_per_axis = {0} is below the minimum of {MIN_NODES_PER_AXIS}")]
    TooFewNodes(usize),
    #[error("unsupported dimension {0} (expected 1..=3)")]
    Dimension(usize),
    #[error("shift must be negative, got {0}")]
    NonNegativeShift(f64),
    #[error("field has {got} values but the grid has {expected} interior nodes")]
    Length { expected: usize, got: usize },
    #[error("linear solve stopped after {iterations} iterations with residual {residual:e} (target {target:e})")]
    NotConverged {
        iterations: usize,
        residual: f64,
        target: f64,
    },
}

/// Interior lattice nodes of `B_R` together with their stencil arms.
#[derive(Debug, Clone)]
pub struct BallGrid {
    dim: usize,
    radius: f64,
    nodes_per_axis: usize,
    h: f64,
    /// lattice flat index -> interior node id, `NONE` for ghosts
    lattice: Vec<usize>,
    /// interior node id -> lattice flat index
    node_lattice: Vec<usize>,
    coords: Vec<f64>,
    /// `2 * dim` arms per node, `[axis][minus, plus]`
    arms: Vec<usize>,
}

impl BallGrid {
    pub fn new(dim: usize, radius: f64, nodes_per_axis: usize) -> Result<Self, GridError> {
        if !(1..=MAX_DIM).contains(&dim) {
            return Err(GridError::Dimension(dim));
        }
        if nodes_per_axis < MIN_NODES_PER_AXIS {
            return Err(GridError::TooFewNodes(nodes_per_axis));
        }
        let n = nodes_per_axis;
        let span = (n - 1) as i64;
        let h = 2.0 * radius / span as f64;
        let total = n.pow(dim as u32);

        let mut lattice = vec![NONE; total];
        let mut node_lattice = Vec::new();
        let mut coords = Vec::new();
        let mut idx = [0usize; MAX_DIM];
        for (flat, slot) in lattice.iter_mut().enumerate() {
            unflatten(flat, n, dim, &mut idx);
            // doubled integer offsets from the centre keep the test exact
            let d2: i64 = idx[..dim].iter().map(|&k| (2 * k as i64 - span).pow(2)).sum();
            if d2 < span * span {
                *slot = node_lattice.len();
                node_lattice.push(flat);
                coords.extend(idx[..dim].iter().map(|&k| lattice_coordinate(k, n, radius)));
            }
        }

        let mut arms = vec![NONE; node_lattice.len() * 2 * dim];
        for (node, &flat) in node_lattice.iter().enumerate() {
            unflatten(flat, n, dim, &mut idx);
            let mut stride = 1;
            for axis in 0..dim {
                if idx[axis] > 0 {
                    arms[node * 2 * dim + 2 * axis] = lattice[flat - stride];
                }
                if idx[axis] + 1 < n {
                    arms[node * 2 * dim + 2 * axis + 1] = lattice[flat + stride];
                }
                stride *= n;
            }
        }

        Ok(BallGrid {
            dim,
            radius,
            nodes_per_axis,
            h,
            lattice,
            node_lattice,
            coords,
            arms,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn nodes_per_axis(&self) -> usize {
        self.nodes_per_axis
    }

    /// Number of interior nodes.
    pub fn len(&self) -> usize {
        self.node_lattice.len()
    }

    pub fn is_empty(&self) -> bool {
        self.node_lattice.is_empty()
    }

    pub fn coord(&self, node: usize) -> &[f64] {
        &self.coords[node * self.dim..(node + 1) * self.dim]
    }

    /// Neighbour along `axis` (`plus` selects the positive direction), or
    /// `None` when the arm lands on a ghost.
    pub fn neighbor(&self, node: usize, axis: usize, plus: bool) -> Option<usize> {
        let a = self.arms[node * 2 * self.dim + 2 * axis + plus as usize];
        (a != NONE).then_some(a)
    }

    /// Number of stencil arms of `node` that read the boundary value.
    pub fn boundary_arms(&self, node: usize) -> usize {
        self.node_arms(node).iter().filter(|&&a| a == NONE).count()
    }

    pub fn is_boundary_adjacent(&self, node: usize) -> bool {
        self.boundary_arms(node) > 0
    }

    /// Largest `|x|` over ghost points read by the stencil. Equals the
    /// radius in one dimension; larger on staircase boundaries.
    pub fn ghost_radius(&self) -> f64 {
        let mut best = self.radius * self.radius;
        let mut x = [0.0; MAX_DIM];
        for node in 0..self.len() {
            for axis in 0..self.dim {
                for plus in [false, true] {
                    if self.neighbor(node, axis, plus).is_none() {
                        x[..self.dim].copy_from_slice(self.coord(node));
                        x[axis] += if plus { self.h } else { -self.h };
                        best = best.max(x[..self.dim].iter().map(|v| v * v).sum());
                    }
                }
            }
        }
        best.sqrt()
    }

    fn node_arms(&self, node: usize) -> &[usize] {
        &self.arms[node * 2 * self.dim..(node + 1) * 2 * self.dim]
    }

    /// Number of lattice points, ghosts included.
    pub fn lattice_len(&self) -> usize {
        self.lattice.len()
    }

    /// Interior node at a lattice flat index.
    pub fn node_at_lattice(&self, flat: usize) -> Option<usize> {
        let n = self.lattice[flat];
        (n != NONE).then_some(n)
    }

    pub fn lattice_of_node(&self, node: usize) -> usize {
        self.node_lattice[node]
    }

    /// Multi-index of a lattice flat index.
    pub fn lattice_multi(&self, flat: usize) -> [usize; MAX_DIM] {
        let mut idx = [0; MAX_DIM];
        unflatten(flat, self.nodes_per_axis, self.dim, &mut idx);
        idx
    }

    pub fn lattice_flat(&self, idx: &[usize]) -> usize {
        idx[..self.dim]
            .iter()
            .rev()
            .fold(0, |acc, &k| acc * self.nodes_per_axis + k)
    }

    /// Coordinate of lattice index `k` along any axis.
    pub fn axis_coordinate(&self, k: usize) -> f64 {
        lattice_coordinate(k, self.nodes_per_axis, self.radius)
    }

    /// Lattice cell containing `x` (clamped to the lattice) and the local
    /// coordinates in `[0, 1]` within it.
    pub fn locate(&self, x: &[f64]) -> ([usize; MAX_DIM], [f64; MAX_DIM]) {
        let mut base = [0; MAX_DIM];
        let mut frac = [0.0; MAX_DIM];
        let last = self.nodes_per_axis - 2;
        for axis in 0..self.dim {
            let t = ((x[axis] + self.radius) / self.h).clamp(0.0, (last + 1) as f64);
            let k = (t.floor() as usize).min(last);
            base[axis] = k;
            frac[axis] = (t - k as f64).clamp(0.0, 1.0);
        }
        (base, frac)
    }

    /// Multilinear interpolation of lattice data `value(flat)` at `x`.
    pub fn interpolate(&self, x: &[f64], mut value: impl FnMut(usize) -> f64) -> f64 {
        let (base, frac) = self.locate(x);
        let mut acc = 0.0;
        for corner in 0..(1usize << self.dim) {
            let mut w = 1.0;
            let mut idx = base;
            for axis in 0..self.dim {
                if corner >> axis & 1 == 1 {
                    idx[axis] += 1;
                    w *= frac[axis];
                } else {
                    w *= 1.0 - frac[axis];
                }
            }
            if w != 0.0 {
                acc += w * value(self.lattice_flat(&idx));
            }
        }
        acc
    }
}

fn lattice_coordinate(k: usize, n: usize, radius: f64) -> f64 {
    let span = (n - 1) as f64;
    (2.0 * k as f64 - span) * radius / span
}

fn unflatten(mut flat: usize, n: usize, dim: usize, out: &mut [usize; MAX_DIM]) {
    for slot in out.iter_mut().take(dim) {
        *slot = flat % n;
        flat /= n;
    }
}

/// Uniform lattice over `[-R, R]^N` restricted to the open ball of the
/// instance.
pub fn build_grid(inst: &ProblemInstance, nodes_per_axis: usize) -> Result<BallGrid, GridError> {
    BallGrid::new(inst.n, inst.radius, nodes_per_axis)
}

/// Values on the interior nodes of a grid plus the constant read at ghosts.
#[derive(Debug, Clone)]
pub struct GridField {
    pub grid: Arc<BallGrid>,
    pub values: Vec<f64>,
    pub boundary_value: f64,
}

impl GridField {
    pub fn new(grid: Arc<BallGrid>, values: Vec<f64>, boundary_value: f64) -> Result<Self, GridError> {
        if values.len() != grid.len() {
            return Err(GridError::Length {
                expected: grid.len(),
                got: values.len(),
            });
        }
        Ok(GridField {
            grid,
            values,
            boundary_value,
        })
    }

    pub fn constant(grid: Arc<BallGrid>, value: f64, boundary_value: f64) -> Self {
        let values = vec![value; grid.len()];
        GridField {
            grid,
            values,
            boundary_value,
        }
    }

    /// Samples `f` at every interior node.
    pub fn from_fn(grid: Arc<BallGrid>, boundary_value: f64, mut f: impl FnMut(&[f64]) -> f64) -> Self {
        let values = (0..grid.len()).map(|i| f(grid.coord(i))).collect();
        GridField {
            grid,
            values,
            boundary_value,
        }
    }

    /// Value at a lattice point; ghosts read the boundary value.
    pub fn at_lattice(&self, flat: usize) -> f64 {
        match self.grid.node_at_lattice(flat) {
            Some(node) => self.values[node],
            None => self.boundary_value,
        }
    }

    /// Multilinear interpolation with ghosts at the boundary value.
    pub fn interpolate(&self, x: &[f64]) -> f64 {
        self.grid.interpolate(x, |flat| self.at_lattice(flat))
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// `Δ_h u` at every interior node, ghost arms reading `boundary_value`.
pub(crate) fn laplacian_into(grid: &BallGrid, u: &[f64], boundary_value: f64, out: &mut [f64]) {
    let inv_h2 = 1.0 / (grid.h * grid.h);
    let two_d = 2.0 * grid.dim as f64;
    for (node, o) in out.iter_mut().enumerate() {
        let mut sum = 0.0;
        for &a in grid.node_arms(node) {
            sum += if a == NONE { boundary_value } else { u[a] };
        }
        *o = (sum - two_d * u[node]) * inv_h2;
    }
}

/// Second-order central Laplacian of a field. The result has boundary value 0.
pub fn apply_laplacian(field: &GridField) -> GridField {
    let mut out = vec![0.0; field.values.len()];
    laplacian_into(&field.grid, &field.values, field.boundary_value, &mut out);
    GridField {
        grid: field.grid.clone(),
        values: out,
        boundary_value: 0.0,
    }
}

/// Statistics of one linear solve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearStats {
    pub iterations: usize,
    /// `‖(Δ_h+Λ)u − rhs‖_∞` on interior nodes.
    pub residual: f64,
    /// Residual target that was met.
    pub target: f64,
}

/// `y = -(Δ_h + Λ) x` with homogeneous ghosts.
fn apply_negated(grid: &BallGrid, shift: f64, x: &[f64], y: &mut [f64]) {
    let inv_h2 = 1.0 / (grid.h * grid.h);
    let diag = 2.0 * grid.dim as f64 * inv_h2 - shift;
    for (node, yi) in y.iter_mut().enumerate() {
        let mut off = 0.0;
        for &a in grid.node_arms(node) {
            if a != NONE {
                off += x[a];
            }
        }
        *yi = diag * x[node] - off * inv_h2;
    }
}

/// Sup-norm that propagates NaN.
fn inf_norm(v: &[f64]) -> f64 {
    if v.iter().any(|x| x.is_nan()) {
        return f64::NAN;
    }
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Solves `(Δ_h + Λ) u = rhs` with ghosts at `boundary_value` by
/// Jacobi-preconditioned conjugate gradients on the SPD system
/// `-(Δ_h + Λ) u = boundary terms − rhs`.
///
/// The solve stops once the interior residual is at most `rel_tol` times the
/// sup-norm of that lifted right-hand side (which is `‖rhs‖_∞` whenever the
/// boundary value is zero). `guess` seeds the iteration.
pub fn solve_shifted_with(
    grid: &BallGrid,
    shift: f64,
    rhs: &[f64],
    boundary_value: f64,
    rel_tol: f64,
    guess: Option<&[f64]>,
) -> Result<(Vec<f64>, LinearStats), GridError> {
    if !(shift < 0.0) {
        return Err(GridError::NonNegativeShift(shift));
    }
    let len = grid.len();
    if rhs.len() != len {
        return Err(GridError::Length {
            expected: len,
            got: rhs.len(),
        });
    }
    let inv_h2 = 1.0 / (grid.h * grid.h);
    let b: Vec<f64> = (0..len)
        .map(|i| boundary_value * grid.boundary_arms(i) as f64 * inv_h2 - rhs[i])
        .collect();
    let target = rel_tol * inf_norm(&b);
    let mut x = match guess {
        Some(g) => g.to_vec(),
        None => vec![0.0; len],
    };
    if target == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return Ok((x, LinearStats { iterations: 0, residual: 0.0, target }));
    }

    let inv_diag = 1.0 / (2.0 * grid.dim as f64 * inv_h2 - shift);
    let max_iter = 20 * len + 200;
    let mut r = vec![0.0; len];
    let mut z = vec![0.0; len];
    let mut p = vec![0.0; len];
    let mut q = vec![0.0; len];
    let mut iterations = 0;

    // outer loop restarts from the true residual if the recurrence drifted
    loop {
        apply_negated(grid, shift, &x, &mut q);
        for i in 0..len {
            r[i] = b[i] - q[i];
        }
        let residual = inf_norm(&r);
        if residual <= target {
            return Ok((x, LinearStats { iterations, residual, target }));
        }
        if iterations >= max_iter || !residual.is_finite() {
            return Err(GridError::NotConverged {
                iterations,
                residual,
                target,
            });
        }
        for i in 0..len {
            z[i] = r[i] * inv_diag;
        }
        p.copy_from_slice(&z);
        let mut rz = dot(&r, &z);
        while iterations < max_iter {
            iterations += 1;
            apply_negated(grid, shift, &p, &mut q);
            let pq = dot(&p, &q);
            if rz == 0.0 || pq == 0.0 {
                break;
            }
            let alpha = rz / pq;
            for i in 0..len {
                x[i] += alpha * p[i];
                r[i] -= alpha * q[i];
            }
            if inf_norm(&r) <= 0.5 * target {
                break;
            }
            for i in 0..len {
                z[i] = r[i] * inv_diag;
            }
            let rz_new = dot(&r, &z);
            let beta = rz_new / rz;
            rz = rz_new;
            for i in 0..len {
                p[i] = z[i] + beta * p[i];
            }
        }
    }
}

/// Solves `(Δ_h + Λ) u = rhs` with Dirichlet data `boundary_value` to the
/// default relative residual [`LINEAR_REL_TOL`].
pub fn solve_shifted(
    grid: &Arc<BallGrid>,
    shift: f64,
    rhs: &GridField,
    boundary_value: f64,
) -> Result<GridField, GridError> {
    let (values, _) = solve_shifted_with(grid, shift, &rhs.values, boundary_value, LINEAR_REL_TOL, None)?;
    Ok(GridField {
        grid: grid.clone(),
        values,
        boundary_value,
    })
}
