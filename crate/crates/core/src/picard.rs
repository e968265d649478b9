//! Monotone Picard iteration for the transformed system.
//!
//! Starting from the certified sub-solution, each sweep solves
//!
//! ```text
//! (Δ_h + Λ_j) u_j^k = g_j(x, u₁^{k−1}, u₂^{k−1}) + Λ_j u_j^{k−1},   u_j^k = 1 on ghosts
//! ```
//!
//! for both regimes. The sweep is carried out in correction form: the
//! increment `w = u^k − u^{k−1}` solves `(Δ_h + Λ_j) w = g_j(u^{k−1}) − Δ_h u_j^{k−1}`
//! with zero ghosts, which is the same linear problem but lets the linear
//! solver work relative to the size of the increment rather than of `u`.
//! Because `-(Δ_h + Λ)` is an M-matrix and `−Λ_j` dominates `∂g_j/∂u_j`,
//! every increment is nonnegative.

use std::sync::Arc;

use serde::Serialize;
use thiserror::Error;

use crate::grid::{laplacian_into, solve_shifted_with, BallGrid, GridError, GridField};
use crate::model::{ProblemInstance, Regime};
use crate::subsuper::{choose_constants, CertError, Coupling, SubSuperCertificate};

/// Relative accuracy of the increment solves.
const INCREMENT_REL_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PicardOptions {
    /// Stop once `max |u^k − u^{k−1}| <= tol`.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for PicardOptions {
    fn default() -> Self {
        PicardOptions {
            tol: 1e-9,
            max_iter: 10_000,
        }
    }
}

/// Diagnostics of one sweep (both regimes).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IterationRecord {
    pub iteration: usize,
    /// `max_j ‖u_j^k − u_j^{k−1}‖_∞`
    pub max_update: f64,
    /// `min_j min_nodes (u_j^k − u_j^{k−1})`; nonnegative up to rounding.
    pub min_update: f64,
    /// `max_j ‖Δ_h u_j^{k−1} − g_j(u^{k−1})‖_∞`, the residual of the
    /// discrete system at the previous iterate.
    pub residual: f64,
    /// `min_j min_nodes min(u_j^k − sub_j, 1 − u_j^k)`
    pub sandwich_slack: f64,
    pub linear_iterations: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct IterationTrace {
    pub records: Vec<IterationRecord>,
}

impl IterationTrace {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Smallest nodewise increment over the whole run.
    pub fn min_ordering_slack(&self) -> f64 {
        self.records.iter().map(|r| r.min_update).fold(f64::INFINITY, f64::min)
    }

    /// Smallest sandwich slack over the whole run.
    pub fn min_sandwich_slack(&self) -> f64 {
        self.records.iter().map(|r| r.sandwich_slack).fold(f64::INFINITY, f64::min)
    }

    pub fn last(&self) -> Option<&IterationRecord> {
        self.records.last()
    }
}

#[derive(Debug, Error)]
pub enum PicardError {
    #[error("monotone iteration did not reach tol {tol:e} in {max_iter} sweeps (last update {last_update:e})")]
    MaxIterations {
        tol: f64,
        max_iter: usize,
        last_update: f64,
        trace: Box<IterationTrace>,
    },
    #[error("tolerance must be positive, got {0}")]
    BadTolerance(f64),
    #[error("grid dimension {grid} does not match instance dimension {instance}")]
    Dimension { grid: usize, instance: usize },
    #[error(transparent)]
    Linear(#[from] GridError),
    #[error("cannot certify the grid's effective domain: {0}")]
    Cert(#[from] CertError),
}

/// Converged transformed fields.
#[derive(Debug, Clone)]
pub struct MonotoneSolution {
    /// `[u₁, u₂]`, ghosts at 1.
    pub u: [GridField; 2],
    /// The sub-solutions the iteration started from.
    pub sub: [GridField; 2],
    pub trace: IterationTrace,
    /// `‖Δ_h u_j − g_j(u)‖_∞` at the returned fields.
    pub residual: [f64; 2],
    /// Shifts actually used.
    pub shifts: [f64; 2],
    /// Certificate the iteration started from, and the radius it holds on.
    pub start: SubSuperCertificate,
    pub start_radius: f64,
}

impl MonotoneSolution {
    pub fn u(&self, regime: Regime) -> &GridField {
        &self.u[regime.index()]
    }

    pub fn iterations(&self) -> usize {
        self.trace.len()
    }

    /// Residual divided by `|Λ_j|`, i.e. measured in units of `u`.
    pub fn scaled_residual(&self) -> f64 {
        (self.residual[0] / self.shifts[0].abs()).max(self.residual[1] / self.shifts[1].abs())
    }
}

struct Nonlinearity {
    coupling: Coupling,
    cost: [Vec<f64>; 2],
    box_lo: [f64; 2],
}

impl Nonlinearity {
    fn new(inst: &ProblemInstance, cert: &SubSuperCertificate, radius: f64, grid: &BallGrid) -> Self {
        let cost = Regime::BOTH.map(|r| (0..grid.len()).map(|i| inst.cost(r).value(grid.coord(i))).collect());
        Nonlinearity {
            coupling: Coupling::new(inst),
            cost,
            box_lo: Regime::BOTH.map(|r| cert.box_lo(r, radius)),
        }
    }

    /// Writes `g_j(u) − Δ_h u_j` into `out` and returns its sup-norm.
    fn defect(&self, grid: &BallGrid, regime: Regime, u: &[Vec<f64>; 2], out: &mut [f64]) -> f64 {
        let j = regime.index();
        let o = regime.other().index();
        laplacian_into(grid, &u[j], 1.0, out);
        let mut norm: f64 = 0.0;
        for (i, d) in out.iter_mut().enumerate() {
            // iterates stay in the order box; clamp away rounding excursions
            let own = u[j][i].clamp(self.box_lo[j], 1.0);
            let other = u[o][i].clamp(self.box_lo[o], 1.0);
            *d = self.coupling.g(regime, self.cost[j][i], own, other) - *d;
            norm = norm.max(d.abs());
        }
        norm
    }
}

/// Runs the monotone iteration from the sub-solution to a fixed point of the
/// discrete transformed system.
pub fn monotone_iterate(
    inst: &ProblemInstance,
    cert: &SubSuperCertificate,
    grid: &Arc<BallGrid>,
    opts: PicardOptions,
) -> Result<MonotoneSolution, PicardError> {
    if !(opts.tol > 0.0) {
        return Err(PicardError::BadTolerance(opts.tol));
    }
    if grid.dim() != inst.n {
        return Err(PicardError::Dimension {
            grid: grid.dim(),
            instance: inst.n,
        });
    }
    let len = grid.len();
    // Staircase ghosts can sit outside the sphere, where the sub-solution of
    // the ball exceeds the boundary value 1. Certify on a ball through them.
    let ghost_radius = grid.ghost_radius();
    let local;
    let (cert, radius) = if ghost_radius > inst.radius * (1.0 + 1e-9) {
        let mut wide = inst.clone();
        wide.radius = ghost_radius;
        local = choose_constants(&wide)?;
        (&local, ghost_radius)
    } else {
        (cert, inst.radius)
    };
    let sub: [Vec<f64>; 2] =
        Regime::BOTH.map(|r| (0..len).map(|i| cert.subsolution(r, radius, grid.coord(i))).collect());
    let shifts = [cert.lambda1, cert.lambda2];
    let nl = Nonlinearity::new(inst, cert, radius, grid);

    let mut u = sub.clone();
    let mut defect = [vec![0.0; len], vec![0.0; len]];
    let mut trace = IterationTrace::default();

    let sweep = |regime: Regime, u: &[Vec<f64>; 2], d: &mut Vec<f64>| -> Result<(Vec<f64>, f64, usize), GridError> {
        let norm = nl.defect(grid, regime, u, d);
        let (w, stats) = solve_shifted_with(grid, shifts[regime.index()], d, 0.0, INCREMENT_REL_TOL, None)?;
        Ok((w, norm, stats.iterations))
    };

    for iteration in 1..=opts.max_iter {
        let [d1, d2] = &mut defect;
        let (r1, r2) = rayon::join(|| sweep(Regime::One, &u, d1), || sweep(Regime::Two, &u, d2));
        let (w1, n1, it1) = r1?;
        let (w2, n2, it2) = r2?;

        let mut max_update: f64 = 0.0;
        let mut min_update = f64::INFINITY;
        let mut sandwich = f64::INFINITY;
        for (j, w) in [w1, w2].iter().enumerate() {
            for i in 0..len {
                u[j][i] += w[i];
                max_update = max_update.max(w[i].abs());
                min_update = min_update.min(w[i]);
                sandwich = sandwich.min(u[j][i] - sub[j][i]).min(1.0 - u[j][i]);
            }
        }
        trace.records.push(IterationRecord {
            iteration,
            max_update,
            min_update,
            residual: n1.max(n2),
            sandwich_slack: sandwich,
            linear_iterations: it1 + it2,
        });

        if max_update <= opts.tol {
            let residual = Regime::BOTH.map(|r| nl.defect(grid, r, &u, &mut defect[r.index()]));
            let [u1, u2] = u;
            let [s1, s2] = sub;
            let field = |values| GridField {
                grid: grid.clone(),
                values,
                boundary_value: 1.0,
            };
            return Ok(MonotoneSolution {
                u: [field(u1), field(u2)],
                sub: [field(s1), field(s2)],
                trace,
                residual,
                shifts,
                start: cert.clone(),
                start_radius: radius,
            });
        }
    }

    let last_update = trace.last().map_or(f64::NAN, |r| r.max_update);
    Err(PicardError::MaxIterations {
        tol: opts.tol,
        max_iter: opts.max_iter,
        last_update,
        trace: Box::new(trace),
    })
}
