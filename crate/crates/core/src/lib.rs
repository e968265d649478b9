//! Two-regime stochastic production planning.
//!
//! The crate solves the coupled Hamilton–Jacobi–Bellman system for a factory
//! whose inventory follows a Markov-modulated Brownian motion and whose
//! production stops once the inventory leaves a ball of radius `R`:
//!
//! ```text
//! -a₁z₂ + (a₁+α₁)z₁ - σ₁²/2 Δz₁ - f₁(x) = -¼|∇z₁|²   in B_R
//! -a₂z₁ + (a₂+α₂)z₂ - σ₂²/2 Δz₂ - f₂(x) = -¼|∇z₂|²   in B_R
//! z₁ = z₂ = 0                                         on ∂B_R
//! ```
//!
//! The pipeline mirrors the constructive existence argument:
//!
//! * [`subsuper`] certifies an ordered sub/super-solution pair of the
//!   exponentially transformed system `u_j = exp(-z_j / 2σ_j²)`,
//! * [`grid`] discretizes the ball and solves shifted Helmholtz problems,
//! * [`picard`] runs the monotone iteration between the two bounds,
//! * [`hjb`] maps back to value functions and extracts the feedback policy
//!   `p̄ = -½∇z_j`,
//! * [`simulate`] estimates the discounted cost of any policy by Monte Carlo
//!   and checks the optimality of `p̄` against challengers.

// `!(x > 0.0)` style guards reject NaN along with the out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod grid;
pub mod hjb;
pub mod model;
pub mod picard;
pub mod simulate;
pub mod subsuper;

pub use grid::{apply_laplacian, build_grid, solve_shifted, BallGrid, GridError, GridField};
pub use hjb::{
    extract_policy, foc_infimum, hjb_residual, transform_to_u, transform_to_z, HjbError, PolicyField,
    ValueFields,
};
pub use model::{
    eval_cost, validate, CostFunction, CostKind, ModelError, ProblemInstance, Regime,
    RegimeParams, ValidationReport, Violation,
};
pub use picard::{monotone_iterate, IterationRecord, IterationTrace, MonotoneSolution, PicardError, PicardOptions};
pub use subsuper::{
    choose_constants, choose_shifts, eval_subsolution, eval_supersolution, CertError,
    SubSuperCertificate,
};
pub use simulate::{
    sample_regime_path, simulate_cost, simulate_cost_paired, simulate_paths, trace_path, verify_optimality,
    write_paths_csv, Challenger, CostEstimate, FeedbackPolicy, PairedEstimate, PathOutcome, PathTrace,
    RegimePath, SimConfig, SimError, VerificationReport, ZeroPolicy,
};
