//! Benchmark fixtures shared by the criterion benches.

use std::sync::Arc;

use prodplan_core::{
    build_grid, choose_constants, extract_policy, monotone_iterate, transform_to_z, BallGrid, PicardOptions,
    PolicyField, ProblemInstance, SubSuperCertificate,
};

/// The example instance lifted to `n` dimensions.
pub fn instance(n: usize) -> ProblemInstance {
    let mut inst = ProblemInstance::example();
    inst.n = n;
    inst.y0 = vec![0.0; n];
    inst
}

pub fn grid(inst: &ProblemInstance, nodes: usize) -> Arc<BallGrid> {
    Arc::new(build_grid(inst, nodes).expect("valid grid size"))
}

pub fn certificate(inst: &ProblemInstance) -> SubSuperCertificate {
    choose_constants(inst).expect("example instances certify")
}

/// Optimal policy of the one-dimensional example on `nodes` nodes.
pub fn optimal_policy(nodes: usize) -> (ProblemInstance, PolicyField) {
    let inst = instance(1);
    let cert = certificate(&inst);
    let sol = monotone_iterate(&inst, &cert, &grid(&inst, nodes), PicardOptions::default()).expect("converges");
    let values = transform_to_z(&sol.u[0], &sol.u[1], &inst).expect("positive fields");
    (inst, extract_policy(&values))
}
