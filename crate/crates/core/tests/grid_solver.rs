use std::sync::Arc;

use prodplan_core::grid::solve_shifted_with;
use prodplan_core::{apply_laplacian, build_grid, solve_shifted, BallGrid, GridError, GridField, ProblemInstance};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn grid(dim: usize, n: usize) -> Arc<BallGrid> {
    Arc::new(BallGrid::new(dim, 1.0, n).unwrap())
}

#[test]
fn one_dimensional_structure() {
    let g = grid(1, 17);
    assert_eq!(g.len(), 15);
    assert_eq!(g.h(), 0.125);
    let mut flagged = 0;
    for node in 0..g.len() {
        let arms = (0..2).filter(|&p| g.neighbor(node, 0, p == 1).is_some()).count();
        assert_eq!(arms + g.boundary_arms(node), 2);
        if g.is_boundary_adjacent(node) {
            flagged += 1;
            assert!((g.coord(node)[0].abs() - 0.875).abs() < 1e-15);
        }
    }
    assert_eq!(flagged, 2);
    assert_eq!(g.ghost_radius(), 1.0);
}

#[test]
fn interior_counts_match_direct_enumeration() {
    for (dim, n) in [(2, 17), (2, 33), (3, 17)] {
        let g = grid(dim, n);
        let h = 2.0 / (n - 1) as f64;
        let total = n.pow(dim as u32);
        let mut count = 0;
        for flat in 0..total {
            let mut rest = flat;
            let mut r2 = 0.0;
            for _ in 0..dim {
                let x = -1.0 + (rest % n) as f64 * h;
                rest /= n;
                r2 += x * x;
            }
            if r2 < 1.0 {
                count += 1;
            }
        }
        assert_eq!(g.len(), count, "dim {dim} n {n}");
        for node in 0..g.len() {
            assert!(g.coord(node).iter().map(|v| v * v).sum::<f64>() < 1.0);
        }
    }
}

#[test]
fn too_coarse_grid_is_rejected() {
    let inst = ProblemInstance::example();
    assert!(matches!(build_grid(&inst, 8), Err(GridError::TooFewNodes { .. })));
    assert!(build_grid(&inst, 17).is_ok());
}

#[test]
fn laplacian_of_constants_vanishes() {
    for dim in 1..=3 {
        let g = grid(dim, 17);
        let c = GridField::constant(g, 0.7, 0.7);
        assert!(apply_laplacian(&c).max_abs() < 1e-12);
    }
}

#[test]
fn laplacian_is_exact_on_quadratics() {
    let g = grid(1, 33);
    let u = GridField::from_fn(g, 1.0, |x| x[0] * x[0]);
    let lap = apply_laplacian(&u);
    assert!(lap.values.iter().all(|v| (v - 2.0).abs() < 1e-10));

    let g = grid(2, 33);
    let u = GridField::from_fn(g.clone(), 1.0, |x| x[0] * x[0] + x[1] * x[1]);
    let lap = apply_laplacian(&u);
    for node in (0..g.len()).filter(|&k| !g.is_boundary_adjacent(k)) {
        assert!((lap.values[node] - 4.0).abs() < 1e-10);
    }
}

#[test]
fn constant_rhs_gives_constant_solution() {
    for dim in 1..=3 {
        let g = grid(dim, 17);
        let rhs = GridField::constant(g.clone(), -3.0, 0.0);
        let u = solve_shifted(&g, -3.0, &rhs, 1.0).unwrap();
        assert!(u.values.iter().all(|v| (v - 1.0).abs() < 1e-9), "dim {dim}");
    }
}

#[test]
fn helmholtz_cosh_converges_at_second_order() {
    let mut errors = Vec::new();
    for n in [33, 65, 129] {
        let g = grid(1, n);
        let rhs = GridField::constant(g.clone(), 0.0, 0.0);
        let u = solve_shifted(&g, -1.0, &rhs, 1.0).unwrap();
        let err = (0..g.len())
            .map(|k| (u.values[k] - g.coord(k)[0].cosh() / 1f64.cosh()).abs())
            .fold(0.0, f64::max);
        assert!(err <= g.h() * g.h(), "n {n}: {err:e}");
        errors.push(err);
    }
    for w in errors.windows(2) {
        let ratio = w[0] / w[1];
        assert!((3.8..4.2).contains(&ratio), "{ratio}");
    }
}

#[test]
fn random_rhs_residual_is_within_target() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for dim in 1..=3 {
        let g = grid(dim, if dim == 3 { 17 } else { 33 });
        let values: Vec<f64> = (0..g.len()).map(|_| rng.random_range(-5.0..5.0)).collect();
        let rhs = GridField::new(g.clone(), values, 0.0).unwrap();
        let bv = 0.5;
        let shift = -7.5;
        let u = solve_shifted(&g, shift, &rhs, bv).unwrap();
        let lap = apply_laplacian(&u);
        let residual = (0..g.len())
            .map(|k| (lap.values[k] + shift * u.values[k] - rhs.values[k]).abs())
            .fold(0.0, f64::max);
        // the target is relative to the rhs with the boundary terms lifted
        let lifted = (0..g.len())
            .map(|k| (rhs.values[k] - bv * g.boundary_arms(k) as f64 / (g.h() * g.h())).abs())
            .fold(0.0, f64::max);
        assert!(residual <= 1e-10 * lifted, "dim {dim}: {residual:e}");
    }
}

#[test]
fn operator_is_symmetric() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let g = grid(2, 33);
    let u = GridField::new(g.clone(), (0..g.len()).map(|_| rng.random::<f64>()).collect(), 0.0).unwrap();
    let v = GridField::new(g.clone(), (0..g.len()).map(|_| rng.random::<f64>()).collect(), 0.0).unwrap();
    let dot = |a: &GridField, b: &GridField| a.values.iter().zip(&b.values).map(|(x, y)| x * y).sum::<f64>();
    let (au, av) = (apply_laplacian(&u), apply_laplacian(&v));
    let (l, r) = (dot(&au, &v), dot(&u, &av));
    assert!((l - r).abs() <= 1e-10 * l.abs().max(r.abs()));
}

#[test]
fn nonnegative_shift_is_rejected() {
    let g = grid(1, 17);
    let rhs = GridField::constant(g.clone(), 0.0, 0.0);
    assert!(matches!(solve_shifted(&g, 0.0, &rhs, 1.0), Err(GridError::NonNegativeShift(_))));
}

#[test]
fn iteration_cap_reports_the_residual() {
    let g = grid(2, 65);
    let rhs = vec![1.0; g.len()];
    // an absurd target cannot be met
    match solve_shifted_with(&g, -1.0, &rhs, 0.0, 1e-300, None) {
        Err(GridError::NotConverged { residual, .. }) => assert!(residual > 0.0),
        other => panic!("unexpected {other:?}"),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    /// `−(Δ_h + Λ)` is an M-matrix: a nonpositive right-hand side with a
    /// nonnegative boundary value gives a nonnegative solution.
    #[test]
    fn discrete_maximum_principle(seed in any::<u64>(), dim in 1usize..=2, shift in -200.0f64..-0.1, bv in 0.0f64..2.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = grid(dim, 17);
        let values: Vec<f64> = (0..g.len()).map(|_| -rng.random::<f64>()).collect();
        let rhs = GridField::new(g.clone(), values, 0.0).unwrap();
        let u = solve_shifted(&g, shift, &rhs, bv).unwrap();
        prop_assert!(u.min() >= -1e-12);
    }
}
