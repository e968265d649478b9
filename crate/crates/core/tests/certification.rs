mod support;

use prodplan_core::subsuper::{interval_product, k1_interval, quadratic_floor};
use prodplan_core::{choose_constants, eval_subsolution, eval_supersolution, CostFunction, ProblemInstance, Regime};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use support::instances::{random_instance, symmetric_instance};

/// The four sufficient inequalities, written out independently.
fn oracle_ineq(inst: &ProblemInstance, k1: f64, k2: f64) -> [f64; 4] {
    let r = &inst.regimes;
    let (s1, s2) = (r.sigma1 * r.sigma1, r.sigma2 * r.sigma2);
    let m1 = inst.cost_bound(Regime::One);
    let m2 = inst.cost_bound(Regime::Two);
    let rr = inst.radius * inst.radius;
    let n = inst.n as f64;
    [
        4.0 * k1 * k1 + 2.0 * (r.a1 + r.alpha1) * k1 / s1 - m1 / (s1 * s1) - 2.0 * r.a1 * s2 * k2 / (s1 * s1),
        4.0 * k2 * k2 + 2.0 * (r.a2 + r.alpha2) * k2 / s2 - m2 / (s2 * s2) - 2.0 * r.a2 * s1 * k1 / (s2 * s2),
        -2.0 * k1 * ((r.a1 + r.alpha1) * rr / s1 + n) + 2.0 * r.a1 * s2 * rr * k2 / (s1 * s1),
        -2.0 * k2 * ((r.a2 + r.alpha2) * rr / s2 + n) + 2.0 * r.a2 * s1 * rr * k1 / (s2 * s2),
    ]
}

/// `Δu − g(u)` for the sub-solution pair at `x`, divided by `u`, with the
/// analytic Laplacian `(4K²|x|² − 2KN) e^{K(R²−|x|²)}`.
fn subsolution_defect(inst: &ProblemInstance, k: [f64; 2], x: &[f64]) -> [f64; 2] {
    let x2: f64 = x.iter().map(|v| v * v).sum();
    let d = inst.radius * inst.radius - x2;
    let n = inst.n as f64;
    let mut out = [0.0; 2];
    for reg in Regime::BOTH {
        let (j, o) = (reg.index(), reg.other().index());
        let s2 = inst.sigma(reg).powi(2);
        let so2 = inst.sigma(reg.other()).powi(2);
        let a = inst.leave_rate(reg);
        let lap = 4.0 * k[j] * k[j] * x2 - 2.0 * k[j] * n;
        let g = inst.cost(reg).value(x) / (s2 * s2) + 2.0 * (a + inst.alpha(reg)) / s2 * k[j] * d
            - 2.0 * a * so2 / (s2 * s2) * k[o] * d;
        out[j] = lap - g;
    }
    out
}

#[test]
fn brute_force_scan_contains_the_certificate() {
    let inst = ProblemInstance::example();
    let cert = choose_constants(&inst).unwrap();
    let step = 1e-2;
    let mut feasible = 0usize;
    let mut best_k1_for_k2 = f64::NEG_INFINITY;
    for i in 1..=5000 {
        let k2 = -(i as f64) * step;
        for l in 1..=5000 {
            let k1 = -(l as f64) * step;
            if oracle_ineq(&inst, k1, k2).iter().all(|m| *m >= 0.0) {
                feasible += 1;
                if (k2 - cert.k2).abs() < step {
                    best_k1_for_k2 = best_k1_for_k2.max(k1);
                }
            }
        }
    }
    assert!(feasible > 0);
    let margins = oracle_ineq(&inst, cert.k1, cert.k2);
    for (m, scale) in margins.iter().zip([1.0, 1.0, 100.0, 100.0]) {
        assert!(*m >= -1e-12 * scale, "{margins:?}");
    }
    // the returned K1 is no more negative than any scanned feasible K1 at a
    // neighbouring K2, up to the scan resolution
    assert!(cert.k1 >= best_k1_for_k2 - 2.0 * step, "{} vs {best_k1_for_k2}", cert.k1);
}

#[test]
fn certificate_values_for_the_example() {
    let cert = choose_constants(&ProblemInstance::example()).unwrap();
    assert!((cert.k1 + 7.2608).abs() < 1e-4, "{}", cert.k1);
    assert!((cert.k2 + 3.9047).abs() < 1e-4, "{}", cert.k2);
    assert_eq!(cert.doublings, 0);
}

#[test]
fn symmetric_instance_admits_equal_exponents() {
    let inst = symmetric_instance(1.0, 0.1, 0.5, 1.5);
    let cert = choose_constants(&inst).unwrap();
    let swapped = oracle_ineq(&inst, cert.k2, cert.k1);
    assert!(swapped.iter().all(|m| *m >= 0.0), "{swapped:?}");
    let k = cert.k1.min(cert.k2);
    let equal = oracle_ineq(&inst, k, k);
    assert!(equal.iter().all(|m| *m >= 0.0), "{equal:?}");
}

#[test]
fn k1_respects_the_quadratic_floor() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..200 {
        let n = rng.random_range(1..=3);
        let inst = random_instance(&mut rng, n);
        let cert = choose_constants(&inst).unwrap();
        let r = &inst.regimes;
        let b = r.a1 + r.alpha1;
        let floor = (b + (b * b + 4.0 * inst.cost_bound(Regime::One)).sqrt()) / (4.0 * r.sigma1 * r.sigma1);
        assert!(-cert.k1 >= floor * (1.0 - 1e-14));
    }
}

#[test]
fn shifts_dominate_sampled_derivatives() {
    let inst = ProblemInstance::example();
    let cert = choose_constants(&inst).unwrap();
    let r2 = inst.radius * inst.radius;
    let lo = [(cert.k1 * r2).exp(), (cert.k2 * r2).exp()];
    let s1 = inst.sigma(Regime::One).powi(2);
    let s2 = inst.sigma(Regime::Two).powi(2);
    let c11 = 2.0 * (inst.regimes.a1 + inst.regimes.alpha1) / s1;
    let c12 = 2.0 * inst.regimes.a1 * s2 / (s1 * s1);
    let c22 = 2.0 * (inst.regimes.a2 + inst.regimes.alpha2) / s2;
    let c21 = 2.0 * inst.regimes.a2 * s1 / (s2 * s2);
    let lin = |lo: f64, k: usize| lo + (1.0 - lo) * k as f64 / 49.0;
    let mut min_d = [f64::INFINITY; 2];
    let mut max_abs = [0.0f64; 2];
    for i in 0..50 {
        let x = -1.0 + 2.0 * i as f64 / 49.0;
        for a in 0..50 {
            for b in 0..50 {
                let (t, s) = (lin(lo[0], a), lin(lo[1], b));
                // ∂g₁/∂t and ∂g₂/∂s
                let d1 = inst.f1.value(&[x]) / (s1 * s1) + c11 * (t.ln() + 1.0) - c12 * s.ln();
                let d2 = inst.f2.value(&[x]) / (s2 * s2) + c22 * (s.ln() + 1.0) - c21 * t.ln();
                for (j, d) in [d1, d2].into_iter().enumerate() {
                    min_d[j] = min_d[j].min(d);
                    max_abs[j] = max_abs[j].max(d.abs());
                }
            }
        }
    }
    assert!(cert.lambda1 < 0.0 && cert.lambda2 < 0.0);
    assert!(cert.lambda1 <= min_d[0] && cert.lambda2 <= min_d[1]);
    assert!(-cert.lambda1 >= max_abs[0] && -cert.lambda2 >= max_abs[1]);
}

#[test]
fn shift_in_the_weak_coupling_limit() {
    let mut inst = ProblemInstance::example();
    inst.f1 = CostFunction::zero();
    inst.regimes.a1 = 1e-12;
    let cert = choose_constants(&inst).unwrap();
    let s1 = inst.sigma(Regime::One).powi(2);
    let c = 2.0 * (inst.regimes.a1 + inst.regimes.alpha1) / s1;
    let t_lo = cert.box_lo(Regime::One, inst.radius);
    let inf = (0..=1000)
        .map(|k| t_lo + (1.0 - t_lo) * k as f64 / 1000.0)
        .map(|t| c * (t.ln() + 1.0))
        .fold(f64::INFINITY, f64::min);
    assert!(cert.lambda1 <= inf);
}

#[test]
fn doubling_the_cost_bound_deepens_the_shift() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..50 {
        let inst = random_instance(&mut rng, 1);
        let base = choose_constants(&inst).unwrap();
        let mut worse = inst.clone();
        worse.f1 = worse.f1.clone().with_bound(2.0 * inst.cost_bound(Regime::One));
        let deeper = choose_constants(&worse).unwrap();
        assert!(deeper.lambda1 <= base.lambda1, "{} > {}", deeper.lambda1, base.lambda1);
    }
}

#[test]
fn subsolution_is_below_supersolution() {
    let inst = ProblemInstance {
        n: 3,
        y0: vec![0.0; 3],
        ..ProblemInstance::example()
    };
    let cert = choose_constants(&inst).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..10_000 {
        let x: Vec<f64> = loop {
            let x: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
            if x.iter().map(|v| v * v).sum::<f64>() <= 1.0 {
                break x;
            }
        };
        for r in Regime::BOTH {
            let sub = eval_subsolution(&cert, &inst, r, &x).unwrap();
            assert!(sub > 0.0 && sub <= eval_supersolution(r, &x));
        }
    }
}

#[test]
fn subsolution_satisfies_the_differential_inequalities() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for n in 1..=3 {
        let inst = ProblemInstance {
            n,
            y0: vec![0.0; n],
            ..ProblemInstance::example()
        };
        let cert = choose_constants(&inst).unwrap();
        for _ in 0..1000 {
            let x: Vec<f64> = loop {
                let x: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
                if x.iter().map(|v| v * v).sum::<f64>() < 1.0 {
                    break x;
                }
            };
            let d = subsolution_defect(&inst, [cert.k1, cert.k2], &x);
            assert!(d[0] >= -1e-9 && d[1] >= -1e-9, "{d:?} at {x:?}");
        }
    }
}

fn instance_strategy() -> impl Strategy<Value = ProblemInstance> {
    (any::<u64>(), 1usize..=3).prop_map(|(seed, n)| random_instance(&mut ChaCha8Rng::seed_from_u64(seed), n))
}

proptest! {
    #[test]
    fn every_valid_instance_is_certified(inst in instance_strategy()) {
        let cert = choose_constants(&inst).unwrap();
        prop_assert!(cert.k1 < 0.0 && cert.k2 < 0.0);
        prop_assert!(cert.lambda1 < 0.0 && cert.lambda2 < 0.0);
        prop_assert!(cert.ineq_margins.iter().all(|m| *m >= 0.0));
        let (lhs, rhs) = interval_product(&inst);
        prop_assert!(lhs >= rhs);
        let (lo, hi) = k1_interval(&inst, cert.k2);
        prop_assert!(lo <= hi);
        prop_assert!(-cert.k1 >= lo && -cert.k1 <= hi);
        prop_assert!(-cert.k1 >= quadratic_floor(&inst, Regime::One));
    }

    #[test]
    fn product_inequality_holds(inst in instance_strategy()) {
        let r = &inst.regimes;
        let rr = inst.radius * inst.radius;
        let n = inst.n as f64;
        let (s1, s2) = (r.sigma1 * r.sigma1, r.sigma2 * r.sigma2);
        let lhs = (2.0 * (r.a2 + r.alpha2) * rr / s2 + 2.0 * n) * (2.0 * (r.a1 + r.alpha1) * rr / s1 + 2.0 * n);
        let rhs = (2.0 * r.a1 * s2 * rr / (s1 * s1)) * (2.0 * r.a2 * s1 * rr / (s2 * s2));
        prop_assert!(lhs >= rhs);
    }
}
