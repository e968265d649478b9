use prodplan_core::{CostFunction, ProblemInstance, Regime, RegimeParams};
use rand::Rng;

pub fn log_uniform<R: Rng>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    (rng.random_range(lo.ln()..hi.ln())).exp()
}

/// Rates, discounts, volatilities and radius log-uniform in `[0.1, 10]`,
/// radial cost coefficients uniform in `[0.1, 5]`.
pub fn random_instance<R: Rng>(rng: &mut R, n: usize) -> ProblemInstance {
    let mut p = || log_uniform(rng, 0.1, 10.0);
    let regimes = RegimeParams {
        a1: p(),
        a2: p(),
        alpha1: p(),
        alpha2: p(),
        sigma1: p(),
        sigma2: p(),
    };
    let radius = p();
    ProblemInstance {
        n,
        radius,
        regimes,
        f1: CostFunction::radial(rng.random_range(0.1..5.0)),
        f2: CostFunction::radial(rng.random_range(0.1..5.0)),
        y0: vec![0.0; n],
        eps0: Regime::One,
        ..ProblemInstance::example()
    }
}

/// Moderate instances whose sub-solutions stay well inside the floating
/// point range, used where the full solver runs.
pub fn moderate_instance<R: Rng>(rng: &mut R) -> ProblemInstance {
    let regimes = RegimeParams {
        a1: log_uniform(rng, 0.2, 3.0),
        a2: log_uniform(rng, 0.2, 3.0),
        alpha1: log_uniform(rng, 0.01, 0.5),
        alpha2: log_uniform(rng, 0.01, 0.5),
        sigma1: log_uniform(rng, 0.3, 1.0),
        sigma2: log_uniform(rng, 0.3, 1.0),
    };
    ProblemInstance {
        regimes,
        f1: CostFunction::radial(rng.random_range(0.1..3.0)),
        f2: CostFunction::radial(rng.random_range(0.1..3.0)),
        ..ProblemInstance::example()
    }
}

/// Regime-symmetric instance.
pub fn symmetric_instance(a: f64, alpha: f64, sigma: f64, m: f64) -> ProblemInstance {
    ProblemInstance {
        regimes: RegimeParams {
            a1: a,
            a2: a,
            alpha1: alpha,
            alpha2: alpha,
            sigma1: sigma,
            sigma2: sigma,
        },
        f1: CostFunction::radial(m),
        f2: CostFunction::radial(m),
        ..ProblemInstance::example()
    }
}

/// Single-regime instance: switching switched off, no discounting.
pub fn single_regime(sigma: f64, m: f64) -> ProblemInstance {
    ProblemInstance {
        regimes: RegimeParams {
            a1: 1e-12,
            a2: 1e-12,
            alpha1: 0.0,
            alpha2: 0.0,
            sigma1: sigma,
            sigma2: sigma,
        },
        f1: CostFunction::radial(m),
        f2: CostFunction::radial(m),
        ..ProblemInstance::example()
    }
}
