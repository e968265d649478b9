//! Sub- and super-solutions of the transformed system and the shifts that
//! make the Picard iteration monotone.
//!
//! With `u_j = exp(-z_j / 2σ_j²)` the value system becomes
//!
//! ```text
//! Δu₁ = g₁(x, u₁, u₂),   g₁(x,t,s) = t [ f₁/σ₁⁴ + c₁₁ ln t − c₁₂ ln s ]
//! Δu₂ = g₂(x, u₁, u₂),   g₂(x,t,s) = s [ f₂/σ₂⁴ + c₂₂ ln s − c₂₁ ln t ]
//! ```
//!
//! with `c₁₁ = 2(a₁+α₁)/σ₁²`, `c₁₂ = 2a₁σ₂²/σ₁⁴` and symmetrically for
//! regime 2. The pair `(e^{K₁(R²−|x|²)}, e^{K₂(R²−|x|²)})` is a sub-solution
//! whenever the four scalar inequalities checked by [`ineq_lhs`] hold, and
//! `(1, 1)` is a super-solution.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{norm_sq, ModelError, ProblemInstance, Regime};

/// Maximum number of times `K₂` is doubled while searching for a certificate.
pub const MAX_DOUBLINGS: u32 = 60;

/// Factor applied to the derivative bounds when picking `Λ₁`, `Λ₂`.
pub const SHIFT_SAFETY: f64 = 1.1;

#[derive(Debug, Error)]
pub enum CertError {
    #[error("no certificate after {MAX_DOUBLINGS} doublings of K2: inequality {index} fails (lhs = {value:e})")]
    Uncertified { index: usize, value: f64 },
    #[error("K1 interval is empty after {MAX_DOUBLINGS} doublings of K2")]
    EmptyInterval,
}

/// Certified sub-solution exponents and iteration shifts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubSuperCertificate {
    pub k1: f64,
    pub k2: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    /// Left-hand sides of the four sufficient inequalities, all `>= 0`.
    pub ineq_margins: [f64; 4],
    /// Bounds on `|∂g₁/∂t|` and `|∂g₂/∂s|` over the order box.
    pub lipschitz_bounds: [f64; 2],
    /// How many times the initial `K₂` was doubled.
    pub doublings: u32,
}

impl SubSuperCertificate {
    pub fn k(&self, regime: Regime) -> f64 {
        match regime {
            Regime::One => self.k1,
            Regime::Two => self.k2,
        }
    }

    pub fn lambda(&self, regime: Regime) -> f64 {
        match regime {
            Regime::One => self.lambda1,
            Regime::Two => self.lambda2,
        }
    }

    /// Lower corner of the order box, `e^{K_j R²}` (the sub-solution at the
    /// centre of the ball).
    pub fn box_lo(&self, regime: Regime, radius: f64) -> f64 {
        (self.k(regime) * radius * radius).exp()
    }

    pub fn is_certified(&self) -> bool {
        self.k1 < 0.0
            && self.k2 < 0.0
            && self.lambda1 < 0.0
            && self.lambda2 < 0.0
            && self.ineq_margins.iter().all(|m| *m >= 0.0)
    }

    /// Sub-solution value `e^{K_j(R²−|x|²)}` without a domain check.
    pub fn subsolution(&self, regime: Regime, radius: f64, x: &[f64]) -> f64 {
        (self.k(regime) * (radius * radius - norm_sq(x))).exp()
    }
}

/// Coefficients of the transformed nonlinearity for one instance.
#[derive(Clone, Copy, Debug)]
pub struct Coupling {
    /// `1/σ_j⁴`
    pub cost_scale: [f64; 2],
    /// `2(a_j+α_j)/σ_j²`
    pub self_coef: [f64; 2],
    /// `2a_j σ_{other}²/σ_j⁴`
    pub cross_coef: [f64; 2],
}

impl Coupling {
    pub fn new(inst: &ProblemInstance) -> Self {
        let mut c = Coupling {
            cost_scale: [0.0; 2],
            self_coef: [0.0; 2],
            cross_coef: [0.0; 2],
        };
        for r in Regime::BOTH {
            let j = r.index();
            let s2 = inst.sigma(r).powi(2);
            let o2 = inst.sigma(r.other()).powi(2);
            let a = inst.leave_rate(r);
            c.cost_scale[j] = 1.0 / (s2 * s2);
            c.self_coef[j] = 2.0 * (a + inst.alpha(r)) / s2;
            c.cross_coef[j] = 2.0 * a * o2 / (s2 * s2);
        }
        c
    }

    /// `g_j(x, u_own, u_other)` given `f_j(x)`.
    #[inline]
    pub fn g(&self, regime: Regime, cost: f64, own: f64, other: f64) -> f64 {
        let j = regime.index();
        own * (self.cost_scale[j] * cost + self.self_coef[j] * own.ln() - self.cross_coef[j] * other.ln())
    }

    /// `∂g_j/∂(own)` at `(x, own, other)`.
    #[inline]
    pub fn d_own(&self, regime: Regime, cost: f64, own: f64, other: f64) -> f64 {
        let j = regime.index();
        self.cost_scale[j] * cost + self.self_coef[j] * (own.ln() + 1.0) - self.cross_coef[j] * other.ln()
    }
}

/// `(1/4σ²)(a+α+√((a+α)²+4M))`: the smallest `−K` for which
/// `4K² + 2(a+α)K/σ² − M/σ⁴ >= 0`.
pub fn quadratic_floor(inst: &ProblemInstance, regime: Regime) -> f64 {
    let s2 = inst.sigma(regime).powi(2);
    let b = inst.leave_rate(regime) + inst.alpha(regime);
    let m = inst.cost_bound(regime);
    (b + (b * b + 4.0 * m).sqrt()) / (4.0 * s2)
}

/// `2(a_j+α_j)R²/σ_j² + 2N`
fn diag_weight(inst: &ProblemInstance, regime: Regime) -> f64 {
    let s2 = inst.sigma(regime).powi(2);
    let r2 = inst.radius * inst.radius;
    2.0 * (inst.leave_rate(regime) + inst.alpha(regime)) * r2 / s2 + 2.0 * inst.n as f64
}

/// `2a_j σ_{other}² R²/σ_j⁴`
fn cross_weight(inst: &ProblemInstance, regime: Regime) -> f64 {
    let s2 = inst.sigma(regime).powi(2);
    let o2 = inst.sigma(regime.other()).powi(2);
    2.0 * inst.leave_rate(regime) * o2 * inst.radius * inst.radius / (s2 * s2)
}

/// The admissible range of `−K₁` for a given `K₂`: the lower end keeps the
/// regime-1 constant term nonnegative, the upper end the regime-2 one.
pub fn k1_interval(inst: &ProblemInstance, k2: f64) -> (f64, f64) {
    let lo = -cross_weight(inst, Regime::One) * k2 / diag_weight(inst, Regime::One);
    let hi = -diag_weight(inst, Regime::Two) * k2 / cross_weight(inst, Regime::Two);
    (lo, hi)
}

/// Both sides of the product inequality that guarantees a nonempty
/// [`k1_interval`]: `(lhs, rhs)` with `lhs >= rhs` for every valid instance.
pub fn interval_product(inst: &ProblemInstance) -> (f64, f64) {
    (
        diag_weight(inst, Regime::Two) * diag_weight(inst, Regime::One),
        cross_weight(inst, Regime::One) * cross_weight(inst, Regime::Two),
    )
}

/// Left-hand sides of the four sufficient inequalities for the
/// sub-solution exponents `(k1, k2)`: the two `|x|²` coefficients followed
/// by the two constant terms.
pub fn ineq_lhs(inst: &ProblemInstance, k1: f64, k2: f64) -> [f64; 4] {
    let s1 = inst.sigma(Regime::One).powi(2);
    let s2 = inst.sigma(Regime::Two).powi(2);
    let (a1, a2) = (inst.regimes.a1, inst.regimes.a2);
    let (al1, al2) = (inst.regimes.alpha1, inst.regimes.alpha2);
    let m1 = inst.cost_bound(Regime::One);
    let m2 = inst.cost_bound(Regime::Two);
    let r2 = inst.radius * inst.radius;
    let n = inst.n as f64;
    [
        4.0 * k1 * k1 + 2.0 * (a1 + al1) / s1 * k1 - m1 / (s1 * s1) - 2.0 * a1 * s2 / (s1 * s1) * k2,
        4.0 * k2 * k2 + 2.0 * (a2 + al2) / s2 * k2 - m2 / (s2 * s2) - 2.0 * a2 * s1 / (s2 * s2) * k1,
        -2.0 * (a1 + al1) * r2 / s1 * k1 - 2.0 * k1 * n + 2.0 * a1 * s2 * r2 / (s1 * s1) * k2,
        -2.0 * (a2 + al2) * r2 / s2 * k2 - 2.0 * n * k2 + 2.0 * a2 * s1 * r2 / (s2 * s2) * k1,
    ]
}

/// Picks `K₁, K₂ < 0` satisfying the four inequalities, then the shifts.
///
/// `K₂` starts at `−quadratic_floor(2)` and is doubled until a `K₁` in
/// [`k1_interval`] works; `−K₁` is the left end of the interval raised to
/// `quadratic_floor(1)` if needed.
pub fn choose_constants(inst: &ProblemInstance) -> Result<SubSuperCertificate, CertError> {
    let k2_start = -quadratic_floor(inst, Regime::Two);
    let floor1 = quadratic_floor(inst, Regime::One);
    let mut last_failure = None;

    for doublings in 0..=MAX_DOUBLINGS {
        let k2 = k2_start * 2f64.powi(doublings as i32);
        let (lo, hi) = k1_interval(inst, k2);
        let mut neg_k1 = lo.max(floor1);
        if neg_k1 > hi {
            last_failure = Some(CertError::EmptyInterval);
            continue;
        }
        let mut margins = ineq_lhs(inst, -neg_k1, k2);
        // the left end makes the third inequality an equality; step off it
        // if rounding lands on the wrong side
        let mut nudges = 0;
        while margins[2] < 0.0 && neg_k1 < hi && nudges < 64 {
            neg_k1 = neg_k1.next_up().max(neg_k1 * (1.0 + 4.0 * f64::EPSILON));
            margins = ineq_lhs(inst, -neg_k1, k2);
            nudges += 1;
        }
        if let Some(index) = margins.iter().position(|m| !(*m >= 0.0)) {
            last_failure = Some(CertError::Uncertified {
                index: index + 1,
                value: margins[index],
            });
            continue;
        }
        let k1 = -neg_k1;
        let shifts = choose_shifts(inst, k1, k2);
        return Ok(SubSuperCertificate {
            k1,
            k2,
            lambda1: shifts.lambda1,
            lambda2: shifts.lambda2,
            ineq_margins: margins,
            lipschitz_bounds: shifts.bounds,
            doublings,
        });
    }
    Err(last_failure.unwrap_or(CertError::EmptyInterval))
}

/// Shifts for the monotone iteration.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Shifts {
    pub lambda1: f64,
    pub lambda2: f64,
    /// `sup |∂g₁/∂t|`, `sup |∂g₂/∂s|` over the order box and the ball.
    pub bounds: [f64; 2],
}

/// Chooses `Λ₁, Λ₂ < 0` with `−Λ_j` at least [`SHIFT_SAFETY`] times the
/// largest magnitude of `∂g_j/∂u_j` over `B̄_R × [e^{K₁R²},1] × [e^{K₂R²},1]`.
///
/// `∂g₁/∂t = f₁/σ₁⁴ + c₁₁(ln t + 1) − c₁₂ ln s` is increasing in `f₁` and
/// `t` and decreasing in `s`, so its extremes sit at the box corners.
pub fn choose_shifts(inst: &ProblemInstance, k1: f64, k2: f64) -> Shifts {
    let c = Coupling::new(inst);
    let r2 = inst.radius * inst.radius;
    let ln_lo = [k1 * r2, k2 * r2];
    let mut bounds = [0.0; 2];
    for r in Regime::BOTH {
        let j = r.index();
        let o = r.other().index();
        let fmax = inst.cost(r).max_on_ball(inst.radius);
        let sup = c.cost_scale[j] * fmax + c.self_coef[j] - c.cross_coef[j] * ln_lo[o];
        let inf = c.self_coef[j] * (ln_lo[j] + 1.0);
        bounds[j] = sup.abs().max(inf.abs()).max(f64::MIN_POSITIVE);
    }
    Shifts {
        lambda1: -SHIFT_SAFETY * bounds[0],
        lambda2: -SHIFT_SAFETY * bounds[1],
        bounds,
    }
}

/// `e^{K_j(R²−|x|²)}` for `|x| <= R`.
pub fn eval_subsolution(
    cert: &SubSuperCertificate,
    inst: &ProblemInstance,
    regime: Regime,
    x: &[f64],
) -> Result<f64, ModelError> {
    if !inst.contains(x) {
        return Err(ModelError::OutsideDomain {
            point: x.to_vec(),
            radius: inst.radius,
        });
    }
    // snap the sphere itself to exactly one
    let d = inst.radius * inst.radius - norm_sq(x);
    Ok((cert.k(regime) * d.max(0.0)).exp())
}

/// The super-solution is the constant one.
pub fn eval_supersolution(_regime: Regime, _x: &[f64]) -> f64 {
    1.0
}
