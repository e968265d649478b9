//! Monte Carlo evaluation of production policies.
//!
//! Inventory follows `dy = p(y, ε) dt + σ_ε dW` with `ε(t)` a two-state
//! Markov chain. A path accrues `e^{−D(t)} (|p|² + f_ε(y)) dt` with the
//! accumulated discount `D(t) = ∫₀ᵗ α_{ε(s)} ds` until `|y| ≥ R`.
//!
//! Euler–Maruyama steps of length `dt` are split at regime jump times, so the
//! coefficients are constant within each step. Every path draws from two
//! private ChaCha streams derived from the master seed (one for the regime
//! chain, one for the Brownian increments), which makes the estimates
//! independent of thread scheduling and gives common random numbers across
//! policies.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp1, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hjb::{PolicyField, ValueFields};
use crate::model::{norm_sq, CostFunction, ProblemInstance, Regime, MAX_DIM};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid simulation config: {0}")]
    Config(String),
    #[error("non-finite state on path {path} at step {step}")]
    NonFinite { path: usize, step: usize },
    #[error("policy dimension {policy} does not match instance dimension {instance}")]
    Dimension { policy: usize, instance: usize },
    #[error("starting point {y0:?} is not inside the ball of radius {radius}")]
    Start { y0: Vec<f64>, radius: f64 },
    #[error("at least one challenger policy is required")]
    NoChallengers,
}

/// Realization of the regime chain on `[0, horizon)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegimePath {
    /// Strictly increasing jump times below the horizon.
    pub jump_times: Vec<f64>,
    /// `regimes[k]` holds on `[jump_times[k−1], jump_times[k])`; one longer
    /// than `jump_times`.
    pub regimes: Vec<Regime>,
    pub horizon: f64,
}

impl RegimePath {
    /// Regime in force at time `t` (right-continuous).
    pub fn regime_at(&self, t: f64) -> Regime {
        let k = self.jump_times.partition_point(|&s| s <= t);
        self.regimes[k]
    }

    /// Completed holding times (the last, censored one excluded).
    pub fn holding_times(&self) -> Vec<f64> {
        let mut prev = 0.0;
        self.jump_times
            .iter()
            .map(|&s| {
                let h = s - prev;
                prev = s;
                h
            })
            .collect()
    }

    /// Time spent in `regime` on `[0, horizon)`.
    pub fn occupation(&self, regime: Regime) -> f64 {
        let mut edges = vec![0.0];
        edges.extend_from_slice(&self.jump_times);
        edges.push(self.horizon);
        edges
            .windows(2)
            .zip(&self.regimes)
            .filter(|(_, &r)| r == regime)
            .map(|(w, _)| w[1] - w[0])
            .sum()
    }
}

/// Lazily sampled regime chain.
struct RegimeClock<R> {
    rng: R,
    rates: [f64; 2],
    regime: Regime,
    next_jump: f64,
}

impl<R: Rng> RegimeClock<R> {
    fn new(rates: [f64; 2], eps0: Regime, mut rng: R) -> Self {
        let next_jump = holding(&mut rng, rates[eps0.index()]);
        RegimeClock {
            rng,
            rates,
            regime: eps0,
            next_jump,
        }
    }

    fn advance(&mut self) {
        self.regime = self.regime.other();
        self.next_jump += holding(&mut self.rng, self.rates[self.regime.index()]);
    }
}

fn holding<R: Rng>(rng: &mut R, rate: f64) -> f64 {
    let e: f64 = rng.sample(Exp1);
    (e / rate).max(f64::MIN_POSITIVE)
}

/// Samples the chain with leave rates `rates = [a₁, a₂]` up to `horizon`.
pub fn sample_regime_path<R: Rng>(rates: [f64; 2], eps0: Regime, horizon: f64, rng: &mut R) -> RegimePath {
    let mut clock = RegimeClock::new(rates, eps0, rng);
    let mut path = RegimePath {
        jump_times: Vec::new(),
        regimes: vec![eps0],
        horizon,
    };
    while clock.next_jump < horizon {
        path.jump_times.push(clock.next_jump);
        clock.advance();
        path.regimes.push(clock.regime);
    }
    path
}

/// How running costs are discounted. Only the accumulated discount
/// `e^{−∫α_{ε(s)}ds}` is supported.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiscountMode {
    #[default]
    Accumulated,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub dt: f64,
    pub n_paths: usize,
    pub horizon_cap: f64,
    pub seed: u64,
    #[serde(default)]
    pub discount_mode: DiscountMode,
}

impl SimConfig {
    pub const DEFAULT_PATHS: usize = 200_000;
    pub const DEFAULT_SEED: u64 = 42;

    /// `dt = 10⁻³ R²/σ_max²` and `horizon_cap = 50 / min(α₁, α₂, 0.01)`.
    /// Without discounting the cap falls back to 5000.
    pub fn for_instance(inst: &ProblemInstance) -> Self {
        SimConfig {
            dt: default_dt(inst),
            n_paths: Self::DEFAULT_PATHS,
            horizon_cap: default_horizon_cap(inst),
            seed: Self::DEFAULT_SEED,
            discount_mode: DiscountMode::Accumulated,
        }
    }

    pub fn with_paths(mut self, n_paths: usize) -> Self {
        self.n_paths = n_paths;
        self
    }

    pub fn with_dt(mut self, dt: f64) -> Self {
        self.dt = dt;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn check(&self) -> Result<(), SimError> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(SimError::Config(format!("dt must be positive, got {}", self.dt)));
        }
        if self.n_paths == 0 {
            return Err(SimError::Config("n_paths must be at least 1".into()));
        }
        if !(self.horizon_cap > 0.0) {
            return Err(SimError::Config(format!(
                "horizon_cap must be positive, got {}",
                self.horizon_cap
            )));
        }
        Ok(())
    }
}

pub fn default_dt(inst: &ProblemInstance) -> f64 {
    let smax = inst.sigma(Regime::One).max(inst.sigma(Regime::Two));
    1e-3 * inst.radius * inst.radius / (smax * smax)
}

pub fn default_horizon_cap(inst: &ProblemInstance) -> f64 {
    let floor = inst.alpha(Regime::One).min(inst.alpha(Regime::Two)).min(0.01);
    if floor > 0.0 {
        50.0 / floor
    } else {
        5000.0
    }
}

/// A Markov feedback control `p(x, j)`.
pub trait FeedbackPolicy: Sync {
    /// Writes the control at `x` in `regime` into `out` (`dim` entries).
    fn control_into(&self, x: &[f64], regime: Regime, out: &mut [f64]);
}

impl FeedbackPolicy for PolicyField {
    fn control_into(&self, x: &[f64], regime: Regime, out: &mut [f64]) {
        PolicyField::control_into(self, x, regime, out)
    }
}

impl<P: FeedbackPolicy + ?Sized> FeedbackPolicy for &P {
    fn control_into(&self, x: &[f64], regime: Regime, out: &mut [f64]) {
        (**self).control_into(x, regime, out)
    }
}

/// `p ≡ 0`.
#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroPolicy;

impl FeedbackPolicy for ZeroPolicy {
    fn control_into(&self, _: &[f64], _: Regime, out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
    }
}

/// `factor · base`.
#[derive(Debug, Clone, Copy)]
pub struct ScaledPolicy<P> {
    pub base: P,
    pub factor: f64,
}

impl<P: FeedbackPolicy> FeedbackPolicy for ScaledPolicy<P> {
    fn control_into(&self, x: &[f64], regime: Regime, out: &mut [f64]) {
        self.base.control_into(x, regime, out);
        out.iter_mut().for_each(|v| *v *= self.factor);
    }
}

/// `base` applied with the regime labels exchanged.
#[derive(Debug, Clone, Copy)]
pub struct SwappedPolicy<P>(pub P);

impl<P: FeedbackPolicy> FeedbackPolicy for SwappedPolicy<P> {
    fn control_into(&self, x: &[f64], regime: Regime, out: &mut [f64]) {
        self.0.control_into(x, regime.other(), out)
    }
}

/// Closed-form policy given by a function.
pub struct FnPolicy<F>(pub F);

impl<F: Fn(&[f64], Regime, &mut [f64]) + Sync> FeedbackPolicy for FnPolicy<F> {
    fn control_into(&self, x: &[f64], regime: Regime, out: &mut [f64]) {
        (self.0)(x, regime, out)
    }
}

/// Policies compared against `p*` in the verification experiment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Challenger {
    Optimal,
    Zero,
    Scaled { factor: f64 },
    SwappedRegimes,
}

impl Challenger {
    pub fn defaults() -> Vec<Challenger> {
        vec![
            Challenger::Zero,
            Challenger::Scaled { factor: 0.5 },
            Challenger::Scaled { factor: 1.5 },
            Challenger::SwappedRegimes,
        ]
    }

    pub fn label(&self) -> String {
        match self {
            Challenger::Optimal => "optimal".into(),
            Challenger::Zero => "zero".into(),
            Challenger::Scaled { factor } => format!("scaled_{factor}"),
            Challenger::SwappedRegimes => "swapped_regimes".into(),
        }
    }

    /// The challenger built from the optimal policy.
    pub fn policy<'a>(&self, optimal: &'a PolicyField) -> Box<dyn FeedbackPolicy + 'a> {
        match *self {
            Challenger::Optimal => Box::new(optimal),
            Challenger::Zero => Box::new(ZeroPolicy),
            Challenger::Scaled { factor } => Box::new(ScaledPolicy { base: optimal, factor }),
            Challenger::SwappedRegimes => Box::new(SwappedPolicy(optimal)),
        }
    }
}

/// One Euler step as seen by an observer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub t_start: f64,
    pub t_end: f64,
    pub regime: Regime,
    /// Coefficients actually used for the step.
    pub sigma: f64,
    pub alpha: f64,
    /// State at `t_end`.
    pub y: [f64; MAX_DIM],
    /// `D(t_end)`.
    pub discount_exponent: f64,
    /// Discounted cost accrued on `[0, t_end]`.
    pub running_cost: f64,
}

/// Result of a single path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathOutcome {
    pub cost: f64,
    /// Exit time, or the cap when truncated.
    pub time: f64,
    /// `|y|` at the stopping time.
    pub final_norm: f64,
    pub truncated: bool,
    pub steps: usize,
}

/// Full record of one path.
#[derive(Debug, Clone)]
pub struct PathTrace {
    pub index: usize,
    pub steps: Vec<StepRecord>,
    /// Jump times the path went through, with the regimes they led to.
    pub regimes: RegimePath,
    pub outcome: PathOutcome,
}

/// Monte Carlo estimate of `J(p)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CostEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub n_paths: usize,
    /// Fraction of paths stopped by the horizon cap.
    pub truncation_fraction: f64,
    pub mean_exit_time: f64,
    /// Largest `|y(τ)| − R` over exited paths.
    pub max_overshoot: f64,
    /// Fraction of exited paths with `|y(τ)| − R ≤ 6 σ_max √dt`.
    pub overshoot_within_bound: f64,
}

/// Coarse (`dt`) and fine (`dt/2`) estimates driven by the same Brownian
/// paths and regime chains.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PairedEstimate {
    pub coarse: CostEstimate,
    pub fine: CostEstimate,
    /// Mean of the per-path differences `coarse − fine`.
    pub diff_mean: f64,
    pub diff_stderr: f64,
}

struct Ctx<'a> {
    dim: usize,
    r2: f64,
    radius: f64,
    sigma: [f64; 2],
    alpha: [f64; 2],
    /// `e^{−α_j dt}` and `e^{−α_j dt/2}`
    step_decay: [[f64; 2]; 2],
    rates: [f64; 2],
    cost: [&'a CostFunction; 2],
    y0: [f64; MAX_DIM],
    eps0: Regime,
    cfg: SimConfig,
}

impl<'a> Ctx<'a> {
    fn new(inst: &'a ProblemInstance, policy_dim: Option<usize>, cfg: &SimConfig) -> Result<Self, SimError> {
        cfg.check()?;
        if let Some(d) = policy_dim {
            if d != inst.n {
                return Err(SimError::Dimension {
                    policy: d,
                    instance: inst.n,
                });
            }
        }
        if inst.y0.len() != inst.n || norm_sq(&inst.y0) >= inst.radius * inst.radius {
            return Err(SimError::Start {
                y0: inst.y0.clone(),
                radius: inst.radius,
            });
        }
        let mut y0 = [0.0; MAX_DIM];
        y0[..inst.n].copy_from_slice(&inst.y0);
        Ok(Ctx {
            dim: inst.n,
            r2: inst.radius * inst.radius,
            radius: inst.radius,
            sigma: Regime::BOTH.map(|r| inst.sigma(r)),
            alpha: Regime::BOTH.map(|r| inst.alpha(r)),
            step_decay: Regime::BOTH.map(|r| [1.0, 0.5].map(|c| (-inst.alpha(r) * c * cfg.dt).exp())),
            rates: Regime::BOTH.map(|r| inst.leave_rate(r)),
            cost: Regime::BOTH.map(|r| inst.cost(r)),
            y0,
            eps0: inst.eps0,
            cfg: *cfg,
        })
    }

    fn streams(&self, index: usize) -> (ChaCha8Rng, ChaCha8Rng) {
        let mut chain = ChaCha8Rng::seed_from_u64(self.cfg.seed);
        chain.set_stream(2 * index as u64);
        let mut noise = ChaCha8Rng::seed_from_u64(self.cfg.seed);
        noise.set_stream(2 * index as u64 + 1);
        (chain, noise)
    }

    /// `e^{−α_j h}`, tabulated for the two regular step lengths.
    fn decay(&self, j: usize, h: f64) -> f64 {
        let dt = self.cfg.dt;
        if (h - dt).abs() <= 1e-9 * dt {
            self.step_decay[j][0]
        } else if (h - 0.5 * dt).abs() <= 1e-9 * dt {
            self.step_decay[j][1]
        } else {
            (-self.alpha[j] * h).exp()
        }
    }

    fn overshoot_bound(&self, dt: f64) -> f64 {
        6.0 * self.sigma[0].max(self.sigma[1]) * dt.sqrt()
    }
}

/// Running state of one discretized path.
#[derive(Clone, Copy)]
struct State {
    y: [f64; MAX_DIM],
    exponent: f64,
    /// `e^{−exponent}`, updated multiplicatively.
    weight: f64,
    cost: f64,
    steps: usize,
    done: bool,
    outcome: Option<PathOutcome>,
}

impl State {
    fn new(y0: [f64; MAX_DIM]) -> Self {
        State {
            y: y0,
            exponent: 0.0,
            weight: 1.0,
            cost: 0.0,
            steps: 0,
            done: false,
            outcome: None,
        }
    }

    /// Advances by `h` with Brownian increment `dw`; returns `false` on a
    /// non-finite state.
    fn step<P: FeedbackPolicy + ?Sized>(&mut self, ctx: &Ctx, policy: &P, regime: Regime, h: f64, dw: &[f64]) -> bool {
        let d = ctx.dim;
        let j = regime.index();
        let mut p = [0.0; MAX_DIM];
        policy.control_into(&self.y[..d], regime, &mut p[..d]);
        let p2: f64 = p[..d].iter().map(|v| v * v).sum();
        let running = p2 + ctx.cost[j].value(&self.y[..d]);
        self.cost += self.weight * running * h;
        let s = ctx.sigma[j];
        for a in 0..d {
            self.y[a] += p[a] * h + s * dw[a];
        }
        self.exponent += ctx.alpha[j] * h;
        self.weight *= ctx.decay(j, h);
        self.steps += 1;
        self.y[..d].iter().all(|v| v.is_finite()) && self.cost.is_finite()
    }

    /// Marks the path as stopped if it left the ball or reached the cap.
    fn check_stop(&mut self, ctx: &Ctx, t: f64) {
        let n2 = norm_sq(&self.y[..ctx.dim]);
        let exited = n2 >= ctx.r2;
        if exited || t >= ctx.cfg.horizon_cap {
            self.done = true;
            self.outcome = Some(PathOutcome {
                cost: self.cost,
                time: t,
                final_norm: n2.sqrt(),
                truncated: !exited,
                steps: self.steps,
            });
        }
    }
}

fn run_path<P, O>(ctx: &Ctx, policy: &P, index: usize, mut observe: O) -> Result<PathOutcome, SimError>
where
    P: FeedbackPolicy + ?Sized,
    O: FnMut(&StepRecord, bool),
{
    let d = ctx.dim;
    let dt = ctx.cfg.dt;
    let cap = ctx.cfg.horizon_cap;
    let (chain, mut noise) = ctx.streams(index);
    let mut clock = RegimeClock::new(ctx.rates, ctx.eps0, chain);
    let mut state = State::new(ctx.y0);
    let mut t = 0.0;
    let mut k: u64 = 0;
    let mut dw = [0.0; MAX_DIM];
    loop {
        let grid_next = (k + 1) as f64 * dt;
        let t_end = grid_next.min(clock.next_jump).min(cap);
        let h = t_end - t;
        let regime = clock.regime;
        let sq = h.sqrt();
        for w in dw[..d].iter_mut() {
            let z: f64 = noise.sample(StandardNormal);
            *w = sq * z;
        }
        if !state.step(ctx, policy, regime, h, &dw[..d]) {
            return Err(SimError::NonFinite {
                path: index,
                step: state.steps,
            });
        }
        let jumped = t_end == clock.next_jump;
        observe(
            &StepRecord {
                t_start: t,
                t_end,
                regime,
                sigma: ctx.sigma[regime.index()],
                alpha: ctx.alpha[regime.index()],
                y: state.y,
                discount_exponent: state.exponent,
                running_cost: state.cost,
            },
            jumped,
        );
        t = t_end;
        if t_end == grid_next {
            k += 1;
        }
        if jumped {
            clock.advance();
        }
        state.check_stop(ctx, t);
        if let Some(out) = state.outcome {
            return Ok(out);
        }
    }
}

/// Coarse and fine Euler schemes on one path. Fine steps have length
/// `dt/2` (split at jumps); each coarse step uses the sum of the fine
/// Brownian increments it spans.
fn run_pair<P: FeedbackPolicy + ?Sized>(
    ctx: &Ctx,
    policy: &P,
    index: usize,
) -> Result<(PathOutcome, PathOutcome), SimError> {
    let d = ctx.dim;
    let dt_f = 0.5 * ctx.cfg.dt;
    let cap = ctx.cfg.horizon_cap;
    let (chain, mut noise) = ctx.streams(index);
    let mut clock = RegimeClock::new(ctx.rates, ctx.eps0, chain);
    let mut fine = State::new(ctx.y0);
    let mut coarse = State::new(ctx.y0);
    let mut t = 0.0;
    let mut kf: u64 = 0;
    let mut dw = [0.0; MAX_DIM];
    let mut acc_w = [0.0; MAX_DIM];
    let mut acc_h = 0.0;
    let bad = |s: &State| SimError::NonFinite {
        path: index,
        step: s.steps,
    };
    loop {
        let grid_next = (kf + 1) as f64 * dt_f;
        let t_end = grid_next.min(clock.next_jump).min(cap);
        let h = t_end - t;
        let regime = clock.regime;
        let sq = h.sqrt();
        for a in 0..d {
            let z: f64 = noise.sample(StandardNormal);
            dw[a] = sq * z;
            acc_w[a] += dw[a];
        }
        acc_h += h;
        if !fine.done && !fine.step(ctx, policy, regime, h, &dw[..d]) {
            return Err(bad(&fine));
        }
        let on_grid = t_end == grid_next;
        let jumped = t_end == clock.next_jump;
        let coarse_end = (on_grid && kf % 2 == 1) || jumped || t_end >= cap;
        t = t_end;
        if on_grid {
            kf += 1;
        }
        if !fine.done {
            fine.check_stop(ctx, t);
        }
        if coarse_end {
            if !coarse.done {
                if !coarse.step(ctx, policy, regime, acc_h, &acc_w[..d]) {
                    return Err(bad(&coarse));
                }
                coarse.check_stop(ctx, t);
            }
            acc_w = [0.0; MAX_DIM];
            acc_h = 0.0;
        }
        if jumped {
            clock.advance();
        }
        if let (Some(c), Some(f)) = (coarse.outcome, fine.outcome) {
            return Ok((c, f));
        }
    }
}

fn first_error<T: Send>(results: Vec<Result<T, SimError>>) -> Result<Vec<T>, SimError> {
    results.into_iter().collect()
}

fn mean_stderr(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / n;
    if n < 2.0 {
        return (mean, 0.0);
    }
    let ss: f64 = values.map(|v| (v - mean) * (v - mean)).sum();
    (mean, (ss / (n - 1.0) / n).sqrt())
}

fn summarize(ctx: &Ctx, outcomes: &[PathOutcome], dt: f64) -> CostEstimate {
    let n = outcomes.len();
    let (mean, stderr) = mean_stderr(outcomes.iter().map(|o| o.cost));
    let truncated = outcomes.iter().filter(|o| o.truncated).count();
    let bound = ctx.overshoot_bound(dt);
    let mut max_overshoot: f64 = 0.0;
    let mut within = 0usize;
    let mut exited = 0usize;
    for o in outcomes.iter().filter(|o| !o.truncated) {
        let over = o.final_norm - ctx.radius;
        max_overshoot = max_overshoot.max(over);
        exited += 1;
        if over <= bound {
            within += 1;
        }
    }
    CostEstimate {
        mean,
        stderr,
        n_paths: n,
        truncation_fraction: truncated as f64 / n as f64,
        mean_exit_time: outcomes.iter().map(|o| o.time).sum::<f64>() / n as f64,
        max_overshoot,
        overshoot_within_bound: if exited == 0 { 1.0 } else { within as f64 / exited as f64 },
    }
}

/// Per-path outcomes under `policy`, in path order.
pub fn simulate_paths<P: FeedbackPolicy + ?Sized>(
    inst: &ProblemInstance,
    policy: &P,
    cfg: &SimConfig,
) -> Result<Vec<PathOutcome>, SimError> {
    let ctx = Ctx::new(inst, None, cfg)?;
    let results: Vec<_> = (0..cfg.n_paths)
        .into_par_iter()
        .map(|i| run_path(&ctx, policy, i, |_, _| {}))
        .collect();
    first_error(results)
}

/// Estimates `J(p)` from `y0` in regime `eps0` of the instance.
pub fn simulate_cost<P: FeedbackPolicy + ?Sized>(
    inst: &ProblemInstance,
    policy: &P,
    cfg: &SimConfig,
) -> Result<CostEstimate, SimError> {
    let outcomes = simulate_paths(inst, policy, cfg)?;
    let ctx = Ctx::new(inst, None, cfg)?;
    Ok(summarize(&ctx, &outcomes, cfg.dt))
}

/// Runs the `dt` and `dt/2` schemes on shared randomness.
pub fn simulate_cost_paired<P: FeedbackPolicy + ?Sized>(
    inst: &ProblemInstance,
    policy: &P,
    cfg: &SimConfig,
) -> Result<PairedEstimate, SimError> {
    let ctx = Ctx::new(inst, None, cfg)?;
    let results: Vec<_> = (0..cfg.n_paths)
        .into_par_iter()
        .map(|i| run_pair(&ctx, policy, i))
        .collect();
    let pairs = first_error(results)?;
    let coarse: Vec<_> = pairs.iter().map(|p| p.0).collect();
    let fine: Vec<_> = pairs.iter().map(|p| p.1).collect();
    let (diff_mean, diff_stderr) = mean_stderr(pairs.iter().map(|(c, f)| c.cost - f.cost));
    Ok(PairedEstimate {
        coarse: summarize(&ctx, &coarse, cfg.dt),
        fine: summarize(&ctx, &fine, 0.5 * cfg.dt),
        diff_mean,
        diff_stderr,
    })
}

/// Replays path `index` of `simulate_cost` and records every step.
pub fn trace_path<P: FeedbackPolicy + ?Sized>(
    inst: &ProblemInstance,
    policy: &P,
    cfg: &SimConfig,
    index: usize,
) -> Result<PathTrace, SimError> {
    let ctx = Ctx::new(inst, None, cfg)?;
    let mut steps = Vec::new();
    let mut regimes = RegimePath {
        jump_times: Vec::new(),
        regimes: vec![inst.eps0],
        horizon: 0.0,
    };
    let outcome = run_path(&ctx, policy, index, |s, jumped| {
        steps.push(*s);
        if jumped {
            regimes.jump_times.push(s.t_end);
            regimes.regimes.push(s.regime.other());
        }
    })?;
    regimes.horizon = outcome.time;
    Ok(PathTrace {
        index,
        steps,
        regimes,
        outcome,
    })
}

/// CSV of the first `count` paths: `path, t, regime, y1..yN, discount,
/// running_cost`, where `discount = e^{−D(t)}`.
pub fn write_paths_csv<P: FeedbackPolicy + ?Sized, W: Write>(
    inst: &ProblemInstance,
    policy: &P,
    cfg: &SimConfig,
    count: usize,
    mut w: W,
) -> Result<(), PathExportError> {
    let d = inst.n;
    let ys: Vec<String> = (1..=d).map(|i| format!("y{i}")).collect();
    writeln!(w, "path,t,regime,{},discount,running_cost", ys.join(","))?;
    for index in 0..count.min(cfg.n_paths) {
        let trace = trace_path(inst, policy, cfg, index)?;
        let y0: Vec<String> = inst.y0.iter().map(|v| format!("{v:e}")).collect();
        writeln!(w, "{index},0,{},{},1,0", inst.eps0, y0.join(","))?;
        for s in &trace.steps {
            let y: Vec<String> = s.y[..d].iter().map(|v| format!("{v:e}")).collect();
            writeln!(
                w,
                "{index},{:e},{},{},{:e},{:e}",
                s.t_end,
                s.regime,
                y.join(","),
                (-s.discount_exponent).exp(),
                s.running_cost
            )?;
        }
    }
    Ok(())
}

#[derive(Debug, Error)]
pub enum PathExportError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Allowance for the discretization bias of `Ĵ(p*)` against the grid value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DiscretizationMargin {
    /// Estimated grid error of `z_{ε₀}(y₀)`, supplied by the caller.
    pub grid_term: f64,
    /// Upper estimate of the `O(√dt)` exit-monitoring bias at `dt`:
    /// `(|Ĵ(dt) − Ĵ(dt/2)| + 2·se) / (1 − 2^{−1/2})`.
    pub time_term: f64,
    pub total: f64,
}

impl DiscretizationMargin {
    /// The time part extrapolates the upper end `|diff| + 2 se` of the
    /// `dt`/`dt/2` gap to `dt → 0`, assuming the bias scales like `√dt`.
    pub fn new(paired: &PairedEstimate, grid_error: f64) -> Self {
        let time_term = (paired.diff_mean.abs() + 2.0 * paired.diff_stderr) / (1.0 - 0.5f64.sqrt());
        DiscretizationMargin {
            grid_term: grid_error.abs(),
            time_term,
            total: grid_error.abs() + time_term,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct PolicyReport {
    pub policy: String,
    pub mean: f64,
    pub stderr: f64,
    pub n_paths: usize,
    pub truncation_fraction: f64,
    pub mean_exit_time: f64,
}

impl PolicyReport {
    fn new(policy: String, est: &CostEstimate) -> Self {
        PolicyReport {
            policy,
            mean: est.mean,
            stderr: est.stderr,
            n_paths: est.n_paths,
            truncation_fraction: est.truncation_fraction,
            mean_exit_time: est.mean_exit_time,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ChallengerReport {
    #[serde(flatten)]
    pub estimate: PolicyReport,
    /// `Ĵ(q) + 3 se(q) ≥ Ĵ(p*) − 3 se(p*)`
    pub not_better: bool,
    /// `(Ĵ(q) − Ĵ(p*)) / √(se(q)² + se(p*)²)`
    pub excess_in_stderr: f64,
}

/// The `dt`-halving experiment on `p*`.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct HalvingReport {
    pub dt: f64,
    pub mean_dt: f64,
    pub mean_half_dt: f64,
    pub diff: f64,
    pub diff_stderr: f64,
    pub error_dt: f64,
    pub error_half_dt: f64,
    /// `|Ĵ(dt/2) − z| ≤ 3 se + grid_term + time_term/√2`
    pub consistent: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct VerificationReport {
    pub y0: Vec<f64>,
    pub eps0: Regime,
    /// `z_{ε₀}(y₀)` from the value fields.
    pub reference_value: f64,
    pub config: SimConfig,
    pub optimal: PolicyReport,
    pub disc_margin: DiscretizationMargin,
    /// `|Ĵ(p*) − z_{ε₀}(y₀)| ≤ 3 se + disc_margin`
    pub optimal_matches_value: bool,
    pub halving: HalvingReport,
    pub challengers: Vec<ChallengerReport>,
    /// Challengers with `excess_in_stderr > 5`.
    pub clearly_worse: usize,
    pub all_checks_pass: bool,
}

/// Compares `Ĵ(p*)` against `z_{ε₀}(y₀)` and against every challenger.
///
/// `Ĵ(p*)` is the coarse half of a paired `dt`/`dt/2` run, which also yields
/// the time part of the discretization margin. `grid_error` is the estimated
/// error of the interpolated value at `y₀`.
pub fn verify_optimality(
    inst: &ProblemInstance,
    values: &ValueFields,
    policy: &PolicyField,
    challengers: &[Challenger],
    cfg: &SimConfig,
    grid_error: f64,
) -> Result<VerificationReport, SimError> {
    if challengers.is_empty() {
        return Err(SimError::NoChallengers);
    }
    Ctx::new(inst, Some(policy.grid().dim()), cfg)?;
    let reference = values.value_at(inst.eps0, &inst.y0);

    let paired = simulate_cost_paired(inst, policy, cfg)?;
    let opt = paired.coarse;
    let margin = DiscretizationMargin::new(&paired, grid_error);
    let matches = (opt.mean - reference).abs() <= 3.0 * opt.stderr + margin.total;

    let err_fine = (paired.fine.mean - reference).abs();
    let halving = HalvingReport {
        dt: cfg.dt,
        mean_dt: opt.mean,
        mean_half_dt: paired.fine.mean,
        diff: paired.diff_mean,
        diff_stderr: paired.diff_stderr,
        error_dt: (opt.mean - reference).abs(),
        error_half_dt: err_fine,
        consistent: err_fine
            <= 3.0 * paired.fine.stderr + margin.grid_term + margin.time_term * 0.5f64.sqrt(),
    };

    let mut reports = Vec::with_capacity(challengers.len());
    for c in challengers {
        let est = simulate_cost(inst, &*c.policy(policy), cfg)?;
        let combined = (est.stderr.powi(2) + opt.stderr.powi(2)).sqrt();
        let excess = if combined > 0.0 {
            (est.mean - opt.mean) / combined
        } else {
            0.0
        };
        reports.push(ChallengerReport {
            estimate: PolicyReport::new(c.label(), &est),
            not_better: est.mean + 3.0 * est.stderr >= opt.mean - 3.0 * opt.stderr,
            excess_in_stderr: excess,
        });
    }
    let clearly_worse = reports.iter().filter(|r| r.excess_in_stderr > 5.0).count();
    let all = matches && halving.consistent && reports.iter().all(|r| r.not_better);
    Ok(VerificationReport {
        y0: inst.y0.clone(),
        eps0: inst.eps0,
        reference_value: reference,
        config: *cfg,
        optimal: PolicyReport::new(Challenger::Optimal.label(), &opt),
        disc_margin: margin,
        optimal_matches_value: matches,
        halving,
        challengers: reports,
        clearly_worse,
        all_checks_pass: all,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn regime_path_alternates_with_positive_holding() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let path = sample_regime_path([1.0, 2.0], Regime::One, 50.0, &mut rng);
        assert!(path.holding_times().iter().all(|&h| h > 0.0));
        assert!(path.regimes.windows(2).all(|w| w[0] != w[1]));
        assert_eq!(path.regimes.len(), path.jump_times.len() + 1);
        assert_eq!(path.regime_at(0.0), Regime::One);
        if let Some(&s) = path.jump_times.first() {
            assert_eq!(path.regime_at(s), Regime::Two);
        }
        let total = path.occupation(Regime::One) + path.occupation(Regime::Two);
        assert!((total - 50.0).abs() < 1e-9);
    }

    #[test]
    fn config_is_checked() {
        let inst = ProblemInstance::example();
        let cfg = SimConfig::for_instance(&inst);
        assert!(cfg.check().is_ok());
        assert!((cfg.dt - 1e-3 / 0.36).abs() < 1e-15);
        assert_eq!(cfg.horizon_cap, 5000.0);
        assert!(cfg.with_dt(0.0).check().is_err());
        assert!(cfg.with_paths(0).check().is_err());
    }

    #[test]
    fn zero_cost_zero_policy_is_exactly_zero() {
        let mut inst = ProblemInstance::example();
        inst.f1 = CostFunction::zero();
        inst.f2 = CostFunction::zero();
        let cfg = SimConfig::for_instance(&inst).with_paths(200);
        let est = simulate_cost(&inst, &ZeroPolicy, &cfg).unwrap();
        assert_eq!(est.mean, 0.0);
        assert_eq!(est.stderr, 0.0);
    }

    #[test]
    fn trace_replays_the_estimator_path() {
        let inst = ProblemInstance::example();
        let cfg = SimConfig::for_instance(&inst).with_paths(5);
        let outcomes = simulate_paths(&inst, &ZeroPolicy, &cfg).unwrap();
        for (i, o) in outcomes.iter().enumerate() {
            let trace = trace_path(&inst, &ZeroPolicy, &cfg, i).unwrap();
            assert_eq!(trace.outcome, *o);
            assert_eq!(trace.steps.len(), o.steps);
        }
    }

    #[test]
    fn nonfinite_state_names_the_path() {
        let inst = ProblemInstance::example();
        let cfg = SimConfig::for_instance(&inst).with_paths(3);
        let nan = FnPolicy(|_: &[f64], _: Regime, out: &mut [f64]| out[0] = f64::NAN);
        match simulate_cost(&inst, &nan, &cfg) {
            Err(SimError::NonFinite { path: 0, step: 1 }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn csv_export_has_header_and_rows() {
        let inst = ProblemInstance::example();
        let cfg = SimConfig::for_instance(&inst).with_paths(2);
        let mut buf = Vec::new();
        write_paths_csv(&inst, &ZeroPolicy, &cfg, 2, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("path,t,regime,y1,discount,running_cost"));
        assert_eq!(lines.next(), Some("0,0,1,0e0,1,0"));
        assert!(text.lines().any(|l| l.starts_with("1,")));
    }
}
