//! Problem instances: regimes, running costs, the domain and the standing
//! assumptions every downstream module relies on.

use std::fmt;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Current version of the instance file format.
pub const SCHEMA_VERSION: u32 = 1;

/// Largest supported spatial dimension.
pub const MAX_DIM: usize = 3;

/// Relative slack used when deciding whether a point lies in the closed ball.
const BALL_SLACK: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("point {point:?} lies outside the closed ball of radius {radius}")]
    OutsideDomain { point: Vec<f64>, radius: f64 },
    #[error("point has dimension {got}, instance dimension is {expected}")]
    Dimension { expected: usize, got: usize },
    #[error("instance schema error at `{path}`: {message}")]
    Schema { path: String, message: String },
    #[error("unsupported instance schema version {0} (expected {SCHEMA_VERSION})")]
    SchemaVersion(u32),
    #[error("cannot read instance file: {0}")]
    Io(#[from] std::io::Error),
}

/// Economic regime, the state of the two-state Markov chain.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Regime {
    One,
    Two,
}

impl Regime {
    pub const BOTH: [Regime; 2] = [Regime::One, Regime::Two];

    /// Zero-based index, handy for `[T; 2]` storage.
    pub fn index(self) -> usize {
        match self {
            Regime::One => 0,
            Regime::Two => 1,
        }
    }

    pub fn other(self) -> Regime {
        match self {
            Regime::One => Regime::Two,
            Regime::Two => Regime::One,
        }
    }

    /// Label as written in instance files and reports (1 or 2).
    pub fn label(self) -> u8 {
        self.index() as u8 + 1
    }

    pub fn from_label(label: u8) -> Option<Regime> {
        match label {
            1 => Some(Regime::One),
            2 => Some(Regime::Two),
            _ => None,
        }
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.label())
    }
}

impl Serialize for Regime {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u8(self.label())
    }
}

impl<'de> Deserialize<'de> for Regime {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let label = u8::deserialize(d)?;
        Regime::from_label(label)
            .ok_or_else(|| serde::de::Error::custom(format!("regime must be 1 or 2, got {label}")))
    }
}

/// Switching rates, discount rates and volatilities of the two regimes.
///
/// `a1` is the rate of leaving regime 1 and `a2` the rate of leaving
/// regime 2, so the generator is `[[-a1, a1], [a2, -a2]]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegimeParams {
    pub a1: f64,
    pub a2: f64,
    pub alpha1: f64,
    pub alpha2: f64,
    pub sigma1: f64,
    pub sigma2: f64,
}

impl RegimeParams {
    /// Rate of leaving `regime`.
    pub fn leave_rate(&self, regime: Regime) -> f64 {
        match regime {
            Regime::One => self.a1,
            Regime::Two => self.a2,
        }
    }

    pub fn alpha(&self, regime: Regime) -> f64 {
        match regime {
            Regime::One => self.alpha1,
            Regime::Two => self.alpha2,
        }
    }

    /// Volatility magnitude of `regime`.
    pub fn sigma(&self, regime: Regime) -> f64 {
        match regime {
            Regime::One => self.sigma1.abs(),
            Regime::Two => self.sigma2.abs(),
        }
    }
}

/// Shape of a running cost `f_j`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CostKind {
    /// `Σ c_i x_i²`.
    QuadraticDiagonal { c: Vec<f64> },
    /// `m |x|²`.
    RadialQuadratic { m: f64 },
    /// `φ(|x|)` with `φ` piecewise linear through `(radii[k], values[k])`,
    /// extended linearly past the last sample.
    TabulatedRadial { radii: Vec<f64>, values: Vec<f64> },
}

/// A running cost together with its declared quadratic bound `M`
/// (`f(x) <= M|x|²`). When `bound` is absent the analytic bound of the
/// quadratic kinds is used.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostFunction {
    #[serde(flatten)]
    pub kind: CostKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bound: Option<f64>,
}

impl CostFunction {
    pub fn radial(m: f64) -> Self {
        CostFunction {
            kind: CostKind::RadialQuadratic { m },
            bound: None,
        }
    }

    pub fn diagonal(c: Vec<f64>) -> Self {
        CostFunction {
            kind: CostKind::QuadraticDiagonal { c },
            bound: None,
        }
    }

    pub fn zero() -> Self {
        Self::radial(0.0)
    }

    pub fn with_bound(mut self, bound: f64) -> Self {
        self.bound = Some(bound);
        self
    }

    /// Evaluates `f(x)` without a domain check.
    pub fn value(&self, x: &[f64]) -> f64 {
        match &self.kind {
            CostKind::QuadraticDiagonal { c } => c.iter().zip(x).map(|(c, x)| c * x * x).sum(),
            CostKind::RadialQuadratic { m } => m * norm_sq(x),
            CostKind::TabulatedRadial { radii, values } => {
                tabulated_value(radii, values, norm_sq(x).sqrt())
            }
        }
    }

    /// The constant `M` with `f(x) <= M|x|²`: the declared one if present,
    /// otherwise the analytic one. Tabulated costs have no analytic bound.
    pub fn quadratic_bound(&self) -> Option<f64> {
        if self.bound.is_some() {
            return self.bound;
        }
        match &self.kind {
            CostKind::QuadraticDiagonal { c } => Some(c.iter().copied().fold(0.0, f64::max)),
            CostKind::RadialQuadratic { m } => Some(*m),
            CostKind::TabulatedRadial { .. } => None,
        }
    }

    /// `max f` over the closed ball of the given radius.
    pub fn max_on_ball(&self, radius: f64) -> f64 {
        let r2 = radius * radius;
        match &self.kind {
            CostKind::QuadraticDiagonal { c } => c.iter().copied().fold(0.0, f64::max) * r2,
            CostKind::RadialQuadratic { m } => m * r2,
            CostKind::TabulatedRadial { radii, values } => {
                // piecewise linear: the maximum sits at a knot or at the radius
                let mut best = tabulated_value(radii, values, radius);
                for (&r, &v) in radii.iter().zip(values) {
                    if r <= radius {
                        best = best.max(v);
                    }
                }
                best
            }
        }
    }

    fn check(&self, name: &str, n: usize, out: &mut Vec<Violation>) {
        let bound_name = format!("M{}", &name[1..]);
        match &self.kind {
            CostKind::QuadraticDiagonal { c } => {
                if c.len() != n {
                    out.push(Violation::new(
                        format!("{name} coefficient count == n"),
                        format!("{} coefficients for n = {n}", c.len()),
                    ));
                }
                if c.iter().any(|c| !(c.is_finite() && *c >= 0.0)) {
                    out.push(Violation::new(
                        format!("{name} coefficients c_i >= 0"),
                        format!("c = {c:?}"),
                    ));
                }
            }
            CostKind::RadialQuadratic { m } => {
                if !(m.is_finite() && *m >= 0.0) {
                    out.push(Violation::new(format!("{name} coefficient m >= 0"), format!("m = {m}")));
                }
            }
            CostKind::TabulatedRadial { radii, values } => {
                check_table(name, radii, values, out);
                if self.bound.is_none() {
                    out.push(Violation::new(
                        format!("{name} tabulated cost declares its bound {bound_name}"),
                        "no bound given".to_string(),
                    ));
                }
            }
        }
        if let Some(m) = self.bound {
            if !(m.is_finite() && m >= 0.0) {
                out.push(Violation::new(
                    format!("{bound_name} finite and >= 0"),
                    format!("{bound_name} = {m}"),
                ));
            }
        }
    }
}

fn check_table(name: &str, radii: &[f64], values: &[f64], out: &mut Vec<Violation>) {
    let assumption = format!("{name} table is a nonnegative, nondecreasing convex profile");
    if radii.len() < 2 || radii.len() != values.len() {
        out.push(Violation::new(
            assumption,
            format!("{} radii, {} values (need >= 2, equal)", radii.len(), values.len()),
        ));
        return;
    }
    if radii[0] != 0.0 {
        out.push(Violation::new(assumption.clone(), format!("first radius is {}, not 0", radii[0])));
    }
    if radii.windows(2).any(|w| !(w[1] > w[0])) {
        out.push(Violation::new(assumption.clone(), "radii not strictly increasing"));
        return;
    }
    if values.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        out.push(Violation::new(assumption.clone(), "negative or non-finite value"));
    }
    let slopes: Vec<f64> = radii
        .windows(2)
        .zip(values.windows(2))
        .map(|(r, v)| (v[1] - v[0]) / (r[1] - r[0]))
        .collect();
    if slopes.iter().any(|s| *s < 0.0) {
        out.push(Violation::new(assumption.clone(), "profile decreases"));
    }
    if slopes.windows(2).any(|w| w[1] < w[0] - 1e-12 * w[0].abs().max(1.0)) {
        out.push(Violation::new(assumption, "slopes decrease (profile not convex)"));
    }
}

fn tabulated_value(radii: &[f64], values: &[f64], r: f64) -> f64 {
    let k = match radii.iter().rposition(|&rk| rk <= r) {
        Some(k) => k.min(radii.len() - 2),
        None => 0,
    };
    let slope = (values[k + 1] - values[k]) / (radii[k + 1] - radii[k]);
    values[k] + slope * (r - radii[k])
}

pub(crate) fn norm_sq(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

/// Full parameter set of a production-planning problem.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "InstanceFile")]
pub struct ProblemInstance {
    #[serde(default = "default_schema")]
    pub schema: u32,
    /// Number of goods (spatial dimension), 1..=3.
    pub n: usize,
    /// Inventory threshold: production stops when `|y| >= radius`.
    pub radius: f64,
    #[serde(flatten)]
    pub regimes: RegimeParams,
    pub f1: CostFunction,
    pub f2: CostFunction,
    pub y0: Vec<f64>,
    pub eps0: Regime,
}

fn default_schema() -> u32 {
    SCHEMA_VERSION
}

/// On-disk layout. Flattening loses field paths in error messages, so the
/// regime parameters are spelled out here.
#[derive(Deserialize)]
struct InstanceFile {
    #[serde(default = "default_schema")]
    schema: u32,
    n: usize,
    radius: f64,
    a1: f64,
    a2: f64,
    alpha1: f64,
    alpha2: f64,
    sigma1: f64,
    sigma2: f64,
    f1: CostFunction,
    f2: CostFunction,
    y0: Vec<f64>,
    eps0: Regime,
}

impl From<InstanceFile> for ProblemInstance {
    fn from(f: InstanceFile) -> Self {
        ProblemInstance {
            schema: f.schema,
            n: f.n,
            radius: f.radius,
            regimes: RegimeParams {
                a1: f.a1,
                a2: f.a2,
                alpha1: f.alpha1,
                alpha2: f.alpha2,
                sigma1: f.sigma1,
                sigma2: f.sigma2,
            },
            f1: f.f1,
            f2: f.f2,
            y0: f.y0,
            eps0: f.eps0,
        }
    }
}

impl ProblemInstance {
    /// The small asymmetric one-dimensional instance used throughout the
    /// test-suite and documentation.
    pub fn example() -> Self {
        ProblemInstance {
            schema: SCHEMA_VERSION,
            n: 1,
            radius: 1.0,
            regimes: RegimeParams {
                a1: 1.0,
                a2: 2.0,
                alpha1: 0.05,
                alpha2: 0.10,
                sigma1: 0.4,
                sigma2: 0.6,
            },
            f1: CostFunction::radial(1.0),
            f2: CostFunction::radial(2.0),
            y0: vec![0.0],
            eps0: Regime::One,
        }
    }

    pub fn cost(&self, regime: Regime) -> &CostFunction {
        match regime {
            Regime::One => &self.f1,
            Regime::Two => &self.f2,
        }
    }

    pub fn sigma(&self, regime: Regime) -> f64 {
        self.regimes.sigma(regime)
    }

    pub fn alpha(&self, regime: Regime) -> f64 {
        self.regimes.alpha(regime)
    }

    pub fn leave_rate(&self, regime: Regime) -> f64 {
        self.regimes.leave_rate(regime)
    }

    /// Cost bound `M_j` used by the certificate; tabulated costs without a
    /// declared bound fall back to their sampled maximum ratio.
    pub fn cost_bound(&self, regime: Regime) -> f64 {
        let f = self.cost(regime);
        f.quadratic_bound().unwrap_or_else(|| {
            bound_sample_points(self.n, self.radius)
                .iter()
                .map(|x| f.value(x) / norm_sq(x))
                .fold(0.0, f64::max)
        })
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        norm_sq(x) <= self.radius * self.radius * (1.0 + BALL_SLACK)
    }

    /// Replaces the volatilities with their magnitudes.
    pub fn normalized(mut self) -> Self {
        self.regimes.sigma1 = self.regimes.sigma1.abs();
        self.regimes.sigma2 = self.regimes.sigma2.abs();
        self
    }

    pub fn from_json_str(text: &str) -> Result<Self, ModelError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let inst: ProblemInstance =
            serde_path_to_error::deserialize(de).map_err(|e| ModelError::Schema {
                path: e.path().to_string(),
                message: e.inner().to_string(),
            })?;
        if inst.schema != SCHEMA_VERSION {
            return Err(ModelError::SchemaVersion(inst.schema));
        }
        Ok(inst.normalized())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ModelError> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("instance serializes")
    }
}

/// One broken standing assumption.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Violation {
    pub assumption: String,
    pub detail: String,
}

impl Violation {
    fn new(assumption: impl Into<String>, detail: impl Into<String>) -> Self {
        Violation {
            assumption: assumption.into(),
            detail: detail.into(),
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} violated: {}", self.assumption, self.detail)
    }
}

/// Result of [`validate`]; empty means the instance is admissible.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    /// True when some violation message contains `needle`.
    pub fn mentions(&self, needle: &str) -> bool {
        self.violations.iter().any(|v| v.to_string().contains(needle))
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.violations.is_empty() {
            return write!(f, "instance satisfies all standing assumptions");
        }
        for (i, v) in self.violations.iter().enumerate() {
            if i > 0 {
                writeln!(f)?;
            }
            write!(f, "{v}")?;
        }
        Ok(())
    }
}

/// Deterministic evaluation points for spot-checking `f(x) <= M|x|²`:
/// points at `k R / 8` along every half axis (outermost first) plus 256
/// uniform draws in the ball. The origin is excluded.
pub fn bound_sample_points(n: usize, radius: f64) -> Vec<Vec<f64>> {
    let n = n.clamp(1, MAX_DIM);
    let mut pts = Vec::new();
    for axis in 0..n {
        for k in (1..=8).rev() {
            for sign in [1.0, -1.0] {
                let mut x = vec![0.0; n];
                x[axis] = sign * radius * k as f64 / 8.0;
                pts.push(x);
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_b0d5);
    while pts.len() < 16 * n + 256 {
        let x = uniform_in_ball(&mut rng, n, radius);
        if norm_sq(&x) > 0.0 {
            pts.push(x);
        }
    }
    pts
}

/// Uniform sample from the ball of the given radius.
pub fn uniform_in_ball<R: Rng + ?Sized>(rng: &mut R, n: usize, radius: f64) -> Vec<f64> {
    let mut dir: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    let len = norm_sq(&dir).sqrt();
    let scale = radius * rng.random::<f64>().powf(1.0 / n as f64) / len;
    dir.iter_mut().for_each(|v| *v *= scale);
    dir
}

/// Checks every standing assumption of the model and names each one that
/// fails. Pure: the same instance always yields the same report.
pub fn validate(inst: &ProblemInstance) -> ValidationReport {
    let mut v = Vec::new();
    let p = &inst.regimes;

    if inst.schema != SCHEMA_VERSION {
        v.push(Violation::new("schema == 1", format!("schema = {}", inst.schema)));
    }
    if !(1..=MAX_DIM).contains(&inst.n) {
        v.push(Violation::new("1 <= n <= 3", format!("n = {}", inst.n)));
    }
    if !(inst.radius.is_finite() && inst.radius > 0.0) {
        v.push(Violation::new("R > 0", format!("radius = {}", inst.radius)));
    }
    for (name, value) in [("a1", p.a1), ("a2", p.a2)] {
        if !(value.is_finite() && value > 0.0) {
            v.push(Violation::new(format!("{name} > 0"), format!("{name} = {value}")));
        }
    }
    for (name, value) in [("alpha1", p.alpha1), ("alpha2", p.alpha2)] {
        if !(value.is_finite() && value >= 0.0) {
            v.push(Violation::new(format!("{name} >= 0"), format!("{name} = {value}")));
        }
    }
    for (name, value) in [("sigma1", p.sigma1), ("sigma2", p.sigma2)] {
        if !(value.is_finite() && value != 0.0) {
            v.push(Violation::new(format!("{name} != 0"), format!("{name} = {value}")));
        }
    }
    if inst.y0.len() != inst.n {
        v.push(Violation::new(
            "y0 has n components",
            format!("{} components for n = {}", inst.y0.len(), inst.n),
        ));
    } else if !(norm_sq(&inst.y0) < inst.radius * inst.radius) {
        v.push(Violation::new(
            "|y0| < R",
            format!("|y0| = {} with R = {}", norm_sq(&inst.y0).sqrt(), inst.radius),
        ));
    }

    let shape_ok = v.is_empty();
    for (name, regime) in [("f1", Regime::One), ("f2", Regime::Two)] {
        let f = inst.cost(regime);
        let before = v.len();
        f.check(name, inst.n, &mut v);
        if !shape_ok || v.len() > before {
            continue;
        }
        let bound = inst.cost_bound(regime);
        let bound_name = format!("M{}", &name[1..]);
        for x in bound_sample_points(inst.n, inst.radius) {
            let fx = f.value(&x);
            let cap = bound * norm_sq(&x);
            if fx < 0.0 {
                v.push(Violation::new(format!("{name}(x) >= 0"), format!("{name}({x:?}) = {fx}")));
                break;
            }
            if fx > cap * (1.0 + 1e-12) {
                v.push(Violation::new(
                    format!("quadratic bound {name}(x) <= {bound_name}|x|^2"),
                    format!("at x = {x:?}: {name}(x) = {fx} > {bound_name}|x|^2 = {cap}"),
                ));
                break;
            }
        }
    }

    ValidationReport { violations: v }
}

/// `f(x)` for `x` in the closed ball of the instance.
pub fn eval_cost(inst: &ProblemInstance, f: &CostFunction, x: &[f64]) -> Result<f64, ModelError> {
    if x.len() != inst.n {
        return Err(ModelError::Dimension {
            expected: inst.n,
            got: x.len(),
        });
    }
    if !inst.contains(x) {
        return Err(ModelError::OutsideDomain {
            point: x.to_vec(),
            radius: inst.radius,
        });
    }
    Ok(f.value(x))
}
