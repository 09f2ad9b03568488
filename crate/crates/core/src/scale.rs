//! Scale densities, the transience integrals `k+` and `k-` of a line, and
//! the resulting limit law of the occupancy time.
//!
//! For a diffusion `dX = mu(X) dt + sigma(X) dW` and the line `a + b t`,
//! the scale density relative to the line is
//! `s(y) = exp(-int_a^y 2 (mu(x) - b) / sigma(x)^2 dx)`, and
//! `k+ = int_a^inf s`, `k- = int_-inf^a s`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::{parse, EvalError, Expr, ParseError};
use crate::law::OccupancyLaw;
use crate::quad::{integrate, QuadError};

// exp(700) is still comfortably below f64::MAX
const LOG_OVERFLOW: f64 = 700.0;

#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionSpec {
    pub mu: Expr,
    pub sigma: Expr,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScaleError {
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("diffusion coefficient is not positive at x = {x} (sigma = {value})")]
    SigmaNotPositive { x: f64, value: f64 },
    #[error("line parameters must be finite (a = {a}, b = {b})")]
    InvalidLine { a: f64, b: f64 },
    #[error("quadrature failed: {0}")]
    Quadrature(String),
}

impl From<QuadError<ScaleError>> for ScaleError {
    fn from(e: QuadError<ScaleError>) -> Self {
        match e {
            QuadError::Integrand(e) => e,
            other => ScaleError::Quadrature(other.to_string()),
        }
    }
}

impl DiffusionSpec {
    pub fn new(mu: Expr, sigma: Expr) -> Self {
        DiffusionSpec { mu, sigma }
    }

    pub fn parse(mu: &str, sigma: &str) -> Result<Self, ParseError> {
        Ok(DiffusionSpec {
            mu: parse(mu)?,
            sigma: parse(sigma)?,
        })
    }

    /// Standard Brownian motion.
    pub fn brownian() -> Self {
        DiffusionSpec {
            mu: Expr::Num(0.0),
            sigma: Expr::Num(1.0),
        }
    }

    /// Brownian motion with constant drift and unit diffusion.
    pub fn drifted(mu: f64) -> Self {
        DiffusionSpec {
            mu: if mu < 0.0 {
                Expr::Neg(Box::new(Expr::Num(-mu)))
            } else {
                Expr::Num(mu)
            },
            sigma: Expr::Num(1.0),
        }
    }

    pub fn drift(&self, x: f64) -> Result<f64, ScaleError> {
        Ok(self.mu.eval(x)?)
    }

    pub fn diffusion(&self, x: f64) -> Result<f64, ScaleError> {
        let value = self.sigma.eval(x)?;
        if value > 0.0 {
            Ok(value)
        } else {
            Err(ScaleError::SigmaNotPositive { x, value })
        }
    }

    /// `(mu, sigma)` when neither coefficient depends on `x`.
    pub fn constant_coefficients(&self) -> Option<(f64, f64)> {
        Some((self.mu.constant_value()?, self.sigma.constant_value()?))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LineTarget {
    pub a: f64,
    pub b: f64,
}

impl LineTarget {
    pub fn new(a: f64, b: f64) -> Result<Self, ScaleError> {
        if a.is_finite() && b.is_finite() {
            Ok(LineTarget { a, b })
        } else {
            Err(ScaleError::InvalidLine { a, b })
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ExtendedMass {
    Finite(f64),
    Infinite,
}

impl ExtendedMass {
    pub fn is_finite(&self) -> bool {
        matches!(self, ExtendedMass::Finite(_))
    }

    pub fn value(&self) -> f64 {
        match *self {
            ExtendedMass::Finite(v) => v,
            ExtendedMass::Infinite => f64::INFINITY,
        }
    }

    /// `1/k`, with `1/Infinite = 0`.
    pub fn reciprocal(&self) -> f64 {
        match *self {
            ExtendedMass::Finite(v) => 1.0 / v,
            ExtendedMass::Infinite => 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TransienceClass {
    RecurrentLine,
    PlusAttracting,
    MinusAttracting,
    BothAttracting,
}

pub fn classify(k_plus: ExtendedMass, k_minus: ExtendedMass) -> TransienceClass {
    match (k_plus.is_finite(), k_minus.is_finite()) {
        (false, false) => TransienceClass::RecurrentLine,
        (true, false) => TransienceClass::PlusAttracting,
        (false, true) => TransienceClass::MinusAttracting,
        (true, true) => TransienceClass::BothAttracting,
    }
}

/// Why a tail integral was declared infinite. All of these are heuristics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DivergenceReason {
    /// The scale density itself left the representable range.
    ScaleOverflow,
    /// Many panels in a row each added a non-negligible amount to a huge total.
    SustainedGrowth,
    /// Panel contributions stopped shrinking geometrically.
    NoGeometricDecay,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadPolicy {
    /// Relative tolerance of the exponent integrals.
    pub exponent_rel_tol: f64,
    /// Relative tolerance of the adaptive Simpson rule in each tail panel.
    pub tail_rel_tol: f64,
    pub max_panels: usize,
    pub max_simpson_depth: u32,
    pub max_gk_intervals: usize,
    pub growth_panels: usize,
    pub growth_fraction: f64,
    pub growth_total: f64,
    pub decay_panels: usize,
    pub decay_ratio: f64,
}

impl Default for QuadPolicy {
    fn default() -> Self {
        QuadPolicy {
            exponent_rel_tol: 1e-10,
            tail_rel_tol: 1e-10,
            max_panels: 200,
            max_simpson_depth: 40,
            max_gk_intervals: 50_000,
            growth_panels: 40,
            growth_fraction: 1e-14,
            growth_total: 1e12,
            decay_panels: 20,
            decay_ratio: 0.999,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TailMass {
    pub mass: ExtendedMass,
    pub panels: usize,
    pub divergence: Option<DivergenceReason>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransienceMasses {
    pub k_plus: ExtendedMass,
    pub k_minus: ExtendedMass,
    pub plus: TailMass,
    pub minus: TailMass,
}

impl TransienceMasses {
    pub fn class(&self) -> TransienceClass {
        classify(self.k_plus, self.k_minus)
    }

    /// True when an infinite verdict came from the divergence heuristics.
    pub fn heuristic(&self) -> bool {
        self.plus.divergence.is_some() || self.minus.divergence.is_some()
    }
}

/// `2 (mu(y) - b) / sigma(y)^2`, the derivative of `-ln s`.
fn log_slope(spec: &DiffusionSpec, b: f64, y: f64) -> Result<f64, ScaleError> {
    let s = spec.diffusion(y)?;
    let v = 2.0 * (spec.drift(y)? - b) / (s * s);
    if v.is_finite() {
        Ok(v)
    } else {
        Err(ScaleError::Quadrature(format!("non-finite log-slope at x = {y}")))
    }
}

fn exponent(
    spec: &DiffusionSpec,
    b: f64,
    from: f64,
    to: f64,
    policy: &QuadPolicy,
) -> Result<f64, ScaleError> {
    let r = integrate(
        |y| log_slope(spec, b, y),
        from,
        to,
        1e-300,
        policy.exponent_rel_tol,
        policy.max_gk_intervals,
    )?;
    Ok(-r.value)
}

/// `ln s_{a,b}(y)`.
pub fn log_scale_density(
    spec: &DiffusionSpec,
    line: LineTarget,
    y: f64,
    policy: &QuadPolicy,
) -> Result<f64, ScaleError> {
    if y == line.a {
        // sigma must still be valid at the intercept
        spec.diffusion(y)?;
        return Ok(0.0);
    }
    exponent(spec, line.b, line.a, y, policy)
}

pub fn scale_density(
    spec: &DiffusionSpec,
    line: LineTarget,
    y: f64,
    policy: &QuadPolicy,
) -> Result<f64, ScaleError> {
    Ok(log_scale_density(spec, line, y, policy)?.exp())
}

enum Stop {
    Diverged(DivergenceReason),
    Fail(ScaleError),
}

impl From<ScaleError> for Stop {
    fn from(e: ScaleError) -> Self {
        Stop::Fail(e)
    }
}

/// Integrand `exp(L(t))` of a one-sided tail, where
/// `L(t) = ln s(origin + dir t)` relative to `origin`. Each node's `L` is
/// carried along and new nodes are reached by integrating the log-slope
/// from the nearest node already known.
struct Tail<'a> {
    spec: &'a DiffusionSpec,
    b: f64,
    origin: f64,
    dir: f64,
    policy: &'a QuadPolicy,
}

#[derive(Clone, Copy)]
struct Node {
    t: f64,
    l: f64,
    f: f64,
}

impl Tail<'_> {
    fn node_from(&self, known: Node, t: f64) -> Result<Node, Stop> {
        let y0 = self.origin + self.dir * known.t;
        let y1 = self.origin + self.dir * t;
        let l = known.l + exponent(self.spec, self.b, y0, y1, self.policy)?;
        if l > LOG_OVERFLOW {
            return Err(Stop::Diverged(DivergenceReason::ScaleOverflow));
        }
        Ok(Node { t, l, f: l.exp() })
    }

    fn simpson(&self, l: Node, m: Node, r: Node, whole: f64, tol: f64, depth: u32) -> Result<f64, Stop> {
        let lm = self.node_from(l, 0.5 * (l.t + m.t))?;
        let rm = self.node_from(m, 0.5 * (m.t + r.t))?;
        let h = (r.t - l.t) / 12.0;
        let left = h * (l.f + 4.0 * lm.f + m.f);
        let right = h * (m.f + 4.0 * rm.f + r.f);
        let delta = left + right - whole;
        if depth >= 4 && delta.abs() <= 15.0 * tol {
            return Ok(left + right + delta / 15.0);
        }
        if depth >= self.policy.max_simpson_depth {
            return Err(Stop::Fail(ScaleError::Quadrature(format!(
                "adaptive Simpson reached depth {depth} near y = {}",
                self.origin + self.dir * m.t
            ))));
        }
        Ok(self.simpson(l, lm, m, left, 0.5 * tol, depth + 1)?
            + self.simpson(m, rm, r, right, 0.5 * tol, depth + 1)?)
    }

    fn panel(&self, start: Node, t1: f64, total: f64) -> Result<(f64, Node), Stop> {
        let end = self.node_from(start, t1)?;
        let mid = self.node_from(start, 0.5 * (start.t + t1))?;
        let whole = (t1 - start.t) / 6.0 * (start.f + 4.0 * mid.f + end.f);
        let tol = self.policy.tail_rel_tol * total.max(whole.abs());
        Ok((self.simpson(start, mid, end, whole, tol, 0)?, end))
    }

    fn integrate(&self) -> Result<TailMass, ScaleError> {
        let policy = self.policy;
        let mut node = Node { t: 0.0, l: 0.0, f: 1.0 };
        let mut total = 0.0;
        let mut prev: Option<f64> = None;
        let mut growth_run = 0;
        let mut decay_run = 0;
        let mut small_run = 0;
        for k in 0..policy.max_panels {
            let t1 = if k == 0 { 1.0 } else { 2.0 * node.t };
            let diverged = |reason, panels| TailMass {
                mass: ExtendedMass::Infinite,
                panels,
                divergence: Some(reason),
            };
            let (c, end) = match self.panel(node, t1, total) {
                Ok(v) => v,
                Err(Stop::Diverged(r)) => return Ok(diverged(r, k + 1)),
                Err(Stop::Fail(e)) => return Err(e),
            };
            total += c;
            if c > policy.growth_fraction * total {
                growth_run += 1;
            } else {
                growth_run = 0;
            }
            if growth_run >= policy.growth_panels && total > policy.growth_total {
                return Ok(diverged(DivergenceReason::SustainedGrowth, k + 1));
            }
            match prev {
                Some(p) if c >= policy.decay_ratio * p => decay_run += 1,
                Some(_) => decay_run = 0,
                None => {}
            }
            if decay_run >= policy.decay_panels {
                return Ok(diverged(DivergenceReason::NoGeometricDecay, k + 1));
            }
            if c <= 1e-3 * policy.tail_rel_tol * total && end.l < node.l {
                small_run += 1;
            } else {
                small_run = 0;
            }
            if small_run >= 3 {
                return Ok(TailMass {
                    mass: ExtendedMass::Finite(total),
                    panels: k + 1,
                    divergence: None,
                });
            }
            prev = Some(c);
            node = end;
        }
        Err(ScaleError::Quadrature(format!(
            "tail integral from {} did not settle within {} panels",
            self.origin, policy.max_panels
        )))
    }
}

/// `int_from^{+-inf} s_{from,b}(y) dy`, the tail mass normalised at `from`.
pub fn tail_mass(
    spec: &DiffusionSpec,
    b: f64,
    from: f64,
    upward: bool,
    policy: &QuadPolicy,
) -> Result<TailMass, ScaleError> {
    spec.diffusion(from)?;
    Tail {
        spec,
        b,
        origin: from,
        dir: if upward { 1.0 } else { -1.0 },
        policy,
    }
    .integrate()
}

pub fn transience_masses(
    spec: &DiffusionSpec,
    line: LineTarget,
    policy: &QuadPolicy,
) -> Result<TransienceMasses, ScaleError> {
    let plus = tail_mass(spec, line.b, line.a, true, policy)?;
    let minus = tail_mass(spec, line.b, line.a, false, policy)?;
    Ok(TransienceMasses {
        k_plus: plus.mass,
        k_minus: minus.mass,
        plus,
        minus,
    })
}

/// Hit probability reusing already computed masses.
pub fn hit_probability_with(
    spec: &DiffusionSpec,
    line: LineTarget,
    x: f64,
    masses: &TransienceMasses,
    policy: &QuadPolicy,
) -> Result<f64, ScaleError> {
    if x == line.a {
        return Ok(1.0);
    }
    let upward = x > line.a;
    let k = if upward { masses.k_plus } else { masses.k_minus };
    let ExtendedMass::Finite(k) = k else {
        return Ok(1.0);
    };
    let log_s = log_scale_density(spec, line, x, policy)?;
    let tail = tail_mass(spec, line.b, x, upward, policy)?;
    let w = match tail.mass {
        ExtendedMass::Finite(t) => (log_s + t.ln() - k.ln()).exp(),
        ExtendedMass::Infinite => 1.0,
    };
    Ok(w.clamp(0.0, 1.0))
}

/// Probability that the process started at `x` ever meets the line.
pub fn hit_probability(
    spec: &DiffusionSpec,
    line: LineTarget,
    x: f64,
    policy: &QuadPolicy,
) -> Result<f64, ScaleError> {
    if x == line.a {
        return Ok(1.0);
    }
    let masses = transience_masses(spec, line, policy)?;
    hit_probability_with(spec, line, x, &masses, policy)
}

/// Everything the limit theorem says about one (process, line, start).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LimitAnalysis {
    pub masses: TransienceMasses,
    pub class: TransienceClass,
    pub sigma_at_intercept: f64,
    pub hit_probability: f64,
    pub law: OccupancyLaw,
}

pub fn analyze(
    spec: &DiffusionSpec,
    line: LineTarget,
    x0: f64,
    policy: &QuadPolicy,
) -> Result<LimitAnalysis, ScaleError> {
    let line = LineTarget::new(line.a, line.b)?;
    let masses = transience_masses(spec, line, policy)?;
    let sigma = spec.diffusion(line.a)?;
    let class = masses.class();
    if class == TransienceClass::RecurrentLine {
        return Ok(LimitAnalysis {
            masses,
            class,
            sigma_at_intercept: sigma,
            hit_probability: 1.0,
            law: OccupancyLaw::AlmostSurelyInfinite,
        });
    }
    let rate = 0.5 * sigma * sigma * (masses.k_plus.reciprocal() + masses.k_minus.reciprocal());
    let w = hit_probability_with(spec, line, x0, &masses, policy)?;
    let law = OccupancyLaw::mixture(1.0 - w, rate)
        .map_err(|e| ScaleError::Quadrature(format!("invalid limit law: {e}")))?;
    Ok(LimitAnalysis {
        masses,
        class,
        sigma_at_intercept: sigma,
        hit_probability: w,
        law,
    })
}

pub fn limit_law(
    spec: &DiffusionSpec,
    line: LineTarget,
    x0: f64,
    policy: &QuadPolicy,
) -> Result<OccupancyLaw, ScaleError> {
    Ok(analyze(spec, line, x0, policy)?.law)
}
