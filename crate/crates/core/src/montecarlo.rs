//! Monte Carlo estimates of strip occupancy times.
//!
//! Occupancy is sampled on the grid `t_k = k dt`: every grid point whose
//! state lies in the strip adds `dt / epsilon`. For constant coefficients
//! the path is advanced with exact Gaussian increments, in multiples of
//! `dt` whenever every strip is many standard deviations away, so grid
//! points that are skipped are ones the path could not have reached.
//! Other diffusions use Euler-Maruyama steps of size `dt`.
//!
//! A path stops once it is beyond `escape_margin` of every line and its
//! probability of ever returning to any strip is below
//! `escape_return_tol`. Paths still running at `t_max` are flagged.

use std::time::Instant;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::EvalError;
use crate::partialsum::IidSpec;
use crate::rng::{for_each_rep, RepRng};
use crate::scale::{
    hit_probability_with, transience_masses, DiffusionSpec, LineTarget, QuadPolicy, ScaleError,
    TransienceClass,
};

// A skipped stretch of time must keep the path this many standard
// deviations (plus drift) away from every strip.
const STEP_GUARD_SIGMAS: f64 = 8.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StripMode {
    /// `|Y| <= epsilon/2` around the line.
    Centered,
    /// `0 <= Y <= epsilon` above the line.
    Lower,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub epsilon: f64,
    pub dt: f64,
    pub t_max: f64,
    pub escape_margin: f64,
    pub escape_return_tol: f64,
    pub n_reps: usize,
    pub seed: u64,
    pub strip_mode: StripMode,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            epsilon: 0.05,
            dt: 1e-4,
            t_max: 1000.0,
            escape_margin: 1.0,
            escape_return_tol: 1e-6,
            n_reps: 2000,
            seed: 0,
            strip_mode: StripMode::Centered,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("the line is recurrent for this process: the occupancy time is infinite almost surely")]
    Recurrent,
    #[error(transparent)]
    Scale(#[from] ScaleError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::Config(m.to_string()));
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return bad("epsilon must be positive");
        }
        if !(self.dt > 0.0 && self.dt < self.epsilon * self.epsilon) {
            return bad("dt must be positive and below epsilon^2");
        }
        if !(self.t_max > 0.0 && self.t_max.is_finite()) {
            return bad("t_max must be positive and finite");
        }
        if !(self.escape_margin > 0.0) {
            return bad("escape_margin must be positive");
        }
        if !(self.escape_return_tol > 0.0 && self.escape_return_tol < 1.0) {
            return bad("escape_return_tol must lie in (0, 1)");
        }
        if self.n_reps == 0 {
            return bad("n_reps must be at least 1");
        }
        Ok(())
    }

    fn strip(&self) -> (f64, f64) {
        match self.strip_mode {
            StripMode::Centered => (-0.5 * self.epsilon, 0.5 * self.epsilon),
            StripMode::Lower => (0.0, self.epsilon),
        }
    }

    fn grid_index(&self, t: f64) -> u64 {
        // tolerate representation error in t/dt
        (t / self.dt - 1e-9).ceil().max(0.0) as u64
    }
}

/// What a batch of samples is a realisation of.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Target {
    Line {
        mu: String,
        sigma: String,
        x0: f64,
        a: f64,
        b: f64,
    },
    JointMarginal {
        slopes: Vec<f64>,
        c: f64,
        index: usize,
    },
    Truncated {
        c: f64,
        b: f64,
    },
    Axis {
        horizon: f64,
    },
    Exceedance {
        c: f64,
        inv_sigma: f64,
    },
    PartialSum {
        dist: IidSpec,
        m: u64,
        c: f64,
        b: f64,
    },
    DeltaMiss {
        dist: IidSpec,
        k: f64,
        delta: f64,
        c: f64,
    },
    SecondOrder {
        dist: IidSpec,
        k: f64,
        delta: f64,
        c: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleBatch {
    pub target: Target,
    pub config: SimConfig,
    pub values: Vec<f64>,
    /// The path hit `t_max` (or the partial-sum cap) while a return was
    /// still possible.
    pub truncated: Vec<bool>,
    pub wall_time_secs: f64,
}

impl SampleBatch {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn zero_fraction(&self) -> f64 {
        self.values.iter().filter(|v| **v == 0.0).count() as f64 / self.len() as f64
    }

    pub fn truncated_fraction(&self) -> f64 {
        self.truncated.iter().filter(|t| **t).count() as f64 / self.len() as f64
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.len() as f64
    }

    /// More than 1% of paths were cut off by the horizon.
    pub fn unreliable(&self) -> bool {
        self.truncated_fraction() > 0.01
    }
}

/// Several occupancy times read off the same Brownian path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointBatch {
    pub slopes: Vec<f64>,
    pub c: f64,
    pub config: SimConfig,
    /// One row per replication, one column per slope.
    pub rows: Vec<Vec<f64>>,
    pub truncated: Vec<bool>,
    pub wall_time_secs: f64,
}

impl JointBatch {
    pub fn column(&self, i: usize) -> Vec<f64> {
        self.rows.iter().map(|r| r[i]).collect()
    }

    pub fn marginal(&self, i: usize) -> SampleBatch {
        SampleBatch {
            target: Target::JointMarginal {
                slopes: self.slopes.clone(),
                c: self.c,
                index: i,
            },
            config: self.config,
            values: self.column(i),
            truncated: self.truncated.clone(),
            wall_time_secs: self.wall_time_secs,
        }
    }
}

/// Distance from `y` to the interval `[lo, hi]`, zero inside.
fn gap(y: f64, lo: f64, hi: f64) -> f64 {
    if y > hi {
        y - hi
    } else if y < lo {
        lo - y
    } else {
        0.0
    }
}

/// Probability that `Y`, a Brownian motion with drift `v` and diffusion
/// `sigma`, ever comes back to `[lo, hi]`.
fn return_probability(y: f64, v: f64, sigma: f64, lo: f64, hi: f64) -> f64 {
    let d = gap(y, lo, hi);
    let away = if y > hi { v } else { -v };
    if d == 0.0 || away <= 0.0 {
        1.0
    } else {
        (-2.0 * away * d / (sigma * sigma)).exp()
    }
}

/// Longest time `tau` with `|v| tau + K sigma sqrt(tau) <= d`.
fn safe_time(d: f64, v: f64, sigma: f64) -> f64 {
    let ks = STEP_GUARD_SIGMAS * sigma;
    let v = v.abs();
    let root = if v == 0.0 {
        d / ks
    } else {
        (-ks + (ks * ks + 4.0 * v * d).sqrt()) / (2.0 * v)
    };
    root * root
}

fn normal(rng: &mut RepRng) -> f64 {
    rng.sample(StandardNormal)
}

/// Brownian motion with constant drift and diffusion watched against a set
/// of lines `a + b t`, counting grid points in each strip.
struct ConstPath<'a> {
    mu: f64,
    sigma: f64,
    x0: f64,
    lines: &'a [(f64, f64)],
    start: u64,
    /// Fixed horizon instead of the escape rule.
    end: Option<u64>,
}

impl ConstPath<'_> {
    fn run(&self, cfg: &SimConfig, (lo, hi): (f64, f64), rng: &mut RepRng) -> (Vec<u64>, bool) {
        let dt = cfg.dt;
        let mut counts = vec![0u64; self.lines.len()];
        let mut x = self.x0;
        let mut k = 0u64;
        if self.start > 0 {
            let tau = self.start as f64 * dt;
            x += self.mu * tau + self.sigma * tau.sqrt() * normal(rng);
            k = self.start;
        }
        let k_end = self.end.unwrap_or_else(|| cfg.grid_index(cfg.t_max));
        loop {
            if k >= k_end {
                return (counts, self.end.is_none());
            }
            let t = k as f64 * dt;
            let mut inside = false;
            let mut far = true;
            let mut ret = 0.0;
            let mut tau = f64::INFINITY;
            for (i, &(a, b)) in self.lines.iter().enumerate() {
                let y = x - a - b * t;
                let d = gap(y, lo, hi);
                if d == 0.0 {
                    counts[i] += 1;
                    inside = true;
                    far = false;
                    continue;
                }
                tau = tau.min(safe_time(d, self.mu - b, self.sigma));
                if y.abs() <= cfg.escape_margin {
                    far = false;
                } else {
                    ret += return_probability(y, self.mu - b, self.sigma, lo, hi);
                }
            }
            if self.end.is_none() && far && ret < cfg.escape_return_tol {
                return (counts, false);
            }
            let steps = if inside {
                1
            } else {
                ((tau / dt).floor() as u64).max(1)
            }
            .min(k_end - k);
            let h = steps as f64 * dt;
            x += self.mu * h + self.sigma * h.sqrt() * normal(rng);
            k += steps;
        }
    }
}

fn scaled(counts: &[u64], factor: f64) -> Vec<f64> {
    counts.iter().map(|&n| n as f64 * factor).collect()
}

/// Occupancy of `a + b t`, `t >= c`, by `x0 + mu t + sigma W(t)` for every
/// line in `lines`.
fn simulate_constant(
    mu: f64,
    sigma: f64,
    x0: f64,
    lines: &[(f64, f64)],
    c: f64,
    cfg: &SimConfig,
) -> (Vec<Vec<f64>>, Vec<bool>) {
    let engine = ConstPath {
        mu,
        sigma,
        x0,
        lines,
        start: cfg.grid_index(c),
        end: None,
    };
    let strip = cfg.strip();
    let factor = cfg.dt / cfg.epsilon;
    for_each_rep(cfg.seed, cfg.n_reps, |_, rng| {
        let (counts, cut) = engine.run(cfg, strip, rng);
        (scaled(&counts, factor), cut)
    })
    .into_iter()
    .unzip()
}

/// Exact probability of ever meeting the line `a + b (t + s)`, `s >= 0`,
/// from `x`. Failures count as "may still return".
fn may_return(spec: &DiffusionSpec, x: f64, a: f64, b: f64, tol: f64, policy: &QuadPolicy) -> bool {
    let Ok(line) = LineTarget::new(a, b) else {
        return true;
    };
    let Ok(masses) = transience_masses(spec, line, policy) else {
        return true;
    };
    match hit_probability_with(spec, line, x, &masses, policy) {
        Ok(w) => w >= tol,
        Err(_) => true,
    }
}

fn simulate_euler(
    spec: &DiffusionSpec,
    x0: f64,
    line: LineTarget,
    cfg: &SimConfig,
) -> Result<(Vec<f64>, Vec<bool>), SimError> {
    let (lo, hi) = cfg.strip();
    let dt = cfg.dt;
    let sdt = dt.sqrt();
    let k_end = cfg.grid_index(cfg.t_max);
    let factor = dt / cfg.epsilon;
    let policy = QuadPolicy::default();
    let out = for_each_rep(cfg.seed, cfg.n_reps, |_, rng| -> Result<(f64, bool), SimError> {
        let mut x = x0;
        let mut count = 0u64;
        // the exact return check is costly, so back off between checks
        let mut next_check = 0u64;
        let mut wait = 256u64;
        for k in 0..k_end {
            let t = k as f64 * dt;
            let y = x - line.a - line.b * t;
            if gap(y, lo, hi) == 0.0 {
                count += 1;
            } else if y.abs() > cfg.escape_margin && k >= next_check {
                let a_now = line.a + line.b * t;
                if !may_return(spec, x, a_now, line.b, cfg.escape_return_tol, &policy) {
                    return Ok((count as f64 * factor, false));
                }
                next_check = k + wait;
                wait *= 2;
            }
            let s = spec.diffusion(x)?;
            x += spec.drift(x)? * dt + s * sdt * normal(rng);
        }
        Ok((count as f64 * factor, true))
    });
    let pairs = out.into_iter().collect::<Result<Vec<_>, _>>()?;
    Ok(pairs.into_iter().unzip())
}

/// `V_eps` for a general diffusion started at `x0` and the line `a + b t`.
pub fn simulate_line_occupancy(
    spec: &DiffusionSpec,
    x0: f64,
    line: LineTarget,
    cfg: &SimConfig,
) -> Result<SampleBatch, SimError> {
    cfg.validate()?;
    let started = Instant::now();
    let line = LineTarget::new(line.a, line.b)?;
    let masses = transience_masses(spec, line, &QuadPolicy::default())?;
    if masses.class() == TransienceClass::RecurrentLine {
        return Err(SimError::Recurrent);
    }
    let (values, truncated) = match spec.constant_coefficients() {
        Some((mu, sigma)) => {
            if !(sigma > 0.0) {
                return Err(ScaleError::SigmaNotPositive { x: x0, value: sigma }.into());
            }
            let (rows, cut) = simulate_constant(mu, sigma, x0, &[(line.a, line.b)], 0.0, cfg);
            (rows.into_iter().map(|r| r[0]).collect(), cut)
        }
        None => simulate_euler(spec, x0, line, cfg)?,
    };
    Ok(SampleBatch {
        target: Target::Line {
            mu: spec.mu.to_string(),
            sigma: spec.sigma.to_string(),
            x0,
            a: line.a,
            b: line.b,
        },
        config: *cfg,
        values,
        truncated,
        wall_time_secs: started.elapsed().as_secs_f64(),
    })
}

fn check_slopes(slopes: &[f64]) -> Result<(), SimError> {
    if slopes.is_empty() {
        return Err(SimError::Config("at least one slope is needed".into()));
    }
    for (i, &b) in slopes.iter().enumerate() {
        if b == 0.0 || !b.is_finite() {
            return Err(SimError::Config(format!("slope {b} must be nonzero and finite")));
        }
        if slopes[..i].contains(&b) {
            return Err(SimError::Config(format!("slope {b} appears twice")));
        }
    }
    Ok(())
}

fn check_horizon(c: f64) -> Result<(), SimError> {
    if c >= 0.0 && c.is_finite() {
        Ok(())
    } else {
        Err(SimError::Config(format!("truncation time {c} must be nonnegative")))
    }
}

/// `V_eps(c, b)` for every slope, all read off one Brownian path from 0.
pub fn simulate_joint_truncated(c: f64, slopes: &[f64], cfg: &SimConfig) -> Result<JointBatch, SimError> {
    cfg.validate()?;
    check_slopes(slopes)?;
    check_horizon(c)?;
    let started = Instant::now();
    let lines: Vec<(f64, f64)> = slopes.iter().map(|&b| (0.0, b)).collect();
    let (rows, truncated) = simulate_constant(0.0, 1.0, 0.0, &lines, c, cfg);
    Ok(JointBatch {
        slopes: slopes.to_vec(),
        c,
        config: *cfg,
        rows,
        truncated,
        wall_time_secs: started.elapsed().as_secs_f64(),
    })
}

/// `(V_eps(b_1), ..., V_eps(b_d))` from one Brownian path per replication.
pub fn simulate_joint(slopes: &[f64], cfg: &SimConfig) -> Result<JointBatch, SimError> {
    simulate_joint_truncated(0.0, slopes, cfg)
}

/// `V_eps(c, b)`: occupancy of the ray `b t` during `t >= c`.
pub fn simulate_truncated(c: f64, b: f64, cfg: &SimConfig) -> Result<SampleBatch, SimError> {
    let joint = simulate_joint_truncated(c, &[b], cfg)?;
    Ok(SampleBatch {
        target: Target::Truncated { c, b },
        config: *cfg,
        values: joint.column(0),
        truncated: joint.truncated,
        wall_time_secs: joint.wall_time_secs,
    })
}

/// `V_{eps,T}`: time in `|W| <= eps/2` during `[0, T]`, divided by
/// `eps sqrt(T)`. The strip is always centred here.
pub fn simulate_axis_time(horizon: f64, cfg: &SimConfig) -> Result<SampleBatch, SimError> {
    cfg.validate()?;
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(SimError::Config(format!("horizon {horizon} must be positive")));
    }
    let started = Instant::now();
    let lines = [(0.0, 0.0)];
    let engine = ConstPath {
        mu: 0.0,
        sigma: 1.0,
        x0: 0.0,
        lines: &lines,
        start: 0,
        end: Some(((horizon / cfg.dt).round() as u64).max(1)),
    };
    let strip = (-0.5 * cfg.epsilon, 0.5 * cfg.epsilon);
    let factor = cfg.dt / (cfg.epsilon * horizon.sqrt());
    let values = for_each_rep(cfg.seed, cfg.n_reps, |_, rng| {
        engine.run(cfg, strip, rng).0[0] as f64 * factor
    });
    Ok(SampleBatch {
        target: Target::Axis { horizon },
        config: *cfg,
        truncated: vec![false; values.len()],
        values,
        wall_time_secs: started.elapsed().as_secs_f64(),
    })
}

/// `Q(c, 1/sigma)`: time after `c` during which `|W(t)| >= t inv_sigma`.
/// Accumulation starts at the first grid point at or after `max(c, dt)`.
pub fn simulate_exceedance_time(c: f64, inv_sigma: f64, cfg: &SimConfig) -> Result<SampleBatch, SimError> {
    cfg.validate()?;
    check_horizon(c)?;
    if !(inv_sigma > 0.0 && inv_sigma.is_finite()) {
        return Err(SimError::Config(format!("inv_sigma {inv_sigma} must be positive")));
    }
    let started = Instant::now();
    let dt = cfg.dt;
    let start = cfg.grid_index(c).max(1);
    let k_end = cfg.grid_index(cfg.t_max);
    let s = inv_sigma;
    let out = for_each_rep(cfg.seed, cfg.n_reps, |_, rng| {
        let mut k = start;
        let mut w = (start as f64 * dt).sqrt() * normal(rng);
        let mut count = 0u64;
        loop {
            if k >= k_end {
                return (count as f64 * dt, true);
            }
            let bound = k as f64 * dt * s;
            let steps = if w.abs() >= bound {
                count += 1;
                1
            } else {
                let (d_up, d_down) = (bound - w, w + bound);
                if d_up > cfg.escape_margin && d_down > cfg.escape_margin {
                    let ret = (-2.0 * s * d_up).exp() + (-2.0 * s * d_down).exp();
                    if ret < cfg.escape_return_tol {
                        return (count as f64 * dt, false);
                    }
                }
                ((safe_time(d_up.min(d_down), s, 1.0) / dt).floor() as u64).max(1)
            }
            .min(k_end - k);
            let h = steps as f64 * dt;
            w += h.sqrt() * normal(rng);
            k += steps;
        }
    });
    let (values, truncated) = out.into_iter().unzip();
    Ok(SampleBatch {
        target: Target::Exceedance { c, inv_sigma },
        config: *cfg,
        values,
        truncated,
        wall_time_secs: started.elapsed().as_secs_f64(),
    })
}
