//! Occupancy times for normalised partial sums of i.i.d. data, and the
//! number of sample sizes at which a shrunk mean misses its target.
//!
//! Infinite sums are cut once the Brownian proxy of the running path can
//! no longer plausibly return (the same rule as the continuous
//! simulations), with a hard cap at `t = n/m = cap_time`.

use std::time::Instant;

use rand::Rng;
use rand_distr::{Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::montecarlo::{SampleBatch, SimConfig, SimError, StripMode, Target};
use crate::rng::{for_each_rep, RepRng};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum IidSpec {
    Normal { xi: f64, sigma: f64 },
    /// Exponential with the given rate, shifted to have mean `xi`.
    Exponential { rate: f64, xi: f64 },
    Uniform { xi: f64, half_width: f64 },
}

impl IidSpec {
    pub fn standard_normal() -> Self {
        IidSpec::Normal { xi: 0.0, sigma: 1.0 }
    }

    pub fn mean(&self) -> f64 {
        match *self {
            IidSpec::Normal { xi, .. } | IidSpec::Exponential { xi, .. } | IidSpec::Uniform { xi, .. } => xi,
        }
    }

    pub fn sd(&self) -> f64 {
        match *self {
            IidSpec::Normal { sigma, .. } => sigma,
            IidSpec::Exponential { rate, .. } => 1.0 / rate,
            IidSpec::Uniform { half_width, .. } => half_width / 3f64.sqrt(),
        }
    }

    /// `E(X - xi)^3 / sigma^3`.
    pub fn skewness(&self) -> f64 {
        match self {
            IidSpec::Exponential { .. } => 2.0,
            _ => 0.0,
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let (spread, xi) = match *self {
            IidSpec::Normal { xi, sigma } => (sigma, xi),
            IidSpec::Exponential { rate, xi } => (rate, xi),
            IidSpec::Uniform { xi, half_width } => (half_width, xi),
        };
        if spread > 0.0 && spread.is_finite() && xi.is_finite() {
            Ok(())
        } else {
            Err(SimError::Config(format!("invalid distribution {self:?}")))
        }
    }

    pub fn sample(&self, rng: &mut RepRng) -> f64 {
        match *self {
            IidSpec::Normal { xi, sigma } => xi + sigma * rng.sample::<f64, _>(StandardNormal),
            IidSpec::Exponential { rate, xi } => (rng.sample::<f64, _>(Exp1) - 1.0) / rate + xi,
            IidSpec::Uniform { xi, half_width } => xi + half_width * (2.0 * rng.random::<f64>() - 1.0),
        }
    }

    /// `(X - xi) / sigma`.
    pub fn sample_standardized(&self, rng: &mut RepRng) -> f64 {
        (self.sample(rng) - self.mean()) / self.sd()
    }
}

/// Neumaier-compensated running sum.
#[derive(Debug, Clone, Copy, Default)]
pub struct CompensatedSum {
    sum: f64,
    comp: f64,
}

impl CompensatedSum {
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PsConfig {
    pub n_reps: usize,
    pub seed: u64,
    pub escape_margin: f64,
    pub escape_return_tol: f64,
    /// Largest `n/m` ever summed over; paths reaching it are flagged.
    pub cap_time: f64,
}

impl Default for PsConfig {
    fn default() -> Self {
        PsConfig {
            n_reps: 2000,
            seed: 0,
            escape_margin: 1.0,
            escape_return_tol: 1e-6,
            cap_time: 100.0,
        }
    }
}

impl PsConfig {
    fn validate(&self) -> Result<(), SimError> {
        if self.n_reps == 0 {
            return Err(SimError::Config("n_reps must be at least 1".into()));
        }
        if !(self.escape_margin > 0.0) || !(self.escape_return_tol > 0.0 && self.escape_return_tol < 1.0) {
            return Err(SimError::Config("invalid escape rule".into()));
        }
        if !(self.cap_time > 0.0 && self.cap_time.is_finite()) {
            return Err(SimError::Config("cap_time must be positive".into()));
        }
        Ok(())
    }

    fn as_sim_config(&self, epsilon: f64, dt: f64) -> SimConfig {
        SimConfig {
            epsilon,
            dt,
            t_max: self.cap_time,
            escape_margin: self.escape_margin,
            escape_return_tol: self.escape_return_tol,
            n_reps: self.n_reps,
            seed: self.seed,
            strip_mode: StripMode::Lower,
        }
    }
}

/// Smallest integer `>= x`, allowing for rounding in `x`.
fn ceil_index(x: f64) -> u64 {
    (x - 1e-9).ceil().max(0.0) as u64
}

/// Probability that a Brownian path with drift `v` (relative to a ray)
/// at distance `d` from it ever comes back, for unit diffusion.
fn return_prob(d: f64, v_away: f64) -> f64 {
    if v_away <= 0.0 {
        1.0
    } else {
        (-2.0 * v_away * d).exp()
    }
}

fn check_strip(m: u64, epsilon: f64, c: f64, b: f64) -> Result<(), SimError> {
    if m == 0 {
        return Err(SimError::Config("m must be positive".into()));
    }
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(SimError::Config("epsilon must be positive".into()));
    }
    if !(c >= 0.0 && c.is_finite()) || (c > 0.0 && m as f64 * c < 1.0) {
        return Err(SimError::Config("c must be 0 or at least 1/m".into()));
    }
    if b == 0.0 || !b.is_finite() {
        return Err(SimError::Config("b must be nonzero".into()));
    }
    Ok(())
}

/// `V_{m,eps}(c, b)`: `(1/(eps m))` times the number of `n >= <cm>` with
/// `b n/m <= S_n/sqrt(m) <= b n/m + eps`, `S_n` the standardised partial
/// sum.
pub fn partial_sum_occupancy(
    dist: &IidSpec,
    m: u64,
    epsilon: f64,
    c: f64,
    b: f64,
    cfg: &PsConfig,
) -> Result<SampleBatch, SimError> {
    dist.validate()?;
    check_strip(m, epsilon, c, b)?;
    cfg.validate()?;
    let started = Instant::now();
    let mf = m as f64;
    let root_m = mf.sqrt();
    let n0 = ceil_index(c * mf);
    let n_cap = (cfg.cap_time * mf).ceil() as u64;
    let out = for_each_rep(cfg.seed, cfg.n_reps, |_, rng| {
        let mut s = CompensatedSum::default();
        let mut hits = 0u64;
        let mut n = 0u64;
        loop {
            if n >= n0 {
                let t = n as f64 / mf;
                let y = s.value() / root_m - b * t;
                if (0.0..=epsilon).contains(&y) {
                    hits += 1;
                } else if y.abs() > cfg.escape_margin {
                    // relative drift of the proxy is -b
                    let p = if y > epsilon {
                        return_prob(y - epsilon, -b)
                    } else {
                        return_prob(-y, b)
                    };
                    if p < cfg.escape_return_tol {
                        return (hits as f64 / (epsilon * mf), false);
                    }
                }
            }
            if n >= n_cap {
                return (hits as f64 / (epsilon * mf), true);
            }
            s.add(dist.sample_standardized(rng));
            n += 1;
        }
    });
    let (values, truncated) = out.into_iter().unzip();
    Ok(SampleBatch {
        target: Target::PartialSum { dist: *dist, m, c, b },
        config: cfg.as_sim_config(epsilon, 1.0 / mf),
        values,
        truncated,
        wall_time_secs: started.elapsed().as_secs_f64(),
    })
}

/// The three ways of writing `V_{m,eps}(c, b)` evaluated on one finite
/// standardised sample `y_1..y_N`, with the sums running to `n = N`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OccupancyForms {
    /// Sum over `n` of the strip indicator for `S_n / sqrt(m)`.
    pub sum: f64,
    /// Same sum with the indicator written through `T_n = S_n / sqrt(n)`.
    pub studentized: f64,
    /// Integral over `t` of the indicator for the step process `W_m(t)`.
    pub integral: f64,
}

pub fn occupancy_forms(ys: &[f64], m: u64, epsilon: f64, c: f64, b: f64) -> OccupancyForms {
    let mf = m as f64;
    let n0 = ceil_index(c * mf) as usize;
    let mut partial = Vec::with_capacity(ys.len() + 1);
    let mut s = CompensatedSum::default();
    partial.push(0.0);
    for &y in ys {
        s.add(y);
        partial.push(s.value());
    }
    let scale = 1.0 / (epsilon * mf);

    let mut sum = 0usize;
    for (n, &sn) in partial.iter().enumerate().skip(n0) {
        let r = n as f64 / mf;
        let w = sn / mf.sqrt();
        if b * r <= w && w <= b * r + epsilon {
            sum += 1;
        }
    }

    let mut studentized = 0usize;
    for (n, &sn) in partial.iter().enumerate().skip(n0) {
        if n == 0 {
            // T_0 is 0/0; the strip condition reduces to 0 <= eps
            studentized += 1;
            continue;
        }
        let nf = n as f64;
        let t_n = sn / nf.sqrt();
        let lo = b * (nf / mf).sqrt();
        if lo <= t_n && t_n <= lo + epsilon * (mf / nf).sqrt() {
            studentized += 1;
        }
    }

    // W_m is constant on [n/m, (n+1)/m); integrate piece by piece up to (N+1)/m
    let mut integral = 0.0;
    let t0 = n0 as f64 / mf;
    let t_end = partial.len() as f64 / mf;
    let mut t = t0;
    while t < t_end {
        let n = ((t * mf + 1e-9).floor() as usize).min(partial.len() - 1);
        let next = ((n + 1) as f64 / mf).min(t_end);
        let floor_t = n as f64 / mf;
        let w = partial[n] / mf.sqrt();
        if b * floor_t <= w && w <= b * floor_t + epsilon {
            integral += next - t;
        }
        t = next;
    }

    OccupancyForms {
        sum: sum as f64 * scale,
        studentized: studentized as f64 * scale,
        integral: integral / epsilon,
    }
}

fn check_delta(dist: &IidSpec, k: f64, delta: f64, c: f64) -> Result<(), SimError> {
    dist.validate()?;
    if !(k >= 0.0 && k.is_finite()) {
        return Err(SimError::Config("k must be nonnegative".into()));
    }
    if !(delta > 0.0 && delta.is_finite()) {
        return Err(SimError::Config("delta must be positive".into()));
    }
    if !(c > 0.0 && c.is_finite()) {
        return Err(SimError::Config("c must be positive".into()));
    }
    Ok(())
}

/// Running state for the miss counts of `n/(n+k) xbar_n` for several `k`.
struct MissCounter<'a> {
    dist: &'a IidSpec,
    ks: &'a [f64],
    delta: f64,
    n0: u64,
    n_cap: u64,
}

impl MissCounter<'_> {
    fn run(&self, cfg: &PsConfig, rng: &mut RepRng) -> (Vec<u64>, bool) {
        let (xi, sigma) = (self.dist.mean(), self.dist.sd());
        let d = self.delta;
        let mut counts = vec![0u64; self.ks.len()];
        let mut sum = CompensatedSum::default();
        let mut n = 0u64;
        while n < self.n0 {
            sum.add(self.dist.sample(rng));
            n += 1;
        }
        loop {
            let nf = n as f64;
            let xbar = sum.value() / nf;
            // W = delta * S_n in the time scale t = n delta^2
            let w = d * (sum.value() - nf * xi) / sigma;
            let t = nf * d * d;
            let mut gone = true;
            let mut ret = 0.0;
            for (i, &k) in self.ks.iter().enumerate() {
                if (nf / (nf + k) * xbar - xi).abs() >= d {
                    counts[i] += 1;
                    gone = false;
                    continue;
                }
                // misses happen outside the rays shift +- (t + k d^2)/sigma
                let shift = k * xi * d / sigma;
                let half = (t + k * d * d) / sigma;
                let (up, down) = (shift + half - w, w - (shift - half));
                if up.min(down) <= cfg.escape_margin {
                    gone = false;
                } else {
                    ret += return_prob(up, 1.0 / sigma) + return_prob(down, 1.0 / sigma);
                }
            }
            if gone && ret < cfg.escape_return_tol {
                return (counts, false);
            }
            if n >= self.n_cap {
                return (counts, true);
            }
            sum.add(self.dist.sample(rng));
            n += 1;
        }
    }
}

fn miss_counts(
    dist: &IidSpec,
    ks: &[f64],
    delta: f64,
    c: f64,
    cfg: &PsConfig,
) -> Vec<(Vec<u64>, bool)> {
    let m = 1.0 / (delta * delta);
    let counter = MissCounter {
        dist,
        ks,
        delta,
        n0: ceil_index(c * m).max(1),
        n_cap: (cfg.cap_time * m).ceil() as u64,
    };
    for_each_rep(cfg.seed, cfg.n_reps, |_, rng| counter.run(cfg, rng))
}

/// `Q_delta(k)`: the number of `n >= c/delta^2` with
/// `|n/(n+k) xbar_n - xi| >= delta`.
pub fn delta_miss_count(dist: &IidSpec, k: f64, delta: f64, c: f64, cfg: &PsConfig) -> Result<SampleBatch, SimError> {
    check_delta(dist, k, delta, c)?;
    cfg.validate()?;
    let started = Instant::now();
    let (values, truncated) = miss_counts(dist, &[k], delta, c, cfg)
        .into_iter()
        .map(|(q, cut)| (q[0] as f64, cut))
        .unzip();
    Ok(SampleBatch {
        target: Target::DeltaMiss { dist: *dist, k, delta, c },
        config: cfg.as_sim_config(delta, delta * delta),
        values,
        truncated,
        wall_time_secs: started.elapsed().as_secs_f64(),
    })
}

/// `delta (Q_delta(k) - Q_delta(0))`, both counts from the same data.
pub fn second_order_difference(
    dist: &IidSpec,
    k: f64,
    delta: f64,
    c: f64,
    cfg: &PsConfig,
) -> Result<SampleBatch, SimError> {
    check_delta(dist, k, delta, c)?;
    cfg.validate()?;
    let started = Instant::now();
    let (values, truncated) = miss_counts(dist, &[k, 0.0], delta, c, cfg)
        .into_iter()
        .map(|(q, cut)| (delta * (q[0] as f64 - q[1] as f64), cut))
        .unzip();
    Ok(SampleBatch {
        target: Target::SecondOrder { dist: *dist, k, delta, c },
        config: cfg.as_sim_config(delta, delta * delta),
        values,
        truncated,
        wall_time_secs: started.elapsed().as_secs_f64(),
    })
}

/// Both counts `(Q_delta(k), Q_delta(0))` per replication.
pub fn paired_miss_counts(
    dist: &IidSpec,
    k: f64,
    delta: f64,
    c: f64,
    cfg: &PsConfig,
) -> Result<Vec<(f64, f64)>, SimError> {
    check_delta(dist, k, delta, c)?;
    cfg.validate()?;
    Ok(miss_counts(dist, &[k, 0.0], delta, c, cfg)
        .into_iter()
        .map(|(q, _)| (q[0] as f64, q[1] as f64))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::brownian::Phi;
    use crate::rng::replication_rng;

    fn ps(seed: u64, n: usize) -> PsConfig {
        PsConfig {
            seed,
            n_reps: n,
            ..PsConfig::default()
        }
    }

    fn mean_se(v: &[f64]) -> (f64, f64) {
        let n = v.len() as f64;
        let m = v.iter().sum::<f64>() / n;
        let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
        (m, (var / n).sqrt())
    }

    #[test]
    fn family_moments() {
        let mut rng = replication_rng(1, 0);
        for d in [
            IidSpec::Normal { xi: 1.0, sigma: 2.0 },
            IidSpec::Exponential { rate: 0.5, xi: -1.0 },
            IidSpec::Uniform { xi: 3.0, half_width: 1.5 },
        ] {
            let xs: Vec<f64> = (0..200_000).map(|_| d.sample(&mut rng)).collect();
            let (m, se) = mean_se(&xs);
            assert!((m - d.mean()).abs() < 5.0 * se);
            let sd = (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / xs.len() as f64).sqrt();
            assert!((sd / d.sd() - 1.0).abs() < 0.02, "{d:?}: {sd}");
        }
        assert!(IidSpec::Normal { xi: 0.0, sigma: 0.0 }.validate().is_err());
    }

    #[test]
    fn compensated_sum_beats_naive() {
        let mut s = CompensatedSum::default();
        s.add(1e16);
        for _ in 0..1000 {
            s.add(1.0);
        }
        s.add(-1e16);
        assert_eq!(s.value(), 1000.0);
    }

    #[test]
    fn three_forms_agree() {
        let mut rng = replication_rng(5, 0);
        let d = IidSpec::standard_normal();
        let ys: Vec<f64> = (0..400).map(|_| d.sample_standardized(&mut rng)).collect();
        for &(eps, c, b) in &[(0.3, 0.1, 0.5), (0.5, 0.02, -0.2), (1.0, 1.0, 0.1), (0.4, 0.0, 1.0)] {
            let f = occupancy_forms(&ys, 50, eps, c, b);
            assert!(f.sum > 0.0);
            assert_eq!(f.sum, f.studentized);
            assert!((f.sum - f.integral).abs() <= 1e-12 * f.sum, "{f:?}");
        }
    }

    #[test]
    fn truncated_atom_with_fixed_c() {
        let b = partial_sum_occupancy(&IidSpec::standard_normal(), 10_000, 0.02, 1.0, 1.0, &ps(21, 600)).unwrap();
        let p = 2.0 * Phi(1.0) - 1.0;
        let se = (p * (1.0 - p) / 600.0).sqrt();
        assert!((b.zero_fraction() - p).abs() < 4.0 * se + 0.01, "{}", b.zero_fraction());
        assert_eq!(b.truncated_fraction(), 0.0);
    }

    #[test]
    fn steep_ray_has_small_mean() {
        // the strip must be thin against 1/b and wide against 1/sqrt(m)
        let m = 16_000_000;
        let b = partial_sum_occupancy(&IidSpec::standard_normal(), m, 5e-4, 1.0 / m as f64, 50.0, &ps(22, 400)).unwrap();
        let (mean, se) = mean_se(&b.values);
        assert!((mean - 1.0 / 50.0).abs() < 4.0 * se + 1e-3, "{mean} {se}");
    }

    #[test]
    fn horizon_is_not_binding() {
        let d = IidSpec::Uniform { xi: 0.0, half_width: 1.0 };
        let a = partial_sum_occupancy(&d, 500, 0.05, 0.01, -1.0, &PsConfig { cap_time: 25.0, ..ps(23, 400) }).unwrap();
        let b = partial_sum_occupancy(&d, 500, 0.05, 0.01, -1.0, &ps(23, 400)).unwrap();
        let (ma, se) = mean_se(&a.values);
        let (mb, _) = mean_se(&b.values);
        assert!((ma - mb).abs() < se);
    }

    #[test]
    fn partial_sum_rejects_bad_input() {
        let d = IidSpec::standard_normal();
        assert!(partial_sum_occupancy(&d, 100, 0.1, 0.001, 1.0, &ps(1, 1)).is_err());
        assert!(partial_sum_occupancy(&d, 100, 0.1, 0.0, 0.0, &ps(1, 1)).is_err());
    }

    #[test]
    fn large_delta_never_misses() {
        let d = IidSpec::Normal { xi: 1.0, sigma: 1.0 };
        let b = delta_miss_count(&d, 0.0, 10.0, 1.0, &ps(24, 200)).unwrap();
        assert!(b.zero_fraction() > 0.99);
    }

    #[test]
    fn misses_shrink_with_delta_pathwise() {
        // with c/delta^2 held fixed every path sees the same data and stricter events
        let d = IidSpec::Normal { xi: 1.0, sigma: 1.0 };
        let cfg = ps(25, 200);
        let small = delta_miss_count(&d, 2.0, 0.1, 0.01, &cfg).unwrap();
        let large = delta_miss_count(&d, 2.0, 0.12, 0.0144, &cfg).unwrap();
        for (s, l) in small.values.iter().zip(&large.values) {
            assert!(l <= s, "{l} > {s}");
        }
    }

    #[test]
    fn k_zero_difference_vanishes() {
        let d = IidSpec::Normal { xi: 1.0, sigma: 1.0 };
        let b = second_order_difference(&d, 0.0, 0.05, 0.05, &ps(26, 100)).unwrap();
        assert!(b.values.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn paired_counts_are_positively_associated() {
        let d = IidSpec::Normal { xi: 1.0, sigma: 1.0 };
        let pairs = paired_miss_counts(&d, 1.0, 0.05, 0.05, &ps(27, 400)).unwrap();
        let (x, y): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        let (mx, _) = mean_se(&x);
        let (my, _) = mean_se(&y);
        let cov: f64 = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum();
        assert!(cov > 0.0);
    }

    #[test]
    fn scaled_miss_count_mean() {
        // delta^2 Q_delta(0) approaches the exceedance time Q(c, 1/sigma)
        let d = IidSpec::Normal { xi: 0.5, sigma: 1.0 };
        let delta = 0.05;
        let b = delta_miss_count(&d, 0.0, delta, 0.1, &ps(28, 800)).unwrap();
        let scaled: Vec<f64> = b.values.iter().map(|q| q * delta * delta).collect();
        let cont = crate::montecarlo::simulate_exceedance_time(
            0.1,
            1.0,
            &SimConfig { n_reps: 800, seed: 29, dt: 1e-3, ..SimConfig::default() },
        )
        .unwrap();
        let (m1, se1) = mean_se(&scaled);
        let (m2, se2) = mean_se(&cont.values);
        assert!((m1 - m2).abs() < 4.0 * (se1 * se1 + se2 * se2).sqrt() + 0.02, "{m1} vs {m2}");
    }
}
