//! Closed forms for standard Brownian motion: occupancy laws of lines and
//! truncated rays, covariances of the occupancy process, maximum
//! distributions and the moments of the axis occupancy limit.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::law::OccupancyLaw;

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_677_939_946_059_934_381_9;

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum BrownianError {
    #[error("slope must be nonzero; along a horizontal line the occupancy is infinite")]
    ZeroSlope,
    #[error("truncation time must be a nonnegative finite number, got {0}")]
    Horizon(f64),
    #[error("covariance needs two nonzero slopes, got ({0}, {1})")]
    Slopes(f64, f64),
}

/// Standard normal density.
pub fn phi(x: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * x * x).exp()
}

// Mills ratio (1 - Phi(x)) / phi(x) for x >= 2 by backward evaluation of
// the continued fraction x + 1/(x + 2/(x + 3/(x + ...))).
fn mills_ratio(x: f64) -> f64 {
    let mut t = x;
    for n in (1..=200).rev() {
        t = x + n as f64 / t;
    }
    1.0 / t
}

// sum_{n>=0} x^(2n+1) / (2n+1)!!, so that Phi(x) = 1/2 + phi(x) * this.
fn phi_series(x: f64) -> f64 {
    let x2 = x * x;
    let mut term = x;
    let mut sum = x;
    let mut n = 0.0;
    while term.abs() > 1e-17 * sum.abs() {
        n += 1.0;
        term *= x2 / (2.0 * n + 1.0);
        sum += term;
    }
    sum
}

/// `1 - Phi(x)`, accurate in the far upper tail.
pub fn upper_tail(x: f64) -> f64 {
    if x >= 2.0 {
        phi(x) * mills_ratio(x)
    } else if x > -2.0 {
        0.5 - phi(x) * phi_series(x)
    } else {
        1.0 - phi(x) * mills_ratio(-x)
    }
}

/// Standard normal distribution function.
#[allow(non_snake_case)]
pub fn Phi(x: f64) -> f64 {
    if x >= 2.0 {
        1.0 - phi(x) * mills_ratio(x)
    } else if x > -2.0 {
        0.5 + phi(x) * phi_series(x)
    } else {
        phi(x) * mills_ratio(-x)
    }
}

/// `k(u) = 2 (1 - Phi(u))`, the chance that `|N(0,1)|` exceeds `u`.
pub fn tail_weight(u: f64) -> f64 {
    2.0 * upper_tail(u)
}

/// Law of the total time standard Brownian motion started at `x0` spends
/// near the line `a + b t`.
pub fn line_law(x0: f64, a: f64, b: f64) -> Result<OccupancyLaw, BrownianError> {
    if b == 0.0 {
        return Err(BrownianError::ZeroSlope);
    }
    // distance on the side away from which the line escapes
    let gap = if b > 0.0 { a - x0 } else { x0 - a };
    let atom = if gap > 0.0 {
        -(-2.0 * b.abs() * gap).exp_m1()
    } else {
        0.0
    };
    Ok(OccupancyLaw::Mixture {
        atom_weight: atom,
        rate: b.abs(),
    })
}

fn check_horizon(c: f64) -> Result<(), BrownianError> {
    if c >= 0.0 && c.is_finite() {
        Ok(())
    } else {
        Err(BrownianError::Horizon(c))
    }
}

/// Occupancy law of the ray `b t`, `t >= c`, for Brownian motion from 0.
pub fn truncated_law(c: f64, b: f64) -> Result<OccupancyLaw, BrownianError> {
    check_horizon(c)?;
    if b == 0.0 {
        return Err(BrownianError::ZeroSlope);
    }
    Ok(OccupancyLaw::Mixture {
        atom_weight: 1.0 - tail_weight(b.abs() * c.sqrt()),
        rate: b.abs(),
    })
}

pub fn truncated_moment(c: f64, b: f64, p: u32) -> Result<f64, BrownianError> {
    check_horizon(c)?;
    if b == 0.0 {
        return Err(BrownianError::ZeroSlope);
    }
    let mut m = tail_weight(b.abs() * c.sqrt());
    for k in 1..=p {
        m *= k as f64 / b.abs();
    }
    Ok(m)
}

/// Covariance of the occupancy times of the rays `b t` and `c t`.
///
/// | input            | evaluated as                         |
/// |------------------|--------------------------------------|
/// | `b == c`         | `1/b^2`, the variance                |
/// | same sign        | `(x, y) = (min, max)` of `abs`, `1/(y(2y - x))` |
/// | opposite signs   | `c' = abs(negative)`, `d = positive` |
///
/// Both negative reduces to both positive by reflecting the path.
pub fn cov_pair(b: f64, c: f64) -> Result<f64, BrownianError> {
    if b == 0.0 || c == 0.0 || !b.is_finite() || !c.is_finite() {
        return Err(BrownianError::Slopes(b, c));
    }
    if (b > 0.0) == (c > 0.0) {
        let (x, y) = (b.abs().min(c.abs()), b.abs().max(c.abs()));
        Ok(1.0 / (y * (2.0 * y - x)))
    } else {
        let (cn, d) = if b < 0.0 { (-b, c) } else { (-c, b) };
        Ok(1.0 / (d * (cn + 2.0 * d)) + 1.0 / (cn * (2.0 * cn + d)) - 1.0 / (cn * d))
    }
}

pub fn corr_pair(b: f64, c: f64) -> Result<f64, BrownianError> {
    if b == 0.0 || c == 0.0 || !b.is_finite() || !c.is_finite() {
        return Err(BrownianError::Slopes(b, c));
    }
    if (b > 0.0) == (c > 0.0) {
        let lo = b.abs().min(c.abs());
        let h = b.abs().max(c.abs()) - lo;
        Ok(lo / (lo + 2.0 * h))
    } else {
        let (cn, d) = if b < 0.0 { (-b, c) } else { (-c, b) };
        let k = d / cn;
        Ok(-3.0 * k / ((k + 2.0) * (2.0 * k + 1.0)))
    }
}

/// `P(max_{0 <= t <= 1/c} W(t) <= b)`.
pub fn max_cdf(b: f64, c: f64) -> f64 {
    if b <= 0.0 {
        return 0.0;
    }
    1.0 - tail_weight(b * c.sqrt())
}

/// `H(u) = P(max_{0 <= s <= 1} |W(s)| <= u)` from the alternating series of
/// normal distribution functions, summing at most `terms` pairs.
pub fn two_sided_max_cdf(u: f64, terms: usize) -> f64 {
    if u <= 0.0 || u.is_nan() {
        return 0.0;
    }
    let mut sum = 1.0 - tail_weight(u);
    for k in 1..=terms {
        let kf = k as f64;
        // Phi((2k+1)u) - Phi((2k-1)u), counted once for k and once for -k
        let bracket = upper_tail((2.0 * kf - 1.0) * u) - upper_tail((2.0 * kf + 1.0) * u);
        let sign = if k % 2 == 1 { -1.0 } else { 1.0 };
        sum += 2.0 * sign * bracket;
        if bracket < 1e-14 {
            break;
        }
    }
    sum.clamp(0.0, 1.0)
}

/// The same probability from the eigenfunction series
/// `(4/pi) sum_k (-1)^k/(2k+1) exp(-(2k+1)^2 pi^2 / (8 u^2))`, which
/// converges fast for small `u`.
pub fn two_sided_max_cdf_theta(u: f64, terms: usize) -> f64 {
    if u <= 0.0 || u.is_nan() {
        return 0.0;
    }
    let pi = std::f64::consts::PI;
    let mut sum = 0.0;
    for k in 0..terms {
        let m = (2 * k + 1) as f64;
        let term = (-m * m * pi * pi / (8.0 * u * u)).exp() / m;
        sum += if k % 2 == 0 { term } else { -term };
        if term < 1e-17 {
            break;
        }
    }
    (4.0 / pi * sum).clamp(0.0, 1.0)
}

/// Probabilities of the four sign patterns of `(U_-1, U_1)` after time
/// `c`: `p00` both rays missed, `p11` both hit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SignPatternProbs {
    pub p00: f64,
    pub p01: f64,
    pub p10: f64,
    pub p11: f64,
}

pub fn sign_pattern_probs(c: f64) -> Result<SignPatternProbs, BrownianError> {
    check_horizon(c)?;
    let r = c.sqrt();
    let p00 = two_sided_max_cdf(r, 1000);
    let p01 = (1.0 - tail_weight(r) - p00).max(0.0);
    Ok(SignPatternProbs {
        p00,
        p01,
        p10: p01,
        p11: 1.0 - p00 - 2.0 * p01,
    })
}

/// `E V(c, -1) V(c, 1)` for the rays `-t` and `t` truncated at time `c`.
pub fn cross_moment_truncated(c: f64) -> Result<f64, BrownianError> {
    check_horizon(c)?;
    Ok(2.0 / 3.0 * tail_weight(3.0 * c.sqrt()))
}

/// `ln Gamma(p/2 + 1)` for integer `p`.
fn ln_gamma_half_integer(p: u32) -> f64 {
    // Gamma(1) = 1, Gamma(3/2) = sqrt(pi)/2
    let (mut z, mut acc) = if p % 2 == 0 {
        (1.0, 0.0)
    } else {
        (1.5, (std::f64::consts::PI.sqrt() / 2.0).ln())
    };
    let target = p as f64 / 2.0 + 1.0;
    while z < target {
        acc += z.ln();
        z += 1.0;
    }
    acc
}

/// `E |N(0,1)|^p = p! / (2^(p/2) Gamma(p/2 + 1))`.
pub fn axis_time_moment(p: u32) -> f64 {
    let ln_fact: f64 = (2..=p).map(|k| (k as f64).ln()).sum();
    (ln_fact - 0.5 * p as f64 * std::f64::consts::LN_2 - ln_gamma_half_integer(p)).exp()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use statrs::distribution::{ContinuousCDF, Normal};

    fn near(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn normal_functions_match_reference_values() {
        assert!(near(phi(0.0), 0.398_942_280_4, 1e-10));
        assert_eq!(Phi(0.0), 0.5);
        assert!(near(Phi(1.0), 0.841_344_746_068_542_9, 1e-15));
        assert!(near(tail_weight(1.0), 0.317_310_507_862_914_15, 1e-15));
        assert!(near(tail_weight(2.0), 0.045_500_263_896_358_42, 1e-15));
        assert!(near(tail_weight(3.0), 0.002_699_796_063_260_186_6, 1e-16));
        assert_eq!(tail_weight(0.0), 1.0);
        assert!(tail_weight(40.0) < 1e-300);
    }

    #[test]
    fn phi_matches_high_precision_table() {
        // (x, Phi(x)) from 40-digit arithmetic
        let table = [
            (-37.5, 4.605_353_009_581_954_8e-308),
            (-20.0, 2.753_624_118_606_233_7e-89),
            (-8.0, 6.220_960_574_271_784_1e-16),
            (-5.0, 2.866_515_718_791_939_1e-7),
            (-3.5, 2.326_290_790_355_250_4e-4),
            (-3.0, 1.349_898_031_630_094_5e-3),
            (-2.8125, 2.457_901_175_196_687_6e-3),
            (-2.0, 2.275_013_194_817_920_7e-2),
            (-1.0, 0.158_655_253_931_457_05),
            (-0.25, 0.401_293_674_317_076_28),
            (-0.5, 0.308_537_538_725_986_9),
            (-1.5, 6.680_720_126_885_806_6e-2),
            (-2.9, 1.865_813_300_384_038_5e-3),
            (-4.0, 3.167_124_183_311_992_1e-5),
            (-6.0, 9.865_876_450_376_981_4e-10),
            (-10.0, 7.619_853_024_160_526_1e-24),
        ];
        for (x, p) in table {
            assert!((Phi(x) - p).abs() <= 1e-14 * p, "Phi({x})");
            assert!((upper_tail(-x) - p).abs() <= 1e-14 * p, "upper_tail({})", -x);
            assert!((Phi(-x) - (1.0 - p)).abs() <= 1e-15, "Phi({})", -x);
        }
    }

    #[test]
    fn phi_agrees_with_statrs_everywhere() {
        // statrs' erf is good to roughly 1e-11, so that is the bar here
        let n = Normal::new(0.0, 1.0).unwrap();
        let mut x = -12.0;
        while x <= 12.0 {
            assert!(near(Phi(x), n.cdf(x), 1e-10), "x = {x}");
            let (q, r) = (upper_tail(x), n.sf(x));
            assert!((q - r).abs() <= 1e-9 * r, "x = {x}: {q} vs {r}");
            x += 0.0625;
        }
    }

    #[test]
    fn phi_agrees_with_taylor_series_of_erf() {
        // erf(z) = 2/sqrt(pi) sum (-1)^n z^(2n+1) / (n! (2n+1)), an independent route
        for &x in &[0.3, 1.0, 1.7, 2.5] {
            let z: f64 = x / std::f64::consts::SQRT_2;
            let mut term = z;
            let mut sum = z;
            for n in 1..80 {
                term *= -z * z / n as f64;
                sum += term / (2 * n + 1) as f64;
            }
            let erf = 2.0 / std::f64::consts::PI.sqrt() * sum;
            assert!(near(Phi(x), 0.5 * (1.0 + erf), 1e-14));
        }
    }

    #[test]
    fn line_law_examples() {
        assert_eq!(
            line_law(0.0, 0.0, -3.0).unwrap(),
            OccupancyLaw::Mixture { atom_weight: 0.0, rate: 3.0 }
        );
        let law = line_law(0.0, 1.0, 1.0).unwrap();
        assert!(near(law.atom_weight().unwrap(), 1.0 - (-2f64).exp(), 1e-15));
        assert_eq!(law.rate(), Some(1.0));
        assert_eq!(line_law(5.0, 1.0, 1.0).unwrap().atom_weight(), Some(0.0));
        // mirrored
        let law = line_law(2.0, 1.0, -1.0).unwrap();
        assert!(near(law.atom_weight().unwrap(), 1.0 - (-2f64).exp(), 1e-15));
        assert_eq!(line_law(0.0, 0.0, 0.0), Err(BrownianError::ZeroSlope));
    }

    #[test]
    fn truncated_examples() {
        assert_eq!(truncated_law(0.0, 2.0).unwrap().atom_weight(), Some(0.0));
        let law = truncated_law(1.0, 1.0).unwrap();
        assert!(near(law.atom_weight().unwrap(), 1.0 - 0.317_310_5, 1e-7));
        let law = truncated_law(4.0, -1.0).unwrap();
        assert!(near(law.atom_weight().unwrap(), 1.0 - 0.045_500_3, 1e-7));
        assert!(near(truncated_moment(0.0, 1.0, 3).unwrap(), 6.0, 1e-15));
        assert!(near(truncated_moment(0.0, 2.0, 3).unwrap(), 0.75, 1e-15));
        assert!(near(truncated_moment(1.0, 1.0, 1).unwrap(), 0.317_310_5, 1e-7));
        assert!(truncated_law(-1.0, 1.0).is_err());
    }

    #[test]
    fn covariance_examples() {
        assert!(near(cov_pair(1.0, 2.0).unwrap(), 1.0 / 6.0, 1e-15));
        assert!(near(cov_pair(-1.0, 1.0).unwrap(), -1.0 / 3.0, 1e-15));
        assert!(near(cov_pair(1.0, 1.0).unwrap(), 1.0, 1e-15));
        assert!(near(cov_pair(-2.0, -1.0).unwrap(), 1.0 / 6.0, 1e-15));
        assert!(near(corr_pair(1.0, 3.0).unwrap(), 0.2, 1e-15));
        assert!(near(corr_pair(-2.0, 2.0).unwrap(), -1.0 / 3.0, 1e-15));
        assert!(near(corr_pair(1.5, 1.5).unwrap(), 1.0, 1e-15));
        assert!(cov_pair(0.0, 1.0).is_err());
    }

    #[test]
    fn opposite_sign_correlation_is_minimal_at_mirror_image() {
        let mut best = (f64::INFINITY, 0.0);
        let mut k: f64 = 0.01;
        while k <= 100.0 {
            let r = corr_pair(-1.0, k).unwrap();
            if r < best.0 {
                best = (r, k);
            }
            k *= 1.001;
        }
        assert!(near(best.0, -1.0 / 3.0, 1e-6));
        assert!(near(best.1, 1.0, 2e-3));
    }

    #[test]
    fn max_cdf_examples() {
        assert!(near(max_cdf(1.0, 1.0), 0.682_689_492_137_085_9, 1e-15));
        assert_eq!(max_cdf(0.0, 2.0), 0.0);
        assert!(near(max_cdf(40.0, 1.0), 1.0, 1e-12));
    }

    #[test]
    fn two_sided_series_agree_with_each_other() {
        for i in 1..=60 {
            let u = 0.05 * i as f64;
            let a = two_sided_max_cdf(u, 10_000);
            let b = two_sided_max_cdf_theta(u, 10_000);
            assert!(near(a, b, 1e-13), "u = {u}: {a} vs {b}");
        }
        assert!(near(two_sided_max_cdf(40.0, 100), 1.0, 1e-12));
        assert_eq!(two_sided_max_cdf(0.0, 100), 0.0);
    }

    #[test]
    fn sign_patterns() {
        let p = sign_pattern_probs(0.0).unwrap();
        assert_eq!((p.p00, p.p01, p.p10, p.p11), (0.0, 0.0, 0.0, 1.0));
        let p = sign_pattern_probs(1.0).unwrap();
        let h1 = two_sided_max_cdf(1.0, 1000);
        assert_eq!(p.p00, h1);
        assert!(near(p.p01, 0.682_689_5 - h1, 1e-7));
        assert_eq!(p.p01, p.p10);
    }

    #[test]
    fn cross_moment_examples() {
        assert!(near(cross_moment_truncated(0.0).unwrap(), 2.0 / 3.0, 1e-15));
        assert!(near(cross_moment_truncated(1.0).unwrap(), 0.001_799_864, 1e-9));
        assert!(cross_moment_truncated(100.0).unwrap() < 1e-100);
        let c0 = cross_moment_truncated(0.0).unwrap();
        assert!(near(c0, 1.0 + cov_pair(-1.0, 1.0).unwrap(), 1e-12));
    }

    #[test]
    fn axis_moments_follow_gaussian_recurrence() {
        assert!(near(axis_time_moment(1), (2.0 / std::f64::consts::PI).sqrt(), 1e-15));
        assert!(near(axis_time_moment(2), 1.0, 1e-14));
        assert!(near(axis_time_moment(4), 3.0, 1e-13));
        let mut m = [0.0f64; 31];
        m[0] = 1.0;
        m[1] = (2.0 / std::f64::consts::PI).sqrt();
        for p in 2..=30 {
            m[p] = (p - 1) as f64 * m[p - 2];
        }
        for p in 1..=30 {
            let v = axis_time_moment(p as u32);
            assert!((v - m[p]).abs() <= 1e-12 * m[p], "p = {p}");
        }
    }

    proptest! {
        #[test]
        fn covariance_and_correlation_agree(b in -5.0f64..5.0, c in -5.0f64..5.0) {
            prop_assume!(b.abs() > 0.05 && c.abs() > 0.05);
            let r = cov_pair(b, c).unwrap()
                / (cov_pair(b, b).unwrap() * cov_pair(c, c).unwrap()).sqrt();
            prop_assert!(near(r, corr_pair(b, c).unwrap(), 1e-12));
        }

        #[test]
        fn truncated_mean_matches_law(c in 0.0f64..9.0, b in -4.0f64..4.0) {
            prop_assume!(b.abs() > 0.05);
            let law = truncated_law(c, b).unwrap();
            prop_assert!(near(truncated_moment(c, b, 1).unwrap(), law.mean(), 1e-12));
        }

        #[test]
        fn two_sided_is_monotone_and_below_one_sided(u in 0.01f64..6.0, du in 0.0f64..0.5) {
            let h = two_sided_max_cdf(u, 10_000);
            // the alternating sum carries ~1e-15 absolute rounding noise
            prop_assert!(h <= two_sided_max_cdf(u + du, 10_000) + 1e-13);
            prop_assert!(h <= max_cdf(u, 1.0) + 1e-13);
        }

        #[test]
        fn line_law_matches_scale_engine(x0 in -3.0f64..3.0, a in -3.0f64..3.0, b in -3.0f64..3.0) {
            prop_assume!(b.abs() > 0.1);
            use crate::scale::{limit_law, DiffusionSpec, LineTarget, QuadPolicy};
            let spec = DiffusionSpec::parse("0", "1").unwrap();
            let engine = limit_law(&spec, LineTarget::new(a, b).unwrap(), x0, &QuadPolicy::default())
                .unwrap();
            let closed = line_law(x0, a, b).unwrap();
            prop_assert!(near(engine.atom_weight().unwrap(), closed.atom_weight().unwrap(), 1e-6));
            prop_assert!(near(engine.rate().unwrap(), closed.rate().unwrap(), 1e-6));
        }
    }
}
