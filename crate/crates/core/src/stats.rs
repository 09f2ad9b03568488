//! Comparing simulated batches with their limit laws.

use serde::{Deserialize, Serialize};

use crate::brownian::Phi;
use crate::law::OccupancyLaw;
use crate::montecarlo::{SampleBatch, SimConfig};

pub const DEFAULT_SE_MULTIPLIER: f64 = 4.0;
pub const KS_ALPHA: f64 = 0.01;
/// Largest sample size given an exact one-sample KS p-value.
pub const EXACT_KS_MAX_N: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub se: f64,
}

/// Mean of `x^p` and its standard error.
fn raw_moment(xs: &[f64], p: i32) -> Estimate {
    let pw: Vec<f64> = xs.iter().map(|x| x.powi(p)).collect();
    let (mean, sd) = mean_sd(&pw);
    Estimate {
        value: mean,
        se: sd / (xs.len() as f64).sqrt(),
    }
}

fn mean_sd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Sample standard deviation with a delta-method standard error.
fn sd_estimate(xs: &[f64]) -> Estimate {
    let n = xs.len() as f64;
    let (mean, sd) = mean_sd(xs);
    let m4 = xs.iter().map(|x| (x - mean).powi(4)).sum::<f64>() / n;
    let s2 = sd * sd;
    let se = if s2 > 0.0 {
        ((m4 - s2 * s2).max(0.0) / (4.0 * s2 * n)).sqrt()
    } else {
        0.0
    };
    Estimate { value: sd, se }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub observed: f64,
    pub expected: f64,
    pub se: f64,
    pub passed: bool,
}

impl Check {
    fn within(name: &str, est: Estimate, expected: f64, mult: f64) -> Check {
        Check {
            name: name.to_string(),
            observed: est.value,
            expected,
            se: est.se,
            passed: (est.value - expected).abs() < mult * est.se,
        }
    }

    fn vacuous(name: &str, expected: f64) -> Check {
        Check {
            name: name.to_string(),
            observed: f64::NAN,
            expected,
            se: f64::NAN,
            passed: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KsResult {
    pub n: usize,
    pub statistic: f64,
    pub p_value: f64,
    pub exact: bool,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub n: usize,
    pub se_multiplier: f64,
    pub law: Option<OccupancyLaw>,
    /// Raw moments 1 to 4.
    pub moments: Vec<Estimate>,
    pub atom_fraction: Estimate,
    pub checks: Vec<Check>,
    pub ks: Option<KsResult>,
    pub config: Option<SimConfig>,
    pub passed: bool,
}

impl FitReport {
    fn finish(mut self) -> Self {
        self.passed = !self.checks.is_empty() && self.checks.iter().all(|c| c.passed) && self.ks.map_or(true, |k| k.passed);
        self
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }
}

/// Kolmogorov distribution tail `P(K > lambda)`.
pub fn kolmogorov_tail(lambda: f64) -> f64 {
    if lambda < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=200 {
        let kf = k as f64;
        let term = (-2.0 * kf * kf * lambda * lambda).exp();
        sum += if k % 2 == 1 { term } else { -term };
        if term < 1e-18 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// `P(D_n < d)` for the one-sample KS statistic with a continuous null
/// (Marsaglia, Tsang and Wang).
pub fn ks_cdf_exact(n: usize, d: f64) -> f64 {
    if d <= 0.0 {
        return 0.0;
    }
    if d >= 1.0 {
        return 1.0;
    }
    let nf = n as f64;
    let s = d * d * nf;
    if s > 7.24 || (s > 3.76 && n > 99) {
        return 1.0 - 2.0 * (-(2.000071 + 0.331 / nf.sqrt() + 1.409 / nf) * s).exp();
    }
    let k = (nf * d) as usize + 1;
    let m = 2 * k - 1;
    let h = k as f64 - nf * d;
    let mut hm = vec![0.0; m * m];
    for i in 0..m {
        for j in 0..m {
            if i + 1 >= j {
                hm[i * m + j] = 1.0;
            }
        }
    }
    for i in 0..m {
        hm[i * m] -= h.powi(i as i32 + 1);
        hm[(m - 1) * m + i] -= h.powi((m - i) as i32);
    }
    if 2.0 * h - 1.0 > 0.0 {
        hm[(m - 1) * m] += (2.0 * h - 1.0).powi(m as i32);
    }
    for i in 0..m {
        for j in 0..m {
            if i + 1 > j {
                for g in 1..=(i + 1 - j) {
                    hm[i * m + j] /= g as f64;
                }
            }
        }
    }
    let (q, mut eq) = matrix_power(&hm, m, n);
    let mut s = q[(k - 1) * m + k - 1];
    for i in 1..=n {
        s = s * i as f64 / nf;
        if s < 1e-140 {
            s *= 1e140;
            eq -= 140;
        }
    }
    (s * 10f64.powi(eq)).clamp(0.0, 1.0)
}

fn matrix_mul(a: &[f64], b: &[f64], m: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * m];
    for i in 0..m {
        for l in 0..m {
            let x = a[i * m + l];
            if x == 0.0 {
                continue;
            }
            for j in 0..m {
                c[i * m + j] += x * b[l * m + j];
            }
        }
    }
    c
}

/// `A^n` as `(matrix, decimal exponent)`, rescaled to avoid overflow.
fn matrix_power(a: &[f64], m: usize, n: usize) -> (Vec<f64>, i32) {
    if n == 1 {
        return (a.to_vec(), 0);
    }
    let (half, e_half) = matrix_power(a, m, n / 2);
    let mut v = matrix_mul(&half, &half, m);
    let mut e = 2 * e_half;
    if n % 2 == 1 {
        v = matrix_mul(a, &v, m);
    }
    if v[(m / 2) * m + m / 2] > 1e140 {
        for x in v.iter_mut() {
            *x *= 1e-140;
        }
        e += 140;
    }
    (v, e)
}

/// `max |F_n - F|` for a continuous null CDF.
pub fn ks_statistic<F: Fn(f64) -> f64>(xs: &[f64], cdf: F) -> f64 {
    let mut sorted = xs.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    sorted
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (((i + 1) as f64 / n) - f).max(f - i as f64 / n)
        })
        .fold(0.0, f64::max)
}

/// One-sample KS test: exact p-value up to `EXACT_KS_MAX_N` points,
/// asymptotic beyond.
pub fn ks_test<F: Fn(f64) -> f64>(xs: &[f64], cdf: F, alpha: f64) -> KsResult {
    let n = xs.len();
    let d = ks_statistic(xs, cdf);
    let exact = n <= EXACT_KS_MAX_N;
    let p = if exact {
        1.0 - ks_cdf_exact(n, d)
    } else {
        let rn = (n as f64).sqrt();
        kolmogorov_tail((rn + 0.12 + 0.11 / rn) * d)
    };
    let p_value = p.clamp(0.0, 1.0);
    KsResult {
        n,
        statistic: d,
        p_value,
        exact,
        passed: p_value > alpha,
    }
}

/// Two-sample KS statistic and asymptotic p-value.
pub fn two_sample_ks_values(a: &[f64], b: &[f64]) -> (f64, f64) {
    assert!(!a.is_empty() && !b.is_empty(), "two-sample KS needs data on both sides");
    let mut x = a.to_vec();
    let mut y = b.to_vec();
    x.sort_by(f64::total_cmp);
    y.sort_by(f64::total_cmp);
    let (na, nb) = (x.len() as f64, y.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut d: f64 = 0.0;
    while i < x.len() && j < y.len() {
        let v = x[i].min(y[j]);
        while i < x.len() && x[i] == v {
            i += 1;
        }
        while j < y.len() && y[j] == v {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    let ne = na * nb / (na + nb);
    let rn = ne.sqrt();
    (d, kolmogorov_tail((rn + 0.12 + 0.11 / rn) * d))
}

pub fn two_sample_ks(a: &SampleBatch, b: &SampleBatch) -> f64 {
    two_sample_ks_values(&a.values, &b.values).1
}

/// Checks a sample against a mixture law: atom fraction, overall mean,
/// conditional mean and SD of the positive part, and a KS test of the
/// positive part against `Exp(rate)`.
pub fn fit_values(xs: &[f64], law: &OccupancyLaw, se_multiplier: f64) -> FitReport {
    let n = xs.len();
    let moments: Vec<Estimate> = (1..=4).map(|p| raw_moment(xs, p)).collect();
    let zeros = xs.iter().filter(|x| **x == 0.0).count() as f64 / n as f64;
    let mut report = FitReport {
        n,
        se_multiplier,
        law: Some(*law),
        moments,
        atom_fraction: Estimate { value: zeros, se: 0.0 },
        checks: Vec::new(),
        ks: None,
        config: None,
        passed: false,
    };
    let (Some(atom), Some(rate)) = (law.atom_weight(), law.rate()) else {
        // nothing finite to compare against
        report.checks.push(Check {
            name: "finite_law".into(),
            observed: f64::NAN,
            expected: f64::NAN,
            se: f64::NAN,
            passed: false,
        });
        return report.finish();
    };
    // with a degenerate target a single disagreeing sample must still fail
    let atom_se = (atom * (1.0 - atom) / n as f64).sqrt().max(1.0 / n as f64);
    report.atom_fraction.se = atom_se;
    report.checks.push(Check::within(
        "atom",
        Estimate { value: zeros, se: atom_se },
        atom,
        se_multiplier,
    ));
    if atom < 1.0 {
        report.checks.push(Check::within("mean", report.moments[0], law.mean(), se_multiplier));
    }

    let positive: Vec<f64> = xs.iter().copied().filter(|x| *x > 0.0).collect();
    if positive.len() >= 2 {
        let (m, sd) = mean_sd(&positive);
        let se = sd / (positive.len() as f64).sqrt();
        report
            .checks
            .push(Check::within("conditional_mean", Estimate { value: m, se }, 1.0 / rate, se_multiplier));
        report
            .checks
            .push(Check::within("conditional_sd", sd_estimate(&positive), 1.0 / rate, se_multiplier));
        report.ks = Some(ks_test(&positive, |x| 1.0 - (-rate * x).exp(), KS_ALPHA));
    } else if atom < 1.0 {
        report.checks.push(Check {
            name: "positive_part".into(),
            observed: positive.len() as f64,
            expected: (1.0 - atom) * n as f64,
            se: f64::NAN,
            passed: false,
        });
    } else {
        report.checks.push(Check::vacuous("conditional_mean", 1.0 / rate));
        report.checks.push(Check::vacuous("conditional_sd", 1.0 / rate));
    }
    report.finish()
}

pub fn fit_against(batch: &SampleBatch, law: &OccupancyLaw, se_multiplier: f64) -> FitReport {
    let mut r = fit_values(&batch.values, law, se_multiplier);
    r.config = Some(batch.config);
    r
}

/// Checks a sample against `|N(0, 1)|`: moments 1, 2 and 4, and KS
/// against `2 Phi(x) - 1`.
pub fn abs_normal_values(xs: &[f64], se_multiplier: f64) -> FitReport {
    let moments: Vec<Estimate> = (1..=4).map(|p| raw_moment(xs, p)).collect();
    let n = xs.len();
    let zeros = xs.iter().filter(|x| **x == 0.0).count() as f64 / n as f64;
    let expected = [(2.0 / std::f64::consts::PI).sqrt(), 1.0, 3.0];
    let checks = [(0, "moment_1"), (1, "moment_2"), (3, "moment_4")]
        .iter()
        .zip(expected)
        .map(|(&(i, name), e)| Check::within(name, moments[i], e, se_multiplier))
        .collect();
    FitReport {
        n,
        se_multiplier,
        law: None,
        atom_fraction: Estimate {
            value: zeros,
            se: (zeros * (1.0 - zeros) / n as f64).sqrt(),
        },
        moments,
        checks,
        ks: Some(ks_test(xs, |x| (2.0 * Phi(x) - 1.0).max(0.0), KS_ALPHA)),
        config: None,
        passed: false,
    }
    .finish()
}

pub fn abs_normal_check(batch: &SampleBatch, se_multiplier: f64) -> FitReport {
    let mut r = abs_normal_values(&batch.values, se_multiplier);
    r.config = Some(batch.config);
    r
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::replication_rng;
    use rand::Rng;
    use rand_distr::{Exp1, StandardNormal};

    fn exp_sample(seed: u64, n: usize, rate: f64) -> Vec<f64> {
        let mut rng = replication_rng(seed, 0);
        (0..n).map(|_| rng.sample::<f64, _>(Exp1) / rate).collect()
    }

    /// `P(u_i < U_(i) < v_i, i = 1..n)` by Steck's determinant.
    fn steck(u: &[f64], v: &[f64]) -> f64 {
        let n = u.len();
        let mut a = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in 0..n {
                if j + 1 >= i {
                    let p = (j + 1 - i) as i32;
                    let base = (v[i] - u[j]).max(0.0);
                    let fact: f64 = (1..=p).map(f64::from).product();
                    a[i][j] = if p == 0 { 1.0 } else { base.powi(p) / fact };
                }
            }
        }
        // Gaussian elimination with partial pivoting
        let mut det = 1.0;
        for c in 0..n {
            let piv = (c..n).max_by(|&x, &y| a[x][c].abs().total_cmp(&a[y][c].abs())).unwrap();
            if a[piv][c] == 0.0 {
                return 0.0;
            }
            if piv != c {
                a.swap(piv, c);
                det = -det;
            }
            det *= a[c][c];
            for r in c + 1..n {
                let f = a[r][c] / a[c][c];
                for k in c..n {
                    a[r][k] -= f * a[c][k];
                }
            }
        }
        let fact: f64 = (1..=n).map(|i| i as f64).product();
        fact * det
    }

    fn steck_ks_cdf(n: usize, d: f64) -> f64 {
        let nf = n as f64;
        let u: Vec<f64> = (1..=n).map(|i| (i as f64 / nf - d).max(0.0)).collect();
        let v: Vec<f64> = (1..=n).map(|i| ((i - 1) as f64 / nf + d).min(1.0)).collect();
        steck(&u, &v)
    }

    #[test]
    fn exact_ks_matches_steck() {
        for &n in &[1usize, 2, 5, 10, 20] {
            for &d in &[0.05, 0.1, 0.2, 0.27, 0.35, 0.5, 0.8] {
                let a = ks_cdf_exact(n, d);
                let b = steck_ks_cdf(n, d);
                assert!((a - b).abs() < 1e-8, "n={n} d={d}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn exact_ks_reproduces_tabled_critical_values() {
        // two-sided 5% points
        for &(n, crit) in &[(5usize, 0.56328), (10, 0.40925), (20, 0.29408)] {
            let p = 1.0 - ks_cdf_exact(n, crit);
            assert!((p - 0.05).abs() < 2e-4, "n={n}: {p}");
        }
    }

    #[test]
    fn exact_ks_matches_small_sample_brute_force() {
        // n = 1: D = max(U, 1 - U), so P(D < d) = 2d - 1 on [1/2, 1]
        for &d in &[0.55, 0.7, 0.9] {
            assert!((ks_cdf_exact(1, d) - (2.0 * d - 1.0)).abs() < 1e-14);
        }
        // n = 2 by integrating the order statistics on a fine grid
        let g = 2000;
        for &d in &[0.3, 0.5, 0.75] {
            let mut hits = 0usize;
            for i in 0..g {
                for j in 0..g {
                    let mut u = [(i as f64 + 0.5) / g as f64, (j as f64 + 0.5) / g as f64];
                    u.sort_by(f64::total_cmp);
                    let dn = (0.5 - u[0]).max(u[0]).max(1.0 - u[1]).max(u[1] - 0.5);
                    if dn < d {
                        hits += 1;
                    }
                }
            }
            let brute = hits as f64 / (g * g) as f64;
            assert!((ks_cdf_exact(2, d) - brute).abs() < 2e-3, "d={d}");
        }
    }

    #[test]
    fn exact_and_asymptotic_agree_for_large_n() {
        let n = 5000;
        for &lam in &[0.6, 1.0, 1.5] {
            let d = lam / (n as f64).sqrt();
            let exact = 1.0 - ks_cdf_exact(n, d);
            let rn = (n as f64).sqrt();
            let asym = kolmogorov_tail((rn + 0.12 + 0.11 / rn) * d);
            assert!((exact - asym).abs() < 2e-3, "{lam}: {exact} {asym}");
        }
    }

    /// Exact two-sample p-value by enumerating every split of the pooled data.
    fn permutation_p(a: &[f64], b: &[f64]) -> f64 {
        let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
        let n = pooled.len();
        let d0 = two_sample_ks_values(a, b).0;
        let (mut hits, mut total) = (0usize, 0usize);
        for mask in 0u32..(1 << n) {
            if mask.count_ones() as usize != a.len() {
                continue;
            }
            let (x, y): (Vec<f64>, Vec<f64>) = {
                let mut x = vec![];
                let mut y = vec![];
                for (i, v) in pooled.iter().enumerate() {
                    if mask >> i & 1 == 1 {
                        x.push(*v)
                    } else {
                        y.push(*v)
                    }
                }
                (x, y)
            };
            total += 1;
            if two_sample_ks_values(&x, &y).0 >= d0 - 1e-12 {
                hits += 1;
            }
        }
        hits as f64 / total as f64
    }

    #[test]
    fn two_sample_against_permutation() {
        let a = exp_sample(1, 8, 1.0);
        let b = exp_sample(2, 8, 1.5);
        let exact = permutation_p(&a, &b);
        let (_, asym) = two_sample_ks_values(&a, &b);
        assert!((exact - asym).abs() < 0.1, "{exact} {asym}");
    }

    #[test]
    fn two_sample_examples() {
        let a = exp_sample(3, 5000, 1.0);
        let (d, p) = two_sample_ks_values(&a, &a);
        assert_eq!(d, 0.0);
        assert!(p > 0.99);
        let far: Vec<f64> = a.iter().map(|x| x + 100.0).collect();
        let (d, p) = two_sample_ks_values(&a, &far);
        assert_eq!(d, 1.0);
        assert!(p < 1e-12);
        let b = exp_sample(4, 5000, 1.0);
        assert!(two_sample_ks_values(&a, &b).1 > 0.01);
    }

    #[test]
    fn exponential_fit_passes_and_mismatch_fails() {
        let law = OccupancyLaw::exponential(1.0).unwrap();
        let good = fit_values(&exp_sample(5, 2000, 1.0), &law, 4.0);
        assert!(good.passed, "{good:?}");
        let bad = fit_values(&exp_sample(6, 2000, 2.0), &law, 4.0);
        assert!(!bad.ks.unwrap().passed);
        assert!(!bad.passed);
    }

    #[test]
    fn mixture_fit_with_atom() {
        let law = OccupancyLaw::mixture(0.3, 2.0).unwrap();
        let mut rng = replication_rng(7, 0);
        let xs: Vec<f64> = (0..3000)
            .map(|_| {
                if rng.random::<f64>() < 0.3 {
                    0.0
                } else {
                    rng.sample::<f64, _>(Exp1) / 2.0
                }
            })
            .collect();
        let r = fit_values(&xs, &law, 4.0);
        assert!(r.passed, "{r:?}");
        let wrong = fit_values(&xs, &OccupancyLaw::mixture(0.5, 2.0).unwrap(), 4.0);
        assert!(!wrong.check("atom").unwrap().passed);
    }

    #[test]
    fn all_zero_batch_against_pure_atom() {
        let law = OccupancyLaw::mixture(1.0, 3.0).unwrap();
        let r = fit_values(&[0.0; 50], &law, 4.0);
        assert!(r.passed);
        let r = fit_values(&[0.0; 50], &OccupancyLaw::mixture(0.5, 3.0).unwrap(), 4.0);
        assert!(!r.passed);
    }

    #[test]
    fn infinite_law_has_no_fit() {
        assert!(!fit_values(&[1.0, 2.0], &OccupancyLaw::AlmostSurelyInfinite, 4.0).passed);
    }

    #[test]
    fn abs_normal_examples() {
        let mut rng = replication_rng(8, 0);
        let xs: Vec<f64> = (0..5000).map(|_| rng.sample::<f64, _>(StandardNormal).abs()).collect();
        let r = abs_normal_values(&xs, 4.0);
        assert!(r.passed, "{r:?}");
        assert!((r.moments[1].value - 1.0).abs() < 4.0 * r.moments[1].se);
        assert!(!abs_normal_values(&[0.8; 100], 4.0).passed);
    }

    #[test]
    fn fit_is_deterministic_and_p_values_are_probabilities() {
        let xs = exp_sample(9, 700, 1.3);
        let law = OccupancyLaw::exponential(1.0).unwrap();
        let a = fit_values(&xs, &law, 4.0);
        assert_eq!(a, fit_values(&xs, &law, 4.0));
        let p = a.ks.unwrap().p_value;
        assert!((0.0..=1.0).contains(&p));
        assert!(a.moments.iter().all(|m| m.se > 0.0));
    }
}
