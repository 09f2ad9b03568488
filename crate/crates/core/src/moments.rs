//! Joint moments of `(V(b), V(c))` for `0 < b < c` by enumerating words
//! over `{B, C}`, the joint moment generating function summed shell by
//! shell, and the fourth moment of the increment `V(b+h) - V(b)`.
//!
//! A word with `p` letters `B` and `q` letters `C` is read backwards and cut
//! into alternating runs, the first run made of `B`s (possibly empty). With
//! run lengths `i(0), i(1), ...` and `b_j = b + j (c - b)`, the word weighs
//! `prod_j (1/b_j)^i(j)`, and `E V(b)^p V(c)^q = p! q! sum g(word)`.

use std::fmt;
use std::str::FromStr;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{FromPrimitive, Num, Zero};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Longest word the enumeration accepts.
pub const MAX_ORDER: u32 = 20;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MomentError {
    #[error("joint moments need 0 < b < c, got b = {b}, c = {c}")]
    NotCanonical { b: String, c: String },
    #[error("p + q = {0} exceeds the enumeration bound {MAX_ORDER}")]
    TooLong(u32),
    #[error("b_{j} = b + {j} (c - b) vanishes")]
    Singular { j: usize },
    #[error("series diverges: shells grew three times in a row up to total degree {shell}")]
    Divergent { shell: usize },
    #[error("series did not settle within {shells} shells")]
    NoConvergence { shells: usize },
    #[error("invalid word: {0}")]
    Word(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Letter {
    B,
    C,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PathType {
    word: Vec<Letter>,
}

/// Run lengths of the reversed word, starting with a `B` run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunProfile {
    pub runs: Vec<u32>,
}

impl RunProfile {
    /// `(p, q)` recovered from the even and odd runs.
    pub fn counts(&self) -> (u32, u32) {
        let p = self.runs.iter().step_by(2).sum();
        let q = self.runs.iter().skip(1).step_by(2).sum();
        (p, q)
    }
}

impl PathType {
    pub fn new(word: Vec<Letter>) -> Self {
        PathType { word }
    }

    pub fn letters(&self) -> &[Letter] {
        &self.word
    }

    pub fn p(&self) -> u32 {
        self.word.iter().filter(|l| **l == Letter::B).count() as u32
    }

    pub fn q(&self) -> u32 {
        self.word.len() as u32 - self.p()
    }

    pub fn run_profile(&self) -> RunProfile {
        let mut runs = vec![0u32];
        for &letter in self.word.iter().rev() {
            let current = if runs.len() % 2 == 1 { Letter::B } else { Letter::C };
            if letter != current {
                runs.push(0);
            }
            *runs.last_mut().unwrap() += 1;
        }
        RunProfile { runs }
    }

    /// All words with `p` letters `B` and `q` letters `C`, in a fixed order.
    pub fn all(p: u32, q: u32) -> impl Iterator<Item = PathType> {
        let n = p + q;
        (0u64..1 << n)
            .filter(move |mask| mask.count_ones() == q)
            .map(move |mask| {
                PathType::new(
                    (0..n)
                        .map(|i| if mask >> i & 1 == 1 { Letter::C } else { Letter::B })
                        .collect(),
                )
            })
    }
}

impl fmt::Display for PathType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for l in &self.word {
            f.write_str(match l {
                Letter::B => "B",
                Letter::C => "C",
            })?;
        }
        Ok(())
    }
}

impl FromStr for PathType {
    type Err = MomentError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        s.chars()
            .filter(|c| !c.is_whitespace() && *c != ',')
            .map(|c| match c.to_ascii_uppercase() {
                'B' => Ok(Letter::B),
                'C' => Ok(Letter::C),
                other => Err(MomentError::Word(format!("unexpected letter {other:?}"))),
            })
            .collect::<Result<Vec<_>, _>>()
            .map(PathType::new)
    }
}

/// `1/b_j` for `j = 0..=n`.
fn inverse_rates<T>(b: &T, c: &T, n: usize) -> Result<Vec<T>, MomentError>
where
    T: Num + Clone + FromPrimitive,
{
    let step = c.clone() - b.clone();
    (0..=n)
        .map(|j| {
            let bj = b.clone() + T::from_usize(j).unwrap() * step.clone();
            if bj.is_zero() {
                Err(MomentError::Singular { j })
            } else {
                Ok(T::one() / bj)
            }
        })
        .collect()
}

fn weight_with<T>(word: &[Letter], inv: &[T]) -> T
where
    T: Num + Clone,
{
    let mut j = 0;
    let mut g = T::one();
    for &letter in word.iter().rev() {
        let current = if j % 2 == 0 { Letter::B } else { Letter::C };
        if letter != current {
            j += 1;
        }
        g = g * inv[j].clone();
    }
    g
}

/// `g(path)` in any field: `f64` or exact rationals.
pub fn path_weight_in<T>(path: &PathType, b: &T, c: &T) -> Result<T, MomentError>
where
    T: Num + Clone + FromPrimitive,
{
    let inv = inverse_rates(b, c, path.word.len())?;
    Ok(weight_with(&path.word, &inv))
}

pub fn path_weight(path: &PathType, b: f64, c: f64) -> Result<f64, MomentError> {
    path_weight_in(path, &b, &c)
}

fn factorial<T: Num + FromPrimitive>(n: u32) -> T {
    (1..=n).fold(T::one(), |acc, k| acc * T::from_u32(k).unwrap())
}

/// `E V(b)^p V(c)^q` for `0 < b < c`, summed in enumeration order.
pub fn joint_moment_in<T>(b: &T, c: &T, p: u32, q: u32) -> Result<T, MomentError>
where
    T: Num + Clone + FromPrimitive + PartialOrd + fmt::Display,
{
    if !(T::zero() < *b && *b < *c) {
        return Err(MomentError::NotCanonical {
            b: b.to_string(),
            c: c.to_string(),
        });
    }
    if p + q > MAX_ORDER {
        return Err(MomentError::TooLong(p + q));
    }
    let inv = inverse_rates(b, c, (p + q) as usize)?;
    let sum = PathType::all(p, q).fold(T::zero(), |acc, w| acc + weight_with(&w.word, &inv));
    Ok(factorial::<T>(p) * factorial::<T>(q) * sum)
}

pub fn joint_moment(b: f64, c: f64, p: u32, q: u32) -> Result<f64, MomentError> {
    joint_moment_in(&b, &c, p, q)
}

/// Exact rational joint moment.
pub fn joint_moment_exact(
    b: &BigRational,
    c: &BigRational,
    p: u32,
    q: u32,
) -> Result<BigRational, MomentError> {
    joint_moment_in(b, c, p, q)
}

/// `n/d` as an exact rational.
pub fn ratio(n: i64, d: i64) -> BigRational {
    BigRational::new(BigInt::from(n), BigInt::from(d))
}

/// `m_b(h) = E (V(b+h) - V(b))^4` by binomial expansion.
pub fn fourth_moment_difference_in<T>(b: &T, h: &T) -> Result<T, MomentError>
where
    T: Num + Clone + FromPrimitive + PartialOrd + fmt::Display,
{
    let c = b.clone() + h.clone();
    let binom = [1u32, 4, 6, 4, 1];
    let mut total = T::zero();
    for k in 0..=4u32 {
        // C(4,k) V(c)^k (-V(b))^(4-k)
        let term = T::from_u32(binom[k as usize]).unwrap() * joint_moment_in(b, &c, 4 - k, k)?;
        if (4 - k) % 2 == 0 {
            total = total + term;
        } else {
            total = total - term;
        }
    }
    Ok(total)
}

pub fn fourth_moment_difference(b: f64, h: f64) -> Result<f64, MomentError> {
    if h == 0.0 && b > 0.0 {
        return Ok(0.0);
    }
    fourth_moment_difference_in(&b, &h)
}

pub fn fourth_moment_difference_exact(
    b: &BigRational,
    h: &BigRational,
) -> Result<BigRational, MomentError> {
    if h.is_zero() && *b > BigRational::zero() {
        return Ok(BigRational::zero());
    }
    fourth_moment_difference_in(b, h)
}

/// Sum of `s^p t^q g(word)` over all words of each total degree `n`
/// (a "shell"), for `n = 0..shells`.
///
/// Dynamic programme over the index `j` of the run the next letter of the
/// reversed word would extend: `B` continues an even run, `C` an odd one.
pub fn shell_sums(b: f64, c: f64, s: f64, t: f64, shells: usize) -> Result<Vec<f64>, MomentError> {
    let mut out = Vec::with_capacity(shells);
    let mut state = vec![1.0f64];
    let inv = inverse_rates(&b, &c, shells)?;
    for n in 0..shells {
        out.push(state.iter().sum());
        if n + 1 == shells {
            break;
        }
        state = advance(&state, &inv, s, t);
    }
    Ok(out)
}

fn advance(state: &[f64], inv: &[f64], s: f64, t: f64) -> Vec<f64> {
    let mut next = vec![0.0; state.len() + 1];
    for (j, &w) in state.iter().enumerate() {
        if w == 0.0 {
            continue;
        }
        let (same, other) = if j % 2 == 0 { (s, t) } else { (t, s) };
        next[j] += w * same * inv[j];
        next[j + 1] += w * other * inv[j + 1];
    }
    next
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MgfValue {
    pub value: f64,
    pub shells: usize,
}

/// Hard cap on the number of shells [`mgf`] will sum.
pub const MAX_SHELLS: usize = 20_000;

/// `E exp(s V(b) + t V(c))` as the shell-summed series. Stops once three
/// consecutive shells are each below `tol` in absolute value.
pub fn mgf(b: f64, c: f64, s: f64, t: f64, tol: f64) -> Result<MgfValue, MomentError> {
    if !(0.0 < b && b < c) {
        return Err(MomentError::NotCanonical {
            b: b.to_string(),
            c: c.to_string(),
        });
    }
    let mut inv = inverse_rates(&b, &c, 64)?;
    let mut state = vec![1.0f64];
    let mut value = 0.0;
    let mut small = 0;
    let mut growing = 0;
    let mut prev = f64::INFINITY;
    for n in 0..MAX_SHELLS {
        let shell: f64 = state.iter().sum();
        value += shell;
        if !value.is_finite() {
            return Err(MomentError::Divergent { shell: n });
        }
        let size = shell.abs();
        if size < tol {
            small += 1;
            if small >= 3 {
                return Ok(MgfValue { value, shells: n + 1 });
            }
        } else {
            small = 0;
        }
        if size > prev {
            growing += 1;
            if growing >= 3 {
                return Err(MomentError::Divergent { shell: n });
            }
        } else {
            growing = 0;
        }
        prev = size;
        if inv.len() < state.len() + 2 {
            inv = inverse_rates(&b, &c, 2 * inv.len())?;
        }
        state = advance(&state, &inv, s, t);
    }
    Err(MomentError::NoConvergence { shells: MAX_SHELLS })
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_traits::ToPrimitive;
    use proptest::prelude::*;

    fn word(s: &str) -> PathType {
        s.parse().unwrap()
    }

    #[test]
    fn run_profiles_of_small_words() {
        assert_eq!(word("BC").run_profile().runs, vec![0, 1, 1]);
        assert_eq!(word("CB").run_profile().runs, vec![1, 1]);
        assert_eq!(word("BBB").run_profile().runs, vec![3]);
        assert_eq!(word("CCBCB").run_profile().counts(), (2, 3));
        assert_eq!(word("").run_profile().runs, vec![0]);
    }

    #[test]
    fn path_weight_examples() {
        assert!((path_weight(&word("BC"), 1.0, 2.0).unwrap() - 1.0 / 6.0).abs() < 1e-15);
        assert!((path_weight(&word("CB"), 1.0, 2.0).unwrap() - 0.5).abs() < 1e-15);
        assert!((path_weight(&word("BBBB"), 1.5, 2.0).unwrap() - 1.5f64.powi(-4)).abs() < 1e-15);
        // b_2 = 2 + 2 (1 - 2) = 0
        assert_eq!(
            path_weight(&word("BC"), 2.0, 1.0),
            Err(MomentError::Singular { j: 2 })
        );
    }

    #[test]
    fn worked_example_is_seventeen_tenths_exactly() {
        let m = joint_moment_exact(&ratio(1, 1), &ratio(2, 1), 2, 2).unwrap();
        assert_eq!(m, ratio(17, 10));
        assert!((joint_moment(1.0, 2.0, 2, 2).unwrap() - 1.7).abs() < 1e-14);
    }

    #[test]
    fn joint_moment_examples() {
        assert!((joint_moment(1.0, 2.0, 1, 1).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert!((joint_moment(1.0, 2.0, 3, 0).unwrap() - 6.0).abs() < 1e-14);
        assert!(matches!(joint_moment(2.0, 1.0, 1, 1), Err(MomentError::NotCanonical { .. })));
        assert!(matches!(joint_moment(1.0, 2.0, 11, 10), Err(MomentError::TooLong(21))));
    }

    #[test]
    fn fourth_moment_difference_basics() {
        assert_eq!(fourth_moment_difference(1.0, 0.0).unwrap(), 0.0);
        for &(b, h) in &[(1.0, 0.5), (0.5, 2.0), (2.0, 0.01), (1.0, 1e-3)] {
            assert!(fourth_moment_difference(b, h).unwrap() >= 0.0, "({b}, {h})");
        }
    }

    #[test]
    fn fourth_moment_difference_leading_constant() {
        // exact rationals remove the cancellation; m_1(h)/h^2 tends to 384
        let at = |d: i64| {
            let h = ratio(1, d);
            let m = fourth_moment_difference_exact(&ratio(1, 1), &h).unwrap();
            let scaled = m / (h.clone() * h);
            scaled.to_f64().unwrap()
        };
        let (r1, r2) = (at(1000), at(2000));
        let extrapolated = 2.0 * r2 - r1;
        assert!((extrapolated - 384.0).abs() < 0.05, "{r1} {r2} {extrapolated}");
    }

    #[test]
    fn shells_match_enumeration() {
        let (b, c, s, t) = (0.7, 1.9, 0.3, -0.4);
        let shells = shell_sums(b, c, s, t, 9).unwrap();
        for (n, shell) in shells.iter().enumerate() {
            let mut direct = 0.0;
            for p in 0..=n as u32 {
                let q = n as u32 - p;
                let sum: f64 = PathType::all(p, q)
                    .map(|w| path_weight(&w, b, c).unwrap())
                    .sum();
                direct += s.powi(p as i32) * t.powi(q as i32) * sum;
            }
            assert!((shell - direct).abs() < 1e-14, "shell {n}");
        }
    }

    #[test]
    fn mgf_examples() {
        assert_eq!(mgf(1.0, 2.0, 0.0, 0.0, 1e-14).unwrap().value, 1.0);
        let m = mgf(1.0, 2.0, 0.3, 0.0, 1e-15).unwrap();
        assert!((m.value - 1.0 / 0.7).abs() < 1e-12);
        let m = mgf(1.0, 2.0, 0.0, 0.5, 1e-15).unwrap();
        assert!((m.value - 1.0 / (1.0 - 0.25)).abs() < 1e-12);
        assert!(matches!(mgf(1.0, 2.0, 1.5, 0.0, 1e-12), Err(MomentError::Divergent { .. })));
    }

    #[test]
    fn mgf_mixed_difference_recovers_cross_moment() {
        let h = 1e-4;
        let m = |s, t| mgf(1.0, 2.0, s, t, 1e-17).unwrap().value;
        let d = (m(h, h) - m(h, -h) - m(-h, h) + m(-h, -h)) / (4.0 * h * h);
        assert!((d - joint_moment(1.0, 2.0, 1, 1).unwrap()).abs() < 1e-6, "{d}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn marginals_are_exponential_moments(b in 0.1f64..3.0, gap in 0.05f64..3.0, p in 0u32..10) {
            let c = b + gap;
            let fact: f64 = (1..=p).map(f64::from).product();
            let mb = joint_moment(b, c, p, 0).unwrap();
            let mc = joint_moment(b, c, 0, p).unwrap();
            prop_assert!((mb - fact / b.powi(p as i32)).abs() <= 1e-12 * mb.abs().max(1.0));
            prop_assert!((mc - fact / c.powi(p as i32)).abs() <= 1e-12 * mc.abs().max(1.0));
        }

        #[test]
        fn cross_moment_minus_product_is_covariance(b in 0.1f64..3.0, gap in 0.05f64..3.0) {
            let c = b + gap;
            let cov = joint_moment(b, c, 1, 1).unwrap() - 1.0 / (b * c);
            prop_assert!((cov - crate::brownian::cov_pair(b, c).unwrap()).abs() < 1e-12);
        }

        #[test]
        fn profile_counts_match_letters(bits in proptest::collection::vec(any::<bool>(), 0..16)) {
            let w = PathType::new(bits.iter().map(|&x| if x { Letter::C } else { Letter::B }).collect());
            prop_assert_eq!(w.run_profile().counts(), (w.p(), w.q()));
            prop_assert_eq!(w.to_string().parse::<PathType>().unwrap(), w);
        }

        #[test]
        fn float_and_exact_modes_agree(bn in 1i64..20, gap in 1i64..20, p in 0u32..5, q in 0u32..5) {
            let (b, c) = (ratio(bn, 7), ratio(bn + gap, 7));
            let exact = joint_moment_exact(&b, &c, p, q).unwrap();
            let float = joint_moment(bn as f64 / 7.0, (bn + gap) as f64 / 7.0, p, q).unwrap();
            let e = exact.to_f64().unwrap();
            prop_assert!((e - float).abs() <= 1e-12 * e.abs());
        }
    }
}
