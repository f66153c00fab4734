//! Numeric backends for probability arithmetic.
//!
//! The whole model is generic over [`Prob`]: `f64` is the default engine,
//! `BigRational` is the exact mode used when a check must hold with zero
//! tolerance. Rational mode never takes logarithms; everything downstream is
//! phrased in likelihood ratios, so `e^epsilon` enters as a plain scalar.

use std::fmt;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{NumAssignRef, NumRef, One, Signed, ToPrimitive, Zero};

use crate::error::{Error, Result};

/// Scalar probability type: `f64` for speed, `BigRational` for exactness.
pub trait Prob:
    NumRef + NumAssignRef + Clone + PartialOrd + fmt::Debug + fmt::Display + Send + Sync + 'static
{
    /// True when arithmetic is exact and comparisons need no tolerance.
    const EXACT: bool;

    /// Embeds a finite `f64` exactly (every finite float is a binary rational).
    fn from_f64(x: f64) -> Self;

    /// Nearest-`f64` rendering, for reports and tolerance checks.
    fn to_f64(&self) -> f64;

    /// Binomial point mass `C(trials, successes) p^successes (1-p)^rest`.
    fn binom_pmf(successes: u64, trials: u64, p: &Self) -> Self;
}

impl Prob for f64 {
    const EXACT: bool = false;

    fn from_f64(x: f64) -> Self {
        x
    }

    fn to_f64(&self) -> f64 {
        *self
    }

    fn binom_pmf(successes: u64, trials: u64, p: &Self) -> Self {
        binom_pmf_f64(successes, trials, *p)
    }
}

impl Prob for BigRational {
    const EXACT: bool = true;

    fn from_f64(x: f64) -> Self {
        BigRational::from_float(x).expect("finite float required for exact mode")
    }

    fn to_f64(&self) -> f64 {
        big_rational_to_f64(self)
    }

    fn binom_pmf(successes: u64, trials: u64, p: &Self) -> Self {
        assert!(successes <= trials, "successes out of range");
        let mut coeff = BigInt::one();
        let m = successes.min(trials - successes);
        for j in 0..m {
            coeff = coeff * BigInt::from(trials - j) / BigInt::from(j + 1);
        }
        let q = BigRational::one() - p;
        BigRational::from_integer(coeff)
            * num_traits::pow(p.clone(), successes as usize)
            * num_traits::pow(q, (trials - successes) as usize)
    }
}

/// `f64` rendering of a big rational that stays finite-aware even when the
/// numerator and denominator are individually far outside the `f64` range.
pub fn big_rational_to_f64(r: &BigRational) -> f64 {
    if r.is_zero() {
        return 0.0;
    }
    let num = r.numer().abs();
    let den = r.denom().abs();
    let nb = num.bits() as i64;
    let db = den.bits() as i64;
    // Keep the top ~64 bits of each side and track the dropped power of two.
    let ns = (nb - 64).max(0);
    let ds = (db - 64).max(0);
    let nt = (num >> ns as u64).to_f64().unwrap_or(f64::INFINITY);
    let dt = (den >> ds as u64).to_f64().unwrap_or(f64::INFINITY);
    let v = ldexp(nt / dt, ns - ds);
    if r.is_negative() {
        -v
    } else {
        v
    }
}

fn ldexp(x: f64, e: i64) -> f64 {
    let mut v = x;
    let mut e = e;
    while e > 900 {
        v *= 2f64.powi(900);
        e -= 900;
        if v.is_infinite() {
            return v;
        }
    }
    while e < -900 {
        v *= 2f64.powi(-900);
        e += 900;
        if v == 0.0 {
            return v;
        }
    }
    v * 2f64.powi(e as i32)
}

/// Compensated (Neumaier) summation; the fast evaluator accumulates
/// `p^100`-scale terms where plain summation loses the small ones.
#[derive(Clone, Copy, Debug, Default)]
pub struct KahanSum {
    sum: f64,
    compensation: f64,
}

impl KahanSum {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.compensation += (self.sum - t) + x;
        } else {
            self.compensation += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.compensation
    }
}

/// The privacy parameter, carried as `e^epsilon` so that exact mode never
/// needs a logarithm. `Infinite` turns the tight-delta formulas into the pure
/// infinite-loss mass, which is what unattainability checks need.
#[derive(Clone, Debug)]
pub enum Epsilon<P: Prob> {
    Finite { epsilon: f64, exp_eps: P },
    Infinite,
}

impl<P: Prob> Epsilon<P> {
    /// Builds from a nonnegative `epsilon`, embedding `e^epsilon` in `P`.
    pub fn from_f64(epsilon: f64) -> Result<Self> {
        if !epsilon.is_finite() || epsilon < 0.0 {
            return Err(Error::InvalidParameter(format!(
                "epsilon must be finite and nonnegative, got {epsilon}"
            )));
        }
        Ok(Epsilon::Finite {
            epsilon,
            exp_eps: P::from_f64(epsilon.exp()),
        })
    }

    /// Builds from an exact `e^epsilon >= 1` (rational mode entry point).
    pub fn from_exp_eps(exp_eps: P) -> Result<Self> {
        if exp_eps < P::one() {
            return Err(Error::InvalidParameter(
                "exp(epsilon) must be at least 1".to_string(),
            ));
        }
        let epsilon = exp_eps.to_f64().ln();
        Ok(Epsilon::Finite { epsilon, exp_eps })
    }

    pub fn infinite() -> Self {
        Epsilon::Infinite
    }

    /// The `epsilon` value itself, for reporting.
    pub fn value(&self) -> f64 {
        match self {
            Epsilon::Finite { epsilon, .. } => *epsilon,
            Epsilon::Infinite => f64::INFINITY,
        }
    }
}

/// Binomial pmf in log space, after Loader's saddle-point method. Direct
/// products underflow long before n = 1000 at p = 1e-6.
pub fn binom_pmf_f64(successes: u64, trials: u64, p: f64) -> f64 {
    assert!((0.0..=1.0).contains(&p), "p must lie in [0,1]");
    assert!(successes <= trials, "successes out of range");
    let (m, n) = (successes, trials);
    if p == 0.0 {
        return if m == 0 { 1.0 } else { 0.0 };
    }
    if p == 1.0 {
        return if m == n { 1.0 } else { 0.0 };
    }
    if n == 0 {
        return 1.0;
    }
    if m == 0 {
        return (n as f64 * (-p).ln_1p()).exp();
    }
    if m == n {
        return (n as f64 * p.ln()).exp();
    }
    let (nf, mf, rf) = (n as f64, m as f64, (n - m) as f64);
    let lc = stirlerr(n) - stirlerr(m) - stirlerr(n - m) - bd0(mf, nf * p) - bd0(rf, nf * (1.0 - p));
    const LN_2PI: f64 = 1.837_877_066_409_345_6;
    let lf = LN_2PI + mf.ln() + (-mf / nf).ln_1p();
    (lc - 0.5 * lf).exp()
}

/// `ln(k!) - ln(Stirling approximation of k!)`.
fn stirlerr(k: u64) -> f64 {
    const S0: f64 = 1.0 / 12.0;
    const S1: f64 = 1.0 / 360.0;
    const S2: f64 = 1.0 / 1260.0;
    const S3: f64 = 1.0 / 1680.0;
    const S4: f64 = 1.0 / 1188.0;
    const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_7;
    if k <= 15 {
        // 15! still fits f64 exactly.
        let mut fact = 1.0;
        for j in 2..=k {
            fact *= j as f64;
        }
        let kf = k as f64;
        return fact.ln() - (kf + 0.5) * kf.ln() + kf - LN_SQRT_2PI;
    }
    let kf = k as f64;
    let nn = kf * kf;
    if k > 500 {
        (S0 - S1 / nn) / kf
    } else if k > 80 {
        (S0 - (S1 - S2 / nn) / nn) / kf
    } else if k > 35 {
        (S0 - (S1 - (S2 - S3 / nn) / nn) / nn) / kf
    } else {
        (S0 - (S1 - (S2 - (S3 - S4 / nn) / nn) / nn) / nn) / kf
    }
}

/// Stable evaluation of `x ln(x/np) + np - x`.
fn bd0(x: f64, np: f64) -> f64 {
    if (x - np).abs() < 0.1 * (x + np) {
        let v = (x - np) / (x + np);
        let mut s = (x - np) * v;
        let mut ej = 2.0 * x * v;
        let v2 = v * v;
        let mut j = 1.0;
        loop {
            ej *= v2;
            let s1 = s + ej / (2.0 * j + 1.0);
            if s1 == s {
                return s1;
            }
            s = s1;
            j += 1.0;
        }
    } else {
        x * (x / np).ln() + np - x
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_rational::BigRational;

    fn rat(n: i64, d: i64) -> BigRational {
        BigRational::new(BigInt::from(n), BigInt::from(d))
    }

    #[test]
    fn binom_pmf_trivial_cases() {
        assert_eq!(binom_pmf_f64(1, 2, 0.5), 0.5);
        assert_eq!(binom_pmf_f64(3, 3, 1.0), 1.0);
        assert_eq!(binom_pmf_f64(0, 5, 0.0), 1.0);
        assert_eq!(binom_pmf_f64(2, 5, 0.0), 0.0);
    }

    #[test]
    fn binom_pmf_log_space_tail() {
        // exp(900 ln(1 - 1e-6)), checked against the exact rational value.
        let got = binom_pmf_f64(0, 900, 1e-6);
        let p = BigRational::from_float(1e-6).unwrap();
        let exact = <BigRational as Prob>::binom_pmf(0, 900, &p);
        let exact_f = exact.to_f64();
        assert!((got - exact_f).abs() / exact_f < 1e-13, "{got} vs {exact_f}");
        assert!((got - 0.9991004048).abs() < 1e-9);
    }

    #[test]
    fn binom_pmf_matches_exact_rationals() {
        for &(n, p) in &[(10u64, 0.3), (100, 0.01), (1000, 1e-6), (53, 0.5)] {
            let pr = BigRational::from_float(p).unwrap();
            for m in 0..=n.min(40) {
                let fast = binom_pmf_f64(m, n, p);
                let exact = <BigRational as Prob>::binom_pmf(m, n, &pr).to_f64();
                if exact == 0.0 {
                    assert_eq!(fast, 0.0);
                } else {
                    assert!(
                        ((fast - exact) / exact).abs() < 1e-12,
                        "m={m} n={n} p={p}: {fast} vs {exact}"
                    );
                }
            }
        }
    }

    #[test]
    fn binom_pmf_sums_to_one() {
        for &(n, p) in &[(100u64, 0.37), (2000, 0.001), (10_000, 0.5)] {
            let mut total = KahanSum::new();
            for m in 0..=n {
                total.add(binom_pmf_f64(m, n, p));
            }
            assert!(
                (total.value() - 1.0).abs() < 1e-12,
                "n={n} p={p}: sum {}",
                total.value()
            );
        }
    }

    #[test]
    fn big_rational_to_f64_handles_extreme_magnitudes() {
        let tiny = num_traits::pow(rat(1, 10), 450);
        assert_eq!(tiny.to_f64(), 0.0);
        let third = rat(1, 3);
        assert!((third.to_f64() - 1.0 / 3.0).abs() < 1e-15);
        let big = num_traits::pow(rat(10, 1), 300);
        assert!((big.to_f64() - 1e300).abs() / 1e300 < 1e-10);
    }

    #[test]
    fn epsilon_from_exp_requires_at_least_one() {
        assert!(Epsilon::<f64>::from_exp_eps(0.5).is_err());
        assert!(Epsilon::<f64>::from_f64(-1.0).is_err());
        let eps = Epsilon::<f64>::from_f64(1.0).unwrap();
        assert!((eps.value() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn kahan_recovers_small_terms() {
        let mut s = KahanSum::new();
        s.add(1.0);
        for _ in 0..1000 {
            s.add(1e-18);
        }
        assert!((s.value() - (1.0 + 1e-15)).abs() < 1e-18);
    }
}
