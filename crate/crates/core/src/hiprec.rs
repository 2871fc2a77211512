//! Fixed-point arithmetic at 220 decimal digits, sized so that 200-digit
//! reported values keep at least 150 correct digits through the certifier
//! pipelines (a handful of multiplications, one square root, one cosine).
//!
//! Only the operations the certifiers need live here: pi, cosine of a
//! rational fraction of a turn, square roots of rationals, and best rational
//! approximation by continued-fraction convergents.

use std::cmp::Ordering;
use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};
use std::sync::OnceLock;

use num_bigint::BigInt;
use num_integer::Integer;
use num_traits::{Signed, ToPrimitive, Zero};

use crate::exactmath::Rational;

/// Working precision in decimal digits.
pub const SCALE_DIGITS: u32 = 220;

/// Digits reported by [`BigFixed::to_decimal_string`] by default.
pub const REPORT_DIGITS: usize = 200;

fn scale_factor() -> &'static BigInt {
    static SCALE: OnceLock<BigInt> = OnceLock::new();
    SCALE.get_or_init(|| BigInt::from(10u32).pow(SCALE_DIGITS))
}

/// A real number represented as `mantissa / 10^220`.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct BigFixed {
    mantissa: BigInt,
}

impl BigFixed {
    pub fn zero() -> Self {
        Self {
            mantissa: BigInt::zero(),
        }
    }

    pub fn one() -> Self {
        Self {
            mantissa: scale_factor().clone(),
        }
    }

    pub fn from_int(n: i64) -> Self {
        Self {
            mantissa: BigInt::from(n) * scale_factor(),
        }
    }

    pub fn from_rational(r: &Rational) -> Self {
        Self {
            mantissa: div_round(&(r.numer() * scale_factor()), r.denom()),
        }
    }

    pub fn abs(&self) -> Self {
        Self {
            mantissa: self.mantissa.abs(),
        }
    }

    pub fn is_zero(&self) -> bool {
        self.mantissa.is_zero()
    }

    pub fn to_f64(&self) -> f64 {
        // Split into integer and fractional parts to stay inside f64 range.
        let (int, frac) = self.mantissa.div_rem(scale_factor());
        let frac = frac.to_f64().unwrap_or(0.0) / 1e220;
        int.to_f64().unwrap_or(f64::NAN) + frac
    }

    /// The value as an exact rational `mantissa / 10^220`.
    pub fn to_rational(&self) -> Rational {
        Rational::new(self.mantissa.clone(), scale_factor().clone())
    }

    /// |self - other| expressed as a power-of-ten bound: true when the
    /// difference is strictly below 10^-digits.
    pub fn agrees_to_digits(&self, other: &Self, digits: u32) -> bool {
        let diff = (&self.mantissa - &other.mantissa).abs();
        diff < BigInt::from(10u32).pow(SCALE_DIGITS - digits)
    }

    /// Decimal rendering with `digits` digits after the point, truncated.
    pub fn to_decimal_string(&self, digits: usize) -> String {
        let digits = digits.min(SCALE_DIGITS as usize);
        let neg = self.mantissa.is_negative();
        let abs = self.mantissa.abs();
        let (int, frac) = abs.div_rem(scale_factor());
        let frac_str = format!("{:0>width$}", frac.to_string(), width = SCALE_DIGITS as usize);
        let mut out = String::new();
        if neg {
            out.push('-');
        }
        out.push_str(&int.to_string());
        if digits > 0 {
            out.push('.');
            out.push_str(&frac_str[..digits]);
        }
        out
    }

    /// Square root by integer square root on the scaled mantissa.
    /// Panics on negative input (callers guard the radicand).
    pub fn sqrt(&self) -> Self {
        assert!(
            !self.mantissa.is_negative(),
            "square root of negative fixed-point value"
        );
        Self {
            mantissa: (&self.mantissa * scale_factor()).sqrt(),
        }
    }

    /// Nearest integer, with the tie-at-half decision reported separately.
    ///
    /// Returns `(n, near_tie)` where `near_tie` is true when the value sits
    /// within 10^-(SCALE_DIGITS - 20) of a half-integer, i.e. too close for a
    /// purely numeric rounding decision to be trusted.
    pub fn round_nearest(&self) -> (BigInt, bool) {
        let scale = scale_factor();
        let half = scale / 2u32;
        let (mut q, r) = self.mantissa.div_mod_floor(scale);
        // distance of the fractional part from 1/2, in mantissa units
        let dist = (&r - &half).abs();
        let guard = BigInt::from(10u32).pow(SCALE_DIGITS - 20);
        if r > half {
            q += 1;
        }
        (q, dist < guard)
    }

    /// Floor to an integer.
    pub fn floor_int(&self) -> BigInt {
        self.mantissa.div_floor(scale_factor())
    }
}

impl fmt::Debug for BigFixed {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "BigFixed({})", self.to_decimal_string(40))
    }
}

impl fmt::Display for BigFixed {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_decimal_string(REPORT_DIGITS))
    }
}

/// Round-to-nearest integer division (ties away from zero).
fn div_round(num: &BigInt, den: &BigInt) -> BigInt {
    let two = BigInt::from(2);
    let (q, r) = num.div_rem(den);
    if (&r * &two).abs() >= den.abs() {
        if (num.is_negative()) ^ (den.is_negative()) {
            q - 1
        } else {
            q + 1
        }
    } else {
        q
    }
}

impl Add for &BigFixed {
    type Output = BigFixed;
    fn add(self, rhs: &BigFixed) -> BigFixed {
        BigFixed {
            mantissa: &self.mantissa + &rhs.mantissa,
        }
    }
}

impl Sub for &BigFixed {
    type Output = BigFixed;
    fn sub(self, rhs: &BigFixed) -> BigFixed {
        BigFixed {
            mantissa: &self.mantissa - &rhs.mantissa,
        }
    }
}

impl Mul for &BigFixed {
    type Output = BigFixed;
    fn mul(self, rhs: &BigFixed) -> BigFixed {
        BigFixed {
            mantissa: div_round(&(&self.mantissa * &rhs.mantissa), scale_factor()),
        }
    }
}

impl Neg for &BigFixed {
    type Output = BigFixed;
    fn neg(self) -> BigFixed {
        BigFixed {
            mantissa: -&self.mantissa,
        }
    }
}

impl BigFixed {
    fn div_int(&self, d: u64) -> Self {
        Self {
            mantissa: div_round(&self.mantissa, &BigInt::from(d)),
        }
    }
}

// ---------------------------------------------------------------------------
// Constants and elementary functions
// ---------------------------------------------------------------------------

/// pi at working precision (Machin's arctangent formula).
pub fn pi() -> &'static BigFixed {
    static PI: OnceLock<BigFixed> = OnceLock::new();
    PI.get_or_init(|| {
        // pi/4 = 4 arctan(1/5) - arctan(1/239)
        let a = arctan_inv(5);
        let b = arctan_inv(239);
        let four = BigFixed::from_int(4);
        let pi_quarter = &(&four * &a) - &b;
        &four * &pi_quarter
    })
}

/// arctan(1/k) by the alternating power series, in fixed point.
fn arctan_inv(k: u64) -> BigFixed {
    let k2 = k * k;
    let mut term = BigFixed::one().div_int(k);
    let mut sum = term.clone();
    let mut n = 1u64;
    while !term.is_zero() {
        term = term.div_int(k2);
        let denom = 2 * n + 1;
        let contrib = term.div_int(denom);
        if contrib.is_zero() {
            break;
        }
        if n % 2 == 1 {
            sum = &sum - &contrib;
        } else {
            sum = &sum + &contrib;
        }
        n += 1;
    }
    sum
}

/// cos(2*pi*turns) for an exact rational number of turns.
///
/// Argument reduction uses the symmetries of the cosine to land in
/// [0, 1/4] of a turn before the Taylor series is summed, so the series
/// argument never exceeds pi/2.
pub fn cos_turns(turns: &Rational) -> BigFixed {
    let t = turns - turns.floor(); // into [0, 1)
    let half = Rational::new(BigInt::from(1), BigInt::from(2));
    let quarter = Rational::new(BigInt::from(1), BigInt::from(4));
    // cos(2 pi t) = cos(2 pi (1 - t))
    let t = if t > half { Rational::from_integer(BigInt::from(1)) - t } else { t };
    // now t in [0, 1/2]; for t in (1/4, 1/2]: cos(2 pi t) = -cos(2 pi (1/2 - t))
    let (t, neg) = if t > quarter { (half - t, true) } else { (t, false) };
    let x = &BigFixed::from_rational(&t) * &(&BigFixed::from_int(2) * pi());
    let c = cos_series(&x);
    if neg {
        -&c
    } else {
        c
    }
}

/// sin(2*pi*turns), via the cosine shift.
pub fn sin_turns(turns: &Rational) -> BigFixed {
    let quarter = Rational::new(BigInt::from(1), BigInt::from(4));
    cos_turns(&(turns - quarter))
}

/// Taylor series for cos x, |x| <= pi/2.
fn cos_series(x: &BigFixed) -> BigFixed {
    let x2 = x * x;
    let mut term = BigFixed::one();
    let mut sum = BigFixed::one();
    let mut k = 0u64;
    loop {
        k += 1;
        term = &term * &x2;
        term = term.div_int((2 * k - 1) * (2 * k));
        if term.is_zero() {
            break;
        }
        if k % 2 == 1 {
            sum = &sum - &term;
        } else {
            sum = &sum + &term;
        }
    }
    sum
}

/// sqrt of a nonnegative rational at working precision.
pub fn sqrt_rational(r: &Rational) -> BigFixed {
    assert!(!r.is_negative(), "square root of negative rational");
    BigFixed::from_rational(r).sqrt()
}

/// Exact rational square root, when one exists.
pub fn exact_sqrt(r: &Rational) -> Option<Rational> {
    if r.is_negative() {
        return None;
    }
    let ns = r.numer().sqrt();
    let ds = r.denom().sqrt();
    if &(&ns * &ns) == r.numer() && &(&ds * &ds) == r.denom() {
        Some(Rational::new(ns, ds))
    } else {
        None
    }
}

// ---------------------------------------------------------------------------
// Continued-fraction rational approximation
// ---------------------------------------------------------------------------

/// Best rational approximation to `x` among all fractions with denominator
/// at most `max_den`, by continued-fraction convergents plus the final
/// semiconvergent (the bounded-denominator optimum is always one of the two).
///
/// Returns `(approximation, |x - approximation|)`.
pub fn best_rational_approx(x: &BigFixed, max_den: u64) -> (Rational, BigFixed) {
    let exact = x.to_rational();
    let max_den_big = BigInt::from(max_den);

    let (mut p0, mut q0) = (BigInt::zero(), BigInt::from(1));
    let (mut p1, mut q1) = (BigInt::from(1), BigInt::zero());
    let mut n = exact.numer().clone();
    let mut d = exact.denom().clone();
    let mut exact_hit = false;
    loop {
        let a = n.div_floor(&d);
        let q2 = &q0 + &a * &q1;
        if q2 > max_den_big {
            break;
        }
        let p2 = &p0 + &a * &p1;
        p0 = std::mem::replace(&mut p1, p2);
        q0 = std::mem::replace(&mut q1, q2);
        let r = &n - &a * &d;
        n = std::mem::replace(&mut d, r);
        if d.is_zero() {
            exact_hit = true;
            break;
        }
    }

    let best = if exact_hit || q1.is_zero() {
        Rational::new(p1, q1.max(BigInt::from(1)))
    } else {
        // Semiconvergent with the largest admissible denominator.
        let k = (&max_den_big - &q0).div_floor(&q1);
        let semi = Rational::new(&p0 + &k * &p1, &q0 + &k * &q1);
        let conv = Rational::new(p1, q1);
        if abs_diff(&exact, &semi) < abs_diff(&exact, &conv) {
            semi
        } else {
            conv
        }
    };

    let err = {
        let diff = &exact - &best;
        BigFixed::from_rational(&diff).abs()
    };
    (best, err)
}

fn abs_diff(a: &Rational, b: &Rational) -> Rational {
    let d = a - b;
    if d.is_negative() {
        -d
    } else {
        d
    }
}

/// True when no rational with denominator <= `max_den` lies within
/// 10^-`digits` of `x`: numeric evidence of irrationality at the working
/// precision.
pub fn far_from_all_small_rationals(x: &BigFixed, max_den: u64, digits: u32) -> bool {
    let (_, err) = best_rational_approx(x, max_den);
    let threshold = BigFixed {
        mantissa: BigInt::from(10u32).pow(SCALE_DIGITS.saturating_sub(digits)),
    };
    match err.cmp(&threshold) {
        Ordering::Less | Ordering::Equal => false,
        Ordering::Greater => true,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exactmath::{ratio, ratio_int};

    // First digits of pi, a published constant.
    const PI_100: &str = "3.1415926535897932384626433832795028841971693993751\
                          058209749445923078164062862089986280348253421170679";

    #[test]
    fn pi_matches_published_digits() {
        let want: String = PI_100.chars().filter(|c| !c.is_whitespace()).collect();
        let got = pi().to_decimal_string(100);
        assert_eq!(got, want);
    }

    #[test]
    fn cosine_hits_exact_table_values() {
        // cos of 0, 1/6, 1/4, 1/3, 1/2 turns = 1, 1/2, 0, -1/2, -1
        let cases = [
            (ratio(0, 1), ratio_int(1)),
            (ratio(1, 6), ratio(1, 2)),
            (ratio(1, 4), ratio_int(0)),
            (ratio(1, 3), ratio(-1, 2)),
            (ratio(1, 2), ratio_int(-1)),
            (ratio(2, 3), ratio(-1, 2)),
            (ratio(5, 6), ratio(1, 2)),
        ];
        for (turns, want) in cases {
            let got = cos_turns(&turns);
            let want = BigFixed::from_rational(&want);
            assert!(
                got.agrees_to_digits(&want, 210),
                "cos({turns} turns) = {got:?}"
            );
        }
    }

    #[test]
    fn cosine_agrees_with_f64() {
        for k in 0..48 {
            let turns = ratio(k, 48);
            let got = cos_turns(&turns).to_f64();
            let want = (std::f64::consts::TAU * k as f64 / 48.0).cos();
            assert!((got - want).abs() < 1e-12, "k={k} got={got} want={want}");
        }
    }

    #[test]
    fn sine_is_shifted_cosine() {
        let got = sin_turns(&ratio(1, 12)).to_f64();
        assert!((got - 0.5).abs() < 1e-15);
        assert!(sin_turns(&ratio(0, 1)).abs().to_f64() < 1e-200);
    }

    #[test]
    fn sqrt_squares_back() {
        let two = BigFixed::from_int(2);
        let s = two.sqrt();
        assert!((&s * &s).agrees_to_digits(&two, 215));
        assert_eq!(exact_sqrt(&ratio(9, 25)), Some(ratio(3, 5)));
        assert_eq!(exact_sqrt(&ratio(2, 1)), None);
        assert_eq!(exact_sqrt(&ratio(0, 1)), Some(ratio_int(0)));
    }

    #[test]
    fn decimal_string_format() {
        let half = BigFixed::from_rational(&ratio(-1, 2));
        assert_eq!(half.to_decimal_string(3), "-0.500");
        assert_eq!(BigFixed::from_int(3).to_decimal_string(0), "3");
    }

    #[test]
    fn best_approx_recovers_exact_small_rationals() {
        let x = BigFixed::from_rational(&ratio(3, 4));
        let (r, err) = best_rational_approx(&x, 1000);
        assert_eq!(r, ratio(3, 4));
        assert!(err.is_zero());
    }

    #[test]
    fn best_approx_finds_sqrt2_semiconvergent() {
        let x = BigFixed::from_int(2).sqrt();
        let (r, err) = best_rational_approx(&x, 100);
        // Convergent 99/70 misses by 7.2150e-5; the semiconvergent 140/99 is
        // very slightly closer (7.2148e-5).
        assert_eq!(r, ratio(140, 99));
        assert!(err.to_f64() < 1e-4);
    }

    #[test]
    fn far_check_semantics() {
        // sqrt(2): best denominator-1e6 approximation misses by ~1e-13,
        // which is far beyond the 1e-150 window.
        let x = BigFixed::from_int(2).sqrt();
        assert!(far_from_all_small_rationals(&x, 1_000_000, 150));
        // 3/4 is hit exactly, so it is not far.
        let y = BigFixed::from_rational(&ratio(3, 4));
        assert!(!far_from_all_small_rationals(&y, 1_000_000, 150));
    }

    #[test]
    fn rounding_reports_near_ties() {
        // Exact halves stay put (floor at the tie) and raise the tie flag.
        let (n, tie) = BigFixed::from_rational(&ratio(7, 2)).round_nearest();
        assert_eq!(n, BigInt::from(3));
        assert!(tie);
        let (n, tie) = BigFixed::from_rational(&ratio(341, 100)).round_nearest();
        assert_eq!(n, BigInt::from(3));
        assert!(!tie);
        let (n, tie) = BigFixed::from_rational(&ratio(-341, 100)).round_nearest();
        assert_eq!(n, BigInt::from(-3));
        assert!(!tie);
    }
}
