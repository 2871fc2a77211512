//! Exact arithmetic foundation: reduced big rationals, rational angles
//! (fractions of a full turn), verified prime moduli, the rational-cosine
//! classification behind Niven's theorem, and the p-adic valuation/metric.
//!
//! Everything in this module is integer-exact; no floating point enters any
//! computation here.

use std::fmt;
use std::str::FromStr;

use num_bigint::{BigInt, BigUint};
use num_integer::Integer;
use num_traits::{One, Signed, ToPrimitive, Zero};
use thiserror::Error;

/// Exact rational number, always in lowest terms with positive denominator.
///
/// Backed by `num_rational::BigRational`, which maintains both invariants on
/// every operation. Serializes as `"num/den"` text (`"71/101"`, integers as
/// plain `"5"`).
pub type Rational = num_rational::BigRational;

/// Build a rational from machine integers.
pub fn ratio(num: i64, den: i64) -> Rational {
    Rational::new(BigInt::from(num), BigInt::from(den))
}

/// Build a rational from an integer.
pub fn ratio_int(n: i64) -> Rational {
    Rational::from_integer(BigInt::from(n))
}

/// Parse `"num/den"` (or plain `"num"`) into a reduced rational.
pub fn parse_rational(s: &str) -> Result<Rational, ExactMathError> {
    Rational::from_str(s.trim()).map_err(|_| ExactMathError::BadRational(s.to_string()))
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ExactMathError {
    #[error("not a rational number: {0:?} (expected \"num/den\")")]
    BadRational(String),
    #[error("modulus {0} is not prime")]
    NotPrime(BigUint),
    #[error("modulus {0} is below the minimum of 3")]
    ModulusTooSmall(BigUint),
    #[error("modulus {0} exceeds the addressable ensemble size")]
    ModulusTooLarge(BigUint),
}

// ---------------------------------------------------------------------------
// Rational angles
// ---------------------------------------------------------------------------

/// An angle stored exactly as a fraction of a full turn.
///
/// The stored value nu = phi / 2pi is normalized into [0, 1); addition wraps
/// modulo one turn. Displays as `"a/b turns"`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct RationalAngle {
    turns: Rational,
}

impl RationalAngle {
    pub fn new(turns: Rational) -> Self {
        Self {
            turns: normalize_mod_one(turns),
        }
    }

    /// Shorthand for `a/b` of a turn.
    pub fn from_fraction(num: i64, den: i64) -> Self {
        Self::new(ratio(num, den))
    }

    pub fn zero() -> Self {
        Self {
            turns: Rational::zero(),
        }
    }

    /// The normalized fraction of a turn, in [0, 1).
    pub fn turns(&self) -> &Rational {
        &self.turns
    }

    /// Sum modulo one turn.
    pub fn add(&self, other: &Self) -> Self {
        Self::new(&self.turns + &other.turns)
    }

    /// The angle scaled by an integer, modulo one turn.
    pub fn scale(&self, k: i64) -> Self {
        Self::new(&self.turns * ratio_int(k))
    }

    /// The angle in radians (approximate; only for reporting).
    pub fn to_radians_f64(&self) -> f64 {
        self.turns.to_f64().unwrap_or(f64::NAN) * std::f64::consts::TAU
    }
}

impl fmt::Display for RationalAngle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} turns", self.turns)
    }
}

fn normalize_mod_one(r: Rational) -> Rational {
    let floor = r.floor();
    r - floor
}

// ---------------------------------------------------------------------------
// Prime modulus
// ---------------------------------------------------------------------------

/// A verified odd prime p >= 3, the discretisation parameter.
///
/// Primality is established at construction by deterministic trial division,
/// which is ample for desk-scale moduli (p up to ~1e7 in practice).
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PrimeModulus {
    value: BigUint,
}

impl PrimeModulus {
    pub fn new(value: BigUint) -> Result<Self, ExactMathError> {
        if value < BigUint::from(3u32) {
            return Err(ExactMathError::ModulusTooSmall(value));
        }
        if !is_prime(&value) {
            return Err(ExactMathError::NotPrime(value));
        }
        Ok(Self { value })
    }

    pub fn from_u64(value: u64) -> Result<Self, ExactMathError> {
        Self::new(BigUint::from(value))
    }

    pub fn value(&self) -> &BigUint {
        &self.value
    }

    pub fn to_bigint(&self) -> BigInt {
        BigInt::from(self.value.clone())
    }

    /// The modulus as a machine integer, for ensemble sizing.
    pub fn to_u64(&self) -> Result<u64, ExactMathError> {
        self.value
            .to_u64()
            .ok_or_else(|| ExactMathError::ModulusTooLarge(self.value.clone()))
    }

    /// Ensemble length 2p as a usize, when it fits in memory terms.
    pub fn ensemble_len(&self) -> Result<usize, ExactMathError> {
        (self.value.clone() * 2u32)
            .to_usize()
            .ok_or_else(|| ExactMathError::ModulusTooLarge(self.value.clone()))
    }
}

impl fmt::Display for PrimeModulus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.value.fmt(f)
    }
}

/// Deterministic trial division.
fn is_prime(n: &BigUint) -> bool {
    if let Some(n) = n.to_u64() {
        return is_prime_u64(n);
    }
    // Desk-scale moduli always fit u64; beyond that, fall back to the same
    // (slow) scheme on big integers.
    let two = BigUint::from(2u32);
    let three = BigUint::from(3u32);
    if n.is_multiple_of(&two) || n.is_multiple_of(&three) {
        return false;
    }
    let mut d = BigUint::from(5u32);
    while &d * &d <= *n {
        if n.is_multiple_of(&d) || n.is_multiple_of(&(&d + &two)) {
            return false;
        }
        d += 6u32;
    }
    true
}

fn is_prime_u64(n: u64) -> bool {
    if n < 2 {
        return false;
    }
    for p in [2u64, 3] {
        if n == p {
            return true;
        }
        if n % p == 0 {
            return false;
        }
    }
    let mut d = 5u64;
    while d.saturating_mul(d) <= n {
        if n % d == 0 || n % (d + 2) == 0 {
            return false;
        }
        d += 6;
    }
    true
}

// ---------------------------------------------------------------------------
// Niven classification
// ---------------------------------------------------------------------------

/// Whether the cosine of a rational angle is itself rational.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CosClass {
    /// cos(2*pi*nu) is this exact rational (one of 0, +-1/2, +-1).
    RationalValue(Rational),
    /// cos(2*pi*nu) is irrational.
    Irrational,
}

/// Classify cos(2*pi*nu) for rational nu.
///
/// By Niven's theorem the cosine of a rational angle is rational only at the
/// eight normalized fractions of a turn with denominator in {1, 2, 3, 4, 6},
/// so a complete table decides every case in O(1).
pub fn niven_classify(nu: &RationalAngle) -> CosClass {
    let t = nu.turns();
    let den = t.denom();
    let num = t.numer();
    let value = if den.is_one() {
        // nu = 0
        Some(ratio_int(1))
    } else if *den == BigInt::from(2) {
        // nu = 1/2
        Some(ratio_int(-1))
    } else if *den == BigInt::from(4) {
        // nu = 1/4 or 3/4
        Some(ratio_int(0))
    } else if *den == BigInt::from(3) {
        // nu = 1/3 or 2/3
        Some(ratio(-1, 2))
    } else if *den == BigInt::from(6) {
        // nu = 1/6 or 5/6
        Some(if num.is_one() || *num == BigInt::from(5) {
            ratio(1, 2)
        } else {
            ratio(-1, 2)
        })
    } else {
        None
    };
    match value {
        Some(v) => CosClass::RationalValue(v),
        None => CosClass::Irrational,
    }
}

// ---------------------------------------------------------------------------
// p-adic valuation and metric
// ---------------------------------------------------------------------------

/// The exponent of the largest power of p dividing an integer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Valuation {
    Finite(u64),
    /// v_p(0): zero is divisible by every power of p.
    Infinite,
}

impl Valuation {
    pub fn finite(self) -> Option<u64> {
        match self {
            Valuation::Finite(v) => Some(v),
            Valuation::Infinite => None,
        }
    }
}

/// Largest k with p^k | n; `Infinite` for n = 0.
pub fn padic_valuation(n: &BigInt, p: &PrimeModulus) -> Valuation {
    if n.is_zero() {
        return Valuation::Infinite;
    }
    let p = p.to_bigint();
    let mut v = 0u64;
    let mut cur = n.abs();
    loop {
        let (q, r) = cur.div_rem(&p);
        if !r.is_zero() {
            return Valuation::Finite(v);
        }
        v += 1;
        cur = q;
    }
}

/// The p-adic distance p^(-v(a-b)), an ultrametric; 0 when a = b.
///
/// Under this metric a Euclidean-tiny step off the p-structured set (for
/// example a - b = 1) sits at the maximal distance 1, while a step of size p
/// along it is only 1/p away.
pub fn padic_distance(a: &BigInt, b: &BigInt, p: &PrimeModulus) -> Rational {
    match padic_valuation(&(a - b), p) {
        Valuation::Infinite => Rational::zero(),
        Valuation::Finite(v) => {
            let pv = p.to_bigint().pow(v as u32);
            Rational::new(BigInt::one(), pv)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn angle(n: i64, d: i64) -> RationalAngle {
        RationalAngle::from_fraction(n, d)
    }

    #[test]
    fn rational_serializes_as_num_den() {
        let r = ratio(71, 101);
        assert_eq!(r.to_string(), "71/101");
        assert_eq!(parse_rational("71/101").unwrap(), r);
        assert_eq!(parse_rational("5").unwrap(), ratio_int(5));
        assert_eq!(ratio(-50, 101).to_string(), "-50/101");
        assert!(parse_rational("nope").is_err());
    }

    #[test]
    fn rational_always_reduced_with_positive_denominator() {
        let r = Rational::new(BigInt::from(4), BigInt::from(-6));
        assert_eq!(r, ratio(-2, 3));
        assert!(r.denom() > &BigInt::zero());
    }

    #[test]
    fn angle_normalizes_into_unit_interval() {
        assert_eq!(angle(9, 8).turns(), &ratio(1, 8));
        assert_eq!(angle(-1, 8).turns(), &ratio(7, 8));
        assert_eq!(angle(1, 3).add(&angle(5, 6)).turns(), &ratio(1, 6));
        assert_eq!(angle(1, 7).to_string(), "1/7 turns");
    }

    #[test]
    fn niven_table_examples() {
        assert_eq!(
            niven_classify(&angle(0, 1)),
            CosClass::RationalValue(ratio_int(1))
        );
        assert_eq!(
            niven_classify(&angle(1, 6)),
            CosClass::RationalValue(ratio(1, 2))
        );
        assert_eq!(niven_classify(&angle(1, 8)), CosClass::Irrational);
        assert_eq!(
            niven_classify(&angle(1, 2)),
            CosClass::RationalValue(ratio_int(-1))
        );
        assert_eq!(
            niven_classify(&angle(3, 4)),
            CosClass::RationalValue(ratio_int(0))
        );
        assert_eq!(
            niven_classify(&angle(2, 3)),
            CosClass::RationalValue(ratio(-1, 2))
        );
        assert_eq!(
            niven_classify(&angle(5, 6)),
            CosClass::RationalValue(ratio(1, 2))
        );
        assert_eq!(niven_classify(&angle(1, 7)), CosClass::Irrational);
    }

    #[test]
    fn niven_agrees_with_numeric_oracle_up_to_denominator_1000() {
        // Oracle: evaluate cos(2 pi a/b) in floating point and test closeness
        // to {0, +-1/2, +-1}. For b <= 1000 the nearest non-exceptional
        // rational angle keeps its cosine ~1e-4 away from those values, far
        // outside the 1e-9 window, so the oracle cannot misclassify.
        let specials = [0.0, 0.5, -0.5, 1.0, -1.0];
        for b in 1i64..=1000 {
            for a in 0..b {
                if num_integer::gcd(a, b) != 1 {
                    continue;
                }
                let c = (std::f64::consts::TAU * a as f64 / b as f64).cos();
                let oracle_special = specials.iter().find(|s| (c - **s).abs() < 1e-9);
                match niven_classify(&angle(a, b)) {
                    CosClass::RationalValue(v) => {
                        let s = oracle_special.expect("classifier claims rational, oracle not");
                        assert!((v.to_f64().unwrap() - s).abs() < 1e-12);
                    }
                    CosClass::Irrational => {
                        assert!(oracle_special.is_none(), "oracle special at {a}/{b}");
                    }
                }
            }
        }
    }

    #[test]
    fn prime_modulus_validation() {
        assert!(PrimeModulus::from_u64(3).is_ok());
        assert!(PrimeModulus::from_u64(10007).is_ok());
        assert_eq!(
            PrimeModulus::from_u64(100).unwrap_err(),
            ExactMathError::NotPrime(BigUint::from(100u32))
        );
        // 2 is prime but below the model's minimum.
        assert!(matches!(
            PrimeModulus::from_u64(2),
            Err(ExactMathError::ModulusTooSmall(_))
        ));
        assert!(matches!(
            PrimeModulus::from_u64(1),
            Err(ExactMathError::ModulusTooSmall(_))
        ));
    }

    #[test]
    fn valuation_examples() {
        let p5 = PrimeModulus::from_u64(5).unwrap();
        let p3 = PrimeModulus::from_u64(3).unwrap();
        assert_eq!(padic_valuation(&BigInt::from(0), &p5), Valuation::Infinite);
        assert_eq!(
            padic_valuation(&BigInt::from(250), &p5),
            Valuation::Finite(3)
        );
        assert_eq!(padic_valuation(&BigInt::from(45), &p3), Valuation::Finite(2));
        assert_eq!(
            padic_valuation(&BigInt::from(-250), &p5),
            Valuation::Finite(3)
        );
        assert_eq!(padic_valuation(&BigInt::from(7), &p5), Valuation::Finite(0));
    }

    #[test]
    fn distance_examples() {
        let p7 = PrimeModulus::from_u64(7).unwrap();
        assert_eq!(
            padic_distance(&BigInt::from(3), &BigInt::from(3), &p7),
            Rational::zero()
        );
        assert_eq!(
            padic_distance(&BigInt::from(0), &BigInt::from(7), &p7),
            ratio(1, 7)
        );
        assert_eq!(
            padic_distance(&BigInt::from(1), &BigInt::from(2), &p7),
            ratio_int(1)
        );
    }

    #[test]
    fn off_grid_perturbation_is_padically_large() {
        // A unit Euclidean step is maximal in the p-adic metric, while a step
        // of size p^2 is tiny: magnitude ordering reverses.
        let p = PrimeModulus::from_u64(101).unwrap();
        let x = BigInt::from(42 * 101);
        let step_off = padic_distance(&x, &(&x + 1), &p);
        let step_along = padic_distance(&x, &(&x + 101 * 101), &p);
        assert_eq!(step_off, ratio_int(1));
        assert_eq!(step_along, ratio(1, 101 * 101));
        assert!(step_off > step_along);
    }

    proptest! {
        #[test]
        fn rational_arithmetic_round_trips(
            an in -1_000_000i64..1_000_000, ad in 1i64..1_000_000,
            bn in -1_000_000i64..1_000_000, bd in 1i64..1_000_000,
        ) {
            let a = ratio(an, ad);
            let b = ratio(bn, bd);
            prop_assert_eq!(&(&a + &b) - &b, a.clone());
            if !b.is_zero() {
                prop_assert_eq!(&(&a * &b) / &b, a);
            }
        }

        #[test]
        fn ultrametric_inequality(
            a in -1_000_000_000i64..1_000_000_000,
            b in -1_000_000_000i64..1_000_000_000,
            c in -1_000_000_000i64..1_000_000_000,
            pidx in 0usize..4,
        ) {
            let p = PrimeModulus::from_u64([3, 5, 7, 101][pidx]).unwrap();
            let (a, b, c) = (BigInt::from(a), BigInt::from(b), BigInt::from(c));
            let dac = padic_distance(&a, &c, &p);
            let dab = padic_distance(&a, &b, &p);
            let dbc = padic_distance(&b, &c, &p);
            prop_assert!(dac <= dab.clone().max(dbc.clone()), "d(a,c)={} d(a,b)={} d(b,c)={}", dac, dab, dbc);
        }

        #[test]
        fn angle_addition_stays_normalized(
            an in -100i64..100, ad in 1i64..100,
            bn in -100i64..100, bd in 1i64..100,
        ) {
            let s = angle(an, ad).add(&angle(bn, bd));
            prop_assert!(s.turns() >= &Rational::zero() && s.turns() < &ratio_int(1));
        }
    }
}
