//! Qubit and singlet-pair states on the discretised state space: a state is
//! a deterministic +-1 bit string of length 2p whose +1 count fixes the
//! squared amplitude exactly, phase acts as cyclic permutation, and singlet
//! pairs are two strings with an exact count of anti-correlated positions.

use num_bigint::BigInt;
use num_traits::{Signed, Zero};
use thiserror::Error;

use crate::exactmath::{niven_classify, ratio, CosClass, PrimeModulus, Rational, RationalAngle};
use crate::hiprec::{self, BigFixed};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum RaqmError {
    #[error("{what} = {value} outside [0, {max}]")]
    Range {
        what: &'static str,
        value: u64,
        max: u64,
    },
}

// ---------------------------------------------------------------------------
// Single qubit
// ---------------------------------------------------------------------------

/// A qubit state: amplitude index m1 in [0, 2p] (the +1 count), phase index
/// n1 in [0, 4p), and the realized bit string.
///
/// The canonical arrangement is a +1 block followed by -1s, cyclically
/// rotated right by n1. Any arrangement with the right counts carries the
/// same statistics; the canonical one fixes a reproducible representative.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QubitState {
    p: PrimeModulus,
    m1: u64,
    n1: u64,
    bits: Vec<i8>,
}

impl QubitState {
    pub fn p(&self) -> &PrimeModulus {
        &self.p
    }

    pub fn m1(&self) -> u64 {
        self.m1
    }

    pub fn n1(&self) -> u64 {
        self.n1
    }

    pub fn bits(&self) -> &[i8] {
        &self.bits
    }
}

/// Build the state with m1 entries of +1 rotated right by n1 (mod 2p).
pub fn make_qubit(p: &PrimeModulus, m1: u64, n1: u64) -> Result<QubitState, RaqmError> {
    let pv = p.to_u64().expect("desk-scale modulus");
    if m1 > 2 * pv {
        return Err(RaqmError::Range {
            what: "m1",
            value: m1,
            max: 2 * pv,
        });
    }
    if n1 >= 4 * pv {
        return Err(RaqmError::Range {
            what: "n1",
            value: n1,
            max: 4 * pv - 1,
        });
    }
    let len = (2 * pv) as usize;
    let mut bits = vec![-1i8; len];
    for b in bits.iter_mut().take(m1 as usize) {
        *b = 1;
    }
    bits.rotate_right((n1 % (2 * pv)) as usize);
    Ok(QubitState {
        p: p.clone(),
        m1,
        n1,
        bits,
    })
}

/// The exact fraction of +1 entries, m1/(2p) reduced.
pub fn born_frequency(q: &QubitState) -> Rational {
    Rational::new(BigInt::from(q.m1), BigInt::from(2u32) * q.p.to_bigint())
}

/// Rotate the bit string by k positions (phase action); composition is
/// additive, `phase_permute(phase_permute(q, a), b) = phase_permute(q, a+b)`.
pub fn phase_permute(q: &QubitState, k: i64) -> QubitState {
    let pv = q.p.to_u64().expect("desk-scale modulus");
    let len = 2 * pv;
    let r = k.rem_euclid(len as i64) as usize;
    let mut bits = q.bits.clone();
    bits.rotate_right(r);
    let n1 = (q.n1 as i64 + k).rem_euclid(4 * pv as i64) as u64;
    QubitState {
        p: q.p.clone(),
        m1: q.m1,
        n1,
        bits,
    }
}

// ---------------------------------------------------------------------------
// Uncertainty statistics
// ---------------------------------------------------------------------------

/// Spin statistics of the bit-string ensembles behind a qubit state, in
/// units hbar = 1 with spin components +-1/2.
///
/// `mean_x`/`mean_y` are the exact means of the transverse measurement
/// ensembles: the grid rationals nearest to sin(theta)cos(phi) and
/// sin(theta)sin(phi) *without exceeding them in magnitude* (grid counts are
/// truncated toward zero). Truncation keeps |mean| <= |target|, which makes
/// the uncertainty product bound hold at every grid point; nearest-rounding
/// can overshoot and break it.
#[derive(Debug, Clone)]
pub struct SpinStats {
    pub mean_z: Rational,
    pub mean_x: Rational,
    pub mean_y: Rational,
    pub std_x: BigFixed,
    pub std_y: BigFixed,
    pub product_lhs: BigFixed,
    pub bound_rhs: BigFixed,
}

impl SpinStats {
    /// Exact check of product_lhs >= bound_rhs via the squared rational
    /// identity (1-mx^2)(1-my^2) >= mean_z^2.
    pub fn inequality_holds(&self) -> bool {
        self.lhs_squared_minus_rhs_squared() >= Rational::zero()
    }

    /// Exact equality check (the z-eigenstate case).
    pub fn is_equality(&self) -> bool {
        self.lhs_squared_minus_rhs_squared().is_zero()
    }

    fn lhs_squared_minus_rhs_squared(&self) -> Rational {
        let one = ratio(1, 1);
        (&one - &self.mean_x * &self.mean_x) * (&one - &self.mean_y * &self.mean_y)
            - &self.mean_z * &self.mean_z
    }
}

/// Transverse-ensemble grid counts (number of +1 entries out of 2p) for the
/// x and y measurement directions of a state.
pub fn xy_grid_counts(q: &QubitState) -> (u64, u64) {
    let pv = q.p.to_u64().expect("desk-scale modulus");
    let p_big = q.p.to_bigint();
    let mean_z = Rational::new(BigInt::from(q.m1) - &p_big, p_big.clone());
    let sin2 = ratio(1, 1) - &mean_z * &mean_z;
    let sin_exact = hiprec::exact_sqrt(&sin2);
    let phi_turns = Rational::new(BigInt::from(q.n1), BigInt::from(4u32) * &p_big);
    let quarter = ratio(1, 4);
    let kx = grid_count_toward_zero(pv, &sin2, sin_exact.as_ref(), &phi_turns);
    let ky = grid_count_toward_zero(pv, &sin2, sin_exact.as_ref(), &(&phi_turns - &quarter));
    (kx, ky)
}

/// The transverse measurement ensembles as canonical bit strings (+1 block
/// first).
pub fn xy_ensemble_bits(q: &QubitState) -> (Vec<i8>, Vec<i8>) {
    let (kx, ky) = xy_grid_counts(q);
    let len = 2 * q.p.to_u64().expect("desk-scale modulus") as usize;
    let block = |k: u64| {
        let mut v = vec![-1i8; len];
        for b in v.iter_mut().take(k as usize) {
            *b = 1;
        }
        v
    };
    (block(kx), block(ky))
}

/// Grid count for target sin(theta) * cos(2 pi turns), truncated toward p
/// (i.e. the mean truncated toward zero).
fn grid_count_toward_zero(
    pv: u64,
    sin2: &Rational,
    sin_exact: Option<&Rational>,
    trig_turns: &Rational,
) -> u64 {
    if sin2.is_zero() {
        return pv; // target 0: balanced string
    }
    let trig_class = niven_classify(&RationalAngle::new(trig_turns.clone()));
    match (&trig_class, sin_exact) {
        (CosClass::RationalValue(c), _) if c.is_zero() => pv,
        (CosClass::RationalValue(c), Some(s)) => {
            // fully rational target: exact truncation
            let t = s * c;
            let scaled = t.abs() * Rational::from_integer(BigInt::from(pv));
            let k0: u64 = scaled
                .floor()
                .to_integer()
                .try_into()
                .expect("grid offset fits u64");
            if t.is_negative() {
                pv - k0
            } else {
                pv + k0
            }
        }
        _ => {
            // Irrational target: 220-digit evaluation. A nonzero product of
            // sqrt(rational) and the cosine of a rational angle in these
            // families is never an exact grid multiple, so the floor below
            // is decided with ~200 digits to spare.
            let v = &hiprec::sqrt_rational(sin2) * &hiprec::cos_turns(trig_turns);
            let neg = v < BigFixed::zero();
            let scaled = &v.abs() * &BigFixed::from_int(pv as i64);
            let k0: u64 = u64::try_from(scaled.floor_int()).expect("grid offset fits u64");
            if neg {
                pv - k0
            } else {
                pv + k0
            }
        }
    }
}

/// Spin-component statistics and the uncertainty product check for a state.
pub fn uncertainty_stats(q: &QubitState) -> SpinStats {
    let pv = q.p.to_u64().expect("desk-scale modulus");
    let p_big = q.p.to_bigint();
    let mean_z = Rational::new(BigInt::from(q.m1) - &p_big, p_big.clone());
    let (kx, ky) = xy_grid_counts(q);
    let grid_mean = |k: u64| Rational::new(BigInt::from(k) - &p_big, p_big.clone());
    let mean_x = grid_mean(kx);
    let mean_y = grid_mean(ky);
    let one = ratio(1, 1);
    let var_x = &one - &mean_x * &mean_x;
    let var_y = &one - &mean_y * &mean_y;
    // +-1 strings have second moment 1, so std = sqrt(1 - mean^2); the
    // spin-1/2 scaling halves it.
    let half = BigFixed::from_rational(&ratio(1, 2));
    let std_x = &hiprec::sqrt_rational(&var_x) * &half;
    let std_y = &hiprec::sqrt_rational(&var_y) * &half;
    let product_lhs = &std_x * &std_y;
    let bound_rhs = BigFixed::from_rational(&(mean_z.abs() * ratio(1, 4)));
    let _ = pv;
    SpinStats {
        mean_z,
        mean_x,
        mean_y,
        std_x,
        std_y,
        product_lhs,
        bound_rhs,
    }
}

// ---------------------------------------------------------------------------
// Singlet ensembles
// ---------------------------------------------------------------------------

/// Paired +-1 strings of length 2p with exactly m anti-correlated positions,
/// so the exact pair correlation is -(m/p - 1) = -cos(theta).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SingletEnsemble {
    p: PrimeModulus,
    m: u64,
    cos_theta: Rational,
    alice_bits: Vec<i8>,
    bob_bits: Vec<i8>,
}

impl SingletEnsemble {
    pub fn p(&self) -> &PrimeModulus {
        &self.p
    }

    pub fn grid_index(&self) -> u64 {
        self.m
    }

    pub fn cos_theta(&self) -> &Rational {
        &self.cos_theta
    }

    pub fn alice_bits(&self) -> &[i8] {
        &self.alice_bits
    }

    pub fn bob_bits(&self) -> &[i8] {
        &self.bob_bits
    }

    pub fn len(&self) -> usize {
        self.alice_bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alice_bits.is_empty()
    }

    /// Exact ensemble correlation (1/2p) * sum a_i b_i.
    pub fn correlation(&self) -> Rational {
        let sum: i64 = self
            .alice_bits
            .iter()
            .zip(&self.bob_bits)
            .map(|(a, b)| (*a as i64) * (*b as i64))
            .sum();
        Rational::new(BigInt::from(sum), BigInt::from(self.alice_bits.len() as u64))
    }
}

/// Number of anti-correlated positions laid into the alice +1 block; the
/// remainder goes into the -1 block. ceil(m/2) balances Bob's marginal to
/// within one count (exactly when m is even).
fn anti_split(m: u64) -> u64 {
    m.div_ceil(2)
}

/// The (alice, bob) bit pair at one ensemble index, in O(1).
///
/// Index layout: alice is +1 on [0, p) and -1 on [p, 2p); positions
/// [0, ceil(m/2)) and [p, p + floor(m/2)) are anti-correlated.
pub fn singlet_bit_pair(p: u64, m: u64, index: u64) -> (i8, i8) {
    let ka = anti_split(m);
    let a: i8 = if index < p { 1 } else { -1 };
    let anti = index < ka || (index >= p && index - p < m - ka);
    (a, if anti { -a } else { a })
}

/// Build the full singlet ensemble for grid index m (cos theta = m/p - 1).
pub fn singlet_ensemble(p: &PrimeModulus, m: u64) -> Result<SingletEnsemble, RaqmError> {
    let pv = p.to_u64().expect("desk-scale modulus");
    if m > 2 * pv {
        return Err(RaqmError::Range {
            what: "m",
            value: m,
            max: 2 * pv,
        });
    }
    let len = (2 * pv) as usize;
    let mut alice = Vec::with_capacity(len);
    let mut bob = Vec::with_capacity(len);
    for idx in 0..len as u64 {
        let (a, b) = singlet_bit_pair(pv, m, idx);
        alice.push(a);
        bob.push(b);
    }
    let cos_theta = Rational::new(
        BigInt::from(m) - p.to_bigint(),
        p.to_bigint(),
    );
    Ok(SingletEnsemble {
        p: p.clone(),
        m,
        cos_theta,
        alice_bits: alice,
        bob_bits: bob,
    })
}
