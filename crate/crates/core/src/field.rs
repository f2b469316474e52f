//! Prime-field arithmetic, fixed-point encoding of real embeddings and
//! bounded rational reconstruction.
//!
//! Every protocol payload is a vector of [`FieldElement`]s. Elements carry
//! their modulus so that the usual operator traits can be used; mixing
//! elements of different fields is a logic error and is caught in debug
//! builds.

use std::fmt;
use std::ops::{Add, AddAssign, Mul, MulAssign, Neg, Sub, SubAssign};

use num_integer::Integer;
use serde::{Deserialize, Serialize};

/// Largest modulus supported. Products are computed in `u128`, the bound
/// keeps sums of two canonical values inside `u64`.
pub const MAX_MODULUS: u64 = 1 << 62;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FieldError {
    #[error("modulus {0} is not prime")]
    NotPrime(u64),
    #[error("modulus {0} is outside the supported range [3, 2^62)")]
    ModulusRange(u64),
    #[error("inversion of zero")]
    ZeroInverse,
    #[error("value {value} exceeds the fixed-point bound {bound}")]
    OutOfBound { value: f64, bound: u64 },
    #[error("no rational with |num| <= {num_bound} and 0 < den <= {den_bound} maps to {value}")]
    NoRational {
        value: u64,
        num_bound: u64,
        den_bound: u64,
    },
    #[error("reconstruction bounds too large: 2*{num_bound}*{den_bound} >= p = {modulus}")]
    BoundsTooLarge {
        num_bound: u64,
        den_bound: u64,
        modulus: u64,
    },
    #[error("expected {expected} bytes for a field element, got {got}")]
    Width { expected: usize, got: usize },
    #[error("encoded value {0} is not a canonical field element")]
    NonCanonical(u64),
}

/// Parameters of a prime field `F_p`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PrimeField {
    modulus: u64,
    bits: u32,
}

impl PrimeField {
    pub fn new(modulus: u64) -> Result<Self, FieldError> {
        if !(3..MAX_MODULUS).contains(&modulus) {
            return Err(FieldError::ModulusRange(modulus));
        }
        if !num_prime::nt_funcs::is_prime64(modulus) {
            return Err(FieldError::NotPrime(modulus));
        }
        Ok(Self {
            modulus,
            bits: 64 - modulus.leading_zeros(),
        })
    }

    /// The smallest prime strictly greater than `lower`.
    pub fn smallest_above(lower: u64) -> Result<Self, FieldError> {
        let mut candidate = lower.checked_add(1).ok_or(FieldError::ModulusRange(lower))?;
        while candidate < MAX_MODULUS {
            if num_prime::nt_funcs::is_prime64(candidate) {
                return Self::new(candidate);
            }
            candidate += 1;
        }
        Err(FieldError::ModulusRange(lower))
    }

    pub fn modulus(&self) -> u64 {
        self.modulus
    }

    pub fn bit_length(&self) -> u32 {
        self.bits
    }

    /// Serialized width of one element in bytes.
    pub fn byte_width(&self) -> usize {
        self.bits.div_ceil(8) as usize
    }

    pub fn zero(&self) -> FieldElement {
        FieldElement {
            value: 0,
            modulus: self.modulus,
        }
    }

    pub fn one(&self) -> FieldElement {
        self.elem(1)
    }

    /// Reduces an arbitrary integer into the field.
    pub fn elem(&self, value: u64) -> FieldElement {
        FieldElement {
            value: value % self.modulus,
            modulus: self.modulus,
        }
    }

    pub fn from_i64(&self, value: i64) -> FieldElement {
        self.from_i128(value as i128)
    }

    pub fn from_i128(&self, value: i128) -> FieldElement {
        let p = self.modulus as i128;
        FieldElement {
            value: value.rem_euclid(p) as u64,
            modulus: self.modulus,
        }
    }

    pub fn zeros(&self, len: usize) -> Vec<FieldElement> {
        vec![self.zero(); len]
    }

    /// Fixed-width big-endian encoding.
    pub fn encode(&self, a: FieldElement, out: &mut Vec<u8>) {
        debug_assert_eq!(a.modulus, self.modulus);
        let bytes = a.value.to_be_bytes();
        out.extend_from_slice(&bytes[8 - self.byte_width()..]);
    }

    pub fn decode(&self, bytes: &[u8]) -> Result<FieldElement, FieldError> {
        let width = self.byte_width();
        if bytes.len() != width {
            return Err(FieldError::Width {
                expected: width,
                got: bytes.len(),
            });
        }
        let mut buf = [0u8; 8];
        buf[8 - width..].copy_from_slice(bytes);
        let value = u64::from_be_bytes(buf);
        if value >= self.modulus {
            return Err(FieldError::NonCanonical(value));
        }
        Ok(FieldElement {
            value,
            modulus: self.modulus,
        })
    }
}

/// An element of `F_p` in canonical form `0 <= value < p`.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct FieldElement {
    value: u64,
    modulus: u64,
}

impl FieldElement {
    pub fn value(&self) -> u64 {
        self.value
    }

    pub fn modulus(&self) -> u64 {
        self.modulus
    }

    /// Zero of the same field.
    pub fn zero_of(&self) -> Self {
        FieldElement {
            value: 0,
            modulus: self.modulus,
        }
    }

    /// One of the same field.
    pub fn one_of(&self) -> Self {
        FieldElement {
            value: 1 % self.modulus,
            modulus: self.modulus,
        }
    }

    pub fn is_zero(&self) -> bool {
        self.value == 0
    }

    /// Representative in `(-p/2, p/2]`.
    pub fn to_signed(&self) -> i128 {
        if self.value > self.modulus / 2 {
            self.value as i128 - self.modulus as i128
        } else {
            self.value as i128
        }
    }

    pub fn pow(self, mut exp: u64) -> Self {
        let mut base = self;
        let mut acc = FieldElement {
            value: 1 % self.modulus,
            modulus: self.modulus,
        };
        while exp > 0 {
            if exp & 1 == 1 {
                acc *= base;
            }
            base *= base;
            exp >>= 1;
        }
        acc
    }

    /// Multiplicative inverse via the extended Euclidean algorithm.
    pub fn inv(self) -> Result<Self, FieldError> {
        if self.value == 0 {
            return Err(FieldError::ZeroInverse);
        }
        let p = self.modulus as i128;
        let egcd = (self.value as i128).extended_gcd(&p);
        debug_assert_eq!(egcd.gcd, 1);
        Ok(FieldElement {
            value: egcd.x.rem_euclid(p) as u64,
            modulus: self.modulus,
        })
    }
}

impl fmt::Debug for FieldElement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.value)
    }
}

impl fmt::Display for FieldElement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.value)
    }
}

impl Add for FieldElement {
    type Output = Self;
    fn add(self, rhs: Self) -> Self {
        debug_assert_eq!(self.modulus, rhs.modulus);
        let s = self.value + rhs.value;
        FieldElement {
            value: if s >= self.modulus { s - self.modulus } else { s },
            modulus: self.modulus,
        }
    }
}

impl Sub for FieldElement {
    type Output = Self;
    fn sub(self, rhs: Self) -> Self {
        debug_assert_eq!(self.modulus, rhs.modulus);
        let value = if self.value >= rhs.value {
            self.value - rhs.value
        } else {
            self.value + self.modulus - rhs.value
        };
        FieldElement {
            value,
            modulus: self.modulus,
        }
    }
}

impl Mul for FieldElement {
    type Output = Self;
    fn mul(self, rhs: Self) -> Self {
        debug_assert_eq!(self.modulus, rhs.modulus);
        let prod = (self.value as u128 * rhs.value as u128) % self.modulus as u128;
        FieldElement {
            value: prod as u64,
            modulus: self.modulus,
        }
    }
}

impl Neg for FieldElement {
    type Output = Self;
    fn neg(self) -> Self {
        FieldElement {
            value: if self.value == 0 {
                0
            } else {
                self.modulus - self.value
            },
            modulus: self.modulus,
        }
    }
}

impl AddAssign for FieldElement {
    fn add_assign(&mut self, rhs: Self) {
        *self = *self + rhs;
    }
}

impl SubAssign for FieldElement {
    fn sub_assign(&mut self, rhs: Self) {
        *self = *self - rhs;
    }
}

impl MulAssign for FieldElement {
    fn mul_assign(&mut self, rhs: Self) {
        *self = *self * rhs;
    }
}

/// Coordinatewise `acc += scale * v`.
pub fn axpy(acc: &mut [FieldElement], scale: FieldElement, v: &[FieldElement]) {
    debug_assert_eq!(acc.len(), v.len());
    for (a, &x) in acc.iter_mut().zip(v) {
        *a += scale * x;
    }
}

/// A reduced fraction `numerator / denominator` with positive denominator.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Rational {
    pub numerator: i64,
    pub denominator: u64,
}

impl Rational {
    pub fn new(numerator: i64, denominator: u64) -> Self {
        assert!(denominator > 0, "zero denominator");
        let g = (numerator.unsigned_abs()).gcd(&denominator).max(1);
        Rational {
            numerator: numerator / g as i64,
            denominator: denominator / g,
        }
    }

    pub fn to_f64(&self) -> f64 {
        self.numerator as f64 / self.denominator as f64
    }
}

impl fmt::Display for Rational {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.denominator == 1 {
            write!(f, "{}", self.numerator)
        } else {
            write!(f, "{}/{}", self.numerator, self.denominator)
        }
    }
}

/// Recovers the unique `s / c` with `|s| <= num_bound`, `0 < c <= den_bound`
/// and `s * c^-1 = a (mod p)`, using the extended Euclidean algorithm
/// stopped at the first remainder within `num_bound`.
pub fn rational_reconstruct(
    a: FieldElement,
    num_bound: u64,
    den_bound: u64,
) -> Result<Rational, FieldError> {
    let p = a.modulus as i128;
    if 2 * num_bound as i128 * den_bound as i128 >= p {
        return Err(FieldError::BoundsTooLarge {
            num_bound,
            den_bound,
            modulus: a.modulus,
        });
    }
    let no_rational = || FieldError::NoRational {
        value: a.value,
        num_bound,
        den_bound,
    };

    let (mut r0, mut r1) = (p, a.value as i128);
    let (mut t0, mut t1) = (0i128, 1i128);
    while r1 > num_bound as i128 {
        let q = r0 / r1;
        (r0, r1) = (r1, r0 - q * r1);
        (t0, t1) = (t1, t0 - q * t1);
    }
    let (mut s, mut c) = (r1, t1);
    if c < 0 {
        s = -s;
        c = -c;
    }
    if c == 0 {
        return Err(no_rational());
    }
    let g = s.abs().gcd(&c);
    s /= g;
    c /= g;
    if c > den_bound as i128 || s.abs() > num_bound as i128 {
        return Err(no_rational());
    }
    if (s - a.value as i128 * c).rem_euclid(p) != 0 {
        return Err(no_rational());
    }
    Ok(Rational {
        numerator: s as i64,
        denominator: c as u64,
    })
}

/// Signed fixed-point codec: a real `x` maps to `round(scale * x) mod p`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FixedPointCodec {
    scale: u64,
    bound: u64,
    field: PrimeField,
}

impl FixedPointCodec {
    pub fn new(field: PrimeField, scale: u64, bound: u64) -> Self {
        assert!(scale > 0 && bound > 0);
        Self {
            scale,
            bound,
            field,
        }
    }

    pub fn scale(&self) -> u64 {
        self.scale
    }

    /// Bound on `|round(scale * x)|`.
    pub fn bound(&self) -> u64 {
        self.bound
    }

    pub fn field(&self) -> PrimeField {
        self.field
    }

    /// `round(scale * x)` as an integer, rejecting values beyond the bound.
    pub fn quantize(&self, x: f64) -> Result<i64, FieldError> {
        let q = (x * self.scale as f64).round();
        if !q.is_finite() || q.abs() > self.bound as f64 {
            return Err(FieldError::OutOfBound {
                value: x,
                bound: self.bound,
            });
        }
        Ok(q as i64)
    }

    pub fn encode(&self, x: f64) -> Result<FieldElement, FieldError> {
        Ok(self.field.from_i64(self.quantize(x)?))
    }

    /// Decodes the field ratio `S * C^-1` of a sum `|S| <= n * bound` over a
    /// count `1 <= C <= n`. Returns the reduced quotient in quantized units.
    pub fn decode_ratio(&self, a: FieldElement, n_clients: u64) -> Result<Rational, FieldError> {
        rational_reconstruct(a, n_clients * self.bound, n_clients)
    }

    pub fn decode_average(&self, a: FieldElement, n_clients: u64) -> Result<f64, FieldError> {
        Ok(self.to_real(self.decode_ratio(a, n_clients)?))
    }

    /// Real value of a quotient expressed in quantized units.
    pub fn to_real(&self, q: Rational) -> f64 {
        q.to_f64() / self.scale as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn f97() -> PrimeField {
        PrimeField::new(97).unwrap()
    }

    #[test]
    fn small_field_examples() {
        let f = f97();
        assert_eq!(f.one().inv().unwrap(), f.one());
        let a = f.elem(13);
        assert_eq!(a * a.inv().unwrap(), f.one());
        assert_eq!((f.elem(96) + f.elem(5)).value(), (96 + 5) % 97);
        assert_eq!(f.zero().inv(), Err(FieldError::ZeroInverse));
        assert_eq!((-f.elem(3)).value(), 94);
        assert_eq!((f.elem(3) - f.elem(5)).value(), 95);
    }

    #[test]
    fn rejects_composite_and_out_of_range() {
        assert_eq!(PrimeField::new(91), Err(FieldError::NotPrime(91)));
        assert!(matches!(PrimeField::new(2), Err(FieldError::ModulusRange(2))));
        assert!(PrimeField::new(MAX_MODULUS + 1).is_err());
        assert_eq!(PrimeField::smallest_above(96).unwrap().modulus(), 97);
        assert_eq!(PrimeField::smallest_above(97).unwrap().modulus(), 101);
    }

    #[test]
    fn fixed_point_examples() {
        let f = PrimeField::new(10007).unwrap();
        let codec = FixedPointCodec::new(f, 100, 500);
        assert_eq!(codec.encode(0.0).unwrap().value(), 0);
        assert_eq!(codec.encode(1.25).unwrap().value(), 125);
        assert_eq!(codec.encode(-0.5).unwrap().value(), 10007 - 50);
        assert!(matches!(codec.encode(5.01), Err(FieldError::OutOfBound { .. })));
        assert!(codec.encode(f64::NAN).is_err());
    }

    #[test]
    fn decode_average_examples() {
        let f = PrimeField::new(10007).unwrap();
        let codec = FixedPointCodec::new(f, 100, 500);
        let n = 3;
        assert_eq!(codec.decode_average(f.zero(), n).unwrap(), 0.0);
        // S = 250, C = 2
        let a = f.elem(250) * f.elem(2).inv().unwrap();
        assert_eq!(a.value(), 125);
        assert_eq!(codec.decode_average(a, n).unwrap(), 1.25);
        // S = 251, C = 2
        let a = f.elem(251) * f.elem(2).inv().unwrap();
        assert_eq!(codec.decode_ratio(a, n).unwrap(), Rational::new(251, 2));
        assert_eq!(codec.decode_average(a, n).unwrap(), 251.0 / 2.0 / 100.0);
        // negative sum over three owners
        let a = f.from_i64(-301) * f.elem(3).inv().unwrap();
        assert_eq!(codec.decode_ratio(a, n).unwrap(), Rational::new(-301, 3));
    }

    /// Exhaustive search over all |s| <= nb, 1 <= c <= db in lowest terms.
    fn brute_force(a: FieldElement, nb: u64, db: u64) -> Option<Rational> {
        let f = PrimeField::new(a.modulus()).unwrap();
        let mut found = None;
        for c in 1..=db {
            let cinv = f.elem(c).inv().unwrap();
            for s in -(nb as i64)..=(nb as i64) {
                if s.unsigned_abs().gcd(&c) != 1 {
                    continue;
                }
                if f.from_i64(s) * cinv == a {
                    assert!(found.is_none(), "bounds admit two rationals");
                    found = Some(Rational {
                        numerator: s,
                        denominator: c,
                    });
                }
            }
        }
        found
    }

    #[test]
    fn reconstruct_examples() {
        let f = PrimeField::new(1009).unwrap();
        let a = f.elem(3) * f.elem(7).inv().unwrap();
        assert_eq!(a, f.elem(577));
        assert_eq!(brute_force(a, 15, 15), Some(Rational::new(3, 7)));
        assert_eq!(rational_reconstruct(a, 15, 15).unwrap(), Rational::new(3, 7));
        assert_eq!(rational_reconstruct(f.elem(5), 15, 15).unwrap(), Rational::new(5, 1));
        let a = f.elem(1009 - 2);
        assert_eq!(brute_force(a, 15, 15), Some(Rational::new(-2, 1)));
        assert_eq!(rational_reconstruct(a, 15, 15).unwrap(), Rational::new(-2, 1));
        assert!(matches!(
            rational_reconstruct(a, 40, 40),
            Err(FieldError::BoundsTooLarge { .. })
        ));
    }

    #[test]
    fn reconstruct_matches_exhaustive_oracle() {
        for &p in &[1931u64, 2003] {
            let f = PrimeField::new(p).unwrap();
            for v in 0..p {
                let a = f.elem(v);
                assert_eq!(
                    rational_reconstruct(a, 31, 31).ok(),
                    brute_force(a, 31, 31),
                    "p={p} a={v}"
                );
            }
        }
    }

    #[test]
    fn element_bytes_are_fixed_width() {
        let f = PrimeField::new(10007).unwrap();
        assert_eq!(f.byte_width(), 2);
        let mut out = Vec::new();
        f.encode(f.elem(258), &mut out);
        assert_eq!(out, vec![1, 2]);
        assert_eq!(f.decode(&out).unwrap(), f.elem(258));
        assert!(f.decode(&[0xff, 0xff]).is_err());
        assert!(f.decode(&[1]).is_err());
    }

    fn big_field() -> PrimeField {
        PrimeField::smallest_above(1 << 40).unwrap()
    }

    proptest! {
        #[test]
        fn field_axioms(a in any::<u64>(), b in any::<u64>(), c in any::<u64>()) {
            let f = big_field();
            let (a, b, c) = (f.elem(a), f.elem(b), f.elem(c));
            prop_assert_eq!((a + b) + c, a + (b + c));
            prop_assert_eq!((a * b) * c, a * (b * c));
            prop_assert_eq!(a * (b + c), a * b + a * c);
            prop_assert_eq!(a - b + b, a);
            prop_assert_eq!(a + (-a), f.zero());
            if !a.is_zero() {
                prop_assert_eq!(a.inv().unwrap().inv().unwrap(), a);
                prop_assert_eq!(a.pow(f.modulus() - 1), f.one());
            }
        }

        #[test]
        fn fixed_point_round_trip(x in -1000.0f64..1000.0) {
            let f = PrimeField::smallest_above(8 * 9 * (1u64 << 26)).unwrap();
            let codec = FixedPointCodec::new(f, 1 << 16, 1 << 26);
            let y = codec.decode_average(codec.encode(x).unwrap(), 3).unwrap();
            prop_assert!((y - x).abs() <= 1.0 / (1u64 << 16) as f64);
        }
    }
}
