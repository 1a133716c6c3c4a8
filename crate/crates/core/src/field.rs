//! Prime-field arithmetic and signed fixed-point encoding.
//!
//! All protocol arithmetic happens in `Z_p` for a prime `p` of at most 48 bits.
//! Reals are carried as `round(x * 2^f) mod p`, with the upper half of the field
//! standing for negative values.

use serde::{Deserialize, Serialize};
use std::fmt;
use std::ops::{Add, AddAssign, Mul, Neg, Sub, SubAssign};
use thiserror::Error;

/// Default modulus: a 41-bit prime.
pub const DEFAULT_MODULUS: u64 = 2_061_584_302_081;
/// Default number of fractional bits.
pub const DEFAULT_FRAC_BITS: u32 = 11;
/// Default bound on the magnitude of encodable reals.
pub const DEFAULT_SAFE_RANGE: f64 = (1u64 << 20) as f64;

/// Largest modulus accepted (deterministic primality is exact below this).
pub const MAX_MODULUS: u64 = 1 << 48;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FieldError {
    #[error("modulus {0} is not prime")]
    NotPrime(u64),
    #[error("modulus {0} exceeds the supported 48-bit range")]
    ModulusTooLarge(u64),
    #[error("fractional bits must be at least 1")]
    ZeroFracBits,
    #[error("modulus {modulus} too small for {frac_bits} fractional bits (need p > 2^(2f+4))")]
    ModulusTooSmall { modulus: u64, frac_bits: u32 },
    #[error("operands live in different fields (p={0} vs p={1})")]
    ModulusMismatch(u64, u64),
    #[error("value {value} outside the safe fixed-point range (|x| < {bound})")]
    OutOfRange { value: f64, bound: f64 },
}

/// Modulus and fixed-point scale shared by every party.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FieldParams {
    modulus: u64,
    frac_bits: u32,
}

impl Default for FieldParams {
    fn default() -> Self {
        FieldParams {
            modulus: DEFAULT_MODULUS,
            frac_bits: DEFAULT_FRAC_BITS,
        }
    }
}

impl FieldParams {
    pub fn new(modulus: u64, frac_bits: u32) -> Result<Self, FieldError> {
        if modulus >= MAX_MODULUS {
            return Err(FieldError::ModulusTooLarge(modulus));
        }
        if !is_prime(modulus) {
            return Err(FieldError::NotPrime(modulus));
        }
        if frac_bits == 0 {
            return Err(FieldError::ZeroFracBits);
        }
        let need = 2 * frac_bits + 4;
        if need >= 64 || modulus <= (1u64 << need) {
            return Err(FieldError::ModulusTooSmall { modulus, frac_bits });
        }
        Ok(FieldParams { modulus, frac_bits })
    }

    pub fn modulus(&self) -> u64 {
        self.modulus
    }

    pub fn frac_bits(&self) -> u32 {
        self.frac_bits
    }

    /// `2^f` as a float.
    pub fn scale(&self) -> f64 {
        (1u64 << self.frac_bits) as f64
    }

    /// Element `v mod p`.
    pub fn element(&self, v: u64) -> FieldElement {
        FieldElement::new(v, self.modulus)
    }

    /// Map a signed integer into the field (negatives to the upper half).
    pub fn from_signed(&self, v: i128) -> FieldElement {
        FieldElement::from_signed(v, self.modulus)
    }

    pub fn zero(&self) -> FieldElement {
        FieldElement::zero(self.modulus)
    }

    /// Largest real magnitude whose encoding stays in the lower/upper half split.
    pub fn max_encodable(&self) -> f64 {
        self.modulus as f64 / (1u64 << (self.frac_bits + 1)) as f64
    }
}

/// Deterministic Miller-Rabin, exact for all n < 3.4e14 (> 2^48).
pub fn is_prime(n: u64) -> bool {
    if n < 2 {
        return false;
    }
    const SMALL: [u64; 7] = [2, 3, 5, 7, 11, 13, 17];
    for &q in &SMALL {
        if n.is_multiple_of(q) {
            return n == q;
        }
    }
    let mut d = n - 1;
    let mut s = 0;
    while d.is_multiple_of(2) {
        d /= 2;
        s += 1;
    }
    'witness: for &a in &SMALL {
        let mut x = pow_mod(a, d, n);
        if x == 1 || x == n - 1 {
            continue;
        }
        for _ in 1..s {
            x = mul_mod(x, x, n);
            if x == n - 1 {
                continue 'witness;
            }
        }
        return false;
    }
    true
}

fn mul_mod(a: u64, b: u64, m: u64) -> u64 {
    ((a as u128 * b as u128) % m as u128) as u64
}

fn pow_mod(mut base: u64, mut exp: u64, m: u64) -> u64 {
    let mut acc = 1 % m;
    base %= m;
    while exp > 0 {
        if exp & 1 == 1 {
            acc = mul_mod(acc, base, m);
        }
        base = mul_mod(base, base, m);
        exp >>= 1;
    }
    acc
}

/// An element of `Z_p`. Always reduced.
///
/// The std operator impls panic when the moduli differ; [`field_arith`] is the
/// checked entry point.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct FieldElement {
    value: u64,
    modulus: u64,
}

impl fmt::Debug for FieldElement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} (mod {})", self.value, self.modulus)
    }
}

impl fmt::Display for FieldElement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.value)
    }
}

impl FieldElement {
    pub fn new(value: u64, modulus: u64) -> Self {
        FieldElement {
            value: value % modulus,
            modulus,
        }
    }

    pub fn zero(modulus: u64) -> Self {
        FieldElement { value: 0, modulus }
    }

    pub fn from_signed(v: i128, modulus: u64) -> Self {
        let m = modulus as i128;
        FieldElement {
            value: v.rem_euclid(m) as u64,
            modulus,
        }
    }

    pub fn value(self) -> u64 {
        self.value
    }

    pub fn modulus(self) -> u64 {
        self.modulus
    }

    /// Signed representative: `[0, p/2]` maps to itself, the rest to `v - p`.
    pub fn to_signed(self) -> i64 {
        if self.value <= self.modulus / 2 {
            self.value as i64
        } else {
            self.value as i64 - self.modulus as i64
        }
    }

    pub fn is_zero(self) -> bool {
        self.value == 0
    }

    /// Same value, re-tagged check: fails when moduli differ.
    pub fn check_same_field(self, other: FieldElement) -> Result<(), FieldError> {
        if self.modulus != other.modulus {
            Err(FieldError::ModulusMismatch(self.modulus, other.modulus))
        } else {
            Ok(())
        }
    }

    pub fn to_le_bytes(self) -> [u8; 8] {
        self.value.to_le_bytes()
    }

    pub fn from_le_bytes(bytes: [u8; 8], modulus: u64) -> Self {
        FieldElement::new(u64::from_le_bytes(bytes), modulus)
    }

    fn assert_same(self, other: FieldElement) {
        assert_eq!(
            self.modulus, other.modulus,
            "field element modulus mismatch"
        );
    }
}

impl Add for FieldElement {
    type Output = FieldElement;
    fn add(self, rhs: FieldElement) -> FieldElement {
        self.assert_same(rhs);
        let s = self.value + rhs.value;
        FieldElement {
            value: if s >= self.modulus { s - self.modulus } else { s },
            modulus: self.modulus,
        }
    }
}

impl Sub for FieldElement {
    type Output = FieldElement;
    fn sub(self, rhs: FieldElement) -> FieldElement {
        self.assert_same(rhs);
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
    type Output = FieldElement;
    fn mul(self, rhs: FieldElement) -> FieldElement {
        self.assert_same(rhs);
        FieldElement {
            value: mul_mod(self.value, rhs.value, self.modulus),
            modulus: self.modulus,
        }
    }
}

impl Neg for FieldElement {
    type Output = FieldElement;
    fn neg(self) -> FieldElement {
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
    fn add_assign(&mut self, rhs: FieldElement) {
        *self = *self + rhs;
    }
}

impl SubAssign for FieldElement {
    fn sub_assign(&mut self, rhs: FieldElement) {
        *self = *self - rhs;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FieldOp {
    Add,
    Sub,
    Mul,
    Neg,
}

/// Checked binary arithmetic. `Neg` ignores `b` except for the modulus check.
pub fn field_arith(
    a: FieldElement,
    b: FieldElement,
    op: FieldOp,
) -> Result<FieldElement, FieldError> {
    a.check_same_field(b)?;
    Ok(match op {
        FieldOp::Add => a + b,
        FieldOp::Sub => a - b,
        FieldOp::Mul => a * b,
        FieldOp::Neg => -a,
    })
}

/// Fixed-point codec over a field.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FixedPointCodec {
    params: FieldParams,
    safe_range: f64,
}

impl FixedPointCodec {
    pub fn new(params: FieldParams) -> Self {
        Self::with_safe_range(params, DEFAULT_SAFE_RANGE)
    }

    /// The effective bound is the smaller of `safe_range` and `p / 2^(f+1)`.
    pub fn with_safe_range(params: FieldParams, safe_range: f64) -> Self {
        FixedPointCodec {
            params,
            safe_range: safe_range.min(params.max_encodable()),
        }
    }

    pub fn params(&self) -> FieldParams {
        self.params
    }

    pub fn safe_range(&self) -> f64 {
        self.safe_range
    }

    /// Signed fixed-point integer `round(x * 2^f)`, range-checked.
    pub fn quantize(&self, x: f64) -> Result<i64, FieldError> {
        if !x.is_finite() || x.abs() >= self.safe_range {
            return Err(FieldError::OutOfRange {
                value: x,
                bound: self.safe_range,
            });
        }
        Ok((x * self.params.scale()).round() as i64)
    }

    pub fn encode(&self, x: f64) -> Result<FieldElement, FieldError> {
        Ok(self.params.from_signed(self.quantize(x)? as i128))
    }

    pub fn decode(&self, e: FieldElement) -> f64 {
        e.to_signed() as f64 / self.params.scale()
    }

    /// Decode a value carried at scale `2^(2f)`.
    pub fn decode_double(&self, e: FieldElement) -> f64 {
        e.to_signed() as f64 / (self.params.scale() * self.params.scale())
    }

    /// Plaintext truncation from scale `2f` back to `f`: signed floor division.
    pub fn truncate(&self, e: FieldElement) -> FieldElement {
        let s = e.to_signed() >> self.params.frac_bits;
        self.params.from_signed(s as i128)
    }
}

/// Floor division of a signed fixed-point integer by `2^f`.
pub fn truncate_signed(v: i128, frac_bits: u32) -> i128 {
    v >> frac_bits
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> u64 {
        97
    }

    #[test]
    fn small_field_examples() {
        let p = small();
        let a = FieldElement::new(50, p);
        let b = FieldElement::new(60, p);
        assert_eq!(field_arith(a, b, FieldOp::Add).unwrap().value(), 13);
        let c = FieldElement::new(3, p);
        let d = FieldElement::new(40, p);
        assert_eq!(field_arith(c, d, FieldOp::Mul).unwrap().value(), 23);
    }

    #[test]
    fn negation_in_default_field() {
        let params = FieldParams::default();
        let x = params.element(2048);
        let n = -x;
        assert_eq!(n.value(), 2_061_584_300_033);
        assert!((n + x).is_zero());
    }

    #[test]
    fn mismatch_is_reported() {
        let a = FieldElement::new(1, 97);
        let b = FieldElement::new(1, 101);
        assert_eq!(
            field_arith(a, b, FieldOp::Add),
            Err(FieldError::ModulusMismatch(97, 101))
        );
    }

    #[test]
    fn exhaustive_ring_laws_mod_97() {
        let p = small();
        let all: Vec<FieldElement> = (0..p).map(|v| FieldElement::new(v, p)).collect();
        for &a in &all {
            assert_eq!((-a + a).value(), 0);
            for &b in &all {
                assert_eq!(a + b, b + a);
                assert_eq!(a * b, b * a);
                assert!((a + b).value() < p && (a * b).value() < p && (a - b).value() < p);
                assert_eq!((a - b) + b, a);
                for &c in &all {
                    assert_eq!((a + b) + c, a + (b + c));
                    assert_eq!((a * b) * c, a * (b * c));
                    assert_eq!(a * (b + c), a * b + a * c);
                }
            }
        }
    }

    #[test]
    fn primality() {
        assert!(is_prime(DEFAULT_MODULUS));
        assert!(is_prime(97));
        assert!(!is_prime(1));
        assert!(!is_prime(DEFAULT_MODULUS + 2));
        // Strong pseudoprime to bases 2..=13.
        assert!(!is_prime(3_215_031_751));
        // 2^47 - 115 is the largest prime below 2^47.
        assert!(is_prime((1u64 << 47) - 115));
        let trial = |n: u64| n > 1 && (2..).take_while(|d| d * d <= n).all(|d| !n.is_multiple_of(d));
        for n in 0..5000 {
            assert_eq!(is_prime(n), trial(n), "n={n}");
        }
    }

    #[test]
    fn params_validation() {
        assert!(FieldParams::new(DEFAULT_MODULUS, 11).is_ok());
        assert_eq!(FieldParams::new(96, 1), Err(FieldError::NotPrime(96)));
        assert_eq!(FieldParams::new(97, 0), Err(FieldError::ZeroFracBits));
        assert!(matches!(
            FieldParams::new(97, 2),
            Err(FieldError::ModulusTooSmall { .. })
        ));
        assert!(FieldParams::new(97, 1).is_ok());
    }

    #[test]
    fn codec_examples() {
        let codec = FixedPointCodec::new(FieldParams::default());
        assert_eq!(codec.encode(1.5).unwrap().value(), 3072);
        assert_eq!(codec.encode(-1.0).unwrap().value(), 2_061_584_300_033);
        assert_eq!(codec.encode(0.0).unwrap().value(), 0);
        let p = FieldParams::default();
        assert_eq!(codec.decode(p.element(3072)), 1.5);
        assert_eq!(codec.decode(p.element(2_061_584_300_033)), -1.0);
        assert_eq!(codec.decode(p.element(1)), 1.0 / 2048.0);
        assert!(matches!(
            codec.encode(2f64.powi(21)),
            Err(FieldError::OutOfRange { .. })
        ));
        assert!(codec.encode(f64::NAN).is_err());
    }

    #[test]
    fn truncation_examples() {
        let codec = FixedPointCodec::new(FieldParams::default());
        let p = FieldParams::default();
        let prod = codec.encode(2.0).unwrap() * codec.encode(0.5).unwrap();
        assert_eq!(prod.value(), 4_194_304);
        assert_eq!(codec.truncate(prod).value(), 2048);
        let prod = codec.encode(-1.5).unwrap() * codec.encode(2.0).unwrap();
        let t = codec.truncate(prod);
        assert_eq!(t.value(), p.modulus() - 6144);
        assert_eq!(codec.decode(t), -3.0);
        assert_eq!(codec.truncate(p.zero()).value(), 0);
    }
}
