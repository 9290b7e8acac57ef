//! Floating-point formats used by the solver and a software binary16.
//!
//! Binary16 arithmetic is emulated: operands are widened to binary64, the
//! operation is carried out there and the result is rounded once to the
//! nearest binary16 (ties to even). Sums and products of two binary16 values
//! are exact in binary64, so this is a correctly rounded half-precision unit.
//! Fused multiply-add needs one extra correction step, see [`Fp16::fma`].

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Which IEEE 754 binary format a container holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Precision {
    Fp16,
    Fp32,
    Fp64,
}

impl Precision {
    pub const ALL: [Precision; 3] = [Precision::Fp16, Precision::Fp32, Precision::Fp64];

    /// Storage size of one value.
    pub const fn bytes_per_value(self) -> usize {
        match self {
            Precision::Fp16 => 2,
            Precision::Fp32 => 4,
            Precision::Fp64 => 8,
        }
    }

    /// Half the spacing of representable numbers just above 1.
    pub fn unit_roundoff(self) -> f64 {
        match self {
            Precision::Fp16 => 2f64.powi(-11),
            Precision::Fp32 => 2f64.powi(-24),
            Precision::Fp64 => 2f64.powi(-53),
        }
    }

    /// Smallest positive normal value.
    pub fn min_positive_normal(self) -> f64 {
        match self {
            Precision::Fp16 => 2f64.powi(-14),
            Precision::Fp32 => f32::MIN_POSITIVE as f64,
            Precision::Fp64 => f64::MIN_POSITIVE,
        }
    }

    /// Largest finite value.
    pub fn max_finite(self) -> f64 {
        match self {
            Precision::Fp16 => 65504.0,
            Precision::Fp32 => f32::MAX as f64,
            Precision::Fp64 => f64::MAX,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Precision::Fp16 => "fp16",
            Precision::Fp32 => "fp32",
            Precision::Fp64 => "fp64",
        }
    }
}

impl fmt::Display for Precision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Precision {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "fp16" | "half" => Ok(Precision::Fp16),
            "fp32" | "single" => Ok(Precision::Fp32),
            "fp64" | "double" => Ok(Precision::Fp64),
            other => Err(format!("unknown precision `{other}`")),
        }
    }
}

/// Arithmetic switches mirroring the device compiler flags.
///
/// The device flush flag only affects binary32, while native half arithmetic
/// keeps binary16 subnormals, so the two formats are switched separately.
/// binary64 always keeps its subnormals.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ArithmeticPolicy {
    /// Flush subnormal binary16 results to a signed zero.
    pub flush_subnormals_to_zero: bool,
    /// Flush subnormal binary32 results to a signed zero.
    pub flush_f32_subnormals_to_zero: bool,
    pub fused_multiply_add: bool,
}

impl Default for ArithmeticPolicy {
    fn default() -> Self {
        Self {
            flush_subnormals_to_zero: false,
            flush_f32_subnormals_to_zero: true,
            fused_multiply_add: true,
        }
    }
}

/// An IEEE 754 binary16 value stored as its bit pattern.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Default)]
#[repr(transparent)]
pub struct Fp16(u16);

const FP16_SIGN: u16 = 0x8000;
const FP16_EXP: u16 = 0x7c00;
const FP16_FRAC: u16 = 0x03ff;
const FP16_NAN: u16 = 0x7e00;

impl Fp16 {
    pub const ZERO: Fp16 = Fp16(0);
    pub const ONE: Fp16 = Fp16(0x3c00);
    pub const INFINITY: Fp16 = Fp16(0x7c00);
    pub const NEG_INFINITY: Fp16 = Fp16(0xfc00);
    pub const NAN: Fp16 = Fp16(FP16_NAN);
    pub const MAX: Fp16 = Fp16(0x7bff);
    pub const MIN_POSITIVE: Fp16 = Fp16(0x0400);
    pub const MIN_POSITIVE_SUBNORMAL: Fp16 = Fp16(0x0001);

    pub const fn from_bits(bits: u16) -> Self {
        Fp16(bits)
    }

    pub const fn to_bits(self) -> u16 {
        self.0
    }

    pub fn is_nan(self) -> bool {
        self.0 & FP16_EXP == FP16_EXP && self.0 & FP16_FRAC != 0
    }

    pub fn is_infinite(self) -> bool {
        self.0 & !FP16_SIGN == FP16_EXP
    }

    pub fn is_finite(self) -> bool {
        self.0 & FP16_EXP != FP16_EXP
    }

    pub fn is_subnormal(self) -> bool {
        self.0 & FP16_EXP == 0 && self.0 & FP16_FRAC != 0
    }

    pub fn is_sign_negative(self) -> bool {
        self.0 & FP16_SIGN != 0
    }

    /// Exact conversion to binary32.
    #[inline]
    pub fn to_f32(self) -> f32 {
        let h = self.0 as u32;
        let sign = (h & 0x8000) << 16;
        let exp = (h >> 10) & 0x1f;
        let frac = h & 0x3ff;
        match exp {
            0 => {
                // frac * 2^-24 is exact in binary32
                let mag = frac as f32 * f32::from_bits(0x3380_0000);
                f32::from_bits(mag.to_bits() | sign)
            }
            0x1f => f32::from_bits(sign | 0x7f80_0000 | (frac << 13)),
            _ => f32::from_bits(sign | ((exp + 112) << 23) | (frac << 13)),
        }
    }

    /// Exact conversion to binary64.
    #[inline]
    pub fn to_f64(self) -> f64 {
        self.to_f32() as f64
    }

    /// Rounds a binary64 value to the nearest binary16.
    #[inline]
    pub fn from_f64(x: f64, policy: ArithmeticPolicy) -> Self {
        round_to_fp16(x, policy)
    }

    pub fn add(self, rhs: Fp16, policy: ArithmeticPolicy) -> Fp16 {
        round_to_fp16(self.to_f64() + rhs.to_f64(), policy)
    }

    pub fn sub(self, rhs: Fp16, policy: ArithmeticPolicy) -> Fp16 {
        round_to_fp16(self.to_f64() - rhs.to_f64(), policy)
    }

    pub fn mul(self, rhs: Fp16, policy: ArithmeticPolicy) -> Fp16 {
        round_to_fp16(self.to_f64() * rhs.to_f64(), policy)
    }

    /// `self * b + c` with a single rounding.
    ///
    /// The product is exact in binary64 but the sum may not be, so the
    /// rounding error of the binary64 sum is recovered with TwoSum and used
    /// to break the tie when the binary64 sum lands on a binary16 midpoint.
    #[inline]
    pub fn fma(self, b: Fp16, c: Fp16, policy: ArithmeticPolicy) -> Fp16 {
        Fp16(value_to_bits(fma_fp16_value(
            self.to_f64(),
            b.to_f64(),
            c.to_f64(),
            policy,
        )))
    }

    /// Multiply-add honoring the policy's fused flag.
    #[inline]
    pub fn mul_add(self, b: Fp16, c: Fp16, policy: ArithmeticPolicy) -> Fp16 {
        if policy.fused_multiply_add {
            self.fma(b, c, policy)
        } else {
            self.mul(b, policy).add(c, policy)
        }
    }
}

impl fmt::Debug for Fp16 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Fp16({:?} / {:#06x})", self.to_f32(), self.0)
    }
}

impl fmt::Display for Fp16 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(&self.to_f32(), f)
    }
}

impl PartialOrd for Fp16 {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        self.to_f32().partial_cmp(&other.to_f32())
    }
}

/// Nearest binary16 to `x`, ties to even, with IEEE overflow to infinity.
///
/// NaN inputs produce the canonical quiet NaN. With flushing enabled a
/// result that would be subnormal becomes a zero of the same sign.
#[inline]
pub fn round_to_fp16(x: f64, policy: ArithmeticPolicy) -> Fp16 {
    Fp16(value_to_bits(round_fp16_value(x, 0.0, policy)))
}

/// Widens a binary16 value to binary64. Always exact.
#[inline]
pub fn widen(x: Fp16) -> f64 {
    x.to_f64()
}

const FP16_MIN_NORMAL: f64 = 6.103515625e-5;
/// Smallest magnitude that rounds to infinity (the midpoint above 65504).
const FP16_OVERFLOW: f64 = 65520.0;

/// Rounds `s + err` to binary16 and returns the result as a binary64 value
/// (exactly representable in binary16, or infinite, or NaN).
///
/// `err` must be zero or the exact rounding error of a binary64 operation
/// that produced `s`, so `|err| <= ulp(s)/2`. It only matters when `s` sits
/// exactly on a binary16 rounding boundary.
#[inline(always)]
pub(crate) fn round_fp16_value(s: f64, err: f64, policy: ArithmeticPolicy) -> f64 {
    let a = s.abs();
    let r = if a < FP16_OVERFLOW {
        // adding 2^(e+42) leaves exactly 10 fraction bits below a's leading
        // bit, so the binary64 addition performs the binary16 rounding
        let e = (((a.to_bits() >> 52) as i64) - 1023).max(-14);
        let c = f64::from_bits(((e + 42 + 1023) as u64) << 52);
        let mut m = (a + c) - c;
        let half = c * (0.5 * f64::EPSILON);
        let tie = (err != 0.0) & ((a - m).abs() == half);
        if tie {
            m = if (err > 0.0) == (s > 0.0) {
                a + half
            } else {
                a - half
            };
        }
        m
    } else if a == FP16_OVERFLOW && err != 0.0 && (err > 0.0) != (s > 0.0) {
        65504.0
    } else if a.is_nan() {
        return f64::NAN;
    } else {
        f64::INFINITY
    };
    let r = if policy.flush_subnormals_to_zero && r < FP16_MIN_NORMAL {
        0.0
    } else {
        r
    };
    r.copysign(s)
}

/// Bit pattern of a binary64 value that is exactly representable in binary16.
#[inline(always)]
pub(crate) fn value_to_bits(v: f64) -> u16 {
    let bits = v.to_bits();
    let sign = ((bits >> 48) & 0x8000) as u16;
    let a = v.abs();
    let mag = if !(a < FP16_MIN_NORMAL) {
        if a.is_nan() {
            return FP16_NAN;
        }
        if a == f64::INFINITY {
            FP16_EXP
        } else {
            let e = ((a.to_bits() >> 52) as u16).wrapping_sub(1023 - 15);
            (e << 10) | ((a.to_bits() >> 42) & 0x3ff) as u16
        }
    } else {
        // multiples of 2^-24
        (a * 16_777_216.0) as u16
    };
    sign | mag
}

/// `a * b + c` on binary16 values held in binary64, rounded once.
///
/// The product is exact in binary64; TwoSum recovers the rounding error of
/// the sum, which settles the rare case of a sum landing on a midpoint.
#[inline(always)]
pub(crate) fn fma_fp16_value(a: f64, b: f64, c: f64, policy: ArithmeticPolicy) -> f64 {
    let p = a * b;
    let s = p + c;
    let bb = s - p;
    let err = (p - (s - bb)) + (c - bb);
    round_fp16_value(s, err, policy)
}

/// `a * b + c` on binary16 values held in binary64, honoring the fused flag.
#[inline(always)]
pub(crate) fn mul_add_fp16_value(a: f64, b: f64, c: f64, policy: ArithmeticPolicy) -> f64 {
    if policy.fused_multiply_add {
        fma_fp16_value(a, b, c, policy)
    } else {
        // a rounded product and c span at most 40 bits, so the sum is exact
        round_fp16_value(round_fp16_value(a * b, 0.0, policy) + c, 0.0, policy)
    }
}

/// Binary64 value of every binary16 bit pattern.
pub(crate) fn widen_table() -> &'static [f64] {
    static TABLE: std::sync::OnceLock<Vec<f64>> = std::sync::OnceLock::new();
    TABLE.get_or_init(|| (0..=u16::MAX).map(|b| Fp16(b).to_f64()).collect())
}

/// Rounds `s + err` where `s` is a binary64 sum and `err` its exact rounding
/// error (`|err| <= ulp(s)/2`).
#[cfg(test)]
fn round_to_fp16_with_residual(s: f64, err: f64, policy: ArithmeticPolicy) -> Fp16 {
    Fp16(value_to_bits(round_fp16_value(s, err, policy)))
}

/// Scalar arithmetic shared by all three storage formats.
///
/// Every operation rounds its result to `Self` according to the policy.
pub trait Real: Copy + PartialEq + fmt::Debug + Send + Sync + 'static {
    const PRECISION: Precision;
    const ZERO: Self;

    fn from_f64(x: f64, policy: ArithmeticPolicy) -> Self;
    fn to_f64(self) -> f64;
    fn add(self, rhs: Self, policy: ArithmeticPolicy) -> Self;
    fn sub(self, rhs: Self, policy: ArithmeticPolicy) -> Self;
    fn mul(self, rhs: Self, policy: ArithmeticPolicy) -> Self;
    /// `self * b + c` rounded once.
    fn fma(self, b: Self, c: Self, policy: ArithmeticPolicy) -> Self;
    fn is_finite(self) -> bool;

    #[inline]
    fn mul_add(self, b: Self, c: Self, policy: ArithmeticPolicy) -> Self {
        if policy.fused_multiply_add {
            self.fma(b, c, policy)
        } else {
            self.mul(b, policy).add(c, policy)
        }
    }
}

impl Real for Fp16 {
    const PRECISION: Precision = Precision::Fp16;
    const ZERO: Self = Fp16::ZERO;

    #[inline]
    fn from_f64(x: f64, policy: ArithmeticPolicy) -> Self {
        round_to_fp16(x, policy)
    }
    #[inline]
    fn to_f64(self) -> f64 {
        Fp16::to_f64(self)
    }
    #[inline]
    fn add(self, rhs: Self, policy: ArithmeticPolicy) -> Self {
        Fp16::add(self, rhs, policy)
    }
    #[inline]
    fn sub(self, rhs: Self, policy: ArithmeticPolicy) -> Self {
        Fp16::sub(self, rhs, policy)
    }
    #[inline]
    fn mul(self, rhs: Self, policy: ArithmeticPolicy) -> Self {
        Fp16::mul(self, rhs, policy)
    }
    #[inline]
    fn fma(self, b: Self, c: Self, policy: ArithmeticPolicy) -> Self {
        Fp16::fma(self, b, c, policy)
    }
    #[inline]
    fn is_finite(self) -> bool {
        Fp16::is_finite(self)
    }
}

#[inline]
fn flush_f32(x: f32, policy: ArithmeticPolicy) -> f32 {
    if policy.flush_f32_subnormals_to_zero && x.is_subnormal() {
        0.0f32.copysign(x)
    } else {
        x
    }
}

impl Real for f32 {
    const PRECISION: Precision = Precision::Fp32;
    const ZERO: Self = 0.0;

    #[inline]
    fn from_f64(x: f64, policy: ArithmeticPolicy) -> Self {
        flush_f32(x as f32, policy)
    }
    #[inline]
    fn to_f64(self) -> f64 {
        self as f64
    }
    #[inline]
    fn add(self, rhs: Self, policy: ArithmeticPolicy) -> Self {
        flush_f32(self + rhs, policy)
    }
    #[inline]
    fn sub(self, rhs: Self, policy: ArithmeticPolicy) -> Self {
        flush_f32(self - rhs, policy)
    }
    #[inline]
    fn mul(self, rhs: Self, policy: ArithmeticPolicy) -> Self {
        flush_f32(self * rhs, policy)
    }
    #[inline]
    fn fma(self, b: Self, c: Self, policy: ArithmeticPolicy) -> Self {
        flush_f32(self.mul_add(b, c), policy)
    }
    #[inline]
    fn is_finite(self) -> bool {
        f32::is_finite(self)
    }
}

impl Real for f64 {
    const PRECISION: Precision = Precision::Fp64;
    const ZERO: Self = 0.0;

    #[inline]
    fn from_f64(x: f64, _policy: ArithmeticPolicy) -> Self {
        x
    }
    #[inline]
    fn to_f64(self) -> f64 {
        self
    }
    #[inline]
    fn add(self, rhs: Self, _policy: ArithmeticPolicy) -> Self {
        self + rhs
    }
    #[inline]
    fn sub(self, rhs: Self, _policy: ArithmeticPolicy) -> Self {
        self - rhs
    }
    #[inline]
    fn mul(self, rhs: Self, _policy: ArithmeticPolicy) -> Self {
        self * rhs
    }
    #[inline]
    fn fma(self, b: Self, c: Self, _policy: ArithmeticPolicy) -> Self {
        self.mul_add(b, c)
    }
    #[inline]
    fn is_finite(self) -> bool {
        f64::is_finite(self)
    }
}

/// Rounds `x` to `target` and widens it back to binary64.
pub fn round_to_precision(x: f64, target: Precision, policy: ArithmeticPolicy) -> f64 {
    match target {
        Precision::Fp16 => round_to_fp16(x, policy).to_f64(),
        Precision::Fp32 => <f32 as Real>::from_f64(x, policy) as f64,
        Precision::Fp64 => x,
    }
}
