//! Signed two's-complement fixed-point arithmetic.
//!
//! Values are carried as integer codes together with their [`FxFormat`]. All
//! conversions round to nearest (ties to even) and saturate at the format
//! limits; nothing in this module wraps around.

use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;

use crate::error::{Error, Result};

/// Word lengths supported by the datapath models.
pub const WORD_LENGTHS: [u32; 3] = [8, 16, 32];

/// Fixed-point format: total word length and number of fraction bits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct FxFormat {
    word_length: u32,
    frac_bits: u32,
}

impl FxFormat {
    pub fn new(word_length: u32, frac_bits: u32) -> Result<Self> {
        if !WORD_LENGTHS.contains(&word_length) {
            return Err(Error::Format(format!(
                "word length {word_length} not in {{8, 16, 32}}"
            )));
        }
        if frac_bits >= word_length {
            return Err(Error::Format(format!(
                "{frac_bits} fraction bits do not fit a {word_length}-bit word"
            )));
        }
        Ok(Self {
            word_length,
            frac_bits,
        })
    }

    /// Format used for signal samples: two integer bits, range about ±2.
    pub fn signal(word_length: u32) -> Result<Self> {
        Self::new(word_length, word_length.saturating_sub(2))
    }

    /// Format used for filter and window coefficients (all |c| < 1).
    pub fn coeff(word_length: u32) -> Result<Self> {
        Self::new(word_length, word_length.saturating_sub(1))
    }

    pub fn word_length(&self) -> u32 {
        self.word_length
    }

    pub fn frac_bits(&self) -> u32 {
        self.frac_bits
    }

    pub fn max_code(&self) -> i64 {
        (1i64 << (self.word_length - 1)) - 1
    }

    pub fn min_code(&self) -> i64 {
        -(1i64 << (self.word_length - 1))
    }

    pub fn resolution(&self) -> f64 {
        (-(self.frac_bits as f64)).exp2()
    }

    pub fn max_value(&self) -> f64 {
        self.dequantize(self.max_code())
    }

    pub fn min_value(&self) -> f64 {
        self.dequantize(self.min_code())
    }

    pub fn saturate(&self, code: i128) -> i64 {
        code.clamp(self.min_code() as i128, self.max_code() as i128) as i64
    }

    /// Round-to-nearest-even code of `x`, saturated to the format range.
    pub fn quantize(&self, x: f64) -> i64 {
        if x.is_nan() {
            return 0;
        }
        let scaled = (x * (self.frac_bits as f64).exp2()).round_ties_even();
        if scaled >= self.max_code() as f64 {
            self.max_code()
        } else if scaled <= self.min_code() as f64 {
            self.min_code()
        } else {
            scaled as i64
        }
    }

    pub fn dequantize(&self, code: i64) -> f64 {
        code as f64 * self.resolution()
    }

    /// Snap a real value onto this format's grid.
    pub fn snap(&self, x: f64) -> f64 {
        self.dequantize(self.quantize(x))
    }

    pub fn snap_complex(&self, z: Complex64) -> Complex64 {
        Complex64::new(self.snap(z.re), self.snap(z.im))
    }

    /// Move a code expressed with `from_frac` fraction bits into this format.
    pub fn requantize(&self, code: i128, from_frac: u32) -> i64 {
        let shifted = if from_frac >= self.frac_bits {
            round_shift(code, from_frac - self.frac_bits)
        } else {
            code << (self.frac_bits - from_frac)
        };
        self.saturate(shifted)
    }
}

impl fmt::Display for FxFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "Q{}.{}/{}",
            self.word_length - 1 - self.frac_bits,
            self.frac_bits,
            self.word_length
        )
    }
}

/// Parses `Qm.n/WL`, e.g. `Q1.14/16`; m + n + 1 must equal WL.
impl FromStr for FxFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Format(format!("malformed fixed-point format `{s}`, expected Qm.n/WL"));
        let body = s.trim().strip_prefix('Q').ok_or_else(bad)?;
        let (q, wl) = body.split_once('/').ok_or_else(bad)?;
        let (m, n) = q.split_once('.').ok_or_else(bad)?;
        let m: u32 = m.parse().map_err(|_| bad())?;
        let n: u32 = n.parse().map_err(|_| bad())?;
        let wl: u32 = wl.parse().map_err(|_| bad())?;
        if m + n + 1 != wl {
            return Err(Error::Format(format!(
                "`{s}`: {m} integer + {n} fraction + 1 sign bit != {wl}"
            )));
        }
        FxFormat::new(wl, n)
    }
}

impl serde::Serialize for FxFormat {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> serde::Deserialize<'de> for FxFormat {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Arithmetic shift right by `shift` with round-half-to-even.
pub fn round_shift(v: i128, shift: u32) -> i128 {
    if shift == 0 {
        return v;
    }
    let floor = v >> shift;
    let rem = v - (floor << shift);
    let half = 1i128 << (shift - 1);
    if rem > half || (rem == half && floor & 1 == 1) {
        floor + 1
    } else {
        floor
    }
}

/// A real fixed-point value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Fx {
    pub code: i64,
    pub fmt: FxFormat,
}

impl Fx {
    pub fn value(&self) -> f64 {
        self.fmt.dequantize(self.code)
    }
}

pub fn quantize(x: f64, fmt: FxFormat) -> Fx {
    Fx {
        code: fmt.quantize(x),
        fmt,
    }
}

pub fn dequantize(x: Fx) -> f64 {
    x.value()
}

/// Saturating addition of two values in `fmt`.
pub fn fx_add(a: Fx, b: Fx, fmt: FxFormat) -> Fx {
    debug_assert!(a.fmt == fmt && b.fmt == fmt);
    Fx {
        code: fmt.saturate(a.code as i128 + b.code as i128),
        fmt,
    }
}

/// Full-precision product, rounded back to `fmt` and saturated.
pub fn fx_mul(a: Fx, b: Fx, fmt: FxFormat) -> Fx {
    debug_assert!(a.fmt == fmt && b.fmt == fmt);
    let prod = a.code as i128 * b.code as i128;
    Fx {
        code: fmt.saturate(round_shift(prod, fmt.frac_bits)),
        fmt,
    }
}

/// Complex sample with both parts in the same format.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct FxComplex {
    pub re: i64,
    pub im: i64,
    pub fmt: FxFormat,
}

impl FxComplex {
    pub fn zero(fmt: FxFormat) -> Self {
        Self { re: 0, im: 0, fmt }
    }

    pub fn from_complex(z: Complex64, fmt: FxFormat) -> Self {
        Self {
            re: fmt.quantize(z.re),
            im: fmt.quantize(z.im),
            fmt,
        }
    }

    pub fn to_complex(&self) -> Complex64 {
        Complex64::new(self.fmt.dequantize(self.re), self.fmt.dequantize(self.im))
    }

    pub fn convert(&self, fmt: FxFormat) -> Self {
        Self {
            re: fmt.requantize(self.re as i128, self.fmt.frac_bits),
            im: fmt.requantize(self.im as i128, self.fmt.frac_bits),
            fmt,
        }
    }

    /// Multiply by a real coefficient code (in `coeff_fmt`), result in `out`.
    pub fn scale(&self, coeff: i64, coeff_fmt: FxFormat, out: FxFormat) -> Self {
        let frac = self.fmt.frac_bits + coeff_fmt.frac_bits;
        Self {
            re: out.requantize(self.re as i128 * coeff as i128, frac),
            im: out.requantize(self.im as i128 * coeff as i128, frac),
            fmt: out,
        }
    }
}

/// Double-width multiply-accumulate of sample codes against coefficient codes.
///
/// `samples[i]` is paired with `coeffs[i]`. Integer addition is associative, so
/// any evaluation order (frame convolution or a streaming delay line) yields
/// the same accumulator.
pub fn mac(samples: impl IntoIterator<Item = i64>, coeffs: &[i64]) -> i128 {
    samples
        .into_iter()
        .zip(coeffs)
        .map(|(s, &c)| s as i128 * c as i128)
        .sum()
}
