//! Two's-complement fixed-point arithmetic with explicit width and rounding.
//!
//! Every quantizing step in the model goes through [`requantize`]: round to
//! nearest with ties away from zero, then saturate to the destination width.
//! Nothing wraps here; the phase accumulator is the only wrapping register in
//! the chain and it lives in `tonegen`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Bit layout of a signed fixed-point number: `width` total bits, of which
/// `frac` are fractional.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct QFormat {
    pub width: u32,
    pub frac: u32,
}

impl QFormat {
    /// I/Q samples between stages.
    pub const SAMPLE: QFormat = QFormat { width: 16, frac: 15 };
    /// Phasor table entries.
    pub const PHASOR: QFormat = QFormat { width: 18, frac: 17 };
    /// DDC output: the exact window sum of Q2.30 products, divided by the
    /// window length with 16 extra fractional bits.
    pub const DDC_OUT: QFormat = QFormat { width: 48, frac: 46 };

    pub fn new(width: u32, frac: u32) -> Result<Self> {
        if !(2..=64).contains(&width) {
            return Err(Error::Unsupported(format!("fixed-point width {width} not in 2..=64")));
        }
        if frac > 62 {
            return Err(Error::Unsupported(format!("{frac} fractional bits exceeds 62")));
        }
        Ok(QFormat { width, frac })
    }

    #[inline]
    pub const fn max_raw(self) -> i64 {
        if self.width == 64 {
            i64::MAX
        } else {
            (1i64 << (self.width - 1)) - 1
        }
    }

    #[inline]
    pub const fn min_raw(self) -> i64 {
        if self.width == 64 {
            i64::MIN
        } else {
            -(1i64 << (self.width - 1))
        }
    }

    /// Value of one least significant bit.
    pub fn lsb(self) -> f64 {
        (-(self.frac as f64)).exp2()
    }

    pub fn contains(self, raw: i64) -> bool {
        raw >= self.min_raw() && raw <= self.max_raw()
    }

    pub fn to_f64(self, raw: i64) -> f64 {
        raw as f64 * self.lsb()
    }

    /// Quantizes a real value. `f64::round` already rounds ties away from zero.
    pub fn quantize(self, x: f64) -> (i64, bool) {
        let scaled = (x * (self.frac as f64).exp2()).round();
        if scaled > self.max_raw() as f64 {
            (self.max_raw(), true)
        } else if scaled < self.min_raw() as f64 {
            (self.min_raw(), true)
        } else {
            (scaled as i64, false)
        }
    }
}

/// Arithmetic right shift by `shift` bits, rounding to nearest with ties
/// away from zero.
#[inline]
pub fn round_shift(v: i128, shift: u32) -> i128 {
    if shift == 0 {
        return v;
    }
    let half = 1i128 << (shift - 1);
    if v >= 0 {
        (v + half) >> shift
    } else {
        -((-v + half) >> shift)
    }
}

/// Clamps `v` into `width` bits. The flag is set when clamping happened.
#[inline]
pub fn saturate(v: i128, fmt: QFormat) -> (i64, bool) {
    let (lo, hi) = (fmt.min_raw() as i128, fmt.max_raw() as i128);
    if v > hi {
        (hi as i64, true)
    } else if v < lo {
        (lo as i64, true)
    } else {
        (v as i64, false)
    }
}

/// Moves an exact value with `from_frac` fractional bits into `to`.
#[inline]
pub fn requantize(v: i128, from_frac: u32, to: QFormat) -> (i64, bool) {
    let aligned = if from_frac >= to.frac {
        round_shift(v, from_frac - to.frac)
    } else {
        v << (to.frac - from_frac)
    };
    saturate(aligned, to)
}

/// Signed integer divide rounding to nearest, ties away from zero.
#[inline]
pub fn round_div(num: i128, den: i128) -> i128 {
    debug_assert!(den > 0);
    let q = num.abs() * 2 + den;
    let r = q / (2 * den);
    if num < 0 {
        -r
    } else {
        r
    }
}

/// Running count of saturation events.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SaturationCount(pub u64);

impl SaturationCount {
    #[inline]
    pub fn note(&mut self, saturated: bool) {
        self.0 += saturated as u64;
    }
}

/// A quantized scalar together with its bit layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct FixedSample {
    value: i64,
    format: QFormat,
}

impl FixedSample {
    pub fn new(value: i64, format: QFormat) -> Result<Self> {
        if !format.contains(value) {
            return Err(Error::Unsupported(format!(
                "raw value {value} does not fit {} bits",
                format.width
            )));
        }
        Ok(FixedSample { value, format })
    }

    /// Quantizes `x`, saturating if it is out of range.
    pub fn from_f64(x: f64, format: QFormat) -> Self {
        FixedSample {
            value: format.quantize(x).0,
            format,
        }
    }

    pub fn value(self) -> i64 {
        self.value
    }

    pub fn format(self) -> QFormat {
        self.format
    }

    pub fn to_f64(self) -> f64 {
        self.format.to_f64(self.value)
    }
}

/// Fixed-point product: exact integer multiply, then rounded and saturated
/// into `out_width`/`out_frac`.
pub fn fx_mul(a: FixedSample, b: FixedSample, out_width: u32, out_frac: u32) -> FixedSample {
    fx_mul_checked(a, b, QFormat { width: out_width, frac: out_frac }).0
}

/// Like [`fx_mul`], also reporting whether the result saturated.
pub fn fx_mul_checked(a: FixedSample, b: FixedSample, out: QFormat) -> (FixedSample, bool) {
    let exact = a.value as i128 * b.value as i128;
    let (value, sat) = requantize(exact, a.format.frac + b.format.frac, out);
    (FixedSample { value, format: out }, sat)
}

#[cfg(test)]
mod tests {
    use super::*;

    const Q15: QFormat = QFormat::SAMPLE;

    #[test]
    fn one_times_one_saturates() {
        let one = FixedSample::from_f64(1.0, Q15);
        assert_eq!(one.value(), 32767);
        let full = FixedSample::new(-32768, Q15).unwrap();
        let (p, sat) = fx_mul_checked(full, full, Q15);
        assert!(sat);
        assert_eq!(p.value(), 32767);
    }

    #[test]
    fn half_times_half_is_exact_quarter() {
        let h = FixedSample::from_f64(0.5, Q15);
        let p = fx_mul(h, h, 16, 15);
        assert_eq!(p.value(), 8192);
        assert_eq!(p.to_f64(), 0.25);
    }

    #[test]
    fn rounding_ties_go_away_from_zero() {
        assert_eq!(round_shift(3, 1), 2);
        assert_eq!(round_shift(-3, 1), -2);
        assert_eq!(round_shift(5, 2), 1);
        assert_eq!(round_shift(6, 2), 2);
        assert_eq!(round_shift(-6, 2), -2);
        assert_eq!(round_div(5, 2), 3);
        assert_eq!(round_div(-5, 2), -3);
        assert_eq!(round_div(7, 3), 2);
    }

    #[test]
    fn widening_requantize_is_exact() {
        let (v, sat) = requantize(-3, 2, QFormat { width: 16, frac: 5 });
        assert_eq!((v, sat), (-24, false));
    }

    #[test]
    fn new_rejects_out_of_range() {
        assert!(FixedSample::new(40000, Q15).is_err());
        assert!(QFormat::new(65, 3).is_err());
    }
}
