//! Per-backend sample arithmetic.
//!
//! Every chain stage is generic over [`Lane`]. [`Fx`] is the bit-accurate
//! datapath (Q1.15 samples, 18-bit phasors and taps, exact accumulators);
//! [`Fl`] is the double-precision reference running the same sequence of
//! operations without quantization.

use std::fmt::Debug;

use num_complex::{Complex, Complex64};

use crate::error::{Error, Result};
use crate::fixed::{requantize, round_div, saturate, QFormat, SaturationCount};
use crate::sample::{Backend, IqStream, Samples};

/// Accumulator width for summing tones and bands before rounding back to a
/// sample.
pub const COMBINE_ACC: QFormat = QFormat { width: 26, frac: 15 };

/// Width of quantized FIR taps.
pub const TAP_WIDTH: u32 = 18;

pub trait Lane: Copy + Default + Send + Sync + Debug + 'static {
    /// One real sample component.
    type S: Copy + Default + PartialEq + Send + Sync + Debug;
    /// One tap or phasor component.
    type T: Copy + Default + Send + Sync + Debug;
    /// DDC window accumulator component.
    type Acc: Copy + Default + Send + Sync + Debug;
    /// DDC output component.
    type Out: Copy + Default + PartialEq + Send + Sync + Debug;

    const BACKEND: Backend;

    fn sample(x: f64, sat: &mut SaturationCount) -> Self::S;
    fn sample_to_f64(x: Self::S) -> f64;
    fn phasor(z: Complex64) -> Complex<Self::T>;
    /// Quantizes taps; returns them with their fractional bit count.
    fn taps(h: &[f64]) -> (Vec<Self::T>, u32);
    fn tap_to_f64(t: Self::T, frac: u32) -> f64;

    fn neg(x: Self::S, sat: &mut SaturationCount) -> Self::S;
    /// `x · p` rounded back to a sample.
    fn cmul(x: Complex<Self::S>, p: Complex<Self::T>, sat: &mut SaturationCount) -> Complex<Self::S>;
    /// Real sample times a phasor.
    fn rmul(x: Self::S, p: Complex<Self::T>, sat: &mut SaturationCount) -> Complex<Self::S>;
    /// `Σ taps[j] · window[j]` rounded back to a sample.
    fn dot(taps: &[Self::T], frac: u32, window: &[Complex<Self::S>], sat: &mut SaturationCount) -> Complex<Self::S>;
    /// Sum of `xs` scaled by `2^-shift`.
    fn sum(xs: &[Complex<Self::S>], shift: u32, sat: &mut SaturationCount) -> Complex<Self::S>;

    /// `acc += x · conj(tone)`.
    fn ddc_mac(acc: &mut Complex<Self::Acc>, x: Self::S, tone: Complex<Self::S>);
    fn ddc_mean(acc: Complex<Self::Acc>, len: u64) -> Complex<Self::Out>;

    fn samples_to_stream(data: Vec<Complex<Self::S>>, rate: f64, origin: u64) -> IqStream;
    fn out_to_stream(data: Vec<Complex<Self::Out>>, rate: f64, origin: u64) -> IqStream;
    /// Extracts stage samples, checking backend and layout.
    fn from_stream(stream: &IqStream) -> Result<Vec<Complex<Self::S>>>;
}

/// Bit-accurate datapath.
#[derive(Debug, Clone, Copy, Default)]
pub struct Fx;

/// Double-precision reference datapath.
#[derive(Debug, Clone, Copy, Default)]
pub struct Fl;

const SAMPLE: QFormat = QFormat::SAMPLE;
const PHASOR: QFormat = QFormat::PHASOR;
/// Fractional bits of one Q1.15 x Q1.15 DDC product.
const DDC_PRODUCT_FRAC: u32 = 2 * SAMPLE.frac;

#[inline]
fn to_sample(v: i128, frac: u32, sat: &mut SaturationCount) -> i32 {
    let (r, s) = requantize(v, frac, SAMPLE);
    sat.note(s);
    r as i32
}

/// Largest fractional bit count that fits `max_abs` into `width` signed bits.
pub fn best_frac(max_abs: f64, width: u32) -> u32 {
    let limit = ((1u64 << (width - 1)) - 1) as f64;
    if max_abs == 0.0 {
        return width - 1;
    }
    (limit / max_abs).log2().floor().clamp(0.0, 62.0) as u32
}

impl Lane for Fx {
    type S = i32;
    type T = i32;
    type Acc = i64;
    type Out = i64;

    const BACKEND: Backend = Backend::Fixed;

    fn sample(x: f64, sat: &mut SaturationCount) -> i32 {
        let (v, s) = SAMPLE.quantize(x);
        sat.note(s);
        v as i32
    }

    fn sample_to_f64(x: i32) -> f64 {
        SAMPLE.to_f64(x as i64)
    }

    fn phasor(z: Complex64) -> Complex<i32> {
        Complex::new(PHASOR.quantize(z.re).0 as i32, PHASOR.quantize(z.im).0 as i32)
    }

    fn taps(h: &[f64]) -> (Vec<i32>, u32) {
        let max_abs = h.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        let frac = best_frac(max_abs, TAP_WIDTH);
        let fmt = QFormat { width: TAP_WIDTH, frac };
        (h.iter().map(|&x| fmt.quantize(x).0 as i32).collect(), frac)
    }

    fn tap_to_f64(t: i32, frac: u32) -> f64 {
        t as f64 * (-(frac as f64)).exp2()
    }

    #[inline]
    fn neg(x: i32, sat: &mut SaturationCount) -> i32 {
        let (v, s) = saturate(-(x as i128), SAMPLE);
        sat.note(s);
        v as i32
    }

    #[inline]
    fn cmul(x: Complex<i32>, p: Complex<i32>, sat: &mut SaturationCount) -> Complex<i32> {
        let (xr, xi, pr, pi) = (x.re as i64, x.im as i64, p.re as i64, p.im as i64);
        let frac = SAMPLE.frac + PHASOR.frac;
        Complex::new(
            to_sample((xr * pr - xi * pi) as i128, frac, sat),
            to_sample((xr * pi + xi * pr) as i128, frac, sat),
        )
    }

    #[inline]
    fn rmul(x: i32, p: Complex<i32>, sat: &mut SaturationCount) -> Complex<i32> {
        let frac = SAMPLE.frac + PHASOR.frac;
        Complex::new(
            to_sample(x as i128 * p.re as i128, frac, sat),
            to_sample(x as i128 * p.im as i128, frac, sat),
        )
    }

    #[inline]
    fn dot(taps: &[i32], frac: u32, window: &[Complex<i32>], sat: &mut SaturationCount) -> Complex<i32> {
        let mut re = 0i64;
        let mut im = 0i64;
        for (&t, x) in taps.iter().zip(window) {
            re += t as i64 * x.re as i64;
            im += t as i64 * x.im as i64;
        }
        let frac = frac + SAMPLE.frac;
        Complex::new(to_sample(re as i128, frac, sat), to_sample(im as i128, frac, sat))
    }

    fn sum(xs: &[Complex<i32>], shift: u32, sat: &mut SaturationCount) -> Complex<i32> {
        let (re, im) = xs
            .iter()
            .fold((0i128, 0i128), |(r, i), x| (r + x.re as i128, i + x.im as i128));
        let mut narrow = |v: i128| {
            let (acc, s) = saturate(v, COMBINE_ACC);
            sat.note(s);
            to_sample(acc as i128, SAMPLE.frac + shift, sat)
        };
        Complex::new(narrow(re), narrow(im))
    }

    #[inline]
    fn ddc_mac(acc: &mut Complex<i64>, x: i32, tone: Complex<i32>) {
        acc.re += x as i64 * tone.re as i64;
        acc.im -= x as i64 * tone.im as i64;
    }

    fn ddc_mean(acc: Complex<i64>, len: u64) -> Complex<i64> {
        let extra = QFormat::DDC_OUT.frac - DDC_PRODUCT_FRAC;
        let mean = |v: i64| {
            let q = round_div((v as i128) << extra, len as i128);
            saturate(q, QFormat::DDC_OUT).0
        };
        Complex::new(mean(acc.re), mean(acc.im))
    }

    fn samples_to_stream(data: Vec<Complex<i32>>, rate: f64, origin: u64) -> IqStream {
        IqStream {
            samples: Samples::Fixed {
                format: SAMPLE,
                data: data.into_iter().map(|z| Complex::new(z.re as i64, z.im as i64)).collect(),
            },
            sample_rate: rate,
            origin_index: origin,
        }
    }

    fn out_to_stream(data: Vec<Complex<i64>>, rate: f64, origin: u64) -> IqStream {
        IqStream {
            samples: Samples::Fixed {
                format: QFormat::DDC_OUT,
                data,
            },
            sample_rate: rate,
            origin_index: origin,
        }
    }

    fn from_stream(stream: &IqStream) -> Result<Vec<Complex<i32>>> {
        match &stream.samples {
            Samples::Fixed { format, data } if *format == SAMPLE => {
                Ok(data.iter().map(|z| Complex::new(z.re as i32, z.im as i32)).collect())
            }
            Samples::Fixed { format, .. } => Err(Error::LayoutMismatch(format!(
                "stage samples must be {SAMPLE:?}, stream is {format:?}"
            ))),
            Samples::Float(_) => Err(Error::BackendMismatch {
                expected: Backend::Fixed,
                found: Backend::Float,
            }),
        }
    }
}

impl Lane for Fl {
    type S = f64;
    type T = f64;
    type Acc = f64;
    type Out = f64;

    const BACKEND: Backend = Backend::Float;

    fn sample(x: f64, _: &mut SaturationCount) -> f64 {
        x
    }

    fn sample_to_f64(x: f64) -> f64 {
        x
    }

    fn phasor(z: Complex64) -> Complex64 {
        z
    }

    fn taps(h: &[f64]) -> (Vec<f64>, u32) {
        (h.to_vec(), 0)
    }

    fn tap_to_f64(t: f64, _: u32) -> f64 {
        t
    }

    #[inline]
    fn neg(x: f64, _: &mut SaturationCount) -> f64 {
        -x
    }

    #[inline]
    fn cmul(x: Complex64, p: Complex64, _: &mut SaturationCount) -> Complex64 {
        x * p
    }

    #[inline]
    fn rmul(x: f64, p: Complex64, _: &mut SaturationCount) -> Complex64 {
        Complex::new(x * p.re, x * p.im)
    }

    #[inline]
    fn dot(taps: &[f64], _: u32, window: &[Complex64], _: &mut SaturationCount) -> Complex64 {
        let mut re = 0.0;
        let mut im = 0.0;
        for (&t, x) in taps.iter().zip(window) {
            re += t * x.re;
            im += t * x.im;
        }
        Complex::new(re, im)
    }

    fn sum(xs: &[Complex64], shift: u32, _: &mut SaturationCount) -> Complex64 {
        let s: Complex64 = xs.iter().sum();
        s * (-(shift as f64)).exp2()
    }

    #[inline]
    fn ddc_mac(acc: &mut Complex64, x: f64, tone: Complex64) {
        acc.re += x * tone.re;
        acc.im -= x * tone.im;
    }

    fn ddc_mean(acc: Complex64, len: u64) -> Complex64 {
        acc / len as f64
    }

    fn samples_to_stream(data: Vec<Complex64>, rate: f64, origin: u64) -> IqStream {
        IqStream {
            samples: Samples::Float(data),
            sample_rate: rate,
            origin_index: origin,
        }
    }

    fn out_to_stream(data: Vec<Complex64>, rate: f64, origin: u64) -> IqStream {
        Self::samples_to_stream(data, rate, origin)
    }

    fn from_stream(stream: &IqStream) -> Result<Vec<Complex64>> {
        match &stream.samples {
            Samples::Float(data) => Ok(data.clone()),
            Samples::Fixed { .. } => Err(Error::BackendMismatch {
                expected: Backend::Float,
                found: Backend::Fixed,
            }),
        }
    }
}

/// Dispatches a generic body on the backend of a stream.
#[macro_export]
macro_rules! with_lane {
    ($backend:expr, $lane:ident => $body:expr) => {
        match $backend {
            $crate::sample::Backend::Fixed => {
                type $lane = $crate::lane::Fx;
                $body
            }
            $crate::sample::Backend::Float => {
                type $lane = $crate::lane::Fl;
                $body
            }
        }
    };
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn best_frac_fits_width() {
        assert_eq!(best_frac(0.99, 18), 17);
        assert_eq!(best_frac(1.0, 18), 16);
        assert_eq!(best_frac(0.0625, 18), 20);
        assert_eq!(best_frac(0.06, 18), 21);
    }

    #[test]
    fn negating_most_negative_saturates() {
        let mut sat = SaturationCount::default();
        assert_eq!(Fx::neg(-32768, &mut sat), 32767);
        assert_eq!(sat.0, 1);
    }

    #[test]
    fn combine_of_one_is_passthrough() {
        let mut sat = SaturationCount::default();
        let x = [Complex::new(-32768, 12345)];
        assert_eq!(Fx::sum(&x, 0, &mut sat), x[0]);
        let pair = [Complex::new(1000, -7), Complex::new(-1000, 7)];
        assert_eq!(Fx::sum(&pair, 1, &mut sat), Complex::new(0, 0));
        assert_eq!(sat.0, 0);
    }

    #[test]
    fn ddc_mean_is_exact_for_power_of_two_windows() {
        let mut acc = Complex::new(0i64, 0i64);
        for _ in 0..65536 {
            Fx::ddc_mac(&mut acc, 16384, Complex::new(32767, 0));
        }
        let m = Fx::ddc_mean(acc, 65536);
        assert_eq!(QFormat::DDC_OUT.to_f64(m.re), 0.5 * 32767.0 / 32768.0);
        assert_eq!(m.im, 0);
    }
}
