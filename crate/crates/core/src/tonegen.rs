//! Direct digital synthesis of one excitation tone: a wrapping phase
//! accumulator whose top ten bits drive a rotation-mode CORDIC.

use std::f64::consts::{FRAC_PI_2, PI};
use std::sync::Arc;

use num_complex::{Complex, Complex64};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fixed::{round_shift, saturate, FixedSample, QFormat};
use crate::lane::{Fl, Fx, Lane};
use crate::sample::{Backend, ComplexSample, IqStream};

/// Base-band sample rate of the tone generators, in Hz.
pub const BASE_RATE: f64 = 250e6;
/// Legacy accumulator modulus.
pub const MODULUS_LEGACY: u32 = 1 << 16;
/// Modulus that makes every period in the chain a multiple of 40.
pub const MODULUS_ALIGNED: u32 = 65520;
/// Width of the accumulator word whose MSBs address the CORDIC.
pub const ACC_BITS: u32 = 16;
/// Phase bits seen by the CORDIC.
pub const PHASE_BITS: u32 = 10;
pub const PHASE_CODES: usize = 1 << PHASE_BITS;
/// Default rotation count; the smallest count whose exhaustive error stays
/// under one Q1.15 LSB (see [`cordic_max_error_lsb`]).
pub const DEFAULT_CORDIC_ITERATIONS: u32 = 17;
pub const MAX_CORDIC_ITERATIONS: u32 = 30;

/// CORDIC output magnitude. Full scale 1.0 is not representable in Q1.15,
/// so the generator targets the largest positive code.
pub const FIXED_AMPLITUDE: f64 = 32767.0 / 32768.0;

/// Guard bits carried by the CORDIC x/y registers below the Q1.15 LSB.
const GUARD: u32 = 8;
/// Fractional bits of the CORDIC angle register.
const ANGLE_FRAC: u32 = 40;

/// One excitation tone.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ToneConfig {
    pub fcw: u32,
    pub modulus: u32,
    pub band: u8,
    pub sample_rate: f64,
}

impl ToneConfig {
    pub fn new(fcw: u32, modulus: u32, band: u8) -> Result<Self> {
        let cfg = ToneConfig {
            fcw,
            modulus,
            band,
            sample_rate: BASE_RATE,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.modulus == 0 || self.modulus > 1 << ACC_BITS {
            return Err(Error::config(
                "accumulator_modulus",
                format!("{} is not in 1..=65536", self.modulus),
            ));
        }
        if self.fcw >= self.modulus {
            return Err(Error::config(
                "fcw",
                format!("{} must be below the modulus {}", self.fcw, self.modulus),
            ));
        }
        if self.band > 9 {
            return Err(Error::config("band", format!("{} is not in 0..=9", self.band)));
        }
        if self.sample_rate.is_nan() || self.sample_rate <= 0.0 {
            return Err(Error::config("sample_rate", "must be positive"));
        }
        Ok(())
    }

    /// Tone frequency in Hz.
    pub fn frequency(&self) -> f64 {
        self.sample_rate * self.fcw as f64 / self.modulus as f64
    }

    /// Smallest period of the accumulator sequence, `M / gcd(fcw, M)`.
    pub fn period(&self) -> u32 {
        self.modulus / num_integer::gcd(self.fcw, self.modulus)
    }

    /// Whether the tone lands inside its band's ±50 MHz channel once
    /// centered by the quarter-rate shift.
    pub fn in_design_range(&self) -> bool {
        let centered = self.frequency() - self.sample_rate / 4.0;
        centered.abs() <= 0.2 * self.sample_rate
    }
}

/// Accumulator contents.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhaseState {
    pub phase: u32,
}

pub fn phase_step(state: PhaseState, cfg: &ToneConfig) -> PhaseState {
    let next = (state.phase as u64 + cfg.fcw as u64) % cfg.modulus as u64;
    PhaseState { phase: next as u32 }
}

/// Top ten bits of the accumulator read as a 16-bit word. The modulus does
/// not enter: a 65520 accumulator simply never reaches the last 16 codes.
pub fn phase_to_cordic_input(phase: u32, modulus: u32) -> u16 {
    debug_assert!(phase < modulus && modulus <= 1 << ACC_BITS);
    (phase >> (ACC_BITS - PHASE_BITS)) as u16
}

fn atan_table(iterations: u32) -> Vec<i64> {
    let scale = (ANGLE_FRAC as f64).exp2();
    (0..iterations)
        .map(|i| ((-(i as f64)).exp2().atan() * scale).round() as i64)
        .collect()
}

fn cordic_gain(iterations: u32) -> f64 {
    (0..iterations).map(|i| (1.0 + (-2.0 * i as f64).exp2()).sqrt()).product()
}

/// Raw Q1.15 (cos, sin) of `2π·phase10/1024` from shift-add rotations.
fn cordic_raw(phase10: u16, iterations: u32, atan: &[i64], x0: i64) -> (i32, i32) {
    let quadrant = (phase10 as usize >> (PHASE_BITS - 2)) & 3;
    let residual = phase10 as i64 & ((1 << (PHASE_BITS - 2)) - 1);
    // residual / 256 of a quarter turn
    let quarter = (FRAC_PI_2 * (ANGLE_FRAC as f64).exp2()).round() as i64;
    let mut z = (residual * quarter) >> (PHASE_BITS - 2);
    let (mut x, mut y) = (x0, 0i64);
    for i in 0..iterations {
        let (dx, dy) = (y >> i, x >> i);
        if z >= 0 {
            x -= dx;
            y += dy;
            z -= atan[i as usize];
        } else {
            x += dx;
            y -= dy;
            z += atan[i as usize];
        }
    }
    let q15 = |v: i64| saturate(round_shift(v as i128, GUARD), QFormat::SAMPLE).0 as i32;
    let (c, s) = (q15(x), q15(y));
    let neg = |v: i32| saturate(-(v as i128), QFormat::SAMPLE).0 as i32;
    match quadrant {
        0 => (c, s),
        1 => (neg(s), c),
        2 => (neg(c), neg(s)),
        _ => (s, neg(c)),
    }
}

/// All 1024 fixed-point CORDIC outputs for one iteration count.
pub fn cordic_table_fixed(iterations: u32) -> Vec<Complex<i32>> {
    let iterations = iterations.clamp(1, MAX_CORDIC_ITERATIONS);
    let atan = atan_table(iterations);
    let x0 = (FIXED_AMPLITUDE / cordic_gain(iterations) * ((QFormat::SAMPLE.frac + GUARD) as f64).exp2())
        .round() as i64;
    (0..PHASE_CODES as u16)
        .map(|p| {
            let (c, s) = cordic_raw(p, iterations, &atan, x0);
            Complex::new(c, s)
        })
        .collect()
}

/// Double-precision (cos, sin) of the quantized phase, folded like the
/// fixed-point path so quarter turns are exact.
pub fn sincos_float(phase10: u16) -> Complex64 {
    let quadrant = (phase10 as usize >> (PHASE_BITS - 2)) & 3;
    let residual = (phase10 as u32 & ((1 << (PHASE_BITS - 2)) - 1)) as f64;
    let a = 2.0 * PI * residual / PHASE_CODES as f64;
    let (s, c) = a.sin_cos();
    match quadrant {
        0 => Complex64::new(c, s),
        1 => Complex64::new(-s, c),
        2 => Complex64::new(-c, -s),
        _ => Complex64::new(s, -c),
    }
}

/// Single CORDIC conversion in the requested backend.
pub fn cordic_sincos(phase10: u16, iterations: u32, backend: Backend) -> ComplexSample {
    let phase10 = phase10 % PHASE_CODES as u16;
    match backend {
        Backend::Fixed => {
            let iterations = iterations.clamp(1, MAX_CORDIC_ITERATIONS);
            let atan = atan_table(iterations);
            let x0 = (FIXED_AMPLITUDE / cordic_gain(iterations)
                * ((QFormat::SAMPLE.frac + GUARD) as f64).exp2())
            .round() as i64;
            let (c, s) = cordic_raw(phase10, iterations, &atan, x0);
            ComplexSample::Fixed {
                i: FixedSample::new(c as i64, QFormat::SAMPLE).expect("saturated"),
                q: FixedSample::new(s as i64, QFormat::SAMPLE).expect("saturated"),
            }
        }
        Backend::Float => ComplexSample::Float(sincos_float(phase10)),
    }
}

/// Largest deviation, in Q1.15 LSBs, of the fixed CORDIC from the exact
/// (cos, sin) of the same phase scaled by [`FIXED_AMPLITUDE`].
pub fn cordic_max_error_lsb(iterations: u32) -> f64 {
    cordic_table_fixed(iterations)
        .iter()
        .enumerate()
        .map(|(p, z)| {
            let exact = sincos_float(p as u16) * FIXED_AMPLITUDE * 32768.0;
            (z.re as f64 - exact.re).abs().max((z.im as f64 - exact.im).abs())
        })
        .fold(0.0, f64::max)
}

/// Per-lane lookup of the 1024 phase codes.
pub trait ToneTable: Lane {
    fn tone_table(iterations: u32) -> Arc<Vec<Complex<Self::S>>>;
}

impl ToneTable for Fx {
    fn tone_table(iterations: u32) -> Arc<Vec<Complex<i32>>> {
        Arc::new(cordic_table_fixed(iterations))
    }
}

impl ToneTable for Fl {
    fn tone_table(_: u32) -> Arc<Vec<Complex64>> {
        Arc::new((0..PHASE_CODES as u16).map(sincos_float).collect())
    }
}

/// Streaming tone generator. Sample `n` of the global timeline is the
/// CORDIC output for phase `n·fcw mod M`.
#[derive(Debug, Clone)]
pub struct ToneSource<L: Lane> {
    cfg: ToneConfig,
    state: PhaseState,
    table: Arc<Vec<Complex<L::S>>>,
}

impl<L: ToneTable> ToneSource<L> {
    pub fn new(cfg: ToneConfig, iterations: u32) -> Result<Self> {
        cfg.validate()?;
        Ok(ToneSource {
            cfg,
            state: PhaseState::default(),
            table: L::tone_table(iterations),
        })
    }

    pub fn config(&self) -> &ToneConfig {
        &self.cfg
    }

    /// Appends the next `n` samples to `out`.
    pub fn fill(&mut self, n: usize, out: &mut Vec<Complex<L::S>>) {
        out.reserve(n);
        let (fcw, m) = (self.cfg.fcw, self.cfg.modulus);
        let mut phase = self.state.phase;
        for _ in 0..n {
            out.push(self.table[(phase >> (ACC_BITS - PHASE_BITS)) as usize]);
            phase += fcw;
            if phase >= m {
                phase -= m;
            }
        }
        self.state.phase = phase;
    }
}

/// `n_samples` of the tone starting at global index 0, default CORDIC.
pub fn generate_tone(cfg: &ToneConfig, n_samples: usize, backend: Backend) -> Result<IqStream> {
    generate_tone_with(cfg, n_samples, backend, DEFAULT_CORDIC_ITERATIONS)
}

pub fn generate_tone_with(
    cfg: &ToneConfig,
    n_samples: usize,
    backend: Backend,
    iterations: u32,
) -> Result<IqStream> {
    if n_samples == 0 {
        return Err(Error::config("n_samples", "must be at least 1"));
    }
    crate::with_lane!(backend, L => {
        let mut src = ToneSource::<L>::new(*cfg, iterations)?;
        let mut data = Vec::with_capacity(n_samples);
        src.fill(n_samples, &mut data);
        Ok(L::samples_to_stream(data, cfg.sample_rate, 0))
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tone(fcw: u32, m: u32) -> ToneConfig {
        ToneConfig::new(fcw, m, 6).unwrap()
    }

    #[test]
    fn phase_wraps_with_excess() {
        let s = phase_step(PhaseState { phase: 65532 }, &tone(8, MODULUS_LEGACY));
        assert_eq!(s.phase, 4);
        let s = phase_step(PhaseState { phase: 65512 }, &tone(16, MODULUS_ALIGNED));
        assert_eq!(s.phase, 8);
        let s = phase_step(PhaseState { phase: 1234 }, &tone(0, MODULUS_LEGACY));
        assert_eq!(s.phase, 1234);
    }

    #[test]
    fn cordic_input_is_top_ten_bits() {
        assert_eq!(phase_to_cordic_input(0, MODULUS_LEGACY), 0);
        assert_eq!(phase_to_cordic_input(65535, MODULUS_LEGACY), 1023);
        for p in 65472..65520 {
            assert_eq!(phase_to_cordic_input(p, MODULUS_ALIGNED), phase_to_cordic_input(p, MODULUS_LEGACY));
        }
        for p in 65520..65536 {
            assert!(matches!(phase_to_cordic_input(p, MODULUS_LEGACY), 1022 | 1023));
        }
    }

    #[test]
    fn cordic_cardinal_angles() {
        let z = cordic_sincos(0, DEFAULT_CORDIC_ITERATIONS, Backend::Fixed).to_complex64();
        assert!((z.re - 1.0).abs() < 1e-4 && z.im.abs() < 1e-4);
        let z = cordic_sincos(256, DEFAULT_CORDIC_ITERATIONS, Backend::Fixed).to_complex64();
        assert!(z.re.abs() < 1e-4 && (z.im - 1.0).abs() < 1e-4);
        assert_eq!(sincos_float(256), Complex64::new(-0.0, 1.0));
    }

    #[test]
    fn default_iterations_within_one_lsb() {
        assert!(cordic_max_error_lsb(DEFAULT_CORDIC_ITERATIONS) < 1.0);
        assert!(cordic_max_error_lsb(DEFAULT_CORDIC_ITERATIONS - 1) >= 1.0);
    }

    #[test]
    fn float_table_matches_library_sincos() {
        for p in 0..1024u16 {
            let th = 2.0 * PI * p as f64 / 1024.0;
            let z = sincos_float(p);
            assert!((z.re - th.cos()).abs() < 1e-15 && (z.im - th.sin()).abs() < 1e-15);
        }
    }

    #[test]
    fn dc_tone_is_constant() {
        let s = generate_tone(&tone(0, MODULUS_LEGACY), 100, Backend::Float).unwrap();
        assert!(s.to_complex64().iter().all(|z| *z == Complex64::new(1.0, 0.0)));
    }

    #[test]
    fn rejects_fcw_at_modulus() {
        assert!(ToneConfig::new(65520, MODULUS_ALIGNED, 0).is_err());
        assert!(ToneConfig::new(1, MODULUS_LEGACY, 10).is_err());
    }
}
