//! Excitation path: quarter-rate centering, ×8 interpolation, band
//! up-shift from a 40-entry phasor table, and tone/band summation.
//!
//! Each stage has a streaming processor (used by the pipeline, state carried
//! between blocks) and a whole-stream function built on top of it.

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::{Complex, Complex64};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filters::{FirFilter, WIDE_RATE};
use crate::fixed::SaturationCount;
use crate::lane::Lane;
use crate::sample::{IqStream, Samples};
use crate::tonegen::{ToneConfig, BASE_RATE};

pub const INTERP_FACTOR: usize = 8;
pub const PHASOR_TABLE_LEN: usize = 40;
pub const MAX_BANDS: usize = 10;
pub const MAX_TONES_PER_BAND: usize = 40;

/// Which component of the complex wideband signal is looped back.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Component {
    #[default]
    I,
    Q,
}

/// Direction of a ±Fs/4 shift.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShiftDir {
    /// Multiply by e^{-jπn/2}.
    Down,
    /// Multiply by e^{+jπn/2}.
    Up,
}

/// Tones and filter of the excitation path.
#[derive(Debug, Clone)]
pub struct ExcitationConfig {
    pub tones: Vec<ToneConfig>,
    pub interp_factor: usize,
    pub dac_rate: f64,
    pub interp_filter: Arc<FirFilter>,
}

impl ExcitationConfig {
    pub fn new(tones: Vec<ToneConfig>, interp_filter: Arc<FirFilter>) -> Result<Self> {
        let cfg = ExcitationConfig {
            tones,
            interp_factor: INTERP_FACTOR,
            dac_rate: INTERP_FACTOR as f64 * BASE_RATE,
            interp_filter,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.tones.is_empty() {
            return Err(Error::config("bands", "at least one tone is required"));
        }
        if self.interp_factor != INTERP_FACTOR {
            return Err(Error::config("interp_factor", "only 8 is supported"));
        }
        let mut per_band = [0usize; MAX_BANDS];
        for t in &self.tones {
            t.validate()?;
            per_band[t.band as usize] += 1;
        }
        if let Some(b) = per_band.iter().position(|&n| n > MAX_TONES_PER_BAND) {
            return Err(Error::config(
                format!("bands[{b}].fcw"),
                format!("{} tones exceed the limit of {MAX_TONES_PER_BAND}", per_band[b]),
            ));
        }
        Ok(())
    }
}

/// Smallest period of the band's phasor sequence, `40 / gcd(2b+1, 40)`.
pub fn phasor_period(band: u8) -> usize {
    PHASOR_TABLE_LEN / num_integer::gcd(2 * band as usize + 1, PHASOR_TABLE_LEN)
}

/// The 40 unit phasors `e^{jαn}` of one band, `α = 2π(2b+1)/40`.
#[derive(Debug, Clone, PartialEq)]
pub struct BandPhasorTable {
    band: u8,
    entries: Vec<Complex64>,
}

impl BandPhasorTable {
    pub fn new(band: u8) -> Result<Self> {
        if band as usize >= MAX_BANDS {
            return Err(Error::config("band", format!("{band} is not in 0..=9")));
        }
        let step = 2 * band as usize + 1;
        let entries = (0..PHASOR_TABLE_LEN)
            .map(|n| {
                // reduce the angle to an exact fraction of a turn first
                let k = (step * n) % PHASOR_TABLE_LEN;
                Complex64::from_polar(1.0, 2.0 * PI * k as f64 / PHASOR_TABLE_LEN as f64)
            })
            .collect();
        Ok(BandPhasorTable { band, entries })
    }

    pub fn band(&self) -> u8 {
        self.band
    }

    /// Phase increment per 2 GHz sample, radians.
    pub fn alpha(&self) -> f64 {
        2.0 * PI * (2 * self.band as usize + 1) as f64 / PHASOR_TABLE_LEN as f64
    }

    /// Frequency translation in Hz.
    pub fn shift_hz(&self) -> f64 {
        (2 * self.band as usize + 1) as f64 / PHASOR_TABLE_LEN as f64 * WIDE_RATE
    }

    pub fn entries(&self) -> &[Complex64] {
        &self.entries
    }

    /// Smallest period of the table sequence: 8 for bands 2 and 7, 40 otherwise.
    pub fn period(&self) -> usize {
        phasor_period(self.band)
    }

    /// Entries in the lane's phasor format.
    pub fn lane_entries<L: Lane>(&self) -> Vec<Complex<L::T>> {
        self.entries.iter().map(|&z| L::phasor(z)).collect()
    }

    /// Conjugate entries (demodulation) in the lane's phasor format.
    pub fn lane_conj_entries<L: Lane>(&self) -> Vec<Complex<L::T>> {
        self.entries.iter().map(|&z| L::phasor(z.conj())).collect()
    }
}

/// Multiplier-free ±Fs/4 shift. Only sign flips and I/Q swaps.
#[derive(Debug, Clone)]
pub struct QuarterShift {
    dir: ShiftDir,
    phase: u8,
}

impl QuarterShift {
    /// `origin` is the global index of the first sample that will be fed.
    pub fn new(dir: ShiftDir, origin: u64) -> Self {
        QuarterShift {
            dir,
            phase: (origin % 4) as u8,
        }
    }

    pub fn process<L: Lane>(&mut self, data: &mut [Complex<L::S>], sat: &mut SaturationCount) {
        for z in data.iter_mut() {
            let (i, q) = (z.re, z.im);
            // sequence for e^{-jπn/2}: (I,Q), (Q,-I), (-I,-Q), (-Q,I)
            let k = match self.dir {
                ShiftDir::Down => self.phase,
                ShiftDir::Up => (4 - self.phase) % 4,
            };
            *z = match k {
                0 => Complex::new(i, q),
                1 => Complex::new(q, L::neg(i, sat)),
                2 => Complex::new(L::neg(i, sat), L::neg(q, sat)),
                _ => Complex::new(L::neg(q, sat), i),
            };
            self.phase = (self.phase + 1) & 3;
        }
    }
}

/// Polyphase ×8 interpolator. Input before the first fed sample is zero.
#[derive(Debug, Clone)]
pub struct Interpolator<L: Lane> {
    /// Per-branch taps, reversed so each output is a forward dot product.
    branches: Vec<Vec<L::T>>,
    frac: u32,
    history: Vec<Complex<L::S>>,
    buf: Vec<Complex<L::S>>,
}

impl<L: Lane> Interpolator<L> {
    pub fn new(filter: &FirFilter) -> Self {
        let (taps, frac) = L::taps(&filter.taps);
        let k = taps.len().div_ceil(INTERP_FACTOR);
        let branches = (0..INTERP_FACTOR)
            .map(|p| {
                let mut b = vec![L::T::default(); k];
                for i in 0..k {
                    if let Some(&t) = taps.get(p + INTERP_FACTOR * i) {
                        b[k - 1 - i] = t;
                    }
                }
                b
            })
            .collect();
        Interpolator {
            branches,
            frac,
            history: vec![Complex::default(); k - 1],
            buf: Vec::new(),
        }
    }

    pub fn process(&mut self, input: &[Complex<L::S>], out: &mut Vec<Complex<L::S>>, sat: &mut SaturationCount) {
        let k = self.history.len() + 1;
        self.buf.clear();
        self.buf.extend_from_slice(&self.history);
        self.buf.extend_from_slice(input);
        out.reserve(input.len() * INTERP_FACTOR);
        for j in 0..input.len() {
            let w = &self.buf[j..j + k];
            for b in &self.branches {
                out.push(L::dot(b, self.frac, w, sat));
            }
        }
        let tail = self.buf.len() - (k - 1);
        self.history.copy_from_slice(&self.buf[tail..]);
    }
}

/// Band up-shift by the table `e^{jαn}`, indexed by global `n mod 40`.
#[derive(Debug, Clone)]
pub struct BandShifter<L: Lane> {
    table: Vec<Complex<L::T>>,
    index: usize,
}

impl<L: Lane> BandShifter<L> {
    pub fn new(table: &BandPhasorTable, origin: u64) -> Self {
        BandShifter {
            table: table.lane_entries::<L>(),
            index: (origin % PHASOR_TABLE_LEN as u64) as usize,
        }
    }

    pub fn process(&mut self, data: &mut [Complex<L::S>], sat: &mut SaturationCount) {
        for z in data.iter_mut() {
            *z = L::cmul(*z, self.table[self.index], sat);
            self.index += 1;
            if self.index == PHASOR_TABLE_LEN {
                self.index = 0;
            }
        }
    }
}

/// Headroom shift for summing `n` streams.
pub fn combine_shift(n: usize) -> u32 {
    n.max(1).next_power_of_two().trailing_zeros()
}

/// Sample-wise sum of equal-length blocks scaled by `2^-combine_shift`.
/// A single block passes through untouched.
pub fn combine_blocks<L: Lane>(blocks: &[&[Complex<L::S>]], sat: &mut SaturationCount) -> Vec<Complex<L::S>> {
    if blocks.len() == 1 {
        return blocks[0].to_vec();
    }
    let len = blocks.first().map_or(0, |b| b.len());
    let shift = combine_shift(blocks.len());
    let mut column = Vec::with_capacity(blocks.len());
    (0..len)
        .map(|n| {
            column.clear();
            column.extend(blocks.iter().map(|b| b[n]));
            L::sum(&column, shift, sat)
        })
        .collect()
}

fn expect_rate(stream: &IqStream, rate: f64, what: &str) -> Result<()> {
    if (stream.sample_rate - rate).abs() > 1e-6 * rate {
        return Err(Error::StreamMismatch(format!(
            "{what} expects {rate} Hz, stream is at {} Hz",
            stream.sample_rate
        )));
    }
    Ok(())
}

/// Shift by −Fs/4, phase-locked to the stream's global origin.
pub fn downshift_quarter_rate(stream: &IqStream) -> Result<IqStream> {
    expect_rate(stream, BASE_RATE, "quarter-rate down-shift")?;
    crate::with_lane!(stream.backend(), L => {
        let mut data = L::from_stream(stream)?;
        let mut sat = SaturationCount::default();
        QuarterShift::new(ShiftDir::Down, stream.origin_index).process::<L>(&mut data, &mut sat);
        Ok(L::samples_to_stream(data, stream.sample_rate, stream.origin_index))
    })
}

/// ×8 interpolation from 250 MHz to 2 GHz.
pub fn interpolate(stream: &IqStream, factor: usize, filter: &FirFilter) -> Result<IqStream> {
    if factor != INTERP_FACTOR {
        return Err(Error::Unsupported(format!("interpolation factor {factor}; only 8 is supported")));
    }
    expect_rate(stream, BASE_RATE, "interpolation")?;
    crate::with_lane!(stream.backend(), L => {
        let data = L::from_stream(stream)?;
        let mut sat = SaturationCount::default();
        let mut out = Vec::new();
        Interpolator::<L>::new(filter).process(&data, &mut out, &mut sat);
        Ok(L::samples_to_stream(out, WIDE_RATE, stream.origin_index * INTERP_FACTOR as u64))
    })
}

/// Translation by `(2b+1)/40 · 2 GHz`.
pub fn band_upshift(stream: &IqStream, band: u8) -> Result<IqStream> {
    let table = BandPhasorTable::new(band)?;
    expect_rate(stream, WIDE_RATE, "band up-shift")?;
    crate::with_lane!(stream.backend(), L => {
        let mut data = L::from_stream(stream)?;
        let mut sat = SaturationCount::default();
        BandShifter::<L>::new(&table, stream.origin_index).process(&mut data, &mut sat);
        Ok(L::samples_to_stream(data, stream.sample_rate, stream.origin_index))
    })
}

/// Sum of streams with headroom; one stream passes through.
pub fn combine(streams: &[IqStream]) -> Result<IqStream> {
    let first = streams
        .first()
        .ok_or_else(|| Error::StreamMismatch("nothing to combine".into()))?;
    for s in &streams[1..] {
        first.ensure_same_backend(s)?;
        if s.len() != first.len() || s.sample_rate != first.sample_rate || s.origin_index != first.origin_index {
            return Err(Error::StreamMismatch(
                "combined streams must share length, rate and origin".into(),
            ));
        }
    }
    crate::with_lane!(first.backend(), L => {
        let data = streams.iter().map(L::from_stream).collect::<Result<Vec<_>>>()?;
        let refs: Vec<&[Complex<<L as Lane>::S>]> = data.iter().map(|d| d.as_slice()).collect();
        let mut sat = SaturationCount::default();
        let out = combine_blocks::<L>(&refs, &mut sat);
        Ok(L::samples_to_stream(out, first.sample_rate, first.origin_index))
    })
}

/// Keeps one component as the I channel and zeroes Q.
pub fn realize(stream: &IqStream, select: Component) -> IqStream {
    fn pick<T: Copy + Default>(z: &Complex<T>, select: Component) -> Complex<T> {
        let v = if select == Component::I { z.re } else { z.im };
        Complex::new(v, T::default())
    }
    let samples = match &stream.samples {
        Samples::Fixed { format, data } => Samples::Fixed {
            format: *format,
            data: data.iter().map(|z| pick(z, select)).collect(),
        },
        Samples::Float(data) => Samples::Float(data.iter().map(|z| pick(z, select)).collect()),
    };
    IqStream {
        samples,
        sample_rate: stream.sample_rate,
        origin_index: stream.origin_index,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::filters::interpolator;
    use crate::lane::{Fl, Fx};
    use crate::sample::Backend;
    use crate::tonegen::generate_tone;

    #[test]
    fn dc_becomes_quarter_rate_phasor() {
        let s = IqStream::float(vec![Complex64::new(1.0, 0.0); 8], BASE_RATE);
        let out = downshift_quarter_rate(&s).unwrap().to_complex64();
        let expect = [(1.0, 0.0), (0.0, -1.0), (-1.0, 0.0), (0.0, 1.0)];
        for (n, z) in out.iter().enumerate() {
            assert_eq!((z.re, z.im), expect[n % 4]);
        }
    }

    #[test]
    fn quarter_shift_matches_exponential() {
        let x: Vec<Complex64> = (0..64).map(|n| Complex64::new((n as f64).sin(), (n as f64 * 0.3).cos())).collect();
        for (dir, sign) in [(ShiftDir::Down, -1.0), (ShiftDir::Up, 1.0)] {
            let mut y = x[5..].to_vec();
            QuarterShift::new(dir, 5).process::<Fl>(&mut y, &mut SaturationCount::default());
            for (k, z) in y.iter().enumerate() {
                let n = (k + 5) as f64;
                let e = x[k + 5] * Complex64::from_polar(1.0, sign * PI / 2.0 * n);
                assert!((z - e).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn phasor_table_is_unit_and_periodic() {
        for b in 0..10 {
            let t = BandPhasorTable::new(b).unwrap();
            for (n, z) in t.entries().iter().enumerate() {
                assert!((z.norm() - 1.0).abs() < 1e-12);
                let direct = Complex64::from_polar(1.0, t.alpha() * n as f64);
                assert!((z - direct).norm() < 1e-12);
            }
            for z in t.lane_entries::<Fx>() {
                let m = (z.re as f64).hypot(z.im as f64);
                assert!((m - 131072.0).abs() <= 1.0);
            }
        }
        assert!(BandPhasorTable::new(10).is_err());
        assert_eq!(BandPhasorTable::new(6).unwrap().shift_hz(), 650e6);
    }

    #[test]
    fn interpolator_zero_in_zero_out() {
        let s = IqStream::fixed(crate::fixed::QFormat::SAMPLE, vec![Complex::new(0, 0); 100], BASE_RATE).unwrap();
        let out = interpolate(&s, 8, &interpolator()).unwrap();
        assert_eq!(out.len(), 800);
        assert!(out.to_complex64().iter().all(|z| z.norm() == 0.0));
        assert!(interpolate(&s, 4, &interpolator()).is_err());
    }

    #[test]
    fn interpolator_blocks_match_whole() {
        let tone = ToneConfig::new(4000, 65536, 6).unwrap();
        let x = Fx::from_stream(&generate_tone(&tone, 1000, Backend::Fixed).unwrap()).unwrap();
        let f = interpolator();
        let mut sat = SaturationCount::default();
        let mut whole = Vec::new();
        Interpolator::<Fx>::new(&f).process(&x, &mut whole, &mut sat);
        let mut it = Interpolator::<Fx>::new(&f);
        let mut parts = Vec::new();
        for c in x.chunks(37) {
            it.process(c, &mut parts, &mut sat);
        }
        assert_eq!(whole, parts);
        // start-up transients may clip; steady state must not
        let mut steady = SaturationCount::default();
        it.process(&x, &mut parts, &mut steady);
        assert_eq!(steady.0, 0);
    }

    #[test]
    fn combine_single_and_cancel() {
        let s = generate_tone(&ToneConfig::new(4000, 65536, 6).unwrap(), 64, Backend::Fixed).unwrap();
        assert_eq!(combine(std::slice::from_ref(&s)).unwrap(), s);
        let neg = match &s.samples {
            Samples::Fixed { format, data } => IqStream::fixed(*format, data.iter().map(|z| -z).collect(), s.sample_rate).unwrap(),
            _ => unreachable!(),
        };
        let sum = combine(&[s, neg]).unwrap();
        assert!(sum.to_complex64().iter().all(|z| z.norm() == 0.0));
    }

    #[test]
    fn realize_selects_component() {
        let s = IqStream::float(vec![Complex64::new(3.0, 7.0)], BASE_RATE);
        assert_eq!(realize(&s, Component::I).to_complex64()[0], Complex64::new(3.0, 0.0));
        assert_eq!(realize(&s, Component::Q).to_complex64()[0], Complex64::new(7.0, 0.0));
    }
}
