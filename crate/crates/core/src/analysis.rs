//! Analysis path: per-band channelizer (demodulate, low-pass, decimate by 8,
//! rotate by +Fs/4, take the real part) and the per-tone DDC with
//! index-locked boxcar windows.

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::excitation::{BandPhasorTable, QuarterShift, ShiftDir, INTERP_FACTOR, PHASOR_TABLE_LEN};
use crate::filters::{FirFilter, WIDE_RATE};
use crate::fixed::SaturationCount;
use crate::lane::Lane;
use crate::sample::IqStream;
use crate::tonegen::{ToneConfig, BASE_RATE};

pub const DECIM_FACTOR: usize = INTERP_FACTOR;

#[derive(Debug, Clone)]
pub struct ChannelizerConfig {
    pub band: u8,
    pub lpf: Arc<FirFilter>,
    pub decim_factor: usize,
}

impl ChannelizerConfig {
    pub fn new(band: u8, lpf: Arc<FirFilter>) -> Result<Self> {
        BandPhasorTable::new(band)?;
        Ok(ChannelizerConfig {
            band,
            lpf,
            decim_factor: DECIM_FACTOR,
        })
    }

    /// Demodulation frequency, the negative of the excitation band shift.
    pub fn demod_hz(&self) -> f64 {
        -BandPhasorTable::new(self.band).map_or(0.0, |t| t.shift_hz())
    }
}

/// Streaming channelizer. Input is the real loop-back signal at 2 GHz,
/// output the real band signal at 250 MHz.
#[derive(Debug, Clone)]
pub struct Channelizer<L: Lane> {
    demod: Vec<Complex<L::T>>,
    demod_index: usize,
    /// Low-pass taps, reversed.
    taps: Vec<L::T>,
    frac: u32,
    rotate: QuarterShift,
    history: Vec<Complex<L::S>>,
    buf: Vec<Complex<L::S>>,
    block: Vec<Complex<L::S>>,
}

impl<L: Lane> Channelizer<L> {
    /// `origin` is the global 2 GHz index of the first sample to be fed and
    /// must be a multiple of the decimation factor.
    pub fn new(cfg: &ChannelizerConfig, origin: u64) -> Result<Self> {
        if !origin.is_multiple_of(DECIM_FACTOR as u64) {
            return Err(Error::StreamMismatch(format!(
                "channelizer input must start on a multiple of {DECIM_FACTOR}, got {origin}"
            )));
        }
        let table = BandPhasorTable::new(cfg.band)?;
        let (mut taps, frac) = L::taps(&cfg.lpf.taps);
        taps.reverse();
        Ok(Channelizer {
            demod: table.lane_conj_entries::<L>(),
            demod_index: (origin % PHASOR_TABLE_LEN as u64) as usize,
            history: vec![Complex::default(); taps.len() - 1],
            taps,
            frac,
            rotate: QuarterShift::new(ShiftDir::Up, origin / DECIM_FACTOR as u64),
            buf: Vec::new(),
            block: Vec::new(),
        })
    }

    /// Consumes a block whose length is a multiple of 8. Only the real part
    /// of the input is read. The demodulated 2 GHz samples are appended to
    /// `demod_tap` when given.
    pub fn process(
        &mut self,
        input: &[Complex<L::S>],
        out: &mut Vec<Complex<L::S>>,
        demod_tap: Option<&mut Vec<Complex<L::S>>>,
        sat: &mut SaturationCount,
    ) {
        debug_assert!(input.len() % DECIM_FACTOR == 0);
        let n = self.taps.len();
        self.buf.clear();
        self.buf.extend_from_slice(&self.history);
        for x in input {
            self.buf.push(L::rmul(x.re, self.demod[self.demod_index], sat));
            self.demod_index += 1;
            if self.demod_index == PHASOR_TABLE_LEN {
                self.demod_index = 0;
            }
        }
        if let Some(tap) = demod_tap {
            tap.extend_from_slice(&self.buf[n - 1..]);
        }
        self.block.clear();
        for i in (0..input.len()).step_by(DECIM_FACTOR) {
            self.block.push(L::dot(&self.taps, self.frac, &self.buf[i..i + n], sat));
        }
        self.rotate.process::<L>(&mut self.block, sat);
        out.extend(self.block.iter().map(|z| Complex::new(z.re, L::S::default())));
        let tail = self.buf.len() - (n - 1);
        self.history.copy_from_slice(&self.buf[tail..]);
    }
}

/// Runs the channelizer over a whole real 2 GHz stream.
pub fn channelize(real_stream: &IqStream, cfg: &ChannelizerConfig) -> Result<IqStream> {
    channelize_with_demod(real_stream, cfg).map(|(out, _)| out)
}

/// Like [`channelize`], also returning the demodulated 2 GHz stream.
pub fn channelize_with_demod(real_stream: &IqStream, cfg: &ChannelizerConfig) -> Result<(IqStream, IqStream)> {
    if (real_stream.sample_rate - WIDE_RATE).abs() > 1.0 {
        return Err(Error::StreamMismatch(format!(
            "channelizer expects {WIDE_RATE} Hz, stream is at {} Hz",
            real_stream.sample_rate
        )));
    }
    if let Some(index) = real_stream.first_nonreal() {
        return Err(Error::NotReal { index });
    }
    crate::with_lane!(real_stream.backend(), L => {
        let mut data = L::from_stream(real_stream)?;
        data.truncate(data.len() - data.len() % DECIM_FACTOR);
        let mut ch = Channelizer::<L>::new(cfg, real_stream.origin_index)?;
        let mut sat = SaturationCount::default();
        let (mut out, mut demod) = (Vec::new(), Vec::new());
        ch.process(&data, &mut out, Some(&mut demod), &mut sat);
        let origin = real_stream.origin_index;
        Ok((
            L::samples_to_stream(out, BASE_RATE, origin / DECIM_FACTOR as u64),
            L::samples_to_stream(demod, WIDE_RATE, origin),
        ))
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DdcConfig {
    pub window_len: u32,
    pub tone: ToneConfig,
}

impl DdcConfig {
    pub fn new(window_len: u32, tone: ToneConfig) -> Result<Self> {
        if window_len == 0 {
            return Err(Error::config("ddc_window", "must be at least 1"));
        }
        Ok(DdcConfig { window_len, tone })
    }

    pub fn output_rate(&self) -> f64 {
        self.tone.sample_rate / self.window_len as f64
    }
}

/// Streaming DDC: multiply by the conjugate reference tone and average over
/// non-overlapping windows aligned to global index 0.
#[derive(Debug, Clone)]
pub struct Ddc<L: Lane> {
    window_len: u64,
    acc: Complex<L::Acc>,
    /// Global index of the next input sample.
    index: u64,
    /// False while inside a window that began before the first fed sample.
    aligned: bool,
}

impl<L: Lane> Ddc<L> {
    pub fn new(window_len: u32, origin: u64) -> Self {
        Ddc {
            window_len: window_len as u64,
            acc: Complex::default(),
            index: origin,
            aligned: origin.is_multiple_of(window_len as u64),
        }
    }

    /// Global output index of the first complete window.
    pub fn first_output_index(window_len: u32, origin: u64) -> u64 {
        origin.div_ceil(window_len as u64)
    }

    pub fn process(&mut self, x: &[Complex<L::S>], tone: &[Complex<L::S>], out: &mut Vec<Complex<L::Out>>) {
        debug_assert_eq!(x.len(), tone.len());
        for (s, t) in x.iter().zip(tone) {
            L::ddc_mac(&mut self.acc, s.re, *t);
            self.index += 1;
            if self.index.is_multiple_of(self.window_len) {
                if self.aligned {
                    out.push(L::ddc_mean(self.acc, self.window_len));
                }
                self.aligned = true;
                self.acc = Complex::default();
            }
        }
    }
}

/// DDC over a whole real 250 MHz stream. `excitation_tone` must cover the
/// same global indices. A stream shorter than one window gives an empty
/// output.
pub fn ddc(stream: &IqStream, cfg: &DdcConfig, excitation_tone: &IqStream) -> Result<IqStream> {
    stream.ensure_same_backend(excitation_tone)?;
    if let Some(index) = stream.first_nonreal() {
        return Err(Error::NotReal { index });
    }
    let start = stream.origin_index;
    let end = start + stream.len() as u64;
    let t0 = excitation_tone.origin_index;
    if t0 > start || t0 + (excitation_tone.len() as u64) < end {
        return Err(Error::StreamMismatch(
            "reference tone does not cover the signal's sample indices".into(),
        ));
    }
    if stream.len() < cfg.window_len as usize {
        log::warn!(
            "stream of {} samples is shorter than one {}-sample window",
            stream.len(),
            cfg.window_len
        );
    }
    let rate = cfg.output_rate();
    let first = Ddc::<crate::lane::Fl>::first_output_index(cfg.window_len, start);
    crate::with_lane!(stream.backend(), L => {
        let x = L::from_stream(stream)?;
        let tone = L::from_stream(excitation_tone)?;
        let offset = (start - t0) as usize;
        let mut d = Ddc::<L>::new(cfg.window_len, start);
        let mut out = Vec::new();
        d.process(&x, &tone[offset..offset + x.len()], &mut out);
        Ok(L::out_to_stream(out, rate, first))
    })
}

/// Magnitude of the `window_len`-sample boxcar average at `f` Hz for the
/// 250 MHz input rate.
pub fn averaging_filter_response(window_len: u32, f: f64) -> f64 {
    averaging_filter_response_at(window_len, f, BASE_RATE)
}

/// `|sin(πfL/Fs) / (L sin(πf/Fs))|`, with both sine arguments reduced to a
/// half turn so that exact multiples of `Fs/L` give exact zeros.
pub fn averaging_filter_response_at(window_len: u32, f: f64, rate: f64) -> f64 {
    let l = window_len.max(1) as f64;
    let x = f / rate;
    let r = x - x.round();
    if r == 0.0 {
        return 1.0;
    }
    let u = r * l;
    let num = (PI * (u - u.round())).sin().abs();
    num / (l * (PI * r).sin().abs())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::filters::channelizer;
    use crate::lane::{Fl, Fx};
    use crate::sample::Backend;
    use crate::tonegen::generate_tone;
    use num_complex::Complex64;

    #[test]
    fn kernel_dc_and_nulls() {
        assert_eq!(averaging_filter_response(65536, 0.0), 1.0);
        for k in 1..=10 {
            assert_eq!(averaging_filter_response(65536, k as f64 * BASE_RATE / 65536.0), 0.0);
        }
        let leak = averaging_filter_response(65536, BASE_RATE / 65536.0 + 762.939453125);
        assert!(leak > 1e-3);
    }

    #[test]
    fn ddc_of_dc_is_mean() {
        let tone = ToneConfig::new(0, 65536, 0).unwrap();
        let reference = generate_tone(&tone, 64, Backend::Float).unwrap();
        let x: Vec<Complex64> = (0..64).map(|n| Complex64::new(0.25 + (n % 3) as f64 * 0.125, 0.0)).collect();
        let mean = x.iter().map(|z| z.re).sum::<f64>() / 64.0;
        let cfg = DdcConfig::new(64, tone).unwrap();
        let out = ddc(&IqStream::float(x, BASE_RATE), &cfg, &reference).unwrap().to_complex64();
        assert_eq!(out, vec![Complex64::new(mean, 0.0)]);
    }

    #[test]
    fn ddc_windows_are_index_locked() {
        let tone = ToneConfig::new(0, 65536, 0).unwrap();
        let mut d = Ddc::<Fl>::new(4, 2);
        let x = vec![Complex64::new(1.0, 0.0); 10];
        let mut out = Vec::new();
        d.process(&x, &x, &mut out);
        // indices 2..12: windows [4,8) and [8,12) complete
        assert_eq!(out.len(), 2);
        assert_eq!(Ddc::<Fl>::first_output_index(4, 2), 1);
        let short = IqStream::float(vec![Complex64::new(1.0, 0.0); 3], BASE_RATE);
        let cfg = DdcConfig::new(4, tone).unwrap();
        assert!(ddc(&short, &cfg, &short).unwrap().is_empty());
    }

    #[test]
    fn channelizer_zero_and_nonreal() {
        let cfg = ChannelizerConfig::new(6, channelizer()).unwrap();
        let zero = IqStream::fixed(crate::fixed::QFormat::SAMPLE, vec![Complex::new(0, 0); 800], WIDE_RATE).unwrap();
        let out = channelize(&zero, &cfg).unwrap();
        assert_eq!(out.len(), 100);
        assert!(out.to_complex64().iter().all(|z| z.norm() == 0.0));
        let bad = IqStream::float(vec![Complex64::new(0.0, 1.0); 8], WIDE_RATE);
        assert!(matches!(channelize(&bad, &cfg), Err(Error::NotReal { index: 0 })));
    }

    #[test]
    fn channelizer_blocks_match_whole() {
        let cfg = ChannelizerConfig::new(3, channelizer()).unwrap();
        let x: Vec<Complex<i32>> = (0..4000).map(|n| Complex::new((n * 7919) % 20001 - 10000, 0)).collect();
        let mut sat = SaturationCount::default();
        let mut whole = Vec::new();
        Channelizer::<Fx>::new(&cfg, 0).unwrap().process(&x, &mut whole, None, &mut sat);
        let mut ch = Channelizer::<Fx>::new(&cfg, 0).unwrap();
        let mut parts = Vec::new();
        for c in x.chunks(400) {
            ch.process(c, &mut parts, None, &mut sat);
        }
        assert_eq!(whole, parts);
        assert!(Channelizer::<Fx>::new(&cfg, 3).is_err());
    }
}
