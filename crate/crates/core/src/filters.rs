//! Equiripple low-pass designs for the interpolator and the channelizer.
//!
//! The tap count is searched upward from the usual length estimate until
//! the 18-bit quantized response meets its mask, so both backends run
//! filters that meet the same mask.

use std::f64::consts::PI;
use std::sync::{Arc, OnceLock};

use num_complex::Complex64;
use pm_remez::{constant, pm_parameters, pm_remez, BandSetting};
use rustfft::FftPlanner;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::lane::{Fx, Lane};

/// Rate of the wideband (DAC/ADC side) signal.
pub const WIDE_RATE: f64 = 2e9;

/// Low-pass mask.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FilterSpec {
    pub sample_rate: f64,
    pub pass_edge: f64,
    pub stop_edge: f64,
    /// Peak-to-peak passband ripple.
    pub ripple_db: f64,
    /// Stopband level below the nominal gain.
    pub atten_db: f64,
    /// Nominal passband gain.
    pub gain: f64,
}

impl FilterSpec {
    /// ×8 interpolator: keeps ±50 MHz, removes images from 200 MHz.
    pub const INTERPOLATOR: FilterSpec = FilterSpec {
        sample_rate: WIDE_RATE,
        pass_edge: 50e6,
        stop_edge: 200e6,
        ripple_db: 0.01,
        atten_db: 80.0,
        // 1/64 under 8: leaves room for ripple plus the phase-truncation
        // spurs riding on a full-scale tone
        gain: 7.875,
    };

    /// Channelizer band select ahead of the ÷8 decimator.
    pub const CHANNELIZER: FilterSpec = FilterSpec {
        sample_rate: WIDE_RATE,
        pass_edge: 50e6,
        stop_edge: 75e6,
        ripple_db: 0.1,
        atten_db: 80.0,
        gain: 1.0,
    };

    fn deviations(&self) -> (f64, f64) {
        let r = 10f64.powf(self.ripple_db / 20.0);
        ((r - 1.0) / (r + 1.0), 10f64.powf(-self.atten_db / 20.0))
    }

    /// Length estimate for an equiripple low-pass.
    pub fn estimate_taps(&self) -> usize {
        let (dp, ds) = self.deviations();
        let df = (self.stop_edge - self.pass_edge) / self.sample_rate;
        let n = (-20.0 * (dp * ds).sqrt().log10() - 13.0) / (14.6 * df) + 1.0;
        (n.ceil() as usize) | 1
    }
}

/// Measured mask compliance of a tap set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MaskReport {
    pub ripple_db: f64,
    pub atten_db: f64,
}

impl MaskReport {
    pub fn meets(&self, spec: &FilterSpec) -> bool {
        self.ripple_db <= spec.ripple_db && self.atten_db >= spec.atten_db
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct FirFilter {
    pub spec: FilterSpec,
    pub taps: Vec<f64>,
}

/// Grid used for mask checks and response export.
const GRID: usize = 1 << 17;

impl FirFilter {
    /// Smallest odd-length design whose 18-bit quantized taps meet `spec`.
    pub fn design(spec: FilterSpec) -> Result<FirFilter> {
        let start = spec.estimate_taps();
        for n in (start..start + 200).step_by(2) {
            let taps = remez(&spec, n)?;
            let (q, frac) = Fx::taps(&taps);
            let quantized: Vec<f64> = q.iter().map(|&t| Fx::tap_to_f64(t, frac)).collect();
            if mask_report(&spec, &quantized).meets(&spec) && mask_report(&spec, &taps).meets(&spec) {
                return Ok(FirFilter { spec, taps });
            }
        }
        Err(Error::FilterDesign(format!(
            "no design up to {} taps meets the mask",
            start + 200
        )))
    }

    pub fn len(&self) -> usize {
        self.taps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.taps.is_empty()
    }

    /// Group delay in samples at the filter rate.
    pub fn delay(&self) -> f64 {
        (self.taps.len() - 1) as f64 / 2.0
    }

    /// Complex response at `f` Hz.
    pub fn response(&self, f: f64) -> Complex64 {
        let w = -2.0 * PI * f / self.spec.sample_rate;
        self.taps
            .iter()
            .enumerate()
            .map(|(n, &h)| Complex64::from_polar(h, w * n as f64))
            .sum()
    }

    pub fn mask(&self) -> MaskReport {
        mask_report(&self.spec, &self.taps)
    }

    /// Mask compliance of the taps as the fixed-point datapath sees them.
    pub fn quantized_mask(&self) -> MaskReport {
        let (q, frac) = Fx::taps(&self.taps);
        let quantized: Vec<f64> = q.iter().map(|&t| Fx::tap_to_f64(t, frac)).collect();
        mask_report(&self.spec, &quantized)
    }

    /// Magnitude response in dB relative to the nominal gain on `points`
    /// frequencies from DC to Nyquist.
    pub fn response_db(&self, points: usize) -> Vec<(f64, f64)> {
        let mag = magnitude_grid(&self.taps);
        let points = points.max(2);
        (0..points)
            .map(|i| {
                let k = i * (GRID / 2) / (points - 1);
                let f = k as f64 * self.spec.sample_rate / GRID as f64;
                (f, 20.0 * (mag[k] / self.spec.gain).max(1e-20).log10())
            })
            .collect()
    }
}

fn remez(spec: &FilterSpec, n: usize) -> Result<Vec<f64>> {
    let (dp, ds) = spec.deviations();
    let fs = spec.sample_rate;
    let err = |e: pm_remez::error::Error| Error::FilterDesign(e.to_string());
    let bands = [
        BandSetting::with_weight(0.0, spec.pass_edge / fs, constant(1.0), constant(ds / dp)).map_err(err)?,
        BandSetting::new(spec.stop_edge / fs, 0.5, constant(0.0)).map_err(err)?,
    ];
    let params = pm_parameters(n, &bands).map_err(err)?;
    let design = pm_remez(&params).map_err(err)?;
    Ok(design.impulse_response.iter().map(|h| h * spec.gain).collect())
}

fn magnitude_grid(taps: &[f64]) -> Vec<f64> {
    let mut buf: Vec<Complex64> = taps.iter().map(|&h| Complex64::new(h, 0.0)).collect();
    buf.resize(GRID, Complex64::new(0.0, 0.0));
    FftPlanner::new().plan_fft_forward(GRID).process(&mut buf);
    buf.iter().map(|z| z.norm()).collect()
}

fn mask_report(spec: &FilterSpec, taps: &[f64]) -> MaskReport {
    let mag = magnitude_grid(taps);
    let bin = spec.sample_rate / GRID as f64;
    let pass_end = (spec.pass_edge / bin).floor() as usize;
    let stop_start = (spec.stop_edge / bin).ceil() as usize;
    let (lo, hi) = mag[..=pass_end]
        .iter()
        .fold((f64::MAX, 0.0f64), |(lo, hi), &m| (lo.min(m), hi.max(m)));
    let stop = mag[stop_start..=GRID / 2].iter().fold(0.0f64, |a, &m| a.max(m));
    MaskReport {
        ripple_db: 20.0 * (hi / lo).log10(),
        atten_db: -20.0 * (stop / spec.gain).log10(),
    }
}

static INTERPOLATOR: OnceLock<Arc<FirFilter>> = OnceLock::new();
static CHANNELIZER: OnceLock<Arc<FirFilter>> = OnceLock::new();

/// Default ×8 interpolation filter, designed once per process.
pub fn interpolator() -> Arc<FirFilter> {
    INTERPOLATOR
        .get_or_init(|| Arc::new(FirFilter::design(FilterSpec::INTERPOLATOR).expect("interpolator design")))
        .clone()
}

/// Default channelizer low-pass, designed once per process.
pub fn channelizer() -> Arc<FirFilter> {
    CHANNELIZER
        .get_or_init(|| Arc::new(FirFilter::design(FilterSpec::CHANNELIZER).expect("channelizer design")))
        .clone()
}
