//! Exact period bookkeeping through the chain, and empirical checks of it.
//!
//! A stage either multiplies by a periodic sequence (period becomes an
//! LCM), changes the rate (period scales), or decimates (period divides by
//! the common factor). Everything here is integer arithmetic.

use num_integer::Integer;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sample::{IqStream, Samples};

/// Relative tolerance for float-mode period checks, in units of signal RMS.
pub const FLOAT_PERIOD_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StageDescriptor {
    /// Phase accumulator of modulus M.
    Accumulator(u64),
    /// ±Fs/4 shift, a period-4 modulation.
    QuarterRateShift,
    /// Rate increase by L.
    Interpolate(u64),
    /// Multiplication by a table of period P.
    PhasorModulate(u64),
    /// Keep every D-th sample.
    Decimate(u64),
    /// Average and decimate by L over index-locked windows.
    BoxcarDecimate(u64),
}

impl StageDescriptor {
    fn parameter(self) -> u64 {
        match self {
            StageDescriptor::Accumulator(v)
            | StageDescriptor::Interpolate(v)
            | StageDescriptor::PhasorModulate(v)
            | StageDescriptor::Decimate(v)
            | StageDescriptor::BoxcarDecimate(v) => v,
            StageDescriptor::QuarterRateShift => 4,
        }
    }

    /// Period after this stage given the period `p` before it.
    pub fn apply(self, p: u64) -> u64 {
        match self {
            StageDescriptor::Accumulator(m) => p.lcm(&m),
            StageDescriptor::QuarterRateShift => p.lcm(&4),
            StageDescriptor::Interpolate(l) => p * l,
            StageDescriptor::PhasorModulate(q) => p.lcm(&q),
            StageDescriptor::Decimate(d) | StageDescriptor::BoxcarDecimate(d) => p / p.gcd(&d),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StagePeriod {
    pub stage: StageDescriptor,
    /// Period in samples at this stage's output rate.
    pub predicted: u64,
    /// Filled in by an empirical check.
    pub verified: Option<bool>,
    pub first_mismatch: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PeriodicityReport {
    pub stages: Vec<StagePeriod>,
}

impl PeriodicityReport {
    /// Period at the end of the chain.
    pub fn period(&self) -> u64 {
        self.stages.last().map_or(1, |s| s.predicted)
    }
}

/// Folds the chain left to right starting from period 1. The result is a
/// period of the output; it is the smallest one unless modulation tables
/// happen to cancel, as two quarter-rate shifts in a row do, or a quarter-rate
/// shift averaged over four samples.
pub fn predict_period(chain: &[StageDescriptor]) -> Result<PeriodicityReport> {
    if chain.is_empty() {
        return Err(Error::config("chain", "at least one stage is required"));
    }
    let mut p = 1u64;
    let mut stages = Vec::with_capacity(chain.len());
    for &stage in chain {
        if stage.parameter() == 0 {
            return Err(Error::config("chain", format!("{stage:?} has a zero parameter")));
        }
        p = stage.apply(p);
        stages.push(StagePeriod {
            stage,
            predicted: p,
            verified: None,
            first_mismatch: None,
        });
    }
    Ok(PeriodicityReport { stages })
}

/// Stages of the single-band closed loop, tone generator to DDC output.
/// `tone_period` is the accumulator's period, the modulus itself for a
/// control word coprime to it; `phasor_period` is the band table's smallest
/// period (40, or 8 for bands 2 and 7).
pub fn closed_loop_chain(tone_period: u64, window: u64, phasor_period: u64) -> Vec<StageDescriptor> {
    use StageDescriptor::*;
    vec![
        Accumulator(tone_period),
        QuarterRateShift,
        Interpolate(8),
        PhasorModulate(phasor_period),
        PhasorModulate(phasor_period),
        Decimate(8),
        QuarterRateShift,
        PhasorModulate(tone_period),
        BoxcarDecimate(window),
    ]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PeriodCheck {
    pub verified: bool,
    /// Global index `n` of the first sample with `x[n] != x[n+period]`.
    pub first_mismatch: Option<u64>,
}

/// Checks `x[n] = x[n+period]` over the last `(n_periods+1)·period` samples
/// of the stream: bit-exact for fixed streams, within 1e-9 of the RMS for
/// float streams. Using the tail skips filter start-up transients.
pub fn verify_period(stream: &IqStream, period: u64, n_periods: u64) -> Result<PeriodCheck> {
    let needed = (n_periods.max(1) + 1)
        .checked_mul(period)
        .filter(|&n| period > 0 && n <= usize::MAX as u64)
        .ok_or_else(|| Error::config("period", "must be positive and addressable"))? as usize;
    if stream.len() < needed {
        return Err(Error::InsufficientSamples {
            needed,
            available: stream.len(),
        });
    }
    let start = stream.len() - needed;
    let p = period as usize;
    let span = needed - p;
    let mismatch = match &stream.samples {
        Samples::Fixed { data, .. } => {
            let d = &data[start..];
            (0..span).find(|&n| d[n] != d[n + p])
        }
        Samples::Float(data) => {
            let d = &data[start..];
            let rms = (d.iter().map(|z| z.norm_sqr()).sum::<f64>() / d.len() as f64).sqrt();
            let tol = FLOAT_PERIOD_TOLERANCE * rms;
            (0..span).find(|&n| (d[n] - d[n + p]).norm() > tol)
        }
    };
    Ok(PeriodCheck {
        verified: mismatch.is_none(),
        first_mismatch: mismatch.map(|n| stream.origin_index + (start + n) as u64),
    })
}

/// Smallest `p ≤ max_period` with `x[n] = x[n+p]` over the whole slice,
/// found by direct search.
pub fn smallest_period<T: PartialEq>(x: &[T], max_period: usize) -> Option<usize> {
    (1..=max_period.min(x.len().saturating_sub(1))).find(|&p| (0..x.len() - p).all(|n| x[n] == x[n + p]))
}

/// DDC-output spur lines implied by the period mismatch between the
/// up-shifted stream and the accumulator. `rate` is the tone generator rate.
pub fn spur_frequency_prediction(modulus: u64, window_len: u64, phasor_period: u64, interp: u64, rate: f64) -> Vec<f64> {
    use StageDescriptor::*;
    let chain = [
        Accumulator(modulus),
        QuarterRateShift,
        Interpolate(interp),
        PhasorModulate(phasor_period),
    ];
    let Ok(report) = predict_period(&chain) else {
        return Vec::new();
    };
    let r = report.period() / (interp * modulus);
    if r <= 1 {
        return Vec::new();
    }
    let fundamental = rate / window_len as f64 / r as f64;
    (1..=2).map(|k| k as f64 * fundamental).collect()
}
