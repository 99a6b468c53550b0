//! Frequency-domain analysis: bin-alignment metric, amplitude/phase noise
//! extraction, Welch PSD and spur detection.

use std::f64::consts::PI;

use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sample::IqStream;

/// Value reported for bins with zero power, dB.
pub const PSD_FLOOR_DB: f64 = -400.0;
/// Half-width of the neighbourhood used by the bin-alignment metric.
pub const ALIGNMENT_SPAN: usize = 10;

/// Segment taper for the averaged periodogram.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Window {
    #[default]
    Hann,
    /// No taper.
    Rect,
}

impl Window {
    fn coefficients(self, n: usize) -> Vec<f64> {
        match self {
            Window::Hann => (0..n).map(|k| 0.5 - 0.5 * (2.0 * PI * k as f64 / n as f64).cos()).collect(),
            Window::Rect => vec![1.0; n],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Spur {
    pub freq: f64,
    pub prominence_db: f64,
}

/// One-sided PSD in dB per Hz, with the estimator settings that made it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumReport {
    pub freqs: Vec<f64>,
    pub psd: Vec<f64>,
    pub sample_rate: f64,
    /// Segment length, i.e. transform size.
    pub n_points: usize,
    pub overlap: f64,
    pub segments: usize,
    pub window: Window,
    pub detected_spurs: Vec<Spur>,
}

impl SpectrumReport {
    pub fn bin_width(&self) -> f64 {
        self.sample_rate / self.n_points as f64
    }

    /// Density per Hz, linear.
    pub fn linear(&self) -> Vec<f64> {
        self.psd
            .iter()
            .map(|&d| if d <= PSD_FLOOR_DB { 0.0 } else { 10f64.powf(d / 10.0) })
            .collect()
    }

    /// Index of the bin nearest `freq`.
    pub fn bin_of(&self, freq: f64) -> usize {
        ((freq / self.bin_width()).round().max(0.0) as usize).min(self.freqs.len().saturating_sub(1))
    }
}

/// Mean-removed, normalized amplitude and mean-removed phase of an I/Q
/// sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseStreams {
    pub amp_noise: Vec<f64>,
    pub phase_noise: Vec<f64>,
    pub rate: f64,
}

/// Mean computed about the first element, so a constant sequence has a
/// mean exactly equal to its value.
fn shifted_mean(x: &[f64]) -> f64 {
    let x0 = x[0];
    x0 + x.iter().map(|v| v - x0).sum::<f64>() / x.len() as f64
}

pub fn amp_phase_noise(iq: &IqStream) -> Result<NoiseStreams> {
    let z = iq.to_complex64();
    if z.is_empty() {
        return Err(Error::InsufficientSamples { needed: 1, available: 0 });
    }
    if let Some(index) = z.iter().position(|s| s.re == 0.0 && s.im == 0.0) {
        return Err(Error::ZeroMagnitude { index });
    }
    let amp: Vec<f64> = z.iter().map(|s| s.norm()).collect();
    let mut phase: Vec<f64> = Vec::with_capacity(z.len());
    let mut offset = 0.0;
    let mut prev = z[0].arg();
    for s in &z {
        let p = s.arg();
        let d = p - prev;
        if d > PI {
            offset -= 2.0 * PI;
        } else if d < -PI {
            offset += 2.0 * PI;
        }
        prev = p;
        phase.push(p + offset);
    }
    let ma = shifted_mean(&amp);
    let mp = shifted_mean(&phase);
    Ok(NoiseStreams {
        amp_noise: amp.iter().map(|a| (a - ma) / ma).collect(),
        phase_noise: phase.iter().map(|p| p - mp).collect(),
        rate: iq.sample_rate,
    })
}

/// Largest power of two not above `len / 4`, at least 2.
pub fn default_seg_len(len: usize) -> usize {
    let q = (len / 4).max(2);
    1 << (usize::BITS - 1 - q.leading_zeros())
}

/// Welch estimate with a Hann taper.
pub fn estimate_psd(x: &[f64], rate: f64, seg_len: usize, overlap: f64) -> Result<SpectrumReport> {
    estimate_psd_with(x, rate, seg_len, overlap, Window::Hann)
}

/// Averaged periodogram, one-sided, scaled so that white noise of variance
/// σ² reads 2σ²/rate per Hz.
pub fn estimate_psd_with(x: &[f64], rate: f64, seg_len: usize, overlap: f64, window: Window) -> Result<SpectrumReport> {
    if seg_len < 2 || seg_len > x.len() {
        return Err(Error::config(
            "psd.seg_len",
            format!("{seg_len} must be in 2..={}", x.len()),
        ));
    }
    if !(0.0..1.0).contains(&overlap) {
        return Err(Error::config("psd.overlap", format!("{overlap} is not in [0, 1)")));
    }
    if rate.is_nan() || rate <= 0.0 {
        return Err(Error::config("rate", "must be positive"));
    }
    let step = ((seg_len as f64 * (1.0 - overlap)).round() as usize).max(1);
    let segments = (x.len() - seg_len) / step + 1;
    let w = window.coefficients(seg_len);
    let wss: f64 = w.iter().map(|v| v * v).sum();
    let fft = FftPlanner::new().plan_fft_forward(seg_len);
    let half = seg_len / 2 + 1;
    let mut acc = vec![0.0; half];
    let mut buf = vec![Complex64::new(0.0, 0.0); seg_len];
    for s in 0..segments {
        let seg = &x[s * step..s * step + seg_len];
        for ((b, &v), &wk) in buf.iter_mut().zip(seg).zip(&w) {
            *b = Complex64::new(v * wk, 0.0);
        }
        fft.process(&mut buf);
        for (a, b) in acc.iter_mut().zip(&buf) {
            *a += b.norm_sqr();
        }
    }
    let scale = 1.0 / (rate * wss * segments as f64);
    let psd = acc
        .iter()
        .enumerate()
        .map(|(k, &p)| {
            let edge = k == 0 || (seg_len.is_multiple_of(2) && k == seg_len / 2);
            let d = p * scale * if edge { 1.0 } else { 2.0 };
            if d > 0.0 {
                (10.0 * d.log10()).max(PSD_FLOOR_DB)
            } else {
                PSD_FLOOR_DB
            }
        })
        .collect();
    Ok(SpectrumReport {
        freqs: (0..half).map(|k| k as f64 * rate / seg_len as f64).collect(),
        psd,
        sample_rate: rate,
        n_points: seg_len,
        overlap,
        segments,
        window,
        detected_spurs: Vec::new(),
    })
}

/// Half-width of the floor neighbourhood, in bins.
const FLOOR_SPAN: usize = 8;
/// Bins next to a candidate left out of its floor estimate.
const FLOOR_GUARD: usize = 2;

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Local maxima strictly inside (0, rate/2) that stand at least
/// `min_prominence_db` above the median of their neighbourhood, strongest
/// first.
pub fn detect_spurs(report: &SpectrumReport, min_prominence_db: f64) -> Vec<Spur> {
    let p = &report.psd;
    let n = p.len();
    let mut spurs = Vec::new();
    if n < 3 {
        return spurs;
    }
    let mut floor = Vec::with_capacity(2 * FLOOR_SPAN);
    for k in 1..n - 1 {
        if !(p[k] > p[k - 1] && p[k] >= p[k + 1]) {
            continue;
        }
        floor.clear();
        let lo = k.saturating_sub(FLOOR_SPAN).max(1);
        let hi = (k + FLOOR_SPAN).min(n - 1);
        floor.extend((lo..=hi).filter(|&j| j.abs_diff(k) > FLOOR_GUARD).map(|j| p[j]));
        if floor.is_empty() {
            continue;
        }
        let prominence = p[k] - median(&mut floor);
        if prominence >= min_prominence_db {
            spurs.push(Spur {
                freq: report.freqs[k],
                prominence_db: prominence,
            });
        }
    }
    spurs.sort_by(|a, b| b.prominence_db.total_cmp(&a.prominence_db));
    spurs
}

/// Power spectrum `|X[k]|²` of the last `n_fft` samples.
pub fn power_spectrum(x: &[Complex64], n_fft: usize) -> Result<Vec<f64>> {
    if n_fft == 0 || x.len() < n_fft {
        return Err(Error::InsufficientSamples {
            needed: n_fft.max(1),
            available: x.len(),
        });
    }
    let mut buf = x[x.len() - n_fft..].to_vec();
    FftPlanner::new().plan_fft_forward(n_fft).process(&mut buf);
    Ok(buf.iter().map(|z| z.norm_sqr()).collect())
}

fn concentration(p: &[f64], peak: usize) -> f64 {
    let n = p.len();
    let span = ALIGNMENT_SPAN.min((n - 1) / 2);
    let total: f64 = (0..=2 * span).map(|d| p[(peak + n + d - span) % n]).sum();
    if total == 0.0 {
        0.0
    } else {
        p[peak] / total
    }
}

/// Strongest bin of an `n_fft`-point transform of the last `n_fft` samples
/// and the fraction of the power within ±10 bins that sits in it. Exactly
/// `n_fft`-periodic sequences give 1 for line spectra.
pub fn bin_alignment_metric(x: &[Complex64], n_fft: usize) -> Result<(usize, f64)> {
    let p = power_spectrum(x, n_fft)?;
    let peak = p
        .iter()
        .enumerate()
        .fold(0, |best, (k, &v)| if v > p[best] { k } else { best });
    Ok((peak, concentration(&p, peak)))
}

/// Bin-alignment metric for the strongest bin within ±10 bins of `freq`.
pub fn bin_alignment_near(x: &[Complex64], n_fft: usize, rate: f64, freq: f64) -> Result<(usize, f64)> {
    let p = power_spectrum(x, n_fft)?;
    let n = n_fft as i64;
    let center = (freq / rate * n_fft as f64).round() as i64;
    let span = ALIGNMENT_SPAN as i64;
    let peak = (center - span..=center + span)
        .map(|k| k.rem_euclid(n) as usize)
        .fold(None::<usize>, |best, k| match best {
            Some(b) if p[b] >= p[k] => Some(b),
            _ => Some(k),
        })
        .unwrap_or(0);
    Ok((peak, concentration(&p, peak)))
}

/// Frequency of bin `k` of an `n_fft`-point transform, mapped to
/// (−rate/2, rate/2].
pub fn bin_frequency(k: usize, n_fft: usize, rate: f64) -> f64 {
    let k = if 2 * k > n_fft { k as f64 - n_fft as f64 } else { k as f64 };
    k * rate / n_fft as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn gauss(rng: &mut ChaCha8Rng) -> f64 {
        StandardNormal.sample(rng)
    }

    #[test]
    fn constant_iq_has_zero_noise() {
        let s = IqStream::float(vec![Complex64::new(3.0, 4.0); 50], 1000.0);
        let n = amp_phase_noise(&s).unwrap();
        assert!(n.amp_noise.iter().all(|&v| v == 0.0));
        assert!(n.phase_noise.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_sample_is_named() {
        let mut v = vec![Complex64::new(1.0, 0.0); 5];
        v[3] = Complex64::new(0.0, 0.0);
        let e = amp_phase_noise(&IqStream::float(v, 1.0)).unwrap_err();
        assert!(matches!(e, Error::ZeroMagnitude { index: 3 }));
    }

    #[test]
    fn phase_is_unwrapped_ramp() {
        let eps = 0.3;
        let v: Vec<Complex64> = (0..100).map(|n| Complex64::from_polar(1.0, eps * n as f64)).collect();
        let n = amp_phase_noise(&IqStream::float(v, 1.0)).unwrap();
        for w in n.phase_noise.windows(2) {
            assert!((w[1] - w[0] - eps).abs() < 1e-9);
        }
        assert!(n.amp_noise.iter().all(|v| v.abs() < 1e-14));
    }

    #[test]
    fn white_noise_density() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let sigma = 0.5;
        let rate = 1000.0;
        let x: Vec<f64> = (0..1 << 16).map(|_| sigma * gauss(&mut rng)).collect();
        let r = estimate_psd(&x, rate, 256, 0.5).unwrap();
        let expect = 10.0 * (2.0 * sigma * sigma / rate).log10();
        let lin = r.linear();
        let mean = lin[1..lin.len() - 1].iter().sum::<f64>() / (lin.len() - 2) as f64;
        assert!((10.0 * mean.log10() - expect).abs() < 1.0);
    }

    #[test]
    fn sinusoid_power() {
        let (a, rate, seg) = (0.7, 1024.0, 256);
        let k0 = 40.0;
        let x: Vec<f64> = (0..4096).map(|n| a * (2.0 * PI * k0 * n as f64 / seg as f64).cos()).collect();
        let r = estimate_psd(&x, rate, seg, 0.5).unwrap();
        let power: f64 = r.linear().iter().sum::<f64>() * r.bin_width();
        assert!((power - a * a / 2.0).abs() < 0.05 * a * a / 2.0);
    }

    #[test]
    fn rect_periodogram_parseval() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x: Vec<f64> = (0..1024).map(|_| gauss(&mut rng)).collect();
        let m = x.iter().sum::<f64>() / x.len() as f64;
        let var = x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / x.len() as f64;
        let centered: Vec<f64> = x.iter().map(|v| v - m).collect();
        let r = estimate_psd_with(&centered, 10.0, 1024, 0.0, Window::Rect).unwrap();
        let total: f64 = r.linear().iter().sum::<f64>() * r.bin_width();
        assert!((total - var).abs() < 0.01 * var);
    }

    #[test]
    fn zero_sequence_reports_floor() {
        let r = estimate_psd(&[0.0; 64], 1.0, 16, 0.5).unwrap();
        assert!(r.psd.iter().all(|&d| d == PSD_FLOOR_DB));
        assert!(detect_spurs(&r, 10.0).is_empty());
        assert!(estimate_psd(&[0.0; 8], 1.0, 16, 0.5).is_err());
    }

    #[test]
    fn injected_line_is_the_only_spur() {
        let n = 129;
        let mut psd = vec![-100.0; n];
        psd[40] = -70.0;
        let r = SpectrumReport {
            freqs: (0..n).map(|k| k as f64).collect(),
            psd,
            sample_rate: 256.0,
            n_points: 256,
            overlap: 0.5,
            segments: 1,
            window: Window::Hann,
            detected_spurs: vec![],
        };
        let s = detect_spurs(&r, 10.0);
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].freq, 40.0);
        assert!((s[0].prominence_db - 30.0).abs() < 1e-12);
    }

    #[test]
    fn real_input_spectrum_is_conjugate_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 300;
        let mut buf: Vec<Complex64> = (0..n).map(|_| Complex64::new(gauss(&mut rng), 0.0)).collect();
        FftPlanner::new().plan_fft_forward(n).process(&mut buf);
        for k in 1..n {
            assert!((buf[k] - buf[n - k].conj()).norm() < 1e-10);
        }
    }

    #[test]
    fn alignment_of_periodic_tone() {
        let x: Vec<Complex64> = (0..1024).map(|n| Complex64::from_polar(1.0, 2.0 * PI * 37.0 * n as f64 / 512.0)).collect();
        let (k, c) = bin_alignment_metric(&x, 512).unwrap();
        assert_eq!(k, 37);
        assert!(c > 0.999999);
        let (_, c) = bin_alignment_metric(&x, 511).unwrap();
        assert!(c < 0.999);
        let (k, _) = bin_alignment_near(&x, 512, 512.0, 36.0).unwrap();
        assert_eq!(k, 37);
        assert_eq!(bin_frequency(500, 512, 512.0), -12.0);
    }

    #[test]
    fn default_segment_length() {
        assert_eq!(default_seg_len(256), 64);
        assert_eq!(default_seg_len(255), 32);
        assert_eq!(default_seg_len(4), 2);
    }
}
