//! Closed-loop orchestration: excitation fed straight back into analysis,
//! streamed in blocks, bands processed in parallel.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use num_complex::{Complex, Complex64};
use num_integer::Integer;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::{Channelizer, ChannelizerConfig, Ddc};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::excitation::{combine_blocks, phasor_period, BandPhasorTable, BandShifter, Component, Interpolator, QuarterShift, ShiftDir, INTERP_FACTOR};
use crate::filters::{self, WIDE_RATE};
use crate::fixed::SaturationCount;
use crate::lane::Lane;
use crate::periodicity::{closed_loop_chain, predict_period, verify_period, PeriodCheck, PeriodicityReport, StageDescriptor};
use crate::sample::IqStream;
use crate::spectral::{amp_phase_noise, bin_alignment_metric, bin_frequency, detect_spurs, estimate_psd, power_spectrum, SpectrumReport};
use crate::tonegen::{ToneConfig, ToneSource, ToneTable, BASE_RATE};

/// Observation points of the chain. Each refers to the first configured
/// tone and its band.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum Tap {
    /// Tone generator output, 250 MHz.
    Tonegen,
    /// Band sum after the −Fs/4 shift, 250 MHz.
    Downshift,
    /// Interpolator output, 2 GHz.
    Interp,
    /// Band up-shifter output, 2 GHz.
    Upshift,
    /// Channelizer input after band demodulation, 2 GHz.
    ChannelizerDemod,
    /// Channelizer output, 250 MHz, real.
    ChannelizerOut,
    /// DDC output of the first tone.
    Ddc,
}

impl Tap {
    pub const ALL: [Tap; 7] = [
        Tap::Tonegen,
        Tap::Downshift,
        Tap::Interp,
        Tap::Upshift,
        Tap::ChannelizerDemod,
        Tap::ChannelizerOut,
        Tap::Ddc,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Tap::Tonegen => "tonegen",
            Tap::Downshift => "downshift",
            Tap::Interp => "interp",
            Tap::Upshift => "upshift",
            Tap::ChannelizerDemod => "channelizer_demod",
            Tap::ChannelizerOut => "channelizer_out",
            Tap::Ddc => "ddc",
        }
    }

    /// Sample rate of the tap's stream.
    pub fn rate(self, ddc_window: u32) -> f64 {
        match self {
            Tap::Tonegen | Tap::Downshift | Tap::ChannelizerOut => BASE_RATE,
            Tap::Interp | Tap::Upshift | Tap::ChannelizerDemod => WIDE_RATE,
            Tap::Ddc => BASE_RATE / ddc_window as f64,
        }
    }

    /// Number of closed-loop chain stages that precede this tap.
    fn chain_len(self) -> usize {
        match self {
            Tap::Tonegen => 1,
            Tap::Downshift => 2,
            Tap::Interp => 3,
            Tap::Upshift => 4,
            Tap::ChannelizerDemod => 5,
            Tap::ChannelizerOut => 7,
            Tap::Ddc => 9,
        }
    }

    /// Predicted period of the tap's stream in its own samples.
    pub fn predicted_period(self, cfg: &RunConfig) -> u64 {
        let chain = predicted_chain(cfg);
        predict_period(&chain[..self.chain_len()]).map_or(1, |r| r.period())
    }
}

impl fmt::Display for Tap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Tap {
    type Err = Error;

    fn from_str(s: &str) -> Result<Tap> {
        Tap::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| Error::UnknownTap(s.to_string()))
    }
}

/// Saturation events per stage, summed over bands.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageSaturation {
    pub tone_combine: u64,
    pub downshift: u64,
    pub interp: u64,
    pub upshift: u64,
    pub band_combine: u64,
    pub channelizer: u64,
}

impl StageSaturation {
    pub fn total(&self) -> u64 {
        self.tone_combine + self.downshift + self.interp + self.upshift + self.band_combine + self.channelizer
    }

    fn add(&mut self, o: &StageSaturation) {
        self.tone_combine += o.tone_combine;
        self.downshift += o.downshift;
        self.interp += o.interp;
        self.upshift += o.upshift;
        self.band_combine += o.band_combine;
        self.channelizer += o.channelizer;
    }
}

#[derive(Debug, Clone)]
pub struct ToneResult {
    pub tone: ToneConfig,
    /// All DDC outputs, starting with the first window.
    pub ddc: IqStream,
    pub amp_psd: SpectrumReport,
    pub phase_psd: SpectrumReport,
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub config: RunConfig,
    pub tones: Vec<ToneResult>,
    /// Predicted closed-loop periods; the DDC stage is checked against the
    /// first tone's output.
    pub periodicity: PeriodicityReport,
    pub saturation: StageSaturation,
    pub wall_time_s: f64,
}

/// Execution options that do not change results.
#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions {
    /// Worker threads; 0 uses the global pool.
    pub workers: usize,
}

struct BandState<L: Lane> {
    sources: Vec<ToneSource<L>>,
    down: QuarterShift,
    interp: Interpolator<L>,
    up: BandShifter<L>,
    chan: Channelizer<L>,
    ddcs: Vec<Ddc<L>>,
    sat: StageSaturation,
    tone_blocks: Vec<Vec<Complex<L::S>>>,
    base: Vec<Complex<L::S>>,
    wide: Vec<Complex<L::S>>,
    chan_out: Vec<Complex<L::S>>,
    ddc_out: Vec<Vec<Complex<L::Out>>>,
}

#[derive(Default)]
struct Capture<L: Lane> {
    tap: Option<Tap>,
    samples: Vec<Complex<L::S>>,
}

impl<L: Lane> Capture<L> {
    fn take(&mut self, tap: Tap, data: &[Complex<L::S>]) {
        if self.tap == Some(tap) {
            self.samples.extend_from_slice(data);
        }
    }
}

impl<L: Lane + ToneTable> BandState<L> {
    fn new(band: u8, tones: &[ToneConfig], cfg: &RunConfig) -> Result<Self> {
        let interp = filters::interpolator();
        let chan_cfg = ChannelizerConfig::new(band, filters::channelizer())?;
        Ok(BandState {
            sources: tones
                .iter()
                .map(|t| ToneSource::new(*t, cfg.cordic_iterations))
                .collect::<Result<_>>()?,
            down: QuarterShift::new(ShiftDir::Down, 0),
            interp: Interpolator::new(&interp),
            up: BandShifter::new(&BandPhasorTable::new(band)?, 0),
            chan: Channelizer::new(&chan_cfg, 0)?,
            ddcs: tones.iter().map(|_| Ddc::new(cfg.ddc_window, 0)).collect(),
            sat: StageSaturation::default(),
            tone_blocks: vec![Vec::new(); tones.len()],
            base: Vec::new(),
            wide: Vec::new(),
            chan_out: Vec::new(),
            ddc_out: vec![Vec::new(); tones.len()],
        })
    }

    /// Tone generation through band up-shift for `n` base-rate samples.
    fn excite(&mut self, n: usize, cap: Option<&mut Capture<L>>) {
        for (src, block) in self.sources.iter_mut().zip(&mut self.tone_blocks) {
            block.clear();
            src.fill(n, block);
        }
        let refs: Vec<&[Complex<L::S>]> = self.tone_blocks.iter().map(|b| b.as_slice()).collect();
        let mut sat = SaturationCount::default();
        self.base = combine_blocks::<L>(&refs, &mut sat);
        self.sat.tone_combine += sat.0;

        let mut sat = SaturationCount::default();
        self.down.process::<L>(&mut self.base, &mut sat);
        self.sat.downshift += sat.0;

        let mut sat = SaturationCount::default();
        self.wide.clear();
        self.interp.process(&self.base, &mut self.wide, &mut sat);
        self.sat.interp += sat.0;

        let mut cap = cap;
        if let Some(c) = cap.as_deref_mut() {
            c.take(Tap::Tonegen, &self.tone_blocks[0]);
            c.take(Tap::Downshift, &self.base);
            c.take(Tap::Interp, &self.wide);
        }

        let mut sat = SaturationCount::default();
        self.up.process(&mut self.wide, &mut sat);
        self.sat.upshift += sat.0;

        if let Some(c) = cap {
            c.take(Tap::Upshift, &self.wide);
        }
    }

    /// Channelizer and DDCs over one block of the looped-back signal.
    fn analyse(&mut self, loopback: &[Complex<L::S>], cap: Option<&mut Capture<L>>) {
        let mut sat = SaturationCount::default();
        self.chan_out.clear();
        match cap {
            Some(c) => {
                let demod = (c.tap == Some(Tap::ChannelizerDemod)).then_some(&mut c.samples);
                self.chan.process(loopback, &mut self.chan_out, demod, &mut sat);
                c.take(Tap::ChannelizerOut, &self.chan_out);
            }
            None => self.chan.process(loopback, &mut self.chan_out, None, &mut sat),
        }
        self.sat.channelizer += sat.0;
        for ((ddc, tone), out) in self.ddcs.iter_mut().zip(&self.tone_blocks).zip(&mut self.ddc_out) {
            ddc.process(&self.chan_out, tone, out);
        }
    }
}

struct Engine<L: Lane> {
    bands: Vec<BandState<L>>,
    /// (band slot, tone slot) of each tone in configuration order.
    order: Vec<(usize, usize)>,
    loopback: Component,
    band_sat: u64,
    capture: Capture<L>,
    wide_sum: Vec<Complex<L::S>>,
}

impl<L: Lane + ToneTable> Engine<L> {
    fn new(cfg: &RunConfig, tap: Option<Tap>) -> Result<Self> {
        cfg.validate()?;
        let tones = cfg.tones();
        let mut bands = Vec::new();
        let mut order = Vec::new();
        for (slot, b) in cfg.bands.iter().enumerate() {
            let band_tones: Vec<ToneConfig> = tones.iter().filter(|t| t.band == b.index).copied().collect();
            order.extend((0..band_tones.len()).map(|k| (slot, k)));
            bands.push(BandState::new(b.index, &band_tones, cfg)?);
        }
        Ok(Engine {
            bands,
            order,
            loopback: cfg.loopback,
            band_sat: 0,
            capture: Capture { tap, samples: Vec::new() },
            wide_sum: Vec::new(),
        })
    }

    fn step(&mut self, n: usize) {
        let (first, rest) = self.bands.split_first_mut().expect("at least one band");
        let cap = &mut self.capture;
        rayon::join(
            || first.excite(n, Some(cap)),
            || rest.par_iter_mut().for_each(|b| b.excite(n, None)),
        );

        let refs: Vec<&[Complex<L::S>]> = self.bands.iter().map(|b| b.wide.as_slice()).collect();
        let mut sat = SaturationCount::default();
        self.wide_sum = combine_blocks::<L>(&refs, &mut sat);
        self.band_sat += sat.0;
        let select = self.loopback;
        for z in &mut self.wide_sum {
            let v = if select == Component::I { z.re } else { z.im };
            *z = Complex::new(v, L::S::default());
        }

        let wide = &self.wide_sum;
        let (first, rest) = self.bands.split_first_mut().expect("at least one band");
        let cap = &mut self.capture;
        rayon::join(
            || first.analyse(wide, Some(cap)),
            || rest.par_iter_mut().for_each(|b| b.analyse(wide, None)),
        );
    }

    fn run(&mut self, n_base: u64, block_len: usize) {
        let mut done = 0u64;
        while done < n_base {
            let n = (n_base - done).min(block_len as u64) as usize;
            self.step(n);
            done += n as u64;
        }
    }

    fn saturation(&self) -> StageSaturation {
        let mut s = StageSaturation {
            band_combine: self.band_sat,
            ..Default::default()
        };
        for b in &self.bands {
            s.add(&b.sat);
        }
        s
    }

    fn ddc_streams(&mut self, rate: f64) -> Vec<IqStream> {
        self.order
            .iter()
            .map(|&(b, k)| L::out_to_stream(std::mem::take(&mut self.bands[b].ddc_out[k]), rate, 0))
            .collect()
    }

    fn captured(&mut self, tap: Tap, cfg: &RunConfig) -> Result<IqStream> {
        let rate = tap.rate(cfg.ddc_window);
        if tap == Tap::Ddc {
            let (b, k) = self.order[0];
            return Ok(L::out_to_stream(std::mem::take(&mut self.bands[b].ddc_out[k]), rate, 0));
        }
        Ok(L::samples_to_stream(std::mem::take(&mut self.capture.samples), rate, 0))
    }
}

/// Closed-loop chain whose tone and table periods cover every configured
/// tone and band, so the prediction is a period of every stream in the run.
pub fn predicted_chain(cfg: &RunConfig) -> Vec<StageDescriptor> {
    let tone_period = cfg.tones().iter().fold(1u64, |p, t| p.lcm(&(t.period() as u64)));
    let table_period = cfg
        .bands
        .iter()
        .filter(|b| !b.fcw.is_empty())
        .fold(1u64, |p, b| p.lcm(&(phasor_period(b.index) as u64)));
    closed_loop_chain(tone_period, cfg.ddc_window as u64, table_period)
}

fn in_pool<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    if workers == 0 {
        return Ok(f());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::config("workers", e.to_string()))?;
    Ok(pool.install(f))
}

/// Runs the closed loop for every configured tone.
pub fn run_closed_loop(cfg: &RunConfig) -> Result<RunResult> {
    run_closed_loop_with(cfg, RunOptions::default())
}

pub fn run_closed_loop_with(cfg: &RunConfig, opts: RunOptions) -> Result<RunResult> {
    let start = Instant::now();
    cfg.validate()?;
    let rate = BASE_RATE / cfg.ddc_window as f64;
    let (streams, saturation) = in_pool(opts.workers, || {
        crate::with_lane!(cfg.backend, L => {
            let mut engine = Engine::<L>::new(cfg, None)?;
            engine.run(cfg.base_samples(), cfg.block_len);
            Ok::<_, Error>((engine.ddc_streams(rate), engine.saturation()))
        })
    })??;
    if saturation.total() > 0 {
        log::warn!("{} saturation events: {saturation:?}", saturation.total());
    }

    let tones = cfg
        .tones()
        .into_iter()
        .zip(streams)
        .map(|(tone, ddc)| analyse_tone(cfg, tone, ddc))
        .collect::<Result<Vec<_>>>()?;

    let mut periodicity = predict_period(&predicted_chain(cfg))?;
    let steady = steady_state(cfg, &tones[0].ddc);
    let p = periodicity.period();
    let periods = steady.len() as u64 / p;
    if periods >= 2 {
        let check = verify_period(&steady, p, periods - 1)?;
        let last = periodicity.stages.last_mut().expect("non-empty chain");
        last.verified = Some(check.verified);
        last.first_mismatch = check.first_mismatch;
    }

    Ok(RunResult {
        config: cfg.clone(),
        tones,
        periodicity,
        saturation,
        wall_time_s: start.elapsed().as_secs_f64(),
    })
}

/// DDC outputs after the discarded leading windows.
pub fn steady_state(cfg: &RunConfig, ddc: &IqStream) -> IqStream {
    let skip = cfg.discard_windows.min(ddc.len());
    ddc.slice(skip, ddc.len() - skip)
}

fn analyse_tone(cfg: &RunConfig, tone: ToneConfig, ddc: IqStream) -> Result<ToneResult> {
    let steady = steady_state(cfg, &ddc);
    let noise = amp_phase_noise(&steady)?;
    let psd = |x: &[f64]| -> Result<SpectrumReport> {
        let mut r = estimate_psd(x, noise.rate, cfg.psd.seg_len, cfg.psd.overlap)?;
        r.detected_spurs = detect_spurs(&r, cfg.psd.min_prominence_db);
        Ok(r)
    };
    Ok(ToneResult {
        tone,
        amp_psd: psd(&noise.amp_noise)?,
        phase_psd: psd(&noise.phase_noise)?,
        ddc,
    })
}

/// Runs the chain for `n_base` 250 MHz samples and returns the whole stream
/// seen at `tap`.
pub fn run_stage_capture(cfg: &RunConfig, tap: Tap, n_base: u64) -> Result<IqStream> {
    run_stage_capture_with(cfg, tap, n_base, RunOptions::default())
}

pub fn run_stage_capture_with(cfg: &RunConfig, tap: Tap, n_base: u64, opts: RunOptions) -> Result<IqStream> {
    cfg.validate()?;
    in_pool(opts.workers, || {
        crate::with_lane!(cfg.backend, L => {
            let mut engine = Engine::<L>::new(cfg, Some(tap))?;
            engine.run(n_base, cfg.block_len);
            engine.captured(tap, cfg)
        })
    })?
}

/// Base-rate samples that settle every filter in the chain.
pub const SETTLE_SAMPLES: u64 = 1024;

/// 250 MHz samples a probe needs for an `n_fft`-point transform at `tap`.
pub fn probe_samples(cfg: &RunConfig, tap: Tap, n_fft: usize) -> u64 {
    let n = n_fft as u64;
    match tap {
        Tap::Tonegen | Tap::Downshift | Tap::ChannelizerOut => n + SETTLE_SAMPLES,
        Tap::Interp | Tap::Upshift | Tap::ChannelizerDemod => n.div_ceil(INTERP_FACTOR as u64) + SETTLE_SAMPLES,
        Tap::Ddc => (n + cfg.discard_windows as u64) * cfg.ddc_window as u64,
    }
}

/// Local maximum of the probe transform.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectralPeak {
    pub bin: usize,
    pub freq_hz: f64,
    pub power_db: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub tap: Tap,
    pub n_fft: usize,
    pub sample_rate: f64,
    /// `|X[k]|²` in dB for k = 0..n_fft.
    pub power_db: Vec<f64>,
    /// Strongest local maxima, strongest first.
    pub peaks: Vec<SpectralPeak>,
    pub peak_bin: usize,
    pub peak_freq_hz: f64,
    pub concentration: f64,
    pub predicted_period: u64,
    /// Present when the capture holds enough samples for two periods.
    pub period_check: Option<PeriodCheck>,
}

/// Number of peaks kept in a probe report.
pub const PROBE_PEAKS: usize = 8;

/// Spectrum, peaks and bin alignment of the last `n_fft` samples at `tap`.
pub fn run_stage_probe(cfg: &RunConfig, tap: Tap, n_fft: usize) -> Result<ProbeReport> {
    run_stage_probe_with(cfg, tap, n_fft, RunOptions::default())
}

pub fn run_stage_probe_with(cfg: &RunConfig, tap: Tap, n_fft: usize, opts: RunOptions) -> Result<ProbeReport> {
    if n_fft < 2 {
        return Err(Error::config("nfft", "must be at least 2"));
    }
    let stream = run_stage_capture_with(cfg, tap, probe_samples(cfg, tap, n_fft), opts)?;
    probe_report(&stream, tap, n_fft, tap.predicted_period(cfg))
}

/// Builds a probe report from a captured stream.
pub fn probe_report(stream: &IqStream, tap: Tap, n_fft: usize, predicted_period: u64) -> Result<ProbeReport> {
    let x: Vec<Complex64> = stream.to_complex64();
    let p = power_spectrum(&x, n_fft)?;
    let (peak_bin, concentration) = bin_alignment_metric(&x, n_fft)?;
    let rate = stream.sample_rate;
    let mut peaks: Vec<SpectralPeak> = (0..n_fft)
        .filter(|&k| {
            let prev = p[(k + n_fft - 1) % n_fft];
            let next = p[(k + 1) % n_fft];
            p[k] > 0.0 && p[k] > prev && p[k] >= next
        })
        .map(|k| SpectralPeak {
            bin: k,
            freq_hz: bin_frequency(k, n_fft, rate),
            power_db: 10.0 * p[k].log10(),
        })
        .collect();
    peaks.sort_by(|a, b| b.power_db.total_cmp(&a.power_db).then(a.bin.cmp(&b.bin)));
    peaks.truncate(PROBE_PEAKS);
    let period_check = if stream.len() as u64 >= 3 * predicted_period {
        Some(verify_period(stream, predicted_period, 2)?)
    } else {
        None
    };
    Ok(ProbeReport {
        tap,
        n_fft,
        sample_rate: rate,
        power_db: p.iter().map(|&v| 10.0 * v.max(1e-300).log10()).collect(),
        peaks,
        peak_bin,
        peak_freq_hz: bin_frequency(peak_bin, n_fft, rate),
        concentration,
        predicted_period,
        period_check,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sample::Backend;

    fn short(modulus: u32, backend: Backend) -> RunConfig {
        let mut cfg = RunConfig::single_tone(modulus);
        cfg.backend = backend;
        cfg.ddc_window = 64;
        cfg.duration = 40;
        cfg.psd.seg_len = 16;
        cfg.block_len = 1000;
        cfg
    }

    #[test]
    fn tap_names_round_trip() {
        for t in Tap::ALL {
            assert_eq!(t.name().parse::<Tap>().unwrap(), t);
        }
        assert!(matches!("adc".parse::<Tap>(), Err(Error::UnknownTap(_))));
    }

    #[test]
    fn tap_periods() {
        let legacy = RunConfig::single_tone(1 << 16);
        // fcw 4000 shares 32 with 2^16, so the tone repeats every 2048 samples
        assert_eq!(Tap::Tonegen.predicted_period(&legacy), 2048);
        assert_eq!(Tap::Upshift.predicted_period(&legacy), 81920);
        assert_eq!(Tap::Ddc.predicted_period(&legacy), 5);
        assert_eq!(Tap::Ddc.predicted_period(&RunConfig::single_tone(65520)), 1);
        let mut coprime = legacy.clone();
        coprime.bands[0].fcw = vec![4001];
        assert_eq!(Tap::Upshift.predicted_period(&coprime), 5 << 19);
        coprime.bands[0].index = 2;
        assert_eq!(Tap::Upshift.predicted_period(&coprime), 1 << 19);
    }

    #[test]
    fn closed_loop_shapes() {
        let r = run_closed_loop(&short(1 << 16, Backend::Fixed)).unwrap();
        assert_eq!(r.tones.len(), 1);
        assert_eq!(r.tones[0].ddc.len(), 40);
        assert_eq!(r.tones[0].ddc.sample_rate, BASE_RATE / 64.0);
        // only the interpolator's zero-state start may clip
        let s = r.saturation;
        assert_eq!(s.total(), s.interp, "{s:?}");
        assert!(s.interp <= INTERP_FACTOR as u64, "{s:?}");
    }

    #[test]
    fn zero_tones_rejected() {
        let mut cfg = short(1 << 16, Backend::Fixed);
        cfg.bands[0].fcw.clear();
        assert!(run_closed_loop(&cfg).unwrap_err().is_config());
    }

    #[test]
    fn block_size_does_not_change_output() {
        let a = short(1 << 16, Backend::Fixed);
        let mut b = a.clone();
        b.block_len = 777;
        let ra = run_closed_loop(&a).unwrap();
        let rb = run_closed_loop(&b).unwrap();
        assert_eq!(ra.tones[0].ddc, rb.tones[0].ddc);
    }

    #[test]
    fn ddc_tap_matches_closed_loop() {
        let cfg = short(65520, Backend::Float);
        let r = run_closed_loop(&cfg).unwrap();
        let cap = run_stage_capture(&cfg, Tap::Ddc, cfg.base_samples()).unwrap();
        assert_eq!(cap, r.tones[0].ddc);
    }
}
