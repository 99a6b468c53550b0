//! End-to-end acceptance checks. Prints one PASS/FAIL/SKIP line per
//! criterion and exits non-zero if any criterion fails.

use std::f64::consts::PI;
use std::process::ExitCode;
use std::time::Instant;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use readout_twin::analysis::{averaging_filter_response, DdcConfig};
use readout_twin::config::RunConfig;
use readout_twin::periodicity::{predict_period, verify_period, StageDescriptor::*};
use readout_twin::pipeline::{run_closed_loop, run_stage_capture, steady_state, RunResult, Tap, SETTLE_SAMPLES};
use readout_twin::sample::{Backend, IqStream, Samples};
use readout_twin::spectral::{bin_alignment_metric, bin_alignment_near, bin_frequency, detect_spurs, SpectrumReport};
use readout_twin::tonegen::{ToneConfig, BASE_RATE, MODULUS_ALIGNED, MODULUS_LEGACY};

const M16: u64 = 1 << 16;
const SPUR_1: f64 = 762.94;
const SPUR_2: f64 = 1525.88;
/// Prominence required of the legacy spurs.
const SPUR_PROMINENCE_DB: f64 = 20.0;
/// Prominence at which the mitigated run must show nothing.
const CLEAN_PROMINENCE_DB: f64 = 10.0;
const ALIGNED: f64 = 0.999;
const MISALIGNED: f64 = 0.9;
const NULL_LIMIT: f64 = 1e-12;
const KERNEL_TOL: f64 = 1e-10;
const KERNEL_POINTS: usize = 1000;
/// Flatness bound on the mitigated floor, dB above its median.
const FLATNESS_DB: f64 = 6.0;
const RUNTIME_LIMIT_S: f64 = 300.0;

struct Outcome {
    failed: usize,
}

impl Outcome {
    fn record(&mut self, id: u32, pass: bool, detail: &str) {
        println!("{} criterion {id}: {detail}", if pass { "PASS" } else { "FAIL" });
        if !pass {
            self.failed += 1;
        }
    }
}

fn fixed_raw(s: &IqStream) -> &[num_complex::Complex<i64>] {
    match &s.samples {
        Samples::Fixed { data, .. } => data,
        Samples::Float(_) => panic!("expected a fixed-point stream"),
    }
}

/// Spur near `target` in the report, within one bin.
fn spur_near(r: &SpectrumReport, spurs: &[readout_twin::spectral::Spur], target: f64) -> Option<(f64, f64)> {
    spurs
        .iter()
        .find(|s| (s.freq - target).abs() <= r.bin_width())
        .map(|s| (s.freq, s.prominence_db))
}

fn closed_loop(modulus: u32, backend: Backend) -> RunResult {
    let mut cfg = RunConfig::single_tone(modulus);
    cfg.backend = backend;
    run_closed_loop(&cfg).expect("closed loop run")
}

fn capture(modulus: u32, tap: Tap, n_base: u64) -> IqStream {
    let cfg = RunConfig::single_tone(modulus);
    run_stage_capture(&cfg, tap, n_base).expect("stage capture")
}

fn criterion_1(out: &mut Outcome, legacy: &RunResult) {
    let t = &legacy.tones[0];
    let mut ok = legacy.wall_time_s < RUNTIME_LIMIT_S;
    let mut parts = Vec::new();
    for (name, r) in [("amp", &t.amp_psd), ("phase", &t.phase_psd)] {
        let spurs = detect_spurs(r, SPUR_PROMINENCE_DB);
        for target in [SPUR_1, SPUR_2] {
            match spur_near(r, &spurs, target) {
                Some((f, p)) => parts.push(format!("{name} {f:.2} Hz +{p:.1} dB")),
                None => {
                    ok = false;
                    parts.push(format!("{name} none near {target} Hz"));
                }
            }
        }
    }
    out.record(
        1,
        ok,
        &format!(
            "legacy spurs within one {:.2} Hz bin: {}; runtime {:.1} s",
            t.amp_psd.bin_width(),
            parts.join(", "),
            legacy.wall_time_s
        ),
    );
}

fn criterion_2(out: &mut Outcome, mitigated: &RunResult) {
    let t = &mitigated.tones[0];
    let n_spurs = detect_spurs(&t.amp_psd, CLEAN_PROMINENCE_DB).len() + detect_spurs(&t.phase_psd, CLEAN_PROMINENCE_DB).len();
    let data = fixed_raw(&t.ddc);
    let first_full = 1;
    let constant = data[first_full..].iter().all(|z| *z == data[first_full]);
    out.record(
        2,
        n_spurs == 0 && constant,
        &format!(
            "mitigated: {n_spurs} spurs at {CLEAN_PROMINENCE_DB} dB, DDC output constant after first window: {constant}"
        ),
    );
}

fn criterion_3(out: &mut Outcome, legacy: &RunResult) {
    let steady = steady_state(&legacy.config, &legacy.tones[0].ddc);
    let check = |k: u64| verify_period(&steady, k, steady.len() as u64 / k - 1).expect("period check").verified;
    let five = check(5);
    let shorter: Vec<u64> = (1..5).filter(|&k| check(k)).collect();
    out.record(
        3,
        five && shorter.is_empty(),
        &format!(
            "legacy DDC output x[n]=x[n+5] over {} samples: {five}; shorter periods holding: {shorter:?}",
            steady.len()
        ),
    );
}

struct Captures {
    tonegen: IqStream,
    downshift: IqStream,
    interp: IqStream,
    upshift: IqStream,
    demod: IqStream,
    upshift_aligned: IqStream,
}

fn criterion_4(out: &mut Outcome, c: &Captures) {
    let m = M16;
    let legacy = [Accumulator(m), QuarterRateShift, Interpolate(8), PhasorModulate(40)];
    let aligned = [Accumulator(MODULUS_ALIGNED as u64), QuarterRateShift, Interpolate(8), PhasorModulate(40)];
    let lp: Vec<u64> = predict_period(&legacy).unwrap().stages.iter().map(|s| s.predicted).collect();
    let ap = predict_period(&aligned).unwrap().period();
    let mut ok = lp == vec![m, m, 8 * m, 5 << 19] && ap == 8 * MODULUS_ALIGNED as u64;
    let mut parts = vec![format!("predicted {lp:?} / {ap}")];
    for (name, s, p) in [
        ("tonegen", &c.tonegen, lp[0]),
        ("downshift", &c.downshift, lp[1]),
        ("interp", &c.interp, lp[2]),
        ("upshift", &c.upshift, lp[3]),
        ("aligned upshift", &c.upshift_aligned, ap),
    ] {
        let v = verify_period(s, p, 2).expect("period check").verified;
        ok &= v;
        parts.push(format!("{name} {p}: {v}"));
    }
    let refuted = verify_period(&c.upshift, 8 * m, 2).expect("period check");
    ok &= !refuted.verified;
    parts.push(format!("upshift 8*2^16 refuted at {:?}", refuted.first_mismatch));
    out.record(4, ok, &parts.join("; "));
}

/// Peak near `exact` Hz lies within one bin and `exact` rounds to
/// `printed_mhz` at two decimals.
fn located(s: &IqStream, n_fft: usize, exact: f64, printed_mhz: f64) -> (bool, String) {
    let x = s.to_complex64();
    let (bin, _) = bin_alignment_near(&x, n_fft, s.sample_rate, exact).expect("transform");
    let f = bin_frequency(bin, n_fft, s.sample_rate);
    let width = s.sample_rate / n_fft as f64;
    let rounds = ((exact / 1e6) * 100.0).round() / 100.0 == printed_mhz;
    let ok = (f - exact).abs() <= width && rounds;
    (ok, format!("{printed_mhz} MHz: peak {:.6} MHz ({n_fft} pts)", f / 1e6))
}

fn criterion_5(out: &mut Outcome, c: &Captures) {
    let f1 = BASE_RATE * 4000.0 / M16 as f64;
    let down = f1 - BASE_RATE / 4.0;
    let up = down + 650e6;
    let image = -up - 650e6 + 2e9;
    let n_up = 5 * 8 * M16 as usize;
    let checks = [
        located(&c.tonegen, M16 as usize, f1, 15.26),
        located(&c.downshift, M16 as usize, down, -47.24),
        located(&c.upshift, n_up, up, 602.76),
        located(&c.demod, n_up, down, -47.24),
        located(&c.demod, n_up, image, 747.24),
    ];
    let ok = checks.iter().all(|(p, _)| *p);
    let detail: Vec<String> = checks.into_iter().map(|(_, d)| d).collect();
    out.record(5, ok, &detail.join("; "));
}

fn criterion_6(out: &mut Outcome, c: &Captures) {
    let m = M16 as usize;
    let ma = 8 * MODULUS_ALIGNED as usize;
    let global = |s: &IqStream, n: usize| bin_alignment_metric(&s.to_complex64(), n).expect("transform").1;
    let image = |s: &IqStream, n: usize| {
        let f = -(BASE_RATE * 4000.0 / M16 as f64 - BASE_RATE / 4.0 + 650e6) - 650e6 + 2e9;
        bin_alignment_near(&s.to_complex64(), n, s.sample_rate, f).expect("transform").1
    };
    let aligned = [
        ("tonegen 2^16", global(&c.tonegen, m)),
        ("interp 8*2^16", global(&c.interp, 8 * m)),
        ("upshift 5*8*2^16", global(&c.upshift, 40 * m)),
        ("demod image 5*8*2^16", image(&c.demod, 40 * m)),
        ("aligned upshift 8*65520", global(&c.upshift_aligned, ma)),
    ];
    let misaligned = [
        ("tonegen 2^16-1", global(&c.tonegen, m - 1)),
        ("interp 8*2^16-1", global(&c.interp, 8 * m - 1)),
        ("upshift 8*2^16", global(&c.upshift, 8 * m)),
        ("demod image 8*2^16", image(&c.demod, 8 * m)),
        ("aligned upshift 8*65520-1", global(&c.upshift_aligned, ma - 1)),
    ];
    let mut ok = true;
    let mut parts = Vec::new();
    for (name, v) in aligned {
        ok &= v > ALIGNED;
        parts.push(format!("{name} {v:.6}{}", if v > ALIGNED { "" } else { " (not > 0.999)" }));
    }
    for (name, v) in misaligned {
        ok &= v < MISALIGNED;
        parts.push(format!("{name} {v:.6}{}", if v < MISALIGNED { "" } else { " (not < 0.9)" }));
    }
    out.record(6, ok, &parts.join("; "));
}

fn criterion_7(out: &mut Outcome) {
    let l = 1u32 << 16;
    let worst_null = (1..=10)
        .map(|k| averaging_filter_response(l, k as f64 * BASE_RATE / l as f64))
        .fold(0.0f64, f64::max);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst_dev = 0.0f64;
    for _ in 0..KERNEL_POINTS {
        let f: f64 = rng.gen_range(0.0..BASE_RATE / 2.0);
        let cycles = f / BASE_RATE;
        let h: Complex64 = (0..l)
            .map(|n| Complex64::from_polar(1.0 / l as f64, -2.0 * PI * (cycles * n as f64).fract()))
            .sum();
        worst_dev = worst_dev.max((h.norm() - averaging_filter_response(l, f)).abs());
    }
    out.record(
        7,
        worst_null < NULL_LIMIT && worst_dev < KERNEL_TOL,
        &format!("largest null {worst_null:.3e}; largest deviation from boxcar DFT at {KERNEL_POINTS} points {worst_dev:.3e}"),
    );
}

fn criterion_8(out: &mut Outcome, legacy: &RunResult, mitigated: &RunResult) {
    // printed to three decimals; the second figure is truncated, not rounded
    let tol = 1e-3;
    let rates = [
        (legacy.tones[0].ddc.sample_rate, 3814.697),
        (mitigated.tones[0].ddc.sample_rate, 3815.628),
    ];
    let cfg_rate = DdcConfig::new(MODULUS_ALIGNED, ToneConfig::new(4000, MODULUS_ALIGNED, 6).unwrap())
        .unwrap()
        .output_rate();
    let ok = rates.iter().all(|(r, p)| (r - p).abs() < tol) && cfg_rate == rates[1].0;
    out.record(
        8,
        ok,
        &format!("DDC rates {:.6} Hz and {:.6} Hz", rates[0].0, rates[1].0),
    );
}

fn criterion_9(out: &mut Outcome, legacy: &RunResult, float: &RunResult, mitigated: &RunResult) {
    let bins = |r: &RunResult| -> Vec<usize> {
        let psd = &r.tones[0].amp_psd;
        let mut b: Vec<usize> = detect_spurs(psd, SPUR_PROMINENCE_DB)
            .iter()
            .map(|s| psd.bin_of(s.freq))
            .collect();
        b.sort_unstable();
        b
    };
    let (fixed_bins, float_bins) = (bins(legacy), bins(float));
    let floor = &mitigated.tones[0].amp_psd.psd;
    let mut sorted = floor.clone();
    sorted.sort_by(f64::total_cmp);
    let median = sorted[sorted.len() / 2];
    let excess = floor.iter().map(|p| p - median).fold(f64::MIN, f64::max);
    out.record(
        9,
        fixed_bins == float_bins && excess <= FLATNESS_DB,
        &format!(
            "spur bins fixed {fixed_bins:?} float {float_bins:?}; mitigated floor max {excess:.2} dB above median"
        ),
    );
}

fn main() -> ExitCode {
    let start = Instant::now();
    let mut out = Outcome { failed: 0 };

    let legacy = closed_loop(MODULUS_LEGACY, Backend::Fixed);
    let mitigated = closed_loop(MODULUS_ALIGNED, Backend::Fixed);
    let float = closed_loop(MODULUS_LEGACY, Backend::Float);

    criterion_1(&mut out, &legacy);
    criterion_2(&mut out, &mitigated);
    criterion_3(&mut out, &legacy);

    let n = |periods: u64, per: u64| periods * per + SETTLE_SAMPLES;
    let caps = Captures {
        tonegen: capture(MODULUS_LEGACY, Tap::Tonegen, n(3, M16)),
        downshift: capture(MODULUS_LEGACY, Tap::Downshift, n(3, M16)),
        interp: capture(MODULUS_LEGACY, Tap::Interp, n(3, M16)),
        upshift: capture(MODULUS_LEGACY, Tap::Upshift, n(3, 5 * M16)),
        demod: capture(MODULUS_LEGACY, Tap::ChannelizerDemod, n(1, 5 * M16)),
        upshift_aligned: capture(MODULUS_ALIGNED, Tap::Upshift, n(3, MODULUS_ALIGNED as u64)),
    };
    criterion_4(&mut out, &caps);
    criterion_5(&mut out, &caps);
    criterion_6(&mut out, &caps);
    drop(caps);

    criterion_7(&mut out);
    criterion_8(&mut out, &legacy, &mitigated);
    criterion_9(&mut out, &legacy, &float, &mitigated);
    println!("SKIP criterion 10: FPGA resource counts and hardware loop-back measurements are outside a software model");

    println!(
        "acceptance: {} failed, {:.1} s",
        out.failed,
        start.elapsed().as_secs_f64()
    );
    if out.failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
