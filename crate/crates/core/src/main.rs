use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use readout_twin::config::RunConfig;
use readout_twin::error::{Error, Result};
use readout_twin::excitation::BandPhasorTable;
use readout_twin::export::export_results;
use readout_twin::filters::{self, FirFilter};
use readout_twin::periodicity::{closed_loop_chain, predict_period, spur_frequency_prediction};
use readout_twin::pipeline::{run_closed_loop_with, run_stage_probe_with, RunOptions, Tap};
use readout_twin::sample::Backend;
use readout_twin::tonegen::{BASE_RATE, MODULUS_LEGACY};

#[derive(Parser)]
#[command(name = "readout-twin", version, about = "Closed-loop model of a multirate tone readout chain")]
struct Cli {
    /// Worker threads (0 = one per core).
    #[arg(long, global = true, default_value_t = 0)]
    workers: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    SingleTone,
    FullPlan,
}

#[derive(Args)]
struct RunArgs {
    /// TOML run configuration; without it a preset is used.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Preset::SingleTone)]
    preset: Preset,
    #[arg(long, value_enum)]
    backend: Option<Backend>,
    /// Accumulator modulus; also sets the DDC window unless --window is given.
    #[arg(long)]
    modulus: Option<u32>,
    #[arg(long)]
    window: Option<u32>,
}

impl RunArgs {
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => match self.preset {
                Preset::SingleTone => RunConfig::single_tone(MODULUS_LEGACY),
                Preset::FullPlan => RunConfig::full_plan(MODULUS_LEGACY, 0),
            },
        };
        if let Some(b) = self.backend {
            cfg.backend = b;
        }
        if let Some(m) = self.modulus {
            cfg.accumulator_modulus = m;
            cfg.ddc_window = m;
        }
        if let Some(w) = self.window {
            cfg.ddc_window = w;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run the closed loop and write I/Q, PSD and manifest files.
    Simulate {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Spectrum and bin alignment at one chain stage.
    Probe {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, value_enum)]
        tap: Tap,
        #[arg(long)]
        nfft: usize,
        /// Also write the full report as JSON here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Periods through the chain and predicted DDC spur lines.
    Predict {
        #[arg(long, default_value_t = MODULUS_LEGACY)]
        modulus: u32,
        /// DDC window; defaults to the modulus.
        #[arg(long)]
        window: Option<u32>,
        #[arg(long, default_value_t = 6)]
        band: u8,
    },
    /// Designed filter lengths, mask compliance and responses.
    Filters {
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 4097)]
        points: usize,
    },
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn simulate(run: &RunArgs, out: &Path, opts: RunOptions) -> Result<()> {
    let cfg = run.resolve()?;
    let result = run_closed_loop_with(&cfg, opts)?;
    let manifest = export_results(&result, out)?;
    println!(
        "{} tone(s), {} DDC samples each, {:.1} s",
        result.tones.len(),
        cfg.duration,
        result.wall_time_s
    );
    for t in &manifest.tones {
        let list = |s: &[readout_twin::spectral::Spur]| {
            s.iter()
                .map(|s| format!("{:.2} Hz ({:.1} dB)", s.freq, s.prominence_db))
                .collect::<Vec<_>>()
                .join(", ")
        };
        println!(
            "tone {} band {} fcw {}: amp spurs [{}] phase spurs [{}]",
            t.tone,
            t.band,
            t.fcw,
            list(&t.amp_spurs),
            list(&t.phase_spurs)
        );
    }
    if result.saturation.total() > 0 {
        println!("saturation events: {:?}", result.saturation);
    }
    println!("wrote {} files and manifest to {}", manifest.files.len(), out.display());
    Ok(())
}

fn probe(run: &RunArgs, tap: Tap, nfft: usize, out: Option<&Path>, opts: RunOptions) -> Result<()> {
    let cfg = run.resolve()?;
    let report = run_stage_probe_with(&cfg, tap, nfft, opts)?;
    println!(
        "{tap}: {nfft}-point transform at {} Hz, bin width {:.3} Hz",
        report.sample_rate,
        report.sample_rate / nfft as f64
    );
    println!(
        "peak bin {} at {:.6} MHz, concentration {:.6}",
        report.peak_bin,
        report.peak_freq_hz / 1e6,
        report.concentration
    );
    for p in &report.peaks {
        println!("  {:>12.6} MHz  {:>8.2} dB", p.freq_hz / 1e6, p.power_db);
    }
    match report.period_check {
        Some(c) => println!(
            "predicted period {}: {}",
            report.predicted_period,
            if c.verified { "verified".to_string() } else { format!("mismatch at {:?}", c.first_mismatch) }
        ),
        None => println!("predicted period {} (capture too short to check)", report.predicted_period),
    }
    if let Some(path) = out {
        write_file(path, &(serde_json::to_string_pretty(&report).expect("report serializes") + "\n"))?;
    }
    Ok(())
}

fn predict(modulus: u32, window: Option<u32>, band: u8) -> Result<()> {
    let window = window.unwrap_or(modulus);
    if modulus == 0 || window == 0 {
        return Err(Error::Config {
            field: "modulus".into(),
            message: "must be positive".into(),
        });
    }
    let table = BandPhasorTable::new(band)?.period() as u64;
    // a control word coprime to the modulus gives the full accumulator period
    let report = predict_period(&closed_loop_chain(modulus as u64, window as u64, table))?;
    for s in &report.stages {
        println!("{:<24} {}", format!("{:?}", s.stage), s.predicted);
    }
    println!("DDC output rate {:.3} Hz", BASE_RATE / window as f64);
    let lines = spur_frequency_prediction(modulus as u64, window as u64, table, 8, BASE_RATE);
    if lines.is_empty() {
        println!("no spur lines predicted");
    }
    for f in lines {
        println!("spur line {f:.2} Hz");
    }
    Ok(())
}

fn filter_csv(f: &FirFilter, points: usize) -> String {
    let mut s = String::from("freq_hz,magnitude_db\n");
    for (freq, db) in f.response_db(points) {
        s.push_str(&format!("{freq:?},{db:?}\n"));
    }
    s
}

fn filters_cmd(out: Option<&Path>, points: usize) -> Result<()> {
    for (name, f) in [("interpolator", filters::interpolator()), ("channelizer", filters::channelizer())] {
        let (m, q) = (f.mask(), f.quantized_mask());
        println!(
            "{name}: {} taps, ripple {:.4} dB ({:.4} quantized), stopband {:.1} dB ({:.1} quantized)",
            f.len(),
            m.ripple_db,
            q.ripple_db,
            m.atten_db,
            q.atten_db
        );
        if let Some(dir) = out {
            std::fs::create_dir_all(dir).map_err(|source| Error::Io {
                path: dir.to_path_buf(),
                source,
            })?;
            write_file(&dir.join(format!("{name}_response.csv")), &filter_csv(&f, points))?;
            let taps: String = f.taps.iter().map(|t| format!("{t:?}\n")).collect();
            write_file(&dir.join(format!("{name}_taps.txt")), &taps)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let opts = RunOptions { workers: cli.workers };
    let outcome = match &cli.command {
        Command::Simulate { run, out } => simulate(run, out, opts),
        Command::Probe { run, tap, nfft, out } => probe(run, *tap, *nfft, out.as_deref(), opts),
        Command::Predict { modulus, window, band } => predict(*modulus, *window, *band),
        Command::Filters { out, points } => filters_cmd(out.as_deref(), *points),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config() { 2 } else { 3 })
        }
    }
}
