//! CSV and manifest output of a closed-loop run.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::periodicity::PeriodicityReport;
use crate::pipeline::{RunResult, StageSaturation};
use crate::spectral::Spur;

pub const MANIFEST_NAME: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FileKind {
    Iq,
    Psd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestFile {
    /// Path relative to the output directory.
    pub path: String,
    pub kind: FileKind,
    pub tone: usize,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToneSummary {
    pub tone: usize,
    pub band: u8,
    pub fcw: u32,
    pub frequency_hz: f64,
    pub ddc_rate_hz: f64,
    pub amp_spurs: Vec<Spur>,
    pub phase_spurs: Vec<Spur>,
}

/// Everything needed to identify a run's outputs. Contains no timing, so
/// identical runs give identical manifests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config: RunConfig,
    pub periodicity: PeriodicityReport,
    pub saturation: StageSaturation,
    pub tones: Vec<ToneSummary>,
    pub files: Vec<ManifestFile>,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().fold(String::with_capacity(64), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

/// DDC output as `index,i,q`. Values print in shortest round-trip form,
/// which is exact for the 48-bit fixed-point output.
pub fn iq_csv(result: &RunResult, tone: usize) -> String {
    let t = &result.tones[tone];
    let mut s = String::from("index,i,q\n");
    for (k, z) in t.ddc.to_complex64().iter().enumerate() {
        let _ = writeln!(s, "{},{:?},{:?}", t.ddc.origin_index + k as u64, z.re, z.im);
    }
    s
}

/// One-sided amplitude and phase noise densities in dBc/Hz.
pub fn psd_csv(result: &RunResult, tone: usize) -> String {
    let t = &result.tones[tone];
    let mut s = String::from("freq_hz,amp_psd_dbc_hz,phase_psd_dbc_hz\n");
    for ((f, a), p) in t.amp_psd.freqs.iter().zip(&t.amp_psd.psd).zip(&t.phase_psd.psd) {
        let _ = writeln!(s, "{f:?},{a:?},{p:?}");
    }
    s
}

pub fn manifest_of(result: &RunResult, files: Vec<ManifestFile>) -> Manifest {
    Manifest {
        config: result.config.clone(),
        periodicity: result.periodicity.clone(),
        saturation: result.saturation,
        tones: result
            .tones
            .iter()
            .enumerate()
            .map(|(i, t)| ToneSummary {
                tone: i,
                band: t.tone.band,
                fcw: t.tone.fcw,
                frequency_hz: t.tone.frequency(),
                ddc_rate_hz: t.ddc.sample_rate,
                amp_spurs: t.amp_psd.detected_spurs.clone(),
                phase_spurs: t.phase_psd.detected_spurs.clone(),
            })
            .collect(),
        files,
    }
}

/// Writes per-tone IQ and PSD CSVs plus `manifest.json` into `dir`,
/// creating it if needed.
pub fn export_results(result: &RunResult, dir: &Path) -> Result<Manifest> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut files = Vec::with_capacity(2 * result.tones.len());
    for i in 0..result.tones.len() {
        for (kind, text) in [(FileKind::Iq, iq_csv(result, i)), (FileKind::Psd, psd_csv(result, i))] {
            let name = match kind {
                FileKind::Iq => format!("tone_{i:03}_iq.csv"),
                FileKind::Psd => format!("tone_{i:03}_psd.csv"),
            };
            let path: PathBuf = dir.join(&name);
            fs::write(&path, text.as_bytes()).map_err(io_err(&path))?;
            files.push(ManifestFile {
                path: name,
                kind,
                tone: i,
                sha256: sha256_hex(text.as_bytes()),
            });
        }
    }
    let manifest = manifest_of(result, files);
    let path = dir.join(MANIFEST_NAME);
    let mut json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    json.push('\n');
    fs::write(&path, json).map_err(io_err(&path))?;
    Ok(manifest)
}
