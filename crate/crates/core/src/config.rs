//! Run configuration: TOML schema, presets and validation.

use std::collections::BTreeSet;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::excitation::{Component, MAX_BANDS, MAX_TONES_PER_BAND};
use crate::sample::Backend;
use crate::tonegen::{ToneConfig, ACC_BITS, DEFAULT_CORDIC_ITERATIONS, MAX_CORDIC_ITERATIONS, MODULUS_ALIGNED, MODULUS_LEGACY};

/// Welch estimator and spur detector settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PsdConfig {
    pub seg_len: usize,
    pub overlap: f64,
    pub min_prominence_db: f64,
}

impl Default for PsdConfig {
    fn default() -> Self {
        PsdConfig {
            seg_len: 64,
            overlap: 0.5,
            min_prominence_db: 20.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BandConfig {
    pub index: u8,
    pub fcw: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub backend: Backend,
    pub accumulator_modulus: u32,
    pub ddc_window: u32,
    /// DDC output samples produced per tone.
    pub duration: usize,
    /// Leading DDC outputs left out of the spectral analysis.
    pub discard_windows: usize,
    pub loopback: Component,
    /// Seeds the synthetic tone plan.
    pub seed: u64,
    pub cordic_iterations: u32,
    /// Streaming block length in 250 MHz samples.
    pub block_len: usize,
    pub psd: PsdConfig,
    pub bands: Vec<BandConfig>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            backend: Backend::Fixed,
            accumulator_modulus: MODULUS_LEGACY,
            ddc_window: MODULUS_LEGACY,
            duration: 256,
            discard_windows: 1,
            loopback: Component::I,
            seed: 0,
            cordic_iterations: DEFAULT_CORDIC_ITERATIONS,
            block_len: 1 << 16,
            psd: PsdConfig::default(),
            bands: Vec::new(),
        }
    }
}

/// Frequency control word of the single-tone scenario (15.26 MHz).
pub const SINGLE_TONE_FCW: u32 = 4000;
/// Band of the single-tone scenario (650 MHz shift).
pub const SINGLE_TONE_BAND: u8 = 6;

impl RunConfig {
    /// One tone at 15.26 MHz in band 6 with `M = window = modulus`.
    pub fn single_tone(modulus: u32) -> Self {
        RunConfig {
            accumulator_modulus: modulus,
            ddc_window: modulus,
            bands: vec![BandConfig {
                index: SINGLE_TONE_BAND,
                fcw: vec![SINGLE_TONE_FCW],
            }],
            ..RunConfig::default()
        }
    }

    /// Ten bands of forty tones each, spread over the usable ±50 MHz
    /// around the quarter rate with seeded jitter.
    pub fn full_plan(modulus: u32, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = modulus as f64;
        let lo = 0.05 * m;
        let step = 0.4 * m / MAX_TONES_PER_BAND as f64;
        let bands = (0..MAX_BANDS as u8)
            .map(|index| {
                let fcw = (0..MAX_TONES_PER_BAND)
                    .map(|k| {
                        let jitter: f64 = rng.gen_range(-0.25..0.25);
                        (lo + step * (k as f64 + 0.5 + jitter)).round() as u32
                    })
                    .collect();
                BandConfig { index, fcw }
            })
            .collect();
        RunConfig {
            accumulator_modulus: modulus,
            ddc_window: modulus,
            seed,
            bands,
            ..RunConfig::default()
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| {
            let field = e
                .span()
                .map(|s| text[..s.start.min(text.len())].lines().count().max(1))
                .map_or_else(|| "config".to_string(), |line| format!("line {line}"));
            Error::config(field, e.message().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("run configuration serializes")
    }

    /// Checks every field; errors name the offending key.
    pub fn validate(&self) -> Result<()> {
        let m = self.accumulator_modulus;
        if !(2..=1 << ACC_BITS).contains(&m) {
            return Err(Error::config("accumulator_modulus", format!("{m} is not in 2..=65536")));
        }
        if m != MODULUS_LEGACY && m != MODULUS_ALIGNED {
            log::warn!("accumulator_modulus {m} is neither {MODULUS_LEGACY} nor {MODULUS_ALIGNED}");
        }
        if self.ddc_window == 0 {
            return Err(Error::config("ddc_window", "must be at least 1"));
        }
        if self.duration == 0 {
            return Err(Error::config("duration", "must be at least 1"));
        }
        if self.discard_windows >= self.duration {
            return Err(Error::config("discard_windows", "must leave at least one output sample"));
        }
        if self.block_len == 0 {
            return Err(Error::config("block_len", "must be at least 1"));
        }
        if !(1..=MAX_CORDIC_ITERATIONS).contains(&self.cordic_iterations) {
            return Err(Error::config(
                "cordic_iterations",
                format!("{} is not in 1..={MAX_CORDIC_ITERATIONS}", self.cordic_iterations),
            ));
        }
        if self.psd.seg_len < 2 {
            return Err(Error::config("psd.seg_len", "must be at least 2"));
        }
        if self.psd.seg_len > self.duration - self.discard_windows {
            return Err(Error::config(
                "psd.seg_len",
                format!(
                    "{} exceeds the {} analysed output samples",
                    self.psd.seg_len,
                    self.duration - self.discard_windows
                ),
            ));
        }
        if !(0.0..1.0).contains(&self.psd.overlap) {
            return Err(Error::config("psd.overlap", "must be in [0, 1)"));
        }
        if !self.psd.min_prominence_db.is_finite() {
            return Err(Error::config("psd.min_prominence_db", "must be finite"));
        }
        if self.bands.is_empty() {
            return Err(Error::config("bands", "at least one band is required"));
        }
        if self.bands.len() > MAX_BANDS {
            return Err(Error::config("bands", format!("more than {MAX_BANDS} bands")));
        }
        let mut seen = BTreeSet::new();
        for (i, b) in self.bands.iter().enumerate() {
            if b.index as usize >= MAX_BANDS {
                return Err(Error::config(format!("bands[{i}].index"), format!("{} is not in 0..=9", b.index)));
            }
            if !seen.insert(b.index) {
                return Err(Error::config(format!("bands[{i}].index"), format!("band {} listed twice", b.index)));
            }
            if b.fcw.is_empty() {
                return Err(Error::config(format!("bands[{i}].fcw"), "at least one tone is required"));
            }
            if b.fcw.len() > MAX_TONES_PER_BAND {
                return Err(Error::config(
                    format!("bands[{i}].fcw"),
                    format!("{} tones exceed the limit of {MAX_TONES_PER_BAND}", b.fcw.len()),
                ));
            }
            for (k, &fcw) in b.fcw.iter().enumerate() {
                if fcw >= m {
                    return Err(Error::config(
                        format!("bands[{i}].fcw[{k}]"),
                        format!("{fcw} must be below the modulus {m}"),
                    ));
                }
                let tone = ToneConfig::new(fcw, m, b.index)?;
                if !tone.in_design_range() {
                    log::warn!("band {} tone {fcw} lies outside the channel passband", b.index);
                }
            }
        }
        Ok(())
    }

    /// Tones in configuration order.
    pub fn tones(&self) -> Vec<ToneConfig> {
        self.bands
            .iter()
            .flat_map(|b| {
                b.fcw.iter().map(move |&fcw| ToneConfig {
                    fcw,
                    modulus: self.accumulator_modulus,
                    band: b.index,
                    sample_rate: crate::tonegen::BASE_RATE,
                })
            })
            .collect()
    }

    /// 250 MHz samples needed for `duration` DDC outputs.
    pub fn base_samples(&self) -> u64 {
        self.duration as u64 * self.ddc_window as u64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        RunConfig::single_tone(MODULUS_LEGACY).validate().unwrap();
        RunConfig::single_tone(MODULUS_ALIGNED).validate().unwrap();
        let full = RunConfig::full_plan(MODULUS_LEGACY, 7);
        full.validate().unwrap();
        assert_eq!(full.tones().len(), 400);
        assert!(full.tones().iter().all(|t| t.in_design_range()));
        assert_eq!(full, RunConfig::full_plan(MODULUS_LEGACY, 7));
    }

    #[test]
    fn toml_round_trip() {
        let cfg = RunConfig::single_tone(MODULUS_ALIGNED);
        assert_eq!(RunConfig::from_toml_str(&cfg.to_toml_string()).unwrap(), cfg);
    }

    #[test]
    fn defaults_fill_missing_keys() {
        let cfg = RunConfig::from_toml_str("[[bands]]\nindex = 2\nfcw = [1000, 2000]\n").unwrap();
        assert_eq!(cfg.backend, Backend::Fixed);
        assert_eq!(cfg.tones().len(), 2);
        assert_eq!(cfg.base_samples(), 256 * 65536);
    }

    #[test]
    fn unknown_key_rejected() {
        let e = RunConfig::from_toml_str("colour = 3\n[[bands]]\nindex = 2\nfcw = [1]\n").unwrap_err();
        assert!(e.is_config());
        assert!(e.to_string().contains("colour"), "{e}");
    }

    fn field_of(cfg: &RunConfig) -> String {
        match cfg.validate() {
            Err(Error::Config { field, .. }) => field,
            other => panic!("expected a config error, got {other:?}"),
        }
    }

    #[test]
    fn field_level_errors() {
        let base = RunConfig::single_tone(MODULUS_LEGACY);
        let mut c = base.clone();
        c.bands.clear();
        assert_eq!(field_of(&c), "bands");
        let mut c = base.clone();
        c.bands[0].fcw.clear();
        assert_eq!(field_of(&c), "bands[0].fcw");
        let mut c = base.clone();
        c.bands[0].fcw = vec![1; 41];
        assert_eq!(field_of(&c), "bands[0].fcw");
        let mut c = base.clone();
        c.bands[0].fcw = vec![70000];
        assert_eq!(field_of(&c), "bands[0].fcw[0]");
        let mut c = base.clone();
        c.bands[0].index = 10;
        assert_eq!(field_of(&c), "bands[0].index");
        let mut c = base.clone();
        c.accumulator_modulus = 1 << 17;
        assert_eq!(field_of(&c), "accumulator_modulus");
        let mut c = base.clone();
        c.psd.seg_len = 512;
        assert_eq!(field_of(&c), "psd.seg_len");
        let mut c = base;
        c.ddc_window = 0;
        assert_eq!(field_of(&c), "ddc_window");
    }
}
