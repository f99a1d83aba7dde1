//! Flat `key = value` experiment files.
//!
//! Blank lines and `#` comments are ignored. Every key is typed, unknown or
//! repeated keys are errors, and keys left out keep their defaults.

use std::collections::HashSet;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::dataset::SyntheticSpec;
use crate::error::{Error, Result};
use crate::protocol::{Architecture, PathlossRange, TrainingConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Preset {
    /// Train once and report the final evaluation grid.
    Standard,
    /// Decentralized rounds against the centralized reference.
    Equivalence,
    /// One accuracy row per test SNR in 0, 5, ..., 30 dB.
    SnrSweep,
    /// One accuracy row per test network size 1..=12, encoders shared.
    NtestSweep,
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "standard" => Ok(Self::Standard),
            "equivalence" => Ok(Self::Equivalence),
            "snr-sweep" => Ok(Self::SnrSweep),
            "ntest-sweep" => Ok(Self::NtestSweep),
            other => Err(Error::Config(format!("unknown preset '{other}'"))),
        }
    }
}

impl std::fmt::Display for Preset {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Standard => "standard",
            Self::Equivalence => "equivalence",
            Self::SnrSweep => "snr-sweep",
            Self::NtestSweep => "ntest-sweep",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum DataSource {
    Synthetic(SyntheticSpec),
    /// External flat binary dataset, cropped with `window`.
    Flat {
        path: PathBuf,
        window: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub preset: Preset,
    pub training: TrainingConfig,
    pub data: DataSource,
    /// Seed of the synthetic generator; the master seed when unset.
    pub data_seed: Option<u64>,
    /// Test SNRs of the final grid; `None` entries mean noiseless links.
    pub eval_snr_db: Vec<Option<f64>>,
    /// Test network sizes of the final grid; empty means the training size.
    pub eval_nodes: Vec<usize>,
    pub eval_samples: Option<usize>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            preset: Preset::Standard,
            training: TrainingConfig::default(),
            data: DataSource::Synthetic(SyntheticSpec::default()),
            data_seed: None,
            eval_snr_db: vec![Some(20.0)],
            eval_nodes: Vec::new(),
            eval_samples: None,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse '{value}'")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => Err(Error::Config(format!(
            "{key}: expected a boolean, got '{value}'"
        ))),
    }
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    if value.trim().is_empty() {
        return Ok(Vec::new());
    }
    value.split(',').map(|v| parse(key, v.trim())).collect()
}

fn parse_range(key: &str, value: &str) -> Result<(f64, f64)> {
    match parse_list::<f64>(key, value)?.as_slice() {
        [v] => Ok((*v, *v)),
        [lo, hi] => Ok((*lo, *hi)),
        _ => Err(Error::Config(format!(
            "{key}: expected 'lo,hi' or a single value"
        ))),
    }
}

fn parse_snr(key: &str, value: &str) -> Result<Option<f64>> {
    if value == "none" || value == "inf" {
        Ok(None)
    } else {
        parse(key, value).map(Some)
    }
}

fn fmt_snr(v: Option<f64>) -> String {
    v.map_or_else(|| "none".to_string(), |x| x.to_string())
}

fn fmt_list<T: ToString>(v: &[T]) -> String {
    v.iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join(",")
}

impl ExperimentConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut synth = SyntheticSpec::default();
        let mut flat_path: Option<PathBuf> = None;
        let mut pathloss: Option<PathlossRange> = None;
        let mut pathloss_range = PathlossRange::default();
        let mut seen = HashSet::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .map(|(k, v)| (k.trim(), v.trim()))
                .ok_or_else(|| {
                    Error::Config(format!("line {}: expected 'key = value'", lineno + 1))
                })?;
            if !seen.insert(key.to_string()) {
                return Err(Error::Config(format!(
                    "line {}: duplicate key '{key}'",
                    lineno + 1
                )));
            }
            let t = &mut cfg.training;
            match key {
                "preset" => cfg.preset = parse(key, value)?,
                "nodes" => t.nodes = parse(key, value)?,
                "rounds" => t.rounds = parse(key, value)?,
                "batch" => t.batch = parse(key, value)?,
                "lr" => t.lr = parse(key, value)?,
                "optimizer" => t.optimizer = parse(key, value)?,
                "message_len" => t.message_len = parse(key, value)?,
                "encoder_hidden" => t.encoder_hidden = parse_list(key, value)?,
                "architecture" => t.architecture = parse(key, value)?,
                "branches" => t.branches = parse(key, value)?,
                "latent" => t.latent = parse(key, value)?,
                "cloud_hidden" => t.cloud_hidden = parse(key, value)?,
                "snr_up_db" => t.snr_up_db = parse_range(key, value)?,
                "snr_dn_db" => t.snr_dn_db = parse_range(key, value)?,
                "uplink_noise" => t.uplink_noise = parse_bool(key, value)?,
                "downlink_noise" => t.downlink_noise = parse_bool(key, value)?,
                "snr_per_round" => t.snr_per_round = parse_bool(key, value)?,
                "fading" => t.fading = parse(key, value)?,
                "power_mode" => t.power_mode = parse(key, value)?,
                "edge_power" => t.edge_power = parse(key, value)?,
                "cloud_power" => t.cloud_power = parse(key, value)?,
                "async" => t.async_mode = parse_bool(key, value)?,
                "encoder_sharing" => t.encoder_sharing = parse_bool(key, value)?,
                "cqie" => t.cqie = parse_bool(key, value)?,
                "pathloss" => {
                    pathloss = parse_bool(key, value)?.then_some(pathloss_range);
                }
                "pathloss_d_min" => pathloss_range.d_min = parse(key, value)?,
                "pathloss_d_max" => pathloss_range.d_max = parse(key, value)?,
                "pathloss_exponent" => pathloss_range.exponent = parse(key, value)?,
                "eval_every" => t.eval_every = parse(key, value)?,
                "val_snr_db" => t.val_snr_db = parse_snr(key, value)?,
                "record_timing" => t.record_timing = parse_bool(key, value)?,
                "seed" => t.seed = parse(key, value)?,
                "classes" => synth.classes = parse(key, value)?,
                "grid" => synth.grid = parse(key, value)?,
                "window" => synth.window = parse(key, value)?,
                "train_samples" => synth.train = parse(key, value)?,
                "val_samples" => synth.validation = parse(key, value)?,
                "test_samples" => synth.test = parse(key, value)?,
                "amplitude" => synth.amplitude = parse(key, value)?,
                "blob_width" => synth.blob_width = parse(key, value)?,
                "radius" => synth.radius = parse(key, value)?,
                "jitter" => synth.jitter = parse(key, value)?,
                "noise_std" => synth.noise_std = parse(key, value)?,
                "brightness" => synth.brightness = parse(key, value)?,
                "dataset" => flat_path = Some(PathBuf::from(value)),
                "data_seed" => cfg.data_seed = Some(parse(key, value)?),
                "eval_snr_db" => {
                    cfg.eval_snr_db = value
                        .split(',')
                        .map(|v| parse_snr(key, v.trim()))
                        .collect::<Result<_>>()?
                }
                "eval_nodes" => cfg.eval_nodes = parse_list(key, value)?,
                "eval_samples" => cfg.eval_samples = Some(parse(key, value)?),
                other => {
                    return Err(Error::Config(format!(
                        "line {}: unknown key '{other}'",
                        lineno + 1
                    )));
                }
            }
        }
        // Range keys may come after `pathloss = true`.
        cfg.training.pathloss = pathloss.map(|_| pathloss_range);
        cfg.data = match flat_path {
            Some(path) => DataSource::Flat {
                path,
                window: synth.window,
            },
            None => DataSource::Synthetic(synth),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.training.validate()?;
        if self.eval_snr_db.is_empty() {
            return Err(Error::Config("eval_snr_db needs at least one entry".into()));
        }
        if self.eval_nodes.contains(&0) {
            return Err(Error::Config("eval_nodes entries must be positive".into()));
        }
        Ok(())
    }

    pub fn data_seed(&self) -> u64 {
        self.data_seed.unwrap_or(self.training.seed)
    }

    /// Canonical text form; parsing it gives back an equal configuration.
    pub fn to_text(&self) -> String {
        let t = &self.training;
        let mut lines = vec![
            format!("preset = {}", self.preset),
            format!("seed = {}", t.seed),
            format!("nodes = {}", t.nodes),
            format!("rounds = {}", t.rounds),
            format!("batch = {}", t.batch),
            format!("lr = {}", t.lr),
            format!("optimizer = {}", t.optimizer),
            format!("message_len = {}", t.message_len),
            format!("encoder_hidden = {}", fmt_list(&t.encoder_hidden)),
            format!("architecture = {}", t.architecture),
            format!("branches = {}", t.branches),
            format!("latent = {}", t.latent),
            format!("cloud_hidden = {}", t.cloud_hidden),
            format!("snr_up_db = {},{}", t.snr_up_db.0, t.snr_up_db.1),
            format!("snr_dn_db = {},{}", t.snr_dn_db.0, t.snr_dn_db.1),
            format!("uplink_noise = {}", t.uplink_noise),
            format!("downlink_noise = {}", t.downlink_noise),
            format!("snr_per_round = {}", t.snr_per_round),
            format!("fading = {}", t.fading),
            format!("power_mode = {}", t.power_mode),
            format!("edge_power = {}", t.edge_power),
            format!("cloud_power = {}", t.cloud_power),
            format!("async = {}", t.async_mode),
            format!("encoder_sharing = {}", t.encoder_sharing),
            format!("cqie = {}", t.cqie),
            format!("pathloss = {}", t.pathloss.is_some()),
        ];
        if let Some(p) = t.pathloss {
            lines.push(format!("pathloss_d_min = {}", p.d_min));
            lines.push(format!("pathloss_d_max = {}", p.d_max));
            lines.push(format!("pathloss_exponent = {}", p.exponent));
        }
        lines.push(format!("eval_every = {}", t.eval_every));
        lines.push(format!("val_snr_db = {}", fmt_snr(t.val_snr_db)));
        lines.push(format!("record_timing = {}", t.record_timing));
        let window = match &self.data {
            DataSource::Synthetic(s) => {
                lines.push(format!("classes = {}", s.classes));
                lines.push(format!("grid = {}", s.grid));
                lines.push(format!("train_samples = {}", s.train));
                lines.push(format!("val_samples = {}", s.validation));
                lines.push(format!("test_samples = {}", s.test));
                lines.push(format!("amplitude = {}", s.amplitude));
                lines.push(format!("blob_width = {}", s.blob_width));
                lines.push(format!("radius = {}", s.radius));
                lines.push(format!("jitter = {}", s.jitter));
                lines.push(format!("noise_std = {}", s.noise_std));
                lines.push(format!("brightness = {}", s.brightness));
                s.window
            }
            DataSource::Flat { path, window } => {
                lines.push(format!("dataset = {}", path.display()));
                *window
            }
        };
        lines.push(format!("window = {window}"));
        if let Some(s) = self.data_seed {
            lines.push(format!("data_seed = {s}"));
        }
        lines.push(format!(
            "eval_snr_db = {}",
            self.eval_snr_db
                .iter()
                .map(|v| fmt_snr(*v))
                .collect::<Vec<_>>()
                .join(",")
        ));
        if !self.eval_nodes.is_empty() {
            lines.push(format!("eval_nodes = {}", fmt_list(&self.eval_nodes)));
        }
        if let Some(n) = self.eval_samples {
            lines.push(format!("eval_samples = {n}"));
        }
        lines.join("\n") + "\n"
    }

    /// Architecture-specific convenience for sweeps comparing cloud models.
    pub fn with_architecture(&self, architecture: Architecture) -> Self {
        let mut c = self.clone();
        c.training.architecture = architecture;
        c
    }
}
