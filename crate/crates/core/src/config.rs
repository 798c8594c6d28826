//! Run configuration: one TOML document covering every stage, two built-in
//! profiles, and `key=value` overrides.
//!
//! Resolution order is profile defaults, then the config file (merged table
//! by table), then `--set` overrides, then the seed override. Unknown keys
//! are rejected at every step.

use std::path::Path;

use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::error::{Error, Result};
use crate::eventio::{ArenaConfig, BinningConfig, Crop, SamplingConfig};
use crate::model::ArchConfig;
use crate::spiking::LifParams;
use crate::synthgen::{CameraSpec, SceneSpec, SynthConfig, TrajectorySpec};
use crate::training::{AdversaryInput, ProbeConfig, TrainConfig};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    /// Full-size settings: 16 cells, 128x128 input, 50 frames.
    #[default]
    Paper,
    /// Desk-scale settings: 4 cells, 32x32 input, 10 frames.
    Tiny,
}

impl std::str::FromStr for Profile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper" => Ok(Self::Paper),
            "tiny" => Ok(Self::Tiny),
            other => Err(Error::Config(format!("unknown profile {other:?} (expected paper or tiny)"))),
        }
    }
}

/// Recording inputs. Empty strings mean the files `synth` writes into the
/// output directory.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsConfig {
    pub train_events: String,
    pub train_poses: String,
    pub test_events: String,
    pub test_poses: String,
    /// "binary" or "csv".
    pub event_format: String,
    /// Sensor size, needed only for CSV event files.
    pub sensor_width: u16,
    pub sensor_height: u16,
}

/// How the held-out synthetic recording differs from the training one.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RecordingsConfig {
    /// Added to the trajectory seed for the test recording.
    pub test_seed_offset: u64,
    pub test_rounds: usize,
    pub test_dim: bool,
}

impl Default for RecordingsConfig {
    fn default() -> Self {
        Self {
            test_seed_offset: 1,
            test_rounds: 1,
            test_dim: false,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LocalizationConfig {
    /// Consecutive samples per retrieval sequence.
    pub sequence_len: usize,
}

impl Default for LocalizationConfig {
    fn default() -> Self {
        Self { sequence_len: 5 }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub paths: PathsConfig,
    pub arena: ArenaConfig,
    pub sampling: SamplingConfig,
    pub synth: SynthConfig,
    pub recordings: RecordingsConfig,
    pub arch: ArchConfig,
    pub lif: LifParams,
    pub train: TrainConfig,
    pub probe: ProbeConfig,
    pub localization: LocalizationConfig,
}

impl RunConfig {
    pub fn profile(p: Profile) -> Self {
        let mut c = Self {
            paths: PathsConfig {
                event_format: "binary".into(),
                ..Default::default()
            },
            ..Default::default()
        };
        match p {
            Profile::Paper => {
                // 346x260 sensor: centred 256x256 crop, halved to 128.
                c.sampling.binning.crop = Some(Crop {
                    x0: 45,
                    y0: 2,
                    width: 256,
                    height: 256,
                });
                c.sampling.stride_us = Some(100_000);
                c.synth.trajectory.rounds = 3;
                c.recordings.test_rounds = 3;
            }
            Profile::Tiny => {
                c.arena.grid_cols = 2;
                c.arena.grid_rows = 2;
                c.synth.camera = CameraSpec {
                    width: 64,
                    height: 64,
                    hfov_deg: 90.0,
                    ..CameraSpec::default()
                };
                c.synth.scene = SceneSpec {
                    beacons_per_wall: 6,
                    event_gain: 15.0,
                    ..SceneSpec::default()
                };
                c.synth.trajectory = TrajectorySpec {
                    rounds: 2,
                    ..TrajectorySpec::default()
                };
                c.sampling = SamplingConfig {
                    binning: BinningConfig {
                        window_us: 10_000,
                        frames: 10,
                        crop: None,
                        output_size: 32,
                        clip_cap: 1,
                    },
                    stride_us: Some(200_000),
                    ..SamplingConfig::default()
                };
                c.arch = ArchConfig {
                    input_size: 32,
                    timesteps: 10,
                    channels: vec![8, 16, 32, 32],
                    strides: vec![2, 2, 2, 1],
                    latent_dim: 6,
                    excitation_dim: 4,
                    num_classes: 4,
                    classifier_hidden: vec![32],
                    ..ArchConfig::default()
                };
                c.train = TrainConfig {
                    lr: 1e-3,
                    lambda_exc: 50.0,
                    lambda_inh: 200.0,
                    inh_steps: 5,
                    adversary_input: AdversaryInput::Mean,
                    ..TrainConfig::default()
                };
            }
        }
        c
    }

    /// Profile defaults, overlaid with `file` (if any) and `overrides`.
    pub fn resolve(profile: Profile, file: Option<&Path>, overrides: &[String], seed: Option<u64>) -> Result<Self> {
        let mut doc = to_table(&Self::profile(profile))?;
        if let Some(path) = file {
            let text = std::fs::read_to_string(path)?;
            let overlay: Table = text
                .parse()
                .map_err(|e: toml::de::Error| Error::Config(format!("{}: {e}", path.display())))?;
            merge(&mut doc, overlay);
        }
        for o in overrides {
            set_key(&mut doc, o)?;
        }
        let mut cfg = from_table(doc)?;
        if let Some(s) = seed {
            cfg.set_seed(s);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// One seed drives recordings, initialization, shuffling and probes.
    pub fn set_seed(&mut self, seed: u64) {
        self.synth.trajectory.seed = seed;
        self.train.seed = seed;
        self.probe.seed = seed;
    }

    /// Synthesis settings for the training (`false`) or test recording.
    pub fn recording(&self, test: bool) -> SynthConfig {
        let mut s = self.synth.clone();
        if test {
            s.trajectory.seed = s.trajectory.seed.wrapping_add(self.recordings.test_seed_offset);
            s.trajectory.rounds = self.recordings.test_rounds;
            s.dim = self.recordings.test_dim;
        }
        s
    }

    pub fn validate(&self) -> Result<()> {
        self.arena.validate()?;
        self.arch.validate()?;
        self.lif.validate()?;
        self.train.validate(self.arch.excitation_dim)?;
        self.synth.scene.validate(&self.arena)?;
        self.synth.trajectory.validate(&self.arena)?;
        self.synth.camera.validate()?;
        let b = &self.sampling.binning;
        b.validate(self.synth.camera.width, self.synth.camera.height)?;
        if self.sampling.stride() == 0 {
            return Err(Error::Config("sampling.stride_us must be positive".into()));
        }
        let checks = [
            (self.arch.num_classes == self.arena.num_cells(), "arch.num_classes must equal the arena cell count"),
            (self.arch.input_size == b.output_size, "arch.input_size must equal sampling.binning.output_size"),
            (self.arch.timesteps == b.frames, "arch.timesteps must equal sampling.binning.frames"),
            (self.arch.in_channels == 2, "arch.in_channels must be 2 (OFF, ON)"),
            (self.recordings.test_rounds > 0, "recordings.test_rounds must be positive"),
            (self.localization.sequence_len > 0, "localization.sequence_len must be positive"),
            (self.probe.hidden > 0 && self.probe.lr > 0.0, "probe.hidden and probe.lr must be positive"),
            (
                matches!(self.paths.event_format.as_str(), "binary" | "csv"),
                "paths.event_format must be binary or csv",
            ),
        ];
        match checks.iter().find(|(ok, _)| !ok) {
            Some((_, msg)) => Err(Error::Config((*msg).into())),
            None => Ok(()),
        }
    }
}

/// Every dotted key either profile accepts, with its paper-profile default.
pub fn config_keys() -> Vec<(String, String)> {
    let mut out = Vec::new();
    for p in [Profile::Paper, Profile::Tiny] {
        if let Ok(t) = to_table(&RunConfig::profile(p)) {
            flatten("", &Value::Table(t), &mut out);
        }
    }
    let mut seen = std::collections::HashSet::new();
    out.retain(|(k, _)| seen.insert(k.clone()));
    out.sort_by(|a, b| a.0.cmp(&b.0));
    out
}

fn flatten(prefix: &str, v: &Value, out: &mut Vec<(String, String)>) {
    match v {
        Value::Table(t) if !t.is_empty() => {
            for (k, v) in t {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten(&key, v, out);
            }
        }
        other => out.push((prefix.to_string(), other.to_string())),
    }
}

fn to_table(cfg: &RunConfig) -> Result<Table> {
    Table::try_from(cfg).map_err(|e| Error::Config(e.to_string()))
}

fn from_table(t: Table) -> Result<RunConfig> {
    Value::Table(t).try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))
}

fn merge(base: &mut Table, overlay: Table) {
    for (k, v) in overlay {
        match (base.get_mut(&k), v) {
            (Some(Value::Table(b)), Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

/// Applies `a.b.c=value`; the value is read as TOML, falling back to a
/// bare string.
fn set_key(doc: &mut Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override {assignment:?} is not key=value")))?;
    let (key, raw) = (key.trim(), raw.trim());
    let value = format!("v = {raw}")
        .parse::<Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()));
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("malformed key {key:?}")));
    }
    let mut table = doc;
    for p in &parts[..parts.len() - 1] {
        table = match table.entry(p.to_string()).or_insert_with(|| Value::Table(Table::new())) {
            Value::Table(t) => t,
            _ => return Err(Error::Config(format!("{key}: {p} is not a section"))),
        };
    }
    table.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}
