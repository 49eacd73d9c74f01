//! Run configuration: one JSON document covering data, model, optimizer,
//! distribution and tracing options.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dist::Scheduler;
use crate::error::{Error, Result};
use crate::mesh::ChannelSchema;
use crate::model::ModelConfig;
use crate::train::{LrSchedule, Mode, TrainConfig};

pub const DEFAULT_NOISE_STD: f64 = 0.02;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub message_passing_steps: usize,
    pub latent: usize,
    pub hidden_layers: usize,
    pub layer_norm: bool,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            message_passing_steps: 4,
            latent: 32,
            hidden_layers: 2,
            layer_norm: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LrSection {
    pub initial: f64,
    pub floor: f64,
    /// Decay constant in steps; when absent the rate reaches `floor` at the
    /// last configured step.
    pub decay: Option<f64>,
}

impl Default for LrSection {
    fn default() -> Self {
        Self {
            initial: 1e-4,
            floor: 1e-6,
            decay: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Dataset manifest.
    pub dataset: Option<PathBuf>,
    pub output_dir: PathBuf,
    pub mode: Mode,
    pub parts: usize,
    pub steps: usize,
    pub accumulation: usize,
    /// Root seed for parameters, sampling and noise.
    pub seed: u64,
    /// Partitioner seed; the root seed when absent.
    pub partition_seed: Option<u64>,
    /// Per input channel, physical units. Empty means the default for all.
    pub noise_std: Vec<f64>,
    /// Channels predicted as values rather than increments.
    pub direct_channels: Vec<String>,
    pub model: ModelSection,
    pub lr: LrSection,
    pub normalizer_horizon: u64,
    pub freeze_halo_edges: bool,
    pub scheduler: Scheduler,
    /// Optimizer steps recorded in the phase trace, from the first.
    pub trace_steps: usize,
    /// Write a checkpoint every this many steps; 0 writes only the final one.
    pub checkpoint_every: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            dataset: None,
            output_dir: PathBuf::from("run"),
            mode: Mode::Halo,
            parts: 1,
            steps: 1000,
            accumulation: 2,
            seed: 0,
            partition_seed: None,
            noise_std: Vec::new(),
            direct_channels: Vec::new(),
            model: ModelSection::default(),
            lr: LrSection::default(),
            normalizer_horizon: 1000,
            freeze_halo_edges: false,
            scheduler: Scheduler::Sequential,
            trace_steps: 20,
            checkpoint_every: 0,
        }
    }
}

impl RunConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes") + "\n"
    }

    pub fn validate(&self) -> Result<()> {
        if self.parts == 0 || self.parts > 64 {
            return Err(Error::Config(format!("parts must be in 1..=64, got {}", self.parts)));
        }
        if self.mode == Mode::Single && self.parts != 1 {
            return Err(Error::Config("single mode requires parts = 1".into()));
        }
        if self.accumulation == 0 {
            return Err(Error::Config("accumulation must be >= 1".into()));
        }
        if self.steps == 0 {
            return Err(Error::Config("steps must be >= 1".into()));
        }
        if !(self.lr.initial > 0.0 && self.lr.floor >= 0.0 && self.lr.floor <= self.lr.initial) {
            return Err(Error::Config("learning rate needs 0 <= floor <= initial, initial > 0".into()));
        }
        if self.lr.decay.is_some_and(|d| !(d > 0.0)) {
            return Err(Error::Config("learning rate decay must be > 0".into()));
        }
        if self.noise_std.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return Err(Error::Config("noise std must be finite and >= 0".into()));
        }
        if self.model.message_passing_steps == 0 || self.model.latent == 0 {
            return Err(Error::Config("model needs at least one block and latent width >= 1".into()));
        }
        Ok(())
    }

    pub fn schedule(&self) -> LrSchedule {
        match self.lr.decay {
            Some(decay) => LrSchedule {
                initial: self.lr.initial,
                decay,
                floor: self.lr.floor,
            },
            None => LrSchedule::reaching_floor(self.lr.initial, self.lr.floor, self.steps),
        }
    }

    /// Applies `direct_channels` to a schema read from disk.
    pub fn schema(&self, names: &[String]) -> Result<ChannelSchema> {
        ChannelSchema::new(names, names, names, &self.direct_channels)
            .map_err(|e| Error::Config(format!("channel selection: {e}")))
    }

    pub fn noise_for(&self, schema: &ChannelSchema) -> Result<Vec<f64>> {
        let n = schema.inputs().len();
        match self.noise_std.len() {
            0 => Ok(vec![DEFAULT_NOISE_STD; n]),
            1 => Ok(vec![self.noise_std[0]; n]),
            k if k == n => Ok(self.noise_std.clone()),
            k => Err(Error::Config(format!("{k} noise levels for {n} input channels"))),
        }
    }

    pub fn train_config(&self, schema: &ChannelSchema) -> Result<TrainConfig> {
        let cfg = TrainConfig {
            mode: self.mode,
            parts: self.parts,
            steps: self.steps,
            accumulation: self.accumulation,
            seed: self.seed,
            noise_std: self.noise_for(schema)?,
            schedule: self.schedule(),
            normalizer_horizon: self.normalizer_horizon,
            freeze_halo_edges: self.freeze_halo_edges,
            partition_seed: self.partition_seed.unwrap_or(self.seed),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn model_config(&self, node_in: usize, edge_in: usize, node_out: usize) -> Result<ModelConfig> {
        let c = ModelConfig {
            message_passing_steps: self.model.message_passing_steps,
            latent: self.model.latent,
            node_in,
            edge_in,
            node_out,
            hidden_layers: self.model.hidden_layers,
            layer_norm: self.model.layer_norm,
        };
        c.validate()?;
        Ok(c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let c = RunConfig::default();
        assert_eq!(RunConfig::from_json(&c.to_json()).unwrap(), c);
        assert_eq!(RunConfig::from_json("{}").unwrap(), c);
    }

    #[test]
    fn unknown_keys_rejected() {
        let e = RunConfig::from_json(r#"{"stepz": 3}"#).unwrap_err();
        assert!(matches!(e, Error::Config(m) if m.contains("stepz")));
        assert!(RunConfig::from_json(r#"{"model": {"width": 3}}"#).is_err());
    }

    #[test]
    fn validation() {
        let mut c = RunConfig::from_json(r#"{"mode": "single", "parts": 2}"#).unwrap();
        assert!(c.validate().is_err());
        c.parts = 1;
        c.validate().unwrap();
        c.accumulation = 0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn noise_expansion() {
        let schema = ChannelSchema::all_delta(&["u", "v"]).unwrap();
        let mut c = RunConfig::default();
        assert_eq!(c.noise_for(&schema).unwrap(), vec![DEFAULT_NOISE_STD; 2]);
        c.noise_std = vec![0.1];
        assert_eq!(c.noise_for(&schema).unwrap(), vec![0.1; 2]);
        c.noise_std = vec![0.1, 0.2, 0.3];
        assert!(c.noise_for(&schema).is_err());
    }
}
