//! Run configuration: one JSON file, every field overridable by a flag, and
//! a snapshot written next to every output.

use std::path::Path;

use raysfm_core::denoiser::TrainConfig;
use raysfm_core::diffusion::{SamplerConfig, DEFAULT_STOP_FRAC};
use raysfm_core::eval::{DEFAULT_CENTER_THRESHOLD, DEFAULT_ROTATION_THRESHOLD_DEG};
use raysfm_core::synthdata::{Dropout, GenOptions, RingOptions, SceneOptions};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{read_json, write_json};

pub const SNAPSHOT_NAME: &str = "run_config.json";

/// Synthetic dataset generation settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenSettings {
    /// Number of records `K`.
    pub count: u64,
    /// Record `k` is generated from seed `seed + k`; even seeds are train.
    pub seed: u64,
    pub min_views: usize,
    pub max_views: usize,
    /// Fixed azimuth spread of the camera ring in degrees; random if unset.
    pub spread_deg: Option<f64>,
    /// Walk each ring in a random direction.
    pub mirror: bool,
    pub jitter_deg: f64,
    pub symmetric: bool,
    pub dropout_rate: f64,
    /// Radius range of the dropout blob in grid cells; none if unset.
    pub dropout_blob: Option<(f64, f64)>,
}

impl Default for GenSettings {
    fn default() -> Self {
        let d = GenOptions::default();
        GenSettings {
            count: 2000,
            seed: 0,
            min_views: d.views.0,
            max_views: d.views.1,
            spread_deg: d.ring.spread_deg,
            mirror: d.ring.mirror,
            jitter_deg: d.ring.jitter_deg,
            symmetric: d.scene.symmetric,
            dropout_rate: d.dropout.rate,
            dropout_blob: d.dropout.blob,
        }
    }
}

/// Seeds and early stopping of the reverse sampler.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplerSettings {
    pub num_steps: usize,
    pub stop_frac: f64,
    pub seeds: Vec<u64>,
}

impl Default for SamplerSettings {
    fn default() -> Self {
        SamplerSettings {
            num_steps: 10,
            stop_frac: DEFAULT_STOP_FRAC,
            seeds: vec![0],
        }
    }
}

impl SamplerSettings {
    pub fn for_seed(&self, seed: u64) -> SamplerConfig {
        SamplerConfig {
            num_steps: self.num_steps,
            stop_frac: self.stop_frac,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MetricSettings {
    pub rotation_threshold_deg: f64,
    pub center_threshold: f64,
}

impl Default for MetricSettings {
    fn default() -> Self {
        MetricSettings {
            rotation_threshold_deg: DEFAULT_ROTATION_THRESHOLD_DEG,
            center_threshold: DEFAULT_CENTER_THRESHOLD,
        }
    }
}

/// Everything a command needs besides its input and output paths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub gen: GenSettings,
    pub sampler: SamplerSettings,
    pub metrics: MetricSettings,
    /// Steps between loss log lines.
    pub log_every: u64,
    /// Steps between checkpoints; 0 writes only the final one.
    pub checkpoint_every: u64,
    /// Train on this single record only, repeated to fill each batch.
    pub overfit_record: Option<u64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            train: TrainConfig::default(),
            gen: GenSettings::default(),
            sampler: SamplerSettings::default(),
            metrics: MetricSettings::default(),
            log_every: 100,
            checkpoint_every: 1000,
            overfit_record: None,
        }
    }
}

impl RunConfig {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn load(path: &Path) -> Result<Self> {
        read_json(path).map_err(|e| match e {
            Error::Data(m) => Error::Config(m),
            other => other,
        })
    }

    pub fn write_snapshot(&self, dir: &Path) -> Result<()> {
        write_json(&dir.join(SNAPSHOT_NAME), self)
    }

    /// Generation options with the grid and image size of the model.
    pub fn gen_options(&self) -> GenOptions {
        let m = &self.train.model;
        let g = &self.gen;
        GenOptions {
            image_size: m.image_size,
            grid_rows: m.grid_rows,
            grid_cols: m.grid_cols,
            views: (g.min_views, g.max_views),
            scene: SceneOptions { symmetric: g.symmetric },
            ring: RingOptions {
                spread_deg: g.spread_deg,
                mirror: g.mirror,
                jitter_deg: g.jitter_deg,
                image_size: m.image_size,
                ..RingOptions::default()
            },
            dropout: Dropout {
                rate: g.dropout_rate,
                blob: g.dropout_blob,
            },
            ..GenOptions::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate().map_err(|e| Error::config(e.to_string()))?;
        self.gen_options().validate().map_err(|e| Error::config(e.to_string()))?;
        let s = &self.sampler;
        if s.num_steps == 0 || !(s.stop_frac > 0.0 && s.stop_frac <= 1.0) || s.seeds.is_empty() {
            return Err(Error::config("sampler needs num_steps ≥ 1, stop_frac in (0, 1] and a seed"));
        }
        if self.log_every == 0 {
            return Err(Error::config("log_every must be positive"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid_and_round_trip() {
        let c = RunConfig::new();
        c.validate().unwrap();
        let text = serde_json::to_string(&c).unwrap();
        assert_eq!(serde_json::from_str::<RunConfig>(&text).unwrap(), c);
    }

    #[test]
    fn partial_files_fill_defaults() {
        let c: RunConfig = serde_json::from_str(r#"{"train": {"batch_size": 3}, "gen": {"count": 5}}"#).unwrap();
        assert_eq!(c.train.batch_size, 3);
        assert_eq!(c.train.model.grid_rows, 16);
        assert_eq!(c.gen.count, 5);
    }

    #[test]
    fn gen_options_follow_the_model_grid() {
        let mut c = RunConfig::new();
        c.train.model.grid_rows = 8;
        c.train.model.grid_cols = 8;
        c.train.model.image_size = 16;
        let g = c.gen_options();
        assert_eq!((g.grid_rows, g.image_size, g.ring.image_size), (8, 16, 16));
        g.validate().unwrap();
    }
}
