//! Checkpoints: a `manifest.json` with the configuration, iteration and RNG
//! position, plus one little-endian float32 blob per named tensor for the
//! parameters and both Adam moments. Reloading is bit-exact.

use std::fs;
use std::path::Path;

use raysfm_core::denoiser::{AdamState, DenoiserParams, TrainConfig, Trainer};
use raysfm_core::nn::Tensor;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{create_dir, read_f32, read_json, temp_sibling, write_f32, write_json};

pub const MANIFEST_NAME: &str = "manifest.json";
const FORMAT_VERSION: u32 = 1;
const GROUPS: [&str; 3] = ["params", "adam_m", "adam_v"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub config: TrainConfig,
    pub iteration: u64,
    pub adam_step: u64,
    pub rng: RngState,
    pub tensors: Vec<TensorEntry>,
}

/// Writes the full trainer state into directory `dir`, replacing any
/// previous checkpoint there only once the new one is complete.
pub fn save(dir: &Path, tr: &Trainer<f32>) -> Result<()> {
    let tmp = temp_sibling(dir);
    if tmp.exists() {
        fs::remove_dir_all(&tmp).map_err(|e| Error::io(&tmp, e))?;
    }
    for g in GROUPS {
        create_dir(&tmp.join(g))?;
    }
    let sets = [&tr.params.values, &tr.adam.m, &tr.adam.v];
    for (g, set) in GROUPS.iter().zip(sets) {
        for (name, t) in tr.params.names.iter().zip(set.iter()) {
            write_f32(&tmp.join(g).join(format!("{name}.f32")), t.data.iter().copied())?;
        }
    }
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        config: tr.config.clone(),
        iteration: tr.iteration,
        adam_step: tr.adam.step,
        rng: RngState {
            seed: tr.rng.get_seed(),
            stream: tr.rng.get_stream(),
            word_pos: tr.rng.get_word_pos(),
        },
        tensors: tr
            .params
            .names
            .iter()
            .zip(&tr.params.values)
            .map(|(name, t)| TensorEntry {
                name: name.clone(),
                rows: t.rows,
                cols: t.cols,
            })
            .collect(),
    };
    write_json(&tmp.join(MANIFEST_NAME), &manifest)?;
    replace_dir(&tmp, dir)
}

fn replace_dir(new: &Path, dir: &Path) -> Result<()> {
    let old = dir.with_file_name(format!(
        ".{}.old-{}",
        dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default(),
        std::process::id()
    ));
    let had_old = dir.exists();
    if had_old {
        fs::rename(dir, &old).map_err(|e| Error::io(dir, e))?;
    }
    fs::rename(new, dir).map_err(|e| Error::io(dir, e))?;
    if had_old {
        fs::remove_dir_all(&old).map_err(|e| Error::io(&old, e))?;
    }
    Ok(())
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let m: Manifest = read_json(&dir.join(MANIFEST_NAME))?;
    if m.format_version != FORMAT_VERSION {
        return Err(Error::data(format!("unsupported checkpoint version {}", m.format_version)));
    }
    Ok(m)
}

fn read_group(dir: &Path, group: &str, m: &Manifest) -> Result<Vec<(String, Tensor<f32>)>> {
    m.tensors
        .iter()
        .map(|e| {
            let data = read_f32(&dir.join(group).join(format!("{}.f32", e.name)), e.rows * e.cols)?;
            Ok((e.name.clone(), Tensor::from_vec(e.rows, e.cols, data)))
        })
        .collect()
}

/// Parameters only, for inference.
pub fn load_params(dir: &Path) -> Result<(Manifest, DenoiserParams<f32>)> {
    let m = read_manifest(dir)?;
    let params = DenoiserParams::from_named(&m.config.model, read_group(dir, "params", &m)?)
        .map_err(|e| Error::config(format!("checkpoint does not match its configuration: {e}")))?;
    Ok((m, params))
}

/// Full trainer state, ready to continue exactly where it was saved.
pub fn load_trainer(dir: &Path) -> Result<Trainer<f32>> {
    let (m, params) = load_params(dir)?;
    let moments = |g: &str| -> Result<Vec<Tensor<f32>>> {
        Ok(read_group(dir, g, &m)?.into_iter().map(|(_, t)| t).collect())
    };
    let mut tr = Trainer::with_params(m.config.clone(), params)?;
    tr.adam = AdamState {
        m: moments("adam_m")?,
        v: moments("adam_v")?,
        step: m.adam_step,
    };
    tr.iteration = m.iteration;
    tr.rng = rand_chacha::ChaCha8Rng::from_seed(m.rng.seed);
    tr.rng.set_stream(m.rng.stream);
    tr.rng.set_word_pos(m.rng.word_pos);
    Ok(tr)
}

#[cfg(test)]
mod tests {
    use super::*;
    use raysfm_core::denoiser::{ModelConfig, TrainingSample};

    fn tiny() -> TrainConfig {
        TrainConfig {
            model: ModelConfig {
                grid_rows: 2,
                grid_cols: 2,
                image_size: 4,
                feature_dim: 8,
                ray_dim: 8,
                layers: 1,
                heads: 2,
                mlp_ratio: 2,
                timesteps: 10,
            },
            batch_size: 1,
            ..TrainConfig::default()
        }
    }

    fn sample() -> TrainingSample<f32> {
        TrainingSample {
            views: 1,
            images: (0..48).map(|k| (k % 7) as f32 * 0.1).collect(),
            rays: (0..32).map(|k| ((k * 5 % 11) as f32 - 5.0) * 0.1).collect(),
            mask: vec![true, true, false, true],
        }
    }

    #[test]
    fn save_then_load_continues_bit_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let ck = dir.path().join("ck");
        let mut a = Trainer::<f32>::new(tiny()).unwrap();
        a.train_step(&[sample()]).unwrap();
        save(&ck, &a).unwrap();
        save(&ck, &a).unwrap();
        let mut b = load_trainer(&ck).unwrap();
        assert_eq!(b.iteration, 1);
        assert_eq!(b.adam, a.adam);
        let la = a.train_step(&[sample()]).unwrap();
        let lb = b.train_step(&[sample()]).unwrap();
        assert_eq!(la.to_bits(), lb.to_bits());
        for (x, y) in a.params.values.iter().zip(&b.params.values) {
            assert!(x.data.iter().zip(&y.data).all(|(p, q)| p.to_bits() == q.to_bits()));
        }
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
    }

    #[test]
    fn mismatched_shapes_are_config_errors() {
        let dir = tempfile::tempdir().unwrap();
        let ck = dir.path().join("ck");
        save(&ck, &Trainer::<f32>::new(tiny()).unwrap()).unwrap();
        let mut m = read_manifest(&ck).unwrap();
        m.config.model.feature_dim = 12;
        write_json(&ck.join(MANIFEST_NAME), &m).unwrap();
        assert!(matches!(load_params(&ck), Err(Error::Config(_))));
    }
}
