//! Multi-threaded training driver with bit-exact resume.
//!
//! Per-sample gradients are computed in parallel but the noise is drawn and
//! the gradients reduced in batch order, so the result does not depend on
//! the thread count. Batch composition is a pure function of the seed and
//! the iteration.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use raysfm_core::denoiser::{sample_loss_and_grad, Trainer, TrainingSample};
use raysfm_core::synthdata::DatasetRecord;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::checkpoint;
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::io::atomic_write;

pub const LOSS_LOG_NAME: &str = "loss.jsonl";
pub const LATEST_CHECKPOINT: &str = "checkpoint";
// Stream 0 initializes parameters and stream 1 draws noise.
const ORDER_STREAM_BASE: u64 = 2;

/// Dataset positions used by step `iteration` (0-based): consecutive
/// windows over a sequence of per-epoch shuffles of `0..n`.
pub fn batch_indices(n: usize, batch: usize, seed: u64, iteration: u64) -> Vec<usize> {
    assert!(n > 0, "empty training set");
    let start = iteration as u128 * batch as u128;
    let mut out = Vec::with_capacity(batch);
    let mut epoch = u64::MAX;
    let mut perm: Vec<usize> = Vec::new();
    for k in 0..batch as u128 {
        let pos = start + k;
        let e = (pos / n as u128) as u64;
        if e != epoch {
            epoch = e;
            perm = (0..n).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(ORDER_STREAM_BASE.wrapping_add(e));
            perm.shuffle(&mut rng);
        }
        out.push(perm[(pos % n as u128) as usize]);
    }
    out
}

/// One optimization step with per-sample gradients computed on the current
/// rayon pool. Bit-identical to [`Trainer::train_step`] on the same batch.
pub fn parallel_step(tr: &mut Trainer<f32>, batch: &[TrainingSample<f32>]) -> Result<f64> {
    for s in batch {
        s.validate(&tr.config.model)?;
    }
    let noise = tr.draw_batch_noise(batch);
    let (params, sched) = (&tr.params, &tr.schedule);
    let grads = batch
        .par_iter()
        .zip(noise.par_iter())
        .map(|(s, n)| sample_loss_and_grad(params, s, n, sched))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    Ok(tr.apply(&grads)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossLine {
    pub iteration: u64,
    pub loss: f64,
}

fn read_loss_log(path: &Path, up_to: u64) -> Result<Vec<LossLine>> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let lines = text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(serde_json::from_str::<LossLine>)
        .collect::<std::result::Result<Vec<_>, _>>()?;
    Ok(lines.into_iter().filter(|l| l.iteration <= up_to).collect())
}

fn write_loss_log(path: &Path, lines: &[LossLine]) -> Result<()> {
    let mut text = String::new();
    for l in lines {
        text.push_str(&serde_json::to_string(l)?);
        text.push('\n');
    }
    atomic_write(path, text.as_bytes())
}

/// Turns records into training samples, rejecting any that do not fit the
/// model's grid.
pub fn training_samples(records: &[DatasetRecord], cfg: &RunConfig) -> Result<Vec<TrainingSample<f32>>> {
    records
        .iter()
        .map(|r| {
            r.to_training_sample(&cfg.train.model).map_err(|e| {
                Error::config(format!("record {} does not match the model configuration: {e}", r.scene_id))
            })
        })
        .collect()
}

/// Paths written by a training run.
#[derive(Debug, Clone)]
pub struct RunOutputs {
    pub loss_log: PathBuf,
    pub latest: PathBuf,
    pub final_loss: Option<f64>,
}

/// Trains until `tr.iteration == cfg.train.iterations`, logging the step
/// loss at every multiple of `log_every` and checkpointing at every
/// multiple of `checkpoint_every` and at the end.
pub fn run(tr: &mut Trainer<f32>, samples: &[TrainingSample<f32>], cfg: &RunConfig, out: &Path) -> Result<RunOutputs> {
    if samples.is_empty() {
        return Err(Error::data("no training records"));
    }
    let log_path = out.join(LOSS_LOG_NAME);
    let latest = out.join(LATEST_CHECKPOINT);
    let mut log = read_loss_log(&log_path, tr.iteration)?;
    let batch = tr.config.batch_size;
    let seed = tr.config.seed;
    let mut last = None;
    while tr.iteration < cfg.train.iterations {
        let idx = batch_indices(samples.len(), batch, seed, tr.iteration);
        let b: Vec<TrainingSample<f32>> = idx.iter().map(|&i| samples[i].clone()).collect();
        let loss = parallel_step(tr, &b)?;
        last = Some(loss);
        let it = tr.iteration;
        if it % cfg.log_every == 0 {
            log.push(LossLine { iteration: it, loss });
            write_loss_log(&log_path, &log)?;
            log::info!("iteration {it}: loss {loss:.6}");
        }
        if cfg.checkpoint_every > 0 && it % cfg.checkpoint_every == 0 {
            checkpoint::save(&out.join("checkpoints").join(format!("step-{it:08}")), tr)?;
        }
    }
    fs::create_dir_all(out.join("checkpoints")).map_err(|e| Error::io(out, e))?;
    write_loss_log(&log_path, &log)?;
    checkpoint::save(&latest, tr)?;
    Ok(RunOutputs {
        loss_log: log_path,
        latest,
        final_loss: last,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use raysfm_core::denoiser::{ModelConfig, TrainConfig};

    #[test]
    fn batches_cover_each_epoch_once() {
        let n = 10;
        let mut seen: Vec<usize> = (0..5).flat_map(|it| batch_indices(n, 4, 3, it)).collect();
        seen.truncate(20);
        for epoch in seen.chunks(10) {
            let mut e = epoch.to_vec();
            e.sort();
            assert_eq!(e, (0..10).collect::<Vec<_>>());
        }
        assert_eq!(batch_indices(n, 4, 3, 2), batch_indices(n, 4, 3, 2));
        assert_ne!(batch_indices(n, 10, 3, 0), batch_indices(n, 10, 3, 1));
        assert_ne!(batch_indices(n, 10, 3, 0), batch_indices(n, 10, 4, 0));
    }

    #[test]
    fn parallel_step_matches_sequential_for_any_thread_count() {
        let cfg = TrainConfig {
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
            batch_size: 3,
            ..TrainConfig::default()
        };
        let batch: Vec<TrainingSample<f32>> = (0..3)
            .map(|k| TrainingSample {
                views: 1 + k % 2,
                images: (0..48 * (1 + k % 2)).map(|i| ((i + k) % 5) as f32 * 0.2).collect(),
                rays: (0..32 * (1 + k % 2)).map(|i| ((i * 3 + k) % 7) as f32 * 0.1 - 0.3).collect(),
                mask: (0..4 * (1 + k % 2)).map(|i| i % 3 != 0).collect(),
            })
            .collect();
        let mut seq = Trainer::<f32>::new(cfg.clone()).unwrap();
        for _ in 0..2 {
            seq.train_step(&batch).unwrap();
        }
        for threads in [1, 3] {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
            let mut par = Trainer::<f32>::new(cfg.clone()).unwrap();
            for _ in 0..2 {
                pool.install(|| parallel_step(&mut par, &batch)).unwrap();
            }
            for (a, b) in seq.params.values.iter().zip(&par.params.values) {
                assert!(a.data.iter().zip(&b.data).all(|(x, y)| x.to_bits() == y.to_bits()));
            }
        }
    }
}
