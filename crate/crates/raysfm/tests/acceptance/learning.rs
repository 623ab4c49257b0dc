//! Criteria that need a trained model.

use std::sync::OnceLock;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use raysfm::pipeline::{endpoint_cloud, recover_cameras};
use raysfm::trainer::{batch_indices, parallel_step};
use raysfm_core::denoiser::{DenoiserParams, ModelConfig, TrainConfig, Trainer, TrainingSample};
use raysfm_core::diffusion::{reverse_sample, NoiseSchedule, SampleOutput, SamplerConfig};
use raysfm_core::eval::{chamfer, rotation_accuracy_partial};
use raysfm_core::synthdata::{generate_record, DatasetRecord, GenOptions, SceneOptions, Split};
use rayon::prelude::*;

use super::{check, Outcome};

const TRAIN_SCENES: u64 = 2000;
const HELD_OUT_SCENES: u64 = 200;
const STEPS: u64 = 1500;
const BATCH: usize = 8;

/// Train scenes use even seeds, held-out scenes odd ones.
fn records(opts: &GenOptions, count: u64, split: Split) -> Vec<DatasetRecord> {
    let offset = u64::from(split == Split::HeldOut);
    (0..count)
        .into_par_iter()
        .map(|k| {
            let r = generate_record(k, 2 * k + offset, opts).unwrap();
            assert_eq!(r.split(), split);
            r
        })
        .collect()
}

fn train(model: &ModelConfig, train: &[DatasetRecord], steps: u64) -> DenoiserParams<f32> {
    let samples: Vec<TrainingSample<f32>> = train.iter().map(|r| r.to_training_sample(model).unwrap()).collect();
    let cfg = TrainConfig {
        model: model.clone(),
        batch_size: BATCH,
        seed: 0,
        ..TrainConfig::default()
    };
    let mut tr = Trainer::<f32>::new(cfg).unwrap();
    while tr.iteration < steps {
        // Step decay for the last fifth.
        if tr.iteration == steps * 4 / 5 {
            tr.config.learning_rate = 1e-4;
        }
        let idx = batch_indices(samples.len(), BATCH, 0, tr.iteration);
        let batch: Vec<_> = idx.iter().map(|&i| samples[i].clone()).collect();
        parallel_step(&mut tr, &batch).unwrap();
    }
    tr.params
}

fn sample(params: &DenoiserParams<f32>, rec: &DatasetRecord, cfg: &SamplerConfig) -> SampleOutput {
    let images: Vec<f32> = rec.images.iter().flatten().copied().collect();
    let sched = NoiseSchedule::new(params.config.timesteps).unwrap();
    reverse_sample(params, &images, rec.views(), &sched, cfg).unwrap()
}

/// Masked mean squared error of a raw `views * cells * 8` prediction over
/// the channels in `channels`, with the zero-predictor error alongside.
fn masked_mse(pred: &[f64], target: &TrainingSample<f32>, channels: std::ops::Range<usize>) -> (f64, f64) {
    let (mut err, mut zero, mut n) = (0.0, 0.0, 0usize);
    for (cell, m) in target.mask.iter().enumerate() {
        if *m {
            for c in channels.clone() {
                let t = f64::from(target.rays[cell * 8 + c]);
                err += (pred[cell * 8 + c] - t).powi(2);
                zero += t * t;
                n += 1;
            }
        }
    }
    (err / n as f64, zero / n as f64)
}

struct Desk {
    model: ModelConfig,
    params: DenoiserParams<f32>,
    held_out: Vec<DatasetRecord>,
    train_secs: f64,
}

fn desk() -> &'static Desk {
    static DESK: OnceLock<Desk> = OnceLock::new();
    DESK.get_or_init(|| {
        let opts = GenOptions::default();
        let model = ModelConfig {
            grid_rows: opts.grid_rows,
            grid_cols: opts.grid_cols,
            image_size: opts.image_size,
            feature_dim: 16,
            ray_dim: 16,
            layers: 2,
            heads: 2,
            mlp_ratio: 2,
            timesteps: 100,
        };
        let t0 = Instant::now();
        let params = train(&model, &records(&opts, TRAIN_SCENES, Split::Train), STEPS);
        Desk {
            model,
            params,
            held_out: records(&opts, HELD_OUT_SCENES, Split::HeldOut),
            train_secs: t0.elapsed().as_secs_f64(),
        }
    })
}

/// Probability that a uniform random rotation is within `deg` of the
/// identity, from random unit quaternions: the angle is `2 acos |w|`.
fn random_baseline(deg: f64, draws: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut hits = 0usize;
    for _ in 0..draws {
        let q: [f64; 4] = std::array::from_fn(|_| rng.sample(StandardNormal));
        let norm = q.iter().map(|v| v * v).sum::<f64>().sqrt();
        let angle = 2.0 * (q[0].abs() / norm).min(1.0).acos().to_degrees();
        if angle < deg {
            hits += 1;
        }
    }
    hits as f64 / draws as f64
}

pub fn criterion_7() -> Outcome {
    let d = desk();
    let baseline = random_baseline(15.0, 1_000_000);
    let closed_form = {
        let t = 15f64.to_radians();
        (t - t.sin()) / std::f64::consts::PI
    };
    let stride = d.model.cell_stride();
    let (mut acc, mut err, mut zero) = (0.0, 0.0, 0.0);
    for rec in &d.held_out {
        let out = sample(&d.params, rec, &SamplerConfig::default());
        let rots: Vec<_> = recover_cameras(&out.rays, stride).iter().map(|c| c.as_ref().map(|c| c.rotation)).collect();
        let gt: Vec<_> = rec.cameras.iter().map(|c| c.rotation).collect();
        acc += rotation_accuracy_partial(&rots, &gt, 15.0).unwrap();
        let pred: Vec<f64> = out.rays.iter().flat_map(|rm| rm.to_channels()).collect();
        let (e, z) = masked_mse(&pred, &rec.to_training_sample(&d.model).unwrap(), 4..8);
        err += e;
        zero += z;
    }
    let n = d.held_out.len() as f64;
    let acc = acc / n;
    let ratio = err / zero;
    check(
        acc >= 10.0 * baseline && ratio <= 0.5 && (baseline - closed_form).abs() < 1e-4,
        format!(
            "{TRAIN_SCENES} scenes, {STEPS} steps in {:.0} s; rotation accuracy @15 deg {acc:.4} vs random {baseline:.6} \
             (closed form {closed_form:.6}), {:.1}x; endpoint MSE {:.4} = {ratio:.3} of the zero predictor",
            d.train_secs,
            acc / baseline,
            err / n
        ),
    )
}

pub fn criterion_8() -> Outcome {
    let d = desk();
    let (mut at_t, mut at_early) = (0.0, 0.0);
    let scenes = &d.held_out[..100];
    for rec in scenes {
        let out = sample(&d.params, rec, &SamplerConfig::default());
        let (first, second) = (&out.trace[0], &out.trace[1]);
        assert_eq!((first.0, second.0), (100, 90));
        let target = rec.to_training_sample(&d.model).unwrap();
        at_t += masked_mse(&first.1, &target, 0..8).0;
        at_early += masked_mse(&second.1, &target, 0..8).0;
    }
    let n = scenes.len() as f64;
    let (at_t, at_early) = (at_t / n, at_early / n);
    check(
        at_early <= at_t,
        format!("mean x0 error over {} scenes: {at_early:.5} at t=90, {at_t:.5} at t=100", scenes.len()),
    )
}

/// Splits `0..n` by single linkage at every merge height and returns the
/// best ratio of the smallest inter-cluster to the largest intra-cluster
/// distance, with its cluster count. Only cuts with at least two clusters,
/// one of them holding two or more members, are considered.
fn best_cut(dist: &[Vec<f64>]) -> (f64, usize) {
    let n = dist.len();
    let mut heights: Vec<f64> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).map(|(i, j)| dist[i][j]).collect();
    heights.sort_by(f64::total_cmp);
    let mut best = (0.0, 1);
    for h in heights {
        let mut label: Vec<usize> = (0..n).collect();
        loop {
            let mut changed = false;
            for i in 0..n {
                for j in 0..n {
                    if dist[i][j] <= h && label[j] < label[i] {
                        label[i] = label[j];
                        changed = true;
                    }
                }
            }
            if !changed {
                break;
            }
        }
        let mut ids = label.clone();
        ids.sort();
        ids.dedup();
        if ids.len() < 2 || ids.len() == n {
            continue;
        }
        let (mut intra, mut inter) = (0.0f64, f64::INFINITY);
        for i in 0..n {
            for j in i + 1..n {
                if label[i] == label[j] {
                    intra = intra.max(dist[i][j]);
                } else {
                    inter = inter.min(dist[i][j]);
                }
            }
        }
        let ratio = inter / intra;
        if ratio > best.0 {
            best = (ratio, ids.len());
        }
    }
    best
}

pub fn criterion_9() -> Outcome {
    let t0 = Instant::now();
    // Two cameras a quarter turn either way from the first: for a scene
    // with a half-turn symmetry both placements give the same images. The
    // rest of the ring is fixed so that this is the only ambiguity.
    let mut opts = GenOptions {
        grid_rows: 8,
        grid_cols: 8,
        views: (2, 2),
        scene: SceneOptions { symmetric: true },
        ..GenOptions::default()
    };
    opts.ring.spread_deg = Some(90.0);
    opts.ring.mirror = true;
    opts.ring.jitter_deg = 0.0;
    opts.ring.distance = (2.0, 2.0);
    opts.ring.focal = (1.0, 1.0);
    opts.ring.elevation_deg = (25.0, 25.0);
    let model = ModelConfig {
        grid_rows: 8,
        grid_cols: 8,
        image_size: opts.image_size,
        feature_dim: 16,
        ray_dim: 16,
        layers: 2,
        heads: 2,
        mlp_ratio: 2,
        timesteps: 100,
    };
    let params = train(&model, &records(&opts, 2000, Split::Train), 1500);
    let scene = generate_record(0, 1, &opts).unwrap();
    let clouds: Vec<_> = (0..8u64)
        .map(|seed| {
            // The full chain: an early readout averages over the modes.
            let cfg = SamplerConfig { num_steps: 100, stop_frac: 0.01, seed };
            endpoint_cloud(&sample(&params, &scene, &cfg).rays, Some(&scene.foreground))
        })
        .collect();
    if clouds.iter().any(Vec::is_empty) {
        return Err("a sample has no finite foreground endpoints".into());
    }
    let dist: Vec<Vec<f64>> = clouds
        .iter()
        .map(|a| clouds.iter().map(|b| chamfer(a, b).unwrap()).collect())
        .collect();
    let (ratio, clusters) = best_cut(&dist);
    let mut pairs: Vec<f64> = (0..8).flat_map(|i| (i + 1..8).map(move |j| (i, j))).map(|(i, j)| dist[i][j]).collect();
    pairs.sort_by(f64::total_cmp);
    check(
        clusters >= 2 && ratio > 10.0,
        format!(
            "8 seeds on a symmetric two-view scene, {:.0} s: best single-linkage cut has {clusters} clusters, \
             inter/intra Chamfer ratio {ratio:.2}; pairwise Chamfer from {:.4} to {:.4}",
            t0.elapsed().as_secs_f64(),
            pairs[0],
            pairs[pairs.len() - 1]
        ),
    )
}
