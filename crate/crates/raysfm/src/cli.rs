//! Command-line surface. Every command takes an optional JSON config whose
//! fields individual flags override, and writes the resolved config into
//! its output directory.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use raysfm_core::denoiser::Trainer;
use raysfm_core::diffusion::NoiseSchedule;
use raysfm_core::eval::MetricReport;
use raysfm_core::geometry::dehomogenize;
use raysfm_core::geometry::DEFAULT_W_EPS;
use rayon::prelude::*;
use serde::Serialize;

use crate::checkpoint;
use crate::config::RunConfig;
use crate::dataset::{generate_dataset, Dataset, SplitName};
use crate::error::{Error, Result};
use crate::io::{atomic_write, create_dir, read_raymap, write_json, write_ply, write_schedule, PlyFormat};
use crate::pipeline::{
    evaluate, predict, prediction_dir_name, read_prediction, read_prediction_index, write_prediction,
    PredictionEntry, PredictionIndex, PREDICTIONS_INDEX,
};
use crate::trainer;

pub const THREADS_ENV: &str = "RAYSFM_THREADS";

#[derive(Debug, Parser)]
#[command(name = "raysfm", version, about = "Ray diffusion structure from motion at desk scale")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset directory.
    Gen(GenArgs),
    /// Train the denoiser on a dataset.
    Train(TrainArgs),
    /// Sample raymaps and cameras for dataset records.
    Infer(InferArgs),
    /// Score predictions against a dataset.
    Eval(EvalArgs),
    /// Convert raymap endpoints to a PLY point cloud.
    ExportPly(ExportArgs),
}

#[derive(Debug, Args)]
pub struct Common {
    /// JSON run configuration; flags override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

impl Common {
    fn load(&self) -> Result<RunConfig> {
        match &self.config {
            Some(p) => RunConfig::load(p),
            None => Ok(RunConfig::new()),
        }
    }
}

#[derive(Debug, Args)]
pub struct GridArgs {
    /// Grid cells per side.
    #[arg(long)]
    pub grid: Option<usize>,
    /// Image side length in pixels.
    #[arg(long)]
    pub image_size: Option<usize>,
}

impl GridArgs {
    fn apply(&self, c: &mut RunConfig) {
        if let Some(g) = self.grid {
            c.train.model.grid_rows = g;
            c.train.model.grid_cols = g;
        }
        if let Some(s) = self.image_size {
            c.train.model.image_size = s;
        }
    }
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub out: PathBuf,
    /// Number of records.
    #[arg(long)]
    pub count: Option<u64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub min_views: Option<usize>,
    #[arg(long)]
    pub max_views: Option<usize>,
    /// Fixed azimuth spread of each camera ring, in degrees.
    #[arg(long)]
    pub spread_deg: Option<f64>,
    /// Walk each ring in a random direction.
    #[arg(long)]
    pub mirror: bool,
    #[arg(long)]
    pub jitter_deg: Option<f64>,
    /// Build half-turn symmetric scenes.
    #[arg(long)]
    pub symmetric: bool,
    #[arg(long)]
    pub dropout_rate: Option<f64>,
    #[command(flatten)]
    pub grid: GridArgs,
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    #[arg(long)]
    pub feature_dim: Option<usize>,
    #[arg(long)]
    pub ray_dim: Option<usize>,
    #[arg(long)]
    pub layers: Option<usize>,
    #[arg(long)]
    pub heads: Option<usize>,
    #[arg(long)]
    pub mlp_ratio: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Continue from this checkpoint directory.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Total iterations, counting those already done when resuming.
    #[arg(long)]
    pub iterations: Option<u64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub log_every: Option<u64>,
    #[arg(long)]
    pub checkpoint_every: Option<u64>,
    /// Train on this record id only.
    #[arg(long)]
    pub overfit_record: Option<u64>,
    #[command(flatten)]
    pub grid: GridArgs,
    #[command(flatten)]
    pub model: ModelArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Train,
    HeldOut,
    All,
}

#[derive(Debug, Args)]
pub struct SamplerArgs {
    /// Sampler seeds, one output set each.
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    #[arg(long)]
    pub num_steps: Option<usize>,
    /// Read out the x₀ prediction once t ≤ stop_frac·T.
    #[arg(long)]
    pub stop_frac: Option<f64>,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Record ids; defaults to every record of `--split`.
    #[arg(long, value_delimiter = ',')]
    pub ids: Option<Vec<u64>>,
    #[arg(long, value_enum, default_value = "held-out")]
    pub split: SplitArg,
    #[command(flatten)]
    pub sampler: SamplerArgs,
    /// Write ASCII instead of binary PLY.
    #[arg(long)]
    pub ascii: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub predictions: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub rotation_threshold_deg: Option<f64>,
    #[arg(long)]
    pub center_threshold: Option<f64>,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    /// Raymap blobs (`.f32` with a `.json` sidecar).
    #[arg(long, required = true)]
    pub raymap: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Export ray origins instead of endpoints.
    #[arg(long)]
    pub origins: bool,
    #[arg(long)]
    pub ascii: bool,
}

fn set<T>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}

fn ply_format(ascii: bool) -> PlyFormat {
    if ascii {
        PlyFormat::Ascii
    } else {
        PlyFormat::BinaryLittleEndian
    }
}

/// Thread cap from the environment; absent means all cores.
pub fn thread_cap() -> Result<Option<usize>> {
    match std::env::var(THREADS_ENV) {
        Err(_) => Ok(None),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(Error::config(format!("{THREADS_ENV} must be a positive integer, got {v:?}"))),
        },
    }
}

pub fn run(cli: Cli) -> Result<()> {
    let threads = thread_cap()?;
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        builder = builder.num_threads(n);
    }
    let pool = builder.build().map_err(|e| Error::config(format!("thread pool: {e}")))?;
    pool.install(|| match cli.command {
        Command::Gen(a) => cmd_gen(&a),
        Command::Train(a) => cmd_train(&a),
        Command::Infer(a) => cmd_infer(&a),
        Command::Eval(a) => cmd_eval(&a),
        Command::ExportPly(a) => cmd_export_ply(&a),
    })
}

pub fn cmd_gen(a: &GenArgs) -> Result<()> {
    let mut c = a.common.load()?;
    a.grid.apply(&mut c);
    let g = &mut c.gen;
    set(&mut g.count, a.count);
    set(&mut g.seed, a.seed);
    set(&mut g.min_views, a.min_views);
    set(&mut g.max_views, a.max_views);
    set(&mut g.jitter_deg, a.jitter_deg);
    set(&mut g.dropout_rate, a.dropout_rate);
    if a.spread_deg.is_some() {
        g.spread_deg = a.spread_deg;
    }
    g.mirror |= a.mirror;
    g.symmetric |= a.symmetric;
    c.validate()?;
    if c.gen.count == 0 {
        log::warn!("generating an empty dataset (count = 0)");
    }
    let index = generate_dataset(&a.out, c.gen.count, c.gen.seed, &c.gen_options())?;
    c.write_snapshot(&a.out)?;
    println!(
        "wrote {} records to {}: {} train, {} held-out",
        index.records.len(),
        a.out.display(),
        index.count(SplitName::Train),
        index.count(SplitName::HeldOut)
    );
    Ok(())
}

pub fn cmd_train(a: &TrainArgs) -> Result<()> {
    let mut c = a.common.load()?;
    a.grid.apply(&mut c);
    let (t, m) = (&mut c.train, &a.model);
    set(&mut t.model.feature_dim, m.feature_dim);
    set(&mut t.model.ray_dim, m.ray_dim);
    set(&mut t.model.layers, m.layers);
    set(&mut t.model.heads, m.heads);
    set(&mut t.model.mlp_ratio, m.mlp_ratio);
    set(&mut t.iterations, a.iterations);
    set(&mut t.batch_size, a.batch_size);
    set(&mut t.learning_rate, a.lr);
    set(&mut t.seed, a.seed);
    set(&mut c.log_every, a.log_every);
    set(&mut c.checkpoint_every, a.checkpoint_every);
    if a.overfit_record.is_some() {
        c.overfit_record = a.overfit_record;
    }
    let mut tr = match &a.resume {
        Some(ck) => {
            let tr = checkpoint::load_trainer(ck)?;
            let mut saved = tr.config.clone();
            saved.iterations = c.train.iterations;
            let explicit = a.common.config.is_some()
                || a.batch_size.is_some()
                || a.lr.is_some()
                || a.seed.is_some()
                || a.grid.grid.is_some()
                || a.grid.image_size.is_some()
                || [m.feature_dim, m.ray_dim, m.layers, m.heads, m.mlp_ratio].iter().any(Option::is_some);
            if explicit && saved != c.train {
                return Err(Error::config("training config differs from the checkpoint's"));
            }
            c.train = saved;
            tr
        }
        None => {
            c.validate()?;
            Trainer::new(c.train.clone())?
        }
    };
    tr.config.iterations = c.train.iterations;
    c.validate()?;

    let ds = Dataset::open(&a.data)?;
    let records = match c.overfit_record {
        Some(id) => {
            let e = ds.index.get(id).ok_or_else(|| Error::data(format!("no record {id} in dataset")))?;
            vec![ds.load(e)?]
        }
        None => ds.load_split(SplitName::Train)?,
    };
    let samples = trainer::training_samples(&records, &c)?;
    create_dir(&a.out)?;
    c.write_snapshot(&a.out)?;
    write_schedule(&a.out.join("schedule.json"), &tr.schedule)?;
    log::info!("training on {} records from iteration {}", samples.len(), tr.iteration);
    let out = trainer::run(&mut tr, &samples, &c, &a.out)?;
    println!(
        "trained to iteration {}; final loss {}; checkpoint {}",
        tr.iteration,
        out.final_loss.map_or("n/a".to_string(), |l| format!("{l:.6}")),
        out.latest.display()
    );
    Ok(())
}

pub fn cmd_infer(a: &InferArgs) -> Result<()> {
    let mut c = a.common.load()?;
    let (manifest, params) = checkpoint::load_params(&a.checkpoint)?;
    if a.common.config.is_some() && c.train.model != manifest.config.model {
        return Err(Error::config("model config differs from the checkpoint's"));
    }
    c.train = manifest.config.clone();
    set(&mut c.sampler.seeds, a.sampler.seeds.clone());
    set(&mut c.sampler.num_steps, a.sampler.num_steps);
    set(&mut c.sampler.stop_frac, a.sampler.stop_frac);
    c.validate()?;

    let ds = Dataset::open(&a.data)?;
    let entries: Vec<_> = match &a.ids {
        Some(ids) => ids
            .iter()
            .map(|id| ds.index.get(*id).cloned().ok_or_else(|| Error::data(format!("no record {id} in dataset"))))
            .collect::<Result<_>>()?,
        None => ds
            .index
            .records
            .iter()
            .filter(|e| match a.split {
                SplitArg::All => true,
                SplitArg::Train => e.split == SplitName::Train,
                SplitArg::HeldOut => e.split == SplitName::HeldOut,
            })
            .cloned()
            .collect(),
    };
    let sched = NoiseSchedule::new(params.config.timesteps)?;
    create_dir(&a.out)?;
    c.write_snapshot(&a.out)?;
    let jobs: Vec<(usize, u64)> = (0..entries.len())
        .flat_map(|i| c.sampler.seeds.iter().map(move |s| (i, *s)))
        .collect();
    let records = entries.iter().map(|e| ds.load(e)).collect::<Result<Vec<_>>>()?;
    let done = jobs
        .par_iter()
        .map(|&(i, seed)| {
            let rec = &records[i];
            let p = predict(&params, rec, &sched, &c.sampler.for_seed(seed))?;
            let dir = prediction_dir_name(rec.scene_id, seed);
            write_prediction(&a.out.join(&dir), &p.rays, &p.cameras, ply_format(a.ascii))?;
            Ok(PredictionEntry {
                id: rec.scene_id,
                sampler_seed: seed,
                dir,
                views: rec.views(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    write_json(&a.out.join(PREDICTIONS_INDEX), &PredictionIndex { entries: done.clone() })?;
    println!(
        "wrote {} prediction sets for {} records to {}",
        done.len(),
        records.len(),
        a.out.display()
    );
    Ok(())
}

#[derive(Debug, Serialize)]
struct SceneLine<'a> {
    id: u64,
    sampler_seed: u64,
    #[serde(flatten)]
    report: &'a MetricReport,
}

#[derive(Debug, Serialize)]
struct Aggregate {
    scenes: usize,
    #[serde(flatten)]
    mean: Option<MetricReport>,
}

pub fn cmd_eval(a: &EvalArgs) -> Result<()> {
    let mut c = a.common.load()?;
    set(&mut c.metrics.rotation_threshold_deg, a.rotation_threshold_deg);
    set(&mut c.metrics.center_threshold, a.center_threshold);
    if !(c.metrics.rotation_threshold_deg > 0.0 && c.metrics.center_threshold > 0.0) {
        return Err(Error::config("metric thresholds must be positive"));
    }
    let ds = Dataset::open(&a.data)?;
    let index = read_prediction_index(&a.predictions)?;
    let reports = index
        .entries
        .par_iter()
        .map(|e| {
            let entry = ds
                .index
                .get(e.id)
                .ok_or_else(|| Error::data(format!("prediction for record {} has no match in the dataset", e.id)))?;
            if entry.views != e.views {
                return Err(Error::data(format!("record {}: view count differs from the prediction's", e.id)));
            }
            let rec = ds.load(entry)?;
            let pred = read_prediction(&a.predictions.join(&e.dir), e.views)?;
            evaluate(&pred, &rec, &c.metrics)
        })
        .collect::<Result<Vec<_>>>()?;
    create_dir(&a.out)?;
    c.write_snapshot(&a.out)?;
    let mut text = String::new();
    for (e, r) in index.entries.iter().zip(&reports) {
        text.push_str(&serde_json::to_string(&SceneLine {
            id: e.id,
            sampler_seed: e.sampler_seed,
            report: r,
        })?);
        text.push('\n');
    }
    atomic_write(&a.out.join("per_scene.jsonl"), text.as_bytes())?;
    let agg = Aggregate {
        scenes: reports.len(),
        mean: MetricReport::mean(&reports),
    };
    write_json(&a.out.join("aggregate.json"), &agg)?;
    println!("{}", serde_json::to_string(&agg)?);
    Ok(())
}

pub fn cmd_export_ply(a: &ExportArgs) -> Result<()> {
    let mut points = Vec::new();
    for p in &a.raymap {
        let rm = read_raymap(p)?;
        let src = if a.origins { &rm.origins } else { &rm.endpoints };
        points.extend(
            src.iter()
                .zip(&rm.valid)
                .filter(|(_, v)| **v)
                .filter_map(|(h, _)| dehomogenize(h, DEFAULT_W_EPS).ok()),
        );
    }
    if let Some(parent) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    write_ply(&a.out, &points, ply_format(a.ascii))?;
    println!("wrote {} points to {}", points.len(), a.out.display());
    Ok(())
}

/// Path helper for tests and scripts: the latest checkpoint of a run.
pub fn latest_checkpoint(run_dir: &Path) -> PathBuf {
    run_dir.join(trainer::LATEST_CHECKPOINT)
}
