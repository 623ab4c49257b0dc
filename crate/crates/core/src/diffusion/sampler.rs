use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{mask_condition, DiffusionError, DiffusionState, NoiseSchedule, CHANNELS};
use crate::denoiser::{denoise, DenoiserParams};
use crate::geometry::{HomogeneousPoint, RayMap};
use crate::nn::Tensor;
use crate::Real;

/// Fraction of the schedule at which the x₀ prediction is read out.
pub const DEFAULT_STOP_FRAC: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplerConfig {
    pub num_steps: usize,
    pub stop_frac: f64,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            num_steps: 10,
            stop_frac: DEFAULT_STOP_FRAC,
            seed: 0,
        }
    }
}

impl SamplerConfig {
    /// Timesteps visited, from `timesteps` down in `num_steps` even strides.
    pub fn timesteps(&self, timesteps: usize) -> Vec<usize> {
        let n = self.num_steps;
        let mut out: Vec<usize> = (0..n)
            .map(|k| ((timesteps * (n - k)) as f64 / n as f64).round() as usize)
            .filter(|t| *t > 0)
            .collect();
        out.dedup();
        out
    }
}

/// Result of [`reverse_sample`].
#[derive(Debug, Clone, PartialEq)]
pub struct SampleOutput {
    /// The returned x₀ prediction per view, unit-normalized, all cells valid.
    pub rays: Vec<RayMap>,
    /// Timestep at which `rays` was read out.
    pub stop_t: usize,
    /// Raw x₀ prediction (`views * cells * 8`) at every visited timestep.
    pub trace: Vec<(usize, Vec<f64>)>,
}

impl SampleOutput {
    pub fn evaluations(&self) -> usize {
        self.trace.len()
    }
}

/// Splits a `views * rows * cols * 8` prediction into per-view raymaps with
/// each 4-vector rescaled to unit norm.
pub fn rays_from_prediction(pred: &[f64], views: usize, rows: usize, cols: usize) -> Result<Vec<RayMap>, DiffusionError> {
    let per = rows * cols * CHANNELS;
    if pred.len() != views * per {
        return Err(DiffusionError::InvalidInput("prediction size does not match views and grid"));
    }
    pred.chunks_exact(per)
        .map(|chunk| {
            let unit: Vec<f64> = chunk
                .chunks_exact(4)
                .flat_map(|v| {
                    let hp = HomogeneousPoint::from_raw([v[0], v[1], v[2], v[3]]);
                    hp.normalized().unwrap_or(HomogeneousPoint::ORIGIN).0
                })
                .collect();
            RayMap::from_channels(rows, cols, &unit).map_err(|_| DiffusionError::InvalidInput("raymap size"))
        })
        .collect()
}

/// Deterministic (η = 0) reverse process from standard normal noise, read
/// out early once the timestep reaches `stop_frac · T`.
///
/// Masks are all ones. The output is a pure function of the parameters,
/// images and `cfg.seed`.
pub fn reverse_sample<S: Real>(
    params: &DenoiserParams<S>,
    images: &[S],
    views: usize,
    sched: &NoiseSchedule,
    cfg: &SamplerConfig,
) -> Result<SampleOutput, DiffusionError> {
    if cfg.num_steps == 0 {
        return Err(DiffusionError::InvalidInput("num_steps must be at least 1"));
    }
    if !(cfg.stop_frac > 0.0 && cfg.stop_frac <= 1.0) {
        return Err(DiffusionError::InvalidInput("stop_frac must be in (0, 1]"));
    }
    let mcfg = &params.config;
    if sched.timesteps() != mcfg.timesteps {
        return Err(DiffusionError::InvalidInput("schedule length differs from the model's"));
    }
    params.check_finite()?;
    let (rows, cols) = (mcfg.grid_rows, mcfg.grid_cols);
    let len = views * rows * cols * CHANNELS;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut x: Vec<f64> = (0..len).map(|_| rng.sample(StandardNormal)).collect();
    let mask = alloc::vec![true; views * rows * cols];
    let ids: Vec<usize> = (0..views).collect();
    let steps = cfg.timesteps(sched.timesteps());
    let stop = cfg.stop_frac * sched.timesteps() as f64;
    let mut trace = Vec::with_capacity(steps.len());

    for (k, &t) in steps.iter().enumerate() {
        let state = DiffusionState::new(views, rows, cols, x.iter().map(|v| S::from_f64(*v)).collect(), mask.clone())?;
        let cond: Tensor<S> = mask_condition(&state);
        let pred = denoise(params, images, &cond, t as f64, &ids)?;
        let x0: Vec<f64> = pred.data.iter().map(|v| Real::to_f64(*v)).collect();
        trace.push((t, x0));
        let x0 = &trace.last().expect("just pushed").1;
        if t as f64 <= stop + 1e-9 || k + 1 == steps.len() {
            return Ok(SampleOutput {
                rays: rays_from_prediction(x0, views, rows, cols)?,
                stop_t: t,
                trace,
            });
        }
        let ab = sched.alpha_bar(t);
        let ab_prev = sched.alpha_bar(steps[k + 1]);
        let (sa, sb) = (ab.sqrt(), (1.0 - ab).sqrt());
        let (pa, pb) = (ab_prev.sqrt(), (1.0 - ab_prev).sqrt());
        for (xi, x0i) in x.iter_mut().zip(x0) {
            let eps = (*xi - sa * x0i) / sb;
            *xi = pa * x0i + pb * eps;
        }
    }
    unreachable!("the last visited timestep always returns")
}
