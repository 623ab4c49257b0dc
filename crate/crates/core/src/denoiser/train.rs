use alloc::format;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::model::{default_view_ids, denoise_forward, ParamVars};
use super::{DenoiserParams, ModelConfig, ModelError, TrainConfig};
use crate::diffusion::{forward_diffuse, mask_condition, DiffusionState, NoiseSchedule, CHANNELS};
use crate::nn::{Tape, Tensor};
use crate::Real;

/// One scene: `views` images and ground-truth raymaps at grid resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSample<S> {
    pub views: usize,
    /// `views * image_size² * 3`, row-major RGB in `[0, 1]`.
    pub images: Vec<S>,
    /// `views * cells * 8` ground-truth channels.
    pub rays: Vec<S>,
    /// `views * cells` validity flags.
    pub mask: Vec<bool>,
}

impl<S: Real> TrainingSample<S> {
    pub fn validate(&self, cfg: &ModelConfig) -> Result<(), ModelError> {
        let cells = self.views * cfg.cells_per_view();
        if self.views == 0
            || self.images.len() != self.views * cfg.image_len()
            || self.rays.len() != cells * CHANNELS
            || self.mask.len() != cells
        {
            return Err(ModelError::InvalidInput("training sample shapes are inconsistent"));
        }
        Ok(())
    }

    pub fn state(&self, cfg: &ModelConfig) -> Result<DiffusionState<S>, ModelError> {
        self.validate(cfg)?;
        DiffusionState::new(self.views, cfg.grid_rows, cfg.grid_cols, self.rays.clone(), self.mask.clone())
            .map_err(|_| ModelError::InvalidInput("training sample shapes are inconsistent"))
    }
}

/// The random part of one training example: a timestep and Gaussian noise.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseDraw<S> {
    pub t: usize,
    pub eps: Vec<S>,
}

/// `t ~ Uniform{1..=timesteps}` then `len` standard normal values.
pub fn draw_noise<S: Real, R: Rng + ?Sized>(rng: &mut R, len: usize, timesteps: usize) -> NoiseDraw<S> {
    let t = rng.random_range(1..=timesteps);
    let eps = (0..len)
        .map(|_| S::from_f64(rng.sample::<f64, _>(StandardNormal)))
        .collect();
    NoiseDraw { t, eps }
}

/// Loss and parameter gradients of one sample.
#[derive(Debug, Clone)]
pub struct SampleGrad<S> {
    pub loss: S,
    /// No valid cell: the loss is zero and carries no signal.
    pub empty: bool,
    pub grads: Vec<Tensor<S>>,
}

/// Diffuses the sample with `noise`, conditions on its mask, predicts the
/// clean rays and backpropagates the masked x₀ loss.
pub fn sample_loss_and_grad<S: Real>(
    params: &DenoiserParams<S>,
    sample: &TrainingSample<S>,
    noise: &NoiseDraw<S>,
    sched: &NoiseSchedule,
) -> Result<SampleGrad<S>, ModelError> {
    let cfg = &params.config;
    let s0 = sample.state(cfg)?;
    let st = forward_diffuse(&s0, noise.t, &noise.eps, sched)
        .map_err(|_| ModelError::InvalidInput("noise does not match sample"))?;
    let cond = mask_condition(&st);
    let mut tape = Tape::new();
    let pv = ParamVars::register(&mut tape, params);
    let ids = default_view_ids(sample.views);
    let pred = denoise_forward(&mut tape, &pv, params, &sample.images, &cond, noise.t as f64, &ids)?;
    let loss = tape.masked_mse(pred, &s0.as_tensor(), &sample.mask);
    let value = tape.value(loss).data[0];
    if !value.is_finite() {
        return Err(ModelError::NonFinite("loss".into()));
    }
    let mut grads: Vec<Tensor<S>> = params.values.iter().map(|t| Tensor::zeros(t.rows, t.cols)).collect();
    tape.backward(loss).accumulate_params(&tape, &mut grads);
    Ok(SampleGrad {
        loss: value,
        empty: !sample.mask.iter().any(|m| *m),
        grads,
    })
}

/// First and second moment estimates of Adam.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<S> {
    pub m: Vec<Tensor<S>>,
    pub v: Vec<Tensor<S>>,
    pub step: u64,
}

impl<S: Real> AdamState<S> {
    pub fn new(params: &DenoiserParams<S>) -> Self {
        let zeros = || params.values.iter().map(|t| Tensor::zeros(t.rows, t.cols)).collect();
        AdamState {
            m: zeros(),
            v: zeros(),
            step: 0,
        }
    }

    /// One bias-corrected update of `params.values` from `params.grads`.
    pub fn update(&mut self, cfg: &TrainConfig, params: &mut DenoiserParams<S>) {
        self.step += 1;
        let b1 = S::from_f64(cfg.beta1);
        let b2 = S::from_f64(cfg.beta2);
        let c1 = S::from_f64(1.0 - cfg.beta1.powi(self.step.min(i32::MAX as u64) as i32));
        let c2 = S::from_f64(1.0 - cfg.beta2.powi(self.step.min(i32::MAX as u64) as i32));
        let lr = S::from_f64(cfg.learning_rate);
        let eps = S::from_f64(cfg.adam_eps);
        let one = S::one();
        for (((p, g), m), v) in params
            .values
            .iter_mut()
            .zip(&params.grads)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            for (((p, g), m), v) in p.data.iter_mut().zip(&g.data).zip(&mut m.data).zip(&mut v.data) {
                *m = b1 * *m + (one - b1) * *g;
                *v = b2 * *v + (one - b2) * *g * *g;
                let mh = *m / c1;
                let vh = *v / c2;
                *p -= lr * mh / (vh.sqrt() + eps);
            }
        }
    }
}

/// Parameters, optimizer state and the noise stream of a training run.
///
/// The noise of a batch is always drawn sequentially from `rng`, so the
/// per-sample gradients may be computed in any order or in parallel; they
/// are reduced in batch order by [`Trainer::apply`].
#[derive(Debug, Clone)]
pub struct Trainer<S> {
    pub config: TrainConfig,
    pub params: DenoiserParams<S>,
    pub adam: AdamState<S>,
    pub schedule: NoiseSchedule,
    pub rng: ChaCha8Rng,
    pub iteration: u64,
}

impl<S: Real> Trainer<S> {
    pub fn new(config: TrainConfig) -> Result<Self, ModelError> {
        config.validate()?;
        let params = DenoiserParams::init(&config.model, config.seed)?;
        Self::with_params(config, params)
    }

    pub fn with_params(config: TrainConfig, params: DenoiserParams<S>) -> Result<Self, ModelError> {
        config.validate()?;
        if params.config != config.model {
            return Err(ModelError::InvalidConfig("parameters were built for another model"));
        }
        let schedule = NoiseSchedule::new(config.model.timesteps)
            .map_err(|_| ModelError::InvalidConfig("timesteps must be at least 2"))?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        // Keep the noise stream independent of the initialization stream.
        rng.set_stream(1);
        Ok(Trainer {
            adam: AdamState::new(&params),
            config,
            params,
            schedule,
            rng,
            iteration: 0,
        })
    }

    /// Noise for every sample of `batch`, in order.
    pub fn draw_batch_noise(&mut self, batch: &[TrainingSample<S>]) -> Vec<NoiseDraw<S>> {
        let t = self.schedule.timesteps();
        batch
            .iter()
            .map(|s| draw_noise(&mut self.rng, s.rays.len(), t))
            .collect()
    }

    /// Averages per-sample results in order, checks them and takes one
    /// optimizer step. Returns the mean loss.
    pub fn apply(&mut self, per_sample: &[SampleGrad<S>]) -> Result<f64, ModelError> {
        if per_sample.is_empty() {
            return Err(ModelError::InvalidInput("empty batch"));
        }
        let inv = S::from_f64(1.0 / per_sample.len() as f64);
        let mut loss = S::zero();
        self.params.zero_grads();
        for s in per_sample {
            loss += s.loss;
            for (acc, g) in self.params.grads.iter_mut().zip(&s.grads) {
                acc.add_assign(g);
            }
        }
        loss *= inv;
        if !loss.is_finite() {
            return Err(ModelError::NonFinite("loss".into()));
        }
        for (name, g) in self.params.names.iter().zip(self.params.grads.iter_mut()) {
            g.scale(inv);
            if !g.is_finite() {
                return Err(ModelError::NonFinite(format!("gradient of {name}")));
            }
        }
        self.adam.update(&self.config, &mut self.params);
        self.params.check_finite()?;
        self.iteration += 1;
        Ok(Real::to_f64(loss))
    }

    /// One sequential optimization step on `batch`.
    pub fn train_step(&mut self, batch: &[TrainingSample<S>]) -> Result<f64, ModelError> {
        for s in batch {
            s.validate(&self.config.model)?;
        }
        let noise = self.draw_batch_noise(batch);
        let per_sample = batch
            .iter()
            .zip(&noise)
            .map(|(s, n)| sample_loss_and_grad(&self.params, s, n, &self.schedule))
            .collect::<Result<Vec<_>, _>>()?;
        self.apply(&per_sample)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::homogenize;
    use crate::geometry::Vec3;

    fn micro() -> ModelConfig {
        ModelConfig {
            grid_rows: 2,
            grid_cols: 2,
            image_size: 4,
            feature_dim: 4,
            ray_dim: 4,
            layers: 2,
            heads: 2,
            mlp_ratio: 2,
            timesteps: 100,
        }
    }

    /// A sample whose rays are unit-norm homogenized points.
    pub(crate) fn synthetic<S: Real>(cfg: &ModelConfig, views: usize, seed: u64) -> TrainingSample<S> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cells = views * cfg.cells_per_view();
        let images = (0..views * cfg.image_len()).map(|_| S::from_f64(rng.random_range(0.0..1.0))).collect();
        let mut rays = Vec::with_capacity(cells * 8);
        for _ in 0..cells {
            for _ in 0..2 {
                let p = Vec3::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
                rays.extend(homogenize(&p).unwrap().0.iter().map(|v| S::from_f64(*v)));
            }
        }
        let mask = (0..cells).map(|i| i % 5 != 3).collect();
        TrainingSample { views, images, rays, mask }
    }

    #[test]
    fn first_loss_is_order_one() {
        let cfg = TrainConfig {
            model: ModelConfig {
                grid_rows: 4,
                grid_cols: 4,
                image_size: 8,
                feature_dim: 8,
                ray_dim: 8,
                ..micro()
            },
            batch_size: 4,
            ..TrainConfig::default()
        };
        let mut tr = Trainer::<f64>::new(cfg.clone()).unwrap();
        let batch: Vec<_> = (0..4).map(|k| synthetic(&cfg.model, 2, k)).collect();
        // Zero-predictor reference: mean square of the valid targets.
        let mut sum = 0.0;
        let mut n = 0;
        for s in &batch {
            for (cell, m) in s.rays.chunks_exact(8).zip(&s.mask) {
                if *m {
                    sum += cell.iter().map(|v| v * v).sum::<f64>();
                    n += 8;
                }
            }
        }
        let reference = sum / n as f64;
        let loss = tr.train_step(&batch).unwrap();
        assert!(loss.is_finite());
        assert!(loss > 0.2 * reference && loss < 20.0 * reference, "{loss} vs {reference}");
    }

    #[test]
    fn full_step_gradient_matches_fd() {
        let cfg = micro();
        let params = DenoiserParams::<f64>::init(&cfg, 21).unwrap();
        let sample = synthetic::<f64>(&cfg, 1, 22);
        let sched = NoiseSchedule::new(cfg.timesteps).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let noise = draw_noise(&mut rng, sample.rays.len(), cfg.timesteps);
        let g = sample_loss_and_grad(&params, &sample, &noise, &sched).unwrap();
        let loss_at = |q: &DenoiserParams<f64>| sample_loss_and_grad(q, &sample, &noise, &sched).unwrap().loss;
        for (k, name) in params.names.iter().enumerate() {
            let dir: Vec<f64> = (0..params.values[k].len()).map(|_| rng.random_range(-1.0..1.0)).collect();
            let analytic: f64 = g.grads[k].data.iter().zip(&dir).map(|(a, b)| a * b).sum();
            let h = 1e-5;
            let shifted = |s: f64| {
                let mut q = params.clone();
                for (v, d) in q.values[k].data.iter_mut().zip(&dir) {
                    *v += s * d;
                }
                loss_at(&q)
            };
            let fd = (shifted(h) - shifted(-h)) / (2.0 * h);
            let rel = (analytic - fd).abs() / analytic.abs().max(fd.abs()).max(1e-10);
            assert!(rel < 1e-3, "{name}: {analytic} vs {fd}");
        }
    }

    #[test]
    fn identical_steps_are_bit_identical() {
        let cfg = TrainConfig {
            model: micro(),
            ..TrainConfig::default()
        };
        let batch: Vec<_> = (0..3).map(|k| synthetic::<f32>(&cfg.model, 1, k)).collect();
        let mut a = Trainer::<f32>::new(cfg.clone()).unwrap();
        let mut b = Trainer::<f32>::new(cfg).unwrap();
        for _ in 0..3 {
            let la = a.train_step(&batch).unwrap();
            let lb = b.train_step(&batch).unwrap();
            assert_eq!(la.to_bits(), lb.to_bits());
        }
        assert_eq!(a.params.values, b.params.values);
        assert_eq!(a.adam, b.adam);
        assert_eq!(a.iteration, 3);
    }

    #[test]
    fn every_parameter_gets_gradient() {
        let cfg = ModelConfig {
            grid_rows: 4,
            grid_cols: 4,
            image_size: 8,
            feature_dim: 8,
            ray_dim: 8,
            ..micro()
        };
        let params = DenoiserParams::<f64>::init(&cfg, 31).unwrap();
        let sample = synthetic::<f64>(&cfg, 2, 32);
        let sched = NoiseSchedule::new(cfg.timesteps).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let noise = draw_noise(&mut rng, sample.rays.len(), cfg.timesteps);
        let g = sample_loss_and_grad(&params, &sample, &noise, &sched).unwrap();
        for (name, t) in params.names.iter().zip(&g.grads) {
            assert!(t.data.iter().any(|v| *v != 0.0), "{name} receives no gradient");
        }
    }

    #[test]
    fn non_finite_inputs_are_reported() {
        let cfg = TrainConfig {
            model: micro(),
            ..TrainConfig::default()
        };
        let mut tr = Trainer::<f32>::new(cfg.clone()).unwrap();
        let idx = tr.params.names.iter().position(|n| n == "head.out.w").unwrap();
        tr.params.values[idx].data[0] = f32::INFINITY;
        let batch = [synthetic::<f32>(&cfg.model, 1, 1)];
        match tr.train_step(&batch) {
            Err(ModelError::NonFinite(what)) => assert_eq!(what, "head output"),
            other => panic!("unexpected {other:?}"),
        }

        let mut tr = Trainer::<f32>::new(cfg.clone()).unwrap();
        let mut g = sample_loss_and_grad(&tr.params, &batch[0], &draw_noise(&mut tr.rng, 32, 100), &tr.schedule).unwrap();
        g.grads[2].data[0] = f32::NAN;
        match tr.apply(&[g]) {
            Err(ModelError::NonFinite(what)) => assert_eq!(what, "gradient of enc.mix1.w"),
            other => panic!("unexpected {other:?}"),
        }
        assert!(tr.train_step(&[TrainingSample { views: 1, images: alloc::vec![], rays: alloc::vec![], mask: alloc::vec![] }]).is_err());
    }

    #[test]
    fn noise_draw_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut seen = [false; 5];
        for _ in 0..200 {
            let d: NoiseDraw<f64> = draw_noise(&mut rng, 3, 4);
            assert!((1..=4).contains(&d.t));
            seen[d.t] = true;
            assert_eq!(d.eps.len(), 3);
        }
        assert!(!seen[0] && seen[1..].iter().all(|s| *s));
    }
}
