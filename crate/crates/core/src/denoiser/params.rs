use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{ModelConfig, ModelError};
use crate::nn::Tensor;
use crate::Real;

const ADA_INIT_STD: f64 = 0.02;

#[derive(Debug, Clone)]
pub(crate) struct BlockLayout {
    pub ada_w: usize,
    pub ada_b: usize,
    pub qkv_w: usize,
    pub qkv_b: usize,
    pub proj_w: usize,
    pub proj_b: usize,
    pub mlp1_w: usize,
    pub mlp1_b: usize,
    pub mlp2_w: usize,
    pub mlp2_b: usize,
}

/// Positions of every named tensor in [`DenoiserParams::values`].
#[derive(Debug, Clone)]
pub(crate) struct Layout {
    pub patch_w: usize,
    pub patch_b: usize,
    pub mix1_w: usize,
    pub mix1_b: usize,
    pub mix2_w: usize,
    pub mix2_b: usize,
    pub ray_w: usize,
    pub ray_b: usize,
    pub time_w1: usize,
    pub time_b1: usize,
    pub time_w2: usize,
    pub time_b2: usize,
    pub blocks: Vec<BlockLayout>,
    pub head_ada_w: usize,
    pub head_ada_b: usize,
    pub head_w: usize,
    pub head_b: usize,
}

struct Spec {
    name: String,
    rows: usize,
    cols: usize,
    std: f64,
}

struct SpecBuilder(Vec<Spec>);

impl SpecBuilder {
    fn add(&mut self, name: impl Into<String>, rows: usize, cols: usize, std: f64) -> usize {
        self.0.push(Spec {
            name: name.into(),
            rows,
            cols,
            std,
        });
        self.0.len() - 1
    }

    /// Weight `fan_in x fan_out` with `1/sqrt(fan_in)` init plus a zero bias.
    fn linear(&mut self, name: &str, fan_in: usize, fan_out: usize) -> (usize, usize) {
        let std = 1.0 / (fan_in as f64).sqrt();
        let w = self.add(format!("{name}.w"), fan_in, fan_out, std);
        let b = self.add(format!("{name}.b"), 1, fan_out, 0.0);
        (w, b)
    }
}

fn specs(cfg: &ModelConfig) -> (Vec<Spec>, Layout) {
    let d = cfg.model_dim();
    let c1 = cfg.feature_dim;
    let patch = cfg.patch_rows() * cfg.patch_cols() * 3;
    let mut sb = SpecBuilder(Vec::new());
    let (patch_w, patch_b) = sb.linear("enc.patch", patch, c1);
    let (mix1_w, mix1_b) = sb.linear("enc.mix1", c1, c1);
    let (mix2_w, mix2_b) = sb.linear("enc.mix2", c1, c1);
    let (ray_w, ray_b) = sb.linear("ray", crate::diffusion::CHANNELS + 1, cfg.ray_dim);
    let (time_w1, time_b1) = sb.linear("time.fc1", d, d);
    let (time_w2, time_b2) = sb.linear("time.fc2", d, d);
    let mut blocks = Vec::with_capacity(cfg.layers);
    for l in 0..cfg.layers {
        let ada_w = sb.add(format!("blocks.{l}.ada.w"), d, 4 * d, ADA_INIT_STD);
        let ada_b = sb.add(format!("blocks.{l}.ada.b"), 1, 4 * d, 0.0);
        let (qkv_w, qkv_b) = sb.linear(&format!("blocks.{l}.qkv"), d, 3 * d);
        let (proj_w, proj_b) = sb.linear(&format!("blocks.{l}.proj"), d, d);
        let (mlp1_w, mlp1_b) = sb.linear(&format!("blocks.{l}.mlp1"), d, cfg.mlp_ratio * d);
        let (mlp2_w, mlp2_b) = sb.linear(&format!("blocks.{l}.mlp2"), cfg.mlp_ratio * d, d);
        blocks.push(BlockLayout {
            ada_w,
            ada_b,
            qkv_w,
            qkv_b,
            proj_w,
            proj_b,
            mlp1_w,
            mlp1_b,
            mlp2_w,
            mlp2_b,
        });
    }
    let head_ada_w = sb.add("head.ada.w", d, 2 * d, ADA_INIT_STD);
    let head_ada_b = sb.add("head.ada.b", 1, 2 * d, 0.0);
    let (head_w, head_b) = sb.linear("head.out", d, crate::diffusion::CHANNELS);
    let layout = Layout {
        patch_w,
        patch_b,
        mix1_w,
        mix1_b,
        mix2_w,
        mix2_b,
        ray_w,
        ray_b,
        time_w1,
        time_b1,
        time_w2,
        time_b2,
        blocks,
        head_ada_w,
        head_ada_b,
        head_w,
        head_b,
    };
    (sb.0, layout)
}

/// All learnable tensors of the denoiser, by name, with gradient buffers of
/// matching shapes.
#[derive(Debug, Clone)]
pub struct DenoiserParams<S> {
    pub config: ModelConfig,
    pub names: Vec<String>,
    pub values: Vec<Tensor<S>>,
    pub grads: Vec<Tensor<S>>,
    pub(crate) layout: Layout,
}

impl<S: Real> DenoiserParams<S> {
    /// Random initialization, deterministic in `seed`.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let (specs, layout) = specs(config);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut names = Vec::with_capacity(specs.len());
        let mut values = Vec::with_capacity(specs.len());
        for s in &specs {
            let data = (0..s.rows * s.cols)
                .map(|_| {
                    if s.std == 0.0 {
                        S::zero()
                    } else {
                        let z: f64 = rng.sample(StandardNormal);
                        S::from_f64(z * s.std)
                    }
                })
                .collect();
            names.push(s.name.clone());
            values.push(Tensor::from_vec(s.rows, s.cols, data));
        }
        let grads = values.iter().map(|t| Tensor::zeros(t.rows, t.cols)).collect();
        Ok(DenoiserParams {
            config: config.clone(),
            names,
            values,
            grads,
            layout,
        })
    }

    /// Rebuilds parameters from named tensors, checking names and shapes
    /// against the configuration.
    pub fn from_named(config: &ModelConfig, named: Vec<(String, Tensor<S>)>) -> Result<Self, ModelError> {
        config.validate()?;
        let (specs, layout) = specs(config);
        if named.len() != specs.len() {
            return Err(ModelError::InvalidInput("parameter count does not match configuration"));
        }
        let mut names = Vec::with_capacity(specs.len());
        let mut values = Vec::with_capacity(specs.len());
        for (spec, (name, t)) in specs.iter().zip(named) {
            if spec.name != name || spec.rows != t.rows || spec.cols != t.cols {
                return Err(ModelError::InvalidInput("parameter name or shape does not match configuration"));
            }
            names.push(name);
            values.push(t);
        }
        let grads = values.iter().map(|t| Tensor::zeros(t.rows, t.cols)).collect();
        Ok(DenoiserParams {
            config: config.clone(),
            names,
            values,
            grads,
            layout,
        })
    }

    /// Total number of scalars, a function of the configuration alone.
    pub fn count(config: &ModelConfig) -> usize {
        specs(config).0.iter().map(|s| s.rows * s.cols).sum()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn scalar_count(&self) -> usize {
        self.values.iter().map(|t| t.len()).sum()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<S>> {
        self.names.iter().position(|n| n == name).map(|i| &self.values[i])
    }

    pub fn zero_grads(&mut self) {
        for g in &mut self.grads {
            g.data.iter_mut().for_each(|v| *v = S::zero());
        }
    }

    /// Name of the first tensor holding a NaN or infinity.
    pub fn first_non_finite(&self) -> Option<&str> {
        self.names
            .iter()
            .zip(&self.values)
            .find(|(_, t)| !t.is_finite())
            .map(|(n, _)| n.as_str())
    }

    pub fn check_finite(&self) -> Result<(), ModelError> {
        match self.first_non_finite() {
            Some(name) => Err(ModelError::NonFinite(name.to_string())),
            None => Ok(()),
        }
    }

    pub fn cast<T: Real>(&self) -> DenoiserParams<T> {
        DenoiserParams {
            config: self.config.clone(),
            names: self.names.clone(),
            values: self.values.iter().map(|t| t.cast()).collect(),
            grads: self.grads.iter().map(|t| t.cast()).collect(),
            layout: self.layout.clone(),
        }
    }

    #[cfg(test)]
    pub(crate) fn sq_norm(&self) -> f64 {
        self.values
            .iter()
            .flat_map(|t| t.data.iter())
            .map(|v| Real::to_f64(*v).powi(2))
            .sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn count_depends_on_config_only() {
        let cfg = ModelConfig::default();
        let a = DenoiserParams::<f32>::init(&cfg, 1).unwrap();
        let b = DenoiserParams::<f32>::init(&cfg, 2).unwrap();
        assert_eq!(a.scalar_count(), b.scalar_count());
        assert_eq!(a.scalar_count(), DenoiserParams::<f32>::count(&cfg));
        let small = ModelConfig {
            layers: 1,
            ..cfg.clone()
        };
        assert!(DenoiserParams::<f32>::count(&small) < a.scalar_count());
        assert!(a.sq_norm() > 0.0);
    }

    #[test]
    fn deterministic_init_and_named_round_trip() {
        let cfg = ModelConfig {
            layers: 1,
            feature_dim: 8,
            ray_dim: 8,
            ..ModelConfig::default()
        };
        let a = DenoiserParams::<f32>::init(&cfg, 5).unwrap();
        let b = DenoiserParams::<f32>::init(&cfg, 5).unwrap();
        assert_eq!(a.values, b.values);
        let named = a.names.iter().cloned().zip(a.values.iter().cloned()).collect();
        let c = DenoiserParams::from_named(&cfg, named).unwrap();
        assert_eq!(c.values, a.values);

        let mut named: Vec<_> = a.names.iter().cloned().zip(a.values.iter().cloned()).collect();
        named[0].1 = Tensor::zeros(1, 1);
        assert!(DenoiserParams::from_named(&cfg, named).is_err());
    }

    #[test]
    fn non_finite_is_named() {
        let cfg = ModelConfig {
            layers: 1,
            feature_dim: 8,
            ray_dim: 8,
            ..ModelConfig::default()
        };
        let mut p = DenoiserParams::<f32>::init(&cfg, 5).unwrap();
        assert!(p.check_finite().is_ok());
        p.values[4].data[0] = f32::NAN;
        assert_eq!(p.first_non_finite(), Some("enc.mix2.w"));
    }
}
