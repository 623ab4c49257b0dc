use serde::{Deserialize, Serialize};

use super::ModelError;

/// Architecture of the denoiser. The parameter count is a function of these
/// fields alone.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub grid_rows: usize,
    pub grid_cols: usize,
    /// Square RGB input images of this side length.
    pub image_size: usize,
    /// Image feature width.
    pub feature_dim: usize,
    /// Ray embedding width.
    pub ray_dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub mlp_ratio: usize,
    /// Diffusion steps `T` the model is conditioned on.
    pub timesteps: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            grid_rows: 16,
            grid_cols: 16,
            image_size: 32,
            feature_dim: 64,
            ray_dim: 64,
            layers: 4,
            heads: 4,
            mlp_ratio: 4,
            timesteps: 100,
        }
    }
}

impl ModelConfig {
    pub fn model_dim(&self) -> usize {
        self.feature_dim + self.ray_dim
    }

    pub fn patch_rows(&self) -> usize {
        self.image_size / self.grid_rows
    }

    pub fn patch_cols(&self) -> usize {
        self.image_size / self.grid_cols
    }

    pub fn cells_per_view(&self) -> usize {
        self.grid_rows * self.grid_cols
    }

    /// Pixels per grid cell along each axis, used to place cell centers.
    pub fn cell_stride(&self) -> f64 {
        self.patch_cols() as f64
    }

    pub fn image_len(&self) -> usize {
        self.image_size * self.image_size * 3
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.grid_rows == 0 || self.grid_cols == 0 {
            return Err(ModelError::InvalidConfig("grid must be non-empty"));
        }
        if self.image_size % self.grid_rows != 0 || self.image_size % self.grid_cols != 0 {
            return Err(ModelError::InvalidConfig("patch size must divide image size"));
        }
        if self.patch_rows() != self.patch_cols() {
            return Err(ModelError::InvalidConfig("patches must be square"));
        }
        if self.feature_dim == 0 || self.ray_dim == 0 || self.layers == 0 || self.mlp_ratio == 0 {
            return Err(ModelError::InvalidConfig("dimensions must be positive"));
        }
        let d = self.model_dim();
        if self.heads == 0 || d % self.heads != 0 {
            return Err(ModelError::InvalidConfig("heads must divide the model width"));
        }
        if d % 4 != 0 {
            return Err(ModelError::InvalidConfig("model width must be a multiple of 4"));
        }
        if self.timesteps < 2 {
            return Err(ModelError::InvalidConfig("timesteps must be at least 2"));
        }
        Ok(())
    }
}

/// Optimization settings plus the architecture being trained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub batch_size: usize,
    pub iterations: u64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            model: ModelConfig::default(),
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            batch_size: 8,
            iterations: 10_000,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        self.model.validate()?;
        if !(self.learning_rate > 0.0) || self.batch_size == 0 {
            return Err(ModelError::InvalidConfig("learning rate and batch size must be positive"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(ModelError::InvalidConfig("Adam betas must be in [0, 1)"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_is_valid() {
        let c = ModelConfig::default();
        c.validate().unwrap();
        assert_eq!(c.patch_rows(), 2);
        assert_eq!(c.model_dim(), 128);
        TrainConfig::default().validate().unwrap();
    }

    #[test]
    fn rejects_bad_patch_geometry() {
        let c = ModelConfig {
            grid_rows: 5,
            ..ModelConfig::default()
        };
        assert!(c.validate().is_err());
        let c = ModelConfig {
            heads: 3,
            ..ModelConfig::default()
        };
        assert!(c.validate().is_err());
    }
}
