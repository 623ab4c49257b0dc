use alloc::format;
use alloc::vec;
use alloc::vec::Vec;


use super::params::Layout;
use super::{DenoiserParams, ModelConfig, ModelError};
use crate::diffusion::CHANNELS;
use crate::nn::{Tape, Tensor, Var};
use crate::Real;

const MAX_PERIOD: f64 = 10_000.0;
/// Timesteps are rescaled to this range before the sinusoidal embedding so
/// the frequencies do not depend on the schedule length.
const TIME_RANGE: f64 = 1000.0;

/// Tape handles of every parameter, indexed like [`DenoiserParams::values`].
#[derive(Debug, Clone)]
pub struct ParamVars(pub Vec<Var>);

impl ParamVars {
    pub fn register<S: Real>(tape: &mut Tape<S>, params: &DenoiserParams<S>) -> Self {
        ParamVars(
            params
                .values
                .iter()
                .enumerate()
                .map(|(i, t)| tape.param(i, t))
                .collect(),
        )
    }

    fn at(&self, i: usize) -> Var {
        self.0[i]
    }
}

/// Sinusoids of `pos` at `dim / 2` geometric frequencies: sines then cosines.
fn sinusoid(pos: f64, dim: usize, out: &mut Vec<f64>) {
    let half = dim / 2;
    let freq = |k: usize| MAX_PERIOD.powf(-(k as f64) / half as f64);
    out.extend((0..half).map(|k| (pos * freq(k)).sin()));
    out.extend((0..half).map(|k| (pos * freq(k)).cos()));
}

// Longest period of the view-index encoding.
const VIEW_PERIOD: f64 = 16.0;

/// Sines then cosines of `pos` at `dim / 2` periods spaced geometrically
/// from `max_period` down to 2.
fn period_ladder(pos: f64, dim: usize, max_period: f64, out: &mut Vec<f64>) {
    let half = dim / 2;
    let period = |k: usize| {
        if half < 2 {
            max_period
        } else {
            max_period * (2.0 / max_period).powf(k as f64 / (half - 1) as f64)
        }
    };
    let tau = 2.0 * core::f64::consts::PI;
    out.extend((0..half).map(|k| (tau * pos / period(k)).sin()));
    out.extend((0..half).map(|k| (tau * pos / period(k)).cos()));
}

/// Parameter-free token encoding: the first `dim / 2` entries encode the
/// view index, the rest the row-major cell index `i * cols + j`.
///
/// Cell periods run from `rows * cols` down to 2, so for power-of-two
/// grids the column phase `j / cols` appears on its own.
pub fn positional_encoding(view: usize, cell: (usize, usize), grid: (usize, usize), dim: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(dim);
    period_ladder(view as f64, dim / 2, VIEW_PERIOD, &mut out);
    let cells = ((grid.0 * grid.1) as f64).max(2.0);
    period_ladder((cell.0 * grid.1 + cell.1) as f64, dim / 2, cells, &mut out);
    out
}

/// Sinusoidal embedding of timestep `t` of a `timesteps`-step schedule.
pub fn timestep_embedding(t: f64, timesteps: usize, dim: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(dim);
    sinusoid(t * TIME_RANGE / timesteps as f64, dim, &mut out);
    out
}

fn check_images<S: Real>(cfg: &ModelConfig, images: &[S], views: usize) -> Result<(), ModelError> {
    if views == 0 {
        return Err(ModelError::InvalidInput("at least one view is required"));
    }
    if images.len() != views * cfg.image_len() {
        return Err(ModelError::InvalidInput("image buffer does not match view count"));
    }
    Ok(())
}

/// Rearranges `views` row-major `size x size x 3` images into one row per
/// grid cell holding that cell's patch pixels.
fn patchify<S: Real>(cfg: &ModelConfig, images: &[S], views: usize) -> Tensor<S> {
    let p = cfg.patch_rows();
    let size = cfg.image_size;
    let width = p * p * 3;
    let mut data = Vec::with_capacity(views * cfg.cells_per_view() * width);
    for img in images.chunks_exact(cfg.image_len()).take(views) {
        for i in 0..cfg.grid_rows {
            for j in 0..cfg.grid_cols {
                for a in 0..p {
                    let start = ((i * p + a) * size + j * p) * 3;
                    data.extend_from_slice(&img[start..start + p * 3]);
                }
            }
        }
    }
    Tensor::from_vec(views * cfg.cells_per_view(), width, data)
}

/// Records the patch encoder on `tape`; the result is `views * cells x c1`.
pub fn encode_images_tensor<S: Real>(
    tape: &mut Tape<S>,
    pv: &ParamVars,
    params: &DenoiserParams<S>,
    images: &[S],
    views: usize,
) -> Result<Var, ModelError> {
    let cfg = &params.config;
    check_images(cfg, images, views)?;
    let l = &params.layout;
    let patches = tape.constant(patchify(cfg, images, views));
    let e0 = tape.linear(patches, pv.at(l.patch_w), pv.at(l.patch_b));
    let m1 = tape.linear(e0, pv.at(l.mix1_w), pv.at(l.mix1_b));
    let m1 = tape.gelu(m1);
    let h1 = tape.add(e0, m1);
    let m2 = tape.linear(h1, pv.at(l.mix2_w), pv.at(l.mix2_b));
    let m2 = tape.gelu(m2);
    Ok(tape.add(h1, m2))
}

/// Patch features of `views` images, `views * cells x c1`.
pub fn encode_images<S: Real>(
    params: &DenoiserParams<S>,
    images: &[S],
    views: usize,
) -> Result<Tensor<S>, ModelError> {
    let mut tape = Tape::new();
    let pv = ParamVars::register(&mut tape, params);
    let out = encode_images_tensor(&mut tape, &pv, params, images, views)?;
    Ok(tape.value(out).clone())
}

/// Per-cell affine embedding of mask-conditioned rays, `cells x c2`.
pub fn embed_rays<S: Real>(params: &DenoiserParams<S>, conditioned: &Tensor<S>) -> Result<Tensor<S>, ModelError> {
    if conditioned.cols != CHANNELS + 1 {
        return Err(ModelError::InvalidInput("conditioned rays must have 9 channels"));
    }
    let l = &params.layout;
    let mut tape = Tape::new();
    let x = tape.constant(conditioned.clone());
    let w = tape.constant(params.values[l.ray_w].clone());
    let b = tape.constant(params.values[l.ray_b].clone());
    let y = tape.linear(x, w, b);
    Ok(tape.value(y).clone())
}

fn check_finite<S: Real>(tape: &Tape<S>, v: Var, what: &str) -> Result<(), ModelError> {
    if tape.value(v).is_finite() {
        Ok(())
    } else {
        Err(ModelError::NonFinite(what.into()))
    }
}

fn token_encodings<S: Real>(cfg: &ModelConfig, view_ids: &[usize]) -> Tensor<S> {
    let d = cfg.model_dim();
    let mut data = Vec::with_capacity(view_ids.len() * cfg.cells_per_view() * d);
    for &n in view_ids {
        for i in 0..cfg.grid_rows {
            for j in 0..cfg.grid_cols {
                data.extend(positional_encoding(n, (i, j), (cfg.grid_rows, cfg.grid_cols), d).into_iter().map(S::from_f64));
            }
        }
    }
    Tensor::from_vec(view_ids.len() * cfg.cells_per_view(), d, data)
}

/// Records the full denoiser on `tape`. `view_ids[n]` is the index used in
/// the positional encoding of the `n`-th view; the output is
/// `views * cells x 8`.
pub fn denoise_forward<S: Real>(
    tape: &mut Tape<S>,
    pv: &ParamVars,
    params: &DenoiserParams<S>,
    images: &[S],
    conditioned: &Tensor<S>,
    t: f64,
    view_ids: &[usize],
) -> Result<Var, ModelError> {
    let cfg = &params.config;
    let views = view_ids.len();
    let cells = views * cfg.cells_per_view();
    let d = cfg.model_dim();
    if conditioned.shape() != (cells, CHANNELS + 1) {
        return Err(ModelError::InvalidInput("conditioned rays do not match views and grid"));
    }
    if !conditioned.is_finite() {
        return Err(ModelError::InvalidInput("conditioned rays are not finite"));
    }
    let l: &Layout = &params.layout;

    let feats = encode_images_tensor(tape, pv, params, images, views)?;
    let rays = tape.constant(conditioned.clone());
    let rays = tape.linear(rays, pv.at(l.ray_w), pv.at(l.ray_b));
    let tokens = tape.concat_cols(rays, feats);
    let pe = tape.constant(token_encodings(cfg, view_ids));
    let mut x = tape.add(tokens, pe);
    check_finite(tape, x, "token embeddings")?;

    let temb = timestep_embedding(t, cfg.timesteps, d);
    let temb = tape.constant(Tensor::from_vec(1, d, temb.into_iter().map(S::from_f64).collect()));
    let c = tape.linear(temb, pv.at(l.time_w1), pv.at(l.time_b1));
    let c = tape.silu(c);
    let c = tape.linear(c, pv.at(l.time_w2), pv.at(l.time_b2));
    let cond = tape.silu(c);

    for (k, b) in l.blocks.iter().enumerate() {
        let ada = tape.linear(cond, pv.at(b.ada_w), pv.at(b.ada_b));
        let shift1 = tape.slice_cols(ada, 0, d);
        let scale1 = tape.slice_cols(ada, d, d);
        let shift2 = tape.slice_cols(ada, 2 * d, d);
        let scale2 = tape.slice_cols(ada, 3 * d, d);

        let h = tape.layer_norm(x);
        let h = tape.modulate(h, shift1, scale1);
        let qkv = tape.linear(h, pv.at(b.qkv_w), pv.at(b.qkv_b));
        let a = tape.attention(qkv, cfg.heads);
        let a = tape.linear(a, pv.at(b.proj_w), pv.at(b.proj_b));
        x = tape.add(x, a);

        let h = tape.layer_norm(x);
        let h = tape.modulate(h, shift2, scale2);
        let h = tape.linear(h, pv.at(b.mlp1_w), pv.at(b.mlp1_b));
        let h = tape.gelu(h);
        let h = tape.linear(h, pv.at(b.mlp2_w), pv.at(b.mlp2_b));
        x = tape.add(x, h);
        check_finite(tape, x, &format!("blocks.{k} activations"))?;
    }

    let ada = tape.linear(cond, pv.at(l.head_ada_w), pv.at(l.head_ada_b));
    let shift = tape.slice_cols(ada, 0, d);
    let scale = tape.slice_cols(ada, d, d);
    let h = tape.layer_norm(x);
    let h = tape.modulate(h, shift, scale);
    let out = tape.linear(h, pv.at(l.head_w), pv.at(l.head_b));
    check_finite(tape, out, "head output")?;
    Ok(out)
}

/// Predicted clean rays, `views * cells x 8`, without recording gradients
/// beyond this call.
pub fn denoise<S: Real>(
    params: &DenoiserParams<S>,
    images: &[S],
    conditioned: &Tensor<S>,
    t: f64,
    view_ids: &[usize],
) -> Result<Tensor<S>, ModelError> {
    let mut tape = Tape::new();
    let pv = ParamVars::register(&mut tape, params);
    let out = denoise_forward(&mut tape, &pv, params, images, conditioned, t, view_ids)?;
    Ok(tape.value(out).clone())
}

/// Identity view ids `0..views`.
pub(crate) fn default_view_ids(views: usize) -> Vec<usize> {
    (0..views).collect()
}

#[allow(dead_code)]
pub(crate) fn zero_images<S: Real>(cfg: &ModelConfig, views: usize) -> Vec<S> {
    vec![S::zero(); views * cfg.image_len()]
}
