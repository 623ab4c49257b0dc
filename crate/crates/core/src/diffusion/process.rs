use alloc::vec::Vec;

use super::{DiffusionError, NoiseSchedule};
use crate::nn::Tensor;
use crate::Real;

/// Origin xyzw followed by endpoint xyzw.
pub const CHANNELS: usize = 8;

/// Stacked raymaps of `views` views at a common `rows x cols` grid, with the
/// diffusion timestep they are at and the per-cell validity mask.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionState<S> {
    pub views: usize,
    pub rows: usize,
    pub cols: usize,
    /// `views * rows * cols * 8` values, cell-major.
    pub data: Vec<S>,
    pub t: usize,
    pub mask: Vec<bool>,
}

impl<S: Real> DiffusionState<S> {
    pub fn new(
        views: usize,
        rows: usize,
        cols: usize,
        data: Vec<S>,
        mask: Vec<bool>,
    ) -> Result<Self, DiffusionError> {
        let cells = views * rows * cols;
        if data.len() != cells * CHANNELS || mask.len() != cells {
            return Err(DiffusionError::InvalidInput("state shape mismatch"));
        }
        Ok(DiffusionState {
            views,
            rows,
            cols,
            data,
            t: 0,
            mask,
        })
    }

    pub fn cells(&self) -> usize {
        self.views * self.rows * self.cols
    }

    /// The state as a `cells x 8` tensor.
    pub fn as_tensor(&self) -> Tensor<S> {
        Tensor::from_vec(self.cells(), CHANNELS, self.data.clone())
    }
}

/// `S_t = sqrt(ᾱ_t) S_0 + sqrt(1 - ᾱ_t) ε`.
pub fn forward_diffuse<S: Real>(
    s0: &DiffusionState<S>,
    t: usize,
    eps: &[S],
    sched: &NoiseSchedule,
) -> Result<DiffusionState<S>, DiffusionError> {
    if eps.len() != s0.data.len() {
        return Err(DiffusionError::InvalidInput("noise shape does not match state"));
    }
    if t > sched.timesteps() {
        return Err(DiffusionError::InvalidInput("timestep beyond schedule"));
    }
    let ab = sched.alpha_bar(t);
    let a = S::from_f64(ab.sqrt());
    let b = S::from_f64((1.0 - ab).sqrt());
    let data = s0
        .data
        .iter()
        .zip(eps)
        .map(|(x, e)| a * *x + b * *e)
        .collect();
    Ok(DiffusionState {
        data,
        t,
        ..s0.clone()
    })
}

/// `(M · S_t) ⊕ M`: masked channels followed by the mask as a ninth channel.
pub fn mask_condition<S: Real>(st: &DiffusionState<S>) -> Tensor<S> {
    let cells = st.cells();
    let mut out = Vec::with_capacity(cells * (CHANNELS + 1));
    for (cell, &m) in st.data.chunks_exact(CHANNELS).zip(&st.mask) {
        if m {
            out.extend_from_slice(cell);
            out.push(S::one());
        } else {
            out.extend(core::iter::repeat_n(S::zero(), CHANNELS + 1));
        }
    }
    Tensor::from_vec(cells, CHANNELS + 1, out)
}

/// Result of [`x0_loss`]; `empty` flags a batch without any valid cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossValue<S> {
    pub value: S,
    pub empty: bool,
}

/// Mean squared error over all channels of the valid cells of `s0`.
pub fn x0_loss<S: Real>(pred: &[S], s0: &DiffusionState<S>) -> Result<LossValue<S>, DiffusionError> {
    if pred.len() != s0.data.len() {
        return Err(DiffusionError::InvalidInput("prediction shape does not match state"));
    }
    let mut sum = S::zero();
    let mut count = 0usize;
    for ((p, t), &m) in pred
        .chunks_exact(CHANNELS)
        .zip(s0.data.chunks_exact(CHANNELS))
        .zip(&s0.mask)
    {
        if m {
            for (a, b) in p.iter().zip(t) {
                sum += (*a - *b) * (*a - *b);
            }
            count += CHANNELS;
        }
    }
    if count == 0 {
        return Ok(LossValue {
            value: S::zero(),
            empty: true,
        });
    }
    Ok(LossValue {
        value: sum / S::from_f64(count as f64),
        empty: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Tape;
    use alloc::vec;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn state(cells: usize, fill: f64, mask: Vec<bool>) -> DiffusionState<f64> {
        DiffusionState::new(1, 1, cells, vec![fill; cells * 8], mask).unwrap()
    }

    #[test]
    fn t_zero_and_terminal() {
        let sched = NoiseSchedule::new(100).unwrap();
        let s0 = state(3, 0.7, vec![true; 3]);
        let eps: Vec<f64> = (0..24).map(|i| i as f64 * 0.1 - 1.0).collect();
        assert_eq!(forward_diffuse(&s0, 0, &eps, &sched).unwrap().data, s0.data);
        let st = forward_diffuse(&s0, 100, &eps, &sched).unwrap();
        assert_eq!(st.data, eps);
        assert_eq!(st.t, 100);
        assert_eq!(st.mask, s0.mask);
    }

    #[test]
    fn quarter_signal_level() {
        let sched = NoiseSchedule::from_alpha_bar(vec![1.0, 0.25, 0.0]).unwrap();
        let s0 = state(2, 1.0, vec![true; 2]);
        let st = forward_diffuse(&s0, 1, &vec![2.0; 16], &sched).unwrap();
        let expect = 0.5 + 0.75f64.sqrt() * 2.0;
        assert!(st.data.iter().all(|v| (v - expect).abs() < 1e-15));
    }

    #[test]
    fn noise_shape_checked() {
        let sched = NoiseSchedule::default();
        let s0 = state(2, 1.0, vec![true; 2]);
        assert!(forward_diffuse(&s0, 5, &[0.0; 3], &sched).is_err());
    }

    #[test]
    fn mask_condition_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let data: Vec<f64> = (0..16 * 8).map(|_| rng.random_range(-2.0..2.0)).collect();
        let ones = DiffusionState::new(1, 4, 4, data.clone(), vec![true; 16]).unwrap();
        let c = mask_condition(&ones);
        for r in 0..16 {
            assert_eq!(&c.row(r)[..8], &data[r * 8..r * 8 + 8]);
            assert_eq!(c.row(r)[8], 1.0);
        }
        let zeros = DiffusionState::new(1, 4, 4, data.clone(), vec![false; 16]).unwrap();
        assert!(mask_condition(&zeros).data.iter().all(|v| *v == 0.0));

        let checker: Vec<bool> = (0..16).map(|i| (i / 4 + i % 4) % 2 == 0).collect();
        let st = DiffusionState::new(1, 4, 4, data.clone(), checker.clone()).unwrap();
        let c = mask_condition(&st);
        for r in 0..16 {
            if checker[r] {
                assert_eq!(&c.row(r)[..8], &data[r * 8..r * 8 + 8]);
                assert_eq!(c.row(r)[8], 1.0);
            } else {
                assert!(c.row(r).iter().all(|v| *v == 0.0));
            }
        }
    }

    #[test]
    fn loss_cases() {
        let s0 = state(4, 0.3, vec![true; 4]);
        assert_eq!(x0_loss(&s0.data, &s0).unwrap().value, 0.0);
        let plus: Vec<f64> = s0.data.iter().map(|v| v + 1.0).collect();
        assert!((x0_loss(&plus, &s0).unwrap().value - 1.0).abs() < 1e-15);

        let partial = state(4, 0.3, vec![true, false, true, false]);
        let base = x0_loss(&plus, &partial).unwrap().value;
        let mut perturbed = plus.clone();
        for v in &mut perturbed[8..16] {
            *v = 1e9;
        }
        assert_eq!(x0_loss(&perturbed, &partial).unwrap().value.to_bits(), base.to_bits());

        let empty = state(2, 0.3, vec![false; 2]);
        let l = x0_loss(&[5.0; 16], &empty).unwrap();
        assert!(l.empty && l.value == 0.0);
    }

    #[test]
    fn loss_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let cells = 6;
        let mask = vec![true, false, true, true, false, true];
        let s0 = DiffusionState::new(1, 2, 3, (0..cells * 8).map(|_| rng.random_range(-1.0..1.0)).collect(), mask.clone()).unwrap();
        let pred: Vec<f64> = (0..cells * 8).map(|_| rng.random_range(-1.0..1.0)).collect();

        let mut tape = Tape::<f64>::new();
        let p = tape.input(Tensor::from_vec(cells, 8, pred.clone()));
        let l = tape.masked_mse(p, &s0.as_tensor(), &mask);
        assert!((tape.value(l).data[0] - x0_loss(&pred, &s0).unwrap().value).abs() < 1e-15);
        let g = tape.backward(l);
        let grad = &g.get(p).unwrap().data;

        let valid = mask.iter().filter(|m| **m).count() * 8;
        let h = 1e-6;
        for i in 0..pred.len() {
            let closed = if mask[i / 8] { 2.0 * (pred[i] - s0.data[i]) / valid as f64 } else { 0.0 };
            assert!((grad[i] - closed).abs() < 1e-15);
            let mut a = pred.clone();
            a[i] += h;
            let mut b = pred.clone();
            b[i] -= h;
            let fd = (x0_loss(&a, &s0).unwrap().value - x0_loss(&b, &s0).unwrap().value) / (2.0 * h);
            if closed == 0.0 {
                assert_eq!(fd, 0.0);
            } else {
                assert!(((fd - closed) / closed).abs() < 1e-6, "entry {i}: {fd} vs {closed}");
            }
        }
    }
}
