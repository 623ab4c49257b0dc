use alloc::vec::Vec;


use super::DiffusionError;

pub const DEFAULT_TIMESTEPS: usize = 100;
const BETA_START: f64 = 1e-4;
const BETA_END: f64 = 0.02;

/// Cumulative signal level `ᾱ_t` for `t = 0..=T`, with `ᾱ_0 = 1` and
/// `ᾱ_T = 0` (zero terminal SNR).
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    alpha_bar: Vec<f64>,
}

impl NoiseSchedule {
    /// Linear betas from 1e-4 to 0.02 over `T` steps, then `sqrt(ᾱ)` is
    /// shifted and rescaled so that it is 1 at `t = 0` and exactly 0 at `T`.
    pub fn new(timesteps: usize) -> Result<Self, DiffusionError> {
        if timesteps < 2 {
            return Err(DiffusionError::InvalidInput("schedule needs T >= 2"));
        }
        let mut sqrt_ab = Vec::with_capacity(timesteps + 1);
        let mut ab = 1.0f64;
        sqrt_ab.push(1.0);
        for t in 1..=timesteps {
            let beta = BETA_START + (BETA_END - BETA_START) * (t - 1) as f64 / (timesteps - 1) as f64;
            ab *= 1.0 - beta;
            sqrt_ab.push(ab.sqrt());
        }
        let first = sqrt_ab[0];
        let last = sqrt_ab[timesteps];
        let alpha_bar = sqrt_ab
            .iter()
            .map(|s| {
                let r = (s - last) / (first - last) * first;
                r * r
            })
            .collect::<Vec<_>>();
        let mut sched = NoiseSchedule { alpha_bar };
        sched.alpha_bar[0] = 1.0;
        sched.alpha_bar[timesteps] = 0.0;
        Ok(sched)
    }

    /// Rebuilds a schedule from stored values, checking its invariants.
    pub fn from_alpha_bar(alpha_bar: Vec<f64>) -> Result<Self, DiffusionError> {
        if alpha_bar.len() < 3 {
            return Err(DiffusionError::InvalidInput("schedule needs T >= 2"));
        }
        if alpha_bar[0] != 1.0 || *alpha_bar.last().unwrap() != 0.0 {
            return Err(DiffusionError::InvalidInput("schedule must run from 1 to 0"));
        }
        if alpha_bar.windows(2).any(|w| !(w[1] < w[0])) {
            return Err(DiffusionError::InvalidInput("schedule must be strictly decreasing"));
        }
        Ok(NoiseSchedule { alpha_bar })
    }

    pub fn timesteps(&self) -> usize {
        self.alpha_bar.len() - 1
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bar[t]
    }

    pub fn values(&self) -> &[f64] {
        &self.alpha_bar
    }
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        NoiseSchedule::new(DEFAULT_TIMESTEPS).expect("default schedule is valid")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn endpoints_are_exact() {
        let s = NoiseSchedule::new(100).unwrap();
        assert_eq!(s.alpha_bar(0), 1.0);
        assert_eq!(s.alpha_bar(100), 0.0);
        assert_eq!(s.timesteps(), 100);
    }

    #[test]
    fn strictly_decreasing() {
        for t in [2, 3, 10, 100, 1000] {
            let s = NoiseSchedule::new(t).unwrap();
            assert!(s.values().windows(2).all(|w| w[1] < w[0]), "T = {t}");
        }
    }

    #[test]
    fn rejects_short_schedules() {
        assert!(NoiseSchedule::new(1).is_err());
        assert!(NoiseSchedule::new(0).is_err());
    }

    #[test]
    fn matches_direct_rescaling() {
        // independent evaluation of the same construction at t = 90
        let mut ab = 1.0f64;
        let mut at90 = 0.0;
        for t in 1..=100 {
            ab *= 1.0 - (1e-4 + (0.02 - 1e-4) * (t - 1) as f64 / 99.0);
            if t == 90 {
                at90 = ab;
            }
        }
        let expect = ((at90.sqrt() - ab.sqrt()) / (1.0 - ab.sqrt())).powi(2);
        let s = NoiseSchedule::new(100).unwrap();
        assert!((s.alpha_bar(90) - expect).abs() < 1e-15);
    }

    #[test]
    fn from_values_round_trip() {
        let s = NoiseSchedule::new(50).unwrap();
        let back = NoiseSchedule::from_alpha_bar(s.values().to_vec()).unwrap();
        assert_eq!(back, s);
        let mut bad = s.values().to_vec();
        bad.swap(3, 4);
        assert!(NoiseSchedule::from_alpha_bar(bad).is_err());
    }
}
