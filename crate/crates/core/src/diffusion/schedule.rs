use serde::{Deserialize, Serialize};

use crate::num::Real;

use super::DiffusionError;

/// Linear beta schedule. The endpoints are specified for `reference_steps`
/// steps and rescaled by `reference_steps / steps`, so shorter chains still
/// reach (almost) pure noise. Rescaled betas are capped at `MAX_BETA`.
pub const MAX_BETA: f64 = 0.999;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleConfig {
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub reference_steps: usize,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        ScheduleConfig { steps: 100, beta_start: 1e-4, beta_end: 0.02, reference_steps: 1000 }
    }
}

impl ScheduleConfig {
    pub fn with_steps(steps: usize) -> Self {
        ScheduleConfig { steps, ..Default::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct NoiseSchedule<T: Real = f64> {
    pub betas: Vec<T>,
    pub alphas: Vec<T>,
    pub alpha_bars: Vec<T>,
}

impl<T: Real> NoiseSchedule<T> {
    pub fn new(config: &ScheduleConfig) -> Result<Self, DiffusionError> {
        let k = config.steps;
        if k == 0 {
            return Err(DiffusionError::InvalidSchedule("zero steps".into()));
        }
        let scale = config.reference_steps.max(1) as f64 / k as f64;
        let (b0, b1) = ((config.beta_start * scale).min(MAX_BETA), (config.beta_end * scale).min(MAX_BETA));
        let betas: Vec<f64> = (0..k)
            .map(|i| if k == 1 { b0 } else { b0 + (b1 - b0) * i as f64 / (k - 1) as f64 })
            .collect();
        Self::from_betas(betas.into_iter().map(T::lit).collect())
    }

    pub fn from_betas(betas: Vec<T>) -> Result<Self, DiffusionError> {
        if betas.is_empty() {
            return Err(DiffusionError::InvalidSchedule("empty".into()));
        }
        for (i, &b) in betas.iter().enumerate() {
            if !(b > T::zero() && b < T::one()) {
                return Err(DiffusionError::InvalidSchedule(format!("beta[{i}] = {b} outside (0, 1)")));
            }
            if i > 0 && b < betas[i - 1] {
                return Err(DiffusionError::InvalidSchedule("betas must be non-decreasing".into()));
            }
        }
        let alphas: Vec<T> = betas.iter().map(|&b| T::one() - b).collect();
        let mut alpha_bars = Vec::with_capacity(alphas.len());
        let mut acc = T::one();
        for &a in &alphas {
            acc = acc * a;
            alpha_bars.push(acc);
        }
        Ok(NoiseSchedule { betas, alphas, alpha_bars })
    }

    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    pub fn check_step(&self, k: usize) -> Result<(), DiffusionError> {
        if k >= self.steps() {
            return Err(DiffusionError::StepOutOfRange { k, steps: self.steps() });
        }
        Ok(())
    }

    /// `alpha_bar` before step `k`; `1` for `k = 0`.
    pub fn alpha_bar_prev(&self, k: usize) -> T {
        if k == 0 {
            T::one()
        } else {
            self.alpha_bars[k - 1]
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_schedule_invariants() {
        let s: NoiseSchedule<f64> = NoiseSchedule::new(&ScheduleConfig::default()).unwrap();
        assert_eq!(s.steps(), 100);
        assert!((s.betas[0] - 1e-3).abs() < 1e-15 && (s.betas[99] - 0.2).abs() < 1e-12);
        assert!(s.betas.windows(2).all(|w| w[0] <= w[1]));
        assert!(s.alpha_bars.windows(2).all(|w| w[1] < w[0]));
        assert!(s.alpha_bars[99] < 0.05);
    }

    #[test]
    fn rejects_bad_betas() {
        assert!(NoiseSchedule::<f64>::from_betas(vec![0.1, 0.05]).is_err());
        assert!(NoiseSchedule::<f64>::from_betas(vec![0.0]).is_err());
        assert!(NoiseSchedule::<f64>::from_betas(vec![1.0]).is_err());
        assert!(NoiseSchedule::<f64>::new(&ScheduleConfig::with_steps(0)).is_err());
    }

    #[test]
    fn short_chains_are_capped() {
        let s: NoiseSchedule<f64> = NoiseSchedule::new(&ScheduleConfig::with_steps(10)).unwrap();
        assert_eq!(s.betas[9], MAX_BETA);
        assert!(s.alpha_bars[9] < 0.05);
    }
}
