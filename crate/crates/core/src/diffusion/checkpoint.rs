use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::num::Real;
use crate::scene::{ConditionLayout, ConditionVector};
use crate::traj::Trajectory;

use super::batch::TrajectoryBatch;
use super::denoiser::{Denoiser, DenoiserConfig};
use super::sampler::{sample_ddim, sample_ddpm};
use super::schedule::{NoiseSchedule, ScheduleConfig};
use super::DiffusionError;

pub const CHECKPOINT_VERSION: u32 = 1;

/// Per `(time step, coordinate)` label statistics, flattened like one item.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct Normalization<T: Real = f64> {
    pub mean: Vec<T>,
    pub std: Vec<T>,
}

impl<T: Real> Normalization<T> {
    pub fn is_valid(&self) -> bool {
        self.mean.len() == self.std.len() && self.std.iter().all(|&s| s > T::zero() && s.is_finite())
    }

    pub fn normalize(&self, item: &mut [T]) {
        for (i, v) in item.iter_mut().enumerate() {
            *v = (*v - self.mean[i]) / self.std[i];
        }
    }

    pub fn denormalize(&self, item: &mut [T]) {
        for (i, v) in item.iter_mut().enumerate() {
            *v = *v * self.std[i] + self.mean[i];
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainMetadata {
    pub seed: u64,
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub samples: usize,
    /// Mean training loss per epoch.
    pub loss_curve: Vec<f64>,
    /// Loss on a fixed probe set with frozen noise, per epoch.
    pub probe_curve: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct PlannerCheckpoint<T: Real = f64> {
    pub version: u32,
    pub schedule: ScheduleConfig,
    pub layout: ConditionLayout,
    pub denoiser: DenoiserConfig,
    /// Parameter group names and sizes, in storage order.
    pub layers: Vec<(String, usize)>,
    pub params: Vec<T>,
    pub normalization: Option<Normalization<T>>,
    pub metadata: TrainMetadata,
}

impl<T: Real> PlannerCheckpoint<T> {
    pub fn new(
        schedule: ScheduleConfig,
        layout: ConditionLayout,
        model: Denoiser<T>,
        normalization: Option<Normalization<T>>,
        metadata: TrainMetadata,
    ) -> Self {
        PlannerCheckpoint {
            version: CHECKPOINT_VERSION,
            schedule,
            layout,
            denoiser: model.config,
            layers: model.config.groups(),
            params: model.params,
            normalization,
            metadata,
        }
    }

    pub fn save(&self, path: &Path) -> Result<(), DiffusionError> {
        let json = serde_json::to_string(self).map_err(|e| DiffusionError::Io(e.to_string()))?;
        fs::write(path, json).map_err(|e| DiffusionError::Io(format!("{}: {e}", path.display())))
    }

    pub fn load(path: &Path) -> Result<Self, DiffusionError> {
        let text = fs::read_to_string(path).map_err(|e| DiffusionError::Io(format!("{}: {e}", path.display())))?;
        let ck: Self = serde_json::from_str(&text).map_err(|e| DiffusionError::Io(e.to_string()))?;
        if ck.version != CHECKPOINT_VERSION {
            return Err(DiffusionError::Io(format!("unsupported checkpoint version {}", ck.version)));
        }
        if ck.layers != ck.denoiser.groups() {
            return Err(DiffusionError::Io("layer table does not match denoiser config".into()));
        }
        Ok(ck)
    }

    pub fn planner(&self) -> Result<Planner<T>, DiffusionError> {
        let norm = self.normalization.clone().ok_or(DiffusionError::UntrainedCheckpoint)?;
        let item = self.denoiser.horizon * self.denoiser.coords;
        if !norm.is_valid() || norm.mean.len() != item {
            return Err(DiffusionError::UntrainedCheckpoint);
        }
        if self.layout.len() != self.denoiser.cond_dim {
            return Err(DiffusionError::ShapeMismatch { expected: vec![self.denoiser.cond_dim], found: vec![self.layout.len()] });
        }
        Ok(Planner {
            model: Denoiser::from_params(self.denoiser, self.params.clone())?,
            schedule: NoiseSchedule::new(&self.schedule)?,
            layout: self.layout,
            scales: self.layout.input_scales(),
            norm,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SamplerConfig {
    Ddpm,
    Ddim { steps: usize },
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig::Ddim { steps: 10 }
    }
}

/// Ready-to-sample view of a trained checkpoint. Works in metres, ego frame.
#[derive(Debug, Clone)]
pub struct Planner<T: Real = f64> {
    pub model: Denoiser<T>,
    pub schedule: NoiseSchedule<T>,
    pub layout: ConditionLayout,
    pub norm: Normalization<T>,
    scales: Vec<T>,
}

impl<T: Real> Planner<T> {
    pub fn scale_condition(&self, cond: &ConditionVector<T>) -> Result<Vec<T>, DiffusionError> {
        if cond.len() != self.scales.len() {
            return Err(DiffusionError::ShapeMismatch { expected: vec![self.scales.len()], found: vec![cond.len()] });
        }
        Ok(cond.0.iter().zip(&self.scales).map(|(&c, &s)| c * s).collect())
    }

    fn item(&self) -> [usize; 2] {
        [self.model.config.horizon, self.model.config.coords]
    }

    fn denormalize(&self, mut batch: TrajectoryBatch<T>) -> TrajectoryBatch<T> {
        let [b, a, _, _] = batch.shape();
        for bi in 0..b {
            for ai in 0..a {
                self.norm.denormalize(batch.item_mut(bi, ai));
            }
        }
        batch
    }

    pub fn sample_ddpm(&self, cond: &ConditionVector<T>, n_anchors: usize, seed: u64) -> Result<TrajectoryBatch<T>, DiffusionError> {
        let c = self.scale_condition(cond)?;
        let raw = sample_ddpm(&self.model, &c, n_anchors, self.item(), &self.schedule, seed)?;
        Ok(self.denormalize(raw))
    }

    pub fn sample_ddim(
        &self,
        cond: &ConditionVector<T>,
        n_anchors: usize,
        n_steps: usize,
        seed: u64,
    ) -> Result<TrajectoryBatch<T>, DiffusionError> {
        let c = self.scale_condition(cond)?;
        let raw = sample_ddim(&self.model, &c, n_anchors, self.item(), &self.schedule, n_steps, seed)?;
        Ok(self.denormalize(raw))
    }

    pub fn sample(
        &self,
        cond: &ConditionVector<T>,
        n_anchors: usize,
        sampler: SamplerConfig,
        seed: u64,
    ) -> Result<TrajectoryBatch<T>, DiffusionError> {
        match sampler {
            SamplerConfig::Ddpm => self.sample_ddpm(cond, n_anchors, seed),
            SamplerConfig::Ddim { steps } => self.sample_ddim(cond, n_anchors, steps, seed),
        }
    }

    /// Candidate trajectories in the ego frame on the canonical time grid.
    pub fn candidates(
        &self,
        cond: &ConditionVector<T>,
        n_anchors: usize,
        sampler: SamplerConfig,
        seed: u64,
    ) -> Result<Vec<Trajectory<T>>, DiffusionError> {
        Ok(self.sample(cond, n_anchors, sampler, seed)?.trajectories(0))
    }
}

/// Flattens a canonical trajectory into one `[T, 2]` item.
pub(crate) fn flatten_label<T: Real>(traj: &Trajectory<T>) -> Vec<T> {
    traj.points.iter().flat_map(|w| [w.x, w.y]).collect()
}
