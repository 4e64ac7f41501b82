use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::num::Real;
use crate::traj::{Trajectory, CANONICAL_DT};

use super::DiffusionError;

/// Dense `[batch, anchors, time, coord]` tensor, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct TrajectoryBatch<T: Real = f64> {
    shape: [usize; 4],
    data: Vec<T>,
}

impl<T: Real> TrajectoryBatch<T> {
    pub fn zeros(shape: [usize; 4]) -> Self {
        TrajectoryBatch { shape, data: vec![T::zero(); shape.iter().product()] }
    }

    pub fn from_vec(shape: [usize; 4], data: Vec<T>) -> Result<Self, DiffusionError> {
        if data.len() != shape.iter().product::<usize>() {
            return Err(DiffusionError::ShapeMismatch {
                expected: shape.to_vec(),
                found: vec![data.len()],
            });
        }
        Ok(TrajectoryBatch { shape, data })
    }

    pub fn standard_normal<R: Rng + ?Sized>(shape: [usize; 4], rng: &mut R) -> Self {
        let n = shape.iter().product();
        let data = (0..n).map(|_| T::lit(rng.sample::<f64, _>(StandardNormal))).collect();
        TrajectoryBatch { shape, data }
    }

    pub fn shape(&self) -> [usize; 4] {
        self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    /// Elements in one `[time, coord]` slice.
    pub fn item_len(&self) -> usize {
        self.shape[2] * self.shape[3]
    }

    pub fn items(&self) -> impl Iterator<Item = &[T]> {
        self.data.chunks(self.item_len().max(1))
    }

    pub fn item(&self, b: usize, a: usize) -> &[T] {
        let n = self.item_len();
        let off = (b * self.shape[1] + a) * n;
        &self.data[off..off + n]
    }

    pub fn item_mut(&mut self, b: usize, a: usize) -> &mut [T] {
        let n = self.item_len();
        let off = (b * self.shape[1] + a) * n;
        &mut self.data[off..off + n]
    }

    pub fn check_same_shape(&self, other: &Self) -> Result<(), DiffusionError> {
        if self.shape != other.shape {
            return Err(DiffusionError::ShapeMismatch { expected: self.shape.to_vec(), found: other.shape.to_vec() });
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Anchor trajectories of batch element `b` on the canonical time grid.
    pub fn trajectories(&self, b: usize) -> Vec<Trajectory<T>> {
        (0..self.shape[1])
            .map(|a| {
                let xy: Vec<[T; 2]> = self.item(b, a).chunks(self.shape[3]).map(|p| [p[0], p[1]]).collect();
                Trajectory::from_xy(&xy, T::lit(CANONICAL_DT))
            })
            .collect()
    }

    /// Stacks anchor trajectories into a `[1, n, T, 2]` batch.
    pub fn from_trajectories(trajs: &[Trajectory<T>]) -> Result<Self, DiffusionError> {
        let t = trajs.first().map_or(0, |t| t.len());
        let mut data = Vec::with_capacity(trajs.len() * t * 2);
        for traj in trajs {
            if traj.len() != t {
                return Err(DiffusionError::ShapeMismatch { expected: vec![t], found: vec![traj.len()] });
            }
            for w in &traj.points {
                data.extend([w.x, w.y]);
            }
        }
        Ok(TrajectoryBatch { shape: [1, trajs.len(), t, 2], data })
    }
}
