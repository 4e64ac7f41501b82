//! Comfort index between a predicted and a reference trajectory.
//!
//! For each horizon `T_k` in {1, 2, 3} s the weighted absolute differences of
//! `(a_t, a_n, phi_rate, j_t, j_n, kappa_rate)` are integrated over `[0, T_k]`
//! with the trapezoidal rule on the sample grid. The total index sums the three
//! horizons and is mapped to a percentage by `100 * exp(-alpha * C)`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::num::Real;
use crate::traj::{derive_kinematics, EgoStatus, KinematicProfile, TrajError, Trajectory, DEFAULT_WHEELBASE};

pub const COMFORT_HORIZONS: [f64; 3] = [1.0, 2.0, 3.0];
pub const DEFAULT_ALPHA: f64 = 0.05;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ComfortError {
    #[error("segment {0} has non-positive duration")]
    NonPositiveDuration(usize),
    #[error("predicted and reference trajectories do not share a time grid")]
    HorizonMismatch,
    #[error("trajectory is not on the canonical 6-point / 0.5 s grid")]
    NonCanonicalTrajectory,
    #[error(transparent)]
    Trajectory(#[from] TrajError),
}

/// Weights for `|d a_t|, |d a_n|, |d phi_rate|, |d j_t|, |d j_n|, |d kappa_rate|`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
#[serde(transparent)]
pub struct ComfortWeights<T: Real = f64>(pub [T; 6]);

impl<T: Real> Default for ComfortWeights<T> {
    fn default() -> Self {
        ComfortWeights([T::one(); 6])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct HorizonComfort<T: Real = f64> {
    pub horizon: T,
    pub c: T,
    pub c_n: T,
    pub c_p: T,
}

impl<T: Real> HorizonComfort<T> {
    pub fn new(horizon: T, c: T, alpha: T) -> Self {
        let c_n = normalized_index(c, alpha);
        HorizonComfort { horizon, c, c_n, c_p: T::lit(100.0) * c_n }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct ComfortReport<T: Real = f64> {
    pub alpha: T,
    pub horizons: Vec<HorizonComfort<T>>,
    /// `horizon` holds the summed duration of the considered horizons.
    pub total: HorizonComfort<T>,
}

impl<T: Real> ComfortReport<T> {
    /// Rebuilds a report from per-horizon raw indices.
    pub fn from_indices(horizons: &[T], indices: &[T], alpha: T) -> Self {
        let per: Vec<HorizonComfort<T>> =
            horizons.iter().zip(indices).map(|(&h, &c)| HorizonComfort::new(h, c, alpha)).collect();
        let c_total = indices.iter().copied().sum();
        let span = horizons.iter().copied().sum();
        ComfortReport { alpha, horizons: per, total: HorizonComfort::new(span, c_total, alpha) }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("horizon,C,C_n,C_p\n");
        for h in &self.horizons {
            out.push_str(&format!("{},{},{},{}\n", h.horizon, h.c, h.c_n, h.c_p));
        }
        out.push_str(&format!("total,{},{},{}\n", self.total.c, self.total.c_n, self.total.c_p));
        out
    }
}

pub fn normalized_index<T: Real>(c: T, alpha: T) -> T {
    (-alpha * c).exp()
}

pub fn comfort_percentage<T: Real>(c: T, alpha: T) -> T {
    T::lit(100.0) * normalized_index(c, alpha)
}

/// Segment start times (prefix sums starting at 0) and the total duration.
pub fn segment_timeline<T: Real>(durations: &[T]) -> Result<(Vec<T>, T), ComfortError> {
    let mut starts = Vec::with_capacity(durations.len());
    let mut acc = T::zero();
    for (i, &d) in durations.iter().enumerate() {
        if !(d > T::zero()) {
            return Err(ComfortError::NonPositiveDuration(i));
        }
        starts.push(acc);
        acc = acc + d;
    }
    Ok((starts, acc))
}

/// Weighted absolute channel differences at every sample.
fn deviation_integrand<T: Real>(
    pred: &KinematicProfile<T>,
    truth: &KinematicProfile<T>,
    w: &ComfortWeights<T>,
) -> Vec<T> {
    (0..pred.len())
        .map(|i| {
            w.0[0] * (pred.a_t[i] - truth.a_t[i]).abs()
                + w.0[1] * (pred.a_n[i] - truth.a_n[i]).abs()
                + w.0[2] * (pred.phi_rate[i] - truth.phi_rate[i]).abs()
                + w.0[3] * (pred.j_t[i] - truth.j_t[i]).abs()
                + w.0[4] * (pred.j_n[i] - truth.j_n[i]).abs()
                + w.0[5] * (pred.kappa_rate[i] - truth.kappa_rate[i]).abs()
        })
        .collect()
}

/// Trapezoidal integral of `f` sampled at `t` over `[t[0], t[0] + horizon]`,
/// truncated to the available samples.
fn trapezoid<T: Real>(t: &[T], f: &[T], horizon: T) -> T {
    let tol = T::lit(1e-9);
    let end = t[0] + horizon + tol;
    let half = T::lit(0.5);
    let mut acc = T::zero();
    for i in 1..t.len() {
        if t[i] > end {
            break;
        }
        acc = acc + half * (f[i] + f[i - 1]) * (t[i] - t[i - 1]);
    }
    acc
}

/// Comfort report for two already derived profiles on the same grid.
pub fn comfort_from_profiles<T: Real>(
    pred: &KinematicProfile<T>,
    truth: &KinematicProfile<T>,
    weights: &ComfortWeights<T>,
    alpha: T,
) -> Result<ComfortReport<T>, ComfortError> {
    if pred.len() != truth.len() || pred.len() < 2 {
        return Err(ComfortError::HorizonMismatch);
    }
    let tol = T::lit(1e-9);
    if pred.t.iter().zip(&truth.t).any(|(a, b)| (*a - *b).abs() > tol) {
        return Err(ComfortError::HorizonMismatch);
    }
    let f = deviation_integrand(pred, truth, weights);
    let horizons: Vec<T> = COMFORT_HORIZONS.iter().map(|&h| T::lit(h)).collect();
    let indices: Vec<T> = horizons.iter().map(|&h| trapezoid(&pred.t, &f, h)).collect();
    Ok(ComfortReport::from_indices(&horizons, &indices, alpha))
}

/// Comfort of `pred` against `truth`, both anchored at the same ego status.
pub fn comfort_index<T: Real>(
    pred: &Trajectory<T>,
    truth: &Trajectory<T>,
    ego: &EgoStatus<T>,
    weights: &ComfortWeights<T>,
    alpha: T,
) -> Result<ComfortReport<T>, ComfortError> {
    comfort_index_anchored(pred, ego, truth, ego, weights, alpha)
}

/// Like [`comfort_index`] but each trajectory keeps its own ego anchor.
pub fn comfort_index_anchored<T: Real>(
    pred: &Trajectory<T>,
    pred_ego: &EgoStatus<T>,
    truth: &Trajectory<T>,
    truth_ego: &EgoStatus<T>,
    weights: &ComfortWeights<T>,
    alpha: T,
) -> Result<ComfortReport<T>, ComfortError> {
    if pred.len() != truth.len() || (pred.dt - truth.dt).abs() > T::lit(1e-9) {
        return Err(ComfortError::HorizonMismatch);
    }
    if !pred.is_canonical() || !truth.is_canonical() {
        return Err(ComfortError::NonCanonicalTrajectory);
    }
    let wb = T::lit(DEFAULT_WHEELBASE);
    let p = derive_kinematics(pred, pred_ego, wb)?;
    let q = derive_kinematics(truth, truth_ego, wb)?;
    comfort_from_profiles(&p, &q, weights, alpha)
}
