//! Rule-based safety and comfort scoring of candidate trajectories.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::num::Real;
use crate::scene::SceneContext;
use crate::traj::{
    derive_kinematics, min_obstacle_distance_with, EgoStatus, KinematicProfile, TrajError, Trajectory,
    DEFAULT_EGO_RADIUS, DEFAULT_WHEELBASE,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScoreError {
    #[error("trajectory is empty")]
    EmptyTrajectory,
    #[error("no candidate trajectories to select from")]
    NoCandidates,
    #[error(transparent)]
    Trajectory(#[from] TrajError),
}

/// Names of the seven scorer weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum WeightName {
    #[serde(rename = "w_coll")]
    Coll,
    #[serde(rename = "w_deviation")]
    Deviation,
    #[serde(rename = "w_dis")]
    Dis,
    #[serde(rename = "w_speed")]
    Speed,
    #[serde(rename = "w_lat")]
    Lat,
    #[serde(rename = "w_lon")]
    Lon,
    #[serde(rename = "w_cent")]
    Cent,
}

impl WeightName {
    pub const ALL: [WeightName; 7] = [
        WeightName::Coll,
        WeightName::Deviation,
        WeightName::Dis,
        WeightName::Speed,
        WeightName::Lat,
        WeightName::Lon,
        WeightName::Cent,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            WeightName::Coll => "w_coll",
            WeightName::Deviation => "w_deviation",
            WeightName::Dis => "w_dis",
            WeightName::Speed => "w_speed",
            WeightName::Lat => "w_lat",
            WeightName::Lon => "w_lon",
            WeightName::Cent => "w_cent",
        }
    }
}

impl fmt::Display for WeightName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for WeightName {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        WeightName::ALL
            .into_iter()
            .find(|w| w.as_str() == s)
            .ok_or_else(|| s.to_string())
    }
}

/// Scorer weights; defaults are the published rule-based scorer weights.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
#[serde(deny_unknown_fields)]
pub struct ScorerWeights<T: Real = f64> {
    pub w_coll: T,
    pub w_deviation: T,
    pub w_dis: T,
    pub w_speed: T,
    pub w_lat: T,
    pub w_lon: T,
    pub w_cent: T,
}

impl<T: Real> Default for ScorerWeights<T> {
    fn default() -> Self {
        ScorerWeights {
            w_coll: T::lit(5.0),
            w_deviation: T::lit(3.5),
            w_dis: T::lit(1.5),
            w_speed: T::lit(2.5),
            w_lat: T::lit(1.5),
            w_lon: T::lit(4.5),
            w_cent: T::lit(3.0),
        }
    }
}

impl<T: Real> ScorerWeights<T> {
    pub fn get(&self, name: WeightName) -> T {
        match name {
            WeightName::Coll => self.w_coll,
            WeightName::Deviation => self.w_deviation,
            WeightName::Dis => self.w_dis,
            WeightName::Speed => self.w_speed,
            WeightName::Lat => self.w_lat,
            WeightName::Lon => self.w_lon,
            WeightName::Cent => self.w_cent,
        }
    }

    pub fn get_mut(&mut self, name: WeightName) -> &mut T {
        match name {
            WeightName::Coll => &mut self.w_coll,
            WeightName::Deviation => &mut self.w_deviation,
            WeightName::Dis => &mut self.w_dis,
            WeightName::Speed => &mut self.w_speed,
            WeightName::Lat => &mut self.w_lat,
            WeightName::Lon => &mut self.w_lon,
            WeightName::Cent => &mut self.w_cent,
        }
    }

    pub fn scaled(&self, s: T) -> Self {
        let mut out = *self;
        for name in WeightName::ALL {
            *out.get_mut(name) = self.get(name) * s;
        }
        out
    }
}

/// Individual sub-costs and their weighted aggregates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct CostBreakdown<T: Real = f64> {
    pub c_coll: T,
    pub c_dis: T,
    pub c_deviation: T,
    pub c_speed: T,
    pub c_lat: T,
    pub c_lon: T,
    pub c_cent: T,
    pub c_safety: T,
    pub c_comfort: T,
    pub c_total: T,
    /// Unclamped minimum clearance to obstacles.
    pub d_coll: T,
    /// Footprint overlaps an obstacle somewhere on the plan.
    pub hard_collision: bool,
}

/// Sub-costs before weighting.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SubCosts<T: Real = f64> {
    pub c_coll: T,
    pub c_dis: T,
    pub c_deviation: T,
    pub c_speed: T,
    pub c_lat: T,
    pub c_lon: T,
    pub c_cent: T,
}

impl<T: Real> SubCosts<T> {
    pub fn weighted(&self, w: &ScorerWeights<T>, d_coll: T) -> CostBreakdown<T> {
        let c_safety = w.w_coll * self.c_coll + w.w_dis * self.c_dis + w.w_deviation * self.c_deviation
            + w.w_speed * self.c_speed;
        let c_comfort = w.w_lat * self.c_lat + w.w_lon * self.c_lon + w.w_cent * self.c_cent;
        CostBreakdown {
            c_coll: self.c_coll,
            c_dis: self.c_dis,
            c_deviation: self.c_deviation,
            c_speed: self.c_speed,
            c_lat: self.c_lat,
            c_lon: self.c_lon,
            c_cent: self.c_cent,
            c_safety,
            c_comfort,
            c_total: c_safety + c_comfort,
            d_coll,
            hard_collision: d_coll < T::zero(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct ScorerConfig<T: Real = f64> {
    pub sigma_coll: T,
    pub ego_radius: T,
    pub wheelbase: T,
    /// Lateral-acceleration cost looks at samples up to this time; centripetal uses the whole plan.
    pub lateral_window: T,
}

impl<T: Real> Default for ScorerConfig<T> {
    fn default() -> Self {
        ScorerConfig {
            sigma_coll: T::one(),
            ego_radius: T::lit(DEFAULT_EGO_RADIUS),
            wheelbase: T::lit(DEFAULT_WHEELBASE),
            lateral_window: T::lit(1.5),
        }
    }
}

/// `exp(-d / sigma)`; callers clamp `d` to `[-sigma, inf)` first.
pub fn collision_cost<T: Real>(d_coll: T, sigma_coll: T) -> T {
    (-d_coll / sigma_coll).exp()
}

pub fn distance_cost<T: Real>(traj: &Trajectory<T>, p_target: [T; 2]) -> Result<T, ScoreError> {
    let end = traj.last().ok_or(ScoreError::EmptyTrajectory)?;
    Ok(((end.x - p_target[0]).powi(2) + (end.y - p_target[1]).powi(2)).sqrt())
}

/// Heading deviation summed over the planned points (the ego sample is skipped).
pub fn deviation_cost<T: Real>(profile: &KinematicProfile<T>, theta_target: T) -> T {
    profile.yaw.iter().skip(1).map(|&y| T::one() - (y - theta_target).cos()).sum()
}

/// Squared gap between mean speed (ego sample included) and target speed.
pub fn speed_cost<T: Real>(profile: &KinematicProfile<T>, v_target: T) -> T {
    let n = T::from_usize_lossy(profile.v.len().max(1));
    let mean = profile.v.iter().copied().sum::<T>() / n;
    (mean - v_target).powi(2)
}

/// `(c_lat, c_lon, c_cent)` over the planned samples.
pub fn comfort_costs<T: Real>(profile: &KinematicProfile<T>, lateral_window: T) -> (T, T, T) {
    let t0 = profile.t.first().copied().unwrap_or_else(T::zero);
    let tol = T::lit(1e-9);
    let mut c_lat = T::zero();
    let mut c_lon = T::zero();
    let mut c_cent = T::zero();
    for i in 1..profile.len() {
        let a_n = profile.a_n[i].abs();
        if profile.t[i] - t0 <= lateral_window + tol {
            c_lat = c_lat.max(a_n);
        }
        c_cent = c_cent.max(a_n);
        c_lon = c_lon.max(profile.a_t[i].abs());
    }
    (c_lat, c_lon, c_cent)
}

/// Computes every sub-cost for a world-frame trajectory.
pub fn sub_costs<T: Real>(
    traj: &Trajectory<T>,
    scene: &SceneContext<T>,
    ego: &EgoStatus<T>,
    config: &ScorerConfig<T>,
) -> Result<(SubCosts<T>, T), ScoreError> {
    if traj.is_empty() {
        return Err(ScoreError::EmptyTrajectory);
    }
    let profile = derive_kinematics(traj, ego, config.wheelbase)?;
    let d_coll = min_obstacle_distance_with(traj, scene, config.ego_radius);
    let clamped = d_coll.max(-config.sigma_coll);
    let (c_lat, c_lon, c_cent) = comfort_costs(&profile, config.lateral_window);
    let costs = SubCosts {
        c_coll: collision_cost(clamped, config.sigma_coll),
        c_dis: distance_cost(traj, scene.target.point)?,
        c_deviation: deviation_cost(&profile, scene.target.heading),
        c_speed: speed_cost(&profile, scene.target.speed),
        c_lat,
        c_lon,
        c_cent,
    };
    Ok((costs, d_coll))
}

pub fn score<T: Real>(
    traj: &Trajectory<T>,
    scene: &SceneContext<T>,
    ego: &EgoStatus<T>,
    weights: &ScorerWeights<T>,
) -> Result<CostBreakdown<T>, ScoreError> {
    score_with(traj, scene, ego, weights, &ScorerConfig::default())
}

pub fn score_with<T: Real>(
    traj: &Trajectory<T>,
    scene: &SceneContext<T>,
    ego: &EgoStatus<T>,
    weights: &ScorerWeights<T>,
    config: &ScorerConfig<T>,
) -> Result<CostBreakdown<T>, ScoreError> {
    let (costs, d_coll) = sub_costs(traj, scene, ego, config)?;
    Ok(costs.weighted(weights, d_coll))
}

/// Scores ego-frame candidates and returns the lowest-total index (first on ties).
pub fn select_best<T: Real>(
    candidates: &[Trajectory<T>],
    scene: &SceneContext<T>,
    ego: &EgoStatus<T>,
    weights: &ScorerWeights<T>,
    config: &ScorerConfig<T>,
) -> Result<(usize, Vec<CostBreakdown<T>>), ScoreError> {
    if candidates.is_empty() {
        return Err(ScoreError::NoCandidates);
    }
    let pose = ego.pose();
    let costs = candidates
        .iter()
        .map(|c| score_with(&c.to_world(&pose), scene, ego, weights, config))
        .collect::<Result<Vec<_>, _>>()?;
    Ok((argmin_total(&costs), costs))
}

pub fn argmin_total<T: Real>(costs: &[CostBreakdown<T>]) -> usize {
    let mut best = 0;
    for (i, c) in costs.iter().enumerate().skip(1) {
        if c.c_total < costs[best].c_total {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{Obstacle, ObstacleKind};
    use proptest::prelude::*;

    fn profile_with(v: Vec<f64>, yaw: Vec<f64>, a_t: Vec<f64>, a_n: Vec<f64>) -> KinematicProfile<f64> {
        let n = v.len();
        KinematicProfile {
            t: (0..n).map(|i| 0.5 * i as f64).collect(),
            v,
            yaw,
            a_t,
            a_n,
            kappa: vec![0.0; n],
            phi: vec![0.0; n],
            phi_rate: vec![0.0; n],
            j_t: vec![0.0; n],
            j_n: vec![0.0; n],
            kappa_rate: vec![0.0; n],
        }
    }

    #[test]
    fn collision_cost_anchor_points() {
        assert_eq!(collision_cost(0.0, 1.0), 1.0);
        assert!(collision_cost(1e6, 1.0) < 1e-300);
        assert!((collision_cost(1.0f64, 1.0) - 0.36787944117144233).abs() < 1e-15);
    }

    #[test]
    fn distance_cost_cases() {
        let t = Trajectory::from_xy(&[[1.0, 1.0], [3.0, 4.0]], 0.5);
        assert_eq!(distance_cost(&t, [3.0, 4.0]).unwrap(), 0.0);
        assert_eq!(distance_cost(&t, [0.0, 0.0]).unwrap(), 5.0);
        let empty: Trajectory<f64> = Trajectory { dt: 0.5, points: vec![] };
        assert_eq!(distance_cost(&empty, [0.0, 0.0]), Err(ScoreError::EmptyTrajectory));
    }

    #[test]
    fn deviation_cost_cases() {
        let zeros = vec![0.0; 7];
        let aligned = profile_with(zeros.clone(), vec![0.4; 7], zeros.clone(), zeros.clone());
        assert!(deviation_cost(&aligned, 0.4).abs() < 1e-15);
        let opposite = profile_with(zeros.clone(), vec![0.4 + std::f64::consts::PI; 7], zeros.clone(), zeros.clone());
        assert!((deviation_cost(&opposite, 0.4) - 12.0).abs() < 1e-12);
        let off = profile_with(zeros.clone(), vec![0.3; 7], zeros.clone(), zeros);
        let expected = 6.0 * (1.0 - 0.3f64.cos());
        assert!((deviation_cost(&off, 0.0) - expected).abs() < 1e-12);
        assert!((expected - 0.267981065).abs() < 1e-9);
    }

    #[test]
    fn speed_cost_cases() {
        let z = vec![0.0; 3];
        assert_eq!(speed_cost(&profile_with(vec![3.0; 3], z.clone(), z.clone(), z.clone()), 3.0), 0.0);
        assert_eq!(speed_cost(&profile_with(vec![4.0, 5.0, 6.0], z.clone(), z.clone(), z), 3.0), 4.0);
    }

    #[test]
    fn comfort_cost_cases() {
        let z = vec![0.0; 4];
        let braking = profile_with(z.clone(), z.clone(), vec![0.0, -1.0, -3.0, -2.0], z.clone());
        assert_eq!(comfort_costs(&braking, 1.5).1, 3.0);
        // Arc with v = 5, kappa = 0.1: a_n = 2.5 everywhere.
        let arc = profile_with(vec![5.0; 7], z.clone().into_iter().chain([0.0; 3]).collect(), vec![0.0; 7], vec![2.5; 7]);
        let (lat, lon, cent) = comfort_costs(&arc, 1.5);
        assert_eq!((lat, lon, cent), (2.5, 0.0, 2.5));
        // Lateral window only sees the first 1.5 s.
        let late = profile_with(vec![5.0; 7], vec![0.0; 7], vec![0.0; 7], vec![0.0, 0.0, 0.0, 0.5, 0.0, 4.0, 0.0]);
        assert_eq!(comfort_costs(&late, 1.5), (0.5, 0.0, 4.0));
    }

    #[test]
    fn ideal_trajectory_costs_nothing() {
        let xy: Vec<[f64; 2]> = (1..=6).map(|i| [5.0 * i as f64, 0.0]).collect();
        let traj = Trajectory::from_xy(&xy, 0.5);
        let scene = SceneContext::straight_road(30.0, 10.0);
        let ego = EgoStatus::new([0.0, 0.0], 0.0, 10.0, 0.0);
        let c = score(&traj, &scene, &ego, &ScorerWeights::default()).unwrap();
        assert!(c.c_safety < 1e-12 && c.c_comfort < 1e-12 && c.c_total < 1e-12);
        assert!(!c.hard_collision);
    }

    #[test]
    fn unit_sub_costs_sum_the_weights() {
        let ones = SubCosts { c_coll: 1.0, c_dis: 1.0, c_deviation: 1.0, c_speed: 1.0, c_lat: 1.0, c_lon: 1.0, c_cent: 1.0 };
        let b = ones.weighted(&ScorerWeights::default(), 1e6);
        assert_eq!(b.c_total, 21.5);
        assert_eq!(b.c_total, b.c_safety + b.c_comfort);
    }

    #[test]
    fn deep_penetration_is_clamped() {
        let xy: Vec<[f64; 2]> = (1..=6).map(|i| [i as f64, 0.0]).collect();
        let traj = Trajectory::from_xy(&xy, 0.5);
        let mut scene = SceneContext::straight_road(6.0, 2.0);
        scene.obstacles.push(Obstacle::fixed([3.0, 0.0], 2.0, ObstacleKind::Static));
        let ego = EgoStatus::new([0.0, 0.0], 0.0, 2.0, 0.0);
        let c = score(&traj, &scene, &ego, &ScorerWeights::default()).unwrap();
        assert!(c.hard_collision);
        assert!((c.c_coll - std::f64::consts::E).abs() < 1e-12);
    }

    #[test]
    fn select_best_ties_and_errors() {
        let scene = SceneContext::straight_road(30.0, 10.0);
        let ego = EgoStatus::new([0.0, 0.0], 0.0, 10.0, 0.0);
        let w = ScorerWeights::default();
        let cfg = ScorerConfig::default();
        let a = Trajectory::from_xy(&(1..=6).map(|i| [4.0 * i as f64, 0.0]).collect::<Vec<_>>(), 0.5);
        let b = Trajectory::from_xy(&(1..=6).map(|i| [5.0 * i as f64, 0.0]).collect::<Vec<_>>(), 0.5);
        assert_eq!(select_best(&[a.clone()], &scene, &ego, &w, &cfg).unwrap().0, 0);
        assert_eq!(select_best(&[a.clone(), b.clone(), b.clone()], &scene, &ego, &w, &cfg).unwrap().0, 1);
        assert_eq!(select_best::<f64>(&[], &scene, &ego, &w, &cfg), Err(ScoreError::NoCandidates));
    }

    #[test]
    fn weights_json_uses_table_keys() {
        let s = serde_json::to_string(&ScorerWeights::<f64>::default()).unwrap();
        assert_eq!(
            s,
            r#"{"w_coll":5.0,"w_deviation":3.5,"w_dis":1.5,"w_speed":2.5,"w_lat":1.5,"w_lon":4.5,"w_cent":3.0}"#
        );
    }

    proptest! {
        #[test]
        fn collision_cost_strictly_decreasing(a in -1.0..50.0f64, gap in 1e-3..5.0f64) {
            prop_assert!(collision_cost(a + gap, 1.0) < collision_cost(a, 1.0));
        }

        #[test]
        fn selection_invariant_under_uniform_weight_scaling(
            ends in prop::collection::vec((-3.0..3.0f64, 2.0..7.0f64), 1..8),
            lambda in 0.05..20.0f64,
        ) {
            let scene = SceneContext::straight_road(30.0, 10.0);
            let ego = EgoStatus::new([0.0, 0.0], 0.0, 8.0, 0.0);
            let cands: Vec<Trajectory<f64>> = ends.iter().map(|&(lat, step)| {
                Trajectory::from_xy(&(1..=6).map(|i| [step * i as f64, lat * (i * i) as f64 / 36.0]).collect::<Vec<_>>(), 0.5)
            }).collect();
            let w = ScorerWeights::default();
            let cfg = ScorerConfig::default();
            let (i1, _) = select_best(&cands, &scene, &ego, &w, &cfg).unwrap();
            let (i2, _) = select_best(&cands, &scene, &ego, &w.scaled(lambda), &cfg).unwrap();
            prop_assert_eq!(i1, i2);
        }

        #[test]
        fn safety_cost_never_drops_when_obstacle_added(
            cx in -10.0..40.0f64, cy in -10.0..10.0f64, r in 0.2..2.0f64,
        ) {
            let mut scene = SceneContext::straight_road(30.0, 10.0);
            scene.obstacles.push(Obstacle::fixed([20.0, 5.0], 1.0, ObstacleKind::Vehicle));
            let traj = Trajectory::from_xy(&(1..=6).map(|i| [4.0 * i as f64, 0.0]).collect::<Vec<_>>(), 0.5);
            let ego = EgoStatus::new([0.0, 0.0], 0.0, 8.0, 0.0);
            let w = ScorerWeights::default();
            let before = score(&traj, &scene, &ego, &w).unwrap();
            scene.obstacles.push(Obstacle::fixed([cx, cy], r, ObstacleKind::Static));
            let after = score(&traj, &scene, &ego, &w).unwrap();
            prop_assert!(after.c_safety >= before.c_safety);
            for c in [after.c_coll, after.c_dis, after.c_deviation, after.c_speed, after.c_lat, after.c_lon, after.c_cent] {
                prop_assert!(c >= 0.0);
            }
        }
    }
}
