//! Trajectory and vehicle-state types plus finite-difference kinematics.
//!
//! A [`KinematicProfile`] is always anchored at the ego vehicle: sample 0 is
//! the ego state at `t = 0`, samples `1..=N` correspond to the trajectory
//! waypoints. First derivatives on sample `i` are differences over the segment
//! `i-1 -> i`; rates (steering rate, jerks, curvature rate) are a further
//! difference of those, and sample 0 copies its neighbour where no earlier
//! information exists.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::num::{wrap_angle, Real};
use crate::scene::SceneContext;

/// Spacing of the canonical planning grid, seconds.
pub const CANONICAL_DT: f64 = 0.5;
/// Number of waypoints in a canonical 3 s plan.
pub const CANONICAL_POINTS: usize = 6;
pub const DEFAULT_WHEELBASE: f64 = 2.7;
pub const DEFAULT_EGO_RADIUS: f64 = 1.0;
/// Returned by [`min_obstacle_distance`] when the scene has no obstacles.
pub const NO_OBSTACLE_DISTANCE: f64 = 1e6;
/// Below this speed over a step the heading is held and curvature is zero.
pub const LOW_SPEED_GUARD: f64 = 0.1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrajError {
    #[error("trajectory has {0} points, at least 2 are required")]
    TooFewPoints(usize),
    #[error("waypoint {index} breaks the uniform spacing of {dt} s")]
    NonUniformSpacing { index: usize, dt: f64 },
    #[error("trajectory is empty")]
    EmptyTrajectory,
    #[error("non-finite value in trajectory")]
    NonFinite,
}

/// A timed planar waypoint, serialized as `[x, y, t]`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(bound = "")]
#[serde(from = "[T; 3]", into = "[T; 3]")]
pub struct Waypoint<T: Real = f64> {
    pub x: T,
    pub y: T,
    pub t: T,
}

impl<T: Real> From<[T; 3]> for Waypoint<T> {
    fn from([x, y, t]: [T; 3]) -> Self {
        Waypoint { x, y, t }
    }
}

impl<T: Real> From<Waypoint<T>> for [T; 3] {
    fn from(w: Waypoint<T>) -> Self {
        [w.x, w.y, w.t]
    }
}

impl<T: Real> Waypoint<T> {
    pub fn new(x: T, y: T, t: T) -> Self {
        Waypoint { x, y, t }
    }

    pub fn xy(&self) -> [T; 2] {
        [self.x, self.y]
    }
}

/// Rigid planar pose used for ego-frame conversions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct Pose2<T: Real = f64> {
    pub x: T,
    pub y: T,
    pub yaw: T,
}

impl<T: Real> Pose2<T> {
    pub fn new(x: T, y: T, yaw: T) -> Self {
        Pose2 { x, y, yaw }
    }

    /// World point expressed in this pose's frame.
    pub fn to_local(&self, p: [T; 2]) -> [T; 2] {
        let (s, c) = self.yaw.sin_cos();
        let dx = p[0] - self.x;
        let dy = p[1] - self.y;
        [c * dx + s * dy, -s * dx + c * dy]
    }

    /// Local point expressed in the world frame.
    pub fn to_world(&self, p: [T; 2]) -> [T; 2] {
        let (s, c) = self.yaw.sin_cos();
        [self.x + c * p[0] - s * p[1], self.y + s * p[0] + c * p[1]]
    }

    pub fn rotate_to_local(&self, v: [T; 2]) -> [T; 2] {
        let (s, c) = self.yaw.sin_cos();
        [c * v[0] + s * v[1], -s * v[0] + c * v[1]]
    }

    pub fn rotate_to_world(&self, v: [T; 2]) -> [T; 2] {
        let (s, c) = self.yaw.sin_cos();
        [c * v[0] - s * v[1], s * v[0] + c * v[1]]
    }

    /// Composes `self` after `other`: the result maps `other`'s local frame into `self`'s parent.
    pub fn compose(&self, other: &Pose2<T>) -> Pose2<T> {
        let [x, y] = self.to_world([other.x, other.y]);
        Pose2::new(x, y, wrap_angle(self.yaw + other.yaw))
    }
}

/// Uniformly timed waypoint sequence. Times are offsets from the plan start
/// (the ego sample sits at `t = 0` and is not stored).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct Trajectory<T: Real = f64> {
    pub dt: T,
    pub points: Vec<Waypoint<T>>,
}

impl<T: Real> Trajectory<T> {
    pub fn new(points: Vec<Waypoint<T>>, dt: T) -> Result<Self, TrajError> {
        let traj = Trajectory { dt, points };
        traj.validate()?;
        Ok(traj)
    }

    /// Builds a trajectory whose `i`-th point sits at `t = (i + 1) * dt`.
    pub fn from_xy(xy: &[[T; 2]], dt: T) -> Self {
        let points = xy
            .iter()
            .enumerate()
            .map(|(i, p)| Waypoint::new(p[0], p[1], dt * T::from_usize_lossy(i + 1)))
            .collect();
        Trajectory { dt, points }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn last(&self) -> Option<&Waypoint<T>> {
        self.points.last()
    }

    pub fn xy(&self) -> Vec<[T; 2]> {
        self.points.iter().map(Waypoint::xy).collect()
    }

    /// Checks finiteness, `t >= 0`, and strictly uniform spacing.
    pub fn validate(&self) -> Result<(), TrajError> {
        let tol = T::lit(1e-6) * (T::one() + self.dt.abs());
        if !self.dt.is_finite() || self.dt <= T::zero() {
            return Err(TrajError::NonUniformSpacing { index: 0, dt: self.dt.to_f64_lossy() });
        }
        for (i, w) in self.points.iter().enumerate() {
            if !(w.x.is_finite() && w.y.is_finite() && w.t.is_finite()) {
                return Err(TrajError::NonFinite);
            }
            if w.t < -tol {
                return Err(TrajError::NonUniformSpacing { index: i, dt: self.dt.to_f64_lossy() });
            }
            if i > 0 && ((w.t - self.points[i - 1].t) - self.dt).abs() > tol {
                return Err(TrajError::NonUniformSpacing { index: i, dt: self.dt.to_f64_lossy() });
            }
        }
        Ok(())
    }

    /// True for the 6-point, 0.5 s grid starting at 0.5 s.
    pub fn is_canonical(&self) -> bool {
        let tol = T::lit(1e-6);
        self.points.len() == CANONICAL_POINTS
            && (self.dt - T::lit(CANONICAL_DT)).abs() < tol
            && self
                .points
                .iter()
                .enumerate()
                .all(|(i, w)| (w.t - T::lit(CANONICAL_DT * (i + 1) as f64)).abs() < tol)
    }

    /// Points expressed in `pose`'s local frame.
    pub fn to_local(&self, pose: &Pose2<T>) -> Self {
        self.map_xy(|p| pose.to_local(p))
    }

    /// Points given in `pose`'s local frame mapped to the world frame.
    pub fn to_world(&self, pose: &Pose2<T>) -> Self {
        self.map_xy(|p| pose.to_world(p))
    }

    /// Keeps the points with `t <= horizon`.
    pub fn truncated(&self, horizon: T) -> Self {
        let tol = T::lit(1e-9);
        Trajectory {
            dt: self.dt,
            points: self.points.iter().copied().filter(|w| w.t <= horizon + tol).collect(),
        }
    }

    fn map_xy(&self, f: impl Fn([T; 2]) -> [T; 2]) -> Self {
        Trajectory {
            dt: self.dt,
            points: self
                .points
                .iter()
                .map(|w| {
                    let [x, y] = f(w.xy());
                    Waypoint::new(x, y, w.t)
                })
                .collect(),
        }
    }
}

/// Ego vehicle status at plan time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct EgoStatus<T: Real = f64> {
    pub position: [T; 2],
    pub yaw: T,
    pub speed: T,
    pub accel: T,
}

impl<T: Real> EgoStatus<T> {
    pub fn new(position: [T; 2], yaw: T, speed: T, accel: T) -> Self {
        EgoStatus { position, yaw: wrap_angle(yaw), speed: speed.max(T::zero()), accel }
    }

    pub fn pose(&self) -> Pose2<T> {
        Pose2::new(self.position[0], self.position[1], self.yaw)
    }
}

/// Kinematic bicycle state `(p_x, p_y, theta, v, a_t, a_n, phi, kappa)`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct BicycleState<T: Real = f64> {
    pub p_x: T,
    pub p_y: T,
    pub theta: T,
    pub v: T,
    pub a_t: T,
    pub a_n: T,
    pub phi: T,
    pub kappa: T,
}

impl<T: Real> BicycleState<T> {
    pub fn at_rest(p_x: T, p_y: T, theta: T) -> Self {
        BicycleState { p_x, p_y, theta, ..Default::default() }
    }

    pub fn position(&self) -> [T; 2] {
        [self.p_x, self.p_y]
    }

    pub fn pose(&self) -> Pose2<T> {
        Pose2::new(self.p_x, self.p_y, self.theta)
    }

    pub fn ego_status(&self) -> EgoStatus<T> {
        EgoStatus::new(self.position(), self.theta, self.v, self.a_t)
    }
}

/// Per-sample kinematic quantities; index 0 is the ego anchor sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct KinematicProfile<T: Real = f64> {
    pub t: Vec<T>,
    pub v: Vec<T>,
    pub yaw: Vec<T>,
    pub a_t: Vec<T>,
    pub a_n: Vec<T>,
    pub kappa: Vec<T>,
    pub phi: Vec<T>,
    pub phi_rate: Vec<T>,
    pub j_t: Vec<T>,
    pub j_n: Vec<T>,
    pub kappa_rate: Vec<T>,
}

impl<T: Real> KinematicProfile<T> {
    /// Number of samples, including the ego anchor.
    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    /// Lateral acceleration; identical to the centripetal term `v^2 kappa`.
    pub fn a_cent(&self) -> &[T] {
        &self.a_n
    }
}

/// Finite-difference kinematic profile of `traj`, anchored at `ego`.
pub fn derive_kinematics<T: Real>(
    traj: &Trajectory<T>,
    ego: &EgoStatus<T>,
    wheelbase: T,
) -> Result<KinematicProfile<T>, TrajError> {
    if traj.points.len() < 2 {
        return Err(TrajError::TooFewPoints(traj.points.len()));
    }
    traj.validate()?;
    let dt = traj.dt;
    let guard = T::lit(LOW_SPEED_GUARD);
    let n = traj.points.len() + 1;

    let mut pos = Vec::with_capacity(n);
    pos.push(ego.position);
    pos.extend(traj.points.iter().map(Waypoint::xy));

    let mut t = Vec::with_capacity(n);
    t.push(traj.points[0].t - dt);
    t.extend(traj.points.iter().map(|w| w.t));

    let mut v = vec![T::zero(); n];
    let mut yaw = vec![T::zero(); n];
    let mut kappa = vec![T::zero(); n];
    v[0] = ego.speed;
    yaw[0] = ego.yaw;
    for i in 1..n {
        let dx = pos[i][0] - pos[i - 1][0];
        let dy = pos[i][1] - pos[i - 1][1];
        v[i] = (dx * dx + dy * dy).sqrt() / dt;
        if v[i] >= guard {
            yaw[i] = dy.atan2(dx);
            kappa[i] = wrap_angle(yaw[i] - yaw[i - 1]) / (v[i] * dt);
        } else {
            yaw[i] = yaw[i - 1];
        }
    }
    // The ego curvature is unobserved; extend the first segment backwards.
    kappa[0] = kappa[1];

    let mut a_t = vec![T::zero(); n];
    a_t[0] = ego.accel;
    for i in 1..n {
        a_t[i] = (v[i] - v[i - 1]) / dt;
    }
    let a_n: Vec<T> = v.iter().zip(&kappa).map(|(&v, &k)| v * v * k).collect();
    let phi: Vec<T> = kappa.iter().map(|&k| (k * wheelbase).atan()).collect();

    let phi_rate = rate(&phi, dt);
    let j_t = rate(&a_t, dt);
    let j_n = rate(&a_n, dt);
    let kappa_rate = rate(&kappa, dt);

    Ok(KinematicProfile { t, v, yaw, a_t, a_n, kappa, phi, phi_rate, j_t, j_n, kappa_rate })
}

fn rate<T: Real>(q: &[T], dt: T) -> Vec<T> {
    let mut out = vec![T::zero(); q.len()];
    for i in 1..q.len() {
        out[i] = (q[i] - q[i - 1]) / dt;
    }
    if q.len() > 1 {
        out[0] = out[1];
    }
    out
}

/// Minimum disc clearance between the ego footprint along `traj` and every
/// obstacle, with moving obstacles extrapolated to each waypoint time.
pub fn min_obstacle_distance<T: Real>(traj: &Trajectory<T>, scene: &SceneContext<T>) -> T {
    min_obstacle_distance_with(traj, scene, T::lit(DEFAULT_EGO_RADIUS))
}

pub fn min_obstacle_distance_with<T: Real>(
    traj: &Trajectory<T>,
    scene: &SceneContext<T>,
    ego_radius: T,
) -> T {
    let mut best = T::lit(NO_OBSTACLE_DISTANCE);
    for w in &traj.points {
        for obs in &scene.obstacles {
            let c = obs.position_at(w.t);
            let d = ((w.x - c[0]).powi(2) + (w.y - c[1]).powi(2)).sqrt() - ego_radius - obs.radius;
            if d < best {
                best = d;
            }
        }
    }
    best
}
