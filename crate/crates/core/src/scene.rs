//! Abstract scene representation, history buffer and the planner condition encoding.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::num::{wrap_angle, Real};
use crate::traj::{derive_kinematics, EgoStatus, Pose2, TrajError, Trajectory, CANONICAL_DT, CANONICAL_POINTS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObstacleKind {
    Vehicle,
    Pedestrian,
    Static,
}

impl Default for ObstacleKind {
    fn default() -> Self {
        ObstacleKind::Static
    }
}

/// Disc obstacle moving at constant velocity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct Obstacle<T: Real = f64> {
    pub center: [T; 2],
    pub radius: T,
    #[serde(default = "zero2")]
    pub velocity: [T; 2],
    #[serde(default)]
    pub kind: ObstacleKind,
}

fn zero2<T: Real>() -> [T; 2] {
    [T::zero(), T::zero()]
}

impl<T: Real> Obstacle<T> {
    pub fn fixed(center: [T; 2], radius: T, kind: ObstacleKind) -> Self {
        Obstacle { center, radius, velocity: zero2(), kind }
    }

    /// Center after `dt` seconds of constant-velocity motion.
    pub fn position_at(&self, dt: T) -> [T; 2] {
        [self.center[0] + self.velocity[0] * dt, self.center[1] + self.velocity[1] * dt]
    }

    pub fn advanced(&self, dt: T) -> Self {
        Obstacle { center: self.position_at(dt), ..*self }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct Target<T: Real = f64> {
    pub point: [T; 2],
    pub heading: T,
    pub speed: T,
}

/// Ground-truth scene snapshot plus navigation target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct SceneContext<T: Real = f64> {
    #[serde(default)]
    pub obstacles: Vec<Obstacle<T>>,
    pub lane_center: Vec<[T; 2]>,
    pub target: Target<T>,
    #[serde(default = "T::zero")]
    pub timestamp: T,
}

impl<T: Real> SceneContext<T> {
    /// Obstacle-free straight road along +x with the target `goal` metres ahead.
    pub fn straight_road(goal: T, target_speed: T) -> Self {
        SceneContext {
            obstacles: Vec::new(),
            lane_center: vec![[T::zero(), T::zero()], [goal + goal, T::zero()]],
            target: Target { point: [goal, T::zero()], heading: T::zero(), speed: target_speed },
            timestamp: T::zero(),
        }
    }

    /// Rigidly moves every spatial quantity by `pose`.
    pub fn transformed(&self, pose: &Pose2<T>) -> Self {
        SceneContext {
            obstacles: self
                .obstacles
                .iter()
                .map(|o| Obstacle {
                    center: pose.to_world(o.center),
                    velocity: pose.rotate_to_world(o.velocity),
                    ..*o
                })
                .collect(),
            lane_center: self.lane_center.iter().map(|&p| pose.to_world(p)).collect(),
            target: Target {
                point: pose.to_world(self.target.point),
                heading: wrap_angle(self.target.heading + pose.yaw),
                speed: self.target.speed,
            },
            timestamp: self.timestamp,
        }
    }
}

/// A previously selected plan with its derived per-point speed, acceleration and yaw.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct HistoryEntry<T: Real = f64> {
    pub time: T,
    pub trajectory: Trajectory<T>,
    pub v: Vec<T>,
    pub a: Vec<T>,
    pub yaw: Vec<T>,
}

/// Ring buffer of the last `capacity` selected plans, oldest first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct HistoryBuffer<T: Real = f64> {
    capacity: usize,
    entries: VecDeque<HistoryEntry<T>>,
}

impl<T: Real> HistoryBuffer<T> {
    pub fn new(capacity: usize) -> Self {
        HistoryBuffer { capacity, entries: VecDeque::with_capacity(capacity) }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Entries ordered oldest to newest.
    pub fn entries(&self) -> impl DoubleEndedIterator<Item = &HistoryEntry<T>> {
        self.entries.iter()
    }

    /// Records a world-frame plan selected at `time` from `ego`.
    pub fn push(
        &mut self,
        time: T,
        trajectory: Trajectory<T>,
        ego: &EgoStatus<T>,
        wheelbase: T,
    ) -> Result<(), TrajError> {
        let profile = derive_kinematics(&trajectory, ego, wheelbase)?;
        let entry = HistoryEntry {
            time,
            v: profile.v[1..].to_vec(),
            a: profile.a_t[1..].to_vec(),
            yaw: profile.yaw[1..].to_vec(),
            trajectory,
        };
        self.push_entry(entry);
        Ok(())
    }

    pub fn push_entry(&mut self, entry: HistoryEntry<T>) {
        if self.capacity == 0 {
            return;
        }
        while self.entries.len() >= self.capacity {
            self.entries.pop_front();
        }
        self.entries.push_back(entry);
    }

    pub fn transformed(&self, pose: &Pose2<T>) -> Self {
        HistoryBuffer {
            capacity: self.capacity,
            entries: self
                .entries
                .iter()
                .map(|e| HistoryEntry {
                    trajectory: e.trajectory.to_world(pose),
                    yaw: e.yaw.iter().map(|&y| wrap_angle(y + pose.yaw)).collect(),
                    ..e.clone()
                })
                .collect(),
        }
    }
}

/// What a slot of the condition vector holds; decides its fixed input scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SlotKind {
    Position,
    Speed,
    Accel,
    Angle,
}

/// Size configuration of the condition vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConditionLayout {
    pub n_obstacles: usize,
    pub history: usize,
    pub horizon: usize,
}

impl Default for ConditionLayout {
    fn default() -> Self {
        ConditionLayout { n_obstacles: 6, history: 2, horizon: CANONICAL_POINTS }
    }
}

pub const EGO_BLOCK: usize = 6;
pub const GOAL_BLOCK: usize = 5;
pub const OBSTACLE_FIELDS: usize = 5;
pub const HISTORY_FIELDS: usize = 6;

pub const POSITION_SCALE: f64 = 20.0;
pub const SPEED_SCALE: f64 = 15.0;
pub const ACCEL_SCALE: f64 = 5.0;

impl ConditionLayout {
    pub fn len(&self) -> usize {
        EGO_BLOCK + GOAL_BLOCK + OBSTACLE_FIELDS * self.n_obstacles + HISTORY_FIELDS * self.history * self.horizon
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn obstacle_offset(&self) -> usize {
        EGO_BLOCK + GOAL_BLOCK
    }

    pub fn history_offset(&self) -> usize {
        self.obstacle_offset() + OBSTACLE_FIELDS * self.n_obstacles
    }

    pub fn slot_kinds(&self) -> Vec<SlotKind> {
        use SlotKind::*;
        let mut kinds = vec![Position, Position, Angle, Angle, Speed, Accel];
        kinds.extend([Position, Position, Angle, Angle, Speed]);
        for _ in 0..self.n_obstacles {
            kinds.extend([Position, Position, Speed, Speed, Position]);
        }
        for _ in 0..self.history * self.horizon {
            kinds.extend([Position, Position, Speed, Accel, Angle, Angle]);
        }
        kinds
    }

    /// Multiplicative factors that bring every slot to order one.
    pub fn input_scales<T: Real>(&self) -> Vec<T> {
        self.slot_kinds()
            .into_iter()
            .map(|k| match k {
                SlotKind::Position => T::lit(1.0 / POSITION_SCALE),
                SlotKind::Speed => T::lit(1.0 / SPEED_SCALE),
                SlotKind::Accel => T::lit(1.0 / ACCEL_SCALE),
                SlotKind::Angle => T::one(),
            })
            .collect()
    }
}

/// Fixed-length ego-frame conditioning vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
#[serde(transparent)]
pub struct ConditionVector<T: Real = f64>(pub Vec<T>);

impl<T: Real> ConditionVector<T> {
    pub fn as_slice(&self) -> &[T] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Encodes the scene, ego status and plan history into the ego frame.
///
/// Layout: ego `[x, y, sin, cos, v, a]`, goal `[dx, dy, sin, cos, v_target]`,
/// the `n_obstacles` nearest obstacles `[dx, dy, vx, vy, r]` nearest first and
/// zero padded, then `history` slots newest first with per-point
/// `[x, y, v, a, sin, cos]`. Missing history is a constant-velocity
/// extrapolation of the ego.
pub fn encode_condition<T: Real>(
    scene: &SceneContext<T>,
    ego: &EgoStatus<T>,
    history: &HistoryBuffer<T>,
    layout: &ConditionLayout,
) -> ConditionVector<T> {
    let pose = ego.pose();
    let mut out = Vec::with_capacity(layout.len());

    out.extend([T::zero(), T::zero(), T::zero(), T::one(), ego.speed, ego.accel]);

    let goal = pose.to_local(scene.target.point);
    let (gs, gc) = wrap_angle(scene.target.heading - ego.yaw).sin_cos();
    out.extend([goal[0], goal[1], gs, gc, scene.target.speed]);

    let mut ranked: Vec<(T, &Obstacle<T>)> = scene
        .obstacles
        .iter()
        .map(|o| {
            let dx = o.center[0] - ego.position[0];
            let dy = o.center[1] - ego.position[1];
            (dx * dx + dy * dy, o)
        })
        .collect();
    ranked.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(std::cmp::Ordering::Equal));
    for slot in 0..layout.n_obstacles {
        match ranked.get(slot) {
            Some((_, o)) => {
                let c = pose.to_local(o.center);
                let vel = pose.rotate_to_local(o.velocity);
                out.extend([c[0], c[1], vel[0], vel[1], o.radius]);
            }
            None => out.extend([T::zero(); OBSTACLE_FIELDS]),
        }
    }

    let mut newest_first = history.entries().rev();
    for _ in 0..layout.history {
        match newest_first.next() {
            Some(entry) => {
                for i in 0..layout.horizon {
                    match entry.trajectory.points.get(i) {
                        Some(w) => {
                            let p = pose.to_local(w.xy());
                            let (s, c) = wrap_angle(entry.yaw[i] - ego.yaw).sin_cos();
                            out.extend([p[0], p[1], entry.v[i], entry.a[i], s, c]);
                        }
                        None => out.extend([T::zero(); HISTORY_FIELDS]),
                    }
                }
            }
            None => {
                for i in 0..layout.horizon {
                    let t = T::lit(CANONICAL_DT * (i + 1) as f64);
                    out.extend([ego.speed * t, T::zero(), ego.speed, T::zero(), T::zero(), T::one()]);
                }
            }
        }
    }
    debug_assert_eq!(out.len(), layout.len());
    ConditionVector(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn axis_aligned_goal() {
        let scene = SceneContext::straight_road(10.0, 7.0);
        let ego = EgoStatus::new([0.0, 0.0], 0.0, 0.0, 0.0);
        let layout = ConditionLayout::default();
        let c = encode_condition(&scene, &ego, &HistoryBuffer::new(2), &layout);
        assert_eq!(c.len(), layout.len());
        assert_eq!(&c.0[..6], &[0.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
        assert_eq!(&c.0[6..11], &[10.0, 0.0, 0.0, 1.0, 7.0]);
        let obs = &c.0[layout.obstacle_offset()..layout.history_offset()];
        assert!(obs.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn rotated_scene_gives_identical_condition() {
        let mut scene = SceneContext::straight_road(10.0, 7.0);
        scene.obstacles.push(Obstacle { center: [5.0, 2.0], radius: 1.0, velocity: [1.0, -0.5], kind: ObstacleKind::Vehicle });
        let ego = EgoStatus::new([0.0, 0.0], 0.0, 3.0, 0.5);
        let layout = ConditionLayout::default();
        let a = encode_condition(&scene, &ego, &HistoryBuffer::new(2), &layout);
        let pose = Pose2::new(0.0, 0.0, std::f64::consts::FRAC_PI_2);
        let ego_r = EgoStatus::new(pose.to_world(ego.position), ego.yaw + pose.yaw, 3.0, 0.5);
        let b = encode_condition(&scene.transformed(&pose), &ego_r, &HistoryBuffer::new(2), &layout);
        for (x, y) in a.0.iter().zip(&b.0) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn keeps_six_nearest_sorted() {
        let mut scene = SceneContext::straight_road(10.0, 7.0);
        let dists = [9.0, 3.0, 14.0, 1.5, 7.0, 12.0, 4.0, 20.0];
        for (i, d) in dists.iter().enumerate() {
            let ang = i as f64 * 0.7;
            scene.obstacles.push(Obstacle::fixed([d * ang.cos(), d * ang.sin()], 0.5, ObstacleKind::Static));
        }
        let ego = EgoStatus::new([0.0, 0.0], 0.0, 0.0, 0.0);
        let layout = ConditionLayout::default();
        let c = encode_condition(&scene, &ego, &HistoryBuffer::new(2), &layout);
        let mut expected = dists.to_vec();
        expected.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let off = layout.obstacle_offset();
        for k in 0..6 {
            let dx = c.0[off + 5 * k];
            let dy = c.0[off + 5 * k + 1];
            assert!(((dx * dx + dy * dy).sqrt() - expected[k]).abs() < 1e-9);
        }
    }

    #[test]
    fn empty_history_is_constant_velocity() {
        let scene = SceneContext::straight_road(10.0, 7.0);
        let ego = EgoStatus::new([1.0, 2.0], 0.3, 4.0, 0.0);
        let layout = ConditionLayout::default();
        let c = encode_condition(&scene, &ego, &HistoryBuffer::new(2), &layout);
        let h = layout.history_offset();
        assert_eq!(&c.0[h..h + 6], &[2.0, 0.0, 4.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn history_ring_keeps_newest() {
        let ego = EgoStatus::new([0.0, 0.0], 0.0, 2.0, 0.0);
        let mut hist = HistoryBuffer::new(2);
        for k in 0..3 {
            let xy: Vec<[f64; 2]> = (1..=6).map(|i| [i as f64, k as f64]).collect();
            hist.push(k as f64, Trajectory::from_xy(&xy, 0.5), &ego, 2.7).unwrap();
        }
        let times: Vec<f64> = hist.entries().map(|e| e.time).collect();
        assert_eq!(times, vec![1.0, 2.0]);
    }

    fn random_scene(seed: &[f64]) -> (SceneContext<f64>, EgoStatus<f64>, HistoryBuffer<f64>) {
        let mut scene = SceneContext::straight_road(30.0, 8.0);
        scene.target.point = [seed[0], seed[1]];
        scene.target.heading = seed[2];
        let n_obs = (seed[3].abs() as usize) % 9;
        for i in 0..n_obs {
            let a = seed[4] + i as f64;
            scene.obstacles.push(Obstacle {
                center: [seed[5] + 7.0 * a.cos() * (i as f64 + 1.0), seed[6] + 5.0 * a.sin()],
                radius: 0.5 + 0.1 * i as f64,
                velocity: [a.sin(), a.cos()],
                kind: ObstacleKind::Vehicle,
            });
        }
        let ego = EgoStatus::new([seed[7], seed[8]], seed[9], seed[10].abs(), 0.2);
        let mut hist = HistoryBuffer::new(2);
        if seed[3] > 0.0 {
            let xy: Vec<[f64; 2]> = (1..=6).map(|i| [seed[7] + i as f64 * 1.5, seed[8] + 0.1 * (i * i) as f64]).collect();
            hist.push(0.0, Trajectory::from_xy(&xy, 0.5), &ego, 2.7).unwrap();
        }
        (scene, ego, hist)
    }

    proptest! {
        #[test]
        fn condition_length_is_constant(seed in prop::collection::vec(-20.0..20.0f64, 11)) {
            let (scene, ego, hist) = random_scene(&seed);
            let layout = ConditionLayout::default();
            prop_assert_eq!(encode_condition(&scene, &ego, &hist, &layout).len(), layout.len());
        }

        #[test]
        fn condition_is_frame_invariant(
            seed in prop::collection::vec(-20.0..20.0f64, 11),
            tx in -100.0..100.0f64, ty in -100.0..100.0f64, rot in -3.1..3.1f64,
        ) {
            let (scene, ego, hist) = random_scene(&seed);
            let layout = ConditionLayout::default();
            let pose = Pose2::new(tx, ty, rot);
            let a = encode_condition(&scene, &ego, &hist, &layout);
            let ego2 = EgoStatus::new(pose.to_world(ego.position), ego.yaw + rot, ego.speed, ego.accel);
            let b = encode_condition(&scene.transformed(&pose), &ego2, &hist.transformed(&pose), &layout);
            for (x, y) in a.0.iter().zip(&b.0) {
                prop_assert!((x - y).abs() < 1e-9, "{} vs {}", x, y);
            }
        }
    }
}
