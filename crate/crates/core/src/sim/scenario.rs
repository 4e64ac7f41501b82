use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diffusion::sampler::anchor_seed;
use crate::num::wrap_angle;
use crate::scene::{Obstacle, ObstacleKind, SceneContext, Target};
use crate::traj::{BicycleState, Trajectory, CANONICAL_DT, CANONICAL_POINTS, DEFAULT_EGO_RADIUS, DEFAULT_WHEELBASE};

use super::bicycle::{bicycle_step, Controls};
use super::route::Route;
use super::SimError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    Straight,
    LeftTurn,
    RightTurn,
    Stop,
    OvertakeStatic,
    YieldDynamic,
}

impl ScenarioKind {
    pub const ALL: [ScenarioKind; 6] = [
        ScenarioKind::Straight,
        ScenarioKind::LeftTurn,
        ScenarioKind::RightTurn,
        ScenarioKind::Stop,
        ScenarioKind::OvertakeStatic,
        ScenarioKind::YieldDynamic,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ScenarioKind::Straight => "straight",
            ScenarioKind::LeftTurn => "left_turn",
            ScenarioKind::RightTurn => "right_turn",
            ScenarioKind::Stop => "stop",
            ScenarioKind::OvertakeStatic => "overtake_static",
            ScenarioKind::YieldDynamic => "yield_dynamic",
        }
    }

    /// Kinds built around close interaction with obstacles.
    pub fn is_dense(self) -> bool {
        matches!(self, ScenarioKind::OvertakeStatic | ScenarioKind::YieldDynamic)
    }

    fn index(self) -> usize {
        Self::ALL.iter().position(|&k| k == self).unwrap_or(0)
    }
}

impl fmt::Display for ScenarioKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ScenarioKind {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| SimError::UnknownKind(s.to_string()))
    }
}

/// Scripted expert and its speed reference.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExpertConfig {
    pub lookahead: f64,
    pub control_dt: f64,
    /// Comfortable deceleration of the braking envelope.
    pub decel: f64,
    pub lateral_accel: f64,
    /// Gap kept to the edge of a blocking obstacle.
    pub stop_gap: f64,
    pub speed_gain: f64,
    pub accel_min: f64,
    pub accel_max: f64,
    pub steer_rate_max: f64,
    /// Obstacles predicted inside the corridor within this time block the lane.
    pub preview: f64,
    pub corridor_margin: f64,
    /// Speed-reference lookahead along the route.
    pub horizon: f64,
}

impl Default for ExpertConfig {
    fn default() -> Self {
        ExpertConfig {
            lookahead: 5.0,
            control_dt: 0.1,
            decel: 2.0,
            lateral_accel: 2.0,
            stop_gap: 8.0,
            speed_gain: 1.5,
            accel_min: -6.0,
            accel_max: 3.0,
            steer_rate_max: 1.0,
            preview: 3.0,
            corridor_margin: 0.5,
            horizon: 80.0,
        }
    }
}

pub const DEFAULT_DURATION: f64 = 15.0;
/// Expert states are recorded this long past the episode end, for labels.
pub const LABEL_HORIZON: f64 = 3.0;
const STOP_DEADBAND: f64 = 0.5;
const GENERATION_ATTEMPTS: usize = 16;

/// Ticks at which a regulator on a 5 s cadence queries (sim time t + 0.5).
pub const SALIENT_TICKS: [usize; 3] = [9, 19, 29];

/// Obstacle-dense scenarios pass within this centre distance of an obstacle
/// at a query tick.
pub const SALIENT_DISTANCE: f64 = 7.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpeedPlan {
    pub v_ref: f64,
    /// Arc length of the nearest required stop ahead, if any.
    pub stop_at: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub seed: u64,
    pub kind: ScenarioKind,
    pub duration: f64,
    pub cruise: f64,
    pub stop_s: Option<f64>,
    pub route: Route,
    /// Obstacles at `t = 0`; they move at constant velocity.
    pub obstacles: Vec<Obstacle<f64>>,
    pub initial: BicycleState<f64>,
    /// Scene snapshot at `t = 0`.
    pub scene: SceneContext<f64>,
    /// Expert states every 0.5 s from `t = 0` to `duration + 3 s`.
    pub expert: Vec<BicycleState<f64>>,
    pub expert_config: ExpertConfig,
}

impl Scenario {
    pub fn n_ticks(&self) -> usize {
        (self.duration / CANONICAL_DT).round() as usize
    }

    pub fn tick_time(i: usize) -> f64 {
        i as f64 * CANONICAL_DT
    }

    /// True when the expert is near an obstacle at some query tick.
    pub fn salient(&self) -> bool {
        SALIENT_TICKS.iter().filter(|&&i| i < self.n_ticks()).any(|&i| {
            let p = self.expert[i].position();
            self.obstacles_at(Self::tick_time(i))
                .iter()
                .any(|o| ((o.center[0] - p[0]).powi(2) + (o.center[1] - p[1]).powi(2)).sqrt() < SALIENT_DISTANCE)
        })
    }

    pub fn obstacles_at(&self, t: f64) -> Vec<Obstacle<f64>> {
        self.obstacles.iter().map(|o| o.advanced(t)).collect()
    }

    /// Expert 3 s future from tick `i`, world frame, times relative to tick `i`.
    pub fn expert_future(&self, i: usize) -> Trajectory<f64> {
        let xy: Vec<[f64; 2]> =
            (1..=CANONICAL_POINTS).map(|j| self.expert[(i + j).min(self.expert.len() - 1)].position()).collect();
        Trajectory::from_xy(&xy, CANONICAL_DT)
    }

    /// Reference speed at arc length `s` and time `t`: the lowest braking
    /// envelope over cruise speed, curvature limits, the stop point and
    /// blocking obstacles.
    pub fn speed_plan(&self, s: f64, t: f64) -> SpeedPlan {
        let c = &self.expert_config;
        let envelope = |target_v: f64, at: f64| (target_v * target_v + 2.0 * c.decel * (at - s).max(0.0)).sqrt();
        let mut v = self.cruise;
        let mut ds = 0.0;
        while ds <= c.horizon {
            let k = self.route.curvature_at(s + ds).abs();
            if k > 1e-3 {
                v = v.min(envelope((c.lateral_accel / k).sqrt(), s + ds));
            }
            ds += 2.0;
        }
        let mut stop_at: Option<f64> = None;
        if let Some(ss) = self.stop_s {
            stop_at = Some(ss);
        }
        if let Some(sb) = self.blocking_stop(s, t) {
            stop_at = Some(stop_at.map_or(sb, |x: f64| x.min(sb)));
        }
        if let Some(sa) = stop_at {
            let d = sa - s - STOP_DEADBAND;
            v = v.min(if d <= 0.0 { 0.0 } else { (2.0 * c.decel * d).sqrt() });
        }
        SpeedPlan { v_ref: v, stop_at }
    }

    pub fn speed_reference(&self, s: f64, t: f64) -> f64 {
        self.speed_plan(s, t).v_ref
    }

    /// Stop location for the nearest obstacle predicted inside the driving
    /// corridor ahead within the preview time.
    fn blocking_stop(&self, s: f64, t: f64) -> Option<f64> {
        let c = &self.expert_config;
        let mut best: Option<f64> = None;
        for o in &self.obstacles {
            let steps = (c.preview / 0.25).round() as usize;
            for j in 0..=steps {
                let p = o.position_at(t + j as f64 * 0.25);
                let (so, lat) = self.route.project(p, Some(s + 40.0));
                let half = DEFAULT_EGO_RADIUS + o.radius + c.corridor_margin;
                if lat.abs() < half && so > s - 1.0 && so < s + c.horizon {
                    let stop = so - o.radius - c.stop_gap;
                    best = Some(best.map_or(stop, |b: f64| b.min(stop)));
                }
            }
        }
        best
    }

    /// Local route target: the reference position about 3 s ahead.
    pub fn local_target(&self, s: f64, t: f64) -> Target<f64> {
        let plan = self.speed_plan(s, t);
        let mut st = s + LABEL_HORIZON * plan.v_ref;
        if let Some(sa) = plan.stop_at {
            st = st.min(sa.max(s));
        }
        let speed = 0.5 * (plan.v_ref + self.speed_reference(st, t));
        Target { point: self.route.point_at(st), heading: self.route.heading_at(st), speed }
    }

    /// Scene at time `t` for an ego at arc length `s`; the lane polyline is
    /// cut to a window around the ego.
    pub fn scene_at(&self, t: f64, s: f64) -> SceneContext<f64> {
        let lane: Vec<[f64; 2]> = self
            .route
            .points
            .iter()
            .enumerate()
            .filter(|(i, _)| {
                let si = *i as f64 * super::route::ROUTE_SPACING;
                si >= s - 20.0 && si <= s + 80.0
            })
            .map(|(_, p)| *p)
            .collect();
        SceneContext { obstacles: self.obstacles_at(t), lane_center: lane, target: self.local_target(s, t), timestamp: t }
    }

    /// Arc length of a world position, searching near `hint`.
    pub fn arc_length(&self, p: [f64; 2], hint: Option<f64>) -> f64 {
        self.route.project(p, hint).0
    }

    /// Smallest disc clearance between the ego and any obstacle at time `t`.
    pub fn clearance(&self, p: [f64; 2], t: f64) -> f64 {
        self.obstacles
            .iter()
            .map(|o| {
                let q = o.position_at(t);
                ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt() - o.radius - DEFAULT_EGO_RADIUS
            })
            .fold(f64::INFINITY, f64::min)
    }

    /// Pure-pursuit steering toward the route and P speed control with
    /// envelope feed-forward.
    pub fn expert_controls(&self, state: &BicycleState<f64>, s: f64, t: f64) -> Controls<f64> {
        let c = &self.expert_config;
        let target = self.route.point_at(s + c.lookahead);
        let steer_rate = pursuit_steer_rate(state, target, c.steer_rate_max, c.control_dt);
        let v_ref = self.speed_reference(s, t);
        let accel = if v_ref <= 0.0 {
            (-state.v / c.control_dt).max(c.accel_min)
        } else {
            let ds = 0.5;
            let ff = (self.speed_reference(s + ds, t) - v_ref) / ds * state.v;
            (c.speed_gain * (v_ref - state.v) + ff).clamp(c.accel_min, c.accel_max)
        };
        Controls::new(accel, steer_rate)
    }

    fn rollout(&mut self) -> Result<(), SimError> {
        let c = self.expert_config;
        let sub = (CANONICAL_DT / c.control_dt).round() as usize;
        let total = ((self.duration + LABEL_HORIZON) / CANONICAL_DT).round() as usize;
        let mut state = self.initial;
        let mut s = 0.0;
        let mut expert = vec![state];
        let mut min_clear = self.clearance(state.position(), 0.0);
        for tick in 0..total {
            for j in 0..sub {
                let t = Self::tick_time(tick) + j as f64 * c.control_dt;
                s = self.route.project(state.position(), Some(s)).0;
                let u = self.expert_controls(&state, s, t);
                state = bicycle_step(&state, u, c.control_dt, DEFAULT_WHEELBASE);
                min_clear = min_clear.min(self.clearance(state.position(), t + c.control_dt));
            }
            expert.push(state);
        }
        self.expert = expert;
        let d = (0..self.expert.len())
            .map(|i| self.clearance(self.expert[i].position(), Self::tick_time(i)))
            .fold(min_clear, f64::min);
        if d <= 0.2 {
            return Err(SimError::ExpertCollision { seed: self.seed, clearance: d });
        }
        Ok(())
    }
}

/// Steering rate that moves the wheel angle toward the pure-pursuit angle.
pub fn pursuit_steer_rate(state: &BicycleState<f64>, target: [f64; 2], rate_max: f64, dt: f64) -> f64 {
    let dx = target[0] - state.p_x;
    let dy = target[1] - state.p_y;
    let ld = (dx * dx + dy * dy).sqrt();
    let phi_des = if ld < 0.5 {
        state.phi
    } else {
        let alpha = wrap_angle(dy.atan2(dx) - state.theta);
        (2.0 * DEFAULT_WHEELBASE * alpha.sin() / ld).atan()
    };
    ((phi_des - state.phi) / dt).clamp(-rate_max, rate_max)
}

fn roadside<R: Rng>(rng: &mut R, route: &Route, s_range: (f64, f64), side: Option<f64>) -> Obstacle<f64> {
    let s = rng.random_range(s_range.0..s_range.1);
    let sign = side.unwrap_or(if rng.random_bool(0.5) { 1.0 } else { -1.0 });
    let (kind, radius) = if rng.random_bool(0.6) {
        (ObstacleKind::Vehicle, 1.0)
    } else {
        (ObstacleKind::Static, rng.random_range(0.4..1.0))
    };
    let lateral = sign * rng.random_range(3.5..6.0);
    Obstacle::fixed(route.offset_point(s, lateral), radius, kind)
}

fn smooth_step(x: f64) -> f64 {
    let x = x.clamp(0.0, 1.0);
    0.5 - 0.5 * (std::f64::consts::PI * x).cos()
}

/// Deterministic scenario for `(seed, kind)`.
pub fn generate_scenario(seed: u64, kind: ScenarioKind) -> Result<Scenario, SimError> {
    generate_scenario_with(seed, kind, DEFAULT_DURATION, ExpertConfig::default())
}

pub fn generate_scenario_with(
    seed: u64,
    kind: ScenarioKind,
    duration: f64,
    expert_config: ExpertConfig,
) -> Result<Scenario, SimError> {
    let mut last = None;
    for attempt in 0..GENERATION_ATTEMPTS {
        let stream = anchor_seed(seed, kind.index() * 1000 + attempt);
        let mut sc = layout(seed, kind, duration, expert_config, &mut ChaCha8Rng::seed_from_u64(stream), None);
        let mut result = sc.rollout();
        let relayout = match kind {
            ScenarioKind::OvertakeStatic => true,
            ScenarioKind::YieldDynamic => !sc.salient(),
            _ => false,
        };
        if result.is_ok() && relayout {
            // Move the blocker or parked car to where the expert is at a regulator query.
            let anchor = sc.expert[SALIENT_TICKS[1].min(sc.expert.len() - 1)].p_x;
            sc = layout(seed, kind, duration, expert_config, &mut ChaCha8Rng::seed_from_u64(stream), Some(anchor));
            result = sc.rollout();
        }
        match result {
            Ok(()) if !kind.is_dense() || sc.salient() => return Ok(sc),
            Ok(()) => log::debug!("scenario {seed}/{kind} attempt {attempt}: no obstacle near a query tick"),
            Err(e) => {
                log::debug!("scenario {seed}/{kind} attempt {attempt}: {e}");
                last = Some(e);
            }
        }
    }
    Err(last.unwrap_or(SimError::ExpertCollision { seed, clearance: 0.0 }))
}

fn layout<R: Rng>(
    seed: u64,
    kind: ScenarioKind,
    duration: f64,
    expert_config: ExpertConfig,
    rng: &mut R,
    anchor: Option<f64>,
) -> Scenario {
    use ScenarioKind::*;
    let cruise = match kind {
        Straight => rng.random_range(7.0..13.0),
        LeftTurn | RightTurn => rng.random_range(5.0..8.0),
        Stop => rng.random_range(7.0..11.0),
        OvertakeStatic | YieldDynamic => rng.random_range(6.0..10.0),
    };
    let v0 = cruise * rng.random_range(0.6..1.0);
    let length = cruise * (duration + LABEL_HORIZON) + 100.0;
    let mut obstacles = Vec::new();
    let mut stop_s = None;

    let route = match kind {
        Straight => {
            let route = Route::straight(length);
            for _ in 0..rng.random_range(0..=2usize) {
                obstacles.push(roadside(rng, &route, (15.0, 150.0), None));
            }
            if rng.random_bool(0.5) {
                let side = if rng.random_bool(0.5) { 3.5 } else { -3.5 };
                let speed = rng.random_range(3.0..10.0);
                obstacles.push(Obstacle {
                    center: [rng.random_range(20.0..80.0), side],
                    radius: 1.0,
                    velocity: [speed, 0.0],
                    kind: ObstacleKind::Vehicle,
                });
            }
            route
        }
        LeftTurn | RightTurn => {
            let lead = rng.random_range(20.0..60.0);
            let radius = rng.random_range(15.0..30.0);
            let route = Route::quarter_turn(lead, radius, kind == LeftTurn, length);
            for _ in 0..rng.random_range(0..=2usize) {
                obstacles.push(roadside(rng, &route, (15.0, 120.0), None));
            }
            route
        }
        Stop => {
            let route = Route::straight(length);
            let min_stop = (v0 * v0 / (2.0 * expert_config.decel) + 15.0).max(40.0);
            stop_s = Some(rng.random_range(min_stop..min_stop.max(80.0) + 1.0));
            for _ in 0..rng.random_range(0..=2usize) {
                obstacles.push(roadside(rng, &route, (15.0, 100.0), None));
            }
            route
        }
        OvertakeStatic => {
            let jitter = rng.random_range(-4.0..4.0);
            let sb = anchor.map_or(cruise * 5.0 + rng.random_range(0.0..10.0), |a| a + jitter);
            let shift = 3.5;
            let ramp = 22.0;
            let hold = 9.0;
            let route = Route::straight_with_offset(length, |x| {
                let up = smooth_step((x - (sb - hold - ramp)) / ramp);
                let down = smooth_step((x - (sb + hold)) / ramp);
                shift * (up - down)
            });
            obstacles.push(Obstacle::fixed([sb, 0.0], 1.0, ObstacleKind::Vehicle));
            obstacles.push(Obstacle::fixed(
                [sb + rng.random_range(15.0..45.0), -rng.random_range(3.5..5.0)],
                1.0,
                ObstacleKind::Vehicle,
            ));
            if rng.random_bool(0.5) && sb - hold - ramp > 20.0 {
                obstacles.push(roadside(rng, &route, (10.0, sb - hold - ramp), Some(-1.0)));
            }
            route
        }
        YieldDynamic => {
            let route = Route::straight(length);
            let sp = v0 * 5.0 * rng.random_range(0.8..1.0);
            let side = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            let vp = rng.random_range(1.2..1.6);
            obstacles.push(Obstacle {
                center: [sp, -side * 6.0],
                radius: 0.5,
                velocity: [0.0, side * vp],
                kind: ObstacleKind::Pedestrian,
            });
            let park_side = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            let gap = rng.random_range(10.0..40.0);
            let jitter = rng.random_range(-3.0..3.0);
            let park = anchor.map_or(sp + gap, |a| a + jitter);
            obstacles.push(Obstacle::fixed(
                [park, park_side * rng.random_range(3.5..4.5)],
                1.0,
                ObstacleKind::Vehicle,
            ));
            route
        }
    };

    let heading = route.heading_at(0.0);
    let initial = BicycleState { v: v0, ..BicycleState::at_rest(0.0, 0.0, heading) };
    let mut sc = Scenario {
        seed,
        kind,
        duration,
        cruise,
        stop_s,
        route,
        obstacles,
        initial,
        scene: SceneContext::straight_road(0.0, 0.0),
        expert: Vec::new(),
        expert_config,
    };
    sc.scene = sc.scene_at(0.0, 0.0);
    sc
}
