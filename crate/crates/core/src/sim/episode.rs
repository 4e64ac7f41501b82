use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diffusion::checkpoint::{Planner, PlannerCheckpoint, SamplerConfig};
use crate::diffusion::sampler::anchor_seed;
use crate::regulator::{DirectiveRecord, HttpProvider, StyleRegulator, DEFAULT_PROVIDER_TIMEOUT_MS, PROMPT_TEMPLATE_ID};
use crate::scene::{encode_condition, ConditionLayout, ConditionVector, HistoryBuffer, Obstacle, Target};
use crate::scorer::{select_best, CostBreakdown, ScorerConfig, ScorerWeights};
use crate::traj::{BicycleState, EgoStatus, Trajectory, CANONICAL_DT, CANONICAL_POINTS, DEFAULT_WHEELBASE};

use super::bicycle::{bicycle_step, Controls};
use super::scenario::{pursuit_steer_rate, Scenario, ScenarioKind};
use super::SimError;

/// Inputs a candidate generator sees at one tick.
pub struct PlanContext<'a> {
    pub scenario: &'a Scenario,
    pub tick: usize,
    pub ego: &'a EgoStatus<f64>,
    pub condition: &'a ConditionVector<f64>,
    pub seed: u64,
}

/// Produces ego-frame candidate trajectories.
pub trait CandidatePlanner: Sync {
    fn candidates(&self, ctx: &PlanContext<'_>) -> Result<Vec<Trajectory<f64>>, SimError>;

    fn layout(&self) -> ConditionLayout {
        ConditionLayout::default()
    }
}

/// Diffusion planner with a fixed anchor count and sampler.
pub struct DiffusionCandidates {
    pub planner: Planner<f64>,
    pub anchors: usize,
    pub sampler: SamplerConfig,
}

impl DiffusionCandidates {
    pub fn from_checkpoint(ck: &PlannerCheckpoint<f64>, anchors: usize, sampler: SamplerConfig) -> Result<Self, SimError> {
        Ok(DiffusionCandidates { planner: ck.planner()?, anchors, sampler })
    }
}

impl CandidatePlanner for DiffusionCandidates {
    fn candidates(&self, ctx: &PlanContext<'_>) -> Result<Vec<Trajectory<f64>>, SimError> {
        Ok(self.planner.candidates(ctx.condition, self.anchors, self.sampler, ctx.seed)?)
    }

    fn layout(&self) -> ConditionLayout {
        self.planner.layout
    }
}

/// The expert's own future from the current absolute time.
pub struct ExpertPlayback;

impl CandidatePlanner for ExpertPlayback {
    fn candidates(&self, ctx: &PlanContext<'_>) -> Result<Vec<Trajectory<f64>>, SimError> {
        Ok(vec![ctx.scenario.expert_future(ctx.tick).to_local(&ctx.ego.pose())])
    }
}

/// Holds the current position for the whole horizon.
pub struct Standstill;

impl CandidatePlanner for Standstill {
    fn candidates(&self, _ctx: &PlanContext<'_>) -> Result<Vec<Trajectory<f64>>, SimError> {
        Ok(vec![Trajectory::from_xy(&[[0.0, 0.0]; CANONICAL_POINTS], CANONICAL_DT)])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Selection {
    Scorer,
    /// Uniformly random candidate, seeded per tick.
    Random,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RegulatorMode {
    #[default]
    Off,
    Mock,
    Http { url: String, timeout_ms: u64, template: Option<String> },
}

impl RegulatorMode {
    pub fn http(url: impl Into<String>) -> Self {
        RegulatorMode::Http { url: url.into(), timeout_ms: DEFAULT_PROVIDER_TIMEOUT_MS, template: None }
    }

    fn build(&self, weights: ScorerWeights<f64>) -> Option<StyleRegulator<f64>> {
        match self {
            RegulatorMode::Off => None,
            RegulatorMode::Mock => Some(StyleRegulator::mock(weights)),
            RegulatorMode::Http { url, timeout_ms, template } => {
                let mut p = HttpProvider::new(url.clone(), Duration::from_millis(*timeout_ms));
                if let Some(t) = template {
                    p = p.with_template(PROMPT_TEMPLATE_ID, t.clone());
                }
                Some(StyleRegulator::new(Box::new(p), weights))
            }
        }
    }
}

/// Receding-horizon tracker of the selected plan.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackerConfig {
    pub substeps: usize,
    pub lookahead_time: f64,
    pub min_lookahead: f64,
    pub speed_gain: f64,
    pub position_gain: f64,
    pub steer_rate_max: f64,
    pub accel_min: f64,
    pub accel_max: f64,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        TrackerConfig {
            substeps: 5,
            lookahead_time: 1.0,
            min_lookahead: 2.0,
            speed_gain: 2.0,
            position_gain: 1.0,
            steer_rate_max: 1.0,
            accel_min: -6.0,
            accel_max: 3.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClosedLoopConfig {
    pub seed: u64,
    pub selection: Selection,
    pub regulator: RegulatorMode,
    pub weights: ScorerWeights<f64>,
    pub scorer: ScorerConfig<f64>,
    pub tracker: TrackerConfig,
}

impl Default for ClosedLoopConfig {
    fn default() -> Self {
        ClosedLoopConfig {
            seed: 0,
            selection: Selection::Scorer,
            regulator: RegulatorMode::Mock,
            weights: ScorerWeights::default(),
            scorer: ScorerConfig::default(),
            tracker: TrackerConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TickRecord {
    pub tick: usize,
    pub time: f64,
    pub ego: BicycleState<f64>,
    pub condition: ConditionVector<f64>,
    /// Ego-frame candidates.
    pub candidates: Vec<Trajectory<f64>>,
    pub costs: Vec<CostBreakdown<f64>>,
    pub selected: usize,
    pub weights: ScorerWeights<f64>,
    pub directive: Option<DirectiveRecord<f64>>,
    /// Expert 3 s future in the world frame and the expert state now.
    pub expert_future: Trajectory<f64>,
    pub expert_state: BicycleState<f64>,
    pub obstacles: Vec<Obstacle<f64>>,
    pub target: Target<f64>,
}

impl TickRecord {
    pub fn selected_world(&self) -> Trajectory<f64> {
        self.candidates[self.selected].to_world(&self.ego.ego_status().pose())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLog {
    pub scenario_seed: u64,
    pub kind: ScenarioKind,
    pub duration: f64,
    pub ticks: Vec<TickRecord>,
    pub hard_collision: bool,
    pub collision_time: Option<f64>,
    pub queries: usize,
    pub final_state: BicycleState<f64>,
}

impl EpisodeLog {
    pub fn conservative_directives(&self) -> usize {
        self.ticks
            .iter()
            .filter_map(|t| t.directive.as_ref())
            .filter(|d| d.directive.style == crate::regulator::Style::Conservative)
            .count()
    }
}

/// Position on a plan that starts at `origin` at local time 0.
fn plan_point(origin: [f64; 2], plan: &Trajectory<f64>, tau: f64) -> [f64; 2] {
    let mut prev = (0.0, origin);
    for w in &plan.points {
        if tau <= w.t {
            let span = w.t - prev.0;
            let u = if span > 0.0 { ((tau - prev.0) / span).clamp(0.0, 1.0) } else { 1.0 };
            return [prev.1[0] + u * (w.x - prev.1[0]), prev.1[1] + u * (w.y - prev.1[1])];
        }
        prev = (w.t, [w.x, w.y]);
    }
    prev.1
}

/// Plan speed along `heading`, negative when the plan points backwards.
fn plan_speed(origin: [f64; 2], plan: &Trajectory<f64>, tau: f64, heading: f64) -> f64 {
    let h = 0.25;
    let a = plan_point(origin, plan, (tau - h).max(0.0));
    let b = plan_point(origin, plan, tau + h);
    let span = tau + h - (tau - h).max(0.0);
    ((b[0] - a[0]) * heading.cos() + (b[1] - a[1]) * heading.sin()) / span
}

/// Acceleration between the first two plan segments, ignoring the origin.
fn plan_accel(plan: &Trajectory<f64>, heading: f64) -> f64 {
    let p = &plan.points;
    if p.len() < 3 {
        return 0.0;
    }
    let v = |i: usize| {
        let dt = p[i + 1].t - p[i].t;
        ((p[i + 1].x - p[i].x) * heading.cos() + (p[i + 1].y - p[i].y) * heading.sin()) / dt
    };
    (v(1).max(0.0) - v(0).max(0.0)) / (p[1].t - p[0].t)
}

/// Controls that follow a world-frame plan started at `origin`.
pub fn track_plan(
    state: &BicycleState<f64>,
    origin: [f64; 2],
    plan: &Trajectory<f64>,
    tau: f64,
    dt: f64,
    cfg: &TrackerConfig,
) -> Controls<f64> {
    let p = state.position();
    let mut la = plan_point(origin, plan, tau + cfg.lookahead_time);
    let mut d = ((la[0] - p[0]).powi(2) + (la[1] - p[1]).powi(2)).sqrt();
    let mut extra = cfg.lookahead_time;
    while d < cfg.min_lookahead && extra < 3.0 {
        extra += 0.5;
        la = plan_point(origin, plan, tau + extra);
        d = ((la[0] - p[0]).powi(2) + (la[1] - p[1]).powi(2)).sqrt();
    }
    let steer_rate = if d < 0.5 { 0.0 } else { pursuit_steer_rate(state, la, cfg.steer_rate_max, dt) };

    let v_des = plan_speed(origin, plan, tau + dt, state.theta).max(0.0);
    let a_ff = plan_accel(plan, state.theta);
    let here = plan_point(origin, plan, tau);
    let along = (here[0] - p[0]) * state.theta.cos() + (here[1] - p[1]) * state.theta.sin();
    let accel = if v_des < 0.05 && along < 0.3 {
        (-state.v / dt).max(cfg.accel_min)
    } else {
        (a_ff + cfg.speed_gain * (v_des - state.v) + cfg.position_gain * along).clamp(cfg.accel_min, cfg.accel_max)
    };
    Controls::new(accel, steer_rate)
}

fn tick_seed(seed: u64, scenario: u64, tick: usize) -> u64 {
    anchor_seed(seed ^ scenario.rotate_left(17), tick)
}

/// Runs one episode: plan, score, select, track, replan every 0.5 s.
pub fn run_closed_loop(
    scenario: &Scenario,
    planner: &dyn CandidatePlanner,
    config: &ClosedLoopConfig,
) -> Result<EpisodeLog, SimError> {
    let layout = planner.layout();
    let mut regulator = config.regulator.build(config.weights);
    let mut history = HistoryBuffer::new(layout.history);
    let mut state = scenario.initial;
    let mut s = 0.0;
    let mut ticks = Vec::with_capacity(scenario.n_ticks());
    let mut collision_time = None;
    let dt = CANONICAL_DT / config.tracker.substeps.max(1) as f64;

    for tick in 0..scenario.n_ticks() {
        let t = Scenario::tick_time(tick);
        let ego = state.ego_status();
        s = scenario.arc_length(state.position(), Some(s));
        let scene = scenario.scene_at(t, s);
        let condition = encode_condition(&scene, &ego, &history, &layout);
        let seed = tick_seed(config.seed, scenario.seed, tick);

        let directive = match regulator.as_mut() {
            Some(r) => r.tick(t + CANONICAL_DT, &scene, &ego).cloned(),
            None => None,
        };
        let weights = regulator.as_ref().map_or(config.weights, |r| r.weights());

        let ctx = PlanContext { scenario, tick, ego: &ego, condition: &condition, seed };
        let candidates = planner.candidates(&ctx)?;
        let (best, costs) = select_best(&candidates, &scene, &ego, &weights, &config.scorer)?;
        let selected = match config.selection {
            Selection::Scorer => best,
            Selection::Random => ChaCha8Rng::seed_from_u64(seed ^ 0xA5A5).random_range(0..candidates.len()),
        };
        let plan = candidates[selected].to_world(&ego.pose());

        ticks.push(TickRecord {
            tick,
            time: t,
            ego: state,
            condition,
            candidates,
            costs,
            selected,
            weights,
            directive,
            expert_future: scenario.expert_future(tick),
            expert_state: scenario.expert[tick],
            obstacles: scene.obstacles,
            target: scene.target,
        });
        history.push(t, plan.clone(), &ego, DEFAULT_WHEELBASE)?;

        let origin = state.position();
        for j in 0..config.tracker.substeps {
            let tau = j as f64 * dt;
            let u = track_plan(&state, origin, &plan, tau, dt, &config.tracker);
            state = bicycle_step(&state, u, dt, DEFAULT_WHEELBASE);
            if collision_time.is_none() && scenario.clearance(state.position(), t + tau + dt) <= 0.0 {
                collision_time = Some(t + tau + dt);
            }
        }
        if collision_time.is_some() {
            break;
        }
    }

    Ok(EpisodeLog {
        scenario_seed: scenario.seed,
        kind: scenario.kind,
        duration: scenario.duration,
        ticks,
        hard_collision: collision_time.is_some(),
        collision_time,
        queries: regulator.as_ref().map_or(0, |r| r.query_count()),
        final_state: state,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plan_interpolation() {
        let plan = Trajectory::from_xy(&[[1.0, 0.0], [2.0, 0.0], [3.0, 0.0], [4.0, 0.0], [5.0, 0.0], [6.0, 0.0]], 0.5);
        assert_eq!(plan_point([0.0, 0.0], &plan, 0.0), [0.0, 0.0]);
        assert_eq!(plan_point([0.0, 0.0], &plan, 0.25), [0.5, 0.0]);
        assert_eq!(plan_point([0.0, 0.0], &plan, 9.0), [6.0, 0.0]);
        assert!((plan_speed([0.0, 0.0], &plan, 1.0, 0.0) - 2.0).abs() < 1e-12);
        assert!((plan_speed([0.0, 0.0], &plan, 1.0, std::f64::consts::PI) + 2.0).abs() < 1e-12);
    }
}
