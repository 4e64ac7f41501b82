use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::comfort::{comfort_index_anchored, ComfortReport, ComfortWeights, COMFORT_HORIZONS, DEFAULT_ALPHA};
use crate::scene::SceneContext;
use crate::scorer::{select_best, ScorerConfig, ScorerWeights};
use crate::traj::{min_obstacle_distance_with, Trajectory, CANONICAL_DT, DEFAULT_EGO_RADIUS};

use super::dataset::expert_conditions;
use super::episode::{run_closed_loop, CandidatePlanner, ClosedLoopConfig, DiffusionCandidates, EpisodeLog, PlanContext, TickRecord};
use super::scenario::Scenario;
use super::SimError;

const HORIZONS: [f64; 3] = [1.0, 2.0, 3.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub episodes: usize,
    pub ticks: usize,
    /// Metres at 1, 2 and 3 s.
    pub l2: [f64; 3],
    pub l2_avg: f64,
    /// Percent of ticks at 1, 2 and 3 s.
    pub collision: [f64; 3],
    pub collision_avg: f64,
    pub hard_collision_episodes: usize,
    pub comfort: ComfortReport<f64>,
    /// Ticks per wall-clock second, when measured.
    pub fps: Option<f64>,
}

pub const METRICS_CSV_HEADER: &str =
    "episodes,ticks,l2_1s,l2_2s,l2_3s,l2_avg,coll_1s,coll_2s,coll_3s,coll_avg,hard_collisions,comfort_c_1s,comfort_c_2s,comfort_c_3s,comfort_p_1s,comfort_p_2s,comfort_p_3s";

impl EvalMetrics {
    pub fn csv_row(&self) -> String {
        let h = &self.comfort.horizons;
        format!(
            "{},{},{:.6},{:.6},{:.6},{:.6},{:.4},{:.4},{:.4},{:.4},{},{:.6},{:.6},{:.6},{:.4},{:.4},{:.4}",
            self.episodes,
            self.ticks,
            self.l2[0],
            self.l2[1],
            self.l2[2],
            self.l2_avg,
            self.collision[0],
            self.collision[1],
            self.collision[2],
            self.collision_avg,
            self.hard_collision_episodes,
            h[0].c,
            h[1].c,
            h[2].c,
            h[0].c_p,
            h[1].c_p,
            h[2].c_p,
        )
    }

    /// Header and one row. Wall-clock rate is left out so that the file is reproducible.
    pub fn to_csv(&self) -> String {
        format!("{METRICS_CSV_HEADER}\n{}\n", self.csv_row())
    }
}

/// Index of the plan point at `h` seconds.
fn horizon_index(h: f64) -> usize {
    (h / CANONICAL_DT).round() as usize - 1
}

/// True when the plan truncated at `h` seconds penetrates any obstacle.
pub fn plan_collides(plan: &Trajectory<f64>, obstacles: &[crate::scene::Obstacle<f64>], h: f64) -> bool {
    if obstacles.is_empty() {
        return false;
    }
    let cut = plan.truncated(h);
    let scene = SceneContext { obstacles: obstacles.to_vec(), ..SceneContext::straight_road(0.0, 0.0) };
    min_obstacle_distance_with(&cut, &scene, DEFAULT_EGO_RADIUS) <= 0.0
}

struct TickEval {
    l2: [f64; 3],
    coll: [bool; 3],
    comfort: Option<[f64; 3]>,
}

fn eval_tick(rec: &TickRecord, weights: &ComfortWeights<f64>) -> TickEval {
    let plan = rec.selected_world();
    let mut l2 = [0.0; 3];
    let mut coll = [false; 3];
    for (k, &h) in HORIZONS.iter().enumerate() {
        let i = horizon_index(h);
        let (p, q) = (&plan.points[i], &rec.expert_future.points[i]);
        l2[k] = ((p.x - q.x).powi(2) + (p.y - q.y).powi(2)).sqrt();
        coll[k] = plan_collides(&plan, &rec.obstacles, h);
    }
    let comfort = comfort_index_anchored(
        &plan,
        &rec.ego.ego_status(),
        &rec.expert_future,
        &rec.expert_state.ego_status(),
        weights,
        DEFAULT_ALPHA,
    )
    .ok()
    .map(|r| [r.horizons[0].c, r.horizons[1].c, r.horizons[2].c]);
    TickEval { l2, coll, comfort }
}

/// Aggregates logged episodes into L2, collision-rate and comfort metrics.
pub fn evaluate(episodes: &[EpisodeLog]) -> Result<EvalMetrics, SimError> {
    if episodes.is_empty() {
        return Err(SimError::NoEpisodes);
    }
    let weights = ComfortWeights::default();
    let per: Vec<Vec<TickEval>> =
        episodes.par_iter().map(|e| e.ticks.iter().map(|r| eval_tick(r, &weights)).collect()).collect();
    let mut l2 = [0.0; 3];
    let mut coll = [0usize; 3];
    let mut comfort = [0.0; 3];
    let mut comfort_n = 0usize;
    let mut n = 0usize;
    for t in per.iter().flatten() {
        n += 1;
        for k in 0..3 {
            l2[k] += t.l2[k];
            coll[k] += t.coll[k] as usize;
        }
        if let Some(c) = t.comfort {
            comfort_n += 1;
            for k in 0..3 {
                comfort[k] += c[k];
            }
        }
    }
    let nf = n.max(1) as f64;
    let l2 = l2.map(|v| v / nf);
    let collision = coll.map(|c| 100.0 * c as f64 / nf);
    let comfort = comfort.map(|c| c / comfort_n.max(1) as f64);
    Ok(EvalMetrics {
        episodes: episodes.len(),
        ticks: n,
        l2,
        l2_avg: l2.iter().sum::<f64>() / 3.0,
        collision,
        collision_avg: collision.iter().sum::<f64>() / 3.0,
        hard_collision_episodes: episodes.iter().filter(|e| e.hard_collision).count(),
        comfort: ComfortReport::from_indices(&COMFORT_HORIZONS, &comfort, DEFAULT_ALPHA),
        fps: None,
    })
}

/// Runs every scenario with the same planner and configuration; the results
/// are in scenario order regardless of thread scheduling.
pub fn run_benchmark(
    scenarios: &[Scenario],
    planner: &dyn CandidatePlanner,
    config: &ClosedLoopConfig,
) -> Result<Vec<EpisodeLog>, SimError> {
    scenarios.par_iter().map(|sc| run_closed_loop(sc, planner, config)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub anchors: usize,
    pub metrics: EvalMetrics,
}

pub const ABLATION_CSV_HEADER: &str = "anchors,l2_1s,l2_2s,l2_3s,l2_avg,coll_1s,coll_2s,coll_3s,coll_avg";

pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut out = format!("{ABLATION_CSV_HEADER}\n");
    for r in rows {
        let m = &r.metrics;
        out.push_str(&format!(
            "{},{:.6},{:.6},{:.6},{:.6},{:.4},{:.4},{:.4},{:.4}\n",
            r.anchors, m.l2[0], m.l2[1], m.l2[2], m.l2_avg, m.collision[0], m.collision[1], m.collision[2], m.collision_avg
        ));
    }
    out
}

/// Closed-loop metrics per anchor count on shared scenarios and seeds.
pub fn ablate_anchors(
    counts: &[usize],
    scenarios: &[Scenario],
    base: &DiffusionCandidates,
    config: &ClosedLoopConfig,
) -> Result<Vec<AblationRow>, SimError> {
    if counts.is_empty() {
        return Err(SimError::InvalidArgument("anchor counts must not be empty".into()));
    }
    counts
        .iter()
        .map(|&anchors| {
            let planner = DiffusionCandidates { planner: base.planner.clone(), anchors, sampler: base.sampler };
            let logs = run_benchmark(scenarios, &planner, config)?;
            Ok(AblationRow { anchors, metrics: evaluate(&logs)? })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpenLoopMetrics {
    pub samples: usize,
    pub l2: [f64; 3],
    pub l2_avg: f64,
}

/// Plans from expert states with expert plan history and compares the
/// selected candidate with the expert future.
pub fn open_loop_eval(
    scenarios: &[Scenario],
    planner: &dyn CandidatePlanner,
    weights: &ScorerWeights<f64>,
    scorer: &ScorerConfig<f64>,
    seed: u64,
) -> Result<OpenLoopMetrics, SimError> {
    let layout = planner.layout();
    let per: Vec<Vec<[f64; 3]>> = scenarios
        .par_iter()
        .map(|sc| -> Result<Vec<[f64; 3]>, SimError> {
            let conds = expert_conditions(sc, &layout)?;
            let mut out = Vec::with_capacity(conds.len());
            let mut s = 0.0;
            for (i, (cond, ego)) in conds.iter().enumerate() {
                s = sc.arc_length(ego.position, Some(s));
                let scene = sc.scene_at(Scenario::tick_time(i), s);
                let ctx = PlanContext {
                    scenario: sc,
                    tick: i,
                    ego,
                    condition: cond,
                    seed: crate::diffusion::sampler::anchor_seed(seed ^ sc.seed, i),
                };
                let cands = planner.candidates(&ctx)?;
                let (best, _) = select_best(&cands, &scene, ego, weights, scorer)?;
                let plan = cands[best].to_world(&ego.pose());
                let truth = sc.expert_future(i);
                let mut row = [0.0; 3];
                for (k, &h) in HORIZONS.iter().enumerate() {
                    let j = horizon_index(h);
                    row[k] = ((plan.points[j].x - truth.points[j].x).powi(2) + (plan.points[j].y - truth.points[j].y).powi(2)).sqrt();
                }
                out.push(row);
            }
            Ok(out)
        })
        .collect::<Result<_, _>>()?;
    let rows: Vec<[f64; 3]> = per.into_iter().flatten().collect();
    if rows.is_empty() {
        return Err(SimError::NoEpisodes);
    }
    let n = rows.len() as f64;
    let mut l2 = [0.0; 3];
    for r in &rows {
        for k in 0..3 {
            l2[k] += r[k] / n;
        }
    }
    Ok(OpenLoopMetrics { samples: rows.len(), l2, l2_avg: l2.iter().sum::<f64>() / 3.0 })
}

/// Brute-force disc check of a logged tick, independent of the scorer code.
pub fn recheck_collision(rec: &TickRecord, h: f64) -> bool {
    let plan = rec.selected_world();
    plan.points.iter().filter(|w| w.t <= h + 1e-9).any(|w| {
        rec.obstacles.iter().any(|o| {
            let c = [o.center[0] + o.velocity[0] * w.t, o.center[1] + o.velocity[1] * w.t];
            ((w.x - c[0]).powi(2) + (w.y - c[1]).powi(2)).sqrt() <= o.radius + DEFAULT_EGO_RADIUS
        })
    })
}
