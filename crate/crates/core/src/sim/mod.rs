//! Closed-loop synthetic driving benchmark.
//!
//! Scenarios are generated from a seed and a kind, rolled out by a scripted
//! expert on a kinematic bicycle, and replayed in closed loop with a
//! candidate planner, the rule-based scorer and the style regulator.

pub mod bicycle;
pub mod dataset;
pub mod episode;
pub mod metrics;
pub mod route;
pub mod scenario;

use thiserror::Error;

use crate::diffusion::DiffusionError;
use crate::scorer::ScoreError;
use crate::traj::TrajError;

pub use bicycle::{bicycle_step, Controls, MAX_STEER};
pub use dataset::{build_dataset, build_dataset_with, scenario_set, Dataset, DatasetOptions};
pub use episode::{
    run_closed_loop, CandidatePlanner, ClosedLoopConfig, DiffusionCandidates, EpisodeLog, ExpertPlayback, RegulatorMode,
    Selection, Standstill, TickRecord,
};
pub use metrics::{ablate_anchors, ablation_csv, evaluate, open_loop_eval, run_benchmark, AblationRow, EvalMetrics, OpenLoopMetrics};
pub use route::Route;
pub use scenario::{generate_scenario, generate_scenario_with, ExpertConfig, Scenario, ScenarioKind};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("expert collided in scenario {seed} (clearance {clearance:.3} m)")]
    ExpertCollision { seed: u64, clearance: f64 },
    #[error("unknown scenario kind '{0}'")]
    UnknownKind(String),
    #[error("empty dataset")]
    EmptyDataset,
    #[error("no episodes to evaluate")]
    NoEpisodes,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("dataset format: {0}")]
    Format(String),
    #[error("io: {0}")]
    Io(String),
    #[error(transparent)]
    Diffusion(#[from] DiffusionError),
    #[error(transparent)]
    Score(#[from] ScoreError),
    #[error(transparent)]
    Trajectory(#[from] TrajError),
}

impl From<std::io::Error> for SimError {
    fn from(e: std::io::Error) -> Self {
        SimError::Io(e.to_string())
    }
}
