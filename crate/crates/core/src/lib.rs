//! Diffusion-based trajectory planning, rule-based trajectory scoring with
//! driving-style regulation, a kinematic comfort metric, and a closed-loop
//! synthetic driving benchmark.
//!
//! The numeric core is generic over the scalar type ([`Real`], implemented for
//! `f32` and `f64`). The aliases at the crate root fix the scalar to `f64`,
//! which is what the simulator and the command line tool use.

pub mod comfort;
pub mod diffusion;
pub mod num;
pub mod regulator;
pub mod scene;
pub mod scorer;
pub mod sim;
pub mod traj;

pub use num::{wrap_angle, Real};

pub type Trajectory64 = traj::Trajectory<f64>;
pub type Trajectory32 = traj::Trajectory<f32>;
pub type EgoStatus64 = traj::EgoStatus<f64>;
pub type BicycleState64 = traj::BicycleState<f64>;
pub type KinematicProfile64 = traj::KinematicProfile<f64>;
pub type SceneContext64 = scene::SceneContext<f64>;
pub type ConditionVector64 = scene::ConditionVector<f64>;
pub type ScorerWeights64 = scorer::ScorerWeights<f64>;
pub type CostBreakdown64 = scorer::CostBreakdown<f64>;
pub type ComfortReport64 = comfort::ComfortReport<f64>;
pub type TrajectoryBatch64 = diffusion::TrajectoryBatch<f64>;
pub type NoiseSchedule64 = diffusion::NoiseSchedule<f64>;
pub type Denoiser64 = diffusion::Denoiser<f64>;
pub type PlannerCheckpoint64 = diffusion::PlannerCheckpoint<f64>;
pub type Planner64 = diffusion::Planner<f64>;
