//! Conditional denoising diffusion planner.
//!
//! A small residual 1-D convolution network predicts the noise in a batch of
//! normalized `[B, Na, 6, 2]` ego-frame trajectories. The condition enters
//! every block through FiLM. Sampling runs either the full ancestral chain
//! or a strided deterministic DDIM chain; every anchor owns its noise stream.

pub mod batch;
pub mod checkpoint;
pub mod denoiser;
pub mod sampler;
pub mod schedule;
pub mod train;

use thiserror::Error;

pub use batch::TrajectoryBatch;
pub use checkpoint::{Normalization, Planner, PlannerCheckpoint, SamplerConfig, TrainMetadata};
pub use denoiser::{Denoiser, DenoiserConfig, NoisePredictor};
pub use sampler::{ddim_timesteps, ddpm_update, denoise_step, forward_noise, predict_clean, sample_ddim, sample_ddpm};
pub use schedule::{NoiseSchedule, ScheduleConfig};
pub use train::{train, TrainConfig};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DiffusionError {
    #[error("shape mismatch: expected {expected:?}, found {found:?}")]
    ShapeMismatch { expected: Vec<usize>, found: Vec<usize> },
    #[error("step {k} out of range for a {steps}-step schedule")]
    StepOutOfRange { k: usize, steps: usize },
    #[error("{n} inference steps out of range 1..={steps}")]
    StepsOutOfRange { n: usize, steps: usize },
    #[error("empty dataset")]
    EmptyDataset,
    #[error("label {0} is not a canonical 6-point, 0.5 s trajectory")]
    NonCanonicalTrajectory(usize),
    #[error("checkpoint has no normalization statistics")]
    UntrainedCheckpoint,
    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("checkpoint io: {0}")]
    Io(String),
}
