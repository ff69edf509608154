//! Action-space DDPM: noise schedules, forward and reverse processes, the
//! MLP denoiser with its auxiliary heads, training and checkpoints.
//!
//! The diffusion variable is the per-agent action sequence divided
//! elementwise by an [`ActionScale`], so that the clean data has roughly unit
//! spread in both dimensions.

pub mod checkpoint;
pub mod context;
pub mod loss;
pub mod model;
pub mod nn;
pub mod sampler;
pub mod schedule;
pub mod tensor;
pub mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use context::{candidate_goals, encode_context, scenario_context, AgentContext, CandidateGoals};
pub use loss::{compute_losses, LossWeights, Losses, NoiseDraw, Sample};
pub use model::{Denoiser, DenoiserModel, LinearDenoiser, ModelConfig, OracleDenoiser};
pub use sampler::{denoise_step, sample, MeanHook, SampleOutput, SamplerSettings};
pub use schedule::{make_schedule, NoiseSchedule, ScheduleKind};
pub use tensor::{forward_diffuse, posterior_mean, posterior_var, ActionScale, ActionTensor};
pub use train::{scenario_samples, train, LossCurve, SceneSamples, TrainConfig};
