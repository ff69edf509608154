use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dynamics::{rollout, DynamicsParams, KinematicState};
use crate::error::{Error, Result};
use crate::scenario::Action;

use super::context::AgentContext;
use super::model::Denoiser;
use super::schedule::NoiseSchedule;
use super::tensor::{posterior_mean, ActionScale, ActionTensor};

/// Adjusts the posterior mean at each reverse step; guidance plugs in here.
pub trait MeanHook {
    fn adjust(&mut self, k: usize, sigma2: f64, a_k: &ActionTensor, mu: &mut ActionTensor) -> Result<()>;
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplerSettings {
    pub t_fut: usize,
    pub dt: f64,
    pub scale: ActionScale,
    pub dynamics: DynamicsParams,
}

impl Default for SamplerSettings {
    fn default() -> Self {
        Self { t_fut: 81, dt: 0.1, scale: ActionScale::default(), dynamics: DynamicsParams::default() }
    }
}

/// One reverse step `A_k -> A_{k-1}`. Noise is drawn only for `k > 1`.
pub fn denoise_step<'h>(
    model: &dyn Denoiser,
    a_k: &ActionTensor,
    k: usize,
    ctx: &[AgentContext],
    sched: &NoiseSchedule,
    rng: &mut ChaCha8Rng,
    hook: Option<&mut (dyn MeanHook + 'h)>,
) -> Result<ActionTensor> {
    let a0 = model.denoise(a_k, k, ctx)?;
    let mut mu = posterior_mean(&a0, a_k, k, sched)?;
    let var = sched.posterior_var(k)?;
    if let Some(h) = hook {
        h.adjust(k, var, a_k, &mut mu)?;
    }
    let next = if k > 1 {
        let eps = ActionTensor::standard_normal(mu.agents(), mu.steps(), rng);
        mu.lincomb(1.0, &eps, var.sqrt())?
    } else {
        mu
    };
    if !next.is_finite() {
        return Err(Error::Numeric(format!("non-finite actions at diffusion step {k}")));
    }
    Ok(next)
}

/// Full reverse process from standard-normal `A_K`, in diffusion coordinates.
pub fn sample_diffusion<'h>(
    model: &dyn Denoiser,
    ctx: &[AgentContext],
    t_fut: usize,
    sched: &NoiseSchedule,
    rng: &mut ChaCha8Rng,
    mut hook: Option<&mut (dyn MeanHook + 'h)>,
) -> Result<ActionTensor> {
    let mut a = ActionTensor::standard_normal(ctx.len(), t_fut, rng);
    for k in (1..=sched.steps()).rev() {
        a = denoise_step(model, &a, k, ctx, sched, rng, hook.as_deref_mut())?;
    }
    Ok(a)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SampleOutput {
    pub diffusion: ActionTensor,
    pub actions: Vec<Vec<Action>>,
    /// Rollout of each agent's actions from its current state; excludes the
    /// current state.
    pub trajectories: Vec<Vec<KinematicState>>,
}

/// Converts a diffusion-space tensor to physical actions and rolls each
/// agent out from its context state.
pub fn realize(diffusion: ActionTensor, ctx: &[AgentContext], settings: &SamplerSettings) -> Result<SampleOutput> {
    let mut actions = Vec::with_capacity(ctx.len());
    let mut trajectories = Vec::with_capacity(ctx.len());
    for (i, c) in ctx.iter().enumerate() {
        let acts = settings.scale.to_physical(diffusion.row(i));
        let (traj, _) = rollout(&c.state, &acts, settings.dt, &settings.dynamics)?;
        actions.push(acts);
        trajectories.push(traj);
    }
    Ok(SampleOutput { diffusion, actions, trajectories })
}

/// Unguided sampling for every agent in `ctx`; deterministic per seed.
pub fn sample(
    model: &dyn Denoiser,
    ctx: &[AgentContext],
    seed: u64,
    sched: &NoiseSchedule,
    settings: &SamplerSettings,
) -> Result<SampleOutput> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = sample_diffusion(model, ctx, settings.t_fut, sched, &mut rng, None)?;
    realize(a, ctx, settings)
}
