use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diffusion::sampler::{denoise_step, realize, sample_diffusion};
use crate::diffusion::{ActionTensor, AgentContext, Denoiser, MeanHook, NoiseSchedule, SampleOutput, SamplerSettings};
use crate::error::Result;

use super::plan::GuidancePlan;
use super::templates::{g_total, guidance_gradient, AgentPrediction, GradientInputs, GuidanceEval, GuidanceState};

/// Where the guidance objective is evaluated during a reverse step.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GuidanceVariant {
    /// On the rollout of the posterior mean itself.
    #[default]
    Noised,
    /// On the rollout of the denoiser's clean estimate from the mean, with
    /// the gradient chained through the denoiser.
    Denoised,
}

/// A plan bound to one replan.
#[derive(Clone, Debug)]
pub struct GuidanceSetup<'a> {
    pub plan: &'a GuidancePlan,
    pub t_sim: usize,
    pub state: GuidanceState,
    pub variant: GuidanceVariant,
}

struct GuidanceHook<'a> {
    setup: &'a GuidanceSetup<'a>,
    model: &'a dyn Denoiser,
    ctx: &'a [AgentContext],
    settings: &'a SamplerSettings,
}

impl GuidanceHook<'_> {
    fn inputs<'b>(&'b self, ids: &'b [crate::scenario::AgentId], initial: &'b [crate::dynamics::KinematicState]) -> GradientInputs<'b> {
        GradientInputs {
            plan: self.setup.plan,
            t_sim: self.setup.t_sim,
            state: &self.setup.state,
            ids,
            initial,
            scale: self.settings.scale,
            dt: self.settings.dt,
            dynamics: self.settings.dynamics,
        }
    }
}

impl MeanHook for GuidanceHook<'_> {
    fn adjust(&mut self, k: usize, sigma2: f64, _a_k: &ActionTensor, mu: &mut ActionTensor) -> Result<()> {
        let plan = self.setup.plan;
        if k > plan.k_guide_start || plan.n_guide == 0 || plan.lambda == 0.0 {
            return Ok(());
        }
        let ids: Vec<_> = self.ctx.iter().map(|c| c.id).collect();
        let initial: Vec<_> = self.ctx.iter().map(|c| c.state).collect();
        let inp = self.inputs(&ids, &initial);
        for _ in 0..plan.n_guide {
            let grad = match self.setup.variant {
                GuidanceVariant::Noised => guidance_gradient(mu, &inp)?.1,
                GuidanceVariant::Denoised => {
                    let x0 = self.model.denoise(mu, k, self.ctx)?;
                    let (_, g) = guidance_gradient(&x0, &inp)?;
                    if g.data().iter().all(|v| *v == 0.0) {
                        g
                    } else {
                        self.model.denoise_vjp(mu, k, self.ctx, &g)?
                    }
                }
            };
            // A zero gradient leaves the mean bit-identical to unguided.
            if grad.data().iter().all(|v| *v == 0.0) {
                break;
            }
            *mu = mu.lincomb(1.0, &grad, plan.lambda * sigma2)?;
        }
        Ok(())
    }
}

/// One reverse step with guidance applied to the posterior mean when
/// `k <= k_guide_start`.
#[allow(clippy::too_many_arguments)]
pub fn guided_denoise_step(
    model: &dyn Denoiser,
    a_k: &ActionTensor,
    k: usize,
    ctx: &[AgentContext],
    setup: Option<&GuidanceSetup<'_>>,
    sched: &NoiseSchedule,
    settings: &SamplerSettings,
    rng: &mut ChaCha8Rng,
) -> Result<ActionTensor> {
    match setup {
        None => denoise_step(model, a_k, k, ctx, sched, rng, None),
        Some(setup) => {
            let mut hook = GuidanceHook { setup, model, ctx, settings };
            denoise_step(model, a_k, k, ctx, sched, rng, Some(&mut hook))
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GuidedSample {
    pub output: SampleOutput,
    /// Plan evaluated on the final sample, when guided.
    pub eval: Option<GuidanceEval>,
}

/// Full guided reverse process; bit-reproducible per seed and plan.
pub fn guided_sample(
    model: &dyn Denoiser,
    ctx: &[AgentContext],
    setup: Option<&GuidanceSetup<'_>>,
    seed: u64,
    sched: &NoiseSchedule,
    settings: &SamplerSettings,
) -> Result<GuidedSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a0 = match setup {
        None => sample_diffusion(model, ctx, settings.t_fut, sched, &mut rng, None)?,
        Some(setup) => {
            let mut hook = GuidanceHook { setup, model, ctx, settings };
            sample_diffusion(model, ctx, settings.t_fut, sched, &mut rng, Some(&mut hook))?
        }
    };
    let output = realize(a0, ctx, settings)?;
    let eval = match setup {
        None => None,
        Some(s) => {
            let preds: Vec<AgentPrediction> = ctx
                .iter()
                .zip(output.actions.iter().zip(&output.trajectories))
                .map(|(c, (a, t))| AgentPrediction { id: c.id, actions: a.clone(), states: t.clone() })
                .collect();
            Some(g_total(s.plan, &preds, s.t_sim, &s.state)?)
        }
    };
    Ok(GuidedSample { output, eval })
}
