use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::context::{AgentContext, FEATURE_DIM};
use super::nn::Mlp;
use super::schedule::{make_schedule, NoiseSchedule, ScheduleKind};
use super::tensor::{ActionScale, ActionTensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub feature_dim: usize,
    pub hidden: usize,
    pub latent: usize,
    pub k_embed: usize,
    pub t_fut: usize,
    /// Candidate goals per agent.
    pub q: usize,
    pub k_steps: usize,
    pub schedule: ScheduleKind,
    pub scale: ActionScale,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            feature_dim: FEATURE_DIM,
            hidden: 256,
            latent: 128,
            k_embed: 16,
            t_fut: 81,
            q: 6,
            k_steps: 50,
            schedule: ScheduleKind::Cosine,
            scale: ActionScale::default(),
        }
    }
}

impl ModelConfig {
    pub fn action_width(&self) -> usize {
        self.t_fut * 2
    }

    pub fn encoder_sizes(&self) -> Vec<usize> {
        vec![self.feature_dim, self.hidden, self.latent]
    }

    pub fn denoiser_sizes(&self) -> Vec<usize> {
        vec![self.action_width() + self.latent + self.k_embed, self.hidden, self.hidden, self.action_width()]
    }

    pub fn trajectory_sizes(&self) -> Vec<usize> {
        vec![self.latent + 2, self.hidden, self.action_width()]
    }

    pub fn score_sizes(&self) -> Vec<usize> {
        vec![self.latent + 2, self.hidden / 2, 2]
    }

    pub fn check(&self) -> Result<()> {
        if self.q < 2 {
            return Err(Error::Config(format!("need at least 2 candidate goals, got {}", self.q)));
        }
        if self.k_steps < 1 || self.t_fut < 1 || self.hidden < 2 || self.latent < 1 {
            return Err(Error::Config("model sizes must be positive".into()));
        }
        Ok(())
    }
}

/// Sinusoidal embedding of the diffusion step.
pub fn k_embedding(k: usize, dim: usize) -> Vec<f64> {
    let half = dim / 2;
    let mut out = Vec::with_capacity(dim);
    for i in 0..half {
        let freq = 1.0 / 1000f64.powf(i as f64 / half as f64);
        out.push((k as f64 * freq).sin());
        out.push((k as f64 * freq).cos());
    }
    out.resize(dim, 0.0);
    out
}

/// Predicts clean actions (in diffusion coordinates) for every agent row.
pub trait Denoiser: Sync {
    fn denoise(&self, a_k: &ActionTensor, k: usize, ctx: &[AgentContext]) -> Result<ActionTensor>;

    /// Vector-Jacobian product of [`Denoiser::denoise`] with respect to `a_k`.
    fn denoise_vjp(
        &self,
        a_k: &ActionTensor,
        k: usize,
        ctx: &[AgentContext],
        upstream: &ActionTensor,
    ) -> Result<ActionTensor>;

    /// Most likely action sequence (diffusion coordinates) from an auxiliary
    /// trajectory head, if the model has one.
    fn predict_actions(&self, _ctx: &AgentContext) -> Result<Option<Vec<f64>>> {
        Ok(None)
    }
}

/// Context encoder, action denoiser and the two auxiliary heads.
#[derive(Clone, Debug, PartialEq)]
pub struct DenoiserModel {
    pub cfg: ModelConfig,
    pub encoder: Mlp,
    pub denoiser: Mlp,
    pub trajectory: Mlp,
    pub score: Mlp,
}

impl DenoiserModel {
    /// Fresh weights; the denoiser and trajectory output layers start at
    /// zero so untrained predictions are exactly zero actions.
    pub fn new(cfg: ModelConfig, seed: u64) -> Result<Self> {
        cfg.check()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(Self {
            encoder: Mlp::new(&cfg.encoder_sizes(), &mut rng, false),
            denoiser: Mlp::new(&cfg.denoiser_sizes(), &mut rng, true),
            trajectory: Mlp::new(&cfg.trajectory_sizes(), &mut rng, true),
            score: Mlp::new(&cfg.score_sizes(), &mut rng, false),
            cfg,
        })
    }

    pub fn schedule(&self) -> Result<NoiseSchedule> {
        make_schedule(self.cfg.k_steps, self.cfg.schedule)
    }

    pub fn parts(&self) -> [&Mlp; 4] {
        [&self.encoder, &self.denoiser, &self.trajectory, &self.score]
    }

    pub fn parts_mut(&mut self) -> [&mut Mlp; 4] {
        [&mut self.encoder, &mut self.denoiser, &mut self.trajectory, &mut self.score]
    }

    fn check_features(&self, ctx: &AgentContext) -> Result<()> {
        if ctx.features.len() != self.cfg.feature_dim {
            return Err(Error::Shape(format!(
                "agent {} has {} features, model expects {}",
                ctx.id,
                ctx.features.len(),
                self.cfg.feature_dim
            )));
        }
        Ok(())
    }

    pub fn encode(&self, ctx: &AgentContext) -> Result<Vec<f64>> {
        self.check_features(ctx)?;
        Ok(self.encoder.forward(&ctx.features))
    }

    pub fn denoiser_input(&self, a_k: &[f64], k: usize, latent: &[f64]) -> Vec<f64> {
        let mut x = Vec::with_capacity(self.denoiser.input_dim());
        x.extend_from_slice(a_k);
        x.extend_from_slice(latent);
        x.extend(k_embedding(k, self.cfg.k_embed));
        x
    }

    pub fn head_input(latent: &[f64], goal: [f64; 2]) -> Vec<f64> {
        let mut x = latent.to_vec();
        x.extend(goal);
        x
    }

    /// Per-candidate predicted actions (diffusion coordinates), goal
    /// probability logits and drivability logits for one agent.
    pub fn predict_candidates(&self, ctx: &AgentContext) -> Result<Vec<(Vec<f64>, f64, f64)>> {
        let c = self.encode(ctx)?;
        Ok((0..ctx.goals.len())
            .map(|q| {
                let x = Self::head_input(&c, ctx.goal_feature(q));
                let s = self.score.forward(&x);
                (self.trajectory.forward(&x), s[0], s[1])
            })
            .collect())
    }

    fn check_tensor(&self, a_k: &ActionTensor, ctx: &[AgentContext]) -> Result<()> {
        if a_k.agents() != ctx.len() || a_k.steps() != self.cfg.t_fut {
            return Err(Error::Shape(format!(
                "action tensor {:?} does not match {} agents x {} steps",
                a_k.shape(),
                ctx.len(),
                self.cfg.t_fut
            )));
        }
        Ok(())
    }
}

impl Denoiser for DenoiserModel {
    fn denoise(&self, a_k: &ActionTensor, k: usize, ctx: &[AgentContext]) -> Result<ActionTensor> {
        self.check_tensor(a_k, ctx)?;
        let mut out = ActionTensor::zeros(a_k.agents(), a_k.steps());
        for (i, c) in ctx.iter().enumerate() {
            let latent = self.encode(c)?;
            let y = self.denoiser.forward(&self.denoiser_input(a_k.row(i), k, &latent));
            out.row_mut(i).copy_from_slice(&y);
        }
        Ok(out)
    }

    fn denoise_vjp(
        &self,
        a_k: &ActionTensor,
        k: usize,
        ctx: &[AgentContext],
        upstream: &ActionTensor,
    ) -> Result<ActionTensor> {
        self.check_tensor(a_k, ctx)?;
        a_k.check_same_shape(upstream)?;
        let width = self.cfg.action_width();
        let mut out = ActionTensor::zeros(a_k.agents(), a_k.steps());
        let mut scratch = vec![0.0; self.denoiser.params.len()];
        for (i, c) in ctx.iter().enumerate() {
            let latent = self.encode(c)?;
            let (_, tape) = self.denoiser.forward_taped(&self.denoiser_input(a_k.row(i), k, &latent));
            let gx = self.denoiser.backward(&tape, upstream.row(i), &mut scratch);
            out.row_mut(i).copy_from_slice(&gx[..width]);
        }
        Ok(out)
    }

    fn predict_actions(&self, ctx: &AgentContext) -> Result<Option<Vec<f64>>> {
        let cands = self.predict_candidates(ctx)?;
        let best = cands
            .into_iter()
            .enumerate()
            .max_by(|a, b| a.1 .1.total_cmp(&b.1 .1).then(b.0.cmp(&a.0)))
            .map(|(_, c)| c.0);
        Ok(best)
    }
}

/// Always predicts the same clean actions.
#[derive(Clone, Debug, PartialEq)]
pub struct OracleDenoiser {
    pub output: ActionTensor,
}

impl Denoiser for OracleDenoiser {
    fn denoise(&self, a_k: &ActionTensor, _k: usize, _ctx: &[AgentContext]) -> Result<ActionTensor> {
        a_k.check_same_shape(&self.output)?;
        Ok(self.output.clone())
    }

    fn denoise_vjp(
        &self,
        a_k: &ActionTensor,
        _k: usize,
        _ctx: &[AgentContext],
        _upstream: &ActionTensor,
    ) -> Result<ActionTensor> {
        Ok(ActionTensor::zeros(a_k.agents(), a_k.steps()))
    }
}

/// `A0_hat = gain * A_k + offset`; a cheap stand-in for guidance tests.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearDenoiser {
    pub gain: f64,
    pub offset: ActionTensor,
}

impl Denoiser for LinearDenoiser {
    fn denoise(&self, a_k: &ActionTensor, _k: usize, _ctx: &[AgentContext]) -> Result<ActionTensor> {
        a_k.lincomb(self.gain, &self.offset, 1.0)
    }

    fn denoise_vjp(
        &self,
        a_k: &ActionTensor,
        _k: usize,
        _ctx: &[AgentContext],
        upstream: &ActionTensor,
    ) -> Result<ActionTensor> {
        a_k.check_same_shape(upstream)?;
        upstream.lincomb(self.gain, upstream, 0.0)
    }
}
