//! Multi-task training objective and its gradient.

use serde::{Deserialize, Serialize};

use crate::dynamics::{rollout, rollout_adjoint, DynamicsParams, StateGrad};
use crate::error::{Error, Result};
use crate::geometry::Vec2;

use super::context::AgentContext;
use super::model::DenoiserModel;
use super::schedule::NoiseSchedule;

/// One agent's training example.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub ctx: AgentContext,
    /// Ground-truth actions in diffusion coordinates, `2 * t_fut` values.
    pub actions: Vec<f64>,
    /// Ground-truth future positions, one per step.
    pub positions: Vec<Vec2>,
}

/// Per-sample diffusion draw: step `k` and the noise added to the actions.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseDraw {
    pub k: usize,
    pub eps: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub diff: f64,
    pub traj: f64,
    pub prob: f64,
    pub driv: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { diff: 1.0, traj: 1.0, prob: 0.5, driv: 0.5 }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Losses {
    pub total: f64,
    pub diff: f64,
    pub traj: f64,
    pub prob: f64,
    pub driv: f64,
}

impl Losses {
    pub fn add(&mut self, o: &Losses) {
        self.total += o.total;
        self.diff += o.diff;
        self.traj += o.traj;
        self.prob += o.prob;
        self.driv += o.driv;
    }

    pub fn scaled(&self, s: f64) -> Losses {
        Losses {
            total: self.total * s,
            diff: self.diff * s,
            traj: self.traj * s,
            prob: self.prob * s,
            driv: self.driv * s,
        }
    }

    pub fn is_finite(&self) -> bool {
        [self.total, self.diff, self.traj, self.prob, self.driv].iter().all(|v| v.is_finite())
    }
}

/// Gradient buffers matching [`DenoiserModel::parts`].
#[derive(Clone, Debug, PartialEq)]
pub struct ModelGrads {
    pub parts: [Vec<f64>; 4],
}

impl ModelGrads {
    pub fn zeros(model: &DenoiserModel) -> Self {
        Self { parts: model.parts().map(|m| vec![0.0; m.params.len()]) }
    }

    pub fn add(&mut self, o: &ModelGrads) {
        for (a, b) in self.parts.iter_mut().zip(&o.parts) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
    }

    pub fn scale(&mut self, s: f64) {
        for p in &mut self.parts {
            p.iter_mut().for_each(|x| *x *= s);
        }
    }
}

/// Smooth-L1 with unit threshold.
fn smooth_l1(d: f64) -> (f64, f64) {
    if d.abs() < 1.0 {
        (0.5 * d * d, d)
    } else {
        (d.abs() - 0.5, d.signum())
    }
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// BCE with logits, numerically stable; returns value and d/dlogit.
fn bce_logits(z: f64, y: f64) -> (f64, f64) {
    let v = z.max(0.0) - z * y + (-z.abs()).exp().ln_1p();
    let s = 1.0 / (1.0 + (-z).exp());
    (v, s - y)
}

struct Rolled {
    positions: Vec<Vec2>,
    tape: crate::dynamics::RolloutTape,
    actions: Vec<crate::scenario::Action>,
}

fn roll(model: &DenoiserModel, ctx: &AgentContext, y: &[f64], dt: f64, dp: &DynamicsParams) -> Result<Rolled> {
    let actions = model.cfg.scale.to_physical(y);
    let (traj, tape) = rollout(&ctx.state, &actions, dt, dp)?;
    Ok(Rolled { positions: traj.iter().map(|s| s.position()).collect(), tape, actions })
}

/// Backpropagates position gradients of a rollout into diffusion-space
/// action gradients.
fn pull_back(model: &DenoiserModel, r: &Rolled, gpos: &[Vec2]) -> Result<Vec<f64>> {
    let g: Vec<StateGrad> = gpos.iter().map(|p| StateGrad { x: p.x, y: p.y, ..Default::default() }).collect();
    let ga = rollout_adjoint(&r.actions, &g, &r.tape)?;
    Ok(model.cfg.scale.grad_to_diffusion(&ga))
}

/// Mean L1 / smooth-L1 over all coordinates of a trajectory, with position
/// gradients.
fn trajectory_loss(pred: &[Vec2], gt: &[Vec2], smooth: bool) -> (f64, Vec<Vec2>) {
    let n = (pred.len() * 2) as f64;
    let mut total = 0.0;
    let mut grads = Vec::with_capacity(pred.len());
    for (p, g) in pred.iter().zip(gt) {
        let d = *p - *g;
        let (vx, gx) = if smooth { smooth_l1(d.x) } else { (d.x.abs(), d.x.signum()) };
        let (vy, gy) = if smooth { smooth_l1(d.y) } else { (d.y.abs(), d.y.signum()) };
        total += vx + vy;
        grads.push(Vec2::new(gx / n, gy / n));
    }
    (total / n, grads)
}

/// Losses of one sample and, when `grads` is given, their gradients scaled
/// by `grad_scale` accumulated into it.
pub fn sample_losses(
    model: &DenoiserModel,
    sample: &Sample,
    draw: &NoiseDraw,
    sched: &NoiseSchedule,
    weights: &LossWeights,
    dt: f64,
    dp: &DynamicsParams,
    grads: Option<(&mut ModelGrads, f64)>,
) -> Result<Losses> {
    let width = model.cfg.action_width();
    let q_n = sample.ctx.goals.len();
    if q_n < 2 {
        return Err(Error::Config(format!("need at least 2 candidate goals, got {q_n}")));
    }
    if sample.actions.len() != width || draw.eps.len() != width || sample.positions.len() != model.cfg.t_fut {
        return Err(Error::Shape(format!("sample for agent {} has inconsistent lengths", sample.ctx.id)));
    }
    sched.check_step(draw.k)?;
    let ab = sched.alpha_bar(draw.k);
    let a_k: Vec<f64> = sample
        .actions
        .iter()
        .zip(&draw.eps)
        .map(|(a, e)| ab.sqrt() * a + (1.0 - ab).sqrt() * e)
        .collect();

    let (latent, enc_tape) = model.encoder.forward_taped(&sample.ctx.features);

    // diffusion branch
    let (a0_hat, den_tape) = model.denoiser.forward_taped(&model.denoiser_input(&a_k, draw.k, &latent));
    let rolled = roll(model, &sample.ctx, &a0_hat, dt, dp)?;
    let (l_diff, g_diff_pos) = trajectory_loss(&rolled.positions, &sample.positions, false);

    // trajectory head: winner-take-all over candidates
    let head_inputs: Vec<Vec<f64>> =
        (0..q_n).map(|q| DenoiserModel::head_input(&latent, sample.ctx.goal_feature(q))).collect();
    let mut best: Option<(usize, f64)> = None;
    for (q, x) in head_inputs.iter().enumerate() {
        let y = model.trajectory.forward(x);
        let r = roll(model, &sample.ctx, &y, dt, dp)?;
        let (l, _) = trajectory_loss(&r.positions, &sample.positions, true);
        if best.map_or(true, |b| l < b.1) {
            best = Some((q, l));
        }
    }
    let (winner, l_traj) = best.unwrap();

    // score head
    let mut score_out = Vec::with_capacity(q_n);
    let mut score_tapes = Vec::with_capacity(q_n);
    for x in &head_inputs {
        let (s, t) = model.score.forward_taped(x);
        score_out.push(s);
        score_tapes.push(t);
    }
    let logits: Vec<f64> = score_out.iter().map(|s| s[0]).collect();
    let lse = log_sum_exp(&logits);
    let l_prob = lse - logits[winner];
    let mut l_driv = 0.0;
    let mut d_driv = Vec::with_capacity(q_n);
    for (q, s) in score_out.iter().enumerate() {
        let y = if sample.ctx.goals.drivable[q] { 1.0 } else { 0.0 };
        let (v, g) = bce_logits(s[1], y);
        l_driv += v / q_n as f64;
        d_driv.push(g / q_n as f64);
    }

    let losses = Losses {
        total: weights.diff * l_diff + weights.traj * l_traj + weights.prob * l_prob + weights.driv * l_driv,
        diff: l_diff,
        traj: l_traj,
        prob: l_prob,
        driv: l_driv,
    };

    if let Some((g, s)) = grads {
        let [g_enc, g_den, g_traj, g_score] = &mut g.parts;
        let mut g_latent = vec![0.0; latent.len()];
        let lat = latent.len();

        let ga = pull_back(model, &rolled, &g_diff_pos)?;
        let up: Vec<f64> = ga.iter().map(|v| v * weights.diff * s).collect();
        let gx = model.denoiser.backward(&den_tape, &up, g_den);
        g_latent.iter_mut().zip(&gx[width..width + lat]).for_each(|(a, b)| *a += b);

        let (y, tape) = model.trajectory.forward_taped(&head_inputs[winner]);
        let r = roll(model, &sample.ctx, &y, dt, dp)?;
        let (_, gpos) = trajectory_loss(&r.positions, &sample.positions, true);
        let ga = pull_back(model, &r, &gpos)?;
        let up: Vec<f64> = ga.iter().map(|v| v * weights.traj * s).collect();
        let gx = model.trajectory.backward(&tape, &up, g_traj);
        g_latent.iter_mut().zip(&gx[..lat]).for_each(|(a, b)| *a += b);

        for q in 0..q_n {
            let p = (logits[q] - lse).exp();
            let dp_q = p - if q == winner { 1.0 } else { 0.0 };
            let up = [dp_q * weights.prob * s, d_driv[q] * weights.driv * s];
            let gx = model.score.backward(&score_tapes[q], &up, g_score);
            g_latent.iter_mut().zip(&gx[..lat]).for_each(|(a, b)| *a += b);
        }

        model.encoder.backward(&enc_tape, &g_latent, g_enc);
    }
    Ok(losses)
}

/// Mean losses over a batch.
pub fn compute_losses(
    model: &DenoiserModel,
    batch: &[Sample],
    draws: &[NoiseDraw],
    sched: &NoiseSchedule,
    weights: &LossWeights,
    dt: f64,
    dp: &DynamicsParams,
) -> Result<Losses> {
    if batch.is_empty() || batch.len() != draws.len() {
        return Err(Error::Shape(format!("{} samples with {} noise draws", batch.len(), draws.len())));
    }
    let mut acc = Losses::default();
    for (s, d) in batch.iter().zip(draws) {
        acc.add(&sample_losses(model, s, d, sched, weights, dt, dp, None)?);
    }
    Ok(acc.scaled(1.0 / batch.len() as f64))
}
