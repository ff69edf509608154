use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{inverse, DynamicsParams};
use crate::error::{Error, Result};
use crate::scenario::{AgentType, Scenario};

use super::context::scenario_context;
use super::loss::{sample_losses, LossWeights, Losses, ModelGrads, NoiseDraw, Sample};
use super::model::DenoiserModel;
use super::nn::AdamW;
use super::schedule::NoiseSchedule;
use super::tensor::ActionScale;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Scenarios per minibatch.
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub seed: u64,
    pub weights: LossWeights,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 15,
            batch_size: 6,
            lr: 2e-4,
            weight_decay: 0.01,
            seed: 0,
            weights: LossWeights::default(),
        }
    }
}

/// Training examples of one scenario: every non-static agent at the start step.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneSamples {
    pub scenario_id: String,
    pub dt: f64,
    pub samples: Vec<Sample>,
}

pub fn scenario_samples(s: &Scenario, scale: &ActionScale) -> Result<SceneSamples> {
    let t0 = s.start_step();
    s.slice_history_future(t0)?;
    let ids: Vec<_> = s
        .agents
        .iter()
        .filter(|a| a.states[t0].agent_type != AgentType::StaticObject)
        .map(|a| a.id)
        .collect();
    let ctxs = scenario_context(s, &ids)?;
    let limits = DynamicsParams::default().limits;
    let mut samples = Vec::with_capacity(ids.len());
    for ctx in ctxs {
        let track = s.track(ctx.id).unwrap();
        let fut = &track.states[t0..=t0 + s.t_fut];
        let kin: Vec<_> = fut.iter().map(|st| st.kinematic()).collect();
        let (actions, _) = inverse(&kin, s.dt, &limits)?;
        samples.push(Sample {
            actions: scale.to_diffusion(&actions),
            positions: fut[1..].iter().map(|st| st.position).collect(),
            ctx,
        });
    }
    Ok(SceneSamples { scenario_id: s.id.clone(), dt: s.dt, samples })
}

/// Per-epoch record: losses on the whole training set under a fixed noise
/// draw, plus the mean minibatch loss seen while training.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub eval: Losses,
    pub train: Option<Losses>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossCurve {
    pub rows: Vec<EpochRecord>,
}

impl LossCurve {
    pub fn initial(&self) -> Option<&EpochRecord> {
        self.rows.first()
    }

    pub fn last(&self) -> Option<&EpochRecord> {
        self.rows.last()
    }

    /// Tab-separated table, one row per epoch; epoch 0 is the untrained model.
    pub fn to_table(&self) -> String {
        let mut out = String::from(
            "epoch\ttotal\tdiff\ttraj\tprob\tdriv\ttrain_total\ttrain_diff\n",
        );
        for r in &self.rows {
            let (tt, td) = r.train.map_or((f64::NAN, f64::NAN), |t| (t.total, t.diff));
            let _ = writeln!(
                out,
                "{}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}",
                r.epoch, r.eval.total, r.eval.diff, r.eval.traj, r.eval.prob, r.eval.driv, tt, td
            );
        }
        out
    }
}

fn draw(rng: &mut ChaCha8Rng, k_steps: usize, width: usize) -> NoiseDraw {
    let k = rng.random_range(1..=k_steps);
    let eps = (0..width).map(|_| rng.sample(StandardNormal)).collect();
    NoiseDraw { k, eps }
}

struct Ctx<'a> {
    sched: &'a NoiseSchedule,
    weights: &'a LossWeights,
    dp: DynamicsParams,
}

fn scene_pass(
    model: &DenoiserModel,
    scene: &SceneSamples,
    draws: &[NoiseDraw],
    ctx: &Ctx<'_>,
    grad_scale: Option<f64>,
) -> Result<(Losses, Option<ModelGrads>)> {
    let mut grads = grad_scale.map(|_| ModelGrads::zeros(model));
    let mut acc = Losses::default();
    for (s, d) in scene.samples.iter().zip(draws) {
        let g = grads.as_mut().zip(grad_scale);
        let l = sample_losses(model, s, d, ctx.sched, ctx.weights, scene.dt, &ctx.dp, g)?;
        acc.add(&l);
    }
    Ok((acc, grads))
}

const EVAL_STREAM: u64 = 0xE7A1_0000_0000_0001;

/// Mean losses over every sample in `data`, with noise drawn from `seed`.
pub fn evaluate(model: &DenoiserModel, data: &[SceneSamples], seed: u64, weights: &LossWeights) -> Result<Losses> {
    let sched = model.schedule()?;
    let ctx = Ctx { sched: &sched, weights, dp: DynamicsParams::default() };
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ EVAL_STREAM);
    let width = model.cfg.action_width();
    let draws: Vec<Vec<NoiseDraw>> = data
        .iter()
        .map(|s| s.samples.iter().map(|_| draw(&mut rng, sched.steps(), width)).collect())
        .collect();
    let parts: Vec<Result<(Losses, Option<ModelGrads>)>> = data
        .par_iter()
        .zip(draws.par_iter())
        .map(|(s, d)| scene_pass(model, s, d, &ctx, None))
        .collect();
    let mut acc = Losses::default();
    let mut n = 0usize;
    for (p, s) in parts.into_iter().zip(data) {
        acc.add(&p?.0);
        n += s.samples.len();
    }
    if n == 0 {
        return Err(Error::Config("evaluation set has no samples".into()));
    }
    Ok(acc.scaled(1.0 / n as f64))
}

/// Minibatch AdamW over scenarios. Deterministic for a given seed: noise is
/// drawn sequentially and per-scenario gradients are reduced in order.
pub fn train(model: &mut DenoiserModel, data: &[SceneSamples], cfg: &TrainConfig) -> Result<LossCurve> {
    if data.iter().all(|s| s.samples.is_empty()) {
        return Err(Error::Config("training set has no samples".into()));
    }
    if cfg.batch_size == 0 {
        return Err(Error::Config("batch_size must be at least 1".into()));
    }
    let sched = model.schedule()?;
    let width = model.cfg.action_width();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let sizes: Vec<usize> = model.parts().iter().map(|m| m.params.len()).collect();
    let mut opt = AdamW::new(&sizes, cfg.lr, cfg.weight_decay);
    let mut curve = LossCurve::default();
    curve.rows.push(EpochRecord { epoch: 0, eval: evaluate(model, data, cfg.seed, &cfg.weights)?, train: None });

    let mut order: Vec<usize> = (0..data.len()).collect();
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_acc = Losses::default();
        let mut epoch_n = 0usize;
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let n: usize = chunk.iter().map(|&i| data[i].samples.len()).sum();
            if n == 0 {
                continue;
            }
            let draws: Vec<Vec<NoiseDraw>> = chunk
                .iter()
                .map(|&i| data[i].samples.iter().map(|_| draw(&mut rng, sched.steps(), width)).collect())
                .collect();
            let ctx = Ctx { sched: &sched, weights: &cfg.weights, dp: DynamicsParams::default() };
            let m: &DenoiserModel = model;
            let parts: Vec<Result<(Losses, Option<ModelGrads>)>> = chunk
                .par_iter()
                .zip(draws.par_iter())
                .map(|(&i, d)| scene_pass(m, &data[i], d, &ctx, Some(1.0 / n as f64)))
                .collect();
            let mut grads = ModelGrads::zeros(model);
            let mut acc = Losses::default();
            for p in parts {
                let (l, g) = p?;
                acc.add(&l);
                grads.add(&g.expect("gradient pass"));
            }
            if !acc.is_finite() || grads.parts.iter().any(|g| g.iter().any(|v| !v.is_finite())) {
                return Err(Error::Divergence(format!(
                    "epoch {epoch}, batch {b}: non-finite loss or gradient (losses {:?})",
                    acc.scaled(1.0 / n as f64)
                )));
            }
            epoch_acc.add(&acc);
            epoch_n += n;
            let [e, d, t, s] = model.parts_mut();
            let mut params: [&mut [f64]; 4] = [&mut e.params, &mut d.params, &mut t.params, &mut s.params];
            let g: Vec<&[f64]> = grads.parts.iter().map(|v| v.as_slice()).collect();
            opt.step(&mut params, &g);
        }
        let eval = evaluate(model, data, cfg.seed, &cfg.weights)?;
        if !eval.is_finite() {
            return Err(Error::Divergence(format!("epoch {epoch}: non-finite evaluation loss {eval:?}")));
        }
        log::info!(
            "epoch {epoch}: total {:.4} diff {:.4} traj {:.4} prob {:.4} driv {:.4}",
            eval.total,
            eval.diff,
            eval.traj,
            eval.prob,
            eval.driv
        );
        curve.rows.push(EpochRecord {
            epoch,
            eval,
            train: Some(epoch_acc.scaled(1.0 / epoch_n.max(1) as f64)),
        });
    }
    Ok(curve)
}
