//! Guidance templates, their gated composition, and the composite's gradient
//! pulled back through the dynamics rollout.
//!
//! `G_total` is a reward to be ascended. The smoothness penalty enters it
//! negated; the other three templates are rewards already.

use serde::{Deserialize, Serialize};

use crate::diffusion::{ActionScale, ActionTensor};
use crate::dynamics::{rollout, rollout_adjoint, DynamicsParams, KinematicState, RolloutTape, StateGrad};
use crate::error::{Error, Result};
use crate::geometry::Vec2;
use crate::scenario::{Action, AgentId};

use super::plan::{DistanceMetric, GuidancePlan, GuidanceTemplate, TemplateKind};

/// Sum of weighted squared actions over all steps and agents.
pub fn g_smooth(actions: &[&[Action]], w_acc: f64, w_yaw: f64) -> f64 {
    actions
        .iter()
        .flat_map(|row| row.iter())
        .map(|a| w_acc * a.accel * a.accel + w_yaw * a.yaw_rate * a.yaw_rate)
        .sum()
}

/// Negative mean absolute speed error, averaged over agents.
pub fn g_speed(trajs: &[&[KinematicState]], v_target: f64) -> f64 {
    if trajs.is_empty() {
        return 0.0;
    }
    let per: f64 = trajs
        .iter()
        .filter(|t| !t.is_empty())
        .map(|t| -t.iter().map(|s| (s.speed - v_target).abs()).sum::<f64>() / t.len() as f64)
        .sum();
    per / trajs.len() as f64
}

fn metric_dist(p: Vec2, g: Vec2, metric: DistanceMetric) -> f64 {
    match metric {
        DistanceMetric::Euclidean => p.distance(g),
        DistanceMetric::Manhattan => (p.x - g.x).abs() + (p.y - g.y).abs(),
    }
}

/// First index of the minimum distance to `goal`.
fn closest(traj: &[KinematicState], goal: Vec2, metric: DistanceMetric) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (t, s) in traj.iter().enumerate() {
        let d = metric_dist(s.position(), goal, metric);
        if best.is_none_or(|(_, b)| d < b) {
            best = Some((t, d));
        }
    }
    best
}

/// Negative closest approach to `p_goal`, averaged over agents.
pub fn g_goal(trajs: &[&[KinematicState]], p_goal: Vec2, metric: DistanceMetric) -> f64 {
    if trajs.is_empty() {
        return 0.0;
    }
    let sum: f64 = trajs.iter().filter_map(|t| closest(t, p_goal, metric)).map(|(_, d)| -d).sum();
    sum / trajs.len() as f64
}

/// Minimum over steps then agents of the distance to the VUT prediction.
/// Ties go to the earliest step, then the lowest agent id.
fn closest_pair(trajs: &[(AgentId, &[KinematicState])], vut: &[Vec2]) -> Option<(usize, usize, f64)> {
    let mut order: Vec<usize> = (0..trajs.len()).collect();
    order.sort_by_key(|&i| trajs[i].0);
    let horizon = trajs.iter().map(|(_, t)| t.len()).max().unwrap_or(0).min(vut.len());
    let mut best: Option<(usize, usize, f64)> = None;
    for (t, &q) in vut.iter().enumerate().take(horizon) {
        for &i in &order {
            let Some(s) = trajs[i].1.get(t) else { continue };
            let d = s.position().distance(q);
            if best.is_none_or(|(_, _, b)| d < b) {
                best = Some((t, i, d));
            }
        }
    }
    best
}

/// Negative closest approach of any adversarial agent to the VUT, or zero
/// while every adversarial agent is farther than `d_trigger` right now.
pub fn g_interact(
    trajs: &[(AgentId, &[KinematicState])],
    vut: &[Vec2],
    d_trigger: f64,
    current_distance: f64,
) -> f64 {
    if current_distance > d_trigger {
        return 0.0;
    }
    closest_pair(trajs, vut).map_or(0.0, |(_, _, d)| -d)
}

/// One agent's predicted future under the current sample.
#[derive(Clone, Debug, PartialEq)]
pub struct AgentPrediction {
    pub id: AgentId,
    pub actions: Vec<Action>,
    /// Rolled-out states after each action.
    pub states: Vec<KinematicState>,
}

/// Facts fixed for one replan: the VUT's predicted positions over the
/// horizon and each agent's actual current distance to the VUT.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GuidanceState {
    pub vut_prediction: Vec<Vec2>,
    pub current_distance: Vec<(AgentId, f64)>,
}

impl GuidanceState {
    pub fn distance_to_vut(&self, id: AgentId) -> Option<f64> {
        self.current_distance.iter().find(|(a, _)| *a == id).map(|(_, d)| *d)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TemplateEval {
    pub kind: TemplateKind,
    /// Reward value of the template alone (smooth already negated).
    pub value: f64,
    /// What it adds to the total: `weight * value` when active, else 0.
    pub contribution: f64,
    pub in_domain: bool,
    pub triggered: bool,
    pub active: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GuidanceEval {
    pub total: f64,
    pub templates: Vec<TemplateEval>,
}

/// Gradient accumulators shaped like the predictions.
struct Grads {
    states: Vec<Vec<StateGrad>>,
    actions: Vec<Vec<Action>>,
}

impl Grads {
    fn zeros(preds: &[AgentPrediction]) -> Self {
        Self {
            states: preds.iter().map(|p| vec![StateGrad::default(); p.states.len()]).collect(),
            actions: preds.iter().map(|p| vec![Action::ZERO; p.actions.len()]).collect(),
        }
    }
}

fn rows_for(template: &GuidanceTemplate, plan: &GuidancePlan, preds: &[AgentPrediction]) -> Result<Vec<usize>> {
    template
        .targets_in(plan)
        .iter()
        .map(|id| {
            preds
                .iter()
                .position(|p| p.id == *id)
                .ok_or_else(|| Error::Plan(format!("template `{}` targets agent {id} with no prediction", template.kind)))
        })
        .collect()
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Value of one template, plus `weight * dG/d(states, actions)` added to
/// `grads` when given.
fn eval_one(
    template: &GuidanceTemplate,
    plan: &GuidancePlan,
    preds: &[AgentPrediction],
    state: &GuidanceState,
    grads: Option<&mut Grads>,
) -> Result<(f64, bool)> {
    let rows = rows_for(template, plan, preds)?;
    let w = template.weight;
    let tp = &template.params;
    let n = rows.len().max(1) as f64;
    match template.kind {
        TemplateKind::Smooth => {
            let (wa, wy) = (template.w_acc(), template.w_yaw());
            let acts: Vec<&[Action]> = rows.iter().map(|&r| preds[r].actions.as_slice()).collect();
            if let Some(g) = grads {
                for &r in &rows {
                    for (ga, a) in g.actions[r].iter_mut().zip(&preds[r].actions) {
                        ga.accel -= w * 2.0 * wa * a.accel;
                        ga.yaw_rate -= w * 2.0 * wy * a.yaw_rate;
                    }
                }
            }
            Ok((-g_smooth(&acts, wa, wy), true))
        }
        TemplateKind::Speed => {
            let vt = tp.v_target.ok_or_else(|| Error::Plan("speed template without v_target".into()))?;
            let trajs: Vec<&[KinematicState]> = rows.iter().map(|&r| preds[r].states.as_slice()).collect();
            if let Some(g) = grads {
                for &r in &rows {
                    let len = preds[r].states.len().max(1) as f64;
                    for (gs, s) in g.states[r].iter_mut().zip(&preds[r].states) {
                        gs.speed -= w * sign(s.speed - vt) / (len * n);
                    }
                }
            }
            Ok((g_speed(&trajs, vt), true))
        }
        TemplateKind::Goal => {
            let goal = tp.p_goal.ok_or_else(|| Error::Plan("goal template without p_goal".into()))?;
            let metric = tp.metric.unwrap_or_default();
            let trajs: Vec<&[KinematicState]> = rows.iter().map(|&r| preds[r].states.as_slice()).collect();
            if let Some(g) = grads {
                for &r in &rows {
                    let Some((t, d)) = closest(&preds[r].states, goal, metric) else { continue };
                    let diff = preds[r].states[t].position() - goal;
                    let (dx, dy) = match metric {
                        DistanceMetric::Euclidean if d > 0.0 => (diff.x / d, diff.y / d),
                        DistanceMetric::Euclidean => (0.0, 0.0),
                        DistanceMetric::Manhattan => (sign(diff.x), sign(diff.y)),
                    };
                    g.states[r][t].x -= w * dx / n;
                    g.states[r][t].y -= w * dy / n;
                }
            }
            Ok((g_goal(&trajs, goal, metric), true))
        }
        TemplateKind::Interact => {
            let d_trigger = tp.d_trigger.ok_or_else(|| Error::Plan("interact template without d_trigger".into()))?;
            let mut current = f64::INFINITY;
            for &r in &rows {
                let d = state.distance_to_vut(preds[r].id).ok_or_else(|| {
                    Error::Plan(format!("no current distance to the VUT for agent {}", preds[r].id))
                })?;
                current = current.min(d);
            }
            if current > d_trigger {
                return Ok((0.0, false));
            }
            let trajs: Vec<(AgentId, &[KinematicState])> =
                rows.iter().map(|&r| (preds[r].id, preds[r].states.as_slice())).collect();
            let Some((t, i, d)) = closest_pair(&trajs, &state.vut_prediction) else {
                return Ok((0.0, true));
            };
            if let Some(g) = grads {
                if d > 0.0 {
                    let r = rows[i];
                    let diff = preds[r].states[t].position() - state.vut_prediction[t];
                    g.states[r][t].x -= w * diff.x / d;
                    g.states[r][t].y -= w * diff.y / d;
                }
            }
            Ok((-d, true))
        }
    }
}

fn evaluate(
    plan: &GuidancePlan,
    preds: &[AgentPrediction],
    t_sim: usize,
    state: &GuidanceState,
    mut grads: Option<&mut Grads>,
) -> Result<GuidanceEval> {
    let mut eval = GuidanceEval::default();
    for (j, t) in plan.templates.iter().enumerate() {
        let in_domain = t.in_domain(t_sim);
        // Templates outside their window are neither evaluated nor
        // differentiated.
        let g = if in_domain && t.weight != 0.0 { grads.as_deref_mut() } else { None };
        let (value, triggered) = eval_one(t, plan, preds, state, g)?;
        if !value.is_finite() {
            return Err(Error::Numeric(format!("template {j} ({}) evaluated to {value}", t.kind)));
        }
        let active = in_domain && triggered;
        let contribution = if active { t.weight * value } else { 0.0 };
        eval.total += contribution;
        eval.templates.push(TemplateEval { kind: t.kind, value, contribution, in_domain, triggered, active });
    }
    Ok(eval)
}

/// Gated weighted sum of the plan's templates on predicted futures.
pub fn g_total(
    plan: &GuidancePlan,
    preds: &[AgentPrediction],
    t_sim: usize,
    state: &GuidanceState,
) -> Result<GuidanceEval> {
    evaluate(plan, preds, t_sim, state, None)
}

/// Everything besides the action tensor that the gradient depends on.
#[derive(Clone, Copy, Debug)]
pub struct GradientInputs<'a> {
    pub plan: &'a GuidancePlan,
    pub t_sim: usize,
    pub state: &'a GuidanceState,
    /// Agent id of each tensor row.
    pub ids: &'a [AgentId],
    /// Current state each row is rolled out from.
    pub initial: &'a [KinematicState],
    pub scale: ActionScale,
    pub dt: f64,
    pub dynamics: DynamicsParams,
}

/// Rolls each row of `mu` (diffusion coordinates) out into a prediction.
pub fn predict(mu: &ActionTensor, inp: &GradientInputs<'_>) -> Result<Vec<(AgentPrediction, RolloutTape)>> {
    if mu.agents() != inp.ids.len() || inp.ids.len() != inp.initial.len() {
        return Err(Error::Shape(format!(
            "{} action rows for {} ids and {} initial states",
            mu.agents(),
            inp.ids.len(),
            inp.initial.len()
        )));
    }
    (0..mu.agents())
        .map(|i| {
            let actions = inp.scale.to_physical(mu.row(i));
            let (states, tape) = rollout(&inp.initial[i], &actions, inp.dt, &inp.dynamics)?;
            Ok((AgentPrediction { id: inp.ids[i], actions, states }, tape))
        })
        .collect()
}

/// `G_total` of the rollout of `mu` and its gradient with respect to `mu`,
/// both in diffusion coordinates.
pub fn guidance_gradient(mu: &ActionTensor, inp: &GradientInputs<'_>) -> Result<(GuidanceEval, ActionTensor)> {
    let rolled = predict(mu, inp)?;
    let (preds, tapes): (Vec<_>, Vec<_>) = rolled.into_iter().unzip();
    let mut grads = Grads::zeros(&preds);
    let eval = evaluate(inp.plan, &preds, inp.t_sim, inp.state, Some(&mut grads))?;
    let mut out = ActionTensor::zeros(mu.agents(), mu.steps());
    for (i, p) in preds.iter().enumerate() {
        let touched = grads.actions[i].iter().any(|a| a.accel != 0.0 || a.yaw_rate != 0.0)
            || grads.states[i].iter().any(|s| *s != StateGrad::default());
        if !touched {
            continue;
        }
        let mut g = rollout_adjoint(&p.actions, &grads.states[i], &tapes[i])?;
        for (a, d) in g.iter_mut().zip(&grads.actions[i]) {
            a.accel += d.accel;
            a.yaw_rate += d.yaw_rate;
        }
        out.row_mut(i).copy_from_slice(&inp.scale.grad_to_diffusion(&g));
    }
    if !out.is_finite() {
        let culprit = inp
            .plan
            .templates
            .iter()
            .enumerate()
            .zip(&eval.templates)
            .filter(|(_, e)| e.active)
            .map(|((j, t), _)| format!("template {j} ({})", t.kind))
            .collect::<Vec<_>>()
            .join(", ");
        return Err(Error::Numeric(format!("non-finite guidance gradient from active {culprit}")));
    }
    Ok((eval, out))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(xs: &[f64], y: f64, speed: f64) -> Vec<KinematicState> {
        xs.iter().map(|&x| KinematicState::new(x, y, 0.0, speed)).collect()
    }

    #[test]
    fn smooth_hand_value() {
        let a = [Action::new(2.0, 0.1)];
        assert!((g_smooth(&[&a], 1.0, 10.0) - 4.1).abs() < 1e-12);
        assert_eq!(g_smooth(&[&[Action::ZERO; 3]], 1.0, 1.0), 0.0);
    }

    #[test]
    fn speed_hand_value() {
        let t = vec![KinematicState::new(0.0, 0.0, 0.0, 8.0), KinematicState::new(0.0, 0.0, 0.0, 12.0)];
        assert!((g_speed(&[&t], 10.0) + 2.0).abs() < 1e-12);
        let t = line(&[0.0, 1.0], 0.0, 11.0);
        assert!((g_speed(&[&t], 10.0) + 1.0).abs() < 1e-12);
    }

    #[test]
    fn goal_perpendicular_distance() {
        let xs: Vec<f64> = (0..=10).map(f64::from).collect();
        let t = line(&xs, 0.0, 1.0);
        assert!((g_goal(&[&t], Vec2::new(5.0, 3.0), DistanceMetric::Euclidean) + 3.0).abs() < 1e-12);
        assert_eq!(g_goal(&[&t], Vec2::new(0.0, 0.0), DistanceMetric::Euclidean), 0.0);
    }

    #[test]
    fn interact_gate_and_gap() {
        let xs: Vec<f64> = (0..5).map(f64::from).collect();
        let adv = line(&xs, 3.5, 1.0);
        let vut: Vec<Vec2> = xs.iter().map(|&x| Vec2::new(x, 0.0)).collect();
        assert_eq!(g_interact(&[(AgentId(1), &adv)], &vut, 30.0, 60.0), 0.0);
        assert!((g_interact(&[(AgentId(1), &adv)], &vut, 30.0, 3.5) + 3.5).abs() < 1e-12);
    }
}
