use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scenario::Action;

use super::schedule::NoiseSchedule;

/// Agents x steps x 2 values, row-major: `[agent][step][accel, yaw_rate]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ActionTensor {
    agents: usize,
    steps: usize,
    data: Vec<f64>,
}

impl ActionTensor {
    pub fn zeros(agents: usize, steps: usize) -> Self {
        Self { agents, steps, data: vec![0.0; agents * steps * 2] }
    }

    pub fn filled(agents: usize, steps: usize, value: f64) -> Self {
        Self { agents, steps, data: vec![value; agents * steps * 2] }
    }

    pub fn from_vec(agents: usize, steps: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != agents * steps * 2 {
            return Err(Error::Shape(format!(
                "{} values for a {agents}x{steps}x2 tensor",
                data.len()
            )));
        }
        Ok(Self { agents, steps, data })
    }

    pub fn standard_normal(agents: usize, steps: usize, rng: &mut impl Rng) -> Self {
        let data = (0..agents * steps * 2).map(|_| rng.sample(StandardNormal)).collect();
        Self { agents, steps, data }
    }

    pub fn agents(&self) -> usize {
        self.agents
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.agents, self.steps)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// The `2 * steps` values of one agent.
    pub fn row(&self, agent: usize) -> &[f64] {
        let w = self.steps * 2;
        &self.data[agent * w..(agent + 1) * w]
    }

    pub fn row_mut(&mut self, agent: usize) -> &mut [f64] {
        let w = self.steps * 2;
        &mut self.data[agent * w..(agent + 1) * w]
    }

    pub fn check_same_shape(&self, other: &ActionTensor) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::Shape(format!(
                "tensor shapes differ: {:?} vs {:?}",
                self.shape(),
                other.shape()
            )));
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs_diff(&self, other: &ActionTensor) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// `a * self + b * other`.
    pub fn lincomb(&self, a: f64, other: &ActionTensor, b: f64) -> Result<ActionTensor> {
        self.check_same_shape(other)?;
        let data = self.data.iter().zip(&other.data).map(|(x, y)| a * x + b * y).collect();
        Ok(ActionTensor { agents: self.agents, steps: self.steps, data })
    }
}

/// Per-dimension scale between physical actions and the unit-variance
/// coordinates the diffusion process runs in.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ActionScale {
    pub accel: f64,
    pub yaw_rate: f64,
}

impl Default for ActionScale {
    fn default() -> Self {
        Self { accel: 1.5, yaw_rate: 0.3 }
    }
}

impl ActionScale {
    pub fn to_physical(&self, row: &[f64]) -> Vec<Action> {
        row.chunks_exact(2)
            .map(|c| Action::new(c[0] * self.accel, c[1] * self.yaw_rate))
            .collect()
    }

    pub fn to_diffusion(&self, actions: &[Action]) -> Vec<f64> {
        actions
            .iter()
            .flat_map(|a| [a.accel / self.accel, a.yaw_rate / self.yaw_rate])
            .collect()
    }

    /// Chain rule from physical-action gradients to diffusion coordinates.
    pub fn grad_to_diffusion(&self, grads: &[Action]) -> Vec<f64> {
        grads
            .iter()
            .flat_map(|g| [g.accel * self.accel, g.yaw_rate * self.yaw_rate])
            .collect()
    }
}

/// `sqrt(alpha_bar_k) * a0 + sqrt(1 - alpha_bar_k) * eps`.
pub fn forward_diffuse(
    a0: &ActionTensor,
    k: usize,
    eps: &ActionTensor,
    sched: &NoiseSchedule,
) -> Result<ActionTensor> {
    sched.check_step(k)?;
    let ab = sched.alpha_bar(k);
    a0.lincomb(ab.sqrt(), eps, (1.0 - ab).sqrt())
}

/// Posterior mean of step `k - 1` given the clean estimate and `A_k`.
pub fn posterior_mean(
    a0_hat: &ActionTensor,
    a_k: &ActionTensor,
    k: usize,
    sched: &NoiseSchedule,
) -> Result<ActionTensor> {
    let (c0, ck) = sched.posterior_coefficients(k)?;
    a0_hat.lincomb(c0, a_k, ck)
}

pub fn posterior_var(k: usize, sched: &NoiseSchedule) -> Result<f64> {
    sched.posterior_var(k)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::schedule::{make_schedule, ScheduleKind};

    #[test]
    fn shape_mismatch_is_an_error() {
        let s = make_schedule(10, ScheduleKind::Cosine).unwrap();
        let a = ActionTensor::zeros(2, 3);
        let b = ActionTensor::zeros(2, 4);
        assert!(matches!(forward_diffuse(&a, 1, &b, &s), Err(Error::Shape(_))));
        assert!(ActionTensor::from_vec(1, 2, vec![0.0; 3]).is_err());
    }

    #[test]
    fn mean_at_first_step_is_the_estimate() {
        let s = make_schedule(50, ScheduleKind::Cosine).unwrap();
        let a0 = ActionTensor::filled(1, 4, 0.7);
        let ak = ActionTensor::filled(1, 4, -3.0);
        let mu = posterior_mean(&a0, &ak, 1, &s).unwrap();
        assert!(mu.max_abs_diff(&a0) < 1e-12);
    }

    #[test]
    fn scale_round_trip() {
        let sc = ActionScale::default();
        let acts = vec![Action::new(0.75, -0.06), Action::new(-3.0, 0.3)];
        let back = sc.to_physical(&sc.to_diffusion(&acts));
        for (a, b) in acts.iter().zip(&back) {
            assert!((a.accel - b.accel).abs() < 1e-15 && (a.yaw_rate - b.yaw_rate).abs() < 1e-15);
        }
    }
}
