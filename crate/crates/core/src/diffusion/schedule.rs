use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    #[default]
    Cosine,
    Linear,
}

const COSINE_S: f64 = 0.008;
const BETA_MIN: f64 = 1e-5;
const BETA_MAX: f64 = 0.999;
const LINEAR_START: f64 = 1e-4;
const LINEAR_END: f64 = 0.02;

/// Noise tables for `K` diffusion steps. `beta` and `alpha` are indexed
/// `1..=K` (slot 0 unused), `alpha_bar` is indexed `0..=K` with
/// `alpha_bar[0] = 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSchedule {
    pub kind: ScheduleKind,
    beta: Vec<f64>,
    alpha: Vec<f64>,
    alpha_bar: Vec<f64>,
}

pub fn make_schedule(k_steps: usize, kind: ScheduleKind) -> Result<NoiseSchedule> {
    if k_steps < 1 {
        return Err(Error::Config("diffusion steps K must be at least 1".into()));
    }
    let mut beta = vec![0.0; k_steps + 1];
    match kind {
        ScheduleKind::Cosine => {
            let g = |k: usize| {
                let x = (k as f64 / k_steps as f64 + COSINE_S) / (1.0 + COSINE_S) * std::f64::consts::FRAC_PI_2;
                x.cos().powi(2)
            };
            let g0 = g(0);
            for k in 1..=k_steps {
                let ab = g(k) / g0;
                let ab_prev = g(k - 1) / g0;
                beta[k] = (1.0 - ab / ab_prev).clamp(BETA_MIN, BETA_MAX);
            }
        }
        ScheduleKind::Linear => {
            for (k, b) in beta.iter_mut().enumerate().skip(1) {
                *b = if k_steps == 1 {
                    LINEAR_START
                } else {
                    LINEAR_START + (LINEAR_END - LINEAR_START) * (k - 1) as f64 / (k_steps - 1) as f64
                };
            }
        }
    }
    let mut alpha = vec![1.0; k_steps + 1];
    let mut alpha_bar = vec![1.0; k_steps + 1];
    for k in 1..=k_steps {
        alpha[k] = 1.0 - beta[k];
        alpha_bar[k] = alpha_bar[k - 1] * alpha[k];
    }
    Ok(NoiseSchedule { kind, beta, alpha, alpha_bar })
}

impl NoiseSchedule {
    pub fn steps(&self) -> usize {
        self.beta.len() - 1
    }

    pub fn check_step(&self, k: usize) -> Result<()> {
        if k < 1 || k > self.steps() {
            return Err(Error::Bounds(format!("diffusion step {k} outside 1..={}", self.steps())));
        }
        Ok(())
    }

    pub fn beta(&self, k: usize) -> f64 {
        self.beta[k]
    }

    pub fn alpha(&self, k: usize) -> f64 {
        self.alpha[k]
    }

    pub fn alpha_bar(&self, k: usize) -> f64 {
        self.alpha_bar[k]
    }

    /// Coefficients `(c0, ck)` of the posterior mean
    /// `mu_k = c0 * A0_hat + ck * A_k`.
    pub fn posterior_coefficients(&self, k: usize) -> Result<(f64, f64)> {
        self.check_step(k)?;
        let ab = self.alpha_bar[k];
        let ab_prev = self.alpha_bar[k - 1];
        let c0 = ab_prev.sqrt() * self.beta[k] / (1.0 - ab);
        let ck = self.alpha[k].sqrt() * (1.0 - ab_prev) / (1.0 - ab);
        Ok((c0, ck))
    }

    /// Posterior variance `sigma^2_k`; zero at `k = 1`.
    pub fn posterior_var(&self, k: usize) -> Result<f64> {
        self.check_step(k)?;
        Ok((1.0 - self.alpha_bar[k - 1]) / (1.0 - self.alpha_bar[k]) * self.beta[k])
    }
}
