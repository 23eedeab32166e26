use serde::{Deserialize, Serialize};

use super::network::Parameters;
use crate::error::{shape_err, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// L2 coefficient added to the gradient before the moment updates.
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay: 5e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    first_moment: Parameters,
    second_moment: Parameters,
    step: u64,
}

impl AdamState {
    pub fn new(like: &Parameters, config: AdamConfig) -> Self {
        Self {
            config,
            first_moment: like.zeros_like(),
            second_moment: like.zeros_like(),
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn first_moment(&self) -> &Parameters {
        &self.first_moment
    }

    pub fn second_moment(&self) -> &Parameters {
        &self.second_moment
    }
}

fn check_grads(params: &Parameters, grads: &Parameters) -> Result<()> {
    if params.scalar_count() != grads.scalar_count() || params.len() != grads.len() {
        return Err(shape_err(
            "optimizer gradients",
            params.scalar_count(),
            grads.scalar_count(),
        ));
    }
    if let Some(pos) = grads.values().position(|g| !g.is_finite()) {
        return Err(Error::NonFinite(format!("gradient coordinate {pos}")));
    }
    Ok(())
}

/// One bias-corrected Adam update; the state's step counter is incremented.
pub fn adam_step(params: &mut Parameters, grads: &Parameters, state: &mut AdamState) -> Result<()> {
    check_grads(params, grads)?;
    let cfg = state.config;
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    let coords = params.values_mut().zip(grads.values()).zip(
        state
            .first_moment
            .values_mut()
            .zip(state.second_moment.values_mut()),
    );
    for ((w, g), (m, v)) in coords {
        let g = g + cfg.weight_decay * *w;
        *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
        *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
        let m_hat = *m / bc1;
        let v_hat = *v / bc2;
        *w -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon);
    }
    Ok(())
}

/// Local optimiser choice for client training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    #[default]
    Adam,
    Sgd,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Optimizer {
    Adam(AdamState),
    Sgd {
        learning_rate: f64,
        weight_decay: f64,
    },
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, like: &Parameters, config: AdamConfig) -> Self {
        match kind {
            OptimizerKind::Adam => Optimizer::Adam(AdamState::new(like, config)),
            OptimizerKind::Sgd => Optimizer::Sgd {
                learning_rate: config.learning_rate,
                weight_decay: config.weight_decay,
            },
        }
    }

    pub fn step(&mut self, params: &mut Parameters, grads: &Parameters) -> Result<()> {
        match self {
            Optimizer::Adam(state) => adam_step(params, grads, state),
            Optimizer::Sgd {
                learning_rate,
                weight_decay,
            } => {
                check_grads(params, grads)?;
                for (w, g) in params.values_mut().zip(grads.values()) {
                    *w -= *learning_rate * (g + *weight_decay * *w);
                }
                Ok(())
            }
        }
    }
}
