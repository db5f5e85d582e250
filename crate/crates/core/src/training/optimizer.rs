use ndarray::{Array2, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grad::PhaseGradient;
use crate::optics::PhaseStack;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamParams {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    first: Vec<Array2<f64>>,
    second: Vec<Array2<f64>>,
    step: u64,
    params: AdamParams,
}

impl AdamState {
    pub fn new(phases: &PhaseStack, params: AdamParams) -> Self {
        let zeros = || {
            (0..phases.layer_count())
                .map(|_| Array2::zeros((phases.side(), phases.side())))
                .collect()
        };
        Self {
            first: zeros(),
            second: zeros(),
            step: 0,
            params,
        }
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn is_finite(&self) -> bool {
        self.first
            .iter()
            .chain(&self.second)
            .all(|l| l.iter().all(|v| v.is_finite()))
    }
}

/// One bias-corrected Adam update of Φ in place.
pub fn adam_step(
    phases: &mut PhaseStack,
    grad: &PhaseGradient,
    state: &mut AdamState,
    lr: f64,
) -> Result<()> {
    if grad.layers().len() != phases.layer_count() || state.first.len() != phases.layer_count() {
        return Err(Error::shape(phases.layer_count(), grad.layers().len()));
    }
    if grad
        .layers()
        .iter()
        .any(|g| g.dim() != (phases.side(), phases.side()))
    {
        return Err(Error::shape(phases.side(), "gradient layer"));
    }
    if !grad.is_finite() {
        return Err(Error::NonFinite("phase gradient".into()));
    }
    let AdamParams {
        beta1,
        beta2,
        epsilon,
    } = state.params;
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - beta1.powi(t);
    let c2 = 1.0 - beta2.powi(t);
    for (((theta, g), m), v) in phases
        .layers_mut()
        .iter_mut()
        .zip(grad.layers())
        .zip(&mut state.first)
        .zip(&mut state.second)
    {
        Zip::from(theta)
            .and(g)
            .and(m)
            .and(v)
            .for_each(|theta, &g, m, v| {
                *m = beta1 * *m + (1.0 - beta1) * g;
                *v = beta2 * *v + (1.0 - beta2) * g * g;
                let m_hat = *m / c1;
                let v_hat = *v / c2;
                *theta -= lr * m_hat / (v_hat.sqrt() + epsilon);
            });
    }
    Ok(())
}

/// Step decay: initial · decay^epoch.
pub fn lr_schedule(epoch: usize, initial: f64, decay: f64) -> f64 {
    initial * decay.powi(epoch as i32)
}
