use ndarray::{Array2, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::readout::DetectorLayout;

/// One-hot ground truth G_i of length M.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OneHotLabel {
    index: usize,
    len: usize,
}

impl OneHotLabel {
    pub fn new(index: usize, len: usize) -> Result<Self> {
        if index >= len {
            return Err(Error::LabelOutOfRange {
                label: index,
                classes: len,
            });
        }
        Ok(Self { index, len })
    }

    pub fn index(&self) -> usize {
        self.index
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn to_vec(&self) -> Vec<f64> {
        (0..self.len)
            .map(|j| if j == self.index { 1.0 } else { 0.0 })
            .collect()
    }
}

/// Cross-entropy of softmax(scores) against a one-hot label, evaluated with
/// the max subtracted. Returns the loss and ∂L/∂scores = softmax − G.
pub fn softmax_xent(scores: &[f64], label: &OneHotLabel) -> Result<(f64, Vec<f64>)> {
    if scores.len() != label.len() {
        return Err(Error::shape(label.len(), scores.len()));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFinite("scores".into()));
    }
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    let loss = sum.ln() - (scores[label.index()] - max);
    let mut grad: Vec<f64> = exps.iter().map(|e| e / sum).collect();
    grad[label.index()] -= 1.0;
    Ok((loss.max(0.0), grad))
}

/// Mean over all K² pixels of the squared intensity outside `support`, and
/// its gradient (2/K²)·I outside, 0 inside.
pub fn energy_penalty_outside(
    intensity: &Array2<f64>,
    support: &Array2<bool>,
) -> Result<(f64, Array2<f64>)> {
    if intensity.dim() != support.dim() {
        return Err(Error::shape(
            format!("{:?}", support.dim()),
            format!("{:?}", intensity.dim()),
        ));
    }
    let n = intensity.len() as f64;
    let mut penalty = 0.0;
    let mut grad = Array2::zeros(intensity.dim());
    Zip::from(&mut grad)
        .and(intensity)
        .and(support)
        .for_each(|g, &i, &inside| {
            if !inside {
                penalty += i * i;
                *g = 2.0 * i / n;
            }
        });
    Ok((penalty / n, grad))
}

/// Out-of-region penalty of channel `task` against that task's bands.
pub fn energy_penalty(
    intensity: &Array2<f64>,
    layout: &DetectorLayout,
    task: usize,
) -> Result<(f64, Array2<f64>)> {
    if task >= layout.task_count() {
        return Err(Error::InvalidArgument(format!("task {task} out of range")));
    }
    energy_penalty_outside(intensity, &layout.task_support(task))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    /// Weight of the out-of-region penalty.
    pub gamma: f64,
    /// Multiplier applied to pooled scores before the softmax.
    pub logit_scale: f64,
}

/// Components of the joint objective for one sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    /// Per-task cross-entropy.
    pub cross_entropy: Vec<f64>,
    /// Per-channel out-of-region penalty (unweighted).
    pub penalty: Vec<f64>,
    pub gamma: f64,
    pub total: f64,
}

impl LossReport {
    pub fn weighted_penalty(&self) -> f64 {
        self.gamma * self.penalty.iter().sum::<f64>()
    }
}

/// Gradients of [`total_loss`] with respect to its inputs.
#[derive(Debug, Clone)]
pub struct LossGradient {
    /// ∂L/∂P_i per task.
    pub scores: Vec<Vec<f64>>,
    /// ∂L/∂I_c from the penalty term, per channel.
    pub intensity: Vec<Array2<f64>>,
}

/// Σ_tasks CE(s·P_i, G_i) + γ·Σ_channels penalty(I_c, support_c).
///
/// `supports[c]` is the detector area channel c is allowed to light up.
pub fn total_loss(
    pooled: &[Vec<f64>],
    labels: &[OneHotLabel],
    intensities: &[Array2<f64>],
    supports: &[Array2<bool>],
    config: &LossConfig,
) -> Result<(LossReport, LossGradient)> {
    if pooled.len() != labels.len() {
        return Err(Error::ChannelMismatch {
            expected: pooled.len(),
            actual: labels.len(),
        });
    }
    if intensities.len() != supports.len() {
        return Err(Error::ChannelMismatch {
            expected: supports.len(),
            actual: intensities.len(),
        });
    }
    let s = config.logit_scale;
    let mut cross_entropy = Vec::with_capacity(pooled.len());
    let mut d_scores = Vec::with_capacity(pooled.len());
    for (p, g) in pooled.iter().zip(labels) {
        let logits: Vec<f64> = p.iter().map(|v| v * s).collect();
        let (l, grad) = softmax_xent(&logits, g)?;
        cross_entropy.push(l);
        d_scores.push(grad.into_iter().map(|v| v * s).collect());
    }
    let mut penalty = Vec::with_capacity(intensities.len());
    let mut d_int = Vec::with_capacity(intensities.len());
    for (i, sup) in intensities.iter().zip(supports) {
        let (p, mut g) = energy_penalty_outside(i, sup)?;
        g.mapv_inplace(|v| v * config.gamma);
        penalty.push(p);
        d_int.push(g);
    }
    let total = cross_entropy.iter().sum::<f64>() + config.gamma * penalty.iter().sum::<f64>();
    Ok((
        LossReport {
            cross_entropy,
            penalty,
            gamma: config.gamma,
            total,
        },
        LossGradient {
            scores: d_scores,
            intensity: d_int,
        },
    ))
}
