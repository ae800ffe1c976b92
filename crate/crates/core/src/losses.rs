//! Classification losses with analytic gradients, and the loss-to-task
//! assignment.
//!
//! Three losses over raw logits:
//!
//! - cross-entropy: `-log softmax(z)[y]`
//! - focal: `-(1 - p_t)^γ · log(p_t)`, which reduces the contribution of
//!   well-classified examples and focuses training on hard ones
//! - class-balanced: cross-entropy scaled by `(1-β) / (1-β^{n_y})`, the
//!   inverse effective number of samples of the target class
//!
//! All gradients are exact; log-probabilities go through a max-shifted
//! log-softmax and `p_t` is clamped to `>= 1e-12` before exponentiation.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::align::TaskClassCounts;
use crate::tasks::TaskId;

#[derive(Debug, Error)]
pub enum LossError {
    #[error("target class {target} out of range for {classes} classes")]
    Label { target: usize, classes: usize },
    #[error("observed target class {target} has zero count")]
    Count { target: usize },
    #[error("invalid loss parameter: {0}")]
    Param(String),
}

const P_MIN: f64 = 1e-12;

/// Which loss a task trains with.
#[derive(Debug, Clone, PartialEq)]
pub enum LossSpec {
    CrossEntropy,
    Focal { gamma: f64 },
    ClassBalanced { beta: f64, class_counts: Vec<u64> },
}

impl LossSpec {
    /// Loss and gradient w.r.t. the logits for one labeled position.
    pub fn loss_and_grad(&self, logits: &[f64], target: usize) -> Result<(f64, Vec<f64>), LossError> {
        match self {
            LossSpec::CrossEntropy => cross_entropy(logits, target),
            LossSpec::Focal { gamma } => focal_loss(logits, target, *gamma),
            LossSpec::ClassBalanced { beta, class_counts } => {
                class_balanced_loss(logits, target, *beta, class_counts)
            }
        }
    }
}

fn check_target(logits: &[f64], target: usize) -> Result<(), LossError> {
    if logits.len() < 2 {
        return Err(LossError::Param(format!(
            "need at least 2 classes, got {}",
            logits.len()
        )));
    }
    if target >= logits.len() {
        return Err(LossError::Label { target, classes: logits.len() });
    }
    Ok(())
}

/// Softmax probabilities and the log-probability of the target class.
fn softmax_and_logp(logits: &[f64], target: usize) -> (Vec<f64>, f64) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    let probs: Vec<f64> = exps.iter().map(|&e| e / sum).collect();
    let logp = logits[target] - max - sum.ln();
    (probs, logp)
}

/// `-log softmax(z)[y]` with gradient `softmax(z) - onehot(y)`.
pub fn cross_entropy(logits: &[f64], target: usize) -> Result<(f64, Vec<f64>), LossError> {
    check_target(logits, target)?;
    let (mut grad, logp) = softmax_and_logp(logits, target);
    grad[target] -= 1.0;
    Ok((-logp, grad))
}

/// Focal loss `-(1-p_t)^γ log(p_t)` with the analytic gradient through both
/// the modulating factor and the log term.
pub fn focal_loss(logits: &[f64], target: usize, gamma: f64) -> Result<(f64, Vec<f64>), LossError> {
    if gamma < 0.0 || gamma.is_nan() {
        return Err(LossError::Param(format!("gamma {gamma} must be >= 0")));
    }
    check_target(logits, target)?;
    let (probs, logp) = softmax_and_logp(logits, target);
    let p_t = probs[target].max(P_MIN);
    let one_minus = (1.0 - p_t).max(P_MIN);
    let modulator = one_minus.powf(gamma);
    let loss = -modulator * logp;

    // dL/dp_t = γ(1-p)^{γ-1} log p - (1-p)^γ / p
    let dl_dp = gamma * one_minus.powf(gamma - 1.0) * logp - modulator / p_t;
    // dp_t/dz_j = p_t (δ_{tj} - p_j)
    let grad: Vec<f64> = probs
        .iter()
        .enumerate()
        .map(|(j, &p_j)| {
            let indicator = if j == target { 1.0 } else { 0.0 };
            dl_dp * p_t * (indicator - p_j)
        })
        .collect();
    Ok((loss, grad))
}

/// The class-balanced weight `(1-β) / (1-β^{n_y})`.
pub fn class_balanced_weight(beta: f64, n_y: u64) -> f64 {
    (1.0 - beta) / (1.0 - beta.powi(n_y as i32))
}

/// Cross-entropy re-weighted by the inverse effective number of samples of
/// the target class.
pub fn class_balanced_loss(
    logits: &[f64],
    target: usize,
    beta: f64,
    class_counts: &[u64],
) -> Result<(f64, Vec<f64>), LossError> {
    if !(0.0..1.0).contains(&beta) {
        return Err(LossError::Param(format!("beta {beta} must be in [0, 1)")));
    }
    check_target(logits, target)?;
    let n_y = *class_counts
        .get(target)
        .ok_or(LossError::Count { target })?;
    if n_y == 0 {
        return Err(LossError::Count { target });
    }
    let weight = class_balanced_weight(beta, n_y);
    let (loss, mut grad) = cross_entropy(logits, target)?;
    for g in &mut grad {
        *g *= weight;
    }
    Ok((weight * loss, grad))
}

/// β from the sample count: `β = (N-1)/N`.
pub fn beta_from_sample_count(n: u64) -> f64 {
    if n == 0 {
        0.0
    } else {
        (n as f64 - 1.0) / n as f64
    }
}

/// The per-task loss assignment: focal loss for the imbalanced tagging
/// tasks (POS, NER, decoder Keep/Translate), class-balanced loss for
/// encoder Keep/Translate, cross-entropy for MLM and the main generation
/// task. β comes from the total encoder Keep/Translate token count.
pub fn assign_losses(counts: &TaskClassCounts, gamma: f64) -> BTreeMap<TaskId, LossSpec> {
    let n_kt_enc: u64 = counts.kt_enc.iter().sum();
    let mut map = BTreeMap::new();
    map.insert(TaskId::Pe, LossSpec::CrossEntropy);
    map.insert(TaskId::Mlm, LossSpec::CrossEntropy);
    map.insert(TaskId::Pos, LossSpec::Focal { gamma });
    map.insert(TaskId::Ner, LossSpec::Focal { gamma });
    map.insert(TaskId::KtDec, LossSpec::Focal { gamma });
    map.insert(
        TaskId::KtEnc,
        LossSpec::ClassBalanced {
            beta: beta_from_sample_count(n_kt_enc),
            class_counts: counts.kt_enc.clone(),
        },
    );
    map
}
