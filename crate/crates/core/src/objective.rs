//! Loss functions and their gradients: softmax cross-entropy, multi-class
//! hinge risk, the multi-margin regularization (MMR) term, and the
//! alpha-weighted composite objective.
//!
//! The composite objective over a batch is
//!
//! ```text
//! L = alpha * sum_i R_i + sum_i C_i
//! R_i = |w_{y_i} - w_{m_i}|^2 * phi_max^2
//! ```
//!
//! where `m_i` is the competitive class of sample `i` (best non-true class,
//! frozen at the forward pass's scores) and `phi_max` is the largest feature
//! norm in the batch. Summing per sample rather than per class pair weights
//! the regularizer by the margin distribution, which compensates for class
//! imbalance. `phi_max` scales the penalty so margin growth obtained by
//! inflating the feature space is not rewarded.
//!
//! Gradient conventions: totals are sums (not means) over the batch, and the
//! returned gradients differentiate those sums. `phi_max` and `m_i` are
//! constants of the forward pass, so the objective is piecewise smooth and
//! the gradients are exact on each piece. By default the regularizer sends
//! gradient only into the head weights; the feature-norm path can be turned
//! on explicitly via [`mmr_feature_grad`].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::margin::{competitive_class, phi_max_norm};
use crate::model::{ForwardCache, LinearHead};
use crate::numeric::{dot, log_sum_exp, Matrix};

/// Which empirical risk the composite uses. Cross-entropy is the default;
/// hinge exists to validate the max-margin lineage of the regularizer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossMode {
    Ce,
    Hinge,
}

/// Per-batch loss bookkeeping. Totals are sums of the per-sample vectors;
/// `composite = alpha * mmr_total + risk_total` exactly as written.
#[derive(Debug, Clone)]
pub struct LossBreakdown {
    /// Total empirical risk (cross-entropy or hinge, per `LossMode`).
    pub ce_total: f64,
    pub mmr_total: f64,
    pub composite: f64,
    pub per_sample_ce: Vec<f64>,
    pub per_sample_mmr: Vec<f64>,
    /// The feature-norm bound the regularizer was scaled by.
    pub phi_max: f64,
}

/// Softmax cross-entropy per sample, with the gradient at the scores.
///
/// `loss_i = log_sum_exp(scores_i) - scores_i[y_i]`, gradient
/// `softmax(scores_i) - onehot(y_i)`; finite for any finite scores.
pub fn cross_entropy(scores: &Matrix, labels: &[usize]) -> Result<(Vec<f64>, Matrix)> {
    if labels.len() != scores.rows() {
        return Err(Error::dim(format!(
            "cross_entropy: {} labels for {} score rows",
            labels.len(),
            scores.rows()
        )));
    }
    let n = scores.cols();
    if let Some(&bad) = labels.iter().find(|&&y| y >= n) {
        return Err(Error::invalid(format!("cross_entropy: label {bad} >= {n}")));
    }
    let mut losses = Vec::with_capacity(scores.rows());
    let mut grad = Matrix::zeros(scores.rows(), n);
    for i in 0..scores.rows() {
        let row = scores.row(i);
        let lse = log_sum_exp(row)?;
        losses.push(lse - row[labels[i]]);
        let g = grad.row_mut(i);
        for (j, &s) in row.iter().enumerate() {
            g[j] = (s - lse).exp();
        }
        g[labels[i]] -= 1.0;
    }
    Ok((losses, grad))
}

/// Per-sample hinge on the pair (true class, competitive class), with the
/// competitive class frozen at the current scores:
/// `max(0, 1 - ((w_y - w_m).phi + b_y - b_m))`.
///
/// Returns per-sample losses and the summed subgradients for the head. The
/// subgradient at the hinge point (pair score difference exactly 1) is zero.
pub fn hinge_risk(
    head: &LinearHead,
    features: &Matrix,
    labels: &[usize],
) -> Result<(Vec<f64>, Matrix, Vec<f64>)> {
    let scores = head.scores(features)?;
    if labels.len() != features.rows() {
        return Err(Error::dim(format!(
            "hinge_risk: {} labels for {} rows",
            labels.len(),
            features.rows()
        )));
    }
    let mut losses = Vec::with_capacity(features.rows());
    let mut grad_w = Matrix::zeros(head.n_classes(), head.feat_dim());
    let mut grad_b = vec![0.0; head.n_classes()];
    for i in 0..features.rows() {
        let y = labels[i];
        let m = competitive_class(scores.row(i), y)?;
        let pair_score = scores.get(i, y) - scores.get(i, m);
        let loss = (1.0 - pair_score).max(0.0);
        losses.push(loss);
        if pair_score < 1.0 {
            let phi = features.row(i);
            for (k, &v) in phi.iter().enumerate() {
                grad_w.set(y, k, grad_w.get(y, k) - v);
                grad_w.set(m, k, grad_w.get(m, k) + v);
            }
            grad_b[y] -= 1.0;
            grad_b[m] += 1.0;
        }
    }
    Ok((losses, grad_w, grad_b))
}

/// The multi-margin regularization term and its head-weight gradient.
///
/// `R_i = |w_{y_i} - w_{m_i}|^2 * phi_max^2`, with `m_i` read from
/// `current_scores` and `phi_max` treated as a constant. The gradient
/// accumulates `+2 (w_{y_i} - w_{m_i}) phi_max^2` into row `y_i` and its
/// negation into row `m_i`.
pub fn mmr_term(
    head: &LinearHead,
    labels: &[usize],
    current_scores: &Matrix,
    phi_max: f64,
) -> Result<(Vec<f64>, Matrix)> {
    if labels.len() != current_scores.rows() {
        return Err(Error::dim(format!(
            "mmr_term: {} labels for {} score rows",
            labels.len(),
            current_scores.rows()
        )));
    }
    if !(phi_max >= 0.0) {
        return Err(Error::invalid(format!("mmr_term: phi_max = {phi_max}")));
    }
    let scale = phi_max * phi_max;
    let mut per_sample = Vec::with_capacity(labels.len());
    let mut grad_w = Matrix::zeros(head.n_classes(), head.feat_dim());
    for i in 0..labels.len() {
        let y = labels[i];
        let m = competitive_class(current_scores.row(i), y)?;
        let w_diff: Vec<f64> =
            head.w.row(y).iter().zip(head.w.row(m)).map(|(a, b)| a - b).collect();
        per_sample.push(dot(&w_diff, &w_diff) * scale);
        for (k, &d) in w_diff.iter().enumerate() {
            let g = 2.0 * d * scale;
            grad_w.set(y, k, grad_w.get(y, k) + g);
            grad_w.set(m, k, grad_w.get(m, k) - g);
        }
    }
    Ok((per_sample, grad_w))
}

/// Gradient of the regularizer through the feature-norm path, for the
/// optional experiment where `phi_max` is not stop-gradiented. Only the row
/// realizing the batch maximum receives gradient:
/// `d(sum R_i)/d phi_imax = 2 * sum_i |w_{y_i,m_i}|^2 * phi_imax`.
pub fn mmr_feature_grad(
    per_sample_mmr: &[f64],
    features: &Matrix,
    phi_max: f64,
) -> Result<Matrix> {
    let mut grad = Matrix::zeros(features.rows(), features.cols());
    if phi_max <= 0.0 {
        return Ok(grad);
    }
    let norms: Vec<f64> = (0..features.rows())
        .map(|i| crate::numeric::l2_norm(features.row(i)))
        .collect();
    let imax = norms
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.partial_cmp(b.1).unwrap().then(b.0.cmp(&a.0)))
        .map(|(i, _)| i)
        .ok_or(Error::EmptyInput("mmr_feature_grad"))?;
    // per_sample_mmr already carries phi_max^2, so divide it back out
    let coeff_sum: f64 = per_sample_mmr.iter().map(|r| r / (phi_max * phi_max)).sum();
    for (k, &v) in features.row(imax).iter().enumerate() {
        grad.set(imax, k, 2.0 * coeff_sum * v);
    }
    Ok(grad)
}

/// Gradients of the composite objective, split by destination.
#[derive(Debug, Clone)]
pub struct CompositeGrads {
    /// Risk gradient at the scores; route through the model's backward pass.
    pub dl_dscores: Matrix,
    /// Regularizer contribution to the head weights (already alpha-scaled).
    pub extra_head_grad: Matrix,
}

/// The alpha-weighted composite objective over a forward pass, with its
/// gradients. `phi_max` is measured on this batch's features.
pub fn composite_loss(
    head: &LinearHead,
    cache: &ForwardCache,
    labels: &[usize],
    alpha: f64,
    mode: LossMode,
    mmr_enabled: bool,
) -> Result<(LossBreakdown, CompositeGrads)> {
    let phi_max = phi_max_norm(&cache.features)?;
    composite_loss_with_phi_max(head, cache, labels, alpha, mode, mmr_enabled, phi_max)
}

/// As [`composite_loss`] but with the feature-norm bound supplied by the
/// caller. Finite-difference checks use this to hold `phi_max` at its
/// base-point value while parameters are perturbed.
pub fn composite_loss_with_phi_max(
    head: &LinearHead,
    cache: &ForwardCache,
    labels: &[usize],
    alpha: f64,
    mode: LossMode,
    mmr_enabled: bool,
    phi_max: f64,
) -> Result<(LossBreakdown, CompositeGrads)> {
    let batch = cache.scores.rows();
    if labels.len() != batch {
        return Err(Error::dim(format!(
            "composite_loss: {} labels for batch {}",
            labels.len(),
            batch
        )));
    }
    let (per_sample_ce, dl_dscores) = match mode {
        LossMode::Ce => cross_entropy(&cache.scores, labels)?,
        LossMode::Hinge => {
            // express the hinge through the scores so the extractor path is
            // the same chain rule as cross-entropy
            let mut losses = Vec::with_capacity(batch);
            let mut grad = Matrix::zeros(batch, cache.scores.cols());
            for i in 0..batch {
                let y = labels[i];
                let m = competitive_class(cache.scores.row(i), y)?;
                let pair_score = cache.scores.get(i, y) - cache.scores.get(i, m);
                losses.push((1.0 - pair_score).max(0.0));
                if pair_score < 1.0 {
                    grad.set(i, y, -1.0);
                    grad.set(i, m, 1.0);
                }
            }
            (losses, grad)
        }
    };
    let (per_sample_mmr, extra_head_grad) = if mmr_enabled {
        let (r, mut g) = mmr_term(head, labels, &cache.scores, phi_max)?;
        g.scale(alpha);
        (r, g)
    } else {
        (vec![0.0; batch], Matrix::zeros(head.n_classes(), head.feat_dim()))
    };
    let ce_total: f64 = per_sample_ce.iter().sum();
    let mmr_total: f64 = per_sample_mmr.iter().sum();
    let breakdown = LossBreakdown {
        ce_total,
        mmr_total,
        composite: alpha * mmr_total + ce_total,
        per_sample_ce,
        per_sample_mmr,
        phi_max,
    };
    Ok((breakdown, CompositeGrads { dl_dscores, extra_head_grad }))
}

/// Schedule for the regularization trade-off factor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum AlphaSchedule {
    Constant { value: f64 },
    Linear { start: f64, end: f64, total_steps: u64 },
}

impl AlphaSchedule {
    pub fn validate(&self) -> Result<()> {
        match *self {
            AlphaSchedule::Constant { value } => {
                if !(value >= 0.0) {
                    return Err(Error::invalid(format!("alpha = {value}, need >= 0")));
                }
            }
            AlphaSchedule::Linear { start, end, total_steps } => {
                if !(start >= 0.0 && end >= 0.0) {
                    return Err(Error::invalid(format!(
                        "alpha range [{start}, {end}], need >= 0"
                    )));
                }
                if total_steps == 0 {
                    return Err(Error::invalid(
                        "linear alpha schedule needs total_steps > 0".to_string(),
                    ));
                }
            }
        }
        Ok(())
    }
}

/// Alpha at a step: constant mode returns the value; linear mode
/// interpolates `start + (end - start) * min(step/total, 1)`.
pub fn alpha_at(schedule: &AlphaSchedule, step: u64) -> Result<f64> {
    schedule.validate()?;
    Ok(match *schedule {
        AlphaSchedule::Constant { value } => value,
        AlphaSchedule::Linear { start, end, total_steps } => {
            let t = (step as f64 / total_steps as f64).min(1.0);
            start + (end - start) * t
        }
    })
}
