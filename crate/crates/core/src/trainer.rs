//! The selective-sampling training loop, plus plain SGD, step-drop learning
//! rate schedules, and metrics collection.
//!
//! One training step: draw a pool of `B` candidate rows from the epoch
//! permutation, forward them, compute the policy's criterion, keep the `b`
//! best, and take one SGD step on that sub-batch. The random policy is the
//! classical baseline: it skips the scoring forward pass entirely and draws
//! `b` rows directly, so wallclock comparisons against it do not charge the
//! baseline for scoring it never does. With `B = b` under the random policy
//! the loop reduces to standard minibatch SGD.
//!
//! The candidate pool is drawn without replacement within an epoch; the
//! permutation reshuffles when fewer than a full draw remains (the remainder
//! is dropped). Pools are re-scored with the current model every step.
//!
//! Runs are deterministic: a config and a split fully determine the metrics
//! table bit for bit. Wallclock is recorded on [`MetricsRow`] for reporting
//! but deliberately kept out of anything determinism-checked.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Split};
use crate::error::{Error, Result};
use crate::margin::score_batch;
use crate::model::{Gradients, Model};
use crate::numeric::Rng;
use crate::objective::{
    alpha_at, composite_loss, cross_entropy, mmr_feature_grad, AlphaSchedule, LossMode,
};
use crate::selection::{
    select_entropy, select_hard_negative, select_mms, CriterionStats, PolicyKind,
    SelectionPolicy, SelectionResult,
};

/// Piecewise-constant learning rate: `phases[k]` applies from
/// `drop_steps[k-1]` (inclusive) up to `drop_steps[k]` (exclusive).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub phases: Vec<f64>,
    pub drop_steps: Vec<u64>,
}

impl LrSchedule {
    pub fn constant(lr: f64) -> LrSchedule {
        LrSchedule { phases: vec![lr], drop_steps: Vec::new() }
    }

    pub fn from_phases(phases: Vec<f64>, drop_steps: Vec<u64>) -> LrSchedule {
        LrSchedule { phases, drop_steps }
    }

    /// Base rate with a multiplicative factor applied at each drop.
    pub fn from_factors(base_lr: f64, drop_steps: Vec<u64>, drop_factors: &[f64]) -> LrSchedule {
        let mut phases = vec![base_lr];
        for &f in drop_factors {
            phases.push(phases.last().unwrap() * f);
        }
        LrSchedule { phases, drop_steps }
    }

    pub fn validate(&self) -> Result<()> {
        if self.phases.len() != self.drop_steps.len() + 1 {
            return Err(Error::invalid(format!(
                "lr schedule: {} phases need {} drop steps, got {}",
                self.phases.len(),
                self.phases.len() - 1,
                self.drop_steps.len()
            )));
        }
        if self.phases.iter().any(|&lr| !(lr > 0.0)) {
            return Err(Error::invalid("lr schedule: rates must be positive".to_string()));
        }
        if self.drop_steps.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("lr schedule: drop steps must ascend".to_string()));
        }
        Ok(())
    }
}

/// Learning rate at a step. Right-continuous: a drop step already uses the
/// dropped value.
pub fn lr_at(schedule: &LrSchedule, step: u64) -> f64 {
    let passed = schedule.drop_steps.iter().filter(|&&d| d <= step).count();
    schedule.phases[passed]
}

/// Plain SGD update `p <- p - lr * g`, no momentum. Rejects non-finite
/// gradients before touching any parameter, so the model is intact on error.
pub fn sgd_step(model: &mut Model, grads: &Gradients, lr: f64) -> Result<()> {
    if grads.layer_weights.len() != model.extractor.layers.len() {
        return Err(Error::dim(format!(
            "sgd_step: {} layer gradients for {} layers",
            grads.layer_weights.len(),
            model.extractor.layers.len()
        )));
    }
    for (k, layer) in model.extractor.layers.iter().enumerate() {
        let gw = &grads.layer_weights[k];
        if gw.rows() != layer.weight.rows() || gw.cols() != layer.weight.cols() {
            return Err(Error::dim(format!("sgd_step: layer {k} weight gradient shape")));
        }
        if grads.layer_biases[k].len() != layer.bias.len() {
            return Err(Error::dim(format!("sgd_step: layer {k} bias gradient shape")));
        }
    }
    if grads.head_w.rows() != model.head.w.rows()
        || grads.head_w.cols() != model.head.w.cols()
        || grads.head_b.len() != model.head.b.len()
    {
        return Err(Error::dim("sgd_step: head gradient shape".to_string()));
    }
    if !grads.is_finite() {
        return Err(Error::NonFinite { what: "gradient".to_string(), step: 0 });
    }
    for (k, layer) in model.extractor.layers.iter_mut().enumerate() {
        layer.weight.add_scaled(&grads.layer_weights[k], -lr)?;
        for (p, g) in layer.bias.iter_mut().zip(&grads.layer_biases[k]) {
            *p -= lr * g;
        }
    }
    model.head.w.add_scaled(&grads.head_w, -lr)?;
    for (p, g) in model.head.b.iter_mut().zip(&grads.head_b) {
        *p -= lr * g;
    }
    Ok(())
}

/// Fraction of samples whose argmax-scored class is not the label. Argmax
/// ties break to the lowest class index, so a tie only counts as correct
/// for the lowest tied class; a constant-score model on balanced n-class
/// data scores (n-1)/n error.
pub fn evaluate(model: &Model, dataset: &Dataset) -> Result<f64> {
    if dataset.is_empty() {
        return Err(Error::EmptyInput("evaluate"));
    }
    let cache = model.forward(&dataset.features)?;
    let mut wrong = 0usize;
    for i in 0..dataset.len() {
        let row = cache.scores.row(i);
        let mut pred = 0usize;
        for (j, &s) in row.iter().enumerate() {
            if s > row[pred] {
                pred = j;
            }
        }
        if pred != dataset.labels[i] {
            wrong += 1;
        }
    }
    Ok(wrong as f64 / dataset.len() as f64)
}

/// Everything a run needs beyond the data and the initial model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub policy: SelectionPolicy,
    pub lr: LrSchedule,
    pub alpha: AlphaSchedule,
    pub mmr_enabled: bool,
    /// Route the regularizer's feature-norm gradient into the extractor.
    /// Off by default: the feature-norm bound is a stop-gradient constant.
    pub mmr_feature_path: bool,
    pub loss_mode: LossMode,
    pub total_steps: u64,
    pub eval_interval: u64,
    pub seed: u64,
    /// Momentum coefficient; 0 is the plain SGD of the selection loop.
    pub momentum: f64,
    /// Validation accuracy that defines steps-to-target.
    pub target_accuracy: Option<f64>,
    /// Stop as soon as the target accuracy is reached.
    pub stop_at_target: bool,
    /// Snapshot the model every this many steps (in addition to the final
    /// state the run always returns).
    pub checkpoint_interval: Option<u64>,
}

impl TrainConfig {
    pub fn validate(&self, train_rows: usize) -> Result<()> {
        self.policy.validate()?;
        self.lr.validate()?;
        self.alpha.validate()?;
        if self.policy.big_batch > train_rows {
            return Err(Error::invalid(format!(
                "big_batch {} exceeds training set size {train_rows}",
                self.policy.big_batch
            )));
        }
        if self.eval_interval == 0 {
            return Err(Error::invalid("eval_interval must be positive".to_string()));
        }
        if !(self.momentum >= 0.0 && self.momentum < 1.0) {
            return Err(Error::invalid(format!("momentum = {}, need [0, 1)", self.momentum)));
        }
        if let Some(t) = self.target_accuracy {
            if !(0.0..=1.0).contains(&t) {
                return Err(Error::invalid(format!("target_accuracy = {t}, need [0, 1]")));
            }
        }
        if self.checkpoint_interval == Some(0) {
            return Err(Error::invalid("checkpoint_interval must be positive".to_string()));
        }
        Ok(())
    }
}

/// One logged evaluation point. `wallclock` is elapsed seconds since the
/// start of the run; it is reported but never written into the
/// determinism-checked metrics CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub step: u64,
    pub ce: f64,
    pub mmr: f64,
    pub composite: f64,
    pub alpha: f64,
    pub phi_max: f64,
    pub train_error: f64,
    pub validation_error: f64,
    pub lr: f64,
    pub mean_selected_criterion: Option<f64>,
    pub wallclock: f64,
}

/// Per-step criterion summary for the optional selection log.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionLogRow {
    pub step: u64,
    pub policy: PolicyKind,
    pub chosen: Option<CriterionStats>,
    pub rejected: Option<CriterionStats>,
}

/// A finished (or aborted) training run.
#[derive(Debug, Clone)]
pub struct TrainRun {
    /// Final model; on a numerical abort this is the last good state, i.e.
    /// the parameters before the offending update.
    pub model: Model,
    pub metrics: Vec<MetricsRow>,
    pub selection_log: Vec<SelectionLogRow>,
    pub steps_to_target: Option<u64>,
    pub final_train_error: f64,
    pub final_validation_error: f64,
    pub completed_steps: u64,
    /// Diagnostics when the run aborted on a non-finite loss or gradient.
    pub abort: Option<String>,
    /// Periodic model snapshots, when `checkpoint_interval` was set.
    pub snapshots: Vec<(u64, Model)>,
}

/// Epoch-wise permutation drawer: contiguous chunks of a seeded shuffle,
/// reshuffling when fewer than a full chunk remains.
struct IndexPool {
    perm: Vec<usize>,
    cursor: usize,
}

impl IndexPool {
    fn new(n: usize) -> IndexPool {
        IndexPool { perm: (0..n).collect(), cursor: n }
    }

    fn draw(&mut self, k: usize, rng: &mut Rng) -> Vec<usize> {
        if self.cursor + k > self.perm.len() {
            rng.shuffle(&mut self.perm);
            self.cursor = 0;
        }
        let out = self.perm[self.cursor..self.cursor + k].to_vec();
        self.cursor += k;
        out
    }
}

/// Run the selective-sampling loop: forward a `B`-pool, keep the policy's
/// `b` best, back-propagate exactly that sub-batch, one SGD step per
/// iteration.
pub fn train(config: &TrainConfig, split: &Split, model: Model) -> Result<TrainRun> {
    config.validate(split.train.len())?;
    if model.input_dim != split.train.dim() {
        return Err(Error::dim(format!(
            "train: model input dim {} vs data dim {}",
            model.input_dim,
            split.train.dim()
        )));
    }
    if model.n_classes() != split.train.n_classes {
        return Err(Error::dim(format!(
            "train: model has {} classes, data has {}",
            model.n_classes(),
            split.train.n_classes
        )));
    }
    let started = Instant::now();
    let validation: &Dataset =
        if split.validation.is_empty() { &split.train } else { &split.validation };
    let mut model = model;
    let mut rng = Rng::new(config.seed);
    let mut pool = IndexPool::new(split.train.len());
    let mut velocity: Option<Gradients> = None;
    let mut metrics = Vec::new();
    let mut selection_log = Vec::new();
    let mut steps_to_target = None;
    let mut abort = None;
    let mut completed = 0u64;
    let mut snapshots = Vec::new();
    let b = config.policy.small_batch;

    for step in 0..config.total_steps {
        let lr = lr_at(&config.lr, step);
        let alpha = alpha_at(&config.alpha, step)?;

        let (batch_cache, batch_labels, selection): (_, Vec<usize>, Option<SelectionResult>) =
            if config.policy.kind == PolicyKind::Random {
                let idx = pool.draw(b, &mut rng);
                let x = split.train.features.select_rows(&idx);
                let labels = idx.iter().map(|&i| split.train.labels[i]).collect();
                (model.forward(&x)?, labels, None)
            } else {
                let pool_idx = pool.draw(config.policy.big_batch, &mut rng);
                let x = split.train.features.select_rows(&pool_idx);
                let pool_labels: Vec<usize> =
                    pool_idx.iter().map(|&i| split.train.labels[i]).collect();
                let cache = model.forward(&x)?;
                let result = match config.policy.kind {
                    PolicyKind::Mms => {
                        select_mms(&score_batch(&model.head, &cache.features, None)?, b)?
                    }
                    PolicyKind::HardNegative => {
                        let (losses, _) = cross_entropy(&cache.scores, &pool_labels)?;
                        select_hard_negative(&losses, b)?
                    }
                    PolicyKind::Entropy => select_entropy(&cache.scores, b)?,
                    PolicyKind::Random => unreachable!(),
                };
                let labels = result.chosen.iter().map(|&i| pool_labels[i]).collect();
                // slicing the pool cache is bit-identical to re-running the
                // forward pass on the chosen rows
                let sub = cache.select_rows(&result.chosen);
                (sub, labels, Some(result))
            };

        let (breakdown, cgrads) = composite_loss(
            &model.head,
            &batch_cache,
            &batch_labels,
            alpha,
            config.loss_mode,
            config.mmr_enabled,
        )?;
        if !breakdown.composite.is_finite() {
            abort = Some(format!(
                "non-finite loss at step {step}: composite = {}",
                breakdown.composite
            ));
            break;
        }
        let extra_feature = if config.mmr_enabled && config.mmr_feature_path {
            let mut g = mmr_feature_grad(
                &breakdown.per_sample_mmr,
                &batch_cache.features,
                breakdown.phi_max,
            )?;
            g.scale(alpha);
            Some(g)
        } else {
            None
        };
        let mut grads = model.backward_impl(
            &batch_cache,
            &cgrads.dl_dscores,
            &cgrads.extra_head_grad,
            extra_feature.as_ref(),
        )?;
        // mean-reduce so learning rates are batch-size free
        grads.scale(1.0 / b as f64);
        if config.momentum > 0.0 {
            match &mut velocity {
                Some(v) => {
                    v.scale(config.momentum);
                    v.add_scaled(&grads, 1.0)?;
                }
                None => velocity = Some(grads.clone()),
            }
        }
        let update = velocity.as_ref().unwrap_or(&grads);
        match sgd_step(&mut model, update, lr) {
            Ok(()) => {}
            Err(Error::NonFinite { what, .. }) => {
                abort = Some(format!("non-finite {what} at step {step}; last good model kept"));
                break;
            }
            Err(e) => return Err(e),
        }
        completed = step + 1;
        if let Some(interval) = config.checkpoint_interval {
            if completed % interval == 0 {
                snapshots.push((completed, model.clone()));
            }
        }

        if completed % config.eval_interval == 0 {
            let train_error = evaluate(&model, &split.train)?;
            let validation_error = evaluate(&model, validation)?;
            if let Some(target) = config.target_accuracy {
                if steps_to_target.is_none() && 1.0 - validation_error >= target {
                    steps_to_target = Some(completed);
                }
            }
            metrics.push(MetricsRow {
                step: completed,
                ce: breakdown.ce_total,
                mmr: breakdown.mmr_total,
                composite: breakdown.composite,
                alpha,
                phi_max: breakdown.phi_max,
                train_error,
                validation_error,
                lr,
                mean_selected_criterion: selection
                    .as_ref()
                    .and_then(|s| s.chosen_stats())
                    .map(|s| s.mean),
                wallclock: started.elapsed().as_secs_f64(),
            });
            if let Some(sel) = &selection {
                selection_log.push(SelectionLogRow {
                    step: completed,
                    policy: config.policy.kind,
                    chosen: sel.chosen_stats(),
                    rejected: sel.rejected_stats(),
                });
            }
            if config.stop_at_target && steps_to_target.is_some() {
                break;
            }
        }
    }

    let final_train_error = evaluate(&model, &split.train)?;
    let final_validation_error = evaluate(&model, validation)?;
    Ok(TrainRun {
        model,
        metrics,
        selection_log,
        steps_to_target,
        final_train_error,
        final_validation_error,
        completed_steps: completed,
        abort,
        snapshots,
    })
}
