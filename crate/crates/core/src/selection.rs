//! Batch selection policies for the selective-sampling training loop.
//!
//! Each step scores a pool of `B` candidates and keeps `b` of them for the
//! backward pass. MMS keeps the smallest margin scores (most uncertain
//! predictions); hard-negative keeps the largest per-sample losses;
//! entropy keeps the highest-entropy softmax posteriors; random draws
//! uniformly. Only hard-negative consumes label-dependent information —
//! MMS never reads labels.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::margin::MarginScore;
use crate::numeric::{log_sum_exp, Matrix, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    Mms,
    Random,
    HardNegative,
    Entropy,
}

impl std::fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            PolicyKind::Mms => "mms",
            PolicyKind::Random => "random",
            PolicyKind::HardNegative => "hard_negative",
            PolicyKind::Entropy => "entropy",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for PolicyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<PolicyKind> {
        match s {
            "mms" => Ok(PolicyKind::Mms),
            "random" => Ok(PolicyKind::Random),
            "hard_negative" | "hard-negative" => Ok(PolicyKind::HardNegative),
            "entropy" => Ok(PolicyKind::Entropy),
            other => Err(Error::invalid(format!("unknown policy {other:?}"))),
        }
    }
}

/// A policy plus its pool and batch sizes: score `big_batch` candidates,
/// keep `small_batch`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SelectionPolicy {
    pub kind: PolicyKind,
    pub big_batch: usize,
    pub small_batch: usize,
}

impl SelectionPolicy {
    pub fn validate(&self) -> Result<()> {
        if self.small_batch == 0 {
            return Err(Error::invalid("selection: small_batch = 0".to_string()));
        }
        if self.small_batch > self.big_batch {
            return Err(Error::invalid(format!(
                "selection: small_batch {} > big_batch {}",
                self.small_batch, self.big_batch
            )));
        }
        Ok(())
    }
}

/// Summary statistics over a set of criterion values. Non-finite values
/// (the `+inf` sentinel of degenerate margins) are excluded from the
/// aggregates and counted separately.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CriterionStats {
    pub mean: f64,
    pub min: f64,
    pub max: f64,
    pub finite_count: usize,
    pub non_finite_count: usize,
}

fn stats_over<'a>(values: impl Iterator<Item = &'a f64>) -> Option<CriterionStats> {
    let mut sum = 0.0;
    let mut min = f64::INFINITY;
    let mut max = f64::NEG_INFINITY;
    let mut finite = 0usize;
    let mut non_finite = 0usize;
    for &v in values {
        if v.is_finite() {
            sum += v;
            min = min.min(v);
            max = max.max(v);
            finite += 1;
        } else {
            non_finite += 1;
        }
    }
    if finite == 0 && non_finite == 0 {
        return None;
    }
    if finite == 0 {
        return Some(CriterionStats {
            mean: f64::NAN,
            min: f64::NAN,
            max: f64::NAN,
            finite_count: 0,
            non_finite_count: non_finite,
        });
    }
    Some(CriterionStats {
        mean: sum / finite as f64,
        min,
        max,
        finite_count: finite,
        non_finite_count: non_finite,
    })
}

/// Outcome of one selection: the chosen indices (ascending) and the
/// criterion values for the whole pool, so diagnostics never recompute.
/// Random selection has no criterion and leaves the vector empty.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionResult {
    pub chosen: Vec<usize>,
    pub criterion: Vec<f64>,
}

impl SelectionResult {
    pub fn chosen_stats(&self) -> Option<CriterionStats> {
        if self.criterion.is_empty() {
            return None;
        }
        stats_over(self.chosen.iter().map(|&i| &self.criterion[i]))
    }

    pub fn rejected_stats(&self) -> Option<CriterionStats> {
        if self.criterion.is_empty() {
            return None;
        }
        let chosen: std::collections::HashSet<usize> = self.chosen.iter().copied().collect();
        stats_over(
            self.criterion.iter().enumerate().filter(|(i, _)| !chosen.contains(i)).map(|(_, v)| v),
        )
    }
}

fn check_b(pool: usize, b: usize) -> Result<()> {
    if b > pool {
        return Err(Error::invalid(format!("selection: b = {b} exceeds pool size {pool}")));
    }
    Ok(())
}

/// Keep the `b` indices with the smallest values; ties break to the lowest
/// index. Used directly by MMS (ascending distance = descending uncertainty).
fn smallest_k(values: &[f64], b: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&i, &j| values[i].partial_cmp(&values[j]).unwrap().then(i.cmp(&j)));
    let mut chosen: Vec<usize> = order[..b].to_vec();
    chosen.sort_unstable();
    chosen
}

fn largest_k(values: &[f64], b: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&i, &j| values[j].partial_cmp(&values[i]).unwrap().then(i.cmp(&j)));
    let mut chosen: Vec<usize> = order[..b].to_vec();
    chosen.sort_unstable();
    chosen
}

/// The `b` samples with the smallest minimal margin scores. `+inf`
/// sentinels sort last, so they are chosen only when nothing else is left.
pub fn select_mms(margin_scores: &[MarginScore], b: usize) -> Result<SelectionResult> {
    check_b(margin_scores.len(), b)?;
    let criterion: Vec<f64> = margin_scores.iter().map(|s| s.mms).collect();
    Ok(SelectionResult { chosen: smallest_k(&criterion, b), criterion })
}

/// The `b` samples with the largest per-sample losses.
pub fn select_hard_negative(per_sample_ce: &[f64], b: usize) -> Result<SelectionResult> {
    check_b(per_sample_ce.len(), b)?;
    Ok(SelectionResult { chosen: largest_k(per_sample_ce, b), criterion: per_sample_ce.to_vec() })
}

/// The `b` samples whose softmax posteriors have the largest Shannon
/// entropy, computed through the shifted log-sum-exp so extreme scores
/// stay finite.
pub fn select_entropy(scores: &Matrix, b: usize) -> Result<SelectionResult> {
    check_b(scores.rows(), b)?;
    let mut criterion = Vec::with_capacity(scores.rows());
    for i in 0..scores.rows() {
        let row = scores.row(i);
        let lse = log_sum_exp(row)?;
        // H = lse - sum_j p_j s_j
        let mut weighted = 0.0;
        for &s in row {
            weighted += (s - lse).exp() * s;
        }
        criterion.push(lse - weighted);
    }
    Ok(SelectionResult { chosen: largest_k(&criterion, b), criterion })
}

/// Uniform sample of `b` of `big_batch` indices without replacement,
/// deterministic in the rng state.
pub fn select_random(big_batch: usize, b: usize, rng: &mut Rng) -> Result<SelectionResult> {
    check_b(big_batch, b)?;
    Ok(SelectionResult { chosen: rng.sample_indices(big_batch, b), criterion: Vec::new() })
}
