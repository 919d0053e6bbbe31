//! Decision-boundary geometry at a linear head.
//!
//! For classes `p` and `q` with weight rows `w_p`, `w_q` and biases `b_p`,
//! `b_q`, the boundary is the hyperplane where both scores tie. The signed
//! Euclidean distance from a feature point to that hyperplane is
//!
//! ```text
//! d_{p,q}(phi) = (w_pq . phi + b_pq) / |w_pq|,   w_pq = w_p - w_q
//! ```
//!
//! positive on the side where `p` outscores `q`.
//!
//! The minimal margin score (MMS) of a sample is the distance to the
//! boundary between its two highest-scoring classes, computed without the
//! true label. Small MMS means the prediction flips under a small feature
//! displacement, i.e. high uncertainty.
//!
//! Degenerate top-2 pair (`|w_diff| <= 1e-12`): if the score gap is also
//! `<= 1e-12` the sample sits on a collapsed boundary and its MMS is 0
//! (maximal uncertainty); if the gap is positive there is no boundary
//! between the tied weight rows and the MMS is `+inf` (never selected).
//! All argmax ties break toward the lowest class index.

use crate::error::{Error, Result};
use crate::model::LinearHead;
use crate::numeric::{dot, l2_norm, Matrix};

/// Norm threshold below which two weight rows count as coincident.
pub const DEGENERATE_NORM: f64 = 1e-12;

/// The hyperplane where classes `p` and `q` score equally.
#[derive(Debug, Clone, PartialEq)]
pub struct PairBoundary {
    pub w_diff: Vec<f64>,
    pub b_diff: f64,
    pub p: usize,
    pub q: usize,
}

impl PairBoundary {
    pub fn from_head(head: &LinearHead, p: usize, q: usize) -> Result<PairBoundary> {
        let n = head.n_classes();
        if p >= n || q >= n {
            return Err(Error::invalid(format!("boundary classes ({p},{q}) out of range {n}")));
        }
        if p == q {
            return Err(Error::invalid(format!("boundary requires distinct classes, got {p}")));
        }
        let w_diff: Vec<f64> =
            head.w.row(p).iter().zip(head.w.row(q)).map(|(a, b)| a - b).collect();
        Ok(PairBoundary { w_diff, b_diff: head.b[p] - head.b[q], p, q })
    }
}

/// Signed distance from `x` to the boundary; positive iff `p` outscores `q`.
pub fn pair_distance(boundary: &PairBoundary, x: &[f64]) -> Result<f64> {
    if x.len() != boundary.w_diff.len() {
        return Err(Error::dim(format!(
            "pair_distance: point dim {} vs boundary dim {}",
            x.len(),
            boundary.w_diff.len()
        )));
    }
    let norm = l2_norm(&boundary.w_diff);
    if norm <= DEGENERATE_NORM {
        return Err(Error::DegenerateBoundary { p: boundary.p, q: boundary.q, norm });
    }
    Ok((dot(&boundary.w_diff, x) + boundary.b_diff) / norm)
}

/// Highest-scoring class other than `y`; ties break to the lowest index.
pub fn competitive_class(scores: &[f64], y: usize) -> Result<usize> {
    if scores.len() < 2 {
        return Err(Error::invalid(format!("competitive_class: {} scores", scores.len())));
    }
    if y >= scores.len() {
        return Err(Error::invalid(format!("competitive_class: label {y} out of range")));
    }
    let mut best: Option<usize> = None;
    for (j, &s) in scores.iter().enumerate() {
        if j == y {
            continue;
        }
        match best {
            Some(b) if scores[b] >= s => {}
            _ => best = Some(j),
        }
    }
    Ok(best.expect("at least two classes"))
}

/// Signed distance from `phi` to the boundary between the true class `y`
/// and its competitive class. Non-negative iff the classification of `phi`
/// is correct.
pub fn true_margin(head: &LinearHead, phi: &[f64], y: usize) -> Result<f64> {
    let scores = head.scores(&Matrix::from_vec(1, phi.len(), phi.to_vec())?)?;
    let m = competitive_class(scores.row(0), y)?;
    let boundary = PairBoundary::from_head(head, y, m)?;
    pair_distance(&boundary, phi)
}

/// Top two predicted classes, ties to the lowest index.
pub fn top_two(scores: &[f64]) -> (usize, usize) {
    debug_assert!(scores.len() >= 2);
    let mut j1 = 0;
    for (j, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[j1] {
            j1 = j;
        }
    }
    let mut j2 = if j1 == 0 { 1 } else { 0 };
    for (j, &s) in scores.iter().enumerate() {
        if j == j1 || j == j2 {
            continue;
        }
        if s > scores[j2] {
            j2 = j;
        }
    }
    (j1, j2)
}

/// Margin geometry of one sample: predicted class, runner-up, and the
/// distance to the boundary between them. `true_margin` is filled only
/// when a label was supplied.
#[derive(Debug, Clone, PartialEq)]
pub struct MarginScore {
    pub top_class: usize,
    pub runner_up: usize,
    pub mms: f64,
    pub true_margin: Option<f64>,
}

/// Minimal margin score of a feature point: label-free distance to the
/// boundary between its two highest-scoring classes.
pub fn mms(head: &LinearHead, phi: &[f64]) -> Result<MarginScore> {
    if head.n_classes() < 2 {
        return Err(Error::invalid("mms: need at least 2 classes".to_string()));
    }
    if phi.len() != head.feat_dim() {
        return Err(Error::dim(format!(
            "mms: point dim {} vs head feat_dim {}",
            phi.len(),
            head.feat_dim()
        )));
    }
    let scores_m = head.scores(&Matrix::from_vec(1, phi.len(), phi.to_vec())?)?;
    let scores = scores_m.row(0);
    let (j1, j2) = top_two(scores);
    let gap = scores[j1] - scores[j2];
    let w_diff: Vec<f64> =
        head.w.row(j1).iter().zip(head.w.row(j2)).map(|(a, b)| a - b).collect();
    let norm = l2_norm(&w_diff);
    let d = if norm <= DEGENERATE_NORM {
        if gap <= DEGENERATE_NORM {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        gap / norm
    };
    Ok(MarginScore { top_class: j1, runner_up: j2, mms: d, true_margin: None })
}

/// MMS for every row of a feature batch; true margins filled in when labels
/// are given.
pub fn score_batch(
    head: &LinearHead,
    features: &Matrix,
    labels: Option<&[usize]>,
) -> Result<Vec<MarginScore>> {
    if let Some(ls) = labels {
        if ls.len() != features.rows() {
            return Err(Error::dim(format!(
                "score_batch: {} labels for {} rows",
                ls.len(),
                features.rows()
            )));
        }
    }
    let mut out = Vec::with_capacity(features.rows());
    for i in 0..features.rows() {
        let phi = features.row(i);
        let mut entry = mms(head, phi)?;
        if let Some(ls) = labels {
            entry.true_margin = Some(true_margin(head, phi, ls[i])?);
        }
        out.push(entry);
    }
    Ok(out)
}

/// Largest feature-row norm in the batch.
pub fn phi_max_norm(features: &Matrix) -> Result<f64> {
    if features.rows() == 0 {
        return Err(Error::EmptyInput("phi_max_norm"));
    }
    Ok((0..features.rows()).map(|i| l2_norm(features.row(i))).fold(0.0, f64::max))
}
