//! Independent verification machinery.
//!
//! Nothing in this module shares computation with the code it checks: the
//! brute-force margin distance re-derives the projection from scratch, the
//! gradient checker uses central finite differences, and the 2-D max-margin
//! solver enumerates closest-pair candidates between convex hulls. Shared
//! helpers would invalidate the independence claim, so only `numeric`
//! primitives and closed-form math appear here.

use crate::error::{Error, Result};
use crate::model::{LinearHead, Model};
use crate::numeric::{dot, l2_norm, Matrix};
use crate::objective::{composite_loss_with_phi_max, LossMode};

/// Brute-force minimal margin distance: locate the two highest scores, then
/// solve for the displacement `t` along the boundary normal `u` at which the
/// two scores tie, i.e. `s_{j1}(phi - t u) = s_{j2}(phi - t u)`. Returns
/// `|t|`. Degenerate pairs mirror the conventions of the checked module:
/// coincident rows give 0 on a tied score and `+inf` otherwise.
pub fn brute_force_mms(head: &LinearHead, phi: &[f64]) -> Result<f64> {
    let n = head.n_classes();
    if n < 2 {
        return Err(Error::invalid("brute_force_mms: need at least 2 classes".to_string()));
    }
    if phi.len() != head.feat_dim() {
        return Err(Error::dim(format!(
            "brute_force_mms: point dim {} vs head {}",
            phi.len(),
            head.feat_dim()
        )));
    }
    // scores computed locally, not via the head's batch path
    let scores: Vec<f64> = (0..n).map(|j| dot(head.w.row(j), phi) + head.b[j]).collect();
    let mut j1 = 0;
    for j in 1..n {
        if scores[j] > scores[j1] {
            j1 = j;
        }
    }
    let mut j2 = usize::MAX;
    for j in 0..n {
        if j != j1 && (j2 == usize::MAX || scores[j] > scores[j2]) {
            j2 = j;
        }
    }
    let diff: Vec<f64> = head.w.row(j1).iter().zip(head.w.row(j2)).map(|(a, b)| a - b).collect();
    let norm = l2_norm(&diff);
    let gap = scores[j1] - scores[j2];
    if norm <= 1e-12 {
        return Ok(if gap <= 1e-12 { 0.0 } else { f64::INFINITY });
    }
    let u: Vec<f64> = diff.iter().map(|v| v / norm).collect();
    // tie condition: gap - t * (w_j1 - w_j2) . u = 0
    let rate = dot(&diff, &u);
    Ok((gap / rate).abs())
}

/// Outcome of a finite-difference gradient comparison.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// Largest relative error over all parameters, with
    /// `rel = |analytic - numeric| / max(1, |analytic|, |numeric|)`.
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub worst_label: String,
    pub worst_analytic: f64,
    pub worst_numeric: f64,
    pub epsilon: f64,
    pub n_params: usize,
}

/// Central finite differences of `loss` at `params`, compared coordinate by
/// coordinate against `analytic`. `label` names a parameter index for the
/// report.
pub fn finite_diff_grad<F, L>(
    mut loss: F,
    params: &[f64],
    analytic: &[f64],
    epsilon: f64,
    label: L,
) -> Result<GradCheckReport>
where
    F: FnMut(&[f64]) -> Result<f64>,
    L: Fn(usize) -> String,
{
    if epsilon <= 0.0 {
        return Err(Error::invalid(format!("finite_diff_grad: epsilon = {epsilon}")));
    }
    if params.len() != analytic.len() {
        return Err(Error::dim(format!(
            "finite_diff_grad: {} params vs {} analytic entries",
            params.len(),
            analytic.len()
        )));
    }
    let mut work = params.to_vec();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_index: 0,
        worst_label: String::new(),
        worst_analytic: 0.0,
        worst_numeric: 0.0,
        epsilon,
        n_params: params.len(),
    };
    for k in 0..params.len() {
        let orig = work[k];
        work[k] = orig + epsilon;
        let plus = loss(&work)?;
        work[k] = orig - epsilon;
        let minus = loss(&work)?;
        work[k] = orig;
        let numeric = (plus - minus) / (2.0 * epsilon);
        let a = analytic[k];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1.0);
        if rel > report.max_rel_error {
            report.max_rel_error = rel;
            report.worst_index = k;
            report.worst_label = label(k);
            report.worst_analytic = a;
            report.worst_numeric = numeric;
        }
    }
    if report.worst_label.is_empty() && !params.is_empty() {
        report.worst_label = label(0);
    }
    Ok(report)
}

fn flatten_params(model: &Model) -> (Vec<f64>, Vec<String>) {
    let mut params = Vec::new();
    let mut labels = Vec::new();
    for (k, layer) in model.extractor.layers.iter().enumerate() {
        for i in 0..layer.weight.rows() {
            for j in 0..layer.weight.cols() {
                params.push(layer.weight.get(i, j));
                labels.push(format!("layer{k}.weight[{i},{j}]"));
            }
        }
        for (i, &b) in layer.bias.iter().enumerate() {
            params.push(b);
            labels.push(format!("layer{k}.bias[{i}]"));
        }
    }
    for i in 0..model.head.w.rows() {
        for j in 0..model.head.w.cols() {
            params.push(model.head.w.get(i, j));
            labels.push(format!("head.w[{i},{j}]"));
        }
    }
    for (i, &b) in model.head.b.iter().enumerate() {
        params.push(b);
        labels.push(format!("head.b[{i}]"));
    }
    (params, labels)
}

fn unflatten_params(model: &Model, params: &[f64]) -> Model {
    let mut out = model.clone();
    let mut k = 0;
    for layer in &mut out.extractor.layers {
        for v in layer.weight.data_mut() {
            *v = params[k];
            k += 1;
        }
        for v in &mut layer.bias {
            *v = params[k];
            k += 1;
        }
    }
    for v in out.head.w.data_mut() {
        *v = params[k];
        k += 1;
    }
    for v in &mut out.head.b {
        *v = params[k];
        k += 1;
    }
    debug_assert_eq!(k, params.len());
    out
}

fn flatten_grads(grads: &crate::model::Gradients) -> Vec<f64> {
    let mut out = Vec::new();
    for w in &grads.layer_weights {
        out.extend_from_slice(w.data());
    }
    for b in &grads.layer_biases {
        out.extend_from_slice(b);
    }
    out.extend_from_slice(grads.head_w.data());
    out.extend_from_slice(&grads.head_b);
    out
}

/// Reject evaluation points where an argmax decision, a relu kink, or a
/// hinge kink sits within the finite-difference window, since central
/// differences straddling a non-smooth point are meaningless.
fn check_stability(
    cache: &crate::model::ForwardCache,
    labels: &[usize],
    mode: LossMode,
    epsilon: f64,
) -> Result<()> {
    let scores_norm = l2_norm(cache.scores.data()).max(1.0);
    let threshold = 10.0 * epsilon * scores_norm;
    for i in 0..cache.scores.rows() {
        let row = cache.scores.row(i);
        let mut sorted: Vec<f64> = row.to_vec();
        sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
        if sorted[0] - sorted[1] <= threshold {
            return Err(Error::UnstableEvalPoint(format!(
                "sample {i}: top-2 score gap {:.3e} <= {threshold:.3e}",
                sorted[0] - sorted[1]
            )));
        }
        let y = labels[i];
        let mut non_true: Vec<f64> =
            row.iter().enumerate().filter(|(j, _)| *j != y).map(|(_, &s)| s).collect();
        non_true.sort_by(|a, b| b.partial_cmp(a).unwrap());
        if non_true.len() >= 2 && non_true[0] - non_true[1] <= threshold {
            return Err(Error::UnstableEvalPoint(format!(
                "sample {i}: competitive-class gap {:.3e} <= {threshold:.3e}",
                non_true[0] - non_true[1]
            )));
        }
        if mode == LossMode::Hinge {
            let m = non_true[0];
            if ((row[y] - m) - 1.0).abs() <= threshold {
                return Err(Error::UnstableEvalPoint(format!(
                    "sample {i}: hinge argument within {threshold:.3e} of the kink"
                )));
            }
        }
    }
    for (k, pre) in cache.pre_activations.iter().enumerate() {
        if let Some(v) = pre.data().iter().find(|v| v.abs() <= 1e-6) {
            return Err(Error::UnstableEvalPoint(format!(
                "layer {k}: relu pre-activation {v:.3e} within 1e-6 of the kink"
            )));
        }
    }
    Ok(())
}

/// Full-parameter finite-difference check of the composite objective's
/// analytic gradients at one (model, batch) point. The feature-norm bound is
/// frozen at its base value, matching the stop-gradient convention of the
/// analytic path. Errors with [`Error::UnstableEvalPoint`] instead of
/// silently passing when the point is too close to an argmax flip or kink.
pub fn composite_grad_check(
    model: &Model,
    x: &Matrix,
    labels: &[usize],
    alpha: f64,
    mode: LossMode,
    mmr_enabled: bool,
    epsilon: f64,
) -> Result<GradCheckReport> {
    let cache = model.forward(x)?;
    check_stability(&cache, labels, mode, epsilon)?;
    let phi_max = crate::margin::phi_max_norm(&cache.features)?;
    let (_, grads) =
        composite_loss_with_phi_max(&model.head, &cache, labels, alpha, mode, mmr_enabled, phi_max)?;
    let analytic =
        flatten_grads(&model.backward(&cache, &grads.dl_dscores, &grads.extra_head_grad)?);
    let (params, param_labels) = flatten_params(model);
    let evaluator = |p: &[f64]| -> Result<f64> {
        let candidate = unflatten_params(model, p);
        let cache = candidate.forward(x)?;
        let (breakdown, _) = composite_loss_with_phi_max(
            &candidate.head,
            &cache,
            labels,
            alpha,
            mode,
            mmr_enabled,
            phi_max,
        )?;
        Ok(breakdown.composite)
    };
    finite_diff_grad(evaluator, &params, &analytic, epsilon, |k| param_labels[k].clone())
}

/// An exact maximum-margin separator in the plane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaxMargin2d {
    /// Unit normal pointing toward the positive set.
    pub normal: [f64; 2],
    /// Boundary is `{x : normal . x + offset = 0}`.
    pub offset: f64,
    pub margin: f64,
}

fn closest_on_segment(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> [f64; 2] {
    let ab = [b[0] - a[0], b[1] - a[1]];
    let len2 = ab[0] * ab[0] + ab[1] * ab[1];
    if len2 == 0.0 {
        return a;
    }
    let t = (((p[0] - a[0]) * ab[0] + (p[1] - a[1]) * ab[1]) / len2).clamp(0.0, 1.0);
    [a[0] + t * ab[0], a[1] + t * ab[1]]
}

fn verified_margin(
    normal: [f64; 2],
    offset: f64,
    pos: &[[f64; 2]],
    neg: &[[f64; 2]],
) -> f64 {
    let mut worst = f64::INFINITY;
    for p in pos {
        worst = worst.min(normal[0] * p[0] + normal[1] * p[1] + offset);
    }
    for n in neg {
        worst = worst.min(-(normal[0] * n[0] + normal[1] * n[1] + offset));
    }
    worst
}

/// Exact maximum-margin separator for two planar point sets.
///
/// The optimal boundary is the perpendicular bisector of the shortest
/// segment connecting the two convex hulls, and that segment is realized
/// either vertex-to-vertex or vertex-to-edge. Enumerating every
/// (vertex, vertex) pair and every (vertex, segment) combination therefore
/// covers the optimum; each candidate is scored by its verified worst-case
/// signed distance, which also detects non-separable inputs.
pub fn max_margin_2d(pos: &[[f64; 2]], neg: &[[f64; 2]]) -> Result<MaxMargin2d> {
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::EmptyInput("max_margin_2d"));
    }
    let mut best: Option<MaxMargin2d> = None;
    let mut consider = |a: [f64; 2], b: [f64; 2]| {
        // bisector of the segment from the negative-side point b to the
        // positive-side point a
        let diff = [a[0] - b[0], a[1] - b[1]];
        let norm = (diff[0] * diff[0] + diff[1] * diff[1]).sqrt();
        if norm == 0.0 {
            return;
        }
        let normal = [diff[0] / norm, diff[1] / norm];
        let mid = [(a[0] + b[0]) / 2.0, (a[1] + b[1]) / 2.0];
        let offset = -(normal[0] * mid[0] + normal[1] * mid[1]);
        let margin = verified_margin(normal, offset, pos, neg);
        if best.map_or(true, |s| margin > s.margin) {
            best = Some(MaxMargin2d { normal, offset, margin });
        }
    };
    for &p in pos {
        for &n in neg {
            consider(p, n);
        }
    }
    for &p in pos {
        for i in 0..neg.len() {
            for j in (i + 1)..neg.len() {
                consider(p, closest_on_segment(p, neg[i], neg[j]));
            }
        }
    }
    for &n in neg {
        for i in 0..pos.len() {
            for j in (i + 1)..pos.len() {
                consider(closest_on_segment(n, pos[i], pos[j]), n);
            }
        }
    }
    match best {
        Some(s) if s.margin > 0.0 => Ok(s),
        Some(s) => Err(Error::NonSeparable { margin: s.margin }),
        None => Err(Error::NonSeparable { margin: 0.0 }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::Rng;

    fn head(w: &[Vec<f64>], b: &[f64]) -> LinearHead {
        LinearHead::new(Matrix::from_rows(w).unwrap(), b.to_vec()).unwrap()
    }

    #[test]
    fn brute_force_worked_example() {
        let h = head(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![-1.0, -1.0]], &[0.0; 3]);
        let d = brute_force_mms(&h, &[2.0, 1.0]).unwrap();
        assert!((d - 1.0 / 2.0f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn brute_force_tied_scores() {
        let h = head(&[vec![1.0, 0.0], vec![0.0, 1.0]], &[0.0, 0.0]);
        assert_eq!(brute_force_mms(&h, &[1.0, 1.0]).unwrap(), 0.0);
    }

    #[test]
    fn brute_force_two_class_definition_collapse() {
        let mut rng = Rng::new(8);
        for _ in 0..200 {
            let w = vec![
                vec![rng.uniform_in(-2.0, 2.0), rng.uniform_in(-2.0, 2.0)],
                vec![rng.uniform_in(-2.0, 2.0), rng.uniform_in(-2.0, 2.0)],
            ];
            let b = vec![rng.uniform_in(-2.0, 2.0), rng.uniform_in(-2.0, 2.0)];
            let h = head(&w, &b);
            let phi = [rng.uniform_in(-2.0, 2.0), rng.uniform_in(-2.0, 2.0)];
            let s0 = dot(&w[0].clone(), &phi) + b[0];
            let s1 = dot(&w[1].clone(), &phi) + b[1];
            let wd = [w[0][0] - w[1][0], w[0][1] - w[1][1]];
            let expect = (s0 - s1).abs() / (wd[0] * wd[0] + wd[1] * wd[1]).sqrt();
            assert!((brute_force_mms(&h, &phi).unwrap() - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn finite_diff_quadratic_loss() {
        let params = [1.0, 2.0];
        let analytic = [1.0, 2.0];
        let report = finite_diff_grad(
            |p| Ok(0.5 * (p[0] * p[0] + p[1] * p[1])),
            &params,
            &analytic,
            1e-6,
            |k| format!("p[{k}]"),
        )
        .unwrap();
        assert!(report.max_rel_error < 1e-8, "rel {}", report.max_rel_error);
    }

    #[test]
    fn finite_diff_linear_loss_is_near_exact() {
        let a = [0.3, -1.7, 2.5];
        let params = [10.0, -4.0, 0.01];
        let report = finite_diff_grad(
            |p| Ok(a[0] * p[0] + a[1] * p[1] + a[2] * p[2]),
            &params,
            &a,
            1e-6,
            |k| format!("p[{k}]"),
        )
        .unwrap();
        assert!(report.max_rel_error < 1e-9, "rel {}", report.max_rel_error);
    }

    #[test]
    fn composite_check_passes_on_random_model() {
        let mut seed = 0u64;
        let mut checked = 0;
        while checked < 5 {
            seed += 1;
            let model = crate::model::init_model(&[2, 8], 3, seed).unwrap();
            let mut rng = Rng::new(1000 + seed);
            let mut x = Matrix::zeros(4, 2);
            for v in x.data_mut() {
                *v = rng.uniform_in(-2.0, 2.0);
            }
            let labels: Vec<usize> = (0..4).map(|_| rng.below(3)).collect();
            match composite_grad_check(&model, &x, &labels, 1e-3, LossMode::Ce, true, 1e-6) {
                Ok(report) => {
                    assert!(report.max_rel_error < 1e-4, "rel {}", report.max_rel_error);
                    checked += 1;
                }
                Err(Error::UnstableEvalPoint(_)) => continue,
                Err(e) => panic!("unexpected error: {e}"),
            }
        }
    }

    #[test]
    fn hinge_gradients_match_away_from_kinks() {
        let mut seed = 100u64;
        let mut checked = 0;
        while checked < 5 {
            seed += 1;
            let model = crate::model::init_model(&[2], 3, seed).unwrap();
            let mut rng = Rng::new(seed);
            let mut x = Matrix::zeros(4, 2);
            for v in x.data_mut() {
                *v = rng.uniform_in(-2.0, 2.0);
            }
            let labels: Vec<usize> = (0..4).map(|_| rng.below(3)).collect();
            match composite_grad_check(&model, &x, &labels, 1e-2, LossMode::Hinge, true, 1e-6) {
                Ok(report) => {
                    assert!(report.max_rel_error < 1e-5, "rel {}", report.max_rel_error);
                    checked += 1;
                }
                Err(Error::UnstableEvalPoint(_)) => continue,
                Err(e) => panic!("unexpected error: {e}"),
            }
        }
    }

    #[test]
    fn max_margin_symmetric_pair() {
        let s = max_margin_2d(&[[0.0, 1.0]], &[[0.0, -1.0]]).unwrap();
        assert!((s.normal[0]).abs() < 1e-12);
        assert!((s.normal[1] - 1.0).abs() < 1e-12);
        assert!(s.offset.abs() < 1e-12);
        assert!((s.margin - 1.0).abs() < 1e-12);
    }

    #[test]
    fn max_margin_midpoint_of_closest_pair() {
        let s = max_margin_2d(&[[0.0, 2.0]], &[[0.0, -4.0]]).unwrap();
        // boundary y = -1
        assert!((s.normal[1] - 1.0).abs() < 1e-12);
        assert!((s.offset - 1.0).abs() < 1e-12);
        assert!((s.margin - 3.0).abs() < 1e-12);
    }

    #[test]
    fn max_margin_vertex_edge_case() {
        // the closest feature is the edge ((-2,1),(2,1)) against the vertex (0,-1)
        let s = max_margin_2d(&[[-2.0, 1.0], [2.0, 1.0]], &[[0.0, -1.0]]).unwrap();
        assert!((s.margin - 1.0).abs() < 1e-12);
        assert!((s.normal[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn max_margin_detects_non_separable() {
        let pos = [[0.0, 0.0], [2.0, 2.0]];
        let neg = [[1.0, 1.0], [3.0, 3.0]];
        assert!(matches!(max_margin_2d(&pos, &neg), Err(Error::NonSeparable { .. })));
    }

    #[test]
    fn max_margin_all_points_respect_margin() {
        let mut rng = Rng::new(55);
        let mut done = 0;
        while done < 25 {
            let dir = rng.uniform_in(0.0, std::f64::consts::TAU);
            let (c, s) = (dir.cos(), dir.sin());
            let gap = rng.uniform_in(0.3, 1.5);
            let mut pos = Vec::new();
            let mut neg = Vec::new();
            for _ in 0..10 {
                let along = rng.uniform_in(-2.0, 2.0);
                let off = rng.uniform_in(gap, gap + 2.0);
                pos.push([-s * along + c * off, c * along + s * off]);
                let along = rng.uniform_in(-2.0, 2.0);
                let off = rng.uniform_in(gap, gap + 2.0);
                neg.push([-s * along - c * off, c * along - s * off]);
            }
            let sol = max_margin_2d(&pos, &neg).unwrap();
            for p in &pos {
                let d = sol.normal[0] * p[0] + sol.normal[1] * p[1] + sol.offset;
                assert!(d >= sol.margin - 1e-9, "positive point at {d} < {}", sol.margin);
            }
            for n in &neg {
                let d = -(sol.normal[0] * n[0] + sol.normal[1] * n[1] + sol.offset);
                assert!(d >= sol.margin - 1e-9, "negative point at {d} < {}", sol.margin);
            }
            done += 1;
        }
    }

    #[test]
    fn max_margin_dominates_random_directions() {
        let mut rng = Rng::new(91);
        let pos: Vec<[f64; 2]> =
            (0..8).map(|_| [rng.uniform_in(1.0, 3.0), rng.uniform_in(-2.0, 2.0)]).collect();
        let neg: Vec<[f64; 2]> =
            (0..8).map(|_| [rng.uniform_in(-3.0, -1.0), rng.uniform_in(-2.0, 2.0)]).collect();
        let sol = max_margin_2d(&pos, &neg).unwrap();
        for _ in 0..10_000 {
            let theta = rng.uniform_in(0.0, std::f64::consts::TAU);
            let normal = [theta.cos(), theta.sin()];
            // the best offset for a fixed direction centers the slab
            let min_pos = pos
                .iter()
                .map(|p| normal[0] * p[0] + normal[1] * p[1])
                .fold(f64::INFINITY, f64::min);
            let max_neg = neg
                .iter()
                .map(|n| normal[0] * n[0] + normal[1] * n[1])
                .fold(f64::NEG_INFINITY, f64::max);
            let margin = (min_pos - max_neg) / 2.0;
            assert!(
                margin <= sol.margin + 1e-9,
                "random direction beats the oracle: {margin} > {}",
                sol.margin
            );
        }
    }
}
