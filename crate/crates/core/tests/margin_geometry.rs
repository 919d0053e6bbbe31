//! Cross-checks between the margin module and its independent oracles.

use marginlab_core::margin::{mms, score_batch, phi_max_norm};
use marginlab_core::model::LinearHead;
use marginlab_core::numeric::{dot, l2_norm, Matrix, Rng};
use marginlab_core::oracle::brute_force_mms;

fn random_head(rng: &mut Rng, n: usize, d: usize) -> LinearHead {
    let mut w = Matrix::zeros(n, d);
    for v in w.data_mut() {
        *v = rng.uniform_in(-2.0, 2.0);
    }
    let b: Vec<f64> = (0..n).map(|_| rng.uniform_in(-2.0, 2.0)).collect();
    LinearHead::new(w, b).unwrap()
}

fn random_phi(rng: &mut Rng, d: usize) -> Vec<f64> {
    (0..d).map(|_| rng.uniform_in(-2.0, 2.0)).collect()
}

#[test]
fn mms_agrees_with_brute_force_on_random_draws() {
    let mut rng = Rng::new(424_242);
    for _ in 0..2000 {
        let n = 2 + rng.below(5);
        let d = 2 + rng.below(4);
        let head = random_head(&mut rng, n, d);
        let phi = random_phi(&mut rng, d);
        let fast = mms(&head, &phi).unwrap().mms;
        let slow = brute_force_mms(&head, &phi).unwrap();
        assert!(
            (fast - slow).abs() < 1e-9,
            "disagreement: fast {fast}, brute force {slow}"
        );
    }
}

#[test]
fn crossing_the_top2_boundary_swaps_the_pair_order() {
    let mut rng = Rng::new(77_001);
    for _ in 0..1000 {
        let n = 2 + rng.below(5);
        let d = 2 + rng.below(4);
        let head = random_head(&mut rng, n, d);
        let phi = random_phi(&mut rng, d);
        let score = mms(&head, &phi).unwrap();
        if !score.mms.is_finite() {
            continue;
        }
        let (j1, j2) = (score.top_class, score.runner_up);
        let diff: Vec<f64> =
            head.w.row(j1).iter().zip(head.w.row(j2)).map(|(a, b)| a - b).collect();
        let norm = l2_norm(&diff);
        let u: Vec<f64> = diff.iter().map(|v| v / norm).collect();
        let eps = 1e-6 * (1.0 + score.mms);

        let scores_at = |t: f64| -> (f64, f64) {
            let moved: Vec<f64> = phi.iter().zip(&u).map(|(p, ui)| p - t * ui).collect();
            let s1 = dot(head.w.row(j1), &moved) + head.b[j1];
            let s2 = dot(head.w.row(j2), &moved) + head.b[j2];
            (s1, s2)
        };
        let (s1_over, s2_over) = scores_at(score.mms + eps);
        assert!(
            s2_over > s1_over,
            "pair order not swapped past the boundary (gap {})",
            s1_over - s2_over
        );
        let (s1_under, s2_under) = scores_at(score.mms - eps);
        assert!(
            s1_under > s2_under,
            "pair order lost before the boundary (gap {})",
            s1_under - s2_under
        );
    }
}

#[test]
fn batch_ordering_is_invariant_to_common_scaling() {
    let mut rng = Rng::new(5150);
    for _ in 0..200 {
        let head = random_head(&mut rng, 4, 3);
        let mut features = Matrix::zeros(25, 3);
        for v in features.data_mut() {
            *v = rng.uniform_in(-2.0, 2.0);
        }
        let scores = score_batch(&head, &features, None).unwrap();
        let ds: Vec<f64> = scores.iter().map(|s| s.mms).collect();
        let argsort = |v: &[f64]| -> Vec<usize> {
            let mut idx: Vec<usize> = (0..v.len()).collect();
            idx.sort_by(|&a, &b| v[a].partial_cmp(&v[b]).unwrap().then(a.cmp(&b)));
            idx
        };
        let base = argsort(&ds);
        let bound = phi_max_norm(&features).unwrap();
        let scaled: Vec<f64> = ds.iter().map(|d| d / bound).collect();
        assert_eq!(argsort(&scaled), base);
    }
}
