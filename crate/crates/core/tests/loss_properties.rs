mod common;

use common::{random_nonneg_kernel, rng, subsets};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use smiselect::corpus::Scaled;
use smiselect::loss::{loss_combined, loss_quality, spp_probability, BatchSets, Example, LossSpec};
use smiselect::oracle::{fd_gradient, max_relative_error};
use smiselect::Family;

/// Two examples of nine rows each: query, 2 positives, 2 negatives, 4 paraphrases.
fn random_batch(rng: &mut ChaCha8Rng, dim: usize) -> (Vec<Vec<f64>>, BatchSets) {
    let rows = (0..18)
        .map(|_| (0..dim).map(|_| rng.random_range(0.05..1.0)).collect())
        .collect();
    let ex = |o: usize| Example {
        query: o,
        positives: vec![o + 1, o + 2],
        negatives: vec![o + 3, o + 4],
        paraphrases: vec![o + 5, o + 6, o + 7, o + 8],
    };
    (rows, BatchSets::new(vec![ex(0), ex(9)]))
}

#[test]
fn analytic_gradient_matches_central_differences() {
    for family in Family::ALL {
        for seed in 0..5 {
            let (rows, batch) = random_batch(&mut rng(seed), 5);
            let spec = LossSpec::new(family, 0.5);
            let analytic = loss_combined(&spec, &rows, &batch).unwrap().grad;
            let numeric = fd_gradient(&spec, &rows, &batch, 1e-5).unwrap();
            let err = max_relative_error(&analytic, &numeric);
            assert!(err <= 1e-4, "{family} seed {seed}: {err}");
        }
    }
}

#[test]
fn finite_difference_error_is_second_order() {
    let (rows, batch) = random_batch(&mut rng(99), 4);
    let spec = LossSpec::new(Family::Gc, 0.3);
    let analytic = loss_combined(&spec, &rows, &batch).unwrap().grad;
    let e1 = max_relative_error(&fd_gradient(&spec, &rows, &batch, 2e-3).unwrap(), &analytic);
    let e2 = max_relative_error(&fd_gradient(&spec, &rows, &batch, 4e-3).unwrap(), &analytic);
    let ratio = e2 / e1;
    assert!((3.0..5.0).contains(&ratio), "doubling h scaled the error by {ratio}");
}

#[test]
fn gradient_ignores_row_scale() {
    // The loss only sees normalized rows, so scaling a row by c scales its gradient by 1/c.
    let (mut rows, batch) = random_batch(&mut rng(3), 5);
    let spec = LossSpec::new(Family::Fl, 0.5);
    let before = loss_combined(&spec, &rows, &batch).unwrap();
    rows[1].iter_mut().for_each(|x| *x *= 4.0);
    let after = loss_combined(&spec, &rows, &batch).unwrap();
    assert!((before.combined - after.combined).abs() <= 1e-12 * before.combined);
    for (a, b) in after.grad[1].iter().zip(&before.grad[1]) {
        assert!((4.0 * a - b).abs() <= 1e-9 * b.abs().max(1e-12));
    }
}

#[test]
fn point_process_probabilities_sum_to_one() {
    for family in Family::ALL {
        for n in [3usize, 6, 10] {
            let k = random_nonneg_kernel(&mut rng(n as u64), n + 2, 6);
            let ground: Vec<usize> = (0..n).collect();
            let spec = LossSpec::new(family, 0.0);
            let total: f64 = subsets(&ground)
                .iter()
                .filter(|s| !s.is_empty())
                .map(|s| spp_probability(&spec, &k, s, &[n, n + 1], &ground).unwrap())
                .sum();
            assert!((total - 1.0).abs() <= 1e-9, "{family} n={n}: {total}");
        }
    }
}

#[test]
fn quality_loss_is_scale_invariant_for_gc_and_fl() {
    let k = random_nonneg_kernel(&mut rng(8), 7, 5);
    let batch = BatchSets::new(vec![Example {
        query: 0,
        positives: vec![1, 2],
        negatives: vec![3, 4, 5],
        paraphrases: vec![6],
    }]);
    for family in [Family::Gc, Family::Fl] {
        let spec = LossSpec::new(family, 0.0);
        let base = loss_quality(&spec, &k, &batch).unwrap().value;
        for c in [0.5, 2.0, 10.0] {
            let scaled = loss_quality(&spec, &Scaled { inner: &k, factor: c }, &batch)
                .unwrap()
                .value;
            assert!((scaled - base).abs() <= 1e-9, "{family} c={c}");
        }
    }
}
