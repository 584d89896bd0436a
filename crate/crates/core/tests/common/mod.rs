#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use smiselect::{build_kernel, Corpus, SimilarityKernel};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Cosine kernel of `n` random vectors in the positive orthant: nonnegative and PSD.
pub fn random_nonneg_kernel(rng: &mut ChaCha8Rng, n: usize, d: usize) -> SimilarityKernel {
    let vs: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..d).map(|_| rng.random_range(0.01..1.0)).collect())
        .collect();
    build_kernel(&Corpus::from_vectors(vs).unwrap(), true)
}

/// All subsets of `items` as index vectors, in lexicographic bitmask order.
pub fn subsets(items: &[usize]) -> Vec<Vec<usize>> {
    (0u32..(1 << items.len()))
        .map(|mask| {
            items
                .iter()
                .enumerate()
                .filter(|(i, _)| mask & (1 << i) != 0)
                .map(|(_, &x)| x)
                .collect()
        })
        .collect()
}

/// Explicit similarity matrix.
pub struct Dense(pub Vec<Vec<f64>>);

impl smiselect::Kernel for Dense {
    fn size(&self) -> usize {
        self.0.len()
    }
    fn sim(&self, a: usize, b: usize) -> f64 {
        self.0[a][b]
    }
}
