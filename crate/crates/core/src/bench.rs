//! Wall-clock comparison of retrieval across families.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::greedy::retrieve;
use crate::oracle::random_instance;
use crate::smi::SmiSpec;
use crate::submodular::Family;

pub const BENCH_DIM: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub family: Family,
    pub n: usize,
    pub k: usize,
    /// Fastest of the repeats, in milliseconds.
    pub wall_ms: f64,
    pub objective_value: f64,
}

/// Times `retrieve` on one seeded pool of `n` documents for each family.
pub fn bench_retrieval(families: &[Family], n: usize, k: usize, repeats: usize, seed: u64) -> Result<Vec<BenchRow>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let corpus = random_instance(&mut rng, n, 1, BENCH_DIM);
    let mut items = corpus.items().to_vec();
    let query = items.pop().expect("instance has a query").vector;
    let pool = crate::corpus::Corpus::new(items)?;
    families
        .iter()
        .map(|&family| {
            let spec = SmiSpec::new(family);
            let mut best = f64::INFINITY;
            let mut value = 0.0;
            for _ in 0..repeats.max(1) {
                let start = Instant::now();
                let r = retrieve(&spec, &pool, &query, k)?;
                best = best.min(start.elapsed().as_secs_f64() * 1e3);
                value = r.objective_value;
            }
            Ok(BenchRow {
                family,
                n,
                k,
                wall_ms: best,
                objective_value: value,
            })
        })
        .collect()
}
