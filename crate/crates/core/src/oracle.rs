//! Exhaustive ground truth: brute-force subset maximization and finite-difference gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{build_kernel, Corpus, Kernel};
use crate::error::{Error, Result};
use crate::greedy::{lazy_greedy, targeted_select_from};
use crate::loss::{loss_combined, BatchSets, LossSpec};
use crate::smi::{eval_smi, SmiSpec};
use crate::submodular::{eval_f, Family, SubmodularSpec, SubmodularState};

/// Enumeration guardrail.
pub const MAX_SUBSETS: u128 = 1_000_000;

/// 1 − 1/e.
pub const GREEDY_BOUND: f64 = 0.632_120_558_828_557_7;

/// What the oracle maximizes.
#[derive(Debug, Clone, PartialEq)]
pub enum Target {
    /// `I_f(·; Q)` with a fixed query set.
    Smi { spec: SmiSpec, query: Vec<usize> },
    /// `f(·)` over the whole ground set.
    Submodular(SubmodularSpec),
}

impl Target {
    fn eval<K: Kernel + ?Sized>(&self, kernel: &K, set: &[usize]) -> Result<f64> {
        match self {
            Target::Smi { spec, query } => eval_smi(spec, kernel, set, query),
            Target::Submodular(spec) => eval_f(spec, kernel, set),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleResult {
    pub opt_set: Vec<usize>,
    pub opt_value: f64,
    pub greedy_set: Vec<usize>,
    pub greedy_value: f64,
    pub ratio: f64,
    pub subsets_evaluated: u128,
}

pub fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    (0..k).fold(1u128, |acc, i| acc * (n - i) as u128 / (i + 1) as u128)
}

/// Number of non-empty subsets of size at most `k`.
pub fn subsets_up_to(n: usize, k: usize) -> u128 {
    (1..=k.min(n)).map(|j| binomial(n, j)).sum()
}

/// Calls `visit` on every size-`size` combination of `items`, in lexicographic order.
fn for_each_combination(items: &[usize], size: usize, visit: &mut dyn FnMut(&[usize]) -> Result<()>) -> Result<()> {
    let n = items.len();
    if size > n {
        return Ok(());
    }
    let mut idx: Vec<usize> = (0..size).collect();
    let mut current = Vec::with_capacity(size);
    loop {
        current.clear();
        current.extend(idx.iter().map(|&i| items[i]));
        visit(&current)?;
        let Some(pos) = (0..size).rev().find(|&i| idx[i] != i + n - size) else {
            return Ok(());
        };
        idx[pos] += 1;
        for j in pos + 1..size {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

/// Maximizes the target over all non-empty subsets of `candidates` with at most `k`
/// elements and compares against the greedy pick of the same budget.
pub fn brute_force_max<K: Kernel + ?Sized>(
    target: &Target,
    kernel: &K,
    candidates: &[usize],
    k: usize,
) -> Result<OracleResult> {
    if k == 0 || candidates.is_empty() {
        return Err(Error::Invalid("oracle needs k >= 1 and a non-empty ground set".into()));
    }
    let total = subsets_up_to(candidates.len(), k);
    if total > MAX_SUBSETS {
        return Err(Error::TooLarge {
            subsets: total,
            limit: MAX_SUBSETS,
        });
    }
    let mut cands = candidates.to_vec();
    cands.sort_unstable();
    let mut best: Option<(Vec<usize>, f64)> = None;
    let mut count = 0u128;
    for size in 1..=k.min(cands.len()) {
        for_each_combination(&cands, size, &mut |set| {
            count += 1;
            let v = target.eval(kernel, set)?;
            if best.as_ref().is_none_or(|(_, b)| v > *b) {
                best = Some((set.to_vec(), v));
            }
            Ok(())
        })?;
    }
    debug_assert_eq!(count, total);
    let (opt_set, opt_value) = best.expect("at least one subset");

    let greedy_set: Vec<usize> = match target {
        Target::Smi { spec, query } => targeted_select_from(spec, kernel, &cands, query, k)?.indices(),
        Target::Submodular(spec) => {
            let mut state = SubmodularState::new(*spec, kernel)?;
            lazy_greedy(&mut state, &cands, k)?.into_iter().map(|p| p.0).collect()
        }
    };
    let mut canonical = greedy_set.clone();
    canonical.sort_unstable();
    let greedy_value = target.eval(kernel, &canonical)?;
    let ratio = if opt_value > 0.0 {
        greedy_value / opt_value
    } else if greedy_value >= opt_value {
        1.0
    } else {
        0.0
    };
    Ok(OracleResult {
        opt_set,
        opt_value,
        greedy_set,
        greedy_value,
        ratio,
        subsets_evaluated: count,
    })
}

/// Central finite differences of the combined loss with respect to every embedding coordinate.
pub fn fd_gradient(spec: &LossSpec, embeddings: &[Vec<f64>], batch: &BatchSets, h: f64) -> Result<Vec<Vec<f64>>> {
    if !(h > 0.0) {
        return Err(Error::Invalid(format!("step must be > 0, got {h}")));
    }
    let mut work = embeddings.to_vec();
    let mut grad = vec![vec![0.0; embeddings.first().map_or(0, Vec::len)]; embeddings.len()];
    for r in 0..work.len() {
        for c in 0..work[r].len() {
            let orig = work[r][c];
            work[r][c] = orig + h;
            let plus = loss_combined(spec, &work, batch)?.combined;
            work[r][c] = orig - h;
            let minus = loss_combined(spec, &work, batch)?.combined;
            work[r][c] = orig;
            grad[r][c] = (plus - minus) / (2.0 * h);
        }
    }
    Ok(grad)
}

/// `max |a − b| / max |b|`, the error measure for gradient checks.
pub fn max_relative_error(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    let diff = a
        .iter()
        .flatten()
        .zip(b.iter().flatten())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max);
    let scale = b.iter().flatten().map(|y| y.abs()).fold(0.0, f64::max);
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

/// Summary of repeated greedy-vs-optimum trials on random instances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatioStudy {
    pub family: Family,
    pub n: usize,
    pub k: usize,
    pub trials: usize,
    pub seed: u64,
    pub bound: f64,
    pub min_ratio: f64,
    pub mean_ratio: f64,
    pub max_ratio: f64,
    pub below_bound: usize,
    pub ratios: Vec<f64>,
}

/// Size of the query set attached to each random instance.
pub const STUDY_QUERY_SIZE: usize = 3;

/// Random retrieval instance: `n` candidates followed by a query set, all in the positive
/// orthant of `dim` dimensions.
pub fn random_instance(rng: &mut ChaCha8Rng, n: usize, query: usize, dim: usize) -> Corpus {
    let vectors = (0..n + query)
        .map(|_| (0..dim).map(|_| rng.random_range(0.01..1.0)).collect())
        .collect();
    Corpus::from_vectors(vectors).expect("positive vectors are valid")
}

/// Greedy/OPT ratios of `I_f(·; Q)` over `trials` seeded random instances.
pub fn ratio_study(spec: SmiSpec, n: usize, k: usize, trials: usize, seed: u64) -> Result<RatioStudy> {
    if trials == 0 {
        return Err(Error::Invalid("trials must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ratios = Vec::with_capacity(trials);
    for _ in 0..trials {
        let corpus = random_instance(&mut rng, n, STUDY_QUERY_SIZE, 8);
        let kernel = build_kernel(&corpus, spec.family.wants_nonneg_kernel());
        let candidates: Vec<usize> = (0..n).collect();
        let query: Vec<usize> = (n..n + STUDY_QUERY_SIZE).collect();
        let target = Target::Smi { spec, query };
        ratios.push(brute_force_max(&target, &kernel, &candidates, k)?.ratio);
    }
    let min_ratio = ratios.iter().copied().fold(f64::INFINITY, f64::min);
    let max_ratio = ratios.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(RatioStudy {
        family: spec.family,
        n,
        k,
        trials,
        seed,
        bound: GREEDY_BOUND,
        min_ratio,
        mean_ratio: ratios.iter().sum::<f64>() / trials as f64,
        max_ratio,
        below_bound: ratios.iter().filter(|&&r| r < GREEDY_BOUND - 1e-9).count(),
        ratios,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::SimilarityKernel;

    #[test]
    fn enumerates_every_subset_once() {
        let k = SimilarityKernel::identity(7);
        let target = Target::Submodular(SubmodularSpec::new(Family::Fl));
        let cands: Vec<usize> = (0..7).collect();
        let r = brute_force_max(&target, &k, &cands, 3).unwrap();
        assert_eq!(r.subsets_evaluated, 7 + 21 + 35);
        assert_eq!(subsets_up_to(7, 3), 63);
    }

    #[test]
    fn identity_fl_any_pair_is_optimal() {
        let k = SimilarityKernel::identity(5);
        let target = Target::Submodular(SubmodularSpec::new(Family::Fl));
        let r = brute_force_max(&target, &k, &[0, 1, 2, 3, 4], 2).unwrap();
        assert_eq!(r.opt_set, vec![0, 1]);
        assert_eq!(r.greedy_value, r.opt_value);
        assert_eq!(r.ratio, 1.0);
    }

    #[test]
    fn modular_gc_is_solved_exactly() {
        let study = ratio_study(SmiSpec::new(Family::Gc), 8, 3, 10, 3).unwrap();
        assert!(study.ratios.iter().all(|&r| r == 1.0));
    }

    #[test]
    fn size_guardrail() {
        let k = SimilarityKernel::identity(60);
        let cands: Vec<usize> = (0..60).collect();
        let target = Target::Submodular(SubmodularSpec::new(Family::Gc));
        assert!(matches!(
            brute_force_max(&target, &k, &cands, 5),
            Err(Error::TooLarge { .. })
        ));
    }

    #[test]
    fn deterministic_and_order_independent() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let corpus = random_instance(&mut rng, 7, 2, 5);
        let kernel = build_kernel(&corpus, true);
        let target = Target::Smi {
            spec: SmiSpec::new(Family::Fl),
            query: vec![7, 8],
        };
        let a = brute_force_max(&target, &kernel, &[0, 1, 2, 3, 4, 5, 6], 3).unwrap();
        let b = brute_force_max(&target, &kernel, &[6, 5, 4, 3, 2, 1, 0], 3).unwrap();
        assert_eq!(a, b);
    }
}
