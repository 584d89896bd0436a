//! Budgeted greedy maximization with lazy evaluation, for annotation and retrieval.
//!
//! Each iteration adds the candidate with the largest marginal gain; ties go to the
//! lowest index. The lazy variant keeps stale gains in a max-heap as upper bounds and
//! only refreshes the top, which returns the same picks as the naive loop whenever the
//! objective has diminishing returns.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{dot, normalize, Corpus, Kernel, SimilarityKernel};
use crate::error::{Error, Result};
use crate::smi::{eval_smi, SmiSpec, SmiState};
use crate::submodular::{eval_f, Family, SubmodularSpec, SubmodularState};

/// Objective state that can report marginal gains against the current selection.
pub trait IncrementalGain {
    fn ground_size(&self) -> usize;
    /// Gain of adding `v`; `-inf` when the extension is infeasible.
    fn gain(&self, v: usize) -> f64;
    fn commit(&mut self, v: usize) -> Result<()>;
}

/// Stale gains within this relative band of the current best are refreshed before a pick
/// is accepted, so rounding noise in the bounds cannot reorder ties.
const REFRESH_BAND: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SelectionMode {
    Annotate,
    Retrieve,
    BaselineRandom,
    BaselineSimilar,
}

impl fmt::Display for SelectionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SelectionMode::Annotate => "annotate",
            SelectionMode::Retrieve => "retrieve",
            SelectionMode::BaselineRandom => "baseline-random",
            SelectionMode::BaselineSimilar => "baseline-similar",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectedItem {
    pub id: String,
    pub index: usize,
    pub gain: f64,
}

/// Exemplars in pick order with their marginal gains.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    pub mode: SelectionMode,
    pub budget: usize,
    pub selected: Vec<SelectedItem>,
    pub objective_value: f64,
}

impl SelectionResult {
    pub fn ids(&self) -> Vec<&str> {
        self.selected.iter().map(|s| s.id.as_str()).collect()
    }

    pub fn indices(&self) -> Vec<usize> {
        self.selected.iter().map(|s| s.index).collect()
    }

    pub fn gains(&self) -> Vec<f64> {
        self.selected.iter().map(|s| s.gain).collect()
    }
}

/// Plain greedy loop: re-evaluates every remaining candidate each round.
pub fn naive_greedy<G: IncrementalGain>(state: &mut G, candidates: &[usize], k: usize) -> Result<Vec<(usize, f64)>> {
    let mut remaining: Vec<usize> = candidates.to_vec();
    remaining.sort_unstable();
    remaining.dedup();
    let mut picks = Vec::with_capacity(k.min(remaining.len()));
    while picks.len() < k && !remaining.is_empty() {
        let mut best = 0;
        let mut best_gain = state.gain(remaining[0]);
        for (pos, &v) in remaining.iter().enumerate().skip(1) {
            let g = state.gain(v);
            if g > best_gain {
                best = pos;
                best_gain = g;
            }
        }
        let v = remaining.remove(best);
        state.commit(v)?;
        picks.push((v, best_gain));
    }
    Ok(picks)
}

#[derive(Debug)]
struct Bound {
    gain: f64,
    index: usize,
    round: usize,
}

impl PartialEq for Bound {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Bound {}

impl PartialOrd for Bound {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Bound {
    fn cmp(&self, other: &Self) -> Ordering {
        self.gain
            .total_cmp(&other.gain)
            .then_with(|| other.index.cmp(&self.index))
    }
}

/// Lazy greedy over a priority queue of stale upper bounds.
pub fn lazy_greedy<G: IncrementalGain>(state: &mut G, candidates: &[usize], k: usize) -> Result<Vec<(usize, f64)>> {
    let mut cands: Vec<usize> = candidates.to_vec();
    cands.sort_unstable();
    cands.dedup();
    let mut heap: BinaryHeap<Bound> = cands
        .iter()
        .map(|&index| Bound {
            gain: state.gain(index),
            index,
            round: 0,
        })
        .collect();
    let mut picks = Vec::with_capacity(k.min(cands.len()));
    let mut round = 0;
    while picks.len() < k {
        let Some(top) = heap.pop() else { break };
        if top.round != round {
            heap.push(Bound {
                gain: state.gain(top.index),
                round,
                ..top
            });
            continue;
        }
        let band = REFRESH_BAND * (1.0 + top.gain.abs());
        if let Some(next) = heap.peek() {
            if next.round != round && next.gain >= top.gain - band {
                let next = heap.pop().expect("peeked");
                heap.push(Bound {
                    gain: state.gain(next.index),
                    round,
                    ..next
                });
                heap.push(top);
                continue;
            }
        }
        state.commit(top.index)?;
        picks.push((top.index, top.gain));
        round += 1;
    }
    Ok(picks)
}

fn into_result<K: Kernel + ?Sized>(
    kernel: &K,
    picks: Vec<(usize, f64)>,
    mode: SelectionMode,
    budget: usize,
    objective_value: f64,
) -> SelectionResult {
    SelectionResult {
        mode,
        budget,
        selected: picks
            .into_iter()
            .map(|(index, gain)| SelectedItem {
                id: kernel.label(index),
                index,
                gain,
            })
            .collect(),
        objective_value,
    }
}

/// Greedy maximization of `I_f(S; Q)` over `candidates`.
pub fn targeted_select_from<K: Kernel + ?Sized>(
    spec: &SmiSpec,
    kernel: &K,
    candidates: &[usize],
    query: &[usize],
    k: usize,
) -> Result<SelectionResult> {
    if k == 0 {
        return Err(Error::Invalid("budget must be at least 1".into()));
    }
    if candidates.is_empty() {
        return Err(Error::Invalid("ground set is empty".into()));
    }
    if let Some(&bad) = candidates.iter().find(|&&c| c >= kernel.size()) {
        return Err(Error::IndexOutOfRange {
            index: bad,
            size: kernel.size(),
        });
    }
    let mut state = SmiState::new(*spec, kernel, query)?;
    // LD mutual information lacks diminishing returns in A, so stale bounds are not
    // upper bounds there; it always runs the exact loop.
    let picks = match spec.family {
        Family::Ld => naive_greedy(&mut state, candidates, k)?,
        Family::Gc | Family::Fl => lazy_greedy(&mut state, candidates, k)?,
    };
    let set: Vec<usize> = picks.iter().map(|p| p.0).collect();
    let value = eval_smi(spec, kernel, &set, query)?;
    Ok(into_result(kernel, picks, SelectionMode::Retrieve, k, value))
}

/// Greedy maximization of `I_f(S; Q)` over the whole ground set.
pub fn targeted_select<K: Kernel + ?Sized>(
    spec: &SmiSpec,
    kernel: &K,
    query: &[usize],
    k: usize,
) -> Result<SelectionResult> {
    let all: Vec<usize> = (0..kernel.size()).collect();
    targeted_select_from(spec, kernel, &all, query, k)
}

/// Budgeted diverse shortlist: greedy maximization of `f` over the unlabeled pool.
pub fn annotate<K: Kernel + ?Sized>(spec: &SubmodularSpec, kernel: &K, budget: usize) -> Result<SelectionResult> {
    if budget == 0 {
        return Err(Error::Invalid("budget must be at least 1".into()));
    }
    if kernel.size() == 0 {
        return Err(Error::Invalid("ground set is empty".into()));
    }
    let mut state = SubmodularState::new(*spec, kernel)?;
    let all: Vec<usize> = (0..kernel.size()).collect();
    let picks = lazy_greedy(&mut state, &all, budget)?;
    let set: Vec<usize> = picks.iter().map(|p| p.0).collect();
    let value = eval_f(spec, kernel, &set)?;
    Ok(into_result(kernel, picks, SelectionMode::Annotate, budget, value))
}

/// Kernel over `pool` followed by the query as the last element.
pub fn pool_query_kernel(pool: &Corpus, query: &[f64], nonneg: bool) -> Result<SimilarityKernel> {
    if query.len() != pool.dim() {
        return Err(Error::Dimension {
            expected: pool.dim(),
            got: query.len(),
        });
    }
    let q = normalize(query).ok_or_else(|| Error::Invalid("query vector is zero or non-finite".into()))?;
    let mut vectors: Vec<&[f64]> = pool.items().iter().map(|i| i.vector.as_slice()).collect();
    vectors.push(&q);
    let mut ids = pool.ids();
    ids.push("<query>".to_string());
    Ok(SimilarityKernel::from_unit_vectors(&vectors, ids, nonneg))
}

/// Picks `k` in-context exemplars from the labeled pool for one test query.
pub fn retrieve(spec: &SmiSpec, pool: &Corpus, query: &[f64], k: usize) -> Result<SelectionResult> {
    let kernel = pool_query_kernel(pool, query, spec.family.wants_nonneg_kernel())?;
    let candidates: Vec<usize> = (0..pool.len()).collect();
    targeted_select_from(spec, &kernel, &candidates, &[pool.len()], k)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Baseline {
    Random,
    Similar,
}

/// Ablation baselines. Reported gains are the raw query cosine of each pick.
pub fn retrieve_baseline(mode: Baseline, pool: &Corpus, query: &[f64], k: usize, seed: u64) -> Result<SelectionResult> {
    if k == 0 {
        return Err(Error::Invalid("budget must be at least 1".into()));
    }
    if query.len() != pool.dim() {
        return Err(Error::Dimension {
            expected: pool.dim(),
            got: query.len(),
        });
    }
    let q = normalize(query).ok_or_else(|| Error::Invalid("query vector is zero or non-finite".into()))?;
    let sims: Vec<f64> = pool.items().iter().map(|i| dot(&i.vector, &q)).collect();
    let take = k.min(pool.len());
    let order: Vec<usize> = match mode {
        Baseline::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rand::seq::index::sample(&mut rng, pool.len(), take).into_vec()
        }
        Baseline::Similar => {
            let mut idx: Vec<usize> = (0..pool.len()).collect();
            idx.sort_by(|&a, &b| sims[b].total_cmp(&sims[a]).then(a.cmp(&b)));
            idx.truncate(take);
            idx
        }
    };
    let picks: Vec<(usize, f64)> = order.into_iter().map(|i| (i, sims[i])).collect();
    let value = picks.iter().map(|p| p.1).sum();
    let mode = match mode {
        Baseline::Random => SelectionMode::BaselineRandom,
        Baseline::Similar => SelectionMode::BaselineSimilar,
    };
    Ok(SelectionResult {
        mode,
        budget: k,
        selected: picks
            .into_iter()
            .map(|(index, gain)| SelectedItem {
                id: pool.items()[index].id.clone(),
                index,
                gain,
            })
            .collect(),
        objective_value: value,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{build_kernel, CorpusItem};

    /// Pool of three documents whose cosines to the query `(1, 0, 0)` are 0.9, 0.8 and 0.1.
    fn pool3() -> (Corpus, Vec<f64>) {
        let mk = |id: &str, c: f64, axis: usize| {
            let mut v = vec![c, 0.0, 0.0];
            v[axis] = (1.0 - c * c).sqrt();
            CorpusItem {
                id: id.into(),
                vector: v,
                text: None,
                answer: None,
            }
        };
        let pool = Corpus::new(vec![mk("v1", 0.9, 1), mk("v2", 0.8, 2), mk("v3", 0.1, 1)]).unwrap();
        (pool, vec![1.0, 0.0, 0.0])
    }

    #[test]
    fn gc_retrieval_sorts_by_query_similarity() {
        let (pool, q) = pool3();
        let r = retrieve(&SmiSpec::new(Family::Gc), &pool, &q, 2).unwrap();
        assert_eq!(r.ids(), vec!["v1", "v2"]);
        assert!((r.selected[0].gain - 0.9).abs() < 1e-12);
        assert!((r.selected[1].gain - 0.8).abs() < 1e-12);
        let all = retrieve(&SmiSpec::new(Family::Gc), &pool, &q, 3).unwrap();
        assert_eq!(all.ids(), vec!["v1", "v2", "v3"]);
    }

    #[test]
    fn budget_one_is_best_singleton() {
        let (pool, q) = pool3();
        for family in Family::ALL {
            let spec = SmiSpec::new(family);
            let r = retrieve(&spec, &pool, &q, 1).unwrap();
            let kernel = pool_query_kernel(&pool, &q, family.wants_nonneg_kernel()).unwrap();
            let best = (0..3)
                .max_by(|&a, &b| {
                    let ia = eval_smi(&spec, &kernel, &[a], &[3]).unwrap();
                    let ib = eval_smi(&spec, &kernel, &[b], &[3]).unwrap();
                    ia.total_cmp(&ib).then(b.cmp(&a))
                })
                .unwrap();
            assert_eq!(r.indices(), vec![best], "{family}");
        }
    }

    #[test]
    fn similar_baseline_and_random_determinism() {
        let (pool, q) = pool3();
        let r = retrieve_baseline(Baseline::Similar, &pool, &q, 2, 0).unwrap();
        assert_eq!(r.ids(), vec!["v1", "v2"]);
        let a = retrieve_baseline(Baseline::Random, &pool, &q, 2, 7).unwrap();
        let b = retrieve_baseline(Baseline::Random, &pool, &q, 2, 7).unwrap();
        assert_eq!(a, b);
        let mut perm = retrieve_baseline(Baseline::Random, &pool, &q, 3, 11).unwrap().indices();
        perm.sort();
        assert_eq!(perm, vec![0, 1, 2]);
    }

    #[test]
    fn identity_fl_breaks_ties_by_index() {
        let k = SimilarityKernel::identity(4);
        let spec = SmiSpec::new(Family::Fl);
        let r = targeted_select(&spec, &k, &[0, 1, 2, 3], 2).unwrap();
        assert_eq!(r.indices(), vec![0, 1]);
        // Each pick covers its own query row: 1 from the to-query term plus eta * 1.
        assert_eq!(r.gains(), vec![2.0, 2.0]);
    }

    #[test]
    fn annotate_exhausts_budget() {
        let vs: Vec<Vec<f64>> = (0..5).map(|i| vec![1.0, i as f64 * 0.3, 0.2]).collect();
        let k = build_kernel(&Corpus::from_vectors(vs).unwrap(), true);
        let r = annotate(&SubmodularSpec::new(Family::Fl), &k, 10).unwrap();
        assert_eq!(r.selected.len(), 5);
        let mut idx = r.indices();
        idx.sort();
        assert_eq!(idx, vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn duplicate_has_zero_fl_gain() {
        let vs = vec![
            vec![1.0, 0.0, 0.0],
            vec![1.0, 0.0, 0.0],
            vec![0.0, 1.0, 0.0],
            vec![0.2, 0.2, 1.0],
        ];
        let k = build_kernel(&Corpus::from_vectors(vs).unwrap(), true);
        let r = annotate(&SubmodularSpec::new(Family::Fl), &k, 3).unwrap();
        let pos = |i| r.indices().iter().position(|&x| x == i);
        // One copy of the duplicate goes first (largest coverage); the other never precedes
        // the orthogonal documents.
        assert_eq!(pos(0), Some(0));
        assert_eq!(pos(1), None);
    }

    #[test]
    fn rejects_bad_inputs() {
        let (pool, _) = pool3();
        assert!(matches!(
            retrieve(&SmiSpec::new(Family::Gc), &pool, &[1.0, 0.0], 1),
            Err(Error::Dimension { expected: 3, got: 2 })
        ));
        let k = SimilarityKernel::identity(2);
        assert!(targeted_select(&SmiSpec::new(Family::Gc), &k, &[0], 0).is_err());
        assert!(annotate(&SubmodularSpec::new(Family::Gc), &k, 0).is_err());
    }

    #[test]
    fn negative_gains_do_not_stop_selection() {
        let vs = vec![vec![1.0, 0.0], vec![0.9, 0.1], vec![0.95, 0.05]];
        let k = build_kernel(&Corpus::from_vectors(vs).unwrap(), true);
        let spec = SubmodularSpec::new(Family::Gc).with_gc_penalty(1.0);
        let r = annotate(&spec, &k, 3).unwrap();
        assert_eq!(r.selected.len(), 3);
        assert!(r.selected[2].gain < 0.0);
    }
}
