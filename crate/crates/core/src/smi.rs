//! Submodular mutual information `I_f(A; Q)` for graph cut, facility location and log-determinant.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::corpus::Kernel;
use crate::error::{Error, Result};
use crate::greedy::IncrementalGain;
use crate::linalg::{inverse_pd, logdet_pd, IncrementalCholesky};
use crate::submodular::{check_set, jittered_block, Family};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmiSpec {
    pub family: Family,
    /// Weight of the query-coverage term (FL) or cross-kernel strength (LD).
    pub eta: f64,
    pub ld_jitter: f64,
}

impl SmiSpec {
    pub fn new(family: Family) -> Self {
        Self {
            family,
            eta: 1.0,
            ld_jitter: 1e-6,
        }
    }

    pub fn with_eta(mut self, eta: f64) -> Self {
        self.eta = eta;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eta >= 0.0) || !self.eta.is_finite() {
            return Err(Error::Invalid(format!("eta must be >= 0, got {}", self.eta)));
        }
        if !(self.ld_jitter > 0.0) || !self.ld_jitter.is_finite() {
            return Err(Error::Invalid(format!("ld jitter must be > 0, got {}", self.ld_jitter)));
        }
        Ok(())
    }
}

/// The two log-determinant blocks of LD mutual information:
/// `M1 = S_A + εI` and `M2 = M1 − η² S_AQ (S_Q + εI)⁻¹ S_AQᵀ`.
pub(crate) struct LdBlocks {
    pub m1: DMatrix<f64>,
    pub m2: DMatrix<f64>,
    pub cross: DMatrix<f64>,
    pub q_inv: DMatrix<f64>,
}

pub(crate) fn ld_blocks<K: Kernel + ?Sized>(
    spec: &SmiSpec,
    kernel: &K,
    set: &[usize],
    query: &[usize],
) -> Result<LdBlocks> {
    let m1 = jittered_block(kernel, set, spec.ld_jitter);
    let q_inv = inverse_pd(&jittered_block(kernel, query, spec.ld_jitter))
        .ok_or_else(|| Error::NotPositiveDefinite { set: query.to_vec() })?;
    let cross = DMatrix::from_fn(set.len(), query.len(), |i, j| kernel.sim(set[i], query[j]));
    let m2 = &m1 - (&cross * &q_inv * cross.transpose()) * (spec.eta * spec.eta);
    Ok(LdBlocks { m1, m2, cross, q_inv })
}

/// Evaluates `I_f(A; Q)`; zero when `A` is empty.
pub fn eval_smi<K: Kernel + ?Sized>(spec: &SmiSpec, kernel: &K, set: &[usize], query: &[usize]) -> Result<f64> {
    spec.validate()?;
    let n = kernel.size();
    check_set(set, n)?;
    check_set(query, n)?;
    if query.is_empty() {
        return Err(Error::EmptyQuery);
    }
    if set.is_empty() {
        return Ok(0.0);
    }
    Ok(match spec.family {
        Family::Gc => set
            .iter()
            .map(|&a| query.iter().map(|&b| kernel.sim(a, b)).sum::<f64>())
            .sum(),
        Family::Fl => {
            let to_query: f64 = set
                .iter()
                .map(|&a| {
                    query
                        .iter()
                        .map(|&b| kernel.sim(a, b))
                        .fold(f64::NEG_INFINITY, f64::max)
                })
                .sum();
            let from_query: f64 = query
                .iter()
                .map(|&b| set.iter().map(|&a| kernel.sim(a, b)).fold(f64::NEG_INFINITY, f64::max))
                .sum();
            to_query + spec.eta * from_query
        }
        Family::Ld => {
            let blocks = ld_blocks(spec, kernel, set, query)?;
            let not_pd = || Error::NotPositiveDefinite { set: set.to_vec() };
            logdet_pd(&blocks.m1).ok_or_else(not_pd)? - logdet_pd(&blocks.m2).ok_or_else(not_pd)?
        }
    })
}

/// `I_f(A ∪ {v}; Q) − I_f(A; Q)`, computed incrementally.
pub fn marginal_gain_smi<K: Kernel + ?Sized>(
    spec: &SmiSpec,
    kernel: &K,
    set: &[usize],
    v: usize,
    query: &[usize],
) -> Result<f64> {
    check_set(set, kernel.size())?;
    if v >= kernel.size() {
        return Err(Error::IndexOutOfRange {
            index: v,
            size: kernel.size(),
        });
    }
    if set.contains(&v) {
        return Err(Error::AlreadySelected(v));
    }
    let mut state = SmiState::new(*spec, kernel, query)?;
    for &a in set {
        state.commit(a)?;
    }
    Ok(state.gain(v))
}

/// Incremental greedy state for `I_f(·; Q)`, confined to one selection run.
pub struct SmiState<'k, K: Kernel + ?Sized> {
    spec: SmiSpec,
    kernel: &'k K,
    query: Vec<usize>,
    selected: Vec<usize>,
    inner: Inner,
}

enum Inner {
    Gc,
    /// Max over the selection for each query element; `None` before the first pick.
    Fl(Option<Vec<f64>>),
    Ld {
        /// Factor of `S_A + εI`.
        plain: IncrementalCholesky,
        /// Factor of the query-conditioned kernel restricted to `A`.
        conditioned: IncrementalCholesky,
        /// `L_Q⁻¹ S_{Q,a}` for every ground element, so that the conditioned kernel is
        /// `S_ab + εδ_ab − η² ⟨t_a, t_b⟩`.
        projections: Vec<Vec<f64>>,
    },
}

impl<'k, K: Kernel + ?Sized> SmiState<'k, K> {
    pub fn new(spec: SmiSpec, kernel: &'k K, query: &[usize]) -> Result<Self> {
        spec.validate()?;
        let n = kernel.size();
        check_set(query, n)?;
        if query.is_empty() {
            return Err(Error::EmptyQuery);
        }
        let inner = match spec.family {
            Family::Gc => Inner::Gc,
            Family::Fl => Inner::Fl(None),
            Family::Ld => {
                let mut q_factor = IncrementalCholesky::new();
                for (i, &b) in query.iter().enumerate() {
                    let col: Vec<f64> = query[..i].iter().map(|&c| kernel.sim(c, b)).collect();
                    if !q_factor.push(&col, kernel.sim(b, b) + spec.ld_jitter) {
                        return Err(Error::NotPositiveDefinite { set: query.to_vec() });
                    }
                }
                let projections = (0..n)
                    .map(|a| {
                        let col: Vec<f64> = query.iter().map(|&b| kernel.sim(a, b)).collect();
                        q_factor.forward(&col)
                    })
                    .collect();
                Inner::Ld {
                    plain: IncrementalCholesky::new(),
                    conditioned: IncrementalCholesky::new(),
                    projections,
                }
            }
        };
        Ok(Self {
            spec,
            kernel,
            query: query.to_vec(),
            selected: Vec::new(),
            inner,
        })
    }

    pub fn selected(&self) -> &[usize] {
        &self.selected
    }

    fn ld_columns(&self, v: usize, projections: &[Vec<f64>]) -> (Vec<f64>, f64, Vec<f64>, f64) {
        let k = self.kernel;
        let eta2 = self.spec.eta * self.spec.eta;
        let tv = &projections[v];
        let plain_col: Vec<f64> = self.selected.iter().map(|&a| k.sim(a, v)).collect();
        let cond_col: Vec<f64> = self
            .selected
            .iter()
            .zip(&plain_col)
            .map(|(&a, s)| s - eta2 * crate::corpus::dot(&projections[a], tv))
            .collect();
        let diag = k.sim(v, v) + self.spec.ld_jitter;
        let cond_diag = diag - eta2 * crate::corpus::dot(tv, tv);
        (plain_col, diag, cond_col, cond_diag)
    }
}

impl<K: Kernel + ?Sized> IncrementalGain for SmiState<'_, K> {
    fn ground_size(&self) -> usize {
        self.kernel.size()
    }

    fn gain(&self, v: usize) -> f64 {
        let k = self.kernel;
        match &self.inner {
            Inner::Gc => self.query.iter().map(|&b| k.sim(v, b)).sum(),
            Inner::Fl(best) => {
                let to_query = self
                    .query
                    .iter()
                    .map(|&b| k.sim(v, b))
                    .fold(f64::NEG_INFINITY, f64::max);
                let coverage: f64 = match best {
                    None => self.query.iter().map(|&b| k.sim(v, b)).sum(),
                    Some(best) => self
                        .query
                        .iter()
                        .zip(best)
                        .map(|(&b, m)| (k.sim(v, b) - m).max(0.0))
                        .sum(),
                };
                to_query + self.spec.eta * coverage
            }
            Inner::Ld {
                plain,
                conditioned,
                projections,
            } => {
                let (pc, pd, cc, cd) = self.ld_columns(v, projections);
                let s_plain = plain.schur(&pc, pd);
                let s_cond = conditioned.schur(&cc, cd);
                if s_plain > 0.0 && s_cond > 0.0 {
                    s_plain.ln() - s_cond.ln()
                } else {
                    f64::NEG_INFINITY
                }
            }
        }
    }

    fn commit(&mut self, v: usize) -> Result<()> {
        let k = self.kernel;
        let mut failed = false;
        let ld_cols = match &self.inner {
            Inner::Ld { projections, .. } => Some(self.ld_columns(v, projections)),
            _ => None,
        };
        match &mut self.inner {
            Inner::Gc => {}
            Inner::Fl(best) => {
                let row = self.query.iter().map(|&b| k.sim(v, b));
                match best {
                    None => *best = Some(row.collect()),
                    Some(m) => m.iter_mut().zip(row).for_each(|(m, s)| *m = m.max(s)),
                }
            }
            Inner::Ld { plain, conditioned, .. } => {
                let (pc, pd, cc, cd) = ld_cols.expect("ld columns");
                let (mut p2, mut c2) = (plain.clone(), conditioned.clone());
                if p2.push(&pc, pd) && c2.push(&cc, cd) {
                    *plain = p2;
                    *conditioned = c2;
                } else {
                    failed = true;
                }
            }
        }
        if failed {
            let mut set = self.selected.clone();
            set.push(v);
            return Err(Error::NotPositiveDefinite { set });
        }
        self.selected.push(v);
        Ok(())
    }
}
