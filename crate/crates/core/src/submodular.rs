//! Plain submodular functions `f(A)` over the whole ground set, used for annotation.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::corpus::Kernel;
use crate::error::{Error, Result};
use crate::greedy::IncrementalGain;
use crate::linalg::{logdet_pd, IncrementalCholesky};

/// Underlying submodular family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    /// Facility location.
    Fl,
    /// Graph cut.
    Gc,
    /// Log-determinant.
    #[serde(rename = "logdet", alias = "ld")]
    Ld,
}

impl Family {
    pub const ALL: [Family; 3] = [Family::Gc, Family::Fl, Family::Ld];

    pub fn as_str(self) -> &'static str {
        match self {
            Family::Fl => "fl",
            Family::Gc => "gc",
            Family::Ld => "logdet",
        }
    }

    /// Whether the family is evaluated on the clamped (nonnegative) cosine kernel.
    pub fn wants_nonneg_kernel(self) -> bool {
        !matches!(self, Family::Ld)
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "fl" | "facility-location" => Ok(Family::Fl),
            "gc" | "graph-cut" => Ok(Family::Gc),
            "ld" | "logdet" | "log-determinant" => Ok(Family::Ld),
            other => Err(Error::Invalid(format!("unknown function family {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SubmodularSpec {
    pub family: Family,
    /// Redundancy penalty for graph cut.
    pub gc_penalty: f64,
    /// Diagonal jitter for log-determinant.
    pub ld_jitter: f64,
}

impl SubmodularSpec {
    pub fn new(family: Family) -> Self {
        Self {
            family,
            gc_penalty: 0.5,
            ld_jitter: 1e-6,
        }
    }

    pub fn with_gc_penalty(mut self, nu: f64) -> Self {
        self.gc_penalty = nu;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gc_penalty >= 0.0) || !self.gc_penalty.is_finite() {
            return Err(Error::Invalid(format!(
                "gc penalty must be >= 0, got {}",
                self.gc_penalty
            )));
        }
        if !(self.ld_jitter > 0.0) || !self.ld_jitter.is_finite() {
            return Err(Error::Invalid(format!("ld jitter must be > 0, got {}", self.ld_jitter)));
        }
        Ok(())
    }
}

pub(crate) fn check_set(set: &[usize], n: usize) -> Result<()> {
    let mut seen = vec![false; n];
    for &i in set {
        if i >= n {
            return Err(Error::IndexOutOfRange { index: i, size: n });
        }
        if std::mem::replace(&mut seen[i], true) {
            return Err(Error::Invalid(format!("index {i} appears twice in set")));
        }
    }
    Ok(())
}

pub(crate) fn jittered_block<K: Kernel + ?Sized>(kernel: &K, set: &[usize], jitter: f64) -> DMatrix<f64> {
    DMatrix::from_fn(set.len(), set.len(), |i, j| {
        kernel.sim(set[i], set[j]) + if i == j { jitter } else { 0.0 }
    })
}

/// Evaluates `f(A)`. All families return 0 on the empty set.
pub fn eval_f<K: Kernel + ?Sized>(spec: &SubmodularSpec, kernel: &K, set: &[usize]) -> Result<f64> {
    spec.validate()?;
    let n = kernel.size();
    check_set(set, n)?;
    if set.is_empty() {
        return Ok(0.0);
    }
    Ok(match spec.family {
        Family::Fl => (0..n)
            .map(|i| set.iter().map(|&a| kernel.sim(i, a)).fold(f64::NEG_INFINITY, f64::max))
            .sum(),
        Family::Gc => {
            let coverage: f64 = (0..n).map(|i| set.iter().map(|&a| kernel.sim(i, a)).sum::<f64>()).sum();
            let redundancy: f64 = set
                .iter()
                .map(|&a| set.iter().map(|&b| kernel.sim(a, b)).sum::<f64>())
                .sum();
            coverage - spec.gc_penalty * redundancy
        }
        Family::Ld => logdet_pd(&jittered_block(kernel, set, spec.ld_jitter))
            .ok_or_else(|| Error::NotPositiveDefinite { set: set.to_vec() })?,
    })
}

/// `f(A ∪ {v}) − f(A)`, computed incrementally.
pub fn marginal_gain_f<K: Kernel + ?Sized>(spec: &SubmodularSpec, kernel: &K, set: &[usize], v: usize) -> Result<f64> {
    spec.validate()?;
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
    let mut state = SubmodularState::new(*spec, kernel)?;
    for &a in set {
        state.commit(a)?;
    }
    Ok(state.gain(v))
}

/// Incremental greedy state for `f`. Owned by a single selection run.
pub struct SubmodularState<'k, K: Kernel + ?Sized> {
    spec: SubmodularSpec,
    kernel: &'k K,
    selected: Vec<usize>,
    inner: Inner,
}

enum Inner {
    /// Per-row maxima over the selected set; `None` before the first pick.
    Fl(Option<Vec<f64>>),
    /// Column sums over the ground set and running sums against the selection.
    Gc {
        col_sum: Vec<f64>,
        sel_sum: Vec<f64>,
    },
    Ld(IncrementalCholesky),
}

impl<'k, K: Kernel + ?Sized> SubmodularState<'k, K> {
    pub fn new(spec: SubmodularSpec, kernel: &'k K) -> Result<Self> {
        spec.validate()?;
        let n = kernel.size();
        let inner = match spec.family {
            Family::Fl => Inner::Fl(None),
            Family::Gc => Inner::Gc {
                col_sum: (0..n).map(|v| (0..n).map(|i| kernel.sim(i, v)).sum()).collect(),
                sel_sum: vec![0.0; n],
            },
            Family::Ld => Inner::Ld(IncrementalCholesky::new()),
        };
        Ok(Self {
            spec,
            kernel,
            selected: Vec::new(),
            inner,
        })
    }

    pub fn selected(&self) -> &[usize] {
        &self.selected
    }
}

impl<K: Kernel + ?Sized> IncrementalGain for SubmodularState<'_, K> {
    fn ground_size(&self) -> usize {
        self.kernel.size()
    }

    fn gain(&self, v: usize) -> f64 {
        let k = self.kernel;
        let n = k.size();
        match &self.inner {
            Inner::Fl(None) => (0..n).map(|i| k.sim(i, v)).sum(),
            Inner::Fl(Some(best)) => (0..n).map(|i| (k.sim(i, v) - best[i]).max(0.0)).sum(),
            Inner::Gc { col_sum, sel_sum } => col_sum[v] - self.spec.gc_penalty * (2.0 * sel_sum[v] + k.sim(v, v)),
            Inner::Ld(chol) => {
                let col: Vec<f64> = self.selected.iter().map(|&a| k.sim(a, v)).collect();
                let s = chol.schur(&col, k.sim(v, v) + self.spec.ld_jitter);
                if s > 0.0 {
                    s.ln()
                } else {
                    f64::NEG_INFINITY
                }
            }
        }
    }

    fn commit(&mut self, v: usize) -> Result<()> {
        let k = self.kernel;
        let n = k.size();
        match &mut self.inner {
            Inner::Fl(best) => {
                let row = (0..n).map(|i| k.sim(i, v));
                match best {
                    None => *best = Some(row.collect()),
                    Some(b) => b.iter_mut().zip(row).for_each(|(m, s)| *m = m.max(s)),
                }
            }
            Inner::Gc { sel_sum, .. } => {
                sel_sum.iter_mut().enumerate().for_each(|(i, s)| *s += k.sim(i, v));
            }
            Inner::Ld(chol) => {
                let col: Vec<f64> = self.selected.iter().map(|&a| k.sim(a, v)).collect();
                if !chol.push(&col, k.sim(v, v) + self.spec.ld_jitter) {
                    let mut set = self.selected.clone();
                    set.push(v);
                    return Err(Error::NotPositiveDefinite { set });
                }
            }
        }
        self.selected.push(v);
        Ok(())
    }
}
