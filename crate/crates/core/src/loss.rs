//! Likelihood-ratio losses over submodular mutual information.
//!
//! Treating `P(S) ∝ I_f(S; Q)` as a point process over subsets, the ratio of the
//! probabilities of the relevant set `S⁺` and the distractor set `S⁻` no longer depends
//! on the normalizer. The negative log of that ratio is the per-example loss:
//!
//! ```text
//! ℓ(Q) = log I_f(S⁻; Q) − log I_f(S⁺; Q)
//! ```
//!
//! The quality loss uses the query as `Q`, the diversity loss uses the paraphrase set,
//! and the combined objective is `exp((1 − λ) L_q + λ L_d)`. Both sums run over the
//! mini-batch. Logarithm arguments are floored at `log_floor`; every floor hit is
//! counted in the report and contributes no gradient.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::corpus::{normalize, Kernel, SimilarityKernel};
use crate::error::{Error, Result};
use crate::linalg::inverse_pd;
use crate::smi::{eval_smi, ld_blocks, SmiSpec};
use crate::submodular::{check_set, Family};

/// Largest ground set the exhaustive point-process normalizer accepts.
pub const SPP_MAX_GROUND: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossSpec {
    pub smi: SmiSpec,
    /// Quality/diversity trade-off in `[0, 1]`.
    pub lambda: f64,
    pub log_floor: f64,
}

impl LossSpec {
    pub fn new(family: Family, lambda: f64) -> Self {
        Self {
            smi: SmiSpec::new(family),
            lambda,
            log_floor: 1e-12,
        }
    }

    pub fn family(&self) -> Family {
        self.smi.family
    }

    pub fn validate(&self) -> Result<()> {
        self.smi.validate()?;
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::Invalid(format!(
                "lambda must lie in [0, 1], got {}",
                self.lambda
            )));
        }
        if !(self.log_floor > 0.0) {
            return Err(Error::Invalid(format!("log floor must be > 0, got {}", self.log_floor)));
        }
        Ok(())
    }
}

/// Index sets of one training example into the batch embedding matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Example {
    pub query: usize,
    pub positives: Vec<usize>,
    pub negatives: Vec<usize>,
    /// May be empty, in which case the example only enters the quality loss.
    pub paraphrases: Vec<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BatchSets {
    pub examples: Vec<Example>,
}

impl BatchSets {
    pub fn new(examples: Vec<Example>) -> Self {
        Self { examples }
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        for (i, ex) in self.examples.iter().enumerate() {
            let ctx = |m: String| Error::Invalid(format!("example {i}: {m}"));
            if ex.positives.is_empty() || ex.negatives.is_empty() {
                return Err(ctx("positive and negative sets must be non-empty".into()));
            }
            check_set(&[ex.query], n)?;
            check_set(&ex.positives, n)?;
            check_set(&ex.negatives, n)?;
            check_set(&ex.paraphrases, n)?;
            if ex.positives.iter().any(|p| ex.negatives.contains(p)) {
                return Err(ctx("positive and negative sets overlap".into()));
            }
        }
        Ok(())
    }

    /// The same batch with positives and negatives exchanged in every example.
    pub fn swapped(&self) -> Self {
        Self {
            examples: self
                .examples
                .iter()
                .map(|e| Example {
                    positives: e.negatives.clone(),
                    negatives: e.positives.clone(),
                    ..e.clone()
                })
                .collect(),
        }
    }
}

/// A summed log-ratio loss and how many log arguments hit the floor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossTerm {
    pub value: f64,
    pub clamped: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub l_q: f64,
    pub l_d: f64,
    /// `(1 − λ) L_q + λ L_d`, kept so callers can work in log space.
    pub log_combined: f64,
    pub combined: f64,
    /// Per-example `I_f(S⁺; q) / I_f(S⁻; q)` after flooring.
    pub alphas: Vec<f64>,
    pub clamp_events: usize,
    /// `∂ combined / ∂ E`, same shape as the embedding matrix.
    pub grad: Vec<Vec<f64>>,
}

/// `P(S) = I_f(S; Q) / Σ_{∅ ≠ S' ⊆ ground} I_f(S'; Q)` by exhaustive enumeration.
pub fn spp_probability<K: Kernel + ?Sized>(
    spec: &LossSpec,
    kernel: &K,
    set: &[usize],
    query: &[usize],
    ground: &[usize],
) -> Result<f64> {
    if ground.len() > SPP_MAX_GROUND {
        return Err(Error::TooLarge {
            subsets: (1u128 << ground.len()) - 1,
            limit: (1u128 << SPP_MAX_GROUND) - 1,
        });
    }
    check_set(ground, kernel.size())?;
    if let Some(&bad) = set.iter().find(|s| !ground.contains(s)) {
        return Err(Error::Invalid(format!("element {bad} is not in the ground set")));
    }
    let mut normalizer = 0.0;
    let mut subset = Vec::with_capacity(ground.len());
    for mask in 1u32..(1u32 << ground.len()) {
        subset.clear();
        subset.extend(
            ground
                .iter()
                .enumerate()
                .filter(|(i, _)| mask & (1 << i) != 0)
                .map(|(_, &g)| g),
        );
        normalizer += eval_smi(&spec.smi, kernel, &subset, query)?;
    }
    if normalizer <= spec.log_floor {
        return Err(Error::Degenerate {
            value: normalizer,
            floor: spec.log_floor,
            context: "point-process normalizer".into(),
        });
    }
    Ok(eval_smi(&spec.smi, kernel, set, query)? / normalizer)
}

/// `α = I_f(S⁺; Q) / I_f(S⁻; Q)`; the point-process normalizers cancel.
pub fn alpha_ratio<K: Kernel + ?Sized>(
    spec: &LossSpec,
    kernel: &K,
    positives: &[usize],
    negatives: &[usize],
    query: &[usize],
) -> Result<f64> {
    if positives.is_empty() || negatives.is_empty() {
        return Err(Error::Invalid(
            "alpha needs non-empty positive and negative sets".into(),
        ));
    }
    let neg = eval_smi(&spec.smi, kernel, negatives, query)?;
    if neg <= spec.log_floor {
        return Err(Error::Degenerate {
            value: neg,
            floor: spec.log_floor,
            context: "information of the negative set".into(),
        });
    }
    Ok(eval_smi(&spec.smi, kernel, positives, query)? / neg)
}

fn floored_log(value: f64, floor: f64, clamped: &mut usize) -> f64 {
    if value > floor {
        value.ln()
    } else {
        *clamped += 1;
        floor.ln()
    }
}

fn log_ratio<K: Kernel + ?Sized>(
    spec: &LossSpec,
    kernel: &K,
    ex: &Example,
    query: &[usize],
    clamped: &mut usize,
) -> Result<f64> {
    let neg = eval_smi(&spec.smi, kernel, &ex.negatives, query)?;
    let pos = eval_smi(&spec.smi, kernel, &ex.positives, query)?;
    Ok(floored_log(neg, spec.log_floor, clamped) - floored_log(pos, spec.log_floor, clamped))
}

/// `L_q = Σ_i log I_f(S⁻_i; q_i) − log I_f(S⁺_i; q_i)`.
pub fn loss_quality<K: Kernel + ?Sized>(spec: &LossSpec, kernel: &K, batch: &BatchSets) -> Result<LossTerm> {
    spec.validate()?;
    batch.validate(kernel.size())?;
    let mut clamped = 0;
    let mut value = 0.0;
    for ex in &batch.examples {
        value += log_ratio(spec, kernel, ex, &[ex.query], &mut clamped)?;
    }
    Ok(LossTerm { value, clamped })
}

/// `L_d = Σ_i log I_f(S⁻_i; Sᵖ_i) − log I_f(S⁺_i; Sᵖ_i)`, skipping examples without paraphrases.
pub fn loss_diversity<K: Kernel + ?Sized>(spec: &LossSpec, kernel: &K, batch: &BatchSets) -> Result<LossTerm> {
    spec.validate()?;
    batch.validate(kernel.size())?;
    let mut clamped = 0;
    let mut value = 0.0;
    for ex in batch.examples.iter().filter(|e| !e.paraphrases.is_empty()) {
        value += log_ratio(spec, kernel, ex, &ex.paraphrases, &mut clamped)?;
    }
    Ok(LossTerm { value, clamped })
}

/// `exp((1 − λ) L_q + λ L_d)` from its two parts.
pub fn combine(lambda: f64, l_q: f64, l_d: f64) -> f64 {
    ((1.0 - lambda) * l_q + lambda * l_d).exp()
}

/// Normalizes the embedding rows and builds the kernel the family is evaluated on.
pub fn loss_kernel(family: Family, embeddings: &[Vec<f64>]) -> Result<(SimilarityKernel, Vec<Vec<f64>>)> {
    let dim = embeddings.first().map_or(0, Vec::len);
    let mut unit = Vec::with_capacity(embeddings.len());
    for (i, row) in embeddings.iter().enumerate() {
        if row.len() != dim {
            return Err(Error::Dimension {
                expected: dim,
                got: row.len(),
            });
        }
        unit.push(normalize(row).ok_or_else(|| Error::NonFinite(format!("embedding row {i} (zero or non-finite)")))?);
    }
    let refs: Vec<&[f64]> = unit.iter().map(Vec::as_slice).collect();
    let ids = (0..unit.len()).map(|i| i.to_string()).collect();
    Ok((
        SimilarityKernel::from_unit_vectors(&refs, ids, family.wants_nonneg_kernel()),
        unit,
    ))
}

/// Quality, diversity and combined loss of a batch, with the gradient of the combined
/// loss with respect to the raw (unnormalized) embedding rows.
pub fn loss_combined(spec: &LossSpec, embeddings: &[Vec<f64>], batch: &BatchSets) -> Result<LossReport> {
    spec.validate()?;
    let (kernel, unit) = loss_kernel(spec.family(), embeddings)?;
    batch.validate(kernel.size())?;
    let n = kernel.size();

    let mut clamp_events = 0;
    let mut l_q = 0.0;
    let mut l_d = 0.0;
    let mut alphas = Vec::with_capacity(batch.examples.len());
    // ∂z/∂S_ab over ordered kernel entries, z = (1 − λ) L_q + λ L_d.
    let mut dz = DMatrix::<f64>::zeros(n, n);
    for ex in &batch.examples {
        let q = [ex.query];
        let mut c = 0;
        let neg = eval_smi(&spec.smi, &kernel, &ex.negatives, &q)?;
        let pos = eval_smi(&spec.smi, &kernel, &ex.positives, &q)?;
        let (ln_neg, ln_pos) = (
            floored_log(neg, spec.log_floor, &mut c),
            floored_log(pos, spec.log_floor, &mut c),
        );
        l_q += ln_neg - ln_pos;
        alphas.push((ln_pos - ln_neg).exp());
        let wq = 1.0 - spec.lambda;
        if wq != 0.0 {
            if neg > spec.log_floor {
                accumulate_smi_grad(spec, &kernel, &ex.negatives, &q, wq / neg, &mut dz)?;
            }
            if pos > spec.log_floor {
                accumulate_smi_grad(spec, &kernel, &ex.positives, &q, -wq / pos, &mut dz)?;
            }
        }
        if !ex.paraphrases.is_empty() {
            let p = &ex.paraphrases;
            let neg = eval_smi(&spec.smi, &kernel, &ex.negatives, p)?;
            let pos = eval_smi(&spec.smi, &kernel, &ex.positives, p)?;
            l_d += floored_log(neg, spec.log_floor, &mut c) - floored_log(pos, spec.log_floor, &mut c);
            let wd = spec.lambda;
            if wd != 0.0 {
                if neg > spec.log_floor {
                    accumulate_smi_grad(spec, &kernel, &ex.negatives, p, wd / neg, &mut dz)?;
                }
                if pos > spec.log_floor {
                    accumulate_smi_grad(spec, &kernel, &ex.positives, p, -wd / pos, &mut dz)?;
                }
            }
        }
        clamp_events += c;
    }

    let log_combined = (1.0 - spec.lambda) * l_q + spec.lambda * l_d;
    let combined = log_combined.exp();
    if !log_combined.is_finite() {
        return Err(Error::NonFinite("combined loss".into()));
    }
    let grad = chain_to_embeddings(&kernel, embeddings, &unit, &dz, combined);
    Ok(LossReport {
        l_q,
        l_d,
        log_combined,
        combined,
        alphas,
        clamp_events,
        grad,
    })
}

/// `∂ L_combined / ∂ E` for the raw embedding rows.
pub fn grad_loss(spec: &LossSpec, embeddings: &[Vec<f64>], batch: &BatchSets) -> Result<Vec<Vec<f64>>> {
    Ok(loss_combined(spec, embeddings, batch)?.grad)
}

/// Adds `scale · ∂I_f(A; Q)/∂S` into `dz`.
fn accumulate_smi_grad(
    spec: &LossSpec,
    kernel: &SimilarityKernel,
    set: &[usize],
    query: &[usize],
    scale: f64,
    dz: &mut DMatrix<f64>,
) -> Result<()> {
    match spec.family() {
        Family::Gc => {
            for &a in set {
                for &b in query {
                    dz[(a, b)] += scale;
                }
            }
        }
        Family::Fl => {
            // Subgradient: the winning entry of each max takes the whole derivative,
            // ties go to the lowest index.
            let winner = |cands: &[usize], sim: &dyn Fn(usize) -> f64| -> usize {
                let mut best = cands[0];
                for &c in &cands[1..] {
                    let (s, sb) = (sim(c), sim(best));
                    if s > sb || (s == sb && c < best) {
                        best = c;
                    }
                }
                best
            };
            for &a in set {
                let b = winner(query, &|b| kernel.sim(a, b));
                dz[(a, b)] += scale;
            }
            for &b in query {
                let a = winner(set, &|a| kernel.sim(a, b));
                dz[(a, b)] += scale * spec.smi.eta;
            }
        }
        Family::Ld => {
            let blocks = ld_blocks(&spec.smi, kernel, set, query)?;
            let not_pd = || Error::NotPositiveDefinite { set: set.to_vec() };
            let m1_inv = inverse_pd(&blocks.m1).ok_or_else(not_pd)?;
            let m2_inv = inverse_pd(&blocks.m2).ok_or_else(not_pd)?;
            let eta2 = spec.smi.eta * spec.smi.eta;
            let d_set = &m1_inv - &m2_inv;
            let m2_c_p = &m2_inv * &blocks.cross * &blocks.q_inv;
            let d_cross = &m2_c_p * (2.0 * eta2);
            let d_query = (blocks.q_inv.transpose() * blocks.cross.transpose() * &m2_c_p) * (-eta2);
            for (i, &a) in set.iter().enumerate() {
                for (j, &b) in set.iter().enumerate() {
                    dz[(a, b)] += scale * d_set[(i, j)];
                }
                for (j, &b) in query.iter().enumerate() {
                    dz[(a, b)] += scale * d_cross[(i, j)];
                }
            }
            for (i, &a) in query.iter().enumerate() {
                for (j, &b) in query.iter().enumerate() {
                    dz[(a, b)] += scale * d_query[(i, j)];
                }
            }
        }
    }
    Ok(())
}

/// Chains `∂L/∂S_ab = factor · dz_ab` through `S_ab = ⟨e_a, e_b⟩` and `e = u / |u|`.
fn chain_to_embeddings(
    kernel: &SimilarityKernel,
    raw: &[Vec<f64>],
    unit: &[Vec<f64>],
    dz: &DMatrix<f64>,
    factor: f64,
) -> Vec<Vec<f64>> {
    let n = unit.len();
    let d = unit.first().map_or(0, Vec::len);
    let mut g_unit = vec![vec![0.0; d]; n];
    for a in 0..n {
        for b in 0..n {
            // Diagonal entries are constant; clamped entries carry no gradient.
            if a == b {
                continue;
            }
            let w = dz[(a, b)];
            if w == 0.0 || (kernel.is_nonneg() && kernel.sim(a, b) <= 0.0) {
                continue;
            }
            let w = w * factor;
            for t in 0..d {
                g_unit[a][t] += w * unit[b][t];
                g_unit[b][t] += w * unit[a][t];
            }
        }
    }
    g_unit
        .into_iter()
        .enumerate()
        .map(|(a, g)| {
            let norm = raw[a].iter().map(|x| x * x).sum::<f64>().sqrt();
            let along = crate::corpus::dot(&g, &unit[a]);
            g.iter()
                .zip(&unit[a])
                .map(|(gi, ei)| (gi - along * ei) / norm)
                .collect()
        })
        .collect()
}
