//! Linear adapter over frozen embeddings, trained against the combined loss.
//!
//! The adapter maps a base vector `v` to `normalize(W v)`. Training uses AdamW with a
//! linear warmup/decay schedule; everything is seeded and single-threaded, so the same
//! inputs always produce bit-identical weights and histories.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::Path;

use std::collections::HashSet;

use crate::corpus::{normalize, Corpus, CorpusItem};
use crate::dataset::TrainingRecord;
use crate::error::{Error, Result};
use crate::greedy::retrieve;
use crate::loss::{loss_combined, BatchSets, Example, LossReport, LossSpec};
use crate::smi::SmiSpec;
use crate::submodular::Family;

pub const CHECKPOINT_SCHEMA: &str = "smiselect-adapter/1";
const INIT_NOISE: f64 = 0.01;

#[derive(Debug, Clone, PartialEq)]
pub struct AdapterModel {
    dim: usize,
    seed: u64,
    /// Row-major `dim × dim`.
    weights: Vec<f64>,
}

impl AdapterModel {
    /// Identity plus seeded Gaussian noise of standard deviation 0.01.
    pub fn new(dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, INIT_NOISE).expect("valid deviation");
        let weights = (0..dim * dim)
            .map(|i| f64::from(u8::from(i / dim == i % dim)) + noise.sample(&mut rng))
            .collect();
        Self { dim, seed, weights }
    }

    pub fn identity(dim: usize) -> Self {
        let weights = (0..dim * dim)
            .map(|i| f64::from(u8::from(i / dim == i % dim)))
            .collect();
        Self { dim, seed: 0, weights }
    }

    pub fn from_weights(dim: usize, weights: Vec<f64>, seed: u64) -> Result<Self> {
        if weights.len() != dim * dim {
            return Err(Error::Dimension {
                expected: dim * dim,
                got: weights.len(),
            });
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::NonFinite("adapter weights".into()));
        }
        Ok(Self { dim, seed, weights })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// `W v` without normalization.
    pub fn apply_raw(&self, v: &[f64]) -> Vec<f64> {
        self.weights
            .chunks_exact(self.dim)
            .map(|row| row.iter().zip(v).map(|(w, x)| w * x).sum())
            .collect()
    }

    /// Row-wise `normalize(W v)`.
    pub fn forward(&self, vectors: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        vectors
            .iter()
            .map(|v| {
                if v.len() != self.dim {
                    return Err(Error::Dimension {
                        expected: self.dim,
                        got: v.len(),
                    });
                }
                normalize(&self.apply_raw(v)).ok_or_else(|| Error::NonFinite("adapter output".into()))
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub warmup_ratio: f64,
    pub lambda: f64,
    pub family: Family,
    pub eta: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 7,
            batch_size: 32,
            learning_rate: 3e-5,
            weight_decay: 0.01,
            warmup_ratio: 0.06,
            lambda: 0.5,
            family: Family::Gc,
            eta: 1.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Invalid(m));
        if self.epochs == 0 || self.batch_size == 0 {
            return bad("epochs and batch size must be positive".into());
        }
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return bad(format!("invalid learning rate {}", self.learning_rate));
        }
        if !(self.weight_decay >= 0.0) || !self.weight_decay.is_finite() {
            return bad(format!("invalid weight decay {}", self.weight_decay));
        }
        if !(0.0..1.0).contains(&self.warmup_ratio) {
            return bad(format!("warmup ratio must lie in [0, 1), got {}", self.warmup_ratio));
        }
        self.loss_spec().validate()
    }

    pub fn loss_spec(&self) -> LossSpec {
        let mut spec = LossSpec::new(self.family, self.lambda);
        spec.smi.eta = self.eta;
        spec
    }

    /// SHA-256 of the canonical JSON form, hex encoded.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&json))
    }
}

/// Number of warmup steps: `ceil(warmup_ratio · total_steps)`.
pub fn warmup_steps(config: &TrainConfig, total_steps: usize) -> usize {
    (config.warmup_ratio * total_steps as f64).ceil() as usize
}

/// Linear warmup from 0 to the peak rate, then linear decay to 0 at `total_steps`.
pub fn lr_at(config: &TrainConfig, step: usize, total_steps: usize) -> f64 {
    let warmup = warmup_steps(config, total_steps);
    let peak = config.learning_rate;
    if step < warmup {
        peak * step as f64 / warmup as f64
    } else if step >= total_steps {
        0.0
    } else {
        peak * (total_steps - step) as f64 / (total_steps - warmup) as f64
    }
}

/// Adam moments with decoupled weight decay.
#[derive(Debug, Clone)]
pub struct AdamW {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamW {
    pub fn new(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    /// `w ← w − lr·wd·w`, then the bias-corrected Adam step.
    pub fn step(&mut self, w: &mut [f64], grad: &[f64], lr: f64, weight_decay: f64) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for (((w, g), m), v) in w.iter_mut().zip(grad).zip(&mut self.m).zip(&mut self.v) {
            *w *= 1.0 - lr * weight_decay;
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            *w -= lr * (*m / c1) / ((*v / c2).sqrt() + self.eps);
        }
    }
}

/// Base vectors and index sets for a group of records.
#[derive(Debug, Clone)]
pub struct Batch {
    pub rows: Vec<Vec<f64>>,
    pub sets: BatchSets,
}

/// Lays out every query, positive, negative and paraphrase of `records` as one matrix.
pub fn assemble_batch(records: &[&TrainingRecord]) -> Batch {
    let mut rows = Vec::new();
    let mut examples = Vec::with_capacity(records.len());
    for r in records {
        let mut take = |v: &Vec<f64>| {
            rows.push(v.clone());
            rows.len() - 1
        };
        let query = take(&r.query.vector);
        let positives = r.positives.iter().map(|d| take(&d.vector)).collect();
        let negatives = r.negatives.iter().map(|d| take(&d.vector)).collect();
        let paraphrases = r.paraphrases.iter().map(|p| take(&p.vector)).collect();
        examples.push(Example {
            query,
            positives,
            negatives,
            paraphrases,
        });
    }
    Batch {
        rows,
        sets: BatchSets::new(examples),
    }
}

/// Loss of one batch under the adapter, with `∂L/∂W` in row-major order.
pub fn batch_loss(model: &AdapterModel, batch: &Batch, spec: &LossSpec) -> Result<(LossReport, Vec<f64>)> {
    let raw: Vec<Vec<f64>> = batch.rows.iter().map(|v| model.apply_raw(v)).collect();
    let report = loss_combined(spec, &raw, &batch.sets)?;
    let d = model.dim;
    let mut grad = vec![0.0; d * d];
    for (g, v) in report.grad.iter().zip(&batch.rows) {
        for (i, gi) in g.iter().enumerate() {
            if *gi != 0.0 {
                grad[i * d..(i + 1) * d]
                    .iter_mut()
                    .zip(v)
                    .for_each(|(o, x)| *o += gi * x);
            }
        }
    }
    Ok((report, grad))
}

/// Per-epoch summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_combined: f64,
    pub mean_log_combined: f64,
    pub clamp_events: usize,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: AdapterModel,
    pub epochs: Vec<EpochStats>,
}

impl TrainOutcome {
    /// Mean combined loss per epoch.
    pub fn history(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.mean_combined).collect()
    }
}

/// Trains `model` on `dataset`; returns the updated adapter and per-epoch statistics.
pub fn train(model: AdapterModel, dataset: &[TrainingRecord], config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(Error::Invalid("empty training set".into()));
    }
    if let Some(r) = dataset.iter().find(|r| r.dim() != model.dim) {
        return Err(Error::Dimension {
            expected: model.dim,
            got: r.dim(),
        });
    }
    let spec = config.loss_spec();
    let batches_per_epoch = dataset.len().div_ceil(config.batch_size);
    let total = batches_per_epoch * config.epochs;
    let mut model = model;
    let mut opt = AdamW::new(model.weights.len());
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut epochs = Vec::with_capacity(config.epochs);
    let mut step = 0;
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let (mut sum, mut sum_log, mut clamps) = (0.0, 0.0, 0);
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            let abort = |what: String| Error::NonFinite(format!("epoch {epoch}, batch {b}: {what}"));
            let records: Vec<&TrainingRecord> = chunk.iter().map(|&i| &dataset[i]).collect();
            let batch = assemble_batch(&records);
            let (report, grad) = batch_loss(&model, &batch, &spec).map_err(|e| abort(e.to_string()))?;
            if !report.combined.is_finite() {
                return Err(abort("loss".into()));
            }
            if grad.iter().any(|g| !g.is_finite()) {
                return Err(abort("gradient".into()));
            }
            sum += report.combined;
            sum_log += report.log_combined;
            clamps += report.clamp_events;
            opt.step(
                &mut model.weights,
                &grad,
                lr_at(config, step, total),
                config.weight_decay,
            );
            if model.weights.iter().any(|w| !w.is_finite()) {
                return Err(abort("weights".into()));
            }
            step += 1;
        }
        epochs.push(EpochStats {
            epoch,
            mean_combined: sum / batches_per_epoch as f64,
            mean_log_combined: sum_log / batches_per_epoch as f64,
            clamp_events: clamps,
        });
    }
    Ok(TrainOutcome { model, epochs })
}

/// Paraphrase redundancy of targeted retrieval under an adapter.
///
/// For each record, the pool is its positives, negatives and paraphrases mapped through
/// the adapter; the query retrieves `k` of them with `spec`. Returns the mean number of
/// retrieved (source, paraphrase) pairs per record.
pub fn paraphrase_duplicates(
    model: &AdapterModel,
    records: &[TrainingRecord],
    k: usize,
    spec: &SmiSpec,
) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::Invalid("no records to evaluate".into()));
    }
    let mut total = 0usize;
    for r in records {
        let docs = r.positives.iter().chain(&r.negatives);
        let mut items: Vec<(&str, Option<&str>, &Vec<f64>)> = docs.map(|d| (d.id.as_str(), None, &d.vector)).collect();
        items.extend(
            r.paraphrases
                .iter()
                .map(|p| (p.id.as_str(), Some(p.of.as_str()), &p.vector)),
        );
        let vectors: Vec<Vec<f64>> = items.iter().map(|(_, _, v)| (*v).clone()).collect();
        let mapped = model.forward(&vectors)?;
        let pool = Corpus::new(
            items
                .iter()
                .zip(mapped)
                .map(|((id, _, _), vector)| CorpusItem {
                    id: id.to_string(),
                    vector,
                    text: None,
                    answer: None,
                })
                .collect(),
        )?;
        let query = model.forward(std::slice::from_ref(&r.query.vector))?.remove(0);
        let picked: HashSet<usize> = retrieve(spec, &pool, &query, k)?.indices().into_iter().collect();
        total += picked
            .iter()
            .filter(|&&i| {
                items[i]
                    .1
                    .and_then(|src| pool.position(src))
                    .is_some_and(|s| picked.contains(&s))
            })
            .count();
    }
    Ok(total as f64 / records.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub schema: String,
    pub dim: usize,
    /// Row-major `dim × dim`.
    pub weights: Vec<f64>,
    pub seed: u64,
    pub config_hash: String,
}

impl Checkpoint {
    pub fn new(model: &AdapterModel, config: &TrainConfig) -> Self {
        Self {
            schema: CHECKPOINT_SCHEMA.into(),
            dim: model.dim,
            weights: model.weights.clone(),
            seed: model.seed,
            config_hash: config.hash(),
        }
    }

    pub fn into_model(self) -> Result<AdapterModel> {
        AdapterModel::from_weights(self.dim, self.weights, self.seed)
    }
}

pub fn save_checkpoint(checkpoint: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let json = serde_json::to_string(checkpoint).expect("checkpoint serializes");
    std::fs::write(path, json).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Reads a checkpoint; `expected_dim` rejects adapters of the wrong size.
pub fn load_checkpoint(path: impl AsRef<Path>, expected_dim: Option<usize>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let parse_err = |message: String| Error::Parse {
        path: path.to_path_buf(),
        line: 1,
        message,
    };
    let ckpt: Checkpoint = serde_json::from_str(&text).map_err(|e| parse_err(e.to_string()))?;
    if ckpt.schema != CHECKPOINT_SCHEMA {
        return Err(parse_err(format!("unsupported schema {:?}", ckpt.schema)));
    }
    if ckpt.weights.len() != ckpt.dim * ckpt.dim {
        return Err(parse_err(format!(
            "{} weights for dimension {}",
            ckpt.weights.len(),
            ckpt.dim
        )));
    }
    if let Some(d) = expected_dim.filter(|&d| d != ckpt.dim) {
        return Err(Error::Dimension {
            expected: d,
            got: ckpt.dim,
        });
    }
    Ok(ckpt)
}
