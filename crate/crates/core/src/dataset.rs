//! Paraphrase-augmented training data: `{q, S⁺, S⁻, Sᵖ, y}` records in JSONL.
//!
//! The first line of a training file is a header `{"schema":"insquad-train/1"}`;
//! every following non-empty line is one [`TrainingRecord`].

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::corpus::{dot, normalize};
use crate::error::{Error, Result};

pub const TRAIN_SCHEMA: &str = "insquad-train/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    schema: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub vector: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Paraphrase {
    /// Id of the positive or negative document this paraphrases.
    pub of: String,
    pub id: String,
    pub vector: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingRecord {
    pub query: Document,
    pub positives: Vec<Document>,
    pub negatives: Vec<Document>,
    #[serde(default)]
    pub paraphrases: Vec<Paraphrase>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer: Option<String>,
}

impl TrainingRecord {
    pub fn dim(&self) -> usize {
        self.query.vector.len()
    }

    fn vectors_mut(&mut self) -> impl Iterator<Item = &mut Vec<f64>> {
        std::iter::once(&mut self.query.vector)
            .chain(self.positives.iter_mut().map(|d| &mut d.vector))
            .chain(self.negatives.iter_mut().map(|d| &mut d.vector))
            .chain(self.paraphrases.iter_mut().map(|p| &mut p.vector))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ViolationCode {
    Disjointness,
    Dimension,
    DanglingParaphrase,
    EmptyPositives,
    EmptyNegatives,
    EmptyId,
    DuplicateId,
    ZeroVector,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub code: ViolationCode,
    pub message: String,
}

/// Checks one record against the schema invariants. Dimensions are compared with the query's.
pub fn validate_record(record: &TrainingRecord) -> Vec<Violation> {
    validate_record_dim(record, record.dim())
}

/// As [`validate_record`], against an explicit corpus dimension.
pub fn validate_record_dim(record: &TrainingRecord, dim: usize) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut push = |code, message: String| out.push(Violation { code, message });

    if record.positives.is_empty() {
        push(ViolationCode::EmptyPositives, "no positive documents".into());
    }
    if record.negatives.is_empty() {
        push(ViolationCode::EmptyNegatives, "no negative documents".into());
    }
    let positives: HashSet<&str> = record.positives.iter().map(|d| d.id.as_str()).collect();
    for d in &record.negatives {
        if positives.contains(d.id.as_str()) {
            push(
                ViolationCode::Disjointness,
                format!("{:?} is both positive and negative", d.id),
            );
        }
    }
    let sources: HashSet<&str> = record
        .positives
        .iter()
        .chain(&record.negatives)
        .map(|d| d.id.as_str())
        .collect();
    for p in &record.paraphrases {
        if !sources.contains(p.of.as_str()) {
            push(
                ViolationCode::DanglingParaphrase,
                format!("paraphrase {:?} refers to unknown document {:?}", p.id, p.of),
            );
        }
    }

    let mut seen = HashSet::new();
    let entries = std::iter::once((&record.query.id, &record.query.vector, "query"))
        .chain(record.positives.iter().map(|d| (&d.id, &d.vector, "positive")))
        .chain(record.negatives.iter().map(|d| (&d.id, &d.vector, "negative")))
        .chain(record.paraphrases.iter().map(|p| (&p.id, &p.vector, "paraphrase")));
    for (id, vector, role) in entries {
        if id.is_empty() {
            push(ViolationCode::EmptyId, format!("{role} with empty id"));
        } else if !seen.insert(id.as_str()) && role != "negative" {
            // Overlap between positives and negatives is already reported as disjointness.
            push(ViolationCode::DuplicateId, format!("id {id:?} appears twice"));
        }
        if vector.len() != dim {
            push(
                ViolationCode::Dimension,
                format!("{role} {id:?} has dimension {}, expected {dim}", vector.len()),
            );
        } else if normalize(vector).is_none() {
            push(
                ViolationCode::ZeroVector,
                format!("{role} {id:?} is zero or non-finite"),
            );
        }
    }
    out
}

/// Loads and validates a training file; vectors are L2-normalized, order is preserved.
pub fn load_training(path: impl AsRef<Path>) -> Result<Vec<TrainingRecord>> {
    let path = path.as_ref();
    let io_err = |source| Error::Io {
        path: path.to_path_buf(),
        source,
    };
    let reader = BufReader::new(File::open(path).map_err(io_err)?);
    let mut records = Vec::new();
    let mut header_seen = false;
    let mut dim = None;
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(io_err)?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: line_no,
            message,
        };
        if !header_seen {
            let header: Header =
                serde_json::from_str(&line).map_err(|e| parse_err(format!("expected schema header: {e}")))?;
            if header.schema != TRAIN_SCHEMA {
                return Err(parse_err(format!(
                    "unsupported schema {:?}, expected {TRAIN_SCHEMA:?}",
                    header.schema
                )));
            }
            header_seen = true;
            continue;
        }
        let mut record: TrainingRecord =
            serde_json::from_str(&line).map_err(|e| parse_err(format!("schema violation: {e}")))?;
        let d = *dim.get_or_insert(record.dim());
        let violations = validate_record_dim(&record, d);
        if let Some(v) = violations.first() {
            let codes: Vec<String> = violations
                .iter()
                .map(|v| serde_json::to_string(&v.code).expect("code serializes"))
                .collect();
            return Err(parse_err(format!("{} [{}]", v.message, codes.join(", "))));
        }
        for v in record.vectors_mut() {
            *v = normalize(v).expect("validated non-zero");
        }
        records.push(record);
    }
    if !header_seen {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            message: "missing schema header".into(),
        });
    }
    Ok(records)
}

/// Writes records with the schema header.
pub fn save_training(records: &[TrainingRecord], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = serde_json::to_string(&Header {
        schema: TRAIN_SCHEMA.into(),
    })
    .expect("header serializes");
    out.push('\n');
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("records serialize"));
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Parameters of the synthetic clustered dataset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub n_records: usize,
    pub dim: usize,
    pub clusters: usize,
    /// Per-coordinate standard deviation of paraphrase noise.
    pub paraphrase_noise: f64,
    pub seed: u64,
    pub positives: usize,
    pub negatives: usize,
    /// Per-coordinate standard deviation of query and document noise.
    pub doc_noise: f64,
    /// Weight of a direction shared by every cluster, orthogonal to all cluster directions.
    /// Zero gives mutually orthogonal clusters; larger values make the frozen embeddings
    /// less discriminative, leaving room for the adapter to improve them.
    pub shared: f64,
}

impl SyntheticConfig {
    pub fn new(n_records: usize, dim: usize, clusters: usize, paraphrase_noise: f64, seed: u64) -> Self {
        Self {
            n_records,
            dim,
            clusters,
            paraphrase_noise,
            seed,
            positives: 2,
            negatives: 2,
            doc_noise: 0.05,
            shared: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Invalid(m.to_string()));
        if self.dim < 2 {
            return bad("dimension must be >= 2");
        }
        if self.clusters < 2 {
            return bad("need at least two clusters");
        }
        if !(0.0..=0.2).contains(&self.paraphrase_noise) {
            return bad("paraphrase noise must lie in [0, 0.2]");
        }
        if self.positives == 0 || self.negatives == 0 {
            return bad("records need positives and negatives");
        }
        if !(self.doc_noise >= 0.0) || !(self.shared >= 0.0) {
            return bad("noise and shared weight must be >= 0");
        }
        Ok(())
    }
}

/// Orthonormal directions drawn from a Gaussian and Gram–Schmidt orthogonalized; once
/// the space is exhausted the remaining directions are only normalized.
fn random_directions(rng: &mut ChaCha8Rng, count: usize, dim: usize) -> Vec<Vec<f64>> {
    let mut dirs: Vec<Vec<f64>> = Vec::with_capacity(count);
    while dirs.len() < count {
        let mut v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        if dirs.len() < dim {
            for d in &dirs {
                let p = dot(&v, d);
                v.iter_mut().zip(d).for_each(|(x, y)| *x -= p * y);
            }
        }
        if let Some(u) = normalize(&v).filter(|u| u.iter().all(|x| x.is_finite())) {
            let norm: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 1e-6 {
                dirs.push(u);
            }
        }
    }
    dirs
}

fn noisy(rng: &mut ChaCha8Rng, base: &[f64], sigma: f64) -> Vec<f64> {
    if sigma == 0.0 {
        return normalize(base).expect("unit base");
    }
    let v: Vec<f64> = base
        .iter()
        .map(|x| {
            let z: f64 = StandardNormal.sample(rng);
            x + sigma * z
        })
        .collect();
    normalize(&v).unwrap_or_else(|| normalize(base).expect("unit base"))
}

/// Seeded clustered dataset. Each record's query sits on a cluster direction, positives
/// are noisy copies of the query, negatives come from other clusters, and every document
/// gets one paraphrase: a copy with isotropic noise of standard deviation `paraphrase_noise`.
pub fn generate_synthetic(config: &SyntheticConfig) -> Result<Vec<TrainingRecord>> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut dirs = random_directions(&mut rng, config.clusters + 1, config.dim);
    let shared = dirs.pop().expect("shared direction");
    let centre = |k: usize| -> Vec<f64> {
        dirs[k]
            .iter()
            .zip(&shared)
            .map(|(c, s)| c + config.shared * s)
            .collect()
    };
    let mut records = Vec::with_capacity(config.n_records);
    for i in 0..config.n_records {
        let k = rand::Rng::random_range(&mut rng, 0..config.clusters);
        let query = noisy(&mut rng, &centre(k), config.doc_noise);
        let positives: Vec<Document> = (0..config.positives)
            .map(|j| Document {
                id: format!("r{i}-pos{j}"),
                vector: noisy(&mut rng, &query, config.doc_noise),
                text: None,
            })
            .collect();
        let negatives: Vec<Document> = (0..config.negatives)
            .map(|j| {
                let other = (k + 1 + rand::Rng::random_range(&mut rng, 0..config.clusters - 1)) % config.clusters;
                Document {
                    id: format!("r{i}-neg{j}"),
                    vector: noisy(&mut rng, &centre(other), config.doc_noise),
                    text: None,
                }
            })
            .collect();
        let paraphrases = positives
            .iter()
            .chain(&negatives)
            .map(|d| Paraphrase {
                of: d.id.clone(),
                id: format!("{}-para", d.id),
                vector: noisy(&mut rng, &d.vector, config.paraphrase_noise),
                text: None,
            })
            .collect();
        records.push(TrainingRecord {
            query: Document {
                id: format!("r{i}-q"),
                vector: query,
                text: None,
            },
            positives,
            negatives,
            paraphrases,
            answer: Some(format!("cluster-{k}")),
        });
    }
    Ok(records)
}
