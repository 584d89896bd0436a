//! Embedding corpora and cosine similarity kernels.

use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Vectors whose norm is already this close to 1 are kept bit-for-bit.
const UNIT_TOLERANCE: f64 = 1e-12;

/// One document of an embedding corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusItem {
    pub id: String,
    pub vector: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    /// Label or answer used when the document becomes an in-context exemplar.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer: Option<String>,
}

/// Ordered set of unit-norm document embeddings with unique ids.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    items: Vec<CorpusItem>,
    dim: usize,
}

/// L2-normalizes `v`. Returns `None` for zero or non-finite vectors.
pub fn normalize(v: &[f64]) -> Option<Vec<f64>> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if !norm.is_finite() || norm == 0.0 {
        return None;
    }
    if (norm - 1.0).abs() <= UNIT_TOLERANCE {
        return Some(v.to_vec());
    }
    Some(v.iter().map(|x| x / norm).collect())
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl Corpus {
    /// Builds a corpus, normalizing every vector. Positions in error messages are 1-based.
    pub fn new(items: Vec<CorpusItem>) -> Result<Self> {
        let mut seen = std::collections::HashSet::new();
        let mut dim = None;
        let mut out = Vec::with_capacity(items.len());
        for (pos, mut item) in items.into_iter().enumerate() {
            validate_item(&item, &mut dim, &mut seen)
                .map_err(|message| Error::Invalid(format!("item {}: {message}", pos + 1)))?;
            item.vector = normalize(&item.vector).expect("validated non-zero");
            out.push(item);
        }
        let dim = dim.ok_or_else(|| Error::Invalid("corpus is empty".into()))?;
        Ok(Self { items: out, dim })
    }

    /// Convenience constructor for anonymous vectors; ids are `"0"`, `"1"`, ...
    pub fn from_vectors(vectors: Vec<Vec<f64>>) -> Result<Self> {
        Self::new(
            vectors
                .into_iter()
                .enumerate()
                .map(|(i, vector)| CorpusItem {
                    id: i.to_string(),
                    vector,
                    text: None,
                    answer: None,
                })
                .collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn items(&self) -> &[CorpusItem] {
        &self.items
    }

    pub fn vector(&self, i: usize) -> &[f64] {
        &self.items[i].vector
    }

    pub fn ids(&self) -> Vec<String> {
        self.items.iter().map(|i| i.id.clone()).collect()
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.items.iter().position(|i| i.id == id)
    }

    /// Returns a new corpus with `item` appended.
    pub fn with_item(&self, item: CorpusItem) -> Result<Self> {
        let mut items = self.items.clone();
        items.push(item);
        Self::new(items)
    }
}

fn validate_item(
    item: &CorpusItem,
    dim: &mut Option<usize>,
    seen: &mut std::collections::HashSet<String>,
) -> std::result::Result<(), String> {
    if item.id.is_empty() {
        return Err("empty id".into());
    }
    if item.vector.is_empty() {
        return Err("empty vector".into());
    }
    match *dim {
        None => *dim = Some(item.vector.len()),
        Some(d) if d != item.vector.len() => {
            return Err(format!("dimension mismatch: expected {d}, got {}", item.vector.len()))
        }
        Some(_) => {}
    }
    if item.vector.iter().any(|x| !x.is_finite()) {
        return Err("non-finite vector entry".into());
    }
    if normalize(&item.vector).is_none() {
        return Err("zero vector".into());
    }
    if !seen.insert(item.id.clone()) {
        return Err(format!("duplicate id {:?}", item.id));
    }
    Ok(())
}

/// Loads an embedding JSONL file (`id`, `vector`, optional `text`/`answer` per line).
pub fn load_corpus(path: impl AsRef<Path>) -> Result<Corpus> {
    let path = path.as_ref();
    let io_err = |source| Error::Io {
        path: path.to_path_buf(),
        source,
    };
    let reader = BufReader::new(File::open(path).map_err(io_err)?);
    let mut items = Vec::new();
    let mut seen = std::collections::HashSet::new();
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
        let item: CorpusItem = serde_json::from_str(&line).map_err(|e| parse_err(format!("malformed JSON: {e}")))?;
        validate_item(&item, &mut dim, &mut seen).map_err(parse_err)?;
        items.push(item);
    }
    Corpus::new(items)
}

/// Writes a corpus as embedding JSONL.
pub fn save_corpus(corpus: &Corpus, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    for item in corpus.items() {
        out.push_str(&serde_json::to_string(item).expect("corpus items serialize"));
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Read access to a symmetric similarity matrix.
pub trait Kernel {
    fn size(&self) -> usize;
    fn sim(&self, a: usize, b: usize) -> f64;

    /// External id of element `i`.
    fn label(&self, i: usize) -> String {
        i.to_string()
    }
}

impl<K: Kernel + ?Sized> Kernel for &K {
    fn size(&self) -> usize {
        (**self).size()
    }
    fn sim(&self, a: usize, b: usize) -> f64 {
        (**self).sim(a, b)
    }
    fn label(&self, i: usize) -> String {
        (**self).label(i)
    }
}

/// Dense cosine similarity kernel over a corpus, in corpus order.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityKernel {
    n: usize,
    data: Vec<f64>,
    ids: Vec<String>,
    nonneg: bool,
}

impl Kernel for SimilarityKernel {
    fn size(&self) -> usize {
        self.n
    }
    #[inline]
    fn sim(&self, a: usize, b: usize) -> f64 {
        self.data[a * self.n + b]
    }
    fn label(&self, i: usize) -> String {
        self.ids[i].clone()
    }
}

impl SimilarityKernel {
    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn is_nonneg(&self) -> bool {
        self.nonneg
    }

    pub fn row(&self, a: usize) -> &[f64] {
        &self.data[a * self.n..(a + 1) * self.n]
    }

    /// Cosine kernel over vectors that are already unit norm.
    pub(crate) fn from_unit_vectors(vectors: &[&[f64]], ids: Vec<String>, nonneg: bool) -> Self {
        let n = vectors.len();
        let mut data = vec![0.0; n * n];
        for a in 0..n {
            data[a * n + a] = 1.0;
            for b in (a + 1)..n {
                let mut s = dot(vectors[a], vectors[b]).clamp(-1.0, 1.0);
                if nonneg {
                    s = s.max(0.0);
                }
                data[a * n + b] = s;
                data[b * n + a] = s;
            }
        }
        Self { n, data, ids, nonneg }
    }

    /// Identity kernel over `n` anonymous elements (orthonormal corpus).
    pub fn identity(n: usize) -> Self {
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            data[i * n + i] = 1.0;
        }
        Self {
            n,
            data,
            ids: (0..n).map(|i| i.to_string()).collect(),
            nonneg: true,
        }
    }
}

/// Cosine kernel `S_ab = <v_a, v_b>` on normalized vectors; with `nonneg`, negatives clamp to 0.
pub fn build_kernel(corpus: &Corpus, nonneg: bool) -> SimilarityKernel {
    let vectors: Vec<&[f64]> = corpus.items().iter().map(|i| i.vector.as_slice()).collect();
    SimilarityKernel::from_unit_vectors(&vectors, corpus.ids(), nonneg)
}

/// Rectangular block `S[a][b]` of a kernel.
pub fn cross_kernel<K: Kernel + ?Sized>(a: &[usize], b: &[usize], kernel: &K) -> Result<Vec<Vec<f64>>> {
    let n = kernel.size();
    if let Some(&bad) = a.iter().chain(b).find(|&&i| i >= n) {
        return Err(Error::IndexOutOfRange { index: bad, size: n });
    }
    Ok(a.iter()
        .map(|&i| b.iter().map(|&j| kernel.sim(i, j)).collect())
        .collect())
}

/// A kernel multiplied by a positive constant. Used to check scale invariances.
#[derive(Debug, Clone, Copy)]
pub struct Scaled<K> {
    pub inner: K,
    pub factor: f64,
}

impl<K: Kernel> Kernel for Scaled<K> {
    fn size(&self) -> usize {
        self.inner.size()
    }
    fn sim(&self, a: usize, b: usize) -> f64 {
        self.factor * self.inner.sim(a, b)
    }
    fn label(&self, i: usize) -> String {
        self.inner.label(i)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn three() -> Corpus {
        let h = std::f64::consts::FRAC_1_SQRT_2;
        Corpus::from_vectors(vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![h, h]]).unwrap()
    }

    fn write_lines(lines: &[&str]) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        for l in lines {
            writeln!(f, "{l}").unwrap();
        }
        f
    }

    #[test]
    fn loads_unit_vectors_unchanged() {
        let f = write_lines(&[r#"{"id":"e1","vector":[1,0]}"#, r#"{"id":"e2","vector":[0,1]}"#]);
        let c = load_corpus(f.path()).unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(c.dim(), 2);
        assert_eq!(c.vector(0), &[1.0, 0.0]);
        assert_eq!(c.vector(1), &[0.0, 1.0]);
    }

    #[test]
    fn normalizes_on_load() {
        let f = write_lines(&[r#"{"id":"a","vector":[3,4],"text":"hello"}"#]);
        let c = load_corpus(f.path()).unwrap();
        assert!((c.vector(0)[0] - 0.6).abs() < 1e-15);
        assert!((c.vector(0)[1] - 0.8).abs() < 1e-15);
        assert_eq!(c.items()[0].text.as_deref(), Some("hello"));
    }

    #[test]
    fn load_errors_carry_line_numbers() {
        let cases: [(&[&str], &str); 4] = [
            (
                &[r#"{"id":"a","vector":[1,0]}"#, r#"{"id":"a","vector":[0,1]}"#],
                "duplicate",
            ),
            (
                &[r#"{"id":"a","vector":[1,0]}"#, r#"{"id":"b","vector":[0,1,0]}"#],
                "dimension",
            ),
            (
                &[r#"{"id":"a","vector":[1,0]}"#, r#"{"id":"b","vector":[0,0]}"#],
                "zero vector",
            ),
            (&[r#"{"id":"a","vector":[1,0]}"#, r#"{"id":"b","vector":"#], "malformed"),
        ];
        for (lines, needle) in cases {
            let f = write_lines(lines);
            match load_corpus(f.path()) {
                Err(Error::Parse { line, message, .. }) => {
                    assert_eq!(line, 2);
                    assert!(message.contains(needle), "{message}");
                }
                other => panic!("expected parse error, got {other:?}"),
            }
        }
    }

    #[test]
    fn kernel_on_three_vectors() {
        let k = build_kernel(&three(), true);
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert_eq!(k.sim(0, 1), 0.0);
        assert!((k.sim(0, 2) - h).abs() < 1e-12);
        assert!((k.sim(1, 2) - h).abs() < 1e-12);
        for i in 0..3 {
            assert_eq!(k.sim(i, i), 1.0);
        }
    }

    #[test]
    fn singleton_kernel() {
        let c = Corpus::from_vectors(vec![vec![0.3, -2.0, 1.0]]).unwrap();
        let k = build_kernel(&c, true);
        assert_eq!(k.size(), 1);
        assert_eq!(k.sim(0, 0), 1.0);
    }

    #[test]
    fn nonneg_clamps_opposites() {
        let c = Corpus::from_vectors(vec![vec![1.0, 0.0], vec![-1.0, 0.0]]).unwrap();
        assert_eq!(build_kernel(&c, true).sim(0, 1), 0.0);
        assert_eq!(build_kernel(&c, false).sim(0, 1), -1.0);
    }

    #[test]
    fn cross_kernel_slices() {
        let k = build_kernel(&three(), true);
        assert_eq!(cross_kernel(&[0], &[0], &k).unwrap(), vec![vec![1.0]]);
        let block = cross_kernel(&[0, 2], &[1], &k).unwrap();
        assert_eq!(block.len(), 2);
        assert_eq!(block[0][0], 0.0);
        assert!((block[1][0] - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
        assert!(cross_kernel(&[], &[1], &k).unwrap().is_empty());
        assert!(matches!(
            cross_kernel(&[3], &[0], &k),
            Err(Error::IndexOutOfRange { index: 3, size: 3 })
        ));
    }
}

#[cfg(test)]
mod proptests {
    use super::*;
    use proptest::prelude::*;

    fn corpus_strategy() -> impl Strategy<Value = Vec<Vec<f64>>> {
        (1usize..=16, 1usize..=32).prop_flat_map(|(d, n)| {
            prop::collection::vec(
                prop::collection::vec(-1.0f64..1.0, d)
                    .prop_filter("non-zero", |v| v.iter().map(|x| x * x).sum::<f64>() > 1e-6),
                n,
            )
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]

        #[test]
        fn kernel_symmetric_unit_diagonal(vs in corpus_strategy(), nonneg in any::<bool>()) {
            let corpus = Corpus::from_vectors(vs).unwrap();
            for item in corpus.items() {
                let n: f64 = item.vector.iter().map(|x| x * x).sum::<f64>().sqrt();
                prop_assert!((n - 1.0).abs() <= 1e-9);
            }
            let k = build_kernel(&corpus, nonneg);
            for a in 0..k.size() {
                prop_assert!((k.sim(a, a) - 1.0).abs() <= 1e-9);
                for b in 0..k.size() {
                    prop_assert!((k.sim(a, b) - k.sim(b, a)).abs() <= 1e-12);
                    let lo = if nonneg { 0.0 } else { -1.0 };
                    prop_assert!(k.sim(a, b) >= lo && k.sim(a, b) <= 1.0);
                }
            }
        }

        #[test]
        fn cosine_ignores_positive_rescaling(vs in corpus_strategy(), scale in 0.01f64..100.0, pick in any::<prop::sample::Index>()) {
            let base = build_kernel(&Corpus::from_vectors(vs.clone()).unwrap(), false);
            let mut scaled = vs;
            let i = pick.index(scaled.len());
            scaled[i].iter_mut().for_each(|x| *x *= scale);
            let k = build_kernel(&Corpus::from_vectors(scaled).unwrap(), false);
            for a in 0..k.size() {
                for b in 0..k.size() {
                    prop_assert!((k.sim(a, b) - base.sim(a, b)).abs() <= 1e-12);
                }
            }
        }

        #[test]
        fn cross_kernel_transposes(vs in corpus_strategy(), a in prop::collection::vec(any::<prop::sample::Index>(), 0..6), b in prop::collection::vec(any::<prop::sample::Index>(), 0..6)) {
            let k = build_kernel(&Corpus::from_vectors(vs).unwrap(), true);
            let a: Vec<usize> = a.iter().map(|i| i.index(k.size())).collect();
            let b: Vec<usize> = b.iter().map(|i| i.index(k.size())).collect();
            let ab = cross_kernel(&a, &b, &k).unwrap();
            let ba = cross_kernel(&b, &a, &k).unwrap();
            for i in 0..a.len() {
                for j in 0..b.len() {
                    prop_assert_eq!(ab[i][j], ba[j][i]);
                }
            }
        }
    }
}
