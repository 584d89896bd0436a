//! Submodular mutual information for in-context exemplar selection.
//!
//! The crate covers both halves of the pipeline:
//!
//! * **selection** — greedy (lazy) maximization of plain submodular functions for
//!   one-off annotation shortlists, and of submodular mutual information `I_f(A; Q)`
//!   for per-query exemplar retrieval ([`greedy`]);
//! * **learning** — a likelihood-ratio loss over `I_f` that rewards query relevance
//!   and penalizes paraphrase redundancy, with analytic gradients ([`loss`]) used to
//!   train a linear adapter over frozen embeddings ([`trainer`]).
//!
//! Three families are supported throughout: graph cut, facility location and
//! log-determinant ([`Family`]).

// `!(x > 0.0)` style guards are used on purpose: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bench;
pub mod corpus;
pub mod dataset;
pub mod error;
pub mod greedy;
pub mod linalg;
pub mod loss;
pub mod oracle;
pub mod prompt;
pub mod smi;
pub mod submodular;
pub mod trainer;

pub use corpus::{build_kernel, cross_kernel, load_corpus, Corpus, CorpusItem, Kernel, SimilarityKernel};
pub use error::{Error, Result};
pub use greedy::{annotate, retrieve, retrieve_baseline, targeted_select, Baseline, SelectionMode, SelectionResult};
pub use smi::{eval_smi, marginal_gain_smi, SmiSpec};
pub use submodular::{eval_f, marginal_gain_f, Family, SubmodularSpec};
