//! `smiselect`: exemplar selection, adapter training and diagnostics from the shell.
//!
//! Every command writes one JSON document (tagged with a `schema` field) to stdout or to
//! `--out`. Usage errors exit with status 2; invalid inputs exit with status 1 and a JSON
//! error object on stderr.

mod eval;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;
use smiselect::bench::bench_retrieval;
use smiselect::dataset::{generate_synthetic, load_training, save_training, SyntheticConfig};
use smiselect::loss::LossSpec;
use smiselect::oracle::ratio_study;
use smiselect::prompt::{assemble_prompt, PromptOrder, PromptTemplate};
use smiselect::trainer::{
    assemble_batch, batch_loss, load_checkpoint, save_checkpoint, train, AdapterModel, Checkpoint, TrainConfig,
};
use smiselect::{
    annotate, build_kernel, load_corpus, retrieve, retrieve_baseline, Baseline, Family, SmiSpec, SubmodularSpec,
};

/// Budgets used by `annotate --sweep`.
const BUDGET_PRESETS: [usize; 2] = [18, 100];

#[derive(Parser)]
#[command(
    name = "smiselect",
    version,
    about = "Submodular exemplar selection for in-context learning"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Pick a diverse budget of documents to annotate.
    Annotate(AnnotateArgs),
    /// Retrieve exemplars for one query and optionally render a prompt.
    Retrieve(RetrieveArgs),
    /// Train a linear adapter on a training file.
    Train(TrainArgs),
    /// Evaluate the loss of an adapter on a training file.
    Loss(LossArgs),
    /// Compare greedy against exhaustive search on random instances.
    Oracle(OracleArgs),
    /// Time retrieval for each function family.
    Bench(BenchArgs),
    /// Send a prompt to a completion endpoint.
    Eval(eval::EvalArgs),
    /// Write a synthetic clustered training file.
    Generate(GenerateArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum FunctionArg {
    Fl,
    Gc,
    #[value(alias = "ld")]
    Logdet,
}

impl From<FunctionArg> for Family {
    fn from(f: FunctionArg) -> Self {
        match f {
            FunctionArg::Fl => Family::Fl,
            FunctionArg::Gc => Family::Gc,
            FunctionArg::Logdet => Family::Ld,
        }
    }
}

#[derive(Args)]
struct AnnotateArgs {
    /// Corpus JSONL with `id` and `vector` per line.
    #[arg(long)]
    embeddings: PathBuf,
    #[arg(long, required_unless_present = "sweep", conflicts_with = "sweep")]
    budget: Option<usize>,
    /// Run every budget preset (18 and 100) instead of a single budget.
    #[arg(long)]
    sweep: bool,
    #[arg(long, value_enum, default_value = "gc")]
    function: FunctionArg,
    #[arg(long, default_value_t = 0.5)]
    gc_penalty: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Combinatorial,
    Random,
    Similar,
}

#[derive(Clone, Copy, ValueEnum)]
enum OrderArg {
    GainDescending,
    GainAscending,
}

#[derive(Args)]
struct RetrieveArgs {
    /// Labeled pool JSONL; `text` and `answer` are needed for prompts.
    #[arg(long)]
    pool: PathBuf,
    /// Comma-separated query embedding.
    #[arg(
        long,
        value_delimiter = ',',
        allow_hyphen_values = true,
        required_unless_present = "query_text_embedding_file"
    )]
    query_vector: Option<Vec<f64>>,
    /// JSON file holding the query embedding, either an array or `{"vector": [...], "text": "..."}`.
    #[arg(long, conflicts_with = "query_vector")]
    query_text_embedding_file: Option<PathBuf>,
    #[arg(long)]
    k: usize,
    #[arg(long, value_enum, default_value = "gc")]
    function: FunctionArg,
    #[arg(long, default_value_t = 1.0)]
    eta: f64,
    #[arg(long, value_enum, default_value = "combinatorial")]
    mode: ModeArg,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also render a prompt from the selected exemplars.
    #[arg(long)]
    prompt: bool,
    /// Query text for the prompt; overrides the text in the embedding file.
    #[arg(long)]
    query_text: Option<String>,
    #[arg(long)]
    exemplar_template: Option<String>,
    #[arg(long)]
    query_template: Option<String>,
    #[arg(long)]
    separator: Option<String>,
    #[arg(long, value_enum, default_value = "gain-descending")]
    order: OrderArg,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    lambda: f64,
    #[arg(long, value_enum, default_value = "gc")]
    function: FunctionArg,
    #[arg(long, default_value_t = 1.0)]
    eta: f64,
    #[arg(long, default_value_t = 7)]
    epochs: usize,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    #[arg(long, default_value_t = 3e-5)]
    lr: f64,
    #[arg(long, default_value_t = 0.01)]
    weight_decay: f64,
    #[arg(long, default_value_t = 0.06)]
    warmup_ratio: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    checkpoint_out: PathBuf,
    /// Where to write the history JSON; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct LossArgs {
    #[arg(long)]
    data: PathBuf,
    /// Adapter checkpoint; the identity adapter when absent.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long, default_value_t = 0.5)]
    lambda: f64,
    #[arg(long, value_enum, default_value = "gc")]
    function: FunctionArg,
    #[arg(long, default_value_t = 1.0)]
    eta: f64,
    /// Records per batch, in file order.
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct OracleArgs {
    #[arg(long)]
    n: usize,
    #[arg(long)]
    k: usize,
    #[arg(long, default_value_t = 50)]
    trials: usize,
    #[arg(long, value_enum, default_value = "gc")]
    function: FunctionArg,
    #[arg(long, default_value_t = 1.0)]
    eta: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long, default_value_t = 512)]
    n: usize,
    #[arg(long, default_value_t = 16)]
    k: usize,
    #[arg(long, value_enum, value_delimiter = ',', default_value = "gc,fl,logdet")]
    functions: Vec<FunctionArg>,
    #[arg(long, default_value_t = 3)]
    repeats: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long)]
    records: usize,
    #[arg(long, default_value_t = 32)]
    dim: usize,
    #[arg(long, default_value_t = 4)]
    clusters: usize,
    #[arg(long, default_value_t = 0.05)]
    paraphrase_noise: f64,
    #[arg(long, default_value_t = 0.05)]
    doc_noise: f64,
    /// Weight of the direction shared by all clusters.
    #[arg(long, default_value_t = 0.0)]
    shared: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

/// A failure reported as `{"error": {"kind": ..., "message": ...}}`.
#[derive(Debug)]
struct Failure {
    kind: &'static str,
    message: String,
}

impl Failure {
    fn new(kind: &'static str, message: impl Into<String>) -> Self {
        Self {
            kind,
            message: message.into(),
        }
    }
}

impl From<smiselect::Error> for Failure {
    fn from(e: smiselect::Error) -> Self {
        use smiselect::Error as E;
        let kind = match &e {
            E::Parse { .. } => "parse",
            E::Io { .. } => "io",
            E::Dimension { .. } => "dimension",
            E::IndexOutOfRange { .. } | E::AlreadySelected(_) | E::EmptyQuery | E::Invalid(_) => "invalid",
            E::NotPositiveDefinite { .. } => "not-positive-definite",
            E::Degenerate { .. } => "degenerate",
            E::TooLarge { .. } => "too-large",
            E::NonFinite(_) => "non-finite",
        };
        Self::new(kind, e.to_string())
    }
}

type Outcome = Result<(), Failure>;

#[derive(Serialize)]
struct Tagged<'a, T: Serialize> {
    schema: &'a str,
    #[serde(flatten)]
    body: T,
}

fn emit<T: Serialize>(schema: &str, body: T, out: Option<&Path>) -> Outcome {
    let mut text = serde_json::to_string_pretty(&Tagged { schema, body }).expect("output serializes");
    text.push('\n');
    match out {
        Some(path) => std::fs::write(path, text).map_err(|e| Failure::new("io", format!("{}: {e}", path.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn run_annotate(a: AnnotateArgs) -> Outcome {
    let corpus = load_corpus(&a.embeddings)?;
    let spec = SubmodularSpec::new(a.function.into()).with_gc_penalty(a.gc_penalty);
    spec.validate()?;
    let kernel = build_kernel(&corpus, spec.family.wants_nonneg_kernel());
    if a.sweep {
        let runs = BUDGET_PRESETS
            .iter()
            .map(|&b| annotate(&spec, &kernel, b.min(corpus.len())))
            .collect::<smiselect::Result<Vec<_>>>()?;
        return emit(
            "smiselect-selection-sweep/1",
            json!({ "family": spec.family, "runs": runs }),
            a.out.as_deref(),
        );
    }
    let result = annotate(&spec, &kernel, a.budget.expect("clap enforces budget"))?;
    emit("smiselect-selection/1", result, a.out.as_deref())
}

fn read_query_file(path: &Path) -> Result<(Vec<f64>, Option<String>), Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| Failure::new("io", format!("{}: {e}", path.display())))?;
    let bad = |m: String| Failure::new("parse", format!("{}: {m}", path.display()));
    let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| bad(e.to_string()))?;
    let (vector, text) = match &value {
        serde_json::Value::Array(_) => (&value, None),
        serde_json::Value::Object(o) => (
            o.get("vector").ok_or_else(|| bad("missing \"vector\"".into()))?,
            o.get("text").and_then(|t| t.as_str()).map(str::to_owned),
        ),
        _ => return Err(bad("expected an array or an object".into())),
    };
    let vector: Vec<f64> = serde_json::from_value(vector.clone()).map_err(|e| bad(e.to_string()))?;
    Ok((vector, text))
}

fn run_retrieve(a: RetrieveArgs) -> Outcome {
    let pool = load_corpus(&a.pool)?;
    let (query, file_text) = match (&a.query_vector, &a.query_text_embedding_file) {
        (Some(v), _) => (v.clone(), None),
        (None, Some(path)) => read_query_file(path)?,
        (None, None) => unreachable!("clap requires a query"),
    };
    let spec = SmiSpec::new(a.function.into()).with_eta(a.eta);
    let result = match a.mode {
        ModeArg::Combinatorial => retrieve(&spec, &pool, &query, a.k)?,
        ModeArg::Random => retrieve_baseline(Baseline::Random, &pool, &query, a.k, a.seed)?,
        ModeArg::Similar => retrieve_baseline(Baseline::Similar, &pool, &query, a.k, a.seed)?,
    };
    let prompt = if a.prompt {
        let defaults = PromptTemplate::default();
        let template = PromptTemplate {
            exemplar_template: a.exemplar_template.unwrap_or(defaults.exemplar_template),
            query_template: a.query_template.unwrap_or(defaults.query_template),
            separator: a.separator.unwrap_or(defaults.separator),
            order: match a.order {
                OrderArg::GainDescending => PromptOrder::GainDescending,
                OrderArg::GainAscending => PromptOrder::GainAscending,
            },
        };
        let text = a.query_text.or(file_text).ok_or_else(|| {
            Failure::new(
                "invalid",
                "--prompt needs --query-text or a text field in the query file",
            )
        })?;
        Some(assemble_prompt(&template, &result, &pool, &text)?)
    } else {
        None
    };
    #[derive(Serialize)]
    struct Body {
        #[serde(flatten)]
        result: smiselect::SelectionResult,
        #[serde(skip_serializing_if = "Option::is_none")]
        prompt: Option<String>,
    }
    emit("smiselect-selection/1", Body { result, prompt }, a.out.as_deref())
}

fn run_train(a: TrainArgs) -> Outcome {
    let data = load_training(&a.data)?;
    let config = TrainConfig {
        epochs: a.epochs,
        batch_size: a.batch_size,
        learning_rate: a.lr,
        weight_decay: a.weight_decay,
        warmup_ratio: a.warmup_ratio,
        lambda: a.lambda,
        family: a.function.into(),
        eta: a.eta,
        seed: a.seed,
    };
    config.validate()?;
    let dim = data
        .first()
        .ok_or_else(|| Failure::new("invalid", "training file has no records"))?
        .dim();
    let outcome = train(AdapterModel::new(dim, a.seed), &data, &config)?;
    let checkpoint = Checkpoint::new(&outcome.model, &config);
    save_checkpoint(&checkpoint, &a.checkpoint_out)?;
    let body = json!({
        "config": config,
        "config_hash": checkpoint.config_hash,
        "records": data.len(),
        "history": outcome.history(),
        "epochs": outcome.epochs,
    });
    emit("smiselect-train/1", body, a.out.as_deref())
}

fn run_loss(a: LossArgs) -> Outcome {
    let data = load_training(&a.data)?;
    let dim = data
        .first()
        .ok_or_else(|| Failure::new("invalid", "training file has no records"))?
        .dim();
    let model = match &a.checkpoint {
        Some(path) => load_checkpoint(path, Some(dim))?.into_model()?,
        None => AdapterModel::identity(dim),
    };
    if a.batch_size == 0 {
        return Err(Failure::new("invalid", "batch size must be positive"));
    }
    let mut spec = LossSpec::new(a.function.into(), a.lambda);
    spec.smi.eta = a.eta;
    spec.validate()?;
    let mut batches = Vec::new();
    for chunk in data.chunks(a.batch_size) {
        let refs: Vec<_> = chunk.iter().collect();
        let (report, _) = batch_loss(&model, &assemble_batch(&refs), &spec)?;
        batches.push(json!({
            "l_q": report.l_q,
            "l_d": report.l_d,
            "log_combined": report.log_combined,
            "combined": report.combined,
            "alphas": report.alphas,
            "clamp_events": report.clamp_events,
        }));
    }
    let mean = batches
        .iter()
        .map(|b| b["combined"].as_f64().unwrap_or(f64::NAN))
        .sum::<f64>()
        / batches.len() as f64;
    let body = json!({
        "family": spec.family(),
        "lambda": spec.lambda,
        "eta": spec.smi.eta,
        "batch_size": a.batch_size,
        "mean_combined": mean,
        "batches": batches,
    });
    emit("smiselect-loss/1", body, a.out.as_deref())
}

fn run_oracle(a: OracleArgs) -> Outcome {
    let spec = SmiSpec::new(a.function.into()).with_eta(a.eta);
    let study = ratio_study(spec, a.n, a.k, a.trials, a.seed)?;
    emit("smiselect-oracle/1", study, a.out.as_deref())
}

fn run_bench(a: BenchArgs) -> Outcome {
    let families: Vec<Family> = a.functions.iter().map(|&f| f.into()).collect();
    let rows = bench_retrieval(&families, a.n, a.k, a.repeats, a.seed)?;
    emit("smiselect-bench/1", json!({ "rows": rows }), a.out.as_deref())
}

fn run_generate(a: GenerateArgs) -> Outcome {
    let config = SyntheticConfig {
        doc_noise: a.doc_noise,
        shared: a.shared,
        ..SyntheticConfig::new(a.records, a.dim, a.clusters, a.paraphrase_noise, a.seed)
    };
    let records = generate_synthetic(&config)?;
    save_training(&records, &a.out)?;
    emit(
        "smiselect-generate/1",
        json!({ "config": config, "records": records.len() }),
        None,
    )
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Annotate(a) => run_annotate(a),
        Command::Retrieve(a) => run_retrieve(a),
        Command::Train(a) => run_train(a),
        Command::Loss(a) => run_loss(a),
        Command::Oracle(a) => run_oracle(a),
        Command::Bench(a) => run_bench(a),
        Command::Eval(a) => eval::run(a),
        Command::Generate(a) => run_generate(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("{}", json!({ "error": { "kind": f.kind, "message": f.message } }));
            ExitCode::from(1)
        }
    }
}
