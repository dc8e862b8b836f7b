//! `privloc` subcommands. [`run`] returns the process exit code: 0 on
//! success, 1 on usage errors, 2 on runtime errors.

use std::ffi::OsString;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};

use privloc::agreement::{self, RatingMatrix};
use privloc::dataset::{
    load_c2s, pretrain_embeddings, save_c2s, split_dataset, tokenize_path, PathSample, TokenizedPath, Vocab,
    DEFAULT_MIN_COUNT,
};
use privloc::localizer::{localize, recover_code_sample, render_annotated, ReportFormat, DEFAULT_TOP_K};
use privloc::model::{full_graph_check, Architecture, HeadMode, Model, ModelConfig, RnnKind};
use privloc::prcs::{ApiSignatureList, LinkDirection, Project};
use privloc::synth::{generate, SynthConfig};
use privloc::trainer::{evaluate, run_experiment, tensorize, ExperimentOptions, MetricsReport, EXPERIMENTS};

pub mod config;
pub mod manifest;

use config::{ConfigFile, Resolver};
use manifest::ManifestBuilder;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        Self::Runtime(e)
    }
}

type CliResult<T = ()> = Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(
    name = "privloc",
    version,
    about = "Mine permission-requiring code paths, train path-attention classifiers and localize privacy behaviors",
    after_help = "Settings can also come from a `key = value` file given with --config (flags win). \
                  PRIVLOC_SEED supplies the seed when neither sets it."
)]
pub struct Cli {
    /// Optional `key = value` file with defaults for any long flag.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// More logging (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Find API call sites in a Java source tree and write their call chains as paths.
    Mine(MineArgs),
    /// Split a labelled .c2s file, build the vocabulary and pretrain embeddings.
    Dataset(DatasetArgs),
    /// Train one experiment configuration and write the model and metrics.
    Train(TrainArgs),
    /// Score a trained model on a labelled .c2s file.
    Eval(EvalArgs),
    /// Highlight the statements a trained multi-head model attends to.
    Localize(LocalizeArgs),
    /// Inter-rater agreement statistics from an `item,rater,label` CSV.
    Agree(AgreeArgs),
    /// Check every autodiff op and the full model graph against finite differences.
    Gradcheck(GradcheckArgs),
    /// Generate a planted-signal Java dataset.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
struct MineArgs {
    /// Root of the Java source tree.
    #[arg(long)]
    project: Option<PathBuf>,
    /// API list, one fully-qualified method per line.
    #[arg(long)]
    apis: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// `callees` (hop 2 is called by hop 1) or `callers`.
    #[arg(long)]
    direction: Option<String>,
    /// Optional `id,label` CSV (label yes/no, 1/0, true/false).
    #[arg(long)]
    labels: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct DatasetArgs {
    #[arg(long)]
    data: Option<PathBuf>,
    /// Optional `id,label` CSV applied before splitting.
    #[arg(long)]
    labels: Option<PathBuf>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    min_count: Option<u64>,
    /// Tokenize non-terminals individually (true) or as one joined token.
    #[arg(long)]
    tokenize_nonterminals: Option<bool>,
    #[arg(long)]
    embed_size: Option<usize>,
    /// Skip-gram epochs; 0 skips `embeddings.bin`.
    #[arg(long)]
    embed_epochs: Option<usize>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    data: Option<PathBuf>,
    /// One of baseline, L_100, L_200, L_300, Bi_100, Bi_200, Bi_300, multi_head.
    #[arg(long)]
    experiment: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Checkpoint path; `<out>.json` and `<out>.vocab.tsv` are written beside it.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Metrics JSON path (stdout when absent).
    #[arg(long)]
    metrics: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    embed_size: Option<usize>,
    #[arg(long)]
    fc_hidden: Option<usize>,
    /// `stacked_weights` or `weighted_context`.
    #[arg(long)]
    head_mode: Option<HeadMode>,
    #[arg(long)]
    embed_epochs: Option<usize>,
    #[arg(long)]
    min_count: Option<u64>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    /// Path-sampling seed; use the training seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct LocalizeArgs {
    #[arg(long)]
    model: Option<PathBuf>,
    /// .c2s file holding the sample.
    #[arg(long)]
    sample: Option<PathBuf>,
    /// Sample id, when the file holds several.
    #[arg(long)]
    id: Option<String>,
    /// Source tree the sample was mined from.
    #[arg(long)]
    src: Option<PathBuf>,
    /// text, html or json.
    #[arg(long)]
    format: Option<String>,
    #[arg(long)]
    top_k: Option<usize>,
    /// Path-sampling seed; use the training seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct AgreeArgs {
    #[arg(long)]
    ratings: Option<PathBuf>,
    /// all, kappa, alpha or cases.
    #[arg(long)]
    stats: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct GradcheckArgs {
    /// Random seeds per check.
    #[arg(long)]
    seeds: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long)]
    n: Option<usize>,
    /// Hop (1-3) whose call decides the label.
    #[arg(long)]
    marker_hop: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    positive_rate: Option<f64>,
    #[arg(long)]
    filler_min: Option<usize>,
    #[arg(long)]
    filler_max: Option<usize>,
    /// Receives `src/`, `samples.c2s` and `truth.csv`.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

/// Parses `argv` (program name first), runs the command and returns the
/// exit code. Errors go to stderr.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .try_init();
    match dispatch(cli) {
        Ok(()) => 0,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}\n\nRun `privloc --help` for usage.");
            1
        }
        Err(CliError::Runtime(e)) => {
            eprintln!("error: {e:#}");
            2
        }
    }
}

fn dispatch(cli: Cli) -> CliResult {
    let file = match &cli.config {
        Some(p) => ConfigFile::load(p)?,
        None => ConfigFile::default(),
    };
    let mut r = Resolver::new(&file);
    match cli.command {
        Command::Mine(a) => mine(a, &mut r),
        Command::Dataset(a) => dataset(a, &mut r),
        Command::Train(a) => train(a, &mut r),
        Command::Eval(a) => eval(a, &mut r),
        Command::Localize(a) => localize_cmd(a, &mut r),
        Command::Agree(a) => agree(a, &mut r),
        Command::Gradcheck(a) => gradcheck(a, &mut r),
        Command::Synth(a) => synth(a, &mut r),
    }
}

/// Writes to `out`, or stdout when `None`.
fn emit(out: Option<&Path>, bytes: &[u8]) -> anyhow::Result<()> {
    match out {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir).with_context(|| dir.display().to_string())?;
            }
            std::fs::write(p, bytes).with_context(|| p.display().to_string())
        }
        None => {
            let mut so = std::io::stdout().lock();
            so.write_all(bytes)?;
            so.flush()?;
            Ok(())
        }
    }
}

fn to_json<T: serde::Serialize>(v: &T) -> anyhow::Result<Vec<u8>> {
    Ok((serde_json::to_string_pretty(v)? + "\n").into_bytes())
}

fn parse_label(s: &str) -> Option<bool> {
    match s.trim().to_ascii_lowercase().as_str() {
        "1" | "yes" | "y" | "true" => Some(true),
        "0" | "no" | "n" | "false" => Some(false),
        _ => None,
    }
}

/// `id,label` lines; a header line starting with `id,` is skipped.
fn apply_labels(samples: &mut [PathSample], path: &Path) -> anyhow::Result<()> {
    let text = std::fs::read_to_string(path).with_context(|| path.display().to_string())?;
    let mut labels = std::collections::HashMap::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() || (i == 0 && line.starts_with("id,")) {
            continue;
        }
        let (id, label) = line
            .rsplit_once(',')
            .ok_or_else(|| anyhow!("{}:{}: expected `id,label`", path.display(), i + 1))?;
        let label = parse_label(label).ok_or_else(|| anyhow!("{}:{}: bad label `{label}`", path.display(), i + 1))?;
        labels.insert(id.trim().to_string(), label);
    }
    let mut matched = 0;
    for s in samples.iter_mut() {
        if let Some(&l) = labels.get(&s.id) {
            s.label = Some(l);
            matched += 1;
        }
    }
    log::info!("labels: {matched} of {} samples matched", samples.len());
    Ok(())
}

fn mine(a: MineArgs, r: &mut Resolver) -> CliResult {
    let project_dir: PathBuf = r.required("project", a.project)?;
    let apis_path: PathBuf = r.required("apis", a.apis)?;
    let out: PathBuf = r.required("out", a.out)?;
    let direction = match r.value("direction", a.direction, "callees".to_string())?.as_str() {
        "callees" => LinkDirection::Callees,
        "callers" => LinkDirection::Callers,
        other => return Err(CliError::Usage(format!("--direction must be callees or callers, got `{other}`"))),
    };
    let labels: Option<PathBuf> = r.optional("labels", a.labels)?;
    let mut m = ManifestBuilder::start("mine");

    let apis = ApiSignatureList::load(&apis_path).map_err(anyhow::Error::from)?;
    let project = Project::load(&project_dir).map_err(anyhow::Error::from)?;
    let codes = project.find_prcs_with(&apis, direction);
    let mut samples: Vec<PathSample> = codes.iter().map(|c| c.to_path_sample()).collect();
    if let Some(l) = &labels {
        apply_labels(&mut samples, l)?;
        m.inputs.push(l.clone());
    }
    save_c2s(&samples, &out).map_err(anyhow::Error::from)?;
    eprintln!(
        "{} methods, {} skipped files, {} samples -> {}",
        project.methods.len(),
        project.skipped.len(),
        samples.len(),
        out.display()
    );
    m.inputs.extend([project_dir, apis_path]);
    m.outputs.push(out);
    m.finish(r.resolved.clone(), None)?;
    Ok(())
}

fn dataset(a: DatasetArgs, r: &mut Resolver) -> CliResult {
    let data: PathBuf = r.required("data", a.data)?;
    let out_dir: PathBuf = r.required("out-dir", a.out_dir)?;
    let labels: Option<PathBuf> = r.optional("labels", a.labels)?;
    let seed = r.seed(a.seed)?;
    let min_count = r.value("min-count", a.min_count, DEFAULT_MIN_COUNT)?;
    let tok = r.value("tokenize-nonterminals", a.tokenize_nonterminals, true)?;
    let embed_size = r.value("embed-size", a.embed_size, privloc::model::DEFAULT_EMBED_SIZE)?;
    let embed_epochs = r.value("embed-epochs", a.embed_epochs, 5usize)?;
    let mut m = ManifestBuilder::start("dataset");

    let mut samples = load_c2s(&data).map_err(anyhow::Error::from)?;
    m.inputs.push(data);
    if let Some(l) = labels {
        apply_labels(&mut samples, &l)?;
        m.inputs.push(l);
    }
    let (train, val, test) = split_dataset(&samples, seed).map_err(anyhow::Error::from)?;
    std::fs::create_dir_all(&out_dir).with_context(|| out_dir.display().to_string())?;
    for (name, part) in [("train.c2s", &train), ("val.c2s", &val), ("test.c2s", &test)] {
        save_c2s(part, &out_dir.join(name)).map_err(anyhow::Error::from)?;
    }
    let vocab = Vocab::from_samples(&train, tok, min_count);
    vocab.save(&out_dir.join("vocab.tsv")).map_err(anyhow::Error::from)?;
    if embed_epochs > 0 {
        let corpus: Vec<TokenizedPath> = train
            .iter()
            .flat_map(|s| s.hops.iter().flatten())
            .map(|p| tokenize_path(p, &vocab, tok))
            .collect::<Result<_, _>>()
            .map_err(anyhow::Error::from)?;
        let table = pretrain_embeddings(&corpus, vocab.len(), embed_size, embed_epochs, seed);
        let mut store = privloc_autograd::ParamStore::new();
        store.insert("embed", table);
        privloc_autograd::checkpoint::save(&store, out_dir.join("embeddings.bin")).map_err(anyhow::Error::from)?;
    }
    eprintln!(
        "{} train / {} val / {} test, vocab {} -> {}",
        train.len(),
        val.len(),
        test.len(),
        vocab.len(),
        out_dir.display()
    );
    m.outputs.push(out_dir);
    m.finish(r.resolved.clone(), Some(seed))?;
    Ok(())
}

fn train(a: TrainArgs, r: &mut Resolver) -> CliResult {
    let data: PathBuf = r.required("data", a.data)?;
    let experiment: String = r.required("experiment", a.experiment)?;
    if !EXPERIMENTS.contains(&experiment.as_str()) {
        return Err(CliError::Usage(format!(
            "unknown experiment `{experiment}` (expected one of {})",
            EXPERIMENTS.join(", ")
        )));
    }
    let out: PathBuf = r.required("out", a.out)?;
    let metrics: Option<PathBuf> = r.optional("metrics", a.metrics)?;
    let d = ExperimentOptions::default();
    let opts = ExperimentOptions {
        seed: r.seed(a.seed)?,
        epochs: r.value("epochs", a.epochs, d.epochs)?,
        batch_size: r.value("batch-size", a.batch_size, d.batch_size)?,
        lr: r.value("lr", a.lr, d.lr)?,
        embed_size: r.value("embed-size", a.embed_size, d.embed_size)?,
        fc_hidden: r.value("fc-hidden", a.fc_hidden, d.fc_hidden)?,
        head_mode: r.value("head-mode", a.head_mode, d.head_mode)?,
        embed_epochs: r.value("embed-epochs", a.embed_epochs, d.embed_epochs)?,
        min_count: r.value("min-count", a.min_count, d.min_count)?,
    };
    let mut m = ManifestBuilder::start("train");

    let samples = load_c2s(&data).map_err(anyhow::Error::from)?;
    m.inputs.push(data);
    let result = run_experiment(&experiment, &samples, &opts).map_err(anyhow::Error::from)?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| dir.display().to_string())?;
    }
    result.outcome.model.save(&out, Some(&result.vocab)).map_err(anyhow::Error::from)?;
    let report = MetricsReport::from(&result);
    emit(metrics.as_deref(), &to_json(&report)?)?;
    eprintln!(
        "{experiment}: test accuracy {:.4} (best epoch {}) -> {}",
        result.test.accuracy,
        result.outcome.best_epoch,
        out.display()
    );
    m.outputs.push(out);
    m.outputs.extend(metrics);
    m.finish(r.resolved.clone(), Some(opts.seed))?;
    Ok(())
}

fn load_model(path: &Path) -> anyhow::Result<(Model, Vocab)> {
    let model = Model::load(path).with_context(|| format!("loading {}", path.display()))?;
    let vocab = Model::load_vocab(path).with_context(|| format!("loading vocab for {}", path.display()))?;
    Ok((model, vocab))
}

fn eval(a: EvalArgs, r: &mut Resolver) -> CliResult {
    let model_path: PathBuf = r.required("model", a.model)?;
    let data: PathBuf = r.required("data", a.data)?;
    let seed = r.seed(a.seed)?;
    let out: Option<PathBuf> = r.optional("out", a.out)?;
    let mut m = ManifestBuilder::start("eval");

    let (model, vocab) = load_model(&model_path)?;
    let samples = load_c2s(&data).map_err(anyhow::Error::from)?;
    let examples = samples
        .iter()
        .filter(|s| s.label.is_some())
        .map(|s| tensorize(s, &vocab, &model.config, seed))
        .collect::<Result<Vec<_>, _>>()
        .map_err(anyhow::Error::from)?;
    if examples.is_empty() {
        return Err(anyhow!("{} has no labelled samples", data.display()).into());
    }
    let metrics = evaluate(&model, &examples).map_err(anyhow::Error::from)?;
    emit(out.as_deref(), &to_json(&metrics)?)?;
    m.inputs.extend([model_path, data]);
    m.outputs.extend(out);
    m.finish(r.resolved.clone(), Some(seed))?;
    Ok(())
}

fn localize_cmd(a: LocalizeArgs, r: &mut Resolver) -> CliResult {
    let model_path: PathBuf = r.required("model", a.model)?;
    let sample_path: PathBuf = r.required("sample", a.sample)?;
    let src: PathBuf = r.required("src", a.src)?;
    let id: Option<String> = r.optional("id", a.id)?;
    let format: ReportFormat = r
        .value("format", a.format, "text".to_string())?
        .parse()
        .map_err(|e: privloc::localizer::LocalizeError| CliError::Usage(e.to_string()))?;
    let top_k = r.value("top-k", a.top_k, DEFAULT_TOP_K)?;
    let seed = r.seed(a.seed)?;
    let out: Option<PathBuf> = r.optional("out", a.out)?;
    let mut m = ManifestBuilder::start("localize");

    let (model, vocab) = load_model(&model_path)?;
    let samples = load_c2s(&sample_path).map_err(anyhow::Error::from)?;
    let sample = match &id {
        Some(id) => samples
            .iter()
            .find(|s| &s.id == id)
            .ok_or_else(|| anyhow!("no sample `{id}` in {}", sample_path.display()))?,
        None => match samples.as_slice() {
            [one] => one,
            [] => return Err(anyhow!("{} holds no samples", sample_path.display()).into()),
            many => {
                return Err(CliError::Usage(format!(
                    "{} holds {} samples; pick one with --id",
                    sample_path.display(),
                    many.len()
                )))
            }
        },
    };
    let project = Project::load(&src).map_err(anyhow::Error::from)?;
    let code = recover_code_sample(sample, &project.methods).map_err(anyhow::Error::from)?;
    let report = localize(&code, &model, &vocab, seed, top_k).map_err(anyhow::Error::from)?;
    emit(out.as_deref(), &render_annotated(&report, format).map_err(anyhow::Error::from)?)?;
    m.inputs.extend([model_path, sample_path, src]);
    m.outputs.extend(out);
    m.finish(r.resolved.clone(), Some(seed))?;
    Ok(())
}

fn agree(a: AgreeArgs, r: &mut Resolver) -> CliResult {
    let ratings: PathBuf = r.required("ratings", a.ratings)?;
    let stats = r.value("stats", a.stats, "all".to_string())?;
    let out: Option<PathBuf> = r.optional("out", a.out)?;
    let mut m = ManifestBuilder::start("agree");

    let mat = RatingMatrix::from_csv_file(&ratings).map_err(anyhow::Error::from)?;
    let value = match stats.as_str() {
        "all" => serde_json::to_value(agreement::summarize(&mat).map_err(anyhow::Error::from)?),
        "kappa" => serde_json::to_value(agreement::fleiss_kappa(&mat).map_err(anyhow::Error::from)?),
        "alpha" => serde_json::to_value(agreement::krippendorff_alpha(&mat).map_err(anyhow::Error::from)?),
        "cases" => serde_json::to_value(agreement::agreement_cases(&mat).map_err(anyhow::Error::from)?),
        other => {
            return Err(CliError::Usage(format!(
                "--stats must be all, kappa, alpha or cases, got `{other}`"
            )))
        }
    }
    .map_err(anyhow::Error::from)?;
    emit(out.as_deref(), &to_json(&value)?)?;
    m.inputs.push(ratings);
    m.outputs.extend(out);
    m.finish(r.resolved.clone(), None)?;
    Ok(())
}

pub const OP_TOLERANCE: f64 = 1e-4;
pub const GRAPH_TOLERANCE: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct GradcheckSummary {
    pub seeds: u64,
    /// Worst relative error per op over all seeds.
    pub ops: std::collections::BTreeMap<String, f64>,
    /// Worst relative error per full-model configuration.
    pub full_graph: std::collections::BTreeMap<String, f64>,
    pub passed: bool,
}

/// Model configurations covered by the full-graph check.
pub fn gradcheck_configs() -> Vec<(&'static str, ModelConfig)> {
    let base = ModelConfig {
        architecture: Architecture::MultiHead,
        tokenize_nonterminals: true,
        use_attention: true,
        rnn_kind: RnnKind::Lstm,
        num_paths: 3,
        head_mode: HeadMode::StackedWeights,
        fc_hidden: 5,
        embed_size: 4,
        vocab_size: 12,
    };
    vec![
        ("multi_head/stacked_weights", base.clone()),
        (
            "multi_head/weighted_context",
            ModelConfig {
                head_mode: HeadMode::WeightedContext,
                ..base.clone()
            },
        ),
        (
            "single_head/bilstm",
            ModelConfig {
                architecture: Architecture::SingleHead,
                rnn_kind: RnnKind::BiLstm,
                ..base
            },
        ),
    ]
}

pub fn run_gradcheck(seeds: u64) -> anyhow::Result<GradcheckSummary> {
    let mut ops = std::collections::BTreeMap::new();
    let mut full = std::collections::BTreeMap::new();
    for seed in 0..seeds {
        for (name, rep) in privloc_autograd::op_suite(seed)? {
            let e = ops.entry(name.to_string()).or_insert(0.0f64);
            *e = e.max(rep.max_rel_error);
        }
        for (name, cfg) in gradcheck_configs() {
            let rep = full_graph_check(&cfg, seed)?;
            let e = full.entry(name.to_string()).or_insert(0.0f64);
            *e = e.max(rep.max_rel_error);
        }
    }
    let passed = ops.values().all(|&e| e < OP_TOLERANCE) && full.values().all(|&e| e < GRAPH_TOLERANCE);
    Ok(GradcheckSummary {
        seeds,
        ops,
        full_graph: full,
        passed,
    })
}

fn gradcheck(a: GradcheckArgs, r: &mut Resolver) -> CliResult {
    let seeds = r.value("seeds", a.seeds, 20u64)?;
    let out: Option<PathBuf> = r.optional("out", a.out)?;
    let mut m = ManifestBuilder::start("gradcheck");
    let summary = run_gradcheck(seeds)?;
    emit(out.as_deref(), &to_json(&summary)?)?;
    m.outputs.extend(out);
    m.finish(r.resolved.clone(), None)?;
    if !summary.passed {
        return Err(anyhow!("gradient check exceeded tolerance").into());
    }
    Ok(())
}

fn synth(a: SynthArgs, r: &mut Resolver) -> CliResult {
    let d = SynthConfig::default();
    let seed = match r.optional("seed", a.seed)? {
        Some(s) => s,
        None => {
            // the generator's documented default, unless PRIVLOC_SEED says otherwise
            if std::env::var(config::SEED_ENV).is_ok() {
                r.seed(None)?
            } else {
                r.value("seed", None, d.seed)?
            }
        }
    };
    let cfg = SynthConfig {
        n: r.value("n", a.n, d.n)?,
        marker_hop: r.value("marker-hop", a.marker_hop, d.marker_hop)?,
        seed,
        positive_rate: r.value("positive-rate", a.positive_rate, d.positive_rate)?,
        filler: (
            r.value("filler-min", a.filler_min, d.filler.0)?,
            r.value("filler-max", a.filler_max, d.filler.1)?,
        ),
    };
    if cfg.filler.0 > cfg.filler.1 {
        return Err(CliError::Usage("--filler-min exceeds --filler-max".into()));
    }
    let out_dir: PathBuf = r.required("out-dir", a.out_dir)?;
    let mut m = ManifestBuilder::start("synth");

    let ds = generate(&cfg).map_err(|e| match e {
        privloc::synth::SynthError::BadHop(_) | privloc::synth::SynthError::BadRate(_) | privloc::synth::SynthError::Empty => {
            CliError::Usage(e.to_string())
        }
        other => CliError::Runtime(other.into()),
    })?;
    ds.write_sources(&out_dir.join("src")).map_err(anyhow::Error::from)?;
    save_c2s(&ds.path_samples(), &out_dir.join("samples.c2s")).map_err(anyhow::Error::from)?;
    let mut truth = String::from("id,label,marker_hop,marker_line,partner_hop,partner_line,partner_is_marker\n");
    for s in &ds.samples {
        truth += &format!(
            "{},{},{},{},{},{},{}\n",
            s.code.id,
            u8::from(s.label),
            s.marker_hop + 1,
            s.marker_line,
            s.partner_hop + 1,
            s.partner_line,
            u8::from(s.partner_is_marker)
        );
    }
    std::fs::write(out_dir.join("truth.csv"), truth).context("truth.csv")?;
    eprintln!("{} samples -> {}", ds.samples.len(), out_dir.display());
    m.outputs.push(out_dir);
    m.finish(r.resolved.clone(), Some(seed))?;
    Ok(())
}
