//! Training loop, evaluation metrics and the named experiment grid.

use privloc_autograd::{adam_step, AdamState, Tape, Tensor};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{
    derive_seed, pretrain_embeddings, sample_indices, split_dataset, tokenize_path, DatasetError, PathSample,
    TokenizedPath, Vocab, DEFAULT_MIN_COUNT, NULL_PATH, NUM_HOPS,
};
use crate::model::{
    Architecture, HeadMode, Model, ModelConfig, ModelError, PathMatrix, RnnKind, DEFAULT_EMBED_SIZE,
    DEFAULT_FC_HIDDEN,
};

pub const DEFAULT_BATCH_SIZE: usize = 8;
pub const DEFAULT_LR: f64 = 1e-5;
pub const DEFAULT_EPOCHS: usize = 50;

pub const EXPERIMENTS: [&str; 8] = ["baseline", "L_100", "L_200", "L_300", "Bi_100", "Bi_200", "Bi_300", "multi_head"];

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("{0} split is empty")]
    EmptySplit(&'static str),
    #[error("unknown experiment `{0}` (expected one of {list})", list = EXPERIMENTS.join(", "))]
    UnknownExperiment(String),
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("sample `{0}` has no label")]
    Unlabeled(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Tensor(#[from] privloc_autograd::TensorError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lr: f64,
    pub epochs: usize,
    pub seed: u64,
    pub model: ModelConfig,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.batch_size == 0 {
            return Err(TrainError::InvalidConfig("batch_size must be at least 1".into()));
        }
        if !(self.lr >= 0.0) || !self.lr.is_finite() {
            return Err(TrainError::InvalidConfig(format!("lr must be a finite non-negative number, got {}", self.lr)));
        }
        Ok(())
    }
}

/// One model-ready sample. `origin[h][r]` is the index of row `r` of hop
/// `h` in the source sample's hop (`(hop, index)` for pooled inputs), or
/// `None` for a null row.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub id: String,
    pub label: bool,
    pub input: PathMatrix,
    pub origin: Vec<Vec<Option<(usize, usize)>>>,
}

/// Stable 64-bit FNV-1a of a sample id.
pub fn id_hash(id: &str) -> u64 {
    id.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

/// Tokenizes and samples a sample's paths into the model's input shape.
/// Sampling is seeded from `seed` and the sample id, so the same sample
/// always gets the same rows.
pub fn tensorize(sample: &PathSample, vocab: &Vocab, cfg: &ModelConfig, seed: u64) -> Result<Example, TrainError> {
    let label = sample.label.ok_or_else(|| TrainError::Unlabeled(sample.id.clone()))?;
    let (input, origin) = tensorize_unlabeled(sample, vocab, cfg, seed)?;
    Ok(Example {
        id: sample.id.clone(),
        label,
        input,
        origin,
    })
}

#[allow(clippy::type_complexity)]
pub fn tensorize_unlabeled(
    sample: &PathSample,
    vocab: &Vocab,
    cfg: &ModelConfig,
    seed: u64,
) -> Result<(PathMatrix, Vec<Vec<Option<(usize, usize)>>>), TrainError> {
    let h = id_hash(&sample.id);
    let n = cfg.num_paths;
    let mut input = Vec::new();
    let mut origin = Vec::new();
    let mut emit = |pool: Vec<(usize, usize)>, s: u64| -> Result<(), TrainError> {
        let picked = sample_indices(pool.len(), n, s);
        let mut rows = Vec::with_capacity(n);
        let mut from = Vec::with_capacity(n);
        for i in picked {
            let (hop, k) = pool[i];
            rows.push(tokenize_path(&sample.hops[hop][k], vocab, cfg.tokenize_nonterminals)?);
            from.push(Some((hop, k)));
        }
        rows.resize(n, NULL_PATH);
        from.resize(n, None);
        input.push(rows);
        origin.push(from);
        Ok(())
    };
    match cfg.architecture {
        Architecture::MultiHead => {
            for hop in 0..NUM_HOPS {
                let len = sample.hops.get(hop).map_or(0, Vec::len);
                emit((0..len).map(|k| (hop, k)).collect(), derive_seed(seed, h, hop as u64))?;
            }
        }
        Architecture::SingleHead => {
            let pool = sample
                .hops
                .iter()
                .enumerate()
                .flat_map(|(hop, paths)| (0..paths.len()).map(move |k| (hop, k)))
                .collect();
            emit(pool, derive_seed(seed, h, NUM_HOPS as u64))?;
        }
    }
    Ok((input, origin))
}

/// Counts with the positive class first: `[[TP, FN], [FP, TN]]`
/// (rows = actual, columns = predicted).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub confusion_matrix: [[u64; 2]; 2],
}

impl Metrics {
    pub fn from_counts(tp: u64, fp: u64, fn_: u64, tn: u64) -> Self {
        let ratio = |a: u64, b: u64| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        Self {
            accuracy: ratio(tp + tn, tp + fp + fn_ + tn),
            precision,
            recall,
            f1,
            confusion_matrix: [[tp, fn_], [fp, tn]],
        }
    }

    pub fn from_predictions(pairs: impl IntoIterator<Item = (bool, bool)>) -> Self {
        let (mut tp, mut fp, mut fn_, mut tn) = (0, 0, 0, 0);
        for (actual, predicted) in pairs {
            match (actual, predicted) {
                (true, true) => tp += 1,
                (false, true) => fp += 1,
                (true, false) => fn_ += 1,
                (false, false) => tn += 1,
            }
        }
        Self::from_counts(tp, fp, fn_, tn)
    }

    pub fn total(&self) -> u64 {
        self.confusion_matrix.iter().flatten().sum()
    }
}

/// Threshold 0.5 on the sigmoid output.
pub fn evaluate(model: &Model, split: &[Example]) -> Result<Metrics, TrainError> {
    let mut pairs = Vec::with_capacity(split.len());
    for ex in split {
        let p = model.forward(&ex.input)?.probability;
        pairs.push((ex.label, p >= 0.5));
    }
    Ok(Metrics::from_predictions(pairs))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_acc: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters from the best validation epoch.
    pub model: Model,
    /// Parameters after the last epoch.
    pub final_model: Model,
    /// 1-based; 0 if no epoch ran.
    pub best_epoch: usize,
    pub history: Vec<EpochStats>,
}

/// Mini-batch Adam on BCE. After every epoch the validation accuracy is
/// measured and the parameters of the best epoch (earliest on ties) kept.
pub fn train(mut model: Model, train: &[Example], val: &[Example], cfg: &TrainConfig) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(TrainError::EmptySplit("train"));
    }
    if val.is_empty() {
        return Err(TrainError::EmptySplit("validation"));
    }
    let embed_pos = model.params.position("embed");
    let embed_size = model.config.embed_size;
    let mut adam = AdamState::new(model.params.tensors());
    let mut best: Option<(f64, usize, Model)> = None;
    let mut history = Vec::with_capacity(cfg.epochs);

    for epoch in 1..=cfg.epochs {
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, epoch as u64, 0x7261_696e)));
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for batch in order.chunks(cfg.batch_size) {
            let mut tape = Tape::new();
            let vars = model
                .params
                .tensors()
                .iter()
                .map(|t| tape.param(t.clone()))
                .collect::<Result<Vec<_>, _>>()?;
            let mut probs = Vec::with_capacity(batch.len());
            let mut targets = Vec::with_capacity(batch.len());
            for &i in batch {
                let g = model.build_graph(&mut tape, &vars, &train[i].input)?;
                probs.push(g.probability);
                targets.push(if train[i].label { 1.0 } else { 0.0 });
            }
            let p = if probs.len() == 1 { probs[0] } else { tape.concat(&probs)? };
            for (k, &i) in batch.iter().enumerate() {
                correct += usize::from((tape.value(p).data()[k] >= 0.5) == train[i].label);
            }
            let loss = tape.bce_loss(p, &targets)?;
            loss_sum += tape.value(loss).data()[0] * batch.len() as f64;
            tape.backward(loss)?;
            let mut grads: Vec<Tensor> = vars
                .iter()
                .zip(model.params.tensors())
                .map(|(&v, t)| tape.grad(v).unwrap_or_else(|| Tensor::zeros(t.shape())))
                .collect();
            // the PAD row stays frozen at zero
            if let Some(e) = embed_pos {
                grads[e].data_mut()[..embed_size].fill(0.0);
            }
            adam_step(model.params.tensors_mut(), &grads, &mut adam, cfg.lr)?;
        }
        let val_acc = evaluate(&model, val)?.accuracy;
        let stats = EpochStats {
            epoch,
            train_loss: loss_sum / train.len() as f64,
            train_acc: correct as f64 / train.len() as f64,
            val_acc,
        };
        log::info!(
            "epoch {epoch}: loss {:.4} train acc {:.4} val acc {:.4}",
            stats.train_loss,
            stats.train_acc,
            stats.val_acc
        );
        history.push(stats);
        if best.as_ref().is_none_or(|(acc, _, _)| val_acc > *acc) {
            best = Some((val_acc, epoch, model.clone()));
        }
    }
    let (best_epoch, best_model) = match best {
        Some((_, e, m)) => (e, m),
        None => (0, model.clone()),
    };
    Ok(TrainOutcome {
        model: best_model,
        final_model: model,
        best_epoch,
        history,
    })
}

/// Row of the experiment table. `vocab_size` is filled in once the
/// vocabulary is built.
pub fn experiment_config(name: &str) -> Result<ModelConfig, TrainError> {
    let base = ModelConfig {
        architecture: Architecture::SingleHead,
        tokenize_nonterminals: true,
        use_attention: true,
        rnn_kind: RnnKind::Lstm,
        num_paths: 100,
        head_mode: HeadMode::StackedWeights,
        fc_hidden: DEFAULT_FC_HIDDEN,
        embed_size: DEFAULT_EMBED_SIZE,
        vocab_size: 2,
    };
    let row = |rnn_kind, num_paths| ModelConfig {
        rnn_kind,
        num_paths,
        ..base.clone()
    };
    Ok(match name {
        "baseline" => ModelConfig {
            tokenize_nonterminals: false,
            use_attention: false,
            ..base
        },
        "L_100" => row(RnnKind::Lstm, 100),
        "L_200" => row(RnnKind::Lstm, 200),
        "L_300" => row(RnnKind::Lstm, 300),
        "Bi_100" => row(RnnKind::BiLstm, 100),
        "Bi_200" => row(RnnKind::BiLstm, 200),
        "Bi_300" => row(RnnKind::BiLstm, 300),
        "multi_head" => ModelConfig {
            architecture: Architecture::MultiHead,
            ..base
        },
        other => return Err(TrainError::UnknownExperiment(other.to_string())),
    })
}

/// Knobs shared by every experiment run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentOptions {
    pub seed: u64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub embed_size: usize,
    pub fc_hidden: usize,
    pub head_mode: HeadMode,
    /// Skip-gram pretraining epochs over the train split; 0 = random init.
    pub embed_epochs: usize,
    pub min_count: u64,
}

impl Default for ExperimentOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            epochs: DEFAULT_EPOCHS,
            batch_size: DEFAULT_BATCH_SIZE,
            lr: DEFAULT_LR,
            embed_size: DEFAULT_EMBED_SIZE,
            fc_hidden: DEFAULT_FC_HIDDEN,
            head_mode: HeadMode::StackedWeights,
            embed_epochs: 5,
            min_count: DEFAULT_MIN_COUNT,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub name: String,
    pub config: TrainConfig,
    pub vocab: Vocab,
    pub outcome: TrainOutcome,
    pub val: Metrics,
    pub test: Metrics,
}

/// Splits, builds the vocabulary (and embeddings) from the train split,
/// trains, and evaluates the best epoch on the test split.
pub fn run_experiment(name: &str, samples: &[PathSample], opts: &ExperimentOptions) -> Result<ExperimentResult, TrainError> {
    let mut model_cfg = experiment_config(name)?;
    model_cfg.embed_size = opts.embed_size;
    model_cfg.fc_hidden = opts.fc_hidden;
    model_cfg.head_mode = opts.head_mode;

    let (train_s, val_s, test_s) = split_dataset(samples, opts.seed)?;
    let vocab = Vocab::from_samples(&train_s, model_cfg.tokenize_nonterminals, opts.min_count);
    model_cfg.vocab_size = vocab.len();
    let cfg = TrainConfig {
        batch_size: opts.batch_size,
        lr: opts.lr,
        epochs: opts.epochs,
        seed: opts.seed,
        model: model_cfg.clone(),
    };
    cfg.validate()?;

    let prep = |split: &[PathSample]| -> Result<Vec<Example>, TrainError> {
        split.iter().map(|s| tensorize(s, &vocab, &model_cfg, opts.seed)).collect()
    };
    let (train_x, val_x, test_x) = (prep(&train_s)?, prep(&val_s)?, prep(&test_s)?);
    if test_x.is_empty() {
        return Err(TrainError::EmptySplit("test"));
    }

    let init_seed = derive_seed(opts.seed, 0x6d6f_64656c, 0);
    let model = if opts.embed_epochs > 0 {
        let corpus: Vec<TokenizedPath> = train_s
            .iter()
            .flat_map(|s| s.hops.iter().flatten())
            .map(|p| tokenize_path(p, &vocab, model_cfg.tokenize_nonterminals))
            .collect::<Result<_, _>>()?;
        let table = pretrain_embeddings(&corpus, vocab.len(), model_cfg.embed_size, opts.embed_epochs, opts.seed);
        Model::with_embeddings(model_cfg.clone(), table, init_seed)?
    } else {
        Model::new(model_cfg.clone(), init_seed)?
    };

    log::info!(
        "{name}: {} train / {} val / {} test, vocab {}",
        train_x.len(),
        val_x.len(),
        test_x.len(),
        vocab.len()
    );
    let outcome = train(model, &train_x, &val_x, &cfg)?;
    let val = evaluate(&outcome.model, &val_x)?;
    let test = evaluate(&outcome.model, &test_x)?;
    Ok(ExperimentResult {
        name: name.to_string(),
        config: cfg,
        vocab,
        outcome,
        val,
        test,
    })
}

/// Contents of `metrics.json`: the test metrics plus training history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub experiment: String,
    #[serde(flatten)]
    pub metrics: Metrics,
    pub validation: Metrics,
    pub best_epoch: usize,
    pub history: Vec<EpochStats>,
    pub config: TrainConfig,
}

impl From<&ExperimentResult> for MetricsReport {
    fn from(r: &ExperimentResult) -> Self {
        Self {
            experiment: r.name.clone(),
            metrics: r.test.clone(),
            validation: r.val.clone(),
            best_epoch: r.outcome.best_epoch,
            history: r.outcome.history.clone(),
            config: r.config.clone(),
        }
    }
}
