//! Path-attention encoders: a single head over a pooled path set, or three
//! heads (one per call-chain hop) whose attention weights feed a small
//! sigmoid classifier.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use privloc_autograd::{checkpoint, CheckpointError, ParamStore, Tape, Tensor, TensorError, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{DatasetError, TokenizedPath, Vocab, NULL_PATH, PAD, PATH_LEN};

/// Token rows per hop: `hops × num_paths × 11`. A single-head model takes
/// one "hop" holding the pooled paths.
pub type PathMatrix = Vec<Vec<TokenizedPath>>;

pub const DEFAULT_FC_HIDDEN: usize = 128;
pub const DEFAULT_EMBED_SIZE: usize = 128;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: String, got: String },
    #[error("unknown mode `{0}`")]
    UnknownMode(String),
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("model config: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Architecture {
    SingleHead,
    MultiHead,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RnnKind {
    #[serde(rename = "LSTM")]
    Lstm,
    #[serde(rename = "BiLSTM")]
    BiLstm,
}

/// What the classifier sees from each attended hop.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadMode {
    /// The raw attention weight vectors, stacked.
    #[default]
    StackedWeights,
    /// Attention-weighted sums of the path encodings.
    WeightedContext,
}

impl FromStr for HeadMode {
    type Err = ModelError;
    fn from_str(s: &str) -> Result<Self, ModelError> {
        match s {
            "stacked_weights" => Ok(Self::StackedWeights),
            "weighted_context" => Ok(Self::WeightedContext),
            other => Err(ModelError::UnknownMode(other.to_string())),
        }
    }
}

impl fmt::Display for HeadMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::StackedWeights => "stacked_weights",
            Self::WeightedContext => "weighted_context",
        })
    }
}

impl FromStr for RnnKind {
    type Err = ModelError;
    fn from_str(s: &str) -> Result<Self, ModelError> {
        match s.to_ascii_lowercase().as_str() {
            "lstm" => Ok(Self::Lstm),
            "bilstm" | "bi-lstm" | "bi_lstm" => Ok(Self::BiLstm),
            _ => Err(ModelError::UnknownMode(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub architecture: Architecture,
    pub tokenize_nonterminals: bool,
    pub use_attention: bool,
    pub rnn_kind: RnnKind,
    /// Per hop for multi-head, pooled total for single-head.
    pub num_paths: usize,
    #[serde(default)]
    pub head_mode: HeadMode,
    pub fc_hidden: usize,
    pub embed_size: usize,
    pub vocab_size: usize,
}

impl ModelConfig {
    pub fn num_heads(&self) -> usize {
        match self.architecture {
            Architecture::SingleHead => 1,
            Architecture::MultiHead => 3,
        }
    }

    /// Width of the first classifier layer.
    pub fn fc_input(&self) -> usize {
        let per_head = if !self.use_attention {
            self.embed_size
        } else {
            match self.head_mode {
                HeadMode::StackedWeights => self.num_paths,
                HeadMode::WeightedContext => self.embed_size,
            }
        };
        per_head * self.num_heads()
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: &str| Err(ModelError::InvalidConfig(m.to_string()));
        if self.num_paths == 0 {
            return bad("num_paths must be at least 1");
        }
        if self.embed_size == 0 || self.fc_hidden == 0 {
            return bad("embed_size and fc_hidden must be at least 1");
        }
        if self.vocab_size < 2 {
            return bad("vocab_size must cover PAD and UNK");
        }
        if self.architecture == Architecture::MultiHead && !self.use_attention {
            return bad("the multi-head model needs attention");
        }
        Ok(())
    }
}

/// One hop after encoding.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedHop {
    /// `num_paths × embed_size`; null rows are zero.
    pub path_encodings: Tensor,
    /// Attention weights, or the mean-pooling weights when attention is off.
    pub attention_weights: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Forward {
    pub probability: f64,
    pub hops: Vec<EncodedHop>,
}

/// Graph handles for one forward pass.
#[derive(Debug, Clone)]
pub struct GraphOutput {
    /// `1 × 1` probability.
    pub probability: Var,
    /// Per head: `num_paths × embed_size` encodings and `1 × num_paths` weights.
    pub encodings: Vec<Var>,
    pub weights: Vec<Var>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamStore,
}

fn rnn_dirs(kind: RnnKind) -> &'static [&'static str] {
    match kind {
        RnnKind::Lstm => &[""],
        RnnKind::BiLstm => &["fwd.", "bwd."],
    }
}

impl Model {
    /// Seeded uniform initialization; the embedding table gets a zero PAD row.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (v, e) = (config.vocab_size, config.embed_size);
        let mut params = ParamStore::new();
        let mut embed = Tensor::uniform(&[v, e], 1.0 / (e as f64).sqrt(), &mut rng);
        embed.data_mut()[..e].fill(0.0);
        params.insert("embed", embed);
        for head in 1..=config.num_heads() {
            let dirs = rnn_dirs(config.rnn_kind);
            for layer in 1..=2 {
                let fan_in = if layer == 1 { e } else { e * dirs.len() };
                for d in dirs {
                    let p = format!("head{head}.rnn.layer{layer}.{d}");
                    params.insert(format!("{p}w_ih"), Tensor::uniform_fan_in(&[4 * e, fan_in], e, &mut rng));
                    params.insert(format!("{p}w_hh"), Tensor::uniform_fan_in(&[4 * e, e], e, &mut rng));
                    params.insert(format!("{p}b"), Tensor::uniform_fan_in(&[4 * e], e, &mut rng));
                }
            }
            if config.rnn_kind == RnnKind::BiLstm {
                let p = format!("head{head}.rnn.layer2.proj.");
                params.insert(format!("{p}w"), Tensor::uniform_fan_in(&[e, 2 * e], 2 * e, &mut rng));
                params.insert(format!("{p}b"), Tensor::uniform_fan_in(&[e], 2 * e, &mut rng));
            }
            if config.use_attention {
                params.insert(format!("head{head}.attn.W"), Tensor::uniform_fan_in(&[e, e], e, &mut rng));
                params.insert(format!("head{head}.attn.v"), Tensor::uniform_fan_in(&[e], e, &mut rng));
            }
        }
        let (fi, fh) = (config.fc_input(), config.fc_hidden);
        params.insert("fc.1.w", Tensor::uniform_fan_in(&[fh, fi], fi, &mut rng));
        params.insert("fc.1.b", Tensor::uniform_fan_in(&[fh], fi, &mut rng));
        params.insert("fc.2.w", Tensor::uniform_fan_in(&[1, fh], fh, &mut rng));
        params.insert("fc.2.b", Tensor::uniform_fan_in(&[1], fh, &mut rng));
        Ok(Self { config, params })
    }

    /// Like [`Model::new`] but starting from a pretrained embedding table.
    pub fn with_embeddings(config: ModelConfig, embed: Tensor, seed: u64) -> Result<Self, ModelError> {
        let want = [config.vocab_size, config.embed_size];
        if embed.shape() != want {
            return Err(ModelError::ShapeMismatch {
                expected: format!("{want:?}"),
                got: format!("{:?}", embed.shape()),
            });
        }
        let mut m = Self::new(config, seed)?;
        m.params.insert("embed", embed);
        m.params.get_mut("embed")?.data_mut()[..m.config.embed_size].fill(0.0);
        Ok(m)
    }

    pub fn check_input(&self, input: &[Vec<TokenizedPath>]) -> Result<(), ModelError> {
        let heads = self.config.num_heads();
        if input.len() != heads {
            return Err(ModelError::ShapeMismatch {
                expected: format!("{heads} hops"),
                got: format!("{} hops", input.len()),
            });
        }
        for hop in input {
            if hop.len() != self.config.num_paths {
                return Err(ModelError::ShapeMismatch {
                    expected: format!("{} × {PATH_LEN}", self.config.num_paths),
                    got: format!("{} × {PATH_LEN}", hop.len()),
                });
            }
            if let Some(&bad) = hop.iter().flatten().find(|&&t| t as usize >= self.config.vocab_size) {
                return Err(ModelError::ShapeMismatch {
                    expected: format!("token ids < {}", self.config.vocab_size),
                    got: format!("id {bad}"),
                });
            }
        }
        Ok(())
    }

    /// Builds the forward graph. `vars` are the parameters in store order.
    pub fn build_graph(&self, tape: &mut Tape, vars: &[Var], input: &[Vec<TokenizedPath>]) -> Result<GraphOutput, ModelError> {
        self.check_input(input)?;
        if vars.len() != self.params.len() {
            return Err(ModelError::ShapeMismatch {
                expected: format!("{} parameter handles", self.params.len()),
                got: vars.len().to_string(),
            });
        }
        let p = |name: &str| -> Result<Var, ModelError> {
            self.params
                .position(name)
                .map(|i| vars[i])
                .ok_or_else(|| ModelError::Tensor(TensorError::UnknownParam(name.to_string())))
        };
        let mut encodings = Vec::new();
        let mut weights = Vec::new();
        let mut features = Vec::new();
        for (h, rows) in input.iter().enumerate() {
            let head = h + 1;
            let (enc, w) = self.encode_hop_graph(tape, &p, head, rows)?;
            let feature = if !self.config.use_attention || self.config.head_mode == HeadMode::WeightedContext {
                tape.matmul(w, enc)?
            } else {
                w
            };
            encodings.push(enc);
            weights.push(w);
            features.push(feature);
        }
        let x = if features.len() == 1 { features[0] } else { tape.concat(&features)? };
        let hidden = tape.linear(x, p("fc.1.w")?, Some(p("fc.1.b")?))?;
        let hidden = tape.tanh(hidden)?;
        let z = tape.linear(hidden, p("fc.2.w")?, Some(p("fc.2.b")?))?;
        let probability = tape.sigmoid(z)?;
        Ok(GraphOutput {
            probability,
            encodings,
            weights,
        })
    }

    /// Encodes one hop: `(num_paths × E encodings, 1 × num_paths weights)`.
    /// Null rows never enter the RNN; they encode to zero and get no weight.
    fn encode_hop_graph(
        &self,
        tape: &mut Tape,
        p: &dyn Fn(&str) -> Result<Var, ModelError>,
        head: usize,
        rows: &[TokenizedPath],
    ) -> Result<(Var, Var), ModelError> {
        let n = rows.len();
        let e = self.config.embed_size;
        let real: Vec<usize> = (0..n).filter(|&i| rows[i] != NULL_PATH).collect();
        if real.is_empty() {
            let enc = tape.constant(Tensor::zeros(&[n, e]))?;
            let w = tape.constant(Tensor::full(&[1, n], 1.0 / n as f64))?;
            return Ok((enc, w));
        }
        let r = real.len();
        let enc_real = self.rnn_graph(tape, p, head, &real.iter().map(|&i| rows[i]).collect::<Vec<_>>())?;

        // scatter real rows back into their positions (n × r selector)
        let dense = r == n;
        let select = if dense {
            None
        } else {
            let mut s = Tensor::zeros(&[n, r]);
            for (k, &i) in real.iter().enumerate() {
                s.data_mut()[i * r + k] = 1.0;
            }
            Some(s)
        };
        let enc = match &select {
            None => enc_real,
            Some(s) => {
                let s = tape.constant(s.clone())?;
                tape.matmul(s, enc_real)?
            }
        };

        let w = if self.config.use_attention {
            let u = tape.linear(enc_real, p(&format!("head{head}.attn.W"))?, None)?;
            let u = tape.tanh(u)?;
            let scores = tape.linear(u, p(&format!("head{head}.attn.v"))?, None)?;
            let scores = tape.transpose(scores)?;
            let scores = match &select {
                None => scores,
                Some(s) => {
                    // 1 × r times r × n
                    let st = tape.constant(transpose(s))?;
                    tape.matmul(scores, st)?
                }
            };
            let valid: Vec<bool> = rows.iter().map(|row| *row != NULL_PATH).collect();
            tape.masked_softmax(scores, &valid)?
        } else {
            let mut w = vec![0.0; n];
            for &i in &real {
                w[i] = 1.0 / r as f64;
            }
            tape.constant(Tensor::row(w))?
        };
        Ok((enc, w))
    }

    /// Runs the 2-layer recurrent encoder over `paths` (batched as rows) and
    /// returns the `paths.len() × E` final states.
    fn rnn_graph(
        &self,
        tape: &mut Tape,
        p: &dyn Fn(&str) -> Result<Var, ModelError>,
        head: usize,
        paths: &[TokenizedPath],
    ) -> Result<Var, ModelError> {
        let (fwd, bwd) = self.rnn_directions(tape, p, head, paths)?;
        match bwd {
            None => Ok(fwd),
            Some(bwd) => {
                let both = tape.concat(&[fwd, bwd])?;
                let pre = format!("head{head}.rnn.layer2.proj.");
                Ok(tape.linear(both, p(&format!("{pre}w"))?, Some(p(&format!("{pre}b"))?))?)
            }
        }
    }

    /// Top-layer final states per direction (backward is `None` for LSTM).
    fn rnn_directions(
        &self,
        tape: &mut Tape,
        p: &dyn Fn(&str) -> Result<Var, ModelError>,
        head: usize,
        paths: &[TokenizedPath],
    ) -> Result<(Var, Option<Var>), ModelError> {
        let b = paths.len();
        let e = self.config.embed_size;
        let table = p("embed")?;
        let mut seq = Vec::with_capacity(PATH_LEN);
        for t in 0..PATH_LEN {
            let ids: Vec<usize> = paths.iter().map(|row| row[t] as usize).collect();
            seq.push(tape.embedding(table, &ids)?);
        }
        let zero = tape.constant(Tensor::zeros(&[b, e]))?;
        let run = |tape: &mut Tape, prefix: &str, xs: &[Var], reverse: bool| -> Result<Vec<Var>, ModelError> {
            let (w_ih, w_hh, bias) = (
                p(&format!("{prefix}w_ih"))?,
                p(&format!("{prefix}w_hh"))?,
                p(&format!("{prefix}b"))?,
            );
            let mut out = vec![zero; xs.len()];
            let (mut h, mut c) = (zero, zero);
            let order: Vec<usize> = if reverse { (0..xs.len()).rev().collect() } else { (0..xs.len()).collect() };
            for t in order {
                (h, c) = tape.lstm_cell(xs[t], h, c, w_ih, w_hh, bias)?;
                out[t] = h;
            }
            Ok(out)
        };
        match self.config.rnn_kind {
            RnnKind::Lstm => {
                let l1 = run(tape, &format!("head{head}.rnn.layer1."), &seq, false)?;
                let l2 = run(tape, &format!("head{head}.rnn.layer2."), &l1, false)?;
                Ok((l2[PATH_LEN - 1], None))
            }
            RnnKind::BiLstm => {
                let f1 = run(tape, &format!("head{head}.rnn.layer1.fwd."), &seq, false)?;
                let b1 = run(tape, &format!("head{head}.rnn.layer1.bwd."), &seq, true)?;
                let mut l1 = Vec::with_capacity(PATH_LEN);
                for t in 0..PATH_LEN {
                    l1.push(tape.concat(&[f1[t], b1[t]])?);
                }
                let f2 = run(tape, &format!("head{head}.rnn.layer2.fwd."), &l1, false)?;
                let b2 = run(tape, &format!("head{head}.rnn.layer2.bwd."), &l1, true)?;
                Ok((f2[PATH_LEN - 1], Some(b2[0])))
            }
        }
    }

    /// Inference-only forward pass.
    pub fn forward(&self, input: &[Vec<TokenizedPath>]) -> Result<Forward, ModelError> {
        let mut tape = Tape::new();
        let vars = self
            .params
            .tensors()
            .iter()
            .map(|t| tape.constant(t.clone()))
            .collect::<Result<Vec<_>, _>>()?;
        let g = self.build_graph(&mut tape, &vars, input)?;
        let hops = g
            .encodings
            .iter()
            .zip(&g.weights)
            .map(|(&enc, &w)| EncodedHop {
                path_encodings: tape.value(enc).clone(),
                attention_weights: tape.value(w).data().to_vec(),
            })
            .collect();
        Ok(Forward {
            probability: tape.value(g.probability).data()[0],
            hops,
        })
    }

    /// Three hops of `num_paths` rows each.
    pub fn forward_multi_head(&self, sample: &[Vec<TokenizedPath>]) -> Result<Forward, ModelError> {
        if self.config.architecture != Architecture::MultiHead {
            return Err(ModelError::InvalidConfig("forward_multi_head on a single-head model".into()));
        }
        self.forward(sample)
    }

    /// One pooled set of `num_paths` rows.
    pub fn forward_single_head(&self, pooled: &[TokenizedPath]) -> Result<f64, ModelError> {
        if self.config.architecture != Architecture::SingleHead {
            return Err(ModelError::InvalidConfig("forward_single_head on a multi-head model".into()));
        }
        Ok(self.forward(&[pooled.to_vec()])?.probability)
    }

    /// Final top-layer states of the two directions of a Bi-LSTM head, for
    /// inspecting direction wiring. `None` for a plain LSTM.
    pub fn bilstm_final_states(&self, head: usize, paths: &[TokenizedPath]) -> Result<Option<(Tensor, Tensor)>, ModelError> {
        if self.config.rnn_kind != RnnKind::BiLstm {
            return Ok(None);
        }
        let mut tape = Tape::new();
        let vars = self
            .params
            .tensors()
            .iter()
            .map(|t| tape.constant(t.clone()))
            .collect::<Result<Vec<_>, _>>()?;
        let p = |name: &str| -> Result<Var, ModelError> {
            self.params
                .position(name)
                .map(|i| vars[i])
                .ok_or_else(|| ModelError::Tensor(TensorError::UnknownParam(name.to_string())))
        };
        let (f, b) = self.rnn_directions(&mut tape, &p, head, paths)?;
        let b = b.expect("bi-lstm has a backward direction");
        Ok(Some((tape.value(f).clone(), tape.value(b).clone())))
    }

    /// Writes the PRIVLOC1 checkpoint plus `<path>.json` (config) and, when
    /// given, `<path>.vocab.tsv`.
    pub fn save(&self, path: &Path, vocab: Option<&Vocab>) -> Result<(), ModelError> {
        checkpoint::save(&self.params, path)?;
        let json = serde_json::to_string_pretty(&self.config)?;
        let cfg = sidecar(path, "json");
        std::fs::write(&cfg, json + "\n").map_err(|source| ModelError::Io { path: cfg, source })?;
        if let Some(v) = vocab {
            v.save(&sidecar(path, "vocab.tsv"))?;
        }
        Ok(())
    }

    /// Loads a checkpoint and its config sidecar, checking every expected
    /// parameter is present with the right shape.
    pub fn load(path: &Path) -> Result<Self, ModelError> {
        let cfg = sidecar(path, "json");
        let text = std::fs::read_to_string(&cfg).map_err(|source| ModelError::Io { path: cfg, source })?;
        let config: ModelConfig = serde_json::from_str(&text)?;
        let params = checkpoint::load(path)?;
        let reference = Self::new(config.clone(), 0)?;
        if params.names() != reference.params.names() {
            return Err(ModelError::ShapeMismatch {
                expected: format!("{:?}", reference.params.names()),
                got: format!("{:?}", params.names()),
            });
        }
        for (name, t) in reference.params.iter() {
            let got = params.get(name)?;
            if got.shape() != t.shape() {
                return Err(ModelError::ShapeMismatch {
                    expected: format!("{name} {:?}", t.shape()),
                    got: format!("{:?}", got.shape()),
                });
            }
        }
        Ok(Self { config, params })
    }

    /// The vocab saved next to a checkpoint.
    pub fn load_vocab(path: &Path) -> Result<Vocab, ModelError> {
        Ok(Vocab::load(&sidecar(path, "vocab.tsv"))?)
    }
}

/// `model.bin` → `model.bin.<ext>`.
pub fn sidecar(path: &Path, ext: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".");
    s.push(ext);
    PathBuf::from(s)
}

fn transpose(t: &Tensor) -> Tensor {
    let (r, c) = t.dims2().expect("matrix");
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        for j in 0..c {
            out[j * r + i] = t.get2(i, j);
        }
    }
    Tensor::matrix(c, r, out).expect("sizes agree")
}

/// True if `row` is a null (padding) path.
pub fn is_null(row: &TokenizedPath) -> bool {
    row.iter().all(|&t| t == PAD)
}

/// Layout-valid random path over ids `1..vocab`.
fn random_path(rng: &mut ChaCha8Rng, vocab: usize) -> TokenizedPath {
    use rand::Rng;
    let mut p = NULL_PATH;
    p[0] = rng.gen_range(1..vocab) as u32;
    for slot in p.iter_mut().take(1 + rng.gen_range(1..=PATH_LEN - 3)).skip(1) {
        *slot = rng.gen_range(1..vocab) as u32;
    }
    p[PATH_LEN - 2] = rng.gen_range(1..vocab) as u32;
    p
}

/// Grad-checks the whole forward pass plus BCE for a freshly initialized
/// model of `config`, on a random input with partly null hops.
pub fn full_graph_check(config: &ModelConfig, seed: u64) -> Result<privloc_autograd::GradCheckReport, ModelError> {
    use rand::Rng;
    let m = Model::new(config.clone(), seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6772_6164);
    let n = config.num_paths;
    let input: PathMatrix = (0..config.num_heads())
        .map(|_| {
            let real = rng.gen_range(1..=n);
            let mut rows: Vec<TokenizedPath> = (0..real).map(|_| random_path(&mut rng, config.vocab_size)).collect();
            rows.resize(n, NULL_PATH);
            rows
        })
        .collect();
    let label = f64::from(u8::from(rng.gen_bool(0.5)));
    m.check_input(&input)?;
    let report = privloc_autograd::grad_check_report(
        |tape: &mut Tape, vars| {
            let g = m.build_graph(tape, vars, &input).map_err(|e| match e {
                ModelError::Tensor(t) => t,
                other => unreachable!("input was validated: {other}"),
            })?;
            tape.bce_loss(g.probability, &[label])
        },
        m.params.tensors(),
        privloc_autograd::SUITE_EPS,
    )?;
    Ok(report)
}
