//! Path tokenization, vocabularies, per-hop sampling, dataset splits,
//! skip-gram embedding pretraining and the `.c2s` text format.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use privloc_autograd::Tensor;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::miner::{extract_ast_paths, AstPath, DEFAULT_MAX_NONTERMINALS};
use crate::prcs::CodeSample;

pub const PATH_LEN: usize = 11;
pub const MAX_NONTERMINALS: usize = 8;
pub const PAD: u32 = 0;
pub const UNK: u32 = 1;
pub const PAD_TOKEN: &str = "<pad>";
pub const UNK_TOKEN: &str = "<unk>";
pub const DEFAULT_MIN_COUNT: u64 = 2;
pub const NUM_HOPS: usize = 3;

/// Slot 1 = start terminal, 2..=9 = non-terminals (PAD-filled), 10 = end
/// terminal, 11 = PAD.
pub type TokenizedPath = [u32; PATH_LEN];

pub const NULL_PATH: TokenizedPath = [PAD; PATH_LEN];

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("path has {0} non-terminals (max {MAX_NONTERMINALS})")]
    PathTooLong(usize),
    #[error("need at least 10 samples to split, got {0}")]
    TooFewSamples(usize),
    #[error("line {line}: {reason}")]
    Format { line: usize, reason: String },
    #[error("{0}")]
    Io(#[from] std::io::Error),
}

/// A labelled sample as stored on disk: mined paths for each of the three
/// hop slots (an empty slot is an absent hop).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PathSample {
    pub id: String,
    pub label: Option<bool>,
    pub hops: Vec<Vec<AstPath>>,
}

impl PathSample {
    pub fn from_code_sample(sample: &CodeSample) -> Self {
        let mut hops: Vec<Vec<AstPath>> = sample
            .hops
            .iter()
            .take(NUM_HOPS)
            .map(|m| extract_ast_paths(m, DEFAULT_MAX_NONTERMINALS))
            .collect();
        hops.resize(NUM_HOPS, Vec::new());
        Self {
            id: sample.id.clone(),
            label: sample.label,
            hops,
        }
    }

    pub fn present_hops(&self) -> usize {
        self.hops.iter().filter(|h| !h.is_empty()).count()
    }
}

impl CodeSample {
    pub fn to_path_sample(&self) -> PathSample {
        PathSample::from_code_sample(self)
    }
}

// ---- vocabulary ----------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    counts: Vec<u64>,
    index: HashMap<String, u32>,
}

impl Vocab {
    /// Tokens seen at least `min_count` times, most frequent first (ties by
    /// token text), after the reserved PAD and UNK ids.
    pub fn build<'a>(tokens: impl IntoIterator<Item = &'a str>, min_count: u64) -> Self {
        let mut freq: HashMap<&str, u64> = HashMap::new();
        for t in tokens {
            *freq.entry(t).or_default() += 1;
        }
        let mut kept: Vec<(&str, u64)> = freq
            .into_iter()
            .filter(|(t, c)| *c >= min_count && *t != PAD_TOKEN && *t != UNK_TOKEN)
            .collect();
        kept.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
        let mut tokens = vec![PAD_TOKEN.to_string(), UNK_TOKEN.to_string()];
        let mut counts = vec![0, 0];
        for (t, c) in kept {
            tokens.push(t.to_string());
            counts.push(c);
        }
        Self::from_parts(tokens, counts)
    }

    /// Vocabulary over the tokens `tokenize_path` would look up.
    pub fn from_samples<'a>(
        samples: impl IntoIterator<Item = &'a PathSample>,
        tokenize_nonterminals: bool,
        min_count: u64,
    ) -> Self {
        let mut all: Vec<String> = Vec::new();
        for s in samples {
            for p in s.hops.iter().flatten() {
                all.push(p.start_terminal.clone());
                if tokenize_nonterminals {
                    all.extend(p.nonterminals.iter().cloned());
                } else {
                    all.push(p.nonterminals.join("|"));
                }
                all.push(p.end_terminal.clone());
            }
        }
        Self::build(all.iter().map(String::as_str), min_count)
    }

    fn from_parts(tokens: Vec<String>, counts: Vec<u64>) -> Self {
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        Self {
            tokens,
            counts,
            index,
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.len() <= 2
    }

    pub fn id(&self, token: &str) -> u32 {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn count(&self, id: u32) -> u64 {
        self.counts.get(id as usize).copied().unwrap_or(0)
    }

    /// `token<TAB>id<TAB>count` per line, tokens escaped as in `.c2s`.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for (i, (t, c)) in self.tokens.iter().zip(&self.counts).enumerate() {
            let _ = writeln!(out, "{}\t{i}\t{c}", escape(t));
        }
        out
    }

    pub fn from_tsv(text: &str) -> Result<Self, DatasetError> {
        let mut tokens = Vec::new();
        let mut counts = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let bad = |reason: &str| DatasetError::Format {
                line: n + 1,
                reason: reason.to_string(),
            };
            let fields: Vec<_> = line.split('\t').collect();
            if fields.len() != 3 {
                return Err(bad("expected token<TAB>id<TAB>count"));
            }
            let id: usize = fields[1].parse().map_err(|_| bad("bad id"))?;
            if id != tokens.len() {
                return Err(bad("ids must be consecutive from 0"));
            }
            tokens.push(unescape(fields[0]).map_err(|r| bad(&r))?);
            counts.push(fields[2].parse().map_err(|_| bad("bad count"))?);
        }
        if tokens.len() < 2 || tokens[0] != PAD_TOKEN || tokens[1] != UNK_TOKEN {
            return Err(DatasetError::Format {
                line: 1,
                reason: "vocabulary must start with <pad> and <unk>".into(),
            });
        }
        Ok(Self::from_parts(tokens, counts))
    }

    pub fn save(&self, path: &Path) -> Result<(), DatasetError> {
        std::fs::write(path, self.to_tsv())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, DatasetError> {
        Self::from_tsv(&std::fs::read_to_string(path)?)
    }
}

// ---- tokenization & sampling ---------------------------------------------

pub fn tokenize_path(
    path: &AstPath,
    vocab: &Vocab,
    tokenize_nonterminals: bool,
) -> Result<TokenizedPath, DatasetError> {
    let k = path.nonterminals.len();
    if k > MAX_NONTERMINALS {
        return Err(DatasetError::PathTooLong(k));
    }
    let mut slots = NULL_PATH;
    slots[0] = vocab.id(&path.start_terminal);
    if tokenize_nonterminals {
        for (i, nt) in path.nonterminals.iter().enumerate() {
            slots[1 + i] = vocab.id(nt);
        }
    } else if k > 0 {
        slots[1] = vocab.id(&path.nonterminals.join("|"));
    }
    slots[9] = vocab.id(&path.end_terminal);
    Ok(slots)
}

/// Indices of a uniform sample without replacement of `min(n, len)` items,
/// in sampled order.
pub fn sample_indices(len: usize, n: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx: Vec<usize> = (0..len).collect();
    let (chosen, _) = idx.partial_shuffle(&mut rng, n.min(len));
    chosen.to_vec()
}

/// `n` rows: sampled paths followed by null rows.
pub fn sample_paths(hop_paths: &[TokenizedPath], n: usize, seed: u64) -> Vec<TokenizedPath> {
    let mut rows: Vec<TokenizedPath> = sample_indices(hop_paths.len(), n, seed)
        .into_iter()
        .map(|i| hop_paths[i])
        .collect();
    rows.resize(n, NULL_PATH);
    rows
}

/// Seed for one (sample, hop) draw, derived from the run seed.
pub fn derive_seed(seed: u64, a: u64, b: u64) -> u64 {
    // splitmix64 finalizer over a simple combination
    let mut z = seed
        .wrapping_add(a.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(b.wrapping_mul(0xC2B2_AE3D_27D4_EB4F));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seeded shuffle, then ⌊0.8n⌋ / ⌊0.1n⌋ / remainder.
pub fn split_dataset<T: Clone>(samples: &[T], seed: u64) -> Result<(Vec<T>, Vec<T>, Vec<T>), DatasetError> {
    let n = samples.len();
    if n < 10 {
        return Err(DatasetError::TooFewSamples(n));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = n * 8 / 10;
    let n_val = n / 10;
    let pick = |r: &[usize]| r.iter().map(|&i| samples[i].clone()).collect::<Vec<_>>();
    Ok((
        pick(&order[..n_train]),
        pick(&order[n_train..n_train + n_val]),
        pick(&order[n_train + n_val..]),
    ))
}

// ---- embedding pretraining -------------------------------------------------

pub const SGNS_NEGATIVES: usize = 5;
const SGNS_LR: f64 = 0.025;

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Skip-gram with negative sampling where each token's context is every
/// other non-PAD token of the same path. Returns the input vectors; row 0
/// (PAD) is zero.
pub fn pretrain_embeddings(
    corpus: &[TokenizedPath],
    vocab_size: usize,
    embed_size: usize,
    epochs: usize,
    seed: u64,
) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bound = 0.5 / embed_size as f64;
    let mut input: Vec<f64> = (0..vocab_size * embed_size)
        .map(|_| rng.gen_range(-bound..bound))
        .collect();
    input[..embed_size].fill(0.0);
    if epochs == 0 || corpus.is_empty() {
        return Tensor::new(vec![vocab_size, embed_size], input).expect("sized above");
    }
    let mut output = vec![0.0; vocab_size * embed_size];

    // unigram^0.75 table for negatives
    let mut freq = vec![0.0f64; vocab_size];
    for p in corpus {
        for &t in p.iter().filter(|&&t| t != PAD) {
            freq[t as usize] += 1.0;
        }
    }
    let mut cdf = Vec::with_capacity(vocab_size);
    let mut acc = 0.0;
    for f in &freq {
        acc += f.powf(0.75);
        cdf.push(acc);
    }
    let draw = |rng: &mut ChaCha8Rng| {
        let u = rng.gen::<f64>() * acc;
        cdf.partition_point(|&c| c <= u).min(vocab_size - 1)
    };

    let mut grad_in = vec![0.0; embed_size];
    for _ in 0..epochs {
        for path in corpus {
            let toks: Vec<usize> = path.iter().filter(|&&t| t != PAD).map(|&t| t as usize).collect();
            for (ci, &center) in toks.iter().enumerate() {
                for (oi, &ctx) in toks.iter().enumerate() {
                    if oi == ci {
                        continue;
                    }
                    grad_in.fill(0.0);
                    let targets = std::iter::once((ctx, 1.0))
                        .chain((0..SGNS_NEGATIVES).map(|_| (draw(&mut rng), 0.0)))
                        .collect::<Vec<_>>();
                    for (target, label) in targets {
                        if label == 0.0 && (target == ctx || target == PAD as usize) {
                            continue;
                        }
                        let (ci_row, to_row) = (center * embed_size, target * embed_size);
                        let dot: f64 = (0..embed_size)
                            .map(|k| input[ci_row + k] * output[to_row + k])
                            .sum();
                        let g = SGNS_LR * (label - sigmoid(dot));
                        for k in 0..embed_size {
                            grad_in[k] += g * output[to_row + k];
                            output[to_row + k] += g * input[ci_row + k];
                        }
                    }
                    let row = center * embed_size;
                    for k in 0..embed_size {
                        input[row + k] += grad_in[k];
                    }
                }
            }
        }
    }
    input[..embed_size].fill(0.0);
    Tensor::new(vec![vocab_size, embed_size], input).expect("sized above")
}

// ---- .c2s format -------------------------------------------------------------

/// Percent-escapes the characters that delimit `.c2s` fields.
pub fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '%' => out.push_str("%25"),
            ',' => out.push_str("%2C"),
            '|' => out.push_str("%7C"),
            ' ' => out.push_str("%20"),
            '\t' => out.push_str("%09"),
            '\n' => out.push_str("%0A"),
            '\r' => out.push_str("%0D"),
            c => out.push(c),
        }
    }
    out
}

pub fn unescape(s: &str) -> Result<String, String> {
    if !s.contains('%') {
        return Ok(s.to_string());
    }
    let mut out = String::with_capacity(s.len());
    let mut chars = s.chars();
    while let Some(c) = chars.next() {
        if c != '%' {
            out.push(c);
            continue;
        }
        let hex: String = chars.by_ref().take(2).collect();
        let code = u8::from_str_radix(&hex, 16).map_err(|_| format!("bad escape %{hex}"))?;
        out.push(code as char);
    }
    Ok(out)
}

fn format_path(p: &AstPath) -> String {
    let nts: Vec<String> = p.nonterminals.iter().map(|n| escape(n)).collect();
    format!("{},{},{}", escape(&p.start_terminal), nts.join("|"), escape(&p.end_terminal))
}

fn parse_path(s: &str) -> Result<AstPath, String> {
    let parts: Vec<_> = s.split(',').collect();
    if parts.len() != 3 {
        return Err(format!("path `{s}` must be start,nonterminals,end"));
    }
    let start = unescape(parts[0])?;
    let end = unescape(parts[2])?;
    if start.is_empty() || end.is_empty() {
        return Err(format!("path `{s}` has an empty terminal"));
    }
    let nts = parts[1]
        .split('|')
        .map(unescape)
        .collect::<Result<Vec<_>, _>>()?;
    if parts[1].is_empty() || nts.iter().any(String::is_empty) {
        return Err(format!("path `{s}` has an empty non-terminal"));
    }
    if nts.len() > MAX_NONTERMINALS {
        return Err(format!("path `{s}` has {} non-terminals (max {MAX_NONTERMINALS})", nts.len()));
    }
    Ok(AstPath::new(start, nts, end))
}

/// One line per sample; spans are not stored.
pub fn format_c2s(samples: &[PathSample]) -> String {
    let mut out = String::new();
    for s in samples {
        let label = match s.label {
            Some(true) => "1",
            Some(false) => "0",
            None => "",
        };
        let _ = write!(out, "{}\t{label}", escape(&s.id));
        for h in 0..NUM_HOPS {
            let hop: Vec<String> = s.hops.get(h).map(|ps| ps.iter().map(format_path).collect()).unwrap_or_default();
            let _ = write!(out, "\t{}", hop.join(" "));
        }
        out.push('\n');
    }
    out
}

pub fn parse_c2s(text: &str) -> Result<Vec<PathSample>, DatasetError> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let bad = |reason: String| DatasetError::Format { line: n + 1, reason };
        if line.is_empty() {
            continue;
        }
        let fields: Vec<_> = line.split('\t').collect();
        if fields.len() != 2 + NUM_HOPS {
            return Err(bad(format!("expected {} tab-separated fields, got {}", 2 + NUM_HOPS, fields.len())));
        }
        let label = match fields[1] {
            "1" => Some(true),
            "0" => Some(false),
            "" => None,
            other => return Err(bad(format!("label must be 1, 0 or empty, got `{other}`"))),
        };
        let mut hops = Vec::with_capacity(NUM_HOPS);
        for field in &fields[2..] {
            let hop = if field.is_empty() {
                Vec::new()
            } else {
                field
                    .split(' ')
                    .map(parse_path)
                    .collect::<Result<Vec<_>, _>>()
                    .map_err(bad)?
            };
            hops.push(hop);
        }
        out.push(PathSample {
            id: unescape(fields[0]).map_err(bad)?,
            label,
            hops,
        });
    }
    Ok(out)
}

pub fn save_c2s(samples: &[PathSample], path: &Path) -> Result<(), DatasetError> {
    std::fs::write(path, format_c2s(samples))?;
    Ok(())
}

pub fn load_c2s(path: &Path) -> Result<Vec<PathSample>, DatasetError> {
    parse_c2s(&std::fs::read_to_string(path)?)
}
