//! Statement-level highlights from per-hop attention weights.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{PathSample, Vocab};
use crate::java::MethodAst;
use crate::miner::{extract_ast_paths, AstPath, DEFAULT_MAX_NONTERMINALS};
use crate::model::{Architecture, Model, ModelError};
use crate::prcs::CodeSample;
use crate::trainer::{tensorize_unlabeled, TrainError};

pub const DEFAULT_TOP_K: usize = 20;

#[derive(Debug, Error)]
pub enum LocalizeError {
    #[error("localization needs a multi-head model")]
    NotMultiHead,
    #[error("unknown report format `{0}` (expected text, html or json)")]
    UnknownFormat(String),
    #[error("no method under the source tree matches hop {hop} of sample `{id}`")]
    HopNotFound { id: String, hop: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error("report json: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SkipReason {
    /// More than one candidate line.
    Ambiguous,
    /// No line contains the terminals (e.g. renamed by an obfuscator).
    ObfuscatedAbsent,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MappedLine {
    pub file: String,
    pub line: usize,
    pub statement_text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportEntry {
    pub path_index: usize,
    pub attention_weight: f64,
    pub start_terminal: String,
    pub end_terminal: String,
    pub mapped: Option<MappedLine>,
    pub skip_reason: Option<SkipReason>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HopReport {
    /// 1-based.
    pub hop: usize,
    pub file: String,
    pub method: String,
    pub first_line: usize,
    pub source: String,
    pub entries: Vec<ReportEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalizationReport {
    pub sample_id: String,
    pub probability: f64,
    pub hops: Vec<HopReport>,
}

/// Indices of the `k` largest weights, descending, earlier index first on
/// ties.
pub fn top_k_paths(weights: &[f64], k: usize) -> Vec<usize> {
    top_k_masked(weights, &vec![true; weights.len()], k)
}

/// [`top_k_paths`] restricted to indices with `valid[i]`.
pub fn top_k_masked(weights: &[f64], valid: &[bool], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..weights.len()).filter(|&i| valid.get(i).copied().unwrap_or(false)).collect();
    // stable sort keeps index order among equal weights
    idx.sort_by(|&a, &b| weights[b].total_cmp(&weights[a]));
    idx.truncate(k);
    idx
}

fn is_ident_byte(b: u8) -> bool {
    b.is_ascii_alphanumeric() || b == b'_' || b == b'$'
}

/// `needle` occurs in `line` without touching identifier characters.
pub fn contains_token(line: &str, needle: &str) -> bool {
    if needle.is_empty() {
        return false;
    }
    let bytes = line.as_bytes();
    let n = needle.as_bytes();
    let word_start = is_ident_byte(n[0]);
    let word_end = is_ident_byte(n[n.len() - 1]);
    line.match_indices(needle).any(|(i, _)| {
        let before_ok = !word_start || i == 0 || !is_ident_byte(bytes[i - 1]);
        let j = i + n.len();
        let after_ok = !word_end || j >= bytes.len() || !is_ident_byte(bytes[j]);
        before_ok && after_ok
    })
}

/// Maps a path to the single source line it localizes.
///
/// With spans, the candidates are the lines of the known terminal spans; a
/// path whose terminals sit on different lines spans statements and is
/// ambiguous. Without spans, lines of the hop containing both terminals are
/// candidates, falling back to lines containing either.
pub fn map_path_to_line(path: &AstPath, hop: &MethodAst) -> Result<MappedLine, SkipReason> {
    let mapped = |line: usize| -> Result<MappedLine, SkipReason> {
        let text = hop.line_text(line).ok_or(SkipReason::ObfuscatedAbsent)?;
        Ok(MappedLine {
            file: hop.file.clone(),
            line,
            statement_text: text.trim().to_string(),
        })
    };
    let span_lines: HashSet<usize> = [path.start_span, path.end_span].iter().flatten().map(|s| s.start_line).collect();
    if !span_lines.is_empty() {
        return match span_lines.len() {
            1 => mapped(*span_lines.iter().next().unwrap()),
            _ => Err(SkipReason::Ambiguous),
        };
    }
    let lines: Vec<(usize, &str)> = hop.source_text.lines().enumerate().map(|(i, l)| (hop.first_line + i, l)).collect();
    let has = |l: &str, t: &str| contains_token(l, t);
    let both: Vec<usize> = lines
        .iter()
        .filter(|(_, l)| has(l, &path.start_terminal) && has(l, &path.end_terminal))
        .map(|&(n, _)| n)
        .collect();
    let candidates = if both.is_empty() {
        lines
            .iter()
            .filter(|(_, l)| has(l, &path.start_terminal) || has(l, &path.end_terminal))
            .map(|&(n, _)| n)
            .collect()
    } else {
        both
    };
    match candidates.len() {
        0 => Err(SkipReason::ObfuscatedAbsent),
        1 => mapped(candidates[0]),
        _ => Err(SkipReason::Ambiguous),
    }
}

fn path_key(p: &AstPath) -> (&str, &[String], &str) {
    (&p.start_terminal, &p.nonterminals, &p.end_terminal)
}

/// Finds, for each non-empty hop of a stored sample, the method whose mined
/// paths are exactly the hop's paths, and rebuilds the code sample.
pub fn recover_code_sample(sample: &PathSample, methods: &[MethodAst]) -> Result<CodeSample, LocalizeError> {
    let mined: Vec<Vec<AstPath>> = methods.iter().map(|m| extract_ast_paths(m, DEFAULT_MAX_NONTERMINALS)).collect();
    let mut hops = Vec::new();
    for (h, want) in sample.hops.iter().enumerate() {
        if want.is_empty() {
            break;
        }
        let found = mined.iter().position(|got| {
            got.len() == want.len() && got.iter().zip(want).all(|(a, b)| path_key(a) == path_key(b))
        });
        match found {
            Some(i) => hops.push(methods[i].clone()),
            None => {
                return Err(LocalizeError::HopNotFound {
                    id: sample.id.clone(),
                    hop: h + 1,
                })
            }
        }
    }
    Ok(CodeSample {
        id: sample.id.clone(),
        hops,
        label: sample.label,
        call_edges: Vec::new(),
    })
}

/// Runs the model on `sample`, keeps the top `k` real paths of each present
/// hop and maps them to lines. Only the highest-weight entry per line stays
/// mapped.
pub fn localize(sample: &CodeSample, model: &Model, vocab: &Vocab, seed: u64, k: usize) -> Result<LocalizationReport, LocalizeError> {
    if model.config.architecture != Architecture::MultiHead {
        return Err(LocalizeError::NotMultiHead);
    }
    let paths = sample.to_path_sample();
    let (input, origin) = tensorize_unlabeled(&paths, vocab, &model.config, seed)?;
    let fwd = model.forward_multi_head(&input)?;
    let mut hops = Vec::new();
    for (h, method) in sample.hops.iter().enumerate().take(fwd.hops.len()) {
        let valid: Vec<bool> = origin[h].iter().map(Option::is_some).collect();
        let weights = &fwd.hops[h].attention_weights;
        let mut seen = HashSet::new();
        let mut entries = Vec::new();
        for row in top_k_masked(weights, &valid, k) {
            let (_, idx) = origin[h][row].expect("valid rows have an origin");
            let path = &paths.hops[h][idx];
            let (mapped, skip_reason) = match map_path_to_line(path, method) {
                Ok(m) => {
                    if !seen.insert(m.line) {
                        continue;
                    }
                    (Some(m), None)
                }
                Err(r) => (None, Some(r)),
            };
            entries.push(ReportEntry {
                path_index: idx,
                attention_weight: weights[row],
                start_terminal: path.start_terminal.clone(),
                end_terminal: path.end_terminal.clone(),
                mapped,
                skip_reason,
            });
        }
        hops.push(HopReport {
            hop: h + 1,
            file: method.file.clone(),
            method: method.qualified_name(),
            first_line: method.first_line,
            source: method.source_text.clone(),
            entries,
        });
    }
    Ok(LocalizationReport {
        sample_id: sample.id.clone(),
        probability: fwd.probability,
        hops,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Text,
    Html,
    Json,
}

impl FromStr for ReportFormat {
    type Err = LocalizeError;
    fn from_str(s: &str) -> Result<Self, LocalizeError> {
        match s {
            "text" => Ok(Self::Text),
            "html" => Ok(Self::Html),
            "json" => Ok(Self::Json),
            other => Err(LocalizeError::UnknownFormat(other.to_string())),
        }
    }
}

/// Highest weight per mapped line of a hop.
fn highlights(hop: &HopReport) -> Vec<(usize, f64)> {
    let mut out: Vec<(usize, f64)> = Vec::new();
    for e in &hop.entries {
        if let Some(m) = &e.mapped {
            match out.iter_mut().find(|(l, _)| *l == m.line) {
                Some((_, w)) => *w = w.max(e.attention_weight),
                None => out.push((m.line, e.attention_weight)),
            }
        }
    }
    out
}

fn html_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Text: the hop sources verbatim, blank-line separated, with highlighted
/// lines prefixed `>> [w=<weight>] `. HTML: one `<pre>` per hop with `<mark>`ed
/// lines. JSON: the report itself.
pub fn render_annotated(report: &LocalizationReport, format: ReportFormat) -> Result<Vec<u8>, LocalizeError> {
    match format {
        ReportFormat::Json => {
            let mut s = serde_json::to_string_pretty(report)?;
            s.push('\n');
            Ok(s.into_bytes())
        }
        ReportFormat::Text => {
            let mut out = String::new();
            for (k, hop) in report.hops.iter().enumerate() {
                if k > 0 {
                    out.push_str(if out.ends_with('\n') { "\n" } else { "\n\n" });
                }
                let marks = highlights(hop);
                for (i, l) in hop.source.split_inclusive('\n').enumerate() {
                    if let Some((_, w)) = marks.iter().find(|(n, _)| *n == hop.first_line + i) {
                        let _ = write!(out, ">> [w={w:.4}] ");
                    }
                    out.push_str(l);
                }
            }
            Ok(out.into_bytes())
        }
        ReportFormat::Html => {
            let mut out = String::from("<!DOCTYPE html>\n<html>\n<head><meta charset=\"utf-8\"><title>");
            out += &html_escape(&report.sample_id);
            out += "</title></head>\n<body>\n";
            let _ = writeln!(out, "<h1>{}</h1>", html_escape(&report.sample_id));
            let _ = writeln!(out, "<p>p = {:.4}</p>", report.probability);
            for hop in &report.hops {
                let marks = highlights(hop);
                let _ = writeln!(
                    out,
                    "<h2>hop {}: {} ({})</h2>\n<pre>",
                    hop.hop,
                    html_escape(&hop.method),
                    html_escape(&hop.file)
                );
                for (i, l) in hop.source.lines().enumerate() {
                    match marks.iter().find(|(n, _)| *n == hop.first_line + i) {
                        Some((_, w)) => {
                            let _ = writeln!(out, "<mark title=\"w={w:.4}\">{}</mark>", html_escape(l));
                        }
                        None => {
                            let _ = writeln!(out, "{}", html_escape(l));
                        }
                    }
                }
                out += "</pre>\n";
            }
            out += "</body>\n</html>\n";
            Ok(out.into_bytes())
        }
    }
}

pub fn parse_report(json: &[u8]) -> Result<LocalizationReport, LocalizeError> {
    Ok(serde_json::from_slice(json)?)
}
