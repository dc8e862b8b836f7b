//! Planted-signal datasets: small Java classes whose three-method call
//! chain carries the label in exactly one hop.
//!
//! Positives call `sink.sendLocation(loc)` (the marker) in the marker hop,
//! negatives call `sink.sendStatus(loc)` (the decoy) in the same place. A
//! partner hop gets one of the two calls by a fair coin, independent of the
//! label, so a model that pools all hops together cannot tell a
//! partner-hop marker from a marker-hop one: its best accuracy is 0.75,
//! while reading the marker hop alone gives 1.0.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::dataset::PathSample;
use crate::java::{parse_java_file, ParseError};
use crate::prcs::{ApiSignatureList, CodeSample, PrcsError, Project};

pub const MARKER_TOKEN: &str = "sendLocation";
pub const DECOY_TOKEN: &str = "sendStatus";
pub const SYNTH_API: &str = "android.location.LocationManager.getLastKnownLocation";

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("marker hop must be 1, 2 or 3, got {0}")]
    BadHop(usize),
    #[error("need at least one sample")]
    Empty,
    #[error("positive rate must be in [0, 1], got {0}")]
    BadRate(f64),
    #[error("generated {file} does not parse: {source}")]
    Parse { file: String, source: ParseError },
    #[error("generated sample {0} did not link into three hops")]
    Link(String),
    #[error(transparent)]
    Prcs(#[from] PrcsError),
    #[error("{0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub n: usize,
    /// 1-based hop that carries the label.
    pub marker_hop: usize,
    pub seed: u64,
    pub positive_rate: f64,
    /// Filler statements per method, inclusive range.
    pub filler: (usize, usize),
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n: 1000,
            marker_hop: 2,
            seed: 7,
            positive_rate: 0.5,
            filler: (0, 1),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSample {
    pub code: CodeSample,
    pub label: bool,
    /// 0-based hop index holding the marker-shaped statement that decides
    /// the label, and that statement's line in the file.
    pub marker_hop: usize,
    pub marker_line: usize,
    /// Hop and line of the label-independent marker-or-decoy call, and
    /// whether it is the marker.
    pub partner_hop: usize,
    pub partner_line: usize,
    pub partner_is_marker: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthDataset {
    /// `(relative path, source)` per generated file.
    pub files: Vec<(String, String)>,
    pub samples: Vec<SynthSample>,
}

impl SynthDataset {
    pub fn path_samples(&self) -> Vec<PathSample> {
        self.samples
            .iter()
            .map(|s| {
                let mut p = s.code.to_path_sample();
                p.label = Some(s.label);
                p
            })
            .collect()
    }

    pub fn write_sources(&self, dir: &Path) -> Result<(), SynthError> {
        for (name, src) in &self.files {
            let path = dir.join(name);
            if let Some(parent) = path.parent() {
                std::fs::create_dir_all(parent)?;
            }
            std::fs::write(path, src)?;
        }
        Ok(())
    }
}

const VARS: [&str; 6] = ["count", "total", "index", "value", "offset", "limit"];
const KEYS: [&str; 4] = ["\"user\"", "\"last\"", "\"mode\"", "\"time\""];

fn filler(rng: &mut ChaCha8Rng) -> String {
    let v = VARS[rng.gen_range(0..VARS.len())];
    let w = VARS[rng.gen_range(0..VARS.len())];
    let k = rng.gen_range(1..5);
    match rng.gen_range(0..6) {
        0 => format!("int {v} = {w} + {k};"),
        1 => format!("{v} = compute({w});"),
        2 => format!("log.debug({});", KEYS[rng.gen_range(0..KEYS.len())]),
        3 => format!("if ({v} > {k}) {{ {w}++; }}"),
        4 => format!("cache.put({}, {v});", KEYS[rng.gen_range(0..KEYS.len())]),
        _ => format!("{v} += {k};"),
    }
}

/// Builds `n` classes, parses them and links each API call site into a
/// three-hop chain.
pub fn generate(cfg: &SynthConfig) -> Result<SynthDataset, SynthError> {
    if !(1..=3).contains(&cfg.marker_hop) {
        return Err(SynthError::BadHop(cfg.marker_hop));
    }
    if cfg.n == 0 {
        return Err(SynthError::Empty);
    }
    if !(0.0..=1.0).contains(&cfg.positive_rate) {
        return Err(SynthError::BadRate(cfg.positive_rate));
    }
    let marker = cfg.marker_hop - 1;
    let partner = if marker == 1 { 2 } else { 1 };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    // labels: exact positive count, shuffled
    let n_pos = (cfg.n as f64 * cfg.positive_rate).round() as usize;
    let mut labels: Vec<bool> = (0..cfg.n).map(|i| i < n_pos).collect();
    labels.shuffle(&mut rng);

    let mut files = Vec::with_capacity(cfg.n);
    let mut project = Project::default();
    let mut planted = Vec::with_capacity(cfg.n);
    for (i, &label) in labels.iter().enumerate() {
        let class = format!("S{i:04}");
        let names = [format!("a{i:04}"), format!("b{i:04}"), format!("c{i:04}")];
        let in_marker = if label { MARKER_TOKEN } else { DECOY_TOKEN };
        let partner_is_marker = rng.gen_bool(0.5);
        let in_partner = if partner_is_marker { MARKER_TOKEN } else { DECOY_TOKEN };
        let mut lines = vec![
            "package synth;".to_string(),
            String::new(),
            format!("class {class} {{"),
            "    LocationManager manager;".to_string(),
            "    Sink sink;".to_string(),
        ];
        let mut special_lines = [0usize; 3];
        for hop in 0..3 {
            let mut body: Vec<(String, bool)> = (0..rng.gen_range(cfg.filler.0..=cfg.filler.1))
                .map(|_| (filler(&mut rng), false))
                .collect();
            let special = if hop == marker {
                Some(in_marker)
            } else if hop == partner {
                Some(in_partner)
            } else {
                None
            };
            if let Some(tok) = special {
                let at = rng.gen_range(0..=body.len());
                body.insert(at, (format!("sink.{tok}(loc);"), true));
            }
            let header = if hop == 0 {
                body.insert(0, ("Location loc = manager.getLastKnownLocation(provider);".into(), false));
                format!("    void {}(String provider) {{", names[0])
            } else {
                format!("    void {}(Location loc) {{", names[hop])
            };
            let tail = match hop {
                0 | 1 => format!("{}(loc);", names[hop + 1]),
                _ => format!("d{i:04}(loc);"),
            };
            body.push((tail, false));
            lines.push(String::new());
            lines.push(header);
            for (stmt, is_special) in body {
                lines.push(format!("        {stmt}"));
                if is_special {
                    special_lines[hop] = lines.len();
                }
            }
            lines.push("    }".to_string());
        }
        lines.push("}".to_string());
        let file = format!("synth/{class}.java");
        let src = lines.join("\n") + "\n";
        let parsed = parse_java_file(&src, &file).map_err(|source| SynthError::Parse {
            file: file.clone(),
            source,
        })?;
        project.methods.extend(parsed.methods);
        project.classes.extend(parsed.classes);
        files.push((file, src));
        planted.push((label, special_lines[marker], special_lines[partner], partner_is_marker));
    }

    let apis = ApiSignatureList::new([SYNTH_API])?;
    let codes = project.find_prcs(&apis);
    if codes.len() != cfg.n {
        return Err(SynthError::Link(format!("{} of {} samples found", codes.len(), cfg.n)));
    }
    let mut samples = Vec::with_capacity(cfg.n);
    for (i, code) in codes.into_iter().enumerate() {
        if code.hops.len() != 3 || code.hops[0].file != files[i].0 {
            return Err(SynthError::Link(code.id));
        }
        let (label, marker_line, partner_line, partner_is_marker) = planted[i];
        let mut code = code;
        code.label = Some(label);
        samples.push(SynthSample {
            code,
            label,
            marker_hop: marker,
            marker_line,
            partner_hop: partner,
            partner_line,
            partner_is_marker,
        });
    }
    Ok(SynthDataset { files, samples })
}
