//! Inter-rater agreement: Fleiss's kappa, nominal Krippendorff's alpha, and
//! best/majority-case percentages for yes/no annotation studies.

use std::collections::{BTreeMap, HashMap};
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum AgreementError {
    #[error("need at least 2 raters, got {0}")]
    TooFewRaters(usize),
    #[error("malformed rating matrix: {0}")]
    Ragged(String),
    #[error("no items to rate")]
    NoItems,
    #[error("item `{item}` has no rating from rater `{rater}`; kappa needs a complete matrix")]
    IncompleteMatrix { item: String, rater: String },
    #[error("all pairable ratings fall in one category; alpha is undefined")]
    NoVariation,
    #[error("fewer than 2 pairable ratings")]
    InsufficientData,
    #[error("label `{0}` is not yes/no")]
    NonBinaryCategories(String),
    #[error("ratings csv line {line}: {msg}")]
    Csv { line: u64, msg: String },
    #[error("rater `{rater}` rated item `{item}` twice")]
    DuplicateRating { item: String, rater: String },
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
}

/// Items × raters; `None` marks a missing rating.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RatingMatrix {
    pub items: Vec<String>,
    pub raters: Vec<String>,
    pub ratings: Vec<Vec<Option<String>>>,
}

impl RatingMatrix {
    /// Complete matrix with generated item/rater names.
    pub fn from_rows<S: AsRef<str>>(rows: &[Vec<S>]) -> Result<Self, AgreementError> {
        Self::from_optional_rows(
            &rows
                .iter()
                .map(|r| r.iter().map(|s| Some(s.as_ref().to_string())).collect())
                .collect::<Vec<_>>(),
        )
    }

    pub fn from_optional_rows(rows: &[Vec<Option<String>>]) -> Result<Self, AgreementError> {
        let raters = rows.first().map_or(0, Vec::len);
        let m = Self {
            items: (1..=rows.len()).map(|i| format!("item{i}")).collect(),
            raters: (1..=raters).map(|r| format!("rater{r}")).collect(),
            ratings: rows.to_vec(),
        };
        m.check_shape()?;
        Ok(m)
    }

    fn check_shape(&self) -> Result<(), AgreementError> {
        if self.items.is_empty() {
            return Err(AgreementError::NoItems);
        }
        if self.raters.len() < 2 {
            return Err(AgreementError::TooFewRaters(self.raters.len()));
        }
        if self.ratings.len() != self.items.len() {
            return Err(AgreementError::Ragged(format!("{} rows for {} items", self.ratings.len(), self.items.len())));
        }
        if let Some((i, r)) = self.ratings.iter().enumerate().find(|(_, r)| r.len() != self.raters.len()) {
            return Err(AgreementError::Ragged(format!("row {} has {} ratings for {} raters", i + 1, r.len(), self.raters.len())));
        }
        Ok(())
    }

    /// Reads `item,rater,label` CSV. Items and raters keep first-seen order;
    /// an empty label is a missing rating.
    pub fn from_csv<R: Read>(reader: R) -> Result<Self, AgreementError> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let csv_err = |e: csv::Error| AgreementError::Csv {
            line: e.position().map_or(0, |p| p.line()),
            msg: e.to_string(),
        };
        let header = rdr.headers().map_err(csv_err)?.clone();
        if header.iter().collect::<Vec<_>>() != ["item", "rater", "label"] {
            return Err(AgreementError::Csv {
                line: 1,
                msg: format!("expected header `item,rater,label`, got `{}`", header.iter().collect::<Vec<_>>().join(",")),
            });
        }
        let (mut items, mut raters) = (Vec::new(), Vec::new());
        let (mut item_ix, mut rater_ix) = (HashMap::new(), HashMap::new());
        let mut cells: HashMap<(usize, usize), Option<String>> = HashMap::new();
        for rec in rdr.records() {
            let rec = rec.map_err(csv_err)?;
            let line = rec.position().map_or(0, |p| p.line());
            if rec.len() != 3 {
                return Err(AgreementError::Csv {
                    line,
                    msg: format!("expected 3 fields, got {}", rec.len()),
                });
            }
            let intern = |name: &str, list: &mut Vec<String>, ix: &mut HashMap<String, usize>| {
                *ix.entry(name.to_string()).or_insert_with(|| {
                    list.push(name.to_string());
                    list.len() - 1
                })
            };
            let i = intern(&rec[0], &mut items, &mut item_ix);
            let r = intern(&rec[1], &mut raters, &mut rater_ix);
            let label = (!rec[2].is_empty()).then(|| rec[2].to_string());
            if cells.insert((i, r), label).is_some() {
                return Err(AgreementError::DuplicateRating {
                    item: rec[0].to_string(),
                    rater: rec[1].to_string(),
                });
            }
        }
        let ratings = (0..items.len())
            .map(|i| (0..raters.len()).map(|r| cells.get(&(i, r)).cloned().flatten()).collect())
            .collect();
        let m = Self { items, raters, ratings };
        m.check_shape()?;
        Ok(m)
    }

    pub fn from_csv_file(path: &Path) -> Result<Self, AgreementError> {
        let f = std::fs::File::open(path).map_err(|source| AgreementError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_csv(f)
    }
}

/// Fleiss's kappa, `(P̄ − P̄e) / (1 − P̄e)`. Input where every rating is the
/// same category has `P̄e = 1`; it is reported as perfect agreement (1.0).
pub fn fleiss_kappa(m: &RatingMatrix) -> Result<f64, AgreementError> {
    m.check_shape()?;
    let n = m.raters.len() as f64;
    let mut totals: BTreeMap<&str, f64> = BTreeMap::new();
    let mut p_bar = 0.0;
    for (i, row) in m.ratings.iter().enumerate() {
        let mut counts: BTreeMap<&str, f64> = BTreeMap::new();
        for (r, cell) in row.iter().enumerate() {
            let c = cell.as_deref().ok_or_else(|| AgreementError::IncompleteMatrix {
                item: m.items[i].clone(),
                rater: m.raters[r].clone(),
            })?;
            *counts.entry(c).or_default() += 1.0;
        }
        p_bar += (counts.values().map(|c| c * c).sum::<f64>() - n) / (n * (n - 1.0));
        for (c, k) in counts {
            *totals.entry(c).or_default() += k;
        }
    }
    let items = m.items.len() as f64;
    p_bar /= items;
    let p_e: f64 = totals.values().map(|t| (t / (items * n)).powi(2)).sum();
    if totals.len() < 2 {
        log::warn!("every rating is `{}`; kappa taken as 1.0", totals.keys().next().unwrap_or(&""));
        return Ok(1.0);
    }
    Ok((p_bar - p_e) / (1.0 - p_e))
}

/// Nominal Krippendorff's alpha, `1 − D_o / D_e`, from the coincidence
/// matrix. Units with fewer than two ratings are not pairable and drop out.
pub fn krippendorff_alpha(m: &RatingMatrix) -> Result<f64, AgreementError> {
    m.check_shape()?;
    // o[(c, k)]: coincidences of values c and k within units
    let mut o: BTreeMap<(&str, &str), f64> = BTreeMap::new();
    for row in &m.ratings {
        let vals: Vec<&str> = row.iter().flatten().map(String::as_str).collect();
        let mu = vals.len();
        if mu < 2 {
            continue;
        }
        for (a, &c) in vals.iter().enumerate() {
            for (b, &k) in vals.iter().enumerate() {
                if a != b {
                    *o.entry((c, k)).or_default() += 1.0 / (mu - 1) as f64;
                }
            }
        }
    }
    let mut n_c: BTreeMap<&str, f64> = BTreeMap::new();
    for (&(c, _), v) in &o {
        *n_c.entry(c).or_default() += v;
    }
    let n: f64 = n_c.values().sum();
    if n < 2.0 {
        return Err(AgreementError::InsufficientData);
    }
    let observed: f64 = o.iter().filter(|((c, k), _)| c != k).map(|(_, v)| v).sum::<f64>() / n;
    let sum_sq: f64 = n_c.values().map(|v| v * v).sum();
    let expected = (n * n - sum_sq) / (n * (n - 1.0));
    if expected == 0.0 {
        return Err(AgreementError::NoVariation);
    }
    Ok(1.0 - observed / expected)
}

fn is_yes(label: &str) -> Result<bool, AgreementError> {
    match label.to_ascii_lowercase().as_str() {
        "yes" | "y" | "1" | "true" => Ok(true),
        "no" | "n" | "0" | "false" => Ok(false),
        _ => Err(AgreementError::NonBinaryCategories(label.to_string())),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgreementCases {
    /// Share of items at least one rater marked yes.
    pub best_case: f64,
    /// Share of items more than half of their raters marked yes.
    pub majority_case: f64,
}

/// Labels are yes/no (also y/n, 1/0, true/false, any case). The majority
/// threshold counts the raters who rated each item.
pub fn agreement_cases(m: &RatingMatrix) -> Result<AgreementCases, AgreementError> {
    m.check_shape()?;
    let (mut best, mut majority) = (0usize, 0usize);
    for row in &m.ratings {
        let mut yes = 0usize;
        let mut rated = 0usize;
        for label in row.iter().flatten() {
            rated += 1;
            yes += usize::from(is_yes(label)?);
        }
        best += usize::from(yes >= 1);
        majority += usize::from(2 * yes > rated);
    }
    let items = m.items.len() as f64;
    Ok(AgreementCases {
        best_case: best as f64 / items,
        majority_case: majority as f64 / items,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementSummary {
    pub items: usize,
    pub raters: usize,
    /// `None` when undefined for the input (incomplete matrix, no variation,
    /// non-binary labels); the reason is logged.
    pub fleiss_kappa: Option<f64>,
    pub krippendorff_alpha: Option<f64>,
    pub cases: Option<AgreementCases>,
}

pub fn summarize(m: &RatingMatrix) -> Result<AgreementSummary, AgreementError> {
    m.check_shape()?;
    fn keep<T>(name: &str, r: Result<T, AgreementError>) -> Option<T> {
        r.map_err(|e| log::warn!("{name}: {e}")).ok()
    }
    Ok(AgreementSummary {
        items: m.items.len(),
        raters: m.raters.len(),
        fleiss_kappa: keep("kappa", fleiss_kappa(m)),
        krippendorff_alpha: keep("alpha", krippendorff_alpha(m)),
        cases: keep("cases", agreement_cases(m)),
    })
}
