//! Aggregation of token log-probabilities into a single confidence value.
//!
//! * `Equal` is the plain product of token probabilities.
//! * `Positional` weights each log-probability by a truncated parabola
//!   `w_i = max(0, -k (i - peak)^2 + c)` over 1-based positions, so the middle
//!   of the answer dominates and one bad edge token cannot zero the score.
//! * `SemanticAnchor` averages log-probabilities over tokens whose idf exceeds
//!   `tau_freq`, ignoring filler words. Its value lives on the log scale.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::jsonl;
use crate::teacher::TokenLogProbSequence;
use crate::text::{normalize_token, tokenize};

pub const DEFAULT_K: f64 = 0.2;
pub const DEFAULT_C: f64 = 1.5;
pub const DEFAULT_PEAK: f64 = 5.0;
pub const DEFAULT_TAU_FREQ: f64 = 0.15;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scale {
    Probability,
    Logprob,
}

impl Scale {
    pub fn as_str(&self) -> &'static str {
        match self {
            Scale::Probability => "probability",
            Scale::Logprob => "logprob",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConfidenceValue {
    pub value: f64,
    pub scale: Scale,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Peak {
    Fixed(f64),
    /// Half the answer length, never below 1.
    Midpoint,
}

impl Peak {
    pub fn resolve(&self, n: usize) -> f64 {
        match *self {
            Peak::Fixed(p) => p,
            Peak::Midpoint => (n as f64 / 2.0).max(1.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PositionalParams {
    pub k: f64,
    pub c: f64,
    pub peak: Peak,
    /// Divide the weights by their sum before use. Off by default.
    pub normalize: bool,
}

impl Default for PositionalParams {
    fn default() -> Self {
        Self {
            k: DEFAULT_K,
            c: DEFAULT_C,
            peak: Peak::Fixed(DEFAULT_PEAK),
            normalize: false,
        }
    }
}

#[derive(Debug, Clone)]
pub enum ConfidenceStrategy {
    Equal,
    Positional(PositionalParams),
    SemanticAnchor { tau_freq: f64, idf: Arc<IdfTable> },
}

impl ConfidenceStrategy {
    pub fn validate(&self) -> Result<()> {
        match self {
            ConfidenceStrategy::Equal => Ok(()),
            ConfidenceStrategy::Positional(p) => {
                if !(p.k > 0.0 && p.c > 0.0) {
                    return Err(Error::InvalidInput(format!(
                        "positional strategy needs k > 0 and c > 0 (k={}, c={})",
                        p.k, p.c
                    )));
                }
                if let Peak::Fixed(peak) = p.peak {
                    if !(peak >= 1.0) {
                        return Err(Error::InvalidInput(format!("peak {peak} < 1")));
                    }
                }
                Ok(())
            }
            ConfidenceStrategy::SemanticAnchor { tau_freq, .. } => {
                if !(*tau_freq >= 0.0) {
                    return Err(Error::InvalidInput(format!("tau_freq {tau_freq} < 0")));
                }
                Ok(())
            }
        }
    }

    pub fn scale(&self) -> Scale {
        match self {
            ConfidenceStrategy::SemanticAnchor { .. } => Scale::Logprob,
            _ => Scale::Probability,
        }
    }

    /// Stable text form used for cache keys.
    pub fn descriptor(&self) -> String {
        match self {
            ConfidenceStrategy::Equal => "equal".into(),
            ConfidenceStrategy::Positional(p) => {
                format!(
                    "positional:k={}:c={}:peak={:?}:norm={}",
                    p.k, p.c, p.peak, p.normalize
                )
            }
            ConfidenceStrategy::SemanticAnchor { tau_freq, idf } => {
                format!("semantic_anchor:tau={}:idf={}", tau_freq, idf.fingerprint())
            }
        }
    }
}

pub fn positional_weights(n: usize, k: f64, c: f64, peak: f64) -> Result<Vec<f64>> {
    if n == 0 || !(k > 0.0) || !(c > 0.0) || !peak.is_finite() {
        return Err(Error::InvalidInput(format!(
            "positional_weights needs n >= 1, k > 0, c > 0 (n={n}, k={k}, c={c}, peak={peak})"
        )));
    }
    Ok((1..=n)
        .map(|i| {
            let d = i as f64 - peak;
            (-k * d * d + c).max(0.0)
        })
        .collect())
}

/// `exp(sum_i w_i * logprob_i)`.
pub fn weighted_product(logprobs: &[f64], weights: &[f64]) -> f64 {
    let s: f64 = logprobs.iter().zip(weights).map(|(lp, w)| w * lp).sum();
    // exp underflows for very long, very unlikely answers; keep the value
    // inside (0, 1].
    s.exp().max(f64::MIN_POSITIVE)
}

pub fn confidence(
    seq: &TokenLogProbSequence,
    strategy: &ConfidenceStrategy,
) -> Result<ConfidenceValue> {
    strategy.validate()?;
    let lps = seq.logprobs();
    let value = match strategy {
        ConfidenceStrategy::Equal => weighted_product(lps, &vec![1.0; lps.len()]),
        ConfidenceStrategy::Positional(p) => {
            let mut w = positional_weights(lps.len(), p.k, p.c, p.peak.resolve(lps.len()))?;
            let total: f64 = w.iter().sum();
            if total == 0.0 {
                log::warn!(
                    "positional weights vanish for a {}-token answer; using equal weights",
                    lps.len()
                );
                w = vec![1.0; lps.len()];
            } else if p.normalize {
                w.iter_mut().for_each(|x| *x /= total);
            }
            weighted_product(lps, &w)
        }
        ConfidenceStrategy::SemanticAnchor { tau_freq, idf } => {
            let mask = semantic_mask(seq.tokens(), idf, *tau_freq);
            masked_mean(lps, &mask)
        }
    };
    Ok(ConfidenceValue {
        value,
        scale: strategy.scale(),
    })
}

/// Mean of the masked log-probabilities; an all-zero mask falls back to the
/// mean over every token.
pub fn masked_mean(logprobs: &[f64], mask: &[bool]) -> f64 {
    let (sum, count) = logprobs
        .iter()
        .zip(mask)
        .filter(|(_, m)| **m)
        .fold((0.0, 0usize), |(s, c), (lp, _)| (s + lp, c + 1));
    if count == 0 {
        log::warn!("semantic mask selects no anchors; averaging over all tokens");
        return logprobs.iter().sum::<f64>() / logprobs.len() as f64;
    }
    sum / count as f64
}

/// `mask_i` is set iff `idf(token_i) > tau_freq`. Tokens that normalize to
/// nothing (pure punctuation) are never anchors.
pub fn semantic_mask(tokens: &[String], idf: &IdfTable, tau_freq: f64) -> Vec<bool> {
    tokens
        .iter()
        .map(|t| {
            let norm = normalize_token(t);
            !norm.is_empty() && idf.get(&norm) > tau_freq
        })
        .collect()
}

/// Smoothed inverse document frequencies, `ln((1 + N) / (1 + df))`.
#[derive(Debug, Clone, PartialEq)]
pub struct IdfTable {
    terms: BTreeMap<String, f64>,
    corpus_doc_count: usize,
    max_idf: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct IdfHeader {
    corpus_doc_count: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct IdfRow {
    term: String,
    idf: f64,
}

impl IdfTable {
    pub fn from_terms(terms: BTreeMap<String, f64>, corpus_doc_count: usize) -> Result<Self> {
        if corpus_doc_count == 0 {
            return Err(Error::InvalidInput(
                "idf table needs corpus_doc_count >= 1".into(),
            ));
        }
        if let Some((t, v)) = terms.iter().find(|(_, v)| !(**v >= 0.0) || !v.is_finite()) {
            return Err(Error::InvalidInput(format!("idf for {t:?} is {v}")));
        }
        let max_idf = terms.values().cloned().fold(0.0, f64::max);
        Ok(Self {
            terms,
            corpus_doc_count,
            max_idf,
        })
    }

    /// Unknown terms resolve to the largest idf in the table.
    pub fn get(&self, term: &str) -> f64 {
        self.terms.get(term).copied().unwrap_or(self.max_idf)
    }

    pub fn contains(&self, term: &str) -> bool {
        self.terms.contains_key(term)
    }

    pub fn corpus_doc_count(&self) -> usize {
        self.corpus_doc_count
    }

    pub fn max_idf(&self) -> f64 {
        self.max_idf
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, f64)> {
        self.terms.iter().map(|(k, v)| (k.as_str(), *v))
    }

    pub fn fingerprint(&self) -> String {
        crate::hash::sha256_hex(self.to_jsonl().unwrap_or_default().as_bytes())[..16].to_string()
    }

    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = jsonl::to_string(std::iter::once(&IdfHeader {
            corpus_doc_count: self.corpus_doc_count,
        }))?;
        let rows: Vec<IdfRow> = self
            .terms
            .iter()
            .map(|(t, v)| IdfRow {
                term: t.clone(),
                idf: *v,
            })
            .collect();
        out.push_str(&jsonl::to_string(&rows)?);
        Ok(out)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        jsonl::write_text(path, &self.to_jsonl()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let lines: Vec<(usize, serde_json::Value)> = jsonl::read(path)?;
        let mut iter = lines.into_iter();
        let (line, header) = iter.next().ok_or_else(|| Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            message: "missing idf header".into(),
        })?;
        let parse_err = |line: usize, e: serde_json::Error| Error::Parse {
            path: path.to_path_buf(),
            line,
            message: e.to_string(),
        };
        let header: IdfHeader = serde_json::from_value(header).map_err(|e| parse_err(line, e))?;
        let mut terms = BTreeMap::new();
        for (line, v) in iter {
            let row: IdfRow = serde_json::from_value(v).map_err(|e| parse_err(line, e))?;
            terms.insert(row.term, row.idf);
        }
        Self::from_terms(terms, header.corpus_doc_count)
    }
}

pub fn build_idf_table<S: AsRef<str>>(corpus: &[S]) -> Result<IdfTable> {
    if corpus.is_empty() {
        return Err(Error::InvalidInput(
            "cannot build idf table from an empty corpus".into(),
        ));
    }
    let mut df: BTreeMap<String, usize> = BTreeMap::new();
    for doc in corpus {
        let unique: HashSet<String> = tokenize(doc.as_ref()).into_iter().collect();
        for t in unique {
            *df.entry(t).or_default() += 1;
        }
    }
    let n = corpus.len() as f64;
    let terms = df
        .into_iter()
        .map(|(t, d)| (t, ((1.0 + n) / (1.0 + d as f64)).ln()))
        .collect();
    IdfTable::from_terms(terms, corpus.len())
}
