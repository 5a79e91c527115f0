use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::confidence::IdfTable;
use crate::error::{Error, Result};
use crate::text::tokenize;

/// Number of built-in features: tf-idf cosine, Jaccard, log length ratio,
/// query coverage, bias.
pub const BUILTIN_DIM: usize = 5;
pub const BUILTIN_NAMES: [&str; BUILTIN_DIM] = [
    "tfidf_cosine",
    "jaccard",
    "log_len_ratio",
    "coverage",
    "bias",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct FeatureSchema {
    /// Length of the caller-supplied vector appended after the built-ins.
    pub extra_dim: usize,
}

impl FeatureSchema {
    pub fn builtin() -> Self {
        Self::default()
    }

    pub fn dim(&self) -> usize {
        BUILTIN_DIM + self.extra_dim
    }

    pub fn id(&self) -> String {
        if self.extra_dim == 0 {
            "builtin-v1".into()
        } else {
            format!("builtin-v1+ext{}", self.extra_dim)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub values: Vec<f64>,
    pub schema_id: String,
}

fn counts(tokens: &[String]) -> BTreeMap<&str, f64> {
    let mut m = BTreeMap::new();
    for t in tokens {
        *m.entry(t.as_str()).or_insert(0.0) += 1.0;
    }
    m
}

pub fn tfidf_cosine(query: &[String], doc: &[String], idf: Option<&IdfTable>) -> f64 {
    let weight = |t: &str| idf.map_or(1.0, |table| table.get(t));
    let q = counts(query);
    let d = counts(doc);
    let qv: BTreeMap<&str, f64> = q.iter().map(|(t, c)| (*t, c * weight(t))).collect();
    let dv: BTreeMap<&str, f64> = d.iter().map(|(t, c)| (*t, c * weight(t))).collect();
    let dot: f64 = qv
        .iter()
        .filter_map(|(t, w)| dv.get(t).map(|v| w * v))
        .sum();
    let qn = qv.values().map(|w| w * w).sum::<f64>().sqrt();
    let dn = dv.values().map(|w| w * w).sum::<f64>().sqrt();
    if qn == 0.0 || dn == 0.0 {
        0.0
    } else {
        dot / (qn * dn)
    }
}

pub fn featurize(
    schema: &FeatureSchema,
    query: &str,
    document: &str,
    idf: Option<&IdfTable>,
    extra: Option<&[f64]>,
) -> Result<FeatureVector> {
    if query.trim().is_empty() || document.trim().is_empty() {
        return Err(Error::InvalidInput(
            "featurize needs a nonempty query and document".into(),
        ));
    }
    let extra = extra.unwrap_or(&[]);
    if extra.len() != schema.extra_dim {
        return Err(Error::SchemaMismatch {
            expected: schema.id(),
            got: format!("{} external features", extra.len()),
        });
    }
    if extra.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("non-finite external feature".into()));
    }

    let q = tokenize(query);
    let d = tokenize(document);
    let qs: HashSet<&str> = q.iter().map(String::as_str).collect();
    let ds: HashSet<&str> = d.iter().map(String::as_str).collect();
    let inter = qs.intersection(&ds).count() as f64;
    let union = qs.union(&ds).count() as f64;
    let jaccard = if union == 0.0 { 0.0 } else { inter / union };
    let coverage = if qs.is_empty() {
        0.0
    } else {
        inter / qs.len() as f64
    };
    let len_ratio = (d.len().max(1) as f64 / q.len().max(1) as f64).ln();

    let mut values = Vec::with_capacity(schema.dim());
    values.extend([tfidf_cosine(&q, &d, idf), jaccard, len_ratio, coverage, 1.0]);
    values.extend_from_slice(extra);
    Ok(FeatureVector {
        values,
        schema_id: schema.id(),
    })
}
