//! Information gain of a document: teacher confidence in the answer with the
//! document in context minus confidence with the query alone. Scored triplets
//! are thresholded into positive / negative / neutral and balanced into a
//! training set.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::sync::RwLock;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::confidence::{confidence, ConfidenceStrategy, ConfidenceValue, Scale};
use crate::error::{Error, Result};
use crate::teacher::{TeacherProvider, TeacherRequest, Variant};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Triplet {
    pub id: String,
    pub query: String,
    pub answer: String,
    pub document: String,
    #[serde(default)]
    pub attachments: Vec<String>,
}

impl Triplet {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("id", &self.id),
            ("query", &self.query),
            ("answer", &self.answer),
            ("document", &self.document),
        ] {
            if v.trim().is_empty() {
                return Err(Error::InvalidRecord {
                    id: self.id.clone(),
                    message: format!("empty {name}"),
                });
            }
        }
        Ok(())
    }

    pub fn request(&self, variant: &Variant) -> Result<TeacherRequest> {
        let document = match variant {
            Variant::WithDoc => Some(self.document.clone()),
            Variant::WithoutDoc => None,
        };
        TeacherRequest::new(
            &self.query,
            &self.answer,
            document,
            self.attachments.clone(),
        )
    }
}

pub fn check_unique_ids(triplets: &[Triplet]) -> Result<()> {
    let mut seen = HashSet::new();
    for t in triplets {
        if !seen.insert(t.id.as_str()) {
            return Err(Error::InvalidRecord {
                id: t.id.clone(),
                message: "duplicate triplet id".into(),
            });
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredTriplet {
    pub triplet: Triplet,
    pub conf_with: ConfidenceValue,
    pub conf_without: ConfidenceValue,
    pub mig: f64,
}

impl ScoredTriplet {
    pub fn new(
        triplet: Triplet,
        conf_with: ConfidenceValue,
        conf_without: ConfidenceValue,
    ) -> Result<Self> {
        if conf_with.scale != conf_without.scale {
            return Err(Error::ScaleMismatch {
                with: conf_with.scale.as_str().into(),
                without: conf_without.scale.as_str().into(),
            });
        }
        Ok(Self {
            mig: conf_with.value - conf_without.value,
            triplet,
            conf_with,
            conf_without,
        })
    }

    pub fn scale(&self) -> Scale {
        self.conf_with.scale
    }
}

/// On-disk form shared by scored and labeled JSONL files. `label` is only
/// present in labeled datasets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoredRecord {
    pub id: String,
    pub query: String,
    pub answer: String,
    pub document: String,
    #[serde(default)]
    pub attachments: Vec<String>,
    pub conf_with: f64,
    pub conf_without: f64,
    pub scale: Scale,
    pub mig: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<u8>,
}

impl ScoredRecord {
    pub fn from_scored(s: &ScoredTriplet, label: Option<u8>) -> Self {
        let t = &s.triplet;
        Self {
            id: t.id.clone(),
            query: t.query.clone(),
            answer: t.answer.clone(),
            document: t.document.clone(),
            attachments: t.attachments.clone(),
            conf_with: s.conf_with.value,
            conf_without: s.conf_without.value,
            scale: s.scale(),
            mig: s.mig,
            label,
        }
    }

    /// Rebuilds the scored triplet. The stored mig is kept as written.
    pub fn to_scored(&self) -> Result<ScoredTriplet> {
        let triplet = Triplet {
            id: self.id.clone(),
            query: self.query.clone(),
            answer: self.answer.clone(),
            document: self.document.clone(),
            attachments: self.attachments.clone(),
        };
        triplet.validate()?;
        if !self.mig.is_finite() {
            return Err(Error::InvalidRecord {
                id: self.id.clone(),
                message: format!("non-finite mig {}", self.mig),
            });
        }
        if let Some(l) = self.label {
            if l > 1 {
                return Err(Error::InvalidRecord {
                    id: self.id.clone(),
                    message: format!("label {l} is not 0 or 1"),
                });
            }
        }
        Ok(ScoredTriplet {
            triplet,
            conf_with: ConfidenceValue {
                value: self.conf_with,
                scale: self.scale,
            },
            conf_without: ConfidenceValue {
                value: self.conf_without,
                scale: self.scale,
            },
            mig: self.mig,
        })
    }
}

type BaselineKey = (String, String, Vec<String>, String);

/// Without-document confidences keyed by (query, answer, attachments,
/// strategy). The baseline does not depend on the document, so triplets that
/// share a query and answer share one teacher call.
#[derive(Debug, Default)]
pub struct BaselineCache {
    inner: RwLock<HashMap<BaselineKey, ConfidenceValue>>,
}

impl BaselineCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.inner.read().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn get_or_compute(
        &self,
        key: BaselineKey,
        f: impl FnOnce() -> Result<ConfidenceValue>,
    ) -> Result<ConfidenceValue> {
        if let Some(v) = self.inner.read().unwrap().get(&key) {
            return Ok(*v);
        }
        let v = f()?;
        self.inner.write().unwrap().entry(key).or_insert(v);
        Ok(v)
    }
}

fn attach_id(id: &str, e: Error) -> Error {
    match e {
        e @ Error::Triplet { .. } => e,
        e => Error::Triplet {
            id: id.to_string(),
            source: Box::new(e),
        },
    }
}

fn score_variant(
    triplet: &Triplet,
    variant: Variant,
    provider: &(impl TeacherProvider + ?Sized),
    strategy: &ConfidenceStrategy,
) -> Result<ConfidenceValue> {
    let req = triplet.request(&variant)?;
    let seq = provider.logprobs(&triplet.id, variant, &req)?;
    confidence(&seq, strategy)
}

pub fn compute_mig(
    triplet: &Triplet,
    provider: &(impl TeacherProvider + ?Sized),
    strategy: &ConfidenceStrategy,
) -> Result<ScoredTriplet> {
    compute_mig_cached(triplet, provider, strategy, None)
}

pub fn compute_mig_cached(
    triplet: &Triplet,
    provider: &(impl TeacherProvider + ?Sized),
    strategy: &ConfidenceStrategy,
    cache: Option<&BaselineCache>,
) -> Result<ScoredTriplet> {
    let id = triplet.id.as_str();
    triplet.validate().map_err(|e| attach_id(id, e))?;
    let with = score_variant(triplet, Variant::WithDoc, provider, strategy)
        .map_err(|e| attach_id(id, e))?;
    let baseline = || score_variant(triplet, Variant::WithoutDoc, provider, strategy);
    let without = match cache {
        Some(cache) if provider.shares_baseline() => {
            let key = (
                triplet.query.clone(),
                triplet.answer.clone(),
                triplet.attachments.clone(),
                strategy.descriptor(),
            );
            cache.get_or_compute(key, baseline)
        }
        _ => baseline(),
    }
    .map_err(|e| attach_id(id, e))?;
    ScoredTriplet::new(triplet.clone(), with, without).map_err(|e| attach_id(id, e))
}

/// Scores every triplet, in parallel when `jobs > 1`. Output order follows
/// input order.
pub fn score_all(
    triplets: &[Triplet],
    provider: &(impl TeacherProvider + ?Sized),
    strategy: &ConfidenceStrategy,
    jobs: usize,
) -> Result<Vec<ScoredTriplet>> {
    check_unique_ids(triplets)?;
    let cache = BaselineCache::new();
    if jobs <= 1 {
        return triplets
            .iter()
            .map(|t| compute_mig_cached(t, provider, strategy, Some(&cache)))
            .collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::InvalidInput(format!("thread pool: {e}")))?;
    pool.install(|| {
        triplets
            .par_iter()
            .map(|t| compute_mig_cached(t, provider, strategy, Some(&cache)))
            .collect()
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LabelingConfig {
    pub b1: f64,
    pub b2: f64,
}

impl Default for LabelingConfig {
    fn default() -> Self {
        Self { b1: 0.2, b2: -0.2 }
    }
}

impl LabelingConfig {
    /// Symmetric thresholds `b1 = tau`, `b2 = -tau`.
    pub fn symmetric(tau: f64) -> Self {
        Self { b1: tau, b2: -tau }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.b1 > self.b2) {
            return Err(Error::config(
                "labeling.b1",
                format!("b1 ({}) must exceed b2 ({})", self.b1, self.b2),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Label {
    Positive,
    Negative,
    Neutral,
}

/// Strict thresholds: values exactly at `b1` or `b2` are neutral.
pub fn label(mig: f64, cfg: &LabelingConfig) -> Label {
    if mig > cfg.b1 {
        Label::Positive
    } else if mig < cfg.b2 {
        Label::Negative
    } else {
        Label::Neutral
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledExample {
    pub scored: ScoredTriplet,
    pub label: u8,
}

impl LabeledExample {
    pub fn mig(&self) -> f64 {
        self.scored.mig
    }

    pub fn id(&self) -> &str {
        &self.scored.triplet.id
    }

    pub fn to_record(&self) -> ScoredRecord {
        ScoredRecord::from_scored(&self.scored, Some(self.label))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub examples: Vec<LabeledExample>,
    /// Neutral triplets dropped before balancing.
    pub discarded_neutral: usize,
    /// Majority-class triplets dropped by balancing.
    pub downsampled: usize,
}

/// Labels `scored`, drops neutral triplets and, when `balance` is set,
/// downsamples the majority class to the minority count. Output is sorted by
/// triplet id.
pub fn build_dataset(
    scored: &[ScoredTriplet],
    cfg: &LabelingConfig,
    seed: u64,
    balance: bool,
) -> Result<LabeledDataset> {
    cfg.validate()?;
    if scored.is_empty() {
        return Err(Error::InvalidInput("no scored triplets".into()));
    }
    let mut seen = HashSet::new();
    for s in scored {
        if !seen.insert(s.triplet.id.as_str()) {
            return Err(Error::InvalidRecord {
                id: s.triplet.id.clone(),
                message: "duplicate triplet id".into(),
            });
        }
    }

    let mut pos = Vec::new();
    let mut neg = Vec::new();
    let mut neutral = 0;
    for s in scored {
        match label(s.mig, cfg) {
            Label::Positive => pos.push(s),
            Label::Negative => neg.push(s),
            Label::Neutral => neutral += 1,
        }
    }
    pos.sort_by(|a, b| a.triplet.id.cmp(&b.triplet.id));
    neg.sort_by(|a, b| a.triplet.id.cmp(&b.triplet.id));

    let mut downsampled = 0;
    if balance {
        if pos.is_empty() || neg.is_empty() {
            return Err(Error::Unbalanceable {
                positives: pos.len(),
                negatives: neg.len(),
                neutral,
            });
        }
        let target = pos.len().min(neg.len());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let majority = if pos.len() > neg.len() {
            &mut pos
        } else {
            &mut neg
        };
        if majority.len() > target {
            downsampled = majority.len() - target;
            let mut keep = sample(&mut rng, majority.len(), target).into_vec();
            keep.sort_unstable();
            *majority = keep.into_iter().map(|i| majority[i]).collect();
        }
    }

    let mut examples: Vec<LabeledExample> = pos
        .into_iter()
        .map(|s| (s, 1))
        .chain(neg.into_iter().map(|s| (s, 0)))
        .map(|(s, label)| LabeledExample {
            scored: s.clone(),
            label,
        })
        .collect();
    examples.sort_by(|a, b| a.id().cmp(b.id()));
    Ok(LabeledDataset {
        examples,
        discarded_neutral: neutral,
        downsampled,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HistogramBin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DatasetStats {
    pub positives: usize,
    pub negatives: usize,
    pub discarded: usize,
    pub downsampled: usize,
    pub bin_width: f64,
    pub mig_histogram: Vec<HistogramBin>,
}

pub const DEFAULT_BIN_WIDTH: f64 = 0.05;

pub fn dataset_stats(dataset: &LabeledDataset, bin_width: f64) -> DatasetStats {
    let width = if bin_width > 0.0 {
        bin_width
    } else {
        DEFAULT_BIN_WIDTH
    };
    let mut bins: BTreeMap<i64, usize> = BTreeMap::new();
    for ex in &dataset.examples {
        *bins.entry((ex.mig() / width).floor() as i64).or_default() += 1;
    }
    let positives = dataset.examples.iter().filter(|e| e.label == 1).count();
    DatasetStats {
        positives,
        negatives: dataset.examples.len() - positives,
        discarded: dataset.discarded_neutral,
        downsampled: dataset.downsampled,
        bin_width: width,
        mig_histogram: bins
            .into_iter()
            .map(|(b, count)| HistogramBin {
                lo: b as f64 * width,
                hi: (b + 1) as f64 * width,
                count,
            })
            .collect(),
    }
}
