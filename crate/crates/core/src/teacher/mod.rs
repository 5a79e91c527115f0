//! Teacher log-probabilities for a forced answer continuation.
//!
//! Three providers share the [`TeacherProvider`] trait: the deterministic
//! [`MockTeacher`], previously fetched JSONL records ([`RecordTeacher`]) and a
//! completions endpoint ([`http::HttpTeacher`]).

pub mod http;
pub mod records;

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::text::tokenize;

pub use records::{load_logprob_records, write_logprob_records, LogprobRecord};

/// Per-token natural-log probabilities of an answer continuation.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenLogProbSequence {
    tokens: Vec<String>,
    logprobs: Vec<f64>,
}

impl TokenLogProbSequence {
    pub fn new(tokens: Vec<String>, logprobs: Vec<f64>) -> Result<Self> {
        if tokens.is_empty() {
            return Err(Error::InvalidInput("empty token sequence".into()));
        }
        if tokens.len() != logprobs.len() {
            return Err(Error::InvalidInput(format!(
                "{} tokens but {} logprobs",
                tokens.len(),
                logprobs.len()
            )));
        }
        if let Some((i, lp)) = logprobs
            .iter()
            .enumerate()
            .find(|(_, lp)| !lp.is_finite() || **lp > 0.0)
        {
            return Err(Error::InvalidInput(format!(
                "logprob {lp} at position {i} is not a finite value <= 0"
            )));
        }
        Ok(Self { tokens, logprobs })
    }

    /// Builds a sequence from plain probabilities. Handy in tests.
    pub fn from_probs(probs: &[f64]) -> Result<Self> {
        let tokens = (0..probs.len()).map(|i| format!("t{i}")).collect();
        Self::new(tokens, probs.iter().map(|p| p.ln()).collect())
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn logprobs(&self) -> &[f64] {
        &self.logprobs
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    WithDoc,
    WithoutDoc,
}

impl Variant {
    pub fn as_str(&self) -> &'static str {
        match self {
            Variant::WithDoc => "with_doc",
            Variant::WithoutDoc => "without_doc",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TeacherRequest {
    pub query: String,
    pub answer: String,
    pub document: Option<String>,
    pub attachment_refs: Vec<String>,
}

impl TeacherRequest {
    pub fn new(
        query: impl Into<String>,
        answer: impl Into<String>,
        document: Option<String>,
        attachment_refs: Vec<String>,
    ) -> Result<Self> {
        let req = Self {
            query: query.into(),
            answer: answer.into(),
            document,
            attachment_refs,
        };
        req.validate()?;
        Ok(req)
    }

    pub fn validate(&self) -> Result<()> {
        if self.query.trim().is_empty() {
            return Err(Error::InvalidInput("empty query".into()));
        }
        if self.answer.trim().is_empty() {
            return Err(Error::InvalidInput("empty answer".into()));
        }
        Ok(())
    }
}

/// Coefficients of the logistic mock teacher.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MockTeacherParams {
    pub a0: f64,
    pub a1: f64,
    pub a2: f64,
    pub epsilon: f64,
}

impl Default for MockTeacherParams {
    fn default() -> Self {
        Self {
            a0: -1.0,
            a1: 2.5,
            a2: 0.5,
            epsilon: 0.01,
        }
    }
}

impl MockTeacherParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon < 0.5) {
            return Err(Error::InvalidInput(format!(
                "mock epsilon {} outside (0, 0.5)",
                self.epsilon
            )));
        }
        if ![self.a0, self.a1, self.a2].iter().all(|a| a.is_finite()) {
            return Err(Error::InvalidInput(
                "mock coefficients must be finite".into(),
            ));
        }
        Ok(())
    }
}

pub(crate) fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Deterministic stand-in for a teacher model: each answer token's
/// probability is a clamped logistic of its overlap with the document and
/// the query.
pub fn mock_logprobs(
    request: &TeacherRequest,
    params: &MockTeacherParams,
) -> Result<TokenLogProbSequence> {
    request.validate()?;
    params.validate()?;
    let answer = tokenize(&request.answer);
    if answer.is_empty() {
        return Err(Error::InvalidInput(
            "answer has no tokens after normalization".into(),
        ));
    }
    let doc_terms: HashSet<String> = request
        .document
        .as_deref()
        .map(|d| tokenize(d).into_iter().collect())
        .unwrap_or_default();
    let query_terms: HashSet<String> = tokenize(&request.query).into_iter().collect();

    let eps = params.epsilon;
    let logprobs = answer
        .iter()
        .map(|t| {
            let in_doc = if doc_terms.contains(t) { 1.0 } else { 0.0 };
            let in_query = if query_terms.contains(t) { 1.0 } else { 0.0 };
            let p = logistic(params.a0 + params.a1 * in_doc + params.a2 * in_query);
            p.clamp(eps, 1.0 - eps).ln()
        })
        .collect();
    TokenLogProbSequence::new(answer, logprobs)
}

/// Source of teacher log-probabilities for one context variant of a triplet.
pub trait TeacherProvider: Sync {
    fn logprobs(
        &self,
        triplet_id: &str,
        variant: Variant,
        request: &TeacherRequest,
    ) -> Result<TokenLogProbSequence>;

    /// Stable description of everything that influences the output. Hashed
    /// into cache keys.
    fn descriptor(&self) -> String;

    /// Whether the without-document result depends only on the request
    /// content, so it may be shared between triplets with the same
    /// query and answer.
    fn shares_baseline(&self) -> bool {
        true
    }
}

#[derive(Debug, Clone, Default)]
pub struct MockTeacher {
    pub params: MockTeacherParams,
}

impl MockTeacher {
    pub fn new(params: MockTeacherParams) -> Self {
        Self { params }
    }
}

impl TeacherProvider for MockTeacher {
    fn logprobs(
        &self,
        _: &str,
        _: Variant,
        request: &TeacherRequest,
    ) -> Result<TokenLogProbSequence> {
        mock_logprobs(request, &self.params)
    }

    fn descriptor(&self) -> String {
        let p = &self.params;
        format!("mock:a0={}:a1={}:a2={}:eps={}", p.a0, p.a1, p.a2, p.epsilon)
    }
}

/// Serves sequences loaded from a logprob record file, keyed by triplet id
/// and variant.
#[derive(Debug, Clone, Default)]
pub struct RecordTeacher {
    records: HashMap<(String, Variant), TokenLogProbSequence>,
}

impl RecordTeacher {
    pub fn new(records: Vec<LogprobRecord>) -> Self {
        Self {
            records: records
                .into_iter()
                .map(|r| ((r.triplet_id, r.variant), r.sequence))
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

impl TeacherProvider for RecordTeacher {
    fn logprobs(
        &self,
        triplet_id: &str,
        variant: Variant,
        _: &TeacherRequest,
    ) -> Result<TokenLogProbSequence> {
        self.records
            .get(&(triplet_id.to_string(), variant.clone()))
            .cloned()
            .ok_or_else(|| Error::InvalidRecord {
                id: triplet_id.to_string(),
                message: format!("no {} logprob record", variant.as_str()),
            })
    }

    fn descriptor(&self) -> String {
        "records".into()
    }

    fn shares_baseline(&self) -> bool {
        false
    }
}
