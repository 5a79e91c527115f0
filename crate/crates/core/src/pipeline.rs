//! Retrieve, rerank, assemble: tf-idf candidate retrieval over a corpus,
//! reranking with a trained model, and rendering the top documents into a
//! prompt. Also scores how well a model's order tracks information gain.
//!
//! Ties are broken by ascending document id everywhere.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::confidence::{build_idf_table, IdfTable};
use crate::error::{Error, Result};
use crate::jsonl;
use crate::mig::ScoredTriplet;
use crate::reranker::features::{featurize, tfidf_cosine};
use crate::reranker::RerankerModel;
use crate::text::tokenize;

pub const DEFAULT_CANDIDATES: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Document {
    pub id: String,
    pub text: String,
    #[serde(default)]
    pub attachments: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct Corpus {
    docs: BTreeMap<String, Document>,
    tokens: BTreeMap<String, Vec<String>>,
    idf: IdfTable,
}

impl Corpus {
    pub fn new(documents: Vec<Document>) -> Result<Self> {
        if documents.is_empty() {
            return Err(Error::InvalidInput("empty corpus".into()));
        }
        let mut docs = BTreeMap::new();
        for d in documents {
            if d.text.trim().is_empty() {
                return Err(Error::InvalidRecord {
                    id: d.id,
                    message: "empty document text".into(),
                });
            }
            if docs.contains_key(&d.id) {
                return Err(Error::InvalidRecord {
                    id: d.id,
                    message: "duplicate document id".into(),
                });
            }
            docs.insert(d.id.clone(), d);
        }
        let texts: Vec<&str> = docs.values().map(|d| d.text.as_str()).collect();
        let idf = build_idf_table(&texts)?;
        let tokens = docs
            .iter()
            .map(|(id, d)| (id.clone(), tokenize(&d.text)))
            .collect();
        Ok(Self { docs, tokens, idf })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::new(jsonl::read_values(path)?)
    }

    pub fn get(&self, id: &str) -> Option<&Document> {
        self.docs.get(id)
    }

    pub fn idf(&self) -> &IdfTable {
        &self.idf
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn documents(&self) -> impl Iterator<Item = &Document> {
        self.docs.values()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalResult {
    pub hits: Vec<(String, f64)>,
}

impl RetrievalResult {
    pub fn ids(&self) -> Vec<&str> {
        self.hits.iter().map(|(id, _)| id.as_str()).collect()
    }
}

fn by_score_then_id(a: &(String, f64), b: &(String, f64)) -> Ordering {
    b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0))
}

pub fn tfidf_retrieve(query: &str, corpus: &Corpus, m: usize) -> Result<RetrievalResult> {
    if m == 0 {
        return Err(Error::InvalidInput("candidate count must be >= 1".into()));
    }
    if corpus.is_empty() {
        return Err(Error::InvalidInput("empty corpus".into()));
    }
    let q = tokenize(query);
    let mut hits: Vec<(String, f64)> = corpus
        .tokens
        .iter()
        .map(|(id, toks)| (id.clone(), tfidf_cosine(&q, toks, Some(&corpus.idf))))
        .collect();
    hits.sort_by(by_score_then_id);
    hits.truncate(m);
    Ok(RetrievalResult { hits })
}

/// Rescores `candidates` with `model` and keeps the best `k`.
pub fn rerank(
    model: &RerankerModel,
    query: &str,
    candidates: &RetrievalResult,
    corpus: &Corpus,
    k: usize,
) -> Result<Vec<(String, f64)>> {
    if k == 0 {
        return Err(Error::InvalidInput("k must be >= 1".into()));
    }
    let mut seen = HashSet::new();
    let mut scored = Vec::with_capacity(candidates.hits.len());
    for (id, _) in &candidates.hits {
        if !seen.insert(id.as_str()) {
            return Err(Error::InvalidInput(format!("duplicate candidate {id:?}")));
        }
        let doc = corpus
            .get(id)
            .ok_or_else(|| Error::InvalidInput(format!("candidate {id:?} not in corpus")))?;
        let f = featurize(&model.schema, query, &doc.text, Some(corpus.idf()), None)?;
        scored.push((id.clone(), model.score(&f)?));
    }
    Ok(top_k(scored, k))
}

/// Sorts by score descending, ties by ascending id, and keeps `k`.
pub fn top_k(mut scored: Vec<(String, f64)>, k: usize) -> Vec<(String, f64)> {
    scored.sort_by(by_score_then_id);
    scored.truncate(k);
    scored
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ContextTemplate {
    /// Rendered once per document; `{rank}` is 1-based.
    pub block: String,
    /// The whole prompt; `{context}` receives the concatenated blocks.
    pub prompt: String,
}

impl Default for ContextTemplate {
    fn default() -> Self {
        Self {
            block: "[{rank}] {text}\n\n".into(),
            prompt: "{context}Question: {query}\nAnswer:".into(),
        }
    }
}

impl ContextTemplate {
    pub fn validate(&self) -> Result<()> {
        if !self.prompt.contains("{query}") {
            return Err(Error::config(
                "pipeline.template.prompt",
                "must contain `{query}`",
            ));
        }
        if !self.prompt.contains("{context}") {
            return Err(Error::config(
                "pipeline.template.prompt",
                "must contain `{context}`",
            ));
        }
        if !self.block.contains("{text}") {
            return Err(Error::config(
                "pipeline.template.block",
                "must contain `{text}`",
            ));
        }
        Ok(())
    }
}

/// Renders the reranked documents, in order, ahead of the query. No
/// documents gives the query-only prompt.
pub fn assemble_context(query: &str, docs: &[&Document], template: &ContextTemplate) -> String {
    let context: String = docs
        .iter()
        .enumerate()
        .map(|(i, d)| {
            template
                .block
                .replace("{rank}", &(i + 1).to_string())
                .replace("{id}", &d.id)
                .replace("{text}", &d.text)
        })
        .collect();
    template
        .prompt
        .replace("{context}", &context)
        .replace("{query}", query)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RankingMetrics {
    pub pairwise_accuracy: f64,
    pub kendall_tau: f64,
    pub ndcg_at_k: f64,
    pub k: usize,
    pub queries: usize,
    pub pairs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QueryMetrics {
    pub query: String,
    pub docs: usize,
    pub pairs: usize,
    pub pairwise_accuracy: f64,
    pub kendall_tau: f64,
    /// `None` when no document has positive gain.
    pub ndcg_at_k: Option<f64>,
}

/// One document of an evaluation group.
#[derive(Debug, Clone, PartialEq)]
pub struct Judged {
    pub doc_id: String,
    pub score: f64,
    pub mig: f64,
}

fn dcg(gains: impl Iterator<Item = f64>) -> f64 {
    gains
        .enumerate()
        .map(|(r, g)| g / ((r + 2) as f64).log2())
        .sum()
}

/// NDCG@k with gain `max(0, mig)`, ranking by score with id tie-break.
pub fn ndcg_at_k(group: &[Judged], k: usize) -> Option<f64> {
    let mut by_score: Vec<&Judged> = group.iter().collect();
    by_score.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then_with(|| a.doc_id.cmp(&b.doc_id))
    });
    let mut ideal: Vec<f64> = group.iter().map(|j| j.mig.max(0.0)).collect();
    ideal.sort_by(|a, b| b.total_cmp(a));
    let idcg = dcg(ideal.into_iter().take(k));
    if idcg <= 0.0 {
        return None;
    }
    let got = dcg(by_score.iter().take(k).map(|j| j.mig.max(0.0)));
    Some((got / idcg).clamp(0.0, 1.0))
}

/// Pairwise accuracy (micro-averaged over all evaluable pairs), Kendall
/// tau (macro-averaged over queries) and NDCG@k (macro-averaged over
/// queries with any positive gain).
///
/// A pair is evaluable when its two migs differ. Tau for a query is
/// `(concordant - discordant) / evaluable`, so score ties count as
/// neither.
pub fn ranking_metrics(
    groups: &[(String, Vec<Judged>)],
    k: usize,
) -> Result<(RankingMetrics, Vec<QueryMetrics>)> {
    if k == 0 {
        return Err(Error::InvalidInput("k must be >= 1".into()));
    }
    let mut per_query = Vec::new();
    let (mut total_pairs, mut total_correct) = (0usize, 0usize);
    for (query, group) in groups {
        if group.len() < 2 {
            log::warn!("query {query:?} has {} document(s); skipped", group.len());
            continue;
        }
        let (mut conc, mut disc, mut pairs) = (0usize, 0usize, 0usize);
        for i in 0..group.len() {
            for j in i + 1..group.len() {
                let dm = group[i].mig - group[j].mig;
                if dm == 0.0 {
                    continue;
                }
                pairs += 1;
                let ds = group[i].score - group[j].score;
                if ds * dm > 0.0 {
                    conc += 1;
                } else if ds * dm < 0.0 {
                    disc += 1;
                }
            }
        }
        if pairs == 0 {
            continue;
        }
        total_pairs += pairs;
        total_correct += conc;
        per_query.push(QueryMetrics {
            query: query.clone(),
            docs: group.len(),
            pairs,
            pairwise_accuracy: conc as f64 / pairs as f64,
            kendall_tau: (conc as f64 - disc as f64) / pairs as f64,
            ndcg_at_k: ndcg_at_k(group, k),
        });
    }
    if total_pairs == 0 {
        return Err(Error::NoEvaluablePairs);
    }
    let tau = per_query.iter().map(|q| q.kendall_tau).sum::<f64>() / per_query.len() as f64;
    let ndcgs: Vec<f64> = per_query.iter().filter_map(|q| q.ndcg_at_k).collect();
    let ndcg = if ndcgs.is_empty() {
        0.0
    } else {
        ndcgs.iter().sum::<f64>() / ndcgs.len() as f64
    };
    Ok((
        RankingMetrics {
            pairwise_accuracy: total_correct as f64 / total_pairs as f64,
            kendall_tau: tau,
            ndcg_at_k: ndcg,
            k,
            queries: per_query.len(),
            pairs: total_pairs,
        },
        per_query,
    ))
}

/// Groups scored triplets by query text, preserving order within groups.
pub fn group_by_query(scored: &[ScoredTriplet]) -> Vec<(String, Vec<&ScoredTriplet>)> {
    let mut groups: BTreeMap<&str, Vec<&ScoredTriplet>> = BTreeMap::new();
    for s in scored {
        groups.entry(s.triplet.query.as_str()).or_default().push(s);
    }
    groups
        .into_iter()
        .map(|(q, v)| (q.to_string(), v))
        .collect()
}

/// Scores every triplet with `model` and compares the resulting per-query
/// order with the mig order. Features use an idf table built from the
/// triplets' documents unless one is given.
pub fn eval_ranking(
    model: &RerankerModel,
    scored: &[ScoredTriplet],
    idf: Option<&IdfTable>,
    k: usize,
) -> Result<(RankingMetrics, Vec<QueryMetrics>)> {
    let owned;
    let idf = match idf {
        Some(t) => t,
        None => {
            let docs: Vec<&str> = scored.iter().map(|s| s.triplet.document.as_str()).collect();
            if docs.is_empty() {
                return Err(Error::NoEvaluablePairs);
            }
            owned = build_idf_table(&docs)?;
            &owned
        }
    };
    let mut groups = Vec::new();
    for (query, members) in group_by_query(scored) {
        let mut judged = Vec::with_capacity(members.len());
        for s in members {
            let f = featurize(
                &model.schema,
                &s.triplet.query,
                &s.triplet.document,
                Some(idf),
                None,
            )?;
            judged.push(Judged {
                doc_id: s.triplet.id.clone(),
                score: model.score(&f)?,
                mig: s.mig,
            });
        }
        groups.push((query, judged));
    }
    ranking_metrics(&groups, k)
}

pub fn metrics_csv(rows: &[QueryMetrics]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "query",
        "docs",
        "pairs",
        "pairwise_accuracy",
        "kendall_tau",
        "ndcg_at_k",
    ])
    .map_err(|e| Error::InvalidInput(e.to_string()))?;
    for r in rows {
        w.write_record([
            r.query.clone(),
            r.docs.to_string(),
            r.pairs.to_string(),
            r.pairwise_accuracy.to_string(),
            r.kendall_tau.to_string(),
            r.ndcg_at_k.map(|v| v.to_string()).unwrap_or_default(),
        ])
        .map_err(|e| Error::InvalidInput(e.to_string()))?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| Error::InvalidInput(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}
