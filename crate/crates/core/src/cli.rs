//! Command implementations behind the `migrank` binary. Each command reads
//! its inputs, calls into the library, writes its outputs and returns the
//! text it would print, so tests can drive them without a subprocess.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::confidence::build_idf_table;
use crate::config::AppConfig;
use crate::error::{Error, Result};
use crate::hash::sha256_hex;
use crate::jsonl;
use crate::mig::{
    build_dataset, dataset_stats, score_all, LabeledExample, LabelingConfig, ScoredRecord,
    ScoredTriplet, Triplet,
};
use crate::pipeline::{
    assemble_context, eval_ranking, metrics_csv, rerank, tfidf_retrieve, Corpus,
};
use crate::reranker::train::history_csv;
use crate::reranker::{featurize_examples, train, FeatureSchema, RerankerModel, TrainConfig};
use crate::teacher::http::fetch_many;
use crate::teacher::records::records_to_string;
use crate::teacher::{load_logprob_records, LogprobRecord, RecordTeacher, Variant};

pub fn load_triplets(path: &Path) -> Result<Vec<Triplet>> {
    let triplets: Vec<Triplet> = jsonl::read_values(path)?;
    for t in &triplets {
        t.validate()?;
    }
    crate::mig::check_unique_ids(&triplets)?;
    Ok(triplets)
}

pub fn load_scored(path: &Path) -> Result<Vec<ScoredTriplet>> {
    jsonl::read_values::<ScoredRecord>(path)?
        .iter()
        .map(ScoredRecord::to_scored)
        .collect()
}

pub fn load_labeled(path: &Path) -> Result<Vec<LabeledExample>> {
    jsonl::read_values::<ScoredRecord>(path)?
        .iter()
        .map(|r| {
            let label = r.label.ok_or_else(|| Error::InvalidRecord {
                id: r.id.clone(),
                message: "missing label; run build-dataset first".into(),
            })?;
            Ok(LabeledExample {
                scored: r.to_scored()?,
                label,
            })
        })
        .collect()
}

fn cache_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".cache.json");
    PathBuf::from(s)
}

#[derive(Debug, Default, Serialize, Deserialize)]
struct TeachCache {
    /// triplet id -> hash of (triplet content, teacher descriptor)
    entries: BTreeMap<String, String>,
}

fn teach_key(t: &Triplet, teacher: &str) -> String {
    let body = serde_json::to_string(t).expect("triplet serializes");
    sha256_hex(format!("{body}\n{teacher}").as_bytes())
}

/// Fetches with- and without-document logprob records for every triplet.
/// Triplets whose content and teacher are unchanged since the last run are
/// served from the existing output file.
pub fn cmd_teach(cfg: &AppConfig, triplets_path: &Path, out: &Path) -> Result<String> {
    let triplets = load_triplets(triplets_path)?;
    let teacher = cfg.teacher()?;
    let descriptor = teacher.descriptor();

    let cache_file = cache_path(out);
    let (old_cache, old_records) = if out.exists() && cache_file.exists() {
        let text = std::fs::read_to_string(&cache_file).map_err(|e| Error::io(&cache_file, e))?;
        let cache: TeachCache = serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: cache_file.clone(),
            line: 1,
            message: e.to_string(),
        })?;
        let records: HashMap<(String, Variant), LogprobRecord> = load_logprob_records(out)?
            .into_iter()
            .map(|r| ((r.triplet_id.clone(), r.variant.clone()), r))
            .collect();
        (cache, records)
    } else {
        (TeachCache::default(), HashMap::new())
    };

    let variants = [Variant::WithDoc, Variant::WithoutDoc];
    let mut new_cache = TeachCache::default();
    let mut jobs = Vec::new();
    let mut cached = 0;
    for t in &triplets {
        let key = teach_key(t, &descriptor);
        let hit = old_cache.entries.get(&t.id) == Some(&key)
            && variants
                .iter()
                .all(|v| old_records.contains_key(&(t.id.clone(), v.clone())));
        if hit {
            cached += 1;
        } else {
            for v in &variants {
                jobs.push((t.id.clone(), v.clone(), t.request(v)?));
            }
        }
        new_cache.entries.insert(t.id.clone(), key);
    }

    let in_flight = cfg.teacher.client.max_in_flight.max(cfg.jobs);
    let mut fresh: HashMap<(String, Variant), LogprobRecord> = HashMap::new();
    for (id, variant, res) in fetch_many(teacher.as_ref(), &jobs, in_flight) {
        let sequence = res.map_err(|e| Error::Triplet {
            id: id.clone(),
            source: Box::new(e),
        })?;
        fresh.insert(
            (id.clone(), variant.clone()),
            LogprobRecord {
                triplet_id: id,
                variant,
                sequence,
            },
        );
    }

    let mut records = Vec::with_capacity(triplets.len() * 2);
    for t in &triplets {
        for v in &variants {
            let key = (t.id.clone(), v.clone());
            let rec = fresh
                .remove(&key)
                .or_else(|| old_records.get(&key).cloned())
                .expect("every triplet is fetched or cached");
            records.push(rec);
        }
    }
    jsonl::write_text(out, &records_to_string(&records)?)?;
    let cache_text = serde_json::to_string_pretty(&new_cache).expect("cache serializes");
    jsonl::write_text(&cache_file, &(cache_text + "\n"))?;
    log::info!(
        "teach: wrote {} records to {}",
        records.len(),
        out.display()
    );
    Ok(format!(
        "{}\n",
        json!({"triplets": triplets.len(), "fetched": triplets.len() - cached, "cached": cached, "records": records.len(), "out": out})
    ))
}

/// Scores triplets into information-gain records, using `logprobs` records
/// when given and the configured teacher otherwise.
pub fn cmd_score(
    cfg: &AppConfig,
    triplets_path: &Path,
    logprobs: Option<&Path>,
    out: &Path,
) -> Result<String> {
    let triplets = load_triplets(triplets_path)?;
    let docs: Vec<&str> = triplets.iter().map(|t| t.document.as_str()).collect();
    let strategy = cfg.strategy(&docs)?;
    let scored = match logprobs {
        Some(p) => score_all(
            &triplets,
            &RecordTeacher::new(load_logprob_records(p)?),
            &strategy,
            cfg.jobs,
        )?,
        None => score_all(&triplets, cfg.teacher()?.as_ref(), &strategy, cfg.jobs)?,
    };
    let records: Vec<ScoredRecord> = scored
        .iter()
        .map(|s| ScoredRecord::from_scored(s, None))
        .collect();
    jsonl::write(out, &records)?;
    let mean = scored.iter().map(|s| s.mig).sum::<f64>() / scored.len().max(1) as f64;
    Ok(format!(
        "{}\n",
        json!({"scored": scored.len(), "strategy": strategy.descriptor(), "mean_mig": mean, "out": out})
    ))
}

pub fn cmd_build_dataset(cfg: &AppConfig, scored_path: &Path, out: &Path) -> Result<String> {
    let scored = load_scored(scored_path)?;
    let ds = build_dataset(
        &scored,
        &cfg.labeling.thresholds(),
        cfg.seed,
        cfg.labeling.balance,
    )?;
    let records: Vec<ScoredRecord> = ds.examples.iter().map(LabeledExample::to_record).collect();
    jsonl::write(out, &records)?;
    let stats = dataset_stats(&ds, cfg.labeling.bin_width);
    Ok(serde_json::to_string_pretty(&stats).expect("stats serialize") + "\n")
}

pub fn history_path(model_out: &Path) -> PathBuf {
    let mut s = model_out.as_os_str().to_owned();
    s.push(".history.csv");
    PathBuf::from(s)
}

fn featurize_dataset(dataset: &[LabeledExample]) -> Result<Vec<crate::reranker::TrainExample>> {
    let docs: Vec<&str> = dataset
        .iter()
        .map(|e| e.scored.triplet.document.as_str())
        .collect();
    let idf = build_idf_table(&docs)?;
    featurize_examples(dataset, &FeatureSchema::builtin(), Some(&idf))
}

pub fn cmd_train(cfg: &AppConfig, dataset_path: &Path, model_out: &Path) -> Result<String> {
    let dataset = load_labeled(dataset_path)?;
    if dataset.is_empty() {
        return Err(Error::InvalidInput(format!(
            "{}: empty dataset",
            dataset_path.display()
        )));
    }
    let examples = featurize_dataset(&dataset)?;
    let outcome = train(&examples, &cfg.train)?;
    outcome.model.save(model_out)?;
    let hist = history_path(model_out);
    jsonl::write_text(&hist, &history_csv(&outcome.history))?;
    let last = outcome.history.last().expect("epochs >= 1");
    Ok(format!(
        "{}\n",
        json!({
            "examples": examples.len(),
            "pairs": outcome.pair_count,
            "epochs": outcome.history.len(),
            "final_ce": last.ce,
            "final_rank": last.rank,
            "final_total": last.total,
            "model": model_out,
            "history": hist,
            "content_hash": outcome.model.content_hash(),
        })
    ))
}

pub fn cmd_rerank(
    cfg: &AppConfig,
    model_path: &Path,
    corpus_path: &Path,
    query: &str,
    k: usize,
) -> Result<String> {
    if k == 0 {
        return Err(Error::InvalidInput("k must be >= 1".into()));
    }
    let model = RerankerModel::load(model_path)?;
    let corpus = Corpus::load(corpus_path)?;
    let candidates = tfidf_retrieve(query, &corpus, cfg.pipeline.candidates)?;
    let top = rerank(&model, query, &candidates, &corpus, k)?;
    let docs: Vec<_> = top
        .iter()
        .map(|(id, _)| corpus.get(id).expect("reranked ids come from the corpus"))
        .collect();
    let mut out = String::new();
    for (rank, (id, score)) in top.iter().enumerate() {
        writeln!(out, "{}\t{}\t{}", rank + 1, id, score).unwrap();
    }
    out.push('\n');
    out.push_str(&assemble_context(query, &docs, &cfg.pipeline.template));
    out.push('\n');
    Ok(out)
}

pub fn cmd_eval(
    cfg: &AppConfig,
    model_path: &Path,
    scored_path: &Path,
    csv_out: Option<&Path>,
) -> Result<String> {
    let model = RerankerModel::load(model_path)?;
    let scored = load_scored(scored_path)?;
    let (metrics, rows) = eval_ranking(&model, &scored, None, cfg.pipeline.k)?;
    if let Some(p) = csv_out {
        jsonl::write_text(p, &metrics_csv(&rows)?)?;
    }
    Ok(serde_json::to_string_pretty(&metrics).expect("metrics serialize") + "\n")
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub tau: f64,
    pub alpha: f64,
    pub condition: &'static str,
    pub status: String,
    pub train_examples: usize,
    pub pairs: usize,
    pub final_loss: f64,
    pub pairwise_accuracy: f64,
    pub kendall_tau: f64,
    pub ndcg_at_k: f64,
    pub model_hash: String,
}

/// Ablation names for the loss mix.
pub fn condition(alpha: f64) -> &'static str {
    if alpha == 1.0 {
        "CE Loss"
    } else if alpha == 0.0 {
        "RankNet Loss"
    } else {
        "Multi-Loss"
    }
}

/// Splits queries into train and held-out sets, then for every labeling
/// threshold `tau` (b1 = tau, b2 = -tau) and loss weight `alpha` trains a
/// model on the train split and evaluates it on all held-out triplets.
pub fn run_sweep(
    cfg: &AppConfig,
    scored: &[ScoredTriplet],
    alphas: &[f64],
    taus: &[f64],
) -> Result<Vec<SweepRow>> {
    let mut queries: Vec<&str> = scored
        .iter()
        .map(|s| s.triplet.query.as_str())
        .collect::<HashSet<_>>()
        .into_iter()
        .collect();
    queries.sort_unstable();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    queries.shuffle(&mut rng);
    let n_hold = ((queries.len() as f64) * cfg.sweep.holdout_fraction)
        .round()
        .max(1.0) as usize;
    if n_hold >= queries.len() {
        return Err(Error::InvalidInput(format!(
            "sweep needs at least two queries, got {}",
            queries.len()
        )));
    }
    let held: HashSet<&str> = queries[..n_hold].iter().copied().collect();
    let (held_out, train_part): (Vec<ScoredTriplet>, Vec<ScoredTriplet>) = scored
        .iter()
        .cloned()
        .partition(|s| held.contains(s.triplet.query.as_str()));

    let mut rows = Vec::new();
    for &tau in taus {
        let labeling = LabelingConfig::symmetric(tau);
        let examples = build_dataset(&train_part, &labeling, cfg.seed, cfg.labeling.balance)
            .and_then(|ds| featurize_dataset(&ds.examples));
        for &alpha in alphas {
            let mut row = SweepRow {
                tau,
                alpha,
                condition: condition(alpha),
                status: "ok".into(),
                train_examples: 0,
                pairs: 0,
                final_loss: f64::NAN,
                pairwise_accuracy: f64::NAN,
                kendall_tau: f64::NAN,
                ndcg_at_k: f64::NAN,
                model_hash: String::new(),
            };
            let examples = match &examples {
                Ok(ex) => ex,
                Err(e) => {
                    log::warn!("sweep tau={tau}: {e}");
                    row.status = e.kind().into();
                    rows.push(row);
                    continue;
                }
            };
            let tcfg = TrainConfig {
                alpha,
                ..cfg.train.clone()
            };
            let outcome = train(examples, &tcfg)?;
            let (metrics, _) = eval_ranking(&outcome.model, &held_out, None, cfg.pipeline.k)?;
            row.train_examples = examples.len();
            row.pairs = outcome.pair_count;
            row.final_loss = outcome.history.last().map_or(f64::NAN, |h| h.total);
            row.pairwise_accuracy = metrics.pairwise_accuracy;
            row.kendall_tau = metrics.kendall_tau;
            row.ndcg_at_k = metrics.ndcg_at_k;
            row.model_hash = outcome.model.content_hash();
            rows.push(row);
        }
    }
    Ok(rows)
}

pub fn sweep_csv(rows: &[SweepRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)
            .map_err(|e| Error::InvalidInput(e.to_string()))?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| Error::InvalidInput(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn cmd_sweep(
    cfg: &AppConfig,
    dataset_path: &Path,
    alphas: &[f64],
    taus: &[f64],
    out: Option<&Path>,
) -> Result<String> {
    for a in alphas {
        if !(0.0..=1.0).contains(a) {
            return Err(Error::config("sweep.alphas", format!("{a} outside [0, 1]")));
        }
    }
    let scored = load_scored(dataset_path)?;
    let rows = run_sweep(cfg, &scored, alphas, taus)?;
    let csv = sweep_csv(&rows)?;
    if let Some(p) = out {
        jsonl::write_text(p, &csv)?;
    }
    Ok(csv)
}
