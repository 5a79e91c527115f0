//! Seeded synthetic corpora for tests, benchmarks and demos.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::confidence::{ConfidenceValue, Scale};
use crate::mig::{LabeledExample, ScoredTriplet, Triplet};

fn word(prefix: &str, i: usize) -> String {
    format!("{prefix}{i}")
}

fn filler(rng: &mut ChaCha8Rng, len: std::ops::Range<usize>) -> Vec<String> {
    let n = rng.gen_range(len);
    (0..n)
        .map(|_| word("fill", rng.gen_range(0..200)))
        .collect()
}

fn scored(triplet: Triplet, mig: f64) -> ScoredTriplet {
    // split the gain around 0.5 so both confidences stay in (0, 1)
    ScoredTriplet::new(
        triplet,
        ConfidenceValue {
            value: 0.5 + mig / 2.0,
            scale: Scale::Probability,
        },
        ConfidenceValue {
            value: 0.5 - mig / 2.0,
            scale: Scale::Probability,
        },
    )
    .expect("same scale")
}

/// One query per group; the positive document contains every query term,
/// negatives contain none. Positives have mig 0.5, negatives -0.5.
pub fn separable_examples(queries: usize, negatives: usize, seed: u64) -> Vec<LabeledExample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(queries * (negatives + 1));
    for q in 0..queries {
        let terms: Vec<String> = (0..3).map(|j| word("topic", q * 3 + j)).collect();
        let query = terms.join(" ");
        let answer = word("ans", q);
        for d in 0..=negatives {
            let mut body = filler(&mut rng, 4..12);
            let positive = d == 0;
            if positive {
                body.extend(terms.iter().cloned());
            }
            body.shuffle(&mut rng);
            let t = Triplet {
                id: format!("q{q:04}-d{d}"),
                query: query.clone(),
                answer: answer.clone(),
                document: body.join(" "),
                attachments: vec![],
            };
            out.push(LabeledExample {
                scored: scored(t, if positive { 0.5 } else { -0.5 }),
                label: positive as u8,
            });
        }
    }
    out
}

/// A query with one relevant document (holding at least 60% of the answer
/// tokens) and one irrelevant document (holding none).
#[derive(Debug, Clone)]
pub struct RelevancePair {
    pub relevant: Triplet,
    pub irrelevant: Triplet,
}

pub fn relevance_pairs(n: usize, seed: u64) -> Vec<RelevancePair> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let len = rng.gen_range(1..=10);
            let answer: Vec<String> = (0..len).map(|j| word(&format!("a{i}x"), j)).collect();
            let covered = ((len as f64) * 0.6).ceil() as usize;
            let mut picks = answer.clone();
            picks.shuffle(&mut rng);
            let mut relevant_doc = filler(&mut rng, 3..10);
            relevant_doc.extend(picks.into_iter().take(covered));
            relevant_doc.shuffle(&mut rng);
            let query = format!("question {i} about {}", word("subject", i));
            let mk = |suffix: &str, doc: Vec<String>| Triplet {
                id: format!("t{i:05}-{suffix}"),
                query: query.clone(),
                answer: answer.join(" "),
                document: doc.join(" "),
                attachments: vec![],
            };
            RelevancePair {
                relevant: mk("rel", relevant_doc),
                irrelevant: mk("irr", filler(&mut rng, 3..10)),
            }
        })
        .collect()
}

/// Graded benchmark: each query has `docs` documents whose query-term
/// coverage is uniform in [0, 1]; mig is a noisy linear function of the
/// coverage, so the features predict it only approximately.
pub fn graded_scored(queries: usize, docs: usize, noise: f64, seed: u64) -> Vec<ScoredTriplet> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(queries * docs);
    for q in 0..queries {
        let terms: Vec<String> = (0..5).map(|j| word("topic", q * 5 + j)).collect();
        for d in 0..docs {
            let keep = rng.gen_range(0..=terms.len());
            let mut chosen = terms.clone();
            chosen.shuffle(&mut rng);
            let mut body = filler(&mut rng, 3..10);
            body.extend(chosen.into_iter().take(keep));
            body.shuffle(&mut rng);
            let coverage = keep as f64 / terms.len() as f64;
            let eps: f64 = rng.gen_range(-1.0..1.0) * noise;
            let mig = (0.9 * coverage - 0.45 + eps).clamp(-0.95, 0.95);
            let t = Triplet {
                id: format!("g{q:04}-{d:02}"),
                query: terms.join(" "),
                answer: word("ans", q),
                document: body.join(" "),
                attachments: vec![],
            };
            out.push(scored(t, mig));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::text::tokenize;
    use std::collections::HashSet;

    #[test]
    fn relevance_coverage_holds() {
        for p in relevance_pairs(200, 1) {
            let answer: HashSet<String> = tokenize(&p.relevant.answer).into_iter().collect();
            let rel: HashSet<String> = tokenize(&p.relevant.document).into_iter().collect();
            let irr: HashSet<String> = tokenize(&p.irrelevant.document).into_iter().collect();
            let hit = answer.intersection(&rel).count() as f64;
            assert!(hit / answer.len() as f64 >= 0.6);
            assert_eq!(answer.intersection(&irr).count(), 0);
        }
    }

    #[test]
    fn separable_is_deterministic() {
        assert_eq!(separable_examples(5, 3, 2), separable_examples(5, 3, 2));
        assert_eq!(separable_examples(5, 3, 2).len(), 20);
    }
}
