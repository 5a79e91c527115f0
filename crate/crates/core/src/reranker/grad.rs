//! Hybrid objective and its analytic gradient with respect to the model
//! parameters.

use super::loss::{clamp_prob, hybrid_loss, ranknet_pair, Reduction, PROB_CLAMP};
use super::model::RerankerModel;
use super::pairs::RankPair;
use super::train::TrainConfig;
use crate::error::{Error, Result};
use crate::teacher::logistic;

/// A slice of a featurized dataset: the examples entering the
/// cross-entropy term and the pairs entering the RankNet term. Both index
/// into `features` / `labels`.
#[derive(Debug, Clone, Copy)]
pub struct Batch<'a> {
    pub features: &'a [Vec<f64>],
    pub labels: &'a [u8],
    pub examples: &'a [usize],
    pub pairs: &'a [RankPair],
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossParts {
    pub ce: f64,
    pub rank: f64,
    pub total: f64,
}

fn ce_term(p: f64, y: u8) -> f64 {
    let p = clamp_prob(p);
    if y == 1 {
        -p.ln()
    } else {
        -(1.0 - p).ln()
    }
}

/// Empty example or pair lists contribute zero to their term.
pub fn batch_loss(model: &RerankerModel, batch: &Batch<'_>, cfg: &TrainConfig) -> LossParts {
    let score = |i: usize| model.score_values(&batch.features[i]);
    let ce = if batch.examples.is_empty() {
        0.0
    } else {
        batch
            .examples
            .iter()
            .map(|&i| ce_term(logistic(score(i)), batch.labels[i]))
            .sum::<f64>()
            / batch.examples.len() as f64
    };
    let rank = if batch.pairs.is_empty() {
        0.0
    } else {
        let sum: f64 = batch
            .pairs
            .iter()
            .map(|p| ranknet_pair(score(p.positive) - score(p.negative), cfg.sigma))
            .sum();
        match cfg.rank_reduction {
            Reduction::Sum => sum,
            Reduction::Mean => sum / batch.pairs.len() as f64,
        }
    };
    LossParts {
        ce,
        rank,
        total: hybrid_loss(cfg.alpha, ce, rank),
    }
}

/// Gradient of `batch_loss(..).total`. Examples whose probability sits on
/// the clamp boundary contribute zero, matching the clamped loss.
pub fn gradients(model: &RerankerModel, batch: &Batch<'_>, cfg: &TrainConfig) -> Result<Vec<f64>> {
    let mut ds: Vec<(usize, f64)> = Vec::new();
    if !batch.examples.is_empty() && cfg.alpha != 0.0 {
        let n = batch.examples.len() as f64;
        for &i in batch.examples {
            let p = logistic(model.score_values(&batch.features[i]));
            if p <= PROB_CLAMP || p >= 1.0 - PROB_CLAMP {
                continue;
            }
            let y = batch.labels[i] as f64;
            ds.push((i, cfg.alpha * (p - y) / n));
        }
    }
    if !batch.pairs.is_empty() && cfg.alpha != 1.0 {
        let reduce = match cfg.rank_reduction {
            Reduction::Sum => 1.0,
            Reduction::Mean => 1.0 / batch.pairs.len() as f64,
        };
        for p in batch.pairs {
            let margin = model.score_values(&batch.features[p.positive])
                - model.score_values(&batch.features[p.negative]);
            // d/dm ln(1 + exp(-sigma m)) = -sigma * logistic(-sigma m)
            let g = (1.0 - cfg.alpha) * reduce * -cfg.sigma * logistic(-cfg.sigma * margin);
            ds.push((p.positive, g));
            ds.push((p.negative, -g));
        }
    }

    let mut grad = vec![0.0; model.params.len()];
    for (i, g) in ds {
        model.accumulate_score_grad(&batch.features[i], g, &mut grad);
    }
    if let Some(index) = grad.iter().position(|g| !g.is_finite()) {
        return Err(Error::NonFiniteGradient { index });
    }
    Ok(grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reranker::features::FeatureSchema;
    use crate::reranker::model::Architecture;

    #[test]
    fn zero_alpha_ignores_ce_labels() {
        let m = RerankerModel::init(Architecture::Linear, FeatureSchema::builtin(), 0).unwrap();
        let features = vec![vec![1.0, 0.0, 0.0, 1.0, 1.0], vec![0.0, 0.5, 0.1, 0.0, 1.0]];
        let pairs = [RankPair {
            query_id: "q".into(),
            positive: 0,
            negative: 1,
        }];
        let cfg = TrainConfig {
            alpha: 0.0,
            ..Default::default()
        };
        let g1 = gradients(
            &m,
            &Batch {
                features: &features,
                labels: &[1, 0],
                examples: &[0, 1],
                pairs: &pairs,
            },
            &cfg,
        )
        .unwrap();
        let g2 = gradients(
            &m,
            &Batch {
                features: &features,
                labels: &[0, 1],
                examples: &[0, 1],
                pairs: &pairs,
            },
            &cfg,
        )
        .unwrap();
        assert_eq!(g1, g2);
    }

    #[test]
    fn non_finite_gradient_reported() {
        let mut m = RerankerModel::zeros(Architecture::Linear, FeatureSchema::builtin());
        m.params[0] = 0.0;
        let features = vec![vec![f64::INFINITY, 0.0, 0.0, 0.0, 1.0], vec![0.0; 5]];
        let pairs = [RankPair {
            query_id: "q".into(),
            positive: 0,
            negative: 1,
        }];
        let cfg = TrainConfig {
            alpha: 0.0,
            ..Default::default()
        };
        let err = gradients(
            &m,
            &Batch {
                features: &features,
                labels: &[1, 0],
                examples: &[],
                pairs: &pairs,
            },
            &cfg,
        )
        .unwrap_err();
        assert!(matches!(err, Error::NonFiniteGradient { .. }));
    }
}
