//! Pointwise cross-entropy, pairwise RankNet, and their convex combination.

use serde::{Deserialize, Serialize};

use super::pairs::RankPair;
use crate::error::{Error, Result};

pub const PROB_CLAMP: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reduction {
    #[default]
    Sum,
    Mean,
}

pub fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
}

/// Mean binary cross-entropy with probabilities clamped to
/// `[1e-7, 1 - 1e-7]`.
pub fn ce_loss(probs: &[f64], labels: &[u8]) -> Result<f64> {
    if probs.is_empty() {
        return Err(Error::InvalidInput("empty batch".into()));
    }
    if probs.len() != labels.len() {
        return Err(Error::InvalidInput(format!(
            "{} probabilities but {} labels",
            probs.len(),
            labels.len()
        )));
    }
    let mut total = 0.0;
    for (&p, &y) in probs.iter().zip(labels) {
        if y > 1 || !(0.0..=1.0).contains(&p) {
            return Err(Error::InvalidInput(format!("bad example p={p}, y={y}")));
        }
        let p = clamp_prob(p);
        total += if y == 1 { -p.ln() } else { -(1.0 - p).ln() };
    }
    Ok(total / probs.len() as f64)
}

/// `ln(1 + exp(x))` without overflow.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// RankNet loss of one ordered pair with margin `s_pos - s_neg`.
pub fn ranknet_pair(margin: f64, sigma: f64) -> f64 {
    softplus(-sigma * margin)
}

pub fn ranknet_loss(
    pairs: &[RankPair],
    scores: &[f64],
    sigma: f64,
    reduction: Reduction,
) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::InvalidInput("empty pair set".into()));
    }
    let mut total = 0.0;
    for p in pairs {
        let (Some(si), Some(sj)) = (scores.get(p.positive), scores.get(p.negative)) else {
            return Err(Error::InvalidInput(format!(
                "pair ({}, {}) out of range for {} scores",
                p.positive,
                p.negative,
                scores.len()
            )));
        };
        total += ranknet_pair(si - sj, sigma);
    }
    Ok(match reduction {
        Reduction::Sum => total,
        Reduction::Mean => total / pairs.len() as f64,
    })
}

/// `alpha * ce + (1 - alpha) * rank`; the endpoints return the component
/// unchanged.
pub fn hybrid_loss(alpha: f64, l_ce: f64, l_rank: f64) -> f64 {
    if alpha == 1.0 {
        l_ce
    } else if alpha == 0.0 {
        l_rank
    } else {
        alpha * l_ce + (1.0 - alpha) * l_rank
    }
}
