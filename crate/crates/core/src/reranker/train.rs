use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::features::{featurize, FeatureSchema, FeatureVector, BUILTIN_DIM};
use super::grad::{batch_loss, gradients, Batch, LossParts};
use super::loss::Reduction;
use super::model::{Architecture, RerankerModel};
use super::pairs::{sample_pairs, PairPolicy, PairSource, RankPair};
use crate::confidence::IdfTable;
use crate::error::{Error, Result};
use crate::mig::LabeledExample;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    #[default]
    Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub alpha: f64,
    pub sigma: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub pair_cap: usize,
    pub pair_policy: PairPolicy,
    pub rank_reduction: Reduction,
    pub optimizer: OptimizerKind,
    pub architecture: Architecture,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            alpha: 0.74,
            sigma: 1.0,
            learning_rate: 0.01,
            epochs: 50,
            batch_size: 32,
            pair_cap: 64,
            pair_policy: PairPolicy::Label,
            rank_reduction: Reduction::Sum,
            optimizer: OptimizerKind::Adam,
            architecture: Architecture::Linear,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, msg: String| Err(Error::config(format!("train.{key}"), msg));
        if !(0.0..=1.0).contains(&self.alpha) {
            return bad("alpha", format!("{} outside [0, 1]", self.alpha));
        }
        if !(self.sigma > 0.0) {
            return bad("sigma", format!("{} must be > 0", self.sigma));
        }
        if !(self.learning_rate > 0.0) {
            return bad(
                "learning_rate",
                format!("{} must be > 0", self.learning_rate),
            );
        }
        if self.epochs == 0 {
            return bad("epochs", "must be >= 1".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size", "must be >= 1".into());
        }
        if self.pair_cap == 0 {
            return bad("pair_cap", "must be >= 1".into());
        }
        if let Architecture::Mlp { hidden_units: 0 } = self.architecture {
            return bad("architecture", "mlp needs hidden_units >= 1".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainExample {
    pub query_id: String,
    pub features: FeatureVector,
    pub label: u8,
    pub mig: f64,
}

impl PairSource for TrainExample {
    fn query_id(&self) -> &str {
        &self.query_id
    }
    fn label(&self) -> u8 {
        self.label
    }
    fn mig(&self) -> f64 {
        self.mig
    }
}

pub fn featurize_examples(
    dataset: &[LabeledExample],
    schema: &FeatureSchema,
    idf: Option<&IdfTable>,
) -> Result<Vec<TrainExample>> {
    dataset
        .iter()
        .map(|ex| {
            let t = &ex.scored.triplet;
            Ok(TrainExample {
                query_id: t.query.clone(),
                features: featurize(schema, &t.query, &t.document, idf, None)?,
                label: ex.label,
                mig: ex.scored.mig,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub ce: f64,
    pub rank: f64,
    pub total: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: RerankerModel,
    pub history: Vec<EpochLoss>,
    pub pair_count: usize,
}

enum Optimizer {
    Sgd {
        lr: f64,
    },
    Adam {
        lr: f64,
        m: Vec<f64>,
        v: Vec<f64>,
        t: i32,
    },
}

impl Optimizer {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(kind: OptimizerKind, lr: f64, n: usize) -> Self {
        match kind {
            OptimizerKind::Sgd => Optimizer::Sgd { lr },
            OptimizerKind::Adam => Optimizer::Adam {
                lr,
                m: vec![0.0; n],
                v: vec![0.0; n],
                t: 0,
            },
        }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        match self {
            Optimizer::Sgd { lr } => {
                for (p, g) in params.iter_mut().zip(grad) {
                    *p -= *lr * g;
                }
            }
            Optimizer::Adam { lr, m, v, t } => {
                *t += 1;
                let c1 = 1.0 - Self::BETA1.powi(*t);
                let c2 = 1.0 - Self::BETA2.powi(*t);
                for i in 0..params.len() {
                    m[i] = Self::BETA1 * m[i] + (1.0 - Self::BETA1) * grad[i];
                    v[i] = Self::BETA2 * v[i] + (1.0 - Self::BETA2) * grad[i] * grad[i];
                    let mh = m[i] / c1;
                    let vh = v[i] / c2;
                    params[i] -= *lr * mh / (vh.sqrt() + Self::EPS);
                }
            }
        }
    }
}

fn schema_of(examples: &[TrainExample]) -> Result<FeatureSchema> {
    let first = &examples[0].features;
    if first.values.len() < BUILTIN_DIM {
        return Err(Error::SchemaMismatch {
            expected: FeatureSchema::builtin().id(),
            got: first.schema_id.clone(),
        });
    }
    let schema = FeatureSchema {
        extra_dim: first.values.len() - BUILTIN_DIM,
    };
    for ex in examples {
        if ex.features.schema_id != schema.id() || ex.features.values.len() != schema.dim() {
            return Err(Error::SchemaMismatch {
                expected: schema.id(),
                got: ex.features.schema_id.clone(),
            });
        }
    }
    Ok(schema)
}

/// Mini-batch training of the hybrid objective. Initialization, pair
/// sampling and per-epoch shuffling all derive from `cfg.seed`.
///
/// Each epoch splits the shuffled examples into `ceil(n / batch_size)`
/// batches and deals the shuffled pairs over the same number of steps.
/// The recorded history is the full-dataset objective after each epoch.
pub fn train(examples: &[TrainExample], cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    if examples.is_empty() {
        return Err(Error::InvalidInput("empty training set".into()));
    }
    let schema = schema_of(examples)?;
    let mut model = RerankerModel::init(cfg.architecture, schema, cfg.seed)?;
    let pairs = sample_pairs(
        examples,
        cfg.pair_policy,
        cfg.pair_cap,
        cfg.seed.wrapping_add(1),
    );
    if pairs.is_empty() && cfg.alpha < 1.0 {
        log::warn!(
            "no training pairs; the ranking term is empty and only cross-entropy is optimized"
        );
    }

    let features: Vec<Vec<f64>> = examples.iter().map(|e| e.features.values.clone()).collect();
    let labels: Vec<u8> = examples.iter().map(|e| e.label).collect();
    let all: Vec<usize> = (0..examples.len()).collect();
    let full = Batch {
        features: &features,
        labels: &labels,
        examples: &all,
        pairs: &pairs,
    };

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(2));
    let mut opt = Optimizer::new(cfg.optimizer, cfg.learning_rate, model.params.len());
    let steps = examples.len().div_ceil(cfg.batch_size);
    let pair_chunk = pairs.len().div_ceil(steps).max(1);
    let mut order = all.clone();
    let mut pair_order: Vec<RankPair> = pairs.clone();
    let mut history = Vec::with_capacity(cfg.epochs);

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        pair_order.shuffle(&mut rng);
        for step in 0..steps {
            let ex = &order[step * cfg.batch_size..((step + 1) * cfg.batch_size).min(order.len())];
            let lo = (step * pair_chunk).min(pair_order.len());
            let hi = ((step + 1) * pair_chunk).min(pair_order.len());
            let batch = Batch {
                features: &features,
                labels: &labels,
                examples: ex,
                pairs: &pair_order[lo..hi],
            };
            let grad = gradients(&model, &batch, cfg)?;
            opt.step(&mut model.params, &grad);
        }
        let LossParts { ce, rank, total } = batch_loss(&model, &full, cfg);
        if !total.is_finite() {
            return Err(Error::Diverged { epoch, loss: total });
        }
        log::debug!("epoch {epoch}: ce={ce:.6} rank={rank:.6} total={total:.6}");
        history.push(EpochLoss {
            epoch,
            ce,
            rank,
            total,
        });
    }

    model.train_config = Some(cfg.clone());
    Ok(TrainOutcome {
        model,
        history,
        pair_count: pairs.len(),
    })
}

pub fn history_csv(history: &[EpochLoss]) -> String {
    let mut out = String::from("epoch,ce,rank,total\n");
    for h in history {
        out.push_str(&format!("{},{},{},{}\n", h.epoch, h.ce, h.rank, h.total));
    }
    out
}
