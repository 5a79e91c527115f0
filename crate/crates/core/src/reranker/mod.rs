//! Small trainable reranker over hand-built (query, document) features,
//! trained with a convex mix of pointwise cross-entropy and pairwise
//! RankNet loss against information-gain labels.

pub mod features;
pub mod grad;
pub mod loss;
pub mod model;
pub mod pairs;
pub mod train;

pub use features::{featurize, FeatureSchema, FeatureVector};
pub use grad::{batch_loss, gradients, Batch, LossParts};
pub use loss::{ce_loss, hybrid_loss, ranknet_loss, Reduction};
pub use model::{Architecture, RerankerModel};
pub use pairs::{sample_pairs, PairPolicy, PairSource, RankPair};
pub use train::{
    featurize_examples, train, EpochLoss, OptimizerKind, TrainConfig, TrainExample, TrainOutcome,
};
