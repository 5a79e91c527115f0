use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::features::{FeatureSchema, FeatureVector};
use super::train::TrainConfig;
use crate::error::{Error, Result};
use crate::hash::sha256_hex;
use crate::teacher::logistic;

pub const MODEL_VERSION: &str = "mig-rerank-model/1";
pub const INIT_RANGE: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Architecture {
    #[default]
    Linear,
    Mlp {
        hidden_units: usize,
    },
}

impl Architecture {
    pub fn param_count(&self, dim: usize) -> usize {
        match *self {
            Architecture::Linear => dim,
            Architecture::Mlp { hidden_units: h } => h * dim + h + h + 1,
        }
    }
}

/// Scalar scorer over feature vectors.
///
/// Parameters live in one flat vector. Linear: `w[dim]`. MLP:
/// `W1[h][dim]` row-major, then `b1[h]`, `w2[h]`, `b2`.
#[derive(Debug, Clone, PartialEq)]
pub struct RerankerModel {
    pub architecture: Architecture,
    pub schema: FeatureSchema,
    pub params: Vec<f64>,
    pub train_config: Option<TrainConfig>,
}

impl RerankerModel {
    pub fn zeros(architecture: Architecture, schema: FeatureSchema) -> Self {
        let n = architecture.param_count(schema.dim());
        Self {
            architecture,
            schema,
            params: vec![0.0; n],
            train_config: None,
        }
    }

    /// Weights uniform in `(-0.1, 0.1)`, biases zero.
    pub fn init(architecture: Architecture, schema: FeatureSchema, seed: u64) -> Result<Self> {
        if let Architecture::Mlp { hidden_units: 0 } = architecture {
            return Err(Error::InvalidInput("mlp needs hidden_units >= 1".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut model = Self::zeros(architecture, schema);
        let dim = schema.dim();
        let weights = match architecture {
            Architecture::Linear => 0..dim,
            Architecture::Mlp { hidden_units: h } => 0..h * dim,
        };
        for i in weights {
            model.params[i] = rng.gen_range(-INIT_RANGE..INIT_RANGE);
        }
        if let Architecture::Mlp { hidden_units: h } = architecture {
            let w2 = h * dim + h;
            for i in w2..w2 + h {
                model.params[i] = rng.gen_range(-INIT_RANGE..INIT_RANGE);
            }
        }
        Ok(model)
    }

    pub fn dim(&self) -> usize {
        self.schema.dim()
    }

    pub fn check_schema(&self, f: &FeatureVector) -> Result<()> {
        if f.schema_id != self.schema.id() || f.values.len() != self.dim() {
            return Err(Error::SchemaMismatch {
                expected: self.schema.id(),
                got: format!("{} (dim {})", f.schema_id, f.values.len()),
            });
        }
        Ok(())
    }

    pub fn score(&self, f: &FeatureVector) -> Result<f64> {
        self.check_schema(f)?;
        Ok(self.score_values(&f.values))
    }

    pub fn prob(&self, f: &FeatureVector) -> Result<f64> {
        self.score(f).map(logistic)
    }

    /// Forward pass without the schema check.
    pub fn score_values(&self, x: &[f64]) -> f64 {
        let dim = self.dim();
        match self.architecture {
            Architecture::Linear => dot(&self.params[..dim], x),
            Architecture::Mlp { hidden_units: h } => {
                let (w1, rest) = self.params.split_at(h * dim);
                let (b1, rest) = rest.split_at(h);
                let (w2, b2) = rest.split_at(h);
                let mut s = b2[0];
                for r in 0..h {
                    let z = dot(&w1[r * dim..(r + 1) * dim], x) + b1[r];
                    s += w2[r] * z.tanh();
                }
                s
            }
        }
    }

    /// Adds `scale * d score / d params` at input `x` into `grad`.
    pub fn accumulate_score_grad(&self, x: &[f64], scale: f64, grad: &mut [f64]) {
        let dim = self.dim();
        match self.architecture {
            Architecture::Linear => {
                for (g, xi) in grad[..dim].iter_mut().zip(x) {
                    *g += scale * xi;
                }
            }
            Architecture::Mlp { hidden_units: h } => {
                let w1 = &self.params[..h * dim];
                let b1 = &self.params[h * dim..h * dim + h];
                let w2 = &self.params[h * dim + h..h * dim + 2 * h];
                let (g_w1, rest) = grad.split_at_mut(h * dim);
                let (g_b1, rest) = rest.split_at_mut(h);
                let (g_w2, g_b2) = rest.split_at_mut(h);
                g_b2[0] += scale;
                for r in 0..h {
                    let a = (dot(&w1[r * dim..(r + 1) * dim], x) + b1[r]).tanh();
                    g_w2[r] += scale * a;
                    let back = scale * w2[r] * (1.0 - a * a);
                    g_b1[r] += back;
                    for (g, xi) in g_w1[r * dim..(r + 1) * dim].iter_mut().zip(x) {
                        *g += back * xi;
                    }
                }
            }
        }
    }

    fn named_params(&self) -> BTreeMap<String, Vec<f64>> {
        let dim = self.dim();
        let mut m = BTreeMap::new();
        match self.architecture {
            Architecture::Linear => {
                m.insert("w".into(), self.params.clone());
            }
            Architecture::Mlp { hidden_units: h } => {
                m.insert("w1".into(), self.params[..h * dim].to_vec());
                m.insert("b1".into(), self.params[h * dim..h * dim + h].to_vec());
                m.insert(
                    "w2".into(),
                    self.params[h * dim + h..h * dim + 2 * h].to_vec(),
                );
                m.insert("b2".into(), vec![self.params[h * dim + 2 * h]]);
            }
        }
        m
    }

    fn file(&self) -> ModelFile {
        let mut file = ModelFile {
            version: MODEL_VERSION.into(),
            architecture: self.architecture,
            schema_id: self.schema.id(),
            extra_dim: self.schema.extra_dim,
            parameters: self.named_params(),
            train_config: self.train_config.clone(),
            content_hash: String::new(),
        };
        file.content_hash = file.compute_hash();
        file
    }

    /// SHA-256 over the serialized model with an empty hash field.
    pub fn content_hash(&self) -> String {
        self.file().content_hash
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(&self.file()).map_err(|e| Error::Model(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ModelFile =
            serde_json::from_str(text).map_err(|e| Error::Model(e.to_string()))?;
        if file.version != MODEL_VERSION {
            return Err(Error::Model(format!(
                "unsupported version {:?}",
                file.version
            )));
        }
        let expected = file.compute_hash();
        if expected != file.content_hash {
            return Err(Error::Model(format!(
                "content hash mismatch: file says {}, contents hash to {expected}",
                file.content_hash
            )));
        }
        let schema = FeatureSchema {
            extra_dim: file.extra_dim,
        };
        if schema.id() != file.schema_id {
            return Err(Error::SchemaMismatch {
                expected: schema.id(),
                got: file.schema_id,
            });
        }
        let dim = schema.dim();
        let take = |name: &str, len: usize| -> Result<Vec<f64>> {
            let v = file
                .parameters
                .get(name)
                .ok_or_else(|| Error::Model(format!("missing parameter block {name:?}")))?;
            if v.len() != len {
                return Err(Error::Model(format!(
                    "parameter {name:?} has {} values, expected {len}",
                    v.len()
                )));
            }
            Ok(v.clone())
        };
        let params = match file.architecture {
            Architecture::Linear => take("w", dim)?,
            Architecture::Mlp { hidden_units: h } => {
                let mut p = take("w1", h * dim)?;
                p.extend(take("b1", h)?);
                p.extend(take("w2", h)?);
                p.extend(take("b2", 1)?);
                p
            }
        };
        if params.iter().any(|v| !v.is_finite()) {
            return Err(Error::Model("non-finite parameter".into()));
        }
        Ok(Self {
            architecture: file.architecture,
            schema,
            params,
            train_config: file.train_config,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = self.to_json()?;
        text.push('\n');
        crate::jsonl::write_text(path, &text)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    version: String,
    architecture: Architecture,
    schema_id: String,
    extra_dim: usize,
    parameters: BTreeMap<String, Vec<f64>>,
    train_config: Option<TrainConfig>,
    content_hash: String,
}

impl ModelFile {
    fn compute_hash(&self) -> String {
        let mut unhashed = self.clone();
        unhashed.content_hash = String::new();
        let bytes = serde_json::to_vec(&unhashed).expect("model serializes");
        sha256_hex(&bytes)
    }
}
