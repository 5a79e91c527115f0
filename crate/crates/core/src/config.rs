//! TOML application config. Unknown keys are rejected; every validation
//! error names the offending key.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::confidence::{
    build_idf_table, ConfidenceStrategy, IdfTable, Peak, PositionalParams, DEFAULT_C, DEFAULT_K,
    DEFAULT_PEAK, DEFAULT_TAU_FREQ,
};
use crate::error::{Error, Result};
use crate::mig::{LabelingConfig, DEFAULT_BIN_WIDTH};
use crate::pipeline::{ContextTemplate, DEFAULT_CANDIDATES};
use crate::reranker::TrainConfig;
use crate::teacher::http::{ClientOptions, HttpTeacher, PromptTemplate};
use crate::teacher::{MockTeacher, MockTeacherParams, TeacherProvider};

pub const API_KEY_ENV: &str = "MIGRANK_API_KEY";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProviderKind {
    #[default]
    Mock,
    Http,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TeacherConfig {
    pub provider: ProviderKind,
    pub endpoint: Option<String>,
    pub api_key: Option<String>,
    pub mock: MockTeacherParams,
    pub template: PromptTemplate,
    pub client: ClientOptions,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyKind {
    Equal,
    #[default]
    Positional,
    SemanticAnchor,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PeakMode {
    #[default]
    Fixed,
    Midpoint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConfidenceConfig {
    pub strategy: StrategyKind,
    pub k: f64,
    pub c: f64,
    pub peak: f64,
    pub peak_mode: PeakMode,
    pub normalize: bool,
    pub tau_freq: f64,
    /// Precomputed idf table; otherwise built from the scored documents.
    pub idf_path: Option<PathBuf>,
}

impl Default for ConfidenceConfig {
    fn default() -> Self {
        Self {
            strategy: StrategyKind::Positional,
            k: DEFAULT_K,
            c: DEFAULT_C,
            peak: DEFAULT_PEAK,
            peak_mode: PeakMode::Fixed,
            normalize: false,
            tau_freq: DEFAULT_TAU_FREQ,
            idf_path: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LabelingSection {
    pub b1: f64,
    pub b2: f64,
    pub balance: bool,
    pub bin_width: f64,
}

impl Default for LabelingSection {
    fn default() -> Self {
        let d = LabelingConfig::default();
        Self {
            b1: d.b1,
            b2: d.b2,
            balance: true,
            bin_width: DEFAULT_BIN_WIDTH,
        }
    }
}

impl LabelingSection {
    pub fn thresholds(&self) -> LabelingConfig {
        LabelingConfig {
            b1: self.b1,
            b2: self.b2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub candidates: usize,
    pub k: usize,
    pub template: ContextTemplate,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            candidates: DEFAULT_CANDIDATES,
            k: 3,
            template: ContextTemplate::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub alphas: Vec<f64>,
    pub taus: Vec<f64>,
    pub holdout_fraction: f64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            alphas: vec![0.0, 0.25, 0.5, 0.74, 1.0],
            taus: vec![0.2],
            holdout_fraction: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AppConfig {
    pub seed: u64,
    pub jobs: usize,
    pub teacher: TeacherConfig,
    pub confidence: ConfidenceConfig,
    pub labeling: LabelingSection,
    pub train: TrainConfig,
    pub pipeline: PipelineConfig,
    pub sweep: SweepConfig,
}

fn check(cond: bool, key: &str, msg: impl Into<String>) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(Error::config(key, msg))
    }
}

impl AppConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let raw: toml::Table = toml::from_str(text)
            .map_err(|e| Error::config(first_key(&e), e.message().to_string()))?;
        if raw
            .get("train")
            .and_then(|t| t.as_table())
            .is_some_and(|t| t.contains_key("seed"))
        {
            return Err(Error::config(
                "train.seed",
                "set the top-level `seed` instead",
            ));
        }
        let mut cfg: AppConfig = toml::from_str(text)
            .map_err(|e| Error::config(first_key(&e), e.message().to_string()))?;
        cfg.train.seed = cfg.seed;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.train.seed = seed;
    }

    pub fn validate(&self) -> Result<()> {
        let t = &self.teacher;
        if t.provider == ProviderKind::Http {
            check(
                t.endpoint.as_deref().is_some_and(|e| !e.trim().is_empty()),
                "teacher.endpoint",
                "required when provider = \"http\"",
            )?;
        }
        t.mock
            .validate()
            .map_err(|e| Error::config("teacher.mock.epsilon", e.to_string()))?;
        t.template.validate()?;
        check(
            t.client.max_in_flight >= 1,
            "teacher.client.max_in_flight",
            "must be >= 1",
        )?;
        check(
            t.client.timeout_secs > 0.0,
            "teacher.client.timeout_secs",
            "must be > 0",
        )?;

        let c = &self.confidence;
        if c.strategy == StrategyKind::Positional {
            check(c.k > 0.0, "confidence.k", "must be > 0")?;
            check(c.c > 0.0, "confidence.c", "must be > 0")?;
            check(c.peak >= 1.0, "confidence.peak", "must be >= 1")?;
        }
        check(c.tau_freq >= 0.0, "confidence.tau_freq", "must be >= 0")?;

        self.labeling.thresholds().validate()?;
        check(
            self.labeling.bin_width > 0.0,
            "labeling.bin_width",
            "must be > 0",
        )?;
        self.train.validate()?;
        check(
            self.pipeline.candidates >= 1,
            "pipeline.candidates",
            "must be >= 1",
        )?;
        check(self.pipeline.k >= 1, "pipeline.k", "must be >= 1")?;
        self.pipeline.template.validate()?;
        check(
            self.sweep.holdout_fraction > 0.0 && self.sweep.holdout_fraction < 1.0,
            "sweep.holdout_fraction",
            "must be in (0, 1)",
        )?;
        for a in &self.sweep.alphas {
            check(
                (0.0..=1.0).contains(a),
                "sweep.alphas",
                format!("{a} outside [0, 1]"),
            )?;
        }
        for tau in &self.sweep.taus {
            check(*tau >= 0.0, "sweep.taus", format!("{tau} < 0"))?;
        }
        Ok(())
    }

    /// The configured strategy. `documents` feeds the idf table for the
    /// semantic-anchor strategy when no `idf_path` is set.
    pub fn strategy<S: AsRef<str>>(&self, documents: &[S]) -> Result<ConfidenceStrategy> {
        let c = &self.confidence;
        Ok(match c.strategy {
            StrategyKind::Equal => ConfidenceStrategy::Equal,
            StrategyKind::Positional => ConfidenceStrategy::Positional(PositionalParams {
                k: c.k,
                c: c.c,
                peak: match c.peak_mode {
                    PeakMode::Fixed => Peak::Fixed(c.peak),
                    PeakMode::Midpoint => Peak::Midpoint,
                },
                normalize: c.normalize,
            }),
            StrategyKind::SemanticAnchor => {
                let idf = match &c.idf_path {
                    Some(p) => IdfTable::load(p)?,
                    None => build_idf_table(documents)?,
                };
                ConfidenceStrategy::SemanticAnchor {
                    tau_freq: c.tau_freq,
                    idf: Arc::new(idf),
                }
            }
        })
    }

    pub fn teacher(&self) -> Result<Box<dyn TeacherProvider>> {
        let t = &self.teacher;
        Ok(match t.provider {
            ProviderKind::Mock => Box::new(MockTeacher::new(t.mock)),
            ProviderKind::Http => {
                let mut opts = t.client.clone();
                opts.api_key = std::env::var(API_KEY_ENV)
                    .ok()
                    .or_else(|| t.api_key.clone());
                let endpoint = t
                    .endpoint
                    .clone()
                    .ok_or_else(|| Error::config("teacher.endpoint", "missing"))?;
                Box::new(HttpTeacher::new(endpoint, t.template.clone(), opts)?)
            }
        })
    }
}

fn first_key(e: &toml::de::Error) -> String {
    // toml reports "unknown field `x`, expected ..." without the table path;
    // pull the field name out so the error still names a key.
    let msg = e.message();
    if let Some(start) = msg.find('`') {
        if let Some(len) = msg[start + 1..].find('`') {
            return msg[start + 1..start + 1 + len].to_string();
        }
    }
    "<config>".into()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_is_defaults() {
        let cfg = AppConfig::from_toml_str("").unwrap();
        assert_eq!(cfg, AppConfig::default());
        assert_eq!(cfg.train.alpha, 0.74);
        assert_eq!(cfg.pipeline.candidates, 20);
        assert_eq!(cfg.labeling.b1, 0.2);
    }

    #[test]
    fn unknown_key_rejected() {
        match AppConfig::from_toml_str("[train]\nalpah = 0.5\n").unwrap_err() {
            Error::Config { key, .. } => assert_eq!(key, "alpah"),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn invalid_value_names_key() {
        match AppConfig::from_toml_str("[labeling]\nb1 = -0.5\nb2 = 0.5\n").unwrap_err() {
            Error::Config { key, .. } => assert_eq!(key, "labeling.b1"),
            e => panic!("unexpected {e}"),
        }
        match AppConfig::from_toml_str("[pipeline]\nk = 0\n").unwrap_err() {
            Error::Config { key, .. } => assert_eq!(key, "pipeline.k"),
            e => panic!("unexpected {e}"),
        }
        match AppConfig::from_toml_str("[teacher]\nprovider = \"http\"\n").unwrap_err() {
            Error::Config { key, .. } => assert_eq!(key, "teacher.endpoint"),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn seed_lives_at_top_level() {
        let cfg = AppConfig::from_toml_str("seed = 9\n").unwrap();
        assert_eq!(cfg.train.seed, 9);
        assert!(matches!(
            AppConfig::from_toml_str("[train]\nseed = 3\n"),
            Err(Error::Config { key, .. }) if key == "train.seed"
        ));
    }

    #[test]
    fn full_config_parses() {
        let text = r#"
seed = 4
jobs = 2
[teacher]
provider = "mock"
[teacher.mock]
a0 = -1.5
[confidence]
strategy = "semantic_anchor"
tau_freq = 0.15
[train]
alpha = 0.5
optimizer = "sgd"
architecture = { kind = "mlp", hidden_units = 8 }
pair_policy = { kind = "mig_ordered", margin = 0.1 }
[pipeline]
k = 1
[sweep]
alphas = [0.0, 0.74, 1.0]
"#;
        let cfg = AppConfig::from_toml_str(text).unwrap();
        assert_eq!(cfg.teacher.mock.a0, -1.5);
        assert_eq!(cfg.teacher.mock.a1, 2.5);
        assert!(matches!(
            cfg.strategy(&["a b", "b c"]).unwrap(),
            ConfidenceStrategy::SemanticAnchor { .. }
        ));
    }
}
