//! The experiment configuration: one JSON document with a section per
//! stage. Every field has a default, so `{}` is a valid configuration.

use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::backbone::BackboneConfig;
use crate::content::{
    ContentProvider, FileProvider, HttpProvider, MockProvider, ProviderKind, WarmOptions,
};
use crate::corpus::{read_json, write_json, CiteulikeOptions, MovielensOptions};
use crate::embedding::EmbeddingTable;
use crate::error::{Error, Result};
use crate::eval::EvalOptions;
use crate::filter::FilterConfig;
use crate::http::JsonClient;
use crate::ids::Pair;
use crate::pipeline::AblationVariant;
use crate::refiner::{
    ConstantOracle, HttpOracle, MockThresholdOracle, Oracle, OracleKind, PlantedOracle,
    RefinerConfig,
};
use crate::retry::RetryPolicy;
use crate::synthetic::PlantedConfig;
use crate::warmup::WarmupConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetKind {
    Citeulike,
    Movielens,
    /// Generated planted-structure data; `path` is ignored.
    Synthetic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub dataset: DatasetKind,
    pub path: Option<PathBuf>,
    pub cold_frac: f64,
    pub citeulike: CiteulikeOptions,
    pub movielens: MovielensOptions,
    pub synthetic: PlantedConfig,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            dataset: DatasetKind::Citeulike,
            path: None,
            cold_frac: 0.2,
            citeulike: CiteulikeOptions::default(),
            movielens: MovielensOptions::default(),
            synthetic: PlantedConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ContentConfig {
    pub provider: ProviderKind,
    /// Vector width of the mock provider; expected width for the others
    /// when set to a non-zero value.
    pub dim: usize,
    pub hash_seed: u64,
    /// Precomputed vectors for the file provider.
    pub path: Option<PathBuf>,
    pub endpoint: Option<String>,
    pub timeout_secs: u64,
    pub retry: RetryPolicy,
    pub max_inflight: usize,
}

impl Default for ContentConfig {
    fn default() -> Self {
        Self {
            provider: ProviderKind::Mock,
            dim: 256,
            hash_seed: 0,
            path: None,
            endpoint: None,
            timeout_secs: 30,
            retry: RetryPolicy::default(),
            max_inflight: 8,
        }
    }
}

impl ContentConfig {
    pub fn build_provider(&self) -> Result<Box<dyn ContentProvider>> {
        Ok(match self.provider {
            ProviderKind::Mock => Box::new(MockProvider {
                dim: self.dim,
                seed: self.hash_seed,
            }),
            ProviderKind::File => {
                let path = self.path.as_ref().ok_or_else(|| {
                    Error::InvalidArgument("content.path is required for the file provider".into())
                })?;
                Box::new(FileProvider::open(path)?)
            }
            ProviderKind::Http => {
                let url = self.endpoint.as_ref().ok_or_else(|| {
                    Error::InvalidArgument(
                        "content.endpoint is required for the http provider".into(),
                    )
                })?;
                let dim = (self.dim > 0).then_some(self.dim);
                Box::new(HttpProvider::new(
                    url,
                    dim,
                    JsonClient::new(Duration::from_secs(self.timeout_secs)),
                    self.retry,
                ))
            }
        })
    }

    pub fn warm_options(&self) -> WarmOptions {
        WarmOptions {
            max_inflight: self.max_inflight,
        }
    }
}

impl RefinerConfig {
    /// `content` feeds the mock-threshold oracle; `truth` (or the file at
    /// `truth_path`) the planted one.
    pub fn build_oracle(
        &self,
        content: &EmbeddingTable,
        truth: Option<Vec<Pair>>,
    ) -> Result<Box<dyn Oracle>> {
        Ok(match self.oracle {
            OracleKind::MockThreshold => {
                Box::new(MockThresholdOracle::new(content.clone(), self.tau))
            }
            OracleKind::Constant => Box::new(ConstantOracle(self.constant_answer)),
            OracleKind::Planted => {
                let truth = match (truth, &self.truth_path) {
                    (Some(t), _) => t,
                    (None, Some(p)) => read_json(p)?,
                    (None, None) => {
                        return Err(Error::InvalidArgument(
                            "the planted oracle needs refiner.truth_path".into(),
                        ))
                    }
                };
                Box::new(PlantedOracle::new(truth))
            }
            OracleKind::Http => {
                let url = self.endpoint.as_ref().ok_or_else(|| {
                    Error::InvalidArgument(
                        "refiner.endpoint is required for the http oracle".into(),
                    )
                })?;
                let client = JsonClient::new(Duration::from_secs(self.timeout_secs));
                if self.chat {
                    Box::new(HttpOracle::chat(url, client, self.retry))
                } else {
                    Box::new(HttpOracle::new(url, client, self.retry))
                }
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub k: usize,
    pub users: usize,
    pub variant: AblationVariant,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            k: 20,
            users: 2000,
            variant: AblationVariant::Full,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub seed: u64,
    pub data: DataConfig,
    pub backbone: BackboneConfig,
    pub content: ContentConfig,
    pub filter: FilterConfig,
    pub refiner: RefinerConfig,
    pub warmup: WarmupConfig,
    pub eval: EvalConfig,
}

impl Config {
    /// Desk-scale settings for the planted synthetic data: 200 users, 100
    /// warm and 20 cold items, answers from the planted truth.
    pub fn planted() -> Self {
        let mut c = Config::default();
        c.data.dataset = DatasetKind::Synthetic;
        c.data.cold_frac = 1.0 / 6.0;
        c.backbone = BackboneConfig {
            dim: 32,
            lr: 1e-2,
            batch_size: 256,
            max_epochs: 200,
            eval_users: 200,
            ..BackboneConfig::default()
        };
        c.filter = FilterConfig {
            hidden: 64,
            lr: 1e-3,
            max_epochs: 60,
            label_pairs: 4000,
            eval_users: 200,
            ..FilterConfig::default()
        };
        c.refiner.oracle = OracleKind::Planted;
        c.warmup.lr = 5e-2;
        c
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let c: Config = read_json(path)?;
        c.validate()?;
        Ok(c)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_json(path, self)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Hex digest of the canonical JSON form.
    pub fn fingerprint(&self) -> String {
        let s = serde_json::to_string(self).expect("config serializes");
        format!("{:016x}", crate::content::fnv1a(s.as_bytes(), 0))
    }

    pub fn eval_options(&self) -> EvalOptions {
        EvalOptions {
            k: self.eval.k,
            users: self.eval.users,
            seed: self.seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if !(0.0..1.0).contains(&self.data.cold_frac) {
            return bad("data.cold_frac must lie in [0, 1)");
        }
        if self.eval.k == 0 || self.filter.top_k == 0 {
            return bad("eval.k and filter.top_k must be at least 1");
        }
        if self.refiner.context_len == 0 {
            return bad("refiner.context_len must be at least 1");
        }
        if self.warmup.lr < 0.0 || self.backbone.lr < 0.0 || self.filter.lr < 0.0 {
            return bad("learning rates must be non-negative");
        }
        if self.content.provider == ProviderKind::Mock && self.content.dim == 0 {
            return bad("content.dim must be positive for the mock provider");
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_is_default() {
        let c: Config = serde_json::from_str("{}").unwrap();
        assert_eq!(c, Config::default());
    }

    #[test]
    fn defaults_round_trip_and_carry_protocol_constants() {
        let c = Config::default();
        let v: serde_json::Value = serde_json::from_str(&c.to_json()).unwrap();
        assert_eq!(v["filter"]["lr"], 1e-5);
        assert_eq!(v["filter"]["batch_size"], 128);
        assert_eq!(v["filter"]["top_k"], 20);
        assert_eq!(v["eval"]["k"], 20);
        assert_eq!(v["eval"]["users"], 2000);
        assert_eq!(v["backbone"]["dim"], 200);
        assert_eq!(v["refiner"]["context_len"], 10);
        assert_eq!(v["refiner"]["tau"], 0.3);
        assert_eq!(v["content"]["dim"], 256);
        assert_eq!(v["data"]["movielens"]["min_rating"], 0.0);
        let back: Config = serde_json::from_value(v).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn unknown_fields_are_rejected() {
        assert!(serde_json::from_str::<Config>(r#"{"filter": {"lr": 1, "bogus": 2}}"#).is_err());
    }

    #[test]
    fn fingerprint_tracks_content() {
        let a = Config::default();
        let mut b = a.clone();
        b.warmup.lr = 0.5;
        assert_eq!(a.fingerprint(), Config::default().fingerprint());
        assert_ne!(a.fingerprint(), b.fingerprint());
    }
}
