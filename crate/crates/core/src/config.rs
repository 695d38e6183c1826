//! Experiment configuration file.
//!
//! One TOML document with the sections `model`, `pretrain`, `train`, `imp`,
//! `data`, `seeds` and an optional `scheme`. Every key below is required
//! unless marked optional.
//!
//! ```toml
//! [model]
//! body = [256, 256, 256]   # hidden widths; input width is fixed at 16
//! dropout_p = 0.1
//! head_init_std = 0.02
//!
//! [pretrain]
//! seed = 1
//! epochs = 20
//! lr0 = 0.05
//! batch_size = 32
//!
//! [train]
//! epochs = 10
//! lr0 = 0.05
//! batch_size = 32
//! dropout_p = 0.1
//! tau = 0.05
//!
//! [imp]
//! per_round_fraction = 0.1
//! target_ratio = 0.3
//! budget = "original"      # optional: original | remaining
//! ranking = "global"       # optional: global | per-layer
//!
//! [data]
//! source_seed = 7
//! gen_seed = 11
//! kind = "classification"  # classification | regression
//! hardness = 1.0
//! n = 1200
//! n_train = 800
//!
//! [seeds]
//! members = [1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15, 16, 17, 18, 19, 20]
//! # optional: group of each member (1 or 2); default splits the list in half
//! groups = [1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 2, 2, 2, 2, 2, 2, 2, 2, 2, 2]
//!
//! [scheme]                 # optional
//! name = "random-lt"
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{TaskParams, INPUT_WIDTH};
use crate::ensemble::Scheme;
use crate::error::{Error, Result};
use crate::model::{HeadSpec, ModelSpec, TaskKind};
use crate::pruning::ImpConfig;
use crate::training::TrainConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub body: Vec<usize>,
    pub dropout_p: f64,
    pub head_init_std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PretrainSection {
    pub seed: u64,
    pub epochs: usize,
    pub lr0: f64,
    pub batch_size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: usize,
    pub lr0: f64,
    pub batch_size: usize,
    pub dropout_p: f64,
    pub tau: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub source_seed: u64,
    pub gen_seed: u64,
    pub kind: TaskKind,
    pub hardness: f64,
    pub n: usize,
    pub n_train: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeedsSection {
    pub members: Vec<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub groups: Option<Vec<u8>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchemeSection {
    pub name: Scheme,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelSection,
    pub pretrain: PretrainSection,
    pub train: TrainSection,
    pub imp: ImpConfig,
    pub data: DataSection,
    pub seeds: SeedsSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scheme: Option<SchemeSection>,
}

impl ExperimentConfig {
    /// The shipped desk-scale configuration for the small classification task.
    pub fn desk_scale() -> Self {
        Self {
            model: ModelSection {
                body: vec![256, 256, 256],
                dropout_p: 0.1,
                head_init_std: 0.02,
            },
            pretrain: PretrainSection {
                seed: 1,
                epochs: 20,
                lr0: 0.05,
                batch_size: 32,
            },
            train: TrainSection {
                epochs: 10,
                lr0: 0.05,
                batch_size: 32,
                dropout_p: 0.1,
                tau: DEFAULT_TAU,
            },
            imp: ImpConfig::default(),
            data: DataSection {
                source_seed: 7,
                gen_seed: 11,
                kind: TaskKind::Classification,
                hardness: 1.0,
                n: 1200,
                n_train: 800,
            },
            seeds: SeedsSection {
                members: (1..=20).collect(),
                groups: None,
            },
            scheme: None,
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Applies `section.key=value` overrides. Values are read as TOML and
    /// fall back to plain strings.
    pub fn with_overrides(&self, overrides: &[(String, String)]) -> Result<Self> {
        let mut doc: toml::Table = toml::from_str(&self.to_toml()).expect("own rendering parses");
        for (key, raw) in overrides {
            let mut parts: Vec<&str> = key.split('.').collect();
            let last = parts.pop().filter(|k| !k.is_empty()).ok_or_else(|| Error::Config(format!("empty override key `{key}`")))?;
            let mut table = &mut doc;
            for p in parts {
                table = table
                    .entry(p)
                    .or_insert_with(|| toml::Value::Table(toml::Table::new()))
                    .as_table_mut()
                    .ok_or_else(|| Error::Config(format!("override `{key}`: `{p}` is not a section")))?;
            }
            table.insert(last.to_string(), override_value(raw));
        }
        let text = toml::to_string(&doc).map_err(|e| Error::Config(e.to_string()))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("after overrides: {msg}")),
            other => other,
        })
    }

    /// SHA-256 of the canonical TOML rendering.
    pub fn hash(&self) -> [u8; 32] {
        Sha256::digest(self.to_toml().as_bytes()).into()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.model.body.is_empty() {
            return bad("model.body needs at least one layer".into());
        }
        self.model_spec().validate().map_err(|e| Error::Config(format!("model: {e}")))?;
        self.train_config(0).validate().map_err(|e| Error::Config(format!("train: {e}")))?;
        self.imp.validate().map_err(|e| Error::Config(format!("imp: {e}")))?;
        if self.pretrain.batch_size == 0 {
            return bad("pretrain.batch_size must be at least 1".into());
        }
        if !(self.data.hardness > 0.0 && self.data.hardness <= 1.0) {
            return bad(format!("data.hardness {} outside (0,1]", self.data.hardness));
        }
        if self.data.n_train == 0 || self.data.n_train >= self.data.n {
            return bad("data.n_train must be in 1..data.n".into());
        }
        let m = &self.seeds.members;
        if m.is_empty() {
            return bad("seeds.members is empty".into());
        }
        let mut sorted = m.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != m.len() {
            return bad("seeds.members contains duplicates".into());
        }
        if let Some(g) = &self.seeds.groups {
            if g.len() != m.len() {
                return bad(format!("seeds.groups has {} entries for {} members", g.len(), m.len()));
            }
            if g.iter().any(|&x| x != 1 && x != 2) {
                return bad("seeds.groups entries must be 1 or 2".into());
            }
        }
        Ok(())
    }

    pub fn model_spec(&self) -> ModelSpec {
        let head = match self.data.kind {
            TaskKind::Classification => HeadSpec {
                output_width: 2,
                task: TaskKind::Classification,
            },
            TaskKind::Regression => HeadSpec {
                output_width: 1,
                task: TaskKind::Regression,
            },
        };
        let mut spec = ModelSpec::with_body(INPUT_WIDTH, &self.model.body, head);
        spec.dropout_p = self.model.dropout_p;
        spec.head_init_std = self.model.head_init_std;
        spec
    }

    pub fn pretrain_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.pretrain.epochs,
            lr0: self.pretrain.lr0,
            batch_size: self.pretrain.batch_size,
            dropout_p: self.model.dropout_p,
            tau: 0.0,
            seed: self.pretrain.seed,
        }
    }

    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            epochs: self.train.epochs,
            lr0: self.train.lr0,
            batch_size: self.train.batch_size,
            dropout_p: self.train.dropout_p,
            tau: self.train.tau,
            seed,
        }
    }

    pub fn task_params(&self) -> TaskParams {
        TaskParams {
            kind: self.data.kind,
            hardness: self.data.hardness,
            n: self.data.n,
            n_train: self.data.n_train,
        }
    }

    /// Group (1 or 2) of each member seed, in `seeds.members` order.
    pub fn groups(&self) -> Vec<u8> {
        match &self.seeds.groups {
            Some(g) => g.clone(),
            None => {
                let half = self.seeds.members.len().div_ceil(2);
                (0..self.seeds.members.len())
                    .map(|i| if i < half { 1 } else { 2 })
                    .collect()
            }
        }
    }
}

fn override_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

/// τ picked by `sweep-tau` on the small classification task.
pub const DEFAULT_TAU: f64 = 0.05;
