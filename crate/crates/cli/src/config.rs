//! Experiment files: a preset plus partial `network`, `train` and `cache`
//! overrides, resolved into one fully populated config.

use std::path::Path;

use anyhow::{bail, Context, Result};
use clap::ValueEnum;
use satnoma::maddpg::TrainConfig;
use satnoma::NetworkConfig;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    /// 6 BSs, 2 satellites, 32 users, 1000 episodes.
    Full,
    /// 3 BSs, 1 satellite, 12 users, 300 episodes.
    Desk,
    /// One BS, five files, cache of two.
    TinyCache,
}

impl Preset {
    fn network(self) -> NetworkConfig {
        match self {
            Preset::Full => NetworkConfig::default(),
            Preset::Desk => NetworkConfig::desk(),
            Preset::TinyCache => NetworkConfig::tiny_cache(),
        }
    }

    fn train(self) -> TrainConfig {
        let episodes = match self {
            Preset::Full => 1000,
            Preset::Desk | Preset::TinyCache => 300,
        };
        TrainConfig {
            episodes,
            ..TrainConfig::default()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CacheStage {
    /// Power factor of every user under the nominal frozen allocation.
    pub frozen_beta: f64,
    /// Fading draws behind the expected-reward model.
    pub model_draws: usize,
}

impl Default for CacheStage {
    fn default() -> Self {
        Self {
            frozen_beta: 1.0,
            model_draws: 200,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub preset: Preset,
    pub network: NetworkConfig,
    pub train: TrainConfig,
    pub cache: CacheStage,
}

/// Overlays `patch` onto `base` key by key, recursing into objects.
fn merge(base: &mut Value, patch: &Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                merge(b.entry(k.clone()).or_insert(Value::Null), v);
            }
        }
        (b, p) => *b = p.clone(),
    }
}

impl ExperimentConfig {
    pub fn from_preset(preset: Preset) -> Self {
        Self {
            preset,
            network: preset.network(),
            train: preset.train(),
            cache: CacheStage::default(),
        }
    }

    /// Resolves a partial JSON document. The preset comes from the
    /// document's `preset` key, else `fallback`.
    pub fn from_json(doc: &Value, fallback: Preset) -> Result<Self> {
        let Value::Object(obj) = doc else {
            bail!("config must be a JSON object");
        };
        let preset = match obj.get("preset") {
            Some(p) => serde_json::from_value(p.clone()).context("unknown preset")?,
            None => fallback,
        };
        let mut full = serde_json::to_value(Self::from_preset(preset))?;
        let mut patch = Map::new();
        for (k, v) in obj {
            if k != "preset" {
                patch.insert(k.clone(), v.clone());
            }
        }
        merge(&mut full, &Value::Object(patch));
        serde_json::from_value(full).context("invalid config")
    }

    pub fn load(path: &Path, fallback: Preset) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let doc: Value =
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        Self::from_json(&doc, fallback)
    }
}
