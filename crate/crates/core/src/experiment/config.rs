use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::bma::Temperature;
use crate::data::{self, Dataset};
use crate::error::{Error, Result};
use crate::landscape::DEFAULT_POINTS_PER_SEGMENT;
use crate::method::Method;
use crate::network::{BaseWeights, LoraNetwork, NetworkSpec, DEFAULT_ALPHA, DEFAULT_RANK};
use crate::train::TrainConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetSpec {
    Blobs {
        n: usize,
        dim: usize,
        classes: usize,
        separation: f64,
    },
    XorRings {
        n: usize,
        noise: f64,
    },
    Parity {
        n: usize,
        seq_len: usize,
        vocab: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataConfig {
    #[serde(flatten)]
    pub spec: DatasetSpec,
    /// Seed of the task itself; shared by every run seed.
    pub seed: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            spec: DatasetSpec::Blobs {
                n: 600,
                dim: 4,
                classes: 4,
                separation: 3.0,
            },
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetworkConfig {
    pub hidden: Vec<usize>,
    pub rank: usize,
    pub alpha: f64,
    /// Embedding width for token inputs.
    pub embed_dim: usize,
    /// Seed of the frozen base weights.
    pub base_seed: u64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            hidden: vec![32, 32],
            rank: DEFAULT_RANK,
            alpha: DEFAULT_ALPHA,
            embed_dim: 16,
            base_seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct InferenceConfig {
    /// Grid size; `None` means `2 N_cp - 1`.
    pub grid_m: Option<usize>,
    pub temperature: Temperature,
    /// Also write per-grid-point predictions as CSV.
    pub dump_predictions: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProfileConfig {
    pub points_per_segment: usize,
    /// Test examples traced in the probability-evolution output.
    pub evolution_examples: usize,
}

impl Default for ProfileConfig {
    fn default() -> Self {
        Self {
            points_per_segment: DEFAULT_POINTS_PER_SEGMENT,
            evolution_examples: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub dataset: DataConfig,
    pub network: NetworkConfig,
    pub method: Method,
    /// Methods compared by `sweep`; empty means just `method`.
    pub sweep_methods: Vec<Method>,
    pub train: TrainConfig,
    pub inference: InferenceConfig,
    pub profile: ProfileConfig,
    pub output: PathBuf,
    /// Anchor manifest for methods built on anchors; defaults to
    /// `<output>/anchors/manifest.json`.
    pub anchors: Option<PathBuf>,
    pub seeds: Vec<u64>,
    /// Width of the sweep worker pool; `None` uses every core.
    pub workers: Option<usize>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dataset: DataConfig::default(),
            network: NetworkConfig::default(),
            method: Method::Free { anchors: 3, handles: 1 },
            sweep_methods: Vec::new(),
            train: TrainConfig::default(),
            inference: InferenceConfig::default(),
            profile: ProfileConfig::default(),
            output: PathBuf::from("runs"),
            anchors: None,
            seeds: vec![0],
            workers: None,
        }
    }
}

/// Set `value[section][key]...` from variables named `SECTION__KEY`.
/// Names are matched case-insensitively against the existing keys; values
/// are parsed as JSON and fall back to plain strings. Variables whose first
/// component is not a top-level key are ignored.
pub fn apply_env_overrides<I, K, V>(value: &mut Value, vars: I) -> Result<()>
where
    I: IntoIterator<Item = (K, V)>,
    K: AsRef<str>,
    V: AsRef<str>,
{
    for (name, raw) in vars {
        let name = name.as_ref();
        if !name.contains("__") {
            continue;
        }
        let path: Vec<String> = name.split("__").map(|p| p.to_ascii_lowercase()).collect();
        let Some(root) = value.as_object() else {
            return Err(Error::config("configuration must be a JSON object"));
        };
        if !root.contains_key(&path[0]) {
            continue;
        }
        let parsed = serde_json::from_str(raw.as_ref()).unwrap_or_else(|_| Value::String(raw.as_ref().into()));
        let mut node = &mut *value;
        for (depth, key) in path.iter().enumerate() {
            let obj = match node {
                Value::Object(map) => map,
                Value::Null => {
                    *node = Value::Object(Default::default());
                    node.as_object_mut().expect("just created")
                }
                _ => return Err(Error::config(format!("{name}: {} is not a section", path[..depth].join(".")))),
            };
            if depth + 1 == path.len() {
                obj.insert(key.clone(), parsed.clone());
                break;
            }
            node = obj.entry(key.clone()).or_insert(Value::Null);
        }
    }
    Ok(())
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        Self::from_value(serde_json::from_str(text)?)
    }

    fn from_value(value: Value) -> Result<Self> {
        let config: Self = serde_json::from_value(value)
            .map_err(|e| Error::config(format!("bad configuration: {e}")))?;
        config.validate()?;
        Ok(config)
    }

    /// Read a JSON file (or start from defaults when `path` is `None`) and
    /// apply the given environment overrides.
    pub fn load<I, K, V>(path: Option<&Path>, env: I) -> Result<Self>
    where
        I: IntoIterator<Item = (K, V)>,
        K: AsRef<str>,
        V: AsRef<str>,
    {
        let mut value = match path {
            Some(p) => {
                if !p.exists() {
                    return Err(Error::MissingFile(p.to_path_buf()));
                }
                serde_json::from_str(&std::fs::read_to_string(p)?)
                    .map_err(|e| Error::config(format!("{}: {e}", p.display())))?
            }
            None => serde_json::to_value(Self::default())?,
        };
        apply_env_overrides(&mut value, env)?;
        Self::from_value(value)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.method.curve_config()?;
        if self.profile.points_per_segment < 2 {
            return Err(Error::config("profile.points_per_segment must be at least 2"));
        }
        if self.inference.grid_m == Some(0) {
            return Err(Error::config("inference.grid_m must be positive"));
        }
        if self.workers == Some(0) {
            return Err(Error::config("workers must be positive"));
        }
        Ok(())
    }

    pub fn methods(&self) -> Vec<Method> {
        if self.sweep_methods.is_empty() {
            vec![self.method]
        } else {
            self.sweep_methods.clone()
        }
    }

    pub fn anchor_manifest(&self) -> PathBuf {
        self.anchors
            .clone()
            .unwrap_or_else(|| self.output.join("anchors").join("manifest.json"))
    }

    /// The task with its validation split carved out of the training data.
    pub fn dataset(&self) -> Result<Dataset> {
        let seed = self.dataset.seed;
        let raw = match self.dataset.spec {
            DatasetSpec::Blobs {
                n,
                dim,
                classes,
                separation,
            } => data::gaussian_blobs(n, dim, classes, separation, seed)?,
            DatasetSpec::XorRings { n, noise } => data::xor_rings(n, noise, seed)?,
            DatasetSpec::Parity { n, seq_len, vocab } => data::parity_sequences(n, seq_len, vocab, seed)?,
        };
        data::split(raw, self.train.val_fraction, seed)
    }

    pub fn network_spec(&self) -> Result<NetworkSpec> {
        let net = &self.network;
        let spec = match self.dataset.spec {
            DatasetSpec::Blobs { dim, classes, .. } => NetworkSpec::mlp(dim, &net.hidden, classes),
            DatasetSpec::XorRings { .. } => NetworkSpec::mlp(2, &net.hidden, 2),
            DatasetSpec::Parity { seq_len, vocab, .. } => {
                NetworkSpec::attention(vocab, seq_len, net.embed_dim, &net.hidden, 2)
            }
        }
        .with_rank(net.rank, net.alpha);
        spec.validate()?;
        Ok(spec)
    }

    /// The frozen network every run of this experiment shares.
    pub fn network(&self) -> Result<LoraNetwork> {
        let spec = self.network_spec()?;
        let base = BaseWeights::random(&spec, self.network.base_seed)?;
        LoraNetwork::new(spec, base)
    }
}
