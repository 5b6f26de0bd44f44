//! Experiment files: the resolved, self-contained description of a run.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use uavm::data::archive::{self, ExpectedShape};
use uavm::data::synth::{generate, SynthSpec};
use uavm::{Dataset, ModelConfig, ModelMode, Result, TrainConfig, UavmError};

pub const EXPERIMENT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    /// Generated per seed; the spec's own seed is replaced by the run seed.
    Synth(SynthSpec),
    Archive { train: PathBuf, eval: PathBuf },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub format_version: u32,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub data: DataSource,
    /// Probes run on the eval split after each training run.
    pub probes: Vec<String>,
    pub out_dir: PathBuf,
    pub seeds: Vec<u64>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            format_version: EXPERIMENT_VERSION,
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            data: DataSource::Synth(SynthSpec::default()),
            probes: Vec::new(),
            out_dir: PathBuf::from("runs"),
            seeds: vec![0, 1, 2],
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
        let cfg: Self = serde_json::from_str(&text).map_err(|e| UavmError::Config(format!("{}: {e}", path.display())))?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.format_version != EXPERIMENT_VERSION {
            return Err(UavmError::Config(format!(
                "experiment format_version {} (expected {EXPERIMENT_VERSION})",
                self.format_version
            )));
        }
        if self.seeds.is_empty() {
            return Err(UavmError::Config("seeds must not be empty".into()));
        }
        for p in &self.probes {
            if !uavm::probes::PROBE_NAMES.contains(&p.as_str()) {
                return Err(UavmError::Config(format!("unknown probe `{p}`")));
            }
        }
        self.model.validate()?;
        self.train.validate()?;
        if let DataSource::Synth(spec) = &self.data {
            spec.validate()?;
            if spec.seq_len != self.model.seq_len || spec.feature_dim != self.model.feature_dim {
                return Err(UavmError::Config(format!(
                    "data is {}x{} but the model expects seq_len {} and feature_dim {}",
                    spec.seq_len, spec.feature_dim, self.model.seq_len, self.model.feature_dim
                )));
            }
            if spec.num_classes != self.model.num_classes {
                return Err(UavmError::Config(format!(
                    "data has {} classes but the model has {}",
                    spec.num_classes, self.model.num_classes
                )));
            }
        }
        Ok(())
    }

    /// Train and eval splits for one seed.
    pub fn datasets(&self, seed: u64) -> Result<(Dataset, Dataset)> {
        match &self.data {
            DataSource::Synth(spec) => {
                let d = generate(&SynthSpec { seed, ..spec.clone() })?;
                Ok((d.train, d.eval))
            }
            DataSource::Archive { train, eval } => {
                let shape = ExpectedShape {
                    seq_len: Some(self.model.seq_len),
                    feature_dim: Some(self.model.feature_dim),
                };
                Ok((archive::load_features(train, Some(shape))?, archive::load_features(eval, Some(shape))?))
            }
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| io_err(path, e))
    }
}

pub fn io_err(path: &Path, source: std::io::Error) -> UavmError {
    UavmError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Sets a dotted JSON path (`model.shared_dim`) inside `root`. Values parse
/// as JSON when they can and are taken as strings otherwise.
pub fn set_path(root: &mut Value, key: &str, raw: &str) -> Result<()> {
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let obj = node
            .as_object_mut()
            .ok_or_else(|| UavmError::Config(format!("`{key}`: `{part}` is not inside an object")))?;
        if i + 1 == parts.len() {
            obj.insert(part.to_string(), value);
            return Ok(());
        }
        node = obj
            .get_mut(*part)
            .ok_or_else(|| UavmError::Config(format!("`{key}`: no field `{part}`")))?;
    }
    unreachable!("split yields at least one part")
}

/// Applies `KEY=VALUE` overrides to any serializable config.
pub fn apply_overrides<T>(cfg: &T, sets: &[String]) -> Result<T>
where
    T: Serialize + for<'de> Deserialize<'de>,
{
    if sets.is_empty() {
        return serde_json::from_value(serde_json::to_value(cfg)?).map_err(|e| UavmError::Config(e.to_string()));
    }
    let mut v = serde_json::to_value(cfg)?;
    for s in sets {
        let (k, val) = s
            .split_once('=')
            .ok_or_else(|| UavmError::Config(format!("override `{s}` is not KEY=VALUE")))?;
        set_path(&mut v, k.trim(), val.trim())?;
    }
    serde_json::from_value(v).map_err(|e| UavmError::Config(format!("after overrides: {e}")))
}

/// One ablation axis.
#[derive(Clone, Debug, PartialEq)]
pub struct Sweep {
    pub key: SweepKey,
    pub values: Vec<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SweepKey {
    SharedDim,
    /// Moves layers between the stacks, keeping the total fixed.
    SharedLayers,
    LambdaMt,
}

impl SweepKey {
    pub fn name(self) -> &'static str {
        match self {
            Self::SharedDim => "s_dim",
            Self::SharedLayers => "n_s",
            Self::LambdaMt => "lambda_mt",
        }
    }
}

impl std::str::FromStr for Sweep {
    type Err = UavmError;

    fn from_str(s: &str) -> Result<Self> {
        let (k, vals) = s
            .split_once('=')
            .ok_or_else(|| UavmError::Config(format!("sweep `{s}` is not KEY=V1,V2,...")))?;
        let key = match k.trim().to_ascii_lowercase().as_str() {
            "s_dim" | "shared_dim" | "model.shared_dim" => SweepKey::SharedDim,
            "n_s" | "num_shared_layers" | "model.num_shared_layers" => SweepKey::SharedLayers,
            "lambda_mt" | "lambda" | "train.lambda_mt" => SweepKey::LambdaMt,
            other => {
                return Err(UavmError::Config(format!(
                    "unknown sweep key `{other}` (expected s_dim, n_s or lambda_mt)"
                )))
            }
        };
        let values: Vec<String> = vals.split(',').map(|v| v.trim().to_string()).filter(|v| !v.is_empty()).collect();
        if values.is_empty() {
            return Err(UavmError::Config(format!("sweep `{s}` has no values")));
        }
        Ok(Sweep { key, values })
    }
}

impl Sweep {
    /// The experiment at one point of the axis.
    pub fn apply(&self, base: &ExperimentConfig, value: &str) -> Result<ExperimentConfig> {
        let bad = || UavmError::Config(format!("sweep value `{value}` is not valid for {}", self.key.name()));
        let mut cfg = base.clone();
        match self.key {
            SweepKey::SharedDim => cfg.model.shared_dim = value.parse().map_err(|_| bad())?,
            SweepKey::SharedLayers => {
                let ns: usize = value.parse().map_err(|_| bad())?;
                let total = cfg.model.total_layers;
                if ns > total {
                    return Err(UavmError::Config(format!("n_s {ns} exceeds total_layers {total}")));
                }
                cfg.model = cfg.model.with_layers(total - ns, ns);
            }
            SweepKey::LambdaMt => cfg.train.lambda_mt = value.parse().map_err(|_| bad())?,
        }
        Ok(cfg)
    }
}

/// Rewrites the model for `--mode`. Independent models keep every layer
/// modal-specific.
pub fn apply_mode(model: &mut ModelConfig, mode: ModelMode) {
    model.mode = mode;
    if mode == ModelMode::Independent {
        *model = model.clone().with_layers(model.total_layers, 0);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips_through_json() {
        let cfg = ExperimentConfig::default();
        let text = serde_json::to_string(&cfg).unwrap();
        assert_eq!(serde_json::from_str::<ExperimentConfig>(&text).unwrap(), cfg);
        cfg.validate().unwrap();
    }

    #[test]
    fn overrides_reach_nested_fields() {
        let cfg = apply_overrides(
            &ExperimentConfig::default(),
            &["model.shared_dim=16".into(), "train.epochs=0".into()],
        )
        .unwrap();
        assert_eq!(cfg.model.shared_dim, 16);
        assert_eq!(cfg.train.epochs, 0);
        assert!(apply_overrides(&ExperimentConfig::default(), &["model.bogus=1".into()]).is_err());
        assert!(apply_overrides(&ExperimentConfig::default(), &["nope.x=1".into()]).is_err());
    }

    #[test]
    fn shared_layer_sweep_keeps_total() {
        let sweep: Sweep = "n_s=0,3".parse().unwrap();
        let base = ExperimentConfig {
            model: ModelConfig::default().with_layers(3, 3),
            ..Default::default()
        };
        let cfg = sweep.apply(&base, "0").unwrap();
        assert_eq!((cfg.model.num_modal_layers, cfg.model.num_shared_layers), (6, 0));
        assert!(sweep.apply(&base, "7").is_err());
        assert!("depth=1".parse::<Sweep>().is_err());
    }
}
