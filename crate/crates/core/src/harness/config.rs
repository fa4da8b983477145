use serde::{Deserialize, Serialize};

use crate::codec::{CodecTrainConfig, Projection, ScaleConfig};
use crate::generator::{GeneratorConfig, GeneratorTrainConfig, SampleOptions};

use super::benchmark::BenchmarkSizes;
use super::HarnessError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CodecSection {
    pub scales: usize,
    pub latent_dim: usize,
    pub hidden: usize,
    pub projection: Projection,
    pub step_decay: f64,
}

impl Default for CodecSection {
    fn default() -> Self {
        let base = ScaleConfig::default();
        Self {
            scales: base.scale_count(),
            latent_dim: base.latent_dim,
            hidden: base.hidden,
            projection: base.projection,
            step_decay: base.step_decay,
        }
    }
}

/// Sizes of the evaluation runs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub conditional_samples: usize,
    pub compositions: usize,
    pub composition_fraction: f64,
    pub retrieval_ranks: Vec<usize>,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            conditional_samples: 200,
            compositions: 50,
            composition_fraction: 0.5,
            retrieval_ranks: vec![1, 2, 3],
        }
    }
}

/// Everything a run depends on. Serialized as TOML.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub data: BenchmarkSizes,
    pub codec: CodecSection,
    pub codec_train: CodecTrainConfig,
    pub generator: GeneratorConfig,
    pub generator_train: GeneratorTrainConfig,
    pub edit_train: GeneratorTrainConfig,
    pub sample: SampleOptions,
    pub eval: EvalSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            data: BenchmarkSizes::default(),
            codec: CodecSection::default(),
            codec_train: CodecTrainConfig {
                epochs: 20,
                max_lr: 3e-3,
                min_lr: 3e-4,
                scale_dropout: 0.5,
                ..Default::default()
            },
            generator: GeneratorConfig::default(),
            generator_train: GeneratorTrainConfig {
                epochs: 15,
                max_lr: 1e-3,
                min_lr: 1e-4,
                ..Default::default()
            },
            edit_train: GeneratorTrainConfig {
                epochs: 15,
                max_lr: 1e-3,
                min_lr: 1e-4,
                condition_dropout: 0.0,
                ..Default::default()
            },
            sample: SampleOptions::default(),
            eval: EvalSection::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn scale_config(&self) -> Result<ScaleConfig, HarnessError> {
        let mut config = ScaleConfig::preset(self.codec.scales, self.data.frames)?;
        config.latent_dim = self.codec.latent_dim;
        config.hidden = self.codec.hidden;
        config.projection = self.codec.projection;
        config.step_decay = self.codec.step_decay;
        config.validate()?;
        Ok(config)
    }

    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        Self::with_overrides(text, &[])
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Merges `text` (possibly empty) over the defaults, applies `key.path=value`
    /// overrides and deserializes the result. Values are read as TOML literals,
    /// falling back to plain strings.
    pub fn with_overrides(text: &str, overrides: &[String]) -> Result<Self, HarnessError> {
        let mut root: toml::Table = Self::default().to_toml().parse().expect("defaults parse");
        let file: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| HarnessError::Config(e.to_string()))?;
        merge(&mut root, file);
        for o in overrides {
            let (path, raw) = o
                .split_once('=')
                .ok_or_else(|| HarnessError::Config(format!("override `{o}` is not key=value")))?;
            let value = parse_value(raw.trim());
            set_path(&mut root, path.trim(), value)?;
        }
        toml::Value::Table(root)
            .try_into()
            .map_err(|e: toml::de::Error| HarnessError::Config(e.to_string()))
    }
}

fn merge(into: &mut toml::Table, from: toml::Table) {
    for (key, value) in from {
        match (into.get_mut(&key), value) {
            (Some(toml::Value::Table(a)), toml::Value::Table(b)) => merge(a, b),
            (_, value) => {
                into.insert(key, value);
            }
        }
    }
}

fn parse_value(raw: &str) -> toml::Value {
    format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

fn set_path(root: &mut toml::Table, path: &str, value: toml::Value) -> Result<(), HarnessError> {
    let keys: Vec<&str> = path.split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(HarnessError::Config(format!("bad override key `{path}`")));
    }
    let mut table = root;
    for key in &keys[..keys.len() - 1] {
        let entry = table
            .entry(key.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| HarnessError::Config(format!("`{key}` in `{path}` is not a table")))?;
    }
    table.insert(keys[keys.len() - 1].to_string(), value);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_round_trip() {
        let c = ExperimentConfig::default();
        assert_eq!(ExperimentConfig::from_toml(&c.to_toml()).unwrap(), c);
        assert_eq!(ExperimentConfig::from_toml("").unwrap(), c);
    }

    #[test]
    fn overrides_apply_to_nested_keys() {
        let c = ExperimentConfig::with_overrides(
            "seed = 4\n[codec]\nhidden = 16\n",
            &[
                "codec.latent_dim=8".into(),
                "seed=9".into(),
                "codec.projection=per-scale".into(),
            ],
        )
        .unwrap();
        assert_eq!(c.seed, 9);
        assert_eq!(c.codec.hidden, 16);
        assert_eq!(c.codec.latent_dim, 8);
        assert_eq!(c.codec.projection, Projection::PerScale);
        assert_eq!(c.data, BenchmarkSizes::default());
        let partial = ExperimentConfig::with_overrides("[codec_train]\nepochs = 2\n", &[]).unwrap();
        assert_eq!(partial.codec_train.epochs, 2);
        assert_eq!(
            partial.codec_train.max_lr,
            ExperimentConfig::default().codec_train.max_lr
        );
        assert!(ExperimentConfig::with_overrides("", &["seed".into()]).is_err());
        assert!(ExperimentConfig::with_overrides("", &["seed=\"x\"".into()]).is_err());
        assert!(ExperimentConfig::with_overrides("", &["seed.x=1".into()]).is_err());
        assert!(ExperimentConfig::with_overrides("", &["codec.hiden=3".into()]).is_err());
    }

    #[test]
    fn scale_config_follows_sections() {
        let mut c = ExperimentConfig::default();
        c.codec.scales = 4;
        c.data.frames = 32;
        let s = c.scale_config().unwrap();
        assert_eq!(s.scale_count(), 4);
        assert_eq!(s.frames, 32);
        c.codec.scales = 5;
        assert!(c.scale_config().is_err());
    }
}
