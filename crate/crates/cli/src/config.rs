//! Experiment configuration files (TOML).
//!
//! Every key is optional; omitted keys take the defaults of
//! [`ExperimentConfig::default`]. Unknown keys and invalid values are all
//! collected and reported together.

use std::fmt;
use std::path::{Path, PathBuf};

use lleda_core::data::{SyntheticDomainSpec, Transform};
use lleda_core::{BufferMode, NetConfig, ProbeOptions, TrainConfig};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum MethodChoice {
    Lleda,
    Baseline,
    Both,
}

impl MethodChoice {
    pub fn runs_lleda(self) -> bool {
        matches!(self, MethodChoice::Lleda | MethodChoice::Both)
    }

    pub fn runs_baseline(self) -> bool {
        matches!(self, MethodChoice::Baseline | MethodChoice::Both)
    }
}

/// Settings shared by every synthetic domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// Seeds the class prototypes shared by all domains.
    pub base_seed: u64,
    pub n_classes: usize,
    pub side: usize,
    pub train_samples: usize,
    pub eval_samples: usize,
    pub blobs_per_class: usize,
    pub jitter: f64,
    pub pixel_noise: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        let s = SyntheticDomainSpec::default();
        Self {
            base_seed: s.base_seed,
            n_classes: s.n_classes,
            side: s.side,
            train_samples: 512,
            eval_samples: 2000,
            blobs_per_class: s.blobs_per_class,
            jitter: s.jitter,
            pixel_noise: s.pixel_noise,
        }
    }
}

/// A domain read from IDX files instead of being generated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IdxDomain {
    pub train_images: PathBuf,
    pub eval_images: PathBuf,
    pub eval_labels: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainConfig {
    pub name: String,
    #[serde(default = "identity")]
    pub transform: Transform,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub idx: Option<IdxDomain>,
}

fn identity() -> Transform {
    Transform::Identity
}

impl DomainConfig {
    pub fn synthetic(name: &str, transform: Transform) -> Self {
        Self {
            name: name.into(),
            transform,
            idx: None,
        }
    }
}

/// The bundled three-domain sequence: plain, rotated by 45°, pixel-permuted.
pub fn default_domains() -> Vec<DomainConfig> {
    vec![
        DomainConfig::synthetic("identity", Transform::Identity),
        DomainConfig::synthetic("rotate45", Transform::Rotate(45.0)),
        DomainConfig::synthetic("permute", Transform::PixelPermute(17)),
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    /// Drives network initialization, batching, augmentation, memory
    /// sampling, sample draws of every domain and the probe splits.
    pub seed: u64,
    pub method: MethodChoice,
    pub output_dir: PathBuf,
    pub net: NetConfig,
    pub train: TrainConfig,
    pub probe: ProbeOptions,
    pub data: DataConfig,
    pub domains: Vec<DomainConfig>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            method: MethodChoice::Both,
            output_dir: PathBuf::from("runs/default"),
            net: NetConfig::default(),
            train: TrainConfig::default(),
            probe: ProbeOptions::default(),
            data: DataConfig::default(),
            domains: default_domains(),
        }
    }
}

/// Every problem found in a configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub problems: Vec<String>,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "invalid configuration:")?;
        for p in &self.problems {
            writeln!(f, "  - {}", p.trim_end().replace('\n', "\n    "))?;
        }
        Ok(())
    }
}

impl std::error::Error for ConfigError {}

impl ConfigError {
    fn one(msg: impl Into<String>) -> Self {
        Self {
            problems: vec![msg.into()],
        }
    }
}

/// Keys that are valid but absent from the serialized defaults.
const OPTIONAL_KEYS: &[&str] = &["train.replay_batch_size", "train.grad_clip", "domains.idx"];

fn unknown_keys(user: &toml::Table, schema: &toml::Table, prefix: &str, out: &mut Vec<String>) {
    for (key, value) in user {
        let path = if prefix.is_empty() {
            key.clone()
        } else {
            format!("{prefix}.{key}")
        };
        match schema.get(key) {
            None if OPTIONAL_KEYS.contains(&path.as_str()) => {}
            None => out.push(format!("unknown key `{path}`")),
            Some(toml::Value::Table(s)) => {
                if let toml::Value::Table(u) = value {
                    unknown_keys(u, s, &path, out);
                }
            }
            Some(toml::Value::Array(s)) => {
                if let (Some(toml::Value::Table(s0)), toml::Value::Array(items)) =
                    (s.first(), value)
                {
                    for item in items {
                        if let toml::Value::Table(u) = item {
                            unknown_keys(u, s0, &path, out);
                        }
                    }
                }
            }
            Some(_) => {}
        }
    }
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| ConfigError::one(e.to_string()))?;
        let schema = match toml::Value::try_from(ExperimentConfig::default()) {
            Ok(toml::Value::Table(t)) => t,
            _ => unreachable!("defaults serialize to a table"),
        };
        let mut problems = Vec::new();
        unknown_keys(&table, &schema, "", &mut problems);
        if !problems.is_empty() {
            return Err(ConfigError { problems });
        }
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| ConfigError::one(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::one(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("configuration serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let mut problems = Vec::new();
        let mut check = |section: &str, r: lleda_core::Result<()>| {
            if let Err(e) = r {
                problems.push(format!("[{section}] {e}"));
            }
        };
        check("net", self.net.validate());
        check("train", self.train.validate());
        check("probe", self.probe.validate());
        if self.domains.is_empty() {
            problems.push("[domains] at least one domain is required".into());
        }
        let d = &self.data;
        if d.train_samples < self.train.batch_size {
            problems.push(format!(
                "[data] train_samples ({}) must be at least train.batch_size ({})",
                d.train_samples, self.train.batch_size
            ));
        }
        if d.eval_samples < 2 * d.n_classes {
            problems.push("[data] eval_samples must be at least twice n_classes".into());
        }
        for (i, dom) in self.domains.iter().enumerate() {
            if dom.idx.is_none() {
                let spec = self.domain_spec(i, false);
                if let Err(e) = spec.validate() {
                    problems.push(format!("[domains.{}] {e}", dom.name));
                }
                if spec.input_dim() != self.net.input_dim {
                    problems.push(format!(
                        "[domains.{}] images have {} pixels but net.input_dim is {}",
                        dom.name,
                        spec.input_dim(),
                        self.net.input_dim
                    ));
                }
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(ConfigError { problems })
        }
    }

    /// Generator settings for synthetic domain `index`; training and
    /// evaluation draws use distinct sample seeds.
    pub fn domain_spec(&self, index: usize, eval: bool) -> SyntheticDomainSpec {
        let d = &self.data;
        SyntheticDomainSpec {
            base_seed: d.base_seed,
            sample_seed: self
                .seed
                .wrapping_mul(1_000_003)
                .wrapping_add(2 * index as u64 + eval as u64),
            n_classes: d.n_classes,
            n_samples: if eval {
                d.eval_samples
            } else {
                d.train_samples
            },
            side: d.side,
            blobs_per_class: d.blobs_per_class,
            jitter: d.jitter,
            pixel_noise: d.pixel_noise,
            transform: self.domains[index].transform.clone(),
        }
    }

    /// Training settings with the experiment seed applied.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            ..self.train.clone()
        }
    }

    pub fn probe_options(&self) -> ProbeOptions {
        ProbeOptions {
            seed: self.seed,
            ..self.probe.clone()
        }
    }

    pub fn with_buffer_mode(mut self, mode: BufferMode) -> Self {
        self.train.buffer_mode = mode;
        self
    }
}
