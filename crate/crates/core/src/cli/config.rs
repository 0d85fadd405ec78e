//! Experiment configuration: a built-in profile with a TOML file merged on top.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::{
    generate_phantom_corpus_with, load_corpus, Corpus, CorpusRole, PhantomConfig,
};
use crate::error::{Error, Result};
use crate::eval::{parse_threshold_grid, validate_thresholds};
use crate::metrics::{check_threshold, MetricPolicies};
use crate::model::ModelKind;
use crate::train::TrainConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Profile {
    /// Phantom data at side 128, two models, a few epochs.
    Desk,
    /// Full protocol: side 1024, 50 epochs, all seven models.
    Paper,
}

/// Synthetic train and externally shifted test corpora.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhantomSpec {
    pub n_train: usize,
    pub n_external: usize,
    pub side: usize,
    pub seed: u64,
    pub train: PhantomConfig,
    pub external: PhantomConfig,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        Self {
            n_train: 40,
            n_external: 20,
            side: 128,
            seed: 7,
            train: PhantomConfig::default(),
            external: PhantomConfig {
                lesion_contrast: 0.2,
                ..PhantomConfig::default()
            },
        }
    }
}

impl PhantomSpec {
    pub fn generate(&self) -> Result<(Corpus, Corpus)> {
        let train = generate_phantom_corpus_with(self.n_train, self.side, self.seed, &self.train)?;
        let mut external =
            generate_phantom_corpus_with(self.n_external, self.side, self.seed.wrapping_add(1), &self.external)?;
        external.name = format!("{}-shifted", external.name);
        external.role = CorpusRole::ExternalTest;
        Ok((train, external))
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub train_root: Option<PathBuf>,
    pub external_root: Option<PathBuf>,
    /// Used for any corpus whose root is not set.
    pub phantom: Option<PhantomSpec>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub data: DataConfig,
    pub models: Vec<String>,
    pub k: usize,
    /// Overrides `train.seed`.
    pub seed: u64,
    pub train: TrainConfig,
    /// Overrides `train.metrics`; also used for evaluation.
    pub metrics: MetricPolicies,
    pub threshold: f64,
    pub thresholds: Vec<f64>,
    pub report_cases: usize,
    /// Excluded from the config hash so relocating a run does not change it.
    pub output_dir: PathBuf,
}

fn profile_config(profile: Profile) -> ExperimentConfig {
    let thresholds = (1..=9).map(|i| i as f64 / 10.0).collect();
    match profile {
        Profile::Desk => ExperimentConfig {
            data: DataConfig {
                phantom: Some(PhantomSpec::default()),
                ..DataConfig::default()
            },
            models: vec!["fastscnn".into(), "mobilenetv2_scse".into()],
            k: 5,
            seed: 0,
            train: TrainConfig {
                epochs: 8,
                batch_size: 4,
                learning_rate: 3e-3,
                image_side: 128,
                ..TrainConfig::default()
            },
            metrics: MetricPolicies::default(),
            threshold: 0.5,
            thresholds,
            report_cases: 2,
            output_dir: PathBuf::from("runs/desk"),
        },
        Profile::Paper => ExperimentConfig {
            data: DataConfig::default(),
            models: ModelKind::ALL.iter().map(|m| m.key().to_string()).collect(),
            k: 5,
            seed: 0,
            train: TrainConfig::default(),
            metrics: MetricPolicies::default(),
            threshold: 0.5,
            thresholds,
            report_cases: 4,
            output_dir: PathBuf::from("runs/paper"),
        },
    }
}

fn merge(base: &mut toml::Value, overlay: toml::Value) {
    match (base, overlay) {
        (toml::Value::Table(b), toml::Value::Table(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

impl ExperimentConfig {
    /// The profile's defaults with `overlay` (TOML text) deep-merged on top.
    pub fn from_profile(profile: Profile, overlay: Option<&str>) -> Result<Self> {
        let base = profile_config(profile);
        let Some(text) = overlay else {
            return Ok(base);
        };
        let mut value = toml::Value::try_from(&base).map_err(|e| Error::Config(e.to_string()))?;
        let mut overlay: toml::Value = toml::from_str(text).map_err(|e| Error::Config(format!("config: {e}")))?;
        // A string grid such as "0.1:0.9:0.1" is accepted for thresholds.
        if let Some(toml::Value::String(grid)) = overlay.get("thresholds") {
            let parsed = parse_threshold_grid(grid)?;
            overlay
                .as_table_mut()
                .expect("top level is a table")
                .insert("thresholds".into(), toml::Value::try_from(parsed).expect("floats"));
        }
        merge(&mut value, overlay);
        value.try_into().map_err(|e: toml::de::Error| Error::Config(format!("config: {e}")))
    }

    pub fn load(profile: Profile, path: Option<&Path>) -> Result<Self> {
        let text = path
            .map(|p| std::fs::read_to_string(p).map_err(|e| Error::Config(format!("cannot read {}: {e}", p.display()))))
            .transpose()?;
        Self::from_profile(profile, text.as_deref())
    }

    pub fn model_kinds(&self) -> Result<Vec<ModelKind>> {
        if self.models.is_empty() {
            return Err(Error::Config(format!(
                "model list is empty; valid keys: {}",
                ModelKind::valid_keys()
            )));
        }
        self.models.iter().map(|m| m.parse()).collect()
    }

    pub fn validate(&self) -> Result<()> {
        self.model_kinds()?;
        if self.k < 2 {
            return Err(Error::Config(format!("k must be at least 2, got {}", self.k)));
        }
        self.train.validate()?;
        check_threshold(self.threshold).map_err(|e| Error::Config(e.to_string()))?;
        validate_thresholds(&self.thresholds)?;
        let d = &self.data;
        if d.phantom.is_none() && (d.train_root.is_none() || d.external_root.is_none()) {
            return Err(Error::Config(
                "data needs train_root and external_root, or a phantom section".into(),
            ));
        }
        for root in [&d.train_root, &d.external_root].into_iter().flatten() {
            if !root.is_dir() {
                return Err(Error::Config(format!("corpus root {} is not a directory", root.display())));
            }
        }
        Ok(())
    }

    /// Training config with the experiment seed applied.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            metrics: self.metrics,
            ..self.train.clone()
        }
    }

    /// sha256 over the canonical JSON form, without `output_dir`.
    pub fn hash(&self) -> String {
        let mut v = serde_json::to_value(self).expect("config serializes");
        v.as_object_mut().expect("object").remove("output_dir");
        let digest = Sha256::digest(v.to_string().as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    pub fn train_corpus(&self) -> Result<Corpus> {
        match (&self.data.train_root, &self.data.phantom) {
            (Some(root), _) => load_corpus(root, CorpusRole::Train),
            (None, Some(p)) => Ok(p.generate()?.0),
            (None, None) => Err(Error::Config("no training corpus configured".into())),
        }
    }

    pub fn external_corpus(&self) -> Result<Corpus> {
        match (&self.data.external_root, &self.data.phantom) {
            (Some(root), _) => load_corpus(root, CorpusRole::ExternalTest),
            (None, Some(p)) => Ok(p.generate()?.1),
            (None, None) => Err(Error::Config("no external corpus configured".into())),
        }
    }
}
