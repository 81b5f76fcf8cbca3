//! Experiment configuration. Files are TOML; every field has a default and
//! the fully resolved config is written into each run directory.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use rovtl_core::evaluation::{default_fractions, sample_seed, MetricKind};
use rovtl_core::finetune::{FinetuneConfig, TaskKind, TaskSpec, TrainingMode};
use rovtl_core::fusion::FusionConfig;
use rovtl_core::pretrain::{AugmentMode, AugmentParams, EncoderConfig, PretrainConfig};
use rovtl_core::synth::SynthConfig;
use rovtl_core::tabular::{ForestConfig, ProtocolKind};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Training seed. Pretraining, initialisation and fine-tuning seeds are
    /// derived from it.
    pub seed: u64,
    pub out_dir: PathBuf,
    pub data: DataConfig,
    pub encoder: EncoderConfig,
    pub pretrain: PretrainSection,
    pub fusion: FusionConfig,
    pub finetune: FinetuneSection,
    pub eval: EvalConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out_dir: PathBuf::from("runs"),
            data: DataConfig::default(),
            encoder: EncoderConfig::default(),
            pretrain: PretrainSection::default(),
            fusion: FusionConfig::default(),
            finetune: FinetuneSection::default(),
            eval: EvalConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// A directory written by `gen-data` (or laid out the same way). When
    /// absent the synthetic generator below is used.
    pub dir: Option<PathBuf>,
    pub synth: SynthConfig,
    /// The last `test_fraction` of rows form the test split.
    pub test_fraction: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            dir: None,
            synth: SynthConfig::default(),
            test_fraction: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PretrainSection {
    pub enabled: bool,
    pub temperature: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub mode: AugmentMode,
    pub corruption_rate: f64,
    pub augment: AugmentParams,
    pub learning_rate: f64,
    pub weight_decay: f64,
}

impl Default for PretrainSection {
    fn default() -> Self {
        let c = PretrainConfig::default();
        Self {
            enabled: true,
            temperature: c.temperature,
            batch_size: c.batch_size,
            epochs: c.epochs,
            mode: c.mode,
            corruption_rate: c.corruption_rate,
            augment: c.augment,
            learning_rate: c.learning_rate,
            weight_decay: c.weight_decay,
        }
    }
}

impl PretrainSection {
    pub fn to_core(&self, seed: u64) -> PretrainConfig {
        PretrainConfig {
            temperature: self.temperature,
            batch_size: self.batch_size,
            epochs: self.epochs,
            mode: self.mode,
            corruption_rate: self.corruption_rate,
            augment: self.augment.clone(),
            learning_rate: self.learning_rate,
            weight_decay: self.weight_decay,
            seed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum TaskName {
    Classification,
    Multilabel,
    Regression,
}

impl TaskName {
    pub fn kind(self) -> TaskKind {
        match self {
            Self::Classification => TaskKind::Multiclass,
            Self::Multilabel => TaskKind::Multilabel,
            Self::Regression => TaskKind::Regression,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FinetuneSection {
    pub task: TaskName,
    /// Classes, labels or regression width; read off the labels when unset.
    pub outputs: Option<usize>,
    /// Ranking-hinge weight; the task default when unset.
    pub lambda: Option<f64>,
    pub epochs: usize,
    pub batch_size: usize,
    /// More than one value triggers selection on a validation slice of the
    /// training split.
    pub learning_rates: Vec<f64>,
    pub validation_fraction: f64,
    pub weight_decay: f64,
    pub frozen: bool,
    pub downstream_missingness: bool,
    pub mode: TrainingMode,
}

impl Default for FinetuneSection {
    fn default() -> Self {
        let c = FinetuneConfig::default();
        Self {
            task: TaskName::Classification,
            outputs: None,
            lambda: None,
            epochs: c.epochs,
            batch_size: c.batch_size,
            learning_rates: vec![1e-3, 3e-3, 1e-4, 3e-4],
            validation_fraction: 0.2,
            weight_decay: c.weight_decay,
            frozen: c.frozen,
            downstream_missingness: c.downstream_missingness,
            mode: c.mode,
        }
    }
}

impl FinetuneSection {
    pub fn to_core(&self, learning_rate: f64, seed: u64) -> FinetuneConfig {
        FinetuneConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            learning_rate,
            weight_decay: self.weight_decay,
            frozen: self.frozen,
            downstream_missingness: self.downstream_missingness,
            mode: self.mode,
            seed,
        }
    }

    /// Task spec once `outputs` and `lambda` are resolved.
    pub fn task_spec(&self) -> anyhow::Result<TaskSpec> {
        let Some(outputs) = self.outputs else {
            bail!("finetune.outputs is unresolved")
        };
        let mut spec = match self.task {
            TaskName::Classification => TaskSpec::classification(outputs),
            TaskName::Multilabel => TaskSpec::multilabel(outputs),
            TaskName::Regression => TaskSpec::regression(outputs),
        };
        if let Some(l) = self.lambda {
            spec.lambda = l;
        }
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub protocols: Vec<ProtocolKind>,
    pub fractions: Vec<f64>,
    /// Defaults to AUC for classification and MAE for regression.
    pub metric: Option<MetricKind>,
    /// One random-protocol sweep per seed.
    pub seeds: Vec<u64>,
    /// Forest used to rank attributes for the importance-ordered protocols.
    /// It keeps its own seed.
    pub forest: ForestConfig,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            protocols: vec![ProtocolKind::Random, ProtocolKind::LeastImportant, ProtocolKind::MostImportant],
            fractions: default_fractions(),
            metric: None,
            seeds: vec![0],
            forest: ForestConfig::default(),
        }
    }
}

/// Stage seeds, all derived from the top-level seed.
#[derive(Debug, Clone, Copy)]
pub struct Seeds {
    pub pretrain: u64,
    pub init: u64,
    pub finetune: u64,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let config: Self = toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        if let Some(dir) = &config.data.dir {
            if !dir.is_dir() {
                bail!("data directory {} does not exist", dir.display());
            }
        }
        Ok(config)
    }

    pub fn to_toml(&self) -> anyhow::Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn seeds(&self) -> Seeds {
        Seeds {
            pretrain: sample_seed(self.seed, 1, 0),
            init: sample_seed(self.seed, 2, 0),
            finetune: sample_seed(self.seed, 3, 0),
        }
    }

    /// Fills in everything that depends on the data or on other sections:
    /// output width, hinge weight, metric and the augmentation output size
    /// (always the image encoder's input size).
    pub fn resolve(&mut self, inferred_outputs: usize) -> anyhow::Result<()> {
        self.pretrain.augment.output_size = self.encoder.image.input_size;
        let outputs = *self.finetune.outputs.get_or_insert(inferred_outputs);
        if outputs == 0 {
            bail!("task needs at least one output");
        }
        if self.finetune.lambda.is_none() {
            self.finetune.lambda = Some(self.finetune.task_spec()?.lambda);
        }
        self.eval.metric.get_or_insert(match self.finetune.task {
            TaskName::Regression => MetricKind::Mae,
            _ => MetricKind::Auc,
        });
        self.validate()
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        if !(0.0 < self.data.test_fraction && self.data.test_fraction < 1.0) {
            bail!("data.test_fraction must lie in (0, 1)");
        }
        if self.finetune.learning_rates.is_empty() || self.finetune.learning_rates.iter().any(|&l| !(l > 0.0)) {
            bail!("finetune.learning_rates must be non-empty and positive");
        }
        if self.finetune.learning_rates.len() > 1 && !(0.0 < self.finetune.validation_fraction && self.finetune.validation_fraction < 1.0) {
            bail!("finetune.validation_fraction must lie in (0, 1)");
        }
        if self.eval.seeds.is_empty() || self.eval.protocols.is_empty() {
            bail!("eval needs at least one seed and one protocol");
        }
        if self.eval.fractions.iter().any(|f| !(0.0..=1.0).contains(f)) || self.eval.fractions.windows(2).any(|w| w[0] >= w[1]) {
            bail!("eval.fractions must be increasing values in [0, 1]");
        }
        self.pretrain.to_core(0).validate()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_survive_a_toml_round_trip() {
        let c = ExperimentConfig::default();
        let back: ExperimentConfig = toml::from_str(&c.to_toml().unwrap()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn partial_file_and_unknown_keys() {
        let c: ExperimentConfig = toml::from_str("seed = 4\n[finetune]\nepochs = 3\nlambda = 0.0\n").unwrap();
        assert_eq!(c.seed, 4);
        assert_eq!(c.finetune.epochs, 3);
        assert_eq!(c.finetune.batch_size, 32);
        assert!(toml::from_str::<ExperimentConfig>("sede = 4\n").is_err());
    }

    #[test]
    fn resolve_fills_task_defaults() {
        let mut c = ExperimentConfig::default();
        c.finetune.task = TaskName::Regression;
        c.resolve(1).unwrap();
        assert_eq!(c.finetune.outputs, Some(1));
        assert_eq!(c.finetune.lambda, Some(0.05));
        assert_eq!(c.eval.metric, Some(MetricKind::Mae));
    }
}
