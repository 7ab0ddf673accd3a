//! The declarative experiment configuration. Every field has a default, so
//! a config file only states what it changes; the manifest always embeds
//! the fully resolved form.

use serde::{Deserialize, Serialize};
use std::path::Path;

use vlbc_core::classify::{TrainConfig, WeightMode};
use vlbc_core::paths::PathTrainingConfig;
use vlbc_core::world::{BiasSpec, WorldConfig};

use crate::error::{HarnessError, Result};

/// Which training-set construction the run evaluates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
#[clap(rename_all = "snake_case")]
pub enum Method {
    /// Original data only; no fine-tuning.
    Baseline,
    /// Inject unedited pool images of the minority class.
    BaselineSampling,
    /// Inverse cell-frequency loss weighting on the original data.
    Weighting,
    /// Edit majority-class pool images into the minority class, filtered.
    VlbcMinus,
    /// Same without the post-augmentation filter.
    VlbcMinusNofilter,
    /// Edit minority-class pool images into the majority class.
    VlbcPlus,
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Baseline => "baseline",
            Method::BaselineSampling => "baseline_sampling",
            Method::Weighting => "weighting",
            Method::VlbcMinus => "vlbc_minus",
            Method::VlbcMinusNofilter => "vlbc_minus_nofilter",
            Method::VlbcPlus => "vlbc_plus",
        }
    }

    pub fn all() -> [Method; 6] {
        [
            Method::Baseline,
            Method::BaselineSampling,
            Method::Weighting,
            Method::VlbcMinus,
            Method::VlbcMinusNofilter,
            Method::VlbcPlus,
        ]
    }

    pub fn parse(name: &str) -> Result<Method> {
        Method::all()
            .into_iter()
            .find(|m| m.name() == name)
            .ok_or_else(|| HarnessError::Config(format!("unknown method '{name}'")))
    }
}

fn default_true_fraction() -> Vec<f64> {
    vec![0.2, 0.4, 0.6, 0.8, 1.0]
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldSection {
    pub d_s: usize,
    pub d_x: usize,
    pub num_attributes: usize,
    pub saturation: f64,
    pub noise_std: f64,
    pub box_radius: f64,
    pub protected_salience: f64,
    /// Seed for the world geometry and its datasets. Run seeds vary only
    /// training and augmentation randomness, mirroring repeated training
    /// runs on one fixed dataset.
    pub seed: u64,
}

impl Default for WorldSection {
    fn default() -> Self {
        WorldSection {
            d_s: 16,
            d_x: 32,
            num_attributes: 4,
            saturation: 6.0,
            noise_std: 0.4,
            box_radius: 6.0,
            protected_salience: 2.5,
            seed: 0,
        }
    }
}

impl WorldSection {
    pub fn to_world_config(&self, seed: u64) -> WorldConfig {
        WorldConfig {
            d_s: self.d_s,
            d_x: self.d_x,
            num_attributes: self.num_attributes,
            thresholds: Vec::new(),
            saturation: self.saturation,
            noise_std: self.noise_std,
            box_radius: self.box_radius,
            protected_salience: self.protected_salience,
            seed,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BiasSection {
    pub attribute_index: usize,
    pub correlation: f64,
    pub group_imbalance: f64,
}

impl Default for BiasSection {
    fn default() -> Self {
        BiasSection {
            attribute_index: 0,
            correlation: 0.8,
            group_imbalance: 0.2,
        }
    }
}

impl BiasSection {
    pub fn to_bias_spec(&self) -> BiasSpec {
        BiasSpec {
            attribute_index: self.attribute_index,
            correlation: self.correlation,
            group_imbalance: self.group_imbalance,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub train_size: usize,
    pub test_size: usize,
    /// Disjoint clean split the pseudo labeler is fitted on.
    pub labeler_size: usize,
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection {
            // 70/30 split analog of the training size
            train_size: 10_000,
            test_size: 4286,
            labeler_size: 4000,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PoolSection {
    pub size: usize,
    pub correlation: f64,
    pub group_imbalance: f64,
    /// Fraction of attribute-positive pool items; omitted means the
    /// solver's default marginal.
    pub attribute_marginal: Option<f64>,
}

impl Default for PoolSection {
    fn default() -> Self {
        PoolSection {
            size: 20_000,
            correlation: 0.0,
            group_imbalance: 0.5,
            attribute_marginal: None,
        }
    }
}

impl PoolSection {
    pub fn to_bias_spec(&self, attribute_index: usize) -> BiasSpec {
        BiasSpec {
            attribute_index,
            correlation: self.correlation,
            group_imbalance: self.group_imbalance,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbeddingSection {
    pub dimension: usize,
    pub prototype_scale: f64,
    /// Dipole bandwidth; omitted means the median heuristic.
    pub gamma: Option<f64>,
    /// World direction index per dipole; empty means
    /// [protected, bias attribute].
    pub dipole_directions: Vec<usize>,
    /// Optional (negative, positive) prompt metadata per dipole.
    pub prompts: Vec<(String, String)>,
}

impl Default for EmbeddingSection {
    fn default() -> Self {
        EmbeddingSection {
            dimension: 24,
            prototype_scale: 3.0,
            gamma: None,
            dipole_directions: Vec::new(),
            prompts: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsSection {
    pub supports: usize,
    pub epochs: usize,
    pub minibatch: usize,
    pub learning_rate: f64,
    pub train_step: f64,
    pub temperature: f64,
    pub training_codes: usize,
}

impl Default for PathsSection {
    fn default() -> Self {
        PathsSection {
            supports: 8,
            epochs: 40,
            minibatch: 32,
            learning_rate: 0.05,
            train_step: 0.2,
            temperature: 0.1,
            training_codes: 512,
        }
    }
}

impl PathsSection {
    pub fn to_training_config(&self, seed: u64) -> PathTrainingConfig {
        PathTrainingConfig {
            epochs: self.epochs,
            minibatch: self.minibatch,
            learning_rate: self.learning_rate,
            train_step: self.train_step,
            temperature: self.temperature,
            training_codes: self.training_codes,
            seed,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TraversalSection {
    pub epsilon: f64,
    pub steps_min: usize,
    pub steps_max: usize,
}

impl Default for TraversalSection {
    fn default() -> Self {
        TraversalSection {
            epsilon: 0.25,
            steps_min: 3,
            steps_max: 10,
        }
    }
}

macro_rules! train_section {
    ($name:ident, lr = $lr:expr, epochs = $epochs:expr) => {
        #[derive(Debug, Clone, Serialize, Deserialize)]
        #[serde(default, deny_unknown_fields)]
        pub struct $name {
            pub learning_rate: f64,
            pub epochs: usize,
            pub batch_size: usize,
            pub focal_gamma: f64,
            pub focal_alpha: f64,
            pub hidden: usize,
            pub freeze_hidden: bool,
        }

        impl Default for $name {
            fn default() -> Self {
                $name {
                    learning_rate: $lr,
                    epochs: $epochs,
                    batch_size: 64,
                    focal_gamma: 2.0,
                    focal_alpha: 0.25,
                    hidden: 32,
                    freeze_hidden: false,
                }
            }
        }

        impl $name {
            pub fn to_train_config(&self, weight_mode: WeightMode, seed: u64) -> TrainConfig {
                TrainConfig {
                    learning_rate: self.learning_rate,
                    epochs: self.epochs,
                    batch_size: self.batch_size,
                    focal_gamma: self.focal_gamma,
                    focal_alpha: self.focal_alpha,
                    weight_mode,
                    hidden: self.hidden,
                    freeze_hidden: self.freeze_hidden,
                    seed,
                }
            }
        }
    };
}

train_section!(BaselineTrainSection, lr = 1e-3, epochs = 100);
train_section!(FinetuneTrainSection, lr = 1e-4, epochs = 50);

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LabelerSection {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub holdout_fraction: f64,
    pub noise_rate: f64,
}

impl Default for LabelerSection {
    fn default() -> Self {
        LabelerSection {
            epochs: 40,
            learning_rate: 0.5,
            batch_size: 64,
            holdout_fraction: 0.3,
            noise_rate: 0.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub method: Method,
    pub seeds: Vec<u64>,
    pub output: String,
    /// Methods swept by `ablate`; empty means just `method`.
    pub ablation_methods: Vec<Method>,
    /// Minority-cell fractions swept by `ablate`.
    pub fractions: Vec<f64>,
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection {
            method: Method::Baseline,
            seeds: vec![1, 2, 3],
            output: "runs/out".to_string(),
            ablation_methods: Vec::new(),
            fractions: default_true_fraction(),
        }
    }
}

/// The whole declarative experiment description.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub world: WorldSection,
    pub bias: BiasSection,
    pub data: DataSection,
    pub pool: PoolSection,
    pub embedding: EmbeddingSection,
    pub paths: PathsSection,
    pub traversal: TraversalSection,
    pub train_baseline: BaselineTrainSection,
    pub train_finetune: FinetuneTrainSection,
    pub labeler: LabelerSection,
    pub run: RunSection,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }

    /// Dipole direction list with the default of
    /// [protected characteristic, bias attribute].
    pub fn dipole_directions(&self) -> Vec<usize> {
        if self.embedding.dipole_directions.is_empty() {
            vec![self.world.num_attributes, self.bias.attribute_index]
        } else {
            self.embedding.dipole_directions.clone()
        }
    }

    pub fn ablation_methods(&self) -> Vec<Method> {
        if self.run.ablation_methods.is_empty() {
            vec![self.run.method]
        } else {
            self.run.ablation_methods.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.run.seeds.is_empty() {
            return Err(HarnessError::Config("seeds must be non-empty".into()));
        }
        if self.bias.attribute_index >= self.world.num_attributes {
            return Err(HarnessError::Config(format!(
                "attribute_index {} out of range for {} attributes",
                self.bias.attribute_index, self.world.num_attributes
            )));
        }
        if self.data.train_size == 0 || self.data.test_size == 0 || self.data.labeler_size == 0 {
            return Err(HarnessError::Config("dataset sizes must be >= 1".into()));
        }
        if self.pool.size == 0 {
            return Err(HarnessError::Config("pool size must be >= 1".into()));
        }
        if self.traversal.steps_min < 1 || self.traversal.steps_min > self.traversal.steps_max {
            return Err(HarnessError::Config(
                "need 1 <= steps_min <= steps_max".into(),
            ));
        }
        if self.traversal.epsilon == 0.0 {
            return Err(HarnessError::Config("traversal epsilon must be nonzero".into()));
        }
        for k in self.dipole_directions() {
            if k > self.world.num_attributes {
                return Err(HarnessError::Config(format!(
                    "dipole direction {k} out of range"
                )));
            }
        }
        for f in &self.run.fractions {
            if !(*f > 0.0 && *f <= 1.0) {
                return Err(HarnessError::Config(format!(
                    "fraction {f} outside (0, 1]"
                )));
            }
        }
        Ok(())
    }
}
