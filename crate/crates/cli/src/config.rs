//! The run configuration file: a single JSON document that fully determines
//! a training run. Unknown keys are rejected, every field has a default, and
//! the fully resolved config is echoed into the output directory so a run
//! can always be reproduced from its artifacts.

use std::path::Path;

use serde::{Deserialize, Serialize};

use marginlab_core::data::{gen_blobs, load_csv, split_shuffle, standardize, Dataset, Split};
use marginlab_core::error::{Error, Result};
use marginlab_core::model::{init_model, Model};
use marginlab_core::objective::{AlphaSchedule, LossMode};
use marginlab_core::selection::{PolicyKind, SelectionPolicy};
use marginlab_core::trainer::{LrSchedule, TrainConfig};

/// Where the samples come from.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum DatasetSpec {
    /// Synthetic Gaussian blobs with class means on a circle.
    Blobs {
        n_classes: usize,
        dim: usize,
        per_class: usize,
        center_radius: f64,
        sigma: f64,
        seed: u64,
    },
    /// A headered CSV with one label column.
    Csv { path: String, label_column: String },
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec::Blobs {
            n_classes: 3,
            dim: 2,
            per_class: 200,
            center_radius: 4.0,
            sigma: 1.0,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSpec {
    /// Train/validation/test fractions; must sum to 1.
    pub fractions: [f64; 3],
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec { fractions: [0.8, 0.1, 0.1], seed: 2 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSpec {
    /// Hidden layer widths; empty means the head classifies raw features.
    pub hidden_dims: Vec<usize>,
    pub seed: u64,
}

impl Default for ModelSpec {
    fn default() -> Self {
        ModelSpec { hidden_dims: Vec::new(), seed: 3 }
    }
}

/// Learning-rate section: a base rate with per-drop factors, or explicit
/// per-phase rates. `drop_factors` left empty with non-empty `drop_steps`
/// means a 10x cut at every drop.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LrSpec {
    pub base_lr: f64,
    pub drop_steps: Vec<u64>,
    pub drop_factors: Vec<f64>,
    /// Explicit rate per phase (`drop_steps.len() + 1` entries); overrides
    /// `base_lr`/`drop_factors` when set.
    pub phases: Option<Vec<f64>>,
}

impl Default for LrSpec {
    fn default() -> Self {
        LrSpec { base_lr: 0.1, drop_steps: Vec::new(), drop_factors: Vec::new(), phases: None }
    }
}

impl LrSpec {
    pub fn to_schedule(&self) -> Result<LrSchedule> {
        let schedule = match &self.phases {
            Some(phases) => LrSchedule::from_phases(phases.clone(), self.drop_steps.clone()),
            None => {
                let factors = if self.drop_factors.is_empty() {
                    vec![0.1; self.drop_steps.len()]
                } else {
                    self.drop_factors.clone()
                };
                if factors.len() != self.drop_steps.len() {
                    return Err(Error::invalid(format!(
                        "lr: {} drop_factors for {} drop_steps",
                        factors.len(),
                        self.drop_steps.len()
                    )));
                }
                LrSchedule::from_factors(self.base_lr, self.drop_steps.clone(), &factors)
            }
        };
        schedule.validate()?;
        Ok(schedule)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSpec {
    pub policy: SelectionPolicy,
    pub lr: LrSpec,
    pub alpha: AlphaSchedule,
    pub mmr_enabled: bool,
    pub mmr_feature_path: bool,
    pub loss_mode: LossMode,
    pub total_steps: u64,
    pub eval_interval: u64,
    pub seed: u64,
    pub momentum: f64,
    pub target_accuracy: Option<f64>,
    pub stop_at_target: bool,
    pub checkpoint_interval: Option<u64>,
}

impl Default for TrainSpec {
    fn default() -> Self {
        TrainSpec {
            policy: SelectionPolicy { kind: PolicyKind::Random, big_batch: 32, small_batch: 32 },
            lr: LrSpec::default(),
            alpha: AlphaSchedule::Constant { value: 1e-5 },
            mmr_enabled: false,
            mmr_feature_path: false,
            loss_mode: LossMode::Ce,
            total_steps: 500,
            eval_interval: 10,
            seed: 5,
            momentum: 0.0,
            target_accuracy: None,
            stop_at_target: false,
            checkpoint_interval: None,
        }
    }
}

impl TrainSpec {
    pub fn to_config(&self) -> Result<TrainConfig> {
        Ok(TrainConfig {
            policy: self.policy,
            lr: self.lr.to_schedule()?,
            alpha: self.alpha,
            mmr_enabled: self.mmr_enabled,
            mmr_feature_path: self.mmr_feature_path,
            loss_mode: self.loss_mode,
            total_steps: self.total_steps,
            eval_interval: self.eval_interval,
            seed: self.seed,
            momentum: self.momentum,
            target_accuracy: self.target_accuracy,
            stop_at_target: self.stop_at_target,
            checkpoint_interval: self.checkpoint_interval,
        })
    }
}

/// The whole run configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: DatasetSpec,
    pub split: SplitSpec,
    /// Standardize features with train-split statistics.
    pub standardize: bool,
    pub model: ModelSpec,
    pub train: TrainSpec,
    pub out_dir: String,
    /// Emit the per-step selection criterion log.
    pub log_selection: bool,
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        serde_json::from_str(&text)
            .map_err(|e| Error::Json { context: format!("config {}", path.display()), source: e })
    }

    /// Cheap structural validation; runs before any data is generated.
    pub fn validate(&self) -> Result<()> {
        self.train.policy.validate()?;
        self.train.lr.to_schedule()?;
        self.train.alpha.validate()?;
        let (ft, fv, fs) =
            (self.split.fractions[0], self.split.fractions[1], self.split.fractions[2]);
        if !(ft >= 0.0 && fv >= 0.0 && fs >= 0.0) || (ft + fv + fs - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!(
                "split fractions {:?} must be non-negative and sum to 1",
                self.split.fractions
            )));
        }
        if self.train.eval_interval == 0 {
            return Err(Error::invalid("eval_interval must be positive".to_string()));
        }
        if self.out_dir.is_empty() {
            return Err(Error::invalid("out_dir must not be empty".to_string()));
        }
        Ok(())
    }

    pub fn build_dataset(&self) -> Result<Dataset> {
        match &self.dataset {
            DatasetSpec::Blobs { n_classes, dim, per_class, center_radius, sigma, seed } => {
                gen_blobs(*n_classes, *dim, *per_class, *center_radius, *sigma, *seed)
            }
            DatasetSpec::Csv { path, label_column } => {
                load_csv(Path::new(path), Some(label_column))?.into_dataset()
            }
        }
    }

    pub fn build_split(&self, dataset: &Dataset) -> Result<Split> {
        let f = self.split.fractions;
        let mut split = split_shuffle(dataset, (f[0], f[1], f[2]), self.split.seed)?;
        if self.standardize {
            let (out, _, _) =
                standardize(&split.train, &[&split.validation, &split.test])?;
            let mut parts = out.into_iter();
            split = Split {
                train: parts.next().unwrap(),
                validation: parts.next().unwrap(),
                test: parts.next().unwrap(),
            };
        }
        Ok(split)
    }

    pub fn build_model(&self, input_dim: usize, n_classes: usize) -> Result<Model> {
        let mut dims = vec![input_dim];
        dims.extend_from_slice(&self.model.hidden_dims);
        init_model(&dims, n_classes, self.model.seed)
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            dataset: DatasetSpec::default(),
            split: SplitSpec::default(),
            standardize: false,
            model: ModelSpec::default(),
            train: TrainSpec::default(),
            out_dir: "run-out".to_string(),
            log_selection: false,
        }
    }
}
