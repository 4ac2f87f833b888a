//! Pipeline configuration, read from TOML.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::candidates::DEFAULT_FEASIBLE_CAP;
use crate::cross_lr::LrConfig;
use crate::data::{FieldKind, FieldSchema};
use crate::discretize::DEFAULT_GRANULARITIES;
use crate::dnn::DnnConfig;
use crate::inconsistency::DeviationNorm;
use crate::{Error, Result};

fn default_discretize_lr() -> LrConfig {
    LrConfig {
        learning_rates: vec![1.0],
        l2: vec![0.0001],
        epochs: 10,
        patience: 3,
        ..LrConfig::default()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Name of the 0/1 label column.
    pub label: String,
    /// Feature columns, in model order.
    pub fields: Vec<String>,
    /// Subset of `fields` that is numerical; all others are categorical.
    pub numerical: Vec<String>,
    /// Input CSV; may also be given on the command line.
    pub data: Option<PathBuf>,
    pub seed: u64,
    /// Fraction of inconsistency values kept as feasible.
    pub eta: f64,
    /// Number of candidate cross fields; defaults to three per field.
    pub epsilon: Option<usize>,
    pub beam_width: usize,
    /// Upper bound on selected cross fields; unbounded when absent.
    pub max_selected: Option<usize>,
    /// Train, validation and test fractions.
    pub fractions: [f64; 3],
    pub feasible_cap: usize,
    pub granularities: Vec<usize>,
    pub norm: DeviationNorm,
    pub dnn: DnnConfig,
    pub lr: LrConfig,
    /// Logistic regression used to compare granularities.
    pub discretize_lr: LrConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            label: "label".into(),
            fields: Vec::new(),
            numerical: Vec::new(),
            data: None,
            seed: 0,
            eta: 0.05,
            epsilon: None,
            beam_width: 1,
            max_selected: None,
            fractions: [0.6, 0.15, 0.25],
            feasible_cap: DEFAULT_FEASIBLE_CAP,
            granularities: DEFAULT_GRANULARITIES.to_vec(),
            norm: DeviationNorm::Scalar,
            dnn: DnnConfig::default(),
            lr: LrConfig::default(),
            discretize_lr: default_discretize_lr(),
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let config: PipelineConfig =
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0 && self.eta < 1.0) {
            return Err(Error::Config(format!("eta {} must be in (0, 1)", self.eta)));
        }
        if self.epsilon == Some(0) {
            return Err(Error::Config("epsilon must be at least 1".into()));
        }
        if self.beam_width == 0 {
            return Err(Error::Config("beam width must be at least 1".into()));
        }
        if self.feasible_cap < 2 {
            return Err(Error::Config("feasible cap must be at least 2".into()));
        }
        if self.granularities.is_empty() || self.granularities.iter().any(|&g| g < 2) {
            return Err(Error::Config("granularities must be at least 2".into()));
        }
        if let Some(name) = self.numerical.iter().find(|n| !self.fields.contains(n)) {
            return Err(Error::Config(format!(
                "numerical field {name:?} is not a declared field"
            )));
        }
        let sum: f64 = self.fractions.iter().sum();
        if self.fractions.iter().any(|&f| !(f > 0.0 && f < 1.0)) || (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "split fractions {:?} must lie in (0, 1) and sum to 1",
                self.fractions
            )));
        }
        self.schema()?;
        self.dnn.validate()?;
        self.lr.validate()?;
        self.discretize_lr.validate()
    }

    pub fn schema(&self) -> Result<FieldSchema> {
        FieldSchema::new(
            self.fields
                .iter()
                .map(|name| {
                    let kind = if self.numerical.contains(name) {
                        FieldKind::Numerical
                    } else {
                        FieldKind::Categorical
                    };
                    (name.clone(), kind)
                })
                .collect(),
            self.label.clone(),
        )
    }

    /// Candidate count for `n` fields.
    pub fn epsilon_for(&self, n: usize) -> usize {
        self.epsilon.unwrap_or(3 * n).max(1)
    }
}
