use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use vessel3d::classifier::{CvConfig, TrainOptions};
use vessel3d::evaluation::{EvalConfig, PhantomSpec};
use vessel3d::featurize::DEFAULT_MAX_ROW_LEN;
use vessel3d::pyramid::PyramidConfig;
use vessel3d::sparse_coding::DictLearnConfig;

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FeatureConfig {
    /// Pyramid levels used for features; the pyramid section's count when absent.
    pub scales: Option<usize>,
    pub max_row_len: usize,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            scales: None,
            max_row_len: DEFAULT_MAX_ROW_LEN,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct ClassifierConfig {
    pub cv: CvConfig,
    pub train: TrainOptions,
    /// Fixed strength; skips cross validation when set.
    pub l2: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PredictConfig {
    pub enabled: bool,
    pub threshold: f64,
}

impl Default for PredictConfig {
    fn default() -> Self {
        PredictConfig {
            enabled: true,
            threshold: 0.5,
        }
    }
}

/// Every stage's settings in one document. The defaults are the desk-scale
/// phantom run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub phantom: PhantomSpec,
    pub pyramid: PyramidConfig,
    pub dictionary: DictLearnConfig,
    pub features: FeatureConfig,
    pub classifier: ClassifierConfig,
    pub evaluation: EvalConfig,
    pub predict: PredictConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            phantom: PhantomSpec::default(),
            pyramid: PyramidConfig::default(),
            dictionary: DictLearnConfig::default(),
            features: FeatureConfig::default(),
            classifier: ClassifierConfig::default(),
            evaluation: EvalConfig {
                train_count: 120,
                test_count: 40,
                trials: 50,
                ..EvalConfig::default()
            },
            predict: PredictConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Validation(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::Validation(format!("invalid config {}: {e}", path.display())))
    }

    /// Replaces every stage seed.
    pub fn set_seed(&mut self, seed: u64) {
        self.phantom.seed = seed;
        self.dictionary.seed = seed;
        self.classifier.cv.seed = seed;
        self.evaluation.seed = seed;
    }

    pub fn feature_pyramid(&self) -> PyramidConfig {
        PyramidConfig {
            scales: self.features.scales.unwrap_or(self.pyramid.scales),
            ..self.pyramid
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.phantom.validate()?;
        self.dictionary.validate()?;
        if self.pyramid.scales == 0 || self.feature_pyramid().scales == 0 {
            return Err(CliError::Validation("scales must be at least 1".into()));
        }
        let labeled = 2 * self.phantom.annotations_per_class;
        self.evaluation.validate(labeled)?;
        if !(0.0..1.0).contains(&self.predict.threshold) {
            return Err(CliError::Validation(format!(
                "threshold {} outside [0, 1)",
                self.predict.threshold
            )));
        }
        Ok(())
    }
}
