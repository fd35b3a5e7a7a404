use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classifier::{predict_labels, train_logreg, TrainOptions};
use crate::error::{Error, Result};
use crate::featurize::FeatureMatrix;

use super::confusion_metrics;

const MAX_REDRAWS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub train_count: usize,
    pub test_count: usize,
    pub trials: usize,
    pub seed: u64,
    pub threshold: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            train_count: 657,
            test_count: 225,
            trials: 1000,
            seed: 0,
            threshold: 0.5,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self, labeled: usize) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::InvalidArgument("trials must be at least 1".into()));
        }
        if self.train_count == 0 || self.test_count == 0 {
            return Err(Error::InvalidArgument("train and test counts must be positive".into()));
        }
        if self.train_count + self.test_count > labeled {
            return Err(Error::InvalidArgument(format!(
                "{} + {} split exceeds {labeled} labeled voxels",
                self.train_count, self.test_count
            )));
        }
        Ok(())
    }
}

/// Row indices of one trial.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrialSplit {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    /// Draws discarded because the training part lacked a class.
    pub redraws: usize,
}

/// The split of trial `trial`: a uniform draw without replacement of
/// `train + test` rows from a generator on stream `trial + 1` of `seed`, so
/// every trial is independent of the others and of the thread schedule.
pub fn trial_split(labels: &[u8], cfg: &EvalConfig, trial: usize) -> Result<TrialSplit> {
    cfg.validate(labels.len())?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(trial as u64 + 1);
    for redraws in 0..=MAX_REDRAWS {
        let mut picked = sample(&mut rng, labels.len(), cfg.train_count + cfg.test_count).into_vec();
        let test = picked.split_off(cfg.train_count);
        let positives = picked.iter().filter(|&&i| labels[i] == 1).count();
        if positives > 0 && positives < picked.len() {
            return Ok(TrialSplit {
                train: picked,
                test,
                redraws,
            });
        }
    }
    Err(Error::InvalidArgument(format!(
        "trial {trial}: training split lacked a class after {MAX_REDRAWS} redraws"
    )))
}

/// Accuracies in percent. With a single trial the std is undefined and
/// reported as 0 with `std_defined = false`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub accuracy_mean: f64,
    /// Sample (N - 1) standard deviation over trials.
    pub accuracy_std: f64,
    pub std_defined: bool,
    pub per_trial: Vec<f64>,
    pub sensitivity_mean: Option<f64>,
    pub specificity_mean: Option<f64>,
    pub redraws: usize,
    pub l2: f64,
    pub config: EvalConfig,
}

impl EvalReport {
    pub fn from_trials(per_trial: Vec<f64>, l2: f64, config: EvalConfig) -> EvalReport {
        let n = per_trial.len() as f64;
        let accuracy_mean = per_trial.iter().sum::<f64>() / n;
        let std = sample_std(&per_trial);
        EvalReport {
            accuracy_mean,
            accuracy_std: std.unwrap_or(0.0),
            std_defined: std.is_some(),
            per_trial,
            sensitivity_mean: None,
            specificity_mean: None,
            redraws: 0,
            l2,
            config,
        }
    }

    /// "97.24±0.90%" style summary.
    pub fn accuracy_text(&self) -> String {
        format_accuracy(self.accuracy_mean, self.accuracy_std)
    }

    /// Plain-text table with one row per metric.
    pub fn table(&self) -> String {
        let opt = |v: Option<f64>| v.map_or("n/a".to_string(), |v| format!("{v:.2}%"));
        let std_note = if self.std_defined { "sample std" } else { "std undefined for one trial" };
        let mut out = String::new();
        out.push_str(&format!("{:<12} {}\n", "Metric", "Value"));
        out.push_str(&format!(
            "{:<12} {}  ({std_note}, {} trials of {}/{} splits)\n",
            "Accuracy",
            self.accuracy_text(),
            self.config.trials,
            self.config.train_count,
            self.config.test_count
        ));
        out.push_str(&format!("{:<12} {}\n", "Sensitivity", opt(self.sensitivity_mean)));
        out.push_str(&format!("{:<12} {}\n", "Specificity", opt(self.specificity_mean)));
        out.push_str(&format!("{:<12} {}\n", "l2", self.l2));
        out
    }
}

pub fn format_accuracy(mean: f64, std: f64) -> String {
    format!("{mean:.2}\u{b1}{std:.2}%")
}

/// Sample standard deviation; `None` for fewer than two values.
pub fn sample_std(values: &[f64]) -> Option<f64> {
    if values.len() < 2 {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    Some((values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt())
}

/// Trains on each trial's training rows with fixed options and scores its
/// test rows. Trials run in parallel; results do not depend on the thread count.
pub fn evaluate_repeated(
    x: &FeatureMatrix,
    labels: &[u8],
    cfg: &EvalConfig,
    opts: &TrainOptions,
) -> Result<EvalReport> {
    crate::classifier::check_labels(labels, x.num_rows())?;
    cfg.validate(labels.len())?;
    let positives = labels.iter().filter(|&&l| l == 1).count();
    if positives == 0 || positives == labels.len() {
        return Err(Error::InvalidArgument("evaluation needs both classes".into()));
    }
    let trials = (0..cfg.trials)
        .into_par_iter()
        .map(|t| {
            let split = trial_split(labels, cfg, t)?;
            let pick = |idx: &[usize]| idx.iter().map(|&i| labels[i]).collect::<Vec<u8>>();
            let model = train_logreg(&x.select(&split.train), &pick(&split.train), opts)?;
            let predicted = predict_labels(&model, &x.select(&split.test), cfg.threshold)?;
            let c = confusion_metrics(&predicted, &pick(&split.test))?;
            Ok((c, split.redraws))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut report = EvalReport::from_trials(
        trials.iter().map(|(c, _)| c.accuracy).collect(),
        opts.l2,
        *cfg,
    );
    report.redraws = trials.iter().map(|(_, r)| r).sum();
    let mean_of = |vals: Vec<f64>| (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64);
    report.sensitivity_mean = mean_of(trials.iter().filter_map(|(c, _)| c.sensitivity).collect());
    report.specificity_mean = mean_of(trials.iter().filter_map(|(c, _)| c.specificity).collect());
    Ok(report)
}
