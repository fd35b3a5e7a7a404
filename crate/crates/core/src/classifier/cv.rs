use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::logistic::{check_labels, predict_labels, train_logreg, TrainOptions};
use crate::error::{Error, Result};
use crate::featurize::FeatureMatrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CvConfig {
    pub folds: usize,
    pub grid: Vec<f64>,
    pub seed: u64,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for CvConfig {
    fn default() -> Self {
        let opts = TrainOptions::default();
        CvConfig {
            folds: 10,
            grid: super::default_l2_grid(),
            seed: 0,
            tol: opts.tol,
            max_iter: opts.max_iter,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvResult {
    pub grid: Vec<f64>,
    /// `fold_accuracy[g][f]`: accuracy (fraction) of grid value `g` on fold `f`.
    pub fold_accuracy: Vec<Vec<f64>>,
    pub mean_accuracy: Vec<f64>,
    pub best_l2: f64,
    /// Validation fold of every row.
    pub fold_of_row: Vec<usize>,
}

/// Assigns rows to folds: each class is shuffled (seeded) and dealt
/// round-robin, the dealing counter continuing across classes so fold sizes
/// differ by at most one.
pub fn stratified_folds(labels: &[u8], folds: usize, seed: u64) -> Result<Vec<usize>> {
    if folds < 2 {
        return Err(Error::InvalidArgument("cross validation needs at least 2 folds".into()));
    }
    if labels.len() < folds {
        return Err(Error::InvalidArgument(format!(
            "{} rows cannot fill {folds} folds",
            labels.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut assignment = vec![0; labels.len()];
    let mut counter = 0;
    for class in [0u8, 1] {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        idx.shuffle(&mut rng);
        for i in idx {
            assignment[i] = counter % folds;
            counter += 1;
        }
    }
    Ok(assignment)
}

/// k-fold cross validation of the L2 strength. The best value maximizes mean
/// fold accuracy; ties go to the smaller l2.
pub fn cross_validate(x: &FeatureMatrix, labels: &[u8], cfg: &CvConfig) -> Result<CvResult> {
    check_labels(labels, x.num_rows())?;
    if cfg.grid.is_empty() {
        return Err(Error::InvalidArgument("empty l2 grid".into()));
    }
    let positives = labels.iter().filter(|&&l| l == 1).count();
    if positives == 0 || positives == labels.len() {
        return Err(Error::InvalidArgument("cross validation needs both classes".into()));
    }
    let fold_of_row = stratified_folds(labels, cfg.folds, cfg.seed)?;
    let splits: Vec<(Vec<usize>, Vec<usize>)> = (0..cfg.folds)
        .map(|f| (0..labels.len()).partition(|&i| fold_of_row[i] != f))
        .collect();

    let jobs: Vec<(usize, usize)> = (0..cfg.grid.len())
        .flat_map(|g| (0..cfg.folds).map(move |f| (g, f)))
        .collect();
    let accuracies = jobs
        .par_iter()
        .map(|&(g, f)| {
            let (train, valid) = &splits[f];
            let opts = TrainOptions {
                l2: cfg.grid[g],
                tol: cfg.tol,
                max_iter: cfg.max_iter,
            };
            let y_train: Vec<u8> = train.iter().map(|&i| labels[i]).collect();
            let model = train_logreg(&x.select(train), &y_train, &opts)?;
            let predicted = predict_labels(&model, &x.select(valid), 0.5)?;
            let correct = predicted
                .iter()
                .zip(valid)
                .filter(|(p, &i)| **p == labels[i])
                .count();
            Ok(correct as f64 / valid.len() as f64)
        })
        .collect::<Result<Vec<f64>>>()?;

    let fold_accuracy: Vec<Vec<f64>> = accuracies.chunks(cfg.folds).map(<[f64]>::to_vec).collect();
    let mean_accuracy: Vec<f64> = fold_accuracy
        .iter()
        .map(|a| a.iter().sum::<f64>() / a.len() as f64)
        .collect();
    let mut best = 0;
    for g in 1..cfg.grid.len() {
        let better = mean_accuracy[g] > mean_accuracy[best];
        let tie_smaller = mean_accuracy[g] == mean_accuracy[best] && cfg.grid[g] < cfg.grid[best];
        if better || tie_smaller {
            best = g;
        }
    }
    Ok(CvResult {
        grid: cfg.grid.clone(),
        fold_accuracy,
        mean_accuracy,
        best_l2: cfg.grid[best],
        fold_of_row,
    })
}
