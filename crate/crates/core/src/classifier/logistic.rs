use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::featurize::FeatureMatrix;
use crate::linalg::{cholesky, cholesky_solve};
use crate::pyramid::PyramidConfig;

use super::CvResult;

const MAX_HALVINGS: usize = 30;
const WEIGHT_NORM_LIMIT: f64 = 1e6;

/// Newton solver settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainOptions {
    pub l2: f64,
    /// Stop once the gradient infinity-norm falls below this.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            l2: 1.0,
            tol: 1e-8,
            max_iter: 100,
        }
    }
}

/// Convergence record of a fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitInfo {
    pub iterations: usize,
    pub grad_norm: f64,
    pub converged: bool,
    /// Objective before the first step and after every accepted step.
    pub objective_trace: Vec<f64>,
}

/// Linear logistic model on z-scored features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticModel {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub l2: f64,
    pub feature_mean: Vec<f64>,
    /// Standard deviations; constant features get 1 and a weight pinned to 0.
    pub feature_scale: Vec<f64>,
    pub fit: FitInfo,
}

impl LogisticModel {
    fn score(&self, row: &[f32]) -> f64 {
        let mut z = self.bias;
        for (((&v, m), s), w) in row
            .iter()
            .zip(&self.feature_mean)
            .zip(&self.feature_scale)
            .zip(&self.weights)
        {
            z += w * ((v as f64 - m) / s);
        }
        z
    }
}

/// Everything written to a model file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub format: String,
    pub model: LogisticModel,
    pub options: TrainOptions,
    pub dictionary_sha256: String,
    pub features_sha256: String,
    pub labels_sha256: String,
    pub scales: usize,
    pub atoms: usize,
    pub pyramid: PyramidConfig,
    pub training_rows: usize,
    pub cv: Option<CvResult>,
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

// log(1 + e^z) without overflow
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// Fails unless every label is 0 or 1 and the count matches.
pub fn check_labels(labels: &[u8], rows: usize) -> Result<()> {
    if labels.len() != rows {
        return Err(Error::Dimension(format!(
            "{} labels for {rows} feature rows",
            labels.len()
        )));
    }
    if let Some(l) = labels.iter().find(|&&l| l > 1) {
        return Err(Error::InvalidArgument(format!("label {l} is not 0 or 1")));
    }
    Ok(())
}

/// `sum softplus(z_i) - y_i z_i + (l2 / 2) ||w||^2` and its gradient
/// `[Z^T (s - y) + l2 w, sum (s - y)]` on already standardized rows.
pub fn objective_and_gradient(
    rows: &[Vec<f64>],
    labels: &[f64],
    weights: &[f64],
    bias: f64,
    l2: f64,
) -> (f64, Vec<f64>) {
    let p = weights.len();
    let mut f = 0.5 * l2 * weights.iter().map(|w| w * w).sum::<f64>();
    let mut g: Vec<f64> = weights.iter().map(|w| l2 * w).chain([0.0]).collect();
    for (row, &y) in rows.iter().zip(labels) {
        let z = bias + row.iter().zip(weights).map(|(a, w)| a * w).sum::<f64>();
        f += softplus(z) - y * z;
        let r = sigmoid(z) - y;
        for (gj, a) in g[..p].iter_mut().zip(row) {
            *gj += r * a;
        }
        g[p] += r;
    }
    (f, g)
}

/// Fits a model by damped Newton iterations on z-scored features.
///
/// The bias is unpenalized. Each step solves `(Z^T S Z + l2 I) d = -g`
/// (with `S = diag(s (1 - s))`) and is halved until the objective does not
/// increase, at most 30 times.
pub fn train_logreg(x: &FeatureMatrix, labels: &[u8], opts: &TrainOptions) -> Result<LogisticModel> {
    check_labels(labels, x.num_rows())?;
    if x.is_empty() {
        return Err(Error::InvalidArgument("no training rows".into()));
    }
    if !(opts.l2 >= 0.0) || !opts.l2.is_finite() {
        return Err(Error::InvalidArgument(format!("invalid l2 {}", opts.l2)));
    }
    let positives = labels.iter().filter(|&&l| l == 1).count();
    if (positives == 0 || positives == labels.len()) && opts.l2 == 0.0 {
        return Err(Error::InvalidArgument(
            "single-class labels need l2 > 0; the unregularized fit diverges".into(),
        ));
    }

    let (n, p) = (x.num_rows(), x.row_len());
    let mut mean = vec![0.0; p];
    for row in x.rows() {
        mean.iter_mut().zip(row).for_each(|(m, &v)| *m += v as f64);
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut var = vec![0.0; p];
    for row in x.rows() {
        for ((s, &v), m) in var.iter_mut().zip(row).zip(&mean) {
            *s += (v as f64 - m).powi(2);
        }
    }
    let mut scale = Vec::with_capacity(p);
    let mut free = Vec::with_capacity(p);
    for (j, s) in var.iter().enumerate() {
        let sd = (s / n as f64).sqrt();
        if sd <= 1e-9 * mean[j].abs() || sd == 0.0 {
            scale.push(1.0);
        } else {
            scale.push(sd);
            free.push(j);
        }
    }

    let rows: Vec<Vec<f64>> = x
        .rows()
        .map(|row| {
            free.iter()
                .map(|&j| (row[j] as f64 - mean[j]) / scale[j])
                .collect()
        })
        .collect();
    let y: Vec<f64> = labels.iter().map(|&l| l as f64).collect();
    let (w, b, fit) = newton(&rows, &y, opts)?;

    let mut weights = vec![0.0; p];
    for (&j, wj) in free.iter().zip(w) {
        weights[j] = wj;
    }
    Ok(LogisticModel {
        weights,
        bias: b,
        l2: opts.l2,
        feature_mean: mean,
        feature_scale: scale,
        fit,
    })
}

fn newton(rows: &[Vec<f64>], y: &[f64], opts: &TrainOptions) -> Result<(Vec<f64>, f64, FitInfo)> {
    let p = rows.first().map_or(0, Vec::len);
    let m = p + 1;
    let mut w = vec![0.0; p];
    let mut b = 0.0;
    let (mut f, mut g) = objective_and_gradient(rows, y, &w, b, opts.l2);
    // The trace accumulates exact per-step changes, so it is non-increasing.
    let mut trace = vec![f];
    let mut iterations = 0;
    let inf_norm = |g: &[f64]| g.iter().fold(0.0f64, |a, v| a.max(v.abs()));

    while inf_norm(&g) >= opts.tol && iterations < opts.max_iter {
        iterations += 1;
        // Hessian over (w, b), row-major m x m.
        let mut h = vec![0.0; m * m];
        for row in rows {
            let z = b + row.iter().zip(&w).map(|(a, c)| a * c).sum::<f64>();
            let s = sigmoid(z);
            let sw = s * (1.0 - s);
            for i in 0..p {
                let ri = sw * row[i];
                if ri == 0.0 {
                    continue;
                }
                for j in 0..=i {
                    h[i * m + j] += ri * row[j];
                }
                h[p * m + i] += ri;
            }
            h[p * m + p] += sw;
        }
        for i in 0..m {
            for j in 0..i {
                h[j * m + i] = h[i * m + j];
            }
        }
        for i in 0..p {
            h[i * m + i] += opts.l2;
        }
        let step = solve_with_jitter(&mut h, m, &g)?;
        let z_now: Vec<f64> = rows
            .iter()
            .map(|row| b + row.iter().zip(&w).map(|(a, c)| a * c).sum::<f64>())
            .collect();
        let z_dir: Vec<f64> = rows
            .iter()
            .map(|row| -step[p] - row.iter().zip(&step).map(|(a, c)| a * c).sum::<f64>())
            .collect();

        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..=MAX_HALVINGS {
            let change = objective_change(&z_now, &z_dir, y, &w, &step[..p], t, opts.l2);
            if change <= 0.0 {
                w.iter_mut().zip(&step).for_each(|(a, d)| *a -= t * d);
                b -= t * step[p];
                f += change;
                g = objective_and_gradient(rows, y, &w, b, opts.l2).1;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            log::debug!("newton: no decrease after {MAX_HALVINGS} halvings");
            break;
        }
        trace.push(f);
        check_weight_norm(&w, b)?;
    }
    let grad_norm = inf_norm(&g);
    Ok((
        w,
        b,
        FitInfo {
            iterations,
            grad_norm,
            converged: grad_norm < opts.tol,
            objective_trace: trace,
        },
    ))
}

// f(theta - t d) - f(theta), summed from per-row differences so that changes
// far below the magnitude of f itself keep their sign.
fn objective_change(
    z: &[f64],
    z_dir: &[f64],
    y: &[f64],
    w: &[f64],
    w_step: &[f64],
    t: f64,
    l2: f64,
) -> f64 {
    let mut total = 0.0;
    for ((&zi, &di), &yi) in z.iter().zip(z_dir).zip(y) {
        let delta = t * di;
        let soft = if delta.abs() < 30.0 && zi.abs() < 700.0 {
            (sigmoid(zi) * delta.exp_m1()).ln_1p()
        } else {
            softplus(zi + delta) - softplus(zi)
        };
        total += soft - yi * delta;
    }
    // ||w - t s||^2 - ||w||^2 = -2 t w.s + t^2 ||s||^2
    let ws: f64 = w.iter().zip(w_step).map(|(a, c)| a * c).sum();
    let ss: f64 = w_step.iter().map(|c| c * c).sum();
    total + 0.5 * l2 * (t * t * ss - 2.0 * t * ws)
}

fn check_weight_norm(w: &[f64], b: f64) -> Result<()> {
    let norm = w.iter().map(|v| v * v).sum::<f64>().sqrt();
    if !(norm <= WEIGHT_NORM_LIMIT) || !b.is_finite() {
        return Err(Error::Numerical(format!(
            "weight norm {norm:e} exceeds {WEIGHT_NORM_LIMIT:e}; data are likely separable, use l2 > 0"
        )));
    }
    Ok(())
}

// Solves H d = g; adds a growing ridge when H is numerically singular
// (only possible with l2 = 0).
fn solve_with_jitter(h: &mut [f64], m: usize, g: &[f64]) -> Result<Vec<f64>> {
    let max_diag = (0..m).map(|i| h[i * m + i]).fold(0.0f64, f64::max).max(1e-300);
    let mut jitter = 0.0;
    for _ in 0..12 {
        if let Some(l) = cholesky(h, m, 1e-14) {
            return Ok(cholesky_solve(&l, m, g));
        }
        let next = if jitter == 0.0 { 1e-12 * max_diag } else { jitter * 10.0 };
        for i in 0..m {
            h[i * m + i] += next - jitter;
        }
        jitter = next;
    }
    Err(Error::Numerical("Newton system is singular".into()))
}

/// `sigma(w . standardize(x) + b)` per row.
pub fn predict_proba(model: &LogisticModel, x: &FeatureMatrix) -> Result<Vec<f64>> {
    if x.row_len() != model.weights.len() {
        return Err(Error::Dimension(format!(
            "model expects rows of length {}, got {}",
            model.weights.len(),
            x.row_len()
        )));
    }
    Ok(x.rows().map(|row| sigmoid(model.score(row))).collect())
}

/// Hard labels with the rule `probability > threshold`.
pub fn predict_labels(model: &LogisticModel, x: &FeatureMatrix, threshold: f64) -> Result<Vec<u8>> {
    Ok(predict_proba(model, x)?
        .into_iter()
        .map(|p| u8::from(p > threshold))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn separating_feature_with_l2() {
        let x = FeatureMatrix::from_rows(&[vec![-1.0], vec![1.0]]).unwrap();
        let m = train_logreg(&x, &[0, 1], &TrainOptions { l2: 1.0, ..Default::default() }).unwrap();
        assert!(m.fit.converged && m.fit.grad_norm < 1e-8);
        let p = predict_proba(&m, &x).unwrap();
        assert!(p[0] < 0.5 && p[1] > 0.5);
    }

    #[test]
    fn single_class_with_l2_stays_finite() {
        let rows: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64, (i * i) as f64]).collect();
        let x = FeatureMatrix::from_rows(&rows).unwrap();
        let m = train_logreg(&x, &[1; 10], &TrainOptions { l2: 1.0, ..Default::default() }).unwrap();
        assert!(m.weights.iter().all(|w| w.abs() < 1e-6));
        assert!(m.bias.is_finite() && m.bias > 5.0);
        assert!(train_logreg(&x, &[1; 10], &TrainOptions { l2: 0.0, ..Default::default() }).is_err());
    }

    #[test]
    fn separable_without_l2_stays_bounded() {
        let x = FeatureMatrix::from_rows(&[vec![-2.0], vec![-1.0], vec![1.0], vec![2.0]]).unwrap();
        let r = train_logreg(&x, &[0, 0, 1, 1], &TrainOptions { l2: 0.0, max_iter: 1000, ..Default::default() });
        match r {
            Ok(m) => assert!(m.weights[0].abs() <= WEIGHT_NORM_LIMIT && m.weights[0] > 0.0),
            Err(e) => assert!(matches!(e, Error::Numerical(_))),
        }
    }

    #[test]
    fn weight_norm_guard() {
        assert!(check_weight_norm(&[8e5, 8e5], 0.0).is_err());
        assert!(check_weight_norm(&[1.0], f64::NAN).is_err());
        assert!(check_weight_norm(&[f64::NAN], 0.0).is_err());
        assert!(check_weight_norm(&[7e5, 7e5 - 1.0], 0.0).is_ok());
    }

    #[test]
    fn constant_features_are_pinned() {
        let x = FeatureMatrix::from_rows(&[vec![3.0, -1.0], vec![3.0, 1.0], vec![3.0, 0.5], vec![3.0, -0.2]]).unwrap();
        let m = train_logreg(&x, &[0, 1, 1, 0], &TrainOptions::default()).unwrap();
        assert_eq!(m.weights[0], 0.0);
        assert_eq!(m.feature_scale[0], 1.0);
        assert!(m.feature_scale[1] > 0.0);
    }

    #[test]
    fn zero_model_predicts_half() {
        let model = LogisticModel {
            weights: vec![0.0; 3],
            bias: 0.0,
            l2: 1.0,
            feature_mean: vec![0.0; 3],
            feature_scale: vec![1.0; 3],
            fit: FitInfo { iterations: 0, grad_norm: 0.0, converged: true, objective_trace: vec![] },
        };
        let x = FeatureMatrix::from_rows(&[vec![1.0, 2.0, 3.0], vec![0.0, 0.0, 0.0]]).unwrap();
        assert_eq!(predict_proba(&model, &x).unwrap(), vec![0.5, 0.5]);
        // strict rule: exactly 0.5 is non-vessel
        assert_eq!(predict_labels(&model, &x, 0.5).unwrap(), vec![0, 0]);
        let bad = FeatureMatrix::from_rows(&[vec![1.0]]).unwrap();
        assert!(predict_proba(&model, &bad).is_err());
    }

    #[test]
    fn sigmoid_is_monotone_toward_one() {
        let model = LogisticModel {
            weights: vec![1.0],
            bias: 0.0,
            l2: 1.0,
            feature_mean: vec![0.0],
            feature_scale: vec![1.0],
            fit: FitInfo { iterations: 0, grad_norm: 0.0, converged: true, objective_trace: vec![] },
        };
        let rows: Vec<Vec<f64>> = (0..40).map(|i| vec![i as f64]).collect();
        let p = predict_proba(&model, &FeatureMatrix::from_rows(&rows).unwrap()).unwrap();
        assert!(p.windows(2).all(|w| w[1] >= w[0]));
        assert!(p[39] > 1.0 - 1e-15);
    }

    #[test]
    fn label_validation() {
        let x = FeatureMatrix::from_rows(&[vec![1.0], vec![2.0]]).unwrap();
        assert!(train_logreg(&x, &[0, 2], &TrainOptions::default()).is_err());
        assert!(train_logreg(&x, &[0], &TrainOptions::default()).is_err());
    }
}
