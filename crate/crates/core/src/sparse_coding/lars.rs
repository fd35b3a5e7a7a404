//! LASSO sparse codes by least angle regression with the LASSO modification.
//!
//! For `||D x - p||^2 + lambda * ||x||_1` the optimality conditions on the
//! residual correlations `c = D^T (p - D x)` are `c_j = (lambda / 2) sign(x_j)`
//! on the support and `|c_j| <= lambda / 2` elsewhere, so the homotopy stops
//! once the common active correlation has shrunk to `lambda / 2`.

use super::Dictionary;
use crate::error::{Error, Result};
use crate::linalg::{cholesky, cholesky_solve, dot};

// Relative pivot floor below which the active Gram matrix counts as singular.
const PIVOT_TOL: f64 = 1e-10;

/// Coefficients of one patch in the dictionary.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseCode {
    pub coeffs: Vec<f64>,
    /// Indices of the nonzero coefficients, ascending.
    pub active_set: Vec<usize>,
}

impl SparseCode {
    fn from_coeffs(coeffs: Vec<f64>) -> Self {
        let active_set = (0..coeffs.len()).filter(|&j| coeffs[j] != 0.0).collect();
        SparseCode { coeffs, active_set }
    }

    pub fn l1_norm(&self) -> f64 {
        self.coeffs.iter().map(|c| c.abs()).sum()
    }
}

/// Reusable solver holding the Gram matrix of a fixed dictionary.
pub struct LarsSolver<'a> {
    dict: &'a Dictionary,
    gram: Vec<f64>,
}

enum Event {
    Stop,
    Join(usize, f64),
    Drop(usize),
}

impl<'a> LarsSolver<'a> {
    pub fn new(dict: &'a Dictionary) -> Self {
        LarsSolver {
            gram: dict.gram(),
            dict,
        }
    }

    /// Solves the LASSO problem for one signal.
    pub fn solve(&self, p: &[f64], lambda: f64) -> Result<SparseCode> {
        let d = self.dict.d();
        if p.len() != self.dict.n() {
            return Err(Error::Dimension(format!(
                "signal length {} does not match atom length {}",
                p.len(),
                self.dict.n()
            )));
        }
        if p.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("non-finite signal".into()));
        }
        if !(lambda >= 0.0) || !lambda.is_finite() {
            return Err(Error::InvalidArgument(format!("invalid lambda {lambda}")));
        }
        let g = &self.gram;
        let target = 0.5 * lambda;
        let dtp: Vec<f64> = self.dict.atoms().map(|a| dot(a, p)).collect();

        let mut x = vec![0.0; d];
        let mut active: Vec<usize> = Vec::new();
        let mut signs: Vec<f64> = Vec::new();
        let mut in_active = vec![false; d];
        let mut chol: Vec<f64>;
        let mut last_dropped = None;

        let correlations = |x: &[f64], active: &[usize]| -> Vec<f64> {
            (0..d)
                .map(|j| dtp[j] - active.iter().map(|&k| g[j * d + k] * x[k]).sum::<f64>())
                .collect()
        };

        // First atom: largest absolute correlation, lowest index on ties.
        let (first, cmax) = dtp
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (j, c)| {
                if c.abs() > best.1 { (j, c.abs()) } else { best }
            });
        if cmax <= target {
            return Ok(SparseCode::from_coeffs(x));
        }
        active.push(first);
        signs.push(dtp[first].signum());
        in_active[first] = true;
        chol = vec![g[first * d + first].sqrt()];

        let max_steps = 8 * d + 16;
        for _ in 0..max_steps {
            let c = correlations(&x, &active);
            let big_c = active.iter().map(|&j| c[j].abs()).fold(0.0, f64::max);
            if big_c <= target {
                break;
            }
            let m = active.len();
            let w = cholesky_solve(&chol, m, &signs);
            // a_j = (D^T D_A w)_j: rate at which correlation j changes along the step
            let a: Vec<f64> = (0..d)
                .map(|j| active.iter().zip(&w).map(|(&k, wk)| g[j * d + k] * wk).sum())
                .collect();

            let mut gamma = big_c - target;
            let mut event = Event::Stop;
            for j in 0..d {
                if in_active[j] {
                    continue;
                }
                for (num, den, sign) in [(big_c - c[j], 1.0 - a[j], 1.0), (big_c + c[j], 1.0 + a[j], -1.0)] {
                    // A just-dropped atom sits on the boundary with its old sign.
                    if last_dropped == Some((j, sign)) {
                        continue;
                    }
                    if den > 1e-12 {
                        let step = num.max(0.0) / den;
                        if step < gamma {
                            gamma = step;
                            event = Event::Join(j, sign);
                        }
                    }
                }
            }
            for (pos, (&k, &wk)) in active.iter().zip(&w).enumerate() {
                if wk != 0.0 {
                    let step = -x[k] / wk;
                    if step > 0.0 && step < gamma {
                        gamma = step;
                        event = Event::Drop(pos);
                    }
                }
            }

            for (&k, wk) in active.iter().zip(&w) {
                x[k] += gamma * wk;
            }
            last_dropped = None;
            match event {
                Event::Stop => break,
                Event::Join(j, sign) => {
                    let row: Vec<f64> = active.iter().map(|&k| g[j * d + k]).collect();
                    match grow_cholesky(&chol, m, &row, g[j * d + j]) {
                        Some(next) => chol = next,
                        // Degenerate active set: keep the current solution.
                        None => break,
                    }
                    active.push(j);
                    signs.push(sign);
                    in_active[j] = true;
                }
                Event::Drop(pos) => {
                    let k = active.remove(pos);
                    let sign = signs.remove(pos);
                    in_active[k] = false;
                    x[k] = 0.0;
                    last_dropped = Some((k, sign));
                    if active.is_empty() {
                        break;
                    }
                    let sub = submatrix(g, d, &active);
                    match cholesky(&sub, active.len(), PIVOT_TOL) {
                        Some(l) => chol = l,
                        None => break,
                    }
                }
            }
        }
        Ok(SparseCode::from_coeffs(x))
    }
}

fn submatrix(g: &[f64], d: usize, idx: &[usize]) -> Vec<f64> {
    idx.iter()
        .flat_map(|&i| idx.iter().map(move |&j| g[i * d + j]))
        .collect()
}

/// Extends an `m x m` lower Cholesky factor by one row/column.
fn grow_cholesky(l: &[f64], m: usize, row: &[f64], diag: f64) -> Option<Vec<f64>> {
    let mut v = row.to_vec();
    for i in 0..m {
        let mut s = v[i];
        for k in 0..i {
            s -= l[i * m + k] * v[k];
        }
        v[i] = s / l[i * m + i];
    }
    let pivot = diag - dot(&v, &v);
    if !(pivot > PIVOT_TOL * diag.abs().max(f64::MIN_POSITIVE)) {
        return None;
    }
    let n = m + 1;
    let mut out = vec![0.0; n * n];
    for i in 0..m {
        out[i * n..i * n + m].copy_from_slice(&l[i * m..i * m + m]);
    }
    out[m * n..m * n + m].copy_from_slice(&v);
    out[m * n + m] = pivot.sqrt();
    Some(out)
}

/// Sparse code of `p` in `dict` for the given L1 weight.
pub fn lars_lasso(dict: &Dictionary, p: &[f64], lambda: f64) -> Result<SparseCode> {
    LarsSolver::new(dict).solve(p, lambda)
}

/// `||D x - p||^2 + lambda * ||x||_1`.
pub fn lasso_objective(dict: &Dictionary, p: &[f64], x: &[f64], lambda: f64) -> f64 {
    let r = dict.reconstruct(x);
    let sq: f64 = r.iter().zip(p).map(|(a, b)| (a - b) * (a - b)).sum();
    sq + lambda * x.iter().map(|v| v.abs()).sum::<f64>()
}

/// Largest violation of the subgradient optimality conditions, in units of
/// the objective's gradient `2 D^T (D x - p)`.
pub fn kkt_violation(dict: &Dictionary, p: &[f64], x: &[f64], lambda: f64) -> f64 {
    let r = dict.reconstruct(x);
    let resid: Vec<f64> = p.iter().zip(&r).map(|(a, b)| a - b).collect();
    dict.atoms()
        .zip(x)
        .map(|(atom, &xj)| {
            let grad = 2.0 * dot(atom, &resid);
            if xj != 0.0 {
                (grad - lambda * xj.signum()).abs()
            } else {
                (grad.abs() - lambda).max(0.0)
            }
        })
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_atom_exact_representation() {
        let p = vec![1.0, -2.0, 2.0];
        let norm = 3.0;
        let dict = Dictionary::normalized(vec![p.clone()]).unwrap();
        let code = lars_lasso(&dict, &p, 0.0).unwrap();
        assert!((code.coeffs[0] - norm).abs() < 1e-12);
        let r = dict.reconstruct(&code.coeffs);
        assert!(r.iter().zip(&p).all(|(a, b)| (a - b).abs() < 1e-12));
        assert_eq!(code.active_set, vec![0]);
    }

    #[test]
    fn large_lambda_gives_zero() {
        let dict = Dictionary::normalized(vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 1.0]]).unwrap();
        let p = [0.5, 1.0, 0.0];
        let max_corr = dict.atoms().map(|a| dot(a, &p).abs()).fold(0.0, f64::max);
        let code = lars_lasso(&dict, &p, 2.0 * max_corr).unwrap();
        assert!(code.coeffs.iter().all(|&c| c == 0.0));
        assert!(code.active_set.is_empty());
    }

    #[test]
    fn orthonormal_dictionary_soft_thresholds() {
        // With D = I the minimizer is soft-thresholding of p at lambda / 2.
        let dict = Dictionary::from_atoms(
            (0..4).map(|j| (0..4).map(|i| if i == j { 1.0 } else { 0.0 }).collect()).collect(),
        )
        .unwrap();
        let p = [3.0, -0.2, -1.5, 0.7];
        let code = lars_lasso(&dict, &p, 1.0).unwrap();
        let expected = [2.5, 0.0, -1.0, 0.2];
        for (c, e) in code.coeffs.iter().zip(expected) {
            assert!((c - e).abs() < 1e-12, "{c} vs {e}");
        }
        assert_eq!(code.active_set, vec![0, 2, 3]);
    }

    #[test]
    fn rejects_bad_inputs() {
        let dict = Dictionary::normalized(vec![vec![1.0, 1.0]]).unwrap();
        assert!(lars_lasso(&dict, &[1.0], 0.1).is_err());
        assert!(lars_lasso(&dict, &[1.0, f64::NAN], 0.1).is_err());
        assert!(lars_lasso(&dict, &[1.0, 1.0], -1.0).is_err());
    }

    #[test]
    fn duplicate_atoms_terminate() {
        let dict = Dictionary::normalized(vec![vec![1.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let code = lars_lasso(&dict, &[2.0, 1.0], 0.1).unwrap();
        assert!(code.coeffs.iter().all(|c| c.is_finite()));
    }
}
