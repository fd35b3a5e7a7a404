//! Independent reference implementations used only by tests.
//!
//! Each oracle takes the most direct route to its answer and shares no code
//! path with the library routine it checks.
#![allow(dead_code)]

use vessel3d::sparse_coding::Dictionary;
use vessel3d::volume_io::Volume3;

/// Cyclic coordinate descent on `||D x - p||^2 + lambda ||x||_1` for unit-norm atoms.
pub fn cd_lasso(dict: &Dictionary, p: &[f64], lambda: f64) -> Vec<f64> {
    let d = dict.d();
    let atoms: Vec<Vec<f64>> = dict.atoms().map(|a| a.to_vec()).collect();
    let mut x = vec![0.0; d];
    let mut resid = p.to_vec();
    for _ in 0..500_000 {
        let mut max_change: f64 = 0.0;
        for j in 0..d {
            let a = &atoms[j];
            let sq: f64 = a.iter().map(|v| v * v).sum();
            let rho: f64 = a.iter().zip(&resid).map(|(u, r)| u * r).sum::<f64>() + sq * x[j];
            let t = 0.5 * lambda;
            let new = if rho > t {
                (rho - t) / sq
            } else if rho < -t {
                (rho + t) / sq
            } else {
                0.0
            };
            let delta = new - x[j];
            if delta != 0.0 {
                resid.iter_mut().zip(a).for_each(|(r, u)| *r -= delta * u);
                x[j] = new;
            }
            max_change = max_change.max(delta.abs());
        }
        if max_change < 1e-16 {
            break;
        }
    }
    x
}

/// Direct objective evaluation without the library's helpers.
pub fn lasso_objective_direct(dict: &Dictionary, p: &[f64], x: &[f64], lambda: f64) -> f64 {
    let n = p.len();
    let mut sq = 0.0;
    for i in 0..n {
        let mut r = -p[i];
        for (j, xj) in x.iter().enumerate() {
            r += dict.atom(j)[i] * xj;
        }
        sq += r * r;
    }
    sq + lambda * x.iter().map(|v| v.abs()).sum::<f64>()
}

/// Textbook triple loop: cross-correlation with clamp-to-edge borders.
pub fn naive_correlate(vol: &Volume3, filter: &[f64], k: usize) -> Vec<f64> {
    let [nx, ny, nz] = vol.dims();
    let h = (k / 2) as i64;
    let clamp = |v: i64, n: usize| v.max(0).min(n as i64 - 1) as usize;
    let mut out = vec![0.0; nx * ny * nz];
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                let mut acc = 0.0;
                for c in 0..k {
                    for b in 0..k {
                        for a in 0..k {
                            let sx = clamp(x as i64 + a as i64 - h, nx);
                            let sy = clamp(y as i64 + b as i64 - h, ny);
                            let sz = clamp(z as i64 + c as i64 - h, nz);
                            acc += filter[a + k * (b + k * c)] * vol.get(sx, sy, sz) as f64;
                        }
                    }
                }
                out[x + nx * (y + ny * z)] = acc;
            }
        }
    }
    out
}

/// Regularized logistic objective on raw (already standardized) rows:
/// `sum log(1 + e^z) - y z + (l2 / 2) ||w||^2` with `z = w.x + b`.
pub fn logistic_objective(rows: &[Vec<f64>], y: &[f64], w: &[f64], b: f64, l2: f64) -> f64 {
    let mut total = 0.0;
    for (row, &t) in rows.iter().zip(y) {
        let z: f64 = row.iter().zip(w).map(|(a, c)| a * c).sum::<f64>() + b;
        let softplus = if z > 0.0 { z + (-z).exp().ln_1p() } else { z.exp().ln_1p() };
        total += softplus - t * z;
    }
    total + 0.5 * l2 * w.iter().map(|v| v * v).sum::<f64>()
}

/// Plain gradient descent with a fixed step from the Lipschitz bound.
pub fn gd_logistic(rows: &[Vec<f64>], y: &[f64], l2: f64, iters: usize) -> (Vec<f64>, f64) {
    let p = rows[0].len();
    let frob: f64 = rows.iter().map(|r| r.iter().map(|v| v * v).sum::<f64>() + 1.0).sum();
    let step = 1.0 / (0.25 * frob + l2);
    let mut w = vec![0.0; p];
    let mut b = 0.0;
    for _ in 0..iters {
        let mut gw: Vec<f64> = w.iter().map(|v| l2 * v).collect();
        let mut gb = 0.0;
        for (row, &t) in rows.iter().zip(y) {
            let z: f64 = row.iter().zip(&w).map(|(a, c)| a * c).sum::<f64>() + b;
            let r = 1.0 / (1.0 + (-z).exp()) - t;
            gw.iter_mut().zip(row).for_each(|(g, a)| *g += r * a);
            gb += r;
        }
        w.iter_mut().zip(&gw).for_each(|(v, g)| *v -= step * g);
        b -= step * gb;
    }
    (w, b)
}
