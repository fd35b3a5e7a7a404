use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::lars::{lasso_objective, LarsSolver, SparseCode};
use super::sampling::PatchSampler;
use super::{DictLearnConfig, Dictionary};
use crate::error::{Error, Result};
use crate::pyramid::GaussianPyramid;

/// Floor for `A_jj` in the column update and for update norms.
const DEAD_EPS: f64 = 1e-10;
const MAX_INIT_ATTEMPTS: usize = 10_000;

/// Accumulated second moments `A = sum x x^T` and `B = sum p x^T`.
#[derive(Debug, Clone, PartialEq)]
pub struct CodeStats {
    n: usize,
    d: usize,
    // d x d row-major
    a: Vec<f64>,
    // atom-major: column j of B at b[j * n..(j + 1) * n]
    b: Vec<f64>,
}

impl CodeStats {
    pub fn new(n: usize, d: usize) -> Self {
        CodeStats {
            n,
            d,
            a: vec![0.0; d * d],
            b: vec![0.0; n * d],
        }
    }

    /// Builds statistics from explicit matrices (`a` row-major `d x d`,
    /// `b_columns[j]` the `n`-vector `B_j`).
    pub fn from_parts(a: Vec<f64>, b_columns: Vec<Vec<f64>>) -> Result<Self> {
        let d = b_columns.len();
        let n = b_columns.first().map_or(0, Vec::len);
        if a.len() != d * d || b_columns.iter().any(|c| c.len() != n) {
            return Err(Error::Dimension("inconsistent A/B statistics".into()));
        }
        Ok(CodeStats {
            n,
            d,
            a,
            b: b_columns.into_iter().flatten().collect(),
        })
    }

    pub fn accumulate(&mut self, p: &[f64], code: &SparseCode) {
        let x = &code.coeffs;
        for &i in &code.active_set {
            for &j in &code.active_set {
                self.a[i * self.d + j] += x[i] * x[j];
            }
            let col = &mut self.b[i * self.n..(i + 1) * self.n];
            col.iter_mut().zip(p).for_each(|(b, v)| *b += v * x[i]);
        }
    }

    /// Clears row/column `j` of `A` and column `j` of `B`.
    pub fn reset_atom(&mut self, j: usize) {
        for k in 0..self.d {
            self.a[j * self.d + k] = 0.0;
            self.a[k * self.d + j] = 0.0;
        }
        self.b[j * self.n..(j + 1) * self.n].fill(0.0);
    }

    pub fn a(&self, i: usize, j: usize) -> f64 {
        self.a[i * self.d + j]
    }
}

/// Result of one dictionary update.
#[derive(Debug, Clone)]
pub struct DictUpdate {
    pub dictionary: Dictionary,
    /// Columns whose update collapsed to (near) zero; they keep their old
    /// value and should be re-initialized by the caller.
    pub dead: Vec<usize>,
}

/// One block coordinate descent pass:
/// `u_j = D_j + (B_j - D A_j) / max(A_jj, eps)`, then `D_j = u_j / ||u_j||`.
///
/// On the unit sphere this is the exact minimizer of the surrogate
/// `tr(D^T D A) - 2 tr(D^T B)` in column `j` with the others fixed.
pub fn dict_update(dict: &Dictionary, stats: &CodeStats) -> Result<DictUpdate> {
    let (n, d) = (dict.n(), dict.d());
    if stats.n != n || stats.d != d {
        return Err(Error::Dimension(format!(
            "statistics are for n={}, d={} but dictionary is n={n}, d={d}",
            stats.n, stats.d
        )));
    }
    let mut next = dict.clone();
    let mut dead = Vec::new();
    let mut da = vec![0.0; n];
    for j in 0..d {
        da.fill(0.0);
        for k in 0..d {
            let akj = stats.a[k * d + j];
            if akj != 0.0 {
                da.iter_mut().zip(next.atom(k)).for_each(|(s, v)| *s += akj * v);
            }
        }
        let denom = stats.a[j * d + j].max(DEAD_EPS);
        let bj = &stats.b[j * n..(j + 1) * n];
        let u: Vec<f64> = next
            .atom(j)
            .iter()
            .zip(bj)
            .zip(&da)
            .map(|((dj, b), s)| dj + (b - s) / denom)
            .collect();
        let norm = u.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !(norm >= DEAD_EPS) || !norm.is_finite() {
            dead.push(j);
            continue;
        }
        next.atom_mut(j)
            .iter_mut()
            .zip(&u)
            .for_each(|(dst, v)| *dst = v / norm);
    }
    Ok(DictUpdate {
        dictionary: next,
        dead,
    })
}

/// A learned dictionary with its training trace.
#[derive(Debug, Clone)]
pub struct TrainedDictionary {
    pub dictionary: Dictionary,
    /// Mean per-patch objective of every mini-batch, computed with the
    /// dictionary in force when the batch was coded.
    pub trace: Vec<f64>,
    pub patches_seen: usize,
    pub reinitialized: usize,
}

fn fresh_atom(sampler: &mut PatchSampler<'_>) -> Result<Vec<f64>> {
    for _ in 0..MAX_INIT_ATTEMPTS {
        let patch = sampler.draw()?;
        let norm = patch.values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > DEAD_EPS {
            return Ok(patch.values.into_iter().map(|v| v / norm).collect());
        }
    }
    Err(Error::InvalidArgument(format!(
        "{MAX_INIT_ATTEMPTS} sampled patches were constant; cannot initialize atoms"
    )))
}

/// Mini-batch dictionary learning: LARS codes per batch (in parallel), then
/// one [`dict_update`] on the statistics accumulated so far.
///
/// Every epoch replays the same patch stream. Initial and replacement atoms
/// come from a second stream, so results depend only on `cfg`.
pub fn train_dictionary(
    pyramids: &[GaussianPyramid],
    cfg: &DictLearnConfig,
) -> Result<TrainedDictionary> {
    cfg.validate()?;
    let (n, d, k) = (cfg.patch_len(), cfg.atoms, cfg.patch_edge);

    let mut init_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    init_rng.set_stream(1);
    let mut init_sampler = PatchSampler::new(pyramids, k, init_rng)?;
    let atoms = (0..d)
        .map(|_| fresh_atom(&mut init_sampler))
        .collect::<Result<Vec<_>>>()?;
    let mut dict = Dictionary::normalized(atoms)?;
    let mut stats = CodeStats::new(n, d);
    let mut trace = Vec::new();
    let mut reinitialized = 0;
    let mut seen = 0;

    let mut reinit = |dict: &mut Dictionary, stats: &mut CodeStats, j: usize| -> Result<()> {
        let atom = fresh_atom(&mut init_sampler)?;
        dict.atom_mut(j).copy_from_slice(&atom);
        stats.reset_atom(j);
        reinitialized += 1;
        Ok(())
    };

    for epoch in 0..cfg.epochs {
        let mut sampler = PatchSampler::seeded(pyramids, k, cfg.seed)?;
        let mut usage = vec![0.0; d];
        let mut remaining = cfg.num_patches;
        while remaining > 0 {
            let count = remaining.min(cfg.batch_size);
            remaining -= count;
            let batch = sampler.draw_many(count)?;
            let solver = LarsSolver::new(&dict);
            let coded = batch
                .par_iter()
                .map(|p| {
                    let code = solver.solve(&p.values, cfg.lambda)?;
                    let obj = lasso_objective(&dict, &p.values, &code.coeffs, cfg.lambda);
                    Ok((code, obj))
                })
                .collect::<Result<Vec<_>>>()?;
            // Sequential, in batch order: the reduction is thread-count independent.
            let mut total = 0.0;
            for (patch, (code, obj)) in batch.iter().zip(&coded) {
                stats.accumulate(&patch.values, code);
                for &j in &code.active_set {
                    usage[j] += code.coeffs[j] * code.coeffs[j];
                }
                total += obj;
            }
            trace.push(total / count as f64);
            seen += count;

            let update = dict_update(&dict, &stats)?;
            dict = update.dictionary;
            for j in update.dead {
                reinit(&mut dict, &mut stats, j)?;
            }
        }
        let unused: Vec<usize> = (0..d).filter(|&j| usage[j] < DEAD_EPS).collect();
        if !unused.is_empty() {
            log::debug!("epoch {epoch}: re-initializing {} unused atoms", unused.len());
        }
        for j in unused {
            reinit(&mut dict, &mut stats, j)?;
        }
        log::info!(
            "epoch {epoch}: {} batches, last batch objective {:.6}",
            trace.len(),
            trace.last().copied().unwrap_or(f64::NAN)
        );
    }
    Ok(TrainedDictionary {
        dictionary: dict,
        trace,
        patches_seen: seen,
        reinitialized,
    })
}
