//! Dictionary learning over multiscale 3D patches.
//!
//! The objective summed over patches `p` with codes `x` is
//! `||D x - p||^2 + lambda * ||x||_1` subject to unit-norm atoms. Codes come
//! from a LARS homotopy with the LASSO modification ([`lars_lasso`]); the
//! dictionary is refreshed after each mini-batch by one pass of block
//! coordinate descent on accumulated second moments ([`dict_update`]).

mod dictionary;
mod lars;
mod sampling;
mod train;

pub use dictionary::{
    read_dictionary, sidecar_path, write_dictionary, Dictionary, DictionarySidecar,
};
pub use lars::{kkt_violation, lars_lasso, lasso_objective, LarsSolver, SparseCode};
pub use sampling::{sample_patches, Patch, PatchSampler, PatchSource};
pub use train::{dict_update, train_dictionary, CodeStats, DictUpdate, TrainedDictionary};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dictionary learning parameters. Defaults are sized for a desktop run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DictLearnConfig {
    /// Number of atoms `d`.
    pub atoms: usize,
    /// L1 weight.
    pub lambda: f64,
    /// Patch edge length `k`; patches have `k^3` voxels.
    pub patch_edge: usize,
    /// Patches drawn per epoch.
    pub num_patches: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for DictLearnConfig {
    fn default() -> Self {
        DictLearnConfig {
            atoms: 64,
            lambda: 1.0,
            patch_edge: 5,
            num_patches: 100_000,
            batch_size: 256,
            epochs: 1,
            seed: 0,
        }
    }
}

impl DictLearnConfig {
    /// Table-scale settings: 512 atoms of 5x5x5 voxels, 2.5M patches, lambda = 1.
    pub fn full_scale() -> Self {
        DictLearnConfig {
            atoms: 512,
            num_patches: 2_500_000,
            ..Default::default()
        }
    }

    pub fn patch_len(&self) -> usize {
        self.patch_edge.pow(3)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("atoms", self.atoms),
            ("patch_edge", self.patch_edge),
            ("num_patches", self.num_patches),
            ("batch_size", self.batch_size),
            ("epochs", self.epochs),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::InvalidArgument(format!("{name} must be positive")));
            }
        }
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "lambda must be finite and non-negative, got {}",
                self.lambda
            )));
        }
        Ok(())
    }
}
