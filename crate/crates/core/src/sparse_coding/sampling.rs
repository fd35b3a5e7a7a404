use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::pyramid::GaussianPyramid;
use crate::volume_io::Volume3;

use super::DictLearnConfig;

// Consecutive masked-out draws tolerated before giving up.
const MAX_REJECTIONS: usize = 1_000_000;

/// Where a patch was cut from. `x, y, z` is the patch origin (lowest corner)
/// in level coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PatchSource {
    pub volume: usize,
    pub level: usize,
    pub x: usize,
    pub y: usize,
    pub z: usize,
}

/// A mean-subtracted `k^3` patch, flattened x-fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    pub values: Vec<f64>,
    pub source: PatchSource,
}

struct LevelSlot {
    volume: usize,
    level: usize,
    // number of valid origins along each axis
    extent: [usize; 3],
    start: u64,
}

/// Draws patches uniformly over all `(pyramid, level, origin)` triples,
/// rejecting origins whose center voxel is outside the mask.
pub struct PatchSampler<'a> {
    pyramids: &'a [GaussianPyramid],
    edge: usize,
    slots: Vec<LevelSlot>,
    total: u64,
    rng: ChaCha8Rng,
}

impl<'a> PatchSampler<'a> {
    pub fn new(pyramids: &'a [GaussianPyramid], edge: usize, rng: ChaCha8Rng) -> Result<Self> {
        if edge == 0 {
            return Err(Error::InvalidArgument("patch edge must be positive".into()));
        }
        let mut slots = Vec::new();
        let mut total = 0u64;
        for (v, pyr) in pyramids.iter().enumerate() {
            for (l, level) in pyr.levels().iter().enumerate() {
                let dims = level.dims();
                if dims.iter().any(|&n| n < edge) {
                    return Err(Error::Dimension(format!(
                        "level {l} of volume {v} has dims {dims:?}, smaller than patch edge {edge}"
                    )));
                }
                let extent = dims.map(|n| n - edge + 1);
                if !has_masked_center(level, extent, edge) {
                    continue;
                }
                slots.push(LevelSlot {
                    volume: v,
                    level: l,
                    extent,
                    start: total,
                });
                total += extent.iter().map(|&e| e as u64).product::<u64>();
            }
        }
        if total == 0 {
            return Err(Error::InvalidArgument(
                "no valid patch origins: volumes are empty, masked out or missing".into(),
            ));
        }
        Ok(PatchSampler {
            pyramids,
            edge,
            slots,
            total,
            rng,
        })
    }

    pub fn seeded(pyramids: &'a [GaussianPyramid], edge: usize, seed: u64) -> Result<Self> {
        Self::new(pyramids, edge, ChaCha8Rng::seed_from_u64(seed))
    }

    /// Draws one mean-subtracted patch.
    pub fn draw(&mut self) -> Result<Patch> {
        let h = self.edge / 2;
        for _ in 0..MAX_REJECTIONS {
            let r = self.rng.random_range(0..self.total);
            let slot_idx = self.slots.partition_point(|s| s.start <= r) - 1;
            let slot = &self.slots[slot_idx];
            let mut off = (r - slot.start) as usize;
            let x = off % slot.extent[0];
            off /= slot.extent[0];
            let y = off % slot.extent[1];
            let z = off / slot.extent[1];
            let vol = self.pyramids[slot.volume].level(slot.level);
            if !vol.is_masked_in(x + h, y + h, z + h) {
                continue;
            }
            return Ok(Patch {
                values: extract_patch(vol, [x, y, z], self.edge),
                source: PatchSource {
                    volume: slot.volume,
                    level: slot.level,
                    x,
                    y,
                    z,
                },
            });
        }
        Err(Error::InvalidArgument(format!(
            "{MAX_REJECTIONS} consecutive patch centers fell outside the mask"
        )))
    }

    pub fn draw_many(&mut self, count: usize) -> Result<Vec<Patch>> {
        (0..count).map(|_| self.draw()).collect()
    }
}

fn has_masked_center(vol: &Volume3, extent: [usize; 3], edge: usize) -> bool {
    let h = edge / 2;
    match vol.mask() {
        None => true,
        Some(_) => (0..extent[2]).any(|z| {
            (0..extent[1]).any(|y| (0..extent[0]).any(|x| vol.is_masked_in(x + h, y + h, z + h)))
        }),
    }
}

/// Copies the `edge^3` block at `origin` and subtracts its mean.
pub(crate) fn extract_patch(vol: &Volume3, [ox, oy, oz]: [usize; 3], edge: usize) -> Vec<f64> {
    let mut values = Vec::with_capacity(edge.pow(3));
    for z in oz..oz + edge {
        for y in oy..oy + edge {
            for x in ox..ox + edge {
                values.push(vol.get(x, y, z) as f64);
            }
        }
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    values.iter_mut().for_each(|v| *v -= mean);
    values
}

/// Draws `cfg.num_patches` patches with the stream seeded by `cfg.seed`.
pub fn sample_patches(pyramids: &[GaussianPyramid], cfg: &DictLearnConfig) -> Result<Vec<Patch>> {
    cfg.validate()?;
    PatchSampler::seeded(pyramids, cfg.patch_edge, cfg.seed)?.draw_many(cfg.num_patches)
}
