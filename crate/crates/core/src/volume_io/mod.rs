//! Volumes, lung masks, annotations and their on-disk formats.
//!
//! Voxels are stored x-fastest: `index = x + nx * (y + ny * z)`, matching the
//! raster order of MetaImage raw payloads.

mod annotations;
mod mhd;

pub use annotations::{
    find_invalid_annotations, read_annotations, validate_annotations, write_annotations,
    Annotation, AnnotationSet, Label,
};
pub use mhd::{read_volume, write_volume, write_volume_as, ElementType, MhdHeader};

use crate::error::{Error, Result};

/// Voxel counts along x, y and z.
pub type Dims = [usize; 3];

/// A 3D scalar grid with an optional binary mask (true = inside the region of interest).
#[derive(Debug, Clone, PartialEq)]
pub struct Volume3 {
    dims: Dims,
    data: Vec<f32>,
    mask: Option<Vec<bool>>,
}

impl Volume3 {
    /// Builds a volume, checking that dims are positive, that the data length
    /// matches and that every intensity is finite.
    pub fn new(dims: Dims, data: Vec<f32>) -> Result<Self> {
        let len = checked_len(dims)?;
        if data.len() != len {
            return Err(Error::Dimension(format!(
                "data has {} voxels, dims {:?} require {}",
                data.len(),
                dims,
                len
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!(
                "non-finite intensity {} at voxel {}",
                data[i], i
            )));
        }
        Ok(Volume3 {
            dims,
            data,
            mask: None,
        })
    }

    pub fn filled(dims: Dims, value: f32) -> Result<Self> {
        Volume3::new(dims, vec![value; checked_len(dims)?])
    }

    /// Builds a volume by evaluating `f(x, y, z)` at every voxel.
    pub fn from_fn(dims: Dims, mut f: impl FnMut(usize, usize, usize) -> f32) -> Result<Self> {
        let mut data = Vec::with_capacity(checked_len(dims)?);
        for z in 0..dims[2] {
            for y in 0..dims[1] {
                for x in 0..dims[0] {
                    data.push(f(x, y, z));
                }
            }
        }
        Volume3::new(dims, data)
    }

    /// Replaces the mask. The mask must have one entry per voxel.
    pub fn with_mask(mut self, mask: Vec<bool>) -> Result<Self> {
        if mask.len() != self.data.len() {
            return Err(Error::Dimension(format!(
                "mask has {} entries, volume has {} voxels",
                mask.len(),
                self.data.len()
            )));
        }
        self.mask = Some(mask);
        Ok(self)
    }

    pub fn without_mask(mut self) -> Self {
        self.mask = None;
        self
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn mask(&self) -> Option<&[bool]> {
        self.mask.as_deref()
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.dims[0] * (y + self.dims[1] * z)
    }

    /// Inverse of [`Volume3::index`].
    #[inline]
    pub fn coords(&self, index: usize) -> [usize; 3] {
        let [nx, ny, _] = self.dims;
        [index % nx, (index / nx) % ny, index / (nx * ny)]
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> f32 {
        self.data[self.index(x, y, z)]
    }

    pub fn contains(&self, x: usize, y: usize, z: usize) -> bool {
        x < self.dims[0] && y < self.dims[1] && z < self.dims[2]
    }

    /// True when the voxel is inside the mask, or when there is no mask.
    pub fn is_masked_in(&self, x: usize, y: usize, z: usize) -> bool {
        match &self.mask {
            Some(m) => m[self.index(x, y, z)],
            None => true,
        }
    }

    /// Coordinates of every in-mask voxel in storage order.
    pub fn masked_coords(&self) -> Vec<[usize; 3]> {
        (0..self.len())
            .filter(|&i| self.mask.as_ref().is_none_or(|m| m[i]))
            .map(|i| self.coords(i))
            .collect()
    }

    pub fn min_max(&self) -> (f32, f32) {
        self.data
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }
}

fn checked_len(dims: Dims) -> Result<usize> {
    if dims.contains(&0) {
        return Err(Error::Dimension(format!(
            "volume dims must be positive, got {dims:?}"
        )));
    }
    dims.iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::Dimension(format!("volume dims {dims:?} overflow")))
}

/// Returns `vol` with `mask = (mask_vol != 0)` voxel-wise.
pub fn attach_mask(vol: Volume3, mask_vol: &Volume3) -> Result<Volume3> {
    if vol.dims != mask_vol.dims {
        return Err(Error::Dimension(format!(
            "mask dims {:?} differ from volume dims {:?}",
            mask_vol.dims, vol.dims
        )));
    }
    let mask = mask_vol.data.iter().map(|&v| v != 0.0).collect();
    vol.with_mask(mask)
}
