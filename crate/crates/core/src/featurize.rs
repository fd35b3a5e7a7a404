//! Filter responses of dictionary atoms at every pyramid scale, assembled
//! into per-voxel feature rows of length `scales * atoms`.
//!
//! Responses are cross-correlations (the filter is not flipped) with
//! clamp-to-edge borders. A query voxel `(x, y, z)` reads scale `l` at
//! `floor((x, y, z) / factor^l)`, so coarse feature volumes are never
//! upsampled and full-resolution feature volumes are never materialized:
//! each row gathers one clamped `k^3` neighborhood per scale and dots it with
//! every atom. Rows are computed in parallel; each row has a fixed reduction
//! order so results do not depend on the thread count.

use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::provenance::{sha256_hex, InputRef};
use crate::pyramid::{build_pyramid, GaussianPyramid, PyramidConfig};
use crate::sparse_coding::Dictionary;
use crate::volume_io::Volume3;

const MAGIC: &[u8; 8] = b"V3DFEAT\0";
const VERSION: u32 = 1;
/// Default cap on `scales * atoms`.
pub const DEFAULT_MAX_ROW_LEN: usize = 1 << 16;

/// A voxel of a named volume.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct VoxelRef {
    pub volume_id: String,
    pub x: usize,
    pub y: usize,
    pub z: usize,
}

/// Feature rows, scale-major: `row[l * atoms + j]` is atom `j` at scale `l`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    row_len: usize,
    values: Vec<f32>,
    voxels: Vec<VoxelRef>,
}

impl FeatureMatrix {
    pub fn new(row_len: usize, values: Vec<f32>, voxels: Vec<VoxelRef>) -> Result<Self> {
        if row_len == 0 || values.len() != row_len * voxels.len() {
            return Err(Error::Dimension(format!(
                "{} values do not form {} rows of length {row_len}",
                values.len(),
                voxels.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("non-finite feature value".into()));
        }
        Ok(FeatureMatrix {
            row_len,
            values,
            voxels,
        })
    }

    /// Builds a matrix from rows with synthetic voxel refs (`volume_id` "rows", x = row index).
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let row_len = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != row_len) {
            return Err(Error::Dimension("rows have differing lengths".into()));
        }
        let values = rows.iter().flatten().map(|&v| v as f32).collect();
        let voxels = (0..rows.len())
            .map(|i| VoxelRef {
                volume_id: "rows".into(),
                x: i,
                y: 0,
                z: 0,
            })
            .collect();
        FeatureMatrix::new(row_len, values, voxels)
    }

    pub fn row_len(&self) -> usize {
        self.row_len
    }

    pub fn num_rows(&self) -> usize {
        self.voxels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.voxels.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.values[i * self.row_len..(i + 1) * self.row_len]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f32]> {
        self.values.chunks_exact(self.row_len)
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn voxels(&self) -> &[VoxelRef] {
        &self.voxels
    }

    /// Rows at the given indices, in that order.
    pub fn select(&self, indices: &[usize]) -> FeatureMatrix {
        let mut values = Vec::with_capacity(indices.len() * self.row_len);
        let mut voxels = Vec::with_capacity(indices.len());
        for &i in indices {
            values.extend_from_slice(self.row(i));
            voxels.push(self.voxels[i].clone());
        }
        FeatureMatrix {
            row_len: self.row_len,
            values,
            voxels,
        }
    }

    /// Stacks matrices with equal row lengths.
    pub fn concat(parts: Vec<FeatureMatrix>) -> Result<FeatureMatrix> {
        let row_len = match parts.first() {
            Some(p) => p.row_len,
            None => return Err(Error::InvalidArgument("nothing to concatenate".into())),
        };
        let mut values = Vec::new();
        let mut voxels = Vec::new();
        for p in parts {
            if p.row_len != row_len {
                return Err(Error::Dimension(format!(
                    "row length {} differs from {row_len}",
                    p.row_len
                )));
            }
            values.extend(p.values);
            voxels.extend(p.voxels);
        }
        Ok(FeatureMatrix {
            row_len,
            values,
            voxels,
        })
    }

    /// Binary container: magic, version (u32), row length (u32), row count
    /// (u64), then f32 rows, all little-endian.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(24 + 4 * self.values.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.row_len as u32).to_le_bytes());
        out.extend_from_slice(&(self.num_rows() as u64).to_le_bytes());
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    /// Parses the binary container; voxel refs come from the sidecar.
    pub fn from_bytes(bytes: &[u8], voxels: Vec<VoxelRef>) -> Result<Self> {
        let err = |detail: &str| Error::format("feature file", detail.to_string());
        if bytes.len() < 24 || &bytes[..8] != MAGIC {
            return Err(err("bad magic"));
        }
        if u32::from_le_bytes(bytes[8..12].try_into().unwrap()) != VERSION {
            return Err(err("unsupported version"));
        }
        let row_len = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
        let rows = u64::from_le_bytes(bytes[16..24].try_into().unwrap()) as usize;
        if bytes.len() != 24 + 4 * row_len * rows {
            return Err(err("header does not match payload size"));
        }
        if rows != voxels.len() {
            return Err(err("row count does not match the sidecar voxel list"));
        }
        let values = bytes[24..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        FeatureMatrix::new(row_len, values, voxels)
    }
}

/// JSON sidecar of a feature file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSidecar {
    pub format: String,
    pub row_len: usize,
    pub rows: usize,
    pub scales: usize,
    pub atoms: usize,
    pub pyramid: PyramidConfig,
    /// SHA-256 of the dictionary file the features were computed with.
    pub dictionary_sha256: String,
    /// Volume files the rows were computed from.
    pub inputs: Vec<InputRef>,
    /// SHA-256 of the binary feature file.
    pub sha256: String,
    pub volume_ids: Vec<String>,
    /// Per row: index into `volume_ids`, then x, y, z.
    pub voxels: Vec<[usize; 4]>,
}

impl FeatureSidecar {
    fn voxel_refs(&self) -> Result<Vec<VoxelRef>> {
        self.voxels
            .iter()
            .map(|&[v, x, y, z]| {
                let volume_id = self
                    .volume_ids
                    .get(v)
                    .ok_or_else(|| Error::format("feature sidecar", format!("volume index {v}")))?
                    .clone();
                Ok(VoxelRef { volume_id, x, y, z })
            })
            .collect()
    }
}

/// Writes `F.bin` and `F.json`; returns the sidecar.
pub fn write_features(
    fm: &FeatureMatrix,
    path: &Path,
    pyramid: &PyramidConfig,
    atoms: usize,
    dictionary_sha256: &str,
    inputs: &[InputRef],
) -> Result<FeatureSidecar> {
    let bytes = fm.to_bytes();
    fs::write(path, &bytes).map_err(|e| Error::io(path, e))?;
    let mut volume_ids: Vec<String> = Vec::new();
    let voxels = fm
        .voxels
        .iter()
        .map(|v| {
            let idx = match volume_ids.iter().position(|id| *id == v.volume_id) {
                Some(i) => i,
                None => {
                    volume_ids.push(v.volume_id.clone());
                    volume_ids.len() - 1
                }
            };
            [idx, v.x, v.y, v.z]
        })
        .collect();
    let sidecar = FeatureSidecar {
        format: "vessel3d-features".into(),
        row_len: fm.row_len,
        rows: fm.num_rows(),
        scales: pyramid.scales,
        atoms,
        pyramid: *pyramid,
        dictionary_sha256: dictionary_sha256.to_string(),
        inputs: inputs.to_vec(),
        sha256: sha256_hex(&bytes),
        volume_ids,
        voxels,
    };
    let side_path = path.with_extension("json");
    let text = serde_json::to_string_pretty(&sidecar)?;
    fs::write(&side_path, text).map_err(|e| Error::io(&side_path, e))?;
    Ok(sidecar)
}

/// Reads `F.bin` with its `F.json` sidecar, checking the recorded hash.
pub fn read_features(path: &Path) -> Result<(FeatureMatrix, FeatureSidecar)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let side_path = path.with_extension("json");
    let text = fs::read_to_string(&side_path).map_err(|e| Error::io(&side_path, e))?;
    let sidecar: FeatureSidecar = serde_json::from_str(&text)?;
    crate::provenance::check_hash(
        &format!("features {}", path.display()),
        &sidecar.sha256,
        &sha256_hex(&bytes),
    )?;
    let fm = FeatureMatrix::from_bytes(&bytes, sidecar.voxel_refs()?)?;
    Ok((fm, sidecar))
}

fn check_edge(edge: usize, filter_len: usize) -> Result<()> {
    if edge % 2 == 0 {
        return Err(Error::InvalidArgument(format!("filter edge {edge} must be odd")));
    }
    if edge.pow(3) != filter_len {
        return Err(Error::Dimension(format!(
            "filter has {filter_len} taps, edge {edge} needs {}",
            edge.pow(3)
        )));
    }
    Ok(())
}

/// Copies the clamped `edge^3` neighborhood centered on `(x, y, z)`, x-fastest.
fn gather(vol: &Volume3, [x, y, z]: [usize; 3], edge: usize, out: &mut [f64]) {
    let [nx, ny, nz] = vol.dims();
    let h = (edge / 2) as isize;
    let clamp = |v: usize, o: usize, n: usize| (v as isize + o as isize - h).clamp(0, n as isize - 1) as usize;
    let mut i = 0;
    for c in 0..edge {
        let sz = clamp(z, c, nz);
        for b in 0..edge {
            let sy = clamp(y, b, ny);
            for a in 0..edge {
                out[i] = vol.get(clamp(x, a, nx), sy, sz) as f64;
                i += 1;
            }
        }
    }
}

#[inline]
fn respond(neigh: &[f64], filter: &[f64]) -> f32 {
    let mut acc = 0.0f64;
    for (v, w) in neigh.iter().zip(filter) {
        acc += v * w;
    }
    acc as f32
}

/// Dense 3D cross-correlation of `vol` with an `edge^3` filter (x-fastest),
/// clamp-to-edge borders, same dims as the input.
pub fn convolve3(vol: &Volume3, filter: &[f64], edge: usize) -> Result<Volume3> {
    check_edge(edge, filter.len())?;
    let [nx, ny, _] = vol.dims();
    let mut out = vec![0.0f32; vol.len()];
    out.par_chunks_mut(nx * ny).enumerate().for_each(|(z, slab)| {
        let mut neigh = vec![0.0; filter.len()];
        for y in 0..ny {
            for x in 0..nx {
                gather(vol, [x, y, z], edge, &mut neigh);
                slab[x + nx * y] = respond(&neigh, filter);
            }
        }
    });
    let out = Volume3::new(vol.dims(), out)?;
    match vol.mask() {
        Some(m) => out.with_mask(m.to_vec()),
        None => Ok(out),
    }
}

/// Feature rows for the query voxels (level-0 coordinates) of one volume.
pub fn featurize_voxels(
    vol: &Volume3,
    volume_id: &str,
    dict: &Dictionary,
    pyramid: &PyramidConfig,
    query: &[[usize; 3]],
    max_row_len: usize,
) -> Result<FeatureMatrix> {
    let pyr = build_pyramid(vol, pyramid)?;
    featurize_pyramid(&pyr, volume_id, dict, query, max_row_len)
}

/// As [`featurize_voxels`] on an already built pyramid, with one scale per level.
pub fn featurize_pyramid(
    pyr: &GaussianPyramid,
    volume_id: &str,
    dict: &Dictionary,
    query: &[[usize; 3]],
    max_row_len: usize,
) -> Result<FeatureMatrix> {
    let vol = pyr.level(0);
    let edge = dict.patch_edge().ok_or_else(|| {
        Error::InvalidArgument(format!("atom length {} is not a cube", dict.n()))
    })?;
    check_edge(edge, dict.n())?;
    let (scales, atoms) = (pyr.num_levels(), dict.d());
    let row_len = scales
        .checked_mul(atoms)
        .filter(|&r| r > 0 && r <= max_row_len)
        .ok_or_else(|| {
            Error::InvalidArgument(format!(
                "{scales} scales x {atoms} atoms exceeds the row limit {max_row_len}"
            ))
        })?;
    for &[x, y, z] in query {
        if !vol.contains(x, y, z) {
            return Err(Error::InvalidArgument(format!(
                "query ({x}, {y}, {z}) outside dims {:?} of {volume_id}",
                vol.dims()
            )));
        }
        if !vol.is_masked_in(x, y, z) {
            return Err(Error::InvalidArgument(format!(
                "query ({x}, {y}, {z}) outside the mask of {volume_id}"
            )));
        }
    }
    let mut values = vec![0.0f32; query.len() * row_len];
    values
        .par_chunks_mut(row_len)
        .zip(query.par_iter())
        .for_each(|(row, &q)| {
            let mut neigh = vec![0.0; dict.n()];
            for level in 0..scales {
                let coords = pyr.map_coords(q, level);
                gather(pyr.level(level), coords, edge, &mut neigh);
                for (j, atom) in dict.atoms().enumerate() {
                    row[level * atoms + j] = respond(&neigh, atom);
                }
            }
        });
    let voxels = query
        .iter()
        .map(|&[x, y, z]| VoxelRef {
            volume_id: volume_id.to_string(),
            x,
            y,
            z,
        })
        .collect();
    FeatureMatrix::new(row_len, values, voxels)
}

/// Feature rows for every in-mask voxel, in storage order.
pub fn featurize_full(
    vol: &Volume3,
    volume_id: &str,
    dict: &Dictionary,
    pyramid: &PyramidConfig,
    max_row_len: usize,
) -> Result<FeatureMatrix> {
    let query = vol.masked_coords();
    if query.is_empty() {
        let row_len = pyramid.scales * dict.d();
        return FeatureMatrix::new(row_len.max(1), Vec::new(), Vec::new());
    }
    featurize_voxels(vol, volume_id, dict, pyramid, &query, max_row_len)
}
