use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::DictLearnConfig;
use crate::error::{Error, Result};
use crate::pyramid::PyramidConfig;

const MAGIC: &[u8; 8] = b"V3DDICT\0";
const VERSION: u32 = 1;

/// Unit-norm tolerance for atoms.
pub(crate) const NORM_TOL: f64 = 1e-6;

/// An `n x d` matrix of unit-norm atoms. Each atom is a 3D filter flattened
/// x-fastest when `n` is a perfect cube.
#[derive(Debug, Clone, PartialEq)]
pub struct Dictionary {
    n: usize,
    d: usize,
    // atom-major: atom j occupies data[j * n..(j + 1) * n]
    data: Vec<f64>,
}

impl Dictionary {
    /// Builds a dictionary from atoms that already have unit norm.
    pub fn from_atoms(atoms: Vec<Vec<f64>>) -> Result<Self> {
        let dict = Self::assemble(atoms)?;
        let dev = dict.max_norm_deviation();
        if dev >= NORM_TOL {
            return Err(Error::InvalidArgument(format!(
                "atoms must have unit norm (deviation {dev:e})"
            )));
        }
        Ok(dict)
    }

    /// Builds a dictionary, scaling each atom to unit norm.
    pub fn normalized(atoms: Vec<Vec<f64>>) -> Result<Self> {
        let mut dict = Self::assemble(atoms)?;
        for j in 0..dict.d {
            let atom = dict.atom_mut(j);
            let norm = atom.iter().map(|v| v * v).sum::<f64>().sqrt();
            if !(norm > 0.0) {
                return Err(Error::InvalidArgument(format!("atom {j} has zero norm")));
            }
            atom.iter_mut().for_each(|v| *v /= norm);
        }
        Ok(dict)
    }

    fn assemble(atoms: Vec<Vec<f64>>) -> Result<Self> {
        let d = atoms.len();
        let n = atoms.first().map_or(0, Vec::len);
        if d == 0 || n == 0 {
            return Err(Error::InvalidArgument("dictionary needs at least one non-empty atom".into()));
        }
        if atoms.iter().any(|a| a.len() != n) {
            return Err(Error::Dimension("atoms have differing lengths".into()));
        }
        let data: Vec<f64> = atoms.into_iter().flatten().collect();
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("non-finite dictionary entry".into()));
        }
        Ok(Dictionary { n, d, data })
    }

    /// Atom length.
    pub fn n(&self) -> usize {
        self.n
    }

    /// Atom count.
    pub fn d(&self) -> usize {
        self.d
    }

    /// Edge length `k` when `n = k^3`.
    pub fn patch_edge(&self) -> Option<usize> {
        let k = (self.n as f64).cbrt().round() as usize;
        (k.pow(3) == self.n).then_some(k)
    }

    pub fn atom(&self, j: usize) -> &[f64] {
        &self.data[j * self.n..(j + 1) * self.n]
    }

    pub(crate) fn atom_mut(&mut self, j: usize) -> &mut [f64] {
        &mut self.data[j * self.n..(j + 1) * self.n]
    }

    pub fn atoms(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.n)
    }

    /// `max_j | ||D_j||_2 - 1 |`.
    pub fn max_norm_deviation(&self) -> f64 {
        self.atoms()
            .map(|a| (a.iter().map(|v| v * v).sum::<f64>().sqrt() - 1.0).abs())
            .fold(0.0, f64::max)
    }

    /// Row-major `d x d` Gram matrix `D^T D`.
    pub fn gram(&self) -> Vec<f64> {
        let d = self.d;
        let mut g = vec![0.0; d * d];
        for i in 0..d {
            for j in i..d {
                let v = crate::linalg::dot(self.atom(i), self.atom(j));
                g[i * d + j] = v;
                g[j * d + i] = v;
            }
        }
        g
    }

    /// `D x`.
    pub fn reconstruct(&self, coeffs: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n];
        for (atom, &c) in self.atoms().zip(coeffs) {
            if c != 0.0 {
                out.iter_mut().zip(atom).for_each(|(o, a)| *o += c * a);
            }
        }
        out
    }

    /// Serializes to the binary container: magic, version, `k`, `d` (u32 LE),
    /// then the `n x d` matrix row-major as f32 LE.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let k = self.patch_edge().ok_or_else(|| {
            Error::InvalidArgument(format!("atom length {} is not a cube", self.n))
        })?;
        let mut out = Vec::with_capacity(20 + 4 * self.n * self.d);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(k as u32).to_le_bytes());
        out.extend_from_slice(&(self.d as u32).to_le_bytes());
        for i in 0..self.n {
            for j in 0..self.d {
                out.extend_from_slice(&(self.data[j * self.n + i] as f32).to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let err = |detail: &str| Error::format("dictionary file", detail.to_string());
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(err("bad magic"));
        }
        let word = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as usize;
        if word(8) != VERSION as usize {
            return Err(err("unsupported version"));
        }
        let (k, d) = (word(12), word(16));
        let n = k.pow(3);
        if k == 0 || d == 0 || bytes.len() != 20 + 4 * n * d {
            return Err(err("header does not match payload size"));
        }
        let mut data = vec![0.0; n * d];
        for (idx, c) in bytes[20..].chunks_exact(4).enumerate() {
            let (i, j) = (idx / d, idx % d);
            data[j * n + i] = f32::from_le_bytes(c.try_into().unwrap()) as f64;
        }
        let dict = Dictionary { n, d, data };
        if dict.data.iter().any(|v| !v.is_finite()) || dict.max_norm_deviation() >= NORM_TOL {
            return Err(err("atoms are not finite unit vectors"));
        }
        Ok(dict)
    }
}

/// Human-readable provenance stored next to a dictionary file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DictionarySidecar {
    pub format: String,
    pub patch_edge: usize,
    pub atoms: usize,
    /// SHA-256 of the binary dictionary file.
    pub sha256: String,
    pub config: DictLearnConfig,
    pub pyramid: PyramidConfig,
    pub volumes: Vec<crate::provenance::InputRef>,
    pub patches_seen: usize,
    pub reinitialized_atoms: usize,
    /// Last entries of the per-batch mean objective.
    pub objective_tail: Vec<f64>,
}

/// `D.bin` -> `D.json`.
pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

pub fn write_dictionary(dict: &Dictionary, path: &Path) -> Result<String> {
    let bytes = dict.to_bytes()?;
    fs::write(path, &bytes).map_err(|e| Error::io(path, e))?;
    Ok(crate::provenance::sha256_hex(&bytes))
}

/// Reads a dictionary and returns it with the SHA-256 of the file.
pub fn read_dictionary(path: &Path) -> Result<(Dictionary, String)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok((Dictionary::from_bytes(&bytes)?, crate::provenance::sha256_hex(&bytes)))
}
