//! MetaImage (`.mhd` header + little-endian `.raw` payload) reading and writing.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use super::{checked_len, Dims, Volume3};
use crate::error::{Error, Result};

/// Supported raw element types.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ElementType {
    /// `MET_SHORT`, little-endian i16.
    Short,
    /// `MET_UCHAR`, u8.
    UChar,
    /// `MET_FLOAT`, little-endian f32.
    Float,
}

impl ElementType {
    pub fn size(self) -> usize {
        match self {
            ElementType::Short => 2,
            ElementType::UChar => 1,
            ElementType::Float => 4,
        }
    }

    fn parse(s: &str) -> Result<Self> {
        match s {
            "MET_SHORT" => Ok(ElementType::Short),
            "MET_UCHAR" => Ok(ElementType::UChar),
            "MET_FLOAT" => Ok(ElementType::Float),
            other => Err(Error::format(
                "MetaImage header",
                format!("unsupported ElementType {other}"),
            )),
        }
    }
}

impl fmt::Display for ElementType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ElementType::Short => "MET_SHORT",
            ElementType::UChar => "MET_UCHAR",
            ElementType::Float => "MET_FLOAT",
        })
    }
}

/// The header keys this reader honors.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MhdHeader {
    pub dims: Dims,
    pub element_type: ElementType,
    /// Payload file name, relative to the header's directory.
    pub data_file: String,
}

// Keys our own writer emits; accepted without a warning.
const QUIET_KEYS: &[&str] = &["ObjectType", "BinaryData"];

impl MhdHeader {
    pub fn parse(text: &str) -> Result<Self> {
        let err = |detail: String| Error::format("MetaImage header", detail);
        let mut ndims = None;
        let mut dims = None;
        let mut element_type = None;
        let mut data_file = None;
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err(format!("line without '=': {line}")))?;
            let (key, value) = (key.trim(), value.trim());
            match key {
                "NDims" => {
                    ndims = Some(
                        value
                            .parse::<usize>()
                            .map_err(|_| err(format!("bad NDims {value}")))?,
                    )
                }
                "DimSize" => {
                    let parts = value
                        .split_whitespace()
                        .map(|p| p.parse::<usize>())
                        .collect::<std::result::Result<Vec<_>, _>>()
                        .map_err(|_| err(format!("bad DimSize {value}")))?;
                    if parts.len() != 3 {
                        return Err(err(format!("DimSize needs 3 values, got {value}")));
                    }
                    dims = Some([parts[0], parts[1], parts[2]]);
                }
                "ElementType" => element_type = Some(ElementType::parse(value)?),
                "ElementDataFile" => data_file = Some(value.to_string()),
                "BinaryDataByteOrderMSB" | "ElementByteOrderMSB" => {
                    if !value.eq_ignore_ascii_case("false") {
                        return Err(err("big-endian payloads are not supported".into()));
                    }
                }
                "CompressedData" => {
                    if !value.eq_ignore_ascii_case("false") {
                        return Err(err("compressed payloads are not supported".into()));
                    }
                }
                k if QUIET_KEYS.contains(&k) => {}
                other => log::warn!("ignoring MetaImage key {other}"),
            }
        }
        match ndims {
            Some(3) => {}
            Some(n) => return Err(err(format!("NDims must be 3, got {n}"))),
            None => return Err(err("missing NDims".into())),
        }
        let dims = dims.ok_or_else(|| err("missing DimSize".into()))?;
        checked_len(dims)?;
        let element_type = element_type.ok_or_else(|| err("missing ElementType".into()))?;
        let data_file = data_file.ok_or_else(|| err("missing ElementDataFile".into()))?;
        if data_file.eq_ignore_ascii_case("LOCAL") {
            return Err(err("inline (LOCAL) payloads are not supported".into()));
        }
        Ok(MhdHeader {
            dims,
            element_type,
            data_file,
        })
    }

    pub fn voxel_count(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn render(&self) -> String {
        format!(
            "ObjectType = Image\nNDims = 3\nBinaryData = True\nBinaryDataByteOrderMSB = False\n\
             DimSize = {} {} {}\nElementType = {}\nElementDataFile = {}\n",
            self.dims[0], self.dims[1], self.dims[2], self.element_type, self.data_file
        )
    }
}

/// Reads a MetaImage volume. The returned volume has no mask.
pub fn read_volume(meta_path: &Path) -> Result<Volume3> {
    let text = fs::read_to_string(meta_path).map_err(|e| Error::io(meta_path, e))?;
    let header = MhdHeader::parse(&text)?;
    let raw_path = raw_path_for(meta_path, &header.data_file);
    let bytes = fs::read(&raw_path).map_err(|e| Error::io(&raw_path, e))?;
    let size = header.element_type.size();
    let expected = header.voxel_count();
    if bytes.len() != expected * size {
        return Err(Error::Dimension(format!(
            "raw payload {} holds {} bytes ({} elements of {}), header declares {} elements",
            raw_path.display(),
            bytes.len(),
            bytes.len() as f64 / size as f64,
            header.element_type,
            expected
        )));
    }
    let data: Vec<f32> = match header.element_type {
        ElementType::UChar => bytes.iter().map(|&b| b as f32).collect(),
        ElementType::Short => bytes
            .chunks_exact(2)
            .map(|c| i16::from_le_bytes([c[0], c[1]]) as f32)
            .collect(),
        ElementType::Float => bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect(),
    };
    Volume3::new(header.dims, data)
}

/// Writes `vol` as `MET_FLOAT`.
pub fn write_volume(vol: &Volume3, meta_path: &Path) -> Result<()> {
    write_volume_as(vol, meta_path, ElementType::Float)
}

/// Writes `vol` with the given element type. Integer types require every
/// intensity to be an integer within range, so that reading back is exact.
pub fn write_volume_as(vol: &Volume3, meta_path: &Path, element_type: ElementType) -> Result<()> {
    let raw_name = match meta_path.file_stem() {
        Some(stem) => format!("{}.raw", stem.to_string_lossy()),
        None => {
            return Err(Error::InvalidArgument(format!(
                "no file name in {}",
                meta_path.display()
            )))
        }
    };
    let header = MhdHeader {
        dims: vol.dims(),
        element_type,
        data_file: raw_name,
    };
    let mut bytes = Vec::with_capacity(vol.len() * element_type.size());
    for &v in vol.data() {
        match element_type {
            ElementType::Float => bytes.extend_from_slice(&v.to_le_bytes()),
            ElementType::Short => {
                bytes.extend_from_slice(&(exact_int(v, i16::MIN as f32, i16::MAX as f32)? as i16).to_le_bytes())
            }
            ElementType::UChar => bytes.push(exact_int(v, 0.0, u8::MAX as f32)? as u8),
        }
    }
    let raw_path = raw_path_for(meta_path, &header.data_file);
    fs::write(&raw_path, &bytes).map_err(|e| Error::io(&raw_path, e))?;
    fs::write(meta_path, header.render()).map_err(|e| Error::io(meta_path, e))?;
    Ok(())
}

fn exact_int(v: f32, lo: f32, hi: f32) -> Result<f32> {
    if v.fract() != 0.0 || v < lo || v > hi {
        return Err(Error::InvalidArgument(format!(
            "intensity {v} is not representable in the requested integer element type"
        )));
    }
    Ok(v)
}

fn raw_path_for(meta_path: &Path, data_file: &str) -> PathBuf {
    match meta_path.parent() {
        Some(dir) => dir.join(data_file),
        None => PathBuf::from(data_file),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_pair(dir: &Path, header: &str, raw: &[u8]) -> PathBuf {
        let meta = dir.join("v.mhd");
        fs::write(&meta, header).unwrap();
        fs::write(dir.join("v.raw"), raw).unwrap();
        meta
    }

    #[test]
    fn header_of_full_ct_volume() {
        let h = MhdHeader::parse(
            "NDims = 3\nDimSize = 512 512 512\nElementType = MET_SHORT\nElementDataFile = v.raw\n",
        )
        .unwrap();
        assert_eq!(h.voxel_count(), 134_217_728);
        assert_eq!(MhdHeader::parse(&h.render()).unwrap(), h);
    }

    #[test]
    fn minimal_volume() {
        let dir = tempfile::tempdir().unwrap();
        let meta = write_pair(
            dir.path(),
            "NDims = 3\nDimSize = 1 1 1\nElementType = MET_SHORT\nElementDataFile = v.raw\n",
            &[0, 0],
        );
        let v = read_volume(&meta).unwrap();
        assert_eq!(v.dims(), [1, 1, 1]);
        assert_eq!(v.data(), &[0.0]);
        assert!(v.mask().is_none());
    }

    #[test]
    fn size_mismatch_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let meta = write_pair(
            dir.path(),
            "NDims = 3\nDimSize = 4 3 2\nElementType = MET_UCHAR\nElementDataFile = v.raw\n",
            &[0u8; 23],
        );
        assert!(matches!(read_volume(&meta), Err(Error::Dimension(_))));
    }

    #[test]
    fn header_errors() {
        let base = "DimSize = 2 2 2\nElementType = MET_FLOAT\nElementDataFile = v.raw\n";
        assert!(MhdHeader::parse(base).is_err());
        assert!(MhdHeader::parse(&format!("NDims = 2\n{base}")).is_err());
        assert!(MhdHeader::parse(
            "NDims = 3\nDimSize = 2 2 2\nElementType = MET_DOUBLE\nElementDataFile = v.raw\n"
        )
        .is_err());
        assert!(MhdHeader::parse(&format!("NDims = 3\n{base}BinaryDataByteOrderMSB = True\n")).is_err());
        assert!(MhdHeader::parse(&format!("NDims = 3\n{base}ElementSpacing = 1 1 1\n")).is_ok());
    }

    #[test]
    fn missing_raw_and_non_finite() {
        let dir = tempfile::tempdir().unwrap();
        let meta = dir.path().join("v.mhd");
        fs::write(
            &meta,
            "NDims = 3\nDimSize = 1 1 1\nElementType = MET_FLOAT\nElementDataFile = v.raw\n",
        )
        .unwrap();
        assert!(matches!(read_volume(&meta), Err(Error::Io { .. })));
        fs::write(dir.path().join("v.raw"), f32::NAN.to_le_bytes()).unwrap();
        assert!(matches!(read_volume(&meta), Err(Error::Numerical(_))));
    }

    #[test]
    fn roundtrip_small_volume() {
        let dir = tempfile::tempdir().unwrap();
        let v = Volume3::from_fn([3, 3, 3], |x, y, z| (x as f32 - 1.3) * (y + 2 * z) as f32).unwrap();
        let meta = dir.path().join("out.mhd");
        write_volume(&v, &meta).unwrap();
        assert_eq!(read_volume(&meta).unwrap(), v);

        let seg = Volume3::from_fn([3, 3, 3], |x, _, _| (x % 2) as f32).unwrap();
        write_volume_as(&seg, &meta, ElementType::UChar).unwrap();
        assert_eq!(read_volume(&meta).unwrap(), seg);
        write_volume_as(&seg, &meta, ElementType::Short).unwrap();
        assert_eq!(read_volume(&meta).unwrap(), seg);
        assert!(write_volume_as(&v, &meta, ElementType::UChar).is_err());
    }

    #[test]
    fn unwritable_path() {
        let v = Volume3::filled([1, 1, 1], 0.0).unwrap();
        let bad = Path::new("/nonexistent-dir/sub/v.mhd");
        assert!(matches!(write_volume(&v, bad), Err(Error::Io { .. })));
    }
}
