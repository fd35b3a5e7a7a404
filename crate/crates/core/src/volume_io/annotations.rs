//! Voxel annotations stored as CSV `volume_id,x,y,z,label` with 0-based indices.

use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::Volume3;
use crate::error::{Error, Result};

const HEADER: [&str; 5] = ["volume_id", "x", "y", "z", "label"];

/// Voxel class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Label {
    NonVessel = 0,
    Vessel = 1,
}

impl Label {
    pub fn from_u8(v: u8) -> Option<Self> {
        match v {
            0 => Some(Label::NonVessel),
            1 => Some(Label::Vessel),
            _ => None,
        }
    }

    pub fn as_u8(self) -> u8 {
        self as u8
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Annotation {
    pub volume_id: String,
    pub x: usize,
    pub y: usize,
    pub z: usize,
    pub label: Label,
}

impl Annotation {
    pub fn coords(&self) -> [usize; 3] {
        [self.x, self.y, self.z]
    }
}

/// A list of annotated voxels without duplicate `(volume_id, x, y, z)` keys.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AnnotationSet {
    entries: Vec<Annotation>,
}

impl AnnotationSet {
    pub fn new(entries: Vec<Annotation>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(entries.len());
        for a in &entries {
            if !seen.insert((a.volume_id.as_str(), a.x, a.y, a.z)) {
                return Err(Error::Annotation(format!(
                    "duplicate voxel ({}, {}, {}, {})",
                    a.volume_id, a.x, a.y, a.z
                )));
            }
        }
        Ok(AnnotationSet { entries })
    }

    pub fn entries(&self) -> &[Annotation] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Distinct volume ids in order of first appearance.
    pub fn volume_ids(&self) -> Vec<&str> {
        let mut seen = HashSet::new();
        self.entries
            .iter()
            .map(|a| a.volume_id.as_str())
            .filter(|id| seen.insert(*id))
            .collect()
    }

    pub fn for_volume<'a>(&'a self, volume_id: &'a str) -> impl Iterator<Item = &'a Annotation> {
        self.entries.iter().filter(move |a| a.volume_id == volume_id)
    }

    pub fn count_label(&self, label: Label) -> usize {
        self.entries.iter().filter(|a| a.label == label).count()
    }
}

#[derive(Serialize, Deserialize)]
struct Row {
    volume_id: String,
    x: i64,
    y: i64,
    z: i64,
    label: i64,
}

/// Reads and validates an annotation CSV. Coordinates are only checked for
/// sign here; bounds and masks are checked by [`validate_annotations`].
pub fn read_annotations(csv_path: &Path) -> Result<AnnotationSet> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(csv_path)
        .map_err(|e| csv_error(csv_path, e))?;
    let headers = reader.headers().map_err(|e| csv_error(csv_path, e))?;
    if headers.iter().ne(HEADER) {
        return Err(Error::format(
            "annotation CSV",
            format!("expected header {}, got {:?}", HEADER.join(","), headers),
        ));
    }
    let mut entries = Vec::new();
    for (i, row) in reader.deserialize::<Row>().enumerate() {
        let line = i + 2;
        let row = row.map_err(|e| Error::format("annotation CSV", format!("line {line}: {e}")))?;
        let label = u8::try_from(row.label)
            .ok()
            .and_then(Label::from_u8)
            .ok_or_else(|| {
                Error::Annotation(format!("line {line}: label {} is not 0 or 1", row.label))
            })?;
        let coord = |v: i64, axis: &str| {
            usize::try_from(v).map_err(|_| {
                Error::Annotation(format!("line {line}: negative {axis} coordinate {v}"))
            })
        };
        entries.push(Annotation {
            x: coord(row.x, "x")?,
            y: coord(row.y, "y")?,
            z: coord(row.z, "z")?,
            volume_id: row.volume_id,
            label,
        });
    }
    let set = AnnotationSet::new(entries)?;
    log::info!("read {} annotations from {}", set.len(), csv_path.display());
    Ok(set)
}

pub fn write_annotations(set: &AnnotationSet, csv_path: &Path) -> Result<()> {
    let mut writer = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(csv_path)
        .map_err(|e| csv_error(csv_path, e))?;
    writer
        .write_record(HEADER)
        .map_err(|e| csv_error(csv_path, e))?;
    for a in &set.entries {
        writer
            .serialize(Row {
                volume_id: a.volume_id.clone(),
                x: a.x as i64,
                y: a.y as i64,
                z: a.z as i64,
                label: a.label.as_u8() as i64,
            })
            .map_err(|e| csv_error(csv_path, e))?;
    }
    writer.flush().map_err(|e| Error::io(csv_path, e))?;
    Ok(())
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    if e.is_io_error() {
        match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            _ => unreachable!(),
        }
    } else {
        Error::format("annotation CSV", e.to_string())
    }
}

/// Indices of entries that reference an unknown volume, lie outside its dims,
/// or lie outside its mask, each with a reason.
pub fn find_invalid_annotations<'v>(
    set: &AnnotationSet,
    lookup: impl Fn(&str) -> Option<&'v Volume3>,
) -> Vec<(usize, String)> {
    let mut bad = Vec::new();
    for (i, a) in set.entries.iter().enumerate() {
        let reason = match lookup(&a.volume_id) {
            None => Some(format!("unknown volume {}", a.volume_id)),
            Some(v) if !v.contains(a.x, a.y, a.z) => Some(format!(
                "({}, {}, {}) outside dims {:?} of {}",
                a.x,
                a.y,
                a.z,
                v.dims(),
                a.volume_id
            )),
            Some(v) if !v.is_masked_in(a.x, a.y, a.z) => Some(format!(
                "({}, {}, {}) outside the mask of {}",
                a.x, a.y, a.z, a.volume_id
            )),
            Some(_) => None,
        };
        if let Some(r) = reason {
            bad.push((i, r));
        }
    }
    bad
}

/// Fails on the first entry reported by [`find_invalid_annotations`].
pub fn validate_annotations<'v>(
    set: &AnnotationSet,
    lookup: impl Fn(&str) -> Option<&'v Volume3>,
) -> Result<()> {
    match find_invalid_annotations(set, lookup).into_iter().next() {
        Some((i, reason)) => Err(Error::Annotation(format!("entry {i}: {reason}"))),
        None => Ok(()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::fs;

    fn write(dir: &Path, text: &str) -> std::path::PathBuf {
        let p = dir.join("ann.csv");
        fs::write(&p, text).unwrap();
        p
    }

    #[test]
    fn header_only_is_empty() {
        let dir = tempfile::tempdir().unwrap();
        let set = read_annotations(&write(dir.path(), "volume_id,x,y,z,label\n")).unwrap();
        assert!(set.is_empty());
    }

    #[test]
    fn crlf_and_rows() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            dir.path(),
            "volume_id,x,y,z,label\r\nA,1,2,3,1\r\nB,0,0,0,0\r\n",
        );
        let set = read_annotations(&p).unwrap();
        assert_eq!(set.len(), 2);
        assert_eq!(set.entries()[0].coords(), [1, 2, 3]);
        assert_eq!(set.entries()[0].label, Label::Vessel);
        assert_eq!(set.volume_ids(), vec!["A", "B"]);
    }

    #[test]
    fn rejects_bad_rows() {
        let dir = tempfile::tempdir().unwrap();
        let cases = [
            "volume_id,x,y,z,label\nA,1,2,3,2\n",
            "volume_id,x,y,z,label\nA,1,2,3\n",
            "volume_id,x,y,z,label\nA,-1,2,3,0\n",
            "volume_id,x,y,z,label\nA,1,2,3,0\nA,1,2,3,1\n",
            "id,x,y,z,label\nA,1,2,3,0\n",
            "volume_id,x,y,z,label\nA,one,2,3,0\n",
        ];
        for text in cases {
            assert!(read_annotations(&write(dir.path(), text)).is_err(), "{text}");
        }
    }

    #[test]
    fn read_882_rows() {
        let dir = tempfile::tempdir().unwrap();
        let mut text = String::from("volume_id,x,y,z,label\n");
        for i in 0..882 {
            text.push_str(&format!("VESSEL12_0{},{},{},{},{}\n", i % 3, i, i / 7, i / 11, i % 2));
        }
        let set = read_annotations(&write(dir.path(), &text)).unwrap();
        assert_eq!(set.len(), 882);
        assert_eq!(set.volume_ids().len(), 3);
    }

    #[test]
    fn write_then_read() {
        let dir = tempfile::tempdir().unwrap();
        let set = AnnotationSet::new(vec![
            Annotation { volume_id: "p".into(), x: 4, y: 5, z: 6, label: Label::Vessel },
            Annotation { volume_id: "p".into(), x: 0, y: 5, z: 6, label: Label::NonVessel },
        ])
        .unwrap();
        let p = dir.path().join("a.csv");
        write_annotations(&set, &p).unwrap();
        assert_eq!(read_annotations(&p).unwrap(), set);
    }

    #[test]
    fn validation_flags_bounds_and_mask() {
        let vol = Volume3::filled([2, 2, 2], 0.0)
            .unwrap()
            .with_mask(vec![true, false, true, true, true, true, true, true])
            .unwrap();
        let mk = |id: &str, x, label| Annotation { volume_id: id.into(), x, y: 0, z: 0, label };
        let set = AnnotationSet::new(vec![
            mk("v", 0, Label::Vessel),
            mk("v", 1, Label::Vessel),
            mk("v", 2, Label::NonVessel),
            mk("w", 0, Label::NonVessel),
        ])
        .unwrap();
        let lookup = |id: &str| (id == "v").then_some(&vol);
        let bad: Vec<usize> = find_invalid_annotations(&set, lookup).into_iter().map(|b| b.0).collect();
        assert_eq!(bad, vec![1, 2, 3]);
        assert!(validate_annotations(&set, lookup).is_err());
    }
}
