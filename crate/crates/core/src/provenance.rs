//! Content hashes linking artifacts (dictionary, features, model, report).

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Lowercase hex SHA-256 of a byte slice.
pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Lowercase hex SHA-256 of a file's contents.
pub fn file_sha256(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

/// An input artifact as recorded in an output: file name (no directory, so
/// records do not depend on where a run happened) and content hash.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputRef {
    pub name: String,
    pub sha256: String,
}

impl InputRef {
    pub fn from_file(path: &Path) -> Result<InputRef> {
        let name = path
            .file_name()
            .map_or_else(|| path.display().to_string(), |n| n.to_string_lossy().into_owned());
        Ok(InputRef {
            name,
            sha256: file_sha256(path)?,
        })
    }
}

/// Fails with [`Error::HashMismatch`] unless `declared == actual`.
pub fn check_hash(what: &str, declared: &str, actual: &str) -> Result<()> {
    if declared == actual {
        Ok(())
    } else {
        Err(Error::HashMismatch {
            what: what.to_string(),
            declared: declared.to_string(),
            actual: actual.to_string(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_digest() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }
}
