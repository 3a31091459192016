use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &str = "bifrl-checkpoint";
pub const CHECKPOINT_VERSION: &str = "1";

fn digest(payload: &[u8]) -> String {
    hex::encode(Sha256::digest(payload))
}

/// Write `value` as a header line `magic version sha256` followed by a JSON payload.
/// The file is written next to `path` and renamed into place.
pub fn save<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let payload = serde_json::to_vec(value)?;
    let mut bytes = format!("{CHECKPOINT_MAGIC} {CHECKPOINT_VERSION} {}\n", digest(&payload)).into_bytes();
    bytes.extend_from_slice(&payload);
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, &bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Read a file written by [`save`], checking the version and checksum before parsing.
pub fn load<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = fs::read(path)?;
    let split = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::Checkpoint("missing header line".into()))?;
    let header = std::str::from_utf8(&bytes[..split]).map_err(|_| Error::Checkpoint("header is not UTF-8".into()))?;
    let payload = &bytes[split + 1..];
    let fields: Vec<&str> = header.split(' ').collect();
    if fields.len() != 3 || fields[0] != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint(format!("unrecognized header '{header}'")));
    }
    if fields[1] != CHECKPOINT_VERSION {
        return Err(Error::VersionMismatch {
            found: fields[1].to_string(),
            expected: CHECKPOINT_VERSION.to_string(),
        });
    }
    let computed = digest(payload);
    if computed != fields[2] {
        return Err(Error::Checksum {
            expected: fields[2].to_string(),
            computed,
        });
    }
    serde_json::from_slice(payload).map_err(|e| Error::Checkpoint(e.to_string()))
}
