//! Binary checkpoint container.
//!
//! Layout: 8 magic bytes, a little-endian `u64` header length, a JSON header,
//! then every array as raw little-endian `f64`s in row-major order. The
//! header lists each array's shape, dtype and byte offset from the start of
//! the data section.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Mat;

const MAGIC: &[u8; 8] = b"USDRLCKP";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: u64,
    /// Number of optimizer steps taken; every random stream is derived from
    /// the seed and a position, so this is the whole generator state.
    pub step: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct ArrayEntry {
    shape: [usize; 2],
    dtype: String,
    offset: u64,
}

#[derive(Serialize, Deserialize)]
struct Header {
    format_version: u32,
    config: serde_json::Value,
    epoch: usize,
    rng: RngState,
    arrays: BTreeMap<String, ArrayEntry>,
}

/// In-memory checkpoint: configuration, named arrays and progress counters.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: serde_json::Value,
    pub arrays: BTreeMap<String, Mat>,
    /// Completed epochs.
    pub epoch: usize,
    pub rng: RngState,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut offset = 0u64;
        let mut entries = BTreeMap::new();
        for (name, m) in &self.arrays {
            entries.insert(name.clone(), ArrayEntry { shape: [m.rows(), m.cols()], dtype: "f64".into(), offset });
            offset += 8 * m.len() as u64;
        }
        let header =
            Header { format_version: FORMAT_VERSION, config: self.config.clone(), epoch: self.epoch, rng: self.rng.clone(), arrays: entries };
        let head = serde_json::to_vec(&header)?;
        let mut out = Vec::with_capacity(16 + head.len() + offset as usize);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(head.len() as u64).to_le_bytes());
        out.extend_from_slice(&head);
        for m in self.arrays.values() {
            for v in m.as_slice() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let bad = |message: String| Error::Checkpoint { path: path.to_path_buf(), message };
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(bad("not a checkpoint file (bad magic)".into()));
        }
        let head_len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let data_start = 16usize.checked_add(head_len).filter(|&e| e <= bytes.len()).ok_or_else(|| bad("truncated header".into()))?;
        let header: Header = serde_json::from_slice(&bytes[16..data_start]).map_err(|e| bad(format!("bad header: {e}")))?;
        if header.format_version != FORMAT_VERSION {
            return Err(bad(format!("format version {} is not supported (expected {FORMAT_VERSION})", header.format_version)));
        }
        let data = &bytes[data_start..];
        let mut arrays = BTreeMap::new();
        for (name, e) in header.arrays {
            if e.dtype != "f64" {
                return Err(bad(format!("array {name} has unsupported dtype {}", e.dtype)));
            }
            let n = e.shape[0] * e.shape[1];
            let start = e.offset as usize;
            let end = start.checked_add(8 * n).filter(|&end| end <= data.len()).ok_or_else(|| bad(format!("array {name} is truncated")))?;
            let values: Vec<f64> = data[start..end].chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
            arrays.insert(name, Mat::from_vec(e.shape[0], e.shape[1], values));
        }
        Ok(Self { config: header.config, arrays, epoch: header.epoch, rng: header.rng })
    }

    /// Writes atomically through a sibling temporary file.
    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        let tmp = path.with_extension("tmp");
        let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(&bytes).map_err(|e| Error::io(&tmp, e))?;
        f.sync_all().map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }

    /// Arrays whose names start with `prefix`, with the prefix stripped.
    pub fn arrays_under(&self, prefix: &str) -> BTreeMap<String, Mat> {
        self.arrays.iter().filter_map(|(k, v)| k.strip_prefix(prefix).map(|s| (s.to_string(), v.clone()))).collect()
    }
}
