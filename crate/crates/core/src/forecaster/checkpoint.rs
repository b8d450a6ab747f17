//! Binary checkpoint: magic, version, two length-prefixed JSON documents
//! (run configuration and training state) and the named parameter arrays.
//! All integers and floats are little-endian.
//!
//! ```text
//! "MAKERCKP"            8 bytes
//! version               u32
//! config_len            u64, then config JSON (UTF-8)
//! state_len             u64, then training-state JSON (UTF-8)
//! param_count           u32
//! per parameter:
//!   name_len u32, name (UTF-8), rows u64, cols u64, rows·cols f64 row-major
//! ```

use std::io::{Read, Write};
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::autograd::ParamStore;
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"MAKERCKP";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Where training stopped. Every random draw is derived from `seed` and the
/// step counter, so these fields are the complete generator state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingState {
    pub seed: u64,
    pub step: u64,
    pub epoch: usize,
    pub lambda: f64,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub config_json: String,
    pub state: TrainingState,
    pub params: ParamStore,
}

fn bad(detail: impl Into<String>) -> Error {
    Error::Format {
        what: "checkpoint",
        detail: detail.into(),
    }
}

pub fn write_checkpoint<W: Write>(
    mut w: W,
    config_json: &str,
    state: &TrainingState,
    params: &ParamStore,
) -> std::io::Result<()> {
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    let state_json = serde_json::to_string(state).expect("state serializes");
    for doc in [config_json, state_json.as_str()] {
        w.write_all(&(doc.len() as u64).to_le_bytes())?;
        w.write_all(doc.as_bytes())?;
    }
    w.write_all(&(params.len() as u32).to_le_bytes())?;
    for (_, name, value) in params.iter() {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(value.nrows() as u64).to_le_bytes())?;
        w.write_all(&(value.ncols() as u64).to_le_bytes())?;
        for x in value.iter() {
            w.write_all(&x.to_le_bytes())?;
        }
    }
    w.flush()
}

pub fn save_checkpoint(path: &Path, config_json: &str, state: &TrainingState, params: &ParamStore) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_checkpoint(std::io::BufWriter::new(file), config_json, state, params).map_err(|e| Error::io(path, e))
}

struct Reader<R> {
    inner: R,
}

impl<R: Read> Reader<R> {
    fn bytes(&mut self, n: usize) -> Result<Vec<u8>> {
        let mut buf = vec![0; n];
        self.inner
            .read_exact(&mut buf)
            .map_err(|_| bad("unexpected end of file"))?;
        Ok(buf)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.bytes(8)?.try_into().unwrap()))
    }

    fn string(&mut self, len: u64) -> Result<String> {
        if len > 1 << 32 {
            return Err(bad(format!("implausible string length {len}")));
        }
        String::from_utf8(self.bytes(len as usize)?).map_err(|_| bad("invalid UTF-8"))
    }
}

pub fn read_checkpoint<R: Read>(r: R) -> Result<Checkpoint> {
    let mut r = Reader { inner: r };
    if r.bytes(8)? != CHECKPOINT_MAGIC {
        return Err(bad("not a checkpoint (bad magic)"));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let len = r.u64()?;
    let config_json = r.string(len)?;
    let len = r.u64()?;
    let state: TrainingState =
        serde_json::from_str(&r.string(len)?).map_err(|e| bad(format!("training state: {e}")))?;
    let count = r.u32()?;
    let mut params = ParamStore::new();
    for _ in 0..count {
        let len = r.u32()?;
        let name = r.string(len as u64)?;
        let (rows, cols) = (r.u64()? as usize, r.u64()? as usize);
        let n = rows
            .checked_mul(cols)
            .filter(|&n| n < 1 << 31)
            .ok_or_else(|| bad(format!("implausible shape {rows}×{cols} for `{name}`")))?;
        let data: Vec<f64> = r
            .bytes(n * 8)?
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
            .collect();
        if params.id(&name).is_some() {
            return Err(bad(format!("duplicate parameter `{name}`")));
        }
        params.insert(name, Array2::from_shape_vec((rows, cols), data).unwrap());
    }
    let mut rest = Vec::new();
    r.inner.read_to_end(&mut rest).map_err(|e| bad(e.to_string()))?;
    if !rest.is_empty() {
        return Err(bad(format!("{} trailing bytes", rest.len())));
    }
    Ok(Checkpoint {
        config_json,
        state,
        params,
    })
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(std::io::BufReader::new(file))
}
