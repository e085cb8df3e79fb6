//! Versioned binary parameter container plus a JSON config sidecar.
//!
//! Layout (little endian): magic `WRPGCKPT`, `u32` version, `u8` dtype
//! (0 = f32, 1 = f64), `u32` tensor count, then per tensor a `u32` name
//! length, the UTF-8 name, `u64` rows, `u64` cols and the values.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use crate::{NnError, ParamStore, Real, Tensor};

const MAGIC: &[u8; 8] = b"WRPGCKPT";
const VERSION: u32 = 1;

/// Path of the config sidecar for a checkpoint file.
pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".json");
    path.with_file_name(name)
}

fn bad(msg: impl Into<String>) -> NnError {
    NnError::Checkpoint(msg.into())
}

pub fn encode<T: Real>(store: &ParamStore<T>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(if T::NAME == "f32" { 0 } else { 1 });
    out.extend_from_slice(&(store.len() as u32).to_le_bytes());
    for id in store.ids() {
        let name = store.name(id).as_bytes();
        let t = store.get(id);
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name);
        out.extend_from_slice(&(t.rows() as u64).to_le_bytes());
        out.extend_from_slice(&(t.cols() as u64).to_le_bytes());
        for &x in t.data() {
            if T::NAME == "f32" {
                out.extend_from_slice(&x.to_f32().unwrap().to_le_bytes());
            } else {
                out.extend_from_slice(&x.to_f64().unwrap().to_le_bytes());
            }
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8], NnError> {
        if self.buf.len() < n {
            return Err(bad("truncated checkpoint"));
        }
        let (head, rest) = self.buf.split_at(n);
        self.buf = rest;
        Ok(head)
    }

    fn u32(&mut self) -> Result<u32, NnError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, NnError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Named tensors in file order, converted to `T`.
pub fn decode<T: Real>(bytes: &[u8]) -> Result<Vec<(String, Tensor<T>)>, NnError> {
    let mut r = Reader { buf: bytes };
    if r.take(8)? != MAGIC {
        return Err(bad("not a checkpoint (bad magic)"));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(bad(format!("unsupported checkpoint version {version}")));
    }
    let dtype = r.take(1)?[0];
    if dtype > 1 {
        return Err(bad(format!("unknown dtype tag {dtype}")));
    }
    let count = r.u32()? as usize;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let len = r.u32()? as usize;
        let name = String::from_utf8(r.take(len)?.to_vec()).map_err(|_| bad("tensor name is not UTF-8"))?;
        let rows = r.u64()? as usize;
        let cols = r.u64()? as usize;
        let n = rows.checked_mul(cols).ok_or_else(|| bad("tensor shape overflows"))?;
        let width = if dtype == 0 { 4 } else { 8 };
        let raw = r.take(n.checked_mul(width).ok_or_else(|| bad("tensor shape overflows"))?)?;
        let data = raw
            .chunks_exact(width)
            .map(|c| {
                let x = if dtype == 0 {
                    f32::from_le_bytes(c.try_into().unwrap()) as f64
                } else {
                    f64::from_le_bytes(c.try_into().unwrap())
                };
                T::from_f64_lossy(x)
            })
            .collect();
        out.push((name, Tensor::from_vec(rows, cols, data)));
    }
    if !r.buf.is_empty() {
        return Err(bad("trailing bytes after last tensor"));
    }
    Ok(out)
}

/// Write `path` and its config sidecar.
pub fn save<T: Real>(path: &Path, store: &ParamStore<T>, config: &serde_json::Value) -> Result<(), NnError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::File::create(path)?.write_all(&encode(store))?;
    fs::write(sidecar_path(path), serde_json::to_string_pretty(config)?)?;
    Ok(())
}

/// Read the config sidecar of a checkpoint.
pub fn load_config(path: &Path) -> Result<serde_json::Value, NnError> {
    let text = fs::read_to_string(sidecar_path(path))?;
    Ok(serde_json::from_str(&text)?)
}

/// Overwrite every tensor of `store` from `path`. The checkpoint must hold
/// exactly the same names with the same shapes.
pub fn load_into<T: Real>(path: &Path, store: &mut ParamStore<T>) -> Result<(), NnError> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    let tensors = decode::<T>(&bytes)?;
    if tensors.len() != store.len() {
        return Err(bad(format!(
            "checkpoint has {} tensors, model expects {}",
            tensors.len(),
            store.len()
        )));
    }
    for (name, t) in tensors {
        let id = store
            .find(&name)
            .ok_or_else(|| bad(format!("unexpected tensor {name}")))?;
        store.set(id, t).map_err(|_| bad(format!("shape mismatch for {name}")))?;
    }
    Ok(())
}
