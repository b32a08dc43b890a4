//! Versioned binary checkpoint of a supernet.
//!
//! Layout: `b"EVNS"`, format version (u32 LE), metadata length (u64 LE),
//! metadata JSON, then every parameter as little-endian f32 in canonical
//! parameter order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::engine::{ParamInfo, ParamStore, Tensor};
use super::network::{Supernet, SupernetConfig};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"EVNS";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Metadata {
    config: SupernetConfig,
    params: Vec<ParamInfo>,
}

pub fn to_bytes(net: &Supernet) -> Vec<u8> {
    let meta = Metadata {
        config: net.config().clone(),
        params: net.params().infos(),
    };
    let json = serde_json::to_vec(&meta).expect("metadata serializes");
    let mut out = Vec::with_capacity(16 + json.len() + 4 * net.params().num_scalars());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for id in net.params().ids() {
        for v in net.params().get(id).data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

fn take<'a>(bytes: &'a [u8], at: &mut usize, n: usize, what: &str) -> Result<&'a [u8]> {
    let end = at.checked_add(n).filter(|&e| e <= bytes.len()).ok_or_else(|| {
        Error::Checkpoint(format!(
            "truncated {what}: need {n} bytes at offset {at}, file has {}",
            bytes.len()
        ))
    })?;
    let s = &bytes[*at..end];
    *at = end;
    Ok(s)
}

pub fn from_bytes(bytes: &[u8]) -> Result<Supernet> {
    let mut at = 0;
    if take(bytes, &mut at, 4, "magic")? != MAGIC {
        return Err(Error::Checkpoint("not a supernet checkpoint (bad magic)".into()));
    }
    let version = u32::from_le_bytes(take(bytes, &mut at, 4, "version")?.try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported format version {version}, expected {FORMAT_VERSION}"
        )));
    }
    let meta_len = u64::from_le_bytes(take(bytes, &mut at, 8, "metadata length")?.try_into().expect("8 bytes"));
    let meta_len = usize::try_from(meta_len).map_err(|_| Error::Checkpoint("metadata length overflows".into()))?;
    let meta: Metadata = serde_json::from_slice(take(bytes, &mut at, meta_len, "metadata")?)
        .map_err(|e| Error::Checkpoint(format!("invalid metadata: {e}")))?;

    let expected: usize = meta.params.iter().map(|p| 4 * p.shape.iter().product::<usize>()).sum();
    if bytes.len() - at != expected {
        return Err(Error::Checkpoint(format!(
            "weight section is {} bytes, metadata describes {expected}",
            bytes.len() - at
        )));
    }
    let mut store = ParamStore::new();
    for info in &meta.params {
        let n: usize = info.shape.iter().product();
        let raw = take(bytes, &mut at, 4 * n, "weights")?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        store.add(info.name.clone(), Tensor::new(info.shape.clone(), data)?);
    }
    Supernet::from_parts(meta.config, store)
}

pub fn save(net: &Supernet, path: &Path) -> Result<()> {
    fs::write(path, to_bytes(net)).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<Supernet> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes)
}
