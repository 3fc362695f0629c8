//! Checkpoint files: a magic line, a one-line JSON manifest, then the raw
//! parameter values as little-endian `f64`, in manifest order.
//!
//! ```text
//! RELPOLICY-CHECKPOINT 1\n
//! {"params":[{"name":..,"shape":[r,c]},..],"data_bytes":N,"sha256":"..","meta":{..}}\n
//! <N bytes>
//! ```

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::params::ParamStore;
use crate::error::{Error, Result};

const MAGIC: &str = "RELPOLICY-CHECKPOINT 1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamEntry {
    pub name: String,
    pub shape: [usize; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub params: Vec<ParamEntry>,
    pub data_bytes: usize,
    pub sha256: String,
    #[serde(default)]
    pub meta: serde_json::Value,
}

pub fn write_checkpoint<W: Write>(out: &mut W, store: &ParamStore, meta: serde_json::Value) -> Result<()> {
    let mut data = Vec::with_capacity(store.num_scalars() * 8);
    let mut params = Vec::new();
    for p in store.params() {
        params.push(ParamEntry {
            name: p.name.clone(),
            shape: p.value.shape(),
        });
        for v in &p.value.data {
            data.extend_from_slice(&v.to_le_bytes());
        }
    }
    let manifest = Manifest {
        params,
        data_bytes: data.len(),
        sha256: hex::encode(Sha256::digest(&data)),
        meta,
    };
    writeln!(out, "{MAGIC}")?;
    serde_json::to_writer(&mut *out, &manifest)?;
    out.write_all(b"\n")?;
    out.write_all(&data)?;
    Ok(())
}

/// Reads a checkpoint into its manifest and the flat parameter values.
pub fn read_checkpoint<R: Read>(input: &mut R) -> Result<(Manifest, Vec<f64>)> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    let mut lines = bytes.splitn(3, |&b| b == b'\n');
    let magic = lines.next().unwrap_or_default();
    if magic != MAGIC.as_bytes() {
        return Err(Error::Format("not a checkpoint file".into()));
    }
    let manifest: Manifest = serde_json::from_slice(
        lines
            .next()
            .ok_or_else(|| Error::Format("missing manifest".into()))?,
    )?;
    let data = lines.next().unwrap_or_default();
    if data.len() != manifest.data_bytes || hex::encode(Sha256::digest(data)) != manifest.sha256 {
        return Err(Error::ChecksumMismatch);
    }
    let values = data
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    Ok((manifest, values))
}

/// Copies checkpoint values into a store with identical names and shapes.
pub fn load_into(store: &mut ParamStore, manifest: &Manifest, values: &[f64]) -> Result<()> {
    if manifest.params.len() != store.len() {
        return Err(Error::CheckpointMismatch(format!(
            "checkpoint has {} parameters, model has {}",
            manifest.params.len(),
            store.len()
        )));
    }
    let mut offset = 0;
    for entry in &manifest.params {
        let id = store
            .id(&entry.name)
            .ok_or_else(|| Error::UnknownParameter(entry.name.clone()))?;
        let target = store.value_mut(id);
        if target.shape() != entry.shape {
            return Err(Error::CheckpointMismatch(format!(
                "`{}` has shape {:?}, model expects {:?}",
                entry.name,
                entry.shape,
                target.shape()
            )));
        }
        let n = target.len();
        target.data.copy_from_slice(&values[offset..offset + n]);
        offset += n;
    }
    Ok(())
}

pub fn save(path: &Path, store: &ParamStore, meta: serde_json::Value) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_checkpoint(&mut f, store, meta)?;
    f.flush()?;
    Ok(())
}

pub fn load(path: &Path) -> Result<(Manifest, Vec<f64>)> {
    let mut f = std::fs::File::open(path)?;
    read_checkpoint(&mut f)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Tensor;

    fn store() -> ParamStore {
        let mut rng = crate::fixtures::rng(11);
        let mut s = ParamStore::new();
        s.add_normal("embed", 3, 4, &mut rng);
        s.add_uniform("w", 2, 5, &mut rng);
        s.add("odd", Tensor::row(&[f64::MIN_POSITIVE, -0.0, 1e300]));
        s
    }

    #[test]
    fn bit_exact_round_trip() {
        let original = store();
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &original, serde_json::json!({"embed_dim": 4})).unwrap();
        let (manifest, values) = read_checkpoint(&mut buf.as_slice()).unwrap();
        assert_eq!(manifest.meta["embed_dim"], 4);
        let mut fresh = store();
        for id in fresh.ids().collect::<Vec<_>>() {
            fresh.value_mut(id).data.iter_mut().for_each(|v| *v = 0.0);
        }
        load_into(&mut fresh, &manifest, &values).unwrap();
        for (a, b) in original.params().iter().zip(fresh.params()) {
            let bits = |t: &Tensor| t.data.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(&a.value), bits(&b.value));
        }
        let mut again = Vec::new();
        write_checkpoint(&mut again, &fresh, serde_json::json!({"embed_dim": 4})).unwrap();
        assert_eq!(buf, again);
    }

    #[test]
    fn corruption_detected() {
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &store(), serde_json::Value::Null).unwrap();
        let last = buf.len() - 3;
        buf[last] ^= 0x40;
        assert!(matches!(read_checkpoint(&mut buf.as_slice()), Err(Error::ChecksumMismatch)));
        buf.truncate(buf.len() - 8);
        assert!(matches!(read_checkpoint(&mut buf.as_slice()), Err(Error::ChecksumMismatch)));
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &store(), serde_json::Value::Null).unwrap();
        let (manifest, values) = read_checkpoint(&mut buf.as_slice()).unwrap();
        let mut other = ParamStore::new();
        other.add_zeros("embed", 4, 3);
        other.add_zeros("w", 2, 5);
        other.add_zeros("odd", 1, 3);
        assert!(matches!(
            load_into(&mut other, &manifest, &values),
            Err(Error::CheckpointMismatch(_))
        ));
    }
}
