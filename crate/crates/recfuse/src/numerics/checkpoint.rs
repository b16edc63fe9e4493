//! Binary container for tensors: an 8-byte little-endian header length, a
//! JSON header mapping names to shape/dtype/byte-offset, then raw
//! little-endian f64 payloads. Round trips are bit-exact. The same container
//! carries model checkpoints, knowledge-base vectors, and embedding dumps.

use super::optim::ParamStore;
use super::tensor::Tensor;
use super::NumericsError;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    shape: Vec<usize>,
    dtype: String,
    offset: u64,
}

#[derive(Serialize, Deserialize)]
struct Header {
    #[serde(default)]
    meta: serde_json::Value,
    tensors: BTreeMap<String, TensorEntry>,
}

pub fn write_container<P: AsRef<Path>>(
    path: P,
    meta: &serde_json::Value,
    tensors: &[(String, &Tensor)],
) -> Result<(), NumericsError> {
    let mut entries = BTreeMap::new();
    let mut offset = 0u64;
    // payload laid out in the order given
    for (name, t) in tensors {
        entries.insert(
            name.clone(),
            TensorEntry {
                shape: t.shape().to_vec(),
                dtype: "f64".to_string(),
                offset,
            },
        );
        offset += (t.numel() * 8) as u64;
    }
    let header = Header {
        meta: meta.clone(),
        tensors: entries,
    };
    let header_bytes = serde_json::to_vec(&header)?;
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    f.write_all(&(header_bytes.len() as u64).to_le_bytes())?;
    f.write_all(&header_bytes)?;
    for (_, t) in tensors {
        for x in t.data() {
            f.write_all(&x.to_le_bytes())?;
        }
    }
    f.flush()?;
    Ok(())
}

pub fn read_container<P: AsRef<Path>>(
    path: P,
) -> Result<(serde_json::Value, BTreeMap<String, Tensor>), NumericsError> {
    let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut len_bytes = [0u8; 8];
    f.read_exact(&mut len_bytes)?;
    let header_len = u64::from_le_bytes(len_bytes) as usize;
    let mut header_bytes = vec![0u8; header_len];
    f.read_exact(&mut header_bytes)?;
    let header: Header = serde_json::from_slice(&header_bytes)?;
    let mut payload = Vec::new();
    f.read_to_end(&mut payload)?;
    let mut out = BTreeMap::new();
    for (name, e) in header.tensors {
        if e.dtype != "f64" {
            return Err(NumericsError::Corrupt(format!(
                "unsupported dtype {:?} for {name}",
                e.dtype
            )));
        }
        let numel: usize = e.shape.iter().product();
        let start = e.offset as usize;
        let end = start + numel * 8;
        if end > payload.len() {
            return Err(NumericsError::Corrupt(format!(
                "tensor {name} extends past end of payload"
            )));
        }
        let data: Vec<f64> = payload[start..end]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        out.insert(name, Tensor::new(e.shape, data)?);
    }
    Ok((header.meta, out))
}

/// Save every parameter of a store (values only, no optimizer state).
pub fn save_params<P: AsRef<Path>>(
    path: P,
    store: &ParamStore,
    meta: &serde_json::Value,
) -> Result<(), NumericsError> {
    let tensors: Vec<(String, &Tensor)> =
        store.iter().map(|(n, t)| (n.clone(), t)).collect();
    write_container(path, meta, &tensors)
}

/// Load a container into a fresh store; returns the meta header alongside.
pub fn load_params<P: AsRef<Path>>(
    path: P,
) -> Result<(serde_json::Value, ParamStore), NumericsError> {
    let (meta, tensors) = read_container(path)?;
    let mut store = ParamStore::new();
    for (name, t) in tensors {
        store.insert(&name, t)?;
    }
    Ok((meta, store))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.bin");
        let a = Tensor::new(vec![2, 2], vec![1.5, -2.25, 1e-300, f64::MIN_POSITIVE]).unwrap();
        let b = Tensor::vector(vec![0.1 + 0.2, std::f64::consts::PI]);
        let meta = serde_json::json!({"kind": "test"});
        write_container(
            &path,
            &meta,
            &[("a".to_string(), &a), ("b".to_string(), &b)],
        )
        .unwrap();
        let (m, tensors) = read_container(&path).unwrap();
        assert_eq!(m["kind"], "test");
        assert_eq!(tensors["a"], a);
        assert_eq!(tensors["b"], b);
        // byte-identical on rewrite
        let bytes1 = std::fs::read(&path).unwrap();
        write_container(
            &path,
            &meta,
            &[("a".to_string(), &a), ("b".to_string(), &b)],
        )
        .unwrap();
        assert_eq!(bytes1, std::fs::read(&path).unwrap());
    }
}
