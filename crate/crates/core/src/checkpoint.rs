//! Model checkpoint files.
//!
//! Layout: the 8-byte magic `CHFMCKPT`, a little-endian `u64` header
//! length, a JSON header `{"config": .., "tensors": [{"name", "shape",
//! "offset"}]}`, then every tensor as little-endian `f32` values. Offsets
//! are in bytes from the start of the data section.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::ad::{Array, Real};
use crate::compose::{Model, ModelConfig};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"CHFMCKPT";

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    offset: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    tensors: Vec<TensorEntry>,
}

pub fn write_checkpoint<F: Real, W: Write>(model: &Model<F>, mut out: W) -> Result<()> {
    let mut offset = 0u64;
    let mut tensors = Vec::new();
    for t in model.store.tensors() {
        tensors.push(TensorEntry { name: t.name.clone(), shape: t.value.shape().to_vec(), offset });
        offset += 4 * t.value.len() as u64;
    }
    let header = serde_json::to_vec(&Header { config: model.config.clone(), tensors })?;
    out.write_all(MAGIC)?;
    out.write_all(&(header.len() as u64).to_le_bytes())?;
    out.write_all(&header)?;
    let mut buf = Vec::with_capacity(offset as usize);
    for t in model.store.tensors() {
        for v in t.value.data() {
            buf.extend_from_slice(&v.to_f32().unwrap().to_le_bytes());
        }
    }
    out.write_all(&buf)?;
    out.flush()?;
    Ok(())
}

pub fn read_checkpoint<F: Real, R: Read>(mut input: R) -> Result<Model<F>> {
    let mut magic = [0u8; 8];
    input.read_exact(&mut magic).map_err(|_| Error::Format("checkpoint is truncated".into()))?;
    if &magic != MAGIC {
        return Err(Error::Format("not a checkpoint file".into()));
    }
    let mut len = [0u8; 8];
    input.read_exact(&mut len).map_err(|_| Error::Format("checkpoint is truncated".into()))?;
    let len = u64::from_le_bytes(len) as usize;
    if len > 1 << 30 {
        return Err(Error::Format(format!("implausible header length {len}")));
    }
    let mut header = vec![0u8; len];
    input.read_exact(&mut header).map_err(|_| Error::Format("checkpoint header is truncated".into()))?;
    let header: Header = serde_json::from_slice(&header)
        .map_err(|e| Error::Format(format!("checkpoint header: {e}")))?;
    let mut data = Vec::new();
    input.read_to_end(&mut data)?;

    let mut model = Model::<F>::zeroed(header.config)?;
    if header.tensors.len() != model.store.len() {
        return Err(Error::Format(format!(
            "checkpoint has {} tensors, model expects {}",
            header.tensors.len(),
            model.store.len()
        )));
    }
    for entry in &header.tensors {
        let id = model
            .store
            .find(&entry.name)
            .ok_or_else(|| Error::Format(format!("unknown tensor {:?}", entry.name)))?;
        if model.store.get(id).shape() != entry.shape.as_slice() {
            return Err(Error::Format(format!(
                "tensor {:?} has shape {:?}, expected {:?}",
                entry.name,
                entry.shape,
                model.store.get(id).shape()
            )));
        }
        let count: usize = entry.shape.iter().product();
        let start = entry.offset as usize;
        let bytes = data
            .get(start..start + 4 * count)
            .ok_or_else(|| Error::Format(format!("tensor {:?} runs past end of file", entry.name)))?;
        let values: Vec<F> = bytes
            .chunks_exact(4)
            .map(|c| F::from_f32(f32::from_le_bytes([c[0], c[1], c[2], c[3]])).unwrap())
            .collect();
        model.store.set(id, Array::new(entry.shape.clone(), values)?)?;
    }
    Ok(model)
}

pub fn save_checkpoint<F: Real>(model: &Model<F>, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path)?;
    write_checkpoint(model, std::io::BufWriter::new(file))
}

pub fn load_checkpoint<F: Real>(path: &Path) -> Result<Model<F>> {
    let file = std::fs::File::open(path)?;
    read_checkpoint(std::io::BufReader::new(file))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> ModelConfig {
        ModelConfig { dim: 8, layers: 2, heads: 2, ffn_dim: 12, vocab_size: 9, window: 3, dropout: 0.1, init_std: 0.1 }
    }

    #[test]
    fn roundtrip_is_lossless() {
        let m = Model::<f32>::new(cfg(), 3).unwrap();
        let mut buf = Vec::new();
        write_checkpoint(&m, &mut buf).unwrap();
        let back: Model<f32> = read_checkpoint(buf.as_slice()).unwrap();
        assert_eq!(back.config, m.config);
        for (a, b) in m.store.tensors().iter().zip(back.store.tensors()) {
            assert_eq!(a.name, b.name);
            assert_eq!(a.value, b.value);
        }
    }

    #[test]
    fn header_layout() {
        let m = Model::<f32>::new(cfg(), 3).unwrap();
        let mut buf = Vec::new();
        write_checkpoint(&m, &mut buf).unwrap();
        assert_eq!(&buf[..8], MAGIC);
        let len = u64::from_le_bytes(buf[8..16].try_into().unwrap()) as usize;
        let header: serde_json::Value = serde_json::from_slice(&buf[16..16 + len]).unwrap();
        assert_eq!(header["config"]["dim"], 8);
        assert_eq!(header["tensors"][0]["name"], "tok_emb");
        assert_eq!(header["tensors"][0]["offset"], 0);
        assert_eq!(header["tensors"][1]["offset"], 4 * 9 * 8);
        let total: usize = m.store.tensors().iter().map(|t| t.value.len()).sum();
        assert_eq!(buf.len(), 16 + len + 4 * total);
    }

    #[test]
    fn corruption_is_detected() {
        let m = Model::<f32>::new(cfg(), 3).unwrap();
        let mut buf = Vec::new();
        write_checkpoint(&m, &mut buf).unwrap();
        let truncated = &buf[..buf.len() - 4];
        assert_eq!(read_checkpoint::<f32, _>(truncated).unwrap_err().exit_code(), 3);
        assert!(read_checkpoint::<f32, _>(&b"garbage!"[..]).is_err());
    }
}
