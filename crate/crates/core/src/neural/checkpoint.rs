//! Binary checkpoint: magic, version, seed, SHA-256 of the model spec text,
//! the spec text itself, then named tensors as little-endian f32.

use std::io::{Read, Write};
use std::path::Path;

use sha2::{Digest, Sha256};

use super::{NeuralError, ParamStore, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"GPLNCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn spec_hash(spec_text: &str) -> [u8; 32] {
    Sha256::digest(spec_text.as_bytes()).into()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub seed: u64,
    pub spec_text: String,
    pub tensors: Vec<(String, Tensor)>,
}

impl Checkpoint {
    /// Copy tensors into `store`, which must have been built from the same
    /// spec text.
    pub fn load_into(&self, store: &mut ParamStore, spec_text: &str) -> Result<(), NeuralError> {
        if spec_hash(spec_text) != spec_hash(&self.spec_text) {
            return Err(NeuralError::Checkpoint("model spec hash mismatch".into()));
        }
        if self.tensors.len() != store.len() {
            return Err(NeuralError::Checkpoint(format!(
                "expected {} tensors, found {}",
                store.len(),
                self.tensors.len()
            )));
        }
        for (name, t) in &self.tensors {
            let id = store
                .find(name)
                .ok_or_else(|| NeuralError::Checkpoint(format!("unknown tensor {name}")))?;
            let dst = store.value_mut(id);
            if dst.shape() != t.shape() {
                return Err(NeuralError::Checkpoint(format!("shape mismatch for {name}")));
            }
            dst.data.copy_from_slice(&t.data);
        }
        Ok(())
    }
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    put_u32(out, s.len() as u32);
    out.extend_from_slice(s.as_bytes());
}

pub fn encode_checkpoint(store: &ParamStore, spec_text: &str) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    put_u32(&mut out, CHECKPOINT_VERSION);
    out.extend_from_slice(&store.init_seed.to_le_bytes());
    out.extend_from_slice(&spec_hash(spec_text));
    put_str(&mut out, spec_text);
    put_u32(&mut out, store.len() as u32);
    for id in store.ids() {
        let t = store.value(id);
        put_str(&mut out, store.name(id));
        put_u32(&mut out, 2);
        put_u32(&mut out, t.rows as u32);
        put_u32(&mut out, t.cols as u32);
        for v in &t.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn write_checkpoint(path: &Path, store: &ParamStore, spec_text: &str) -> Result<(), NeuralError> {
    let bytes = encode_checkpoint(store, spec_text);
    // Write then rename so a crash never leaves a truncated checkpoint.
    let tmp = path.with_extension("tmp");
    let mut f = std::fs::File::create(&tmp)?;
    f.write_all(&bytes)?;
    f.sync_all()?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8], NeuralError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| NeuralError::Checkpoint("truncated file".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, NeuralError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, NeuralError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn string(&mut self) -> Result<String, NeuralError> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| NeuralError::Checkpoint("invalid utf-8".into()))
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint, NeuralError> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(8)? != CHECKPOINT_MAGIC {
        return Err(NeuralError::Checkpoint("bad magic".into()));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(NeuralError::Checkpoint(format!("unsupported version {version}")));
    }
    let seed = r.u64()?;
    let hash: [u8; 32] = r.take(32)?.try_into().expect("32 bytes");
    let spec_text = r.string()?;
    if spec_hash(&spec_text) != hash {
        return Err(NeuralError::Checkpoint("spec hash does not match embedded spec".into()));
    }
    let n = r.u32()? as usize;
    let mut tensors = Vec::with_capacity(n.min(4096));
    for _ in 0..n {
        let name = r.string()?;
        if r.u32()? != 2 {
            return Err(NeuralError::Checkpoint(format!("tensor {name} is not 2-d")));
        }
        let rows = r.u32()? as usize;
        let cols = r.u32()? as usize;
        let raw = r.take(rows.saturating_mul(cols).saturating_mul(4))?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        tensors.push((name, Tensor::from_vec(rows, cols, data)));
    }
    if r.pos != bytes.len() {
        return Err(NeuralError::Checkpoint("trailing bytes".into()));
    }
    Ok(Checkpoint {
        seed,
        spec_text,
        tensors,
    })
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint, NeuralError> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    decode_checkpoint(&bytes)
}
