//! Binary checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! b"ANAPHCK1"
//! u32 header length, then the header as JSON
//! u32 parameter count
//! per parameter: u16 name length, name (UTF-8), u32 rows, u32 cols, rows*cols f64
//! ```

use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::encoding::Vocab;
use crate::numerics::{ParamKind, ParamStore, Tensor};
use crate::seq2seq::{AttentionKind, ModelConfig, ModelError, Seq2Seq, Unit};

const MAGIC: &[u8; 8] = b"ANAPHCK1";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,
    #[error("malformed header: {0}")]
    Header(#[from] serde_json::Error),
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub unit: Unit,
    pub attention: AttentionKind,
    pub hidden_size: usize,
    pub embed_size: usize,
    pub max_decode_len: usize,
    pub seed: u64,
    pub source_vocab: Vocab,
    pub target_vocab: Vocab,
}

impl CheckpointHeader {
    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            unit: self.unit,
            attention: self.attention,
            hidden_size: self.hidden_size,
            embed_size: self.embed_size,
            source_vocab_size: self.source_vocab.len(),
            target_vocab_size: self.target_vocab.len(),
            max_decode_len: self.max_decode_len,
        }
    }
}

/// A trained model together with the vocabularies it was trained on.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub model: Seq2Seq,
}

impl Checkpoint {
    pub fn new(model: Seq2Seq, seed: u64, source_vocab: Vocab, target_vocab: Vocab) -> Self {
        let c = model.config();
        let header = CheckpointHeader {
            unit: c.unit,
            attention: c.attention,
            hidden_size: c.hidden_size,
            embed_size: c.embed_size,
            max_decode_len: c.max_decode_len,
            seed,
            source_vocab,
            target_vocab,
        };
        Checkpoint { header, model }
    }

    pub fn source_vocab(&self) -> &Vocab {
        &self.header.source_vocab
    }

    pub fn target_vocab(&self) -> &Vocab {
        &self.header.target_vocab
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<(), CheckpointError> {
        let header = serde_json::to_vec(&self.header)?;
        w.write_all(MAGIC)?;
        w.write_all(&(header.len() as u32).to_le_bytes())?;
        w.write_all(&header)?;
        let params = self.model.params();
        w.write_all(&(params.len() as u32).to_le_bytes())?;
        for id in params.ids() {
            let name = params.name(id).as_bytes();
            let t = params.value(id);
            w.write_all(&(name.len() as u16).to_le_bytes())?;
            w.write_all(name)?;
            w.write_all(&(t.rows() as u32).to_le_bytes())?;
            w.write_all(&(t.cols() as u32).to_le_bytes())?;
            let mut buf = Vec::with_capacity(t.len() * 8);
            for v in t.data() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
            w.write_all(&buf)?;
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write_to(&mut out).expect("writing to a Vec cannot fail");
        out
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self, CheckpointError> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let header_len = read_u32(&mut r)? as usize;
        let mut header = vec![0u8; header_len];
        r.read_exact(&mut header)?;
        let header: CheckpointHeader = serde_json::from_slice(&header)?;

        let count = read_u32(&mut r)? as usize;
        let mut params = ParamStore::new();
        for _ in 0..count {
            let mut len = [0u8; 2];
            r.read_exact(&mut len)?;
            let mut name = vec![0u8; u16::from_le_bytes(len) as usize];
            r.read_exact(&mut name)?;
            let name = String::from_utf8(name).map_err(|e| CheckpointError::Malformed(e.to_string()))?;
            let rows = read_u32(&mut r)? as usize;
            let cols = read_u32(&mut r)? as usize;
            let mut raw = vec![0u8; rows * cols * 8];
            r.read_exact(&mut raw)?;
            let data = raw
                .chunks_exact(8)
                .map(|b| f64::from_le_bytes(b.try_into().expect("8-byte chunk")))
                .collect();
            let tensor = Tensor::from_vec(rows, cols, data).map_err(|e| CheckpointError::Malformed(e.to_string()))?;
            // Kinds only matter for initialization, which a loaded model never repeats.
            params
                .add(&name, ParamKind::Weight, tensor)
                .map_err(|e| CheckpointError::Malformed(e.to_string()))?;
        }
        let model = Seq2Seq::from_params(header.model_config(), params)?;
        Ok(Checkpoint { header, model })
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        Self::read_from(io::BufReader::new(fs::File::open(path)?))
    }
}

fn read_u32<R: Read>(r: &mut R) -> io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn checkpoint() -> Checkpoint {
        let sv = Vocab::new(["Mary", "runs"]);
        let tv = Vocab::new(["run", "(", ")", "mary"]);
        let cfg = ModelConfig::new(Unit::Lstm, AttentionKind::Multiplicative, sv.len(), tv.len()).with_sizes(5, 4);
        Checkpoint::new(Seq2Seq::new(cfg, 17).unwrap(), 17, sv, tv)
    }

    #[test]
    fn round_trip_preserves_everything() {
        let c = checkpoint();
        let bytes = c.to_bytes();
        let back = Checkpoint::read_from(bytes.as_slice()).unwrap();
        assert_eq!(back.header, c.header);
        for id in c.model.params().ids() {
            let name = c.model.params().name(id);
            let other = back.model.params().value(back.model.params().id(name).unwrap());
            assert_eq!(other, c.model.params().value(id));
        }
        assert_eq!(back.to_bytes(), bytes);
    }

    #[test]
    fn rejects_garbage() {
        assert!(matches!(Checkpoint::read_from(&b"NOTACKPTxxxx"[..]), Err(CheckpointError::BadMagic)));
        let bytes = checkpoint().to_bytes();
        assert!(Checkpoint::read_from(&bytes[..bytes.len() - 3]).is_err());
    }
}
