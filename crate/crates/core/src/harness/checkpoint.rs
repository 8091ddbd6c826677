//! Checkpoint file: a documented little-endian flat layout for resuming
//! runs (decay legs restart from the 75% point of a constant-LR run).
//!
//! ```text
//! magic   4 bytes  "NLCK"
//! version u32      1
//! tokens  u64      tokens seen
//! step    u64      optimizer steps taken
//! count   u32      number of tensor records
//! record: name_len u32 | name utf-8 | role u8 (0 param, 1 momentum)
//!         rows u32 | cols u32 | rows*cols f32 values
//! ```
//!
//! Everything little-endian; tensor data is stored in 32-bit floats.

use crate::linalg::Matrix2D;
use std::io::{Read, Write};
use std::path::Path;

use super::HarnessError;

const MAGIC: &[u8; 4] = b"NLCK";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct TensorRecord {
    pub name: String,
    /// 0 = parameter, 1 = momentum buffer.
    pub role: u8,
    pub matrix: Matrix2D,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub tokens: u64,
    pub step: u64,
    pub tensors: Vec<TensorRecord>,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<(), HarnessError> {
        let mut buf: Vec<u8> = Vec::new();
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&VERSION.to_le_bytes());
        buf.extend_from_slice(&self.tokens.to_le_bytes());
        buf.extend_from_slice(&self.step.to_le_bytes());
        buf.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for t in &self.tensors {
            let name = t.name.as_bytes();
            buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
            buf.extend_from_slice(name);
            buf.push(t.role);
            buf.extend_from_slice(&(t.matrix.rows() as u32).to_le_bytes());
            buf.extend_from_slice(&(t.matrix.cols() as u32).to_le_bytes());
            for &v in t.matrix.data() {
                buf.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        let mut f = std::fs::File::create(path)
            .map_err(|e| HarnessError::Io(format!("{}: {e}", path.display())))?;
        f.write_all(&buf)
            .map_err(|e| HarnessError::Io(format!("{}: {e}", path.display())))?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Checkpoint, HarnessError> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| HarnessError::Io(format!("{}: {e}", path.display())))?;
        let bad = |what: &str| HarnessError::Io(format!("{}: bad checkpoint ({what})", path.display()));
        let mut at = 0usize;
        let mut take = |n: usize| -> Result<&[u8], HarnessError> {
            if at + n > bytes.len() {
                return Err(bad("truncated"));
            }
            let s = &bytes[at..at + n];
            at += n;
            Ok(s)
        };
        if take(4)? != MAGIC {
            return Err(bad("magic"));
        }
        let version = u32::from_le_bytes(take(4)?.try_into().unwrap());
        if version != VERSION {
            return Err(bad("version"));
        }
        let tokens = u64::from_le_bytes(take(8)?.try_into().unwrap());
        let step = u64::from_le_bytes(take(8)?.try_into().unwrap());
        let count = u32::from_le_bytes(take(4)?.try_into().unwrap());
        let mut tensors = Vec::with_capacity(count as usize);
        for _ in 0..count {
            let name_len = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
            let name = String::from_utf8(take(name_len)?.to_vec()).map_err(|_| bad("name"))?;
            let role = take(1)?[0];
            let rows = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
            let cols = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
            let raw = take(rows * cols * 4)?;
            let data: Vec<f64> = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
                .collect();
            tensors.push(TensorRecord {
                name,
                role,
                matrix: Matrix2D::from_vec(rows, cols, data),
            });
        }
        Ok(Checkpoint {
            tokens,
            step,
            tensors,
        })
    }
}
