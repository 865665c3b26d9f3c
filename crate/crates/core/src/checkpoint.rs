//! Binary encoder checkpoints.
//!
//! Layout (all integers and reals little-endian):
//!
//! ```text
//! "WCSE"            4 bytes magic
//! version           u32 (= 1)
//! input, hidden, output dims   3 × u32
//! dropout rate      f64
//! rng seed          u64
//! w1, b1, w2, b2    f64 arrays, row-major
//! group count       u32 (0 = no evaluation whitening)
//! group size        u32
//! per group:        momentum f64, update count u64, mean (g × f64), covariance (g·g × f64)
//! ```

use std::fs;
use std::path::Path;

use crate::encoder::EncoderState;
use crate::error::{Error, Result};
use crate::tensor::Matrix;
use crate::whitening::WhiteningStats;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"WCSE";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Momentum statistics for whitening embeddings at evaluation time under the identity plan.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalWhitening {
    pub group_size: usize,
    pub stats: Vec<WhiteningStats>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub encoder: EncoderState,
    pub eval_whitening: Option<EvalWhitening>,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let e = &self.encoder;
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        for dim in [e.input_dim(), e.hidden_dim(), e.output_dim()] {
            out.extend_from_slice(&(dim as u32).to_le_bytes());
        }
        out.extend_from_slice(&e.dropout_rate.to_le_bytes());
        out.extend_from_slice(&e.rng_seed.to_le_bytes());
        let mut put = |values: &[f64]| {
            for v in values {
                out.extend_from_slice(&v.to_le_bytes());
            }
        };
        put(e.w1.as_slice());
        put(&e.b1);
        put(e.w2.as_slice());
        put(&e.b2);
        match &self.eval_whitening {
            None => {
                out.extend_from_slice(&0u32.to_le_bytes());
                out.extend_from_slice(&0u32.to_le_bytes());
            }
            Some(ew) => {
                out.extend_from_slice(&(ew.stats.len() as u32).to_le_bytes());
                out.extend_from_slice(&(ew.group_size as u32).to_le_bytes());
                for s in &ew.stats {
                    out.extend_from_slice(&s.momentum().to_le_bytes());
                    out.extend_from_slice(&(s.update_count() as u64).to_le_bytes());
                    for v in s.mean().iter().chain(s.cov().as_slice()) {
                        out.extend_from_slice(&v.to_le_bytes());
                    }
                }
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != CHECKPOINT_MAGIC {
            return Err(Error::Format("not a checkpoint (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::IncompatibleCheckpoint {
                found: version,
                expected: CHECKPOINT_VERSION,
            });
        }
        let input = r.u32()? as usize;
        let hidden = r.u32()? as usize;
        let output = r.u32()? as usize;
        let dropout = r.f64()?;
        let seed = r.u64()?;
        let w1 = Matrix::new(hidden, input, r.f64s(hidden * input)?)?;
        let b1 = r.f64s(hidden)?;
        let w2 = Matrix::new(output, hidden, r.f64s(output * hidden)?)?;
        let b2 = r.f64s(output)?;
        let encoder = EncoderState::from_parts(w1, b1, w2, b2, dropout, seed)?;

        let groups = r.u32()? as usize;
        let group_size = r.u32()? as usize;
        let eval_whitening = if groups == 0 {
            None
        } else {
            if group_size * groups != output {
                return Err(Error::Format(format!(
                    "{groups} whitening groups of size {group_size} do not cover {output} channels"
                )));
            }
            let mut stats = Vec::with_capacity(groups);
            for _ in 0..groups {
                let momentum = r.f64()?;
                let count = r.u64()? as usize;
                let mean = r.f64s(group_size)?;
                let cov = Matrix::new(group_size, group_size, r.f64s(group_size * group_size)?)?;
                stats.push(WhiteningStats::from_parts(mean, cov, momentum, count)?);
            }
            Some(EvalWhitening { group_size, stats })
        };
        if r.pos != bytes.len() {
            return Err(Error::Format(format!(
                "{} trailing bytes after checkpoint",
                bytes.len() - r.pos
            )));
        }
        Ok(Self {
            encoder,
            eval_whitening,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Format("checkpoint is truncated".into()))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(n.checked_mul(8).ok_or_else(|| Error::Format("size overflow".into()))?)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}
