//! Binary checkpoint format.
//!
//! ```text
//! "UDR1" | version u32 | V u32 | d u32
//! query embeddings (V×d) | query projection (d×d)
//! demo embeddings (V×d)  | demo projection (d×d)      row-major f32 LE
//! V × (term length u32 | UTF-8 bytes)
//! ```

use std::fs;
use std::path::Path;

use super::{BiEncoderParams, TowerParams, Vocabulary};
use crate::binio::{Reader, Writer};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"UDR1";
pub const VERSION: u32 = 1;

impl BiEncoderParams {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.bytes(MAGIC);
        w.u32(VERSION);
        w.u32(self.vocab.len() as u32);
        w.u32(self.dim as u32);
        for tower in [&self.query_tower, &self.demo_tower] {
            w.f32s(&tower.embeddings);
            w.f32s(&tower.projection);
        }
        for term in self.vocab.terms() {
            w.string(term);
        }
        w.finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes, "checkpoint");
        r.magic(MAGIC)?;
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Format(format!(
                "unsupported checkpoint version {version}"
            )));
        }
        let v = r.u32()? as usize;
        let d = r.u32()? as usize;
        if d == 0 || v == 0 {
            return Err(Error::Format("checkpoint has an empty shape".to_string()));
        }
        let mut towers = Vec::with_capacity(2);
        for _ in 0..2 {
            let embeddings = r.f32s(v * d)?;
            let projection = r.f32s(d * d)?;
            towers.push(TowerParams {
                embeddings,
                projection,
            });
        }
        let mut terms = Vec::with_capacity(v);
        for _ in 0..v {
            terms.push(r.string()?);
        }
        r.end()?;
        let vocab = Vocabulary::from_terms(terms.iter().skip(1).cloned());
        if vocab.terms() != terms.as_slice() {
            return Err(Error::Format("checkpoint vocabulary is inconsistent".to_string()));
        }
        let demo_tower = towers.pop().expect("two towers");
        let query_tower = towers.pop().expect("two towers");
        Ok(Self {
            vocab,
            query_tower,
            demo_tower,
            dim: d,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingArtifact(path.to_path_buf()));
        }
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
