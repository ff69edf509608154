//! Binary model checkpoints.
//!
//! ```text
//! magic    8 bytes  "FORGECKP"
//! version  u32 LE
//! manifest u32 LE length + UTF-8 JSON {config, layers: [[sizes]...]}
//! blob     for each network: u64 LE count + count x f32 LE
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::model::{DenoiserModel, ModelConfig};
use super::nn::Mlp;

const MAGIC: &[u8; 8] = b"FORGECKP";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Manifest {
    config: ModelConfig,
    layers: Vec<Vec<usize>>,
}

pub fn checkpoint_bytes(model: &DenoiserModel) -> Vec<u8> {
    let manifest = Manifest {
        config: model.cfg.clone(),
        layers: model.parts().iter().map(|m| m.sizes().to_vec()).collect(),
    };
    let json = serde_json::to_vec(&manifest).expect("manifest serializes");
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for m in model.parts() {
        out.extend_from_slice(&(m.params.len() as u64).to_le_bytes());
        for &p in &m.params {
            out.extend_from_slice(&(p as f32).to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Checkpoint(format!("truncated at byte {}", self.pos)));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn model_from_bytes(bytes: &[u8]) -> Result<DenoiserModel> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(Error::Checkpoint("not a model checkpoint (bad magic)".into()));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint version {version}, expected {CHECKPOINT_VERSION}"
        )));
    }
    let len = r.u32()? as usize;
    let manifest: Manifest = serde_json::from_slice(r.take(len)?)
        .map_err(|e| Error::Checkpoint(format!("bad manifest: {e}")))?;
    let cfg = manifest.config;
    cfg.check()?;
    let expected = [cfg.encoder_sizes(), cfg.denoiser_sizes(), cfg.trajectory_sizes(), cfg.score_sizes()];
    if manifest.layers.len() != 4 || manifest.layers.iter().zip(&expected).any(|(a, b)| a != b) {
        return Err(Error::Checkpoint(format!(
            "layer manifest {:?} does not match config {:?}",
            manifest.layers, expected
        )));
    }
    let mut nets = Vec::with_capacity(4);
    for sizes in &expected {
        let n = r.u64()? as usize;
        if n != Mlp::param_count(sizes) {
            return Err(Error::Checkpoint(format!(
                "network {sizes:?} stores {n} weights, expected {}",
                Mlp::param_count(sizes)
            )));
        }
        let raw = r.take(n * 4)?;
        let params = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        nets.push(Mlp::from_params(sizes, params).unwrap());
    }
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    let mut it = nets.into_iter();
    Ok(DenoiserModel {
        cfg,
        encoder: it.next().unwrap(),
        denoiser: it.next().unwrap(),
        trajectory: it.next().unwrap(),
        score: it.next().unwrap(),
    })
}

pub fn save_checkpoint(model: &DenoiserModel, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, checkpoint_bytes(model))?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<DenoiserModel> {
    let path = path.as_ref();
    let bytes = fs::read(path)?;
    model_from_bytes(&bytes).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))
}
