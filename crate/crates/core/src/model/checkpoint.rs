//! `I3CK` checkpoint archive.
//!
//! All integers and floats are little-endian.
//!
//! | field          | encoding                                              |
//! |----------------|-------------------------------------------------------|
//! | magic          | `b"I3CK"`                                             |
//! | version        | `u32` (currently 1)                                   |
//! | config         | `u64` byte length, then canonical `ModelConfig` JSON  |
//! | train state    | `u64` byte length (0 = absent), then JSON             |
//! | tensor count   | `u32`                                                 |
//! | each tensor    | `u32` name length, UTF-8 name, `u32` ndim, `ndim × u64` dims, `f32` payload |
//! | manifest hash  | 32-byte SHA-256 of every preceding byte               |
//!
//! Optimizer moments travel as ordinary tensors under the `optim.` prefix.

use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use super::config::ModelConfig;
use super::net::I3Net;
use crate::error::{Error, Result};
use crate::nnops::Parameters;
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"I3CK";
const VERSION: u32 = 1;
const HASH_LEN: usize = 32;
/// Names under this prefix are not model parameters.
pub const OPTIM_PREFIX: &str = "optim.";

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub train_state: Option<String>,
    pub tensors: Vec<(String, Tensor<f32>)>,
}

impl Checkpoint {
    pub fn from_model(net: &I3Net<f32>) -> Self {
        let mut tensors = Vec::new();
        net.visit("", &mut |name, t| tensors.push((name.to_string(), t.clone())));
        Checkpoint { config: net.config().clone(), train_state: None, tensors }
    }

    pub fn tensor(&self, name: &str) -> Option<&Tensor<f32>> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    /// Rebuilds the network, requiring every parameter by name and shape.
    pub fn to_model(&self) -> Result<I3Net<f32>> {
        let mut net = I3Net::zeros(&self.config)?;
        let mut problem = None;
        let mut expected = Vec::new();
        net.visit_mut("", &mut |name, t| {
            expected.push(name.to_string());
            if problem.is_some() {
                return;
            }
            match self.tensor(name) {
                None => problem = Some(format!("missing entry `{name}`")),
                Some(src) if src.shape() != t.shape() => {
                    problem = Some(format!("entry `{name}` has shape {:?}, expected {:?}", src.shape(), t.shape()))
                }
                Some(src) => *t = src.clone(),
            }
        });
        if let Some(p) = problem {
            return Err(Error::Checkpoint(p));
        }
        if let Some((extra, _)) =
            self.tensors.iter().find(|(n, _)| !n.starts_with(OPTIM_PREFIX) && !expected.contains(n))
        {
            return Err(Error::Checkpoint(format!("unexpected entry `{extra}`")));
        }
        Ok(net)
    }
}

pub fn encode_checkpoint(ck: &Checkpoint) -> Result<Vec<u8>> {
    let config = serde_json::to_vec(&ck.config).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let state = ck.train_state.as_deref().unwrap_or("").as_bytes();
    let payload: usize = ck.tensors.iter().map(|(n, t)| 8 + n.len() + 8 * t.shape().len() + 4 * t.len()).sum();
    let mut buf = Vec::with_capacity(64 + config.len() + state.len() + payload);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(config.len() as u64).to_le_bytes());
    buf.extend_from_slice(&config);
    buf.extend_from_slice(&(state.len() as u64).to_le_bytes());
    buf.extend_from_slice(state);
    let count = u32::try_from(ck.tensors.len()).map_err(|_| Error::Checkpoint("too many tensors".into()))?;
    buf.extend_from_slice(&count.to_le_bytes());
    for (name, t) in &ck.tensors {
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &d in t.shape() {
            buf.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in t.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let hash = Sha256::digest(&buf);
    buf.extend_from_slice(&hash);
    Ok(buf)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Checkpoint(format!("truncated while reading {what}")));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<usize> {
        let v = u64::from_le_bytes(self.take(8, what)?.try_into().unwrap());
        usize::try_from(v).map_err(|_| Error::Checkpoint(format!("{what} out of range")))
    }

    fn text(&mut self, len: usize, what: &str) -> Result<String> {
        String::from_utf8(self.take(len, what)?.to_vec())
            .map_err(|_| Error::Checkpoint(format!("{what} is not valid UTF-8")))
    }
}

/// Parses and verifies an archive; nothing is returned unless the hash
/// matches and every entry is well formed.
pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    if bytes.len() < MAGIC.len() || &bytes[..4] != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    if bytes.len() < 8 + HASH_LEN {
        return Err(Error::Checkpoint("truncated archive".into()));
    }
    let (body, hash) = bytes.split_at(bytes.len() - HASH_LEN);
    if Sha256::digest(body).as_slice() != hash {
        return Err(Error::Checkpoint("manifest hash mismatch (truncated or corrupt archive)".into()));
    }
    let mut r = Reader { buf: body, pos: 4 };
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let len = r.u64("config length")?;
    let config: ModelConfig = serde_json::from_str(&r.text(len, "config")?)
        .map_err(|e| Error::Checkpoint(format!("invalid config entry: {e}")))?;
    let len = r.u64("train state length")?;
    let train_state = if len == 0 { None } else { Some(r.text(len, "train state")?) };
    let count = r.u32("tensor count")? as usize;
    let mut tensors = Vec::with_capacity(count);
    for i in 0..count {
        let len = r.u32("tensor name length")? as usize;
        let name = r.text(len, &format!("name of tensor {i}"))?;
        let ndim = r.u32(&format!("rank of `{name}`"))? as usize;
        let mut dims = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            dims.push(r.u64(&format!("dims of `{name}`"))?);
        }
        let n = dims
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| Error::Checkpoint(format!("entry `{name}` is too large")))?;
        let raw = r.take(n, &format!("payload of `{name}`"))?;
        let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
        tensors.push((name, Tensor::from_vec(&dims, data)?));
    }
    if r.pos != body.len() {
        return Err(Error::Checkpoint(format!("{} trailing bytes before the hash", body.len() - r.pos)));
    }
    config.validate()?;
    Ok(Checkpoint { config, train_state, tensors })
}

/// Writes through a temporary sibling and renames, so a crash never leaves a
/// half-written archive under `path`.
pub fn save_checkpoint(ck: &Checkpoint, path: &Path) -> Result<()> {
    let bytes = encode_checkpoint(ck)?;
    let tmp = path.with_extension("partial");
    fs::write(&tmp, &bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn net() -> I3Net<f32> {
        let cfg = ModelConfig { channels: 8, n_blocks: 2, cvb_positions: vec![1], window: 8, ..Default::default() };
        I3Net::init(&cfg, &mut ChaCha8Rng::seed_from_u64(3)).unwrap()
    }

    #[test]
    fn round_trip_is_bitwise() {
        let mut ck = Checkpoint::from_model(&net());
        ck.train_state = Some("{\"step\":3}".into());
        ck.tensors.push(("optim.m.head.weight".into(), Tensor::full(&[2], 0.5)));
        let bytes = encode_checkpoint(&ck).unwrap();
        let back = decode_checkpoint(&bytes).unwrap();
        assert_eq!(back, ck);
        let model = back.to_model().unwrap();
        let mut a = Vec::new();
        net().visit("", &mut |_, t| a.extend(t.data().iter().map(|v| v.to_bits())));
        let mut b = Vec::new();
        model.visit("", &mut |_, t| b.extend(t.data().iter().map(|v| v.to_bits())));
        assert_eq!(a, b);
    }

    #[test]
    fn truncation_and_corruption_are_reported() {
        let bytes = encode_checkpoint(&Checkpoint::from_model(&net())).unwrap();
        let err = decode_checkpoint(&bytes[..bytes.len() - 10]).unwrap_err().to_string();
        assert!(err.contains("hash"), "{err}");
        let mut bad = bytes.clone();
        bad[100] ^= 1;
        assert!(decode_checkpoint(&bad).is_err());
        assert!(decode_checkpoint(b"XXXX").unwrap_err().to_string().contains("bad magic"));
    }

    #[test]
    fn missing_entry_is_named() {
        let mut ck = Checkpoint::from_model(&net());
        ck.tensors.retain(|(n, _)| n != "tail.bias");
        let err = ck.to_model().unwrap_err().to_string();
        assert!(err.contains("tail.bias"), "{err}");
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.i3ck");
        let ck = Checkpoint::from_model(&net());
        save_checkpoint(&ck, &path).unwrap();
        assert_eq!(load_checkpoint(&path).unwrap(), ck);
        assert!(!path.with_extension("partial").exists());
    }
}
