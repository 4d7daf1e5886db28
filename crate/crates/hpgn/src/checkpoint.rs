//! Versioned binary checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic    8 bytes  "HPGNCKPT"
//! version  u32      currently 1; any other value is refused
//! hash     u64      FNV-1a of the embedded config text
//! config   u32 len + canonical key=value text (UTF-8)
//! step     u64
//! rng      32-byte seed, u64 stream, u128 word position
//! adam_t   u64
//! params   u32 count, then per parameter:
//!          u32 name len, name bytes, u32 ndim, u64 dims…, f32 data…
//! moments  u8 flag; when 1, first-moment then second-moment f32 runs,
//!          one per parameter in order, shapes implied by the parameters
//! ```
//!
//! The embedded config makes a checkpoint self-contained for inference; the
//! hash field doubles as an integrity check on it. Parsing consumes the
//! whole buffer — trailing bytes mean corruption and are an error.

use std::path::Path;

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::TrainConfig;
use crate::error::{Error, Result};
use crate::tensor::{Adam, ParamStore, Tensor};

const MAGIC: &[u8; 8] = b"HPGNCKPT";
const VERSION: u32 = 1;

#[derive(Debug)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub step: u64,
    pub rng_seed: [u8; 32],
    pub rng_stream: u64,
    pub rng_word_pos: u128,
    pub adam_t: u64,
    pub params: Vec<(String, Tensor<f32>)>,
    pub m: Vec<Vec<f32>>,
    pub v: Vec<Vec<f32>>,
}

impl Checkpoint {
    /// Snapshot the run state. Call between steps, never mid-step.
    pub fn capture(
        config: &TrainConfig,
        step: u64,
        rng: &ChaCha8Rng,
        adam: &Adam<f32>,
        store: &ParamStore<f32>,
    ) -> Self {
        let (m, v) = adam.moments();
        Checkpoint {
            config: *config,
            step,
            rng_seed: rng.get_seed(),
            rng_stream: rng.get_stream(),
            rng_word_pos: rng.get_word_pos(),
            adam_t: adam.step_count(),
            params: store.iter().map(|(n, t)| (n.to_string(), t.clone())).collect(),
            m: m.to_vec(),
            v: v.to_vec(),
        }
    }

    /// Rebuild the parameter store in the recorded registration order.
    pub fn restore_store(&self) -> Result<ParamStore<f32>> {
        let mut store = ParamStore::new();
        for (name, tensor) in &self.params {
            store.register(name, tensor.clone())?;
        }
        Ok(store)
    }

    pub fn restore_rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::from_seed(self.rng_seed);
        rng.set_stream(self.rng_stream);
        rng.set_word_pos(self.rng_word_pos);
        rng
    }

    pub fn restore_adam(&self) -> Adam<f32> {
        let mut adam =
            Adam::new(self.config.lr, self.config.beta1, self.config.beta2, self.config.eps);
        adam.restore(self.adam_t, self.m.clone(), self.v.clone());
        adam
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let config_text = self.config.to_text();
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&self.config.hash().to_le_bytes());
        let text_len = u32::try_from(config_text.len())
            .map_err(|_| Error::Checkpoint("config text too long".into()))?;
        out.extend_from_slice(&text_len.to_le_bytes());
        out.extend_from_slice(config_text.as_bytes());
        out.extend_from_slice(&self.step.to_le_bytes());
        out.extend_from_slice(&self.rng_seed);
        out.extend_from_slice(&self.rng_stream.to_le_bytes());
        out.extend_from_slice(&self.rng_word_pos.to_le_bytes());
        out.extend_from_slice(&self.adam_t.to_le_bytes());

        let count = u32::try_from(self.params.len())
            .map_err(|_| Error::Checkpoint("too many parameters".into()))?;
        out.extend_from_slice(&count.to_le_bytes());
        for (name, tensor) in &self.params {
            let name_len = u32::try_from(name.len())
                .map_err(|_| Error::Checkpoint(format!("name {name:?} too long")))?;
            out.extend_from_slice(&name_len.to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            let ndim = u32::try_from(tensor.shape().len())
                .map_err(|_| Error::Checkpoint("rank too large".into()))?;
            out.extend_from_slice(&ndim.to_le_bytes());
            for &d in tensor.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &value in tensor.data() {
                out.extend_from_slice(&value.to_le_bytes());
            }
        }

        let have_moments = !self.m.is_empty();
        out.push(u8::from(have_moments));
        if have_moments {
            if self.m.len() != self.params.len() || self.v.len() != self.params.len() {
                return Err(Error::Checkpoint(format!(
                    "moment count {}/{} does not match {} parameters",
                    self.m.len(),
                    self.v.len(),
                    self.params.len()
                )));
            }
            for (moments, (name, tensor)) in
                self.m.iter().chain(self.v.iter()).zip(self.params.iter().cycle())
            {
                if moments.len() != tensor.numel() {
                    return Err(Error::Checkpoint(format!(
                        "moment buffer for {name:?} has {} values, parameter has {}",
                        moments.len(),
                        tensor.numel()
                    )));
                }
                for &value in moments {
                    out.extend_from_slice(&value.to_le_bytes());
                }
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let magic = r.take(8)?;
        if magic != MAGIC {
            return Err(Error::Checkpoint("not a checkpoint file (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!(
                "checkpoint version {version} is not supported (this build reads {VERSION})"
            )));
        }
        let stored_hash = r.u64()?;
        let text_len = r.u32()? as usize;
        let text = std::str::from_utf8(r.take(text_len)?)
            .map_err(|_| Error::Checkpoint("config text is not UTF-8".into()))?
            .to_string();
        let config = TrainConfig::from_text(&text)?;
        if config.hash() != stored_hash {
            return Err(Error::Checkpoint(
                "config hash mismatch: checkpoint is corrupt or was edited".into(),
            ));
        }
        let step = r.u64()?;
        let mut rng_seed = [0u8; 32];
        rng_seed.copy_from_slice(r.take(32)?);
        let rng_stream = r.u64()?;
        let rng_word_pos = r.u128()?;
        let adam_t = r.u64()?;

        let count = r.u32()? as usize;
        let mut params = Vec::with_capacity(count);
        for _ in 0..count {
            let name_len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|_| Error::Checkpoint("parameter name is not UTF-8".into()))?
                .to_string();
            let ndim = r.u32()? as usize;
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                shape.push(r.u64()? as usize);
            }
            let numel: usize = shape.iter().product();
            let data = r.f32s(numel)?;
            let tensor = Tensor::new(shape, data)
                .map_err(|e| Error::Checkpoint(format!("parameter {name:?}: {e}")))?;
            params.push((name, tensor));
        }

        let have_moments = r.take(1)?[0];
        let (m, v) = match have_moments {
            0 => (Vec::new(), Vec::new()),
            1 => {
                let mut m = Vec::with_capacity(count);
                let mut v = Vec::with_capacity(count);
                for (_, tensor) in &params {
                    m.push(r.f32s(tensor.numel())?);
                }
                for (_, tensor) in &params {
                    v.push(r.f32s(tensor.numel())?);
                }
                (m, v)
            }
            other => {
                return Err(Error::Checkpoint(format!("moment flag must be 0 or 1, got {other}")))
            }
        };
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint(format!(
                "{} trailing bytes after checkpoint data",
                bytes.len() - r.pos
            )));
        }
        Ok(Checkpoint {
            config,
            step,
            rng_seed,
            rng_stream,
            rng_word_pos,
            adam_t,
            params,
            m,
            v,
        })
    }

    /// Atomic write: temp file in the target directory, then rename.
    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
        let file_name = path
            .file_name()
            .and_then(|n| n.to_str())
            .ok_or_else(|| Error::Checkpoint(format!("bad checkpoint path {}", path.display())))?;
        let tmp = match dir {
            Some(d) => d.join(format!(".{file_name}.tmp-{}", std::process::id())),
            None => Path::new(&format!(".{file_name}.tmp-{}", std::process::id())).to_path_buf(),
        };
        std::fs::write(&tmp, &bytes)?;
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        Self::from_bytes(&bytes)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Checkpoint(format!(
                "truncated: wanted {n} bytes at offset {}, file has {}",
                self.pos,
                self.bytes.len()
            )));
        }
        let slice = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("length checked")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("length checked")))
    }

    fn u128(&mut self) -> Result<u128> {
        Ok(u128::from_le_bytes(self.take(16)?.try_into().expect("length checked")))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let raw = self.take(n * 4)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("chunk is 4 bytes")))
            .collect())
    }
}
