//! Binary training checkpoints. Everything needed to resume a run
//! bit-exactly: both networks, both optimizer states, the curriculum
//! position, and the master RNG stream position. Parameters are stored as
//! little-endian f32 (training quantizes to the f32 grid after every
//! optimizer step, so the round trip is lossless); a sha256 digest of the
//! payload trails the file.

use crate::error::{Error, Result};
use crate::nn::{AdamState, Mlp, MlpGrads};
use sha2::{Digest, Sha256};
use std::io::{Read, Write};
use std::path::Path;

pub const CHECKPOINT_MAGIC: [u8; 8] = *b"XINGCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    /// Curriculum stage index, 0-based.
    pub stage: u32,
    /// Next episode index to run (count of episodes already finished).
    pub episode: u64,
    pub update_index: u64,
    pub rng_seed: u64,
    /// ChaCha word position of the master training stream.
    pub rng_word_pos: u128,
    pub actor: Mlp,
    pub critic: Mlp,
    pub adam_actor: AdamState,
    pub adam_critic: AdamState,
}

struct PayloadWriter {
    buf: Vec<u8>,
}

impl PayloadWriter {
    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn u128(&mut self, v: u128) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn f32_slice(&mut self, xs: &[f64]) {
        for x in xs {
            self.buf.extend_from_slice(&(*x as f32).to_le_bytes());
        }
    }
    fn grads(&mut self, g: &MlpGrads) {
        self.f32_slice(&g.w1);
        self.f32_slice(&g.b1);
        self.f32_slice(&g.w2);
        self.f32_slice(&g.b2);
    }
    fn mlp(&mut self, m: &Mlp) {
        self.u32(m.in_dim as u32);
        self.u32(m.hidden as u32);
        self.u32(m.out_dim as u32);
        self.f32_slice(&m.w1);
        self.f32_slice(&m.b1);
        self.f32_slice(&m.w2);
        self.f32_slice(&m.b2);
    }
    fn adam(&mut self, a: &AdamState) {
        self.u64(a.t);
        self.grads(&a.m);
        self.grads(&a.v);
    }
}

struct PayloadReader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> PayloadReader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::CheckpointCorrupt("truncated payload".into()));
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
    fn u128(&mut self) -> Result<u128> {
        Ok(u128::from_le_bytes(self.take(16)?.try_into().unwrap()))
    }
    fn f32_vec(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(n * 4)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect())
    }
    fn mlp(&mut self) -> Result<Mlp> {
        let in_dim = self.u32()? as usize;
        let hidden = self.u32()? as usize;
        let out_dim = self.u32()? as usize;
        if in_dim == 0 || hidden == 0 || out_dim == 0 || in_dim * hidden > 1 << 24 {
            return Err(Error::CheckpointCorrupt("implausible network shape".into()));
        }
        Ok(Mlp {
            in_dim,
            hidden,
            out_dim,
            w1: self.f32_vec(hidden * in_dim)?,
            b1: self.f32_vec(hidden)?,
            w2: self.f32_vec(out_dim * hidden)?,
            b2: self.f32_vec(out_dim)?,
        })
    }
    fn grads_like(&mut self, m: &Mlp) -> Result<MlpGrads> {
        Ok(MlpGrads {
            w1: self.f32_vec(m.w1.len())?,
            b1: self.f32_vec(m.b1.len())?,
            w2: self.f32_vec(m.w2.len())?,
            b2: self.f32_vec(m.b2.len())?,
        })
    }
    fn adam_like(&mut self, m: &Mlp) -> Result<AdamState> {
        Ok(AdamState {
            t: self.u64()?,
            m: self.grads_like(m)?,
            v: self.grads_like(m)?,
        })
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = PayloadWriter { buf: Vec::new() };
        w.buf.extend_from_slice(&CHECKPOINT_MAGIC);
        w.u32(CHECKPOINT_VERSION);
        w.u32(self.stage);
        w.u64(self.episode);
        w.u64(self.update_index);
        w.u64(self.rng_seed);
        w.u128(self.rng_word_pos);
        w.mlp(&self.actor);
        w.mlp(&self.critic);
        w.adam(&self.adam_actor);
        w.adam(&self.adam_critic);
        let digest = Sha256::digest(&w.buf);
        w.buf.extend_from_slice(&digest);
        w.buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Checkpoint> {
        if bytes.len() < CHECKPOINT_MAGIC.len() + 4 + 32 {
            return Err(Error::CheckpointCorrupt("file too short".into()));
        }
        let (payload, trailer) = bytes.split_at(bytes.len() - 32);
        let digest = Sha256::digest(payload);
        if digest.as_slice() != trailer {
            return Err(Error::CheckpointCorrupt("checksum mismatch".into()));
        }
        if payload[..8] != CHECKPOINT_MAGIC {
            return Err(Error::CheckpointCorrupt("bad magic".into()));
        }
        let mut r = PayloadReader { buf: payload, pos: 8 };
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::CheckpointVersion {
                found: version,
                expected: CHECKPOINT_VERSION,
            });
        }
        let stage = r.u32()?;
        let episode = r.u64()?;
        let update_index = r.u64()?;
        let rng_seed = r.u64()?;
        let rng_word_pos = r.u128()?;
        let actor = r.mlp()?;
        let critic = r.mlp()?;
        let adam_actor = r.adam_like(&actor)?;
        let adam_critic = r.adam_like(&critic)?;
        if r.pos != payload.len() {
            return Err(Error::CheckpointCorrupt("trailing bytes in payload".into()));
        }
        Ok(Checkpoint {
            stage,
            episode,
            update_index,
            rng_seed,
            rng_word_pos,
            actor,
            critic,
            adam_actor,
            adam_critic,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        Checkpoint::from_bytes(&bytes)
    }
}

/// Hex sha256 over a network's f32 parameter bytes; two networks share a
/// digest iff their deployed weights are identical.
pub fn policy_digest(mlp: &Mlp) -> String {
    let mut w = PayloadWriter { buf: Vec::new() };
    w.mlp(mlp);
    let digest = Sha256::digest(&w.buf);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}
