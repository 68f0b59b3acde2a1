//! Seeds and the deterministic byte stream derived from them.
//!
//! Every randomized operation in the crate takes a 32-byte [`Seed`]. Where
//! output must be reproducible outside this crate (key generation, simulated
//! ROM contents) the bytes come from [`SeedStream`], a SHA-256 counter-mode
//! generator: block `i` of the stream labelled `label` is
//! `SHA-256(seed || label || be64(i))`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// A 32-byte seed, written as 64 hex digits.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct Seed(pub [u8; 32]);

#[derive(Debug, Error, PartialEq)]
pub enum SeedError {
    #[error("seed must be 64 hex digits, got {0}")]
    Length(usize),
    #[error("seed is not valid hex: {0}")]
    Hex(#[from] hex::FromHexError),
}

impl Seed {
    pub const fn new(bytes: [u8; 32]) -> Self {
        Seed(bytes)
    }

    /// Derives an independent child seed for a named purpose.
    pub fn derive(&self, label: &str, index: u64) -> Seed {
        let mut h = Sha256::new();
        h.update(self.0);
        h.update(b"/derive/");
        h.update(label.as_bytes());
        h.update(index.to_be_bytes());
        Seed(h.finalize().into())
    }

    pub fn stream(&self, label: &str) -> SeedStream {
        SeedStream::new(*self, label)
    }

    pub fn as_bytes(&self) -> &[u8; 32] {
        &self.0
    }
}

impl fmt::Debug for Seed {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Seed({})", hex::encode(self.0))
    }
}

impl fmt::Display for Seed {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&hex::encode(self.0))
    }
}

impl FromStr for Seed {
    type Err = SeedError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        let s = s.strip_prefix("0x").unwrap_or(s);
        if s.len() != 64 {
            return Err(SeedError::Length(s.len()));
        }
        let mut out = [0u8; 32];
        hex::decode_to_slice(s, &mut out)?;
        Ok(Seed(out))
    }
}

impl Serialize for Seed {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Seed {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// SHA-256 counter-mode byte stream.
#[derive(Clone)]
pub struct SeedStream {
    seed: Seed,
    label: Vec<u8>,
    counter: u64,
    block: [u8; 32],
    used: usize,
}

impl SeedStream {
    pub fn new(seed: Seed, label: &str) -> Self {
        SeedStream {
            seed,
            label: label.as_bytes().to_vec(),
            counter: 0,
            block: [0; 32],
            used: 32,
        }
    }

    fn refill(&mut self) {
        let mut h = Sha256::new();
        h.update(self.seed.0);
        h.update(&self.label);
        h.update(self.counter.to_be_bytes());
        self.block = h.finalize().into();
        self.counter += 1;
        self.used = 0;
    }

    pub fn fill(&mut self, out: &mut [u8]) {
        for b in out.iter_mut() {
            if self.used == 32 {
                self.refill();
            }
            *b = self.block[self.used];
            self.used += 1;
        }
    }

    pub fn bytes(&mut self, len: usize) -> Vec<u8> {
        let mut v = vec![0; len];
        self.fill(&mut v);
        v
    }
}
