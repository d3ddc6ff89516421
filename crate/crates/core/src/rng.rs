//! Hierarchical random streams.
//!
//! A [`SeedPath`] is a master seed plus a path of integer indices. Each
//! distinct path hashes to an independent ChaCha20 stream, so work items
//! (audit trials, chains, posterior draws) get the same randomness no
//! matter which thread runs them or in which order.

use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub type Stream = ChaCha20Rng;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SeedPath {
    pub seed: u64,
    pub path: Vec<u64>,
}

impl SeedPath {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            path: Vec::new(),
        }
    }

    /// Derive the substream at `index` below this one.
    pub fn child(&self, index: u64) -> Self {
        let mut path = self.path.clone();
        path.push(index);
        Self {
            seed: self.seed,
            path,
        }
    }

    pub fn rng(&self) -> Stream {
        let mut hasher = Sha256::new();
        hasher.update(b"uqaudit-stream");
        hasher.update(self.seed.to_le_bytes());
        hasher.update((self.path.len() as u64).to_le_bytes());
        for idx in &self.path {
            hasher.update(idx.to_le_bytes());
        }
        let digest = hasher.finalize();
        let mut key = [0u8; 32];
        key.copy_from_slice(&digest[..32]);
        ChaCha20Rng::from_seed(key)
    }
}

impl fmt::Display for SeedPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.seed)?;
        for idx in &self.path {
            write!(f, "/{idx}")?;
        }
        Ok(())
    }
}
