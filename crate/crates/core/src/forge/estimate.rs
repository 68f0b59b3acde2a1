use num_bigint::BigUint;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::ForgeError;
use crate::modmath::to_fixed_be;
use crate::seed::Seed;
use crate::sigparser::{classify_plaintext, ParserConfig};

pub const MIN_SAMPLES: u64 = 100_000;

/// Samples per deterministic chunk; chunk `i` draws from stream `i`.
const CHUNK: u64 = 1 << 16;

const Z95: f64 = 1.959_963_984_540_054;

/// A binomial proportion with its 95% Wilson score interval.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub hits: u64,
    pub samples: u64,
    pub p: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

impl Estimate {
    pub fn from_counts(hits: u64, samples: u64) -> Self {
        let n = samples as f64;
        let p = hits as f64 / n;
        let z2 = Z95 * Z95;
        let denom = 1.0 + z2 / n;
        let center = (p + z2 / (2.0 * n)) / denom;
        let half = Z95 / denom * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt();
        Estimate {
            hits,
            samples,
            p,
            ci_low: if hits == 0 { 0.0 } else { (center - half).max(0.0) },
            ci_high: if hits == samples { 1.0 } else { (center + half).min(1.0) },
        }
    }

    pub fn contains(&self, p: f64) -> bool {
        (self.ci_low..=self.ci_high).contains(&p)
    }

    /// `log2` of the point estimate; `-inf` with no hits.
    pub fn log2(&self) -> f64 {
        self.p.log2()
    }
}

fn check_samples(samples: u64) -> Result<(), ForgeError> {
    if samples < MIN_SAMPLES {
        return Err(ForgeError::TooFewSamples {
            min: MIN_SAMPLES,
            got: samples,
        });
    }
    Ok(())
}

fn chunked(samples: u64, seed: Seed, per_chunk: impl Fn(&mut ChaCha8Rng, u64) -> u64 + Sync) -> u64 {
    let chunks = samples.div_ceil(CHUNK);
    (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = ChaCha8Rng::from_seed(seed.0);
            rng.set_stream(c);
            let count = CHUNK.min(samples - c * CHUNK);
            per_chunk(&mut rng, count)
        })
        .sum()
}

/// Probability that a uniformly random `block_length`-byte block passes
/// [`classify_plaintext`]. Only blocks whose first two bytes pass the prefix
/// check have their remaining bytes drawn.
pub fn estimate_hit_probability(
    block_length: usize,
    config: &ParserConfig,
    samples: u64,
    seed: Seed,
) -> Result<Estimate, ForgeError> {
    check_samples(samples)?;
    let hits = chunked(samples, seed, |rng, count| {
        let mut block = vec![0u8; block_length];
        let mut hits = 0;
        for _ in 0..count {
            let head = rng.next_u32();
            let (b0, b1) = (head as u8, (head >> 8) as u8);
            if !config.prefix_admits(b0, b1) {
                continue;
            }
            block[0] = b0;
            block[1] = b1;
            rng.fill_bytes(&mut block[2..]);
            hits += classify_plaintext(&block, config).is_some() as u64;
        }
        hits
    });
    Ok(Estimate::from_counts(hits, samples))
}

/// As [`estimate_hit_probability`], but over integers uniform in `[0, n)`:
/// the distribution the search actually samples.
pub fn estimate_hit_probability_below(
    modulus: &BigUint,
    config: &ParserConfig,
    samples: u64,
    seed: Seed,
) -> Result<Estimate, ForgeError> {
    check_samples(samples)?;
    let block_length = (modulus.bits() as usize).div_ceil(8);
    let n_bytes = to_fixed_be(modulus, block_length)?;
    let (n0, n1) = (n_bytes[0], n_bytes[1]);
    let hits = chunked(samples, seed, |rng, count| {
        let mut block = vec![0u8; block_length];
        let mut hits = 0;
        let mut done = 0;
        while done < count {
            let head = rng.next_u32();
            let (b0, b1) = (head as u8, (head >> 8) as u8);
            // Reject draws at or above n; only a prefix tie needs the full value.
            match (b0, b1).cmp(&(n0, n1)) {
                std::cmp::Ordering::Greater => continue,
                std::cmp::Ordering::Equal => {
                    block[0] = b0;
                    block[1] = b1;
                    rng.fill_bytes(&mut block[2..]);
                    if block[..] >= n_bytes[..] {
                        continue;
                    }
                    done += 1;
                    if config.prefix_admits(b0, b1) {
                        hits += classify_plaintext(&block, config).is_some() as u64;
                    }
                }
                std::cmp::Ordering::Less => {
                    done += 1;
                    if config.prefix_admits(b0, b1) {
                        block[0] = b0;
                        block[1] = b1;
                        rng.fill_bytes(&mut block[2..]);
                        hits += classify_plaintext(&block, config).is_some() as u64;
                    }
                }
            }
        }
        hits
    });
    Ok(Estimate::from_counts(hits, samples))
}

/// Estimates an arbitrary predicate over uniform full blocks.
pub fn estimate_predicate(
    block_length: usize,
    samples: u64,
    seed: Seed,
    predicate: impl Fn(&[u8]) -> bool + Sync,
) -> Result<Estimate, ForgeError> {
    check_samples(samples)?;
    let hits = chunked(samples, seed, |rng, count| {
        let mut block = vec![0u8; block_length];
        let mut hits = 0;
        for _ in 0..count {
            rng.fill_bytes(&mut block);
            hits += predicate(&block) as u64;
        }
        hits
    });
    Ok(Estimate::from_counts(hits, samples))
}
