//! Shared fixtures for the benchmarks.

use bootforge_core::modmath::generate_keypair;
use bootforge_core::{BigUint, RsaKeyPair, Seed};
use rand::RngCore;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha20Rng;

pub fn key(bits: usize) -> RsaKeyPair {
    generate_keypair(bits, Seed([0x42; 32]).derive("bench-key", bits as u64)).expect("keygen")
}

/// Deterministic random bytes.
pub fn bytes(len: usize, tag: u64) -> Vec<u8> {
    let mut rng = ChaCha20Rng::seed_from_u64(tag);
    let mut out = vec![0; len];
    rng.fill_bytes(&mut out);
    out
}

/// A random residue below `n`.
pub fn residue(n: &BigUint, tag: u64) -> BigUint {
    BigUint::from_bytes_be(&bytes(n.bits().div_ceil(8) as usize + 8, tag)) % n
}
