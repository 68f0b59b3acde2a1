//! Big-integer modular arithmetic and raw RSA.
//!
//! Values are [`num_bigint::BigUint`]. Exponentiation is plain left-to-right
//! square-and-multiply ([`mod_exp`]); [`Montgomery`] is the fast path used by
//! key generation and the signature search and is checked bit-for-bit
//! against it.

mod keyfile;
mod keygen;
pub(crate) mod montgomery;

pub use keyfile::{KeyFileError, KeyRegistry, KeySlot, RegistryError, SigType, Console};
pub use keygen::{generate_keypair, generate_keypair_with_exponent, is_probable_prime};
pub use montgomery::Montgomery;
pub use num_bigint::BigUint;

use num_traits::{One, Zero};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Smallest and largest supported modulus sizes, in bits.
pub const MIN_KEY_BITS: usize = 64;
pub const MAX_KEY_BITS: usize = 4096;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MathError {
    #[error("modulus must be greater than one")]
    ModulusTooSmall,
    #[error("value is not reduced modulo n")]
    NotReduced,
    #[error("unsupported key size of {0} bits (need a multiple of 8 in 64..=4096)")]
    KeySize(usize),
    #[error("unsupported public exponent {0}")]
    Exponent(u64),
    #[error("key has no private exponent")]
    MissingPrivateExponent,
    #[error("prime search exhausted after {0} seeds")]
    PrimeSearchExhausted(u32),
    #[error("value needs more than {0} bytes")]
    Overflow(usize),
}

/// An RSA public key `(n, e)`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PublicKey {
    #[serde(with = "hex_biguint")]
    pub n: BigUint,
    #[serde(with = "hex_biguint")]
    pub e: BigUint,
}

impl PublicKey {
    pub fn new(n: BigUint, e: BigUint) -> Self {
        PublicKey { n, e }
    }

    pub fn bit_length(&self) -> usize {
        self.n.bits() as usize
    }

    /// Byte length of a signature block under this key.
    pub fn block_length(&self) -> usize {
        self.bit_length().div_ceil(8)
    }
}

/// An RSA key pair. `d` is absent for keys loaded from public key files.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RsaKeyPair {
    pub public: PublicKey,
    pub d: Option<BigUint>,
    pub bit_length: usize,
}

impl RsaKeyPair {
    pub fn n(&self) -> &BigUint {
        &self.public.n
    }

    pub fn e(&self) -> &BigUint {
        &self.public.e
    }

    pub fn block_length(&self) -> usize {
        self.bit_length / 8
    }

    pub fn private_exponent(&self) -> Result<&BigUint, MathError> {
        self.d.as_ref().ok_or(MathError::MissingPrivateExponent)
    }
}

/// `base^exp mod modulus` by left-to-right square-and-multiply.
pub fn mod_exp(base: &BigUint, exp: &BigUint, modulus: &BigUint) -> Result<BigUint, MathError> {
    if *modulus <= BigUint::one() {
        return Err(MathError::ModulusTooSmall);
    }
    let base = base % modulus;
    let mut acc = BigUint::one();
    for i in (0..exp.bits()).rev() {
        acc = &acc * &acc % modulus;
        if exp.bit(i) {
            acc = &acc * &base % modulus;
        }
    }
    Ok(acc)
}

/// `m^d mod n`.
pub fn raw_sign(m: &BigUint, key: &RsaKeyPair) -> Result<BigUint, MathError> {
    if m >= key.n() {
        return Err(MathError::NotReduced);
    }
    let d = key.private_exponent()?;
    match Montgomery::new(key.n()) {
        Some(mont) => Ok(mont.pow(m, d)),
        None => mod_exp(m, d, key.n()),
    }
}

/// `s^e mod n`.
pub fn raw_verify(s: &BigUint, key: &PublicKey) -> Result<BigUint, MathError> {
    if s >= &key.n {
        return Err(MathError::NotReduced);
    }
    mod_exp(s, &key.e, &key.n)
}

/// Big-endian encoding left-padded to exactly `len` bytes.
pub fn to_fixed_be(x: &BigUint, len: usize) -> Result<Vec<u8>, MathError> {
    if x.is_zero() {
        return Ok(vec![0; len]);
    }
    let raw = x.to_bytes_be();
    if raw.len() > len {
        return Err(MathError::Overflow(len));
    }
    let mut out = vec![0; len - raw.len()];
    out.extend_from_slice(&raw);
    Ok(out)
}

pub fn from_be(bytes: &[u8]) -> BigUint {
    BigUint::from_bytes_be(bytes)
}

pub(crate) mod hex_biguint {
    use num_bigint::BigUint;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &BigUint, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&v.to_str_radix(16))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<BigUint, D::Error> {
        let s = String::deserialize(d)?;
        BigUint::parse_bytes(s.trim_start_matches("0x").as_bytes(), 16)
            .ok_or_else(|| serde::de::Error::custom("invalid hex integer"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::Seed;
    use proptest::prelude::*;

    fn big(x: u64) -> BigUint {
        BigUint::from(x)
    }

    /// Multiplies `base` into an accumulator `exp` times; independent of the
    /// bit-scanning implementation.
    fn repeated_multiplication(base: u64, exp: u64, modulus: u64) -> u64 {
        let mut acc = 1u128 % modulus as u128;
        for _ in 0..exp {
            acc = acc * base as u128 % modulus as u128;
        }
        acc as u64
    }

    #[test]
    fn mod_exp_small_cases() {
        assert_eq!(mod_exp(&big(2), &big(10), &big(1000)).unwrap(), big(24));
        assert_eq!(mod_exp(&big(5), &big(1), &big(7)).unwrap(), big(5));
        assert_eq!(mod_exp(&big(5), &big(0), &big(7)).unwrap(), big(1));
        assert_eq!(mod_exp(&big(3), &big(3), &big(1)), Err(MathError::ModulusTooSmall));
        assert_eq!(mod_exp(&big(3), &big(3), &big(0)), Err(MathError::ModulusTooSmall));
    }

    #[test]
    fn mod_exp_textbook_rsa_fixture() {
        // 65^17 mod 3233, frozen from the repeated-multiplication oracle.
        assert_eq!(repeated_multiplication(65, 17, 3233), 2790);
        assert_eq!(mod_exp(&big(65), &big(17), &big(3233)).unwrap(), big(2790));
    }

    proptest! {
        #[test]
        fn mod_exp_agrees_with_repeated_multiplication(
            base in 0u64..1_000_000, exp in 0u64..300, modulus in 2u64..1_000_000
        ) {
            prop_assert_eq!(
                mod_exp(&big(base), &big(exp), &big(modulus)).unwrap(),
                big(repeated_multiplication(base, exp, modulus))
            );
        }
    }

    #[test]
    fn fixed_width_codec() {
        assert_eq!(to_fixed_be(&big(0x0102), 4).unwrap(), vec![0, 0, 1, 2]);
        assert_eq!(to_fixed_be(&big(0), 3).unwrap(), vec![0, 0, 0]);
        assert_eq!(to_fixed_be(&big(0x010203), 2), Err(MathError::Overflow(2)));
        assert_eq!(from_be(&[0, 0, 1, 2]), big(0x0102));
    }

    #[test]
    fn sign_and_verify_edge_values() {
        let key = generate_keypair(512, Seed([3; 32])).unwrap();
        let one = BigUint::one();
        assert_eq!(raw_sign(&one, &key).unwrap(), one);
        let nm1 = key.n() - 1u32;
        assert_eq!(raw_sign(&nm1, &key).unwrap(), nm1);
        assert_eq!(raw_verify(&BigUint::zero(), &key.public).unwrap(), BigUint::zero());
        assert_eq!(raw_verify(&one, &key.public).unwrap(), one);
        assert_eq!(raw_sign(key.n(), &key), Err(MathError::NotReduced));
        assert_eq!(raw_verify(key.n(), &key.public), Err(MathError::NotReduced));
        let public_only = RsaKeyPair { d: None, ..key.clone() };
        assert_eq!(raw_sign(&one, &public_only), Err(MathError::MissingPrivateExponent));
    }

    #[test]
    fn negation_identity_by_direct_computation() {
        let key = generate_keypair(256, Seed([4; 32])).unwrap();
        let mut stream = Seed([5; 32]).stream("neg");
        for _ in 0..50 {
            let s = from_be(&stream.bytes(32)) % key.n();
            let v = raw_verify(&s, &key.public).unwrap();
            let neg = raw_verify(&((key.n() - &s) % key.n()), &key.public).unwrap();
            assert_eq!(neg, (key.n() - &v) % key.n());
        }
    }
}
