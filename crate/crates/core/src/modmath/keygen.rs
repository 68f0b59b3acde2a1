//! Deterministic RSA key generation.
//!
//! Candidates and Miller-Rabin witnesses are drawn from a [`SeedStream`], so
//! a seed fixes the key pair completely. Each prime has exactly half the
//! modulus bits with its top two bits set, which makes `n` exactly
//! `bit_length` bits long.

use num_bigint::BigUint;
use num_integer::Integer;
use num_traits::{One, Zero};

use super::{MathError, Montgomery, PublicKey, RsaKeyPair, MAX_KEY_BITS, MIN_KEY_BITS};
use crate::seed::{Seed, SeedStream};

const MILLER_RABIN_ROUNDS: usize = 40;
const CANDIDATES_PER_SEED: u32 = 200_000;
const SEED_RETRIES: u32 = 4;

const SMALL_PRIMES: [u32; 53] = [
    3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53, 59, 61, 67, 71, 73, 79, 83, 89, 97,
    101, 103, 107, 109, 113, 127, 131, 137, 139, 149, 151, 157, 163, 167, 173, 179, 181, 191, 193,
    197, 199, 211, 223, 227, 229, 233, 239, 241, 251,
];

/// Generates a key pair with `e = 65537`.
pub fn generate_keypair(bit_length: usize, seed: Seed) -> Result<RsaKeyPair, MathError> {
    generate_keypair_with_exponent(bit_length, 65537, seed)
}

/// Generates a key pair with the given public exponent (65537 or 3).
pub fn generate_keypair_with_exponent(
    bit_length: usize,
    e: u64,
    seed: Seed,
) -> Result<RsaKeyPair, MathError> {
    if !(MIN_KEY_BITS..=MAX_KEY_BITS).contains(&bit_length) || bit_length % 8 != 0 {
        return Err(MathError::KeySize(bit_length));
    }
    if e != 65537 && e != 3 {
        return Err(MathError::Exponent(e));
    }
    let mut attempt_seed = seed;
    for retry in 0..SEED_RETRIES {
        if let Some(key) = try_generate(bit_length, e, attempt_seed) {
            return Ok(key);
        }
        attempt_seed = seed.derive("keygen-retry", retry as u64);
    }
    Err(MathError::PrimeSearchExhausted(SEED_RETRIES))
}

fn try_generate(bit_length: usize, e: u64, seed: Seed) -> Option<RsaKeyPair> {
    let mut stream = seed.stream("rsa-keygen");
    let e_big = BigUint::from(e);
    let half = bit_length / 2;
    let p = find_prime(&mut stream, half, e)?;
    let q = loop {
        let q = find_prime(&mut stream, half, e)?;
        if q != p {
            break q;
        }
    };
    let n = &p * &q;
    debug_assert_eq!(n.bits() as usize, bit_length);
    let lambda = (&p - 1u32).lcm(&(&q - 1u32));
    let d = mod_inverse(&e_big, &lambda)?;
    Some(RsaKeyPair {
        public: PublicKey::new(n, e_big),
        d: Some(d),
        bit_length,
    })
}

fn find_prime(stream: &mut SeedStream, bits: usize, e: u64) -> Option<BigUint> {
    let nbytes = bits.div_ceil(8);
    let excess = nbytes * 8 - bits;
    for _ in 0..CANDIDATES_PER_SEED {
        let mut raw = stream.bytes(nbytes);
        raw[0] &= 0xff >> excess;
        let mut c = BigUint::from_bytes_be(&raw);
        c.set_bit(bits as u64 - 1, true);
        c.set_bit(bits as u64 - 2, true);
        c.set_bit(0, true);
        if (&c - 1u32) % e == BigUint::zero() {
            continue;
        }
        if miller_rabin(&c, stream) {
            return Some(c);
        }
    }
    None
}

/// Trial division by small primes, then Miller-Rabin with witnesses drawn
/// from `stream`.
fn miller_rabin(c: &BigUint, stream: &mut SeedStream) -> bool {
    for &sp in &SMALL_PRIMES {
        if c == &BigUint::from(sp) {
            return true;
        }
        if (c % sp).is_zero() {
            return false;
        }
    }
    let one = BigUint::one();
    let c_minus_1 = c - 1u32;
    let s = c_minus_1.trailing_zeros().unwrap_or(0);
    let d = &c_minus_1 >> s;
    let mont = match Montgomery::new(c) {
        Some(m) => m,
        None => return false,
    };
    let nbytes = (c.bits() as usize).div_ceil(8) + 8;
    let range = c - 3u32;
    'witness: for _ in 0..MILLER_RABIN_ROUNDS {
        // witness in [2, c - 2]
        let a = BigUint::from_bytes_be(&stream.bytes(nbytes)) % &range + 2u32;
        let mut x = mont.pow(&a, &d);
        if x == one || x == c_minus_1 {
            continue;
        }
        for _ in 1..s {
            x = &x * &x % c;
            if x == c_minus_1 {
                continue 'witness;
            }
            if x == one {
                return false;
            }
        }
        return false;
    }
    true
}

/// Miller-Rabin with a fixed witness stream; exposed for tests and tools.
pub fn is_probable_prime(c: &BigUint) -> bool {
    if c < &BigUint::from(2u32) {
        return false;
    }
    if c == &BigUint::from(2u32) {
        return true;
    }
    if !c.bit(0) {
        return false;
    }
    if c < &BigUint::from(5u32) {
        return true;
    }
    miller_rabin(c, &mut Seed::default().stream("is-probable-prime"))
}

fn mod_inverse(a: &BigUint, m: &BigUint) -> Option<BigUint> {
    use num_bigint::BigInt;
    let (a, m) = (BigInt::from(a.clone()), BigInt::from(m.clone()));
    let egcd = a.extended_gcd(&m);
    if !egcd.gcd.is_one() {
        return None;
    }
    egcd.x.mod_floor(&m).to_biguint()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::modmath::{mod_exp, raw_sign, raw_verify};

    fn naive_is_prime(n: u64) -> bool {
        if n < 2 {
            return false;
        }
        let mut i = 2u64;
        while i * i <= n {
            if n % i == 0 {
                return false;
            }
            i += 1;
        }
        true
    }

    #[test]
    fn primality_agrees_with_trial_division() {
        for n in 0u64..5000 {
            assert_eq!(is_probable_prime(&BigUint::from(n)), naive_is_prime(n), "{n}");
        }
        // Carmichael numbers
        for n in [561u64, 1105, 1729, 2465, 2821, 6601, 8911, 41041, 825265] {
            assert!(!is_probable_prime(&BigUint::from(n)));
        }
    }

    #[test]
    fn same_seed_same_key() {
        let a = generate_keypair(512, Seed([0xaa; 32])).unwrap();
        let b = generate_keypair(512, Seed([0xaa; 32])).unwrap();
        assert_eq!(a, b);
        let c = generate_keypair(512, Seed([0xbb; 32])).unwrap();
        assert_ne!(a.n(), c.n());
    }

    #[test]
    fn key_invariants_hold() {
        for bits in [64usize, 128, 256, 512, 520] {
            let key = generate_keypair(bits, Seed([bits as u8; 32])).unwrap();
            assert_eq!(key.n().bits() as usize, bits);
            assert_eq!(key.block_length(), bits / 8);
            let d = key.d.as_ref().unwrap();
            assert!(!d.is_zero() && d < key.n());
            assert_eq!(key.e(), &BigUint::from(65537u32));
        }
    }

    #[test]
    fn round_trip_for_random_messages() {
        let key = generate_keypair(512, Seed([0x11; 32])).unwrap();
        let d = key.d.clone().unwrap();
        let mut stream = Seed([0x12; 32]).stream("msgs");
        for _ in 0..100 {
            let x = BigUint::from_bytes_be(&stream.bytes(64)) % key.n();
            let s = mod_exp(&x, &d, key.n()).unwrap();
            assert_eq!(mod_exp(&s, key.e(), key.n()).unwrap(), x);
            assert_eq!(raw_verify(&raw_sign(&x, &key).unwrap(), &key.public).unwrap(), x);
        }
    }

    #[test]
    fn exponent_three_supported() {
        let key = generate_keypair_with_exponent(256, 3, Seed([0x33; 32])).unwrap();
        assert_eq!(key.e(), &BigUint::from(3u32));
        let m = BigUint::from(123456789u64);
        assert_eq!(raw_verify(&raw_sign(&m, &key).unwrap(), &key.public).unwrap(), m);
    }

    #[test]
    fn rejects_bad_sizes_and_exponents() {
        assert_eq!(generate_keypair(56, Seed::default()), Err(MathError::KeySize(56)));
        assert_eq!(generate_keypair(100, Seed::default()), Err(MathError::KeySize(100)));
        assert_eq!(generate_keypair(4104, Seed::default()), Err(MathError::KeySize(4104)));
        assert_eq!(
            generate_keypair_with_exponent(128, 17, Seed::default()),
            Err(MathError::Exponent(17))
        );
    }
}
