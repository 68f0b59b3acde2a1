use num_bigint::BigUint;
use num_traits::One;

/// Montgomery multiplication over 64-bit limbs for an odd modulus.
///
/// Limb slices are little-endian and exactly [`Montgomery::limbs`] long.
/// `R = 2^(64 * limbs)`.
#[derive(Clone, Debug)]
pub struct Montgomery {
    n: Vec<u64>,
    n_big: BigUint,
    /// `-n^-1 mod 2^64`
    n0_inv: u64,
    /// `R^2 mod n`
    r2: Vec<u64>,
}

impl Montgomery {
    /// Returns `None` for even moduli or moduli below 3.
    pub fn new(modulus: &BigUint) -> Option<Self> {
        if !modulus.bit(0) || *modulus < BigUint::from(3u32) {
            return None;
        }
        let n = modulus.to_u64_digits();
        let limbs = n.len();
        // Newton iteration for n[0]^-1 mod 2^64.
        let mut inv: u64 = 1;
        for _ in 0..6 {
            inv = inv.wrapping_mul(2u64.wrapping_sub(n[0].wrapping_mul(inv)));
        }
        let r2_big = (BigUint::one() << (128 * limbs)) % modulus;
        let mut m = Montgomery {
            n,
            n_big: modulus.clone(),
            n0_inv: inv.wrapping_neg(),
            r2: Vec::new(),
        };
        m.r2 = m.to_limbs(&r2_big);
        Some(m)
    }

    pub fn limbs(&self) -> usize {
        self.n.len()
    }

    pub fn modulus(&self) -> &BigUint {
        &self.n_big
    }

    pub fn modulus_limbs(&self) -> &[u64] {
        &self.n
    }

    pub fn to_limbs(&self, x: &BigUint) -> Vec<u64> {
        let mut v = x.to_u64_digits();
        v.resize(self.limbs(), 0);
        v
    }

    pub fn from_limbs(&self, x: &[u64]) -> BigUint {
        let mut bytes = Vec::with_capacity(x.len() * 8);
        for limb in x {
            bytes.extend_from_slice(&limb.to_le_bytes());
        }
        BigUint::from_bytes_le(&bytes)
    }

    /// `a * b * R^-1 mod n` into `out`. Inputs must be reduced.
    /// `scratch` must hold at least `limbs + 2` words.
    pub fn mul_into(&self, a: &[u64], b: &[u64], out: &mut [u64], scratch: &mut [u64]) {
        let l = self.limbs();
        let n = &self.n;
        let t = &mut scratch[..l + 2];
        t.fill(0);
        for &bi in b.iter().take(l) {
            let mut carry = 0u64;
            for j in 0..l {
                let s = t[j] as u128 + a[j] as u128 * bi as u128 + carry as u128;
                t[j] = s as u64;
                carry = (s >> 64) as u64;
            }
            let s = t[l] as u128 + carry as u128;
            t[l] = s as u64;
            t[l + 1] = (s >> 64) as u64;

            let m = t[0].wrapping_mul(self.n0_inv);
            let s = t[0] as u128 + m as u128 * n[0] as u128;
            let mut carry = (s >> 64) as u64;
            for j in 1..l {
                let s = t[j] as u128 + m as u128 * n[j] as u128 + carry as u128;
                t[j - 1] = s as u64;
                carry = (s >> 64) as u64;
            }
            let s = t[l] as u128 + carry as u128;
            t[l - 1] = s as u64;
            t[l] = t[l + 1] + (s >> 64) as u64;
            t[l + 1] = 0;
        }
        if t[l] != 0 || !lt(&t[..l], n) {
            sub_in_place(&mut t[..l], n);
        }
        out[..l].copy_from_slice(&t[..l]);
    }

    pub fn mul(&self, a: &[u64], b: &[u64]) -> Vec<u64> {
        let mut out = vec![0; self.limbs()];
        let mut scratch = vec![0; self.limbs() + 2];
        self.mul_into(a, b, &mut out, &mut scratch);
        out
    }

    /// `x * R mod n`.
    pub fn to_montgomery(&self, x: &BigUint) -> Vec<u64> {
        let x = self.to_limbs(&(x % &self.n_big));
        self.mul(&x, &self.r2)
    }

    /// `x * R^-1 mod n`.
    pub fn from_montgomery(&self, x: &[u64]) -> Vec<u64> {
        let mut one = vec![0; self.limbs()];
        one[0] = 1;
        self.mul(x, &one)
    }

    /// `base^exp mod n`; bit-identical to [`super::mod_exp`].
    pub fn pow(&self, base: &BigUint, exp: &BigUint) -> BigUint {
        let l = self.limbs();
        let b = self.to_montgomery(base);
        let mut acc = self.to_montgomery(&BigUint::one());
        let mut tmp = vec![0; l];
        let mut scratch = vec![0; l + 2];
        for i in (0..exp.bits()).rev() {
            self.mul_into(&acc, &acc, &mut tmp, &mut scratch);
            std::mem::swap(&mut acc, &mut tmp);
            if exp.bit(i) {
                self.mul_into(&acc, &b, &mut tmp, &mut scratch);
                std::mem::swap(&mut acc, &mut tmp);
            }
        }
        self.from_limbs(&self.from_montgomery(&acc))
    }
}

/// `a < b` for equal-length little-endian limb slices.
pub(crate) fn lt(a: &[u64], b: &[u64]) -> bool {
    for i in (0..a.len()).rev() {
        if a[i] != b[i] {
            return a[i] < b[i];
        }
    }
    false
}

/// `a -= b`, ignoring the final borrow.
pub(crate) fn sub_in_place(a: &mut [u64], b: &[u64]) {
    let mut borrow = 0u64;
    for i in 0..a.len() {
        let (d1, b1) = a[i].overflowing_sub(b[i]);
        let (d2, b2) = d1.overflowing_sub(borrow);
        a[i] = d2;
        borrow = (b1 | b2) as u64;
    }
}

/// `out = a - b` for equal-length limb slices.
pub(crate) fn sub_into(a: &[u64], b: &[u64], out: &mut [u64]) {
    out.copy_from_slice(a);
    sub_in_place(out, b);
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::modmath::mod_exp;
    use crate::seed::Seed;

    #[test]
    fn rejects_even_and_tiny_moduli() {
        assert!(Montgomery::new(&BigUint::from(10u32)).is_none());
        assert!(Montgomery::new(&BigUint::from(1u32)).is_none());
        assert!(Montgomery::new(&BigUint::from(3u32)).is_some());
    }

    #[test]
    fn pow_matches_square_and_multiply() {
        let mut stream = Seed([9; 32]).stream("mont");
        for bytes in [8usize, 16, 33, 64, 65, 128] {
            for _ in 0..20 {
                let mut n = BigUint::from_bytes_be(&stream.bytes(bytes));
                n.set_bit(0, true);
                n.set_bit(bytes as u64 * 8 - 1, true);
                let base = BigUint::from_bytes_be(&stream.bytes(bytes + 3));
                let exp = BigUint::from_bytes_be(&stream.bytes(bytes));
                let mont = Montgomery::new(&n).unwrap();
                assert_eq!(mont.pow(&base, &exp), mod_exp(&base, &exp, &n).unwrap());
            }
        }
    }

    #[test]
    fn mul_keeps_plain_operand_plain() {
        // y * (k R) * R^-1 = y k: the trick the search loop relies on.
        let n = BigUint::parse_bytes(b"f123456789abcdef0123456789abcdef1", 16).unwrap();
        let mont = Montgomery::new(&n).unwrap();
        let y = BigUint::from(0xdead_beef_u64);
        let k = BigUint::from(0x1234_5678_9abc_u64);
        let out = mont.mul(&mont.to_limbs(&y), &mont.to_montgomery(&k));
        assert_eq!(mont.from_limbs(&out), (&y * &k) % &n);
    }
}
