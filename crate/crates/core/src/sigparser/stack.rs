use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::HASH_LEN;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum StackError {
    #[error("calculated hash at offset {offset} does not fit in the modelled stack")]
    HashOutsideStack { offset: i64 },
    #[error("calculated hash at offset {offset} overlaps the signature block")]
    HashOverlapsBlock { offset: i64 },
}

/// Memory around the decrypted signature block as the parser sees it.
///
/// Offsets are relative to the first block byte. `pre_gap` occupies
/// `[-pre_gap.len(), 0)`, the block `[0, B)`, and `post_bytes`
/// `[B, B + post_bytes.len())`. The calculated hash overwrites 32 bytes of
/// the pre or post region starting at `calc_hash_offset`. Reads outside all
/// three regions fault.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StackModel {
    pub block_length: usize,
    #[serde(with = "hex::serde")]
    pub pre_gap: Vec<u8>,
    #[serde(with = "hex::serde")]
    pub post_bytes: Vec<u8>,
    pub calc_hash_offset: i64,
}

/// Distance between the block end and the calculated hash in the
/// factory-firmware parser.
pub const FACTORY_HASH_GAP: i64 = 0x60;

fn filler(len: usize, salt: u8) -> Vec<u8> {
    (0..len)
        .map(|i| (i as u8).wrapping_mul(0x3b).wrapping_add(0x11 ^ salt))
        .collect()
}

impl StackModel {
    pub fn new(
        block_length: usize,
        pre_gap: Vec<u8>,
        post_bytes: Vec<u8>,
        calc_hash_offset: i64,
    ) -> Result<Self, StackError> {
        let m = StackModel {
            block_length,
            pre_gap,
            post_bytes,
            calc_hash_offset,
        };
        let b = block_length as i64;
        let (lo, hi) = (calc_hash_offset, calc_hash_offset + HASH_LEN as i64);
        if lo < b && hi > 0 {
            return Err(StackError::HashOverlapsBlock {
                offset: calc_hash_offset,
            });
        }
        let in_pre = lo >= -(m.pre_gap.len() as i64) && hi <= 0;
        let in_post = lo >= b && hi <= b + m.post_bytes.len() as i64;
        if !in_pre && !in_post {
            return Err(StackError::HashOutsideStack {
                offset: calc_hash_offset,
            });
        }
        Ok(m)
    }

    /// Boot ROM layout: hash immediately after the block, 0x20 bytes of
    /// other data on each side.
    pub fn boot9(block_length: usize) -> Self {
        Self::new(
            block_length,
            filler(0x20, 0),
            filler(0x40, 1),
            block_length as i64,
        )
        .expect("valid layout")
    }

    /// Factory-firmware layout: hash [`FACTORY_HASH_GAP`] bytes past the block end.
    pub fn factory_firmware(block_length: usize) -> Self {
        Self::new(
            block_length,
            filler(0x20, 2),
            filler(FACTORY_HASH_GAP as usize + HASH_LEN + 0x40, 3),
            block_length as i64 + FACTORY_HASH_GAP,
        )
        .expect("valid layout")
    }

    /// Post region just large enough to hold the hash at `offset` (which
    /// must be at or past the block end) plus 0x20 trailing bytes.
    pub fn with_calc_hash_at(block_length: usize, offset: i64) -> Result<Self, StackError> {
        let post = (offset - block_length as i64).max(0) as usize + HASH_LEN + 0x20;
        Self::new(block_length, filler(0x20, 4), filler(post, 5), offset)
    }

    /// Lowest and one-past-highest readable offsets.
    pub fn extent(&self) -> (i64, i64) {
        (
            -(self.pre_gap.len() as i64),
            (self.block_length + self.post_bytes.len()) as i64,
        )
    }

    pub(crate) fn view<'a>(&'a self, block: &'a [u8], calc_hash: &'a [u8; HASH_LEN]) -> StackView<'a> {
        StackView {
            stack: self,
            block,
            calc_hash,
        }
    }

    /// The bytes in `[start, start + len)` with the given block and hash in
    /// place, or `None` if any byte falls outside the model.
    pub fn read(
        &self,
        block: &[u8],
        calc_hash: &[u8; HASH_LEN],
        start: i64,
        len: usize,
    ) -> Option<Vec<u8>> {
        self.view(block, calc_hash).read(start, len)
    }
}

pub(crate) struct StackView<'a> {
    stack: &'a StackModel,
    block: &'a [u8],
    calc_hash: &'a [u8; HASH_LEN],
}

impl StackView<'_> {
    fn byte(&self, off: i64) -> Option<u8> {
        let s = self.stack;
        let h = off - s.calc_hash_offset;
        if (0..HASH_LEN as i64).contains(&h) {
            return Some(self.calc_hash[h as usize]);
        }
        let b = self.block.len() as i64;
        if off < 0 {
            let idx = s.pre_gap.len() as i64 + off;
            (idx >= 0).then(|| s.pre_gap[idx as usize])
        } else if off < b {
            Some(self.block[off as usize])
        } else {
            s.post_bytes.get((off - b) as usize).copied()
        }
    }

    pub fn read(&self, start: i64, len: usize) -> Option<Vec<u8>> {
        (start..start + len as i64).map(|o| self.byte(o)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn boot9_layout() {
        let s = StackModel::boot9(0x100);
        assert_eq!(s.extent(), (-0x20, 0x140));
        assert_eq!(s.calc_hash_offset, 0x100);
        let block = vec![0xab; 0x100];
        let h = [0x77; 32];
        assert_eq!(s.read(&block, &h, 0x100, 32).unwrap(), h.to_vec());
        assert_eq!(s.read(&block, &h, 0xf0, 4).unwrap(), vec![0xab; 4]);
        assert!(s.read(&block, &h, 0x130, 0x10).is_some());
        assert!(s.read(&block, &h, 0x131, 0x10).is_none());
        assert!(s.read(&block, &h, -0x21, 1).is_none());
        assert_eq!(s.read(&block, &h, -0x20, 1).unwrap(), vec![s.pre_gap[0]]);
    }

    #[test]
    fn factory_layout_reaches_its_hash() {
        let s = StackModel::factory_firmware(0x100);
        let h = [0x42; 32];
        let got = s.read(&[0; 0x100], &h, 0x160, 32).unwrap();
        assert_eq!(got, h.to_vec());
        // The boot ROM stack does not extend that far.
        assert!(StackModel::boot9(0x100).read(&[0; 0x100], &h, 0x160, 32).is_none());
    }

    #[test]
    fn invalid_hash_placement() {
        assert_eq!(
            StackModel::new(0x40, vec![0; 0x20], vec![0; 0x20], 0x30),
            Err(StackError::HashOverlapsBlock { offset: 0x30 })
        );
        assert_eq!(
            StackModel::new(0x40, vec![0; 0x20], vec![0; 0x10], 0x40),
            Err(StackError::HashOutsideStack { offset: 0x40 })
        );
        assert!(StackModel::new(0x40, vec![0; 0x20], vec![], -0x20).is_ok());
    }
}
