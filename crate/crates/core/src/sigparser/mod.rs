//! PKCS#1 v1.5 signature plaintext parsers.
//!
//! Two parsers share one plaintext walk:
//!
//! * [`flawed_parse`] accepts block type 1 or 2, arbitrary padding of any
//!   length, and adds the inner ASN.1 length to the cursor without a bounds
//!   check. The embedded hash is read from wherever that cursor lands, which
//!   may be past the block and into the surrounding [`StackModel`].
//! * [`strict_parse`] accepts only the canonical layout: `00 01`, at least
//!   eight `FF` bytes, `00`, the fixed SHA-256 `DigestInfo` prefix and a hash
//!   that ends exactly at the end of the block.
//!
//! The flawed walk over a block is:
//!
//! ```text
//! 00 | 01/02 | padding .. | 00 | T1 L1 | T2 L2 | <L2 bytes> | T3 L3 | hash @ landing
//!                           ^ terminator                            ^ landing offset
//! ```
//!
//! `L1`, `T3` and `L3` are read but never used; the landing offset is
//! `terminator + 7 + L2`. `T1` and `T2` must be `0x30` when
//! [`ParserConfig::check_sequence_tags`] is set.

mod dump;
mod stack;

pub use dump::{annotate, hex_dump, ByteRole};
pub use stack::{StackError, StackModel, FACTORY_HASH_GAP};

use std::ops::Range;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// SHA-256 digest length; also the number of bytes compared at the landing offset.
pub const HASH_LEN: usize = 32;

/// DER `DigestInfo` prefix for SHA-256, up to and including the OCTET STRING header.
pub const SHA256_DIGEST_INFO: [u8; 19] = [
    0x30, 0x31, 0x30, 0x0d, 0x06, 0x09, 0x60, 0x86, 0x48, 0x01, 0x65, 0x03, 0x04, 0x02, 0x01, 0x05,
    0x00, 0x04, 0x20,
];

/// Minimum run of `FF` padding accepted by [`strict_parse`].
pub const MIN_STRICT_PADDING: usize = 8;

const SEQUENCE_TAG: u8 = 0x30;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PlaintextError {
    #[error("block of {got} bytes does not match block length {want}")]
    Length { got: usize, want: usize },
    #[error("block length {0} is too short for a SHA-256 signature")]
    TooShort(usize),
}

/// The decoded signature `s^e mod n` as a fixed-width big-endian block.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct PlaintextBlock(Vec<u8>);

impl PlaintextBlock {
    pub fn new(bytes: Vec<u8>) -> Self {
        PlaintextBlock(bytes)
    }

    pub fn with_length(bytes: Vec<u8>, block_length: usize) -> Result<Self, PlaintextError> {
        if bytes.len() != block_length {
            return Err(PlaintextError::Length {
                got: bytes.len(),
                want: block_length,
            });
        }
        Ok(PlaintextBlock(bytes))
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.0
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl std::fmt::Debug for PlaintextBlock {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "PlaintextBlock({})", hex::encode(&self.0))
    }
}

impl AsRef<[u8]> for PlaintextBlock {
    fn as_ref(&self) -> &[u8] {
        &self.0
    }
}

/// Builds the canonical PKCS#1 v1.5 SHA-256 signature plaintext for `hash`.
pub fn honest_plaintext(
    block_length: usize,
    hash: &[u8; HASH_LEN],
) -> Result<PlaintextBlock, PlaintextError> {
    let fixed = 3 + SHA256_DIGEST_INFO.len() + HASH_LEN;
    if block_length < fixed + MIN_STRICT_PADDING {
        return Err(PlaintextError::TooShort(block_length));
    }
    let mut out = Vec::with_capacity(block_length);
    out.extend_from_slice(&[0x00, 0x01]);
    out.resize(block_length - SHA256_DIGEST_INFO.len() - HASH_LEN - 1, 0xff);
    out.push(0x00);
    out.extend_from_slice(&SHA256_DIGEST_INFO);
    out.extend_from_slice(hash);
    Ok(PlaintextBlock(out))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParserMode {
    Flawed,
    Strict,
}

impl std::str::FromStr for ParserMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "flawed" => Ok(ParserMode::Flawed),
            "strict" => Ok(ParserMode::Strict),
            _ => Err(format!("unknown parser mode `{s}`")),
        }
    }
}

/// Which plaintexts the flawed walk accepts and which landing offsets count
/// as hits for classification.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParserConfig {
    pub mode: ParserMode,
    /// Landing offsets, relative to the block start, that classification accepts.
    pub target_window: Range<i64>,
    /// Bytes compared at the landing offset. Always [`HASH_LEN`].
    pub compare_length: usize,
    /// Accepted values of the block type byte (byte 1).
    pub block_types: Vec<u8>,
    /// Require the outer and inner ASN.1 tags to be SEQUENCE (`0x30`).
    pub check_sequence_tags: bool,
}

impl ParserConfig {
    /// The boot-ROM parser: block types 1 and 2, SEQUENCE tags checked, and
    /// the 128 landing offsets immediately after the block.
    pub fn flawed(block_length: usize) -> Self {
        let b = block_length as i64;
        ParserConfig {
            mode: ParserMode::Flawed,
            target_window: b..b + 128,
            compare_length: HASH_LEN,
            block_types: vec![0x01, 0x02],
            check_sequence_tags: true,
        }
    }

    pub fn strict(block_length: usize) -> Self {
        ParserConfig {
            mode: ParserMode::Strict,
            ..ParserConfig::flawed(block_length)
        }
    }

    /// Desk-scale search target: block type 2 only, tags unchecked, and a
    /// 64-offset window. Its hit probability is always measured, never assumed.
    pub fn relaxed(block_length: usize) -> Self {
        let b = block_length as i64;
        ParserConfig {
            mode: ParserMode::Flawed,
            target_window: b..b + 64,
            compare_length: HASH_LEN,
            block_types: vec![0x02],
            check_sequence_tags: false,
        }
    }

    pub fn with_window(mut self, window: Range<i64>) -> Self {
        self.target_window = window;
        self
    }

    pub fn with_mode(mut self, mode: ParserMode) -> Self {
        self.mode = mode;
        self
    }

    /// Whether the first two block bytes can begin an accepted plaintext.
    #[inline]
    pub fn prefix_admits(&self, b0: u8, b1: u8) -> bool {
        b0 == 0 && self.block_types.contains(&b1)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    BadBlockType,
    NoPaddingTerminator,
    BadAsn1,
    HashMismatch,
    PaddingNotFf,
    PaddingTooShort,
    TrailingGarbage,
    /// The signature integer is not below the modulus.
    SignatureNotReduced,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "reason")]
pub enum Verdict {
    Accept,
    Reject(RejectReason),
    /// The parser dereferenced memory outside the modelled stack.
    OutOfBounds,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ParseOutcome {
    pub verdict: Verdict,
    /// Where the embedded hash was read, relative to the block start.
    pub landing_offset: Option<i64>,
}

impl ParseOutcome {
    pub fn reject(reason: RejectReason) -> Self {
        ParseOutcome {
            verdict: Verdict::Reject(reason),
            landing_offset: None,
        }
    }

    pub fn is_accept(&self) -> bool {
        self.verdict == Verdict::Accept
    }
}

/// Result of the structural part of the flawed walk.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Walk {
    /// Index of the `00` that ends the padding.
    pub terminator: usize,
    /// The inner length byte, added to the cursor unchecked.
    pub inner_length: u8,
    pub landing_offset: i64,
}

impl Walk {
    /// Offset of the final (unused) TLV header.
    pub fn final_header(&self) -> i64 {
        self.landing_offset - 2
    }
}

/// Runs the flawed walk up to the landing offset. Reads nothing outside the
/// block.
#[inline]
pub fn flawed_walk(block: &[u8], config: &ParserConfig) -> Result<Walk, RejectReason> {
    if block.len() < 2 || !config.prefix_admits(block[0], block[1]) {
        return Err(RejectReason::BadBlockType);
    }
    let terminator = block[2..]
        .iter()
        .position(|&b| b == 0)
        .map(|p| p + 2)
        .ok_or(RejectReason::NoPaddingTerminator)?;
    if terminator + 4 >= block.len() {
        return Err(RejectReason::BadAsn1);
    }
    if config.check_sequence_tags
        && (block[terminator + 1] != SEQUENCE_TAG || block[terminator + 3] != SEQUENCE_TAG)
    {
        return Err(RejectReason::BadAsn1);
    }
    let inner_length = block[terminator + 4];
    Ok(Walk {
        terminator,
        inner_length,
        landing_offset: terminator as i64 + 7 + inner_length as i64,
    })
}

/// The boot-ROM parser. `calc_hash` is the hash the parser computed; the
/// stack model says where it was stored relative to the block.
pub fn flawed_parse(
    block: &PlaintextBlock,
    calc_hash: &[u8; HASH_LEN],
    stack: &StackModel,
    config: &ParserConfig,
) -> ParseOutcome {
    let walk = match flawed_walk(block.as_bytes(), config) {
        Ok(w) => w,
        Err(reason) => return ParseOutcome::reject(reason),
    };
    let landing = walk.landing_offset;
    let view = stack.view(block.as_bytes(), calc_hash);
    // The final header bytes are fetched even though their values are ignored.
    let header_ok = view.read(walk.final_header(), 2).is_some();
    let embedded = view.read(landing, config.compare_length);
    match (header_ok, embedded) {
        (true, Some(bytes)) => ParseOutcome {
            verdict: if bytes[..] == calc_hash[..config.compare_length.min(HASH_LEN)] {
                Verdict::Accept
            } else {
                Verdict::Reject(RejectReason::HashMismatch)
            },
            landing_offset: Some(landing),
        },
        _ => ParseOutcome {
            verdict: Verdict::OutOfBounds,
            landing_offset: Some(landing),
        },
    }
}

/// Stack-independent validity predicate used by the search: the landing
/// offset if the walk completes and lands inside the target window.
#[inline]
pub fn classify_plaintext(block: &[u8], config: &ParserConfig) -> Option<i64> {
    if config.mode != ParserMode::Flawed {
        return None;
    }
    let walk = flawed_walk(block, config).ok()?;
    config
        .target_window
        .contains(&walk.landing_offset)
        .then_some(walk.landing_offset)
}

/// The fixed parser: canonical layout only, every length bounds-checked
/// before use.
pub fn strict_parse(block: &PlaintextBlock, calc_hash: &[u8; HASH_LEN]) -> ParseOutcome {
    let b = block.as_bytes();
    if b.len() < 2 || b[0] != 0x00 || b[1] != 0x01 {
        return ParseOutcome::reject(RejectReason::BadBlockType);
    }
    let mut terminator = None;
    for (i, &byte) in b.iter().enumerate().skip(2) {
        match byte {
            0x00 => {
                terminator = Some(i);
                break;
            }
            0xff => {}
            _ => return ParseOutcome::reject(RejectReason::PaddingNotFf),
        }
    }
    let Some(t) = terminator else {
        return ParseOutcome::reject(RejectReason::NoPaddingTerminator);
    };
    if t - 2 < MIN_STRICT_PADDING {
        return ParseOutcome::reject(RejectReason::PaddingTooShort);
    }
    let info_end = t + 1 + SHA256_DIGEST_INFO.len();
    if info_end > b.len() || b[t + 1..info_end] != SHA256_DIGEST_INFO {
        return ParseOutcome::reject(RejectReason::BadAsn1);
    }
    let landing = info_end;
    match (landing + HASH_LEN).cmp(&b.len()) {
        std::cmp::Ordering::Greater => return ParseOutcome::reject(RejectReason::BadAsn1),
        std::cmp::Ordering::Less => return ParseOutcome::reject(RejectReason::TrailingGarbage),
        std::cmp::Ordering::Equal => {}
    }
    ParseOutcome {
        verdict: if b[landing..] == calc_hash[..] {
            Verdict::Accept
        } else {
            Verdict::Reject(RejectReason::HashMismatch)
        },
        landing_offset: Some(landing as i64),
    }
}

/// Dispatches on `config.mode`.
pub fn parse(
    block: &PlaintextBlock,
    calc_hash: &[u8; HASH_LEN],
    stack: &StackModel,
    config: &ParserConfig,
) -> ParseOutcome {
    match config.mode {
        ParserMode::Flawed => flawed_parse(block, calc_hash, stack, config),
        ParserMode::Strict => strict_parse(block, calc_hash),
    }
}
