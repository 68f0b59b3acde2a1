//! FIRM firmware images: building, byte codec, signing and validation.
//!
//! Header layout (little-endian integers):
//!
//! | offset | size  | field |
//! |--------|-------|-------|
//! | 0x000  | 4     | magic `FIRM` |
//! | 0x004  | 4     | boot priority |
//! | 0x008  | 4     | ARM11 entry point |
//! | 0x00C  | 4     | ARM9 entry point |
//! | 0x010  | 0x30  | reserved, zero |
//! | 0x040  | 4×0x30| section headers |
//! | 0x100  | 0x100 | signature |
//!
//! A section header is `offset`, `phys_addr`, `size`, `copy_method` (4 bytes
//! each) and the SHA-256 of the payload. The signature covers the SHA-256 of
//! bytes 0x000..0x100. Signatures shorter than 0x100 bytes occupy the start
//! of the field; the rest is zero.

mod descriptor;

pub use descriptor::{DescriptorError, FirmDescriptor, SectionSpec};

use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::modmath::{from_be, raw_sign, raw_verify, to_fixed_be, MathError, PublicKey, RsaKeyPair};
use crate::sigparser::{
    honest_plaintext, parse, ParseOutcome, ParserConfig, PlaintextBlock, PlaintextError,
    RejectReason, StackModel, HASH_LEN,
};

pub const MAGIC: [u8; 4] = *b"FIRM";
pub const HEADER_LEN: usize = 0x200;
pub const SIGNED_LEN: usize = 0x100;
pub const SIGNATURE_OFFSET: usize = 0x100;
pub const SIGNATURE_FIELD_LEN: usize = 0x100;
pub const SECTION_TABLE_OFFSET: usize = 0x40;
pub const SECTION_HEADER_LEN: usize = 0x30;
pub const SECTION_COUNT: usize = 4;
pub const PAYLOAD_ALIGN: usize = 0x200;

pub fn sha256(data: &[u8]) -> [u8; 32] {
    Sha256::digest(data).into()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CopyMethod {
    #[default]
    Ndma = 0,
    Xdma = 1,
    CpuMemcpy = 2,
}

impl CopyMethod {
    pub fn from_u32(v: u32) -> Option<Self> {
        match v {
            0 => Some(CopyMethod::Ndma),
            1 => Some(CopyMethod::Xdma),
            2 => Some(CopyMethod::CpuMemcpy),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub struct SectionHeader {
    pub offset: u32,
    pub phys_addr: u32,
    pub size: u32,
    pub copy_method: CopyMethod,
    pub hash: [u8; 32],
}

impl SectionHeader {
    pub fn is_used(&self) -> bool {
        self.size != 0
    }
}

#[derive(Clone, PartialEq, Eq)]
pub struct FirmHeader {
    pub boot_priority: u32,
    pub arm11_entry: u32,
    pub arm9_entry: u32,
    pub sections: [SectionHeader; SECTION_COUNT],
    pub signature: [u8; SIGNATURE_FIELD_LEN],
}

impl fmt::Debug for FirmHeader {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FirmHeader")
            .field("boot_priority", &self.boot_priority)
            .field("arm11_entry", &format_args!("{:#x}", self.arm11_entry))
            .field("arm9_entry", &format_args!("{:#x}", self.arm9_entry))
            .field("sections", &self.sections)
            .field("signature", &hex::encode(self.signature))
            .finish()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FirmImage {
    pub header: FirmHeader,
    pub payloads: [Vec<u8>; SECTION_COUNT],
}

/// One `build_firm` input.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FirmEntry {
    pub phys_addr: u32,
    pub copy_method: CopyMethod,
    pub payload: Vec<u8>,
}

impl FirmEntry {
    pub fn new(phys_addr: u32, copy_method: CopyMethod, payload: Vec<u8>) -> Self {
        FirmEntry {
            phys_addr,
            copy_method,
            payload,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParseErrorKind {
    BadMagic,
    TruncatedHeader,
    ReservedNonZero,
    UnusedSectionNonZero,
    BadCopyMethod,
    OffsetInsideHeader,
    TruncatedPayload,
    OverlappingPayloads,
    NonZeroPadding,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FirmError {
    #[error("a firmware image needs 1 to 4 sections, got {0}")]
    SectionCount(usize),
    #[error("section {0} has an empty payload")]
    EmptyPayload(usize),
    #[error("payload of section {0} does not fit a 32-bit layout")]
    TooLarge(usize),
    #[error("parse error at byte {offset:#x}: {kind:?}")]
    Parse { offset: usize, kind: ParseErrorKind },
    #[error("signature of {0} bytes does not fit the 0x100-byte field")]
    SignatureTooLong(usize),
    #[error("stack model is for {stack} byte blocks but the key produces {key}")]
    StackMismatch { stack: usize, key: usize },
    #[error(transparent)]
    Math(#[from] MathError),
    #[error(transparent)]
    Plaintext(#[from] PlaintextError),
}

fn parse_err(offset: usize, kind: ParseErrorKind) -> FirmError {
    FirmError::Parse { offset, kind }
}

fn align_up(x: usize, a: usize) -> usize {
    x.div_ceil(a) * a
}

/// Lays out 1 to 4 sections from 0x200 onward, each aligned to 0x200, and
/// hashes the payloads. The signature is left zero.
pub fn build_firm(
    entries: &[FirmEntry],
    arm9_entry: u32,
    arm11_entry: u32,
    boot_priority: u32,
) -> Result<FirmImage, FirmError> {
    if entries.is_empty() || entries.len() > SECTION_COUNT {
        return Err(FirmError::SectionCount(entries.len()));
    }
    let mut sections = [SectionHeader::default(); SECTION_COUNT];
    let mut payloads: [Vec<u8>; SECTION_COUNT] = Default::default();
    let mut cursor = HEADER_LEN;
    for (i, e) in entries.iter().enumerate() {
        if e.payload.is_empty() {
            return Err(FirmError::EmptyPayload(i));
        }
        let end = cursor + e.payload.len();
        if end > u32::MAX as usize {
            return Err(FirmError::TooLarge(i));
        }
        sections[i] = SectionHeader {
            offset: cursor as u32,
            phys_addr: e.phys_addr,
            size: e.payload.len() as u32,
            copy_method: e.copy_method,
            hash: sha256(&e.payload),
        };
        payloads[i] = e.payload.clone();
        cursor = align_up(end, PAYLOAD_ALIGN);
    }
    Ok(FirmImage {
        header: FirmHeader {
            boot_priority,
            arm11_entry,
            arm9_entry,
            sections,
            signature: [0; SIGNATURE_FIELD_LEN],
        },
        payloads,
    })
}

fn put_u32(out: &mut [u8], at: usize, v: u32) {
    out[at..at + 4].copy_from_slice(&v.to_le_bytes());
}

fn get_u32(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(b[at..at + 4].try_into().expect("4 bytes"))
}

impl FirmHeader {
    pub fn to_bytes(&self) -> [u8; HEADER_LEN] {
        let mut out = [0u8; HEADER_LEN];
        out[..4].copy_from_slice(&MAGIC);
        put_u32(&mut out, 0x4, self.boot_priority);
        put_u32(&mut out, 0x8, self.arm11_entry);
        put_u32(&mut out, 0xc, self.arm9_entry);
        for (i, s) in self.sections.iter().enumerate() {
            let base = SECTION_TABLE_OFFSET + i * SECTION_HEADER_LEN;
            put_u32(&mut out, base, s.offset);
            put_u32(&mut out, base + 4, s.phys_addr);
            put_u32(&mut out, base + 8, s.size);
            put_u32(&mut out, base + 0xc, s.copy_method as u32);
            out[base + 0x10..base + 0x30].copy_from_slice(&s.hash);
        }
        out[SIGNATURE_OFFSET..].copy_from_slice(&self.signature);
        out
    }

    /// SHA-256 of header bytes 0x000..0x100.
    pub fn signed_hash(&self) -> [u8; 32] {
        sha256(&self.to_bytes()[..SIGNED_LEN])
    }

    /// The first `block_length` bytes of the signature field.
    pub fn signature_bytes(&self, block_length: usize) -> &[u8] {
        &self.signature[..block_length.min(SIGNATURE_FIELD_LEN)]
    }

    fn parse(b: &[u8]) -> Result<Self, FirmError> {
        if b.len() < 4 || b[..4] != MAGIC {
            return Err(parse_err(0, ParseErrorKind::BadMagic));
        }
        if b.len() < HEADER_LEN {
            return Err(parse_err(b.len(), ParseErrorKind::TruncatedHeader));
        }
        if let Some(i) = b[0x10..0x40].iter().position(|&x| x != 0) {
            return Err(parse_err(0x10 + i, ParseErrorKind::ReservedNonZero));
        }
        let mut sections = [SectionHeader::default(); SECTION_COUNT];
        for (i, slot) in sections.iter_mut().enumerate() {
            let base = SECTION_TABLE_OFFSET + i * SECTION_HEADER_LEN;
            let raw = &b[base..base + SECTION_HEADER_LEN];
            let size = get_u32(b, base + 8);
            if size == 0 {
                if let Some(j) = raw.iter().position(|&x| x != 0) {
                    return Err(parse_err(base + j, ParseErrorKind::UnusedSectionNonZero));
                }
                continue;
            }
            let copy_method = CopyMethod::from_u32(get_u32(b, base + 0xc))
                .ok_or(parse_err(base + 0xc, ParseErrorKind::BadCopyMethod))?;
            let offset = get_u32(b, base);
            if (offset as usize) < HEADER_LEN {
                return Err(parse_err(base, ParseErrorKind::OffsetInsideHeader));
            }
            *slot = SectionHeader {
                offset,
                phys_addr: get_u32(b, base + 4),
                size,
                copy_method,
                hash: raw[0x10..0x30].try_into().expect("32 bytes"),
            };
        }
        Ok(FirmHeader {
            boot_priority: get_u32(b, 0x4),
            arm11_entry: get_u32(b, 0x8),
            arm9_entry: get_u32(b, 0xc),
            sections,
            signature: b[SIGNATURE_OFFSET..HEADER_LEN].try_into().expect("0x100 bytes"),
        })
    }
}

impl FirmImage {
    pub fn serialize(&self) -> Vec<u8> {
        let end = self
            .header
            .sections
            .iter()
            .filter(|s| s.is_used())
            .map(|s| s.offset as usize + s.size as usize)
            .max()
            .unwrap_or(HEADER_LEN)
            .max(HEADER_LEN);
        let mut out = vec![0u8; end];
        out[..HEADER_LEN].copy_from_slice(&self.header.to_bytes());
        for (s, p) in self.header.sections.iter().zip(&self.payloads) {
            if s.is_used() {
                let at = s.offset as usize;
                out[at..at + p.len()].copy_from_slice(p);
            }
        }
        out
    }

    /// Inverse of [`FirmImage::serialize`]. Rejects bytes that serialize would
    /// not produce: non-zero gaps, overlapping payloads, trailing data.
    pub fn parse(bytes: &[u8]) -> Result<Self, FirmError> {
        let header = FirmHeader::parse(bytes)?;
        let mut payloads: [Vec<u8>; SECTION_COUNT] = Default::default();
        let mut covered: Vec<(usize, usize, usize)> = Vec::new();
        for (i, s) in header.sections.iter().enumerate() {
            if !s.is_used() {
                continue;
            }
            let (start, end) = (s.offset as usize, s.offset as usize + s.size as usize);
            if end > bytes.len() {
                return Err(parse_err(bytes.len(), ParseErrorKind::TruncatedPayload));
            }
            if covered.iter().any(|&(a, b, _)| start < b && a < end) {
                let base = SECTION_TABLE_OFFSET + i * SECTION_HEADER_LEN;
                return Err(parse_err(base, ParseErrorKind::OverlappingPayloads));
            }
            covered.push((start, end, i));
            payloads[i] = bytes[start..end].to_vec();
        }
        covered.sort();
        let mut cursor = HEADER_LEN;
        for &(start, end, _) in covered.iter().chain(std::iter::once(&(bytes.len(), bytes.len(), 0))) {
            if let Some(j) = bytes[cursor..start].iter().position(|&x| x != 0) {
                return Err(parse_err(cursor + j, ParseErrorKind::NonZeroPadding));
            }
            cursor = end;
        }
        let image = FirmImage { header, payloads };
        if image.serialize().len() != bytes.len() {
            return Err(parse_err(cursor, ParseErrorKind::NonZeroPadding));
        }
        Ok(image)
    }

    pub fn with_signature(mut self, signature: &[u8]) -> Result<Self, FirmError> {
        if signature.len() > SIGNATURE_FIELD_LEN {
            return Err(FirmError::SignatureTooLong(signature.len()));
        }
        self.header.signature = [0; SIGNATURE_FIELD_LEN];
        self.header.signature[..signature.len()].copy_from_slice(signature);
        Ok(self)
    }
}

/// Signs the header honestly: PKCS#1 v1.5 over SHA-256 of bytes 0x000..0x100.
pub fn sign_firm(image: FirmImage, key: &RsaKeyPair) -> Result<FirmImage, FirmError> {
    let bl = key.block_length();
    if bl > SIGNATURE_FIELD_LEN {
        return Err(FirmError::SignatureTooLong(bl));
    }
    let hash = image.header.signed_hash();
    let m = from_be(honest_plaintext(bl, &hash)?.as_bytes());
    let s = raw_sign(&m, key)?;
    image.with_signature(&to_fixed_be(&s, bl)?)
}

/// Embeds `signature` verbatim, whatever the header says.
pub fn fakesign_firm(image: FirmImage, signature: &[u8]) -> Result<FirmImage, FirmError> {
    image.with_signature(signature)
}

/// Bulk image cipher applied before parsing. Only the identity is provided.
pub trait ImageCipher {
    fn decrypt(&self, bytes: &[u8]) -> Vec<u8>;
    fn encrypt(&self, bytes: &[u8]) -> Vec<u8>;
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct NullCipher;

impl ImageCipher for NullCipher {
    fn decrypt(&self, bytes: &[u8]) -> Vec<u8> {
        bytes.to_vec()
    }

    fn encrypt(&self, bytes: &[u8]) -> Vec<u8> {
        bytes.to_vec()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SectionCheck {
    Unused,
    Match,
    Mismatch,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FirmValidation {
    #[serde(with = "hex::serde")]
    pub header_hash: [u8; 32],
    pub signature: ParseOutcome,
    pub sections: [SectionCheck; SECTION_COUNT],
    pub first_bad_section: Option<usize>,
    pub accepted: bool,
}

/// Decodes the signature under `key`, runs the chosen parser against the
/// header hash, then checks each used section's hash.
pub fn validate_firm(
    image: &FirmImage,
    key: &PublicKey,
    config: &ParserConfig,
    stack: &StackModel,
) -> Result<FirmValidation, FirmError> {
    let bl = key.block_length();
    if bl > SIGNATURE_FIELD_LEN {
        return Err(FirmError::SignatureTooLong(bl));
    }
    if stack.block_length != bl {
        return Err(FirmError::StackMismatch {
            stack: stack.block_length,
            key: bl,
        });
    }
    let header_hash: [u8; HASH_LEN] = image.header.signed_hash();
    let s = from_be(image.header.signature_bytes(bl));
    let signature = if s >= key.n {
        ParseOutcome::reject(RejectReason::SignatureNotReduced)
    } else {
        let m = raw_verify(&s, key)?;
        let block = PlaintextBlock::new(to_fixed_be(&m, bl)?);
        parse(&block, &header_hash, stack, config)
    };
    let mut sections = [SectionCheck::Unused; SECTION_COUNT];
    for (i, (h, p)) in image.header.sections.iter().zip(&image.payloads).enumerate() {
        if h.is_used() {
            sections[i] = if sha256(p) == h.hash {
                SectionCheck::Match
            } else {
                SectionCheck::Mismatch
            };
        }
    }
    let first_bad_section = sections.iter().position(|c| *c == SectionCheck::Mismatch);
    let any_used = sections.iter().any(|c| *c != SectionCheck::Unused);
    Ok(FirmValidation {
        header_hash,
        accepted: signature.is_accept() && first_bad_section.is_none() && any_used,
        signature,
        sections,
        first_bad_section,
    })
}
