//! Scripted processor code.
//!
//! Processors are not instruction-level emulators. Code placed in memory by
//! a payload is a routine: the magic `RTN1`, an op count, eight reserved
//! bytes, then 16-byte ops `(opcode, a, b, c)` as little-endian words.

use serde::{Deserialize, Serialize};

pub const ROUTINE_MAGIC: [u8; 4] = *b"RTN1";
pub const OP_LEN: u32 = 16;
pub const MAX_OPS: u32 = 64;

/// Files a routine may name on the SD store.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SdFile {
    Boot9Protected,
    Boot11Protected,
    SecondFirm,
}

impl SdFile {
    pub fn name(self) -> &'static str {
        match self {
            SdFile::Boot9Protected => "boot9_protected.bin",
            SdFile::Boot11Protected => "boot11_protected.bin",
            SdFile::SecondFirm => "second.firm",
        }
    }

    fn id(self) -> u32 {
        self as u32
    }

    fn from_id(v: u32) -> Option<Self> {
        match v {
            0 => Some(SdFile::Boot9Protected),
            1 => Some(SdFile::Boot11Protected),
            2 => Some(SdFile::SecondFirm),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Op {
    /// Return to the caller (the stock boot flow).
    Return,
    Write32 { addr: u32, value: u32 },
    Copy { src: u32, dst: u32, len: u32 },
    /// Spin until the word at `addr` equals `value`.
    WaitEq { addr: u32, value: u32 },
    MpuSetup,
    /// Mark the faulting section copy as skipped (abort handlers only).
    SkipFault,
    /// Transfer control to another routine; the current flow is abandoned.
    Jump { addr: u32 },
    /// Skip the next `count` ops unless every key in `mask` is held.
    SkipUnlessKeys { mask: u32, count: u32 },
    SdWrite { file: SdFile, src: u32, len: u32 },
    PowerOff,
    /// Read a FIRM image from the SD store and load its sections.
    ChainLoad { file: SdFile },
    /// Write both boot-ROM lock registers.
    Lock,
    /// Jump to the entry points of the last chain-loaded image.
    Boot,
    /// Write `len` bytes at `src` to the NAND firmware partition.
    InstallNand { src: u32, len: u32 },
    /// ARM11: wait for an entry point from the ARM9 and jump to it.
    WaitEntry11,
    Halt,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum DecodeError {
    BadMagic,
    TooLong(u32),
    BadOpcode { index: u32, opcode: u32 },
    BadOperand { index: u32 },
}

impl Op {
    fn words(self) -> [u32; 4] {
        match self {
            Op::Return => [0, 0, 0, 0],
            Op::Write32 { addr, value } => [1, addr, value, 0],
            Op::Copy { src, dst, len } => [2, src, dst, len],
            Op::WaitEq { addr, value } => [3, addr, value, 0],
            Op::MpuSetup => [4, 0, 0, 0],
            Op::SkipFault => [5, 0, 0, 0],
            Op::Jump { addr } => [6, addr, 0, 0],
            Op::SkipUnlessKeys { mask, count } => [7, mask, count, 0],
            Op::SdWrite { file, src, len } => [8, file.id(), src, len],
            Op::PowerOff => [9, 0, 0, 0],
            Op::ChainLoad { file } => [10, file.id(), 0, 0],
            Op::Lock => [11, 0, 0, 0],
            Op::Boot => [12, 0, 0, 0],
            Op::InstallNand { src, len } => [13, src, len, 0],
            Op::WaitEntry11 => [14, 0, 0, 0],
            Op::Halt => [15, 0, 0, 0],
        }
    }

    fn from_words(index: u32, w: [u32; 4]) -> Result<Op, DecodeError> {
        let file = |v| SdFile::from_id(v).ok_or(DecodeError::BadOperand { index });
        Ok(match w[0] {
            0 => Op::Return,
            1 => Op::Write32 { addr: w[1], value: w[2] },
            2 => Op::Copy { src: w[1], dst: w[2], len: w[3] },
            3 => Op::WaitEq { addr: w[1], value: w[2] },
            4 => Op::MpuSetup,
            5 => Op::SkipFault,
            6 => Op::Jump { addr: w[1] },
            7 => Op::SkipUnlessKeys { mask: w[1], count: w[2] },
            8 => Op::SdWrite { file: file(w[1])?, src: w[2], len: w[3] },
            9 => Op::PowerOff,
            10 => Op::ChainLoad { file: file(w[1])? },
            11 => Op::Lock,
            12 => Op::Boot,
            13 => Op::InstallNand { src: w[1], len: w[2] },
            14 => Op::WaitEntry11,
            15 => Op::Halt,
            opcode => return Err(DecodeError::BadOpcode { index, opcode }),
        })
    }
}

pub fn encode_routine(ops: &[Op]) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + ops.len() * OP_LEN as usize);
    out.extend_from_slice(&ROUTINE_MAGIC);
    out.extend_from_slice(&(ops.len() as u32).to_le_bytes());
    out.extend_from_slice(&[0; 8]);
    for op in ops {
        for w in op.words() {
            out.extend_from_slice(&w.to_le_bytes());
        }
    }
    out
}

/// Byte length of an encoded routine with `ops` ops.
pub fn routine_len(ops: usize) -> u32 {
    16 + ops as u32 * OP_LEN
}

/// Decodes a routine given a reader for memory at its address.
pub fn decode_routine(read: impl Fn(u32, u32) -> Vec<u8>, addr: u32) -> Result<Vec<Op>, DecodeError> {
    let head = read(addr, 16);
    if head[..4] != ROUTINE_MAGIC {
        return Err(DecodeError::BadMagic);
    }
    let count = u32::from_le_bytes(head[4..8].try_into().expect("4 bytes"));
    if count > MAX_OPS {
        return Err(DecodeError::TooLong(count));
    }
    let body = read(addr.wrapping_add(16), count * OP_LEN);
    body.chunks(OP_LEN as usize)
        .enumerate()
        .map(|(i, c)| {
            let w = std::array::from_fn(|j| u32::from_le_bytes(c[j * 4..j * 4 + 4].try_into().expect("4 bytes")));
            Op::from_words(i as u32, w)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_every_op() {
        let ops = vec![
            Op::Return,
            Op::Write32 { addr: 1, value: 2 },
            Op::Copy { src: 3, dst: 4, len: 5 },
            Op::WaitEq { addr: 6, value: 7 },
            Op::MpuSetup,
            Op::SkipFault,
            Op::Jump { addr: 8 },
            Op::SkipUnlessKeys { mask: 9, count: 10 },
            Op::SdWrite { file: SdFile::Boot11Protected, src: 11, len: 12 },
            Op::PowerOff,
            Op::ChainLoad { file: SdFile::SecondFirm },
            Op::Lock,
            Op::Boot,
            Op::InstallNand { src: 13, len: 14 },
            Op::WaitEntry11,
            Op::Halt,
        ];
        let bytes = encode_routine(&ops);
        assert_eq!(bytes.len() as u32, routine_len(ops.len()));
        let read = |a: u32, n: u32| bytes[a as usize..(a + n) as usize].to_vec();
        assert_eq!(decode_routine(read, 0).unwrap(), ops);
    }

    #[test]
    fn rejects_garbage() {
        let zeros = |_: u32, n: u32| vec![0u8; n as usize];
        assert_eq!(decode_routine(zeros, 0), Err(DecodeError::BadMagic));
        let mut bytes = encode_routine(&[Op::Return]);
        bytes[16] = 99;
        let read = |a: u32, n: u32| bytes[a as usize..(a + n) as usize].to_vec();
        assert_eq!(decode_routine(read, 0), Err(DecodeError::BadOpcode { index: 0, opcode: 99 }));
    }
}
