//! The four-section staged image.
//!
//! * Section 0, ARM11 work RAM: the Boot11 hook and the ARM11 stage-2 wait.
//! * Section 1, ARM9 memory: abort handler, the vector word the NDMA copies,
//!   both Boot9 hooks and the ARM9 stage 2.
//! * Section 2, NDMA registers: one request copying the vector word over the
//!   data-abort vector.
//! * Section 3, address 0: junk whose copy faults.

use super::memory::{BOOT11_PROTECTED, BOOT9_PROTECTED, PROTECTED_LEN};
use super::report::{dump_keys, Key};
use super::script::{encode_routine, Op, SdFile};
use super::{NdmaRequest, BOOT11_HOOK, BOOT9_HOOK_A, BOOT9_HOOK_B, DABT_VECTOR, NDMA_BASE};
use crate::firm::{build_firm, CopyMethod, FirmEntry, FirmError, FirmImage};

pub const SEC0_BASE: u32 = 0x1FF8_0000;
pub const BOOT11_HOOK_ROUTINE: u32 = SEC0_BASE;
pub const ARM11_STAGE2: u32 = SEC0_BASE + 0x200;

pub const SEC1_BASE: u32 = 0x0808_0000;
pub const ABORT_HANDLER: u32 = SEC1_BASE;
pub const VECTOR_WORD: u32 = SEC1_BASE + 0x200;
pub const HOOK1: u32 = SEC1_BASE + 0x300;
pub const HOOK2: u32 = SEC1_BASE + 0x400;
pub const ARM9_STAGE2: u32 = SEC1_BASE + 0x600;
pub const EMBEDDED_IMAGE: u32 = SEC1_BASE + 0x1000;
/// Largest image that fits between [`EMBEDDED_IMAGE`] and the exfiltration buffers.
pub const MAX_EMBEDDED_IMAGE: usize = (EXFIL_BOOT9 - EMBEDDED_IMAGE) as usize;

/// Cross-processor flags used by the hooks.
pub const FLAG_HOOKED: u32 = 0x1FFF_FF20;
pub const FLAG_BOOT11_STAGED: u32 = 0x1FFF_FF24;
pub const FLAG_BOOT9_DONE: u32 = 0x1FFF_FF28;
/// ARM11 work RAM buffer the Boot11 half passes through.
pub const AXI_STAGING: u32 = 0x1FF9_0000;
pub const EXFIL_BOOT9: u32 = 0x080C_0000;
pub const EXFIL_BOOT11: u32 = 0x080C_8000;

pub const JUNK_LEN: usize = 0x200;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum StageTwo {
    /// Dump both halves to SD if the dump keys are held, else lock and
    /// chain-load `second.firm` from SD.
    DumpOrChain,
    /// Write `nand_image` to the NAND firmware partition and power off.
    Install { nand_image: Vec<u8> },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StagedImageOptions {
    pub stage_two: StageTwo,
    /// Leave out the section carrying the abort handler.
    pub omit_handler_section: bool,
}

impl Default for StagedImageOptions {
    fn default() -> Self {
        StagedImageOptions {
            stage_two: StageTwo::DumpOrChain,
            omit_handler_section: false,
        }
    }
}

fn place(buf: &mut Vec<u8>, offset: u32, bytes: &[u8]) {
    let o = offset as usize;
    if buf.len() < o + bytes.len() {
        buf.resize(o + bytes.len(), 0);
    }
    buf[o..o + bytes.len()].copy_from_slice(bytes);
}

fn arm9_stage_two(stage: &StageTwo) -> Vec<Op> {
    match stage {
        StageTwo::DumpOrChain => vec![
            Op::SkipUnlessKeys {
                mask: Key::mask(&dump_keys()),
                count: 4,
            },
            Op::Lock,
            Op::SdWrite {
                file: SdFile::Boot9Protected,
                src: EXFIL_BOOT9,
                len: PROTECTED_LEN,
            },
            Op::SdWrite {
                file: SdFile::Boot11Protected,
                src: EXFIL_BOOT11,
                len: PROTECTED_LEN,
            },
            Op::PowerOff,
            Op::Lock,
            Op::ChainLoad {
                file: SdFile::SecondFirm,
            },
            Op::Boot,
        ],
        StageTwo::Install { nand_image } => vec![
            Op::InstallNand {
                src: EMBEDDED_IMAGE,
                len: nand_image.len() as u32,
            },
            Op::PowerOff,
        ],
    }
}

/// Builds the unsigned staged image.
pub fn build_staged_image(opts: &StagedImageOptions) -> Result<FirmImage, FirmError> {
    let mut sec0 = Vec::new();
    let boot11_hook = [
        Op::WaitEq {
            addr: FLAG_HOOKED,
            value: 1,
        },
        Op::Copy {
            src: BOOT11_PROTECTED,
            dst: AXI_STAGING,
            len: PROTECTED_LEN,
        },
        Op::Write32 {
            addr: FLAG_BOOT11_STAGED,
            value: 1,
        },
        Op::WaitEq {
            addr: FLAG_BOOT9_DONE,
            value: 1,
        },
        Op::Jump { addr: ARM11_STAGE2 },
    ];
    place(&mut sec0, BOOT11_HOOK_ROUTINE - SEC0_BASE, &encode_routine(&boot11_hook));
    place(&mut sec0, ARM11_STAGE2 - SEC0_BASE, &encode_routine(&[Op::WaitEntry11]));

    let mut sec1 = Vec::new();
    let handler = [
        Op::Write32 {
            addr: BOOT9_HOOK_A,
            value: HOOK1,
        },
        Op::Write32 {
            addr: BOOT9_HOOK_B,
            value: HOOK2,
        },
        Op::SkipFault,
        Op::Return,
    ];
    let hook1 = [
        Op::Write32 {
            addr: BOOT11_HOOK,
            value: BOOT11_HOOK_ROUTINE,
        },
        Op::MpuSetup,
        Op::Write32 {
            addr: FLAG_HOOKED,
            value: 1,
        },
        Op::Return,
    ];
    let hook2 = [
        Op::WaitEq {
            addr: FLAG_BOOT11_STAGED,
            value: 1,
        },
        Op::Copy {
            src: AXI_STAGING,
            dst: EXFIL_BOOT11,
            len: PROTECTED_LEN,
        },
        Op::Write32 {
            addr: FLAG_BOOT9_DONE,
            value: 1,
        },
        Op::Copy {
            src: BOOT9_PROTECTED,
            dst: EXFIL_BOOT9,
            len: PROTECTED_LEN,
        },
        Op::Jump { addr: ARM9_STAGE2 },
    ];
    place(&mut sec1, ABORT_HANDLER - SEC1_BASE, &encode_routine(&handler));
    place(&mut sec1, VECTOR_WORD - SEC1_BASE, &ABORT_HANDLER.to_le_bytes());
    place(&mut sec1, HOOK1 - SEC1_BASE, &encode_routine(&hook1));
    place(&mut sec1, HOOK2 - SEC1_BASE, &encode_routine(&hook2));
    place(&mut sec1, ARM9_STAGE2 - SEC1_BASE, &encode_routine(&arm9_stage_two(&opts.stage_two)));
    if let StageTwo::Install { nand_image } = &opts.stage_two {
        if nand_image.len() > MAX_EMBEDDED_IMAGE {
            return Err(FirmError::TooLarge(1));
        }
        place(&mut sec1, EMBEDDED_IMAGE - SEC1_BASE, nand_image);
    }

    let sec2 = NdmaRequest::encode_all(&[NdmaRequest::immediate(VECTOR_WORD, DABT_VECTOR, 4)]);
    let sec3 = vec![0xA5; JUNK_LEN];

    let mut entries = vec![FirmEntry::new(SEC0_BASE, CopyMethod::CpuMemcpy, sec0)];
    if !opts.omit_handler_section {
        entries.push(FirmEntry::new(SEC1_BASE, CopyMethod::CpuMemcpy, sec1));
    }
    entries.push(FirmEntry::new(NDMA_BASE, CopyMethod::CpuMemcpy, sec2));
    entries.push(FirmEntry::new(0, CopyMethod::Ndma, sec3));
    build_firm(&entries, ARM9_STAGE2, ARM11_STAGE2, 0)
}
