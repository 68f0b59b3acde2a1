//! Deterministic simulation of the two-processor boot.
//!
//! The ARM9 and ARM11 are scripted state machines. Their stock flows call
//! through hook-pointer slots in memory, take data aborts through a vector
//! word, and synchronise through shared words in ARM11 work RAM. Code that a
//! payload places in memory is a [`script`] routine. A single scheduler
//! alternates the two processors one step at a time.

pub mod machine;
pub mod memory;
pub mod payload;
pub mod report;
pub mod script;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use machine::{
    run_boot, run_exploit_chain, run_ntr_install_scenario, BootEnv, Machine, MachineConfig, NtrInstallReport,
    Stores, DEFAULT_WATCHDOG,
};
pub use memory::{MemoryMap, Region, RegionKind};
pub use payload::{build_staged_image, StageTwo, StagedImageOptions};
pub use report::{
    dump_keys, ntr_boot_keys, AbortRecord, BootOutcome, BootReport, BootSource, Event, EventKind, Exfiltrated,
    Inputs, Key, LoadVia, LockRegister, Proc, SectionLoad,
};

use memory::{ARM11_WRAM, BOOT9_DATA, BOOT_ROM11, BOOT_ROM9, IO_REGISTERS, VECTOR_PAGE};

/// NDMA register aperture inside the I/O region.
pub const NDMA_BASE: u32 = 0x1000_2000;
pub const NDMA_LEN: u32 = 0x100;
pub const NDMA_RECORD_LEN: usize = 16;

/// Device registers: region 1 below ARM11 work RAM, which the region also spans.
pub const IO_DEVICES: Region = Region::new(
    IO_REGISTERS.id,
    IO_REGISTERS.base,
    ARM11_WRAM.base - IO_REGISTERS.base,
    RegionKind::IoRegisters,
);

/// ARM9 data-abort vector word, inside the exception vector page.
pub const DABT_VECTOR: u32 = 0x0800_002C;
/// Stock data-abort handler: halts the processor.
pub const STOCK_DABT_HANDLER: u32 = 0xFFFF_0200;

/// Boot9 function-pointer slots (in DTCM) called after section loading.
pub const BOOT9_HOOK_A: u32 = 0xFFF0_0100;
pub const BOOT9_HOOK_B: u32 = 0xFFF0_0104;
pub const STOCK_HOOK_A: u32 = 0xFFFF_0400;
pub const STOCK_HOOK_B: u32 = 0xFFFF_0500;
/// Boot11 function-pointer slot in ARM11 work RAM.
pub const BOOT11_HOOK: u32 = 0x1FFF_FF10;
pub const STOCK_HOOK11: u32 = 0x0001_0100;

/// Cross-processor words in ARM11 work RAM.
pub const SYNC_LOADED: u32 = 0x1FFF_FF00;
pub const SYNC_ENTRY11: u32 = 0x1FFF_FF04;
pub const SYNC_ENTRY11_READY: u32 = 0x1FFF_FF08;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlacklistPolicy {
    /// Only the Boot9 data region is refused.
    #[default]
    Boot9DataOnly,
    /// Also refuses I/O registers, exception vectors and boot ROMs.
    Hardened,
}

impl std::str::FromStr for BlacklistPolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "boot9only" | "boot9_data_only" => Ok(BlacklistPolicy::Boot9DataOnly),
            "hardened" => Ok(BlacklistPolicy::Hardened),
            _ => Err(format!("unknown blacklist policy `{s}`")),
        }
    }
}

/// Whether a section of `size` bytes may be loaded at `dst`.
pub fn check_blacklist(dst: u32, size: u32, policy: BlacklistPolicy) -> bool {
    if BOOT9_DATA.overlaps(dst, size) {
        return false;
    }
    match policy {
        BlacklistPolicy::Boot9DataOnly => true,
        BlacklistPolicy::Hardened => ![IO_DEVICES, VECTOR_PAGE, BOOT_ROM9, BOOT_ROM11]
            .iter()
            .any(|r| r.overlaps(dst, size)),
    }
}

/// Cartridge boot needs a closed shell (or a magnet on the sensor), the
/// START + SELECT + X combination, and a cartridge. Anything else boots NAND.
pub fn select_boot_source(inputs: &Inputs) -> BootSource {
    let closed = inputs.shell_closed || inputs.magnet_applied;
    if closed && ntr_boot_keys().is_subset(&inputs.keys_held) && inputs.ntr_cart_present {
        BootSource::NtrCart
    } else {
        BootSource::Nand
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NdmaTrigger {
    Immediate,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NdmaRequest {
    pub src: u32,
    pub dst: u32,
    pub length: u32,
    pub trigger: NdmaTrigger,
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum NdmaError {
    #[error("NDMA record {0} has zero length")]
    ZeroLength(usize),
    #[error("NDMA record {index} has unknown trigger {trigger}")]
    BadTrigger { index: usize, trigger: u32 },
}

impl NdmaRequest {
    pub fn immediate(src: u32, dst: u32, length: u32) -> Self {
        NdmaRequest {
            src,
            dst,
            length,
            trigger: NdmaTrigger::Immediate,
        }
    }

    pub fn to_bytes(&self) -> [u8; NDMA_RECORD_LEN] {
        let mut out = [0u8; NDMA_RECORD_LEN];
        for (i, w) in [self.src, self.dst, self.length, 0].into_iter().enumerate() {
            out[i * 4..i * 4 + 4].copy_from_slice(&w.to_le_bytes());
        }
        out
    }

    /// Records followed by an all-zero terminator.
    pub fn encode_all(reqs: &[NdmaRequest]) -> Vec<u8> {
        let mut out: Vec<u8> = reqs.iter().flat_map(|r| r.to_bytes()).collect();
        out.extend_from_slice(&[0; NDMA_RECORD_LEN]);
        out
    }

    /// Decodes consecutive records up to an all-zero record or the end of
    /// `bytes`. A partial trailing record is ignored.
    pub fn decode_all(bytes: &[u8]) -> Result<Vec<NdmaRequest>, NdmaError> {
        let mut out = Vec::new();
        for (index, c) in bytes.chunks_exact(NDMA_RECORD_LEN).enumerate() {
            let w: [u32; 4] = std::array::from_fn(|j| u32::from_le_bytes(c[j * 4..j * 4 + 4].try_into().expect("4")));
            if w == [0; 4] {
                break;
            }
            if w[3] != 0 {
                return Err(NdmaError::BadTrigger { index, trigger: w[3] });
            }
            if w[2] == 0 {
                return Err(NdmaError::ZeroLength(index));
            }
            out.push(NdmaRequest::immediate(w[0], w[1], w[2]));
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    fn inputs(keys: &[Key], closed: bool, magnet: bool, cart: bool) -> Inputs {
        Inputs {
            keys_held: keys.iter().copied().collect::<BTreeSet<_>>(),
            shell_closed: closed,
            ntr_cart_present: cart,
            magnet_applied: magnet,
        }
    }

    #[test]
    fn boot_source_selection() {
        let full = [Key::Start, Key::Select, Key::X];
        assert_eq!(select_boot_source(&inputs(&full, true, false, true)), BootSource::NtrCart);
        assert_eq!(
            select_boot_source(&inputs(&[Key::Start, Key::Select], true, false, true)),
            BootSource::Nand
        );
        assert_eq!(select_boot_source(&inputs(&full, false, true, true)), BootSource::NtrCart);
        assert_eq!(select_boot_source(&inputs(&full, false, false, true)), BootSource::Nand);
        assert_eq!(select_boot_source(&inputs(&full, true, false, false)), BootSource::Nand);
        let mut extra = full.to_vec();
        extra.push(Key::L);
        assert_eq!(select_boot_source(&inputs(&extra, true, false, true)), BootSource::NtrCart);
    }

    #[test]
    fn blacklist_policies() {
        use BlacklistPolicy::*;
        assert!(!check_blacklist(0xFFFF_8000, 0x100, Boot9DataOnly));
        assert!(!check_blacklist(0xFFFE_FFF0, 0x20, Boot9DataOnly));
        assert!(check_blacklist(NDMA_BASE, 0x20, Boot9DataOnly));
        assert!(!check_blacklist(NDMA_BASE, 0x20, Hardened));
        assert!(check_blacklist(0x0808_0000, 0x1000, Hardened));
        assert!(!check_blacklist(0x0800_0000, 0x10, Hardened));
        assert!(check_blacklist(0x0800_0400, 0x10, Hardened));
        assert!(!check_blacklist(0x0001_0000, 0x10, Hardened));
        assert!(check_blacklist(0x1FF8_0000, 0x1000, Hardened));
        assert!(check_blacklist(0, 0x200, Hardened));
        assert!(!check_blacklist(0x1FF7_FFF0, 0x20, Hardened));
    }

    #[test]
    fn ndma_records_round_trip() {
        let reqs = vec![
            NdmaRequest::immediate(0xFFFF_8000, 0x0800_1000, 0x8000),
            NdmaRequest::immediate(1, 2, 3),
        ];
        let bytes = NdmaRequest::encode_all(&reqs);
        assert_eq!(bytes.len(), 48);
        assert_eq!(NdmaRequest::decode_all(&bytes).unwrap(), reqs);
        let mut bad = bytes.clone();
        bad[12] = 1;
        assert_eq!(
            NdmaRequest::decode_all(&bad),
            Err(NdmaError::BadTrigger { index: 0, trigger: 1 })
        );
        let mut zero = bytes;
        zero[8..12].fill(0);
        assert_eq!(NdmaRequest::decode_all(&zero), Err(NdmaError::ZeroLength(0)));
    }
}
