use std::collections::HashMap;

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegionKind {
    Fcram,
    IoRegisters,
    Arm9Mem,
    Dtcm,
    Itcm,
    Boot9Data,
    AxiWram,
    BootRom9,
    BootRom11,
    Arm11Wram,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Region {
    pub id: u32,
    pub base: u32,
    pub size: u32,
    pub kind: RegionKind,
}

impl Region {
    pub const fn new(id: u32, base: u32, size: u32, kind: RegionKind) -> Self {
        Region {
            id,
            base,
            size,
            kind,
        }
    }

    pub fn end(&self) -> u64 {
        self.base as u64 + self.size as u64
    }

    pub fn contains(&self, addr: u32) -> bool {
        (self.base as u64..self.end()).contains(&(addr as u64))
    }

    /// Whether `[addr, addr + len)` intersects the region.
    pub fn overlaps(&self, addr: u32, len: u32) -> bool {
        let (a, b) = (addr as u64, addr as u64 + len as u64);
        len > 0 && a < self.end() && (self.base as u64) < b
    }

    /// Whether `[addr, addr + len)` lies entirely inside the region.
    pub fn covers(&self, addr: u32, len: u32) -> bool {
        addr as u64 >= self.base as u64 && addr as u64 + len as u64 <= self.end()
    }
}

/// The eight ARM9 protection regions.
pub const ARM9_REGIONS: [Region; 8] = [
    Region::new(0, 0x2000_0000, 0x0800_0000, RegionKind::Fcram),
    Region::new(1, 0x1000_0000, 0x1000_0000, RegionKind::IoRegisters),
    Region::new(2, 0x0800_0000, 0x0010_0000, RegionKind::Arm9Mem),
    Region::new(3, 0x0800_0000, 0x0000_0400, RegionKind::Arm9Mem),
    Region::new(4, 0xFFF0_0000, 0x0000_4000, RegionKind::Dtcm),
    Region::new(5, 0x07FF_8000, 0x0000_8000, RegionKind::Itcm),
    Region::new(6, 0xFFFF_0000, 0x0001_0000, RegionKind::Boot9Data),
    Region::new(7, 0x1FFF_E000, 0x0000_0800, RegionKind::AxiWram),
];

pub const BOOT_ROM9: Region = Region::new(8, 0xFFFF_0000, 0x0001_0000, RegionKind::BootRom9);
pub const BOOT_ROM11: Region = Region::new(9, 0x0001_0000, 0x0001_0000, RegionKind::BootRom11);
pub const ARM11_WRAM: Region = Region::new(10, 0x1FF8_0000, 0x0008_0000, RegionKind::Arm11Wram);

/// Region 3: the ARM9 exception vector page.
pub const VECTOR_PAGE: Region = ARM9_REGIONS[3];
pub const BOOT9_DATA: Region = ARM9_REGIONS[6];
pub const IO_REGISTERS: Region = ARM9_REGIONS[1];
pub const FCRAM: Region = ARM9_REGIONS[0];

/// Size of each protected boot-ROM half.
pub const PROTECTED_LEN: u32 = 0x8000;
pub const BOOT9_PROTECTED: u32 = 0xFFFF_8000;
pub const BOOT11_PROTECTED: u32 = 0x0001_8000;

const PAGE: usize = 0x1000;

/// Flat 32-bit physical memory with lazily allocated pages. Unwritten bytes
/// read as zero. Access rules live in the machine, not here.
#[derive(Clone, Debug)]
pub struct MemoryMap {
    pub regions: Vec<Region>,
    pages: HashMap<u32, Box<[u8; PAGE]>>,
}

impl Default for MemoryMap {
    fn default() -> Self {
        Self::new()
    }
}

impl MemoryMap {
    pub fn new() -> Self {
        let mut regions = ARM9_REGIONS.to_vec();
        regions.extend([BOOT_ROM9, BOOT_ROM11, ARM11_WRAM]);
        MemoryMap {
            regions,
            pages: HashMap::new(),
        }
    }

    pub fn region(&self, id: u32) -> Option<&Region> {
        self.regions.iter().find(|r| r.id == id)
    }

    pub fn read(&self, addr: u32, len: u32) -> Vec<u8> {
        let mut out = Vec::with_capacity(len as usize);
        let mut a = addr as u64;
        let end = addr as u64 + len as u64;
        while a < end {
            let page = (a / PAGE as u64) as u32;
            let off = (a % PAGE as u64) as usize;
            let n = ((PAGE - off) as u64).min(end - a) as usize;
            match self.pages.get(&page) {
                Some(p) => out.extend_from_slice(&p[off..off + n]),
                None => out.resize(out.len() + n, 0),
            }
            a += n as u64;
        }
        out
    }

    pub fn write(&mut self, addr: u32, data: &[u8]) {
        let mut a = addr as u64;
        let mut rest = data;
        while !rest.is_empty() {
            let page = (a / PAGE as u64) as u32;
            let off = (a % PAGE as u64) as usize;
            let n = (PAGE - off).min(rest.len());
            let p = self.pages.entry(page).or_insert_with(|| Box::new([0; PAGE]));
            p[off..off + n].copy_from_slice(&rest[..n]);
            rest = &rest[n..];
            a += n as u64;
        }
    }

    pub fn read_u32(&self, addr: u32) -> u32 {
        u32::from_le_bytes(self.read(addr, 4).try_into().expect("4 bytes"))
    }

    pub fn write_u32(&mut self, addr: u32, v: u32) {
        self.write(addr, &v.to_le_bytes());
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn arm9_rows_are_exact() {
        let rows: Vec<_> = ARM9_REGIONS.iter().map(|r| (r.id, r.base, r.size)).collect();
        assert_eq!(
            rows,
            vec![
                (0, 0x20000000, 0x08000000),
                (1, 0x10000000, 0x10000000),
                (2, 0x08000000, 0x00100000),
                (3, 0x08000000, 0x00000400),
                (4, 0xFFF00000, 0x00004000),
                (5, 0x07FF8000, 0x00008000),
                (6, 0xFFFF0000, 0x00010000),
                (7, 0x1FFFE000, 0x00000800),
            ]
        );
        assert_eq!(MemoryMap::new().regions.len(), 11);
    }

    #[test]
    fn sparse_reads_and_writes_cross_pages() {
        let mut m = MemoryMap::new();
        assert_eq!(m.read(0x0800_0ffe, 4), vec![0; 4]);
        m.write(0x0800_0ffe, &[1, 2, 3, 4]);
        assert_eq!(m.read(0x0800_0ffd, 6), vec![0, 1, 2, 3, 4, 0]);
        m.write_u32(0xffff_fffc, 0xdead_beef);
        assert_eq!(m.read_u32(0xffff_fffc), 0xdead_beef);
    }

    #[test]
    fn overlap_arithmetic_at_top_of_space() {
        assert!(BOOT9_DATA.overlaps(0xffff_fff0, 0x10));
        assert!(BOOT9_DATA.covers(BOOT9_PROTECTED, PROTECTED_LEN));
        assert!(!BOOT9_DATA.overlaps(0xfffe_0000, 0x10000));
        assert!(!BOOT9_DATA.overlaps(0xffff_0000, 0));
    }
}
