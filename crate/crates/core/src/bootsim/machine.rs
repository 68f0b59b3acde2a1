use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::memory::{
    MemoryMap, Region, ARM11_WRAM, ARM9_REGIONS, BOOT11_PROTECTED, BOOT9_PROTECTED, BOOT_ROM11, BOOT_ROM9, FCRAM,
    IO_REGISTERS, PROTECTED_LEN,
};
use super::report::{
    AbortRecord, BootOutcome, BootReport, BootSource, Event, EventKind, Exfiltrated, Inputs, Key, LoadVia,
    LockRegister, Proc, SectionLoad,
};
use super::script::{decode_routine, Op, SdFile};
use super::*;
use crate::firm::{validate_firm, FirmImage, SECTION_COUNT};
use crate::modmath::{Console, KeyRegistry, KeySlot, SigType};
use crate::seed::Seed;
use crate::sigparser::{ParserConfig, StackModel, Verdict};

pub const DEFAULT_WATCHDOG: u64 = 1_000_000;
const ROM_LEN: usize = 0x10000;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MachineConfig {
    pub console: Console,
    /// Forces a boot source; the only way to reach [`BootSource::WifiSpi`].
    pub source_override: Option<BootSource>,
    pub watchdog: u64,
}

impl Default for MachineConfig {
    fn default() -> Self {
        MachineConfig {
            console: Console::Retail,
            source_override: None,
            watchdog: DEFAULT_WATCHDOG,
        }
    }
}

/// What Boot9 verifies against.
#[derive(Clone, Copy, Debug)]
pub struct BootEnv<'a> {
    pub registry: &'a KeyRegistry,
    pub parser: &'a ParserConfig,
    pub policy: BlacklistPolicy,
}

/// Persistent storage that survives across boots.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Stores {
    pub nand: Option<Vec<u8>>,
    pub sd: BTreeMap<String, Vec<u8>>,
    pub cart: Option<Vec<u8>>,
    pub spi: Option<Vec<u8>>,
}

const NAND_FILE: &str = "nand/firm0.bin";
const CART_FILE: &str = "cart/rom.bin";
const SPI_FILE: &str = "spi/firm.bin";
const SD_DIR: &str = "sd";

impl Stores {
    fn slot(&mut self, source: BootSource) -> &mut Option<Vec<u8>> {
        match source {
            BootSource::Nand => &mut self.nand,
            BootSource::NtrCart => &mut self.cart,
            BootSource::WifiSpi => &mut self.spi,
        }
    }

    /// Writes every store as a flat file under `dir`.
    pub fn save(&self, dir: &Path) -> std::io::Result<()> {
        for (rel, data) in [(NAND_FILE, &self.nand), (CART_FILE, &self.cart), (SPI_FILE, &self.spi)] {
            if let Some(d) = data {
                let p = dir.join(rel);
                std::fs::create_dir_all(p.parent().expect("has parent"))?;
                std::fs::write(p, d)?;
            }
        }
        let sd = dir.join(SD_DIR);
        std::fs::create_dir_all(&sd)?;
        for (name, data) in &self.sd {
            std::fs::write(sd.join(name), data)?;
        }
        Ok(())
    }

    /// Reads stores saved by [`Stores::save`]; missing files are empty stores.
    pub fn load(dir: &Path) -> std::io::Result<Self> {
        let opt = |rel: &str| -> std::io::Result<Option<Vec<u8>>> {
            let p = dir.join(rel);
            if p.is_file() {
                std::fs::read(p).map(Some)
            } else {
                Ok(None)
            }
        };
        let mut sd = BTreeMap::new();
        let sd_dir = dir.join(SD_DIR);
        if sd_dir.is_dir() {
            for entry in std::fs::read_dir(sd_dir)? {
                let entry = entry?;
                if entry.file_type()?.is_file() {
                    sd.insert(entry.file_name().to_string_lossy().into_owned(), std::fs::read(entry.path())?);
                }
            }
        }
        Ok(Stores {
            nand: opt(NAND_FILE)?,
            sd,
            cart: opt(CART_FILE)?,
            spi: opt(SPI_FILE)?,
        })
    }
}

/// A console: configuration, held inputs, persistent stores and boot ROMs
/// seeded at construction. Each boot starts from fresh volatile state.
#[derive(Clone, Debug)]
pub struct Machine {
    pub config: MachineConfig,
    pub inputs: Inputs,
    pub stores: Stores,
    seed: Seed,
    boot9_rom: Vec<u8>,
    boot11_rom: Vec<u8>,
}

impl Machine {
    pub fn new(seed: Seed) -> Self {
        Machine {
            config: MachineConfig::default(),
            inputs: Inputs::default(),
            stores: Stores::default(),
            seed,
            boot9_rom: seed.stream("boot9-rom").bytes(ROM_LEN),
            boot11_rom: seed.stream("boot11-rom").bytes(ROM_LEN),
        }
    }

    pub fn with_config(mut self, config: MachineConfig) -> Self {
        self.config = config;
        self
    }

    pub fn seed(&self) -> Seed {
        self.seed
    }

    pub fn boot9_protected(&self) -> &[u8] {
        &self.boot9_rom[ROM_LEN - PROTECTED_LEN as usize..]
    }

    pub fn boot11_protected(&self) -> &[u8] {
        &self.boot11_rom[ROM_LEN - PROTECTED_LEN as usize..]
    }

    /// The source the next boot will use.
    pub fn boot_source(&self) -> BootSource {
        self.config
            .source_override
            .unwrap_or_else(|| select_boot_source(&self.inputs))
    }

    /// Powers on and runs until the ARM9 reaches an entry point, powers
    /// off, fails, halts, or the watchdog expires.
    pub fn boot(&mut self, env: BootEnv<'_>) -> BootReport {
        Run::new(self, env).run()
    }
}

/// Boots `image` from whichever source the inputs select.
pub fn run_boot(machine: &mut Machine, image: &[u8], env: BootEnv<'_>) -> BootReport {
    let source = machine.boot_source();
    *machine.stores.slot(source) = Some(image.to_vec());
    machine.boot(env)
}

/// Boots a staged image from NAND with `second` on the SD card.
pub fn run_exploit_chain(
    machine: &mut Machine,
    staged: &[u8],
    second: Option<&[u8]>,
    keys_held: &std::collections::BTreeSet<Key>,
    env: BootEnv<'_>,
) -> BootReport {
    machine.stores.nand = Some(staged.to_vec());
    if let Some(s) = second {
        machine.stores.sd.insert(SdFile::SecondFirm.name().to_string(), s.to_vec());
    }
    machine.inputs.keys_held = keys_held.clone();
    machine.boot(env)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NtrInstallReport {
    pub cart_boot: BootReport,
    /// The follow-up NAND boot, run only if the cartridge boot installed an image.
    pub nand_boot: Option<BootReport>,
}

/// Inserts `flashcart` and boots holding the cartridge key combination with
/// the shell closed. Cartridge presence is taken from the machine's inputs.
/// If the cartridge boot writes NAND, the console is booted again from NAND
/// with no keys held and the cartridge removed.
pub fn run_ntr_install_scenario(machine: &mut Machine, flashcart: &[u8], env: BootEnv<'_>) -> NtrInstallReport {
    machine.stores.cart = Some(flashcart.to_vec());
    if !machine.inputs.magnet_applied {
        machine.inputs.shell_closed = true;
    }
    machine.inputs.keys_held = ntr_boot_keys();
    let cart_boot = machine.boot(env);
    let nand_boot = cart_boot.nand_installed.then(|| {
        machine.inputs.keys_held.clear();
        machine.inputs.ntr_cart_present = false;
        machine.boot(env)
    });
    NtrInstallReport { cart_boot, nand_boot }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Stock {
    KeyInit,
    SelectSource,
    ReadHeader,
    Verify,
    LoadSection(usize),
    HookA,
    SignalLoaded,
    HookB,
    Lock,
    Jump,
    Init11,
    WaitLoaded11,
    Hook11,
    WaitEntry11,
    /// Control left the stock flow through a routine jump.
    Detached,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum FrameKind {
    Handler { section: usize, skip: bool },
    Hook,
    Detached,
}

#[derive(Clone, Debug)]
struct Frame {
    ops: Vec<Op>,
    pc: usize,
    kind: FrameKind,
}

#[derive(Clone, Debug)]
struct Cpu {
    stock: Stock,
    frames: Vec<Frame>,
    stopped: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Tick {
    Ran,
    Waiting,
    Stopped,
}

/// Write-once lock register with per-field tracking.
#[derive(Clone, Copy, Debug, Default)]
struct Locks {
    reg: LockRegister,
    written: [bool; 4],
}

impl Locks {
    /// Writes `true` to every field; returns how many fields were already written.
    fn lock_all(&mut self) -> usize {
        let mut violations = 0;
        let fields = [
            &mut self.reg.boot9_locked,
            &mut self.reg.boot11_locked,
            &mut self.reg.fcram9_enabled,
            &mut self.reg.fcram11_enabled,
        ];
        for (field, written) in fields.into_iter().zip(self.written.iter_mut()) {
            if *written {
                violations += 1;
            } else {
                *field = true;
                *written = true;
            }
        }
        violations
    }
}

struct Run<'m, 'e> {
    machine: &'m mut Machine,
    env: BootEnv<'e>,
    mem: MemoryMap,
    locks: Locks,
    step: u64,
    events: Vec<Event>,
    outcome: Option<BootOutcome>,
    arm9: Cpu,
    arm11: Cpu,
    image: Option<FirmImage>,
    source: Option<BootSource>,
    slot: Option<KeySlot>,
    verdict: Option<crate::sigparser::ParseOutcome>,
    sections_loaded: Vec<SectionLoad>,
    aborts: Vec<AbortRecord>,
    exfiltrated: Exfiltrated,
    reached_entry: bool,
    sd_files: Vec<String>,
    nand_installed: bool,
    chain_entry: Option<(u32, u32)>,
}

fn fault_msg(addr: u32) -> String {
    format!("data abort at {addr:#010x}")
}

impl<'m, 'e> Run<'m, 'e> {
    fn new(machine: &'m mut Machine, env: BootEnv<'e>) -> Self {
        let mut mem = MemoryMap::new();
        mem.write(BOOT_ROM9.base, &machine.boot9_rom);
        mem.write(BOOT_ROM11.base, &machine.boot11_rom);
        mem.write_u32(DABT_VECTOR, STOCK_DABT_HANDLER);
        mem.write_u32(BOOT9_HOOK_A, STOCK_HOOK_A);
        mem.write_u32(BOOT9_HOOK_B, STOCK_HOOK_B);
        mem.write_u32(BOOT11_HOOK, STOCK_HOOK11);
        let cpu = |stock| Cpu {
            stock,
            frames: Vec::new(),
            stopped: false,
        };
        Run {
            machine,
            env,
            mem,
            locks: Locks::default(),
            step: 0,
            events: Vec::new(),
            outcome: None,
            arm9: cpu(Stock::KeyInit),
            arm11: cpu(Stock::Init11),
            image: None,
            source: None,
            slot: None,
            verdict: None,
            sections_loaded: Vec::new(),
            aborts: Vec::new(),
            exfiltrated: Exfiltrated::default(),
            reached_entry: false,
            sd_files: Vec::new(),
            nand_installed: false,
            chain_entry: None,
        }
    }

    fn run(mut self) -> BootReport {
        let watchdog = self.machine.config.watchdog;
        loop {
            if self.arm9.stopped {
                while !self.arm11.stopped && self.step < watchdog {
                    if self.tick(Proc::Arm11) == Tick::Waiting {
                        break;
                    }
                }
                break;
            }
            if self.step >= watchdog {
                self.event(Proc::Arm9, EventKind::Watchdog, 0, 0);
                self.outcome = Some(BootOutcome::Failure(format!("watchdog expired after {} steps", self.step)));
                break;
            }
            self.tick(Proc::Arm9);
            if !self.arm11.stopped {
                self.tick(Proc::Arm11);
            }
        }
        BootReport {
            boot_source: self.source,
            key_slot: self.slot,
            signature_verdict: self.verdict,
            sections_loaded: self.sections_loaded,
            aborts: self.aborts,
            exfiltrated: self.exfiltrated,
            reached_entry: self.reached_entry,
            locks_final: self.locks.reg,
            outcome: self
                .outcome
                .unwrap_or_else(|| BootOutcome::Halt("ARM9 stopped without an outcome".into())),
            sd_files: self.sd_files,
            nand_installed: self.nand_installed,
            steps: self.step,
            events: self.events,
        }
    }

    fn event(&mut self, proc: Proc, kind: EventKind, addr: u32, len: u32) {
        self.events.push(Event {
            step: self.step,
            proc,
            kind,
            addr,
            len,
        });
    }

    fn cpu(&mut self, proc: Proc) -> &mut Cpu {
        match proc {
            Proc::Arm9 => &mut self.arm9,
            Proc::Arm11 => &mut self.arm11,
        }
    }

    /// Stops `proc`. Any outcome from the ARM9, and a power-off from either
    /// processor, ends the boot.
    fn stop(&mut self, proc: Proc, outcome: BootOutcome) -> Tick {
        match &outcome {
            BootOutcome::Failure(_) => self.event(proc, EventKind::Failure, 0, 0),
            BootOutcome::Halt(_) => self.event(proc, EventKind::Halt, 0, 0),
            _ => {}
        }
        let powered_off = outcome == BootOutcome::PoweredOff;
        if proc == Proc::Arm9 || powered_off {
            self.outcome.get_or_insert(outcome);
            self.arm9.stopped = true;
        }
        if powered_off {
            self.arm11.stopped = true;
        }
        self.cpu(proc).stopped = true;
        Tick::Stopped
    }

    fn visible_regions(&self, proc: Proc) -> Vec<Region> {
        let r = self.locks.reg;
        match proc {
            Proc::Arm9 => ARM9_REGIONS
                .iter()
                .copied()
                .filter(|x| x.id != FCRAM.id || r.fcram9_enabled)
                .chain([BOOT_ROM9, ARM11_WRAM])
                .collect(),
            Proc::Arm11 => {
                let mut v = vec![BOOT_ROM11, ARM11_WRAM, IO_REGISTERS];
                if r.fcram11_enabled {
                    v.push(FCRAM);
                }
                v
            }
        }
    }

    fn visible(&self, proc: Proc, addr: u32, len: u32) -> bool {
        self.visible_regions(proc).iter().any(|r| r.covers(addr, len.max(1)))
    }

    /// Physical read with lock semantics but no visibility check.
    fn phys_read(&mut self, proc: Proc, addr: u32, len: u32) -> Vec<u8> {
        let mut data = self.mem.read(addr, len);
        let halves = [
            (BOOT9_PROTECTED, self.locks.reg.boot9_locked, true),
            (BOOT11_PROTECTED, self.locks.reg.boot11_locked, false),
        ];
        for (base, locked, is9) in halves {
            let half = Region::new(u32::MAX, base, PROTECTED_LEN, super::RegionKind::BootRom9);
            if !half.overlaps(addr, len) {
                continue;
            }
            let lo = base.max(addr);
            let hi = (half.end()).min(addr as u64 + len as u64);
            let n = (hi - lo as u64) as u32;
            if locked {
                let off = (lo - addr) as usize;
                data[off..off + n as usize].fill(0);
                self.event(proc, EventKind::LockViolation, lo, n);
            } else {
                self.event(proc, EventKind::ProtectedRead, lo, n);
                if n == PROTECTED_LEN {
                    let off = (lo - addr) as usize;
                    let bytes = data[off..off + n as usize].to_vec();
                    let slot = if is9 {
                        &mut self.exfiltrated.boot9_protected
                    } else {
                        &mut self.exfiltrated.boot11_protected
                    };
                    slot.get_or_insert(bytes);
                }
            }
        }
        data
    }

    fn phys_write(&mut self, proc: Proc, addr: u32, data: &[u8]) {
        let len = data.len() as u32;
        if BOOT_ROM9.overlaps(addr, len) || BOOT_ROM11.overlaps(addr, len) {
            self.event(proc, EventKind::RomWriteIgnored, addr, len);
        } else {
            self.mem.write(addr, data);
        }
    }

    fn cpu_read(&mut self, proc: Proc, addr: u32, len: u32) -> Result<Vec<u8>, u32> {
        if !self.visible(proc, addr, len) {
            return Err(addr);
        }
        Ok(self.phys_read(proc, addr, len))
    }

    fn cpu_write(&mut self, proc: Proc, addr: u32, data: &[u8]) -> Result<(), u32> {
        if !self.visible(proc, addr, data.len() as u32) {
            return Err(addr);
        }
        self.phys_write(proc, addr, data);
        Ok(())
    }

    fn read_word(&mut self, proc: Proc, addr: u32) -> Result<u32, u32> {
        let b = self.cpu_read(proc, addr, 4)?;
        Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")))
    }

    fn load_routine(&self, proc: Proc, addr: u32) -> Option<Vec<Op>> {
        if !self.visible(proc, addr, 16) {
            return None;
        }
        let mem = &self.mem;
        let ops = decode_routine(|a, n| mem.read(a, n), addr).ok()?;
        let body = 16 + ops.len() as u32 * script::OP_LEN;
        self.visible(proc, addr, body).then_some(ops)
    }

    fn tick(&mut self, proc: Proc) -> Tick {
        let t = if self.cpu(proc).frames.is_empty() {
            self.stock_step(proc)
        } else {
            self.routine_step(proc)
        };
        self.step += 1;
        t
    }

    fn lock(&mut self, proc: Proc) {
        let violations = self.locks.lock_all();
        self.event(proc, EventKind::Lock, 0, 0);
        if violations > 0 {
            self.event(proc, EventKind::LockViolation, 0, violations as u32);
        }
    }

    fn signal_entry(&mut self, proc: Proc, arm9_entry: u32, arm11_entry: u32) -> Tick {
        self.mem.write_u32(SYNC_ENTRY11, arm11_entry);
        self.mem.write_u32(SYNC_ENTRY11_READY, 1);
        self.event(proc, EventKind::Entry, arm9_entry, 0);
        self.reached_entry = true;
        self.stop(proc, BootOutcome::Booted)
    }

    fn wait_entry11(&mut self, proc: Proc) -> Tick {
        if self.mem.read_u32(SYNC_ENTRY11_READY) != 1 {
            return Tick::Waiting;
        }
        let entry = self.mem.read_u32(SYNC_ENTRY11);
        self.event(proc, EventKind::Entry, entry, 0);
        self.cpu(proc).stopped = true;
        Tick::Stopped
    }

    /// Calls the routine a hook slot points at, unless it holds the stock value.
    fn call_hook(&mut self, proc: Proc, slot: u32, stock_value: u32, next: Stock) -> Tick {
        let target = self.mem.read_u32(slot);
        self.event(proc, EventKind::HookCall, target, 0);
        self.cpu(proc).stock = next;
        if target == stock_value {
            return Tick::Ran;
        }
        match self.load_routine(proc, target) {
            Some(ops) => {
                self.cpu(proc).frames.push(Frame {
                    ops,
                    pc: 0,
                    kind: FrameKind::Hook,
                });
                Tick::Ran
            }
            None => self.stop(proc, BootOutcome::Halt(format!("hook jumped to invalid code at {target:#010x}"))),
        }
    }

    fn stock_step(&mut self, proc: Proc) -> Tick {
        let stock = self.cpu(proc).stock;
        match stock {
            Stock::KeyInit => {
                self.event(proc, EventKind::KeyInit, 0, 0);
                self.arm9.stock = Stock::SelectSource;
                Tick::Ran
            }
            Stock::SelectSource => {
                let source = self.machine.boot_source();
                let sig_type = match source {
                    BootSource::Nand => SigType::NandBoot,
                    _ => SigType::NonNandBoot,
                };
                self.source = Some(source);
                self.slot = Some(KeySlot::new(self.machine.config.console, sig_type));
                self.event(proc, EventKind::BootSource, source as u32, 0);
                self.arm9.stock = Stock::ReadHeader;
                Tick::Ran
            }
            Stock::ReadHeader => {
                let source = self.source.expect("source selected");
                let Some(bytes) = self.machine.stores.slot(source).clone() else {
                    return self.stop(proc, BootOutcome::Failure(format!("no firmware image on {source:?}")));
                };
                self.event(proc, EventKind::ReadHeader, 0, crate::firm::HEADER_LEN as u32);
                match FirmImage::parse(&bytes) {
                    Ok(img) => {
                        self.image = Some(img);
                        self.arm9.stock = Stock::Verify;
                        Tick::Ran
                    }
                    Err(e) => self.stop(proc, BootOutcome::Failure(format!("malformed image: {e}"))),
                }
            }
            Stock::Verify => self.verify(proc),
            Stock::LoadSection(i) => self.load_section(proc, i),
            Stock::HookA => self.call_hook(proc, BOOT9_HOOK_A, STOCK_HOOK_A, Stock::SignalLoaded),
            Stock::SignalLoaded => {
                self.mem.write_u32(SYNC_LOADED, 1);
                self.event(proc, EventKind::SignalLoaded, SYNC_LOADED, 4);
                self.arm9.stock = Stock::HookB;
                Tick::Ran
            }
            Stock::HookB => self.call_hook(proc, BOOT9_HOOK_B, STOCK_HOOK_B, Stock::Lock),
            Stock::Lock => {
                self.lock(proc);
                self.arm9.stock = Stock::Jump;
                Tick::Ran
            }
            Stock::Jump => {
                let h = &self.image.as_ref().expect("image read").header;
                let (a9, a11) = (h.arm9_entry, h.arm11_entry);
                self.signal_entry(proc, a9, a11)
            }
            Stock::Init11 => {
                self.arm11.stock = Stock::WaitLoaded11;
                Tick::Ran
            }
            Stock::WaitLoaded11 => {
                if self.mem.read_u32(SYNC_LOADED) == 1 {
                    self.arm11.stock = Stock::Hook11;
                    Tick::Ran
                } else {
                    Tick::Waiting
                }
            }
            Stock::Hook11 => self.call_hook(proc, BOOT11_HOOK, STOCK_HOOK11, Stock::WaitEntry11),
            Stock::WaitEntry11 => self.wait_entry11(proc),
            Stock::Detached => self.stop(proc, BootOutcome::Halt("detached with no routine".into())),
        }
    }

    fn verify(&mut self, proc: Proc) -> Tick {
        let slot = self.slot.expect("slot selected");
        let Some(key) = self.env.registry.get(slot) else {
            return self.stop(proc, BootOutcome::Failure(format!("no public key in slot {slot}")));
        };
        let stack = StackModel::boot9(key.block_length());
        let image = self.image.as_ref().expect("image read");
        let v = match validate_firm(image, key, self.env.parser, &stack) {
            Ok(v) => v,
            Err(e) => return self.stop(proc, BootOutcome::Failure(format!("validation error: {e}"))),
        };
        self.verdict = Some(v.signature);
        self.event(proc, EventKind::Verify, 0, key.block_length() as u32);
        match v.signature.verdict {
            Verdict::Accept => match v.first_bad_section {
                Some(i) => self.stop(proc, BootOutcome::Failure(format!("section {i} hash mismatch"))),
                None => {
                    self.arm9.stock = Stock::LoadSection(0);
                    Tick::Ran
                }
            },
            Verdict::Reject(r) => self.stop(proc, BootOutcome::Failure(format!("signature rejected: {r:?}"))),
            Verdict::OutOfBounds => self.stop(
                proc,
                BootOutcome::Halt("signature parser read outside the stack".into()),
            ),
        }
    }

    fn load_section(&mut self, proc: Proc, i: usize) -> Tick {
        if i >= SECTION_COUNT {
            self.arm9.stock = Stock::HookA;
            return self.stock_step(proc);
        }
        let image = self.image.as_ref().expect("image read");
        let h = image.header.sections[i];
        if !h.is_used() {
            self.arm9.stock = Stock::LoadSection(i + 1);
            return Tick::Ran;
        }
        let payload = image.payloads[i].clone();
        let (dst, size) = (h.phys_addr, h.size);
        if !check_blacklist(dst, size, self.env.policy) {
            self.event(proc, EventKind::BlacklistViolation, dst, size);
            return self.stop(
                proc,
                BootOutcome::Failure(format!("section {i} destination {dst:#010x} is blacklisted")),
            );
        }
        let ndma = Region::new(u32::MAX, NDMA_BASE, NDMA_LEN, super::RegionKind::IoRegisters);
        if ndma.overlaps(dst, size) {
            self.phys_write(proc, dst, &payload);
            let reqs = match NdmaRequest::decode_all(&payload) {
                Ok(r) => r,
                Err(e) => return self.stop(proc, BootOutcome::Halt(format!("NDMA fault: {e}"))),
            };
            for r in reqs {
                let data = self.phys_read(proc, r.src, r.length);
                self.phys_write(proc, r.dst, &data);
                self.event(proc, EventKind::NdmaCopy, r.dst, r.length);
            }
            self.sections_loaded.push(SectionLoad {
                index: i,
                phys_addr: dst,
                size,
                via: LoadVia::Ndma,
            });
            self.arm9.stock = Stock::LoadSection(i + 1);
            return Tick::Ran;
        }
        match self.cpu_write(proc, dst, &payload) {
            Ok(()) => {
                self.event(proc, EventKind::SectionCopy, dst, size);
                self.sections_loaded.push(SectionLoad {
                    index: i,
                    phys_addr: dst,
                    size,
                    via: LoadVia::Copy,
                });
                self.arm9.stock = Stock::LoadSection(i + 1);
                Tick::Ran
            }
            Err(addr) => self.data_abort(proc, addr, size, i),
        }
    }

    fn data_abort(&mut self, proc: Proc, addr: u32, len: u32, section: usize) -> Tick {
        self.event(proc, EventKind::DataAbort, addr, len);
        let vector = self.mem.read_u32(DABT_VECTOR);
        let routine = (vector != STOCK_DABT_HANDLER)
            .then(|| self.load_routine(proc, vector))
            .flatten();
        match routine {
            Some(ops) => {
                self.aborts.push(AbortRecord {
                    address: addr,
                    handled: true,
                });
                self.event(proc, EventKind::HandlerEntry, vector, 0);
                self.arm9.frames.push(Frame {
                    ops,
                    pc: 0,
                    kind: FrameKind::Handler { section, skip: false },
                });
                Tick::Ran
            }
            None => {
                self.aborts.push(AbortRecord {
                    address: addr,
                    handled: false,
                });
                self.stop(proc, BootOutcome::Halt(format!("unhandled {}", fault_msg(addr))))
            }
        }
    }

    fn routine_step(&mut self, proc: Proc) -> Tick {
        let frame = self.cpu(proc).frames.last().expect("frame");
        let Some(&op) = frame.ops.get(frame.pc) else {
            return self.stop(proc, BootOutcome::Halt("ran past the end of a routine".into()));
        };
        match self.exec(proc, op) {
            Ok(Some(t)) => t,
            Ok(None) => {
                if let Some(f) = self.cpu(proc).frames.last_mut() {
                    f.pc += 1;
                }
                Tick::Ran
            }
            Err(addr) => self.stop(proc, BootOutcome::Halt(format!("{} inside a routine", fault_msg(addr)))),
        }
    }

    /// Runs one op. `Ok(None)` means advance to the next op; `Ok(Some)`
    /// means the op managed control flow itself.
    fn exec(&mut self, proc: Proc, op: Op) -> Result<Option<Tick>, u32> {
        match op {
            Op::Return => {
                let frame = self.cpu(proc).frames.pop().expect("frame");
                return Ok(Some(match frame.kind {
                    FrameKind::Hook => Tick::Ran,
                    FrameKind::Handler { section, skip: true } => {
                        self.arm9.stock = Stock::LoadSection(section + 1);
                        Tick::Ran
                    }
                    FrameKind::Handler { skip: false, .. } => {
                        self.stop(proc, BootOutcome::Halt("abort handler returned to the faulting copy".into()))
                    }
                    FrameKind::Detached => {
                        self.stop(proc, BootOutcome::Halt("return from a detached routine".into()))
                    }
                }));
            }
            Op::Write32 { addr, value } => {
                self.cpu_write(proc, addr, &value.to_le_bytes())?;
                self.event(proc, EventKind::Write32, addr, 4);
            }
            Op::Copy { src, dst, len } => {
                let data = self.cpu_read(proc, src, len)?;
                self.cpu_write(proc, dst, &data)?;
                self.event(proc, EventKind::Copy, dst, len);
            }
            Op::WaitEq { addr, value } => {
                if self.read_word(proc, addr)? != value {
                    return Ok(Some(Tick::Waiting));
                }
            }
            Op::MpuSetup => self.event(proc, EventKind::MpuSetup, 0, 0),
            Op::SkipFault => {
                let frame = self.cpu(proc).frames.last_mut().expect("frame");
                match &mut frame.kind {
                    FrameKind::Handler { skip, .. } => *skip = true,
                    _ => return Ok(Some(self.stop(proc, BootOutcome::Halt("skip outside an abort handler".into())))),
                }
                self.event(proc, EventKind::SkipFault, 0, 0);
            }
            Op::Jump { addr } => {
                let Some(ops) = self.load_routine(proc, addr) else {
                    return Ok(Some(
                        self.stop(proc, BootOutcome::Halt(format!("jump to invalid code at {addr:#010x}"))),
                    ));
                };
                let cpu = self.cpu(proc);
                cpu.stock = Stock::Detached;
                cpu.frames.clear();
                cpu.frames.push(Frame {
                    ops,
                    pc: 0,
                    kind: FrameKind::Detached,
                });
                return Ok(Some(Tick::Ran));
            }
            Op::SkipUnlessKeys { mask, count } => {
                let held = Key::mask(&self.machine.inputs.keys_held);
                if held & mask != mask {
                    self.cpu(proc).frames.last_mut().expect("frame").pc += count as usize;
                }
            }
            Op::SdWrite { file, src, len } => {
                let data = self.cpu_read(proc, src, len)?;
                self.machine.stores.sd.insert(file.name().to_string(), data);
                self.sd_files.push(file.name().to_string());
                self.event(proc, EventKind::SdWrite, src, len);
            }
            Op::PowerOff => {
                self.event(proc, EventKind::PowerOff, 0, 0);
                return Ok(Some(self.stop(proc, BootOutcome::PoweredOff)));
            }
            Op::ChainLoad { file } => return Ok(Some(self.chain_load(proc, file))),
            Op::Lock => self.lock(proc),
            Op::Boot => {
                let Some((a9, a11)) = self.chain_entry else {
                    return Ok(Some(self.stop(proc, BootOutcome::Failure("boot with nothing chain-loaded".into()))));
                };
                return Ok(Some(self.signal_entry(proc, a9, a11)));
            }
            Op::InstallNand { src, len } => {
                let data = self.cpu_read(proc, src, len)?;
                self.machine.stores.nand = Some(data);
                self.nand_installed = true;
                self.event(proc, EventKind::NandInstall, src, len);
            }
            Op::WaitEntry11 => {
                if proc != Proc::Arm11 {
                    return Ok(Some(self.stop(proc, BootOutcome::Halt("ARM11-only op on the ARM9".into()))));
                }
                return Ok(Some(self.wait_entry11(proc)));
            }
            Op::Halt => return Ok(Some(self.stop(proc, BootOutcome::Halt("routine halted".into())))),
        }
        Ok(None)
    }

    fn chain_load(&mut self, proc: Proc, file: SdFile) -> Tick {
        let Some(bytes) = self.machine.stores.sd.get(file.name()).cloned() else {
            return self.stop(proc, BootOutcome::Failure(format!("{} not found on SD", file.name())));
        };
        let img = match FirmImage::parse(&bytes) {
            Ok(i) => i,
            Err(e) => return self.stop(proc, BootOutcome::Failure(format!("malformed {}: {e}", file.name()))),
        };
        for (h, p) in img.header.sections.iter().zip(&img.payloads) {
            if !h.is_used() {
                continue;
            }
            if let Err(addr) = self.cpu_write(proc, h.phys_addr, p) {
                return self.stop(proc, BootOutcome::Halt(format!("{} during chain-load", fault_msg(addr))));
            }
            self.event(proc, EventKind::ChainLoad, h.phys_addr, h.size);
        }
        self.chain_entry = Some((img.header.arm9_entry, img.header.arm11_entry));
        self.cpu(proc).frames.last_mut().expect("frame").pc += 1;
        Tick::Ran
    }
}
