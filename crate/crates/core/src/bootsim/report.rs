use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::modmath::KeySlot;
use crate::sigparser::ParseOutcome;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BootSource {
    Nand,
    WifiSpi,
    NtrCart,
}

impl std::str::FromStr for BootSource {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "nand" => Ok(BootSource::Nand),
            "wifi_spi" | "spi" => Ok(BootSource::WifiSpi),
            "ntr_cart" | "cart" => Ok(BootSource::NtrCart),
            _ => Err(format!("unknown boot source `{s}`")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Key {
    A,
    B,
    X,
    Y,
    L,
    R,
    Start,
    Select,
    Up,
    Down,
    Left,
    Right,
}

impl Key {
    pub const ALL: [Key; 12] = [
        Key::A,
        Key::B,
        Key::X,
        Key::Y,
        Key::L,
        Key::R,
        Key::Start,
        Key::Select,
        Key::Up,
        Key::Down,
        Key::Left,
        Key::Right,
    ];

    pub fn bit(self) -> u32 {
        1 << (self as u32)
    }

    pub fn mask(keys: &BTreeSet<Key>) -> u32 {
        keys.iter().fold(0, |m, k| m | k.bit())
    }

    pub fn name(self) -> &'static str {
        match self {
            Key::A => "A",
            Key::B => "B",
            Key::X => "X",
            Key::Y => "Y",
            Key::L => "L",
            Key::R => "R",
            Key::Start => "START",
            Key::Select => "SELECT",
            Key::Up => "UP",
            Key::Down => "DOWN",
            Key::Left => "LEFT",
            Key::Right => "RIGHT",
        }
    }
}

impl std::str::FromStr for Key {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Key::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| format!("unknown key `{s}`"))
    }
}

/// Keys for the cartridge boot path.
pub fn ntr_boot_keys() -> BTreeSet<Key> {
    [Key::Start, Key::Select, Key::X].into()
}

/// Keys that make the staged payload dump the boot ROMs instead of chain-loading.
pub fn dump_keys() -> BTreeSet<Key> {
    [Key::L, Key::R, Key::Start].into()
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Inputs {
    pub keys_held: BTreeSet<Key>,
    pub shell_closed: bool,
    pub ntr_cart_present: bool,
    pub magnet_applied: bool,
}

/// Write-once lock state. Locking a boot ROM also enables that processor's FCRAM.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LockRegister {
    pub boot9_locked: bool,
    pub boot11_locked: bool,
    pub fcram9_enabled: bool,
    pub fcram11_enabled: bool,
}

impl LockRegister {
    pub fn all_set(&self) -> bool {
        self.boot9_locked && self.boot11_locked && self.fcram9_enabled && self.fcram11_enabled
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Proc {
    #[serde(rename = "9")]
    Arm9,
    #[serde(rename = "11")]
    Arm11,
}

impl fmt::Display for Proc {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Proc::Arm9 => "9",
            Proc::Arm11 => "11",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    KeyInit,
    BootSource,
    ReadHeader,
    Verify,
    SectionCopy,
    NdmaCopy,
    BlacklistViolation,
    DataAbort,
    HandlerEntry,
    SkipFault,
    HookCall,
    MpuSetup,
    Write32,
    Copy,
    ProtectedRead,
    LockViolation,
    AccessViolation,
    RomWriteIgnored,
    SignalLoaded,
    Lock,
    Entry,
    SdWrite,
    ChainLoad,
    NandInstall,
    PowerOff,
    Failure,
    Halt,
    Watchdog,
}

impl EventKind {
    pub fn name(self) -> String {
        serde_json::to_value(self)
            .ok()
            .and_then(|v| v.as_str().map(str::to_string))
            .unwrap_or_default()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Event {
    pub step: u64,
    pub proc: Proc,
    pub kind: EventKind,
    pub addr: u32,
    pub len: u32,
}

impl fmt::Display for Event {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "step={} proc={} event={} addr={:#x} len={:#x}",
            self.step,
            self.proc,
            self.kind.name(),
            self.addr,
            self.len
        )
    }
}

/// One event per line.
pub fn event_log_text(events: &[Event]) -> String {
    events.iter().map(|e| format!("{e}\n")).collect()
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "reason")]
pub enum BootOutcome {
    /// The ARM9 reached a firmware entry point.
    Booted,
    PoweredOff,
    /// Orderly rejection: the blue error screen.
    Failure(String),
    /// Crash or fault with no error screen: the black screen.
    Halt(String),
}

impl BootOutcome {
    pub fn is_success(&self) -> bool {
        matches!(self, BootOutcome::Booted | BootOutcome::PoweredOff)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LoadVia {
    Copy,
    Ndma,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SectionLoad {
    pub index: usize,
    pub phys_addr: u32,
    pub size: u32,
    pub via: LoadVia,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AbortRecord {
    pub address: u32,
    pub handled: bool,
}

mod opt_hex {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &Option<Vec<u8>>, s: S) -> Result<S::Ok, S::Error> {
        match v {
            Some(b) => s.serialize_some(&hex::encode(b)),
            None => s.serialize_none(),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<Vec<u8>>, D::Error> {
        Option::<String>::deserialize(d)?
            .map(|h| hex::decode(h).map_err(serde::de::Error::custom))
            .transpose()
    }
}

/// Protected boot-ROM halves read in full while still unlocked.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Exfiltrated {
    #[serde(with = "opt_hex")]
    pub boot9_protected: Option<Vec<u8>>,
    #[serde(with = "opt_hex")]
    pub boot11_protected: Option<Vec<u8>>,
}

impl Exfiltrated {
    pub fn is_empty(&self) -> bool {
        self.boot9_protected.is_none() && self.boot11_protected.is_none()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BootReport {
    pub boot_source: Option<BootSource>,
    pub key_slot: Option<KeySlot>,
    pub signature_verdict: Option<ParseOutcome>,
    pub sections_loaded: Vec<SectionLoad>,
    pub aborts: Vec<AbortRecord>,
    pub exfiltrated: Exfiltrated,
    pub reached_entry: bool,
    pub locks_final: LockRegister,
    pub outcome: BootOutcome,
    pub sd_files: Vec<String>,
    pub nand_installed: bool,
    pub steps: u64,
    #[serde(skip)]
    pub events: Vec<Event>,
}

impl BootReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn event_log(&self) -> String {
        event_log_text(&self.events)
    }

    pub fn events_of(&self, kind: EventKind) -> impl Iterator<Item = &Event> {
        self.events.iter().filter(move |e| e.kind == kind)
    }

    pub fn first_step(&self, kind: EventKind) -> Option<u64> {
        self.events_of(kind).map(|e| e.step).next()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn event_line_format() {
        let e = Event {
            step: 12,
            proc: Proc::Arm11,
            kind: EventKind::ProtectedRead,
            addr: 0x18000,
            len: 0x8000,
        };
        assert_eq!(e.to_string(), "step=12 proc=11 event=protected_read addr=0x18000 len=0x8000");
    }

    #[test]
    fn key_parsing_and_masks() {
        assert_eq!("start".parse::<Key>().unwrap(), Key::Start);
        assert!("Z".parse::<Key>().is_err());
        let m = Key::mask(&ntr_boot_keys());
        assert_eq!(m, Key::Start.bit() | Key::Select.bit() | Key::X.bit());
    }
}
