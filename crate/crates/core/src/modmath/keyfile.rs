//! Text key files and the six-slot public key registry.
//!
//! A key file holds `n=`, `e=` and optionally `d=` lines of lowercase hex.
//! `n` and `d` are zero-padded to the block length; `e` is written minimally.
//! The registry file holds one `<console>.<type>=<n hex>:<e hex>` line per
//! slot.

use std::fmt;
use std::str::FromStr;

use num_bigint::BigUint;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{to_fixed_be, PublicKey, RsaKeyPair};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum KeyFileError {
    #[error("line {line}: expected `name=value`")]
    Syntax { line: usize },
    #[error("line {line}: invalid hex")]
    Hex { line: usize },
    #[error("line {line}: unknown field `{name}`")]
    UnknownField { line: usize, name: String },
    #[error("missing field `{0}`")]
    Missing(&'static str),
    #[error("duplicate field `{0}`")]
    Duplicate(String),
    #[error("modulus length {0} bits is not a multiple of 8")]
    OddLength(usize),
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum RegistryError {
    #[error("key slot {0} already written")]
    SlotAlreadyWritten(KeySlot),
    #[error("key slot {0} is empty")]
    SlotEmpty(KeySlot),
    #[error(transparent)]
    File(#[from] KeyFileError),
}

fn parse_hex(value: &str, line: usize) -> Result<BigUint, KeyFileError> {
    if value.is_empty() {
        return Err(KeyFileError::Hex { line });
    }
    BigUint::parse_bytes(value.as_bytes(), 16).ok_or(KeyFileError::Hex { line })
}

fn hex_min(x: &BigUint) -> String {
    let s = x.to_str_radix(16);
    if s.len() % 2 == 1 {
        format!("0{s}")
    } else {
        s
    }
}

impl RsaKeyPair {
    /// Renders the key file; `d` is written only when `include_private`.
    pub fn to_key_file(&self, include_private: bool) -> String {
        let bl = self.block_length();
        let mut out = format!(
            "n={}\ne={}\n",
            hex::encode(to_fixed_be(self.n(), bl).expect("n fits its block")),
            hex_min(self.e())
        );
        if include_private {
            if let Some(d) = &self.d {
                out += &format!("d={}\n", hex::encode(to_fixed_be(d, bl).expect("d < n")));
            }
        }
        out
    }

    pub fn from_key_file(text: &str) -> Result<Self, KeyFileError> {
        let (mut n, mut e, mut d) = (None, None, None);
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let raw = raw.trim();
            if raw.is_empty() || raw.starts_with('#') {
                continue;
            }
            let (name, value) = raw.split_once('=').ok_or(KeyFileError::Syntax { line })?;
            let slot = match name.trim() {
                "n" => &mut n,
                "e" => &mut e,
                "d" => &mut d,
                other => {
                    return Err(KeyFileError::UnknownField {
                        line,
                        name: other.to_string(),
                    })
                }
            };
            if slot.is_some() {
                return Err(KeyFileError::Duplicate(name.trim().to_string()));
            }
            *slot = Some(parse_hex(value.trim(), line)?);
        }
        let n = n.ok_or(KeyFileError::Missing("n"))?;
        let e = e.ok_or(KeyFileError::Missing("e"))?;
        let bit_length = n.bits() as usize;
        if bit_length % 8 != 0 {
            return Err(KeyFileError::OddLength(bit_length));
        }
        Ok(RsaKeyPair {
            public: PublicKey::new(n, e),
            d,
            bit_length,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Console {
    Retail,
    Developer,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SigType {
    NcsdHeader,
    NandBoot,
    NonNandBoot,
}

/// One of the six (console, signature type) public key slots.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct KeySlot {
    pub console: Console,
    pub sig_type: SigType,
}

impl KeySlot {
    pub const ALL: [KeySlot; 6] = [
        KeySlot::new(Console::Retail, SigType::NcsdHeader),
        KeySlot::new(Console::Retail, SigType::NandBoot),
        KeySlot::new(Console::Retail, SigType::NonNandBoot),
        KeySlot::new(Console::Developer, SigType::NcsdHeader),
        KeySlot::new(Console::Developer, SigType::NandBoot),
        KeySlot::new(Console::Developer, SigType::NonNandBoot),
    ];

    pub const fn new(console: Console, sig_type: SigType) -> Self {
        KeySlot { console, sig_type }
    }

    fn index(self) -> usize {
        let c = match self.console {
            Console::Retail => 0,
            Console::Developer => 3,
        };
        let t = match self.sig_type {
            SigType::NcsdHeader => 0,
            SigType::NandBoot => 1,
            SigType::NonNandBoot => 2,
        };
        c + t
    }

    pub fn label(self) -> &'static str {
        match (self.console, self.sig_type) {
            (Console::Retail, SigType::NcsdHeader) => "retail.ncsd",
            (Console::Retail, SigType::NandBoot) => "retail.nand",
            (Console::Retail, SigType::NonNandBoot) => "retail.nonnand",
            (Console::Developer, SigType::NcsdHeader) => "dev.ncsd",
            (Console::Developer, SigType::NandBoot) => "dev.nand",
            (Console::Developer, SigType::NonNandBoot) => "dev.nonnand",
        }
    }
}

impl fmt::Display for KeySlot {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for KeySlot {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        KeySlot::ALL
            .into_iter()
            .find(|slot| slot.label() == s)
            .ok_or_else(|| format!("unknown key slot `{s}`"))
    }
}

/// Six write-once public key slots.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct KeyRegistry {
    slots: [Option<PublicKey>; 6],
}

impl KeyRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds a full registry from one key per slot, in [`KeySlot::ALL`] order.
    pub fn from_keys(keys: [PublicKey; 6]) -> Self {
        let mut reg = KeyRegistry::new();
        for (slot, key) in KeySlot::ALL.into_iter().zip(keys) {
            reg.install(slot, key).expect("fresh registry");
        }
        reg
    }

    pub fn install(&mut self, slot: KeySlot, key: PublicKey) -> Result<(), RegistryError> {
        let entry = &mut self.slots[slot.index()];
        if entry.is_some() {
            return Err(RegistryError::SlotAlreadyWritten(slot));
        }
        *entry = Some(key);
        Ok(())
    }

    pub fn get(&self, slot: KeySlot) -> Option<&PublicKey> {
        self.slots[slot.index()].as_ref()
    }

    pub fn require(&self, slot: KeySlot) -> Result<&PublicKey, RegistryError> {
        self.get(slot).ok_or(RegistryError::SlotEmpty(slot))
    }

    pub fn is_complete(&self) -> bool {
        self.slots.iter().all(Option::is_some)
    }

    pub fn to_file(&self) -> String {
        let mut out = String::new();
        for slot in KeySlot::ALL {
            if let Some(key) = self.get(slot) {
                out += &format!(
                    "{}={}:{}\n",
                    slot.label(),
                    hex::encode(to_fixed_be(&key.n, key.block_length()).expect("fits")),
                    hex_min(&key.e)
                );
            }
        }
        out
    }

    pub fn from_file(text: &str) -> Result<Self, RegistryError> {
        let mut reg = KeyRegistry::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let raw = raw.trim();
            if raw.is_empty() || raw.starts_with('#') {
                continue;
            }
            let (name, value) = raw.split_once('=').ok_or(KeyFileError::Syntax { line })?;
            let slot: KeySlot = name.trim().parse().map_err(|_| KeyFileError::UnknownField {
                line,
                name: name.trim().to_string(),
            })?;
            let (n, e) = value.trim().split_once(':').ok_or(KeyFileError::Syntax { line })?;
            reg.install(slot, PublicKey::new(parse_hex(n, line)?, parse_hex(e, line)?))?;
        }
        Ok(reg)
    }
}
