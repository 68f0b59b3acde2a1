#![allow(dead_code)]

use bootforge_core::bootsim::{BlacklistPolicy, BootEnv};
use bootforge_core::firm::{build_firm, fakesign_firm, sign_firm, CopyMethod, FirmEntry, FirmImage};
use bootforge_core::forge::forge_with_private_key;
use bootforge_core::modmath::generate_keypair;
use bootforge_core::sigparser::ParserConfig;
use bootforge_core::{KeyRegistry, KeySlot, RsaKeyPair, Seed};

pub const BITS: usize = 512;
pub const BLOCK: usize = BITS / 8;

/// One 512-bit key pair per registry slot.
pub struct Fixture {
    pub keys: Vec<(KeySlot, RsaKeyPair)>,
    pub registry: KeyRegistry,
    pub flawed: ParserConfig,
    pub strict: ParserConfig,
}

impl Fixture {
    pub fn new() -> Self {
        let root = Seed([0x5a; 32]);
        let keys: Vec<_> = KeySlot::ALL
            .iter()
            .enumerate()
            .map(|(i, &slot)| (slot, generate_keypair(BITS, root.derive("slot", i as u64)).unwrap()))
            .collect();
        let mut registry = KeyRegistry::new();
        for (slot, k) in &keys {
            registry.install(*slot, k.public.clone()).unwrap();
        }
        Fixture {
            keys,
            registry,
            flawed: ParserConfig::flawed(BLOCK),
            strict: ParserConfig::strict(BLOCK),
        }
    }

    pub fn key(&self, label: &str) -> &RsaKeyPair {
        let slot: KeySlot = label.parse().unwrap();
        &self.keys.iter().find(|(s, _)| *s == slot).unwrap().1
    }

    pub fn env(&self, strict: bool, policy: BlacklistPolicy) -> BootEnv<'_> {
        BootEnv {
            registry: &self.registry,
            parser: if strict { &self.strict } else { &self.flawed },
            policy,
        }
    }

    /// A signature whose plaintext points the flawed parser at `landing`.
    pub fn forged(&self, label: &str, landing: i64) -> Vec<u8> {
        forge_with_private_key(self.key(label), landing, Seed([0x77; 32]))
            .unwrap()
            .signature_bytes()
    }

    pub fn fakesign(&self, image: FirmImage, label: &str) -> Vec<u8> {
        fakesign_firm(image, &self.forged(label, BLOCK as i64)).unwrap().serialize()
    }

    pub fn sign(&self, image: FirmImage, label: &str) -> Vec<u8> {
        sign_firm(image, self.key(label)).unwrap().serialize()
    }
}

/// Two-section image for an unmodified boot.
pub fn plain_image() -> FirmImage {
    build_firm(
        &[
            FirmEntry::new(0x0800_6000, CopyMethod::Ndma, vec![0x11; 0x400]),
            FirmEntry::new(0x1FF8_0000, CopyMethod::CpuMemcpy, vec![0x22; 0x200]),
        ],
        0x0800_6000,
        0x1FF8_0000,
        0,
    )
    .unwrap()
}

/// Second-stage image loaded into FCRAM, which is only reachable once the
/// boot ROMs are locked.
pub fn fcram_image() -> FirmImage {
    build_firm(
        &[FirmEntry::new(0x2000_0000, CopyMethod::Ndma, vec![0x33; 0x800])],
        0x2000_0000,
        0x2000_0400,
        0,
    )
    .unwrap()
}
