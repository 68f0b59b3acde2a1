//! Forging exploit signatures against a flawed PKCS#1 v1.5 parser, packaging
//! them into FIRM images, and replaying the resulting boot-ROM exploit chain
//! on a deterministic two-processor simulator.
//!
//! Modules, bottom-up:
//!
//! * [`modmath`]: big-integer arithmetic, RSA keys, the six-slot key registry.
//! * [`sigparser`]: the flawed and strict signature parsers over a modelled stack.
//! * [`forge`]: exploit plaintexts, private-key forging, brute-force search,
//!   and hit-probability estimation.
//! * [`firm`]: FIRM image building, codec, signing and validation.
//! * [`bootsim`]: memory map, NDMA, lock registers and the exploit scenarios.

pub mod modmath;
pub mod seed;
pub mod sigparser;
pub mod forge;
pub mod firm;
pub mod bootsim;

pub use modmath::{BigUint, KeyRegistry, KeySlot, PublicKey, RsaKeyPair};
pub use seed::Seed;
