use std::path::{Path, PathBuf};

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use super::{build_firm, CopyMethod, FirmEntry, FirmError, FirmImage};

#[derive(Debug, Error)]
pub enum DescriptorError {
    #[error("reading {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("descriptor JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Firm(#[from] FirmError),
}

/// JSON build input for a FIRM image. Addresses may be numbers or
/// `"0x…"` strings; payload paths are relative to the descriptor file.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FirmDescriptor {
    pub sections: Vec<SectionSpec>,
    #[serde(with = "addr")]
    pub arm9_entry: u32,
    #[serde(with = "addr")]
    pub arm11_entry: u32,
    #[serde(default, with = "addr")]
    pub boot_priority: u32,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SectionSpec {
    #[serde(with = "addr")]
    pub phys_addr: u32,
    #[serde(default)]
    pub copy_method: CopyMethod,
    pub payload_file: PathBuf,
}

impl FirmDescriptor {
    pub fn from_json(text: &str) -> Result<Self, DescriptorError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<(Self, PathBuf), DescriptorError> {
        let text = std::fs::read_to_string(path).map_err(|source| DescriptorError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let base = path.parent().unwrap_or(Path::new(".")).to_path_buf();
        Ok((Self::from_json(&text)?, base))
    }

    /// Reads payloads relative to `base` and builds the image.
    pub fn build(&self, base: &Path) -> Result<FirmImage, DescriptorError> {
        let mut entries = Vec::with_capacity(self.sections.len());
        for s in &self.sections {
            let path = base.join(&s.payload_file);
            let payload = std::fs::read(&path).map_err(|source| DescriptorError::Io { path, source })?;
            entries.push(FirmEntry::new(s.phys_addr, s.copy_method, payload));
        }
        Ok(build_firm(&entries, self.arm9_entry, self.arm11_entry, self.boot_priority)?)
    }
}

mod addr {
    use super::*;

    pub fn serialize<S: Serializer>(v: &u32, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&format!("{v:#010x}"))
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Raw {
        Num(u32),
        Str(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<u32, D::Error> {
        match Raw::deserialize(d)? {
            Raw::Num(n) => Ok(n),
            Raw::Str(s) => {
                let t = s.trim();
                let parsed = match t.strip_prefix("0x").or_else(|| t.strip_prefix("0X")) {
                    Some(h) => u32::from_str_radix(h, 16),
                    None => t.parse(),
                };
                parsed.map_err(|_| serde::de::Error::custom(format!("invalid address `{s}`")))
            }
        }
    }
}
