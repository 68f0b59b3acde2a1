use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use bootforge_core::bootsim::BlacklistPolicy;
use bootforge_core::modmath::{Console, SigType};
use bootforge_core::sigparser::ParserMode;
use bootforge_core::{KeyRegistry, KeySlot, RsaKeyPair, Seed};
use serde::Deserialize;

pub const WORKDIR_ENV: &str = "BOOTFORGE_WORKDIR";
pub const REGISTRY_FILE: &str = "registry.txt";

/// `--config` file contents. Relative paths are resolved against the
/// file's directory.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub workdir: Option<PathBuf>,
    pub key_dir: Option<PathBuf>,
    pub block_length: Option<usize>,
    pub parser_mode: Option<ParserMode>,
    pub blacklist_policy: Option<BlacklistPolicy>,
    pub seed: Option<Seed>,
    pub workers: Option<usize>,
    pub max_attempts: Option<u64>,
    /// Slot label such as `retail.nand`.
    pub slot: Option<String>,
}

/// Flags shared by every subcommand, before merging with the config file.
#[derive(Debug, Default, Clone)]
pub struct Overrides {
    pub seed: Option<Seed>,
    pub workers: Option<usize>,
    pub max_attempts: Option<u64>,
    pub mode: Option<ParserMode>,
    pub policy: Option<BlacklistPolicy>,
    pub slot: Option<KeySlot>,
}

#[derive(Debug, Clone)]
pub struct WorkspaceConfig {
    pub workdir: PathBuf,
    pub key_dir: PathBuf,
    pub block_length: Option<usize>,
    pub parser_mode: ParserMode,
    pub blacklist_policy: BlacklistPolicy,
    pub seed: Option<Seed>,
    pub workers: usize,
    pub max_attempts: u64,
    pub slot: KeySlot,
}

pub const DEFAULT_MAX_ATTEMPTS: u64 = 100_000_000;

fn resolve(base: &Path, p: PathBuf) -> PathBuf {
    if p.is_absolute() {
        p
    } else {
        base.join(p)
    }
}

impl WorkspaceConfig {
    /// Flags beat the config file; `BOOTFORGE_WORKDIR` beats both for the
    /// artifact directory.
    pub fn resolve(config: Option<&Path>, flags: Overrides, env_workdir: Option<PathBuf>) -> Result<Self> {
        let (file, base) = match config {
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
                let file: ConfigFile =
                    serde_json::from_str(&text).with_context(|| format!("parsing config {}", p.display()))?;
                (file, p.parent().unwrap_or(Path::new(".")).to_path_buf())
            }
            None => (ConfigFile::default(), PathBuf::from(".")),
        };
        let workdir = match env_workdir {
            Some(w) => w,
            None => resolve(&base, file.workdir.unwrap_or_else(|| PathBuf::from("."))),
        };
        let key_dir = match file.key_dir {
            Some(k) => resolve(&base, k),
            None => workdir.join("keys"),
        };
        let workers = flags
            .workers
            .or(file.workers)
            .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
        if workers == 0 {
            bail!("--workers must be at least 1");
        }
        Ok(WorkspaceConfig {
            workdir,
            key_dir,
            block_length: file.block_length,
            parser_mode: flags.mode.or(file.parser_mode).unwrap_or(ParserMode::Flawed),
            blacklist_policy: flags.policy.or(file.blacklist_policy).unwrap_or_default(),
            seed: flags.seed.or(file.seed),
            workers,
            max_attempts: flags.max_attempts.or(file.max_attempts).unwrap_or(DEFAULT_MAX_ATTEMPTS),
            slot: match (flags.slot, file.slot) {
                (Some(s), _) => s,
                (None, Some(label)) => label.parse().map_err(anyhow::Error::msg)?,
                (None, None) => KeySlot::new(Console::Retail, SigType::NandBoot),
            },
        })
    }

    pub fn require_seed(&self) -> Result<Seed> {
        self.seed
            .ok_or_else(|| anyhow::anyhow!("this command is randomized and needs --seed <64 hex digits>"))
    }

    pub fn artifact(&self, name: &str) -> PathBuf {
        self.workdir.join(name)
    }

    pub fn sim_dir(&self) -> PathBuf {
        self.workdir.join("sim")
    }

    pub fn key_path(&self, slot: KeySlot) -> PathBuf {
        self.key_dir.join(format!("{}.key", slot.label()))
    }

    pub fn load_key(&self, slot: KeySlot) -> Result<RsaKeyPair> {
        let p = self.key_path(slot);
        let text = std::fs::read_to_string(&p).with_context(|| format!("reading key {}", p.display()))?;
        RsaKeyPair::from_key_file(&text).with_context(|| format!("parsing key {}", p.display()))
    }

    pub fn load_registry(&self) -> Result<KeyRegistry> {
        let p = self.key_dir.join(REGISTRY_FILE);
        let text = std::fs::read_to_string(&p).with_context(|| format!("reading registry {}", p.display()))?;
        KeyRegistry::from_file(&text).with_context(|| format!("parsing registry {}", p.display()))
    }

    /// Block length from the flag, the config, or the selected slot's key.
    pub fn block_length(&self, flag: Option<usize>) -> Result<usize> {
        if let Some(b) = flag.or(self.block_length) {
            return Ok(b);
        }
        Ok(self.load_registry()?.require(self.slot)?.block_length())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn precedence() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("c.json");
        std::fs::write(
            &cfg,
            r#"{"workdir":"out","parser_mode":"strict","blacklist_policy":"hardened","workers":3,"slot":"dev.nonnand"}"#,
        )
        .unwrap();
        let c = WorkspaceConfig::resolve(Some(&cfg), Overrides::default(), None).unwrap();
        assert_eq!(c.workdir, dir.path().join("out"));
        assert_eq!(c.key_dir, dir.path().join("out/keys"));
        assert_eq!(c.parser_mode, ParserMode::Strict);
        assert_eq!(c.blacklist_policy, BlacklistPolicy::Hardened);
        assert_eq!(c.workers, 3);
        assert_eq!(c.slot.label(), "dev.nonnand");
        let flags = Overrides {
            mode: Some(ParserMode::Flawed),
            workers: Some(1),
            ..Overrides::default()
        };
        let c = WorkspaceConfig::resolve(Some(&cfg), flags, Some("/elsewhere".into())).unwrap();
        assert_eq!(c.workdir, PathBuf::from("/elsewhere"));
        assert_eq!(c.parser_mode, ParserMode::Flawed);
        assert_eq!(c.workers, 1);
        assert!(c.require_seed().is_err());
        std::fs::write(&cfg, r#"{"bogus":1}"#).unwrap();
        assert!(WorkspaceConfig::resolve(Some(&cfg), Overrides::default(), None).is_err());
    }
}
