//! `bootforge`: key generation, signature forging, FIRM tooling and the boot
//! simulator behind one command.
//!
//! Exit codes: 0 success, 1 verification or boot failure, 2 usage or input error.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use bootforge_core::bootsim::{BlacklistPolicy, BootSource, Key};
use bootforge_core::sigparser::ParserMode;
use bootforge_core::{KeySlot, Seed};
use clap::{Args, Parser, Subcommand};

use config::{Overrides, WorkspaceConfig, WORKDIR_ENV};

#[derive(Debug, Parser)]
#[command(name = "bootforge", version, about = "Forge boot-ROM signatures and replay the exploit chain")]
struct Cli {
    /// Workspace config (JSON).
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// 32-byte seed as 64 hex digits.
    #[arg(long, global = true, value_name = "HEX")]
    seed: Option<Seed>,
    /// Search threads; defaults to the available cores.
    #[arg(long, global = true, value_name = "N")]
    workers: Option<usize>,
    /// Search budget in candidates tested.
    #[arg(long, global = true, value_name = "N")]
    max_attempts: Option<u64>,
    /// flawed | strict
    #[arg(long, global = true)]
    mode: Option<ParserMode>,
    /// boot9only | hardened
    #[arg(long, global = true)]
    policy: Option<BlacklistPolicy>,
    /// retail.nand, retail.nonnand, retail.ncsd, dev.nand, dev.nonnand, dev.ncsd
    #[arg(long, global = true)]
    slot: Option<KeySlot>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate one key pair per registry slot and the public registry.
    Keygen {
        #[arg(long, default_value_t = 2048)]
        bits: usize,
        #[arg(long, default_value_t = 65537)]
        exponent: u64,
    },
    /// Craft an exploit plaintext and print its annotated dump.
    Craft {
        /// Landing offset; defaults to the block length.
        #[arg(long)]
        landing: Option<i64>,
        #[arg(long)]
        block_length: Option<usize>,
        /// Take the calculated hash from this image's header.
        #[arg(long)]
        image: Option<PathBuf>,
    },
    /// Brute-force a signature against the selected slot's public key.
    Forge {
        #[command(flatten)]
        target: ForgeTarget,
    },
    /// Sign a crafted exploit plaintext with the slot's private key.
    ForgeOracle {
        #[arg(long)]
        landing: Option<i64>,
    },
    /// Monte Carlo estimate of the per-attempt hit probability.
    Estimate {
        #[arg(long, default_value_t = 1_000_000)]
        samples: u64,
        #[arg(long)]
        block_length: Option<usize>,
        #[command(flatten)]
        target: ForgeTarget,
        /// Sample uniformly below the slot's modulus instead of over all blocks.
        #[arg(long)]
        below_modulus: bool,
    },
    /// Build a FIRM image from a JSON descriptor.
    BuildFirm {
        descriptor: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Sign an image honestly with the slot's private key.
    Sign {
        image: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Attach a forged signature to an image.
    Fakesign {
        image: PathBuf,
        /// forge output (JSON) or a file of signature hex.
        #[arg(long)]
        signature: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Validate an image against the slot's public key.
    Verify {
        image: PathBuf,
        /// Stack position of the calculated hash; defaults to the block end.
        #[arg(long)]
        calc_hash_offset: Option<i64>,
    },
    /// Boot an image on the simulator.
    Boot {
        image: PathBuf,
        #[command(flatten)]
        inputs: InputArgs,
        /// Force a boot source (nand, wifi_spi, ntr_cart).
        #[arg(long)]
        source: Option<BootSource>,
    },
    /// Run the staged exploit chain from NAND.
    Exploit {
        /// Hold the dump combination so stage 2 writes both halves to SD.
        #[arg(long)]
        dump_keys: bool,
        /// Image chain-loaded from SD when not dumping.
        #[arg(long)]
        second: Option<PathBuf>,
        /// Use this forged signature instead of signing with the private key.
        #[arg(long)]
        signature: Option<PathBuf>,
    },
    /// Boot a flashcart image that installs the staged image to NAND, then boot NAND.
    NtrInstall {
        /// Slot the flashcart image is forged for.
        #[arg(long, default_value = "retail.nonnand")]
        cart_slot: KeySlot,
        /// Leave the cartridge out.
        #[arg(long)]
        no_cart: bool,
        #[arg(long)]
        second: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
struct ForgeTarget {
    /// First landing offset of the target window; defaults to the block length.
    #[arg(long)]
    landing: Option<i64>,
    /// Width of the target window.
    #[arg(long)]
    window: Option<i64>,
    /// Block type 2 only, tags unchecked, 64-offset window.
    #[arg(long)]
    relaxed: bool,
}

#[derive(Debug, Args)]
struct InputArgs {
    /// Held keys, comma separated (e.g. START,SELECT,X).
    #[arg(long, value_delimiter = ',')]
    keys: Vec<Key>,
    #[arg(long)]
    shell_closed: bool,
    #[arg(long)]
    cart: bool,
    #[arg(long)]
    magnet: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let flags = Overrides {
        seed: cli.seed,
        workers: cli.workers,
        max_attempts: cli.max_attempts,
        mode: cli.mode,
        policy: cli.policy,
        slot: cli.slot,
    };
    let env_workdir = std::env::var_os(WORKDIR_ENV).map(PathBuf::from);
    let result = WorkspaceConfig::resolve(cli.config.as_deref(), flags, env_workdir)
        .and_then(|cfg| commands::run(&cfg, cli.command));
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
