use std::collections::BTreeSet;
use std::path::Path;

use anyhow::{Context, Result};
use bootforge_core::bootsim::payload::StageTwo;
use bootforge_core::bootsim::{
    build_staged_image, dump_keys, run_boot, run_exploit_chain, run_ntr_install_scenario, BootEnv, BootReport,
    Inputs, Machine, MachineConfig, StagedImageOptions, Stores,
};
use bootforge_core::firm::{fakesign_firm, sign_firm, validate_firm, FirmDescriptor, FirmImage};
use bootforge_core::forge::{
    brute_force_search_with_progress, craft_exploit_plaintext, estimate_hit_probability,
    estimate_hit_probability_below, forge_with_private_key, ForgeRecord, SearchParams,
};
use bootforge_core::modmath::{generate_keypair_with_exponent, SigType};
use bootforge_core::sigparser::{hex_dump, ParserConfig, ParserMode, StackModel, Verdict};
use bootforge_core::{KeyRegistry, KeySlot, Seed};
use serde::Serialize;

use crate::config::{WorkspaceConfig, REGISTRY_FILE};
use crate::{Command, ForgeTarget, InputArgs};

/// Runs one subcommand; `Ok(false)` maps to exit code 1.
pub fn run(cfg: &WorkspaceConfig, command: Command) -> Result<bool> {
    std::fs::create_dir_all(&cfg.workdir).with_context(|| format!("creating {}", cfg.workdir.display()))?;
    match command {
        Command::Keygen { bits, exponent } => keygen(cfg, bits, exponent),
        Command::Craft {
            landing,
            block_length,
            image,
        } => craft(cfg, landing, block_length, image.as_deref()),
        Command::Forge { target } => forge(cfg, &target),
        Command::ForgeOracle { landing } => forge_oracle(cfg, landing),
        Command::Estimate {
            samples,
            block_length,
            target,
            below_modulus,
        } => estimate(cfg, samples, block_length, &target, below_modulus),
        Command::BuildFirm { descriptor, out } => {
            let (d, base) = FirmDescriptor::load(&descriptor)?;
            let img = d.build(&base)?;
            let out = out.unwrap_or_else(|| cfg.artifact("image.firm"));
            write(&out, &img.serialize())?;
            println!("built {} ({} bytes)", out.display(), img.serialize().len());
            Ok(true)
        }
        Command::Sign { image, out } => {
            let key = cfg.load_key(cfg.slot)?;
            let img = sign_firm(read_image(&image)?, &key)?;
            let out = out.unwrap_or_else(|| cfg.artifact("signed.firm"));
            write(&out, &img.serialize())?;
            println!("signed {} with {}", out.display(), cfg.slot);
            Ok(true)
        }
        Command::Fakesign { image, signature, out } => {
            let sig = read_signature(&signature)?;
            let img = fakesign_firm(read_image(&image)?, &sig)?;
            let out = out.unwrap_or_else(|| cfg.artifact("fakesigned.firm"));
            write(&out, &img.serialize())?;
            println!("fakesigned {} ({}-byte signature)", out.display(), sig.len());
            Ok(true)
        }
        Command::Verify {
            image,
            calc_hash_offset,
        } => verify(cfg, &image, calc_hash_offset),
        Command::Boot { image, inputs, source } => boot(cfg, &image, &inputs, source),
        Command::Exploit {
            dump_keys,
            second,
            signature,
        } => exploit(cfg, dump_keys, second.as_deref(), signature.as_deref()),
        Command::NtrInstall {
            cart_slot,
            no_cart,
            second,
        } => ntr_install(cfg, cart_slot, no_cart, second.as_deref()),
    }
}

fn write(path: &Path, data: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, data).with_context(|| format!("writing {}", path.display()))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write(path, text.as_bytes())
}

fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).with_context(|| format!("reading {}", path.display()))
}

fn read_image(path: &Path) -> Result<FirmImage> {
    FirmImage::parse(&read(path)?).with_context(|| format!("parsing {}", path.display()))
}

/// Accepts a forge record (JSON) or bare hex.
fn read_signature(path: &Path) -> Result<Vec<u8>> {
    let text = String::from_utf8(read(path)?).context("signature file is not text")?;
    let hex_text = match serde_json::from_str::<ForgeRecord>(&text) {
        Ok(rec) => rec.signature,
        Err(_) => text.trim().to_string(),
    };
    hex::decode(hex_text.trim()).context("signature is not hex")
}

fn parser_config(mode: ParserMode, block_length: usize) -> ParserConfig {
    match mode {
        ParserMode::Flawed => ParserConfig::flawed(block_length),
        ParserMode::Strict => ParserConfig::strict(block_length),
    }
}

fn target_config(t: &ForgeTarget, block_length: usize) -> ParserConfig {
    let base = if t.relaxed {
        ParserConfig::relaxed(block_length)
    } else {
        ParserConfig::flawed(block_length)
    };
    let start = t.landing.unwrap_or(base.target_window.start);
    let width = t.window.unwrap_or(base.target_window.end - base.target_window.start);
    base.with_window(start..start + width)
}

fn keygen(cfg: &WorkspaceConfig, bits: usize, exponent: u64) -> Result<bool> {
    let seed = cfg.require_seed()?;
    let mut registry = KeyRegistry::new();
    for (i, slot) in KeySlot::ALL.into_iter().enumerate() {
        let key = generate_keypair_with_exponent(bits, exponent, seed.derive("keygen", i as u64))?;
        write(&cfg.key_path(slot), key.to_key_file(true).as_bytes())?;
        registry.install(slot, key.public.clone())?;
        println!("{slot:<14} {bits}-bit n={}…", &hex::encode(key.n().to_bytes_be())[..16]);
    }
    write(&cfg.key_dir.join(REGISTRY_FILE), registry.to_file().as_bytes())?;
    println!("wrote {}", cfg.key_dir.display());
    Ok(true)
}

#[derive(Serialize)]
struct CraftOutput {
    block_length: usize,
    landing_offset: i64,
    seed: Seed,
    plaintext: String,
}

fn craft(cfg: &WorkspaceConfig, landing: Option<i64>, block_length: Option<usize>, image: Option<&Path>) -> Result<bool> {
    let seed = cfg.require_seed()?;
    let bl = cfg.block_length(block_length)?;
    let landing = landing.unwrap_or(bl as i64);
    let block = craft_exploit_plaintext(bl, landing, seed.derive("craft", 0))?;
    let calc_hash = match image {
        Some(p) => read_image(p)?.header.signed_hash(),
        None => [0u8; 32],
    };
    let stack = StackModel::with_calc_hash_at(bl, landing.max(bl as i64))?;
    let dump = hex_dump(block.as_bytes(), &calc_hash, &stack, &ParserConfig::flawed(bl));
    print!("{dump}");
    write(&cfg.artifact("craft.txt"), dump.as_bytes())?;
    write_json(
        &cfg.artifact("craft.json"),
        &CraftOutput {
            block_length: bl,
            landing_offset: landing,
            seed,
            plaintext: hex::encode(block.as_bytes()),
        },
    )?;
    Ok(true)
}

fn forge(cfg: &WorkspaceConfig, target: &ForgeTarget) -> Result<bool> {
    let seed = cfg.require_seed()?;
    let registry = cfg.load_registry()?;
    let key = registry.require(cfg.slot)?;
    let config = target_config(target, key.block_length());
    let params = SearchParams::new(cfg.workers, seed.derive("forge", 0), cfg.max_attempts);
    println!(
        "searching slot={} window=[{:#x},{:#x}) workers={} budget={}",
        cfg.slot, config.target_window.start, config.target_window.end, cfg.workers, cfg.max_attempts
    );
    let found = brute_force_search_with_progress(key, &config, &params, |p| println!("{}", p.line()))?;
    match found {
        Some(res) => {
            println!(
                "found landing={:#x} attempts={} elapsed={:.1}s",
                res.landing_offset,
                res.attempts,
                res.elapsed.as_secs_f64()
            );
            write_json(&cfg.artifact("forge.json"), &res.record(params.seed))?;
            Ok(true)
        }
        None => {
            println!("no signature within {} attempts", cfg.max_attempts);
            Ok(false)
        }
    }
}

fn forge_oracle(cfg: &WorkspaceConfig, landing: Option<i64>) -> Result<bool> {
    let seed = cfg.require_seed()?;
    let key = cfg.load_key(cfg.slot)?;
    let landing = landing.unwrap_or(key.block_length() as i64);
    let s = seed.derive("forge-oracle", 0);
    let res = forge_with_private_key(&key, landing, s)?;
    write_json(&cfg.artifact("forge.json"), &res.record(s))?;
    println!("signed exploit plaintext for slot={} landing={landing:#x}", cfg.slot);
    Ok(true)
}

#[derive(Serialize)]
struct EstimateOutput {
    block_length: usize,
    config: ParserConfig,
    below_modulus: bool,
    estimate: bootforge_core::forge::Estimate,
    log2_p: Option<f64>,
}

fn estimate(
    cfg: &WorkspaceConfig,
    samples: u64,
    block_length: Option<usize>,
    target: &ForgeTarget,
    below_modulus: bool,
) -> Result<bool> {
    let seed = cfg.require_seed()?.derive("estimate", 0);
    let (bl, est) = if below_modulus {
        let registry = cfg.load_registry()?;
        let key = registry.require(cfg.slot)?;
        let config = target_config(target, key.block_length());
        (key.block_length(), estimate_hit_probability_below(&key.n, &config, samples, seed)?)
    } else {
        let bl = cfg.block_length(block_length)?;
        (bl, estimate_hit_probability(bl, &target_config(target, bl), samples, seed)?)
    };
    let log2_p = (est.hits > 0).then(|| est.log2());
    println!(
        "hits={} samples={} p={:.3e} ci95=[{:.3e}, {:.3e}] log2(p)={}",
        est.hits,
        est.samples,
        est.p,
        est.ci_low,
        est.ci_high,
        log2_p.map_or("-inf".to_string(), |v| format!("{v:.2}"))
    );
    write_json(
        &cfg.artifact("estimate.json"),
        &EstimateOutput {
            block_length: bl,
            config: target_config(target, bl),
            below_modulus,
            estimate: est,
            log2_p,
        },
    )?;
    Ok(true)
}

fn verify(cfg: &WorkspaceConfig, image: &Path, calc_hash_offset: Option<i64>) -> Result<bool> {
    let registry = cfg.load_registry()?;
    let key = registry.require(cfg.slot)?;
    let bl = key.block_length();
    let stack = match calc_hash_offset {
        Some(off) => StackModel::with_calc_hash_at(bl, off)?,
        None => StackModel::boot9(bl),
    };
    let v = validate_firm(&read_image(image)?, key, &parser_config(cfg.parser_mode, bl), &stack)?;
    let verdict = match v.signature.verdict {
        Verdict::Accept => "accept".to_string(),
        Verdict::Reject(r) => format!("reject reason={r:?}"),
        Verdict::OutOfBounds => "out_of_bounds".to_string(),
    };
    println!(
        "mode={:?} slot={} signature={} sections={:?} accepted={}",
        cfg.parser_mode, cfg.slot, verdict, v.sections, v.accepted
    );
    write_json(&cfg.artifact("verify.json"), &v)?;
    Ok(v.accepted)
}

struct Sim {
    registry: KeyRegistry,
    parser: ParserConfig,
    machine: Machine,
}

impl Sim {
    fn new(cfg: &WorkspaceConfig, source: Option<bootforge_core::bootsim::BootSource>) -> Result<Self> {
        let seed = cfg.require_seed()?;
        let registry = cfg.load_registry()?;
        let nand = KeySlot::new(cfg.slot.console, SigType::NandBoot);
        let bl = registry.require(nand)?.block_length();
        let mut machine = Machine::new(seed).with_config(MachineConfig {
            console: cfg.slot.console,
            source_override: source,
            ..MachineConfig::default()
        });
        machine.stores = Stores::load(&cfg.sim_dir())?;
        Ok(Sim {
            registry,
            parser: parser_config(cfg.parser_mode, bl),
            machine,
        })
    }
}

fn save_report(cfg: &WorkspaceConfig, name: &str, report: &BootReport) -> Result<()> {
    write_json(&cfg.artifact(&format!("{name}_report.json")), report)?;
    write(&cfg.artifact(&format!("{name}_events.log")), report.event_log().as_bytes())
}

fn summary(label: &str, r: &BootReport) {
    println!(
        "{label}: source={:?} outcome={:?} reached_entry={} exfiltrated={} steps={}",
        r.boot_source,
        r.outcome,
        r.reached_entry,
        !r.exfiltrated.is_empty(),
        r.steps
    );
}

fn boot(
    cfg: &WorkspaceConfig,
    image: &Path,
    inputs: &InputArgs,
    source: Option<bootforge_core::bootsim::BootSource>,
) -> Result<bool> {
    let mut sim = Sim::new(cfg, source)?;
    sim.machine.inputs = Inputs {
        keys_held: inputs.keys.iter().copied().collect(),
        shell_closed: inputs.shell_closed,
        ntr_cart_present: inputs.cart,
        magnet_applied: inputs.magnet,
    };
    let bytes = read(image)?;
    let Sim { registry, parser, mut machine } = sim;
    let env = BootEnv {
        registry: &registry,
        parser: &parser,
        policy: cfg.blacklist_policy,
    };
    let report = run_boot(&mut machine, &bytes, env);
    machine.stores.save(&cfg.sim_dir())?;
    save_report(cfg, "boot", &report)?;
    summary("boot", &report);
    Ok(report.outcome.is_success())
}

/// Staged image signed for `slot`: from `signature` if given, else with the
/// slot's private key.
fn signed_staged(cfg: &WorkspaceConfig, slot: KeySlot, opts: &StagedImageOptions, signature: Option<&Path>) -> Result<Vec<u8>> {
    let img = build_staged_image(opts)?;
    let sig = match signature {
        Some(p) => read_signature(p)?,
        None => {
            let key = cfg.load_key(slot)?;
            let s = cfg.require_seed()?.derive("staged-signature", 0);
            forge_with_private_key(&key, key.block_length() as i64, s)?.signature_bytes()
        }
    };
    Ok(fakesign_firm(img, &sig)?.serialize())
}

fn exploit(cfg: &WorkspaceConfig, dump: bool, second: Option<&Path>, signature: Option<&Path>) -> Result<bool> {
    let sim = Sim::new(cfg, None)?;
    let staged = signed_staged(cfg, cfg.slot, &StagedImageOptions::default(), signature)?;
    write(&cfg.artifact("staged.firm"), &staged)?;
    let second = second.map(read).transpose()?;
    let keys = if dump { dump_keys() } else { BTreeSet::new() };
    let Sim { registry, parser, mut machine } = sim;
    let env = BootEnv {
        registry: &registry,
        parser: &parser,
        policy: cfg.blacklist_policy,
    };
    let report = run_exploit_chain(&mut machine, &staged, second.as_deref(), &keys, env);
    machine.stores.save(&cfg.sim_dir())?;
    save_report(cfg, "exploit", &report)?;
    summary("exploit", &report);
    for f in &report.sd_files {
        println!("sd: {}", cfg.sim_dir().join("sd").join(f).display());
    }
    Ok(report.outcome.is_success())
}

fn ntr_install(cfg: &WorkspaceConfig, cart_slot: KeySlot, no_cart: bool, second: Option<&Path>) -> Result<bool> {
    let mut sim = Sim::new(cfg, None)?;
    let nand_slot = KeySlot::new(cart_slot.console, SigType::NandBoot);
    let nand_image = signed_staged(cfg, nand_slot, &StagedImageOptions::default(), None)?;
    let flashcart = signed_staged(
        cfg,
        cart_slot,
        &StagedImageOptions {
            stage_two: StageTwo::Install { nand_image },
            omit_handler_section: false,
        },
        None,
    )?;
    write(&cfg.artifact("flashcart.firm"), &flashcart)?;
    if let Some(p) = second {
        sim.machine.stores.sd.insert("second.firm".into(), read(p)?);
    }
    sim.machine.inputs.ntr_cart_present = !no_cart;
    let Sim { registry, parser, mut machine } = sim;
    let env = BootEnv {
        registry: &registry,
        parser: &parser,
        policy: cfg.blacklist_policy,
    };
    let r = run_ntr_install_scenario(&mut machine, &flashcart, env);
    machine.stores.save(&cfg.sim_dir())?;
    write_json(&cfg.artifact("ntr_report.json"), &r)?;
    write(&cfg.artifact("ntr_events.log"), r.cart_boot.event_log().as_bytes())?;
    summary("cart boot", &r.cart_boot);
    match &r.nand_boot {
        Some(nb) => {
            summary("nand boot", nb);
            Ok(nb.reached_entry)
        }
        None => {
            if r.cart_boot.boot_source == Some(bootforge_core::bootsim::BootSource::Nand) {
                println!("no cartridge boot: NAND booted directly");
                Ok(r.cart_boot.outcome.is_success())
            } else {
                println!("nothing installed");
                Ok(false)
            }
        }
    }
}
