use std::path::Path;
use std::process::{Command, Output};

use bootforge_core::bootsim::Machine;
use bootforge_core::Seed;

const SEED: &str = "1111111111111111111111111111111111111111111111111111111111111111";

fn bootforge(workdir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bootforge"))
        .env("BOOTFORGE_WORKDIR", workdir)
        .args(args)
        .output()
        .expect("spawn bootforge")
}

fn ok(workdir: &Path, args: &[&str]) -> String {
    let out = bootforge(workdir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn keygen(workdir: &Path) {
    ok(workdir, &["--seed", SEED, "keygen", "--bits", "512"]);
}

fn plain_descriptor(dir: &Path) -> std::path::PathBuf {
    std::fs::write(dir.join("arm9.bin"), vec![0xA9; 0x200]).unwrap();
    std::fs::write(dir.join("arm11.bin"), vec![0x11; 0x100]).unwrap();
    let desc = dir.join("image.json");
    std::fs::write(
        &desc,
        r#"{"arm9_entry":"0x08006000","arm11_entry":"0x1FF80000",
            "sections":[{"phys_addr":"0x08006000","payload_file":"arm9.bin"},
                        {"phys_addr":"0x1FF80000","payload_file":"arm11.bin"}]}"#,
    )
    .unwrap();
    desc
}

#[test]
fn keygen_is_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    keygen(a.path());
    keygen(b.path());
    for name in ["registry.txt", "retail.nand.key", "dev.nonnand.key"] {
        let x = std::fs::read(a.path().join("keys").join(name)).unwrap();
        let y = std::fs::read(b.path().join("keys").join(name)).unwrap();
        assert_eq!(x, y, "{name}");
    }
}

#[test]
fn fakesigned_image_verifies_only_under_flawed_parser() {
    let dir = tempfile::tempdir().unwrap();
    let w = dir.path();
    keygen(w);
    let desc = plain_descriptor(w);
    ok(w, &["build-firm", desc.to_str().unwrap()]);
    ok(w, &["--seed", SEED, "forge-oracle"]);
    let (plain, record) = (w.join("image.firm"), w.join("forge.json"));
    ok(w, &["fakesign", plain.to_str().unwrap(), "--signature", record.to_str().unwrap()]);
    let image = w.join("fakesigned.firm");
    let flawed = bootforge(w, &["--mode", "flawed", "verify", image.to_str().unwrap()]);
    assert_eq!(flawed.status.code(), Some(0), "{}", String::from_utf8_lossy(&flawed.stdout));
    let strict = bootforge(w, &["--mode", "strict", "verify", image.to_str().unwrap()]);
    assert_eq!(strict.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&strict.stdout).contains("reject"));

    ok(w, &["sign", w.join("image.firm").to_str().unwrap()]);
    let honest = bootforge(w, &["--mode", "strict", "verify", w.join("signed.firm").to_str().unwrap()]);
    assert_eq!(honest.status.code(), Some(0));
}

#[test]
fn exploit_dump_writes_protected_halves_to_sd() {
    let dir = tempfile::tempdir().unwrap();
    let w = dir.path();
    keygen(w);
    let out = ok(w, &["--seed", SEED, "exploit", "--dump-keys"]);
    assert!(out.contains("PoweredOff"), "{out}");
    let machine = Machine::new(SEED.parse::<Seed>().unwrap());
    let sd = w.join("sim").join("sd");
    assert_eq!(std::fs::read(sd.join("boot9_protected.bin")).unwrap(), machine.boot9_protected());
    assert_eq!(std::fs::read(sd.join("boot11_protected.bin")).unwrap(), machine.boot11_protected());
    let log = std::fs::read_to_string(w.join("exploit_events.log")).unwrap();
    assert!(log.lines().any(|l| l.contains("event=lock")));

    let hardened = bootforge(w, &["--seed", SEED, "--policy", "hardened", "exploit", "--dump-keys"]);
    assert_eq!(hardened.status.code(), Some(1));
}

#[test]
fn ntr_install_then_nand_boot() {
    let dir = tempfile::tempdir().unwrap();
    let w = dir.path();
    keygen(w);
    let no_second = bootforge(w, &["--seed", SEED, "ntr-install"]);
    assert_eq!(no_second.status.code(), Some(1));
    let desc = plain_descriptor(w);
    ok(w, &["build-firm", desc.to_str().unwrap()]);
    ok(w, &["sign", w.join("image.firm").to_str().unwrap()]);
    let second = w.join("signed.firm");
    let out = ok(w, &["--seed", SEED, "ntr-install", "--second", second.to_str().unwrap()]);
    assert!(out.contains("nand boot: source=Some(Nand) outcome=Booted"), "{out}");
    assert!(w.join("sim").join("nand").join("firm0.bin").exists());
}

#[test]
fn usage_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(bootforge(dir.path(), &["--bogus"]).status.code(), Some(2));
    assert_eq!(bootforge(dir.path(), &["--seed", "xyz", "keygen"]).status.code(), Some(2));
    // randomized command without a seed
    assert_eq!(bootforge(dir.path(), &["keygen", "--bits", "512"]).status.code(), Some(2));
    // missing registry
    assert_eq!(bootforge(dir.path(), &["verify", "nothing.firm"]).status.code(), Some(2));
}

#[test]
fn workdir_env_is_honored() {
    let dir = tempfile::tempdir().unwrap();
    let w = dir.path().join("nested");
    keygen(&w);
    assert!(w.join("keys").join("registry.txt").exists());
}

#[test]
fn estimate_writes_json() {
    let dir = tempfile::tempdir().unwrap();
    let w = dir.path();
    ok(
        w,
        &["--seed", SEED, "estimate", "--samples", "100000", "--block-length", "64", "--relaxed"],
    );
    let v: serde_json::Value = serde_json::from_slice(&std::fs::read(w.join("estimate.json")).unwrap()).unwrap();
    assert_eq!(v["block_length"], 64);
    assert_eq!(v["estimate"]["samples"], 100000);
}
