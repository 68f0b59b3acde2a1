mod common;

use std::collections::BTreeSet;

use bootforge_core::bootsim::memory::{BOOT9_PROTECTED, PROTECTED_LEN};
use bootforge_core::bootsim::payload::{StageTwo, SEC1_BASE};
use bootforge_core::bootsim::script::{encode_routine, Op};
use bootforge_core::bootsim::*;
use bootforge_core::firm::{build_firm, CopyMethod, FirmEntry};
use bootforge_core::sigparser::{RejectReason, Verdict};
use bootforge_core::Seed;
use common::*;

const MACHINE_SEED: Seed = Seed([0x42; 32]);

fn machine() -> Machine {
    Machine::new(MACHINE_SEED)
}

fn staged(fx: &Fixture, label: &str, stage_two: StageTwo) -> Vec<u8> {
    let img = build_staged_image(&StagedImageOptions {
        stage_two,
        omit_handler_section: false,
    })
    .unwrap();
    fx.fakesign(img, label)
}

#[test]
fn honest_image_boots_under_both_parsers() {
    let fx = Fixture::new();
    let image = fx.sign(plain_image(), "retail.nand");
    for strict in [false, true] {
        let mut m = machine();
        let r = run_boot(&mut m, &image, fx.env(strict, BlacklistPolicy::Boot9DataOnly));
        assert_eq!(r.outcome, BootOutcome::Booted, "strict={strict}");
        assert!(r.reached_entry);
        assert!(r.exfiltrated.is_empty());
        assert!(r.locks_final.all_set());
        assert_eq!(r.boot_source, Some(BootSource::Nand));
        assert_eq!(r.key_slot, Some("retail.nand".parse().unwrap()));
        assert_eq!(r.sections_loaded.len(), 2);
        let lock = r.first_step(EventKind::Lock).unwrap();
        assert!(r.events_of(EventKind::SectionCopy).all(|e| e.step < lock));
        assert_eq!(r.events_of(EventKind::Entry).count(), 2, "both processors jump");
    }
}

#[test]
fn fakesigned_image_rejected_by_strict_parser() {
    let fx = Fixture::new();
    let image = fx.fakesign(plain_image(), "retail.nand");
    let r = run_boot(&mut machine(), &image, fx.env(true, BlacklistPolicy::Boot9DataOnly));
    assert!(matches!(r.outcome, BootOutcome::Failure(_)));
    assert_eq!(
        r.signature_verdict.unwrap().verdict,
        Verdict::Reject(RejectReason::BadBlockType)
    );
    assert!(!r.reached_entry);
    let r = run_boot(&mut machine(), &image, fx.env(false, BlacklistPolicy::Boot9DataOnly));
    assert_eq!(r.outcome, BootOutcome::Booted);
}

#[test]
fn factory_offset_signature_halts_instead_of_failing() {
    let fx = Fixture::new();
    let factory = fx.forged("retail.nand", BLOCK as i64 + 0x60);
    let img = bootforge_core::firm::fakesign_firm(plain_image(), &factory).unwrap().serialize();
    let r = run_boot(&mut machine(), &img, fx.env(false, BlacklistPolicy::Boot9DataOnly));
    assert!(matches!(r.outcome, BootOutcome::Halt(_)), "{:?}", r.outcome);
    assert_eq!(r.signature_verdict.unwrap().verdict, Verdict::OutOfBounds);

    let bad = plain_image().with_signature(&[0x01; BLOCK]).unwrap().serialize();
    let r = run_boot(&mut machine(), &bad, fx.env(false, BlacklistPolicy::Boot9DataOnly));
    assert!(matches!(r.outcome, BootOutcome::Failure(_)), "{:?}", r.outcome);
    assert!(matches!(r.signature_verdict.unwrap().verdict, Verdict::Reject(_)));
}

#[test]
fn dump_path_exfiltrates_both_halves_before_lock() {
    let fx = Fixture::new();
    let image = staged(&fx, "retail.nand", StageTwo::DumpOrChain);
    let mut m = machine();
    let r = run_exploit_chain(&mut m, &image, None, &dump_keys(), fx.env(false, BlacklistPolicy::Boot9DataOnly));
    assert_eq!(r.outcome, BootOutcome::PoweredOff, "{}", r.event_log());
    assert_eq!(r.aborts, vec![AbortRecord { address: 0, handled: true }]);
    assert_eq!(m.stores.sd["boot9_protected.bin"], m.boot9_protected());
    assert_eq!(m.stores.sd["boot11_protected.bin"], m.boot11_protected());
    assert_eq!(r.exfiltrated.boot9_protected.as_deref(), Some(m.boot9_protected()));
    assert_eq!(r.exfiltrated.boot11_protected.as_deref(), Some(m.boot11_protected()));
    let lock = r.first_step(EventKind::Lock).expect("stage 2 locks");
    let reads: Vec<_> = r.events_of(EventKind::ProtectedRead).collect();
    assert_eq!(reads.len(), 2);
    assert!(reads.iter().any(|e| e.proc == Proc::Arm11));
    assert!(reads.iter().all(|e| e.step < lock && e.len == PROTECTED_LEN));
    assert_eq!(r.events_of(EventKind::LockViolation).count(), 0);
    assert_eq!(r.sections_loaded.len(), 3, "section 3 skipped by the handler");
}

#[test]
fn chain_path_locks_and_boots_second_image() {
    let fx = Fixture::new();
    let image = staged(&fx, "retail.nand", StageTwo::DumpOrChain);
    let second = fcram_image().serialize();
    let mut m = machine();
    let r = run_exploit_chain(
        &mut m,
        &image,
        Some(&second),
        &BTreeSet::new(),
        fx.env(false, BlacklistPolicy::Boot9DataOnly),
    );
    assert_eq!(r.outcome, BootOutcome::Booted, "{}", r.event_log());
    assert!(r.reached_entry);
    assert!(r.locks_final.all_set());
    assert!(r.sd_files.is_empty());
    let lock = r.first_step(EventKind::Lock).unwrap();
    assert!(r.events_of(EventKind::ChainLoad).all(|e| e.step > lock));
    let entries: Vec<_> = r.events_of(EventKind::Entry).map(|e| (e.proc, e.addr)).collect();
    assert!(entries.contains(&(Proc::Arm9, 0x2000_0000)));
    assert!(entries.contains(&(Proc::Arm11, 0x2000_0400)));
}

#[test]
fn chain_path_without_second_image_fails() {
    let fx = Fixture::new();
    let image = staged(&fx, "retail.nand", StageTwo::DumpOrChain);
    let r = run_exploit_chain(
        &mut machine(),
        &image,
        None,
        &BTreeSet::new(),
        fx.env(false, BlacklistPolicy::Boot9DataOnly),
    );
    assert!(matches!(r.outcome, BootOutcome::Failure(ref s) if s.contains("second.firm")));
}

#[test]
fn hardened_policy_stops_at_ndma_window() {
    let fx = Fixture::new();
    let image = staged(&fx, "retail.nand", StageTwo::DumpOrChain);
    let r = run_exploit_chain(&mut machine(), &image, None, &dump_keys(), fx.env(false, BlacklistPolicy::Hardened));
    assert!(matches!(r.outcome, BootOutcome::Failure(_)));
    let v: Vec<_> = r.events_of(EventKind::BlacklistViolation).collect();
    assert_eq!(v.len(), 1);
    assert_eq!(v[0].addr, NDMA_BASE);
    assert_eq!(r.sections_loaded.len(), 2);
    assert!(r.exfiltrated.is_empty());
    assert!(r.aborts.is_empty());
}

#[test]
fn missing_handler_section_halts_on_abort() {
    let fx = Fixture::new();
    let img = build_staged_image(&StagedImageOptions {
        stage_two: StageTwo::DumpOrChain,
        omit_handler_section: true,
    })
    .unwrap();
    let image = fx.fakesign(img, "retail.nand");
    let r = run_exploit_chain(&mut machine(), &image, None, &dump_keys(), fx.env(false, BlacklistPolicy::Boot9DataOnly));
    assert!(matches!(r.outcome, BootOutcome::Halt(_)), "{:?}", r.outcome);
    assert_eq!(r.aborts, vec![AbortRecord { address: 0, handled: false }]);
    assert!(r.exfiltrated.is_empty());
}

#[test]
fn ndma_section_copies_protected_half_before_lock() {
    let fx = Fixture::new();
    let reqs = NdmaRequest::encode_all(&[NdmaRequest::immediate(BOOT9_PROTECTED, 0x0801_0000, PROTECTED_LEN)]);
    let img = build_firm(
        &[
            FirmEntry::new(0x0800_6000, CopyMethod::Ndma, vec![1; 0x200]),
            FirmEntry::new(NDMA_BASE, CopyMethod::Ndma, reqs),
        ],
        0x0800_6000,
        0x1FF8_0000,
        0,
    )
    .unwrap();
    let image = fx.sign(img, "retail.nand");
    let mut m = machine();
    let r = run_boot(&mut m, &image, fx.env(false, BlacklistPolicy::Boot9DataOnly));
    assert_eq!(r.outcome, BootOutcome::Booted);
    assert_eq!(r.exfiltrated.boot9_protected.as_deref(), Some(m.boot9_protected()));
    assert!(r.exfiltrated.boot11_protected.is_none());
    let e: Vec<_> = r.events_of(EventKind::NdmaCopy).collect();
    assert_eq!((e[0].addr, e[0].len), (0x0801_0000, PROTECTED_LEN));
}

#[test]
fn section_at_null_aborts() {
    let fx = Fixture::new();
    let img = build_firm(&[FirmEntry::new(0, CopyMethod::Ndma, vec![1; 0x200])], 0, 0, 0).unwrap();
    let r = run_boot(&mut machine(), &fx.sign(img, "retail.nand"), fx.env(false, BlacklistPolicy::Boot9DataOnly));
    let aborts: Vec<_> = r.events_of(EventKind::DataAbort).collect();
    assert_eq!(aborts.len(), 1);
    assert_eq!(aborts[0].addr, 0);
    assert!(matches!(r.outcome, BootOutcome::Halt(_)));
}

/// Handler that points hook B at `routine`, then skips the faulting copy.
fn hooked_image(routine: &[Op]) -> bootforge_core::firm::FirmImage {
    let handler = encode_routine(&[
        Op::Write32 {
            addr: BOOT9_HOOK_B,
            value: SEC1_BASE + 0x400,
        },
        Op::SkipFault,
        Op::Return,
    ]);
    let mut sec1 = vec![0u8; 0x600];
    sec1[..handler.len()].copy_from_slice(&handler);
    sec1[0x200..0x204].copy_from_slice(&SEC1_BASE.to_le_bytes());
    let r = encode_routine(routine);
    sec1[0x400..0x400 + r.len()].copy_from_slice(&r);
    build_firm(
        &[
            FirmEntry::new(SEC1_BASE, CopyMethod::Ndma, sec1),
            FirmEntry::new(
                NDMA_BASE,
                CopyMethod::Ndma,
                NdmaRequest::encode_all(&[NdmaRequest::immediate(SEC1_BASE + 0x200, DABT_VECTOR, 4)]),
            ),
            FirmEntry::new(0, CopyMethod::Ndma, vec![0xA5; 0x200]),
        ],
        SEC1_BASE,
        0x1FF8_0000,
        0,
    )
    .unwrap()
}

#[test]
fn locked_reads_return_zeros_and_second_lock_is_ignored() {
    let fx = Fixture::new();
    let img = hooked_image(&[
        Op::Lock,
        Op::Copy {
            src: BOOT9_PROTECTED,
            dst: 0x0801_0000,
            len: PROTECTED_LEN,
        },
        Op::SdWrite {
            file: script::SdFile::Boot9Protected,
            src: 0x0801_0000,
            len: PROTECTED_LEN,
        },
        Op::Return,
    ]);
    let mut m = machine();
    let r = run_boot(&mut m, &fx.fakesign(img, "retail.nand"), fx.env(false, BlacklistPolicy::Boot9DataOnly));
    assert_eq!(r.outcome, BootOutcome::Booted, "{}", r.event_log());
    assert!(r.exfiltrated.is_empty());
    assert_eq!(m.stores.sd["boot9_protected.bin"], vec![0u8; PROTECTED_LEN as usize]);
    let v: Vec<_> = r.events_of(EventKind::LockViolation).map(|e| (e.addr, e.len)).collect();
    assert_eq!(v, vec![(BOOT9_PROTECTED, PROTECTED_LEN), (0, 4)]);
    assert_eq!(r.events_of(EventKind::Lock).count(), 2);
    assert!(r.locks_final.all_set());
}

#[test]
fn deadlock_trips_the_watchdog() {
    let fx = Fixture::new();
    let img = hooked_image(&[Op::WaitEq { addr: 0x1FFF_FF30, value: 1 }, Op::Return]);
    let mut m = machine().with_config(MachineConfig {
        watchdog: 20_000,
        ..MachineConfig::default()
    });
    let r = run_boot(&mut m, &fx.fakesign(img, "retail.nand"), fx.env(false, BlacklistPolicy::Boot9DataOnly));
    assert!(matches!(r.outcome, BootOutcome::Failure(ref s) if s.contains("watchdog")));
    assert_eq!(r.events_of(EventKind::Watchdog).count(), 1);
    assert!(r.steps >= 20_000);
}

#[test]
fn ntr_install_then_nand_boot() {
    let fx = Fixture::new();
    let nand_image = staged(&fx, "retail.nand", StageTwo::DumpOrChain);
    let flashcart = staged(&fx, "retail.nonnand", StageTwo::Install { nand_image: nand_image.clone() });
    let mut m = machine();
    m.inputs.ntr_cart_present = true;
    m.stores.sd.insert("second.firm".into(), fcram_image().serialize());
    let r = run_ntr_install_scenario(&mut m, &flashcart, fx.env(false, BlacklistPolicy::Boot9DataOnly));
    assert_eq!(r.cart_boot.boot_source, Some(BootSource::NtrCart));
    assert_eq!(r.cart_boot.key_slot, Some("retail.nonnand".parse().unwrap()));
    assert_eq!(r.cart_boot.outcome, BootOutcome::PoweredOff, "{}", r.cart_boot.event_log());
    assert!(r.cart_boot.nand_installed);
    assert_eq!(m.stores.nand.as_deref(), Some(&nand_image[..]));
    let nb = r.nand_boot.expect("follow-up boot");
    assert_eq!(nb.boot_source, Some(BootSource::Nand));
    assert!(nb.reached_entry, "{}", nb.event_log());

    let wrong = staged(&fx, "retail.nand", StageTwo::Install { nand_image });
    let mut m = machine();
    m.inputs.ntr_cart_present = true;
    let r = run_ntr_install_scenario(&mut m, &wrong, fx.env(false, BlacklistPolicy::Boot9DataOnly));
    assert!(matches!(r.cart_boot.signature_verdict.unwrap().verdict, Verdict::Reject(_)));
    assert!(matches!(r.cart_boot.outcome, BootOutcome::Failure(_)));
    assert!(r.nand_boot.is_none());
    assert!(m.stores.nand.is_none());
}

#[test]
fn ntr_without_cart_boots_nand() {
    let fx = Fixture::new();
    let flashcart = staged(&fx, "retail.nonnand", StageTwo::Install { nand_image: vec![1; 16] });
    let mut m = machine();
    m.stores.nand = Some(fx.sign(plain_image(), "retail.nand"));
    let r = run_ntr_install_scenario(&mut m, &flashcart, fx.env(false, BlacklistPolicy::Boot9DataOnly));
    assert_eq!(r.cart_boot.boot_source, Some(BootSource::Nand));
    assert_eq!(r.cart_boot.outcome, BootOutcome::Booted);
    assert!(!r.cart_boot.nand_installed);
    assert!(r.nand_boot.is_none());
}

#[test]
fn magnet_stands_in_for_closed_shell() {
    let fx = Fixture::new();
    let image = fx.sign(plain_image(), "retail.nonnand");
    let mut m = machine();
    m.inputs = Inputs {
        keys_held: ntr_boot_keys(),
        shell_closed: false,
        ntr_cart_present: true,
        magnet_applied: true,
    };
    let r = run_boot(&mut m, &image, fx.env(false, BlacklistPolicy::Boot9DataOnly));
    assert_eq!(r.boot_source, Some(BootSource::NtrCart));
    assert_eq!(r.outcome, BootOutcome::Booted);
    assert!(m.stores.nand.is_none());
}

#[test]
fn wifi_source_only_by_override() {
    let fx = Fixture::new();
    let image = fx.sign(plain_image(), "retail.nonnand");
    let mut m = machine().with_config(MachineConfig {
        source_override: Some(BootSource::WifiSpi),
        ..MachineConfig::default()
    });
    let r = run_boot(&mut m, &image, fx.env(true, BlacklistPolicy::Boot9DataOnly));
    assert_eq!(r.boot_source, Some(BootSource::WifiSpi));
    assert_eq!(r.outcome, BootOutcome::Booted);
}

#[test]
fn simulation_is_deterministic() {
    let fx = Fixture::new();
    let image = staged(&fx, "retail.nand", StageTwo::DumpOrChain);
    let run = || {
        let mut m = machine();
        run_exploit_chain(&mut m, &image, None, &dump_keys(), fx.env(false, BlacklistPolicy::Boot9DataOnly))
    };
    let (a, b) = (run(), run());
    assert_eq!(a.event_log(), b.event_log());
    assert_eq!(a.to_json(), b.to_json());
    assert_eq!(a, b);
    let parsed: BootReport = serde_json::from_str(&a.to_json()).unwrap();
    assert_eq!(parsed.exfiltrated, a.exfiltrated);
    assert!(a.event_log().lines().all(|l| l.starts_with("step=")));
}
