//! End-to-end checks of the `printcan` binary: exit codes, the
//! run/verify round trip, and scenario listing.

use std::path::PathBuf;
use std::process::{Command, Output};

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_printcan")
}

fn scenario_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
}

fn temp_dir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("printcan-cli-{tag}-{}", std::process::id()));
    std::fs::create_dir_all(&dir).expect("temp dir");
    dir
}

fn run(args: &[&std::ffi::OsStr]) -> Output {
    Command::new(bin()).args(args).output().expect("binary runs")
}

fn stdout(output: &Output) -> String {
    String::from_utf8_lossy(&output.stdout).into_owned()
}

#[test]
fn run_then_verify_round_trips() {
    let dir = temp_dir("roundtrip");
    let scenario = scenario_dir().join("eavesdrop_settings.scn");
    let trace = dir.join("trace.log");

    let ran = run(&[
        "run".as_ref(),
        scenario.as_os_str(),
        "--trace".as_ref(),
        trace.as_os_str(),
    ]);
    assert!(
        ran.status.success(),
        "run failed:\n{}{}",
        stdout(&ran),
        String::from_utf8_lossy(&ran.stderr)
    );
    assert!(stdout(&ran).contains("assertions passed"));

    let verified = run(&["verify".as_ref(), scenario.as_os_str(), trace.as_os_str()]);
    assert!(verified.status.success(), "verify failed:\n{}", stdout(&verified));
    assert!(stdout(&verified).contains("trace verified"));

    let _ = std::fs::remove_dir_all(&dir);
}

#[test]
fn verify_rejects_a_tampered_trace() {
    let dir = temp_dir("tamper");
    let scenario = scenario_dir().join("eavesdrop_settings.scn");
    let trace = dir.join("trace.log");

    let ran = run(&[
        "run".as_ref(),
        scenario.as_os_str(),
        "--trace".as_ref(),
        trace.as_os_str(),
        "--quiet".as_ref(),
    ]);
    assert!(ran.status.success());

    // Flip one payload nibble on the first line.
    let text = std::fs::read_to_string(&trace).expect("trace");
    let tampered = {
        let mut lines: Vec<String> = text.lines().map(str::to_owned).collect();
        let first = &mut lines[0];
        let hash = first.find('#').expect("payload separator");
        let target = hash + 1;
        let original = first.as_bytes()[target];
        let replacement = if original == b'0' { b'1' } else { b'0' };
        first.replace_range(target..=target, std::str::from_utf8(&[replacement]).unwrap());
        lines.join("\n") + "\n"
    };
    std::fs::write(&trace, tampered).expect("write tampered trace");

    let verified = run(&["verify".as_ref(), scenario.as_os_str(), trace.as_os_str()]);
    assert_eq!(verified.status.code(), Some(1), "tampered trace must fail verification");
    assert!(stdout(&verified).contains("trace mismatch at line 1"));

    let _ = std::fs::remove_dir_all(&dir);
}

#[test]
fn list_names_every_bundled_scenario() {
    let dir = scenario_dir();
    let output = run(&["list".as_ref(), "--dir".as_ref(), dir.as_os_str()]);
    assert!(output.status.success(), "list failed:\n{}", stdout(&output));

    let listing = stdout(&output);
    let mut bundled: Vec<String> = std::fs::read_dir(&dir)
        .expect("scenario dir")
        .filter_map(|e| e.ok())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .filter(|name| name.ends_with(".scn"))
        .collect();
    bundled.sort();
    assert!(!bundled.is_empty());
    for name in &bundled {
        assert!(listing.contains(name.as_str()), "listing is missing {name}:\n{listing}");
    }
    assert!(!listing.contains("unreadable"), "a bundled scenario failed to parse:\n{listing}");
}

#[test]
fn missing_scenario_is_an_error_not_a_failure() {
    let output = run(&["run".as_ref(), "does-not-exist.scn".as_ref()]);
    assert_eq!(output.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&output.stderr).contains("error:"));
}

#[test]
fn failing_assertions_exit_one() {
    let dir = temp_dir("failing");
    let path = dir.join("fails.scn");
    std::fs::write(
        &path,
        "name = smoke_fail\nduration = 0.5\n\n[assert]\nat end board.fault == true\n",
    )
    .expect("write scenario");

    let output = run(&["run".as_ref(), path.as_os_str()]);
    assert_eq!(output.status.code(), Some(1));
    let text = stdout(&output);
    assert!(text.contains("FAIL line 5"), "expected a FAIL line:\n{text}");
    assert!(text.contains("0/1 assertions passed"), "expected summary:\n{text}");

    let _ = std::fs::remove_dir_all(&dir);
}
