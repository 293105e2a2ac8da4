use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use autobox::ledger::HistoryEntry;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_autobox"));
    c.env_remove("AUTOBOX_OUT");
    c
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../scenarios")
        .join(format!("{name}.json"))
}

fn run(name: &str, out: &Path, extra: &[&str]) -> Output {
    bin()
        .arg("run")
        .arg(fixture(name))
        .arg("-o")
        .arg(out)
        .args(extra)
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn report(out: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(out.join("report.json")).unwrap()).unwrap()
}

fn vehicle_key(out: &Path) -> String {
    report(out)["vehicles"][0]["vehicle_key"].as_str().unwrap().to_string()
}

#[test]
fn baseline_run_succeeds_and_writes_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let o = run("baseline", dir.path(), &[]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    assert!(stdout(&o).contains("Approved"));
    for f in [
        "ledger.log",
        "verdicts.tsv",
        "ground_truth.jsonl",
        "report.json",
        "approved_library.tsv",
    ] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    let vdir = dir.path().join("vehicles/1HGCM82633A004352");
    assert!(vdir.join("mirror.dump").exists());
    assert!(vdir.join("cluster-0.parity").exists());
    assert_eq!(report(dir.path())["findings"], 0);
}

#[test]
fn tamper_scenario_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let o = run("odometer_rollback", dir.path(), &[]);
    assert_eq!(o.status.code(), Some(1));
    let o = run("odometer_rollback", dir.path(), &["--expect-findings"]);
    assert_eq!(o.status.code(), Some(0));
    let r = report(dir.path());
    assert_eq!(r["vehicles"][0]["tamper_flag"], true);
    assert_eq!(r["vehicles"][0]["tamper_fields"]["odometer_km"][0], "HeadUnit");
    assert!(stdout(&o).contains("TAMPER FLAG"));
}

#[test]
fn malformed_scenario_reports_line() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    std::fs::write(&path, "{\n  \"seed\": 1,\n  \"vehicle\": [\n}\n").unwrap();
    let o = bin()
        .arg("run")
        .arg(&path)
        .arg("-o")
        .arg(dir.path().join("out"))
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("line 4"), "{err}");
}

#[test]
fn invalid_scenario_reports_path() {
    let dir = tempfile::tempdir().unwrap();
    let mut v: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(fixture("baseline")).unwrap()).unwrap();
    v["events"][1]["type"] = "NodeFailure".into();
    v["events"][1]["module_id"] = "GPS".into();
    let path = dir.path().join("invalid.json");
    std::fs::write(&path, v.to_string()).unwrap();
    let o = bin().arg("run").arg(&path).arg("-o").arg(dir.path()).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("events[1].module_id"));
}

#[test]
fn output_dir_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_autobox"))
        .env("AUTOBOX_OUT", dir.path())
        .arg("run")
        .arg(fixture("baseline"))
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0));
    assert!(dir.path().join("ledger.log").exists());
}

#[test]
fn verify_fresh_edited_and_empty_ledgers() {
    let dir = tempfile::tempdir().unwrap();
    run("baseline", dir.path(), &[]);
    let ledger = dir.path().join("ledger.log");
    let o = bin().arg("verify").arg(&ledger).output().unwrap();
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(stdout(&o), "valid (5 blocks)\n");

    // Edit one hex digit of the first entry in block 2.
    let mut bytes = std::fs::read(&ledger).unwrap();
    let text = String::from_utf8(bytes.clone()).unwrap();
    let block2 = text.match_indices("\n2|").next().unwrap().0;
    let entry = block2 + text[block2..].find(" | ").unwrap() - 1;
    bytes[entry] = if bytes[entry] == b'0' { b'1' } else { b'0' };
    let edited = dir.path().join("edited.log");
    std::fs::write(&edited, &bytes).unwrap();
    let o = bin().arg("verify").arg(&edited).output().unwrap();
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(stdout(&o), "broken-at 2\n");

    let empty = dir.path().join("empty.log");
    std::fs::write(&empty, b"").unwrap();
    let o = bin().arg("verify").arg(&empty).output().unwrap();
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).starts_with("format error"));

    let o = bin()
        .arg("verify")
        .arg(dir.path().join("missing.log"))
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn history_table_and_machine_output() {
    let dir = tempfile::tempdir().unwrap();
    run("outage", dir.path(), &[]);
    let ledger = dir.path().join("ledger.log");
    let key = vehicle_key(dir.path());

    let o = bin().arg("history").arg(&ledger).arg(&key).output().unwrap();
    assert_eq!(o.status.code(), Some(0));
    let table = stdout(&o);
    let seqs: Vec<u64> = table
        .lines()
        .skip(1)
        .filter(|l| !l.ends_with("checkpoints"))
        .filter_map(|l| l.split_whitespace().next()?.parse().ok())
        .collect();
    assert_eq!(seqs, (1..=seqs.len() as u64).collect::<Vec<_>>());
    assert!(seqs.len() >= 2);

    let o = bin()
        .arg("history")
        .arg(&ledger)
        .arg(&key)
        .arg("--machine")
        .output()
        .unwrap();
    let machine = stdout(&o);
    let parsed = HistoryEntry::parse_machine_lines(&machine).unwrap();
    assert_eq!(parsed.len(), seqs.len());
    let rendered: String = parsed.iter().map(|h| h.to_machine_line() + "\n").collect();
    assert_eq!(rendered, machine);

    let unknown = "0".repeat(64);
    let o = bin().arg("history").arg(&ledger).arg(&unknown).output().unwrap();
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("0 checkpoints"));

    let o = bin().arg("history").arg(&ledger).arg("XYZ").output().unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn audit_detects_snapshot_corruption() {
    let dir = tempfile::tempdir().unwrap();
    run("baseline", dir.path(), &[]);
    let snap = dir.path().join("vehicles/1HGCM82633A004352/cluster-0.parity");
    let o = bin().arg("audit").arg(&snap).output().unwrap();
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));

    let mut bytes = std::fs::read(&snap).unwrap();
    let header_end = bytes.iter().enumerate().filter(|(_, b)| **b == b'\n').nth(2).unwrap().0;
    bytes[header_end + 10] ^= 0x40;
    let bad = dir.path().join("bad.parity");
    std::fs::write(&bad, &bytes).unwrap();
    let o = bin().arg("audit").arg(&bad).output().unwrap();
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).starts_with("corrupt: device 0"), "{}", stdout(&o));
}

#[test]
fn machine_outputs_are_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    run("fleet", a.path(), &[]);
    run("fleet", b.path(), &[]);
    for f in [
        "ledger.log",
        "verdicts.tsv",
        "ground_truth.jsonl",
        "report.json",
        "approved_library.tsv",
    ] {
        assert_eq!(
            std::fs::read(a.path().join(f)).unwrap(),
            std::fs::read(b.path().join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn seed_override_is_recorded() {
    let dir = tempfile::tempdir().unwrap();
    let o = run("baseline", dir.path(), &["--seed", "99"]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(report(dir.path())["seed"], 99);
}

#[test]
fn exit_code_contract_across_fixtures() {
    let clean = [
        "baseline",
        "outage",
        "node_failure",
        "memory_corruption",
        "clear_tamper",
    ];
    let findings = [
        "odometer_rollback",
        "vin_rewrite",
        "junkyard_swap",
        "offline_reflash",
        "unapproved_reflash",
        "fleet",
    ];
    let dir = tempfile::tempdir().unwrap();
    for name in clean {
        assert_eq!(run(name, dir.path(), &[]).status.code(), Some(0), "{name}");
        assert_eq!(
            run(name, dir.path(), &["--expect-findings"]).status.code(),
            Some(1),
            "{name}"
        );
    }
    for name in findings {
        assert_eq!(run(name, dir.path(), &[]).status.code(), Some(1), "{name}");
        assert_eq!(
            run(name, dir.path(), &["--expect-findings"]).status.code(),
            Some(0),
            "{name}"
        );
    }
}
