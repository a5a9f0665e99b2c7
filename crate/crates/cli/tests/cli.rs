use std::fs;
use std::path::Path;
use std::process::Command;

fn ftdir(args: &[&str], cwd: &Path) -> (i32, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_ftdir")).args(args).current_dir(cwd).output().unwrap();
    let text = String::from_utf8_lossy(&out.stdout).into_owned() + &String::from_utf8_lossy(&out.stderr);
    (out.status.code().unwrap_or(-1), text)
}

#[test]
fn gen_run_check_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let (code, text) = ftdir(&["gen", "--kind", "grid", "--n", "16", "--failures", "2", "--seed", "5", "--out", "sc.json"], d);
    assert_eq!(code, 0, "{text}");
    let (code, text) = ftdir(&["run", "sc.json", "--out-dir", "run"], d);
    assert_eq!(code, 0, "{text}");
    for f in ["events.jsonl", "ledger.csv", "ledger.json", "structure.json"] {
        assert!(d.join("run").join(f).exists(), "{f} missing");
    }
    let csv = fs::read_to_string(d.join("run/ledger.csv")).unwrap();
    assert!(csv.starts_with("key,messages,weighted_cost,max_size_class"));
    let (code, text) = ftdir(&["check", "run"], d);
    assert_eq!(code, 0, "{text}");
    assert!(text.contains("PASS publish-length"));
    assert!(d.join("run/report.json").exists());
}

#[test]
fn check_fails_on_inflated_path() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ftdir(&["gen", "--kind", "ring", "--n", "12", "--failures", "0", "--seed", "1", "--out", "sc.json"], d);
    let (code, _) = ftdir(&["run", "sc.json", "--out-dir", "run"], d);
    assert_eq!(code, 0);
    let p = d.join("run/events.jsonl");
    let mut forged = String::new();
    for line in fs::read_to_string(&p).unwrap().lines() {
        let mut v: serde_json::Value = serde_json::from_str(line).unwrap();
        if v["event"] == "path_snapshot" {
            for e in v["path"].as_array_mut().unwrap() {
                e["gap"] = serde_json::json!(100_000);
            }
        }
        forged.push_str(&v.to_string());
        forged.push('\n');
    }
    fs::write(&p, forged).unwrap();
    let (code, text) = ftdir(&["check", "run"], d);
    assert_eq!(code, 1, "{text}");
    assert!(text.contains("FAIL publish-length"), "{text}");
}

#[test]
fn overrides_and_horizon() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ftdir(&["gen", "--kind", "random", "--n", "14", "--seed", "2", "--out", "sc.json"], d);
    let (code, text) = ftdir(&["run", "sc.json", "--mode", "weak", "--rho", "3", "--seed", "9", "--out-dir", "w"], d);
    assert_eq!(code, 0, "{text}");
    let sc = fs::read_to_string(d.join("w/scenario.json")).unwrap();
    assert!(sc.contains("\"weak\"") && sc.contains("\"rho\": 3"));
    // a horizon of zero stops before the publish completes
    let (code, _) = ftdir(&["run", "sc.json", "--horizon", "0", "--out-dir", "h"], d);
    assert_eq!(code, 2);
}

#[test]
fn partition_stats_and_bad_input() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ftdir(&["gen", "--kind", "ring", "--n", "10", "--seed", "0", "--out", "sc.json"], d);
    let (code, text) = ftdir(&["partition-stats", "sc.json"], d);
    assert_eq!(code, 0, "{text}");
    assert!(text.contains("\"hierarchy\"") && text.contains("\"sigma_achieved\""));
    let (code, text) = ftdir(&["run", "missing.json"], d);
    assert_eq!(code, 3);
    assert!(text.contains("missing.json"));
}
