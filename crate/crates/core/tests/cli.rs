use std::path::PathBuf;
use std::process::{Command, Output};

fn vnfactor(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vnfactor")).args(args).output().expect("binary runs")
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("vnfactor-cli-{}-{name}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn json(out: &Output) -> serde_json::Value {
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

#[test]
fn gen_then_stabilize_through_files() {
    let dir = scratch("stabilize");
    let inst = dir.join("inst.json");
    let out = vnfactor(&["gen", "stabilization", "--p", "2", "--ambient", "8", "--seed", "4", "--out", inst.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    assert!(out.stdout.is_empty());
    let report = dir.join("report.json");
    let out = vnfactor(&["stabilize", inst.to_str().unwrap(), "--out", report.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(v["schema"], "vnfactor.run-report/1");
    assert!(v["timing"]["elapsed_ms"].is_u64());
    assert!(v["assertions"].as_array().unwrap().iter().all(|a| a["verdict"] == "pass"));
    std::fs::remove_dir_all(dir).unwrap();
}

#[test]
fn bounds_with_zero_trials() {
    let out = vnfactor(&["bounds", "--trials", "0", "--no-timing"]);
    assert_eq!(out.status.code(), Some(0));
    let v = json(&out);
    assert_eq!(v["assertions"].as_array().unwrap().len(), 0);
    assert!(v.get("timing").is_none());
}

#[test]
fn bounds_over_a_finite_field_skip_star_campaigns() {
    let out = vnfactor(&["bounds", "--field", "gf:7", "--shape", "3", "--trials", "4", "--k-trials", "1", "--no-timing"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let v = json(&out);
    assert!(v["config"]["star_campaigns"].as_str().unwrap().starts_with("skipped"));
}

#[test]
fn star_equiv_pair_file() {
    let dir = scratch("pair");
    let pair = dir.join("pair.json");
    let out = vnfactor(&["gen", "pair", "--ambient", "2", "--seed", "1", "--out", pair.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    let out = vnfactor(&["star-equiv", pair.to_str().unwrap(), "--no-timing"]);
    assert_eq!(out.status.code(), Some(0));
    let v = json(&out);
    assert!(["*-equivalent", "not *-equivalent"].contains(&v["config"]["verdict"].as_str().unwrap()));
    std::fs::remove_dir_all(dir).unwrap();
}

#[test]
fn halperin_transcript_at_one_half() {
    let out = vnfactor(&["halperin", "--theta", "1/2", "--stages", "1", "--ambient", "27720"]);
    assert_eq!(out.status.code(), Some(0));
    let v = json(&out);
    let (p, q) = (v["p"][1].as_u64().unwrap(), v["q"][1].as_u64().unwrap());
    assert!(2 * p > q && p < q);
    assert!(v["doubling"]["checks"]["items"].as_array().unwrap().iter().all(|c| c["holds"] == true));
}

#[test]
fn exit_codes() {
    let out = vnfactor(&["halperin", "--ambient", "30", "--theta", "1/3"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("n = 150"));

    let dir = scratch("bad");
    let bad = dir.join("bad.json");
    std::fs::write(&bad, "{\"schema\": 1").unwrap();
    let out = vnfactor(&["stabilize", bad.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 1 column"));
    let out = vnfactor(&["star-equiv", dir.join("missing.json").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    std::fs::remove_dir_all(dir).unwrap();

    assert_eq!(vnfactor(&["bounds", "--field", "r"]).status.code(), Some(1));
    assert_eq!(vnfactor(&["halperin", "--theta", "x/3"]).status.code(), Some(1));
    assert_eq!(vnfactor(&["--help"]).status.code(), Some(0));
}
