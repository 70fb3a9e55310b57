use std::path::PathBuf;
use std::process::{Command, Output};

use serde_json::Value;

fn bcl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bcl")).args(args).env_remove("BCL_SEED").output().expect("binary runs")
}

fn report(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).expect("stdout is one JSON report")
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("bcl-cli-{name}-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn untimed(mut v: Value) -> Value {
    v.as_object_mut().unwrap().remove("timing");
    v
}

#[test]
fn chsh_on_isotropic_state() {
    let out = bcl(&["chsh", "isotropic:2:0.8", "--json-only"]);
    assert_eq!(out.status.code(), Some(0));
    assert!(out.stderr.is_empty());
    let r = report(&out);
    assert_eq!(r["passed"], true);
    let h = r["outputs"]["horodecki"].as_f64().unwrap();
    assert!((h - 1.6 * std::f64::consts::SQRT_2).abs() < 1e-12);
}

#[test]
fn summary_goes_to_stderr() {
    let out = bcl(&["local-bound", "chsh"]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8_lossy(&out.stderr);
    assert!(text.contains("PASS"));
    assert_eq!(report(&out)["outputs"]["local_bound"], 2.0);
}

#[test]
fn reports_are_reproducible_for_a_seed() {
    let args = ["catalyze", "--state", "isotropic:2:0.9", "-n", "2", "--seed", "11", "--json-only"];
    let first = untimed(report(&bcl(&args)));
    let second = untimed(report(&bcl(&args)));
    assert_eq!(first, second);
    assert_eq!(first["seed"], 11);
}

#[test]
fn seed_can_come_from_the_environment() {
    let out = Command::new(env!("CARGO_BIN_EXE_bcl"))
        .args(["singlet-fraction", "isotropic:2:0.5", "--json-only"])
        .env("BCL_SEED", "42")
        .output()
        .unwrap();
    let r = report(&out);
    assert_eq!(r["seed"], 42);
    assert!((r["outputs"]["singlet_fraction"].as_f64().unwrap() - 0.625).abs() < 1e-9);
}

#[test]
fn malformed_input_exits_with_two() {
    let out = bcl(&["chsh", "isotropic:2:1.5"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(out.stdout.is_empty());

    let dir = scratch("parse");
    let path = dir.join("broken.json");
    std::fs::write(&path, "{\n  \"labels\": [\n").unwrap();
    let out = bcl(&["chsh", &format!("file:{}", path.display())]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.contains("broken.json:"), "{err}");
}

#[test]
fn product_state_is_not_activated() {
    let dir = scratch("product");
    let path = dir.join("product.json");
    let labels = r#"[{"name":"A","dim":2,"kind":"quantum"},{"name":"B","dim":2,"kind":"quantum"}]"#;
    let mut data = vec!["[0.0,0.0]"; 16];
    data[0] = "[1.0,0.0]";
    std::fs::write(&path, format!(r#"{{"labels":{labels},"data":[{}]}}"#, data.join(","))).unwrap();
    let out = bcl(&["catalyze", "--state", &format!("file:{}", path.display()), "--json-only"]);
    assert_eq!(out.status.code(), Some(0));
    let r = report(&out);
    assert!((r["outputs"]["score"].as_f64().unwrap() - 2.0).abs() < 1e-9);
    assert_eq!(r["outputs"]["activation_certified"], false);
    assert!(!r["notes"].as_array().unwrap().is_empty());
}

#[test]
fn verify_catalyst_for_three_copies() {
    let out = bcl(&["verify-catalyst", "--state", "phi+:2", "--sigma", "mixed", "-n", "3", "--json-only"]);
    assert_eq!(out.status.code(), Some(0));
    let r = report(&out);
    for c in r["checks"].as_array().unwrap() {
        assert_eq!(c["passed"], true, "{c}");
    }
}

#[test]
fn demo_scenarios_round_trip_through_verify_instruments() {
    let dir = scratch("demo");
    let out = bcl(&["demo", "--scenarios-dir", dir.to_str().unwrap(), "--json-only"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));

    let cancel = dir.join("cancellation.json");
    let cancel = cancel.to_str().unwrap();
    assert_eq!(bcl(&["verify-instruments", cancel, "--variant", "c3", "--json-only"]).status.code(), Some(0));
    let failing = bcl(&["verify-instruments", cancel, "--variant", "c2", "--json-only"]);
    assert_eq!(failing.status.code(), Some(1));
    assert_eq!(report(&failing)["outputs"]["hierarchy"]["consistent"], true);

    let embedded = dir.join("catalytic-chsh.json");
    let out = bcl(&["verify-instruments", embedded.to_str().unwrap(), "--variant", "c2", "--json-only"]);
    assert_eq!(out.status.code(), Some(0));
    assert!(report(&out)["outputs"]["chsh"].as_f64().unwrap() > 2.0);
}

#[test]
fn library_entry_point_matches_binary() {
    let lib = bcl_cli::run(["bcl", "local-bound", "chsh", "--json-only"]).unwrap();
    let bin = report(&bcl(&["local-bound", "chsh", "--json-only"]));
    assert_eq!(serde_json::from_str::<Value>(&lib.to_json_untimed()).unwrap(), untimed(bin));
}
