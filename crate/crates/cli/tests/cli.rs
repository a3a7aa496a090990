use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_ra-iot-sim"))
}

fn scenarios() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
}

fn tmp(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("ra-iot-sim-cli-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir.join(name)
}

/// The shipped CoAP scenario shrunk to something that runs in about a second.
fn small_scenario(name: &str) -> PathBuf {
    let text = std::fs::read_to_string(scenarios().join("coap.toml")).unwrap();
    let text = text
        .replace("min_exchanges = 1000", "min_exchanges = 60")
        .replace("n_sources = 10000", "n_sources = 200")
        .replace("n_rcsts = 10000", "n_rcsts = 200");
    let path = tmp(name);
    std::fs::write(&path, text).unwrap();
    path
}

fn run(cmd: &mut Command) -> Output {
    cmd.output().expect("binary runs")
}

#[test]
fn shipped_scenarios_validate() {
    for entry in std::fs::read_dir(scenarios()).unwrap() {
        let path = entry.unwrap().path();
        let out = run(bin().arg("validate").arg(&path));
        assert!(out.status.success(), "{}: {}", path.display(), String::from_utf8_lossy(&out.stderr));
    }
}

#[test]
fn bad_config_exits_2_and_names_the_field() {
    let path = tmp("bad.toml");
    let text = std::fs::read_to_string(scenarios().join("coap.toml"))
        .unwrap()
        .replace("nstart = 1", "nstart = 0");
    std::fs::write(&path, text).unwrap();
    let out = run(bin().arg("validate").arg(&path));
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("coap.nstart"));

    let out = run(bin().arg("run").arg(tmp("missing.toml")));
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn unknown_format_is_rejected() {
    let path = small_scenario("fmt.toml");
    let out = run(bin().arg("run").arg(&path).args(["--format", "xml"]));
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn run_is_reproducible_and_honours_seed() {
    let path = small_scenario("repro.toml");
    let go = |seed: &str| run(bin().arg("run").arg(&path).args(["--reps", "1", "--seed", seed]));
    let a = go("3");
    let b = go("3");
    let c = go("4");
    assert!(a.status.success(), "{}", String::from_utf8_lossy(&a.stderr));
    assert_eq!(a.stdout, b.stdout);
    assert_ne!(a.stdout, c.stdout);
    let text = String::from_utf8(a.stdout).unwrap();
    assert!(text.starts_with("scenario,seed,protocol,nstart,row,"));
    assert!(text.lines().any(|l| l.starts_with("coap,3,coap,1,summary,")));
}

#[test]
fn sweep_writes_json_per_nstart() {
    let path = small_scenario("sweep.toml");
    let out_path = tmp("sweep.json");
    let out = run(bin()
        .arg("sweep")
        .arg(&path)
        .args(["--nstart", "1,4", "--reps", "1", "--format", "json", "--out"])
        .arg(&out_path));
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(&out_path).unwrap();
    assert!(text.contains("\"scenario\": \"coap-nstart-1\""));
    assert!(text.contains("\"scenario\": \"coap-nstart-4\""));
}

#[test]
fn sweep_refuses_mqtt() {
    let out = run(bin().arg("sweep").arg(scenarios().join("mqtt.toml")));
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("protocol"));
}
