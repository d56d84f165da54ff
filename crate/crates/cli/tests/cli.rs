//! End-to-end checks of the binary: exit codes, manifest integrity, the
//! echo fixed point, and write discipline.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use sha2::{Digest, Sha256};
use vanishlab_core::torus::{io, ScalarGridField, TorusGrid};

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_vanishlab")
}

fn run_in(dir: &Path, args: &[&str]) -> Output {
    Command::new(bin())
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary spawns")
}

fn stderr_of(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("no signal")
}

/// Reads every regular file in a directory into name -> bytes.
fn dir_bytes(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut map = BTreeMap::new();
    for entry in fs::read_dir(dir).expect("output directory exists") {
        let entry = entry.expect("entry");
        let name = entry.file_name().into_string().expect("utf-8 name");
        map.insert(name, fs::read(entry.path()).expect("readable"));
    }
    map
}

const HEAT_SOLVE: &str = "\
[run]
experiment = solve
seed = 3
output = out

[grid]
n = 32

[field]
kind = zero

[datum]
kind = cosine-x

[solve]
nu = 0.01
";

#[test]
fn rejects_unknown_keys_with_their_path() {
    let dir = tempfile::tempdir().expect("tempdir");
    let cfg = dir.path().join("run.cfg");

    fs::write(&cfg, HEAT_SOLVE.replace("nu = 0.01", "nuu = 0.01")).unwrap();
    let out = run_in(dir.path(), &["run.cfg"]);
    assert_eq!(code(&out), 2, "unknown key is a validation error");
    assert!(
        stderr_of(&out).contains("solve.nuu"),
        "the offending key path is named: {}",
        stderr_of(&out)
    );

    fs::write(&cfg, HEAT_SOLVE.replace("experiment = solve\n", "")).unwrap();
    let out = run_in(dir.path(), &["run.cfg"]);
    assert_eq!(code(&out), 2);
    assert!(stderr_of(&out).contains("run.experiment"));

    let out = run_in(dir.path(), &["run.cfg", "--jobs", "0"]);
    assert_eq!(code(&out), 2, "a zero-thread pool is rejected");
}

const GUARDED_SWEEP: &str = "\
[run]
experiment = sweep-nu
output = out

[grid]
n = 32

[field]
kind = zero

[datum]
kind = cosine-x

[panel]
kind = standard

[sweep]
values = 0.0625, 0.001
";

#[test]
fn resolution_guard_rejects_then_override_runs_flagged() {
    let dir = tempfile::tempdir().expect("tempdir");
    fs::write(dir.path().join("run.cfg"), GUARDED_SWEEP).unwrap();

    let out = run_in(dir.path(), &["run.cfg"]);
    assert_eq!(code(&out), 2, "below-guard diffusivity is rejected");
    let msg = stderr_of(&out);
    assert!(
        msg.contains("resolution guard") && msg.contains("override"),
        "the guard and the escape hatch are named: {msg}"
    );

    let out = run_in(dir.path(), &["run.cfg", "--allow-underresolved"]);
    assert_eq!(code(&out), 0, "the override runs the sweep: {}", stderr_of(&out));
    let csv = fs::read_to_string(dir.path().join("out/sweep.csv")).unwrap();
    assert!(csv.contains("under-resolved"), "flagged rows are recorded");

    let manifest: serde_json::Value =
        serde_json::from_slice(&fs::read(dir.path().join("out/manifest.json")).unwrap()).unwrap();
    let echo = manifest["config"].as_str().unwrap();
    assert!(
        echo.contains("allow-underresolved = true"),
        "the effective override lands in the echo so re-runs reproduce it"
    );
    fs::write(dir.path().join("echo.cfg"), echo).unwrap();
    let out = run_in(dir.path(), &["echo.cfg", "--output", "again"]);
    assert_eq!(code(&out), 0, "the echo re-runs without the flag");
}

#[test]
fn manifest_inventory_matches_written_files() {
    let dir = tempfile::tempdir().expect("tempdir");
    fs::write(dir.path().join("run.cfg"), HEAT_SOLVE).unwrap();
    let out = run_in(dir.path(), &["run.cfg"]);
    assert_eq!(code(&out), 0, "{}", stderr_of(&out));

    let out_dir = dir.path().join("out");
    let manifest: serde_json::Value =
        serde_json::from_slice(&fs::read(out_dir.join("manifest.json")).unwrap()).unwrap();

    assert!(manifest["wall_clock_seconds"].is_null(), "timing never enters the bytes");
    let inventory = manifest["outputs"].as_object().unwrap();
    assert!(
        !inventory.contains_key("manifest.json"),
        "the manifest cannot checksum itself"
    );

    let mut on_disk = dir_bytes(&out_dir);
    on_disk.remove("manifest.json");
    assert_eq!(
        inventory.len(),
        on_disk.len(),
        "every written file is inventoried"
    );
    for (name, bytes) in &on_disk {
        let expected = format!("sha256:{:x}", Sha256::digest(bytes));
        assert_eq!(
            inventory[name].as_str().unwrap(),
            expected,
            "checksum mismatch for {name} detects post-hoc edits"
        );
    }

    let echo = manifest["config"].as_str().unwrap();
    assert!(
        echo.contains("scheme = splitting") && echo.contains("cfl = 0.9"),
        "defaulted values are echoed, never silent"
    );
}

#[test]
fn echoed_config_reruns_bit_identically() {
    let dir = tempfile::tempdir().expect("tempdir");
    fs::write(dir.path().join("run.cfg"), HEAT_SOLVE).unwrap();
    assert_eq!(code(&run_in(dir.path(), &["run.cfg"])), 0);

    let manifest: serde_json::Value =
        serde_json::from_slice(&fs::read(dir.path().join("out/manifest.json")).unwrap()).unwrap();
    fs::write(
        dir.path().join("echo.cfg"),
        manifest["config"].as_str().unwrap(),
    )
    .unwrap();
    let out = run_in(dir.path(), &["echo.cfg", "--output", "rerun"]);
    assert_eq!(code(&out), 0, "{}", stderr_of(&out));

    assert_eq!(
        dir_bytes(&dir.path().join("out")),
        dir_bytes(&dir.path().join("rerun")),
        "the echo reproduces every artifact byte, manifest included"
    );
}

#[test]
fn non_finite_state_aborts_with_exit_three() {
    let dir = tempfile::tempdir().expect("tempdir");
    let grid = TorusGrid::new(32).unwrap();
    let mut bad = ScalarGridField::from_fn(grid, |x, _| (2.0 * std::f64::consts::PI * x).cos());
    bad.values_mut()[5] = f64::NAN;
    io::write_fields_path(&dir.path().join("bad.bin"), &[&bad]).unwrap();

    let cfg = HEAT_SOLVE.replace("kind = cosine-x", "kind = file\npath = bad.bin");
    fs::write(dir.path().join("run.cfg"), cfg).unwrap();
    let out = run_in(dir.path(), &["run.cfg"]);
    assert_eq!(code(&out), 3, "mid-run float failure is an abort: {}", stderr_of(&out));
    let msg = stderr_of(&out);
    assert!(
        msg.contains("numerical abort in") && msg.contains("t ="),
        "the abort names the operation and the time node: {msg}"
    );
}

#[test]
fn shipped_configs_parse_and_echo_round_trips() {
    let configs = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut seen = 0;
    for entry in fs::read_dir(configs).expect("configs directory ships with the workspace") {
        let path = entry.unwrap().path();
        if path.extension().and_then(|e| e.to_str()) != Some("cfg") {
            continue;
        }
        seen += 1;
        let text = fs::read_to_string(&path).unwrap();
        let cfg = vanishlab_cli::config::parse(&text)
            .unwrap_or_else(|e| panic!("{} does not parse: {e}", path.display()));
        let reparsed = vanishlab_cli::config::parse(&cfg.echo()).unwrap();
        assert_eq!(cfg, reparsed, "echo of {} is not a fixed point", path.display());
    }
    assert!(seen >= 9, "all experiment kinds ship a sample config, found {seen}");
}

#[test]
fn writes_stay_inside_the_output_directory() {
    let dir = tempfile::tempdir().expect("tempdir");
    fs::write(dir.path().join("run.cfg"), HEAT_SOLVE).unwrap();
    let before: Vec<String> = fs::read_dir(dir.path())
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    assert_eq!(before, vec!["run.cfg".to_string()]);

    assert_eq!(code(&run_in(dir.path(), &["run.cfg"])), 0);

    let mut after: Vec<String> = fs::read_dir(dir.path())
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    after.sort();
    assert_eq!(
        after,
        vec!["out".to_string(), "run.cfg".to_string()],
        "only the declared output directory appears"
    );
}
