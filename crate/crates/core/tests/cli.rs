use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

const CONFIG: &str = r#"
[lattice]
dim = 1
sites = 4
length = 4.0
mass = 1.0

[dynamics]
dt = 0.01
t_max = 1.0
lambda = 0.2
snapshot_stride = 10

[init]
v0 = "scaled"
scale = [1.2, 0.3]

[ensemble]
trajectories = 40
master_seed = 3

[lindblad]
n_max = 20
energy = 1.0
dt = 0.005
t_max = 1.0
stride = 20

[output]
formats = ["csv", "json"]
noise_dump = "binary"
"#;

fn run(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_noisefield")).args(args).current_dir(cwd).output().unwrap()
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout: {}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn checksums(dir: &Path) -> Vec<(String, String)> {
    let manifest: Value = serde_json::from_str(&fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["status"], "complete");
    let mut files: Vec<(String, String)> = manifest["files"]
        .as_array()
        .unwrap()
        .iter()
        .map(|f| (f["path"].as_str().unwrap().to_string(), f["sha256"].as_str().unwrap().to_string()))
        .collect();
    files.sort();
    files
}

fn setup() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("run.toml"), CONFIG).unwrap();
    dir
}

#[test]
fn simulate_is_reproducible() {
    let dir = setup();
    let p = dir.path();
    ok(&run(&["simulate", "--config", "run.toml", "--out", "a", "--quiet"], p));
    ok(&run(&["simulate", "--config", "run.toml", "--out", "b", "--quiet"], p));
    let (a, b) = (checksums(&p.join("a")), checksums(&p.join("b")));
    assert_eq!(a, b);
    let names: Vec<&str> = a.iter().map(|(n, _)| n.as_str()).collect();
    for expected in ["modes.csv", "snapshots.csv", "observables.csv", "fields.csv", "classical.csv", "noise.bin"] {
        assert!(names.contains(&expected), "{expected} missing from {names:?}");
    }
    ok(&run(&["simulate", "--config", "run.toml", "--out", "c", "--seed", "4", "--quiet"], p));
    assert_ne!(checksums(&p.join("c")), a);
}

#[test]
fn noise_export_round_trip_and_replay() {
    let dir = setup();
    let p = dir.path();
    ok(&run(&["simulate", "--config", "run.toml", "--out", "a", "--quiet"], p));
    ok(&run(&["export", "--input", "a/noise.bin", "--to", "csv", "--out", "x"], p));
    ok(&run(&["export", "--input", "x/noise.csv", "--to", "binary", "--out", "y"], p));
    assert_eq!(fs::read(p.join("a/noise.bin")).unwrap(), fs::read(p.join("y/noise.bin")).unwrap());

    for dump in ["a/noise.bin", "x/noise.csv"] {
        let out = format!("replay-{}", dump.replace('/', "-"));
        ok(&run(&["simulate", "--config", "run.toml", "--out", &out, "--noise", dump, "--quiet"], p));
        for file in ["snapshots.csv", "observables.csv", "fields.csv"] {
            assert_eq!(
                fs::read(p.join("a").join(file)).unwrap(),
                fs::read(p.join(&out).join(file)).unwrap(),
                "{file} via {dump}"
            );
        }
    }
}

#[test]
fn ensemble_and_lindblad_write_fits() {
    let dir = setup();
    let p = dir.path();
    ok(&run(&["ensemble", "--config", "run.toml", "--out", "e", "--quiet"], p));
    let fit: Value = serde_json::from_str(&fs::read_to_string(p.join("e/fit.json")).unwrap()).unwrap();
    assert!(fit.to_string().contains("slope"));
    assert!(p.join("e/ensemble.csv").exists());
    let names: Vec<String> = checksums(&p.join("e")).into_iter().map(|(n, _)| n).collect();
    assert!(names.contains(&"ensemble.csv".to_string()));

    ok(&run(&["lindblad", "--config", "run.toml", "--out", "l", "--quiet"], p));
    let csv = fs::read_to_string(p.join("l/lindblad.csv")).unwrap();
    assert!(csv.lines().count() > 2);
}

#[test]
fn exit_codes() {
    let dir = setup();
    let p = dir.path();
    let code = |args: &[&str]| run(args, p).status.code();

    assert_eq!(code(&["ensemble", "--config", "run.toml", "--out", "e", "--trajectories", "1", "--quiet"]), Some(2));
    assert_eq!(code(&["simulate", "--config", "missing.toml", "--quiet"]), Some(1));
    fs::write(p.join("bad.toml"), "[lattice]\ndim = 7\ncolour = 1\n").unwrap();
    let out = run(&["simulate", "--config", "bad.toml", "--quiet"], p);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("lattice.colour") && err.contains("dim"), "{err}");

    fs::write(p.join("garbage.bin"), b"not a noise file").unwrap();
    assert_eq!(code(&["simulate", "--config", "run.toml", "--out", "g", "--noise", "garbage.bin", "--quiet"]), Some(2));
    assert_eq!(code(&["export", "--input", "nowhere.bin", "--to", "csv", "--out", "z"]), Some(1));

    // a singular edge-case kernel with Euler is a configuration error
    let euler =
        CONFIG.replace("v0 = \"scaled\"", "v0 = \"zero\"").replace("lambda = 0.2", "lambda = 0.2\nscheme = \"euler\"");
    fs::write(p.join("euler.toml"), euler).unwrap();
    assert_eq!(code(&["simulate", "--config", "euler.toml", "--out", "eu", "--quiet"]), Some(2));
}
