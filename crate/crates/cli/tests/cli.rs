use std::path::Path;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_adaptive-intervals");

const TINY: &str = r#"
methods = ["dqr", "cqr", "adaptive"]

[dataset.synthetic]
node_count = 3
step_count = 864
noise_scales = [1.0, 2.0, 4.0]

[architecture]
hidden = [8]

[train]
max_epochs = 4
patience = 2
"#;

fn write_config(dir: &Path, text: &str) -> std::path::PathBuf {
    let path = dir.join("config.toml");
    std::fs::write(&path, text).unwrap();
    path
}

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(BIN)
        .args(args)
        .env_remove("ADAPTIVE_INTERVALS_OUTPUT_DIR")
        .current_dir(dir)
        .output()
        .unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

#[test]
fn full_pipeline_through_the_binary() {
    let dir = tempfile::tempdir().unwrap();
    write_config(dir.path(), TINY);
    let base = ["--config", "config.toml", "--output-dir", "out"];
    for cmd in ["generate", "train", "calibrate", "evaluate"] {
        let out = run(dir.path(), &[&base[..], &[cmd]].concat());
        assert_eq!(code(&out), 0, "{cmd}: {}", String::from_utf8_lossy(&out.stderr));
    }
    for file in ["panel.csv", "model.json", "table.json", "global_delta.json", "reports/adaptive.json"] {
        assert!(dir.path().join("out").join(file).exists(), "{file}");
    }
    let out = run(
        dir.path(),
        &["compare", "out/reports/cqr.json", "out/reports/adaptive.json", "--out", "cmp.md"],
    );
    assert_eq!(code(&out), 0);
    let table = std::fs::read_to_string(dir.path().join("cmp.md")).unwrap();
    assert_eq!(String::from_utf8_lossy(&out.stdout), table);
    assert!(table.contains("**"));
}

#[test]
fn generate_refuses_to_overwrite_without_force() {
    let dir = tempfile::tempdir().unwrap();
    let args = ["--output-dir", "out", "generate"];
    assert_eq!(code(&run(dir.path(), &args)), 0);
    let again = run(dir.path(), &args);
    assert_eq!(code(&again), 3);
    assert!(String::from_utf8_lossy(&again.stderr).contains("error"));
    assert_eq!(code(&run(dir.path(), &[&args[..], &["--force"]].concat())), 0);
}

#[test]
fn seed_flag_and_env_output_dir() {
    let dir = tempfile::tempdir().unwrap();
    let env_dir = dir.path().join("from-env");
    let out = Command::new(BIN)
        .args(["--seed", "5", "generate"])
        .env("ADAPTIVE_INTERVALS_OUTPUT_DIR", &env_dir)
        .current_dir(dir.path())
        .output()
        .unwrap();
    assert_eq!(code(&out), 0);
    assert!(env_dir.join("panel.csv").exists());
    for (seed, file) in [("5", "a.csv"), ("5", "b.csv"), ("6", "c.csv")] {
        let out = run(dir.path(), &["--seed", seed, "generate", "--out", file]);
        assert_eq!(code(&out), 0);
    }
    let read = |f: &str| std::fs::read(dir.path().join(f)).unwrap();
    assert_eq!(read("a.csv"), read("b.csv"));
    assert_eq!(read("a.csv"), std::fs::read(env_dir.join("panel.csv")).unwrap());
    assert_ne!(read("a.csv"), read("c.csv"));
}

#[test]
fn exit_codes_by_error_class() {
    let dir = tempfile::tempdir().unwrap();
    // Invalid configuration.
    write_config(dir.path(), "[calibration]\nlambda = 2.0\n");
    assert_eq!(code(&run(dir.path(), &["--config", "config.toml", "generate"])), 3);
    // Malformed data file.
    std::fs::write(dir.path().join("bad.csv"), "timestamp,n0\nnot-a-time,1.0\n").unwrap();
    write_config(dir.path(), TINY);
    assert_eq!(
        code(&run(dir.path(), &["--config", "config.toml", "--data", "bad.csv", "train"])),
        4
    );
    // Missing model checkpoint.
    assert_eq!(
        code(&run(dir.path(), &["--config", "config.toml", "--output-dir", "none", "calibrate"])),
        6
    );
    // Too few reports to compare.
    assert_eq!(code(&run(dir.path(), &["compare", "only.json"])), 3);
}
