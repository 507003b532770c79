//! End-to-end runs of the `dpi` binary on a tiny configuration.

use std::path::Path;
use std::process::{Command, Output};

use dpi::harness::{load_config, read_manifest, RunConfig};

const TINY: &str = r#"
seeds = [0, 1]
total_steps = 256

[train]
batch_size = 128

[eval]
interval = 128
episodes = 4

[net]
hidden = 8
gru_hidden = 8
head_hidden = 8

[experiments]
pareto_steps = 128
pareto_episodes = 2
"#;

fn dpi(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dpi"))
        .args(args)
        .current_dir(cwd)
        .env_remove("DPI_REVISION")
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout:\n{}\nstderr:\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn train_eval_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    std::fs::write(root.join("tiny.toml"), TINY).unwrap();

    let out = dpi(
        &[
            "train",
            "--config",
            "tiny.toml",
            "--seed",
            "3",
            "--out",
            "run",
        ],
        root,
    );
    ok(&out);
    let m = read_manifest(&root.join("run")).unwrap();
    assert!(m.complete);
    assert_eq!(m.seed, Some(3));
    for f in [
        "config.toml",
        "checkpoint.json",
        "curve.csv",
        "train_log.jsonl",
        "metrics.csv",
    ] {
        assert!(root.join("run").join(f).is_file(), "{f} missing");
        assert!(m.artifacts.iter().any(|a| a == f), "{f} not in manifest");
    }
    let saved =
        RunConfig::from_toml(&std::fs::read_to_string(root.join("run/config.toml")).unwrap())
            .unwrap();
    assert_eq!(saved.hash(), m.config_hash);
    let curve = std::fs::read_to_string(root.join("run/curve.csv")).unwrap();
    assert!(curve.starts_with("step,MER,MER_ci,SR,SR_ci\n"));
    assert_eq!(curve.lines().count(), 3);

    let out = dpi(
        &[
            "eval",
            "--checkpoint",
            "run/checkpoint.json",
            "--episodes",
            "3",
            "--out",
            "ev",
        ],
        root,
    );
    ok(&out);
    let metrics = std::fs::read_to_string(root.join("ev/metrics.csv")).unwrap();
    assert!(metrics.lines().any(|l| l.contains(",all,SR,")), "{metrics}");

    let out = dpi(&["report", "--outdir", "run"], root);
    ok(&out);
    assert!(root.join("run/report_sr.svg").is_file());
}

#[test]
fn suite_writes_one_table_row_per_agent() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    std::fs::write(root.join("tiny.toml"), TINY).unwrap();
    let out = dpi(
        &[
            "suite",
            "--config",
            "tiny.toml",
            "--agents",
            "random,fixed",
            "--out",
            "s",
        ],
        root,
    );
    ok(&out);
    let table = std::fs::read_to_string(root.join("s/table.csv")).unwrap();
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(
        lines[0],
        "method,MER,MER_ci,SR,SR_ci,PSK,PSK_ci,episodes,seeds"
    );
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("random,") && lines[2].starts_with("fixed,"));
}

#[test]
fn same_seed_gives_identical_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    std::fs::write(root.join("tiny.toml"), TINY).unwrap();
    for out in ["a", "b"] {
        ok(&dpi(
            &[
                "train",
                "--config",
                "tiny.toml",
                "--agent",
                "envelope",
                "--out",
                out,
            ],
            root,
        ));
    }
    for f in [
        "checkpoint.json",
        "curve.csv",
        "metrics.csv",
        "train_log.jsonl",
    ] {
        let a = std::fs::read(root.join("a").join(f)).unwrap();
        let b = std::fs::read(root.join("b").join(f)).unwrap();
        assert!(a == b, "{f} differs between identical runs");
    }
}

#[test]
fn bad_input_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    std::fs::write(root.join("bad.toml"), "no_such_key = 1\n").unwrap();
    assert_eq!(
        dpi(&["train", "--config", "bad.toml"], root).status.code(),
        Some(2)
    );
    std::fs::write(root.join("neg.toml"), "[train]\nlr = -1.0\n").unwrap();
    assert_eq!(
        dpi(&["train", "--config", "neg.toml"], root).status.code(),
        Some(2)
    );
    assert_eq!(
        dpi(&["train", "--agent", "nobody"], root).status.code(),
        Some(2)
    );
    assert_eq!(dpi(&["frobnicate"], root).status.code(), Some(2));
    assert_eq!(
        dpi(&["report", "--outdir", "missing"], root).status.code(),
        Some(1)
    );
}

#[test]
fn shipped_configs_load() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut n = 0;
    for entry in std::fs::read_dir(&dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "toml") {
            load_config(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            n += 1;
        }
    }
    assert!(n >= 3);
    let default = load_config(&dir.join("default.toml")).unwrap();
    assert_eq!(default.hash(), RunConfig::default().hash());
}
