use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_modsel"))
}

fn scenario() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios/nested_tabular.json")
}

fn run(out: &Path, root: Option<&Path>) -> std::process::Output {
    let mut cmd = bin();
    cmd.arg("run").arg(scenario()).arg("--out").arg(out).args([
        "--seeds",
        "3,5",
        "--override",
        "run.horizon=3000",
    ]);
    match root {
        Some(r) => cmd.env("MODSEL_OUT_ROOT", r),
        None => cmd.env_remove("MODSEL_OUT_ROOT"),
    };
    cmd.output().unwrap()
}

#[test]
fn run_and_report() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(Path::new("first"), Some(tmp.path()));
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let dir = tmp.path().join("first");
    for f in [
        "scenario.json",
        "diagnostics.json",
        "seed_3.jsonl",
        "seed_5.jsonl",
    ] {
        assert!(dir.join(f).exists(), "{f}");
    }
    assert!(!dir.join("seed_1.jsonl").exists());

    let text = fs::read_to_string(dir.join("seed_3.jsonl")).unwrap();
    let first: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
    for key in ["t", "epoch", "context", "action", "regret", "gamma", "i_m"] {
        assert!(first.get(key).is_some(), "{key}");
    }
    assert!(text.contains("\"type\":\"epoch\""));

    let rep = bin()
        .env("MODSEL_OUT_ROOT", tmp.path())
        .args(["report", "first"])
        .output()
        .unwrap();
    assert!(
        rep.status.success(),
        "{}",
        String::from_utf8_lossy(&rep.stderr)
    );
    let curve = fs::read_to_string(dir.join("regret_curve.csv")).unwrap();
    let mut lines = curve.lines();
    assert_eq!(lines.next(), Some("t,mean_regret,stderr,seeds"));
    assert_eq!(lines.last().unwrap().split(',').next(), Some("3000"));
    assert!(dir.join("detection.json").exists());
    assert!(fs::read_to_string(dir.join("index_timeline.csv"))
        .unwrap()
        .starts_with("seed,epoch"));

    // absolute --out ignores the root and reproduces the logs byte for byte
    let second = tmp.path().join("second");
    assert!(run(&second, Some(Path::new("/nonexistent")))
        .status
        .success());
    for s in [3, 5] {
        let name = format!("seed_{s}.jsonl");
        assert_eq!(
            fs::read(dir.join(&name)).unwrap(),
            fs::read(second.join(&name)).unwrap()
        );
    }
}

#[test]
fn failures_exit_nonzero() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = bin()
        .arg("run")
        .arg(scenario())
        .arg("--out")
        .arg(tmp.path())
        .args(["--override", "run.tau1=1"])
        .output()
        .unwrap();
    assert!(!bad.status.success());
    assert!(String::from_utf8_lossy(&bad.stderr).contains("tau1"));

    let missing = bin()
        .args(["run", "/no/such/file.json", "--out"])
        .arg(tmp.path())
        .output()
        .unwrap();
    assert!(!missing.status.success());

    let bad_path = bin()
        .arg("run")
        .arg(scenario())
        .arg("--out")
        .arg(tmp.path())
        .args(["--override", "run.nope.deeper=1"])
        .output()
        .unwrap();
    assert!(!bad_path.status.success());

    let empty = bin()
        .arg("report")
        .arg(tmp.path().join("nothing"))
        .output()
        .unwrap();
    assert!(!empty.status.success());
}
