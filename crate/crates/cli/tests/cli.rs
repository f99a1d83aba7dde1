use std::path::Path;
use std::process::Command;

fn run(args: &[&str]) -> (i32, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_edgelearn"))
        .args(args)
        .output()
        .unwrap();
    let text =
        String::from_utf8_lossy(&out.stdout).into_owned() + &String::from_utf8_lossy(&out.stderr);
    (out.status.code().unwrap(), text)
}

fn write_config(dir: &Path, text: &str) -> String {
    let path = dir.join("run.cfg");
    std::fs::write(&path, text).unwrap();
    path.display().to_string()
}

const SMALL: &str = "rounds = 10\nbatch = 16\neval_every = 5\ngrid = 10\nwindow = 6\n\
train_samples = 100\nval_samples = 20\ntest_samples = 20\n";

#[test]
fn train_then_eval() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = dir.path().join("out").display().to_string();
    let (code, text) = run(&["train", "--config", &cfg, "--seed", "3", "--out-dir", &out]);
    assert_eq!(code, 0, "{text}");
    let (code, text) = run(&["eval", "--config", &cfg, "--seed", "3", "--out-dir", &out]);
    assert_eq!(code, 0, "{text}");
    assert!(Path::new(&out).join("eval.csv").exists());
}

#[test]
fn config_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "colour = blue\n");
    let (code, text) = run(&["train", "--config", &cfg]);
    assert_eq!(code, 1);
    assert!(text.contains("colour"), "{text}");
    let cfg = write_config(dir.path(), SMALL);
    let (code, _) = run(&["sweep", "--config", &cfg]);
    assert_eq!(code, 1);
}

#[test]
fn eval_rejects_a_mismatched_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out").display().to_string();
    let cfg = write_config(dir.path(), SMALL);
    assert_eq!(run(&["train", "--config", &cfg, "--out-dir", &out]).0, 0);
    let other = write_config(dir.path(), &format!("{SMALL}nodes = 4\n"));
    let (code, text) = run(&["eval", "--config", &other, "--out-dir", &out]);
    assert_eq!(code, 1);
    assert!(text.contains("nodes"), "{text}");
}

#[test]
fn numeric_checks_pass() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().display().to_string();
    let (code, text) = run(&["gradcheck", "--instances", "2", "--out-dir", &out]);
    assert_eq!(code, 0, "{text}");
    let (code, text) = run(&["equivalence", "--seed", "1", "--out-dir", &out]);
    assert_eq!(code, 0, "{text}");
    assert!(dir.path().join("equivalence.csv").exists());
}
