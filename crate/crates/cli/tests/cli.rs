use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use vfl_core::config::RunConfig;
use vfl_core::he::{PrivateKey, PublicKey};

fn vfl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vfl")).args(args).output().unwrap()
}

fn workspace() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

const PLAIN: &str = r#"
label = "t"
key_bits = 0
feature_counts = [2, 2, 2]

[hyper]
max_iterations = 4
batch_size = 30
residual_rule = "logistic_taylor"

[data.synth]
m = 30
rank = 3
"#;

fn write_config(dir: &Path, text: &str) -> String {
    let path = dir.join("cfg.toml");
    std::fs::write(&path, text).unwrap();
    path.to_string_lossy().into_owned()
}

fn error_line(out: &Output) -> serde_json::Value {
    let stderr = String::from_utf8(out.stderr.clone()).unwrap();
    let lines: Vec<&str> = stderr.lines().collect();
    assert_eq!(lines.len(), 1, "stderr: {stderr}");
    serde_json::from_str(lines[0]).unwrap()
}

#[test]
fn run_writes_metrics_and_echo_reruns_identically() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), PLAIN);
    let first = dir.path().join("a");
    let out = vfl(&["run", "--config", &cfg, "--out", first.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["config.toml", "iterations.jsonl", "summary.csv", "metrics.json"] {
        assert!(first.join(f).exists(), "missing {f}");
    }
    let second = dir.path().join("b");
    let echo = first.join("config.toml");
    let out = vfl(&["run", "--config", echo.to_str().unwrap(), "--out", second.to_str().unwrap()]);
    assert!(out.status.success());
    for f in ["iterations.jsonl", "summary.csv", "metrics.json"] {
        assert_eq!(
            std::fs::read(first.join(f)).unwrap(),
            std::fs::read(second.join(f)).unwrap(),
            "{f} differs"
        );
    }
}

#[test]
fn seed_override_is_echoed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), PLAIN);
    let out_dir = dir.path().join("s");
    let out = vfl(&["run", "--config", &cfg, "--seed", "42", "--out", out_dir.to_str().unwrap()]);
    assert!(out.status.success());
    let echoed = RunConfig::load(&out_dir.join("config.toml")).unwrap();
    assert_eq!(echoed.seed, 42);
    assert_eq!(echoed.output.dir, out_dir);
}

#[test]
fn sweep_emits_one_row_per_cell() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &PLAIN.replace("[2, 2, 2]", "[2, 2, 2, 2]"));
    let out_dir = dir.path().join("sweep");
    let out = vfl(&[
        "sweep", "--config", &cfg, "--out", out_dir.to_str().unwrap(),
        "--beta", "0,1,2", "--p", "0,0.25,0.5",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let table = std::fs::read_to_string(out_dir.join("sweep.csv")).unwrap();
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines.len(), 10);
    assert!(lines[0].starts_with("beta,p,pca_ratio,label"));
    assert!(lines[9].starts_with("2,0.5,1,"));
}

#[test]
fn config_errors_are_one_json_line() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "key_bits = 0\nbogus_key = 3\n");
    let out = vfl(&["run", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(2));
    let err = error_line(&out);
    assert_eq!(err["error"], "config");
    assert!(err["message"].as_str().unwrap().contains("bogus_key"));

    let cfg = write_config(dir.path(), &PLAIN.replace("batch_size = 30", "batch_size = 10").replace("[data.synth]", "[straggler]\nbackup_workers = 1\n[data.synth]"));
    let out = vfl(&["run", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(2));
    assert!(error_line(&out)["message"].as_str().unwrap().contains("full-batch"));
}

#[test]
fn usage_errors_are_one_json_line() {
    let out = vfl(&["run"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_line(&out)["error"], "usage");
    let out = vfl(&["report"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_line(&out)["error"], "usage");
}

#[test]
fn missing_config_is_reported() {
    let out = vfl(&["run", "--config", "/nonexistent/cfg.toml"]);
    assert!(!out.status.success());
    assert!(error_line(&out)["message"].as_str().unwrap().contains("/nonexistent/cfg.toml"));
}

#[test]
fn keygen_writes_loadable_keys() {
    let dir = tempfile::tempdir().unwrap();
    let out = vfl(&["keygen", "--bits", "512", "--seed", "3", "--out", dir.path().to_str().unwrap()]);
    assert!(out.status.success());
    let public = PublicKey::from_pem(&std::fs::read_to_string(dir.path().join("public.pem")).unwrap()).unwrap();
    let private = PrivateKey::from_pem(&std::fs::read_to_string(dir.path().join("private.pem")).unwrap()).unwrap();
    assert_eq!(public.key_bits(), 512);
    assert_eq!(private.public_key(), &public);
    let out = vfl(&["keygen", "--bits", "128", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn report_renders_runs_and_reference() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), PLAIN);
    let a = dir.path().join("a");
    assert!(vfl(&["run", "--config", &cfg, "--out", a.to_str().unwrap()]).status.success());
    let csv = dir.path().join("table.csv");
    let spec = format!("Origin={}", a.display());
    let out = vfl(&["report", "--run", &spec, "--reference", "--csv", csv.to_str().unwrap()]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("Origin") && text.contains("239.2"), "{text}");
    assert_eq!(std::fs::read_to_string(csv).unwrap().lines().count(), 2);
}

#[test]
fn defaults_match_the_built_in_config() {
    let out = vfl(&["defaults"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(RunConfig::from_toml_str(&text).unwrap(), RunConfig::default());
    let shipped = std::fs::read_to_string(workspace().join("configs/default.toml")).unwrap();
    assert_eq!(shipped, text, "configs/default.toml is out of date");
}

#[test]
fn shipped_configs_validate() {
    let mut stack = vec![workspace().join("configs")];
    let mut count = 0;
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else if path.extension().is_some_and(|e| e == "toml") {
                RunConfig::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
                count += 1;
            }
        }
    }
    assert!(count >= 9, "found {count} configs");
}
