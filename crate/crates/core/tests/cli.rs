use std::path::Path;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_intent-discovery"))
}

fn code(cmd: &mut Command) -> i32 {
    let out = cmd.output().unwrap();
    out.status.code().unwrap()
}

fn gen(dir: &Path, extra: &[&str]) {
    let status = bin()
        .args(["gen-synthetic", "--out"])
        .arg(dir)
        .args(["--seed", "3"])
        .args(extra)
        .output()
        .unwrap();
    assert!(status.status.success());
}

#[test]
fn generated_corpus_runs_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    gen(dir.path(), &["--constraints", "2"]);
    assert!(dir.path().join("constraints.json").exists());
    let out = bin()
        .current_dir(dir.path())
        .args(["pipeline", "--config", "config.toml", "--eval", "--constraints", "constraints.json"])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("NMI"), "{stdout}");
    for name in ["manifest.json", "taxonomy.json", "report.json"] {
        assert!(dir.path().join("out").join(name).exists(), "{name}");
    }
}

#[test]
fn stage_subcommands_share_an_output_directory() {
    let dir = tempfile::tempdir().unwrap();
    gen(dir.path(), &[]);
    let cfg = dir.path().join("config.toml");
    let out = dir.path().join("elsewhere");
    for sub in ["detect", "discover", "link", "evaluate"] {
        let c = code(bin().arg(sub).arg("--config").arg(&cfg).arg("--out").arg(&out).args(["--seed", "1"]));
        assert_eq!(c, 0, "{sub}");
    }
    assert!(out.join("taxonomy.json").exists());
}

#[test]
fn missing_config_exits_with_2() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(bin().args(["detect", "--config"]).arg(dir.path().join("none.toml"))), 2);
}

#[test]
fn bad_config_value_exits_with_2() {
    let dir = tempfile::tempdir().unwrap();
    gen(dir.path(), &[]);
    let cfg = dir.path().join("config.toml");
    let text = std::fs::read_to_string(&cfg).unwrap();
    std::fs::write(&cfg, text.replace("risk_factor = 3.0", "risk_factor = -1.0")).unwrap();
    assert_eq!(code(bin().args(["detect", "--config"]).arg(&cfg)), 2);
}

#[test]
fn corrupt_embeddings_exit_with_3() {
    let dir = tempfile::tempdir().unwrap();
    gen(dir.path(), &[]);
    std::fs::write(dir.path().join("embeddings.emb1"), b"EMB1\x01").unwrap();
    assert_eq!(code(bin().current_dir(dir.path()).args(["pipeline", "--config", "config.toml"])), 3);
}

#[test]
fn diverging_training_exits_with_4() {
    let dir = tempfile::tempdir().unwrap();
    gen(dir.path(), &[]);
    let cfg = dir.path().join("config.toml");
    let text = std::fs::read_to_string(&cfg).unwrap();
    assert!(text.contains("learning_rate = 0.05"));
    std::fs::write(&cfg, text.replacen("learning_rate = 0.05", "learning_rate = 1e300", 1)).unwrap();
    assert_eq!(code(bin().args(["detect", "--config"]).arg(&cfg)), 4);
}
