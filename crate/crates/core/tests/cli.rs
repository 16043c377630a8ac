//! End-to-end CLI checks over the compiled binary.

use std::path::Path;
use std::process::Command;

fn mdmsim() -> Command {
    Command::new(env!("CARGO_BIN_EXE_mdmsim"))
}

const CONFIG: &str = r#"{
  "language": {"kind": "ngram", "order": 2, "vocab_size": 4, "temperature": 2.0, "threshold": 0.05, "seed": 3},
  "lengths": [12, 16],
  "schedules": [{"kind": "linear", "num_steps": 4}, {"kind": "linear", "num_steps": 8}],
  "samplers": [{"kind": "mdm"}, {"kind": "ar"}],
  "num_sequences": 40,
  "metrics": ["ser"],
  "master_seed": 9
}"#;

#[test]
fn sweep_emits_deterministic_artifacts_and_plot_rereads_them() {
    let dir = tempfile::tempdir().unwrap();
    let config_path = dir.path().join("config.json");
    std::fs::write(&config_path, CONFIG).unwrap();

    let run = |out: &Path| {
        let status = mdmsim()
            .args(["sweep", "--config"])
            .arg(&config_path)
            .arg("--out")
            .arg(out)
            .status()
            .unwrap();
        assert!(status.success());
    };
    let out1 = dir.path().join("run1");
    let out2 = dir.path().join("run2");
    run(&out1);
    run(&out2);
    for name in ["results.csv", "results.jsonl", "ser.svg"] {
        assert!(out1.join(name).exists(), "{name} missing");
        let a = std::fs::read(out1.join(name)).unwrap();
        let b = std::fs::read(out2.join(name)).unwrap();
        assert_eq!(a, b, "{name} differs between identical runs");
    }
    let csv = std::fs::read_to_string(out1.join("results.csv")).unwrap();
    // 2 lengths x (mdm x 2 schedules + one ar cell) = 6 cells, one ser row each.
    assert_eq!(csv.lines().count(), 1 + 6);

    let plot_out = dir.path().join("plots");
    let status = mdmsim()
        .arg("plot")
        .arg(out1.join("results.csv"))
        .arg("--out")
        .arg(&plot_out)
        .status()
        .unwrap();
    assert!(status.success());
    let svg = std::fs::read_to_string(plot_out.join("ser.svg")).unwrap();
    assert!(svg.contains("<polyline"));
}

#[test]
fn gen_lang_emits_a_parsable_language_document() {
    let dir = tempfile::tempdir().unwrap();
    let config_path = dir.path().join("config.json");
    std::fs::write(&config_path, CONFIG).unwrap();
    let status = mdmsim()
        .args(["gen-lang", "--config"])
        .arg(&config_path)
        .arg("--out")
        .arg(dir.path())
        .status()
        .unwrap();
    assert!(status.success());
    let json = std::fs::read_to_string(dir.path().join("language.json")).unwrap();
    let doc = mdmsim::lang::LanguageDoc::from_json(&json).unwrap();
    assert_eq!(doc.to_json(), json);
    doc.build().unwrap();
}

#[test]
fn sample_requires_a_single_cell_and_prints_rows() {
    let dir = tempfile::tempdir().unwrap();
    let config_path = dir.path().join("config.json");
    std::fs::write(&config_path, CONFIG).unwrap();
    // Multi-cell config is a configuration error (exit code 1).
    let out = mdmsim()
        .args(["sample", "--config"])
        .arg(&config_path)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));

    let single = CONFIG
        .replace("[12, 16]", "[12]")
        .replace(
            r#"[{"kind": "linear", "num_steps": 4}, {"kind": "linear", "num_steps": 8}]"#,
            r#"[{"kind": "linear", "num_steps": 4}]"#,
        )
        .replace(r#"[{"kind": "mdm"}, {"kind": "ar"}]"#, r#"[{"kind": "mdm"}]"#);
    std::fs::write(&config_path, single).unwrap();
    let out = mdmsim()
        .args(["sample", "--config"])
        .arg(&config_path)
        .output()
        .unwrap();
    assert!(out.status.success());
    let stdout = String::from_utf8(out.stdout).unwrap();
    let row: mdmsim::harness::ResultRow = serde_json::from_str(stdout.lines().next().unwrap()).unwrap();
    assert_eq!(row.metric, "ser");
    assert_eq!(row.seq_len, 12);
}

#[test]
fn bad_config_exits_with_code_one() {
    let dir = tempfile::tempdir().unwrap();
    let config_path = dir.path().join("config.json");
    // TER against a pruned language is a configuration error.
    std::fs::write(&config_path, CONFIG.replace("\"ser\"", "\"ter\"")).unwrap();
    let out = mdmsim()
        .args(["sweep", "--config"])
        .arg(&config_path)
        .arg("--out")
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8(out.stderr).unwrap();
    assert!(stderr.contains("threshold-0"), "stderr: {stderr}");
}
