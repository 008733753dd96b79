//! Integration coverage for the command layer and the binary: artifact
//! flow between stages, ablation switches, and the exit-code contract.

use std::path::{Path, PathBuf};
use std::process::Command;

use refine::commands::{self, CliError};
use refine::config::{Backend, PipelineConfig};

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

/// Small, fast config against the bundled classification fixture.
fn class_config(out: &Path) -> PipelineConfig {
    let mut cfg = PipelineConfig::new(fixture("classification.csv"), 30);
    cfg.split_seed = 1;
    cfg.seed = 1;
    cfg.out = out.to_path_buf();
    cfg.plan.total = 200;
    cfg.jobs = 2;
    cfg.eval.repeats = 5;
    cfg.gateway.mock.redundancy = 0.3;
    cfg
}

#[test]
fn pipeline_writes_every_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = class_config(dir.path());
    let summary = commands::cmd_pipeline(&cfg).unwrap();

    for name in [
        "rules.json",
        "rules.txt",
        "syn.csv",
        "manifest.json",
        "aug.csv",
        "filter_report.json",
        "proxy_pre.csv",
        "proxy_post.csv",
        "metrics.json",
        "summary.json",
    ] {
        assert!(dir.path().join(name).exists(), "{name} missing");
    }
    assert_eq!(summary.n_train, 30);
    assert_eq!(summary.n_test, 70);
    assert_eq!(summary.rules, Some(2), "one rule per class");
    assert_eq!(summary.generation.accepted, 200);
    assert!((summary.generation.fill_fraction - 1.0).abs() < 1e-12);
    let filter = summary.filter.as_ref().unwrap();
    assert_eq!(filter.input_total, 200);
    assert!(filter.kept_total > 0);
    assert_eq!(summary.eval.metric, "macro_f1");
    assert_eq!(summary.eval.per_seed.len(), 5);

    // summary.json round-trips the in-memory summary.
    let text = std::fs::read_to_string(dir.path().join("summary.json")).unwrap();
    let parsed: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(parsed["eval"]["mean"].as_f64().unwrap(), summary.eval.mean);
    assert_eq!(parsed["generation"]["accepted"].as_u64().unwrap(), 200);

    // aug.csv holds the training rows plus the kept synthetic rows.
    let aug = std::fs::read_to_string(dir.path().join("aug.csv")).unwrap();
    assert_eq!(aug.lines().count(), 1 + 30 + filter.kept_total);
}

#[test]
fn skip_filter_evaluates_syn_directly() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = class_config(dir.path());
    cfg.skip_filter = true;
    let summary = commands::cmd_pipeline(&cfg).unwrap();
    assert!(summary.filter.is_none());
    assert!(!dir.path().join("aug.csv").exists());
    assert!(!dir.path().join("filter_report.json").exists());
    assert!(dir.path().join("metrics.json").exists());
}

#[test]
fn skip_rules_generates_from_examples() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = class_config(dir.path());
    cfg.skip_rules = true;
    cfg.skip_filter = true;
    let summary = commands::cmd_pipeline(&cfg).unwrap();
    assert!(summary.rules.is_none());
    assert!(!dir.path().join("rules.json").exists());
    assert_eq!(summary.generation.accepted, 200);
}

#[test]
fn regression_reports_r2() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = PipelineConfig::new(fixture("regression.csv"), 40);
    cfg.split_seed = 3;
    cfg.seed = 3;
    cfg.out = dir.path().to_path_buf();
    cfg.plan.total = 120;
    cfg.eval.repeats = 3;
    cfg.jobs = 2;
    let summary = commands::cmd_pipeline(&cfg).unwrap();
    assert_eq!(summary.eval.metric, "r2");
    assert_eq!(summary.rules, Some(3), "one rule per target interval");
    let text = std::fs::read_to_string(dir.path().join("metrics.json")).unwrap();
    assert!(text.contains("\"metric\": \"r2\""));
}

#[test]
fn schema_sidecar_is_honored() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = class_config(dir.path());
    cfg.schema = Some(fixture("classification_schema.json"));
    cfg.plan.total = 60;
    cfg.skip_filter = true;
    let summary = commands::cmd_pipeline(&cfg).unwrap();
    assert_eq!(summary.rules, Some(2));
}

#[test]
fn generate_extracts_rules_inline_when_absent() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = class_config(dir.path());
    cfg.plan.total = 100;
    let manifest = commands::cmd_generate(&cfg).unwrap();
    assert_eq!(manifest.accepted, 100);
    assert!(dir.path().join("rules.json").exists(), "inline extraction persists rules");
    assert!(dir.path().join("syn.csv").exists());
}

#[test]
fn zero_quota_yields_empty_csv_and_valid_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = class_config(dir.path());
    cfg.plan.total = 0;
    let manifest = commands::cmd_generate(&cfg).unwrap();
    assert_eq!(manifest.accepted, 0);
    assert!((manifest.fill_fraction - 1.0).abs() < 1e-12, "zero quota counts as filled");
    let syn = std::fs::read_to_string(dir.path().join("syn.csv")).unwrap();
    assert_eq!(syn.lines().count(), 1, "header only");
    // The filter refuses an empty synthetic set.
    let err = commands::cmd_filter(&cfg).unwrap_err();
    assert_eq!(err.exit_code(), 1);
}

#[test]
fn eval_before_generate_is_an_input_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = class_config(dir.path());
    let err = commands::cmd_eval(&cfg).unwrap_err();
    assert_eq!(err.exit_code(), 1);
    assert!(matches!(err, CliError::Input(_)));
}

#[test]
fn parallel_filter_matches_sequential() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = class_config(dir.path());
    cfg.plan.total = 150;
    commands::cmd_generate(&cfg).unwrap();
    let ctx = commands::load_ctx(&cfg).unwrap();
    let syn = refine::io::read_dataset_with(
        &dir.path().join("syn.csv"),
        &ctx.train.schema,
        refine_core::data::Provenance::Synthetic,
    )
    .unwrap();
    let sequential = commands::run_filter_jobs(&ctx.train, &syn, &cfg.filter_params(), 1).unwrap();
    let parallel = commands::run_filter_jobs(&ctx.train, &syn, &cfg.filter_params(), 4).unwrap();
    assert_eq!(sequential, parallel);
}

#[test]
fn transcript_logs_mock_exchanges() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = class_config(dir.path());
    cfg.plan.total = 100;
    cfg.transcript = Some(dir.path().join("t.jsonl"));
    commands::cmd_generate(&cfg).unwrap();
    let text = std::fs::read_to_string(dir.path().join("t.jsonl")).unwrap();
    let lines: Vec<serde_json::Value> =
        text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert!(!lines.is_empty());
    for line in &lines {
        assert!(line["prompt"].is_string());
        assert!(line["reply"].is_string());
    }
}

// ---- binary-level exit-code contract ----

fn refine_bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_refine"))
}

fn write_config(cfg: &PipelineConfig, dir: &Path) -> PathBuf {
    let path = dir.join("config.json");
    cfg.save(&path).unwrap();
    path
}

#[test]
fn binary_pipeline_succeeds() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = class_config(&dir.path().join("out"));
    cfg.plan.total = 60;
    cfg.skip_filter = true;
    let config = write_config(&cfg, dir.path());
    let output = refine_bin().arg("pipeline").arg("--config").arg(&config).output().unwrap();
    assert!(output.status.success(), "stderr: {}", String::from_utf8_lossy(&output.stderr));
    let stdout = String::from_utf8_lossy(&output.stdout);
    assert!(stdout.contains("pipeline complete"), "{stdout}");
}

#[test]
fn binary_missing_config_flag_exits_one() {
    let output = refine_bin().arg("rules").output().unwrap();
    assert_eq!(output.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&output.stderr).contains("--config"));
}

#[test]
fn binary_missing_dataset_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = class_config(dir.path());
    cfg.dataset = dir.path().join("nope.csv");
    // Bypass save-side validation by writing the JSON directly.
    let path = dir.path().join("config.json");
    let text = serde_json::to_string_pretty(&cfg).unwrap();
    std::fs::write(&path, text).unwrap();
    let output = refine_bin().arg("rules").arg("--config").arg(&path).output().unwrap();
    assert_eq!(output.status.code(), Some(1));
    assert!(!dir.path().join("rules.json").exists(), "no partial outputs");
}

#[test]
fn binary_usage_error_exits_one_not_two() {
    let output = refine_bin().arg("--definitely-not-a-flag").output().unwrap();
    assert_eq!(output.status.code(), Some(1), "exit 2 is reserved for quota shortfall");
}

#[test]
fn binary_help_exits_zero() {
    let output = refine_bin().arg("--help").output().unwrap();
    assert!(output.status.success());
    assert!(String::from_utf8_lossy(&output.stdout).contains("refine"));
}

#[test]
fn binary_dead_endpoint_shortfall_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    // Claim a port, then drop the listener so connections are refused.
    let port = {
        let l = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
        l.local_addr().unwrap().port()
    };
    let mut cfg = class_config(&dir.path().join("out"));
    cfg.plan.total = 40;
    cfg.skip_rules = true; // no merge calls; generation alone hits the endpoint
    cfg.gateway.backend = Backend::Http;
    cfg.gateway.endpoint = format!("http://127.0.0.1:{port}");
    cfg.gateway.retries = 0;
    cfg.gateway.timeout_secs = 2;
    cfg.gateway.api_key_env = "REFINE_CLI_TEST_KEY".to_string();
    let config = write_config(&cfg, dir.path());
    let output = refine_bin()
        .arg("generate")
        .arg("--config")
        .arg(&config)
        .env("REFINE_CLI_TEST_KEY", "k")
        .output()
        .unwrap();
    assert_eq!(
        output.status.code(),
        Some(2),
        "stderr: {}",
        String::from_utf8_lossy(&output.stderr)
    );
    // The shortfall is reported in the manifest, not hidden.
    let manifest: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(dir.path().join("out/manifest.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(manifest["accepted"].as_u64(), Some(0));
    assert!(manifest["targets"][0]["error"].is_string());
}

#[test]
fn binary_http_without_key_exits_one_before_writing() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = class_config(&dir.path().join("out"));
    cfg.gateway.backend = Backend::Http;
    cfg.gateway.api_key_env = "REFINE_CLI_TEST_ABSENT_KEY".to_string();
    let config = write_config(&cfg, dir.path());
    let output = refine_bin()
        .arg("generate")
        .arg("--config")
        .arg(&config)
        .env_remove("REFINE_CLI_TEST_ABSENT_KEY")
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(1));
    assert!(!dir.path().join("out/syn.csv").exists(), "no artifacts written");
    assert!(String::from_utf8_lossy(&output.stderr).contains("REFINE_CLI_TEST_ABSENT_KEY"));
}

#[test]
fn binary_single_class_eval_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    std::fs::create_dir_all(&out).unwrap();
    // A synthetic pool that collapsed to one class: the downstream
    // learner cannot train, which is a stage failure, not bad input.
    let mut syn = String::from("x1,x2,y\n");
    for i in 0..20 {
        syn.push_str(&format!("{}.5,{}.5,1\n", i, i));
    }
    std::fs::write(out.join("syn.csv"), syn).unwrap();
    let mut cfg = class_config(&out);
    cfg.skip_filter = true;
    let config = write_config(&cfg, dir.path());
    let output = refine_bin().arg("eval").arg("--config").arg(&config).output().unwrap();
    assert_eq!(
        output.status.code(),
        Some(3),
        "stderr: {}",
        String::from_utf8_lossy(&output.stderr)
    );
}

#[test]
fn binary_flag_overrides_win() {
    let dir = tempfile::tempdir().unwrap();
    let default_out = dir.path().join("default_out");
    let flag_out = dir.path().join("flag_out");
    let mut cfg = class_config(&default_out);
    cfg.plan.total = 40;
    cfg.skip_filter = true;
    let config = write_config(&cfg, dir.path());
    let output = refine_bin()
        .arg("generate")
        .arg("--config")
        .arg(&config)
        .arg("--out")
        .arg(&flag_out)
        .arg("--skip-rules")
        .output()
        .unwrap();
    assert!(output.status.success(), "stderr: {}", String::from_utf8_lossy(&output.stderr));
    assert!(flag_out.join("syn.csv").exists());
    assert!(!flag_out.join("rules.json").exists(), "--skip-rules generates without rules");
    assert!(!default_out.exists(), "--out overrode the config");
}
