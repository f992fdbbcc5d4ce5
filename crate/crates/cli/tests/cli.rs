//! Command contract: outputs, manifests, exit codes and determinism.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use radar_core::backends::remote::{RemoteServer, ServerOptions};
use radar_core::synth::{generate_corpus, oracle_backends, SynthSpec};
use serde_json::Value;
use tempfile::TempDir;

const SMALL_SPEC: &str = r#"
seed = 21
n_subissues = 6
n_negative = 80
n_covered = 40
n_variant_subissues = 2
variant_items_per_subissue = 8
n_novel_groups = 2
novel_items_per_group = 8
"#;

fn radar(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_radar")).args(args).env_remove("RADAR_BACKEND_API_KEY").output().unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

struct Fixture {
    dir: TempDir,
}

impl Fixture {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("spec.toml"), SMALL_SPEC).unwrap();
        let out = radar(&["synth", "--spec", p(&dir.path().join("spec.toml")), "--out-dir", p(&dir.path().join("data"))]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        Self { dir }
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.dir.path().join(rel)
    }

    fn common(&self, out: &str) -> Vec<String> {
        [
            "--corpus",
            p(&self.path("data/corpus.jsonl")),
            "--policy",
            p(&self.path("data/policy.json")),
            "--sidecar",
            p(&self.path("data/sidecar.json")),
            "--m",
            "2",
            "--out-dir",
            p(&self.path(out)),
        ]
        .map(String::from)
        .to_vec()
    }

    fn run(&self, cmd: &str, out: &str, extra: &[&str]) -> Output {
        let mut args: Vec<String> = vec![cmd.to_string()];
        args.extend(self.common(out));
        args.extend(extra.iter().map(|s| s.to_string()));
        radar(&args.iter().map(String::as_str).collect::<Vec<_>>())
    }
}

#[test]
fn synth_writes_corpus_policy_sidecar_and_manifest() {
    let fx = Fixture::new();
    for f in ["corpus.jsonl", "policy.json", "sidecar.json", "manifest.json"] {
        assert!(fx.path("data").join(f).exists(), "{f}");
    }
    let manifest = read_json(&fx.path("data/manifest.json"));
    assert_eq!(manifest["command"], "synth");
    assert_eq!(manifest["status"], "ok");
    assert_eq!(manifest["exit_code"], 0);
    let outputs = manifest["outputs"].as_object().unwrap();
    assert_eq!(outputs.len(), 3);
    let corpus = fs::read(fx.path("data/corpus.jsonl")).unwrap();
    let lines = corpus.split(|&b| b == b'\n').filter(|l| !l.is_empty()).count();
    assert_eq!(lines, 1 + 80 + 40 + 16 + 16);
    assert_eq!(outputs["corpus"]["bytes"], corpus.len());
}

#[test]
fn run_writes_report_and_is_deterministic() {
    let fx = Fixture::new();
    for out in ["r1", "r2"] {
        let o = fx.run("run", out, &[]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    for f in ["report.json", "evolved_policy.json", "diff.json", "diff.txt", "decisions.jsonl"] {
        assert_eq!(fs::read(fx.path("r1").join(f)).unwrap(), fs::read(fx.path("r2").join(f)).unwrap(), "{f}");
    }
    let report = read_json(&fx.path("r1/report.json"));
    assert_eq!(report["metrics"]["phase3_ari"], 1.0);
    assert_eq!(report["evolved_policy"]["version"], 2);
    let manifest = read_json(&fx.path("r1/manifest.json"));
    assert_eq!(manifest["status"], "ok");
    assert_eq!(manifest["policy_version_in"], 1);
    assert_eq!(manifest["policy_version_out"], 2);
    assert!(manifest["inputs"]["corpus"]["sha256"].as_str().unwrap().len() == 64);
    assert!(manifest["tool_calls"].as_object().is_some_and(|m| !m.is_empty()));
    assert_ne!(manifest["run_id"], read_json(&fx.path("r2/manifest.json"))["run_id"]);
}

#[test]
fn memory_mode_via_config_file() {
    let fx = Fixture::new();
    fs::write(fx.path("radar.toml"), "[pipeline]\nmode = \"memory\"\ndelta = 0.4\n[pipeline.tools]\nuse_embedding = false\nuse_memory = true\n").unwrap();
    let o = fx.run("run", "mem", &["--config", p(&fx.path("radar.toml"))]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report = read_json(&fx.path("mem/report.json"));
    assert_eq!(report["config"]["mode"], "memory");
    // Flags win over the file.
    let o = fx.run("run", "emb", &["--config", p(&fx.path("radar.toml")), "--mode", "embedding"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(read_json(&fx.path("emb/report.json"))["config"]["mode"], "embedding");
}

#[test]
fn stream_limit_then_resume_matches_full_run() {
    let fx = Fixture::new();
    assert!(fx.run("run", "full", &[]).status.success());
    let o = fx.run("run", "part", &["--stream-limit", "5"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(read_json(&fx.path("part/manifest.json"))["status"], "incomplete");
    assert!(read_json(&fx.path("part/report.json"))["incomplete"].as_bool().unwrap());
    let cp = fx.path("part/checkpoint.json");
    let o = fx.run("run", "resumed", &["--resume", p(&cp)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(fs::read(fx.path("full/report.json")).unwrap(), fs::read(fx.path("resumed/report.json")).unwrap());
}

#[test]
fn eval_protocols() {
    let fx = Fixture::new();
    let o = fx.run("eval", "e2e", &["--end-to-end"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let m = read_json(&fx.path("e2e/metrics.json"));
    assert_eq!(m["protocol"], "end_to_end");
    assert!(m["metrics"]["excluded"]["macro_f1"].as_f64().unwrap() >= 0.95);
    let csv = fs::read_to_string(fx.path("e2e/metrics.csv")).unwrap();
    assert!(csv.starts_with("block,class,metric,value"));

    let o = fx.run("eval", "pw", &["--phase-wise", "--shuffles", "2"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let m = read_json(&fx.path("pw/metrics.json"));
    assert_eq!(m["protocol"], "phase_wise");
    assert_eq!(m["report"]["inputs"]["phase2_gold_case1"], 0);
    assert_eq!(m["report"]["inputs"]["phase3_gold_case12"], 0);
    assert_eq!(m["report"]["shuffled"]["runs"], 2);

    assert_eq!(fx.run("eval", "both", &["--phase-wise", "--end-to-end"]).status.code(), Some(2));
    assert_eq!(fx.run("eval", "none", &[]).status.code(), Some(2));
}

#[test]
fn policy_diff_reports_changes() {
    let fx = Fixture::new();
    assert!(fx.run("run", "r", &[]).status.success());
    let o = radar(&[
        "policy-diff",
        "--old",
        p(&fx.path("data/policy.json")),
        "--new",
        p(&fx.path("r/evolved_policy.json")),
        "--out-dir",
        p(&fx.path("d")),
    ]);
    assert!(o.status.success());
    assert_eq!(fs::read(fx.path("d/diff.json")).unwrap(), fs::read(fx.path("r/diff.json")).unwrap());
    let diff = read_json(&fx.path("d/diff.json"));
    assert_eq!(diff["added"].as_array().unwrap().len(), 2);
    assert_eq!(diff["updated"].as_array().unwrap().len(), 2);

    // Dropping a sub-issue is a validation error.
    let mut shrunk = read_json(&fx.path("data/policy.json"));
    shrunk["sub_issues"].as_array_mut().unwrap().pop();
    fs::write(fx.path("shrunk.json"), shrunk.to_string()).unwrap();
    let o = radar(&["policy-diff", "--old", p(&fx.path("data/policy.json")), "--new", p(&fx.path("shrunk.json"))]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn validation_failures_exit_2_without_outputs() {
    let fx = Fixture::new();
    let o = radar(&["synth", "--spec", p(&fx.path("missing.toml")), "--out-dir", p(&fx.path("s"))]);
    assert_eq!(o.status.code(), Some(2));
    let manifest = read_json(&fx.path("s/manifest.json"));
    assert_eq!(manifest["status"], "error");
    assert_eq!(manifest["exit_code"], 2);
    assert!(!fx.path("s/corpus.jsonl").exists());

    // Duplicate ids in the corpus.
    let text = fs::read_to_string(fx.path("data/corpus.jsonl")).unwrap();
    let mut lines: Vec<&str> = text.lines().collect();
    lines.push(lines[1]);
    fs::write(fx.path("data/corpus.jsonl"), lines.join("\n") + "\n").unwrap();
    let o = fx.run("run", "bad", &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!fx.path("bad/report.json").exists());
    assert_eq!(read_json(&fx.path("bad/manifest.json"))["exit_code"], 2);
}

#[test]
fn sidecar_noise_rate_is_the_default_judge_noise() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("spec.toml"), format!("{SMALL_SPEC}noise_rate = 0.3\n")).unwrap();
    let data = dir.path().join("data");
    assert!(radar(&["synth", "--spec", p(&dir.path().join("spec.toml")), "--out-dir", p(&data)]).status.success());
    let common = |out: &str| {
        vec![
            "run".to_string(),
            "--corpus".into(),
            p(&data.join("corpus.jsonl")).into(),
            "--policy".into(),
            p(&data.join("policy.json")).into(),
            "--sidecar".into(),
            p(&data.join("sidecar.json")).into(),
            "--out-dir".into(),
            p(&dir.path().join(out)).into(),
        ]
    };
    let args = common("noisy");
    assert!(radar(&args.iter().map(String::as_str).collect::<Vec<_>>()).status.success());
    assert_eq!(read_json(&dir.path().join("noisy/manifest.json"))["config"]["backend"]["judge_noise"], 0.3);
    let mut args = common("clean");
    args.extend(["--judge-noise".to_string(), "0".to_string()]);
    assert!(radar(&args.iter().map(String::as_str).collect::<Vec<_>>()).status.success());
    assert_eq!(read_json(&dir.path().join("clean/manifest.json"))["config"]["backend"]["judge_noise"], 0.0);
    let noisy = read_json(&dir.path().join("noisy/report.json"));
    let clean = read_json(&dir.path().join("clean/report.json"));
    assert!(noisy["metrics"]["excluded"]["macro_f1"].as_f64() < clean["metrics"]["excluded"]["macro_f1"].as_f64());
}

#[test]
fn bad_config_values_exit_2() {
    let fx = Fixture::new();
    assert_eq!(fx.run("run", "x", &["--delta", "2.5"]).status.code(), Some(2));
    assert_eq!(fx.run("run", "y", &["--backend", "remote"]).status.code(), Some(2));
    fs::write(fx.path("broken.toml"), "[pipeline\n").unwrap();
    assert_eq!(fx.run("run", "z", &["--config", p(&fx.path("broken.toml"))]).status.code(), Some(2));
}

#[test]
fn remote_backend_matches_mock_and_reports_outage() {
    let fx = Fixture::new();
    assert!(fx.run("run", "local", &[]).status.success());
    let spec: SynthSpec = toml::from_str(SMALL_SPEC).unwrap();
    let synth = generate_corpus(&spec).unwrap();
    let server = RemoteServer::start("127.0.0.1:0", oracle_backends(&synth, 0.0, 0).unwrap(), ServerOptions::default()).unwrap();
    let o = fx.run("run", "remote", &["--backend", "remote", "--backend-url", server.url()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(fs::read(fx.path("local/report.json")).unwrap(), fs::read(fx.path("remote/report.json")).unwrap());

    let url = server.url().to_string();
    drop(server);
    let o = fx.run("run", "down", &["--backend", "remote", "--backend-url", &url]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
}
