use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use anyhow::Context;
use radar_core::backends::remote::{RemoteBackend, RemoteConfig, ENV_API_KEY};
use radar_core::backends::Backends;
use radar_core::eval::{end_to_end_eval, metric_rows, phase_wise_eval, MetricsBlock};
use radar_core::pipeline::{decision_log_jsonl, diff_policies, run_pipeline_with, PipelineCheckpoint, RunControl};
use radar_core::synth::{generate_corpus, mock_backends, Sidecar, SynthSpec};
use radar_core::types::{Corpus, PolicyDoc};
use serde::Serialize;

use crate::config::{BackendKind, CliConfig};
use crate::manifest::{read_input, Outputs, RunManifest, RunStatus};
use crate::{exit_code, CommonArgs, DiffArgs, EvalArgs, Failure, RunArgs, SynthArgs, EXIT_OUTAGE};

/// Print a line to stdout, ignoring a closed pipe.
macro_rules! say {
    ($($arg:tt)*) => {{
        use std::io::Write;
        let _ = writeln!(std::io::stdout().lock(), $($arg)*);
    }};
}

/// Run `body`; on failure write an error manifest into `out_dir` (when one
/// was given) before handing the error back.
fn with_manifest(
    command: &str,
    out_dir: Option<&Path>,
    body: impl FnOnce(&mut RunManifest) -> anyhow::Result<u8>,
) -> anyhow::Result<u8> {
    let started = Instant::now();
    let mut manifest = RunManifest::start(command);
    let result = body(&mut manifest);
    manifest.finish(started);
    match result {
        Ok(code) => {
            manifest.exit_code = code;
            if let Some(dir) = out_dir {
                manifest.write(dir)?;
            }
            Ok(code)
        }
        Err(err) => {
            manifest.status = RunStatus::Error;
            manifest.exit_code = exit_code(&err);
            manifest.error = Some(format!("{err:#}"));
            manifest.outputs.clear();
            if let Some(dir) = out_dir {
                if std::fs::create_dir_all(dir).is_ok() {
                    let _ = manifest.write(dir);
                }
            }
            Err(err)
        }
    }
}

fn parse_json<T: serde::de::DeserializeOwned>(text: &str, path: &Path) -> anyhow::Result<T> {
    serde_json::from_str(text).map_err(|e| Failure::validation(anyhow::anyhow!("{}: {e}", path.display())).into())
}

fn read_synth_spec(path: &Path) -> anyhow::Result<(SynthSpec, crate::manifest::FileRecord)> {
    let input = read_input(path).map_err(Failure::validation)?;
    let spec = if path.extension().is_some_and(|e| e == "json") {
        parse_json(&input.text, path)?
    } else {
        toml::from_str(&input.text).map_err(|e| Failure::validation(anyhow::anyhow!("{}: {e}", path.display())))?
    };
    Ok((spec, input.record))
}

pub fn synth(args: SynthArgs) -> anyhow::Result<u8> {
    with_manifest("synth", Some(&args.out_dir.clone()), |manifest| {
        let (mut spec, record) = read_synth_spec(&args.spec)?;
        manifest.inputs.insert("spec".into(), record);
        if let Some(seed) = args.seed {
            spec.seed = seed;
        }
        manifest.config = Some(serde_json::to_value(&spec)?);
        let out = generate_corpus(&spec)?;
        let mut outputs = Outputs::default();
        outputs.add("corpus", args.out_dir.join("corpus.jsonl"), out.corpus.to_jsonl());
        outputs.add_json("policy", args.out_dir.join("policy.json"), &out.policy)?;
        outputs.add_json("sidecar", args.out_dir.join("sidecar.json"), &out.sidecar)?;
        manifest.policy_version_out = Some(out.policy.version);
        outputs.write_all(manifest)?;
        say!(
            "wrote {} items ({} emerging) to {}",
            out.corpus.items.len(),
            out.sidecar.case_counts["case3"] + out.sidecar.case_counts["case4"],
            args.out_dir.display()
        );
        Ok(0)
    })
}

struct Loaded {
    config: CliConfig,
    corpus: Corpus,
    policy: PolicyDoc,
    backends: Backends,
}

fn load_common(common: &CommonArgs, manifest: &mut RunManifest) -> anyhow::Result<Loaded> {
    let mut config = CliConfig::load(common.config.as_deref())?;
    if let Some(path) = &common.config {
        manifest.inputs.insert("config".into(), read_input(path)?.record);
    }
    config.apply(&common.overrides);
    manifest.config = Some(serde_json::to_value(&config)?);
    config.validate()?;
    let sidecar = match &common.sidecar {
        Some(path) => {
            let input = read_input(path).map_err(Failure::validation)?;
            manifest.inputs.insert("sidecar".into(), input.record);
            Some(parse_json::<Sidecar>(&input.text, path)?)
        }
        None => None,
    };
    if config.backend.kind == BackendKind::Mock && config.backend.judge_noise.is_none() {
        config.backend.judge_noise = Some(sidecar.as_ref().map_or(0.0, |s| s.spec.noise_rate));
        manifest.config = Some(serde_json::to_value(&config)?);
    }

    let corpus_in = read_input(&common.corpus).map_err(Failure::validation)?;
    manifest.inputs.insert("corpus".into(), corpus_in.record);
    let corpus = Corpus::from_jsonl(&corpus_in.text).with_context(|| format!("parsing {}", common.corpus.display()))?;
    corpus.validate().into_result().with_context(|| format!("validating {}", common.corpus.display()))?;

    let policy_in = read_input(&common.policy).map_err(Failure::validation)?;
    manifest.inputs.insert("policy".into(), policy_in.record);
    let policy: PolicyDoc = parse_json(&policy_in.text, &common.policy)?;
    policy.validate().with_context(|| format!("validating {}", common.policy.display()))?;
    manifest.policy_version_in = Some(policy.version);

    let backends = build_backends(&config, &corpus, &policy, sidecar.as_ref())?;
    Ok(Loaded { config, corpus, policy, backends })
}

fn build_backends(config: &CliConfig, corpus: &Corpus, policy: &PolicyDoc, sidecar: Option<&Sidecar>) -> anyhow::Result<Backends> {
    match config.backend.kind {
        BackendKind::Mock => {
            let prototypes = sidecar.map(|s| s.prototypes.clone()).unwrap_or_default();
            Ok(mock_backends(
                corpus,
                policy,
                &prototypes,
                corpus.header.dim,
                config.backend.judge_noise.unwrap_or(0.0),
                config.backend.noise_seed,
            )?)
        }
        BackendKind::Remote => {
            let url = config.backend.url.clone().ok_or_else(|| Failure::validation(anyhow::anyhow!("backend.url is not set")))?;
            let retry = config.pipeline.retry;
            let mut remote = RemoteConfig::new(url);
            remote.timeout = Duration::from_millis(retry.timeout_ms);
            remote.retries = retry.retries;
            remote.backoff = Duration::from_millis(retry.backoff_ms);
            remote.api_key = std::env::var(ENV_API_KEY).ok().filter(|k| !k.is_empty());
            let client = Arc::new(RemoteBackend::connect(remote)?);
            Ok(Backends::new(client.clone(), client.clone(), client.clone(), client))
        }
    }
}

pub fn run(args: RunArgs) -> anyhow::Result<u8> {
    let out_dir = args.common.out_dir.clone();
    with_manifest("run", Some(&out_dir), |manifest| {
        let loaded = load_common(&args.common, manifest)?;
        let resume = match &args.resume {
            Some(path) => {
                let input = read_input(path).map_err(Failure::validation)?;
                manifest.inputs.insert("checkpoint".into(), input.record);
                Some(PipelineCheckpoint::from_json(&input.text)?)
            }
            None => None,
        };
        let control = RunControl { resume, stream_limit: args.stream_limit };
        let started = Instant::now();
        let outcome = run_pipeline_with(&loaded.corpus.items, &loaded.policy, &loaded.config.pipeline, &loaded.backends, control)?;
        manifest.timings_ms.insert("pipeline".into(), started.elapsed().as_millis() as u64);
        manifest.tool_calls = loaded.backends.counters().snapshot();
        let report = &outcome.report;
        manifest.policy_version_out = Some(report.policy_version_out);

        let mut outputs = Outputs::default();
        outputs.add("report", out_dir.join("report.json"), report.to_json());
        outputs.add_json("evolved_policy", out_dir.join("evolved_policy.json"), &report.evolved_policy)?;
        outputs.add_json("diff", out_dir.join("diff.json"), &report.diff)?;
        outputs.add("diff_text", out_dir.join("diff.txt"), report.diff.render());
        outputs.add("decisions", out_dir.join("decisions.jsonl"), decision_log_jsonl(report));
        if let Some(cp) = &outcome.checkpoint {
            outputs.add("checkpoint", out_dir.join("checkpoint.json"), cp.to_json());
        }
        outputs.write_all(manifest)?;

        say!(
            "{}: {} verdicts, {} quarantined, {} pending; policy v{} -> v{}",
            report.issue_id,
            report.verdicts.len(),
            report.quarantine.len(),
            report.pending.len(),
            report.policy_version_in,
            report.policy_version_out
        );
        for (case, n) in &report.case_counts {
            say!("  {case}: {n}");
        }
        if let Some(m) = &report.metrics {
            say!("  macro-F1 {:.4}, weighted-F1 {:.4}", m.excluded.macro_f1, m.excluded.weighted_f1);
        }
        if report.incomplete {
            manifest.status = RunStatus::Incomplete;
        }
        if report.outage {
            eprintln!("backend outage: partial report written; resume from checkpoint.json");
            return Ok(EXIT_OUTAGE);
        }
        Ok(0)
    })
}

#[derive(Serialize)]
#[serde(tag = "protocol", rename_all = "snake_case")]
enum EvalOutput<'a> {
    EndToEnd { metrics: &'a radar_core::eval::RunMetrics },
    PhaseWise { report: &'a radar_core::eval::PhaseWiseReport },
}

fn metrics_csv(blocks: &[(&str, &MetricsBlock)]) -> anyhow::Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["block", "class", "metric", "value"])?;
    for (name, block) in blocks {
        for row in metric_rows(name, block) {
            w.write_record(&row)?;
        }
    }
    w.into_inner().map_err(|e| anyhow::anyhow!("csv: {e}"))
}

pub fn eval(args: EvalArgs) -> anyhow::Result<u8> {
    let out_dir = args.common.out_dir.clone();
    with_manifest("eval", Some(&out_dir), |manifest| {
        let loaded = load_common(&args.common, manifest)?;
        if !loaded.corpus.has_gold() {
            return Err(Failure::validation(anyhow::anyhow!("evaluation needs gold labels on every item")).into());
        }
        let started = Instant::now();
        let mut outputs = Outputs::default();
        let json_path = out_dir.join("metrics.json");
        let csv_path = out_dir.join("metrics.csv");
        if args.end_to_end {
            let metrics = end_to_end_eval(&loaded.corpus.items, &loaded.policy, &loaded.config.pipeline, &loaded.backends)?;
            outputs.add_json("metrics", json_path, &EvalOutput::EndToEnd { metrics: &metrics })?;
            outputs.add("metrics_csv", csv_path, metrics_csv(&[("excluded", &metrics.excluded), ("worst_case", &metrics.worst_case)])?);
            say!("end-to-end macro-F1 {:.4} over {} items", metrics.excluded.macro_f1, metrics.scored);
        } else {
            let report =
                phase_wise_eval(&loaded.corpus.items, &loaded.policy, &loaded.config.pipeline, &loaded.backends, args.shuffles)?;
            outputs.add_json("metrics", json_path, &EvalOutput::PhaseWise { report: &report })?;
            outputs.add(
                "metrics_csv",
                csv_path,
                metrics_csv(&[("phase1", &report.phase1), ("phase2", &report.phase2), ("phase3", &report.phase3)])?,
            );
            for (name, block) in [("phase1", &report.phase1), ("phase2", &report.phase2), ("phase3", &report.phase3)] {
                say!("{name}: P {:.4} R {:.4} macro-F1 {:.4} (n={})", block.precision, block.recall, block.macro_f1, block.n);
            }
        }
        manifest.timings_ms.insert("eval".into(), started.elapsed().as_millis() as u64);
        manifest.tool_calls = loaded.backends.counters().snapshot();
        outputs.write_all(manifest)?;
        Ok(0)
    })
}

fn read_policy(path: &Path) -> anyhow::Result<(PolicyDoc, crate::manifest::FileRecord)> {
    let input = read_input(path).map_err(Failure::validation)?;
    Ok((parse_json(&input.text, path)?, input.record))
}

pub fn policy_diff(args: DiffArgs) -> anyhow::Result<u8> {
    let out_dir: Option<PathBuf> = args.out_dir.clone();
    with_manifest("policy-diff", out_dir.as_deref(), |manifest| {
        let (old, old_rec) = read_policy(&args.old)?;
        let (new, new_rec) = read_policy(&args.new)?;
        manifest.inputs.insert("old".into(), old_rec);
        manifest.inputs.insert("new".into(), new_rec);
        manifest.policy_version_in = Some(old.version);
        manifest.policy_version_out = Some(new.version);
        let diff = diff_policies(&old, &new)?;
        let json = serde_json::to_string_pretty(&diff)? + "\n";
        say!("{}", diff.render().trim_end());
        say!("{}", json.trim_end());
        if let Some(dir) = &out_dir {
            let mut outputs = Outputs::default();
            outputs.add("diff", dir.join("diff.json"), json);
            outputs.add("diff_text", dir.join("diff.txt"), diff.render());
            outputs.write_all(manifest)?;
        }
        Ok(0)
    })
}
