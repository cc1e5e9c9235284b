use std::collections::BTreeSet;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;
use std::time::Duration;

use anyhow::{anyhow, Context};
use editbench_campaign::{BindError, ConfigError, ServiceConfig};
use editbench_core::dataset::{
    check_ratings_against, load_manifest_with, load_ratings, DatasetError, Manifest, ManifestOptions,
};
use editbench_core::leaderboard::report::{
    alignment_json, alignment_table, leaderboard_json, leaderboard_table, write_jsonl,
};
use editbench_core::leaderboard::{
    aggregate_run, align_metric, build_leaderboard, export_descriptives, LeaderboardOptions,
};
use editbench_core::metrics::{MetricKind, MetricParams};
use editbench_core::scorer::mock::{MockScorer, MockScores};
use editbench_core::scorer::{load_score_file, run_builtin, run_remote, MetricRun, RemoteConfig, ScoreFileError};
use editbench_core::subjective::{
    load_mos_table, load_qa, process_ratings, write_mos_records, write_qa, MosTable, NormalizationScope,
    OutlierPolicy, QaConsensus, SubjectiveError,
};
use serde_json::{json, Value};

use crate::args::*;

/// A failed command, classified for the exit code.
#[derive(Debug)]
pub enum Failure {
    /// The input data is invalid (exit 1).
    Invalid(anyhow::Error),
    /// Anything else: I/O, network, bind failures (exit 2).
    Runtime(anyhow::Error),
}

impl Failure {
    pub fn exit_code(&self) -> u8 {
        match self {
            Failure::Invalid(_) => 1,
            Failure::Runtime(_) => 2,
        }
    }

    pub fn error(&self) -> &anyhow::Error {
        match self {
            Failure::Invalid(e) | Failure::Runtime(e) => e,
        }
    }
}

pub type Outcome = Result<(), Failure>;

fn invalid(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Invalid(e.into())
}

fn runtime(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Runtime(e.into())
}

impl From<DatasetError> for Failure {
    fn from(e: DatasetError) -> Self {
        if e.is_validation() {
            invalid(e)
        } else {
            runtime(e)
        }
    }
}

impl From<SubjectiveError> for Failure {
    fn from(e: SubjectiveError) -> Self {
        match e {
            SubjectiveError::Io { .. } => runtime(e),
            _ => invalid(e),
        }
    }
}

impl From<ScoreFileError> for Failure {
    fn from(e: ScoreFileError) -> Self {
        match e {
            ScoreFileError::Io { .. } => runtime(e),
            _ => invalid(e),
        }
    }
}

fn manifest(path: &Path, no_verify: bool) -> Result<Manifest, Failure> {
    Ok(load_manifest_with(
        path,
        ManifestOptions {
            verify_images: !no_verify,
        },
    )?)
}

fn sink(out: &Option<std::path::PathBuf>) -> Result<Box<dyn Write>, Failure> {
    Ok(match out {
        Some(path) => Box::new(BufWriter::new(
            File::create(path).with_context(|| format!("creating {}", path.display())).map_err(runtime)?,
        )),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn emit(output: &OutputArgs, lines: &[Value], table: impl FnOnce() -> String) -> Outcome {
    let mut out = sink(&output.out)?;
    let written = if output.table {
        out.write_all(table().as_bytes())
    } else {
        write_jsonl(lines, &mut out)
    };
    written.and_then(|_| out.flush()).context("writing report").map_err(runtime)
}

fn create(path: &Path) -> Result<BufWriter<File>, Failure> {
    File::create(path)
        .map(BufWriter::new)
        .with_context(|| format!("creating {}", path.display()))
        .map_err(runtime)
}

pub fn validate(args: ValidateArgs) -> Outcome {
    let manifest = manifest(&args.manifest, args.no_verify_images)?;
    let models: BTreeSet<&str> = manifest.iter().map(|i| i.editing_model.as_str()).collect();
    let tasks: BTreeSet<_> = manifest.iter().map(|i| i.task).collect();
    let tiers = manifest.tier_counts();
    let mut lines = vec![json!({
        "kind": "manifest",
        "path": args.manifest,
        "items": manifest.len(),
        "models": models.len(),
        "tasks": tasks.len(),
        "tiers": tiers,
    })];
    if let Some(path) = &args.ratings {
        let ratings = load_ratings(path)?;
        check_ratings_against(&ratings, &manifest)?;
        let subjects: BTreeSet<&str> = ratings.iter().map(|r| r.subject_id.as_str()).collect();
        let items: BTreeSet<&str> = ratings.iter().map(|r| r.item_id.as_str()).collect();
        lines.push(json!({
            "kind": "ratings",
            "path": path,
            "records": ratings.len(),
            "subjects": subjects.len(),
            "items": items.len(),
        }));
    }
    emit(&args.output, &lines, || {
        let mut text = format!(
            "manifest {}: {} items, {} models, {} tasks ({} high-level, {} low-level)\n",
            args.manifest.display(),
            manifest.len(),
            models.len(),
            tasks.len(),
            tiers.values().next().copied().unwrap_or(0),
            tiers.values().nth(1).copied().unwrap_or(0),
        );
        if let Some(r) = lines.get(1) {
            text.push_str(&format!(
                "ratings {}: {} records from {} subjects over {} items\n",
                args.ratings.as_ref().unwrap().display(),
                r["records"],
                r["subjects"],
                r["items"]
            ));
        }
        text
    })
}

pub fn mos(args: MosArgs) -> Outcome {
    let ratings = load_ratings(&args.ratings)?;
    if let Some(path) = &args.manifest {
        let manifest = manifest(path, true)?;
        check_ratings_against(&ratings, &manifest)?;
    }
    let policy = OutlierPolicy {
        normal_k: args.normal_k,
        nonnormal_k: args.nonnormal_k,
        subject_reject_fraction: args.subject_reject_fraction,
        normality_kurtosis_band: args.normality_kurtosis_band,
    };
    let scope = match args.normalization {
        Normalization::PerDimension => NormalizationScope::PerDimension,
        Normalization::Pooled => NormalizationScope::Pooled,
    };
    let result = process_ratings(&ratings, &policy, scope)?;

    let mut out = create(&args.mos_out)?;
    write_mos_records(&result.mos, &mut out)
        .and_then(|_| out.flush())
        .context("writing MOS file")
        .map_err(runtime)?;
    if let Some(path) = &args.qa_out {
        let mut out = create(path)?;
        write_qa(&result.qa, &mut out)
            .and_then(|_| out.flush())
            .context("writing QA file")
            .map_err(runtime)?;
    }
    let s = &result.summary;
    let mut line = serde_json::to_value(s).expect("summary serializes");
    line.as_object_mut().unwrap().insert("kind".into(), json!("removal-summary"));
    line["policy"] = serde_json::to_value(policy).expect("policy serializes");
    emit(&args.output, &[line], || {
        format!(
            "{} records from {} subjects over {} items\n\
             outlier ratings removed: {}\n\
             subjects excluded: {} ({} ratings)\n\
             removed: {} of {} ratings ({:.2}%)\n\
             item-dimensions without valid ratings: {}\n",
            s.total_records,
            s.subjects,
            s.items,
            s.flagged_ratings,
            s.excluded_subjects.len(),
            s.excluded_subject_ratings,
            s.removed_ratings,
            s.total_ratings,
            s.removed_percent,
            s.no_valid.len(),
        )
    })
}

struct Truth {
    manifest: Manifest,
    mos: MosTable,
    qa: Vec<QaConsensus>,
}

fn truth(args: &ReportArgs) -> Result<Truth, Failure> {
    let manifest = manifest(&args.manifest, args.no_verify_images)?;
    let mos = load_mos_table(&args.mos)?;
    let qa = match &args.qa {
        Some(path) => load_qa(path)?,
        None => Vec::new(),
    };
    Ok(Truth { manifest, mos, qa })
}

fn options(weights: editbench_core::leaderboard::OverallWeights, floor: f64) -> Result<LeaderboardOptions, Failure> {
    if !(floor > 0.0 && floor.is_finite()) {
        return Err(invalid(anyhow!("--floor must be positive, got {floor}")));
    }
    Ok(LeaderboardOptions { weights, floor })
}

fn builtin(metric: MetricKind, manifest: &Manifest) -> Result<MetricRun, Failure> {
    let run = run_builtin(metric, manifest, &MetricParams::default());
    if let Some(first) = run.failures.first() {
        return Err(invalid(anyhow!(
            "{metric}: {} item(s) could not be scored; first: {}: {}",
            run.failures.len(),
            first.item_id,
            first.error
        )));
    }
    Ok(run)
}

fn runtime_for_network() -> Result<tokio::runtime::Runtime, Failure> {
    tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .context("starting async runtime")
        .map_err(runtime)
}

fn remote(url: &str, args: &RemoteArgs, manifest: &Manifest) -> Result<MetricRun, Failure> {
    let config = RemoteConfig {
        endpoint: url.trim_end_matches('/').to_string(),
        dimensions: args.dimensions.clone(),
        include_qa: !args.no_qa,
        concurrency: args.concurrency.max(1),
        timeout: Duration::from_secs(args.timeout_secs),
        retries: args.retries,
        backoff: Duration::from_millis(args.backoff_ms),
        metric_name: args.metric_name.clone(),
    };
    runtime_for_network()?
        .block_on(run_remote(manifest, &config))
        .map_err(runtime)
}

fn report(run: &MetricRun, truth: &Truth, args: &ReportArgs) -> Result<editbench_core::leaderboard::AlignmentReport, Failure> {
    let options = options(args.weights, args.floor)?;
    align_metric(run, &truth.mos, &truth.qa, &truth.manifest, args.slice.slicing(), &options).map_err(invalid)
}

pub fn eval(args: EvalArgs) -> Outcome {
    let truth = truth(&args.report)?;
    let run = if let Some(metric) = args.source.metric {
        builtin(metric, &truth.manifest)?
    } else if let Some(path) = &args.source.scores {
        load_score_file(path, &truth.manifest)?
    } else if let Some(url) = &args.source.remote {
        remote(url, &args.remote, &truth.manifest)?
    } else {
        unreachable!("clap requires one score source")
    };
    if let Some(path) = &args.save_scores {
        let mut out = create(path)?;
        run.write_score_file(&mut out)
            .and_then(|_| out.flush())
            .context("writing score file")
            .map_err(runtime)?;
    }
    let report = report(&run, &truth, &args.report)?;
    emit(&args.report.output, &alignment_json(&report), || alignment_table(&report))
}

pub fn eval_baseline(args: BaselineArgs) -> Outcome {
    let truth = truth(&args.report)?;
    let metrics = if args.metric.is_empty() {
        MetricKind::ALL.to_vec()
    } else {
        args.metric.clone()
    };
    let mut lines = Vec::new();
    let mut tables = Vec::new();
    for metric in metrics {
        let run = builtin(metric, &truth.manifest)?;
        let report = report(&run, &truth, &args.report)?;
        lines.extend(alignment_json(&report));
        tables.push(alignment_table(&report));
    }
    emit(&args.report.output, &lines, || tables.join("\n"))
}

pub fn leaderboard(args: LeaderboardArgs) -> Outcome {
    let manifest = manifest(&args.manifest, args.no_verify_images)?;
    let options = options(args.weights, args.floor)?;
    let board = match (&args.scores, &args.mos) {
        (Some(path), _) => {
            let run = load_score_file(path, &manifest)?;
            aggregate_run(&run, &manifest, &options).map_err(invalid)?
        }
        (None, Some(mos)) => {
            let mos = load_mos_table(mos)?;
            let qa = match &args.qa {
                Some(path) => load_qa(path)?,
                None => Vec::new(),
            };
            build_leaderboard(&mos, &qa, &manifest, &options).map_err(invalid)?
        }
        (None, None) => unreachable!("clap requires --mos or --scores"),
    };
    if board.floored > 0 {
        tracing::warn!(count = board.floored, floor = options.floor, "non-positive model means lifted to the floor");
    }
    emit(&args.output, &leaderboard_json(&board), || leaderboard_table(&board))
}

pub fn describe(args: DescribeArgs) -> Outcome {
    let manifest = manifest(&args.manifest, args.no_verify_images)?;
    let mos = load_mos_table(&args.mos)?;
    std::fs::create_dir_all(&args.out_dir)
        .with_context(|| format!("creating {}", args.out_dir.display()))
        .map_err(runtime)?;
    let files = export_descriptives(&mos, &manifest, &args.out_dir).map_err(runtime)?;
    let mut out = io::stdout().lock();
    for path in files {
        writeln!(out, "{}", json!({ "kind": "file", "path": path })).map_err(runtime)?;
    }
    Ok(())
}

async fn shutdown_signal() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    let term = async {
        match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            Ok(mut s) => {
                s.recv().await;
            }
            Err(_) => std::future::pending::<()>().await,
        }
    };
    #[cfg(not(unix))]
    let term = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {},
        _ = term => {},
    }
    tracing::info!("shutting down");
}

fn announce(kind: &str, addr: std::net::SocketAddr) -> Outcome {
    let mut out = io::stdout().lock();
    writeln!(out, "{}", json!({ "kind": kind, "url": format!("http://{addr}") }))
        .and_then(|_| out.flush())
        .map_err(runtime)
}

pub fn serve(args: ServeArgs) -> Outcome {
    let config = ServiceConfig::load(&args.config).map_err(|e| match e {
        ConfigError::Read { .. } => runtime(e),
        _ => invalid(e),
    })?;
    runtime_for_network()?.block_on(async move {
        let (listener, store) = editbench_campaign::bind(&config).await.map_err(|e| match e {
            BindError::Store(_) | BindError::Listen(..) => runtime(e),
        })?;
        announce("listening", listener.local_addr().map_err(runtime)?)?;
        editbench_campaign::api::serve(listener, store.clone(), config.campaign.clone(), shutdown_signal())
            .await
            .map_err(runtime)?;
        store.snapshot_all().map_err(runtime)
    })
}

pub fn mock_scorer(args: MockArgs) -> Outcome {
    let scorer = match &args.scores {
        Some(path) => {
            let manifest = manifest(args.manifest.as_deref().expect("clap requires --manifest"), false)?;
            let run = load_score_file(path, &manifest)?;
            MockScorer::table(MockScores::from_run(&run, &manifest).map_err(invalid)?)
        }
        None => MockScorer::constant(args.constant),
    };
    runtime_for_network()?.block_on(async move {
        let listener = tokio::net::TcpListener::bind(args.bind)
            .await
            .with_context(|| format!("binding {}", args.bind))
            .map_err(runtime)?;
        announce("listening", listener.local_addr().map_err(runtime)?)?;
        editbench_core::scorer::mock::serve(scorer, listener, shutdown_signal())
            .await
            .map_err(runtime)
    })
}
