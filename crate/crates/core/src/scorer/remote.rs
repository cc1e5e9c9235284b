//! Client for scoring services.
//!
//! Each (item, dimension) pair becomes one `POST {endpoint}/v1/score` and each
//! item one `POST {endpoint}/v1/qa` when answers are requested. Requests
//! carry both images base64-encoded plus the editing instruction. At most
//! `concurrency` requests are in flight; failures other than malformed or
//! out-of-range responses are retried with exponential backoff.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use base64::Engine;
use futures::stream::{self, StreamExt};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{ItemFailure, MetricRun, RunSource};
use crate::dataset::{BenchmarkItem, Dimension, Manifest};

pub const SCORE_PATH: &str = "/v1/score";
pub const QA_PATH: &str = "/v1/qa";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRequest {
    /// Base64 of the source image file.
    pub source_image: String,
    /// Base64 of the edited image file.
    pub edited_image: String,
    pub instruction: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dimension: Option<Dimension>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub qa_question: Option<String>,
}

impl ScoreRequest {
    /// Exactly one of `dimension` and `qa_question` must be set.
    pub fn validate(&self) -> Result<(), String> {
        match (&self.dimension, &self.qa_question) {
            (Some(_), None) | (None, Some(_)) => Ok(()),
            (Some(_), Some(_)) => Err("request sets both dimension and qa_question".into()),
            (None, None) => Err("request sets neither dimension nor qa_question".into()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreResponse {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer: Option<bool>,
    #[serde(default)]
    pub latency_ms: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RemoteConfig {
    /// Base URL, e.g. `http://127.0.0.1:9000`.
    pub endpoint: String,
    pub dimensions: Vec<Dimension>,
    pub include_qa: bool,
    pub concurrency: usize,
    pub timeout: Duration,
    /// Retries after the first attempt.
    pub retries: usize,
    /// Delay before the first retry; doubles on every further retry.
    pub backoff: Duration,
    pub metric_name: String,
}

impl RemoteConfig {
    pub fn new(endpoint: impl Into<String>) -> Self {
        RemoteConfig {
            endpoint: endpoint.into(),
            dimensions: Dimension::ALL.to_vec(),
            include_qa: true,
            concurrency: 8,
            timeout: Duration::from_secs(60),
            retries: 3,
            backoff: Duration::from_secs(1),
            metric_name: "remote".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FailureKind {
    #[error("request timed out")]
    Timeout,
    #[error("HTTP status {0}")]
    Status(u16),
    #[error("transport error: {0}")]
    Transport(String),
    #[error("malformed response: {0}")]
    MalformedResponse(String),
    #[error("score {0} outside [0, 100]")]
    ScoreOutOfRange(f64),
    #[error("cannot read image {path}: {reason}")]
    Image { path: PathBuf, reason: String },
}

impl FailureKind {
    fn retryable(&self) -> bool {
        matches!(
            self,
            FailureKind::Timeout | FailureKind::Status(_) | FailureKind::Transport(_)
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RequestFailure {
    pub item_id: String,
    /// `None` for yes/no requests.
    pub dimension: Option<Dimension>,
    pub kind: FailureKind,
}

#[derive(Debug, Error)]
pub enum RemoteError {
    #[error("invalid endpoint or client setup: {0}")]
    Setup(String),
    #[error("{} request(s) failed; first: item {} ({}): {}", .failures.len(), .failures[0].item_id, .failures[0].dimension.map(|d| d.as_str()).unwrap_or("qa"), .failures[0].kind)]
    Incomplete {
        failures: Vec<RequestFailure>,
        /// Everything that did succeed.
        partial: Box<MetricRun>,
    },
}

#[derive(Debug, Clone)]
enum Job {
    Score(usize, Dimension),
    Qa(usize),
}

enum Outcome {
    Score(f64),
    Answer(bool),
}

struct Shared {
    client: reqwest::Client,
    endpoint: String,
    config: RemoteConfig,
    retries: AtomicUsize,
    latency_ms: std::sync::Mutex<f64>,
}

fn encode_file(path: &std::path::Path) -> Result<String, FailureKind> {
    std::fs::read(path)
        .map(|bytes| base64::engine::general_purpose::STANDARD.encode(bytes))
        .map_err(|e| FailureKind::Image {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })
}

fn build_request(manifest: &Manifest, item: &BenchmarkItem, job: &Job) -> Result<ScoreRequest, FailureKind> {
    let (dimension, qa_question) = match job {
        Job::Score(_, d) => (Some(*d), None),
        Job::Qa(_) => (None, Some(item.qa_question.clone())),
    };
    Ok(ScoreRequest {
        source_image: encode_file(&manifest.resolve(&item.source_image))?,
        edited_image: encode_file(&manifest.resolve(&item.edited_image))?,
        instruction: item.prompts.instruction.clone(),
        dimension,
        qa_question,
    })
}

async fn attempt(shared: &Shared, path: &str, body: &ScoreRequest, job: &Job) -> Result<Outcome, FailureKind> {
    let url = format!("{}{}", shared.endpoint, path);
    let response = shared
        .client
        .post(url)
        .json(body)
        .send()
        .await
        .map_err(|e| {
            if e.is_timeout() {
                FailureKind::Timeout
            } else {
                FailureKind::Transport(e.to_string())
            }
        })?;
    let status = response.status();
    if status != reqwest::StatusCode::OK {
        return Err(FailureKind::Status(status.as_u16()));
    }
    let bytes = response.bytes().await.map_err(|e| {
        if e.is_timeout() {
            FailureKind::Timeout
        } else {
            FailureKind::Transport(e.to_string())
        }
    })?;
    let parsed: ScoreResponse = serde_json::from_slice(&bytes)
        .map_err(|e| FailureKind::MalformedResponse(e.to_string()))?;
    *shared.latency_ms.lock().unwrap() += parsed.latency_ms;
    match job {
        Job::Score(..) => {
            let score = parsed
                .score
                .ok_or_else(|| FailureKind::MalformedResponse("missing `score`".into()))?;
            if !score.is_finite() || !(0.0..=100.0).contains(&score) {
                return Err(FailureKind::ScoreOutOfRange(score));
            }
            Ok(Outcome::Score(score))
        }
        Job::Qa(_) => parsed
            .answer
            .map(Outcome::Answer)
            .ok_or_else(|| FailureKind::MalformedResponse("missing `answer`".into())),
    }
}

async fn run_job(shared: &Shared, manifest: &Manifest, job: &Job) -> Result<Outcome, FailureKind> {
    let item = match job {
        Job::Score(i, _) | Job::Qa(i) => &manifest.items[*i],
    };
    let body = build_request(manifest, item, job)?;
    let path = match job {
        Job::Score(..) => SCORE_PATH,
        Job::Qa(_) => QA_PATH,
    };
    let mut delay = shared.config.backoff;
    let mut tries = 0;
    loop {
        match attempt(shared, path, &body, job).await {
            Ok(outcome) => return Ok(outcome),
            Err(kind) if kind.retryable() && tries < shared.config.retries => {
                tracing::debug!(item = %item.item_id, error = %kind, "retrying");
                tries += 1;
                shared.retries.fetch_add(1, Ordering::Relaxed);
                tokio::time::sleep(delay).await;
                delay *= 2;
            }
            Err(kind) => return Err(kind),
        }
    }
}

/// Queries a scoring service for every item of the manifest. Results are
/// merged by key, so arrival order never affects the run.
pub async fn run_remote(manifest: &Manifest, config: &RemoteConfig) -> Result<MetricRun, RemoteError> {
    if config.concurrency == 0 {
        return Err(RemoteError::Setup("concurrency must be at least 1".into()));
    }
    let endpoint = config.endpoint.trim_end_matches('/').to_string();
    reqwest::Url::parse(&endpoint).map_err(|e| RemoteError::Setup(format!("{endpoint}: {e}")))?;
    let client = reqwest::Client::builder()
        .timeout(config.timeout)
        .build()
        .map_err(|e| RemoteError::Setup(e.to_string()))?;
    let shared = Arc::new(Shared {
        client,
        endpoint: endpoint.clone(),
        config: config.clone(),
        retries: AtomicUsize::new(0),
        latency_ms: std::sync::Mutex::new(0.0),
    });

    let mut jobs = Vec::new();
    for idx in 0..manifest.items.len() {
        for &dimension in &config.dimensions {
            jobs.push(Job::Score(idx, dimension));
        }
        if config.include_qa {
            jobs.push(Job::Qa(idx));
        }
    }
    let total_requests = jobs.len();

    let started = chrono::Utc::now();
    let clock = Instant::now();
    let results: Vec<(Job, Result<Outcome, FailureKind>)> = stream::iter(jobs)
        .map(|job| {
            let shared = Arc::clone(&shared);
            async move {
                let outcome = run_job(&shared, manifest, &job).await;
                (job, outcome)
            }
        })
        .buffer_unordered(config.concurrency)
        .collect()
        .await;

    let mut run = MetricRun::new(config.metric_name.clone(), RunSource::Remote);
    let mut failures = BTreeMap::new();
    for (job, outcome) in results {
        let (idx, dimension) = match job {
            Job::Score(i, d) => (i, Some(d)),
            Job::Qa(i) => (i, None),
        };
        let item_id = manifest.items[idx].item_id.clone();
        match outcome {
            Ok(Outcome::Score(score)) => {
                run.predictions
                    .insert((item_id, dimension.expect("score job")), score);
            }
            Ok(Outcome::Answer(answer)) => {
                run.qa_predictions.insert(item_id, answer);
            }
            Err(kind) => {
                failures.insert((item_id, dimension), kind);
            }
        }
    }
    run.retries = shared.retries.load(Ordering::Relaxed);
    run.metadata.insert("endpoint".into(), endpoint);
    run.metadata.insert("started_at".into(), started.to_rfc3339());
    run.metadata
        .insert("finished_at".into(), chrono::Utc::now().to_rfc3339());
    run.metadata
        .insert("elapsed_ms".into(), clock.elapsed().as_millis().to_string());
    run.metadata.insert("requests".into(), total_requests.to_string());
    run.metadata
        .insert("concurrency".into(), config.concurrency.to_string());
    run.metadata.insert("retries".into(), run.retries.to_string());
    let latency = *shared.latency_ms.lock().unwrap();
    if total_requests > 0 {
        run.metadata.insert(
            "mean_latency_ms".into(),
            format!("{:.3}", latency / total_requests as f64),
        );
    }

    if failures.is_empty() {
        return Ok(run);
    }
    let failures: Vec<RequestFailure> = failures
        .into_iter()
        .map(|((item_id, dimension), kind)| RequestFailure {
            item_id,
            dimension,
            kind,
        })
        .collect();
    run.failures = failures
        .iter()
        .map(|f| ItemFailure {
            item_id: f.item_id.clone(),
            dimension: f.dimension,
            error: f.kind.to_string(),
        })
        .collect();
    Err(RemoteError::Incomplete {
        failures,
        partial: Box::new(run),
    })
}
