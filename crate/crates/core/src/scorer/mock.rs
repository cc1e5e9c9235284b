//! A deterministic scoring service speaking the `/v1/score` and `/v1/qa`
//! protocol. Scores are either constant or looked up by request content
//! (digests of both images plus the instruction), so a score file can be
//! served back exactly.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::Engine;
use sha2::{Digest, Sha256};
use tokio::net::TcpListener;
use tokio::sync::oneshot;

use super::remote::{ScoreRequest, ScoreResponse, QA_PATH, SCORE_PATH};
use super::MetricRun;
use crate::dataset::{Dimension, Manifest};

/// Content key of a request: sha256(source) | sha256(edited) | sha256(instruction).
pub fn content_key(source: &[u8], edited: &[u8], instruction: &str) -> String {
    let mut out = String::with_capacity(3 * 64 + 2);
    for part in [source, edited, instruction.as_bytes()] {
        for byte in Sha256::digest(part) {
            out.push_str(&format!("{byte:02x}"));
        }
        out.push('|');
    }
    out.pop();
    out
}

/// What the mock answers for one item.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Entry {
    pub scores: [Option<f64>; 3],
    pub answer: Option<bool>,
}

#[derive(Debug, Clone)]
pub enum MockScores {
    Constant { score: f64, answer: bool },
    Table(HashMap<String, Entry>),
}

impl MockScores {
    /// Serves the predictions of `run`, keyed by the content of each item.
    pub fn from_run(run: &MetricRun, manifest: &Manifest) -> std::io::Result<Self> {
        let mut table: HashMap<String, Entry> = HashMap::new();
        for item in &manifest.items {
            let source = std::fs::read(manifest.resolve(&item.source_image))?;
            let edited = std::fs::read(manifest.resolve(&item.edited_image))?;
            let key = content_key(&source, &edited, &item.prompts.instruction);
            let mut entry = Entry::default();
            for dimension in Dimension::ALL {
                entry.scores[dimension.index()] = run.prediction(&item.item_id, dimension);
            }
            entry.answer = run.qa_predictions.get(&item.item_id).copied();
            if let Some(previous) = table.get(&key) {
                if previous.scores != entry.scores || previous.answer != entry.answer {
                    return Err(std::io::Error::new(
                        std::io::ErrorKind::InvalidData,
                        format!(
                            "item `{}` has the same images and instruction as another item but different scores",
                            item.item_id
                        ),
                    ));
                }
            }
            table.insert(key, entry);
        }
        Ok(MockScores::Table(table))
    }
}

#[derive(Debug, Clone)]
pub struct MockScorer {
    pub scores: MockScores,
    /// The first this-many requests are answered with HTTP 503.
    pub fail_first: usize,
    /// Held before answering each request.
    pub delay: Duration,
}

impl MockScorer {
    pub fn constant(score: f64) -> Self {
        MockScorer {
            scores: MockScores::Constant {
                score,
                answer: true,
            },
            fail_first: 0,
            delay: Duration::ZERO,
        }
    }

    pub fn table(scores: MockScores) -> Self {
        MockScorer {
            scores,
            fail_first: 0,
            delay: Duration::ZERO,
        }
    }
}

struct MockState {
    scorer: MockScorer,
    requests: AtomicUsize,
    in_flight: AtomicUsize,
    max_in_flight: AtomicUsize,
}

impl MockState {
    fn new(scorer: MockScorer) -> Arc<Self> {
        Arc::new(MockState {
            scorer,
            requests: AtomicUsize::new(0),
            in_flight: AtomicUsize::new(0),
            max_in_flight: AtomicUsize::new(0),
        })
    }
}

pub struct MockHandle {
    pub addr: SocketAddr,
    requests: Arc<MockState>,
    shutdown: Option<oneshot::Sender<()>>,
    task: tokio::task::JoinHandle<()>,
}

impl MockHandle {
    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    /// Requests received so far, including injected failures.
    pub fn requests(&self) -> usize {
        self.requests.requests.load(Ordering::SeqCst)
    }

    /// Most requests ever being handled at the same time.
    pub fn max_in_flight(&self) -> usize {
        self.requests.max_in_flight.load(Ordering::SeqCst)
    }

    pub async fn stop(mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        let _ = (&mut self.task).await;
    }
}

fn error(status: StatusCode, message: &str) -> Response {
    (status, Json(serde_json::json!({ "error": message }))).into_response()
}

#[allow(clippy::result_large_err)]
fn decode(field: &str) -> Result<Vec<u8>, Response> {
    base64::engine::general_purpose::STANDARD
        .decode(field)
        .map_err(|e| error(StatusCode::BAD_REQUEST, &format!("bad base64: {e}")))
}

#[allow(clippy::result_large_err)]
fn lookup(state: &MockState, req: &ScoreRequest) -> Result<ScoreResponse, Response> {
    match &state.scorer.scores {
        MockScores::Constant { score, answer } => Ok(ScoreResponse {
            score: req.dimension.map(|_| *score),
            answer: req.qa_question.as_ref().map(|_| *answer),
            latency_ms: 0.0,
        }),
        MockScores::Table(table) => {
            let key = content_key(&decode(&req.source_image)?, &decode(&req.edited_image)?, &req.instruction);
            let entry = table
                .get(&key)
                .ok_or_else(|| error(StatusCode::NOT_FOUND, "unknown item"))?;
            let response = match req.dimension {
                Some(d) => ScoreResponse {
                    score: Some(entry.scores[d.index()].ok_or_else(|| {
                        error(StatusCode::NOT_FOUND, "no score for dimension")
                    })?),
                    answer: None,
                    latency_ms: 0.0,
                },
                None => ScoreResponse {
                    score: None,
                    answer: Some(entry.answer.ok_or_else(|| error(StatusCode::NOT_FOUND, "no answer"))?),
                    latency_ms: 0.0,
                },
            };
            Ok(response)
        }
    }
}

async fn handle(state: Arc<MockState>, req: ScoreRequest, expect_qa: bool) -> Response {
    let seen = state.requests.fetch_add(1, Ordering::SeqCst);
    let now = state.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
    state.max_in_flight.fetch_max(now, Ordering::SeqCst);
    if !state.scorer.delay.is_zero() {
        tokio::time::sleep(state.scorer.delay).await;
    }
    let response = respond(&state, seen, req, expect_qa);
    state.in_flight.fetch_sub(1, Ordering::SeqCst);
    response
}

fn respond(state: &MockState, seen: usize, req: ScoreRequest, expect_qa: bool) -> Response {
    if seen < state.scorer.fail_first {
        return error(StatusCode::SERVICE_UNAVAILABLE, "injected failure");
    }
    if let Err(msg) = req.validate() {
        return error(StatusCode::BAD_REQUEST, &msg);
    }
    if expect_qa != req.qa_question.is_some() {
        return error(StatusCode::BAD_REQUEST, "wrong endpoint for request kind");
    }
    match lookup(state, &req) {
        Ok(resp) => Json(resp).into_response(),
        Err(resp) => resp,
    }
}

fn router(state: Arc<MockState>) -> Router {
    Router::new()
        .route(
            SCORE_PATH,
            post(|State(s): State<Arc<MockState>>, Json(req): Json<ScoreRequest>| handle(s, req, false)),
        )
        .route(
            QA_PATH,
            post(|State(s): State<Arc<MockState>>, Json(req): Json<ScoreRequest>| handle(s, req, true)),
        )
        .route("/health", get(|| async { "ok" }))
        .with_state(state)
}

/// Binds `addr` (port 0 for any) and serves in a background task.
pub async fn spawn(scorer: MockScorer, addr: SocketAddr) -> std::io::Result<MockHandle> {
    let listener = TcpListener::bind(addr).await?;
    let addr = listener.local_addr()?;
    let state = MockState::new(scorer);
    let (tx, rx) = oneshot::channel::<()>();
    let app = router(Arc::clone(&state));
    let task = tokio::spawn(async move {
        let _ = axum::serve(listener, app)
            .with_graceful_shutdown(async {
                let _ = rx.await;
            })
            .await;
    });
    Ok(MockHandle {
        addr,
        requests: state,
        shutdown: Some(tx),
        task,
    })
}

/// Serves on an already-bound listener until `shutdown` resolves.
pub async fn serve<F>(scorer: MockScorer, listener: TcpListener, shutdown: F) -> std::io::Result<()>
where
    F: std::future::Future<Output = ()> + Send + 'static,
{
    axum::serve(listener, router(MockState::new(scorer)))
        .with_graceful_shutdown(shutdown)
        .await
}
