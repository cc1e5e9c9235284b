//! Campaign state as a fold over events.
//!
//! Commands (`decide_*`) inspect the state and either refuse or return the
//! event to persist; `apply` is the only mutation. Replaying the persisted
//! events through `apply` therefore reproduces the live state exactly.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::PathBuf;

use chrono::{DateTime, Utc};
use editbench_core::dataset::{validate_scores, Dimension, DimensionScores, RatingRecord};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::config::CampaignConfig;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CampaignError {
    #[error("invalid campaign config: {0}")]
    InvalidConfig(String),
    #[error("invalid campaign id `{0}` (use 1-64 characters from [A-Za-z0-9_-])")]
    InvalidId(String),
    #[error("{0}")]
    InvalidManifest(String),
    #[error("{0}")]
    InvalidRequest(String),
    #[error("conflict: {0}")]
    Conflict(String),
    #[error("unknown campaign `{0}`")]
    UnknownCampaign(String),
    #[error("unknown session `{0}`")]
    UnknownSession(String),
    #[error("subject `{0}` has no items left to rate")]
    NothingToAssign(String),
    #[error("campaign is complete")]
    CampaignComplete,
    #[error("session {session_id} belongs to subject `{expected}`, not `{got}`")]
    SubjectMismatch {
        session_id: String,
        expected: String,
        got: String,
    },
    #[error("{dimension} score {value} outside [1, 5]")]
    InvalidScore { dimension: Dimension, value: f64 },
    #[error("subject `{subject_id}` already rated item `{item_id}`")]
    DuplicateRating { subject_id: String, item_id: String },
    #[error("out-of-order submission: expected {}, got `{got}`", expected.as_deref().map_or("no further items".to_string(), |e| format!("`{e}`")))]
    OutOfOrderSubmission { expected: Option<String>, got: String },
    #[error("session `{0}` has expired")]
    SessionExpired(String),
    #[error("storage: {0}")]
    Storage(String),
}

impl CampaignError {
    /// Stable machine-readable name, used as the `error` field of API responses.
    pub fn code(&self) -> &'static str {
        match self {
            CampaignError::InvalidConfig(_) => "InvalidConfig",
            CampaignError::InvalidId(_) => "InvalidId",
            CampaignError::InvalidManifest(_) => "InvalidManifest",
            CampaignError::InvalidRequest(_) => "InvalidRequest",
            CampaignError::Conflict(_) => "Conflict",
            CampaignError::UnknownCampaign(_) => "UnknownCampaign",
            CampaignError::UnknownSession(_) => "UnknownSession",
            CampaignError::NothingToAssign(_) => "NothingToAssign",
            CampaignError::CampaignComplete => "CampaignComplete",
            CampaignError::SubjectMismatch { .. } => "SubjectMismatch",
            CampaignError::InvalidScore { .. } => "InvalidScore",
            CampaignError::DuplicateRating { .. } => "DuplicateRating",
            CampaignError::OutOfOrderSubmission { .. } => "OutOfOrderSubmission",
            CampaignError::SessionExpired(_) => "SessionExpired",
            CampaignError::Storage(_) => "Storage",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SessionStatus {
    Open,
    Complete,
    Expired,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Session {
    pub session_id: String,
    pub subject_id: String,
    /// Ordinal of this session among the subject's sessions, from 0.
    pub index: usize,
    pub items: Vec<String>,
    pub cursor: usize,
    pub status: SessionStatus,
    pub opened_at: DateTime<Utc>,
    pub last_activity: DateTime<Utc>,
}

impl Session {
    pub fn current_item(&self) -> Option<&str> {
        self.items.get(self.cursor).map(String::as_str)
    }

    fn unanswered(&self) -> &[String] {
        &self.items[self.cursor..]
    }
}

/// A rating as persisted in the log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredRating {
    pub subject_id: String,
    pub item_id: String,
    pub scores: DimensionScores,
    pub qa_answer: bool,
    pub submitted_at: DateTime<Utc>,
}

impl From<&StoredRating> for RatingRecord {
    fn from(r: &StoredRating) -> Self {
        RatingRecord {
            subject_id: r.subject_id.clone(),
            item_id: r.item_id.clone(),
            scores: r.scores,
            qa_answer: r.qa_answer,
            submitted_at: r.submitted_at,
        }
    }
}

/// A rating as sent by a client; the server stamps the time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatingSubmission {
    pub subject_id: String,
    pub item_id: String,
    pub quality: f64,
    pub alignment: f64,
    pub preservation: f64,
    pub qa_answer: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "kebab-case")]
pub enum Event {
    Created {
        campaign_id: String,
        config: CampaignConfig,
        manifest_path: PathBuf,
        items: Vec<String>,
        at: DateTime<Utc>,
    },
    SessionOpened {
        session_id: String,
        subject_id: String,
        items: Vec<String>,
        at: DateTime<Utc>,
    },
    RatingSubmitted {
        session_id: String,
        rating: StoredRating,
    },
    SessionExpired {
        session_id: String,
        at: DateTime<Utc>,
    },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SubjectState {
    pub sessions_opened: usize,
    pub open_session: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignState {
    pub campaign_id: String,
    pub config: CampaignConfig,
    pub manifest_path: PathBuf,
    pub created_at: DateTime<Utc>,
    /// Item ids in manifest order.
    pub items: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, usize>,
    /// Raters still needed per item.
    pub remaining: Vec<usize>,
    /// Unanswered placements of each item in open sessions.
    pub pending: Vec<usize>,
    pub raters: Vec<BTreeSet<String>>,
    pub sessions: BTreeMap<String, Session>,
    pub subjects: BTreeMap<String, SubjectState>,
    pub ratings: Vec<StoredRating>,
    /// Number of events folded in so far.
    pub seq: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Progress {
    pub campaign_id: String,
    pub items: usize,
    pub raters_per_item: usize,
    pub required: usize,
    pub submitted: usize,
    pub remaining: usize,
    pub items_complete: usize,
    pub open_sessions: usize,
    pub subjects: usize,
    pub complete: bool,
}

/// What `decide_open` wants done.
#[derive(Debug, Clone, PartialEq)]
pub enum OpenDecision {
    /// The subject already has an open session; hand it back.
    Resume(String),
    Open(Event),
}

pub fn valid_id(id: &str) -> bool {
    (1..=64).contains(&id.len()) && id.bytes().all(|b| b.is_ascii_alphanumeric() || b == b'-' || b == b'_')
}

fn corrupt(what: impl Into<String>) -> CampaignError {
    CampaignError::Storage(format!("inconsistent event: {}", what.into()))
}

impl CampaignState {
    /// Builds the state from its first event.
    pub fn from_created(event: &Event) -> Result<Self, CampaignError> {
        let Event::Created {
            campaign_id,
            config,
            manifest_path,
            items,
            at,
        } = event
        else {
            return Err(corrupt("log does not start with `created`"));
        };
        let n = items.len();
        let mut state = CampaignState {
            campaign_id: campaign_id.clone(),
            config: config.clone(),
            manifest_path: manifest_path.clone(),
            created_at: *at,
            items: items.clone(),
            index: HashMap::new(),
            remaining: vec![config.raters_per_item; n],
            pending: vec![0; n],
            raters: vec![BTreeSet::new(); n],
            sessions: BTreeMap::new(),
            subjects: BTreeMap::new(),
            ratings: Vec::new(),
            seq: 1,
        };
        state.rebuild_index();
        if state.index.len() != n {
            return Err(corrupt("duplicate item ids"));
        }
        Ok(state)
    }

    /// Restores the derived lookup after deserializing a snapshot.
    pub fn rebuild_index(&mut self) {
        self.index = self.items.iter().enumerate().map(|(i, id)| (id.clone(), i)).collect();
    }

    pub fn item_index(&self, item_id: &str) -> Option<usize> {
        self.index.get(item_id).copied()
    }

    pub fn is_complete(&self) -> bool {
        self.remaining.iter().all(|&r| r == 0)
    }

    pub fn session(&self, session_id: &str) -> Option<&Session> {
        self.sessions.get(session_id)
    }

    pub fn progress(&self) -> Progress {
        let required = self.items.len() * self.config.raters_per_item;
        Progress {
            campaign_id: self.campaign_id.clone(),
            items: self.items.len(),
            raters_per_item: self.config.raters_per_item,
            required,
            submitted: self.ratings.len(),
            remaining: self.remaining.iter().sum(),
            items_complete: self.remaining.iter().filter(|&&r| r == 0).count(),
            open_sessions: self.sessions.values().filter(|s| s.status == SessionStatus::Open).count(),
            subjects: self.subjects.len(),
            complete: self.is_complete(),
        }
    }

    /// Expiry events for every open session idle since before `now - idle_timeout`.
    pub fn decide_expiries(&self, now: DateTime<Utc>) -> Vec<Event> {
        let idle = chrono::Duration::from_std(self.config.idle_timeout()).unwrap_or(chrono::Duration::MAX);
        self.sessions
            .values()
            .filter(|s| s.status == SessionStatus::Open && now - s.last_activity >= idle)
            .map(|s| Event::SessionExpired {
                session_id: s.session_id.clone(),
                at: now,
            })
            .collect()
    }

    /// Greedy assignment: the items with the most open slots
    /// (remaining minus pending) that the subject has not rated, up to the
    /// session cap, ties broken by manifest order, then shuffled.
    pub fn decide_open(&self, subject_id: &str, now: DateTime<Utc>) -> Result<OpenDecision, CampaignError> {
        if subject_id.is_empty() {
            return Err(CampaignError::InvalidRequest("subject_id must not be empty".into()));
        }
        if let Some(open) = self.subjects.get(subject_id).and_then(|s| s.open_session.as_ref()) {
            return Ok(OpenDecision::Resume(open.clone()));
        }
        if self.is_complete() {
            return Err(CampaignError::CampaignComplete);
        }
        let mut candidates: Vec<(usize, usize)> = (0..self.items.len())
            .filter(|&i| !self.raters[i].contains(subject_id))
            .map(|i| (self.remaining[i] - self.pending[i], i))
            .filter(|&(slots, _)| slots > 0)
            .collect();
        if candidates.is_empty() {
            return Err(CampaignError::NothingToAssign(subject_id.to_string()));
        }
        candidates.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
        candidates.truncate(self.config.session_item_cap);
        let mut items: Vec<String> = candidates.into_iter().map(|(_, i)| self.items[i].clone()).collect();

        let index = self.subjects.get(subject_id).map_or(0, |s| s.sessions_opened);
        if self.config.randomize {
            items.shuffle(&mut session_rng(self.config.seed, subject_id, index));
        }
        Ok(OpenDecision::Open(Event::SessionOpened {
            session_id: format!("{}-s{}", self.campaign_id, self.sessions.len() + 1),
            subject_id: subject_id.to_string(),
            items,
            at: now,
        }))
    }

    /// Validates a submission. Checks run in a fixed order: ownership,
    /// score range, duplicate, order, expiry.
    pub fn decide_submit(
        &self,
        session_id: &str,
        submission: &RatingSubmission,
        now: DateTime<Utc>,
    ) -> Result<Event, CampaignError> {
        let session = self
            .sessions
            .get(session_id)
            .ok_or_else(|| CampaignError::UnknownSession(session_id.to_string()))?;
        if session.subject_id != submission.subject_id {
            return Err(CampaignError::SubjectMismatch {
                session_id: session_id.to_string(),
                expected: session.subject_id.clone(),
                got: submission.subject_id.clone(),
            });
        }
        let scores = validate_scores(DimensionScores {
            quality: submission.quality,
            alignment: submission.alignment,
            preservation: submission.preservation,
        })
        .map_err(|(dimension, value)| CampaignError::InvalidScore { dimension, value })?;
        if let Some(i) = self.item_index(&submission.item_id) {
            if self.raters[i].contains(&submission.subject_id) {
                return Err(CampaignError::DuplicateRating {
                    subject_id: submission.subject_id.clone(),
                    item_id: submission.item_id.clone(),
                });
            }
        }
        let expected = session.current_item();
        if expected != Some(submission.item_id.as_str()) {
            return Err(CampaignError::OutOfOrderSubmission {
                expected: expected.map(str::to_string),
                got: submission.item_id.clone(),
            });
        }
        if session.status == SessionStatus::Expired {
            return Err(CampaignError::SessionExpired(session_id.to_string()));
        }
        Ok(Event::RatingSubmitted {
            session_id: session_id.to_string(),
            rating: StoredRating {
                subject_id: submission.subject_id.clone(),
                item_id: submission.item_id.clone(),
                scores,
                qa_answer: submission.qa_answer,
                submitted_at: now,
            },
        })
    }

    /// Folds one event in. Errors mean the event does not fit the state,
    /// which only happens with a damaged log.
    pub fn apply(&mut self, event: &Event) -> Result<(), CampaignError> {
        match event {
            Event::Created { .. } => return Err(corrupt("second `created`")),
            Event::SessionOpened {
                session_id,
                subject_id,
                items,
                at,
            } => {
                if self.sessions.contains_key(session_id) {
                    return Err(corrupt(format!("session {session_id} opened twice")));
                }
                let subject = self.subjects.entry(subject_id.clone()).or_default();
                if subject.open_session.is_some() {
                    return Err(corrupt(format!("subject {subject_id} has two open sessions")));
                }
                let mut slots = Vec::with_capacity(items.len());
                for item in items {
                    let i = self.index.get(item).copied().ok_or_else(|| corrupt(format!("unknown item {item}")))?;
                    if self.remaining[i] <= self.pending[i] || self.raters[i].contains(subject_id) {
                        return Err(corrupt(format!("item {item} over-assigned")));
                    }
                    slots.push(i);
                }
                let index = subject.sessions_opened;
                subject.sessions_opened += 1;
                subject.open_session = Some(session_id.clone());
                for i in slots {
                    self.pending[i] += 1;
                }
                let status = if items.is_empty() {
                    SessionStatus::Complete
                } else {
                    SessionStatus::Open
                };
                if status == SessionStatus::Complete {
                    subject.open_session = None;
                }
                self.sessions.insert(
                    session_id.clone(),
                    Session {
                        session_id: session_id.clone(),
                        subject_id: subject_id.clone(),
                        index,
                        items: items.clone(),
                        cursor: 0,
                        status,
                        opened_at: *at,
                        last_activity: *at,
                    },
                );
            }
            Event::RatingSubmitted { session_id, rating } => {
                let session = self
                    .sessions
                    .get_mut(session_id)
                    .ok_or_else(|| corrupt(format!("unknown session {session_id}")))?;
                if session.status != SessionStatus::Open
                    || session.current_item() != Some(rating.item_id.as_str())
                    || session.subject_id != rating.subject_id
                {
                    return Err(corrupt(format!("rating does not match session {session_id}")));
                }
                let i = self.index[&rating.item_id];
                if !self.raters[i].insert(rating.subject_id.clone()) {
                    return Err(corrupt("duplicate rating"));
                }
                self.remaining[i] -= 1;
                self.pending[i] -= 1;
                session.cursor += 1;
                session.last_activity = rating.submitted_at;
                if session.cursor == session.items.len() {
                    session.status = SessionStatus::Complete;
                    if let Some(subject) = self.subjects.get_mut(&rating.subject_id) {
                        subject.open_session = None;
                    }
                }
                self.ratings.push(rating.clone());
            }
            Event::SessionExpired { session_id, at: _ } => {
                let session = self
                    .sessions
                    .get_mut(session_id)
                    .ok_or_else(|| corrupt(format!("unknown session {session_id}")))?;
                if session.status != SessionStatus::Open {
                    return Err(corrupt(format!("session {session_id} is not open")));
                }
                session.status = SessionStatus::Expired;
                for item in &session.items[session.cursor..] {
                    self.pending[self.index[item]] -= 1;
                }
                if let Some(subject) = self.subjects.get_mut(&session.subject_id) {
                    subject.open_session = None;
                }
            }
        }
        self.seq += 1;
        Ok(())
    }

    pub fn unanswered(&self, session_id: &str) -> &[String] {
        self.sessions.get(session_id).map_or(&[], |s| s.unanswered())
    }

    pub fn export(&self) -> Vec<RatingRecord> {
        self.ratings.iter().map(RatingRecord::from).collect()
    }
}

/// Presentation-order RNG for one session, seeded from
/// sha256(campaign seed | subject id | session ordinal).
pub fn session_rng(seed: u64, subject_id: &str, index: usize) -> ChaCha8Rng {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update((subject_id.len() as u64).to_le_bytes());
    hasher.update(subject_id.as_bytes());
    hasher.update((index as u64).to_le_bytes());
    ChaCha8Rng::from_seed(hasher.finalize().into())
}
