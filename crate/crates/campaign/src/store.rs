//! All campaigns under one data directory.
//!
//! Each campaign has a single writer section (a mutex around its state and
//! log); a command holds it across decide, append, apply, so check-and-append
//! is atomic. Progress is republished after each mutation and read without
//! touching the writer.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use chrono::{DateTime, Utc};
use editbench_core::dataset::{load_manifest_with, write_ratings, BenchmarkItem, Manifest, ManifestOptions, RatingRecord};
use percent_encoding::{utf8_percent_encode, NON_ALPHANUMERIC};
use serde::{Deserialize, Serialize};

use crate::config::{CampaignConfig, Durability};
use crate::log::{EventLog, EVENTS_FILE};
use crate::state::{valid_id, CampaignError, CampaignState, Event, OpenDecision, Progress, RatingSubmission, Session, SessionStatus};

#[derive(Debug, Clone, Copy)]
pub struct StoreOptions {
    pub durability: Durability,
    pub snapshot_every: u64,
}

impl Default for StoreOptions {
    fn default() -> Self {
        StoreOptions {
            durability: Durability::Sync,
            snapshot_every: 256,
        }
    }
}

struct Writer {
    state: CampaignState,
    log: EventLog,
}

struct Campaign {
    writer: Mutex<Writer>,
    progress: RwLock<Arc<Progress>>,
    manifest: Arc<Manifest>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Created {
    pub campaign_id: String,
    pub items: usize,
    pub raters_per_item: usize,
    pub required_ratings: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionView {
    pub session_id: String,
    pub campaign_id: String,
    pub subject_id: String,
    pub status: SessionStatus,
    pub position: usize,
    pub total: usize,
    pub items: Vec<String>,
    /// False when an existing open session was handed back.
    pub fresh: bool,
}

/// What a rater sees for the item at the session cursor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurrentItem {
    pub session_id: String,
    pub status: SessionStatus,
    pub position: usize,
    pub total: usize,
    pub item: Option<ItemView>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemView {
    pub item_id: String,
    pub task: String,
    pub instruction: String,
    pub source_description: String,
    pub target_description: String,
    pub qa_question: String,
    pub source_url: String,
    pub edited_url: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ack {
    pub session_id: String,
    pub item_id: String,
    pub position: usize,
    pub total: usize,
    pub session_complete: bool,
    pub campaign_complete: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Export {
    pub campaign_id: String,
    pub partial: bool,
    pub required: usize,
    pub records: Vec<RatingRecord>,
}

/// Sidecar written next to an exported ratings file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExportMeta {
    pub campaign_id: String,
    pub partial: bool,
    pub records: usize,
    pub required: usize,
}

impl Export {
    pub fn meta(&self) -> ExportMeta {
        ExportMeta {
            campaign_id: self.campaign_id.clone(),
            partial: self.partial,
            records: self.records.len(),
            required: self.required,
        }
    }

    pub fn to_jsonl(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        write_ratings(&self.records, &mut buf).expect("writing to memory");
        buf
    }

    /// Writes the ratings file and `<path>.meta.json` beside it.
    pub fn write(&self, path: &Path) -> std::io::Result<PathBuf> {
        fs::write(path, self.to_jsonl())?;
        let meta = PathBuf::from(format!("{}.meta.json", path.display()));
        let mut file = fs::File::create(&meta)?;
        serde_json::to_writer_pretty(&mut file, &self.meta())?;
        file.write_all(b"\n")?;
        Ok(meta)
    }
}

pub struct CampaignStore {
    root: PathBuf,
    options: StoreOptions,
    campaigns: RwLock<BTreeMap<String, Arc<Campaign>>>,
    sessions: RwLock<HashMap<String, String>>,
    images: RwLock<HashMap<String, (PathBuf, PathBuf)>>,
}

fn manifest_error(e: impl std::fmt::Display) -> CampaignError {
    CampaignError::InvalidManifest(e.to_string())
}

fn lock_poisoned() -> CampaignError {
    CampaignError::Storage("campaign lock poisoned by an earlier panic".into())
}

impl CampaignStore {
    /// Opens (creating if needed) the data directory and replays every campaign in it.
    pub fn open(root: &Path, options: StoreOptions) -> Result<Self, CampaignError> {
        fs::create_dir_all(root).map_err(|e| CampaignError::Storage(format!("{}: {e}", root.display())))?;
        let store = CampaignStore {
            root: root.to_path_buf(),
            options,
            campaigns: RwLock::new(BTreeMap::new()),
            sessions: RwLock::new(HashMap::new()),
            images: RwLock::new(HashMap::new()),
        };
        let mut dirs: Vec<PathBuf> = fs::read_dir(root)
            .map_err(|e| CampaignError::Storage(format!("{}: {e}", root.display())))?
            .filter_map(|entry| entry.ok().map(|e| e.path()))
            .filter(|p| p.join(EVENTS_FILE).is_file())
            .collect();
        dirs.sort();
        for dir in dirs {
            let (log, state) = EventLog::open(&dir, options.durability, options.snapshot_every)?;
            let manifest = load_manifest_with(&state.manifest_path, ManifestOptions { verify_images: false })
                .map_err(manifest_error)?;
            tracing::info!(campaign = %state.campaign_id, events = state.seq, "replayed campaign");
            store.register(state, log, manifest)?;
        }
        Ok(store)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn register(&self, state: CampaignState, log: EventLog, manifest: Manifest) -> Result<(), CampaignError> {
        {
            let mut images = self.images.write().map_err(|_| lock_poisoned())?;
            for item in manifest.iter() {
                let paths = (manifest.resolve(&item.source_image), manifest.resolve(&item.edited_image));
                match images.get(&item.item_id) {
                    Some(existing) if *existing != paths => {
                        return Err(CampaignError::Conflict(format!(
                            "item `{}` is already served with different images",
                            item.item_id
                        )))
                    }
                    _ => {}
                }
            }
            for item in manifest.iter() {
                let paths = (manifest.resolve(&item.source_image), manifest.resolve(&item.edited_image));
                images.entry(item.item_id.clone()).or_insert(paths);
            }
        }
        {
            let mut sessions = self.sessions.write().map_err(|_| lock_poisoned())?;
            for id in state.sessions.keys() {
                sessions.insert(id.clone(), state.campaign_id.clone());
            }
        }
        let id = state.campaign_id.clone();
        let campaign = Campaign {
            progress: RwLock::new(Arc::new(state.progress())),
            writer: Mutex::new(Writer { state, log }),
            manifest: Arc::new(manifest),
        };
        self.campaigns.write().map_err(|_| lock_poisoned())?.insert(id, Arc::new(campaign));
        Ok(())
    }

    fn campaign(&self, id: &str) -> Result<Arc<Campaign>, CampaignError> {
        self.campaigns
            .read()
            .map_err(|_| lock_poisoned())?
            .get(id)
            .cloned()
            .ok_or_else(|| CampaignError::UnknownCampaign(id.to_string()))
    }

    fn session_campaign(&self, session_id: &str) -> Result<Arc<Campaign>, CampaignError> {
        let campaign_id = self
            .sessions
            .read()
            .map_err(|_| lock_poisoned())?
            .get(session_id)
            .cloned()
            .ok_or_else(|| CampaignError::UnknownSession(session_id.to_string()))?;
        self.campaign(&campaign_id)
    }

    pub fn campaign_ids(&self) -> Vec<String> {
        self.campaigns.read().map(|c| c.keys().cloned().collect()).unwrap_or_default()
    }

    /// Validates the manifest (including image headers) and persists a new campaign.
    pub fn create(
        &self,
        campaign_id: Option<String>,
        manifest_path: &Path,
        config: CampaignConfig,
        now: DateTime<Utc>,
    ) -> Result<Created, CampaignError> {
        config.validate().map_err(|e| CampaignError::InvalidConfig(e.to_string()))?;
        let manifest_path = fs::canonicalize(manifest_path)
            .map_err(|e| CampaignError::InvalidManifest(format!("{}: {e}", manifest_path.display())))?;
        let manifest = load_manifest_with(&manifest_path, ManifestOptions { verify_images: true }).map_err(manifest_error)?;
        if manifest.is_empty() {
            return Err(CampaignError::InvalidManifest("manifest has no items".into()));
        }

        // Holding the map lock across creation serializes id allocation.
        let campaigns = self.campaigns.write().map_err(|_| lock_poisoned())?;
        let campaign_id = match campaign_id {
            Some(id) => id,
            None => (1..)
                .map(|n| format!("campaign-{n}"))
                .find(|id| !campaigns.contains_key(id) && !self.root.join(id).exists())
                .expect("unbounded"),
        };
        if !valid_id(&campaign_id) {
            return Err(CampaignError::InvalidId(campaign_id));
        }
        if campaigns.contains_key(&campaign_id) || self.root.join(&campaign_id).exists() {
            return Err(CampaignError::Conflict(format!("campaign `{campaign_id}` already exists")));
        }
        let event = Event::Created {
            campaign_id: campaign_id.clone(),
            config: config.clone(),
            manifest_path,
            items: manifest.iter().map(|i| i.item_id.clone()).collect(),
            at: now,
        };
        let (log, state) = EventLog::create(
            &self.root.join(&campaign_id),
            &event,
            self.options.durability,
            self.options.snapshot_every,
        )?;
        drop(campaigns);
        let created = Created {
            campaign_id: campaign_id.clone(),
            items: manifest.len(),
            raters_per_item: config.raters_per_item,
            required_ratings: manifest.len() * config.raters_per_item,
        };
        self.register(state, log, manifest)?;
        tracing::info!(campaign = %campaign_id, items = created.items, "created campaign");
        Ok(created)
    }

    pub fn progress(&self, campaign_id: &str) -> Result<Progress, CampaignError> {
        let campaign = self.campaign(campaign_id)?;
        let progress = campaign.progress.read().map_err(|_| lock_poisoned())?;
        Ok((**progress).clone())
    }

    /// A copy of the full state, for inspection and tests.
    pub fn state(&self, campaign_id: &str) -> Result<CampaignState, CampaignError> {
        let campaign = self.campaign(campaign_id)?;
        let writer = campaign.writer.lock().map_err(|_| lock_poisoned())?;
        Ok(writer.state.clone())
    }

    fn commit(&self, campaign: &Campaign, writer: &mut Writer, event: &Event) -> Result<(), CampaignError> {
        writer.log.append(event)?;
        writer.state.apply(event)?;
        if let Err(e) = writer.log.maybe_snapshot(&writer.state) {
            // The log alone is enough to recover.
            tracing::warn!(error = %e, "snapshot failed");
        }
        if let Ok(mut progress) = campaign.progress.write() {
            *progress = Arc::new(writer.state.progress());
        }
        Ok(())
    }

    fn sweep(&self, campaign: &Campaign, writer: &mut Writer, now: DateTime<Utc>) -> Result<(), CampaignError> {
        for event in writer.state.decide_expiries(now) {
            self.commit(campaign, writer, &event)?;
        }
        Ok(())
    }

    pub fn next_session(&self, campaign_id: &str, subject_id: &str, now: DateTime<Utc>) -> Result<SessionView, CampaignError> {
        let campaign = self.campaign(campaign_id)?;
        let mut writer = campaign.writer.lock().map_err(|_| lock_poisoned())?;
        self.sweep(&campaign, &mut writer, now)?;
        let (session_id, fresh) = match writer.state.decide_open(subject_id, now)? {
            OpenDecision::Resume(id) => (id, false),
            OpenDecision::Open(event) => {
                let Event::SessionOpened { session_id, .. } = &event else {
                    unreachable!("decide_open returns session events")
                };
                let session_id = session_id.clone();
                self.commit(&campaign, &mut writer, &event)?;
                self.sessions
                    .write()
                    .map_err(|_| lock_poisoned())?
                    .insert(session_id.clone(), campaign_id.to_string());
                (session_id, true)
            }
        };
        Ok(view(campaign_id, &writer.state.sessions[&session_id], fresh))
    }

    pub fn session(&self, session_id: &str) -> Result<Session, CampaignError> {
        let campaign = self.session_campaign(session_id)?;
        let writer = campaign.writer.lock().map_err(|_| lock_poisoned())?;
        writer
            .state
            .session(session_id)
            .cloned()
            .ok_or_else(|| CampaignError::UnknownSession(session_id.to_string()))
    }

    pub fn current(&self, session_id: &str, now: DateTime<Utc>) -> Result<CurrentItem, CampaignError> {
        let campaign = self.session_campaign(session_id)?;
        let mut writer = campaign.writer.lock().map_err(|_| lock_poisoned())?;
        self.sweep(&campaign, &mut writer, now)?;
        let session = &writer.state.sessions[session_id];
        if session.status == SessionStatus::Expired {
            return Err(CampaignError::SessionExpired(session_id.to_string()));
        }
        let item = session
            .current_item()
            .and_then(|id| campaign.manifest.get(id))
            .map(item_view);
        Ok(CurrentItem {
            session_id: session_id.to_string(),
            status: session.status,
            position: session.cursor,
            total: session.items.len(),
            item,
        })
    }

    /// Appends the rating durably, then acknowledges.
    pub fn submit(&self, session_id: &str, submission: &RatingSubmission, now: DateTime<Utc>) -> Result<Ack, CampaignError> {
        let campaign = self.session_campaign(session_id)?;
        let mut writer = campaign.writer.lock().map_err(|_| lock_poisoned())?;
        self.sweep(&campaign, &mut writer, now)?;
        let event = writer.state.decide_submit(session_id, submission, now)?;
        self.commit(&campaign, &mut writer, &event)?;
        let session = &writer.state.sessions[session_id];
        Ok(Ack {
            session_id: session_id.to_string(),
            item_id: submission.item_id.clone(),
            position: session.cursor,
            total: session.items.len(),
            session_complete: session.status == SessionStatus::Complete,
            campaign_complete: writer.state.is_complete(),
        })
    }

    pub fn export(&self, campaign_id: &str) -> Result<Export, CampaignError> {
        let campaign = self.campaign(campaign_id)?;
        let writer = campaign.writer.lock().map_err(|_| lock_poisoned())?;
        let state = &writer.state;
        Ok(Export {
            campaign_id: campaign_id.to_string(),
            partial: !state.is_complete(),
            required: state.items.len() * state.config.raters_per_item,
            records: state.export(),
        })
    }

    /// Paths of an item's source and edited images.
    pub fn image_paths(&self, item_id: &str) -> Option<(PathBuf, PathBuf)> {
        self.images.read().ok()?.get(item_id).cloned()
    }

    /// Forces a snapshot of every campaign.
    pub fn snapshot_all(&self) -> Result<(), CampaignError> {
        for id in self.campaign_ids() {
            let campaign = self.campaign(&id)?;
            let writer = campaign.writer.lock().map_err(|_| lock_poisoned())?;
            writer.log.snapshot(&writer.state)?;
        }
        Ok(())
    }
}

fn view(campaign_id: &str, session: &Session, fresh: bool) -> SessionView {
    SessionView {
        session_id: session.session_id.clone(),
        campaign_id: campaign_id.to_string(),
        subject_id: session.subject_id.clone(),
        status: session.status,
        position: session.cursor,
        total: session.items.len(),
        items: session.items.clone(),
        fresh,
    }
}

fn item_view(item: &BenchmarkItem) -> ItemView {
    let id = &item.item_id;
    let path = utf8_percent_encode(id, NON_ALPHANUMERIC);
    ItemView {
        item_id: id.clone(),
        task: item.task.as_str().to_string(),
        instruction: item.prompts.instruction.clone(),
        source_description: item.prompts.source_description.clone(),
        target_description: item.prompts.target_description.clone(),
        qa_question: item.qa_question.clone(),
        source_url: format!("/images/{path}/source"),
        edited_url: format!("/images/{path}/edited"),
    }
}
