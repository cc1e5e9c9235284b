//! Scripted raters driving a store to termination, with optional session
//! abandonment and a simulated crash (drop the store, reopen from disk).

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Duration, TimeZone, Utc};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{CampaignConfig, Durability};
use crate::state::{CampaignError, CampaignState, RatingSubmission};
use crate::store::{CampaignStore, Export, StoreOptions};

#[derive(Debug, Clone)]
pub struct Simulation {
    pub manifest: PathBuf,
    pub data_dir: PathBuf,
    pub config: CampaignConfig,
    pub subjects: usize,
    pub seed: u64,
    /// Probability that a rater walks away from a session part-way.
    pub abandon: f64,
    /// Crash once this many ratings have been submitted.
    pub crash_after: Option<usize>,
    pub durability: Durability,
    pub snapshot_every: u64,
}

#[derive(Debug)]
pub struct Outcome {
    pub state: CampaignState,
    pub export: Export,
    pub sessions: usize,
    pub abandoned: usize,
    /// For the crash, whether the replayed state equaled the state just before it.
    pub replay_matched: Option<bool>,
}

impl Outcome {
    /// Distinct raters per item, from the exported records.
    pub fn raters_per_item(&self) -> BTreeMap<String, usize> {
        let mut out: BTreeMap<String, BTreeSet<&str>> =
            self.state.items.iter().map(|i| (i.clone(), BTreeSet::new())).collect();
        for r in &self.export.records {
            out.entry(r.item_id.clone()).or_default().insert(&r.subject_id);
        }
        out.into_iter().map(|(k, v)| (k, v.len())).collect()
    }

    pub fn duplicate_pairs(&self) -> usize {
        let mut seen = BTreeSet::new();
        self.export
            .records
            .iter()
            .filter(|r| !seen.insert((r.subject_id.as_str(), r.item_id.as_str())))
            .count()
    }
}

const CAMPAIGN: &str = "sim";
const MAX_ABANDONS: usize = 3;

pub fn run(sim: &Simulation) -> Result<Outcome, CampaignError> {
    let options = StoreOptions {
        durability: sim.durability,
        snapshot_every: sim.snapshot_every,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(sim.seed);
    let mut now: DateTime<Utc> = Utc.timestamp_opt(1_700_000_000, 0).unwrap();
    let idle = Duration::seconds(sim.config.idle_timeout_secs as i64);

    let mut store = CampaignStore::open(&sim.data_dir, options)?;
    store.create(Some(CAMPAIGN.into()), &sim.manifest, sim.config.clone(), now)?;

    let subjects: Vec<String> = (0..sim.subjects).map(|i| format!("rater-{i}")).collect();
    let mut submitted = 0usize;
    let mut sessions = 0usize;
    let mut abandoned = 0usize;
    let mut replay_matched = None;

    loop {
        let mut progressed = false;
        let mut order = subjects.clone();
        order.shuffle(&mut rng);
        for subject in order {
            now += Duration::seconds(1);
            let view = match store.next_session(CAMPAIGN, &subject, now) {
                Ok(view) => view,
                Err(CampaignError::NothingToAssign(_) | CampaignError::CampaignComplete) => continue,
                Err(e) => return Err(e),
            };
            progressed = true;
            sessions += usize::from(view.fresh);
            for item in view.items.iter().skip(view.position) {
                if abandoned < MAX_ABANDONS && rng.random_bool(sim.abandon) {
                    abandoned += 1;
                    // Long enough that the next request sweeps this session.
                    now += idle;
                    break;
                }
                now += Duration::seconds(1);
                let submission = RatingSubmission {
                    subject_id: subject.clone(),
                    item_id: item.clone(),
                    quality: rng.random_range(1.0..=5.0),
                    alignment: rng.random_range(1.0..=5.0),
                    preservation: rng.random_range(1.0..=5.0),
                    qa_answer: rng.random_bool(0.5),
                };
                store.submit(&view.session_id, &submission, now)?;
                submitted += 1;

                if sim.crash_after == Some(submitted) && replay_matched.is_none() {
                    let before = store.state(CAMPAIGN)?;
                    drop(store);
                    store = CampaignStore::open(&sim.data_dir, options)?;
                    replay_matched = Some(store.state(CAMPAIGN)? == before);
                }
            }
        }
        if !progressed {
            break;
        }
    }

    Ok(Outcome {
        state: store.state(CAMPAIGN)?,
        export: store.export(CAMPAIGN)?,
        sessions,
        abandoned,
        replay_matched,
    })
}

/// Writes a manifest of `n` items sharing one pair of tiny PNGs, for simulations.
pub fn write_fixture_manifest(dir: &Path, n: usize) -> std::io::Result<PathBuf> {
    use editbench_core::dataset::{write_manifest, BenchmarkItem, PromptBundle, TaskId};

    std::fs::create_dir_all(dir)?;
    for name in ["src.png", "edit.png"] {
        let path = dir.join(name);
        if !path.exists() {
            std::fs::write(&path, TINY_PNG)?;
        }
    }
    let items: Vec<BenchmarkItem> = (0..n)
        .map(|i| BenchmarkItem {
            item_id: format!("item-{i:03}"),
            source_image: PathBuf::from("src.png"),
            edited_image: PathBuf::from("edit.png"),
            editing_model: format!("model-{}", i % 3),
            task: TaskId::ALL[i % TaskId::ALL.len()],
            prompts: PromptBundle {
                instruction: format!("edit number {i}"),
                source_description: String::new(),
                target_description: String::new(),
            },
            qa_question: "Was the edit applied?".into(),
            expected_answer: None,
        })
        .collect();
    let path = dir.join(format!("manifest-{n}.jsonl"));
    let mut buf = Vec::new();
    write_manifest(&items, &mut buf)?;
    std::fs::write(&path, buf)?;
    Ok(path)
}

/// A 1x1 grey PNG.
const TINY_PNG: &[u8] = &[
    0x89, 0x50, 0x4e, 0x47, 0x0d, 0x0a, 0x1a, 0x0a, 0x00, 0x00, 0x00, 0x0d, 0x49, 0x48, 0x44, 0x52, 0x00, 0x00, 0x00,
    0x01, 0x00, 0x00, 0x00, 0x01, 0x08, 0x00, 0x00, 0x00, 0x00, 0x3a, 0x7e, 0x9b, 0x55, 0x00, 0x00, 0x00, 0x0a, 0x49,
    0x44, 0x41, 0x54, 0x78, 0x9c, 0x63, 0x68, 0x00, 0x00, 0x00, 0x82, 0x00, 0x81, 0x77, 0xcd, 0x72, 0xb6, 0x00, 0x00,
    0x00, 0x00, 0x49, 0x45, 0x4e, 0x44, 0xae, 0x42, 0x60, 0x82,
];
