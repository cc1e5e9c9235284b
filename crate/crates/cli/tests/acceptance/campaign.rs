use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use editbench_campaign::simulate::{run, write_fixture_manifest, Outcome, Simulation};
use editbench_campaign::{CampaignConfig, Durability};
use serde_json::{json, Value};

use crate::common::{editbench, http, lines, stderr, Server};
use crate::{ensure, Verdict};

fn check_point(items: usize, raters: usize, subjects: usize, o: &Outcome) -> Result<(), String> {
    let label = format!("items={items} raters={raters} subjects={subjects}");
    let per_item = o.raters_per_item();
    ensure!(o.duplicate_pairs() == 0, "{label}: duplicate (subject, item) pairs");
    ensure!(o.replay_matched == Some(true), "{label}: replay after crash diverged ({:?})", o.replay_matched);
    ensure!(per_item.len() == items, "{label}: export covers {} items", per_item.len());
    if subjects >= raters {
        ensure!(o.state.is_complete(), "{label}: campaign did not complete");
        ensure!(!o.export.partial, "{label}: complete campaign exported as partial");
        ensure!(per_item.values().all(|&n| n == raters), "{label}: raters per item {per_item:?}");
    } else {
        // A subject rates an item at most once, so only `subjects` raters exist per item.
        ensure!(!o.state.is_complete(), "{label}: unreachable campaign reported complete");
        ensure!(o.export.partial, "{label}: export not flagged partial");
        ensure!(per_item.values().all(|&n| n == subjects), "{label}: raters per item {per_item:?}");
    }
    Ok(())
}

fn grid(root: &Path) -> Result<(usize, usize), String> {
    let manifests: Vec<PathBuf> = (0..=20)
        .map(|n| if n == 0 { PathBuf::new() } else { write_fixture_manifest(&root.join("m"), n).unwrap() })
        .collect();
    let (mut point, mut unreachable) = (0u64, 0);
    for items in 1..=20 {
        for raters in 1..=5 {
            for subjects in 1..=8 {
                point += 1;
                let total = items * raters.min(subjects);
                let sim = Simulation {
                    manifest: manifests[items].clone(),
                    data_dir: root.join(format!("run-{point}")),
                    config: CampaignConfig {
                        raters_per_item: raters,
                        session_item_cap: 1 + (point as usize % 7),
                        randomize: true,
                        seed: point,
                        idle_timeout_secs: 600,
                    },
                    subjects,
                    seed: point,
                    abandon: 0.05,
                    crash_after: Some(total.div_ceil(2)),
                    durability: Durability::Flush,
                    snapshot_every: 5,
                };
                let outcome = run(&sim).map_err(|e| format!("items={items} raters={raters} subjects={subjects}: {e}"))?;
                check_point(items, raters, subjects, &outcome)?;
                unreachable += usize::from(subjects < raters);
                std::fs::remove_dir_all(&sim.data_dir).unwrap();
            }
        }
    }
    Ok((point as usize, unreachable))
}

fn start(config: &Path) -> Result<Server, String> {
    let mut cmd = editbench();
    cmd.args(["serve", "--config", config.to_str().unwrap()]);
    Server::start(cmd).map_err(|o| format!("serve failed: {}", stderr(&o)))
}

fn json(body: &str) -> Value {
    serde_json::from_str(body).unwrap_or(Value::Null)
}

/// Drives the real service over HTTP, kills it with SIGKILL half-way, restarts
/// it on the same data directory and finishes the campaign.
fn killed_service(root: &Path) -> Result<usize, String> {
    let (items, raters, subjects) = (12, 3, 4);
    let manifest = write_fixture_manifest(&root.join("kill-m"), items).unwrap();
    let config = root.join("service.toml");
    std::fs::write(&config, "port = 0\ndata_dir = \"kill-data\"\ndurability = \"sync\"\nsnapshot_every = 4\n").unwrap();

    let mut server = start(&config)?;
    let (status, body) = http(
        "POST",
        &format!("{}/campaigns", server.url),
        Some(&json!({
            "campaign_id": "kill",
            "manifest": manifest,
            "config": { "raters_per_item": raters, "session_item_cap": 5, "seed": 3 },
        })),
    );
    ensure!(status == 201, "create: {status} {body}");

    let total = items * raters;
    let mut submitted = 0;
    let mut killed = false;
    loop {
        let mut progressed = false;
        for s in 0..subjects {
            let subject = format!("rater-{s}");
            let (status, body) =
                http("POST", &format!("{}/campaigns/kill/sessions", server.url), Some(&json!({ "subject_id": subject })));
            if status == 409 {
                continue;
            }
            ensure!(status == 200 || status == 201, "session for {subject}: {status} {body}");
            let view = json(&body);
            let sid = view["session_id"].as_str().unwrap().to_string();
            let position = view["position"].as_u64().unwrap() as usize;
            for item in view["items"].as_array().unwrap().iter().skip(position) {
                let rating = json!({
                    "subject_id": subject, "item_id": item,
                    "quality": 3.0, "alignment": 4.0, "preservation": 2.5, "qa_answer": true,
                });
                let (status, body) = http("POST", &format!("{}/sessions/{sid}/ratings", server.url), Some(&rating));
                ensure!(status == 200 || status == 201, "rating: {status} {body}");
                submitted += 1;
                progressed = true;
                if !killed && submitted == total / 2 {
                    let (_, before) = http("GET", &format!("{}/campaigns/kill/progress", server.url), None);
                    server.child.kill().unwrap();
                    server.child.wait().unwrap();
                    server = start(&config)?;
                    let (_, after) = http("GET", &format!("{}/campaigns/kill/progress", server.url), None);
                    ensure!(json(&before) == json(&after), "progress after SIGKILL differs:\n{before}\n{after}");
                    killed = true;
                }
            }
        }
        if !progressed {
            break;
        }
    }
    let (status, body) = http("GET", &format!("{}/campaigns/kill/export", server.url), None);
    ensure!(status == 200, "export: {status}");
    let records = lines(&body);
    let mut by_item: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    for r in &records {
        let fresh = by_item
            .entry(r["item_id"].as_str().unwrap().into())
            .or_default()
            .insert(r["subject_id"].as_str().unwrap().into());
        ensure!(fresh, "duplicate pair in export: {r}");
    }
    ensure!(killed, "never reached the kill point");
    ensure!(records.len() == total, "{} records exported, expected {total}", records.len());
    ensure!(by_item.len() == items && by_item.values().all(|s| s.len() == raters), "coverage {by_item:?}");
    server.stop();
    Ok(records.len())
}

pub fn simulation() -> Verdict {
    let root = tempfile::tempdir().unwrap();
    let (points, unreachable) = grid(root.path())?;
    let records = killed_service(root.path())?;
    Ok(format!(
        "{points} grid points with a crash and replay at mid-campaign, no duplicate pairs; raters_per_item reached at all {} points with enough subjects, \
         the {unreachable} points with fewer subjects end partial with every subject on every item; \
         serve process SIGKILLed mid-campaign restarts with identical progress and completes ({records} ratings)",
        points - unreachable
    ))
}
