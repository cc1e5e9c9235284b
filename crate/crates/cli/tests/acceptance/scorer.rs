use std::net::SocketAddr;
use std::time::Duration;

use editbench_core::dataset::{load_manifest, Dimension};
use editbench_core::leaderboard::report::alignment_json;
use editbench_core::leaderboard::{align_metric, LeaderboardOptions, Slicing};
use editbench_core::scorer::mock::{spawn, MockScorer, MockScores};
use editbench_core::scorer::{load_score_file, run_remote, RemoteConfig};
use editbench_core::subjective::MosTable;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use crate::common::{study, write_jsonl};
use crate::{ensure, Verdict};

/// The same predictions served by the mock scorer and read from a score file
/// must give identical runs and identical reports.
pub fn source_indifference() -> Verdict {
    let s = study(42, 2, 77);
    let manifest = load_manifest(&s.manifest).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut rows: Vec<Value> = Vec::new();
    let mut mos = MosTable::default();
    for id in &s.items {
        for d in Dimension::ALL {
            // Arbitrary doubles, so any lossy step would show.
            let score: f64 = rng.random_range(0.0..100.0);
            rows.push(json!({ "item_id": id, "dimension": d.as_str(), "score": score }));
            mos.insert(id, d, score + rng.random_range(-20.0..20.0));
        }
        rows.push(json!({ "item_id": id, "qa_answer": rng.random_bool(0.5) }));
    }
    let path = s.path("scores.jsonl");
    write_jsonl(&path, &rows);
    let file_run = load_score_file(&path, &manifest).map_err(|e| e.to_string())?;

    let runtime = tokio::runtime::Runtime::new().unwrap();
    let remote_run = runtime.block_on(async {
        let table = MockScores::from_run(&file_run, &manifest).map_err(|e| e.to_string())?;
        let addr: SocketAddr = "127.0.0.1:0".parse().unwrap();
        let handle = spawn(MockScorer::table(table), addr).await.map_err(|e| e.to_string())?;
        let mut config = RemoteConfig::new(handle.url());
        config.concurrency = 4;
        config.timeout = Duration::from_secs(10);
        config.metric_name = file_run.metric_name.clone();
        let run = run_remote(&manifest, &config).await.map_err(|e| e.to_string());
        handle.stop().await;
        run
    })?;

    ensure!(remote_run.predictions.len() == file_run.predictions.len(), "prediction counts differ");
    for (key, v) in &file_run.predictions {
        let r = remote_run.predictions.get(key).ok_or_else(|| format!("remote run lacks {key:?}"))?;
        ensure!(r.to_bits() == v.to_bits(), "{key:?}: remote {r} vs file {v}");
    }
    ensure!(remote_run.qa_predictions == file_run.qa_predictions, "QA answers differ");

    let options = LeaderboardOptions::default();
    let report = |run| align_metric(run, &mos, &[], &manifest, Slicing::ALL, &options).map(|r| alignment_json(&r));
    let (a, b) = (report(&file_run).map_err(|e| e.to_string())?, report(&remote_run).map_err(|e| e.to_string())?);
    ensure!(a == b, "alignment reports differ");
    Ok(format!(
        "{} predictions and {} answers bit-identical across mock remote and score file; reports equal; no secondary component involved",
        file_run.predictions.len(),
        file_run.qa_predictions.len()
    ))
}
