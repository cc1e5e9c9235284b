//! Replays the 17 reference models through the `eval` and `leaderboard`
//! binaries. Every item of a model carries that model's per-model values,
//! so item-level and model-level agreement coincide.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use editbench_core::dataset::TaskId;
use serde_json::{json, Value};

use crate::common::{code, editbench, lines, manifest_row, stderr, stdout, write_jsonl, write_png};
use crate::{ensure, Verdict};

const ITEMS_PER_MODEL: usize = 216;
const DIMS: [&str; 3] = ["quality", "alignment", "preservation"];

/// Expected agreement values, per target: (SRCC, RMSE).
const EXPECTED: [(&str, f64, f64); 6] = [
    ("quality", 0.973, 1.480),
    ("alignment", 0.993, 0.785),
    ("preservation", 0.988, 0.965),
    ("accuracy", 0.972, 3.010),
    ("overall-rank", 0.998, 0.343),
    ("acc-rank", 0.973, 1.138),
];

pub struct ModelRow {
    pub model: String,
    pub human: [f64; 3],
    pub ours: [f64; 3],
    pub human_accuracy: f64,
    pub ours_accuracy: f64,
    pub human_overall_rank: u64,
    pub ours_overall_rank: u64,
    pub human_acc_rank: u64,
    pub ours_acc_rank: u64,
}

pub fn model_rows() -> Vec<ModelRow> {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/data/model_scores.csv");
    let text = std::fs::read_to_string(&path).unwrap();
    text.lines()
        .skip(1)
        .map(|line| {
            let c: Vec<&str> = line.split(',').collect();
            let f = |i: usize| c[i].parse::<f64>().unwrap();
            let u = |i: usize| c[i].parse::<u64>().unwrap();
            ModelRow {
                model: c[0].to_string(),
                human: [f(1), f(5), f(9)],
                ours: [f(2), f(6), f(10)],
                human_accuracy: f(13),
                ours_accuracy: f(14),
                human_overall_rank: u(17),
                ours_overall_rank: u(18),
                human_acc_rank: u(19),
                ours_acc_rank: u(20),
            }
        })
        .collect()
}

struct Fixture {
    _dir: tempfile::TempDir,
    manifest: PathBuf,
    mos: PathBuf,
    qa: PathBuf,
    scores: PathBuf,
}

fn fixture(rows: &[ModelRow]) -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    write_png(&dir.path().join("src.png"), 8, 1);
    write_png(&dir.path().join("edit.png"), 8, 2);
    let (mut manifest, mut mos, mut qa, mut scores) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for (m, row) in rows.iter().enumerate() {
        let yes = |acc: f64| (acc / 100.0 * ITEMS_PER_MODEL as f64).round() as usize;
        let (human_yes, ours_yes) = (yes(row.human_accuracy), yes(row.ours_accuracy));
        for j in 0..ITEMS_PER_MODEL {
            let id = format!("m{m:02}-{j:03}");
            manifest.push(manifest_row(&id, &row.model, TaskId::ALL[j % 21], "src.png", "edit.png"));
            for (d, dim) in DIMS.iter().enumerate() {
                mos.push(json!({ "item_id": id, "dimension": dim, "mos": row.human[d], "n_valid": 15, "n_removed": 0 }));
                scores.push(json!({ "item_id": id, "dimension": dim, "score": row.ours[d] }));
            }
            let h = j < human_yes;
            qa.push(json!({ "item_id": id, "yes_fraction": if h { 1.0 } else { 0.0 }, "majority": h, "n_answers": 15, "tie": false }));
            scores.push(json!({ "item_id": id, "qa_answer": j < ours_yes }));
        }
    }
    let f = Fixture {
        manifest: dir.path().join("manifest.jsonl"),
        mos: dir.path().join("mos.jsonl"),
        qa: dir.path().join("qa.jsonl"),
        scores: dir.path().join("ours.jsonl"),
        _dir: dir,
    };
    write_jsonl(&f.manifest, &manifest);
    write_jsonl(&f.mos, &mos);
    write_jsonl(&f.qa, &qa);
    write_jsonl(&f.scores, &scores);
    f
}

struct Replay {
    rows: Vec<ModelRow>,
    /// target -> (srcc, rmse) from the `model-agreement` lines
    agreement: BTreeMap<String, (f64, f64)>,
    elapsed: Duration,
    human_board: Vec<Value>,
    ours_board: Vec<Value>,
}

fn replay() -> Result<&'static Replay, String> {
    static CELL: OnceLock<Result<Replay, String>> = OnceLock::new();
    CELL.get_or_init(|| {
        let rows = model_rows();
        ensure!(rows.len() == 17, "expected 17 reference models, found {}", rows.len());
        let f = fixture(&rows);
        let p = |p: &PathBuf| p.to_string_lossy().into_owned();

        let start = Instant::now();
        let out = editbench()
            .args(["eval", "--manifest", &p(&f.manifest), "--mos", &p(&f.mos), "--qa", &p(&f.qa)])
            .args(["--scores", &p(&f.scores)])
            .output()
            .unwrap();
        let elapsed = start.elapsed();
        ensure!(code(&out) == 0, "eval exited {}: {}", code(&out), stderr(&out));
        let mut agreement = BTreeMap::new();
        for line in lines(&stdout(&out)) {
            if line["kind"] == "model-agreement" {
                ensure!(line.get("error").is_none(), "{line}");
                let target = line["target"].as_str().unwrap().to_string();
                agreement.insert(target, (line["srcc"].as_f64().unwrap(), line["rmse"].as_f64().unwrap()));
            }
        }

        let board = |source: &[&str]| -> Result<Vec<Value>, String> {
            let out = editbench().args(["leaderboard", "--manifest", &p(&f.manifest)]).args(source).output().unwrap();
            ensure!(code(&out) == 0, "leaderboard exited {}: {}", code(&out), stderr(&out));
            Ok(lines(&stdout(&out)).into_iter().filter(|l| l["kind"] == "model").collect())
        };
        let human_board = board(&["--mos", &p(&f.mos), "--qa", &p(&f.qa), "--weights", "0.3,0.4,0.3"])?;
        let ours_board = board(&["--scores", &p(&f.scores), "--weights", "0.3,0.4,0.3"])?;
        Ok(Replay {
            rows,
            agreement,
            elapsed,
            human_board,
            ours_board,
        })
    })
    .as_ref()
    .map_err(Clone::clone)
}

fn agreement_check(targets: &[&str], pick_rmse: bool, tol: f64) -> Verdict {
    let r = replay()?;
    let mut shown = Vec::new();
    for (target, srcc, rmse) in EXPECTED.iter().filter(|e| targets.contains(&e.0)) {
        let Some(&(got_srcc, got_rmse)) = r.agreement.get(*target) else {
            return Err(format!("no model-agreement line for {target}"));
        };
        let (got, want) = if pick_rmse { (got_rmse, *rmse) } else { (got_srcc, *srcc) };
        ensure!((got - want).abs() <= tol, "{target}: {got:.4}, expected {want} +/- {tol}");
        shown.push(format!("{target} {got:.3}"));
    }
    Ok(shown.join(", "))
}

pub fn correlations() -> Verdict {
    let detail = agreement_check(&["quality", "alignment", "preservation", "accuracy"], false, 0.005)?;
    let r = replay()?;
    let secs = r.elapsed.as_secs_f64();
    ensure!(secs < 1.0, "{detail}; but eval took {secs:.3}s (limit 1s)");
    Ok(format!("{detail}; eval {:.0} ms over {} items", secs * 1000.0, 17 * ITEMS_PER_MODEL))
}

pub fn rmse() -> Verdict {
    agreement_check(&["quality", "alignment", "preservation", "accuracy"], true, 0.01)
}

fn ranks_of(board: &[Value]) -> BTreeMap<String, (u64, u64)> {
    board
        .iter()
        .map(|m| {
            let name = m["editing_model"].as_str().unwrap().to_string();
            (name, (m["rank_overall"].as_u64().unwrap(), m["rank_acc"].as_u64().unwrap()))
        })
        .collect()
}

pub fn ranks() -> Verdict {
    let r = replay()?;
    let human = ranks_of(&r.human_board);
    let ours = ranks_of(&r.ours_board);
    for (i, row) in r.rows.iter().enumerate() {
        let (h_overall, h_acc) = human[&row.model];
        ensure!(h_overall == i as u64 + 1, "human overall rank of {} is {h_overall}, printed row {}", row.model, i + 1);
        ensure!(h_overall == row.human_overall_rank, "{}: human overall {h_overall} vs {}", row.model, row.human_overall_rank);
        ensure!(h_acc == row.human_acc_rank, "{}: human acc rank {h_acc} vs {}", row.model, row.human_acc_rank);
        let (o_overall, o_acc) = ours[&row.model];
        ensure!(o_overall == row.ours_overall_rank, "{}: predicted overall {o_overall} vs {}", row.model, row.ours_overall_rank);
        ensure!(o_acc == row.ours_acc_rank, "{}: predicted acc rank {o_acc} vs {}", row.model, row.ours_acc_rank);
    }
    let swapped: Vec<&str> = r
        .rows
        .iter()
        .filter(|row| row.human_overall_rank != row.ours_overall_rank)
        .map(|row| row.model.as_str())
        .collect();
    ensure!(swapped.len() == 2, "expected exactly one swapped pair, got {swapped:?}");

    let (os, or) = r.agreement["overall-rank"];
    ensure!((os - 0.998).abs() <= 0.001, "overall-rank SRCC {os:.4}, expected 0.998 +/- 0.001");
    ensure!((or - 0.343).abs() <= 0.005, "overall-rank RMSE {or:.4}, expected 0.343 +/- 0.005");
    let (a_s, a_r) = r.agreement["acc-rank"];
    ensure!((a_s - 0.973).abs() <= 0.001, "acc-rank SRCC {a_s:.4}, expected 0.973 +/- 0.001");
    ensure!((a_r - 1.138).abs() <= 0.005, "acc-rank RMSE {a_r:.4}, expected 1.138 +/- 0.005");
    Ok(format!(
        "human ranks 1..17 in row order; predicted ranks match ({} swapped); rank SRCC {os:.3} RMSE {or:.3}; acc-rank SRCC {a_s:.3} RMSE {a_r:.3}",
        swapped.join(" <-> ")
    ))
}
