//! Seeded input generators shared by the benchmarks.

use chrono::{TimeZone, Utc};
use editbench_core::dataset::{BenchmarkItem, DimensionScores, Manifest, PromptBundle, RatingRecord, TaskId};
use editbench_core::metrics::GrayImage;
use editbench_core::scorer::{MetricRun, RunSource};
use editbench_core::subjective::{MosTable, QaConsensus};
use editbench_core::dataset::Dimension;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Paired series with a moderate monotone relation and about 10% ties.
pub fn series(n: usize, seed: u64) -> (Vec<f64>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x: Vec<f64> = (0..n).map(|_| (rng.random_range(0.0..100.0f64) * 10.0).round() / 10.0).collect();
    let y = x.iter().map(|v| v + rng.random_range(-25.0..25.0)).collect();
    (x, y)
}

/// Smooth texture plus noise on 0..255.
pub fn gray(width: usize, height: usize, seed: u64) -> GrayImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (fx, fy): (f64, f64) = (rng.random_range(0.02..0.2), rng.random_range(0.02..0.2));
    let data = (0..width * height)
        .map(|i| {
            let (x, y) = ((i % width) as f64, (i / width) as f64);
            (128.0 + 80.0 * (fx * x).sin() * (fy * y).cos() + rng.random_range(-20.0..20.0)).clamp(0.0, 255.0)
        })
        .collect();
    GrayImage::new(width, height, data).expect("non-empty image")
}

/// A full panel: every subject rates every item, with per-subject bias and
/// occasional contrarian scores.
pub fn ratings(subjects: usize, items: usize, seed: u64) -> Vec<RatingRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let levels: Vec<[f64; 3]> = (0..items)
        .map(|_| [rng.random_range(1.5..4.5), rng.random_range(1.5..4.5), rng.random_range(1.5..4.5)])
        .collect();
    let at = Utc.with_ymd_and_hms(2025, 1, 1, 0, 0, 0).unwrap();
    let mut out = Vec::with_capacity(subjects * items);
    for s in 0..subjects {
        let bias = rng.random_range(-0.4..0.4);
        for (j, level) in levels.iter().enumerate() {
            let mut v = [0.0; 3];
            for (d, slot) in v.iter_mut().enumerate() {
                let raw = if rng.random_bool(0.02) { 6.0 - level[d] } else { level[d] + bias + rng.random_range(-0.3..0.3) };
                *slot = raw.clamp(1.0, 5.0);
            }
            out.push(RatingRecord {
                subject_id: format!("s{s:03}"),
                item_id: format!("i{j:05}"),
                scores: DimensionScores {
                    quality: v[0],
                    alignment: v[1],
                    preservation: v[2],
                },
                qa_answer: rng.random_bool(0.6),
                submitted_at: at,
            });
        }
    }
    out
}

/// Human MOS, QA consensus and a noisy metric run over `models` x `per_model` items.
pub struct Evaluation {
    pub manifest: Manifest,
    pub mos: MosTable,
    pub qa: Vec<QaConsensus>,
    pub run: MetricRun,
}

pub fn evaluation(models: usize, per_model: usize, seed: u64) -> Evaluation {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut items = Vec::with_capacity(models * per_model);
    let mut mos = MosTable::default();
    let mut qa = Vec::new();
    let mut run = MetricRun::new("bench", RunSource::File);
    for m in 0..models {
        for j in 0..per_model {
            let id = format!("m{m:02}-{j:04}");
            items.push(BenchmarkItem {
                item_id: id.clone(),
                source_image: "src.png".into(),
                edited_image: "edit.png".into(),
                editing_model: format!("model-{m:02}"),
                task: TaskId::ALL[j % TaskId::ALL.len()],
                prompts: PromptBundle {
                    instruction: String::new(),
                    source_description: String::new(),
                    target_description: String::new(),
                },
                qa_question: String::new(),
                expected_answer: None,
            });
            for d in Dimension::ALL {
                let truth: f64 = rng.random_range(20.0..80.0);
                mos.insert(&id, d, truth);
                run.predictions.insert((id.clone(), d), truth + rng.random_range(-15.0..15.0));
            }
            let yes = rng.random_bool(0.6);
            qa.push(QaConsensus {
                item_id: id.clone(),
                yes_fraction: if yes { 0.8 } else { 0.2 },
                majority: yes,
                n_answers: 15,
                tie: false,
            });
            run.qa_predictions.insert(id, if rng.random_bool(0.8) { yes } else { !yes });
        }
    }
    Evaluation {
        manifest: Manifest {
            base_dir: Default::default(),
            items,
        },
        mos,
        qa,
        run,
    }
}
