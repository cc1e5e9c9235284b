#![allow(dead_code)]

use std::path::{Path, PathBuf};

use chrono::{TimeZone, Utc};
use editbench_core::dataset::{BenchmarkItem, DimensionScores, Manifest, PromptBundle, RatingRecord, TaskId};
use editbench_core::metrics::GrayImage;
use rand::Rng;

pub fn item(id: &str, model: &str, task: TaskId) -> BenchmarkItem {
    BenchmarkItem {
        item_id: id.to_string(),
        source_image: PathBuf::from(format!("{id}_src.png")),
        edited_image: PathBuf::from(format!("{id}_edit.png")),
        editing_model: model.to_string(),
        task,
        prompts: PromptBundle {
            instruction: format!("edit {id}"),
            source_description: String::new(),
            target_description: String::new(),
        },
        qa_question: "Was the edit applied?".into(),
        expected_answer: None,
    }
}

pub fn write_rgb(path: &Path, w: u32, h: u32, f: impl Fn(u32, u32) -> [u8; 3]) {
    let img = image::RgbImage::from_fn(w, h, |x, y| image::Rgb(f(x, y)));
    img.save(path).unwrap();
}

pub fn write_gray(path: &Path, img: &GrayImage) {
    let buf = image::GrayImage::from_fn(img.width() as u32, img.height() as u32, |x, y| {
        image::Luma([img.at(x as usize, y as usize).round() as u8])
    });
    buf.save(path).unwrap();
}

pub fn random_gray<R: Rng>(rng: &mut R, w: usize, h: usize) -> GrayImage {
    let data = (0..w * h).map(|_| rng.random_range(0..=255u8) as f64).collect();
    GrayImage::new(w, h, data).unwrap()
}

/// Writes a small image pair per item under `dir` and returns the manifest.
pub fn manifest_with_images(dir: &Path, items: Vec<BenchmarkItem>, size: u32) -> Manifest {
    for (n, it) in items.iter().enumerate() {
        let n = n as u32;
        write_rgb(&dir.join(&it.source_image), size, size, |x, y| {
            [((x * 7 + y * 3 + n) % 256) as u8, ((x * y) % 256) as u8, 40]
        });
        write_rgb(&dir.join(&it.edited_image), size, size, |x, y| {
            [((x * 7 + y * 5 + 2 * n) % 256) as u8, ((x + y) % 256) as u8, 90]
        });
    }
    Manifest {
        base_dir: dir.to_path_buf(),
        items,
    }
}

pub fn rating(subject: &str, item: &str, scores: [f64; 3], yes: bool) -> RatingRecord {
    RatingRecord {
        subject_id: subject.to_string(),
        item_id: item.to_string(),
        scores: DimensionScores {
            quality: scores[0],
            alignment: scores[1],
            preservation: scores[2],
        },
        qa_answer: yes,
        submitted_at: Utc.with_ymd_and_hms(2025, 3, 1, 12, 0, 0).unwrap(),
    }
}

#[derive(Debug, Clone)]
pub struct ModelRow {
    pub model: String,
    pub human: [f64; 3],
    pub ours: [f64; 3],
    /// Second and third metric columns per dimension.
    pub baselines: [[f64; 2]; 3],
    pub human_accuracy: f64,
    pub ours_accuracy: f64,
    pub other_accuracy: [f64; 2],
    pub human_overall_rank: usize,
    pub ours_overall_rank: usize,
    pub human_acc_rank: usize,
    pub ours_acc_rank: usize,
}

pub fn model_rows() -> Vec<ModelRow> {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data/model_scores.csv");
    let mut reader = csv::Reader::from_path(path).unwrap();
    reader
        .records()
        .map(|r| {
            let r = r.unwrap();
            let f = |i: usize| r[i].parse::<f64>().unwrap();
            let u = |i: usize| r[i].parse::<usize>().unwrap();
            ModelRow {
                model: r[0].to_string(),
                human: [f(1), f(5), f(9)],
                ours: [f(2), f(6), f(10)],
                baselines: [[f(3), f(4)], [f(7), f(8)], [f(11), f(12)]],
                human_accuracy: f(13),
                ours_accuracy: f(14),
                other_accuracy: [f(15), f(16)],
                human_overall_rank: u(17),
                ours_overall_rank: u(18),
                human_acc_rank: u(19),
                ours_acc_rank: u(20),
            }
        })
        .collect()
}
