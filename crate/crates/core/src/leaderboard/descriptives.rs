//! Summary tables over a MOS table: score histograms and per-task and
//! per-model means, written as CSV.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::dataset::{Dimension, Manifest, TaskId, Tier};
use crate::subjective::MosTable;

pub const BIN_WIDTH: f64 = 5.0;
pub const BINS: usize = 20;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct GroupSummary {
    pub items: usize,
    /// Mean MOS per dimension over items that have one.
    pub means: [Option<f64>; 3],
}

#[derive(Debug, Clone, PartialEq)]
pub struct Descriptives {
    /// Counts per 5-point bin and dimension; the last bin includes 100.
    pub histogram: [[usize; 3]; BINS],
    pub per_task: BTreeMap<TaskId, GroupSummary>,
    pub per_model: BTreeMap<String, GroupSummary>,
}

pub fn bin_of(mos: f64) -> usize {
    ((mos / BIN_WIDTH).floor().max(0.0) as usize).min(BINS - 1)
}

fn summarize<'a>(ids: impl Iterator<Item = &'a str>, mos: &MosTable) -> GroupSummary {
    let mut sums = [0.0; 3];
    let mut counts = [0usize; 3];
    let mut items = 0;
    for id in ids {
        items += 1;
        for d in Dimension::ALL {
            if let Some(v) = mos.get(id, d) {
                sums[d.index()] += v;
                counts[d.index()] += 1;
            }
        }
    }
    let mut means = [None; 3];
    for i in 0..3 {
        if counts[i] > 0 {
            means[i] = Some(sums[i] / counts[i] as f64);
        }
    }
    GroupSummary { items, means }
}

/// Tallies over the manifest's items. Every task appears in `per_task`,
/// with zero items if the manifest has none.
pub fn descriptives(mos: &MosTable, manifest: &Manifest) -> Descriptives {
    let mut histogram = [[0usize; 3]; BINS];
    for item in &manifest.items {
        for d in Dimension::ALL {
            if let Some(v) = mos.get(&item.item_id, d) {
                histogram[bin_of(v)][d.index()] += 1;
            }
        }
    }
    let per_task = TaskId::ALL
        .iter()
        .map(|&task| {
            let ids = manifest.items.iter().filter(|i| i.task == task).map(|i| i.item_id.as_str());
            (task, summarize(ids, mos))
        })
        .collect();
    let mut models: BTreeMap<String, Vec<&str>> = BTreeMap::new();
    for item in &manifest.items {
        models.entry(item.editing_model.clone()).or_default().push(&item.item_id);
    }
    let per_model = models
        .into_iter()
        .map(|(m, ids)| (m, summarize(ids.into_iter(), mos)))
        .collect();
    Descriptives {
        histogram,
        per_task,
        per_model,
    }
}

fn fmt_mean(v: Option<f64>) -> String {
    v.map(|m| format!("{m:.4}")).unwrap_or_default()
}

/// Writes `mos_histogram.csv`, `task_summary.csv` and `model_summary.csv`
/// into `dir` and returns their paths.
pub fn export_descriptives(mos: &MosTable, manifest: &Manifest, dir: &Path) -> Result<Vec<PathBuf>, csv::Error> {
    std::fs::create_dir_all(dir)?;
    let stats = descriptives(mos, manifest);

    let histogram = dir.join("mos_histogram.csv");
    let mut w = csv::Writer::from_path(&histogram)?;
    w.write_record(["bin_start", "bin_end", "quality", "alignment", "preservation"])?;
    for (i, counts) in stats.histogram.iter().enumerate() {
        let start = i as f64 * BIN_WIDTH;
        w.write_record([
            format!("{start}"),
            format!("{}", start + BIN_WIDTH),
            counts[0].to_string(),
            counts[1].to_string(),
            counts[2].to_string(),
        ])?;
    }
    w.flush()?;

    let tasks = dir.join("task_summary.csv");
    let mut w = csv::Writer::from_path(&tasks)?;
    w.write_record(["task", "tier", "items", "mean_quality", "mean_alignment", "mean_preservation"])?;
    for (task, s) in &stats.per_task {
        let tier: Tier = task.tier();
        w.write_record([
            task.as_str().to_string(),
            tier.to_string(),
            s.items.to_string(),
            fmt_mean(s.means[0]),
            fmt_mean(s.means[1]),
            fmt_mean(s.means[2]),
        ])?;
    }
    w.flush()?;

    let models = dir.join("model_summary.csv");
    let mut w = csv::Writer::from_path(&models)?;
    w.write_record(["editing_model", "items", "mean_quality", "mean_alignment", "mean_preservation"])?;
    for (model, s) in &stats.per_model {
        w.write_record([
            model.clone(),
            s.items.to_string(),
            fmt_mean(s.means[0]),
            fmt_mean(s.means[1]),
            fmt_mean(s.means[2]),
        ])?;
    }
    w.flush()?;

    Ok(vec![histogram, tasks, models])
}
