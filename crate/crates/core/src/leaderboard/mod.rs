//! Editing-model leaderboards and metric-versus-human agreement reports.
//!
//! Models are ranked by a weighted geometric mean of their mean perceptual
//! quality, editing alignment and attribute preservation scores, with the
//! alignment term weighted highest by default (0.3 / 0.4 / 0.3).

pub mod align;
pub mod descriptives;
pub mod report;

use std::collections::{BTreeMap, HashMap};
use std::str::FromStr;

use serde::Serialize;
use thiserror::Error;

use crate::dataset::{Dimension, Manifest};
use crate::scorer::MetricRun;
use crate::stats::{correlation_report, CorrelationReport, PairedSeries, StatsError};
use crate::subjective::{MosTable, QaConsensus};

pub use align::{align_metric, AlignError, AlignmentReport, Scope, SliceReport, Slicing};
pub use descriptives::{descriptives, export_descriptives, Descriptives};

/// Lower bound substituted for non-positive mean scores before the
/// geometric mean is taken.
pub const DEFAULT_FLOOR: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LeaderboardError {
    #[error("invalid weights: {0}")]
    InvalidWeights(String),
    #[error("overall score needs positive inputs, got ({q}, {e}, {p})")]
    NonPositiveInput { q: f64, e: f64, p: f64 },
    #[error("item `{item_id}` has no {dimension} score")]
    MissingDimension { item_id: String, dimension: Dimension },
    #[error("leaderboards cover different models: {0}")]
    ModelMismatch(String),
    #[error("no models to rank")]
    Empty,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OverallWeights {
    pub quality: f64,
    pub alignment: f64,
    pub preservation: f64,
}

impl Default for OverallWeights {
    fn default() -> Self {
        OverallWeights {
            quality: 0.3,
            alignment: 0.4,
            preservation: 0.3,
        }
    }
}

impl OverallWeights {
    /// Strictly positive weights summing to one.
    pub fn new(quality: f64, alignment: f64, preservation: f64) -> Result<Self, LeaderboardError> {
        let w = Self::relaxed(quality, alignment, preservation)?;
        if [quality, alignment, preservation].iter().any(|v| *v <= 0.0) {
            return Err(LeaderboardError::InvalidWeights("weights must be positive".into()));
        }
        Ok(w)
    }

    /// Non-negative weights summing to one; a zero drops that dimension.
    pub fn relaxed(quality: f64, alignment: f64, preservation: f64) -> Result<Self, LeaderboardError> {
        let all = [quality, alignment, preservation];
        if all.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(LeaderboardError::InvalidWeights(format!("{all:?} has a negative or non-finite weight")));
        }
        let sum: f64 = all.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(LeaderboardError::InvalidWeights(format!("weights sum to {sum}, not 1")));
        }
        Ok(OverallWeights {
            quality,
            alignment,
            preservation,
        })
    }

    pub fn get(&self, dimension: Dimension) -> f64 {
        match dimension {
            Dimension::Quality => self.quality,
            Dimension::Alignment => self.alignment,
            Dimension::Preservation => self.preservation,
        }
    }
}

impl FromStr for OverallWeights {
    type Err = LeaderboardError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<f64> = s
            .split(',')
            .map(|p| p.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|e| LeaderboardError::InvalidWeights(format!("`{s}`: {e}")))?;
        match parts[..] {
            [q, e, p] => OverallWeights::new(q, e, p),
            _ => Err(LeaderboardError::InvalidWeights(format!("`{s}`: expected three comma-separated weights"))),
        }
    }
}

/// Weighted geometric mean `q^wq * e^we * p^wp`.
pub fn overall_score(q: f64, e: f64, p: f64, weights: &OverallWeights) -> Result<f64, LeaderboardError> {
    if !(q > 0.0 && e > 0.0 && p > 0.0) || ![q, e, p].iter().all(|v| v.is_finite()) {
        return Err(LeaderboardError::NonPositiveInput { q, e, p });
    }
    Ok(q.powf(weights.quality) * e.powf(weights.alignment) * p.powf(weights.preservation))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LeaderboardOptions {
    pub weights: OverallWeights,
    pub floor: f64,
}

impl Default for LeaderboardOptions {
    fn default() -> Self {
        LeaderboardOptions {
            weights: OverallWeights::default(),
            floor: DEFAULT_FLOOR,
        }
    }
}

/// Per-model inputs to ranking.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelScores {
    pub editing_model: String,
    /// Mean score per dimension, in `Dimension::ALL` order.
    pub means: [f64; 3],
    /// Share of items whose yes/no outcome matched the expected answer.
    pub qa_accuracy: f64,
    pub n_items: usize,
    pub qa_items: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelAggregate {
    pub editing_model: String,
    pub quality: f64,
    pub alignment: f64,
    pub preservation: f64,
    pub qa_accuracy: f64,
    pub overall: f64,
    pub rank_overall: usize,
    pub rank_acc: usize,
    pub n_items: usize,
}

impl ModelAggregate {
    pub fn mean(&self, dimension: Dimension) -> f64 {
        match dimension {
            Dimension::Quality => self.quality,
            Dimension::Alignment => self.alignment,
            Dimension::Preservation => self.preservation,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Leaderboard {
    /// Sorted by `rank_overall`.
    pub models: Vec<ModelAggregate>,
    pub weights: OverallWeights,
    /// Mean scores lifted to the floor before the geometric mean.
    pub floored: usize,
}

impl Leaderboard {
    pub fn get(&self, model: &str) -> Option<&ModelAggregate> {
        self.models.iter().find(|m| m.editing_model == model)
    }
}

/// Computes overall scores and assigns both rankings.
///
/// Overall rank orders by overall score, descending, ties broken by model
/// name. Accuracy rank orders by accuracy, then overall score, then name.
pub fn rank_models(scores: Vec<ModelScores>, options: &LeaderboardOptions) -> Result<Leaderboard, LeaderboardError> {
    if scores.is_empty() {
        return Err(LeaderboardError::Empty);
    }
    let mut floored = 0;
    let mut models = Vec::with_capacity(scores.len());
    for s in scores {
        let lifted = s.means.map(|v| {
            if v > 0.0 {
                v
            } else {
                floored += 1;
                options.floor
            }
        });
        let overall = overall_score(lifted[0], lifted[1], lifted[2], &options.weights)?;
        models.push(ModelAggregate {
            editing_model: s.editing_model,
            quality: s.means[0],
            alignment: s.means[1],
            preservation: s.means[2],
            qa_accuracy: s.qa_accuracy,
            overall,
            rank_overall: 0,
            rank_acc: 0,
            n_items: s.n_items,
        });
    }
    if floored > 0 {
        tracing::warn!(floored, floor = options.floor, "non-positive mean scores lifted to floor");
    }

    let by_overall = |a: &ModelAggregate, b: &ModelAggregate| {
        b.overall
            .total_cmp(&a.overall)
            .then_with(|| a.editing_model.cmp(&b.editing_model))
    };
    let mut acc_order: Vec<usize> = (0..models.len()).collect();
    acc_order.sort_by(|&i, &j| {
        let (a, b) = (&models[i], &models[j]);
        b.qa_accuracy
            .total_cmp(&a.qa_accuracy)
            .then_with(|| by_overall(a, b))
    });
    for (rank, idx) in acc_order.into_iter().enumerate() {
        models[idx].rank_acc = rank + 1;
    }
    models.sort_by(by_overall);
    for (rank, model) in models.iter_mut().enumerate() {
        model.rank_overall = rank + 1;
    }
    Ok(Leaderboard {
        models,
        weights: options.weights,
        floored,
    })
}

fn group_by_model(manifest: &Manifest) -> BTreeMap<&str, Vec<usize>> {
    let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (idx, item) in manifest.items.iter().enumerate() {
        groups.entry(item.editing_model.as_str()).or_default().push(idx);
    }
    groups
}

/// Human leaderboard: per-model arithmetic means of item MOSs, and the
/// share of items whose majority answer matches the expected answer.
pub fn build_leaderboard(
    mos: &MosTable,
    qa: &[QaConsensus],
    manifest: &Manifest,
    options: &LeaderboardOptions,
) -> Result<Leaderboard, LeaderboardError> {
    let consensus: HashMap<&str, bool> = qa.iter().map(|c| (c.item_id.as_str(), c.majority)).collect();
    let mut scores = Vec::new();
    for (model, members) in group_by_model(manifest) {
        let mut sums = [0.0; 3];
        for &idx in &members {
            let item = &manifest.items[idx];
            for dimension in Dimension::ALL {
                sums[dimension.index()] += mos.get(&item.item_id, dimension).ok_or_else(|| {
                    LeaderboardError::MissingDimension {
                        item_id: item.item_id.clone(),
                        dimension,
                    }
                })?;
            }
        }
        let (hits, answered) = members.iter().fold((0usize, 0usize), |(hits, answered), &idx| {
            let item = &manifest.items[idx];
            match consensus.get(item.item_id.as_str()) {
                Some(&majority) => (hits + usize::from(majority == item.expected_answer()), answered + 1),
                None => (hits, answered),
            }
        });
        scores.push(ModelScores {
            editing_model: model.to_string(),
            means: sums.map(|s| s / members.len() as f64),
            qa_accuracy: if answered > 0 { hits as f64 / answered as f64 } else { 0.0 },
            n_items: members.len(),
            qa_items: answered,
        });
    }
    rank_models(scores, options)
}

/// Metric leaderboard: per-model means of a run's predictions, and the
/// share of items the metric judged as matching the expected answer.
pub fn aggregate_run(run: &MetricRun, manifest: &Manifest, options: &LeaderboardOptions) -> Result<Leaderboard, LeaderboardError> {
    let mut scores = Vec::new();
    for (model, members) in group_by_model(manifest) {
        let mut sums = [0.0; 3];
        let mut hits = 0;
        let mut answered = 0;
        for &idx in &members {
            let item = &manifest.items[idx];
            for dimension in Dimension::ALL {
                sums[dimension.index()] += run.prediction(&item.item_id, dimension).ok_or_else(|| {
                    LeaderboardError::MissingDimension {
                        item_id: item.item_id.clone(),
                        dimension,
                    }
                })?;
            }
            if let Some(&answer) = run.qa_predictions.get(&item.item_id) {
                answered += 1;
                hits += usize::from(answer == item.expected_answer());
            }
        }
        scores.push(ModelScores {
            editing_model: model.to_string(),
            means: sums.map(|s| s / members.len() as f64),
            qa_accuracy: if answered > 0 { hits as f64 / answered as f64 } else { 0.0 },
            n_items: members.len(),
            qa_items: answered,
        });
    }
    rank_models(scores, options)
}

/// Agreement between a metric's leaderboard and the human one, computed
/// over models. Accuracy values are compared in percent.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelAgreement {
    pub n_models: usize,
    pub dimensions: BTreeMap<Dimension, Result<CorrelationReport, StatsError>>,
    pub accuracy: Result<CorrelationReport, StatsError>,
    pub overall_rank: Result<CorrelationReport, StatsError>,
    pub acc_rank: Result<CorrelationReport, StatsError>,
}

pub fn compare_leaderboards(human: &Leaderboard, metric: &Leaderboard) -> Result<ModelAgreement, LeaderboardError> {
    let mut names: Vec<&str> = human.models.iter().map(|m| m.editing_model.as_str()).collect();
    names.sort_unstable();
    let mut other: Vec<&str> = metric.models.iter().map(|m| m.editing_model.as_str()).collect();
    other.sort_unstable();
    if names != other {
        return Err(LeaderboardError::ModelMismatch(format!("{names:?} vs {other:?}")));
    }
    let pairs: Vec<(&ModelAggregate, &ModelAggregate)> = names
        .iter()
        .map(|n| (metric.get(n).expect("same names"), human.get(n).expect("same names")))
        .collect();
    let report = |f: &dyn Fn(&ModelAggregate) -> f64| {
        let x = pairs.iter().map(|(m, _)| f(m)).collect();
        let y = pairs.iter().map(|(_, h)| f(h)).collect();
        PairedSeries::new(x, y).and_then(|s| correlation_report(&s))
    };
    let dimensions = Dimension::ALL
        .into_iter()
        .map(|d| (d, report(&|m| m.mean(d))))
        .collect();
    Ok(ModelAgreement {
        n_models: pairs.len(),
        dimensions,
        accuracy: report(&|m| 100.0 * m.qa_accuracy),
        overall_rank: report(&|m| m.rank_overall as f64),
        acc_rank: report(&|m| m.rank_acc as f64),
    })
}
