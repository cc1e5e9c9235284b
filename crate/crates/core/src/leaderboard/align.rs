//! Item-level agreement between a metric run and human opinion scores.

use std::collections::{BTreeMap, HashMap};

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use super::{aggregate_run, build_leaderboard, compare_leaderboards, LeaderboardOptions, ModelAgreement};
use crate::dataset::{BenchmarkItem, Dimension, Manifest, TaskId, Tier};
use crate::scorer::{CoverageError, MetricRun, RunSource};
use crate::stats::{correlation_report, qa_accuracy, CorrelationReport, PairedSeries, StatsError};
use crate::subjective::{MosTable, QaConsensus};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AlignError {
    #[error(transparent)]
    Coverage(#[from] CoverageError),
    #[error("no MOS for item `{item_id}` ({dimension})")]
    MissingMos { item_id: String, dimension: Dimension },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(tag = "scope", content = "key", rename_all = "lowercase")]
pub enum Scope {
    Global,
    Tier(Tier),
    Task(TaskId),
}

impl Scope {
    fn contains(&self, item: &BenchmarkItem) -> bool {
        match self {
            Scope::Global => true,
            Scope::Tier(t) => item.task.tier() == *t,
            Scope::Task(t) => item.task == *t,
        }
    }

    pub fn label(&self) -> String {
        match self {
            Scope::Global => "global".into(),
            Scope::Tier(t) => t.to_string(),
            Scope::Task(t) => t.as_str().into(),
        }
    }
}

/// Which slices beyond the global one to report.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Slicing {
    pub per_tier: bool,
    pub per_task: bool,
}

impl Slicing {
    pub const GLOBAL: Slicing = Slicing {
        per_tier: false,
        per_task: false,
    };
    pub const ALL: Slicing = Slicing {
        per_tier: true,
        per_task: true,
    };
}

impl Default for Slicing {
    fn default() -> Self {
        Slicing::ALL
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SliceReport {
    pub scope: Scope,
    pub n_items: usize,
    pub dimensions: BTreeMap<Dimension, Result<CorrelationReport, StatsError>>,
    /// Share of items where the metric's yes/no matched the human majority.
    pub qa_accuracy: Option<Result<f64, StatsError>>,
    pub qa_n: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentReport {
    pub metric_name: String,
    pub source: RunSource,
    pub n_items: usize,
    /// Global first, then tiers, then tasks present in the manifest.
    pub slices: Vec<SliceReport>,
    /// Per-model agreement, when the run scores every dimension.
    pub models: Option<ModelAgreement>,
}

impl AlignmentReport {
    pub fn global(&self) -> &SliceReport {
        &self.slices[0]
    }

    pub fn slice(&self, scope: Scope) -> Option<&SliceReport> {
        self.slices.iter().find(|s| s.scope == scope)
    }
}

fn slice_report(
    scope: Scope,
    run: &MetricRun,
    mos: &MosTable,
    consensus: &HashMap<&str, bool>,
    manifest: &Manifest,
    dimensions: &[Dimension],
) -> SliceReport {
    let members: Vec<&BenchmarkItem> = manifest.items.iter().filter(|i| scope.contains(i)).collect();
    let mut reports = BTreeMap::new();
    for &dimension in dimensions {
        let mut x = Vec::with_capacity(members.len());
        let mut y = Vec::with_capacity(members.len());
        for item in &members {
            x.push(run.prediction(&item.item_id, dimension).expect("coverage checked"));
            y.push(mos.get(&item.item_id, dimension).expect("mos checked"));
        }
        let series = if x.iter().any(|v| v.is_infinite()) {
            PairedSeries::ordinal(x, y)
        } else {
            PairedSeries::new(x, y)
        };
        reports.insert(dimension, series.and_then(|s| correlation_report(&s)));
    }

    let mut predicted = Vec::new();
    let mut truth = Vec::new();
    for item in &members {
        if let (Some(&p), Some(&t)) = (run.qa_predictions.get(&item.item_id), consensus.get(item.item_id.as_str())) {
            predicted.push(p);
            truth.push(t);
        }
    }
    let qa = run.has_qa().then(|| qa_accuracy(&predicted, &truth));
    SliceReport {
        scope,
        n_items: members.len(),
        dimensions: reports,
        qa_accuracy: qa,
        qa_n: predicted.len(),
    }
}

/// Correlates a run's predictions with MOS over every item, per tier and
/// per task, and, where possible, compares model-level leaderboards.
pub fn align_metric(
    run: &MetricRun,
    mos: &MosTable,
    qa: &[QaConsensus],
    manifest: &Manifest,
    slicing: Slicing,
    options: &LeaderboardOptions,
) -> Result<AlignmentReport, AlignError> {
    run.check_coverage(manifest)?;
    let dimensions: Vec<Dimension> = run.dimensions().into_iter().collect();
    for item in &manifest.items {
        for &dimension in &dimensions {
            if mos.get(&item.item_id, dimension).is_none() {
                return Err(AlignError::MissingMos {
                    item_id: item.item_id.clone(),
                    dimension,
                });
            }
        }
    }
    let consensus: HashMap<&str, bool> = qa.iter().map(|c| (c.item_id.as_str(), c.majority)).collect();

    let mut scopes = vec![Scope::Global];
    if slicing.per_tier {
        let mut tiers: Vec<Tier> = manifest.items.iter().map(|i| i.task.tier()).collect();
        tiers.sort();
        tiers.dedup();
        scopes.extend(tiers.into_iter().map(Scope::Tier));
    }
    if slicing.per_task {
        let mut tasks: Vec<TaskId> = manifest.items.iter().map(|i| i.task).collect();
        tasks.sort();
        tasks.dedup();
        scopes.extend(tasks.into_iter().map(Scope::Task));
    }

    let slices = scopes
        .into_par_iter()
        .map(|scope| slice_report(scope, run, mos, &consensus, manifest, &dimensions))
        .collect();

    let models = if dimensions.len() == Dimension::ALL.len() {
        match (
            build_leaderboard(mos, qa, manifest, options),
            aggregate_run(run, manifest, options),
        ) {
            (Ok(human), Ok(metric)) => compare_leaderboards(&human, &metric).ok(),
            (Err(e), _) | (_, Err(e)) => {
                tracing::debug!(error = %e, "model-level comparison skipped");
                None
            }
        }
    } else {
        None
    };

    Ok(AlignmentReport {
        metric_name: run.metric_name.clone(),
        source: run.source,
        n_items: manifest.items.len(),
        slices,
        models,
    })
}
