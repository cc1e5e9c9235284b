//! Acquisition of candidate-metric predictions.
//!
//! A [`MetricRun`] holds per-item, per-dimension predictions and optional
//! yes/no answers, whichever way they were obtained: computed in-process by a
//! reference metric ([`builtin`]), read from a score file ([`file`]), or
//! requested from a scoring service over HTTP ([`remote`]). [`mock`] is a
//! deterministic scoring service for tests and demos.

pub mod builtin;
pub mod file;
pub mod mock;
pub mod remote;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{Dimension, Manifest};

pub use builtin::run_builtin;
pub use file::{load_score_file, parse_score_file, ScoreFileError};
pub use remote::{run_remote, RemoteConfig, RemoteError, ScoreRequest, ScoreResponse};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunSource {
    Builtin,
    File,
    Remote,
}

impl fmt::Display for RunSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RunSource::Builtin => "builtin",
            RunSource::File => "file",
            RunSource::Remote => "remote",
        })
    }
}

/// A failure attributed to one item (and dimension, for scored requests).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ItemFailure {
    pub item_id: String,
    pub dimension: Option<Dimension>,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CoverageError {
    #[error("prediction for unknown item `{item_id}`")]
    UnknownItem { item_id: String },
    #[error("{} lacks predictions for {} item(s): {}", .dimension.map(|d| d.as_str()).unwrap_or("qa"), .missing.len(), preview(.missing))]
    PartialCoverage {
        /// `None` for yes/no answers.
        dimension: Option<Dimension>,
        missing: Vec<String>,
    },
    #[error("run carries no predictions")]
    Empty,
}

fn preview(ids: &[String]) -> String {
    const SHOWN: usize = 5;
    let mut out = ids.iter().take(SHOWN).cloned().collect::<Vec<_>>().join(", ");
    if ids.len() > SHOWN {
        out.push_str(", ...");
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricRun {
    pub metric_name: String,
    pub source: RunSource,
    pub predictions: BTreeMap<(String, Dimension), f64>,
    pub qa_predictions: BTreeMap<String, bool>,
    pub metadata: BTreeMap<String, String>,
    pub failures: Vec<ItemFailure>,
    /// Score-file rows that overwrote an earlier row for the same key.
    pub duplicate_rows: usize,
    /// Remote requests that were retried.
    pub retries: usize,
}

impl MetricRun {
    pub fn new(metric_name: impl Into<String>, source: RunSource) -> Self {
        MetricRun {
            metric_name: metric_name.into(),
            source,
            predictions: BTreeMap::new(),
            qa_predictions: BTreeMap::new(),
            metadata: BTreeMap::new(),
            failures: Vec::new(),
            duplicate_rows: 0,
            retries: 0,
        }
    }

    pub fn prediction(&self, item_id: &str, dimension: Dimension) -> Option<f64> {
        self.predictions
            .get(&(item_id.to_string(), dimension))
            .copied()
    }

    /// Dimensions with at least one prediction.
    pub fn dimensions(&self) -> BTreeSet<Dimension> {
        self.predictions.keys().map(|(_, d)| *d).collect()
    }

    pub fn has_qa(&self) -> bool {
        !self.qa_predictions.is_empty()
    }

    /// Every referenced item must exist, and every claimed dimension (and the
    /// QA answers, if any) must cover the whole manifest.
    pub fn check_coverage(&self, manifest: &Manifest) -> Result<(), CoverageError> {
        if self.predictions.is_empty() && self.qa_predictions.is_empty() {
            return Err(CoverageError::Empty);
        }
        let known = manifest.item_ids();
        let referenced = self
            .predictions
            .keys()
            .map(|(id, _)| id)
            .chain(self.qa_predictions.keys());
        for id in referenced {
            if !known.contains(id.as_str()) {
                return Err(CoverageError::UnknownItem { item_id: id.clone() });
            }
        }
        for dimension in self.dimensions() {
            let missing: Vec<String> = manifest
                .items
                .iter()
                .filter(|item| self.prediction(&item.item_id, dimension).is_none())
                .map(|item| item.item_id.clone())
                .collect();
            if !missing.is_empty() {
                return Err(CoverageError::PartialCoverage {
                    dimension: Some(dimension),
                    missing,
                });
            }
        }
        if self.has_qa() {
            let missing: Vec<String> = manifest
                .items
                .iter()
                .filter(|item| !self.qa_predictions.contains_key(&item.item_id))
                .map(|item| item.item_id.clone())
                .collect();
            if !missing.is_empty() {
                return Err(CoverageError::PartialCoverage {
                    dimension: None,
                    missing,
                });
            }
        }
        Ok(())
    }

    /// Writes the run in score-file form, one row per (item, dimension)
    /// followed by one row per yes/no answer.
    pub fn write_score_file<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for ((item_id, dimension), score) in &self.predictions {
            let row = file::ScoreRow {
                item_id: Some(item_id.clone()),
                dimension: Some(*dimension),
                score: Some(file::WireScore(*score)),
                qa_answer: None,
            };
            serde_json::to_writer(&mut out, &row)?;
            out.write_all(b"\n")?;
        }
        for (item_id, answer) in &self.qa_predictions {
            let row = file::ScoreRow {
                item_id: Some(item_id.clone()),
                dimension: None,
                score: None,
                qa_answer: Some(*answer),
            };
            serde_json::to_writer(&mut out, &row)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}
