//! Pre-computed score files: line-delimited JSON rows of
//! `{"item_id", "dimension", "score"}` and/or `{"item_id", "qa_answer"}`.

use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{CoverageError, MetricRun, RunSource};
use crate::dataset::{Dimension, Manifest};

#[derive(Debug, Error)]
pub enum ScoreFileError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Coverage(#[from] CoverageError),
}

/// A score that may be the infinite PSNR sentinel, written as `"inf"`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct WireScore(pub f64);

impl Serialize for WireScore {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        if self.0 == f64::INFINITY {
            s.serialize_str("inf")
        } else if self.0 == f64::NEG_INFINITY {
            s.serialize_str("-inf")
        } else {
            s.serialize_f64(self.0)
        }
    }
}

impl<'de> Deserialize<'de> for WireScore {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Number(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Number(v) => Ok(WireScore(v)),
            Raw::Text(t) if t == "inf" || t == "+inf" => Ok(WireScore(f64::INFINITY)),
            Raw::Text(t) if t == "-inf" => Ok(WireScore(f64::NEG_INFINITY)),
            Raw::Text(t) => Err(serde::de::Error::custom(format!("invalid score `{t}`"))),
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub(crate) struct ScoreRow {
    pub item_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dimension: Option<Dimension>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<WireScore>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub qa_answer: Option<bool>,
}

pub fn load_score_file(path: &Path, manifest: &Manifest) -> Result<MetricRun, ScoreFileError> {
    let file = File::open(path).map_err(|source| ScoreFileError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "scores".into());
    let mut run = parse_score_file(BufReader::new(file), &name, path, manifest)?;
    run.metadata
        .insert("path".into(), path.to_string_lossy().into_owned());
    Ok(run)
}

/// Parses and validates a score file. Repeated (item, dimension) rows keep
/// the last value and are counted in `duplicate_rows`.
pub fn parse_score_file<R: BufRead>(
    reader: R,
    metric_name: &str,
    origin: &Path,
    manifest: &Manifest,
) -> Result<MetricRun, ScoreFileError> {
    let mut run = MetricRun::new(metric_name, RunSource::File);
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let text = line.map_err(|source| ScoreFileError::Io {
            path: origin.to_path_buf(),
            source,
        })?;
        if text.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| ScoreFileError::Parse {
            line: line_no,
            message,
        };
        let row: ScoreRow = serde_json::from_str(&text).map_err(|e| parse_err(e.to_string()))?;
        let item_id = row
            .item_id
            .ok_or_else(|| parse_err("missing field `item_id`".into()))?;
        let mut used = false;
        match (row.dimension, row.score) {
            (Some(dimension), Some(WireScore(score))) => {
                if score.is_nan() {
                    return Err(parse_err("score is NaN".into()));
                }
                if run
                    .predictions
                    .insert((item_id.clone(), dimension), score)
                    .is_some()
                {
                    run.duplicate_rows += 1;
                }
                used = true;
            }
            (Some(_), None) => return Err(parse_err("`dimension` without `score`".into())),
            (None, Some(_)) => return Err(parse_err("`score` without `dimension`".into())),
            (None, None) => {}
        }
        if let Some(answer) = row.qa_answer {
            if run.qa_predictions.insert(item_id.clone(), answer).is_some() && !used {
                run.duplicate_rows += 1;
            }
            used = true;
        }
        if !used {
            return Err(parse_err("row carries neither a score nor a qa_answer".into()));
        }
    }
    if run.duplicate_rows > 0 {
        tracing::warn!(
            duplicates = run.duplicate_rows,
            "score file repeats keys; last row wins"
        );
    }
    run.check_coverage(manifest)?;
    Ok(run)
}
