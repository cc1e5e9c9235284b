//! Raw ratings to mean opinion scores.
//!
//! The pipeline runs in four steps:
//!
//! 1. [`flag_outliers`]: per item and dimension, a rating is an outlier when it
//!    lies more than `k` standard deviations from the item mean, with `k`
//!    chosen by a kurtosis normality check (2 if normal, sqrt(20) otherwise).
//! 2. [`screen_subjects`]: a subject whose outlier share exceeds the reject
//!    fraction is dropped entirely.
//! 3. [`compute_mos`]: surviving ratings are z-scored per subject, averaged
//!    per item and mapped linearly from z in [-3, 3] onto [0, 100].
//! 4. [`qa_consensus`]: yes/no answers of surviving subjects are reduced to a
//!    majority label per item.
//!
//! Every step iterates ratings in `(item_id, subject_id)` order, so the
//! output does not depend on the order records arrived in.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{Dimension, RatingRecord};

#[derive(Debug, Error)]
pub enum SubjectiveError {
    #[error("invalid outlier policy: {0}")]
    InvalidPolicy(String),
    #[error("no ratings to process")]
    EmptyInput,
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OutlierPolicy {
    pub normal_k: f64,
    pub nonnormal_k: f64,
    pub subject_reject_fraction: f64,
    /// Inclusive kurtosis band inside which an item's ratings count as normal.
    pub normality_kurtosis_band: (f64, f64),
}

impl Default for OutlierPolicy {
    fn default() -> Self {
        OutlierPolicy {
            normal_k: 2.0,
            nonnormal_k: 20f64.sqrt(),
            subject_reject_fraction: 0.05,
            normality_kurtosis_band: (2.0, 4.0),
        }
    }
}

impl OutlierPolicy {
    pub fn validate(&self) -> Result<(), SubjectiveError> {
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !positive(self.normal_k) || !positive(self.nonnormal_k) {
            return Err(SubjectiveError::InvalidPolicy(
                "outlier multipliers must be positive".into(),
            ));
        }
        let f = self.subject_reject_fraction;
        if !(f > 0.0 && f < 1.0) {
            return Err(SubjectiveError::InvalidPolicy(format!(
                "subject reject fraction {f} outside (0, 1)"
            )));
        }
        let (lo, hi) = self.normality_kurtosis_band;
        if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
            return Err(SubjectiveError::InvalidPolicy(format!(
                "kurtosis band [{lo}, {hi}] is empty"
            )));
        }
        Ok(())
    }

    /// Strict test: exactly the reject fraction is kept.
    pub fn rejects(&self, flagged: usize, total: usize) -> bool {
        total > 0 && flagged as f64 / total as f64 > self.subject_reject_fraction
    }

    fn multiplier(&self, kurtosis: f64) -> (f64, bool) {
        let (lo, hi) = self.normality_kurtosis_band;
        if (lo..=hi).contains(&kurtosis) {
            (self.normal_k, true)
        } else {
            (self.nonnormal_k, false)
        }
    }
}

/// Whether subject mean/std for z-scoring are taken per dimension or over
/// all three dimensions together.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NormalizationScope {
    #[default]
    PerDimension,
    Pooled,
}

/// Screening statistics of one item on one dimension.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ItemDimensionStats {
    pub item_id: String,
    pub dimension: Dimension,
    pub n: usize,
    pub mean: f64,
    pub std: f64,
    /// Pearson (non-excess) kurtosis; absent when fewer than 2 ratings or zero spread.
    pub kurtosis: Option<f64>,
    pub normal: bool,
    pub flagged: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutlierFlags {
    /// Indexed like the input ratings, one flag per dimension.
    pub flags: Vec<[bool; 3]>,
    pub item_stats: Vec<ItemDimensionStats>,
}

impl OutlierFlags {
    pub fn is_flagged(&self, rating: usize, dimension: Dimension) -> bool {
        self.flags[rating][dimension.index()]
    }

    pub fn total(&self) -> usize {
        self.flags.iter().flatten().filter(|f| **f).count()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SubjectProfile {
    pub subject_id: String,
    /// Raw mean rating per dimension, in `Dimension::ALL` order.
    pub mean: [f64; 3],
    /// Raw sample standard deviation per dimension.
    pub std: [f64; 3],
    pub n_ratings: usize,
    pub n_flagged: usize,
    pub outlier_fraction: f64,
    pub excluded: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MosRecord {
    pub item_id: String,
    pub dimension: Dimension,
    pub mos: f64,
    pub n_valid: usize,
    pub n_removed: usize,
    pub raw_mean: f64,
    pub raw_std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QaConsensus {
    pub item_id: String,
    pub yes_fraction: f64,
    pub majority: bool,
    pub n_answers: usize,
    /// Set when exactly half the answers were yes; majority then resolves to yes.
    #[serde(default)]
    pub tie: bool,
}

/// An item/dimension left with no valid ratings after screening.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub struct NoValidRatings {
    pub item_id: String,
    pub dimension: Option<Dimension>,
}

/// Rating indices sorted by `(item_id, subject_id)`.
fn canonical_order(ratings: &[RatingRecord]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..ratings.len()).collect();
    order.sort_by(|&a, &b| {
        let (ra, rb) = (&ratings[a], &ratings[b]);
        ra.item_id
            .cmp(&rb.item_id)
            .then_with(|| ra.subject_id.cmp(&rb.subject_id))
    });
    order
}

/// Groups of rating indices sharing an item, in canonical order.
fn by_item<'a>(ratings: &'a [RatingRecord], order: &[usize]) -> Vec<(&'a str, Vec<usize>)> {
    let mut groups: Vec<(&str, Vec<usize>)> = Vec::new();
    for &idx in order {
        let item = ratings[idx].item_id.as_str();
        match groups.last_mut() {
            Some((last, members)) if *last == item => members.push(idx),
            _ => groups.push((item, vec![idx])),
        }
    }
    groups
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Sample standard deviation (n - 1); zero for fewer than two values.
fn sample_std(values: &[f64], mean: f64) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    (ss / (values.len() - 1) as f64).sqrt()
}

/// Pearson kurtosis m4 / m2^2 with population central moments.
fn kurtosis(values: &[f64], mean: f64) -> Option<f64> {
    let n = values.len() as f64;
    let m2 = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let m4 = values.iter().map(|v| (v - mean).powi(4)).sum::<f64>() / n;
    (m2 > 0.0).then(|| m4 / (m2 * m2))
}

pub fn flag_outliers(ratings: &[RatingRecord], policy: &OutlierPolicy) -> OutlierFlags {
    let order = canonical_order(ratings);
    let mut flags = vec![[false; 3]; ratings.len()];
    let mut item_stats = Vec::new();

    for (item_id, members) in by_item(ratings, &order) {
        for dimension in Dimension::ALL {
            let values: Vec<f64> = members
                .iter()
                .map(|&i| ratings[i].scores.get(dimension))
                .collect();
            let m = mean(&values);
            let s = sample_std(&values, m);
            let mut stats = ItemDimensionStats {
                item_id: item_id.to_string(),
                dimension,
                n: values.len(),
                mean: m,
                std: s,
                kurtosis: None,
                normal: false,
                flagged: 0,
            };
            if values.len() >= 2 && s > 0.0 {
                if let Some(beta2) = kurtosis(&values, m) {
                    let (k, normal) = policy.multiplier(beta2);
                    stats.kurtosis = Some(beta2);
                    stats.normal = normal;
                    for (&idx, &value) in members.iter().zip(&values) {
                        if (value - m).abs() > k * s {
                            flags[idx][dimension.index()] = true;
                            stats.flagged += 1;
                        }
                    }
                }
            }
            item_stats.push(stats);
        }
    }
    OutlierFlags { flags, item_stats }
}

/// Builds one profile per subject (sorted by id). The outlier share is
/// pooled across the three dimensions, and exclusion is strict: a share
/// exactly equal to the reject fraction survives.
pub fn screen_subjects(
    ratings: &[RatingRecord],
    flags: &OutlierFlags,
    policy: &OutlierPolicy,
) -> Vec<SubjectProfile> {
    let order = canonical_order(ratings);
    let mut per_subject: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for &idx in &order {
        per_subject
            .entry(ratings[idx].subject_id.as_str())
            .or_default()
            .push(idx);
    }

    per_subject
        .into_iter()
        .map(|(subject_id, members)| {
            let mut means = [0.0; 3];
            let mut stds = [0.0; 3];
            for dimension in Dimension::ALL {
                let values: Vec<f64> = members
                    .iter()
                    .map(|&i| ratings[i].scores.get(dimension))
                    .collect();
                let m = mean(&values);
                means[dimension.index()] = m;
                stds[dimension.index()] = sample_std(&values, m);
            }
            let n_ratings = members.len() * Dimension::ALL.len();
            let n_flagged = members
                .iter()
                .map(|&i| flags.flags[i].iter().filter(|f| **f).count())
                .sum::<usize>();
            let outlier_fraction = n_flagged as f64 / n_ratings as f64;
            SubjectProfile {
                subject_id: subject_id.to_string(),
                mean: means,
                std: stds,
                n_ratings,
                n_flagged,
                outlier_fraction,
                excluded: policy.rejects(n_flagged, n_ratings),
            }
        })
        .collect()
}

fn excluded_set(profiles: &[SubjectProfile]) -> BTreeSet<&str> {
    profiles
        .iter()
        .filter(|p| p.excluded)
        .map(|p| p.subject_id.as_str())
        .collect()
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MosComputation {
    pub records: Vec<MosRecord>,
    pub no_valid: Vec<NoValidRatings>,
}

/// Maps a mean z-score onto the 0..100 scale, clamped.
pub fn z_to_mos(z: f64) -> f64 {
    (100.0 * (z + 3.0) / 6.0).clamp(0.0, 100.0)
}

/// Per-subject (mean, std) over surviving ratings, keyed by subject.
fn subject_normalizers(
    ratings: &[RatingRecord],
    order: &[usize],
    survives: impl Fn(usize, Dimension) -> bool,
    dimensions: &[Dimension],
) -> HashMap<String, (f64, f64)> {
    let mut values: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for &idx in order {
        for &dimension in dimensions {
            if survives(idx, dimension) {
                values
                    .entry(ratings[idx].subject_id.as_str())
                    .or_default()
                    .push(ratings[idx].scores.get(dimension));
            }
        }
    }
    values
        .into_iter()
        .map(|(subject, v)| {
            let m = mean(&v);
            (subject.to_string(), (m, sample_std(&v, m)))
        })
        .collect()
}

/// Mean opinion scores of one dimension. Flagged ratings and excluded
/// subjects are dropped before any normalization statistics are taken.
pub fn compute_mos(
    ratings: &[RatingRecord],
    flags: &OutlierFlags,
    profiles: &[SubjectProfile],
    dimension: Dimension,
    scope: NormalizationScope,
) -> MosComputation {
    let order = canonical_order(ratings);
    let excluded = excluded_set(profiles);
    let is_excluded = |idx: usize| excluded.contains(ratings[idx].subject_id.as_str());
    let survives = |idx: usize, dim: Dimension| !is_excluded(idx) && !flags.is_flagged(idx, dim);

    let normalizer_dims: &[Dimension] = match scope {
        NormalizationScope::PerDimension => std::slice::from_ref(&dimension),
        NormalizationScope::Pooled => &Dimension::ALL,
    };
    let normalizers = subject_normalizers(ratings, &order, survives, normalizer_dims);

    let mut out = MosComputation::default();
    for (item_id, members) in by_item(ratings, &order) {
        let surviving: Vec<usize> = members
            .iter()
            .copied()
            .filter(|&i| survives(i, dimension))
            .collect();
        let n_removed = members
            .iter()
            .filter(|&&i| !is_excluded(i) && flags.is_flagged(i, dimension))
            .count();
        if surviving.is_empty() {
            out.no_valid.push(NoValidRatings {
                item_id: item_id.to_string(),
                dimension: Some(dimension),
            });
            continue;
        }
        let raw: Vec<f64> = surviving
            .iter()
            .map(|&i| ratings[i].scores.get(dimension))
            .collect();
        let z: Vec<f64> = surviving
            .iter()
            .zip(&raw)
            .map(|(&i, &r)| {
                let (mu, sigma) = normalizers[ratings[i].subject_id.as_str()];
                if sigma > 0.0 {
                    (r - mu) / sigma
                } else {
                    0.0
                }
            })
            .collect();
        let raw_mean = mean(&raw);
        out.records.push(MosRecord {
            item_id: item_id.to_string(),
            dimension,
            mos: z_to_mos(mean(&z)),
            n_valid: surviving.len(),
            n_removed,
            raw_mean,
            raw_std: sample_std(&raw, raw_mean),
        });
    }
    out
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct QaComputation {
    pub consensus: Vec<QaConsensus>,
    pub no_valid: Vec<NoValidRatings>,
}

/// Majority yes/no label per item over non-excluded subjects. An exact
/// 50/50 split resolves to yes and is marked as a tie.
pub fn qa_consensus(ratings: &[RatingRecord], profiles: &[SubjectProfile]) -> QaComputation {
    let order = canonical_order(ratings);
    let excluded = excluded_set(profiles);
    let mut out = QaComputation::default();
    for (item_id, members) in by_item(ratings, &order) {
        let answers: Vec<bool> = members
            .iter()
            .filter(|&&i| !excluded.contains(ratings[i].subject_id.as_str()))
            .map(|&i| ratings[i].qa_answer)
            .collect();
        if answers.is_empty() {
            out.no_valid.push(NoValidRatings {
                item_id: item_id.to_string(),
                dimension: None,
            });
            continue;
        }
        let yes = answers.iter().filter(|a| **a).count();
        let tie = 2 * yes == answers.len();
        out.consensus.push(QaConsensus {
            item_id: item_id.to_string(),
            yes_fraction: yes as f64 / answers.len() as f64,
            majority: 2 * yes >= answers.len(),
            n_answers: answers.len(),
            tie,
        });
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RemovalSummary {
    pub total_records: usize,
    /// Individual dimension scores, three per record.
    pub total_ratings: usize,
    pub items: usize,
    pub subjects: usize,
    /// Flags on ratings of subjects that were kept.
    pub flagged_ratings: usize,
    pub excluded_subjects: Vec<String>,
    pub excluded_subject_ratings: usize,
    pub removed_ratings: usize,
    pub removed_percent: f64,
    pub no_valid: Vec<NoValidRatings>,
}

/// Output of the complete pipeline over one ratings set.
#[derive(Debug, Clone, PartialEq)]
pub struct SubjectiveResult {
    pub flags: OutlierFlags,
    pub profiles: Vec<SubjectProfile>,
    /// Sorted by item, then dimension.
    pub mos: Vec<MosRecord>,
    pub qa: Vec<QaConsensus>,
    pub summary: RemovalSummary,
}

pub fn process_ratings(
    ratings: &[RatingRecord],
    policy: &OutlierPolicy,
    scope: NormalizationScope,
) -> Result<SubjectiveResult, SubjectiveError> {
    policy.validate()?;
    if ratings.is_empty() {
        return Err(SubjectiveError::EmptyInput);
    }
    let flags = flag_outliers(ratings, policy);
    let profiles = screen_subjects(ratings, &flags, policy);

    let mut mos = Vec::new();
    let mut no_valid = Vec::new();
    for dimension in Dimension::ALL {
        let computed = compute_mos(ratings, &flags, &profiles, dimension, scope);
        mos.extend(computed.records);
        no_valid.extend(computed.no_valid);
    }
    mos.sort_by(|a, b| a.item_id.cmp(&b.item_id).then(a.dimension.cmp(&b.dimension)));
    let qa = qa_consensus(ratings, &profiles);
    no_valid.extend(qa.no_valid);
    no_valid.sort();

    let excluded = excluded_set(&profiles);
    let excluded_records = ratings
        .iter()
        .filter(|r| excluded.contains(r.subject_id.as_str()))
        .count();
    let flagged_ratings = flags
        .flags
        .iter()
        .zip(ratings)
        .filter(|(_, r)| !excluded.contains(r.subject_id.as_str()))
        .map(|(f, _)| f.iter().filter(|x| **x).count())
        .sum::<usize>();
    let total_ratings = ratings.len() * Dimension::ALL.len();
    let excluded_subject_ratings = excluded_records * Dimension::ALL.len();
    let removed_ratings = flagged_ratings + excluded_subject_ratings;
    let summary = RemovalSummary {
        total_records: ratings.len(),
        total_ratings,
        items: ratings
            .iter()
            .map(|r| r.item_id.as_str())
            .collect::<BTreeSet<_>>()
            .len(),
        subjects: profiles.len(),
        flagged_ratings,
        excluded_subjects: excluded.iter().map(|s| s.to_string()).collect(),
        excluded_subject_ratings,
        removed_ratings,
        removed_percent: 100.0 * removed_ratings as f64 / total_ratings as f64,
        no_valid,
    };
    Ok(SubjectiveResult {
        flags,
        profiles,
        mos,
        qa: qa.consensus,
        summary,
    })
}

/// Per-item MOS values as consumed by evaluation and leaderboards.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MosTable {
    entries: BTreeMap<String, [Option<f64>; 3]>,
}

impl MosTable {
    pub fn insert(&mut self, item_id: &str, dimension: Dimension, mos: f64) {
        self.entries.entry(item_id.to_string()).or_default()[dimension.index()] = Some(mos);
    }

    pub fn get(&self, item_id: &str, dimension: Dimension) -> Option<f64> {
        self.entries.get(item_id)?[dimension.index()]
    }

    pub fn items(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn from_records(records: &[MosRecord]) -> Self {
        let mut table = MosTable::default();
        for r in records {
            table.insert(&r.item_id, r.dimension, r.mos);
        }
        table
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct MosRow {
    item_id: String,
    dimension: Dimension,
    mos: f64,
    n_valid: usize,
    n_removed: usize,
}

pub fn write_mos_records<W: Write>(records: &[MosRecord], mut out: W) -> std::io::Result<()> {
    for r in records {
        let row = MosRow {
            item_id: r.item_id.clone(),
            dimension: r.dimension,
            mos: r.mos,
            n_valid: r.n_valid,
            n_removed: r.n_removed,
        };
        serde_json::to_writer(&mut out, &row)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

fn read_lines(path: &Path) -> Result<Vec<(usize, String)>, SubjectiveError> {
    let io_err = |source| SubjectiveError::Io {
        path: path.to_path_buf(),
        source,
    };
    let reader = BufReader::new(File::open(path).map_err(io_err)?);
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(io_err)?;
        if !line.trim().is_empty() {
            out.push((idx + 1, line));
        }
    }
    Ok(out)
}

pub fn load_mos_table(path: &Path) -> Result<MosTable, SubjectiveError> {
    let mut table = MosTable::default();
    for (line, text) in read_lines(path)? {
        let row: MosRow = serde_json::from_str(&text).map_err(|e| SubjectiveError::Parse {
            line,
            message: e.to_string(),
        })?;
        if !(0.0..=100.0).contains(&row.mos) {
            return Err(SubjectiveError::Parse {
                line,
                message: format!("MOS {} outside [0, 100]", row.mos),
            });
        }
        table.insert(&row.item_id, row.dimension, row.mos);
    }
    Ok(table)
}

pub fn write_qa<W: Write>(consensus: &[QaConsensus], mut out: W) -> std::io::Result<()> {
    for c in consensus {
        serde_json::to_writer(&mut out, c)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn load_qa(path: &Path) -> Result<Vec<QaConsensus>, SubjectiveError> {
    read_lines(path)?
        .into_iter()
        .map(|(line, text)| {
            serde_json::from_str(&text).map_err(|e| SubjectiveError::Parse {
                line,
                message: e.to_string(),
            })
        })
        .collect()
}
