//! Benchmark domain types and validated ingestion of manifests and rating files.
//!
//! Both files are line-delimited JSON. Manifest image paths are stored as
//! written and resolved against the manifest's directory on demand, so that
//! a loaded manifest serializes back to the same records.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Lowest admissible rating on the continuous five-point scale.
pub const SCORE_MIN: f64 = 1.0;
/// Highest admissible rating on the continuous five-point scale.
pub const SCORE_MAX: f64 = 5.0;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: malformed JSON: {source}")]
    Json {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("line {line}: missing field `{field}`")]
    MissingField { line: usize, field: &'static str },
    #[error("line {line} (item {item_id}): unknown task `{task}`")]
    UnknownTask {
        line: usize,
        item_id: String,
        task: String,
    },
    #[error("line {line}: duplicate item id `{item_id}` (first seen on line {first_line})")]
    DuplicateItemId {
        line: usize,
        first_line: usize,
        item_id: String,
    },
    #[error("line {line} (item {item_id}): instruction must not be empty")]
    EmptyInstruction { line: usize, item_id: String },
    #[error("line {line} (item {item_id}): unreadable image {path}: {reason}")]
    UnreadableImage {
        line: usize,
        item_id: String,
        path: PathBuf,
        reason: String,
    },
    #[error("line {line} (subject {subject_id}, item {item_id}): {dimension} score {value} outside [1, 5]")]
    ScoreOutOfRange {
        line: usize,
        subject_id: String,
        item_id: String,
        dimension: Dimension,
        value: f64,
    },
    #[error("line {line}: duplicate rating by subject `{subject_id}` for item `{item_id}` (first seen on line {first_line})")]
    DuplicateRating {
        line: usize,
        first_line: usize,
        subject_id: String,
        item_id: String,
    },
    #[error("line {line}: rating references unknown item `{item_id}`")]
    UnknownItem { line: usize, item_id: String },
}

impl DatasetError {
    /// True for failures of the input data itself, as opposed to I/O trouble.
    pub fn is_validation(&self) -> bool {
        !matches!(self, DatasetError::Io { .. })
    }
}

pub type Result<T, E = DatasetError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Tier {
    HighLevel,
    LowLevel,
}

impl fmt::Display for Tier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Tier::HighLevel => "high-level",
            Tier::LowLevel => "low-level",
        })
    }
}

macro_rules! tasks {
    ($( $variant:ident => $label:literal, $tier:ident $(, alias $alias:literal)? ;)*) => {
        /// The editing task an item belongs to.
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
        pub enum TaskId {
            $($variant,)*
        }

        impl TaskId {
            pub const ALL: [TaskId; 21] = [$(TaskId::$variant,)*];

            pub fn as_str(self) -> &'static str {
                match self {
                    $(TaskId::$variant => $label,)*
                }
            }

            pub fn tier(self) -> Tier {
                match self {
                    $(TaskId::$variant => Tier::$tier,)*
                }
            }
        }

        impl FromStr for TaskId {
            type Err = String;

            fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
                match s {
                    $($label $(| $alias)? => Ok(TaskId::$variant),)*
                    other => Err(other.to_string()),
                }
            }
        }
    };
}

tasks! {
    Add => "add", HighLevel;
    Remove => "remove", HighLevel;
    Replace => "replace", HighLevel;
    Color => "color", HighLevel;
    Texture => "texture", HighLevel;
    Style => "style", HighLevel;
    Action => "action", HighLevel;
    Expression => "expression", HighLevel;
    WeatherSeason => "weather_season", HighLevel, alias "weather&season";
    Background => "background", HighLevel;
    Counting => "counting", HighLevel;
    Position => "position", HighLevel;
    Size => "size", HighLevel;
    Deblur => "deblur", LowLevel;
    Dehaze => "dehaze", LowLevel;
    Denoise => "denoise", LowLevel;
    Derain => "derain", LowLevel;
    Desnow => "desnow", LowLevel;
    LowLightEnhancement => "low_light_enhancement", LowLevel, alias "low-light-enhancement";
    ShadowRemoval => "shadow_removal", LowLevel, alias "shadow-removal";
    SuperResolution => "super_resolution", LowLevel, alias "super-resolution";
}

impl fmt::Display for TaskId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl Serialize for TaskId {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for TaskId {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse()
            .map_err(|bad| serde::de::Error::custom(format!("unknown task `{bad}`")))
    }
}

/// One of the three rated aspects of an edited image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dimension {
    Quality,
    Alignment,
    Preservation,
}

impl Dimension {
    pub const ALL: [Dimension; 3] = [
        Dimension::Quality,
        Dimension::Alignment,
        Dimension::Preservation,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Dimension::Quality => "quality",
            Dimension::Alignment => "alignment",
            Dimension::Preservation => "preservation",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Dimension {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Dimension {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "quality" => Ok(Dimension::Quality),
            "alignment" => Ok(Dimension::Alignment),
            "preservation" => Ok(Dimension::Preservation),
            other => Err(format!("unknown dimension `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct PromptBundle {
    pub instruction: String,
    pub source_description: String,
    pub target_description: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BenchmarkItem {
    pub item_id: String,
    pub source_image: PathBuf,
    pub edited_image: PathBuf,
    pub editing_model: String,
    pub task: TaskId,
    pub prompts: PromptBundle,
    pub qa_question: String,
    /// Answer a successful edit should receive. Absent means "yes".
    pub expected_answer: Option<bool>,
}

impl BenchmarkItem {
    pub fn expected_answer(&self) -> bool {
        self.expected_answer.unwrap_or(true)
    }
}

/// A validated manifest plus the directory its relative image paths hang off.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Manifest {
    pub base_dir: PathBuf,
    pub items: Vec<BenchmarkItem>,
}

impl Manifest {
    pub fn resolve(&self, image: &Path) -> PathBuf {
        if image.is_absolute() {
            image.to_path_buf()
        } else {
            self.base_dir.join(image)
        }
    }

    pub fn get(&self, item_id: &str) -> Option<&BenchmarkItem> {
        self.items.iter().find(|item| item.item_id == item_id)
    }

    pub fn item_ids(&self) -> HashSet<&str> {
        self.items.iter().map(|item| item.item_id.as_str()).collect()
    }

    pub fn tier_counts(&self) -> BTreeMap<Tier, usize> {
        let mut counts = BTreeMap::new();
        for item in &self.items {
            *counts.entry(item.task.tier()).or_insert(0) += 1;
        }
        counts
    }
}

impl std::ops::Deref for Manifest {
    type Target = [BenchmarkItem];

    fn deref(&self) -> &Self::Target {
        &self.items
    }
}

/// Per-dimension ratings on the continuous 1..5 scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DimensionScores {
    pub quality: f64,
    pub alignment: f64,
    pub preservation: f64,
}

impl DimensionScores {
    pub fn get(&self, dimension: Dimension) -> f64 {
        match dimension {
            Dimension::Quality => self.quality,
            Dimension::Alignment => self.alignment,
            Dimension::Preservation => self.preservation,
        }
    }

    pub fn set(&mut self, dimension: Dimension, value: f64) {
        match dimension {
            Dimension::Quality => self.quality = value,
            Dimension::Alignment => self.alignment = value,
            Dimension::Preservation => self.preservation = value,
        }
    }

    pub fn uniform(value: f64) -> Self {
        DimensionScores {
            quality: value,
            alignment: value,
            preservation: value,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RatingRecord {
    pub subject_id: String,
    pub item_id: String,
    pub scores: DimensionScores,
    pub qa_answer: bool,
    pub submitted_at: DateTime<Utc>,
}

/// Rounds a score to the stored precision of three fractional digits.
pub fn round_score(value: f64) -> f64 {
    (value * 1000.0).round() / 1000.0
}

/// Checks every dimension against the 1..5 range and rounds to stored precision.
pub fn validate_scores(scores: DimensionScores) -> std::result::Result<DimensionScores, (Dimension, f64)> {
    let mut out = scores;
    for dimension in Dimension::ALL {
        let value = scores.get(dimension);
        if !value.is_finite() || !(SCORE_MIN..=SCORE_MAX).contains(&value) {
            return Err((dimension, value));
        }
        out.set(dimension, round_score(value));
    }
    Ok(out)
}

// Wire rows. Fields are optional so a missing field is reported by name.

#[derive(Debug, Serialize, Deserialize, Default)]
struct ManifestRow {
    item_id: Option<String>,
    source_image: Option<String>,
    edited_image: Option<String>,
    editing_model: Option<String>,
    task: Option<String>,
    instruction: Option<String>,
    source_description: Option<String>,
    target_description: Option<String>,
    qa_question: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    expected_answer: Option<bool>,
}

#[derive(Debug, Serialize, Deserialize)]
struct RatingRow {
    subject_id: Option<String>,
    item_id: Option<String>,
    quality: Option<f64>,
    alignment: Option<f64>,
    preservation: Option<f64>,
    qa_answer: Option<bool>,
    submitted_at: Option<DateTime<Utc>>,
}

fn required<T>(value: Option<T>, line: usize, field: &'static str) -> Result<T> {
    value.ok_or(DatasetError::MissingField { line, field })
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|source| DatasetError::Io {
            path: path.to_path_buf(),
            source,
        })
}

/// Yields `(line_number, text)` for every non-blank line.
fn json_lines<R: BufRead>(reader: R, path: &Path) -> Result<Vec<(usize, String)>> {
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|source| DatasetError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        if !line.trim().is_empty() {
            out.push((idx + 1, line));
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy)]
pub struct ManifestOptions {
    /// Decode-check both images of every item.
    pub verify_images: bool,
}

impl Default for ManifestOptions {
    fn default() -> Self {
        ManifestOptions {
            verify_images: true,
        }
    }
}

pub fn load_manifest(path: &Path) -> Result<Manifest> {
    load_manifest_with(path, ManifestOptions::default())
}

pub fn load_manifest_with(path: &Path, options: ManifestOptions) -> Result<Manifest> {
    let reader = open(path)?;
    let base_dir = path
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_default();
    parse_manifest(reader, path, base_dir, options)
}

pub fn parse_manifest<R: BufRead>(
    reader: R,
    origin: &Path,
    base_dir: PathBuf,
    options: ManifestOptions,
) -> Result<Manifest> {
    let mut items = Vec::new();
    let mut seen: HashMap<String, usize> = HashMap::new();
    let mut lines_of = Vec::new();

    for (line, text) in json_lines(reader, origin)? {
        let row: ManifestRow =
            serde_json::from_str(&text).map_err(|source| DatasetError::Json { line, source })?;
        let item_id = required(row.item_id, line, "item_id")?;
        let source_image = required(row.source_image, line, "source_image")?;
        let edited_image = required(row.edited_image, line, "edited_image")?;
        let editing_model = required(row.editing_model, line, "editing_model")?;
        let task_label = required(row.task, line, "task")?;
        let instruction = required(row.instruction, line, "instruction")?;
        let source_description = required(row.source_description, line, "source_description")?;
        let target_description = required(row.target_description, line, "target_description")?;
        let qa_question = required(row.qa_question, line, "qa_question")?;

        let task = task_label
            .parse::<TaskId>()
            .map_err(|task| DatasetError::UnknownTask {
                line,
                item_id: item_id.clone(),
                task,
            })?;
        if instruction.trim().is_empty() {
            return Err(DatasetError::EmptyInstruction { line, item_id });
        }
        if let Some(&first_line) = seen.get(&item_id) {
            return Err(DatasetError::DuplicateItemId {
                line,
                first_line,
                item_id,
            });
        }
        seen.insert(item_id.clone(), line);
        lines_of.push(line);
        items.push(BenchmarkItem {
            item_id,
            source_image: PathBuf::from(source_image),
            edited_image: PathBuf::from(edited_image),
            editing_model,
            task,
            prompts: PromptBundle {
                instruction,
                source_description,
                target_description,
            },
            qa_question,
            expected_answer: row.expected_answer,
        });
    }

    let manifest = Manifest { base_dir, items };
    if options.verify_images {
        verify_images(&manifest, &lines_of)?;
    }
    Ok(manifest)
}

fn verify_images(manifest: &Manifest, lines: &[usize]) -> Result<()> {
    let mut checked: HashMap<PathBuf, std::result::Result<(), String>> = HashMap::new();
    for (item, &line) in manifest.items.iter().zip(lines) {
        for image in [&item.source_image, &item.edited_image] {
            let path = manifest.resolve(image);
            let outcome = checked
                .entry(path.clone())
                .or_insert_with(|| probe_image(&path));
            if let Err(reason) = outcome {
                return Err(DatasetError::UnreadableImage {
                    line,
                    item_id: item.item_id.clone(),
                    path,
                    reason: reason.clone(),
                });
            }
        }
    }
    Ok(())
}

/// Confirms the file is a PNG or JPEG with a readable header.
fn probe_image(path: &Path) -> std::result::Result<(), String> {
    let reader = image::ImageReader::open(path)
        .map_err(|e| e.to_string())?
        .with_guessed_format()
        .map_err(|e| e.to_string())?;
    match reader.format() {
        Some(image::ImageFormat::Png) | Some(image::ImageFormat::Jpeg) => {}
        Some(other) => return Err(format!("unsupported format {other:?}")),
        None => return Err("unrecognized image format".into()),
    }
    reader.into_dimensions().map(|_| ()).map_err(|e| e.to_string())
}

pub fn write_manifest<W: Write>(items: &[BenchmarkItem], mut out: W) -> std::io::Result<()> {
    for item in items {
        let row = ManifestRow {
            item_id: Some(item.item_id.clone()),
            source_image: Some(item.source_image.to_string_lossy().into_owned()),
            edited_image: Some(item.edited_image.to_string_lossy().into_owned()),
            editing_model: Some(item.editing_model.clone()),
            task: Some(item.task.as_str().to_string()),
            instruction: Some(item.prompts.instruction.clone()),
            source_description: Some(item.prompts.source_description.clone()),
            target_description: Some(item.prompts.target_description.clone()),
            qa_question: Some(item.qa_question.clone()),
            expected_answer: item.expected_answer,
        };
        serde_json::to_writer(&mut out, &row)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn load_ratings(path: &Path) -> Result<Vec<RatingRecord>> {
    parse_ratings(open(path)?, path)
}

pub fn parse_ratings<R: BufRead>(reader: R, origin: &Path) -> Result<Vec<RatingRecord>> {
    let mut records = Vec::new();
    let mut seen: HashMap<(String, String), usize> = HashMap::new();

    for (line, text) in json_lines(reader, origin)? {
        let row: RatingRow =
            serde_json::from_str(&text).map_err(|source| DatasetError::Json { line, source })?;
        let subject_id = required(row.subject_id, line, "subject_id")?;
        let item_id = required(row.item_id, line, "item_id")?;
        let raw = DimensionScores {
            quality: required(row.quality, line, "quality")?,
            alignment: required(row.alignment, line, "alignment")?,
            preservation: required(row.preservation, line, "preservation")?,
        };
        let qa_answer = required(row.qa_answer, line, "qa_answer")?;
        let submitted_at = required(row.submitted_at, line, "submitted_at")?;

        let scores = validate_scores(raw).map_err(|(dimension, value)| {
            DatasetError::ScoreOutOfRange {
                line,
                subject_id: subject_id.clone(),
                item_id: item_id.clone(),
                dimension,
                value,
            }
        })?;
        let key = (subject_id.clone(), item_id.clone());
        if let Some(&first_line) = seen.get(&key) {
            return Err(DatasetError::DuplicateRating {
                line,
                first_line,
                subject_id,
                item_id,
            });
        }
        seen.insert(key, line);
        records.push(RatingRecord {
            subject_id,
            item_id,
            scores,
            qa_answer,
            submitted_at,
        });
    }
    Ok(records)
}

/// Rejects ratings whose item is absent from the manifest. Line numbers are
/// 1-based record positions.
pub fn check_ratings_against(ratings: &[RatingRecord], manifest: &Manifest) -> Result<()> {
    let known = manifest.item_ids();
    for (idx, rating) in ratings.iter().enumerate() {
        if !known.contains(rating.item_id.as_str()) {
            return Err(DatasetError::UnknownItem {
                line: idx + 1,
                item_id: rating.item_id.clone(),
            });
        }
    }
    Ok(())
}

pub fn write_ratings<W: Write>(ratings: &[RatingRecord], mut out: W) -> std::io::Result<()> {
    for rating in ratings {
        let row = RatingRow {
            subject_id: Some(rating.subject_id.clone()),
            item_id: Some(rating.item_id.clone()),
            quality: Some(rating.scores.quality),
            alignment: Some(rating.scores.alignment),
            preservation: Some(rating.scores.preservation),
            qa_answer: Some(rating.qa_answer),
            submitted_at: Some(rating.submitted_at),
        };
        serde_json::to_writer(&mut out, &row)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}
