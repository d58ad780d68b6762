//! Evaluation groups, pair keys, score records and their file formats.
//!
//! * `groups.jsonl` holds one [`EvalGroup`] per line.
//! * `ratings.csv` holds one human rating per row; repeated ratings of the
//!   same pair are averaged.
//! * `scores.csv` is the flat `(pair, metric, value)` interchange every
//!   scoring and statistics command reads or writes.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SampleRef {
    pub sample_id: String,
    pub group_id: String,
    pub audio_path: PathBuf,
    pub duration_s: Option<f64>,
    pub seed: Option<i64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalGroup {
    pub group_id: String,
    pub system: String,
    pub text: String,
    pub speaker: String,
    pub samples: Vec<SampleRef>,
}

impl EvalGroup {
    pub fn validate(&self) -> Result<()> {
        if self.group_id.is_empty() {
            return Err(Error::Validation("empty group_id".into()));
        }
        if self.samples.len() < 2 {
            return Err(Error::Validation(format!(
                "group `{}` has {} sample(s); at least 2 are required",
                self.group_id,
                self.samples.len()
            )));
        }
        let mut seen = HashSet::new();
        for s in &self.samples {
            if s.sample_id.is_empty() {
                return Err(Error::Validation(format!(
                    "group `{}` contains a sample with an empty sample_id",
                    self.group_id
                )));
            }
            if !seen.insert(s.sample_id.as_str()) {
                return Err(Error::Validation(format!(
                    "duplicate sample_id `{}` in group `{}`",
                    s.sample_id, self.group_id
                )));
            }
            if let Some(d) = s.duration_s {
                if !(d.is_finite() && d > 0.0) {
                    return Err(Error::Validation(format!(
                        "sample `{}` in group `{}` has non-positive duration {d}",
                        s.sample_id, self.group_id
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn sample(&self, sample_id: &str) -> Option<&SampleRef> {
        self.samples.iter().find(|s| s.sample_id == sample_id)
    }

    /// Key used to rank systems against each other: groups sharing a text and
    /// speaker prompt are comparable.
    pub fn prompt_key(&self) -> String {
        format!("{}\u{1f}{}", self.text, self.speaker)
    }
}

/// Unordered sample pair inside a group, stored with the lexicographically
/// smaller sample id first.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PairKey {
    pub group_id: String,
    pub sample_id_a: String,
    pub sample_id_b: String,
}

impl PairKey {
    pub fn new(group_id: impl Into<String>, a: impl Into<String>, b: impl Into<String>) -> Self {
        let (a, b) = (a.into(), b.into());
        let (sample_id_a, sample_id_b) = if b < a { (b, a) } else { (a, b) };
        PairKey {
            group_id: group_id.into(),
            sample_id_a,
            sample_id_b,
        }
    }
}

impl fmt::Display for PairKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}~{}", self.group_id, self.sample_id_a, self.sample_id_b)
    }
}

/// Every metric that can appear in `scores.csv`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Dswed,
    #[serde(rename = "logf0_rmse")]
    LogF0Rmse,
    Mcd,
    Pmos,
}

impl Metric {
    /// Objective metrics, in the column order used for scores and reports.
    pub const OBJECTIVE: [Metric; 3] = [Metric::LogF0Rmse, Metric::Mcd, Metric::Dswed];

    pub fn as_str(self) -> &'static str {
        match self {
            Metric::Dswed => "dswed",
            Metric::LogF0Rmse => "logf0_rmse",
            Metric::Mcd => "mcd",
            Metric::Pmos => "pmos",
        }
    }

    pub fn display_name(self) -> &'static str {
        match self {
            Metric::Dswed => "DS-WED",
            Metric::LogF0Rmse => "log F0 RMSE",
            Metric::Mcd => "MCD",
            Metric::Pmos => "PMOS",
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "dswed" | "ds-wed" | "ds_wed" => Ok(Metric::Dswed),
            "logf0_rmse" | "logf0" | "log_f0_rmse" | "f0" => Ok(Metric::LogF0Rmse),
            "mcd" => Ok(Metric::Mcd),
            "pmos" => Ok(Metric::Pmos),
            other => Err(Error::Validation(format!("unknown metric `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairScoreRecord {
    pub key: PairKey,
    pub dswed: Option<f64>,
    pub logf0_rmse: Option<f64>,
    pub mcd: Option<f64>,
    pub pmos: Option<f64>,
    pub timing_s: Option<f64>,
}

impl PairScoreRecord {
    pub fn new(key: PairKey) -> Self {
        PairScoreRecord {
            key,
            dswed: None,
            logf0_rmse: None,
            mcd: None,
            pmos: None,
            timing_s: None,
        }
    }

    pub fn get(&self, metric: Metric) -> Option<f64> {
        match metric {
            Metric::Dswed => self.dswed,
            Metric::LogF0Rmse => self.logf0_rmse,
            Metric::Mcd => self.mcd,
            Metric::Pmos => self.pmos,
        }
    }

    pub fn set(&mut self, metric: Metric, value: Option<f64>) {
        let slot = match metric {
            Metric::Dswed => &mut self.dswed,
            Metric::LogF0Rmse => &mut self.logf0_rmse,
            Metric::Mcd => &mut self.mcd,
            Metric::Pmos => &mut self.pmos,
        };
        *slot = value;
    }

    pub fn validate(&self) -> Result<()> {
        for m in [Metric::Dswed, Metric::LogF0Rmse, Metric::Mcd] {
            if let Some(v) = self.get(m) {
                if !v.is_finite() || v < 0.0 {
                    return Err(Error::Validation(format!(
                        "{}: {m} must be finite and non-negative, got {v}",
                        self.key
                    )));
                }
            }
        }
        if let Some(p) = self.pmos {
            if !(1.0..=5.0).contains(&p) {
                return Err(Error::Validation(format!(
                    "{}: pmos {p} outside [1, 5]",
                    self.key
                )));
            }
        }
        if let Some(t) = self.timing_s {
            if !t.is_finite() || t < 0.0 {
                return Err(Error::Validation(format!("{}: bad timing {t}", self.key)));
            }
        }
        Ok(())
    }
}

/// All C(n,2) unordered pairs of the group, sorted by their two ids.
pub fn enumerate_pairs(group: &EvalGroup) -> Vec<PairKey> {
    let n = group.samples.len();
    let mut keys = Vec::with_capacity(n * n.saturating_sub(1) / 2);
    for i in 0..n {
        for j in (i + 1)..n {
            keys.push(PairKey::new(
                group.group_id.clone(),
                group.samples[i].sample_id.clone(),
                group.samples[j].sample_id.clone(),
            ));
        }
    }
    keys.sort();
    keys
}

// --- groups.jsonl -----------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SampleLine {
    sample_id: String,
    audio_path: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    seed: Option<i64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    duration_s: Option<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GroupLine {
    group_id: String,
    system: String,
    text: String,
    speaker: String,
    samples: Vec<SampleLine>,
}

/// Parse manifest text. Relative audio paths are resolved against `base_dir`.
pub fn parse_manifest(text: &str, base_dir: &Path, context: &str) -> Result<Vec<EvalGroup>> {
    let mut groups: Vec<EvalGroup> = Vec::new();
    let mut ids = HashSet::new();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let raw: GroupLine = serde_json::from_str(line).map_err(|e| Error::Parse {
            context: context.to_string(),
            line: line_no,
            message: e.to_string(),
        })?;
        let group = EvalGroup {
            samples: raw
                .samples
                .into_iter()
                .map(|s| SampleRef {
                    sample_id: s.sample_id,
                    group_id: raw.group_id.clone(),
                    audio_path: if s.audio_path.is_relative() {
                        base_dir.join(&s.audio_path)
                    } else {
                        s.audio_path
                    },
                    duration_s: s.duration_s,
                    seed: s.seed,
                })
                .collect(),
            group_id: raw.group_id,
            system: raw.system,
            text: raw.text,
            speaker: raw.speaker,
        };
        group.validate().map_err(|e| match e {
            Error::Validation(m) => Error::Validation(format!("{context}: line {line_no}: {m}")),
            other => other,
        })?;
        if !ids.insert(group.group_id.clone()) {
            return Err(Error::Validation(format!(
                "{context}: line {line_no}: duplicate group_id `{}`",
                group.group_id
            )));
        }
        groups.push(group);
    }
    Ok(groups)
}

pub fn load_manifest(path: &Path) -> Result<Vec<EvalGroup>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    parse_manifest(&text, base, &path.display().to_string())
}

pub fn manifest_to_string(groups: &[EvalGroup]) -> String {
    let mut out = String::new();
    for g in groups {
        let line = GroupLine {
            group_id: g.group_id.clone(),
            system: g.system.clone(),
            text: g.text.clone(),
            speaker: g.speaker.clone(),
            samples: g
                .samples
                .iter()
                .map(|s| SampleLine {
                    sample_id: s.sample_id.clone(),
                    audio_path: s.audio_path.clone(),
                    seed: s.seed,
                    duration_s: s.duration_s,
                })
                .collect(),
        };
        // A GroupLine contains only strings, numbers and paths.
        out.push_str(&serde_json::to_string(&line).expect("group serializes"));
        out.push('\n');
    }
    out
}

pub fn write_manifest(path: &Path, groups: &[EvalGroup]) -> Result<()> {
    fs::write(path, manifest_to_string(groups)).map_err(|e| Error::io(path, e))
}

// --- ratings.csv ------------------------------------------------------------

#[derive(Debug, Deserialize)]
struct RatingRow {
    group_id: String,
    sample_id_a: String,
    sample_id_b: String,
    #[allow(dead_code)]
    rater_id: String,
    score: f64,
}

/// Mean human rating per pair.
pub type RatingTable = BTreeMap<PairKey, f64>;

/// Read `ratings.csv`, checking every row against `known` pairs.
pub fn read_ratings(path: &Path, known: &HashSet<PairKey>) -> Result<RatingTable> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
    let context = path.display().to_string();
    let mut sums: BTreeMap<PairKey, (f64, usize)> = BTreeMap::new();
    let mut unknown = Vec::new();
    for (idx, row) in reader.deserialize::<RatingRow>().enumerate() {
        // header is line 1
        let line = idx + 2;
        let row = row.map_err(|e| Error::Parse {
            context: context.clone(),
            line,
            message: e.to_string(),
        })?;
        if !row.score.is_finite() || !(1.0..=5.0).contains(&row.score) {
            return Err(Error::Validation(format!(
                "{context}: line {line}: rating {} outside [1, 5]",
                row.score
            )));
        }
        let key = PairKey::new(row.group_id, row.sample_id_a, row.sample_id_b);
        if !known.contains(&key) {
            unknown.push(format!("line {line} ({key})"));
            continue;
        }
        let slot = sums.entry(key).or_insert((0.0, 0));
        slot.0 += row.score;
        slot.1 += 1;
    }
    if !unknown.is_empty() {
        return Err(Error::Validation(format!(
            "{context}: ratings reference unknown pairs: {}",
            unknown.join(", ")
        )));
    }
    Ok(sums
        .into_iter()
        .map(|(k, (sum, n))| (k, sum / n as f64))
        .collect())
}

/// Load ratings for `groups`: one record per canonical pair, in manifest and
/// pair-enumeration order, with `pmos` set where the pair was rated.
pub fn load_ratings(path: &Path, groups: &[EvalGroup]) -> Result<Vec<PairScoreRecord>> {
    let keys: Vec<PairKey> = groups.iter().flat_map(enumerate_pairs).collect();
    let known: HashSet<PairKey> = keys.iter().cloned().collect();
    let table = read_ratings(path, &known)?;
    Ok(keys
        .into_iter()
        .map(|k| {
            let mut rec = PairScoreRecord::new(k);
            rec.pmos = table.get(&rec.key).copied();
            rec
        })
        .collect())
}

/// Copy ratings into matching records.
pub fn attach_ratings(records: &mut [PairScoreRecord], ratings: &RatingTable) {
    for rec in records {
        if let Some(&p) = ratings.get(&rec.key) {
            rec.pmos = Some(p);
        }
    }
}

// --- scores.csv / errors.csv -----------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub group_id: String,
    pub sample_id_a: String,
    pub sample_id_b: String,
    pub metric: Metric,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorRow {
    pub group_id: String,
    pub sample_id_a: String,
    pub sample_id_b: String,
    pub metric: Metric,
    pub reason: String,
}

/// Flatten records into rows: record order first, then `metrics` order.
pub fn score_rows(records: &[PairScoreRecord], metrics: &[Metric]) -> Vec<ScoreRow> {
    let mut rows = Vec::new();
    for rec in records {
        for &m in metrics {
            if let Some(value) = rec.get(m) {
                rows.push(ScoreRow {
                    group_id: rec.key.group_id.clone(),
                    sample_id_a: rec.key.sample_id_a.clone(),
                    sample_id_b: rec.key.sample_id_b.clone(),
                    metric: m,
                    value,
                });
            }
        }
    }
    rows
}

fn write_csv<T: Serialize>(path: &Path, header: &[&str], rows: &[T]) -> Result<()> {
    let mut buf = Vec::new();
    {
        let mut w = csv::WriterBuilder::new()
            .has_headers(false)
            .from_writer(&mut buf);
        w.write_record(header).map_err(csv_to_io)?;
        for r in rows {
            w.serialize(r).map_err(csv_to_io)?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))
}

fn csv_to_io(e: csv::Error) -> Error {
    Error::Validation(format!("csv serialization failed: {e}"))
}

pub fn write_scores(path: &Path, rows: &[ScoreRow]) -> Result<()> {
    write_csv(
        path,
        &["group_id", "sample_id_a", "sample_id_b", "metric", "value"],
        rows,
    )
}

pub fn write_errors(path: &Path, rows: &[ErrorRow]) -> Result<()> {
    write_csv(
        path,
        &["group_id", "sample_id_a", "sample_id_b", "metric", "reason"],
        rows,
    )
}

pub fn read_score_rows(path: &Path) -> Result<Vec<ScoreRow>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
    let context = path.display().to_string();
    reader
        .deserialize::<ScoreRow>()
        .enumerate()
        .map(|(idx, row)| {
            row.map_err(|e| Error::Parse {
                context: context.clone(),
                line: idx + 2,
                message: e.to_string(),
            })
        })
        .collect()
}

/// Merge rows into one record per pair, in first-appearance order.
pub fn records_from_rows(rows: &[ScoreRow]) -> Result<Vec<PairScoreRecord>> {
    let mut index: HashMap<PairKey, usize> = HashMap::new();
    let mut records: Vec<PairScoreRecord> = Vec::new();
    for row in rows {
        let key = PairKey::new(&row.group_id, &row.sample_id_a, &row.sample_id_b);
        let pos = *index.entry(key.clone()).or_insert_with(|| {
            records.push(PairScoreRecord::new(key.clone()));
            records.len() - 1
        });
        let rec = &mut records[pos];
        if rec.get(row.metric).is_some() {
            return Err(Error::Validation(format!(
                "duplicate {} value for {}",
                row.metric, rec.key
            )));
        }
        rec.set(row.metric, Some(row.value));
        rec.validate()?;
    }
    Ok(records)
}

pub fn read_scores(path: &Path) -> Result<Vec<PairScoreRecord>> {
    records_from_rows(&read_score_rows(path)?)
}
