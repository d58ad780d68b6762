//! End-to-end commands over a manifest: scoring, correlation, benchmark
//! aggregation, ablation sweeps, RTF timing and extractor output checks.
//!
//! Every batch operation records per-pair failures instead of aborting, and
//! returns results in manifest order regardless of worker count.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::acoustic::metrics::{prepare, score_tracks};
use crate::acoustic::vad::VadTimestamps;
use crate::acoustic::{read_wav, AcousticConfig, FrameTrack};
use crate::datamodel::{
    attach_ratings, enumerate_pairs, score_rows, ErrorRow, EvalGroup, Metric, PairKey, PairScoreRecord, RatingTable,
    ScoreRow,
};
use crate::dswed::{dswed, EditWeights};
use crate::error::{Error, Result};
use crate::par;
use crate::stats::{
    borda, fisher_aggregate, group_correlations, measure_rtf, micro_average, AggregateCorrelation, BordaTable,
    DurationBasis, ExcludedGroup, GroupCorrelation, MicroAverage, RtfReport, SystemScore,
};
use crate::tokenizer::{embedding_path, read_embeddings, token_path, vad_path, SweepCell, SweepSpec, TokenSequence};

#[derive(Debug, Clone)]
pub struct ScoreConfig {
    pub metrics: Vec<Metric>,
    pub tokens_dir: Option<PathBuf>,
    pub weights: EditWeights,
    pub acoustic: AcousticConfig,
    /// Directory with `<group_id>/<sample_id>.vad.json` files overriding the
    /// built-in VAD.
    pub vad_dir: Option<PathBuf>,
    /// Worker threads; 0 uses the default pool.
    pub workers: usize,
}

impl Default for ScoreConfig {
    fn default() -> Self {
        ScoreConfig {
            metrics: Metric::OBJECTIVE.to_vec(),
            tokens_dir: None,
            weights: EditWeights::default(),
            acoustic: AcousticConfig::default(),
            vad_dir: None,
            workers: 0,
        }
    }
}

impl ScoreConfig {
    /// Selected objective metrics in canonical column order.
    pub fn ordered_metrics(&self) -> Vec<Metric> {
        Metric::OBJECTIVE
            .iter()
            .copied()
            .filter(|m| self.metrics.contains(m))
            .collect()
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScoreOutcome {
    pub metrics: Vec<Metric>,
    pub records: Vec<PairScoreRecord>,
    pub errors: Vec<ErrorRow>,
}

impl ScoreOutcome {
    pub fn rows(&self) -> Vec<ScoreRow> {
        score_rows(&self.records, &self.metrics)
    }

    pub fn is_partial(&self) -> bool {
        !self.errors.is_empty()
    }
}

type SampleResult<T> = std::result::Result<T, String>;

struct SampleJob<'a> {
    group: &'a EvalGroup,
    sample_id: &'a str,
    audio_path: &'a Path,
}

fn sample_jobs(groups: &[EvalGroup]) -> Vec<SampleJob<'_>> {
    groups
        .iter()
        .flat_map(|g| {
            g.samples.iter().map(move |s| SampleJob {
                group: g,
                sample_id: &s.sample_id,
                audio_path: &s.audio_path,
            })
        })
        .collect()
}

fn sample_key(group_id: &str, sample_id: &str) -> (String, String) {
    (group_id.to_string(), sample_id.to_string())
}

fn load_track(job: &SampleJob<'_>, cfg: &ScoreConfig) -> Result<FrameTrack> {
    let x = read_wav(job.audio_path)?;
    let span = match &cfg.vad_dir {
        Some(dir) => {
            let p = vad_path(dir, &job.group.group_id, job.sample_id);
            if p.exists() {
                Some(VadTimestamps::read(&p)?.to_span(&x)?)
            } else {
                None
            }
        }
        None => None,
    };
    prepare(&x, span, &cfg.acoustic)
}

/// Score every pair of every group with the selected metrics.
pub fn score_groups(groups: &[EvalGroup], cfg: &ScoreConfig) -> Result<ScoreOutcome> {
    cfg.weights.validate()?;
    let metrics = cfg.ordered_metrics();
    if metrics.is_empty() {
        return Err(Error::Validation("no objective metric selected".into()));
    }
    let want_dswed = metrics.contains(&Metric::Dswed);
    let want_acoustic = metrics.iter().any(|m| matches!(m, Metric::LogF0Rmse | Metric::Mcd));
    if want_dswed && cfg.tokens_dir.is_none() {
        return Err(Error::Validation("DS-WED requested without a tokens directory".into()));
    }

    par::with_workers(cfg.workers, || {
        let jobs = sample_jobs(groups);

        let tokens: HashMap<(String, String), SampleResult<TokenSequence>> = if want_dswed {
            let dir = cfg.tokens_dir.as_deref().expect("checked above");
            let loaded = par::map(&jobs, |j| {
                TokenSequence::read(&token_path(dir, &j.group.group_id, j.sample_id)).map_err(|e| e.to_string())
            });
            jobs.iter()
                .zip(loaded)
                .map(|(j, t)| (sample_key(&j.group.group_id, j.sample_id), t))
                .collect()
        } else {
            HashMap::new()
        };

        let tracks: HashMap<(String, String), SampleResult<FrameTrack>> = if want_acoustic {
            let analysed = par::map(&jobs, |j| load_track(j, cfg).map_err(|e| e.to_string()));
            jobs.iter()
                .zip(analysed)
                .map(|(j, t)| (sample_key(&j.group.group_id, j.sample_id), t))
                .collect()
        } else {
            HashMap::new()
        };

        let pairs: Vec<PairKey> = groups.iter().flat_map(enumerate_pairs).collect();
        let scored = par::map(&pairs, |key| {
            let a = sample_key(&key.group_id, &key.sample_id_a);
            let b = sample_key(&key.group_id, &key.sample_id_b);
            let mut rec = PairScoreRecord::new(key.clone());
            let mut failures: Vec<(Metric, String)> = Vec::new();

            if want_dswed {
                match (&tokens[&a], &tokens[&b]) {
                    (Ok(ta), Ok(tb)) => match dswed(ta, tb, cfg.weights) {
                        Ok(r) => rec.dswed = Some(r.distance),
                        Err(e) => failures.push((Metric::Dswed, e.to_string())),
                    },
                    (Err(e), _) => failures.push((Metric::Dswed, format!("{}: {e}", key.sample_id_a))),
                    (_, Err(e)) => failures.push((Metric::Dswed, format!("{}: {e}", key.sample_id_b))),
                }
            }

            if want_acoustic {
                let wanted: Vec<Metric> = metrics
                    .iter()
                    .copied()
                    .filter(|m| matches!(m, Metric::LogF0Rmse | Metric::Mcd))
                    .collect();
                let outcome = match (&tracks[&a], &tracks[&b]) {
                    (Ok(ta), Ok(tb)) => score_tracks(ta, tb, cfg.acoustic.radius).map_err(|e| e.to_string()),
                    (Err(e), _) => Err(format!("{}: {e}", key.sample_id_a)),
                    (_, Err(e)) => Err(format!("{}: {e}", key.sample_id_b)),
                };
                match outcome {
                    Ok(scores) => {
                        for m in wanted {
                            let r = if m == Metric::LogF0Rmse { &scores.logf0_rmse } else { &scores.mcd };
                            match r {
                                Ok(v) => rec.set(m, Some(*v)),
                                Err(e) => failures.push((m, e.to_string())),
                            }
                        }
                    }
                    Err(reason) => failures.extend(wanted.into_iter().map(|m| (m, reason.clone()))),
                }
            }
            (rec, failures)
        });

        let mut outcome = ScoreOutcome {
            metrics: metrics.clone(),
            ..Default::default()
        };
        for (rec, failures) in scored {
            for (metric, reason) in failures {
                outcome.errors.push(ErrorRow {
                    group_id: rec.key.group_id.clone(),
                    sample_id_a: rec.key.sample_id_a.clone(),
                    sample_id_b: rec.key.sample_id_b.clone(),
                    metric,
                    reason,
                });
            }
            outcome.records.push(rec);
        }
        // errors sorted by pair, then metric column order
        let rank = |m: Metric| metrics.iter().position(|&x| x == m).unwrap_or(usize::MAX);
        outcome.errors.sort_by(|x, y| {
            (&x.group_id, &x.sample_id_a, &x.sample_id_b)
                .cmp(&(&y.group_id, &y.sample_id_a, &y.sample_id_b))
                .then(rank(x.metric).cmp(&rank(y.metric)))
        });
        let order: HashMap<&str, usize> = groups.iter().enumerate().map(|(i, g)| (g.group_id.as_str(), i)).collect();
        outcome
            .errors
            .sort_by_key(|e| order.get(e.group_id.as_str()).copied().unwrap_or(usize::MAX));
        Ok(outcome)
    })
}

// --- correlation -----------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationResult {
    pub x: Metric,
    pub y: Metric,
    pub groups: Vec<GroupCorrelation>,
    pub excluded: Vec<ExcludedGroup>,
    pub aggregate: AggregateCorrelation,
}

/// Per-group Pearson correlation of `x` against `y`, aggregated with Fisher z.
pub fn correlate(records: &[PairScoreRecord], x: Metric, y: Metric, alpha: f64) -> Result<CorrelationResult> {
    let (groups, excluded) = group_correlations(records, x, y);
    let aggregate = fisher_aggregate(&groups, alpha)?;
    Ok(CorrelationResult {
        x,
        y,
        groups,
        excluded,
        aggregate,
    })
}

/// Correlations for every unordered metric pair with data, in `metrics` order.
pub fn correlation_matrix(
    records: &[PairScoreRecord],
    metrics: &[Metric],
    alpha: f64,
) -> Vec<(Metric, Metric, Result<CorrelationResult>)> {
    let mut out = Vec::new();
    for (i, &x) in metrics.iter().enumerate() {
        for &y in &metrics[i + 1..] {
            out.push((x, y, correlate(records, x, y, alpha)));
        }
    }
    out
}

// --- benchmark ---------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricBenchmark {
    pub metric: Metric,
    /// Micro-average per system, aligned with [`Benchmark::systems`].
    pub averages: Vec<Option<MicroAverage>>,
    pub borda: Option<BordaTable>,
    pub borda_error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Benchmark {
    pub systems: Vec<String>,
    pub metrics: Vec<MetricBenchmark>,
}

/// Systems in first-appearance order.
pub fn systems_of(groups: &[EvalGroup]) -> Vec<String> {
    let mut systems: Vec<String> = Vec::new();
    for g in groups {
        if !systems.contains(&g.system) {
            systems.push(g.system.clone());
        }
    }
    systems
}

/// Micro-average and Borda aggregation per system. Systems are ranked within
/// each (text, speaker) prompt by their mean pair score; larger diversity
/// ranks higher.
pub fn benchmark(groups: &[EvalGroup], records: &[PairScoreRecord], metrics: &[Metric]) -> Result<Benchmark> {
    if records.is_empty() {
        return Err(Error::InsufficientData("no scores to aggregate".into()));
    }
    let systems = systems_of(groups);
    let group_of: HashMap<&str, &EvalGroup> = groups.iter().map(|g| (g.group_id.as_str(), g)).collect();
    for r in records {
        if !group_of.contains_key(r.key.group_id.as_str()) {
            return Err(Error::Validation(format!("scores reference unknown group `{}`", r.key.group_id)));
        }
    }
    let mut out = Vec::new();
    for &metric in metrics {
        let averages = systems
            .iter()
            .map(|s| {
                let mine: Vec<PairScoreRecord> = records
                    .iter()
                    .filter(|r| &group_of[r.key.group_id.as_str()].system == s)
                    .cloned()
                    .collect();
                micro_average(&mine, metric).ok()
            })
            .collect();

        // (prompt, system) -> (sum, n), prompts in first-appearance order
        let mut prompts: Vec<String> = Vec::new();
        let mut cells: BTreeMap<(String, String), (f64, usize)> = BTreeMap::new();
        for r in records {
            let Some(v) = r.get(metric) else { continue };
            let g = group_of[r.key.group_id.as_str()];
            let prompt = g.prompt_key();
            if !prompts.contains(&prompt) {
                prompts.push(prompt.clone());
            }
            let c = cells.entry((prompt, g.system.clone())).or_insert((0.0, 0));
            c.0 += v;
            c.1 += 1;
        }
        let entries: Vec<SystemScore> = prompts
            .iter()
            .flat_map(|p| {
                systems.iter().filter_map(|s| {
                    cells.get(&(p.clone(), s.clone())).map(|&(sum, n)| SystemScore {
                        group: p.replace('\u{1f}', " / "),
                        system: s.clone(),
                        value: sum / n as f64,
                    })
                })
            })
            .collect();
        let (borda, borda_error) = match borda(&entries, &systems, true) {
            Ok(t) => (Some(t), None),
            Err(e) => (None, Some(e.to_string())),
        };
        out.push(MetricBenchmark {
            metric,
            averages,
            borda,
            borda_error,
        });
    }
    Ok(Benchmark { systems, metrics: out })
}

// --- ablation ----------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub model: String,
    pub layer: u32,
    pub k: usize,
    pub r_bar: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub p_value: f64,
    pub n_groups: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct AblationOutcome {
    pub rows: Vec<AblationRow>,
    pub skipped: Vec<(String, String)>,
}

/// DS-WED vs. PMOS correlation for one already-tokenized cell.
pub fn ablation_cell(
    groups: &[EvalGroup],
    cell: &SweepCell,
    tokens_dir: &Path,
    ratings: &RatingTable,
    weights: EditWeights,
    alpha: f64,
) -> Result<AblationRow> {
    let cfg = ScoreConfig {
        metrics: vec![Metric::Dswed],
        tokens_dir: Some(tokens_dir.to_path_buf()),
        weights,
        ..Default::default()
    };
    let mut outcome = score_groups(groups, &cfg)?;
    attach_ratings(&mut outcome.records, ratings);
    let c = correlate(&outcome.records, Metric::Dswed, Metric::Pmos, alpha)?;
    Ok(AblationRow {
        model: cell.model.clone(),
        layer: cell.layer,
        k: cell.k,
        r_bar: c.aggregate.r_bar,
        ci_low: c.aggregate.ci_low,
        ci_high: c.aggregate.ci_high,
        p_value: c.aggregate.p_value,
        n_groups: c.aggregate.n_groups,
    })
}

/// Tokenize every grid cell, then correlate DS-WED with PMOS per cell.
pub fn ablate(
    groups: &[EvalGroup],
    spec: &SweepSpec,
    ratings: &RatingTable,
    weights: EditWeights,
    alpha: f64,
) -> AblationOutcome {
    let sweep = crate::tokenizer::sweep_tokenize(groups, spec);
    let mut out = AblationOutcome::default();
    for (cell, reason) in sweep.skipped() {
        out.skipped.push((cell.to_string(), reason.to_string()));
    }
    for cell in sweep.completed() {
        match ablation_cell(groups, cell, &spec.tokens_dir(cell), ratings, weights, alpha) {
            Ok(row) => out.rows.push(row),
            Err(e) => out.skipped.push((cell.to_string(), e.to_string())),
        }
    }
    let order: HashMap<String, usize> = spec.cells().iter().enumerate().map(|(i, c)| (c.to_string(), i)).collect();
    out.rows
        .sort_by_key(|r| order[&format!("{}_{}_{}", r.model, r.layer, r.k)]);
    out.skipped.sort_by_key(|(c, _)| order.get(c).copied().unwrap_or(usize::MAX));
    out
}

/// Write ablation rows as CSV (one row per grid cell).
pub fn write_ablation(path: &Path, rows: &[AblationRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    if rows.is_empty() {
        w.write_record(["model", "layer", "k", "r_bar", "ci_low", "ci_high", "p_value", "n_groups"])
            .map_err(|e| csv_error(path, e))?;
    }
    for r in rows {
        w.serialize(r).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Format(format!("{}: {other:?}", path.display())),
    }
}

// --- RTF -----------------------------------------------------------------------

fn sample_duration(group: &EvalGroup, sample_id: &str) -> Option<f64> {
    let s = group.sample(sample_id)?;
    s.duration_s
        .or_else(|| crate::acoustic::wav::wav_duration_s(&s.audio_path).ok())
}

/// Time one metric over every pair at batch size 1 on a single thread.
pub fn rtf_for_metric(
    groups: &[EvalGroup],
    metric: Metric,
    cfg: &ScoreConfig,
    basis: DurationBasis,
) -> Result<RtfReport> {
    let pairs: Vec<(&EvalGroup, PairKey)> = groups
        .iter()
        .flat_map(|g| enumerate_pairs(g).into_iter().map(move |k| (g, k)))
        .collect();
    let durations = |(g, k): &(&EvalGroup, PairKey)| {
        Some((sample_duration(g, &k.sample_id_a)?, sample_duration(g, &k.sample_id_b)?))
    };
    let path_of = |g: &EvalGroup, id: &str| g.sample(id).map(|s| s.audio_path.clone()).unwrap_or_default();
    par::with_workers(1, || match metric {
        Metric::Dswed => {
            let dir = cfg
                .tokens_dir
                .clone()
                .ok_or_else(|| Error::Validation("DS-WED timing needs a tokens directory".into()))?;
            measure_rtf("dswed", &pairs, durations, basis, |(g, k)| {
                let a = TokenSequence::read(&token_path(&dir, &g.group_id, &k.sample_id_a));
                let b = TokenSequence::read(&token_path(&dir, &g.group_id, &k.sample_id_b));
                match (a, b) {
                    (Ok(a), Ok(b)) => dswed(&a, &b, cfg.weights).ok().map(|r| r.distance),
                    _ => None,
                }
            })
        }
        Metric::LogF0Rmse | Metric::Mcd => measure_rtf(metric.as_str(), &pairs, durations, basis, |(g, k)| {
            let x1 = read_wav(&path_of(g, &k.sample_id_a)).ok()?;
            let x2 = read_wav(&path_of(g, &k.sample_id_b)).ok()?;
            let t1 = prepare(&x1, None, &cfg.acoustic).ok()?;
            let t2 = prepare(&x2, None, &cfg.acoustic).ok()?;
            let s = score_tracks(&t1, &t2, cfg.acoustic.radius).ok()?;
            if metric == Metric::Mcd {
                s.mcd.ok()
            } else {
                s.logf0_rmse.ok()
            }
        }),
        Metric::Pmos => Err(Error::Validation("PMOS is a human rating, not a timed metric".into())),
    })
}

// --- extractor output check ------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractCheckRow {
    pub group_id: String,
    pub sample_id: String,
    pub frames: Option<usize>,
    pub dim: Option<usize>,
    pub expected_frames: Option<f64>,
    pub problem: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ExtractCheck {
    pub rows: Vec<ExtractCheckRow>,
}

impl ExtractCheck {
    pub fn problems(&self) -> usize {
        self.rows.iter().filter(|r| r.problem.is_some()).count()
    }
}

/// Verify that every manifest sample has a parseable embedding file whose
/// frame count matches its trimmed duration (when VAD timestamps are
/// available) within `tolerance_frames`, with consistent dimension and
/// provenance across files.
pub fn extract_check(groups: &[EvalGroup], emb_dir: &Path, tolerance_frames: f64) -> ExtractCheck {
    let jobs = sample_jobs(groups);
    let mut rows: Vec<ExtractCheckRow> = par::map(&jobs, |j| {
        let gid = &j.group.group_id;
        let mut row = ExtractCheckRow {
            group_id: gid.clone(),
            sample_id: j.sample_id.to_string(),
            frames: None,
            dim: None,
            expected_frames: None,
            problem: None,
        };
        let emb = match read_embeddings(&embedding_path(emb_dir, gid, j.sample_id)) {
            Ok(m) => m,
            Err(e) => {
                row.problem = Some(e.to_string());
                return row;
            }
        };
        row.frames = Some(emb.frames());
        row.dim = Some(emb.dim());
        if !emb.sample_id.is_empty() && emb.sample_id != j.sample_id {
            row.problem = Some(format!("sidecar names sample `{}`", emb.sample_id));
            return row;
        }
        let vp = vad_path(emb_dir, gid, j.sample_id);
        if vp.exists() {
            match VadTimestamps::read(&vp) {
                Ok(ts) if ts.all_silence => row.problem = Some("VAD reports all-silence".into()),
                Ok(VadTimestamps {
                    t_start_s: Some(s),
                    t_end_s: Some(e),
                    ..
                }) => {
                    let expected = (e - s) * emb.frame_rate_hz as f64;
                    row.expected_frames = Some(expected);
                    if (emb.frames() as f64 - expected).abs() > tolerance_frames {
                        row.problem = Some(format!(
                            "{} frames, expected {expected:.1} +/- {tolerance_frames}",
                            emb.frames()
                        ));
                    }
                }
                Ok(_) => row.problem = Some("VAD timestamps incomplete".into()),
                Err(e) => row.problem = Some(e.to_string()),
            }
        }
        row
    });
    let dims: Vec<usize> = rows.iter().filter_map(|r| r.dim).collect();
    if let Some(&d0) = dims.first() {
        for r in rows.iter_mut() {
            if r.problem.is_none() && r.dim.is_some_and(|d| d != d0) {
                r.problem = Some(format!("dimension {} differs from {d0}", r.dim.unwrap_or(0)));
            }
        }
    }
    ExtractCheck { rows }
}
