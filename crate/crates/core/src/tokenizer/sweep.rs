use std::fmt;
use std::path::{Path, PathBuf};

use super::{embedding_path, kmeans_assign, read_embeddings, token_path, train_from_dir, KMeansModel, TrainOptions};
use crate::datamodel::EvalGroup;
use crate::error::{Error, Result};
use crate::par;

/// Outcome of tokenizing every sample of a manifest.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TokenizeReport {
    pub written: usize,
    /// `(group_id, sample_id, reason)` for samples that could not be tokenized.
    pub failures: Vec<(String, String, String)>,
}

/// Assign every sample's embeddings with `model` and write token files.
pub fn tokenize_groups(
    groups: &[EvalGroup],
    emb_dir: &Path,
    model: &KMeansModel,
    tokens_dir: &Path,
) -> TokenizeReport {
    let jobs: Vec<(&str, &str)> = groups
        .iter()
        .flat_map(|g| g.samples.iter().map(move |s| (g.group_id.as_str(), s.sample_id.as_str())))
        .collect();
    let results = par::map(&jobs, |&(group_id, sample_id)| -> Result<()> {
        let mut emb = read_embeddings(&embedding_path(emb_dir, group_id, sample_id))?;
        emb.sample_id = sample_id.to_string();
        let seq = kmeans_assign(model, &emb)?;
        seq.write(&token_path(tokens_dir, group_id, sample_id))
    });
    let mut report = TokenizeReport::default();
    for ((group_id, sample_id), r) in jobs.into_iter().zip(results) {
        match r {
            Ok(()) => report.written += 1,
            Err(e) => report
                .failures
                .push((group_id.to_string(), sample_id.to_string(), e.to_string())),
        }
    }
    report
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SweepCell {
    pub model: String,
    pub layer: u32,
    pub k: usize,
}

impl SweepCell {
    pub fn embedding_dir(&self, root: &Path) -> PathBuf {
        root.join(format!("{}_{}", self.model, self.layer))
    }
}

impl fmt::Display for SweepCell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}_{}_{}", self.model, self.layer, self.k)
    }
}

#[derive(Debug, Clone)]
pub struct SweepSpec {
    pub embedding_root: PathBuf,
    pub model_root: PathBuf,
    pub out_root: PathBuf,
    pub models: Vec<String>,
    pub layers: Vec<u32>,
    pub ks: Vec<usize>,
    /// Train missing quantizers from the cell's embeddings instead of
    /// skipping the cell.
    pub train: Option<TrainOptions>,
}

impl SweepSpec {
    /// Grid cells in model, layer, k nesting order.
    pub fn cells(&self) -> Vec<SweepCell> {
        let mut cells = Vec::new();
        for model in &self.models {
            for &layer in &self.layers {
                for &k in &self.ks {
                    cells.push(SweepCell {
                        model: model.clone(),
                        layer,
                        k,
                    });
                }
            }
        }
        cells
    }

    pub fn model_path(&self, cell: &SweepCell) -> PathBuf {
        self.model_root.join(format!("{cell}.kmns"))
    }

    pub fn tokens_dir(&self, cell: &SweepCell) -> PathBuf {
        self.out_root.join(cell.to_string())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum CellStatus {
    Done { trained: bool, report: TokenizeReport },
    Skipped { reason: String },
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SweepReport {
    pub cells: Vec<(SweepCell, CellStatus)>,
}

impl SweepReport {
    pub fn completed(&self) -> impl Iterator<Item = &SweepCell> {
        self.cells
            .iter()
            .filter(|(_, s)| matches!(s, CellStatus::Done { .. }))
            .map(|(c, _)| c)
    }

    pub fn skipped(&self) -> impl Iterator<Item = (&SweepCell, &str)> {
        self.cells.iter().filter_map(|(c, s)| match s {
            CellStatus::Skipped { reason } => Some((c, reason.as_str())),
            _ => None,
        })
    }
}

fn load_or_train(spec: &SweepSpec, cell: &SweepCell) -> Result<(KMeansModel, bool)> {
    let path = spec.model_path(cell);
    if path.exists() {
        return Ok((KMeansModel::read(&path)?, false));
    }
    let Some(train) = &spec.train else {
        return Err(Error::MissingInput(format!("no quantizer at {}", path.display())));
    };
    let emb_dir = cell.embedding_dir(&spec.embedding_root);
    if !emb_dir.is_dir() {
        return Err(Error::MissingInput(format!("no embeddings at {}", emb_dir.display())));
    }
    let mut opts = train.clone();
    opts.kmeans.k = cell.k;
    let model = train_from_dir(&emb_dir, &opts)?;
    model.write(&path)?;
    Ok((model, true))
}

/// Tokenize `groups` for every (model, layer, k) cell. Cells without inputs
/// are skipped and reported, never fatal.
pub fn sweep_tokenize(groups: &[EvalGroup], spec: &SweepSpec) -> SweepReport {
    let mut report = SweepReport::default();
    for cell in spec.cells() {
        let status = match load_or_train(spec, &cell) {
            Err(e) => CellStatus::Skipped { reason: e.to_string() },
            Ok((model, trained)) => {
                let emb_dir = cell.embedding_dir(&spec.embedding_root);
                let r = tokenize_groups(groups, &emb_dir, &model, &spec.tokens_dir(&cell));
                if r.written == 0 {
                    CellStatus::Skipped {
                        reason: format!("no sample could be tokenized ({} failures)", r.failures.len()),
                    }
                } else {
                    CellStatus::Done { trained, report: r }
                }
            }
        };
        if let CellStatus::Skipped { reason } = &status {
            log::warn!("sweep cell {cell} skipped: {reason}");
        }
        report.cells.push((cell, status));
    }
    report
}
