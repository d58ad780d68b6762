//! Speech tokenization: SSL embeddings in, frame-level unit ids out.
//!
//! On-disk layout shared by the CLI commands:
//!
//! * embeddings: `<emb_dir>/<group_id>/<sample_id>.ssle` (+ `.meta.json`)
//! * tokens: `<tokens_dir>/<group_id>/<sample_id>.json`
//! * sweep cells: embeddings under `<root>/<model>_<layer>/`, quantizers at
//!   `<models>/<model>_<layer>_<k>.kmns`, tokens under `<out>/<model>_<layer>_<k>/`

pub mod embedding;
pub mod kmeans;
pub mod sweep;
pub mod tokens;

use std::fs;
use std::path::{Path, PathBuf};

pub use embedding::{read_embeddings, write_embeddings, EmbeddingMatrix, EmbeddingMeta};
pub use kmeans::{kmeans_assign, kmeans_train, KMeansConfig, KMeansMetadata, KMeansModel};
pub use sweep::{sweep_tokenize, tokenize_groups, SweepCell, SweepReport, SweepSpec, TokenizeReport};
pub use tokens::TokenSequence;

use crate::error::{Error, Result};

pub fn embedding_path(emb_dir: &Path, group_id: &str, sample_id: &str) -> PathBuf {
    emb_dir.join(group_id).join(format!("{sample_id}.ssle"))
}

pub fn token_path(tokens_dir: &Path, group_id: &str, sample_id: &str) -> PathBuf {
    tokens_dir.join(group_id).join(format!("{sample_id}.json"))
}

/// VAD timestamps written next to the embeddings by the extractor.
pub fn vad_path(emb_dir: &Path, group_id: &str, sample_id: &str) -> PathBuf {
    emb_dir.join(group_id).join(format!("{sample_id}.vad.json"))
}

/// All `.ssle` files below `dir`, sorted by path.
pub fn list_embedding_files(dir: &Path) -> Result<Vec<PathBuf>> {
    fn walk(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
        for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
            let path = entry.map_err(|e| Error::io(dir, e))?.path();
            if path.is_dir() {
                walk(&path, out)?;
            } else if path.extension().is_some_and(|e| e == "ssle") {
                out.push(path);
            }
        }
        Ok(())
    }
    let mut out = Vec::new();
    walk(dir, &mut out)?;
    out.sort();
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOptions {
    pub kmeans: KMeansConfig,
    /// Keep every `frame_stride`-th frame of each utterance.
    pub frame_stride: usize,
    pub normalize: bool,
    pub training_corpus: String,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            kmeans: KMeansConfig::default(),
            frame_stride: 1,
            normalize: false,
            training_corpus: String::new(),
        }
    }
}

/// Train a quantizer on every embedding file below `emb_dir`.
pub fn train_from_dir(emb_dir: &Path, opts: &TrainOptions) -> Result<KMeansModel> {
    let files = list_embedding_files(emb_dir)?;
    if files.is_empty() {
        return Err(Error::MissingInput(format!(
            "no .ssle files under {}",
            emb_dir.display()
        )));
    }
    let stride = opts.frame_stride.max(1);
    let mut data = Vec::new();
    let mut dim = None;
    let mut provenance: Option<(String, u32)> = None;
    for path in &files {
        let m = read_embeddings(path)?;
        let m = if opts.normalize { m.normalized() } else { m };
        match dim {
            None => dim = Some(m.dim()),
            Some(d) if d != m.dim() => {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    found: m.dim(),
                })
            }
            _ => {}
        }
        provenance.get_or_insert_with(|| (m.model_name.clone(), m.layer));
        for i in (0..m.frames()).step_by(stride) {
            data.extend_from_slice(m.row(i));
        }
    }
    let dim = dim.expect("at least one file");
    let mut model = kmeans_train(&data, dim, &opts.kmeans)?;
    let (model_name, layer) = provenance.unwrap_or_default();
    model.metadata.model_name = model_name;
    model.metadata.layer = Some(layer);
    model.metadata.training_corpus = if opts.training_corpus.is_empty() {
        emb_dir.display().to_string()
    } else {
        opts.training_corpus.clone()
    };
    model.metadata.normalize = opts.normalize;
    model.metadata.frame_stride = stride;
    Ok(model)
}
