//! SSLE embedding files.
//!
//! Layout (little-endian): magic `SSLE`, u32 version (1), u32 frames,
//! u32 dim, f32 frame rate in Hz, then `frames * dim` f32 values in row-major
//! order. Provenance lives in a JSON sidecar `<file>.meta.json`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SSLE_MAGIC: &[u8; 4] = b"SSLE";
pub const SSLE_VERSION: u32 = 1;
const HEADER_LEN: usize = 20;

/// Frame-level hidden states of one utterance.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    data: Vec<f32>,
    frames: usize,
    dim: usize,
    pub frame_rate_hz: f32,
    pub model_name: String,
    pub layer: u32,
    pub sample_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingMeta {
    pub model_name: String,
    pub layer: u32,
    pub sample_id: String,
}

impl EmbeddingMatrix {
    pub fn new(data: Vec<f32>, frames: usize, dim: usize, frame_rate_hz: f32) -> Result<Self> {
        if frames == 0 || dim == 0 {
            return Err(Error::Validation(format!(
                "embedding shape {frames}x{dim} must be at least 1x1"
            )));
        }
        if data.len() != frames * dim {
            return Err(Error::DimensionMismatch {
                expected: frames * dim,
                found: data.len(),
            });
        }
        if !(frame_rate_hz.is_finite() && frame_rate_hz > 0.0) {
            return Err(Error::Validation(format!(
                "frame rate must be positive, got {frame_rate_hz}"
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Validation(format!(
                "non-finite embedding value at frame {}, dim {}",
                pos / dim,
                pos % dim
            )));
        }
        Ok(EmbeddingMatrix {
            data,
            frames,
            dim,
            frame_rate_hz,
            model_name: String::new(),
            layer: 0,
            sample_id: String::new(),
        })
    }

    pub fn with_meta(mut self, meta: EmbeddingMeta) -> Self {
        self.model_name = meta.model_name;
        self.layer = meta.layer;
        self.sample_id = meta.sample_id;
        self
    }

    pub fn meta(&self) -> EmbeddingMeta {
        EmbeddingMeta {
            model_name: self.model_name.clone(),
            layer: self.layer,
            sample_id: self.sample_id.clone(),
        }
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn duration_s(&self) -> f64 {
        self.frames as f64 / self.frame_rate_hz as f64
    }

    /// Per-dimension zero-mean, unit-variance normalization over frames.
    /// Dimensions with zero variance are only centered.
    pub fn normalized(&self) -> EmbeddingMatrix {
        let mut out = self.clone();
        let n = self.frames as f64;
        for d in 0..self.dim {
            let mean = (0..self.frames).map(|i| self.data[i * self.dim + d] as f64).sum::<f64>() / n;
            let var = (0..self.frames)
                .map(|i| (self.data[i * self.dim + d] as f64 - mean).powi(2))
                .sum::<f64>()
                / n;
            let scale = if var > 0.0 { 1.0 / var.sqrt() } else { 1.0 };
            for i in 0..self.frames {
                let v = &mut out.data[i * self.dim + d];
                *v = ((*v as f64 - mean) * scale) as f32;
            }
        }
        out
    }
}

pub fn encode_ssle(m: &EmbeddingMatrix) -> Vec<u8> {
    let mut buf = Vec::with_capacity(HEADER_LEN + m.data.len() * 4);
    buf.extend_from_slice(SSLE_MAGIC);
    buf.extend_from_slice(&SSLE_VERSION.to_le_bytes());
    buf.extend_from_slice(&(m.frames as u32).to_le_bytes());
    buf.extend_from_slice(&(m.dim as u32).to_le_bytes());
    buf.extend_from_slice(&m.frame_rate_hz.to_le_bytes());
    for v in &m.data {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    buf
}

fn le_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4-byte slice"))
}

pub fn decode_ssle(bytes: &[u8]) -> Result<EmbeddingMatrix> {
    if bytes.len() < HEADER_LEN {
        if bytes.len() >= 4 && &bytes[..4] != SSLE_MAGIC {
            return Err(Error::Format("missing SSLE magic".into()));
        }
        return Err(Error::Truncated {
            expected: HEADER_LEN,
            found: bytes.len(),
        });
    }
    if &bytes[..4] != SSLE_MAGIC {
        return Err(Error::Format("missing SSLE magic".into()));
    }
    let version = le_u32(bytes, 4);
    if version != SSLE_VERSION {
        return Err(Error::Format(format!("unsupported SSLE version {version}")));
    }
    let frames = le_u32(bytes, 8) as usize;
    let dim = le_u32(bytes, 12) as usize;
    let frame_rate_hz = f32::from_le_bytes(bytes[16..20].try_into().expect("4-byte slice"));
    let expected = frames
        .checked_mul(dim)
        .and_then(|n| n.checked_mul(4))
        .and_then(|n| n.checked_add(HEADER_LEN))
        .ok_or_else(|| Error::Format(format!("declared shape {frames}x{dim} overflows")))?;
    if bytes.len() < expected {
        return Err(Error::Truncated {
            expected,
            found: bytes.len(),
        });
    }
    if bytes.len() > expected {
        return Err(Error::Format(format!(
            "{} trailing bytes after declared {frames}x{dim} payload",
            bytes.len() - expected
        )));
    }
    let data = bytes[HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4-byte chunk")))
        .collect();
    EmbeddingMatrix::new(data, frames, dim, frame_rate_hz)
}

pub fn meta_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".meta.json");
    PathBuf::from(s)
}

/// Read an SSLE file and, when present, its metadata sidecar. Without a
/// sidecar the sample id falls back to the file stem.
pub fn read_embeddings(path: &Path) -> Result<EmbeddingMatrix> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let m = decode_ssle(&bytes)?;
    let sidecar = meta_path(path);
    let meta = if sidecar.exists() {
        let text = fs::read_to_string(&sidecar).map_err(|e| Error::io(&sidecar, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            context: sidecar.display().to_string(),
            line: e.line(),
            message: e.to_string(),
        })?
    } else {
        EmbeddingMeta {
            model_name: String::new(),
            layer: 0,
            sample_id: path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default(),
        }
    };
    Ok(m.with_meta(meta))
}

pub fn write_embeddings(path: &Path, m: &EmbeddingMatrix) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, encode_ssle(m)).map_err(|e| Error::io(path, e))?;
    let sidecar = meta_path(path);
    let json = serde_json::to_string_pretty(&m.meta()).expect("meta serializes");
    fs::write(&sidecar, json).map_err(|e| Error::io(&sidecar, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn matrix(frames: usize, dim: usize) -> EmbeddingMatrix {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let data = (0..frames * dim).map(|_| rng.gen_range(-3.0f32..3.0)).collect();
        EmbeddingMatrix::new(data, frames, dim, 50.0).unwrap()
    }

    #[test]
    fn small_file_decodes_to_declared_shape() {
        let m = EmbeddingMatrix::new(vec![1., 2., 3., 4., 5., 6.], 2, 3, 50.0).unwrap();
        let back = decode_ssle(&encode_ssle(&m)).unwrap();
        assert_eq!((back.frames(), back.dim()), (2, 3));
        assert_eq!(back.row(1), &[4., 5., 6.]);
    }

    #[test]
    fn truncated_payload_is_reported() {
        let bytes = encode_ssle(&matrix(4, 3));
        let err = decode_ssle(&bytes[..bytes.len() - 5]).unwrap_err();
        assert!(matches!(err, Error::Truncated { .. }), "{err}");
    }

    #[test]
    fn bad_magic_and_version() {
        let mut bytes = encode_ssle(&matrix(1, 1));
        bytes[0] = b'X';
        assert!(matches!(decode_ssle(&bytes), Err(Error::Format(_))));
        let mut bytes = encode_ssle(&matrix(1, 1));
        bytes[4] = 2;
        assert!(matches!(decode_ssle(&bytes), Err(Error::Format(_))));
    }

    #[test]
    fn nan_payload_rejected() {
        let mut bytes = encode_ssle(&matrix(2, 2));
        bytes[20..24].copy_from_slice(&f32::NAN.to_le_bytes());
        assert!(matches!(decode_ssle(&bytes), Err(Error::Validation(_))));
    }

    #[test]
    fn file_roundtrip_is_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.ssle");
        let m = matrix(100, 768).with_meta(EmbeddingMeta {
            model_name: "hubert-base".into(),
            layer: 8,
            sample_id: "s".into(),
        });
        write_embeddings(&path, &m).unwrap();
        let back = read_embeddings(&path).unwrap();
        assert_eq!(back, m);
        assert_eq!(fs::read(&path).unwrap(), encode_ssle(&back));
    }

    #[test]
    fn normalization_zero_mean() {
        let n = matrix(50, 4).normalized();
        for d in 0..4 {
            let mean: f64 = (0..50).map(|i| n.row(i)[d] as f64).sum::<f64>() / 50.0;
            assert!(mean.abs() < 1e-5);
        }
    }
}
