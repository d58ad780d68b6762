//! k-means quantizer for SSL frames.
//!
//! Training is Lloyd's algorithm seeded with k-means++. The assignment step
//! and the partial centroid sums run over fixed 4096-row chunks and are
//! reduced in chunk order, so centroids are bit-identical for any worker
//! count.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::embedding::EmbeddingMatrix;
use super::tokens::TokenSequence;
use crate::error::{Error, Result};
use crate::par;

pub const KMNS_MAGIC: &[u8; 4] = b"KMNS";
pub const KMNS_VERSION: u32 = 1;
const CHUNK_ROWS: usize = 4096;

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansConfig {
    pub k: usize,
    pub seed: u64,
    pub max_iters: usize,
    /// Stop once `(prev - cur) / prev` falls below this.
    pub rel_tol: f64,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        KMeansConfig {
            k: 50,
            seed: 0,
            max_iters: 100,
            rel_tol: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct KMeansMetadata {
    #[serde(default)]
    pub model_name: String,
    #[serde(default)]
    pub layer: Option<u32>,
    #[serde(default)]
    pub training_corpus: String,
    pub seed: u64,
    pub iterations_run: usize,
    pub inertia: f64,
    /// Inertia after initialization and after every accepted Lloyd step.
    #[serde(default)]
    pub inertia_history: Vec<f64>,
    /// Frames were z-scored per utterance before training; assignment applies
    /// the same transform.
    #[serde(default)]
    pub normalize: bool,
    #[serde(default)]
    pub frame_stride: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansModel {
    k: usize,
    dim: usize,
    centroids: Vec<f32>,
    pub metadata: KMeansMetadata,
}

#[inline]
fn sq_dist(a: &[f32], b: &[f32]) -> f32 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index of the nearest centroid and its squared distance. Ties go to the
/// lowest index.
#[inline]
fn nearest(centroids: &[f32], dim: usize, row: &[f32]) -> (u32, f32) {
    let mut best = 0u32;
    let mut best_d = f32::INFINITY;
    for (c, centroid) in centroids.chunks_exact(dim).enumerate() {
        let d = sq_dist(row, centroid);
        if d < best_d {
            best_d = d;
            best = c as u32;
        }
    }
    (best, best_d)
}

struct Assignment {
    labels: Vec<u32>,
    dists: Vec<f32>,
    inertia: f64,
}

fn assign_all(data: &[f32], dim: usize, centroids: &[f32]) -> Assignment {
    let parts = par::map_chunks(data, CHUNK_ROWS * dim, |_, chunk| {
        let mut labels = Vec::with_capacity(chunk.len() / dim);
        let mut dists = Vec::with_capacity(chunk.len() / dim);
        let mut sum = 0.0f64;
        for row in chunk.chunks_exact(dim) {
            let (l, d) = nearest(centroids, dim, row);
            labels.push(l);
            dists.push(d);
            sum += d as f64;
        }
        (labels, dists, sum)
    });
    let mut out = Assignment {
        labels: Vec::with_capacity(data.len() / dim),
        dists: Vec::with_capacity(data.len() / dim),
        inertia: 0.0,
    };
    for (l, d, s) in parts {
        out.labels.extend(l);
        out.dists.extend(d);
        out.inertia += s;
    }
    out
}

/// Per-cluster coordinate sums and counts, reduced in chunk order.
fn cluster_sums(data: &[f32], dim: usize, k: usize, labels: &[u32]) -> (Vec<f64>, Vec<usize>) {
    let parts = par::map_chunks(data, CHUNK_ROWS * dim, |ci, chunk| {
        let mut sums = vec![0.0f64; k * dim];
        let mut counts = vec![0usize; k];
        let base = ci * CHUNK_ROWS;
        for (r, row) in chunk.chunks_exact(dim).enumerate() {
            let c = labels[base + r] as usize;
            counts[c] += 1;
            for (s, &v) in sums[c * dim..(c + 1) * dim].iter_mut().zip(row) {
                *s += v as f64;
            }
        }
        (sums, counts)
    });
    let mut sums = vec![0.0f64; k * dim];
    let mut counts = vec![0usize; k];
    for (s, c) in parts {
        for (a, b) in sums.iter_mut().zip(&s) {
            *a += b;
        }
        for (a, b) in counts.iter_mut().zip(&c) {
            *a += b;
        }
    }
    (sums, counts)
}

fn kmeans_plus_plus(data: &[f32], dim: usize, k: usize, rng: &mut ChaCha8Rng) -> Result<Vec<f32>> {
    let n = data.len() / dim;
    let mut centroids = Vec::with_capacity(k * dim);
    let first = rng.gen_range(0..n);
    centroids.extend_from_slice(&data[first * dim..(first + 1) * dim]);
    let mut d2: Vec<f64> = par::map_chunks(data, CHUNK_ROWS * dim, |_, chunk| {
        chunk
            .chunks_exact(dim)
            .map(|row| sq_dist(row, &centroids[..dim]) as f64)
            .collect::<Vec<_>>()
    })
    .concat();
    for c in 1..k {
        let total: f64 = d2.iter().sum();
        if total <= 0.0 {
            return Err(Error::InsufficientData(format!(
                "only {c} distinct frames available for k={k}"
            )));
        }
        let target = rng.gen::<f64>() * total;
        let mut acc = 0.0;
        let mut pick = None;
        for (i, &d) in d2.iter().enumerate() {
            if d <= 0.0 {
                continue;
            }
            acc += d;
            pick = Some(i);
            if acc > target {
                break;
            }
        }
        let pick = pick.expect("positive total implies a positive entry");
        let row = &data[pick * dim..(pick + 1) * dim];
        centroids.extend_from_slice(row);
        let updated: Vec<f64> = par::map_chunks(data, CHUNK_ROWS * dim, |ci, chunk| {
            let base = ci * CHUNK_ROWS;
            chunk
                .chunks_exact(dim)
                .enumerate()
                .map(|(r, x)| d2[base + r].min(sq_dist(x, row) as f64))
                .collect::<Vec<_>>()
        })
        .concat();
        d2 = updated;
    }
    Ok(centroids)
}

/// Train on row-major `data` with `dim` columns.
pub fn kmeans_train(data: &[f32], dim: usize, cfg: &KMeansConfig) -> Result<KMeansModel> {
    let k = cfg.k;
    if k < 2 {
        return Err(Error::Validation(format!("k must be at least 2, got {k}")));
    }
    if dim == 0 || !data.len().is_multiple_of(dim) {
        return Err(Error::Validation(format!(
            "data length {} is not a multiple of dim {dim}",
            data.len()
        )));
    }
    let n = data.len() / dim;
    if n < k {
        return Err(Error::InsufficientData(format!(
            "{n} frames cannot support k={k} clusters"
        )));
    }
    if data.iter().any(|v| !v.is_finite()) {
        return Err(Error::Validation("training data contains non-finite values".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut centroids = kmeans_plus_plus(data, dim, k, &mut rng)?;
    let mut current = assign_all(data, dim, &centroids);
    let mut history = vec![current.inertia];
    let mut iterations = 0;

    while iterations < cfg.max_iters {
        let (sums, counts) = cluster_sums(data, dim, k, &current.labels);
        let mut next = centroids.clone();
        let mut needs_reseed = Vec::new();
        for c in 0..k {
            if counts[c] == 0 {
                needs_reseed.push(c);
                continue;
            }
            let inv = 1.0 / counts[c] as f64;
            for d in 0..dim {
                next[c * dim + d] = (sums[c * dim + d] * inv) as f32;
            }
        }
        for c in 1..k {
            let dup = (0..c).any(|o| next[o * dim..(o + 1) * dim] == next[c * dim..(c + 1) * dim]);
            if dup && !needs_reseed.contains(&c) {
                needs_reseed.push(c);
            }
        }
        if !needs_reseed.is_empty() {
            reseed(data, dim, &mut next, &needs_reseed, &current.dists);
        }

        let candidate = assign_all(data, dim, &next);
        if candidate.inertia > current.inertia {
            // rounding noise at convergence; keep the better solution
            break;
        }
        iterations += 1;
        let prev = current.inertia;
        centroids = next;
        current = candidate;
        history.push(current.inertia);
        log::debug!("k-means iteration {iterations}: inertia {}", current.inertia);
        if prev <= 0.0 || (prev - current.inertia) / prev < cfg.rel_tol {
            break;
        }
    }

    Ok(KMeansModel {
        k,
        dim,
        centroids,
        metadata: KMeansMetadata {
            seed: cfg.seed,
            iterations_run: iterations,
            inertia: current.inertia,
            inertia_history: history,
            ..Default::default()
        },
    })
}

/// Move each cluster in `which` onto the frame farthest from its assigned
/// centroid, taking frames in decreasing distance (lowest index on ties).
fn reseed(data: &[f32], dim: usize, centroids: &mut [f32], which: &[usize], dists: &[f32]) {
    let mut order: Vec<usize> = (0..dists.len()).collect();
    order.sort_by(|&a, &b| dists[b].total_cmp(&dists[a]).then(a.cmp(&b)));
    let mut taken = order.into_iter();
    for &c in which {
        if let Some(i) = taken.next() {
            centroids[c * dim..(c + 1) * dim].copy_from_slice(&data[i * dim..(i + 1) * dim]);
            log::debug!("re-seeded cluster {c} at frame {i}");
        }
    }
}

impl KMeansModel {
    pub fn from_centroids(centroids: Vec<f32>, k: usize, dim: usize, metadata: KMeansMetadata) -> Result<Self> {
        if k < 2 {
            return Err(Error::Validation(format!("k must be at least 2, got {k}")));
        }
        if dim == 0 || centroids.len() != k * dim {
            return Err(Error::DimensionMismatch {
                expected: k * dim,
                found: centroids.len(),
            });
        }
        if centroids.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation("centroids contain non-finite values".into()));
        }
        for c in 1..k {
            for o in 0..c {
                if centroids[o * dim..(o + 1) * dim] == centroids[c * dim..(c + 1) * dim] {
                    return Err(Error::Validation(format!("centroids {o} and {c} are identical")));
                }
            }
        }
        Ok(KMeansModel {
            k,
            dim,
            centroids,
            metadata,
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn centroids(&self) -> &[f32] {
        &self.centroids
    }

    pub fn centroid(&self, c: usize) -> &[f32] {
        &self.centroids[c * self.dim..(c + 1) * self.dim]
    }

    /// Nearest centroid for a single frame.
    pub fn nearest(&self, frame: &[f32]) -> u32 {
        nearest(&self.centroids, self.dim, frame).0
    }

    pub fn encode(&self) -> Vec<u8> {
        let meta = serde_json::to_vec(&self.metadata).expect("metadata serializes");
        let mut buf = Vec::with_capacity(16 + self.centroids.len() * 4 + 4 + meta.len());
        buf.extend_from_slice(KMNS_MAGIC);
        buf.extend_from_slice(&KMNS_VERSION.to_le_bytes());
        buf.extend_from_slice(&(self.k as u32).to_le_bytes());
        buf.extend_from_slice(&(self.dim as u32).to_le_bytes());
        for v in &self.centroids {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        buf.extend_from_slice(&(meta.len() as u32).to_le_bytes());
        buf.extend_from_slice(&meta);
        buf
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let u32_at = |at: usize| -> Result<u32> {
            bytes
                .get(at..at + 4)
                .map(|b| u32::from_le_bytes(b.try_into().expect("4 bytes")))
                .ok_or(Error::Truncated {
                    expected: at + 4,
                    found: bytes.len(),
                })
        };
        if bytes.len() < 4 || &bytes[..4] != KMNS_MAGIC {
            return Err(Error::Format("missing KMNS magic".into()));
        }
        let version = u32_at(4)?;
        if version != KMNS_VERSION {
            return Err(Error::Format(format!("unsupported KMNS version {version}")));
        }
        let k = u32_at(8)? as usize;
        let dim = u32_at(12)? as usize;
        let payload_end = 16 + k * dim * 4;
        if bytes.len() < payload_end + 4 {
            return Err(Error::Truncated {
                expected: payload_end + 4,
                found: bytes.len(),
            });
        }
        let centroids = bytes[16..payload_end]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        let meta_len = u32_at(payload_end)? as usize;
        let meta_start = payload_end + 4;
        let meta_bytes = bytes.get(meta_start..meta_start + meta_len).ok_or(Error::Truncated {
            expected: meta_start + meta_len,
            found: bytes.len(),
        })?;
        let metadata: KMeansMetadata = serde_json::from_slice(meta_bytes)
            .map_err(|e| Error::Format(format!("bad KMNS metadata: {e}")))?;
        KMeansModel::from_centroids(centroids, k, dim, metadata)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        fs::write(path, self.encode()).map_err(|e| Error::io(path, e))
    }
}

/// Map every frame to its nearest centroid. Consecutive repeats are kept, so
/// the sequence length equals the frame count.
pub fn kmeans_assign(model: &KMeansModel, emb: &EmbeddingMatrix) -> Result<TokenSequence> {
    if emb.dim() != model.dim {
        return Err(Error::DimensionMismatch {
            expected: model.dim,
            found: emb.dim(),
        });
    }
    let normalized;
    let emb = if model.metadata.normalize {
        normalized = emb.normalized();
        &normalized
    } else {
        emb
    };
    let tokens = emb
        .data()
        .chunks_exact(model.dim)
        .map(|row| model.nearest(row))
        .collect();
    Ok(TokenSequence {
        sample_id: emb.sample_id.clone(),
        k: model.k,
        frame_rate_hz: emb.frame_rate_hz,
        tokens,
    })
}
