//! Dynamic time warping: exact DP and the multiresolution FastDTW
//! approximation.
//!
//! FastDTW halves both sequences (averaging adjacent frames), aligns the
//! coarse pair recursively, expands the coarse path by `radius` cells,
//! projects it onto the fine grid and runs windowed DTW there. At or below
//! `radius + 2` frames it falls back to exact DTW. Local cost is the
//! Euclidean distance between frames.

use crate::error::{Error, Result};

/// Row-major sequence of `dim`-dimensional frames.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSeq {
    data: Vec<f64>,
    dim: usize,
}

impl FeatureSeq {
    pub fn new(data: Vec<f64>, dim: usize) -> Result<Self> {
        if dim == 0 || data.is_empty() || !data.len().is_multiple_of(dim) {
            return Err(Error::Validation(format!(
                "feature data of length {} does not hold whole {dim}-dim frames",
                data.len()
            )));
        }
        Ok(FeatureSeq { data, dim })
    }

    pub fn from_scalars(values: &[f64]) -> Result<Self> {
        Self::new(values.to_vec(), 1)
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn frame(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    /// Average adjacent frame pairs; an odd trailing frame is kept as is.
    fn halved(&self) -> FeatureSeq {
        let n = self.len();
        let mut data = Vec::with_capacity(n.div_ceil(2) * self.dim);
        for i in (0..n).step_by(2) {
            if i + 1 < n {
                data.extend(self.frame(i).iter().zip(self.frame(i + 1)).map(|(a, b)| 0.5 * (a + b)));
            } else {
                data.extend_from_slice(self.frame(i));
            }
        }
        FeatureSeq { data, dim: self.dim }
    }
}

#[inline]
fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Monotone alignment between two sequences.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WarpPath(pub Vec<(usize, usize)>);

impl WarpPath {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &(usize, usize)> {
        self.0.iter()
    }

    /// Check boundary conditions, step set and monotonicity for an `n` x `m`
    /// alignment.
    pub fn validate(&self, n: usize, m: usize) -> Result<()> {
        let p = &self.0;
        if p.first() != Some(&(0, 0)) {
            return Err(Error::Validation(format!("path starts at {:?}, not (0, 0)", p.first())));
        }
        let end = (n.wrapping_sub(1), m.wrapping_sub(1));
        if p.last() != Some(&end) {
            return Err(Error::Validation(format!("path ends at {:?}, not {end:?}", p.last())));
        }
        for w in p.windows(2) {
            let (a, b) = (w[0], w[1]);
            let step = (b.0.wrapping_sub(a.0), b.1.wrapping_sub(a.1));
            if !matches!(step, (1, 0) | (0, 1) | (1, 1)) {
                return Err(Error::Validation(format!("illegal step {a:?} -> {b:?}")));
            }
        }
        Ok(())
    }

    /// The same alignment with the roles of the two sequences swapped.
    pub fn transposed(&self) -> WarpPath {
        WarpPath(self.0.iter().map(|&(i, j)| (j, i)).collect())
    }
}

/// Inclusive column range allowed in each row.
#[derive(Debug, Clone)]
struct Window {
    rows: Vec<(usize, usize)>,
}

impl Window {
    fn full(n: usize, m: usize) -> Self {
        Window {
            rows: vec![(0, m - 1); n],
        }
    }

    /// Expand a coarse path by `radius` coarse cells, then project each
    /// coarse cell onto its 2x2 block of fine cells.
    fn from_coarse_path(path: &WarpPath, radius: usize, coarse_n: usize, coarse_m: usize, n: usize, m: usize) -> Self {
        let mut coarse = vec![(usize::MAX, 0usize); coarse_n];
        for &(i, j) in path.iter() {
            let (r0, r1) = (i.saturating_sub(radius), (i + radius).min(coarse_n - 1));
            let (c0, c1) = (j.saturating_sub(radius), (j + radius).min(coarse_m - 1));
            for row in &mut coarse[r0..=r1] {
                row.0 = row.0.min(c0);
                row.1 = row.1.max(c1);
            }
        }
        let mut rows = vec![(usize::MAX, 0usize); n];
        for (ci, &(lo, hi)) in coarse.iter().enumerate() {
            if lo == usize::MAX {
                continue;
            }
            let (flo, fhi) = (2 * lo, (2 * hi + 1).min(m - 1));
            for r in [2 * ci, 2 * ci + 1] {
                if r < n {
                    rows[r].0 = rows[r].0.min(flo);
                    rows[r].1 = rows[r].1.max(fhi);
                }
            }
        }
        // every row is covered because the coarse path visits every coarse row
        Window { rows }
    }
}

/// Windowed DTW. Ties in the backtrack prefer the diagonal step.
fn dtw_windowed(a: &FeatureSeq, b: &FeatureSeq, window: &Window) -> (WarpPath, f64) {
    let n = a.len();
    let offsets: Vec<usize> = window
        .rows
        .iter()
        .scan(0usize, |acc, &(lo, hi)| {
            let o = *acc;
            *acc += hi - lo + 1;
            Some(o)
        })
        .collect();
    let total = offsets[n - 1] + window.rows[n - 1].1 - window.rows[n - 1].0 + 1;
    let mut acc = vec![f64::INFINITY; total];
    let get = |acc: &[f64], i: usize, j: usize| -> f64 {
        let (lo, hi) = window.rows[i];
        if j < lo || j > hi {
            f64::INFINITY
        } else {
            acc[offsets[i] + j - lo]
        }
    };
    for i in 0..n {
        let (lo, hi) = window.rows[i];
        for j in lo..=hi {
            let local = euclidean(a.frame(i), b.frame(j));
            let best_prev = if i == 0 && j == 0 {
                0.0
            } else {
                let diag = if i > 0 && j > 0 { get(&acc, i - 1, j - 1) } else { f64::INFINITY };
                let up = if i > 0 { get(&acc, i - 1, j) } else { f64::INFINITY };
                let left = if j > 0 { get(&acc, i, j - 1) } else { f64::INFINITY };
                diag.min(up).min(left)
            };
            acc[offsets[i] + j - lo] = local + best_prev;
        }
    }
    let m = b.len();
    let cost = get(&acc, n - 1, m - 1);
    let mut path = vec![(n - 1, m - 1)];
    let (mut i, mut j) = (n - 1, m - 1);
    while (i, j) != (0, 0) {
        let diag = if i > 0 && j > 0 { get(&acc, i - 1, j - 1) } else { f64::INFINITY };
        let up = if i > 0 { get(&acc, i - 1, j) } else { f64::INFINITY };
        let left = if j > 0 { get(&acc, i, j - 1) } else { f64::INFINITY };
        if diag <= up && diag <= left {
            i -= 1;
            j -= 1;
        } else if up <= left {
            i -= 1;
        } else {
            j -= 1;
        }
        path.push((i, j));
    }
    path.reverse();
    (WarpPath(path), cost)
}

fn check_inputs(a: &FeatureSeq, b: &FeatureSeq) -> Result<()> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::InsufficientData("DTW needs non-empty sequences".into()));
    }
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            expected: a.dim(),
            found: b.dim(),
        });
    }
    Ok(())
}

/// Exact O(nm) DTW.
pub fn dtw(a: &FeatureSeq, b: &FeatureSeq) -> Result<(WarpPath, f64)> {
    check_inputs(a, b)?;
    Ok(dtw_windowed(a, b, &Window::full(a.len(), b.len())))
}

fn fastdtw_rec(a: &FeatureSeq, b: &FeatureSeq, radius: usize) -> (WarpPath, f64) {
    let min_size = radius + 2;
    if a.len() <= min_size || b.len() <= min_size {
        return dtw_windowed(a, b, &Window::full(a.len(), b.len()));
    }
    let (ca, cb) = (a.halved(), b.halved());
    let (coarse_path, _) = fastdtw_rec(&ca, &cb, radius);
    let window = Window::from_coarse_path(&coarse_path, radius, ca.len(), cb.len(), a.len(), b.len());
    dtw_windowed(a, b, &window)
}

/// FastDTW alignment and its accumulated cost.
pub fn fastdtw(a: &FeatureSeq, b: &FeatureSeq, radius: usize) -> Result<(WarpPath, f64)> {
    check_inputs(a, b)?;
    Ok(fastdtw_rec(a, b, radius))
}
