//! DTW-aligned log-F0 RMSE and mel cepstral distortion.

use std::f64::consts::LN_10;

use super::dtw::{fastdtw, FeatureSeq, WarpPath};
use super::features::{analyze, AnalysisConfig, FrameTrack};
use super::vad::{apply_span, vad_trim, TrimSpan, VadConfig};
use super::wav::Waveform;
use crate::error::{Error, Result};

/// Minimum co-voiced aligned frames for a usable log-F0 RMSE.
pub const MIN_COVOICED: usize = 5;

/// `(10 / ln 10) * sqrt(2)`, the usual MCD scale in dB.
pub fn mcd_constant() -> f64 {
    10.0 / LN_10 * 2f64.sqrt()
}

fn check_path(t1: &FrameTrack, t2: &FrameTrack, path: &WarpPath) -> Result<()> {
    path.validate(t1.frames(), t2.frames())
}

/// RMSE of natural-log F0 over aligned frame pairs where both are voiced.
pub fn log_f0_rmse(t1: &FrameTrack, t2: &FrameTrack, path: &WarpPath) -> Result<f64> {
    check_path(t1, t2, path)?;
    let mut sum = 0.0;
    let mut n = 0usize;
    for &(i, j) in path.iter() {
        if let (Some(a), Some(b)) = (t1.log_f0[i], t2.log_f0[j]) {
            sum += (a - b) * (a - b);
            n += 1;
        }
    }
    if n < MIN_COVOICED {
        return Err(Error::UnvoicedPair {
            co_voiced: n,
            required: MIN_COVOICED,
        });
    }
    Ok((sum / n as f64).sqrt())
}

/// Mean over aligned pairs of `(10/ln 10) * sqrt(2 * sum_d (c1d - c2d)^2)`
/// for d = 1..=12; c0 is excluded.
pub fn mcd(t1: &FrameTrack, t2: &FrameTrack, path: &WarpPath) -> Result<f64> {
    check_path(t1, t2, path)?;
    if t1.n_ceps() < 13 || t2.n_ceps() < 13 {
        return Err(Error::InsufficientData(format!(
            "MCD needs 13 cepstral coefficients, have {} and {}",
            t1.n_ceps(),
            t2.n_ceps()
        )));
    }
    let k = mcd_constant();
    let total: f64 = path
        .iter()
        .map(|&(i, j)| {
            let (a, b) = (t1.cepstrum(i), t2.cepstrum(j));
            let sq: f64 = (1..=12).map(|d| (a[d] - b[d]).powi(2)).sum();
            k * sq.sqrt()
        })
        .sum();
    Ok(total / path.len() as f64)
}

/// Cepstra c1..c12 as a DTW feature sequence. c0 tracks loudness and is left
/// out of the alignment, like it is left out of MCD.
pub fn alignment_features(t: &FrameTrack) -> FeatureSeq {
    let data = (0..t.frames())
        .flat_map(|i| t.cepstrum(i)[1..].iter().copied())
        .collect();
    FeatureSeq::new(data, t.n_ceps() - 1).expect("tracks have at least one frame")
}

#[derive(Debug, Clone, PartialEq)]
pub struct AcousticConfig {
    pub vad: VadConfig,
    pub analysis: AnalysisConfig,
    pub radius: usize,
}

impl Default for AcousticConfig {
    fn default() -> Self {
        AcousticConfig {
            vad: VadConfig::default(),
            analysis: AnalysisConfig::default(),
            radius: 1,
        }
    }
}

/// Per-pair outcome. Each metric fails independently; an unvoiced pair still
/// yields an MCD.
#[derive(Debug)]
pub struct AcousticScores {
    pub logf0_rmse: Result<f64>,
    pub mcd: Result<f64>,
    pub path_len: usize,
}

/// Trim (or apply a supplied span), then analyze.
pub fn prepare(x: &Waveform, span: Option<TrimSpan>, cfg: &AcousticConfig) -> Result<FrameTrack> {
    let trimmed = match span {
        Some(s) => apply_span(x, s)?,
        None => vad_trim(x, &cfg.vad)?.0,
    };
    analyze(&trimmed, &cfg.analysis)
}

/// Both metrics on one FastDTW path computed from the mel cepstra.
pub fn score_tracks(t1: &FrameTrack, t2: &FrameTrack, radius: usize) -> Result<AcousticScores> {
    // align in a canonical order so that swapping the inputs gives the same path
    let swap = t2.cepstra().iter().map(|v| v.to_bits()).lt(t1.cepstra().iter().map(|v| v.to_bits()));
    let (first, second) = if swap { (t2, t1) } else { (t1, t2) };
    let (path, _) = fastdtw(&alignment_features(first), &alignment_features(second), radius)?;
    Ok(AcousticScores {
        logf0_rmse: log_f0_rmse(first, second, &path),
        mcd: mcd(first, second, &path),
        path_len: path.len(),
    })
}

/// VAD trim, analysis, FastDTW on mel cepstra, then log-F0 RMSE and MCD on
/// the shared path.
pub fn acoustic_pair(x1: &Waveform, x2: &Waveform, cfg: &AcousticConfig) -> Result<AcousticScores> {
    acoustic_pair_with_spans(x1, None, x2, None, cfg)
}

pub fn acoustic_pair_with_spans(
    x1: &Waveform,
    span1: Option<TrimSpan>,
    x2: &Waveform,
    span2: Option<TrimSpan>,
    cfg: &AcousticConfig,
) -> Result<AcousticScores> {
    let t1 = prepare(x1, span1, cfg)?;
    let t2 = prepare(x2, span2, cfg)?;
    score_tracks(&t1, &t2, cfg.radius)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn track(ceps: Vec<Vec<f64>>, f0: Vec<Option<f64>>) -> FrameTrack {
        let n = ceps[0].len();
        FrameTrack::new(ceps.concat(), n, f0.into_iter().map(|v| v.map(f64::ln)).collect(), 0.01, 0.025).unwrap()
    }

    fn diagonal(n: usize) -> WarpPath {
        WarpPath((0..n).map(|i| (i, i)).collect())
    }

    #[test]
    fn constant_log_offset() {
        let f0: Vec<Option<f64>> = (0..20).map(|i| Some(100.0 + 5.0 * i as f64)).collect();
        let shifted: Vec<Option<f64>> = f0.iter().map(|f| f.map(|v| v * 0.25f64.exp())).collect();
        let c = vec![vec![0.0; 13]; 20];
        let r = log_f0_rmse(&track(c.clone(), f0), &track(c, shifted), &diagonal(20)).unwrap();
        assert!((r - 0.25).abs() < 1e-9, "{r}");
    }

    #[test]
    fn unvoiced_pair() {
        let c = vec![vec![0.0; 13]; 10];
        let t = track(c, vec![None; 10]);
        assert!(matches!(log_f0_rmse(&t, &t, &diagonal(10)), Err(Error::UnvoicedPair { co_voiced: 0, .. })));
    }

    #[test]
    fn single_coefficient_delta() {
        let a = vec![vec![0.0; 13]];
        let mut b = a.clone();
        b[0][4] = 0.7;
        // c0 differences are ignored
        b[0][0] = 100.0;
        let m = mcd(&track(a, vec![None]), &track(b, vec![None]), &diagonal(1)).unwrap();
        assert!((m - mcd_constant() * 0.7).abs() < 1e-12);
    }

    #[test]
    fn mcd_symmetric_under_transposed_path() {
        let a: Vec<Vec<f64>> = (0..6).map(|i| (0..13).map(|d| (i * d) as f64 * 0.1).collect()).collect();
        let b: Vec<Vec<f64>> = (0..4).map(|i| (0..13).map(|d| (i + d) as f64 * 0.05).collect()).collect();
        let (ta, tb) = (track(a, vec![None; 6]), track(b, vec![None; 4]));
        let path = WarpPath(vec![(0, 0), (1, 0), (2, 1), (3, 2), (4, 2), (5, 3)]);
        let ab = mcd(&ta, &tb, &path).unwrap();
        let ba = mcd(&tb, &ta, &path.transposed()).unwrap();
        assert!((ab - ba).abs() < 1e-12);
    }

    #[test]
    fn path_must_fit_tracks() {
        let t = track(vec![vec![0.0; 13]; 3], vec![None; 3]);
        assert!(mcd(&t, &t, &diagonal(2)).is_err());
    }
}
