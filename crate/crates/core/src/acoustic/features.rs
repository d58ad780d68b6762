//! Frame-level front end: mel cepstra and YIN pitch.

use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use super::resample::resample;
use super::wav::Waveform;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct AnalysisConfig {
    pub sample_rate_hz: u32,
    pub frame_len: usize,
    pub hop: usize,
    pub n_fft: usize,
    pub n_mels: usize,
    /// Cepstral coefficients kept, including c0.
    pub n_ceps: usize,
    pub f0_min_hz: f64,
    pub f0_max_hz: f64,
    pub yin_threshold: f64,
    /// Frames more than this many dB below the loudest frame are unvoiced
    /// without running YIN.
    pub voicing_range_db: f64,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        AnalysisConfig {
            sample_rate_hz: 16000,
            frame_len: 400,
            hop: 160,
            n_fft: 512,
            n_mels: 40,
            n_ceps: 13,
            f0_min_hz: 50.0,
            f0_max_hz: 600.0,
            yin_threshold: 0.15,
            voicing_range_db: 50.0,
        }
    }
}

/// Per-frame features of one utterance.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameTrack {
    mel_cepstra: Vec<f64>,
    n_ceps: usize,
    /// Natural-log F0 per frame; `None` marks an unvoiced frame.
    pub log_f0: Vec<Option<f64>>,
    pub frame_hop_s: f64,
    pub frame_len_s: f64,
}

impl FrameTrack {
    pub fn new(
        mel_cepstra: Vec<f64>,
        n_ceps: usize,
        log_f0: Vec<Option<f64>>,
        frame_hop_s: f64,
        frame_len_s: f64,
    ) -> Result<Self> {
        if n_ceps == 0 || mel_cepstra.is_empty() || !mel_cepstra.len().is_multiple_of(n_ceps) {
            return Err(Error::Validation(format!(
                "cepstra length {} is not a positive multiple of {n_ceps}",
                mel_cepstra.len()
            )));
        }
        if mel_cepstra.len() / n_ceps != log_f0.len() {
            return Err(Error::DimensionMismatch {
                expected: mel_cepstra.len() / n_ceps,
                found: log_f0.len(),
            });
        }
        Ok(FrameTrack {
            mel_cepstra,
            n_ceps,
            log_f0,
            frame_hop_s,
            frame_len_s,
        })
    }

    pub fn frames(&self) -> usize {
        self.log_f0.len()
    }

    pub fn n_ceps(&self) -> usize {
        self.n_ceps
    }

    pub fn cepstrum(&self, i: usize) -> &[f64] {
        &self.mel_cepstra[i * self.n_ceps..(i + 1) * self.n_ceps]
    }

    pub fn cepstra(&self) -> &[f64] {
        &self.mel_cepstra
    }

    pub fn voiced_fraction(&self) -> f64 {
        self.log_f0.iter().filter(|f| f.is_some()).count() as f64 / self.frames() as f64
    }

    /// F0 in Hz per frame.
    pub fn f0_hz(&self) -> Vec<Option<f64>> {
        self.log_f0.iter().map(|f| f.map(f64::exp)).collect()
    }
}

fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular mel filters over `n_fft / 2 + 1` power-spectrum bins.
pub fn mel_filterbank(n_mels: usize, n_fft: usize, sample_rate: u32) -> Vec<Vec<f64>> {
    let n_bins = n_fft / 2 + 1;
    let max_mel = hz_to_mel(sample_rate as f64 / 2.0);
    let edges: Vec<f64> = (0..n_mels + 2)
        .map(|i| mel_to_hz(max_mel * i as f64 / (n_mels + 1) as f64))
        .collect();
    let bin_hz = sample_rate as f64 / n_fft as f64;
    (0..n_mels)
        .map(|m| {
            let (lo, mid, hi) = (edges[m], edges[m + 1], edges[m + 2]);
            (0..n_bins)
                .map(|b| {
                    let f = b as f64 * bin_hz;
                    if f <= lo || f >= hi {
                        0.0
                    } else if f <= mid {
                        (f - lo) / (mid - lo)
                    } else {
                        (hi - f) / (hi - mid)
                    }
                })
                .collect()
        })
        .collect()
}

/// Orthonormal DCT-II, first `n_out` coefficients.
pub fn dct2(x: &[f64], n_out: usize) -> Vec<f64> {
    let n = x.len() as f64;
    (0..n_out)
        .map(|k| {
            let s: f64 = x
                .iter()
                .enumerate()
                .map(|(i, v)| v * (PI * k as f64 * (i as f64 + 0.5) / n).cos())
                .sum();
            let scale = if k == 0 { (1.0 / n).sqrt() } else { (2.0 / n).sqrt() };
            s * scale
        })
        .collect()
}

struct CepstrumExtractor {
    fft: Arc<dyn Fft<f64>>,
    window: Vec<f64>,
    filters: Vec<Vec<f64>>,
    n_fft: usize,
    n_ceps: usize,
}

impl CepstrumExtractor {
    fn new(cfg: &AnalysisConfig) -> Self {
        let mut planner = FftPlanner::new();
        let window = (0..cfg.frame_len)
            .map(|i| 0.54 - 0.46 * (2.0 * PI * i as f64 / (cfg.frame_len - 1) as f64).cos())
            .collect();
        CepstrumExtractor {
            fft: planner.plan_fft_forward(cfg.n_fft),
            window,
            filters: mel_filterbank(cfg.n_mels, cfg.n_fft, cfg.sample_rate_hz),
            n_fft: cfg.n_fft,
            n_ceps: cfg.n_ceps,
        }
    }

    fn frame(&self, x: &[f32]) -> Vec<f64> {
        let mut buf = vec![Complex::new(0.0, 0.0); self.n_fft];
        for ((b, &s), w) in buf.iter_mut().zip(x).zip(&self.window) {
            b.re = s as f64 * w;
        }
        self.fft.process(&mut buf);
        let power: Vec<f64> = buf[..self.n_fft / 2 + 1].iter().map(|c| c.norm_sqr()).collect();
        let log_mel: Vec<f64> = self
            .filters
            .iter()
            .map(|f| {
                let e: f64 = f.iter().zip(&power).map(|(w, p)| w * p).sum();
                e.max(1e-20).ln()
            })
            .collect();
        dct2(&log_mel, self.n_ceps)
    }
}

/// YIN estimate for one analysis segment; returns F0 in Hz when voiced.
pub fn yin_pitch(segment: &[f32], window: usize, sample_rate: u32, cfg: &AnalysisConfig) -> Option<f64> {
    let tau_min = ((sample_rate as f64 / cfg.f0_max_hz).floor() as usize).max(2);
    let tau_max = (sample_rate as f64 / cfg.f0_min_hz).ceil() as usize;
    let tau_max = tau_max.min(segment.len().saturating_sub(window));
    if tau_max <= tau_min + 1 || window == 0 {
        return None;
    }
    let x: Vec<f64> = segment.iter().map(|&v| v as f64).collect();
    let mut diff = vec![0.0f64; tau_max + 1];
    for (tau, d) in diff.iter_mut().enumerate().skip(1) {
        *d = (0..window).map(|j| (x[j] - x[j + tau]).powi(2)).sum();
    }
    let mut cmndf = vec![1.0f64; tau_max + 1];
    let mut running = 0.0;
    for tau in 1..=tau_max {
        running += diff[tau];
        cmndf[tau] = if running > 0.0 {
            diff[tau] * tau as f64 / running
        } else {
            1.0
        };
    }
    let mut tau = tau_min;
    while tau < tau_max {
        if cmndf[tau] < cfg.yin_threshold {
            while tau + 1 < tau_max && cmndf[tau + 1] < cmndf[tau] {
                tau += 1;
            }
            break;
        }
        tau += 1;
    }
    if tau >= tau_max || cmndf[tau] >= cfg.yin_threshold {
        return None;
    }
    let refined = if tau > 1 && tau < tau_max {
        let (a, b, c) = (cmndf[tau - 1], cmndf[tau], cmndf[tau + 1]);
        let denom = a - 2.0 * b + c;
        if denom.abs() > 1e-12 {
            tau as f64 + 0.5 * (a - c) / denom
        } else {
            tau as f64
        }
    } else {
        tau as f64
    };
    let f0 = sample_rate as f64 / refined;
    (cfg.f0_min_hz..=cfg.f0_max_hz).contains(&f0).then_some(f0)
}

/// Mel cepstra and log-F0 for every frame of `x` (resampled to the analysis
/// rate first).
pub fn analyze(x: &Waveform, cfg: &AnalysisConfig) -> Result<FrameTrack> {
    let samples = resample(&x.samples, x.sample_rate_hz, cfg.sample_rate_hz);
    if samples.len() < cfg.frame_len {
        return Err(Error::InsufficientData(format!(
            "{} samples at {} Hz is shorter than one {}-sample frame",
            samples.len(),
            cfg.sample_rate_hz,
            cfg.frame_len
        )));
    }
    let n_frames = 1 + (samples.len() - cfg.frame_len) / cfg.hop;
    let extractor = CepstrumExtractor::new(cfg);
    let pitch_span = cfg.frame_len + (cfg.sample_rate_hz as f64 / cfg.f0_min_hz).ceil() as usize;

    let frame_rms = |start: usize| {
        let frame = &samples[start..start + cfg.frame_len];
        (frame.iter().map(|&v| (v as f64).powi(2)).sum::<f64>() / frame.len() as f64).sqrt()
    };
    let loudest = (0..n_frames).map(|i| frame_rms(i * cfg.hop)).fold(0.0, f64::max);
    let voicing_floor = loudest * 10f64.powf(-cfg.voicing_range_db / 20.0);

    let mut cepstra = Vec::with_capacity(n_frames * cfg.n_ceps);
    let mut log_f0 = Vec::with_capacity(n_frames);
    for i in 0..n_frames {
        let start = i * cfg.hop;
        let frame = &samples[start..start + cfg.frame_len];
        cepstra.extend(extractor.frame(frame));

        let rms = frame_rms(start);
        let f0 = if rms <= voicing_floor {
            None
        } else {
            // keep the lag search inside the signal near the end
            let seg_start = start.min(samples.len().saturating_sub(pitch_span));
            let seg_end = (seg_start + pitch_span).min(samples.len());
            yin_pitch(&samples[seg_start..seg_end], cfg.frame_len, cfg.sample_rate_hz, cfg)
        };
        log_f0.push(f0.map(f64::ln));
    }
    FrameTrack::new(
        cepstra,
        cfg.n_ceps,
        log_f0,
        cfg.hop as f64 / cfg.sample_rate_hz as f64,
        cfg.frame_len as f64 / cfg.sample_rate_hz as f64,
    )
}
