//! Energy-based leading/trailing silence trimming.
//!
//! Frames whose RMS level clears an adaptive threshold (noise floor plus a
//! margin, kept within a fixed range below the peak level) count as speech.
//! Every level is relative to the loudest frame, so a common gain leaves the
//! decisions unchanged. The trim keeps everything from the first speech frame to
//! the last one, refined to 1 ms blocks; interior pauses are never removed.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::wav::Waveform;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct VadConfig {
    pub frame_ms: f64,
    pub hop_ms: f64,
    /// Gaps shorter than this between speech frames are bridged when
    /// reporting speech segments.
    pub hangover_ms: f64,
    /// Threshold above the estimated noise floor.
    pub margin_db: f64,
    /// Input whose loudest frame is below this (dBFS) is treated as silence.
    pub silence_db: f64,
    /// Nothing more than this far below the peak is speech.
    pub range_db: f64,
    /// The threshold never exceeds `peak - peak_headroom_db`.
    pub peak_headroom_db: f64,
    /// Quantile of frame levels used as the noise-floor estimate.
    pub floor_quantile: f64,
}

impl Default for VadConfig {
    fn default() -> Self {
        VadConfig {
            frame_ms: 30.0,
            hop_ms: 10.0,
            hangover_ms: 200.0,
            margin_db: 12.0,
            silence_db: -100.0,
            range_db: 60.0,
            peak_headroom_db: 6.0,
            floor_quantile: 0.1,
        }
    }
}

/// Half-open sample range `[t_start, t_end)` kept after trimming.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrimSpan {
    pub t_start: usize,
    pub t_end: usize,
}

impl TrimSpan {
    pub fn new(t_start: usize, t_end: usize, len: usize) -> Result<Self> {
        if t_start >= t_end || t_end > len {
            return Err(Error::Validation(format!(
                "invalid trim span [{t_start}, {t_end}) for {len} samples"
            )));
        }
        Ok(TrimSpan { t_start, t_end })
    }

    pub fn len(&self) -> usize {
        self.t_end - self.t_start
    }

    pub fn is_empty(&self) -> bool {
        self.t_end <= self.t_start
    }

    pub fn start_s(&self, rate: u32) -> f64 {
        self.t_start as f64 / rate as f64
    }

    pub fn end_s(&self, rate: u32) -> f64 {
        self.t_end as f64 / rate as f64
    }
}

fn level_db(x: &[f32]) -> f64 {
    let ms = x.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>() / x.len().max(1) as f64;
    10.0 * ms.max(1e-30).log10()
}

struct Framing {
    frame: usize,
    hop: usize,
    count: usize,
}

fn framing(len: usize, rate: u32, cfg: &VadConfig) -> Framing {
    let frame = ((cfg.frame_ms / 1000.0) * rate as f64).round().max(1.0) as usize;
    let hop = ((cfg.hop_ms / 1000.0) * rate as f64).round().max(1.0) as usize;
    let count = if len <= frame {
        1
    } else {
        1 + (len - frame).div_ceil(hop)
    };
    Framing { frame, hop, count }
}

/// Per-frame speech decisions and the threshold (dBFS) used.
pub fn speech_frames(x: &Waveform, cfg: &VadConfig) -> Result<(Vec<bool>, f64)> {
    let f = framing(x.len(), x.sample_rate_hz, cfg);
    let levels: Vec<f64> = (0..f.count)
        .map(|i| {
            let start = i * f.hop;
            let end = (start + f.frame).min(x.len());
            level_db(&x.samples[start..end])
        })
        .collect();
    let peak = levels.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if peak < cfg.silence_db {
        return Err(Error::AllSilence);
    }
    let mut sorted = levels.clone();
    sorted.sort_by(f64::total_cmp);
    let q = ((sorted.len() - 1) as f64 * cfg.floor_quantile.clamp(0.0, 1.0)).round() as usize;
    let floor = sorted[q];
    let threshold = (floor + cfg.margin_db)
        .max(peak - cfg.range_db)
        .min(peak - cfg.peak_headroom_db);
    Ok((levels.iter().map(|&l| l >= threshold).collect(), threshold))
}

/// Speech regions with gaps shorter than the hangover bridged.
pub fn speech_segments(x: &Waveform, cfg: &VadConfig) -> Result<Vec<TrimSpan>> {
    let (flags, _) = speech_frames(x, cfg)?;
    let f = framing(x.len(), x.sample_rate_hz, cfg);
    let hang_frames = (cfg.hangover_ms / cfg.hop_ms).round() as usize;
    let mut segments: Vec<(usize, usize)> = Vec::new();
    for (i, &speech) in flags.iter().enumerate() {
        if !speech {
            continue;
        }
        match segments.last_mut() {
            Some((_, last)) if i - *last <= hang_frames + 1 => *last = i,
            _ => segments.push((i, i)),
        }
    }
    segments
        .into_iter()
        .map(|(a, b)| TrimSpan::new(a * f.hop, (b * f.hop + f.frame).min(x.len()), x.len()))
        .collect()
}

/// Locate the trim span without copying samples.
pub fn detect_span(x: &Waveform, cfg: &VadConfig) -> Result<TrimSpan> {
    let (flags, threshold) = speech_frames(x, cfg)?;
    let f = framing(x.len(), x.sample_rate_hz, cfg);
    let first = flags.iter().position(|&s| s).ok_or(Error::AllSilence)?;
    let last = flags.iter().rposition(|&s| s).expect("first exists");

    let block = (x.sample_rate_hz as usize / 1000).max(1);
    let loud = |start: usize| -> bool {
        let end = (start + block).min(x.len());
        level_db(&x.samples[start..end]) >= threshold
    };

    let region_start = first * f.hop;
    let region_end = (region_start + f.frame).min(x.len());
    let t_start = (region_start..region_end)
        .step_by(block)
        .find(|&s| loud(s))
        .unwrap_or(region_start);

    let tail_start = last * f.hop;
    let tail_end = (tail_start + f.frame).min(x.len());
    let t_end = (tail_start..tail_end)
        .step_by(block)
        .rfind(|&s| loud(s))
        .map(|s| (s + block).min(x.len()))
        .unwrap_or(tail_end);

    TrimSpan::new(t_start, t_end.max(t_start + 1), x.len())
}

pub fn apply_span(x: &Waveform, span: TrimSpan) -> Result<Waveform> {
    TrimSpan::new(span.t_start, span.t_end, x.len())?;
    Waveform::new(x.samples[span.t_start..span.t_end].to_vec(), x.sample_rate_hz)
}

/// Trim leading and trailing silence.
pub fn vad_trim(x: &Waveform, cfg: &VadConfig) -> Result<(Waveform, TrimSpan)> {
    let span = detect_span(x, cfg)?;
    Ok((apply_span(x, span)?, span))
}

/// Onset/offset supplied by an external VAD (`<sample_id>.vad.json`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VadTimestamps {
    pub sample_id: String,
    #[serde(default)]
    pub t_start_s: Option<f64>,
    #[serde(default)]
    pub t_end_s: Option<f64>,
    #[serde(default)]
    pub all_silence: bool,
}

impl VadTimestamps {
    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            context: path.display().to_string(),
            line: e.line(),
            message: e.to_string(),
        })
    }

    /// Convert to a sample span of `x`, clamping to its length.
    pub fn to_span(&self, x: &Waveform) -> Result<TrimSpan> {
        if self.all_silence {
            return Err(Error::AllSilence);
        }
        let (Some(start), Some(end)) = (self.t_start_s, self.t_end_s) else {
            return Err(Error::Validation(format!(
                "VAD timestamps for `{}` lack t_start_s/t_end_s",
                self.sample_id
            )));
        };
        if !(start.is_finite() && end.is_finite() && start >= 0.0 && start < end) {
            return Err(Error::Validation(format!(
                "VAD timestamps for `{}` out of order: {start}..{end}",
                self.sample_id
            )));
        }
        let rate = x.sample_rate_hz as f64;
        let s = ((start * rate).round() as usize).min(x.len().saturating_sub(1));
        let e = ((end * rate).round() as usize).clamp(s + 1, x.len());
        TrimSpan::new(s, e, x.len())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn padded_tone(pad_s: f64, tone_s: f64, rate: u32) -> Waveform {
        let pad = (pad_s * rate as f64) as usize;
        let n = (tone_s * rate as f64) as usize;
        let mut s = vec![0.0f32; pad];
        s.extend((0..n).map(|i| (2.0 * PI * 220.0 * i as f64 / rate as f64).sin() as f32));
        s.extend(vec![0.0f32; pad]);
        Waveform::new(s, rate).unwrap()
    }

    #[test]
    fn trims_padding_around_tone() {
        let x = padded_tone(0.5, 1.0, 16000);
        let (y, span) = vad_trim(&x, &VadConfig::default()).unwrap();
        assert!((span.start_s(16000) - 0.5).abs() <= 0.025, "{span:?}");
        assert!((span.end_s(16000) - 1.5).abs() <= 0.025, "{span:?}");
        assert_eq!(y.len(), span.len());
    }

    #[test]
    fn all_zeros_is_silence() {
        let x = Waveform::new(vec![0.0; 16000], 16000).unwrap();
        assert!(matches!(vad_trim(&x, &VadConfig::default()), Err(Error::AllSilence)));
    }

    #[test]
    fn unpadded_tone_is_kept_whole() {
        let x = padded_tone(0.0, 1.0, 16000);
        let (_, span) = vad_trim(&x, &VadConfig::default()).unwrap();
        assert_eq!((span.t_start, span.t_end), (0, x.len()));
    }

    #[test]
    fn interior_pause_is_preserved() {
        let a = padded_tone(0.3, 0.4, 16000);
        let mut s = a.samples.clone();
        s.extend(&a.samples);
        let x = Waveform::new(s, 16000).unwrap();
        let (_, span) = vad_trim(&x, &VadConfig::default()).unwrap();
        // tone, 0.6 s pause, tone
        assert!((span.len() as f64 / 16000.0 - 1.4).abs() < 0.05);
        // the pause exceeds the hangover, so two segments are reported
        assert_eq!(speech_segments(&x, &VadConfig::default()).unwrap().len(), 2);
    }

    #[test]
    fn external_timestamps() {
        let x = padded_tone(0.5, 1.0, 16000);
        let ts = VadTimestamps {
            sample_id: "s".into(),
            t_start_s: Some(0.25),
            t_end_s: Some(1.75),
            all_silence: false,
        };
        let span = ts.to_span(&x).unwrap();
        assert_eq!((span.t_start, span.t_end), (4000, 28000));
        let silent = VadTimestamps {
            all_silence: true,
            ..ts.clone()
        };
        assert!(matches!(silent.to_span(&x), Err(Error::AllSilence)));
        let bad = VadTimestamps {
            t_start_s: Some(1.0),
            t_end_s: Some(0.5),
            ..ts
        };
        assert!(bad.to_span(&x).is_err());
    }
}
