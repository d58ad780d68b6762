//! Band-limited sample-rate conversion (Hann-windowed sinc).

use std::f64::consts::PI;

const ZERO_CROSSINGS: f64 = 16.0;

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        (PI * x).sin() / (PI * x)
    }
}

/// Resample `x` from `from_hz` to `to_hz`. Downsampling low-passes at the
/// output Nyquist frequency.
pub fn resample(x: &[f32], from_hz: u32, to_hz: u32) -> Vec<f32> {
    if from_hz == to_hz || x.is_empty() {
        return x.to_vec();
    }
    let ratio = to_hz as f64 / from_hz as f64;
    let cutoff = ratio.min(1.0);
    let half_width = (ZERO_CROSSINGS / cutoff).ceil() as i64;
    let out_len = ((x.len() as u64 * to_hz as u64) / from_hz as u64).max(1) as usize;
    let n_in = x.len() as i64;
    (0..out_len)
        .map(|n| {
            let t = n as f64 / ratio;
            let centre = t.floor() as i64;
            let mut acc = 0.0f64;
            for k in (centre - half_width + 1)..=(centre + half_width) {
                if k < 0 || k >= n_in {
                    continue;
                }
                let offset = t - k as f64;
                let u = offset / half_width as f64;
                if u.abs() >= 1.0 {
                    continue;
                }
                let window = 0.5 * (1.0 + (PI * u).cos());
                acc += x[k as usize] as f64 * cutoff * sinc(cutoff * offset) * window;
            }
            acc as f32
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tone(freq: f64, rate: u32, secs: f64) -> Vec<f32> {
        let n = (rate as f64 * secs) as usize;
        (0..n)
            .map(|i| (2.0 * PI * freq * i as f64 / rate as f64).sin() as f32)
            .collect()
    }

    #[test]
    fn identity_when_rates_match() {
        let x = tone(220.0, 16000, 0.1);
        assert_eq!(resample(&x, 16000, 16000), x);
    }

    #[test]
    fn tone_survives_downsampling() {
        let x = tone(440.0, 48000, 0.5);
        let y = resample(&x, 48000, 16000);
        assert_eq!(y.len(), 8000);
        let reference = tone(440.0, 16000, 0.5);
        // ignore edge transients
        let err = y[500..7500]
            .iter()
            .zip(&reference[500..7500])
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f32, f32::max);
        assert!(err < 0.01, "max error {err}");
    }

    #[test]
    fn content_above_new_nyquist_is_removed() {
        let x = tone(11000.0, 44100, 0.5);
        let y = resample(&x, 44100, 16000);
        let rms = (y[500..y.len() - 500].iter().map(|v| v * v).sum::<f32>() / (y.len() - 1000) as f32).sqrt();
        assert!(rms < 0.02, "rms {rms}");
    }
}
