//! Synthetic speech-like corpora for tests, benchmarks and demos.
//!
//! Utterances are harmonic complexes with a moving F0 contour, syllable-rate
//! amplitude bursts with vowel-like spectral envelopes, and silent padding.
//! Stand-in frame embeddings are derived from the audio (mel cepstra plus
//! log-F0 at 50 frames/s), so token sequences follow the prosody of each
//! sample the way real SSL features would.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::acoustic::vad::{detect_span, VadConfig, VadTimestamps};
use crate::acoustic::{analyze, apply_span, write_wav, AnalysisConfig, Waveform};
use crate::datamodel::{write_manifest, EvalGroup, SampleRef};
use crate::error::{Error, Result};
use crate::tokenizer::{embedding_path, vad_path, write_embeddings, EmbeddingMatrix};

pub const SAMPLE_RATE: u32 = 16000;

/// Formant centre frequencies (Hz) of a handful of vowels.
const VOWELS: [(f64, f64); 5] = [(730.0, 1090.0), (270.0, 2290.0), (300.0, 870.0), (530.0, 1840.0), (570.0, 840.0)];

#[derive(Debug, Clone, PartialEq)]
pub struct UtteranceSpec {
    /// Voiced portion length in seconds (excluding padding).
    pub duration_s: f64,
    pub f0_hz: f64,
    /// Relative F0 excursion of the intonation contour.
    pub f0_depth: f64,
    /// Contour oscillation rate in Hz.
    pub f0_rate_hz: f64,
    pub syllables_per_s: f64,
    pub pad_s: f64,
    pub amplitude: f64,
    pub seed: u64,
}

impl Default for UtteranceSpec {
    fn default() -> Self {
        UtteranceSpec {
            duration_s: 1.5,
            f0_hz: 140.0,
            f0_depth: 0.15,
            f0_rate_hz: 1.3,
            syllables_per_s: 4.0,
            pad_s: 0.2,
            amplitude: 0.3,
            seed: 0,
        }
    }
}

fn formant_gain(freq: f64, (f1, f2): (f64, f64)) -> f64 {
    let peak = |f: f64, c: f64, bw: f64| 1.0 / (1.0 + ((f - c) / bw).powi(2));
    0.15 + peak(freq, f1, 120.0) + 0.6 * peak(freq, f2, 180.0)
}

/// Render one utterance at 16 kHz.
pub fn synth_utterance(spec: &UtteranceSpec) -> Waveform {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let rate = SAMPLE_RATE as f64;
    let pad = (spec.pad_s * rate).round() as usize;
    let n = (spec.duration_s * rate).round().max(1.0) as usize;
    let n_syll = (spec.duration_s * spec.syllables_per_s).ceil().max(1.0) as usize;
    let syll_len = n as f64 / n_syll as f64;
    let vowels: Vec<(f64, f64)> = (0..n_syll).map(|_| VOWELS[rng.gen_range(0..VOWELS.len())]).collect();
    let phase0 = rng.gen_range(0.0..2.0 * PI);

    let mut out = Vec::with_capacity(n + 2 * pad);
    out.extend((0..pad).map(|_| rng.gen_range(-1e-5..1e-5) as f32));
    let mut phase = 0.0f64;
    for i in 0..n {
        let t = i as f64 / rate;
        let declination = 1.0 - 0.1 * t / spec.duration_s.max(1e-3);
        let f0 = spec.f0_hz * declination * (1.0 + spec.f0_depth * (2.0 * PI * spec.f0_rate_hz * t + phase0).sin());
        phase += 2.0 * PI * f0 / rate;
        let s = ((i as f64 / syll_len) as usize).min(n_syll - 1);
        let within = (i as f64 - s as f64 * syll_len) / syll_len;
        // raised-cosine burst with a short gap at each syllable edge
        let env = if (0.08..0.92).contains(&within) {
            (PI * (within - 0.08) / 0.84).sin().powf(0.7)
        } else {
            0.0
        };
        let mut v = 0.0;
        let mut norm = 0.0;
        let mut h = 1.0;
        while h * f0 < 4000.0 {
            let g = formant_gain(h * f0, vowels[s]) / h.sqrt();
            v += g * (h * phase).sin();
            norm += g;
            h += 1.0;
        }
        let x = spec.amplitude * env * v / norm.max(1e-9) + rng.gen_range(-1e-5..1e-5);
        out.push(x as f32);
    }
    out.extend((0..pad).map(|_| rng.gen_range(-1e-5..1e-5) as f32));
    Waveform::new(out, SAMPLE_RATE).expect("16 kHz is supported")
}

/// Frame embeddings at 50 frames/s: mel cepstra c0..c12, log-F0 and a
/// voicing flag (15 dimensions).
pub fn pseudo_embeddings(x: &Waveform, sample_id: &str) -> Result<EmbeddingMatrix> {
    let cfg = AnalysisConfig {
        hop: 320,
        ..AnalysisConfig::default()
    };
    let track = analyze(x, &cfg)?;
    let dim = track.n_ceps() + 2;
    let mut data = Vec::with_capacity(track.frames() * dim);
    for i in 0..track.frames() {
        data.extend(track.cepstrum(i).iter().map(|&c| (c * 0.2) as f32));
        match track.log_f0[i] {
            Some(lf) => data.extend([((lf - 5.0) * 4.0) as f32, 1.0]),
            None => data.extend([0.0, 0.0]),
        }
    }
    let mut m = EmbeddingMatrix::new(data, track.frames(), dim, 50.0)?;
    m.model_name = "synthetic".into();
    m.layer = 0;
    m.sample_id = sample_id.to_string();
    Ok(m)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SystemSpec {
    pub name: String,
    /// 0 renders near-identical samples; 1 varies pitch, contour and tempo
    /// strongly across samples.
    pub diversity: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FixtureSpec {
    pub systems: Vec<SystemSpec>,
    pub prompts: usize,
    pub samples_per_group: usize,
    pub duration_s: f64,
    pub raters: usize,
    pub seed: u64,
}

impl Default for FixtureSpec {
    fn default() -> Self {
        FixtureSpec {
            systems: vec![
                SystemSpec {
                    name: "flat".into(),
                    diversity: 0.1,
                },
                SystemSpec {
                    name: "lively".into(),
                    diversity: 0.8,
                },
            ],
            prompts: 3,
            samples_per_group: 4,
            duration_s: 1.0,
            raters: 2,
            seed: 7,
        }
    }
}

/// A corpus written to disk.
#[derive(Debug, Clone)]
pub struct Fixture {
    pub root: PathBuf,
    pub manifest_path: PathBuf,
    pub groups: Vec<EvalGroup>,
    pub emb_dir: PathBuf,
    pub ratings_path: PathBuf,
    /// Generating parameters per (group_id, sample_id).
    pub params: Vec<(String, String, UtteranceSpec)>,
}

fn sample_spec(base: &UtteranceSpec, diversity: f64, rng: &mut ChaCha8Rng) -> UtteranceSpec {
    let mut jitter = |scale: f64| 1.0 + diversity * scale * rng.gen_range(-1.0..1.0);
    UtteranceSpec {
        f0_hz: base.f0_hz * jitter(0.35),
        f0_depth: (base.f0_depth * jitter(1.0)).max(0.0),
        f0_rate_hz: base.f0_rate_hz * jitter(0.6),
        syllables_per_s: base.syllables_per_s * jitter(0.4),
        duration_s: base.duration_s * jitter(0.3),
        seed: rng.gen(),
        ..base.clone()
    }
}

/// Perceived prosodic difference on a 1..5 scale, from generating parameters.
fn perceived_difference(a: &UtteranceSpec, b: &UtteranceSpec) -> f64 {
    let d = (a.f0_hz / b.f0_hz).ln().abs() * 6.0
        + (a.f0_depth - b.f0_depth).abs() * 4.0
        + (a.syllables_per_s / b.syllables_per_s).ln().abs() * 3.0
        + (a.duration_s / b.duration_s).ln().abs() * 2.0;
    1.0 + 4.0 * (1.0 - (-d).exp())
}

/// Write audio, manifest, embeddings (with VAD timestamps) and ratings under
/// `root`.
pub fn write_fixture(root: &Path, spec: &FixtureSpec) -> Result<Fixture> {
    if spec.samples_per_group < 2 || spec.prompts == 0 || spec.systems.is_empty() {
        return Err(Error::Validation("fixture needs systems, prompts and >= 2 samples per group".into()));
    }
    let audio_dir = root.join("audio");
    let emb_dir = root.join("embeddings");
    fs::create_dir_all(&audio_dir).map_err(|e| Error::io(&audio_dir, e))?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut groups = Vec::new();
    let mut params = Vec::new();
    let mut ratings = String::from("group_id,sample_id_a,sample_id_b,rater_id,score\n");

    for p in 0..spec.prompts {
        let base = UtteranceSpec {
            duration_s: spec.duration_s,
            f0_hz: rng.gen_range(100.0..200.0),
            f0_depth: rng.gen_range(0.08..0.2),
            f0_rate_hz: rng.gen_range(0.8..2.0),
            syllables_per_s: rng.gen_range(3.0..5.0),
            ..UtteranceSpec::default()
        };
        for system in &spec.systems {
            let group_id = format!("{}_p{p}", system.name);
            let mut samples = Vec::new();
            let mut specs = Vec::new();
            for s in 0..spec.samples_per_group {
                let sample_id = format!("{group_id}_s{s}");
                let u = sample_spec(&base, system.diversity, &mut rng);
                let x = synth_utterance(&u);
                let wav = audio_dir.join(format!("{sample_id}.wav"));
                write_wav(&wav, &x)?;

                let span = detect_span(&x, &VadConfig::default())?;
                let trimmed = apply_span(&x, span)?;
                let emb = pseudo_embeddings(&trimmed, &sample_id)?;
                write_embeddings(&embedding_path(&emb_dir, &group_id, &sample_id), &emb)?;
                let ts = VadTimestamps {
                    sample_id: sample_id.clone(),
                    t_start_s: Some(span.start_s(SAMPLE_RATE)),
                    t_end_s: Some(span.end_s(SAMPLE_RATE)),
                    all_silence: false,
                };
                let vp = vad_path(&emb_dir, &group_id, &sample_id);
                fs::write(&vp, serde_json::to_string(&ts).expect("timestamps serialize"))
                    .map_err(|e| Error::io(&vp, e))?;

                samples.push(SampleRef {
                    sample_id: sample_id.clone(),
                    group_id: group_id.clone(),
                    audio_path: PathBuf::from("audio").join(format!("{sample_id}.wav")),
                    duration_s: Some(x.duration_s()),
                    seed: Some(s as i64),
                });
                params.push((group_id.clone(), sample_id, u.clone()));
                specs.push(u);
            }
            for i in 0..samples.len() {
                for j in i + 1..samples.len() {
                    let truth = perceived_difference(&specs[i], &specs[j]);
                    for r in 0..spec.raters {
                        let score = (truth + rng.gen_range(-0.4..0.4)).clamp(1.0, 5.0);
                        ratings.push_str(&format!(
                            "{group_id},{},{},r{r},{score:.3}\n",
                            samples[i].sample_id, samples[j].sample_id
                        ));
                    }
                }
            }
            groups.push(EvalGroup {
                group_id,
                system: system.name.clone(),
                text: format!("prompt {p}"),
                speaker: format!("spk{}", p % 2),
                samples,
            });
        }
    }

    let manifest_path = root.join("groups.jsonl");
    write_manifest(&manifest_path, &groups)?;
    let ratings_path = root.join("ratings.csv");
    fs::write(&ratings_path, ratings).map_err(|e| Error::io(&ratings_path, e))?;
    // hand back groups with resolved paths, as load_manifest would
    for g in &mut groups {
        for s in &mut g.samples {
            s.audio_path = root.join(&s.audio_path);
        }
    }
    Ok(Fixture {
        root: root.to_path_buf(),
        manifest_path,
        groups,
        emb_dir,
        ratings_path,
        params,
    })
}

/// Random token sequences for property tests and benchmarks.
pub fn random_tokens(rng: &mut impl Rng, len: usize, k: u32) -> Vec<u32> {
    (0..len).map(|_| rng.gen_range(0..k)).collect()
}
