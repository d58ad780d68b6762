//! Acoustic baselines: silence trimming, mel-cepstral/pitch analysis,
//! FastDTW alignment, log-F0 RMSE and MCD.

pub mod dtw;
pub mod features;
pub mod metrics;
pub mod resample;
pub mod vad;
pub mod wav;

pub use dtw::{dtw, fastdtw, FeatureSeq, WarpPath};
pub use features::{analyze, AnalysisConfig, FrameTrack};
pub use metrics::{acoustic_pair, acoustic_pair_with_spans, log_f0_rmse, mcd, AcousticConfig, AcousticScores};
pub use vad::{apply_span, detect_span, vad_trim, TrimSpan, VadConfig, VadTimestamps};
pub use wav::{read_wav, write_wav, Waveform};
