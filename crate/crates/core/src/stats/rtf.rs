//! Real-time factor of a pairwise metric at batch size 1.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// What the processing time is divided by.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DurationBasis {
    /// Sum over timed pairs of the mean duration of the two samples.
    #[default]
    SumOfPairMeans,
    /// Mean pair duration, with processing time averaged per pair.
    PerPairMean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RtfReport {
    pub metric: String,
    pub total_processing_s: f64,
    pub total_pair_duration_s: f64,
    pub rtf: f64,
    pub pairs_timed: usize,
    pub basis: DurationBasis,
}

/// Time `f` over `items` sequentially on the calling thread. The first item
/// is a warm-up run and is excluded from both totals (unless it is the only
/// item). `durations` gives the two sample durations of an item in seconds.
pub fn measure_rtf<T, D, F, R>(
    metric: &str,
    items: &[T],
    durations: D,
    basis: DurationBasis,
    mut f: F,
) -> Result<RtfReport>
where
    D: Fn(&T) -> Option<(f64, f64)>,
    F: FnMut(&T) -> R,
{
    if items.is_empty() {
        return Err(Error::InsufficientData("RTF needs at least one pair".into()));
    }
    let mut pair_durations = Vec::with_capacity(items.len());
    for (i, item) in items.iter().enumerate() {
        match durations(item) {
            Some((a, b)) if a > 0.0 && b > 0.0 && a.is_finite() && b.is_finite() => {
                pair_durations.push(0.5 * (a + b))
            }
            _ => return Err(Error::MissingInput(format!("pair {i} has no known duration"))),
        }
    }
    let skip = usize::from(items.len() > 1);
    if skip == 1 {
        std::hint::black_box(f(&items[0]));
    }
    let mut processing = 0.0;
    for item in &items[skip..] {
        let start = Instant::now();
        std::hint::black_box(f(item));
        processing += start.elapsed().as_secs_f64();
    }
    let timed = items.len() - skip;
    let duration_sum: f64 = pair_durations[skip..].iter().sum();
    let (total_processing_s, total_pair_duration_s) = match basis {
        DurationBasis::SumOfPairMeans => (processing, duration_sum),
        DurationBasis::PerPairMean => (processing / timed as f64, duration_sum / timed as f64),
    };
    Ok(RtfReport {
        metric: metric.to_string(),
        total_processing_s,
        total_pair_duration_s,
        rtf: total_processing_s / total_pair_duration_s,
        pairs_timed: timed,
        basis,
    })
}
