//! Evaluation statistics: correlation with human ratings, benchmark
//! aggregation and real-time factor.

pub mod aggregate;
pub mod correlation;
pub mod rtf;

pub use aggregate::{borda, borda_scores, group_correlations, micro_average, BordaTable, ExcludedGroup, MicroAverage, SystemScore};
pub use correlation::{fisher_aggregate, pearson, AggregateCorrelation, GroupCorrelation};
pub use rtf::{measure_rtf, DurationBasis, RtfReport};
