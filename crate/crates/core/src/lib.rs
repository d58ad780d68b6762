//! Prosody diversity metrics for groups of speech samples synthesized from
//! the same text and speaker prompt.

pub mod acoustic;
pub mod datamodel;
pub mod dswed;
pub mod error;
pub mod par;
pub mod pipeline;
pub mod report;
pub mod stats;
pub mod synth;
pub mod tokenizer;

pub use error::{Error, Result};
