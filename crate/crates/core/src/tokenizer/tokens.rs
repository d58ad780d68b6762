use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Frame-level unit ids for one utterance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenSequence {
    pub sample_id: String,
    pub k: usize,
    pub frame_rate_hz: f32,
    pub tokens: Vec<u32>,
}

impl TokenSequence {
    pub fn new(sample_id: impl Into<String>, k: usize, tokens: Vec<u32>) -> Self {
        TokenSequence {
            sample_id: sample_id.into(),
            k,
            frame_rate_hz: 50.0,
            tokens,
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(&t) = self.tokens.iter().find(|&&t| t as usize >= self.k) {
            return Err(Error::Validation(format!(
                "token {t} out of range for k={} in `{}`",
                self.k, self.sample_id
            )));
        }
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let seq: TokenSequence = serde_json::from_str(&text).map_err(|e| Error::Parse {
            context: path.display().to_string(),
            line: e.line(),
            message: e.to_string(),
        })?;
        seq.validate()?;
        Ok(seq)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        let json = serde_json::to_string(self).expect("token sequence serializes");
        fs::write(path, json).map_err(|e| Error::io(path, e))
    }
}
