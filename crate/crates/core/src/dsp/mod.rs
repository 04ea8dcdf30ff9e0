//! Audio containers, WAV I/O and extraction of the five controllable voice attributes.

mod features;
mod wav;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use features::{extract_features, AnalysisConfig, FeatureVector, FEATURE_CSV_HEADER};
pub use wav::{decode_wav, encode_wav, quantize_sample, read_wav, write_wav};

pub const MIN_SAMPLE_RATE: u32 = 8000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DspError {
    #[error("malformed WAV header: {0}")]
    MalformedHeader(String),
    #[error("unsupported WAV format: {0}")]
    UnsupportedFormat(String),
    #[error("i/o failure: {0}")]
    IoFailure(String),
    #[error("waveform too short: {duration_s:.3} s < {min_s:.3} s")]
    TooShort { duration_s: f64, min_s: f64 },
    #[error("no voiced frames: {voiced} voiced frames found, {required} required")]
    NoVoicedFrames { voiced: usize, required: usize },
    #[error("invalid waveform: {0}")]
    InvalidWaveform(String),
}

impl DspError {
    pub fn name(&self) -> &'static str {
        match self {
            DspError::MalformedHeader(_) => "MalformedHeader",
            DspError::UnsupportedFormat(_) => "UnsupportedFormat",
            DspError::IoFailure(_) => "IoFailure",
            DspError::TooShort { .. } => "TooShort",
            DspError::NoVoicedFrames { .. } => "NoVoicedFrames",
            DspError::InvalidWaveform(_) => "InvalidWaveform",
        }
    }
}

/// Mono audio with samples in [-1, 1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Waveform {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self, DspError> {
        let wf = Waveform { samples, sample_rate };
        wf.validate()?;
        Ok(wf)
    }

    pub fn validate(&self) -> Result<(), DspError> {
        if self.sample_rate < MIN_SAMPLE_RATE {
            return Err(DspError::InvalidWaveform(format!(
                "sample rate {} below {MIN_SAMPLE_RATE}",
                self.sample_rate
            )));
        }
        if let Some(i) = self.samples.iter().position(|s| !s.is_finite() || s.abs() > 1.0) {
            return Err(DspError::InvalidWaveform(format!(
                "sample {i} = {} outside [-1, 1]",
                self.samples[i]
            )));
        }
        Ok(())
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn rms(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        (self.samples.iter().map(|s| s * s).sum::<f64>() / self.samples.len() as f64).sqrt()
    }
}
