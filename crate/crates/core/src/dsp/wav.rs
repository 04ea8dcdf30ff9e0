//! Minimal RIFF/WAVE reader and writer for 16-bit PCM mono audio.

use std::fs;
use std::path::Path;

use super::{DspError, Waveform};

const PCM_FORMAT: u16 = 1;

/// Reads a 16-bit PCM mono WAV file. Samples are scaled by 1/32768.
pub fn read_wav(path: impl AsRef<Path>) -> Result<Waveform, DspError> {
    let bytes = fs::read(path.as_ref()).map_err(|e| DspError::IoFailure(e.to_string()))?;
    decode_wav(&bytes)
}

/// Writes a waveform as 16-bit PCM mono. Values are clamped to [-1, 1], scaled by 32768,
/// rounded half away from zero and saturated to the i16 range.
pub fn write_wav(waveform: &Waveform, path: impl AsRef<Path>) -> Result<(), DspError> {
    fs::write(path.as_ref(), encode_wav(waveform)).map_err(|e| DspError::IoFailure(e.to_string()))
}

pub fn quantize_sample(sample: f64) -> i16 {
    let scaled = (sample.clamp(-1.0, 1.0) * 32768.0).round();
    scaled.clamp(i16::MIN as f64, i16::MAX as f64) as i16
}

pub fn encode_wav(waveform: &Waveform) -> Vec<u8> {
    let data_len = (waveform.samples.len() * 2) as u32;
    let sample_rate = waveform.sample_rate;
    let mut out = Vec::with_capacity(44 + data_len as usize);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_len).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&PCM_FORMAT.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&sample_rate.to_le_bytes());
    out.extend_from_slice(&(sample_rate * 2).to_le_bytes());
    out.extend_from_slice(&2u16.to_le_bytes());
    out.extend_from_slice(&16u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&data_len.to_le_bytes());
    for &s in &waveform.samples {
        out.extend_from_slice(&quantize_sample(s).to_le_bytes());
    }
    out
}

fn u16_at(bytes: &[u8], at: usize) -> Result<u16, DspError> {
    bytes
        .get(at..at + 2)
        .map(|b| u16::from_le_bytes([b[0], b[1]]))
        .ok_or_else(|| DspError::MalformedHeader("unexpected end of header".into()))
}

fn u32_at(bytes: &[u8], at: usize) -> Result<u32, DspError> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| DspError::MalformedHeader("unexpected end of header".into()))
}

pub fn decode_wav(bytes: &[u8]) -> Result<Waveform, DspError> {
    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(DspError::MalformedHeader("missing RIFF/WAVE signature".into()));
    }

    let mut format: Option<(u16, u16, u32, u16)> = None;
    let mut pos = 12;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = u32_at(bytes, pos + 4)? as usize;
        let body = pos + 8;
        match id {
            b"fmt " => {
                if size < 16 || body + 16 > bytes.len() {
                    return Err(DspError::MalformedHeader("short fmt chunk".into()));
                }
                let tag = u16_at(bytes, body)?;
                let channels = u16_at(bytes, body + 2)?;
                let rate = u32_at(bytes, body + 4)?;
                let bits = u16_at(bytes, body + 14)?;
                format = Some((tag, channels, rate, bits));
            }
            b"data" => {
                let (tag, channels, rate, bits) = format
                    .ok_or_else(|| DspError::MalformedHeader("data chunk before fmt chunk".into()))?;
                if tag != PCM_FORMAT {
                    return Err(DspError::UnsupportedFormat(format!("format tag {tag} is not PCM")));
                }
                if channels != 1 {
                    return Err(DspError::UnsupportedFormat(format!("{channels} channels")));
                }
                if bits != 16 {
                    return Err(DspError::UnsupportedFormat(format!("{bits} bits per sample")));
                }
                if body + size > bytes.len() {
                    return Err(DspError::MalformedHeader(format!(
                        "data chunk declares {size} bytes but only {} remain",
                        bytes.len() - body
                    )));
                }
                if !size.is_multiple_of(2) {
                    return Err(DspError::MalformedHeader("odd data chunk length".into()));
                }
                let samples = bytes[body..body + size]
                    .chunks_exact(2)
                    .map(|c| i16::from_le_bytes([c[0], c[1]]) as f64 / 32768.0)
                    .collect();
                return Ok(Waveform { samples, sample_rate: rate });
            }
            _ => {}
        }
        // Chunks are word aligned.
        pos = body + size + (size & 1);
    }
    Err(DspError::MalformedHeader("no data chunk".into()))
}
