//! Pitch, level, jitter and shimmer extraction.
//!
//! Pitch comes from a frame-wise normalized autocorrelation
//!
//! ```text
//! r(τ) = Σ x[i]·x[i+τ] / sqrt(Σ x[i]² · Σ x[i+τ]²)
//! ```
//!
//! evaluated over the lag band of the configured F0 search range. The numerator is computed
//! through an FFT; the two energy terms come from prefix sums. A frame is voiced when the
//! band maximum of `r` reaches the voicing threshold, and its period is the smallest-lag local
//! maximum within `octave_tolerance` of that band maximum (guards against sub-octave picks),
//! refined by parabolic interpolation.
//!
//! Jitter and shimmer use glottal period marks: positive waveform peaks inside voiced regions
//! that reach `peak_threshold` of the running maximum around them. Consecutive marks define
//! periods; consecutive periods (and peak amplitudes) give the local jitter and shimmer ratios.

use std::collections::VecDeque;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use super::{DspError, Waveform};

pub const FEATURE_CSV_HEADER: &str =
    "path,pitch_mean_hz,pitch_std_hz,level_db,jitter_ratio,shimmer_ratio";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnalysisConfig {
    pub frame_s: f64,
    pub hop_s: f64,
    pub f0_min_hz: f64,
    pub f0_max_hz: f64,
    pub voicing_threshold: f64,
    /// A lag is accepted as the period when its correlation is at least this fraction of the
    /// band maximum.
    pub octave_tolerance: f64,
    /// Period-mark peaks must reach this fraction of the maximum within half a frame.
    pub peak_threshold: f64,
    /// Period marks closer than this to either end of the signal are ignored (onset/offset ramps).
    pub edge_guard_s: f64,
    pub min_duration_s: f64,
    pub min_voiced_frames: usize,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        AnalysisConfig {
            frame_s: 0.040,
            hop_s: 0.010,
            f0_min_hz: 60.0,
            f0_max_hz: 600.0,
            voicing_threshold: 0.5,
            octave_tolerance: 0.9,
            peak_threshold: 0.7,
            edge_guard_s: 0.020,
            min_duration_s: 0.200,
            min_voiced_frames: 5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub pitch_mean: f64,
    pub pitch_std: f64,
    pub level_db: f64,
    pub jitter_ratio: f64,
    pub shimmer_ratio: f64,
}

impl FeatureVector {
    pub fn to_array(&self) -> [f64; 5] {
        [self.pitch_mean, self.pitch_std, self.level_db, self.jitter_ratio, self.shimmer_ratio]
    }

    pub fn csv_row(&self, path: &str) -> String {
        format!(
            "{path},{},{},{},{},{}",
            self.pitch_mean, self.pitch_std, self.level_db, self.jitter_ratio, self.shimmer_ratio
        )
    }
}

struct FrameAnalyzer {
    frame_len: usize,
    fft_len: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    buffer: Vec<Complex<f64>>,
    scratch: Vec<Complex<f64>>,
    prefix: Vec<f64>,
    corr: Vec<f64>,
    lag_min: usize,
    lag_max: usize,
}

impl FrameAnalyzer {
    fn new(frame_len: usize, lag_min: usize, lag_max: usize) -> Self {
        let fft_len = (2 * frame_len).next_power_of_two();
        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(fft_len);
        let inverse = planner.plan_fft_inverse(fft_len);
        let scratch_len = forward
            .get_inplace_scratch_len()
            .max(inverse.get_inplace_scratch_len());
        FrameAnalyzer {
            frame_len,
            fft_len,
            forward,
            inverse,
            buffer: vec![Complex::default(); fft_len],
            scratch: vec![Complex::default(); scratch_len],
            prefix: vec![0.0; frame_len + 1],
            corr: vec![0.0; lag_max + 2],
            lag_min,
            lag_max,
        }
    }

    /// Returns the fractional period in samples, or `None` for an unvoiced frame.
    fn period(&mut self, frame: &[f64], voicing: f64, tolerance: f64) -> Option<f64> {
        debug_assert_eq!(frame.len(), self.frame_len);
        for (slot, &x) in self.buffer.iter_mut().zip(frame) {
            *slot = Complex::new(x, 0.0);
        }
        for slot in &mut self.buffer[self.frame_len..] {
            *slot = Complex::default();
        }
        self.forward.process_with_scratch(&mut self.buffer, &mut self.scratch);
        for c in &mut self.buffer {
            *c = Complex::new(c.norm_sqr(), 0.0);
        }
        self.inverse.process_with_scratch(&mut self.buffer, &mut self.scratch);

        self.prefix[0] = 0.0;
        for (i, &x) in frame.iter().enumerate() {
            self.prefix[i + 1] = self.prefix[i] + x * x;
        }
        let total = self.prefix[self.frame_len];
        if total <= 0.0 {
            return None;
        }

        let scale = 1.0 / self.fft_len as f64;
        let lo = self.lag_min.saturating_sub(1).max(1);
        let hi = self.lag_max + 1;
        let mut best = f64::NEG_INFINITY;
        for lag in lo..=hi {
            let head = self.prefix[self.frame_len - lag];
            let tail = total - self.prefix[lag];
            let denom = (head * tail).sqrt();
            let r = if denom > 0.0 { self.buffer[lag].re * scale / denom } else { 0.0 };
            self.corr[lag] = r;
            if (self.lag_min..=self.lag_max).contains(&lag) && r > best {
                best = r;
            }
        }
        if best < voicing {
            return None;
        }

        let floor = tolerance * best;
        let corr = &self.corr;
        let lag = (self.lag_min..=self.lag_max)
            .find(|&l| corr[l] >= floor && corr[l] >= corr[l - 1] && corr[l] >= corr[l + 1])?;
        let (a, b, c) = (corr[lag - 1], corr[lag], corr[lag + 1]);
        let curvature = a - 2.0 * b + c;
        let offset = if curvature < 0.0 { 0.5 * (a - c) / curvature } else { 0.0 };
        Some(lag as f64 + offset.clamp(-0.5, 0.5))
    }
}

/// Sliding-window maximum over `[i - half, i + half]` for every index.
fn running_max(samples: &[f64], half: usize) -> Vec<f64> {
    let n = samples.len();
    let mut out = vec![0.0; n];
    let mut window: VecDeque<usize> = VecDeque::new();
    let mut next = 0;
    for (i, slot) in out.iter_mut().enumerate() {
        let right = (i + half).min(n.saturating_sub(1));
        while next <= right {
            while window.back().is_some_and(|&j| samples[j] <= samples[next]) {
                window.pop_back();
            }
            window.push_back(next);
            next += 1;
        }
        while window.front().is_some_and(|&j| j + half < i) {
            window.pop_front();
        }
        *slot = samples[*window.front().expect("window non-empty")];
    }
    out
}

struct PeriodMark {
    position: f64,
    amplitude: f64,
    run: usize,
}

fn parabolic_peak(samples: &[f64], i: usize) -> (f64, f64) {
    let (a, b, c) = (samples[i - 1], samples[i], samples[i + 1]);
    let curvature = a - 2.0 * b + c;
    if curvature >= 0.0 {
        return (i as f64, b);
    }
    let offset = (0.5 * (a - c) / curvature).clamp(-0.5, 0.5);
    (i as f64 + offset, b - 0.25 * (a - c) * offset)
}

fn period_marks(
    samples: &[f64],
    voiced: &[bool],
    sample_rate: f64,
    config: &AnalysisConfig,
) -> Vec<PeriodMark> {
    let n = samples.len();
    let half = ((config.frame_s * sample_rate) / 2.0).round() as usize;
    let local_max = running_max(samples, half);
    let guard = (config.edge_guard_s * sample_rate).round() as usize;
    let min_gap = sample_rate / config.f0_max_hz;
    let max_gap = sample_rate / config.f0_min_hz;

    let mut marks: Vec<PeriodMark> = Vec::new();
    let mut run = 0;
    let mut prev_voiced = false;
    let start = guard.max(1);
    let end = n.saturating_sub(guard.max(1));
    for i in start..end {
        if !voiced[i] {
            if prev_voiced {
                run += 1;
            }
            prev_voiced = false;
            continue;
        }
        prev_voiced = true;
        let x = samples[i];
        if x <= 0.0 || x <= samples[i - 1] || x < samples[i + 1] {
            continue;
        }
        if x < config.peak_threshold * local_max[i] {
            continue;
        }
        let (position, amplitude) = parabolic_peak(samples, i);
        if let Some(last) = marks.last_mut() {
            if last.run == run && position - last.position < min_gap {
                if amplitude > last.amplitude {
                    *last = PeriodMark { position, amplitude, run };
                }
                continue;
            }
            if last.run == run && position - last.position > max_gap {
                run += 1;
            }
        }
        marks.push(PeriodMark { position, amplitude, run });
    }
    marks
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Extracts pitch mean/std (Hz over voiced frames), RMS level (dBFS) and local jitter/shimmer.
pub fn extract_features(
    waveform: &Waveform,
    config: &AnalysisConfig,
) -> Result<FeatureVector, DspError> {
    let sr = waveform.sample_rate as f64;
    let samples = &waveform.samples;
    if waveform.duration_s() < config.min_duration_s {
        return Err(DspError::TooShort {
            duration_s: waveform.duration_s(),
            min_s: config.min_duration_s,
        });
    }

    let frame_len = (config.frame_s * sr).round() as usize;
    let hop = ((config.hop_s * sr).round() as usize).max(1);
    let lag_min = ((sr / config.f0_max_hz).ceil() as usize).max(2);
    let lag_max = ((sr / config.f0_min_hz).floor() as usize).min(frame_len.saturating_sub(3));
    if frame_len > samples.len() || lag_max <= lag_min {
        return Err(DspError::TooShort { duration_s: waveform.duration_s(), min_s: config.frame_s });
    }

    let mut analyzer = FrameAnalyzer::new(frame_len, lag_min, lag_max);
    let mut f0s = Vec::new();
    let mut voiced = vec![false; samples.len()];
    let mut start = 0;
    while start + frame_len <= samples.len() {
        let frame = &samples[start..start + frame_len];
        if let Some(period) = analyzer.period(frame, config.voicing_threshold, config.octave_tolerance) {
            f0s.push(sr / period);
            voiced[start..start + frame_len].iter_mut().for_each(|v| *v = true);
        }
        start += hop;
    }
    if f0s.len() < config.min_voiced_frames {
        return Err(DspError::NoVoicedFrames { voiced: f0s.len(), required: config.min_voiced_frames });
    }

    let pitch_mean = mean(&f0s);
    let pitch_std = (f0s.iter().map(|f| (f - pitch_mean).powi(2)).sum::<f64>() / f0s.len() as f64).sqrt();
    let level_db = 20.0 * waveform.rms().log10();

    let marks = period_marks(samples, &voiced, sr, config);
    let mut periods = Vec::new();
    let mut period_diffs = Vec::new();
    let mut amplitudes = Vec::new();
    let mut amplitude_diffs = Vec::new();
    let mut last_period: Option<(usize, f64)> = None;
    for (k, pair) in marks.windows(2).enumerate() {
        if pair[0].run != pair[1].run {
            last_period = None;
            continue;
        }
        let period = pair[1].position - pair[0].position;
        periods.push(period);
        amplitude_diffs.push((pair[1].amplitude - pair[0].amplitude).abs());
        if let Some((prev_k, prev)) = last_period {
            if prev_k + 1 == k {
                period_diffs.push((period - prev).abs());
            }
        }
        last_period = Some((k, period));
    }
    for mark in &marks {
        amplitudes.push(mark.amplitude);
    }

    let jitter_ratio = if period_diffs.is_empty() { 0.0 } else { mean(&period_diffs) / mean(&periods) };
    let shimmer_ratio =
        if amplitude_diffs.is_empty() { 0.0 } else { mean(&amplitude_diffs) / mean(&amplitudes) };

    Ok(FeatureVector { pitch_mean, pitch_std, level_db, jitter_ratio, shimmer_ratio })
}
