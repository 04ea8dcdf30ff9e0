//! Browser bindings: synthesize and analyze a voice tone, render and parse captions, and run
//! the forward/reverse flow on a one-dimensional Gaussian.

use std::collections::BTreeMap;

use ndarray::{Array2, Axis};
use serde::Serialize;
use wasm_bindgen::prelude::*;

use captionvoice::captions::{generate_caption, parse_caption, AttributeSpec};
use captionvoice::dsp::{decode_wav, encode_wav, extract_features, AnalysisConfig, FeatureVector, Waveform};
use captionvoice::prior::{forward_marginal, reverse_ode_sample_batch, GaussianScore, SdeConfig};
use captionvoice::seed;
use captionvoice::synth::{synthesize, SynthParams};

pub const SAMPLE_RATE: u32 = 22050;

#[wasm_bindgen]
pub struct Tone {
    waveform: Waveform,
    features: FeatureVector,
}

#[wasm_bindgen]
impl Tone {
    pub fn samples(&self) -> Vec<f32> {
        self.waveform.samples.iter().map(|&s| s as f32).collect()
    }

    #[wasm_bindgen(getter)]
    pub fn sample_rate(&self) -> u32 {
        self.waveform.sample_rate
    }

    pub fn features_json(&self) -> String {
        serde_json::to_string(&self.features).expect("features serialize")
    }

    /// 16-bit PCM WAV file bytes.
    pub fn wav(&self) -> Vec<u8> {
        encode_wav(&self.waveform)
    }
}

pub fn tone(params: SynthParams, seed_value: u64) -> Result<Tone, String> {
    let waveform = synthesize(&params, &mut seed::rng(seed_value, &[]), SAMPLE_RATE).map_err(|e| e.to_string())?;
    let features = extract_features(&waveform, &AnalysisConfig::default()).map_err(|e| e.to_string())?;
    Ok(Tone { waveform, features })
}

#[wasm_bindgen]
pub fn synthesize_tone(
    f0: f64,
    f0_var: f64,
    level_db: f64,
    jitter_pct: f64,
    shimmer_pct: f64,
    duration_s: f64,
    seed_value: u64,
) -> Result<Tone, JsError> {
    let params = SynthParams { f0, f0_var, level_db, jitter_pct, shimmer_pct, duration_s };
    tone(params, seed_value).map_err(|e| JsError::new(&e))
}

pub fn analyze(bytes: &[u8]) -> Result<String, String> {
    let waveform = decode_wav(bytes).map_err(|e| e.to_string())?;
    let features = extract_features(&waveform, &AnalysisConfig::default()).map_err(|e| e.to_string())?;
    Ok(serde_json::to_string(&features).expect("features serialize"))
}

/// Features of an uploaded WAV file as JSON.
#[wasm_bindgen]
pub fn analyze_wav(bytes: &[u8]) -> Result<String, JsError> {
    analyze(bytes).map_err(|e| JsError::new(&e))
}

pub fn caption(spec_json: &str, seed_value: u64) -> Result<String, String> {
    let map: BTreeMap<String, String> = serde_json::from_str(spec_json).map_err(|e| e.to_string())?;
    let spec = AttributeSpec::from_string_map(&map).map_err(|e| e.to_string())?;
    generate_caption(&spec, &mut seed::rng(seed_value, &[])).map_err(|e| e.to_string())
}

/// Renders a caption from a JSON object such as `{"pitch_mean": "Top"}`.
#[wasm_bindgen]
pub fn caption_from_spec(spec_json: &str, seed_value: u64) -> Result<String, JsError> {
    caption(spec_json, seed_value).map_err(|e| JsError::new(&e))
}

pub fn parse(text: &str) -> Result<String, String> {
    let spec = parse_caption(text).map_err(|e| e.to_string())?;
    Ok(serde_json::to_string(&spec.to_string_map()).expect("map serializes"))
}

/// Parses caption text into a JSON attribute map.
#[wasm_bindgen]
pub fn spec_from_caption(text: &str) -> Result<String, JsError> {
    parse(text).map_err(|e| JsError::new(&e))
}

#[derive(Debug, Serialize)]
pub struct FlowDemo {
    /// (t, mean, variance) of the forward marginal started from the data mean.
    pub forward: Vec<(f64, f64, f64)>,
    pub samples: Vec<f64>,
    pub sample_mean: f64,
    pub sample_var: f64,
}

pub fn flow(data_mean: f64, data_var: f64, n: usize, steps: usize, seed_value: u64) -> Result<FlowDemo, String> {
    if data_var.is_nan() || data_var <= 0.0 || n == 0 {
        return Err("variance must be positive and n at least 1".into());
    }
    let sde = SdeConfig { n_steps: steps, ..SdeConfig::standard(1) };
    let forward = (0..=20)
        .map(|k| {
            let t = k as f64 / 20.0 * sde.t_max;
            let (m, v) = forward_marginal(&[data_mean], t, &sde).map_err(|e| e.to_string())?;
            let decay = (-sde.integrated_beta(t) / sde.lambda[0]).exp();
            Ok((t, m[0], v[0] + data_var * decay))
        })
        .collect::<Result<Vec<_>, String>>()?;
    let score = GaussianScore { sde: sde.clone(), mean: vec![data_mean], var: vec![data_var] };
    let z = Array2::zeros((n, 1));
    let x = reverse_ode_sample_batch(&score, z.view(), steps, &sde, &mut seed::rng(seed_value, &[]))
        .map_err(|e| e.to_string())?;
    let sample_mean = x.mean_axis(Axis(0)).map_or(f64::NAN, |m| m[0]);
    let sample_var = x.var_axis(Axis(0), 0.0)[0];
    Ok(FlowDemo { forward, samples: x.column(0).to_vec(), sample_mean, sample_var })
}

/// Forward marginal curve and reverse-flow samples for N(data_mean, data_var), as JSON.
#[wasm_bindgen]
pub fn gaussian_flow(data_mean: f64, data_var: f64, n: usize, steps: usize, seed_value: u64) -> Result<String, JsError> {
    let demo = flow(data_mean, data_var, n, steps, seed_value).map_err(|e| JsError::new(&e))?;
    Ok(serde_json::to_string(&demo).expect("demo serializes"))
}
