//! Contrastively aligned audio and text encoders sharing one embedding space, and the
//! linear emotion adaptor.
//!
//! The audio encoder emits its last layer directly (no projection head). The text side
//! encodes the parsed caption as a one-hot vector: three terciles for each of the eight
//! attributes plus five emotion slots.

use std::sync::atomic::{AtomicUsize, Ordering};

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::captions::{Attribute, AttributeSpec, CaptionError, Emotion};
use crate::corpus::NormStats;
use crate::dsp::FeatureVector;
use crate::nn::{check_dim, Activation, AdamConfig, AdamState, Mlp, NnError};
use crate::seed;
use crate::synth::shuffle;

pub const D_EMO: usize = 16;
pub const D_DEC: usize = 8;
pub const AUDIO_INPUT_DIM: usize = 8;
pub const TEXT_INPUT_DIM: usize = Attribute::ALL.len() * 3 + Emotion::ALL.len();
pub const TEMPERATURE_INIT: f64 = 0.07;
pub const TEMPERATURE_RANGE: (f64, f64) = (0.01, 1.0);
pub const MIN_ALIGNMENT_RECORDS: usize = 200;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AlignError {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Caption(#[from] CaptionError),
    #[error("embedding row {0} has zero norm")]
    ZeroNormEmbedding(usize),
    #[error("insufficient data: {got} records, need at least {need}")]
    InsufficientData { got: usize, need: usize },
    #[error("non-finite loss")]
    NonFiniteLoss,
}

impl AlignError {
    pub fn name(&self) -> &'static str {
        match self {
            AlignError::Nn(e) => e.name(),
            AlignError::Caption(e) => e.name(),
            AlignError::ZeroNormEmbedding(_) => "ZeroNormEmbedding",
            AlignError::InsufficientData { .. } => "InsufficientData",
            AlignError::NonFiniteLoss => "NonFiniteLoss",
        }
    }
}

/// Audio encoder input: five z-scored features followed by the three pseudo-A/V/D scores.
pub fn audio_input(features: &FeatureVector, avd: &[f64; 3], stats: &NormStats) -> [f64; AUDIO_INPUT_DIM] {
    let z = stats.z_scores(features);
    [z[0], z[1], z[2], z[3], z[4], avd[0], avd[1], avd[2]]
}

pub fn text_input(spec: &AttributeSpec) -> Result<[f64; TEXT_INPUT_DIM], CaptionError> {
    if spec.is_empty() {
        return Err(CaptionError::EmptySpec);
    }
    let mut one_hot = [0.0; TEXT_INPUT_DIM];
    for (&attribute, &tercile) in &spec.entries {
        one_hot[attribute.index() * 3 + tercile.index()] = 1.0;
    }
    if let Some(emotion) = spec.emotion {
        one_hot[Attribute::ALL.len() * 3 + emotion.index()] = 1.0;
    }
    Ok(one_hot)
}

#[derive(Debug, Serialize, Deserialize)]
pub struct AlignmentModel {
    pub audio_encoder: Mlp,
    pub text_encoder: Mlp,
    pub log_temperature: f64,
    #[serde(skip)]
    audio_calls: AtomicUsize,
}

impl Clone for AlignmentModel {
    fn clone(&self) -> Self {
        AlignmentModel {
            audio_encoder: self.audio_encoder.clone(),
            text_encoder: self.text_encoder.clone(),
            log_temperature: self.log_temperature,
            audio_calls: AtomicUsize::new(self.audio_calls()),
        }
    }
}

impl PartialEq for AlignmentModel {
    fn eq(&self, other: &Self) -> bool {
        self.audio_encoder == other.audio_encoder
            && self.text_encoder == other.text_encoder
            && self.log_temperature == other.log_temperature
    }
}

impl AlignmentModel {
    pub fn new<R: Rng + ?Sized>(hidden: usize, rng: &mut R) -> Result<Self, AlignError> {
        let audio_encoder = Mlp::new(
            &[AUDIO_INPUT_DIM, hidden, hidden, D_EMO],
            &[Activation::Tanh, Activation::Tanh, Activation::Identity],
            rng,
        )?;
        let text_encoder =
            Mlp::new(&[TEXT_INPUT_DIM, hidden, D_EMO], &[Activation::Tanh, Activation::Identity], rng)?;
        Ok(AlignmentModel {
            audio_encoder,
            text_encoder,
            log_temperature: TEMPERATURE_INIT.ln(),
            audio_calls: AtomicUsize::new(0),
        })
    }

    pub fn temperature(&self) -> f64 {
        self.log_temperature.exp()
    }

    /// Number of audio-encoder invocations since construction or the last reset.
    pub fn audio_calls(&self) -> usize {
        self.audio_calls.load(Ordering::SeqCst)
    }

    pub fn reset_audio_calls(&self) {
        self.audio_calls.store(0, Ordering::SeqCst);
    }

    pub fn encode_audio_batch(&self, inputs: ArrayView2<f64>) -> Result<Array2<f64>, AlignError> {
        self.audio_calls.fetch_add(1, Ordering::SeqCst);
        Ok(self.audio_encoder.predict(inputs)?)
    }

    pub fn encode_text_batch(&self, specs: &[AttributeSpec]) -> Result<Array2<f64>, AlignError> {
        let inputs = text_inputs(specs)?;
        Ok(self.text_encoder.predict(inputs.view())?)
    }
}

fn text_inputs(specs: &[AttributeSpec]) -> Result<Array2<f64>, CaptionError> {
    let mut inputs = Array2::zeros((specs.len(), TEXT_INPUT_DIM));
    for (mut row, spec) in inputs.rows_mut().into_iter().zip(specs) {
        row.assign(&Array1::from(text_input(spec)?.to_vec()));
    }
    Ok(inputs)
}

pub fn encode_audio(
    model: &AlignmentModel,
    features: &FeatureVector,
    avd: &[f64; 3],
    stats: &NormStats,
) -> Result<Vec<f64>, AlignError> {
    let input = audio_input(features, avd, stats);
    let view = ArrayView2::from_shape((1, AUDIO_INPUT_DIM), &input).expect("static shape");
    Ok(model.encode_audio_batch(view)?.row(0).to_vec())
}

pub fn encode_text(model: &AlignmentModel, spec: &AttributeSpec) -> Result<Vec<f64>, AlignError> {
    Ok(model.encode_text_batch(std::slice::from_ref(spec))?.row(0).to_vec())
}

fn normalize_rows(m: ArrayView2<f64>) -> Result<(Array2<f64>, Array1<f64>), AlignError> {
    let norms: Array1<f64> = m.rows().into_iter().map(|r| r.dot(&r).sqrt()).collect();
    if let Some(i) = norms.iter().position(|&n| n == 0.0 || !n.is_finite()) {
        return Err(AlignError::ZeroNormEmbedding(i));
    }
    let unit = &m / &norms.view().insert_axis(Axis(1));
    Ok((unit, norms))
}

fn log_softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        row.mapv_inplace(|v| v - lse);
    }
    out
}

/// Gradients of the symmetric InfoNCE loss.
#[derive(Debug, Clone)]
pub struct ContrastiveGrads {
    pub audio: Array2<f64>,
    pub text: Array2<f64>,
    pub temperature: f64,
}

/// Symmetric InfoNCE over cosine similarities divided by τ, averaged over both retrieval
/// directions. Returns the loss and its gradients.
pub fn contrastive_loss_and_grads(
    audio: ArrayView2<f64>,
    text: ArrayView2<f64>,
    temperature: f64,
) -> Result<(f64, ContrastiveGrads), AlignError> {
    check_dim(audio.nrows(), text.nrows())?;
    check_dim(audio.ncols(), text.ncols())?;
    let n = audio.nrows();
    if n == 0 {
        return Err(AlignError::InsufficientData { got: 0, need: 1 });
    }
    let (a_hat, a_norm) = normalize_rows(audio)?;
    let (b_hat, b_norm) = normalize_rows(text)?;
    let logits = a_hat.dot(&b_hat.t()) / temperature;
    let row_log = log_softmax_rows(&logits);
    let col_log = log_softmax_rows(&logits.t().to_owned());
    let nf = n as f64;
    let loss = -(0..n).map(|i| row_log[[i, i]] + col_log[[i, i]]).sum::<f64>() / (2.0 * nf);
    if !loss.is_finite() {
        return Err(AlignError::NonFiniteLoss);
    }

    // dL/dlogits = (P - I + Qᵀ - I) / 2N with P row softmax, Q softmax of the transpose.
    let mut g = row_log.mapv(f64::exp) + col_log.t().mapv(f64::exp);
    for i in 0..n {
        g[[i, i]] -= 2.0;
    }
    g /= 2.0 * nf;

    let d_temperature = -(&g * &logits).sum() / temperature;
    let d_a_hat = g.dot(&b_hat) / temperature;
    let d_b_hat = g.t().dot(&a_hat) / temperature;
    let through_norm = |unit: &Array2<f64>, d_unit: Array2<f64>, norms: &Array1<f64>| {
        let proj = (unit * &d_unit).sum_axis(Axis(1)).insert_axis(Axis(1));
        (d_unit - unit * &proj) / norms.view().insert_axis(Axis(1))
    };
    Ok((
        loss,
        ContrastiveGrads {
            audio: through_norm(&a_hat, d_a_hat, &a_norm),
            text: through_norm(&b_hat, d_b_hat, &b_norm),
            temperature: d_temperature,
        },
    ))
}

pub fn contrastive_loss(
    audio: ArrayView2<f64>,
    text: ArrayView2<f64>,
    temperature: f64,
) -> Result<f64, AlignError> {
    contrastive_loss_and_grads(audio, text, temperature).map(|(l, _)| l)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AlignTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub hidden: usize,
    pub holdout_fraction: f64,
    pub retrieval_pool: usize,
    pub seed: u64,
}

impl Default for AlignTrainConfig {
    fn default() -> Self {
        AlignTrainConfig {
            epochs: 400,
            batch_size: 64,
            lr: 1e-3,
            hidden: 64,
            holdout_fraction: 0.1,
            retrieval_pool: 200,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetrievalReport {
    pub pool_size: usize,
    pub top1: f64,
    pub top5: f64,
}

impl RetrievalReport {
    pub const CSV_HEADER: &'static str = "pool_size,top1,top5";

    pub fn csv_row(&self) -> String {
        format!("{},{},{}", self.pool_size, self.top1, self.top5)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignTrainReport {
    pub epoch_losses: Vec<f64>,
    pub initial_loss: f64,
    pub retrieval: RetrievalReport,
    pub final_temperature: f64,
}

/// One contrastive training example: audio encoder input and the full spec of the recording.
#[derive(Debug, Clone)]
pub struct AlignmentExample {
    pub audio_input: [f64; AUDIO_INPUT_DIM],
    pub spec: AttributeSpec,
}

fn rows(examples: &[&AlignmentExample]) -> Array2<f64> {
    Array2::from_shape_fn((examples.len(), AUDIO_INPUT_DIM), |(i, j)| examples[i].audio_input[j])
}

/// Loss and flattened gradients `[audio encoder | text encoder | log τ]` for one batch.
pub fn alignment_batch_grads(
    model: &AlignmentModel,
    audio_inputs: ArrayView2<f64>,
    captions: &[AttributeSpec],
) -> Result<(f64, Vec<f64>), AlignError> {
    let audio_cache = model.audio_encoder.forward_batch(audio_inputs)?;
    let text_cache = model.text_encoder.forward_batch(text_inputs(captions)?.view())?;
    let tau = model.temperature();
    let (loss, grads) =
        contrastive_loss_and_grads(audio_cache.output().view(), text_cache.output().view(), tau)?;
    let (audio_grads, _) = model.audio_encoder.backprop(&audio_cache, grads.audio.view())?;
    let (text_grads, _) = model.text_encoder.backprop(&text_cache, grads.text.view())?;
    let mut flat = audio_grads.flatten();
    flat.extend(text_grads.flatten());
    flat.push(grads.temperature * tau);
    Ok((loss, flat))
}

fn model_params(model: &AlignmentModel) -> Vec<f64> {
    let mut p = model.audio_encoder.params();
    p.extend(model.text_encoder.params());
    p.push(model.log_temperature);
    p
}

fn set_model_params(model: &mut AlignmentModel, params: &[f64]) -> Result<(), AlignError> {
    let a = model.audio_encoder.param_count();
    let t = model.text_encoder.param_count();
    check_dim(a + t + 1, params.len())?;
    model.audio_encoder.set_params(&params[..a])?;
    model.text_encoder.set_params(&params[a..a + t])?;
    model.log_temperature = params[a + t];
    Ok(())
}

pub fn alignment_params(model: &AlignmentModel) -> Vec<f64> {
    model_params(model)
}

pub fn set_alignment_params(model: &mut AlignmentModel, params: &[f64]) -> Result<(), AlignError> {
    set_model_params(model, params)
}

/// Text→audio retrieval over the pool. A hit is an audio item whose full spec equals the query.
pub fn retrieval(model: &AlignmentModel, pool: &[&AlignmentExample]) -> Result<RetrievalReport, AlignError> {
    if pool.is_empty() {
        return Ok(RetrievalReport { pool_size: 0, top1: f64::NAN, top5: f64::NAN });
    }
    let audio = model.encode_audio_batch(rows(pool).view())?;
    let specs: Vec<AttributeSpec> = pool.iter().map(|e| e.spec.clone()).collect();
    let text = model.encode_text_batch(&specs)?;
    let (a_hat, _) = normalize_rows(audio.view())?;
    let (t_hat, _) = normalize_rows(text.view())?;
    let sims = t_hat.dot(&a_hat.t());
    let (mut top1, mut top5) = (0usize, 0usize);
    for (q, row) in sims.rows().into_iter().enumerate() {
        let mut ranked: Vec<usize> = (0..pool.len()).collect();
        ranked.sort_by(|&a, &b| row[b].total_cmp(&row[a]).then(a.cmp(&b)));
        let hit = |i: &usize| pool[*i].spec == pool[q].spec;
        top1 += usize::from(hit(&ranked[0]));
        top5 += usize::from(ranked.iter().take(5).any(hit));
    }
    let n = pool.len() as f64;
    Ok(RetrievalReport { pool_size: pool.len(), top1: top1 as f64 / n, top5: top5 as f64 / n })
}

pub fn train_alignment(
    examples: &[AlignmentExample],
    config: &AlignTrainConfig,
) -> Result<(AlignmentModel, AlignTrainReport), AlignError> {
    if examples.len() < MIN_ALIGNMENT_RECORDS {
        return Err(AlignError::InsufficientData { got: examples.len(), need: MIN_ALIGNMENT_RECORDS });
    }
    let mut rng = seed::rng(config.seed, &[0xA11C]);
    let mut model = AlignmentModel::new(config.hidden, &mut rng)?;

    let mut order: Vec<usize> = (0..examples.len()).collect();
    shuffle(&mut order, &mut rng);
    let holdout = (examples.len() as f64 * config.holdout_fraction).round() as usize;
    let (test_idx, train_idx) = order.split_at(holdout);
    let mut train: Vec<&AlignmentExample> = train_idx.iter().map(|&i| &examples[i]).collect();
    let pool: Vec<&AlignmentExample> =
        test_idx.iter().take(config.retrieval_pool).map(|&i| &examples[i]).collect();

    let mut params = model_params(&model);
    let mut adam = AdamState::new(AdamConfig { lr: config.lr, ..AdamConfig::default() }, params.len());
    let (lo, hi) = (TEMPERATURE_RANGE.0.ln(), TEMPERATURE_RANGE.1.ln());

    let full_inputs = rows(&train);
    let full_specs: Vec<AttributeSpec> = train.iter().map(|e| e.spec.clone()).collect();
    let initial_loss = {
        let a = model.audio_encoder.predict(full_inputs.view())?;
        let t = model.encode_text_batch(&full_specs)?;
        contrastive_loss(a.view(), t.view(), model.temperature())?
    };

    let mut epoch_losses = Vec::with_capacity(config.epochs);
    for _ in 0..config.epochs {
        shuffle(&mut train, &mut rng);
        let mut total = 0.0;
        let mut batches = 0usize;
        for chunk in train.chunks(config.batch_size.max(1)) {
            let inputs = rows(chunk);
            let captions: Vec<AttributeSpec> = chunk.iter().map(|e| e.spec.random_subset(&mut rng)).collect();
            let (loss, grads) = alignment_batch_grads(&model, inputs.view(), &captions)?;
            adam.update(&mut params, &grads)?;
            let last = params.len() - 1;
            params[last] = params[last].clamp(lo, hi);
            set_model_params(&mut model, &params)?;
            total += loss;
            batches += 1;
        }
        epoch_losses.push(total / batches as f64);
    }

    let retrieval = retrieval(&model, &pool)?;
    model.reset_audio_calls();
    let final_temperature = model.temperature();
    Ok((model, AlignTrainReport { epoch_losses, initial_loss, retrieval, final_temperature }))
}

/// Linear map from the shared embedding width down to the decoder's conditioning width.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmoAdaptor {
    pub network: Mlp,
}

impl EmoAdaptor {
    pub fn new<R: Rng + ?Sized>(input_dim: usize, output_dim: usize, rng: &mut R) -> Result<Self, NnError> {
        Ok(EmoAdaptor { network: Mlp::new(&[input_dim, output_dim], &[Activation::Identity], rng)? })
    }

    pub fn input_dim(&self) -> usize {
        self.network.input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.network.output_dim()
    }
}

pub fn adapt(adaptor: &EmoAdaptor, y: &[f64]) -> Result<Vec<f64>, NnError> {
    Ok(adaptor.network.forward(y)?.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Tercile;
    use crate::nn::{grad_check, Layer};
    use ndarray::array;

    #[test]
    fn single_pair_loss_is_zero() {
        let a = array![[0.3, -1.2, 2.0]];
        let b = array![[5.0, 1.0, -0.1]];
        assert_eq!(contrastive_loss(a.view(), b.view(), 0.07).unwrap(), 0.0);
    }

    #[test]
    fn two_by_two_identity_similarities() {
        // Hand-computed: every softmax term is e/(e+1), so loss = ln(1 + e^-1).
        let a = array![[1.0, 0.0], [0.0, 1.0]];
        let loss = contrastive_loss(a.view(), a.view(), 1.0).unwrap();
        let expected = (1.0 + (-1.0f64).exp()).ln();
        assert!((loss - expected).abs() < 1e-12);
        assert!((expected - 0.3133).abs() < 1e-4);
    }

    #[test]
    fn zero_norm_rejected() {
        let a = array![[1.0, 0.0], [0.0, 0.0]];
        let b = array![[1.0, 0.0], [0.0, 1.0]];
        assert_eq!(contrastive_loss(a.view(), b.view(), 1.0), Err(AlignError::ZeroNormEmbedding(1)));
    }

    fn random_batch(seed_value: u64, n: usize, d: usize) -> Array2<f64> {
        let mut rng = seed::rng(seed_value, &[]);
        Array2::from_shape_simple_fn((n, d), || rng.random_range(-1.0..1.0))
    }

    #[test]
    fn scale_and_permutation_invariance() {
        let a = random_batch(1, 6, 4);
        let b = random_batch(2, 6, 4);
        let base = contrastive_loss(a.view(), b.view(), 0.3).unwrap();
        for c in [0.01, 3.0, 1e4] {
            let l = contrastive_loss((&a * c).view(), (&b * c).view(), 0.3).unwrap();
            assert!((l - base).abs() < 1e-12, "{c}");
        }
        let perm = [3usize, 0, 5, 1, 4, 2];
        let pa = a.select(Axis(0), &perm);
        let pb = b.select(Axis(0), &perm);
        let l = contrastive_loss(pa.view(), pb.view(), 0.3).unwrap();
        assert!((l - base).abs() < 1e-12);
    }

    #[test]
    fn contrastive_gradients_match_finite_differences() {
        let a = random_batch(3, 5, 4);
        let b = random_batch(4, 5, 4);
        let n = a.len();
        let mut params: Vec<f64> = a.iter().chain(b.iter()).copied().collect();
        params.push(0.4);
        let report = grad_check(&params, 1e-5, |p| {
            let a = Array2::from_shape_vec((5, 4), p[..n].to_vec()).unwrap();
            let b = Array2::from_shape_vec((5, 4), p[n..2 * n].to_vec()).unwrap();
            let (loss, g) = contrastive_loss_and_grads(a.view(), b.view(), p[2 * n]).unwrap();
            let mut flat: Vec<f64> = g.audio.iter().chain(g.text.iter()).copied().collect();
            flat.push(g.temperature);
            (loss, flat)
        });
        assert!(report.max_relative_error <= 1e-4, "{report:?}");
    }

    #[test]
    fn encoder_gradients_match_finite_differences() {
        let mut rng = seed::rng(10, &[]);
        let model = AlignmentModel::new(12, &mut rng).unwrap();
        let inputs = random_batch(11, 6, AUDIO_INPUT_DIM);
        let specs: Vec<AttributeSpec> = (0..6)
            .map(|i| {
                AttributeSpec::new()
                    .with(Attribute::ALL[i % 8], Tercile::ALL[i % 3])
                    .with(Attribute::ALL[(i + 3) % 8], Tercile::ALL[(i + 1) % 3])
            })
            .collect();
        let mut probe = model.clone();
        let report = grad_check(&alignment_params(&model), 1e-5, |p| {
            set_alignment_params(&mut probe, p).unwrap();
            alignment_batch_grads(&probe, inputs.view(), &specs).unwrap()
        });
        assert!(report.max_relative_error <= 1e-4, "{report:?}");
    }

    #[test]
    fn text_one_hot_layout() {
        let spec = AttributeSpec::new()
            .with(Attribute::PitchMean, Tercile::Low)
            .with(Attribute::Dominance, Tercile::Top)
            .with_emotion(Emotion::Surprise);
        let v = text_input(&spec).unwrap();
        assert_eq!(v.iter().sum::<f64>(), 3.0);
        assert_eq!(v[0], 1.0);
        assert_eq!(v[7 * 3 + 2], 1.0);
        assert_eq!(v[TEXT_INPUT_DIM - 1], 1.0);
        assert_eq!(text_input(&AttributeSpec::new()), Err(CaptionError::EmptySpec));
    }

    #[test]
    fn text_encoder_separates_terciles() {
        let model = AlignmentModel::new(16, &mut seed::rng(12, &[])).unwrap();
        let low = encode_text(&model, &AttributeSpec::new().with(Attribute::PitchMean, Tercile::Low)).unwrap();
        let top = encode_text(&model, &AttributeSpec::new().with(Attribute::PitchMean, Tercile::Top)).unwrap();
        assert_ne!(low, top);
        assert_eq!(low, encode_text(&model, &AttributeSpec::new().with(Attribute::PitchMean, Tercile::Low)).unwrap());
        assert!(matches!(
            encode_text(&model, &AttributeSpec::new()),
            Err(AlignError::Caption(CaptionError::EmptySpec))
        ));
    }

    #[test]
    fn audio_encoder_counts_calls() {
        let model = AlignmentModel::new(8, &mut seed::rng(13, &[])).unwrap();
        let stats = NormStats { mean: [200.0, 10.0, -18.0, 0.02, 0.04], std: [50.0, 5.0, 7.0, 0.01, 0.02] };
        let f = FeatureVector { pitch_mean: 210.0, pitch_std: 8.0, level_db: -20.0, jitter_ratio: 0.01, shimmer_ratio: 0.05 };
        let a = encode_audio(&model, &f, &[0.1, 0.2, 0.3], &stats).unwrap();
        let b = encode_audio(&model, &f, &[0.1, 0.2, 0.3], &stats).unwrap();
        assert_eq!(a, b);
        assert_eq!(model.audio_calls(), 2);
    }

    #[test]
    fn zero_final_layer_gives_zero_embedding() {
        let mut model = AlignmentModel::new(8, &mut seed::rng(14, &[])).unwrap();
        let last = model.audio_encoder.layers_mut().last_mut().unwrap();
        last.weight.fill(0.0);
        last.bias.fill(0.0);
        let stats = NormStats { mean: [0.0; 5], std: [1.0; 5] };
        let f = FeatureVector { pitch_mean: 1.0, pitch_std: 2.0, level_db: -3.0, jitter_ratio: 0.1, shimmer_ratio: 0.2 };
        assert_eq!(encode_audio(&model, &f, &[1.0, 1.0, 1.0], &stats).unwrap(), vec![0.0; D_EMO]);
    }

    #[test]
    fn adaptor_examples() {
        let zero = EmoAdaptor {
            network: Mlp::from_layers(vec![Layer {
                weight: Array2::zeros((D_DEC, D_EMO)),
                bias: Array1::from_iter((0..D_DEC).map(|i| i as f64 - 2.0)),
                activation: Activation::Identity,
            }])
            .unwrap(),
        };
        let y: Vec<f64> = (0..D_EMO).map(|i| (i as f64 * 0.7).sin()).collect();
        assert_eq!(adapt(&zero, &y).unwrap(), (0..D_DEC).map(|i| i as f64 - 2.0).collect::<Vec<_>>());

        let truncated = EmoAdaptor {
            network: Mlp::from_layers(vec![Layer {
                weight: Array2::from_shape_fn((D_DEC, D_EMO), |(i, j)| if i == j { 1.0 } else { 0.0 }),
                bias: Array1::zeros(D_DEC),
                activation: Activation::Identity,
            }])
            .unwrap(),
        };
        assert_eq!(adapt(&truncated, &y).unwrap(), y[..D_DEC].to_vec());
        assert!(matches!(adapt(&truncated, &y[..3]), Err(NnError::DimensionMismatch { .. })));
    }

    #[test]
    fn adaptor_gradient_matches_finite_differences() {
        let adaptor = EmoAdaptor::new(D_EMO, D_DEC, &mut seed::rng(15, &[])).unwrap();
        let y: Vec<f64> = (0..D_EMO).map(|i| (i as f64 * 0.3).cos()).collect();
        let mut probe = adaptor.clone();
        let report = grad_check(&adaptor.network.params(), 1e-5, |p| {
            probe.network.set_params(p).unwrap();
            let (out, cache) = probe.network.forward(&y).unwrap();
            // scalar loss Σ sin(out_k)
            let loss = out.iter().map(|v| v.sin()).sum();
            let grad = Array2::from_shape_fn((1, D_DEC), |(_, k)| out[k].cos());
            let (g, _) = probe.network.backprop(&cache, grad.view()).unwrap();
            (loss, g.flatten())
        });
        assert!(report.max_relative_error <= 1e-4, "{report:?}");
    }
}
