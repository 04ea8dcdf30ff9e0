//! Conditional score-based prior over emotion embeddings.
//!
//! Forward process, per dimension i:
//! dX = ½ Λᵢ⁻¹ (μᵢ − X) βₜ dt + √βₜ dW, with a linear β schedule on [0, T].
//! The score network predicts the standardized noise and the score is read off as
//! s = −net / σ(t), where σ(t)² is the forward marginal variance. Sampling integrates the
//! probability-flow ODE dX = ½ (Λ⁻¹(μ − X) − s) βₜ dt backwards from T with Euler steps.

use std::io::Write;

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nn::{check_dim, Activation, AdamConfig, AdamState, Mlp, NnError};
use crate::seed;
use crate::synth::shuffle;

pub const TIME_EMBED_DIM: usize = 8;
pub const DIVERGENCE_LIMIT: f64 = 1e6;
pub const MIN_PRIOR_PAIRS: usize = 200;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PriorError {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("time {0} outside [0, T]")]
    TimeOutOfRange(f64),
    #[error("invalid sde config: {0}")]
    InvalidConfig(String),
    #[error("n_steps must be at least 1")]
    InvalidSteps,
    #[error("non-finite loss")]
    NonFiniteLoss,
    #[error("sampler state diverged at step {0}")]
    NonFiniteState(usize),
    #[error("insufficient data: {got} pairs, need at least {need}")]
    InsufficientData { got: usize, need: usize },
}

impl PriorError {
    pub fn name(&self) -> &'static str {
        match self {
            PriorError::Nn(e) => e.name(),
            PriorError::TimeOutOfRange(_) => "TimeOutOfRange",
            PriorError::InvalidConfig(_) => "InvalidConfig",
            PriorError::InvalidSteps => "InvalidSteps",
            PriorError::NonFiniteLoss => "NonFiniteLoss",
            PriorError::NonFiniteState(_) => "NonFiniteState",
            PriorError::InsufficientData { .. } => "InsufficientData",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SdeConfig {
    pub mu: Vec<f64>,
    pub lambda: Vec<f64>,
    pub beta_0: f64,
    pub beta_1: f64,
    pub t_max: f64,
    pub t_min: f64,
    pub n_steps: usize,
}

impl Default for SdeConfig {
    fn default() -> Self {
        SdeConfig::standard(crate::align::D_EMO)
    }
}

impl SdeConfig {
    /// μ = 0, Λ = I with the default schedule.
    pub fn standard(dim: usize) -> Self {
        SdeConfig {
            mu: vec![0.0; dim],
            lambda: vec![1.0; dim],
            beta_0: 0.05,
            beta_1: 20.0,
            t_max: 1.0,
            t_min: 1e-4,
            n_steps: 100,
        }
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    pub fn validate(&self) -> Result<(), PriorError> {
        let bad = |m: &str| Err(PriorError::InvalidConfig(m.to_string()));
        if self.mu.len() != self.lambda.len() || self.mu.is_empty() {
            return bad("mu and lambda must have the same non-zero length");
        }
        if self.lambda.iter().any(|&l| !(l > 0.0 && l.is_finite())) || self.mu.iter().any(|m| !m.is_finite()) {
            return bad("lambda must be positive and mu finite");
        }
        if !(self.t_max > 0.0 && self.t_max.is_finite()) || !(self.t_min > 0.0 && self.t_min < self.t_max) {
            return bad("need 0 < t_min < t_max");
        }
        if !(self.beta_0 > 0.0 && self.beta_1 > 0.0 && self.beta_0.is_finite() && self.beta_1.is_finite()) {
            return bad("beta schedule must be positive");
        }
        Ok(())
    }

    pub fn beta(&self, t: f64) -> f64 {
        self.beta_0 + (t / self.t_max) * (self.beta_1 - self.beta_0)
    }

    /// ∫₀ᵗ βₛ ds.
    pub fn integrated_beta(&self, t: f64) -> f64 {
        self.beta_0 * t + (self.beta_1 - self.beta_0) * t * t / (2.0 * self.t_max)
    }

    fn check_time(&self, t: f64) -> Result<(), PriorError> {
        if (0.0..=self.t_max).contains(&t) {
            Ok(())
        } else {
            Err(PriorError::TimeOutOfRange(t))
        }
    }

    /// Per-dimension forward marginal variance at time t.
    pub fn marginal_variance(&self, t: f64) -> Vec<f64> {
        let b = self.integrated_beta(t);
        self.lambda.iter().map(|&l| l * -(-b / l).exp_m1()).collect()
    }
}

/// Closed-form mean and variance of X_t given X_0 = x0.
pub fn forward_marginal(x0: &[f64], t: f64, cfg: &SdeConfig) -> Result<(Vec<f64>, Vec<f64>), PriorError> {
    cfg.check_time(t)?;
    check_dim(cfg.dim(), x0.len())?;
    let b = cfg.integrated_beta(t);
    let mean = x0
        .iter()
        .zip(cfg.mu.iter().zip(&cfg.lambda))
        .map(|(&x, (&m, &l))| m + (x - m) * (-b / (2.0 * l)).exp())
        .collect();
    Ok((mean, cfg.marginal_variance(t)))
}

/// Exact draw from the forward transition; also returns the standard normal used.
pub fn sample_forward_with_noise<R: Rng + ?Sized>(
    x0: &[f64],
    t: f64,
    cfg: &SdeConfig,
    rng: &mut R,
) -> Result<(Vec<f64>, Vec<f64>), PriorError> {
    let (mean, var) = forward_marginal(x0, t, cfg)?;
    let noise: Vec<f64> = (0..mean.len()).map(|_| StandardNormal.sample(rng)).collect();
    let x = mean.iter().zip(&var).zip(&noise).map(|((m, v), n)| m + v.sqrt() * n).collect();
    Ok((x, noise))
}

pub fn sample_forward<R: Rng + ?Sized>(x0: &[f64], t: f64, cfg: &SdeConfig, rng: &mut R) -> Result<Vec<f64>, PriorError> {
    sample_forward_with_noise(x0, t, cfg, rng).map(|(x, _)| x)
}

/// sin/cos of t at four log-spaced frequencies from 1 to 100.
pub fn time_embedding(t: f64) -> [f64; TIME_EMBED_DIM] {
    let mut out = [0.0; TIME_EMBED_DIM];
    for k in 0..TIME_EMBED_DIM / 2 {
        let w = 100f64.powf(k as f64 / 3.0);
        out[2 * k] = (w * t).sin();
        out[2 * k + 1] = (w * t).cos();
    }
    out
}

/// Anything that can evaluate a batch of scores ∇ log pₜ(x | z).
pub trait ScoreFn {
    fn score(&self, x: ArrayView2<f64>, t: f64, z: ArrayView2<f64>) -> Result<Array2<f64>, PriorError>;
}

/// Exact score when the data distribution is N(mean, diag(var)) and the conditioning is ignored.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianScore {
    pub sde: SdeConfig,
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl ScoreFn for GaussianScore {
    fn score(&self, x: ArrayView2<f64>, t: f64, _z: ArrayView2<f64>) -> Result<Array2<f64>, PriorError> {
        check_dim(self.sde.dim(), x.ncols())?;
        let (mean, noise_var) = forward_marginal(&self.mean, t, &self.sde)?;
        let b = self.sde.integrated_beta(t);
        Ok(Array2::from_shape_fn(x.raw_dim(), |(i, j)| {
            let var = self.var[j] * (-b / self.sde.lambda[j]).exp() + noise_var[j];
            -(x[[i, j]] - mean[j]) / var
        }))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreModel {
    pub network: Mlp,
    pub sde: SdeConfig,
    pub cond_dim: usize,
}

impl ScoreModel {
    pub fn new<R: Rng + ?Sized>(sde: SdeConfig, cond_dim: usize, hidden: usize, rng: &mut R) -> Result<Self, PriorError> {
        sde.validate()?;
        let d = sde.dim();
        let network = Mlp::new(
            &[d + TIME_EMBED_DIM + cond_dim, hidden, hidden, hidden, d],
            &[Activation::Tanh, Activation::Tanh, Activation::Tanh, Activation::Identity],
            rng,
        )?;
        Ok(ScoreModel { network, sde, cond_dim })
    }

    /// Rows of [x ‖ time embedding ‖ z], one time value per row.
    pub fn network_input(&self, x: ArrayView2<f64>, t: &[f64], z: ArrayView2<f64>) -> Result<Array2<f64>, PriorError> {
        let d = self.sde.dim();
        check_dim(d, x.ncols())?;
        check_dim(self.cond_dim, z.ncols())?;
        check_dim(x.nrows(), z.nrows())?;
        check_dim(x.nrows(), t.len())?;
        let mut input = Array2::zeros((x.nrows(), d + TIME_EMBED_DIM + self.cond_dim));
        input.slice_mut(s![.., ..d]).assign(&x);
        for (mut row, &ti) in input.rows_mut().into_iter().zip(t) {
            row.slice_mut(s![d..d + TIME_EMBED_DIM]).assign(&ArrayView1::from(&time_embedding(ti)));
        }
        input.slice_mut(s![.., d + TIME_EMBED_DIM..]).assign(&z);
        Ok(input)
    }
}

impl ScoreFn for ScoreModel {
    fn score(&self, x: ArrayView2<f64>, t: f64, z: ArrayView2<f64>) -> Result<Array2<f64>, PriorError> {
        let input = self.network_input(x, &vec![t; x.nrows()], z)?;
        let net = self.network.predict(input.view())?;
        let sigma = Array1::from(self.sde.marginal_variance(t)).mapv(f64::sqrt);
        Ok(-(net / &sigma.insert_axis(Axis(0))))
    }
}

/// A batch of denoising targets: clean embeddings and their conditioning vectors.
#[derive(Debug, Clone, Copy)]
pub struct DsmBatch<'a> {
    pub y: ArrayView2<'a, f64>,
    pub z: ArrayView2<'a, f64>,
}

/// Variance-weighted denoising score matching loss and flattened parameter gradients.
///
/// With λ(t) = σ(t)² the weighted error λ‖s − ∇log q(xₜ|y)‖² reduces to ‖noise − net‖².
pub fn dsm_loss_and_grads<R: Rng + ?Sized>(
    model: &ScoreModel,
    batch: DsmBatch,
    rng: &mut R,
) -> Result<(f64, Vec<f64>), PriorError> {
    let n = batch.y.nrows();
    if n == 0 {
        return Err(PriorError::InsufficientData { got: 0, need: 1 });
    }
    let cfg = &model.sde;
    let mut x_t = Array2::zeros(batch.y.raw_dim());
    let mut noise = Array2::zeros(batch.y.raw_dim());
    let mut times = Vec::with_capacity(n);
    for i in 0..n {
        let t = rng.random_range(cfg.t_min..cfg.t_max);
        let y = batch.y.row(i).to_vec();
        let (x, e) = sample_forward_with_noise(&y, t, cfg, rng)?;
        x_t.row_mut(i).assign(&Array1::from(x));
        noise.row_mut(i).assign(&Array1::from(e));
        times.push(t);
    }
    let input = model.network_input(x_t.view(), &times, batch.z)?;
    let cache = model.network.forward_batch(input.view())?;
    let residual = cache.output() - &noise;
    let loss = residual.mapv(|r| r * r).sum() / n as f64;
    if !loss.is_finite() {
        return Err(PriorError::NonFiniteLoss);
    }
    let d_out = residual * (2.0 / n as f64);
    let (grads, _) = model.network.backprop(&cache, d_out.view())?;
    Ok((loss, grads.flatten()))
}

pub fn dsm_loss<R: Rng + ?Sized>(model: &ScoreModel, batch: DsmBatch, rng: &mut R) -> Result<f64, PriorError> {
    dsm_loss_and_grads(model, batch, rng).map(|(l, _)| l)
}

/// Per-dimension affine standardization (x − mean) / std.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn fit(data: ArrayView2<f64>) -> Self {
        let mean = data.mean_axis(Axis(0)).expect("non-empty").to_vec();
        let std = data
            .std_axis(Axis(0), 0.0)
            .iter()
            .map(|&s| if s > 1e-12 { s } else { 1.0 })
            .collect();
        Standardizer { mean, std }
    }

    pub fn identity(dim: usize) -> Self {
        Standardizer { mean: vec![0.0; dim], std: vec![1.0; dim] }
    }

    pub fn apply(&self, data: ArrayView2<f64>) -> Array2<f64> {
        let m = ArrayView1::from(&self.mean[..]).insert_axis(Axis(0)).to_owned();
        let s = ArrayView1::from(&self.std[..]).insert_axis(Axis(0)).to_owned();
        (&data - &m) / &s
    }

    pub fn invert(&self, data: ArrayView2<f64>) -> Array2<f64> {
        let m = ArrayView1::from(&self.mean[..]).insert_axis(Axis(0)).to_owned();
        let s = ArrayView1::from(&self.std[..]).insert_axis(Axis(0)).to_owned();
        &data * &s + &m
    }
}

/// Score model plus the standardizations of its target and conditioning spaces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prior {
    pub score: ScoreModel,
    pub y_norm: Standardizer,
    pub z_norm: Standardizer,
}

impl Prior {
    /// Draws one embedding per conditioning row, in the original (unstandardized) space.
    pub fn sample<R: Rng + ?Sized>(&self, z: ArrayView2<f64>, n_steps: usize, rng: &mut R) -> Result<Array2<f64>, PriorError> {
        let zs = self.z_norm.apply(z);
        let ys = reverse_ode_sample_batch(&self.score, zs.view(), n_steps, &self.score.sde, rng)?;
        Ok(self.y_norm.invert(ys.view()))
    }
}

impl Prior {
    /// Like [`Prior::sample`] for one conditioning vector, also writing the sampler trace.
    /// The trace is in the standardized space the score model works in.
    pub fn sample_traced<R: Rng + ?Sized, W: Write>(
        &self,
        z: &[f64],
        n_steps: usize,
        rng: &mut R,
        out: &mut W,
    ) -> Result<Vec<f64>, PriorError> {
        let zs = self.z_norm.apply(ArrayView2::from_shape((1, z.len()), z).map_err(|e| PriorError::InvalidConfig(e.to_string()))?);
        let ys = reverse_ode_trace(&self.score, zs.row(0).as_slice().expect("contiguous"), n_steps, &self.score.sde, rng, out)?;
        let ys = Array2::from_shape_vec((1, ys.len()), ys).expect("row vector");
        Ok(self.y_norm.invert(ys.view()).row(0).to_vec())
    }
}

fn euler_reverse<S: ScoreFn + ?Sized, R: Rng + ?Sized>(
    model: &S,
    z: ArrayView2<f64>,
    n_steps: usize,
    cfg: &SdeConfig,
    rng: &mut R,
    mut on_step: impl FnMut(usize, f64, &Array2<f64>),
) -> Result<Array2<f64>, PriorError> {
    if n_steps == 0 {
        return Err(PriorError::InvalidSteps);
    }
    cfg.validate()?;
    let d = cfg.dim();
    let mu = Array1::from(cfg.mu.clone()).insert_axis(Axis(0));
    let lambda = Array1::from(cfg.lambda.clone()).insert_axis(Axis(0));
    let mut x = Array2::from_shape_fn((z.nrows(), d), |(_, j)| {
        let e: f64 = StandardNormal.sample(rng);
        cfg.mu[j] + cfg.lambda[j].sqrt() * e
    });
    let dt = (cfg.t_max - cfg.t_min) / n_steps as f64;
    on_step(0, cfg.t_max, &x);
    for step in 0..n_steps {
        let t = cfg.t_max - step as f64 * dt;
        let score = model.score(x.view(), t, z)?;
        let drift = ((&mu - &x) / &lambda - &score) * (0.5 * cfg.beta(t));
        x = x - drift * dt;
        if x.iter().any(|v| !v.is_finite() || v.abs() > DIVERGENCE_LIMIT) {
            return Err(PriorError::NonFiniteState(step + 1));
        }
        on_step(step + 1, t - dt, &x);
    }
    Ok(x)
}

/// One sample per row of `z`, integrating the probability-flow ODE from T to t_min.
pub fn reverse_ode_sample_batch<S: ScoreFn + ?Sized, R: Rng + ?Sized>(
    model: &S,
    z: ArrayView2<f64>,
    n_steps: usize,
    cfg: &SdeConfig,
    rng: &mut R,
) -> Result<Array2<f64>, PriorError> {
    euler_reverse(model, z, n_steps, cfg, rng, |_, _, _| {})
}

pub fn reverse_ode_sample<S: ScoreFn + ?Sized, R: Rng + ?Sized>(
    model: &S,
    z: &[f64],
    n_steps: usize,
    cfg: &SdeConfig,
    rng: &mut R,
) -> Result<Vec<f64>, PriorError> {
    let z = ArrayView2::from_shape((1, z.len()), z).expect("row vector");
    Ok(reverse_ode_sample_batch(model, z, n_steps, cfg, rng)?.row(0).to_vec())
}

/// Same as [`reverse_ode_sample`] but also writes a `step,t,x_0..x_{d-1}` CSV trace.
pub fn reverse_ode_trace<S: ScoreFn + ?Sized, R: Rng + ?Sized, W: Write>(
    model: &S,
    z: &[f64],
    n_steps: usize,
    cfg: &SdeConfig,
    rng: &mut R,
    out: &mut W,
) -> Result<Vec<f64>, PriorError> {
    let mut lines = vec![std::iter::once("step,t".to_string())
        .chain((0..cfg.dim()).map(|i| format!("x_{i}")))
        .collect::<Vec<_>>()
        .join(",")];
    let z = ArrayView2::from_shape((1, z.len()), z).expect("row vector");
    let x = euler_reverse(model, z, n_steps, cfg, rng, |step, t, x| {
        let values: Vec<String> = x.row(0).iter().map(|v| v.to_string()).collect();
        lines.push(format!("{step},{t},{}", values.join(",")));
    })?;
    for line in lines {
        writeln!(out, "{line}").map_err(|e| PriorError::InvalidConfig(e.to_string()))?;
    }
    Ok(x.row(0).to_vec())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PriorTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Learning rate reached at the last epoch along a cosine schedule.
    pub lr_final: f64,
    pub hidden: usize,
    pub seed: u64,
}

impl Default for PriorTrainConfig {
    fn default() -> Self {
        PriorTrainConfig { epochs: 300, batch_size: 128, lr: 1.5e-3, lr_final: 1e-5, hidden: 256, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorTrainReport {
    pub epoch_losses: Vec<f64>,
}

fn cosine_lr(start: f64, end: f64, epoch: usize, epochs: usize) -> f64 {
    if epochs <= 1 {
        return start;
    }
    let progress = epoch as f64 / (epochs - 1) as f64;
    end + 0.5 * (start - end) * (1.0 + (std::f64::consts::PI * progress).cos())
}

/// Trains the score model on (target embedding, conditioning embedding) pairs.
pub fn train_prior(
    y: ArrayView2<f64>,
    z: ArrayView2<f64>,
    config: &PriorTrainConfig,
    sde: &SdeConfig,
) -> Result<(Prior, PriorTrainReport), PriorError> {
    if y.nrows() < MIN_PRIOR_PAIRS {
        return Err(PriorError::InsufficientData { got: y.nrows(), need: MIN_PRIOR_PAIRS });
    }
    check_dim(y.nrows(), z.nrows())?;
    check_dim(sde.dim(), y.ncols())?;
    let mut rng = seed::rng(config.seed, &[0x5DE]);
    let y_norm = Standardizer::fit(y);
    let z_norm = Standardizer::fit(z);
    let ys = y_norm.apply(y);
    let zs = z_norm.apply(z);
    let mut model = ScoreModel::new(sde.clone(), z.ncols(), config.hidden, &mut rng)?;
    let mut params = model.network.params();
    let mut adam = AdamState::new(AdamConfig { lr: config.lr, ..AdamConfig::default() }, params.len());
    let mut order: Vec<usize> = (0..ys.nrows()).collect();
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        adam.config.lr = cosine_lr(config.lr, config.lr_final, epoch, config.epochs);
        shuffle(&mut order, &mut rng);
        let mut total = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(config.batch_size.max(1)) {
            let by = ys.select(Axis(0), chunk);
            let bz = zs.select(Axis(0), chunk);
            let (loss, grads) = dsm_loss_and_grads(&model, DsmBatch { y: by.view(), z: bz.view() }, &mut rng)?;
            adam.update(&mut params, &grads)?;
            model.network.set_params(&params)?;
            total += loss;
            batches += 1;
        }
        epoch_losses.push(total / batches as f64);
    }
    Ok((Prior { score: model, y_norm, z_norm }, PriorTrainReport { epoch_losses }))
}
