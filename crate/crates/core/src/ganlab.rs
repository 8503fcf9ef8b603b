//! Desk-scale adversarial training with a spatial and a spectral
//! discriminator.
//!
//! The generator and spatial discriminator are small MLPs (stand-ins for
//! the usual convolutional stacks; the spectral-discriminator construction
//! is architecture-agnostic, so nothing frequency-related is lost at this
//! scale). The spectral discriminator is a fixed differentiable pipeline —
//! DFT as constant matrices, squared magnitude, radial binning — followed
//! by a single trainable affine layer, so it adds exactly `L + 1`
//! parameters for profile length `L`. Discriminators train on separate
//! optimizers with the same loss kind; the generator averages its spatial
//! and frequency losses when the spectral branch is on.
//!
//! Generated pixels live in (−1,1); they are mapped to [0,1] before any
//! spectral computation so profiles stay comparable with corpus profiles.
//! Randomness is split into three independent streams (training, spectral
//! branch, evaluation), so toggling the spectral discriminator never
//! perturbs the draws the rest of training sees.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{AutodiffError, NodeId, Tape, Tensor};
use crate::fidelity::{evaluate_cs, spectral_difference, FidelityError, SdScale};
use crate::imagecore::Image;
use crate::spectrum::{corpus_profiles, profile_len, ring_index, ProfileMode, SpectrumError};

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("non-finite {context} at epoch {epoch}, step {step}")]
    NonFinite {
        epoch: usize,
        step: usize,
        context: String,
    },
    #[error("corpus images must be {expected}x{expected}, found {got_h}x{got_w}")]
    ImageSizeMismatch {
        expected: usize,
        got_h: usize,
        got_w: usize,
    },
    #[error("corpus of {got} images is too small (need at least {needed})")]
    CorpusTooSmall { needed: usize, got: usize },
    #[error("invalid config: {0}")]
    BadConfig(String),
    #[error("gradient-penalty inputs are required exactly when the loss is wgan-gp")]
    GpInputsMismatch,
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Spectrum(#[from] SpectrumError),
    #[error(transparent)]
    Fidelity(#[from] FidelityError),
}

/// Per-layer nonlinearity of an [`MlpNet`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    Linear,
    Relu,
    LeakyRelu,
    Tanh,
    Sigmoid,
}

fn apply_activation(tape: &mut Tape, act: Activation, x: NodeId) -> NodeId {
    match act {
        Activation::Linear => x,
        Activation::Relu => tape.relu(x),
        Activation::LeakyRelu => tape.leaky_relu(x),
        Activation::Tanh => tape.tanh(x),
        Activation::Sigmoid => tape.sigmoid(x),
    }
}

/// Standard-normal draw via Box-Muller on the ChaCha stream.
fn draw_normal(rng: &mut ChaCha8Rng) -> f64 {
    let mut u1: f64 = rng.gen();
    while u1 <= f64::MIN_POSITIVE {
        u1 = rng.gen();
    }
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

fn normal_tensor(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    Tensor::new(
        rows,
        cols,
        (0..rows * cols).map(|_| draw_normal(rng)).collect(),
    )
}

/// A fully connected network: per-layer weights, biases, and activations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpNet {
    sizes: Vec<usize>,
    activations: Vec<Activation>,
    weights: Vec<Tensor>,
    biases: Vec<Tensor>,
}

impl MlpNet {
    /// Xavier-normal initialization drawn from `rng`.
    pub fn new(sizes: &[usize], activations: &[Activation], rng: &mut ChaCha8Rng) -> Self {
        assert!(sizes.len() >= 2, "need at least input and output sizes");
        assert_eq!(
            activations.len(),
            sizes.len() - 1,
            "one activation per layer"
        );
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for pair in sizes.windows(2) {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let std = (2.0 / (fan_in + fan_out) as f64).sqrt();
            let w = Tensor::new(
                fan_in,
                fan_out,
                (0..fan_in * fan_out)
                    .map(|_| std * draw_normal(rng))
                    .collect(),
            );
            weights.push(w);
            biases.push(Tensor::zeros(1, fan_out));
        }
        Self {
            sizes: sizes.to_vec(),
            activations: activations.to_vec(),
            weights,
            biases,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn param_count(&self) -> usize {
        self.weights
            .iter()
            .zip(&self.biases)
            .map(|(w, b)| w.data().len() + b.data().len())
            .sum()
    }

    /// Pushes all parameters onto the tape, as leaves when `trainable`.
    pub fn push_params(&self, tape: &mut Tape, trainable: bool) -> Vec<NodeId> {
        let mut ids = Vec::with_capacity(2 * self.weights.len());
        for (w, b) in self.weights.iter().zip(&self.biases) {
            if trainable {
                ids.push(tape.leaf(w.clone()));
                ids.push(tape.leaf(b.clone()));
            } else {
                ids.push(tape.constant(w.clone()));
                ids.push(tape.constant(b.clone()));
            }
        }
        ids
    }

    /// Forward pass using parameters previously pushed by `push_params`.
    pub fn forward(&self, tape: &mut Tape, x: NodeId, params: &[NodeId]) -> NodeId {
        assert_eq!(params.len(), 2 * self.weights.len());
        let mut h = x;
        for (layer, act) in self.activations.iter().enumerate() {
            let a = tape.affine(h, params[2 * layer], params[2 * layer + 1]);
            h = apply_activation(tape, *act, a);
        }
        h
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.weights
            .iter_mut()
            .zip(self.biases.iter_mut())
            .flat_map(|(w, b)| [w, b])
            .collect()
    }

    pub fn clip(&mut self, c: f64) {
        for t in self.params_mut() {
            for v in t.data_mut() {
                *v = v.clamp(-c, c);
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.weights
            .iter()
            .chain(&self.biases)
            .all(Tensor::is_finite)
    }
}

/// Input scaling of the spectral head's affine layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DfScale {
    /// log1p of the radial profile (default: raw power saturates the head).
    #[default]
    Log1p,
    /// The profile as computed, the literal reading.
    Raw,
}

impl DfScale {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "log1p" => Some(DfScale::Log1p),
            "raw" => Some(DfScale::Raw),
            _ => None,
        }
    }
}

/// The spectral discriminator: fixed DFT + radial binning matrices with a
/// single trainable affine layer on the profile. Trainable parameter count
/// is exactly `profile_len(n) + 1`.
#[derive(Debug, Clone)]
pub struct SpectralHead {
    n: usize,
    scale: DfScale,
    dft_cos_t: Tensor,
    dft_sin_t: Tensor,
    ring_t: Tensor,
    weights: Tensor,
    bias: Tensor,
}

impl SpectralHead {
    /// Builds the constant transform matrices for n×n inputs; the trainable
    /// affine layer starts at zero (score 0.5 under a sigmoid).
    pub fn new(n: usize, scale: DfScale) -> Self {
        let n2 = n * n;
        let len = profile_len(n);
        let mut cos_t = vec![0.0; n2 * n2];
        let mut sin_t = vec![0.0; n2 * n2];
        for p in 0..n2 {
            let (m, nn) = (p / n, p % n);
            for q in 0..n2 {
                let (k, l) = (q / n, q % n);
                let ang = -2.0 * std::f64::consts::PI * ((m * k + nn * l) % n) as f64 / n as f64;
                cos_t[p * n2 + q] = ang.cos();
                sin_t[p * n2 + q] = ang.sin();
            }
        }
        let mut ring = vec![0.0; n2 * len];
        for q in 0..n2 {
            let r = ring_index(n, q / n, q % n);
            ring[q * len + r] = 1.0;
        }
        Self {
            n,
            scale,
            dft_cos_t: Tensor::new(n2, n2, cos_t),
            dft_sin_t: Tensor::new(n2, n2, sin_t),
            ring_t: Tensor::new(n2, len, ring),
            weights: Tensor::zeros(len, 1),
            bias: Tensor::zeros(1, 1),
        }
    }

    pub fn size(&self) -> usize {
        self.n
    }

    pub fn profile_len(&self) -> usize {
        self.weights.rows()
    }

    pub fn scale(&self) -> DfScale {
        self.scale
    }

    /// Trainable parameters only; the transform matrices are constants.
    pub fn trainable_param_count(&self) -> usize {
        self.weights.data().len() + self.bias.data().len()
    }

    pub fn trainable_params(&self) -> (&Tensor, &Tensor) {
        (&self.weights, &self.bias)
    }

    pub fn set_trainable_params(&mut self, weights: Tensor, bias: Tensor) {
        assert_eq!(weights.shape(), self.weights.shape());
        assert_eq!(bias.shape(), (1, 1));
        self.weights = weights;
        self.bias = bias;
    }

    pub fn push_params(&self, tape: &mut Tape, trainable: bool) -> (NodeId, NodeId) {
        if trainable {
            (
                tape.leaf(self.weights.clone()),
                tape.leaf(self.bias.clone()),
            )
        } else {
            (
                tape.constant(self.weights.clone()),
                tape.constant(self.bias.clone()),
            )
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        vec![&mut self.weights, &mut self.bias]
    }

    pub fn clip(&mut self, c: f64) {
        for t in self.params_mut() {
            for v in t.data_mut() {
                *v = v.clamp(-c, c);
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.weights.is_finite() && self.bias.is_finite()
    }

    /// Differentiable radial power profile of a [0,1] image batch (B×n²
    /// rows → B×L), the same binning as the reference azimuthal integral.
    pub fn forward_profile(&self, tape: &mut Tape, images01: NodeId) -> NodeId {
        assert_eq!(
            tape.value(images01).cols(),
            self.n * self.n,
            "image batch width must be n²"
        );
        let cos_t = tape.constant(self.dft_cos_t.clone());
        let sin_t = tape.constant(self.dft_sin_t.clone());
        let ring_t = tape.constant(self.ring_t.clone());
        let re = tape.matmul(images01, cos_t);
        let im = tape.matmul(images01, sin_t);
        let re2 = tape.square(re);
        let im2 = tape.square(im);
        let power = tape.add(re2, im2);
        tape.matmul(power, ring_t)
    }

    /// Realness scores y_F for a [0,1] image batch: profile, optional
    /// log1p, affine layer, optional sigmoid (omitted by the Wasserstein
    /// losses, which read raw scores).
    pub fn forward(
        &self,
        tape: &mut Tape,
        images01: NodeId,
        weights: NodeId,
        bias: NodeId,
        with_sigmoid: bool,
    ) -> NodeId {
        let profile = self.forward_profile(tape, images01);
        let features = match self.scale {
            DfScale::Log1p => tape.log1p(profile),
            DfScale::Raw => profile,
        };
        let score = tape.affine(features, weights, bias);
        if with_sigmoid {
            tape.sigmoid(score)
        } else {
            score
        }
    }
}

/// Scores y_F for a [0,1] image batch with the head's own parameters.
pub fn spectral_forward(
    head: &SpectralHead,
    tape: &mut Tape,
    images01: NodeId,
    with_sigmoid: bool,
) -> NodeId {
    let (w, b) = head.push_params(tape, false);
    head.forward(tape, images01, w, b, with_sigmoid)
}

/// Generator forward: latent batch to a tanh image batch in (−1,1).
pub fn generator_forward(
    generator: &MlpNet,
    tape: &mut Tape,
    z: NodeId,
    params: &[NodeId],
) -> NodeId {
    generator.forward(tape, z, params)
}

/// The adversarial objective family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossKind {
    Dcgan,
    Lsgan,
    Wgan,
    WganGp,
}

impl LossKind {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "dcgan" => Some(LossKind::Dcgan),
            "lsgan" => Some(LossKind::Lsgan),
            "wgan" => Some(LossKind::Wgan),
            "wgan-gp" => Some(LossKind::WganGp),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            LossKind::Dcgan => "dcgan",
            LossKind::Lsgan => "lsgan",
            LossKind::Wgan => "wgan",
            LossKind::WganGp => "wgan-gp",
        }
    }

    /// Wasserstein critics read raw scores; the other heads end in sigmoid.
    pub fn uses_sigmoid_head(self) -> bool {
        matches!(self, LossKind::Dcgan | LossKind::Lsgan)
    }

    pub fn default_optimizer(self) -> OptimizerChoice {
        match self {
            LossKind::Wgan => OptimizerChoice::RmsProp,
            _ => OptimizerChoice::Adam,
        }
    }

    pub fn default_n_critic(self) -> usize {
        match self {
            LossKind::Wgan | LossKind::WganGp => 5,
            _ => 1,
        }
    }
}

/// Ingredients of the gradient penalty: the interpolated input leaf, the
/// discriminator scores on it, and the penalty weight.
pub struct GpInputs {
    pub interp_input: NodeId,
    pub interp_scores: NodeId,
    pub lambda: f64,
}

fn gp_penalty(tape: &mut Tape, gp: &GpInputs) -> Result<NodeId, TrainError> {
    // Rows are independent samples, so the gradient of the score sum
    // w.r.t. the input recovers each sample's own gradient.
    let ssum = tape.sum(gp.interp_scores);
    let gx = tape.backward_graph(ssum, &[gp.interp_input])?[0];
    let gx2 = tape.square(gx);
    let cols = tape.value(gx2).cols();
    let rows = tape.value(gx2).rows();
    let ones_col = tape.constant(Tensor::ones(cols, 1));
    let row_norm2 = tape.matmul(gx2, ones_col);
    let norms = tape.sqrt_eps(row_norm2);
    let one = tape.constant(Tensor::ones(rows, 1));
    let diff = tape.sub(norms, one);
    let sq = tape.square(diff);
    let pen = tape.mean(sq);
    Ok(tape.scale(pen, gp.lambda))
}

/// Discriminator loss for a batch of real and fake scores (B×1 columns).
/// `gp` must be present exactly when `kind` is wgan-gp.
pub fn discriminator_loss(
    tape: &mut Tape,
    kind: LossKind,
    real_scores: NodeId,
    fake_scores: NodeId,
    gp: Option<GpInputs>,
) -> Result<NodeId, TrainError> {
    if (kind == LossKind::WganGp) != gp.is_some() {
        return Err(TrainError::GpInputsMismatch);
    }
    let loss = match kind {
        LossKind::Dcgan => {
            // −E[log D(x)] − E[log(1 − D(x̂))]
            let log_real = tape.log_eps(real_scores);
            let term_real = tape.mean(log_real);
            let (r, c) = tape.value(fake_scores).shape();
            let ones = tape.constant(Tensor::ones(r, c));
            let one_minus = tape.sub(ones, fake_scores);
            let log_fake = tape.log_eps(one_minus);
            let term_fake = tape.mean(log_fake);
            let s = tape.add(term_real, term_fake);
            tape.scale(s, -1.0)
        }
        LossKind::Lsgan => {
            // E[(D(x) − 1)²] + E[D(x̂)²], both terms positive.
            let (r, c) = tape.value(real_scores).shape();
            let ones = tape.constant(Tensor::ones(r, c));
            let diff = tape.sub(real_scores, ones);
            let sq_real = tape.square(diff);
            let term_real = tape.mean(sq_real);
            let sq_fake = tape.square(fake_scores);
            let term_fake = tape.mean(sq_fake);
            tape.add(term_real, term_fake)
        }
        LossKind::Wgan | LossKind::WganGp => {
            // −E[D(x)] + E[D(x̂)]
            let m_real = tape.mean(real_scores);
            let m_fake = tape.mean(fake_scores);
            let base = tape.sub(m_fake, m_real);
            if let Some(gp) = &gp {
                let pen = gp_penalty(tape, gp)?;
                tape.add(base, pen)
            } else {
                base
            }
        }
    };
    Ok(loss)
}

/// Per-branch generator loss from the discriminator's fake scores
/// (non-saturating form for the BCE family).
pub fn generator_loss(tape: &mut Tape, kind: LossKind, fake_scores: NodeId) -> NodeId {
    match kind {
        LossKind::Dcgan => {
            let log_fake = tape.log_eps(fake_scores);
            let m = tape.mean(log_fake);
            tape.scale(m, -1.0)
        }
        LossKind::Lsgan => {
            let (r, c) = tape.value(fake_scores).shape();
            let ones = tape.constant(Tensor::ones(r, c));
            let diff = tape.sub(fake_scores, ones);
            let sq = tape.square(diff);
            tape.mean(sq)
        }
        LossKind::Wgan | LossKind::WganGp => {
            let m = tape.mean(fake_scores);
            tape.scale(m, -1.0)
        }
    }
}

/// Averages the two generator branches when the spectral one is active.
pub fn combined_generator_loss(
    tape: &mut Tape,
    spatial: NodeId,
    frequency: Option<NodeId>,
) -> NodeId {
    match frequency {
        Some(freq) => {
            let s = tape.add(spatial, freq);
            tape.scale(s, 0.5)
        }
        None => spatial,
    }
}

/// Optimizer family; each network owns an independent instance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerChoice {
    Adam,
    RmsProp,
}

impl OptimizerChoice {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "adam" => Some(OptimizerChoice::Adam),
            "rmsprop" => Some(OptimizerChoice::RmsProp),
            _ => None,
        }
    }
}

/// Adam (β₁ = 0.5, β₂ = 0.999) or RMSprop (α = 0.99) with per-tensor state.
pub struct Optimizer {
    choice: OptimizerChoice,
    lr: f64,
    t: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

const ADAM_BETA1: f64 = 0.5;
const ADAM_BETA2: f64 = 0.999;
const RMS_ALPHA: f64 = 0.99;
const OPT_EPS: f64 = 1e-8;

impl Optimizer {
    pub fn new(choice: OptimizerChoice, lr: f64) -> Self {
        Self {
            choice,
            lr,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[Tensor]) {
        assert_eq!(params.len(), grads.len());
        if self.v.is_empty() {
            self.m = params
                .iter()
                .map(|p| Tensor::zeros(p.rows(), p.cols()))
                .collect();
            self.v = self.m.clone();
        }
        self.t += 1;
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            match self.choice {
                OptimizerChoice::Adam => {
                    let bc1 = 1.0 - ADAM_BETA1.powi(self.t as i32);
                    let bc2 = 1.0 - ADAM_BETA2.powi(self.t as i32);
                    for ((pv, gv), (mv, vv)) in p
                        .data_mut()
                        .iter_mut()
                        .zip(g.data())
                        .zip(m.data_mut().iter_mut().zip(v.data_mut()))
                    {
                        *mv = ADAM_BETA1 * *mv + (1.0 - ADAM_BETA1) * gv;
                        *vv = ADAM_BETA2 * *vv + (1.0 - ADAM_BETA2) * gv * gv;
                        let mhat = *mv / bc1;
                        let vhat = *vv / bc2;
                        *pv -= self.lr * mhat / (vhat.sqrt() + OPT_EPS);
                    }
                }
                OptimizerChoice::RmsProp => {
                    for ((pv, gv), vv) in p
                        .data_mut()
                        .iter_mut()
                        .zip(g.data())
                        .zip(v.data_mut().iter_mut())
                    {
                        *vv = RMS_ALPHA * *vv + (1.0 - RMS_ALPHA) * gv * gv;
                        *pv -= self.lr * gv / (vv.sqrt() + OPT_EPS);
                    }
                }
            }
        }
    }
}

fn default_batch() -> usize {
    128
}
fn default_lr() -> f64 {
    2e-4
}
fn default_gp_lambda() -> f64 {
    10.0
}
fn default_clip() -> f64 {
    0.01
}
fn default_latent() -> usize {
    32
}

/// Full training configuration; serialized verbatim into every run
/// directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub loss: LossKind,
    pub spectral: bool,
    pub epochs: usize,
    #[serde(default = "default_batch")]
    pub batch: usize,
    #[serde(default = "default_lr")]
    pub lr: f64,
    /// None resolves to Adam, or RMSprop for plain wgan.
    #[serde(default)]
    pub optimizer: Option<OptimizerChoice>,
    #[serde(default = "default_gp_lambda")]
    pub gp_lambda: f64,
    #[serde(default = "default_clip")]
    pub clip: f64,
    /// None resolves to 1, or 5 for the Wasserstein losses.
    #[serde(default)]
    pub n_critic: Option<usize>,
    #[serde(default = "default_latent")]
    pub latent_dim: usize,
    pub image_size: usize,
    pub seed: u64,
    #[serde(default)]
    pub df_scale: DfScale,
    /// Extra salt folded into the spectral branch's private stream; with
    /// the branch off it must have no effect on anything.
    #[serde(default)]
    pub df_stream_salt: u64,
}

impl TrainConfig {
    pub fn new(
        loss: LossKind,
        spectral: bool,
        epochs: usize,
        image_size: usize,
        seed: u64,
    ) -> Self {
        Self {
            loss,
            spectral,
            epochs,
            batch: default_batch(),
            lr: default_lr(),
            optimizer: None,
            gp_lambda: default_gp_lambda(),
            clip: default_clip(),
            n_critic: None,
            latent_dim: default_latent(),
            image_size,
            seed,
            df_scale: DfScale::default(),
            df_stream_salt: 0,
        }
    }

    pub fn resolved_optimizer(&self) -> OptimizerChoice {
        self.optimizer
            .unwrap_or_else(|| self.loss.default_optimizer())
    }

    pub fn resolved_n_critic(&self) -> usize {
        self.n_critic
            .unwrap_or_else(|| self.loss.default_n_critic())
    }

    fn validate(&self) -> Result<(), TrainError> {
        if self.batch < 2 {
            return Err(TrainError::BadConfig("batch must be >= 2".into()));
        }
        if !self.image_size.is_power_of_two() || self.image_size < 4 {
            return Err(TrainError::BadConfig(
                "image_size must be a power of two >= 4".into(),
            ));
        }
        if self.gp_lambda < 0.0 {
            return Err(TrainError::BadConfig("gp_lambda must be >= 0".into()));
        }
        if self.latent_dim == 0 {
            return Err(TrainError::BadConfig("latent_dim must be >= 1".into()));
        }
        Ok(())
    }
}

/// One epoch's aggregates: mean step losses and the evaluation metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub sd: f64,
    pub cs_quick: f64,
    pub d_s_loss: f64,
    pub d_f_loss: Option<f64>,
    pub g_loss: f64,
}

/// Per-epoch log of a training run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunLog {
    pub epochs: Vec<EpochStats>,
}

impl RunLog {
    pub fn final_sd(&self) -> Option<f64> {
        self.epochs.last().map(|e| e.sd)
    }
}

/// Everything a finished run hands back.
#[derive(Debug)]
pub struct TrainOutcome {
    pub log: RunLog,
    pub generator: MlpNet,
    pub d_spatial: MlpNet,
    pub d_freq: Option<SpectralHead>,
}

/// Serializable snapshot of all trained parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelArtifact {
    pub generator: MlpNet,
    pub d_spatial: MlpNet,
    pub d_freq: Option<HeadArtifact>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HeadArtifact {
    pub image_size: usize,
    pub df_scale: DfScale,
    pub weights: Tensor,
    pub bias: Tensor,
}

impl From<&TrainOutcome> for ModelArtifact {
    fn from(out: &TrainOutcome) -> Self {
        ModelArtifact {
            generator: out.generator.clone(),
            d_spatial: out.d_spatial.clone(),
            d_freq: out.d_freq.as_ref().map(|h| HeadArtifact {
                image_size: h.size(),
                df_scale: h.scale(),
                weights: h.trainable_params().0.clone(),
                bias: h.trainable_params().1.clone(),
            }),
        }
    }
}

const DF_STREAM_SALT: u64 = 0xd1cf_5a17_ed00_0001;
const EVAL_STREAM_SALT: u64 = 0xe7a1_77ee_d000_0002;

/// Hidden sizes of the toy nets.
const G_HIDDEN: [usize; 2] = [128, 128];
const D_HIDDEN: [usize; 2] = [128, 64];
/// Short LR schedule for the per-epoch cloaking-score estimate.
const CS_QUICK_EPOCHS: usize = 200;
/// Cap on corpus profiles used for the per-epoch spectral difference.
const SD_REF_COUNT: usize = 512;

fn batch_tensor(rows: &[Vec<f64>], idx: &[usize]) -> Tensor {
    let cols = rows[0].len();
    let mut data = Vec::with_capacity(idx.len() * cols);
    for &i in idx {
        data.extend_from_slice(&rows[i]);
    }
    Tensor::new(idx.len(), cols, data)
}

fn to_pm1(t: &Tensor) -> Tensor {
    Tensor::new(
        t.rows(),
        t.cols(),
        t.data().iter().map(|&v| 2.0 * v - 1.0).collect(),
    )
}

/// Maps a (−1,1) batch node to [0,1] on the tape (differentiable).
fn map_to_01(tape: &mut Tape, x: NodeId) -> NodeId {
    let (r, c) = tape.value(x).shape();
    let half = tape.constant(Tensor::filled(r, c, 0.5));
    let scaled = tape.scale(x, 0.5);
    tape.add(scaled, half)
}

fn rows_to_images(batch: &Tensor, n: usize) -> Vec<Image> {
    batch
        .data()
        .chunks_exact(n * n)
        .map(|row| {
            Image::from_clamped(n, n, row.to_vec()).expect("generator output has n*n pixels")
        })
        .collect()
}

/// Samples `count` images from a generator, mapped into [0,1].
pub fn generate_images(generator: &MlpNet, count: usize, n: usize, seed: u64) -> Vec<Image> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tape = Tape::new();
    let params = generator.push_params(&mut tape, false);
    let z = tape.constant(normal_tensor(&mut rng, count, generator.input_dim()));
    let fake = generator.forward(&mut tape, z, &params);
    let vals = tape.value(fake);
    let mapped = Tensor::new(
        vals.rows(),
        vals.cols(),
        vals.data().iter().map(|&v| (v + 1.0) / 2.0).collect(),
    );
    rows_to_images(&mapped, n)
}

struct TrainContext<'a> {
    config: &'a TrainConfig,
    generator: MlpNet,
    d_spatial: MlpNet,
    d_freq: Option<SpectralHead>,
    opt_g: Optimizer,
    opt_ds: Optimizer,
    opt_df: Optimizer,
    real01: Vec<Vec<f64>>,
    main_rng: ChaCha8Rng,
    df_rng: Option<ChaCha8Rng>,
    eval_rng: ChaCha8Rng,
}

impl<'a> TrainContext<'a> {
    fn nonfinite(&self, epoch: usize, step: usize, context: &str) -> TrainError {
        TrainError::NonFinite {
            epoch,
            step,
            context: context.to_string(),
        }
    }

    fn d_spatial_step(
        &mut self,
        idx: &[usize],
        epoch: usize,
        step: usize,
    ) -> Result<f64, TrainError> {
        let cfg = self.config;
        let mut tape = Tape::new();
        let d_params = self.d_spatial.push_params(&mut tape, true);
        let g_params = self.generator.push_params(&mut tape, false);
        let z = tape.constant(normal_tensor(
            &mut self.main_rng,
            idx.len(),
            cfg.latent_dim,
        ));
        let fake = self.generator.forward(&mut tape, z, &g_params);
        let real01 = batch_tensor(&self.real01, idx);
        let real = tape.constant(to_pm1(&real01));
        let s_real = self.d_spatial.forward(&mut tape, real, &d_params);
        let s_fake = self.d_spatial.forward(&mut tape, fake, &d_params);
        let gp = if cfg.loss == LossKind::WganGp {
            let real_vals = to_pm1(&real01);
            let fake_vals = tape.value(fake).clone();
            let mut interp = Vec::with_capacity(real_vals.data().len());
            for (row, (rrow, frow)) in real_vals
                .data()
                .chunks_exact(real_vals.cols())
                .zip(fake_vals.data().chunks_exact(fake_vals.cols()))
                .enumerate()
                .map(|(i, pair)| (i, pair))
            {
                let _ = row;
                let alpha: f64 = self.main_rng.gen();
                for (rv, fv) in rrow.iter().zip(frow) {
                    interp.push(alpha * rv + (1.0 - alpha) * fv);
                }
            }
            let interp = tape.leaf(Tensor::new(real_vals.rows(), real_vals.cols(), interp));
            let s_interp = self.d_spatial.forward(&mut tape, interp, &d_params);
            Some(GpInputs {
                interp_input: interp,
                interp_scores: s_interp,
                lambda: cfg.gp_lambda,
            })
        } else {
            None
        };
        let loss = discriminator_loss(&mut tape, cfg.loss, s_real, s_fake, gp)?;
        tape.check_finite(loss, "spatial discriminator loss")
            .map_err(|_| self.nonfinite(epoch, step, "spatial discriminator loss"))?;
        let loss_val = tape.scalar(loss);
        let grads = tape.backward(loss)?;
        let grad_tensors: Vec<Tensor> = d_params
            .iter()
            .map(|&id| {
                let (r, c) = tape.value(id).shape();
                grads.get_or_zeros(id, r, c)
            })
            .collect();
        self.opt_ds
            .step(&mut self.d_spatial.params_mut(), &grad_tensors);
        if cfg.loss == LossKind::Wgan {
            self.d_spatial.clip(cfg.clip);
        }
        if !self.d_spatial.is_finite() {
            return Err(self.nonfinite(epoch, step, "spatial discriminator parameters"));
        }
        Ok(loss_val)
    }

    fn d_freq_step(&mut self, idx: &[usize], epoch: usize, step: usize) -> Result<f64, TrainError> {
        let cfg = self.config;
        let head = self.d_freq.as_ref().expect("spectral branch is on");
        let df_rng = self.df_rng.as_mut().expect("spectral branch is on");
        let with_sigmoid = cfg.loss.uses_sigmoid_head();
        let mut tape = Tape::new();
        let (hw, hb) = head.push_params(&mut tape, true);
        let g_params = self.generator.push_params(&mut tape, false);
        let z = tape.constant(normal_tensor(df_rng, idx.len(), cfg.latent_dim));
        let fake = self.generator.forward(&mut tape, z, &g_params);
        let fake01 = map_to_01(&mut tape, fake);
        let real01 = batch_tensor(&self.real01, idx);
        let real01_node = tape.constant(real01.clone());
        let s_real = head.forward(&mut tape, real01_node, hw, hb, with_sigmoid);
        let s_fake = head.forward(&mut tape, fake01, hw, hb, with_sigmoid);
        let gp = if cfg.loss == LossKind::WganGp {
            let fake_vals = tape.value(fake01).clone();
            let mut interp = Vec::with_capacity(real01.data().len());
            for (rrow, frow) in real01
                .data()
                .chunks_exact(real01.cols())
                .zip(fake_vals.data().chunks_exact(fake_vals.cols()))
            {
                let alpha: f64 = df_rng.gen();
                for (rv, fv) in rrow.iter().zip(frow) {
                    interp.push(alpha * rv + (1.0 - alpha) * fv);
                }
            }
            let interp = tape.leaf(Tensor::new(real01.rows(), real01.cols(), interp));
            let s_interp = head.forward(&mut tape, interp, hw, hb, with_sigmoid);
            Some(GpInputs {
                interp_input: interp,
                interp_scores: s_interp,
                lambda: cfg.gp_lambda,
            })
        } else {
            None
        };
        let loss = discriminator_loss(&mut tape, cfg.loss, s_real, s_fake, gp)?;
        tape.check_finite(loss, "spectral discriminator loss")
            .map_err(|_| self.nonfinite(epoch, step, "spectral discriminator loss"))?;
        let loss_val = tape.scalar(loss);
        let grads = tape.backward(loss)?;
        let grad_tensors: Vec<Tensor> = [hw, hb]
            .iter()
            .map(|&id| {
                let (r, c) = tape.value(id).shape();
                grads.get_or_zeros(id, r, c)
            })
            .collect();
        let head = self.d_freq.as_mut().expect("spectral branch is on");
        self.opt_df.step(&mut head.params_mut(), &grad_tensors);
        if cfg.loss == LossKind::Wgan {
            head.clip(cfg.clip);
        }
        if !head.is_finite() {
            return Err(self.nonfinite(epoch, step, "spectral discriminator parameters"));
        }
        Ok(loss_val)
    }

    fn generator_step(
        &mut self,
        batch_len: usize,
        epoch: usize,
        step: usize,
    ) -> Result<f64, TrainError> {
        let cfg = self.config;
        let with_sigmoid = cfg.loss.uses_sigmoid_head();
        let mut tape = Tape::new();
        let g_params = self.generator.push_params(&mut tape, true);
        let d_params = self.d_spatial.push_params(&mut tape, false);
        let z = tape.constant(normal_tensor(&mut self.main_rng, batch_len, cfg.latent_dim));
        let fake = self.generator.forward(&mut tape, z, &g_params);
        let s_fake = self.d_spatial.forward(&mut tape, fake, &d_params);
        let spatial = generator_loss(&mut tape, cfg.loss, s_fake);
        let frequency = if let Some(head) = &self.d_freq {
            let fake01 = map_to_01(&mut tape, fake);
            let (hw, hb) = head.push_params(&mut tape, false);
            let s_freq = head.forward(&mut tape, fake01, hw, hb, with_sigmoid);
            Some(generator_loss(&mut tape, cfg.loss, s_freq))
        } else {
            None
        };
        let loss = combined_generator_loss(&mut tape, spatial, frequency);
        tape.check_finite(loss, "generator loss")
            .map_err(|_| self.nonfinite(epoch, step, "generator loss"))?;
        let loss_val = tape.scalar(loss);
        let grads = tape.backward(loss)?;
        let grad_tensors: Vec<Tensor> = g_params
            .iter()
            .map(|&id| {
                let (r, c) = tape.value(id).shape();
                grads.get_or_zeros(id, r, c)
            })
            .collect();
        self.opt_g
            .step(&mut self.generator.params_mut(), &grad_tensors);
        if !self.generator.is_finite() {
            return Err(self.nonfinite(epoch, step, "generator parameters"));
        }
        Ok(loss_val)
    }
}

/// Trains on pre-loaded corpus images. One epoch is one shuffled pass over
/// the corpus in full batches; each batch updates the discriminators
/// `n_critic` times, then the generator once. Deterministic given the
/// config.
pub fn train_on_images(config: &TrainConfig, images: &[Image]) -> Result<TrainOutcome, TrainError> {
    config.validate()?;
    let n = config.image_size;
    for img in images {
        if img.height() != n || img.width() != n {
            return Err(TrainError::ImageSizeMismatch {
                expected: n,
                got_h: img.height(),
                got_w: img.width(),
            });
        }
    }
    if images.len() < 2 {
        return Err(TrainError::CorpusTooSmall {
            needed: 2,
            got: images.len(),
        });
    }
    let effective_batch = config.batch.min(images.len());
    let n2 = n * n;

    let mut main_rng = ChaCha8Rng::seed_from_u64(config.seed);
    let df_rng = config.spectral.then(|| {
        ChaCha8Rng::seed_from_u64(config.seed ^ DF_STREAM_SALT ^ config.df_stream_salt)
    });
    let mut eval_rng = ChaCha8Rng::seed_from_u64(config.seed ^ EVAL_STREAM_SALT);

    let g_sizes = [
        &[config.latent_dim][..],
        &G_HIDDEN[..],
        &[n2][..],
    ]
    .concat();
    let g_acts = [Activation::LeakyRelu, Activation::LeakyRelu, Activation::Tanh];
    let generator = MlpNet::new(&g_sizes, &g_acts, &mut main_rng);
    let d_last = if config.loss.uses_sigmoid_head() {
        Activation::Sigmoid
    } else {
        Activation::Linear
    };
    let d_sizes = [&[n2][..], &D_HIDDEN[..], &[1][..]].concat();
    let d_acts = [Activation::LeakyRelu, Activation::LeakyRelu, d_last];
    let d_spatial = MlpNet::new(&d_sizes, &d_acts, &mut main_rng);
    let d_freq = config
        .spectral
        .then(|| SpectralHead::new(n, config.df_scale));

    let opt_kind = config.resolved_optimizer();
    let mut ctx = TrainContext {
        config,
        generator,
        d_spatial,
        d_freq,
        opt_g: Optimizer::new(opt_kind, config.lr),
        opt_ds: Optimizer::new(opt_kind, config.lr),
        opt_df: Optimizer::new(opt_kind, config.lr),
        real01: images.iter().map(|img| img.pixels().to_vec()).collect(),
        main_rng,
        df_rng,
        eval_rng: ChaCha8Rng::seed_from_u64(0), // replaced below
    };
    std::mem::swap(&mut ctx.eval_rng, &mut eval_rng);

    // Evaluation fixtures: reference real profiles for SD and the quick CS.
    let sd_ref: Vec<Image> = images.iter().take(SD_REF_COUNT).cloned().collect();
    let real_profiles = corpus_profiles(&sd_ref, ProfileMode::Binned)?;
    let cs_seed = config.seed ^ 0xc5_c5_c5;

    let n_critic = config.resolved_n_critic();
    let steps_per_epoch = ctx.real01.len() / effective_batch;
    let mut log = RunLog::default();

    for epoch in 0..config.epochs {
        let mut order: Vec<usize> = (0..ctx.real01.len()).collect();
        order.shuffle(&mut ctx.main_rng);
        let (mut ds_sum, mut df_sum, mut g_sum) = (0.0, 0.0, 0.0);
        for step in 0..steps_per_epoch {
            let idx = &order[step * effective_batch..(step + 1) * effective_batch];
            for _ in 0..n_critic {
                ds_sum += ctx.d_spatial_step(idx, epoch, step)?;
                if ctx.config.spectral {
                    df_sum += ctx.d_freq_step(idx, epoch, step)?;
                }
            }
            g_sum += ctx.generator_step(idx.len(), epoch, step)?;
        }

        // Epoch evaluation on the private eval stream.
        let z = normal_tensor(&mut ctx.eval_rng, effective_batch, config.latent_dim);
        let mut tape = Tape::new();
        let params = ctx.generator.push_params(&mut tape, false);
        let zc = tape.constant(z);
        let fake = ctx.generator.forward(&mut tape, zc, &params);
        let fake01 = map_to_01(&mut tape, fake);
        let gen_images = rows_to_images(tape.value(fake01), n);
        let gen_profiles = corpus_profiles(&gen_images, ProfileMode::Binned)?;
        let sd = spectral_difference(&real_profiles, &gen_profiles, SdScale::Log1p)?;
        let cs_quick = evaluate_cs(&real_profiles, &gen_profiles, CS_QUICK_EPOCHS, 0.1, cs_seed)?
            .cs;
        if !sd.is_finite() {
            return Err(TrainError::NonFinite {
                epoch,
                step: steps_per_epoch,
                context: "epoch spectral difference".to_string(),
            });
        }

        let denom = (steps_per_epoch * n_critic) as f64;
        log.epochs.push(EpochStats {
            epoch,
            sd,
            cs_quick,
            d_s_loss: ds_sum / denom,
            d_f_loss: config.spectral.then(|| df_sum / denom),
            g_loss: g_sum / steps_per_epoch as f64,
        });
    }

    Ok(TrainOutcome {
        log,
        generator: ctx.generator,
        d_spatial: ctx.d_spatial,
        d_freq: ctx.d_freq,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imagecore::{synth_corpus, CorpusKind};
    use crate::spectrum::azimuthal_integral;

    fn small_corpus(count: usize, n: usize, seed: u64) -> Vec<Image> {
        let dir = tempfile::tempdir().unwrap();
        let manifest = synth_corpus(CorpusKind::BimodalNoise, count, n, seed, dir.path()).unwrap();
        manifest
            .load_images(dir.path())
            .unwrap()
            .into_iter()
            .map(|(img, _)| img)
            .collect()
    }

    #[test]
    fn head_trainable_param_count_is_profile_len_plus_one() {
        for n in [8usize, 16, 32] {
            let head = SpectralHead::new(n, DfScale::Log1p);
            assert_eq!(head.trainable_param_count(), profile_len(n) + 1);
        }
    }

    #[test]
    fn zero_head_scores_half_on_any_image() {
        let head = SpectralHead::new(8, DfScale::Log1p);
        let mut tape = Tape::new();
        let imgs = tape.constant(Tensor::zeros(3, 64));
        let s = spectral_forward(&head, &mut tape, imgs, true);
        assert!(tape.value(s).data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn head_profile_matches_reference_azimuthal_integral() {
        let mut rng = ChaCha8Rng::seed_from_u64(61);
        for n in [8usize, 16] {
            let head = SpectralHead::new(n, DfScale::Log1p);
            for _ in 0..10 {
                let pixels: Vec<f64> = (0..n * n).map(|_| rng.gen()).collect();
                let img = Image::new(n, n, pixels.clone()).unwrap();
                let want = azimuthal_integral(&img, ProfileMode::Binned).unwrap();
                let mut tape = Tape::new();
                let x = tape.constant(Tensor::new(1, n * n, pixels));
                let profile = head.forward_profile(&mut tape, x);
                let got = tape.value(profile);
                let scale = want
                    .values()
                    .iter()
                    .fold(0.0f64, |a, &v| a.max(v))
                    .max(1e-300);
                for (g, w) in got.data().iter().zip(want.values()) {
                    assert!((g - w).abs() <= 1e-9 * scale, "n={}: {} vs {}", n, g, w);
                }
            }
        }
    }

    #[test]
    fn head_pixel_gradient_matches_finite_differences() {
        let n = 8;
        let mut head = SpectralHead::new(n, DfScale::Log1p);
        let mut rng = ChaCha8Rng::seed_from_u64(62);
        // Non-zero head parameters so the gradient is non-trivial.
        let w = Tensor::new(
            profile_len(n),
            1,
            (0..profile_len(n)).map(|_| rng.gen::<f64>() - 0.5).collect(),
        );
        head.set_trainable_params(w, Tensor::scalar(0.1));
        let pixels: Vec<f64> = (0..n * n).map(|_| rng.gen()).collect();

        let score = |px: &[f64]| -> f64 {
            let mut tape = Tape::new();
            let x = tape.constant(Tensor::new(1, n * n, px.to_vec()));
            let s = spectral_forward(&head, &mut tape, x, true);
            tape.scalar(s)
        };
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::new(1, n * n, pixels.clone()));
        let s = spectral_forward(&head, &mut tape, x, true);
        let gid = tape.backward_graph(s, &[x]).unwrap()[0];
        let got = tape.value(gid).clone();

        let h = 1e-5;
        for i in (0..n * n).step_by(7) {
            let mut plus = pixels.clone();
            plus[i] += h;
            let mut minus = pixels.clone();
            minus[i] -= h;
            let fd = (score(&plus) - score(&minus)) / (2.0 * h);
            let g = got.data()[i];
            let rel = (g - fd).abs() / g.abs().max(fd.abs()).max(1e-4);
            assert!(rel < 1e-4, "pixel {}: {} vs {}", i, g, fd);
        }
    }

    #[test]
    fn dcgan_loss_is_near_zero_for_a_perfect_discriminator() {
        let mut tape = Tape::new();
        let real = tape.constant(Tensor::new(4, 1, vec![1.0 - 1e-9; 4]));
        let fake = tape.constant(Tensor::new(4, 1, vec![1e-9; 4]));
        let loss = discriminator_loss(&mut tape, LossKind::Dcgan, real, fake, None).unwrap();
        assert!(tape.scalar(loss).abs() < 1e-6);
    }

    #[test]
    fn wgan_loss_is_zero_for_equal_score_distributions() {
        let mut tape = Tape::new();
        let scores = Tensor::new(8, 1, vec![0.37; 8]);
        let real = tape.constant(scores.clone());
        let fake = tape.constant(scores);
        let loss = discriminator_loss(&mut tape, LossKind::Wgan, real, fake, None).unwrap();
        assert_eq!(tape.scalar(loss), 0.0);
    }

    #[test]
    fn gp_vanishes_for_unit_norm_linear_discriminator() {
        // D(x) = w·x with ||w|| = 1: the input gradient is w for any
        // interpolation, so the penalty is 0.
        let dim = 4;
        let w_data = vec![0.5; dim]; // norm = 1
        let mut tape = Tape::new();
        let w = tape.constant(Tensor::new(dim, 1, w_data));
        let interp = tape.leaf(Tensor::new(3, dim, vec![0.2; 12]));
        let scores = tape.matmul(interp, w);
        let real = tape.constant(Tensor::new(3, 1, vec![0.9; 3]));
        let fake = tape.constant(Tensor::new(3, 1, vec![0.9; 3]));
        let gp = GpInputs {
            interp_input: interp,
            interp_scores: scores,
            lambda: 10.0,
        };
        let loss = discriminator_loss(&mut tape, LossKind::WganGp, real, fake, Some(gp)).unwrap();
        // Base wgan term is 0 (equal scores); only the penalty remains.
        assert!(tape.scalar(loss).abs() < 1e-10);
    }

    #[test]
    fn gp_inputs_must_match_loss_kind() {
        let mut tape = Tape::new();
        let s = tape.constant(Tensor::new(2, 1, vec![0.5; 2]));
        assert!(matches!(
            discriminator_loss(&mut tape, LossKind::WganGp, s, s, None),
            Err(TrainError::GpInputsMismatch)
        ));
        let interp = tape.leaf(Tensor::new(2, 2, vec![0.1; 4]));
        let gp = GpInputs {
            interp_input: interp,
            interp_scores: s,
            lambda: 1.0,
        };
        assert!(matches!(
            discriminator_loss(&mut tape, LossKind::Dcgan, s, s, Some(gp)),
            Err(TrainError::GpInputsMismatch)
        ));
    }

    #[test]
    fn generator_loss_without_spectral_is_the_spatial_branch() {
        let mut tape = Tape::new();
        let fake = tape.constant(Tensor::new(4, 1, vec![0.5; 4]));
        let spatial = generator_loss(&mut tape, LossKind::Dcgan, fake);
        let combined = combined_generator_loss(&mut tape, spatial, None);
        assert_eq!(spatial, combined);
        // At D(x̂) = 0.5 the non-saturating loss is ln 2 per sample.
        assert!((tape.scalar(combined) - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn equal_branches_average_to_themselves() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::scalar(0.8));
        let b = tape.constant(Tensor::scalar(0.8));
        let combined = combined_generator_loss(&mut tape, a, Some(b));
        assert!((tape.scalar(combined) - 0.8).abs() < 1e-15);
    }

    #[test]
    fn zero_weight_generator_emits_zero_images() {
        let mut rng = ChaCha8Rng::seed_from_u64(63);
        let mut g = MlpNet::new(
            &[4, 8, 16],
            &[Activation::LeakyRelu, Activation::Tanh],
            &mut rng,
        );
        for t in g.params_mut() {
            for v in t.data_mut() {
                *v = 0.0;
            }
        }
        let imgs = generate_images(&g, 3, 4, 9);
        // tanh(0) = 0 maps to pixel 0.5.
        for img in imgs {
            assert!(img.pixels().iter().all(|&p| (p - 0.5).abs() < 1e-15));
        }
    }

    #[test]
    fn generator_batches_are_seed_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(64);
        let g = MlpNet::new(
            &[4, 8, 16],
            &[Activation::LeakyRelu, Activation::Tanh],
            &mut rng,
        );
        let a = generate_images(&g, 5, 4, 11);
        let b = generate_images(&g, 5, 4, 11);
        assert_eq!(a, b);
        assert_eq!(a.len(), 5);
        assert!(a.iter().all(|img| img.height() == 4 && img.width() == 4));
    }

    #[test]
    fn zero_epochs_returns_untrained_generator_and_empty_log() {
        let images = small_corpus(8, 8, 100);
        let mut config = TrainConfig::new(LossKind::Dcgan, true, 0, 8, 5);
        config.batch = 4;
        let out1 = train_on_images(&config, &images).unwrap();
        let out2 = train_on_images(&config, &images).unwrap();
        assert!(out1.log.epochs.is_empty());
        assert_eq!(out1.generator, out2.generator);
    }

    #[test]
    fn training_is_deterministic_given_seed() {
        let images = small_corpus(16, 8, 101);
        for loss in [LossKind::Dcgan, LossKind::Lsgan] {
            let mut config = TrainConfig::new(loss, true, 2, 8, 6);
            config.batch = 8;
            let a = train_on_images(&config, &images).unwrap();
            let b = train_on_images(&config, &images).unwrap();
            assert_eq!(a.log, b.log, "loss {:?}", loss);
            assert_eq!(a.generator, b.generator);
        }
    }

    #[test]
    fn spectral_branch_stream_is_independent() {
        let images = small_corpus(16, 8, 102);
        // With the branch off, its salt must change nothing.
        let mut off_a = TrainConfig::new(LossKind::Dcgan, false, 2, 8, 7);
        off_a.batch = 8;
        let mut off_b = off_a.clone();
        off_b.df_stream_salt = 999;
        let a = train_on_images(&off_a, &images).unwrap();
        let b = train_on_images(&off_b, &images).unwrap();
        assert_eq!(a.log, b.log);
        assert_eq!(a.generator, b.generator);
        // With the branch on, the salt reaches the spectral stream.
        let mut on_a = off_a.clone();
        on_a.spectral = true;
        let mut on_b = on_a.clone();
        on_b.df_stream_salt = 999;
        let a = train_on_images(&on_a, &images).unwrap();
        let b = train_on_images(&on_b, &images).unwrap();
        assert_ne!(a.log, b.log);
    }

    #[test]
    fn all_losses_run_a_few_epochs_without_blowup() {
        let images = small_corpus(16, 8, 103);
        for loss in [
            LossKind::Dcgan,
            LossKind::Lsgan,
            LossKind::Wgan,
            LossKind::WganGp,
        ] {
            let mut config = TrainConfig::new(loss, true, 2, 8, 8);
            config.batch = 8;
            let out = train_on_images(&config, &images).unwrap();
            assert_eq!(out.log.epochs.len(), 2, "loss {:?}", loss);
            for row in &out.log.epochs {
                assert!(row.sd.is_finite());
                assert!(row.g_loss.is_finite());
                assert!(row.d_s_loss.is_finite());
                assert!(row.d_f_loss.unwrap().is_finite());
            }
        }
    }

    #[test]
    fn mismatched_image_size_is_rejected() {
        let images = small_corpus(4, 8, 104);
        let config = TrainConfig::new(LossKind::Dcgan, false, 1, 16, 9);
        assert!(matches!(
            train_on_images(&config, &images).unwrap_err(),
            TrainError::ImageSizeMismatch { expected: 16, .. }
        ));
    }

    #[test]
    fn model_artifact_round_trips_through_json() {
        let images = small_corpus(8, 8, 105);
        let mut config = TrainConfig::new(LossKind::Dcgan, true, 1, 8, 10);
        config.batch = 4;
        let out = train_on_images(&config, &images).unwrap();
        let artifact = ModelArtifact::from(&out);
        let json = serde_json::to_string(&artifact).unwrap();
        let back: ModelArtifact = serde_json::from_str(&json).unwrap();
        assert_eq!(back.generator, out.generator);
        assert_eq!(
            back.d_freq.as_ref().unwrap().weights,
            *out.d_freq.as_ref().unwrap().trainable_params().0
        );
    }
}
