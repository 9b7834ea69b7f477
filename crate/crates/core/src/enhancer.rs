//! Speaker-conditioned enhancer network, its supervision targets and losses.
//!
//! Layout: dense 128 (tanh) → causal conv k5 → causal conv k3 → concat
//! speaker embedding → GRU stack → heads. The gain head reads the last GRU,
//! the strength head reads the last GRU concatenated with the predicted
//! gains, and the VAD head reads the first GRU.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::comb::EnhancerOutputs;
use crate::config::KeyValues;
use crate::dsp::{FrameAnalysis, FrameFeatures};
use crate::embedder::SpeakerEmbedding;
use crate::error::{Error, Result};
use crate::neural::{
    feature_tensor, Activation, Adam, Cache, Layer, LayerKind, Real, RecordKind, Sequential, StepState,
    Tensor2D, WeightFile,
};
use crate::{LOOKAHEAD_FRAMES, NB_BANDS, NB_FEATURES};

/// Exponent applied to gains inside the gain loss.
pub const GAIN_GAMMA: f64 = 0.5;
/// Weight of the VAD loss relative to the gain/strength loss.
pub const VAD_WEIGHT: f64 = 1.0;
/// Probability clamp inside the binary cross-entropy.
pub const BCE_CLAMP: f64 = 1e-7;
/// A frame is target-active when its energy is within this many dB of the utterance peak.
pub const VAD_RANGE_DB: f64 = 40.0;

/// Network widths.
#[derive(Debug, Clone, PartialEq)]
pub struct EnhancerConfig {
    pub preset: String,
    pub dense_units: usize,
    pub conv1_channels: usize,
    pub conv1_kernel: usize,
    pub conv2_channels: usize,
    pub conv2_kernel: usize,
    pub gru_units: usize,
    pub gru_layers: usize,
    pub embedding_dim: usize,
    /// Frames between the newest input and the frame an output applies to.
    pub lookahead_frames: usize,
}

const CONFIG_KEYS: [&str; 10] = [
    "preset",
    "dense_units",
    "conv1_channels",
    "conv1_kernel",
    "conv2_channels",
    "conv2_kernel",
    "gru_units",
    "gru_layers",
    "embedding_dim",
    "lookahead_frames",
];

impl EnhancerConfig {
    fn large(name: &str, gru_units: usize) -> Self {
        Self {
            preset: name.into(),
            dense_units: 128,
            conv1_channels: 512,
            conv1_kernel: 5,
            conv2_channels: 512,
            conv2_kernel: 3,
            gru_units,
            gru_layers: 4,
            embedding_dim: 128,
            lookahead_frames: LOOKAHEAD_FRAMES,
        }
    }

    pub fn ppn512() -> Self {
        Self::large("ppn512", 512)
    }

    pub fn ppn1024() -> Self {
        Self::large("ppn1024", 1024)
    }

    /// Desk-scale model with `gru_units` recurrent units.
    pub fn toy(gru_units: usize) -> Self {
        Self {
            preset: "toy".into(),
            dense_units: 32,
            conv1_channels: 64,
            conv1_kernel: 5,
            conv2_channels: 64,
            conv2_kernel: 3,
            gru_units,
            gru_layers: 2,
            embedding_dim: 32,
            lookahead_frames: LOOKAHEAD_FRAMES,
        }
    }

    /// `ppn512`, `ppn1024` or `toy` (64 GRU units).
    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "ppn512" => Ok(Self::ppn512()),
            "ppn1024" => Ok(Self::ppn1024()),
            "toy" => Ok(Self::toy(64)),
            other => Err(Error::Config(format!("unknown preset '{other}'"))),
        }
    }

    pub fn to_key_values(&self) -> KeyValues {
        let mut kv = KeyValues::default();
        kv.set("preset", &self.preset);
        kv.set("dense_units", self.dense_units);
        kv.set("conv1_channels", self.conv1_channels);
        kv.set("conv1_kernel", self.conv1_kernel);
        kv.set("conv2_channels", self.conv2_channels);
        kv.set("conv2_kernel", self.conv2_kernel);
        kv.set("gru_units", self.gru_units);
        kv.set("gru_layers", self.gru_layers);
        kv.set("embedding_dim", self.embedding_dim);
        kv.set("lookahead_frames", self.lookahead_frames);
        kv
    }

    /// Starts from the named preset (default `toy`) and applies the other keys as overrides.
    pub fn from_key_values(kv: &KeyValues) -> Result<Self> {
        kv.reject_unknown(&CONFIG_KEYS)?;
        let mut c = Self::preset(kv.get_str("preset").unwrap_or("toy"))?;
        let fields: [(&str, &mut usize); 9] = [
            ("dense_units", &mut c.dense_units),
            ("conv1_channels", &mut c.conv1_channels),
            ("conv1_kernel", &mut c.conv1_kernel),
            ("conv2_channels", &mut c.conv2_channels),
            ("conv2_kernel", &mut c.conv2_kernel),
            ("gru_units", &mut c.gru_units),
            ("gru_layers", &mut c.gru_layers),
            ("embedding_dim", &mut c.embedding_dim),
            ("lookahead_frames", &mut c.lookahead_frames),
        ];
        for (key, slot) in fields {
            if let Some(v) = kv.get::<usize>(key)? {
                *slot = v;
            }
        }
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        let sizes = [
            self.dense_units,
            self.conv1_channels,
            self.conv1_kernel,
            self.conv2_channels,
            self.conv2_kernel,
            self.gru_units,
            self.gru_layers,
            self.embedding_dim,
        ];
        if sizes.contains(&0) {
            return Err(Error::Config("enhancer sizes must be positive".into()));
        }
        if self.preset == "ppn512" && self.gru_units != 512 || self.preset == "ppn1024" && self.gru_units != 1024 {
            return Err(Error::Config(format!(
                "preset {} requires its own GRU width, got {}",
                self.preset, self.gru_units
            )));
        }
        if self.lookahead_frames > 8 {
            return Err(Error::Config("look-ahead above 80 ms is not supported".into()));
        }
        Ok(())
    }

    /// Layer shapes in storage order: front (3), GRUs, gain, strength and VAD heads.
    pub fn layer_kinds(&self) -> Result<Vec<LayerKind>> {
        self.validate()?;
        let mut kinds = vec![
            LayerKind::Dense {
                inputs: NB_FEATURES,
                outputs: self.dense_units,
                activation: Activation::Tanh,
            },
            LayerKind::Conv1d {
                inputs: self.dense_units,
                outputs: self.conv1_channels,
                kernel: self.conv1_kernel,
                activation: Activation::Tanh,
            },
            LayerKind::Conv1d {
                inputs: self.conv1_channels,
                outputs: self.conv2_channels,
                kernel: self.conv2_kernel,
                activation: Activation::Tanh,
            },
        ];
        for i in 0..self.gru_layers {
            kinds.push(LayerKind::Gru {
                inputs: if i == 0 {
                    self.conv2_channels + self.embedding_dim
                } else {
                    self.gru_units
                },
                hidden: self.gru_units,
            });
        }
        kinds.push(LayerKind::Dense {
            inputs: self.gru_units,
            outputs: NB_BANDS,
            activation: Activation::Sigmoid,
        });
        kinds.push(LayerKind::Dense {
            inputs: self.gru_units + NB_BANDS,
            outputs: NB_BANDS,
            activation: Activation::Sigmoid,
        });
        kinds.push(LayerKind::Dense {
            inputs: self.gru_units,
            outputs: 1,
            activation: Activation::Sigmoid,
        });
        Ok(kinds)
    }

    pub fn param_count(&self) -> Result<usize> {
        Ok(self.layer_kinds()?.iter().map(LayerKind::param_count).sum())
    }
}

/// Per-frame training targets, aligned with the mixture's frames.
#[derive(Debug, Clone, PartialEq)]
pub struct SupervisionTargets {
    pub gains: Vec<[f32; NB_BANDS]>,
    pub strengths: Vec<[f32; NB_BANDS]>,
    pub vad: Vec<f32>,
}

impl SupervisionTargets {
    pub fn len(&self) -> usize {
        self.vad.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vad.is_empty()
    }

    /// Targets as enhancer outputs, one per frame.
    pub fn as_outputs(&self) -> Vec<EnhancerOutputs> {
        (0..self.len())
            .map(|t| EnhancerOutputs {
                gains: self.gains[t],
                strengths: self.strengths[t],
                vad: self.vad[t],
            })
            .collect()
    }
}

/// `g[b] = min(1, sqrt(clean[b] / max(noisy[b], 1e-12)))`.
pub fn compute_target_gains(clean: &[f32; NB_BANDS], noisy: &[f32; NB_BANDS]) -> [f32; NB_BANDS] {
    let mut g = [0.0; NB_BANDS];
    for b in 0..NB_BANDS {
        let ratio = clean[b].max(0.0) as f64 / (noisy[b] as f64).max(1e-12);
        g[b] = ratio.sqrt().min(1.0) as f32;
    }
    g
}

/// Gains from clean/noisy band energies, strengths from the clean frame's
/// pitch coherence, VAD from the clean frame energy relative to its peak.
pub fn supervision_targets(clean: &[FrameAnalysis], noisy: &[FrameAnalysis]) -> Result<SupervisionTargets> {
    if clean.len() != noisy.len() {
        return Err(Error::shape(format!(
            "{} clean frames against {} noisy frames",
            clean.len(),
            noisy.len()
        )));
    }
    let energy: Vec<f64> = clean
        .iter()
        .map(|a| a.band_energy.iter().map(|&e| e as f64).sum())
        .collect();
    let peak = energy.iter().cloned().fold(0.0, f64::max);
    let floor = peak * 10f64.powf(-VAD_RANGE_DB / 10.0);
    Ok(SupervisionTargets {
        gains: clean
            .iter()
            .zip(noisy)
            .map(|(c, n)| compute_target_gains(&c.band_energy, &n.band_energy))
            .collect(),
        strengths: clean.iter().map(|c| c.coherence).collect(),
        vad: energy
            .iter()
            .map(|&e| if peak > 0.0 && e > floor { 1.0 } else { 0.0 })
            .collect(),
    })
}

/// Gain/strength loss of one frame and its gradients with respect to the predictions:
/// `Σ_b (g^γ - ĝ^γ)² + Σ_b (r - r̂)²`.
pub fn gain_strength_loss<T: Real>(
    pred_gains: &[T],
    pred_strengths: &[T],
    gains: &[f32],
    strengths: &[f32],
    d_gains: &mut [T],
    d_strengths: &mut [T],
) -> f64 {
    let mut loss = 0.0;
    for b in 0..pred_gains.len() {
        let p = pred_gains[b].as_f64().max(0.0);
        let diff = (gains[b].max(0.0) as f64).powf(GAIN_GAMMA) - p.powf(GAIN_GAMMA);
        loss += diff * diff;
        // The derivative of p^γ is unbounded at 0; it is evaluated at a floor.
        d_gains[b] = T::of(-2.0 * diff * GAIN_GAMMA * p.max(BCE_CLAMP).powf(GAIN_GAMMA - 1.0));
    }
    for b in 0..pred_strengths.len() {
        let diff = pred_strengths[b].as_f64() - strengths[b] as f64;
        loss += diff * diff;
        d_strengths[b] = T::of(2.0 * diff);
    }
    loss
}

/// Mean binary cross-entropy over frames, with predictions clamped to
/// `[1e-7, 1 - 1e-7]`; returns the loss and per-frame gradients.
pub fn vad_loss(pred: &[f64], labels: &[f32]) -> Result<(f64, Vec<f64>)> {
    if pred.len() != labels.len() || pred.is_empty() {
        return Err(Error::shape("VAD predictions and labels must be non-empty and aligned"));
    }
    let n = pred.len() as f64;
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(pred.len());
    for (&p, &y) in pred.iter().zip(labels) {
        let y = y as f64;
        let pc = p.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
        loss -= y * pc.ln() + (1.0 - y) * (1.0 - pc).ln();
        grad.push(if p == pc { (-y / pc + (1.0 - y) / (1.0 - pc)) / n } else { 0.0 });
    }
    Ok((loss / n, grad))
}

/// Enhancer weights; `T` is `f64` for training and `f32` for inference.
#[derive(Debug, Clone)]
pub struct Enhancer<T> {
    config: EnhancerConfig,
    front: Sequential<T>,
    grus: Vec<Layer<T>>,
    gain_head: Layer<T>,
    strength_head: Layer<T>,
    vad_head: Layer<T>,
}

/// Sequence outputs of a training forward pass.
pub struct EnhancerTrace<T> {
    front: Vec<Cache<T>>,
    grus: Vec<Cache<T>>,
    gain_cache: Cache<T>,
    strength_cache: Cache<T>,
    vad_cache: Cache<T>,
    conv_width: usize,
    pub gains: Tensor2D<T>,
    pub strengths: Tensor2D<T>,
    pub vad: Tensor2D<T>,
}

/// Parameter gradients in storage order.
pub type EnhancerGradients<T> = Vec<Vec<T>>;

fn dense_output<T: Real>(cache: &Cache<T>) -> Tensor2D<T> {
    match cache {
        Cache::Dense { y, .. } => y.clone(),
        _ => unreachable!("head layers are dense"),
    }
}

impl<T: Real> Enhancer<T> {
    /// Xavier-initialized model (`build_model`).
    pub fn new(config: EnhancerConfig, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = config
            .layer_kinds()?
            .into_iter()
            .map(|k| Layer::xavier(k, &mut rng))
            .collect();
        Self::from_layers(config, layers)
    }

    /// All-zero weights: every output is exactly 0.5.
    pub fn zeros(config: EnhancerConfig) -> Result<Self> {
        let layers = config.layer_kinds()?.into_iter().map(Layer::zeros).collect();
        Self::from_layers(config, layers)
    }

    fn from_layers(config: EnhancerConfig, mut layers: Vec<Layer<T>>) -> Result<Self> {
        let kinds: Vec<LayerKind> = layers.iter().map(|l| l.kind()).collect();
        if kinds != config.layer_kinds()? {
            return Err(Error::Format("enhancer layers do not match the configuration".into()));
        }
        let vad_head = layers.pop().expect("layer count");
        let strength_head = layers.pop().expect("layer count");
        let gain_head = layers.pop().expect("layer count");
        let grus = layers.split_off(3);
        Ok(Self {
            config,
            front: Sequential::new(layers)?,
            grus,
            gain_head,
            strength_head,
            vad_head,
        })
    }

    pub fn config(&self) -> &EnhancerConfig {
        &self.config
    }

    pub fn param_count(&self) -> usize {
        self.layers().iter().map(|l| l.param_count()).sum()
    }

    /// Layers in storage order.
    pub fn layers(&self) -> Vec<&Layer<T>> {
        let mut v: Vec<&Layer<T>> = self.front.layers().iter().collect();
        v.extend(self.grus.iter());
        v.extend([&self.gain_head, &self.strength_head, &self.vad_head]);
        v
    }

    pub fn layers_mut(&mut self) -> Vec<&mut Layer<T>> {
        let mut v: Vec<&mut Layer<T>> = self.front.layers_mut().iter_mut().collect();
        v.extend(self.grus.iter_mut());
        v.extend([&mut self.gain_head, &mut self.strength_head, &mut self.vad_head]);
        v
    }

    pub fn cast<U: Real>(&self) -> Enhancer<U> {
        Enhancer {
            config: self.config.clone(),
            front: self.front.cast(),
            grus: self.grus.iter().map(Layer::cast).collect(),
            gain_head: self.gain_head.cast(),
            strength_head: self.strength_head.cast(),
            vad_head: self.vad_head.cast(),
        }
    }

    /// Unit-norm embeddings enter the network scaled to unit RMS per element,
    /// on par with the tanh conv outputs they are concatenated with.
    fn embedding_scale(&self) -> f64 {
        (self.config.embedding_dim as f64).sqrt()
    }

    fn check_embedding(&self, embedding: &[f32]) -> Result<()> {
        if embedding.len() != self.config.embedding_dim {
            return Err(Error::shape(format!(
                "embedding has dimension {}, the model expects {}",
                embedding.len(),
                self.config.embedding_dim
            )));
        }
        Ok(())
    }

    /// Training forward pass over a `T × 68` input tensor.
    pub fn forward_trace(&self, x: &Tensor2D<T>, embedding: &[f32]) -> Result<EnhancerTrace<T>> {
        self.check_embedding(embedding)?;
        let (conv, front) = self.front.forward_record(x)?;
        let scale = self.embedding_scale();
        let emb: Vec<T> = embedding.iter().map(|&v| T::of(v as f64 * scale)).collect();
        let mut cur = Tensor2D::zeros(x.rows(), conv.cols() + emb.len());
        for t in 0..x.rows() {
            let row = cur.row_mut(t);
            row[..conv.cols()].copy_from_slice(conv.row(t));
            row[conv.cols()..].copy_from_slice(&emb);
        }
        let mut grus = Vec::with_capacity(self.grus.len());
        let mut first = None;
        for layer in &self.grus {
            let cache = layer.forward_train(&cur)?;
            cur = crate::neural::sequential::output_of(&cache);
            if first.is_none() {
                first = Some(cur.clone());
            }
            grus.push(cache);
        }
        let gain_cache = self.gain_head.forward_train(&cur)?;
        let gains = dense_output(&gain_cache);
        let strength_cache = self.strength_head.forward_train(&Tensor2D::concat_cols(&cur, &gains)?)?;
        let vad_cache = self.vad_head.forward_train(first.as_ref().expect("at least one GRU"))?;
        Ok(EnhancerTrace {
            strengths: dense_output(&strength_cache),
            vad: dense_output(&vad_cache),
            gains,
            front,
            grus,
            gain_cache,
            strength_cache,
            vad_cache,
            conv_width: conv.cols(),
        })
    }

    pub fn zero_gradients(&self) -> EnhancerGradients<T> {
        self.layers().iter().map(|l| vec![T::zero(); l.param_count()]).collect()
    }

    /// Accumulates parameter gradients given the gradients of the three outputs.
    pub fn backward_trace(
        &self,
        trace: &EnhancerTrace<T>,
        d_gains: &Tensor2D<T>,
        d_strengths: &Tensor2D<T>,
        d_vad: &Tensor2D<T>,
        grads: &mut EnhancerGradients<T>,
    ) -> Result<()> {
        let n_front = self.front.layers().len();
        let n_gru = self.grus.len();
        let (front_g, rest) = grads.split_at_mut(n_front);
        let (gru_g, head_g) = rest.split_at_mut(n_gru);
        let d_cat = self.strength_head.backward(&trace.strength_cache, d_strengths, &mut head_g[1])?;
        let (mut d_h, d_g_extra) = d_cat.split_cols(self.config.gru_units);
        let mut d_g = d_gains.clone();
        d_g.add_assign(&d_g_extra);
        d_h.add_assign(&self.gain_head.backward(&trace.gain_cache, &d_g, &mut head_g[0])?);
        let d_first = self.vad_head.backward(&trace.vad_cache, d_vad, &mut head_g[2])?;
        for i in (0..n_gru).rev() {
            if i == 0 {
                d_h.add_assign(&d_first);
            }
            d_h = self.grus[i].backward(&trace.grus[i], &d_h, &mut gru_g[i])?;
        }
        let (d_conv, _) = d_h.split_cols(trace.conv_width);
        let mut front_grads: Vec<Vec<T>> = front_g.iter_mut().map(std::mem::take).collect();
        let res = self.front.backward_record(&trace.front, &d_conv, &mut front_grads);
        for (slot, g) in front_g.iter_mut().zip(front_grads) {
            *slot = g;
        }
        res.map(|_| ())
    }

    /// Outputs for a whole feature sequence. Output `t` is computed from
    /// features `0..=t`; with look-ahead it applies to frame `t - lookahead`.
    pub fn forward(&self, features: &[FrameFeatures], embedding: &SpeakerEmbedding) -> Result<Vec<EnhancerOutputs>> {
        let trace = self.forward_trace(&feature_tensor::<T>(features), embedding.values())?;
        Ok((0..features.len())
            .map(|t| {
                let mut o = EnhancerOutputs::IDENTITY;
                for b in 0..NB_BANDS {
                    o.gains[b] = trace.gains.row(t)[b].as_f64() as f32;
                    o.strengths[b] = trace.strengths.row(t)[b].as_f64() as f32;
                }
                o.vad = trace.vad.row(t)[0].as_f64() as f32;
                o
            })
            .collect())
    }
}

impl Enhancer<f32> {
    pub fn to_weight_file(&self) -> WeightFile {
        let layers: Vec<Layer<f32>> = self.layers().into_iter().cloned().collect();
        WeightFile::new(RecordKind::Enhancer, self.config.to_key_values(), &layers)
    }

    pub fn from_weight_file(file: &WeightFile) -> Result<Self> {
        file.expect_kind(RecordKind::Enhancer)?;
        let config = EnhancerConfig::from_key_values(&file.meta)?;
        Self::from_layers(config, file.layers.clone())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_weight_file().save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_weight_file(&WeightFile::load(path)?)
    }

    /// Fresh per-stream state for [`Enhancer::step`].
    pub fn new_state(&self) -> EnhancerState {
        let c = &self.config;
        EnhancerState {
            front: self.front.layers().iter().map(|l| l.new_state()).collect(),
            grus: self.grus.iter().map(|l| l.new_state()).collect(),
            input: vec![0.0; NB_FEATURES],
            dense: vec![0.0; c.dense_units],
            conv1: vec![0.0; c.conv1_channels],
            cat: vec![0.0; c.conv2_channels + c.embedding_dim],
            hidden: vec![vec![0.0; c.gru_units]; c.gru_layers],
            strength_in: vec![0.0; c.gru_units + NB_BANDS],
            vad: [0.0],
        }
    }

    /// Sets the conditioning embedding for subsequent steps.
    pub fn condition(&self, state: &mut EnhancerState, embedding: &SpeakerEmbedding) -> Result<()> {
        self.check_embedding(embedding.values())?;
        let scale = self.embedding_scale() as f32;
        for (dst, &v) in state.cat[self.config.conv2_channels..].iter_mut().zip(embedding.values()) {
            *dst = v * scale;
        }
        Ok(())
    }

    /// One frame of streaming inference. Does not allocate.
    pub fn step(&self, state: &mut EnhancerState, features: &FrameFeatures, out: &mut EnhancerOutputs) {
        features.network_input(&mut state.input);
        let front = self.front.layers();
        let conv2 = self.config.conv2_channels;
        front[0].step(&mut state.front[0], &state.input, &mut state.dense);
        front[1].step(&mut state.front[1], &state.dense, &mut state.conv1);
        front[2].step(&mut state.front[2], &state.conv1, &mut state.cat[..conv2]);
        for i in 0..self.grus.len() {
            let (before, after) = state.hidden.split_at_mut(i);
            let x: &[f32] = if i == 0 { &state.cat } else { &before[i - 1] };
            self.grus[i].step(&mut state.grus[i], x, &mut after[0]);
        }
        let n = self.config.gru_units;
        let last = &state.hidden[self.grus.len() - 1];
        self.gain_head.step(&mut StepState::Dense, last, &mut out.gains);
        state.strength_in[..n].copy_from_slice(last);
        state.strength_in[n..].copy_from_slice(&out.gains);
        self.strength_head.step(&mut StepState::Dense, &state.strength_in, &mut out.strengths);
        self.vad_head.step(&mut StepState::Dense, &state.hidden[0], &mut state.vad);
        out.vad = state.vad[0];
    }
}

/// Per-stream inference buffers of an [`Enhancer`].
#[derive(Debug, Clone)]
pub struct EnhancerState {
    front: Vec<StepState<f32>>,
    grus: Vec<StepState<f32>>,
    input: Vec<f32>,
    dense: Vec<f32>,
    conv1: Vec<f32>,
    cat: Vec<f32>,
    hidden: Vec<Vec<f32>>,
    strength_in: Vec<f32>,
    vad: [f32; 1],
}

impl EnhancerState {
    /// Clears recurrent and convolution history, keeping the embedding.
    pub fn reset(&mut self) {
        self.front.iter_mut().for_each(StepState::reset);
        self.grus.iter_mut().for_each(StepState::reset);
        self.hidden.iter_mut().for_each(|h| h.fill(0.0));
    }
}

/// One training sequence: mixture features, aligned targets and the
/// embedding of the speaker to extract.
#[derive(Debug, Clone)]
pub struct TrainingExample {
    pub features: Vec<FrameFeatures>,
    pub targets: SupervisionTargets,
    pub embedding: SpeakerEmbedding,
}

/// Schedule for [`train_enhancer`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnhancerTrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    /// Input frames per training crop.
    pub crop_frames: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// Examples come in groups of this many consecutive entries sharing the
    /// same input (e.g. one mixture conditioned on each of its talkers). A
    /// draw takes a whole group at one crop offset; `batch_size` counts draws.
    pub group_size: usize,
}

impl EnhancerTrainConfig {
    pub fn toy() -> Self {
        Self {
            steps: 500,
            batch_size: 8,
            crop_frames: 100,
            learning_rate: 2e-3,
            seed: 0,
            group_size: 1,
        }
    }

    /// Schedule for [`ToyRecipe::enhancer_data`](crate::corpus::ToyRecipe::enhancer_data),
    /// whose examples come in target/interferer pairs.
    pub fn personalization() -> Self {
        Self {
            steps: 2000,
            batch_size: 4,
            group_size: 2,
            ..Self::toy()
        }
    }
}

/// Per-step losses of a training run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossRecord {
    pub total: f64,
    pub gain_strength: f64,
    pub vad: f64,
}

#[derive(Debug, Clone)]
pub struct EnhancerTraining {
    pub enhancer: Enhancer<f32>,
    pub losses: Vec<LossRecord>,
}

/// Loss of one crop and the output gradients (`trace` outputs at step `s`
/// are scored against targets of frame `first_target + s - lookahead`).
fn crop_loss(
    trace: &EnhancerTrace<f64>,
    targets: &SupervisionTargets,
    first_target: usize,
    lookahead: usize,
) -> Result<(LossRecord, Tensor2D<f64>, Tensor2D<f64>, Tensor2D<f64>)> {
    let steps = trace.gains.rows();
    let scored = steps - lookahead;
    let mut dg = Tensor2D::zeros(steps, NB_BANDS);
    let mut dr = Tensor2D::zeros(steps, NB_BANDS);
    let mut dv = Tensor2D::zeros(steps, 1);
    let mut gs = 0.0;
    let mut vad_pred = Vec::with_capacity(scored);
    let mut vad_lab = Vec::with_capacity(scored);
    for s in lookahead..steps {
        let f = first_target + s - lookahead;
        let (mut g, mut r) = ([0.0; NB_BANDS], [0.0; NB_BANDS]);
        gs += gain_strength_loss(
            trace.gains.row(s),
            trace.strengths.row(s),
            &targets.gains[f],
            &targets.strengths[f],
            &mut g,
            &mut r,
        );
        for b in 0..NB_BANDS {
            dg.row_mut(s)[b] = g[b] / scored as f64;
            dr.row_mut(s)[b] = r[b] / scored as f64;
        }
        vad_pred.push(trace.vad.row(s)[0]);
        vad_lab.push(targets.vad[f]);
    }
    let (vl, vg) = vad_loss(&vad_pred, &vad_lab)?;
    for (i, g) in vg.iter().enumerate() {
        dv.row_mut(lookahead + i)[0] = VAD_WEIGHT * g;
    }
    let gs = gs / scored as f64;
    Ok((
        LossRecord {
            total: gs + VAD_WEIGHT * vl,
            gain_strength: gs,
            vad: vl,
        },
        dg,
        dr,
        dv,
    ))
}

/// Trains on random crops of `data`, minimizing gain/strength loss plus the
/// VAD cross-entropy. `init` continues from existing weights.
pub fn train_enhancer(
    config: EnhancerConfig,
    data: &[TrainingExample],
    schedule: &EnhancerTrainConfig,
    init: Option<&Enhancer<f32>>,
) -> Result<EnhancerTraining> {
    if data.is_empty() {
        return Err(Error::input("empty training set"));
    }
    let look = config.lookahead_frames;
    let crop = schedule.crop_frames;
    if crop <= look {
        return Err(Error::Config("training crop must exceed the look-ahead".into()));
    }
    for ex in data {
        if ex.features.len() != ex.targets.len() {
            return Err(Error::shape("features and targets differ in length"));
        }
        if ex.features.len() < crop {
            return Err(Error::input(format!(
                "example of {} frames is shorter than the {crop}-frame crop",
                ex.features.len()
            )));
        }
    }
    let group = schedule.group_size.max(1);
    if !data.len().is_multiple_of(group) {
        return Err(Error::Config(format!("{} examples do not split into groups of {group}", data.len())));
    }
    if data.chunks(group).any(|g| g.iter().any(|ex| ex.features != g[0].features)) {
        return Err(Error::input("examples within a group must share their features"));
    }
    let mut model: Enhancer<f64> = match init {
        Some(m) => {
            if m.config() != &config {
                return Err(Error::Config("initial weights use a different configuration".into()));
            }
            m.cast()
        }
        None => Enhancer::new(config, schedule.seed)?,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(schedule.seed ^ 0x7EA1);
    let mut opt = Adam::new(schedule.learning_rate);
    let mut losses = Vec::with_capacity(schedule.steps);
    for _ in 0..schedule.steps {
        let mut grads = model.zero_gradients();
        let mut record = LossRecord {
            total: 0.0,
            gain_strength: 0.0,
            vad: 0.0,
        };
        let batch = schedule.batch_size.max(1);
        let scale = 1.0 / (batch * group) as f64;
        for _ in 0..batch {
            let first = rng.gen_range(0..data.len() / group) * group;
            let start = rng.gen_range(0..=data[first].features.len() - crop);
            let x = feature_tensor::<f64>(&data[first].features[start..start + crop]);
            for ex in &data[first..first + group] {
                let trace = model.forward_trace(&x, ex.embedding.values())?;
                let (rec, mut dg, mut dr, mut dv) = crop_loss(&trace, &ex.targets, start, look)?;
                for t in [&mut dg, &mut dr, &mut dv] {
                    t.data_mut().iter_mut().for_each(|v| *v *= scale);
                }
                model.backward_trace(&trace, &dg, &dr, &dv, &mut grads)?;
                record.total += rec.total * scale;
                record.gain_strength += rec.gain_strength * scale;
                record.vad += rec.vad * scale;
            }
        }
        if !record.total.is_finite() {
            return Err(Error::Numeric("training loss diverged".into()));
        }
        let mut params: Vec<&mut [f64]> = model.layers_mut().into_iter().map(|l| l.params_mut()).collect();
        let g: Vec<&[f64]> = grads.iter().map(|g| g.as_slice()).collect();
        opt.update(&mut params, &g);
        losses.push(record);
    }
    Ok(EnhancerTraining {
        enhancer: model.cast(),
        losses,
    })
}
