//! Speaker embedder: feature sequence to unit-norm embedding, trained with
//! the softmax generalized end-to-end (GE2E) verification loss.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::KeyValues;
use crate::dsp::FrameFeatures;
use crate::error::{Error, Result};
use crate::eval::eer;
use crate::neural::{
    feature_tensor, Activation, Adam, Cache, Layer, LayerKind, Real, RecordKind, Sequential, Tensor2D,
    WeightFile,
};
use crate::NB_FEATURES;

/// Shortest sequence accepted by [`Embedder::embed`] (0.5 s).
pub const MIN_EMBED_FRAMES: usize = 50;
/// Enrollment crop length (6 s).
pub const ENROLL_CROP_FRAMES: usize = 600;

/// Unit-norm speaker embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct SpeakerEmbedding {
    values: Vec<f32>,
}

impl SpeakerEmbedding {
    /// Normalizes `values`; fails on empty, zero or non-finite vectors.
    pub fn new(values: Vec<f32>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::input("empty embedding"));
        }
        let norm = values.iter().map(|&v| v as f64 * v as f64).sum::<f64>().sqrt();
        if !norm.is_finite() || norm == 0.0 {
            return Err(Error::Numeric("embedding has zero or non-finite norm".into()));
        }
        Ok(Self {
            values: values.iter().map(|&v| (v as f64 / norm) as f32).collect(),
        })
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|&v| v as f64 * v as f64).sum::<f64>().sqrt()
    }

    /// Cosine similarity; both vectors are unit norm, so this is the dot product
    /// renormalized in f64 to absorb rounding.
    pub fn cosine(&self, other: &SpeakerEmbedding) -> Result<f64> {
        if self.dim() != other.dim() {
            return Err(Error::shape(format!(
                "embedding dimensions {} and {}",
                self.dim(),
                other.dim()
            )));
        }
        let dot: f64 = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(&a, &b)| a as f64 * b as f64)
            .sum();
        Ok((dot / (self.norm() * other.norm())).clamp(-1.0, 1.0))
    }

    /// Mean of several embeddings, renormalized.
    pub fn average(items: &[SpeakerEmbedding]) -> Result<Self> {
        let first = items.first().ok_or_else(|| Error::input("nothing to average"))?;
        let mut acc = vec![0.0f64; first.dim()];
        for e in items {
            if e.dim() != first.dim() {
                return Err(Error::shape("embeddings of different dimension"));
            }
            for (a, &v) in acc.iter_mut().zip(&e.values) {
                *a += v as f64;
            }
        }
        Self::new(acc.into_iter().map(|v| v as f32).collect())
    }

    pub fn to_weight_file(&self) -> WeightFile {
        let mut meta = KeyValues::default();
        meta.set("dim", self.dim());
        let mut file = WeightFile::new::<f32>(RecordKind::Embedding, meta, &[]);
        file.vector = self.values.clone();
        file
    }

    pub fn from_weight_file(file: &WeightFile) -> Result<Self> {
        file.expect_kind(RecordKind::Embedding)?;
        let e = Self::new(file.vector.clone())?;
        if (e.norm() - 1.0).abs() > 1e-5 || file.vector.iter().zip(&e.values).any(|(a, b)| (a - b).abs() > 1e-5) {
            return Err(Error::Format("stored embedding is not unit norm".into()));
        }
        Ok(Self {
            values: file.vector.clone(),
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_weight_file().save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_weight_file(&WeightFile::load(path)?)
    }
}

/// Embedder shape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EmbedderConfig {
    pub conv_channels: usize,
    pub conv_kernel: usize,
    pub gru_units: usize,
    pub dim: usize,
}

impl Default for EmbedderConfig {
    fn default() -> Self {
        Self {
            conv_channels: 128,
            conv_kernel: 3,
            gru_units: 256,
            dim: 128,
        }
    }
}

impl EmbedderConfig {
    /// Small network used for desk-scale training runs.
    pub fn toy() -> Self {
        Self {
            conv_channels: 32,
            conv_kernel: 3,
            gru_units: 64,
            dim: 32,
        }
    }

    pub fn to_key_values(self) -> KeyValues {
        let mut kv = KeyValues::default();
        kv.set("conv_channels", self.conv_channels);
        kv.set("conv_kernel", self.conv_kernel);
        kv.set("gru_units", self.gru_units);
        kv.set("dim", self.dim);
        kv
    }

    pub fn from_key_values(kv: &KeyValues) -> Result<Self> {
        Ok(Self {
            conv_channels: kv.require("conv_channels")?,
            conv_kernel: kv.require("conv_kernel")?,
            gru_units: kv.require("gru_units")?,
            dim: kv.require("dim")?,
        })
    }

    fn kinds(&self) -> Result<(Vec<LayerKind>, LayerKind)> {
        if self.conv_channels == 0 || self.conv_kernel == 0 || self.gru_units == 0 || self.dim == 0 {
            return Err(Error::Config("embedder sizes must be positive".into()));
        }
        let conv = |inputs| LayerKind::Conv1d {
            inputs,
            outputs: self.conv_channels,
            kernel: self.conv_kernel,
            activation: Activation::Tanh,
        };
        let body = vec![
            conv(NB_FEATURES),
            conv(self.conv_channels),
            LayerKind::Gru {
                inputs: self.conv_channels,
                hidden: self.gru_units,
            },
            LayerKind::Gru {
                inputs: self.gru_units,
                hidden: self.gru_units,
            },
        ];
        let head = LayerKind::Dense {
            inputs: self.gru_units,
            outputs: self.dim,
            activation: Activation::Linear,
        };
        Ok((body, head))
    }
}

/// Conv, conv, GRU, GRU; the last frame of the final GRU goes through a
/// linear projection and is L2-normalized.
#[derive(Debug, Clone)]
pub struct Embedder<T> {
    config: EmbedderConfig,
    body: Sequential<T>,
    head: Layer<T>,
}

/// Recorded forward pass of one sequence.
pub struct EmbedTrace<T> {
    caches: Vec<Cache<T>>,
    head: Cache<T>,
    frames: usize,
    raw: Vec<T>,
    unit: Vec<T>,
}

impl<T: Real> EmbedTrace<T> {
    pub fn embedding(&self) -> &[T] {
        &self.unit
    }
}

/// Parameter gradients of an [`Embedder`].
pub struct EmbedderGradients<T> {
    body: Vec<Vec<T>>,
    head: Vec<T>,
}

impl<T> EmbedderGradients<T> {
    /// Per-layer gradients in the order of [`Embedder::layers_mut`].
    pub fn layers(&self) -> Vec<&[T]> {
        let mut g: Vec<&[T]> = self.body.iter().map(|g| g.as_slice()).collect();
        g.push(&self.head);
        g
    }
}

impl<T: Real> Embedder<T> {
    pub fn new(config: EmbedderConfig, seed: u64) -> Result<Self> {
        let (body, head) = config.kinds()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = body.into_iter().map(|k| Layer::xavier(k, &mut rng)).collect();
        Ok(Self {
            config,
            body: Sequential::new(layers)?,
            head: Layer::xavier(head, &mut rng),
        })
    }

    pub fn config(&self) -> EmbedderConfig {
        self.config
    }

    pub fn dim(&self) -> usize {
        self.config.dim
    }

    pub fn param_count(&self) -> usize {
        self.body.param_count() + self.head.param_count()
    }

    /// Body layers followed by the projection head.
    pub fn layers_mut(&mut self) -> Vec<&mut Layer<T>> {
        let mut v: Vec<&mut Layer<T>> = self.body.layers_mut().iter_mut().collect();
        v.push(&mut self.head);
        v
    }

    pub fn cast<U: Real>(&self) -> Embedder<U> {
        Embedder {
            config: self.config,
            body: self.body.cast(),
            head: self.head.cast(),
        }
    }

    fn check_len(frames: usize) -> Result<()> {
        if frames < MIN_EMBED_FRAMES {
            return Err(Error::input(format!(
                "utterance has {frames} frames, at least {MIN_EMBED_FRAMES} are needed"
            )));
        }
        Ok(())
    }

    fn last_row(y: &Tensor2D<T>) -> Tensor2D<T> {
        Tensor2D::from_vec(1, y.cols(), y.row(y.rows() - 1).to_vec()).expect("shape")
    }

    /// Unit-norm embedding of a feature sequence of at least 50 frames.
    pub fn embed(&self, features: &[FrameFeatures]) -> Result<SpeakerEmbedding> {
        Self::check_len(features.len())?;
        let y = self.body.predict(&feature_tensor::<T>(features))?;
        let u = self.head.forward(&Self::last_row(&y))?;
        SpeakerEmbedding::new(u.row(0).iter().map(|v| v.as_f64() as f32).collect())
    }

    /// Enrollment embedding: the average of embeddings of non-overlapping
    /// 6 s crops (or of the whole sequence when shorter), renormalized. A
    /// trailing remainder shorter than a crop is dropped.
    pub fn enroll(&self, features: &[FrameFeatures]) -> Result<SpeakerEmbedding> {
        Self::check_len(features.len())?;
        if features.len() < ENROLL_CROP_FRAMES {
            return self.embed(features);
        }
        let parts = features
            .chunks_exact(ENROLL_CROP_FRAMES)
            .map(|c| self.embed(c))
            .collect::<Result<Vec<_>>>()?;
        SpeakerEmbedding::average(&parts)
    }

    /// Forward pass on a rescaled input tensor, keeping what backward needs.
    pub fn forward_trace(&self, x: &Tensor2D<T>) -> Result<EmbedTrace<T>> {
        Self::check_len(x.rows())?;
        let (y, caches) = self.body.forward_record(x)?;
        let head = self.head.forward_train(&Self::last_row(&y))?;
        let raw = match &head {
            Cache::Dense { y, .. } => y.row(0).to_vec(),
            _ => unreachable!("head is dense"),
        };
        let norm = raw.iter().map(|&v| v * v).sum::<T>().sqrt();
        if !(norm.as_f64() > 0.0) {
            return Err(Error::Numeric("embedding collapsed to zero".into()));
        }
        let unit = raw.iter().map(|&v| v / norm).collect();
        Ok(EmbedTrace {
            caches,
            head,
            frames: x.rows(),
            raw,
            unit,
        })
    }

    pub fn zero_gradients(&self) -> EmbedderGradients<T> {
        EmbedderGradients {
            body: self.body.zero_gradients(),
            head: vec![T::zero(); self.head.param_count()],
        }
    }

    /// Accumulates parameter gradients for `d_unit`, the gradient with respect
    /// to the normalized embedding of `trace`.
    pub fn backward_trace(&self, trace: &EmbedTrace<T>, d_unit: &[T], grads: &mut EmbedderGradients<T>) -> Result<()> {
        let norm = trace.raw.iter().map(|&v| v * v).sum::<T>().sqrt();
        let proj: T = trace.unit.iter().zip(d_unit).map(|(&u, &d)| u * d).sum();
        let d_raw: Vec<T> = trace
            .unit
            .iter()
            .zip(d_unit)
            .map(|(&u, &d)| (d - u * proj) / norm)
            .collect();
        let d_raw = Tensor2D::from_vec(1, d_raw.len(), d_raw)?;
        let d_last = self.head.backward(&trace.head, &d_raw, &mut grads.head)?;
        let mut dy = Tensor2D::zeros(trace.frames, self.config.gru_units);
        dy.row_mut(trace.frames - 1).copy_from_slice(d_last.row(0));
        self.body.backward_record(&trace.caches, &dy, &mut grads.body)?;
        Ok(())
    }

    fn params_and_grads<'a>(
        &'a mut self,
        grads: &'a EmbedderGradients<T>,
    ) -> (Vec<&'a mut [T]>, Vec<&'a [T]>) {
        let mut p: Vec<&mut [T]> = self.body.layers_mut().iter_mut().map(|l| l.params_mut()).collect();
        p.push(self.head.params_mut());
        let mut g: Vec<&[T]> = grads.body.iter().map(|g| g.as_slice()).collect();
        g.push(&grads.head);
        (p, g)
    }
}

impl Embedder<f32> {
    pub fn to_weight_file(&self) -> WeightFile {
        let mut layers: Vec<Layer<f32>> = self.body.layers().to_vec();
        layers.push(self.head.clone());
        WeightFile::new(RecordKind::Embedder, self.config.to_key_values(), &layers)
    }

    pub fn from_weight_file(file: &WeightFile) -> Result<Self> {
        file.expect_kind(RecordKind::Embedder)?;
        let config = EmbedderConfig::from_key_values(&file.meta)?;
        let (body, head) = config.kinds()?;
        let kinds: Vec<LayerKind> = file.layers.iter().map(|l| l.kind()).collect();
        if kinds.len() != body.len() + 1 || kinds[..body.len()] != body[..] || kinds[body.len()] != head {
            return Err(Error::Format("embedder layers do not match the stored configuration".into()));
        }
        let mut layers = file.layers.clone();
        let head = layers.pop().expect("non-empty");
        Ok(Self {
            config,
            body: Sequential::new(layers)?,
            head,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_weight_file().save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_weight_file(&WeightFile::load(path)?)
    }
}

/// Value and gradients of the GE2E loss.
#[derive(Debug, Clone)]
pub struct Ge2eOutput {
    pub loss: f64,
    /// Gradient per embedding, same layout as the input.
    pub d_embeddings: Vec<Vec<f64>>,
    pub d_w: f64,
    pub d_b: f64,
}

/// Lower bound applied to the GE2E similarity scale.
pub const GE2E_MIN_SCALE: f64 = 1e-6;

/// Softmax GE2E loss over `n` speakers × `m` utterances, embeddings laid out
/// speaker-major (`embeddings[j * m + i]`).
///
/// `s[j,i,k] = w · cos(e[j,i], c[k]) + b`, where `c[k]` is the mean of speaker
/// `k`'s embeddings, excluding `e[j,i]` itself when `k == j`. The loss is the
/// summed cross-entropy of each utterance against its own speaker.
pub fn ge2e_loss(embeddings: &[Vec<f64>], n: usize, m: usize, w: f64, b: f64) -> Result<Ge2eOutput> {
    if n < 2 || m < 2 {
        return Err(Error::input("GE2E needs at least 2 speakers and 2 utterances each"));
    }
    if embeddings.len() != n * m {
        return Err(Error::shape(format!("{} embeddings for {n}x{m}", embeddings.len())));
    }
    let dim = embeddings[0].len();
    if embeddings.iter().any(|e| e.len() != dim) {
        return Err(Error::shape("embeddings differ in dimension"));
    }
    let w = w.max(GE2E_MIN_SCALE);
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let sums: Vec<Vec<f64>> = (0..n)
        .map(|k| {
            let mut s = vec![0.0; dim];
            for e in &embeddings[k * m..(k + 1) * m] {
                for (a, x) in s.iter_mut().zip(e) {
                    *a += x;
                }
            }
            s
        })
        .collect();
    let means: Vec<Vec<f64>> = sums.iter().map(|s| s.iter().map(|x| x / m as f64).collect()).collect();

    let mut loss = 0.0;
    let mut d_e = vec![vec![0.0; dim]; n * m];
    let mut d_sums = vec![vec![0.0; dim]; n];
    let (mut d_w, mut d_b) = (0.0, 0.0);
    let mut own = vec![0.0; dim];
    let mut cos = vec![0.0; n];
    for j in 0..n {
        for i in 0..m {
            let e = &embeddings[j * m + i];
            let en = norm(e);
            for ((o, s), x) in own.iter_mut().zip(&sums[j]).zip(e) {
                *o = (s - x) / (m - 1) as f64;
            }
            let centroid = |k: usize| if k == j { own.as_slice() } else { means[k].as_slice() };
            for (k, c) in cos.iter_mut().enumerate() {
                let ck = centroid(k);
                let dot: f64 = e.iter().zip(ck).map(|(a, b)| a * b).sum();
                *c = dot / (en * norm(ck)).max(1e-12);
            }
            let logits: Vec<f64> = cos.iter().map(|c| w * c + b).collect();
            let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = logits.iter().map(|l| (l - max).exp()).sum();
            loss += max + z.ln() - logits[j];
            for k in 0..n {
                let ds = (logits[k] - max).exp() / z - if k == j { 1.0 } else { 0.0 };
                d_w += ds * cos[k];
                d_b += ds;
                let dc = w * ds;
                let ck = centroid(k);
                let cn = norm(ck).max(1e-12);
                let scale = 1.0 / (en * cn).max(1e-12);
                // d cos / d e and d cos / d c.
                let (share, own_fix) = if k == j {
                    (1.0 / (m - 1) as f64, true)
                } else {
                    (1.0 / m as f64, false)
                };
                for d in 0..dim {
                    d_e[j * m + i][d] += dc * (ck[d] * scale - cos[k] * e[d] / (en * en));
                    let g_c = dc * (e[d] * scale - cos[k] * ck[d] / (cn * cn));
                    d_sums[k][d] += g_c * share;
                    if own_fix {
                        d_e[j * m + i][d] -= g_c * share;
                    }
                }
            }
        }
    }
    for k in 0..n {
        for i in 0..m {
            for (g, s) in d_e[k * m + i].iter_mut().zip(&d_sums[k]) {
                *g += s;
            }
        }
    }
    if !loss.is_finite() {
        return Err(Error::Numeric("GE2E loss is not finite".into()));
    }
    Ok(Ge2eOutput {
        loss,
        d_embeddings: d_e,
        d_w,
        d_b,
    })
}

/// Training schedule for [`train_embedder`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmbedderTrainConfig {
    pub steps: usize,
    /// Speakers per batch (capped at the number available).
    pub speakers_per_batch: usize,
    pub utterances_per_speaker: usize,
    pub crop_frames: usize,
    pub learning_rate: f64,
    /// Held-out EER is measured every this many steps, and at the start and end.
    pub eval_every: usize,
    pub seed: u64,
}

impl Default for EmbedderTrainConfig {
    fn default() -> Self {
        Self {
            steps: 10_000,
            speakers_per_batch: 64,
            utterances_per_speaker: 10,
            crop_frames: 600,
            learning_rate: 1e-3,
            eval_every: 500,
            seed: 0,
        }
    }
}

impl EmbedderTrainConfig {
    pub fn toy() -> Self {
        Self {
            steps: 200,
            speakers_per_batch: 8,
            utterances_per_speaker: 4,
            crop_frames: 150,
            learning_rate: 3e-3,
            eval_every: 50,
            seed: 0,
        }
    }
}

/// Result of [`train_embedder`].
#[derive(Debug, Clone)]
pub struct EmbedderTraining {
    pub embedder: Embedder<f32>,
    pub losses: Vec<f64>,
    /// `(step, held-out EER)` pairs; the first entry is the untrained model.
    pub eer_history: Vec<(usize, f64)>,
    pub final_w: f64,
    pub final_b: f64,
}

/// Speaker verification EER over all pairs of held-out sequences
/// (`speakers[k]` lists speaker `k`'s feature sequences).
pub fn verification_eer<T: Real>(embedder: &Embedder<T>, speakers: &[Vec<Vec<FrameFeatures>>]) -> Result<f64> {
    let mut items = Vec::new();
    for (k, utts) in speakers.iter().enumerate() {
        for u in utts {
            items.push((k, embedder.embed(u)?));
        }
    }
    let mut scores = Vec::new();
    let mut same = Vec::new();
    for a in 0..items.len() {
        for b in a + 1..items.len() {
            scores.push(items[a].1.cosine(&items[b].1)?);
            same.push(items[a].0 == items[b].0);
        }
    }
    eer(&scores, &same)
}

/// Trains an embedder with GE2E batches of random crops from each speaker's
/// concatenated training sequences. `heldout` is scored for EER at
/// `eval_every` intervals.
pub fn train_embedder(
    config: EmbedderConfig,
    train: &[Vec<Vec<FrameFeatures>>],
    heldout: &[Vec<Vec<FrameFeatures>>],
    schedule: &EmbedderTrainConfig,
) -> Result<EmbedderTraining> {
    if train.len() < 4 || train.iter().any(|u| u.len() < 4) {
        return Err(Error::input("embedder training needs at least 4 speakers with 4 utterances each"));
    }
    if schedule.crop_frames < MIN_EMBED_FRAMES || schedule.utterances_per_speaker < 2 {
        return Err(Error::Config("crop too short or fewer than 2 utterances per speaker".into()));
    }
    let pools: Vec<Vec<FrameFeatures>> = train.iter().map(|u| u.concat()).collect();
    if pools.iter().any(|p| p.len() < schedule.crop_frames) {
        return Err(Error::input("a speaker has less audio than one training crop"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(schedule.seed);
    let mut model: Embedder<f64> = Embedder::new(config, schedule.seed)?;
    let mut opt = Adam::new(schedule.learning_rate);
    let mut opt_wb = Adam::new(schedule.learning_rate);
    let (mut w, mut b) = (10.0f64, -5.0f64);
    let n = schedule.speakers_per_batch.min(train.len()).max(2);
    let m = schedule.utterances_per_speaker;
    let mut losses = Vec::with_capacity(schedule.steps);
    let mut eer_history = Vec::new();
    let eval = |model: &Embedder<f64>| -> Result<Option<f64>> {
        if heldout.is_empty() {
            return Ok(None);
        }
        verification_eer(&model.cast::<f32>(), heldout).map(Some)
    };
    if let Some(e) = eval(&model)? {
        eer_history.push((0, e));
    }
    let mut order: Vec<usize> = (0..train.len()).collect();
    for step in 1..=schedule.steps {
        // Partial shuffle picks the batch speakers.
        for i in 0..n {
            let j = rng.gen_range(i..order.len());
            order.swap(i, j);
        }
        let mut traces = Vec::with_capacity(n * m);
        for &spk in &order[..n] {
            let pool = &pools[spk];
            for _ in 0..m {
                let start = rng.gen_range(0..=pool.len() - schedule.crop_frames);
                let x = feature_tensor::<f64>(&pool[start..start + schedule.crop_frames]);
                traces.push(model.forward_trace(&x)?);
            }
        }
        let emb: Vec<Vec<f64>> = traces.iter().map(|t| t.embedding().to_vec()).collect();
        let out = ge2e_loss(&emb, n, m, w, b)?;
        let mut grads = model.zero_gradients();
        for (trace, d) in traces.iter().zip(&out.d_embeddings) {
            model.backward_trace(trace, d, &mut grads)?;
        }
        {
            let (mut p, g) = model.params_and_grads(&grads);
            opt.update(&mut p, &g);
        }
        let mut wb = [w, b];
        opt_wb.update(&mut [&mut wb[..]], &[&[out.d_w, out.d_b][..]]);
        w = wb[0].max(GE2E_MIN_SCALE);
        b = wb[1];
        losses.push(out.loss);
        if step % schedule.eval_every.max(1) == 0 || step == schedule.steps {
            if let Some(e) = eval(&model)? {
                if eer_history.last().map(|&(s, _)| s) != Some(step) {
                    eer_history.push((step, e));
                }
            }
        }
    }
    Ok(EmbedderTraining {
        embedder: model.cast(),
        losses,
        eer_history,
        final_w: w,
        final_b: b,
    })
}
