//! Seeded toy corpora of synthetic talkers: verification sets for the
//! embedder and target/interferer mixtures for the enhancer.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::audio::AudioBuffer;
use crate::dsp::{analyze_signal, extract_features, FrameFeatures};
use crate::embedder::Embedder;
use crate::enhancer::{supervision_targets, SupervisionTargets, TrainingExample};
use crate::error::{Error, Result};
use crate::synth::speaker::{derive_seed, F0_RANGE};
use crate::synth::{mix_at_ratio, random_noise, synthesize_example, MixPreset, MixtureExample, SpeakerProfile};

/// `speakers[k][u]` holds the features of speaker `k`'s utterance `u`.
pub type SpeakerSet = Vec<Vec<Vec<FrameFeatures>>>;

#[derive(Debug, Clone)]
pub struct ToyCorpus {
    seed: u64,
    speakers: Vec<SpeakerProfile>,
}

impl ToyCorpus {
    /// `speakers` voices whose base pitches are stratified over the
    /// 90–280 Hz range (one random draw per stratum, strata shuffled), so
    /// even a small corpus spans low and high voices.
    pub fn new(speakers: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0xf0));
        let mut strata: Vec<usize> = (0..speakers).collect();
        strata.shuffle(&mut rng);
        let speakers = strata
            .iter()
            .enumerate()
            .map(|(k, &s)| {
                let mut p = SpeakerProfile::from_seed(derive_seed(seed, 0x100 + k as u64));
                let u = (s as f64 + rng.gen::<f64>()) / speakers as f64;
                p.base_f0 = F0_RANGE.0 * (F0_RANGE.1 / F0_RANGE.0).powf(u);
                p
            })
            .collect();
        Self { seed, speakers }
    }

    pub fn len(&self) -> usize {
        self.speakers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.speakers.is_empty()
    }

    pub fn speaker(&self, k: usize) -> &SpeakerProfile {
        &self.speakers[k]
    }

    /// Renders `count` utterances per speaker. Different `stream`s give
    /// disjoint utterances of the same voices.
    pub fn verification_set(&self, count: usize, duration: f64, stream: u64) -> Result<SpeakerSet> {
        self.speakers
            .iter()
            .enumerate()
            .map(|(k, p)| {
                (0..count as u64)
                    .map(|u| {
                        let seed = derive_seed(self.seed ^ (stream << 32), (k as u64) << 16 | u);
                        extract_features(p.render(seed, duration)?.audio.samples())
                    })
                    .collect()
            })
            .collect()
    }

    /// Like [`verification_set`](Self::verification_set), but every odd
    /// utterance gets a random background noise at an SNR drawn from
    /// `snr_db`. Keeps the embedding stable once noise leaks through.
    pub fn noisy_verification_set(&self, count: usize, duration: f64, stream: u64, snr_db: (f64, f64)) -> Result<SpeakerSet> {
        self.speakers
            .iter()
            .enumerate()
            .map(|(k, p)| {
                (0..count as u64)
                    .map(|u| {
                        let seed = derive_seed(self.seed ^ (stream << 32), (k as u64) << 16 | u);
                        let audio = p.render(seed, duration)?.audio;
                        if u % 2 == 0 {
                            return extract_features(audio.samples());
                        }
                        let noise_seed = derive_seed(seed, NOISE_AUGMENT);
                        let (_, noise) = random_noise(noise_seed, audio.len())?;
                        let snr = ChaCha8Rng::seed_from_u64(noise_seed).gen_range(snr_db.0..=snr_db.1);
                        extract_features(&mix_at_ratio(audio.samples(), noise.samples(), snr)?.0)
                    })
                    .collect()
            })
            .collect()
    }

    /// A distinct (target, interferer) pair for mixture `index`.
    pub fn pair(&self, index: u64, stream: u64) -> Result<(usize, usize)> {
        if self.len() < 2 {
            return Err(Error::input("mixtures need at least two speakers"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.seed ^ (stream << 32), 0x9a1 + index));
        let a = rng.gen_range(0..self.len());
        let b = (a + rng.gen_range(1..self.len())) % self.len();
        Ok((a, b))
    }

    /// Mixture `index` of `stream`: pair, mixing spec and audio all follow
    /// from the seeds. Also renders an enrollment for the interferer.
    pub fn mixture(&self, preset: &MixPreset, index: u64, stream: u64, duration: f64, enrollment: f64) -> Result<ToyMixture> {
        let (a, b) = self.pair(index, stream)?;
        let seed = derive_seed(self.seed ^ (stream << 32), 0x3e3 + index);
        let spec = preset.draw(seed);
        let example = synthesize_example(&self.speakers[a], &self.speakers[b], &spec, duration, enrollment)?;
        let interferer_enrollment = self.speakers[b].render(derive_seed(seed, 0xe5), enrollment)?.audio;
        Ok(ToyMixture {
            target: a,
            interferer: b,
            example,
            interferer_enrollment,
        })
    }
}

/// A corpus mixture with the speaker indices of both talkers.
#[derive(Debug, Clone)]
pub struct ToyMixture {
    pub target: usize,
    pub interferer: usize,
    pub example: MixtureExample,
    /// Enrollment audio of the interferer, disjoint from the mixture.
    pub interferer_enrollment: AudioBuffer,
}

impl ToyMixture {
    /// Supervision for extracting the interferer instead of the target.
    pub fn interferer_targets(&self) -> Result<SupervisionTargets> {
        supervision_targets(
            &analyze_signal(self.example.interferer.samples())?,
            &analyze_signal(self.example.mixture.samples())?,
        )
    }

    /// Training examples for both roles: conditioned on the target with the
    /// target's supervision, and on the interferer with the interferer's.
    pub fn training_pair(&self, embedder: &Embedder<f32>) -> Result<[TrainingExample; 2]> {
        let own = training_example(&self.example, embedder)?;
        let swapped = TrainingExample {
            features: own.features.clone(),
            targets: self.interferer_targets()?,
            embedding: embedder.enroll(&extract_features(self.interferer_enrollment.samples())?)?,
        };
        Ok([own, swapped])
    }
}

/// Enhancer training example from a mixture, conditioned on the embedding of
/// its enrollment audio.
pub fn training_example(ex: &MixtureExample, embedder: &Embedder<f32>) -> Result<TrainingExample> {
    let embedding = embedder.enroll(&extract_features(ex.enrollment.samples())?)?;
    Ok(TrainingExample {
        features: extract_features(ex.mixture.samples())?,
        targets: ex.targets.clone(),
        embedding,
    })
}

/// Mixture stream used for enhancer training data.
pub const TRAIN_STREAM: u64 = 1;
/// Mixture stream used for evaluation; disjoint from [`TRAIN_STREAM`].
pub const EVAL_STREAM: u64 = 2;
/// Seed offset of the held-out verification speakers.
const HELDOUT_SPEAKERS: u64 = 0x4e1d;
const NOISE_AUGMENT: u64 = 0x7a5e;
/// SNR range of the background noise added to half the embedder's
/// training utterances.
const EMBEDDER_NOISE_SNR_DB: (f64, f64) = (0.0, 20.0);

/// Sizes of the desk-scale data sets built from a [`ToyCorpus`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ToyRecipe {
    pub speakers: usize,
    /// Embedder training utterances per speaker.
    pub utterances: usize,
    pub utterance_secs: f64,
    /// Unseen speakers used for held-out EER.
    pub heldout_speakers: usize,
    pub heldout_utterances: usize,
    pub heldout_secs: f64,
    /// Enhancer training mixtures; each yields one example per talker.
    pub mixtures: usize,
    pub mixture_secs: f64,
    pub enrollment_secs: f64,
}

impl Default for ToyRecipe {
    fn default() -> Self {
        Self {
            speakers: 8,
            utterances: 6,
            utterance_secs: 3.0,
            heldout_speakers: 6,
            heldout_utterances: 4,
            heldout_secs: 2.0,
            mixtures: 192,
            mixture_secs: 4.0,
            enrollment_secs: 3.0,
        }
    }
}

impl ToyRecipe {
    pub fn corpus(&self, seed: u64) -> ToyCorpus {
        ToyCorpus::new(self.speakers, seed)
    }

    /// Embedder training set and a held-out set of unseen speakers.
    pub fn embedder_data(&self, seed: u64) -> Result<(SpeakerSet, SpeakerSet)> {
        let train = self.corpus(seed).noisy_verification_set(self.utterances, self.utterance_secs, 0, EMBEDDER_NOISE_SNR_DB)?;
        let heldout = ToyCorpus::new(self.heldout_speakers, derive_seed(seed, HELDOUT_SPEAKERS)).verification_set(
            self.heldout_utterances,
            self.heldout_secs,
            0,
        )?;
        Ok((train, heldout))
    }

    /// Enhancer training examples in target/interferer pairs (group size 2),
    /// from augmented training-preset mixtures.
    pub fn enhancer_data(&self, seed: u64, embedder: &Embedder<f32>) -> Result<Vec<TrainingExample>> {
        let corpus = self.corpus(seed);
        let mut out = Vec::with_capacity(2 * self.mixtures);
        for i in 0..self.mixtures as u64 {
            let m = corpus.mixture(&MixPreset::Train, i, TRAIN_STREAM, self.mixture_secs, self.enrollment_secs)?;
            out.extend(m.training_pair(embedder)?);
        }
        Ok(out)
    }

    /// Evaluation mixture `index`.
    pub fn eval_mixture(&self, seed: u64, preset: &MixPreset, index: u64) -> Result<ToyMixture> {
        self.corpus(seed)
            .mixture(preset, index, EVAL_STREAM, self.mixture_secs, self.enrollment_secs)
    }
}
