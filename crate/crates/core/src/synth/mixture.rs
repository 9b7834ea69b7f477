//! SNR/SIR mixing, microphone-style augmentation and supervision.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::audio::{energy, AudioBuffer};
use crate::dsp::analyze_signal;
use crate::dsp::transform::process_offline;
use crate::enhancer::{supervision_targets, SupervisionTargets};
use crate::error::{Error, Result};
use crate::{SAMPLE_RATE, WINDOW_SIZE};

use super::noise::random_noise;
use super::speaker::{derive_seed, SpeakerProfile};

/// Allowed low-pass cutoff range in Hz.
pub const LOWPASS_RANGE: (f64, f64) = (3000.0, 20000.0);

/// Microphone simulation applied to the mixture.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Augment {
    pub lowpass_hz: Option<f64>,
    pub tilt_db_per_octave: Option<f64>,
}

impl Augment {
    pub const OFF: Augment = Augment {
        lowpass_hz: None,
        tilt_db_per_octave: None,
    };

    pub fn is_off(&self) -> bool {
        self.lowpass_hz.is_none() && self.tilt_db_per_octave.is_none()
    }

    /// Magnitude response at `hz`: a 4th-order Butterworth-shaped low-pass
    /// `1 / sqrt(1 + (f/fc)^8)` times a tilt of `tilt` dB per octave around 1 kHz.
    /// The tilt is held constant below 62.5 Hz.
    pub fn response(&self, hz: f64) -> f64 {
        let mut g = 1.0;
        if let Some(fc) = self.lowpass_hz {
            g /= (1.0 + (hz / fc).powi(8)).sqrt();
        }
        if let Some(tilt) = self.tilt_db_per_octave {
            g *= 10f64.powf(tilt * (hz.max(62.5) / 1000.0).log2() / 20.0);
        }
        g
    }
}

/// Mixing recipe for one example.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixtureSpec {
    /// Target-to-noise ratio in dB.
    pub snr_db: f64,
    /// Target-to-interferer ratio in dB; `+∞` omits the interferer.
    pub sir_db: f64,
    pub seed: u64,
    pub augment: Augment,
}

/// A synthesized mixture with its components.
///
/// `interferer` and `noise` are stored after scaling and before augmentation;
/// without augmentation `mixture` is exactly `clean_target + interferer + noise`.
#[derive(Debug, Clone)]
pub struct MixtureExample {
    pub spec: MixtureSpec,
    pub mixture: AudioBuffer,
    pub clean_target: AudioBuffer,
    pub interferer: AudioBuffer,
    pub noise: AudioBuffer,
    pub enrollment: AudioBuffer,
    pub interferer_scale: f64,
    pub noise_scale: f64,
    pub targets: SupervisionTargets,
}

/// Scales `other` so that `10·log10(E_signal / E_other_scaled) == ratio_db`
/// and returns `(signal + scaled other, scale)`.
pub fn mix_at_ratio(signal: &[f32], other: &[f32], ratio_db: f64) -> Result<(Vec<f32>, f64)> {
    if signal.len() != other.len() {
        return Err(Error::shape(format!(
            "cannot mix {} samples with {}",
            signal.len(),
            other.len()
        )));
    }
    if !ratio_db.is_finite() {
        return Err(Error::input("mixing ratio must be finite"));
    }
    let (es, eo) = (energy(signal), energy(other));
    if es <= 0.0 || eo <= 0.0 {
        return Err(Error::input("cannot mix silent signals at a ratio"));
    }
    let scale = (es / (eo * 10f64.powf(ratio_db / 10.0))).sqrt();
    let mixed = signal
        .iter()
        .zip(other)
        .map(|(&s, &o)| (s as f64 + scale * o as f64) as f32)
        .collect();
    Ok((mixed, scale))
}

/// Achieved ratio in dB between two stored components.
pub fn ratio_db(signal: &[f32], other: &[f32]) -> f64 {
    10.0 * (energy(signal) / energy(other)).log10()
}

/// Applies `augment` in the spectral domain, frame by frame.
pub fn augment(audio: &[f32], spec: &Augment) -> Result<Vec<f32>> {
    if let Some(fc) = spec.lowpass_hz {
        if !(LOWPASS_RANGE.0..=LOWPASS_RANGE.1).contains(&fc) {
            return Err(Error::input(format!("low-pass cutoff {fc} Hz outside 3-20 kHz")));
        }
    }
    if let Some(t) = spec.tilt_db_per_octave {
        if !t.is_finite() {
            return Err(Error::input("tilt must be finite"));
        }
    }
    if spec.is_off() {
        return Ok(audio.to_vec());
    }
    let gains: Vec<f32> = (0..=WINDOW_SIZE / 2)
        .map(|k| spec.response(k as f64 * SAMPLE_RATE as f64 / WINDOW_SIZE as f64) as f32)
        .collect();
    process_offline(audio, |s| {
        for (b, &g) in s.bins_mut().iter_mut().zip(&gains) {
            *b *= g;
        }
    })
}

fn scaled(x: &[f32], s: f64) -> Vec<f32> {
    x.iter().map(|&v| (v as f64 * s) as f32).collect()
}

/// Mixes `target` with `interferer` at `spec.sir_db` and `noise` at
/// `spec.snr_db` (both relative to the unscaled target), then augments the
/// mixture and derives per-frame supervision from the clean target.
pub fn make_mixture(
    spec: &MixtureSpec,
    target: &AudioBuffer,
    interferer: &AudioBuffer,
    noise: &AudioBuffer,
    enrollment: AudioBuffer,
) -> Result<MixtureExample> {
    let len = target.len();
    if interferer.len() < len || noise.len() < len {
        return Err(Error::input("mixture components are shorter than the target"));
    }
    if !spec.snr_db.is_finite() || spec.sir_db.is_nan() || spec.sir_db == f64::NEG_INFINITY {
        return Err(Error::input("SNR must be finite and SIR finite or +inf"));
    }
    let t = target.samples();
    let (interf, interferer_scale) = if spec.sir_db == f64::INFINITY {
        (vec![0.0f32; len], 0.0)
    } else {
        let (_, s) = mix_at_ratio(t, &interferer.samples()[..len], spec.sir_db)?;
        (scaled(&interferer.samples()[..len], s), s)
    };
    let (_, noise_scale) = mix_at_ratio(t, &noise.samples()[..len], spec.snr_db)?;
    let noise = scaled(&noise.samples()[..len], noise_scale);
    let sum: Vec<f32> = (0..len).map(|i| t[i] + interf[i] + noise[i]).collect();
    let mixture = augment(&sum, &spec.augment)?;
    let targets = supervision_targets(&analyze_signal(t)?, &analyze_signal(&mixture)?)?;
    Ok(MixtureExample {
        spec: *spec,
        mixture: AudioBuffer::new(mixture)?,
        clean_target: target.clone(),
        interferer: AudioBuffer::new(interf)?,
        noise: AudioBuffer::new(noise)?,
        enrollment,
        interferer_scale,
        noise_scale,
        targets,
    })
}

/// Distribution of mixing conditions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MixPreset {
    /// SNR ~ U[-5, 35], SIR ~ U[-5, 10]; random low-pass and tilt half the time.
    Train,
    /// SNR, SIR ~ U[3, 15], no augmentation.
    Eval,
    /// Fixed SNR and SIR, no augmentation.
    Fixed { snr_db: f64, sir_db: f64 },
}

impl MixPreset {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "train" => Ok(MixPreset::Train),
            "eval" => Ok(MixPreset::Eval),
            other => Err(Error::Config(format!("unknown mixture preset '{other}'"))),
        }
    }

    /// Mixing spec for example seed `seed`.
    pub fn draw(&self, seed: u64) -> MixtureSpec {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0x313));
        match *self {
            MixPreset::Train => {
                let lowpass_hz = rng.gen_bool(0.5).then(|| rng.gen_range(LOWPASS_RANGE.0..=LOWPASS_RANGE.1));
                let tilt_db_per_octave = rng.gen_bool(0.5).then(|| rng.gen_range(-3.0..=3.0));
                MixtureSpec {
                    snr_db: rng.gen_range(-5.0..=35.0),
                    sir_db: rng.gen_range(-5.0..=10.0),
                    seed,
                    augment: Augment {
                        lowpass_hz,
                        tilt_db_per_octave,
                    },
                }
            }
            MixPreset::Eval => MixtureSpec {
                snr_db: rng.gen_range(3.0..=15.0),
                sir_db: rng.gen_range(3.0..=15.0),
                seed,
                augment: Augment::OFF,
            },
            MixPreset::Fixed { snr_db, sir_db } => MixtureSpec {
                snr_db,
                sir_db,
                seed,
                augment: Augment::OFF,
            },
        }
    }
}

/// Synthesizes a complete example: target and interferer speech from the
/// two profiles, random background noise, and a separate enrollment
/// utterance of the target. Every signal is a pure function of `spec.seed`.
pub fn synthesize_example(
    target: &SpeakerProfile,
    interferer: &SpeakerProfile,
    spec: &MixtureSpec,
    duration: f64,
    enrollment_duration: f64,
) -> Result<MixtureExample> {
    let utt = |stream| derive_seed(spec.seed, stream);
    let t = target.render(utt(1), duration)?.audio;
    let i = interferer.render(utt(2), duration)?.audio;
    let (_, n) = random_noise(utt(3), t.len())?;
    // Enrollment uses its own utterance seed, so its audio is disjoint from the target's.
    let e = target.render(utt(4), enrollment_duration)?.audio;
    make_mixture(spec, &t, &i, &n, e)
}
