//! Synthetic talkers: a glottal pulse train with a speaker-specific F0
//! contour, shaped by a speaker-specific three-formant vocal tract.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::audio::AudioBuffer;
use crate::error::{Error, Result};
use crate::SAMPLE_RATE;

/// Overall RMS of a rendered utterance.
pub const RENDER_RMS: f64 = 0.05;

/// Voice parameters drawn once per speaker seed.
#[derive(Debug, Clone, PartialEq)]
pub struct SpeakerProfile {
    pub seed: u64,
    /// Mean fundamental frequency in Hz, in `[90, 280]`.
    pub base_f0: f64,
    pub vibrato_hz: f64,
    /// Relative vibrato depth.
    pub vibrato_depth: f64,
    /// Formant centre frequencies in Hz.
    pub formants: [f64; 3],
    pub bandwidths: [f64; 3],
    /// One-pole glottal low-pass coefficient; higher is darker.
    pub glottal_pole: f64,
    /// Aspiration noise relative to the voiced excitation.
    pub breathiness: f64,
    /// Segment duration multiplier.
    pub tempo: f64,
}

/// A rendered utterance and its ground-truth F0 (0 where unvoiced), per sample.
#[derive(Debug, Clone)]
pub struct Rendered {
    pub audio: AudioBuffer,
    pub f0: Vec<f32>,
}

/// Range of speaker base pitches in Hz, drawn log-uniformly.
pub const F0_RANGE: (f64, f64) = (90.0, 280.0);

fn mix_seed(a: u64, b: u64) -> u64 {
    // SplitMix64 finalizer over the combined words.
    let mut z = a ^ b.wrapping_mul(0x9E37_79B9_7F4A_7C15).rotate_left(17);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub(crate) fn derive_seed(seed: u64, stream: u64) -> u64 {
    mix_seed(seed, stream)
}

/// Two-pole resonator with unit gain at its centre frequency.
#[derive(Debug, Clone, Copy)]
struct Resonator {
    a1: f64,
    a2: f64,
    g: f64,
    y1: f64,
    y2: f64,
}

impl Resonator {
    fn new(freq: f64, bandwidth: f64) -> Self {
        let fs = SAMPLE_RATE as f64;
        let r = (-std::f64::consts::PI * bandwidth / fs).exp();
        let theta = 2.0 * std::f64::consts::PI * freq / fs;
        let mut res = Self {
            a1: 2.0 * r * theta.cos(),
            a2: -r * r,
            g: 1.0,
            y1: 0.0,
            y2: 0.0,
        };
        // |1 - a1 z^-1 - a2 z^-2| at the centre frequency.
        let (c1, s1, c2, s2) = (theta.cos(), theta.sin(), (2.0 * theta).cos(), (2.0 * theta).sin());
        let re = 1.0 - res.a1 * c1 - res.a2 * c2;
        let im = res.a1 * s1 + res.a2 * s2;
        res.g = (re * re + im * im).sqrt();
        res
    }

    fn retune(&mut self, freq: f64, bandwidth: f64) {
        let fresh = Self::new(freq, bandwidth);
        self.a1 = fresh.a1;
        self.a2 = fresh.a2;
        self.g = fresh.g;
    }

    fn tick(&mut self, x: f64) -> f64 {
        let y = self.g * x + self.a1 * self.y1 + self.a2 * self.y2;
        self.y2 = self.y1;
        self.y1 = y;
        y
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Segment {
    Silence,
    Voiced,
    Unvoiced,
}

impl SpeakerProfile {
    pub fn from_seed(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0x5eed));
        let base_f0 = F0_RANGE.0 * (F0_RANGE.1 / F0_RANGE.0).powf(rng.gen::<f64>());
        let tract: f64 = rng.gen_range(0.85..1.2);
        let f1 = tract * rng.gen_range(350.0..750.0);
        let f2 = (tract * rng.gen_range(1000.0..2200.0)).max(f1 + 300.0);
        let f3 = (tract * rng.gen_range(2300.0..3300.0)).max(f2 + 400.0);
        Self {
            seed,
            base_f0,
            vibrato_hz: rng.gen_range(4.0..7.0),
            vibrato_depth: rng.gen_range(0.004..0.015),
            formants: [f1, f2, f3],
            bandwidths: [rng.gen_range(60.0..120.0), rng.gen_range(80.0..160.0), rng.gen_range(120.0..250.0)],
            glottal_pole: rng.gen_range(0.6..0.9),
            breathiness: rng.gen_range(0.0..0.08),
            tempo: rng.gen_range(0.8..1.25),
        }
    }

    /// Renders `duration` seconds of babble; `utterance_seed` picks the
    /// segment layout, intonation and vowel colouring.
    pub fn render(&self, utterance_seed: u64, duration: f64) -> Result<Rendered> {
        if !(duration >= 0.05) || !duration.is_finite() {
            return Err(Error::input(format!("cannot render {duration} s")));
        }
        let fs = SAMPLE_RATE as f64;
        let len = (duration * fs).round() as usize;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.seed, utterance_seed.wrapping_add(1)));
        let mut out = vec![0.0f64; len];
        let mut f0_track = vec![0.0f32; len];
        let mut formants = self.formants.map(|_| Resonator::new(1000.0, 100.0));
        for (r, (&f, &b)) in formants.iter_mut().zip(self.formants.iter().zip(&self.bandwidths)) {
            r.retune(f, b);
        }
        let mut glottal = 0.0f64;
        let mut glottal2 = 0.0f64;
        let mut phase = 0.0f64;
        let mut carry = 0.0f64;
        let mut n = 0usize;
        let mut prev = Segment::Silence;
        while n < len {
            let seg = match prev {
                Segment::Voiced => {
                    if rng.gen_bool(0.45) {
                        Segment::Silence
                    } else if rng.gen_bool(0.4) {
                        Segment::Unvoiced
                    } else {
                        Segment::Voiced
                    }
                }
                Segment::Silence | Segment::Unvoiced => {
                    if prev == Segment::Silence && rng.gen_bool(0.3) {
                        Segment::Unvoiced
                    } else {
                        Segment::Voiced
                    }
                }
            };
            let secs = match seg {
                Segment::Silence => rng.gen_range(0.06..0.3),
                Segment::Voiced => rng.gen_range(0.15..0.45) * self.tempo,
                Segment::Unvoiced => rng.gen_range(0.04..0.12) * self.tempo,
            };
            let seg_len = ((secs * fs) as usize).min(len - n);
            let ramp = (0.02 * fs) as usize;
            let env = |i: usize| {
                let edge = i.min(seg_len - 1 - i);
                let a = (edge as f64 / ramp as f64).min(1.0);
                0.5 - 0.5 * (std::f64::consts::PI * a).cos()
            };
            match seg {
                Segment::Silence => {}
                Segment::Voiced => {
                    let glide = (rng.gen_range(-0.08..0.08), rng.gen_range(-0.08..0.08));
                    let vowel: [f64; 3] = [rng.gen_range(0.85..1.15), rng.gen_range(0.85..1.15), rng.gen_range(0.92..1.08)];
                    for (k, r) in formants.iter_mut().enumerate() {
                        r.retune(self.formants[k] * vowel[k], self.bandwidths[k]);
                    }
                    let level = rng.gen_range(0.6..1.0);
                    let vib_phase = rng.gen_range(0.0..std::f64::consts::TAU);
                    for i in 0..seg_len {
                        let t = i as f64 / fs;
                        let frac = i as f64 / seg_len as f64;
                        let f0 = self.base_f0
                            * (1.0 + glide.0 + (glide.1 - glide.0) * frac)
                            * (1.0 + self.vibrato_depth * (std::f64::consts::TAU * self.vibrato_hz * t + vib_phase).sin());
                        f0_track[n + i] = f0 as f32;
                        phase += f0 / fs;
                        let mut excitation = carry;
                        carry = 0.0;
                        if phase >= 1.0 {
                            phase -= 1.0;
                            // Split the pulse between two samples by its fractional position.
                            let late = (phase * fs / f0).min(1.0);
                            excitation += 1.0 - late;
                            carry = late;
                        }
                        // Two one-pole stages: roughly -12 dB/octave above the corner.
                        glottal = (1.0 - self.glottal_pole) * excitation + self.glottal_pole * glottal;
                        glottal2 = (1.0 - self.glottal_pole) * glottal + self.glottal_pole * glottal2;
                        let aspiration = self.breathiness * rng.gen_range(-1.0..1.0) * 0.05;
                        let mut y = glottal2 + aspiration;
                        let mut acc = 0.0;
                        for r in formants.iter_mut() {
                            y = r.tick(y);
                            acc += y;
                        }
                        out[n + i] = level * env(i) * acc;
                    }
                }
                Segment::Unvoiced => {
                    let level = rng.gen_range(0.1..0.3);
                    let mut hiss = Resonator::new(rng.gen_range(3500.0..7000.0), 2500.0);
                    let mut smooth = 0.0;
                    for i in 0..seg_len {
                        let w: f64 = rng.gen_range(-1.0..1.0);
                        smooth = 0.65 * hiss.tick(w) + 0.35 * smooth;
                        out[n + i] = level * env(i) * smooth;
                    }
                }
            }
            if seg != Segment::Voiced {
                phase = 0.0;
            }
            n += seg_len;
            prev = seg;
        }
        let rms = (out.iter().map(|v| v * v).sum::<f64>() / len as f64).sqrt();
        let scale = if rms > 0.0 { RENDER_RMS / rms } else { 0.0 };
        let samples = out.iter().map(|&v| (v * scale) as f32).collect();
        Ok(Rendered {
            audio: AudioBuffer::new(samples)?,
            f0: f0_track,
        })
    }
}

/// `duration` seconds from the speaker with seed `speaker_seed`.
pub fn synth_speaker(speaker_seed: u64, duration: f64) -> Result<AudioBuffer> {
    if duration < 1.0 {
        return Err(Error::input("synthetic speech needs at least 1 s"));
    }
    Ok(SpeakerProfile::from_seed(speaker_seed).render(0, duration)?.audio)
}
