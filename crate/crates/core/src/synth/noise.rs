//! Stationary background noises.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::audio::AudioBuffer;
use crate::dsp::transform::process_offline;
use crate::error::Result;
use crate::{SAMPLE_RATE, WINDOW_SIZE};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseKind {
    White,
    Pink,
    Brown,
    /// Roughly the long-term spectrum of speech: flat to 500 Hz, then -6 dB/octave.
    SpeechShaped,
    /// Mains hum harmonics over a faint white floor.
    Hum,
}

impl NoiseKind {
    pub const ALL: [NoiseKind; 5] = [
        NoiseKind::White,
        NoiseKind::Pink,
        NoiseKind::Brown,
        NoiseKind::SpeechShaped,
        NoiseKind::Hum,
    ];

    pub fn name(self) -> &'static str {
        match self {
            NoiseKind::White => "white",
            NoiseKind::Pink => "pink",
            NoiseKind::Brown => "brown",
            NoiseKind::SpeechShaped => "speech_shaped",
            NoiseKind::Hum => "hum",
        }
    }

    /// Magnitude response applied to white noise.
    fn shape(self, hz: f64) -> f64 {
        let f = hz.max(20.0);
        match self {
            NoiseKind::White | NoiseKind::Hum => 1.0,
            NoiseKind::Pink => (100.0 / f).sqrt(),
            NoiseKind::Brown => 100.0 / f,
            NoiseKind::SpeechShaped => {
                let hp = 1.0 / (1.0 + (100.0 / f).powi(4)).sqrt();
                hp / (1.0 + (f / 500.0).powi(2)).sqrt()
            }
        }
    }
}

/// `len` samples of `kind` noise at RMS 0.05.
pub fn generate_noise(kind: NoiseKind, seed: u64, len: usize) -> Result<AudioBuffer> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let white: Vec<f32> = (0..len).map(|_| StandardNormal.sample(&mut rng)).collect();
    let mut x = if kind == NoiseKind::White || kind == NoiseKind::Hum {
        white
    } else {
        let gains: Vec<f32> = (0..=WINDOW_SIZE / 2)
            .map(|k| kind.shape(k as f64 * SAMPLE_RATE as f64 / WINDOW_SIZE as f64) as f32)
            .collect();
        process_offline(&white, |spec| {
            for (b, &g) in spec.bins_mut().iter_mut().zip(&gains) {
                *b *= g;
            }
        })?
    };
    if kind == NoiseKind::Hum {
        let mains = if rng.gen_bool(0.5) { 50.0 } else { 60.0 };
        let phases: Vec<f64> = (0..6).map(|_| rng.gen_range(0.0..std::f64::consts::TAU)).collect();
        for (n, v) in x.iter_mut().enumerate() {
            let t = n as f64 / SAMPLE_RATE as f64;
            let hum: f64 = phases
                .iter()
                .enumerate()
                .map(|(h, ph)| (std::f64::consts::TAU * mains * (h + 1) as f64 * t + ph).sin() / (h + 1) as f64)
                .sum();
            *v = (0.05 * *v as f64 + hum) as f32;
        }
    }
    let rms = (x.iter().map(|&v| v as f64 * v as f64).sum::<f64>() / len.max(1) as f64).sqrt();
    if rms > 0.0 {
        let s = (0.05 / rms) as f32;
        x.iter_mut().for_each(|v| *v *= s);
    }
    AudioBuffer::new(x)
}

/// A noise of random kind.
pub fn random_noise(seed: u64, len: usize) -> Result<(NoiseKind, AudioBuffer)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xA5A5_5A5A);
    let kind = NoiseKind::ALL[rng.gen_range(0..NoiseKind::ALL.len())];
    Ok((kind, generate_noise(kind, seed, len)?))
}
