//! Real-time target-voice enhancement for 48 kHz speech.
//!
//! The pipeline analyzes 10 ms hops into a compact perceptual feature vector
//! (32 ERB band energies, 32 per-band pitch coherences and 4 general
//! features), runs a speaker-conditioned recurrent network that predicts
//! per-band gains, pitch-filter strengths and a voice-activity probability,
//! and resynthesizes the enhanced signal through a pitch comb filter and
//! overlap-add.

pub mod audio;
pub mod comb;
pub mod config;
pub mod corpus;
pub mod dsp;
pub mod embedder;
pub mod enhancer;
pub mod error;
pub mod eval;
pub mod neural;
pub mod pipeline;
pub mod synth;

pub use audio::AudioBuffer;
pub use error::{Error, Result};

/// Stream sample rate in Hz.
pub const SAMPLE_RATE: u32 = 48_000;
/// Hop size: 10 ms.
pub const FRAME_SIZE: usize = 480;
/// Analysis window: 20 ms.
pub const WINDOW_SIZE: usize = 2 * FRAME_SIZE;
/// One-sided spectrum size.
pub const FREQ_SIZE: usize = WINDOW_SIZE / 2 + 1;
/// Number of ERB bands.
pub const NB_BANDS: usize = 32;
/// General (non-band) features per frame.
pub const NB_GENERAL_FEATURES: usize = 4;
/// Total feature dimension.
pub const NB_FEATURES: usize = 2 * NB_BANDS + NB_GENERAL_FEATURES;
/// Frames of look-ahead the enhancer sees beyond the frame it is producing (30 ms).
pub const LOOKAHEAD_FRAMES: usize = 3;
/// Shortest pitch period searched (500 Hz).
pub const PITCH_MIN_PERIOD: usize = 96;
/// Longest pitch period searched (62.5 Hz).
pub const PITCH_MAX_PERIOD: usize = 768;
