//! Synthetic data: talkers, noises and mixtures with supervision targets.

pub mod mixture;
pub mod noise;
pub mod speaker;

pub use mixture::{
    augment, make_mixture, mix_at_ratio, ratio_db, synthesize_example, Augment, MixPreset, MixtureExample,
    MixtureSpec,
};
pub use noise::{generate_noise, random_noise, NoiseKind};
pub use speaker::{synth_speaker, Rendered, SpeakerProfile};
