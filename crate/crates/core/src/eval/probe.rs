//! Speaker-similarity probe: how close the enhanced output sounds to the
//! target versus the interfering talker, judged by a frozen embedder.

use serde::{Deserialize, Serialize};

use crate::dsp::extract_features;
use crate::embedder::Embedder;
use crate::error::{Error, Result};
use crate::SAMPLE_RATE;

/// Minimum length of each probed signal.
pub const PROBE_MIN_SAMPLES: usize = SAMPLE_RATE as usize / 2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeResult {
    pub cos_target: f64,
    pub cos_interference: f64,
}

impl ProbeResult {
    pub fn separation(&self) -> f64 {
        self.cos_target - self.cos_interference
    }
}

/// Embeds `output`, `target_ref` and `interf_ref` with the same weights and
/// returns the cosine of the output against each reference.
pub fn cosine_probe(embedder: &Embedder<f32>, output: &[f32], target_ref: &[f32], interf_ref: &[f32]) -> Result<ProbeResult> {
    for (name, x) in [("output", output), ("target", target_ref), ("interference", interf_ref)] {
        if x.len() < PROBE_MIN_SAMPLES {
            return Err(Error::input(format!(
                "{name} signal has {} samples, the probe needs at least {PROBE_MIN_SAMPLES}",
                x.len()
            )));
        }
    }
    let embed = |x: &[f32]| embedder.enroll(&extract_features(x)?);
    let out = embed(output)?;
    Ok(ProbeResult {
        cos_target: out.cosine(&embed(target_ref)?)?,
        cos_interference: out.cosine(&embed(interf_ref)?)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedder::EmbedderConfig;
    use crate::synth::SpeakerProfile;

    #[test]
    fn identical_signals_score_one() {
        let e = Embedder::<f32>::new(EmbedderConfig::toy(), 3).unwrap();
        let a = SpeakerProfile::from_seed(1).render(10, 1.0).unwrap().audio.into_samples();
        let b = SpeakerProfile::from_seed(2).render(11, 1.0).unwrap().audio.into_samples();
        let p = cosine_probe(&e, &a, &a, &b).unwrap();
        assert!((p.cos_target - 1.0).abs() < 1e-6);
        let q = cosine_probe(&e, &b, &a, &b).unwrap();
        assert!((q.cos_interference - 1.0).abs() < 1e-6);
        assert!((-1.0..=1.0).contains(&p.cos_interference));
    }

    #[test]
    fn short_signals_rejected() {
        let e = Embedder::<f32>::new(EmbedderConfig::toy(), 3).unwrap();
        let long = vec![0.1f32; 48_000];
        assert!(cosine_probe(&e, &long[..1000], &long, &long).is_err());
    }
}
