//! Streaming enhancement: analysis, per-frame outputs from a [`GainSource`],
//! pitch comb filtering, per-band gains and overlap-add resynthesis.
//!
//! Frame `f` is processed once `lookahead` further hops have arrived, so the
//! comb filter can reach forward and the network can see ahead. Output hop
//! `s` therefore carries input samples `[480(s - L - 1), 480(s - L))`: a fixed
//! delay of `(L + 1) · 480` samples.

use crate::comb::{apply_per_band, CombState, EnhancerOutputs};
use crate::dsp::{Analyzer, ComplexSpectrum, FeatureExtractor, FrameAnalysis, Synthesizer};
use crate::embedder::SpeakerEmbedding;
use crate::enhancer::{Enhancer, EnhancerState};
use crate::error::{Error, Result};
use crate::{FRAME_SIZE, WINDOW_SIZE};

/// Supplies per-frame enhancer outputs.
pub trait GainSource {
    /// Called once per hop with the newest frame's analysis. Writes the
    /// outputs for the frame `lookahead` hops behind it.
    fn next(&mut self, analysis: &FrameAnalysis, out: &mut EnhancerOutputs) -> Result<()>;
}

/// Unit gains and no comb filtering.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentitySource;

impl GainSource for IdentitySource {
    fn next(&mut self, _: &FrameAnalysis, out: &mut EnhancerOutputs) -> Result<()> {
        *out = EnhancerOutputs::IDENTITY;
        Ok(())
    }
}

/// Replays outputs computed elsewhere, e.g. oracle masks; `outputs[f]` applies to frame `f`.
#[derive(Debug, Clone)]
pub struct PrecomputedSource {
    outputs: Vec<EnhancerOutputs>,
    lookahead: usize,
    step: usize,
}

impl PrecomputedSource {
    pub fn new(outputs: Vec<EnhancerOutputs>, lookahead: usize) -> Self {
        Self {
            outputs,
            lookahead,
            step: 0,
        }
    }
}

impl GainSource for PrecomputedSource {
    fn next(&mut self, _: &FrameAnalysis, out: &mut EnhancerOutputs) -> Result<()> {
        *out = self
            .step
            .checked_sub(self.lookahead)
            .and_then(|f| self.outputs.get(f))
            .copied()
            .unwrap_or(EnhancerOutputs::IDENTITY);
        self.step += 1;
        Ok(())
    }
}

/// Runs the enhancer network frame by frame.
pub struct NetworkSource<'a> {
    model: &'a Enhancer<f32>,
    state: EnhancerState,
}

impl<'a> NetworkSource<'a> {
    pub fn new(model: &'a Enhancer<f32>, embedding: &SpeakerEmbedding) -> Result<Self> {
        let mut state = model.new_state();
        model.condition(&mut state, embedding)?;
        Ok(Self { model, state })
    }
}

impl GainSource for NetworkSource<'_> {
    fn next(&mut self, analysis: &FrameAnalysis, out: &mut EnhancerOutputs) -> Result<()> {
        self.model.step(&mut self.state, &analysis.features, out);
        Ok(())
    }
}

/// Per-stream enhancement state. Every buffer is allocated up front;
/// [`Pipeline::process_hop`] does not allocate.
pub struct Pipeline {
    lookahead: usize,
    fx: FeatureExtractor,
    comb: CombState,
    analyzer: Analyzer,
    synth: Synthesizer,
    spectra: Vec<ComplexSpectrum>,
    periods: Vec<Option<usize>>,
    combed: Vec<f32>,
    comb_spec: ComplexSpectrum,
    out_spec: ComplexSpectrum,
    outputs: EnhancerOutputs,
    frames: u64,
}

impl Pipeline {
    pub fn new(lookahead: usize) -> Self {
        Self {
            lookahead,
            fx: FeatureExtractor::new(),
            comb: CombState::new(lookahead * FRAME_SIZE),
            analyzer: Analyzer::new(),
            synth: Synthesizer::new(),
            spectra: vec![ComplexSpectrum::zeros(); lookahead + 1],
            periods: vec![None; lookahead + 1],
            combed: vec![0.0; WINDOW_SIZE],
            comb_spec: ComplexSpectrum::zeros(),
            out_spec: ComplexSpectrum::zeros(),
            outputs: EnhancerOutputs::IDENTITY,
            frames: 0,
        }
    }

    pub fn lookahead(&self) -> usize {
        self.lookahead
    }

    /// Input-to-output delay in samples.
    pub fn latency_samples(&self) -> usize {
        (self.lookahead + 1) * FRAME_SIZE
    }

    pub fn frames(&self) -> u64 {
        self.frames
    }

    /// Outputs applied to the most recently synthesized frame.
    pub fn last_outputs(&self) -> &EnhancerOutputs {
        &self.outputs
    }

    /// Consumes one input hop and writes one output hop. Returns the VAD
    /// probability of the synthesized frame (0 while the look-ahead fills).
    pub fn process_hop<S: GainSource + ?Sized>(&mut self, hop: &[f32], source: &mut S, out: &mut [f32]) -> Result<f32> {
        if hop.len() != FRAME_SIZE || out.len() != FRAME_SIZE {
            return Err(Error::shape(format!(
                "hops must have {FRAME_SIZE} samples, got {} in and {} out",
                hop.len(),
                out.len()
            )));
        }
        let slots = self.lookahead + 1;
        let step = self.frames as usize;
        let analysis = self.fx.push_hop(hop)?;
        self.spectra[step % slots]
            .bins_mut()
            .copy_from_slice(analysis.spectrum.bins());
        self.periods[step % slots] = analysis.pitch.period();
        self.comb.push(hop);
        source.next(analysis, &mut self.outputs)?;
        self.frames += 1;
        if step < self.lookahead {
            out.fill(0.0);
            return Ok(0.0);
        }
        let slot = (step - self.lookahead) % slots;
        self.outputs = self.outputs.clamped();
        let fb = self.fx.filterbank();
        if self.outputs.strengths.iter().any(|&r| r > 0.0) {
            self.comb.filter_frame(self.periods[slot], &mut self.combed)?;
            self.analyzer.analyze_into(&self.combed, &mut self.comb_spec)?;
        }
        apply_per_band(
            &self.spectra[slot],
            &self.comb_spec,
            &self.outputs.gains,
            &self.outputs.strengths,
            fb,
            &mut self.out_spec,
        )?;
        self.synth.synthesize_into(&self.out_spec, out)?;
        Ok(self.outputs.vad)
    }
}

/// Result of [`enhance_offline`].
#[derive(Debug, Clone)]
pub struct Enhanced {
    /// Enhanced audio, delay-compensated and the same length as the input.
    pub audio: Vec<f32>,
    /// VAD probability per input frame.
    pub vad: Vec<f32>,
}

/// Streams a whole signal through a [`Pipeline`], flushing the look-ahead
/// with zeros and removing the pipeline delay.
pub fn enhance_offline<S: GainSource + ?Sized>(samples: &[f32], lookahead: usize, source: &mut S) -> Result<Enhanced> {
    let mut pipe = Pipeline::new(lookahead);
    let delay = pipe.latency_samples();
    let total = (samples.len() + delay).div_ceil(FRAME_SIZE) * FRAME_SIZE;
    let mut padded = samples.to_vec();
    padded.resize(total, 0.0);
    let mut out = vec![0.0f32; total];
    let mut vad = Vec::with_capacity(total / FRAME_SIZE);
    for (hop, dst) in padded.chunks_exact(FRAME_SIZE).zip(out.chunks_exact_mut(FRAME_SIZE)) {
        let v = pipe.process_hop(hop, source, dst)?;
        if pipe.frames() as usize > lookahead {
            vad.push(v);
        }
    }
    vad.truncate(samples.len() / FRAME_SIZE);
    Ok(Enhanced {
        audio: out[delay..delay + samples.len()].to_vec(),
        vad,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::enhancer::EnhancerConfig;
    use crate::eval::{aligned_si_snr, si_snr};
    use crate::{LOOKAHEAD_FRAMES, NB_BANDS, SAMPLE_RATE};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn test_audio(seed: u64, len: usize) -> Vec<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..len)
            .map(|n| 0.3 * (n as f32 * 2.0 * std::f32::consts::PI * 220.0 / SAMPLE_RATE as f32).sin() + rng.gen_range(-0.1..0.1))
            .collect()
    }

    #[test]
    fn latency_is_lookahead_plus_one_hop() {
        assert_eq!(Pipeline::new(LOOKAHEAD_FRAMES).latency_samples(), 1920);
        assert_eq!(Pipeline::new(0).latency_samples(), 480);
    }

    #[test]
    fn identity_streams_with_fixed_delay() {
        let x = test_audio(1, 48_000);
        let mut pipe = Pipeline::new(LOOKAHEAD_FRAMES);
        let mut out = vec![0.0f32; x.len()];
        for (hop, dst) in x.chunks_exact(FRAME_SIZE).zip(out.chunks_exact_mut(FRAME_SIZE)) {
            pipe.process_hop(hop, &mut IdentitySource, dst).unwrap();
        }
        let d = pipe.latency_samples();
        let snr = si_snr(&out[d..], &x[..x.len() - d]).unwrap();
        assert!(snr > 60.0 - 1e-9, "{snr}");
        assert!(out[..d].iter().all(|&v| v.abs() < 1e-6));
    }

    #[test]
    fn offline_identity_is_aligned() {
        let x = test_audio(2, 30_000);
        for look in [0usize, 1, 3, 5] {
            let e = enhance_offline(&x, look, &mut IdentitySource).unwrap();
            assert_eq!(e.audio.len(), x.len());
            assert!(si_snr(&e.audio, &x).unwrap() >= 59.9);
            assert_eq!(e.vad.len(), x.len() / FRAME_SIZE);
        }
    }

    #[test]
    fn precomputed_outputs_reach_their_frame() {
        let x = test_audio(3, 48_000);
        let n = x.len() / FRAME_SIZE;
        let mut outs = vec![EnhancerOutputs::IDENTITY; n];
        // Silence frames 40..60 entirely.
        for o in &mut outs[40..60] {
            o.gains = [0.0; NB_BANDS];
            o.vad = 0.25;
        }
        let e = enhance_offline(&x, 3, &mut PrecomputedSource::new(outs, 3)).unwrap();
        // Frame f's synthesis covers [480f - 480, 480f); with both of its
        // overlapping frames muted, samples [480·40, 480·59) vanish.
        assert!(e.audio[40 * FRAME_SIZE..59 * FRAME_SIZE].iter().all(|&v| v == 0.0));
        assert!(e.audio[10 * FRAME_SIZE..30 * FRAME_SIZE].iter().any(|&v| v != 0.0));
        assert_eq!(e.vad[45], 0.25);
        assert_eq!(e.vad[10], 1.0);
    }

    #[test]
    fn network_source_runs_and_is_deterministic() {
        let model = Enhancer::<f32>::new(EnhancerConfig::toy(16), 4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let emb = SpeakerEmbedding::new((0..32).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let x = test_audio(6, 24_000);
        let a = enhance_offline(&x, 3, &mut NetworkSource::new(&model, &emb).unwrap()).unwrap();
        let b = enhance_offline(&x, 3, &mut NetworkSource::new(&model, &emb).unwrap()).unwrap();
        assert_eq!(a.audio, b.audio);
        assert!(a.audio.iter().all(|v| v.is_finite()));
        // Random gains in (0, 1) keep the output correlated with the input.
        assert!(aligned_si_snr(&a.audio, &x, 2400).unwrap() > -10.0);
    }

    #[test]
    fn wrong_hop_size_is_rejected() {
        let mut pipe = Pipeline::new(3);
        let mut out = [0.0f32; FRAME_SIZE];
        assert!(pipe.process_hop(&[0.0; 100], &mut IdentitySource, &mut out).is_err());
    }
}
