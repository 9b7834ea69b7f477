//! The 68-value per-frame feature vector and the streaming extractor that produces it.

use realfft::num_complex::Complex32;

use crate::dsp::erb::ErbFilterbank;
use crate::dsp::pitch::{pitch_coherence_into, PitchEstimate, PitchEstimator, PITCH_HISTORY};
use crate::dsp::transform::{Analyzer, ComplexSpectrum};
use crate::error::Result;
use crate::{
    FRAME_SIZE, FREQ_SIZE, NB_BANDS, NB_FEATURES, NB_GENERAL_FEATURES, PITCH_MAX_PERIOD,
    PITCH_MIN_PERIOD, SAMPLE_RATE, WINDOW_SIZE,
};

/// Additive floor inside the log compression of band energies.
pub const ENERGY_EPSILON: f32 = 1e-9;
/// `log10(ENERGY_EPSILON)`, the value a silent band compresses to.
pub const LOG_FLOOR: f32 = -9.0;

/// Samples of input kept by the extractor: one analysis window plus the largest pitch lag.
pub const HISTORY_SIZE: usize = WINDOW_SIZE + PITCH_MAX_PERIOD;

/// `[band_mag; 32] ++ [pitch_coherence; 32] ++ [general; 4]`.
///
/// The general features are the normalized pitch period, the pitch correlation,
/// the frame log-energy and its change from the previous frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameFeatures {
    values: [f32; NB_FEATURES],
}

impl Default for FrameFeatures {
    fn default() -> Self {
        Self {
            values: [0.0; NB_FEATURES],
        }
    }
}

impl FrameFeatures {
    pub fn from_values(values: [f32; NB_FEATURES]) -> Self {
        Self { values }
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.values
    }

    pub fn band_mag(&self) -> &[f32] {
        &self.values[..NB_BANDS]
    }

    pub fn pitch_coherence(&self) -> &[f32] {
        &self.values[NB_BANDS..2 * NB_BANDS]
    }

    pub fn general(&self) -> &[f32] {
        &self.values[2 * NB_BANDS..]
    }

    /// Fixed rescaling applied before the networks so every feature group
    /// sits roughly in `[-1, 1]`. The pitch period is the exception: it is
    /// fed on a log scale, two units per octave and centred on 270 samples
    /// (about 180 Hz), so voices a semitone apart differ by ~0.17; unvoiced
    /// frames map to -4, off the voiced scale.
    pub fn network_input(&self, out: &mut [f32]) {
        for b in 0..NB_BANDS {
            out[b] = (self.values[b] + 5.0) / 4.0;
            out[NB_BANDS + b] = 2.0 * self.values[NB_BANDS + b] - 1.0;
        }
        let g = &self.values[2 * NB_BANDS..];
        let o = &mut out[2 * NB_BANDS..NB_FEATURES];
        o[0] = if g[0] > 0.0 {
            let period = PITCH_MIN_PERIOD as f32 + g[0] * (PITCH_MAX_PERIOD - PITCH_MIN_PERIOD) as f32;
            2.0 * (270.0 / period).log2()
        } else {
            -4.0
        };
        o[1] = g[1];
        o[2] = (g[2] + 3.0) / 3.0;
        o[3] = g[3] / 3.0;
    }
}

/// Running state for the log-energy delta feature.
#[derive(Debug, Clone, Copy)]
pub struct EnergyTrack {
    previous_log_energy: f32,
}

impl Default for EnergyTrack {
    fn default() -> Self {
        Self {
            previous_log_energy: LOG_FLOOR,
        }
    }
}

/// `log10(E + 1e-9)`; never below [`LOG_FLOOR`].
pub fn compress_energy(e: f32) -> f32 {
    (e + ENERGY_EPSILON).log10().max(LOG_FLOOR)
}

/// Pitch period mapped linearly from `[96, 768]` onto `[0, 1]`; 0 when unvoiced.
pub fn normalized_period(pitch: &PitchEstimate) -> f32 {
    pitch.period().map_or(0.0, |p| {
        (p - PITCH_MIN_PERIOD) as f32 / (PITCH_MAX_PERIOD - PITCH_MIN_PERIOD) as f32
    })
}

/// Builds one frame's feature vector and advances `track`.
pub fn assemble_features(
    energies: &[f32],
    coherences: &[f32],
    pitch: &PitchEstimate,
    track: &mut EnergyTrack,
) -> FrameFeatures {
    let mut values = [0.0f32; NB_FEATURES];
    for b in 0..NB_BANDS {
        values[b] = compress_energy(energies[b]);
        values[NB_BANDS + b] = if pitch.period().is_some() {
            coherences[b].clamp(0.0, 1.0)
        } else {
            0.0
        };
    }
    let total: f32 = energies.iter().sum();
    let log_energy = compress_energy(total);
    let general = [
        normalized_period(pitch),
        pitch.correlation(),
        log_energy,
        log_energy - track.previous_log_energy,
    ];
    values[2 * NB_BANDS..].copy_from_slice(&general);
    track.previous_log_energy = log_energy;
    debug_assert_eq!(general.len(), NB_GENERAL_FEATURES);
    FrameFeatures { values }
}

/// Everything computed for one frame.
#[derive(Debug, Clone)]
pub struct FrameAnalysis {
    /// Spectrum of the current analysis window.
    pub spectrum: ComplexSpectrum,
    /// Spectrum of the window delayed by the pitch period (zeros when unvoiced).
    pub delayed: ComplexSpectrum,
    pub band_energy: [f32; NB_BANDS],
    pub pitch: PitchEstimate,
    pub coherence: [f32; NB_BANDS],
    pub features: FrameFeatures,
}

/// Streaming feature extractor for one audio stream.
///
/// Frame `t` is emitted as soon as samples `[t·480, (t+1)·480)` have been
/// pushed; its analysis window covers the preceding hop as well.
pub struct FeatureExtractor {
    fb: ErbFilterbank,
    analyzer: Analyzer,
    pitch: PitchEstimator,
    history: Vec<f32>,
    pending: Vec<f32>,
    track: EnergyTrack,
    analysis: FrameAnalysis,
    scratch: [[f32; NB_BANDS]; 3],
    frames: u64,
}

impl FeatureExtractor {
    pub fn new() -> Self {
        let fb = ErbFilterbank::new(FREQ_SIZE, SAMPLE_RATE).expect("default filterbank is valid");
        Self::with_filterbank(fb)
    }

    pub fn with_filterbank(fb: ErbFilterbank) -> Self {
        Self {
            fb,
            analyzer: Analyzer::new(),
            pitch: PitchEstimator::new(),
            history: vec![0.0; HISTORY_SIZE],
            pending: Vec::with_capacity(FRAME_SIZE),
            track: EnergyTrack::default(),
            analysis: FrameAnalysis {
                spectrum: ComplexSpectrum::zeros(),
                delayed: ComplexSpectrum::zeros(),
                band_energy: [0.0; NB_BANDS],
                pitch: PitchEstimate::UNVOICED,
                coherence: [0.0; NB_BANDS],
                features: FrameFeatures::default(),
            },
            scratch: [[0.0; NB_BANDS]; 3],
            frames: 0,
        }
    }

    pub fn filterbank(&self) -> &ErbFilterbank {
        &self.fb
    }

    /// Number of frames emitted so far.
    pub fn frames(&self) -> u64 {
        self.frames
    }

    /// The most recent [`HISTORY_SIZE`] input samples.
    pub fn history(&self) -> &[f32] {
        &self.history
    }

    pub fn last(&self) -> &FrameAnalysis {
        &self.analysis
    }

    /// Consumes exactly one hop of new samples and analyzes the resulting frame.
    pub fn push_hop(&mut self, hop: &[f32]) -> Result<&FrameAnalysis> {
        if hop.len() != FRAME_SIZE {
            return Err(crate::Error::shape(format!(
                "hop needs {FRAME_SIZE} samples, got {}",
                hop.len()
            )));
        }
        self.history.copy_within(FRAME_SIZE.., 0);
        self.history[HISTORY_SIZE - FRAME_SIZE..].copy_from_slice(hop);
        self.analyze_current()?;
        self.frames += 1;
        Ok(&self.analysis)
    }

    /// Pushes an arbitrary number of samples, calling `on_frame` for every completed frame.
    pub fn push_samples<F>(&mut self, mut samples: &[f32], mut on_frame: F) -> Result<()>
    where
        F: FnMut(&FrameAnalysis),
    {
        while !samples.is_empty() {
            let take = (FRAME_SIZE - self.pending.len()).min(samples.len());
            self.pending.extend_from_slice(&samples[..take]);
            samples = &samples[take..];
            if self.pending.len() == FRAME_SIZE {
                let hop = std::mem::take(&mut self.pending);
                let res = self.push_hop(&hop).map(&mut on_frame);
                self.pending = hop;
                self.pending.clear();
                res?;
            }
        }
        Ok(())
    }

    fn analyze_current(&mut self) -> Result<()> {
        let window = &self.history[HISTORY_SIZE - WINDOW_SIZE..];
        let a = &mut self.analysis;
        self.analyzer.analyze_into(window, &mut a.spectrum)?;
        let bins = a.spectrum.bins();
        self.fb.accumulate(|k| bins[k].norm_sqr(), &mut a.band_energy);

        a.pitch = self.pitch.estimate(&self.history[HISTORY_SIZE - PITCH_HISTORY..]);
        match a.pitch.period() {
            Some(p) => {
                let end = HISTORY_SIZE - p;
                let delayed = &self.history[end - WINDOW_SIZE..end];
                self.analyzer.analyze_into(delayed, &mut a.delayed)?;
                let [cross, ex, ep] = &mut self.scratch;
                pitch_coherence_into(&a.spectrum, &a.delayed, &self.fb, cross, ex, ep, &mut a.coherence);
            }
            None => {
                a.delayed.bins_mut().fill(Complex32::new(0.0, 0.0));
                a.coherence = [0.0; NB_BANDS];
            }
        }
        a.features = assemble_features(&a.band_energy, &a.coherence, &a.pitch, &mut self.track);
        Ok(())
    }
}

impl Default for FeatureExtractor {
    fn default() -> Self {
        Self::new()
    }
}

/// Per-frame analyses of a whole signal; trailing samples short of a hop are ignored.
pub fn analyze_signal(samples: &[f32]) -> Result<Vec<FrameAnalysis>> {
    let mut fx = FeatureExtractor::new();
    let mut out = Vec::with_capacity(samples.len() / FRAME_SIZE);
    for hop in samples.chunks_exact(FRAME_SIZE) {
        out.push(fx.push_hop(hop)?.clone());
    }
    Ok(out)
}

/// Feature sequence of a whole signal.
pub fn extract_features(samples: &[f32]) -> Result<Vec<FrameFeatures>> {
    let mut fx = FeatureExtractor::new();
    let mut out = Vec::with_capacity(samples.len() / FRAME_SIZE);
    for hop in samples.chunks_exact(FRAME_SIZE) {
        out.push(fx.push_hop(hop)?.features);
    }
    Ok(out)
}
