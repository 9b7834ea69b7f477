//! Pitch period search and per-band pitch coherence.

use crate::dsp::erb::ErbFilterbank;
use crate::dsp::transform::ComplexSpectrum;
use crate::{NB_BANDS, PITCH_MAX_PERIOD, PITCH_MIN_PERIOD};

/// Samples correlated at each lag.
pub const PITCH_CORR_WINDOW: usize = 768;
/// History needed by [`estimate_pitch`]: the correlation window plus the largest lag.
pub const PITCH_HISTORY: usize = PITCH_CORR_WINDOW + PITCH_MAX_PERIOD;
/// Peak normalized correlation below which a frame is declared unvoiced.
pub const VOICING_THRESHOLD: f64 = 0.3;
/// Octave-error guard: the search settles near the smallest lag reaching this
/// fraction of the peak correlation.
pub const OCTAVE_RATIO: f64 = 0.85;

/// Outcome of the pitch search for one frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PitchEstimate {
    period: Option<usize>,
    correlation: f32,
}

impl PitchEstimate {
    pub const UNVOICED: PitchEstimate = PitchEstimate {
        period: None,
        correlation: 0.0,
    };

    pub fn voiced(period: usize, correlation: f32) -> Self {
        debug_assert!((PITCH_MIN_PERIOD..=PITCH_MAX_PERIOD).contains(&period));
        Self {
            period: Some(period),
            correlation,
        }
    }

    pub fn period(&self) -> Option<usize> {
        self.period
    }

    pub fn correlation(&self) -> f32 {
        self.correlation
    }

    pub fn frequency_hz(&self) -> Option<f64> {
        self.period.map(|p| crate::SAMPLE_RATE as f64 / p as f64)
    }
}

/// Exhaustive normalized-autocorrelation pitch search with reusable buffers.
#[derive(Debug, Clone)]
pub struct PitchEstimator {
    prefix: Vec<f64>,
    corr: Vec<f64>,
}

impl Default for PitchEstimator {
    fn default() -> Self {
        Self::new()
    }
}

impl PitchEstimator {
    pub fn new() -> Self {
        Self {
            prefix: vec![0.0; PITCH_HISTORY + 1],
            corr: vec![0.0; PITCH_MAX_PERIOD + 1],
        }
    }

    /// Estimates the period of the most recent [`PITCH_CORR_WINDOW`] samples
    /// of `history`, which must hold at least [`PITCH_HISTORY`] samples.
    pub fn estimate(&mut self, history: &[f32]) -> PitchEstimate {
        assert!(
            history.len() >= PITCH_HISTORY,
            "pitch search needs {PITCH_HISTORY} samples of history"
        );
        let x = &history[history.len() - PITCH_HISTORY..];
        self.prefix[0] = 0.0;
        for (i, &v) in x.iter().enumerate() {
            self.prefix[i + 1] = self.prefix[i] + v as f64 * v as f64;
        }
        let start = PITCH_MAX_PERIOD;
        let frame = &x[start..];
        let frame_energy = self.prefix[PITCH_HISTORY] - self.prefix[start];
        if frame_energy <= 0.0 {
            return PitchEstimate::UNVOICED;
        }

        let mut peak = f64::NEG_INFINITY;
        for lag in PITCH_MIN_PERIOD..=PITCH_MAX_PERIOD {
            let lagged = &x[start - lag..PITCH_HISTORY - lag];
            let lag_energy = (self.prefix[PITCH_HISTORY - lag] - self.prefix[start - lag]).max(0.0);
            let r = if lag_energy > 0.0 {
                dot(frame, lagged) / (frame_energy * lag_energy).sqrt()
            } else {
                0.0
            };
            self.corr[lag] = r;
            peak = peak.max(r);
        }
        if peak < VOICING_THRESHOLD {
            return PitchEstimate::UNVOICED;
        }

        let target = OCTAVE_RATIO * peak;
        let first = (PITCH_MIN_PERIOD..=PITCH_MAX_PERIOD)
            .find(|&l| self.corr[l] >= target)
            .unwrap_or(PITCH_MIN_PERIOD);
        // The first qualifying lag may sit on the flank of the true peak (or
        // on a ripple from high harmonics); take the best lag within half a
        // period of it, which stays clear of the next multiple.
        let last = (first + first / 2).min(PITCH_MAX_PERIOD);
        let mut lag = first;
        for l in first..=last {
            if self.corr[l] > self.corr[lag] {
                lag = l;
            }
        }
        PitchEstimate::voiced(lag, self.corr[lag].clamp(-1.0, 1.0) as f32)
    }
}

/// One-shot form of [`PitchEstimator::estimate`].
pub fn estimate_pitch(history: &[f32]) -> PitchEstimate {
    PitchEstimator::new().estimate(history)
}

fn dot(a: &[f32], b: &[f32]) -> f64 {
    let mut acc = [0.0f32; 8];
    let (ca, cb) = (a.chunks_exact(8), b.chunks_exact(8));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for k in 0..8 {
            acc[k] += x[k] * y[k];
        }
    }
    let mut sum: f64 = acc.iter().map(|&v| v as f64).sum();
    for (x, y) in ra.iter().zip(rb) {
        sum += (*x as f64) * (*y as f64);
    }
    sum
}

/// Per-band normalized correlation between a frame spectrum and the spectrum
/// of the same frame delayed by one pitch period, clamped to `[0, 1]`.
pub fn pitch_coherence_into(
    frame: &ComplexSpectrum,
    delayed: &ComplexSpectrum,
    fb: &ErbFilterbank,
    cross: &mut [f32],
    ex: &mut [f32],
    ep: &mut [f32],
    out: &mut [f32],
) {
    let (x, p) = (frame.bins(), delayed.bins());
    fb.accumulate(|k| x[k].re * p[k].re + x[k].im * p[k].im, cross);
    fb.accumulate(|k| x[k].norm_sqr(), ex);
    fb.accumulate(|k| p[k].norm_sqr(), ep);
    for b in 0..NB_BANDS {
        let den = (ex[b] as f64 * ep[b] as f64).sqrt();
        out[b] = if den > 1e-12 {
            (cross[b] as f64 / den).clamp(0.0, 1.0) as f32
        } else {
            0.0
        };
    }
}

/// Allocating convenience form of [`pitch_coherence_into`]; an absent pitch
/// yields all zeros.
pub fn pitch_coherence(
    frame: &ComplexSpectrum,
    delayed: &ComplexSpectrum,
    pitch: &PitchEstimate,
    fb: &ErbFilterbank,
) -> [f32; NB_BANDS] {
    let mut out = [0.0; NB_BANDS];
    if pitch.period().is_some() {
        let (mut c, mut e1, mut e2) = ([0.0; NB_BANDS], [0.0; NB_BANDS], [0.0; NB_BANDS]);
        pitch_coherence_into(frame, delayed, fb, &mut c, &mut e1, &mut e2, &mut out);
    }
    out
}
