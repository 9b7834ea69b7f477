//! Pitch comb filtering, per-band gain/strength application and the
//! per-frame enhancer output record.

use crate::dsp::{ComplexSpectrum, ErbFilterbank};
use crate::error::{Error, Result};
use crate::{FREQ_SIZE, NB_BANDS, PITCH_MAX_PERIOD, WINDOW_SIZE};

/// Comb taps for offsets `-2P, -P, 0, +P, +2P`.
pub const COMB_TAPS: [f32; 5] = [0.125, 0.25, 0.25, 0.25, 0.125];

/// Per-frame outputs of the enhancer network.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnhancerOutputs {
    pub gains: [f32; NB_BANDS],
    pub strengths: [f32; NB_BANDS],
    pub vad: f32,
}

impl EnhancerOutputs {
    /// Unit gains, no comb filtering: the pipeline passes audio through unchanged.
    pub const IDENTITY: EnhancerOutputs = EnhancerOutputs {
        gains: [1.0; NB_BANDS],
        strengths: [0.0; NB_BANDS],
        vad: 1.0,
    };

    /// Clamps every field into `[0, 1]`, mapping NaN to 0.
    pub fn clamped(mut self) -> Self {
        let c = |v: f32| if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
        self.gains.iter_mut().for_each(|g| *g = c(*g));
        self.strengths.iter_mut().for_each(|r| *r = c(*r));
        self.vad = c(self.vad);
        self
    }
}

/// Tap weights for `period` when only `lead` future samples are available.
///
/// A forward tap reaching past the available look-ahead hands its weight to
/// the next shorter admissible offset, so the taps always sum to one.
pub fn effective_taps(period: usize, lead: usize) -> [f32; 5] {
    let mut taps = COMB_TAPS;
    for k in (1..=2usize).rev() {
        if k * period > lead {
            let w = taps[2 + k];
            taps[2 + k] = 0.0;
            taps[2 + k - 1] += w;
        }
    }
    taps
}

/// `out[n] = Σ_k taps[k] · x[start + n + (k-2)·period]`, for `n` in `0..out.len()`.
///
/// `signal` must contain every referenced sample.
pub fn comb_filter(signal: &[f32], start: usize, period: usize, taps: &[f32; 5], out: &mut [f32]) {
    out.fill(0.0);
    for (k, &w) in taps.iter().enumerate() {
        if w == 0.0 {
            continue;
        }
        let offset = start as isize + (k as isize - 2) * period as isize;
        assert!(offset >= 0, "comb tap reaches before the delay line");
        let src = &signal[offset as usize..offset as usize + out.len()];
        for (o, &x) in out.iter_mut().zip(src) {
            *o += w * x;
        }
    }
}

/// Delay line feeding the comb filter for one stream.
///
/// The window being filtered ends `lead` samples before the newest input, so
/// forward taps can use up to `lead` samples of look-ahead.
#[derive(Debug, Clone)]
pub struct CombState {
    line: Vec<f32>,
    lead: usize,
}

impl CombState {
    pub fn new(lead: usize) -> Self {
        Self {
            line: vec![0.0; 2 * PITCH_MAX_PERIOD + WINDOW_SIZE + lead],
            lead,
        }
    }

    pub fn lead(&self) -> usize {
        self.lead
    }

    /// Appends one hop of input.
    pub fn push(&mut self, hop: &[f32]) {
        let n = hop.len();
        self.line.copy_within(n.., 0);
        let len = self.line.len();
        self.line[len - n..].copy_from_slice(hop);
    }

    /// The unfiltered window the next call to [`CombState::filter_frame`] operates on.
    pub fn window(&self) -> &[f32] {
        let end = self.line.len() - self.lead;
        &self.line[end - WINDOW_SIZE..end]
    }

    /// Comb-filters the current window at `period`; an absent period copies the input.
    pub fn filter_frame(&self, period: Option<usize>, out: &mut [f32]) -> Result<()> {
        if out.len() != WINDOW_SIZE {
            return Err(Error::shape(format!(
                "comb output needs {WINDOW_SIZE} samples, got {}",
                out.len()
            )));
        }
        let start = self.line.len() - self.lead - WINDOW_SIZE;
        match period {
            Some(p) if p > 0 && p <= PITCH_MAX_PERIOD => {
                comb_filter(&self.line, start, p, &effective_taps(p, self.lead), out);
            }
            Some(p) => return Err(Error::input(format!("pitch period {p} out of range"))),
            None => out.copy_from_slice(self.window()),
        }
        Ok(())
    }
}

/// Blends the noisy and comb-filtered spectra per band, then applies the band gains.
///
/// Band values reach bins through the filterbank's triangular weights:
/// `Y = g · ((1 - r) · X + r · C)`.
pub fn apply_per_band(
    noisy: &ComplexSpectrum,
    combed: &ComplexSpectrum,
    gains: &[f32],
    strengths: &[f32],
    fb: &ErbFilterbank,
    out: &mut ComplexSpectrum,
) -> Result<()> {
    if gains.len() != NB_BANDS || strengths.len() != NB_BANDS {
        return Err(Error::shape(format!(
            "expected {NB_BANDS} gains and strengths, got {} and {}",
            gains.len(),
            strengths.len()
        )));
    }
    if fb.n_bins() != FREQ_SIZE {
        return Err(Error::shape("filterbank does not match the spectrum size"));
    }
    let (x, c) = (noisy.bins(), combed.bins());
    for (k, y) in out.bins_mut().iter_mut().enumerate() {
        let g = fb.interpolate_at(gains, k);
        let r = fb.interpolate_at(strengths, k);
        *y = if r == 0.0 {
            x[k] * g
        } else {
            (x[k] * (1.0 - r) + c[k] * r) * g
        };
    }
    Ok(())
}
