//! Windowed real transform and overlap-add resynthesis.
//!
//! Frames are [`WINDOW_SIZE`] samples long with a hop of [`FRAME_SIZE`]. The
//! same power-complementary window is used for analysis and synthesis, so
//! `w[n]^2 + w[n + FRAME_SIZE]^2 == 1` and an unmodified spectrum stream is
//! reconstructed exactly (delayed by one hop).

use std::sync::Arc;

use realfft::num_complex::Complex32;
use realfft::{ComplexToReal, RealFftPlanner, RealToComplex};

use crate::error::{Error, Result};
use crate::{FRAME_SIZE, FREQ_SIZE, WINDOW_SIZE};

/// One-sided spectrum of a windowed frame, [`FREQ_SIZE`] bins.
///
/// Bins are scaled by `1/sqrt(WINDOW_SIZE)` so that [`ComplexSpectrum::energy`]
/// equals the energy of the windowed time-domain frame.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexSpectrum {
    bins: Vec<Complex32>,
}

impl ComplexSpectrum {
    pub fn zeros() -> Self {
        Self {
            bins: vec![Complex32::new(0.0, 0.0); FREQ_SIZE],
        }
    }

    pub fn from_bins(bins: Vec<Complex32>) -> Result<Self> {
        if bins.len() != FREQ_SIZE {
            return Err(Error::shape(format!(
                "spectrum needs {FREQ_SIZE} bins, got {}",
                bins.len()
            )));
        }
        Ok(Self { bins })
    }

    pub fn bins(&self) -> &[Complex32] {
        &self.bins
    }

    pub fn bins_mut(&mut self) -> &mut [Complex32] {
        &mut self.bins
    }

    /// Parseval energy of the one-sided spectrum (interior bins count twice).
    pub fn energy(&self) -> f64 {
        let last = self.bins.len() - 1;
        self.bins
            .iter()
            .enumerate()
            .map(|(k, c)| {
                let p = c.norm_sqr() as f64;
                if k == 0 || k == last {
                    p
                } else {
                    2.0 * p
                }
            })
            .sum()
    }
}

/// The analysis/synthesis window: `sin(pi/2 * sin^2(pi (n + 1/2) / N))`.
pub fn vorbis_window() -> Vec<f32> {
    let n = WINDOW_SIZE as f64;
    (0..WINDOW_SIZE)
        .map(|i| {
            let s = (std::f64::consts::PI * (i as f64 + 0.5) / n).sin();
            (std::f64::consts::FRAC_PI_2 * s * s).sin() as f32
        })
        .collect()
}

/// Forward transform with preallocated buffers; `analyze_into` does not allocate.
pub struct Analyzer {
    fft: Arc<dyn RealToComplex<f32>>,
    window: Vec<f32>,
    input: Vec<f32>,
    scratch: Vec<Complex32>,
}

impl Analyzer {
    pub fn new() -> Self {
        let fft = RealFftPlanner::<f32>::new().plan_fft_forward(WINDOW_SIZE);
        let scratch = fft.make_scratch_vec();
        Self {
            fft,
            window: vorbis_window(),
            input: vec![0.0; WINDOW_SIZE],
            scratch,
        }
    }

    pub fn window(&self) -> &[f32] {
        &self.window
    }

    /// Windows `frame` and writes its spectrum into `out`.
    pub fn analyze_into(&mut self, frame: &[f32], out: &mut ComplexSpectrum) -> Result<()> {
        if frame.len() != WINDOW_SIZE {
            return Err(Error::shape(format!(
                "analysis frame needs {WINDOW_SIZE} samples, got {}",
                frame.len()
            )));
        }
        for ((dst, &x), &w) in self.input.iter_mut().zip(frame).zip(&self.window) {
            *dst = x * w;
        }
        self.fft
            .process_with_scratch(&mut self.input, &mut out.bins, &mut self.scratch)
            .map_err(|e| Error::Numeric(e.to_string()))?;
        let scale = 1.0 / (WINDOW_SIZE as f32).sqrt();
        for c in out.bins.iter_mut() {
            *c *= scale;
        }
        Ok(())
    }

    pub fn analyze(&mut self, frame: &[f32]) -> Result<ComplexSpectrum> {
        let mut out = ComplexSpectrum::zeros();
        self.analyze_into(frame, &mut out)?;
        Ok(out)
    }
}

impl Default for Analyzer {
    fn default() -> Self {
        Self::new()
    }
}

/// Convenience wrapper around [`Analyzer`] for one-off frames.
pub fn analyze_frame(frame: &[f32]) -> Result<ComplexSpectrum> {
    Analyzer::new().analyze(frame)
}

/// Inverse transform plus windowed overlap-add. Each call consumes one frame
/// spectrum and emits [`FRAME_SIZE`] finished samples.
pub struct Synthesizer {
    ifft: Arc<dyn ComplexToReal<f32>>,
    window: Vec<f32>,
    spectrum: Vec<Complex32>,
    time: Vec<f32>,
    scratch: Vec<Complex32>,
    overlap: Vec<f32>,
}

impl Synthesizer {
    pub fn new() -> Self {
        let ifft = RealFftPlanner::<f32>::new().plan_fft_inverse(WINDOW_SIZE);
        let scratch = ifft.make_scratch_vec();
        Self {
            ifft,
            window: vorbis_window(),
            spectrum: vec![Complex32::new(0.0, 0.0); FREQ_SIZE],
            time: vec![0.0; WINDOW_SIZE],
            scratch,
            overlap: vec![0.0; FRAME_SIZE],
        }
    }

    pub fn synthesize_into(&mut self, spectrum: &ComplexSpectrum, out: &mut [f32]) -> Result<()> {
        if out.len() != FRAME_SIZE {
            return Err(Error::shape(format!(
                "synthesis output needs {FRAME_SIZE} samples, got {}",
                out.len()
            )));
        }
        self.spectrum.copy_from_slice(&spectrum.bins);
        // A real signal has purely real DC and Nyquist bins.
        self.spectrum[0].im = 0.0;
        self.spectrum[FREQ_SIZE - 1].im = 0.0;
        self.ifft
            .process_with_scratch(&mut self.spectrum, &mut self.time, &mut self.scratch)
            .map_err(|e| Error::Numeric(e.to_string()))?;
        let scale = 1.0 / (WINDOW_SIZE as f32).sqrt();
        for (t, &w) in self.time.iter_mut().zip(&self.window) {
            *t *= scale * w;
        }
        for i in 0..FRAME_SIZE {
            out[i] = self.overlap[i] + self.time[i];
            self.overlap[i] = self.time[FRAME_SIZE + i];
        }
        Ok(())
    }

    pub fn synthesize(&mut self, spectrum: &ComplexSpectrum) -> Result<Vec<f32>> {
        let mut out = vec![0.0; FRAME_SIZE];
        self.synthesize_into(spectrum, &mut out)?;
        Ok(out)
    }
}

impl Default for Synthesizer {
    fn default() -> Self {
        Self::new()
    }
}

/// Applies `shape(bin, spectrum)` to every frame of `signal` offline and
/// returns a time-aligned result of the same length.
pub(crate) fn process_offline<F>(signal: &[f32], mut shape: F) -> Result<Vec<f32>>
where
    F: FnMut(&mut ComplexSpectrum),
{
    let n_frames = signal.len().div_ceil(FRAME_SIZE) + 1;
    // One hop of leading zeros so frame 0 is centred on the first hop.
    let mut padded = vec![0.0f32; FRAME_SIZE + (n_frames + 1) * FRAME_SIZE];
    padded[FRAME_SIZE..FRAME_SIZE + signal.len()].copy_from_slice(signal);
    let mut analyzer = Analyzer::new();
    let mut synth = Synthesizer::new();
    let mut spec = ComplexSpectrum::zeros();
    let mut out = Vec::with_capacity((n_frames + 1) * FRAME_SIZE);
    let mut block = vec![0.0f32; FRAME_SIZE];
    for t in 0..=n_frames {
        analyzer.analyze_into(&padded[t * FRAME_SIZE..t * FRAME_SIZE + WINDOW_SIZE], &mut spec)?;
        shape(&mut spec);
        synth.synthesize_into(&spec, &mut block)?;
        out.extend_from_slice(&block);
    }
    // Output block t reconstructs padded samples [t·hop, (t+1)·hop).
    let start = FRAME_SIZE;
    Ok(out[start..start + signal.len()].to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sine(freq: f64, len: usize) -> Vec<f32> {
        (0..len)
            .map(|n| (2.0 * std::f64::consts::PI * freq * n as f64 / crate::SAMPLE_RATE as f64).sin() as f32)
            .collect()
    }

    #[test]
    fn window_is_power_complementary() {
        let w = vorbis_window();
        for n in 0..FRAME_SIZE {
            let s = w[n] * w[n] + w[n + FRAME_SIZE] * w[n + FRAME_SIZE];
            assert!((s - 1.0).abs() < 1e-6, "n={n} s={s}");
        }
    }

    #[test]
    fn zero_frame_gives_zero_spectrum() {
        let spec = analyze_frame(&[0.0; WINDOW_SIZE]).unwrap();
        assert!(spec.bins().iter().all(|c| c.norm() == 0.0));
    }

    #[test]
    fn tone_peaks_at_expected_bin() {
        let spec = analyze_frame(&sine(1000.0, WINDOW_SIZE)).unwrap();
        let peak = spec
            .bins()
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.norm().total_cmp(&b.1.norm()))
            .unwrap()
            .0;
        // round(1000 * 960 / 48000)
        assert_eq!(peak, 20);
    }

    #[test]
    fn parseval_matches_windowed_energy() {
        let x: Vec<f32> = (0..WINDOW_SIZE)
            .map(|n| ((n * 7919 % 613) as f32 / 613.0 - 0.5) + 0.3 * (n as f32 * 0.05).sin())
            .collect();
        let w = vorbis_window();
        let direct: f64 = x.iter().zip(&w).map(|(&a, &b)| ((a * b) as f64).powi(2)).sum();
        let spec = analyze_frame(&x).unwrap();
        assert!((spec.energy() - direct).abs() / direct < 1e-4);
    }

    #[test]
    fn analysis_is_linear() {
        let a = sine(300.0, WINDOW_SIZE);
        let b = sine(4321.0, WINDOW_SIZE);
        let sum: Vec<f32> = a.iter().zip(&b).map(|(x, y)| 2.0 * x - 0.5 * y).collect();
        let (sa, sb, ss) = (
            analyze_frame(&a).unwrap(),
            analyze_frame(&b).unwrap(),
            analyze_frame(&sum).unwrap(),
        );
        for k in 0..FREQ_SIZE {
            let expect = sa.bins()[k] * 2.0 - sb.bins()[k] * 0.5;
            assert!((ss.bins()[k] - expect).norm() < 1e-4);
        }
    }

    #[test]
    fn wrong_length_is_rejected() {
        assert!(analyze_frame(&[0.0; 100]).is_err());
    }

    #[test]
    fn zero_spectra_give_zero_output() {
        let mut synth = Synthesizer::new();
        let zero = ComplexSpectrum::zeros();
        for _ in 0..4 {
            assert!(synth.synthesize(&zero).unwrap().iter().all(|&s| s == 0.0));
        }
    }

    #[test]
    fn offline_identity_reconstructs() {
        let x = sine(440.0, 5000);
        let y = process_offline(&x, |_| {}).unwrap();
        assert_eq!(y.len(), x.len());
        let err = x.iter().zip(&y).map(|(a, b)| (a - b).abs()).fold(0.0f32, f32::max);
        assert!(err < 1e-5, "max error {err}");
    }
}
