//! Analysis front end: windowed transform, ERB bands, pitch and features.

pub mod erb;
pub mod features;
pub mod pitch;
pub mod transform;

pub use erb::ErbFilterbank;
pub use features::{
    analyze_signal, assemble_features, extract_features, EnergyTrack, FeatureExtractor,
    FrameAnalysis, FrameFeatures,
};
pub use pitch::{estimate_pitch, pitch_coherence, PitchEstimate, PitchEstimator};
pub use transform::{analyze_frame, Analyzer, ComplexSpectrum, Synthesizer};

/// `E[band] = Σ_bin w[band][bin] · |X[bin]|²`.
pub fn band_energies(spectrum: &ComplexSpectrum, fb: &ErbFilterbank) -> crate::Result<[f32; crate::NB_BANDS]> {
    if spectrum.bins().len() != fb.n_bins() {
        return Err(crate::Error::shape(format!(
            "spectrum has {} bins, filterbank expects {}",
            spectrum.bins().len(),
            fb.n_bins()
        )));
    }
    let mut out = [0.0; crate::NB_BANDS];
    let bins = spectrum.bins();
    fb.accumulate(|k| bins[k].norm_sqr(), &mut out);
    Ok(out)
}
