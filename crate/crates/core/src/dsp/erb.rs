//! Triangular bands spaced uniformly on the ERB-rate scale.

use crate::error::{Error, Result};
use crate::{NB_BANDS, SAMPLE_RATE};

/// ERB-rate (number of ERBs below `hz`), Glasberg & Moore form.
pub fn erb_rate(hz: f64) -> f64 {
    21.4 * (1.0 + 0.00437 * hz).log10()
}

/// Inverse of [`erb_rate`].
pub fn erb_rate_to_hz(rate: f64) -> f64 {
    (10f64.powf(rate / 21.4) - 1.0) / 0.00437
}

/// Equivalent rectangular bandwidth of the auditory filter centred at `hz`.
pub fn erb_bandwidth(hz: f64) -> f64 {
    24.7 * (4.37 * hz / 1000.0 + 1.0)
}

/// 32 triangular bands over a one-sided spectrum.
///
/// Adjacent band centres bound each triangle, so every bin belongs to at most
/// two bands and the weights at each bin sum to one. Band 0 is anchored at DC
/// and the last band at Nyquist.
#[derive(Debug, Clone)]
pub struct ErbFilterbank {
    n_bins: usize,
    centers_hz: Vec<f64>,
    /// Per bin: the lower band index and its weight; band `lower + 1` gets `1 - weight`.
    lower: Vec<usize>,
    lower_weight: Vec<f32>,
}

impl ErbFilterbank {
    /// Designs the filterbank for a spectrum with `n_bins` bins spanning 0 to `sample_rate / 2`.
    pub fn new(n_bins: usize, sample_rate: u32) -> Result<Self> {
        if sample_rate != SAMPLE_RATE {
            return Err(Error::Config(format!(
                "filterbank requires a {SAMPLE_RATE} Hz sample rate, got {sample_rate}"
            )));
        }
        if n_bins < 64 {
            return Err(Error::Config(format!("need at least 64 bins, got {n_bins}")));
        }
        let nyquist = sample_rate as f64 / 2.0;
        let top = erb_rate(nyquist);
        let centers_hz: Vec<f64> = (0..NB_BANDS)
            .map(|i| erb_rate_to_hz(top * i as f64 / (NB_BANDS - 1) as f64))
            .collect();
        let bin_hz = nyquist / (n_bins - 1) as f64;
        let centers_bin: Vec<f64> = centers_hz.iter().map(|f| f / bin_hz).collect();

        let mut lower = Vec::with_capacity(n_bins);
        let mut lower_weight = Vec::with_capacity(n_bins);
        let mut band = 0;
        for bin in 0..n_bins {
            let pos = bin as f64;
            while band + 2 < NB_BANDS && pos > centers_bin[band + 1] {
                band += 1;
            }
            let (lo, hi) = (centers_bin[band], centers_bin[band + 1]);
            let w = ((hi - pos) / (hi - lo)).clamp(0.0, 1.0);
            lower.push(band);
            lower_weight.push(w as f32);
        }

        let fb = Self {
            n_bins,
            centers_hz,
            lower,
            lower_weight,
        };
        // Every band must dominate at least one bin, otherwise it is not
        // resolvable at this spectral resolution.
        for b in 0..NB_BANDS {
            if !(0..n_bins).any(|bin| fb.weight(b, bin) >= 0.5) {
                return Err(Error::Config(format!(
                    "{n_bins} bins cannot give band {b} a dedicated bin"
                )));
            }
        }
        Ok(fb)
    }

    pub fn n_bins(&self) -> usize {
        self.n_bins
    }

    pub fn n_bands(&self) -> usize {
        NB_BANDS
    }

    pub fn band_centers(&self) -> &[f64] {
        &self.centers_hz
    }

    /// Weight of `band` at `bin`.
    pub fn weight(&self, band: usize, bin: usize) -> f32 {
        let lo = self.lower[bin];
        if band == lo {
            self.lower_weight[bin]
        } else if band == lo + 1 {
            1.0 - self.lower_weight[bin]
        } else {
            0.0
        }
    }

    /// Dense `[NB_BANDS][n_bins]` weight matrix.
    pub fn weights(&self) -> Vec<Vec<f32>> {
        (0..NB_BANDS)
            .map(|band| (0..self.n_bins).map(|bin| self.weight(band, bin)).collect())
            .collect()
    }

    /// Accumulates `value(bin)` into bands: `out[band] = Σ_bin w[band][bin] · value(bin)`.
    pub fn accumulate<F>(&self, mut value: F, out: &mut [f32])
    where
        F: FnMut(usize) -> f32,
    {
        out.fill(0.0);
        for bin in 0..self.n_bins {
            let v = value(bin);
            let lo = self.lower[bin];
            let w = self.lower_weight[bin];
            out[lo] += w * v;
            out[lo + 1] += (1.0 - w) * v;
        }
    }

    /// Interpolates per-band values onto bins with the same triangular weights.
    pub fn interpolate(&self, bands: &[f32], out: &mut [f32]) {
        for bin in 0..self.n_bins {
            let lo = self.lower[bin];
            let w = self.lower_weight[bin];
            out[bin] = w * bands[lo] + (1.0 - w) * bands[lo + 1];
        }
    }

    pub fn interpolate_at(&self, bands: &[f32], bin: usize) -> f32 {
        let lo = self.lower[bin];
        let w = self.lower_weight[bin];
        w * bands[lo] + (1.0 - w) * bands[lo + 1]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::FREQ_SIZE;

    fn fb() -> ErbFilterbank {
        ErbFilterbank::new(FREQ_SIZE, SAMPLE_RATE).unwrap()
    }

    #[test]
    fn partition_of_unity() {
        let fb = fb();
        let w = fb.weights();
        assert_eq!(w.len(), 32);
        for bin in 0..FREQ_SIZE {
            let s: f64 = w.iter().map(|row| row[bin] as f64).sum();
            assert!((s - 1.0).abs() < 1e-6, "bin {bin}: {s}");
        }
    }

    #[test]
    fn dc_belongs_to_band_zero() {
        let fb = fb();
        assert_eq!(fb.weight(0, 0), 1.0);
        assert!((1..32).all(|b| fb.weight(b, 0) == 0.0));
    }

    #[test]
    fn at_most_two_bands_per_bin_and_triangular_profiles() {
        let w = fb().weights();
        for bin in 0..FREQ_SIZE {
            assert!(w.iter().filter(|row| row[bin] > 0.0).count() <= 2);
        }
        for row in &w {
            let peak = row
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1))
                .unwrap()
                .0;
            assert!(row[..=peak].windows(2).all(|p| p[0] <= p[1]));
            assert!(row[peak..].windows(2).all(|p| p[0] >= p[1]));
            // Support is contiguous.
            let nz: Vec<usize> = (0..row.len()).filter(|&i| row[i] > 0.0).collect();
            assert_eq!(nz.last().unwrap() - nz[0] + 1, nz.len());
        }
    }

    #[test]
    fn centers_follow_erb_spacing() {
        let fb = fb();
        let c = fb.band_centers();
        // Independent evaluation: uniform steps of the ERB-rate between 0 and 24 kHz.
        let top = 21.4 * (1.0f64 + 0.00437 * 24000.0).log10();
        for (i, &f) in c.iter().enumerate() {
            let rate = top * i as f64 / 31.0;
            let expect = (10f64.powf(rate / 21.4) - 1.0) / 0.00437;
            assert!((f - expect).abs() < 1e-9 * expect.max(1.0));
        }
        assert_eq!(c[0], 0.0);
        assert!((c[31] - 24000.0).abs() < 1e-6);
        assert!(c.windows(2).all(|p| p[1] > p[0]));
        let widths: Vec<f64> = c.windows(2).map(|p| p[1] - p[0]).collect();
        assert!(widths.windows(2).all(|p| p[1] >= p[0]));
        // Each step spans roughly one constant fraction of the local ERB.
        let step = top / 31.0;
        for p in c.windows(2) {
            let ratio = (p[1] - p[0]) / erb_bandwidth(0.5 * (p[0] + p[1]));
            assert!((ratio / step - 1.0).abs() < 0.05, "ratio {ratio} step {step}");
        }
    }

    #[test]
    fn rejects_bad_configs() {
        assert!(ErbFilterbank::new(32, SAMPLE_RATE).is_err());
        assert!(ErbFilterbank::new(481, 16000).is_err());
        assert!(ErbFilterbank::new(64, SAMPLE_RATE).is_err());
    }

    #[test]
    fn interpolate_constant_is_constant() {
        let fb = fb();
        let mut out = vec![0.0; FREQ_SIZE];
        fb.interpolate(&[0.7; 32], &mut out);
        assert!(out.iter().all(|v| (v - 0.7).abs() < 1e-6));
    }
}
