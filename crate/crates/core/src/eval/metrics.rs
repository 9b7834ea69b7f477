//! Objective metrics: SI-SNR with latency alignment, EER and VAD scores.

use realfft::num_complex::Complex64;
use realfft::RealFftPlanner;

use crate::error::{Error, Result};

/// SI-SNR values are clamped to `±SI_SNR_CAP_DB`.
pub const SI_SNR_CAP_DB: f64 = 60.0;

/// Lag search range used when aligning an output with its reference (±50 ms).
pub const ALIGN_MAX_LAG: usize = 2400;

/// Scale-invariant SNR in dB: the estimate is projected onto the reference
/// and the projection's energy is compared with the residual's.
pub fn si_snr(estimate: &[f32], reference: &[f32]) -> Result<f64> {
    if estimate.len() != reference.len() {
        return Err(Error::shape(format!(
            "estimate has {} samples, reference {}",
            estimate.len(),
            reference.len()
        )));
    }
    let rr: f64 = reference.iter().map(|&r| r as f64 * r as f64).sum();
    if rr <= 0.0 {
        return Err(Error::input("reference is silent"));
    }
    let er: f64 = estimate
        .iter()
        .zip(reference)
        .map(|(&e, &r)| e as f64 * r as f64)
        .sum();
    let alpha = er / rr;
    let (mut proj, mut resid) = (0.0f64, 0.0f64);
    for (&e, &r) in estimate.iter().zip(reference) {
        let p = alpha * r as f64;
        proj += p * p;
        let d = e as f64 - p;
        resid += d * d;
    }
    if resid <= proj * 10f64.powf(-SI_SNR_CAP_DB / 10.0) {
        return Ok(SI_SNR_CAP_DB);
    }
    if proj <= resid * 10f64.powf(-SI_SNR_CAP_DB / 10.0) {
        return Ok(-SI_SNR_CAP_DB);
    }
    Ok(10.0 * (proj / resid).log10())
}

/// Lag `d` in `[-max_lag, max_lag]` maximizing `Σ estimate[n + d] · reference[n]`.
pub fn best_lag(estimate: &[f32], reference: &[f32], max_lag: usize) -> isize {
    let n = estimate.len().max(reference.len());
    let size = (n + max_lag + 1).next_power_of_two() * 2;
    let mut planner = RealFftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(size);
    let inv = planner.plan_fft_inverse(size);
    let spectrum = |x: &[f32]| {
        let mut buf = vec![0.0f64; size];
        for (b, &v) in buf.iter_mut().zip(x) {
            *b = v as f64;
        }
        let mut out = fwd.make_output_vec();
        fwd.process(&mut buf, &mut out).expect("sizes match");
        out
    };
    let (e, r) = (spectrum(estimate), spectrum(reference));
    let mut cross: Vec<Complex64> = e.iter().zip(&r).map(|(a, b)| a * b.conj()).collect();
    cross[0].im = 0.0;
    let last = cross.len() - 1;
    cross[last].im = 0.0;
    let mut corr = vec![0.0f64; size];
    inv.process(&mut cross, &mut corr).expect("sizes match");
    // corr[d] holds lag d; negative lags wrap to the end.
    let mut best = (0isize, f64::NEG_INFINITY);
    for d in -(max_lag as isize)..=(max_lag as isize) {
        let idx = if d >= 0 { d as usize } else { size - (-d) as usize };
        if corr[idx] > best.1 {
            best = (d, corr[idx]);
        }
    }
    best.0
}

/// SI-SNR after compensating for a processing delay of up to `max_lag` samples.
pub fn aligned_si_snr(estimate: &[f32], reference: &[f32], max_lag: usize) -> Result<f64> {
    let lag = best_lag(estimate, reference, max_lag);
    let (e, r) = shift_overlap(estimate, reference, lag);
    si_snr(e, r)
}

/// Overlapping parts of `estimate` shifted by `lag` and `reference`.
pub fn shift_overlap<'a>(estimate: &'a [f32], reference: &'a [f32], lag: isize) -> (&'a [f32], &'a [f32]) {
    if lag >= 0 {
        let l = lag as usize;
        let len = estimate.len().saturating_sub(l).min(reference.len());
        (&estimate[l..l + len], &reference[..len])
    } else {
        let l = (-lag) as usize;
        let len = reference.len().saturating_sub(l).min(estimate.len());
        (&estimate[..len], &reference[l..l + len])
    }
}

/// Equal error rate of verification `scores` (higher means "same speaker").
///
/// Operating points are interpolated along the convex hull of the ROC, so
/// the result is the rate at which false accepts and false rejects coincide
/// when thresholds may be mixed between achievable points.
pub fn eer(scores: &[f64], same: &[bool]) -> Result<f64> {
    if scores.len() != same.len() {
        return Err(Error::shape("scores and labels differ in length"));
    }
    let n_pos = same.iter().filter(|&&s| s).count();
    let n_neg = same.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::input("EER needs both same and different pairs"));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::Numeric("non-finite verification score".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    // (false-accept rate, false-reject rate), from accepting nothing to accepting all.
    let mut points = vec![(0.0f64, 1.0f64)];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if same[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push((fp as f64 / n_neg as f64, 1.0 - tp as f64 / n_pos as f64));
    }
    // Lower convex hull; FAR increases and FRR decreases along the list.
    let mut hull: Vec<(f64, f64)> = Vec::with_capacity(points.len());
    for p in points {
        while hull.len() >= 2 {
            let (a, b) = (hull[hull.len() - 2], hull[hull.len() - 1]);
            let cross = (b.0 - a.0) * (p.1 - a.1) - (b.1 - a.1) * (p.0 - a.0);
            if cross <= 0.0 {
                hull.pop();
            } else {
                break;
            }
        }
        hull.push(p);
    }
    for w in hull.windows(2) {
        let (a, b) = (w[0], w[1]);
        let (da, db) = (a.0 - a.1, b.0 - b.1);
        if da <= 0.0 && db >= 0.0 {
            if da == db {
                return Ok(a.0);
            }
            let t = da / (da - db);
            return Ok(a.0 + t * (b.0 - a.0));
        }
    }
    Err(Error::Numeric("ROC hull never crosses the equal-error line".into()))
}

/// Frame-level voice-activity scores.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VadMetrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
}

/// Confusion-matrix metrics; a probability equal to `threshold` counts as active.
pub fn vad_accuracy(pred: &[f32], labels: &[bool], threshold: f32) -> Result<VadMetrics> {
    if pred.len() != labels.len() {
        return Err(Error::shape(format!(
            "{} predictions for {} labels",
            pred.len(),
            labels.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::input("no frames to score"));
    }
    let (mut tp, mut fp, mut tn, mut fn_) = (0usize, 0usize, 0usize, 0usize);
    for (&p, &l) in pred.iter().zip(labels) {
        match (p >= threshold, l) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, false) => tn += 1,
            (false, true) => fn_ += 1,
        }
    }
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    Ok(VadMetrics {
        accuracy: ratio(tp + tn, pred.len()),
        precision: ratio(tp, tp + fp),
        recall: ratio(tp, tp + fn_),
    })
}

/// Median of a non-empty list (mean of the middle pair for even lengths).
pub fn median(values: &[f64]) -> f64 {
    assert!(!values.is_empty(), "median of an empty list");
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn signal(seed: u64, n: usize) -> Vec<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    #[test]
    fn identical_and_scaled_hit_the_cap() {
        let x = signal(1, 1000);
        assert_eq!(si_snr(&x, &x).unwrap(), SI_SNR_CAP_DB);
        let x2: Vec<f32> = x.iter().map(|v| 2.0 * v).collect();
        assert_eq!(si_snr(&x2, &x).unwrap(), SI_SNR_CAP_DB);
    }

    #[test]
    fn equal_energy_orthogonal_noise_is_zero_db() {
        let r = signal(2, 4096);
        let raw = signal(3, 4096);
        // Gram-Schmidt: remove the reference component, then match energies.
        let rr: f64 = r.iter().map(|&v| (v as f64).powi(2)).sum();
        let nr: f64 = raw.iter().zip(&r).map(|(&a, &b)| a as f64 * b as f64).sum();
        let orth: Vec<f64> = raw.iter().zip(&r).map(|(&a, &b)| a as f64 - nr / rr * b as f64).collect();
        let oo: f64 = orth.iter().map(|v| v * v).sum();
        let k = (rr / oo).sqrt();
        let est: Vec<f32> = r.iter().zip(&orth).map(|(&a, &o)| (a as f64 + k * o) as f32).collect();
        let v = si_snr(&est, &r).unwrap();
        assert!(v.abs() < 0.1, "{v}");
    }

    #[test]
    fn si_snr_errors() {
        assert!(si_snr(&[1.0, 2.0], &[1.0]).is_err());
        assert!(si_snr(&[1.0, 2.0], &[0.0, 0.0]).is_err());
    }

    #[test]
    fn alignment_recovers_delay() {
        let r = signal(4, 20_000);
        for delay in [0usize, 17, 1920, 2400] {
            let mut e = vec![0.0f32; delay];
            e.extend_from_slice(&r);
            e.truncate(r.len());
            assert_eq!(best_lag(&e, &r, ALIGN_MAX_LAG), delay as isize);
            assert_eq!(aligned_si_snr(&e, &r, ALIGN_MAX_LAG).unwrap(), SI_SNR_CAP_DB);
        }
        let e: Vec<f32> = r[300..].to_vec();
        assert_eq!(best_lag(&e, &r, ALIGN_MAX_LAG), -300);
    }

    #[test]
    fn eer_perfect_separation() {
        let scores = [0.9, 0.8, 0.2, 0.1];
        let same = [true, true, false, false];
        assert_eq!(eer(&scores, &same).unwrap(), 0.0);
    }

    #[test]
    fn eer_single_inversion_by_enumeration() {
        let scores = [0.9, 0.6, 0.4, 0.1];
        let same = [true, false, true, false];
        // Achievable (FAR, FRR) points: (0,1) (0,1/2) (1/2,1/2) (1/2,0) (1,0).
        // Mixing the (0,1/2) and (1/2,0) thresholds gives FAR = FRR = 1/4.
        let mut best = f64::INFINITY;
        let pts = [(0.0, 1.0), (0.0, 0.5), (0.5, 0.5), (0.5, 0.0), (1.0, 0.0)];
        for a in pts {
            for b in pts {
                // Segment between two achievable points crossing FAR == FRR.
                let (da, db) = (a.0 - a.1, b.0 - b.1);
                if da <= 0.0 && db >= 0.0 && da != db {
                    let t = da / (da - db);
                    best = f64::min(best, a.0 + t * (b.0 - a.0));
                }
            }
        }
        assert_eq!(best, 0.25);
        assert!((eer(&scores, &same).unwrap() - 0.25).abs() < 1e-12);
    }

    #[test]
    fn eer_random_labels_is_half() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let scores: Vec<f64> = (0..10_000).map(|_| rng.gen()).collect();
        let same: Vec<bool> = (0..10_000).map(|_| rng.gen_bool(0.5)).collect();
        let e = eer(&scores, &same).unwrap();
        assert!((e - 0.5).abs() < 0.02, "{e}");
    }

    #[test]
    fn eer_needs_both_classes() {
        assert!(eer(&[0.1, 0.2], &[true, true]).is_err());
    }

    #[test]
    fn vad_metrics() {
        let labels = [true, false, true, true];
        let pred = [0.9, 0.1, 0.8, 0.7];
        assert_eq!(vad_accuracy(&pred, &labels, 0.5).unwrap().accuracy, 1.0);
        let m = vad_accuracy(&[0.5; 4], &labels, 0.5).unwrap();
        assert_eq!(m.accuracy, 0.75);
        assert!(vad_accuracy(&[0.5; 3], &labels, 0.5).is_err());
    }

    #[test]
    fn vad_random_is_chance() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let pred: Vec<f32> = (0..10_000).map(|_| rng.gen()).collect();
        let labels: Vec<bool> = (0..10_000).map(|_| rng.gen_bool(0.5)).collect();
        let acc = vad_accuracy(&pred, &labels, 0.5).unwrap().accuracy;
        assert!((acc - 0.5).abs() < 0.02, "{acc}");
    }
}
