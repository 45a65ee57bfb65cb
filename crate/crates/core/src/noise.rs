//! Seeded Gaussian noise injection at an exact target SNR, plus the two
//! evaluation metrics used by the denoising experiments.
//!
//! Noise is drawn from a ChaCha8 stream (portable, explicitly seeded) and
//! scaled analytically so the achieved SNR equals the target; the solvers
//! never see the noise variance.

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

/// A noisy measurement together with the pieces that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct NoisyObservation {
    /// The observed data b = clean + noise.
    pub data: DVector<f64>,
    pub clean: Option<DVector<f64>>,
    pub noise: Option<DVector<f64>>,
    /// SNR recomputed from the realized noise, in decibels.
    pub achieved_snr: f64,
    pub seed: u64,
}

/// Signal-to-noise ratio in decibels: 20 log10(|x| / |n|).
pub fn snr(clean: &DVector<f64>, noise: &DVector<f64>) -> Result<f64> {
    let noise_norm = noise.norm();
    if noise_norm == 0.0 {
        return Err(Error::UndefinedSnr);
    }
    Ok(20.0 * (clean.norm() / noise_norm).log10())
}

/// l2 distance to the truth, normalized by the truth's l2 norm.
pub fn relative_error(estimate: &DVector<f64>, truth: &DVector<f64>) -> Result<f64> {
    let truth_norm = truth.norm();
    if truth_norm == 0.0 {
        return Err(Error::UndefinedRelativeError);
    }
    Ok((estimate - truth).norm() / truth_norm)
}

/// Draws standard Gaussian noise from the seeded generator and scales it so
/// the achieved SNR matches `target_snr_db` exactly.
pub fn add_noise(clean: &DVector<f64>, target_snr_db: f64, seed: u64) -> Result<NoisyObservation> {
    let signal_norm = clean.norm();
    if signal_norm == 0.0 {
        return Err(Error::CannotScaleNoise);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let raw: DVector<f64> =
        DVector::from_iterator(clean.len(), (0..clean.len()).map(|_| {
            let v: f64 = StandardNormal.sample(&mut rng);
            v
        }));
    let raw_norm = raw.norm();
    if raw_norm == 0.0 {
        return Err(Error::NonFinite("noise draw"));
    }
    // |n| = |x| * 10^(-snr/20) makes the SNR land on the target.
    let scale = signal_norm * 10f64.powf(-target_snr_db / 20.0) / raw_norm;
    let noise = raw * scale;
    let achieved = snr(clean, &noise)?;
    Ok(NoisyObservation {
        data: clean + &noise,
        clean: Some(clean.clone()),
        noise: Some(noise),
        achieved_snr: achieved,
        seed,
    })
}
