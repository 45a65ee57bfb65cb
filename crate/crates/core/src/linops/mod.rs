//! Difference operators, their dense pseudoinverses, and the mean
//! adjustment that makes synthesis through them exact.
//!
//! Mapping a signal to its difference coefficients and back through the
//! pseudoinverse loses exactly one degree of freedom: the mean. For any
//! vector, `pinv(D) D x + mean(x)` reproduces `x`, in 1D and 2D alike, so a
//! reconstruction only ever needs the coefficients plus one scalar shift.

mod operator;
mod synthesis;

pub use operator::{build_tv_1d, build_tv_2d, BandedOperator};
pub use synthesis::{pseudoinverse, SynthesisOperator};

use nalgebra::DVector;

use crate::error::{Error, Result};

/// How the missing scalar shift of a synthesized signal is recovered.
#[derive(Debug, Clone, PartialEq)]
pub enum ShiftStrategy {
    /// The true mean is known exactly.
    KnownMean(f64),
    /// The un-normalized zeroth Fourier coefficient of the true signal is
    /// known (e.g. Fourier-domain acquisition); the shift is its value
    /// divided by the signal length.
    ZerothFourierCoefficient(f64),
    /// Indices where the true signal is known to vanish; the shift is the
    /// negated average of the synthesized values there.
    ZeroRegion(Vec<usize>),
    /// Use the mean of the observed noisy data, an unbiased estimate of the
    /// true mean when the forward model is the identity.
    NoisyDataMean(DVector<f64>),
}

/// Estimates the scalar shift for a synthesized (mean-zero) reconstruction.
///
/// `transform_values` is the synthesized signal before shifting, i.e. the
/// reconstruction of `pinv(D) D x`.
pub fn estimate_shift(transform_values: &DVector<f64>, strategy: &ShiftStrategy) -> Result<f64> {
    match strategy {
        ShiftStrategy::KnownMean(mean) => Ok(*mean),
        ShiftStrategy::ZerothFourierCoefficient(coeff) => {
            if transform_values.is_empty() {
                return Err(Error::InvalidStrategy(
                    "zeroth-coefficient shift needs a non-empty signal".into(),
                ));
            }
            Ok(coeff / transform_values.len() as f64)
        }
        ShiftStrategy::ZeroRegion(indices) => {
            if indices.is_empty() {
                return Err(Error::InvalidStrategy("zero region is empty".into()));
            }
            let mut sum = 0.0;
            for &i in indices {
                if i >= transform_values.len() {
                    return Err(Error::InvalidStrategy(format!(
                        "zero-region index {i} out of bounds for length {}",
                        transform_values.len()
                    )));
                }
                sum += transform_values[i];
            }
            Ok(-sum / indices.len() as f64)
        }
        ShiftStrategy::NoisyDataMean(data) => {
            if data.is_empty() {
                return Err(Error::InvalidStrategy(
                    "noisy-data-mean shift needs a non-empty data vector".into(),
                ));
            }
            Ok(data.mean())
        }
    }
}

/// Adds the recovered scalar shift to every entry of a synthesized signal.
pub fn mean_adjust(synthesized: &DVector<f64>, shift: f64) -> DVector<f64> {
    synthesized.add_scalar(shift)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn adjustment_identity_small() {
        // pinv(D) D [1,2,3] = [-1,0,1]; adding the mean restores the input.
        let d = build_tv_1d(3).unwrap();
        let synth = pseudoinverse(&d).unwrap();
        let x = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        let projected = synth.apply(&d.apply(&x));
        assert_abs_diff_eq!(projected[0], -1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(projected[1], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(projected[2], 1.0, epsilon = 1e-12);
        let restored = mean_adjust(&projected, x.mean());
        assert!((restored - x).abs().max() < 1e-12);
    }

    #[test]
    fn zero_shift_is_identity() {
        let x = DVector::from_vec(vec![4.0, -2.0, 0.5]);
        assert_eq!(mean_adjust(&x, 0.0), x);
    }

    #[test]
    fn adjustment_identity_random_sizes() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let n = rng.random_range(2..=64);
            let d = build_tv_1d(n).unwrap();
            let synth = pseudoinverse(&d).unwrap();
            let x = DVector::from_fn(n, |_, _| rng.random::<f64>() * 10.0 - 5.0);
            let restored = mean_adjust(&synth.apply(&d.apply(&x)), x.mean());
            assert!((restored - x).abs().max() < 1e-10, "n={n}");
        }
    }

    #[test]
    fn complement_projector_extracts_mean() {
        // E = I - pinv(D) D maps every vector to its mean on all entries.
        let n = 9;
        let d = build_tv_1d(n).unwrap();
        let synth = pseudoinverse(&d).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = DVector::from_fn(n, |_, _| rng.random::<f64>() * 4.0 - 2.0);
        let e_x = &x - synth.apply(&d.apply(&x));
        for i in 0..n {
            assert_abs_diff_eq!(e_x[i], x.mean(), epsilon = 1e-10);
        }
    }

    #[test]
    fn shift_from_zero_region_singleton() {
        let d = build_tv_1d(3).unwrap();
        let synth = pseudoinverse(&d).unwrap();
        let x = DVector::from_vec(vec![0.0, 1.0, 2.0]);
        let transform = synth.apply(&d.apply(&x));
        let shift = estimate_shift(&transform, &ShiftStrategy::ZeroRegion(vec![0])).unwrap();
        assert_abs_diff_eq!(shift, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(shift, x.mean(), epsilon = 1e-12);
    }

    #[test]
    fn shift_from_zero_plateau() {
        // Signal with a three-sample zero plateau; the recovered shift must
        // equal the true mean even when averaged over the plateau.
        let n = 16;
        let mut x = DVector::from_element(n, 2.5);
        x[0] = 0.0;
        x[1] = 0.0;
        x[2] = 0.0;
        let d = build_tv_1d(n).unwrap();
        let synth = pseudoinverse(&d).unwrap();
        let transform = synth.apply(&d.apply(&x));
        let shift =
            estimate_shift(&transform, &ShiftStrategy::ZeroRegion(vec![0, 1, 2])).unwrap();
        assert_abs_diff_eq!(shift, x.mean(), epsilon = 1e-10);
    }

    #[test]
    fn zero_fourier_coefficient_means_no_shift() {
        let transform = DVector::from_vec(vec![1.0, -1.0, 0.0]);
        let shift =
            estimate_shift(&transform, &ShiftStrategy::ZerothFourierCoefficient(0.0)).unwrap();
        assert_eq!(shift, 0.0);
    }

    #[test]
    fn invalid_strategies_are_rejected() {
        let transform = DVector::from_vec(vec![1.0, 2.0]);
        assert!(estimate_shift(&transform, &ShiftStrategy::ZeroRegion(vec![])).is_err());
        assert!(estimate_shift(&transform, &ShiftStrategy::ZeroRegion(vec![5])).is_err());
    }

    #[test]
    fn noisy_data_mean_shift() {
        let transform = DVector::zeros(4);
        let data = DVector::from_vec(vec![1.0, 2.0, 3.0, 6.0]);
        let shift = estimate_shift(&transform, &ShiftStrategy::NoisyDataMean(data)).unwrap();
        assert_abs_diff_eq!(shift, 3.0, epsilon = 1e-15);
    }
}
