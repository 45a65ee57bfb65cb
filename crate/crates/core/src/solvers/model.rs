use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linops::{estimate_shift, mean_adjust, ShiftStrategy, SynthesisOperator};

/// Forward measurement model. Denoising uses the identity; the library
/// accepts any dense operator.
#[derive(Debug, Clone)]
pub enum Forward {
    Identity,
    Dense(Arc<DMatrix<f64>>),
}

impl Forward {
    pub fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        match self {
            Forward::Identity => x.clone(),
            Forward::Dense(a) => &**a * x,
        }
    }

    pub fn apply_transpose(&self, y: &DVector<f64>) -> DVector<f64> {
        match self {
            Forward::Identity => y.clone(),
            Forward::Dense(a) => a.transpose() * y,
        }
    }

    pub fn is_identity(&self) -> bool {
        matches!(self, Forward::Identity)
    }
}

/// Problem dimensions: J measurements, N signal samples, M coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelDims {
    pub measurements: usize,
    pub signal: usize,
    pub coeffs: usize,
}

/// The composed measurement model the synthesis-form estimators consume:
/// the dictionary (forward model times pseudoinverse), the pseudoinverse
/// itself for the final synthesis step, and the shift-recovery strategy.
#[derive(Debug, Clone)]
pub struct SynthesisModel {
    pub forward: Forward,
    /// J x M dictionary; equals the pseudoinverse when the forward model is
    /// the identity (shared storage, not copied).
    dictionary: Arc<DMatrix<f64>>,
    /// N x M pseudoinverse used to synthesize the signal from coefficients.
    synthesis: Arc<DMatrix<f64>>,
    pub shift: ShiftStrategy,
    pub dims: ModelDims,
}

impl SynthesisModel {
    pub fn new(
        forward: Forward,
        synth: &SynthesisOperator,
        shift: ShiftStrategy,
    ) -> Result<Self> {
        let signal = synth.signal_len();
        let coeffs = synth.coeff_len();
        let (dictionary, measurements) = match &forward {
            Forward::Identity => (synth.matrix_arc(), signal),
            Forward::Dense(a) => {
                if a.ncols() != signal {
                    return Err(Error::DimensionMismatch {
                        what: "forward model columns",
                        expected: signal,
                        got: a.ncols(),
                    });
                }
                (Arc::new(&**a * synth.matrix()), a.nrows())
            }
        };
        Ok(SynthesisModel {
            forward,
            dictionary,
            synthesis: synth.matrix_arc(),
            shift,
            dims: ModelDims {
                measurements,
                signal,
                coeffs,
            },
        })
    }

    pub fn dictionary(&self) -> &DMatrix<f64> {
        &self.dictionary
    }

    pub fn synthesis(&self) -> &DMatrix<f64> {
        &self.synthesis
    }

    /// Synthesizes coefficients into a signal and applies the configured
    /// shift recovery. Returns the shifted signal and the shift used.
    pub fn synthesize_with_shift(&self, coeffs: &DVector<f64>) -> Result<(DVector<f64>, f64)> {
        let raw = &*self.synthesis * coeffs;
        let shift = estimate_shift(&raw, &self.shift)?;
        Ok((mean_adjust(&raw, shift), shift))
    }

    /// The component of the data the dictionary can actually represent.
    ///
    /// Pseudoinverse columns are mean-zero, so under an identity forward
    /// model the data's mean is orthogonal to the dictionary's range; left
    /// in place it masquerades as noise in the evidence. It is removed here
    /// and restored later by the shift strategy. Returns the fittable data
    /// and the removed mean.
    pub fn fittable_data(&self, data: &DVector<f64>) -> (DVector<f64>, f64) {
        match self.forward {
            Forward::Identity => {
                let mean = data.mean();
                (data.add_scalar(-mean), mean)
            }
            Forward::Dense(_) => (data.clone(), 0.0),
        }
    }

    /// Measurement count of the fittable model. Centering under an
    /// identity forward model spends one measurement dimension on the mean:
    /// the centered data has exactly zero noise along the constant
    /// direction, and counting that dimension would make the evidence
    /// unbounded in the noise precision. The estimators therefore see the
    /// model projected onto the mean-zero subspace, which leaves every
    /// dictionary product unchanged and only lowers the dimension by one.
    pub fn effective_measurements(&self) -> usize {
        match self.forward {
            Forward::Identity => self.dims.measurements - 1,
            Forward::Dense(_) => self.dims.measurements,
        }
    }
}
