use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// First-order difference operator stored structurally: the 1D form is the
/// (n-1) x n bidiagonal stencil with -1 on the diagonal and +1 on the
/// superdiagonal; the 2D form stacks the vertical and horizontal difference
/// blocks `[I (x) D; D (x) I]` acting on a column-major vectorized image.
///
/// Every row holds exactly one +1 and one -1, so row sums are exactly zero
/// and constants are annihilated.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BandedOperator {
    rows: usize,
    cols: usize,
    kind: Kind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Kind {
    /// Differences of adjacent samples of a length-n signal.
    Difference1d { n: usize },
    /// Anisotropic differences of an n x n image, column block then row block.
    Difference2d { side: usize },
}

/// Builds the (n-1) x n first-order difference operator.
pub fn build_tv_1d(n: usize) -> Result<BandedOperator> {
    if n < 2 {
        return Err(Error::InvalidDimension {
            what: "1D difference operator",
            requirement: "signal length >= 2",
            got: n,
        });
    }
    Ok(BandedOperator {
        rows: n - 1,
        cols: n,
        kind: Kind::Difference1d { n },
    })
}

/// Builds the 2n(n-1) x n^2 anisotropic difference operator for an n x n
/// image vectorized column-major. Applying it to vec(X) yields
/// `[vec(D X); vec(X D^T)]`.
pub fn build_tv_2d(n: usize) -> Result<BandedOperator> {
    if n < 2 {
        return Err(Error::InvalidDimension {
            what: "2D difference operator",
            requirement: "image side >= 2",
            got: n,
        });
    }
    Ok(BandedOperator {
        rows: 2 * n * (n - 1),
        cols: n * n,
        kind: Kind::Difference2d { side: n },
    })
}

impl BandedOperator {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    /// Image side for the 2D form, `None` for 1D.
    pub fn side(&self) -> Option<usize> {
        match self.kind {
            Kind::Difference1d { .. } => None,
            Kind::Difference2d { side } => Some(side),
        }
    }

    pub fn is_two_dimensional(&self) -> bool {
        matches!(self.kind, Kind::Difference2d { .. })
    }

    /// The (+1 column, -1 column) pair of row `r`.
    #[inline]
    pub fn row_entries(&self, r: usize) -> (usize, usize) {
        debug_assert!(r < self.rows);
        match self.kind {
            Kind::Difference1d { .. } => (r + 1, r),
            Kind::Difference2d { side: n } => {
                let vertical = n * (n - 1);
                if r < vertical {
                    // (D X)[k, j] = X[k+1, j] - X[k, j]
                    let k = r % (n - 1);
                    let j = r / (n - 1);
                    (j * n + k + 1, j * n + k)
                } else {
                    // (X D^T)[i, k] = X[i, k+1] - X[i, k]
                    let r = r - vertical;
                    let i = r % n;
                    let k = r / n;
                    ((k + 1) * n + i, k * n + i)
                }
            }
        }
    }

    /// Applies the operator without densifying.
    pub fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        assert_eq!(x.len(), self.cols, "operator input length");
        let mut out = DVector::zeros(self.rows);
        for r in 0..self.rows {
            let (p, q) = self.row_entries(r);
            out[r] = x[p] - x[q];
        }
        out
    }

    /// Applies the transpose without densifying.
    pub fn apply_transpose(&self, y: &DVector<f64>) -> DVector<f64> {
        assert_eq!(y.len(), self.rows, "operator transpose input length");
        let mut out = DVector::zeros(self.cols);
        for r in 0..self.rows {
            let (p, q) = self.row_entries(r);
            out[p] += y[r];
            out[q] -= y[r];
        }
        out
    }

    /// Upper bound on the squared spectral norm (4 in 1D, 8 in 2D).
    pub fn spectral_norm_sq_bound(&self) -> f64 {
        match self.kind {
            Kind::Difference1d { .. } => 4.0,
            Kind::Difference2d { .. } => 8.0,
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.rows, self.cols);
        for r in 0..self.rows {
            let (p, q) = self.row_entries(r);
            m[(r, p)] = 1.0;
            m[(r, q)] = -1.0;
        }
        m
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_degenerate_sizes() {
        assert!(build_tv_1d(1).is_err());
        assert!(build_tv_1d(0).is_err());
        assert!(build_tv_2d(1).is_err());
    }

    #[test]
    fn annihilates_constants_1d() {
        let d = build_tv_1d(3).unwrap();
        let y = d.apply(&DVector::from_vec(vec![5.0, 5.0, 5.0]));
        assert_eq!(y.as_slice(), &[0.0, 0.0]);
    }

    #[test]
    fn stencil_1d() {
        let d = build_tv_1d(3).unwrap();
        let y = d.apply(&DVector::from_vec(vec![0.0, 1.0, 3.0]));
        assert_eq!(y.as_slice(), &[1.0, 2.0]);
    }

    #[test]
    fn dense_form_1d() {
        let d = build_tv_1d(3).unwrap().to_dense();
        let expected =
            DMatrix::from_row_slice(2, 3, &[-1.0, 1.0, 0.0, 0.0, -1.0, 1.0]);
        assert_eq!(d, expected);
    }

    #[test]
    fn two_by_two_image() {
        // X = [[1, 2], [3, 4]] stored column-major.
        let d2 = build_tv_2d(2).unwrap();
        let x = DVector::from_vec(vec![1.0, 3.0, 2.0, 4.0]);
        assert_eq!(d2.apply(&x).as_slice(), &[2.0, 2.0, 1.0, 1.0]);

        let c = DVector::from_element(4, 7.5);
        assert_eq!(d2.apply(&c).as_slice(), &[0.0; 4]);
    }

    #[test]
    fn matches_direct_differences_2d() {
        // Output of the operator equals row/column differences computed
        // straight from the image, for random images.
        use rand::Rng;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let n = 3;
        let d2 = build_tv_2d(n).unwrap();
        for _ in 0..10 {
            let img: Vec<f64> = (0..n * n).map(|_| rng.random::<f64>()).collect();
            let at = |i: usize, j: usize| img[j * n + i];
            let mut expected = Vec::new();
            for j in 0..n {
                for k in 0..n - 1 {
                    expected.push(at(k + 1, j) - at(k, j));
                }
            }
            for k in 0..n - 1 {
                for i in 0..n {
                    expected.push(at(i, k + 1) - at(i, k));
                }
            }
            let got = d2.apply(&DVector::from_vec(img.clone()));
            assert_eq!(got.as_slice(), expected.as_slice());
        }
    }

    #[test]
    fn row_sums_zero() {
        for op in [build_tv_1d(9).unwrap(), build_tv_2d(4).unwrap()] {
            let dense = op.to_dense();
            for r in 0..op.rows() {
                let sum: f64 = dense.row(r).iter().sum();
                assert_eq!(sum, 0.0);
            }
        }
    }

    #[test]
    fn transpose_agrees_with_dense() {
        let op = build_tv_2d(3).unwrap();
        let dense = op.to_dense();
        let y = DVector::from_fn(op.rows(), |i, _| (i as f64) - 4.0);
        let got = op.apply_transpose(&y);
        let expected = dense.transpose() * &y;
        assert_eq!(got, expected);
    }
}
