use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};

use super::operator::BandedOperator;

/// Dense right pseudoinverse of a difference operator, cached once per
/// problem size. Mapping coefficients back through it always lands in the
/// mean-zero subspace, so a scalar shift completes the reconstruction.
#[derive(Debug, Clone)]
pub struct SynthesisOperator {
    /// cols(D) x rows(D) dense matrix realizing the pseudoinverse.
    matrix: Arc<DMatrix<f64>>,
    /// Measured diagonal of the projector (pseudoinverse * D).
    projector_diag: DVector<f64>,
    /// Measured off-diagonal sample of the projector, entry (0, 1).
    projector_off_diag: f64,
}

/// Computes the dense pseudoinverse of a difference operator.
///
/// The 1D Gram matrix D D^T is the positive definite tridiagonal
/// (-1, 2, -1), factored and solved column-by-column; no dense matrix is
/// inverted. The 2D operator has dependent rows (its Gram is singular), so
/// the pseudoinverse is formed from the domain side instead: the grid
/// Laplacian D^T D diagonalizes in the closed-form cosine basis, giving
/// pinv(D) = pinv(D^T D) * D^T one column at a time.
pub fn pseudoinverse(op: &BandedOperator) -> Result<SynthesisOperator> {
    let matrix = match op.side() {
        None => pseudoinverse_1d(op)?,
        Some(side) => pseudoinverse_2d(op, side)?,
    };
    Ok(SynthesisOperator::from_matrix_unchecked(matrix, op))
}

impl SynthesisOperator {
    /// Wraps an externally supplied matrix, recomputing the projector
    /// diagnostics against `op`. Primarily for tests and the self-test
    /// negative path; `pseudoinverse` is the normal constructor.
    #[doc(hidden)]
    pub fn from_matrix_unchecked(matrix: DMatrix<f64>, op: &BandedOperator) -> Self {
        assert_eq!(matrix.nrows(), op.cols());
        assert_eq!(matrix.ncols(), op.rows());
        let mut diag = DVector::zeros(op.cols());
        for r in 0..op.rows() {
            let (p, q) = op.row_entries(r);
            diag[p] += matrix[(p, r)];
            diag[q] -= matrix[(q, r)];
        }
        // Row 0 of the projector: D^T applied to row 0 of the matrix.
        let row0 = matrix.row(0).transpose();
        let projector_row0 = op.apply_transpose(&row0);
        let off = if op.cols() > 1 { projector_row0[1] } else { 0.0 };
        SynthesisOperator {
            matrix: Arc::new(matrix),
            projector_diag: diag,
            projector_off_diag: off,
        }
    }

    /// Signal-space dimension (cols of the analysis operator).
    pub fn signal_len(&self) -> usize {
        self.matrix.nrows()
    }

    /// Coefficient-space dimension (rows of the analysis operator).
    pub fn coeff_len(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn matrix_arc(&self) -> Arc<DMatrix<f64>> {
        Arc::clone(&self.matrix)
    }

    /// Synthesizes a signal from coefficients (one dense mat-vec).
    pub fn apply(&self, coeffs: &DVector<f64>) -> DVector<f64> {
        &*self.matrix * coeffs
    }

    /// Measured diagonal of the projector onto mean-zero vectors.
    pub fn projector_diag(&self) -> &DVector<f64> {
        &self.projector_diag
    }

    /// Measured off-diagonal projector entry; -1/N in 1D, -1/N^2 in 2D.
    pub fn projector_off_diag(&self) -> f64 {
        self.projector_off_diag
    }
}

/// D^T (D D^T)^{-1} where the Gram is tridiagonal (-1, 2, -1) of size n-1.
fn pseudoinverse_1d(op: &BandedOperator) -> Result<DMatrix<f64>> {
    let n = op.cols();
    let m = op.rows();
    let factor = TridiagFactor::new(m)?;
    // Solve (D D^T) W = D column-by-column; result transposed is D^T Gram^{-1}.
    let mut out = DMatrix::zeros(n, m);
    let mut rhs = vec![0.0; m];
    for j in 0..n {
        rhs.iter_mut().for_each(|v| *v = 0.0);
        // Column j of D: +1 at row j-1, -1 at row j.
        if j >= 1 {
            rhs[j - 1] = 1.0;
        }
        if j < m {
            rhs[j] = -1.0;
        }
        factor.solve_in_place(&mut rhs);
        for r in 0..m {
            out[(j, r)] = rhs[r];
        }
    }
    Ok(out)
}

/// LU factorization of the symmetric tridiagonal (-1, 2, -1), done once and
/// reused for every right-hand side.
struct TridiagFactor {
    /// Superdiagonal after forward elimination.
    c_prime: Vec<f64>,
    /// Pivots after forward elimination.
    pivots: Vec<f64>,
}

impl TridiagFactor {
    fn new(m: usize) -> Result<Self> {
        let mut c_prime = vec![0.0; m];
        let mut pivots = vec![0.0; m];
        let mut prev = 2.0_f64;
        for i in 0..m {
            if prev.abs() < 1e-14 {
                return Err(Error::NumericalRank {
                    context: "tridiagonal Gram factorization",
                    value: prev,
                });
            }
            pivots[i] = prev;
            c_prime[i] = -1.0 / prev;
            // Next pivot: 2 - (-1) * c_prime[i].
            prev = 2.0 + c_prime[i];
        }
        Ok(TridiagFactor { c_prime, pivots })
    }

    fn solve_in_place(&self, rhs: &mut [f64]) {
        let m = rhs.len();
        debug_assert_eq!(m, self.pivots.len());
        for i in 1..m {
            rhs[i] -= self.c_prime[i - 1] * rhs[i - 1];
        }
        rhs[m - 1] /= self.pivots[m - 1];
        for i in (0..m - 1).rev() {
            rhs[i] = rhs[i] / self.pivots[i] - self.c_prime[i] * rhs[i + 1];
        }
    }
}

/// Orthonormal eigenbasis of the 1D free-boundary difference Laplacian:
/// columns are the discrete cosine vectors, eigenvalues 4 sin^2(pi k / 2n).
struct CosineBasis {
    basis: DMatrix<f64>,
    eigenvalues: Vec<f64>,
}

impl CosineBasis {
    fn new(n: usize) -> Self {
        let mut basis = DMatrix::zeros(n, n);
        let norm0 = (1.0 / n as f64).sqrt();
        let norm = (2.0 / n as f64).sqrt();
        for k in 0..n {
            let scale = if k == 0 { norm0 } else { norm };
            for j in 0..n {
                basis[(j, k)] =
                    scale * (std::f64::consts::PI * k as f64 * (j as f64 + 0.5) / n as f64).cos();
            }
        }
        let eigenvalues = (0..n)
            .map(|k| {
                let s = (std::f64::consts::PI * k as f64 / (2.0 * n as f64)).sin();
                4.0 * s * s
            })
            .collect();
        CosineBasis { basis, eigenvalues }
    }
}

/// pinv(D2) = pinv(L) D2^T with L the 2D grid Laplacian D2^T D2, built one
/// column per operator row. Each column is pinv(L)(e_p - e_q), evaluated in
/// the cosine eigenbasis with the zero eigenvalue dropped.
fn pseudoinverse_2d(op: &BandedOperator, side: usize) -> Result<DMatrix<f64>> {
    let n = side;
    let cos = CosineBasis::new(n);
    let signal = op.cols();
    let m = op.rows();
    for k in 1..n {
        if cos.eigenvalues[k] <= 0.0 {
            return Err(Error::NumericalRank {
                context: "grid Laplacian spectrum",
                value: cos.eigenvalues[k],
            });
        }
    }

    let mut out = DMatrix::zeros(signal, m);
    let columns: Vec<(usize, usize, usize)> = (0..m)
        .map(|r| {
            let (p, q) = op.row_entries(r);
            (r, p, q)
        })
        .collect();

    out.as_mut_slice()
        .par_chunks_mut(signal)
        .zip(columns.par_iter())
        .for_each(|(col, &(_r, p, q))| {
            // Spectral coefficients of e_p - e_q: outer products of basis rows.
            let (pi, pj) = (p % n, p / n);
            let (qi, qj) = (q % n, q / n);
            let mut w = DMatrix::zeros(n, n);
            for b in 0..n {
                for a in 0..n {
                    let z = cos.basis[(pi, a)] * cos.basis[(pj, b)]
                        - cos.basis[(qi, a)] * cos.basis[(qj, b)];
                    let lam = cos.eigenvalues[a] + cos.eigenvalues[b];
                    w[(a, b)] = if a == 0 && b == 0 { 0.0 } else { z / lam };
                }
            }
            let img = &cos.basis * w * cos.basis.transpose();
            col.copy_from_slice(img.as_slice());
        });
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linops::operator::{build_tv_1d, build_tv_2d};
    use approx::assert_abs_diff_eq;

    #[test]
    fn two_sample_closed_form() {
        let d = build_tv_1d(2).unwrap();
        let synth = pseudoinverse(&d).unwrap();
        assert_abs_diff_eq!(synth.matrix()[(0, 0)], -0.5, epsilon = 1e-14);
        assert_abs_diff_eq!(synth.matrix()[(1, 0)], 0.5, epsilon = 1e-14);
    }

    #[test]
    fn right_inverse_1d() {
        for n in [2, 3, 5, 17, 64] {
            let d = build_tv_1d(n).unwrap();
            let synth = pseudoinverse(&d).unwrap();
            let prod = d.to_dense() * synth.matrix();
            let eye = DMatrix::<f64>::identity(n - 1, n - 1);
            assert!((prod - eye).abs().max() < 1e-10, "n={n}");
        }
    }

    #[test]
    fn projector_structure_1d() {
        let n = 8;
        let d = build_tv_1d(n).unwrap();
        let synth = pseudoinverse(&d).unwrap();
        let proj = synth.matrix() * d.to_dense();
        for i in 0..n {
            for j in 0..n {
                let expected = if i == j { 7.0 / 8.0 } else { -1.0 / 8.0 };
                assert_abs_diff_eq!(proj[(i, j)], expected, epsilon = 1e-10);
            }
        }
        // Cached diagnostics agree with the dense product.
        for i in 0..n {
            assert_abs_diff_eq!(synth.projector_diag()[i], 7.0 / 8.0, epsilon = 1e-10);
        }
        assert_abs_diff_eq!(synth.projector_off_diag(), -1.0 / 8.0, epsilon = 1e-10);
    }

    #[test]
    fn projector_structure_2d_smallest() {
        // Side 2: projector must equal I - ones/4.
        let d2 = build_tv_2d(2).unwrap();
        let synth = pseudoinverse(&d2).unwrap();
        let proj = synth.matrix() * d2.to_dense();
        for i in 0..4 {
            for j in 0..4 {
                let expected = if i == j { 0.75 } else { -0.25 };
                assert_abs_diff_eq!(proj[(i, j)], expected, epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn matches_svd_pseudoinverse_2d() {
        // Independent oracle: nalgebra's SVD-based pseudoinverse of the
        // dense operator.
        for side in [2usize, 3, 4] {
            let d2 = build_tv_2d(side).unwrap();
            let synth = pseudoinverse(&d2).unwrap();
            let oracle = d2.to_dense().pseudo_inverse(1e-12).unwrap();
            let diff = (synth.matrix() - &oracle).abs().max();
            assert!(diff < 1e-9, "side={side}, max diff {diff:.3e}");
        }
    }

    #[test]
    fn penrose_conditions_2d() {
        let side = 5;
        let d2 = build_tv_2d(side).unwrap();
        let dense = d2.to_dense();
        let v = pseudoinverse(&d2).unwrap().matrix().clone();
        let dvd = &dense * &v * &dense;
        assert!((&dvd - &dense).abs().max() < 1e-9);
        let vdv = &v * &dense * &v;
        assert!((&vdv - &v).abs().max() < 1e-9);
        let dv = &dense * &v;
        assert!((&dv - dv.transpose()).abs().max() < 1e-9);
        let vd = &v * &dense;
        assert!((&vd - vd.transpose()).abs().max() < 1e-9);
    }
}
