//! Symmetric positive-definite kit: principal square roots, inverse square
//! roots, eigenvalue extrema, and a block-diagonal carrier for per-group
//! covariance blocks.
//!
//! Every matrix that needs a root here is symmetric positive definite, so the
//! roots are computed from a symmetric eigendecomposition `A = Q diag(λ) Qᵀ`,
//! giving `A^{±1/2} = Q diag(λ^{±1/2}) Qᵀ`. For SPD input this coincides with
//! the principal root a Schur-based `sqrtm` returns.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use nalgebra::{DMatrix, DVector, SymmetricEigen};

/// Default relative tolerance for the symmetry check.
pub const DEFAULT_SYMMETRY_TOL: f64 = 1e-10;

/// A validated symmetric positive-definite block.
#[derive(Debug, Clone, PartialEq)]
pub struct SpdBlock<T: Scalar> {
    data: DMatrix<T>,
    tolerance: T,
}

impl<T: Scalar> SpdBlock<T> {
    /// Validates symmetry (relative to the largest entry) and positive
    /// definiteness.
    pub fn new(data: DMatrix<T>) -> Result<Self> {
        Self::with_tolerance(data, T::lit(DEFAULT_SYMMETRY_TOL))
    }

    pub fn with_tolerance(data: DMatrix<T>, tolerance: T) -> Result<Self> {
        if !data.is_square() {
            return Err(Error::Dimension(format!(
                "SPD block must be square, got {}x{}",
                data.nrows(),
                data.ncols()
            )));
        }
        check_symmetric(&data, tolerance)?;
        let (min, _) = extrema_unchecked(&data);
        if !(min > T::zero()) {
            return Err(Error::Conditioning {
                context: "SPD block".into(),
                min_eigenvalue: min.to_f64_lossy(),
            });
        }
        Ok(Self { data, tolerance })
    }

    pub fn matrix(&self) -> &DMatrix<T> {
        &self.data
    }

    pub fn into_matrix(self) -> DMatrix<T> {
        self.data
    }

    pub fn dim(&self) -> usize {
        self.data.nrows()
    }

    pub fn tolerance(&self) -> T {
        self.tolerance
    }
}

fn check_symmetric<T: Scalar>(a: &DMatrix<T>, tol: T) -> Result<()> {
    let scale = a.iter().fold(T::zero(), |m, v| m.max(v.abs())).max(T::one());
    let mut worst = T::zero();
    for j in 0..a.ncols() {
        for i in 0..j {
            worst = worst.max((a[(i, j)] - a[(j, i)]).abs());
        }
    }
    if worst > tol * scale {
        return Err(Error::NotSymmetric(worst.to_f64_lossy()));
    }
    Ok(())
}

fn symmetrized<T: Scalar>(a: &DMatrix<T>) -> DMatrix<T> {
    (a + a.transpose()) * T::lit(0.5)
}

fn extrema_unchecked<T: Scalar>(a: &DMatrix<T>) -> (T, T) {
    if a.nrows() == 0 {
        return (T::zero(), T::zero());
    }
    let eig = SymmetricEigen::new(symmetrized(a));
    let vals = eig.eigenvalues;
    let min = vals.iter().fold(vals[0], |m, &v| m.min(v));
    let max = vals.iter().fold(vals[0], |m, &v| m.max(v));
    (min, max)
}

fn spectral_power<T: Scalar>(a: &SpdBlock<T>, power: T) -> Result<SpdBlock<T>> {
    let eig = SymmetricEigen::new(symmetrized(&a.data));
    let min = eig.eigenvalues.iter().fold(T::max_value().unwrap(), |m, &v| m.min(v));
    if !(min > T::zero()) {
        return Err(Error::Conditioning {
            context: "matrix root".into(),
            min_eigenvalue: min.to_f64_lossy(),
        });
    }
    let scaled = DVector::from_iterator(
        eig.eigenvalues.len(),
        eig.eigenvalues.iter().map(|&l| l.powf(power)),
    );
    let q = &eig.eigenvectors;
    let mut out = q * DMatrix::from_diagonal(&scaled) * q.transpose();
    out = symmetrized(&out);
    Ok(SpdBlock {
        data: out,
        tolerance: a.tolerance,
    })
}

/// Principal square root `S` of an SPD block, `S·S = A`.
pub fn sqrtm_spd<T: Scalar>(a: &SpdBlock<T>) -> Result<SpdBlock<T>> {
    spectral_power(a, T::lit(0.5))
}

/// Inverse principal square root `S` of an SPD block, `S·A·S = I`.
pub fn inv_sqrtm_spd<T: Scalar>(a: &SpdBlock<T>) -> Result<SpdBlock<T>> {
    spectral_power(a, T::lit(-0.5))
}

/// Smallest and largest eigenvalue of a symmetric matrix.
pub fn eig_extrema<T: Scalar>(a: &DMatrix<T>) -> Result<(T, T)> {
    if !a.is_square() {
        return Err(Error::Dimension("eig_extrema needs a square matrix".into()));
    }
    check_symmetric(a, T::lit(DEFAULT_SYMMETRY_TOL))?;
    Ok(extrema_unchecked(a))
}

/// Block-diagonal matrix stored block by block. Dense `n×n` assembly is only
/// offered for small-instance checks.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockDiag<T: Scalar> {
    blocks: Vec<DMatrix<T>>,
    offsets: Vec<usize>,
}

impl<T: Scalar> BlockDiag<T> {
    pub fn new(blocks: Vec<DMatrix<T>>) -> Result<Self> {
        let mut offsets = Vec::with_capacity(blocks.len() + 1);
        let mut acc = 0;
        offsets.push(0);
        for (g, b) in blocks.iter().enumerate() {
            if !b.is_square() {
                return Err(Error::Dimension(format!("block {g} is not square")));
            }
            acc += b.nrows();
            offsets.push(acc);
        }
        Ok(Self { blocks, offsets })
    }

    pub fn blocks(&self) -> &[DMatrix<T>] {
        &self.blocks
    }

    pub fn block(&self, g: usize) -> &DMatrix<T> {
        &self.blocks[g]
    }

    pub fn num_blocks(&self) -> usize {
        self.blocks.len()
    }

    /// Total dimension `n`.
    pub fn dim(&self) -> usize {
        *self.offsets.last().unwrap_or(&0)
    }

    /// Row range occupied by block `g`.
    pub fn range(&self, g: usize) -> std::ops::Range<usize> {
        self.offsets[g]..self.offsets[g + 1]
    }

    pub fn mul_vec(&self, v: &DVector<T>) -> Result<DVector<T>> {
        if v.len() != self.dim() {
            return Err(Error::Dimension(format!(
                "vector of length {} against block-diagonal of size {}",
                v.len(),
                self.dim()
            )));
        }
        let mut out = DVector::zeros(v.len());
        for (g, b) in self.blocks.iter().enumerate() {
            let r = self.range(g);
            let seg = b * v.rows(r.start, r.len());
            out.rows_mut(r.start, r.len()).copy_from(&seg);
        }
        Ok(out)
    }

    pub fn mul_mat(&self, m: &DMatrix<T>) -> Result<DMatrix<T>> {
        if m.nrows() != self.dim() {
            return Err(Error::Dimension(format!(
                "matrix with {} rows against block-diagonal of size {}",
                m.nrows(),
                self.dim()
            )));
        }
        let mut out = DMatrix::zeros(m.nrows(), m.ncols());
        for (g, b) in self.blocks.iter().enumerate() {
            let r = self.range(g);
            let seg = b * m.rows(r.start, r.len());
            out.rows_mut(r.start, r.len()).copy_from(&seg);
        }
        Ok(out)
    }

    /// `vᵀ B v`.
    pub fn quad_form(&self, v: &DVector<T>) -> Result<T> {
        let bv = self.mul_vec(v)?;
        Ok(v.dot(&bv))
    }

    /// Applies `f` to every block.
    pub fn try_map<F>(&self, mut f: F) -> Result<Self>
    where
        F: FnMut(usize, &DMatrix<T>) -> Result<DMatrix<T>>,
    {
        let blocks = self
            .blocks
            .iter()
            .enumerate()
            .map(|(g, b)| f(g, b))
            .collect::<Result<Vec<_>>>()?;
        Self::new(blocks)
    }

    pub fn to_dense(&self) -> DMatrix<T> {
        let n = self.dim();
        let mut out = DMatrix::zeros(n, n);
        for (g, b) in self.blocks.iter().enumerate() {
            let r = self.range(g);
            out.view_mut((r.start, r.start), (r.len(), r.len())).copy_from(b);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_spd(d: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
        let g = DMatrix::from_fn(d, d, |_, _| rng.random::<f64>() * 2.0 - 1.0);
        &g * g.transpose() + DMatrix::identity(d, d) * 0.5
    }

    fn rel_frob(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
        (a - b).norm() / b.norm()
    }

    #[test]
    fn identity_and_diagonal_roots() {
        let i = SpdBlock::new(DMatrix::<f64>::identity(3, 3)).unwrap();
        assert_relative_eq!(sqrtm_spd(&i).unwrap().matrix(), i.matrix(), epsilon = 1e-14);
        assert_relative_eq!(inv_sqrtm_spd(&i).unwrap().matrix(), i.matrix(), epsilon = 1e-14);

        let d = SpdBlock::new(DMatrix::from_diagonal(&DVector::from_vec(vec![4.0, 9.0]))).unwrap();
        let s = sqrtm_spd(&d).unwrap();
        assert_relative_eq!(s.matrix()[(0, 0)], 2.0, epsilon = 1e-14);
        assert_relative_eq!(s.matrix()[(1, 1)], 3.0, epsilon = 1e-14);
        assert_relative_eq!(s.matrix()[(0, 1)], 0.0, epsilon = 1e-14);

        let four = SpdBlock::new(DMatrix::from_element(1, 1, 4.0)).unwrap();
        assert_relative_eq!(inv_sqrtm_spd(&four).unwrap().matrix()[(0, 0)], 0.5, epsilon = 1e-15);
    }

    #[test]
    fn random_spd_reconstruction() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let a = random_spd(8, &mut rng);
            let blk = SpdBlock::new(a.clone()).unwrap();
            let s = sqrtm_spd(&blk).unwrap();
            assert!(rel_frob(&(s.matrix() * s.matrix()), &a) < 1e-10);
            let r = inv_sqrtm_spd(&blk).unwrap();
            let should_be_i = r.matrix() * &a * r.matrix();
            assert!((should_be_i - DMatrix::identity(8, 8)).amax() < 1e-9);
        }
    }

    #[test]
    fn non_pd_input_reports_min_eigenvalue() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        match SpdBlock::new(a) {
            Err(Error::Conditioning { min_eigenvalue, .. }) => {
                assert_relative_eq!(min_eigenvalue, -1.0, epsilon = 1e-12)
            }
            other => panic!("expected conditioning error, got {other:?}"),
        }
    }

    #[test]
    fn extrema_match_full_spectrum() {
        let diag = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 2.0, 3.0]));
        assert_eq!(eig_extrema(&diag).unwrap(), (1.0, 3.0));
        assert_eq!(eig_extrema(&DMatrix::<f64>::identity(4, 4)).unwrap(), (1.0, 1.0));

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let g = DMatrix::from_fn(10, 10, |_, _| rng.random::<f64>() - 0.5);
        let sym = &g + g.transpose();
        let (lo, hi) = eig_extrema(&sym).unwrap();
        // Full spectrum via the Schur form of the (symmetric) matrix.
        let full = sym.clone().schur().eigenvalues().unwrap();
        let olo = full.iter().cloned().fold(f64::INFINITY, f64::min);
        let ohi = full.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert_relative_eq!(lo, olo, max_relative = 1e-9);
        assert_relative_eq!(hi, ohi, max_relative = 1e-9);
    }

    #[test]
    fn non_symmetric_rejected() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert!(matches!(eig_extrema(&a), Err(Error::NotSymmetric(_))));
    }

    #[test]
    fn block_diag_products_match_dense() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let blocks = vec![random_spd(2, &mut rng), random_spd(3, &mut rng), random_spd(1, &mut rng)];
        let bd = BlockDiag::new(blocks).unwrap();
        let dense = bd.to_dense();
        let v = DVector::from_fn(6, |i, _| i as f64 - 2.5);
        assert_relative_eq!(bd.mul_vec(&v).unwrap(), &dense * &v, epsilon = 1e-12);
        assert_relative_eq!(bd.quad_form(&v).unwrap(), v.dot(&(&dense * &v)), epsilon = 1e-12);
        let m = DMatrix::from_fn(6, 2, |i, j| (i * 2 + j) as f64);
        assert_relative_eq!(bd.mul_mat(&m).unwrap(), &dense * &m, epsilon = 1e-12);
        assert!(bd.mul_vec(&DVector::zeros(5)).is_err());
    }

    #[test]
    fn f32_instantiation() {
        let d = SpdBlock::new(DMatrix::<f32>::from_diagonal(&DVector::from_vec(vec![4.0, 16.0]))).unwrap();
        let s = inv_sqrtm_spd(&d).unwrap();
        assert!((s.matrix()[(1, 1)] - 0.25).abs() < 1e-6);
    }
}
