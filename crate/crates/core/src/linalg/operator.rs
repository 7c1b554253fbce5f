use nalgebra::{DMatrix, DVector, SymmetricEigen, SVD};

use crate::{AceError, Field, FieldTag, Result};

/// Dense Hermitian (or real symmetric) operator.
///
/// Construction symmetrizes the input as `(M + M*)/2`, so the stored entries
/// are exactly Hermitian.
#[derive(Debug, Clone, PartialEq)]
pub struct HermitianOperator<T: Field> {
    entries: DMatrix<T>,
}

impl<T: Field> HermitianOperator<T> {
    /// Relative asymmetry beyond which input is rejected rather than symmetrized.
    pub const ASYMMETRY_TOL: f64 = 1e-8;

    pub fn new(m: DMatrix<T>) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(AceError::DimensionMismatch(format!(
                "operator must be square, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        if m.nrows() == 0 {
            return Err(AceError::DimensionMismatch("operator dimension must be >= 1".into()));
        }
        let scale = max_abs(&m).max(1.0);
        let adj = m.adjoint();
        let asymmetry = max_abs(&(&m - &adj));
        if asymmetry > Self::ASYMMETRY_TOL * scale {
            return Err(AceError::NotHermitian { asymmetry });
        }
        Ok(Self { entries: symmetrize(m) })
    }

    pub fn zeros(dim: usize) -> Self {
        Self { entries: DMatrix::zeros(dim, dim) }
    }

    pub fn identity(dim: usize) -> Self {
        Self { entries: DMatrix::identity(dim, dim) }
    }

    pub fn from_real_diagonal(diag: &[f64]) -> Self {
        let d = DVector::from_iterator(diag.len(), diag.iter().map(|&x| T::from_real(x)));
        Self { entries: DMatrix::from_diagonal(&d) }
    }

    /// Wraps a matrix already known to be Hermitian, symmetrizing away roundoff.
    pub(crate) fn from_hermitian_unchecked(m: DMatrix<T>) -> Self {
        Self { entries: symmetrize(m) }
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    pub fn field_tag(&self) -> FieldTag {
        T::TAG
    }

    pub fn matrix(&self) -> &DMatrix<T> {
        &self.entries
    }

    pub fn into_matrix(self) -> DMatrix<T> {
        self.entries
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        check_same_dim(self.dim(), other.dim())?;
        Ok(Self { entries: &self.entries + &other.entries })
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        check_same_dim(self.dim(), other.dim())?;
        Ok(Self { entries: &self.entries - &other.entries })
    }

    pub fn scale(&self, c: f64) -> Self {
        Self { entries: self.entries.scale(c) }
    }

    /// Returns `H - t I`.
    pub fn shifted(&self, t: f64) -> Self {
        let mut m = self.entries.clone();
        for i in 0..m.nrows() {
            m[(i, i)] -= T::from_real(t);
        }
        Self { entries: m }
    }

    pub fn apply(&self, x: &DVector<T>) -> Result<DVector<T>> {
        check_same_dim(self.dim(), x.len())?;
        Ok(&self.entries * x)
    }

    pub fn eigh(&self) -> Spectrum<T> {
        eigh(self)
    }

    /// Sorted eigenvalues without eigenvectors.
    pub fn eigenvalues(&self) -> Vec<f64> {
        let mut ev: Vec<f64> = self.entries.clone().symmetric_eigenvalues().iter().copied().collect();
        ev.sort_by(f64::total_cmp);
        ev
    }

    pub fn lambda_max(&self) -> f64 {
        *self.eigenvalues().last().expect("dim >= 1")
    }

    pub fn lambda_min(&self) -> f64 {
        self.eigenvalues()[0]
    }

    /// Spectral norm, `max |lambda_i|`.
    pub fn norm2(&self) -> f64 {
        let ev = self.eigenvalues();
        ev[0].abs().max(ev[ev.len() - 1].abs())
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.entries.norm()
    }
}

/// Full spectral decomposition; eigenvalues ascend and column `i` of
/// `eigenvectors` pairs with `eigenvalues[i]`.
#[derive(Debug, Clone)]
pub struct Spectrum<T: Field> {
    pub eigenvalues: Vec<f64>,
    pub eigenvectors: DMatrix<T>,
}

impl<T: Field> Spectrum<T> {
    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    /// Reassembles `U diag(lambda) U*`.
    pub fn reconstruct(&self) -> DMatrix<T> {
        let mut scaled = self.eigenvectors.clone();
        for (j, &l) in self.eigenvalues.iter().enumerate() {
            scaled.column_mut(j).scale_mut(l);
        }
        scaled * self.eigenvectors.adjoint()
    }
}

/// Hermitian eigendecomposition with a deterministic ordering.
///
/// Eigenvalues are sorted ascending with ties kept in backend order, and each
/// eigenvector is rotated so that its first entry of maximal modulus is real
/// and positive.
pub fn eigh<T: Field>(h: &HermitianOperator<T>) -> Spectrum<T> {
    let eig = SymmetricEigen::new(h.entries.clone());
    let n = h.dim();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let eigenvalues = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut eigenvectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        let mut col = eig.eigenvectors.column(src).clone_owned();
        let (mut best, mut best_mod) = (0, -1.0);
        for (i, z) in col.iter().enumerate() {
            let m = z.modulus();
            if m > best_mod * (1.0 + 1e-12) {
                best = i;
                best_mod = m;
            }
        }
        let ph = col[best].phase().conjugate();
        for z in col.iter_mut() {
            *z *= ph;
        }
        eigenvectors.set_column(dst, &col);
    }
    Spectrum { eigenvalues, eigenvectors }
}

pub(crate) fn symmetrize<T: Field>(m: DMatrix<T>) -> DMatrix<T> {
    let adj = m.adjoint();
    (m + adj).scale(0.5)
}

pub(crate) fn max_abs<T: Field>(m: &DMatrix<T>) -> f64 {
    m.iter().fold(0.0, |acc, z| acc.max(z.modulus()))
}

/// Largest singular value of an arbitrary dense matrix.
pub fn spectral_norm<T: Field>(m: &DMatrix<T>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    let svd = SVD::new(m.clone(), false, false);
    svd.singular_values.iter().fold(0.0, |a, &s| a.max(s))
}

pub fn singular_values<T: Field>(m: &DMatrix<T>) -> Vec<f64> {
    if m.is_empty() {
        return Vec::new();
    }
    let mut s: Vec<f64> = SVD::new(m.clone(), false, false).singular_values.iter().copied().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

pub(crate) fn check_same_dim(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(AceError::DimensionMismatch(format!("{a} != {b}")));
    }
    Ok(())
}
