use nalgebra::DMatrix;
use rand::Rng;

use super::operator::{check_same_dim, HermitianOperator};
use crate::{AceError, Field, Result};

/// Orthonormal `N x n` frame; the factored form of the rank-`n` projector `V V*`.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame<T: Field> {
    columns: DMatrix<T>,
}

impl<T: Field> Frame<T> {
    /// Frobenius-norm tolerance on `V*V - I` accepted at construction.
    pub const ORTHONORMAL_TOL: f64 = 1e-10;

    pub fn new(columns: DMatrix<T>) -> Result<Self> {
        let (dim, rank) = columns.shape();
        if rank == 0 || rank > dim {
            return Err(AceError::RankOutOfRange { rank, max: dim });
        }
        let defect = orthonormality_defect(&columns);
        if defect > Self::ORTHONORMAL_TOL {
            return Err(AceError::NotOrthonormal { defect });
        }
        Ok(Self { columns })
    }

    /// Orthonormalizes arbitrary full-column-rank input by Householder QR.
    pub fn orthonormalize(m: &DMatrix<T>) -> Result<Self> {
        let (dim, rank) = m.shape();
        if rank == 0 || rank > dim {
            return Err(AceError::RankOutOfRange { rank, max: dim });
        }
        let (q, r) = householder_qr(m);
        let scale = m.norm().max(f64::MIN_POSITIVE);
        if (0..rank).any(|k| r[(k, k)].modulus() <= 1e-12 * scale) {
            return Err(AceError::InvalidParameter("columns are linearly dependent".into()));
        }
        Ok(Self { columns: q.columns(0, rank).into_owned() })
    }

    pub(crate) fn from_orthonormal_unchecked(columns: DMatrix<T>) -> Self {
        Self { columns }
    }

    /// Frame spanned by the listed coordinate vectors (0-based indices).
    pub fn coordinate(dim: usize, indices: &[usize]) -> Result<Self> {
        if indices.is_empty() || indices.len() > dim {
            return Err(AceError::RankOutOfRange { rank: indices.len(), max: dim });
        }
        let mut m = DMatrix::zeros(dim, indices.len());
        for (j, &i) in indices.iter().enumerate() {
            if i >= dim {
                return Err(AceError::DimensionMismatch(format!("index {i} >= dim {dim}")));
            }
            m[(i, j)] = T::one();
        }
        Self::new(m)
    }

    /// Haar-distributed frame: QR of a Gaussian matrix with the diagonal of
    /// `R` made real positive.
    pub fn haar<R: Rng + ?Sized>(dim: usize, rank: usize, rng: &mut R) -> Result<Self> {
        let g = DMatrix::from_fn(dim, rank, |_, _| T::gaussian(rng));
        Self::orthonormalize(&g)
    }

    pub fn dim(&self) -> usize {
        self.columns.nrows()
    }

    pub fn rank(&self) -> usize {
        self.columns.ncols()
    }

    pub fn columns(&self) -> &DMatrix<T> {
        &self.columns
    }

    pub fn into_columns(self) -> DMatrix<T> {
        self.columns
    }

    /// Dense `V V*`.
    pub fn projector(&self) -> DMatrix<T> {
        &self.columns * self.columns.adjoint()
    }

    pub fn projector_operator(&self) -> HermitianOperator<T> {
        HermitianOperator::from_hermitian_unchecked(self.projector())
    }

    /// Frame of the same span with columns `V U` for a unitary `U`.
    pub fn rotated(&self, u: &DMatrix<T>) -> Result<Self> {
        check_same_dim(self.rank(), u.nrows())?;
        Self::new(&self.columns * u)
    }

    /// `|V*V - I|_F`.
    pub fn orthonormality_defect(&self) -> f64 {
        orthonormality_defect(&self.columns)
    }

    /// Orthonormal basis of the orthogonal complement (`N x (N-n)`), taken
    /// from the full Householder QR of `V`. Deterministic for fixed input.
    pub fn completion(&self) -> DMatrix<T> {
        let (q, _) = householder_qr(&self.columns);
        q.columns(self.rank(), self.dim() - self.rank()).into_owned()
    }

    /// Unitary `[V | completion]`.
    pub fn adapted_basis(&self) -> DMatrix<T> {
        let mut basis = DMatrix::zeros(self.dim(), self.dim());
        basis.columns_mut(0, self.rank()).copy_from(&self.columns);
        basis
            .columns_mut(self.rank(), self.dim() - self.rank())
            .copy_from(&self.completion());
        basis
    }
}

fn orthonormality_defect<T: Field>(v: &DMatrix<T>) -> f64 {
    let g = v.adjoint() * v;
    (g - DMatrix::identity(v.ncols(), v.ncols())).norm()
}

/// Full Householder QR `A = Q R` of an `m x n` matrix (`m >= n`).
///
/// `Q` is `m x m` unitary and the diagonal of `R` (`n x n`) is real and
/// nonnegative.
pub fn householder_qr<T: Field>(a: &DMatrix<T>) -> (DMatrix<T>, DMatrix<T>) {
    let (m, n) = a.shape();
    assert!(m >= n, "householder_qr expects a tall matrix");
    let mut r = a.clone();
    let mut reflectors: Vec<Option<nalgebra::DVector<T>>> = Vec::with_capacity(n);
    for k in 0..n {
        let x = r.view((k, k), (m - k, 1)).column(0).clone_owned();
        let xnorm = x.norm();
        if xnorm == 0.0 {
            reflectors.push(None);
            continue;
        }
        let alpha = -x[0].phase().scale(xnorm);
        let mut v = x;
        v[0] -= alpha;
        let vnorm = v.norm();
        if vnorm == 0.0 {
            reflectors.push(None);
            continue;
        }
        v.unscale_mut(vnorm);
        let mut sub = r.view_mut((k, k), (m - k, n - k));
        let w = v.adjoint() * &sub;
        sub -= (&v * w).scale(2.0);
        reflectors.push(Some(v));
    }
    let mut q = DMatrix::<T>::identity(m, m);
    for (k, refl) in reflectors.iter().enumerate().rev() {
        if let Some(v) = refl {
            let mut sub = q.view_mut((k, 0), (m - k, m));
            let w = v.adjoint() * &sub;
            sub -= (v * w).scale(2.0);
        }
    }
    let mut rr = r.rows(0, n).into_owned();
    for j in 0..n {
        let d = rr[(j, j)].phase();
        for i in 0..m {
            q[(i, j)] *= d;
        }
        let dc = d.conjugate();
        for c in 0..n {
            rr[(j, c)] *= dc;
        }
        for i in (j + 1)..n {
            rr[(i, j)] = T::zero();
        }
    }
    (q, rr)
}
