use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::frame::Frame;
use super::operator::{eigh, singular_values, HermitianOperator, Spectrum};
use crate::{AceError, Field, Result};

/// How [`density_matrix`] treats a vanishing gap at `n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[derive(Default)]
pub struct GapPolicy {
    /// Absolute tolerance; `None` means `1e-12 * |H|_2`.
    pub gap_tol: Option<f64>,
    /// Accept a degenerate gap and take the deterministic `eigh` tie-break.
    pub allow_degenerate: bool,
}


impl GapPolicy {
    pub const RELATIVE_GAP_TOL: f64 = 1e-12;

    pub fn permissive() -> Self {
        Self { gap_tol: None, allow_degenerate: true }
    }
}

/// Projector onto the lowest `n` eigenvectors of a Hermitian operator.
#[derive(Debug, Clone)]
pub struct DensityMatrix<T: Field> {
    pub frame: Frame<T>,
    pub spectrum: Spectrum<T>,
    pub lambda_n: f64,
    /// `lambda_{n+1}`, or `+inf` when `n = N`.
    pub lambda_next: f64,
    pub gap: f64,
    /// True when the gap fell inside the tolerance and the tie-break chose the frame.
    pub degenerate: bool,
}

impl<T: Field> DensityMatrix<T> {
    /// The lowest `n` eigenvalues.
    pub fn occupied_eigenvalues(&self) -> &[f64] {
        &self.spectrum.eigenvalues[..self.frame.rank()]
    }
}

pub fn density_matrix<T: Field>(
    h: &HermitianOperator<T>,
    n: usize,
    policy: GapPolicy,
) -> Result<DensityMatrix<T>> {
    density_matrix_from_spectrum(eigh(h), n, policy)
}

pub fn density_matrix_from_spectrum<T: Field>(
    spectrum: Spectrum<T>,
    n: usize,
    policy: GapPolicy,
) -> Result<DensityMatrix<T>> {
    let dim = spectrum.dim();
    if n == 0 || n > dim {
        return Err(AceError::RankOutOfRange { rank: n, max: dim });
    }
    let ev = &spectrum.eigenvalues;
    let norm = ev[0].abs().max(ev[dim - 1].abs());
    let tol = policy.gap_tol.unwrap_or(GapPolicy::RELATIVE_GAP_TOL * norm);
    let lambda_n = ev[n - 1];
    let lambda_next = if n < dim { ev[n] } else { f64::INFINITY };
    let gap = lambda_next - lambda_n;
    let degenerate = gap <= tol;
    if degenerate && !policy.allow_degenerate {
        return Err(AceError::DegenerateGap { n, gap, tol });
    }
    let frame = Frame::from_orthonormal_unchecked(spectrum.eigenvectors.columns(0, n).into_owned());
    Ok(DensityMatrix { frame, spectrum, lambda_n, lambda_next, gap, degenerate })
}

/// `|P^perp W|`, the component of `span W` outside `span V`.
fn residual<T: Field>(p: &Frame<T>, q: &Frame<T>) -> Result<DMatrix<T>> {
    if p.dim() != q.dim() || p.rank() != q.rank() {
        return Err(AceError::DimensionMismatch(format!(
            "frames {}x{} and {}x{}",
            p.dim(),
            p.rank(),
            q.dim(),
            q.rank()
        )));
    }
    let v = p.columns();
    let w = q.columns();
    Ok(w - v * (v.adjoint() * w))
}

/// Spectral-norm distance `|VV* - WW*|_2`, the sine of the largest principal angle.
///
/// Evaluated as `|(I - VV*) W|_2`, which keeps full relative accuracy for
/// nearly coincident subspaces, where `sqrt(1 - sigma_min(V*W)^2)` cancels.
/// Both residual directions are evaluated so the result is exactly symmetric.
pub fn subspace_distance<T: Field>(p: &Frame<T>, q: &Frame<T>) -> Result<f64> {
    let top = |r: DMatrix<T>| singular_values(&r).first().copied().unwrap_or(0.0);
    let s = top(residual(p, q)?).max(top(residual(q, p)?));
    Ok(s.clamp(0.0, 1.0))
}

/// Frobenius-norm distance `|VV* - WW*|_F = sqrt(2) |(I - VV*) W|_F`.
pub fn frobenius_distance<T: Field>(p: &Frame<T>, q: &Frame<T>) -> Result<f64> {
    let f = residual(p, q)?.norm().max(residual(q, p)?.norm());
    Ok(std::f64::consts::SQRT_2 * f)
}

/// Sines of the principal angles, descending.
pub fn principal_sines<T: Field>(p: &Frame<T>, q: &Frame<T>) -> Result<Vec<f64>> {
    let mut s = singular_values(&residual(p, q)?);
    s.resize(p.rank(), 0.0);
    Ok(s.into_iter().map(|x| x.clamp(0.0, 1.0)).collect())
}

/// Sub-frame of the `m` columns with the lowest paired values; ties go to the
/// lower column index.
pub fn sub_frame<T: Field>(v: &Frame<T>, values: &[f64], m: usize) -> Result<Frame<T>> {
    if values.len() != v.rank() {
        return Err(AceError::DimensionMismatch(format!(
            "{} values for a rank-{} frame",
            values.len(),
            v.rank()
        )));
    }
    if m == 0 || m > v.rank() {
        return Err(AceError::RankOutOfRange { rank: m, max: v.rank() });
    }
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
    let cols: Vec<_> = order[..m].iter().map(|&j| v.columns().column(j).clone_owned()).collect();
    Ok(Frame::from_orthonormal_unchecked(DMatrix::from_columns(&cols)))
}
