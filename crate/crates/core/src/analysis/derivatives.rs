use nalgebra::DMatrix;

use super::jacobian::JacobianBlocks;
use crate::compression::SHIFT_TOL;
use crate::linalg::{density_matrix, spectral_norm, Frame, GapPolicy, HermitianOperator};
use crate::{AceError, Field, Result};

/// Tolerance on the non-tangent blocks `P dP P` and `P^perp dP P^perp`.
pub const TANGENT_TOL: f64 = 1e-10;

/// Checks that `dp` is Hermitian and lies in the tangent space at `span p`.
pub fn check_tangent<T: Field>(p: &Frame<T>, dp: &DMatrix<T>) -> Result<()> {
    let dim = p.dim();
    if dp.shape() != (dim, dim) {
        return Err(AceError::DimensionMismatch(format!("dP is {:?}, expected {dim}x{dim}", dp.shape())));
    }
    let scale = spectral_norm(dp).max(1.0);
    let proj = p.projector();
    let perp = DMatrix::<T>::identity(dim, dim) - &proj;
    let defect = spectral_norm(&(dp - dp.adjoint()))
        .max(spectral_norm(&(&proj * dp * &proj)))
        .max(spectral_norm(&(&perp * dp * &perp)));
    if defect > TANGENT_TOL * scale {
        return Err(AceError::NotTangent { defect });
    }
    Ok(())
}

/// `C X U* + U X* C*`: the tangent matrix with coordinates `X` in the basis
/// `[U | C]`.
pub fn tangent_from_coords<T: Field>(u: &Frame<T>, c: &DMatrix<T>, x: &DMatrix<T>) -> DMatrix<T> {
    let half = c * x * u.columns().adjoint();
    let adj = half.adjoint();
    half + adj
}

/// Derivative of the density matrix of `h` (rank `n`) in the direction `dh`:
/// `sum_{i<=n<a} u_a (u_a* dH u_i) u_i* / (mu_i - mu_a) + h.c.`.
pub fn dp_dh<T: Field>(h: &HermitianOperator<T>, n: usize, dh: &HermitianOperator<T>) -> Result<DMatrix<T>> {
    if dh.dim() != h.dim() {
        return Err(AceError::DimensionMismatch(format!("{} != {}", dh.dim(), h.dim())));
    }
    let dm = density_matrix(h, n, GapPolicy::default())?;
    let u = &dm.spectrum.eigenvectors;
    let mu = &dm.spectrum.eigenvalues;
    let g = u.adjoint() * dh.matrix() * u;
    let dim = h.dim();
    let mut coupling = DMatrix::<T>::zeros(dim, dim);
    for i in 0..n {
        for a in n..dim {
            let z = g[(a, i)].unscale(mu[i] - mu[a]);
            coupling[(a, i)] = z;
            coupling[(i, a)] = z.conjugate();
        }
    }
    Ok(u * coupling * u.adjoint())
}

/// Derivative of `B~[P, t]` along the tangent direction `dp`:
/// `(B_t - B~_t) dP (P B_t P)^+ B_t + h.c.` with `B_t = B - t`.
pub fn dbtilde_dp<T: Field>(b: &HermitianOperator<T>, p: &Frame<T>, dp: &DMatrix<T>, t: f64) -> Result<DMatrix<T>> {
    if b.dim() != p.dim() {
        return Err(AceError::DimensionMismatch(format!("{} != {}", b.dim(), p.dim())));
    }
    let ev = b.eigenvalues();
    let lambda_max = ev[ev.len() - 1] - t;
    let threshold = -SHIFT_TOL * b.norm2();
    if lambda_max >= threshold {
        return Err(AceError::ShiftInsufficient { lambda_max, threshold });
    }
    check_tangent(p, dp)?;
    let bt = b.shifted(t);
    let v = p.columns();
    let w = bt.matrix() * v;
    let m = (w.adjoint() * v).lu().try_inverse().ok_or(AceError::SingularProjection)?;
    let residual = bt.matrix() - &w * &m * w.adjoint();
    let half = residual * dp * v * m * w.adjoint();
    let adj = half.adjoint();
    Ok(half + adj)
}

/// Derivative of the fixed-point map at a fixed point, `sum_i Z_i dP u_i u_i* + h.c.`.
pub fn df_dp<T: Field>(blocks: &JacobianBlocks<T>, dp: &DMatrix<T>) -> Result<DMatrix<T>> {
    check_tangent(&blocks.occupied, dp)?;
    Ok(blocks.apply(dp))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn swap() -> DMatrix<f64> {
        DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0])
    }

    #[test]
    fn dp_dh_two_level() {
        let h = HermitianOperator::<f64>::from_real_diagonal(&[1.0, 2.0]);
        let dh = HermitianOperator::new(swap()).unwrap();
        let d = dp_dh(&h, 1, &dh).unwrap();
        assert!((d + swap()).norm() < 1e-15);
        let diag = HermitianOperator::from_real_diagonal(&[0.3, -0.7]);
        assert!(dp_dh(&h, 1, &diag).unwrap().norm() < 1e-15);
    }

    #[test]
    fn dbtilde_two_level() {
        let b = HermitianOperator::<f64>::from_real_diagonal(&[-2.0, -1.0]);
        let p = Frame::coordinate(2, &[0]).unwrap();
        let d = dbtilde_dp(&b, &p, &swap(), 0.0).unwrap();
        assert!((d + swap()).norm() < 1e-15);
        let z = dbtilde_dp(&b, &p, &DMatrix::zeros(2, 2), 0.0).unwrap();
        assert_abs_diff_eq!(z.norm(), 0.0);
    }

    #[test]
    fn non_tangent_direction_is_rejected() {
        let b = HermitianOperator::<f64>::from_real_diagonal(&[-2.0, -1.0]);
        let p = Frame::coordinate(2, &[0]).unwrap();
        let bad = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        assert!(matches!(dbtilde_dp(&b, &p, &bad, 0.0), Err(AceError::NotTangent { .. })));
        let pos = HermitianOperator::<f64>::from_real_diagonal(&[2.0, -1.0]);
        assert!(matches!(dbtilde_dp(&pos, &p, &swap(), 0.0), Err(AceError::ShiftInsufficient { .. })));
    }
}
