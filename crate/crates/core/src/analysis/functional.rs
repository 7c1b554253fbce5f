use nalgebra::{DMatrix, SVD};
use serde::{Deserialize, Serialize};

use super::jacobian::{jacobian_blocks, JacobianBlocks};
use crate::iteration::Problem;
use crate::linalg::Frame;
use crate::{AceError, Field, Result};

/// `F(Q) = sum_{i<=n} lambda_i(A + B~[Q, t])`.
pub fn functional_f<T: Field>(prob: &Problem<T>, q: &Frame<T>) -> Result<f64> {
    let c = prob.compress_with(&prob.b().detached(), q)?;
    let ev = prob.compressed_hamiltonian(&c).eigenvalues();
    Ok(ev[..prob.n()].iter().sum())
}

/// `Phi(X)`: the first `n` columns of `[V | C] exp([[0, -X*], [X, 0]])`, with
/// `C` the QR completion of `V` and `X` of shape `(N-n) x n`.
pub fn tangent_chart<T: Field>(v: &Frame<T>, x: &DMatrix<T>) -> Result<Frame<T>> {
    let c = v.completion();
    tangent_chart_with(v, &c, x)
}

pub(crate) fn tangent_chart_with<T: Field>(v: &Frame<T>, c: &DMatrix<T>, x: &DMatrix<T>) -> Result<Frame<T>> {
    let n = v.rank();
    if x.shape() != (c.ncols(), n) {
        return Err(AceError::DimensionMismatch(format!(
            "chart coordinates {:?}, expected {}x{}",
            x.shape(),
            c.ncols(),
            n
        )));
    }
    let svd = SVD::new(x.clone(), true, true);
    let u = svd.u.expect("requested U");
    let w = svd.v_t.expect("requested V^T").adjoint();
    let k = svd.singular_values.len();
    let cos_minus_one = DMatrix::from_fn(k, k, |i, j| {
        if i == j {
            T::from_real(svd.singular_values[i].cos() - 1.0)
        } else {
            T::zero()
        }
    });
    let sin = DMatrix::from_fn(k, k, |i, j| if i == j { T::from_real(svd.singular_values[i].sin()) } else { T::zero() });
    let top = DMatrix::<T>::identity(n, n) + &w * cos_minus_one * w.adjoint();
    let bottom = u * sin * w.adjoint();
    Frame::new(v.columns() * top + c * bottom)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SaddleCurvature {
    /// `d/ds F(Phi(sX))` at 0, by Richardson-extrapolated central differences
    /// at a tenth of the curvature step.
    pub first_deriv: f64,
    /// Closed-form second derivative.
    pub second_deriv: f64,
    /// Second derivative by Richardson-extrapolated central differences.
    pub second_deriv_fd: f64,
}

/// Default finite-difference step along the chart curve (for unit `X`).
pub const CURVATURE_STEP: f64 = 1e-3;

pub fn saddle_curvature<T: Field>(prob: &Problem<T>, p_f: &Frame<T>, x: &DMatrix<T>) -> Result<SaddleCurvature> {
    let blocks = jacobian_blocks(prob, p_f)?;
    saddle_curvature_with(prob, &blocks, x, CURVATURE_STEP)
}

/// Second derivative of `s -> F(Phi(sX))` at a fixed point:
/// `2 sum_i [X_i* D X_i - X_i* D (H22 - mu_i)^{-1} D X_i]`, which reduces to
/// `2 (1 - sigma) X_j* D X_j` for an eigenvector of block `j`.
pub fn closed_form_curvature<T: Field>(blocks: &JacobianBlocks<T>, x: &DMatrix<T>) -> f64 {
    let mut total = 0.0;
    for (i, j) in blocks.blocks.iter().enumerate() {
        let xi = x.column(i);
        let dx = &blocks.d * xi;
        let jx = j * xi;
        // D (H22 - mu_i)^{-1} D X_i = D J_i X_i
        total += xi.dotc(&dx).real() - xi.dotc(&(&blocks.d * jx)).real();
    }
    2.0 * total
}

pub fn saddle_curvature_with<T: Field>(
    prob: &Problem<T>,
    blocks: &JacobianBlocks<T>,
    x: &DMatrix<T>,
    step: f64,
) -> Result<SaddleCurvature> {
    let scale = x.norm();
    if scale == 0.0 {
        return Ok(SaddleCurvature { first_deriv: 0.0, second_deriv: 0.0, second_deriv_fd: 0.0 });
    }
    let h = step / scale;
    let g = |s: f64| -> Result<f64> {
        let q = tangent_chart_with(&blocks.occupied, &blocks.completion, &x.scale(s))?;
        functional_f(prob, &q)
    };
    let g0 = g(0.0)?;
    let (gp, gm, gp2, gm2) = (g(h)?, g(-h)?, g(h / 2.0)?, g(-h / 2.0)?);
    let d1 = |a: f64, b: f64, hh: f64| (a - b) / (2.0 * hh);
    let d2 = |a: f64, b: f64, hh: f64| (a - 2.0 * g0 + b) / (hh * hh);
    // The first derivative vanishes, so its error is pure h^4 truncation;
    // a tenth of the step stays well above roundoff.
    let h1 = h / 10.0;
    let (fp, fm, fp2, fm2) = (g(h1)?, g(-h1)?, g(h1 / 2.0)?, g(-h1 / 2.0)?);
    let first = (4.0 * d1(fp2, fm2, h1 / 2.0) - d1(fp, fm, h1)) / 3.0;
    let second_fd = (4.0 * d2(gp2, gm2, h / 2.0) - d2(gp, gm, h)) / 3.0;
    Ok(SaddleCurvature {
        first_deriv: first,
        second_deriv: closed_form_curvature(blocks, x),
        second_deriv_fd: second_fd,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::subspace_distance;
    use crate::problems::counterexample;
    use approx::assert_abs_diff_eq;

    #[test]
    fn functional_on_three_level_problem() {
        let p = counterexample("3x3").unwrap();
        for (i, want) in [(0, -4.0), (1, -3.0), (2, -2.0)] {
            assert_abs_diff_eq!(functional_f(&p, &Frame::coordinate(3, &[i]).unwrap()).unwrap(), want, epsilon = 1e-14);
        }
    }

    #[test]
    fn chart_at_origin_is_identity() {
        let v = Frame::<f64>::coordinate(4, &[1, 3]).unwrap();
        let q = tangent_chart(&v, &DMatrix::zeros(2, 2)).unwrap();
        assert_eq!(q.columns(), v.columns());
    }

    #[test]
    fn chart_rotates_by_the_coordinate_angle() {
        let v = Frame::<f64>::coordinate(2, &[0]).unwrap();
        let q = tangent_chart(&v, &DMatrix::from_element(1, 1, 0.3)).unwrap();
        assert_abs_diff_eq!(subspace_distance(&v, &q).unwrap(), 0.3f64.sin(), epsilon = 1e-15);
    }

    #[test]
    fn two_level_curvatures() {
        let p = counterexample("2x2").unwrap();
        let one = DMatrix::from_element(1, 1, 1.0);
        let wrong = saddle_curvature(&p, &Frame::coordinate(2, &[1]).unwrap(), &one).unwrap();
        assert_abs_diff_eq!(wrong.second_deriv, -4.0, epsilon = 1e-14);
        assert_abs_diff_eq!(wrong.second_deriv_fd, -4.0, epsilon = 1e-6);
        assert!(wrong.first_deriv.abs() < 1e-8);
        let truth = saddle_curvature(&p, &Frame::coordinate(2, &[0]).unwrap(), &one).unwrap();
        assert_abs_diff_eq!(truth.second_deriv, 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(truth.second_deriv_fd, 1.0, epsilon = 1e-6);
    }
}
