use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::compression::schur_complement;
use crate::iteration::{fixed_point_step, Problem};
use crate::linalg::{spectral_norm, subspace_distance, symmetrize, Frame, GapPolicy, HermitianOperator};
use crate::{AceError, Field, Result};

/// Subspace distance `|F(P) - P|_2` below which `P` counts as a fixed point.
pub const FIXED_TOL: f64 = 1e-8;

/// The `n` Jacobian blocks of the fixed-point map at a fixed point.
///
/// Coordinates: a tangent direction is `dP = C X U* + h.c.` where `U` holds
/// the occupied eigenvectors `u_i` of `A + B~[P_f]` and `C` is the QR
/// completion of `U`. Column `i` of `X` evolves under block `J_i`:
/// `J_i = (H22 - mu_i)^{-1} D` with `H22 = C*(A + B~)C` and
/// `D = C*(B~ - B)C = -S22`, equivalently `[I + D^{-1}(M2 - mu_i)]^{-1}` with
/// `M2 = C*(A + B)C`.
#[derive(Debug, Clone)]
pub struct JacobianBlocks<T: Field> {
    pub at_frame: Frame<T>,
    pub occupied: Frame<T>,
    pub completion: DMatrix<T>,
    pub mu: Vec<f64>,
    pub h22: DMatrix<T>,
    pub d: DMatrix<T>,
    pub blocks: Vec<DMatrix<T>>,
    /// Eigenvalues of each block, descending.
    pub spectra: Vec<Vec<f64>>,
    /// Unit eigenvectors of each block in `X` coordinates, paired with `spectra`.
    pub eigenvectors: Vec<DMatrix<T>>,
}

fn hermitian_function<T: Field>(m: &DMatrix<T>, f: impl Fn(f64) -> f64) -> DMatrix<T> {
    let s = HermitianOperator::from_hermitian_unchecked(symmetrize(m.clone())).eigh();
    let scaled = DMatrix::from_fn(s.dim(), s.dim(), |i, j| s.eigenvectors[(i, j)] * T::from_real(f(s.eigenvalues[j])));
    scaled * s.eigenvectors.adjoint()
}

pub fn jacobian_blocks<T: Field>(prob: &Problem<T>, p_f: &Frame<T>) -> Result<JacobianBlocks<T>> {
    let b = prob.b().detached();
    let step = fixed_point_step(prob, &b, p_f)?;
    let distance = subspace_distance(&step.density.frame, p_f)?;
    if distance >= FIXED_TOL {
        return Err(AceError::NotFixed { distance });
    }
    let norm = step.density.spectrum.eigenvalues.iter().fold(0.0f64, |a, x| a.max(x.abs()));
    let gap_tol = GapPolicy::RELATIVE_GAP_TOL * norm;
    if step.density.gap <= gap_tol {
        return Err(AceError::DegenerateGap { n: prob.n(), gap: step.density.gap, tol: gap_tol });
    }
    let n = prob.n();
    let mu = step.density.spectrum.eigenvalues[..n].to_vec();
    let occupied = step.density.frame;
    let c = occupied.completion();
    let btilde = step.compressed.materialize();
    let hf = prob.compressed_hamiltonian(&step.compressed);
    let h22 = symmetrize(c.adjoint() * hf.matrix() * &c);
    let d = symmetrize(c.adjoint() * (btilde.matrix() - prob.b().operator().matrix()) * &c);
    let m2 = &h22 - &d;

    let d_eval = HermitianOperator::from_hermitian_unchecked(d.clone()).eigenvalues();
    if d_eval[0] <= 0.0 {
        return Err(AceError::AssumptionViolated(format!(
            "complement block of B~ - B is not positive definite (min eigenvalue {:.3e})",
            d_eval[0]
        )));
    }
    let d_inv_sqrt = hermitian_function(&d, |x| 1.0 / x.sqrt());
    let k = c.ncols();

    let mut blocks = Vec::with_capacity(n);
    let mut spectra = Vec::with_capacity(n);
    let mut eigenvectors = Vec::with_capacity(n);
    for &m in &mu {
        let mut shifted = m2.clone();
        let mut h_shift = h22.clone();
        for j in 0..k {
            shifted[(j, j)] -= T::from_real(m);
            h_shift[(j, j)] -= T::from_real(m);
        }
        let j_block = h_shift.lu().solve(&d).ok_or(AceError::SingularProjection)?;
        let kmat = HermitianOperator::from_hermitian_unchecked(symmetrize(&d_inv_sqrt * shifted * &d_inv_sqrt)).eigh();
        // kappa ascending gives sigma = 1/(1+kappa) descending.
        let sigma: Vec<f64> = kmat.eigenvalues.iter().map(|kappa| 1.0 / (1.0 + kappa)).collect();
        let mut x = &d_inv_sqrt * &kmat.eigenvectors;
        for mut col in x.column_iter_mut() {
            let nrm = col.norm();
            col.unscale_mut(nrm);
        }
        blocks.push(j_block);
        spectra.push(sigma);
        eigenvectors.push(x);
    }
    Ok(JacobianBlocks { at_frame: p_f.clone(), occupied, completion: c, mu, h22, d, blocks, spectra, eigenvectors })
}

impl<T: Field> JacobianBlocks<T> {
    pub fn n(&self) -> usize {
        self.mu.len()
    }

    pub fn codim(&self) -> usize {
        self.completion.ncols()
    }

    /// Largest Jacobian eigenvalue over all blocks.
    pub fn gamma(&self) -> f64 {
        self.spectra.iter().flatten().fold(f64::NEG_INFINITY, |a, &x| a.max(x))
    }

    /// Smallest eigenvalue over all blocks.
    pub fn min_eigenvalue(&self) -> f64 {
        self.spectra.iter().flatten().fold(f64::INFINITY, |a, &x| a.min(x))
    }

    /// All block eigenvalues, descending.
    pub fn spectrum(&self) -> Vec<f64> {
        let mut all: Vec<f64> = self.spectra.iter().flatten().copied().collect();
        all.sort_by(|a, b| b.total_cmp(a));
        all
    }

    /// `X` supported on column `block`, equal to its `k`-th eigenvector.
    pub fn eigen_direction(&self, block: usize, k: usize) -> (f64, DMatrix<T>) {
        let mut x = DMatrix::zeros(self.codim(), self.n());
        x.set_column(block, &self.eigenvectors[block].column(k));
        (self.spectra[block][k], x)
    }

    /// Coordinates `X` of a tangent direction.
    pub fn coords(&self, dp: &DMatrix<T>) -> DMatrix<T> {
        self.completion.adjoint() * dp * self.occupied.columns()
    }

    /// Block-diagonal action on coordinates: column `i` maps to `J_i X_i`.
    pub fn apply_coords(&self, x: &DMatrix<T>) -> DMatrix<T> {
        let mut y = DMatrix::zeros(self.codim(), self.n());
        for (i, j) in self.blocks.iter().enumerate() {
            let col: DVector<T> = j * x.column(i);
            y.set_column(i, &col);
        }
        y
    }

    /// `sum_i Z_i dP u_i u_i* + h.c.` with `Z_i = C J_i C*`.
    pub fn apply(&self, dp: &DMatrix<T>) -> DMatrix<T> {
        let y = self.apply_coords(&self.coords(dp));
        super::derivatives::tangent_from_coords(&self.occupied, &self.completion, &y)
    }

    /// The full `(N-n) n` square Jacobian acting on `vec(X)` (columns stacked).
    pub fn matricized(&self) -> DMatrix<T> {
        let k = self.codim();
        let mut full = DMatrix::zeros(k * self.n(), k * self.n());
        for (i, j) in self.blocks.iter().enumerate() {
            full.view_mut((i * k, i * k), (k, k)).copy_from(j);
        }
        full
    }

    pub fn report(&self) -> JacobianReport {
        JacobianReport {
            n: self.n(),
            codim: self.codim(),
            mu: self.mu.clone(),
            spectra: self.spectra.clone(),
            gamma: self.gamma(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JacobianReport {
    pub n: usize,
    pub codim: usize,
    pub mu: Vec<f64>,
    pub spectra: Vec<Vec<f64>>,
    pub gamma: f64,
}

/// `gamma` at the ground truth and the two upper bounds on it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GammaBound {
    pub gamma_exact: f64,
    /// `|S22|_2 / (gap + |S22|_2)`.
    pub bound_schur: f64,
    /// `|B_t|_2 / (gap + |B_t|_2)`.
    pub bound_b: f64,
    pub gap: f64,
    pub s22_norm: f64,
    pub bt_norm: f64,
}

pub fn gamma_bound<T: Field>(prob: &Problem<T>) -> Result<GammaBound> {
    let truth = prob.truth().ok_or_else(|| {
        let ev = prob.h().eigenvalues();
        let n = prob.n();
        AceError::DegenerateGap { n, gap: ev[n] - ev[n - 1], tol: GapPolicy::RELATIVE_GAP_TOL * prob.h_norm() }
    })?;
    let blocks = jacobian_blocks(prob, &truth.frame)?;
    let s22 = schur_complement(prob.b().operator(), &truth.frame, prob.shift())?.s22;
    let s22_norm = spectral_norm(&s22);
    let ev = prob.b().operator().eigenvalues();
    let t = prob.shift();
    let bt_norm = (ev[0] - t).abs().max((ev[ev.len() - 1] - t).abs());
    let gap = truth.gap;
    Ok(GammaBound {
        gamma_exact: blocks.gamma(),
        bound_schur: s22_norm / (gap + s22_norm),
        bound_b: bt_norm / (gap + bt_norm),
        gap,
        s22_norm,
        bt_norm,
    })
}
