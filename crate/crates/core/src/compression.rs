//! Adaptive compression of the exchange-like operator `B`.
//!
//! `B~[V, t] = W (W* V)^{-1} W* + t I` with `W = (B - t) V` is the unique
//! rank-`n` (plus shift) Hermitian operator that agrees with `B` on span `V`.
//! The factored form is what the iteration uses; the dense constructions
//! below exist so the factored form can be checked against them.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::linalg::{check_same_dim, symmetrize, Frame, HermitianOperator};
use crate::{AceError, Field, Result};

/// Relative tolerance on `lambda_max(B - t)` below which the shift is accepted.
pub const SHIFT_TOL: f64 = 1e-12;

/// Monotonic tally of applications of `B` to single vectors.
#[derive(Debug, Clone, Default)]
pub struct MatvecCounter(Arc<AtomicU64>);

impl MatvecCounter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self) -> u64 {
        self.0.load(Ordering::Relaxed)
    }

    pub fn add(&self, k: u64) {
        self.0.fetch_add(k, Ordering::Relaxed);
    }
}

/// The expensive operator `B`, with cached spectral bounds and a matvec tally.
///
/// Clones share both the matrix and the tally. [`ExchangeOperator::forked`]
/// gives a handle with its own tally that also feeds the parent, so
/// concurrent runs can each count exactly.
#[derive(Debug, Clone)]
pub struct ExchangeOperator<T: Field> {
    op: Arc<HermitianOperator<T>>,
    lambda_max: f64,
    norm: f64,
    counter: MatvecCounter,
    parent: Option<MatvecCounter>,
}

impl<T: Field> ExchangeOperator<T> {
    pub fn new(op: HermitianOperator<T>) -> Self {
        let ev = op.eigenvalues();
        let lambda_max = ev[ev.len() - 1];
        let norm = ev[0].abs().max(lambda_max.abs());
        Self { op: Arc::new(op), lambda_max, norm, counter: MatvecCounter::new(), parent: None }
    }

    pub fn forked(&self) -> Self {
        Self {
            op: Arc::clone(&self.op),
            lambda_max: self.lambda_max,
            norm: self.norm,
            counter: MatvecCounter::new(),
            parent: Some(self.counter.clone()),
        }
    }

    /// Handle with its own tally and no parent, for bookkeeping-free work
    /// such as analysis.
    pub fn detached(&self) -> Self {
        Self { counter: MatvecCounter::new(), parent: None, ..self.forked() }
    }

    pub fn operator(&self) -> &HermitianOperator<T> {
        &self.op
    }

    pub fn dim(&self) -> usize {
        self.op.dim()
    }

    pub fn lambda_max(&self) -> f64 {
        self.lambda_max
    }

    pub fn norm2(&self) -> f64 {
        self.norm
    }

    pub fn matvecs(&self) -> u64 {
        self.counter.get()
    }

    pub fn counter(&self) -> &MatvecCounter {
        &self.counter
    }

    /// `B X`, counting one application per column of `X`.
    pub fn apply_block(&self, x: &DMatrix<T>) -> Result<DMatrix<T>> {
        check_same_dim(self.dim(), x.nrows())?;
        let k = x.ncols() as u64;
        self.counter.add(k);
        if let Some(p) = &self.parent {
            p.add(k);
        }
        Ok(self.op.matrix() * x)
    }
}

impl<T: Field> From<HermitianOperator<T>> for ExchangeOperator<T> {
    fn from(op: HermitianOperator<T>) -> Self {
        Self::new(op)
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct CompressOptions {
    /// Skip the definiteness checks and invert `W*V` by LU. The sandwich
    /// bounds do not hold on this path.
    pub unsafe_indefinite: bool,
}

/// Factored `B~[V, t]`.
#[derive(Debug, Clone)]
pub struct CompressedOperator<T: Field> {
    w: DMatrix<T>,
    m: DMatrix<T>,
    shift: f64,
    lambda_max_wv: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct CompressionSummary {
    pub n: usize,
    pub t: f64,
    #[serde(rename = "lambda_max_WV")]
    pub lambda_max_wv: f64,
    pub matvec_count: u64,
}

fn check_shift(lambda_max: f64, norm: f64, t: f64) -> Result<()> {
    let threshold = -SHIFT_TOL * norm;
    if lambda_max - t >= threshold {
        return Err(AceError::ShiftInsufficient { lambda_max: lambda_max - t, threshold });
    }
    Ok(())
}

pub fn compress<T: Field>(b: &ExchangeOperator<T>, v: &Frame<T>, t: f64) -> Result<CompressedOperator<T>> {
    compress_with(b, v, t, CompressOptions::default())
}

pub fn compress_with<T: Field>(
    b: &ExchangeOperator<T>,
    v: &Frame<T>,
    t: f64,
    opts: CompressOptions,
) -> Result<CompressedOperator<T>> {
    check_same_dim(b.dim(), v.dim())?;
    if !opts.unsafe_indefinite {
        check_shift(b.lambda_max(), b.norm2(), t)?;
    }
    let vm = v.columns();
    let w = b.apply_block(vm)? - vm.scale(t);
    let wv = symmetrize(w.adjoint() * vm);
    let lambda_max_wv = HermitianOperator::from_hermitian_unchecked(wv.clone()).lambda_max();
    let m = if opts.unsafe_indefinite {
        wv.lu().try_inverse().ok_or(AceError::SingularProjection)?
    } else {
        let chol = (-wv).cholesky().ok_or(AceError::ShiftInsufficient {
            lambda_max: lambda_max_wv,
            threshold: 0.0,
        })?;
        -chol.inverse()
    };
    Ok(CompressedOperator { w, m: symmetrize(m), shift: t, lambda_max_wv })
}

impl<T: Field> CompressedOperator<T> {
    pub fn dim(&self) -> usize {
        self.w.nrows()
    }

    pub fn rank(&self) -> usize {
        self.w.ncols()
    }

    pub fn shift(&self) -> f64 {
        self.shift
    }

    pub fn w(&self) -> &DMatrix<T> {
        &self.w
    }

    /// `(W* V)^{-1}`.
    pub fn m(&self) -> &DMatrix<T> {
        &self.m
    }

    pub fn lambda_max_wv(&self) -> f64 {
        self.lambda_max_wv
    }

    pub fn apply(&self, x: &DVector<T>) -> Result<DVector<T>> {
        check_same_dim(self.dim(), x.len())?;
        Ok(&self.w * (&self.m * (self.w.adjoint() * x)) + x.scale(self.shift))
    }

    pub fn apply_block(&self, x: &DMatrix<T>) -> Result<DMatrix<T>> {
        check_same_dim(self.dim(), x.nrows())?;
        Ok(&self.w * (&self.m * (self.w.adjoint() * x)) + x.scale(self.shift))
    }

    pub fn materialize(&self) -> HermitianOperator<T> {
        let mut dense = &self.w * &self.m * self.w.adjoint();
        for i in 0..self.dim() {
            dense[(i, i)] += T::from_real(self.shift);
        }
        HermitianOperator::from_hermitian_unchecked(symmetrize(dense))
    }

    pub fn summary(&self, matvec_count: u64) -> CompressionSummary {
        CompressionSummary { n: self.rank(), t: self.shift, lambda_max_wv: self.lambda_max_wv, matvec_count }
    }
}

fn add_shift<T: Field>(mut m: DMatrix<T>, t: f64) -> DMatrix<T> {
    for i in 0..m.nrows() {
        m[(i, i)] += T::from_real(t);
    }
    m
}

/// Dense `B_t (P B_t P)^+ B_t + t` with `B_t = B - t`. The pseudoinverse keeps
/// the `n` eigenpairs of `P B_t P` largest in modulus, since its rank is `n`.
pub fn materialize_pseudoinverse<T: Field>(b: &HermitianOperator<T>, v: &Frame<T>, t: f64) -> Result<HermitianOperator<T>> {
    check_same_dim(b.dim(), v.dim())?;
    let bt = b.shifted(t);
    let p = v.projector();
    let pbp = HermitianOperator::from_hermitian_unchecked(symmetrize(&p * bt.matrix() * &p));
    let spec = pbp.eigh();
    let mut idx: Vec<usize> = (0..spec.dim()).collect();
    idx.sort_by(|&a, &c| spec.eigenvalues[c].abs().total_cmp(&spec.eigenvalues[a].abs()));
    let mut pinv = DMatrix::<T>::zeros(b.dim(), b.dim());
    for &i in idx.iter().take(v.rank()) {
        if spec.eigenvalues[i] == 0.0 {
            return Err(AceError::SingularProjection);
        }
        let u = spec.eigenvectors.column(i);
        pinv += (u * u.adjoint()).unscale(spec.eigenvalues[i]);
    }
    let dense = bt.matrix() * pinv * bt.matrix();
    Ok(HermitianOperator::from_hermitian_unchecked(symmetrize(add_shift(dense, t))))
}

/// Dense `B~` assembled blockwise in the `[V | C]` basis: the `V` row and
/// column of `B_t` are kept and the lower-right block is replaced by
/// `B12* B11^{-1} B12`.
pub fn materialize_block<T: Field>(b: &HermitianOperator<T>, v: &Frame<T>, t: f64) -> Result<HermitianOperator<T>> {
    check_same_dim(b.dim(), v.dim())?;
    let n = v.rank();
    let q = v.adapted_basis();
    let bq = q.adjoint() * b.shifted(t).matrix() * &q;
    let b11 = bq.view((0, 0), (n, n)).into_owned();
    let b12 = bq.columns(n, b.dim() - n).rows(0, n).into_owned();
    let b11_inv = b11.lu().try_inverse().ok_or(AceError::SingularProjection)?;
    let mut blk = bq.clone();
    let lower = b12.adjoint() * b11_inv * &b12;
    blk.view_mut((n, n), (b.dim() - n, b.dim() - n)).copy_from(&lower);
    let dense = &q * blk * q.adjoint();
    Ok(HermitianOperator::from_hermitian_unchecked(symmetrize(add_shift(dense, t))))
}

/// Schur complement of `B_t` with respect to span `V`, in the QR completion basis.
#[derive(Debug, Clone)]
pub struct SchurBlock<T: Field> {
    pub s22: DMatrix<T>,
    pub completion: DMatrix<T>,
}

pub fn schur_complement<T: Field>(b: &HermitianOperator<T>, v: &Frame<T>, t: f64) -> Result<SchurBlock<T>> {
    check_same_dim(b.dim(), v.dim())?;
    let bt = b.shifted(t);
    let ev = bt.eigenvalues();
    check_shift(ev[ev.len() - 1], b.norm2(), 0.0)?;
    let c = v.completion();
    let vm = v.columns();
    let b11 = vm.adjoint() * bt.matrix() * vm;
    let b12 = vm.adjoint() * bt.matrix() * &c;
    let b22 = c.adjoint() * bt.matrix() * &c;
    let chol = (-symmetrize(b11)).cholesky().ok_or(AceError::ShiftInsufficient {
        lambda_max: ev[ev.len() - 1],
        threshold: 0.0,
    })?;
    let s22 = symmetrize(b22 + b12.adjoint() * chol.solve(&b12));
    Ok(SchurBlock { s22, completion: c })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::spectral_norm;
    use crate::C64;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn diag(d: &[f64]) -> ExchangeOperator<f64> {
        ExchangeOperator::new(HermitianOperator::from_real_diagonal(d))
    }

    fn random_negative<T: Field>(dim: usize, rng: &mut ChaCha8Rng) -> HermitianOperator<T> {
        let c = DMatrix::<T>::from_fn(dim, dim, |_, _| T::gaussian(rng));
        let mut m = -(&c * c.adjoint());
        for i in 0..dim {
            m[(i, i)] -= T::from_real(0.01);
        }
        HermitianOperator::new(m).unwrap()
    }

    fn close<T: Field>(a: &DMatrix<T>, b: &DMatrix<T>) -> f64 {
        spectral_norm(&(a - b))
    }

    #[test]
    fn coordinate_compression_keeps_one_entry() {
        let b = diag(&[-2.0, -1.0]);
        let c = compress(&b, &Frame::coordinate(2, &[0]).unwrap(), 0.0).unwrap();
        let dense = c.materialize();
        assert_abs_diff_eq!(dense.matrix()[(0, 0)], -2.0, epsilon = 1e-14);
        assert_abs_diff_eq!(dense.matrix()[(1, 1)], 0.0, epsilon = 1e-14);
        let e2 = DVector::from_vec(vec![0.0, 1.0]);
        assert!(c.apply(&e2).unwrap().norm() < 1e-14);
        let e1 = DVector::from_vec(vec![1.0, 0.0]);
        assert_abs_diff_eq!(c.apply(&e1).unwrap()[0], -2.0, epsilon = 1e-14);
        assert_eq!(b.matvecs(), 1);
    }

    #[test]
    fn diagonal_compression_on_tilted_vector() {
        let b = diag(&[-2.0, -1.0]);
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let v = Frame::new(DMatrix::from_vec(2, 1, vec![s, s])).unwrap();
        let dense = compress(&b, &v, 0.0).unwrap().materialize();
        // W = (-2s, -s), W*V = -3/2, so B~ = -(2/3) W W*.
        let want = DMatrix::from_row_slice(2, 2, &[-4.0 / 3.0, -2.0 / 3.0, -2.0 / 3.0, -1.0 / 3.0]);
        assert!(close(dense.matrix(), &want) < 1e-14);
        let bv = b.operator().matrix() * v.columns();
        assert!(close(&(dense.matrix() * v.columns()), &bv) < 1e-14);
    }

    #[test]
    fn indefinite_b_needs_a_shift() {
        let b = diag(&[1.0, -1.0]);
        let v = Frame::coordinate(2, &[0]).unwrap();
        assert!(matches!(compress(&b, &v, 0.0), Err(AceError::ShiftInsufficient { .. })));
        let c = compress(&b, &v, 1.5).unwrap();
        let e1 = DVector::from_vec(vec![1.0, 0.0]);
        assert_abs_diff_eq!(c.apply(&e1).unwrap()[0], 1.0, epsilon = 1e-14);
        let zero = ExchangeOperator::new(HermitianOperator::<f64>::zeros(2));
        assert!(matches!(compress(&zero, &v, 0.0), Err(AceError::ShiftInsufficient { .. })));
    }

    #[test]
    fn unsafe_indefinite_path_still_agrees_on_span() {
        let b = diag(&[1.0, -1.0, 3.0]);
        let v = Frame::coordinate(3, &[0, 1]).unwrap();
        let opts = CompressOptions { unsafe_indefinite: true };
        let c = compress_with(&b, &v, 0.0, opts).unwrap();
        let bv = b.operator().matrix() * v.columns();
        assert!(close(&c.apply_block(v.columns()).unwrap(), &bv) < 1e-14);
        let singular = diag(&[0.0, -1.0]);
        let v0 = Frame::coordinate(2, &[0]).unwrap();
        assert!(matches!(compress_with(&singular, &v0, 0.0, opts), Err(AceError::SingularProjection)));
    }

    #[test]
    fn full_rank_compression_is_identity_map() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let b = random_negative::<f64>(5, &mut rng);
        let v = Frame::haar(5, 5, &mut rng).unwrap();
        let dense = compress(&ExchangeOperator::new(b.clone()), &v, 0.0).unwrap().materialize();
        assert!(close(dense.matrix(), b.matrix()) < 1e-11 * b.norm2());
    }

    #[test]
    fn schur_examples() {
        let b = HermitianOperator::<f64>::from_real_diagonal(&[-2.0, -1.0]);
        let s = schur_complement(&b, &Frame::coordinate(2, &[0]).unwrap(), 0.0).unwrap();
        assert_abs_diff_eq!(s.s22[(0, 0)], -1.0, epsilon = 1e-14);
        let b = HermitianOperator::<f64>::new(DMatrix::from_row_slice(2, 2, &[-2.0, 1.0, 1.0, -2.0])).unwrap();
        let s = schur_complement(&b, &Frame::coordinate(2, &[0]).unwrap(), 0.0).unwrap();
        assert_abs_diff_eq!(s.s22[(0, 0)], -1.5, epsilon = 1e-14);
        let s = schur_complement(&b, &Frame::coordinate(2, &[0, 1]).unwrap(), 0.0).unwrap();
        assert_eq!(s.s22.shape(), (0, 0));
        let pos = HermitianOperator::<f64>::from_real_diagonal(&[1.0, -1.0]);
        assert!(schur_complement(&pos, &Frame::coordinate(2, &[0]).unwrap(), 0.0).is_err());
    }

    fn three_way<T: Field>(seed: u64, dim: usize, n: usize, t: f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let b = random_negative::<T>(dim, &mut rng);
        let v = Frame::<T>::haar(dim, n, &mut rng).unwrap();
        let x = ExchangeOperator::new(b.clone());
        let f = compress(&x, &v, t).unwrap().materialize();
        let p = materialize_pseudoinverse(&b, &v, t).unwrap();
        let k = materialize_block(&b, &v, t).unwrap();
        let tol = 1e-11 * b.norm2();
        assert!(close(f.matrix(), p.matrix()) < tol);
        assert!(close(f.matrix(), k.matrix()) < tol);
        assert!(close(p.matrix(), k.matrix()) < tol);
    }

    #[test]
    fn three_constructions_agree() {
        for seed in 0..5 {
            three_way::<f64>(seed, 16, 3, 0.0);
            three_way::<C64>(seed, 16, 3, 0.0);
            three_way::<f64>(seed, 10, 4, -0.005);
            three_way::<C64>(seed, 10, 2, 0.7);
        }
    }

    #[test]
    fn summary_serializes_with_expected_keys() {
        let b = diag(&[-2.0, -1.0]);
        let c = compress(&b, &Frame::coordinate(2, &[1]).unwrap(), 0.0).unwrap();
        let js = serde_json::to_value(c.summary(b.matvecs())).unwrap();
        assert_eq!(js["n"], 1);
        assert_eq!(js["lambda_max_WV"], -1.0);
        assert_eq!(js["matvec_count"], 1);
    }

    #[test]
    fn forked_counters_feed_parent() {
        let b = diag(&[-2.0, -1.0, -0.5]);
        let v = Frame::coordinate(3, &[0, 2]).unwrap();
        let f1 = b.forked();
        let f2 = b.forked();
        compress(&f1, &v, 0.0).unwrap();
        compress(&f2, &v, 0.0).unwrap();
        compress(&f2, &v, 0.0).unwrap();
        assert_eq!((f1.matvecs(), f2.matvecs(), b.matvecs()), (2, 4, 6));
    }
}
