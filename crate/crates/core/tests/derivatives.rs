//! Analytic derivatives against central differences computed here from
//! dense eigendecompositions.

use ace_lab::analysis::{closed_form_curvature, dbtilde_dp, df_dp, dp_dh, gamma_bound, jacobian_blocks, tangent_chart, tangent_from_coords};
use ace_lab::iteration::Problem;
use ace_lab::linalg::{subspace_distance, Frame, HermitianOperator};
use ace_lab::problems::{counterexample, random_problem, EnsembleSpec};
use ace_lab::{Field, C64};
use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

const H: f64 = 1e-5;

fn lowest<T: Field>(m: &DMatrix<T>, n: usize) -> DMatrix<T> {
    let e = SymmetricEigen::new((m + m.adjoint()).unscale(2.0));
    let mut idx: Vec<usize> = (0..m.nrows()).collect();
    idx.sort_by(|&a, &b| e.eigenvalues[a].total_cmp(&e.eigenvalues[b]));
    let v = DMatrix::from_columns(&idx[..n].iter().map(|&i| e.eigenvectors.column(i).clone_owned()).collect::<Vec<_>>());
    &v * v.adjoint()
}

fn compressed<T: Field>(b: &DMatrix<T>, q: &DMatrix<T>) -> DMatrix<T> {
    let w = b * q;
    &w * (q.adjoint() * &w).try_inverse().unwrap() * w.adjoint()
}

fn rel<T: Field>(a: &DMatrix<T>, b: &DMatrix<T>) -> f64 {
    (a - b).norm() / b.norm()
}

fn problem<T: Field>(seed: u64) -> Problem<T> {
    let spec = EnsembleSpec::new(12, 3, [0.3, 1.0, 3.0][seed as usize % 3], 1.0, seed);
    random_problem(&if T::TAG == ace_lab::FieldTag::Complex { spec.complex() } else { spec }).unwrap()
}

fn check_all<T: Field>(seed: u64) {
    let p = problem::<T>(seed);
    let mut r = ChaCha20Rng::seed_from_u64(seed + 99);
    let h = p.h().matrix().clone();
    let b = p.b().operator().matrix().clone();

    let g = DMatrix::<T>::from_fn(12, 12, |_, _| T::gaussian(&mut r));
    let dh = (&g + g.adjoint()).unscale(2.0);
    let fd = (lowest(&(&h + &dh * T::from_real(H)), 3) - lowest(&(&h - &dh * T::from_real(H)), 3)).unscale(2.0 * H);
    let exact = dp_dh(p.h(), 3, &HermitianOperator::new(dh).unwrap()).unwrap();
    assert!(rel(&fd, &exact) < 1e-6, "dP/dH seed {seed}: {:.2e}", rel(&fd, &exact));

    let v = Frame::<T>::haar(12, 3, &mut r).unwrap();
    let c = v.completion();
    let x = DMatrix::<T>::from_fn(9, 3, |_, _| T::gaussian(&mut r));
    let dp = tangent_from_coords(&v, &c, &x);
    let curve = |s: f64| {
        let q = Frame::orthonormalize(&(v.columns() + &c * &x * T::from_real(s))).unwrap();
        compressed(&b, q.columns())
    };
    let fd = (curve(H) - curve(-H)).unscale(2.0 * H);
    let exact = dbtilde_dp(p.b().operator(), &v, &dp, 0.0).unwrap();
    assert!(rel(&fd, &exact) < 1e-6, "dB~/dP seed {seed}: {:.2e}", rel(&fd, &exact));

    let truth = p.truth().unwrap().frame.clone();
    let blocks = jacobian_blocks(&p, &truth).unwrap();
    let c = truth.completion();
    let dp = tangent_from_coords(&truth, &c, &x);
    let map = |s: f64| {
        let q = Frame::orthonormalize(&(truth.columns() + &c * &x * T::from_real(s))).unwrap();
        lowest(&(p.a().matrix() + compressed(&b, q.columns())), 3)
    };
    let fd = (map(H) - map(-H)).unscale(2.0 * H);
    let exact = df_dp(&blocks, &dp).unwrap();
    assert!(rel(&fd, &exact) < 1e-6, "dF/dP seed {seed}: {:.2e}", rel(&fd, &exact));
}

#[test]
fn derivatives_match_central_differences() {
    for seed in 0..12 {
        if seed % 2 == 0 {
            check_all::<f64>(seed);
        } else {
            check_all::<C64>(seed);
        }
    }
}

#[test]
fn gamma_is_between_zero_and_both_bounds() {
    for seed in 0..15 {
        let p = problem::<f64>(seed);
        let g = gamma_bound(&p).unwrap();
        assert!(g.gamma_exact > 0.0);
        assert!(g.gamma_exact <= g.bound_schur + 1e-10);
        assert!(g.bound_schur <= g.bound_b + 1e-10);
    }
}

#[test]
fn chart_is_a_second_order_retraction() {
    let mut r = ChaCha20Rng::seed_from_u64(5);
    let v = Frame::<C64>::haar(10, 3, &mut r).unwrap();
    let x = DMatrix::<C64>::from_fn(7, 3, |_, _| C64::gaussian(&mut r));
    let x = x.unscale(x.clone().svd(false, false).singular_values.max());
    assert!(tangent_chart(&v, &x).unwrap().orthonormality_defect() < 1e-12);
    for eps in [1e-2, 1e-3] {
        let d = subspace_distance(&v, &tangent_chart(&v, &x.scale(eps)).unwrap()).unwrap();
        assert!((d - eps).abs() < eps * eps, "eps {eps}: d {d}");
    }
}

#[test]
fn counterexample_saddle_has_negative_curvature() {
    let p = counterexample("3x3").unwrap();
    let e2 = Frame::<f64>::coordinate(3, &[1]).unwrap();
    let blocks = jacobian_blocks(&p, &e2).unwrap();
    assert!(blocks.gamma() > 1.0);
    let mut r = ChaCha20Rng::seed_from_u64(1);
    let x = DMatrix::<f64>::from_fn(2, 1, |_, _| r.random::<f64>() - 0.5);
    let (_, top) = blocks.eigen_direction(0, 0);
    assert!(closed_form_curvature(&blocks, &top) < 0.0);
    assert!(closed_form_curvature(&blocks, &x).is_finite());
}
