use ace_lab::compression::{compress, materialize_pseudoinverse, ExchangeOperator};
use ace_lab::iteration::{run, Init, RunConfig};
use ace_lab::linalg::{principal_sines, subspace_distance, Frame, HermitianOperator};
use ace_lab::problems::{random_negative_definite, random_problem, EnsembleSpec};
use ace_lab::{Field, C64};
use nalgebra::{DMatrix, SymmetricEigen};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

fn rng(seed: u64) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(seed)
}

fn eigvals<T: Field>(m: &DMatrix<T>) -> Vec<f64> {
    let mut ev: Vec<f64> = SymmetricEigen::new((m + m.adjoint()).unscale(2.0)).eigenvalues.iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    ev
}

fn norm2<T: Field>(m: &DMatrix<T>) -> f64 {
    m.clone().svd(false, false).singular_values.max()
}

/// `(B-t)V (V*(B-t)V)^{-1} V*(B-t) + t`, written out directly.
fn oracle<T: Field>(b: &DMatrix<T>, v: &DMatrix<T>, t: f64) -> DMatrix<T> {
    let id = DMatrix::<T>::identity(b.nrows(), b.nrows());
    let bt = b - &id * T::from_real(t);
    let w = &bt * v;
    &w * (v.adjoint() * &w).try_inverse().unwrap() * w.adjoint() + id * T::from_real(t)
}

struct Case<T: Field> {
    b: HermitianOperator<T>,
    v: Frame<T>,
}

fn case<T: Field>(seed: u64, dim: usize, n: usize) -> Case<T> {
    let mut r = rng(seed);
    Case { b: random_negative_definite(dim, 1.5, &mut r), v: Frame::haar(dim, n, &mut r).unwrap() }
}

fn materialized<T: Field>(c: &Case<T>, t: f64) -> DMatrix<T> {
    compress(&ExchangeOperator::new(c.b.clone()), &c.v, t).unwrap().materialize().into_matrix()
}

fn dims() -> impl Strategy<Value = (u64, usize, usize)> {
    (any::<u64>(), 3usize..24).prop_flat_map(|(s, d)| (Just(s), Just(d), 1..d))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn compression_matches_direct_formula((seed, dim, n) in dims()) {
        let c = case::<C64>(seed, dim, n);
        let bt = materialized(&c, 0.0);
        let o = oracle(c.b.matrix(), c.v.columns(), 0.0);
        prop_assert!(norm2(&(bt - o)) <= 1e-11 * c.b.norm2());
    }

    #[test]
    fn compression_matches_pseudoinverse((seed, dim, n) in dims()) {
        let c = case::<f64>(seed, dim, n);
        let p = materialize_pseudoinverse(&c.b, &c.v, 0.0).unwrap().into_matrix();
        prop_assert!(norm2(&(materialized(&c, 0.0) - p)) <= 1e-10 * c.b.norm2());
    }

    #[test]
    fn compression_is_sandwiched((seed, dim, n) in dims()) {
        let c = case::<C64>(seed, dim, n);
        let bt = materialized(&c, 0.0);
        let nb = c.b.norm2();
        prop_assert!(eigvals(&(&bt - c.b.matrix()))[0] >= -1e-10 * nb);
        prop_assert!(*eigvals(&bt).last().unwrap() <= 1e-10 * nb);
    }

    #[test]
    fn compression_ignores_basis_choice((seed, dim, n) in dims()) {
        let c = case::<C64>(seed, dim, n);
        let u = Frame::<C64>::haar(n, n, &mut rng(seed ^ 0xa5)).unwrap().into_columns();
        let rotated = Case { b: c.b.clone(), v: c.v.rotated(&u).unwrap() };
        prop_assert!(norm2(&(materialized(&c, 0.0) - materialized(&rotated, 0.0))) <= 1e-11 * c.b.norm2());
    }

    #[test]
    fn compression_reproduces_b_on_span((seed, dim, n) in dims(), t in 0.0f64..0.5) {
        // any t >= lambda_max(B) is admissible; B < 0 here
        let c = case::<f64>(seed, dim, n);
        let bt = materialized(&c, t);
        let diff = (&bt - c.b.matrix()) * c.v.columns();
        prop_assert!(norm2(&diff) <= 1e-11 * (c.b.norm2() + t));
    }

    #[test]
    fn distance_is_symmetric_and_sine_of_largest_angle((seed, dim, n) in dims()) {
        let mut r = rng(seed);
        let p = Frame::<C64>::haar(dim, n, &mut r).unwrap();
        let q = Frame::<C64>::haar(dim, n, &mut r).unwrap();
        let d = subspace_distance(&p, &q).unwrap();
        prop_assert_eq!(d, subspace_distance(&q, &p).unwrap());
        prop_assert!((0.0..=1.0).contains(&d));
        let proj = norm2(&(p.projector() - q.projector()));
        prop_assert!((d - proj).abs() <= 1e-12);
        let sines = principal_sines(&p, &q).unwrap();
        prop_assert!((sines.iter().copied().fold(0.0, f64::max) - d).abs() <= 1e-12);
    }

    #[test]
    fn ritz_values_descend(seed in 0u64..1000, init in any::<u64>()) {
        let p = random_problem::<f64>(&EnsembleSpec::new(12, 3, 0.4, 1.0, seed)).unwrap();
        let tr = run(&p, &RunConfig { init: Init::Random(init), ..Default::default() }).unwrap();
        let h = p.h_norm();
        for w in tr.steps.windows(2) {
            for (a, b) in w[0].eigenvalues.iter().zip(&w[1].eigenvalues) {
                prop_assert!(*b <= a + 1e-12 * h);
            }
        }
        for s in &tr.steps {
            prop_assert_eq!(s.b_matvecs, (3 * s.k) as u64);
        }
    }
}

#[test]
fn compression_has_rank_n_and_is_unique_among_rank_n() {
    for seed in 0..20 {
        let c = case::<f64>(seed, 10, 3);
        let bt = materialized(&c, 0.0);
        let sv = bt.clone().svd(false, false).singular_values;
        assert_eq!(sv.iter().filter(|&&s| s > 1e-10 * c.b.norm2()).count(), 3);
        // a rank-n Hermitian X with XV = BV is determined by its range, which
        // must be span(BV): X = BV (V*BV)^{-1} V*B
        let bv = c.b.matrix() * c.v.columns();
        let x = &bv * (c.v.columns().transpose() * &bv).try_inverse().unwrap() * bv.transpose();
        assert!(norm2(&(bt - x)) <= 1e-11 * c.b.norm2());
    }
}

#[test]
fn convergence_reaches_lowest_eigenvectors() {
    let p = random_problem::<C64>(&EnsembleSpec::new(20, 4, 1.0, 1.0, 11).complex()).unwrap();
    let tr = run(&p, &RunConfig::default()).unwrap();
    assert!(tr.status.is_converged());
    let h = p.h().matrix();
    let e = SymmetricEigen::new(h.clone());
    let mut idx: Vec<usize> = (0..20).collect();
    idx.sort_by(|&a, &b| e.eigenvalues[a].total_cmp(&e.eigenvalues[b]));
    let lowest = DMatrix::from_columns(&idx[..4].iter().map(|&i| e.eigenvectors.column(i).clone_owned()).collect::<Vec<_>>());
    let truth = Frame::new(lowest).unwrap();
    assert!(subspace_distance(&truth, tr.final_frame()).unwrap() < 1e-8);
}
