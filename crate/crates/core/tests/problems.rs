use ace_lab::iteration::{run, RunConfig};
use ace_lab::problems::{
    load_problem, model_1d_exchange, problem_with_spectrum, random_problem, save_problem, target_spectrum, AnyProblem,
    EnsembleSpec, Generator, ModelSpec, Origin,
};
use ace_lab::C64;
use nalgebra::SymmetricEigen;

#[test]
fn generated_spectrum_is_the_target() {
    for seed in 0..8 {
        let spec = EnsembleSpec::new(24, 5, 0.7, 2.0, seed).complex();
        let p = random_problem::<C64>(&spec).unwrap();
        let mut ev: Vec<f64> = SymmetricEigen::new(p.h().matrix().clone()).eigenvalues.iter().copied().collect();
        ev.sort_by(f64::total_cmp);
        let target = target_spectrum(24, 5, 0.7, seed);
        for (a, b) in ev.iter().zip(&target) {
            assert!((a - b).abs() < 1e-12 * p.h_norm(), "{a} vs {b}");
        }
        assert!((ev[5] - ev[4] - 0.7).abs() < 1e-12);
        assert!((p.b().norm2() - 2.0).abs() < 1e-12);
        assert!(p.b().lambda_max() < 0.0);
    }
}

#[test]
fn explicit_spectrum_is_validated() {
    assert!(problem_with_spectrum::<f64>(vec![0.0, 1.0, 0.5], 1, 1.0, 0, Origin::Explicit).is_err());
    assert!(problem_with_spectrum::<f64>(vec![0.0, 1.0], 2, 1.0, 0, Origin::Explicit).is_err());
    let p = problem_with_spectrum::<f64>(vec![-1.0, 0.0, 2.0], 1, 1.0, 0, Origin::Explicit).unwrap();
    assert_eq!(p.truth().unwrap().gap, 1.0);
}

#[test]
fn model_problem_converges() {
    let p = model_1d_exchange(&ModelSpec { dim: 48, n: 4, depth: 50.0, strength: 1.0, width: 0.1 }).unwrap();
    assert!(p.b().lambda_max() < 0.0);
    let tr = run(&p, &RunConfig::default()).unwrap();
    assert!(tr.status.is_converged(), "{}", tr.status);
}

#[test]
fn saved_problem_solves_identically() {
    let dir = tempfile::tempdir().unwrap();
    let AnyProblem::Complex(p) = "N=14,n=3,gap=0.5,bnorm=1,seed=4,field=complex".parse::<Generator>().unwrap().build().unwrap() else {
        panic!("expected a complex problem");
    };
    let path = save_problem(&p, dir.path(), "p").unwrap();
    let AnyProblem::Complex(q) = load_problem(&path).unwrap() else {
        panic!("field lost on reload");
    };
    assert_eq!(p.a().matrix(), q.a().matrix());
    assert_eq!(p.b().operator().matrix(), q.b().operator().matrix());
    let (a, b) = (run(&p, &RunConfig::default()).unwrap(), run(&q, &RunConfig::default()).unwrap());
    assert_eq!(a.iterations(), b.iterations());
    assert_eq!(a.final_frame().columns(), b.final_frame().columns());
}
