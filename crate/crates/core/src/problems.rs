//! Problem construction: the two small counterexamples, gap-controlled random
//! ensembles and a discretized 1D exchange model, plus problem files.
//!
//! Random draws use ChaCha20 seeded with `seed_from_u64(seed)`, one stream per
//! draw site: stream 0 for the target spectrum, 1 for the Haar eigenbasis,
//! 2 for the factor `C` of `B`, and [`crate::iteration::INIT_STREAM`] (3) for
//! random initial frames.

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::iteration::{GroundTruth, Problem, ShiftPolicy};
use crate::linalg::{Frame, HermitianOperator};
use crate::{mtx, AceError, Field, FieldTag, Result, C64};

pub const SPECTRUM_STREAM: u64 = 0;
pub const BASIS_STREAM: u64 = 1;
pub const B_FACTOR_STREAM: u64 = 2;

/// Diagonal regularization of the random exchange factor, `B = -(C C* + eps I)`.
pub const B_EPS: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSpec {
    #[serde(rename = "N")]
    pub dim: usize,
    pub n: usize,
    pub field: FieldTag,
    pub gap: f64,
    pub b_norm: f64,
    pub seed: u64,
}

impl EnsembleSpec {
    pub fn new(dim: usize, n: usize, gap: f64, b_norm: f64, seed: u64) -> Self {
        Self { dim, n, field: FieldTag::Real, gap, b_norm, seed }
    }

    pub fn complex(self) -> Self {
        Self { field: FieldTag::Complex, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.n >= self.dim {
            return Err(AceError::InvalidParameter(format!("need 1 <= n < N, got n={} N={}", self.n, self.dim)));
        }
        if !(self.gap > 0.0) || !(self.b_norm > 0.0) {
            return Err(AceError::InvalidParameter("gap and b_norm must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    #[serde(rename = "N")]
    pub dim: usize,
    pub n: usize,
    pub depth: f64,
    pub strength: f64,
    pub width: f64,
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        if self.dim < 8 {
            return Err(AceError::InvalidParameter(format!("model needs N >= 8, got {}", self.dim)));
        }
        if self.n == 0 || self.n >= self.dim {
            return Err(AceError::InvalidParameter(format!("need 1 <= n < N, got n={}", self.n)));
        }
        if !(self.strength > 0.0) {
            return Err(AceError::InvalidParameter("kernel strength must be positive".into()));
        }
        if !(self.width > 0.0) {
            return Err(AceError::InvalidParameter("kernel width must be positive".into()));
        }
        Ok(())
    }
}

/// Where a problem came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Origin {
    Counterexample { name: String },
    Ensemble { spec: EnsembleSpec },
    Model1d { spec: ModelSpec },
    Explicit,
}

/// The two small problems on which the iteration stops at a wrong fixed point.
///
/// `"2x2"`: `A = 0`, `B = diag(-2, -1)`, `n = 1`.
/// `"3x3"`: `A = diag(0, -2, 0)`, `B = diag(-4, -1, -1)`, `n = 1`.
pub fn counterexample(which: &str) -> Result<Problem<f64>> {
    let (a, b): (&[f64], &[f64]) = match which {
        "2x2" => (&[0.0, 0.0], &[-2.0, -1.0]),
        "3x3" => (&[0.0, -2.0, 0.0], &[-4.0, -1.0, -1.0]),
        other => return Err(AceError::UnknownName(format!("counterexample {other}"))),
    };
    Problem::new(
        HermitianOperator::from_real_diagonal(a),
        HermitianOperator::from_real_diagonal(b),
        1,
        ShiftPolicy::Fixed { t: 0.0 },
        Origin::Counterexample { name: which.to_string() },
    )
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Sorted uniform draws on `[-1, 1]`, with the upper part shifted so that
/// `lambda_{n+1} - lambda_n` equals `gap`.
pub fn target_spectrum(dim: usize, n: usize, gap: f64, seed: u64) -> Vec<f64> {
    let mut rng = stream_rng(seed, SPECTRUM_STREAM);
    let mut ev: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
    ev.sort_by(f64::total_cmp);
    let lift = gap - (ev[n] - ev[n - 1]);
    for x in &mut ev[n..] {
        *x += lift;
    }
    ev
}

/// `-(C C* + eps I)` for Gaussian `C`, rescaled to spectral norm `b_norm`.
pub fn random_negative_definite<T: Field, R: Rng + ?Sized>(dim: usize, b_norm: f64, rng: &mut R) -> HermitianOperator<T> {
    let c = DMatrix::<T>::from_fn(dim, dim, |_, _| T::gaussian(rng));
    let mut b = -(&c * c.adjoint());
    for i in 0..dim {
        b[(i, i)] -= T::from_real(B_EPS);
    }
    let b = HermitianOperator::from_hermitian_unchecked(crate::linalg::symmetrize(b));
    let norm = b.norm2();
    b.scale(b_norm / norm)
}

/// Random problem with prescribed spectrum gap and `|B|_2`.
///
/// `H = U diag(lambda) U*` with Haar `U`; `B = -(C C* + eps I)` rescaled to
/// `b_norm`; `A = H - B`. The ground truth is the first `n` columns of `U`.
/// The shift is 0 since `B` is negative definite by construction.
pub fn random_problem<T: Field>(spec: &EnsembleSpec) -> Result<Problem<T>> {
    spec.validate()?;
    if spec.field != T::TAG {
        return Err(AceError::InvalidParameter(format!("spec asks for {} field, built as {}", spec.field, T::TAG)));
    }
    let lambda = target_spectrum(spec.dim, spec.n, spec.gap, spec.seed);
    let prob = problem_with_spectrum::<T>(lambda, spec.n, spec.b_norm, spec.seed, Origin::Ensemble { spec: *spec })?;
    Ok(prob)
}

/// `H = U diag(lambda) U*` with Haar `U` and a random `B` drawn from the
/// `seed` streams, as in [`random_problem`] but with the spectrum given.
/// `lambda` must be ascending with `lambda_{n+1} > lambda_n`.
pub fn problem_with_spectrum<T: Field>(
    lambda: Vec<f64>,
    n: usize,
    b_norm: f64,
    seed: u64,
    origin: Origin,
) -> Result<Problem<T>> {
    let dim = lambda.len();
    if n == 0 || n >= dim {
        return Err(AceError::RankOutOfRange { rank: n, max: dim.saturating_sub(1) });
    }
    if lambda.windows(2).any(|w| w[1] < w[0]) || lambda[n] <= lambda[n - 1] || !(b_norm > 0.0) {
        return Err(AceError::InvalidParameter("spectrum must ascend with a positive gap at n, b_norm > 0".into()));
    }
    let u = Frame::<T>::haar(dim, dim, &mut stream_rng(seed, BASIS_STREAM))?.into_columns();
    let d = DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(dim, lambda.iter().map(|&x| T::from_real(x))));
    let h = &u * d * u.adjoint();

    let b = random_negative_definite::<T, _>(dim, b_norm, &mut stream_rng(seed, B_FACTOR_STREAM));
    let a = HermitianOperator::new(h - b.matrix())?;

    let truth = GroundTruth {
        gap: lambda[n] - lambda[n - 1],
        eigenvalues: lambda,
        frame: Frame::new(u.columns(0, n).into_owned())?,
    };
    let prob = Problem::new(a, b, n, ShiftPolicy::Fixed { t: 0.0 }, origin)?;
    Ok(prob.with_truth(truth))
}

/// 1D model: finite-difference Laplacian plus a Gaussian well for `A`, and a
/// negative definite Gaussian-kernel exchange for `B`, on the grid
/// `x_j = j h`, `h = 1/(N+1)`.
pub fn model_1d_exchange(spec: &ModelSpec) -> Result<Problem<f64>> {
    spec.validate()?;
    let dim = spec.dim;
    let h = 1.0 / (dim as f64 + 1.0);
    let x: Vec<f64> = (1..=dim).map(|j| j as f64 * h).collect();
    let mut a = DMatrix::<f64>::zeros(dim, dim);
    for j in 0..dim {
        a[(j, j)] = 2.0 / (h * h) - spec.depth * (-(x[j] - 0.5).powi(2) / 0.02).exp();
        if j + 1 < dim {
            a[(j, j + 1)] = -1.0 / (h * h);
            a[(j + 1, j)] = -1.0 / (h * h);
        }
    }
    let s = spec.strength;
    let two_l2 = 2.0 * spec.width * spec.width;
    let b = DMatrix::from_fn(dim, dim, |j, k| {
        let kernel = -s * h * (-(x[j] - x[k]).powi(2) / two_l2).exp();
        if j == k {
            kernel - 1e-6 * s
        } else {
            kernel
        }
    });
    Problem::new(
        HermitianOperator::new(a)?,
        HermitianOperator::new(b)?,
        spec.n,
        ShiftPolicy::Fixed { t: 0.0 },
        Origin::Model1d { spec: *spec },
    )
}

/// A problem in either field.
#[derive(Debug, Clone)]
pub enum AnyProblem {
    Real(Problem<f64>),
    Complex(Problem<C64>),
}

impl AnyProblem {
    pub fn field(&self) -> FieldTag {
        match self {
            AnyProblem::Real(_) => FieldTag::Real,
            AnyProblem::Complex(_) => FieldTag::Complex,
        }
    }
}

/// Generator selected by a compact `key=value` list, e.g.
/// `N=32,n=4,gap=0.5,bnorm=1,seed=7[,field=complex]` or
/// `model:N=64,n=4,depth=50,s=1,width=0.1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Generator {
    Ensemble(EnsembleSpec),
    Model(ModelSpec),
}

impl Generator {
    pub fn build(&self) -> Result<AnyProblem> {
        match self {
            Generator::Ensemble(s) => match s.field {
                FieldTag::Real => random_problem(s).map(AnyProblem::Real),
                FieldTag::Complex => random_problem(s).map(AnyProblem::Complex),
            },
            Generator::Model(m) => model_1d_exchange(m).map(AnyProblem::Real),
        }
    }
}

impl FromStr for Generator {
    type Err = AceError;

    fn from_str(s: &str) -> Result<Self> {
        let (model, body) = match s.strip_prefix("model:") {
            Some(rest) => (true, rest),
            None => (false, s),
        };
        let mut kv = std::collections::BTreeMap::new();
        for part in body.split(',').filter(|p| !p.trim().is_empty()) {
            let (k, v) = part
                .split_once('=')
                .ok_or_else(|| AceError::Parse(format!("expected key=value, got {part:?}")))?;
            kv.insert(k.trim().to_string(), v.trim().to_string());
        }
        let mut take = |key: &str| kv.remove(key);
        fn num<X: FromStr>(key: &str, v: Option<String>) -> Result<X> {
            let v = v.ok_or_else(|| AceError::Parse(format!("missing {key}")))?;
            v.parse().map_err(|_| AceError::Parse(format!("bad value for {key}: {v:?}")))
        }
        let generator = if model {
            Generator::Model(ModelSpec {
                dim: num("N", take("N"))?,
                n: num("n", take("n"))?,
                depth: num("depth", take("depth").or(Some("50".into())))?,
                strength: num("s", take("s").or(Some("1".into())))?,
                width: num("width", take("width").or(Some("0.1".into())))?,
            })
        } else {
            let field = match take("field") {
                Some(f) => f.parse()?,
                None => FieldTag::Real,
            };
            Generator::Ensemble(EnsembleSpec {
                dim: num("N", take("N"))?,
                n: num("n", take("n"))?,
                field,
                gap: num("gap", take("gap"))?,
                b_norm: num("bnorm", take("bnorm"))?,
                seed: num("seed", take("seed").or(Some("0".into())))?,
            })
        };
        if let Some(k) = kv.keys().next() {
            return Err(AceError::Parse(format!("unknown generator key {k:?}")));
        }
        Ok(generator)
    }
}

/// JSON manifest describing a problem stored next to its Matrix Market files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemManifest {
    #[serde(rename = "N")]
    pub dim: usize,
    pub n: usize,
    pub t: f64,
    pub field: FieldTag,
    pub origin: Origin,
    pub a: PathBuf,
    pub b: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth: Option<PathBuf>,
}

/// Writes `<stem>.json`, `<stem>_A.mtx`, `<stem>_B.mtx` and, when known,
/// `<stem>_truth.mtx` into `dir`. Returns the manifest path.
pub fn save_problem<T: Field>(prob: &Problem<T>, dir: &Path, stem: &str) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let a = PathBuf::from(format!("{stem}_A.mtx"));
    let b = PathBuf::from(format!("{stem}_B.mtx"));
    mtx::write_operator(&dir.join(&a), prob.a())?;
    mtx::write_operator(&dir.join(&b), prob.b().operator())?;
    let truth = match prob.truth() {
        Some(g) => {
            let p = PathBuf::from(format!("{stem}_truth.mtx"));
            mtx::write_frame(&dir.join(&p), &g.frame)?;
            Some(p)
        }
        None => None,
    };
    let manifest = ProblemManifest {
        dim: prob.dim(),
        n: prob.n(),
        t: prob.shift(),
        field: T::TAG,
        origin: prob.origin().clone(),
        a,
        b,
        truth,
    };
    let path = dir.join(format!("{stem}.json"));
    fs::write(&path, serde_json::to_string_pretty(&manifest)?)?;
    Ok(path)
}

fn load_typed<T: Field>(m: &ProblemManifest, base: &Path) -> Result<Problem<T>> {
    let a = mtx::read_operator::<T>(&base.join(&m.a))?;
    let b = mtx::read_operator::<T>(&base.join(&m.b))?;
    if a.dim() != m.dim {
        return Err(AceError::DimensionMismatch(format!("manifest N={} but A is {}", m.dim, a.dim())));
    }
    Problem::new(a, b, m.n, ShiftPolicy::Fixed { t: m.t }, m.origin.clone())
}

pub fn load_problem(path: &Path) -> Result<AnyProblem> {
    let manifest: ProblemManifest = serde_json::from_str(&fs::read_to_string(path)?)?;
    let base = path.parent().unwrap_or(Path::new("."));
    match manifest.field {
        FieldTag::Real => load_typed(&manifest, base).map(AnyProblem::Real),
        FieldTag::Complex => load_typed(&manifest, base).map(AnyProblem::Complex),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::subspace_distance;
    use approx::assert_abs_diff_eq;

    #[test]
    fn counterexample_spectra() {
        let p = counterexample("2x2").unwrap();
        let g = p.truth().unwrap();
        assert_eq!(g.eigenvalues, vec![-2.0, -1.0]);
        assert_eq!(g.gap, 1.0);
        let p = counterexample("3x3").unwrap();
        let g = p.truth().unwrap();
        assert_eq!(g.eigenvalues, vec![-4.0, -3.0, -1.0]);
        assert!(subspace_distance(&g.frame, &Frame::coordinate(3, &[0]).unwrap()).unwrap() < 1e-15);
        assert!(matches!(counterexample("5x5"), Err(AceError::UnknownName(_))));
    }

    #[test]
    fn random_problem_is_deterministic_and_gapped() {
        let spec = EnsembleSpec::new(32, 4, 0.5, 1.0, 7);
        let p1 = random_problem::<f64>(&spec).unwrap();
        let p2 = random_problem::<f64>(&spec).unwrap();
        assert_eq!(p1.a().matrix(), p2.a().matrix());
        assert_eq!(p1.b().operator().matrix(), p2.b().operator().matrix());
        let ev = p1.h().eigenvalues();
        assert_abs_diff_eq!(ev[4] - ev[3], 0.5, epsilon = 1e-12);
        let b = p1.b().operator();
        assert!(b.lambda_max() < 0.0);
        assert_abs_diff_eq!(b.norm2(), 1.0, epsilon = 1e-12);
        let h = p1.h().matrix();
        let v = p1.truth().unwrap().frame.columns();
        let lam = DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(&p1.truth().unwrap().eigenvalues[..4]));
        assert!((h * v - v * lam).norm() < 1e-10 * p1.h_norm());
    }

    #[test]
    fn complex_ensemble_needs_complex_type() {
        let spec = EnsembleSpec::new(8, 2, 0.5, 1.0, 1).complex();
        assert!(random_problem::<f64>(&spec).is_err());
        let p = random_problem::<C64>(&spec).unwrap();
        assert!(p.a().matrix().iter().any(|z| z.im.abs() > 1e-3));
    }

    #[test]
    fn model_rejects_bad_parameters() {
        let ok = ModelSpec { dim: 32, n: 3, depth: 50.0, strength: 1.0, width: 0.1 };
        assert!(model_1d_exchange(&ok).is_ok());
        for bad in [
            ModelSpec { strength: 0.0, ..ok },
            ModelSpec { width: 0.0, ..ok },
            ModelSpec { dim: 7, ..ok },
            ModelSpec { n: 32, ..ok },
        ] {
            assert!(matches!(model_1d_exchange(&bad), Err(AceError::InvalidParameter(_))));
        }
    }

    #[test]
    fn generator_parsing() {
        let g: Generator = "N=32,n=4,gap=0.5,bnorm=1,seed=7".parse().unwrap();
        assert_eq!(g, Generator::Ensemble(EnsembleSpec::new(32, 4, 0.5, 1.0, 7)));
        let g: Generator = "N=8,n=2,gap=1,bnorm=2,seed=1,field=complex".parse().unwrap();
        assert!(matches!(g, Generator::Ensemble(s) if s.field == FieldTag::Complex));
        let g: Generator = "model:N=64,n=4".parse().unwrap();
        assert!(matches!(g, Generator::Model(m) if m.dim == 64 && m.width == 0.1));
        assert!("N=8,n=2,gap=1".parse::<Generator>().is_err());
        assert!("N=8,n=2,gap=1,bnorm=1,colour=red".parse::<Generator>().is_err());
    }

    #[test]
    fn save_and_load_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let p = random_problem::<C64>(&EnsembleSpec::new(6, 2, 0.5, 1.0, 3).complex()).unwrap();
        let path = save_problem(&p, dir.path(), "prob").unwrap();
        let AnyProblem::Complex(q) = load_problem(&path).unwrap() else { panic!("field changed") };
        assert_eq!(q.a().matrix(), p.a().matrix());
        assert_eq!(q.b().operator().matrix(), p.b().operator().matrix());
        assert_eq!(q.shift(), p.shift());
        assert_eq!(q.origin(), p.origin());
    }
}
