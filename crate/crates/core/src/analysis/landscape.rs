use itertools::Itertools;
use serde::{Deserialize, Serialize};

use super::jacobian::jacobian_blocks;
use crate::exec::{try_map_indexed, Mode};
use crate::iteration::Problem;
use crate::linalg::{subspace_distance, Frame, HermitianOperator, Spectrum};
use crate::{AceError, Field, Result};

pub const ENUMERATION_CAP: usize = 100_000;
/// Relative band `|lambda_tau(n) - mu_tau| < band |A+B|_2` left unclassified.
pub const AMBIGUITY_BAND: f64 = 1e-9;
/// Relative separation below which two eigenvalues of `A + B` count as equal.
pub const DISTINCT_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy)]
pub struct EnumerationOptions {
    pub cap: usize,
    pub mode: Mode,
}

impl Default for EnumerationOptions {
    fn default() -> Self {
        Self { cap: ENUMERATION_CAP, mode: Mode::default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stability {
    Stable,
    Unstable,
    NotFixed,
    Ambiguous,
}

/// Classification of the invariant projector `P_tau` onto eigenvectors
/// `tau` of `A + B`. Indices in `tau` are 1-based.
#[derive(Debug, Clone, Serialize)]
#[serde(bound = "")]
pub struct FixedPointReport<T: Field> {
    pub tau: Vec<usize>,
    #[serde(skip)]
    pub projector: Frame<T>,
    pub is_fixed: bool,
    pub ambiguous: bool,
    /// Lowest eigenvalue of `A + B~[P_tau]` on the complement of `P_tau`.
    pub mu_tau: f64,
    /// Largest of the selected eigenvalues, `lambda_{tau_n}`.
    pub lambda_tau_n: f64,
    /// `mu_tau - lambda_tau_n`.
    pub margin: f64,
    /// `F(P_tau)`.
    pub functional: f64,
    pub stability: Stability,
    pub max_jacobian_eigenvalue: Option<f64>,
}

pub fn binomial(n: usize, k: usize) -> u128 {
    let k = k.min(n - k.min(n));
    (0..k).fold(1u128, |acc, i| acc * (n - i) as u128 / (i + 1) as u128)
}

fn taus(dim: usize, n: usize, cap: usize) -> Result<Vec<Vec<usize>>> {
    let count = binomial(dim, n);
    if count > cap as u128 {
        return Err(AceError::EnumerationCapExceeded { count, cap });
    }
    Ok((0..dim).combinations(n).collect())
}

fn min_separation(ev: &[f64]) -> f64 {
    ev.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min)
}

struct Invariant<T: Field> {
    frame: Frame<T>,
    mu_tau: f64,
    lambda_tau_n: f64,
    functional: f64,
}

fn invariant<T: Field>(prob: &Problem<T>, spec: &Spectrum<T>, tau: &[usize]) -> Result<Invariant<T>> {
    let cols = spec.eigenvectors.select_columns(tau);
    let frame = Frame::new(cols)?;
    let c = prob.compress_with(&prob.b().detached(), &frame)?;
    let h = prob.compressed_hamiltonian(&c);
    let comp = frame.completion();
    let h22 = HermitianOperator::from_hermitian_unchecked(crate::linalg::symmetrize(comp.adjoint() * h.matrix() * &comp));
    let ev = h.eigenvalues();
    Ok(Invariant {
        mu_tau: h22.lambda_min(),
        lambda_tau_n: spec.eigenvalues[tau[tau.len() - 1]],
        functional: ev[..prob.n()].iter().sum(),
        frame,
    })
}

/// One report per increasing `tau`, in lexicographic order.
pub fn enumerate_invariant_projectors<T: Field>(
    prob: &Problem<T>,
    opts: EnumerationOptions,
) -> Result<Vec<FixedPointReport<T>>> {
    let spec = prob.h().eigh();
    let norm = prob.h_norm();
    let sep = min_separation(&spec.eigenvalues);
    if sep <= DISTINCT_TOL * norm {
        return Err(AceError::AssumptionViolated(format!(
            "eigenvalues of A+B are not distinct (min separation {sep:.3e})"
        )));
    }
    let all = taus(prob.dim(), prob.n(), opts.cap)?;
    let band = AMBIGUITY_BAND * norm;
    try_map_indexed(opts.mode, &all, |_, tau| {
        let inv = invariant(prob, &spec, tau)?;
        let margin = inv.mu_tau - inv.lambda_tau_n;
        let ambiguous = margin.abs() < band;
        let is_fixed = !ambiguous && margin > 0.0;
        let (stability, max_eig) = if ambiguous {
            (Stability::Ambiguous, None)
        } else if !is_fixed {
            (Stability::NotFixed, None)
        } else {
            let gamma = jacobian_blocks(prob, &inv.frame)?.gamma();
            (if gamma < 1.0 { Stability::Stable } else { Stability::Unstable }, Some(gamma))
        };
        Ok(FixedPointReport {
            tau: tau.iter().map(|i| i + 1).collect(),
            projector: inv.frame,
            is_fixed,
            ambiguous,
            mu_tau: inv.mu_tau,
            lambda_tau_n: inv.lambda_tau_n,
            margin,
            functional: inv.functional,
            stability,
            max_jacobian_eigenvalue: max_eig,
        })
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenericityReport {
    pub distinct_eigenvalues: bool,
    pub min_eigen_separation: f64,
    /// `min_tau |lambda_tau(n) - mu_tau|`.
    pub assumption2_margin: f64,
    /// 1-based `tau` attaining the margin when it falls inside the ambiguity band.
    pub violating_tau: Option<Vec<usize>>,
    pub certified: bool,
}

pub fn genericity_check<T: Field>(prob: &Problem<T>, opts: EnumerationOptions) -> Result<GenericityReport> {
    let spec = prob.h().eigh();
    let norm = prob.h_norm();
    let sep = min_separation(&spec.eigenvalues);
    let all = taus(prob.dim(), prob.n(), opts.cap)?;
    let margins = try_map_indexed(opts.mode, &all, |_, tau| {
        let inv = invariant(prob, &spec, tau)?;
        Ok((inv.mu_tau - inv.lambda_tau_n).abs())
    })?;
    let (arg, margin) = margins
        .iter()
        .enumerate()
        .fold((0, f64::INFINITY), |(ai, am), (i, &m)| if m < am { (i, m) } else { (ai, am) });
    let distinct = sep > DISTINCT_TOL * norm;
    let band = AMBIGUITY_BAND * norm;
    let violating = (margin <= band).then(|| all[arg].iter().map(|i| i + 1).collect());
    Ok(GenericityReport {
        distinct_eigenvalues: distinct,
        min_eigen_separation: sep,
        assumption2_margin: margin,
        violating_tau: violating,
        certified: distinct && margin > band,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NearestInvariant {
    /// 1-based.
    pub tau: Vec<usize>,
    pub distance: f64,
}

/// Invariant projector closest to `q`; ties go to the lexicographically smallest `tau`.
pub fn nearest_invariant_projector<T: Field>(
    prob: &Problem<T>,
    q: &Frame<T>,
    opts: EnumerationOptions,
) -> Result<NearestInvariant> {
    let spec = prob.h().eigh();
    let all = taus(prob.dim(), prob.n(), opts.cap)?;
    let dists = try_map_indexed(opts.mode, &all, |_, tau| {
        subspace_distance(&Frame::new(spec.eigenvectors.select_columns(tau))?, q)
    })?;
    let (arg, distance) = dists
        .iter()
        .enumerate()
        .fold((0, f64::INFINITY), |(ai, ad), (i, &d)| if d < ad { (i, d) } else { (ai, ad) });
    Ok(NearestInvariant { tau: all[arg].iter().map(|i| i + 1).collect(), distance })
}
