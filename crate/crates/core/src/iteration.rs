//! The fixed-point map `F(Q) = density matrix of A + B~[Q, t]` and its
//! iteration, with trace capture and rate estimation.

use std::io::Write;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::compression::{compress, CompressedOperator, ExchangeOperator, SHIFT_TOL};
use crate::linalg::{
    density_matrix, subspace_distance, DensityMatrix, Frame, GapPolicy, HermitianOperator,
};
use crate::problems::Origin;
use crate::{AceError, Field, Result};

/// How the shift `t` is chosen when a problem is built.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "snake_case")]
pub enum ShiftPolicy {
    Auto { margin: f64 },
    Fixed { t: f64 },
}

impl Default for ShiftPolicy {
    fn default() -> Self {
        ShiftPolicy::Auto { margin: 0.1 }
    }
}

/// `0` when `lambda_max(B) < -margin |B|_2`, else `lambda_max(B) + margin |B|_2`.
pub fn auto_shift<T: Field>(b: &HermitianOperator<T>, margin: f64) -> f64 {
    let ev = b.eigenvalues();
    auto_shift_from(ev[ev.len() - 1], ev[0].abs().max(ev[ev.len() - 1].abs()), margin)
}

fn auto_shift_from(lambda_max: f64, norm: f64, margin: f64) -> f64 {
    if lambda_max < -margin * norm {
        0.0
    } else {
        lambda_max + margin * norm
    }
}

/// Eigen-data of `A + B` attached to a problem when its gap at `n` is positive.
#[derive(Debug, Clone)]
pub struct GroundTruth<T: Field> {
    /// All `N` eigenvalues, ascending.
    pub eigenvalues: Vec<f64>,
    pub frame: Frame<T>,
    pub gap: f64,
}

/// `(A, B, n, t)` together with the dense `A + B` and its ground truth.
#[derive(Debug, Clone)]
pub struct Problem<T: Field> {
    a: HermitianOperator<T>,
    b: ExchangeOperator<T>,
    h: HermitianOperator<T>,
    n: usize,
    t: f64,
    truth: Option<GroundTruth<T>>,
    origin: Origin,
}

impl<T: Field> Problem<T> {
    pub fn new(
        a: HermitianOperator<T>,
        b: HermitianOperator<T>,
        n: usize,
        shift: ShiftPolicy,
        origin: Origin,
    ) -> Result<Self> {
        let b = ExchangeOperator::new(b);
        let t = match shift {
            ShiftPolicy::Auto { margin } => auto_shift_from(b.lambda_max(), b.norm2(), margin),
            ShiftPolicy::Fixed { t } => t,
        };
        Self::assemble(a, b, n, t, origin)
    }

    fn assemble(a: HermitianOperator<T>, b: ExchangeOperator<T>, n: usize, t: f64, origin: Origin) -> Result<Self> {
        let dim = a.dim();
        if b.dim() != dim {
            return Err(AceError::DimensionMismatch(format!("A is {dim}x{dim}, B is {0}x{0}", b.dim())));
        }
        if n == 0 || n >= dim {
            return Err(AceError::RankOutOfRange { rank: n, max: dim - 1 });
        }
        let threshold = -SHIFT_TOL * b.norm2();
        if b.lambda_max() - t >= threshold {
            return Err(AceError::ShiftInsufficient { lambda_max: b.lambda_max() - t, threshold });
        }
        let h = a.add(b.operator())?;
        let truth = density_matrix(&h, n, GapPolicy::default()).ok().map(|dm| GroundTruth {
            eigenvalues: dm.spectrum.eigenvalues.clone(),
            gap: dm.gap,
            frame: dm.frame,
        });
        Ok(Self { a, b, h, n, t, truth, origin })
    }

    pub(crate) fn with_truth(mut self, truth: GroundTruth<T>) -> Self {
        self.truth = Some(truth);
        self
    }

    /// Same `A`, `B`, `n` with another shift and a fresh matvec tally.
    pub fn with_shift(&self, t: f64) -> Result<Self> {
        let b = ExchangeOperator::new(self.b.operator().clone());
        Self::assemble(self.a.clone(), b, self.n, t, self.origin.clone())
    }

    pub fn a(&self) -> &HermitianOperator<T> {
        &self.a
    }

    pub fn b(&self) -> &ExchangeOperator<T> {
        &self.b
    }

    /// Dense `A + B`.
    pub fn h(&self) -> &HermitianOperator<T> {
        &self.h
    }

    pub fn dim(&self) -> usize {
        self.a.dim()
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn shift(&self) -> f64 {
        self.t
    }

    pub fn truth(&self) -> Option<&GroundTruth<T>> {
        self.truth.as_ref()
    }

    pub fn origin(&self) -> &Origin {
        &self.origin
    }

    /// `|A + B|_2`.
    pub fn h_norm(&self) -> f64 {
        self.truth
            .as_ref()
            .map(|g| g.eigenvalues[0].abs().max(g.eigenvalues[g.eigenvalues.len() - 1].abs()))
            .unwrap_or_else(|| self.h.norm2())
    }

    /// `B~[Q, t]` built against the given handle of `B` (so the caller picks
    /// which tally is charged).
    pub fn compress_with(&self, b: &ExchangeOperator<T>, q: &Frame<T>) -> Result<CompressedOperator<T>> {
        compress(b, q, self.t)
    }

    /// Dense `A + B~[Q, t]`.
    pub fn compressed_hamiltonian(&self, c: &CompressedOperator<T>) -> HermitianOperator<T> {
        let m = self.a.matrix() + c.materialize().into_matrix();
        HermitianOperator::from_hermitian_unchecked(m)
    }
}

/// One application of the fixed-point map, with its intermediates.
#[derive(Debug, Clone)]
pub struct MapStep<T: Field> {
    pub density: DensityMatrix<T>,
    pub compressed: CompressedOperator<T>,
}

/// `F(Q)` charged to the given handle of `B`. A degenerate inner gap is
/// resolved by the `eigh` tie-break and flagged on `density.degenerate`.
pub fn fixed_point_step<T: Field>(prob: &Problem<T>, b: &ExchangeOperator<T>, q: &Frame<T>) -> Result<MapStep<T>> {
    if q.dim() != prob.dim() || q.rank() != prob.n() {
        return Err(AceError::DimensionMismatch(format!(
            "frame {}x{} for problem N={}, n={}",
            q.dim(),
            q.rank(),
            prob.dim(),
            prob.n()
        )));
    }
    let compressed = prob.compress_with(b, q)?;
    let hq = prob.compressed_hamiltonian(&compressed);
    let density = density_matrix(&hq, prob.n(), GapPolicy::permissive())?;
    Ok(MapStep { density, compressed })
}

pub fn fixed_point_map<T: Field>(prob: &Problem<T>, q: &Frame<T>) -> Result<Frame<T>> {
    Ok(fixed_point_step(prob, prob.b(), q)?.density.frame)
}

#[derive(Debug, Clone)]
pub enum Init<T: Field> {
    /// Lowest `n` eigenvectors of `A`.
    AEigvecs,
    /// Haar-random frame from the given seed.
    Random(u64),
    Frame(Frame<T>),
}

/// ChaCha20 stream reserved for random initial frames.
pub const INIT_STREAM: u64 = 3;

impl<T: Field> Init<T> {
    pub fn frame(&self, prob: &Problem<T>) -> Result<Frame<T>> {
        match self {
            Init::AEigvecs => Ok(density_matrix(prob.a(), prob.n(), GapPolicy::permissive())?.frame),
            Init::Random(seed) => {
                let mut rng = ChaCha20Rng::seed_from_u64(*seed);
                rng.set_stream(INIT_STREAM);
                Frame::haar(prob.dim(), prob.n(), &mut rng)
            }
            Init::Frame(f) => {
                if f.dim() != prob.dim() || f.rank() != prob.n() {
                    return Err(AceError::DimensionMismatch(format!(
                        "initial frame {}x{} for problem N={}, n={}",
                        f.dim(),
                        f.rank(),
                        prob.dim(),
                        prob.n()
                    )));
                }
                Ok(f.clone())
            }
        }
    }

    pub fn describe(&self) -> String {
        match self {
            Init::AEigvecs => "a-eigvecs".into(),
            Init::Random(s) => format!("random:{s}"),
            Init::Frame(_) => "frame".into(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunConfig<T: Field> {
    pub tol: f64,
    pub max_iter: usize,
    pub init: Init<T>,
}

impl<T: Field> Default for RunConfig<T> {
    fn default() -> Self {
        Self { tol: 1e-10, max_iter: 500, init: Init::AEigvecs }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminalStatus {
    ConvergedToTruth,
    ConvergedToOtherFixedPoint,
    /// Converged on a problem without ground truth.
    Converged,
    MaxIter,
    Stalled,
}

impl TerminalStatus {
    pub fn is_converged(self) -> bool {
        matches!(self, Self::ConvergedToTruth | Self::ConvergedToOtherFixedPoint | Self::Converged)
    }
}

impl std::fmt::Display for TerminalStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = serde_json::to_value(self).map_err(|_| std::fmt::Error)?;
        write!(f, "{}", s.as_str().unwrap_or_default())
    }
}

/// Record for iterate `P^(k)`.
#[derive(Debug, Clone)]
pub struct StepRecord<T: Field> {
    pub k: usize,
    /// `lambda_i^(k)`, the lowest `n` eigenvalues of `A + B~[P^(k-1)]`; for
    /// `k = 0` the Ritz values of `A + B` on `P^(0)`.
    pub eigenvalues: Vec<f64>,
    pub frame: Frame<T>,
    pub dist_prev: Option<f64>,
    pub dist_truth: Option<f64>,
    /// `sum_i (lambda_i^(k) - lambda_i^(k+1))`, filled once step `k+1` exists.
    pub delta: Option<f64>,
    pub b_matvecs: u64,
    pub degenerate_inner_gap: bool,
}

#[derive(Debug, Clone)]
pub struct IterationTrace<T: Field> {
    pub steps: Vec<StepRecord<T>>,
    pub status: TerminalStatus,
    pub tol: f64,
    pub n: usize,
    pub dim: usize,
    pub shift: f64,
    pub h_norm: f64,
    pub warnings: Vec<String>,
}

/// Consecutive quiet steps (negligible descent, no new distance low) that count as a stall.
pub const STALL_STEPS: usize = 5;

pub fn run<T: Field>(prob: &Problem<T>, cfg: &RunConfig<T>) -> Result<IterationTrace<T>> {
    if !(cfg.tol > 0.0) {
        return Err(AceError::InvalidParameter(format!("tol must be positive, got {}", cfg.tol)));
    }
    let b = prob.b().forked();
    let n = prob.n();
    let h_norm = prob.h_norm();
    let truth = prob.truth().map(|g| &g.frame);
    let dist_truth = |f: &Frame<T>| truth.map(|g| subspace_distance(g, f)).transpose();

    let p0 = cfg.init.frame(prob)?;
    let mut steps = vec![StepRecord {
        k: 0,
        eigenvalues: Vec::new(),
        dist_truth: dist_truth(&p0)?,
        frame: p0,
        dist_prev: None,
        delta: None,
        b_matvecs: 0,
        degenerate_inner_gap: false,
    }];
    let mut warnings = Vec::new();
    let mut quiet = 0usize;
    let mut best_dist = f64::INFINITY;
    let mut status = TerminalStatus::MaxIter;

    for k in 1..=cfg.max_iter {
        let prev = steps.last().expect("trace is never empty");
        let step = fixed_point_step(prob, &b, &prev.frame)?;
        let ritz0 = if k == 1 { Some(ritz_values(prob, &prev.frame, &step.compressed)) } else { None };
        let frame = step.density.frame;
        let dist_prev = subspace_distance(&prev.frame, &frame)?;
        let eigenvalues = step.density.spectrum.eigenvalues[..n].to_vec();
        if step.density.degenerate {
            warnings.push(format!("step {k}: degenerate inner gap {:.3e}, tie-break applied", step.density.gap));
        }
        let record = StepRecord {
            k,
            eigenvalues,
            dist_truth: dist_truth(&frame)?,
            frame,
            dist_prev: Some(dist_prev),
            delta: None,
            b_matvecs: b.matvecs(),
            degenerate_inner_gap: step.density.degenerate,
        };
        let last = steps.last_mut().expect("trace is never empty");
        if let Some(r) = ritz0 {
            last.eigenvalues = r;
        }
        let delta: f64 = last.eigenvalues.iter().zip(&record.eigenvalues).map(|(a, b)| a - b).sum();
        last.delta = Some(delta);
        steps.push(record);

        if dist_prev < cfg.tol {
            status = match steps.last().and_then(|r| r.dist_truth) {
                Some(d) if d < 100.0 * cfg.tol => TerminalStatus::ConvergedToTruth,
                Some(_) => TerminalStatus::ConvergedToOtherFixedPoint,
                None => TerminalStatus::Converged,
            };
            break;
        }
        // Descent is quadratic in the distance, so it hits roundoff while the
        // iterate still contracts; only a step without a new distance low is quiet.
        let contracting = dist_prev < best_dist;
        best_dist = best_dist.min(dist_prev);
        if delta < f64::EPSILON * h_norm && !contracting {
            quiet += 1;
            if quiet >= STALL_STEPS {
                status = TerminalStatus::Stalled;
                break;
            }
        } else {
            quiet = 0;
        }
    }

    Ok(IterationTrace { steps, status, tol: cfg.tol, n, dim: prob.dim(), shift: prob.shift(), h_norm, warnings })
}

/// Ritz values of `A + B` on span `V`, using `W = (B - t) V` from the compression.
fn ritz_values<T: Field>(prob: &Problem<T>, v: &Frame<T>, c: &CompressedOperator<T>) -> Vec<f64> {
    let vm = v.columns();
    let mut g: DMatrix<T> = vm.adjoint() * prob.a().matrix() * vm + vm.adjoint() * c.w();
    for i in 0..g.nrows() {
        g[(i, i)] += T::from_real(prob.shift());
    }
    HermitianOperator::from_hermitian_unchecked(crate::linalg::symmetrize(g)).eigenvalues()
}

impl<T: Field> IterationTrace<T> {
    /// Number of outer steps taken.
    pub fn iterations(&self) -> usize {
        self.steps.len() - 1
    }

    pub fn final_frame(&self) -> &Frame<T> {
        &self.steps[self.steps.len() - 1].frame
    }

    /// `|P^(k) - P^(k-1)|_2` at the last step.
    pub fn final_distance(&self) -> Option<f64> {
        self.steps.last().and_then(|r| r.dist_prev)
    }

    pub fn truth_series(&self) -> Vec<(usize, f64)> {
        self.steps.iter().filter_map(|r| r.dist_truth.map(|d| (r.k, d))).collect()
    }

    pub fn write_csv<W: Write>(&self, w: &mut W) -> Result<()> {
        let opt = |x: Option<f64>| x.map(crate::mtx::fmt_f64).unwrap_or_default();
        let mut header = vec!["k".to_string()];
        header.extend((1..=self.n).map(|i| format!("lambda_{i}")));
        header.extend(["dist_prev", "dist_truth", "delta", "b_matvecs"].map(String::from));
        writeln!(w, "{}", header.join(","))?;
        for r in &self.steps {
            let mut row = vec![r.k.to_string()];
            if r.eigenvalues.is_empty() {
                row.extend(std::iter::repeat_n(String::new(), self.n));
            } else {
                row.extend(r.eigenvalues.iter().map(|&x| crate::mtx::fmt_f64(x)));
            }
            row.extend([opt(r.dist_prev), opt(r.dist_truth), opt(r.delta), r.b_matvecs.to_string()]);
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }

    pub fn summary(&self, gamma_bound: Option<f64>) -> RunSummary {
        RunSummary {
            status: self.status,
            iters: self.iterations(),
            final_distance: self.final_distance(),
            estimated_rate: estimate_rate(self).ok().map(|f| f.rate),
            gamma_bound,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub status: TerminalStatus,
    pub iters: usize,
    pub final_distance: Option<f64>,
    pub estimated_rate: Option<f64>,
    pub gamma_bound: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub rate: f64,
    /// Inclusive range of `k` used.
    pub window: (usize, usize),
    pub r_squared: f64,
}

/// Fewest points a rate fit accepts.
pub const MIN_RATE_POINTS: usize = 6;
/// Fit quality at which a longer window is preferred over a shorter one.
pub const RATE_R2_TARGET: f64 = 0.99999;

/// Geometric rate of `dist_to_truth` over the trailing asymptotic window.
pub fn estimate_rate<T: Field>(trace: &IterationTrace<T>) -> Result<RateFit> {
    let floor = 10.0 * f64::EPSILON * trace.dim as f64;
    estimate_rate_series(&trace.truth_series(), floor, 0.1)
}

/// Least-squares slope of `ln d` against `k`.
///
/// Qualifying points have `lo < d < hi`; the trailing contiguous run of them
/// is used. Within it the longest trailing window with `r^2 >= 0.99999` wins,
/// otherwise the trailing window with the best `r^2`.
pub fn estimate_rate_series(series: &[(usize, f64)], lo: f64, hi: f64) -> Result<RateFit> {
    let qualifies = |d: f64| d > lo && d < hi;
    let end = series.iter().rposition(|&(_, d)| qualifies(d));
    let Some(end) = end else {
        return Err(AceError::InsufficientTrace { points: 0, required: MIN_RATE_POINTS });
    };
    let mut start = end;
    while start > 0 && qualifies(series[start - 1].1) && series[start - 1].0 + 1 == series[start].0 {
        start -= 1;
    }
    let run = &series[start..=end];
    if run.len() < MIN_RATE_POINTS {
        return Err(AceError::InsufficientTrace { points: run.len(), required: MIN_RATE_POINTS });
    }
    let mut best: Option<RateFit> = None;
    for from in 0..=run.len() - MIN_RATE_POINTS {
        let fit = fit_log_linear(&run[from..]);
        if fit.r_squared >= RATE_R2_TARGET {
            return Ok(fit);
        }
        if best.is_none_or(|b| fit.r_squared > b.r_squared) {
            best = Some(fit);
        }
    }
    Ok(best.expect("at least one window"))
}

fn fit_log_linear(pts: &[(usize, f64)]) -> RateFit {
    let m = pts.len() as f64;
    let xs: Vec<f64> = pts.iter().map(|p| p.0 as f64).collect();
    let ys: Vec<f64> = pts.iter().map(|p| p.1.ln()).collect();
    let xm = xs.iter().sum::<f64>() / m;
    let ym = ys.iter().sum::<f64>() / m;
    let sxx: f64 = xs.iter().map(|x| (x - xm).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - xm) * (y - ym)).sum();
    let syy: f64 = ys.iter().map(|y| (y - ym).powi(2)).sum();
    let slope = sxy / sxx;
    let r_squared = if syy == 0.0 { 1.0 } else { (sxy * sxy) / (sxx * syy) };
    RateFit { rate: slope.exp(), window: (pts[0].0, pts[pts.len() - 1].0), r_squared }
}
