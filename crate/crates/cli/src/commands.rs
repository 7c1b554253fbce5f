use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use ace_lab::analysis::{
    enumerate_invariant_projectors, gamma_bound, genericity_check, jacobian_blocks, EnumerationOptions, GammaBound,
    JacobianReport,
};
use ace_lab::exec::{map_indexed, Mode};
use ace_lab::iteration::{
    auto_shift, estimate_rate, run, Init, IterationTrace, Problem, RateFit, RunConfig, TerminalStatus,
};
use ace_lab::linalg::Frame;
use ace_lab::mtx::{fmt_f64, read_frame};
use ace_lab::problems::{counterexample as build_counterexample, load_problem, random_problem, AnyProblem, EnsembleSpec, Generator};
use ace_lab::verify::{run_suite, SuiteOptions};
use ace_lab::{AceError, Field, FieldTag, Result};
use serde::Serialize;

use crate::manifest::{write_json, ProblemSource, RunManifest, RunSettings};
use crate::{exit, AnalyzeArgs, CounterexampleArgs, ProblemArgs, RunArgs, SolveArgs, SweepArgs, VerifyArgs};

macro_rules! with_problem {
    ($any:expr, $p:ident => $body:expr) => {
        match $any {
            AnyProblem::Real($p) => $body,
            AnyProblem::Complex($p) => $body,
        }
    };
}

fn mode(sequential: bool) -> Mode {
    if sequential {
        Mode::Sequential
    } else {
        Mode::default()
    }
}

fn status_code(s: TerminalStatus) -> u8 {
    match s {
        TerminalStatus::ConvergedToTruth | TerminalStatus::Converged => exit::OK,
        TerminalStatus::ConvergedToOtherFixedPoint => exit::OTHER_FIXED_POINT,
        TerminalStatus::MaxIter | TerminalStatus::Stalled => exit::MAX_ITER,
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    Ok(())
}

fn parse_shift<T: Field>(spec: &str, prob: &Problem<T>) -> Result<f64> {
    match spec {
        "auto" => Ok(auto_shift(prob.b().operator(), 0.1)),
        s => s.parse().map_err(|_| AceError::Parse(format!("--shift expects auto or a number, got {s:?}"))),
    }
}

fn with_shift<T: Field>(prob: Problem<T>, shift: &Option<String>) -> Result<Problem<T>> {
    match shift {
        Some(s) => {
            let t = parse_shift(s, &prob)?;
            prob.with_shift(t)
        }
        None => Ok(prob),
    }
}

fn load(args: &ProblemArgs) -> Result<AnyProblem> {
    let any = match (&args.generator, &args.problem) {
        (Some(g), _) => Generator::from_str(g)?.build()?,
        (None, Some(p)) => load_problem(p).map_err(|e| match e {
            AceError::Io(io) => AceError::Io(std::io::Error::new(io.kind(), format!("{}: {io}", p.display()))),
            e => e,
        })?,
        (None, None) => return Err(AceError::InvalidParameter("one of --gen or --problem is required".into())),
    };
    Ok(match any {
        AnyProblem::Real(p) => AnyProblem::Real(with_shift(p, &args.shift)?),
        AnyProblem::Complex(p) => AnyProblem::Complex(with_shift(p, &args.shift)?),
    })
}

fn source<T: Field>(args: &ProblemArgs, prob: &Problem<T>) -> ProblemSource {
    ProblemSource {
        generator: args.generator.clone(),
        file: args.problem.clone(),
        origin: prob.origin().clone(),
        field: T::TAG,
        dim: prob.dim(),
        n: prob.n(),
        t: prob.shift(),
    }
}

fn parse_init<T: Field>(spec: &str) -> Result<Init<T>> {
    if spec == "a-eigvecs" {
        return Ok(Init::AEigvecs);
    }
    if let Some(seed) = spec.strip_prefix("random:") {
        return seed.parse().map(Init::Random).map_err(|_| AceError::Parse(format!("bad init seed {seed:?}")));
    }
    if let Some(path) = spec.strip_prefix("file:") {
        return Ok(Init::Frame(read_frame(Path::new(path))?));
    }
    Err(AceError::Parse(format!("--init expects a-eigvecs, random:<seed> or file:<path>, got {spec:?}")))
}

fn settings(run: &RunArgs) -> RunSettings {
    let seed = run.init.strip_prefix("random:").and_then(|s| s.parse().ok());
    RunSettings { tol: run.tol, max_iter: run.max_iter, init: run.init.clone(), seed }
}

#[derive(Debug, Serialize)]
struct SolveSummary {
    status: TerminalStatus,
    iters: usize,
    final_distance: Option<f64>,
    estimated_rate: Option<f64>,
    /// `|B_t|_2 / (gap + |B_t|_2)`.
    gamma_bound: Option<f64>,
    gamma_exact: Option<f64>,
    rate_fit: Option<RateFit>,
    bounds: Option<GammaBound>,
    b_matvecs: u64,
    #[serde(rename = "N")]
    dim: usize,
    n: usize,
    t: f64,
    field: FieldTag,
    warnings: Vec<String>,
}

fn summarize<T: Field>(prob: &Problem<T>, trace: &IterationTrace<T>) -> SolveSummary {
    let bounds = gamma_bound(prob).ok();
    let fit = estimate_rate(trace).ok();
    SolveSummary {
        status: trace.status,
        iters: trace.iterations(),
        final_distance: trace.final_distance(),
        estimated_rate: fit.map(|f| f.rate),
        gamma_bound: bounds.map(|g| g.bound_b),
        gamma_exact: bounds.map(|g| g.gamma_exact),
        rate_fit: fit,
        bounds,
        b_matvecs: trace.steps.last().map(|s| s.b_matvecs).unwrap_or(0),
        dim: prob.dim(),
        n: prob.n(),
        t: prob.shift(),
        field: T::TAG,
        warnings: trace.warnings.clone(),
    }
}

fn write_trace<T: Field>(dir: &Path, prob: &Problem<T>, trace: &IterationTrace<T>) -> Result<SolveSummary> {
    create_dir(dir)?;
    let mut w = BufWriter::new(File::create(dir.join("trace.csv"))?);
    trace.write_csv(&mut w)?;
    w.flush()?;
    let summary = summarize(prob, trace);
    write_json(&dir.join("summary.json"), &summary)?;
    Ok(summary)
}

fn solve_typed<T: Field>(prob: Problem<T>, args: &SolveArgs, argv: &[String]) -> Result<u8> {
    let cfg = RunConfig { tol: args.run.tol, max_iter: args.run.max_iter, init: parse_init::<T>(&args.run.init)? };
    let trace = run(&prob, &cfg)?;
    let s = write_trace(&args.out, &prob, &trace)?;
    RunManifest::new(argv, &args.out, Some(source(&args.problem, &prob)), Some(settings(&args.run))).write(&args.out)?;
    let opt = |x: Option<f64>| x.map(|v| format!("{v:.6e}")).unwrap_or_else(|| "n/a".into());
    println!(
        "{} after {} steps; final distance {}; rate {} (bound {})",
        s.status,
        s.iters,
        opt(s.final_distance),
        opt(s.estimated_rate),
        opt(s.gamma_bound)
    );
    for w in &s.warnings {
        eprintln!("warning: {w}");
    }
    Ok(status_code(trace.status))
}

pub fn solve(args: &SolveArgs, argv: &[String]) -> Result<u8> {
    with_problem!(load(&args.problem)?, p => solve_typed(p, args, argv))
}

#[derive(Debug, Serialize)]
struct JacobianFile {
    at: &'static str,
    report: JacobianReport,
    bounds: GammaBound,
}

fn analyze_typed<T: Field>(prob: Problem<T>, args: &AnalyzeArgs, argv: &[String]) -> Result<u8> {
    let dir = &args.out;
    create_dir(dir)?;
    let opts = EnumerationOptions { cap: args.cap, mode: mode(args.sequential) };
    match gamma_bound(&prob) {
        Ok(bounds) => {
            let truth = &prob.truth().expect("gamma_bound needs the truth").frame;
            let report = jacobian_blocks(&prob, truth)?.report();
            println!(
                "gamma {:.6} <= {:.6} (Schur) <= {:.6} (|B_t|)",
                bounds.gamma_exact, bounds.bound_schur, bounds.bound_b
            );
            write_json(&dir.join("jacobian.json"), &JacobianFile { at: "ground_truth", report, bounds })?;
            write_json(&dir.join("gamma_bounds.json"), &bounds)?;
        }
        Err(e) => eprintln!("warning: no Jacobian at the ground truth: {e}"),
    }
    match genericity_check(&prob, opts) {
        Ok(g) => {
            println!("genericity certified: {}", g.certified);
            write_json(&dir.join("genericity.json"), &g)?;
        }
        Err(e) => eprintln!("warning: genericity check skipped: {e}"),
    }
    match enumerate_invariant_projectors(&prob, opts) {
        Ok(reports) => {
            let fixed = reports.iter().filter(|r| r.is_fixed).count();
            println!("{} invariant projectors, {} fixed", reports.len(), fixed);
            write_json(&dir.join("fixed_points.json"), &reports)?;
        }
        Err(e) => eprintln!("warning: enumeration skipped: {e}"),
    }
    RunManifest::new(argv, dir, Some(source(&args.problem, &prob)), None).write(dir)?;
    Ok(exit::OK)
}

pub fn analyze(args: &AnalyzeArgs, argv: &[String]) -> Result<u8> {
    with_problem!(load(&args.problem)?, p => analyze_typed(p, args, argv))
}

fn parse_seeds(s: &str) -> Result<Vec<u64>> {
    let bad = || AceError::Parse(format!("--seeds expects a..b or a list, got {s:?}"));
    if let Some((a, b)) = s.split_once("..") {
        let (a, b): (u64, u64) = (a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?);
        return Ok((a..b).collect());
    }
    s.split(',').map(|x| x.trim().parse().map_err(|_| bad())).collect()
}

#[derive(Debug, Clone, Copy)]
struct Trial {
    gap: f64,
    b_norm: f64,
    seed: u64,
}

struct TrialRow {
    status: String,
    iters: usize,
    fit: Option<RateFit>,
    bounds: Option<GammaBound>,
}

fn sweep_trial<T: Field>(trial: &Trial, args: &SweepArgs) -> Result<TrialRow> {
    let mut spec = EnsembleSpec::new(args.dim, args.n, trial.gap, trial.b_norm, trial.seed);
    if T::TAG == FieldTag::Complex {
        spec = spec.complex();
    }
    let prob = random_problem::<T>(&spec)?;
    let cfg = RunConfig { tol: args.run.tol, max_iter: args.run.max_iter, init: parse_init::<T>(&args.run.init)? };
    let trace = run(&prob, &cfg)?;
    Ok(TrialRow {
        status: trace.status.to_string(),
        iters: trace.iterations(),
        fit: estimate_rate(&trace).ok(),
        bounds: gamma_bound(&prob).ok(),
    })
}

pub fn sweep(args: &SweepArgs, argv: &[String]) -> Result<u8> {
    let field: FieldTag = args.field.parse()?;
    let seeds = parse_seeds(&args.seeds)?;
    let grid: Vec<Trial> = itertools::iproduct!(&args.gaps, &args.bnorms, &seeds)
        .map(|(&gap, &b_norm, &seed)| Trial { gap, b_norm, seed })
        .collect();
    let rows = map_indexed(mode(args.sequential), &grid, |_, t| match field {
        FieldTag::Real => sweep_trial::<f64>(t, args),
        FieldTag::Complex => sweep_trial::<ace_lab::C64>(t, args),
    });
    create_dir(&args.out)?;
    let mut w = BufWriter::new(File::create(args.out.join("rates.csv"))?);
    writeln!(w, "index,gap,b_norm,seed,status,iters,estimated_rate,r_squared,gamma_exact,bound_schur,bound_b")?;
    let opt = |x: Option<f64>| x.map(fmt_f64).unwrap_or_default();
    let mut failures = 0;
    for (i, (t, row)) in grid.iter().zip(&rows).enumerate() {
        let prefix = format!("{i},{},{},{}", fmt_f64(t.gap), fmt_f64(t.b_norm), t.seed);
        match row {
            Ok(r) => writeln!(
                w,
                "{prefix},{},{},{},{},{},{},{}",
                r.status,
                r.iters,
                opt(r.fit.map(|f| f.rate)),
                opt(r.fit.map(|f| f.r_squared)),
                opt(r.bounds.map(|b| b.gamma_exact)),
                opt(r.bounds.map(|b| b.bound_schur)),
                opt(r.bounds.map(|b| b.bound_b)),
            )?,
            Err(e) => {
                failures += 1;
                eprintln!("trial {i} (gap {}, b_norm {}, seed {}): {e}", t.gap, t.b_norm, t.seed);
                writeln!(w, "{prefix},error,,,,,,")?;
            }
        }
    }
    w.flush()?;
    let settings = settings(&args.run);
    RunManifest::new(argv, &args.out, None, Some(settings)).write(&args.out)?;
    println!("{} trials written to {}", grid.len(), args.out.join("rates.csv").display());
    Ok(if failures > 0 { exit::INTERNAL } else { exit::OK })
}

/// `span{e_j}` when the frame is a single coordinate vector up to phase.
fn describe_span(f: &Frame<f64>) -> String {
    let cols = f.columns();
    let labels: Vec<String> = (0..cols.ncols())
        .map(|j| {
            let c = cols.column(j);
            match c.iter().position(|x| (x.abs() - 1.0).abs() < 1e-12) {
                Some(i) => format!("e{}", i + 1),
                None => format!("[{}]", c.iter().map(|x| format!("{x:.4}")).collect::<Vec<_>>().join(" ")),
            }
        })
        .collect();
    format!("span{{{}}}", labels.join(","))
}

pub fn counterexample(args: &CounterexampleArgs, argv: &[String]) -> Result<u8> {
    let prob = build_counterexample(&args.which)?;
    let start = Frame::coordinate(prob.dim(), &[prob.dim() - 1])?;
    let trace = run(&prob, &RunConfig { init: Init::Frame(start), ..RunConfig::default() })?;
    for s in &trace.steps {
        let eig = s.eigenvalues.iter().map(|x| format!("{x}")).collect::<Vec<_>>().join(",");
        let d = s.dist_prev.map(|d| format!("{d:.3e}")).unwrap_or_else(|| "-".into());
        println!("k={} {} lambda=[{}] dist_prev={}", s.k, describe_span(&s.frame), eig, d);
    }
    let path: Vec<String> = trace.steps.iter().map(|s| describe_span(&s.frame)).collect();
    println!("trajectory: {}", path.join(" -> "));
    println!("status: {}", trace.status);
    if let Some(dir) = &args.out {
        write_trace(dir, &prob, &trace)?;
        RunManifest::new(argv, dir, None, None).write(dir)?;
    }
    Ok(status_code(trace.status))
}

pub fn verify(args: &VerifyArgs) -> Result<u8> {
    let checks = run_suite(SuiteOptions { mode: mode(args.sequential), quick: args.quick });
    for c in &checks {
        println!("{c}");
    }
    let passed = checks.iter().filter(|c| c.passed).count();
    println!("{passed}/{} invariants passed", checks.len());
    if let Some(path) = &args.json {
        write_json(path, &checks)?;
    }
    Ok(if passed == checks.len() { exit::OK } else { exit::INTERNAL })
}
