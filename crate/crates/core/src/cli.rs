//! Command-line front end: `solve`, `verify` and `rates`.
//!
//! Exit codes of `solve`: 0 when the run stops on the tolerance or with
//! `ε = 0`, 2 when it hits the iteration cap, 1 on any error. `verify`
//! exits 0 iff every check passes. `rates` exits 1 when the entry has no
//! reference pair.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::diagnostics::{rate_fit, rows_csv, two_step_ratio, RateFit};
use crate::error::{Error, Result};
use crate::inner::StepRule;
use crate::outer::{Mode, SolveReport, Solver, SolverParams, Termination};
use crate::problems::{default_params, entry, imaging_start, reseed_id, CorpusEntry, Tag};
use crate::textio::{csv_table, format_reference, parse_reference, write_pgm, Graymap};
use crate::verify::{run_suite, SUITES};

/// Environment variable naming the directory that caches reference pairs.
pub const CORPUS_DIR_ENV: &str = "IADMM_CORPUS_DIR";

/// Outer iterations of a `rates` run in convex mode unless overridden.
pub const RATES_HORIZON: usize = 2000;

#[derive(Debug, Parser)]
#[command(name = "iadmm", version, about = "Inexact accelerated ADMM with back substitution")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve a corpus problem and write the iteration history as CSV.
    Solve(RunArgs),
    /// Run a property suite and write one CSV row per check.
    Verify {
        /// One of inner, decay, ergodic, strong, linear, operators.
        suite: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit convergence rates of a run against the entry's reference pair.
    Rates(RunArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModeArg {
    Convex,
    Strong,
    Exact,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Convex => Mode::Convex,
            ModeArg::Strong => Mode::Strong,
            ModeArg::Exact => Mode::Exact,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RuleArg {
    Constant,
    Adaptive,
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    /// Corpus id such as `qp-7-m3`, `lasso-0` or `img-0-s32`.
    #[arg(long)]
    pub problem: Option<String>,
    /// Replay a saved manifest; flags given alongside override it.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Write the resolved manifest here before running.
    #[arg(long)]
    pub save_manifest: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    #[arg(long, value_enum)]
    pub rule: Option<RuleArg>,
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long)]
    pub max_outer: Option<usize>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long)]
    pub rho: Option<f64>,
    /// Replaces the seed in the corpus id.
    #[arg(long)]
    pub seed: Option<u64>,
    /// CSV output path; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Start at the reference pair instead of the origin.
    #[arg(long)]
    pub start_at_reference: bool,
    /// Imaging entries: write the restored image as a graymap.
    #[arg(long)]
    pub image: Option<PathBuf>,
}

/// Everything that determines a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub problem: String,
    pub seed: u64,
    pub params: SolverParams,
    pub start_at_reference: bool,
    pub out: Option<PathBuf>,
    pub image: Option<PathBuf>,
}

impl RunManifest {
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))
    }
}

/// Merges a saved manifest (if any) with the flags.
pub fn resolve_manifest(command: &str, a: &RunArgs) -> Result<(RunManifest, CorpusEntry)> {
    let base = match &a.manifest {
        Some(p) => Some(RunManifest::from_json(&std::fs::read_to_string(p)?)?),
        None => None,
    };
    let mut problem = match (&a.problem, &base) {
        (Some(p), _) => p.clone(),
        (None, Some(m)) => m.problem.clone(),
        (None, None) => return Err(Error::InvalidConfig("--problem or --manifest is required".into())),
    };
    if let Some(s) = a.seed {
        problem = reseed_id(&problem, s)?;
    }
    let e = load_entry(&problem)?;
    let mut params = match &base {
        Some(m) if a.problem.is_none() || a.problem.as_deref() == Some(m.problem.as_str()) => m.params.clone(),
        _ => default_params(&e),
    };
    if let Some(m) = a.mode {
        params.mode = m.into();
    }
    if let Some(r) = a.rule {
        params.inner.rule = match r {
            RuleArg::Constant => StepRule::Constant,
            RuleArg::Adaptive => StepRule::Adaptive,
        };
    }
    if let Some(t) = a.tol {
        params.tol = t;
    }
    if let Some(k) = a.max_outer {
        params.max_outer = k;
    }
    if let Some(v) = a.alpha {
        params.alpha = v;
    }
    if let Some(v) = a.sigma {
        params.inner.sigma = v;
    }
    if let Some(v) = a.rho {
        params.rho = v;
    }
    params.validate()?;
    let m = RunManifest {
        command: command.into(),
        problem: e.id.clone(),
        seed: e.seed,
        params,
        start_at_reference: a.start_at_reference || base.as_ref().is_some_and(|m| m.start_at_reference),
        out: a.out.clone().or_else(|| base.as_ref().and_then(|m| m.out.clone())),
        image: a.image.clone().or_else(|| base.as_ref().and_then(|m| m.image.clone())),
    };
    if let Some(p) = &a.save_manifest {
        std::fs::write(p, m.to_json()?)?;
    }
    Ok((m, e))
}

/// Generates a corpus entry. With `IADMM_CORPUS_DIR` set, the reference
/// pair is read from `<dir>/<id>.ref` (and re-gated) or written there.
pub fn load_entry(id: &str) -> Result<CorpusEntry> {
    let mut e = entry(id)?;
    let Some(dir) = std::env::var_os(CORPUS_DIR_ENV) else {
        return Ok(e);
    };
    let path = Path::new(&dir).join(format!("{id}.ref"));
    if path.exists() {
        let text = std::fs::read_to_string(&path)?;
        e.reference = Some(parse_reference(&e.problem, &text, &path.display().to_string())?);
    } else if let Some(r) = &e.reference {
        std::fs::create_dir_all(&dir)?;
        std::fs::write(&path, format_reference(r))?;
    }
    Ok(e)
}

/// Runs the manifest against its entry.
pub fn run_manifest(m: &RunManifest, e: &CorpusEntry) -> Result<SolveReport> {
    let mut s = Solver::new(&e.problem, m.params.clone());
    if let Some(r) = &e.reference {
        s = s.with_reference(r);
        if m.start_at_reference {
            s = s.with_start(r.x_star.clone(), r.lambda_star.clone());
        }
    } else if m.start_at_reference {
        return Err(Error::Unavailable(format!("{} has no reference pair", e.id)));
    }
    if let Some(d) = &e.imaging {
        if !m.start_at_reference {
            if let Some(x0) = imaging_start(e) {
                s = s.with_start(x0, DVector::zeros(e.problem.rows()));
            }
        }
        s = s.with_ergodic_functional(move |z| d.objective(z.block(0)));
    }
    s.run()
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => Ok(std::fs::write(p, text)?),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

pub fn cmd_solve(a: &RunArgs) -> Result<i32> {
    let (m, e) = resolve_manifest("solve", a)?;
    let rep = run_manifest(&m, &e)?;
    emit(m.out.as_deref(), &rep.history_csv()?)?;
    if let (Some(path), Some(d)) = (&m.image, &e.imaging) {
        write_pgm(path, &Graymap::square(d.side, &rep.state.z.block(0).clone())?)?;
    }
    let last = rep.history.last();
    eprintln!(
        "{}: {} after {} iterations, eps={:e}, kkt={}, {:.3}s",
        e.id,
        rep.cause.label(),
        rep.iterations(),
        last.map_or(f64::NAN, |h| h.eps),
        last.and_then(|h| h.reference.as_ref())
            .map_or_else(|| "n/a".to_string(), |r| format!("{:e}", r.kkt)),
        rep.elapsed.as_secs_f64()
    );
    Ok(match rep.cause {
        Termination::Tolerance | Termination::ExactZero => 0,
        Termination::MaxIterations => 2,
        Termination::NumericError(msg) => {
            eprintln!("numeric error: {msg}");
            1
        }
    })
}

pub fn cmd_verify(suite: &str, out: Option<&Path>) -> Result<i32> {
    if !SUITES.contains(&suite) {
        eprintln!("unknown suite `{suite}`; expected one of {}", SUITES.join(", "));
        return Ok(1);
    }
    let rows = run_suite(suite)?;
    emit(out, &rows_csv(&rows)?)?;
    let failed = rows.iter().filter(|r| !r.pass).count();
    eprintln!("{suite}: {} checks, {failed} failed", rows.len());
    Ok(if failed == 0 { 0 } else { 1 })
}

/// A named fit (or ratio summary) produced by `rates`.
#[derive(Debug, Clone, PartialEq)]
pub struct RateRow {
    pub series: String,
    pub fit: Option<RateFit>,
    /// Tail maximum of the two-step ratio series.
    pub tail_max: Option<f64>,
}

/// Fits the decay of the gap series (and `‖y^t − x*‖²` in strong mode);
/// adds the two-step energy ratio for polyhedral entries.
pub fn rate_rows(e: &CorpusEntry, rep: &SolveReport, strong: bool) -> Result<Vec<RateRow>> {
    let refs: Vec<(f64, &crate::outer::RefDiag)> = rep
        .history
        .iter()
        .filter_map(|h| h.reference.as_ref().map(|d| (h.k as f64, d)))
        .collect();
    let mut rows = Vec::new();
    if strong {
        let gap: Vec<(f64, f64)> = refs.iter().filter_map(|(t, d)| d.weighted_gap.map(|g| (*t, g))).collect();
        let y2: Vec<(f64, f64)> = refs.iter().filter_map(|(t, d)| d.y_next_dist_sq.map(|g| (*t, g))).collect();
        for (name, s) in [("weighted-gap", gap), ("y-distance", y2)] {
            let top = s.first().map_or(0.0, |p| p.1);
            let s: Vec<(f64, f64)> = s.into_iter().take_while(|p| p.1 > 1e-12 * top).collect();
            let hi = s.last().map_or(0.0, |p| p.0);
            rows.push(RateRow {
                series: name.into(),
                fit: Some(rate_fit(&s, (10.0, hi))?),
                tail_max: None,
            });
        }
    } else {
        let gap: Vec<(f64, f64)> = refs.iter().map(|(t, d)| (*t, d.ergodic_gap)).collect();
        let hi = gap.last().map_or(0.0, |p| p.0).min(RATES_HORIZON as f64);
        rows.push(RateRow {
            series: "ergodic-gap".into(),
            fit: Some(rate_fit(&gap, (50.0, hi))?),
            tail_max: None,
        });
    }
    if e.has_tag(Tag::Polyhedral) {
        let energy: Vec<f64> = refs.iter().map(|(_, d)| d.energy).collect();
        rows.push(RateRow {
            series: "two-step-ratio".into(),
            fit: None,
            tail_max: Some(two_step_ratio(&energy, 50).tail_max),
        });
    }
    Ok(rows)
}

pub fn rates_csv(rows: &[RateRow]) -> Result<String> {
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            let f = |g: fn(&RateFit) -> String| r.fit.as_ref().map_or(String::new(), g);
            vec![
                r.series.clone(),
                f(|x| x.slope.to_string()),
                f(|x| x.intercept.to_string()),
                f(|x| x.window.0.to_string()),
                f(|x| x.window.1.to_string()),
                f(|x| x.points.to_string()),
                f(|x| x.residual.to_string()),
                r.tail_max.map_or(String::new(), |v| v.to_string()),
            ]
        })
        .collect();
    csv_table(
        &["series", "slope", "intercept", "t_min", "t_max", "points", "residual", "tail_max"],
        &body,
    )
}

pub fn cmd_rates(a: &RunArgs) -> Result<i32> {
    let (mut m, e) = resolve_manifest("rates", a)?;
    if e.reference.is_none() {
        eprintln!("{} has no certified reference pair", e.id);
        return Ok(1);
    }
    let strong = m.params.mode == Mode::Strong;
    if !strong && e.imaging.is_none() && !e.has_tag(Tag::Polyhedral) {
        // Rates are read off a fixed horizon, not a tolerance.
        if a.tol.is_none() {
            m.params.tol = 0.0;
            m.params.zero_eps = 0.0;
        }
        if a.max_outer.is_none() {
            m.params.max_outer = RATES_HORIZON;
        }
    }
    let rep = run_manifest(&m, &e)?;
    let rows = rate_rows(&e, &rep, strong)?;
    emit(m.out.as_deref(), &rates_csv(&rows)?)?;
    for r in &rows {
        match (&r.fit, r.tail_max) {
            (Some(f), _) => eprintln!("{}: slope {:.3} over [{}, {}]", r.series, f.slope, f.window.0, f.window.1),
            (None, Some(t)) => eprintln!("{}: tail max {t:.3}", r.series),
            _ => {}
        }
    }
    Ok(0)
}

/// Parses `args` and runs the command; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let res = match &cli.command {
        Command::Solve(a) => cmd_solve(a),
        Command::Verify { suite, out } => cmd_verify(suite, out.as_deref()),
        Command::Rates(a) => cmd_rates(a),
    };
    res.unwrap_or_else(|e| {
        eprintln!("error: {e}");
        1
    })
}
