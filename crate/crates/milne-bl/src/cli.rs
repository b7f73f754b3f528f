//! Batch front-end: `milne-bl <command> <config> [--threads N] [--output-dir PATH]`.
//!
//! Each command is a pure function from a [`RunConfig`] to an [`Outcome`]
//! (a JSON summary plus named artifacts); [`run`] persists the outcome and
//! maps errors to exit codes. Summaries hold no timings or paths, so equal
//! configs give byte-identical summaries.

use std::path::{Path, PathBuf};

use clap::Parser;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::{json, Value};

use crate::characteristics::CharContext;
use crate::config::{Command, Fault, Format, MilneSection, RunConfig};
use crate::diagnostics::{self, DecayFit, DerivativeNorms};
use crate::diffusive_limit::convergence_study;
use crate::error::{Error, Result};
use crate::geometry::{CurvatureProfile, MilneConfig};
use crate::io::{write_atomic, write_json};
use crate::milne_solver::{
    solve_diffusive, solve_diffusive_shifted, solve_inflow, solve_psi_derivative, solve_tangential, BoundaryKind,
    MilneProblem, MilneSolution,
};
use crate::phase_grid::{norms, Field, GridSpec, PhaseGrid, FOUR_PI, SIN_SQ_NORM};
use crate::presets::DatumPreset;
use crate::report::{stamped, table_csv, Plot, VERSION};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_INCOMPATIBLE: i32 = 2;
pub const EXIT_NONCONVERGENCE: i32 = 3;

pub const THREADS_ENV: &str = "MILNE_BL_THREADS";

#[derive(Debug, Parser)]
#[command(name = "milne-bl", version, about = "Milne boundary-layer solver and diffusive-limit studies")]
pub struct Args {
    /// milne-solve | decay-fit | regularity-probe | tangent-check | limit-study | selftest
    pub command: String,
    /// TOML run configuration.
    pub config: PathBuf,
    /// Worker cap; falls back to MILNE_BL_THREADS.
    #[arg(long)]
    pub threads: Option<usize>,
    /// Overrides `output_dir` from the config.
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
}

/// A file to write under the output directory.
#[derive(Debug, Clone)]
pub struct Artifact {
    pub name: String,
    pub bytes: Vec<u8>,
}

#[derive(Debug, Clone)]
pub struct Outcome {
    pub summary: Value,
    pub artifacts: Vec<Artifact>,
    /// False only for a self-test with a failed check.
    pub passed: bool,
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Incompatible { .. } => EXIT_INCOMPATIBLE,
        Error::NonConvergence { .. } => EXIT_NONCONVERGENCE,
        _ => EXIT_FAILURE,
    }
}

/// Parses arguments, runs one command, writes artifacts; returns the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let args = match Args::try_parse_from(args) {
        Ok(a) => a,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_FAILURE } else { EXIT_OK };
        }
    };
    if let Some(n) = threads_from(args.threads, std::env::var(THREADS_ENV).ok()) {
        // A second initialization in the same process keeps the first pool.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let command: Command = match args.command.parse() {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_FAILURE;
        }
    };
    let cfg = match RunConfig::from_file(&args.config) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {}: {e}", args.config.display());
            return EXIT_FAILURE;
        }
    };
    if cfg.command != command {
        eprintln!("error: command '{command}' does not match config command '{}'", cfg.command);
        return EXIT_FAILURE;
    }
    let dir = args.output_dir.unwrap_or_else(|| cfg.output_dir.clone());
    let code = run(&cfg, &dir);
    if code == EXIT_OK {
        println!("{command}: ok ({})", dir.display());
    }
    code
}

/// `--threads` wins over the environment; zero or unparsable values are ignored.
pub fn threads_from(flag: Option<usize>, env: Option<String>) -> Option<usize> {
    flag.or_else(|| env.and_then(|v| v.trim().parse().ok())).filter(|&n| n > 0)
}

/// Executes and persists; the summary is written even when the command fails.
pub fn run(cfg: &RunConfig, dir: &Path) -> i32 {
    let hash = cfg.hash();
    match execute(cfg) {
        Ok(out) => {
            for a in &out.artifacts {
                if let Err(e) = write_atomic(dir, &a.name, &a.bytes) {
                    eprintln!("error: {e}");
                    return EXIT_FAILURE;
                }
            }
            if let Err(e) = write_json(dir, "summary.json", &out.summary) {
                eprintln!("error: {e}");
                return EXIT_FAILURE;
            }
            if out.passed {
                EXIT_OK
            } else {
                eprintln!("error: {} reported failed checks", cfg.command);
                EXIT_FAILURE
            }
        }
        Err(e) => {
            let code = exit_code(&e);
            eprintln!("error: {e}");
            let mut summary = header(cfg, &hash, "error");
            summary["error"] = json!(e.to_string());
            summary["exit_code"] = json!(code);
            if let Error::NonConvergence { residual_history, .. } = &e {
                summary["residual_history"] = json!(residual_history);
            }
            if let Err(w) = write_json(dir, "summary.json", &summary) {
                eprintln!("error: {w}");
            }
            code
        }
    }
}

fn header(cfg: &RunConfig, hash: &str, status: &str) -> Value {
    json!({
        "command": cfg.command.name(),
        "config_hash": hash,
        "version": VERSION,
        "status": status,
    })
}

/// Runs the configured command without touching the disk.
pub fn execute(cfg: &RunConfig) -> Result<Outcome> {
    let hash = cfg.hash();
    let mut out = match cfg.command {
        Command::MilneSolve => milne_solve(cfg, &hash)?,
        Command::DecayFit => decay_study(cfg, &hash)?,
        Command::RegularityProbe => regularity_probe(cfg, &hash)?,
        Command::TangentCheck => tangent_check(cfg, &hash)?,
        Command::LimitStudy => limit_study(cfg, &hash)?,
        Command::Selftest => {
            let fault = cfg.selftest.as_ref().and_then(|s| s.fault);
            let report = selftest(fault);
            let passed = report.passed;
            let mut o = Outcome { summary: json!({}), artifacts: Vec::new(), passed };
            o.summary["selftest"] = serde_json::to_value(&report).expect("report serializes");
            o
        }
    };
    let mut summary = header(cfg, &hash, if out.passed { "ok" } else { "failed" });
    if let (Some(dst), Value::Object(src)) = (summary.as_object_mut(), std::mem::take(&mut out.summary)) {
        dst.extend(src);
    }
    out.summary = summary;
    out.artifacts.retain(|a| {
        let ext = a.name.rsplit('.').next().unwrap_or("");
        match ext {
            "csv" => cfg.wants(Format::Csv),
            "svg" => cfg.wants(Format::Svg),
            "json" => cfg.wants(Format::Json),
            _ => true,
        }
    });
    Ok(out)
}

fn solve(problem: &MilneProblem) -> Result<MilneSolution> {
    match problem.boundary {
        BoundaryKind::Inflow => solve_inflow(problem),
        BoundaryKind::Diffusive => solve_diffusive(problem),
    }
}

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("summary types serialize")
}

/// Scalars of one solution that every summary reports.
#[derive(Debug, Clone, Serialize)]
pub struct SolveSummary {
    pub f_l: f64,
    pub f_l_tail: f64,
    pub f_l_discrepancy: f64,
    pub iterations: usize,
    pub residuals: Vec<f64>,
    pub equation_residual: f64,
    pub boundary_shift: f64,
    pub l2_total: f64,
    pub linf_total: f64,
    pub linf_deviation: f64,
    pub alpha_at_l: f64,
    pub max_abs_flux: f64,
    pub energy_identity_residual: f64,
    pub decay: DecayFit,
    pub lnnorm_context: f64,
}

pub fn solve_summary(sol: &MilneSolution) -> SolveSummary {
    let n = norms(&sol.f);
    let g = sol.grid();
    let last = g.n_eta() - 1;
    let max_abs_flux = (0..g.n_eta()).map(|i| diagnostics::flux(sol, i).abs()).fold(0.0, f64::max);
    SolveSummary {
        f_l: sol.f_l,
        f_l_tail: sol.f_l_tail,
        f_l_discrepancy: sol.f_l_discrepancy(),
        iterations: sol.iterations,
        residuals: sol.residual_history.clone(),
        equation_residual: sol.equation_residual,
        boundary_shift: sol.boundary_shift,
        l2_total: n.l2_total,
        linf_total: n.linf_total,
        linf_deviation: norms(&sol.deviation()).linf_total,
        alpha_at_l: diagnostics::alpha(sol, last),
        max_abs_flux,
        energy_identity_residual: diagnostics::energy_identity_residual(sol),
        decay: diagnostics::decay_fit(sol, sol.problem.cfg.decay_rate_k0),
        lnnorm_context: diagnostics::lnnorm_context(sol.problem.cfg.epsilon),
    }
}

fn milne_solve(cfg: &RunConfig, hash: &str) -> Result<Outcome> {
    let problem = cfg.milne()?.problem()?;
    let sol = solve(&problem)?;
    let summary = json!({ "solution": to_value(&solve_summary(&sol)) });

    let table = diagnostics::depth_table(&sol);
    let rows: Vec<Vec<f64>> = (0..table.eta.len())
        .map(|i| vec![table.eta[i], table.alpha[i], table.beta[i], table.qo_residual[i], table.linf_dev[i]])
        .collect();
    let mut artifacts = vec![
        Artifact { name: "field.csv".into(), bytes: stamped(hash, sol.f.to_csv()?) },
        Artifact { name: "field.json".into(), bytes: pretty(&sol.f.metadata_json(hash)) },
        Artifact {
            name: "depth.csv".into(),
            bytes: table_csv(hash, &["eta", "alpha", "beta", "qo_residual", "linf_dev"], &rows)?,
        },
    ];
    let pts = table.eta.iter().copied().zip(table.linf_dev.iter().copied()).collect();
    let plot = Plot::new("Deviation from the far-field limit", "eta", "||f - f_L||_inf").log_y().with_series("f - f_L", pts);
    artifacts.push(Artifact { name: "decay.svg".into(), bytes: plot.to_svg(hash).into_bytes() });
    Ok(Outcome { summary, artifacts, passed: true })
}

fn pretty(v: &Value) -> Vec<u8> {
    let mut b = serde_json::to_vec_pretty(v).expect("json serializes");
    b.push(b'\n');
    b
}

/// One row of the epsilon sweep.
#[derive(Debug, Clone, Serialize)]
pub struct DecayRow {
    pub epsilon: f64,
    pub slab_length: f64,
    pub f_l: f64,
    pub iterations: usize,
    pub fit: DecayFit,
}

#[derive(Debug, Clone, Serialize)]
pub struct DecayStudy {
    pub k0: f64,
    pub rows: Vec<DecayRow>,
    /// `max |s / mean(s) - 1|` over the weighted sups.
    pub sup_weighted_spread: f64,
    /// Every fit has a positive rate.
    pub all_positive: bool,
    pub min_r_squared: f64,
}

/// Decay fit of the configured problem at each `eps` of `decay.eps_list`.
pub fn decay_sweep(base: &MilneSection, eps_list: &[f64], k0: f64) -> Result<(DecayStudy, Vec<MilneSolution>)> {
    let mut rows = Vec::with_capacity(eps_list.len());
    let mut sols = Vec::with_capacity(eps_list.len());
    for &eps in eps_list {
        let section = MilneSection { epsilon: eps, ..base.clone() };
        let problem = section.problem()?;
        let sol = solve(&problem)?;
        let fit = diagnostics::decay_fit(&sol, k0);
        rows.push(DecayRow {
            epsilon: eps,
            slab_length: problem.cfg.slab_length,
            f_l: sol.f_l,
            iterations: sol.iterations,
            fit,
        });
        sols.push(sol);
    }
    let sups: Vec<f64> = rows.iter().map(|r| r.fit.sup_weighted).collect();
    let mean = sups.iter().sum::<f64>() / sups.len() as f64;
    let sup_weighted_spread = sups.iter().map(|s| (s / mean - 1.0).abs()).fold(0.0, f64::max);
    let study = DecayStudy {
        k0,
        all_positive: rows.iter().all(|r| r.fit.k0_fitted > 0.0),
        min_r_squared: rows.iter().map(|r| r.fit.r_squared).fold(f64::INFINITY, f64::min),
        sup_weighted_spread,
        rows,
    };
    Ok((study, sols))
}

fn decay_study(cfg: &RunConfig, hash: &str) -> Result<Outcome> {
    let d = cfg.decay.clone().unwrap_or_default();
    let (study, sols) = decay_sweep(cfg.milne()?, &d.eps_list, d.k0)?;
    let rows: Vec<Vec<f64>> = study
        .rows
        .iter()
        .map(|r| vec![r.epsilon, r.slab_length, r.fit.k0_fitted, r.fit.r_squared, r.fit.sup_weighted])
        .collect();
    let mut plot = Plot::new("Decay of f - f_L", "eta", "||f - f_L||_inf").log_y();
    for (r, sol) in study.rows.iter().zip(&sols) {
        let dev = norms(&sol.deviation()).linf_at;
        let pts = sol.grid().eta.iter().copied().zip(dev).collect();
        plot = plot.with_series(&format!("eps = {}", r.epsilon), pts);
    }
    Ok(Outcome {
        summary: json!({ "decay": to_value(&study) }),
        artifacts: vec![
            Artifact {
                name: "decay.csv".into(),
                bytes: table_csv(hash, &["epsilon", "slab_length", "k0_fitted", "r_squared", "sup_weighted"], &rows)?,
            },
            Artifact { name: "decay.svg".into(), bytes: plot.to_svg(hash).into_bytes() },
        ],
        passed: true,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct RegularityRow {
    pub refinement: usize,
    pub n_phi: usize,
    /// `sup e^{K0 eta} zeta |d_phi f|` of the corrected solver.
    pub corrected_sup_zeta_dphi: f64,
    /// Unweighted grazing-band `sup |d_phi f|` of the classical solver.
    pub classical_sup_dphi: f64,
    pub corrected: DerivativeNorms,
    pub classical: DerivativeNorms,
}

#[derive(Debug, Clone, Serialize)]
pub struct RegularityStudy {
    pub rows: Vec<RegularityRow>,
    /// Consecutive ratios of the corrected weighted sup.
    pub corrected_ratios: Vec<f64>,
    /// Consecutive ratios of the classical grazing sup.
    pub classical_ratios: Vec<f64>,
}

/// Corrected (configured profile) and classical (flat) solves of the same
/// data at `n_phi` multiplied by each refinement factor.
pub fn regularity_sweep(base: &MilneSection, refinements: &[usize], k0: f64) -> Result<RegularityStudy> {
    let mut rows = Vec::with_capacity(refinements.len());
    for &r in refinements {
        let grid = GridSpec { n_phi: base.grid.n_phi * r, ..base.grid };
        let corrected = MilneSection { grid, ..base.clone() };
        let classical = MilneSection { grid, profile: CurvatureProfile::Flat, ..base.clone() };
        let sc = solve(&corrected.problem()?)?;
        let sf = solve(&classical.problem()?)?;
        let nc = diagnostics::weighted_derivative_norms(&sc, k0, None);
        let nf = diagnostics::weighted_derivative_norms(&sf, k0, None);
        rows.push(RegularityRow {
            refinement: r,
            n_phi: grid.n_phi,
            corrected_sup_zeta_dphi: nc.sup_zeta_dphi,
            classical_sup_dphi: nf.sup_dphi_grazing,
            corrected: nc,
            classical: nf,
        });
    }
    let ratios = |f: fn(&RegularityRow) -> f64| rows.windows(2).map(|p| f(&p[1]) / f(&p[0])).collect::<Vec<_>>();
    let corrected_ratios = ratios(|r| r.corrected_sup_zeta_dphi);
    let classical_ratios = ratios(|r| r.classical_sup_dphi);
    Ok(RegularityStudy { rows, corrected_ratios, classical_ratios })
}

fn regularity_probe(cfg: &RunConfig, hash: &str) -> Result<Outcome> {
    let r = cfg.regularity.clone().unwrap_or_default();
    let study = regularity_sweep(cfg.milne()?, &r.refinements, r.k0)?;
    let rows: Vec<Vec<f64>> = study
        .rows
        .iter()
        .map(|r| vec![r.refinement as f64, r.n_phi as f64, r.corrected_sup_zeta_dphi, r.classical_sup_dphi])
        .collect();
    let plot = Plot::new("Polar derivative under refinement", "n_phi", "sup")
        .log_log()
        .with_series("corrected, zeta-weighted", study.rows.iter().map(|r| (r.n_phi as f64, r.corrected_sup_zeta_dphi)).collect())
        .with_series("classical, grazing band", study.rows.iter().map(|r| (r.n_phi as f64, r.classical_sup_dphi)).collect());
    Ok(Outcome {
        summary: json!({ "regularity": to_value(&study) }),
        artifacts: vec![
            Artifact {
                name: "regularity.csv".into(),
                bytes: table_csv(hash, &["refinement", "n_phi", "corrected_sup_zeta_dphi", "classical_sup_dphi"], &rows)?,
            },
            Artifact { name: "regularity.svg".into(), bytes: plot.to_svg(hash).into_bytes() },
        ],
        passed: true,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct DerivativeCheck {
    pub name: String,
    /// `||w - fd||_2 / ||fd||_2`.
    pub rel_l2: f64,
    pub fd_l2: f64,
    /// Far-field limit of the derivative solution. For `tau_i` this is the
    /// limit under the datum `-d f_L / d tau_i` with `f_L` differenced from
    /// the perturbed solves; for `psi`, `beta(L) / ||sin phi||^2`.
    pub limit: f64,
    /// Mean over the last tenth of the slab.
    pub limit_tail: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct TangentStudy {
    pub fd_step: f64,
    pub checks: Vec<DerivativeCheck>,
}

fn rel_l2(w: &Field, fd: &Field) -> Result<(f64, f64)> {
    let diff = w.zip_with(fd, |a, b| a - b)?;
    let d = norms(&diff).l2_total;
    let n = norms(fd).l2_total;
    Ok((d / n, n))
}

/// `solve_tangential` (both `tau_i`) and `solve_psi_derivative` against
/// central differences of perturbed solves of `v = f - f_L`.
pub fn tangent_sweep(base: &MilneSection, step: f64) -> Result<TangentStudy> {
    if base.boundary != BoundaryKind::Inflow {
        return Err(Error::UnsupportedFamily("tangent checks use the in-flow problem".into()));
    }
    let problem = base.problem()?;
    let sol = solve_inflow(&problem)?;
    let mut checks = Vec::with_capacity(3);
    for i in 0..2 {
        let w = solve_tangential(&problem, &sol, i)?;
        let mut dev = Vec::with_capacity(2);
        let mut f_l = Vec::with_capacity(2);
        for sgn in [1.0, -1.0] {
            let mut tau = base.tau;
            tau[i] += sgn * step;
            let p = MilneSection { tau, ..base.clone() }.problem()?;
            let s = solve_inflow(&p)?;
            f_l.push(s.f_l);
            dev.push(s.deviation());
        }
        let fd = dev[0].zip_with(&dev[1], |a, b| (a - b) / (2.0 * step))?;
        let (r, n) = rel_l2(&w.f, &fd)?;
        // The zero-datum solve had limit -boundary_shift; the datum -d f_L / d tau adds that constant.
        let d_fl = (f_l[0] - f_l[1]) / (2.0 * step);
        let limit = -w.boundary_shift - d_fl;
        checks.push(DerivativeCheck {
            name: format!("tau{}", i + 1),
            rel_l2: r,
            fd_l2: n,
            limit,
            limit_tail: w.f_l_tail + limit,
        });
    }
    let wp = solve_psi_derivative(&problem, &sol)?;
    let mut shifted = Vec::with_capacity(2);
    for sgn in [1.0, -1.0] {
        let grid = GridSpec { psi_offset: base.grid.psi_offset + sgn * step, ..base.grid };
        let p = MilneSection { grid, ..base.clone() }.problem()?;
        shifted.push(solve_inflow(&p)?);
    }
    // Shifted grids differ only in psi nodes; compare values index by index.
    let values: Vec<f64> =
        shifted[0].f.values.iter().zip(&shifted[1].f.values).map(|(a, b)| (a - b) / (2.0 * step)).collect();
    let fd = Field { grid: wp.f.grid.clone(), values };
    let (r, n) = rel_l2(&wp.f, &fd)?;
    checks.push(DerivativeCheck { name: "psi".into(), rel_l2: r, fd_l2: n, limit: wp.f_l, limit_tail: wp.f_l_tail });
    Ok(TangentStudy { fd_step: step, checks })
}

fn tangent_check(cfg: &RunConfig, hash: &str) -> Result<Outcome> {
    let t = cfg.tangent.clone().unwrap_or_default();
    let study = tangent_sweep(cfg.milne()?, t.fd_step)?;
    let rows: Vec<Vec<f64>> =
        study.checks.iter().enumerate().map(|(k, c)| vec![k as f64, c.rel_l2, c.fd_l2, c.limit, c.limit_tail]).collect();
    Ok(Outcome {
        summary: json!({ "tangent": to_value(&study) }),
        artifacts: vec![Artifact {
            name: "tangent.csv".into(),
            bytes: table_csv(hash, &["check", "rel_l2", "fd_l2", "limit", "limit_tail"], &rows)?,
        }],
        passed: true,
    })
}

fn limit_study(cfg: &RunConfig, hash: &str) -> Result<Outcome> {
    let l = cfg.limit()?;
    let table = convergence_study(&l.eps_list, &l.template()?)?;
    let mut artifacts = Vec::new();
    for row in &table.rows {
        let rows: Vec<Vec<f64>> = row
            .result
            .tallies
            .iter()
            .enumerate()
            .map(|(k, t)| vec![k as f64, t.x[0], t.x[1], t.x[2], t.estimate, t.se, t.u0, (t.estimate - t.u0).abs()])
            .collect();
        artifacts.push(Artifact {
            name: format!("limit_eps_{}.csv", row.epsilon),
            bytes: table_csv(hash, &["tally", "x1", "x2", "x3", "estimate", "se", "u0", "abs_diff"], &rows)?,
        });
    }
    let plot = Plot::new("Distance to the interior limit", "eps", "max |u - U0|")
        .log_log()
        .with_series("max error", table.rows.iter().map(|r| (r.epsilon, r.max_error)).collect());
    artifacts.push(Artifact { name: "limit.svg".into(), bytes: plot.to_svg(hash).into_bytes() });
    Ok(Outcome { summary: json!({ "limit": to_value(&table) }), artifacts, passed: true })
}

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub value: f64,
    pub tolerance: f64,
    /// Error that prevented the measurement.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl Check {
    fn new(name: &str, value: f64, tolerance: f64) -> Self {
        Check { name: name.into(), passed: value.is_finite() && value <= tolerance, value, tolerance, error: None }
    }

    fn from_result(name: &str, r: Result<f64>, tolerance: f64) -> Self {
        match r {
            Ok(v) => Check::new(name, v, tolerance),
            Err(e) => Check { name: name.into(), passed: false, value: f64::NAN, tolerance, error: Some(e.to_string()) },
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SelftestReport {
    pub checks: Vec<Check>,
    pub passed: bool,
    pub fault: Option<Fault>,
}

impl SelftestReport {
    pub fn failed(&self) -> Vec<&str> {
        self.checks.iter().filter(|c| !c.passed).map(|c| c.name.as_str()).collect()
    }
}

fn small_section(datum: DatumPreset) -> MilneSection {
    MilneSection {
        epsilon: 0.1,
        n_exponent: 0.25,
        allow_n_override: false,
        fixed_point_tol: 1e-12,
        max_iterations: 5000,
        decay_rate_k0: 0.1,
        boundary: BoundaryKind::Inflow,
        tau: [0.0; 2],
        profile: CurvatureProfile::Constant { r1: 1.0, r2: 1.0 },
        datum,
        source: crate::presets::SourcePreset::Zero,
        grid: GridSpec { n_eta: 48, n_phi: 16, n_psi: 8, ..GridSpec::default() },
    }
}

/// Quadrature sanity, characteristic invariants, constant solution and reduction lemma.
pub fn selftest(fault: Option<Fault>) -> SelftestReport {
    let mut checks = Vec::new();

    let quad = (|| -> Result<(f64, f64)> {
        let mut g = PhaseGrid::new(&GridSpec::default(), 1.0)?;
        if fault == Some(Fault::CorruptWeights) {
            g.w_phi[0] *= 1.01;
        }
        Ok(((g.angular_measure() - FOUR_PI).abs(), (g.sin_sq_moment() - SIN_SQ_NORM).abs()))
    })();
    checks.push(Check::from_result("quadrature_measure", quad.clone().map(|q| q.0), 1e-10));
    checks.push(Check::from_result("quadrature_sin_sq", quad.map(|q| q.1), 1e-8));

    let drift = characteristic_drift(1000, 7);
    checks.push(Check::from_result("energy_invariance", drift.clone().map(|d| d.0), 1e-10));
    checks.push(Check::from_result("zeta_invariance", drift.map(|d| d.1), 1e-8));

    let constant = (|| -> Result<(f64, f64, f64)> {
        let s = small_section(DatumPreset::Constant { value: 3.7 });
        let p = s.problem()?;
        let a = solve_inflow(&p)?;
        let (b, _) = solve_diffusive_shifted(&p.clone().with_boundary(BoundaryKind::Diffusive))?;
        let dev = a.f.values.iter().chain(&b.f.values).fold(0.0f64, |m, v| m.max((v - 3.7).abs()));
        Ok((dev, (a.f_l - 3.7).abs(), (b.f_l - 3.7).abs()))
    })();
    checks.push(Check::from_result("constant_solution_sup", constant.clone().map(|c| c.0), 1e-9));
    checks.push(Check::from_result("constant_solution_limit", constant.map(|c| c.1.max(c.2)), 1e-8));

    let reduction = (|| -> Result<f64> {
        let s = small_section(DatumPreset::CosPhiSinPsi { amp: 1.0 });
        let p = s.problem()?;
        let a = solve_inflow(&p)?;
        let b = solve_diffusive(&p.clone().with_boundary(BoundaryKind::Diffusive))?;
        Ok(a.f.values.iter().zip(&b.f.values).fold(0.0f64, |m, (x, y)| m.max((x - y).abs())))
    })();
    checks.push(Check::from_result("reduction_lemma", reduction, 1e-9));

    let passed = checks.iter().all(|c| c.passed);
    SelftestReport { checks, passed, fault }
}

/// Largest energy and `zeta` drift over `n` random traces on the unit-sphere
/// geometry at `eps = 0.1`.
pub fn characteristic_drift(n: usize, seed: u64) -> Result<(f64, f64)> {
    let cfg = MilneConfig::new(0.1, 0.25)?;
    let prof = CurvatureProfile::Constant { r1: 1.0, r2: 1.0 };
    let ctx = CharContext::new(&cfg, &prof, [0.0; 2]);
    let l = cfg.slab_length;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut de, mut dz) = (0.0f64, 0.0f64);
    for _ in 0..n {
        let eta = rng.random::<f64>() * l;
        let psi = (rng.random::<f64>() * 2.0 - 1.0) * std::f64::consts::PI;
        let mag = rng.random::<f64>().max(1e-6) * std::f64::consts::FRAC_PI_2;
        let phi = if rng.random::<bool>() { mag } else { -mag };
        let pt = ctx.point(eta, phi, psi)?;
        let top = if pt.energy >= ctx.threshold(psi) { ctx.eta_plus(pt.energy, psi)? } else { l };
        let target = rng.random::<f64>() * top;
        let moved = ctx.trace(&pt, target - eta)?;
        de = de.max((ctx.energy(moved.eta, moved.phi, moved.psi) - pt.energy).abs());
        dz = dz.max((ctx.zeta(&moved) - ctx.zeta(&pt)).abs());
    }
    Ok((de, dz))
}
