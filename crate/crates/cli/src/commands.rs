//! Subcommand implementations. Each returns the process exit code; output
//! goes to the supplied writer.

use crate::report::{verify_certificate, CertificateReport, ReportStatus, SCHEMA_VERSION, TOOL_NAME, TOOL_VERSION};
use crate::system::{LoadedSystem, SystemData, SystemFile};
use anyhow::{bail, Context, Result};
use lvcert_core::certificates::{build_structured_family, check_theorem1, r_matrix, verify_invariant_set_structured, CheckOutcome};
use lvcert_core::lyapunov::{check_along_trajectory, choose_c, trajectory_sup, LyapunovContext, TrajectoryCheckOptions};
use lvcert_core::model::{denormalize_state, normalize_state, ModelError};
use lvcert_core::search::{auto_certify, AutoCertifyResult, SearchBudget};
use lvcert_core::sim::{analyze, ensemble_diagnostics, integrate, AnalyzeOptions, EnsembleOptions, IntegrateOptions, SimError};
use lvcert_core::{fixtures, CertificateFamily, InvariantSetArgument, Matrix, Theorem1Params, Vector};
use std::io::Write;
use std::path::Path;

pub const EXIT_OK: i32 = 0;
/// `certify`: no certificate within budget. `lyapunov-check`, `reproduce`: a check failed.
pub const EXIT_NEGATIVE: i32 = 1;
pub const EXIT_NOT_INTERIOR: i32 = 2;
pub const EXIT_SINGULAR: i32 = 3;
pub const EXIT_USAGE: i32 = 4;
pub const EXIT_SIMULATION: i32 = 5;

pub const EXAMPLE1_TOML: &str = include_str!("../fixtures/example1.toml");
pub const EXAMPLE2_TOML: &str = include_str!("../fixtures/example2.toml");
pub const STRUCTURED_TOML: &str = include_str!("../fixtures/structured.toml");

fn model_exit(e: &ModelError) -> i32 {
    match e {
        ModelError::NotInterior { .. } => EXIT_NOT_INTERIOR,
        ModelError::SingularMatrix { .. } | ModelError::Residual { .. } => EXIT_SINGULAR,
        _ => EXIT_USAGE,
    }
}

fn fmt_vec(v: &Vector) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x:?}")).collect();
    format!("({})", parts.join(", "))
}

fn matrix_rows(a: &Matrix) -> Vec<Vec<f64>> {
    a.row_iter().map(|r| r.iter().copied().collect()).collect()
}

pub fn cmd_equilibrium(sys: &LoadedSystem, out: &mut dyn Write) -> Result<i32> {
    match sys.equilibrium() {
        Ok(eq) => {
            writeln!(out, "y* = {}", fmt_vec(eq.y_star()))?;
            Ok(EXIT_OK)
        }
        Err(e) => {
            writeln!(out, "no interior equilibrium: {e}")?;
            Ok(model_exit(&e))
        }
    }
}

/// Runs the certification pipeline and always writes the report when the
/// system has an interior equilibrium.
pub fn cmd_certify(
    file: &SystemFile,
    budget: &SearchBudget,
    report_path: &Path,
    out: &mut dyn Write,
) -> Result<i32> {
    let (report, code) = match certify_report(file, budget)? {
        Ok(pair) => pair,
        Err(code) => {
            writeln!(out, "no interior equilibrium; nothing to certify")?;
            return Ok(code);
        }
    };
    report.write(report_path)?;
    match &report.certificate {
        Some(cert) => {
            writeln!(out, "certified: family {} (stage {})", cert.family, report.stage.map(|s| s.to_string()).unwrap_or_default())?;
            for (name, margin) in &cert.margins {
                writeln!(out, "margin {name}: {margin:e}")?;
            }
            for side in &cert.side_conditions {
                writeln!(out, "side condition: {side}")?;
            }
        }
        None => {
            writeln!(out, "inconclusive: no certificate found within budget (this is not a disproof)")?;
            for s in &report.stages {
                match s.best_objective {
                    Some(v) => writeln!(out, "  {}: best lambda_max {v:e}", s.stage)?,
                    None => writeln!(out, "  {}: {}", s.stage, s.note)?,
                }
            }
        }
    }
    writeln!(out, "report written to {}", report_path.display())?;
    Ok(code)
}

/// Builds the certificate report; `Err(exit code)` when the equilibrium fails.
pub fn certify_report(
    file: &SystemFile,
    budget: &SearchBudget,
) -> Result<std::result::Result<(CertificateReport, i32), i32>> {
    let sys = file.load()?;
    let (a, eq) = match sys.normalized() {
        Ok(pair) => pair,
        Err(e) => return Ok(Err(model_exit(&e))),
    };
    let result = auto_certify(&a, budget)?;
    let (status, stage, certificate, code) = match &result {
        AutoCertifyResult::Certified { stage, certificate, .. } => {
            (ReportStatus::Certified, Some(*stage), Some((**certificate).clone()), EXIT_OK)
        }
        AutoCertifyResult::Inconclusive { .. } => (ReportStatus::Inconclusive, None, None, EXIT_NEGATIVE),
    };
    let report = CertificateReport {
        schema_version: SCHEMA_VERSION,
        tool: TOOL_NAME.to_string(),
        tool_version: TOOL_VERSION.to_string(),
        seed: budget.seed,
        status,
        stage,
        equilibrium: eq.y_star().iter().copied().collect(),
        normalized_matrix: matrix_rows(&a),
        budget: *budget,
        input: file.clone(),
        certificate,
        stages: result.stages().to_vec(),
    };
    Ok(Ok((report, code)))
}

pub struct SimulateArgs<'a> {
    pub x0: &'a Vector,
    /// `x0` and the output are in the original coordinates `y`.
    pub raw: bool,
    pub t_end: f64,
    pub rtol: f64,
    pub atol: f64,
    pub samples: Option<usize>,
    pub csv: Option<&'a Path>,
}

pub fn cmd_simulate(sys: &LoadedSystem, args: &SimulateArgs, out: &mut dyn Write) -> Result<i32> {
    let (a, eq) = match sys.normalized() {
        Ok(pair) => pair,
        Err(e) => {
            writeln!(out, "no interior equilibrium: {e}")?;
            return Ok(model_exit(&e));
        }
    };
    if args.raw && !matches!(sys.data, SystemData::Raw(_)) {
        bail!("--raw needs a system file with r and B");
    }
    let x0 = if args.raw {
        normalize_state(args.x0, &eq)?
    } else {
        args.x0.clone()
    };
    let mut opts = IntegrateOptions::with_tolerances(args.rtol, args.atol);
    if let Some(count) = args.samples {
        opts = opts.uniform_samples(args.t_end, count);
    }
    let mut traj = match integrate(&a, &x0, args.t_end, &opts) {
        Ok(t) => t,
        Err(e @ (SimError::BlowUp { .. } | SimError::StepSizeUnderflow { .. } | SimError::MaxStepsExceeded { .. })) => {
            writeln!(out, "integration stopped: {e}")?;
            return Ok(EXIT_SIMULATION);
        }
        Err(e) => return Err(e.into()),
    };
    let report = analyze(&traj, &a, &AnalyzeOptions::default())?;
    let mut summary = String::new();
    summary += &format!(
        "steps: {} accepted, {} rejected\n",
        traj.step_stats.accepted, traj.step_stats.rejected
    );
    summary += &format!("final x = {}\n", fmt_vec(traj.last_state().expect("nonempty")));
    summary += &format!("tail min = {}\n", fmt_vec(&report.liminf_estimates));
    summary += &format!("tail max = {}\n", fmt_vec(&report.limsup_estimates));
    summary += &match (&report.converged_to, report.convergence_time) {
        (Some(p), Some(t)) => format!("converged to {} by t = {t}\n", fmt_vec(p)),
        _ => "no convergence detected\n".to_string(),
    };
    if args.raw {
        for s in traj.states.iter_mut() {
            *s = denormalize_state(s, &eq)?;
        }
    }
    match args.csv {
        Some(path) => {
            let file = std::fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
            traj.write_csv(std::io::BufWriter::new(file))?;
            write!(out, "{summary}")?;
            writeln!(out, "trajectory written to {}", path.display())?;
        }
        None => {
            // keep standard output pure CSV
            eprint!("{summary}");
            traj.write_csv(&mut *out)?;
        }
    }
    Ok(EXIT_OK)
}

pub struct LyapunovCheckArgs<'a> {
    pub x0: &'a Vector,
    pub t_end: f64,
    pub rtol: f64,
    pub atol: f64,
}

pub fn cmd_lyapunov_check(
    sys: &LoadedSystem,
    report: &CertificateReport,
    args: &LyapunovCheckArgs,
    out: &mut dyn Write,
) -> Result<i32> {
    let (a, _) = match sys.normalized() {
        Ok(pair) => pair,
        Err(e) => {
            writeln!(out, "no interior equilibrium: {e}")?;
            return Ok(model_exit(&e));
        }
    };
    let recorded = report.matrix()?;
    let scale = 1e-12 * (1.0 + a.amax());
    if recorded.shape() != a.shape() || (&recorded - &a).amax() > scale {
        bail!("the report was produced for a different system");
    }
    let Some(cert) = &report.certificate else {
        bail!("the report has no certificate");
    };
    let Some(params) = cert.params.clone() else {
        bail!("the certificate carries no Lyapunov parameters");
    };

    let mut failed = false;
    match verify_certificate(&a, cert) {
        Ok(CheckOutcome::Pass(_)) => writeln!(out, "certificate re-verifies")?,
        Ok(CheckOutcome::Fail(f)) => {
            failed = true;
            writeln!(out, "certificate does not verify: {}", f.reasons.join("; "))?;
        }
        Err(e) => {
            failed = true;
            writeln!(out, "certificate does not verify: {e}")?;
        }
    }

    let integrate_opts = IntegrateOptions::with_tolerances(args.rtol, args.atol);
    let pilot = match integrate(&a, args.x0, args.t_end, &integrate_opts) {
        Ok(t) => t,
        Err(e) => {
            writeln!(out, "integration stopped: {e}")?;
            return Ok(EXIT_SIMULATION);
        }
    };
    let sup = trajectory_sup(&params, &pilot);
    let c = choose_c(&params, sup, cert.family, cert.c_star);
    writeln!(out, "c = {c:?} (sup p^T(x - 1) = {sup:?})")?;
    let ctx = LyapunovContext::new(a, params, c)?;
    let opts = TrajectoryCheckOptions {
        t_end: args.t_end,
        integrate: integrate_opts,
        ..TrajectoryCheckOptions::default()
    };
    let check = match check_along_trajectory(&ctx, args.x0, &opts) {
        Ok(c) => c,
        Err(e) => {
            writeln!(out, "FAIL: {e}")?;
            return Ok(EXIT_NEGATIVE);
        }
    };
    writeln!(
        out,
        "{} accepted steps; max increase of U_c {:e}; max U_c' {:e}",
        check.accepted_steps, check.max_increase, check.max_uc_dot
    )?;
    writeln!(
        out,
        "finite-difference relative error: V' {:e}, S' {:e}, U_c' {:e}",
        check.max_fd_rel_error[0], check.max_fd_rel_error[1], check.max_fd_rel_error[2]
    )?;
    if let Some(v) = &check.first_violation {
        failed = true;
        writeln!(out, "FAIL: {} at t = {:?} (value {:e})", v.kind, v.t, v.value)?;
    }
    if failed {
        Ok(EXIT_NEGATIVE)
    } else {
        writeln!(out, "PASS")?;
        Ok(EXIT_OK)
    }
}

fn family_name(family: Option<CertificateFamily>) -> String {
    family.map_or_else(|| "none".to_string(), |f| f.to_string())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExampleId {
    Example1,
    Example2,
    Structured,
}

impl ExampleId {
    pub fn name(self) -> &'static str {
        match self {
            Self::Example1 => "example1",
            Self::Example2 => "example2",
            Self::Structured => "structured",
        }
    }

    pub fn system_file(self) -> SystemFile {
        let text = match self {
            Self::Example1 => EXAMPLE1_TOML,
            Self::Example2 => EXAMPLE2_TOML,
            Self::Structured => STRUCTURED_TOML,
        };
        SystemFile::parse(text).expect("shipped fixtures parse")
    }
}

struct Expectations<'a> {
    out: &'a mut dyn Write,
    lines: Vec<String>,
    failures: usize,
}

impl Expectations<'_> {
    fn check(&mut self, ok: bool, what: String) -> Result<()> {
        let line = format!("{} {what}", if ok { "ok      " } else { "MISMATCH" });
        writeln!(self.out, "{line}")?;
        self.lines.push(line);
        if !ok {
            self.failures += 1;
        }
        Ok(())
    }

    fn info(&mut self, what: String) -> Result<()> {
        let line = format!("info     {what}");
        writeln!(self.out, "{line}")?;
        self.lines.push(line);
        Ok(())
    }
}

fn rel_close(a: &Vector, b: &Vector, tol: f64) -> bool {
    a.len() == b.len() && a.iter().zip(b.iter()).all(|(x, y)| (x - y).abs() <= tol * y.abs().max(1e-300))
}

/// Runs the pipeline on a shipped system and compares with the expected
/// outcome. Writes the certificate report and a summary into `out_dir` when given.
pub fn cmd_reproduce(
    example: ExampleId,
    budget: &SearchBudget,
    ensemble_samples: usize,
    out_dir: Option<&Path>,
    out: &mut dyn Write,
) -> Result<i32> {
    let file = example.system_file();
    let sys = file.load()?;
    let (a, eq) = sys.normalized()?;
    let mut exp = Expectations {
        out,
        lines: Vec::new(),
        failures: 0,
    };

    let (report, _) = certify_report(&file, budget)?
        .map_err(|code| anyhow::anyhow!("fixture has no interior equilibrium (exit {code})"))?;

    match example {
        ExampleId::Example1 => {
            let want = Vector::from_vec(vec![2.5, 0.5, 1.0 / 6.0]);
            exp.check(rel_close(eq.y_star(), &want, 1e-12), format!("equilibrium {}", fmt_vec(eq.y_star())))?;
            let a_err = (&a - fixtures::example1_matrix()).amax();
            exp.check(a_err <= 1e-12, format!("normalized matrix (max deviation {a_err:e})"))?;
            let (k, b) = fixtures::example1_kb();
            let r = r_matrix(&a, &k, b);
            let r_err = (&r - fixtures::example1_r_matrix()).amax();
            exp.check(r_err <= 1e-12, format!("R for k = (1, 1/2, 5/4), b = -1/4 (max deviation {r_err:e})"))?;
            let reference = check_theorem1(&a, &Theorem1Params::from_kb(k.clone(), b), &InvariantSetArgument::r_negative_definite())?;
            let family = reference.certificate().map(|c| c.family);
            exp.check(family == Some(CertificateFamily::Theorem1C), format!("given (k, b) certifies as {}", family_name(family)))?;
            exp.check(
                report.status == ReportStatus::Certified,
                format!("search certifies: {}", family_name(report.certificate.as_ref().map(|c| c.family))),
            )?;
        }
        ExampleId::Example2 => {
            exp.check(
                report.status == ReportStatus::Inconclusive,
                format!("search outcome {} (expected inconclusive)", match report.status {
                    ReportStatus::Certified => "certified",
                    ReportStatus::Inconclusive => "inconclusive",
                }),
            )?;
        }
        ExampleId::Structured => {
            let sf = fixtures::structured_default();
            let (built, params, inv) = build_structured_family(&sf)?;
            let a_err = (&a - &built).amax();
            exp.check(a_err <= 1e-14, format!("shipped matrix matches the family (max deviation {a_err:e})"))?;
            let outcome = check_theorem1(&built, &params, &inv)?;
            let family = outcome.certificate().map(|c| c.family);
            exp.check(family == Some(CertificateFamily::Theorem1B), format!("family parameters certify as {}", family_name(family)))?;
            let invariant = verify_invariant_set_structured(&built, &sf)?;
            exp.check(invariant, "invariant-set identities hold".to_string())?;
            exp.check(
                report.status == ReportStatus::Certified,
                format!("search certifies: {}", family_name(report.certificate.as_ref().map(|c| c.family))),
            )?;
        }
    }

    if ensemble_samples > 0 {
        let ens = ensemble_diagnostics(&a, ensemble_samples, budget.seed, &EnsembleOptions::default())?;
        let line = format!(
            "ensemble: {}/{} converged to 1, {} unbounded, {} failed, min tail {:e}, max tail {:e}, max terminal error {:e}",
            ens.converged, ens.n_samples, ens.unbounded, ens.failed, ens.min_liminf, ens.max_limsup, ens.max_terminal_error
        );
        if example == ExampleId::Example2 {
            // statistics only; no expectation either way
            exp.info(line)?;
        } else {
            exp.check(ens.converged == ens.n_samples && ens.max_terminal_error <= 1e-6, line)?;
        }
    }

    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        report.write(&dir.join(format!("{}-report.toml", example.name())))?;
        let mut summary = exp.lines.join("\n");
        summary.push('\n');
        std::fs::write(dir.join(format!("{}-summary.txt", example.name())), summary)?;
    }

    let failures = exp.failures;
    if failures == 0 {
        writeln!(exp.out, "{}: all expectations met", example.name())?;
        Ok(EXIT_OK)
    } else {
        writeln!(exp.out, "{}: {failures} expectation(s) not met", example.name())?;
        Ok(EXIT_NEGATIVE)
    }
}
