//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each and
//! exits nonzero if any failed.

use lvcert_core::certificates::{
    build_structured_family, check_eigenvector_conditions, check_theorem1, check_volterra_lyapunov,
    verify_invariant_set_structured, CheckOutcome,
};
use lvcert_core::fixtures;
use lvcert_core::lyapunov::{
    check_along_trajectory, choose_c, trajectory_sup, LyapunovContext, TrajectoryCheckOptions,
};
use lvcert_core::matrixops::classify;
use lvcert_core::model::{find_interior_equilibrium, normalize};
use lvcert_core::search::{
    auto_certify, search_volterra_lyapunov, solve_linear_conditions, AutoCertifyResult,
};
use lvcert_core::sim::{ensemble_diagnostics, integrate, EnsembleOptions, IntegrateOptions};
use lvcert_core::{
    CertificateFamily, DefinitenessClass, InvariantSetArgument, Matrix, SearchBudget, SearchStatus,
    StructuredFamilyParams, Theorem1Params, Vector,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::time::{Duration, Instant};

const ENTRY_TOL: f64 = 1e-12;
const LINEAR_RESIDUAL_TOL: f64 = 1e-8;

type Verdict = Result<String, String>;
type Criterion = (&'static str, fn() -> Verdict);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within_limit(elapsed: Duration, limit: Duration) -> Result<(), String> {
    ensure(elapsed <= limit, || {
        format!("took {:.3?}, limit {:.0?}", elapsed, limit)
    })
}

fn max_rel_error(got: &Vector, want: &Vector) -> f64 {
    got.iter()
        .zip(want.iter())
        .map(|(g, w)| (g - w).abs() / w.abs())
        .fold(0.0, f64::max)
}

fn criterion_1() -> Verdict {
    let sys = fixtures::example1_system();
    let want = Vector::from_vec(vec![2.5, 0.5, 1.0 / 6.0]);
    let mut best = Duration::MAX;
    let mut eq = None;
    for _ in 0..20 {
        let start = Instant::now();
        let found = find_interior_equilibrium(&sys).map_err(|e| e.to_string())?;
        best = best.min(start.elapsed());
        eq = Some(found);
    }
    let eq = eq.expect("loop ran");
    let err = max_rel_error(eq.y_star(), &want);
    ensure(err <= ENTRY_TOL, || format!("relative error {err:e}"))?;
    within_limit(best, Duration::from_millis(1))?;
    Ok(format!("relative error {err:.1e}, {best:.1?}"))
}

fn criterion_2() -> Verdict {
    let sys = fixtures::example1_system();
    let eq = find_interior_equilibrium(&sys).map_err(|e| e.to_string())?;
    let a = normalize(&sys, &eq).map_err(|e| e.to_string())?.into_matrix();
    let err = (&a - fixtures::example1_matrix()).amax();
    ensure(err <= ENTRY_TOL, || format!("max entry error {err:e}"))?;
    Ok(format!("max entry error {err:.1e}"))
}

fn criterion_3() -> Verdict {
    let start = Instant::now();
    let a = fixtures::example1_matrix();
    let (k, b) = fixtures::example1_kb();
    let params = Theorem1Params::from_kb(k, b);
    let r = params.r_matrix(&a);
    let err = (&r - fixtures::example1_r_matrix()).amax();
    ensure(err <= ENTRY_TOL, || format!("R entry error {err:e}"))?;
    let verdict = classify(&r).map_err(|e| e.to_string())?;
    ensure(verdict.class == DefinitenessClass::NegativeDefinite, || {
        format!("R classified {}", verdict.class)
    })?;
    let outcome = check_theorem1(&a, &params, &InvariantSetArgument::r_negative_definite())
        .map_err(|e| e.to_string())?;
    let cert = match outcome {
        CheckOutcome::Pass(c) => c,
        CheckOutcome::Fail(f) => return Err(format!("check failed: {:?}", f.reasons)),
    };
    ensure(cert.family == CertificateFamily::Theorem1C, || {
        format!("classified as {}", cert.family)
    })?;
    let bk = params.b * params.k.sum();
    ensure((bk + 11.0 / 16.0).abs() <= 1e-15, || format!("b k^T 1 = {bk}"))?;
    let elapsed = start.elapsed();
    within_limit(elapsed, Duration::from_millis(10))?;
    Ok(format!(
        "R error {err:.1e}, lambda_max {:.5}, b k^T 1 = {bk}, {elapsed:.1?}",
        verdict.lambda_max
    ))
}

fn certify_example1() -> Result<AutoCertifyResult, String> {
    let a = fixtures::example1_matrix();
    auto_certify(&a, &SearchBudget::for_matrix(&a)).map_err(|e| e.to_string())
}

fn criterion_4() -> Verdict {
    let start = Instant::now();
    let a = fixtures::example1_matrix();
    let budget = SearchBudget::for_matrix(&a);
    ensure(budget.max_restarts <= 64, || "default budget exceeds 64 restarts".into())?;
    let first = certify_example1()?;
    let elapsed = start.elapsed();
    let (stage, cert) = match &first {
        AutoCertifyResult::Certified {
            stage, certificate, ..
        } => (*stage, certificate.clone()),
        AutoCertifyResult::Inconclusive { stages } => {
            return Err(format!("inconclusive: {stages:?}"))
        }
    };
    let params = cert
        .params
        .as_ref()
        .ok_or_else(|| "certificate has no (k, b) witness".to_string())?;
    let reverified = check_theorem1(&a, params, &cert.invariant_set).map_err(|e| e.to_string())?;
    ensure(reverified.is_pass(), || "witness does not re-verify".into())?;

    let second = certify_example1()?;
    ensure(first == second, || "repeat run differs".into())?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .map_err(|e| e.to_string())?;
    let serial = pool.install(certify_example1)?;
    ensure(first == serial, || "single-threaded run differs".into())?;
    within_limit(elapsed, Duration::from_secs(30))?;
    Ok(format!(
        "{} via {stage}, k = {:?}, b = {:.4}, {elapsed:.2?}",
        cert.family,
        params.k.as_slice(),
        params.b
    ))
}

fn criterion_5() -> Verdict {
    let start = Instant::now();
    let a = fixtures::example2_matrix();
    let budget = SearchBudget::for_matrix(&a);
    let vl = search_volterra_lyapunov(&a, &budget);
    ensure(vl.status == SearchStatus::Inconclusive, || {
        "Volterra-Lyapunov search succeeded".into()
    })?;
    let eig = check_eigenvector_conditions(&a).map_err(|e| e.to_string())?;
    ensure(!eig.is_pass(), || "eigenvector conditions passed".into())?;
    let candidates = solve_linear_conditions(&a);
    ensure(candidates.iter().all(|c| c.is_trivial()), || {
        format!("{} nontrivial linear candidates", candidates.len() - 1)
    })?;
    let result = auto_certify(&a, &budget).map_err(|e| e.to_string())?;
    ensure(matches!(result, AutoCertifyResult::Inconclusive { .. }), || {
        "auto_certify returned a certificate".into()
    })?;
    let elapsed = start.elapsed();
    within_limit(elapsed, Duration::from_secs(60))?;
    Ok(format!(
        "inconclusive, best VL lambda_max {:.4}, {elapsed:.2?}",
        vl.best_objective
    ))
}

fn random_structured(rng: &mut ChaCha8Rng) -> StructuredFamilyParams {
    loop {
        let l2 = rng.gen_range(0.05..0.95);
        let l1 = l2 * rng.gen_range(0.05..0.95);
        let l3 = l2 + rng.gen_range(0.05..5.0);
        let bound = l1 * l3 * (1.0 - l2) / (l2 * (l3 - l1));
        let delta = bound * rng.gen_range(0.02..0.98);
        if let Ok(sf) = StructuredFamilyParams::new(l1, l2, l3, delta) {
            return sf;
        }
    }
}

fn criterion_6() -> Verdict {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst = 0.0f64;
    for i in 0..200 {
        let sf = random_structured(&mut rng);
        let (a, params, inv) = build_structured_family(&sf).map_err(|e| e.to_string())?;
        let outcome = check_theorem1(&a, &params, &inv).map_err(|e| e.to_string())?;
        let cert = match outcome {
            CheckOutcome::Pass(c) => c,
            CheckOutcome::Fail(f) => return Err(format!("sample {i} {sf:?}: {:?}", f.reasons)),
        };
        ensure(cert.family == CertificateFamily::Theorem1B, || {
            format!("sample {i} classified as {}", cert.family)
        })?;
        let res = cert.residuals.values().copied().fold(0.0, f64::max);
        ensure(res <= LINEAR_RESIDUAL_TOL, || {
            format!("sample {i}: linear residual {res:e}")
        })?;
        worst = worst.max(res);
        let invariant = verify_invariant_set_structured(&a, &sf).map_err(|e| e.to_string())?;
        ensure(invariant, || format!("sample {i}: invariant set not confirmed"))?;
    }
    let elapsed = start.elapsed();
    within_limit(elapsed, Duration::from_secs(10))?;
    Ok(format!("200/200 theorem1_b, worst residual {worst:.1e}, {elapsed:.2?}"))
}

fn criterion_7() -> Verdict {
    let start = Instant::now();
    let a = fixtures::example1_matrix();
    let (k, b) = fixtures::example1_kb();
    let params = Theorem1Params::from_kb(k, b);
    let cert = check_theorem1(&a, &params, &InvariantSetArgument::r_negative_definite())
        .map_err(|e| e.to_string())?
        .into_certificate()
        .ok_or("certificate does not verify")?;
    let opts = TrajectoryCheckOptions::default();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst_increase = f64::NEG_INFINITY;
    let mut worst_fd = 0.0f64;
    for i in 0..20 {
        let x0 = Vector::from_fn(3, |_, _| rng.gen_range((0.1f64).ln()..(10.0f64).ln()).exp());
        let pilot = integrate(&a, &x0, opts.t_end, &opts.integrate).map_err(|e| e.to_string())?;
        let c = choose_c(&params, trajectory_sup(&params, &pilot), cert.family, cert.c_star);
        let ctx = LyapunovContext::new(a.clone(), params.clone(), c).map_err(|e| e.to_string())?;
        let check = check_along_trajectory(&ctx, &x0, &opts).map_err(|e| e.to_string())?;
        if let Some(v) = &check.first_violation {
            return Err(format!(
                "trajectory {i} from {:?}: {} at t = {} ({:e})",
                x0.as_slice(),
                v.kind,
                v.t,
                v.value
            ));
        }
        worst_increase = worst_increase.max(check.max_increase);
        worst_fd = worst_fd.max(check.max_fd_rel_error[2]);
    }
    let elapsed = start.elapsed();
    within_limit(elapsed, Duration::from_secs(60))?;
    Ok(format!(
        "20/20 trajectories, max step increase {worst_increase:.1e}, max U_c' fd error {worst_fd:.1e}, {elapsed:.2?}"
    ))
}

fn random_matrix(rng: &mut ChaCha8Rng, n: usize) -> Matrix {
    match rng.gen_range(0..3) {
        // Diagonally dominant: Volterra-Lyapunov with h = 1 likely.
        0 => Matrix::from_fn(n, n, |i, j| {
            if i == j {
                -rng.gen_range(2.0..4.0)
            } else {
                rng.gen_range(-1.0..1.0) / n as f64
            }
        }),
        // Rank-one perturbation of a negative diagonal: has a clean left eigenvector.
        1 => {
            let u = Vector::from_fn(n, |_, _| rng.gen_range(0.2..1.0));
            let v = Vector::from_fn(n, |_, _| rng.gen_range(0.2..1.0));
            let d = -rng.gen_range(0.5..1.5);
            Matrix::from_diagonal_element(n, n, d) - &u * v.transpose() * rng.gen_range(0.0..2.0)
        }
        _ => Matrix::from_fn(n, n, |i, j| {
            if i == j {
                -rng.gen_range(0.5..2.0)
            } else {
                rng.gen_range(-2.0..2.0)
            }
        }),
    }
}

fn criterion_8() -> Verdict {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (mut vl_cases, mut eig_cases) = (0, 0);
    for i in 0..100 {
        let n = rng.gen_range(2..=5);
        let a = random_matrix(&mut rng, n);
        let budget = SearchBudget {
            max_restarts: 16,
            ..SearchBudget::for_matrix(&a)
        };
        let vl = search_volterra_lyapunov(&a, &budget);
        if vl.status == SearchStatus::Found {
            vl_cases += 1;
            let h = vl
                .witness
                .as_ref()
                .map(|w| w.k.clone())
                .ok_or_else(|| format!("matrix {i}: found without witness"))?;
            let direct = check_volterra_lyapunov(&a, &h).map_err(|e| e.to_string())?;
            ensure(direct.is_pass(), || format!("matrix {i}: weight does not re-verify"))?;
            let embedded = Theorem1Params::from_volterra_lyapunov(h);
            let outcome = check_theorem1(&a, &embedded, &InvariantSetArgument::r_negative_definite())
                .map_err(|e| e.to_string())?;
            ensure(outcome.is_pass(), || format!("matrix {i}: embedding fails check_theorem1"))?;
        }
        if let CheckOutcome::Pass(cert) = check_eigenvector_conditions(&a).map_err(|e| e.to_string())? {
            eig_cases += 1;
            let params = cert
                .params
                .as_ref()
                .ok_or_else(|| format!("matrix {i}: no (k, b) conversion: {:?}", cert.notes))?;
            let r = classify(&params.r_matrix(&a)).map_err(|e| e.to_string())?;
            ensure(r.is_negative_definite(), || {
                format!("matrix {i}: converted R is {}", r.class)
            })?;
        }
    }
    ensure(vl_cases > 0 && eig_cases > 0, || {
        format!("degenerate sample: {vl_cases} VL cases, {eig_cases} eigenvector cases")
    })?;
    let elapsed = start.elapsed();
    within_limit(elapsed, Duration::from_secs(60))?;
    Ok(format!(
        "{vl_cases} VL embeddings, {eig_cases} eigenvector conversions, {elapsed:.2?}"
    ))
}

fn criterion_9() -> Verdict {
    // x' = -x (x - 1), so x(t) = 1 / (1 + (1/x0 - 1) e^{-t}).
    let a = Matrix::from_element(1, 1, -1.0);
    let x0 = 0.01;
    let t_end: f64 = 20.0;
    let exact = 1.0 / (1.0 + (1.0 / x0 - 1.0) * (-t_end).exp());
    let mut points = Vec::new();
    for e in 4..=10 {
        let rtol = 10f64.powi(-e);
        let opts = IntegrateOptions::with_tolerances(rtol, rtol * 1e-3);
        let traj = integrate(&a, &Vector::from_element(1, x0), t_end, &opts).map_err(|e| e.to_string())?;
        let err = (traj.last_state().ok_or("empty trajectory")?[0] - exact).abs();
        points.push(((traj.step_stats.accepted as f64).ln(), err.ln()));
    }
    let m = points.len() as f64;
    let (sx, sy) = points.iter().fold((0.0, 0.0), |(a, b), p| (a + p.0, b + p.1));
    let (mx, my) = (sx / m, sy / m);
    let (num, den) = points.iter().fold((0.0, 0.0), |(n, d), p| {
        (n + (p.0 - mx) * (p.1 - my), d + (p.0 - mx).powi(2))
    });
    let order = -num / den;
    ensure(order >= 4.0, || format!("observed order {order:.2}"))?;
    Ok(format!("observed order {order:.2} over rtol 1e-4..1e-10"))
}

fn criterion_10() -> Verdict {
    let start = Instant::now();
    let a = fixtures::example1_matrix();
    let opts = EnsembleOptions::default();
    let report = ensemble_diagnostics(&a, 100, 10, &opts).map_err(|e| e.to_string())?;
    ensure(report.converged == 100, || {
        format!(
            "{}/100 converged ({} unbounded, {} failed)",
            report.converged, report.unbounded, report.failed
        )
    })?;
    ensure(report.max_terminal_error <= 1e-6, || {
        format!("terminal error {:e}", report.max_terminal_error)
    })?;
    Ok(format!(
        "100/100 converged by t = {}, max terminal error {:.1e}, {:.2?}",
        opts.t_end,
        report.max_terminal_error,
        start.elapsed()
    ))
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("equilibrium reproduction", criterion_1),
        ("normalization reproduction", criterion_2),
        ("certificate reproduction", criterion_3),
        ("search recovery", criterion_4),
        ("negative control", criterion_5),
        ("structured family", criterion_6),
        ("Lyapunov monotonicity", criterion_7),
        ("embedding soundness", criterion_8),
        ("integrator order", criterion_9),
        ("ensemble convergence", criterion_10),
    ];
    let mut failures = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        match run() {
            Ok(detail) => println!("PASS {:>2} {name}: {detail}", i + 1),
            Err(reason) => {
                failures += 1;
                println!("FAIL {:>2} {name}: {reason}", i + 1);
            }
        }
    }
    if failures > 0 {
        println!("{failures} acceptance criteria failed");
        std::process::exit(1);
    }
}
