//! Multi-start Nelder-Mead search for certificate witnesses.
//!
//! Every `Found` outcome carries a certificate produced by the checks in
//! [`crate::certificates`]; the optimizer's own objective value is never
//! taken as proof.

use crate::certificates::{
    self, check_eigenvector_conditions, check_theorem1, check_volterra_lyapunov,
    detect_structured_family, linear_tolerance, unpermute, Certificate, CertificateError,
    CheckOutcome, InvariantSetArgument, Theorem1Params,
};
use crate::matrixops::{inf_norm, lambda_max, left_eigenpairs, vec_inf_norm};
use crate::{Matrix, Vector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Restarts are dispatched in batches of this size; the batch boundaries are
/// fixed so that parallel and serial runs stop at the same restart.
const RESTART_CHUNK: usize = 8;
/// Grid of `g` values tried by [`solve_linear_conditions`].
pub const G_GRID: [f64; 7] = [0.0, 1e-3, 1e-2, 1e-1, 1.0, 1e1, 1e2];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchBudget {
    pub max_restarts: usize,
    pub max_evals_per_restart: usize,
    pub seed: u64,
    /// A witness must push `lambda_max` below `-target_margin`.
    pub target_margin: f64,
}

impl Default for SearchBudget {
    fn default() -> Self {
        Self {
            max_restarts: 64,
            max_evals_per_restart: 2000,
            seed: 0,
            target_margin: 1e-7,
        }
    }
}

impl SearchBudget {
    /// Default budget with `target_margin = 1e-7 (1 + |A|_inf)`.
    pub fn for_matrix(a: &Matrix) -> Self {
        Self {
            target_margin: 1e-7 * (1.0 + inf_norm(a)),
            ..Self::default()
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    fn sanitized(&self) -> Self {
        Self {
            max_restarts: self.max_restarts.max(1),
            max_evals_per_restart: self.max_evals_per_restart.max(1),
            seed: self.seed,
            target_margin: self.target_margin.max(0.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SearchStatus {
    Found,
    Inconclusive,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchOutcome {
    pub status: SearchStatus,
    /// Best parameters found; a Volterra-Lyapunov weight `h` appears as `k = h`, `b = 0`.
    pub witness: Option<Theorem1Params>,
    /// Re-verified certificate, present exactly when `status` is `Found`.
    pub certificate: Option<Box<Certificate>>,
    pub best_objective: f64,
    pub evals_used: usize,
    pub restarts_used: usize,
}

/// Result of one simplex run.
#[derive(Debug, Clone)]
pub struct MinimizeResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub evals: usize,
    /// Best value after each iteration.
    pub history: Vec<f64>,
}

/// Nelder-Mead with standard coefficients. Stops when the evaluation budget
/// runs out or the simplex collapses.
pub fn nelder_mead<F: FnMut(&[f64]) -> f64>(
    mut f: F,
    x0: &[f64],
    step: f64,
    max_evals: usize,
) -> MinimizeResult {
    let n = x0.len();
    let mut evals = 0usize;
    let mut eval = |x: &[f64], evals: &mut usize| {
        *evals += 1;
        let v = f(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };

    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
    let v0 = eval(x0, &mut evals);
    simplex.push((x0.to_vec(), v0));
    for i in 0..n {
        let mut x = x0.to_vec();
        x[i] += if x[i].abs() > 1e-12 { step * x[i].abs().max(1.0) } else { step };
        let v = eval(&x, &mut evals);
        simplex.push((x, v));
    }
    let mut history = Vec::new();

    let combine = |a: &[f64], b: &[f64], t: f64| -> Vec<f64> {
        a.iter().zip(b).map(|(ai, bi)| ai + t * (bi - ai)).collect()
    };

    while evals < max_evals {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        history.push(simplex[0].1);
        let spread = simplex[n].1 - simplex[0].1;
        let size = simplex[1..]
            .iter()
            .flat_map(|(x, _)| x.iter().zip(&simplex[0].0).map(|(a, b)| (a - b).abs()))
            .fold(0.0, f64::max);
        if size < 1e-12 && spread.abs() < 1e-15 {
            break;
        }

        let mut centroid = vec![0.0; n];
        for (x, _) in &simplex[..n] {
            for (c, xi) in centroid.iter_mut().zip(x) {
                *c += xi / n as f64;
            }
        }
        let worst = simplex[n].0.clone();
        let reflected = combine(&centroid, &worst, -1.0);
        let fr = eval(&reflected, &mut evals);

        if fr < simplex[0].1 {
            let expanded = combine(&centroid, &worst, -2.0);
            let fe = eval(&expanded, &mut evals);
            simplex[n] = if fe < fr { (expanded, fe) } else { (reflected, fr) };
        } else if fr < simplex[n - 1].1 {
            simplex[n] = (reflected, fr);
        } else {
            let (contracted, fc) = if fr < simplex[n].1 {
                let c = combine(&centroid, &worst, -0.5);
                let fc = eval(&c, &mut evals);
                (c, fc)
            } else {
                let c = combine(&centroid, &worst, 0.5);
                let fc = eval(&c, &mut evals);
                (c, fc)
            };
            if fc < fr.min(simplex[n].1) {
                simplex[n] = (contracted, fc);
            } else {
                let best = simplex[0].0.clone();
                for entry in simplex.iter_mut().skip(1) {
                    let x = combine(&best, &entry.0, 0.5);
                    let v = eval(&x, &mut evals);
                    *entry = (x, v);
                }
            }
        }
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    history.push(simplex[0].1);
    let (x, value) = simplex.swap_remove(0);
    MinimizeResult {
        x,
        value,
        evals,
        history,
    }
}

/// Per-restart RNG derived from the budget seed and the restart index.
fn restart_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64 + 1);
    rng
}

struct RestartResult<W> {
    index: usize,
    value: f64,
    evals: usize,
    witness: W,
}

/// Verified witness, best witness with its objective, evaluations, restarts.
type MultistartResult<W> = (Option<(W, Box<Certificate>)>, Option<(W, f64)>, usize, usize);

/// Runs restarts in fixed-size parallel batches and stops after the first
/// batch containing a verified witness. Ties are broken by restart index.
fn multistart<W, Run, Verify>(
    budget: &SearchBudget,
    run: Run,
    mut verify: Verify,
) -> MultistartResult<W>
where
    W: Clone + Send,
    Run: Fn(usize) -> (W, f64, usize) + Sync,
    Verify: FnMut(&W, f64) -> Option<Box<Certificate>>,
{
    let mut best: Option<(W, f64)> = None;
    let mut evals = 0usize;
    let mut used = 0usize;
    let mut start = 0usize;
    while start < budget.max_restarts {
        let end = (start + RESTART_CHUNK).min(budget.max_restarts);
        let mut results: Vec<RestartResult<W>> = (start..end)
            .into_par_iter()
            .map(|index| {
                let (witness, value, evals) = run(index);
                RestartResult {
                    index,
                    value,
                    evals,
                    witness,
                }
            })
            .collect();
        results.sort_by(|a, b| a.value.total_cmp(&b.value).then(a.index.cmp(&b.index)));
        used = end;
        evals += results.iter().map(|r| r.evals).sum::<usize>();
        if best.as_ref().is_none_or(|(_, v)| results[0].value < *v) {
            best = Some((results[0].witness.clone(), results[0].value));
        }
        for r in &results {
            if r.value < -budget.target_margin {
                if let Some(cert) = verify(&r.witness, r.value) {
                    return (Some((r.witness.clone(), cert)), best, evals, used);
                }
            }
        }
        start = end;
    }
    (None, best, evals, used)
}

fn unit_positive(u: &[f64]) -> Vector {
    let m = u.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let h = Vector::from_iterator(u.len(), u.iter().map(|x| (x - m).exp()));
    let norm = h.norm();
    h / norm
}

/// Objective of the Volterra-Lyapunov search.
pub fn volterra_lyapunov_objective(a: &Matrix, h: &Vector) -> f64 {
    lambda_max(&certificates::weighted_symmetric_part(a, h))
}

/// Objective of the `(k, b)` search: `lambda_max(((diag(k) + b k k^T) A)^S)`.
/// Under `(k, b) -> (c k, b / c)` with `c > 0` the matrix scales by `c`.
pub fn kb_objective(a: &Matrix, k: &Vector, b: f64) -> f64 {
    lambda_max(&certificates::r_matrix(a, k, b))
}

/// Searches `h = exp(u) / |exp(u)|` for a Volterra-Lyapunov weight.
pub fn search_volterra_lyapunov(a: &Matrix, budget: &SearchBudget) -> SearchOutcome {
    let budget = budget.sanitized();
    let n = a.nrows();
    if n == 0 || !a.is_square() {
        return inconclusive(f64::INFINITY, 0, 0, None);
    }
    let run = |index: usize| {
        let u0: Vec<f64> = if index == 0 {
            vec![0.0; n]
        } else {
            let mut rng = restart_rng(budget.seed, index);
            (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect()
        };
        let res = nelder_mead(
            |u| volterra_lyapunov_objective(a, &unit_positive(u)),
            &u0,
            0.5,
            budget.max_evals_per_restart,
        );
        (unit_positive(&res.x), res.value, res.evals)
    };
    let verify = |h: &Vector, _| match check_volterra_lyapunov(a, h) {
        Ok(CheckOutcome::Pass(cert)) => Some(cert),
        _ => None,
    };
    let (found, best, evals, used) = multistart(&budget, run, verify);
    match found {
        Some((h, cert)) => SearchOutcome {
            status: SearchStatus::Found,
            best_objective: volterra_lyapunov_objective(a, &h),
            witness: Some(Theorem1Params::from_volterra_lyapunov(h)),
            certificate: Some(cert),
            evals_used: evals,
            restarts_used: used,
        },
        None => {
            let (h, v) = best.expect("at least one restart");
            inconclusive(v, evals, used, Some(Theorem1Params::from_volterra_lyapunov(h)))
        }
    }
}

fn inconclusive(
    best_objective: f64,
    evals_used: usize,
    restarts_used: usize,
    witness: Option<Theorem1Params>,
) -> SearchOutcome {
    SearchOutcome {
        status: SearchStatus::Inconclusive,
        witness,
        certificate: None,
        best_objective,
        evals_used,
        restarts_used,
    }
}

/// Parameterizations of `(k, b)` used by [`search_kb`].
#[derive(Debug, Clone, Copy, PartialEq)]
enum KbChart {
    /// `k = exp(u) / |exp(u)|`, `b = tanh(s) / k^T 1`, so `|b k^T 1| < 1`.
    PositiveCone,
    /// `k = v / |v|`, `b` raw.
    Free,
}

fn kb_from_chart(chart: KbChart, z: &[f64]) -> (Vector, f64) {
    let n = z.len() - 1;
    match chart {
        KbChart::PositiveCone => {
            let k = unit_positive(&z[..n]);
            let b = z[n].tanh() / k.sum();
            (k, b)
        }
        KbChart::Free => {
            let v = Vector::from_row_slice(&z[..n]);
            let norm = v.norm();
            if norm < 1e-300 {
                (Vector::from_element(n, f64::NAN), z[n])
            } else {
                (v / norm, z[n])
            }
        }
    }
}

fn kb_start(a: &Matrix, seeds: &[Vector], seed: u64, index: usize) -> (KbChart, Vec<f64>) {
    let n = a.nrows();
    if let Some(alpha) = seeds.get(index) {
        let positive = alpha.iter().all(|x| *x > 0.0);
        return if positive {
            let mut z: Vec<f64> = alpha.iter().map(|x| x.ln()).collect();
            z.push(0.0);
            (KbChart::PositiveCone, z)
        } else {
            let mut z: Vec<f64> = alpha.iter().copied().collect();
            z.push(0.0);
            (KbChart::Free, z)
        };
    }
    let mut rng = restart_rng(seed, index);
    if (index - seeds.len()).is_multiple_of(2) {
        let mut z: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
        z.push(rng.gen_range(-3.0..3.0));
        (KbChart::PositiveCone, z)
    } else {
        let mut z: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        z.push(rng.gen_range(-2.0..2.0));
        (KbChart::Free, z)
    }
}

/// Left eigenvectors with negative real eigenvalue, each sign-normalized so
/// its largest component is positive.
fn eigen_seeds(a: &Matrix) -> Vec<Vector> {
    left_eigenpairs(a)
        .unwrap_or_default()
        .into_iter()
        .filter(|p| p.lambda < 0.0)
        .map(|p| {
            let sum = p.alpha.sum();
            if sum < 0.0 {
                -p.alpha
            } else {
                p.alpha
            }
        })
        .collect()
}

/// Searches `(k, b)` with `|k| = 1` for `R = ((diag(k) + b k k^T) A)^S`
/// negative definite, with `p = q = beta = 0`.
pub fn search_kb(a: &Matrix, budget: &SearchBudget) -> SearchOutcome {
    let budget = budget.sanitized();
    let n = a.nrows();
    if n == 0 || !a.is_square() {
        return inconclusive(f64::INFINITY, 0, 0, None);
    }
    let seeds = eigen_seeds(a);
    let run = |index: usize| {
        let (chart, z0) = kb_start(a, &seeds, budget.seed, index);
        let res = nelder_mead(
            |z| {
                let (k, b) = kb_from_chart(chart, z);
                kb_objective(a, &k, b)
            },
            &z0,
            0.5,
            budget.max_evals_per_restart,
        );
        (kb_from_chart(chart, &res.x), res.value, res.evals)
    };
    let verify = |(k, b): &(Vector, f64), _| {
        let params = Theorem1Params::from_kb(k.clone(), *b);
        match check_theorem1(a, &params, &InvariantSetArgument::r_negative_definite()) {
            Ok(CheckOutcome::Pass(cert)) => Some(cert),
            _ => None,
        }
    };
    let (found, best, evals, used) = multistart(&budget, run, verify);
    match found {
        Some(((k, b), cert)) => SearchOutcome {
            status: SearchStatus::Found,
            best_objective: kb_objective(a, &k, b),
            witness: Some(Theorem1Params::from_kb(k, b)),
            certificate: Some(cert),
            evals_used: evals,
            restarts_used: used,
        },
        None => {
            let ((k, b), v) = best.expect("at least one restart");
            inconclusive(v, evals, used, Some(Theorem1Params::from_kb(k, b)))
        }
    }
}

/// Solution of the linear certificate conditions for fixed `A`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearCandidate {
    pub p: Vector,
    pub beta: Vector,
    pub kappa: f64,
    pub mu: f64,
    pub g: f64,
}

impl LinearCandidate {
    pub fn trivial(n: usize) -> Self {
        Self {
            p: Vector::zeros(n),
            beta: Vector::zeros(n),
            kappa: 1.0,
            mu: 1.0,
            g: 0.0,
        }
    }

    pub fn is_trivial(&self) -> bool {
        self.p.iter().all(|x| *x == 0.0) && self.beta.iter().all(|x| *x == 0.0)
    }

    /// Parameters with this linear part and the given `(k, b, q, delta)`.
    pub fn params(&self, k: Vector, b: f64, q: Vector, delta: f64) -> Theorem1Params {
        Theorem1Params {
            kappa: self.kappa,
            mu: self.mu,
            g: self.g,
            delta,
            b,
            p: self.p.clone(),
            q,
            k,
            beta: self.beta.clone(),
        }
    }
}

/// Null vectors of the matrix whose rows are
/// `p_i (A_ij - A_jj) + p_j (A_ji - A_ii) = 0` for `i < j`. When every
/// `p_i` is nonzero, the symmetric linear condition forces exactly these
/// relations (the diagonal then fixes `beta = g p - diag(A)`).
fn pairwise_null_vectors(a: &Matrix) -> Vec<Vector> {
    let n = a.nrows();
    if n < 2 {
        return vec![Vector::from_element(n, 1.0)];
    }
    let rows = n * (n - 1) / 2;
    let mut m = Matrix::zeros(rows.max(n), n);
    let mut r = 0;
    for i in 0..n {
        for j in i + 1..n {
            m[(r, i)] = a[(i, j)] - a[(j, j)];
            m[(r, j)] = a[(j, i)] - a[(i, i)];
            r += 1;
        }
    }
    let scale = inf_norm(a).max(1.0);
    let svd = m.svd(false, true);
    let Some(v_t) = svd.v_t else {
        return Vec::new();
    };
    (0..n)
        .filter(|&i| svd.singular_values[i] <= 1e-10 * scale)
        .map(|i| v_t.row(i).transpose())
        .collect()
}

fn least_squares(m: &Matrix, rhs: &Vector) -> Option<Vector> {
    m.clone().svd(true, true).solve(rhs, 1e-12).ok()
}

/// For fixed `p` and `g`, solves the symmetric linear condition for `beta`
/// and the adjoint condition for `(kappa, mu)`; `None` when residuals or
/// sign constraints fail.
fn solve_for_p(a: &Matrix, p: &Vector, g: f64, tol: f64) -> Option<LinearCandidate> {
    let n = a.nrows();
    // symmetric condition, entry (i, j) with i <= j:
    // p_i A_ij + p_j A_ji + (beta_i - g p_i) p_j + (beta_j - g p_j) p_i = 0
    let rows = n * (n + 1) / 2;
    let mut m = Matrix::zeros(rows, n);
    let mut rhs = Vector::zeros(rows);
    let mut r = 0;
    for i in 0..n {
        for j in i..n {
            m[(r, i)] += p[j];
            m[(r, j)] += p[i];
            rhs[r] = -(p[i] * a[(i, j)] + p[j] * a[(j, i)]) + 2.0 * g * p[i] * p[j];
            r += 1;
        }
    }
    let mut beta = least_squares(&m, &rhs)?;
    if beta.iter().any(|x| *x < -tol) {
        return None;
    }
    beta.apply(|x| *x = x.max(0.0));

    // adjoint condition: kappa beta + nu p = -A^T p with nu = mu - g kappa
    let cols = Matrix::from_columns(&[beta.clone(), p.clone()]);
    let sol = least_squares(&cols, &(-(a.transpose() * p)))?;
    let (kappa, nu) = (sol[0], sol[1]);
    let mu = nu + g * kappa;
    let mut cand = LinearCandidate {
        p: p.clone(),
        beta,
        kappa,
        mu,
        g,
    };
    // fix the scale (p, kappa, g) -> (s p, s kappa, g / s) by kappa - p^T 1 = 1
    let s0 = cand.kappa - cand.p.sum();
    if s0 > 0.0 {
        let s = 1.0 / s0;
        cand.p *= s;
        cand.kappa *= s;
        cand.g /= s;
    }
    linear_candidate_ok(a, &cand, tol).then_some(cand)
}

fn linear_candidate_ok(a: &Matrix, c: &LinearCandidate, tol: f64) -> bool {
    let params = c.params(
        Vector::zeros(a.nrows()),
        0.0,
        Vector::zeros(a.nrows()),
        0.0,
    );
    c.kappa > 0.0
        && c.mu > 0.0
        && c.beta.iter().all(|x| *x >= 0.0)
        && params.growth_slack() >= -tol
        && params.linear_residual_matrix(a).amax() <= tol
        && vec_inf_norm(&params.adjoint_residual(a)) <= tol
}

/// Candidate `(p, beta, kappa, mu, g)` with `p != 0` solving the linear
/// conditions, followed by the trivial candidate `p = beta = 0`,
/// `kappa = mu = 1`, `g = 0`, which is always last.
///
/// Directions for `p` come from real left eigenvectors of `A` and from the
/// null space of the pairwise relations above; each is tried with both signs
/// and every `g` in [`G_GRID`]. Returned `p` satisfy `kappa - p^T 1 = 1`
/// whenever that normalization is reachable.
pub fn solve_linear_conditions(a: &Matrix) -> Vec<LinearCandidate> {
    let n = a.nrows();
    let mut out: Vec<LinearCandidate> = Vec::new();
    if n == 0 || !a.is_square() {
        return vec![LinearCandidate::trivial(n)];
    }
    let tol = linear_tolerance(a);
    let mut directions: Vec<Vector> = left_eigenpairs(a)
        .unwrap_or_default()
        .into_iter()
        .map(|p| p.alpha)
        .collect();
    directions.extend(pairwise_null_vectors(a));

    for dir in directions {
        let norm = dir.norm();
        if !(norm > 0.0) {
            continue;
        }
        let unit = dir / norm;
        // prefer -p >= 0
        let signs = if unit.sum() > 0.0 { [-1.0, 1.0] } else { [1.0, -1.0] };
        for s in signs {
            let p = &unit * s;
            for g in G_GRID {
                let Some(cand) = solve_for_p(a, &p, g, tol) else {
                    continue;
                };
                let dup = out.iter().any(|c| {
                    (&c.p - &cand.p).amax() <= 1e-9
                        && (&c.beta - &cand.beta).amax() <= 1e-9
                        && (c.g - cand.g).abs() <= 1e-9 * (1.0 + c.g.abs())
                });
                if !dup {
                    out.push(cand);
                }
            }
        }
    }
    out.push(LinearCandidate::trivial(n));
    out
}

/// Pipeline stage that produced a certificate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    VolterraLyapunov,
    Eigenvector,
    KbSearch,
    GeneralLinear,
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::VolterraLyapunov => "volterra_lyapunov",
            Self::Eigenvector => "eigenvector",
            Self::KbSearch => "kb_search",
            Self::GeneralLinear => "general_linear",
        })
    }
}

/// Best value reached by one stage; for the searches, the final `lambda_max`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageSummary {
    pub stage: Stage,
    pub best_objective: Option<f64>,
    pub evals_used: usize,
    pub note: String,
}

#[derive(Debug, Clone, PartialEq)]
pub enum AutoCertifyResult {
    Certified {
        stage: Stage,
        certificate: Box<Certificate>,
        stages: Vec<StageSummary>,
    },
    /// No stage succeeded within budget. This is not evidence against
    /// global attractivity.
    Inconclusive { stages: Vec<StageSummary> },
}

impl AutoCertifyResult {
    pub fn certificate(&self) -> Option<&Certificate> {
        match self {
            Self::Certified { certificate, .. } => Some(certificate),
            Self::Inconclusive { .. } => None,
        }
    }

    pub fn stages(&self) -> &[StageSummary] {
        match self {
            Self::Certified { stages, .. } | Self::Inconclusive { stages } => stages,
        }
    }
}

/// Tries, in order: a Volterra-Lyapunov weight; the eigenvector conditions;
/// a `(k, b)` witness with `p = q = beta = 0`; and nontrivial solutions of
/// the linear conditions whose invariant-set step can be decided (currently
/// the structured three-species family, up to relabelling).
pub fn auto_certify(a: &Matrix, budget: &SearchBudget) -> Result<AutoCertifyResult, CertificateError> {
    if !a.is_square() || a.nrows() == 0 {
        return Err(CertificateError::DimensionMismatch {
            expected: a.nrows(),
            got: a.ncols(),
        });
    }
    let mut stages = Vec::new();

    let vl = search_volterra_lyapunov(a, budget);
    stages.push(StageSummary {
        stage: Stage::VolterraLyapunov,
        best_objective: Some(vl.best_objective),
        evals_used: vl.evals_used,
        note: format!("{} restarts", vl.restarts_used),
    });
    if let Some(cert) = vl.certificate {
        return Ok(AutoCertifyResult::Certified {
            stage: Stage::VolterraLyapunov,
            certificate: cert,
            stages,
        });
    }

    match check_eigenvector_conditions(a)? {
        CheckOutcome::Pass(cert) => {
            stages.push(StageSummary {
                stage: Stage::Eigenvector,
                best_objective: cert.margins.get("restricted_negative_definite").map(|m| -m),
                evals_used: 0,
                note: String::new(),
            });
            return Ok(AutoCertifyResult::Certified {
                stage: Stage::Eigenvector,
                certificate: cert,
                stages,
            });
        }
        CheckOutcome::Fail(fail) => stages.push(StageSummary {
            stage: Stage::Eigenvector,
            best_objective: fail.margins.get("restricted_negative_definite").map(|m| -m),
            evals_used: 0,
            note: fail.reasons.join("; "),
        }),
    }

    let kb = search_kb(a, budget);
    stages.push(StageSummary {
        stage: Stage::KbSearch,
        best_objective: Some(kb.best_objective),
        evals_used: kb.evals_used,
        note: format!("{} restarts", kb.restarts_used),
    });
    if let Some(cert) = kb.certificate {
        return Ok(AutoCertifyResult::Certified {
            stage: Stage::KbSearch,
            certificate: cert,
            stages,
        });
    }

    let candidates = solve_linear_conditions(a);
    let nontrivial = candidates.iter().filter(|c| !c.is_trivial()).count();
    let mut note = format!("{nontrivial} nontrivial linear candidates");
    if nontrivial > 0 {
        if let Some((sf, perm)) = detect_structured_family(a) {
            let canonical = sf.certificate_params();
            let params = Theorem1Params {
                p: unpermute(&canonical.p, &perm),
                q: unpermute(&canonical.q, &perm),
                k: unpermute(&canonical.k, &perm),
                beta: unpermute(&canonical.beta, &perm),
                ..canonical
            };
            let inv = InvariantSetArgument::structured_permuted(sf, Some(perm));
            match check_theorem1(a, &params, &inv) {
                Ok(CheckOutcome::Pass(cert)) => {
                    stages.push(StageSummary {
                        stage: Stage::GeneralLinear,
                        best_objective: None,
                        evals_used: 0,
                        note,
                    });
                    return Ok(AutoCertifyResult::Certified {
                        stage: Stage::GeneralLinear,
                        certificate: cert,
                        stages,
                    });
                }
                Ok(CheckOutcome::Fail(fail)) => note.push_str(&format!("; {}", fail.reasons.join("; "))),
                Err(e) => note.push_str(&format!("; {e}")),
            }
        } else {
            note.push_str("; no decidable invariant-set argument for this matrix");
        }
    }
    stages.push(StageSummary {
        stage: Stage::GeneralLinear,
        best_objective: None,
        evals_used: 0,
        note,
    });
    Ok(AutoCertifyResult::Inconclusive { stages })
}
