//! Lyapunov-type functions attached to a certificate and their time
//! derivatives along `x' = diag(x) A (x - 1)`.
//!
//! With `L(x) = sum k_i ln x_i` and `S(x) = p^T (x - 1) + kappa`:
//!
//! ```text
//! V(x)   = (k^T (x - 1) - 1/b) exp(b L) + 1/b           (b != 0)
//!        = k^T (x - 1) - L                              (b == 0)
//! V'(x)  = (x - 1)^T R (x - 1) exp(b L)
//! S'(x)  = -S beta^T x + g S^2 - (mu - beta^T 1 + g kappa) S + kappa mu
//! W_c(x) = q^T (x - 1) - sum (q_i - c p_i) ln x_i - c kappa ln(S / kappa)
//! U_c    = V + W_c
//! U_c'   = (x-1)^T R (x-1) exp(b L) + (x-1)^T Q (x-1)
//!          - (c mu / S - delta) (p^T (x - 1))^2
//! ```
//!
//! The closed forms of `S'` and `U_c'` hold only when the certificate's
//! linear conditions do; [`eval_s_dot_direct`] gives the raw chain rule.

use crate::certificates::{CertificateFamily, Theorem1Params};
use crate::sim::{integrate, IntegrateOptions, SampleGrid, SimError, Trajectory};
use crate::{Matrix, Vector};
use thiserror::Error;

/// Smallest admissible `S = p^T (x - 1) + kappa`.
pub const S_FLOOR: f64 = 1e-12;
/// Smallest admissible state component.
pub const X_FLOOR: f64 = 1e-300;
/// Headroom factor applied by [`choose_c`].
pub const C_HEADROOM: f64 = 1.1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LyapunovError {
    #[error("outside the domain: {0}")]
    DomainError(String),
    #[error("invalid context: {0}")]
    InvalidContext(String),
    #[error(transparent)]
    Sim(#[from] SimError),
}

/// Interaction matrix, certificate parameters and the scale `c > 0`.
#[derive(Debug, Clone)]
pub struct LyapunovContext {
    a: Matrix,
    params: Theorem1Params,
    c: f64,
    r: Matrix,
    q: Matrix,
}

impl LyapunovContext {
    pub fn new(a: Matrix, params: Theorem1Params, c: f64) -> Result<Self, LyapunovError> {
        if !(c > 0.0) || !c.is_finite() {
            return Err(LyapunovError::InvalidContext(format!("c must be positive, got {c}")));
        }
        if !a.is_square() || a.nrows() != params.dim() {
            return Err(LyapunovError::InvalidContext(format!(
                "matrix is {}x{}, parameters have dimension {}",
                a.nrows(),
                a.ncols(),
                params.dim()
            )));
        }
        params
            .validate(a.nrows())
            .map_err(|e| LyapunovError::InvalidContext(e.to_string()))?;
        let r = params.r_matrix(&a);
        let q = params.q_matrix(&a);
        Ok(Self { a, params, c, r, q })
    }

    pub fn with_c(&self, c: f64) -> Result<Self, LyapunovError> {
        Self::new(self.a.clone(), self.params.clone(), c)
    }

    pub fn a(&self) -> &Matrix {
        &self.a
    }

    pub fn params(&self) -> &Theorem1Params {
        &self.params
    }

    pub fn c(&self) -> f64 {
        self.c
    }

    fn check_state(&self, x: &Vector) -> Result<(), LyapunovError> {
        if x.len() != self.a.nrows() {
            return Err(LyapunovError::DomainError(format!(
                "state has length {}, expected {}",
                x.len(),
                self.a.nrows()
            )));
        }
        if let Some((i, v)) = x.iter().enumerate().find(|(_, v)| !(**v > X_FLOOR)) {
            return Err(LyapunovError::DomainError(format!("x[{i}] = {v:e} is not interior")));
        }
        Ok(())
    }

    fn checked_s(&self, x: &Vector) -> Result<f64, LyapunovError> {
        self.check_state(x)?;
        let s = s_value(&self.params, x);
        if !(s > S_FLOOR) {
            return Err(LyapunovError::DomainError(format!(
                "p^T (x - 1) + kappa = {s:e} is not positive"
            )));
        }
        Ok(s)
    }

    /// `b sum k_i ln x_i`, the log of the product weight.
    fn log_weight(&self, x: &Vector) -> f64 {
        self.params.b * log_dot(&self.params.k, x)
    }
}

fn log_dot(w: &Vector, x: &Vector) -> f64 {
    w.iter().zip(x.iter()).map(|(wi, xi)| wi * xi.ln()).sum()
}

fn s_value(params: &Theorem1Params, x: &Vector) -> f64 {
    params.p.dot(&x.add_scalar(-1.0)) + params.kappa
}

fn quad(m: &Matrix, d: &Vector) -> f64 {
    d.dot(&(m * d))
}

/// `f(s) = s - 1 - ln s`.
pub fn f_scalar(s: f64) -> Result<f64, LyapunovError> {
    if !(s > 0.0) {
        return Err(LyapunovError::DomainError(format!("f needs s > 0, got {s}")));
    }
    // s - 1 - ln(s) = (s - 1) - ln_1p(s - 1) keeps accuracy near s = 1
    let d = s - 1.0;
    Ok(if d.abs() < 0.5 { d - d.ln_1p() } else { s - 1.0 - s.ln() })
}

pub fn eval_v(ctx: &LyapunovContext, x: &Vector) -> Result<f64, LyapunovError> {
    ctx.check_state(x)?;
    let k = &ctx.params.k;
    let linear = k.dot(&x.add_scalar(-1.0));
    let b = ctx.params.b;
    if b == 0.0 {
        Ok(linear - log_dot(k, x))
    } else {
        let lw = ctx.log_weight(x);
        // (k^T(x-1) - 1/b) e^{bL} + 1/b = k^T(x-1) e^{bL} - (e^{bL} - 1)/b
        Ok(linear * lw.exp() - lw.exp_m1() / b)
    }
}

pub fn eval_v_dot(ctx: &LyapunovContext, x: &Vector) -> Result<f64, LyapunovError> {
    ctx.check_state(x)?;
    let d = x.add_scalar(-1.0);
    let weight = if ctx.params.b == 0.0 {
        1.0
    } else {
        ctx.log_weight(x).exp()
    };
    Ok(quad(&ctx.r, &d) * weight)
}

pub fn eval_s(ctx: &LyapunovContext, x: &Vector) -> Result<f64, LyapunovError> {
    ctx.check_state(x)?;
    Ok(s_value(&ctx.params, x))
}

/// Closed form `-S beta^T x + g S^2 - (mu - beta^T 1 + g kappa) S + kappa mu`.
pub fn eval_s_dot(ctx: &LyapunovContext, x: &Vector) -> Result<f64, LyapunovError> {
    ctx.check_state(x)?;
    let p = &ctx.params;
    let s = s_value(p, x);
    Ok(-s * p.beta.dot(x) + p.g * s * s - (p.mu - p.beta.sum() + p.g * p.kappa) * s
        + p.kappa * p.mu)
}

/// Alternative closed form `-S (beta - g p)^T (x - 1) - mu (S - kappa)`.
pub fn eval_s_dot_alt(ctx: &LyapunovContext, x: &Vector) -> Result<f64, LyapunovError> {
    ctx.check_state(x)?;
    let p = &ctx.params;
    let s = s_value(p, x);
    let shifted = &p.beta - &p.p * p.g;
    Ok(-s * shifted.dot(&x.add_scalar(-1.0)) - p.mu * (s - p.kappa))
}

/// Chain rule `p^T diag(x) A (x - 1)`, valid for any parameters.
pub fn eval_s_dot_direct(ctx: &LyapunovContext, x: &Vector) -> Result<f64, LyapunovError> {
    ctx.check_state(x)?;
    Ok(ctx.params.p.dot(&crate::model::normalized_field(&ctx.a, x)))
}

/// `W_c = q^T (x - 1) - sum (q_i - c p_i) ln x_i - c kappa ln(S / kappa)`.
pub fn eval_wc(ctx: &LyapunovContext, x: &Vector) -> Result<f64, LyapunovError> {
    let s = ctx.checked_s(x)?;
    let p = &ctx.params;
    let c = ctx.c;
    let shifted = &p.q - &p.p * c;
    Ok(p.q.dot(&x.add_scalar(-1.0)) - log_dot(&shifted, x) - c * p.kappa * (s / p.kappa).ln())
}

/// `U_c`, evaluated from its sum-of-`f` form.
pub fn eval_uc(ctx: &LyapunovContext, x: &Vector) -> Result<f64, LyapunovError> {
    let s = ctx.checked_s(x)?;
    let p = &ctx.params;
    let c = ctx.c;
    let tail = c * p.kappa * f_scalar(s / p.kappa)?;
    let mut sum = 0.0;
    let value = if p.b == 0.0 {
        for i in 0..x.len() {
            sum += (p.q[i] + p.k[i] - c * p.p[i]) * f_scalar(x[i])?;
        }
        sum + tail
    } else {
        for i in 0..x.len() {
            sum += (p.q[i] - c * p.p[i]) * f_scalar(x[i])?;
        }
        sum + tail + eval_v(ctx, x)?
    };
    debug_assert!({
        let split = eval_v(ctx, x)? + eval_wc(ctx, x)?;
        (value - split).abs() <= 1e-8 * (1.0 + value.abs().max(split.abs()))
    });
    Ok(value)
}

pub fn eval_uc_dot(ctx: &LyapunovContext, x: &Vector) -> Result<f64, LyapunovError> {
    let s = ctx.checked_s(x)?;
    let p = &ctx.params;
    let d = x.add_scalar(-1.0);
    let pd = p.p.dot(&d);
    let v_dot = eval_v_dot(ctx, x)?;
    Ok(v_dot + quad(&ctx.q, &d) - (ctx.c * p.mu / s - p.delta) * pd * pd)
}

/// Scale `c` making `U_c' <= 0` along a trajectory whose `p^T (x - 1)` never
/// exceeds `trajectory_sup`:
///
/// * statement a: `(delta + 1)/mu (kappa + sup)`;
/// * statements b, c: `c* + (delta + 1)/mu (kappa + sup)`;
///
/// times [`C_HEADROOM`]. Classical families use the statement-b rule with
/// `c* = 0`.
pub fn choose_c(
    params: &Theorem1Params,
    trajectory_sup: f64,
    family: CertificateFamily,
    c_star: Option<f64>,
) -> f64 {
    let base = (params.delta + 1.0) / params.mu * (params.kappa + trajectory_sup);
    let offset = match family {
        CertificateFamily::Theorem1A => 0.0,
        _ => c_star.unwrap_or(0.0),
    };
    C_HEADROOM * (offset + base)
}

/// Largest `p^T (x - 1)` over the recorded states.
pub fn trajectory_sup(params: &Theorem1Params, traj: &Trajectory) -> f64 {
    traj.states
        .iter()
        .map(|x| params.p.dot(&x.add_scalar(-1.0)))
        .fold(f64::NEG_INFINITY, f64::max)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryCheckOptions {
    pub t_end: f64,
    pub integrate: IntegrateOptions,
    /// Allowed increase of `U_c` between consecutive accepted steps.
    pub monotone_tol: f64,
    /// Allowed positive value of `U_c'` at accepted steps.
    pub sign_tol: f64,
    /// Number of interior times at which derivatives are compared with
    /// centered differences of dense output.
    pub fd_points: usize,
    pub fd_rel_tol: f64,
    /// Derivatives smaller than this are compared in absolute terms.
    pub fd_abs_floor: f64,
}

impl Default for TrajectoryCheckOptions {
    fn default() -> Self {
        Self {
            t_end: 100.0,
            integrate: IntegrateOptions::with_tolerances(1e-12, 1e-14),
            monotone_tol: 1e-8,
            sign_tol: 1e-9,
            fd_points: 100,
            fd_rel_tol: 1e-5,
            fd_abs_floor: 1e-9,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ViolationKind {
    Increase,
    PositiveDerivative,
    FiniteDifference,
}

impl std::fmt::Display for ViolationKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Increase => "U_c increased",
            Self::PositiveDerivative => "U_c' positive",
            Self::FiniteDifference => "derivative disagrees with finite difference",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub kind: ViolationKind,
    pub t: f64,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryCheck {
    pub accepted_steps: usize,
    pub max_increase: f64,
    pub max_uc_dot: f64,
    /// Worst relative disagreement for the pairs (V, V'), (S, S'), (U_c, U_c').
    pub max_fd_rel_error: [f64; 3],
    pub first_violation: Option<Violation>,
}

impl TrajectoryCheck {
    pub fn passed(&self) -> bool {
        self.first_violation.is_none()
    }
}

fn note_violation(slot: &mut Option<Violation>, kind: ViolationKind, t: f64, value: f64) {
    if slot.as_ref().is_none_or(|v| t < v.t) {
        *slot = Some(Violation { kind, t, value });
    }
}

/// Integrates from `x0` and checks that `U_c` is nonincreasing, that `U_c'`
/// is nonpositive, and that the closed-form derivatives of `V`, `S` and
/// `U_c` match centered differences along the flow. Reports the earliest
/// violation.
pub fn check_along_trajectory(
    ctx: &LyapunovContext,
    x0: &Vector,
    opts: &TrajectoryCheckOptions,
) -> Result<TrajectoryCheck, LyapunovError> {
    let steps_opts = IntegrateOptions {
        samples: SampleGrid::AcceptedSteps,
        ..opts.integrate.clone()
    };
    let traj = integrate(&ctx.a, x0, opts.t_end, &steps_opts)?;

    let mut first_violation = None;
    let mut max_increase = f64::NEG_INFINITY;
    let mut max_uc_dot = f64::NEG_INFINITY;
    let mut prev: Option<f64> = None;
    for (t, x) in traj.times.iter().zip(&traj.states) {
        let u = eval_uc(ctx, x)?;
        let du = eval_uc_dot(ctx, x)?;
        max_uc_dot = max_uc_dot.max(du);
        if du > opts.sign_tol {
            note_violation(&mut first_violation, ViolationKind::PositiveDerivative, *t, du);
        }
        if let Some(p) = prev {
            let inc = u - p;
            max_increase = max_increase.max(inc);
            if inc > opts.monotone_tol {
                note_violation(&mut first_violation, ViolationKind::Increase, *t, inc);
            }
        }
        prev = Some(u);
    }

    let mut max_fd = [0.0f64; 3];
    if opts.fd_points > 0 {
        let mut times = Vec::with_capacity(3 * opts.fd_points);
        let mut centers = Vec::with_capacity(opts.fd_points);
        for j in 0..opts.fd_points {
            let t = opts.t_end * (j + 1) as f64 / (opts.fd_points + 1) as f64;
            let h = 1e-6 * (1.0 + t.abs());
            if times.last().is_some_and(|&last| t - h <= last) {
                continue;
            }
            times.extend([t - h, t, t + h]);
            centers.push((t, h));
        }
        let dense_opts = IntegrateOptions {
            samples: SampleGrid::Times(times),
            ..opts.integrate.clone()
        };
        let dense = integrate(&ctx.a, x0, opts.t_end, &dense_opts)?;
        type Pair = (
            fn(&LyapunovContext, &Vector) -> Result<f64, LyapunovError>,
            fn(&LyapunovContext, &Vector) -> Result<f64, LyapunovError>,
        );
        let pairs: [Pair; 3] = [(eval_v, eval_v_dot), (eval_s, eval_s_dot), (eval_uc, eval_uc_dot)];
        for (j, &(t, h)) in centers.iter().enumerate() {
            let (xm, x, xp) = (&dense.states[3 * j], &dense.states[3 * j + 1], &dense.states[3 * j + 2]);
            for (slot, (value, deriv)) in pairs.iter().enumerate() {
                let fd = (value(ctx, xp)? - value(ctx, xm)?) / (2.0 * h);
                let an = deriv(ctx, x)?;
                let rel = (fd - an).abs() / an.abs().max(opts.fd_abs_floor);
                max_fd[slot] = max_fd[slot].max(rel);
                if rel > opts.fd_rel_tol {
                    note_violation(&mut first_violation, ViolationKind::FiniteDifference, t, rel);
                }
            }
        }
    }

    Ok(TrajectoryCheck {
        accepted_steps: traj.step_stats.accepted,
        max_increase,
        max_uc_dot,
        max_fd_rel_error: max_fd,
        first_violation,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    fn example1_ctx() -> LyapunovContext {
        let (k, b) = fixtures::example1_kb();
        LyapunovContext::new(fixtures::example1_matrix(), Theorem1Params::from_kb(k, b), 1.1).unwrap()
    }

    #[test]
    fn f_values() {
        assert_eq!(f_scalar(1.0).unwrap(), 0.0);
        let e = std::f64::consts::E;
        assert!((f_scalar(e).unwrap() - (e - 2.0)).abs() < 1e-15);
        assert!((f_scalar(0.1).unwrap() - (0.1 - 1.0 - 0.1f64.ln())).abs() < 1e-15);
        assert!((f_scalar(0.1).unwrap() - 1.402_585_092_994_045_7).abs() < 1e-14);
        assert!(f_scalar(0.0).is_err());
        assert!(f_scalar(-1.0).is_err());
    }

    #[test]
    fn v_values() {
        let ctx = example1_ctx();
        let one = Vector::from_element(3, 1.0);
        assert_eq!(eval_v(&ctx, &one).unwrap(), 0.0);
        let x = Vector::from_vec(vec![2.0, 1.0, 1.0]);
        let want = 5.0 * 2f64.powf(-0.25) - 4.0;
        assert!((eval_v(&ctx, &x).unwrap() - want).abs() < 1e-14);

        let ctx0 = LyapunovContext::new(
            -Matrix::identity(2, 2),
            Theorem1Params::from_kb(Vector::from_element(2, 1.0), 0.0),
            1.0,
        )
        .unwrap();
        let x = Vector::from_vec(vec![2.0, 0.5]);
        assert!((eval_v(&ctx0, &x).unwrap() - 0.5).abs() < 1e-15);
        assert!(eval_v(&ctx0, &Vector::from_vec(vec![0.0, 1.0])).is_err());
    }

    #[test]
    fn derivatives_vanish_at_equilibrium() {
        let ctx = example1_ctx();
        let one = Vector::from_element(3, 1.0);
        assert_eq!(eval_v_dot(&ctx, &one).unwrap(), 0.0);
        assert_eq!(eval_uc(&ctx, &one).unwrap(), 0.0);
        assert_eq!(eval_uc_dot(&ctx, &one).unwrap(), 0.0);
        assert_eq!(eval_s(&ctx, &one).unwrap(), 1.0);
        assert_eq!(eval_s_dot(&ctx, &one).unwrap(), 0.0);
        assert_eq!(eval_s_dot_alt(&ctx, &one).unwrap(), 0.0);
    }

    #[test]
    fn s_is_constant_without_p_and_beta() {
        let ctx = example1_ctx();
        let x = Vector::from_vec(vec![0.3, 4.0, 1.7]);
        assert_eq!(eval_s(&ctx, &x).unwrap(), 1.0);
        assert_eq!(eval_s_dot(&ctx, &x).unwrap(), 0.0);
    }

    #[test]
    fn v_dot_sign_with_negative_definite_r() {
        let ctx = example1_ctx();
        for x in [[0.5, 2.0, 1.5], [3.0, 0.1, 0.2], [1.0, 1.0, 1.1]] {
            assert!(eval_v_dot(&ctx, &Vector::from_row_slice(&x)).unwrap() < 0.0);
        }
    }

    #[test]
    fn volterra_lyapunov_reduction() {
        let a = fixtures::example1_matrix();
        let h = Vector::from_vec(vec![1.0, 2.0, 0.5]);
        let ctx = LyapunovContext::new(a.clone(), Theorem1Params::from_kb(h.clone(), 0.0), 2.0).unwrap();
        let x = Vector::from_vec(vec![0.4, 1.9, 2.2]);
        let classical: f64 = (0..3).map(|i| h[i] * f_scalar(x[i]).unwrap()).sum();
        assert!((eval_uc(&ctx, &x).unwrap() - classical).abs() < 1e-14);
        let d = x.add_scalar(-1.0);
        let z = crate::matrixops::symmetric_part(&(Matrix::from_diagonal(&h) * &a));
        assert!((eval_uc_dot(&ctx, &x).unwrap() - d.dot(&(z * &d))).abs() < 1e-14);
    }

    #[test]
    fn structured_closed_forms_agree() {
        let sf = fixtures::structured_default();
        let (a, params, _) = crate::certificates::build_structured_family(&sf).unwrap();
        let ctx = LyapunovContext::new(a, params, 3.0).unwrap();
        for x in [[0.5, 1.2, 2.0], [3.0, 0.2, 0.9], [1.0, 1.0, 1.0], [0.05, 4.0, 0.3]] {
            let x = Vector::from_row_slice(&x);
            let s25 = eval_s_dot(&ctx, &x).unwrap();
            let s27 = eval_s_dot_alt(&ctx, &x).unwrap();
            let direct = eval_s_dot_direct(&ctx, &x).unwrap();
            assert!((s25 - s27).abs() <= 1e-10 * (1.0 + s25.abs()));
            assert!((s25 - direct).abs() <= 1e-10 * (1.0 + s25.abs()));
            let uc = eval_uc(&ctx, &x).unwrap();
            let split = eval_v(&ctx, &x).unwrap() + eval_wc(&ctx, &x).unwrap();
            assert!((uc - split).abs() <= 1e-12 * (1.0 + uc.abs()));
        }
    }

    #[test]
    fn domain_guard() {
        let sf = fixtures::structured_default();
        let (a, params, _) = crate::certificates::build_structured_family(&sf).unwrap();
        let ctx = LyapunovContext::new(a, params, 1.0).unwrap();
        // S = kappa - sum(y*) + ... ; push p^T(x - 1) below -kappa
        let x = Vector::from_vec(vec![100.0, 100.0, 100.0]);
        assert!(matches!(eval_uc(&ctx, &x), Err(LyapunovError::DomainError(_))));
        assert!(eval_s(&ctx, &x).unwrap() < 0.0);
        assert!(LyapunovContext::new(Matrix::identity(3, 3), ctx.params().clone(), 0.0).is_err());
    }

    #[test]
    fn choose_c_examples() {
        let params = Theorem1Params::from_kb(Vector::from_element(2, 1.0), 0.0);
        let c = choose_c(&params, 0.0, CertificateFamily::Theorem1A, None);
        assert!((c - 1.1).abs() < 1e-15);

        let mut params = Theorem1Params::from_kb(Vector::from_element(2, 1.0), 0.0);
        params.delta = 1.0;
        params.mu = 2.0;
        params.kappa = 1.0;
        let c = choose_c(&params, 3.0, CertificateFamily::Theorem1A, Some(5.0));
        assert!((c - 4.4).abs() < 1e-14);
        let c = choose_c(&params, 3.0, CertificateFamily::Theorem1B, Some(0.5));
        assert!((c - 1.1 * 4.5).abs() < 1e-14);
    }

    #[test]
    fn branch_continuity_in_b() {
        let a = fixtures::example1_matrix();
        let k = Vector::from_vec(vec![1.0, 0.5, 1.25]);
        let x = Vector::from_vec(vec![0.7, 1.8, 2.4]);
        let v0 = eval_v(
            &LyapunovContext::new(a.clone(), Theorem1Params::from_kb(k.clone(), 0.0), 1.0).unwrap(),
            &x,
        )
        .unwrap();
        let mut ratios = Vec::new();
        for b in [1e-4, -1e-4, 1e-6, -1e-6] {
            let vb = eval_v(
                &LyapunovContext::new(a.clone(), Theorem1Params::from_kb(k.clone(), b), 1.0).unwrap(),
                &x,
            )
            .unwrap();
            ratios.push((vb - v0).abs() / b.abs());
        }
        // |V_b - V_0| <= C |b| with one constant for all b
        let c = ratios.iter().copied().fold(0.0, f64::max);
        assert!(c < 10.0, "{ratios:?}");
        assert!(ratios.iter().all(|r| r.is_finite()));
    }

    fn reference_ctx_for(x0: &Vector, t_end: f64) -> LyapunovContext {
        let a = fixtures::example1_matrix();
        let (k, b) = fixtures::example1_kb();
        let params = Theorem1Params::from_kb(k, b);
        let traj = integrate(&a, x0, t_end, &IntegrateOptions::default()).unwrap();
        let sup = trajectory_sup(&params, &traj);
        let c = choose_c(&params, sup, CertificateFamily::Theorem1C, Some(1e-3));
        LyapunovContext::new(a, params, c).unwrap()
    }

    #[test]
    fn example1_trajectory_check() {
        let x0 = Vector::from_vec(vec![0.5, 2.0, 1.5]);
        let ctx = reference_ctx_for(&x0, 100.0);
        let report = check_along_trajectory(&ctx, &x0, &TrajectoryCheckOptions::default()).unwrap();
        assert!(report.passed(), "{report:?}");
        assert!(report.max_fd_rel_error.iter().all(|e| *e < 1e-5), "{report:?}");
    }

    #[test]
    fn corrupted_certificate_is_caught() {
        let a = fixtures::example1_matrix();
        let (mut k, b) = fixtures::example1_kb();
        k[1] = -k[1];
        let ctx = LyapunovContext::new(a, Theorem1Params::from_kb(k, b), 1.0).unwrap();
        let x0 = Vector::from_vec(vec![0.5, 2.0, 1.5]);
        let report = check_along_trajectory(&ctx, &x0, &TrajectoryCheckOptions::default()).unwrap();
        let v = report.first_violation.expect("violation located");
        assert!(v.t >= 0.0 && v.t <= 100.0);
    }

    #[test]
    fn equilibrium_trajectory_check() {
        let x0 = Vector::from_element(3, 1.0);
        let ctx = reference_ctx_for(&x0, 10.0);
        let opts = TrajectoryCheckOptions {
            t_end: 10.0,
            ..TrajectoryCheckOptions::default()
        };
        let report = check_along_trajectory(&ctx, &x0, &opts).unwrap();
        assert!(report.passed());
        assert_eq!(report.max_uc_dot, 0.0);
    }
}
