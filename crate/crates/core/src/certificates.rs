//! Certificate families for global attractivity of `x* = 1` in
//! `x' = diag(x) A (x - 1)`.
//!
//! Three families are checked:
//!
//! * Volterra-Lyapunov: `(diag(h) A)^S` negative definite for some `h > 0`.
//! * Eigenvector conditions: a left eigenpair `alpha^T A = lambda alpha^T`
//!   with `lambda < 0`, no zero component, and `diag(alpha) A` negative
//!   definite on the hyperplane orthogonal to `alpha`.
//! * The generalized certificate `(kappa, mu, g, delta, b, p, q, k, beta)`
//!   with `R = ((diag(k) + b k k^T) A)^S` and `Q = (diag(q) A - delta p p^T)^S`
//!   negative semidefinite and the linear conditions
//!
//!   ```text
//!   mu >= beta^T 1 - kappa g
//!   (diag(p) A + (beta - g p) p^T)^S = 0
//!   A^T p = -(mu - g kappa) p - kappa beta
//!   ```
//!
//!   plus an argument that the largest invariant set of the zero-derivative
//!   set meets the open orthant only at `1`.
//!
//! Margins are always "distance to failure": nonnegative when the condition
//! holds. Tolerance-band checks report `tol - residual`; strict checks
//! (negative definiteness, strict inequalities) report the raw slack, which
//! must exceed the band.

use crate::matrixops::{
    self, classify, default_tolerance, inf_norm, left_eigenpairs, lemma1_combination,
    restricted_definiteness, symmetric_part, vec_inf_norm, DefinitenessVerdict, Lemma1Outcome,
    MatrixError,
};
use crate::model::normalized_field;
use crate::{Matrix, Vector};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

/// Components of `p` this small (relative to `max(1, |p|_inf)`) count as zero
/// in the sign tests.
pub const P_ZERO_RTOL: f64 = 1e-12;

pub const SIDE_BOUNDED: &str =
    "boundedness of every interior solution: not proven here, empirical diagnostics only";
pub const SIDE_PERSISTENT: &str =
    "strong persistence of every interior solution: not proven here, empirical diagnostics only";
pub const SIDE_PERMANENCE: &str =
    "permanence of the system (required by the eigenvector conditions): not proven here";
pub const SIDE_USER_INVARIANT_SET: &str =
    "largest invariant set meets the open orthant only at 1: asserted by the user, not verified";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CertificateError {
    #[error("invalid certificate parameters: {0}")]
    InvalidParams(String),
    #[error("invariant-set argument not supported: {0}")]
    UnsupportedInvariantSetMode(String),
    #[error("weights must be strictly positive (component {index} is {value:e})")]
    NotInterior { index: usize, value: f64 },
    #[error("invalid structured-family parameters: {0}")]
    InvalidFamilyParams(String),
    #[error("matrix does not have the structured-family shape: {0}")]
    ShapeMismatch(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error(transparent)]
    Matrix(#[from] MatrixError),
}

/// Residual band for the linear equality conditions: `1e-8 (1 + |A|_inf)`.
pub fn linear_tolerance(a: &Matrix) -> f64 {
    1e-8 * (1.0 + inf_norm(a))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Theorem1Params {
    pub kappa: f64,
    pub mu: f64,
    pub g: f64,
    pub delta: f64,
    pub b: f64,
    #[serde(with = "crate::serde_vec::vector")]
    pub p: Vector,
    #[serde(with = "crate::serde_vec::vector")]
    pub q: Vector,
    #[serde(with = "crate::serde_vec::vector")]
    pub k: Vector,
    #[serde(with = "crate::serde_vec::vector")]
    pub beta: Vector,
}

impl Theorem1Params {
    /// `kappa = mu = 1`, `g = delta = 0`, `p = q = beta = 0` with the given `(k, b)`.
    pub fn from_kb(k: Vector, b: f64) -> Self {
        let n = k.len();
        Self {
            kappa: 1.0,
            mu: 1.0,
            g: 0.0,
            delta: 0.0,
            b,
            p: Vector::zeros(n),
            q: Vector::zeros(n),
            k,
            beta: Vector::zeros(n),
        }
    }

    /// Embedding of a Volterra-Lyapunov weight `h`: `k = h`, `b = 0`.
    pub fn from_volterra_lyapunov(h: Vector) -> Self {
        Self::from_kb(h, 0.0)
    }

    pub fn dim(&self) -> usize {
        self.k.len()
    }

    pub fn validate(&self, n: usize) -> Result<(), CertificateError> {
        for (name, v) in [("p", &self.p), ("q", &self.q), ("k", &self.k), ("beta", &self.beta)] {
            if v.len() != n {
                return Err(CertificateError::InvalidParams(format!(
                    "{name} has length {}, expected {n}",
                    v.len()
                )));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(CertificateError::InvalidParams(format!("{name} is not finite")));
            }
        }
        let scalars = [
            ("kappa", self.kappa),
            ("mu", self.mu),
            ("g", self.g),
            ("delta", self.delta),
            ("b", self.b),
        ];
        if let Some((name, _)) = scalars.iter().find(|(_, v)| !v.is_finite()) {
            return Err(CertificateError::InvalidParams(format!("{name} is not finite")));
        }
        if !(self.kappa > 0.0) || !(self.mu > 0.0) {
            return Err(CertificateError::InvalidParams(
                "kappa and mu must be positive".into(),
            ));
        }
        if self.g < 0.0 || self.delta < 0.0 {
            return Err(CertificateError::InvalidParams(
                "g and delta must be nonnegative".into(),
            ));
        }
        if let Some(i) = self.beta.iter().position(|&x| x < 0.0) {
            return Err(CertificateError::InvalidParams(format!(
                "beta[{i}] is negative"
            )));
        }
        Ok(())
    }

    /// `R = ((diag(k) + b k k^T) A)^S`.
    pub fn r_matrix(&self, a: &Matrix) -> Matrix {
        r_matrix(a, &self.k, self.b)
    }

    /// `Q = (diag(q) A - delta p p^T)^S`.
    pub fn q_matrix(&self, a: &Matrix) -> Matrix {
        symmetric_part(&(Matrix::from_diagonal(&self.q) * a - &self.p * self.p.transpose() * self.delta))
    }

    /// Residual matrix of `(diag(p) A + (beta - g p) p^T)^S = 0`.
    pub fn linear_residual_matrix(&self, a: &Matrix) -> Matrix {
        let shifted = &self.beta - &self.p * self.g;
        symmetric_part(&(Matrix::from_diagonal(&self.p) * a + shifted * self.p.transpose()))
    }

    /// Residual vector of `A^T p + (mu - g kappa) p + kappa beta = 0`.
    pub fn adjoint_residual(&self, a: &Matrix) -> Vector {
        a.transpose() * &self.p + &self.p * (self.mu - self.g * self.kappa) + &self.beta * self.kappa
    }

    /// Slack of `mu >= beta^T 1 - kappa g`.
    pub fn growth_slack(&self) -> f64 {
        self.mu - (self.beta.sum() - self.kappa * self.g)
    }
}

/// `((diag(k) + b k k^T) A)^S`, shared by the embeddings and the search.
pub fn r_matrix(a: &Matrix, k: &Vector, b: f64) -> Matrix {
    let weight = Matrix::from_diagonal(k) + k * k.transpose() * b;
    symmetric_part(&(weight * a))
}

/// `(diag(h) A)^S`.
pub fn weighted_symmetric_part(a: &Matrix, h: &Vector) -> Matrix {
    r_matrix(a, h, 0.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InvariantSetMode {
    /// `R` negative definite forces the zero-derivative set to `{1}`.
    RNegativeDefinite,
    /// The three-species structured family, whose invariant set is known in
    /// closed form.
    StructuredFamilyJ,
    /// Asserted by the user; carried as an unverified side condition.
    UserAsserted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvariantSetArgument {
    pub mode: InvariantSetMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub structured: Option<StructuredFamilyParams>,
    /// State relabelling: `A'[i][j] = A[perm[i]][perm[j]]` has the structured shape.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub permutation: Option<Vec<usize>>,
    /// Points of the invariant set, in the original coordinates.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub j_points: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub justification: Option<String>,
}

impl InvariantSetArgument {
    pub fn r_negative_definite() -> Self {
        Self {
            mode: InvariantSetMode::RNegativeDefinite,
            structured: None,
            permutation: None,
            j_points: None,
            justification: None,
        }
    }

    pub fn structured(sf: StructuredFamilyParams) -> Self {
        Self::structured_permuted(sf, None)
    }

    pub fn structured_permuted(sf: StructuredFamilyParams, permutation: Option<Vec<usize>>) -> Self {
        let points = sf
            .j_points()
            .iter()
            .map(|pt| {
                let v = match &permutation {
                    Some(perm) => unpermute(pt, perm),
                    None => pt.clone(),
                };
                v.iter().copied().collect()
            })
            .collect();
        Self {
            mode: InvariantSetMode::StructuredFamilyJ,
            structured: Some(sf),
            permutation,
            j_points: Some(points),
            justification: None,
        }
    }

    pub fn user_asserted(justification: impl Into<String>) -> Self {
        Self {
            mode: InvariantSetMode::UserAsserted,
            structured: None,
            permutation: None,
            j_points: None,
            justification: Some(justification.into()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CertificateFamily {
    VolterraLyapunov,
    Eigenvector,
    /// Generalized certificate, requires bounded and strongly persistent solutions.
    #[serde(rename = "theorem1_a")]
    Theorem1A,
    /// `b = 0`, `-p >= 0`, requires bounded solutions only.
    #[serde(rename = "theorem1_b")]
    Theorem1B,
    /// `k >= 0`, `-p >= 0`, `-1 < b k^T 1`, `b < 0`, requires bounded solutions only.
    #[serde(rename = "theorem1_c")]
    Theorem1C,
}

impl std::fmt::Display for CertificateFamily {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::VolterraLyapunov => "volterra_lyapunov",
            Self::Eigenvector => "eigenvector",
            Self::Theorem1A => "theorem1_a",
            Self::Theorem1B => "theorem1_b",
            Self::Theorem1C => "theorem1_c",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Witness {
    VolterraLyapunov {
        #[serde(with = "crate::serde_vec::vector")]
        h: Vector,
    },
    Eigenvector {
        #[serde(with = "crate::serde_vec::vector")]
        alpha: Vector,
        lambda: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        tau1: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        tau2: Option<f64>,
    },
    Theorem1,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub family: CertificateFamily,
    /// Parameters of the generalized certificate; for the classical families
    /// this is their embedding (absent when the two-matrix combination search
    /// was inconclusive).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub params: Option<Theorem1Params>,
    pub witness: Witness,
    pub margins: BTreeMap<String, f64>,
    #[serde(default)]
    pub residuals: BTreeMap<String, f64>,
    pub invariant_set: InvariantSetArgument,
    pub side_conditions: Vec<String>,
    /// Constant of the sign conditions on `q + k - c* p`, when the family needs it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c_star: Option<f64>,
    /// Notes that are informative but not assumptions (e.g. inconclusive sub-searches).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

impl Certificate {
    pub fn min_margin(&self) -> f64 {
        self.margins.values().copied().fold(f64::INFINITY, f64::min)
    }
}

/// Why a check did not pass. Failure is a verdict about this witness only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckFailure {
    pub reasons: Vec<String>,
    pub margins: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum CheckOutcome {
    Pass(Box<Certificate>),
    Fail(CheckFailure),
}

impl CheckOutcome {
    pub fn certificate(&self) -> Option<&Certificate> {
        match self {
            Self::Pass(c) => Some(c),
            Self::Fail(_) => None,
        }
    }

    pub fn into_certificate(self) -> Option<Certificate> {
        match self {
            Self::Pass(c) => Some(*c),
            Self::Fail(_) => None,
        }
    }

    pub fn is_pass(&self) -> bool {
        matches!(self, Self::Pass(_))
    }
}

fn check_square(a: &Matrix) -> Result<usize, CertificateError> {
    if !a.is_square() {
        return Err(CertificateError::DimensionMismatch {
            expected: a.nrows(),
            got: a.ncols(),
        });
    }
    Ok(a.nrows())
}

/// Volterra-Lyapunov check for a given weight `h > 0`.
pub fn check_volterra_lyapunov(a: &Matrix, h: &Vector) -> Result<CheckOutcome, CertificateError> {
    let n = check_square(a)?;
    if h.len() != n {
        return Err(CertificateError::DimensionMismatch {
            expected: n,
            got: h.len(),
        });
    }
    if let Some((index, &value)) = h.iter().enumerate().find(|(_, v)| !(**v > 0.0)) {
        return Err(CertificateError::NotInterior { index, value });
    }
    let z = weighted_symmetric_part(a, h);
    let verdict = classify(&z)?;
    let mut margins = BTreeMap::new();
    margins.insert("R_negative_definite".to_string(), -verdict.lambda_max);
    if !verdict.is_negative_definite() {
        return Ok(CheckOutcome::Fail(CheckFailure {
            reasons: vec![format!(
                "(diag(h) A)^S is {} (lambda_max = {:e})",
                verdict.class, verdict.lambda_max
            )],
            margins,
        }));
    }
    Ok(CheckOutcome::Pass(Box::new(Certificate {
        family: CertificateFamily::VolterraLyapunov,
        params: Some(Theorem1Params::from_volterra_lyapunov(h.clone())),
        witness: Witness::VolterraLyapunov { h: h.clone() },
        margins,
        residuals: BTreeMap::new(),
        invariant_set: InvariantSetArgument::r_negative_definite(),
        side_conditions: Vec::new(),
        c_star: None,
        notes: Vec::new(),
    })))
}

/// Candidate left eigenvectors for one eigenvalue cluster. A one-dimensional
/// eigenspace gives its unit vector; higher-dimensional ones additionally get
/// the projections of `1` and of sign patterns, which are the natural
/// candidates for a vector with no zero component.
fn eigenspace_candidates(basis: &[Vector]) -> Vec<Vector> {
    let mut out: Vec<Vector> = basis.to_vec();
    if basis.len() > 1 {
        let n = basis[0].len();
        let span = Matrix::from_columns(basis);
        let project = |v: &Vector| -> Option<Vector> {
            let proj = &span * (span.transpose() * v);
            let norm = proj.norm();
            (norm > 1e-9).then(|| proj / norm)
        };
        let patterns = if n <= 8 { 1usize << (n - 1) } else { 1 };
        for mask in 0..patterns {
            let signs = Vector::from_fn(n, |i, _| if i > 0 && mask & (1 << (i - 1)) != 0 { -1.0 } else { 1.0 });
            if let Some(v) = project(&signs) {
                out.push(v);
            }
        }
    }
    out
}

/// Eigenvector conditions. On success, also attempts the two-matrix
/// combination that converts the witness into a `(k, b)` certificate.
pub fn check_eigenvector_conditions(a: &Matrix) -> Result<CheckOutcome, CertificateError> {
    let n = check_square(a)?;
    let pairs = left_eigenpairs(a)?;
    let mut reasons = Vec::new();
    let mut best_restricted = f64::INFINITY;

    let mut clusters: BTreeMap<usize, Vec<&matrixops::LeftEigenpair>> = BTreeMap::new();
    for p in &pairs {
        clusters.entry(p.cluster).or_default().push(p);
    }
    if clusters.is_empty() {
        reasons.push("no real left eigenvalue".to_string());
    }
    for members in clusters.values() {
        let lambda = members.iter().map(|p| p.lambda).sum::<f64>() / members.len() as f64;
        if !(lambda < 0.0) {
            reasons.push(format!("eigenvalue {lambda:e} is not negative"));
            continue;
        }
        let basis: Vec<Vector> = members.iter().map(|p| p.alpha.clone()).collect();
        let mut any_nonzero = false;
        for candidate in eigenspace_candidates(&basis) {
            if !candidate
                .iter()
                .all(|c| c.abs() > matrixops::COMPONENT_ZERO_TOL)
            {
                continue;
            }
            any_nonzero = true;
            // The restricted condition depends on the sign of alpha.
            for alpha in [candidate.clone(), -candidate] {
                let z1 = symmetric_part(&(Matrix::from_diagonal(&alpha) * a));
                let restricted = restricted_definiteness(&z1, &alpha, default_tolerance(&z1))?;
                best_restricted = best_restricted.min(restricted.lambda_max);
                if !restricted.is_negative_definite() {
                    continue;
                }
                return Ok(CheckOutcome::Pass(Box::new(eigenvector_certificate(
                    a, n, alpha, lambda, z1, &restricted,
                )?)));
            }
        }
        if !any_nonzero {
            reasons.push(format!(
                "eigenvalue {lambda:e}: every left eigenvector has a zero component"
            ));
        } else {
            reasons.push(format!(
                "eigenvalue {lambda:e}: diag(alpha) A is not negative definite on the complement of alpha"
            ));
        }
    }
    let mut margins = BTreeMap::new();
    if best_restricted.is_finite() {
        margins.insert("restricted_negative_definite".to_string(), -best_restricted);
    }
    Ok(CheckOutcome::Fail(CheckFailure { reasons, margins }))
}

fn eigenvector_certificate(
    a: &Matrix,
    n: usize,
    alpha: Vector,
    lambda: f64,
    z1: Matrix,
    restricted: &DefinitenessVerdict,
) -> Result<Certificate, CertificateError> {
    let mut margins = BTreeMap::new();
    margins.insert("restricted_negative_definite".to_string(), -restricted.lambda_max);
    margins.insert("lambda_negative".to_string(), -lambda);
    margins.insert(
        "min_abs_component".to_string(),
        alpha.iter().fold(f64::INFINITY, |m, c| m.min(c.abs())),
    );
    let z2 = -(&alpha * alpha.transpose());
    let mut notes = Vec::new();
    let (params, tau1, tau2) = match lemma1_combination(&z1, &z2)? {
        Lemma1Outcome::Found { tau1, tau2, .. } if tau1 > 0.0 => {
            let b = -tau2 / (lambda * tau1);
            let params = Theorem1Params::from_kb(alpha.clone(), b);
            let r = classify(&params.r_matrix(a))?;
            if r.is_negative_definite() {
                margins.insert("R_negative_definite".to_string(), -r.lambda_max);
                (Some(params), Some(tau1), Some(tau2))
            } else {
                notes.push(format!(
                    "converted (k, b) gave R {} (lambda_max = {:e}); embedding omitted",
                    r.class, r.lambda_max
                ));
                (None, Some(tau1), Some(tau2))
            }
        }
        _ => {
            notes.push(
                "two-matrix combination search inconclusive; no (k, b) embedding recorded".into(),
            );
            (None, None, None)
        }
    };
    debug_assert_eq!(alpha.len(), n);
    Ok(Certificate {
        family: CertificateFamily::Eigenvector,
        params,
        witness: Witness::Eigenvector {
            alpha,
            lambda,
            tau1,
            tau2,
        },
        margins,
        residuals: BTreeMap::new(),
        invariant_set: InvariantSetArgument::r_negative_definite(),
        side_conditions: vec![SIDE_PERMANENCE.to_string()],
        c_star: None,
        notes,
    })
}

struct SignTests {
    p_nonpositive: bool,
    zero_mask: Vec<bool>,
}

fn sign_tests(p: &Vector) -> SignTests {
    let zero_tol = P_ZERO_RTOL * vec_inf_norm(p).max(1.0);
    SignTests {
        p_nonpositive: p.iter().all(|&x| x <= zero_tol),
        zero_mask: p.iter().map(|x| x.abs() <= zero_tol).collect(),
    }
}

/// Smallest convenient `c* > 0` with `q_i + k_i > c* p_i` (and, when
/// `with_q`, `q_i >= c* p_i`), or `None` when no `c* > 0` exists.
///
/// With `p <= 0`, every constraint with `p_i < 0` is a lower bound on `c*`,
/// and a constraint with `p_i = 0` reduces to a sign test. So existence is
/// decided componentwise and any `c*` above the largest lower bound works.
fn c_star_for(params: &Theorem1Params, signs: &SignTests, with_q: bool) -> Option<f64> {
    let mut lower = 0.0_f64;
    for i in 0..params.dim() {
        let qk = params.q[i] + params.k[i];
        let q = params.q[i];
        if signs.zero_mask[i] {
            if !(qk > 0.0) || (with_q && q < 0.0) {
                return None;
            }
        } else {
            let p = params.p[i];
            lower = lower.max(qk / p);
            if with_q {
                lower = lower.max(q / p);
            }
        }
    }
    Some(lower + 1e-3 * (1.0 + lower))
}

/// Checks the generalized certificate and classifies which statement it
/// supports.
pub fn check_theorem1(
    a: &Matrix,
    params: &Theorem1Params,
    inv: &InvariantSetArgument,
) -> Result<CheckOutcome, CertificateError> {
    let n = check_square(a)?;
    params.validate(n)?;
    let lin_tol = linear_tolerance(a);

    let mut margins = BTreeMap::new();
    let mut residuals = BTreeMap::new();
    let mut reasons = Vec::new();

    let slack6 = params.growth_slack();
    margins.insert("growth_inequality".to_string(), slack6 + lin_tol);
    if slack6 < -lin_tol {
        reasons.push(format!("mu >= beta^T 1 - kappa g violated by {:e}", -slack6));
    }

    let res7 = params.linear_residual_matrix(a).amax();
    residuals.insert("symmetric_linear_condition".to_string(), res7);
    margins.insert("symmetric_linear_condition".to_string(), lin_tol - res7);
    if res7 > lin_tol {
        reasons.push(format!(
            "(diag(p) A + (beta - g p) p^T)^S residual {res7:e} exceeds {lin_tol:e}"
        ));
    }

    let res8 = vec_inf_norm(&params.adjoint_residual(a));
    residuals.insert("adjoint_condition".to_string(), res8);
    margins.insert("adjoint_condition".to_string(), lin_tol - res8);
    if res8 > lin_tol {
        reasons.push(format!(
            "A^T p + (mu - g kappa) p + kappa beta residual {res8:e} exceeds {lin_tol:e}"
        ));
    }

    let r = classify(&params.r_matrix(a))?;
    margins.insert("R_negative_semidefinite".to_string(), r.tolerance_used - r.lambda_max);
    if !r.is_negative_semidefinite() {
        reasons.push(format!("R is {} (lambda_max = {:e})", r.class, r.lambda_max));
    }
    let q = classify(&params.q_matrix(a))?;
    margins.insert("Q_negative_semidefinite".to_string(), q.tolerance_used - q.lambda_max);
    if !q.is_negative_semidefinite() {
        reasons.push(format!("Q is {} (lambda_max = {:e})", q.class, q.lambda_max));
    }

    if !reasons.is_empty() {
        return Ok(CheckOutcome::Fail(CheckFailure { reasons, margins }));
    }

    let mut side_conditions = Vec::new();
    let mut invariant_set = inv.clone();
    match inv.mode {
        InvariantSetMode::RNegativeDefinite => {
            if !r.is_negative_definite() {
                return Err(CertificateError::UnsupportedInvariantSetMode(format!(
                    "R is {} (lambda_max = {:e}), not negative definite",
                    r.class, r.lambda_max
                )));
            }
            margins.insert("R_negative_definite".to_string(), -r.lambda_max);
        }
        InvariantSetMode::StructuredFamilyJ => {
            let sf = inv.structured.as_ref().ok_or_else(|| {
                CertificateError::UnsupportedInvariantSetMode(
                    "structured mode without family parameters".into(),
                )
            })?;
            let canonical = match &inv.permutation {
                Some(perm) => permute_matrix(a, perm)?,
                None => a.clone(),
            };
            match verify_invariant_set_structured(&canonical, sf) {
                Ok(true) => {}
                Ok(false) => {
                    return Err(CertificateError::UnsupportedInvariantSetMode(
                        "structured invariant-set identities failed".into(),
                    ))
                }
                Err(e) => return Err(CertificateError::UnsupportedInvariantSetMode(e.to_string())),
            }
            invariant_set = InvariantSetArgument::structured_permuted(*sf, inv.permutation.clone());
        }
        InvariantSetMode::UserAsserted => {
            side_conditions.push(SIDE_USER_INVARIANT_SET.to_string());
        }
    }

    let signs = sign_tests(&params.p);
    let mut c_star = None;
    let family = if params.b == 0.0 && signs.p_nonpositive {
        c_star = c_star_for(params, &signs, false);
        c_star.map(|_| CertificateFamily::Theorem1B)
    } else {
        None
    }
    .or_else(|| {
        let k_nonneg = params.k.iter().all(|&x| x >= 0.0);
        let bk = params.b * params.k.sum();
        if k_nonneg && signs.p_nonpositive && params.b < 0.0 && bk > -1.0 {
            c_star = c_star_for(params, &signs, true);
            c_star.map(|_| CertificateFamily::Theorem1C)
        } else {
            None
        }
    })
    .unwrap_or(CertificateFamily::Theorem1A);

    match family {
        CertificateFamily::Theorem1A => {
            c_star = None;
            side_conditions.push(SIDE_BOUNDED.to_string());
            side_conditions.push(SIDE_PERSISTENT.to_string());
        }
        _ => {
            let cs = c_star.expect("c* exists for statements b and c");
            let strict = (0..n)
                .map(|i| params.q[i] + params.k[i] - cs * params.p[i])
                .fold(f64::INFINITY, f64::min);
            margins.insert("q_plus_k_above_c_star_p".to_string(), strict);
            if family == CertificateFamily::Theorem1C {
                let weak = (0..n)
                    .map(|i| params.q[i] - cs * params.p[i])
                    .fold(f64::INFINITY, f64::min);
                margins.insert("q_above_c_star_p".to_string(), weak);
                margins.insert("b_negative".to_string(), -params.b);
                margins.insert("b_k_sum_above_minus_one".to_string(), 1.0 + params.b * params.k.sum());
            }
            side_conditions.push(SIDE_BOUNDED.to_string());
        }
    }

    Ok(CheckOutcome::Pass(Box::new(Certificate {
        family,
        params: Some(params.clone()),
        witness: Witness::Theorem1,
        margins,
        residuals,
        invariant_set,
        side_conditions,
        c_star,
        notes: Vec::new(),
    })))
}

/// Parameters `(lambda1, lambda2, lambda3, delta)` of the three-species family
/// whose invariant set is known in closed form.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StructuredFamilyParams {
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    pub delta: f64,
}

impl StructuredFamilyParams {
    pub fn new(lambda1: f64, lambda2: f64, lambda3: f64, delta: f64) -> Result<Self, CertificateError> {
        let sf = Self {
            lambda1,
            lambda2,
            lambda3,
            delta,
        };
        sf.validate()?;
        Ok(sf)
    }

    /// Upper bound on `delta`: `l1 l3 (1 - l2) / (l2 (l3 - l1))`.
    pub fn delta_bound(&self) -> f64 {
        self.lambda1 * self.lambda3 * (1.0 - self.lambda2)
            / (self.lambda2 * (self.lambda3 - self.lambda1))
    }

    pub fn validate(&self) -> Result<(), CertificateError> {
        let Self {
            lambda1: l1,
            lambda2: l2,
            lambda3: l3,
            delta,
        } = *self;
        if ![l1, l2, l3, delta].iter().all(|v| v.is_finite()) {
            return Err(CertificateError::InvalidFamilyParams("non-finite value".into()));
        }
        if !(0.0 < l1 && l1 < l2 && l2 < l3) {
            return Err(CertificateError::InvalidFamilyParams(format!(
                "need 0 < lambda1 < lambda2 < lambda3, got ({l1}, {l2}, {l3})"
            )));
        }
        let bound = self.delta_bound();
        if !(0.0 < delta && delta < bound) {
            return Err(CertificateError::InvalidFamilyParams(format!(
                "need 0 < delta < {bound}, got {delta}"
            )));
        }
        let y = self.y_star_unchecked();
        if let Some(i) = y.iter().position(|&v| !(v > 0.0)) {
            return Err(CertificateError::InvalidFamilyParams(format!(
                "implied equilibrium component {} is {}",
                i + 1,
                y[i]
            )));
        }
        Ok(())
    }

    fn y_star_unchecked(&self) -> Vector {
        let Self {
            lambda1: l1,
            lambda2: l2,
            lambda3: l3,
            delta: d,
        } = *self;
        Vector::from_vec(vec![
            d * (l3 - l2) / l3,
            1.0 - l2 - d * l2 * (l3 - l1) / (l1 * l3),
            d * (l2 - l1) / l1,
        ])
    }

    /// Implied equilibrium weights `(y1*, y2*, y3*)`.
    pub fn y_star(&self) -> Vector {
        self.y_star_unchecked()
    }

    /// The structured interaction matrix.
    pub fn matrix(&self) -> Matrix {
        let Self {
            lambda1: l1,
            lambda2: l2,
            lambda3: l3,
            delta: d,
        } = *self;
        let y = self.y_star_unchecked();
        -Matrix::from_row_slice(
            3,
            3,
            &[
                y[0] / l1,
                y[1] / l1,
                (l1 + d) / (l1 * d) * y[2],
                y[0] / l2,
                y[1] / l2,
                y[2] / l2,
                (d - l3) / (l3 * d) * y[0],
                y[1] / l3,
                y[2] / l3,
            ],
        )
    }

    /// The two points of the invariant set: `(0, (1 - l2)/y2*, 0)` and `1`.
    pub fn j_points(&self) -> [Vector; 2] {
        let y = self.y_star_unchecked();
        [
            Vector::from_vec(vec![0.0, (1.0 - self.lambda2) / y[1], 0.0]),
            Vector::from_element(3, 1.0),
        ]
    }

    /// Certificate parameters: `p = -y*`, `beta = y*_i / lambda_i`, `g = 0`,
    /// `kappa = lambda2`, `mu = 1 / lambda2`, `k = q = 0`, `b = delta = 0`.
    pub fn certificate_params(&self) -> Theorem1Params {
        let y = self.y_star_unchecked();
        let lambdas = [self.lambda1, self.lambda2, self.lambda3];
        Theorem1Params {
            kappa: self.lambda2,
            mu: 1.0 / self.lambda2,
            g: 0.0,
            delta: 0.0,
            b: 0.0,
            p: -&y,
            q: Vector::zeros(3),
            k: Vector::zeros(3),
            beta: Vector::from_fn(3, |i, _| y[i] / lambdas[i]),
        }
    }
}

/// Builds the structured matrix, its certificate parameters and the matching
/// invariant-set argument.
pub fn build_structured_family(
    sf: &StructuredFamilyParams,
) -> Result<(Matrix, Theorem1Params, InvariantSetArgument), CertificateError> {
    sf.validate()?;
    Ok((
        sf.matrix(),
        sf.certificate_params(),
        InvariantSetArgument::structured(*sf),
    ))
}

fn shape_tolerance(a: &Matrix) -> f64 {
    1e-9 * (1.0 + inf_norm(a))
}

/// Confirms, by direct substitution, the closed-form invariant set of the
/// structured family:
///
/// * on the plane `y*^T (x - 1) = 0` the field reduces to
///   `x1' = -x1 y3* (x3 - 1) / delta`, `x2' = 0`, `x3' = x3 y1* (x1 - 1) / delta`;
/// * the plane is left unless `x1 = x3`, which then forces `x1 in {0, 1}`;
/// * both points of the set are equilibria, and only `1` is interior.
pub fn verify_invariant_set_structured(
    a: &Matrix,
    sf: &StructuredFamilyParams,
) -> Result<bool, CertificateError> {
    sf.validate()?;
    if a.shape() != (3, 3) {
        return Err(CertificateError::ShapeMismatch(format!(
            "expected 3x3, got {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    let expected = sf.matrix();
    let defect = (a - &expected).amax();
    let tol = shape_tolerance(a);
    if defect > tol {
        return Err(CertificateError::ShapeMismatch(format!(
            "entrywise defect {defect:e} exceeds {tol:e}"
        )));
    }

    let y = sf.y_star();
    let d = sf.delta;
    let check_tol = 1e-10 * (1.0 + inf_norm(a));

    for point in sf.j_points() {
        if vec_inf_norm(&normalized_field(a, &point)) > check_tol {
            return Ok(false);
        }
    }

    let samples = [0.2, 0.7, 1.0, 1.3, 2.5];
    for &x1 in &samples {
        for &x3 in &samples {
            let x2 = 1.0 - (y[0] * (x1 - 1.0) + y[2] * (x3 - 1.0)) / y[1];
            if !(x2 > 0.0) {
                continue;
            }
            let x = Vector::from_vec(vec![x1, x2, x3]);
            let f = normalized_field(a, &x);
            let scale = check_tol * (1.0 + vec_inf_norm(&x)).powi(2);
            let reduced = [
                -x1 * y[2] * (x3 - 1.0) / d,
                0.0,
                x3 * y[0] * (x1 - 1.0) / d,
            ];
            if (0..3).any(|i| (f[i] - reduced[i]).abs() > scale) {
                return Ok(false);
            }
            // rate of change of the plane constraint
            let drift = y.dot(&f);
            if (drift - y[0] * y[2] * (x1 - x3) / d).abs() > scale {
                return Ok(false);
            }
        }
    }

    let [boundary, interior] = sf.j_points();
    let boundary_is_exterior = boundary.iter().any(|&v| v <= 0.0);
    let interior_is_interior = interior.iter().all(|&v| v > 0.0);
    Ok(boundary_is_exterior && interior_is_interior)
}

/// `A'[i][j] = A[perm[i]][perm[j]]`.
pub fn permute_matrix(a: &Matrix, perm: &[usize]) -> Result<Matrix, CertificateError> {
    let n = a.nrows();
    if perm.len() != n || !is_permutation(perm) {
        return Err(CertificateError::InvalidParams(format!(
            "{perm:?} is not a permutation of 0..{n}"
        )));
    }
    Ok(Matrix::from_fn(n, n, |i, j| a[(perm[i], perm[j])]))
}

fn is_permutation(perm: &[usize]) -> bool {
    let mut seen = vec![false; perm.len()];
    perm.iter().all(|&i| i < seen.len() && !std::mem::replace(&mut seen[i], true))
}

/// Maps a vector in permuted coordinates back: `v[perm[i]] = v'[i]`.
pub fn unpermute(v: &Vector, perm: &[usize]) -> Vector {
    let mut out = Vector::zeros(v.len());
    for (i, &pi) in perm.iter().enumerate() {
        out[pi] = v[i];
    }
    out
}

/// Recovers structured-family parameters from the matrix entries when `A`
/// (up to a relabelling of the states) has the structured shape.
pub fn detect_structured_family(a: &Matrix) -> Option<(StructuredFamilyParams, Vec<usize>)> {
    if a.shape() != (3, 3) {
        return None;
    }
    const PERMS: [[usize; 3]; 6] = [
        [0, 1, 2],
        [0, 2, 1],
        [1, 0, 2],
        [1, 2, 0],
        [2, 0, 1],
        [2, 1, 0],
    ];
    PERMS.iter().find_map(|perm| {
        let ap = permute_matrix(a, perm).ok()?;
        let sf = recover_structured(&ap)?;
        ((&ap - sf.matrix()).amax() <= shape_tolerance(a)).then(|| (sf, perm.to_vec()))
    })
}

fn recover_structured(a: &Matrix) -> Option<StructuredFamilyParams> {
    // second row is -y*/lambda2 and sum(y*) = 1 - lambda2
    let row_sum = a.row(1).sum();
    let denom = 1.0 - row_sum;
    if !(denom > 0.0) {
        return None;
    }
    let l2 = 1.0 / denom;
    let y: Vec<f64> = (0..3).map(|j| -l2 * a[(1, j)]).collect();
    let l1 = -y[1] / a[(0, 1)];
    let l3 = -y[1] / a[(2, 1)];
    let inv_delta = -(a[(0, 2)] + y[2] / l1) / y[2];
    let delta = 1.0 / inv_delta;
    StructuredFamilyParams::new(l1, l2, l3, delta).ok()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    #[test]
    fn volterra_lyapunov_examples() {
        let n = 3;
        let out = check_volterra_lyapunov(&(-Matrix::identity(n, n)), &Vector::from_element(n, 1.0)).unwrap();
        let cert = out.certificate().unwrap();
        assert_eq!(cert.family, CertificateFamily::VolterraLyapunov);
        assert!(cert.side_conditions.is_empty());

        // (diag(h) A)^S = [[-1, 1], [1, -1]], eigenvalues {0, -2}
        let a = Matrix::from_row_slice(2, 2, &[-1.0, 2.0, 0.0, -1.0]);
        let out = check_volterra_lyapunov(&a, &Vector::from_element(2, 1.0)).unwrap();
        assert!(!out.is_pass());

        assert!(matches!(
            check_volterra_lyapunov(&a, &Vector::from_vec(vec![1.0, 0.0])),
            Err(CertificateError::NotInterior { index: 1, .. })
        ));
    }

    #[test]
    fn eigenvector_examples() {
        let out = check_eigenvector_conditions(&(-Matrix::identity(3, 3))).unwrap();
        let cert = out.certificate().expect("identity passes");
        assert_eq!(cert.family, CertificateFamily::Eigenvector);
        assert!(cert.side_conditions.iter().any(|s| s.contains("permanence")));
        match &cert.witness {
            Witness::Eigenvector { alpha, lambda, .. } => {
                assert_eq!(*lambda, -1.0);
                assert!(alpha.iter().all(|c| c.abs() > 0.5));
            }
            other => panic!("unexpected witness {other:?}"),
        }

        assert!(!check_eigenvector_conditions(&fixtures::example1_matrix())
            .unwrap()
            .is_pass());
        assert!(!check_eigenvector_conditions(&fixtures::example2_matrix())
            .unwrap()
            .is_pass());
    }

    #[test]
    fn example1_reference_certificate() {
        let a = fixtures::example1_matrix();
        let (k, b) = fixtures::example1_kb();
        let params = Theorem1Params::from_kb(k.clone(), b);
        let out = check_theorem1(&a, &params, &InvariantSetArgument::r_negative_definite()).unwrap();
        let cert = out.certificate().unwrap();
        assert_eq!(cert.family, CertificateFamily::Theorem1C);
        assert!((b * k.sum() + 11.0 / 16.0).abs() < 1e-15);
        assert!(cert.margins.values().all(|&m| m >= 0.0), "{:?}", cert.margins);
        assert!(cert.side_conditions.contains(&SIDE_BOUNDED.to_string()));
    }

    #[test]
    fn identity_embedding_is_statement_b() {
        let params = Theorem1Params::from_kb(Vector::from_element(4, 1.0), 0.0);
        let out = check_theorem1(
            &(-Matrix::identity(4, 4)),
            &params,
            &InvariantSetArgument::r_negative_definite(),
        )
        .unwrap();
        assert_eq!(out.certificate().unwrap().family, CertificateFamily::Theorem1B);
    }

    #[test]
    fn example2_trivial_linear_part_fails_r() {
        let a = fixtures::example2_matrix();
        let params = Theorem1Params::from_kb(Vector::from_vec(vec![0.3, 0.5, 0.2]), -0.1);
        let out = check_theorem1(&a, &params, &InvariantSetArgument::r_negative_definite()).unwrap();
        assert!(!out.is_pass());
    }

    #[test]
    fn invalid_params_and_modes() {
        let a = -Matrix::identity(2, 2);
        let mut params = Theorem1Params::from_kb(Vector::from_element(2, 1.0), 0.0);
        params.kappa = 0.0;
        assert!(matches!(
            check_theorem1(&a, &params, &InvariantSetArgument::r_negative_definite()),
            Err(CertificateError::InvalidParams(_))
        ));
        // R = 0 is semidefinite only
        let params = Theorem1Params::from_kb(Vector::zeros(2), 0.0);
        assert!(matches!(
            check_theorem1(&a, &params, &InvariantSetArgument::r_negative_definite()),
            Err(CertificateError::UnsupportedInvariantSetMode(_))
        ));
        let out = check_theorem1(&a, &params, &InvariantSetArgument::user_asserted("by hand")).unwrap();
        let cert = out.certificate().unwrap();
        assert!(cert.side_conditions.contains(&SIDE_USER_INVARIANT_SET.to_string()));
        // k = q = 0 with p = 0 has no c*, so statement a only
        assert_eq!(cert.family, CertificateFamily::Theorem1A);
    }

    #[test]
    fn structured_family_default() {
        let sf = fixtures::structured_default();
        let (a, params, inv) = build_structured_family(&sf).unwrap();
        let y = sf.y_star();
        for (got, want) in y.iter().zip([0.0625, 0.1375, 0.05]) {
            assert!((got - want).abs() < 1e-15);
        }
        assert!(params.linear_residual_matrix(&a).amax() <= 1e-10);
        assert!(vec_inf_norm(&params.adjoint_residual(&a)) <= 1e-10);
        assert!((params.growth_slack() - 1.0).abs() < 1e-12);
        let out = check_theorem1(&a, &params, &inv).unwrap();
        assert_eq!(out.certificate().unwrap().family, CertificateFamily::Theorem1B);
        assert!(verify_invariant_set_structured(&a, &sf).unwrap());
    }

    #[test]
    fn structured_family_rejections() {
        // bound is 2/9 for (1/2, 3/4, 2)
        let sf = StructuredFamilyParams {
            lambda1: 0.5,
            lambda2: 0.75,
            lambda3: 2.0,
            delta: 0.3,
        };
        assert!((sf.delta_bound() - 2.0 / 9.0).abs() < 1e-15);
        assert!(matches!(
            build_structured_family(&sf),
            Err(CertificateError::InvalidFamilyParams(_))
        ));
        for delta in [1e-3, 0.1, 1.0] {
            assert!(StructuredFamilyParams::new(0.5, 1.2, 2.0, delta).is_err());
        }
        assert!(StructuredFamilyParams::new(0.5, 0.4, 2.0, 0.01).is_err());
    }

    #[test]
    fn structured_shape_detection() {
        let sf = fixtures::structured_default();
        let mut a = sf.matrix();
        let one = Vector::from_element(3, 1.0);
        assert_eq!(vec_inf_norm(&normalized_field(&a, &one)), 0.0);
        a[(0, 1)] += 1e-3;
        assert!(matches!(
            verify_invariant_set_structured(&a, &sf),
            Err(CertificateError::ShapeMismatch(_))
        ));
    }

    #[test]
    fn detect_recovers_params_under_relabelling() {
        let sf = fixtures::structured_default();
        let a = sf.matrix();
        let (found, perm) = detect_structured_family(&a).unwrap();
        assert_eq!(perm, vec![0, 1, 2]);
        assert!((found.delta - sf.delta).abs() < 1e-12);
        assert!((found.lambda3 - sf.lambda3).abs() < 1e-12);

        // relabel: A_rel[i][j] = A[s[i]][s[j]]
        let s = [2usize, 0, 1];
        let relabelled = permute_matrix(&a, &s).unwrap();
        let (found, perm) = detect_structured_family(&relabelled).unwrap();
        assert!((found.lambda1 - sf.lambda1).abs() < 1e-12);
        let canonical = permute_matrix(&relabelled, &perm).unwrap();
        assert!((canonical - &a).amax() < 1e-12);

        assert!(detect_structured_family(&fixtures::example1_matrix()).is_none());
        assert!(detect_structured_family(&fixtures::example2_matrix()).is_none());
    }
}
