//! Small dense symmetric-matrix analysis.
//!
//! Everything here is sized for the handful of species a Lotka-Volterra
//! model usually has (n between 2 and 10), so robustness wins over speed:
//! eigenvalues of symmetric matrices come from tridiagonalization followed
//! by implicit QR, nonsymmetric spectra from Hessenberg reduction and
//! shifted QR (real Schur form).

use crate::{Matrix, Vector};
use nalgebra::Schur;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Symmetry defect tolerated on input to the classifiers.
pub const SYMMETRY_TOL: f64 = 1e-12;
/// Relative scale of the default definiteness band.
pub const DEFINITENESS_RTOL: f64 = 1e-9;
/// Relative bound on `|Im(lambda)|` for an eigenvalue to count as real.
pub const REAL_EIGENVALUE_RTOL: f64 = 1e-9;
/// Components of a unit left eigenvector below this count as zero.
pub const COMPONENT_ZERO_TOL: f64 = 1e-9;
/// Accepted relative residual of `alpha^T A - lambda alpha^T`.
pub const LEFT_EIGEN_RESIDUAL_TOL: f64 = 1e-8;

const EIGEN_MAX_ITER: usize = 10_000;
const LEMMA1_GRID: usize = 200;
const LEMMA1_REFINE_ITERS: usize = 80;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MatrixError {
    #[error("matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },
    #[error("matrix is not symmetric (defect {defect:e})")]
    NotSymmetric { defect: f64 },
    #[error("vector must be nonzero")]
    ZeroVector,
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("eigenvalue iteration did not converge")]
    EigenSolverFailure,
}

/// Maximum absolute row sum.
pub fn inf_norm(m: &Matrix) -> f64 {
    m.row_iter()
        .map(|r| r.iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

pub fn vec_inf_norm(v: &Vector) -> f64 {
    v.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
}

/// Default definiteness band `1e-9 * max(1, ||Z||_inf)`.
pub fn default_tolerance(z: &Matrix) -> f64 {
    DEFINITENESS_RTOL * inf_norm(z).max(1.0)
}

/// `C^S = (C + C^T) / 2`. Exactly symmetric since IEEE addition commutes.
pub fn symmetric_part(c: &Matrix) -> Matrix {
    assert!(c.is_square(), "symmetric_part requires a square matrix");
    let n = c.nrows();
    Matrix::from_fn(n, n, |i, j| 0.5 * (c[(i, j)] + c[(j, i)]))
}

pub fn symmetry_defect(z: &Matrix) -> f64 {
    let n = z.nrows();
    let mut defect = 0.0_f64;
    for i in 0..n {
        for j in (i + 1)..n {
            defect = defect.max((z[(i, j)] - z[(j, i)]).abs());
        }
    }
    defect
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DefinitenessClass {
    NegativeDefinite,
    NegativeSemidefinite,
    Indefinite,
    PositiveSemidefinite,
    PositiveDefinite,
    Zero,
}

impl DefinitenessClass {
    /// True for the classes that satisfy `x^T Z x <= 0` (within the band).
    pub fn is_negative_semidefinite(self) -> bool {
        matches!(
            self,
            Self::NegativeDefinite | Self::NegativeSemidefinite | Self::Zero
        )
    }

    fn from_bounds(lambda_min: f64, lambda_max: f64, tol: f64) -> Self {
        if lambda_min.abs().max(lambda_max.abs()) <= tol {
            Self::Zero
        } else if lambda_max < -tol {
            Self::NegativeDefinite
        } else if lambda_max <= tol {
            Self::NegativeSemidefinite
        } else if lambda_min > tol {
            Self::PositiveDefinite
        } else if lambda_min >= -tol {
            Self::PositiveSemidefinite
        } else {
            Self::Indefinite
        }
    }
}

impl std::fmt::Display for DefinitenessClass {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Self::NegativeDefinite => "negative_definite",
            Self::NegativeSemidefinite => "negative_semidefinite",
            Self::Indefinite => "indefinite",
            Self::PositiveSemidefinite => "positive_semidefinite",
            Self::PositiveDefinite => "positive_definite",
            Self::Zero => "zero",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DefinitenessVerdict {
    pub class: DefinitenessClass,
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub tolerance_used: f64,
    /// Leading principal minors, reported for n <= 4 as a Sylvester cross-check.
    pub leading_minors: Option<Vec<f64>>,
}

impl DefinitenessVerdict {
    pub fn is_negative_definite(&self) -> bool {
        self.class == DefinitenessClass::NegativeDefinite
    }

    pub fn is_negative_semidefinite(&self) -> bool {
        self.class.is_negative_semidefinite()
    }
}

/// Ascending eigenvalues of a symmetric matrix.
pub fn symmetric_eigenvalues(z: &Matrix) -> Result<Vec<f64>, MatrixError> {
    if z.nrows() == 0 {
        return Ok(Vec::new());
    }
    let eig = z
        .clone()
        .try_symmetric_eigen(f64::EPSILON, EIGEN_MAX_ITER)
        .ok_or(MatrixError::EigenSolverFailure)?;
    let mut values: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    if values.iter().any(|v| !v.is_finite()) {
        return Err(MatrixError::EigenSolverFailure);
    }
    values.sort_by(f64::total_cmp);
    Ok(values)
}

/// Largest eigenvalue of a symmetric matrix; `+inf` when the solver fails so
/// that optimizers treat the point as infeasible.
pub fn lambda_max(z: &Matrix) -> f64 {
    symmetric_eigenvalues(z)
        .ok()
        .and_then(|v| v.last().copied())
        .unwrap_or(f64::INFINITY)
}

pub fn leading_principal_minors(z: &Matrix) -> Vec<f64> {
    (1..=z.nrows())
        .map(|k| z.view((0, 0), (k, k)).into_owned().determinant())
        .collect()
}

/// Classifies a symmetric matrix against the band `[-tol, tol]`.
///
/// An empty matrix (the restriction of a 1x1 form to the zero subspace) is
/// vacuously negative definite, with `lambda_max = -inf`, `lambda_min = +inf`.
pub fn classify_definiteness(z: &Matrix, tol: f64) -> Result<DefinitenessVerdict, MatrixError> {
    if !z.is_square() {
        return Err(MatrixError::NotSquare {
            rows: z.nrows(),
            cols: z.ncols(),
        });
    }
    let defect = symmetry_defect(z);
    if defect > SYMMETRY_TOL * inf_norm(z).max(1.0) {
        return Err(MatrixError::NotSymmetric { defect });
    }
    let n = z.nrows();
    if n == 0 {
        return Ok(DefinitenessVerdict {
            class: DefinitenessClass::NegativeDefinite,
            lambda_min: f64::INFINITY,
            lambda_max: f64::NEG_INFINITY,
            tolerance_used: tol,
            leading_minors: None,
        });
    }
    let values = symmetric_eigenvalues(z)?;
    let lambda_min = values[0];
    let lambda_max = values[n - 1];
    Ok(DefinitenessVerdict {
        class: DefinitenessClass::from_bounds(lambda_min, lambda_max, tol),
        lambda_min,
        lambda_max,
        tolerance_used: tol,
        leading_minors: (n <= 4).then(|| leading_principal_minors(z)),
    })
}

/// [`classify_definiteness`] with [`default_tolerance`].
pub fn classify(z: &Matrix) -> Result<DefinitenessVerdict, MatrixError> {
    classify_definiteness(z, default_tolerance(z))
}

/// Orthonormal basis (n x (n-1)) of `{y : alpha^T y = 0}` from the
/// Householder reflection sending `alpha` to a multiple of `e_1`.
pub fn orthogonal_complement_basis(alpha: &Vector) -> Result<Matrix, MatrixError> {
    let norm = alpha.norm();
    if !(norm > 0.0) {
        return Err(MatrixError::ZeroVector);
    }
    let n = alpha.len();
    let sign = if alpha[0] >= 0.0 { 1.0 } else { -1.0 };
    let mut v = alpha.clone();
    v[0] += sign * norm;
    let vv = v.norm_squared();
    let h = Matrix::identity(n, n) - (&v * v.transpose()) * (2.0 / vv);
    Ok(h.columns(1, n - 1).into_owned())
}

/// Definiteness of `Z` restricted to the hyperplane orthogonal to `alpha`.
pub fn restricted_definiteness(
    z: &Matrix,
    alpha: &Vector,
    tol: f64,
) -> Result<DefinitenessVerdict, MatrixError> {
    if z.nrows() != alpha.len() {
        return Err(MatrixError::DimensionMismatch {
            left: z.nrows(),
            right: alpha.len(),
        });
    }
    let basis = orthogonal_complement_basis(alpha)?;
    let reduced = symmetric_part(&(basis.transpose() * z * &basis));
    classify_definiteness(&reduced, tol)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeftEigenpair {
    #[serde(with = "crate::serde_vec::vector")]
    pub alpha: Vector,
    pub lambda: f64,
    pub all_components_nonzero: bool,
    /// Pairs sharing an eigenvalue cluster span one (possibly multi-dimensional)
    /// left eigenspace.
    pub cluster: usize,
}

fn normalize_sign(mut v: Vector) -> Vector {
    let norm = v.norm();
    v /= norm;
    if let Some(first) = v.iter().copied().find(|c| c.abs() > COMPONENT_ZERO_TOL) {
        if first < 0.0 {
            v.neg_mut();
        }
    }
    v
}

/// All real left eigenpairs `alpha^T A = lambda alpha^T`, unit-normalized with
/// the first nonzero component positive. Repeated eigenvalues are reported as
/// an orthonormal basis of the eigenspace.
pub fn left_eigenpairs(a: &Matrix) -> Result<Vec<LeftEigenpair>, MatrixError> {
    if !a.is_square() {
        return Err(MatrixError::NotSquare {
            rows: a.nrows(),
            cols: a.ncols(),
        });
    }
    let n = a.nrows();
    if n == 0 {
        return Ok(Vec::new());
    }
    let scale = inf_norm(a);
    let at = a.transpose();
    let schur = Schur::try_new(at.clone(), f64::EPSILON, EIGEN_MAX_ITER)
        .ok_or(MatrixError::EigenSolverFailure)?;
    let eigenvalues = schur.complex_eigenvalues();

    let mut reals: Vec<f64> = eigenvalues
        .iter()
        .filter(|z| z.im.abs() <= REAL_EIGENVALUE_RTOL * scale)
        .map(|z| z.re)
        .collect();
    if reals.iter().any(|v| !v.is_finite()) {
        return Err(MatrixError::EigenSolverFailure);
    }
    reals.sort_by(f64::total_cmp);

    // Cluster nearly-equal eigenvalues so that repeated roots yield a basis.
    let cluster_tol = 1e-7 * scale.max(1.0);
    let mut clusters: Vec<Vec<f64>> = Vec::new();
    for v in reals {
        match clusters.last_mut() {
            Some(c) if (v - c[c.len() - 1]).abs() <= cluster_tol => c.push(v),
            _ => clusters.push(vec![v]),
        }
    }

    let null_tol = 1e-7 * scale.max(1.0);
    let mut pairs = Vec::new();
    for (cluster, members) in clusters.iter().enumerate() {
        let lambda = members.iter().sum::<f64>() / members.len() as f64;
        let shifted = &at - Matrix::identity(n, n) * lambda;
        let svd = shifted.svd(false, true);
        let v_t = svd.v_t.ok_or(MatrixError::EigenSolverFailure)?;
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&i, &j| svd.singular_values[i].total_cmp(&svd.singular_values[j]));
        for (rank, &idx) in order.iter().enumerate().take(members.len()) {
            if rank > 0 && svd.singular_values[idx] > null_tol {
                break;
            }
            let alpha = normalize_sign(v_t.row(idx).transpose());
            // Rayleigh refinement: alpha^T A alpha = lambda for an exact pair.
            let refined = (alpha.transpose() * a * &alpha)[(0, 0)];
            let residual = vec_inf_norm(&(a.transpose() * &alpha - &alpha * refined));
            if residual > LEFT_EIGEN_RESIDUAL_TOL * scale * vec_inf_norm(&alpha) {
                continue;
            }
            let all_components_nonzero = alpha.iter().all(|c| c.abs() > COMPONENT_ZERO_TOL);
            pairs.push(LeftEigenpair {
                alpha,
                lambda: refined,
                all_components_nonzero,
                cluster,
            });
        }
    }
    Ok(pairs)
}

/// Result of the two-matrix negative-definite combination search.
#[derive(Debug, Clone, PartialEq)]
pub enum Lemma1Outcome {
    /// `tau1 Z1 + tau2 Z2` classified negative definite.
    Found {
        tau1: f64,
        tau2: f64,
        verdict: DefinitenessVerdict,
    },
    /// Budget exhausted; this is inconclusive, never a disproof.
    NoneFound { best_lambda_max: f64, best_t: f64 },
}

impl Lemma1Outcome {
    pub fn taus(&self) -> Option<(f64, f64)> {
        match self {
            Self::Found { tau1, tau2, .. } => Some((*tau1, *tau2)),
            Self::NoneFound { .. } => None,
        }
    }
}

fn mixture(z1: &Matrix, z2: &Matrix, t: f64) -> Matrix {
    symmetric_part(&(z1 * (1.0 - t) + z2 * t))
}

/// Searches `t in [0, 1]` for `(1 - t) Z1 + t Z2` negative definite.
///
/// `lambda_max` of an affine symmetric pencil is convex in `t`, so a grid scan
/// followed by golden-section refinement around the best grid cell locates the
/// minimum. Success is always re-checked by [`classify`].
pub fn lemma1_combination(z1: &Matrix, z2: &Matrix) -> Result<Lemma1Outcome, MatrixError> {
    if z1.shape() != z2.shape() {
        return Err(MatrixError::DimensionMismatch {
            left: z1.nrows(),
            right: z2.nrows(),
        });
    }
    for z in [z1, z2] {
        let defect = symmetry_defect(z);
        if defect > SYMMETRY_TOL * inf_norm(z).max(1.0) {
            return Err(MatrixError::NotSymmetric { defect });
        }
    }
    let objective = |t: f64| lambda_max(&mixture(z1, z2, t));

    let mut best_t = 0.0;
    let mut best = f64::INFINITY;
    let mut best_idx = 0;
    for i in 0..=LEMMA1_GRID {
        let t = i as f64 / LEMMA1_GRID as f64;
        let v = objective(t);
        if v < best {
            best = v;
            best_t = t;
            best_idx = i;
        }
    }

    let h = 1.0 / LEMMA1_GRID as f64;
    let (mut lo, mut hi) = (
        (best_idx as f64 - 1.0).max(0.0) * h,
        (best_idx as f64 + 1.0).min(LEMMA1_GRID as f64) * h,
    );
    let phi = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = hi - phi * (hi - lo);
    let mut d = lo + phi * (hi - lo);
    let (mut fc, mut fd) = (objective(c), objective(d));
    for _ in 0..LEMMA1_REFINE_ITERS {
        if fc < fd {
            hi = d;
            d = c;
            fd = fc;
            c = hi - phi * (hi - lo);
            fc = objective(c);
        } else {
            lo = c;
            c = d;
            fc = fd;
            d = lo + phi * (hi - lo);
            fd = objective(d);
        }
    }
    for (t, v) in [(c, fc), (d, fd)] {
        if v < best {
            best = v;
            best_t = t;
        }
    }

    let combined = mixture(z1, z2, best_t);
    let verdict = classify(&combined)?;
    if verdict.is_negative_definite() {
        Ok(Lemma1Outcome::Found {
            tau1: 1.0 - best_t,
            tau2: best_t,
            verdict,
        })
    } else {
        Ok(Lemma1Outcome::NoneFound {
            best_lambda_max: best,
            best_t,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    fn m(n: usize, data: &[f64]) -> Matrix {
        Matrix::from_row_slice(n, n, data)
    }

    #[test]
    fn symmetric_part_examples() {
        let c = m(2, &[0.0, 2.0, 0.0, 0.0]);
        assert_eq!(symmetric_part(&c), m(2, &[0.0, 1.0, 1.0, 0.0]));
        let s = m(2, &[1.0, 3.0, 3.0, -2.0]);
        assert_eq!(symmetric_part(&s), s);
    }

    #[test]
    fn example1_r_matrix() {
        let a = fixtures::example1_matrix();
        let (k, b) = fixtures::example1_kb();
        let c = (Matrix::from_diagonal(&k) + &k * k.transpose() * b) * &a;
        let r = symmetric_part(&c);
        let expected = fixtures::example1_r_matrix();
        assert!((&r - &expected).amax() <= 1e-12);

        let verdict = classify(&r).unwrap();
        assert_eq!(verdict.class, DefinitenessClass::NegativeDefinite);
        // Sylvester on -768 R: 600, 60444, 2480640 (exact integer oracle)
        let minors = leading_principal_minors(&(-768.0 * &r));
        for (got, want) in minors.iter().zip([600.0, 60444.0, 2480640.0]) {
            assert!((got - want).abs() <= 1e-9 * want, "{got} vs {want}");
        }
    }

    #[test]
    fn classify_simple() {
        let v = classify(&(-Matrix::identity(3, 3))).unwrap();
        assert_eq!(v.class, DefinitenessClass::NegativeDefinite);
        assert_eq!(v.lambda_max, -1.0);
        let v = classify(&m(2, &[-1.0, 0.0, 0.0, 0.0])).unwrap();
        assert_eq!(v.class, DefinitenessClass::NegativeSemidefinite);
        let v = classify(&Matrix::zeros(2, 2)).unwrap();
        assert_eq!(v.class, DefinitenessClass::Zero);
        let v = classify(&m(2, &[1.0, 0.0, 0.0, -1.0])).unwrap();
        assert_eq!(v.class, DefinitenessClass::Indefinite);
        let v = classify(&m(2, &[2.0, 0.0, 0.0, 0.0])).unwrap();
        assert_eq!(v.class, DefinitenessClass::PositiveSemidefinite);
        let v = classify(&Matrix::identity(2, 2)).unwrap();
        assert_eq!(v.class, DefinitenessClass::PositiveDefinite);
        assert!(matches!(
            classify(&m(2, &[0.0, 1.0, 0.0, 0.0])),
            Err(MatrixError::NotSymmetric { .. })
        ));
    }

    #[test]
    fn restricted_examples() {
        let alpha = Vector::from_vec(vec![0.3, -1.0, 2.0]);
        let v = restricted_definiteness(&(-Matrix::identity(3, 3)), &alpha, 1e-9).unwrap();
        assert_eq!(v.class, DefinitenessClass::NegativeDefinite);

        let z = m(2, &[1.0, 0.0, 0.0, -1.0]);
        let v = restricted_definiteness(&z, &Vector::from_vec(vec![1.0, 0.0]), 1e-9).unwrap();
        assert_eq!(v.class, DefinitenessClass::NegativeDefinite);
        assert!((v.lambda_max + 1.0).abs() < 1e-15);

        assert!(matches!(
            restricted_definiteness(&z, &Vector::zeros(2), 1e-9),
            Err(MatrixError::ZeroVector)
        ));
    }

    #[test]
    fn restricted_fails_for_example1() {
        let a = fixtures::example1_matrix();
        let pairs = left_eigenpairs(&a).unwrap();
        let pair = pairs
            .iter()
            .find(|p| p.lambda < 0.0 && p.all_components_nonzero)
            .expect("negative real left eigenpair with nonzero components");
        let z = symmetric_part(&(Matrix::from_diagonal(&pair.alpha) * &a));
        let v = restricted_definiteness(&z, &pair.alpha, default_tolerance(&z)).unwrap();
        assert_ne!(v.class, DefinitenessClass::NegativeDefinite);
        assert!(v.lambda_max > 0.02);
    }

    #[test]
    fn left_eigenpairs_example1() {
        // Characteristic polynomial of A^T: 24 l^3 + 76 l^2 + 132 l + 5; its
        // single real root, bracketed by bisection.
        let poly = |l: f64| 24.0 * l * l * l + 76.0 * l * l + 132.0 * l + 5.0;
        let (mut lo, mut hi) = (-1.0, 0.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if poly(mid) > 0.0 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        let root = 0.5 * (lo + hi);
        let a = fixtures::example1_matrix();
        let pairs = left_eigenpairs(&a).unwrap();
        assert_eq!(pairs.len(), 1);
        let p = &pairs[0];
        assert!((p.lambda - root).abs() < 1e-12);
        assert!(p.lambda < 0.0 && p.all_components_nonzero);
        assert!((p.alpha.norm() - 1.0).abs() < 1e-14);
        assert!(p.alpha[0] > 0.0);
        let resid = &p.alpha.transpose() * &a - p.alpha.transpose() * p.lambda;
        assert!(resid.amax() < 1e-12);
    }

    #[test]
    fn left_eigenpairs_degenerate_and_diagonal() {
        let pairs = left_eigenpairs(&(-Matrix::identity(3, 3))).unwrap();
        assert_eq!(pairs.len(), 3);
        assert!(pairs.iter().all(|p| p.lambda == -1.0 && p.cluster == 0));
        let basis = Matrix::from_columns(&pairs.iter().map(|p| p.alpha.clone()).collect::<Vec<_>>());
        assert!((basis.transpose() * &basis - Matrix::identity(3, 3)).amax() < 1e-12);

        let pairs = left_eigenpairs(&m(2, &[-1.0, 0.0, 0.0, -2.0])).unwrap();
        assert_eq!(pairs.len(), 2);
        let mut found = pairs
            .iter()
            .map(|p| (p.lambda, p.alpha[0].abs().round(), p.all_components_nonzero))
            .collect::<Vec<_>>();
        found.sort_by(|a, b| a.0.total_cmp(&b.0));
        assert_eq!(found, vec![(-2.0, 0.0, false), (-1.0, 1.0, false)]);
    }

    #[test]
    fn lemma1_examples() {
        let out = lemma1_combination(&(-Matrix::identity(2, 2)), &Matrix::zeros(2, 2)).unwrap();
        assert_eq!(out.taus(), Some((1.0, 0.0)));

        let z1 = m(2, &[1.0, 0.0, 0.0, -1.0]);
        let z2 = m(2, &[-1.0, 0.0, 0.0, -1.0]);
        let (t1, t2) = lemma1_combination(&z1, &z2).unwrap().taus().unwrap();
        assert!(t2 > t1);
        // scan oracle: mixture negative definite iff t > 1/2
        assert!(t2 > 0.5);
        assert!(classify(&(z1 * t1 + z2 * t2)).unwrap().is_negative_definite());

        let out = lemma1_combination(&Matrix::identity(2, 2), &Matrix::zeros(2, 2)).unwrap();
        assert!(matches!(out, Lemma1Outcome::NoneFound { .. }));
        assert!(lemma1_combination(&Matrix::zeros(2, 2), &Matrix::zeros(3, 3)).is_err());
    }

    #[test]
    fn empty_restriction_is_vacuous() {
        let v = restricted_definiteness(&m(1, &[5.0]), &Vector::from_vec(vec![2.0]), 1e-9).unwrap();
        assert_eq!(v.class, DefinitenessClass::NegativeDefinite);
    }
}
