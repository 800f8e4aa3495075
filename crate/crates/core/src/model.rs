//! Lotka-Volterra systems in raw and normalized form.

use crate::{Matrix, Vector};
use thiserror::Error;

/// Relative residual accepted for `r + B y* = 0`.
pub const EQUILIBRIUM_RTOL: f64 = 1e-9;
/// Components of `y*` must exceed this to count as interior.
pub const POSITIVITY_TOL: f64 = 1e-12;
/// Reciprocal condition estimates below this make `B` singular for our purposes.
pub const RCOND_MIN: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("dimension must be at least 1")]
    EmptySystem,
    #[error("interaction matrix is singular (reciprocal condition {rcond:e})")]
    SingularMatrix { rcond: f64 },
    #[error("no interior equilibrium: component {index} is {value:e}")]
    NotInterior { index: usize, value: f64 },
    #[error("equilibrium residual {residual:e} exceeds tolerance {tolerance:e}")]
    Residual { residual: f64, tolerance: f64 },
}

/// Raw system `y' = diag(y)(r + B y)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LvSystem {
    r: Vector,
    b: Matrix,
}

impl LvSystem {
    pub fn new(r: Vector, b: Matrix) -> Result<Self, ModelError> {
        let n = r.len();
        if n == 0 {
            return Err(ModelError::EmptySystem);
        }
        if b.nrows() != n || b.ncols() != n {
            return Err(ModelError::DimensionMismatch {
                expected: n,
                got: if b.nrows() != n { b.nrows() } else { b.ncols() },
            });
        }
        Ok(Self { r, b })
    }

    pub fn dim(&self) -> usize {
        self.r.len()
    }

    pub fn r(&self) -> &Vector {
        &self.r
    }

    pub fn b(&self) -> &Matrix {
        &self.b
    }

    /// Vector field `diag(y)(r + B y)`.
    pub fn field(&self, y: &Vector) -> Vector {
        let growth = &self.r + &self.b * y;
        y.component_mul(&growth)
    }
}

/// Strictly positive solution of `r + B y* = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct InteriorEquilibrium {
    y_star: Vector,
}

impl InteriorEquilibrium {
    /// Wraps a known equilibrium. Only positivity is checked here.
    pub fn new(y_star: Vector) -> Result<Self, ModelError> {
        if let Some((index, &value)) = y_star
            .iter()
            .enumerate()
            .find(|(_, &v)| !(v > POSITIVITY_TOL))
        {
            return Err(ModelError::NotInterior { index, value });
        }
        Ok(Self { y_star })
    }

    pub fn y_star(&self) -> &Vector {
        &self.y_star
    }
}

/// Normalized system `x' = diag(x) A (x - 1)` with equilibrium at `1`.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedSystem {
    a: Matrix,
}

impl NormalizedSystem {
    pub fn new(a: Matrix) -> Result<Self, ModelError> {
        if a.nrows() == 0 {
            return Err(ModelError::EmptySystem);
        }
        if a.nrows() != a.ncols() {
            return Err(ModelError::DimensionMismatch {
                expected: a.nrows(),
                got: a.ncols(),
            });
        }
        Ok(Self { a })
    }

    pub fn dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn a(&self) -> &Matrix {
        &self.a
    }

    pub fn into_matrix(self) -> Matrix {
        self.a
    }

    /// Vector field `diag(x) A (x - 1)`.
    pub fn field(&self, x: &Vector) -> Vector {
        normalized_field(&self.a, x)
    }
}

/// Vector field of the normalized system for a bare matrix.
pub fn normalized_field(a: &Matrix, x: &Vector) -> Vector {
    let shifted = x.add_scalar(-1.0);
    x.component_mul(&(a * shifted))
}

fn inf_norm_vec(v: &Vector) -> f64 {
    v.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
}

fn one_norm(m: &Matrix) -> f64 {
    m.column_iter()
        .map(|c| c.iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// `-(r + B y)` with each row summed by error-free transformations
/// (TwoSum / FMA-based TwoProduct).
fn compensated_residual(r: &Vector, b: &Matrix, y: &Vector) -> Vector {
    Vector::from_fn(r.len(), |i, _| {
        let mut sum = r[i];
        let mut err = 0.0;
        for j in 0..y.len() {
            let p = b[(i, j)] * y[j];
            let p_err = b[(i, j)].mul_add(y[j], -p);
            let t = sum + p;
            let z = t - sum;
            err += (sum - (t - z)) + (p - z) + p_err;
            sum = t;
        }
        -(sum + err)
    })
}

/// Solves `B y* = -r` with partial pivoting and rejects ill-conditioned or
/// non-interior solutions.
pub fn find_interior_equilibrium(sys: &LvSystem) -> Result<InteriorEquilibrium, ModelError> {
    let b = sys.b();
    let lu = b.clone().lu();
    let inverse = lu
        .try_inverse()
        .ok_or(ModelError::SingularMatrix { rcond: 0.0 })?;
    let norm_b = one_norm(b);
    let rcond = if norm_b == 0.0 {
        0.0
    } else {
        1.0 / (norm_b * one_norm(&inverse))
    };
    if !(rcond >= RCOND_MIN) {
        return Err(ModelError::SingularMatrix { rcond });
    }
    let rhs = -sys.r();
    let mut y = lu.solve(&rhs).ok_or(ModelError::SingularMatrix { rcond })?;

    // iterative refinement with a residual accurate to about twice the
    // working precision
    for _ in 0..2 {
        let resid = compensated_residual(sys.r(), b, &y);
        match lu.solve(&resid) {
            Some(dy) => y += dy,
            None => break,
        }
    }

    let residual = inf_norm_vec(&(sys.r() + b * &y));
    let tolerance = EQUILIBRIUM_RTOL * (1.0 + inf_norm_vec(sys.r()));
    if residual > tolerance {
        return Err(ModelError::Residual {
            residual,
            tolerance,
        });
    }
    InteriorEquilibrium::new(y)
}

/// `A = B diag(y*)`.
pub fn normalize(sys: &LvSystem, eq: &InteriorEquilibrium) -> Result<NormalizedSystem, ModelError> {
    let y = eq.y_star();
    if y.len() != sys.dim() {
        return Err(ModelError::DimensionMismatch {
            expected: sys.dim(),
            got: y.len(),
        });
    }
    let mut a = sys.b().clone();
    for (j, mut col) in a.column_iter_mut().enumerate() {
        col *= y[j];
    }
    NormalizedSystem::new(a)
}

/// `y = diag(y*) x`.
pub fn denormalize_state(x: &Vector, eq: &InteriorEquilibrium) -> Result<Vector, ModelError> {
    let y = eq.y_star();
    if x.len() != y.len() {
        return Err(ModelError::DimensionMismatch {
            expected: y.len(),
            got: x.len(),
        });
    }
    Ok(x.component_mul(y))
}

/// `x = diag(y*)^{-1} y`.
pub fn normalize_state(y: &Vector, eq: &InteriorEquilibrium) -> Result<Vector, ModelError> {
    let ys = eq.y_star();
    if y.len() != ys.len() {
        return Err(ModelError::DimensionMismatch {
            expected: ys.len(),
            got: y.len(),
        });
    }
    Ok(y.component_div(ys))
}
