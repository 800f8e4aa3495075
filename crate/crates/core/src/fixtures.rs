//! Built-in reference systems: the three-species system with a `(k, b)`
//! certificate but no classical one, the competitive system for which no
//! certificate is known, and a default member of the structured family.

use crate::certificates::StructuredFamilyParams;
use crate::model::LvSystem;
use crate::{Matrix, Vector};

/// Raw system with `r = (1, 3, 19/6)` and `B = [[-1,0,9],[-1,-1,0],[-1,-1,-1]]`.
pub fn example1_system() -> LvSystem {
    let r = Vector::from_vec(vec![1.0, 3.0, 19.0 / 6.0]);
    let b = Matrix::from_row_slice(3, 3, &[-1.0, 0.0, 9.0, -1.0, -1.0, 0.0, -1.0, -1.0, -1.0]);
    LvSystem::new(r, b).expect("fixture is well formed")
}

/// Normalized matrix of [`example1_system`]:
/// `(1/2) [[-5, 0, 3], [-5, -1, 0], [-5, -1, -1/3]]`.
pub fn example1_matrix() -> Matrix {
    Matrix::from_row_slice(
        3,
        3,
        &[-2.5, 0.0, 1.5, -2.5, -0.5, 0.0, -2.5, -0.5, -1.0 / 6.0],
    )
}

/// `k = (1, 1/2, 5/4)`, `b = -1/4`.
pub fn example1_kb() -> (Vector, f64) {
    (Vector::from_vec(vec![1.0, 0.5, 1.25]), -0.25)
}

/// `-(1/768) [[600, 66, -77], [66, 108, 197], [-77, 197, 470]]`.
pub fn example1_r_matrix() -> Matrix {
    Matrix::from_row_slice(
        3,
        3,
        &[600.0, 66.0, -77.0, 66.0, 108.0, 197.0, -77.0, 197.0, 470.0],
    ) / -768.0
}

/// `-[[5, 10, 2], [4, 7, 11], [10, 2, 8]]`.
pub fn example2_matrix() -> Matrix {
    -Matrix::from_row_slice(3, 3, &[5.0, 10.0, 2.0, 4.0, 7.0, 11.0, 10.0, 2.0, 8.0])
}

/// `lambda = (1/2, 3/4, 2)`, `delta = 0.1`.
pub fn structured_default() -> StructuredFamilyParams {
    StructuredFamilyParams::new(0.5, 0.75, 2.0, 0.1).expect("fixture is valid")
}
