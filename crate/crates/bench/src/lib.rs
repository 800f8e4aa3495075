//! Shared inputs for the criterion benchmarks.

use lvcert_core::{fixtures, Matrix};

/// Named matrices the benchmarks run against.
pub fn workloads() -> Vec<(&'static str, Matrix)> {
    vec![
        ("identity3", -Matrix::identity(3, 3)),
        ("example1", fixtures::example1_matrix()),
        ("example2", fixtures::example2_matrix()),
        ("structured", fixtures::structured_default().matrix()),
    ]
}
