//! Small dense helpers shared across modules.

use nalgebra::{DMatrix, DVector};

// nalgebra's iterative decompositions panic on NaN input.
fn all_finite(a: &DMatrix<f64>) -> bool {
    a.iter().all(|v| v.is_finite())
}

/// Smallest eigenvalue of a symmetric matrix. NaN if any entry is non-finite.
pub fn min_eigenvalue(a: &DMatrix<f64>) -> f64 {
    if a.nrows() == 0 {
        return 0.0;
    }
    if !all_finite(a) {
        return f64::NAN;
    }
    a.clone()
        .symmetric_eigenvalues()
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// Largest eigenvalue of a symmetric matrix. NaN if any entry is non-finite.
pub fn max_eigenvalue(a: &DMatrix<f64>) -> f64 {
    if a.nrows() == 0 {
        return 0.0;
    }
    if !all_finite(a) {
        return f64::NAN;
    }
    a.clone()
        .symmetric_eigenvalues()
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Induced 2-norm (largest singular value).
pub fn spectral_norm(a: &DMatrix<f64>) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    // λ_max of the smaller Gram matrix is cheaper than a full SVD.
    let gram = if a.nrows() <= a.ncols() {
        a * a.transpose()
    } else {
        a.transpose() * a
    };
    max_eigenvalue(&gram).max(0.0).sqrt()
}

/// Smallest singular value of a (possibly rectangular) matrix.
pub fn min_singular_value(a: &DMatrix<f64>) -> f64 {
    if !all_finite(a) {
        return f64::NAN;
    }
    a.singular_values().iter().copied().fold(f64::INFINITY, f64::min)
}

/// Block-diagonal assembly.
pub fn block_diag(blocks: &[DMatrix<f64>]) -> DMatrix<f64> {
    let rows = blocks.iter().map(|b| b.nrows()).sum();
    let cols = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let (mut r, mut c) = (0, 0);
    for b in blocks {
        out.view_mut((r, c), b.shape()).copy_from(b);
        r += b.nrows();
        c += b.ncols();
    }
    out
}

/// Concatenates vectors end to end.
pub fn stack(parts: &[DVector<f64>]) -> DVector<f64> {
    let len = parts.iter().map(|p| p.len()).sum();
    let mut out = DVector::zeros(len);
    let mut offset = 0;
    for p in parts {
        out.rows_mut(offset, p.len()).copy_from(p);
        offset += p.len();
    }
    out
}

/// Rotation matrix in ℝ² (angle) or ℝ³ (roll, pitch, yaw about fixed x, y, z).
pub fn rotation_matrix(dim: usize, angles: &[f64]) -> DMatrix<f64> {
    match dim {
        2 => {
            let r = nalgebra::Rotation2::new(angles.first().copied().unwrap_or(0.0));
            DMatrix::from_column_slice(2, 2, r.matrix().as_slice())
        }
        _ => {
            let get = |i: usize| angles.get(i).copied().unwrap_or(0.0);
            let r = nalgebra::Rotation3::from_euler_angles(get(0), get(1), get(2));
            DMatrix::from_column_slice(3, 3, r.matrix().as_slice())
        }
    }
}
