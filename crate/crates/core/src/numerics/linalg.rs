use super::matrix::{dot, norm, Matrix};

/// Orthonormal basis (as columns) for the span of `vectors`, by modified
/// Gram-Schmidt with one re-orthogonalization pass. Vectors whose residual
/// norm falls below `tol` are dropped.
pub fn orthonormal_basis(vectors: &[Vec<f64>], dim: usize, tol: f64) -> Matrix {
    let mut basis: Vec<Vec<f64>> = Vec::new();
    for v in vectors {
        let mut r = v.clone();
        for _ in 0..2 {
            for b in &basis {
                let c = dot(&r, b);
                r.iter_mut().zip(b).for_each(|(x, y)| *x -= c * y);
            }
        }
        let n = norm(&r);
        if n > tol {
            basis.push(r.into_iter().map(|x| x / n).collect());
        }
    }
    columns_to_matrix(&basis, dim)
}

/// Orthonormal basis of the orthogonal complement of the column span of `basis`.
pub fn complement_basis(basis: &Matrix) -> Matrix {
    let dim = basis.rows();
    let mut vectors: Vec<Vec<f64>> = (0..basis.cols()).map(|j| basis.col_vec(j)).collect();
    let existing = vectors.len();
    for e in 0..dim {
        let mut v = vec![0.0; dim];
        v[e] = 1.0;
        vectors.push(v);
    }
    let full = orthonormal_basis(&vectors, dim, 1e-8);
    let keep: Vec<usize> = (existing.min(full.cols())..full.cols()).collect();
    full.select_cols(&keep)
}

/// Removes the component of `v` inside the column span of orthonormal `basis`.
pub fn project_out(v: &[f64], basis: &Matrix) -> Vec<f64> {
    let mut r = v.to_vec();
    for j in 0..basis.cols() {
        let b = basis.col_vec(j);
        let c = dot(&r, &b);
        r.iter_mut().zip(&b).for_each(|(x, y)| *x -= c * y);
    }
    r
}

/// Projection of `v` onto the column span of orthonormal `basis`.
pub fn project_onto(v: &[f64], basis: &Matrix) -> Vec<f64> {
    let out = project_out(v, basis);
    v.iter().zip(out).map(|(a, b)| a - b).collect()
}

pub(crate) fn columns_to_matrix(cols: &[Vec<f64>], dim: usize) -> Matrix {
    Matrix::from_fn(dim, cols.len(), |i, j| cols[j][i])
}
