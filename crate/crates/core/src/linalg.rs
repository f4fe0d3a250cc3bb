//! Small dense linear-algebra helpers shared by the modules.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{dim_err, Error, Result};

/// Eigenvalues below this (relative to the spectral radius, floored at 1)
/// are treated as zero when forming square roots.
pub const EIG_CLIP: f64 = 1e-12;

pub fn is_symmetric(m: &DMatrix<f64>, tol: f64) -> bool {
    if m.nrows() != m.ncols() {
        return false;
    }
    let scale = m.amax().max(1.0);
    for i in 0..m.nrows() {
        for j in (i + 1)..m.ncols() {
            if (m[(i, j)] - m[(j, i)]).abs() > tol * scale {
                return false;
            }
        }
    }
    true
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Symmetric PSD square root via eigendecomposition.
///
/// Eigenvalues below `-1e-10·scale` are rejected; the remaining ones below
/// `EIG_CLIP·scale` are clipped to zero.
pub fn psd_sqrt(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if m.nrows() != m.ncols() {
        return Err(dim_err(format!("square root of a {}x{} matrix", m.nrows(), m.ncols())));
    }
    if m.nrows() == 0 {
        return Ok(m.clone());
    }
    let eig = SymmetricEigen::new(symmetrize(m));
    let scale = eig.eigenvalues.amax().max(1.0);
    let lmin = eig.eigenvalues.min();
    if lmin < -1e-10 * scale {
        return Err(Error::NotPsd(format!("smallest eigenvalue {lmin:e}")));
    }
    let roots = eig
        .eigenvalues
        .map(|l| if l <= EIG_CLIP * scale { 0.0 } else { l.sqrt() });
    let q = &eig.eigenvectors;
    Ok(q * DMatrix::from_diagonal(&roots) * q.transpose())
}

/// Lower-triangular factor `L` with `L Lᵀ = m` for a symmetric PSD matrix.
///
/// Zero pivots (within a relative tolerance) zero the corresponding column,
/// so singular covariances such as `0` factor without jitter.
pub fn semidefinite_cholesky(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = m.nrows();
    if n != m.ncols() {
        return Err(dim_err("cholesky of a non-square matrix"));
    }
    let scale = m.diagonal().amax().max(f64::MIN_POSITIVE);
    let tol = 1e-12 * scale;
    let mut l = DMatrix::<f64>::zeros(n, n);
    for j in 0..n {
        let mut d = m[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if d < -1e-9 * scale {
            return Err(Error::NotPsd(format!("negative pivot {d:e} at index {j}")));
        }
        if d <= tol {
            // The whole column of the Schur complement must vanish too.
            for i in (j + 1)..n {
                let mut s = m[(i, j)];
                for k in 0..j {
                    s -= l[(i, k)] * l[(j, k)];
                }
                if s.abs() > 1e-7 * scale {
                    return Err(Error::NotPsd(format!("zero pivot with coupling {s:e} at ({i},{j})")));
                }
            }
            continue;
        }
        let root = d.sqrt();
        l[(j, j)] = root;
        for i in (j + 1)..n {
            let mut s = m[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / root;
        }
    }
    Ok(l)
}

/// Solves `h x = rhs` for symmetric PSD `h`, adding diagonal jitter
/// `1e-12·scale, 1e-11·scale, ...` until the Cholesky factorization succeeds.
pub fn solve_spd_jitter(h: &DMatrix<f64>, rhs: &DVector<f64>) -> Result<DVector<f64>> {
    let scale = h.diagonal().amax().max(1e-300);
    let mut jitter = 0.0;
    for _ in 0..12 {
        let mut hj = h.clone();
        if jitter > 0.0 {
            for i in 0..hj.nrows() {
                hj[(i, i)] += jitter;
            }
        }
        if let Some(ch) = hj.cholesky() {
            let x = ch.solve(rhs);
            if x.iter().all(|v| v.is_finite()) {
                return Ok(x);
            }
        }
        jitter = if jitter == 0.0 { 1e-12 * scale } else { jitter * 10.0 };
    }
    Err(Error::Numerical("Newton system is not positive definite".into()))
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    SymmetricEigen::new(symmetrize(m)).eigenvalues.min()
}

pub fn block_diag(blocks: &[DMatrix<f64>]) -> DMatrix<f64> {
    let rows: usize = blocks.iter().map(|b| b.nrows()).sum();
    let cols: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let (mut r, mut c) = (0, 0);
    for b in blocks {
        out.view_mut((r, c), (b.nrows(), b.ncols())).copy_from(b);
        r += b.nrows();
        c += b.ncols();
    }
    out
}

/// Row-major nested vectors to a dense matrix.
pub fn from_rows(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, |r| r.len());
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(dim_err("ragged matrix rows"));
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

pub fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}
