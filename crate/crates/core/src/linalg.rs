//! Dense helpers shared by the numerical modules.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub type Matrix = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Singular value decomposition with descending singular values and a
/// complete set of right singular vectors (`v` is `cols × cols`).
pub(crate) struct SortedSvd {
    /// Thin left singular vectors, one per entry of `sigma`; columns paired
    /// with a zero singular value are zero.
    pub u: Matrix,
    pub sigma: Vec<f64>,
    /// Right singular vectors as columns, ordered to match `sigma` first.
    pub v: Matrix,
}

const JACOBI_MAX_SWEEPS: usize = 80;

/// One-sided (Hestenes) Jacobi SVD.
///
/// nalgebra's bidiagonalization SVD returns inaccurate factors for some
/// exactly rank-deficient inputs (see the regression test below), which the
/// subspace routines cannot tolerate; Jacobi rotations are slower but keep
/// small singular values accurate.
pub(crate) fn sorted_svd(m: &Matrix) -> SortedSvd {
    let (rows, cols) = m.shape();
    // Pad with zero rows so the columns span all `cols` right vectors.
    let mut work = if rows < cols {
        let mut padded = Matrix::zeros(cols, cols);
        padded.view_mut((0, 0), (rows, cols)).copy_from(m);
        padded
    } else {
        m.clone()
    };
    let mut v = Matrix::identity(cols, cols);
    let tol = f64::EPSILON * (work.nrows() as f64).sqrt();
    for _ in 0..JACOBI_MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..cols {
            for q in p + 1..cols {
                let (alpha, beta, gamma) = {
                    let (cp, cq) = (work.column(p), work.column(q));
                    (cp.norm_squared(), cq.norm_squared(), cp.dot(&cq))
                };
                if gamma == 0.0 || gamma.abs() <= tol * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate_columns(&mut work, p, q, c, s);
                rotate_columns(&mut v, p, q, c, s);
            }
        }
        if !rotated {
            break;
        }
    }

    let norms: Vec<f64> = work.column_iter().map(|c| c.norm()).collect();
    let mut order: Vec<usize> = (0..cols).collect();
    order.sort_by(|&a, &b| {
        norms[b]
            .partial_cmp(&norms[a])
            .unwrap_or(std::cmp::Ordering::Equal)
    });

    let keep_u = cols.min(rows);
    let mut u = Matrix::zeros(rows, keep_u);
    let mut sigma = Vec::with_capacity(keep_u);
    for (dst, &src) in order.iter().take(keep_u).enumerate() {
        let s = norms[src];
        if s > 0.0 {
            u.column_mut(dst)
                .copy_from(&(work.column(src).rows(0, rows) / s));
        }
        sigma.push(s);
    }
    let v_sorted = Matrix::from_fn(cols, cols, |r, c| v[(r, order[c])]);
    SortedSvd {
        u,
        sigma,
        v: v_sorted,
    }
}

fn rotate_columns(m: &mut Matrix, p: usize, q: usize, c: f64, s: f64) {
    for r in 0..m.nrows() {
        let (a, b) = (m[(r, p)], m[(r, q)]);
        m[(r, p)] = c * a - s * b;
        m[(r, q)] = s * a + c * b;
    }
}

pub fn spectral_norm(m: &Matrix) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    sorted_svd(m).sigma.first().copied().unwrap_or(0.0)
}

pub fn max_abs(m: &Matrix) -> f64 {
    m.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

/// Ascending eigenvalues of the symmetric part of `m`.
pub fn symmetric_eigenvalues(m: &Matrix) -> Vec<f64> {
    if m.is_empty() {
        return Vec::new();
    }
    let sym = symmetrize(m);
    let mut eig: Vec<f64> = sym.symmetric_eigenvalues().iter().copied().collect();
    eig.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    eig
}

pub fn lambda_max(m: &Matrix) -> f64 {
    symmetric_eigenvalues(m)
        .last()
        .copied()
        .unwrap_or(f64::NEG_INFINITY)
}

pub fn lambda_min(m: &Matrix) -> f64 {
    symmetric_eigenvalues(m)
        .first()
        .copied()
        .unwrap_or(f64::INFINITY)
}

pub fn symmetrize(m: &Matrix) -> Matrix {
    (m + m.transpose()) * 0.5
}

/// Largest eigenvalue modulus.
pub fn spectral_radius(m: &Matrix) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.complex_eigenvalues()
        .iter()
        .fold(0.0_f64, |acc, z| acc.max(z.norm()))
}

pub fn from_rows(rows: &[Vec<f64>]) -> Result<Matrix> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != ncols) {
        return Err(Error::Parse(format!(
            "ragged matrix: row {} has {} entries, row 0 has {}",
            i,
            r.len(),
            ncols
        )));
    }
    Ok(Matrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

pub fn to_rows(m: &Matrix) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| m.row(i).iter().copied().collect())
        .collect()
}

pub fn kron(a: &Matrix, b: &Matrix) -> Matrix {
    a.kronecker(b)
}

pub fn vstack(top: &Matrix, bottom: &Matrix) -> Matrix {
    assert_eq!(top.ncols(), bottom.ncols(), "vstack column mismatch");
    let mut out = Matrix::zeros(top.nrows() + bottom.nrows(), top.ncols());
    out.view_mut((0, 0), top.shape()).copy_from(top);
    out.view_mut((top.nrows(), 0), bottom.shape())
        .copy_from(bottom);
    out
}

pub fn hstack(left: &Matrix, right: &Matrix) -> Matrix {
    assert_eq!(left.nrows(), right.nrows(), "hstack row mismatch");
    let mut out = Matrix::zeros(left.nrows(), left.ncols() + right.ncols());
    out.view_mut((0, 0), left.shape()).copy_from(left);
    out.view_mut((0, left.ncols()), right.shape())
        .copy_from(right);
    out
}

pub fn block_diag(a: &Matrix, b: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(a.nrows() + b.nrows(), a.ncols() + b.ncols());
    out.view_mut((0, 0), a.shape()).copy_from(a);
    out.view_mut(a.shape(), b.shape()).copy_from(b);
    out
}

/// Column-major vectorization.
pub fn vec_cols(m: &Matrix) -> Vector {
    Vector::from_column_slice(m.as_slice())
}

pub fn unvec_cols(v: &[f64], rows: usize, cols: usize) -> Matrix {
    Matrix::from_column_slice(rows, cols, v)
}

/// Minimum-norm least-squares solution of `a x = b` via the pseudo-inverse,
/// discarding singular values below `rel_tol` times the largest.
pub fn lstsq(a: &Matrix, b: &Matrix, rel_tol: f64) -> Matrix {
    let svd = sorted_svd(a);
    let cutoff = svd.sigma.first().copied().unwrap_or(0.0) * rel_tol;
    let mut x = Matrix::zeros(a.ncols(), b.ncols());
    for (k, &s) in svd.sigma.iter().enumerate() {
        if s <= cutoff || s == 0.0 {
            break;
        }
        let coeff = svd.u.column(k).transpose() * b / s;
        x += svd.v.column(k) * coeff;
    }
    x
}
