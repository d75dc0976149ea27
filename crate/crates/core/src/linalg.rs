//! Small dense helpers: Cholesky factorization and triangular solves.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use crate::error::{Error, Result};

/// Lower Cholesky factor of a symmetric positive definite matrix.
pub fn cholesky(a: ArrayView2<f64>) -> Result<Array2<f64>> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::ShapeError(format!("{}×{} matrix is not square", n, a.ncols())));
    }
    let mut l = Array2::<f64>::zeros((n, n));
    for j in 0..n {
        let mut d = a[[j, j]];
        for k in 0..j {
            d -= l[[j, k]] * l[[j, k]];
        }
        if !(d > 0.0 && d.is_finite()) {
            return Err(Error::CholeskyFailure { pivot: j });
        }
        let d = d.sqrt();
        l[[j, j]] = d;
        for i in j + 1..n {
            let mut s = a[[i, j]];
            for k in 0..j {
                s -= l[[i, k]] * l[[j, k]];
            }
            l[[i, j]] = s / d;
        }
    }
    Ok(l)
}

/// Validate a Cholesky factor: square, lower triangular, positive diagonal.
pub fn check_cholesky(l: ArrayView2<f64>) -> Result<()> {
    let n = l.nrows();
    if l.ncols() != n {
        return Err(Error::InvalidCholesky(format!("{}×{} factor is not square", n, l.ncols())));
    }
    for i in 0..n {
        if !(l[[i, i]] > 0.0) {
            return Err(Error::InvalidCholesky(format!("diagonal entry {i} is {}", l[[i, i]])));
        }
        if (i + 1..n).any(|j| l[[i, j]] != 0.0) {
            return Err(Error::InvalidCholesky(format!("row {i} has entries above the diagonal")));
        }
    }
    Ok(())
}

/// Solve `L y = b` by forward substitution.
pub fn solve_lower(l: ArrayView2<f64>, b: ArrayView1<f64>) -> Array1<f64> {
    let n = b.len();
    let mut y = Array1::zeros(n);
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= l[[i, k]] * y[k];
        }
        y[i] = s / l[[i, i]];
    }
    y
}

/// Solve `Lᵀ x = y` by back substitution.
pub fn solve_lower_transpose(l: ArrayView2<f64>, y: ArrayView1<f64>) -> Array1<f64> {
    let n = y.len();
    let mut x = Array1::zeros(n);
    for i in (0..n).rev() {
        let mut s = y[i];
        for k in i + 1..n {
            s -= l[[k, i]] * x[k];
        }
        x[i] = s / l[[i, i]];
    }
    x
}

/// Solve a tridiagonal system in place (Thomas algorithm). `lower[i]`
/// multiplies `x[i-1]` in row `i` and `upper[i]` multiplies `x[i+1]`.
pub fn solve_tridiagonal(lower: &[f64], diag: &[f64], upper: &[f64], rhs: &mut [f64], scratch: &mut Vec<f64>) {
    let n = diag.len();
    scratch.clear();
    scratch.resize(n, 0.0);
    let c = scratch;
    let mut b = diag[0];
    c[0] = upper[0] / b;
    rhs[0] /= b;
    for i in 1..n {
        b = diag[i] - lower[i] * c[i - 1];
        c[i] = upper[i] / b;
        rhs[i] = (rhs[i] - lower[i] * rhs[i - 1]) / b;
    }
    for i in (0..n - 1).rev() {
        rhs[i] -= c[i] * rhs[i + 1];
    }
}
