//! Dense linear-algebra helpers on top of faer, plus a small allocation-light
//! symmetric eigenvalue routine for the fitting hot loop.

use faer::{Mat, Side};
use faer::linalg::solvers::DenseSolveCore;
use num_complex::Complex64;

use crate::error::{Error, Result};

fn max_abs(m: &Mat<Complex64>) -> f64 {
    let mut x: f64 = 0.0;
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            x = x.max(m[(i, j)].norm());
        }
    }
    x
}

fn failure(m: &Mat<Complex64>) -> Error {
    Error::NumericalFailure {
        dim: m.nrows(),
        max_abs: max_abs(m),
    }
}

/// Eigen-decomposition of a Hermitian matrix (lower triangle is read).
/// Eigenvalues ascending, eigenvectors orthonormal columns.
pub fn eig_hermitian(m: &Mat<Complex64>) -> Result<(Vec<f64>, Mat<Complex64>)> {
    let evd = m.self_adjoint_eigen(Side::Lower).map_err(|_| failure(m))?;
    let s = evd.S();
    let n = m.nrows();
    let values: Vec<f64> = (0..n).map(|i| s[i].re).collect();
    if values.iter().any(|x| !x.is_finite()) {
        return Err(failure(m));
    }
    Ok((values, evd.U().to_owned()))
}

/// Eigen-decomposition of a general complex matrix. Order is unspecified and
/// eigenvector columns are not normalized.
pub fn eig_general(m: &Mat<Complex64>) -> Result<(Vec<Complex64>, Mat<Complex64>)> {
    let evd = m.eigen().map_err(|_| failure(m))?;
    let s = evd.S();
    let n = m.nrows();
    let values: Vec<Complex64> = (0..n).map(|i| s[i]).collect();
    if values.iter().any(|x| !x.is_finite()) {
        return Err(failure(m));
    }
    Ok((values, evd.U().to_owned()))
}

/// Inverse via partial-pivot LU. Returns `None` if the result is not finite
/// or the residual `A·X − I` is not small.
pub fn inverse(m: &Mat<Complex64>) -> Option<Mat<Complex64>> {
    let n = m.nrows();
    let inv = m.partial_piv_lu().inverse();
    for j in 0..n {
        for i in 0..n {
            if !inv[(i, j)].is_finite() {
                return None;
            }
        }
    }
    let r = m * &inv;
    let scale = max_abs(m) * max_abs(&inv);
    for j in 0..n {
        for i in 0..n {
            let target = if i == j { 1.0 } else { 0.0 };
            if (r[(i, j)] - target).norm() > 1e-6 * scale.max(1.0) {
                return None;
            }
        }
    }
    Some(inv)
}

/// `exp(A)` by scaling and squaring with a truncated Taylor series.
pub fn expm(a: &Mat<Complex64>) -> Mat<Complex64> {
    let n = a.nrows();
    let norm: f64 = (0..n)
        .map(|i| (0..n).map(|j| a[(i, j)].norm()).sum::<f64>())
        .fold(0.0, f64::max);
    let squarings = if norm > 0.25 {
        (norm / 0.25).log2().ceil() as u32
    } else {
        0
    };
    let scale = Complex64::new(0.5f64.powi(squarings as i32), 0.0);
    let b = Mat::<Complex64>::from_fn(n, n, |i, j| a[(i, j)] * scale);
    let mut result = Mat::<Complex64>::identity(n, n);
    let mut term = Mat::<Complex64>::identity(n, n);
    for k in 1..=18 {
        term = &term * &b;
        let inv_k = Complex64::new(1.0 / k as f64, 0.0);
        term = Mat::from_fn(n, n, |i, j| term[(i, j)] * inv_k);
        result = &result + &term;
    }
    for _ in 0..squarings {
        result = &result * &result;
    }
    result
}

/// Eigenvalues (ascending) of a real symmetric matrix given row-major.
/// Householder reduction to tridiagonal form followed by implicit QL.
/// `a` is overwritten.
pub fn symmetric_eigenvalues(a: &mut [f64], n: usize) -> Result<Vec<f64>> {
    assert_eq!(a.len(), n * n);
    if n == 0 {
        return Ok(Vec::new());
    }
    let mut d = vec![0.0; n];
    let mut e = vec![0.0; n];
    tridiagonalize(a, n, &mut d, &mut e);
    tridiagonal_ql(&mut d, &mut e).map_err(|_| Error::NumericalFailure {
        dim: n,
        max_abs: d.iter().chain(e.iter()).fold(0.0f64, |m, x| m.max(x.abs())),
    })?;
    d.sort_by(|x, y| x.total_cmp(y));
    Ok(d)
}

/// Eigenvalues (ascending) of a real symmetric matrix that is tridiagonal
/// apart from a few entries. Givens rotations that skip zeros reduce it to
/// tridiagonal form, so the cost follows the fill-in rather than `n³`.
/// `a` is row-major and overwritten.
pub fn sparse_symmetric_eigenvalues(a: &mut [f64], n: usize) -> Result<Vec<f64>> {
    assert_eq!(a.len(), n * n);
    if n == 0 {
        return Ok(Vec::new());
    }
    for i in 0..n.saturating_sub(2) {
        for j in (i + 2..n).rev() {
            let x = a[j * n + i];
            if x == 0.0 {
                continue;
            }
            let y = a[(j - 1) * n + i];
            let r = pythag(y, x);
            let (c, s) = (y / r, x / r);
            for k in i..n {
                let (u, v) = (a[(j - 1) * n + k], a[j * n + k]);
                a[(j - 1) * n + k] = c * u + s * v;
                a[j * n + k] = c * v - s * u;
            }
            for k in i..n {
                let (u, v) = (a[k * n + j - 1], a[k * n + j]);
                a[k * n + j - 1] = c * u + s * v;
                a[k * n + j] = c * v - s * u;
            }
            a[j * n + i] = 0.0;
            a[i * n + j] = 0.0;
        }
    }
    let mut d: Vec<f64> = (0..n).map(|i| a[i * n + i]).collect();
    let mut e = vec![0.0; n];
    for i in 1..n {
        e[i] = a[i * n + i - 1];
    }
    tridiagonal_ql(&mut d, &mut e).map_err(|_| Error::NumericalFailure {
        dim: n,
        max_abs: d.iter().chain(e.iter()).fold(0.0f64, |m, x| m.max(x.abs())),
    })?;
    d.sort_by(|x, y| x.total_cmp(y));
    Ok(d)
}

fn tridiagonalize(a: &mut [f64], n: usize, d: &mut [f64], e: &mut [f64]) {
    let at = |i: usize, k: usize| i * n + k;
    for i in (1..n).rev() {
        let l = i - 1;
        let mut h = 0.0;
        if l > 0 {
            let scale: f64 = (0..=l).map(|k| a[at(i, k)].abs()).sum();
            if scale == 0.0 {
                e[i] = a[at(i, l)];
            } else {
                for k in 0..=l {
                    a[at(i, k)] /= scale;
                    h += a[at(i, k)] * a[at(i, k)];
                }
                let f = a[at(i, l)];
                let g = if f >= 0.0 { -h.sqrt() } else { h.sqrt() };
                e[i] = scale * g;
                h -= f * g;
                a[at(i, l)] = f - g;
                let mut f = 0.0;
                for j in 0..=l {
                    let mut g = 0.0;
                    for k in 0..=j {
                        g += a[at(j, k)] * a[at(i, k)];
                    }
                    for k in j + 1..=l {
                        g += a[at(k, j)] * a[at(i, k)];
                    }
                    e[j] = g / h;
                    f += e[j] * a[at(i, j)];
                }
                let hh = f / (h + h);
                for j in 0..=l {
                    let f = a[at(i, j)];
                    let g = e[j] - hh * f;
                    e[j] = g;
                    for k in 0..=j {
                        a[at(j, k)] -= f * e[k] + g * a[at(i, k)];
                    }
                }
            }
        } else {
            e[i] = a[at(i, l)];
        }
        d[i] = h;
    }
    e[0] = 0.0;
    for i in 0..n {
        d[i] = a[at(i, i)];
    }
}

/// `sqrt(x² + y²)` without the overflow guard of `f64::hypot`, which is
/// several times slower; entries here stay far below 1e150.
#[inline]
fn pythag(x: f64, y: f64) -> f64 {
    (x * x + y * y).sqrt()
}

/// Eigenvalues of a symmetric tridiagonal matrix by the square-root-free
/// rational QL iteration. `e[i]` holds the coupling between rows `i − 1` and
/// `i`; `e[0]` is ignored. Eigenvalues are returned in `d`, unsorted.
fn tridiagonal_ql(d: &mut [f64], e: &mut [f64]) -> std::result::Result<(), ()> {
    let n = d.len();
    let e2 = e;
    for i in 1..n {
        e2[i - 1] = e2[i] * e2[i];
    }
    e2[n - 1] = 0.0;
    let (mut f, mut t, mut b, mut c) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for l in 0..n {
        let h = d[l].abs() + e2[l].sqrt();
        if t < h {
            t = h;
            b = f64::EPSILON * t;
            c = b * b;
        }
        let mut m = l;
        while e2[m] > c {
            m += 1;
        }
        let mut iter = 0;
        while m != l {
            iter += 1;
            if iter > 60 {
                return Err(());
            }
            let s = e2[l].sqrt();
            let g = d[l];
            let p = (d[l + 1] - g) / (2.0 * s);
            let r = pythag(p, 1.0);
            d[l] = s / (p + r.copysign(p));
            let h = g - d[l];
            for di in &mut d[l + 1..] {
                *di -= h;
            }
            f += h;
            let mut g = if d[m] == 0.0 { b } else { d[m] };
            let mut h = g;
            let mut s = 0.0;
            for i in (l..m).rev() {
                let p = g * h;
                let r = p + e2[i];
                e2[i + 1] = s * r;
                s = e2[i] / r;
                d[i + 1] = h + s * (h + d[i]);
                g = d[i] - e2[i] / g;
                if g == 0.0 {
                    g = b;
                }
                h = g * p / r;
            }
            e2[l] = s * g;
            d[l] = h;
            if h == 0.0 || e2[l].abs() <= (c / h).abs() {
                break;
            }
            e2[l] *= h;
            if e2[l] == 0.0 {
                break;
            }
        }
        d[l] += f;
    }
    Ok(())
}
