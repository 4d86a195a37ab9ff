//! Small shared numerics: semidefinite Cholesky, trapezoid weights,
//! log-log slope fits.

use nalgebra::DMatrix;

use crate::{Error, Result};

/// Lower-triangular factorization R = L·Lᵀ for a symmetric positive
/// *semi*definite matrix.
///
/// Zero pivots are admitted (perfectly correlated series): a pivot within
/// `tol` of zero forces the rest of its column to zero, which is only
/// consistent when the remaining column entries vanish too; otherwise the
/// matrix is indefinite and an error names the offending pivot.
pub fn semidefinite_cholesky(r: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = r.nrows();
    assert_eq!(n, r.ncols(), "factorization needs a square matrix");
    let tol = 1e-10 * n as f64;
    let mut l = DMatrix::<f64>::zeros(n, n);
    for j in 0..n {
        let mut d = r[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if d < -tol {
            return Err(Error::NotPsd { index: j, pivot: d });
        }
        if d <= tol {
            // Rank-deficient column: entries below must be representable by
            // the previous columns alone.
            l[(j, j)] = 0.0;
            for i in (j + 1)..n {
                let mut s = r[(i, j)];
                for k in 0..j {
                    s -= l[(i, k)] * l[(j, k)];
                }
                if s.abs() > 1e-8 {
                    return Err(Error::NotPsd { index: j, pivot: d });
                }
            }
        } else {
            let dj = d.sqrt();
            l[(j, j)] = dj;
            for i in (j + 1)..n {
                let mut s = r[(i, j)];
                for k in 0..j {
                    s -= l[(i, k)] * l[(j, k)];
                }
                l[(i, j)] = s / dj;
            }
        }
    }
    Ok(l)
}

/// Trapezoid quadrature weights for a uniform grid of `len` points spaced `h`
/// apart. A single point gets weight 1 (point mass).
pub fn trapezoid_weights(len: usize, h: f64) -> Vec<f64> {
    match len {
        0 => Vec::new(),
        1 => vec![1.0],
        _ => {
            let mut w = vec![h; len];
            w[0] = 0.5 * h;
            w[len - 1] = 0.5 * h;
            w
        }
    }
}

/// Trapezoid integral of samples `y` on a uniform grid with spacing `h`.
pub fn trapezoid(y: &[f64], h: f64) -> f64 {
    if y.len() < 2 {
        return 0.0;
    }
    let interior: f64 = y[1..y.len() - 1].iter().sum();
    h * (0.5 * y[0] + interior + 0.5 * y[y.len() - 1])
}

/// Least-squares slope of ln(y) against ln(x).
pub fn loglog_slope(points: &[(f64, f64)]) -> f64 {
    assert!(points.len() >= 2, "slope fit needs at least two points");
    let n = points.len() as f64;
    let (mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0);
    for &(x, y) in points {
        let (lx, ly) = (x.ln(), y.ln());
        sx += lx;
        sy += ly;
        sxx += lx * lx;
        sxy += lx * ly;
    }
    (n * sxy - sx * sy) / (n * sxx - sx * sx)
}

/// Max-abs entry of a matrix.
pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0f64, |a, x| a.max(x.abs()))
}

/// In-place y += a·x for equally shaped matrices, without a temporary.
pub fn mat_axpy(y: &mut DMatrix<f64>, a: f64, x: &DMatrix<f64>) {
    debug_assert_eq!(y.shape(), x.shape());
    for (yi, xi) in y.as_mut_slice().iter_mut().zip(x.as_slice()) {
        *yi += a * xi;
    }
}
