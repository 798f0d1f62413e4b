//! Dense linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, SymmetricEigen, SVD};
use num_complex::Complex64;

/// Largest eigenvalue of the symmetric part of `m`.
pub fn sym_max_eig(m: &DMatrix<f64>) -> f64 {
    let s = (m + m.transpose()) * 0.5;
    SymmetricEigen::new(s)
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Smallest eigenvalue of the symmetric part of `m`.
pub fn sym_min_eig(m: &DMatrix<f64>) -> f64 {
    let s = (m + m.transpose()) * 0.5;
    SymmetricEigen::new(s)
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// 2-norm condition number.
pub fn condition_number(m: &DMatrix<f64>) -> f64 {
    let sv = SVD::new(m.clone(), false, false).singular_values;
    let max = sv.iter().copied().fold(0.0, f64::max);
    let min = sv.iter().copied().fold(f64::INFINITY, f64::min);
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Smallest singular value of `A - zI`.
pub fn shifted_sigma_min(a: &DMatrix<f64>, z: Complex64) -> f64 {
    let n = a.nrows();
    let m = DMatrix::from_fn(n, n, |i, j| {
        let v = Complex64::new(a[(i, j)], 0.0);
        if i == j {
            v - z
        } else {
            v
        }
    });
    SVD::new(m, false, false)
        .singular_values
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// Orthonormal basis of the `k` right singular vectors of `A - zI` with the
/// smallest singular values, together with the (k+1)-th smallest singular
/// value relative to the largest. Returns columns as an n×k complex matrix.
fn smallest_right_vectors(a: &DMatrix<f64>, z: Complex64, k: usize) -> (DMatrix<Complex64>, f64, f64) {
    let n = a.nrows();
    let m = DMatrix::from_fn(n, n, |i, j| {
        let v = Complex64::new(a[(i, j)], 0.0);
        if i == j {
            v - z
        } else {
            v
        }
    });
    let svd = SVD::new(m, false, true);
    let v_t = svd.v_t.expect("requested right vectors");
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| svd.singular_values[x].total_cmp(&svd.singular_values[y]));
    let top = svd.singular_values.iter().copied().fold(0.0, f64::max).max(1.0);
    let worst_kept = svd.singular_values[order[k - 1]] / top;
    let next = if k < n {
        svd.singular_values[order[k]] / top
    } else {
        f64::INFINITY
    };
    let cols = DMatrix::from_fn(n, k, |i, j| v_t[(order[j], i)].conj());
    (cols, worst_kept, next)
}

/// Real basis of the invariant subspace of `a` for eigenvalue `z` of
/// multiplicity `k` (for complex `z` this covers the conjugate too), returned
/// as columns. `None` when the eigenvalue is defective.
pub fn eigen_basis(a: &DMatrix<f64>, z: Complex64, k: usize) -> Option<(DMatrix<f64>, f64)> {
    let (v, kept, next) = smallest_right_vectors(a, z, k);
    if kept > 1e-7 || next < 1e-9 {
        return None;
    }
    let n = a.nrows();
    if z.im == 0.0 {
        // Real eigenvalue: the complex null space has a real basis. Take the
        // real parts (or imaginary parts where those dominate) and orthonormalise.
        let mut cols = DMatrix::zeros(n, 2 * k);
        for j in 0..k {
            for i in 0..n {
                cols[(i, 2 * j)] = v[(i, j)].re;
                cols[(i, 2 * j + 1)] = v[(i, j)].im;
            }
        }
        let svd = SVD::new(cols, true, false);
        let u = svd.u.expect("requested left vectors");
        let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
        order.sort_by(|&x, &y| svd.singular_values[y].total_cmp(&svd.singular_values[x]));
        let basis = DMatrix::from_fn(n, k, |i, j| u[(i, order[j])]);
        Some((basis, kept))
    } else {
        let mut cols = DMatrix::zeros(n, 2 * k);
        for j in 0..k {
            let (x, y) = balanced_parts(&v, j);
            cols.set_column(2 * j, &x);
            cols.set_column(2 * j + 1, &y);
        }
        Some((cols, kept))
    }
}

/// Real and imaginary parts of column `j` after a phase rotation that makes
/// them orthogonal, scaled so their mean squared norm is one.
fn balanced_parts(v: &DMatrix<Complex64>, j: usize) -> (nalgebra::DVector<f64>, nalgebra::DVector<f64>) {
    let n = v.nrows();
    let x = nalgebra::DVector::from_fn(n, |i, _| v[(i, j)].re);
    let y = nalgebra::DVector::from_fn(n, |i, _| v[(i, j)].im);
    let phi = 0.5 * (-2.0 * x.dot(&y)).atan2(x.norm_squared() - y.norm_squared());
    let (s, c) = phi.sin_cos();
    let xr = &x * c - &y * s;
    let yr = &x * s + &y * c;
    let scale = ((xr.norm_squared() + yr.norm_squared()) / 2.0).sqrt();
    (xr / scale, yr / scale)
}

/// Group eigenvalues into clusters of numerically equal values, keeping
/// only the upper member of each conjugate pair. Returns (value, multiplicity).
pub fn eigen_clusters(values: &[Complex64], imag_tol: f64) -> Vec<(Complex64, usize)> {
    let mut clusters: Vec<(Complex64, usize)> = Vec::new();
    for &z in values {
        let z = if z.im.abs() <= imag_tol * (1.0 + z.norm()) {
            Complex64::new(z.re, 0.0)
        } else {
            z
        };
        if z.im < 0.0 {
            continue;
        }
        let tol = 1e-7 * (1.0 + z.norm());
        if let Some(c) = clusters.iter_mut().find(|(w, _)| (*w - z).norm() <= tol) {
            c.1 += 1;
        } else {
            clusters.push((z, 1));
        }
    }
    clusters
}

/// Real block-diagonalising similarity: returns `S` with `S⁻¹ A S`
/// block-diagonal (1×1 for real eigenvalues, `[[a, b], [-b, a]]` for
/// `a ± jb`). Also returns the width of each diagonal block. `None` for
/// defective or badly conditioned bases.
pub fn real_modal_basis(a: &DMatrix<f64>, values: &[Complex64]) -> Option<(DMatrix<f64>, Vec<usize>)> {
    let n = a.nrows();
    let clusters = eigen_clusters(values, 1e-10);
    let mut s = DMatrix::zeros(n, n);
    let mut widths = Vec::new();
    let mut col = 0;
    for (z, k) in clusters {
        let (basis, _) = eigen_basis(a, z, k)?;
        let width = basis.ncols();
        if col + width > n {
            return None;
        }
        s.view_mut((0, col), (n, width)).copy_from(&basis);
        col += width;
        let block = if z.im == 0.0 { 1 } else { 2 };
        widths.extend(std::iter::repeat_n(block, width / block));
    }
    if col != n || condition_number(&s) > 1e10 {
        return None;
    }
    Some((s, widths))
}

/// Rows form an orthonormal basis of the orthogonal complement of the column
/// space of `v` (assumed full column rank).
pub fn orthogonal_complement_rows(v: &DMatrix<f64>) -> DMatrix<f64> {
    let n = v.nrows();
    let k = v.ncols();
    if k == 0 {
        return DMatrix::identity(n, n);
    }
    let q = v.clone().qr().q();
    let proj = &q * q.transpose();
    let eig = SymmetricEigen::new(proj);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| eig.eigenvalues[x].total_cmp(&eig.eigenvalues[y]));
    DMatrix::from_fn(n - k, n, |i, j| eig.eigenvectors[(j, order[i])])
}
