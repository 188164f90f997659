//! Dense linear-algebra helpers shared by the analysis modules.
//!
//! Everything here works on small `nalgebra` matrices. Bases returned by
//! these helpers are sign-normalized (largest-magnitude entry of each
//! column positive) so repeated runs produce identical output.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type Mat = DMatrix<f64>;
pub type CMat = DMatrix<Complex64>;
pub type Vector = DVector<f64>;
pub type CVector = DVector<Complex64>;
pub type C64 = Complex64;

pub fn symmetrize(a: &Mat) -> Mat {
    (a + a.transpose()) * 0.5
}

/// Frobenius norm of the antisymmetric part.
pub fn asymmetry(a: &Mat) -> f64 {
    (a - a.transpose()).norm()
}

pub fn to_complex(a: &Mat) -> CMat {
    a.map(|x| C64::new(x, 0.0))
}

/// Flip each column so that its largest-magnitude entry is positive.
pub fn sign_normalize_columns(m: &mut Mat) {
    for mut col in m.column_iter_mut() {
        let mut best = 0.0f64;
        let mut sign = 1.0;
        for &x in col.iter() {
            if x.abs() > best + 1e-14 {
                best = x.abs();
                sign = x.signum();
            }
        }
        if sign < 0.0 {
            col.scale_mut(-1.0);
        }
    }
}

/// Symmetric eigendecomposition with eigenvalues sorted in descending order.
pub fn sym_eigen_desc(a: &Mat) -> (Vec<f64>, Mat) {
    let n = a.nrows();
    if n == 0 {
        return (Vec::new(), Mat::zeros(0, 0));
    }
    let eig = symmetrize(a).symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vectors = Mat::zeros(n, n);
    for (k, &i) in order.iter().enumerate() {
        vectors.set_column(k, &eig.eigenvectors.column(i));
    }
    sign_normalize_columns(&mut vectors);
    (values, vectors)
}

pub fn min_eigenvalue(a: &Mat) -> f64 {
    sym_eigen_desc(a).0.last().copied().unwrap_or(f64::INFINITY)
}

pub fn max_eigenvalue(a: &Mat) -> f64 {
    sym_eigen_desc(a).0.first().copied().unwrap_or(f64::NEG_INFINITY)
}

/// Square root and inverse square root of an SPD matrix.
pub fn spd_sqrt(a: &Mat, name: &str) -> Result<(Mat, Mat)> {
    let (values, vectors) = sym_eigen_desc(a);
    if values.iter().any(|&v| !(v > 0.0)) {
        return Err(Error::NotSpd(name.to_string()));
    }
    let sqrt = &vectors * Mat::from_diagonal(&Vector::from_iterator(values.len(), values.iter().map(|v| v.sqrt()))) * vectors.transpose();
    let inv_sqrt =
        &vectors * Mat::from_diagonal(&Vector::from_iterator(values.len(), values.iter().map(|v| 1.0 / v.sqrt()))) * vectors.transpose();
    Ok((symmetrize(&sqrt), symmetrize(&inv_sqrt)))
}

pub fn singular_values(m: &Mat) -> Vec<f64> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return Vec::new();
    }
    let mut s: Vec<f64> = m.clone().svd(false, false).singular_values.iter().copied().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

pub fn singular_values_c(m: &CMat) -> Vec<f64> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return Vec::new();
    }
    let mut s: Vec<f64> = m.clone().svd(false, false).singular_values.iter().copied().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

pub fn spectral_norm(m: &Mat) -> f64 {
    singular_values(m).first().copied().unwrap_or(0.0)
}

pub fn spectral_norm_c(m: &CMat) -> f64 {
    singular_values_c(m).first().copied().unwrap_or(0.0)
}

/// 2-norm condition number; `1` for empty matrices, `inf` when singular.
pub fn condition_number(m: &Mat) -> f64 {
    let s = singular_values(m);
    match (s.first(), s.last()) {
        (Some(&hi), Some(&lo)) if lo > 0.0 => hi / lo,
        (Some(_), Some(_)) => f64::INFINITY,
        _ => 1.0,
    }
}

pub fn condition_number_c(m: &CMat) -> f64 {
    let s = singular_values_c(m);
    match (s.first(), s.last()) {
        (Some(&hi), Some(&lo)) if lo > 0.0 => hi / lo,
        (Some(_), Some(_)) => f64::INFINITY,
        _ => 1.0,
    }
}

/// Orthonormal basis for the column space of a full-column-rank matrix.
pub fn orthonormal_columns(m: &Mat) -> Mat {
    if m.ncols() == 0 {
        return Mat::zeros(m.nrows(), 0);
    }
    let mut q = m.clone().qr().q();
    q = q.columns(0, m.ncols()).into_owned();
    sign_normalize_columns(&mut q);
    q
}

/// Rows spanning the left null space of `x` (vectors `y` with `yᵀx = 0`).
///
/// Singular values below `rel_tol·σ_max` count as zero. The rows are
/// orthonormal.
pub fn left_null_space(x: &Mat, rel_tol: f64) -> Mat {
    let n = x.nrows();
    if n == 0 {
        return Mat::zeros(0, 0);
    }
    if x.ncols() == 0 {
        return Mat::identity(n, n);
    }
    let padded = if x.ncols() < n {
        let mut p = Mat::zeros(n, n);
        p.columns_mut(0, x.ncols()).copy_from(x);
        p
    } else {
        x.clone()
    };
    let svd = padded.svd(true, false);
    let u = svd.u.expect("u requested");
    let sigma_max = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let cutoff = rel_tol * sigma_max.max(f64::MIN_POSITIVE);
    let mut cols: Vec<usize> = (0..svd.singular_values.len()).filter(|&i| svd.singular_values[i] <= cutoff).collect();
    // columns of u beyond the singular-value count are also null directions
    cols.extend(svd.singular_values.len()..u.ncols());
    let mut basis = Mat::zeros(n, cols.len());
    for (k, &i) in cols.iter().enumerate() {
        basis.set_column(k, &u.column(i));
    }
    let mut basis = if basis.ncols() > 0 { orthonormal_columns(&basis) } else { basis };
    sign_normalize_columns(&mut basis);
    basis.transpose()
}

/// Complex Schur factorization `m = q·t·qᴴ` reordered so that the
/// eigenvalues accepted by the selector lead the diagonal of `t`.
#[derive(Debug, Clone)]
pub struct OrderedSchur {
    pub q: CMat,
    pub t: CMat,
    pub selected: usize,
}

impl OrderedSchur {
    pub fn eigenvalues(&self) -> Vec<C64> {
        (0..self.t.nrows()).map(|i| self.t[(i, i)]).collect()
    }

    /// Leading `k` Schur vectors (an orthonormal invariant-subspace basis).
    pub fn leading(&self, k: usize) -> CMat {
        self.q.columns(0, k).into_owned()
    }
}

/// Swap the adjacent diagonal entries `k`, `k+1` of an upper-triangular `t`.
fn swap_adjacent(q: &mut CMat, t: &mut CMat, k: usize) {
    let a = t[(k, k)];
    let b = t[(k + 1, k + 1)];
    let c = t[(k, k + 1)];
    // eigenvector of [[a, c], [0, b]] belonging to b
    let x1 = c;
    let x2 = b - a;
    let norm = (x1.norm_sqr() + x2.norm_sqr()).sqrt();
    if norm == 0.0 {
        return;
    }
    let (g11, g21) = (x1 / norm, x2 / norm);
    let (g12, g22) = (-g21.conj(), g11.conj());
    let n = t.nrows();
    for j in 0..n {
        let r0 = t[(k, j)];
        let r1 = t[(k + 1, j)];
        t[(k, j)] = g11.conj() * r0 + g21.conj() * r1;
        t[(k + 1, j)] = g12.conj() * r0 + g22.conj() * r1;
    }
    for i in 0..n {
        let c0 = t[(i, k)];
        let c1 = t[(i, k + 1)];
        t[(i, k)] = c0 * g11 + c1 * g21;
        t[(i, k + 1)] = c0 * g12 + c1 * g22;
        let q0 = q[(i, k)];
        let q1 = q[(i, k + 1)];
        q[(i, k)] = q0 * g11 + q1 * g21;
        q[(i, k + 1)] = q0 * g12 + q1 * g22;
    }
    t[(k + 1, k)] = C64::new(0.0, 0.0);
}

pub fn ordered_schur(m: &CMat, select: impl Fn(C64) -> bool) -> OrderedSchur {
    let n = m.nrows();
    if n == 0 {
        return OrderedSchur { q: CMat::zeros(0, 0), t: CMat::zeros(0, 0), selected: 0 };
    }
    let (mut q, mut t) = m.clone().schur().unpack();
    for i in 1..n {
        for j in 0..i {
            t[(i, j)] = C64::new(0.0, 0.0);
        }
    }
    let mut placed = 0;
    for j in 0..n {
        if select(t[(j, j)]) {
            let mut k = j;
            while k > placed {
                swap_adjacent(&mut q, &mut t, k - 1);
                k -= 1;
            }
            placed += 1;
        }
    }
    OrderedSchur { q, t, selected: placed }
}

/// Orthonormal basis (thin QR) of the column space of a complex matrix.
pub fn orthonormal_columns_c(m: &CMat) -> CMat {
    if m.ncols() == 0 {
        return CMat::zeros(m.nrows(), 0);
    }
    let q = m.clone().qr().q();
    q.columns(0, m.ncols()).into_owned()
}

/// Sine of the largest principal angle between two column spaces.
pub fn subspace_distance(a: &CMat, b: &CMat) -> f64 {
    assert_eq!(a.nrows(), b.nrows(), "subspace_distance: ambient dimensions differ");
    if a.ncols() == 0 && b.ncols() == 0 {
        return 0.0;
    }
    let qa = orthonormal_columns_c(a);
    let qb = orthonormal_columns_c(b);
    let ra = &qb - &qa * (qa.adjoint() * &qb);
    let rb = &qa - &qb * (qb.adjoint() * &qa);
    spectral_norm_c(&ra).max(spectral_norm_c(&rb)).min(1.0)
}

/// Real orthonormal basis of a complex subspace that is closed under conjugation.
pub fn real_basis(q: &CMat) -> Mat {
    let k = q.ncols();
    let n = q.nrows();
    if k == 0 {
        return Mat::zeros(n, 0);
    }
    let mut stacked = Mat::zeros(n, 2 * k);
    for j in 0..k {
        for i in 0..n {
            stacked[(i, j)] = q[(i, j)].re;
            stacked[(i, k + j)] = q[(i, j)].im;
        }
    }
    let svd = stacked.svd(true, false);
    let u = svd.u.expect("u requested");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&i, &j| svd.singular_values[j].total_cmp(&svd.singular_values[i]));
    let mut basis = Mat::zeros(n, k);
    for (c, &i) in order.iter().take(k).enumerate() {
        basis.set_column(c, &u.column(i));
    }
    orthonormal_columns(&basis)
}

/// Solve a square real system via LU, reporting singularity by condition number.
pub fn solve(a: &Mat, b: &Mat, what: &str, max_condition: f64) -> Result<Mat> {
    if a.nrows() == 0 {
        return Ok(Mat::zeros(0, b.ncols()));
    }
    let cond = condition_number(a);
    if !(cond <= max_condition) {
        return Err(Error::Singular { what: what.to_string(), condition: cond });
    }
    a.clone().lu().solve(b).ok_or_else(|| Error::Singular { what: what.to_string(), condition: cond })
}

pub fn solve_c(a: &CMat, b: &CMat, what: &str, max_condition: f64) -> Result<CMat> {
    if a.nrows() == 0 {
        return Ok(CMat::zeros(0, b.ncols()));
    }
    let cond = condition_number_c(a);
    if !(cond <= max_condition) {
        return Err(Error::Singular { what: what.to_string(), condition: cond });
    }
    a.clone().lu().solve(b).ok_or_else(|| Error::Singular { what: what.to_string(), condition: cond })
}

pub fn inverse(a: &Mat, what: &str) -> Result<Mat> {
    solve(a, &Mat::identity(a.nrows(), a.nrows()), what, 1e14)
}

pub fn determinant_c(m: &CMat) -> C64 {
    if m.nrows() == 0 {
        return C64::new(1.0, 0.0);
    }
    m.clone().lu().determinant()
}

pub fn determinant(m: &Mat) -> f64 {
    if m.nrows() == 0 {
        return 1.0;
    }
    m.clone().lu().determinant()
}

/// Matrix from row-major nested slices.
pub fn from_rows(rows: &[&[f64]]) -> Mat {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, |r| r.len());
    Mat::from_fn(nrows, ncols, |i, j| rows[i][j])
}

pub fn to_rows(m: &Mat) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    #[test]
    fn ordered_schur_puts_stable_first() {
        let m = CMat::from_row_slice(
            3,
            3,
            &[c(2.0, 0.0), c(1.0, 0.5), c(0.0, 0.0), c(0.3, 0.0), c(-1.0, 0.0), c(2.0, 0.0), c(0.0, 1.0), c(0.0, 0.0), c(-3.0, 0.1)],
        );
        let s = ordered_schur(&m, |z| z.re < 0.0);
        assert_eq!(s.selected, 2);
        let eig = s.eigenvalues();
        assert!(eig[0].re < 0.0 && eig[1].re < 0.0 && eig[2].re > 0.0);
        let resid = &m * &s.q - &s.q * &s.t;
        assert!(resid.norm() < 1e-12 * m.norm());
        let unit = s.q.adjoint() * &s.q - CMat::identity(3, 3);
        assert!(unit.norm() < 1e-13);
        for i in 1..3 {
            for j in 0..i {
                assert_eq!(s.t[(i, j)], c(0.0, 0.0));
            }
        }
    }

    #[test]
    fn left_null_space_of_column() {
        let x = from_rows(&[&[-1.0], &[1.0]]);
        let n = left_null_space(&x, 1e-12);
        assert_eq!(n.shape(), (1, 2));
        assert_relative_eq!(n[(0, 0)], std::f64::consts::FRAC_1_SQRT_2, epsilon = 1e-14);
        assert_relative_eq!(n[(0, 1)], std::f64::consts::FRAC_1_SQRT_2, epsilon = 1e-14);
        assert!((n * x).norm() < 1e-14);
    }

    #[test]
    fn subspace_distance_detects_angle() {
        let a = CMat::from_row_slice(2, 1, &[c(1.0, 0.0), c(0.0, 0.0)]);
        let theta: f64 = 0.1;
        let b = CMat::from_row_slice(2, 1, &[c(theta.cos(), 0.0), c(theta.sin(), 0.0)]);
        assert_relative_eq!(subspace_distance(&a, &b), theta.sin(), epsilon = 1e-14);
        let bc = b.map(|z| z * c(0.0, 1.0));
        assert_relative_eq!(subspace_distance(&b, &bc), 0.0, epsilon = 1e-14);
    }

    #[test]
    fn spd_sqrt_rejects_indefinite() {
        let a = from_rows(&[&[1.0, 0.0], &[0.0, -1.0]]);
        assert!(matches!(spd_sqrt(&a, "a"), Err(Error::NotSpd(_))));
        let b = from_rows(&[&[4.0, 1.0], &[1.0, 3.0]]);
        let (s, si) = spd_sqrt(&b, "b").unwrap();
        assert!((&s * &s - &b).norm() < 1e-13);
        assert!((&s * &si - Mat::identity(2, 2)).norm() < 1e-13);
    }
}
