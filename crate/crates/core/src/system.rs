//! Linear relaxation systems in normal form and their standing assumptions.
//!
//! A system is `A0·U_t + A1·U_x = Q·U/ε` on the half line with
//! `A0 = diag(A01, A02)`, `A1 = [[A11, A12], [A12ᵀ, A22]]` and
//! `Q = diag(0, S)`. The boundary `x = 0` is characteristic for the
//! relaxation system (A1 singular) and non-characteristic for the
//! equilibrium system (A11 invertible).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, Mat, Vector};

/// Default relative threshold for zero-eigenvalue classification.
pub const DEFAULT_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct RelaxationSystem {
    n: usize,
    r: usize,
    pub a01: Mat,
    pub a02: Mat,
    pub a11: Mat,
    pub a12: Mat,
    pub a22: Mat,
    pub s: Mat,
}

impl RelaxationSystem {
    /// Builds a system after checking every block against `(n, r)`.
    ///
    /// `r` must satisfy `0 < r < n`: the equilibrium block has to be non-empty.
    #[allow(clippy::too_many_arguments)]
    pub fn new(n: usize, r: usize, a01: Mat, a02: Mat, a11: Mat, a12: Mat, a22: Mat, s: Mat) -> Result<Self> {
        if r == 0 || r >= n {
            return Err(Error::Dimension(format!("need 0 < r < n, got n = {n}, r = {r}")));
        }
        let m = n - r;
        let expect = |name: &str, a: &Mat, rows: usize, cols: usize| -> Result<()> {
            if a.shape() != (rows, cols) {
                Err(Error::Dimension(format!("{name} is {}x{}, expected {rows}x{cols}", a.nrows(), a.ncols())))
            } else {
                Ok(())
            }
        };
        expect("A01", &a01, m, m)?;
        expect("A02", &a02, r, r)?;
        expect("A11", &a11, m, m)?;
        expect("A12", &a12, m, r)?;
        expect("A22", &a22, r, r)?;
        expect("S", &s, r, r)?;
        Ok(Self { n, r, a01, a02, a11, a12, a22, s })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn r(&self) -> usize {
        self.r
    }

    /// Size of the equilibrium unknown `u`.
    pub fn m(&self) -> usize {
        self.n - self.r
    }

    pub fn a0(&self) -> Mat {
        let mut a0 = Mat::zeros(self.n, self.n);
        a0.view_mut((0, 0), (self.m(), self.m())).copy_from(&self.a01);
        a0.view_mut((self.m(), self.m()), (self.r, self.r)).copy_from(&self.a02);
        a0
    }

    pub fn a1(&self) -> Mat {
        let m = self.m();
        let mut a1 = Mat::zeros(self.n, self.n);
        a1.view_mut((0, 0), (m, m)).copy_from(&self.a11);
        a1.view_mut((0, m), (m, self.r)).copy_from(&self.a12);
        a1.view_mut((m, 0), (self.r, m)).copy_from(&self.a12.transpose());
        a1.view_mut((m, m), (self.r, self.r)).copy_from(&self.a22);
        a1
    }

    /// `Q = diag(0, S)`.
    pub fn q(&self) -> Mat {
        let mut q = Mat::zeros(self.n, self.n);
        q.view_mut((self.m(), self.m()), (self.r, self.r)).copy_from(&self.s);
        q
    }

    /// `A11⁻¹·A12`.
    pub fn a11_inv_a12(&self) -> Result<Mat> {
        linalg::solve(&self.a11, &self.a12, "A11", 1e14)
    }

    /// Schur complement `A22 − A12ᵀ·A11⁻¹·A12` of the flux matrix.
    pub fn schur_complement(&self) -> Result<Mat> {
        Ok(linalg::symmetrize(&(&self.a22 - self.a12.transpose() * self.a11_inv_a12()?)))
    }
}

/// Analytic boundary signal `b(t)`, one entry per boundary row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum BoundarySignal {
    /// `b_i(t) = c_i`.
    Constant { coeffs: Vec<f64> },
    /// `b_i(t) = Σ_k c_ik·t^k`.
    Polynomial { coeffs: Vec<Vec<f64>> },
    /// `b_i(t) = offset + amplitude·sin(ω·t + phase)`, coefficients
    /// given as `[offset, amplitude, ω, phase]`.
    Sinusoid { coeffs: Vec<[f64; 4]> },
}

impl BoundarySignal {
    pub fn zero(len: usize) -> Self {
        BoundarySignal::Constant { coeffs: vec![0.0; len] }
    }

    pub fn len(&self) -> usize {
        match self {
            BoundarySignal::Constant { coeffs } => coeffs.len(),
            BoundarySignal::Polynomial { coeffs } => coeffs.len(),
            BoundarySignal::Sinusoid { coeffs } => coeffs.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn eval(&self, t: f64) -> Vector {
        match self {
            BoundarySignal::Constant { coeffs } => Vector::from_column_slice(coeffs),
            BoundarySignal::Polynomial { coeffs } => {
                Vector::from_iterator(coeffs.len(), coeffs.iter().map(|c| c.iter().rev().fold(0.0, |acc, &ck| acc * t + ck)))
            }
            BoundarySignal::Sinusoid { coeffs } => Vector::from_iterator(
                coeffs.len(),
                coeffs.iter().map(|&[offset, amp, omega, phase]| offset + amp * (omega * t + phase).sin()),
            ),
        }
    }
}

/// Boundary matrix `B = (Bu, Bv)` and signal of `B·U(0,t) = b(t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryData {
    pub b: Mat,
    pub signal: BoundarySignal,
    m: usize,
}

impl BoundaryData {
    pub fn new(sys: &RelaxationSystem, b: Mat, signal: BoundarySignal) -> Result<Self> {
        if b.ncols() != sys.n() {
            return Err(Error::Dimension(format!("B has {} columns, expected n = {}", b.ncols(), sys.n())));
        }
        if signal.len() != b.nrows() {
            return Err(Error::Dimension(format!("b(t) has {} components, B has {} rows", signal.len(), b.nrows())));
        }
        Ok(Self { b, signal, m: sys.m() })
    }

    pub fn rows(&self) -> usize {
        self.b.nrows()
    }

    pub fn bu(&self) -> Mat {
        self.b.columns(0, self.m).into_owned()
    }

    pub fn bv(&self) -> Mat {
        self.b.columns(self.m, self.b.ncols() - self.m).into_owned()
    }

    pub fn eval(&self, t: f64) -> Vector {
        self.signal.eval(t)
    }

    pub fn with_signal(&self, signal: BoundarySignal) -> Result<Self> {
        if signal.len() != self.rows() {
            return Err(Error::Dimension(format!("b(t) has {} components, B has {} rows", signal.len(), self.rows())));
        }
        Ok(Self { b: self.b.clone(), signal, m: self.m })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Bound {
    /// Passes when `value > threshold`.
    Lower,
    /// Passes when `value ≤ threshold`.
    Upper,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    pub value: f64,
    pub threshold: f64,
    pub bound: Bound,
}

impl Check {
    fn lower(name: &str, value: f64, threshold: f64) -> Self {
        Self { name: name.into(), pass: value > threshold, value, threshold, bound: Bound::Lower }
    }

    fn upper(name: &str, value: f64, threshold: f64) -> Self {
        Self { name: name.into(), pass: value <= threshold, value, threshold, bound: Bound::Upper }
    }

    /// Signed distance to the failure boundary; positive when passing.
    pub fn margin(&self) -> f64 {
        match self.bound {
            Bound::Lower => self.value - self.threshold,
            Bound::Upper => self.threshold - self.value,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StabilityCertificate {
    pub checks: Vec<Check>,
    pub overall: bool,
}

impl StabilityCertificate {
    fn from_checks(checks: Vec<Check>) -> Self {
        let overall = checks.iter().all(|c| c.pass);
        Self { checks, overall }
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn failing(&self) -> Vec<&str> {
        self.checks.iter().filter(|c| !c.pass).map(|c| c.name.as_str()).collect()
    }
}

/// Structural-stability and type-I characteristic checks on the blocks.
pub fn validate_system(sys: &RelaxationSystem, tol: f64) -> StabilityCertificate {
    let rel = |a: &Mat| tol * (1.0 + a.norm());
    let a02s = &sys.a02 * &sys.s;
    let s_sym = linalg::asymmetry(&sys.s) <= rel(&sys.s);
    let s_neg = -linalg::max_eigenvalue(&sys.s);

    let a1_eigs = linalg::sym_eigen_desc(&sys.a1()).0;
    let radius = a1_eigs.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    let smallest = a1_eigs.iter().fold(f64::INFINITY, |acc, v| acc.min(v.abs()));

    let mut symneg = Check::lower("symNegDef(S)", s_neg, tol);
    symneg.pass &= s_sym;

    let checks = vec![
        Check::lower("SPD(A01)", linalg::min_eigenvalue(&sys.a01), tol),
        Check::lower("SPD(A02)", linalg::min_eigenvalue(&sys.a02), tol),
        Check::upper("sym(A11)", linalg::asymmetry(&sys.a11), rel(&sys.a11)),
        Check::upper("sym(A22)", linalg::asymmetry(&sys.a22), rel(&sys.a22)),
        symneg,
        Check::upper("sym(A02*S)", linalg::asymmetry(&a02s), rel(&a02s)),
        Check::lower("invertible(A11)", linalg::singular_values(&sys.a11).last().copied().unwrap_or(0.0), tol),
        Check::upper("singular(A1)", smallest, tol * radius.max(f64::MIN_POSITIVE)),
        Check::lower("negDef(A02*S+S*A02)", -linalg::max_eigenvalue(&(&a02s + a02s.transpose())), tol),
    ];
    StabilityCertificate::from_checks(checks)
}

/// Eigen-structure of the flux matrix and its characteristic split.
#[derive(Debug, Clone, PartialEq)]
pub struct CharacteristicStructure {
    pub n_plus: usize,
    pub n_zero: usize,
    pub n_minus: usize,
    pub n1_plus: usize,
    /// Eigenvectors of `A0⁻¹A1` for positive eigenvalues (unit columns).
    pub r_a_u: Mat,
    /// Null vectors of `A0⁻¹A1` (unit columns).
    pub r_a_zero: Mat,
    /// Orthonormal rows `(L+; L−; L0)` diagonalizing `A0^{-1/2}A1A0^{-1/2}`.
    pub l: Mat,
    pub lambda_plus: Vec<f64>,
    pub lambda_minus: Vec<f64>,
    /// Eigenvalues of `A1`, descending.
    pub a1_eigenvalues: Vec<f64>,
}

impl CharacteristicStructure {
    pub fn l_plus(&self) -> Mat {
        self.l.rows(0, self.n_plus).into_owned()
    }

    pub fn l_minus(&self) -> Mat {
        self.l.rows(self.n_plus, self.n_minus).into_owned()
    }

    pub fn l_zero(&self) -> Mat {
        self.l.rows(self.n_plus + self.n_minus, self.n_zero).into_owned()
    }

    /// `diag(Λ+, Λ−, 0)`.
    pub fn lambda_all(&self) -> Vec<f64> {
        let mut all = self.lambda_plus.clone();
        all.extend(&self.lambda_minus);
        all.extend(std::iter::repeat_n(0.0, self.n_zero));
        all
    }
}

/// Counts `(n⁺, n°, n₁⁺)`, eigenvector bases and the orthonormal split `L`.
///
/// An eigenvalue `λ` of A1 is zero iff `|λ| ≤ tol·ρ(A1)`; values inside
/// `(tol·ρ, 10·tol·ρ)` are refused.
pub fn classify(sys: &RelaxationSystem, tol: f64) -> Result<CharacteristicStructure> {
    let a1 = sys.a1();
    let (eigs, _) = linalg::sym_eigen_desc(&a1);
    let radius = eigs.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    let zero_cut = tol * radius;
    let mut n_plus = 0;
    let mut n_zero = 0;
    for &lam in &eigs {
        if lam.abs() > zero_cut && lam.abs() < 10.0 * zero_cut {
            return Err(Error::AmbiguousMultiplicity { eigenvalue: lam, lower: zero_cut, upper: 10.0 * zero_cut });
        }
        if lam.abs() <= zero_cut {
            n_zero += 1;
        } else if lam > 0.0 {
            n_plus += 1;
        }
    }
    let n_minus = sys.n() - n_plus - n_zero;
    let n1_plus = linalg::sym_eigen_desc(&sys.a11).0.iter().filter(|&&v| v > 0.0).count();

    let (_, a0_inv_sqrt) = linalg::spd_sqrt(&sys.a0(), "A0")?;
    let k = &a0_inv_sqrt * &a1 * &a0_inv_sqrt;
    let (k_eigs, k_vecs) = linalg::sym_eigen_desc(&k);
    // descending order: positives, zeros, negatives
    let plus = 0..n_plus;
    let zero = n_plus..n_plus + n_zero;
    let minus = n_plus + n_zero..sys.n();

    let unit_columns = |cols: std::ops::Range<usize>| -> Mat {
        let mut m = &a0_inv_sqrt * k_vecs.columns(cols.start, cols.len());
        for mut c in m.column_iter_mut() {
            let norm = c.norm();
            c /= norm;
        }
        linalg::sign_normalize_columns(&mut m);
        m
    };
    let r_a_u = unit_columns(plus.clone());
    let r_a_zero = unit_columns(zero.clone());

    let mut l = Mat::zeros(sys.n(), sys.n());
    for (row, idx) in plus.clone().chain(minus.clone()).chain(zero).enumerate() {
        l.set_row(row, &k_vecs.column(idx).transpose());
    }

    Ok(CharacteristicStructure {
        n_plus,
        n_zero,
        n_minus,
        n1_plus,
        r_a_u,
        r_a_zero,
        l,
        lambda_plus: plus.map(|i| k_eigs[i]).collect(),
        lambda_minus: minus.map(|i| k_eigs[i]).collect(),
        a1_eigenvalues: eigs,
    })
}

/// Row rank, zero-mode exclusion `B·R_A⁰ = 0` and the Kreiss determinant.
pub fn check_boundary(sys: &RelaxationSystem, cs: &CharacteristicStructure, bd: &BoundaryData, tol: f64) -> Result<StabilityCertificate> {
    if bd.rows() != cs.n_plus {
        return Err(Error::Dimension(format!("B has {} rows, expected n+ = {}", bd.rows(), cs.n_plus)));
    }
    if bd.b.ncols() != sys.n() {
        return Err(Error::Dimension(format!("B has {} columns, expected {}", bd.b.ncols(), sys.n())));
    }
    let sv = linalg::singular_values(&bd.b);
    let rank_ratio = match (sv.first(), sv.last()) {
        (Some(&hi), Some(&lo)) if hi > 0.0 => lo / hi,
        (Some(_), Some(_)) => 0.0,
        _ => 1.0,
    };
    let zero_mode = (&bd.b * &cs.r_a_zero).norm();
    let kreiss = linalg::determinant(&(&bd.b * &cs.r_a_u)).abs();
    Ok(StabilityCertificate::from_checks(vec![
        Check::lower("rank(B)", rank_ratio, tol),
        Check::upper("zeroModes(B*RA0)", zero_mode, tol * bd.b.norm().max(1.0)),
        Check::lower("kreissDet(B*RAU)", kreiss, tol),
    ]))
}
