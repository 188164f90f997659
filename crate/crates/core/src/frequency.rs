//! Frequency-domain analysis of the characteristic boundary.
//!
//! After a Laplace transform in `t` and the scaling `x → x/(ηε)`, bounded
//! solutions of the half-line problem reduce to `V' = M(ξ,η)·V` on the
//! non-degenerate components `V = (û, ŵ₂)`, with the degenerate components
//! slaved as `ŵ₀ = E(ξ,η)·V`. The modified Kreiss condition is a uniform
//! lower bound on `|det(B·[[I,0],[N6,N5]]·R_M^S)|` over `Re ξ > 0, η ≥ 0`.

use std::f64::consts::FRAC_PI_2;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{self, CMat, Mat, C64};
use crate::system::{BoundaryData, CharacteristicStructure, RelaxationSystem};

/// Congruence `P̃ = (P2, P0)` diagonalizing the Schur complement of `A11` in `A1`.
#[derive(Debug, Clone, PartialEq)]
pub struct CongruenceData {
    pub p2: Mat,
    pub p0: Mat,
    /// Nonzero eigenvalues of the Schur complement, descending.
    pub lambda2: Vec<f64>,
}

impl CongruenceData {
    pub fn lambda2_mat(&self) -> Mat {
        Mat::from_diagonal(&linalg::Vector::from_column_slice(&self.lambda2))
    }

    pub fn lambda2_inv(&self) -> Mat {
        Mat::from_diagonal(&linalg::Vector::from_iterator(self.lambda2.len(), self.lambda2.iter().map(|l| 1.0 / l)))
    }

    pub fn n_zero(&self) -> usize {
        self.p0.ncols()
    }

    pub fn n_two(&self) -> usize {
        self.p2.ncols()
    }
}

/// Eigendecomposition of `A22 − A12ᵀA11⁻¹A12` split into zero and nonzero parts.
///
/// The zero count must agree with `cs.n_zero` (congruence preserves inertia).
pub fn congruence(sys: &RelaxationSystem, cs: &CharacteristicStructure, tol: f64) -> Result<CongruenceData> {
    let z = sys.schur_complement()?;
    let (eigs, vecs) = linalg::sym_eigen_desc(&z);
    // scale by A1 as well: Z can be entirely zero
    let radius = eigs.iter().chain(&cs.a1_eigenvalues).fold(0.0f64, |acc, v| acc.max(v.abs()));
    let cut = tol * radius;
    let mut nonzero = Vec::new();
    let mut zero = Vec::new();
    for (i, &lam) in eigs.iter().enumerate() {
        if lam.abs() > cut && lam.abs() < 10.0 * cut {
            return Err(Error::AmbiguousMultiplicity { eigenvalue: lam, lower: cut, upper: 10.0 * cut });
        }
        if lam.abs() <= cut {
            zero.push(i);
        } else {
            nonzero.push(i);
        }
    }
    if zero.len() != cs.n_zero {
        return Err(Error::Internal(format!("Schur complement has {} zero eigenvalues but A1 has {}", zero.len(), cs.n_zero)));
    }
    let pick = |idx: &[usize]| {
        let mut m = Mat::zeros(sys.r(), idx.len());
        for (k, &i) in idx.iter().enumerate() {
            m.set_column(k, &vecs.column(i));
        }
        m
    };
    Ok(CongruenceData { p2: pick(&nonzero), p0: pick(&zero), lambda2: nonzero.iter().map(|&i| eigs[i]).collect() })
}

/// A point `(ξ, η)` with `Re ξ > 0`, `η ≥ 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrequencyPoint {
    pub xi: C64,
    pub eta: f64,
}

impl FrequencyPoint {
    pub fn new(xi: C64, eta: f64) -> Result<Self> {
        if !(xi.re > 0.0) || !(eta >= 0.0) || !xi.im.is_finite() || !eta.is_finite() {
            return Err(Error::InvalidInput(format!("frequency point needs Re xi > 0 and eta >= 0, got xi = {xi}, eta = {eta}")));
        }
        Ok(Self { xi, eta })
    }

    /// Point on the normalized quarter sphere: `ξ′ = √(1−η′²)·e^{iθ}`.
    pub fn on_sphere(eta_prime: f64, theta: f64) -> Result<Self> {
        let rho = (1.0 - eta_prime * eta_prime).max(0.0).sqrt();
        Self::new(C64::from_polar(rho, theta), eta_prime)
    }

    pub fn s(&self) -> f64 {
        (self.eta * self.eta + self.xi.norm_sqr()).sqrt()
    }

    pub fn xi_prime(&self) -> C64 {
        self.xi / self.s()
    }

    pub fn eta_prime(&self) -> f64 {
        self.eta / self.s()
    }

    pub fn normalized(&self) -> Self {
        Self { xi: self.xi_prime(), eta: self.eta_prime() }
    }

    pub fn scaled(&self, k: f64) -> Self {
        Self { xi: self.xi * k, eta: self.eta * k }
    }
}

/// Solves `(A + i·B)·X = Y` for SPD `A` and symmetric `B`.
///
/// Uses `A + iB = A^{1/2}(I + iC)A^{1/2}` with `C = A^{-1/2}BA^{-1/2} = OΛOᵀ`,
/// so the only inversion is of the diagonal `I + iΛ`.
pub fn spd_isym_solve(a: &Mat, b: &Mat, y: &CMat) -> Result<CMat> {
    let n = a.nrows();
    if a.ncols() != n || b.shape() != (n, n) || y.nrows() != n {
        return Err(Error::Dimension("spd_isym_solve operands".into()));
    }
    if n == 0 {
        return Ok(CMat::zeros(0, y.ncols()));
    }
    let (eig_a, _) = linalg::sym_eigen_desc(a);
    let hi = eig_a[0];
    let lo = eig_a[n - 1];
    if !(lo > 0.0) {
        return Err(Error::NotSpd("A".into()));
    }
    if hi / lo > 1e14 {
        return Err(Error::Singular { what: "A".into(), condition: hi / lo });
    }
    let (_, a_inv_sqrt) = linalg::spd_sqrt(a, "A")?;
    let c = &a_inv_sqrt * linalg::symmetrize(b) * &a_inv_sqrt;
    let (lam, o) = linalg::sym_eigen_desc(&c);
    let left = linalg::to_complex(&(&a_inv_sqrt * &o));
    let mut mid = left.adjoint() * y;
    for (i, l) in lam.iter().enumerate() {
        let d = C64::new(1.0, *l).inv();
        mid.row_mut(i).iter_mut().for_each(|z| *z *= d);
    }
    Ok(left * mid)
}

/// Frequency-dependent matrices at one point `(ξ, η)`.
#[derive(Debug, Clone)]
pub struct FrequencySlice {
    pub point: FrequencyPoint,
    pub s00: CMat,
    pub s02: CMat,
    pub s20: CMat,
    pub s22: CMat,
    pub n1: CMat,
    pub n2: CMat,
    pub n3: CMat,
    pub n4: CMat,
    pub m: CMat,
    pub e1: CMat,
    pub e2: CMat,
    pub n5: CMat,
    pub n6: CMat,
    /// `‖left·M − right‖ / (‖left‖·‖M‖ + ‖right‖)` for the defining block identity.
    pub defining_residual: f64,
}

impl FrequencySlice {
    /// `E = (E1, E2)`.
    pub fn e(&self) -> CMat {
        hstack(&self.e1, &self.e2)
    }

    /// `[[I, 0], [N6, N5]]`, mapping `(û, ŵ₂)` to `Û`.
    pub fn trace_matrix(&self) -> CMat {
        let m = self.n6.ncols();
        let r = self.n5.nrows();
        let k = self.n5.ncols();
        let mut t = CMat::zeros(m + r, m + k);
        t.view_mut((0, 0), (m, m)).copy_from(&CMat::identity(m, m));
        t.view_mut((m, 0), (r, m)).copy_from(&self.n6);
        t.view_mut((m, m), (r, k)).copy_from(&self.n5);
        t
    }
}

fn hstack(a: &CMat, b: &CMat) -> CMat {
    let mut out = CMat::zeros(a.nrows(), a.ncols() + b.ncols());
    out.columns_mut(0, a.ncols()).copy_from(a);
    out.columns_mut(a.ncols(), b.ncols()).copy_from(b);
    out
}

fn vstack(a: &CMat, b: &CMat) -> CMat {
    let mut out = CMat::zeros(a.nrows() + b.nrows(), a.ncols());
    out.rows_mut(0, a.nrows()).copy_from(a);
    out.rows_mut(a.nrows(), b.nrows()).copy_from(b);
    out
}

/// Frequency-independent pieces, precomputed once per system.
#[derive(Debug, Clone)]
pub struct SliceBuilder {
    m: usize,
    k12: CMat,
    w: CMat,
    a11_inv_a01: CMat,
    p2: CMat,
    p0: CMat,
    lambda2_inv: CMat,
    a02: CMat,
    s: CMat,
    p0_a02_p0: Mat,
    p0_negs_p0: Mat,
    a01_sqrt: Mat,
    a01_inv_sqrt: Mat,
    g: Mat,
}

impl SliceBuilder {
    pub fn new(sys: &RelaxationSystem, cong: &CongruenceData) -> Result<Self> {
        let k12 = sys.a11_inv_a12()?;
        let a11_inv_a01 = linalg::solve(&sys.a11, &sys.a01, "A11", 1e14)?;
        let w = k12.transpose() * &sys.a01;
        let (a01_sqrt, a01_inv_sqrt) = linalg::spd_sqrt(&sys.a01, "A01")?;
        let g = &a01_sqrt * &k12 * &cong.p0;
        let c = linalg::to_complex;
        Ok(Self {
            m: sys.m(),
            k12: c(&k12),
            w: c(&w),
            a11_inv_a01: c(&a11_inv_a01),
            p2: c(&cong.p2),
            p0: c(&cong.p0),
            lambda2_inv: c(&cong.lambda2_inv()),
            a02: c(&sys.a02),
            s: c(&sys.s),
            p0_a02_p0: linalg::symmetrize(&(cong.p0.transpose() * &sys.a02 * &cong.p0)),
            p0_negs_p0: linalg::symmetrize(&(-(cong.p0.transpose() * &sys.s * &cong.p0))),
            a01_sqrt,
            a01_inv_sqrt,
            g,
        })
    }

    pub fn assemble(&self, fp: FrequencyPoint) -> Result<FrequencySlice> {
        let xi = fp.xi;
        let eta = fp.eta;
        let n0 = self.p0.ncols();
        let k = self.p2.ncols();
        let m = self.m;

        let smat = &self.s * C64::new(eta, 0.0) - &self.a02 * xi;
        let s00 = self.p0.transpose() * &smat * &self.p0;
        let s02 = self.p0.transpose() * &smat * &self.p2;
        let s20 = self.p2.transpose() * &smat * &self.p0;
        let s22 = self.p2.transpose() * &smat * &self.p2;

        // −S00 = (Re ξ·P0ᵀA02P0 + η·(−P0ᵀSP0)) + i·Im ξ·P0ᵀA02P0
        let re_part = &self.p0_a02_p0 * xi.re + &self.p0_negs_p0 * eta;
        let im_part = &self.p0_a02_p0 * xi.im;
        let s00_inv = -spd_isym_solve(&re_part, &im_part, &CMat::identity(n0, n0)).map_err(|e| match e {
            Error::Singular { condition, .. } => Error::Singular { what: "S00".into(), condition },
            other => other,
        })?;

        let p0t_w = self.p0.transpose() * &self.w;
        let n1 = &self.k12 * &self.p0 * &s00_inv * &p0t_w * (-xi);
        let n2 = &self.k12 * (&self.p2 - &self.p0 * &s00_inv * &s02);
        let n3 = &self.lambda2_inv * (self.p2.transpose() - &s20 * &s00_inv * self.p0.transpose()) * &self.w * xi;
        let n4 = &self.lambda2_inv * (&s22 - &s20 * &s00_inv * &s02);
        let e1 = &s00_inv * &p0t_w * (-xi);
        let e2 = -(&s00_inv * &s02);
        let n5 = &self.p2 + &self.p0 * &e2;
        let n6 = &self.p0 * &e1;

        let bottom = hstack(&n3, &n4);
        let right_top = hstack(&(&self.a11_inv_a01 * (-xi)), &CMat::zeros(m, k));
        let rhs_top = &right_top - &n2 * &bottom;

        // A01^{1/2}(I+N1)A01^{-1/2} = I + G·Z·Gᵀ with Z = −ξ·S00⁻¹ (SPD real part)
        let z = &s00_inv * (-xi);
        let z_re = linalg::symmetrize(&z.map(|c| c.re));
        let z_im = linalg::symmetrize(&z.map(|c| c.im));
        let core_re = Mat::identity(m, m) + &self.g * z_re * self.g.transpose();
        let core_im = &self.g * z_im * self.g.transpose();
        let top =
            linalg::to_complex(&self.a01_inv_sqrt) * spd_isym_solve(&core_re, &core_im, &(linalg::to_complex(&self.a01_sqrt) * &rhs_top))?;
        let mmat = vstack(&top, &bottom);

        let left = vstack(&hstack(&(CMat::identity(m, m) + &n1), &n2), &hstack(&CMat::zeros(k, m), &CMat::identity(k, k)));
        let right = vstack(&right_top, &bottom);
        let scale = left.norm() * mmat.norm() + right.norm();
        let defining_residual = if scale > 0.0 { (&left * &mmat - &right).norm() / scale } else { 0.0 };

        Ok(FrequencySlice { point: fp, s00, s02, s20, s22, n1, n2, n3, n4, m: mmat, e1, e2, n5, n6, defining_residual })
    }
}

pub fn assemble_slice(sys: &RelaxationSystem, cong: &CongruenceData, fp: FrequencyPoint) -> Result<FrequencySlice> {
    SliceBuilder::new(sys, cong)?.assemble(fp)
}

/// Default relative distance from the imaginary axis below which an
/// eigenvalue cannot be classified as stable or unstable.
pub const SPECTRUM_TOL: f64 = 1e-10;

#[derive(Debug, Clone)]
pub struct StableSubspace {
    /// Orthonormal basis of the stable invariant subspace.
    pub rms: CMat,
    /// Upper-triangular restriction of `M` to `span(rms)`.
    pub ms: CMat,
    pub stable_count: usize,
    pub unstable_count: usize,
    pub eigenvalues: Vec<C64>,
    /// `min |Re λ(M)|`.
    pub imag_axis_margin: f64,
}

/// Ordered complex Schur form of `m` with the stable eigenvalues leading.
///
/// Fails when some eigenvalue has `|Re λ| ≤ threshold·max(1, ρ(M))`.
pub fn stable_subspace(m: &CMat, threshold: f64) -> Result<StableSubspace> {
    let schur = linalg::ordered_schur(m, |z| z.re < 0.0);
    let eigenvalues = schur.eigenvalues();
    let radius = eigenvalues.iter().fold(1.0f64, |acc, z| acc.max(z.norm()));
    let mut margin = f64::INFINITY;
    for z in &eigenvalues {
        if z.re.abs() <= threshold * radius {
            return Err(Error::BoundarySpectrum { re: z.re, im: z.im, threshold: threshold * radius });
        }
        margin = margin.min(z.re.abs());
    }
    let k = schur.selected;
    Ok(StableSubspace {
        rms: schur.leading(k),
        ms: schur.t.view((0, 0), (k, k)).into_owned(),
        stable_count: k,
        unstable_count: m.nrows() - k,
        eigenvalues,
        imag_axis_margin: if m.nrows() == 0 { 0.0 } else { margin },
    })
}

/// Everything needed to evaluate the Kreiss ratio at many points.
#[derive(Debug, Clone)]
pub struct GkcEvaluator {
    builder: SliceBuilder,
    b: CMat,
    n_plus: usize,
}

/// Ratio and imaginary-axis margin at one point.
#[derive(Debug, Clone, Copy)]
pub struct GkcValue {
    pub ratio: f64,
    pub imag_axis_margin: f64,
}

impl GkcEvaluator {
    pub fn new(sys: &RelaxationSystem, cs: &CharacteristicStructure, cong: &CongruenceData, bd: &BoundaryData) -> Result<Self> {
        if bd.rows() != cs.n_plus {
            return Err(Error::Dimension(format!("B has {} rows, expected n+ = {}", bd.rows(), cs.n_plus)));
        }
        Ok(Self { builder: SliceBuilder::new(sys, cong)?, b: linalg::to_complex(&bd.b), n_plus: cs.n_plus })
    }

    pub fn builder(&self) -> &SliceBuilder {
        &self.builder
    }

    pub fn evaluate(&self, fp: FrequencyPoint) -> Result<GkcValue> {
        let slice = self.builder.assemble(fp)?;
        // the spectrum of M scales with s, so classify at the normalized point
        let ss = stable_subspace(&(&slice.m / C64::new(fp.s(), 0.0)), SPECTRUM_TOL)?;
        if ss.stable_count != self.n_plus {
            return Err(Error::Internal(format!("M has {} stable eigenvalues, expected n+ = {}", ss.stable_count, self.n_plus)));
        }
        let boundary = &self.b * slice.trace_matrix() * &ss.rms;
        Ok(GkcValue { ratio: linalg::determinant_c(&boundary).norm(), imag_axis_margin: ss.imag_axis_margin })
    }
}

/// `|det(B·[[I,0],[N6,N5]]·R_M^S)|` with an orthonormal `R_M^S`.
pub fn gkc_ratio(
    sys: &RelaxationSystem,
    cs: &CharacteristicStructure,
    cong: &CongruenceData,
    bd: &BoundaryData,
    fp: FrequencyPoint,
) -> Result<f64> {
    Ok(GkcEvaluator::new(sys, cs, cong, bd)?.evaluate(fp)?.ratio)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct ScanGrid {
    pub m_eta: usize,
    pub m_theta: usize,
    pub delta: f64,
    pub threshold: f64,
}

impl Default for ScanGrid {
    fn default() -> Self {
        Self { m_eta: 33, m_theta: 65, delta: 1e-3, threshold: 1e-6 }
    }
}

impl ScanGrid {
    pub fn validate(&self) -> Result<()> {
        if self.m_eta == 0 || self.m_theta == 0 {
            return Err(Error::InvalidInput("grid sizes must be positive".into()));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::InvalidInput(format!("delta must lie in (0, 1), got {}", self.delta)));
        }
        if !(self.threshold >= 0.0) {
            return Err(Error::InvalidInput("threshold must be nonnegative".into()));
        }
        Ok(())
    }

    pub fn eta_primes(&self) -> Vec<f64> {
        if self.m_eta == 1 {
            return vec![0.0];
        }
        (0..self.m_eta).map(|j| j as f64 / (self.m_eta - 1) as f64 * (1.0 - self.delta)).collect()
    }

    pub fn thetas(&self) -> Vec<f64> {
        if self.m_theta == 1 {
            return vec![0.0];
        }
        let lo = -FRAC_PI_2 + self.delta;
        let span = std::f64::consts::PI - 2.0 * self.delta;
        (0..self.m_theta).map(|k| lo + span * k as f64 / (self.m_theta - 1) as f64).collect()
    }

    /// `(η′, θ)` pairs in row-major order (η′ outer).
    pub fn points(&self) -> Vec<(f64, f64)> {
        let thetas = self.thetas();
        self.eta_primes().into_iter().flat_map(|e| thetas.iter().map(move |&t| (e, t))).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct GridLocation {
    pub eta_prime: f64,
    pub theta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct GridDefect {
    pub at: GridLocation,
    pub reason: String,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GkcSample {
    pub at: GridLocation,
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct GkcReport {
    pub grid: ScanGrid,
    pub min_ratio: f64,
    pub argmin: GridLocation,
    pub imag_axis_margin: f64,
    pub pass: bool,
    pub defects: Vec<GridDefect>,
    #[serde(skip)]
    pub samples: Vec<GkcSample>,
}

impl GkcReport {
    /// `η′,θ,ratio` rows for heat maps.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("eta_prime,theta,ratio\n");
        for s in &self.samples {
            out.push_str(&format!("{:.16e},{:.16e},{:.16e}\n", s.at.eta_prime, s.at.theta, s.ratio));
        }
        out
    }
}

/// Evaluates the Kreiss ratio on the normalized quarter sphere.
///
/// Points where assembly fails are recorded as defects and count as ratio 0.
pub fn gkc_scan(
    sys: &RelaxationSystem,
    cs: &CharacteristicStructure,
    cong: &CongruenceData,
    bd: &BoundaryData,
    grid: ScanGrid,
) -> Result<GkcReport> {
    grid.validate()?;
    let eval = GkcEvaluator::new(sys, cs, cong, bd)?;
    let results: Vec<(GridLocation, Result<GkcValue>)> = grid
        .points()
        .into_par_iter()
        .map(|(eta_prime, theta)| {
            let at = GridLocation { eta_prime, theta };
            (at, FrequencyPoint::on_sphere(eta_prime, theta).and_then(|fp| eval.evaluate(fp)))
        })
        .collect();

    let mut min_ratio = f64::INFINITY;
    let mut argmin = results[0].0;
    let mut margin = f64::INFINITY;
    let mut defects = Vec::new();
    let mut samples = Vec::with_capacity(results.len());
    for (at, res) in results {
        let ratio = match res {
            Ok(v) => {
                margin = margin.min(v.imag_axis_margin);
                v.ratio
            }
            Err(e) => {
                defects.push(GridDefect { at, reason: e.to_string() });
                0.0
            }
        };
        samples.push(GkcSample { at, ratio });
        if ratio < min_ratio {
            min_ratio = ratio;
            argmin = at;
        }
    }
    Ok(GkcReport {
        grid,
        min_ratio,
        argmin,
        imag_axis_margin: if margin.is_finite() { margin } else { 0.0 },
        pass: min_ratio > grid.threshold,
        defects,
        samples,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct UniformBounds {
    pub max_norm_e: f64,
    pub max_norm_rms: f64,
}

/// Maxima of `‖E‖` and `‖R_M^S‖` (spectral norms) over the normalized grid.
pub fn uniform_bound_scan(sys: &RelaxationSystem, cong: &CongruenceData, grid: ScanGrid) -> Result<UniformBounds> {
    grid.validate()?;
    let builder = SliceBuilder::new(sys, cong)?;
    let values: Vec<Result<(f64, f64)>> = grid
        .points()
        .into_par_iter()
        .map(|(eta_prime, theta)| {
            let slice = builder.assemble(FrequencyPoint::on_sphere(eta_prime, theta)?)?;
            let ss = stable_subspace(&slice.m, SPECTRUM_TOL)?;
            Ok((linalg::spectral_norm_c(&slice.e()), linalg::spectral_norm_c(&ss.rms)))
        })
        .collect();
    let mut out = UniformBounds { max_norm_e: 0.0, max_norm_rms: 0.0 };
    for v in values {
        let (e, r) = v?;
        out.max_norm_e = out.max_norm_e.max(e);
        out.max_norm_rms = out.max_norm_rms.max(r);
    }
    Ok(out)
}
