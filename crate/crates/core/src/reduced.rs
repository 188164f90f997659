//! Reduced boundary condition for the equilibrium system.
//!
//! In the limit `ξ → 0, η = 1` the frequency ODE becomes the layer system
//! `w₂' = Λ₂⁻¹G₂·w₂`, `ν = G1·w₂`, `μ = −A11⁻¹A12·G1·w₂`. Bounded layers need
//! `L2U·w₂(0) = 0`; eliminating the layer amplitude from the boundary
//! condition with the projector `Bp` yields `Bp·Bu·ū(0,t) = Bp·b(t)`.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::frequency::{CongruenceData, FrequencyPoint, SliceBuilder, SPECTRUM_TOL};
use crate::linalg::{self, CMat, Mat, C64};
use crate::system::{BoundaryData, CharacteristicStructure, RelaxationSystem};

/// Condition number above which the corner matrix counts as singular.
pub const CORNER_MAX_CONDITION: f64 = 1e12;

/// `(G1, G2)` of the layer system.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerData {
    pub g1: Mat,
    pub g2: Mat,
    /// `−(P0ᵀSP0)⁻¹P0ᵀSP2`, the map `w₂ ↦ w₀`.
    pub w0_map: Mat,
}

pub fn layer_data(sys: &RelaxationSystem, cong: &CongruenceData) -> Result<LayerData> {
    let p0sp0 = cong.p0.transpose() * &sys.s * &cong.p0;
    let p0sp2 = cong.p0.transpose() * &sys.s * &cong.p2;
    let w0_map = -linalg::solve(&p0sp0, &p0sp2, "P0ᵀSP0", 1e14)
        .map_err(|_| Error::AssumptionViolated("P0ᵀSP0 is singular, so S is not negative definite".into()))?;
    let g1 = &cong.p2 + &cong.p0 * &w0_map;
    let g2 = linalg::symmetrize(&(cong.p2.transpose() * &sys.s * &cong.p2 + p0sp2.transpose() * &w0_map));
    Ok(LayerData { g1, g2, w0_map })
}

/// Invariant-subspace data of the layer generator and of `A01⁻¹A11`.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerSpectra {
    /// `Λ₂⁻¹G₂`.
    pub generator: Mat,
    pub l2u: Mat,
    pub r2s: Mat,
    pub r2u: Mat,
    pub r1u: Mat,
    pub r1s: Mat,
    /// Stable eigenvalues of the generator (ascending) and matching eigenvectors.
    pub stable_rates: Vec<f64>,
    pub stable_vectors: Mat,
}

impl LayerSpectra {
    /// Slowest decay rate `κ = min |λ|` over the stable layer modes.
    pub fn kappa(&self) -> Option<f64> {
        self.stable_rates.iter().map(|l| l.abs()).fold(None, |acc, v| Some(acc.map_or(v, |a: f64| a.min(v))))
    }
}

/// Eigen-structure of `Λ₂⁻¹G₂` through the symmetric pencil `(Λ₂, −G₂)`.
///
/// With `C = (−G₂)^{1/2}` and `K = C⁻¹Λ₂C⁻¹ = YΜYᵀ`, the generator has
/// eigenpairs `(−1/μ, C⁻¹y)`; stable modes are those with `μ > 0`.
pub fn layer_spectra(
    sys: &RelaxationSystem,
    cs: &CharacteristicStructure,
    cong: &CongruenceData,
    layer: &LayerData,
) -> Result<LayerSpectra> {
    let k = cong.n_two();
    let lambda2_inv = cong.lambda2_inv();
    let generator = &lambda2_inv * &layer.g2;
    let (_, c_inv) = linalg::spd_sqrt(&(-&layer.g2), "-G2").map_err(|_| Error::AssumptionViolated("G2 is not negative definite".into()))?;
    let kmat = &c_inv * cong.lambda2_mat() * &c_inv;
    let (mu, y) = linalg::sym_eigen_desc(&kmat);
    let stable: Vec<usize> = (0..k).filter(|&i| mu[i] > 0.0).collect();
    let unstable: Vec<usize> = (0..k).filter(|&i| mu[i] <= 0.0).collect();
    let expected_stable = cs.n_plus - cs.n1_plus;
    if stable.len() != expected_stable {
        return Err(Error::Internal(format!("layer generator has {} stable modes, expected n+ - n1+ = {}", stable.len(), expected_stable)));
    }
    let columns = |idx: &[usize]| {
        let mut m = Mat::zeros(k, idx.len());
        for (j, &i) in idx.iter().enumerate() {
            let mut v = &c_inv * y.column(i);
            v /= v.norm();
            m.set_column(j, &v);
        }
        m
    };
    // ascending stable rates: μ descending gives −1/μ ascending
    let stable_vectors = {
        let mut m = columns(&stable);
        linalg::sign_normalize_columns(&mut m);
        m
    };
    let stable_rates = stable.iter().map(|&i| -1.0 / mu[i]).collect();
    let r2s = linalg::orthonormal_columns(&stable_vectors);
    let r2u = linalg::orthonormal_columns(&columns(&unstable));
    let l2u = linalg::left_null_space(&r2s, 1e-12);

    let (_, a01_inv_sqrt) = linalg::spd_sqrt(&sys.a01, "A01")?;
    let (eq_vals, eq_vecs) = linalg::sym_eigen_desc(&(&a01_inv_sqrt * &sys.a11 * &a01_inv_sqrt));
    let pos = eq_vals.iter().filter(|&&v| v > 0.0).count();
    if pos != cs.n1_plus {
        return Err(Error::Internal(format!("A01⁻¹A11 has {pos} positive eigenvalues, expected n1+ = {}", cs.n1_plus)));
    }
    let basis = &a01_inv_sqrt * eq_vecs;
    let r1u = linalg::orthonormal_columns(&basis.columns(0, pos).into_owned());
    let r1s = linalg::orthonormal_columns(&basis.columns(pos, sys.m() - pos).into_owned());

    Ok(LayerSpectra { generator, l2u, r2s, r2u, r1u, r1s, stable_rates, stable_vectors })
}

/// `(Bv − Bu·A11⁻¹A12)·G1`.
fn layer_coupling(sys: &RelaxationSystem, bd: &BoundaryData, layer: &LayerData) -> Result<Mat> {
    Ok((bd.bv() - bd.bu() * sys.a11_inv_a12()?) * &layer.g1)
}

/// `[[Bu·R1U, (Bv−Bu·A11⁻¹A12)·G1], [0, L2U]]` and its 2-norm condition number.
pub fn corner_matrix(sys: &RelaxationSystem, bd: &BoundaryData, layer: &LayerData, spectra: &LayerSpectra) -> Result<(Mat, f64)> {
    let top_left = bd.bu() * &spectra.r1u;
    let top_right = layer_coupling(sys, bd, layer)?;
    let n1p = top_left.ncols();
    let k = top_right.ncols();
    let rows = top_left.nrows() + spectra.l2u.nrows();
    if rows != n1p + k {
        return Err(Error::Internal(format!("corner matrix is {rows}x{}, not square", n1p + k)));
    }
    let mut m = Mat::zeros(rows, n1p + k);
    m.view_mut((0, 0), top_left.shape()).copy_from(&top_left);
    m.view_mut((0, n1p), top_right.shape()).copy_from(&top_right);
    m.view_mut((top_left.nrows(), n1p), spectra.l2u.shape()).copy_from(&spectra.l2u);
    let cond = linalg::condition_number(&m);
    Ok((m, cond))
}

/// Orthonormal rows annihilating `(Bv−Bu·A11⁻¹A12)·G1·R2S` from the left.
pub fn compute_bp(sys: &RelaxationSystem, bd: &BoundaryData, layer: &LayerData, spectra: &LayerSpectra) -> Result<Mat> {
    let x = layer_coupling(sys, bd, layer)? * &spectra.r2s;
    if x.ncols() == 0 {
        return Ok(Mat::identity(bd.rows(), bd.rows()));
    }
    let sv = linalg::singular_values(&x);
    let smallest = sv.last().copied().unwrap_or(0.0);
    if x.ncols() > x.nrows() || smallest <= 1e-12 * sv[0].max(f64::MIN_POSITIVE) {
        return Err(Error::GkcViolated(format!("(Bv - Bu*A11^-1*A12)*G1*R2S is rank deficient (smallest singular value {smallest:.3e})")));
    }
    let bp = linalg::left_null_space(&x, 1e-12);
    if bp.nrows() != bd.rows() - x.ncols() {
        return Err(Error::Internal("left null space has unexpected dimension".into()));
    }
    Ok(bp)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReducedBoundary {
    pub layer: LayerData,
    pub spectra: LayerSpectra,
    pub k12: Mat,
    pub corner: Mat,
    pub corner_condition: f64,
    pub bp: Mat,
    /// `Bp·Bu`.
    pub reduced_operator: Mat,
    /// `det(Bp·Bu·R1U)`.
    pub kreiss_det: f64,
}

impl ReducedBoundary {
    pub fn g1(&self) -> &Mat {
        &self.layer.g1
    }

    pub fn g2(&self) -> &Mat {
        &self.layer.g2
    }
}

/// Full reduced-boundary pipeline. Fails with `GkcViolated` when the corner
/// matrix is singular or the reduced Kreiss determinant vanishes.
pub fn reduce(sys: &RelaxationSystem, cs: &CharacteristicStructure, cong: &CongruenceData, bd: &BoundaryData) -> Result<ReducedBoundary> {
    let layer = layer_data(sys, cong)?;
    let spectra = layer_spectra(sys, cs, cong, &layer)?;
    let (corner, cond) = corner_matrix(sys, bd, &layer, &spectra)?;
    if !(cond <= CORNER_MAX_CONDITION) {
        return Err(Error::GkcViolated(format!("corner matrix is singular (condition {cond:.3e})")));
    }
    let bp = compute_bp(sys, bd, &layer, &spectra)?;
    let reduced_operator = &bp * bd.bu();
    let kreiss_det = linalg::determinant(&(&reduced_operator * &spectra.r1u));
    if kreiss_det.abs() <= 1e-8 {
        return Err(Error::GkcViolated(format!("reduced Kreiss determinant {kreiss_det:.3e} vanishes")));
    }
    Ok(ReducedBoundary { layer, spectra, k12: sys.a11_inv_a12()?, corner, corner_condition: cond, bp, reduced_operator, kreiss_det })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct AsymptoticDiagnostics {
    pub xi_re: f64,
    pub xi_im: f64,
    pub etas: Vec<f64>,
    pub distances: Vec<f64>,
    pub monotone: bool,
    pub final_distance_ok: bool,
    /// `None` when fewer than two η values were given.
    pub rate_consistent: Option<bool>,
    pub pass: bool,
}

/// Stable invariant subspace of `M` split by eigenvalue modulus.
fn split_stable(m: &CMat, slow_count: usize) -> Result<(CMat, CMat)> {
    let all = linalg::ordered_schur(m, |z| z.re < 0.0);
    let mut moduli: Vec<f64> = all.eigenvalues().iter().filter(|z| z.re < 0.0).map(|z| z.norm()).collect();
    moduli.sort_by(f64::total_cmp);
    let stable = moduli.len();
    if slow_count > stable {
        return Err(Error::Internal("fewer stable eigenvalues than slow modes".into()));
    }
    let cut = match (slow_count, stable) {
        (0, _) => 0.0,
        (s, t) if s == t => f64::INFINITY,
        (s, _) => 0.5 * (moduli[s - 1] + moduli[s]),
    };
    let slow = linalg::ordered_schur(m, |z| z.re < 0.0 && z.norm() < cut);
    let fast = linalg::ordered_schur(m, |z| z.re < 0.0 && z.norm() >= cut);
    if slow.selected != slow_count || fast.selected != stable - slow_count {
        return Err(Error::Internal("eigenvalue split moved during reordering".into()));
    }
    Ok((slow.leading(slow.selected), fast.leading(fast.selected)))
}

/// Tracks the large-η behaviour of the stable subspace for fixed `ξ`.
///
/// The stable subspace of `M(ξ,η)` splits into `n1⁺` slow modes (bounded
/// eigenvalues) and `n⁺−n1⁺` fast modes (eigenvalues of order η). Mapped to
/// `U`-space by `[[I,0],[N6,N5]]` they converge to `span[R1U; 0]` and
/// `span[−A11⁻¹A12·G1·R2S; G1·R2S]`, whose images under `B` are the two
/// column blocks of the corner matrix. The distance reported per η is the
/// larger of the two principal-angle sines.
pub fn asymptotic_rms_check(
    sys: &RelaxationSystem,
    cs: &CharacteristicStructure,
    cong: &CongruenceData,
    reduced: &ReducedBoundary,
    xi: C64,
    etas: &[f64],
) -> Result<AsymptoticDiagnostics> {
    let builder = SliceBuilder::new(sys, cong)?;
    let m = sys.m();
    let n = sys.n();
    let slow_limit = {
        let mut l = Mat::zeros(n, cs.n1_plus);
        l.view_mut((0, 0), (m, cs.n1_plus)).copy_from(&reduced.spectra.r1u);
        linalg::to_complex(&l)
    };
    let fast_limit = {
        let g1r2s = reduced.g1() * &reduced.spectra.r2s;
        let mut l = Mat::zeros(n, g1r2s.ncols());
        l.view_mut((0, 0), (m, g1r2s.ncols())).copy_from(&(-&reduced.k12 * &g1r2s));
        l.view_mut((m, 0), g1r2s.shape()).copy_from(&g1r2s);
        linalg::to_complex(&l)
    };
    let mut distances = Vec::with_capacity(etas.len());
    for &eta in etas {
        let slice = builder.assemble(FrequencyPoint::new(xi, eta)?)?;
        let scaled = &slice.m / C64::new(FrequencyPoint::new(xi, eta)?.s(), 0.0);
        crate::frequency::stable_subspace(&scaled, SPECTRUM_TOL)?;
        let (slow, fast) = split_stable(&slice.m, cs.n1_plus)?;
        let t = slice.trace_matrix();
        let d_slow = linalg::subspace_distance(&(&t * slow), &slow_limit);
        let d_fast = linalg::subspace_distance(&(&t * fast), &fast_limit);
        distances.push(d_slow.max(d_fast));
    }
    let monotone = distances.windows(2).all(|w| w[1] < w[0]);
    let final_distance_ok = distances.last().is_some_and(|&d| d <= 1e-3);
    let rate_consistent = if etas.len() < 2 {
        None
    } else {
        Some(etas.windows(2).zip(distances.windows(2)).all(|(e, d)| {
            // for O(1/η) decay, d·η stays constant
            let ratio = (d[0] * e[0]) / (d[1] * e[1]);
            (1.0 / 3.0..=3.0).contains(&ratio)
        }))
    };
    let pass = final_distance_ok && (etas.len() < 2 || (monotone && rate_consistent == Some(true)));
    Ok(AsymptoticDiagnostics {
        xi_re: xi.re,
        xi_im: xi.im,
        etas: etas.to_vec(),
        distances,
        monotone,
        final_distance_ok,
        rate_consistent,
        pass,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::demos;
    use crate::frequency::congruence;
    use crate::linalg::from_rows;
    use crate::system::{classify, BoundarySignal, DEFAULT_TOL};
    use approx::assert_relative_eq;
    use std::f64::consts::FRAC_1_SQRT_2;

    fn c3() -> (RelaxationSystem, CharacteristicStructure, CongruenceData, BoundaryData) {
        let sys = demos::c3_system();
        let cs = classify(&sys, DEFAULT_TOL).unwrap();
        let cong = congruence(&sys, &cs, DEFAULT_TOL).unwrap();
        let bd = demos::c3_boundary(&sys);
        (sys, cs, cong, bd)
    }

    #[test]
    fn c3_layer_data() {
        let (sys, _, cong, _) = c3();
        let l = layer_data(&sys, &cong).unwrap();
        assert_eq!(l.g1, from_rows(&[&[1.0], &[0.0]]));
        assert_eq!(l.g2, from_rows(&[&[-1.0]]));
    }

    #[test]
    fn c3_spectra() {
        let (sys, cs, cong, _) = c3();
        let l = layer_data(&sys, &cong).unwrap();
        let s = layer_spectra(&sys, &cs, &cong, &l).unwrap();
        assert_relative_eq!(s.r2s, from_rows(&[&[1.0]]), epsilon = 1e-15);
        assert_eq!(s.r2u.shape(), (1, 0));
        assert_eq!(s.l2u.shape(), (0, 1));
        assert_relative_eq!(s.r1u, from_rows(&[&[1.0]]), epsilon = 1e-15);
        assert_eq!(s.r1s.shape(), (1, 0));
        assert_relative_eq!(s.stable_rates[0], -1.0, epsilon = 1e-15);
    }

    #[test]
    fn diagonal_generator_splits() {
        // Λ2 = diag(1, −1), G2 = diag(−2, −3) gives Λ2⁻¹G2 = diag(−2, 3)
        let sys = RelaxationSystem::new(
            4,
            3,
            from_rows(&[&[1.0]]),
            Mat::identity(3, 3),
            from_rows(&[&[1.0]]),
            from_rows(&[&[0.0, 0.0, 0.0]]),
            from_rows(&[&[1.0, 0.0, 0.0], &[0.0, -1.0, 0.0], &[0.0, 0.0, 0.0]]),
            from_rows(&[&[-2.0, 0.0, 0.0], &[0.0, -3.0, 0.0], &[0.0, 0.0, -1.0]]),
        )
        .unwrap();
        let cs = classify(&sys, DEFAULT_TOL).unwrap();
        let cong = congruence(&sys, &cs, DEFAULT_TOL).unwrap();
        let l = layer_data(&sys, &cong).unwrap();
        let s = layer_spectra(&sys, &cs, &cong, &l).unwrap();
        assert_relative_eq!(s.generator, from_rows(&[&[-2.0, 0.0], &[0.0, 3.0]]), epsilon = 1e-15);
        assert_relative_eq!(s.r2s, from_rows(&[&[1.0], &[0.0]]), epsilon = 1e-15);
        assert_relative_eq!(s.r2u, from_rows(&[&[0.0], &[1.0]]), epsilon = 1e-15);
        assert_relative_eq!(s.l2u, from_rows(&[&[0.0, 1.0]]), epsilon = 1e-15);
    }

    #[test]
    fn c3_corner_matrix_and_projector() {
        let (sys, cs, cong, bd) = c3();
        let l = layer_data(&sys, &cong).unwrap();
        let s = layer_spectra(&sys, &cs, &cong, &l).unwrap();
        let (m, cond) = corner_matrix(&sys, &bd, &l, &s).unwrap();
        assert_relative_eq!(m, from_rows(&[&[1.0, -1.0], &[0.0, 1.0]]), epsilon = 1e-15);
        assert_relative_eq!(cond, (3.0 + 5f64.sqrt()) / 2.0, epsilon = 1e-12);

        let swapped = BoundaryData::new(&sys, from_rows(&[&[0.0, 1.0, 0.0], &[1.0, 0.0, 0.0]]), BoundarySignal::zero(2)).unwrap();
        let (m2, _) = corner_matrix(&sys, &swapped, &l, &s).unwrap();
        assert_relative_eq!(linalg::determinant(&m2).abs(), linalg::determinant(&m).abs(), epsilon = 1e-14);

        let r = reduce(&sys, &cs, &cong, &bd).unwrap();
        assert_relative_eq!(r.bp, from_rows(&[&[FRAC_1_SQRT_2, FRAC_1_SQRT_2]]), epsilon = 1e-15);
        assert_relative_eq!(r.reduced_operator[(0, 0)], FRAC_1_SQRT_2, epsilon = 1e-15);
        assert_relative_eq!(r.kreiss_det, FRAC_1_SQRT_2, epsilon = 1e-15);
    }

    #[test]
    fn no_layer_rows_gives_identity_projector() {
        // n1+ = n+ : A1 = diag(1, −1, 0) with A11 = 1
        let sys = RelaxationSystem::new(
            3,
            2,
            from_rows(&[&[1.0]]),
            Mat::identity(2, 2),
            from_rows(&[&[1.0]]),
            from_rows(&[&[0.0, 0.0]]),
            from_rows(&[&[-1.0, 0.0], &[0.0, 0.0]]),
            -Mat::identity(2, 2),
        )
        .unwrap();
        let cs = classify(&sys, DEFAULT_TOL).unwrap();
        assert_eq!((cs.n_plus, cs.n1_plus), (1, 1));
        let cong = congruence(&sys, &cs, DEFAULT_TOL).unwrap();
        let bd = BoundaryData::new(&sys, from_rows(&[&[1.0, 0.5, 0.0]]), BoundarySignal::zero(1)).unwrap();
        let r = reduce(&sys, &cs, &cong, &bd).unwrap();
        assert_eq!(r.bp, Mat::identity(1, 1));
    }

    #[test]
    fn c3_asymptotics_decay_like_inverse_eta() {
        let (sys, cs, cong, bd) = c3();
        let r = reduce(&sys, &cs, &cong, &bd).unwrap();
        let etas = [1e2, 1e3, 1e4, 1e5];
        for xi in [C64::new(1.0, 0.0), C64::new(1.0, 10.0)] {
            let d = asymptotic_rms_check(&sys, &cs, &cong, &r, xi, &etas).unwrap();
            assert!(d.pass, "{d:?}");
        }
        let single = asymptotic_rms_check(&sys, &cs, &cong, &r, C64::new(1.0, 0.0), &[1e5]).unwrap();
        assert_eq!(single.rate_consistent, None);
        assert!(single.pass);
    }
}
