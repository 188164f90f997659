//! Linear boundary layers: the corner system and closed-form profiles.

use crate::error::{Error, Result};
use crate::linalg::{self, Mat, Vector};
use crate::reduced::ReducedBoundary;
use crate::system::BoundaryData;

/// Relative tolerance for the bounded-layer condition `L2U·w₂(0) = 0`.
pub const BOUNDED_LAYER_TOL: f64 = 1e-9;

/// Solves the corner system for `(α, w₂(0))` given the outgoing modes `β`.
pub fn solve_corner(reduced: &ReducedBoundary, bd: &BoundaryData, beta: &Vector, t: f64) -> Result<(Vector, Vector)> {
    let r1s = &reduced.spectra.r1s;
    if beta.len() != r1s.ncols() {
        return Err(Error::Dimension(format!("beta has {} entries, expected {}", beta.len(), r1s.ncols())));
    }
    let bt = bd.eval(t);
    let data = &bt - bd.bu() * r1s * beta;
    let size = reduced.corner.nrows();
    let mut rhs = Mat::zeros(size, 1);
    rhs.view_mut((0, 0), (data.len(), 1)).copy_from(&data);
    let sol = linalg::solve(&reduced.corner, &rhs, "corner matrix", crate::reduced::CORNER_MAX_CONDITION)
        .map_err(|e| Error::GkcViolated(e.to_string()))?;
    let n1p = reduced.spectra.r1u.ncols();
    let alpha = Vector::from_iterator(n1p, sol.column(0).iter().take(n1p).copied());
    let w2 = Vector::from_iterator(size - n1p, sol.column(0).iter().skip(n1p).copied());

    let trace = &reduced.spectra.r1u * &alpha + r1s * beta;
    let reduced_residual = (&reduced.reduced_operator * trace - &reduced.bp * &bt).norm();
    if reduced_residual > 1e-10 * (1.0 + bt.norm() + beta.norm()) {
        return Err(Error::Internal(format!("corner solution violates the reduced condition by {reduced_residual:.3e}")));
    }
    Ok((alpha, w2))
}

/// Pointwise value of the layer correction.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerSample {
    pub mu: Vector,
    pub nu: Vector,
    pub w0: Vector,
    pub w2: Vector,
}

/// `w₂(y) = X·diag(e^{λy})·c` on the stable modes, plus the slaved components.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerProfile {
    pub w2_0: Vector,
    pub decay_generator: Mat,
    rates: Vec<f64>,
    vectors: Mat,
    coeffs: Vector,
    g1: Mat,
    k12_g1: Mat,
    w0_map: Mat,
}

pub fn layer_profile(reduced: &ReducedBoundary, w2_0: &Vector) -> Result<LayerProfile> {
    let sp = &reduced.spectra;
    if w2_0.len() != sp.generator.nrows() {
        return Err(Error::Dimension(format!("w2_0 has {} entries, expected {}", w2_0.len(), sp.generator.nrows())));
    }
    let residual = (&sp.l2u * w2_0).norm();
    if residual > BOUNDED_LAYER_TOL * w2_0.norm() {
        return Err(Error::UnboundedLayer { residual });
    }
    let coeffs = if sp.stable_vectors.ncols() == 0 {
        Vector::zeros(0)
    } else {
        sp.stable_vectors.clone().svd(true, true).solve(w2_0, 1e-14).map_err(|e| Error::Internal(e.to_string()))?
    };
    let g1 = reduced.g1().clone();
    Ok(LayerProfile {
        w2_0: w2_0.clone(),
        decay_generator: sp.generator.clone(),
        rates: sp.stable_rates.clone(),
        vectors: sp.stable_vectors.clone(),
        coeffs,
        k12_g1: &reduced.k12 * &g1,
        g1,
        w0_map: reduced.layer.w0_map.clone(),
    })
}

impl LayerProfile {
    pub fn w2(&self, y: f64) -> Vector {
        let scaled = Vector::from_iterator(self.coeffs.len(), self.coeffs.iter().zip(&self.rates).map(|(c, l)| c * (l * y).exp()));
        &self.vectors * scaled
    }

    /// `(μ, ν)` stacked as a vector of length `n`.
    pub fn correction(&self, y: f64) -> Vector {
        let s = self.evaluate(y);
        let mut out = Vector::zeros(s.mu.len() + s.nu.len());
        out.rows_mut(0, s.mu.len()).copy_from(&s.mu);
        out.rows_mut(s.mu.len(), s.nu.len()).copy_from(&s.nu);
        out
    }

    pub fn evaluate(&self, y: f64) -> LayerSample {
        let w2 = self.w2(y);
        LayerSample { mu: -(&self.k12_g1 * &w2), nu: &self.g1 * &w2, w0: &self.w0_map * &w2, w2 }
    }

    /// Slowest decay rate, or `None` when there are no layer modes.
    pub fn kappa(&self) -> Option<f64> {
        self.rates.iter().map(|l| l.abs()).reduce(f64::min)
    }
}

/// CSV with columns `y, mu_1.., nu_1..` on the given grid.
pub fn profile_csv(profile: &LayerProfile, ys: &[f64]) -> String {
    let m = profile.k12_g1.nrows();
    let r = profile.g1.nrows();
    let mut header = vec!["y".to_string()];
    header.extend((1..=m).map(|i| format!("mu_{i}")));
    header.extend((1..=r).map(|i| format!("nu_{i}")));
    let mut out = header.join(",");
    out.push('\n');
    for &y in ys {
        let s = profile.evaluate(y);
        let mut row = vec![format!("{y:.16e}")];
        row.extend(s.mu.iter().chain(s.nu.iter()).map(|v| format!("{v:.16e}")));
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::demos;
    use crate::frequency::congruence;
    use crate::reduced::reduce;
    use crate::system::{classify, BoundarySignal, RelaxationSystem, DEFAULT_TOL};
    use approx::assert_relative_eq;

    fn c3_reduced() -> (RelaxationSystem, ReducedBoundary) {
        let sys = demos::c3_system();
        let cs = classify(&sys, DEFAULT_TOL).unwrap();
        let cong = congruence(&sys, &cs, DEFAULT_TOL).unwrap();
        let r = reduce(&sys, &cs, &cong, &demos::c3_boundary(&sys)).unwrap();
        (sys, r)
    }

    #[test]
    fn c3_corner_examples() {
        let (sys, r) = c3_reduced();
        let sine = demos::c3_sine_boundary(&sys);
        for t in [0.0, 0.3, 1.7] {
            let (a, w) = solve_corner(&r, &sine, &Vector::zeros(0), t).unwrap();
            assert_relative_eq!(a[0], t.sin(), epsilon = 1e-14);
            assert_relative_eq!(w[0], t.sin(), epsilon = 1e-14);
        }
        let zero = demos::c3_boundary(&sys);
        let (a, w) = solve_corner(&r, &zero, &Vector::zeros(0), 0.5).unwrap();
        assert_eq!((a[0], w[0]), (0.0, 0.0));
        let unit = zero.with_signal(BoundarySignal::Constant { coeffs: vec![1.0, 0.0] }).unwrap();
        let (a, w) = solve_corner(&r, &unit, &Vector::zeros(0), 0.0).unwrap();
        assert_relative_eq!(a[0], 1.0, epsilon = 1e-15);
        assert_relative_eq!(w[0], 0.0, epsilon = 1e-15);
    }

    #[test]
    fn c3_profile_is_a_single_exponential() {
        let (_, r) = c3_reduced();
        let p = layer_profile(&r, &Vector::from_element(1, 1.0)).unwrap();
        for y in [0.0, 1.0, 5.0] {
            let s = p.evaluate(y);
            let e = (-y).exp();
            assert_relative_eq!(s.w2[0], e, epsilon = 1e-15);
            assert_relative_eq!(s.mu[0], -e, epsilon = 1e-15);
            assert_relative_eq!(s.nu[0], e, epsilon = 1e-15);
            assert_eq!(s.nu[1], 0.0);
            assert_eq!(s.w0[0], 0.0);
        }
        let zero = layer_profile(&r, &Vector::zeros(1)).unwrap();
        assert_eq!(zero.correction(0.3).norm(), 0.0);
    }

    #[test]
    fn csv_has_header_and_rows() {
        let (_, r) = c3_reduced();
        let p = layer_profile(&r, &Vector::from_element(1, 1.0)).unwrap();
        let csv = profile_csv(&p, &[0.0, 1.0]);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "y,mu_1,nu_1,nu_2");
        assert_eq!(lines.len(), 3);
    }
}
