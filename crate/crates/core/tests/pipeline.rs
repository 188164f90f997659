//! End-to-end runs of the analysis pipeline.

use relaxbc::demos;
use relaxbc::frequency::{congruence, gkc_scan, ScanGrid};
use relaxbc::ibvp::{assemble_approximate, solve_equilibrium, solve_relaxation, sup_l2_difference, HalfLineGrid, SolverOptions};
use relaxbc::layer::{layer_profile, solve_corner};
use relaxbc::linalg::Vector;
use relaxbc::random::{self, admissible_system, generic_boundary};
use relaxbc::reduced::reduce;
use relaxbc::system::{check_boundary, classify, validate_system, BoundarySignal, DEFAULT_TOL};
use relaxbc::Error;

#[test]
fn c3_from_certificate_to_layer() {
    let sys = demos::c3_system();
    assert!(validate_system(&sys, DEFAULT_TOL).overall);
    let cs = classify(&sys, DEFAULT_TOL).unwrap();
    let bd = demos::c3_sine_boundary(&sys);
    assert!(check_boundary(&sys, &cs, &bd, DEFAULT_TOL).unwrap().overall);
    let cong = congruence(&sys, &cs, DEFAULT_TOL).unwrap();
    let scan = gkc_scan(&sys, &cs, &cong, &bd, ScanGrid { m_eta: 9, m_theta: 17, ..ScanGrid::default() }).unwrap();
    assert!(scan.pass && scan.defects.is_empty());
    let r = reduce(&sys, &cs, &cong, &bd).unwrap();
    let t = 0.8f64;
    let (alpha, w2) = solve_corner(&r, &bd, &Vector::zeros(0), t).unwrap();
    assert!((alpha[0] - t.sin()).abs() < 1e-14);
    let p = layer_profile(&r, &w2).unwrap();
    assert!((p.evaluate(2.0).nu[0] - t.sin() * (-2.0f64).exp()).abs() < 1e-14);
}

/// Every random (system, boundary) pair that passes the frequency scan also
/// admits a reduced boundary condition with a nonvanishing determinant.
#[test]
fn gkc_pass_implies_reducible() {
    let mut g = random::rng(4242);
    let mut passed = 0;
    for _ in 0..40 {
        let s = admissible_system(&mut g);
        let bd = generic_boundary(&mut g, &s.system, &s.structure);
        let cong = congruence(&s.system, &s.structure, DEFAULT_TOL).unwrap();
        let scan = gkc_scan(&s.system, &s.structure, &cong, &bd, ScanGrid { m_eta: 9, m_theta: 17, ..ScanGrid::default() }).unwrap();
        if !scan.pass || !scan.defects.is_empty() {
            continue;
        }
        passed += 1;
        let r = reduce(&s.system, &s.structure, &cong, &bd).unwrap();
        assert!(r.kreiss_det.abs() > 1e-8);
    }
    assert!(passed > 5, "only {passed} random boundaries passed the scan");
}

#[test]
fn relaxation_trace_tends_to_reduced_data() {
    let sys = demos::c3_system();
    let bd = demos::c3_sine_boundary(&sys);
    let cs = classify(&sys, DEFAULT_TOL).unwrap();
    let cong = congruence(&sys, &cs, DEFAULT_TOL).unwrap();
    let r = reduce(&sys, &cs, &cong, &bd).unwrap();
    let u0 = |_: f64| Vector::zeros(1);
    let opts = SolverOptions::default();
    let mut previous = f64::INFINITY;
    for eps in [4e-2, 1e-2] {
        let grid = HalfLineGrid::graded(3.0, eps / 8.0, 40.0 * eps, 1.05, 8e-3).unwrap();
        let relaxed = solve_relaxation(&sys, &bd, &u0, &grid, 1.0, eps, opts).unwrap();
        let eq = solve_equilibrium(&sys, &r, &bd, &u0, &grid, 1.0, opts).unwrap();
        let approx = assemble_approximate(&sys, &r, &bd, &eq, eps).unwrap();
        let err = sup_l2_difference(&relaxed, &approx).unwrap();
        assert!(err < previous);
        previous = err;
        // the reduced condition prescribes ū(0,t) = b₁ + b₂ = sin t
        let k = eq.times.len() - 1;
        assert!((eq.traces[k][0] - eq.times[k].sin()).abs() < 1e-12);
    }
}

#[test]
fn violating_boundary_fails_reduction() {
    let sys = demos::c3_system();
    let cs = classify(&sys, DEFAULT_TOL).unwrap();
    let cong = congruence(&sys, &cs, DEFAULT_TOL).unwrap();
    let b = relaxbc::linalg::from_rows(&[&[0.0, 0.0, 1.0], &[0.0, 1.0, 0.0]]);
    let bd = relaxbc::system::BoundaryData::new(&sys, b, BoundarySignal::zero(2)).unwrap();
    assert!(matches!(reduce(&sys, &cs, &cong, &bd), Err(Error::GkcViolated(_))));
}
