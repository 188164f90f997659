//! Acceptance criteria 1–10. Runs without the libtest harness so that the
//! PASS/FAIL line of every criterion is always printed.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use rand::Rng;
use relaxbc::demos;
use relaxbc::frequency::{
    congruence, gkc_ratio, gkc_scan, spd_isym_solve, uniform_bound_scan, CongruenceData, FrequencyPoint, ScanGrid, SliceBuilder,
};
use relaxbc::ibvp::{error_series, GridRule, Scenario, SolverOptions};
use relaxbc::layer::{layer_profile, solve_corner};
use relaxbc::linalg::{self, from_rows, CMat, Mat, Vector, C64};
use relaxbc::nonlinear::{fd_jacobian, linearize_corner, LinearModel, NonlinearLayer, NonlinearModel};
use relaxbc::random::{self, admissible_system, generic_boundary};
use relaxbc::reduced::{asymptotic_rms_check, reduce, ReducedBoundary};
use relaxbc::system::{
    check_boundary, classify, validate_system, BoundaryData, BoundarySignal, CharacteristicStructure, RelaxationSystem, DEFAULT_TOL,
};

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn c3_pipeline(
    bd: impl Fn(&RelaxationSystem) -> BoundaryData,
) -> (RelaxationSystem, CharacteristicStructure, CongruenceData, BoundaryData, ReducedBoundary) {
    let sys = demos::c3_system();
    let cs = classify(&sys, DEFAULT_TOL).unwrap();
    let cong = congruence(&sys, &cs, DEFAULT_TOL).unwrap();
    let b = bd(&sys);
    let r = reduce(&sys, &cs, &cong, &b).unwrap();
    (sys, cs, cong, b, r)
}

fn within(elapsed: Duration, limit: Duration) -> Result<(), String> {
    ensure(elapsed < limit, format!("runtime {elapsed:.2?} exceeds {limit:?}"))
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let sys = demos::c3_system();
    let cert = validate_system(&sys, DEFAULT_TOL);
    ensure(cert.overall, format!("c3 fails {:?}", cert.failing()))?;
    let cs = classify(&sys, DEFAULT_TOL).map_err(|e| e.to_string())?;
    ensure((cs.n_plus, cs.n_zero, cs.n1_plus) == (2, 1, 1), "c3 counts")?;
    let bcert = check_boundary(&sys, &cs, &demos::c3_boundary(&sys), DEFAULT_TOL).map_err(|e| e.to_string())?;
    ensure(bcert.overall, "c3 boundary checks fail")?;
    let margin = cert.checks.iter().chain(&bcert.checks).map(|c| c.margin()).fold(f64::INFINITY, f64::min);
    ensure(margin > 1e-9, format!("smallest margin {margin:.3e}"))?;

    let mut flipped = sys.clone();
    flipped.s = Mat::identity(2, 2);
    ensure(validate_system(&flipped, DEFAULT_TOL).failing().contains(&"symNegDef(S)"), "S = +I not rejected")?;
    let mut regular = sys.clone();
    regular.a22 = from_rows(&[&[2.0, 0.0], &[0.0, 1.0]]);
    ensure(validate_system(&regular, DEFAULT_TOL).failing() == vec!["singular(A1)"], "invertible A1 not rejected")?;
    let zero_mode = BoundaryData::new(&sys, from_rows(&[&[1.0, 0.0, 1.0], &[0.0, 1.0, 0.0]]), BoundarySignal::zero(2)).unwrap();
    let c = check_boundary(&sys, &cs, &zero_mode, DEFAULT_TOL).unwrap();
    ensure(c.failing() == vec!["zeroModes(B*RA0)"], format!("zero-mode boundary gives {:?}", c.failing()))?;
    let rank = BoundaryData::new(&sys, from_rows(&[&[1.0, 0.0, 0.0], &[2.0, 0.0, 0.0]]), BoundarySignal::zero(2)).unwrap();
    let c = check_boundary(&sys, &cs, &rank, DEFAULT_TOL).unwrap();
    ensure(c.failing().contains(&"rank(B)"), "rank-deficient boundary not rejected")?;
    within(start.elapsed(), Duration::from_secs(1))?;
    Ok(format!("min margin {margin:.3e}, 4 perturbations rejected, {:.2?}", start.elapsed()))
}

fn random_point(g: &mut random::TestRng) -> FrequencyPoint {
    let eta_prime: f64 = g.random_range(0.0..0.999);
    let theta: f64 = g.random_range(-1.5..1.5);
    let scale = 10f64.powf(g.random_range(-2.0..2.0));
    FrequencyPoint::on_sphere(eta_prime, theta).unwrap().scaled(scale)
}

fn criterion_2() -> Outcome {
    let start = Instant::now();
    let mut g = random::rng(2024);
    let mut violations = 0;
    let mut worst = f64::INFINITY;
    for _ in 0..200 {
        let s = admissible_system(&mut g);
        let cong = congruence(&s.system, &s.structure, DEFAULT_TOL).map_err(|e| e.to_string())?;
        let builder = SliceBuilder::new(&s.system, &cong).map_err(|e| e.to_string())?;
        for _ in 0..50 {
            let fp = random_point(&mut g);
            let slice = builder.assemble(fp).map_err(|e| e.to_string())?;
            let eigs = linalg::ordered_schur(&slice.m, |z| z.re < 0.0).eigenvalues();
            let margin = eigs.iter().map(|z| z.re.abs()).fold(f64::INFINITY, f64::min) / fp.s();
            let stable = eigs.iter().filter(|z| z.re < 0.0).count();
            worst = worst.min(margin);
            if margin.is_nan() || margin <= 1e-8 || stable != s.structure.n_plus {
                violations += 1;
            }
        }
    }
    ensure(violations == 0, format!("{violations} violations"))?;
    within(start.elapsed(), Duration::from_secs(60))?;
    Ok(format!("10000 points, 0 violations, min |Re λ|/s = {worst:.3e}, {:.2?}", start.elapsed()))
}

fn criterion_3() -> Outcome {
    let start = Instant::now();
    let mut g = random::rng(77);
    let mut worst = 0.0f64;
    for _ in 0..25 {
        let s = admissible_system(&mut g);
        let sys = &s.system;
        let cong = congruence(sys, &s.structure, DEFAULT_TOL).map_err(|e| e.to_string())?;
        let fp = random_point(&mut g);
        let slice = SliceBuilder::new(sys, &cong).and_then(|b| b.assemble(fp)).map_err(|e| e.to_string())?;
        let t = slice.trace_matrix();
        let a0 = linalg::to_complex(&sys.a0());
        let a1 = linalg::to_complex(&sys.a1());
        let q = linalg::to_complex(&sys.q());
        let eta = C64::new(fp.eta, 0.0);
        // Û = T·(û, ŵ₂) with (û, ŵ₂)' = M·(û, ŵ₂) must solve ξA0Û + A1Û' = ηQÛ
        let residual: CMat = &a0 * &t * fp.xi + &a1 * &t * &slice.m - &q * &t * eta;
        let scale = fp.xi.norm() * a0.norm() * t.norm() + a1.norm() * t.norm() * slice.m.norm() + fp.eta * q.norm() * t.norm();
        worst = worst.max(residual.norm() / scale);
    }
    ensure(worst <= 1e-8, format!("relative residual {worst:.3e}"))?;
    within(start.elapsed(), Duration::from_secs(30))?;
    Ok(format!("25 systems, max relative residual {worst:.3e}, {:.2?}", start.elapsed()))
}

fn criterion_4() -> Outcome {
    let start = Instant::now();
    let sys = demos::c3_system();
    let cs = classify(&sys, DEFAULT_TOL).unwrap();
    let cong = congruence(&sys, &cs, DEFAULT_TOL).unwrap();
    let bd = demos::c3_boundary(&sys);
    let report = gkc_scan(&sys, &cs, &cong, &bd, ScanGrid::default()).map_err(|e| e.to_string())?;
    ensure(report.pass && report.min_ratio > 1e-3, format!("c3 min ratio {:.3e}", report.min_ratio))?;
    let bad = BoundaryData::new(&sys, from_rows(&[&[0.0, 0.0, 1.0], &[0.0, 1.0, 0.0]]), BoundarySignal::zero(2)).unwrap();
    let bad_report = gkc_scan(&sys, &cs, &cong, &bad, ScanGrid::default()).map_err(|e| e.to_string())?;
    ensure(bad_report.min_ratio < 1e-10, format!("violating boundary min ratio {:.3e}", bad_report.min_ratio))?;
    let spot = gkc_ratio(&sys, &cs, &cong, &bd, FrequencyPoint::new(C64::new(1.0, 0.0), 0.0).unwrap()).map_err(|e| e.to_string())?;
    ensure((spot - 1.0).abs() <= 1e-10, format!("ratio(1, 0) = {spot}"))?;
    within(start.elapsed(), Duration::from_secs(10))?;
    Ok(format!(
        "min ratio {:.6} (33x65), violating boundary {:.3e}, ratio(1,0) = {spot:.12}, {:.2?}",
        report.min_ratio,
        bad_report.min_ratio,
        start.elapsed()
    ))
}

fn criterion_5() -> Outcome {
    let (_, _, _, _, r) = c3_pipeline(demos::c3_boundary);
    let v = Vector::from_vec(vec![1.0, 1.0]) / 2f64.sqrt();
    let projector = r.bp.transpose() * linalg::inverse(&(&r.bp * r.bp.transpose()), "BpBpT").unwrap() * &r.bp;
    let dev = (projector - &v * v.transpose()).abs().max();
    ensure(dev <= 1e-10, format!("projector deviation {dev:.3e}"))?;
    ensure((r.kreiss_det.abs() - 0.5f64.sqrt()).abs() <= 1e-8, format!("|det| = {}", r.kreiss_det.abs()))?;
    ensure(r.corner_condition < 10.0, format!("corner matrix condition {}", r.corner_condition))?;
    Ok(format!("projector deviation {dev:.1e}, |det(Bp Bu R1U)| = {:.10}, corner condition {:.4}", r.kreiss_det.abs(), r.corner_condition))
}

fn criterion_6() -> Outcome {
    let (sys, cs, cong, _, r) = c3_pipeline(demos::c3_boundary);
    let etas = [1e2, 1e3, 1e4, 1e5];
    let d = asymptotic_rms_check(&sys, &cs, &cong, &r, C64::new(1.0, 0.0), &etas).map_err(|e| e.to_string())?;
    ensure(d.monotone, format!("distances not monotone {:?}", d.distances))?;
    ensure(d.final_distance_ok, format!("final distance {:.3e}", d.distances[3]))?;
    ensure(d.rate_consistent == Some(true), format!("rate inconsistent {:?}", d.distances))?;
    Ok(format!("distances {:?}", d.distances.iter().map(|x| format!("{x:.3e}")).collect::<Vec<_>>()))
}

fn criterion_7() -> Outcome {
    let mut g = random::rng(7);
    let mut worst = 0.0f64;
    let mut min_re_eig = f64::INFINITY;
    for _ in 0..100 {
        let n = g.random_range(1..=6);
        let a = random::spd(&mut g, n);
        let b = random::symmetric(&mut g, n);
        let y = CMat::from_fn(n, n, |_, _| C64::new(g.random_range(-1.0..1.0), g.random_range(-1.0..1.0)));
        let x = spd_isym_solve(&a, &b, &y).map_err(|e| e.to_string())?;
        let op = linalg::to_complex(&a) + linalg::to_complex(&b) * C64::new(0.0, 1.0);
        worst = worst.max((&op * &x - &y).norm() / (op.norm() * x.norm() + y.norm()));
        let inv = spd_isym_solve(&a, &b, &CMat::identity(n, n)).map_err(|e| e.to_string())?;
        let re = inv.map(|z| z.re);
        ensure(linalg::asymmetry(&re) < 1e-12, "real part of the inverse is not symmetric")?;
        min_re_eig = min_re_eig.min(linalg::min_eigenvalue(&re));
    }
    ensure(worst <= 1e-11, format!("residual {worst:.3e}"))?;
    ensure(min_re_eig > 0.0, format!("real part not SPD ({min_re_eig:.3e})"))?;

    let change = |sys: &RelaxationSystem, cong: &CongruenceData| -> Result<(f64, f64, f64), String> {
        let coarse = uniform_bound_scan(sys, cong, ScanGrid::default()).map_err(|e| e.to_string())?;
        let fine = uniform_bound_scan(sys, cong, ScanGrid { m_eta: 65, m_theta: 129, ..ScanGrid::default() }).map_err(|e| e.to_string())?;
        let top = coarse.max_norm_e.max(fine.max_norm_e);
        let rel = if top == 0.0 { 0.0 } else { (coarse.max_norm_e - fine.max_norm_e).abs() / top };
        Ok((coarse.max_norm_e, fine.max_norm_e, rel))
    };
    let (sys, _, cong, _, _) = c3_pipeline(demos::c3_boundary);
    let (c0, c1, c_rel) = change(&sys, &cong)?;
    ensure(c_rel < 0.05, format!("c3 max |E| changes by {:.1}%", 100.0 * c_rel))?;
    // on c3 E vanishes identically, so the refinement is repeated on a random system
    let s = random::admissible_system_with(&mut random::rng(99), 4, 2, 1);
    let rcong = congruence(&s.system, &s.structure, DEFAULT_TOL).map_err(|e| e.to_string())?;
    let (r0, r1, r_rel) = change(&s.system, &rcong)?;
    ensure(r_rel < 0.05, format!("random max |E| changes by {:.1}%", 100.0 * r_rel))?;
    Ok(format!(
        "solve residual {worst:.2e}, min eig Re inv {min_re_eig:.3e}; max|E| c3 {c0:.3e}->{c1:.3e}, random {r0:.4}->{r1:.4} ({:.2}%)",
        100.0 * r_rel
    ))
}

fn criterion_8() -> Outcome {
    let (sys, _, _, _, r) = c3_pipeline(demos::c3_boundary);
    let p = layer_profile(&r, &Vector::from_element(1, 1.0)).map_err(|e| e.to_string())?;
    let mut dev = 0.0f64;
    for y in [0.0f64, 1.0, 5.0] {
        let e = (-y).exp();
        let s = p.evaluate(y);
        dev = dev.max((s.w2[0] - e).abs()).max((s.mu[0] + e).abs()).max((s.nu[0] - e).abs()).max(s.nu[1].abs());
    }
    ensure(dev <= 1e-12, format!("profile deviation {dev:.3e}"))?;
    let (a1, q) = (sys.a1(), sys.q());
    let h = 1e-5;
    let mut residual = 0.0f64;
    for y in [0.0, 0.5, 1.0, 2.0, 5.0] {
        let y = y + 2.0 * h;
        let derivative = (p.correction(y + h) - p.correction(y - h)) / (2.0 * h);
        residual = residual.max((&a1 * derivative - &q * p.correction(y)).norm());
    }
    ensure(residual <= 1e-8, format!("layer equation residual {residual:.3e}"))?;
    Ok(format!("profile deviation {dev:.1e}, layer equation residual {residual:.2e}"))
}

fn criterion_9() -> Outcome {
    let start = Instant::now();
    let (sys, _, _, bd, r) = c3_pipeline(demos::c3_sine_boundary);
    let u0 = |_: f64| Vector::zeros(1);
    let scenario = Scenario { u0: &u0, t_final: 2.0, options: SolverOptions::default() };
    let report = error_series(&sys, &bd, &r, &scenario, &[1e-2, 3e-3, 1e-3, 3e-4], &GridRule::default()).map_err(|e| e.to_string())?;
    let slope = report.fitted_slope.unwrap_or(f64::NAN);
    let detail = format!(
        "errors {:?}, slope {slope:.3}; within x < 40 eps: errors {:?}, slope {:.3}; {:.1?}",
        report.errors.iter().map(|e| format!("{e:.3e}")).collect::<Vec<_>>(),
        report.layer_errors.iter().map(|e| format!("{e:.3e}")).collect::<Vec<_>>(),
        report.layer_slope.unwrap_or(f64::NAN),
        start.elapsed()
    );
    ensure((0.35..=0.65).contains(&slope), format!("fitted slope outside [0.35, 0.65]: {detail}"))?;
    within(start.elapsed(), Duration::from_secs(600))?;
    Ok(detail)
}

fn criterion_10() -> Outcome {
    let model = demos::nc3();
    let (lin, bd) = linearize_corner(&model, BoundarySignal::zero(2)).map_err(|e| e.to_string())?;
    let c3 = demos::c3_system();
    let dev = (lin.a0() - c3.a0()).abs().max().max((lin.a1() - c3.a1()).abs().max()).max((lin.q() - c3.q()).abs().max());
    let bdev = (&bd.b - demos::c3_boundary(&c3).b).abs().max();
    ensure(dev.max(bdev) <= 1e-12, format!("linearization deviation {:.3e}", dev.max(bdev)))?;

    let s = 1e-3;
    let layer = NonlinearLayer::new(&model, BoundarySignal::Constant { coeffs: vec![0.0, s] }).map_err(|e| e.to_string())?;
    let sample = layer.corner_newton(&Vector::zeros(0), 0.0).map_err(|e| e.to_string())?;
    let (alpha, w2) = solve_corner(&layer.reduced, &layer.boundary, &Vector::zeros(0), 0.0).map_err(|e| e.to_string())?;
    let corner_dev = (&sample.alpha - alpha).norm().max((&sample.w2 - w2).norm());
    ensure(corner_dev <= 5e-6, format!("corner deviation {corner_dev:.3e}"))?;

    let mu = layer.psi1(&Vector::from_vec(vec![0.1, 0.0]), &Vector::zeros(1)).map_err(|e| e.to_string())?[0];
    let closed_form = (-1.0 + (1.0f64 - 0.4).sqrt()) / 2.0;
    ensure((mu - closed_form).abs() <= 1e-9, format!("psi1 = {mu}, quadratic formula {closed_form}"))?;

    let nc3_ids = derivative_identities(&layer)?;
    let s_rand = random::admissible_system_with(&mut random::rng(31), 5, 3, 1);
    let b = generic_boundary(&mut random::rng(32), &s_rand.system, &s_rand.structure).b;
    let lm = LinearModel::new(s_rand.system.clone(), b).map_err(|e| e.to_string())?;
    let rand_ids = match NonlinearLayer::new(&lm, BoundarySignal::zero(s_rand.structure.n_plus)) {
        Ok(l) => format!(", random linear model {:.2e}", derivative_identities(&l)?),
        Err(e) => format!(", random linear model skipped ({e})"),
    };
    Ok(format!(
        "linearization deviation {:.1e}, corner deviation {corner_dev:.2e}, psi1 = {mu:.15} (quadratic formula), derivative identities nc3 {nc3_ids:.2e}{rand_ids}",
        dev.max(bdev)
    ))
}

/// Largest relative deviation of the finite-difference derivatives of the
/// implicit functions from their closed forms at the corner.
fn derivative_identities<M: NonlinearModel>(layer: &NonlinearLayer<'_, M>) -> Result<f64, String> {
    let model = layer.model();
    let u_o = model.corner_u();
    let v_o = model.h(&u_o);
    let r = model.r();
    let reduced_flux = model.f_u(&u_o, &v_o) + model.f_v(&u_o, &v_o) * model.h_u(&u_o);
    let dpsi1_dnu = -linalg::solve(&reduced_flux, &model.f_v(&u_o, &v_o), "flux", 1e12).map_err(|e| e.to_string())?;
    let fd_nu = fd_jacobian(|nu| layer.psi1(nu, &u_o).unwrap(), &Vector::zeros(r));
    let fd_u = fd_jacobian(|u| layer.psi1(&Vector::zeros(r), u).unwrap(), &u_o);
    let k = layer.congruence.n_two();
    let dpsi2_dw2 = layer.reduced.layer.w0_map.clone();
    let fd_w2 = fd_jacobian(|w| layer.psi2(w, &u_o).unwrap(), &Vector::zeros(k));
    let fd_w2_u = fd_jacobian(|u| layer.psi2(&Vector::zeros(k), u).unwrap(), &u_o);
    let rel = |a: &Mat, b: &Mat| (a - b).norm() / b.norm().max(1.0);
    let worst = rel(&fd_nu, &dpsi1_dnu).max(fd_u.norm()).max(rel(&fd_w2, &dpsi2_dw2)).max(fd_w2_u.norm());
    ensure(worst <= 1e-6, format!("derivative identity deviation {worst:.3e}"))?;
    Ok(worst)
}

fn main() {
    let criteria: [(u32, fn() -> Outcome); 10] = [
        (1, criterion_1),
        (2, criterion_2),
        (3, criterion_3),
        (4, criterion_4),
        (5, criterion_5),
        (6, criterion_6),
        (7, criterion_7),
        (8, criterion_8),
        (9, criterion_9),
        (10, criterion_10),
    ];
    let filter: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (id, run) in criteria {
        if !filter.is_empty() && !filter.contains(&id) {
            continue;
        }
        let outcome = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default())
        });
        match outcome {
            Ok(detail) => println!("criterion {id}: PASS: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("criterion {id}: FAIL: {detail}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
