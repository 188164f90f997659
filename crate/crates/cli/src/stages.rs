//! The gated stage pipeline behind every subcommand.

use clap::ValueEnum;
use relaxbc::frequency::{congruence, gkc_scan, ScanGrid};
use relaxbc::ibvp::{error_series, solve_relaxation, GridRule, Scenario, SolverOptions};
use relaxbc::layer::{layer_profile, profile_csv, solve_corner};
use relaxbc::linalg::{Mat, Vector, C64};
use relaxbc::nonlinear::{LinearModel, NonlinearLayer, NonlinearModel};
use relaxbc::reduced::{asymptotic_rms_check, reduce, ReducedBoundary};
use relaxbc::system::{check_boundary, classify, validate_system, BoundarySignal};
use relaxbc::Error;
use serde_json::{json, Map, Value};

use crate::input::Problem;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, ValueEnum)]
pub enum Command {
    /// Structural stability and boundary checks.
    Validate,
    /// Frequency scan of the modified Kreiss condition.
    Gkc,
    /// Reduced boundary condition for the equilibrium system.
    Reduce,
    /// Linear boundary-layer profile.
    Layer,
    /// Nonlinear corner system and layer trajectory.
    Nonlinear,
    /// One relaxation run at the first ε.
    Simulate,
    /// ε-sweep of the composite approximation error.
    Converge,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Validate => "validate",
            Command::Gkc => "gkc",
            Command::Reduce => "reduce",
            Command::Layer => "layer",
            Command::Nonlinear => "nonlinear",
            Command::Simulate => "simulate",
            Command::Converge => "converge",
        }
    }
}

/// Numerical knobs shared by all stages.
#[derive(Debug, Clone)]
pub struct Knobs {
    pub tol: f64,
    pub grid: ScanGrid,
    pub eps: Vec<f64>,
    pub t_final: f64,
    pub cfl: f64,
    /// Time at which the corner system is solved.
    pub at: f64,
}

/// Smallest observed convergence rate accepted by `converge`.
pub const MIN_RATE: f64 = 0.35;
const LAYER_DEPTH: f64 = 10.0;
const ASYMPTOTIC_ETAS: [f64; 4] = [1e2, 1e3, 1e4, 1e5];

impl Knobs {
    pub fn to_json(&self) -> Value {
        json!({
            "tol": self.tol,
            "grid": self.grid,
            "eps": self.eps,
            "T": self.t_final,
            "cfl": self.cfl,
            "at": self.at,
            "gridRule": GridRule::default(),
            "minRate": MIN_RATE,
        })
    }
}

#[derive(Debug, Clone)]
pub struct Failure {
    pub code: i32,
    pub stage: &'static str,
    pub message: String,
}

/// Stage reports and side files of one invocation.
#[derive(Debug, Default)]
pub struct Run {
    pub stages: Map<String, Value>,
    pub files: Vec<(String, String)>,
    pub failure: Option<Failure>,
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Dimension(_) | Error::InvalidInput(_) => 2,
        Error::Internal(_) => 3,
        _ => 1,
    }
}

fn fail(stage: &'static str) -> impl Fn(Error) -> Failure {
    move |e| Failure { code: exit_code(&e), stage, message: e.to_string() }
}

pub fn mat_json(m: &Mat) -> Value {
    Value::Array(m.row_iter().map(|r| json!(r.iter().copied().collect::<Vec<f64>>())).collect())
}

pub fn vec_json(v: &Vector) -> Value {
    json!(v.iter().copied().collect::<Vec<f64>>())
}

pub fn run(cmd: Command, problem: &Problem, knobs: &Knobs) -> Run {
    let mut run = Run::default();
    if let Err(f) = pipeline(cmd, problem, knobs, &mut run) {
        run.failure = Some(f);
    }
    run
}

fn pipeline(cmd: Command, problem: &Problem, knobs: &Knobs, run: &mut Run) -> Result<(), Failure> {
    let sys = problem.system();
    let bd = problem.boundary();

    let cert = validate_system(sys, knobs.tol);
    let mut report = Map::new();
    report.insert("system".into(), json!(cert));
    let cs = match classify(sys, knobs.tol) {
        Ok(cs) => cs,
        Err(e) => {
            run.stages.insert("validate".into(), Value::Object(report));
            let mut f = fail("validate")(e);
            if !cert.overall {
                f = Failure { code: 1, stage: "validate", message: format!("failing checks: {}", cert.failing().join(", ")) };
            }
            return Err(f);
        }
    };
    let bcert = check_boundary(sys, &cs, bd, knobs.tol).map_err(fail("validate"))?;
    report.insert("boundary".into(), json!(bcert));
    report.insert(
        "structure".into(),
        json!({
            "n": sys.n(),
            "r": sys.r(),
            "nPlus": cs.n_plus,
            "nZero": cs.n_zero,
            "nMinus": cs.n_minus,
            "n1Plus": cs.n1_plus,
            "lambdaPlus": cs.lambda_plus,
            "lambdaMinus": cs.lambda_minus,
        }),
    );
    run.stages.insert("validate".into(), Value::Object(report));
    let bad: Vec<&str> = cert.failing().into_iter().chain(bcert.failing()).collect();
    if !bad.is_empty() {
        return Err(Failure { code: 1, stage: "validate", message: format!("failing checks: {}", bad.join(", ")) });
    }
    if cmd == Command::Validate {
        return Ok(());
    }

    let cong = congruence(sys, &cs, knobs.tol).map_err(fail("gkc"))?;
    let scan = gkc_scan(sys, &cs, &cong, bd, knobs.grid).map_err(fail("gkc"))?;
    run.stages.insert("gkc".into(), json!(scan));
    run.files.push(("gkc.csv".into(), scan.to_csv()));
    if !scan.pass {
        return Err(Failure {
            code: 1,
            stage: "gkc",
            message: format!(
                "minimum Kreiss ratio {:.3e} at (eta', theta) = ({:.4}, {:.4}) is below {:.1e}",
                scan.min_ratio, scan.argmin.eta_prime, scan.argmin.theta, knobs.grid.threshold
            ),
        });
    }
    if cmd == Command::Gkc {
        return Ok(());
    }

    let reduced = match reduce(sys, &cs, &cong, bd) {
        Ok(r) => r,
        Err(Error::GkcViolated(m)) => {
            return Err(Failure { code: 3, stage: "reduce", message: format!("frequency scan passed but reduction failed: {m}") })
        }
        Err(e) => return Err(fail("reduce")(e)),
    };
    let asymptotic = match asymptotic_rms_check(sys, &cs, &cong, &reduced, C64::new(1.0, 0.0), &ASYMPTOTIC_ETAS) {
        Ok(d) => json!(d),
        Err(e) => json!({ "error": e.to_string() }),
    };
    run.stages.insert(
        "reduce".into(),
        json!({
            "Bp": mat_json(&reduced.bp),
            "reducedOperator": mat_json(&reduced.reduced_operator),
            "kreissDet": reduced.kreiss_det,
            "cornerCondition": reduced.corner_condition,
            "G1": mat_json(reduced.g1()),
            "G2": mat_json(reduced.g2()),
            "w0Map": mat_json(&reduced.layer.w0_map),
            "kappa": reduced.spectra.kappa(),
            "stableRates": reduced.spectra.stable_rates,
            "asymptotic": asymptotic,
        }),
    );
    if cmd == Command::Reduce {
        return Ok(());
    }

    match cmd {
        Command::Layer => layer_stage(problem, &reduced, knobs, run),
        Command::Nonlinear => match problem {
            Problem::Nc3 { model, signal, .. } => nonlinear_stage(model, signal.clone(), knobs, run),
            Problem::Linear { sys, bd } => {
                let model = LinearModel::new(sys.clone(), bd.b.clone()).map_err(fail("nonlinear"))?;
                nonlinear_stage(&model, bd.signal.clone(), knobs, run)
            }
        },
        Command::Simulate => simulate_stage(problem, knobs, run),
        Command::Converge => converge_stage(problem, &reduced, knobs, run),
        Command::Validate | Command::Gkc | Command::Reduce => Ok(()),
    }
}

fn layer_stage(problem: &Problem, reduced: &ReducedBoundary, knobs: &Knobs, run: &mut Run) -> Result<(), Failure> {
    let beta = Vector::zeros(reduced.spectra.r1s.ncols());
    let (alpha, w2) = solve_corner(reduced, problem.boundary(), &beta, knobs.at).map_err(fail("layer"))?;
    let profile = layer_profile(reduced, &w2).map_err(fail("layer"))?;
    let ys: Vec<f64> = (0..=100).map(|k| k as f64 * LAYER_DEPTH / 100.0).collect();
    run.files.push(("layer.csv".into(), profile_csv(&profile, &ys)));
    let end = profile.correction(LAYER_DEPTH).norm();
    run.stages.insert(
        "layer".into(),
        json!({
            "t": knobs.at,
            "beta": vec_json(&beta),
            "alpha": vec_json(&alpha),
            "w2": vec_json(&w2),
            "kappa": profile.kappa(),
            "correctionAtDepth": end,
            "depth": LAYER_DEPTH,
        }),
    );
    Ok(())
}

fn nonlinear_stage<M: NonlinearModel>(model: &M, signal: BoundarySignal, knobs: &Knobs, run: &mut Run) -> Result<(), Failure> {
    let layer = NonlinearLayer::new(model, signal).map_err(fail("nonlinear"))?;
    let sp = &layer.reduced.spectra;
    let beta = Vector::zeros(sp.r1s.ncols());
    let sample = layer.corner_newton(&beta, knobs.at).map_err(fail("nonlinear"))?;
    let (alpha_lin, w2_lin) = solve_corner(&layer.reduced, &layer.boundary, &beta, knobs.at).map_err(fail("nonlinear"))?;
    let u_inf = &sp.r1u * &sample.alpha + &sp.r1s * &beta;
    let traj = layer.integrate_layer(&u_inf, &sample.w2, LAYER_DEPTH, 1e-8).map_err(fail("nonlinear"))?;

    let mut csv = String::from("y");
    for (tag, len) in
        [("w2", sample.w2.len()), ("mu", traj.mu.first().map_or(0, |v| v.len())), ("nu", traj.nu.first().map_or(0, |v| v.len()))]
    {
        for k in 0..len {
            csv.push_str(&format!(",{tag}_{k}"));
        }
    }
    csv.push('\n');
    for (i, y) in traj.ys.iter().enumerate() {
        csv.push_str(&format!("{y:.16e}"));
        for v in [&traj.w2[i], &traj.mu[i], &traj.nu[i]] {
            for x in v.iter() {
                csv.push_str(&format!(",{x:.16e}"));
            }
        }
        csv.push('\n');
    }
    run.files.push(("nonlinear_layer.csv".into(), csv));

    let deviation = (&sample.alpha - &alpha_lin).norm().max((&sample.w2 - &w2_lin).norm());
    run.stages.insert(
        "nonlinear".into(),
        json!({
            "t": knobs.at,
            "alpha": vec_json(&sample.alpha),
            "w2": vec_json(&sample.w2),
            "residual": sample.residual,
            "newtonIterations": sample.stats.iterations,
            "linearAlpha": vec_json(&alpha_lin),
            "linearW2": vec_json(&w2_lin),
            "linearDeviation": deviation,
            "steps": traj.ys.len(),
            "terminalNorm": traj.terminal_norm,
            "manifoldEscape": traj.manifold_escape,
        }),
    );
    if traj.manifold_escape {
        return Err(Failure { code: 1, stage: "nonlinear", message: "layer trajectory left the neighborhood of the corner".into() });
    }
    Ok(())
}

fn options(knobs: &Knobs) -> SolverOptions {
    SolverOptions { cfl: knobs.cfl, ..SolverOptions::default() }
}

fn simulate_stage(problem: &Problem, knobs: &Knobs, run: &mut Run) -> Result<(), Failure> {
    let sys = problem.system();
    let eps = knobs.eps[0];
    let grid = GridRule::default().grid(sys, eps, knobs.t_final).map_err(fail("simulate"))?;
    let m = sys.m();
    let u0 = move |_: f64| Vector::zeros(m);
    let sol = solve_relaxation(sys, problem.boundary(), &u0, &grid, knobs.t_final, eps, options(knobs)).map_err(fail("simulate"))?;
    let last = sol.times.len() - 1;
    run.files.push(("simulate.csv".into(), sol.to_csv(last)));
    run.stages.insert(
        "simulate".into(),
        json!({
            "epsilon": eps,
            "cells": grid.cells(),
            "dxMin": grid.dx_min(),
            "xMax": grid.x_max,
            "samples": sol.times.len(),
            "finalTime": sol.times[last],
            "finalTrace": vec_json(&sol.traces[last]),
            "finalL2Norm": grid.l2_norm(&sol.states[last], sol.components),
        }),
    );
    Ok(())
}

fn converge_stage(problem: &Problem, reduced: &ReducedBoundary, knobs: &Knobs, run: &mut Run) -> Result<(), Failure> {
    let sys = problem.system();
    let m = sys.m();
    let u0 = move |_: f64| Vector::zeros(m);
    let scenario = Scenario { u0: &u0, t_final: knobs.t_final, options: options(knobs) };
    let report = error_series(sys, problem.boundary(), reduced, &scenario, &knobs.eps, &GridRule::default()).map_err(fail("converge"))?;
    run.files.push(("convergence.csv".into(), report.to_csv()));
    let rate_ok = report.fitted_slope.is_none_or(|s| s >= MIN_RATE);
    let mut value = json!(report);
    value["rateCheck"] = json!({ "minRate": MIN_RATE, "pass": rate_ok });
    run.stages.insert("converge".into(), value);
    if !rate_ok {
        return Err(Failure {
            code: 1,
            stage: "converge",
            message: format!("observed rate {:.3} is below {MIN_RATE}", report.fitted_slope.unwrap_or(f64::NAN)),
        });
    }
    Ok(())
}
