//! `relaxbc`: boundary-condition analysis for linear relaxation systems.
//!
//! Every subcommand runs the stage pipeline up to itself and stops at the
//! first failing stage. Exit status: 0 all checks pass, 1 a modelling
//! assumption fails, 2 unreadable input or arguments, 3 internal
//! contradiction between stages.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod input;
mod report;
mod stages;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, ValueEnum};
use relaxbc::frequency::ScanGrid;
use relaxbc::system::DEFAULT_TOL;
use serde_json::json;

use stages::{Command, Knobs};

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Demo {
    /// Linear three-component example, b = (0, sin t).
    C3,
    /// Nonlinear three-component example, b = (0, 1e-3).
    Nc3,
}

#[derive(Debug, Parser)]
#[command(name = "relaxbc", version, about = "Reduced boundary conditions and layers for relaxation systems")]
struct Cli {
    #[arg(value_enum)]
    command: Command,

    /// JSON system file.
    #[arg(long, conflicts_with = "demo", required_unless_present = "demo")]
    input: Option<PathBuf>,

    /// Built-in example instead of an input file.
    #[arg(long, value_enum)]
    demo: Option<Demo>,

    /// Directory for report.json and CSV files.
    #[arg(long, default_value = "out")]
    out: PathBuf,

    #[arg(long, default_value_t = DEFAULT_TOL)]
    tol: f64,

    /// Frequency grid size as `m_eta,m_theta`.
    #[arg(long, default_value = "33,65", value_parser = parse_grid)]
    grid: (usize, usize),

    /// Distance kept from the grid edges in the frequency scan.
    #[arg(long, default_value_t = 1e-3)]
    delta: f64,

    /// Pass threshold for the minimum Kreiss ratio.
    #[arg(long, default_value_t = 1e-6)]
    threshold: f64,

    /// Relaxation times, comma separated; `simulate` uses the first.
    #[arg(long, value_delimiter = ',', default_values_t = [1e-2, 3e-3, 1e-3, 3e-4])]
    eps: Vec<f64>,

    /// Final time.
    #[arg(long = "T", default_value_t = 2.0)]
    t_final: f64,

    #[arg(long, default_value_t = 0.9)]
    cfl: f64,

    /// Time at which `layer` and `nonlinear` solve the corner system.
    #[arg(long, default_value_t = 0.25)]
    at: f64,
}

fn parse_grid(s: &str) -> Result<(usize, usize), String> {
    let (a, b) = s.split_once(',').ok_or_else(|| format!("expected m_eta,m_theta, got {s:?}"))?;
    let parse = |x: &str| x.trim().parse::<usize>().map_err(|e| format!("{x:?}: {e}"));
    Ok((parse(a)?, parse(b)?))
}

impl Cli {
    fn knobs(&self) -> Result<Knobs, String> {
        let grid = ScanGrid { m_eta: self.grid.0, m_theta: self.grid.1, delta: self.delta, threshold: self.threshold };
        grid.validate().map_err(|e| e.to_string())?;
        let positive =
            |name: &str, v: f64| if v > 0.0 && v.is_finite() { Ok(()) } else { Err(format!("--{name} must be positive, got {v}")) };
        positive("tol", self.tol)?;
        positive("T", self.t_final)?;
        positive("cfl", self.cfl)?;
        if self.cfl > 1.0 {
            return Err(format!("--cfl must not exceed 1, got {}", self.cfl));
        }
        if !(self.at >= 0.0) {
            return Err(format!("--at must be non-negative, got {}", self.at));
        }
        if self.eps.is_empty() {
            return Err("--eps needs at least one value".into());
        }
        for &e in &self.eps {
            positive("eps", e)?;
        }
        Ok(Knobs { tol: self.tol, grid, eps: self.eps.clone(), t_final: self.t_final, cfl: self.cfl, at: self.at })
    }

    fn source(&self) -> String {
        match (&self.input, self.demo) {
            (Some(p), _) => p.display().to_string(),
            (None, Some(Demo::C3)) => "demo:c3".into(),
            (None, Some(Demo::Nc3)) => "demo:nc3".into(),
            (None, None) => String::new(),
        }
    }
}

fn write_outputs(dir: &Path, report: &str, files: &[(String, String)]) -> anyhow::Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    std::fs::write(dir.join("report.json"), report).context("writing report.json")?;
    for (name, body) in files {
        std::fs::write(dir.join(name), body).with_context(|| format!("writing {name}"))?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let knobs = match cli.knobs() {
        Ok(k) => k,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let problem = match (&cli.input, cli.demo) {
        (Some(p), _) => input::load(p),
        (None, Some(Demo::C3)) => input::demo("c3"),
        (None, Some(Demo::Nc3)) => input::demo("nc3"),
        (None, None) => unreachable!("clap requires --input or --demo"),
    };
    let problem = match problem {
        Ok(p) => p,
        Err(input::ParseError(e)) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };

    let run = stages::run(cli.command, &problem, &knobs);
    let code = run.failure.as_ref().map_or(0, |f| f.code);
    let doc = json!({
        "command": cli.command.name(),
        "input": cli.source(),
        "knobs": knobs.to_json(),
        "stages": run.stages,
        "status": if code == 0 { "pass" } else { "fail" },
        "exitCode": code,
        "failure": run.failure.as_ref().map(|f| json!({ "stage": f.stage, "message": f.message })),
    });
    if let Err(e) = write_outputs(&cli.out, &report::render(&doc), &run.files) {
        eprintln!("error: {e:#}");
        return ExitCode::from(2);
    }
    match &run.failure {
        None => println!("{}: pass ({})", cli.command.name(), cli.out.join("report.json").display()),
        Some(f) => eprintln!("{}: {} failed: {}", cli.command.name(), f.stage, f.message),
    }
    ExitCode::from(code as u8)
}
