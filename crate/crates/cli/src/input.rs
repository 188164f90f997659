//! Input files and built-in demos.

use std::path::Path;

use relaxbc::demos;
use relaxbc::linalg::Mat;
use relaxbc::nonlinear::{linearize_corner, Nc3};
use relaxbc::system::{BoundaryData, BoundarySignal, RelaxationSystem};
use serde::Deserialize;

/// Schema of a system file; matrices are row-major nested arrays.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemFile {
    pub n: usize,
    pub r: usize,
    #[serde(rename = "A01")]
    pub a01: Vec<Vec<f64>>,
    #[serde(rename = "A02")]
    pub a02: Vec<Vec<f64>>,
    #[serde(rename = "A11")]
    pub a11: Vec<Vec<f64>>,
    #[serde(rename = "A12")]
    pub a12: Vec<Vec<f64>>,
    #[serde(rename = "A22")]
    pub a22: Vec<Vec<f64>>,
    #[serde(rename = "S")]
    pub s: Vec<Vec<f64>>,
    #[serde(rename = "B")]
    pub b: Vec<Vec<f64>>,
    /// Boundary signal; zero when absent.
    #[serde(rename = "b", default)]
    pub signal: Option<BoundarySignal>,
}

/// What the pipeline runs on.
pub enum Problem {
    Linear {
        sys: RelaxationSystem,
        bd: BoundaryData,
    },
    /// A nonlinear demo together with its corner linearization.
    Nc3 {
        model: Nc3,
        signal: BoundarySignal,
        sys: RelaxationSystem,
        bd: BoundaryData,
    },
}

impl Problem {
    pub fn system(&self) -> &RelaxationSystem {
        match self {
            Problem::Linear { sys, .. } | Problem::Nc3 { sys, .. } => sys,
        }
    }

    pub fn boundary(&self) -> &BoundaryData {
        match self {
            Problem::Linear { bd, .. } | Problem::Nc3 { bd, .. } => bd,
        }
    }
}

/// Parse failure with a location in the input.
#[derive(Debug)]
pub struct ParseError(pub String);

fn matrix(name: &str, rows: &[Vec<f64>]) -> Result<Mat, ParseError> {
    let cols = rows.first().map_or(0, Vec::len);
    if let Some((i, row)) = rows.iter().enumerate().find(|(_, r)| r.len() != cols) {
        return Err(ParseError(format!("field {name}: row {i} has {} entries, expected {cols}", row.len())));
    }
    Ok(Mat::from_fn(rows.len(), cols, |i, j| rows[i][j]))
}

pub fn load(path: &Path) -> Result<Problem, ParseError> {
    let text = std::fs::read_to_string(path).map_err(|e| ParseError(format!("{}: {e}", path.display())))?;
    let file: SystemFile =
        serde_json::from_str(&text).map_err(|e| ParseError(format!("{}:{}:{}: {e}", path.display(), e.line(), e.column())))?;
    let sys = RelaxationSystem::new(
        file.n,
        file.r,
        matrix("A01", &file.a01)?,
        matrix("A02", &file.a02)?,
        matrix("A11", &file.a11)?,
        matrix("A12", &file.a12)?,
        matrix("A22", &file.a22)?,
        matrix("S", &file.s)?,
    )
    .map_err(|e| ParseError(format!("{}: {e}", path.display())))?;
    let b = matrix("B", &file.b)?;
    let signal = file.signal.unwrap_or_else(|| BoundarySignal::zero(b.nrows()));
    let bd = BoundaryData::new(&sys, b, signal).map_err(|e| ParseError(format!("{}: field b: {e}", path.display())))?;
    Ok(Problem::Linear { sys, bd })
}

/// `c3`: b = (0, sin t). `nc3`: b = (0, 1e-3).
pub fn demo(name: &str) -> Result<Problem, ParseError> {
    match name {
        "c3" => {
            let sys = demos::c3_system();
            let bd = demos::c3_sine_boundary(&sys);
            Ok(Problem::Linear { sys, bd })
        }
        "nc3" => {
            let model = demos::nc3();
            let signal = BoundarySignal::Constant { coeffs: vec![0.0, 1e-3] };
            let (sys, bd) = linearize_corner(&model, signal.clone()).map_err(|e| ParseError(e.to_string()))?;
            Ok(Problem::Nc3 { model, signal, sys, bd })
        }
        other => Err(ParseError(format!("unknown demo {other:?}"))),
    }
}
