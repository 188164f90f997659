//! Built-in demo problems.

use crate::linalg::{from_rows, Mat};
use crate::nonlinear::Nc3;
use crate::system::{BoundaryData, BoundarySignal, RelaxationSystem};

/// Three-component linear demo: `A0 = I`, `A11 = 1`, `A12 = (1, 0)`,
/// `A22 = diag(2, 0)`, `S = −I₂`.
pub fn c3_system() -> RelaxationSystem {
    RelaxationSystem::new(
        3,
        2,
        from_rows(&[&[1.0]]),
        Mat::identity(2, 2),
        from_rows(&[&[1.0]]),
        from_rows(&[&[1.0, 0.0]]),
        from_rows(&[&[2.0, 0.0], &[0.0, 0.0]]),
        -Mat::identity(2, 2),
    )
    .expect("c3 blocks are consistent")
}

/// `B = [[1,0,0],[0,1,0]]` with homogeneous data.
pub fn c3_boundary(sys: &RelaxationSystem) -> BoundaryData {
    BoundaryData::new(sys, c3_b(), BoundarySignal::zero(2)).expect("c3 boundary is consistent")
}

/// `B = [[1,0,0],[0,1,0]]` with `b(t) = (0, sin t)`.
pub fn c3_sine_boundary(sys: &RelaxationSystem) -> BoundaryData {
    BoundaryData::new(sys, c3_b(), BoundarySignal::Sinusoid { coeffs: vec![[0.0, 0.0, 0.0, 0.0], [0.0, 1.0, 1.0, 0.0]] })
        .expect("c3 boundary is consistent")
}

pub fn c3_b() -> Mat {
    from_rows(&[&[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0]])
}

/// Nonlinear demo whose corner linearization is `c3_system`.
pub fn nc3() -> Nc3 {
    Nc3::new(c3_b())
}
