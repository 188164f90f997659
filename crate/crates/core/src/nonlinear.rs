//! Boundary layers of nonlinear relaxation systems `U_t + F(U)_x = Q(U)/ε`
//! with `F = (f, g)`, `Q = (0, q)` and a linear boundary condition `B·U = b(t)`.
//!
//! Near the corner state `U0 = (u_o, h(u_o))` the layer is reduced to the
//! dynamical system `w₂' = H(w₂, ũ∞)` through two implicit functions:
//! `μ = ψ₁(ν, ũ∞)` from conservation of `f` across the layer and
//! `w₀ = ψ₂(w₂, ũ∞)` from the degenerate directions of the flux.

use crate::error::{Error, Result};
use crate::frequency::{congruence, CongruenceData};
use crate::layer::solve_corner;
use crate::linalg::{self, Mat, Vector};
use crate::reduced::{reduce, ReducedBoundary, CORNER_MAX_CONDITION};
use crate::system::{classify, validate_system, BoundaryData, BoundarySignal, CharacteristicStructure, RelaxationSystem, DEFAULT_TOL};

/// Central-difference Jacobian of `f` at `x`, step `1e-6·(1+‖x‖)`.
pub fn fd_jacobian(f: impl Fn(&Vector) -> Vector, x: &Vector) -> Mat {
    let h = 1e-6 * (1.0 + x.norm());
    let cols: Vec<Vector> = (0..x.len())
        .map(|j| {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[j] += h;
            xm[j] -= h;
            (f(&xp) - f(&xm)) / (2.0 * h)
        })
        .collect();
    let rows = cols.first().map_or_else(|| f(x).len(), |c| c.len());
    let mut jac = Mat::zeros(rows, x.len());
    for (j, c) in cols.iter().enumerate() {
        jac.set_column(j, c);
    }
    jac
}

/// A nonlinear relaxation model. Jacobians default to central differences.
pub trait NonlinearModel: Sync {
    fn n(&self) -> usize;
    fn r(&self) -> usize;
    fn f(&self, u: &Vector, v: &Vector) -> Vector;
    fn g(&self, u: &Vector, v: &Vector) -> Vector;
    fn q(&self, u: &Vector, v: &Vector) -> Vector;
    /// Equilibrium map: `q(u, h(u)) = 0`.
    fn h(&self, u: &Vector) -> Vector;
    /// Symmetrizer `A0(U)`, with `A0·F_U` symmetric.
    fn a0(&self, u: &Vector, v: &Vector) -> Mat;
    /// Equilibrium part `u_o` of the corner state.
    fn corner_u(&self) -> Vector;
    /// Boundary matrix `B` of `B·U = b(t)`.
    fn boundary_matrix(&self) -> Mat;

    fn f_u(&self, u: &Vector, v: &Vector) -> Mat {
        fd_jacobian(|x| self.f(x, v), u)
    }
    fn f_v(&self, u: &Vector, v: &Vector) -> Mat {
        fd_jacobian(|x| self.f(u, x), v)
    }
    fn g_u(&self, u: &Vector, v: &Vector) -> Mat {
        fd_jacobian(|x| self.g(x, v), u)
    }
    fn g_v(&self, u: &Vector, v: &Vector) -> Mat {
        fd_jacobian(|x| self.g(u, x), v)
    }
    fn q_u(&self, u: &Vector, v: &Vector) -> Mat {
        fd_jacobian(|x| self.q(x, v), u)
    }
    fn q_v(&self, u: &Vector, v: &Vector) -> Mat {
        fd_jacobian(|x| self.q(u, x), v)
    }
    fn h_u(&self, u: &Vector) -> Mat {
        fd_jacobian(|x| self.h(x), u)
    }
}

/// Same model with every Jacobian replaced by finite differences.
pub struct FiniteDifferenceModel<'a, M: NonlinearModel>(pub &'a M);

impl<M: NonlinearModel> NonlinearModel for FiniteDifferenceModel<'_, M> {
    fn n(&self) -> usize {
        self.0.n()
    }
    fn r(&self) -> usize {
        self.0.r()
    }
    fn f(&self, u: &Vector, v: &Vector) -> Vector {
        self.0.f(u, v)
    }
    fn g(&self, u: &Vector, v: &Vector) -> Vector {
        self.0.g(u, v)
    }
    fn q(&self, u: &Vector, v: &Vector) -> Vector {
        self.0.q(u, v)
    }
    fn h(&self, u: &Vector) -> Vector {
        self.0.h(u)
    }
    fn a0(&self, u: &Vector, v: &Vector) -> Mat {
        self.0.a0(u, v)
    }
    fn corner_u(&self) -> Vector {
        self.0.corner_u()
    }
    fn boundary_matrix(&self) -> Mat {
        self.0.boundary_matrix()
    }
}

/// Nonlinear three-component demo.
///
/// `f = u + v₁`, `g = (u + 2v₁, 0)`, `q = (u² − v₁, −v₂)`, `h(u) = (u², 0)`.
/// The symmetrizer `A0(U) = Pᵀ·diag(1, 1/(1+2u−4u²), 1)·P` with
/// `P = [[1,0,0],[−2u,1,0],[0,0,1]]` makes the transformed off-diagonal block
/// vanish identically and reduces to the identity at `U0 = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct Nc3 {
    b: Mat,
}

impl Nc3 {
    pub fn new(b: Mat) -> Self {
        Self { b }
    }
}

impl NonlinearModel for Nc3 {
    fn n(&self) -> usize {
        3
    }
    fn r(&self) -> usize {
        2
    }
    fn f(&self, u: &Vector, v: &Vector) -> Vector {
        Vector::from_element(1, u[0] + v[0])
    }
    fn g(&self, u: &Vector, v: &Vector) -> Vector {
        Vector::from_vec(vec![u[0] + 2.0 * v[0], 0.0])
    }
    fn q(&self, u: &Vector, v: &Vector) -> Vector {
        Vector::from_vec(vec![u[0] * u[0] - v[0], -v[1]])
    }
    fn h(&self, u: &Vector) -> Vector {
        Vector::from_vec(vec![u[0] * u[0], 0.0])
    }
    fn a0(&self, u: &Vector, _v: &Vector) -> Mat {
        let x = u[0];
        let p = linalg::from_rows(&[&[1.0, 0.0, 0.0], &[-2.0 * x, 1.0, 0.0], &[0.0, 0.0, 1.0]]);
        let d = Mat::from_diagonal(&Vector::from_vec(vec![1.0, 1.0 / (1.0 + 2.0 * x - 4.0 * x * x), 1.0]));
        p.transpose() * d * p
    }
    fn corner_u(&self) -> Vector {
        Vector::zeros(1)
    }
    fn boundary_matrix(&self) -> Mat {
        self.b.clone()
    }

    fn f_u(&self, _u: &Vector, _v: &Vector) -> Mat {
        Mat::from_element(1, 1, 1.0)
    }
    fn f_v(&self, _u: &Vector, _v: &Vector) -> Mat {
        linalg::from_rows(&[&[1.0, 0.0]])
    }
    fn g_u(&self, _u: &Vector, _v: &Vector) -> Mat {
        linalg::from_rows(&[&[1.0], &[0.0]])
    }
    fn g_v(&self, _u: &Vector, _v: &Vector) -> Mat {
        linalg::from_rows(&[&[2.0, 0.0], &[0.0, 0.0]])
    }
    fn q_u(&self, u: &Vector, _v: &Vector) -> Mat {
        linalg::from_rows(&[&[2.0 * u[0]], &[0.0]])
    }
    fn q_v(&self, _u: &Vector, _v: &Vector) -> Mat {
        -Mat::identity(2, 2)
    }
    fn h_u(&self, u: &Vector) -> Mat {
        linalg::from_rows(&[&[2.0 * u[0]], &[0.0]])
    }
}

/// A linear normal-form system viewed as a nonlinear model:
/// `f = A01⁻¹(A11u + A12v)`, `g = A02⁻¹(A12ᵀu + A22v)`, `q = A02⁻¹Sv`, `h = 0`.
#[derive(Debug, Clone)]
pub struct LinearModel {
    sys: RelaxationSystem,
    b: Mat,
    a01_inv: Mat,
    a02_inv: Mat,
}

impl LinearModel {
    pub fn new(sys: RelaxationSystem, b: Mat) -> Result<Self> {
        let a01_inv = linalg::inverse(&sys.a01, "A01")?;
        let a02_inv = linalg::inverse(&sys.a02, "A02")?;
        Ok(Self { sys, b, a01_inv, a02_inv })
    }
}

impl NonlinearModel for LinearModel {
    fn n(&self) -> usize {
        self.sys.n()
    }
    fn r(&self) -> usize {
        self.sys.r()
    }
    fn f(&self, u: &Vector, v: &Vector) -> Vector {
        &self.a01_inv * (&self.sys.a11 * u + &self.sys.a12 * v)
    }
    fn g(&self, u: &Vector, v: &Vector) -> Vector {
        &self.a02_inv * (self.sys.a12.transpose() * u + &self.sys.a22 * v)
    }
    fn q(&self, _u: &Vector, v: &Vector) -> Vector {
        &self.a02_inv * &self.sys.s * v
    }
    fn h(&self, _u: &Vector) -> Vector {
        Vector::zeros(self.sys.r())
    }
    fn a0(&self, _u: &Vector, _v: &Vector) -> Mat {
        self.sys.a0()
    }
    fn corner_u(&self) -> Vector {
        Vector::zeros(self.sys.m())
    }
    fn boundary_matrix(&self) -> Mat {
        self.b.clone()
    }

    fn f_u(&self, _u: &Vector, _v: &Vector) -> Mat {
        &self.a01_inv * &self.sys.a11
    }
    fn f_v(&self, _u: &Vector, _v: &Vector) -> Mat {
        &self.a01_inv * &self.sys.a12
    }
    fn g_u(&self, _u: &Vector, _v: &Vector) -> Mat {
        &self.a02_inv * self.sys.a12.transpose()
    }
    fn g_v(&self, _u: &Vector, _v: &Vector) -> Mat {
        &self.a02_inv * &self.sys.a22
    }
    fn q_u(&self, _u: &Vector, _v: &Vector) -> Mat {
        Mat::zeros(self.sys.r(), self.sys.m())
    }
    fn q_v(&self, _u: &Vector, _v: &Vector) -> Mat {
        &self.a02_inv * &self.sys.s
    }
    fn h_u(&self, _u: &Vector) -> Mat {
        Mat::zeros(self.sys.r(), self.sys.m())
    }
}

/// Transformed blocks at a state `U`.
#[derive(Debug, Clone, PartialEq)]
pub struct StateBlocks {
    pub p: Mat,
    pub a0_tilde: Mat,
    pub a01: Mat,
    pub a012: Mat,
    pub a02: Mat,
    pub a1: Mat,
    pub a11: Mat,
    pub a12: Mat,
    pub a22: Mat,
}

impl StateBlocks {
    /// `A22 − A12ᵀA11⁻¹A12`.
    pub fn schur(&self) -> Result<Mat> {
        let k = linalg::solve(&self.a11, &self.a12, "A11", 1e14)?;
        Ok(linalg::symmetrize(&(&self.a22 - self.a12.transpose() * k)))
    }
}

fn flux_jacobian<M: NonlinearModel>(model: &M, u: &Vector, v: &Vector) -> Mat {
    let m = model.n() - model.r();
    let r = model.r();
    let mut fu = Mat::zeros(m + r, m + r);
    fu.view_mut((0, 0), (m, m)).copy_from(&model.f_u(u, v));
    fu.view_mut((0, m), (m, r)).copy_from(&model.f_v(u, v));
    fu.view_mut((m, 0), (r, m)).copy_from(&model.g_u(u, v));
    fu.view_mut((m, m), (r, r)).copy_from(&model.g_v(u, v));
    fu
}

/// `P(U) = [[I,0],[q_v⁻¹q_u, I]]`, `Ã0 = P⁻ᵀA0P⁻¹`, `A1 = P⁻ᵀA0F_UP⁻¹`.
pub fn build_p_and_blocks<M: NonlinearModel>(model: &M, u: &Vector, v: &Vector) -> Result<StateBlocks> {
    let m = model.n() - model.r();
    let r = model.r();
    let coupling =
        linalg::solve(&model.q_v(u, v), &model.q_u(u, v), "q_v", 1e14).map_err(|e| Error::InvalidInput(format!("rejected state: {e}")))?;
    let mut p = Mat::identity(m + r, m + r);
    p.view_mut((m, 0), (r, m)).copy_from(&coupling);
    let mut p_inv = Mat::identity(m + r, m + r);
    p_inv.view_mut((m, 0), (r, m)).copy_from(&(-&coupling));
    let a0 = model.a0(u, v);
    let a0_tilde = p_inv.transpose() * &a0 * &p_inv;
    let a1 = p_inv.transpose() * &a0 * flux_jacobian(model, u, v) * &p_inv;
    Ok(StateBlocks {
        a01: a0_tilde.view((0, 0), (m, m)).into_owned(),
        a012: a0_tilde.view((0, m), (m, r)).into_owned(),
        a02: a0_tilde.view((m, m), (r, r)).into_owned(),
        a11: a1.view((0, 0), (m, m)).into_owned(),
        a12: a1.view((0, m), (m, r)).into_owned(),
        a22: a1.view((m, m), (r, r)).into_owned(),
        p,
        a0_tilde,
        a1,
    })
}

/// Normal-form linearization at the corner state and the transformed boundary
/// matrix `B·P⁻¹(U0) = (Bu + Bv·h_u, Bv)`.
pub fn linearize_corner<M: NonlinearModel>(model: &M, signal: BoundarySignal) -> Result<(RelaxationSystem, BoundaryData)> {
    let m = model.n() - model.r();
    let u0 = model.corner_u();
    let v0 = model.h(&u0);
    let q_res = model.q(&u0, &v0).norm();
    if q_res > 1e-10 {
        return Err(Error::AssumptionViolated(format!("corner state is not in equilibrium (|q| = {q_res:.3e})")));
    }
    let reduced_flux = model.f_u(&u0, &v0) + model.f_v(&u0, &v0) * model.h_u(&u0);
    if linalg::condition_number(&reduced_flux) > 1e12 {
        return Err(Error::AssumptionViolated("f_u + f_v*h_u is singular at the corner state".into()));
    }
    let blocks = build_p_and_blocks(model, &u0, &v0)?;
    if blocks.a012.norm() > 1e-9 {
        return Err(Error::AssumptionViolated(format!("off-diagonal symmetrizer block is {:.3e} at equilibrium", blocks.a012.norm())));
    }
    let s = &blocks.a02 * model.q_v(&u0, &v0);
    if linalg::asymmetry(&s) > 1e-9 * (1.0 + s.norm()) || linalg::max_eigenvalue(&linalg::symmetrize(&s)) >= 0.0 {
        return Err(Error::AssumptionViolated("A02*q_v is not symmetric negative definite at the corner state".into()));
    }
    let sys = RelaxationSystem::new(
        model.n(),
        model.r(),
        linalg::symmetrize(&blocks.a01),
        linalg::symmetrize(&blocks.a02),
        linalg::symmetrize(&blocks.a11),
        blocks.a12.clone(),
        linalg::symmetrize(&blocks.a22),
        linalg::symmetrize(&s),
    )?;
    let b = model.boundary_matrix();
    let mut b_lin = b.clone();
    let bu_new = b.columns(0, m) + b.columns(m, model.r()) * model.h_u(&u0);
    b_lin.columns_mut(0, m).copy_from(&bu_new);
    let bd = BoundaryData::new(&sys, b_lin, signal)?;
    Ok((sys, bd))
}

/// Iteration record of a Newton solve.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct NewtonStats {
    pub iterations: usize,
    /// Residual norm before each step, ending with the accepted residual.
    pub residuals: Vec<f64>,
}

const MAX_NEWTON: usize = 50;

/// Newton iteration stopping at `strict`, or at `accept` once progress stalls.
fn newton(
    mut x: Vector,
    residual: impl Fn(&Vector) -> Result<Vector>,
    jacobian: impl Fn(&Vector) -> Result<Mat>,
    strict: f64,
    accept: f64,
    what: &str,
) -> Result<(Vector, NewtonStats)> {
    let mut stats = NewtonStats::default();
    loop {
        let r = residual(&x)?;
        let norm = r.norm();
        if !norm.is_finite() {
            return Err(Error::OutsideNeighborhood(format!("{what}: residual is not finite")));
        }
        let stalled = stats.residuals.last().is_some_and(|&prev| norm >= 0.5 * prev);
        stats.residuals.push(norm);
        if norm <= strict || (stalled && norm <= accept) {
            return Ok((x, stats));
        }
        if stats.iterations == MAX_NEWTON {
            return Err(Error::OutsideNeighborhood(format!("{what}: no convergence in {MAX_NEWTON} Newton steps (residual {norm:.3e})")));
        }
        let j = jacobian(&x)?;
        let dx = linalg::solve(&j, &Mat::from_column_slice(r.len(), 1, r.as_slice()), what, 1e12)
            .map_err(|e| Error::OutsideNeighborhood(format!("{what}: {e}")))?;
        x -= dx.column(0);
        stats.iterations += 1;
    }
}

/// 8-node Gauss–Legendre rule on `[-1, 1]`.
const GAUSS_LEGENDRE_8: [(f64, f64); 8] = [
    (-0.960_289_856_497_536_3, 0.101_228_536_290_376_26),
    (-0.796_666_477_413_626_7, 0.222_381_034_453_374_47),
    (-0.525_532_409_916_329, 0.313_706_645_877_887_3),
    (-0.183_434_642_495_649_8, 0.362_683_783_378_362),
    (0.183_434_642_495_649_8, 0.362_683_783_378_362),
    (0.525_532_409_916_329, 0.313_706_645_877_887_3),
    (0.796_666_477_413_626_7, 0.222_381_034_453_374_47),
    (0.960_289_856_497_536_3, 0.101_228_536_290_376_26),
];

/// Layer state reconstructed from `(w₂, ũ∞)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerState {
    pub w0: Vector,
    pub nu: Vector,
    pub mu: Vector,
}

/// One solution sample of the corner system.
#[derive(Debug, Clone, PartialEq)]
pub struct CornerSample {
    pub alpha: Vector,
    pub w2: Vector,
    pub residual: f64,
    pub stats: NewtonStats,
}

/// Sampled layer trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerTrajectory {
    pub ys: Vec<f64>,
    pub w2: Vec<Vector>,
    pub mu: Vec<Vector>,
    pub nu: Vec<Vector>,
    pub terminal_norm: f64,
    /// Set when `‖w₂‖` exceeded `10·‖w₂(0)‖`; integration stops there.
    pub manifold_escape: bool,
}

/// Corner data of a nonlinear model: its linearization and the derived
/// reduced boundary, plus the implicit-function machinery of the layer.
pub struct NonlinearLayer<'a, M: NonlinearModel> {
    model: &'a M,
    pub linear: RelaxationSystem,
    pub boundary: BoundaryData,
    pub structure: CharacteristicStructure,
    pub congruence: CongruenceData,
    pub reduced: ReducedBoundary,
    /// Neighborhood radius for `‖ν‖`, `‖w₂‖` and `‖ũ∞ − u_o‖`.
    pub radius: f64,
    u_o: Vector,
    /// `(f_u + f_v·h_u)⁻¹·f_v` at the corner.
    nu_to_mu: Mat,
}

impl<'a, M: NonlinearModel> NonlinearLayer<'a, M> {
    /// Linearizes at the corner and derives the reduced boundary.
    pub fn new(model: &'a M, signal: BoundarySignal) -> Result<Self> {
        let (linear, boundary) = linearize_corner(model, signal)?;
        let cert = validate_system(&linear, DEFAULT_TOL);
        if !cert.overall {
            return Err(Error::AssumptionViolated(format!("corner linearization fails {:?}", cert.failing())));
        }
        let structure = classify(&linear, DEFAULT_TOL)?;
        let congruence = congruence(&linear, &structure, DEFAULT_TOL)?;
        let reduced = reduce(&linear, &structure, &congruence, &boundary)?;
        let u_o = model.corner_u();
        let v_o = model.h(&u_o);
        let reduced_flux = model.f_u(&u_o, &v_o) + model.f_v(&u_o, &v_o) * model.h_u(&u_o);
        let nu_to_mu = linalg::solve(&reduced_flux, &model.f_v(&u_o, &v_o), "f_u + f_v*h_u", 1e12)?;
        Ok(Self { model, linear, boundary, structure, congruence, reduced, radius: 0.25, u_o, nu_to_mu })
    }

    pub fn with_radius(mut self, radius: f64) -> Self {
        self.radius = radius;
        self
    }

    pub fn model(&self) -> &M {
        self.model
    }

    fn check_near(&self, what: &str, value: f64) -> Result<()> {
        if value > self.radius {
            Err(Error::OutsideNeighborhood(format!("{what} = {value:.3e} exceeds radius {}", self.radius)))
        } else {
            Ok(())
        }
    }

    fn phi1(&self, mu: &Vector, nu: &Vector, u_inf: &Vector) -> Vector {
        let u = mu + u_inf;
        let v = nu + self.model.h(&u);
        self.model.f(&u, &v) - self.model.f(u_inf, &self.model.h(u_inf))
    }

    /// `μ = ψ₁(ν, ũ∞)` solving `f(μ+ũ∞, ν+h(μ+ũ∞)) = f(ũ∞, h(ũ∞))`.
    pub fn psi1(&self, nu: &Vector, u_inf: &Vector) -> Result<Vector> {
        Ok(self.psi1_with_stats(nu, u_inf)?.0)
    }

    pub fn psi1_with_stats(&self, nu: &Vector, u_inf: &Vector) -> Result<(Vector, NewtonStats)> {
        self.check_near("|nu|", nu.norm())?;
        self.check_near("|u_inf - u_o|", (u_inf - &self.u_o).norm())?;
        let start = -(&self.nu_to_mu * nu);
        newton(
            start,
            |mu| Ok(self.phi1(mu, nu, u_inf)),
            |mu| {
                let u = mu + u_inf;
                let v = nu + self.model.h(&u);
                Ok(self.model.f_u(&u, &v) + self.model.f_v(&u, &v) * self.model.h_u(&u))
            },
            1e-14,
            1e-12,
            "psi1",
        )
    }

    /// `Ŝ = ∫₀¹ q_v(μ+ũ∞, θν + h(μ+ũ∞)) dθ`.
    fn s_hat(&self, mu: &Vector, nu: &Vector, u_inf: &Vector) -> Mat {
        let u = mu + u_inf;
        let hv = self.model.h(&u);
        let r = self.model.r();
        let mut acc = Mat::zeros(r, r);
        for (x, w) in GAUSS_LEGENDRE_8 {
            let theta = 0.5 * (x + 1.0);
            acc += self.model.q_v(&u, &(nu * theta + &hv)) * (0.5 * w);
        }
        acc
    }

    /// Pieces of the layer equation at `U_ν`: `P0(U_ν)`, `Z(U_ν)` and the
    /// source operator `A02Ŝ − A12ᵀA11⁻¹A012Ŝ`.
    fn layer_operators(&self, mu: &Vector, nu: &Vector, u_inf: &Vector) -> Result<(Mat, Mat, Mat)> {
        let u = mu + u_inf;
        let v = nu + self.model.h(&u);
        let blocks = build_p_and_blocks(self.model, &u, &v)?;
        let z = blocks.schur()?;
        let s_hat = self.s_hat(mu, nu, u_inf);
        let k = linalg::solve(&blocks.a11, &blocks.a12, "A11", 1e14)?;
        let source = &blocks.a02 * &s_hat - k.transpose() * &blocks.a012 * &s_hat;

        let p0_bar = &self.congruence.p0;
        let n0 = p0_bar.ncols();
        let p0 = if n0 == 0 {
            p0_bar.clone()
        } else {
            // smooth continuation of P̄0 into the kernel of Z(U_ν)
            let (eigs, vecs) = linalg::sym_eigen_desc(&z);
            let mut order: Vec<usize> = (0..eigs.len()).collect();
            order.sort_by(|&i, &j| eigs[i].abs().total_cmp(&eigs[j].abs()));
            let mut kernel = Mat::zeros(z.nrows(), n0);
            for (c, &i) in order.iter().take(n0).enumerate() {
                kernel.set_column(c, &vecs.column(i));
            }
            let projected = &kernel * (kernel.transpose() * p0_bar);
            let gram = projected.transpose() * &projected;
            let (_, gram_inv_sqrt) = linalg::spd_sqrt(&gram, "P0 Gram matrix")
                .map_err(|_| Error::OutsideNeighborhood("kernel of the flux Schur complement rotated away".into()))?;
            projected * gram_inv_sqrt
        };
        Ok((p0, z, source))
    }

    fn phi2(&self, w2: &Vector, w0: &Vector, u_inf: &Vector) -> Result<Vector> {
        let nu = &self.congruence.p2 * w2 + &self.congruence.p0 * w0;
        let mu = self.psi1(&nu, u_inf)?;
        let (p0, _, source) = self.layer_operators(&mu, &nu, u_inf)?;
        Ok(p0.transpose() * source * nu)
    }

    /// `w₀ = ψ₂(w₂, ũ∞)` solving the degenerate-direction constraint.
    pub fn psi2(&self, w2: &Vector, u_inf: &Vector) -> Result<Vector> {
        Ok(self.psi2_with_stats(w2, u_inf)?.0)
    }

    pub fn psi2_with_stats(&self, w2: &Vector, u_inf: &Vector) -> Result<(Vector, NewtonStats)> {
        self.check_near("|w2|", w2.norm())?;
        let n0 = self.congruence.n_zero();
        if n0 == 0 {
            return Ok((Vector::zeros(0), NewtonStats { iterations: 0, residuals: vec![0.0] }));
        }
        let start = &self.reduced.layer.w0_map * w2;
        newton(
            start,
            |w0| self.phi2(w2, w0, u_inf),
            |w0| {
                let f = |x: &Vector| self.phi2(w2, x, u_inf).unwrap_or_else(|_| Vector::from_element(n0, f64::NAN));
                let j = fd_jacobian(f, w0);
                if j.iter().any(|x| !x.is_finite()) {
                    return Err(Error::OutsideNeighborhood("psi2 Jacobian evaluation failed".into()));
                }
                Ok(j)
            },
            1e-14,
            1e-12,
            "psi2",
        )
    }

    /// `(w₀, ν, μ)` of the layer at `(w₂, ũ∞)`.
    pub fn layer_state(&self, w2: &Vector, u_inf: &Vector) -> Result<LayerState> {
        let w0 = self.psi2(w2, u_inf)?;
        let nu = &self.congruence.p2 * w2 + &self.congruence.p0 * &w0;
        let mu = self.psi1(&nu, u_inf)?;
        Ok(LayerState { w0, nu, mu })
    }

    /// `H(w₂, ũ∞) = K⁻¹·P̄2ᵀ(A02Ŝ − A12ᵀA11⁻¹A012Ŝ)·ν`.
    pub fn vector_field_h(&self, w2: &Vector, u_inf: &Vector) -> Result<Vector> {
        let state = self.layer_state(w2, u_inf)?;
        let (_, z, source) = self.layer_operators(&state.mu, &state.nu, u_inf)?;
        let p2 = &self.congruence.p2;
        let dpsi2 = if self.congruence.n_zero() == 0 {
            Mat::zeros(0, w2.len())
        } else {
            let f = |x: &Vector| self.psi2(x, u_inf).unwrap_or_else(|_| Vector::from_element(self.congruence.n_zero(), f64::NAN));
            fd_jacobian(f, w2)
        };
        if dpsi2.iter().any(|x| !x.is_finite()) {
            return Err(Error::OutsideNeighborhood("derivative of psi2 failed".into()));
        }
        let k = p2.transpose() * &z * (p2 + &self.congruence.p0 * dpsi2);
        let rhs = p2.transpose() * source * &state.nu;
        let out = linalg::solve(&k, &Mat::from_column_slice(rhs.len(), 1, rhs.as_slice()), "K", 1e12)
            .map_err(|e| Error::OutsideNeighborhood(format!("K is not invertible: {e}")))?;
        Ok(out.column(0).into_owned())
    }

    /// Central-difference Jacobian `∂H/∂w₂` with step `h`.
    pub fn h_jacobian(&self, w2: &Vector, u_inf: &Vector, h: f64) -> Result<Mat> {
        let k = w2.len();
        let mut jac = Mat::zeros(k, k);
        for j in 0..k {
            let mut p = w2.clone();
            let mut m = w2.clone();
            p[j] += h;
            m[j] -= h;
            let col = (self.vector_field_h(&p, u_inf)? - self.vector_field_h(&m, u_inf)?) / (2.0 * h);
            jac.set_column(j, &col);
        }
        Ok(jac)
    }

    /// Left-unstable rows of `∂H/∂w₂(0, ũ∞)`, continued smoothly from the
    /// corner value by projecting away the current right-stable subspace.
    pub fn l2u_at(&self, u_inf: &Vector) -> Result<Mat> {
        let l_ref = &self.reduced.spectra.l2u;
        if l_ref.nrows() == 0 {
            return Ok(l_ref.clone());
        }
        let jac = self.h_jacobian(&Vector::zeros(l_ref.ncols()), u_inf, 1e-5)?;
        let schur = linalg::ordered_schur(&linalg::to_complex(&jac), |z| z.re < 0.0);
        let stable = linalg::real_basis(&schur.leading(schur.selected));
        let projector = Mat::identity(jac.nrows(), jac.nrows()) - &stable * stable.transpose();
        Ok(l_ref * projector)
    }

    fn decompose_corner(&self) -> Result<(Vector, Vector)> {
        let sp = &self.reduced.spectra;
        let basis = {
            let mut b = Mat::zeros(self.u_o.len(), sp.r1u.ncols() + sp.r1s.ncols());
            b.columns_mut(0, sp.r1u.ncols()).copy_from(&sp.r1u);
            b.columns_mut(sp.r1u.ncols(), sp.r1s.ncols()).copy_from(&sp.r1s);
            b
        };
        let c = linalg::solve(&basis, &Mat::from_column_slice(self.u_o.len(), 1, self.u_o.as_slice()), "(R1U, R1S)", 1e14)?;
        let n1p = sp.r1u.ncols();
        Ok((c.rows(0, n1p).column(0).into_owned(), c.rows(n1p, c.nrows() - n1p).column(0).into_owned()))
    }

    fn split(&self, x: &Vector) -> (Vector, Vector) {
        let n1p = self.reduced.spectra.r1u.ncols();
        (x.rows(0, n1p).into_owned(), x.rows(n1p, x.len() - n1p).into_owned())
    }

    /// Residual `(Ψ, S̃)` of the corner system at `(α, w₂)`.
    pub fn corner_residual(&self, beta: &Vector, x: &Vector, t: f64) -> Result<Vector> {
        let (alpha, w2) = self.split(x);
        let sp = &self.reduced.spectra;
        let u_inf = &sp.r1u * &alpha + &sp.r1s * beta;
        let state = self.layer_state(&w2, &u_inf)?;
        let u = &state.mu + &u_inf;
        let v = &state.nu + self.model.h(&u);
        let mut full = Vector::zeros(u.len() + v.len());
        full.rows_mut(0, u.len()).copy_from(&u);
        full.rows_mut(u.len(), v.len()).copy_from(&v);
        let psi = self.model.boundary_matrix() * full - self.boundary.eval(t);
        let s_tilde = self.l2u_at(&u_inf)? * &w2;
        let mut out = Vector::zeros(psi.len() + s_tilde.len());
        out.rows_mut(0, psi.len()).copy_from(&psi);
        out.rows_mut(psi.len(), s_tilde.len()).copy_from(&s_tilde);
        Ok(out)
    }

    /// Central-difference `∂(Ψ, S̃)/∂(α, w₂)`.
    pub fn corner_jacobian(&self, beta: &Vector, x: &Vector, t: f64) -> Result<Mat> {
        let h = 1e-6 * (1.0 + x.norm());
        let n = x.len();
        let mut jac = Mat::zeros(n, n);
        for j in 0..n {
            let mut p = x.clone();
            let mut m = x.clone();
            p[j] += h;
            m[j] -= h;
            let col = (self.corner_residual(beta, &p, t)? - self.corner_residual(beta, &m, t)?) / (2.0 * h);
            jac.set_column(j, &col);
        }
        Ok(jac)
    }

    /// Newton solve of the corner system for `(α̃(β,t), w̃₂(β,t))`, started
    /// from the linear corner solution.
    pub fn corner_newton(&self, beta: &Vector, t: f64) -> Result<CornerSample> {
        let (alpha_o, beta_o) = self.decompose_corner()?;
        if beta.len() != beta_o.len() {
            return Err(Error::Dimension(format!("beta has {} entries, expected {}", beta.len(), beta_o.len())));
        }
        let m = self.u_o.len();
        let mut u0_full = Vector::zeros(self.model.n());
        u0_full.rows_mut(0, m).copy_from(&self.u_o);
        u0_full.rows_mut(m, self.model.r()).copy_from(&self.model.h(&self.u_o));
        let offset = self.model.boundary_matrix() * u0_full;
        let shifted = BoundaryData::new(
            &self.linear,
            self.boundary.b.clone(),
            BoundarySignal::Constant { coeffs: (self.boundary.eval(t) - offset).iter().copied().collect() },
        )?;
        let (d_alpha, w2_lin) = solve_corner(&self.reduced, &shifted, &(beta - &beta_o), 0.0)?;
        let mut start = Vector::zeros(d_alpha.len() + w2_lin.len());
        let n1p = d_alpha.len();
        start.rows_mut(0, n1p).copy_from(&(alpha_o + d_alpha));
        start.rows_mut(n1p, w2_lin.len()).copy_from(&w2_lin);

        let corner_condition = self.reduced.corner_condition;
        let (x, stats) = newton(
            start,
            |x| self.corner_residual(beta, x, t),
            |x| {
                let j = self.corner_jacobian(beta, x, t)?;
                if linalg::condition_number(&j) > CORNER_MAX_CONDITION {
                    return Err(if corner_condition > CORNER_MAX_CONDITION {
                        Error::GkcViolated("corner Jacobian is singular at the corner state".into())
                    } else {
                        Error::OutsideNeighborhood("corner Jacobian became singular away from the corner".into())
                    });
                }
                Ok(j)
            },
            1e-13,
            1e-10,
            "corner system",
        )?;
        let (alpha, w2) = self.split(&x);
        let residual = *stats.residuals.last().unwrap_or(&0.0);
        Ok(CornerSample { alpha, w2, residual, stats })
    }

    /// Adaptive Dormand–Prince integration of `w₂' = H(w₂, ũ∞)` on `[0, y_max]`.
    pub fn integrate_layer(&self, u_inf: &Vector, w2_0: &Vector, y_max: f64, rtol: f64) -> Result<LayerTrajectory> {
        if !(y_max >= 0.0) || !(rtol > 0.0) {
            return Err(Error::InvalidInput("integrate_layer needs y_max >= 0 and rtol > 0".into()));
        }
        let mut traj = LayerTrajectory { ys: vec![], w2: vec![], mu: vec![], nu: vec![], terminal_norm: 0.0, manifold_escape: false };
        let push = |traj: &mut LayerTrajectory, y: f64, w: &Vector| -> Result<()> {
            let st = self.layer_state(w, u_inf)?;
            traj.ys.push(y);
            traj.w2.push(w.clone());
            traj.mu.push(st.mu);
            traj.nu.push(st.nu);
            Ok(())
        };
        let mut y = 0.0;
        let mut w = w2_0.clone();
        push(&mut traj, y, &w)?;
        let scale0 = w2_0.norm();
        let atol = rtol * scale0.max(f64::MIN_POSITIVE) * 1e-3;
        let field = |w: &Vector| self.vector_field_h(w, u_inf);
        let mut h = (0.01f64).min(y_max);
        let mut k1 = field(&w)?;
        while y < y_max && scale0 > 0.0 {
            h = h.min(y_max - y);
            let (w_new, k7, err) = dopri_step(&field, &w, &k1, h, rtol, atol)?;
            if err <= 1.0 {
                y += h;
                w = w_new;
                k1 = k7;
                push(&mut traj, y, &w)?;
                if w.norm() > 10.0 * scale0 {
                    traj.manifold_escape = true;
                    break;
                }
            }
            let factor = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
            h *= factor;
            if h < 1e-12 * (1.0 + y) {
                return Err(Error::Internal("layer integration step size underflow".into()));
            }
        }
        if scale0 == 0.0 && y_max > 0.0 {
            push(&mut traj, y_max, &w)?;
        }
        traj.terminal_norm = w.norm();
        Ok(traj)
    }
}

/// One Dormand–Prince 5(4) step; returns the 5th-order solution, the FSAL
/// stage and the scaled error norm.
fn dopri_step(
    field: &impl Fn(&Vector) -> Result<Vector>,
    y: &Vector,
    k1: &Vector,
    h: f64,
    rtol: f64,
    atol: f64,
) -> Result<(Vector, Vector, f64)> {
    let k2 = field(&(y + k1 * (h / 5.0)))?;
    let k3 = field(&(y + (k1 * (3.0 / 40.0) + &k2 * (9.0 / 40.0)) * h))?;
    let k4 = field(&(y + (k1 * (44.0 / 45.0) - &k2 * (56.0 / 15.0) + &k3 * (32.0 / 9.0)) * h))?;
    let k5 = field(&(y + (k1 * (19372.0 / 6561.0) - &k2 * (25360.0 / 2187.0) + &k3 * (64448.0 / 6561.0) - &k4 * (212.0 / 729.0)) * h))?;
    let k6 = field(
        &(y + (k1 * (9017.0 / 3168.0) - &k2 * (355.0 / 33.0) + &k3 * (46732.0 / 5247.0) + &k4 * (49.0 / 176.0) - &k5 * (5103.0 / 18656.0))
            * h),
    )?;
    let y5 = y + (k1 * (35.0 / 384.0) + &k3 * (500.0 / 1113.0) + &k4 * (125.0 / 192.0) - &k5 * (2187.0 / 6784.0) + &k6 * (11.0 / 84.0)) * h;
    let k7 = field(&y5)?;
    let err_vec = (k1 * (71.0 / 57600.0) - &k3 * (71.0 / 16695.0) + &k4 * (71.0 / 1920.0) - &k5 * (17253.0 / 339200.0)
        + &k6 * (22.0 / 525.0)
        - &k7 * (1.0 / 40.0))
        * h;
    let mut err: f64 = 0.0;
    for i in 0..y.len() {
        let sc = atol + rtol * y[i].abs().max(y5[i].abs());
        err = err.max(err_vec[i].abs() / sc);
    }
    Ok((y5, k7, err))
}
