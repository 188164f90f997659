//! Half-line solvers for the stiff relaxation problem and its equilibrium
//! limit, the layer-corrected approximate solution and the ε-error sweep.
//!
//! Both solvers use first-order upwind finite volumes in characteristic
//! variables. The relaxation solver treats the source with its exact
//! propagator (Lie splitting), so stiffness never restricts the time step.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::layer::{layer_profile, solve_corner};
use crate::linalg::{self, Mat, Vector};
use crate::reduced::ReducedBoundary;
use crate::system::{BoundaryData, RelaxationSystem};

/// Cell-centred grid on `[0, x_max]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct HalfLineGrid {
    pub x_max: f64,
    pub widths: Vec<f64>,
    pub centers: Vec<f64>,
}

impl HalfLineGrid {
    /// `J` equal cells.
    pub fn uniform(x_max: f64, cells: usize) -> Result<Self> {
        if !(x_max > 0.0) || cells < 16 {
            return Err(Error::InvalidInput(format!("uniform grid needs x_max > 0 and J >= 16 (got {x_max}, {cells})")));
        }
        Self::from_widths(vec![x_max / cells as f64; cells])
    }

    /// Cells of width `dx_min` on `[0, layer_width]`, then growing by `growth`
    /// per cell up to `dx_max`.
    pub fn graded(x_max: f64, dx_min: f64, layer_width: f64, growth: f64, dx_max: f64) -> Result<Self> {
        if !(x_max > 0.0 && dx_min > 0.0 && dx_max >= dx_min && growth >= 1.0 && layer_width >= 0.0) {
            return Err(Error::InvalidInput("graded grid needs 0 < dx_min <= dx_max, growth >= 1, x_max > 0".into()));
        }
        let mut widths = Vec::new();
        let mut x = 0.0;
        let mut dx = dx_min;
        while x < x_max {
            if x >= layer_width {
                dx = (dx * growth).min(dx_max);
            }
            let w = dx.min(x_max - x);
            if w < 1e-3 * dx {
                // absorb a sliver into the previous cell
                if let Some(last) = widths.last_mut() {
                    *last += w;
                }
                break;
            }
            widths.push(w);
            x += w;
        }
        if widths.len() < 16 {
            return Err(Error::InvalidInput(format!("graded grid has only {} cells", widths.len())));
        }
        Self::from_widths(widths)
    }

    fn from_widths(widths: Vec<f64>) -> Result<Self> {
        let mut centers = Vec::with_capacity(widths.len());
        let mut x = 0.0;
        for w in &widths {
            centers.push(x + 0.5 * w);
            x += w;
        }
        Ok(Self { x_max: x, widths, centers })
    }

    pub fn cells(&self) -> usize {
        self.widths.len()
    }

    pub fn dx_min(&self) -> f64 {
        self.widths.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// `sqrt(Σ dx_j |u_j|²)` for a flat state with `components` per cell.
    pub fn l2_norm(&self, flat: &[f64], components: usize) -> f64 {
        self.widths
            .iter()
            .enumerate()
            .map(|(j, w)| w * flat[j * components..(j + 1) * components].iter().map(|x| x * x).sum::<f64>())
            .sum::<f64>()
            .sqrt()
    }

    /// `Σ dx_j |u_j|`.
    pub fn l1_norm(&self, flat: &[f64], components: usize) -> f64 {
        self.widths
            .iter()
            .enumerate()
            .map(|(j, w)| w * flat[j * components..(j + 1) * components].iter().map(|x| x.abs()).sum::<f64>())
            .sum()
    }
}

/// Sampled solution: `states[k]` holds `components` values per cell at
/// `times[k]`, `traces[k]` the boundary state imposed at that time.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSolution {
    pub grid: HalfLineGrid,
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub traces: Vec<Vector>,
    pub components: usize,
    /// `None` for equilibrium solutions.
    pub epsilon: Option<f64>,
}

impl GridSolution {
    pub fn cell(&self, k: usize, j: usize) -> Vector {
        let c = self.components;
        Vector::from_column_slice(&self.states[k][j * c..(j + 1) * c])
    }

    /// CSV with columns `x, U_1..` at sample `k`.
    pub fn to_csv(&self, k: usize) -> String {
        let mut out = String::from("x");
        for i in 1..=self.components {
            out.push_str(&format!(",U_{i}"));
        }
        out.push('\n');
        for (j, x) in self.grid.centers.iter().enumerate() {
            out.push_str(&format!("{x:.16e}"));
            for v in self.cell(k, j).iter() {
                out.push_str(&format!(",{v:.16e}"));
            }
            out.push('\n');
        }
        out
    }
}

/// Time-stepping knobs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct SolverOptions {
    pub cfl: f64,
    pub sample_every: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self { cfl: 0.9, sample_every: 0.05 }
    }
}

/// Upwind transport in characteristic variables `c = T·U` with a linear
/// boundary closure `G·U(0) = data(t)` on the incoming components.
struct CharacteristicScheme {
    n: usize,
    to_char: Mat,
    from_char: Mat,
    speeds: Vec<f64>,
    incoming: Vec<usize>,
    /// `(G·T⁻¹)` restricted to incoming columns, inverted.
    closure_inv: Mat,
    /// `G·T⁻¹`.
    closure: Mat,
    /// Exact source propagator on the trailing block, if any.
    source: Option<(usize, Mat)>,
}

impl CharacteristicScheme {
    /// `a0·U_t + a1·U_x = …` with boundary rows `g`.
    fn new(a0: &Mat, a1: &Mat, g: &Mat, what: &str) -> Result<Self> {
        let n = a0.nrows();
        let (sq, isq) = linalg::spd_sqrt(a0, "symmetrizer")?;
        let sym = linalg::symmetrize(&(&isq * a1 * &isq));
        let (speeds, vecs) = linalg::sym_eigen_desc(&sym);
        let radius = speeds.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let cut = 1e-9 * radius.max(f64::MIN_POSITIVE);
        let speeds: Vec<f64> = speeds.into_iter().map(|s| if s.abs() <= cut { 0.0 } else { s }).collect();
        let l = vecs.transpose();
        let to_char = &l * &sq;
        let from_char = &isq * l.transpose();
        let incoming: Vec<usize> = (0..n).filter(|&k| speeds[k] > 0.0).collect();
        if g.nrows() != incoming.len() {
            return Err(Error::InvalidInput(format!(
                "{what}: {} boundary rows for {} incoming characteristics",
                g.nrows(),
                incoming.len()
            )));
        }
        let closure = g * &from_char;
        let mut sub = Mat::zeros(incoming.len(), incoming.len());
        for (c, &k) in incoming.iter().enumerate() {
            sub.set_column(c, &closure.column(k));
        }
        let closure_inv = if incoming.is_empty() {
            sub
        } else {
            linalg::inverse(&sub, what).map_err(|e| Error::GkcViolated(format!("{what}: boundary closure is singular ({e})")))?
        };
        Ok(Self { n, to_char, from_char, speeds, incoming, closure_inv, closure, source: None })
    }

    fn max_speed(&self) -> f64 {
        self.speeds.iter().fold(0.0f64, |a, v| a.max(v.abs()))
    }

    /// Ghost characteristic state at `x = 0` from interior cell values `c0`.
    fn ghost(&self, c0: &[f64], data: &Vector) -> Vec<f64> {
        let mut ghost = c0.to_vec();
        if self.incoming.is_empty() {
            return ghost;
        }
        for &k in &self.incoming {
            ghost[k] = 0.0;
        }
        let mut rhs = data.clone();
        for i in 0..rhs.len() {
            for k in 0..self.n {
                rhs[i] -= self.closure[(i, k)] * ghost[k];
            }
        }
        let plus = &self.closure_inv * rhs;
        for (c, &k) in self.incoming.iter().enumerate() {
            ghost[k] = plus[c];
        }
        ghost
    }

    fn to_state(&self, c: &[f64]) -> Vector {
        &self.from_char * Vector::from_column_slice(c)
    }

    /// Runs on `grid` from `initial` and records samples.
    fn run(
        &self,
        grid: &HalfLineGrid,
        initial: Vec<f64>,
        data: impl Fn(f64) -> Vector,
        t_final: f64,
        opts: SolverOptions,
        epsilon: Option<f64>,
    ) -> Result<GridSolution> {
        if !(opts.cfl > 0.0 && opts.cfl <= 1.0) || !(opts.sample_every > 0.0) || !(t_final >= 0.0) {
            return Err(Error::InvalidInput("need 0 < cfl <= 1, sample_every > 0, T >= 0".into()));
        }
        let n = self.n;
        let cells = grid.cells();
        let speed = self.max_speed();
        let dt_max = if speed > 0.0 { opts.cfl * grid.dx_min() / speed } else { opts.sample_every };
        let mut u = initial;
        let mut c = vec![0.0; n * cells];
        let mut flux = vec![0.0; n * (cells + 1)];
        let mut sol = GridSolution { grid: grid.clone(), times: vec![], states: vec![], traces: vec![], components: n, epsilon };

        let record = |sol: &mut GridSolution, t: f64, u: &[f64], c_buf: &mut [f64]| -> Result<()> {
            if u.iter().any(|x| !x.is_finite() || x.abs() > 1e100) {
                return Err(Error::BlowUp { time: t });
            }
            self.characteristics(u, c_buf);
            let ghost = self.ghost(&c_buf[..n], &data(t));
            sol.times.push(t);
            sol.states.push(u.to_vec());
            sol.traces.push(self.to_state(&ghost));
            Ok(())
        };
        record(&mut sol, 0.0, &u, &mut c)?;

        let samples = (t_final / opts.sample_every - 1e-9).ceil().max(0.0) as usize;
        let mut t = 0.0;
        for s in 1..=samples {
            let t_next = (s as f64 * opts.sample_every).min(t_final);
            let steps = ((t_next - t) / dt_max).ceil().max(1.0) as usize;
            let dt = (t_next - t) / steps as f64;
            let propagator = self.source.as_ref().map(|(offset, gen)| (*offset, exp_sym_generator(gen, dt)));
            for _ in 0..steps {
                self.characteristics(&u, &mut c);
                let ghost = self.ghost(&c[..n], &data(t));
                for f in 0..=cells {
                    for k in 0..n {
                        let lam = self.speeds[k];
                        flux[f * n + k] = if lam > 0.0 {
                            lam * if f == 0 { ghost[k] } else { c[(f - 1) * n + k] }
                        } else if lam < 0.0 {
                            lam * c[f.min(cells - 1) * n + k]
                        } else {
                            0.0
                        };
                    }
                }
                for j in 0..cells {
                    let ratio = dt / grid.widths[j];
                    for k in 0..n {
                        c[j * n + k] -= ratio * (flux[(j + 1) * n + k] - flux[j * n + k]);
                    }
                }
                for j in 0..cells {
                    let cj = &c[j * n..(j + 1) * n];
                    for i in 0..n {
                        let mut acc = 0.0;
                        for k in 0..n {
                            acc += self.from_char[(i, k)] * cj[k];
                        }
                        u[j * n + i] = acc;
                    }
                }
                if let Some((offset, e)) = &propagator {
                    let r = e.nrows();
                    let mut tmp = vec![0.0; r];
                    for j in 0..cells {
                        let v = &u[j * n + offset..j * n + offset + r];
                        for (i, slot) in tmp.iter_mut().enumerate() {
                            *slot = (0..r).map(|k| e[(i, k)] * v[k]).sum();
                        }
                        u[j * n + offset..j * n + offset + r].copy_from_slice(&tmp);
                    }
                }
                t += dt;
            }
            t = t_next;
            record(&mut sol, t, &u, &mut c)?;
        }
        Ok(sol)
    }

    fn characteristics(&self, u: &[f64], c: &mut [f64]) {
        let n = self.n;
        for j in 0..u.len() / n {
            for k in 0..n {
                let mut acc = 0.0;
                for i in 0..n {
                    acc += self.to_char[(k, i)] * u[j * n + i];
                }
                c[j * n + k] = acc;
            }
        }
    }
}

/// Generator `(D, V, W)` of `exp(τ·A02⁻¹S)` stored as `V·diag(d)·W`, encoded
/// in a single matrix `[V | W | d]` to keep the scheme struct simple.
fn source_generator(sys: &RelaxationSystem, epsilon: f64) -> Result<Mat> {
    let (sq, isq) = linalg::spd_sqrt(&sys.a02, "A02")?;
    let sym = linalg::symmetrize(&(&isq * &sys.s * &isq));
    let (d, q) = linalg::sym_eigen_desc(&sym);
    let r = sys.r();
    let mut out = Mat::zeros(r, 2 * r + 1);
    out.columns_mut(0, r).copy_from(&(&isq * &q));
    out.columns_mut(r, r).copy_from(&(q.transpose() * &sq));
    for i in 0..r {
        out[(i, 2 * r)] = d[i] / epsilon;
    }
    Ok(out)
}

fn exp_sym_generator(gen: &Mat, dt: f64) -> Mat {
    let r = gen.nrows();
    let v = gen.columns(0, r);
    let w = gen.columns(r, r);
    let d = Mat::from_diagonal(&Vector::from_iterator(r, (0..r).map(|i| (gen[(i, 2 * r)] * dt).exp())));
    v * d * w
}

fn stack_initial(cells: &[f64], u0: &dyn Fn(f64) -> Vector, m: usize, n: usize) -> Result<Vec<f64>> {
    let mut out = vec![0.0; n * cells.len()];
    for (j, &x) in cells.iter().enumerate() {
        let u = u0(x);
        if u.len() != m {
            return Err(Error::Dimension(format!("initial profile has {} components, expected {m}", u.len())));
        }
        out[j * n..j * n + m].copy_from_slice(u.as_slice());
    }
    Ok(out)
}

/// Relaxation problem `A0U_t + A1U_x = QU/ε`, `B·U(0,t) = b(t)`,
/// `U(x,0) = (u0(x), 0)`.
pub fn solve_relaxation(
    sys: &RelaxationSystem,
    bd: &BoundaryData,
    u0: &dyn Fn(f64) -> Vector,
    grid: &HalfLineGrid,
    t_final: f64,
    epsilon: f64,
    opts: SolverOptions,
) -> Result<GridSolution> {
    if !(epsilon > 0.0) {
        return Err(Error::InvalidInput(format!("epsilon must be positive (got {epsilon})")));
    }
    let n = sys.n();
    let m = sys.m();
    let mut corner = Vector::zeros(n);
    corner.rows_mut(0, m).copy_from(&u0(0.0));
    let residual = (&bd.b * corner - bd.eval(0.0)).norm();
    if residual > 1e-10 {
        return Err(Error::Compatibility { residual });
    }
    let mut scheme = CharacteristicScheme::new(&sys.a0(), &sys.a1(), &bd.b, "relaxation boundary")?;
    scheme.source = Some((m, source_generator(sys, epsilon)?));
    let initial = stack_initial(&grid.centers, u0, m, n)?;
    scheme.run(grid, initial, |t| bd.eval(t), t_final, opts, Some(epsilon))
}

/// Equilibrium problem `A01ū_t + A11ū_x = 0` with `Bp·Bu·ū(0,t) = Bp·b(t)`.
pub fn solve_equilibrium(
    sys: &RelaxationSystem,
    reduced: &ReducedBoundary,
    bd: &BoundaryData,
    u0: &dyn Fn(f64) -> Vector,
    grid: &HalfLineGrid,
    t_final: f64,
    opts: SolverOptions,
) -> Result<GridSolution> {
    let m = sys.m();
    let residual = (&reduced.reduced_operator * u0(0.0) - &reduced.bp * bd.eval(0.0)).norm();
    if residual > 1e-10 {
        return Err(Error::Compatibility { residual });
    }
    let scheme = CharacteristicScheme::new(&sys.a01, &sys.a11, &reduced.reduced_operator, "reduced boundary")?;
    let initial = stack_initial(&grid.centers, u0, m, m)?;
    scheme.run(grid, initial, |t| &reduced.bp * bd.eval(t), t_final, opts, None)
}

/// `U_ε = (ū, 0) + (μ, ν)(x/ε, t)` on the samples of an equilibrium solution.
///
/// At each sample the outgoing coefficients `β` are read off the imposed
/// equilibrium trace by least squares on `(R1U, R1S)`.
pub fn assemble_approximate(
    sys: &RelaxationSystem,
    reduced: &ReducedBoundary,
    bd: &BoundaryData,
    equilibrium: &GridSolution,
    epsilon: f64,
) -> Result<GridSolution> {
    if !(epsilon > 0.0) {
        return Err(Error::InvalidInput(format!("epsilon must be positive (got {epsilon})")));
    }
    let (n, m) = (sys.n(), sys.m());
    if equilibrium.components != m {
        return Err(Error::Dimension("equilibrium solution has the wrong component count".into()));
    }
    let sp = &reduced.spectra;
    let mut basis = Mat::zeros(m, sp.r1u.ncols() + sp.r1s.ncols());
    basis.columns_mut(0, sp.r1u.ncols()).copy_from(&sp.r1u);
    basis.columns_mut(sp.r1u.ncols(), sp.r1s.ncols()).copy_from(&sp.r1s);
    let decomposition = basis.svd(true, true);

    let mut states = Vec::with_capacity(equilibrium.times.len());
    let mut traces = Vec::with_capacity(equilibrium.times.len());
    for (k, &t) in equilibrium.times.iter().enumerate() {
        let coeffs = decomposition.solve(&equilibrium.traces[k], 1e-14).map_err(|e| Error::Internal(e.to_string()))?;
        let beta = coeffs.rows(sp.r1u.ncols(), sp.r1s.ncols()).into_owned();
        let (_, w2_0) = solve_corner(reduced, bd, &beta, t)?;
        let profile = layer_profile(reduced, &w2_0)?;
        let mut flat = vec![0.0; n * equilibrium.grid.cells()];
        for (j, &x) in equilibrium.grid.centers.iter().enumerate() {
            let corr = profile.correction(x / epsilon);
            for i in 0..n {
                flat[j * n + i] = corr[i] + if i < m { equilibrium.states[k][j * m + i] } else { 0.0 };
            }
        }
        let mut trace = profile.correction(0.0);
        for i in 0..m {
            trace[i] += equilibrium.traces[k][i];
        }
        states.push(flat);
        traces.push(trace);
    }
    Ok(GridSolution {
        grid: equilibrium.grid.clone(),
        times: equilibrium.times.clone(),
        states,
        traces,
        components: n,
        epsilon: Some(epsilon),
    })
}

/// Initial data and time horizon of an ε-sweep.
pub struct Scenario<'a> {
    pub u0: &'a (dyn Fn(f64) -> Vector + Sync),
    pub t_final: f64,
    pub options: SolverOptions,
}

/// Grid as a function of ε: `dx = ε/points_per_eps` on `[0, layer_widths·ε]`,
/// geometric growth up to `dx_far`, domain `[0, max_speed·T + 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct GridRule {
    pub points_per_eps: f64,
    pub layer_widths: f64,
    pub growth: f64,
    pub dx_far: f64,
}

impl Default for GridRule {
    fn default() -> Self {
        Self { points_per_eps: 8.0, layer_widths: 40.0, growth: 1.05, dx_far: 2e-3 }
    }
}

impl GridRule {
    pub fn grid(&self, sys: &RelaxationSystem, epsilon: f64, t_final: f64) -> Result<HalfLineGrid> {
        let a1_radius = linalg::sym_eigen_desc(&sys.a1()).0.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let a0_min = linalg::min_eigenvalue(&sys.a0());
        let x_max = a1_radius / a0_min * t_final + 1.0;
        let dx_min = epsilon / self.points_per_eps;
        HalfLineGrid::graded(x_max, dx_min, self.layer_widths * epsilon, self.growth, self.dx_far.max(dx_min))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct ConvergenceReport {
    pub epsilons: Vec<f64>,
    /// `sup_t ‖U^ε − U_ε‖_{L²}` over the sample times.
    pub errors: Vec<f64>,
    /// Least-squares slope of `log error` against `log ε`; `None` for fewer
    /// than two distinct ε.
    pub fitted_slope: Option<f64>,
    /// Same measurement restricted to `x < layer_widths·ε`.
    pub layer_errors: Vec<f64>,
    pub layer_slope: Option<f64>,
    /// Some error grew by more than 20% when ε decreased.
    pub monotonicity_flag: bool,
    pub cells: Vec<usize>,
}

impl ConvergenceReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epsilon,error\n");
        for (e, err) in self.epsilons.iter().zip(&self.errors) {
            out.push_str(&format!("{e:.16e},{err:.16e}\n"));
        }
        out
    }
}

/// Least-squares slope of `ys` against `xs`.
pub fn fit_slope(xs: &[f64], ys: &[f64]) -> Option<f64> {
    let n = xs.len() as f64;
    if xs.len() < 2 {
        return None;
    }
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    Some(xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>() / sxx)
}

/// `sup` over samples of `‖a − b‖_{L²}`.
pub fn sup_l2_difference(a: &GridSolution, b: &GridSolution) -> Result<f64> {
    sup_l2_difference_below(a, b, f64::INFINITY)
}

/// Same as [`sup_l2_difference`] on the cells with centre below `x_cut`.
pub fn sup_l2_difference_below(a: &GridSolution, b: &GridSolution, x_cut: f64) -> Result<f64> {
    if a.times.len() != b.times.len() || a.components != b.components || a.grid.cells() != b.grid.cells() {
        return Err(Error::Dimension("solutions are sampled differently".into()));
    }
    let n = a.components;
    let mut worst = 0.0f64;
    for (sa, sb) in a.states.iter().zip(&b.states) {
        let diff: Vec<f64> =
            sa.iter().zip(sb).enumerate().map(|(i, (x, y))| if a.grid.centers[i / n] < x_cut { x - y } else { 0.0 }).collect();
        worst = worst.max(a.grid.l2_norm(&diff, n));
    }
    Ok(worst)
}

/// One relaxation/equilibrium/assembly run per ε, in parallel.
pub fn error_series(
    sys: &RelaxationSystem,
    bd: &BoundaryData,
    reduced: &ReducedBoundary,
    scenario: &Scenario<'_>,
    epsilons: &[f64],
    rule: &GridRule,
) -> Result<ConvergenceReport> {
    if epsilons.is_empty() {
        return Err(Error::InvalidInput("empty epsilon list".into()));
    }
    let runs: Vec<Result<(f64, f64, usize)>> = epsilons
        .par_iter()
        .map(|&eps| {
            let grid = rule.grid(sys, eps, scenario.t_final)?;
            let relaxed = solve_relaxation(sys, bd, scenario.u0, &grid, scenario.t_final, eps, scenario.options)?;
            let eq = solve_equilibrium(sys, reduced, bd, scenario.u0, &grid, scenario.t_final, scenario.options)?;
            let approx = assemble_approximate(sys, reduced, bd, &eq, eps)?;
            let layer = sup_l2_difference_below(&relaxed, &approx, rule.layer_widths * eps)?;
            Ok((sup_l2_difference(&relaxed, &approx)?, layer, grid.cells()))
        })
        .collect();
    let mut errors = Vec::with_capacity(runs.len());
    let mut layer_errors = Vec::with_capacity(runs.len());
    let mut cells = Vec::with_capacity(runs.len());
    for r in runs {
        let (e, l, c) = r?;
        errors.push(e);
        layer_errors.push(l);
        cells.push(c);
    }
    let mut order: Vec<usize> = (0..epsilons.len()).collect();
    order.sort_by(|&i, &j| epsilons[j].total_cmp(&epsilons[i]));
    let monotonicity_flag = order.windows(2).any(|w| errors[w[1]] > 1.2 * errors[w[0]]);
    let loglog = |errs: &[f64]| {
        if errs.iter().all(|&e| e > 0.0) {
            let xs: Vec<f64> = epsilons.iter().map(|e| e.ln()).collect();
            let ys: Vec<f64> = errs.iter().map(|e| e.ln()).collect();
            fit_slope(&xs, &ys)
        } else {
            None
        }
    };
    Ok(ConvergenceReport {
        epsilons: epsilons.to_vec(),
        fitted_slope: loglog(&errors),
        layer_slope: loglog(&layer_errors),
        errors,
        layer_errors,
        monotonicity_flag,
        cells,
    })
}
