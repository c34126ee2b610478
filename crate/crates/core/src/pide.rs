//! Finite-difference solver for the obstacle IPDE system in one space
//! dimension: implicit local diffusion, explicit nonlocal operators and
//! driver, and an exact discrete complementarity solve per step.

use std::io::Write;

use serde::Serialize;

use crate::error::{argument, Error, Result};
use crate::forward::TimeGrid;
use crate::levy::TruncatedMeasure;
use crate::par;
use crate::problem::{DriverMode, ProblemSpec};

/// Largest tolerated share of stencil targets outside the window.
pub const MAX_OUT_OF_WINDOW: f64 = 0.25;

/// Policy-iteration cap for the complementarity solve.
const MAX_POLICY_ITERATIONS: usize = 500;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SpatialGrid {
    pub x_min: f64,
    pub x_max: f64,
    pub n_cells: usize,
    /// How nonlocal targets outside the window are valued.
    pub boundary: &'static str,
}

impl SpatialGrid {
    pub fn new(x_min: f64, x_max: f64, n_cells: usize) -> Result<Self> {
        if !(x_min.is_finite() && x_max.is_finite() && x_min < x_max) {
            return argument(format!("spatial window needs x_min < x_max, got [{x_min}, {x_max}]"));
        }
        if n_cells < 16 {
            return argument(format!("spatial grid needs at least 16 cells, got {n_cells}"));
        }
        Ok(Self {
            x_min,
            x_max,
            n_cells,
            boundary: "CONSTANT_EXTRAPOLATION",
        })
    }

    pub fn dx(&self) -> f64 {
        (self.x_max - self.x_min) / self.n_cells as f64
    }

    pub fn x(&self, j: usize) -> f64 {
        if j == self.n_cells {
            self.x_max
        } else {
            self.x_min + j as f64 * self.dx()
        }
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..=self.n_cells).map(|j| self.x(j)).collect()
    }

    pub fn len(&self) -> usize {
        self.n_cells + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.x_min && x <= self.x_max
    }
}

#[derive(Debug, Clone, Copy)]
struct Target {
    left: u32,
    frac: f64,
    beta: f64,
    weight: f64,
    quad: u32,
}

/// Interpolated jump targets `xⱼ + β(t, xⱼ, e_q)` for every node and
/// quadrature node, with the γ weights of each component.
#[derive(Debug, Clone)]
pub struct NonlocalStencil {
    grid: SpatialGrid,
    per_node: usize,
    targets: Vec<Target>,
    gamma: Vec<Vec<f64>>,
    total_mass: f64,
    pub out_of_window_fraction: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct StencilDiagnostics {
    pub nodes: usize,
    pub quadrature_nodes: usize,
    pub out_of_window_fraction: f64,
    pub k_row_sum: f64,
    pub b_row_sum: Vec<f64>,
}

impl NonlocalStencil {
    pub fn build(spec: &ProblemSpec, measure: &TruncatedMeasure, grid: &SpatialGrid, _t: f64) -> Result<Self> {
        if spec.k() != 1 {
            return argument("the grid solver handles one state dimension only");
        }
        let nodes = if spec.jump_size.is_zero() {
            &[][..]
        } else {
            measure.nodes()
        };
        let weights = measure.weights();
        let per_node = nodes.len();
        let dx = grid.dx();
        let mut targets = Vec::with_capacity(grid.len() * per_node);
        let mut outside = 0usize;
        for j in 0..grid.len() {
            let x = grid.x(j);
            for (q, &e) in nodes.iter().enumerate() {
                let beta = spec.jump_size.beta(x, e);
                if !beta.is_finite() {
                    return Err(Error::Evaluation(format!("β is {beta} at x = {x}, e = {e}")));
                }
                let y = x + beta;
                let (left, frac, out) = if y < grid.x_min {
                    (0, 0.0, true)
                } else if y > grid.x_max {
                    (grid.n_cells - 1, 1.0, true)
                } else {
                    let l = (((y - grid.x_min) / dx).floor() as usize).min(grid.n_cells - 1);
                    (l, (y - grid.x(l)) / dx, false)
                };
                outside += out as usize;
                targets.push(Target {
                    left: left as u32,
                    frac,
                    beta,
                    weight: weights[q],
                    quad: q as u32,
                });
            }
        }
        let out_of_window_fraction = if targets.is_empty() {
            0.0
        } else {
            outside as f64 / targets.len() as f64
        };
        if out_of_window_fraction > MAX_OUT_OF_WINDOW {
            return argument(format!(
                "{:.1}% of jump targets leave the window [{}, {}]; widen the grid",
                100.0 * out_of_window_fraction,
                grid.x_min,
                grid.x_max
            ));
        }
        let gamma = (0..spec.m())
            .map(|i| nodes.iter().map(|&e| spec.jump_weights[i].eval(e)).collect())
            .collect();
        Ok(Self {
            grid: *grid,
            per_node,
            targets,
            gamma,
            total_mass: if per_node == 0 { 0.0 } else { measure.total_mass() },
            out_of_window_fraction,
        })
    }

    fn node_targets(&self, j: usize) -> &[Target] {
        &self.targets[j * self.per_node..(j + 1) * self.per_node]
    }

    fn interp(u: &[f64], t: &Target) -> f64 {
        let l = t.left as usize;
        u[l] + t.frac * (u[l + 1] - u[l])
    }

    /// `Σ_q w_q [u(xⱼ + β) − u(xⱼ) − β·D_x u(xⱼ)]`.
    pub fn apply_k(&self, u: &[f64], j: usize) -> f64 {
        let du = first_derivative(u, j, self.grid.dx());
        self.node_targets(j)
            .iter()
            .map(|t| t.weight * (Self::interp(u, t) - u[j] - t.beta * du))
            .sum()
    }

    /// `Σ_q w_q γⁱ(e_q) [u(xⱼ + β) − u(xⱼ)]`.
    pub fn apply_b(&self, u: &[f64], j: usize, i: usize) -> f64 {
        let g = &self.gamma[i];
        self.node_targets(j)
            .iter()
            .map(|t| t.weight * g[t.quad as usize] * (Self::interp(u, t) - u[j]))
            .sum()
    }

    /// `(Σ_q w_q [u(xⱼ + β) − u(xⱼ)]²)^{1/2}`.
    pub fn apply_norm(&self, u: &[f64], j: usize) -> f64 {
        self.node_targets(j)
            .iter()
            .map(|t| t.weight * (Self::interp(u, t) - u[j]).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    /// The driver's nonlocal argument for component `i`.
    pub fn driver_argument(&self, mode: DriverMode, u: &[f64], j: usize, i: usize) -> f64 {
        match mode {
            DriverMode::NonlocalLinear => self.apply_b(u, j, i),
            DriverMode::NonlocalNorm => self.apply_norm(u, j),
        }
    }

    /// `max_j Σ |row entries|` of the discrete K operator.
    pub fn k_row_sum(&self) -> f64 {
        let dx = self.grid.dx();
        (0..self.grid.len())
            .map(|j| {
                let ts = self.node_targets(j);
                let mass: f64 = ts.iter().map(|t| t.weight).sum();
                let drift: f64 = ts.iter().map(|t| t.weight * t.beta).sum::<f64>().abs();
                let slope = if j == 0 || j == self.grid.n_cells { 2.0 } else { 1.0 };
                2.0 * mass + slope * drift / dx
            })
            .fold(0.0, f64::max)
    }

    /// `max_j Σ |row entries|` of the discrete B operator of component `i`.
    pub fn b_row_sum(&self, i: usize) -> f64 {
        let g = &self.gamma[i];
        (0..self.grid.len())
            .map(|j| {
                self.node_targets(j)
                    .iter()
                    .map(|t| 2.0 * t.weight * g[t.quad as usize].abs())
                    .sum::<f64>()
            })
            .fold(0.0, f64::max)
    }

    pub fn diagnostics(&self) -> StencilDiagnostics {
        StencilDiagnostics {
            nodes: self.grid.len(),
            quadrature_nodes: self.per_node,
            out_of_window_fraction: self.out_of_window_fraction,
            k_row_sum: self.k_row_sum(),
            b_row_sum: (0..self.gamma.len()).map(|i| self.b_row_sum(i)).collect(),
        }
    }
}

/// Central difference inside, one-sided at the two boundary nodes.
fn first_derivative(u: &[f64], j: usize, dx: f64) -> f64 {
    let last = u.len() - 1;
    if j == 0 {
        (u[1] - u[0]) / dx
    } else if j == last {
        (u[last] - u[last - 1]) / dx
    } else {
        (u[j + 1] - u[j - 1]) / (2.0 * dx)
    }
}

/// Tridiagonal rows `lower·u_{j−1} + diag·u_j + upper·u_{j+1}` of the
/// local generator `b ∂_x + ½σ² ∂_xx`.
#[derive(Debug, Clone)]
struct LocalOperator {
    lower: Vec<f64>,
    diag: Vec<f64>,
    upper: Vec<f64>,
}

impl LocalOperator {
    fn build(spec: &ProblemSpec, grid: &SpatialGrid) -> Self {
        let n = grid.len();
        let dx = grid.dx();
        let mut lower = vec![0.0; n];
        let mut diag = vec![0.0; n];
        let mut upper = vec![0.0; n];
        for j in 0..n {
            let x = grid.x(j);
            let b = spec.drift.eval(x);
            let s2 = spec.diffusion.eval(x).powi(2);
            if j == 0 {
                // inward one-sided drift, linear far field
                diag[j] = -b / dx;
                upper[j] = b / dx;
            } else if j == n - 1 {
                lower[j] = -b / dx;
                diag[j] = b / dx;
            } else {
                let d2 = 0.5 * s2 / (dx * dx);
                if b.abs() * dx <= s2 {
                    lower[j] = d2 - b / (2.0 * dx);
                    upper[j] = d2 + b / (2.0 * dx);
                } else if b > 0.0 {
                    lower[j] = d2;
                    upper[j] = d2 + b / dx;
                } else {
                    lower[j] = d2 - b / dx;
                    upper[j] = d2;
                }
                diag[j] = -(lower[j] + upper[j]);
            }
        }
        Self { lower, diag, upper }
    }

    fn apply(&self, u: &[f64], j: usize) -> f64 {
        let mut v = self.diag[j] * u[j];
        if j > 0 {
            v += self.lower[j] * u[j - 1];
        }
        if j + 1 < u.len() {
            v += self.upper[j] * u[j + 1];
        }
        v
    }
}

/// Thomas algorithm; fails on a vanishing pivot.
fn solve_tridiagonal(lower: &[f64], diag: &[f64], upper: &[f64], rhs: &[f64]) -> Result<Vec<f64>> {
    let n = diag.len();
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    let mut pivot = diag[0];
    if !(pivot.abs() > 1e-300) {
        return Err(Error::Tridiagonal { row: 0, pivot });
    }
    c[0] = upper[0] / pivot;
    d[0] = rhs[0] / pivot;
    for j in 1..n {
        pivot = diag[j] - lower[j] * c[j - 1];
        if !(pivot.abs() > 1e-300) || !pivot.is_finite() {
            return Err(Error::Tridiagonal { row: j, pivot });
        }
        c[j] = upper[j] / pivot;
        d[j] = (rhs[j] - lower[j] * d[j - 1]) / pivot;
    }
    let mut u = vec![0.0; n];
    u[n - 1] = d[n - 1];
    for j in (0..n - 1).rev() {
        u[j] = d[j] - c[j] * u[j + 1];
    }
    Ok(u)
}

/// `(I − Δt·L)` as tridiagonal rows.
struct ImplicitMatrix {
    lower: Vec<f64>,
    diag: Vec<f64>,
    upper: Vec<f64>,
}

impl ImplicitMatrix {
    fn new(op: &LocalOperator, dt: f64) -> Self {
        Self {
            lower: op.lower.iter().map(|v| -dt * v).collect(),
            diag: op.diag.iter().map(|v| 1.0 - dt * v).collect(),
            upper: op.upper.iter().map(|v| -dt * v).collect(),
        }
    }

    fn apply(&self, u: &[f64], j: usize) -> f64 {
        let mut v = self.diag[j] * u[j];
        if j > 0 {
            v += self.lower[j] * u[j - 1];
        }
        if j + 1 < u.len() {
            v += self.upper[j] * u[j + 1];
        }
        v
    }

    /// Solves `min(u − ℓ, Mu − E) = 0` by policy iteration. Returns the
    /// solution and the binding set.
    fn solve_complementarity(&self, rhs: &[f64], ell: &[f64]) -> Result<(Vec<f64>, Vec<bool>)> {
        let n = rhs.len();
        let free = solve_tridiagonal(&self.lower, &self.diag, &self.upper, rhs)?;
        let mut active: Vec<bool> = (0..n).map(|j| free[j] < ell[j]).collect();
        if !active.iter().any(|&a| a) {
            return Ok((free, active));
        }
        let mut u = free;
        for _ in 0..MAX_POLICY_ITERATIONS {
            let (mut lo, mut di, mut up, mut b) =
                (self.lower.clone(), self.diag.clone(), self.upper.clone(), rhs.to_vec());
            for j in 0..n {
                if active[j] {
                    lo[j] = 0.0;
                    di[j] = 1.0;
                    up[j] = 0.0;
                    b[j] = ell[j];
                }
            }
            u = solve_tridiagonal(&lo, &di, &up, &b)?;
            let mut changed = false;
            for j in 0..n {
                let gap = u[j] - ell[j];
                let op = self.apply(&u, j) - rhs[j];
                let next = if gap == op { active[j] } else { gap < op };
                changed |= next != active[j];
                active[j] = next;
            }
            if !changed {
                break;
            }
        }
        for j in 0..n {
            if active[j] {
                u[j] = ell[j];
            }
            u[j] = u[j].max(ell[j]);
        }
        Ok((u, active))
    }
}

/// Explicit increments: `Δt·[K u + hⁱ(t, x, u, σ D_x u, q)]` at every node.
fn explicit_terms(
    spec: &ProblemSpec,
    stencil: &NonlocalStencil,
    grid: &SpatialGrid,
    t: f64,
    u: &[Vec<f64>],
    i: usize,
) -> Result<Vec<f64>> {
    let dx = grid.dx();
    let m = spec.m();
    let vals: Vec<std::result::Result<f64, String>> = par::map_range(grid.len(), |j| {
        let x = grid.x(j);
        let ui = &u[i];
        let y: Vec<f64> = (0..m).map(|l| u[l][j]).collect();
        let z = spec.diffusion.eval(x) * first_derivative(ui, j, dx);
        let q = stencil.driver_argument(spec.driver_mode, ui, j, i);
        let v = stencil.apply_k(ui, j) + spec.h(i, t, &[x], &y, &[z], q);
        if v.is_finite() {
            Ok(v)
        } else {
            Err(format!("explicit term is {v} at t = {t}, x = {x}, component {i}"))
        }
    });
    vals.into_iter().map(|r| r.map_err(Error::Evaluation)).collect()
}

/// One backward step from `u_next` (per component) at time `t`.
pub fn step_backward(
    u_next: &[Vec<f64>],
    t: f64,
    spec: &ProblemSpec,
    stencil: &NonlocalStencil,
    grid: &SpatialGrid,
    dt: f64,
) -> Result<(Vec<Vec<f64>>, Vec<Vec<bool>>)> {
    if u_next.iter().flatten().any(|v| !v.is_finite()) {
        return argument("step_backward needs a finite grid function");
    }
    let local = LocalOperator::build(spec, grid);
    let matrix = ImplicitMatrix::new(&local, dt);
    step_with(u_next, t, spec, stencil, grid, dt, &matrix)
}

fn step_with(
    u_next: &[Vec<f64>],
    t: f64,
    spec: &ProblemSpec,
    stencil: &NonlocalStencil,
    grid: &SpatialGrid,
    dt: f64,
    matrix: &ImplicitMatrix,
) -> Result<(Vec<Vec<f64>>, Vec<Vec<bool>>)> {
    let ell: Vec<f64> = (0..grid.len()).map(|j| spec.ell(t, &[grid.x(j)])).collect();
    let mut out = Vec::with_capacity(spec.m());
    let mut masks = Vec::with_capacity(spec.m());
    for i in 0..spec.m() {
        let inc = explicit_terms(spec, stencil, grid, t, u_next, i)?;
        let rhs: Vec<f64> = u_next[i].iter().zip(&inc).map(|(u, v)| u + dt * v).collect();
        let (u, active) = matrix.solve_complementarity(&rhs, &ell)?;
        out.push(u);
        masks.push(active);
    }
    Ok((out, masks))
}

/// Time-step cap of the explicit part.
#[derive(Debug, Clone, Serialize)]
pub struct CflReport {
    pub dt: f64,
    pub dt_max: f64,
    pub k_row_sum: f64,
    pub driver_lipschitz: f64,
    pub boundary_transport: f64,
}

pub fn check_cfl(
    spec: &ProblemSpec,
    stencil: &NonlocalStencil,
    grid: &SpatialGrid,
    time: &TimeGrid,
) -> Result<CflReport> {
    let dx = grid.dx();
    let m = spec.m();
    let sigma_max = (0..grid.len())
        .map(|j| spec.diffusion.eval(grid.x(j)).abs())
        .fold(0.0, f64::max);
    let q_gain = match spec.driver_mode {
        DriverMode::NonlocalLinear => (0..m).map(|i| stencil.b_row_sum(i)).fold(0.0, f64::max),
        DriverMode::NonlocalNorm => 2.0 * stencil.total_mass.sqrt(),
    };
    let driver_lipschitz =
        spec.driver.lipschitz_y(m) + spec.driver.lipschitz_q() * q_gain + spec.driver.lipschitz_z() * sigma_max / dx;
    let k_row_sum = stencil.k_row_sum();
    let dt_max = 0.5 / (k_row_sum + driver_lipschitz);
    let dt = time.dt();
    let boundary_transport = [0, grid.n_cells]
        .iter()
        .map(|&j| dt * spec.drift.eval(grid.x(j)).abs() / dx)
        .fold(0.0, f64::max);
    let report = CflReport {
        dt,
        dt_max,
        k_row_sum,
        driver_lipschitz,
        boundary_transport,
    };
    if dt > dt_max * (1.0 + 1e-12) {
        return Err(Error::Config(format!(
            "time step {dt:.3e} exceeds the explicit cap {dt_max:.3e}; use at least {} steps",
            ((time.horizon - time.t0) / dt_max).ceil()
        )));
    }
    if boundary_transport > 0.5 {
        return Err(Error::Config(format!(
            "boundary transport number {boundary_transport:.3} exceeds 0.5; refine the time grid"
        )));
    }
    Ok(report)
}

/// The oracle's value array `u[i][n][j]` with the binding set.
#[derive(Debug, Clone)]
pub struct GridSolution {
    pub grid: SpatialGrid,
    pub time: TimeGrid,
    pub m: usize,
    u: Vec<f64>,
    active: Vec<bool>,
    pub stencil: StencilDiagnostics,
    pub cfl: CflReport,
}

impl GridSolution {
    fn idx(&self, i: usize, n: usize, j: usize) -> usize {
        (i * (self.time.n_steps + 1) + n) * self.grid.len() + j
    }

    pub fn value(&self, i: usize, n: usize, j: usize) -> f64 {
        self.u[self.idx(i, n, j)]
    }

    pub fn is_active(&self, i: usize, n: usize, j: usize) -> bool {
        self.active[self.idx(i, n, j)]
    }

    /// `u(tₙ, ·)` for component `i`.
    pub fn slice(&self, i: usize, n: usize) -> &[f64] {
        let a = self.idx(i, n, 0);
        &self.u[a..a + self.grid.len()]
    }

    /// Bilinear interpolation in `(t, x)`; fails outside the window.
    pub fn evaluate(&self, t: f64, x: f64) -> Result<Vec<f64>> {
        let (t0, t1) = (self.time.t0, self.time.horizon);
        if !(t >= t0 && t <= t1 && self.grid.contains(x)) {
            return argument(format!(
                "({t}, {x}) lies outside [{t0}, {t1}] × [{}, {}]",
                self.grid.x_min, self.grid.x_max
            ));
        }
        let (n0, wt) = locate(t, t0, self.time.dt(), self.time.n_steps);
        let (j0, wx) = locate(x, self.grid.x_min, self.grid.dx(), self.grid.n_cells);
        Ok((0..self.m)
            .map(|i| {
                let v = |n: usize, j: usize| self.value(i, n, j);
                let lo = (1.0 - wx) * v(n0, j0) + wx * v(n0, j0 + 1);
                let hi = (1.0 - wx) * v(n0 + 1, j0) + wx * v(n0 + 1, j0 + 1);
                (1.0 - wt) * lo + wt * hi
            })
            .collect())
    }

    /// `u(tₙ, x)` for component `i` by linear interpolation in `x`;
    /// `None` outside the window.
    pub fn at_step(&self, i: usize, n: usize, x: f64) -> Option<f64> {
        if !self.grid.contains(x) {
            return None;
        }
        let (j0, w) = locate(x, self.grid.x_min, self.grid.dx(), self.grid.n_cells);
        let u = self.slice(i, n);
        Some((1.0 - w) * u[j0] + w * u[j0 + 1])
    }

    /// CSV rows `t, x, i, u, active, residual`, thinned to at most
    /// `max_levels` time levels.
    pub fn write_csv<W: Write>(&self, mut w: W, residual: Option<&ResidualReport>, max_levels: usize) -> Result<()> {
        writeln!(w, "t,x,i,u,active,residual")?;
        let stride = self.time.n_steps.div_ceil(max_levels.saturating_sub(1).max(1)).max(1);
        for i in 0..self.m {
            for n in (0..=self.time.n_steps).filter(|n| n % stride == 0 || *n == self.time.n_steps) {
                for j in 0..self.grid.len() {
                    let r = residual.map_or(0.0, |r| r.node(i, n, j));
                    writeln!(
                        w,
                        "{},{},{},{},{},{}",
                        self.time.t(n),
                        self.grid.x(j),
                        i,
                        self.value(i, n, j),
                        self.is_active(i, n, j) as u8,
                        r
                    )?;
                }
            }
        }
        Ok(())
    }
}

fn locate(v: f64, origin: f64, step: f64, cells: usize) -> (usize, f64) {
    let mut s = (v - origin) / step;
    if (s - s.round()).abs() < 1e-9 {
        s = s.round();
    }
    let i = (s.floor().max(0.0) as usize).min(cells - 1);
    (i, (s - i as f64).clamp(0.0, 1.0))
}

/// Full backward sweep from `u(T, ·) = gⁱ`.
pub fn solve(
    spec: &ProblemSpec,
    measure: &TruncatedMeasure,
    grid: &SpatialGrid,
    time: &TimeGrid,
) -> Result<GridSolution> {
    let stencil = NonlocalStencil::build(spec, measure, grid, time.t0)?;
    let cfl = check_cfl(spec, &stencil, grid, time)?;
    let m = spec.m();
    let nx = grid.len();
    let nt = time.n_steps;
    let dt = time.dt();
    let local = LocalOperator::build(spec, grid);
    let matrix = ImplicitMatrix::new(&local, dt);

    let mut u = vec![0.0; m * (nt + 1) * nx];
    let mut active = vec![false; m * (nt + 1) * nx];
    let idx = |i: usize, n: usize, j: usize| (i * (nt + 1) + n) * nx + j;
    let mut current: Vec<Vec<f64>> = (0..m)
        .map(|i| (0..nx).map(|j| spec.g(i, &[grid.x(j)])).collect())
        .collect();
    let ell_t: Vec<f64> = (0..nx).map(|j| spec.ell(time.horizon, &[grid.x(j)])).collect();
    for i in 0..m {
        for j in 0..nx {
            u[idx(i, nt, j)] = current[i][j];
            active[idx(i, nt, j)] = current[i][j] <= ell_t[j];
        }
    }
    for n in (0..nt).rev() {
        let (next, masks) = step_with(&current, time.t(n), spec, &stencil, grid, dt, &matrix)?;
        for i in 0..m {
            for j in 0..nx {
                u[idx(i, n, j)] = next[i][j];
                active[idx(i, n, j)] = masks[i][j];
            }
        }
        current = next;
    }
    Ok(GridSolution {
        grid: *grid,
        time: *time,
        m,
        u,
        active,
        stencil: stencil.diagnostics(),
        cfl,
    })
}

/// Complementarity residual `min{u − ℓ, −∂_t u − 𝓛u − h}` of the grid
/// function, with every spatial term taken at the current time level.
#[derive(Debug, Clone, Serialize)]
pub struct ResidualReport {
    pub sup: f64,
    pub l2: f64,
    pub sup_active: f64,
    pub l2_active: f64,
    pub sup_inactive: f64,
    pub l2_inactive: f64,
    pub interior_nodes: usize,
    pub active_nodes: usize,
    /// Latest time level included.
    pub t_max: f64,
    #[serde(skip)]
    nodes: Vec<f64>,
    #[serde(skip)]
    shape: (usize, usize),
}

impl ResidualReport {
    /// Residual at `(i, n, j)`; zero outside the interior.
    pub fn node(&self, i: usize, n: usize, j: usize) -> f64 {
        self.nodes[(i * self.shape.0 + n) * self.shape.1 + j]
    }
}

/// Interior nodes are two cells from each boundary and at time levels
/// `1..=N−2` (the stencil never touches the terminal layer).
pub fn viscosity_residual(
    sol: &GridSolution,
    spec: &ProblemSpec,
    measure: &TruncatedMeasure,
) -> Result<ResidualReport> {
    viscosity_residual_until(sol, spec, measure, sol.time.horizon)
}

/// As [`viscosity_residual`], restricted to time levels `tₙ ≤ t_max`.
///
/// A non-smooth terminal condition leaves a layer near maturity where the
/// residual decays like `√Δt`; excluding a fixed slab `(t_max, T]` isolates
/// the first-order behaviour of the scheme.
pub fn viscosity_residual_until(
    sol: &GridSolution,
    spec: &ProblemSpec,
    measure: &TruncatedMeasure,
    t_max: f64,
) -> Result<ResidualReport> {
    let grid = &sol.grid;
    let stencil = NonlocalStencil::build(spec, measure, grid, sol.time.t0)?;
    let local = LocalOperator::build(spec, grid);
    let nx = grid.len();
    let nt = sol.time.n_steps;
    let dt = sol.time.dt();
    let dx = grid.dx();
    let mut nodes = vec![0.0; sol.m * (nt + 1) * nx];
    let (mut sa, mut si, mut qa, mut qi, mut na, mut ni) = (0.0f64, 0.0f64, 0.0, 0.0, 0usize, 0usize);
    if nt >= 3 && nx >= 5 {
        for i in 0..sol.m {
            for n in 1..=nt - 2 {
                let t = sol.time.t(n);
                if t > t_max + 1e-12 {
                    break;
                }
                let cur: Vec<&[f64]> = (0..sol.m).map(|l| sol.slice(l, n)).collect();
                let next = sol.slice(i, n + 1);
                let ui = cur[i];
                let res: Vec<(f64, bool)> = par::map_range(nx - 4, |k| {
                    let j = k + 2;
                    let x = grid.x(j);
                    let y: Vec<f64> = cur.iter().map(|c| c[j]).collect();
                    let z = spec.diffusion.eval(x) * first_derivative(ui, j, dx);
                    let q = stencil.driver_argument(spec.driver_mode, ui, j, i);
                    let op = -(next[j] - ui[j]) / dt
                        - local.apply(ui, j)
                        - stencil.apply_k(ui, j)
                        - spec.h(i, t, &[x], &y, &[z], q);
                    let gap = ui[j] - spec.ell(t, &[x]);
                    (gap.min(op), sol.is_active(i, n, j))
                });
                for (k, (r, act)) in res.into_iter().enumerate() {
                    let j = k + 2;
                    nodes[(i * (nt + 1) + n) * nx + j] = r;
                    if act {
                        sa = sa.max(r.abs());
                        qa += r * r;
                        na += 1;
                    } else {
                        si = si.max(r.abs());
                        qi += r * r;
                        ni += 1;
                    }
                }
            }
        }
    }
    let rms = |q: f64, n: usize| if n == 0 { 0.0 } else { (q / n as f64).sqrt() };
    Ok(ResidualReport {
        sup: sa.max(si),
        l2: rms(qa + qi, na + ni),
        sup_active: sa,
        l2_active: rms(qa, na),
        sup_inactive: si,
        l2_inactive: rms(qi, ni),
        interior_nodes: na + ni,
        active_nodes: na,
        t_max: t_max.min(sol.time.horizon),
        nodes,
        shape: (nt + 1, nx),
    })
}

/// `Bᵢu(tₙ, xⱼ)` across the window.
pub fn nonlocal_b_profile(
    sol: &GridSolution,
    spec: &ProblemSpec,
    measure: &TruncatedMeasure,
    i: usize,
    n: usize,
) -> Result<Vec<f64>> {
    let stencil = NonlocalStencil::build(spec, measure, &sol.grid, sol.time.t(n))?;
    let u = sol.slice(i, n);
    Ok((0..sol.grid.len())
        .map(|j| stencil.driver_argument(spec.driver_mode, u, j, i))
        .collect())
}
