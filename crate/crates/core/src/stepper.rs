//! Semi-implicit time stepping.
//!
//! One step solves, with coefficients frozen at the latest iterate
//! `(w, psi)` (initially the old state):
//!
//! ```text
//! (1/dt + w.grad - gamma lambda lap) phi'  = phi/dt - gamma lambda f'(psi) - gamma rho'(psi) |w|^2/2
//! rho(psi) (1/dt + w.grad) u* - mu lap u*  = rho(psi) u/dt - lambda lap(psi) grad(psi)
//! div(grad q / rho(psi)) = div(u*)/dt,     u' = u* - dt grad(q) / rho(psi)
//! ```
//!
//! and repeats with `(w, psi) <- (u', phi')` up to `picard_max` times. The
//! reported pressure `q` includes the gradient part `lambda |grad phi|^2 / 2`
//! that the capillary form `-lambda lap(phi) grad(phi)` leaves out.

use std::cell::RefCell;

use log::warn;

use crate::constitutive::{self, Params};
use crate::error::{AcnsError, Result};
use crate::grid::{
    self, advect_scalar_into, cell_to_faces, divergence_into, laplacian_neumann_into, speed_sq,
    Grid, ScalarField, SimState, StaggeredVelocity,
};
use crate::solver::{solve_linear, LinearOperator, Method, Preconditioner, SolveStats};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepperConfig {
    pub dt: f64,
    pub picard_max: usize,
    pub picard_tol: f64,
    pub poisson_tol: f64,
    pub poisson_max_iter: usize,
}

impl Default for StepperConfig {
    fn default() -> Self {
        Self {
            dt: 2.5e-4,
            picard_max: 2,
            picard_tol: 1e-8,
            poisson_tol: 1e-10,
            poisson_max_iter: 20_000,
        }
    }
}

impl StepperConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("dt", self.dt),
            ("picard_tol", self.picard_tol),
            ("poisson_tol", self.poisson_tol),
        ];
        for (name, value) in positive {
            if !(value.is_finite() && value > 0.0) {
                return Err(AcnsError::InvalidParams(format!(
                    "{name} must be finite and > 0, got {value}"
                )));
            }
        }
        if self.picard_max < 1 {
            return Err(AcnsError::InvalidParams("picard_max must be >= 1".into()));
        }
        if self.poisson_max_iter < 1 {
            return Err(AcnsError::InvalidParams(
                "poisson_max_iter must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// Diagnostics of one call to [`step`].
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StepReport {
    pub picard_iters: usize,
    /// Relative change of `(phi, u)` in the last Picard pass.
    pub picard_residual: f64,
    /// Set when a Picard pass failed to reduce the change.
    pub stagnated: bool,
    pub phase_iterations: usize,
    pub momentum_iterations: usize,
    pub pressure_iterations: usize,
}

/// Body forces added to the right-hand sides, evaluated at the new time level.
pub trait Forcing {
    fn momentum(&self, grid: &Grid, t: f64) -> StaggeredVelocity;
    fn phase(&self, grid: &Grid, t: f64) -> ScalarField;
}

// ---------------------------------------------------------------------------
// Operators
// ---------------------------------------------------------------------------

/// `x/dt + w.grad x - diffusion lap x` on cell unknowns with Neumann walls.
pub struct PhaseOperator<'a> {
    grid: &'a Grid,
    advect: &'a StaggeredVelocity,
    inv_dt: f64,
    diffusion: f64,
    x: RefCell<ScalarField>,
    lap: RefCell<ScalarField>,
    adv: RefCell<ScalarField>,
}

impl<'a> PhaseOperator<'a> {
    pub fn new(grid: &'a Grid, advect: &'a StaggeredVelocity, dt: f64, diffusion: f64) -> Self {
        Self {
            grid,
            advect,
            inv_dt: 1.0 / dt,
            diffusion,
            x: RefCell::new(ScalarField::zeros(grid)),
            lap: RefCell::new(ScalarField::zeros(grid)),
            adv: RefCell::new(ScalarField::zeros(grid)),
        }
    }
}

impl LinearOperator for PhaseOperator<'_> {
    fn dim(&self) -> usize {
        self.grid.n_cells()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        let g = self.grid;
        let mut xs = self.x.borrow_mut();
        let mut lap = self.lap.borrow_mut();
        let mut adv = self.adv.borrow_mut();
        xs.set_interior(x);
        laplacian_neumann_into(g, &xs, &mut lap);
        advect_scalar_into(g, self.advect, &xs, &mut adv);
        for j in 0..g.ny {
            for i in 0..g.nx {
                let k = i + j * g.nx;
                y[k] = x[k] * self.inv_dt + adv.get(i, j) - self.diffusion * lap.get(i, j);
            }
        }
    }

    fn diagonal(&self) -> Vec<f64> {
        let g = self.grid;
        let (ihx2, ihy2) = (1.0 / (g.hx * g.hx), 1.0 / (g.hy * g.hy));
        let mut d = Vec::with_capacity(g.n_cells());
        for j in 0..g.ny {
            for i in 0..g.nx {
                let nbx = [i > 0, i + 1 < g.nx].iter().filter(|b| **b).count() as f64;
                let nby = [j > 0, j + 1 < g.ny].iter().filter(|b| **b).count() as f64;
                d.push(self.inv_dt + self.diffusion * (nbx * ihx2 + nby * ihy2));
            }
        }
        d
    }
}

/// `rho_f (x/dt + w.grad x) - mu lap x` on the non-wall faces.
///
/// Each velocity component only couples to itself, so the operator is stored
/// as two five-point stencils over the packed unknowns. Wall faces drop out
/// and reflected ghosts fold into the centre coefficient.
pub struct MomentumOperator<'a> {
    grid: &'a Grid,
    rho_faces: StaggeredVelocity,
    /// `[centre, east, west, north, south]` per unknown.
    stencil: Vec<[f64; 5]>,
}

impl<'a> MomentumOperator<'a> {
    pub fn new(
        grid: &'a Grid,
        advect: &'a StaggeredVelocity,
        rho_cells: &ScalarField,
        dt: f64,
        mu: f64,
    ) -> Self {
        let rho_faces = cell_to_faces(grid, rho_cells);
        let (nx, ny) = (grid.nx, grid.ny);
        let (ihx2, ihy2) = (1.0 / (grid.hx * grid.hx), 1.0 / (grid.hy * grid.hy));
        let (hx4, hy4) = (0.25 / grid.hx, 0.25 / grid.hy);
        let inv_dt = 1.0 / dt;
        let w = advect;
        let row = |rho: f64, ue: f64, uw: f64, vn: f64, vs: f64| {
            [
                rho * inv_dt + rho * (hx4 * (uw - ue) + hy4 * (vs - vn)) + 2.0 * mu * (ihx2 + ihy2),
                rho * hx4 * ue - mu * ihx2,
                -rho * hx4 * uw - mu * ihx2,
                rho * hy4 * vn - mu * ihy2,
                -rho * hy4 * vs - mu * ihy2,
            ]
        };
        let mut stencil = Vec::with_capacity(grid.n_velocity_unknowns());
        for j in 0..ny {
            for i in 1..nx {
                let mut c = row(
                    rho_faces.u(i, j),
                    w.u(i, j) + w.u(i + 1, j),
                    w.u(i - 1, j) + w.u(i, j),
                    w.v(i - 1, j + 1) + w.v(i, j + 1),
                    w.v(i - 1, j) + w.v(i, j),
                );
                if i + 1 == nx {
                    c[1] = 0.0;
                }
                if i == 1 {
                    c[2] = 0.0;
                }
                if j + 1 == ny {
                    c[0] -= c[3];
                    c[3] = 0.0;
                }
                if j == 0 {
                    c[0] -= c[4];
                    c[4] = 0.0;
                }
                stencil.push(c);
            }
        }
        for j in 1..ny {
            for i in 0..nx {
                let mut c = row(
                    rho_faces.v(i, j),
                    w.u(i + 1, j - 1) + w.u(i + 1, j),
                    w.u(i, j - 1) + w.u(i, j),
                    w.v(i, j) + w.v(i, j + 1),
                    w.v(i, j - 1) + w.v(i, j),
                );
                if i + 1 == nx {
                    c[0] -= c[1];
                    c[1] = 0.0;
                }
                if i == 0 {
                    c[0] -= c[2];
                    c[2] = 0.0;
                }
                if j + 1 == ny {
                    c[3] = 0.0;
                }
                if j == 1 {
                    c[4] = 0.0;
                }
                stencil.push(c);
            }
        }
        Self {
            grid,
            rho_faces,
            stencil,
        }
    }

    pub fn rho_faces(&self) -> &StaggeredVelocity {
        &self.rho_faces
    }

    /// Applies one component block of `width x rows` unknowns starting at `offset`.
    fn apply_block(&self, x: &[f64], y: &mut [f64], offset: usize, width: usize, rows: usize) {
        for r in 0..rows {
            for c in 0..width {
                let k = offset + c + r * width;
                let [cc, ce, cw, cn, cs] = self.stencil[k];
                let mut acc = cc * x[k];
                if c + 1 < width {
                    acc += ce * x[k + 1];
                }
                if c > 0 {
                    acc += cw * x[k - 1];
                }
                if r + 1 < rows {
                    acc += cn * x[k + width];
                }
                if r > 0 {
                    acc += cs * x[k - width];
                }
                y[k] = acc;
            }
        }
    }
}

impl LinearOperator for MomentumOperator<'_> {
    fn dim(&self) -> usize {
        self.grid.n_velocity_unknowns()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        let (nx, ny) = (self.grid.nx, self.grid.ny);
        self.apply_block(x, y, 0, nx - 1, ny);
        self.apply_block(x, y, (nx - 1) * ny, nx, ny - 1);
    }

    fn diagonal(&self) -> Vec<f64> {
        self.stencil.iter().map(|c| c[0]).collect()
    }
}

/// `-div(beta grad q)` with face coefficients `beta = 1 / rho_f` and
/// zero flux through the walls. Symmetric positive semidefinite; the null
/// space is the constants.
pub struct PressureOperator {
    nx: usize,
    ny: usize,
    /// `beta / hx^2` on the interior vertical faces `i = 1..nx`, row-major.
    cx: Vec<f64>,
    /// `beta / hy^2` on the interior horizontal faces `j = 1..ny`.
    cy: Vec<f64>,
}

impl PressureOperator {
    pub fn new(grid: &Grid, rho_cells: &ScalarField) -> Self {
        let (nx, ny) = (grid.nx, grid.ny);
        let (ihx2, ihy2) = (1.0 / (grid.hx * grid.hx), 1.0 / (grid.hy * grid.hy));
        let mut cx = vec![0.0; (nx - 1) * ny];
        for j in 0..ny {
            for i in 1..nx {
                let rho_f = 0.5 * (rho_cells.get(i, j) + rho_cells.get(i - 1, j));
                cx[(i - 1) + j * (nx - 1)] = ihx2 / rho_f;
            }
        }
        let mut cy = vec![0.0; nx * (ny - 1)];
        for j in 1..ny {
            for i in 0..nx {
                let rho_f = 0.5 * (rho_cells.get(i, j) + rho_cells.get(i, j - 1));
                cy[i + (j - 1) * nx] = ihy2 / rho_f;
            }
        }
        Self { nx, ny, cx, cy }
    }
}

impl LinearOperator for PressureOperator {
    fn dim(&self) -> usize {
        self.nx * self.ny
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        let (nx, ny) = (self.nx, self.ny);
        y.iter_mut().for_each(|v| *v = 0.0);
        for j in 0..ny {
            let row = j * nx;
            for i in 1..nx {
                let c = self.cx[(i - 1) + j * (nx - 1)];
                let flux = c * (x[row + i] - x[row + i - 1]);
                y[row + i] += flux;
                y[row + i - 1] -= flux;
            }
        }
        for j in 1..ny {
            for i in 0..nx {
                let c = self.cy[i + (j - 1) * nx];
                let (a, b) = (i + j * nx, i + (j - 1) * nx);
                let flux = c * (x[a] - x[b]);
                y[a] += flux;
                y[b] -= flux;
            }
        }
    }

    fn diagonal(&self) -> Vec<f64> {
        let (nx, ny) = (self.nx, self.ny);
        let mut d = vec![0.0; nx * ny];
        for j in 0..ny {
            for i in 1..nx {
                let c = self.cx[(i - 1) + j * (nx - 1)];
                d[i + j * nx] += c;
                d[i - 1 + j * nx] += c;
            }
        }
        for j in 1..ny {
            for i in 0..nx {
                let c = self.cy[i + (j - 1) * nx];
                d[i + j * nx] += c;
                d[i + (j - 1) * nx] += c;
            }
        }
        d
    }

    fn preconditioner(&self) -> Box<dyn Preconditioner + '_> {
        Box::new(IncompleteCholesky::new(self))
    }
}

/// Share of the dropped fill moved onto the diagonal.
const MIC_TAU: f64 = 0.97;
const MIC_SAFETY: f64 = 0.25;

/// Modified zero-fill incomplete Cholesky factor `(D + L) D^-1 (D + L^T)` of the
/// five-point pressure matrix in row-major order.
struct IncompleteCholesky {
    nx: usize,
    /// Coupling to the west and south neighbour of each cell (0 on walls).
    west: Vec<f64>,
    south: Vec<f64>,
    pivot: Vec<f64>,
}

impl IncompleteCholesky {
    fn new(op: &PressureOperator) -> Self {
        let (nx, ny) = (op.nx, op.ny);
        let n = nx * ny;
        let diag = op.diagonal();
        let mut west = vec![0.0; n];
        let mut south = vec![0.0; n];
        let mut pivot = vec![0.0; n];
        for j in 0..ny {
            for i in 0..nx {
                let k = i + j * nx;
                if i > 0 {
                    west[k] = op.cx[(i - 1) + j * (nx - 1)];
                }
                if j > 0 {
                    south[k] = op.cy[i + (j - 1) * nx];
                }
            }
        }
        let north = |k: usize| if k + nx < n { south[k + nx] } else { 0.0 };
        let east = |k: usize| {
            if !(k + 1).is_multiple_of(nx) {
                west[k + 1]
            } else {
                0.0
            }
        };
        for k in 0..n {
            let mut d = diag[k];
            if west[k] != 0.0 {
                let w = west[k];
                d -= w * (w + MIC_TAU * north(k - 1)) / pivot[k - 1];
            }
            if south[k] != 0.0 {
                let s = south[k];
                d -= s * (s + MIC_TAU * east(k - nx)) / pivot[k - nx];
            }
            // the matrix is singular, so the last pivots can collapse
            pivot[k] = if d < MIC_SAFETY * diag[k] { diag[k] } else { d };
        }
        Self {
            nx,
            west,
            south,
            pivot,
        }
    }
}

impl Preconditioner for IncompleteCholesky {
    fn apply(&self, r: &[f64], z: &mut [f64]) {
        let (nx, n) = (self.nx, r.len());
        for k in 0..n {
            let mut acc = r[k];
            if k % nx > 0 {
                acc += self.west[k] * z[k - 1];
            }
            if k >= nx {
                acc += self.south[k] * z[k - nx];
            }
            z[k] = acc / self.pivot[k];
        }
        for k in (0..n).rev() {
            let mut acc = 0.0;
            if (k + 1) % nx > 0 {
                acc += self.west[k + 1] * z[k + 1];
            }
            if k + nx < n {
                acc += self.south[k + nx] * z[k + nx];
            }
            z[k] += acc / self.pivot[k];
        }
    }
}

// ---------------------------------------------------------------------------
// Building blocks
// ---------------------------------------------------------------------------

/// Solves `(1/dt + w.grad - diffusion lap) phi = rhs` with Neumann walls,
/// starting from `guess`.
pub fn solve_phase_system(
    grid: &Grid,
    advect: &StaggeredVelocity,
    diffusion: f64,
    rhs: &ScalarField,
    guess: &ScalarField,
    cfg: &StepperConfig,
) -> Result<(ScalarField, SolveStats)> {
    let op = PhaseOperator::new(grid, advect, cfg.dt, diffusion);
    let b = rhs.interior_vec();
    let mut x = guess.interior_vec();
    let stats = solve_linear(
        &op,
        &b,
        &mut x,
        cfg.poisson_tol,
        cfg.poisson_max_iter,
        Method::BiCgStab,
    )?;
    let mut out = guess.clone();
    out.set_interior(&x);
    Ok((out, stats))
}

/// Solves `rho_f (1/dt + w.grad) u - mu lap u = rhs` with no-slip walls.
pub fn solve_momentum_system(
    grid: &Grid,
    advect: &StaggeredVelocity,
    rho_cells: &ScalarField,
    mu: f64,
    rhs: &StaggeredVelocity,
    guess: &StaggeredVelocity,
    cfg: &StepperConfig,
) -> Result<(StaggeredVelocity, SolveStats)> {
    let op = MomentumOperator::new(grid, advect, rho_cells, cfg.dt, mu);
    let b = rhs.unknowns();
    let mut x = guess.unknowns();
    let stats = solve_linear(
        &op,
        &b,
        &mut x,
        cfg.poisson_tol,
        cfg.poisson_max_iter,
        Method::BiCgStab,
    )?;
    let mut out = StaggeredVelocity::zeros(grid);
    out.unpack_unknowns(&x);
    Ok((out, stats))
}

/// Right-hand side of the phase system for coefficients frozen at `frozen`.
fn phase_rhs(
    grid: &Grid,
    phase_old: &ScalarField,
    frozen: &SimState,
    cfg: &StepperConfig,
    params: &Params,
    forcing: Option<&ScalarField>,
) -> ScalarField {
    let inv_dt = 1.0 / cfg.dt;
    let gl = params.gamma_lambda();
    let speed = speed_sq(grid, &frozen.velocity);
    let mut rhs = ScalarField::zeros(grid);
    for j in 0..grid.ny {
        for i in 0..grid.nx {
            let psi = frozen.phase.get(i, j);
            let mut r = phase_old.get(i, j) * inv_dt
                - gl * constitutive::f_prime(psi, params)
                - params.gamma * constitutive::rho_prime(psi, params) * 0.5 * speed.get(i, j);
            if let Some(fp) = forcing {
                r += fp.get(i, j);
            }
            rhs.set(i, j, r);
        }
    }
    rhs.apply_neumann();
    rhs
}

fn phase_step_inner(
    grid: &Grid,
    state_n: &SimState,
    frozen: &SimState,
    cfg: &StepperConfig,
    params: &Params,
    forcing: Option<&ScalarField>,
) -> Result<(ScalarField, SolveStats)> {
    let rhs = phase_rhs(grid, &state_n.phase, frozen, cfg, params, forcing);
    solve_phase_system(
        grid,
        &frozen.velocity,
        params.gamma_lambda(),
        &rhs,
        &frozen.phase,
        cfg,
    )
}

/// New phase field from the linearised Allen-Cahn equation, coefficients
/// taken from `frozen` and the time derivative from `state_n`.
pub fn phase_step(
    grid: &Grid,
    state_n: &SimState,
    frozen: &SimState,
    cfg: &StepperConfig,
    params: &Params,
) -> Result<ScalarField> {
    grid.check_scalar(&state_n.phase)?;
    grid.check_scalar(&frozen.phase)?;
    grid.check_velocity(&frozen.velocity)?;
    phase_step_inner(grid, state_n, frozen, cfg, params, None).map(|(phi, _)| phi)
}

fn momentum_predict_inner(
    grid: &Grid,
    state_n: &SimState,
    frozen: &SimState,
    cfg: &StepperConfig,
    params: &Params,
    forcing: Option<&StaggeredVelocity>,
) -> Result<(StaggeredVelocity, SolveStats)> {
    let rho_cells = frozen.phase.map(|psi| constitutive::rho(psi, params));
    let rhs = momentum_rhs(
        grid,
        &state_n.velocity,
        &rho_cells,
        &frozen.phase,
        cfg,
        params.lambda,
        forcing,
    );
    solve_momentum_system(
        grid,
        &frozen.velocity,
        &rho_cells,
        params.mu,
        &rhs,
        &frozen.velocity,
        cfg,
    )
}

/// `rho_f u/dt - lambda lap(psi) grad(psi) + forcing` on the faces.
pub(crate) fn momentum_rhs(
    grid: &Grid,
    velocity_old: &StaggeredVelocity,
    rho_cells: &ScalarField,
    capillary_phase: &ScalarField,
    cfg: &StepperConfig,
    lambda: f64,
    forcing: Option<&StaggeredVelocity>,
) -> StaggeredVelocity {
    let rho_faces = cell_to_faces(grid, rho_cells);
    let mut lap = ScalarField::zeros(grid);
    laplacian_neumann_into(grid, capillary_phase, &mut lap);
    let mut cap = StaggeredVelocity::zeros(grid);
    grid::capillary_from_laplacian(grid, capillary_phase, &lap, lambda, &mut cap);
    let inv_dt = 1.0 / cfg.dt;
    let mut rhs = StaggeredVelocity::zeros(grid);
    for j in 0..grid.ny {
        for i in 1..grid.nx {
            let mut r = rho_faces.u(i, j) * velocity_old.u(i, j) * inv_dt + cap.u(i, j);
            if let Some(fm) = forcing {
                r += fm.u(i, j);
            }
            rhs.set_u(i, j, r);
        }
    }
    for j in 1..grid.ny {
        for i in 0..grid.nx {
            let mut r = rho_faces.v(i, j) * velocity_old.v(i, j) * inv_dt + cap.v(i, j);
            if let Some(fm) = forcing {
                r += fm.v(i, j);
            }
            rhs.set_v(i, j, r);
        }
    }
    rhs.apply_no_slip();
    rhs
}

/// Intermediate velocity `u*` (no pressure gradient) from the linearised
/// momentum equation.
pub fn momentum_predict(
    grid: &Grid,
    state_n: &SimState,
    frozen: &SimState,
    cfg: &StepperConfig,
    params: &Params,
) -> Result<StaggeredVelocity> {
    grid.check_velocity(&state_n.velocity)?;
    grid.check_velocity(&frozen.velocity)?;
    grid.check_scalar(&frozen.phase)?;
    momentum_predict_inner(grid, state_n, frozen, cfg, params, None).map(|(u, _)| u)
}

/// Variable-density projection of `u_star` onto discretely divergence-free
/// fields. Returns the corrected velocity and the zero-mean pressure `q`.
pub fn project(
    grid: &Grid,
    u_star: &StaggeredVelocity,
    rho_field: &ScalarField,
    cfg: &StepperConfig,
) -> Result<(StaggeredVelocity, ScalarField)> {
    let guess = ScalarField::zeros(grid);
    project_with_guess(grid, u_star, rho_field, &guess, cfg).map(|(u, q, _)| (u, q))
}

pub fn project_with_guess(
    grid: &Grid,
    u_star: &StaggeredVelocity,
    rho_field: &ScalarField,
    guess: &ScalarField,
    cfg: &StepperConfig,
) -> Result<(StaggeredVelocity, ScalarField, SolveStats)> {
    grid.check_velocity(u_star)?;
    grid.check_scalar(rho_field)?;
    grid.check_scalar(guess)?;
    for j in 0..grid.ny {
        for i in 0..grid.nx {
            let value = rho_field.get(i, j);
            if !(value > 0.0) {
                return Err(AcnsError::NonPositiveDensity { i, j, value });
            }
        }
    }
    let mut div = ScalarField::zeros(grid);
    divergence_into(grid, u_star, &mut div);
    let inv_dt = 1.0 / cfg.dt;
    let mut b: Vec<f64> = div.interior().map(|d| -d * inv_dt).collect();
    let mean = b.iter().sum::<f64>() / b.len() as f64;
    b.iter_mut().for_each(|v| *v -= mean);

    let op = PressureOperator::new(grid, rho_field);
    let mut x = guess.interior_vec();
    let stats = solve_linear(
        &op,
        &b,
        &mut x,
        cfg.poisson_tol,
        cfg.poisson_max_iter,
        Method::Cg,
    )?;
    let mean_q = x.iter().sum::<f64>() / x.len() as f64;
    if mean_q != 0.0 {
        x.iter_mut().for_each(|v| *v -= mean_q);
    }
    let mut q = ScalarField::zeros(grid);
    q.set_interior(&x);

    let mut u = u_star.clone();
    for j in 0..grid.ny {
        for i in 1..grid.nx {
            let rho_f = 0.5 * (rho_field.get(i, j) + rho_field.get(i - 1, j));
            let g = (q.get(i, j) - q.get(i - 1, j)) / grid.hx;
            u.set_u(i, j, u_star.u(i, j) - cfg.dt * g / rho_f);
        }
    }
    for j in 1..grid.ny {
        for i in 0..grid.nx {
            let rho_f = 0.5 * (rho_field.get(i, j) + rho_field.get(i, j - 1));
            let g = (q.get(i, j) - q.get(i, j - 1)) / grid.hy;
            u.set_v(i, j, u_star.v(i, j) - cfg.dt * g / rho_f);
        }
    }
    u.apply_no_slip();
    Ok((u, q, stats))
}

/// Relative change `(|d phi| + |d u|) / (|phi| + |u|)` in the max norm.
pub(crate) fn relative_change(a: &SimState, b: &SimState) -> f64 {
    let dphi = a
        .phase
        .interior()
        .zip(b.phase.interior())
        .fold(0.0_f64, |m, (x, y)| m.max((x - y).abs()));
    let du = a
        .velocity
        .u_values()
        .zip(b.velocity.u_values())
        .chain(a.velocity.v_values().zip(b.velocity.v_values()))
        .fold(0.0_f64, |m, (x, y)| m.max((x - y).abs()));
    let scale = b.phase.max_abs() + b.velocity.max_abs();
    if dphi + du == 0.0 {
        0.0
    } else {
        (dphi + du) / scale
    }
}

/// Advances `state` by `cfg.dt`.
pub fn step(
    grid: &Grid,
    state: &SimState,
    cfg: &StepperConfig,
    params: &Params,
) -> Result<(SimState, StepReport)> {
    step_forced(grid, state, cfg, params, None)
}

/// [`step`] with optional body forces (used by the manufactured-solution
/// harness).
pub fn step_forced(
    grid: &Grid,
    state: &SimState,
    cfg: &StepperConfig,
    params: &Params,
    forcing: Option<&dyn Forcing>,
) -> Result<(SimState, StepReport)> {
    grid.check_velocity(&state.velocity)?;
    grid.check_scalar(&state.phase)?;
    grid.check_scalar(&state.pressure)?;
    let t_new = state.time + cfg.dt;
    let (f_mom, f_phase) = match forcing {
        Some(f) => (Some(f.momentum(grid, t_new)), Some(f.phase(grid, t_new))),
        None => (None, None),
    };

    let mut report = StepReport::default();
    let mut frozen = state.clone();
    let mut last_change = f64::INFINITY;
    for k in 1..=cfg.picard_max {
        let (phase, ps) = phase_step_inner(grid, state, &frozen, cfg, params, f_phase.as_ref())?;
        let (u_star, ms) =
            momentum_predict_inner(grid, state, &frozen, cfg, params, f_mom.as_ref())?;
        let rho_cells = frozen.phase.map(|psi| constitutive::rho(psi, params));
        let (velocity, pressure, qs) =
            project_with_guess(grid, &u_star, &rho_cells, &frozen.pressure, cfg)?;
        let next = SimState {
            velocity,
            pressure,
            phase,
            time: t_new,
        };
        let change = relative_change(&frozen, &next);
        report.picard_iters = k;
        report.picard_residual = change;
        report.phase_iterations += ps.iterations;
        report.momentum_iterations += ms.iterations;
        report.pressure_iterations += qs.iterations;
        frozen = next;
        if change < cfg.picard_tol {
            break;
        }
        if k > 1 && change >= last_change {
            report.stagnated = true;
            warn!(
                "Picard iteration stagnated at t = {t_new:e}: change {change:e} after {last_change:e}"
            );
        }
        last_change = change;
    }
    if !frozen.is_finite() {
        return Err(AcnsError::NonFinite("state after step"));
    }
    Ok((frozen, report))
}
