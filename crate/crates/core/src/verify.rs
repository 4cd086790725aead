//! Manufactured solutions, convergence studies and the perturbed-variable
//! cross-check.
//!
//! Analytic fields are sums of separable products `a X(x) Y(y) T(t)` whose
//! factors are finite cosine series, so every derivative is exact and
//! closed-form.

use std::f64::consts::{FRAC_PI_2, PI};
use std::fmt::Write as _;

use crate::constitutive::{self, Params};
use crate::error::{AcnsError, Result};
use crate::grid::{speed_sq, Grid, ScalarField, SimState, StaggeredVelocity};
use crate::solver::SolveStats;
use crate::stepper::{
    self, project_with_guess, solve_momentum_system, solve_phase_system, Forcing, StepperConfig,
};

/// Finite series `sum c cos(k s + theta)` in one variable.
#[derive(Debug, Clone, PartialEq)]
pub struct Trig {
    terms: Vec<(f64, f64, f64)>,
}

impl Trig {
    pub fn constant(c: f64) -> Self {
        Self {
            terms: vec![(c, 0.0, 0.0)],
        }
    }

    pub fn cos(k: f64) -> Self {
        Self {
            terms: vec![(1.0, k, 0.0)],
        }
    }

    pub fn sin(k: f64) -> Self {
        Self {
            terms: vec![(1.0, k, -FRAC_PI_2)],
        }
    }

    /// `sin^2(k s) = 1/2 - cos(2 k s) / 2`.
    pub fn sin_sq(k: f64) -> Self {
        Self {
            terms: vec![(0.5, 0.0, 0.0), (-0.5, 2.0 * k, 0.0)],
        }
    }

    /// `self + c`.
    pub fn shifted(mut self, c: f64) -> Self {
        self.terms.push((c, 0.0, 0.0));
        self
    }

    pub fn scaled(mut self, a: f64) -> Self {
        self.terms.iter_mut().for_each(|t| t.0 *= a);
        self
    }

    pub fn derivative(&self) -> Self {
        Self {
            terms: self
                .terms
                .iter()
                .filter(|t| t.1 != 0.0)
                .map(|&(c, k, th)| (c * k, k, th + FRAC_PI_2))
                .collect(),
        }
    }

    /// `n`-th derivative at `s`.
    pub fn eval(&self, s: f64, n: u32) -> f64 {
        self.terms
            .iter()
            .map(|&(c, k, th)| {
                if n == 0 {
                    c * (k * s + th).cos()
                } else if k == 0.0 {
                    0.0
                } else {
                    c * k.powi(n as i32) * (k * s + th + n as f64 * FRAC_PI_2).cos()
                }
            })
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Term {
    amp: f64,
    x: Trig,
    y: Trig,
    t: Trig,
}

/// Sum of separable space-time products.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Field {
    terms: Vec<Term>,
}

impl Field {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn product(amp: f64, x: Trig, y: Trig, t: Trig) -> Self {
        Self {
            terms: vec![Term { amp, x, y, t }],
        }
    }

    pub fn plus(mut self, other: Field) -> Self {
        self.terms.extend(other.terms);
        self
    }

    /// Mixed partial derivative of orders `(nx, ny, nt)`.
    pub fn d(&self, x: f64, y: f64, t: f64, nx: u32, ny: u32, nt: u32) -> f64 {
        self.terms
            .iter()
            .map(|m| m.amp * m.x.eval(x, nx) * m.y.eval(y, ny) * m.t.eval(t, nt))
            .sum()
    }

    pub fn value(&self, x: f64, y: f64, t: f64) -> f64 {
        self.d(x, y, t, 0, 0, 0)
    }

    pub fn laplacian(&self, x: f64, y: f64, t: f64) -> f64 {
        self.d(x, y, t, 2, 0, 0) + self.d(x, y, t, 0, 2, 0)
    }

    fn d_dx(&self) -> Self {
        self.map_terms(|m| Term {
            x: m.x.derivative(),
            ..m.clone()
        })
    }

    fn d_dy(&self) -> Self {
        self.map_terms(|m| Term {
            y: m.y.derivative(),
            ..m.clone()
        })
    }

    fn map_terms(&self, g: impl Fn(&Term) -> Term) -> Self {
        Self {
            terms: self.terms.iter().map(g).collect(),
        }
    }
}

/// A closed-form `(u, v, p, phi)` with no-slip velocity, zero normal phase
/// derivative at the walls and identically zero divergence.
#[derive(Debug, Clone, PartialEq)]
pub struct ManufacturedCase {
    pub name: &'static str,
    pub u: Field,
    pub v: Field,
    pub p: Field,
    pub phi: Field,
}

impl ManufacturedCase {
    pub const NAMES: [&'static str; 4] = ["zero", "phase", "stokes", "swirl"];

    fn from_stream(name: &'static str, psi: Field, p: Field, phi: Field) -> Self {
        Self {
            name,
            u: psi.d_dy(),
            v: psi.d_dx().map_terms(|m| Term {
                amp: -m.amp,
                ..m.clone()
            }),
            p,
            phi,
        }
    }

    /// Equilibrium `u = 0`, `p = 0`, `phi = 1`.
    pub fn zero() -> Self {
        Self {
            name: "zero",
            u: Field::zero(),
            v: Field::zero(),
            p: Field::zero(),
            phi: Field::product(
                1.0,
                Trig::constant(1.0),
                Trig::constant(1.0),
                Trig::constant(1.0),
            ),
        }
    }

    /// Fluid at rest, time-dependent phase `cos(pi x/lx) cos(pi y/ly) g(t)`.
    pub fn phase_diffusion(lx: f64, ly: f64) -> Self {
        let phi = Field::product(
            0.6,
            Trig::cos(PI / lx),
            Trig::cos(PI / ly),
            Trig::sin(2.0).scaled(0.5).shifted(1.0),
        );
        Self {
            name: "phase",
            u: Field::zero(),
            v: Field::zero(),
            p: Field::zero(),
            phi,
        }
    }

    /// Steady cellular flow in a single uniform fluid.
    pub fn stokes(lx: f64, ly: f64) -> Self {
        let one = || Trig::constant(1.0);
        let psi = Field::product(0.5, Trig::sin_sq(PI / lx), Trig::sin_sq(PI / ly), one());
        let p = Field::product(0.5, Trig::cos(PI / lx), Trig::cos(PI / ly), one());
        let phi = Field::product(1.0, one(), one(), one());
        Self::from_stream("stokes", psi, p, phi)
    }

    /// Time-dependent swirl from the stream function
    /// `sin^2(pi x/lx) sin^2(pi y/ly) g(t)` advecting a cosine phase bump.
    pub fn swirl(lx: f64, ly: f64) -> Self {
        let psi = Field::product(
            0.5,
            Trig::sin_sq(PI / lx),
            Trig::sin_sq(PI / ly),
            Trig::sin(4.0).scaled(0.5).shifted(1.0),
        );
        let p = Field::product(
            0.3,
            Trig::cos(2.0 * PI / lx),
            Trig::cos(PI / ly),
            Trig::cos(3.0),
        );
        let phi = Field::product(
            0.5,
            Trig::cos(PI / lx),
            Trig::cos(2.0 * PI / ly),
            Trig::cos(3.0).scaled(0.4).shifted(1.0),
        )
        .plus(Field::product(
            0.2,
            Trig::constant(1.0),
            Trig::constant(1.0),
            Trig::constant(1.0),
        ));
        Self::from_stream("swirl", psi, p, phi)
    }

    pub fn by_name(name: &str, lx: f64, ly: f64) -> Result<Self> {
        match name {
            "zero" => Ok(Self::zero()),
            "phase" => Ok(Self::phase_diffusion(lx, ly)),
            "stokes" => Ok(Self::stokes(lx, ly)),
            "swirl" => Ok(Self::swirl(lx, ly)),
            other => Err(AcnsError::InitialCondition(format!(
                "unknown manufactured case '{other}' (expected one of {:?})",
                Self::NAMES
            ))),
        }
    }

    pub fn divergence(&self, x: f64, y: f64, t: f64) -> f64 {
        self.u.d(x, y, t, 1, 0, 0) + self.v.d(x, y, t, 0, 1, 0)
    }

    /// The analytic fields sampled on `grid`.
    pub fn state(&self, grid: &Grid, t: f64) -> SimState {
        let mut p = grid.sample_scalar(|x, y| self.p.value(x, y, t));
        let mean = p.mean();
        p = p.map(|q| q - mean);
        SimState {
            velocity: grid
                .sample_velocity(|x, y| self.u.value(x, y, t), |x, y| self.v.value(x, y, t)),
            pressure: p,
            phase: grid.sample_scalar(|x, y| self.phi.value(x, y, t)),
            time: t,
        }
    }

    /// Residual of the momentum equation, x and y components.
    pub fn momentum_residual(&self, x: f64, y: f64, t: f64, params: &Params) -> (f64, f64) {
        let (u, v) = (self.u.value(x, y, t), self.v.value(x, y, t));
        let phi = self.phi.value(x, y, t);
        let rho = constitutive::rho(phi, params);
        let cap = params.lambda * self.phi.laplacian(x, y, t);
        let comp = |w: &Field, dp: f64, dphi: f64| {
            let material =
                w.d(x, y, t, 0, 0, 1) + u * w.d(x, y, t, 1, 0, 0) + v * w.d(x, y, t, 0, 1, 0);
            rho * material + dp - params.mu * w.laplacian(x, y, t) + cap * dphi
        };
        (
            comp(
                &self.u,
                self.p.d(x, y, t, 1, 0, 0),
                self.phi.d(x, y, t, 1, 0, 0),
            ),
            comp(
                &self.v,
                self.p.d(x, y, t, 0, 1, 0),
                self.phi.d(x, y, t, 0, 1, 0),
            ),
        )
    }

    /// Residual of the phase equation.
    pub fn phase_residual(&self, x: f64, y: f64, t: f64, params: &Params) -> f64 {
        let (u, v) = (self.u.value(x, y, t), self.v.value(x, y, t));
        let phi = self.phi.value(x, y, t);
        let material = self.phi.d(x, y, t, 0, 0, 1)
            + u * self.phi.d(x, y, t, 1, 0, 0)
            + v * self.phi.d(x, y, t, 0, 1, 0);
        material
            - params.gamma
                * (params.lambda * self.phi.laplacian(x, y, t)
                    - params.lambda * constitutive::f_prime(phi, params)
                    - constitutive::rho_prime(phi, params) * 0.5 * (u * u + v * v))
    }

    /// Discrete-vs-analytic errors of a computed state at its own time.
    pub fn errors(&self, grid: &Grid, state: &SimState) -> CaseErrors {
        let exact = self.state(grid, state.time);
        let area = grid.cell_area();
        let (mut phi_sq, mut phi_inf) = (0.0_f64, 0.0_f64);
        for (a, b) in state.phase.interior().zip(exact.phase.interior()) {
            phi_sq += (a - b) * (a - b);
            phi_inf = phi_inf.max((a - b).abs());
        }
        let (mut u_sq, mut u_inf) = (0.0_f64, 0.0_f64);
        let pairs = state
            .velocity
            .u_values()
            .zip(exact.velocity.u_values())
            .chain(state.velocity.v_values().zip(exact.velocity.v_values()));
        for (a, b) in pairs {
            u_sq += (a - b) * (a - b);
            u_inf = u_inf.max((a - b).abs());
        }
        CaseErrors {
            u_l2: (u_sq * area).sqrt(),
            u_inf,
            phi_l2: (phi_sq * area).sqrt(),
            phi_inf,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CaseErrors {
    pub u_l2: f64,
    pub u_inf: f64,
    pub phi_l2: f64,
    pub phi_inf: f64,
}

/// Forcing that makes a [`ManufacturedCase`] an exact solution.
pub struct MmsForcing<'a> {
    pub case: &'a ManufacturedCase,
    pub params: Params,
}

impl Forcing for MmsForcing<'_> {
    fn momentum(&self, grid: &Grid, t: f64) -> StaggeredVelocity {
        mms_forcing(self.case, grid, t, &self.params).0
    }

    fn phase(&self, grid: &Grid, t: f64) -> ScalarField {
        mms_forcing(self.case, grid, t, &self.params).1
    }
}

/// Momentum forcing on the faces and phase forcing at cell centres.
pub fn mms_forcing(
    case: &ManufacturedCase,
    grid: &Grid,
    t: f64,
    params: &Params,
) -> (StaggeredVelocity, ScalarField) {
    let fm = grid.sample_velocity(
        |x, y| case.momentum_residual(x, y, t, params).0,
        |x, y| case.momentum_residual(x, y, t, params).1,
    );
    let fp = grid.sample_scalar(|x, y| case.phase_residual(x, y, t, params));
    (fm, fp)
}

// ---------------------------------------------------------------------------
// Convergence studies
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Refinement {
    Space,
    Time,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvergenceRow {
    pub nx: usize,
    pub ny: usize,
    pub dt: f64,
    pub steps: usize,
    pub errors: CaseErrors,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceReport {
    pub case: &'static str,
    pub refinement: Refinement,
    pub rows: Vec<ConvergenceRow>,
    /// Least-squares slopes of `log(error)` against `log(h)` or `log(dt)`;
    /// `None` when an error vanishes.
    pub order_u_l2: Option<f64>,
    pub order_u_inf: Option<f64>,
    pub order_phi_l2: Option<f64>,
    pub order_phi_inf: Option<f64>,
    /// Time refinement only: slopes of the L2 differences between successive
    /// runs, which cancel the spatial error common to all of them.
    pub self_order_u: Option<f64>,
    pub self_order_phi: Option<f64>,
}

impl ConvergenceReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from(
            "case,refinement,nx,ny,dt,steps,err_u_l2,err_u_inf,err_phi_l2,err_phi_inf\n",
        );
        let kind = match self.refinement {
            Refinement::Space => "space",
            Refinement::Time => "time",
        };
        for r in &self.rows {
            let e = r.errors;
            let _ = writeln!(
                s,
                "{},{kind},{},{},{:e},{},{:e},{:e},{:e},{:e}",
                self.case, r.nx, r.ny, r.dt, r.steps, e.u_l2, e.u_inf, e.phi_l2, e.phi_inf
            );
        }
        let fmt = |o: Option<f64>| o.map(|v| format!("{v:.4}")).unwrap_or_default();
        let _ = writeln!(
            s,
            "{},{kind},order,,,,{},{},{},{}",
            self.case,
            fmt(self.order_u_l2),
            fmt(self.order_u_inf),
            fmt(self.order_phi_l2),
            fmt(self.order_phi_inf)
        );
        if self.refinement == Refinement::Time {
            let _ = writeln!(
                s,
                "{},{kind},self_order,,,,{},,{},",
                self.case,
                fmt(self.self_order_u),
                fmt(self.self_order_phi)
            );
        }
        s
    }
}

fn fitted_slope(xs: &[f64], ys: &[f64]) -> Option<f64> {
    if ys.iter().any(|&y| !(y > 0.0)) {
        return None;
    }
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let n = lx.len() as f64;
    let (mx, my) = (lx.iter().sum::<f64>() / n, ly.iter().sum::<f64>() / n);
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

/// Runs `case` from its exact initial data to `t_end` on each
/// `(grids[k], dts[k])` pair. Orders are fitted against `h` when the grids
/// differ, otherwise against `dt`.
pub fn convergence_study(
    case: &ManufacturedCase,
    grids: &[Grid],
    dts: &[f64],
    t_end: f64,
    cfg: &StepperConfig,
    params: &Params,
) -> Result<ConvergenceReport> {
    if grids.len() < 3 || grids.len() != dts.len() {
        return Err(AcnsError::InvalidParams(format!(
            "convergence study needs at least 3 matching (grid, dt) pairs, got {} grids and {} dts",
            grids.len(),
            dts.len()
        )));
    }
    if !(t_end > 0.0) {
        return Err(AcnsError::InvalidParams("t_end must be > 0".into()));
    }
    let forcing = MmsForcing {
        case,
        params: *params,
    };
    let mut rows = Vec::with_capacity(grids.len());
    let mut finals = Vec::with_capacity(grids.len());
    for (grid, &dt_target) in grids.iter().zip(dts) {
        let steps = (t_end / dt_target).round().max(1.0) as usize;
        let step_cfg = StepperConfig {
            dt: t_end / steps as f64,
            ..*cfg
        };
        step_cfg.validate()?;
        let mut state = case.state(grid, 0.0);
        for _ in 0..steps {
            state = stepper::step_forced(grid, &state, &step_cfg, params, Some(&forcing))?.0;
        }
        state.time = t_end;
        rows.push(ConvergenceRow {
            nx: grid.nx,
            ny: grid.ny,
            dt: step_cfg.dt,
            steps,
            errors: case.errors(grid, &state),
        });
        finals.push(state);
    }
    let same_grid = grids.iter().all(|g| g == &grids[0]);
    let (refinement, xs): (Refinement, Vec<f64>) = if same_grid {
        (Refinement::Time, rows.iter().map(|r| r.dt).collect())
    } else {
        (Refinement::Space, grids.iter().map(|g| g.h_min()).collect())
    };
    let (mut self_order_u, mut self_order_phi) = (None, None);
    if refinement == Refinement::Time {
        let grid = &grids[0];
        let area = grid.cell_area();
        let (mut du, mut dphi) = (Vec::new(), Vec::new());
        for w in finals.windows(2) {
            let diff_phi: f64 = w[0]
                .phase
                .interior()
                .zip(w[1].phase.interior())
                .map(|(a, b)| (a - b).powi(2))
                .sum();
            let diff_u: f64 = w[0]
                .velocity
                .u_values()
                .zip(w[1].velocity.u_values())
                .chain(w[0].velocity.v_values().zip(w[1].velocity.v_values()))
                .map(|(a, b)| (a - b).powi(2))
                .sum();
            dphi.push((diff_phi * area).sqrt());
            du.push((diff_u * area).sqrt());
        }
        let coarse_dts = &xs[..xs.len() - 1];
        self_order_u = fitted_slope(coarse_dts, &du);
        self_order_phi = fitted_slope(coarse_dts, &dphi);
    }
    let order = |pick: fn(&CaseErrors) -> f64| {
        let ys: Vec<f64> = rows.iter().map(|r| pick(&r.errors)).collect();
        fitted_slope(&xs, &ys)
    };
    Ok(ConvergenceReport {
        case: case.name,
        refinement,
        order_u_l2: order(|e| e.u_l2),
        order_u_inf: order(|e| e.u_inf),
        order_phi_l2: order(|e| e.phi_l2),
        order_phi_inf: order(|e| e.phi_inf),
        self_order_u,
        self_order_phi,
        rows,
    })
}

// ---------------------------------------------------------------------------
// Perturbed-variable path
// ---------------------------------------------------------------------------

/// One step of the system written for `varphi = phi - (+/-1)`: the reaction
/// is split into the linear damping `2 gamma lambda / eps^2 varphi` and
/// `gamma lambda h(varphi)`, and densities come from `varrho`. `state.phase`
/// holds `varphi`.
pub fn perturbed_step(
    grid: &Grid,
    state: &SimState,
    cfg: &StepperConfig,
    params: &Params,
) -> Result<SimState> {
    let t_new = state.time + cfg.dt;
    let inv_dt = 1.0 / cfg.dt;
    let gl = params.gamma_lambda();
    let mut frozen = state.clone();
    for _ in 0..cfg.picard_max {
        let speed = speed_sq(grid, &frozen.velocity);
        let mut rhs = ScalarField::zeros(grid);
        for j in 0..grid.ny {
            for i in 0..grid.nx {
                let psi = frozen.phase.get(i, j);
                let r = state.phase.get(i, j) * inv_dt
                    - params.damping() * psi
                    - gl * constitutive::h(psi, params)
                    - params.gamma
                        * constitutive::varrho_prime(psi, params)
                        * 0.5
                        * speed.get(i, j);
                rhs.set(i, j, r);
            }
        }
        rhs.apply_neumann();
        let (phase, _) = solve_phase_system(grid, &frozen.velocity, gl, &rhs, &frozen.phase, cfg)?;

        let rho_cells = frozen.phase.map(|v| constitutive::varrho(v, params));
        let mrhs = stepper::momentum_rhs(
            grid,
            &state.velocity,
            &rho_cells,
            &frozen.phase,
            cfg,
            params.lambda,
            None,
        );
        let (u_star, _): (StaggeredVelocity, SolveStats) = solve_momentum_system(
            grid,
            &frozen.velocity,
            &rho_cells,
            params.mu,
            &mrhs,
            &frozen.velocity,
            cfg,
        )?;
        let (velocity, pressure, _) =
            project_with_guess(grid, &u_star, &rho_cells, &frozen.pressure, cfg)?;
        let next = SimState {
            velocity,
            pressure,
            phase,
            time: t_new,
        };
        let change = stepper::relative_change(&frozen, &next);
        frozen = next;
        if change < cfg.picard_tol {
            break;
        }
    }
    Ok(frozen)
}

/// Largest discrepancies between the two formulations, each relative to the
/// size of the compared field.
#[derive(Debug, Clone, PartialEq)]
pub struct Discrepancy {
    pub phase: f64,
    pub velocity: f64,
    /// Per-step `max(phase, velocity)`.
    pub per_step: Vec<f64>,
}

impl Discrepancy {
    pub fn max(&self) -> f64 {
        self.phase.max(self.velocity)
    }
}

/// Advances `state` for `steps` steps through the original system and
/// through the perturbed one, comparing after every step. Linear solves use
/// a tolerance of at most `1e-13` and every Picard pass is taken, so the two
/// paths differ by rounding only.
pub fn perturbation_equivalence(
    grid: &Grid,
    state: &SimState,
    steps: usize,
    cfg: &StepperConfig,
    params: &Params,
) -> Result<Discrepancy> {
    let s = params.branch.sign();
    let off = state
        .phase
        .interior()
        .fold(0.0_f64, |m, p| m.max((p - s).abs()));
    if off > 0.5 {
        return Err(AcnsError::InitialCondition(format!(
            "phase departs {off} from the {} equilibrium (at most 0.5 allowed)",
            params.branch
        )));
    }
    let cfg = StepperConfig {
        poisson_tol: cfg.poisson_tol.min(1e-13),
        picard_tol: f64::MIN_POSITIVE,
        ..*cfg
    };
    let mut original = state.clone();
    let mut perturbed = state.clone();
    perturbed.phase = state.phase.map(|p| p - s);
    let mut out = Discrepancy {
        phase: 0.0,
        velocity: 0.0,
        per_step: Vec::with_capacity(steps),
    };
    for _ in 0..steps {
        original = stepper::step(grid, &original, &cfg, params)?.0;
        perturbed = perturbed_step(grid, &perturbed, &cfg, params)?;
        let dphi = original
            .phase
            .interior()
            .zip(perturbed.phase.interior())
            .fold(0.0_f64, |m, (a, b)| m.max((a - (b + s)).abs()));
        let du = original
            .velocity
            .u_values()
            .zip(perturbed.velocity.u_values())
            .chain(
                original
                    .velocity
                    .v_values()
                    .zip(perturbed.velocity.v_values()),
            )
            .fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()));
        let phase = dphi / original.phase.max_abs().max(f64::MIN_POSITIVE);
        let velocity = du / original.velocity.max_abs().max(1e-300);
        out.phase = out.phase.max(phase);
        out.velocity = out.velocity.max(velocity);
        out.per_step.push(phase.max(velocity));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constitutive::Branch;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cases() -> Vec<ManufacturedCase> {
        vec![
            ManufacturedCase::phase_diffusion(1.0, 0.8),
            ManufacturedCase::stokes(1.0, 0.8),
            ManufacturedCase::swirl(1.0, 0.8),
        ]
    }

    /// Sixth-order central difference.
    fn fd(g: impl Fn(f64) -> f64, s: f64) -> f64 {
        let h = 1e-3;
        let c = [(1.0, 45.0), (2.0, -9.0), (3.0, 1.0)];
        c.iter()
            .map(|&(k, w)| w * (g(s + k * h) - g(s - k * h)))
            .sum::<f64>()
            / (60.0 * h)
    }

    #[test]
    fn trig_derivatives_match_finite_differences() {
        let series = Trig::sin_sq(2.0).scaled(1.5).shifted(0.3);
        let d = series.derivative();
        for s in [0.0, 0.3, 1.1] {
            assert!((d.eval(s, 0) - series.eval(s, 1)).abs() < 1e-12);
            assert!((fd(|z| series.eval(z, 0), s) - series.eval(s, 1)).abs() < 1e-8);
            assert!((fd(|z| series.eval(z, 1), s) - series.eval(s, 2)).abs() < 1e-8);
        }
        assert_eq!(Trig::constant(4.0).eval(0.7, 1), 0.0);
    }

    #[test]
    fn analytic_derivatives_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for case in cases() {
            for field in [&case.u, &case.v, &case.p, &case.phi] {
                for _ in 0..20 {
                    let (x, y, t) = (
                        rng.gen_range(0.0..1.0),
                        rng.gen_range(0.0..0.8),
                        rng.gen_range(0.0..1.0),
                    );
                    let checks = [
                        (field.d(x, y, t, 1, 0, 0), fd(|z| field.value(z, y, t), x)),
                        (field.d(x, y, t, 0, 1, 0), fd(|z| field.value(x, z, t), y)),
                        (field.d(x, y, t, 0, 0, 1), fd(|z| field.value(x, y, z), t)),
                        (
                            field.d(x, y, t, 2, 0, 0),
                            fd(|z| field.d(z, y, t, 1, 0, 0), x),
                        ),
                        (
                            field.d(x, y, t, 0, 2, 0),
                            fd(|z| field.d(x, z, t, 0, 1, 0), y),
                        ),
                    ];
                    for (exact, approx) in checks {
                        assert!(
                            (exact - approx).abs() < 1e-6,
                            "{}: {exact} vs {approx}",
                            case.name
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn cases_satisfy_boundary_conditions_and_incompressibility() {
        let (lx, ly) = (1.0, 0.8);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for case in cases() {
            for _ in 0..50 {
                let (x, y, t) = (
                    rng.gen_range(0.0..lx),
                    rng.gen_range(0.0..ly),
                    rng.gen_range(0.0..2.0),
                );
                assert!(case.divergence(x, y, t).abs() < 1e-12, "{}", case.name);
                for (bx, by) in [(0.0, y), (lx, y), (x, 0.0), (x, ly)] {
                    assert!(case.u.value(bx, by, t).abs() < 1e-12);
                    assert!(case.v.value(bx, by, t).abs() < 1e-12);
                }
                assert!(case.phi.d(0.0, y, t, 1, 0, 0).abs() < 1e-12);
                assert!(case.phi.d(lx, y, t, 1, 0, 0).abs() < 1e-12);
                assert!(case.phi.d(x, 0.0, t, 0, 1, 0).abs() < 1e-12);
                assert!(case.phi.d(x, ly, t, 0, 1, 0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_case_has_zero_forcing() {
        let g = Grid::unit_square(8).unwrap();
        for branch in [Branch::Plus, Branch::Minus] {
            let p = Params {
                branch,
                ..Params::default()
            };
            let (fm, fp) = mms_forcing(&ManufacturedCase::zero(), &g, 0.4, &p);
            assert_eq!(fm.max_abs(), 0.0);
            assert_eq!(fp.max_abs(), 0.0);
        }
    }

    #[test]
    fn phase_case_forcing_closed_form() {
        // phi = a c(x) c(y) g(t) at rest: F = phi_t - gl lap phi + gl f'(phi)
        let case = ManufacturedCase::phase_diffusion(1.0, 1.0);
        let p = Params::default();
        let gl = p.gamma_lambda();
        let (x, y, t): (f64, f64, f64) = (0.3, 0.65, 0.2);
        let c = (PI * x).cos() * (PI * y).cos();
        let g = 1.0 + 0.5 * (2.0 * t).sin();
        let phi = 0.6 * c * g;
        let phi_t = 0.6 * c * (2.0 * t).cos();
        let lap = -2.0 * PI * PI * phi;
        let expect = phi_t - gl * lap + gl * (phi * phi - 1.0) * phi / (p.epsilon * p.epsilon);
        assert!((case.phase_residual(x, y, t, &p) - expect).abs() < 1e-12);
        let cap_x = p.lambda * lap * 0.6 * -PI * (PI * x).sin() * (PI * y).cos() * g;
        assert!((case.momentum_residual(x, y, t, &p).0 - cap_x).abs() < 1e-12);
    }

    #[test]
    fn by_name_round_trip() {
        for name in ManufacturedCase::NAMES {
            assert_eq!(
                ManufacturedCase::by_name(name, 1.0, 1.0).unwrap().name,
                name
            );
        }
        assert!(ManufacturedCase::by_name("vortex", 1.0, 1.0).is_err());
    }

    #[test]
    fn study_rejects_short_lists() {
        let g = Grid::unit_square(8).unwrap();
        let case = ManufacturedCase::phase_diffusion(1.0, 1.0);
        let r = convergence_study(
            &case,
            &[g, g],
            &[0.1, 0.05],
            0.1,
            &StepperConfig::default(),
            &Params::default(),
        );
        assert!(r.is_err());
    }

    #[test]
    fn stokes_case_error_shrinks_under_refinement() {
        let p = Params::default();
        let case = ManufacturedCase::stokes(1.0, 1.0);
        let grids: Vec<Grid> = [8, 16, 32]
            .iter()
            .map(|&n| Grid::unit_square(n).unwrap())
            .collect();
        let report = convergence_study(
            &case,
            &grids,
            &[0.01; 3],
            0.05,
            &StepperConfig::default(),
            &p,
        )
        .unwrap();
        let e: Vec<f64> = report.rows.iter().map(|r| r.errors.u_l2).collect();
        assert!(e[0] > e[1] && e[1] > e[2], "{e:?}");
        assert!(report.order_u_l2.unwrap() > 1.5);
        assert_eq!(report.refinement, Refinement::Space);
        assert!(report.to_csv().lines().count() == 5);
    }

    #[test]
    fn equivalence_at_equilibrium_is_exact() {
        let g = Grid::unit_square(8).unwrap();
        for branch in [Branch::Plus, Branch::Minus] {
            let p = Params {
                branch,
                ..Params::default()
            };
            let s = SimState::at_rest(&g, ScalarField::constant(&g, branch.sign()));
            let d = perturbation_equivalence(&g, &s, 3, &StepperConfig::default(), &p).unwrap();
            assert_eq!(d.phase, 0.0);
            assert_eq!(d.velocity, 0.0);
        }
    }

    #[test]
    fn equivalence_rejects_far_states() {
        let g = Grid::unit_square(8).unwrap();
        let s = SimState::at_rest(&g, ScalarField::constant(&g, 0.2));
        assert!(
            perturbation_equivalence(&g, &s, 1, &StepperConfig::default(), &Params::default())
                .is_err()
        );
    }

    #[test]
    fn equivalence_on_small_random_perturbation() {
        let g = Grid::unit_square(16).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let p = Params::default();
        let mut phi = ScalarField::zeros(&g);
        for j in 0..16 {
            for i in 0..16 {
                phi.set(i, j, 1.0 - rng.gen_range(0.0..0.1));
            }
        }
        phi.apply_neumann();
        let s = SimState::at_rest(&g, phi);
        let d = perturbation_equivalence(&g, &s, 1, &StepperConfig::default(), &p).unwrap();
        assert!(d.max() <= 1e-10, "{d:?}");
    }
}
