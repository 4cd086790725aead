//! Energy functionals, dissipation rates and structural monitors.
//!
//! Everything is a midpoint sum on the MAC grid. Face quantities are
//! weighted with face-averaged densities, so the kinetic energy computed here
//! is the one the momentum discretisation actually conserves. Time
//! derivatives are first-order backward differences of consecutive states.

use crate::constitutive::{self, Params};
use crate::error::{AcnsError, Result};
use crate::grid::{
    cell_to_faces, divergence, grad_norm_sq_scalar, grad_norm_sq_velocity, laplacian_dirichlet,
    laplacian_neumann, norm_sq_scalar, speed_sq, Grid, ScalarField, SimState, StaggeredVelocity,
};

/// Default weight of the higher-order terms in the dissipation functionals.
pub const DEFAULT_KAPPA: f64 = 1e-2;

/// Snapshot of every functional and monitor for one state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyReport {
    pub e_total: f64,
    pub d_dissipative: f64,
    pub e0: f64,
    /// Needs one previous state.
    pub d0: Option<f64>,
    /// The `kappa`-weighted part of `d0` (already included in it).
    pub d0_kappa: Option<f64>,
    pub e1: Option<f64>,
    /// Needs two previous states.
    pub d1: Option<f64>,
    pub global_e0: f64,
    pub global_d0: Option<f64>,
    pub div_max: f64,
    pub phi_min: f64,
    pub phi_max: f64,
    /// `||u|| / ||grad u||`; `None` for a fluid at rest.
    pub poincare_ratio: Option<f64>,
}

/// Ordered `(t, value)` samples with strictly increasing `t`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TimeSeries {
    samples: Vec<(f64, f64)>,
}

impl TimeSeries {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_samples(samples: Vec<(f64, f64)>) -> Result<Self> {
        let mut s = Self::new();
        for (t, v) in samples {
            s.push(t, v)?;
        }
        Ok(s)
    }

    pub fn push(&mut self, t: f64, value: f64) -> Result<()> {
        if let Some(&(last, _)) = self.samples.last() {
            if !(t > last) {
                return Err(AcnsError::InvalidSeries(format!(
                    "time {t} does not increase past {last}"
                )));
            }
        }
        self.samples.push((t, value));
        Ok(())
    }

    pub fn samples(&self) -> &[(f64, f64)] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.samples.iter().map(|s| s.1)
    }

    pub fn max_value(&self) -> Option<f64> {
        self.values().reduce(f64::max)
    }
}

// ---------------------------------------------------------------------------
// Building blocks
// ---------------------------------------------------------------------------

/// `||u||^2` weighted by the face-averaged density field.
pub fn weighted_norm_sq(grid: &Grid, rho_cells: &ScalarField, u: &StaggeredVelocity) -> f64 {
    let rf = cell_to_faces(grid, rho_cells);
    let su: f64 = u
        .u_values()
        .zip(rf.u_values())
        .map(|(a, r)| r * a * a)
        .sum();
    let sv: f64 = u
        .v_values()
        .zip(rf.v_values())
        .map(|(a, r)| r * a * a)
        .sum();
    (su + sv) * grid.cell_area()
}

fn lap_norm_sq(grid: &Grid, s: &ScalarField) -> f64 {
    norm_sq_scalar(grid, &laplacian_neumann(grid, s).expect("sized"))
}

fn grad_lap_norm_sq(grid: &Grid, s: &ScalarField) -> f64 {
    grad_norm_sq_scalar(grid, &laplacian_neumann(grid, s).expect("sized"))
}

fn vector_lap_norm_sq(grid: &Grid, u: &StaggeredVelocity) -> f64 {
    let l = laplacian_dirichlet(grid, u).expect("sized");
    crate::grid::norm_sq_velocity(grid, &l)
}

fn h1_norm_sq(grid: &Grid, s: &ScalarField) -> f64 {
    norm_sq_scalar(grid, s) + grad_norm_sq_scalar(grid, s)
}

fn velocity_rate(a: &StaggeredVelocity, b: &StaggeredVelocity, dt: f64) -> StaggeredVelocity {
    b.axpy(-1.0, a).scale(1.0 / dt)
}

fn scalar_rate(a: &ScalarField, b: &ScalarField, dt: f64) -> ScalarField {
    b.zip_map(a, |x, y| (x - y) / dt)
}

fn check_history(history: &[SimState], needed: usize) -> Result<f64> {
    if history.len() < needed {
        return Err(AcnsError::InsufficientHistory {
            needed,
            have: history.len(),
        });
    }
    let n = history.len();
    let dt = history[n - 1].time - history[n - 2].time;
    if !(dt > 0.0) {
        return Err(AcnsError::InvalidSeries(format!(
            "history times must increase (dt = {dt})"
        )));
    }
    Ok(dt)
}

/// Material derivative of `phi` as given by the phase equation,
/// `gamma (lambda lap phi - lambda f'(phi) - rho'(phi) |u|^2 / 2)`.
pub fn material_derivative(grid: &Grid, state: &SimState, params: &Params) -> ScalarField {
    let lap = laplacian_neumann(grid, &state.phase).expect("sized");
    let speed = speed_sq(grid, &state.velocity);
    let mut out = ScalarField::zeros(grid);
    for j in 0..grid.ny {
        for i in 0..grid.nx {
            let phi = state.phase.get(i, j);
            let value = params.gamma
                * (params.lambda * lap.get(i, j)
                    - params.lambda * constitutive::f_prime(phi, params)
                    - constitutive::rho_prime(phi, params) * 0.5 * speed.get(i, j));
            out.set(i, j, value);
        }
    }
    out.apply_neumann();
    out
}

// ---------------------------------------------------------------------------
// Physical energy law
// ---------------------------------------------------------------------------

/// Kinetic plus free energy,
/// `sum rho|u|^2/2 + lambda (|grad phi|^2/2 + f(phi))`.
pub fn total_energy(grid: &Grid, state: &SimState, params: &Params) -> f64 {
    let rho = state.phase.map(|p| constitutive::rho(p, params));
    let kinetic = 0.5 * weighted_norm_sq(grid, &rho, &state.velocity);
    let potential: f64 = state
        .phase
        .interior()
        .map(|p| constitutive::f(p, params))
        .sum::<f64>()
        * grid.cell_area();
    let gradient = 0.5 * grad_norm_sq_scalar(grid, &state.phase);
    kinetic + params.lambda * (gradient + potential)
}

/// Viscous plus phase-relaxation dissipation, `mu |grad u|^2 + |phi_dot|^2 / gamma`.
pub fn dissipation_rate(grid: &Grid, state: &SimState, params: &Params) -> f64 {
    let viscous = params.mu * grad_norm_sq_velocity(grid, &state.velocity);
    let phi_dot = material_derivative(grid, state, params);
    viscous + norm_sq_scalar(grid, &phi_dot) / params.gamma
}

// ---------------------------------------------------------------------------
// Order-0 and order-1 functionals around phi itself
// ---------------------------------------------------------------------------

fn e_functional(
    grid: &Grid,
    rho: &ScalarField,
    u: &StaggeredVelocity,
    phi: &ScalarField,
    params: &Params,
) -> f64 {
    let gl = params.gamma_lambda();
    weighted_norm_sq(grid, rho, u)
        + params.mu * grad_norm_sq_velocity(grid, u)
        + norm_sq_scalar(grid, phi)
        + (gl + 1.0) * grad_norm_sq_scalar(grid, phi)
        + gl * lap_norm_sq(grid, phi)
}

/// Returns `(total, kappa part)`.
#[allow(clippy::too_many_arguments)]
fn d_functional(
    grid: &Grid,
    rho: &ScalarField,
    u: &StaggeredVelocity,
    u_t: &StaggeredVelocity,
    phi: &ScalarField,
    phi_t: &ScalarField,
    p: &ScalarField,
    params: &Params,
    kappa: f64,
) -> (f64, f64) {
    let gl = params.gamma_lambda();
    let base = params.mu * grad_norm_sq_velocity(grid, u)
        + weighted_norm_sq(grid, rho, u_t)
        + gl * grad_norm_sq_scalar(grid, phi)
        + norm_sq_scalar(grid, phi_t)
        + gl * lap_norm_sq(grid, phi)
        + grad_norm_sq_scalar(grid, phi_t);
    let high =
        kappa * (vector_lap_norm_sq(grid, u) + grad_lap_norm_sq(grid, phi) + h1_norm_sq(grid, p));
    (base + high, high)
}

pub fn functional_e0(grid: &Grid, state: &SimState, params: &Params) -> f64 {
    let rho = state.phase.map(|p| constitutive::rho(p, params));
    e_functional(grid, &rho, &state.velocity, &state.phase, params)
}

/// `D_0` of the newest state in `history`, with `u_t`, `phi_t` from the last
/// two entries. Returns `(D_0, kappa part)`.
pub fn functional_d0(
    grid: &Grid,
    history: &[SimState],
    params: &Params,
    kappa: f64,
) -> Result<(f64, f64)> {
    let dt = check_history(history, 2)?;
    let n = history.len();
    let (prev, cur) = (&history[n - 2], &history[n - 1]);
    let rho = cur.phase.map(|p| constitutive::rho(p, params));
    let u_t = velocity_rate(&prev.velocity, &cur.velocity, dt);
    let phi_t = scalar_rate(&prev.phase, &cur.phase, dt);
    Ok(d_functional(
        grid,
        &rho,
        &cur.velocity,
        &u_t,
        &cur.phase,
        &phi_t,
        &cur.pressure,
        params,
        kappa,
    ))
}

/// `E_1`: the order-0 structure applied to `(u_t, phi_t)`.
pub fn functional_e1(grid: &Grid, history: &[SimState], params: &Params) -> Result<f64> {
    let dt = check_history(history, 2)?;
    let n = history.len();
    let (prev, cur) = (&history[n - 2], &history[n - 1]);
    let rho = cur.phase.map(|p| constitutive::rho(p, params));
    let u_t = velocity_rate(&prev.velocity, &cur.velocity, dt);
    let phi_t = scalar_rate(&prev.phase, &cur.phase, dt);
    Ok(e_functional(grid, &rho, &u_t, &phi_t, params))
}

/// `D_1`, needing three consecutive states for the second time derivatives.
pub fn functional_d1(
    grid: &Grid,
    history: &[SimState],
    params: &Params,
    kappa: f64,
) -> Result<f64> {
    let dt = check_history(history, 3)?;
    let n = history.len();
    let (a, b, c) = (&history[n - 3], &history[n - 2], &history[n - 1]);
    let dt_prev = b.time - a.time;
    let rho = c.phase.map(|p| constitutive::rho(p, params));
    let u_t = velocity_rate(&b.velocity, &c.velocity, dt);
    let u_t_prev = velocity_rate(&a.velocity, &b.velocity, dt_prev);
    let u_tt = velocity_rate(&u_t_prev, &u_t, dt);
    let phi_t = scalar_rate(&b.phase, &c.phase, dt);
    let phi_t_prev = scalar_rate(&a.phase, &b.phase, dt_prev);
    let phi_tt = scalar_rate(&phi_t_prev, &phi_t, dt);
    let p_t = scalar_rate(&b.pressure, &c.pressure, dt);
    Ok(d_functional(
        grid, &rho, &u_t, &u_tt, &phi_t, &phi_tt, &p_t, params, kappa,
    )
    .0)
}

// ---------------------------------------------------------------------------
// Functionals of the perturbation around the selected equilibrium
// ---------------------------------------------------------------------------

/// Weights `mu0`, `mu1`, `mu2` of the perturbation functionals.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GlobalWeights {
    pub mu0: f64,
    pub mu1: f64,
    pub mu2: f64,
}

pub fn global_weights(params: &Params) -> GlobalWeights {
    let gl = params.gamma_lambda();
    let damping = params.damping();
    GlobalWeights {
        mu0: 1.0 + damping,
        mu1: 1.0 + gl + damping,
        mu2: gl + damping,
    }
}

/// `varphi = phi - (+/-1)` for the branch in `params`.
pub fn perturbation(state: &SimState, params: &Params) -> ScalarField {
    let s = params.branch.sign();
    state.phase.map(|p| p - s)
}

/// Perturbation energy: zero exactly at the equilibrium `(0, +/-1)`.
pub fn functional_global_e(grid: &Grid, state: &SimState, params: &Params) -> f64 {
    let w = global_weights(params);
    let varphi = perturbation(state, params);
    let rho = varphi.map(|v| constitutive::varrho(v, params));
    weighted_norm_sq(grid, &rho, &state.velocity)
        + params.mu * grad_norm_sq_velocity(grid, &state.velocity)
        + w.mu0 * norm_sq_scalar(grid, &varphi)
        + w.mu1 * grad_norm_sq_scalar(grid, &varphi)
        + params.gamma_lambda() * lap_norm_sq(grid, &varphi)
}

/// Perturbation dissipation of the newest state in `history`.
pub fn functional_global_d(
    grid: &Grid,
    history: &[SimState],
    params: &Params,
    kappa: f64,
) -> Result<f64> {
    let dt = check_history(history, 2)?;
    let n = history.len();
    let (prev, cur) = (&history[n - 2], &history[n - 1]);
    let w = global_weights(params);
    let gl = params.gamma_lambda();
    let varphi = perturbation(cur, params);
    let varphi_t = scalar_rate(&perturbation(prev, params), &varphi, dt);
    let rho = varphi.map(|v| constitutive::varrho(v, params));
    let u = &cur.velocity;
    let u_t = velocity_rate(&prev.velocity, u, dt);
    Ok(params.mu * grad_norm_sq_velocity(grid, u)
        + weighted_norm_sq(grid, &rho, &u_t)
        + params.damping() * norm_sq_scalar(grid, &varphi)
        + w.mu2 * grad_norm_sq_scalar(grid, &varphi)
        + norm_sq_scalar(grid, &varphi_t)
        + gl * lap_norm_sq(grid, &varphi)
        + grad_norm_sq_scalar(grid, &varphi_t)
        + kappa
            * (vector_lap_norm_sq(grid, u)
                + grad_lap_norm_sq(grid, &varphi)
                + h1_norm_sq(grid, &cur.pressure)))
}

// ---------------------------------------------------------------------------
// Monitors
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Monitors {
    pub div_max: f64,
    pub phi_min: f64,
    pub phi_max: f64,
    pub poincare_ratio: Option<f64>,
}

impl Monitors {
    /// `max(0, ||phi||_inf - 1)`.
    pub fn overshoot(&self) -> f64 {
        (self.phi_max.abs().max(self.phi_min.abs()) - 1.0).max(0.0)
    }
}

/// `||u|| / ||grad u||`, or `None` when `grad u` vanishes.
pub fn poincare_ratio(grid: &Grid, u: &StaggeredVelocity) -> Option<f64> {
    let g = grad_norm_sq_velocity(grid, u);
    if g > 0.0 {
        Some((crate::grid::norm_sq_velocity(grid, u) / g).sqrt())
    } else {
        None
    }
}

/// Poincare ratio of the lowest no-slip mode `sin(pi x/lx) sin(pi y/ly)`
/// (both components). On this grid it is a discrete eigenfunction of the
/// wall-reflected Laplacian, so the value is the grid's Poincare constant.
pub fn poincare_reference(grid: &Grid) -> f64 {
    let (kx, ky) = (
        std::f64::consts::PI / grid.lx,
        std::f64::consts::PI / grid.ly,
    );
    let mode = |x: f64, y: f64| (kx * x).sin() * (ky * y).sin();
    let u = grid.sample_velocity(mode, mode);
    poincare_ratio(grid, &u).expect("nonzero mode")
}

pub fn monitors(grid: &Grid, state: &SimState) -> Monitors {
    let div = divergence(grid, &state.velocity).expect("sized");
    Monitors {
        div_max: div.max_abs(),
        phi_min: state.phase.min(),
        phi_max: state.phase.max(),
        poincare_ratio: poincare_ratio(grid, &state.velocity),
    }
}

/// Every functional and monitor for the newest state in `history`; the
/// history-dependent entries are `None` when too few states are present.
pub fn energy_report(
    grid: &Grid,
    history: &[SimState],
    params: &Params,
    kappa: f64,
) -> Result<EnergyReport> {
    let state = history
        .last()
        .ok_or(AcnsError::InsufficientHistory { needed: 1, have: 0 })?;
    let m = monitors(grid, state);
    let d0 = functional_d0(grid, history, params, kappa).ok();
    Ok(EnergyReport {
        e_total: total_energy(grid, state, params),
        d_dissipative: dissipation_rate(grid, state, params),
        e0: functional_e0(grid, state, params),
        d0: d0.map(|d| d.0),
        d0_kappa: d0.map(|d| d.1),
        e1: functional_e1(grid, history, params).ok(),
        d1: functional_d1(grid, history, params, kappa).ok(),
        global_e0: functional_global_e(grid, state, params),
        global_d0: functional_global_d(grid, history, params, kappa).ok(),
        div_max: m.div_max,
        phi_min: m.phi_min,
        phi_max: m.phi_max,
        poincare_ratio: m.poincare_ratio,
    })
}

// ---------------------------------------------------------------------------
// Energy balance and decay
// ---------------------------------------------------------------------------

/// Residual of one step of the energy law,
/// `(E(t+dt) - E(t)) / dt + D(t+dt)`.
pub fn balance_residual(grid: &Grid, before: &SimState, after: &SimState, params: &Params) -> f64 {
    let dt = after.time - before.time;
    (total_energy(grid, after, params) - total_energy(grid, before, params)) / dt
        + dissipation_rate(grid, after, params)
}

/// Energy-law residuals along a uniformly spaced history, stamped with the
/// later time of each pair.
pub fn energy_balance_audit(
    grid: &Grid,
    history: &[SimState],
    params: &Params,
) -> Result<TimeSeries> {
    let dt = check_history(history, 2)?;
    let energies: Vec<f64> = history
        .iter()
        .map(|s| total_energy(grid, s, params))
        .collect();
    let mut out = TimeSeries::new();
    for k in 1..history.len() {
        let step = history[k].time - history[k - 1].time;
        if (step - dt).abs() > 1e-9 * dt {
            return Err(AcnsError::InvalidSeries(format!(
                "non-uniform history: step {step} vs {dt}"
            )));
        }
        let residual =
            (energies[k] - energies[k - 1]) / step + dissipation_rate(grid, &history[k], params);
        out.push(history[k].time, residual)?;
    }
    Ok(out)
}

/// Least-squares fit of `log(value) = intercept - rate * t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecayFit {
    pub rate: f64,
    pub intercept: f64,
    /// `None` when the log-values have zero variance (nothing to explain).
    pub r_squared: Option<f64>,
    pub samples: usize,
}

/// Fits an exponential to the samples with `t1 <= t <= t2`.
pub fn decay_fit(series: &TimeSeries, window: (f64, f64)) -> Result<DecayFit> {
    let (t1, t2) = window;
    let pts: Vec<(f64, f64)> = series
        .samples()
        .iter()
        .copied()
        .filter(|&(t, _)| t >= t1 && t <= t2)
        .collect();
    if pts.len() < 10 {
        return Err(AcnsError::InvalidSeries(format!(
            "decay fit needs at least 10 samples in the window, got {}",
            pts.len()
        )));
    }
    if let Some(&(t, v)) = pts.iter().find(|&&(_, v)| !(v > 0.0)) {
        return Err(AcnsError::InvalidSeries(format!(
            "non-positive value {v} at t = {t}"
        )));
    }
    let n = pts.len() as f64;
    let mean_t = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let mean_y = pts.iter().map(|p| p.1.ln()).sum::<f64>() / n;
    let (mut stt, mut sty, mut syy) = (0.0, 0.0, 0.0);
    for &(t, v) in &pts {
        let (dt, dy) = (t - mean_t, v.ln() - mean_y);
        stt += dt * dt;
        sty += dt * dy;
        syy += dy * dy;
    }
    let slope = sty / stt;
    let intercept = mean_y - slope * mean_t;
    let r_squared = if syy > 0.0 {
        let ss_res: f64 = pts
            .iter()
            .map(|&(t, v)| {
                let e = v.ln() - (intercept + slope * t);
                e * e
            })
            .sum();
        Some((1.0 - ss_res / syy).clamp(0.0, 1.0))
    } else {
        None
    };
    Ok(DecayFit {
        rate: if slope == 0.0 { 0.0 } else { -slope },
        intercept,
        r_squared,
        samples: pts.len(),
    })
}
