//! Experiment driver: initial condition, time loop, `series.csv` and
//! snapshots.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use log::{info, warn};

use crate::config::{initial_condition, RunConfig};
use crate::diagnostics::{self, decay_fit, DecayFit, TimeSeries};
use crate::error::{AcnsError, Result};
use crate::grid::{Grid, SimState};
use crate::snapshot::snapshot_write;
use crate::stepper::{step, StepReport};

pub const SERIES_HEADER: &str = "t,e_total,d_dissipative,e0,d0,global_e0,div_max,phi_min,phi_max,poincare_ratio,picard_iters,balance_residual";

/// One row of `series.csv`. History-dependent entries are `None` on the
/// initial row.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeriesRow {
    pub step: usize,
    pub t: f64,
    pub e_total: f64,
    pub d_dissipative: f64,
    pub e0: f64,
    pub d0: Option<f64>,
    pub global_e0: f64,
    pub div_max: f64,
    pub phi_min: f64,
    pub phi_max: f64,
    pub poincare_ratio: Option<f64>,
    pub picard_iters: usize,
    pub balance_residual: Option<f64>,
}

impl SeriesRow {
    fn csv_line(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| format!("{x:e}")).unwrap_or_default();
        format!(
            "{:e},{:e},{:e},{:e},{},{:e},{:e},{:e},{:e},{},{},{}",
            self.t,
            self.e_total,
            self.d_dissipative,
            self.e0,
            opt(self.d0),
            self.global_e0,
            self.div_max,
            self.phi_min,
            self.phi_max,
            opt(self.poincare_ratio),
            self.picard_iters,
            opt(self.balance_residual)
        )
    }
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub output_dir: PathBuf,
    pub steps: usize,
    pub rows: Vec<SeriesRow>,
    pub final_state: SimState,
    /// Largest `max(0, |phi|_inf - 1)` over all steps.
    pub max_overshoot: f64,
    /// Largest discrete divergence over all steps.
    pub max_divergence: f64,
    pub stagnated_steps: usize,
}

impl RunSummary {
    /// `global_e0` as a time series.
    pub fn global_e0_series(&self) -> Result<TimeSeries> {
        TimeSeries::from_samples(self.rows.iter().map(|r| (r.t, r.global_e0)).collect())
    }

    /// Exponential fit of `global_e0` after the first 10% of the run.
    pub fn decay(&self) -> Result<DecayFit> {
        let t_end = self.final_state.time;
        decay_fit(&self.global_e0_series()?, (0.1 * t_end, t_end))
    }
}

fn row(
    grid: &Grid,
    cfg: &RunConfig,
    step_index: usize,
    prev: Option<&SimState>,
    state: &SimState,
    report: Option<&StepReport>,
) -> Result<SeriesRow> {
    let history: Vec<SimState> = prev.into_iter().cloned().chain([state.clone()]).collect();
    let r = diagnostics::energy_report(grid, &history, &cfg.params, cfg.kappa)?;
    Ok(SeriesRow {
        step: step_index,
        t: state.time,
        e_total: r.e_total,
        d_dissipative: r.d_dissipative,
        e0: r.e0,
        d0: r.d0,
        global_e0: r.global_e0,
        div_max: r.div_max,
        phi_min: r.phi_min,
        phi_max: r.phi_max,
        poincare_ratio: r.poincare_ratio,
        picard_iters: report.map_or(0, |r| r.picard_iters),
        balance_residual: prev.map(|p| diagnostics::balance_residual(grid, p, state, &cfg.params)),
    })
}

fn snapshot_path(dir: &Path, step_index: usize) -> PathBuf {
    dir.join(format!("snapshot_{step_index:07}.acns"))
}

/// Runs `cfg`, writing outputs to [`RunConfig::resolved_output_dir`].
pub fn run(cfg: &RunConfig) -> Result<RunSummary> {
    run_observed(cfg, |_, _| {})
}

/// [`run`] that also hands every new state and its step report to `observe`.
pub fn run_observed(
    cfg: &RunConfig,
    mut observe: impl FnMut(&SimState, &StepReport),
) -> Result<RunSummary> {
    cfg.validate()
        .map_err(|(key, message)| AcnsError::InvalidParams(format!("{key}: {message}")))?;
    let grid = cfg.grid()?;
    let mut state = initial_condition(cfg)?;
    let dir = cfg.resolved_output_dir();
    fs::create_dir_all(&dir)?;
    fs::write(dir.join("config.txt"), crate::config::serialize_config(cfg))?;

    let steps = cfg.n_steps();
    let step_cfg = crate::stepper::StepperConfig {
        dt: cfg.t_end / steps as f64,
        ..cfg.stepper
    };
    info!(
        "running {} steps of dt = {:e} on {}x{} into {}",
        steps,
        step_cfg.dt,
        grid.nx,
        grid.ny,
        dir.display()
    );

    let mut csv = String::from(SERIES_HEADER);
    csv.push('\n');
    let first = row(&grid, cfg, 0, None, &state, None)?;
    csv.push_str(&first.csv_line());
    csv.push('\n');
    let mut rows = vec![first];
    snapshot_write(&grid, &state, &snapshot_path(&dir, 0))?;

    let mut max_overshoot = (state.phase.max_abs() - 1.0).max(0.0);
    let mut max_divergence = first.div_max;
    let mut stagnated_steps = 0;
    for k in 1..=steps {
        let (next, report) = match step(&grid, &state, &step_cfg, &cfg.params) {
            Ok(out) => out,
            Err(e) => {
                let path = dir.join("last_good.acns");
                snapshot_write(&grid, &state, &path)?;
                fs::write(dir.join("series.csv"), &csv)?;
                warn!(
                    "step {k} failed; last good state written to {}",
                    path.display()
                );
                return Err(e);
            }
        };
        observe(&next, &report);
        if report.stagnated {
            stagnated_steps += 1;
        }
        max_overshoot = max_overshoot.max(next.phase.max_abs() - 1.0);
        if k % cfg.output_every == 0 || k == steps {
            let r = row(&grid, cfg, k, Some(&state), &next, Some(&report))?;
            max_divergence = max_divergence.max(r.div_max);
            csv.push_str(&r.csv_line());
            csv.push('\n');
            rows.push(r);
        }
        if (cfg.snapshot_every > 0 && k % cfg.snapshot_every == 0) || k == steps {
            snapshot_write(&grid, &next, &snapshot_path(&dir, k))?;
        }
        state = next;
    }
    fs::write(dir.join("series.csv"), &csv)?;
    if stagnated_steps > 0 {
        warn!("Picard iteration stagnated in {stagnated_steps} of {steps} steps");
    }
    Ok(RunSummary {
        output_dir: dir,
        steps,
        rows,
        final_state: state,
        max_overshoot,
        max_divergence,
        stagnated_steps,
    })
}

/// Human-readable digest of a run.
pub fn describe(summary: &RunSummary) -> String {
    let mut s = String::new();
    let first = summary.rows.first();
    let last = summary.rows.last();
    let _ = writeln!(s, "steps: {}", summary.steps);
    let _ = writeln!(s, "output: {}", summary.output_dir.display());
    if let (Some(a), Some(b)) = (first, last) {
        let _ = writeln!(s, "e_total: {:e} -> {:e}", a.e_total, b.e_total);
        let _ = writeln!(s, "global_e0: {:e} -> {:e}", a.global_e0, b.global_e0);
        let _ = writeln!(s, "phi range at end: [{}, {}]", b.phi_min, b.phi_max);
    }
    let _ = writeln!(s, "max divergence: {:e}", summary.max_divergence);
    let _ = writeln!(s, "max overshoot: {:e}", summary.max_overshoot);
    if summary.stagnated_steps > 0 {
        let _ = writeln!(s, "Picard stagnation in {} steps", summary.stagnated_steps);
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::parse_config;

    fn small(text: &str, dir: &Path) -> RunConfig {
        let mut cfg = parse_config(text).unwrap();
        cfg.output_dir = dir.to_path_buf();
        cfg
    }

    #[test]
    fn equilibrium_run_has_constant_series() {
        let tmp = tempfile::tempdir().unwrap();
        let cfg = small(
            "ic = equilibrium\nnx = 8\nny = 8\nt_end = 0.01\ndt = 1e-3\noutput_every = 2\n",
            tmp.path(),
        );
        let summary = run(&cfg).unwrap();
        assert_eq!(summary.steps, 10);
        assert_eq!(summary.rows.len(), 6);
        for r in &summary.rows {
            assert_eq!((r.e_total, r.global_e0, r.div_max), (0.0, 0.0, 0.0));
            assert_eq!((r.phi_min, r.phi_max), (1.0, 1.0));
        }
        let csv = fs::read_to_string(tmp.path().join("series.csv")).unwrap();
        assert_eq!(csv.lines().next().unwrap(), SERIES_HEADER);
        assert_eq!(csv.lines().count(), 7);
        assert!(tmp.path().join("snapshot_0000000.acns").exists());
        assert!(tmp.path().join("snapshot_0000010.acns").exists());
    }

    #[test]
    fn rows_are_consistent_with_the_header() {
        let tmp = tempfile::tempdir().unwrap();
        let cfg = small(
            "nx = 8\nny = 8\nt_end = 0.002\ndt = 1e-3\noutput_every = 1\n",
            tmp.path(),
        );
        let summary = run(&cfg).unwrap();
        let csv = fs::read_to_string(tmp.path().join("series.csv")).unwrap();
        let columns = SERIES_HEADER.split(',').count();
        for line in csv.lines() {
            assert_eq!(line.split(',').count(), columns);
        }
        assert!(summary.rows[0].d0.is_none());
        assert!(summary.rows[1].balance_residual.is_some());
        assert!(summary.rows[1].picard_iters >= 1);
    }

    #[test]
    fn invalid_config_writes_nothing() {
        let tmp = tempfile::tempdir().unwrap();
        let out = tmp.path().join("never");
        let mut cfg = RunConfig {
            output_dir: out.clone(),
            ..RunConfig::default()
        };
        cfg.params.rho1 = 5.0;
        assert!(run(&cfg).is_err());
        assert!(!out.exists());
    }
}
