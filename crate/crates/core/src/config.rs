//! Run configuration: `key = value` text, initial conditions.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::constitutive::{Branch, Params};
use crate::diagnostics::DEFAULT_KAPPA;
use crate::error::{AcnsError, Result};
use crate::grid::{Grid, ScalarField, SimState};
use crate::stepper::StepperConfig;
use crate::verify::ManufacturedCase;

/// Environment variable that replaces `output_dir` when set.
pub const OUTPUT_DIR_ENV: &str = "ACNS_OUTPUT_DIR";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IcPreset {
    Equilibrium,
    PerturbedEquilibrium,
    Bubble,
    Mms,
}

impl IcPreset {
    pub const ALL: [IcPreset; 4] = [
        IcPreset::Equilibrium,
        IcPreset::PerturbedEquilibrium,
        IcPreset::Bubble,
        IcPreset::Mms,
    ];

    pub fn name(self) -> &'static str {
        match self {
            IcPreset::Equilibrium => "equilibrium",
            IcPreset::PerturbedEquilibrium => "perturbed_equilibrium",
            IcPreset::Bubble => "bubble",
            IcPreset::Mms => "mms",
        }
    }
}

impl FromStr for IcPreset {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Self::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| {
                let names: Vec<_> = Self::ALL.iter().map(|p| p.name()).collect();
                format!(
                    "unknown ic preset `{s}` (expected one of {})",
                    names.join(", ")
                )
            })
    }
}

/// Everything needed to reproduce a run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub params: Params,
    pub stepper: StepperConfig,
    pub nx: usize,
    pub ny: usize,
    pub lx: f64,
    pub ly: f64,
    pub t_end: f64,
    /// Steps between rows of `series.csv`.
    pub output_every: usize,
    /// Steps between field snapshots; 0 writes only the first and last.
    pub snapshot_every: usize,
    pub kappa: f64,
    pub ic: IcPreset,
    /// Depth of the cosine bump of `perturbed_equilibrium`.
    pub amplitude: f64,
    pub mode: u32,
    pub radius: f64,
    pub width: f64,
    pub mms_case: String,
    /// Amplitude of seeded uniform noise pushed into the interior of `[-1, 1]`.
    pub noise: f64,
    pub seed: u64,
    pub output_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            params: Params::default(),
            stepper: StepperConfig::default(),
            nx: 64,
            ny: 64,
            lx: 1.0,
            ly: 1.0,
            t_end: 0.7,
            output_every: 10,
            snapshot_every: 0,
            kappa: DEFAULT_KAPPA,
            ic: IcPreset::PerturbedEquilibrium,
            amplitude: 0.05,
            mode: 1,
            radius: 0.25,
            width: 0.1,
            mms_case: "swirl".into(),
            noise: 0.0,
            seed: 0,
            output_dir: PathBuf::from("output"),
        }
    }
}

const KEYS: [&str; 27] = [
    "rho1",
    "rho2",
    "mu",
    "lambda",
    "gamma",
    "epsilon",
    "branch",
    "dt",
    "picard_max",
    "picard_tol",
    "poisson_tol",
    "poisson_max_iter",
    "nx",
    "ny",
    "lx",
    "ly",
    "t_end",
    "output_every",
    "snapshot_every",
    "kappa",
    "ic",
    "amplitude",
    "mode",
    "radius",
    "width",
    "mms_case",
    "noise",
];
const EXTRA_KEYS: [&str; 2] = ["seed", "output_dir"];

fn parse_value<T: FromStr>(key: &str, value: &str, line: usize) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value.parse().map_err(|e: T::Err| AcnsError::Config {
        line,
        message: format!("bad value `{value}` for {key}: {e}"),
    })
}

impl RunConfig {
    pub fn grid(&self) -> Result<Grid> {
        Grid::new(self.nx, self.ny, self.lx, self.ly)
    }

    /// Number of steps to reach `t_end`, rounding `t_end / dt` to the nearest
    /// integer.
    pub fn n_steps(&self) -> usize {
        (self.t_end / self.stepper.dt).round().max(1.0) as usize
    }

    /// `output_dir`, unless the [`OUTPUT_DIR_ENV`] variable is set.
    pub fn resolved_output_dir(&self) -> PathBuf {
        match std::env::var_os(OUTPUT_DIR_ENV) {
            Some(dir) if !dir.is_empty() => PathBuf::from(dir),
            _ => self.output_dir.clone(),
        }
    }

    fn set(&mut self, key: &str, value: &str, line: usize) -> Result<()> {
        match key {
            "rho1" => self.params.rho1 = parse_value(key, value, line)?,
            "rho2" => self.params.rho2 = parse_value(key, value, line)?,
            "mu" => self.params.mu = parse_value(key, value, line)?,
            "lambda" => self.params.lambda = parse_value(key, value, line)?,
            "gamma" => self.params.gamma = parse_value(key, value, line)?,
            "epsilon" => self.params.epsilon = parse_value(key, value, line)?,
            "branch" => self.params.branch = parse_value::<Branch>(key, value, line)?,
            "dt" => self.stepper.dt = parse_value(key, value, line)?,
            "picard_max" => self.stepper.picard_max = parse_value(key, value, line)?,
            "picard_tol" => self.stepper.picard_tol = parse_value(key, value, line)?,
            "poisson_tol" => self.stepper.poisson_tol = parse_value(key, value, line)?,
            "poisson_max_iter" => self.stepper.poisson_max_iter = parse_value(key, value, line)?,
            "nx" => self.nx = parse_value(key, value, line)?,
            "ny" => self.ny = parse_value(key, value, line)?,
            "lx" => self.lx = parse_value(key, value, line)?,
            "ly" => self.ly = parse_value(key, value, line)?,
            "t_end" => self.t_end = parse_value(key, value, line)?,
            "output_every" => self.output_every = parse_value(key, value, line)?,
            "snapshot_every" => self.snapshot_every = parse_value(key, value, line)?,
            "kappa" => self.kappa = parse_value(key, value, line)?,
            "ic" => self.ic = parse_value(key, value, line)?,
            "amplitude" => self.amplitude = parse_value(key, value, line)?,
            "mode" => self.mode = parse_value(key, value, line)?,
            "radius" => self.radius = parse_value(key, value, line)?,
            "width" => self.width = parse_value(key, value, line)?,
            "mms_case" => self.mms_case = value.to_string(),
            "noise" => self.noise = parse_value(key, value, line)?,
            "seed" => self.seed = parse_value(key, value, line)?,
            "output_dir" => self.output_dir = PathBuf::from(value),
            _ => {
                return Err(AcnsError::Config {
                    line,
                    message: format!("unknown key `{key}`"),
                })
            }
        }
        Ok(())
    }

    /// Checks every invariant; the error names the key at fault.
    pub fn validate(&self) -> std::result::Result<(), (&'static str, String)> {
        let msg = |e: AcnsError| match e {
            AcnsError::InvalidParams(m) => m,
            other => other.to_string(),
        };
        if let Err(e) = self.params.validate() {
            let m = msg(e);
            let key = ["rho1", "rho2", "mu", "lambda", "gamma", "epsilon"]
                .into_iter()
                .find(|k| m.starts_with(k))
                .unwrap_or("rho1");
            return Err((key, m));
        }
        if let Err(e) = self.stepper.validate() {
            let m = msg(e);
            let key = [
                "dt",
                "picard_max",
                "picard_tol",
                "poisson_tol",
                "poisson_max_iter",
            ]
            .into_iter()
            .find(|k| m.starts_with(k))
            .unwrap_or("dt");
            return Err((key, m));
        }
        if let Err(e) = self.grid() {
            return Err(("nx", msg(e)));
        }
        if !(self.t_end.is_finite() && self.t_end > 0.0) {
            return Err(("t_end", format!("t_end must be > 0, got {}", self.t_end)));
        }
        if self.output_every < 1 {
            return Err(("output_every", "output_every must be >= 1".into()));
        }
        if !(self.kappa.is_finite() && self.kappa >= 0.0) {
            return Err(("kappa", format!("kappa must be >= 0, got {}", self.kappa)));
        }
        if !(self.noise.is_finite() && self.noise >= 0.0) {
            return Err(("noise", format!("noise must be >= 0, got {}", self.noise)));
        }
        match self.ic {
            IcPreset::PerturbedEquilibrium => {
                if !(0.0..=2.0).contains(&self.amplitude) {
                    return Err((
                        "amplitude",
                        format!(
                            "amplitude {} takes phi outside [-1, 1] (allowed 0..=2)",
                            self.amplitude
                        ),
                    ));
                }
                if self.mode < 1 {
                    return Err(("mode", "mode must be >= 1".into()));
                }
            }
            IcPreset::Bubble => {
                if !(self.radius > 0.0) {
                    return Err(("radius", "radius must be > 0".into()));
                }
                if !(self.width > 0.0) {
                    return Err(("width", "width must be > 0".into()));
                }
            }
            IcPreset::Mms => {
                if let Err(e) = ManufacturedCase::by_name(&self.mms_case, self.lx, self.ly) {
                    return Err(("mms_case", msg(e)));
                }
            }
            IcPreset::Equilibrium => {}
        }
        Ok(())
    }
}

/// Parses `key = value` lines; `#` starts a comment. Omitted keys keep their
/// defaults.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    let mut seen: HashMap<String, usize> = HashMap::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let (key, value) = content.split_once('=').ok_or_else(|| AcnsError::Config {
            line,
            message: format!("expected `key = value`, got `{content}`"),
        })?;
        let (key, value) = (key.trim(), value.trim());
        if value.is_empty() {
            return Err(AcnsError::Config {
                line,
                message: format!("missing value for {key}"),
            });
        }
        if let Some(first) = seen.get(key) {
            return Err(AcnsError::Config {
                line,
                message: format!("duplicate key `{key}` (first set on line {first})"),
            });
        }
        cfg.set(key, value, line)?;
        seen.insert(key.to_string(), line);
    }
    cfg.validate().map_err(|(key, message)| AcnsError::Config {
        line: seen.get(key).copied().unwrap_or(0),
        message,
    })?;
    Ok(cfg)
}

/// Inverse of [`parse_config`]: every key, one per line.
pub fn serialize_config(cfg: &RunConfig) -> String {
    let p = &cfg.params;
    let s = &cfg.stepper;
    let values: [String; 27] = [
        p.rho1.to_string(),
        p.rho2.to_string(),
        p.mu.to_string(),
        p.lambda.to_string(),
        p.gamma.to_string(),
        p.epsilon.to_string(),
        p.branch.to_string(),
        s.dt.to_string(),
        s.picard_max.to_string(),
        s.picard_tol.to_string(),
        s.poisson_tol.to_string(),
        s.poisson_max_iter.to_string(),
        cfg.nx.to_string(),
        cfg.ny.to_string(),
        cfg.lx.to_string(),
        cfg.ly.to_string(),
        cfg.t_end.to_string(),
        cfg.output_every.to_string(),
        cfg.snapshot_every.to_string(),
        cfg.kappa.to_string(),
        cfg.ic.name().to_string(),
        cfg.amplitude.to_string(),
        cfg.mode.to_string(),
        cfg.radius.to_string(),
        cfg.width.to_string(),
        cfg.mms_case.clone(),
        cfg.noise.to_string(),
    ];
    let mut out = String::new();
    for (k, v) in KEYS.iter().zip(values) {
        let _ = writeln!(out, "{k} = {v}");
    }
    let _ = writeln!(out, "{} = {}", EXTRA_KEYS[0], cfg.seed);
    let _ = writeln!(out, "{} = {}", EXTRA_KEYS[1], cfg.output_dir.display());
    out
}

/// Initial state for the configured preset. The fluid starts at rest except
/// for manufactured cases, whose velocity is divergence-free by construction.
pub fn initial_condition(cfg: &RunConfig) -> Result<SimState> {
    let grid = cfg.grid()?;
    let s = cfg.params.branch.sign();
    let mut state = match cfg.ic {
        IcPreset::Equilibrium => SimState::at_rest(&grid, ScalarField::constant(&grid, s)),
        IcPreset::PerturbedEquilibrium => {
            if !(0.0..=2.0).contains(&cfg.amplitude) {
                return Err(AcnsError::InitialCondition(format!(
                    "amplitude {} takes phi outside [-1, 1]",
                    cfg.amplitude
                )));
            }
            let (kx, ky) = (
                cfg.mode as f64 * std::f64::consts::PI / cfg.lx,
                cfg.mode as f64 * std::f64::consts::PI / cfg.ly,
            );
            let a = cfg.amplitude;
            let phi = grid
                .sample_scalar(|x, y| s - s * a * 0.5 * (1.0 + (kx * x).cos() * (ky * y).cos()));
            SimState::at_rest(&grid, phi)
        }
        IcPreset::Bubble => {
            let (cx, cy) = (0.5 * cfg.lx, 0.5 * cfg.ly);
            let w = std::f64::consts::SQRT_2 * cfg.width;
            let phi = grid.sample_scalar(|x, y| {
                (((x - cx).hypot(y - cy) - cfg.radius) / w)
                    .tanh()
                    .clamp(-1.0, 1.0)
            });
            SimState::at_rest(&grid, phi)
        }
        IcPreset::Mms => {
            ManufacturedCase::by_name(&cfg.mms_case, cfg.lx, cfg.ly)?.state(&grid, 0.0)
        }
    };
    if cfg.noise > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        for j in 0..grid.ny {
            for i in 0..grid.nx {
                let v = state.phase.get(i, j);
                let r: f64 = rng.gen();
                // push towards zero so the range is kept
                state.phase.set(i, j, v - v.signum() * cfg.noise * r);
            }
        }
        state.phase.apply_neumann();
    }
    let (lo, hi) = (state.phase.min(), state.phase.max());
    if lo < -1.0 || hi > 1.0 {
        return Err(AcnsError::InitialCondition(format!(
            "phase range [{lo}, {hi}] leaves [-1, 1]"
        )));
    }
    Ok(state)
}
