use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use acns::config::{parse_config, RunConfig};
use acns::constitutive::Branch;
use acns::diagnostics::{energy_report, poincare_reference, DEFAULT_KAPPA};
use acns::run::{describe, run};
use acns::snapshot::snapshot_read;
use acns::verify::{convergence_study, perturbation_equivalence, ManufacturedCase};
use acns::{Grid, Params, SimState, StepperConfig};

/// Allen-Cahn-Navier-Stokes two-phase flow solver.
#[derive(Parser)]
#[command(version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a configuration, writing series.csv and snapshots.
    Run { config: PathBuf },
    /// Run a configuration and fit an exponential to the perturbation energy.
    Decay { config: PathBuf },
    /// Manufactured-solution convergence studies and the perturbed-variable
    /// cross-check.
    Verify {
        /// Coarser grids and fewer steps.
        #[arg(long)]
        quick: bool,
    },
    /// Print monitors and energies of a snapshot file.
    Check {
        snapshot: PathBuf,
        /// Configuration supplying the model constants (defaults otherwise).
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

const EXIT_FAILURE: u8 = 1;
const EXIT_CONFIG: u8 = 2;

fn load(path: &Path) -> Result<RunConfig, ExitCode> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        eprintln!("error: cannot read {}: {e}", path.display());
        ExitCode::from(EXIT_CONFIG)
    })?;
    parse_config(&text).map_err(|e| {
        eprintln!("error: {}: {e}", path.display());
        ExitCode::from(EXIT_CONFIG)
    })
}

fn cmd_run(path: &Path, fit: bool) -> ExitCode {
    let cfg = match load(path) {
        Ok(c) => c,
        Err(code) => return code,
    };
    let summary = match run(&cfg) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_FAILURE);
        }
    };
    print!("{}", describe(&summary));
    if fit {
        match summary.decay() {
            Ok(f) => {
                println!("c = {:.6}", f.rate);
                match f.r_squared {
                    Some(r2) => println!("r2 = {r2:.6}"),
                    None => println!("r2 = undefined (constant series)"),
                }
            }
            Err(e) => {
                eprintln!("error: decay fit: {e}");
                return ExitCode::from(EXIT_FAILURE);
            }
        }
    }
    ExitCode::SUCCESS
}

fn within(order: Option<f64>, target: f64) -> bool {
    order.is_some_and(|o| (o - target).abs() <= 0.3)
}

fn cmd_verify(quick: bool) -> ExitCode {
    let params = Params::default();
    let cfg = StepperConfig::default();
    let mut ok = true;
    let sizes: &[usize] = if quick { &[16, 32, 64] } else { &[32, 64, 128] };
    let grids: Vec<Grid> = sizes
        .iter()
        .map(|&n| Grid::unit_square(n).unwrap())
        .collect();

    let phase = ManufacturedCase::phase_diffusion(1.0, 1.0);
    let dts: Vec<f64> = grids.iter().map(|g| g.hx * g.hx).collect();
    match convergence_study(&phase, &grids, &dts, 0.01, &cfg, &params) {
        Ok(r) => {
            print!("{}", r.to_csv());
            ok &= within(r.order_phi_l2, 2.0);
        }
        Err(e) => {
            eprintln!("phase study failed: {e}");
            ok = false;
        }
    }

    let stokes = ManufacturedCase::stokes(1.0, 1.0);
    match convergence_study(&stokes, &grids, &dts, 0.01, &cfg, &params) {
        Ok(r) => {
            print!("{}", r.to_csv());
            ok &= within(r.order_u_l2, 2.0);
        }
        Err(e) => {
            eprintln!("stokes study failed: {e}");
            ok = false;
        }
    }

    let swirl = ManufacturedCase::swirl(1.0, 1.0);
    let g = Grid::unit_square(32).unwrap();
    let dt = 0.02;
    match convergence_study(
        &swirl,
        &[g, g, g],
        &[dt, dt / 2.0, dt / 4.0],
        0.4,
        &cfg,
        &params,
    ) {
        Ok(r) => {
            print!("{}", r.to_csv());
            ok &= within(r.self_order_u, 1.0) && within(r.self_order_phi, 1.0);
        }
        Err(e) => {
            eprintln!("swirl study failed: {e}");
            ok = false;
        }
    }

    println!("branch,steps,phase_discrepancy,velocity_discrepancy");
    let grid = Grid::unit_square(32).unwrap();
    for branch in [Branch::Plus, Branch::Minus] {
        let p = Params { branch, ..params };
        let s = branch.sign();
        let phi = grid.sample_scalar(|x, y| {
            s * (1.0
                - 0.1
                    * (0.5
                        + 0.5
                            * (std::f64::consts::PI * x).cos()
                            * (std::f64::consts::PI * y).cos()))
        });
        match perturbation_equivalence(&grid, &SimState::at_rest(&grid, phi), 10, &cfg, &p) {
            Ok(d) => {
                println!("{branch},10,{:e},{:e}", d.phase, d.velocity);
                ok &= d.max() <= 1e-10;
            }
            Err(e) => {
                eprintln!("equivalence ({branch}) failed: {e}");
                ok = false;
            }
        }
    }
    if ok {
        println!("verify: all orders and discrepancies within tolerance");
        ExitCode::SUCCESS
    } else {
        println!("verify: FAILED");
        ExitCode::from(EXIT_FAILURE)
    }
}

fn cmd_check(path: &Path, config: Option<&PathBuf>) -> ExitCode {
    let params = match config {
        Some(c) => match load(c) {
            Ok(cfg) => cfg.params,
            Err(code) => return code,
        },
        None => Params::default(),
    };
    let kappa = DEFAULT_KAPPA;
    let (grid, state) = match snapshot_read(path) {
        Ok(x) => x,
        Err(e) => {
            eprintln!("error: {}: {e}", path.display());
            return ExitCode::from(EXIT_FAILURE);
        }
    };
    let report = match energy_report(&grid, std::slice::from_ref(&state), &params, kappa) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_FAILURE);
        }
    };
    println!("grid: {}x{} on {}x{}", grid.nx, grid.ny, grid.lx, grid.ly);
    println!("time: {}", state.time);
    println!("e_total: {:e}", report.e_total);
    println!("d_dissipative: {:e}", report.d_dissipative);
    println!("e0: {:e}", report.e0);
    println!("global_e0: {:e}", report.global_e0);
    println!("div_max: {:e}", report.div_max);
    println!("phi range: [{}, {}]", report.phi_min, report.phi_max);
    match report.poincare_ratio {
        Some(r) => println!(
            "poincare ratio: {r:e} (grid constant {:e})",
            poincare_reference(&grid)
        ),
        None => println!("poincare ratio: undefined (fluid at rest)"),
    }
    ExitCode::SUCCESS
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match &cli.command {
        Command::Run { config } => cmd_run(config, false),
        Command::Decay { config } => cmd_run(config, true),
        Command::Verify { quick } => cmd_verify(*quick),
        Command::Check { snapshot, config } => cmd_check(snapshot, config.as_ref()),
    }
}
