//! Finite-difference solver for the Allen-Cahn-Navier-Stokes diffuse-interface
//! model of two incompressible fluids with different densities, plus the
//! diagnostics used to check its structural properties: energy dissipation,
//! the phase-field maximum principle, incompressibility and exponential decay
//! towards the equilibria `(u, phi) = (0, +1)` and `(0, -1)`.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod constitutive;
pub mod diagnostics;
pub mod error;
pub mod grid;
pub mod run;
pub mod snapshot;
pub mod solver;
pub mod stepper;
pub mod verify;

pub use constitutive::{Branch, Params};
pub use error::{AcnsError, Result};
pub use grid::{Grid, ScalarField, SimState, StaggeredVelocity};
pub use stepper::{step, StepReport, StepperConfig};
