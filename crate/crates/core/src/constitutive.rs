//! Scalar constitutive laws: the parabolic density average, the double-well
//! potential, and their counterparts for the system written around one of the
//! equilibria `phi = +1` / `phi = -1`.
//!
//! All functions are defined on the whole real line. The discrete scheme can
//! overshoot `[-1, 1]` slightly and nothing here clamps.

use std::fmt;

use crate::error::{AcnsError, Result};

/// Equilibrium the perturbed system is written around.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Branch {
    /// `phi = varphi + 1`
    Plus,
    /// `phi = varphi - 1`
    Minus,
}

impl Branch {
    /// The equilibrium value of `phi` (+1 or -1).
    pub fn sign(self) -> f64 {
        match self {
            Branch::Plus => 1.0,
            Branch::Minus => -1.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Branch::Plus => "plus",
            Branch::Minus => "minus",
        }
    }
}

impl fmt::Display for Branch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Branch {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "plus" | "+" | "+1" => Ok(Branch::Plus),
            "minus" | "-" | "-1" => Ok(Branch::Minus),
            other => Err(format!("unknown branch `{other}` (expected plus or minus)")),
        }
    }
}

/// Physical constants of the model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Params {
    pub rho1: f64,
    pub rho2: f64,
    pub mu: f64,
    pub lambda: f64,
    pub gamma: f64,
    pub epsilon: f64,
    pub branch: Branch,
}

impl Default for Params {
    fn default() -> Self {
        Self {
            rho1: 1.0,
            rho2: 3.0,
            mu: 1.0,
            lambda: 0.01,
            gamma: 1.0,
            epsilon: 0.1,
            branch: Branch::Plus,
        }
    }
}

impl Params {
    /// Checks positivity of every coefficient and the ordering `rho1 < rho2`.
    pub fn validate(&self) -> Result<()> {
        let named = [
            ("rho1", self.rho1),
            ("rho2", self.rho2),
            ("mu", self.mu),
            ("lambda", self.lambda),
            ("gamma", self.gamma),
            ("epsilon", self.epsilon),
        ];
        for (name, value) in named {
            if !(value.is_finite() && value > 0.0) {
                return Err(AcnsError::InvalidParams(format!(
                    "{name} must be finite and > 0, got {value}"
                )));
            }
        }
        if self.rho1 >= self.rho2 {
            return Err(AcnsError::InvalidParams(format!(
                "rho1 < rho2 required (rho1 = {}, rho2 = {})",
                self.rho1, self.rho2
            )));
        }
        Ok(())
    }

    /// Lower density bound `rho1 rho2 / (rho1 + rho2)` over `phi in [-1, 1]`.
    pub fn rho_min(&self) -> f64 {
        self.rho1 * self.rho2 / (self.rho1 + self.rho2)
    }

    /// Upper density bound over `phi in [-1, 1]`. The parabola opens upwards
    /// with its vertex at [`rho_argmin`](Self::rho_argmin) `<= 0`, so the
    /// maximum is at `phi = 1`, i.e. `rho2`.
    pub fn rho_max(&self) -> f64 {
        self.rho2.max(self.rho1)
    }

    /// Location of the density minimum, `-(rho2 - rho1) / (rho2 + rho1)`.
    pub fn rho_argmin(&self) -> f64 {
        -(self.rho2 - self.rho1) / (self.rho2 + self.rho1)
    }

    /// `gamma * lambda`, the mobility-weighted capillary coefficient.
    pub fn gamma_lambda(&self) -> f64 {
        self.gamma * self.lambda
    }

    /// Linear damping coefficient `2 gamma lambda / epsilon^2` that appears
    /// when the potential is expanded around an equilibrium.
    pub fn damping(&self) -> f64 {
        2.0 * self.gamma_lambda() / (self.epsilon * self.epsilon)
    }
}

/// Parabolic density average `rho1 (phi - 1)^2 / 4 + rho2 (phi + 1)^2 / 4`.
#[inline]
pub fn rho(phi: f64, params: &Params) -> f64 {
    let a = phi - 1.0;
    let b = phi + 1.0;
    0.25 * params.rho1 * a * a + 0.25 * params.rho2 * b * b
}

/// Completed-square form of [`rho`]; algebraically identical, used by the
/// bounds checks.
pub fn rho_completed_square(phi: f64, params: &Params) -> f64 {
    let s = params.rho1 + params.rho2;
    let shift = phi - params.rho_argmin();
    0.25 * s * shift * shift + params.rho_min()
}

#[inline]
pub fn rho_prime(phi: f64, params: &Params) -> f64 {
    0.5 * params.rho1 * (phi - 1.0) + 0.5 * params.rho2 * (phi + 1.0)
}

/// Double-well potential `(phi^2 - 1)^2 / (4 epsilon^2)`.
#[inline]
pub fn f(phi: f64, params: &Params) -> f64 {
    let w = phi * phi - 1.0;
    w * w / (4.0 * params.epsilon * params.epsilon)
}

#[inline]
pub fn f_prime(phi: f64, params: &Params) -> f64 {
    (phi * phi - 1.0) * phi / (params.epsilon * params.epsilon)
}

/// Nonlinear remainder of `f'` around the selected equilibrium:
/// `(varphi^3 +/- 3 varphi^2) / epsilon^2`, so that
/// `f'(varphi +/- 1) = 2 varphi / epsilon^2 + h(varphi)`.
#[inline]
pub fn h(varphi: f64, params: &Params) -> f64 {
    let v2 = varphi * varphi;
    (v2 * varphi + params.branch.sign() * 3.0 * v2) / (params.epsilon * params.epsilon)
}

/// Density of the perturbed system, written out per branch.
#[inline]
pub fn varrho(varphi: f64, params: &Params) -> f64 {
    match params.branch {
        Branch::Plus => {
            let b = varphi + 2.0;
            0.25 * params.rho1 * varphi * varphi + 0.25 * params.rho2 * b * b
        }
        Branch::Minus => {
            let a = varphi - 2.0;
            0.25 * params.rho1 * a * a + 0.25 * params.rho2 * varphi * varphi
        }
    }
}

#[inline]
pub fn varrho_prime(varphi: f64, params: &Params) -> f64 {
    match params.branch {
        Branch::Plus => 0.5 * params.rho1 * varphi + 0.5 * params.rho2 * (varphi + 2.0),
        Branch::Minus => 0.5 * params.rho1 * (varphi - 2.0) + 0.5 * params.rho2 * varphi,
    }
}
