//! Matrix-free Krylov solvers used by the time stepper.
//!
//! Convergence is measured in the max norm, `||b - A x||_inf <= tol ||b||_inf`,
//! because the projection's divergence bound is pointwise.

use crate::error::{AcnsError, Result};

/// A square linear operator acting on flat vectors.
pub trait LinearOperator {
    fn dim(&self) -> usize;

    fn apply(&self, x: &[f64], y: &mut [f64]);

    /// Main diagonal, used for Jacobi preconditioning.
    fn diagonal(&self) -> Vec<f64>;

    /// Preconditioner used by [`solve_linear`]; Jacobi unless overridden.
    fn preconditioner(&self) -> Box<dyn Preconditioner + '_> {
        Box::new(Jacobi::new(&self.diagonal()))
    }
}

/// Approximate inverse `z = M^-1 r`.
pub trait Preconditioner {
    fn apply(&self, r: &[f64], z: &mut [f64]);
}

pub struct Jacobi {
    inv_diag: Vec<f64>,
}

impl Jacobi {
    /// Zero diagonal entries are treated as ones.
    pub fn new(diagonal: &[f64]) -> Self {
        let inv_diag = diagonal
            .iter()
            .map(|&d| if d != 0.0 { 1.0 / d } else { 1.0 })
            .collect();
        Self { inv_diag }
    }
}

impl Preconditioner for Jacobi {
    fn apply(&self, r: &[f64], z: &mut [f64]) {
        for ((zk, rk), d) in z.iter_mut().zip(r).zip(&self.inv_diag) {
            *zk = rk * d;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    /// Preconditioned conjugate gradients (symmetric positive
    /// (semi)definite operators).
    Cg,
    /// Preconditioned BiCGSTAB (general nonsymmetric operators).
    BiCgStab,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveStats {
    pub iterations: usize,
    /// Final `||b - A x||_inf / ||b||_inf` (0 when `b = 0`).
    pub relative_residual: f64,
}

/// Solves `A x = b` starting from the contents of `x`.
///
/// A zero right-hand side returns `x = 0` without iterating. If the initial
/// guess already meets the tolerance, `x` is left untouched.
pub fn solve_linear<A: LinearOperator + ?Sized>(
    op: &A,
    rhs: &[f64],
    x: &mut [f64],
    tol: f64,
    max_iter: usize,
    method: Method,
) -> Result<SolveStats> {
    let n = op.dim();
    assert_eq!(rhs.len(), n);
    assert_eq!(x.len(), n);
    if rhs.iter().any(|v| !v.is_finite()) {
        return Err(AcnsError::NonFinite("linear solve right-hand side"));
    }
    let b_norm = max_abs(rhs);
    if b_norm == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return Ok(SolveStats {
            iterations: 0,
            relative_residual: 0.0,
        });
    }
    let target = tol * b_norm;
    let pc = op.preconditioner();

    let mut r = vec![0.0; n];
    residual(op, rhs, x, &mut r);
    let r0 = max_abs(&r);
    if r0 <= target {
        return Ok(SolveStats {
            iterations: 0,
            relative_residual: r0 / b_norm,
        });
    }

    let solver = match method {
        Method::Cg => "conjugate gradient",
        Method::BiCgStab => "BiCGSTAB",
    };
    let mut used = 0;
    // Restart from the true residual whenever the recursive one has drifted.
    while used < max_iter {
        let its = match method {
            Method::Cg => cg(op, pc.as_ref(), x, &mut r, target, max_iter - used),
            Method::BiCgStab => bicgstab(op, pc.as_ref(), x, &mut r, target, max_iter - used),
        };
        used += its.max(1);
        residual(op, rhs, x, &mut r);
        let res = max_abs(&r);
        if !res.is_finite() {
            return Err(AcnsError::NonFinite("linear solve iterate"));
        }
        if res <= target {
            return Ok(SolveStats {
                iterations: used,
                relative_residual: res / b_norm,
            });
        }
    }
    Err(AcnsError::NotConverged {
        solver,
        iterations: used,
        residual: max_abs(&r) / b_norm,
        target: tol,
    })
}

fn residual<A: LinearOperator + ?Sized>(op: &A, b: &[f64], x: &[f64], r: &mut [f64]) {
    op.apply(x, r);
    for (ri, bi) in r.iter_mut().zip(b) {
        *ri = bi - *ri;
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn max_abs(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Returns the number of iterations spent; `r` holds the recursive residual.
fn cg<A: LinearOperator + ?Sized>(
    op: &A,
    pc: &dyn Preconditioner,
    x: &mut [f64],
    r: &mut [f64],
    target: f64,
    max_iter: usize,
) -> usize {
    let n = x.len();
    let mut z = vec![0.0; n];
    pc.apply(r, &mut z);
    let mut p = z.clone();
    let mut ap = vec![0.0; n];
    let mut rz = dot(r, &z);
    for it in 1..=max_iter {
        op.apply(&p, &mut ap);
        let pap = dot(&p, &ap);
        if pap <= 0.0 || !pap.is_finite() {
            return it;
        }
        let alpha = rz / pap;
        for k in 0..n {
            x[k] += alpha * p[k];
            r[k] -= alpha * ap[k];
        }
        if max_abs(r) <= target {
            return it;
        }
        pc.apply(r, &mut z);
        let rz_new = dot(r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for k in 0..n {
            p[k] = z[k] + beta * p[k];
        }
    }
    max_iter
}

fn bicgstab<A: LinearOperator + ?Sized>(
    op: &A,
    pc: &dyn Preconditioner,
    x: &mut [f64],
    r: &mut [f64],
    target: f64,
    max_iter: usize,
) -> usize {
    let n = x.len();
    let r_hat = r.to_vec();
    let (mut rho, mut alpha, mut omega) = (1.0, 1.0, 1.0);
    let mut v = vec![0.0; n];
    let mut p = vec![0.0; n];
    let mut p_hat = vec![0.0; n];
    let mut s_hat = vec![0.0; n];
    let mut t = vec![0.0; n];
    for it in 1..=max_iter {
        let rho_new = dot(&r_hat, r);
        if rho_new == 0.0 || !rho_new.is_finite() {
            return it;
        }
        let beta = (rho_new / rho) * (alpha / omega);
        rho = rho_new;
        for k in 0..n {
            p[k] = r[k] + beta * (p[k] - omega * v[k]);
        }
        pc.apply(&p, &mut p_hat);
        op.apply(&p_hat, &mut v);
        let rv = dot(&r_hat, &v);
        if rv == 0.0 || !rv.is_finite() {
            return it;
        }
        alpha = rho / rv;
        // r becomes s = r - alpha v
        for k in 0..n {
            r[k] -= alpha * v[k];
        }
        if max_abs(r) <= target {
            for k in 0..n {
                x[k] += alpha * p_hat[k];
            }
            return it;
        }
        pc.apply(r, &mut s_hat);
        op.apply(&s_hat, &mut t);
        let tt = dot(&t, &t);
        if tt == 0.0 || !tt.is_finite() {
            for k in 0..n {
                x[k] += alpha * p_hat[k];
            }
            return it;
        }
        omega = dot(&t, r) / tt;
        for k in 0..n {
            x[k] += alpha * p_hat[k] + omega * s_hat[k];
            r[k] -= omega * t[k];
        }
        if max_abs(r) <= target || omega == 0.0 {
            return it;
        }
    }
    max_iter
}

/// Dense matrix wrapper, mostly for tests and small systems.
#[derive(Debug, Clone)]
pub struct DenseOperator {
    n: usize,
    a: Vec<f64>,
}

impl DenseOperator {
    pub fn new(n: usize, a: Vec<f64>) -> Self {
        assert_eq!(a.len(), n * n);
        Self { n, a }
    }

    pub fn identity(n: usize) -> Self {
        let mut a = vec![0.0; n * n];
        for i in 0..n {
            a[i * n + i] = 1.0;
        }
        Self { n, a }
    }
}

impl LinearOperator for DenseOperator {
    fn dim(&self) -> usize {
        self.n
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        for (i, yi) in y.iter_mut().enumerate() {
            *yi = dot(&self.a[i * self.n..(i + 1) * self.n], x);
        }
    }

    fn diagonal(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.a[i * self.n + i]).collect()
    }
}
