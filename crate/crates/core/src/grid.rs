//! Two-dimensional MAC-staggered grid on the rectangle `[0, lx] x [0, ly]`.
//!
//! Scalars (`phi`, `p`, densities) live at cell centres, the `u` velocity
//! component on vertical faces and `v` on horizontal faces. Every container
//! carries one ghost layer per side:
//!
//! * scalars: `(nx + 2) x (ny + 2)`, ghosts mirror the adjacent interior cell
//!   (zero normal derivative);
//! * `u`: faces `i = 0..=nx` by rows `j = -1..=ny`; faces `0` and `nx` are the
//!   walls and hold exactly 0, ghost rows reflect (`u[-1] = -u[0]`) so the
//!   tangential velocity interpolates to 0 on the walls;
//! * `v`: the transpose of the above.
//!
//! All stencils are second-order centred five-point stencils. The inner
//! products are midpoint sums with cell-area weights; with these the discrete
//! divergence is exactly minus the adjoint of the discrete gradient, the two
//! Laplacians are negative semidefinite, and both advection operators are
//! skew for discretely divergence-free transport fields.

use crate::constitutive::Params;
use crate::error::{AcnsError, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    pub nx: usize,
    pub ny: usize,
    pub lx: f64,
    pub ly: f64,
    pub hx: f64,
    pub hy: f64,
}

impl Grid {
    pub fn new(nx: usize, ny: usize, lx: f64, ly: f64) -> Result<Self> {
        if nx < 4 || ny < 4 {
            return Err(AcnsError::InvalidParams(format!(
                "grid needs at least 4x4 cells, got {nx}x{ny}"
            )));
        }
        if !(lx.is_finite() && lx > 0.0 && ly.is_finite() && ly > 0.0) {
            return Err(AcnsError::InvalidParams(format!(
                "domain lengths must be positive, got {lx} x {ly}"
            )));
        }
        Ok(Self {
            nx,
            ny,
            lx,
            ly,
            hx: lx / nx as f64,
            hy: ly / ny as f64,
        })
    }

    pub fn unit_square(n: usize) -> Result<Self> {
        Self::new(n, n, 1.0, 1.0)
    }

    #[inline]
    pub fn cell_area(&self) -> f64 {
        self.hx * self.hy
    }

    pub fn area(&self) -> f64 {
        self.lx * self.ly
    }

    pub fn h_min(&self) -> f64 {
        self.hx.min(self.hy)
    }

    #[inline]
    pub fn x_center(&self, i: usize) -> f64 {
        (i as f64 + 0.5) * self.hx
    }

    #[inline]
    pub fn y_center(&self, j: usize) -> f64 {
        (j as f64 + 0.5) * self.hy
    }

    #[inline]
    pub fn x_face(&self, i: usize) -> f64 {
        i as f64 * self.hx
    }

    #[inline]
    pub fn y_face(&self, j: usize) -> f64 {
        j as f64 * self.hy
    }

    /// Number of scalar unknowns (interior cells).
    pub fn n_cells(&self) -> usize {
        self.nx * self.ny
    }

    /// Number of velocity unknowns (interior, non-wall faces of both components).
    pub fn n_velocity_unknowns(&self) -> usize {
        (self.nx - 1) * self.ny + self.nx * (self.ny - 1)
    }

    pub fn check_scalar(&self, s: &ScalarField) -> Result<()> {
        if s.nx != self.nx || s.ny != self.ny {
            return Err(AcnsError::SizeMismatch(format!(
                "scalar field is {}x{}, grid is {}x{}",
                s.nx, s.ny, self.nx, self.ny
            )));
        }
        Ok(())
    }

    pub fn check_velocity(&self, v: &StaggeredVelocity) -> Result<()> {
        if v.nx != self.nx || v.ny != self.ny {
            return Err(AcnsError::SizeMismatch(format!(
                "velocity field is {}x{}, grid is {}x{}",
                v.nx, v.ny, self.nx, self.ny
            )));
        }
        Ok(())
    }

    /// Samples `g` at cell centres and applies the Neumann ghost rule.
    pub fn sample_scalar(&self, g: impl Fn(f64, f64) -> f64) -> ScalarField {
        let mut s = ScalarField::zeros(self);
        for j in 0..self.ny {
            let y = self.y_center(j);
            for i in 0..self.nx {
                s.set(i, j, g(self.x_center(i), y));
            }
        }
        s.apply_neumann();
        s
    }

    /// Samples `gu` on vertical faces and `gv` on horizontal faces, then
    /// imposes no-slip (wall faces are overwritten with 0).
    pub fn sample_velocity(
        &self,
        gu: impl Fn(f64, f64) -> f64,
        gv: impl Fn(f64, f64) -> f64,
    ) -> StaggeredVelocity {
        let mut w = StaggeredVelocity::zeros(self);
        for j in 0..self.ny {
            let y = self.y_center(j);
            for i in 0..=self.nx {
                w.set_u(i, j, gu(self.x_face(i), y));
            }
        }
        for j in 0..=self.ny {
            let y = self.y_face(j);
            for i in 0..self.nx {
                w.set_v(i, j, gv(self.x_center(i), y));
            }
        }
        w.apply_no_slip();
        w
    }
}

/// Cell-centred scalar with one ghost layer.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    nx: usize,
    ny: usize,
    data: Vec<f64>,
}

impl ScalarField {
    pub fn zeros(grid: &Grid) -> Self {
        Self::constant(grid, 0.0)
    }

    pub fn constant(grid: &Grid, value: f64) -> Self {
        Self {
            nx: grid.nx,
            ny: grid.ny,
            data: vec![value; (grid.nx + 2) * (grid.ny + 2)],
        }
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    #[inline]
    fn idx(&self, i: isize, j: isize) -> usize {
        debug_assert!(i >= -1 && i <= self.nx as isize && j >= -1 && j <= self.ny as isize);
        (i + 1) as usize + (j + 1) as usize * (self.nx + 2)
    }

    /// Value at cell `(i, j)`; `-1` and `n` address ghosts.
    #[inline]
    pub fn at(&self, i: isize, j: isize) -> f64 {
        self.data[self.idx(i, j)]
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[(i + 1) + (j + 1) * (self.nx + 2)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        let k = (i + 1) + (j + 1) * (self.nx + 2);
        self.data[k] = value;
    }

    #[inline]
    pub fn set_at(&mut self, i: isize, j: isize, value: f64) {
        let k = self.idx(i, j);
        self.data[k] = value;
    }

    /// Interior values in row-major order (`i` fastest).
    pub fn interior(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.ny).flat_map(move |j| (0..self.nx).map(move |i| self.get(i, j)))
    }

    pub fn interior_vec(&self) -> Vec<f64> {
        self.interior().collect()
    }

    /// Overwrites the interior from a row-major slice and refreshes ghosts.
    pub fn set_interior(&mut self, values: &[f64]) {
        assert_eq!(values.len(), self.nx * self.ny);
        for j in 0..self.ny {
            for i in 0..self.nx {
                self.set(i, j, values[i + j * self.nx]);
            }
        }
        self.apply_neumann();
    }

    /// Applies `g` to every interior value, then refreshes ghosts.
    pub fn map(&self, g: impl Fn(f64) -> f64) -> Self {
        let mut out = self.clone();
        for j in 0..self.ny {
            for i in 0..self.nx {
                out.set(i, j, g(self.get(i, j)));
            }
        }
        out.apply_neumann();
        out
    }

    /// Pointwise combination of two interior fields, ghosts refreshed.
    pub fn zip_map(&self, other: &Self, g: impl Fn(f64, f64) -> f64) -> Self {
        assert_eq!((self.nx, self.ny), (other.nx, other.ny));
        let mut out = self.clone();
        for j in 0..self.ny {
            for i in 0..self.nx {
                out.set(i, j, g(self.get(i, j), other.get(i, j)));
            }
        }
        out.apply_neumann();
        out
    }

    /// Zero-normal-derivative ghosts: each ghost copies the adjacent interior
    /// cell. Rows first, then columns, so corner ghosts copy the corner cell.
    pub fn apply_neumann(&mut self) {
        let (nx, ny) = (self.nx as isize, self.ny as isize);
        for i in 0..nx {
            let lo = self.at(i, 0);
            let hi = self.at(i, ny - 1);
            self.set_at(i, -1, lo);
            self.set_at(i, ny, hi);
        }
        for j in -1..=ny {
            let lo = self.at(0, j);
            let hi = self.at(nx - 1, j);
            self.set_at(-1, j, lo);
            self.set_at(nx, j, hi);
        }
    }

    pub fn min(&self) -> f64 {
        self.interior().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.interior().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.interior().fold(0.0, |m, x| m.max(x.abs()))
    }

    pub fn sum(&self) -> f64 {
        self.interior().sum()
    }

    pub fn mean(&self) -> f64 {
        self.sum() / (self.nx * self.ny) as f64
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Raw storage including ghosts, for bitwise comparisons.
    pub fn raw(&self) -> &[f64] {
        &self.data
    }
}

/// Face-centred velocity on the MAC layout.
#[derive(Debug, Clone, PartialEq)]
pub struct StaggeredVelocity {
    nx: usize,
    ny: usize,
    u: Vec<f64>,
    v: Vec<f64>,
}

impl StaggeredVelocity {
    pub fn zeros(grid: &Grid) -> Self {
        Self {
            nx: grid.nx,
            ny: grid.ny,
            u: vec![0.0; (grid.nx + 1) * (grid.ny + 2)],
            v: vec![0.0; (grid.nx + 2) * (grid.ny + 1)],
        }
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    #[inline]
    fn iu(&self, i: isize, j: isize) -> usize {
        debug_assert!(i >= 0 && i <= self.nx as isize && j >= -1 && j <= self.ny as isize);
        i as usize + (j + 1) as usize * (self.nx + 1)
    }

    #[inline]
    fn iv(&self, i: isize, j: isize) -> usize {
        debug_assert!(i >= -1 && i <= self.nx as isize && j >= 0 && j <= self.ny as isize);
        (i + 1) as usize + j as usize * (self.nx + 2)
    }

    /// `u` on the vertical face at `x = i hx`, row `j` (ghost rows `-1`, `ny`).
    #[inline]
    pub fn u_at(&self, i: isize, j: isize) -> f64 {
        self.u[self.iu(i, j)]
    }

    /// `v` on the horizontal face at `y = j hy`, column `i` (ghost columns `-1`, `nx`).
    #[inline]
    pub fn v_at(&self, i: isize, j: isize) -> f64 {
        self.v[self.iv(i, j)]
    }

    #[inline]
    pub fn u(&self, i: usize, j: usize) -> f64 {
        self.u_at(i as isize, j as isize)
    }

    #[inline]
    pub fn v(&self, i: usize, j: usize) -> f64 {
        self.v_at(i as isize, j as isize)
    }

    #[inline]
    pub fn set_u(&mut self, i: usize, j: usize, value: f64) {
        let k = self.iu(i as isize, j as isize);
        self.u[k] = value;
    }

    #[inline]
    pub fn set_v(&mut self, i: usize, j: usize, value: f64) {
        let k = self.iv(i as isize, j as isize);
        self.v[k] = value;
    }

    #[inline]
    fn set_u_at(&mut self, i: isize, j: isize, value: f64) {
        let k = self.iu(i, j);
        self.u[k] = value;
    }

    #[inline]
    fn set_v_at(&mut self, i: isize, j: isize, value: f64) {
        let k = self.iv(i, j);
        self.v[k] = value;
    }

    /// No-slip walls: normal faces on the boundary are 0 and tangential ghosts
    /// are the negated first interior value (linear reflection). Ghosts are
    /// computed as `0 - x` so a zero field never picks up negative zeros.
    pub fn apply_no_slip(&mut self) {
        let (nx, ny) = (self.nx as isize, self.ny as isize);
        for j in 0..ny {
            self.set_u_at(0, j, 0.0);
            self.set_u_at(nx, j, 0.0);
        }
        for i in 0..=nx {
            let lo = 0.0 - self.u_at(i, 0);
            let hi = 0.0 - self.u_at(i, ny - 1);
            self.set_u_at(i, -1, lo);
            self.set_u_at(i, ny, hi);
        }
        for i in 0..nx {
            self.set_v_at(i, 0, 0.0);
            self.set_v_at(i, ny, 0.0);
        }
        for j in 0..=ny {
            let lo = 0.0 - self.v_at(0, j);
            let hi = 0.0 - self.v_at(nx - 1, j);
            self.set_v_at(-1, j, lo);
            self.set_v_at(nx, j, hi);
        }
    }

    /// Interior `u` faces (walls included) in row-major order.
    pub fn u_values(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.ny).flat_map(move |j| (0..=self.nx).map(move |i| self.u(i, j)))
    }

    /// Interior `v` faces (walls included) in row-major order.
    pub fn v_values(&self) -> impl Iterator<Item = f64> + '_ {
        (0..=self.ny).flat_map(move |j| (0..self.nx).map(move |i| self.v(i, j)))
    }

    pub fn max_abs(&self) -> f64 {
        self.u_values()
            .chain(self.v_values())
            .fold(0.0, |m, x| m.max(x.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.u.iter().chain(self.v.iter()).all(|x| x.is_finite())
    }

    /// Copies the non-wall face values into `out` (`u` block then `v` block).
    pub fn pack_unknowns(&self, out: &mut [f64]) {
        let (nx, ny) = (self.nx, self.ny);
        assert_eq!(out.len(), (nx - 1) * ny + nx * (ny - 1));
        let mut k = 0;
        for j in 0..ny {
            for i in 1..nx {
                out[k] = self.u(i, j);
                k += 1;
            }
        }
        for j in 1..ny {
            for i in 0..nx {
                out[k] = self.v(i, j);
                k += 1;
            }
        }
    }

    pub fn unknowns(&self) -> Vec<f64> {
        let mut out = vec![0.0; (self.nx - 1) * self.ny + self.nx * (self.ny - 1)];
        self.pack_unknowns(&mut out);
        out
    }

    /// Inverse of [`pack_unknowns`](Self::pack_unknowns); walls and ghosts are
    /// re-imposed afterwards.
    pub fn unpack_unknowns(&mut self, x: &[f64]) {
        let (nx, ny) = (self.nx, self.ny);
        assert_eq!(x.len(), (nx - 1) * ny + nx * (ny - 1));
        let mut k = 0;
        for j in 0..ny {
            for i in 1..nx {
                self.set_u(i, j, x[k]);
                k += 1;
            }
        }
        for j in 1..ny {
            for i in 0..nx {
                self.set_v(i, j, x[k]);
                k += 1;
            }
        }
        self.apply_no_slip();
    }

    /// `self + a * other`, no-slip re-imposed.
    pub fn axpy(&self, a: f64, other: &Self) -> Self {
        let mut out = self.clone();
        for (o, b) in out.u.iter_mut().zip(&other.u) {
            *o += a * b;
        }
        for (o, b) in out.v.iter_mut().zip(&other.v) {
            *o += a * b;
        }
        out.apply_no_slip();
        out
    }

    pub fn scale(&self, a: f64) -> Self {
        let mut out = self.clone();
        out.u
            .iter_mut()
            .chain(out.v.iter_mut())
            .for_each(|x| *x *= a);
        out.apply_no_slip();
        out
    }

    pub fn raw_u(&self) -> &[f64] {
        &self.u
    }

    pub fn raw_v(&self) -> &[f64] {
        &self.v
    }
}

/// One time level of the solution.
#[derive(Debug, Clone, PartialEq)]
pub struct SimState {
    pub velocity: StaggeredVelocity,
    pub pressure: ScalarField,
    pub phase: ScalarField,
    pub time: f64,
}

impl SimState {
    /// Fluid at rest with the given phase field and zero pressure.
    pub fn at_rest(grid: &Grid, phase: ScalarField) -> Self {
        Self {
            velocity: StaggeredVelocity::zeros(grid),
            pressure: ScalarField::zeros(grid),
            phase,
            time: 0.0,
        }
    }

    pub fn apply_bc(&mut self) {
        self.velocity.apply_no_slip();
        self.pressure.apply_neumann();
        self.phase.apply_neumann();
    }

    pub fn is_finite(&self) -> bool {
        self.velocity.is_finite() && self.pressure.is_finite() && self.phase.is_finite()
    }

    /// Bitwise equality of every stored value (ghosts included) and the time.
    pub fn bitwise_eq(&self, other: &Self) -> bool {
        fn same(a: &[f64], b: &[f64]) -> bool {
            a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
        }
        same(self.velocity.raw_u(), other.velocity.raw_u())
            && same(self.velocity.raw_v(), other.velocity.raw_v())
            && same(self.pressure.raw(), other.pressure.raw())
            && same(self.phase.raw(), other.phase.raw())
            && self.time.to_bits() == other.time.to_bits()
    }
}

// ---------------------------------------------------------------------------
// Boundary conditions
// ---------------------------------------------------------------------------

pub fn apply_bc_velocity(grid: &Grid, v: &StaggeredVelocity) -> Result<StaggeredVelocity> {
    grid.check_velocity(v)?;
    let mut out = v.clone();
    out.apply_no_slip();
    Ok(out)
}

pub fn apply_bc_neumann(grid: &Grid, s: &ScalarField) -> Result<ScalarField> {
    grid.check_scalar(s)?;
    let mut out = s.clone();
    out.apply_neumann();
    Ok(out)
}

// ---------------------------------------------------------------------------
// Inner products and norms
// ---------------------------------------------------------------------------

/// Midpoint-rule `L2` inner product of two scalars.
pub fn inner_scalar(grid: &Grid, a: &ScalarField, b: &ScalarField) -> f64 {
    a.interior()
        .zip(b.interior())
        .map(|(x, y)| x * y)
        .sum::<f64>()
        * grid.cell_area()
}

/// `L2` inner product of two face fields (each face carries one cell area).
pub fn inner_velocity(grid: &Grid, a: &StaggeredVelocity, b: &StaggeredVelocity) -> f64 {
    let su: f64 = a.u_values().zip(b.u_values()).map(|(x, y)| x * y).sum();
    let sv: f64 = a.v_values().zip(b.v_values()).map(|(x, y)| x * y).sum();
    (su + sv) * grid.cell_area()
}

pub fn norm_sq_scalar(grid: &Grid, a: &ScalarField) -> f64 {
    inner_scalar(grid, a, a)
}

pub fn norm_sq_velocity(grid: &Grid, a: &StaggeredVelocity) -> f64 {
    inner_velocity(grid, a, a)
}

/// `||grad s||^2` with the face gradient; equals `-<lap_N s, s>`.
pub fn grad_norm_sq_scalar(grid: &Grid, s: &ScalarField) -> f64 {
    let (nx, ny) = (grid.nx, grid.ny);
    let mut acc = 0.0;
    for j in 0..ny {
        for i in 1..nx {
            let d = (s.get(i, j) - s.get(i - 1, j)) / grid.hx;
            acc += d * d;
        }
    }
    for j in 1..ny {
        for i in 0..nx {
            let d = (s.get(i, j) - s.get(i, j - 1)) / grid.hy;
            acc += d * d;
        }
    }
    acc * grid.cell_area()
}

/// `||grad u||^2` summed over both components; equals `-<lap_D u, u>`.
/// Wall-adjacent tangential differences see the wall at half a cell.
pub fn grad_norm_sq_velocity(grid: &Grid, w: &StaggeredVelocity) -> f64 {
    let (nx, ny) = (grid.nx, grid.ny);
    let (ihx2, ihy2) = (1.0 / (grid.hx * grid.hx), 1.0 / (grid.hy * grid.hy));
    let mut acc = 0.0;
    // u: normal direction, walls hold 0
    for j in 0..ny {
        for i in 0..nx {
            let d = w.u(i + 1, j) - w.u(i, j);
            acc += d * d * ihx2;
        }
    }
    // u: tangential direction
    for i in 1..nx {
        for j in 1..ny {
            let d = w.u(i, j) - w.u(i, j - 1);
            acc += d * d * ihy2;
        }
        let (lo, hi) = (w.u(i, 0), w.u(i, ny - 1));
        acc += 2.0 * (lo * lo + hi * hi) * ihy2;
    }
    for i in 0..nx {
        for j in 0..ny {
            let d = w.v(i, j + 1) - w.v(i, j);
            acc += d * d * ihy2;
        }
    }
    for j in 1..ny {
        for i in 1..nx {
            let d = w.v(i, j) - w.v(i - 1, j);
            acc += d * d * ihx2;
        }
        let (lo, hi) = (w.v(0, j), w.v(nx - 1, j));
        acc += 2.0 * (lo * lo + hi * hi) * ihx2;
    }
    acc * grid.cell_area()
}

// ---------------------------------------------------------------------------
// Differential operators
// ---------------------------------------------------------------------------

pub fn divergence(grid: &Grid, w: &StaggeredVelocity) -> Result<ScalarField> {
    grid.check_velocity(w)?;
    let mut out = ScalarField::zeros(grid);
    divergence_into(grid, w, &mut out);
    Ok(out)
}

pub(crate) fn divergence_into(grid: &Grid, w: &StaggeredVelocity, out: &mut ScalarField) {
    for j in 0..grid.ny {
        for i in 0..grid.nx {
            let d = (w.u(i + 1, j) - w.u(i, j)) / grid.hx + (w.v(i, j + 1) - w.v(i, j)) / grid.hy;
            out.set(i, j, d);
        }
    }
    out.apply_neumann();
}

/// Face gradient of a cell scalar; wall faces carry the Neumann value 0.
pub fn gradient(grid: &Grid, s: &ScalarField) -> Result<StaggeredVelocity> {
    grid.check_scalar(s)?;
    let mut out = StaggeredVelocity::zeros(grid);
    gradient_into(grid, s, &mut out);
    Ok(out)
}

pub(crate) fn gradient_into(grid: &Grid, s: &ScalarField, out: &mut StaggeredVelocity) {
    let (nx, ny) = (grid.nx, grid.ny);
    for j in 0..ny {
        for i in 1..nx {
            out.set_u(i, j, (s.get(i, j) - s.get(i - 1, j)) / grid.hx);
        }
    }
    for j in 1..ny {
        for i in 0..nx {
            out.set_v(i, j, (s.get(i, j) - s.get(i, j - 1)) / grid.hy);
        }
    }
    out.apply_no_slip();
}

pub fn laplacian_neumann(grid: &Grid, s: &ScalarField) -> Result<ScalarField> {
    grid.check_scalar(s)?;
    let mut out = ScalarField::zeros(grid);
    laplacian_neumann_into(grid, s, &mut out);
    Ok(out)
}

pub(crate) fn laplacian_neumann_into(grid: &Grid, s: &ScalarField, out: &mut ScalarField) {
    let (ihx2, ihy2) = (1.0 / (grid.hx * grid.hx), 1.0 / (grid.hy * grid.hy));
    for j in 0..grid.ny as isize {
        for i in 0..grid.nx as isize {
            let c = s.at(i, j);
            let lap = (s.at(i + 1, j) - 2.0 * c + s.at(i - 1, j)) * ihx2
                + (s.at(i, j + 1) - 2.0 * c + s.at(i, j - 1)) * ihy2;
            out.set_at(i, j, lap);
        }
    }
    out.apply_neumann();
}

/// Componentwise Laplacian with no-slip walls. Wall faces are set to 0.
pub fn laplacian_dirichlet(grid: &Grid, w: &StaggeredVelocity) -> Result<StaggeredVelocity> {
    grid.check_velocity(w)?;
    let mut out = StaggeredVelocity::zeros(grid);
    laplacian_dirichlet_into(grid, w, &mut out);
    Ok(out)
}

pub(crate) fn laplacian_dirichlet_into(
    grid: &Grid,
    w: &StaggeredVelocity,
    out: &mut StaggeredVelocity,
) {
    let (nx, ny) = (grid.nx as isize, grid.ny as isize);
    let (ihx2, ihy2) = (1.0 / (grid.hx * grid.hx), 1.0 / (grid.hy * grid.hy));
    for j in 0..ny {
        for i in 1..nx {
            let c = w.u_at(i, j);
            let lap = (w.u_at(i + 1, j) - 2.0 * c + w.u_at(i - 1, j)) * ihx2
                + (w.u_at(i, j + 1) - 2.0 * c + w.u_at(i, j - 1)) * ihy2;
            out.set_u_at(i, j, lap);
        }
    }
    for j in 1..ny {
        for i in 0..nx {
            let c = w.v_at(i, j);
            let lap = (w.v_at(i + 1, j) - 2.0 * c + w.v_at(i - 1, j)) * ihx2
                + (w.v_at(i, j + 1) - 2.0 * c + w.v_at(i, j - 1)) * ihy2;
            out.set_v_at(i, j, lap);
        }
    }
    out.apply_no_slip();
}

/// `u . grad s` at cell centres: the average of the two face products
/// `u_f (ds/dx)_f` in each direction.
pub fn advect_scalar(grid: &Grid, w: &StaggeredVelocity, s: &ScalarField) -> Result<ScalarField> {
    grid.check_velocity(w)?;
    grid.check_scalar(s)?;
    let mut out = ScalarField::zeros(grid);
    advect_scalar_into(grid, w, s, &mut out);
    Ok(out)
}

pub(crate) fn advect_scalar_into(
    grid: &Grid,
    w: &StaggeredVelocity,
    s: &ScalarField,
    out: &mut ScalarField,
) {
    let (hx2, hy2) = (0.5 / grid.hx, 0.5 / grid.hy);
    for j in 0..grid.ny as isize {
        for i in 0..grid.nx as isize {
            let c = s.at(i, j);
            let ax = w.u_at(i + 1, j) * (s.at(i + 1, j) - c) + w.u_at(i, j) * (c - s.at(i - 1, j));
            let ay = w.v_at(i, j + 1) * (s.at(i, j + 1) - c) + w.v_at(i, j) * (c - s.at(i, j - 1));
            out.set_at(i, j, ax * hx2 + ay * hy2);
        }
    }
    out.apply_neumann();
}

/// `u . grad u` with the same velocity as transport and transported field.
pub fn advect_velocity(grid: &Grid, w: &StaggeredVelocity) -> Result<StaggeredVelocity> {
    advect_velocity_by(grid, w, w)
}

/// `w . grad x` on the faces of `x`: transport velocities are averaged to the
/// centres/corners of each face's control volume and each edge difference is
/// weighted by half its transport velocity.
pub fn advect_velocity_by(
    grid: &Grid,
    w: &StaggeredVelocity,
    x: &StaggeredVelocity,
) -> Result<StaggeredVelocity> {
    grid.check_velocity(w)?;
    grid.check_velocity(x)?;
    let mut out = StaggeredVelocity::zeros(grid);
    advect_velocity_into(grid, w, x, &mut out);
    Ok(out)
}

pub(crate) fn advect_velocity_into(
    grid: &Grid,
    w: &StaggeredVelocity,
    x: &StaggeredVelocity,
    out: &mut StaggeredVelocity,
) {
    let (nx, ny) = (grid.nx as isize, grid.ny as isize);
    let (hx4, hy4) = (0.25 / grid.hx, 0.25 / grid.hy);
    for j in 0..ny {
        for i in 1..nx {
            let c = x.u_at(i, j);
            let ue = w.u_at(i, j) + w.u_at(i + 1, j);
            let uw = w.u_at(i - 1, j) + w.u_at(i, j);
            let vn = w.v_at(i - 1, j + 1) + w.v_at(i, j + 1);
            let vs = w.v_at(i - 1, j) + w.v_at(i, j);
            let ax = ue * (x.u_at(i + 1, j) - c) + uw * (c - x.u_at(i - 1, j));
            let ay = vn * (x.u_at(i, j + 1) - c) + vs * (c - x.u_at(i, j - 1));
            out.set_u_at(i, j, ax * hx4 + ay * hy4);
        }
    }
    for j in 1..ny {
        for i in 0..nx {
            let c = x.v_at(i, j);
            let vn = w.v_at(i, j) + w.v_at(i, j + 1);
            let vs = w.v_at(i, j - 1) + w.v_at(i, j);
            let ue = w.u_at(i + 1, j - 1) + w.u_at(i + 1, j);
            let uw = w.u_at(i, j - 1) + w.u_at(i, j);
            let ax = ue * (x.v_at(i + 1, j) - c) + uw * (c - x.v_at(i - 1, j));
            let ay = vn * (x.v_at(i, j + 1) - c) + vs * (c - x.v_at(i, j - 1));
            out.set_v_at(i, j, ax * hx4 + ay * hy4);
        }
    }
    out.apply_no_slip();
}

/// Capillary body force `-lambda lap(phi) grad(phi)` on the faces, with the
/// cell Laplacian averaged to each face.
pub fn capillary_force(
    grid: &Grid,
    phase: &ScalarField,
    params: &Params,
) -> Result<StaggeredVelocity> {
    grid.check_scalar(phase)?;
    let mut lap = ScalarField::zeros(grid);
    laplacian_neumann_into(grid, phase, &mut lap);
    let mut out = StaggeredVelocity::zeros(grid);
    capillary_from_laplacian(grid, phase, &lap, params.lambda, &mut out);
    Ok(out)
}

pub(crate) fn capillary_from_laplacian(
    grid: &Grid,
    phase: &ScalarField,
    lap: &ScalarField,
    lambda: f64,
    out: &mut StaggeredVelocity,
) {
    let (nx, ny) = (grid.nx, grid.ny);
    let (cx, cy) = (-0.5 * lambda / grid.hx, -0.5 * lambda / grid.hy);
    for j in 0..ny {
        for i in 1..nx {
            let g = phase.get(i, j) - phase.get(i - 1, j);
            out.set_u(i, j, cx * (lap.get(i, j) + lap.get(i - 1, j)) * g);
        }
    }
    for j in 1..ny {
        for i in 0..nx {
            let g = phase.get(i, j) - phase.get(i, j - 1);
            out.set_v(i, j, cy * (lap.get(i, j) + lap.get(i, j - 1)) * g);
        }
    }
    out.apply_no_slip();
}

/// `|u|^2` at cell centres as the mean of the squared face values, so that
/// `sum_c rho_c |u|_c^2 = sum_f rho_f u_f^2` with face-averaged densities.
pub fn speed_sq(grid: &Grid, w: &StaggeredVelocity) -> ScalarField {
    let mut out = ScalarField::zeros(grid);
    for j in 0..grid.ny {
        for i in 0..grid.nx {
            let (a, b) = (w.u(i, j), w.u(i + 1, j));
            let (c, d) = (w.v(i, j), w.v(i, j + 1));
            out.set(i, j, 0.5 * (a * a + b * b + c * c + d * d));
        }
    }
    out.apply_neumann();
    out
}

/// Cell scalar averaged onto the faces (wall faces use the adjacent cell).
pub fn cell_to_faces(grid: &Grid, s: &ScalarField) -> StaggeredVelocity {
    let (nx, ny) = (grid.nx, grid.ny);
    let mut out = StaggeredVelocity::zeros(grid);
    for j in 0..ny {
        for i in 1..nx {
            out.set_u(i, j, 0.5 * (s.get(i, j) + s.get(i - 1, j)));
        }
    }
    for j in 1..ny {
        for i in 0..nx {
            out.set_v(i, j, 0.5 * (s.get(i, j) + s.get(i, j - 1)));
        }
    }
    // wall faces are not unknowns; keep the adjacent value for weighting
    for j in 0..ny {
        out.set_u(0, j, s.get(0, j));
        out.set_u(nx, j, s.get(nx - 1, j));
    }
    for i in 0..nx {
        out.set_v(i, 0, s.get(i, 0));
        out.set_v(i, ny, s.get(i, ny - 1));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn random_scalar(grid: &Grid, rng: &mut ChaCha8Rng) -> ScalarField {
        let mut s = ScalarField::zeros(grid);
        for j in 0..grid.ny {
            for i in 0..grid.nx {
                s.set(i, j, rng.gen_range(-1.0..1.0));
            }
        }
        s.apply_neumann();
        s
    }

    fn random_velocity(grid: &Grid, rng: &mut ChaCha8Rng) -> StaggeredVelocity {
        let mut w = StaggeredVelocity::zeros(grid);
        let mut x = vec![0.0; grid.n_velocity_unknowns()];
        x.iter_mut().for_each(|v| *v = rng.gen_range(-1.0..1.0));
        w.unpack_unknowns(&x);
        w
    }

    #[test]
    fn zero_velocity_stays_zero() {
        let g = Grid::unit_square(4).unwrap();
        let w = StaggeredVelocity::zeros(&g);
        let out = apply_bc_velocity(&g, &w).unwrap();
        assert!(out
            .raw_u()
            .iter()
            .chain(out.raw_v())
            .all(|x| x.to_bits() == 0));
    }

    #[test]
    fn constant_u_reflects_at_walls() {
        let g = Grid::unit_square(4).unwrap();
        let w = g.sample_velocity(|_, _| 1.0, |_, _| 0.0);
        for j in 0..4 {
            assert_eq!(w.u(0, j), 0.0);
            assert_eq!(w.u(4, j), 0.0);
        }
        for i in 1..4 {
            assert_eq!(w.u_at(i, -1), -1.0);
            assert_eq!(w.u_at(i, 4), -1.0);
            assert_eq!(w.u(i as usize, 0), 1.0);
        }
        let again = apply_bc_velocity(&g, &w).unwrap();
        assert_eq!(again, w);
    }

    #[test]
    fn neumann_ghosts_mirror_interior() {
        let g = Grid::unit_square(4).unwrap();
        let s = g.sample_scalar(|x, _| x);
        for j in 0..4 {
            assert_eq!(s.at(-1, j), s.at(0, j));
            assert_eq!(s.at(4, j), s.at(3, j));
            // one-sided normal difference across the wall vanishes
            assert_eq!(s.at(0, j) - s.at(-1, j), 0.0);
        }
        assert_eq!(s.at(-1, -1), s.get(0, 0));
        assert_eq!(s.at(4, 4), s.get(3, 3));
        let c = ScalarField::constant(&g, 2.5);
        assert_eq!(apply_bc_neumann(&g, &c).unwrap(), c);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let r = random_scalar(&g, &mut rng);
        assert_eq!(apply_bc_neumann(&g, &r).unwrap(), r);
    }

    #[test]
    fn size_mismatch_is_reported() {
        let g4 = Grid::unit_square(4).unwrap();
        let g5 = Grid::unit_square(5).unwrap();
        let s = ScalarField::zeros(&g5);
        assert!(matches!(
            laplacian_neumann(&g4, &s),
            Err(AcnsError::SizeMismatch(_))
        ));
        let w = StaggeredVelocity::zeros(&g5);
        assert!(divergence(&g4, &w).is_err());
        assert!(apply_bc_velocity(&g4, &w).is_err());
    }

    #[test]
    fn gradient_exact_on_linear() {
        let g = Grid::new(8, 6, 2.0, 1.5).unwrap();
        let s = g.sample_scalar(|x, _| x);
        let gr = gradient(&g, &s).unwrap();
        for j in 0..6 {
            for i in 1..8 {
                assert!((gr.u(i, j) - 1.0).abs() < 1e-12);
            }
        }
        assert!(gr.v_values().all(|x| x == 0.0));
        let div = divergence(&g, &StaggeredVelocity::zeros(&g)).unwrap();
        assert_eq!(div.max_abs(), 0.0);
    }

    #[test]
    fn stencils_vanish_on_constants() {
        let g = Grid::unit_square(8).unwrap();
        let c = ScalarField::constant(&g, 0.7);
        assert_eq!(laplacian_neumann(&g, &c).unwrap().max_abs(), 0.0);
        assert_eq!(gradient(&g, &c).unwrap().max_abs(), 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let w = random_velocity(&g, &mut rng);
        assert_eq!(advect_scalar(&g, &w, &c).unwrap().max_abs(), 0.0);
    }

    #[test]
    fn integration_by_parts_random() {
        let g = Grid::unit_square(16).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..20 {
            let p = random_scalar(&g, &mut rng);
            let w = random_velocity(&g, &mut rng);
            let a = inner_scalar(&g, &divergence(&g, &w).unwrap(), &p);
            let b = inner_velocity(&g, &w, &gradient(&g, &p).unwrap());
            assert!((a + b).abs() <= 1e-12 * (a.abs() + b.abs()));
        }
    }

    #[test]
    fn laplacians_are_negative_semidefinite_and_match_gradient_norms() {
        let g = Grid::new(12, 9, 1.0, 0.8).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..10 {
            let s = random_scalar(&g, &mut rng);
            let ls = inner_scalar(&g, &laplacian_neumann(&g, &s).unwrap(), &s);
            assert!(ls <= 0.0);
            let gs = grad_norm_sq_scalar(&g, &s);
            assert!((ls + gs).abs() <= 1e-10 * gs);

            let w = random_velocity(&g, &mut rng);
            let lw = inner_velocity(&g, &laplacian_dirichlet(&g, &w).unwrap(), &w);
            assert!(lw <= 0.0);
            let gw = grad_norm_sq_velocity(&g, &w);
            assert!((lw + gw).abs() <= 1e-10 * gw, "{lw} vs {gw}");
        }
    }

    #[test]
    fn neumann_laplacian_has_zero_mean() {
        let g = Grid::unit_square(32).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        let s = random_scalar(&g, &mut rng);
        let total = laplacian_neumann(&g, &s).unwrap().sum() * g.cell_area();
        assert!(total.abs() <= 1e-12 * s.max_abs() * g.area());
    }

    fn neumann_laplacian_error(n: usize) -> f64 {
        let g = Grid::new(n, n, 2.0, 2.0).unwrap();
        let k = PI / g.lx;
        let s = g.sample_scalar(|x, _| (k * x).cos());
        let lap = laplacian_neumann(&g, &s).unwrap();
        let exact = s.map(|v| -k * k * v);
        lap.zip_map(&exact, |a, b| a - b).max_abs()
    }

    #[test]
    fn neumann_laplacian_second_order() {
        let e: Vec<f64> = [16, 32, 64]
            .iter()
            .map(|&n| neumann_laplacian_error(n))
            .collect();
        for w in e.windows(2) {
            let order = (w[0] / w[1]).log2();
            assert!((1.7..=2.3).contains(&order), "order {order}");
        }
    }

    #[test]
    fn dirichlet_laplacian_second_order_on_eigenfunction() {
        // u = sin(pi x) sin(pi y) is a discrete eigenfunction of the wall-reflected stencil
        let err = |n: usize| {
            let g = Grid::unit_square(n).unwrap();
            let w = g.sample_velocity(
                |x, y| (PI * x).sin() * (PI * y).sin(),
                |x, y| (PI * x).sin() * (PI * y).sin(),
            );
            let lap = laplacian_dirichlet(&g, &w).unwrap();
            let expect = w.axpy(-1.0, &w).axpy(-2.0 * PI * PI, &w);
            lap.axpy(-1.0, &expect).max_abs()
        };
        let (a, b, c) = (err(16), err(32), err(64));
        for order in [(a / b).log2(), (b / c).log2()] {
            assert!((1.7..=2.3).contains(&order), "order {order}");
        }
    }

    #[test]
    fn divergence_and_gradient_second_order() {
        let err = |n: usize| {
            let g = Grid::unit_square(n).unwrap();
            let w = g.sample_velocity(
                |x, y| (PI * x).sin() * (2.0 * PI * y).cos(),
                |x, y| (PI * y).sin() * (PI * x).cos(),
            );
            let div = divergence(&g, &w).unwrap();
            let exact = g.sample_scalar(|x, y| {
                PI * (PI * x).cos() * (2.0 * PI * y).cos() + PI * (PI * y).cos() * (PI * x).cos()
            });
            let e1 = div.zip_map(&exact, |a, b| a - b).max_abs();
            let s = g.sample_scalar(|x, y| (PI * x).cos() * (PI * y).cos());
            let gr = gradient(&g, &s).unwrap();
            let ex = g.sample_velocity(
                |x, y| -PI * (PI * x).sin() * (PI * y).cos(),
                |x, y| -PI * (PI * x).cos() * (PI * y).sin(),
            );
            (e1, gr.axpy(-1.0, &ex).max_abs())
        };
        let (a, b, c) = (err(16), err(32), err(64));
        for (x, y) in [(a.0, b.0), (b.0, c.0), (a.1, b.1), (b.1, c.1)] {
            let order = (x / y).log2();
            assert!((1.7..=2.3).contains(&order), "order {order}");
        }
    }

    /// Discretely divergence-free field from a corner stream function.
    fn solenoidal(grid: &Grid, rng: &mut ChaCha8Rng) -> StaggeredVelocity {
        let (nx, ny) = (grid.nx, grid.ny);
        // psi on cell corners, zero on the boundary
        let mut psi = vec![0.0; (nx + 1) * (ny + 1)];
        for j in 1..ny {
            for i in 1..nx {
                psi[i + j * (nx + 1)] = rng.gen_range(-1.0..1.0);
            }
        }
        let at = |i: usize, j: usize| psi[i + j * (nx + 1)];
        let mut w = StaggeredVelocity::zeros(grid);
        for j in 0..ny {
            for i in 0..=nx {
                w.set_u(i, j, (at(i, j + 1) - at(i, j)) / grid.hy);
            }
        }
        for j in 0..=ny {
            for i in 0..nx {
                w.set_v(i, j, -(at(i + 1, j) - at(i, j)) / grid.hx);
            }
        }
        w.apply_no_slip();
        w
    }

    #[test]
    fn advection_is_skew_for_solenoidal_transport() {
        let g = Grid::new(10, 14, 1.0, 1.3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..10 {
            let w = solenoidal(&g, &mut rng);
            assert!(divergence(&g, &w).unwrap().max_abs() < 1e-10);
            let x = random_velocity(&g, &mut rng);
            let nx = advect_velocity_by(&g, &w, &x).unwrap();
            let q = inner_velocity(&g, &nx, &x);
            let scale = norm_sq_velocity(&g, &x) * w.max_abs() / g.h_min();
            assert!(q.abs() <= 1e-12 * scale, "{q}");

            let s = random_scalar(&g, &mut rng);
            let a = inner_scalar(&g, &advect_scalar(&g, &w, &s).unwrap(), &s);
            let scale = norm_sq_scalar(&g, &s) * w.max_abs() / g.h_min();
            assert!(a.abs() <= 1e-12 * scale, "{a}");
        }
    }

    #[test]
    fn capillary_work_matches_advected_laplacian() {
        // sum_f u_f F_f = lambda sum_c lap(phi)_c (u . grad phi)_c
        let g = Grid::unit_square(12).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(37);
        let params = Params::default();
        let phi = random_scalar(&g, &mut rng);
        let w = random_velocity(&g, &mut rng);
        let work = inner_velocity(&g, &w, &capillary_force(&g, &phi, &params).unwrap());
        let lap = laplacian_neumann(&g, &phi).unwrap();
        let adv = advect_scalar(&g, &w, &phi).unwrap();
        let other = -params.lambda * inner_scalar(&g, &lap, &adv);
        assert!((work - other).abs() <= 1e-12 * work.abs().max(other.abs()));
    }

    #[test]
    fn pack_unpack_roundtrip() {
        let g = Grid::new(5, 7, 1.0, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let w = random_velocity(&g, &mut rng);
        let mut z = StaggeredVelocity::zeros(&g);
        z.unpack_unknowns(&w.unknowns());
        assert_eq!(z, w);
    }
}
