//! Plain-text field snapshots.
//!
//! ```text
//! ACNS 1 <nx> <ny> <lx> <ly> <time>
//! u
//! <ny rows of nx+1 values>
//! v
//! <ny+1 rows of nx values>
//! p
//! <ny rows of nx values>
//! phi
//! <ny rows of nx values>
//! ```
//!
//! Values use 17 significant digits, so reading a written file restores the
//! state bitwise. Ghost layers are not stored; they are rebuilt from the
//! boundary conditions.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{AcnsError, Result};
use crate::grid::{Grid, ScalarField, SimState, StaggeredVelocity};

pub const FORMAT_VERSION: u32 = 1;

fn write_rows(
    out: &mut String,
    label: &str,
    rows: usize,
    cols: usize,
    get: impl Fn(usize, usize) -> f64,
) {
    out.push_str(label);
    out.push('\n');
    for j in 0..rows {
        for i in 0..cols {
            if i > 0 {
                out.push(' ');
            }
            let _ = write!(out, "{:.16e}", get(i, j));
        }
        out.push('\n');
    }
}

/// Renders `state` in the snapshot format.
pub fn snapshot_to_string(grid: &Grid, state: &SimState) -> Result<String> {
    grid.check_velocity(&state.velocity)?;
    grid.check_scalar(&state.pressure)?;
    grid.check_scalar(&state.phase)?;
    if !state.is_finite() || !state.time.is_finite() {
        return Err(AcnsError::Snapshot(
            "refusing to write non-finite values".into(),
        ));
    }
    let (nx, ny) = (grid.nx, grid.ny);
    let mut out = format!(
        "ACNS {FORMAT_VERSION} {nx} {ny} {:?} {:?} {:?}\n",
        grid.lx, grid.ly, state.time
    );
    write_rows(&mut out, "u", ny, nx + 1, |i, j| state.velocity.u(i, j));
    write_rows(&mut out, "v", ny + 1, nx, |i, j| state.velocity.v(i, j));
    write_rows(&mut out, "p", ny, nx, |i, j| state.pressure.get(i, j));
    write_rows(&mut out, "phi", ny, nx, |i, j| state.phase.get(i, j));
    Ok(out)
}

pub fn snapshot_write(grid: &Grid, state: &SimState, path: &Path) -> Result<()> {
    let text = snapshot_to_string(grid, state)?;
    std::fs::write(path, text)?;
    Ok(())
}

fn header_field<T: std::str::FromStr>(token: Option<&str>, name: &str) -> Result<T> {
    let token = token.ok_or_else(|| AcnsError::Snapshot(format!("header is missing {name}")))?;
    token
        .parse()
        .map_err(|_| AcnsError::Snapshot(format!("malformed header {name} `{token}`")))
}

/// Parses the snapshot format, returning the grid it was written on.
pub fn snapshot_from_str(text: &str) -> Result<(Grid, SimState)> {
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| AcnsError::Snapshot("empty file".into()))?;
    let mut h = header.split_whitespace();
    if h.next() != Some("ACNS") {
        return Err(AcnsError::Snapshot("missing `ACNS` magic".into()));
    }
    let version: u32 = header_field(h.next(), "version")?;
    if version != FORMAT_VERSION {
        return Err(AcnsError::Snapshot(format!(
            "unsupported version {version} (this build reads {FORMAT_VERSION})"
        )));
    }
    let nx: usize = header_field(h.next(), "nx")?;
    let ny: usize = header_field(h.next(), "ny")?;
    let lx: f64 = header_field(h.next(), "lx")?;
    let ly: f64 = header_field(h.next(), "ly")?;
    let time: f64 = header_field(h.next(), "time")?;
    if h.next().is_some() {
        return Err(AcnsError::Snapshot("trailing tokens in header".into()));
    }
    if !time.is_finite() {
        return Err(AcnsError::Snapshot("non-finite time".into()));
    }
    let grid =
        Grid::new(nx, ny, lx, ly).map_err(|e| AcnsError::Snapshot(format!("bad grid: {e}")))?;

    let mut tokens = lines.flat_map(str::split_whitespace).peekable();
    let mut section = |label: &str, count: usize| -> Result<Vec<f64>> {
        match tokens.next() {
            Some(t) if t == label => {}
            Some(t) => {
                return Err(AcnsError::Snapshot(format!(
                    "expected section `{label}`, found `{t}`"
                )))
            }
            None => {
                return Err(AcnsError::Snapshot(format!(
                    "size mismatch: section `{label}` is missing"
                )))
            }
        }
        let mut values = Vec::with_capacity(count);
        while values.len() < count {
            match tokens.peek() {
                Some(t) if t.parse::<f64>().is_ok() => {
                    let v: f64 = tokens.next().unwrap().parse().unwrap();
                    if !v.is_finite() {
                        return Err(AcnsError::Snapshot(format!(
                            "non-finite value in section `{label}`"
                        )));
                    }
                    values.push(v);
                }
                _ => break,
            }
        }
        if values.len() != count {
            return Err(AcnsError::Snapshot(format!(
                "size mismatch in section `{label}`: expected {count} values, found {}",
                values.len()
            )));
        }
        Ok(values)
    };
    let u = section("u", (nx + 1) * ny)?;
    let v = section("v", nx * (ny + 1))?;
    let p = section("p", nx * ny)?;
    let phi = section("phi", nx * ny)?;
    if let Some(extra) = tokens.next() {
        return Err(AcnsError::Snapshot(format!(
            "size mismatch: unexpected trailing data `{extra}`"
        )));
    }

    let mut velocity = StaggeredVelocity::zeros(&grid);
    for j in 0..ny {
        for i in 0..=nx {
            velocity.set_u(i, j, u[i + j * (nx + 1)]);
        }
    }
    for j in 0..=ny {
        for i in 0..nx {
            velocity.set_v(i, j, v[i + j * nx]);
        }
    }
    let walls_zero = (0..ny).all(|j| velocity.u(0, j) == 0.0 && velocity.u(nx, j) == 0.0)
        && (0..nx).all(|i| velocity.v(i, 0) == 0.0 && velocity.v(i, ny) == 0.0);
    if !walls_zero {
        return Err(AcnsError::Snapshot(
            "non-zero normal velocity on a wall".into(),
        ));
    }
    velocity.apply_no_slip();
    let mut pressure = ScalarField::zeros(&grid);
    pressure.set_interior(&p);
    let mut phase = ScalarField::zeros(&grid);
    phase.set_interior(&phi);
    Ok((
        grid,
        SimState {
            velocity,
            pressure,
            phase,
            time,
        },
    ))
}

pub fn snapshot_read(path: &Path) -> Result<(Grid, SimState)> {
    let text = std::fs::read_to_string(path)?;
    snapshot_from_str(&text)
}
