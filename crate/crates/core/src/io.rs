//! Text artifact formats for fields and winds, and a PPM renderer.
//!
//! Field file: `FIELD nx ny x0 y0 dx dy t`, then `ny` rows of `nx` values
//! starting at `y0`; solid cells are `nan`.
//! Wind file: `WIND nx ny x0 y0 dx dy`, then the `(nx+1)*ny` u-face values
//! followed by the `nx*(ny+1)` v-face values.

use std::io::{BufRead, Write};
use std::sync::Arc;

use crate::domain::{Grid, ScalarField, WindField};
use crate::error::{Error, Result};

/// Raw contents of a field file; solid cells hold NaN.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldFile {
    pub nx: usize,
    pub ny: usize,
    pub x0: f64,
    pub y0: f64,
    pub dx: f64,
    pub dy: f64,
    pub t: f64,
    /// Row-major cell values, `ny * nx`.
    pub values: Vec<f64>,
}

impl FieldFile {
    pub fn from_field(field: &ScalarField, t: f64) -> Self {
        let grid = field.grid();
        let (x0, y0) = grid.origin();
        let mut values = vec![f64::NAN; grid.nx() * grid.ny()];
        for (d, &v) in field.values().iter().enumerate() {
            let (i, j) = grid.cell_of_dof(d);
            values[j * grid.nx() + i] = v;
        }
        Self {
            nx: grid.nx(),
            ny: grid.ny(),
            x0,
            y0,
            dx: grid.dx(),
            dy: grid.dy(),
            t,
            values,
        }
    }

    /// Field on `grid`; header and solid mask must match.
    pub fn to_field(&self, grid: &Arc<Grid>, path: &str) -> Result<ScalarField> {
        check_header(grid, self.nx, self.ny, self.x0, self.y0, self.dx, self.dy, path)?;
        let mut out = Vec::with_capacity(grid.n_dof());
        for j in 0..self.ny {
            for i in 0..self.nx {
                let v = self.values[j * self.nx + i];
                match (grid.is_solid(i, j), v.is_nan()) {
                    (true, true) => {}
                    (false, false) => out.push(v),
                    (solid, _) => {
                        return Err(Error::Parse {
                            path: path.into(),
                            line: j + 2,
                            msg: format!(
                                "cell ({i}, {j}) is {} but the value is {v}",
                                if solid { "solid" } else { "fluid" }
                            ),
                        })
                    }
                }
            }
        }
        ScalarField::new(grid.clone(), out)
    }

    pub fn write<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(
            out,
            "FIELD {} {} {} {} {} {} {}",
            self.nx, self.ny, self.x0, self.y0, self.dx, self.dy, self.t
        )?;
        for row in self.values.chunks(self.nx) {
            let line: Vec<String> = row
                .iter()
                .map(|v| if v.is_nan() { "nan".to_string() } else { format!("{v:e}") })
                .collect();
            writeln!(out, "{}", line.join(" "))?;
        }
        Ok(())
    }

    pub fn read<R: BufRead>(input: R, path: &str) -> Result<Self> {
        let mut lines = input.lines();
        let header = next_line(&mut lines, path, 1)?;
        let h: Vec<&str> = header.split_whitespace().collect();
        if h.len() != 8 || h[0] != "FIELD" {
            return Err(parse_err(path, 1, "expected `FIELD nx ny x0 y0 dx dy t`"));
        }
        let nx = parse_num::<usize>(h[1], path, 1)?;
        let ny = parse_num::<usize>(h[2], path, 1)?;
        let nums: Vec<f64> = h[3..]
            .iter()
            .map(|s| parse_num::<f64>(s, path, 1))
            .collect::<Result<_>>()?;
        if nx == 0 || ny == 0 || !(nums[2] > 0.0 && nums[3] > 0.0) {
            return Err(parse_err(path, 1, "grid size and spacing must be positive"));
        }
        let mut values = Vec::with_capacity(nx * ny);
        for j in 0..ny {
            let line = next_line(&mut lines, path, j + 2)?;
            let row: Vec<f64> = line
                .split_whitespace()
                .map(|s| parse_num::<f64>(s, path, j + 2))
                .collect::<Result<_>>()?;
            if row.len() != nx {
                return Err(parse_err(path, j + 2, &format!("expected {nx} values, got {}", row.len())));
            }
            values.extend(row);
        }
        Ok(Self {
            nx,
            ny,
            x0: nums[0],
            y0: nums[1],
            dx: nums[2],
            dy: nums[3],
            t: nums[4],
            values,
        })
    }
}

pub fn write_wind<W: Write>(wind: &WindField, mut out: W) -> Result<()> {
    let g = wind.grid();
    let (x0, y0) = g.origin();
    writeln!(out, "WIND {} {} {} {} {} {}", g.nx(), g.ny(), x0, y0, g.dx(), g.dy())?;
    for block in [wind.u_faces(), wind.v_faces()] {
        let line: Vec<String> = block.iter().map(|v| format!("{v:e}")).collect();
        writeln!(out, "{}", line.join(" "))?;
    }
    Ok(())
}

/// Reads a wind file for `grid`; values may be spread over any number of
/// lines.
pub fn read_wind<R: BufRead>(input: R, grid: Arc<Grid>, path: &str) -> Result<WindField> {
    let mut lines = input.lines();
    let header = next_line(&mut lines, path, 1)?;
    let h: Vec<&str> = header.split_whitespace().collect();
    if h.len() != 7 || h[0] != "WIND" {
        return Err(parse_err(path, 1, "expected `WIND nx ny x0 y0 dx dy`"));
    }
    let nx = parse_num::<usize>(h[1], path, 1)?;
    let ny = parse_num::<usize>(h[2], path, 1)?;
    let n: Vec<f64> = h[3..]
        .iter()
        .map(|s| parse_num::<f64>(s, path, 1))
        .collect::<Result<_>>()?;
    check_header(&grid, nx, ny, n[0], n[1], n[2], n[3], path)?;
    let mut values = Vec::with_capacity((nx + 1) * ny + nx * (ny + 1));
    for (k, line) in lines.enumerate() {
        let line = line?;
        for s in line.split_whitespace() {
            values.push(parse_num::<f64>(s, path, k + 2)?);
        }
    }
    let nu = (nx + 1) * ny;
    let nv = nx * (ny + 1);
    if values.len() != nu + nv {
        return Err(parse_err(
            path,
            1,
            &format!("expected {} face values, got {}", nu + nv, values.len()),
        ));
    }
    let v_face = values.split_off(nu);
    WindField::new(grid, values, v_face)
}

/// Binary PPM (P6) with `scale x scale` pixels per cell, north up.
///
/// Fluid cells use a grayscale ramp from the minimum (black) to the maximum
/// (white); solid cells are drawn in a fixed blue.
pub fn render_ppm<W: Write>(field: &FieldFile, scale: usize, mut out: W) -> Result<()> {
    if scale == 0 {
        return Err(Error::InvalidArgument("render scale must be at least 1".into()));
    }
    let (lo, hi) = field
        .values
        .iter()
        .filter(|v| !v.is_nan())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let span = hi - lo;
    let (w, h) = (field.nx * scale, field.ny * scale);
    write!(out, "P6\n{w} {h}\n255\n")?;
    let mut row = Vec::with_capacity(3 * w);
    for pj in 0..h {
        let j = field.ny - 1 - pj / scale;
        row.clear();
        for pi in 0..w {
            let v = field.values[j * field.nx + pi / scale];
            let px = if v.is_nan() {
                [40, 70, 160]
            } else {
                let g = if span > 0.0 { ((v - lo) / span * 255.0).round() as u8 } else { 0 };
                [g, g, g]
            };
            row.extend_from_slice(&px);
        }
        out.write_all(&row)?;
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn check_header(grid: &Grid, nx: usize, ny: usize, x0: f64, y0: f64, dx: f64, dy: f64, path: &str) -> Result<()> {
    let (gx0, gy0) = grid.origin();
    let close = |a: f64, b: f64| (a - b).abs() <= 1e-9 * (1.0 + a.abs().max(b.abs()));
    if nx != grid.nx()
        || ny != grid.ny()
        || !close(x0, gx0)
        || !close(y0, gy0)
        || !close(dx, grid.dx())
        || !close(dy, grid.dy())
    {
        return Err(parse_err(
            path,
            1,
            &format!(
                "header {nx}x{ny} at ({x0}, {y0}) spacing ({dx}, {dy}) does not match the grid {}x{} at ({gx0}, {gy0}) spacing ({}, {})",
                grid.nx(),
                grid.ny(),
                grid.dx(),
                grid.dy()
            ),
        ));
    }
    Ok(())
}

fn next_line<B: BufRead>(lines: &mut std::io::Lines<B>, path: &str, line: usize) -> Result<String> {
    match lines.next() {
        Some(l) => Ok(l?),
        None => Err(parse_err(path, line, "unexpected end of file")),
    }
}

fn parse_num<T: std::str::FromStr>(s: &str, path: &str, line: usize) -> Result<T> {
    s.parse::<T>()
        .map_err(|_| parse_err(path, line, &format!("cannot parse `{s}` as a number")))
}

fn parse_err(path: &str, line: usize, msg: &str) -> Error {
    Error::Parse {
        path: path.into(),
        line,
        msg: msg.into(),
    }
}
