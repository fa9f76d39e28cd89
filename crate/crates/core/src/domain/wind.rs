use std::sync::Arc;

use super::grid::Grid;
use crate::error::{Error, Result};
use crate::numcore::{BandedLu, SparseOperator};

/// Side of the outer boundary through which the wind enters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InflowSide {
    South,
    North,
    East,
    West,
}

impl std::str::FromStr for InflowSide {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "south" => Ok(Self::South),
            "north" => Ok(Self::North),
            "east" => Ok(Self::East),
            "west" => Ok(Self::West),
            other => Err(Error::InvalidArgument(format!("unknown inflow side '{other}'"))),
        }
    }
}

/// Face-normal velocities on a staggered layout.
///
/// `u_face` has `(nx + 1) * ny` entries, index `j * (nx + 1) + i` is the face
/// on the west side of cell `(i, j)`. `v_face` has `nx * (ny + 1)` entries,
/// index `j * nx + i` is the face on the south side of cell `(i, j)`.
/// Positive values point in +x / +y.
#[derive(Debug, Clone, PartialEq)]
pub struct WindField {
    grid: Arc<Grid>,
    u_face: Vec<f64>,
    v_face: Vec<f64>,
}

impl WindField {
    /// Validates face counts, zero flux on faces touching solid cells and the
    /// discrete divergence bound.
    pub fn new(grid: Arc<Grid>, u_face: Vec<f64>, v_face: Vec<f64>) -> Result<Self> {
        let (nx, ny) = (grid.nx(), grid.ny());
        if u_face.len() != (nx + 1) * ny {
            return Err(Error::DimensionMismatch {
                context: "wind u faces",
                expected: (nx + 1) * ny,
                got: u_face.len(),
            });
        }
        if v_face.len() != nx * (ny + 1) {
            return Err(Error::DimensionMismatch {
                context: "wind v faces",
                expected: nx * (ny + 1),
                got: v_face.len(),
            });
        }
        if u_face.iter().chain(&v_face).any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("wind has non-finite face values".into()));
        }
        let wind = Self {
            grid,
            u_face,
            v_face,
        };
        let vmax = wind.max_speed();
        for j in 0..ny {
            for i in 0..=nx {
                let west_solid = i > 0 && wind.grid.is_solid(i - 1, j);
                let east_solid = i < nx && wind.grid.is_solid(i, j);
                if (west_solid || east_solid) && wind.u(i, j).abs() > 1e-12 * vmax {
                    return Err(Error::Contract(format!(
                        "nonzero wind {} on u face ({i}, {j}) next to an obstacle",
                        wind.u(i, j)
                    )));
                }
            }
        }
        for j in 0..=ny {
            for i in 0..nx {
                let south_solid = j > 0 && wind.grid.is_solid(i, j - 1);
                let north_solid = j < ny && wind.grid.is_solid(i, j);
                if (south_solid || north_solid) && wind.v(i, j).abs() > 1e-12 * vmax {
                    return Err(Error::Contract(format!(
                        "nonzero wind {} on v face ({i}, {j}) next to an obstacle",
                        wind.v(i, j)
                    )));
                }
            }
        }
        let div = wind.max_divergence();
        let bound = 1e-8 * vmax / wind.grid.dx().min(wind.grid.dy());
        if div > bound {
            return Err(Error::Contract(format!(
                "wind divergence {div:.3e} exceeds {bound:.3e}"
            )));
        }
        Ok(wind)
    }

    /// Constant wind; only divergence free on grids without obstacles.
    pub fn uniform(grid: Arc<Grid>, u: f64, v: f64) -> Result<Self> {
        let (nx, ny) = (grid.nx(), grid.ny());
        Self::new(grid, vec![u; (nx + 1) * ny], vec![v; nx * (ny + 1)])
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn u_faces(&self) -> &[f64] {
        &self.u_face
    }

    pub fn v_faces(&self) -> &[f64] {
        &self.v_face
    }

    /// Normal velocity on the west face of column `i` (0..=nx) in row `j`.
    pub fn u(&self, i: usize, j: usize) -> f64 {
        self.u_face[j * (self.grid.nx() + 1) + i]
    }

    /// Normal velocity on the south face of row `j` (0..=ny) in column `i`.
    pub fn v(&self, i: usize, j: usize) -> f64 {
        self.v_face[j * self.grid.nx() + i]
    }

    pub fn max_speed(&self) -> f64 {
        self.u_face
            .iter()
            .chain(&self.v_face)
            .fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    /// Net outflow per unit area of fluid cell `dof`.
    pub fn divergence(&self, dof: usize) -> f64 {
        let (i, j) = self.grid.cell_of_dof(dof);
        (self.u(i + 1, j) - self.u(i, j)) / self.grid.dx()
            + (self.v(i, j + 1) - self.v(i, j)) / self.grid.dy()
    }

    pub fn max_divergence(&self) -> f64 {
        (0..self.grid.n_dof())
            .map(|d| self.divergence(d).abs())
            .fold(0.0, f64::max)
    }

    /// Face-averaged velocity at the centre of fluid cell `dof`.
    pub fn cell_velocity(&self, dof: usize) -> (f64, f64) {
        let (i, j) = self.grid.cell_of_dof(dof);
        (
            0.5 * (self.u(i, j) + self.u(i + 1, j)),
            0.5 * (self.v(i, j) + self.v(i, j + 1)),
        )
    }

    /// Total volume flux entering and leaving through the outer boundary.
    pub fn boundary_fluxes(&self) -> (f64, f64) {
        let g = &self.grid;
        let (nx, ny) = (g.nx(), g.ny());
        let (mut inflow, mut outflow) = (0.0, 0.0);
        let mut add = |outward: f64, len: f64| {
            if outward > 0.0 {
                outflow += outward * len;
            } else {
                inflow -= outward * len;
            }
        };
        for j in 0..ny {
            add(-self.u(0, j), g.dy());
            add(self.u(nx, j), g.dy());
        }
        for i in 0..nx {
            add(-self.v(i, 0), g.dx());
            add(self.v(i, ny), g.dx());
        }
        (inflow, outflow)
    }
}

/// Potential flow with uniform normal influx `inflow_speed` on the fluid faces
/// of `side`, uniform outflux on the opposite side and no flux elsewhere.
///
/// The potential solves a graph Laplacian with Neumann data, grounded at the
/// first fluid cell; face velocities are potential differences over the cell
/// spacing.
pub fn potential_flow_wind(
    grid: Arc<Grid>,
    inflow_speed: f64,
    side: InflowSide,
) -> Result<WindField> {
    if !(inflow_speed > 0.0 && inflow_speed.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "inflow speed must be positive, got {inflow_speed}"
        )));
    }
    let components = grid.fluid_components().len();
    if components != 1 {
        return Err(Error::DegenerateDomain(format!(
            "potential flow needs one connected fluid region, found {components}"
        )));
    }
    let (nx, ny) = (grid.nx(), grid.ny());
    let (dx, dy) = (grid.dx(), grid.dy());
    let n = grid.n_dof();

    // Boundary fluid cells on the inflow and outflow sides, with face length.
    let side_cells = |s: InflowSide| -> Vec<usize> {
        match s {
            InflowSide::South => (0..nx).filter_map(|i| grid.dof(i, 0)).collect(),
            InflowSide::North => (0..nx).filter_map(|i| grid.dof(i, ny - 1)).collect(),
            InflowSide::West => (0..ny).filter_map(|j| grid.dof(0, j)).collect(),
            InflowSide::East => (0..ny).filter_map(|j| grid.dof(nx - 1, j)).collect(),
        }
    };
    let opposite = match side {
        InflowSide::South => InflowSide::North,
        InflowSide::North => InflowSide::South,
        InflowSide::West => InflowSide::East,
        InflowSide::East => InflowSide::West,
    };
    let face_len = match side {
        InflowSide::South | InflowSide::North => dx,
        InflowSide::West | InflowSide::East => dy,
    };
    let in_cells = side_cells(side);
    let out_cells = side_cells(opposite);
    if in_cells.is_empty() || out_cells.is_empty() {
        return Err(Error::DegenerateDomain(
            "inflow or outflow side is fully blocked".into(),
        ));
    }
    let total = inflow_speed * face_len * in_cells.len() as f64;
    let out_speed = total / (face_len * out_cells.len() as f64);

    // K phi = q, q = outward boundary flux per cell.
    let mut q = vec![0.0; n];
    for &c in &in_cells {
        q[c] -= inflow_speed * face_len;
    }
    for &c in &out_cells {
        q[c] += out_speed * face_len;
    }
    let (wx, wy) = (dy / dx, dx / dy);
    let mut trips = Vec::with_capacity(5 * n + 1);
    for d in 0..n {
        let [w, e, s, nn] = grid.neighbours(d);
        for (nb, wgt) in [(w, wx), (e, wx), (s, wy), (nn, wy)] {
            if let Some(o) = nb {
                trips.push((d, d, wgt));
                trips.push((d, o, -wgt));
            }
        }
    }
    trips.push((0, 0, 1.0));
    let k = SparseOperator::from_triplets(n, n, trips)?;
    let lu = BandedLu::factor(&k)
        .map_err(|e| Error::DegenerateDomain(format!("singular potential system: {e}")))?;
    // Interior outflow of a cell is -(K phi), so zero divergence means K phi = q.
    let phi = lu.solve(&q)?;

    let mut u_face = vec![0.0; (nx + 1) * ny];
    let mut v_face = vec![0.0; nx * (ny + 1)];
    for j in 0..ny {
        for i in 1..nx {
            if let (Some(a), Some(b)) = (grid.dof(i - 1, j), grid.dof(i, j)) {
                u_face[j * (nx + 1) + i] = (phi[b] - phi[a]) / dx;
            }
        }
    }
    for j in 1..ny {
        for i in 0..nx {
            if let (Some(a), Some(b)) = (grid.dof(i, j - 1), grid.dof(i, j)) {
                v_face[j * nx + i] = (phi[b] - phi[a]) / dy;
            }
        }
    }
    let mut set_boundary = |cells: &[usize], s: InflowSide, outward: f64| {
        for &c in cells {
            let (i, j) = grid.cell_of_dof(c);
            match s {
                InflowSide::South => v_face[i] = -outward,
                InflowSide::North => v_face[ny * nx + i] = outward,
                InflowSide::West => u_face[j * (nx + 1)] = -outward,
                InflowSide::East => u_face[j * (nx + 1) + nx] = outward,
            }
        }
    };
    set_boundary(&in_cells, side, -inflow_speed);
    set_boundary(&out_cells, opposite, out_speed);
    WindField::new(grid, u_face, v_face)
}
