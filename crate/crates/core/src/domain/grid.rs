use super::fields::RegionRect;
use crate::error::{Error, Result};

/// Extent and resolution of the rectangular cell grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub nx: usize,
    pub ny: usize,
    pub x0: f64,
    pub y0: f64,
    pub width: f64,
    pub height: f64,
}

/// Structured cell grid with solid (obstacle) cells masked out.
///
/// Cells are numbered row-major from the `y0` edge: `cell = j * nx + i`.
/// Fluid cells are enumerated in the same order to give the degrees of
/// freedom.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    nx: usize,
    ny: usize,
    dx: f64,
    dy: f64,
    x0: f64,
    y0: f64,
    solid: Vec<bool>,
    dof_of_cell: Vec<Option<usize>>,
    cell_of_dof: Vec<usize>,
}

/// Build a grid whose cells are solid when their centre lies in any obstacle.
pub fn build_grid(spec: GridSpec, obstacles: &[RegionRect]) -> Result<Grid> {
    let GridSpec {
        nx,
        ny,
        x0,
        y0,
        width,
        height,
    } = spec;
    if nx < 4 || ny < 4 {
        return Err(Error::InvalidArgument(format!("grid needs at least 4x4 cells, got {nx}x{ny}")));
    }
    if !(width > 0.0 && height > 0.0) {
        return Err(Error::InvalidArgument("grid extent must be positive".into()));
    }
    for ob in obstacles {
        if ob.xmin < x0 || ob.xmax > x0 + width || ob.ymin < y0 || ob.ymax > y0 + height {
            return Err(Error::InvalidArgument(format!("obstacle {ob:?} outside the domain")));
        }
    }
    let dx = width / nx as f64;
    let dy = height / ny as f64;
    let mut solid = vec![false; nx * ny];
    for j in 0..ny {
        for i in 0..nx {
            let (cx, cy) = (x0 + (i as f64 + 0.5) * dx, y0 + (j as f64 + 0.5) * dy);
            solid[j * nx + i] = obstacles.iter().any(|o| o.contains(cx, cy));
        }
    }
    Grid::from_mask(nx, ny, dx, dy, x0, y0, solid)
}

impl Grid {
    pub fn from_mask(
        nx: usize,
        ny: usize,
        dx: f64,
        dy: f64,
        x0: f64,
        y0: f64,
        solid: Vec<bool>,
    ) -> Result<Self> {
        if solid.len() != nx * ny {
            return Err(Error::DimensionMismatch {
                context: "obstacle mask",
                expected: nx * ny,
                got: solid.len(),
            });
        }
        let mut dof_of_cell = vec![None; nx * ny];
        let mut cell_of_dof = Vec::new();
        for (c, &s) in solid.iter().enumerate() {
            if !s {
                dof_of_cell[c] = Some(cell_of_dof.len());
                cell_of_dof.push(c);
            }
        }
        if cell_of_dof.is_empty() {
            return Err(Error::DegenerateDomain("every cell is masked as solid".into()));
        }
        Ok(Self {
            nx,
            ny,
            dx,
            dy,
            x0,
            y0,
            solid,
            dof_of_cell,
            cell_of_dof,
        })
    }

    pub fn nx(&self) -> usize {
        self.nx
    }
    pub fn ny(&self) -> usize {
        self.ny
    }
    pub fn dx(&self) -> f64 {
        self.dx
    }
    pub fn dy(&self) -> f64 {
        self.dy
    }
    pub fn origin(&self) -> (f64, f64) {
        (self.x0, self.y0)
    }
    pub fn extent(&self) -> (f64, f64) {
        (self.nx as f64 * self.dx, self.ny as f64 * self.dy)
    }
    pub fn n_dof(&self) -> usize {
        self.cell_of_dof.len()
    }
    pub fn cell_area(&self) -> f64 {
        self.dx * self.dy
    }

    /// Lumped mass matrix diagonal (cell areas).
    pub fn mass(&self) -> Vec<f64> {
        vec![self.cell_area(); self.n_dof()]
    }

    pub fn is_solid(&self, i: usize, j: usize) -> bool {
        self.solid[j * self.nx + i]
    }

    pub fn solid_mask(&self) -> &[bool] {
        &self.solid
    }

    /// Degree of freedom of cell `(i, j)`, `None` for solid cells.
    pub fn dof(&self, i: usize, j: usize) -> Option<usize> {
        self.dof_of_cell[j * self.nx + i]
    }

    /// Signed-index variant returning `None` outside the grid.
    pub fn dof_checked(&self, i: isize, j: isize) -> Option<usize> {
        if i < 0 || j < 0 || i >= self.nx as isize || j >= self.ny as isize {
            return None;
        }
        self.dof(i as usize, j as usize)
    }

    pub fn cell_of_dof(&self, dof: usize) -> (usize, usize) {
        let c = self.cell_of_dof[dof];
        (c % self.nx, c / self.nx)
    }

    pub fn cell_center(&self, i: usize, j: usize) -> (f64, f64) {
        (
            self.x0 + (i as f64 + 0.5) * self.dx,
            self.y0 + (j as f64 + 0.5) * self.dy,
        )
    }

    pub fn dof_center(&self, dof: usize) -> (f64, f64) {
        let (i, j) = self.cell_of_dof(dof);
        self.cell_center(i, j)
    }

    /// Cell containing `(x, y)`, if inside the grid rectangle.
    pub fn locate(&self, x: f64, y: f64) -> Option<(usize, usize)> {
        let fi = ((x - self.x0) / self.dx).floor();
        let fj = ((y - self.y0) / self.dy).floor();
        if fi < 0.0 || fj < 0.0 || fi >= self.nx as f64 || fj >= self.ny as f64 {
            return None;
        }
        Some((fi as usize, fj as usize))
    }

    /// Fluid degree of freedom containing `(x, y)`.
    pub fn dof_at(&self, x: f64, y: f64) -> Option<usize> {
        self.locate(x, y).and_then(|(i, j)| self.dof(i, j))
    }

    /// Fluid neighbours of a dof in 4-connectivity: `(west, east, south, north)`.
    pub fn neighbours(&self, dof: usize) -> [Option<usize>; 4] {
        let (i, j) = self.cell_of_dof(dof);
        let (i, j) = (i as isize, j as isize);
        [
            self.dof_checked(i - 1, j),
            self.dof_checked(i + 1, j),
            self.dof_checked(i, j - 1),
            self.dof_checked(i, j + 1),
        ]
    }

    /// 4-connected fluid components, each listed as its dofs.
    pub fn fluid_components(&self) -> Vec<Vec<usize>> {
        let n = self.n_dof();
        let mut label = vec![usize::MAX; n];
        let mut comps = Vec::new();
        for start in 0..n {
            if label[start] != usize::MAX {
                continue;
            }
            let id = comps.len();
            let mut members = vec![start];
            label[start] = id;
            let mut k = 0;
            while k < members.len() {
                let d = members[k];
                for nb in self.neighbours(d).into_iter().flatten() {
                    if label[nb] == usize::MAX {
                        label[nb] = id;
                        members.push(nb);
                    }
                }
                k += 1;
            }
            comps.push(members);
        }
        comps
    }
}
