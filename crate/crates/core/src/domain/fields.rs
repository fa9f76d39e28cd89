use std::sync::Arc;

use super::grid::Grid;
use crate::error::{Error, Result};

/// Axis-aligned rectangle `[xmin, xmax] x [ymin, ymax]` in metres.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegionRect {
    pub xmin: f64,
    pub xmax: f64,
    pub ymin: f64,
    pub ymax: f64,
}

impl RegionRect {
    pub fn new(xmin: f64, xmax: f64, ymin: f64, ymax: f64) -> Result<Self> {
        if !(xmin < xmax && ymin < ymax) {
            return Err(Error::InvalidArgument(format!(
                "empty rectangle [{xmin}, {xmax}] x [{ymin}, {ymax}]"
            )));
        }
        Ok(Self {
            xmin,
            xmax,
            ymin,
            ymax,
        })
    }

    /// Square of side `side` centred at `(cx, cy)`.
    pub fn square(cx: f64, cy: f64, side: f64) -> Result<Self> {
        Self::new(cx - side / 2.0, cx + side / 2.0, cy - side / 2.0, cy + side / 2.0)
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.xmin && x <= self.xmax && y >= self.ymin && y <= self.ymax
    }

    pub fn intersect(&self, other: &RegionRect) -> Option<RegionRect> {
        RegionRect::new(
            self.xmin.max(other.xmin),
            self.xmax.min(other.xmax),
            self.ymin.max(other.ymin),
            self.ymax.min(other.ymax),
        )
        .ok()
    }

    pub fn domain_of(grid: &Grid) -> RegionRect {
        let (x0, y0) = grid.origin();
        let (w, h) = grid.extent();
        RegionRect {
            xmin: x0,
            xmax: x0 + w,
            ymin: y0,
            ymax: y0 + h,
        }
    }
}

/// Quantity of interest: a region and a time window. `t_start == t_end == 0`
/// selects the initial-condition functional.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QoiSpec {
    pub region: RegionRect,
    pub t_start: f64,
    pub t_end: f64,
}

impl QoiSpec {
    pub fn initial(region: RegionRect) -> Self {
        Self {
            region,
            t_start: 0.0,
            t_end: 0.0,
        }
    }

    pub fn window(region: RegionRect, t_start: f64, t_end: f64, t_final: f64) -> Result<Self> {
        if !(0.0 <= t_start && t_start <= t_end && t_end <= t_final) {
            return Err(Error::InvalidArgument(format!(
                "QoI window [{t_start}, {t_end}] not inside [0, {t_final}]"
            )));
        }
        Ok(Self {
            region,
            t_start,
            t_end,
        })
    }

    pub fn is_initial(&self) -> bool {
        self.t_start == 0.0 && self.t_end == 0.0
    }
}

/// Cell-centred values on the fluid cells of a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    grid: Arc<Grid>,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn new(grid: Arc<Grid>, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.n_dof() {
            return Err(Error::DimensionMismatch {
                context: "scalar field",
                expected: grid.n_dof(),
                got: values.len(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("scalar field has non-finite values".into()));
        }
        Ok(Self { grid, values })
    }

    pub fn zeros(grid: Arc<Grid>) -> Self {
        let n = grid.n_dof();
        Self {
            grid,
            values: vec![0.0; n],
        }
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// Integral over the domain (lumped mass).
    pub fn integral(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.grid.cell_area()
    }

    /// Dof with the largest value; ties resolve to the lowest index.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (d, &v) in self.values.iter().enumerate() {
            if v > self.values[best] {
                best = d;
            }
        }
        best
    }

    /// `sqrt(sum_i area * v_i^2)`.
    pub fn l2_norm(&self) -> f64 {
        (self.values.iter().map(|v| v * v).sum::<f64>() * self.grid.cell_area()).sqrt()
    }
}

/// A radially symmetric initial-condition bump.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlobSpec {
    pub x: f64,
    pub y: f64,
    pub radius: f64,
}

/// `min(cap, eps^(|x - center|^2 / radius^2))` at every fluid cell centre.
///
/// The value equals `cap` near the centre, `eps` at distance `radius`, and
/// decays monotonically along rays.
pub fn gaussian_blob(
    grid: &Arc<Grid>,
    center: (f64, f64),
    radius: f64,
    cap: f64,
    eps: f64,
) -> Result<ScalarField> {
    if !(radius > 0.0) || !(eps > 0.0 && eps < 1.0) || !(cap > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "blob needs radius > 0, 0 < eps < 1, cap > 0 (got {radius}, {eps}, {cap})"
        )));
    }
    let values = (0..grid.n_dof())
        .map(|d| {
            let (x, y) = grid.dof_center(d);
            let r2 = ((x - center.0).powi(2) + (y - center.1).powi(2)) / (radius * radius);
            cap.min(eps.powf(r2))
        })
        .collect();
    ScalarField::new(grid.clone(), values)
}

/// Indicator of the fluid cells whose centres lie in `region`.
pub fn region_indicator(grid: &Arc<Grid>, region: &RegionRect) -> Result<ScalarField> {
    let values: Vec<f64> = (0..grid.n_dof())
        .map(|d| {
            let (x, y) = grid.dof_center(d);
            if region.contains(x, y) {
                1.0
            } else {
                0.0
            }
        })
        .collect();
    if values.iter().all(|&v| v == 0.0) {
        return Err(Error::DegenerateRegion(format!(
            "{region:?} contains no fluid cell centre"
        )));
    }
    ScalarField::new(grid.clone(), values)
}
