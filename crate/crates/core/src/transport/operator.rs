use std::sync::Arc;

use crate::domain::{Grid, ScalarField, WindField};
use crate::error::{check_len, Error, Result};
use crate::numcore::{BandedLu, LinearMap, SparseOperator};

/// Physical and temporal parameters of a transport run.
#[derive(Debug, Clone)]
pub struct TransportConfig {
    pub kappa: f64,
    pub dt: f64,
    pub t_final: f64,
    pub wind: Arc<WindField>,
}

impl TransportConfig {
    pub fn new(kappa: f64, dt: f64, t_final: f64, wind: Arc<WindField>) -> Result<Self> {
        let cfg = Self {
            kappa,
            dt,
            t_final,
            wind,
        };
        cfg.n_steps()?;
        Ok(cfg)
    }

    /// Number of time steps `T / dt`, which must be an integer up to round-off.
    pub fn n_steps(&self) -> Result<usize> {
        if !(self.kappa > 0.0 && self.kappa.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "kappa must be positive, got {}",
                self.kappa
            )));
        }
        if !(self.dt > 0.0 && self.dt <= self.t_final && self.t_final.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "need 0 < dt <= T, got dt = {}, T = {}",
                self.dt, self.t_final
            )));
        }
        let ratio = self.t_final / self.dt;
        let n = ratio.round();
        if (ratio - n).abs() > 1e-9 * n {
            return Err(Error::InvalidArgument(format!(
                "T = {} is not a multiple of dt = {}",
                self.t_final, self.dt
            )));
        }
        Ok(n as usize)
    }
}

/// Assembled implicit-Euler step `S = I + dt L` with its banded factors.
///
/// `L` is the finite-volume advection-diffusion operator: first-order upwind
/// fluxes on faces, homogeneous Dirichlet data on outer faces with inflow,
/// purely advective outflow and no flux through walls and obstacles.
#[derive(Debug, Clone)]
pub struct Transport {
    config: TransportConfig,
    n_steps: usize,
    generator: SparseOperator,
    step: SparseOperator,
    lu: BandedLu,
}

impl Transport {
    pub fn new(config: TransportConfig) -> Result<Self> {
        let n_steps = config.n_steps()?;
        let generator = assemble_generator(&config.wind, config.kappa)?;
        let n = generator.nrows();
        let dt = config.dt;
        let mut trips: Vec<(usize, usize, f64)> = (0..n).map(|i| (i, i, 1.0)).collect();
        for i in 0..n {
            trips.extend(generator.row(i).map(|(j, v)| (i, j, dt * v)));
        }
        let step = SparseOperator::from_triplets(n, n, trips)?;
        let lu = BandedLu::factor(&step)?;
        Ok(Self {
            config,
            n_steps,
            generator,
            step,
            lu,
        })
    }

    pub fn config(&self) -> &TransportConfig {
        &self.config
    }

    pub fn grid(&self) -> &Arc<Grid> {
        self.config.wind.grid()
    }

    pub fn n_dof(&self) -> usize {
        self.generator.nrows()
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn dt(&self) -> f64 {
        self.config.dt
    }

    pub fn time_of(&self, step: usize) -> f64 {
        step as f64 * self.config.dt
    }

    /// Nearest time-grid index for `t`, if `t` lies in `[0, T]`.
    pub fn step_of(&self, t: f64) -> Option<usize> {
        let k = (t / self.config.dt).round();
        if k < 0.0 || k as usize > self.n_steps || !t.is_finite() {
            return None;
        }
        Some(k as usize)
    }

    /// The spatial operator `L`.
    pub fn generator(&self) -> &SparseOperator {
        &self.generator
    }

    /// The step matrix `I + dt L`.
    pub fn step_matrix(&self) -> &SparseOperator {
        &self.step
    }

    /// `u <- (I + dt L)^{-1} u`.
    pub fn step_forward_in_place(&self, u: &mut [f64]) {
        self.lu.solve_in_place(u);
    }

    /// `p <- (I + dt L)^{-T} p`.
    pub fn step_adjoint_in_place(&self, p: &mut [f64]) {
        self.lu.solve_transpose_in_place(p);
    }

    /// Forward step for `k` states stored row-major (`n_dof x k`).
    pub fn step_forward_many(&self, u: &mut [f64], k: usize) {
        self.lu.solve_many_in_place(u, k);
    }

    /// Adjoint step for `k` states stored row-major (`n_dof x k`).
    pub fn step_adjoint_many(&self, p: &mut [f64], k: usize) {
        self.lu.solve_transpose_many_in_place(p, k);
    }

    pub fn step_forward(&self, u: &ScalarField) -> Result<ScalarField> {
        check_len("transport state", self.n_dof(), u.values().len())?;
        if !Arc::ptr_eq(u.grid(), self.grid()) && **u.grid() != **self.grid() {
            return Err(Error::Contract("field lives on a different grid".into()));
        }
        let mut next = u.values().to_vec();
        self.step_forward_in_place(&mut next);
        ScalarField::new(self.grid().clone(), next)
    }

    /// Total mass `sum_i area * u_i`.
    pub fn mass(&self, u: &[f64]) -> f64 {
        u.iter().sum::<f64>() * self.grid().cell_area()
    }
}

fn assemble_generator(wind: &WindField, kappa: f64) -> Result<SparseOperator> {
    let g = wind.grid();
    let (nx, ny) = (g.nx(), g.ny());
    let (dx, dy) = (g.dx(), g.dy());
    let area = g.cell_area();
    let n = g.n_dof();
    let mut trips = Vec::with_capacity(5 * n);

    // Face between `a` (west/south) and `b` (east/north) with normal velocity
    // `vel` pointing from a to b.
    let mut interior = |a: usize, b: usize, vel: f64, len: f64, h: f64| {
        let flux = vel * len;
        let diff = kappa * len / h;
        // outflow of a: flux * (upwind value) + diff * (u_a - u_b)
        let (from_a, from_b) = if flux >= 0.0 { (flux, 0.0) } else { (0.0, flux) };
        trips.push((a, a, (from_a + diff) / area));
        trips.push((a, b, (from_b - diff) / area));
        trips.push((b, b, (-from_b + diff) / area));
        trips.push((b, a, (-from_a - diff) / area));
    };
    for j in 0..ny {
        for i in 1..nx {
            if let (Some(a), Some(b)) = (g.dof(i - 1, j), g.dof(i, j)) {
                interior(a, b, wind.u(i, j), dy, dx);
            }
        }
    }
    for j in 1..ny {
        for i in 0..nx {
            if let (Some(a), Some(b)) = (g.dof(i, j - 1), g.dof(i, j)) {
                interior(a, b, wind.v(i, j), dx, dy);
            }
        }
    }

    // Outer faces: `outward` normal velocity.
    let mut boundary = |a: usize, outward: f64, len: f64, h: f64| {
        if outward > 0.0 {
            trips.push((a, a, outward * len / area));
        } else if outward < 0.0 {
            trips.push((a, a, 2.0 * kappa * len / h / area));
        }
    };
    for j in 0..ny {
        if let Some(a) = g.dof(0, j) {
            boundary(a, -wind.u(0, j), dy, dx);
        }
        if let Some(a) = g.dof(nx - 1, j) {
            boundary(a, wind.u(nx, j), dy, dx);
        }
    }
    for i in 0..nx {
        if let Some(a) = g.dof(i, 0) {
            boundary(a, -wind.v(i, 0), dx, dy);
        }
        if let Some(a) = g.dof(i, ny - 1) {
            boundary(a, wind.v(i, ny), dx, dy);
        }
    }
    SparseOperator::from_triplets(n, n, trips)
}
