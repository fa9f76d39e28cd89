//! Gaussian prior with covariance `A^{-1} M A^{-1} M`, where
//! `A = eta M + gamma K + beta B` is a reaction-diffusion operator with a
//! Robin boundary term (`K` the finite-volume Laplacian stiffness, `B` the
//! boundary face lengths on outer walls and obstacle walls).

use std::sync::{Arc, OnceLock};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::domain::{Grid, ScalarField};
use crate::error::{check_len, Error, Result};
use crate::numcore::{BandedLu, SparseOperator};

pub const DEFAULT_ETA: f64 = 8.0;
pub const DEFAULT_GAMMA: f64 = 800.0;

/// Robin coefficient used when none is configured.
pub fn default_beta(eta: f64, gamma: f64) -> f64 {
    (gamma * eta).sqrt() / 1.42
}

#[derive(Debug)]
pub struct BiLaplacianPrior {
    grid: Arc<Grid>,
    eta: f64,
    gamma: f64,
    beta: f64,
    area: f64,
    a: SparseOperator,
    lu: BandedLu,
    mean: Vec<f64>,
    variance: OnceLock<Vec<f64>>,
}

impl BiLaplacianPrior {
    /// Zero-mean prior; `beta = None` selects [`default_beta`].
    pub fn new(grid: Arc<Grid>, eta: f64, gamma: f64, beta: Option<f64>) -> Result<Self> {
        let beta = beta.unwrap_or_else(|| default_beta(eta, gamma));
        if !(eta > 0.0) || !(gamma >= 0.0) || !(beta >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "prior needs eta > 0, gamma >= 0, beta >= 0 (got {eta}, {gamma}, {beta})"
            )));
        }
        let a = assemble(&grid, eta, gamma, beta)?;
        let lu = BandedLu::factor(&a)?;
        let n = grid.n_dof();
        Ok(Self {
            area: grid.cell_area(),
            grid,
            eta,
            gamma,
            beta,
            a,
            lu,
            mean: vec![0.0; n],
            variance: OnceLock::new(),
        })
    }

    pub fn with_mean(mut self, mean: &ScalarField) -> Result<Self> {
        check_len("prior mean", self.n_dof(), mean.values().len())?;
        self.mean = mean.values().to_vec();
        Ok(self)
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn n_dof(&self) -> usize {
        self.a.diag().len()
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    /// Uniform cell area, the diagonal of the lumped mass matrix.
    pub fn area(&self) -> f64 {
        self.area
    }

    pub fn operator(&self) -> &SparseOperator {
        &self.a
    }

    pub fn apply_a(&self, x: &[f64]) -> Vec<f64> {
        self.a.mul_vec(x).expect("prior operator dimension")
    }

    pub fn solve_a(&self, x: &[f64]) -> Vec<f64> {
        let mut y = x.to_vec();
        self.lu.solve_in_place(&mut y);
        y
    }

    /// `A^{-1}` applied to `k` vectors stored row-major (`n_dof x k`).
    pub fn solve_a_many(&self, x: &mut [f64], k: usize) {
        self.lu.solve_many_in_place(x, k);
    }

    /// `Gamma_pr x = A^{-1} M A^{-1} M x`.
    pub fn apply_cov(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_len("prior covariance input", self.n_dof(), x.len())?;
        let mut y: Vec<f64> = x.iter().map(|v| v * self.area).collect();
        self.lu.solve_in_place(&mut y);
        y.iter_mut().for_each(|v| *v *= self.area);
        self.lu.solve_in_place(&mut y);
        Ok(y)
    }

    /// `Gamma_pr^{-1} x = M^{-1} A M^{-1} A x`.
    pub fn apply_precision(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_len("prior precision input", self.n_dof(), x.len())?;
        let mut y = self.a.mul_vec(x)?;
        y.iter_mut().for_each(|v| *v /= self.area);
        let mut z = self.a.mul_vec(&y)?;
        z.iter_mut().for_each(|v| *v /= self.area);
        Ok(z)
    }

    /// `R x = M Gamma_pr^{-1} x = A M^{-1} A x`, the symmetric prior precision.
    pub fn apply_r(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut y = self.apply_precision(x)?;
        y.iter_mut().for_each(|v| *v *= self.area);
        Ok(y)
    }

    /// `R^{-1} x = A^{-1} M A^{-1} x`, the prior covariance of coefficients.
    pub fn apply_r_inv(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_len("prior R inverse input", self.n_dof(), x.len())?;
        let mut y = x.to_vec();
        self.lu.solve_in_place(&mut y);
        y.iter_mut().for_each(|v| *v *= self.area);
        self.lu.solve_in_place(&mut y);
        Ok(y)
    }

    /// `mean + A^{-1} M^{1/2} xi` with seeded standard normal `xi`.
    pub fn sample(&self, seed: u64) -> Result<ScalarField> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sqrt_area = self.area.sqrt();
        let mut y: Vec<f64> = (0..self.n_dof())
            .map(|_| {
                let xi: f64 = StandardNormal.sample(&mut rng);
                sqrt_area * xi
            })
            .collect();
        self.lu.solve_in_place(&mut y);
        for (v, m) in y.iter_mut().zip(&self.mean) {
            *v += m;
        }
        ScalarField::new(self.grid.clone(), y)
    }

    /// Exact pointwise prior variance `diag(A^{-1} M A^{-1})`, computed once
    /// from the columns of `A^{-1}` and cached.
    pub fn variance(&self) -> &[f64] {
        self.variance.get_or_init(|| {
            let n = self.n_dof();
            let mut out = vec![0.0; n];
            let chunk = 64;
            let mut start = 0;
            while start < n {
                let k = chunk.min(n - start);
                let mut x = vec![0.0; n * k];
                for c in 0..k {
                    x[(start + c) * k + c] = 1.0;
                }
                self.lu.solve_many_in_place(&mut x, k);
                for c in 0..k {
                    out[start + c] = self.area * (0..n).map(|i| x[i * k + c].powi(2)).sum::<f64>();
                }
                start += k;
            }
            out
        })
    }
}

fn assemble(grid: &Grid, eta: f64, gamma: f64, beta: f64) -> Result<SparseOperator> {
    let n = grid.n_dof();
    let (dx, dy) = (grid.dx(), grid.dy());
    let area = grid.cell_area();
    let mut trips = Vec::with_capacity(5 * n);
    for d in 0..n {
        trips.push((d, d, eta * area));
        let [w, e, s, nn] = grid.neighbours(d);
        for (nb, len, h) in [(w, dy, dx), (e, dy, dx), (s, dx, dy), (nn, dx, dy)] {
            match nb {
                Some(o) => {
                    trips.push((d, d, gamma * len / h));
                    trips.push((d, o, -gamma * len / h));
                }
                None => trips.push((d, d, beta * len)),
            }
        }
    }
    SparseOperator::from_triplets(n, n, trips)?.into_symmetric()
}
