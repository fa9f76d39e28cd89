#![allow(dead_code)]

use std::sync::Arc;

use oedsteer::domain::{build_grid, potential_flow_wind, Grid, GridSpec, InflowSide, RegionRect};
use oedsteer::transport::{Transport, TransportConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Unit-spaced `n x n` grid with two rectangular buildings.
pub fn obstacle_grid(n: usize) -> Arc<Grid> {
    let s = n as f64;
    Arc::new(
        build_grid(
            GridSpec {
                nx: n,
                ny: n,
                x0: 0.0,
                y0: 0.0,
                width: s,
                height: s,
            },
            &[
                RegionRect::new(0.25 * s, 0.45 * s, 0.4 * s, 0.6 * s).unwrap(),
                RegionRect::new(0.6 * s, 0.8 * s, 0.35 * s, 0.5 * s).unwrap(),
            ],
        )
        .unwrap(),
    )
}

pub fn south_wind_transport(grid: Arc<Grid>, speed: f64, kappa: f64, dt: f64, t: f64) -> Arc<Transport> {
    let wind = potential_flow_wind(grid, speed, InflowSide::South).unwrap();
    Arc::new(Transport::new(TransportConfig::new(kappa, dt, t, Arc::new(wind)).unwrap()).unwrap())
}

pub fn gaussian_vec(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

use nalgebra::DMatrix;
use oedsteer::inversion::{InverseProblem, WeightLayout};
use oedsteer::numcore::LinearMap;
use oedsteer::prior::BiLaplacianPrior;
use oedsteer::transport::{CandidateMode, CandidateSet, ForwardMap};

/// Small inverse problem: `n x n` obstacle grid, south wind, sensors on a
/// lattice with the given stride, readings every 0.5 s from 0.5 s to `t`.
pub struct Small {
    pub grid: Arc<Grid>,
    pub transport: Arc<Transport>,
    pub cs: CandidateSet,
    pub forward: Arc<ForwardMap>,
    pub prior: Arc<BiLaplacianPrior>,
    pub problem: InverseProblem,
}

pub fn small_problem(n: usize, stride: usize, t: f64, mode: CandidateMode, sigma: f64) -> Small {
    let grid = obstacle_grid(n);
    let transport = south_wind_transport(grid.clone(), 2.0, 0.5, 0.1, t);
    let mut pos = Vec::new();
    for j in (1..n).step_by(stride) {
        for i in (1..n).step_by(stride) {
            if grid.dof(i, j).is_some() {
                pos.push(grid.cell_center(i, j));
            }
        }
    }
    let cs = CandidateSet::from_schedule(&transport, &pos, 0.5, t, 0.5, mode).unwrap();
    let forward = Arc::new(ForwardMap::from_candidates(transport.clone(), &cs).unwrap());
    let prior = Arc::new(BiLaplacianPrior::new(grid.clone(), 8.0, 800.0, None).unwrap());
    let problem = InverseProblem::new(
        forward.clone(),
        prior.clone(),
        sigma,
        WeightLayout::from_candidates(&cs),
    )
    .unwrap();
    Small {
        grid,
        transport,
        cs,
        forward,
        prior,
        problem,
    }
}

pub fn dense_of(map: &dyn LinearMap) -> DMatrix<f64> {
    map.apply_block(&DMatrix::identity(map.ncols(), map.ncols()))
}

/// Dense `H_s = F^T W~ F + A M^{-1} A` for per-measurement noise weights.
pub fn dense_hessian_sym(s: &Small, noise_w: &[f64]) -> DMatrix<f64> {
    let f = dense_of(s.forward.as_ref());
    let a = s.prior.operator().to_dense();
    let w = DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(noise_w));
    f.transpose() * w * &f + &a * &a / s.prior.area()
}

pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    num / norm(b).max(1e-300)
}
