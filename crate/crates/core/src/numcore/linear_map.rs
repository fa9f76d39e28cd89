use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::parallel::map_columns;
use super::vec::{axpy, norm};

/// A matrix-free linear map `R^ncols -> R^nrows`.
///
/// `apply_transpose` is the Euclidean transpose; maps without one return
/// `None`. Metric-weighted adjoints are built on top of it by callers.
pub trait LinearMap: Sync {
    fn nrows(&self) -> usize;
    fn ncols(&self) -> usize;

    fn apply(&self, x: &[f64]) -> Vec<f64>;

    fn apply_transpose(&self, _y: &[f64]) -> Option<Vec<f64>> {
        None
    }

    fn has_transpose(&self) -> bool {
        false
    }

    /// Apply to every column of `x`.
    fn apply_block(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        map_columns(x, self.nrows(), |c| self.apply(c))
    }

    /// Apply the transpose to every column of `y`.
    fn apply_transpose_block(&self, y: &DMatrix<f64>) -> Option<DMatrix<f64>> {
        if !self.has_transpose() {
            return None;
        }
        Some(map_columns(y, self.ncols(), |c| {
            self.apply_transpose(c).expect("transpose advertised")
        }))
    }
}

type VecFn = Box<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>;

/// Linear map backed by closures.
pub struct FnMap {
    nrows: usize,
    ncols: usize,
    forward: VecFn,
    transpose: Option<VecFn>,
}

impl FnMap {
    pub fn new(
        nrows: usize,
        ncols: usize,
        forward: impl Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static,
    ) -> Self {
        Self {
            nrows,
            ncols,
            forward: Box::new(forward),
            transpose: None,
        }
    }

    pub fn with_transpose(
        mut self,
        transpose: impl Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static,
    ) -> Self {
        self.transpose = Some(Box::new(transpose));
        self
    }

    /// Symmetric map: the transpose is the map itself.
    pub fn symmetric(
        n: usize,
        f: impl Fn(&[f64]) -> Vec<f64> + Send + Sync + Clone + 'static,
    ) -> Self {
        let g = f.clone();
        Self::new(n, n, f).with_transpose(g)
    }
}

impl LinearMap for FnMap {
    fn nrows(&self) -> usize {
        self.nrows
    }
    fn ncols(&self) -> usize {
        self.ncols
    }
    fn apply(&self, x: &[f64]) -> Vec<f64> {
        (self.forward)(x)
    }
    fn apply_transpose(&self, y: &[f64]) -> Option<Vec<f64>> {
        self.transpose.as_ref().map(|t| t(y))
    }
    fn has_transpose(&self) -> bool {
        self.transpose.is_some()
    }
}

/// Dense matrix as a linear map.
#[derive(Debug, Clone)]
pub struct DenseMap(pub DMatrix<f64>);

impl LinearMap for DenseMap {
    fn nrows(&self) -> usize {
        self.0.nrows()
    }
    fn ncols(&self) -> usize {
        self.0.ncols()
    }
    fn apply(&self, x: &[f64]) -> Vec<f64> {
        let x = nalgebra::DVectorView::from_slice(x, x.len());
        (&self.0 * x).as_slice().to_vec()
    }
    fn apply_transpose(&self, y: &[f64]) -> Option<Vec<f64>> {
        let y = nalgebra::DVectorView::from_slice(y, y.len());
        Some(self.0.tr_mul(&y).as_slice().to_vec())
    }
    fn has_transpose(&self) -> bool {
        true
    }
    fn apply_block(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        &self.0 * x
    }
    fn apply_transpose_block(&self, y: &DMatrix<f64>) -> Option<DMatrix<f64>> {
        Some(self.0.tr_mul(y))
    }
}

/// Largest relative superposition defect `|L(ax+by) - aLx - bLy| / scale`
/// over `n_probes` random probes.
pub fn probe_linearity(map: &dyn LinearMap, n_probes: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0_f64;
    for _ in 0..n_probes {
        let x: Vec<f64> = (0..map.ncols()).map(|_| StandardNormal.sample(&mut rng)).collect();
        let y: Vec<f64> = (0..map.ncols()).map(|_| StandardNormal.sample(&mut rng)).collect();
        let a: f64 = StandardNormal.sample(&mut rng);
        let b: f64 = StandardNormal.sample(&mut rng);
        let mut combo = x.iter().map(|v| a * v).collect::<Vec<_>>();
        axpy(b, &y, &mut combo);
        let lx = map.apply(&x);
        let ly = map.apply(&y);
        let mut defect = map.apply(&combo);
        axpy(-a, &lx, &mut defect);
        axpy(-b, &ly, &mut defect);
        let scale = a.abs() * norm(&lx) + b.abs() * norm(&ly);
        if scale > 0.0 {
            worst = worst.max(norm(&defect) / scale);
        }
    }
    worst
}
