//! Randomized range finders (Halko, Martinsson & Tropp): truncated SVD of a
//! matrix-free map and symmetric eigenpairs of a pencil `(K, B)` with a
//! diagonal metric `B`.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::linear_map::LinearMap;
use super::sparse::SparseOperator;
use crate::error::{Error, Result};

/// Sketch parameters. Defaults: oversampling 10, one power iteration, fixed seed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RandomizedOptions {
    pub oversample: usize,
    pub power_iters: usize,
    pub seed: u64,
}

impl Default for RandomizedOptions {
    fn default() -> Self {
        Self {
            oversample: 10,
            power_iters: 1,
            seed: 0x5eed_0ed5,
        }
    }
}

/// Gaussian test matrix, filled column by column.
pub fn gaussian_matrix(nrows: usize, ncols: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut m = DMatrix::zeros(nrows, ncols);
    for v in m.as_mut_slice() {
        *v = StandardNormal.sample(&mut rng);
    }
    m
}

fn orthonormal_basis(y: &DMatrix<f64>) -> DMatrix<f64> {
    y.clone().qr().q()
}

/// `op ~= u * diag(s) * v^T` with `s` descending.
#[derive(Debug, Clone)]
pub struct TruncatedSvd {
    pub u: DMatrix<f64>,
    pub s: Vec<f64>,
    pub v: DMatrix<f64>,
    /// Singular values of the full sketch (length `rank + oversample`, clipped),
    /// used to report the first discarded value.
    pub sketch_values: Vec<f64>,
}

impl TruncatedSvd {
    /// Ratio of the first discarded sketch value to the leading one.
    pub fn tail_ratio(&self) -> f64 {
        let r = self.s.len();
        match (self.sketch_values.first(), self.sketch_values.get(r)) {
            (Some(&s1), Some(&sr)) if s1 > 0.0 => sr / s1,
            _ => 0.0,
        }
    }
}

pub fn randomized_svd(
    op: &dyn LinearMap,
    rank: usize,
    opts: RandomizedOptions,
) -> Result<TruncatedSvd> {
    if !op.has_transpose() {
        return Err(Error::Contract("randomized SVD needs the transpose of the map".into()));
    }
    let (m, n) = (op.nrows(), op.ncols());
    let min_dim = m.min(n);
    if rank == 0 || rank > min_dim {
        return Err(Error::Contract(format!(
            "rank {rank} must lie in 1..={min_dim}"
        )));
    }
    let k = (rank + opts.oversample).min(min_dim);
    let omega = gaussian_matrix(n, k, opts.seed);
    let mut q = orthonormal_basis(&op.apply_block(&omega));
    for _ in 0..opts.power_iters {
        let z = op.apply_transpose_block(&q).expect("transpose checked");
        let qz = orthonormal_basis(&z);
        q = orthonormal_basis(&op.apply_block(&qz));
    }
    // B^T = op^T Q  (n x k);  B = Q^T op.
    let bt = op.apply_transpose_block(&q).expect("transpose checked");
    let svd = bt.svd(true, true);
    let ub = svd.u.expect("left vectors requested");
    let vbt = svd.v_t.expect("right vectors requested");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));

    let sketch_values: Vec<f64> = order.iter().map(|&i| svd.singular_values[i].max(0.0)).collect();
    let mut u = DMatrix::zeros(m, rank);
    let mut v = DMatrix::zeros(n, rank);
    // B = Vb S Ub^T, so op ~= (Q Vb) S Ub^T.
    let qvb = &q * vbt.transpose();
    for (dst, &src) in order.iter().take(rank).enumerate() {
        u.column_mut(dst).copy_from(&qvb.column(src));
        v.column_mut(dst).copy_from(&ub.column(src));
    }
    Ok(TruncatedSvd {
        u,
        s: sketch_values[..rank].to_vec(),
        v,
        sketch_values,
    })
}

/// Generalized symmetric eigenpairs `K v = lambda B v`.
#[derive(Debug, Clone)]
pub struct EigenPairs {
    /// Descending.
    pub values: Vec<f64>,
    /// Columns are `B`-orthonormal eigenvectors.
    pub vectors: DMatrix<f64>,
    /// Diagonal of the metric `B`.
    pub metric: Vec<f64>,
    /// `|K v_i - lambda_i B v_i|` for every returned pair.
    pub residuals: Vec<f64>,
}

impl EigenPairs {
    pub fn rank(&self) -> usize {
        self.values.len()
    }

    /// Largest `|v_i^T B v_j - delta_ij|`.
    pub fn orthonormality_defect(&self) -> f64 {
        let r = self.rank();
        let mut worst = 0.0_f64;
        for i in 0..r {
            for j in 0..r {
                let g: f64 = (0..self.vectors.nrows())
                    .map(|k| self.vectors[(k, i)] * self.metric[k] * self.vectors[(k, j)])
                    .sum();
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((g - target).abs());
            }
        }
        worst
    }
}

/// Leading `rank` eigenpairs of the pencil `(op, metric)`.
///
/// `op` must be symmetric positive semi-definite and `metric` diagonal SPD;
/// the pencil is reduced to `B^{-1/2} K B^{-1/2}` and sketched with a
/// Gaussian range finder.
pub fn randomized_gen_eig(
    op: &dyn LinearMap,
    metric: &SparseOperator,
    rank: usize,
    opts: RandomizedOptions,
) -> Result<EigenPairs> {
    let n = op.ncols();
    if op.nrows() != n || LinearMap::nrows(metric) != n {
        return Err(Error::DimensionMismatch {
            context: "generalized eigenproblem",
            expected: n,
            got: LinearMap::nrows(metric),
        });
    }
    if rank > n {
        return Err(Error::Contract(format!("rank {rank} exceeds dimension {n}")));
    }
    if !metric.is_diagonal() {
        return Err(Error::Contract("metric must be diagonal".into()));
    }
    let b = metric.diag();
    if b.iter().any(|&v| !(v > 0.0)) {
        return Err(Error::Contract("metric must be positive definite".into()));
    }
    if rank == 0 {
        return Ok(EigenPairs {
            values: vec![],
            vectors: DMatrix::zeros(n, 0),
            metric: b,
            residuals: vec![],
        });
    }
    let inv_sqrt: Vec<f64> = b.iter().map(|v| 1.0 / v.sqrt()).collect();
    let scale_rows = |x: &DMatrix<f64>| {
        let mut y = x.clone();
        for j in 0..y.ncols() {
            for i in 0..n {
                y[(i, j)] *= inv_sqrt[i];
            }
        }
        y
    };
    // K' X = B^{-1/2} K B^{-1/2} X
    let reduced = |x: &DMatrix<f64>| scale_rows(&op.apply_block(&scale_rows(x)));

    let k = (rank + opts.oversample).min(n);
    let omega = gaussian_matrix(n, k, opts.seed);
    let mut q = orthonormal_basis(&reduced(&omega));
    for _ in 0..opts.power_iters {
        q = orthonormal_basis(&reduced(&q));
    }
    let kq = reduced(&q);
    let mut t = q.tr_mul(&kq);
    t = (&t + t.transpose()) * 0.5;
    let eig = SymmetricEigen::new(t);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));

    let mut values = Vec::with_capacity(rank);
    let mut vectors = DMatrix::zeros(n, rank);
    let mut residuals = Vec::with_capacity(rank);
    for (dst, &src) in order.iter().take(rank).enumerate() {
        let lambda = eig.eigenvalues[src];
        let z = eig.eigenvectors.column(src);
        let y = &q * z;
        let ky = &kq * z;
        // K u - lambda B u = B^{1/2} (K' y - lambda y)
        let res: f64 = (0..n)
            .map(|i| ((ky[i] - lambda * y[i]) * b[i].sqrt()).powi(2))
            .sum::<f64>()
            .sqrt();
        for i in 0..n {
            vectors[(i, dst)] = y[i] * inv_sqrt[i];
        }
        values.push(lambda);
        residuals.push(res);
    }
    Ok(EigenPairs {
        values,
        vectors,
        metric: b,
        residuals,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::{DenseMap, FnMap};

    fn outer_rank2(m: usize, n: usize) -> DMatrix<f64> {
        let a = DMatrix::from_fn(m, 1, |i, _| (i as f64 + 1.0).sqrt());
        let b = DMatrix::from_fn(n, 1, |i, _| ((i as f64) * 0.3).cos());
        let c = DMatrix::from_fn(m, 1, |i, _| if i % 2 == 0 { 1.0 } else { -0.5 });
        let d = DMatrix::from_fn(n, 1, |i, _| (i as f64 * 0.1).sin());
        &a * b.transpose() * 3.0 + &c * d.transpose()
    }

    #[test]
    fn exact_low_rank_is_recovered() {
        let a = outer_rank2(30, 20);
        let oracle = a.clone().svd(false, false).singular_values;
        let mut sorted: Vec<f64> = oracle.iter().copied().collect();
        sorted.sort_by(|x, y| y.total_cmp(x));
        let svd = randomized_svd(&DenseMap(a), 2, RandomizedOptions::default()).unwrap();
        for i in 0..2 {
            assert!((svd.s[i] - sorted[i]).abs() <= 1e-10 * sorted[0]);
        }
    }

    #[test]
    fn diagonal_values() {
        let n = 12;
        let d = DMatrix::from_diagonal(&nalgebra::DVector::from_fn(n, |i, _| 0.5_f64.powi(i as i32)));
        let svd = randomized_svd(&DenseMap(d), 3, RandomizedOptions::default()).unwrap();
        for (i, expect) in [1.0, 0.5, 0.25].iter().enumerate() {
            assert!((svd.s[i] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn missing_transpose_is_contract_violation() {
        let op = FnMap::new(4, 4, |x: &[f64]| x.to_vec());
        assert!(matches!(
            randomized_svd(&op, 2, RandomizedOptions::default()),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn identity_pencil_and_zero_operator() {
        let n = 8;
        let metric = SparseOperator::diagonal(&(1..=n).map(|i| i as f64).collect::<Vec<_>>()).unwrap();
        let m2 = metric.clone();
        let same = FnMap::symmetric(n, move |x: &[f64]| m2.apply(x));
        let eig = randomized_gen_eig(&same, &metric, 3, RandomizedOptions::default()).unwrap();
        for v in &eig.values {
            assert!((v - 1.0).abs() < 1e-12);
        }
        assert!(eig.orthonormality_defect() < 1e-10);

        let zero = FnMap::symmetric(n, |x: &[f64]| vec![0.0; x.len()]);
        let eig = randomized_gen_eig(&zero, &metric, 2, RandomizedOptions::default()).unwrap();
        assert_eq!(eig.values, vec![0.0, 0.0]);
    }

    #[test]
    fn rank_beyond_dimension_is_rejected() {
        let metric = SparseOperator::identity(3).unwrap();
        let op = FnMap::symmetric(3, |x: &[f64]| x.to_vec());
        assert!(randomized_gen_eig(&op, &metric, 4, RandomizedOptions::default()).is_err());
    }
}
