mod common;

use common::*;
use nalgebra::{DMatrix, DVector};
use oedsteer::inversion::{DesignWeights, InverseProblem, LowRankPosterior, DEFAULT_EIGEN_FLOOR};
use oedsteer::prior::BiLaplacianPrior;
use oedsteer::numcore::{LinearMap, RandomizedOptions};
use oedsteer::transport::CandidateMode;
use proptest::prelude::*;

fn opts() -> RandomizedOptions {
    RandomizedOptions::default()
}

fn posterior_oracle(s: &Small, w: &DesignWeights) -> DMatrix<f64> {
    let nw = s.problem.noise_weights(w).unwrap();
    dense_hessian_sym(s, &nw).lu().try_inverse().unwrap()
}

#[test]
fn hessian_prior_only_and_zero() {
    let s = small_problem(12, 3, 2.0, CandidateMode::Stationary, 0.05);
    let x = gaussian_vec(s.grid.n_dof(), 1);
    let h0 = s.problem.hessian_action(&x, &DesignWeights::zeros(s.cs.q())).unwrap();
    let pr = s.prior.apply_precision(&x).unwrap();
    assert!(rel_err(&h0, &pr) < 1e-14);
    let z = s.problem.hessian_action(&vec![0.0; x.len()], &DesignWeights::ones(s.cs.q())).unwrap();
    assert!(z.iter().all(|&v| v == 0.0));
}

#[test]
fn hessian_matches_dense_assembly() {
    let s = small_problem(12, 3, 2.0, CandidateMode::Stationary, 0.05);
    let w = DesignWeights::ones(s.cs.q());
    let nw = s.problem.noise_weights(&w).unwrap();
    let dense = dense_hessian_sym(&s, &nw) / s.prior.area();
    for seed in 0..3 {
        let x = gaussian_vec(s.grid.n_dof(), seed);
        let hx = s.problem.hessian_action(&x, &w).unwrap();
        let oracle = &dense * DVector::from_column_slice(&x);
        assert!(rel_err(&hx, oracle.as_slice()) < 1e-8);
    }
}

#[test]
fn map_trivial_cases() {
    let s = small_problem(12, 3, 2.0, CandidateMode::Stationary, 0.05);
    let d = vec![0.0; s.cs.n_measurements()];
    let m = s.problem.solve_map(&d, &DesignWeights::ones(s.cs.q()), None, 1e-10).unwrap();
    assert!(m.m.iter().all(|&v| v == 0.0));
    let d = gaussian_vec(s.cs.n_measurements(), 3);
    let m = s.problem.solve_map(&d, &DesignWeights::zeros(s.cs.q()), None, 1e-10).unwrap();
    assert!(m.m.iter().all(|&v| v.abs() < 1e-14));
}

#[test]
fn map_matches_dense_normal_equations() {
    let s = small_problem(12, 3, 2.0, CandidateMode::Stationary, 0.05);
    let w = DesignWeights::new((0..s.cs.q()).map(|i| (i % 3) as f64 / 2.0).collect()).unwrap();
    let d = gaussian_vec(s.cs.n_measurements(), 8);
    let nw = s.problem.noise_weights(&w).unwrap();
    let f = dense_of(s.forward.as_ref());
    let rhs = f.transpose() * DVector::from_iterator(d.len(), d.iter().zip(&nw).map(|(a, b)| a * b));
    let oracle = dense_hessian_sym(&s, &nw).lu().solve(&rhs).unwrap();
    let plain = s.problem.solve_map(&d, &w, None, 1e-12).unwrap();
    assert!(rel_err(&plain.m, oracle.as_slice()) < 1e-6);
    let lr = s.problem.build_lowrank(&w, 20, DEFAULT_EIGEN_FLOOR, opts()).unwrap();
    let pre = s.problem.solve_map(&d, &w, Some(&lr), 1e-12).unwrap();
    assert!(rel_err(&pre.m, oracle.as_slice()) < 1e-6);
    assert!(pre.iterations < plain.iterations);
}

#[test]
fn zero_design_has_no_eigenpairs_and_prior_covariance() {
    let s = small_problem(10, 3, 2.0, CandidateMode::Stationary, 0.05);
    let lr = s.problem.build_lowrank(&DesignWeights::zeros(s.cs.q()), 10, DEFAULT_EIGEN_FLOOR, opts()).unwrap();
    assert_eq!(lr.rank(), 0);
    let x = gaussian_vec(s.grid.n_dof(), 2);
    assert!(rel_err(&lr.apply_cov(&x).unwrap(), &s.prior.apply_cov(&x).unwrap()) < 1e-15);
}

#[test]
fn full_rank_posterior_matches_dense_inverse() {
    let s = small_problem(10, 2, 2.0, CandidateMode::Stationary, 0.05);
    let w = DesignWeights::new((0..s.cs.q()).map(|i| 0.2 + 0.8 * ((i * 7) % 5) as f64 / 4.0).collect()).unwrap();
    let n = s.grid.n_dof();
    let lr = s.problem.build_lowrank(&w, n, 0.0, opts()).unwrap();
    let hs_inv = posterior_oracle(&s, &w);
    for seed in 0..4 {
        let x = gaussian_vec(n, 40 + seed);
        let got = lr.apply_cov(&x).unwrap();
        let oracle = &hs_inv * DVector::from_column_slice(&x) * s.prior.area();
        assert!(rel_err(&got, oracle.as_slice()) < 1e-6, "{}", rel_err(&got, oracle.as_slice()));
    }
    // SMW: exact variance equals the oracle diagonal
    let exact = lr.variance_exact();
    for i in 0..n {
        assert!((exact[i] - hs_inv[(i, i)]).abs() <= 1e-6 * hs_inv[(i, i)]);
    }
}

#[test]
fn eigenvalues_scale_with_inverse_noise_variance() {
    let s = small_problem(10, 3, 2.0, CandidateMode::Stationary, 0.05);
    let w = DesignWeights::ones(s.cs.q());
    let a = s.problem.build_lowrank(&w, 8, DEFAULT_EIGEN_FLOOR, opts()).unwrap();
    let b = s.problem.with_sigma(0.1).unwrap().build_lowrank(&w, 8, DEFAULT_EIGEN_FLOOR, opts()).unwrap();
    for (la, lb) in a.values().iter().zip(b.values()) {
        assert!((la / lb - 4.0).abs() < 1e-8, "{la} / {lb}");
    }
}

#[test]
fn eigenvectors_are_prior_orthonormal() {
    let s = small_problem(12, 3, 2.0, CandidateMode::Stationary, 0.05);
    let lr = s.problem.build_lowrank(&DesignWeights::ones(s.cs.q()), 12, DEFAULT_EIGEN_FLOOR, opts()).unwrap();
    let v = lr.vectors();
    for i in 0..lr.rank() {
        let vi: Vec<f64> = v.column(i).iter().cloned().collect();
        let rvi = s.prior.apply_r(&vi).unwrap();
        for j in 0..lr.rank() {
            let g: f64 = v.column(j).iter().zip(&rvi).map(|(a, b)| a * b).sum();
            assert!((g - if i == j { 1.0 } else { 0.0 }).abs() < 1e-8);
        }
    }
    assert!(lr.values().windows(2).all(|p| p[0] >= p[1]));
}

#[test]
fn smw_identity_on_preconditioned_misfit() {
    // (K~ + I)^{-1} = I - U D U^T for the whitened misfit K~ with all pairs kept.
    let s = small_problem(8, 2, 1.5, CandidateMode::Stationary, 0.05);
    let w = DesignWeights::ones(s.cs.q());
    let n = s.grid.n_dof();
    let nw = s.problem.noise_weights(&w).unwrap();
    let f = dense_of(s.forward.as_ref());
    let a = s.prior.operator().to_dense();
    let area = s.prior.area();
    let l_inv = (a.clone() / area.sqrt()).lu().try_inverse().unwrap(); // (A M^{-1/2})^{-1}
    let wt = DMatrix::from_diagonal(&DVector::from_column_slice(&nw));
    let kt = &l_inv * f.transpose() * wt * &f * l_inv.transpose();
    let lhs = (&kt + DMatrix::identity(n, n)).lu().try_inverse().unwrap();
    let lr = s.problem.build_lowrank(&w, n, 0.0, opts()).unwrap();
    // U = L^T V
    let u = (a / area.sqrt()).transpose() * lr.vectors();
    let d = DMatrix::from_diagonal(&DVector::from_iterator(lr.rank(), lr.values().iter().map(|l| l / (1.0 + l))));
    let rhs = DMatrix::identity(n, n) - &u * d * u.transpose();
    for seed in 0..3 {
        let x = DVector::from_vec(gaussian_vec(n, seed));
        let a1 = &lhs * &x;
        let a2 = &rhs * &x;
        assert!((a1 - &a2).norm() <= 1e-8 * a2.norm());
    }
}

#[test]
fn hutchinson_variance_close_to_dense_diagonal() {
    // Hutchinson's per-entry error scales with the off-diagonal mass of the
    // covariance, so this check uses a short correlation length.
    let mut s = small_problem(8, 2, 1.5, CandidateMode::Stationary, 0.05);
    s.prior = std::sync::Arc::new(BiLaplacianPrior::new(s.grid.clone(), 8.0, 2.0, None).unwrap());
    s.problem = InverseProblem::new(s.forward.clone(), s.prior.clone(), 0.05, s.problem.layout().clone()).unwrap();
    let w = DesignWeights::ones(s.cs.q());
    let lr = s.problem.build_lowrank(&w, s.grid.n_dof(), 0.0, opts()).unwrap();
    let oracle = posterior_oracle(&s, &w);
    let est = lr.pointwise_variance(2000, 11).unwrap();
    for i in 0..s.grid.n_dof() {
        assert!((est.values[i] / oracle[(i, i)] - 1.0).abs() < 0.1, "cell {i}");
    }
    assert!(est.rel_error > 0.0 && est.rel_error < 0.1);
    // prior only
    let lr0 = LowRankPosterior::prior_only(s.prior.clone());
    let est0 = lr0.pointwise_variance(2000, 11).unwrap();
    for (e, p) in est0.values.iter().zip(s.prior.variance()) {
        assert!((e / p - 1.0).abs() < 0.1);
    }
}

#[test]
fn adding_a_sensor_lowers_variance_everywhere() {
    let s = small_problem(8, 2, 1.5, CandidateMode::Stationary, 0.05);
    let q = s.cs.q();
    let base: Vec<f64> = (0..q).map(|i| if i % 2 == 0 { 1.0 } else { 0.0 }).collect();
    let v0 = posterior_oracle(&s, &DesignWeights::new(base.clone()).unwrap()).diagonal();
    for i in (1..q).step_by(2) {
        let mut w = base.clone();
        w[i] = 1.0;
        let v1 = posterior_oracle(&s, &DesignWeights::new(w.clone()).unwrap()).diagonal();
        assert!(v1.iter().zip(v0.iter()).all(|(a, b)| *a <= b * (1.0 + 1e-12)));
        // the low-rank exact diagonal agrees
        let lr = s.problem.build_lowrank(&DesignWeights::new(w).unwrap(), s.grid.n_dof(), 0.0, opts()).unwrap();
        let ex = lr.variance_exact();
        assert!(ex.iter().zip(v1.iter()).all(|(a, b)| (a - b).abs() <= 1e-6 * b));
    }
}

#[test]
fn lrpost_round_trip() {
    let s = small_problem(10, 3, 2.0, CandidateMode::Stationary, 0.05);
    let lr = s.problem.build_lowrank(&DesignWeights::ones(s.cs.q()), 8, DEFAULT_EIGEN_FLOOR, opts()).unwrap();
    let mut buf = Vec::new();
    lr.write(&mut buf).unwrap();
    assert!(String::from_utf8_lossy(&buf).starts_with(&format!("LRPOST {} {}", lr.rank(), s.grid.n_dof())));
    let back = LowRankPosterior::read(buf.as_slice(), s.prior.clone(), "mem").unwrap();
    let x = gaussian_vec(s.grid.n_dof(), 5);
    let a = lr.apply_cov(&x).unwrap();
    let b = back.apply_cov(&x).unwrap();
    assert!(rel_err(&b, &a) <= 1e-12);
    assert!(LowRankPosterior::read("LRPOST 1 3\n1\n".as_bytes(), s.prior.clone(), "bad").is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn hessian_is_m_symmetric_positive(s1 in 0u64..10_000, s2 in 0u64..10_000) {
        let s = small_problem(10, 3, 2.0, CandidateMode::Stationary, 0.05);
        let w = DesignWeights::ones(s.cs.q());
        let x = gaussian_vec(s.grid.n_dof(), s1);
        let y = gaussian_vec(s.grid.n_dof(), s2 + 99_999);
        let hx = s.problem.hessian_action(&x, &w).unwrap();
        let hy = s.problem.hessian_action(&y, &w).unwrap();
        let l = dot(&hx, &y);
        let r = dot(&x, &hy);
        prop_assert!((l - r).abs() <= 1e-9 * l.abs().max(r.abs()));
        prop_assert!(dot(&hx, &x) > 0.0);
    }

    #[test]
    fn posterior_cov_is_m_symmetric(s1 in 0u64..10_000, s2 in 0u64..10_000) {
        let s = small_problem(10, 3, 2.0, CandidateMode::Stationary, 0.05);
        let lr = s.problem.build_lowrank(&DesignWeights::ones(s.cs.q()), 10, DEFAULT_EIGEN_FLOOR, opts()).unwrap();
        let x = gaussian_vec(s.grid.n_dof(), s1);
        let y = gaussian_vec(s.grid.n_dof(), s2 + 12_345);
        let l = dot(&lr.apply_cov(&x).unwrap(), &y);
        let r = dot(&x, &lr.apply_cov(&y).unwrap());
        prop_assert!((l - r).abs() <= 1e-8 * l.abs().max(r.abs()));
    }
}

#[test]
fn forward_map_dense_is_consistent() {
    let s = small_problem(8, 2, 1.5, CandidateMode::Stationary, 0.05);
    let f = dense_of(s.forward.as_ref());
    assert_eq!(f.nrows(), s.forward.nrows());
}
