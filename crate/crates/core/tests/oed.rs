mod common;

use common::*;
use nalgebra::{DMatrix, DVector};
use oedsteer::domain::{QoiSpec, RegionRect};
use oedsteer::inversion::{DesignWeights, WeightLayout};
use oedsteer::numcore::{LinearMap, RandomizedOptions};
use oedsteer::oed::{
    goal_vector_initial, goal_vector_spacetime, optimize_design, spacetime_integral, threshold_design,
    DesignObjective, FullObjective, GoalVector, OptimizeOptions, RomObjective,
};
use oedsteer::rom::build_rom;
use oedsteer::transport::CandidateMode;
use proptest::prelude::*;

fn opts() -> RandomizedOptions {
    RandomizedOptions {
        power_iters: 2,
        ..RandomizedOptions::default()
    }
}

fn small() -> Small {
    small_problem(10, 3, 3.0, CandidateMode::Stationary, 0.05)
}

fn top_goal(s: &Small) -> GoalVector {
    goal_vector_initial(&s.grid, &RegionRect::new(5.0, 9.0, 6.0, 9.0).unwrap()).unwrap()
}

fn full_rank(s: &Small) -> usize {
    s.grid.n_dof().min(s.forward.nrows())
}

/// `(M c)^T H_s^{-1} (M c)` with a dense Hessian; measurement `j` belongs
/// to position `j % n_pos`.
fn dense_goal_variance(s: &Small, c: &[f64], w: &[f64]) -> f64 {
    let n_pos = s.cs.n_positions();
    let s2 = 1.0 / s.problem.sigma().powi(2);
    let nw: Vec<f64> = (0..s.forward.nrows()).map(|j| s2 * w[j % n_pos]).collect();
    let h = dense_hessian_sym(s, &nw);
    let mc = DVector::from_iterator(c.len(), c.iter().map(|v| v * s.prior.area()));
    let x = h.lu().solve(&mc).unwrap();
    mc.dot(&x)
}

fn random_interior(q: usize, seed: u64) -> Vec<f64> {
    gaussian_vec(q, seed)
        .into_iter()
        .map(|g| 0.15 + 0.7 / (1.0 + (-g).exp()))
        .collect()
}

#[test]
fn initial_goal_vector_is_region_indicator() {
    let s = small();
    let whole = goal_vector_initial(&s.grid, &RegionRect::new(0.0, 10.0, 0.0, 10.0).unwrap()).unwrap();
    assert!(whole.c.iter().all(|&v| v == 1.0));

    let region = RegionRect::new(2.0, 7.0, 0.0, 3.0).unwrap();
    let g = goal_vector_initial(&s.grid, &region).unwrap();
    let mut count = 0;
    for d in 0..s.grid.n_dof() {
        let (x, y) = s.grid.dof_center(d);
        let inside = x > 2.0 && x < 7.0 && y > 0.0 && y < 3.0;
        count += usize::from(inside);
        assert_eq!(g.c[d], if inside { 1.0 } else { 0.0 });
    }
    assert_eq!(count, 15);

    let left = goal_vector_initial(&s.grid, &RegionRect::new(0.0, 4.0, 0.0, 3.0).unwrap()).unwrap();
    let right = goal_vector_initial(&s.grid, &RegionRect::new(4.0, 10.0, 0.0, 3.0).unwrap()).unwrap();
    let both = goal_vector_initial(&s.grid, &RegionRect::new(0.0, 10.0, 0.0, 3.0).unwrap()).unwrap();
    for d in 0..s.grid.n_dof() {
        assert_eq!(left.c[d] + right.c[d], both.c[d]);
    }
}

#[test]
fn spacetime_goal_satisfies_adjoint_identity() {
    let s = small();
    let qoi = QoiSpec::window(RegionRect::new(3.0, 8.0, 6.0, 9.0).unwrap(), 1.0, 2.5, 3.0).unwrap();
    let g = goal_vector_spacetime(&s.transport, &qoi).unwrap();
    assert!(g.m_norm(s.prior.area()) > 0.0);
    for seed in 0..10 {
        let m = gaussian_vec(s.grid.n_dof(), 100 + seed);
        let direct = spacetime_integral(&s.transport, &m, &qoi).unwrap();
        let via_c = s.prior.area() * dot(&m, &g.c);
        assert!(
            (direct - via_c).abs() <= 1e-9 * direct.abs().max(via_c.abs()),
            "{direct} vs {via_c}"
        );
    }
}

#[test]
fn empty_window_gives_zero_goal() {
    let s = small();
    let qoi = QoiSpec::window(RegionRect::new(3.0, 8.0, 6.0, 9.0).unwrap(), 1.5, 1.5, 3.0).unwrap();
    let g = goal_vector_spacetime(&s.transport, &qoi).unwrap();
    assert!(g.c.iter().all(|&v| v == 0.0));
}

#[test]
fn spacetime_goal_support_is_upstream() {
    // 30 x 30 grid, wind 2 m/s northward, kappa 0.5, region in the south.
    // Cells north of the region only reach it by diffusing against the wind,
    // which decays by about an order of magnitude per cell.
    let grid = obstacle_grid(30);
    let transport = south_wind_transport(grid.clone(), 2.0, 0.5, 0.1, 2.0);
    let qoi = QoiSpec::window(RegionRect::new(10.0, 20.0, 3.0, 8.0).unwrap(), 1.0, 2.0, 2.0).unwrap();
    let g = goal_vector_spacetime(&transport, &qoi).unwrap();
    let peak = g.c.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    assert!(peak > 0.0);
    for d in 0..grid.n_dof() {
        let (_, y) = grid.dof_center(d);
        if y > 8.0 + 10.0 {
            assert!(g.c[d].abs() <= 1e-10 * peak, "cell at y={y}: {}", g.c[d]);
        }
    }
}

#[test]
fn objective_at_zero_design_is_prior_goal_variance() {
    let s = small();
    let goal = top_goal(&s);
    let obj = FullObjective::new(s.problem.clone(), &goal, full_rank(&s), opts()).unwrap();
    let q = obj.q();
    let e = obj.evaluate(&vec![0.0; q], 0.0).unwrap();
    let a = s.prior.operator().to_dense();
    let area = s.prior.area();
    let mc = DVector::from_iterator(goal.c.len(), goal.c.iter().map(|v| v * area));
    let z = a.lu().solve(&mc).unwrap();
    let expected = area * z.dot(&z);
    assert!((e.data - expected).abs() <= 1e-10 * expected, "{} vs {expected}", e.data);
    assert_eq!(e.penalty, 0.0);
}

#[test]
fn objective_matches_dense_oracle() {
    let s = small();
    let goal = top_goal(&s);
    let obj = FullObjective::new(s.problem.clone(), &goal, full_rank(&s), opts()).unwrap();
    for seed in 0..3 {
        let w = random_interior(obj.q(), seed);
        let (value, _) = obj.data_term(&w).unwrap();
        let expected = dense_goal_variance(&s, &goal.c, &w);
        assert!((value - expected).abs() <= 1e-8 * expected, "{value} vs {expected}");
    }
}

#[test]
fn penalty_is_alpha_times_weight_sum() {
    let s = small_problem(10, 1, 1.0, CandidateMode::Stationary, 0.05);
    let goal = top_goal(&s);
    let obj = FullObjective::new(s.problem.clone(), &goal, 4, opts()).unwrap();
    let w = vec![1.0; obj.q()];
    let e = obj.evaluate(&w, 0.1).unwrap();
    assert!((e.penalty - 0.1 * obj.q() as f64).abs() < 1e-12);

    let q = 96;
    let ones = vec![1.0; q];
    let pen: f64 = 0.1 * ones.iter().sum::<f64>();
    assert!((pen - 9.6).abs() < 1e-12);
}

#[test]
fn gradient_matches_central_differences() {
    let s = small();
    let goal = top_goal(&s);
    let obj = FullObjective::new(s.problem.clone(), &goal, full_rank(&s), opts()).unwrap();
    let q = obj.q();
    for seed in 0..6 {
        let w = random_interior(q, 10 + seed);
        let (_, grad) = obj.data_term(&w).unwrap();
        assert!(grad.iter().all(|&g| g <= 0.0));
        let h = 1e-4;
        let mut fd = vec![0.0; q];
        for i in 0..q {
            let mut wp = w.clone();
            let mut wm = w.clone();
            wp[i] += h;
            wm[i] -= h;
            fd[i] = (obj.data_term(&wp).unwrap().0 - obj.data_term(&wm).unwrap().0) / (2.0 * h);
        }
        let err = rel_err(&grad, &fd);
        assert!(err <= 1e-5, "seed {seed}: relative gradient error {err}");
    }
}

#[test]
fn zero_goal_gradient_is_alpha() {
    let s = small();
    let mut goal = top_goal(&s);
    goal.c.iter_mut().for_each(|v| *v = 0.0);
    let obj = FullObjective::new(s.problem.clone(), &goal, 8, opts()).unwrap();
    let w = random_interior(obj.q(), 3);
    let e = obj.evaluate(&w, 0.7).unwrap();
    assert_eq!(e.data, 0.0);
    assert!(e.grad.iter().all(|&g| g == 0.7));
}

#[test]
fn adding_a_sensor_never_increases_goal_variance() {
    let s = small();
    let goal = top_goal(&s);
    let q = s.cs.n_positions();
    assert!(q <= 30);
    let base: Vec<f64> = (0..q).map(|i| if i % 3 == 0 { 1.0 } else { 0.0 }).collect();
    let j0 = dense_goal_variance(&s, &goal.c, &base);
    let all = dense_goal_variance(&s, &goal.c, &vec![1.0; q]);
    for i in 0..q {
        let mut w = base.clone();
        w[i] = 1.0;
        let j1 = dense_goal_variance(&s, &goal.c, &w);
        assert!(j1 <= j0 * (1.0 + 1e-12), "sensor {i}: {j1} > {j0}");
        assert!(all <= j1 * (1.0 + 1e-12));
    }
}

#[test]
fn rom_objective_agrees_with_full_objective_at_full_rank() {
    let s = small();
    let goal = top_goal(&s);
    let r = full_rank(&s);
    let rom = build_rom(s.forward.as_ref(), &s.prior, r, true, opts()).unwrap();
    let robj = RomObjective::new(&rom, WeightLayout::from_candidates(&s.cs), s.problem.sigma(), &goal).unwrap();
    let fobj = FullObjective::new(s.problem.clone(), &goal, r, opts()).unwrap();
    for seed in 0..3 {
        let w = random_interior(robj.q(), 40 + seed);
        let (vr, gr) = robj.data_term(&w).unwrap();
        let (vf, gf) = fobj.data_term(&w).unwrap();
        assert!((vr - vf).abs() <= 1e-8 * vf, "{vr} vs {vf}");
        assert!(rel_err(&gr, &gf) <= 1e-6, "{}", rel_err(&gr, &gf));

        let post = robj.posterior(&w).unwrap();
        let q = post.apply_cov(&goal.c).unwrap();
        let via_post = s.prior.area() * dot(&goal.c, &q);
        assert!((via_post - vr).abs() <= 1e-8 * vr);
    }
    assert!((robj.data_term(&vec![0.0; robj.q()]).unwrap().0 - robj.prior_value()).abs() <= 1e-12 * robj.prior_value());
}

#[test]
fn rom_objective_gradient_matches_central_differences() {
    let s = small_problem(14, 3, 3.0, CandidateMode::Stationary, 0.05);
    let goal = goal_vector_initial(&s.grid, &RegionRect::new(6.0, 12.0, 9.0, 13.0).unwrap()).unwrap();
    let rom = build_rom(s.forward.as_ref(), &s.prior, 12, true, opts()).unwrap();
    let obj = RomObjective::new(&rom, WeightLayout::from_candidates(&s.cs), 0.05, &goal).unwrap();
    let w = random_interior(obj.q(), 5);
    let (_, grad) = obj.data_term(&w).unwrap();
    let h = 1e-4;
    let fd: Vec<f64> = (0..obj.q())
        .map(|i| {
            let mut wp = w.clone();
            let mut wm = w.clone();
            wp[i] += h;
            wm[i] -= h;
            (obj.data_term(&wp).unwrap().0 - obj.data_term(&wm).unwrap().0) / (2.0 * h)
        })
        .collect();
    assert!(rel_err(&grad, &fd) <= 1e-6, "{}", rel_err(&grad, &fd));
}

#[test]
fn large_alpha_drives_design_to_zero() {
    let s = small();
    let goal = top_goal(&s);
    let obj = FullObjective::new(s.problem.clone(), &goal, full_rank(&s), opts()).unwrap();
    let q = obj.q();
    let (_, g0) = obj.data_term(&vec![0.0; q]).unwrap();
    let alpha = 2.0 * g0.iter().fold(0.0_f64, |m, g| m.max(g.abs()));
    let res = optimize_design(
        &obj,
        &DesignWeights::ones(q),
        OptimizeOptions {
            alpha,
            ..OptimizeOptions::default()
        },
    )
    .unwrap();
    assert!(res.w.as_slice().iter().all(|&v| v == 0.0), "{:?}", res.w.as_slice());
    assert!(res.converged);
}

#[test]
fn optimizer_history_decreases_and_stays_in_box() {
    let s = small_problem(14, 3, 3.0, CandidateMode::Stationary, 0.05);
    let goal = goal_vector_initial(&s.grid, &RegionRect::new(6.0, 12.0, 9.0, 13.0).unwrap()).unwrap();
    let rom = build_rom(s.forward.as_ref(), &s.prior, 20, true, opts()).unwrap();
    let obj = RomObjective::new(&rom, WeightLayout::from_candidates(&s.cs), 0.05, &goal).unwrap();
    let q = obj.q();
    let (_, g1) = obj.data_term(&vec![1.0; q]).unwrap();
    let gmax = g1.iter().fold(0.0_f64, |m, g| m.max(g.abs()));
    for alpha in [0.0, 0.1 * gmax, gmax] {
        let res = optimize_design(
            &obj,
            &DesignWeights::constant(q, 0.5).unwrap(),
            OptimizeOptions {
                alpha,
                ..OptimizeOptions::default()
            },
        )
        .unwrap();
        assert!(res.history.windows(2).all(|p| p[1] <= p[0]), "{:?}", res.history);
        assert!(res.w.as_slice().iter().all(|&v| (0.0..=1.0).contains(&v)));
        assert!(!res.line_search_failed);
        assert!(res.converged, "alpha {alpha}: pg {}", res.projected_gradient);
        let f = obj.evaluate(res.w.as_slice(), alpha).unwrap();
        assert_eq!(f.value(), res.value);
    }
}

#[test]
fn threshold_examples() {
    let w = DesignWeights::new(vec![0.9, 0.05, 0.6]).unwrap();
    assert_eq!(threshold_design(&w, 0.5).unwrap().as_slice(), &[1.0, 0.0, 1.0]);
    let low = DesignWeights::new(vec![0.1, 0.2, 0.3]).unwrap();
    assert!(threshold_design(&low, 0.5).unwrap().as_slice().iter().all(|&v| v == 0.0));
    assert!(threshold_design(&w, 0.0).is_err());
    assert!(threshold_design(&w, 1.0).is_err());
}

proptest! {
    #[test]
    fn thresholding_is_idempotent(w in prop::collection::vec(0.0..=1.0f64, 1..40), t in 0.01..0.99f64) {
        let d = DesignWeights::new(w).unwrap();
        let once = threshold_design(&d, t).unwrap();
        let twice = threshold_design(&once, t).unwrap();
        prop_assert_eq!(once.as_slice(), twice.as_slice());
    }
}

#[test]
fn dense_and_operator_hessians_agree() {
    // guards the oracle used above
    let s = small();
    let n = s.grid.n_dof();
    let w = random_interior(s.cs.n_positions(), 9);
    let nw = s.problem.noise_weights(&DesignWeights::new(w.clone()).unwrap()).unwrap();
    let h = dense_hessian_sym(&s, &nw);
    let x = gaussian_vec(n, 2);
    let y = s.problem.hessian_sym_action(&x, &nw).unwrap();
    let yd = &h * DVector::from_column_slice(&x);
    assert!(rel_err(&y, yd.as_slice()) < 1e-12);
    let _ = DMatrix::<f64>::zeros(1, 1);
    let _ = s.forward.ncols();
}
