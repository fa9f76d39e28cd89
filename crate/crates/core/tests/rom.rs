mod common;

use common::*;
use oedsteer::numcore::{LinearMap, RandomizedOptions};
use oedsteer::rom::{build_rom, whitened_energy, RomOperator};
use oedsteer::transport::CandidateMode;

fn opts() -> RandomizedOptions {
    RandomizedOptions {
        power_iters: 2,
        ..RandomizedOptions::default()
    }
}

#[test]
fn exhaustive_rank_reproduces_forward_map() {
    let s = small_problem(12, 3, 2.0, CandidateMode::Stationary, 0.05);
    let q = s.forward.nrows();
    assert!(q < s.grid.n_dof());
    for pre in [false, true] {
        let rom = build_rom(s.forward.as_ref(), &s.prior, q, pre, opts()).unwrap();
        for seed in 0..5 {
            let m = gaussian_vec(s.grid.n_dof(), seed);
            let full = s.forward.apply(&m);
            let red = rom.apply_rom(&m).unwrap();
            assert!(rel_err(&red, &full) < 1e-8, "pre={pre}: {}", rel_err(&red, &full));
        }
        assert!(rom.apply_rom(&vec![0.0; s.grid.n_dof()]).unwrap().iter().all(|&v| v == 0.0));
    }
}

#[test]
fn rom_adjoint_pair_is_exact() {
    let s = small_problem(12, 3, 2.0, CandidateMode::Stationary, 0.05);
    let area = s.prior.area();
    for pre in [false, true] {
        for r in [3, 10] {
            let rom = build_rom(s.forward.as_ref(), &s.prior, r, pre, opts()).unwrap();
            for seed in 0..5 {
                let m = gaussian_vec(s.grid.n_dof(), seed);
                let y = gaussian_vec(rom.n_outputs(), seed + 50);
                let fm = rom.apply_rom(&m).unwrap();
                let lhs = dot(&fm, &y);
                let rhs = area * dot(&m, &rom.apply_rom_adjoint(&y).unwrap());
                assert!((lhs - rhs).abs() <= 1e-12 * norm(&fm) * norm(&y) + 1e-300);
            }
        }
    }
}

#[test]
fn bases_are_orthonormal_in_their_metrics() {
    let s = small_problem(12, 3, 2.0, CandidateMode::Stationary, 0.05);
    let rom = build_rom(s.forward.as_ref(), &s.prior, 12, true, opts()).unwrap();
    let utmu = rom.u().transpose() * rom.u() * s.prior.area();
    let vtv = rom.v().transpose() * rom.v();
    for i in 0..12 {
        for j in 0..12 {
            let t = if i == j { 1.0 } else { 0.0 };
            assert!((utmu[(i, j)] - t).abs() < 1e-8);
            assert!((vtv[(i, j)] - t).abs() < 1e-8);
        }
    }
    assert!(rom.singular_values().windows(2).all(|w| w[0] >= w[1] && w[1] >= 0.0));
}

#[test]
fn probed_error_non_increasing_in_rank() {
    let s = small_problem(12, 3, 2.0, CandidateMode::Stationary, 0.05);
    let rom = build_rom(s.forward.as_ref(), &s.prior, 30, false, opts()).unwrap();
    let probes: Vec<Vec<f64>> = (0..5).map(|p| gaussian_vec(s.grid.n_dof(), 300 + p)).collect();
    let full: Vec<Vec<f64>> = probes.iter().map(|m| s.forward.apply(m)).collect();
    let mut last = f64::INFINITY;
    for r in 1..=30 {
        let t = rom.truncate(r).unwrap();
        let err: f64 = probes
            .iter()
            .zip(&full)
            .map(|(m, f)| {
                let a = t.apply_rom(m).unwrap();
                a.iter().zip(f).map(|(x, y)| (x - y).powi(2)).sum::<f64>()
            })
            .sum();
        assert!(err <= last * (1.0 + 1e-10), "rank {r}");
        last = err;
    }
}

#[test]
fn whitened_energy_matches_dense_frobenius_norm() {
    let s = small_problem(10, 3, 2.0, CandidateMode::Stationary, 0.05);
    let f = dense_of(s.forward.as_ref());
    let area = s.prior.area();
    let plain = f.norm_squared() / area;
    let a_inv = s.prior.operator().to_dense().lu().try_inverse().unwrap();
    let pre = (&f * a_inv * area.sqrt()).norm_squared();
    let e0 = whitened_energy(&s.forward, &s.prior, false).unwrap();
    let e1 = whitened_energy(&s.forward, &s.prior, true).unwrap();
    assert!((e0 - plain).abs() <= 1e-10 * plain);
    assert!((e1 - pre).abs() <= 1e-10 * pre);
}

#[test]
fn preconditioning_steepens_the_spectrum() {
    let s = small_problem(12, 2, 2.0, CandidateMode::Stationary, 0.05);
    let r = 40;
    let tail = |pre: bool| {
        let rom = build_rom(s.forward.as_ref(), &s.prior, r, pre, opts()).unwrap();
        let total = whitened_energy(&s.forward, &s.prior, pre).unwrap();
        let sv = rom.singular_values().to_vec();
        move |k: usize| 1.0 - sv[..k].iter().map(|v| v * v).sum::<f64>() / total
    };
    let (plain, pre) = (tail(false), tail(true));
    for k in [5, 10, 20] {
        assert!(pre(k) < plain(k), "k = {k}: {} vs {}", pre(k), plain(k));
    }
}

#[test]
fn truncate_to_tail_and_round_trip() {
    let s = small_problem(12, 3, 2.0, CandidateMode::Stationary, 0.05);
    let rom = build_rom(s.forward.as_ref(), &s.prior, 30, true, opts()).unwrap();
    let t = rom.truncate_to_tail(1e-2).unwrap();
    assert!(t.tail_ratio() <= 1e-2);
    if t.rank() > 1 {
        assert!(rom.truncate(t.rank() - 1).unwrap().tail_ratio() > 1e-2);
    }
    let mut buf = Vec::new();
    t.write(&mut buf).unwrap();
    let back = RomOperator::read(buf.as_slice(), s.prior.clone(), "mem").unwrap();
    let m = gaussian_vec(s.grid.n_dof(), 1);
    assert!(rel_err(&back.apply_rom(&m).unwrap(), &t.apply_rom(&m).unwrap()) <= 1e-14);
    assert!(back.is_preconditioned());
    assert!(RomOperator::read("ROM 1 2 3 7\n".as_bytes(), s.prior.clone(), "bad").is_err());
}
