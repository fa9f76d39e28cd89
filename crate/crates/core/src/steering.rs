//! Closed-loop steering of a mobile sensor: measure, invert, recentre the
//! goal on the reconstructed maximum, redesign over the look-ahead window and
//! take one step on the mobile grid.
//!
//! All design evaluations use one prior-preconditioned ROM built offline
//! over every (mobile or stationary position, observation time) pair; each
//! cycle only selects rows of it. MAP points are solved with the full
//! operators, preconditioned by the ROM posterior of the data gathered so
//! far.

use std::io::Write;
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::domain::{RegionRect, ScalarField};
use crate::error::{Error, Result};
use crate::inversion::{DesignWeights, InverseProblem, WeightLayout};
use crate::numcore::{LinearMap, RandomizedOptions};
use crate::oed::{goal_vector_initial, optimize_design, DesignObjective, OptimizeOptions, RomObjective};
use crate::prior::BiLaplacianPrior;
use crate::rom::{build_rom, RomOperator};
use crate::transport::{CandidateMode, CandidateSet, ForwardMap, Measurement, ObservationPlan, Transport};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SteeringConfig {
    /// Measurement period [s].
    pub dt_obs: f64,
    /// Design horizon after the current time [s].
    pub lookahead: f64,
    /// Side of the square goal region [m].
    pub qoi_side: f64,
    pub t0: f64,
    pub t_end: f64,
    /// 4 or 8.
    pub neighbourhood: usize,
    pub alpha: f64,
    pub rank: usize,
    /// When false the mobile sensor stays parked and takes no readings.
    pub mobile: bool,
    /// When false the simulated readings are exact.
    pub noise: bool,
    pub seed: u64,
    pub cg_tol: f64,
    /// Solve for the MAP point with the ROM surrogate instead of the full
    /// operators.
    pub rom_map: bool,
}

impl SteeringConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.dt_obs > 0.0
            && self.lookahead >= self.dt_obs
            && self.qoi_side > 0.0
            && 0.0 <= self.t0
            && self.t0 <= self.t_end
            && (self.neighbourhood == 4 || self.neighbourhood == 8)
            && self.alpha >= 0.0
            && self.rank > 0
            && self.cg_tol > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("invalid steering configuration {self:?}")))
        }
    }

    /// Number of measure-invert-move cycles between `t0` and `t_end`.
    pub fn n_cycles(&self) -> usize {
        ((self.t_end - self.t0) / self.dt_obs + 1e-9).floor() as usize
    }

    fn lookahead_steps(&self) -> usize {
        ((self.lookahead / self.dt_obs) + 1e-9).floor() as usize
    }
}

/// The physical setting of a steering run.
pub struct SteeringProblem {
    pub transport: Arc<Transport>,
    pub prior: Arc<BiLaplacianPrior>,
    pub truth: ScalarField,
    pub sigma: f64,
    pub stationary: Vec<(f64, f64)>,
    /// Admissible mobile positions as a `nx * ny` lattice, row-major.
    pub mobile_grid: Vec<(f64, f64)>,
    pub mobile_shape: (usize, usize),
    pub start: (f64, f64),
}

/// Mutable part of the loop.
#[derive(Debug, Clone, PartialEq)]
pub struct SteeringState {
    pub cycle: usize,
    /// Index of the current observation time (`t0 + k * dt_obs`).
    pub k: usize,
    /// Index into the usable mobile positions.
    pub mobile: usize,
    /// `(t, x, y)` of the mobile sensor after every cycle, starting at `t0`.
    pub trajectory: Vec<(f64, f64, f64)>,
    /// ROM output indices of all readings so far and their values.
    pub observed: Vec<usize>,
    pub data: Vec<f64>,
    pub m_map: Option<Vec<f64>>,
    /// Design weights of the last cycle over the usable mobile positions.
    pub last_design: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CycleMetrics {
    pub cycle: usize,
    pub t: f64,
    /// `|m_map - m_true|_M`.
    pub l2_error: f64,
    pub dist_to_source: f64,
    /// Goal variance of the current posterior (ROM surrogate).
    pub goal_variance: f64,
    /// The inversion failed; readings of this cycle were dropped and the
    /// sensor held its position.
    pub flagged: bool,
}

pub struct SteeringRun {
    pub state: SteeringState,
    pub metrics: Vec<CycleMetrics>,
}

pub struct Steering {
    cfg: SteeringConfig,
    transport: Arc<Transport>,
    prior: Arc<BiLaplacianPrior>,
    truth: ScalarField,
    sigma: f64,
    candidates: CandidateSet,
    /// Lattice cell `(i, j)` of each usable mobile position.
    mobile_cells: Vec<(usize, usize)>,
    /// Usable mobile index of every lattice cell.
    lattice_index: Vec<Option<usize>>,
    mobile_shape: (usize, usize),
    n_mobile: usize,
    start: usize,
    rom: RomOperator,
    scaled: DMatrix<f64>,
    /// Noise-free readings at every ROM output.
    clean: Vec<f64>,
    source: (f64, f64),
}

impl Steering {
    /// Builds the offline ROM and the exact readings of the truth.
    pub fn new(problem: SteeringProblem, cfg: SteeringConfig) -> Result<Self> {
        cfg.validate()?;
        if !(problem.sigma > 0.0) {
            return Err(Error::InvalidArgument("steering needs a positive noise sigma".into()));
        }
        let (mnx, mny) = problem.mobile_shape;
        if mnx * mny != problem.mobile_grid.len() {
            return Err(Error::DimensionMismatch {
                context: "mobile grid",
                expected: mnx * mny,
                got: problem.mobile_grid.len(),
            });
        }
        let grid = problem.transport.grid().clone();
        let mut positions = Vec::new();
        let mut mobile_cells = Vec::new();
        let mut lattice_index = vec![None; mnx * mny];
        for (l, &(x, y)) in problem.mobile_grid.iter().enumerate() {
            if grid.dof_at(x, y).is_some() {
                lattice_index[l] = Some(positions.len());
                mobile_cells.push((l % mnx, l / mnx));
                positions.push((x, y));
            }
        }
        let n_mobile = positions.len();
        if n_mobile == 0 {
            return Err(Error::InvalidArgument("no mobile grid point lies in a fluid cell".into()));
        }
        let start = (0..n_mobile)
            .min_by(|&a, &b| {
                let da = dist2(positions[a], problem.start);
                let db = dist2(positions[b], problem.start);
                da.total_cmp(&db)
            })
            .expect("non-empty");
        positions.extend_from_slice(&problem.stationary);

        let n_times = cfg.n_cycles() + cfg.lookahead_steps() + 1;
        let times: Vec<f64> = (0..n_times).map(|k| cfg.t0 + k as f64 * cfg.dt_obs).collect();
        let candidates = CandidateSet::new(&problem.transport, &positions, &times, CandidateMode::SpaceTime)?;
        let forward = ForwardMap::from_candidates(problem.transport.clone(), &candidates)?;
        let clean = forward.apply(problem.truth.values());
        let rank = cfg.rank.min(candidates.n_measurements()).min(grid.n_dof());
        let rom = build_rom(
            &forward,
            &problem.prior,
            rank,
            true,
            RandomizedOptions {
                seed: cfg.seed,
                ..RandomizedOptions::default()
            },
        )?;
        let scaled = rom.scaled_outputs();
        let source = source_point(&problem.truth);
        Ok(Self {
            cfg,
            transport: problem.transport,
            prior: problem.prior,
            truth: problem.truth,
            sigma: problem.sigma,
            candidates,
            mobile_cells,
            lattice_index,
            mobile_shape: problem.mobile_shape,
            n_mobile,
            start,
            rom,
            scaled,
            clean,
            source,
        })
    }

    pub fn config(&self) -> &SteeringConfig {
        &self.cfg
    }

    pub fn mobile_positions(&self) -> &[(f64, f64)] {
        &self.candidates.positions()[..self.n_mobile]
    }

    /// Centroid of the cells where the truth attains its maximum.
    pub fn source(&self) -> (f64, f64) {
        self.source
    }

    pub fn initial_state(&self) -> SteeringState {
        let (x, y) = self.mobile_positions()[self.start];
        SteeringState {
            cycle: 0,
            k: 0,
            mobile: self.start,
            trajectory: vec![(self.cfg.t0, x, y)],
            observed: Vec::new(),
            data: Vec::new(),
            m_map: None,
            last_design: None,
        }
    }

    fn output(&self, k: usize, p: usize) -> usize {
        k * self.candidates.n_positions() + p
    }

    fn time(&self, k: usize) -> f64 {
        self.cfg.t0 + k as f64 * self.cfg.dt_obs
    }

    /// Reading of output `j` with noise drawn from a stream keyed by
    /// `(seed, j)`, so paired runs share the noise of common sensors.
    fn reading(&self, j: usize) -> f64 {
        let clean = self.clean[j];
        if !self.cfg.noise {
            return clean;
        }
        let mut key = [0u8; 32];
        key[..8].copy_from_slice(&self.cfg.seed.to_le_bytes());
        key[8..16].copy_from_slice(&(j as u64).to_le_bytes());
        let mut rng = ChaCha8Rng::from_seed(key);
        let z: f64 = StandardNormal.sample(&mut rng);
        clean + self.sigma * z
    }

    /// One loop iteration at the current time index.
    pub fn cycle(&self, state: &mut SteeringState) -> Result<CycleMetrics> {
        let k = state.k;
        let t = self.time(k);
        let n_pos = self.candidates.n_positions();
        let mut observed = state.observed.clone();
        let mut data = state.data.clone();
        for p in self.n_mobile..n_pos {
            observed.push(self.output(k, p));
        }
        if self.cfg.mobile {
            observed.push(self.output(k, state.mobile));
        }
        for &j in &observed[state.observed.len()..] {
            data.push(self.reading(j));
        }

        let current = self.current_objective(&observed, None)?;
        let m_map = match self.solve_map(&observed, &data, &current) {
            Ok(m) => m,
            Err(Error::NoConvergence { .. } | Error::Breakdown { .. }) => {
                return Ok(self.flagged(state, t));
            }
            Err(e) => return Err(e),
        };
        let map_field = ScalarField::new(self.transport.grid().clone(), m_map.clone())?;
        let goal = self.goal_at(&map_field)?;
        let current = self.current_objective(&observed, Some(&goal))?;
        let goal_variance = current.data_term(&[])?.0;

        let mut next = state.mobile;
        let mut design = None;
        if self.cfg.mobile {
            let w = self.design(k, &observed, &goal)?;
            next = self.choose_move(state.mobile, &w);
            design = Some(w);
        }

        let diff: Vec<f64> = m_map.iter().zip(self.truth.values()).map(|(a, b)| a - b).collect();
        let l2_error = (self.prior.area() * diff.iter().map(|v| v * v).sum::<f64>()).sqrt();
        let pos = self.mobile_positions()[next];
        let metrics = CycleMetrics {
            cycle: state.cycle,
            t,
            l2_error,
            dist_to_source: dist2(pos, self.source).sqrt(),
            goal_variance,
            flagged: false,
        };
        state.observed = observed;
        state.data = data;
        state.m_map = Some(m_map);
        state.last_design = design;
        state.mobile = next;
        state.cycle += 1;
        state.k += 1;
        state.trajectory.push((self.time(state.k), pos.0, pos.1));
        Ok(metrics)
    }

    fn flagged(&self, state: &mut SteeringState, t: f64) -> CycleMetrics {
        let pos = self.mobile_positions()[state.mobile];
        let m = CycleMetrics {
            cycle: state.cycle,
            t,
            l2_error: f64::NAN,
            dist_to_source: dist2(pos, self.source).sqrt(),
            goal_variance: f64::NAN,
            flagged: true,
        };
        state.cycle += 1;
        state.k += 1;
        state.trajectory.push((self.time(state.k), pos.0, pos.1));
        m
    }

    pub fn run(&self) -> Result<SteeringRun> {
        let mut state = self.initial_state();
        let mut metrics = Vec::with_capacity(self.cfg.n_cycles());
        for _ in 0..self.cfg.n_cycles() {
            metrics.push(self.cycle(&mut state)?);
        }
        Ok(SteeringRun { state, metrics })
    }

    /// ROM objective over the readings so far (all weights fixed at 1); the
    /// goal is only used for the reported variance.
    fn current_objective(&self, observed: &[usize], goal: Option<&crate::oed::GoalVector>) -> Result<RomObjective> {
        let placeholder;
        let goal = match goal {
            Some(g) => g,
            None => {
                placeholder = crate::oed::GoalVector {
                    c: vec![1.0; self.prior.n_dof()],
                    qoi: crate::domain::QoiSpec::initial(RegionRect::domain_of(self.transport.grid())),
                };
                &placeholder
            }
        };
        RomObjective::from_scaled_selection(
            &self.rom,
            &self.scaled,
            observed,
            WeightLayout::fixed(vec![1.0; observed.len()]),
            self.sigma,
            goal,
        )
    }

    fn solve_map(&self, observed: &[usize], data: &[f64], current: &RomObjective) -> Result<Vec<f64>> {
        let precond = current.posterior(&[])?;
        if self.cfg.rom_map {
            // H_s m = F^T W~ d + R m_pr with the surrogate F = V S U^T A
            let s2 = 1.0 / (self.sigma * self.sigma);
            let mut y = vec![0.0; self.rom.n_outputs()];
            for (&j, &d) in observed.iter().zip(data) {
                y[j] += s2 * d;
            }
            let area = self.prior.area();
            let mut rhs = self.rom.apply_rom_adjoint(&y)?;
            let rm = self.prior.apply_r(self.prior.mean())?;
            rhs.iter_mut().zip(&rm).for_each(|(r, p)| *r = *r * area + p);
            return precond.apply_hessian_inverse(&rhs);
        }
        let entries: Vec<Measurement> = observed
            .iter()
            .map(|&j| {
                let (k, p) = (j / self.candidates.n_positions(), j % self.candidates.n_positions());
                Measurement {
                    step: self.candidates.steps()[k],
                    dof: self.candidates.dofs()[p],
                }
            })
            .collect();
        let forward = Arc::new(ForwardMap::new(
            self.transport.clone(),
            ObservationPlan::from_entries(entries),
        )?);
        let problem = InverseProblem::new(
            forward,
            self.prior.clone(),
            self.sigma,
            WeightLayout::fixed(vec![1.0; observed.len()]),
        )?;
        let sol = problem.solve_map(data, &DesignWeights::new(Vec::new())?, Some(&precond), self.cfg.cg_tol)?;
        Ok(sol.m)
    }

    /// Square of side `qoi_side` centred on the MAP maximum, clipped to the
    /// domain.
    fn goal_at(&self, m_map: &ScalarField) -> Result<crate::oed::GoalVector> {
        let grid = self.transport.grid();
        let (cx, cy) = grid.dof_center(m_map.argmax());
        let square = RegionRect::square(cx, cy, self.cfg.qoi_side)?;
        let region = square
            .intersect(&RegionRect::domain_of(grid))
            .ok_or_else(|| Error::DegenerateRegion(format!("{square:?} misses the domain")))?;
        goal_vector_initial(grid, &region)
    }

    /// Weights over the usable mobile positions for the look-ahead window,
    /// with past readings and future stationary readings fixed at 1.
    fn design(&self, k: usize, observed: &[usize], goal: &crate::oed::GoalVector) -> Result<Vec<f64>> {
        let n_times = self.candidates.n_times();
        let n_pos = self.candidates.n_positions();
        let mut select = observed.to_vec();
        let mut owner = vec![None; observed.len()];
        let mut fixed = vec![1.0; observed.len()];
        for kk in (k + 1)..=(k + self.cfg.lookahead_steps()).min(n_times - 1) {
            for p in 0..n_pos {
                select.push(self.output(kk, p));
                if p < self.n_mobile {
                    owner.push(Some(p));
                    fixed.push(0.0);
                } else {
                    owner.push(None);
                    fixed.push(1.0);
                }
            }
        }
        let layout = WeightLayout::new(owner, fixed, self.n_mobile)?;
        let obj = RomObjective::from_scaled_selection(&self.rom, &self.scaled, &select, layout, self.sigma, goal)?;
        let res = optimize_design(
            &obj,
            &DesignWeights::constant(self.n_mobile, 0.5)?,
            OptimizeOptions {
                alpha: self.cfg.alpha,
                ..OptimizeOptions::default()
            },
        )?;
        Ok(res.w.into_vec())
    }

    /// Among the current position and its admissible neighbours, the one
    /// with the largest weight; ties go to the one closest to the global
    /// highest-weight position, then to the lowest index.
    fn choose_move(&self, current: usize, w: &[f64]) -> usize {
        let target = (0..w.len()).fold(0, |b, i| if w[i] > w[b] { i } else { b });
        if w[target] <= 0.0 {
            return current;
        }
        let goal = self.mobile_positions()[target];
        let mut best = current;
        for n in self.admissible(current) {
            let better = w[n] > w[best]
                || (w[n] == w[best]
                    && (dist2(self.mobile_positions()[n], goal), n)
                        < (dist2(self.mobile_positions()[best], goal), best));
            if better {
                best = n;
            }
        }
        best
    }

    /// Usable mobile positions one step from `current` (including itself).
    pub fn admissible(&self, current: usize) -> Vec<usize> {
        let (mnx, mny) = self.mobile_shape;
        let (i, j) = self.mobile_cells[current];
        let mut out = Vec::with_capacity(9);
        for dj in -1i64..=1 {
            for di in -1i64..=1 {
                if self.cfg.neighbourhood == 4 && di != 0 && dj != 0 {
                    continue;
                }
                let (ni, nj) = (i as i64 + di, j as i64 + dj);
                if ni < 0 || nj < 0 || ni >= mnx as i64 || nj >= mny as i64 {
                    continue;
                }
                if let Some(n) = self.lattice_index[nj as usize * mnx + ni as usize] {
                    out.push(n);
                }
            }
        }
        out
    }
}

fn dist2(a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)
}

fn source_point(truth: &ScalarField) -> (f64, f64) {
    let peak = truth.values().iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    let grid = truth.grid();
    let (mut sx, mut sy, mut n) = (0.0, 0.0, 0.0);
    for (d, &v) in truth.values().iter().enumerate() {
        if v >= peak - 1e-12 * peak.abs() {
            let (x, y) = grid.dof_center(d);
            sx += x;
            sy += y;
            n += 1.0;
        }
    }
    (sx / n, sy / n)
}

/// `cycle,t,x,y`, one row per trajectory point.
pub fn write_trajectory_csv<W: Write>(mut out: W, state: &SteeringState) -> Result<()> {
    writeln!(out, "cycle,t,x,y")?;
    for (c, (t, x, y)) in state.trajectory.iter().enumerate() {
        writeln!(out, "{c},{t},{x},{y}")?;
    }
    Ok(())
}

/// `cycle,t,l2_error,dist_to_source,goal_variance`, one row per cycle.
pub fn write_metrics_csv<W: Write>(mut out: W, metrics: &[CycleMetrics]) -> Result<()> {
    writeln!(out, "cycle,t,l2_error,dist_to_source,goal_variance")?;
    for m in metrics {
        writeln!(
            out,
            "{},{},{:e},{:e},{:e}",
            m.cycle, m.t, m.l2_error, m.dist_to_source, m.goal_variance
        )?;
    }
    Ok(())
}
