use std::io::{BufRead, Write};

use super::operator::Transport;
use crate::error::{check_len, Error, Result};

/// How design weights map to measurements.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CandidateMode {
    /// One weight per position, shared by all observation times.
    Stationary,
    /// One weight per (time, position) pair.
    SpaceTime,
}

/// Candidate sensor positions and observation times.
///
/// Positions are snapped to the centre of their fluid cell and times to the
/// nearest time-grid point. Measurement `j` reads position `j % n_pos` at
/// time index `j / n_pos`.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateSet {
    positions: Vec<(f64, f64)>,
    dofs: Vec<usize>,
    times: Vec<f64>,
    steps: Vec<usize>,
    mode: CandidateMode,
}

impl CandidateSet {
    pub fn new(
        transport: &Transport,
        positions: &[(f64, f64)],
        times: &[f64],
        mode: CandidateMode,
    ) -> Result<Self> {
        if positions.is_empty() || times.is_empty() {
            return Err(Error::InvalidArgument(
                "candidate set needs at least one position and one time".into(),
            ));
        }
        let grid = transport.grid();
        let mut dofs = Vec::with_capacity(positions.len());
        let mut snapped = Vec::with_capacity(positions.len());
        for &(x, y) in positions {
            let d = grid.dof_at(x, y).ok_or_else(|| {
                Error::InvalidArgument(format!("candidate ({x}, {y}) is not in a fluid cell"))
            })?;
            dofs.push(d);
            snapped.push(grid.dof_center(d));
        }
        let mut steps = Vec::with_capacity(times.len());
        for &t in times {
            let k = transport.step_of(t).ok_or_else(|| {
                Error::InvalidArgument(format!(
                    "observation time {t} outside [0, {}]",
                    transport.config().t_final
                ))
            })?;
            if steps.last().is_some_and(|&last| k <= last) {
                return Err(Error::InvalidArgument(format!(
                    "observation times must increase on the time grid (at t = {t})"
                )));
            }
            steps.push(k);
        }
        let times = steps.iter().map(|&k| transport.time_of(k)).collect();
        Ok(Self {
            positions: snapped,
            dofs,
            times,
            steps,
            mode,
        })
    }

    /// Regular schedule `t_start, t_start + interval, ...` up to `t_end`.
    /// Both ends are inclusive.
    pub fn from_schedule(
        transport: &Transport,
        positions: &[(f64, f64)],
        t_start: f64,
        t_end: f64,
        interval: f64,
        mode: CandidateMode,
    ) -> Result<Self> {
        if !(interval > 0.0) || !(t_start <= t_end) {
            return Err(Error::InvalidArgument(format!(
                "bad observation schedule [{t_start}, {t_end}] every {interval}"
            )));
        }
        let count = ((t_end - t_start) / interval + 1e-9).floor() as usize + 1;
        let times: Vec<f64> = (0..count).map(|i| t_start + i as f64 * interval).collect();
        Self::new(transport, positions, &times, mode)
    }

    pub fn positions(&self) -> &[(f64, f64)] {
        &self.positions
    }

    pub fn dofs(&self) -> &[usize] {
        &self.dofs
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn steps(&self) -> &[usize] {
        &self.steps
    }

    pub fn mode(&self) -> CandidateMode {
        self.mode
    }

    pub fn n_positions(&self) -> usize {
        self.positions.len()
    }

    pub fn n_times(&self) -> usize {
        self.times.len()
    }

    pub fn n_measurements(&self) -> usize {
        self.positions.len() * self.times.len()
    }

    /// Number of design weights.
    pub fn q(&self) -> usize {
        match self.mode {
            CandidateMode::Stationary => self.n_positions(),
            CandidateMode::SpaceTime => self.n_measurements(),
        }
    }

    /// `(t, x, y)` of measurement `j`.
    pub fn measurement(&self, j: usize) -> (f64, f64, f64) {
        let (x, y) = self.positions[j % self.n_positions()];
        (self.times[j / self.n_positions()], x, y)
    }

    /// Design index that controls measurement `j`.
    pub fn group_of(&self, j: usize) -> usize {
        match self.mode {
            CandidateMode::Stationary => j % self.n_positions(),
            CandidateMode::SpaceTime => j,
        }
    }

    /// Measurement indices controlled by each design weight.
    pub fn groups(&self) -> Vec<Vec<usize>> {
        let mut groups = vec![Vec::new(); self.q()];
        for j in 0..self.n_measurements() {
            groups[self.group_of(j)].push(j);
        }
        groups
    }

    /// Per-measurement weights from design weights.
    pub fn expand_weights(&self, w: &[f64]) -> Result<Vec<f64>> {
        check_len("design weights", self.q(), w.len())?;
        Ok((0..self.n_measurements()).map(|j| w[self.group_of(j)]).collect())
    }

    /// Sum per-measurement values into design coordinates.
    pub fn reduce(&self, per_measurement: &[f64]) -> Result<Vec<f64>> {
        check_len("per-measurement values", self.n_measurements(), per_measurement.len())?;
        let mut out = vec![0.0; self.q()];
        for (j, v) in per_measurement.iter().enumerate() {
            out[self.group_of(j)] += v;
        }
        Ok(out)
    }

    pub fn plan(&self) -> ObservationPlan {
        let mut entries = Vec::with_capacity(self.n_measurements());
        for &step in &self.steps {
            for &dof in &self.dofs {
                entries.push(Measurement { step, dof });
            }
        }
        ObservationPlan::from_entries(entries)
    }
}

/// A point reading of cell `dof` after `step` time steps.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Measurement {
    pub step: usize,
    pub dof: usize,
}

/// An ordered list of measurements, indexed by time step for fast sweeps.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationPlan {
    entries: Vec<Measurement>,
    by_step: Vec<Vec<(usize, usize)>>,
}

impl ObservationPlan {
    pub fn from_entries(entries: Vec<Measurement>) -> Self {
        let last = entries.iter().map(|m| m.step).max().map_or(0, |s| s + 1);
        let mut by_step = vec![Vec::new(); last];
        for (j, m) in entries.iter().enumerate() {
            by_step[m.step].push((j, m.dof));
        }
        Self { entries, by_step }
    }

    pub fn entries(&self) -> &[Measurement] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// One past the latest step read, 0 for an empty plan.
    pub fn horizon(&self) -> usize {
        self.by_step.len()
    }

    /// `(measurement index, dof)` pairs read at `step`.
    pub fn at_step(&self, step: usize) -> &[(usize, usize)] {
        self.by_step.get(step).map_or(&[], |v| v.as_slice())
    }

    /// Measurements of `self` followed by those of `other`.
    pub fn concat(&self, other: &ObservationPlan) -> ObservationPlan {
        let mut entries = self.entries.clone();
        entries.extend_from_slice(&other.entries);
        Self::from_entries(entries)
    }
}

/// Noisy data with the time and place of every reading.
#[derive(Debug, Clone, PartialEq)]
pub struct Observations {
    pub times: Vec<f64>,
    pub positions: Vec<(f64, f64)>,
    pub d: Vec<f64>,
    pub sigma: f64,
}

impl Observations {
    pub fn new(cs: &CandidateSet, d: Vec<f64>, sigma: f64) -> Result<Self> {
        check_len("observations", cs.n_measurements(), d.len())?;
        if !(sigma >= 0.0) {
            return Err(Error::InvalidArgument(format!("noise sigma must be non-negative, got {sigma}")));
        }
        if d.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("observations contain non-finite values".into()));
        }
        let (mut times, mut positions) = (Vec::new(), Vec::new());
        for j in 0..cs.n_measurements() {
            let (t, x, y) = cs.measurement(j);
            times.push(t);
            positions.push((x, y));
        }
        Ok(Self {
            times,
            positions,
            d,
            sigma,
        })
    }

    pub fn len(&self) -> usize {
        self.d.len()
    }

    pub fn is_empty(&self) -> bool {
        self.d.is_empty()
    }

    /// CSV with header `index,t,x,y,value`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "index,t,x,y,value")?;
        for (j, v) in self.d.iter().enumerate() {
            let (x, y) = self.positions[j];
            writeln!(out, "{j},{},{x},{y},{v:e}", self.times[j])?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(input: R, sigma: f64, path: &str) -> Result<Self> {
        let parse_err = |line: usize, msg: String| Error::Parse {
            path: path.to_string(),
            line,
            msg,
        };
        let mut obs = Self {
            times: Vec::new(),
            positions: Vec::new(),
            d: Vec::new(),
            sigma,
        };
        for (n, line) in input.lines().enumerate() {
            let line = line?;
            if n == 0 {
                if line.trim() != "index,t,x,y,value" {
                    return Err(parse_err(1, format!("unexpected header '{line}'")));
                }
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split(',').map(str::trim).collect();
            if cols.len() != 5 {
                return Err(parse_err(n + 1, format!("expected 5 columns, got {}", cols.len())));
            }
            let num = |s: &str| {
                s.parse::<f64>()
                    .map_err(|e| parse_err(n + 1, format!("bad number '{s}': {e}")))
            };
            let idx: usize = cols[0]
                .parse()
                .map_err(|e| parse_err(n + 1, format!("bad index '{}': {e}", cols[0])))?;
            if idx != obs.d.len() {
                return Err(parse_err(n + 1, format!("index {idx} out of order")));
            }
            obs.times.push(num(cols[1])?);
            obs.positions.push((num(cols[2])?, num(cols[3])?));
            obs.d.push(num(cols[4])?);
        }
        Ok(obs)
    }
}
