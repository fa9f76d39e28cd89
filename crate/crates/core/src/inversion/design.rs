use crate::error::{check_len, Error, Result};
use crate::transport::CandidateSet;

/// Relaxed sensor weights in `[0, 1]^q`.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignWeights(Vec<f64>);

impl DesignWeights {
    pub fn new(w: Vec<f64>) -> Result<Self> {
        if let Some((i, v)) = w.iter().enumerate().find(|(_, v)| !(**v >= 0.0 && **v <= 1.0)) {
            return Err(Error::InvalidArgument(format!(
                "design weight {i} = {v} outside [0, 1]"
            )));
        }
        Ok(Self(w))
    }

    pub fn ones(q: usize) -> Self {
        Self(vec![1.0; q])
    }

    pub fn zeros(q: usize) -> Self {
        Self(vec![0.0; q])
    }

    pub fn constant(q: usize, value: f64) -> Result<Self> {
        Self::new(vec![value; q])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// `w_i >= threshold -> 1`, else 0.
    pub fn threshold(&self, threshold: f64) -> Result<Self> {
        if !(threshold > 0.0 && threshold < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "threshold must lie in (0, 1), got {threshold}"
            )));
        }
        Ok(Self(
            self.0
                .iter()
                .map(|&v| if v >= threshold { 1.0 } else { 0.0 })
                .collect(),
        ))
    }

    /// Number of weights equal to one.
    pub fn count_selected(&self) -> usize {
        self.0.iter().filter(|&&v| v == 1.0).count()
    }
}

/// Maps design weights to per-measurement weights.
///
/// Measurement `j` is either controlled by design coordinate `owner[j]` or
/// carries the fixed weight `fixed[j]` (e.g. past readings frozen at 1).
#[derive(Debug, Clone, PartialEq)]
pub struct WeightLayout {
    owner: Vec<Option<usize>>,
    fixed: Vec<f64>,
    q: usize,
}

impl WeightLayout {
    pub fn new(owner: Vec<Option<usize>>, fixed: Vec<f64>, q: usize) -> Result<Self> {
        check_len("weight layout fixed weights", owner.len(), fixed.len())?;
        if let Some(g) = owner.iter().flatten().find(|&&g| g >= q) {
            return Err(Error::InvalidArgument(format!(
                "measurement owned by design coordinate {g} of {q}"
            )));
        }
        Ok(Self { owner, fixed, q })
    }

    pub fn from_candidates(cs: &CandidateSet) -> Self {
        let n = cs.n_measurements();
        Self {
            owner: (0..n).map(|j| Some(cs.group_of(j))).collect(),
            fixed: vec![0.0; n],
            q: cs.q(),
        }
    }

    /// Every measurement carries a fixed weight; no design coordinates.
    pub fn fixed(weights: Vec<f64>) -> Self {
        Self {
            owner: vec![None; weights.len()],
            fixed: weights,
            q: 0,
        }
    }

    /// `self` followed by `other`, with `other`'s design coordinates shifted
    /// after those of `self`.
    pub fn concat(&self, other: &WeightLayout) -> WeightLayout {
        let mut owner = self.owner.clone();
        owner.extend(other.owner.iter().map(|o| o.map(|g| g + self.q)));
        let mut fixed = self.fixed.clone();
        fixed.extend_from_slice(&other.fixed);
        WeightLayout {
            owner,
            fixed,
            q: self.q + other.q,
        }
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn n_measurements(&self) -> usize {
        self.owner.len()
    }

    pub fn owner(&self, j: usize) -> Option<usize> {
        self.owner[j]
    }

    pub fn expand(&self, w: &[f64]) -> Result<Vec<f64>> {
        check_len("design weights", self.q, w.len())?;
        Ok(self
            .owner
            .iter()
            .zip(&self.fixed)
            .map(|(o, f)| o.map_or(*f, |g| w[g]))
            .collect())
    }

    /// Sum per-measurement values over the measurements each coordinate owns.
    pub fn reduce(&self, per_measurement: &[f64]) -> Result<Vec<f64>> {
        check_len("per-measurement values", self.n_measurements(), per_measurement.len())?;
        let mut out = vec![0.0; self.q];
        for (o, v) in self.owner.iter().zip(per_measurement) {
            if let Some(g) = o {
                out[*g] += v;
            }
        }
        Ok(out)
    }

    /// Measurement indices owned by each design coordinate.
    pub fn groups(&self) -> Vec<Vec<usize>> {
        let mut groups = vec![Vec::new(); self.q];
        for (j, o) in self.owner.iter().enumerate() {
            if let Some(g) = o {
                groups[*g].push(j);
            }
        }
        groups
    }

    /// Measurements with a fixed nonzero weight.
    pub fn fixed_measurements(&self) -> Vec<(usize, f64)> {
        self.owner
            .iter()
            .zip(&self.fixed)
            .enumerate()
            .filter(|(_, (o, f))| o.is_none() && **f != 0.0)
            .map(|(j, (_, f))| (j, *f))
            .collect()
    }
}
