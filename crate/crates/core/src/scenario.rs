//! Scenario files: flat `section.key = value` lines, `#` comments.
//!
//! Lists of tuples separate entries with `;` and numbers with whitespace,
//! e.g. `truth.blobs = -100 -80 25; 75 -80 25`. Every key is validated
//! before anything is computed, and unknown keys are errors.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use crate::domain::{
    build_grid, gaussian_blob, potential_flow_wind, BlobSpec, Grid, GridSpec, InflowSide, RegionRect, ScalarField,
    WindField,
};
use crate::error::{Error, Result};
use crate::io::{read_wind, FieldFile};
use crate::prior::{BiLaplacianPrior, DEFAULT_ETA, DEFAULT_GAMMA};
use crate::steering::{Steering, SteeringConfig, SteeringProblem};
use crate::transport::{CandidateMode, CandidateSet, Transport, TransportConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExperimentKind {
    /// Initial-condition QoI over a region.
    Oed1,
    /// Space-time QoI over a region and time window.
    Oed2,
    /// Closed-loop steering of one mobile sensor.
    Steer,
}

#[derive(Debug, Clone, PartialEq)]
pub enum WindSource {
    Potential { speed: f64, inflow: InflowSide },
    File(PathBuf),
}

/// `nx * ny` points at the centres of a regular subdivision of `region`,
/// row-major from the south-west corner.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Lattice {
    pub nx: usize,
    pub ny: usize,
    pub region: RegionRect,
}

impl Lattice {
    pub fn points(&self) -> Vec<(f64, f64)> {
        let r = &self.region;
        let (hx, hy) = ((r.xmax - r.xmin) / self.nx as f64, (r.ymax - r.ymin) / self.ny as f64);
        let mut out = Vec::with_capacity(self.nx * self.ny);
        for j in 0..self.ny {
            for i in 0..self.nx {
                out.push((r.xmin + (i as f64 + 0.5) * hx, r.ymin + (j as f64 + 0.5) * hy));
            }
        }
        out
    }

    pub fn spacing(&self) -> (f64, f64) {
        let r = &self.region;
        ((r.xmax - r.xmin) / self.nx as f64, (r.ymax - r.ymin) / self.ny as f64)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SensorLayout {
    Lattice(Lattice),
    List(Vec<(f64, f64)>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SensorSpec {
    pub layout: SensorLayout,
    pub t_start: f64,
    /// Observation cutoff; readings after it are ignored even when the
    /// simulation runs longer.
    pub t_end: f64,
    /// Sampling rate in Hz.
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PriorSpec {
    pub eta: f64,
    pub gamma: f64,
    pub beta: Option<f64>,
    pub mean_file: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OedBackend {
    Rom,
    Full,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OedSpec {
    pub region: RegionRect,
    /// QoI time window (space-time goal); `None` targets the initial
    /// condition.
    pub window: Option<(f64, f64)>,
    pub alpha: f64,
    pub rank: usize,
    pub threshold: f64,
    pub backend: OedBackend,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SteerSpec {
    pub dt_obs: f64,
    pub lookahead: f64,
    pub qoi_side: f64,
    pub t0: f64,
    pub t_end: f64,
    pub start: (f64, f64),
    pub mobile_grid: Lattice,
    /// 4 or 8.
    pub neighbourhood: usize,
    pub alpha: f64,
    pub rank: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub path: PathBuf,
    pub seed: u64,
    pub grid: GridSpec,
    pub obstacles: Vec<RegionRect>,
    pub wind: WindSource,
    pub kappa: f64,
    pub dt: f64,
    pub t_final: f64,
    pub blobs: Vec<BlobSpec>,
    pub blob_cap: f64,
    pub blob_eps: f64,
    pub sensors: SensorSpec,
    pub sigma: f64,
    pub prior: PriorSpec,
    pub experiment: ExperimentKind,
    pub oed: Option<OedSpec>,
    pub steer: Option<SteerSpec>,
    entries: BTreeMap<String, String>,
}

const COMMON_KEYS: &[&str] = &[
    "seed",
    "grid.nx",
    "grid.ny",
    "grid.x0",
    "grid.y0",
    "grid.width",
    "grid.height",
    "grid.obstacles",
    "wind.source",
    "wind.speed",
    "wind.inflow",
    "wind.file",
    "transport.kappa",
    "transport.dt",
    "transport.t_final",
    "truth.blobs",
    "truth.cap",
    "truth.eps",
    "sensors.layout",
    "sensors.lattice",
    "sensors.positions",
    "sensors.t_start",
    "sensors.t_end",
    "sensors.rate",
    "noise.sigma",
    "prior.eta",
    "prior.gamma",
    "prior.beta",
    "prior.mean_file",
    "experiment.kind",
];

const OED_KEYS: &[&str] = &[
    "oed.region",
    "oed.t_start",
    "oed.t_end",
    "oed.alpha",
    "oed.rank",
    "oed.threshold",
    "oed.backend",
];

const STEER_KEYS: &[&str] = &[
    "steer.dt_obs",
    "steer.lookahead",
    "steer.qoi_side",
    "steer.t0",
    "steer.t_end",
    "steer.start",
    "steer.mobile_grid",
    "steer.neighbourhood",
    "steer.alpha",
    "steer.rank",
];

/// Collects every problem with the file before reporting.
struct Reader<'a> {
    entries: &'a BTreeMap<String, String>,
    errors: Vec<String>,
}

impl Reader<'_> {
    fn raw(&mut self, key: &str) -> Option<String> {
        match self.entries.get(key) {
            Some(v) => Some(v.clone()),
            None => {
                self.errors.push(format!("missing key `{key}`"));
                None
            }
        }
    }

    fn parse<T: std::str::FromStr>(&mut self, key: &str, v: &str) -> Option<T> {
        match v.parse::<T>() {
            Ok(x) => Some(x),
            Err(_) => {
                self.errors.push(format!("`{key}`: cannot parse `{v}`"));
                None
            }
        }
    }

    fn num<T: std::str::FromStr>(&mut self, key: &str) -> Option<T> {
        let v = self.raw(key)?;
        self.parse(key, &v)
    }

    fn num_or<T: std::str::FromStr>(&mut self, key: &str, default: T) -> Option<T> {
        match self.entries.get(key) {
            Some(v) => {
                let v = v.clone();
                self.parse(key, &v)
            }
            None => Some(default),
        }
    }

    fn opt_num<T: std::str::FromStr>(&mut self, key: &str) -> Option<Option<T>> {
        match self.entries.get(key) {
            Some(v) => {
                let v = v.clone();
                self.parse(key, &v).map(Some)
            }
            None => Some(None),
        }
    }

    /// `;`-separated tuples of `arity` numbers; an empty value is an empty
    /// list.
    fn tuples(&mut self, key: &str, arity: usize, required: bool) -> Option<Vec<Vec<f64>>> {
        let v = match self.entries.get(key) {
            Some(v) => v.clone(),
            None if required => {
                self.errors.push(format!("missing key `{key}`"));
                return None;
            }
            None => return Some(Vec::new()),
        };
        let mut out = Vec::new();
        for part in v.split(';').map(str::trim).filter(|p| !p.is_empty()) {
            let nums: std::result::Result<Vec<f64>, _> = part.split_whitespace().map(str::parse::<f64>).collect();
            match nums {
                Ok(n) if n.len() == arity => out.push(n),
                _ => {
                    self.errors
                        .push(format!("`{key}`: expected {arity} numbers per entry, got `{part}`"));
                    return None;
                }
            }
        }
        Some(out)
    }

    fn tuple(&mut self, key: &str, arity: usize) -> Option<Vec<f64>> {
        let t = self.tuples(key, arity, true)?;
        if t.len() != 1 {
            self.errors.push(format!("`{key}`: expected exactly one entry of {arity} numbers"));
            return None;
        }
        t.into_iter().next()
    }

    fn rect(&mut self, key: &str, v: &[f64]) -> Option<RegionRect> {
        match RegionRect::new(v[0], v[1], v[2], v[3]) {
            Ok(r) => Some(r),
            Err(e) => {
                self.errors.push(format!("`{key}`: {e}"));
                None
            }
        }
    }

    fn lattice(&mut self, key: &str) -> Option<Lattice> {
        let v = self.tuple(key, 6)?;
        if v[0] < 1.0 || v[1] < 1.0 || v[0].fract() != 0.0 || v[1].fract() != 0.0 {
            self.errors
                .push(format!("`{key}`: lattice counts must be positive integers"));
            return None;
        }
        let region = self.rect(key, &v[2..])?;
        Some(Lattice {
            nx: v[0] as usize,
            ny: v[1] as usize,
            region,
        })
    }

    fn check(&mut self, ok: bool, msg: impl Into<String>) {
        if !ok {
            self.errors.push(msg.into());
        }
    }
}

/// Split a scenario file into `key -> value`, rejecting syntax errors and
/// duplicate keys.
pub fn parse_entries(text: &str, path: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (k, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(Error::Parse {
                path: path.into(),
                line: k + 1,
                msg: format!("expected `key = value`, got `{line}`"),
            });
        };
        let key = key.trim();
        if key.is_empty() || key.contains(char::is_whitespace) {
            return Err(Error::Parse {
                path: path.into(),
                line: k + 1,
                msg: format!("bad key `{key}`"),
            });
        }
        if out.insert(key.to_string(), value.trim().to_string()).is_some() {
            return Err(Error::Parse {
                path: path.into(),
                line: k + 1,
                msg: format!("duplicate key `{key}`"),
            });
        }
    }
    Ok(out)
}

impl Scenario {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)?;
        Self::parse(&text, path)
    }

    /// Parse and validate; relative file references resolve against the
    /// directory of `path`.
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let entries = parse_entries(text, &path.display().to_string())?;
        let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let mut r = Reader {
            entries: &entries,
            errors: Vec::new(),
        };

        let kind = match r.raw("experiment.kind").as_deref() {
            Some("oed1") => Some(ExperimentKind::Oed1),
            Some("oed2") => Some(ExperimentKind::Oed2),
            Some("steer") => Some(ExperimentKind::Steer),
            Some(other) => {
                r.errors.push(format!(
                    "`experiment.kind`: expected oed1, oed2 or steer, got `{other}`"
                ));
                None
            }
            None => None,
        };
        for key in entries.keys() {
            let allowed = COMMON_KEYS.contains(&key.as_str())
                || (OED_KEYS.contains(&key.as_str()) && kind != Some(ExperimentKind::Steer))
                || (STEER_KEYS.contains(&key.as_str()) && kind == Some(ExperimentKind::Steer));
            if !allowed {
                r.errors.push(format!("unknown key `{key}`"));
            }
        }

        let seed = r.num::<u64>("seed");
        let nx = r.num::<usize>("grid.nx");
        let ny = r.num::<usize>("grid.ny");
        let x0 = r.num::<f64>("grid.x0");
        let y0 = r.num::<f64>("grid.y0");
        let width = r.num::<f64>("grid.width");
        let height = r.num::<f64>("grid.height");
        let obstacles: Vec<RegionRect> = r
            .tuples("grid.obstacles", 4, false)
            .unwrap_or_default()
            .iter()
            .filter_map(|v| r.rect("grid.obstacles", v))
            .collect();
        if let (Some(nx), Some(ny), Some(w), Some(h)) = (nx, ny, width, height) {
            r.check(nx >= 4 && ny >= 4, "`grid.nx`/`grid.ny` must be at least 4");
            r.check(w > 0.0 && h > 0.0, "`grid.width`/`grid.height` must be positive");
        }

        let wind = match r.raw("wind.source").as_deref() {
            Some("potential") => {
                let speed = r.num::<f64>("wind.speed");
                let inflow = r.num::<InflowSide>("wind.inflow");
                if r.entries.contains_key("wind.file") {
                    r.errors.push("`wind.file` is only used with `wind.source = file`".into());
                }
                if let Some(s) = speed {
                    r.check(s > 0.0 && s.is_finite(), "`wind.speed` must be positive");
                }
                speed.zip(inflow).map(|(speed, inflow)| WindSource::Potential { speed, inflow })
            }
            Some("file") => {
                for k in ["wind.speed", "wind.inflow"] {
                    if r.entries.contains_key(k) {
                        r.errors.push(format!("`{k}` is only used with `wind.source = potential`"));
                    }
                }
                r.raw("wind.file").map(|f| WindSource::File(dir.join(f)))
            }
            Some(other) => {
                r.errors
                    .push(format!("`wind.source`: expected potential or file, got `{other}`"));
                None
            }
            None => None,
        };
        if let Some(WindSource::File(p)) = &wind {
            r.check(p.is_file(), format!("`wind.file`: {} does not exist", p.display()));
        }

        let kappa = r.num::<f64>("transport.kappa");
        let dt = r.num::<f64>("transport.dt");
        let t_final = r.num::<f64>("transport.t_final");
        if let Some(k) = kappa {
            r.check(k > 0.0, "`transport.kappa` must be positive");
        }
        if let (Some(dt), Some(t)) = (dt, t_final) {
            r.check(dt > 0.0 && t > 0.0, "`transport.dt` and `transport.t_final` must be positive");
        }

        let blobs: Vec<BlobSpec> = r
            .tuples("truth.blobs", 3, true)
            .unwrap_or_default()
            .into_iter()
            .map(|v| BlobSpec {
                x: v[0],
                y: v[1],
                radius: v[2],
            })
            .collect();
        let blob_cap = r.num_or("truth.cap", 0.5);
        let blob_eps = r.num_or("truth.eps", 0.001);
        r.check(blobs.iter().all(|b| b.radius > 0.0), "`truth.blobs`: radii must be positive");
        if let (Some(c), Some(e)) = (blob_cap, blob_eps) {
            r.check(c > 0.0 && e > 0.0 && e < 1.0, "`truth.cap` > 0 and 0 < `truth.eps` < 1 required");
        }

        let layout = match r.raw("sensors.layout").as_deref() {
            Some("lattice") => {
                if r.entries.contains_key("sensors.positions") {
                    r.errors.push("`sensors.positions` is only used with `sensors.layout = list`".into());
                }
                r.lattice("sensors.lattice").map(SensorLayout::Lattice)
            }
            Some("list") => {
                if r.entries.contains_key("sensors.lattice") {
                    r.errors.push("`sensors.lattice` is only used with `sensors.layout = lattice`".into());
                }
                let pts: Option<Vec<(f64, f64)>> = r
                    .tuples("sensors.positions", 2, true)
                    .map(|v| v.into_iter().map(|p| (p[0], p[1])).collect());
                if let Some(p) = &pts {
                    r.check(!p.is_empty(), "`sensors.positions` is empty");
                }
                pts.map(SensorLayout::List)
            }
            Some(other) => {
                r.errors
                    .push(format!("`sensors.layout`: expected lattice or list, got `{other}`"));
                None
            }
            None => None,
        };
        let s_start = r.num::<f64>("sensors.t_start");
        let s_end = r.num::<f64>("sensors.t_end");
        let rate = r.num::<f64>("sensors.rate");
        if let (Some(a), Some(b), Some(rate)) = (s_start, s_end, rate) {
            r.check(rate > 0.0, "`sensors.rate` must be positive");
            r.check(0.0 <= a && a <= b, "need 0 <= `sensors.t_start` <= `sensors.t_end`");
            if let Some(t) = t_final {
                r.check(b <= t + 1e-9, "`sensors.t_end` exceeds `transport.t_final`");
            }
        }

        let sigma = r.num::<f64>("noise.sigma");
        if let Some(s) = sigma {
            r.check(s > 0.0, "`noise.sigma` must be positive");
        }
        let eta = r.num_or("prior.eta", DEFAULT_ETA);
        let gamma = r.num_or("prior.gamma", DEFAULT_GAMMA);
        let beta = r.opt_num::<f64>("prior.beta");
        let mean_file = r.entries.get("prior.mean_file").map(|f| dir.join(f));
        if let (Some(e), Some(g)) = (eta, gamma) {
            r.check(e > 0.0 && g > 0.0, "`prior.eta` and `prior.gamma` must be positive");
        }
        if let Some(Some(b)) = beta {
            r.check(b >= 0.0, "`prior.beta` must be non-negative");
        }
        if let Some(p) = &mean_file {
            r.check(p.is_file(), format!("`prior.mean_file`: {} does not exist", p.display()));
        }

        let oed = match kind {
            Some(ExperimentKind::Oed1 | ExperimentKind::Oed2) => read_oed(&mut r, kind, t_final),
            _ => None,
        };
        let steer = match kind {
            Some(ExperimentKind::Steer) => read_steer(&mut r, t_final),
            _ => None,
        };

        if !r.errors.is_empty() {
            return Err(Error::Validation(r.errors));
        }
        let scenario = Scenario {
            path: path.to_path_buf(),
            seed: seed.unwrap(),
            grid: GridSpec {
                nx: nx.unwrap(),
                ny: ny.unwrap(),
                x0: x0.unwrap(),
                y0: y0.unwrap(),
                width: width.unwrap(),
                height: height.unwrap(),
            },
            obstacles,
            wind: wind.unwrap(),
            kappa: kappa.unwrap(),
            dt: dt.unwrap(),
            t_final: t_final.unwrap(),
            blobs,
            blob_cap: blob_cap.unwrap(),
            blob_eps: blob_eps.unwrap(),
            sensors: SensorSpec {
                layout: layout.unwrap(),
                t_start: s_start.unwrap(),
                t_end: s_end.unwrap(),
                rate: rate.unwrap(),
            },
            sigma: sigma.unwrap(),
            prior: PriorSpec {
                eta: eta.unwrap(),
                gamma: gamma.unwrap(),
                beta: beta.unwrap(),
                mean_file,
            },
            experiment: kind.unwrap(),
            oed,
            steer,
            entries,
        };
        scenario.check_geometry()?;
        Ok(scenario)
    }

    /// Validation that needs the grid: obstacles, sensor and region
    /// placement.
    fn check_geometry(&self) -> Result<()> {
        let mut errors = Vec::new();
        let grid = match build_grid(self.grid, &self.obstacles) {
            Ok(g) => g,
            Err(e) => return Err(Error::Validation(vec![format!("grid: {e}")])),
        };
        for (k, (x, y)) in self.sensor_positions().into_iter().enumerate() {
            if grid.dof_at(x, y).is_none() {
                errors.push(format!("sensor {k} at ({x}, {y}) is not in a fluid cell"));
            }
        }
        for b in &self.blobs {
            if grid.locate(b.x, b.y).is_none() {
                errors.push(format!("blob centre ({}, {}) is outside the domain", b.x, b.y));
            }
        }
        if let Some(oed) = &self.oed {
            let g = Arc::new(grid.clone());
            if crate::domain::region_indicator(&g, &oed.region).is_err() {
                errors.push(format!("`oed.region` {:?} contains no fluid cell", oed.region));
            }
        }
        if let Some(s) = &self.steer {
            if grid.dof_at(s.start.0, s.start.1).is_none() {
                errors.push(format!("`steer.start` {:?} is not in a fluid cell", s.start));
            }
            let pts = s.mobile_grid.points();
            if !pts.iter().any(|&(x, y)| grid.dof_at(x, y).is_some()) {
                errors.push("`steer.mobile_grid` has no point in a fluid cell".into());
            }
        }
        if errors.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(errors))
        }
    }

    /// All keys with their raw values, sorted by key.
    pub fn entries(&self) -> &BTreeMap<String, String> {
        &self.entries
    }

    /// Files the scenario reads besides itself.
    pub fn referenced_files(&self) -> Vec<PathBuf> {
        let mut out = Vec::new();
        if let WindSource::File(p) = &self.wind {
            out.push(p.clone());
        }
        if let Some(p) = &self.prior.mean_file {
            out.push(p.clone());
        }
        out
    }

    pub fn sensor_positions(&self) -> Vec<(f64, f64)> {
        match &self.sensors.layout {
            SensorLayout::Lattice(l) => l.points(),
            SensorLayout::List(p) => p.clone(),
        }
    }

    pub fn build(&self) -> Result<Setup> {
        let grid = Arc::new(build_grid(self.grid, &self.obstacles)?);
        let wind = Arc::new(match &self.wind {
            WindSource::Potential { speed, inflow } => potential_flow_wind(grid.clone(), *speed, *inflow)?,
            WindSource::File(p) => {
                let f = fs::File::open(p)?;
                read_wind(std::io::BufReader::new(f), grid.clone(), &p.display().to_string())?
            }
        });
        let transport = Arc::new(Transport::new(TransportConfig::new(
            self.kappa,
            self.dt,
            self.t_final,
            wind.clone(),
        )?)?);
        let mut prior = BiLaplacianPrior::new(grid.clone(), self.prior.eta, self.prior.gamma, self.prior.beta)?;
        if let Some(p) = &self.prior.mean_file {
            let f = fs::File::open(p)?;
            let ff = FieldFile::read(std::io::BufReader::new(f), &p.display().to_string())?;
            prior = prior.with_mean(&ff.to_field(&grid, &p.display().to_string())?)?;
        }
        let mut truth = vec![0.0; grid.n_dof()];
        for b in &self.blobs {
            let f = gaussian_blob(&grid, (b.x, b.y), b.radius, self.blob_cap, self.blob_eps)?;
            truth.iter_mut().zip(f.values()).for_each(|(t, v)| *t += v);
        }
        let truth = ScalarField::new(grid.clone(), truth)?;
        let candidates = CandidateSet::from_schedule(
            &transport,
            &self.sensor_positions(),
            self.sensors.t_start,
            self.sensors.t_end,
            1.0 / self.sensors.rate,
            CandidateMode::Stationary,
        )?;
        Ok(Setup {
            grid,
            wind,
            transport,
            prior: Arc::new(prior),
            truth,
            candidates,
        })
    }
}

fn read_oed(r: &mut Reader<'_>, kind: Option<ExperimentKind>, t_final: Option<f64>) -> Option<OedSpec> {
    let region = r.tuple("oed.region", 4).and_then(|v| r.rect("oed.region", &v));
    let alpha = r.num::<f64>("oed.alpha");
    let rank = r.num_or::<usize>("oed.rank", 100);
    let threshold = r.num_or::<f64>("oed.threshold", 0.5);
    let backend = match r.entries.get("oed.backend").map(String::as_str) {
        None | Some("rom") => Some(OedBackend::Rom),
        Some("full") => Some(OedBackend::Full),
        Some(other) => {
            r.errors.push(format!("`oed.backend`: expected rom or full, got `{other}`"));
            None
        }
    };
    if let Some(a) = alpha {
        r.check(a >= 0.0 && a.is_finite(), "`oed.alpha` must be non-negative");
    }
    if let Some(t) = threshold {
        r.check(t > 0.0 && t < 1.0, "`oed.threshold` must lie in (0, 1)");
    }
    if let Some(k) = rank {
        r.check(k > 0, "`oed.rank` must be positive");
    }
    let window = if kind == Some(ExperimentKind::Oed2) {
        let a = r.num::<f64>("oed.t_start");
        let b = r.num::<f64>("oed.t_end");
        if let (Some(a), Some(b), Some(t)) = (a, b, t_final) {
            r.check(
                0.0 <= a && a <= b && b <= t + 1e-9,
                "need 0 <= `oed.t_start` <= `oed.t_end` <= `transport.t_final`",
            );
        }
        Some(a.zip(b))
    } else {
        for k in ["oed.t_start", "oed.t_end"] {
            if r.entries.contains_key(k) {
                r.errors.push(format!("`{k}` is only used with `experiment.kind = oed2`"));
            }
        }
        Some(None)
    };
    Some(OedSpec {
        region: region?,
        window: window?,
        alpha: alpha?,
        rank: rank?,
        threshold: threshold?,
        backend: backend?,
    })
}

fn read_steer(r: &mut Reader<'_>, t_final: Option<f64>) -> Option<SteerSpec> {
    let dt_obs = r.num_or("steer.dt_obs", 0.2);
    let lookahead = r.num_or("steer.lookahead", 2.0);
    let qoi_side = r.num_or("steer.qoi_side", 40.0);
    let t0 = r.num::<f64>("steer.t0");
    let t_end = r.num::<f64>("steer.t_end");
    let start = r.tuple("steer.start", 2).map(|v| (v[0], v[1]));
    let mobile_grid = r.lattice("steer.mobile_grid");
    let neighbourhood = r.num_or::<usize>("steer.neighbourhood", 8);
    let alpha = r.num::<f64>("steer.alpha");
    let rank = r.num_or::<usize>("steer.rank", 100);
    if let (Some(d), Some(l), Some(q)) = (dt_obs, lookahead, qoi_side) {
        r.check(d > 0.0, "`steer.dt_obs` must be positive");
        r.check(l >= d, "`steer.lookahead` must be at least `steer.dt_obs`");
        r.check(q > 0.0, "`steer.qoi_side` must be positive");
    }
    if let (Some(a), Some(b), Some(t)) = (t0, t_end, t_final) {
        r.check(0.0 <= a && a <= b, "need 0 <= `steer.t0` <= `steer.t_end`");
        if let Some(l) = lookahead {
            r.check(b + l <= t + 1e-9, "`steer.t_end` + `steer.lookahead` exceeds `transport.t_final`");
        }
    }
    if let Some(n) = neighbourhood {
        r.check(n == 4 || n == 8, "`steer.neighbourhood` must be 4 or 8");
    }
    if let Some(a) = alpha {
        r.check(a >= 0.0 && a.is_finite(), "`steer.alpha` must be non-negative");
    }
    if let Some(k) = rank {
        r.check(k > 0, "`steer.rank` must be positive");
    }
    Some(SteerSpec {
        dt_obs: dt_obs?,
        lookahead: lookahead?,
        qoi_side: qoi_side?,
        t0: t0?,
        t_end: t_end?,
        start: start?,
        mobile_grid: mobile_grid?,
        neighbourhood: neighbourhood?,
        alpha: alpha?,
        rank: rank?,
    })
}

impl Scenario {
    /// Steering loop of a `steer` scenario. With `mobile = false` the
    /// mobile sensor stays parked and only the stationary sensors read;
    /// `rom_map` solves for the MAP point with the surrogate.
    pub fn steering(&self, setup: &Setup, mobile: bool, rom_map: bool) -> Result<Steering> {
        let st = self
            .steer
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument("scenario has no steering section".into()))?;
        let problem = SteeringProblem {
            transport: setup.transport.clone(),
            prior: setup.prior.clone(),
            truth: setup.truth.clone(),
            sigma: self.sigma,
            stationary: self.sensor_positions(),
            mobile_grid: st.mobile_grid.points(),
            mobile_shape: (st.mobile_grid.nx, st.mobile_grid.ny),
            start: st.start,
        };
        let cfg = SteeringConfig {
            dt_obs: st.dt_obs,
            lookahead: st.lookahead,
            qoi_side: st.qoi_side,
            t0: st.t0,
            t_end: st.t_end,
            neighbourhood: st.neighbourhood,
            alpha: st.alpha,
            rank: st.rank,
            mobile,
            noise: true,
            seed: self.seed,
            cg_tol: 1e-8,
            rom_map,
        };
        Steering::new(problem, cfg)
    }
}

/// Objects assembled from a scenario.
pub struct Setup {
    pub grid: Arc<Grid>,
    pub wind: Arc<WindField>,
    pub transport: Arc<Transport>,
    pub prior: Arc<BiLaplacianPrior>,
    pub truth: ScalarField,
    /// Stationary sensors on the configured schedule.
    pub candidates: CandidateSet,
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = "\
seed = 3
grid.nx = 20
grid.ny = 16
grid.x0 = -100
grid.y0 = -80
grid.width = 200
grid.height = 160
grid.obstacles = -20 0 -20 10; 30 50 5 25
wind.source = potential
wind.speed = 5
wind.inflow = south
transport.kappa = 1
transport.dt = 0.1
transport.t_final = 6
truth.blobs = -50 -40 20
sensors.layout = lattice
sensors.lattice = 4 3 -100 100 -80 80
sensors.t_start = 1
sensors.t_end = 5
sensors.rate = 5
noise.sigma = 0.01
experiment.kind = oed1
oed.region = 0 50 -60 -20
oed.alpha = 0.1
";

    fn parse(text: &str) -> Result<Scenario> {
        Scenario::parse(text, Path::new("test.scn"))
    }

    #[test]
    fn parses_and_builds() {
        let s = parse(BASE).unwrap();
        assert_eq!(s.experiment, ExperimentKind::Oed1);
        assert_eq!(s.prior.eta, DEFAULT_ETA);
        let oed = s.oed.as_ref().unwrap();
        assert_eq!(oed.threshold, 0.5);
        assert_eq!(oed.window, None);
        let setup = s.build().unwrap();
        assert_eq!(setup.candidates.n_positions(), 12);
        assert_eq!(setup.candidates.n_times(), 21);
        let peak = setup.truth.values().iter().fold(0.0_f64, |m, &v| m.max(v));
        assert!(peak > 0.4 && peak <= 0.5);
    }

    #[test]
    fn unknown_key_is_named() {
        let err = parse(&format!("{BASE}oed.alpa = 1\n")).unwrap_err();
        match err {
            Error::Validation(v) => assert!(v.iter().any(|m| m.contains("`oed.alpa`")), "{v:?}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn all_violations_are_listed() {
        let text = BASE
            .replace("noise.sigma = 0.01", "noise.sigma = -1")
            .replace("oed.alpha = 0.1", "oed.alpha = x")
            .replace("sensors.rate = 5\n", "");
        match parse(&text).unwrap_err() {
            Error::Validation(v) => {
                assert_eq!(v.len(), 3, "{v:?}");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn syntax_errors_report_the_line() {
        match parse("seed = 1\nthis is not a pair\n").unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
        assert!(matches!(parse("seed = 1\nseed = 2\n"), Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn steer_keys_are_rejected_for_oed() {
        assert!(parse(&format!("{BASE}steer.t0 = 2\n")).is_err());
    }

    #[test]
    fn sensor_inside_obstacle_is_rejected() {
        let text = BASE.replace(
            "sensors.layout = lattice\nsensors.lattice = 4 3 -100 100 -80 80",
            "sensors.layout = list\nsensors.positions = -10 0; 0 40",
        );
        match parse(&text).unwrap_err() {
            Error::Validation(v) => assert_eq!(v.len(), 1, "{v:?}"),
            other => panic!("{other:?}"),
        }
    }
}
