use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use sha2::{Digest, Sha256};

use oedsteer::domain::{QoiSpec, ScalarField};
use oedsteer::inversion::{DesignWeights, InverseProblem, LowRankPosterior, WeightLayout, DEFAULT_EIGEN_FLOOR};
use oedsteer::io::{render_ppm, FieldFile};
use oedsteer::numcore::{LinearMap, RandomizedOptions};
use oedsteer::oed::{
    goal_vector_initial, goal_vector_spacetime, optimize_design, threshold_design, write_design_csv, DesignObjective,
    FullObjective, GoalVector, OptimizeOptions, RomObjective,
};
use oedsteer::rom::{build_rom, RomOperator};
use oedsteer::scenario::{OedBackend, Scenario, Setup};
use oedsteer::steering::{write_metrics_csv, write_trajectory_csv};
use oedsteer::transport::{simulate_measurements, solve_forward, ForwardMap, Observations};
use oedsteer::{Error, Result};

#[derive(Parser)]
#[command(name = "oedsteer", version, about = "Sensor placement and steering for contaminant source inversion")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Scenario file.
    #[arg(long)]
    scenario: PathBuf,
    /// Overrides the scenario seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Run the forward model from the true initial condition.
    Forward {
        #[command(flatten)]
        common: Common,
        /// Time steps between saved snapshots.
        #[arg(long, default_value_t = 20)]
        stride: usize,
    },
    /// MAP estimate and low-rank posterior from all candidate sensors.
    Invert {
        #[command(flatten)]
        common: Common,
        /// Observations CSV; simulated from the truth when omitted.
        #[arg(long)]
        observations: Option<PathBuf>,
        #[arg(long, default_value_t = 100)]
        rank: usize,
    },
    /// Sparse goal-oriented sensor design.
    Oed {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        rank: Option<usize>,
        #[arg(long)]
        threshold: Option<f64>,
        /// `rom` or `full`.
        #[arg(long)]
        backend: Option<String>,
    },
    /// Closed-loop steering of the mobile sensor.
    Steer {
        #[command(flatten)]
        common: Common,
        /// Keep the mobile sensor parked (stationary sensors only).
        #[arg(long)]
        no_mobile: bool,
        /// Solve for MAP points with the ROM instead of the full model.
        #[arg(long)]
        rom: bool,
        /// Write the MAP estimate of every cycle as a field file.
        #[arg(long)]
        snapshots: bool,
    },
    /// Build or evaluate a reduced-order model of the forward map.
    Rom {
        #[command(subcommand)]
        action: RomAction,
    },
    /// Pointwise posterior variance for a design.
    Variance {
        #[command(flatten)]
        common: Common,
        /// Design CSV (`index,x,y,weight,selected`); all sensors when omitted.
        #[arg(long)]
        design: Option<PathBuf>,
        #[arg(long, default_value_t = 100)]
        rank: usize,
        /// Hutchinson probes; 0 computes the diagonal exactly.
        #[arg(long, default_value_t = 0)]
        probes: usize,
    },
    /// Render a field file as a PPM image.
    Render {
        #[arg(long)]
        field: PathBuf,
        /// Pixels per cell.
        #[arg(long, default_value_t = 4)]
        scale: usize,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum RomAction {
    Build {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        rank: Option<usize>,
        /// Factor `F` directly instead of `F A^{-1}`.
        #[arg(long)]
        plain: bool,
    },
    Eval {
        #[command(flatten)]
        common: Common,
        /// ROM artifact written by `rom build`.
        #[arg(long)]
        rom: PathBuf,
        /// Initial condition field; the scenario truth when omitted.
        #[arg(long)]
        input: Option<PathBuf>,
    },
}

/// Run record: what was computed from which inputs, and what came out.
struct Manifest {
    command: String,
    out: PathBuf,
    scenario: Option<PathBuf>,
    hasher: Sha256,
    seed: Option<u64>,
    artifacts: Vec<String>,
}

impl Manifest {
    fn new(command: &str, out: &Path) -> Result<Self> {
        fs::create_dir_all(out)?;
        Ok(Self {
            command: command.to_string(),
            out: out.to_path_buf(),
            scenario: None,
            hasher: Sha256::new(),
            seed: None,
            artifacts: Vec::new(),
        })
    }

    fn scenario(&mut self, sc: &Scenario) -> Result<()> {
        self.scenario = Some(sc.path.clone());
        for (k, v) in sc.entries() {
            self.hasher.update(format!("{k}={v}\n"));
        }
        for p in sc.referenced_files() {
            self.input_file(&p)?;
        }
        Ok(())
    }

    fn input_file(&mut self, p: &Path) -> Result<()> {
        self.hasher.update(format!("file:{}\n", p.display()));
        self.hasher.update(fs::read(p)?);
        Ok(())
    }

    /// Command-line values that change the computation.
    fn option(&mut self, key: &str, value: impl std::fmt::Display) {
        self.hasher.update(format!("option.{key}={value}\n"));
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn create(&mut self, name: &str) -> Result<BufWriter<File>> {
        let p = self.path(name);
        if let Some(dir) = p.parent() {
            fs::create_dir_all(dir)?;
        }
        self.artifacts.push(name.to_string());
        Ok(BufWriter::new(File::create(p)?))
    }

    fn write_field(&mut self, name: &str, field: &ScalarField, t: f64) -> Result<()> {
        let mut f = self.create(name)?;
        FieldFile::from_field(field, t).write(&mut f)?;
        f.flush()?;
        Ok(())
    }

    fn finish(self) -> Result<()> {
        let mut out = BufWriter::new(File::create(self.out.join("manifest.txt"))?);
        writeln!(out, "command = {}", self.command)?;
        writeln!(out, "version = {}", env!("CARGO_PKG_VERSION"))?;
        if let Some(p) = &self.scenario {
            writeln!(out, "scenario = {}", p.display())?;
        }
        writeln!(out, "config_sha256 = {}", hex(&self.hasher.finalize()))?;
        if let Some(s) = self.seed {
            writeln!(out, "seed = {s}")?;
        }
        for a in &self.artifacts {
            let bytes = fs::read(self.out.join(a))?;
            writeln!(out, "artifact {a} sha256 {}", hex(&Sha256::digest(&bytes)))?;
        }
        out.flush()?;
        Ok(())
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn load(common: &Common, command: &str) -> Result<(Scenario, Setup, Manifest)> {
    let mut sc = Scenario::load(&common.scenario)?;
    let mut manifest = Manifest::new(command, &common.out)?;
    manifest.scenario(&sc)?;
    if let Some(s) = common.seed {
        sc.seed = s;
        manifest.option("seed", s);
    }
    manifest.seed = Some(sc.seed);
    let setup = sc.build()?;
    Ok((sc, setup, manifest))
}

fn randomized(seed: u64) -> RandomizedOptions {
    RandomizedOptions {
        seed,
        ..RandomizedOptions::default()
    }
}

fn goal_of(sc: &Scenario, setup: &Setup) -> Result<GoalVector> {
    let oed = sc
        .oed
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument("scenario has no oed section".into()))?;
    match oed.window {
        None => goal_vector_initial(&setup.grid, &oed.region),
        Some((a, b)) => goal_vector_spacetime(&setup.transport, &QoiSpec::window(oed.region, a, b, sc.t_final)?),
    }
}

fn forward(common: &Common, stride: usize) -> Result<()> {
    let (sc, s, mut man) = load(common, "forward")?;
    man.option("stride", stride);
    let (traj, _) = solve_forward(&s.transport, &s.truth, &s.candidates, stride)?;
    man.write_field("truth.field", &s.truth, 0.0)?;
    for (k, state) in traj.steps.iter().zip(&traj.states) {
        man.write_field(&format!("snapshots/state_{k:05}.field"), state, s.transport.time_of(*k))?;
    }
    let obs = simulate_measurements(&s.transport, &s.truth, &s.candidates, sc.sigma, sc.seed)?;
    let mut f = man.create("observations.csv")?;
    obs.write_csv(&mut f)?;
    f.flush()?;
    println!(
        "{} dofs, {} steps, {} snapshots, {} readings",
        s.grid.n_dof(),
        s.transport.n_steps(),
        traj.steps.len(),
        obs.len()
    );
    man.finish()
}

fn invert(common: &Common, observations: Option<&Path>, rank: usize) -> Result<()> {
    let (sc, s, mut man) = load(common, "invert")?;
    man.option("rank", rank);
    let obs = match observations {
        Some(p) => {
            man.input_file(p)?;
            let o = Observations::read_csv(BufReader::new(File::open(p)?), sc.sigma, &p.display().to_string())?;
            if o.len() != s.candidates.n_measurements() {
                return Err(Error::InvalidArgument(format!(
                    "{} has {} readings, the scenario defines {}",
                    p.display(),
                    o.len(),
                    s.candidates.n_measurements()
                )));
            }
            o
        }
        None => simulate_measurements(&s.transport, &s.truth, &s.candidates, sc.sigma, sc.seed)?,
    };
    let forward = Arc::new(ForwardMap::from_candidates(s.transport.clone(), &s.candidates)?);
    let problem = InverseProblem::new(forward, s.prior.clone(), sc.sigma, WeightLayout::from_candidates(&s.candidates))?;
    let w = DesignWeights::ones(problem.q());
    let post = problem.build_lowrank(&w, rank, DEFAULT_EIGEN_FLOOR, randomized(sc.seed))?;
    let sol = problem.solve_map(&obs.d, &w, Some(&post), 1e-10)?;
    let m = ScalarField::new(s.grid.clone(), sol.m)?;
    man.write_field("map.field", &m, 0.0)?;
    let mut f = man.create("posterior.lrpost")?;
    post.write(&mut f)?;
    f.flush()?;
    let err: Vec<f64> = m.values().iter().zip(s.truth.values()).map(|(a, b)| a - b).collect();
    let l2 = (s.prior.area() * err.iter().map(|v| v * v).sum::<f64>()).sqrt();
    println!(
        "MAP: {} CG iterations, residual {:.3e}, |m_map - m_true|_M = {l2:.6e}, posterior rank {}",
        sol.iterations,
        sol.residual,
        post.rank()
    );
    man.finish()
}

fn oed(
    common: &Common,
    alpha: Option<f64>,
    rank: Option<usize>,
    threshold: Option<f64>,
    backend: Option<&str>,
) -> Result<()> {
    let (sc, s, mut man) = load(common, "oed")?;
    let mut spec = sc
        .oed
        .clone()
        .ok_or_else(|| Error::InvalidArgument("scenario has no oed section".into()))?;
    if let Some(a) = alpha {
        spec.alpha = a;
        man.option("alpha", a);
    }
    if let Some(r) = rank {
        spec.rank = r;
        man.option("rank", r);
    }
    if let Some(t) = threshold {
        spec.threshold = t;
        man.option("threshold", t);
    }
    if let Some(b) = backend {
        spec.backend = match b {
            "rom" => OedBackend::Rom,
            "full" => OedBackend::Full,
            other => return Err(Error::InvalidArgument(format!("--backend: expected rom or full, got `{other}`"))),
        };
        man.option("backend", b);
    }
    if !(spec.alpha >= 0.0 && spec.alpha.is_finite()) || !(spec.threshold > 0.0 && spec.threshold < 1.0) || spec.rank == 0
    {
        return Err(Error::InvalidArgument(
            "need alpha >= 0, threshold in (0, 1) and a positive rank".into(),
        ));
    }
    let goal = goal_of(&sc, &s)?;
    let layout = WeightLayout::from_candidates(&s.candidates);
    let forward = Arc::new(ForwardMap::from_candidates(s.transport.clone(), &s.candidates)?);
    let q = layout.q();
    let start = Instant::now();
    let objective: Box<dyn DesignObjective> = match spec.backend {
        OedBackend::Rom => {
            let rom = build_rom(forward.as_ref(), &s.prior, spec.rank, true, randomized(sc.seed))?;
            Box::new(RomObjective::new(&rom, layout, sc.sigma, &goal)?)
        }
        OedBackend::Full => {
            let problem = InverseProblem::new(forward, s.prior.clone(), sc.sigma, layout)?;
            Box::new(FullObjective::new(problem, &goal, spec.rank, randomized(sc.seed))?)
        }
    };
    let res = optimize_design(
        objective.as_ref(),
        &DesignWeights::constant(q, 0.5)?,
        OptimizeOptions {
            alpha: spec.alpha,
            ..OptimizeOptions::default()
        },
    )?;
    let binary = threshold_design(&res.w, spec.threshold)?;
    let binary_value = objective.data_term(binary.as_slice())?.0;
    let all_value = objective.data_term(&vec![1.0; q])?.0;
    let prior_value = objective.data_term(&vec![0.0; q])?.0;

    let mut f = man.create("design.csv")?;
    write_design_csv(&mut f, s.candidates.positions(), res.w.as_slice(), spec.threshold)?;
    f.flush()?;
    let mut f = man.create("summary.txt")?;
    writeln!(f, "backend = {}", objective.label())?;
    writeln!(f, "alpha = {}", spec.alpha)?;
    writeln!(f, "rank = {}", spec.rank)?;
    writeln!(f, "threshold = {}", spec.threshold)?;
    writeln!(f, "candidates = {q}")?;
    writeln!(f, "selected = {}", binary.count_selected())?;
    writeln!(f, "iterations = {}", res.iterations)?;
    writeln!(f, "converged = {}", res.converged)?;
    writeln!(f, "relaxed_objective = {:e}", res.value)?;
    writeln!(f, "relaxed_goal_variance = {:e}", res.data)?;
    writeln!(f, "binary_goal_variance = {binary_value:e}")?;
    writeln!(f, "all_sensors_goal_variance = {all_value:e}")?;
    writeln!(f, "prior_goal_variance = {prior_value:e}")?;
    f.flush()?;
    println!(
        "{} backend: {} of {q} sensors selected, goal variance {binary_value:.4e} (all sensors {all_value:.4e}, prior {prior_value:.4e}), {:.1} s",
        objective.label(),
        binary.count_selected(),
        start.elapsed().as_secs_f64()
    );
    man.finish()
}

fn steer(common: &Common, no_mobile: bool, rom: bool, snapshots: bool) -> Result<()> {
    let (sc, s, mut man) = load(common, "steer")?;
    man.option("mobile", !no_mobile);
    man.option("rom_map", rom);
    let steering = sc.steering(&s, !no_mobile, rom)?;
    let mut state = steering.initial_state();
    let mut metrics = Vec::new();
    for _ in 0..steering.config().n_cycles() {
        let m = steering.cycle(&mut state)?;
        if snapshots {
            if let Some(map) = &state.m_map {
                let field = ScalarField::new(s.grid.clone(), map.clone())?;
                man.write_field(&format!("snapshots/map_{:03}.field", m.cycle), &field, m.t)?;
            }
        }
        metrics.push(m);
    }
    let mut f = man.create("trajectory.csv")?;
    write_trajectory_csv(&mut f, &state)?;
    f.flush()?;
    let mut f = man.create("metrics.csv")?;
    write_metrics_csv(&mut f, &metrics)?;
    f.flush()?;
    if let Some(last) = metrics.last() {
        println!(
            "{} cycles: final |m_map - m_true|_M = {:.6e}, distance to source {:.1} m, goal variance {:.4e}",
            metrics.len(),
            last.l2_error,
            last.dist_to_source,
            last.goal_variance
        );
    } else {
        println!("no cycles between t0 and t_end");
    }
    man.finish()
}

fn rom_build(common: &Common, rank: Option<usize>, plain: bool) -> Result<()> {
    let (sc, s, mut man) = load(common, "rom build")?;
    let rank = rank.or(sc.oed.as_ref().map(|o| o.rank)).unwrap_or(100);
    man.option("rank", rank);
    man.option("plain", plain);
    let forward = ForwardMap::from_candidates(s.transport.clone(), &s.candidates)?;
    let start = Instant::now();
    let rom = build_rom(&forward, &s.prior, rank, !plain, randomized(sc.seed))?;
    let mut f = man.create("rom.txt")?;
    rom.write(&mut f)?;
    f.flush()?;
    println!(
        "rank {} ROM of a {} x {} map in {:.1} s, probed tail {:.3e}",
        rom.rank(),
        rom.n_outputs(),
        rom.n_dof(),
        start.elapsed().as_secs_f64(),
        rom.tail_ratio()
    );
    man.finish()
}

fn rom_eval(common: &Common, rom_path: &Path, input: Option<&Path>) -> Result<()> {
    let (_, s, mut man) = load(common, "rom eval")?;
    man.input_file(rom_path)?;
    let rom = RomOperator::read(
        BufReader::new(File::open(rom_path)?),
        s.prior.clone(),
        &rom_path.display().to_string(),
    )?;
    let m = match input {
        Some(p) => {
            man.input_file(p)?;
            let name = p.display().to_string();
            FieldFile::read(BufReader::new(File::open(p)?), &name)?.to_field(&s.grid, &name)?
        }
        None => s.truth.clone(),
    };
    let forward = ForwardMap::from_candidates(s.transport.clone(), &s.candidates)?;
    if rom.n_outputs() != forward.nrows() {
        return Err(Error::InvalidArgument(format!(
            "ROM has {} outputs, the scenario defines {}",
            rom.n_outputs(),
            forward.nrows()
        )));
    }
    let t = Instant::now();
    let reduced = rom.apply_rom(m.values())?;
    let t_rom = t.elapsed().as_secs_f64();
    let t = Instant::now();
    let full = forward.apply(m.values());
    let t_full = t.elapsed().as_secs_f64();
    let num: f64 = reduced.iter().zip(&full).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let den: f64 = full.iter().map(|v| v * v).sum::<f64>().sqrt();
    let mut f = man.create("rom_outputs.csv")?;
    writeln!(f, "index,t,x,y,rom,full")?;
    for (j, (r, v)) in reduced.iter().zip(&full).enumerate() {
        let (t, x, y) = s.candidates.measurement(j);
        writeln!(f, "{j},{t},{x},{y},{r:e},{v:e}")?;
    }
    f.flush()?;
    println!(
        "relative error {:.3e}; ROM {:.3} ms, full {:.3} ms",
        if den > 0.0 { num / den } else { num },
        1e3 * t_rom,
        1e3 * t_full
    );
    man.finish()
}

fn read_design(path: &Path, q: usize) -> Result<Vec<f64>> {
    let text = fs::read_to_string(path)?;
    let name = path.display().to_string();
    let mut w = Vec::new();
    for (n, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split(',').map(str::trim).collect();
        let bad = |msg: String| Error::Parse {
            path: name.clone(),
            line: n + 1,
            msg,
        };
        if cols.len() != 5 {
            return Err(bad(format!("expected 5 columns, got {}", cols.len())));
        }
        let v: f64 = cols[3].parse().map_err(|e| bad(format!("bad weight '{}': {e}", cols[3])))?;
        w.push(v);
    }
    if w.len() != q {
        return Err(Error::InvalidArgument(format!("{name} has {} weights, the scenario has {q} sensors", w.len())));
    }
    Ok(w)
}

fn variance(common: &Common, design: Option<&Path>, rank: usize, probes: usize) -> Result<()> {
    let (sc, s, mut man) = load(common, "variance")?;
    man.option("rank", rank);
    man.option("probes", probes);
    let layout = WeightLayout::from_candidates(&s.candidates);
    let w = match design {
        Some(p) => {
            man.input_file(p)?;
            DesignWeights::new(read_design(p, layout.q())?)?
        }
        None => DesignWeights::ones(layout.q()),
    };
    let forward = Arc::new(ForwardMap::from_candidates(s.transport.clone(), &s.candidates)?);
    let problem = InverseProblem::new(forward, s.prior.clone(), sc.sigma, layout)?;
    let post: LowRankPosterior = problem.build_lowrank(&w, rank, DEFAULT_EIGEN_FLOOR, randomized(sc.seed))?;
    let var = if probes == 0 {
        post.variance_exact()
    } else {
        let est = post.pointwise_variance(probes, sc.seed)?;
        println!("Hutchinson relative standard error {:.3e}", est.rel_error);
        est.values
    };
    let prior_var = s.prior.variance().to_vec();
    let ratio: f64 = var.iter().zip(&prior_var).map(|(a, b)| a / b).sum::<f64>() / var.len() as f64;
    man.write_field("variance.field", &ScalarField::new(s.grid.clone(), var)?, 0.0)?;
    man.write_field("prior_variance.field", &ScalarField::new(s.grid.clone(), prior_var)?, 0.0)?;
    println!("posterior rank {}, mean posterior/prior variance ratio {ratio:.4}", post.rank());
    man.finish()
}

fn render(field: &Path, scale: usize, out: &Path) -> Result<()> {
    let mut man = Manifest::new("render", out)?;
    man.input_file(field)?;
    man.option("scale", scale);
    let ff = FieldFile::read(BufReader::new(File::open(field)?), &field.display().to_string())?;
    let stem = field.file_stem().and_then(|s| s.to_str()).unwrap_or("field");
    let name = format!("{stem}.ppm");
    let mut f = man.create(&name)?;
    render_ppm(&ff, scale, &mut f)?;
    f.flush()?;
    println!("wrote {}", man.path(&name).display());
    man.finish()
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Forward { common, stride } => forward(&common, stride),
        Command::Invert {
            common,
            observations,
            rank,
        } => invert(&common, observations.as_deref(), rank),
        Command::Oed {
            common,
            alpha,
            rank,
            threshold,
            backend,
        } => oed(&common, alpha, rank, threshold, backend.as_deref()),
        Command::Steer {
            common,
            no_mobile,
            rom,
            snapshots,
        } => steer(&common, no_mobile, rom, snapshots),
        Command::Rom { action } => match action {
            RomAction::Build { common, rank, plain } => rom_build(&common, rank, plain),
            RomAction::Eval { common, rom, input } => rom_eval(&common, &rom, input.as_deref()),
        },
        Command::Variance {
            common,
            design,
            rank,
            probes,
        } => variance(&common, design.as_deref(), rank, probes),
        Command::Render { field, scale, out } => render(&field, scale, &out),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
