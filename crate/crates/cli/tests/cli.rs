use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use oedsteer::scenario::{ExperimentKind, Scenario};

const SMALL: &str = "\
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
";

const OED: &str = "\
experiment.kind = oed1
oed.region = 0 50 -60 -20
oed.alpha = 0.1
oed.rank = 30
";

const STEER: &str = "\
experiment.kind = steer
steer.t0 = 1
steer.t_end = 2
steer.lookahead = 1
steer.start = 60 60
steer.mobile_grid = 10 8 -100 100 -80 80
steer.alpha = 0.1
steer.rank = 40
";

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_oedsteer"))
}

fn write_scenario(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn run(args: &[&str]) -> Output {
    let out = bin().args(args).output().unwrap();
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn manifest_hash(dir: &Path) -> String {
    let text = fs::read_to_string(dir.join("manifest.txt")).unwrap();
    text.lines()
        .find_map(|l| l.strip_prefix("config_sha256 = "))
        .unwrap()
        .to_string()
}

fn shipped(name: &str) -> Scenario {
    Scenario::load(PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name)).unwrap()
}

#[test]
fn shipped_scenarios_parse() {
    let a = shipped("oed1.scn");
    assert_eq!(a.experiment, ExperimentKind::Oed1);
    assert_eq!(a.kappa, 1.0);
    assert_eq!((a.prior.eta, a.prior.gamma), (8.0, 800.0));
    assert_eq!(a.sigma, 0.005);
    assert_eq!((a.sensors.t_start, a.sensors.t_end, a.sensors.rate), (2.0, 12.0, 5.0));
    assert_eq!(a.sensor_positions().len(), 96);
    let oed = a.oed.unwrap();
    assert_eq!(oed.alpha, 0.1);
    assert_eq!(oed.window, None);

    let b = shipped("oed2.scn");
    assert_eq!(b.experiment, ExperimentKind::Oed2);
    let oed = b.oed.unwrap();
    assert_eq!(oed.alpha, 1.0);
    assert_eq!(oed.window, Some((5.0, 12.0)));

    let c = shipped("steer.scn");
    assert_eq!(c.experiment, ExperimentKind::Steer);
    assert_eq!(c.kappa, 10.0);
    assert!(c.steer.is_some());
}

#[test]
fn forward_writes_snapshots_observations_and_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let sc = write_scenario(tmp.path(), "a.scn", &format!("{SMALL}{OED}"));
    let out = tmp.path().join("fwd");
    run(&["forward", "--scenario", s(&sc), "--out", s(&out), "--stride", "10"]);
    let obs = fs::read_to_string(out.join("observations.csv")).unwrap();
    assert!(obs.starts_with("index,t,x,y,value\n"));
    // 12 sensors, 21 times
    assert_eq!(obs.lines().count(), 1 + 12 * 21);
    let snaps = fs::read_dir(out.join("snapshots")).unwrap().count();
    assert_eq!(snaps, 7);
    let first = fs::read_to_string(out.join("snapshots/state_00000.field")).unwrap();
    assert!(first.starts_with("FIELD 20 16 "));
    let manifest = fs::read_to_string(out.join("manifest.txt")).unwrap();
    assert!(manifest.contains("command = forward"));
    assert!(manifest.contains("seed = 3"));
    assert!(manifest.contains("artifact observations.csv sha256 "));
}

#[test]
fn unknown_key_is_reported_by_name() {
    let tmp = tempfile::tempdir().unwrap();
    let sc = write_scenario(tmp.path(), "bad.scn", &format!("{SMALL}{OED}alpa = 0.3\n"));
    let out = bin()
        .args(["oed", "--scenario", s(&sc), "--out", s(&tmp.path().join("o"))])
        .output()
        .unwrap();
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("unknown key `alpa`"), "{err}");
}

#[test]
fn usage_errors_exit_nonzero() {
    let out = bin().args(["oed"]).output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("--scenario"));
    let out = bin().args(["launch"]).output().unwrap();
    assert!(!out.status.success());
}

#[test]
fn oed_reports_selection_and_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let sc = write_scenario(tmp.path(), "a.scn", &format!("{SMALL}{OED}"));
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    run(&["oed", "--scenario", s(&sc), "--out", s(&a)]);
    run(&["oed", "--scenario", s(&sc), "--out", s(&b)]);
    let da = fs::read(a.join("design.csv")).unwrap();
    assert_eq!(da, fs::read(b.join("design.csv")).unwrap());
    let text = String::from_utf8(da).unwrap();
    assert!(text.starts_with("index,x,y,weight,selected\n"));
    assert_eq!(text.lines().count(), 13);
    let summary = fs::read_to_string(a.join("summary.txt")).unwrap();
    assert!(summary.contains("backend = rom"));
    let selected: usize = summary
        .lines()
        .find_map(|l| l.strip_prefix("selected = "))
        .unwrap()
        .parse()
        .unwrap();
    let marked = text.lines().skip(1).filter(|l| l.ends_with(",1")).count();
    assert_eq!(selected, marked);
    assert!(summary.contains("binary_goal_variance = "));
    assert!(summary.contains("relaxed_goal_variance = "));
}

#[test]
fn overrides_change_the_manifest_hash() {
    let tmp = tempfile::tempdir().unwrap();
    let sc = write_scenario(tmp.path(), "a.scn", &format!("{SMALL}{OED}"));
    let commented = write_scenario(tmp.path(), "b.scn", &format!("# same keys\n{SMALL}{OED}"));
    let changed = write_scenario(tmp.path(), "c.scn", &format!("{SMALL}{OED}").replace("seed = 3", "seed = 4"));
    let hash_of = |p: &Path, extra: &[&str], name: &str| {
        let out = tmp.path().join(name);
        let mut args = vec!["forward", "--scenario", s(p), "--out", s(&out), "--stride", "60"];
        args.extend_from_slice(extra);
        run(&args);
        manifest_hash(&out)
    };
    let base = hash_of(&sc, &[], "h1");
    assert_eq!(base, hash_of(&commented, &[], "h2"));
    assert_ne!(base, hash_of(&changed, &[], "h3"));
    assert_ne!(base, hash_of(&sc, &["--seed", "9"], "h4"));
    assert_eq!(base, hash_of(&sc, &[], "h5"));
}

#[test]
fn seed_override_changes_noise_only() {
    let tmp = tempfile::tempdir().unwrap();
    let sc = write_scenario(tmp.path(), "a.scn", &format!("{SMALL}{OED}"));
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    run(&["forward", "--scenario", s(&sc), "--out", s(&a), "--stride", "60"]);
    run(&["forward", "--scenario", s(&sc), "--out", s(&b), "--stride", "60", "--seed", "99"]);
    assert_ne!(
        fs::read(a.join("observations.csv")).unwrap(),
        fs::read(b.join("observations.csv")).unwrap()
    );
    assert_eq!(
        fs::read(a.join("truth.field")).unwrap(),
        fs::read(b.join("truth.field")).unwrap()
    );
    assert!(fs::read_to_string(b.join("manifest.txt")).unwrap().contains("seed = 99"));
}

#[test]
fn render_is_deterministic_and_uniform_for_constant_fields() {
    let tmp = tempfile::tempdir().unwrap();
    let field = tmp.path().join("c.field");
    fs::write(&field, "FIELD 3 2 0 0 1 1 0\n2 2 2\n2 nan 2\n").unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    run(&["render", "--field", s(&field), "--scale", "1", "--out", s(&a)]);
    run(&["render", "--field", s(&field), "--scale", "1", "--out", s(&b)]);
    let img = fs::read(a.join("c.ppm")).unwrap();
    assert_eq!(img, fs::read(b.join("c.ppm")).unwrap());
    let header = b"P6\n3 2\n255\n";
    assert!(img.starts_with(header));
    let px: Vec<&[u8]> = img[header.len()..].chunks(3).collect();
    assert_eq!(px.len(), 6);
    // row-major from the top: the masked cell sits in the top row
    let fluid: Vec<&[u8]> = px.iter().enumerate().filter(|(i, _)| *i != 1).map(|(_, p)| *p).collect();
    assert!(fluid.iter().all(|p| *p == fluid[0]));
    assert_ne!(px[1], fluid[0]);
}

#[test]
fn steer_writes_paired_metrics() {
    let tmp = tempfile::tempdir().unwrap();
    let sc = write_scenario(tmp.path(), "s.scn", &format!("{SMALL}{STEER}"));
    let (a, b) = (tmp.path().join("mobile"), tmp.path().join("fixed"));
    run(&["steer", "--scenario", s(&sc), "--out", s(&a), "--snapshots"]);
    run(&["steer", "--scenario", s(&sc), "--out", s(&b), "--no-mobile"]);
    for dir in [&a, &b] {
        let metrics = fs::read_to_string(dir.join("metrics.csv")).unwrap();
        assert!(metrics.starts_with("cycle,t,l2_error,dist_to_source,goal_variance\n"));
        assert_eq!(metrics.lines().count(), 1 + 5);
        let traj = fs::read_to_string(dir.join("trajectory.csv")).unwrap();
        assert!(traj.starts_with("cycle,t,x,y\n"));
        assert_eq!(traj.lines().count(), 1 + 6);
    }
    assert_eq!(fs::read_dir(a.join("snapshots")).unwrap().count(), 5);
    let fixed = fs::read_to_string(b.join("trajectory.csv")).unwrap();
    let xy: Vec<String> = fixed
        .lines()
        .skip(1)
        .map(|l| l.splitn(3, ',').nth(2).unwrap().to_string())
        .collect();
    assert!(xy.iter().all(|p| *p == xy[0]));
}

#[test]
fn rom_build_eval_invert_and_variance_run() {
    let tmp = tempfile::tempdir().unwrap();
    let sc = write_scenario(tmp.path(), "a.scn", &format!("{SMALL}{OED}"));
    let rom_dir = tmp.path().join("rom");
    run(&["rom", "build", "--scenario", s(&sc), "--out", s(&rom_dir), "--rank", "40"]);
    assert!(fs::read_to_string(rom_dir.join("rom.txt")).unwrap().starts_with("ROM 40 "));
    let eval = tmp.path().join("eval");
    let out = run(&[
        "rom",
        "eval",
        "--scenario",
        s(&sc),
        "--out",
        s(&eval),
        "--rom",
        s(&rom_dir.join("rom.txt")),
    ]);
    assert!(String::from_utf8_lossy(&out.stdout).contains("relative error"));
    let rows = fs::read_to_string(eval.join("rom_outputs.csv")).unwrap();
    assert_eq!(rows.lines().count(), 1 + 12 * 21);

    let fwd = tmp.path().join("fwd");
    run(&["forward", "--scenario", s(&sc), "--out", s(&fwd), "--stride", "60"]);
    let inv = tmp.path().join("inv");
    run(&[
        "invert",
        "--scenario",
        s(&sc),
        "--out",
        s(&inv),
        "--rank",
        "20",
        "--observations",
        s(&fwd.join("observations.csv")),
    ]);
    assert!(fs::read_to_string(inv.join("posterior.lrpost")).unwrap().starts_with("LRPOST "));
    assert!(fs::read_to_string(inv.join("map.field")).unwrap().starts_with("FIELD 20 16 "));

    let oed = tmp.path().join("oed");
    run(&["oed", "--scenario", s(&sc), "--out", s(&oed)]);
    let var = tmp.path().join("var");
    run(&[
        "variance",
        "--scenario",
        s(&sc),
        "--out",
        s(&var),
        "--rank",
        "20",
        "--design",
        s(&oed.join("design.csv")),
    ]);
    assert!(var.join("variance.field").exists());
    assert!(var.join("prior_variance.field").exists());
}
