//! `springmor` command-line interface.
//!
//! Exit codes: 0 success, 2 invalid input or configuration, 3 runtime failure.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use springmor::dynamics::{rollout, DynamicState};
use springmor::io;
use springmor::metrics::{bench_levels, evaluate};
use springmor::scenes::{controller_script, make_observation, synth_scene, SynthOptions};
use springmor::training::{gradcheck, train, GradcheckOptions, ReduceStrategy, Strategy};
use springmor::{seeded_rng, ControllerScript, Error, SceneKind, TrainConfig, TrainedModel};

#[derive(Parser)]
#[command(name = "springmor", version, about = "Differentiable spring-mass simulation with learned model order reduction")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic scene, its hidden parameters and ground-truth rollout.
    Synth(SynthArgs),
    /// Sample a partial, optionally noisy observation of a trajectory.
    Observe(ObserveArgs),
    /// Train a reduced hierarchy against an observation.
    Train(TrainArgs),
    /// Roll out one level of a model (or a parameter file at full order).
    Rollout(RolloutArgs),
    /// Score a predicted trajectory against the ground truth.
    Eval(EvalArgs),
    /// Replace the first assignment of a model with a baseline reduction.
    Reduce(ReduceArgs),
    /// Verify training gradients against central finite differences.
    Gradcheck(GradcheckArgs),
    /// Time rollouts of every level of a model.
    Bench(BenchArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value = "rope")]
    kind: SceneKind,
    #[arg(long, default_value_t = 50)]
    nodes: usize,
    #[arg(long, default_value_t = 60)]
    frames: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Uniform stiffness (N/m) instead of per-edge random values.
    #[arg(long)]
    stiffness: Option<f64>,
    #[arg(long)]
    d_dp: Option<f64>,
    #[arg(long)]
    d_dr: Option<f64>,
    /// Scale of the controller motion.
    #[arg(long, default_value_t = 1.0)]
    amplitude: f64,
    #[arg(long, default_value_t = 667)]
    substeps: usize,
    /// Output directory; receives scene.json, truth_params.json, truth_traj.json.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ObserveArgs {
    #[arg(long)]
    traj: PathBuf,
    #[arg(long)]
    scene: PathBuf,
    /// Fraction of nodes observed.
    #[arg(long, default_value_t = 0.7)]
    fraction: f64,
    /// Standard deviation of the position noise (m).
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    scene: PathBuf,
    #[arg(long)]
    obs: PathBuf,
    /// JSON file with a full training configuration; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 3)]
    levels: usize,
    /// Node fractions of the reduced levels, relative to the full model.
    #[arg(long, value_delimiter = ',', default_value = "0.6,0.4,0.3")]
    ratios: Vec<f64>,
    #[arg(long, default_value_t = 80)]
    epochs: usize,
    /// Epochs per commit window.
    #[arg(long, default_value_t = 20)]
    commit: usize,
    #[arg(long, default_value_t = 1)]
    k_model: usize,
    #[arg(long, default_value_t = 5)]
    k_col: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    /// Learning rate of the base physical parameters (log scale).
    #[arg(long, default_value_t = 0.2)]
    lr_phys: f64,
    #[arg(long, default_value_t = 0.9)]
    lr_decay: f64,
    #[arg(long, default_value_t = 10.0)]
    grad_clip: f64,
    #[arg(long, default_value_t = 667)]
    substeps: usize,
    /// Observed frames used for training (default: all).
    #[arg(long)]
    frames: Option<usize>,
    /// Assignment strategy: learned or random.
    #[arg(long, default_value = "learned")]
    strategy: String,
    /// Also supervise every committed level above the current one.
    #[arg(long)]
    supervise_all: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Written when training fails (default: <out>.diagnostics.json).
    #[arg(long)]
    diagnostics: Option<PathBuf>,
}

#[derive(Args)]
struct RolloutArgs {
    #[arg(long, conflicts_with = "params")]
    model: Option<PathBuf>,
    /// Full-order parameters instead of a model (level 0 only).
    #[arg(long)]
    params: Option<PathBuf>,
    #[arg(long)]
    scene: PathBuf,
    #[arg(long, default_value_t = 0)]
    level: usize,
    #[arg(long, default_value_t = 60)]
    frames: usize,
    /// Observation whose controller script drives the rollout (default:
    /// the standard lift-and-sway motion).
    #[arg(long)]
    controls: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    truth: PathBuf,
    #[arg(long)]
    obs: PathBuf,
    /// Fraction of frames counted as reconstruction.
    #[arg(long, default_value_t = 0.5)]
    split: f64,
    /// Model of a reduced prediction, to map observed nodes onto its level.
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    level: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ReduceArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    scene: PathBuf,
    /// learned, random or gramian.
    #[arg(long, default_value = "learned")]
    strategy: ReduceStrategy,
    #[arg(long, default_value_t = 0.6)]
    ratio: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output model (default: overwrite the input).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long)]
    scene: PathBuf,
    #[arg(long, default_value_t = 10)]
    frames: usize,
    #[arg(long, default_value_t = 20)]
    samples: usize,
    #[arg(long, default_value_t = 1e-5)]
    eps: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 667)]
    substeps: usize,
    /// Scale the rollout backward rule by this factor (negative control).
    #[arg(long, hide = true)]
    corrupt_backward: Option<f64>,
    /// Report file (default: stdout only).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    scene: PathBuf,
    #[arg(long, default_value_t = 60)]
    frames: usize,
    #[arg(long, default_value_t = 5)]
    repeats: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Failure of a command, carrying its exit code.
struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure { code: if e.is_input_error() { 2 } else { 3 }, message: e.to_string() }
    }
}

fn input_error(message: impl Into<String>) -> Failure {
    Failure { code: 2, message: message.into() }
}

type CmdResult = Result<(), Failure>;

fn print_json<T: Serialize>(value: &T) -> CmdResult {
    let line = io::to_json_string(value)?;
    let mut out = std::io::stdout().lock();
    out.write_all(line.as_bytes()).and_then(|_| out.flush()).map_err(Error::from)?;
    Ok(())
}

fn synth(a: SynthArgs) -> CmdResult {
    let mut opts = SynthOptions::new(a.kind, a.nodes, a.frames);
    opts.stiffness = a.stiffness;
    opts.d_dp = a.d_dp;
    opts.d_dr = a.d_dr;
    opts.amplitude = a.amplitude;
    opts.config.substeps = a.substeps;
    let mut rng = seeded_rng(a.seed);
    let out = synth_scene(&opts, &mut rng)?;
    std::fs::create_dir_all(&a.out).map_err(Error::from)?;
    io::save_scene(&a.out.join("scene.json"), &out.scene)?;
    io::save_params(&a.out.join("truth_params.json"), &out.truth)?;
    io::save_traj(&a.out.join("truth_traj.json"), &out.trajectory)?;
    eprintln!(
        "{:?} scene: {} nodes, {} edges, {} frames -> {}",
        a.kind,
        out.scene.graph.node_count(),
        out.scene.graph.edge_count(),
        a.frames,
        a.out.display()
    );
    Ok(())
}

fn observe(a: ObserveArgs) -> CmdResult {
    let scene = io::load_scene(&a.scene)?;
    let traj = io::load_traj(&a.traj)?;
    if traj.nodes() != scene.graph.node_count() {
        return Err(input_error("trajectory and scene node counts differ"));
    }
    let script = traj.script_for(&scene.graph.indices_of(springmor::NodeType::Controller));
    let mut rng = seeded_rng(a.seed);
    let obs = make_observation(&traj, &script, a.fraction, a.noise, &mut rng)?;
    io::save_obs(&a.out, &obs)?;
    Ok(())
}

fn train_config(a: &TrainArgs) -> Result<TrainConfig, Failure> {
    let mut cfg = match &a.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(Error::from)?;
            serde_json::from_str(&text).map_err(|e| input_error(format!("{}: {e}", p.display())))?
        }
        None => TrainConfig::default(),
    };
    cfg.levels = a.levels;
    cfg.ratios = a.ratios.clone();
    cfg.epochs = a.epochs;
    cfg.commit = a.commit;
    cfg.k_model = a.k_model;
    cfg.k_col = a.k_col;
    cfg.lr = a.lr;
    cfg.lr_phys = a.lr_phys;
    cfg.lr_decay = a.lr_decay;
    cfg.grad_clip = a.grad_clip;
    cfg.substeps = a.substeps;
    cfg.frames = a.frames.or(cfg.frames);
    cfg.supervise_all_committed |= a.supervise_all;
    cfg.seed = a.seed;
    cfg.strategy = match a.strategy.as_str() {
        "learned" => Strategy::Learned,
        "random" => Strategy::Random,
        s => return Err(input_error(format!("unknown strategy '{s}' (learned or random)"))),
    };
    cfg.validate()?;
    Ok(cfg)
}

#[derive(Serialize)]
struct Diagnostics<'a> {
    error: String,
    epochs_completed: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    last_epoch: Option<&'a springmor::training::EpochLog>,
    config: &'a TrainConfig,
}

fn train_cmd(a: TrainArgs) -> CmdResult {
    let cfg = train_config(&a)?;
    let scene = io::load_scene(&a.scene)?;
    let obs = io::load_obs(&a.obs)?;
    let mut logs = Vec::new();
    let mut emit_err = None;
    let res = train(&scene, &obs, &cfg, &mut |l| {
        if let Err(e) = print_json(l) {
            emit_err.get_or_insert(e);
        }
        logs.push(l.clone());
    });
    if let Some(e) = emit_err {
        return Err(e);
    }
    match res {
        Ok(model) => {
            io::save_model(&a.out, &model)?;
            Ok(())
        }
        Err(e) if e.is_input_error() => Err(e.into()),
        Err(e) => {
            let path = a.diagnostics.clone().unwrap_or_else(|| {
                let mut p = a.out.clone().into_os_string();
                p.push(".diagnostics.json");
                PathBuf::from(p)
            });
            let d = Diagnostics { error: e.to_string(), epochs_completed: logs.len(), last_epoch: logs.last(), config: &cfg };
            // Plain serde_json: a diverged loss may be non-finite (written as null).
            let text = serde_json::to_string(&d).map_err(|e| Failure { code: 3, message: e.to_string() })?;
            std::fs::write(&path, text + "\n").map_err(Error::from)?;
            Err(Failure { code: 3, message: format!("{e}; diagnostics written to {}", path.display()) })
        }
    }
}

fn load_script(path: Option<&Path>, scene: &springmor::Scene, frames: usize) -> Result<ControllerScript, Failure> {
    match path {
        Some(p) => {
            let obs = io::load_obs(p)?;
            if obs.frames() < frames {
                return Err(input_error(format!("controls cover {} frames, {frames} requested", obs.frames())));
            }
            Ok(obs.script)
        }
        None => Ok(controller_script(&scene.graph, frames, scene.config.dt, 1.0)),
    }
}

fn rollout_cmd(a: RolloutArgs) -> CmdResult {
    let scene = io::load_scene(&a.scene)?;
    let script = load_script(a.controls.as_deref(), &scene, a.frames)?;
    let (graph, params, script) = match (&a.model, &a.params) {
        (Some(m), None) => {
            let model = io::load_model(m)?;
            if a.level > model.levels() {
                return Err(input_error(format!("level {} exceeds the model's {} levels", a.level, model.levels())));
            }
            model.level_system(&scene, &script, a.level)?
        }
        (None, Some(p)) => {
            if a.level != 0 {
                return Err(input_error("a parameter file only describes level 0"));
            }
            (scene.graph.clone(), io::load_params(p)?, script)
        }
        _ => return Err(input_error("give exactly one of --model or --params")),
    };
    let z0 = DynamicState::at_rest(graph.positions0.clone());
    let t = Instant::now();
    let traj = rollout(&z0, &script, &graph, &params, &scene.config, a.frames)?;
    let secs = t.elapsed().as_secs_f64().max(1e-9);
    io::save_traj(&a.out, &traj)?;
    #[derive(Serialize)]
    struct Fps {
        fps: f64,
    }
    print_json(&Fps { fps: a.frames as f64 / secs })
}

fn eval_cmd(a: EvalArgs) -> CmdResult {
    let pred = io::load_traj(&a.pred)?;
    let truth = io::load_traj(&a.truth)?;
    let obs = io::load_obs(&a.obs)?;
    let map = match &a.model {
        Some(m) => {
            let model = io::load_model(m)?;
            if a.level > model.levels() {
                return Err(input_error(format!("level {} exceeds the model's {} levels", a.level, model.levels())));
            }
            Some(model.level_map(a.level))
        }
        None if a.level != 0 => return Err(input_error("--level needs --model")),
        None => None,
    };
    let report = evaluate(&pred, &truth, &obs, map.as_deref(), a.split)?;
    io::write_json(&a.out, &report)?;
    eprintln!("{:<16} {:>12} {:>12}", "window", "chamfer", "tracking");
    eprintln!("{:<16} {:>12.4e} {:>12.4e}", "all", report.mean.cd, report.mean.track);
    for (name, w) in [("reconstruction", &report.reconstruction), ("prediction", &report.prediction)] {
        if let Some(w) = w {
            eprintln!("{:<16} {:>12.4e} {:>12.4e}", name, w.cd, w.track);
        }
    }
    Ok(())
}

fn reduce_cmd(a: ReduceArgs) -> CmdResult {
    let model: TrainedModel = io::load_model(&a.model)?;
    let scene = io::load_scene(&a.scene)?;
    let mut rng = seeded_rng(a.seed);
    let (reduced, report) = model.reduce(&scene, a.strategy, a.ratio, &mut rng)?;
    if let Some(r) = report {
        if r.regularized {
            log::warn!("the system was not stable; the Gramian used a regularised copy");
        }
        eprintln!("Gramian solved in {} iterations, relative residual {:.2e}", r.iterations, r.residual);
    }
    io::save_model(a.out.as_deref().unwrap_or(&a.model), &reduced)?;
    Ok(())
}

fn gradcheck_cmd(a: GradcheckArgs) -> CmdResult {
    let scene = io::load_scene(&a.scene)?;
    let opts = GradcheckOptions {
        frames: a.frames,
        samples: a.samples,
        eps: a.eps,
        seed: a.seed,
        substeps: a.substeps,
        corrupt_backward: a.corrupt_backward,
    };
    let report = gradcheck(&scene, &opts)?;
    if let Some(p) = &a.out {
        io::write_json(p, &report)?;
    }
    print_json(&report)?;
    eprintln!("{:<24} {:>6} {:>14} {:>14} {:>10}", "parameter", "index", "analytic", "numeric", "rel.err");
    for s in &report.fd.samples {
        let flag = if s.non_smooth { " (non-smooth)" } else { "" };
        eprintln!("{:<24} {:>6} {:>14.6e} {:>14.6e} {:>10.2e}{flag}", s.name, s.index, s.analytic, s.numeric, s.rel_error);
    }
    eprintln!("max relative error {:.3e} (tolerance {:.0e})", report.fd.max_rel_error, report.tolerance);
    if report.passed {
        Ok(())
    } else {
        Err(Failure { code: 3, message: "gradient check failed".into() })
    }
}

fn bench_cmd(a: BenchArgs) -> CmdResult {
    let model = io::load_model(&a.model)?;
    let scene = io::load_scene(&a.scene)?;
    let script = controller_script(&scene.graph, a.frames, scene.config.dt, 1.0);
    let rows = bench_levels(&model, &scene, &script, a.frames, a.repeats)?;
    eprintln!("{:>5} {:>7} {:>7} {:>12} {:>9}", "level", "nodes", "edges", "fps", "speed-up");
    for r in &rows {
        eprintln!("{:>5} {:>7} {:>7} {:>12.2} {:>8.2}x", r.level, r.nodes, r.edges, r.fps, r.speedup);
    }
    if let Some(p) = &a.out {
        io::write_json(p, &rows)?;
    }
    print_json(&rows)
}

fn check_threads() {
    if let Ok(v) = std::env::var("SPRING_MOR_THREADS") {
        match v.parse::<usize>() {
            Ok(n) if n >= 1 => log::debug!("SPRING_MOR_THREADS={n}; computation is sequential"),
            _ => log::warn!("ignoring SPRING_MOR_THREADS={v:?}: expected a positive integer"),
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    check_threads();
    let res = match cli.command {
        Command::Synth(a) => synth(a),
        Command::Observe(a) => observe(a),
        Command::Train(a) => train_cmd(a),
        Command::Rollout(a) => rollout_cmd(a),
        Command::Eval(a) => eval_cmd(a),
        Command::Reduce(a) => reduce_cmd(a),
        Command::Gradcheck(a) => gradcheck_cmd(a),
        Command::Bench(a) => bench_cmd(a),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
