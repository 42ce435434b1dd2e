//! The `macroplace` command line: place a benchmark with a chosen policy,
//! score a placement, train the neural policy and render masks.

pub mod render;

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use macroplace::env::{EnvError, PlacementEnv};
use macroplace::metrics::MetricReport;
use macroplace::netlist::{parse_bookshelf, read_placement, write_pl, BookshelfText};
use macroplace::policies::{
    run_episode, simulated_annealing, AnnealConfig, CongestionFilter, GreedyWireMask, Policy, RandomValid,
};
use macroplace::{
    ConstraintMode, EnvConfig, EpisodeRng, GridError, GridNetlist, GridSpec, MacroSelection, Netlist, NetlistError,
    Placement, DEFAULT_GRID,
};
use neural::{NeuralError, NeuralPolicy, TrainConfig};
use rand::SeedableRng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Parse(#[from] NetlistError),
    #[error("infeasible placement: {0}")]
    Infeasible(String),
    #[error("config: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Neural(#[from] NeuralError),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Parse(_) => 2,
            CliError::Infeasible(_) => 3,
            CliError::Config(_) => 4,
            CliError::Neural(NeuralError::Nn(_)) => 4,
            CliError::Neural(NeuralError::Env(EnvError::Stuck { .. })) => 3,
            CliError::Io { .. } | CliError::Neural(_) => 1,
        }
    }
}

impl From<GridError> for CliError {
    fn from(e: GridError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<EnvError> for CliError {
    fn from(e: EnvError) -> Self {
        match e {
            EnvError::Stuck { .. } => CliError::Infeasible(e.to_string()),
            other => CliError::Config(other.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "macroplace", version, about = "Grid-based macro placement")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Place all macros with one episode of a policy.
    Place(PlaceArgs),
    /// Score an existing placement.
    Eval(EvalArgs),
    /// Train the neural policy.
    Train(TrainArgs),
    /// Write a mask or the layout of a state as an image.
    Render(RenderArgs),
}

#[derive(Debug, Clone, Args)]
pub struct BenchArgs {
    #[arg(long)]
    pub nodes: PathBuf,
    #[arg(long)]
    pub nets: PathBuf,
    /// Fixed terminal and node positions.
    #[arg(long)]
    pub pl: Option<PathBuf>,
    /// Row file; used for the canvas when --canvas is absent.
    #[arg(long)]
    pub scl: Option<PathBuf>,
    #[arg(long, num_args = 2, value_names = ["W", "H"])]
    pub canvas: Option<Vec<f64>>,
    #[arg(long, default_value_t = DEFAULT_GRID)]
    pub grid: usize,
    #[arg(long, default_value = "hard")]
    pub mode: ConstraintMode,
    /// Cells averaged for the RUDY congestion value.
    #[arg(long, default_value_t = 1)]
    pub top_k: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PolicyKind {
    Random,
    Greedy,
    Sa,
    Neural,
}

#[derive(Debug, Clone, Args)]
pub struct PlaceArgs {
    #[command(flatten)]
    pub bench: BenchArgs,
    #[arg(long, value_enum, default_value = "greedy")]
    pub policy: PolicyKind,
    /// Congestion threshold; `inf` disables the filter.
    #[arg(long, default_value_t = f64::INFINITY)]
    pub cth: f64,
    /// Candidate cells sampled by the congestion filter.
    #[arg(long, default_value_t = macroplace::env::DEFAULT_CONGESTION_SAMPLES)]
    pub samples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, default_value_t = 20_000)]
    pub sa_iters: usize,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub bench: BenchArgs,
    /// Placement to score.
    #[arg(long)]
    pub placement: PathBuf,
    /// Also write the report here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub bench: BenchArgs,
    #[arg(long, default_value_t = 150)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Pretrain on the first third of the macros.
    #[arg(long)]
    pub curriculum: bool,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Learning curve CSV.
    #[arg(long)]
    pub curve: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RenderKind {
    Position,
    NextPosition,
    Wire,
    NextWire,
    View,
    Layout,
}

#[derive(Debug, Clone, Args)]
pub struct RenderArgs {
    #[command(flatten)]
    pub bench: BenchArgs,
    #[arg(long, value_enum)]
    pub mask: RenderKind,
    /// Placement whose macros are replayed in place order.
    #[arg(long)]
    pub placement: Option<PathBuf>,
    /// Macros to replay before rendering; all of them by default.
    #[arg(long)]
    pub step: Option<usize>,
    #[arg(long, default_value_t = 4)]
    pub scale: usize,
    #[arg(long)]
    pub out: PathBuf,
}

fn read(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<(), CliError> {
    std::fs::write(path, bytes).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Parses the benchmark files and selects every movable module with area.
pub fn load_netlist(b: &BenchArgs) -> Result<Netlist, CliError> {
    let nodes = read(&b.nodes)?;
    let nets = read(&b.nets)?;
    let pl = b.pl.as_deref().map(read).transpose()?;
    let scl = b.scl.as_deref().map(read).transpose()?;
    let canvas = match b.canvas.as_deref() {
        Some(&[w, h]) => Some((w, h)),
        Some(_) => return Err(CliError::Config("--canvas takes W H".into())),
        None => None,
    };
    let nl = parse_bookshelf(&BookshelfText {
        nodes: &nodes,
        nets: &nets,
        pl: pl.as_deref(),
        scl: scl.as_deref(),
        canvas,
    })?;
    Ok(nl.with_macros(&MacroSelection::default())?)
}

pub fn grid_spec(b: &BenchArgs, nl: &Netlist) -> Result<GridSpec, CliError> {
    Ok(GridSpec::for_canvas(b.grid, &nl.canvas, b.mode)?)
}

/// Scores a placement given as `.pl` text.
pub fn evaluate_pl(gn: &GridNetlist<'_>, pl: &str, top_k: usize) -> Result<MetricReport, CliError> {
    let positions = read_placement(gn.netlist, pl)?;
    let cells = gn.snap(&positions);
    Ok(MetricReport::evaluate(gn, &cells, &positions, top_k))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlaceSummary {
    pub report: MetricReport,
    pub placement: Placement,
    /// Steps where no sampled candidate met the congestion threshold.
    pub unsatisfied_steps: usize,
}

/// Replays a complete placement through the environment in place order to
/// produce a step trace.
fn replay_trace(gn: &GridNetlist<'_>, cfg: &EnvConfig, placement: &Placement) -> Result<String, CliError> {
    let mut env = PlacementEnv::reset(gn, cfg)?;
    while let Some(m) = env.current_macro() {
        env.step(placement[&m])?;
    }
    Ok(env.trace_jsonl())
}

pub fn cmd_place(a: &PlaceArgs) -> Result<PlaceSummary, CliError> {
    if a.cth.is_nan() || a.cth <= 0.0 {
        return Err(CliError::Config(format!("--cth must be positive, got {}", a.cth)));
    }
    let nl = load_netlist(&a.bench)?;
    let gn = GridNetlist::new(&nl, grid_spec(&a.bench, &nl)?)?;
    let env_cfg = EnvConfig {
        rudy_top_k: a.bench.top_k,
        ..EnvConfig::default()
    };
    let filter = Some(CongestionFilter {
        threshold: a.cth,
        samples: a.samples,
    });
    let (placement, trace, unsatisfied_steps) = if a.policy == PolicyKind::Sa {
        let cfg = AnnealConfig {
            iterations: a.sa_iters,
            ..AnnealConfig::default()
        };
        let r = simulated_annealing(&gn, &env_cfg, &cfg, &mut EpisodeRng::seed_from_u64(a.seed))?;
        let trace = replay_trace(&gn, &env_cfg, &r.placement)?;
        (r.placement, trace, 0)
    } else {
        let mut policy: Box<dyn Policy> = match a.policy {
            PolicyKind::Random => Box::new(RandomValid),
            PolicyKind::Greedy => Box::new(GreedyWireMask),
            _ => {
                let path = a
                    .checkpoint
                    .as_deref()
                    .ok_or_else(|| CliError::Config("--policy neural needs --checkpoint".into()))?;
                Box::new(NeuralPolicy::from_checkpoint(&gn, path)?)
            }
        };
        let out = run_episode(&gn, &env_cfg, policy.as_mut(), filter, a.seed)?;
        if out.aborted {
            let placed = out.placement.len();
            return Err(CliError::Infeasible(format!(
                "no feasible cell after placing {placed} of {} macros",
                nl.macros.len()
            )));
        }
        let trace: String = out
            .trace
            .iter()
            .map(|r| serde_json::to_string(r).expect("trace serializes") + "\n")
            .collect();
        (out.placement, trace, out.unsatisfied_steps)
    };

    std::fs::create_dir_all(&a.out).map_err(|source| CliError::Io {
        path: a.out.clone(),
        source,
    })?;
    let pl = write_pl(&nl, &gn.physical(&placement));
    write(&a.out.join("placement.pl"), &pl)?;
    let report = evaluate_pl(&gn, &pl, a.bench.top_k)?;
    write(&a.out.join("report.json"), report.to_json() + "\n")?;
    let scale = (512 / gn.spec.n).max(1);
    write(&a.out.join("layout.ppm"), render::layout_ppm(&gn, &placement, scale))?;
    write(&a.out.join("trace.jsonl"), trace)?;
    Ok(PlaceSummary {
        report,
        placement,
        unsatisfied_steps,
    })
}

pub fn cmd_eval(a: &EvalArgs) -> Result<MetricReport, CliError> {
    let nl = load_netlist(&a.bench)?;
    let gn = GridNetlist::new(&nl, grid_spec(&a.bench, &nl)?)?;
    let report = evaluate_pl(&gn, &read(&a.placement)?, a.bench.top_k)?;
    if let Some(out) = &a.out {
        write(out, report.to_json() + "\n")?;
    }
    Ok(report)
}

pub fn cmd_train(a: &TrainArgs) -> Result<neural::TrainOutcome, CliError> {
    let nl = load_netlist(&a.bench)?;
    let gn = GridNetlist::new(&nl, grid_spec(&a.bench, &nl)?)?;
    let cfg = TrainConfig {
        epochs: a.epochs,
        seed: a.seed,
        curriculum: a.curriculum,
        checkpoint: Some(a.checkpoint.clone()),
        curve: a.curve.clone(),
        ..TrainConfig::default()
    };
    Ok(neural::train(&gn, &cfg)?)
}

pub fn cmd_render(a: &RenderArgs) -> Result<(), CliError> {
    let nl = load_netlist(&a.bench)?;
    let gn = GridNetlist::new(&nl, grid_spec(&a.bench, &nl)?)?;
    let env_cfg = EnvConfig {
        rudy_top_k: a.bench.top_k,
        ..EnvConfig::default()
    };
    let mut env = PlacementEnv::reset(&gn, &env_cfg)?;
    if let Some(path) = &a.placement {
        let cells = gn.snap(&read_placement(&nl, &read(path)?)?);
        let steps = a.step.unwrap_or(usize::MAX);
        while let Some(m) = env.current_macro().filter(|_| env.t() < steps) {
            env.step(cells[&m])?;
        }
    }
    let masks = env.masks();
    let bytes = match a.mask {
        RenderKind::Position => render::pgm(&render::bool_grid(&masks.position)).into_bytes(),
        RenderKind::NextPosition => render::pgm(&render::bool_grid(&masks.next_position)).into_bytes(),
        RenderKind::View => render::pgm(&render::bool_grid(&masks.view)).into_bytes(),
        RenderKind::Wire => render::pgm(&masks.wire.to_grid().map(|&v| v as f64)).into_bytes(),
        RenderKind::NextWire => render::pgm(&masks.next_wire.to_grid().map(|&v| v as f64)).into_bytes(),
        RenderKind::Layout => render::layout_ppm(&gn, env.placement(), a.scale),
    };
    write(&a.out, bytes)
}

/// Runs a parsed command, printing results to stdout and notes to stderr.
pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Place(a) => {
            let s = cmd_place(&a)?;
            if s.unsatisfied_steps > 0 {
                eprintln!(
                    "note: congestion threshold {} not met at {} step(s); the least congested sampled cell was used",
                    a.cth, s.unsatisfied_steps
                );
            }
            println!("{}", s.report.to_json());
        }
        Command::Eval(a) => {
            let r = cmd_eval(&a)?;
            if r.overlap_pct > 0.0 {
                eprintln!("warning: macros overlap ({}% of the canvas)", r.overlap_pct);
            }
            println!("{}", r.to_json());
        }
        Command::Train(a) => {
            let out = cmd_train(&a)?;
            if let Some(last) = out.curve.last() {
                println!("epoch {} mean_hpwl {}", last.epoch, last.mean_hpwl);
            }
        }
        Command::Render(a) => cmd_render(&a)?,
    }
    Ok(())
}

/// Caps the worker pool from `MASKPLACE_THREADS` when set.
pub fn configure_threads() -> Result<(), CliError> {
    if let Ok(v) = std::env::var("MASKPLACE_THREADS") {
        let n: usize = v
            .parse()
            .map_err(|_| CliError::Config(format!("MASKPLACE_THREADS must be a positive integer, got `{v}`")))?;
        if n == 0 {
            return Err(CliError::Config("MASKPLACE_THREADS must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(e.to_string()))?;
    }
    Ok(())
}
