use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use iemoa_core::detection::{DetectionMethod, ResetPolicy};
use iemoa_core::engine::{run_machine, RunConfig};
use iemoa_core::harness::{execute, load_runs, write_run, write_summary, ExperimentGrid, GridCell, GroupKey};
use iemoa_core::mdm::UtilityKind;
use iemoa_core::problems::{ProblemKind, ProblemSpec};
use iemoa_service::AppState;

#[derive(Parser)]
#[command(name = "iemoa", version, about = "Interactive EMOA with objective detection and preference drift")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute one run against the machine decision maker.
    Run(RunArgs),
    /// Execute every cell of an experiment file and write summaries.
    Grid(GridArgs),
    /// Rebuild summary tables from an existing output directory.
    Aggregate {
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
    },
    /// Start the HTTP session service.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
        /// Abort sessions that wait longer than this for a ranking.
        #[arg(long)]
        idle_timeout_secs: Option<u64>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Problem {
    Dtlz1,
    Dtlz2,
    Dtlz7,
    Rmnk,
}

#[derive(Clone, Copy, ValueEnum)]
enum Uf {
    Tchebychef,
    Quadratic,
}

#[derive(Clone, Copy, ValueEnum)]
enum Detection {
    None,
    Univariate,
    Recursive,
}

#[derive(Clone, Copy, ValueEnum)]
enum Reset {
    None,
    Fixed,
    Dynamic,
}

#[derive(Args)]
struct RunArgs {
    /// TOML run configuration; flags below override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    problem: Option<Problem>,
    #[arg(long)]
    m: Option<usize>,
    /// Epistasis degree (rmnk).
    #[arg(long)]
    k: Option<usize>,
    /// Objective correlation (rmnk).
    #[arg(long)]
    rho: Option<f64>,
    /// Landscape generator seed (rmnk).
    #[arg(long)]
    instance_seed: Option<u64>,
    #[arg(long, value_enum)]
    uf: Option<Uf>,
    /// Rank by the true utility instead of learning from rankings.
    #[arg(long)]
    no_learning: bool,
    #[arg(long, value_enum)]
    detection: Option<Detection>,
    #[arg(long)]
    reduction: bool,
    #[arg(long)]
    noise: bool,
    #[arg(long, value_enum)]
    reset: Option<Reset>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Write runs/<id>/trace.csv and manifest.json here instead of
    /// printing the trace.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Args)]
struct GridArgs {
    /// Experiment file (TOML).
    file: PathBuf,
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
}

fn build_config(a: &RunArgs) -> Result<RunConfig, Box<dyn std::error::Error>> {
    let mut cfg = match &a.config {
        Some(p) => toml::from_str(&std::fs::read_to_string(p)?)?,
        None => RunConfig::default(),
    };
    if let Some(p) = a.problem {
        let m = a.m.unwrap_or(cfg.problem.m);
        cfg.problem = match p {
            Problem::Rmnk => ProblemSpec::rmnk(m, a.k.unwrap_or(1), a.rho.unwrap_or(0.0), a.instance_seed.unwrap_or(0)),
            Problem::Dtlz1 => ProblemSpec::dtlz(ProblemKind::Dtlz1, m),
            Problem::Dtlz2 => ProblemSpec::dtlz(ProblemKind::Dtlz2, m),
            Problem::Dtlz7 => ProblemSpec::dtlz(ProblemKind::Dtlz7, m),
        };
    } else {
        if let Some(m) = a.m {
            cfg.problem.m = m;
        }
        if a.k.is_some() {
            cfg.problem.k = a.k;
        }
        if a.rho.is_some() {
            cfg.problem.rho = a.rho;
        }
        if a.instance_seed.is_some() {
            cfg.problem.seed = a.instance_seed;
        }
    }
    if let Some(uf) = a.uf {
        cfg.utility = match uf {
            Uf::Tchebychef => UtilityKind::Tchebychef,
            Uf::Quadratic => UtilityKind::Quadratic,
        };
    }
    if a.no_learning {
        cfg.learning = false;
    }
    if let Some(d) = a.detection {
        cfg.detection.method = match d {
            Detection::None => DetectionMethod::None,
            Detection::Univariate => DetectionMethod::Univariate,
            Detection::Recursive => DetectionMethod::Recursive,
        };
    }
    cfg.detection.reduction |= a.reduction;
    cfg.detection.noise |= a.noise;
    if let Some(r) = a.reset {
        cfg.detection.reset = match r {
            Reset::None => ResetPolicy::None,
            Reset::Fixed => ResetPolicy::Fixed,
            Reset::Dynamic => ResetPolicy::Dynamic,
        };
    }
    if let Some(t) = a.tau {
        cfg.detection.tau = t;
    }
    if let Some(g) = a.gamma {
        cfg.gamma = g;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn cmd_run(a: RunArgs) -> Result<(), Box<dyn std::error::Error>> {
    let cfg = build_config(&a)?;
    let trace = run_machine(&cfg)?;
    match &a.out_dir {
        Some(dir) => {
            let key = GroupKey::of(&cfg);
            let cell = GridCell {
                id: format!("{}-seed{}", key.slug(), cfg.seed),
                key,
                repetition: 0,
                config: cfg.clone(),
            };
            let path = write_run(dir, &cell, &trace)?;
            eprintln!("wrote {}", path.display());
        }
        None => print!("{}", trace.to_csv_string()),
    }
    if let Some(last) = trace.final_row() {
        eprintln!(
            "final utility {:.4}, mask {}, {} objective evaluations",
            last.reported_utility, last.mask, last.objective_evaluations
        );
    }
    Ok(())
}

fn cmd_grid(a: GridArgs) -> Result<(), Box<dyn std::error::Error>> {
    let mut grid = ExperimentGrid::load(&a.file)?;
    if let Some(r) = a.reps {
        grid.repetitions = r;
    }
    if let Some(s) = a.seed {
        grid.base_seed = s;
    }
    let cells = grid.expand()?;
    eprintln!("running {} configurations", cells.len());
    let records = execute(&cells, a.threads, Some(&a.out_dir))?;
    let table = write_summary(&a.out_dir, &records)?;
    eprintln!(
        "wrote {} runs and {} summary groups to {}",
        records.len(),
        table.rows.len(),
        a.out_dir.display()
    );
    Ok(())
}

fn cmd_aggregate(out_dir: PathBuf) -> Result<(), Box<dyn std::error::Error>> {
    let records = load_runs(&out_dir)?;
    let table = write_summary(&out_dir, &records)?;
    eprintln!("aggregated {} runs into {} groups", records.len(), table.rows.len());
    Ok(())
}

fn cmd_serve(addr: SocketAddr, idle: Option<u64>) -> Result<(), Box<dyn std::error::Error>> {
    let app = AppState::new(idle.map(Duration::from_secs));
    let rt = tokio::runtime::Runtime::new()?;
    eprintln!("listening on http://{addr}");
    rt.block_on(iemoa_service::serve(addr, app))?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Grid(a) => cmd_grid(a),
        Command::Aggregate { out_dir } => cmd_aggregate(out_dir),
        Command::Serve { addr, idle_timeout_secs } => cmd_serve(addr, idle_timeout_secs),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
