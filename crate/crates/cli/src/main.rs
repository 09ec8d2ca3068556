use std::collections::BTreeSet;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use pcsm::analytic::{buffer_availability_model, steps_to_blacklist, BufferModelParams};
use pcsm::baselines::StackVariant;
use pcsm::config::{ConfigError, ScenarioConfig};
use pcsm::metrics::{render_table, RunMetrics, Summary};
use pcsm::netsim::{self, RunOptions, SimError};
use pcsm::runner;
use pcsm::vectors::golden_vectors;

#[derive(Parser)]
#[command(name = "pcsm", version, about = "Fragment-attack simulator for 6LoWPAN stacks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct RunFlags {
    /// First seed (overrides `seeds.base`).
    #[arg(long)]
    seed: Option<u64>,
    /// Number of seeded runs (overrides `seeds.count`).
    #[arg(long)]
    seed_count: Option<u32>,
    /// Output directory (overrides `output.dir`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write per-event trace logs and trust traces.
    #[arg(long)]
    trace: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Run every seed of one scenario.
    Run {
        config: PathBuf,
        #[command(flatten)]
        flags: RunFlags,
    },
    /// Run every scenario in a directory and print a comparison table.
    Matrix {
        dir: PathBuf,
        #[command(flatten)]
        flags: RunFlags,
    },
    /// Sweep lambda x theta over a base scenario.
    Sensitivity {
        config: PathBuf,
        #[arg(long, value_delimiter = ',', default_values_t = runner::DEFAULT_LAMBDAS)]
        lambdas: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_values_t = runner::DEFAULT_THETAS)]
        thetas: Vec<f64>,
        #[command(flatten)]
        flags: RunFlags,
    },
    /// Evaluate the closed-form trust and buffer models.
    Analytic {
        #[arg(long, default_value_t = 0.1)]
        legit_rate: f64,
        #[arg(long, default_value_t = 0.3)]
        attack_rate: f64,
        #[arg(long, default_value_t = 2)]
        slots: u32,
        #[arg(long, default_value_t = 10.0)]
        timeout: f64,
        #[arg(long, default_value_t = 0.8)]
        t0: f64,
        #[arg(long, default_value_t = 0.9)]
        lambda: f64,
        #[arg(long, default_value_t = 0.3)]
        theta: f64,
    },
    /// Print the chained-hash and header golden vectors as JSON.
    Vectors {
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Sim(SimError),
    #[error("{0}")]
    Usage(String),
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Config(c) => CliError::Config(c),
            other => CliError::Sim(other),
        }
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(ConfigError::Io { .. }) | CliError::Io { .. } => 3,
            CliError::Config(_) | CliError::Usage(_) => 2,
            CliError::Sim(_) => 1,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io { path: path.to_owned(), source }
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    fs::write(path, contents).map_err(io_err(path))
}

fn apply_flags(cfg: &mut ScenarioConfig, flags: &RunFlags) -> Result<(), CliError> {
    if let Some(seed) = flags.seed {
        cfg.seeds.base = seed;
    }
    if let Some(count) = flags.seed_count {
        cfg.seeds.count = count;
    }
    if let Some(out) = &flags.out {
        cfg.output.dir = out.clone();
    }
    cfg.validate()?;
    Ok(())
}

fn jsonl<T: serde::Serialize>(rows: &[T]) -> String {
    rows.iter()
        .map(|r| serde_json::to_string(r).expect("records serialize") + "\n")
        .collect()
}

/// Run all seeds of one scenario and write its records. Returns the summary.
fn run_scenario(cfg: &ScenarioConfig, trace: bool) -> Result<Summary, CliError> {
    let dir = cfg.output.dir.join(&cfg.name);
    let (runs, summary) = runner::run_and_summarize(cfg)?;
    write_file(&dir.join("runs.jsonl"), &jsonl(&runs))?;
    write_file(&dir.join("summary.json"), &(summary.to_json_line() + "\n"))?;
    if trace {
        for seed in runner::seeds(cfg) {
            let out = netsim::run_with(cfg, seed, RunOptions { trace: true })?;
            let log: String = out.events.iter().map(|l| format!("{l}\n")).collect();
            write_file(&dir.join(format!("trace-{seed}.log")), &log)?;
            let mut csv = String::from("node,time,score\n");
            for s in &out.trust_trace {
                csv.push_str(&format!("{},{:.6},{:.6}\n", s.node, s.time, s.score));
            }
            write_file(&dir.join(format!("trust-{seed}.csv")), &csv)?;
        }
    }
    Ok(summary)
}

fn cmd_run(config: &Path, flags: &RunFlags) -> Result<(), CliError> {
    let mut cfg = ScenarioConfig::load(config)?;
    apply_flags(&mut cfg, flags)?;
    let summary = run_scenario(&cfg, flags.trace)?;
    print!("{}", render_table(std::slice::from_ref(&summary)));
    Ok(())
}

fn load_dir(dir: &Path) -> Result<Vec<ScenarioConfig>, CliError> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(io_err(dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "toml"))
        .collect();
    paths.sort();
    paths.iter().map(|p| ScenarioConfig::load(p).map_err(CliError::from)).collect()
}

fn cmd_matrix(dir: &Path, flags: &RunFlags) -> Result<(), CliError> {
    let mut configs = load_dir(dir)?;
    if configs.is_empty() {
        return Err(CliError::Usage(format!("no scenario files in {}", dir.display())));
    }
    for cfg in &mut configs {
        apply_flags(cfg, flags)?;
    }
    configs.sort_by_key(|c| (c.attack.as_ref().map(|a| a.kind), c.stack));
    let attacks: BTreeSet<_> = configs.iter().map(|c| c.attack.as_ref().map(|a| a.kind)).collect();
    for attack in &attacks {
        for stack in StackVariant::ALL {
            if !configs.iter().any(|c| c.stack == stack && c.attack.as_ref().map(|a| a.kind) == *attack) {
                let name = attack.map_or("none", |k| k.name());
                eprintln!("warning: no {stack} scenario for attack {name}; row omitted");
            }
        }
    }
    let mut summaries = Vec::new();
    for cfg in &configs {
        summaries.push(run_scenario(cfg, flags.trace)?);
    }
    let table = render_table(&summaries);
    let out = flags.out.clone().unwrap_or_else(|| configs[0].output.dir.clone());
    write_file(&out.join("matrix.jsonl"), &jsonl(&summaries))?;
    write_file(&out.join("matrix.txt"), &table)?;
    print!("{table}");
    Ok(())
}

fn cmd_sensitivity(config: &Path, lambdas: &[f64], thetas: &[f64], flags: &RunFlags) -> Result<(), CliError> {
    let mut base = ScenarioConfig::load(config)?;
    apply_flags(&mut base, flags)?;
    if base.attack.is_none() {
        return Err(CliError::Usage("sensitivity needs a base scenario with an attack".into()));
    }
    let results = runner::sensitivity(&base, lambdas, thetas)?;
    let dir = base.output.dir.join(format!("{}_sensitivity", base.name));
    let mut runs: Vec<RunMetrics> = Vec::new();
    let mut cells = Vec::new();
    for (cell, cell_runs) in results {
        runs.extend(cell_runs);
        cells.push(cell);
    }
    let table = runner::render_sensitivity(&cells);
    write_file(&dir.join("runs.jsonl"), &jsonl(&runs))?;
    write_file(&dir.join("cells.jsonl"), &jsonl(&cells))?;
    write_file(&dir.join("sensitivity.txt"), &table)?;
    print!("{table}");
    Ok(())
}

fn cmd_analytic(p: BufferModelParams, t0: f64, lambda: f64, theta: f64) -> Result<(), CliError> {
    let m = buffer_availability_model(&p);
    println!("buffer model (lambda={}, A={}, B={}, tau={})", p.legit_rate, p.attack_rate, p.slots, p.timeout);
    println!("  as printed:  rho = {:.6}  P_buffer = {:.6}", m.rho, m.p_buffer);
    println!(
        "  offered load: occupancy = {:.6}  P_buffer = {:.6}",
        m.occupancy_standard, m.p_buffer_standard
    );
    match steps_to_blacklist(t0, lambda, theta) {
        Ok(k) => println!("steps to blacklist from t0={t0} (lambda={lambda}, theta={theta}): {k}"),
        Err(e) => return Err(CliError::Usage(e.to_string())),
    }
    Ok(())
}

fn cmd_vectors(out: Option<&Path>) -> Result<(), CliError> {
    let json = golden_vectors().to_json_pretty() + "\n";
    match out {
        Some(path) => write_file(path, &json),
        None => std::io::stdout()
            .write_all(json.as_bytes())
            .map_err(io_err(Path::new("<stdout>"))),
    }
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Run { config, flags } => cmd_run(&config, &flags),
        Command::Matrix { dir, flags } => cmd_matrix(&dir, &flags),
        Command::Sensitivity { config, lambdas, thetas, flags } => cmd_sensitivity(&config, &lambdas, &thetas, &flags),
        Command::Analytic { legit_rate, attack_rate, slots, timeout, t0, lambda, theta } => cmd_analytic(
            BufferModelParams { legit_rate, attack_rate, slots, timeout },
            t0,
            lambda,
            theta,
        ),
        Command::Vectors { out } => cmd_vectors(out.as_deref()),
    }
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
