#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod output;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;
use meshwave::config::{Backend, ScenarioConfig, SpacingSpec};
use meshwave::geom::Point;
use meshwave::post::convergence_study;
use meshwave::solver::{self, Discretization, RunOptions};
use meshwave::Error;

use output::RunDir;

/// Meshless RBF-FD and 5-point FDM simulation of 2D acoustic waves.
#[derive(Parser, Debug)]
#[command(name = "meshwave", version)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// Output root; runs go to `<root>/<scenario>/<timestamp>/`.
    #[arg(long, global = true, env = "MESHWAVE_OUT", default_value = "out")]
    out: PathBuf,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Overrides the scenario seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Run even if the time step fails the stability check.
    #[arg(long, global = true)]
    force: bool,
    /// Validate the scenario and report the stability check; write nothing.
    #[arg(long, global = true)]
    dry_run: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run a scenario and write seismogram, probe and snapshot files.
    Run { config: PathBuf },
    /// Generate the node set only and write it as CSV.
    Nodes { config: PathBuf },
    /// Rerun a scenario at several constant spacings and tabulate a probe.
    Converge {
        config: PathBuf,
        /// Node spacings, coarse to fine.
        #[arg(long, value_delimiter = ',', required = true)]
        spacings: Vec<f64>,
        /// Probe point `x,z`; defaults to the first configured probe.
        #[arg(long, value_parser = parse_point)]
        probe: Option<Point>,
        /// Probe time in seconds; defaults to the end of the run.
        #[arg(long)]
        time: Option<f64>,
    },
    /// Run two scenarios and write difference fields and paired seismograms.
    Compare {
        first: PathBuf,
        second: PathBuf,
        /// Spacing of the common grid used for difference fields.
        #[arg(long, default_value_t = 1.0)]
        grid: f64,
    },
}

fn parse_point(s: &str) -> Result<Point, String> {
    let (x, z) = s.split_once(',').ok_or_else(|| format!("expected `x,z`, got `{s}`"))?;
    let num = |v: &str| v.trim().parse::<f64>().map_err(|e| format!("`{v}`: {e}"));
    Ok(Point::new(num(x)?, num(z)?))
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Io(_) => 4,
        Error::BlowUp { .. } => 3,
        _ => 2,
    }
}

fn load(path: &Path, common: &Common) -> Result<(ScenarioConfig, String), Error> {
    let text =
        std::fs::read_to_string(path).map_err(|e| std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))?;
    let mut cfg = ScenarioConfig::load(path)?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    Ok((cfg, text))
}

/// Builds the discretization and prints the stability report. Fails on an
/// unstable time step unless forced.
fn prepare(cfg: &ScenarioConfig, common: &Common) -> Result<Discretization, Error> {
    let disc = Discretization::build(cfg)?;
    let s = disc.stability()?;
    println!(
        "{}: {} {} nodes, dt = {:e} s, stability limit {:e} s: {}",
        cfg.name,
        disc.len(),
        cfg.backend.as_str(),
        s.dt,
        s.dt_max,
        if s.passed { "ok" } else { "FAILED" }
    );
    if !s.passed && !common.force {
        return Err(Error::Unstable { dt: s.dt, dt_max: s.dt_max });
    }
    Ok(disc)
}

fn run(path: &Path, common: &Common) -> Result<(), Error> {
    let (cfg, text) = load(path, common)?;
    let disc = prepare(&cfg, common)?;
    if common.dry_run {
        return Ok(());
    }
    let dir = RunDir::create(&common.out, &cfg.name)?;
    dir.write_config(&text, &cfg)?;
    let out = solver::simulate(&disc, &cfg, &RunOptions { force: common.force }, |_, _| {})?;
    dir.write_run(&cfg, &out)?;
    println!("{} steps in {:.1} s -> {}", cfg.steps, out.diagnostics.wall_seconds, dir.path.display());
    Ok(())
}

fn nodes(path: &Path, common: &Common) -> Result<(), Error> {
    let (cfg, text) = load(path, common)?;
    let disc = prepare(&cfg, common)?;
    if common.dry_run {
        return Ok(());
    }
    let dir = RunDir::create(&common.out, &cfg.name)?;
    dir.write_config(&text, &cfg)?;
    dir.write_with("nodes.csv", |w| disc.nodes.write_csv(w))?;
    println!("{} nodes -> {}", disc.len(), dir.path.display());
    Ok(())
}

fn converge(
    path: &Path,
    common: &Common,
    spacings: &[f64],
    probe: Option<Point>,
    time: Option<f64>,
) -> Result<(), Error> {
    let (cfg, text) = load(path, common)?;
    if spacings.iter().any(|a| !(*a > 0.0)) {
        return Err(Error::Config("spacings must be positive".into()));
    }
    let probe = match probe {
        Some(p) => p,
        None => *cfg.output.probes.first().ok_or_else(|| Error::Config("no probe given and none configured".into()))?,
    };
    if !cfg.domain.contains_strictly(probe) {
        return Err(Error::Config(format!("probe {probe} lies outside the domain")));
    }
    let t = time.unwrap_or(cfg.steps as f64 * cfg.active_dt());
    if common.dry_run {
        for &a in spacings {
            let mut c = cfg.clone();
            c.spacing = SpacingSpec::Constant { a };
            if c.backend == Backend::Fdm {
                c.fdm_h = Some(a);
            }
            prepare(&c, common)?;
        }
        return Ok(());
    }
    let dir = RunDir::create(&common.out, &cfg.name)?;
    dir.write_config(&text, &cfg)?;
    let points = convergence_study(&cfg, spacings, probe, t)?;
    dir.write_with("convergence.csv", |w| output::write_convergence(w, &points))?;
    for p in &points {
        println!("a = {:<8} nodes = {:<8} value = {:e}  peak = {:e}", p.spacing, p.nodes, p.value, p.peak);
    }
    println!("-> {}", dir.path.display());
    Ok(())
}

fn compare(first: &Path, second: &Path, common: &Common, grid: f64) -> Result<(), Error> {
    let (a_cfg, a_text) = load(first, common)?;
    let (b_cfg, b_text) = load(second, common)?;
    if a_cfg.domain != b_cfg.domain {
        return Err(Error::Config("compared scenarios must share the same domain".into()));
    }
    if !(grid > 0.0) {
        return Err(Error::Config(format!("comparison grid spacing must be positive, got {grid}")));
    }
    let a_disc = prepare(&a_cfg, common)?;
    let b_disc = prepare(&b_cfg, common)?;
    if common.dry_run {
        return Ok(());
    }
    let name = format!("{}_vs_{}", a_cfg.name, b_cfg.name);
    let dir = RunDir::create(&common.out, &name)?;
    dir.write_text("first.cfg", &a_text)?;
    dir.write_text("second.cfg", &b_text)?;
    let opts = RunOptions { force: common.force };
    let a = solver::simulate(&a_disc, &a_cfg, &opts, |_, _| {})?;
    let b = solver::simulate(&b_disc, &b_cfg, &opts, |_, _| {})?;
    let summary = output::write_comparison(&dir, &a, &b, grid)?;
    for line in &summary {
        println!("{line}");
    }
    dir.write_text("summary.txt", &(summary.join("\n") + "\n"))?;
    println!("-> {}", dir.path.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    if let Some(n) = cli.common.threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot configure {n} threads: {e}");
            return ExitCode::from(2);
        }
        info!("using {n} worker threads");
    }
    let common = &cli.common;
    let result = match &cli.command {
        Command::Run { config } => run(config, common),
        Command::Nodes { config } => nodes(config, common),
        Command::Converge { config, spacings, probe, time } => converge(config, common, spacings, *probe, *time),
        Command::Compare { first, second, grid } => compare(first, second, common, *grid),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
