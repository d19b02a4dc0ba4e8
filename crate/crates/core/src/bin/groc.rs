//! `groc`: condense graphs, score them, build coreset baselines, time the modes and export
//! visualizations.
//!
//! Exit codes: 0 success, 1 usage or validation error, 2 runtime error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};

use groc_core::condense::Mode;
use groc_core::config::RunConfig;
use groc_core::eval::Method;
use groc_core::models::ModelKind;
use groc_core::pipeline::{self, Run};

#[derive(Debug, Parser)]
#[command(name = "groc", version, about = "Robust graph condensation by gradient matching")]
struct Cli {
    /// Worker threads for protocol runs (default: logical cores).
    #[arg(long, global = true, value_name = "N")]
    jobs: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Condense a dataset into condensed.json and a per-epoch report.csv.
    Condense(Common),
    /// Run the evaluation protocol and write report.json and report.csv.
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// Score this condensed.json instead of condensing anew.
        #[arg(long, value_name = "FILE")]
        condensed: Option<PathBuf>,
        /// Backbone trained on the condensed graph: gcn, sgc or mlp.
        #[arg(long)]
        backbone: Option<ModelKind>,
    },
    /// Select a Random, Herding or K-Center coreset at the condensation budget.
    Coreset(Common),
    /// Time the condensation modes against each other on one thread.
    Profile(Common),
    /// Convert a run directory into GraphML and SVG files.
    ExportViz {
        /// Accepted for symmetry with the other commands; not needed.
        #[arg(long, value_name = "PATH")]
        config: Option<PathBuf>,
        /// Run directory holding condensed.json and/or curve.csv.
        #[arg(long, value_name = "DIR")]
        input: PathBuf,
        /// Output directory (default: the input directory).
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
struct Common {
    /// Run configuration (JSON, or TOML with a .toml extension).
    #[arg(long, value_name = "PATH")]
    config: PathBuf,
    /// Base seed; condensation seeds become SEED, SEED+1, ...
    #[arg(long)]
    seed: Option<u64>,
    /// gcond, groc or timgroc; evaluate also takes random, herding or kcenter, and coreset
    /// takes only those three.
    #[arg(long)]
    mode: Option<Method>,
    /// Output directory (default: ./runs/<unix-millis>).
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Kind {
    Condense,
    Evaluate,
    Coreset,
    Profile,
}

/// Marks an error as caused by the user's input.
#[derive(Debug)]
struct Invalid;

impl std::fmt::Display for Invalid {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("invalid input")
    }
}

impl std::error::Error for Invalid {}

fn invalid(e: impl Into<anyhow::Error>) -> anyhow::Error {
    e.into().context(Invalid)
}

fn default_out() -> PathBuf {
    let millis = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis())
        .unwrap_or_default();
    PathBuf::from("runs").join(millis.to_string())
}

fn apply_overrides(cfg: &mut RunConfig, common: &Common, kind: Kind) -> anyhow::Result<()> {
    if let Some(seed) = common.seed {
        cfg.condense.seed = seed;
        let n = cfg.condense_seeds.len() as u64;
        cfg.condense_seeds = (seed..seed + n).collect();
    }
    match (common.mode, kind) {
        (None, _) => {}
        (Some(Method::Condense(mode)), Kind::Condense) => cfg.condense.mode = mode,
        (Some(Method::Condense(mode)), Kind::Profile) => {
            cfg.profile_modes = if mode == Mode::Gcond { vec![mode] } else { vec![Mode::Gcond, mode] };
        }
        (Some(method), Kind::Evaluate) => {
            if let Method::Condense(mode) = method {
                cfg.condense.mode = mode;
            }
            cfg.method = Some(method);
        }
        (Some(Method::Coreset(c)), Kind::Coreset) => cfg.coreset = c,
        (Some(other), _) => return Err(invalid(anyhow!("--mode {other} does not apply to this command"))),
    }
    Ok(())
}

fn prepare(common: &Common, kind: Kind, tweak: impl FnOnce(&mut RunConfig)) -> anyhow::Result<Run> {
    let mut cfg = RunConfig::from_file(&common.config).map_err(invalid)?;
    apply_overrides(&mut cfg, common, kind)?;
    tweak(&mut cfg);
    let out = common.out.clone().unwrap_or_else(default_out);
    let base = common.config.parent().map(Path::to_path_buf);
    Run::prepare(cfg, base.as_deref(), &out).map_err(core_error)
}

fn core_error(e: groc_core::Error) -> anyhow::Error {
    if e.is_validation() {
        invalid(e)
    } else {
        e.into()
    }
}

fn execute(cli: Cli) -> anyhow::Result<()> {
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            return Err(invalid(anyhow!("--jobs must be at least 1")));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .context("starting worker pool")?;
    }
    match cli.command {
        Command::Condense(common) => {
            let run = prepare(&common, Kind::Condense, |_| {})?;
            let s = pipeline::condense(&run).map_err(core_error)?;
            println!(
                "condensed to {} nodes, {} edges; {} matching passes; final distance {:.6}",
                s.nodes, s.edges, s.passes, s.final_distance
            );
            if let Some(last) = s.curve.last() {
                println!("final curve accuracy {:.4}", last.test_accuracy);
            }
            println!("outputs in {}", run.out.display());
        }
        Command::Evaluate {
            common,
            condensed,
            backbone,
        } => {
            let run = prepare(&common, Kind::Evaluate, |cfg| {
                if let Some(b) = backbone {
                    cfg.backbone = b;
                }
            })?;
            let report = pipeline::evaluate(&run, condensed.as_deref()).map_err(core_error)?;
            for r in &report.runs {
                println!(
                    "condense_seed {} eval_seed {}: test {:.4} (val {:.4}, epoch {})",
                    r.condense_seed, r.eval_seed, r.test_accuracy, r.val_accuracy, r.best_epoch
                );
            }
            println!(
                "{} / {} on {}: {:.2} ± {:.2} over {} runs",
                report.method,
                report.backbone,
                report.dataset,
                100.0 * report.mean,
                100.0 * report.std,
                report.runs.len()
            );
            println!("outputs in {}", run.out.display());
        }
        Command::Coreset(common) => {
            let run = prepare(&common, Kind::Coreset, |_| {})?;
            let c = pipeline::coreset(&run).map_err(core_error)?;
            println!("{} coreset: {} nodes, budget {:?}", c.method, c.nodes.len(), c.budget);
            println!("outputs in {}", run.out.display());
        }
        Command::Profile(common) => {
            let run = prepare(&common, Kind::Profile, |_| {})?;
            let table = pipeline::profile(&run).map_err(core_error)?;
            print!("{}", pipeline::format_profile(&table));
            println!("outputs in {}", run.out.display());
        }
        Command::ExportViz { config: _, input, out } => {
            let out = out.unwrap_or_else(|| input.clone());
            for path in pipeline::export_viz(&input, &out).map_err(core_error)? {
                println!("wrote {}", path.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<Invalid>().is_some() {
                ExitCode::from(1)
            } else {
                ExitCode::from(2)
            }
        }
    }
}
