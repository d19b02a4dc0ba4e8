//! End-to-end commands: each loads the dataset, runs one stage and writes its outputs plus
//! the resolved configuration into an output directory.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::condense::{run_condense, CondenseOutcome};
use crate::config::{DatasetSource, RunConfig};
use crate::coreset::{build_coreset, Coreset};
use crate::error::{Error, Result};
use crate::eval::{
    condense_with_curve, evaluate_condensed, mean_std, protocol_run, time_profile, CurvePoint, EvalReport, EvalRun,
    GraphSummary, TimingTable,
};
use crate::export;
use crate::graph::Graph;

pub const RESOLVED_CONFIG: &str = "resolved-config.json";

/// A validated configuration bound to its dataset and output directory.
#[derive(Debug, Clone)]
pub struct Run {
    pub config: RunConfig,
    pub source: DatasetSource,
    pub out: PathBuf,
}

impl Run {
    /// Validates `config`, resolves its dataset against `base`, and creates `out`.
    pub fn prepare(mut config: RunConfig, base: Option<&Path>, out: impl Into<PathBuf>) -> Result<Self> {
        config.validate()?;
        let source = config.resolve_dataset(base)?;
        config.dataset = source.spec();
        config.method = Some(config.method());
        let out = out.into();
        fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
        Ok(Self { config, source, out })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn load(&self) -> Result<Graph> {
        self.source.load()
    }

    /// Writes the fully resolved configuration beside the outputs.
    fn echo_config(&self) -> Result<()> {
        export::write_json(self.path(RESOLVED_CONFIG), &self.config)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CondenseSummary {
    pub nodes: usize,
    pub edges: usize,
    pub passes: u64,
    pub final_distance: f64,
    pub curve: Vec<CurvePoint>,
}

/// Writes `condensed.json`, `report.csv` and, when a curve is requested, `curve.csv` and
/// `curve.svg`.
pub fn condense(run: &Run) -> Result<CondenseSummary> {
    run.echo_config()?;
    let graph = run.load()?;
    let cfg = &run.config;
    let (outcome, curve): (CondenseOutcome, Vec<CurvePoint>) = if cfg.curve_every > 0 {
        let seed = cfg.eval_seeds.first().copied().unwrap_or(0);
        condense_with_curve(&graph, &cfg.condense, cfg.backbone, &cfg.train, cfg.curve_every, seed)?
    } else {
        (run_condense(&cfg.condense, &graph)?, Vec::new())
    };
    export::write_condensed(run.path("condensed.json"), &outcome.graph)?;
    export::write_trace(run.path("report.csv"), &outcome.report)?;
    if !curve.is_empty() {
        export::write_curve_csv(run.path("curve.csv"), &curve)?;
        let title = format!("{} on {}", cfg.condense.mode, run.source.name());
        export::write_curve_svg(run.path("curve.svg"), &curve, &title)?;
    }
    Ok(CondenseSummary {
        nodes: outcome.graph.num_nodes(),
        edges: outcome.graph.num_edges(),
        passes: outcome.report.passes,
        final_distance: outcome.report.epochs.last().map_or(f64::NAN, |e| e.distance),
        curve,
    })
}

/// Runs the full protocol, or scores an existing `condensed.json` under every evaluation
/// seed. Writes `report.json` and `report.csv`.
pub fn evaluate(run: &Run, condensed: Option<&Path>) -> Result<EvalReport> {
    run.echo_config()?;
    let graph = run.load()?;
    let cfg = &run.config;
    let report = match condensed {
        None => protocol_run(&graph, &cfg.protocol(), &run.source.name())?,
        Some(path) => {
            let synthetic = export::read_condensed(path, Some(graph.num_classes()))?;
            if synthetic.features.ncols() != graph.num_features() {
                return Err(Error::InvalidArgument(format!(
                    "{} has {} features, dataset has {}",
                    path.display(),
                    synthetic.features.ncols(),
                    graph.num_features()
                )));
            }
            let outcomes = evaluate_condensed(&synthetic, &graph, cfg.backbone, &cfg.train, &cfg.eval_seeds)?;
            let runs: Vec<EvalRun> = outcomes
                .iter()
                .zip(&cfg.eval_seeds)
                .map(|(o, &eval_seed)| EvalRun {
                    condense_seed: cfg.condense.seed,
                    eval_seed,
                    test_accuracy: o.test_accuracy,
                    val_accuracy: o.val_accuracy,
                    best_epoch: o.best_epoch,
                })
                .collect();
            let acc: Vec<f64> = runs.iter().map(|r| r.test_accuracy).collect();
            let (mean, std) = mean_std(&acc);
            EvalReport {
                dataset: run.source.name(),
                method: cfg.method(),
                backbone: cfg.backbone,
                ratio: synthetic.num_nodes() as f64 / graph.num_nodes() as f64,
                graphs: vec![GraphSummary {
                    condense_seed: cfg.condense.seed,
                    nodes: synthetic.num_nodes(),
                    edges: synthetic.num_edges(),
                    seconds: 0.0,
                    epoch_ms_median: None,
                }],
                runs,
                mean,
                std,
            }
        }
    };
    export::write_json(run.path("report.json"), &report)?;
    export::write_eval_csv(run.path("report.csv"), &report)?;
    Ok(report)
}

/// Writes `coreset.json` for the configured coreset method and budget.
pub fn coreset(run: &Run) -> Result<Coreset> {
    run.echo_config()?;
    let graph = run.load()?;
    let cfg = &run.config;
    let budget = cfg.condense.budget(&graph)?;
    let selection = build_coreset(cfg.coreset, &graph, &budget, cfg.condense.seed)?;
    export::write_json(run.path("coreset.json"), &selection)?;
    Ok(selection)
}

/// Times every configured mode on the calling thread and writes `profile.json`.
pub fn profile(run: &Run) -> Result<TimingTable> {
    run.echo_config()?;
    let graph = run.load()?;
    let cfg = &run.config;
    let table = time_profile(&graph, &cfg.condense, &cfg.profile_modes, cfg.profile_epochs)?;
    export::write_json(run.path("profile.json"), &table)?;
    Ok(table)
}

/// Converts a run directory's `condensed.json` to GraphML and its `curve.csv`, if any, to
/// SVG. Returns the files written.
pub fn export_viz(input: &Path, out: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut written = Vec::new();
    let condensed = input.join("condensed.json");
    if condensed.is_file() {
        let graph = export::read_condensed(&condensed, None)?;
        let path = out.join("condensed.graphml");
        export::write_graphml(&path, &graph)?;
        written.push(path);
    }
    let curve = input.join("curve.csv");
    if curve.is_file() {
        let points = export::read_curve_csv(&curve)?;
        let path = out.join("curve.svg");
        export::write_curve_svg(&path, &points, "test accuracy during condensation")?;
        written.push(path);
    }
    if written.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "{} holds neither condensed.json nor curve.csv",
            input.display()
        )));
    }
    Ok(written)
}

/// Formats a timing table as aligned text.
pub fn format_profile(table: &TimingTable) -> String {
    let mut out = format!("{:<8} {:>8} {:>12} {:>12} {:>8} {:>10}\n", "mode", "epochs", "median_ms", "mean_ms", "passes", "vs_gcond");
    for r in &table.rows {
        let ratio = table.ratio(r.mode).map_or_else(|| "-".into(), |v| format!("{v:.3}"));
        out.push_str(&format!(
            "{:<8} {:>8} {:>12.3} {:>12.3} {:>8} {:>10}\n",
            r.mode.to_string(),
            r.epochs,
            r.epoch_ms_median,
            r.epoch_ms_mean,
            r.passes,
            ratio
        ));
    }
    out
}

