//! Evaluation protocol: train backbones on condensed graphs or coresets, score them on the
//! original test nodes, aggregate over seeds, and time the condensation modes.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::condense::{run_condense, run_condense_with, CondenseConfig, CondenseOutcome, Condenser, Mode};
use crate::coreset::{build_coreset, Coreset, CoresetMethod};
use crate::error::{Error, Result};
use crate::graph::{normalize_dense, normalize_sparse, Graph, NormAdj, SyntheticGraph};
use crate::linalg::{FeatureMatrix, Matrix};
use crate::models::{train_model, EvalTarget, ModelKind, TrainConfig, TrainOutcome};

/// Feature matrices at or below this density are multiplied in sparse form.
const SPARSE_FEATURE_DENSITY: f64 = 0.1;

/// How the small training graph is obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Method {
    Condense(Mode),
    Coreset(CoresetMethod),
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Method::Condense(m) => m.fmt(f),
            Method::Coreset(c) => c.fmt(f),
        }
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        s.parse()
            .map(Method::Condense)
            .or_else(|_| s.parse().map(Method::Coreset))
            .map_err(|_| {
                Error::InvalidArgument(format!(
                    "unknown method {s:?} (expected gcond, groc, timgroc, random, herding or kcenter)"
                ))
            })
    }
}

impl TryFrom<String> for Method {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Method> for String {
    fn from(m: Method) -> String {
        m.to_string()
    }
}

/// The original graph with everything a scoring pass needs precomputed.
#[derive(Debug, Clone)]
pub struct PreparedGraph {
    adj: NormAdj,
    features: FeatureMatrix,
    labels: Vec<usize>,
    train: Vec<usize>,
    val: Vec<usize>,
    test: Vec<usize>,
}

impl PreparedGraph {
    pub fn new(graph: &Graph) -> Result<Self> {
        let splits = graph.splits();
        Ok(Self {
            adj: graph.normalized_adjacency()?,
            features: FeatureMatrix::auto(graph.features(), SPARSE_FEATURE_DENSITY),
            labels: graph.labels().to_vec(),
            train: splits.train.clone(),
            val: splits.val.clone(),
            test: splits.test.clone(),
        })
    }

    pub fn target(&self) -> EvalTarget<'_> {
        EvalTarget {
            adj: &self.adj,
            features: &self.features,
            labels: &self.labels,
            train: &self.train,
            val: &self.val,
            test: &self.test,
        }
    }
}

/// A small graph to train on: every node is a training node.
#[derive(Debug, Clone, Copy)]
pub enum Condensed<'a> {
    Synthetic(&'a SyntheticGraph),
    Coreset(&'a Coreset),
    /// The original graph itself, trained on its own training split.
    Full,
}

struct TrainingGraph {
    adj: NormAdj,
    features: FeatureMatrix,
    labels: Vec<usize>,
    rows: Vec<usize>,
}

impl TrainingGraph {
    fn target(&self) -> EvalTarget<'_> {
        EvalTarget {
            adj: &self.adj,
            features: &self.features,
            labels: &self.labels,
            train: &self.rows,
            val: &[],
            test: &[],
        }
    }
}

fn training_graph(condensed: Condensed<'_>, graph: &Graph) -> Result<Option<TrainingGraph>> {
    let (adj, features, labels) = match condensed {
        Condensed::Synthetic(s) => (
            NormAdj::Dense(normalize_dense(&s.adjacency)?),
            s.features.clone(),
            s.labels.clone(),
        ),
        Condensed::Coreset(c) => (
            NormAdj::Sparse(normalize_sparse(&c.induced_adjacency(graph))?),
            c.features(graph),
            c.labels.clone(),
        ),
        Condensed::Full => return Ok(None),
    };
    if labels.is_empty() {
        return Err(Error::InvalidArgument("condensed graph has no nodes".into()));
    }
    Ok(Some(TrainingGraph {
        adj,
        features: FeatureMatrix::Dense(features),
        rows: (0..labels.len()).collect(),
        labels,
    }))
}

/// Trains `backbone` on the condensed graph, picks the checkpoint by original validation
/// accuracy, and reports original test accuracy.
pub fn train_eval_backbone(
    condensed: Condensed<'_>,
    backbone: ModelKind,
    graph: &Graph,
    prepared: &PreparedGraph,
    config: &TrainConfig,
    seed: u64,
) -> Result<TrainOutcome> {
    let score = prepared.target();
    match training_graph(condensed, graph)? {
        Some(fit) => train_model(backbone, &fit.target(), &score, config, seed),
        None => train_model(backbone, &score, &score, config, seed),
    }
}

/// Mean and sample standard deviation (`n - 1` denominator; zero for fewer than two values).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    if v.len() % 2 == 1 {
        v[mid]
    } else {
        (v[mid - 1] + v[mid]) / 2.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProtocolConfig {
    /// Takes precedence over `condense.mode`.
    pub method: Method,
    pub condense: CondenseConfig,
    pub backbone: ModelKind,
    pub train: TrainConfig,
    /// One condensed graph (or coreset draw) per seed.
    pub condense_seeds: Vec<u64>,
    /// One backbone training per seed on every condensed graph.
    pub eval_seeds: Vec<u64>,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        Self {
            method: Method::Condense(Mode::Gcond),
            condense: CondenseConfig::default(),
            backbone: ModelKind::Gcn,
            train: TrainConfig::default(),
            condense_seeds: vec![0, 1, 2],
            eval_seeds: vec![0, 1, 2],
        }
    }
}

impl ProtocolConfig {
    pub fn validate(&self) -> Result<()> {
        if self.condense_seeds.is_empty() || self.eval_seeds.is_empty() {
            return Err(Error::Config("condense_seeds and eval_seeds must be nonempty".into()));
        }
        self.condense.validate()?;
        self.train.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRun {
    pub condense_seed: u64,
    pub eval_seed: u64,
    pub test_accuracy: f64,
    pub val_accuracy: f64,
    pub best_epoch: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphSummary {
    pub condense_seed: u64,
    pub nodes: usize,
    pub edges: usize,
    /// Wall-clock seconds to build the graph.
    pub seconds: f64,
    /// Median per-epoch milliseconds; absent for coresets.
    pub epoch_ms_median: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub dataset: String,
    pub method: Method,
    pub backbone: ModelKind,
    /// Condensed nodes over original nodes.
    pub ratio: f64,
    pub graphs: Vec<GraphSummary>,
    pub runs: Vec<EvalRun>,
    pub mean: f64,
    pub std: f64,
}

enum Built {
    Synthetic(SyntheticGraph),
    Coreset(Coreset),
}

impl Built {
    fn as_condensed(&self) -> Condensed<'_> {
        match self {
            Built::Synthetic(s) => Condensed::Synthetic(s),
            Built::Coreset(c) => Condensed::Coreset(c),
        }
    }
}

fn build(graph: &Graph, protocol: &ProtocolConfig, seed: u64) -> Result<(Built, GraphSummary)> {
    let start = Instant::now();
    let (built, nodes, edges, epoch_ms_median) = match protocol.method {
        Method::Condense(mode) => {
            let config = CondenseConfig {
                mode,
                seed,
                ..protocol.condense.clone()
            };
            let outcome = run_condense(&config, graph)?;
            let epoch_ms: Vec<f64> = outcome.report.epochs.iter().map(|e| e.elapsed_ms).collect();
            let (n, e) = (outcome.graph.num_nodes(), outcome.graph.num_edges());
            (Built::Synthetic(outcome.graph), n, e, Some(median(&epoch_ms)))
        }
        Method::Coreset(method) => {
            let budget = protocol.condense.budget(graph)?;
            let coreset = build_coreset(method, graph, &budget, seed)?;
            let edges = coreset.induced_adjacency(graph).nnz() / 2;
            let n = coreset.nodes.len();
            (Built::Coreset(coreset), n, edges, None)
        }
    };
    let summary = GraphSummary {
        condense_seed: seed,
        nodes,
        edges,
        seconds: start.elapsed().as_secs_f64(),
        epoch_ms_median,
    };
    Ok((built, summary))
}

/// Builds one graph per condensation seed and trains one backbone per evaluation seed on
/// each. Work runs on the current rayon pool; results do not depend on its size.
pub fn protocol_run(graph: &Graph, protocol: &ProtocolConfig, dataset: &str) -> Result<EvalReport> {
    protocol.validate()?;
    let prepared = PreparedGraph::new(graph)?;
    let built: Vec<(Built, GraphSummary)> = protocol
        .condense_seeds
        .par_iter()
        .map(|&seed| build(graph, protocol, seed))
        .collect::<Result<_>>()?;
    let jobs: Vec<(usize, u64)> = (0..built.len())
        .flat_map(|g| protocol.eval_seeds.iter().map(move |&s| (g, s)))
        .collect();
    let runs: Vec<EvalRun> = jobs
        .par_iter()
        .map(|&(g, eval_seed)| {
            let (graph_built, summary) = &built[g];
            let outcome = train_eval_backbone(
                graph_built.as_condensed(),
                protocol.backbone,
                graph,
                &prepared,
                &protocol.train,
                eval_seed,
            )?;
            Ok(EvalRun {
                condense_seed: summary.condense_seed,
                eval_seed,
                test_accuracy: outcome.test_accuracy,
                val_accuracy: outcome.val_accuracy,
                best_epoch: outcome.best_epoch,
            })
        })
        .collect::<Result<_>>()?;
    let accuracies: Vec<f64> = runs.iter().map(|r| r.test_accuracy).collect();
    let (mean, std) = mean_std(&accuracies);
    let graphs: Vec<GraphSummary> = built.into_iter().map(|(_, s)| s).collect();
    Ok(EvalReport {
        dataset: dataset.to_string(),
        method: protocol.method,
        backbone: protocol.backbone,
        ratio: graphs[0].nodes as f64 / graph.num_nodes() as f64,
        graphs,
        runs,
        mean,
        std,
    })
}

/// Evaluates one existing condensed graph under every evaluation seed.
pub fn evaluate_condensed(
    condensed: &SyntheticGraph,
    graph: &Graph,
    backbone: ModelKind,
    train: &TrainConfig,
    eval_seeds: &[u64],
) -> Result<Vec<TrainOutcome>> {
    let prepared = PreparedGraph::new(graph)?;
    eval_seeds
        .par_iter()
        .map(|&seed| train_eval_backbone(Condensed::Synthetic(condensed), backbone, graph, &prepared, train, seed))
        .collect()
}

/// Test accuracy of a backbone trained on the condensation snapshot after a given epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    /// Epochs completed across all initializations.
    pub step: usize,
    pub init: usize,
    pub epoch: usize,
    pub test_accuracy: f64,
}

/// Condenses while scoring a snapshot every `every` epochs.
pub fn condense_with_curve(
    graph: &Graph,
    config: &CondenseConfig,
    backbone: ModelKind,
    train: &TrainConfig,
    every: usize,
    eval_seed: u64,
) -> Result<(CondenseOutcome, Vec<CurvePoint>)> {
    if every == 0 {
        return Err(Error::Config("curve interval must be positive".into()));
    }
    let prepared = PreparedGraph::new(graph)?;
    let mut points = Vec::new();
    let mut step = 0;
    let outcome = run_condense_with(config, graph, |condenser: &Condenser, record| {
        step += 1;
        if step % every == 0 {
            let snapshot = condenser.snapshot()?;
            let outcome = train_eval_backbone(Condensed::Synthetic(&snapshot), backbone, graph, &prepared, train, eval_seed)?;
            points.push(CurvePoint {
                step,
                init: record.init,
                epoch: record.epoch,
                test_accuracy: outcome.test_accuracy,
            });
        }
        Ok(())
    })?;
    Ok((outcome, points))
}

/// Means of the final quarter of the curve and of the three quarters before it.
pub fn curve_quarters(points: &[CurvePoint]) -> Option<(f64, f64)> {
    if points.len() < 4 {
        return None;
    }
    let split = points.len() - points.len() / 4;
    let acc: Vec<f64> = points.iter().map(|p| p.test_accuracy).collect();
    Some((mean_std(&acc[split..]).0, mean_std(&acc[..split]).0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingRow {
    pub mode: Mode,
    pub epochs: usize,
    pub total_seconds: f64,
    pub epoch_ms_median: f64,
    pub epoch_ms_mean: f64,
    pub passes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingTable {
    pub rows: Vec<TimingRow>,
    /// Per-epoch median of each mode over the GCond median, keyed by mode.
    pub ratios_to_gcond: Vec<(Mode, f64)>,
}

impl TimingTable {
    pub fn ratio(&self, mode: Mode) -> Option<f64> {
        self.ratios_to_gcond.iter().find(|(m, _)| *m == mode).map(|&(_, r)| r)
    }
}

/// Times `epochs` epochs of one initialization per mode on the calling thread. Modes are
/// interleaved epoch by epoch so drift in machine load hits all of them alike.
pub fn time_profile(graph: &Graph, config: &CondenseConfig, modes: &[Mode], epochs: usize) -> Result<TimingTable> {
    if modes.is_empty() || epochs == 0 {
        return Err(Error::Config("profiling needs at least one mode and one epoch".into()));
    }
    let mut condensers = modes
        .iter()
        .map(|&mode| {
            let cfg = CondenseConfig {
                mode,
                inits: 1,
                epochs,
                ..config.clone()
            };
            let mut c = Condenser::new(&cfg, graph)?;
            c.begin_init(0)?;
            Ok(c)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut times = vec![Vec::with_capacity(epochs); modes.len()];
    for t in 0..epochs {
        for (c, ts) in condensers.iter_mut().zip(&mut times) {
            ts.push(c.epoch(t)?.elapsed_ms);
        }
    }
    let rows: Vec<TimingRow> = modes
        .iter()
        .zip(&times)
        .zip(&condensers)
        .map(|((&mode, ts), c)| TimingRow {
            mode,
            epochs,
            total_seconds: ts.iter().sum::<f64>() / 1e3,
            epoch_ms_median: median(ts),
            epoch_ms_mean: mean_std(ts).0,
            passes: c.passes(),
        })
        .collect();
    let base = rows.iter().find(|r| r.mode == Mode::Gcond).map(|r| r.epoch_ms_median);
    let ratios_to_gcond = match base {
        Some(b) => rows.iter().map(|r| (r.mode, r.epoch_ms_median / b)).collect(),
        None => Vec::new(),
    };
    Ok(TimingTable { rows, ratios_to_gcond })
}

/// Copy of `s` with its labels permuted.
pub fn shuffle_train_labels(s: &SyntheticGraph, seed: u64) -> SyntheticGraph {
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    let mut labels = s.labels.clone();
    labels.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
    SyntheticGraph {
        labels,
        ..s.clone()
    }
}

/// Synthetic graph made of real training rows with no edges, for baselines and tests.
pub fn rows_as_synthetic(graph: &Graph, rows: &[usize], labels: &[usize]) -> SyntheticGraph {
    let n = rows.len();
    SyntheticGraph {
        features: crate::linalg::gather_rows(graph.features(), rows),
        adjacency: Matrix::zeros((n, n)),
        labels: labels.to_vec(),
        num_classes: graph.num_classes(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::synthetic::PlantedPartition;

    fn quick_train() -> TrainConfig {
        TrainConfig {
            epochs: 60,
            hidden: 32,
            ..Default::default()
        }
    }

    #[test]
    fn mean_std_examples() {
        let (m, s) = mean_std(&[0.7; 9]);
        assert!((m - 0.7).abs() < 1e-15 && s < 1e-15);
        let (m, s) = mean_std(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        assert!((s - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert_eq!(mean_std(&[3.0]), (3.0, 0.0));
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }

    #[test]
    fn method_names_round_trip() {
        for name in ["gcond", "groc", "timgroc", "random", "herding", "kcenter"] {
            assert_eq!(name.parse::<Method>().unwrap().to_string(), name);
        }
        assert!("bogus".parse::<Method>().is_err());
        let json = serde_json::to_string(&Method::Coreset(CoresetMethod::Kcenter)).unwrap();
        assert_eq!(json, "\"kcenter\"");
    }

    #[test]
    fn full_graph_beats_shuffled_labels() {
        let g = PlantedPartition::small(8).generate().unwrap();
        let prepared = PreparedGraph::new(&g).unwrap();
        let full = train_eval_backbone(Condensed::Full, ModelKind::Gcn, &g, &prepared, &quick_train(), 0).unwrap();
        assert!(full.test_accuracy > 0.7, "{}", full.test_accuracy);

        let train = &g.splits().train;
        let labels: Vec<usize> = train.iter().map(|&n| g.labels()[n]).collect();
        let real = rows_as_synthetic(&g, train, &labels);
        let shuffled = shuffle_train_labels(&real, 3);
        let mut acc = Vec::new();
        for seed in 0..3 {
            let o = train_eval_backbone(Condensed::Synthetic(&shuffled), ModelKind::Mlp, &g, &prepared, &quick_train(), seed)
                .unwrap();
            acc.push(o.test_accuracy);
        }
        let chance = 1.0 / g.num_classes() as f64;
        assert!((mean_std(&acc).0 - chance).abs() < 0.2, "{acc:?}");
    }

    #[test]
    fn single_class_condensed_is_rejected() {
        let g = PlantedPartition::small(8).generate().unwrap();
        let prepared = PreparedGraph::new(&g).unwrap();
        let rows = &g.train_nodes_by_class()[0][..3];
        let s = rows_as_synthetic(&g, rows, &[0, 0, 0]);
        let err = train_eval_backbone(Condensed::Synthetic(&s), ModelKind::Sgc, &g, &prepared, &quick_train(), 0);
        assert!(matches!(err, Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn protocol_runs_are_reproducible() {
        let g = PlantedPartition::small(8).generate().unwrap();
        let protocol = ProtocolConfig {
            method: Method::Condense(Mode::Timgroc),
            condense: CondenseConfig {
                mode: Mode::Timgroc,
                nodes: Some(6),
                epochs: 6,
                inits: 1,
                hidden: 16,
                generator_hidden: 8,
                ..Default::default()
            },
            train: quick_train(),
            ..Default::default()
        };
        let a = protocol_run(&g, &protocol, "small").unwrap();
        assert_eq!(a.runs.len(), 9);
        let strip = |r: &EvalReport| (r.runs.clone(), r.mean, r.std);
        let b = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap()
            .install(|| protocol_run(&g, &protocol, "small").unwrap());
        assert_eq!(strip(&a), strip(&b));

        let coreset = ProtocolConfig {
            method: Method::Coreset(CoresetMethod::Herding),
            ..protocol.clone()
        };
        let c = protocol_run(&g, &coreset, "small").unwrap();
        assert_eq!(c.graphs[0].nodes, 6);
        assert!(c.graphs.iter().all(|s| s.epoch_ms_median.is_none()));
    }

    #[test]
    fn profile_counts_passes() {
        let g = PlantedPartition::small(8).generate().unwrap();
        let cfg = CondenseConfig {
            nodes: Some(6),
            hidden: 16,
            generator_hidden: 8,
            ..Default::default()
        };
        let table = time_profile(&g, &cfg, &Mode::ALL, 3).unwrap();
        let passes: Vec<u64> = table.rows.iter().map(|r| r.passes).collect();
        assert_eq!(passes, vec![3, 9, 3]);
        assert_eq!(table.ratio(Mode::Gcond), Some(1.0));
        assert!(time_profile(&g, &cfg, &[], 3).is_err());
    }

    #[test]
    fn curve_points_and_quarters() {
        let g = PlantedPartition::small(8).generate().unwrap();
        let cfg = CondenseConfig {
            nodes: Some(6),
            epochs: 4,
            inits: 2,
            hidden: 16,
            generator_hidden: 8,
            ..Default::default()
        };
        let (_, points) = condense_with_curve(&g, &cfg, ModelKind::Sgc, &quick_train(), 2, 0).unwrap();
        let steps: Vec<usize> = points.iter().map(|p| p.step).collect();
        assert_eq!(steps, vec![2, 4, 6, 8]);
        assert_eq!((points[2].init, points[2].epoch), (1, 1));
        let fake: Vec<CurvePoint> = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8]
            .iter()
            .enumerate()
            .map(|(i, &a)| CurvePoint { step: i, init: 0, epoch: i, test_accuracy: a })
            .collect();
        let (last, rest) = curve_quarters(&fake).unwrap();
        assert!((last - 0.75).abs() < 1e-12 && (rest - 0.35).abs() < 1e-12);
    }
}
