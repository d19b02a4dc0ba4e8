//! Gradient-matching condensation: synthetic initialization, the alternating feature /
//! generator schedule, inner model steps, and the run loop over initializations.

pub mod generator;
pub mod matching;

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use generator::{generate_adjacency, GeneratorParams};
pub use matching::{apply_perturbation, matching_distance, matching_pass, OriginalSide, PassOutput, PassPerturbation};

use crate::absorber::{self, Absorber, AbsorberConfig, AbsorberSettings};
use crate::error::{Error, Result};
use crate::graph::{derive_budget, normalize_dense, split_budget, BudgetRule, Graph, SyntheticGraph};
use crate::linalg::Matrix;
use crate::models::{init_params, InnerOptimizer, ModelDims, ModelKind, ModelParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Gcond,
    Groc,
    Timgroc,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::Gcond, Mode::Groc, Mode::Timgroc];
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Gcond => "gcond",
            Mode::Groc => "groc",
            Mode::Timgroc => "timgroc",
        })
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gcond" => Ok(Mode::Gcond),
            "groc" => Ok(Mode::Groc),
            "timgroc" => Ok(Mode::Timgroc),
            other => Err(Error::InvalidArgument(format!(
                "unknown mode {other:?} (expected gcond, groc or timgroc)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CondenseConfig {
    pub mode: Mode,
    /// Synthetic nodes as a fraction of original nodes.
    pub ratio: f64,
    /// Fixed synthetic node total; takes precedence over `ratio`.
    pub nodes: Option<usize>,
    pub budget_rule: BudgetRule,
    /// Epochs per initialization.
    pub epochs: usize,
    /// Number of model initializations.
    pub inits: usize,
    /// Feature-update epochs per alternation block.
    pub omega1: usize,
    /// Generator-update epochs per alternation block.
    pub omega2: usize,
    pub eta1: f64,
    pub eta2: f64,
    /// Generated entries at or below this are dropped from the final adjacency.
    pub rho: f64,
    pub hidden: usize,
    pub hops: usize,
    pub generator_hidden: usize,
    /// Original training nodes per class used by one matching pass.
    pub batch_cap: usize,
    pub inner: InnerOptimizer,
    pub absorber: AbsorberConfig,
    pub seed: u64,
}

impl Default for CondenseConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Gcond,
            ratio: 0.004,
            nodes: None,
            budget_rule: BudgetRule::default(),
            epochs: 1000,
            inits: 3,
            omega1: 10,
            omega2: 1,
            eta1: 0.01,
            eta2: 0.01,
            rho: 0.5,
            hidden: 256,
            hops: 2,
            generator_hidden: 128,
            batch_cap: 256,
            inner: InnerOptimizer::default(),
            absorber: AbsorberConfig::default(),
            seed: 0,
        }
    }
}

impl CondenseConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.omega1 == 0 || self.omega2 == 0 {
            return bad(format!("omega1 and omega2 must be at least 1, got {} and {}", self.omega1, self.omega2));
        }
        if !(self.rho >= 0.0 && self.rho < 1.0) {
            return bad(format!("rho must lie in [0, 1), got {}", self.rho));
        }
        if !(self.eta1 > 0.0 && self.eta2 > 0.0) {
            return bad(format!("eta1 and eta2 must be positive, got {} and {}", self.eta1, self.eta2));
        }
        if self.inits == 0 || self.hidden == 0 || self.generator_hidden == 0 {
            return bad("inits, hidden and generator_hidden must be positive".into());
        }
        if self.batch_cap == 0 {
            return bad("batch_cap must be positive".into());
        }
        if self.nodes.is_none() && !(self.ratio > 0.0 && self.ratio < 1.0) {
            return bad(format!("ratio must lie in (0, 1), got {}", self.ratio));
        }
        self.inner.validate()?;
        self.absorber.validate()
    }

    pub fn budget(&self, graph: &Graph) -> Result<Vec<usize>> {
        match self.nodes {
            Some(total) => split_budget(total, graph.num_classes(), self.budget_rule),
            None => derive_budget(self.ratio, graph.num_nodes(), graph.num_classes(), self.budget_rule),
        }
    }

    /// Whether epoch `t` updates features (otherwise the generator).
    pub fn updates_features(&self, t: usize) -> bool {
        t % (self.omega1 + self.omega2) < self.omega1
    }
}

/// Independent random streams of one run, all derived from the run seed.
mod stream {
    pub const INIT: u64 = 1;
    pub const GENERATOR: u64 = 2;
    pub const THETA: u64 = 3;
    pub const BATCH: u64 = 4;
    pub const DELTA: u64 = 5;
}

pub(crate) fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Picks distinct training nodes of each class and copies their features.
///
/// Synthetic rows are ordered by class; the adjacency starts empty.
pub fn init_synthetic(graph: &Graph, budget: &[usize], seed: u64) -> Result<SyntheticGraph> {
    if budget.len() != graph.num_classes() {
        return Err(Error::InvalidArgument(format!(
            "budget has {} entries for {} classes",
            budget.len(),
            graph.num_classes()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let by_class = graph.train_nodes_by_class();
    let mut picked = Vec::new();
    let mut labels = Vec::new();
    for (c, (&count, nodes)) in budget.iter().zip(&by_class).enumerate() {
        if nodes.is_empty() {
            return Err(Error::InvalidArgument(format!("class {c} has no training nodes")));
        }
        if count > nodes.len() {
            return Err(Error::InvalidArgument(format!(
                "class {c} needs {count} synthetic nodes but has {} training nodes",
                nodes.len()
            )));
        }
        let mut chosen: Vec<usize> = index::sample(&mut rng, nodes.len(), count)
            .into_iter()
            .map(|i| nodes[i])
            .collect();
        chosen.sort_unstable();
        picked.extend(chosen);
        labels.extend(std::iter::repeat_n(c, count));
    }
    let n = picked.len();
    Ok(SyntheticGraph {
        features: crate::linalg::gather_rows(graph.features(), &picked),
        adjacency: Matrix::zeros((n, n)),
        labels,
        num_classes: graph.num_classes(),
    })
}

/// Zeroes entries at or below `rho` and the diagonal.
pub fn sparsify(adjacency: &Matrix, rho: f64) -> Result<Matrix> {
    if !(0.0..1.0).contains(&rho) {
        return Err(Error::InvalidArgument(format!("rho must lie in [0, 1), got {rho}")));
    }
    Ok(Matrix::from_shape_fn(adjacency.dim(), |(i, j)| {
        let v = adjacency[[i, j]];
        if i == j || v <= rho {
            0.0
        } else {
            v
        }
    }))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UpdateTarget {
    Features,
    Generator,
}

/// One absorber round inside an epoch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub distance: f64,
    /// `max |delta|` after this round's update.
    pub linf_delta: f64,
    /// Mask entries that changed when gradients were located this round.
    pub mask_churn: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub init: usize,
    pub epoch: usize,
    pub update: UpdateTarget,
    /// Distance the synthetic update descended: the single pass, or the round mean.
    pub distance: f64,
    pub rounds: Vec<RoundRecord>,
    pub elapsed_ms: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MatchReport {
    pub epochs: Vec<EpochRecord>,
    /// Forward and reverse matching passes executed.
    pub passes: u64,
}

/// The mutable state of one condensation run.
pub struct Condenser {
    pub(crate) config: CondenseConfig,
    original: OriginalSide,
    pub(crate) synthetic: SyntheticGraph,
    pub(crate) generator: GeneratorParams,
    pub(crate) theta: ModelParams,
    pub(crate) settings: AbsorberSettings,
    /// Persistent perturbation state in TimGroC mode.
    pub(crate) absorber: Option<Absorber>,
    theta_rng: ChaCha8Rng,
    batch_rng: ChaCha8Rng,
    pub(crate) delta_rng: ChaCha8Rng,
    passes: u64,
    init: usize,
    report: MatchReport,
}

impl Condenser {
    pub fn new(config: &CondenseConfig, graph: &Graph) -> Result<Self> {
        config.validate()?;
        let budget = config.budget(graph)?;
        let init_seed = stream_rng(config.seed, stream::INIT).gen();
        let synthetic = init_synthetic(graph, &budget, init_seed)?;
        let generator = GeneratorParams::init(
            graph.num_features(),
            config.generator_hidden,
            &mut stream_rng(config.seed, stream::GENERATOR),
        );
        let settings = config.absorber.resolve(&synthetic.features)?;
        let original = OriginalSide::new(graph, config.hops, config.batch_cap)?;
        let mut theta_rng = stream_rng(config.seed, stream::THETA);
        let theta = Self::draw_theta(config, graph.num_features(), graph.num_classes(), &mut theta_rng)?;
        Ok(Self {
            config: config.clone(),
            original,
            synthetic,
            generator,
            theta,
            settings,
            absorber: None,
            theta_rng,
            batch_rng: stream_rng(config.seed, stream::BATCH),
            delta_rng: stream_rng(config.seed, stream::DELTA),
            passes: 0,
            init: 0,
            report: MatchReport::default(),
        })
    }

    fn draw_theta(config: &CondenseConfig, features: usize, classes: usize, rng: &mut ChaCha8Rng) -> Result<ModelParams> {
        let dims = ModelDims {
            features,
            hidden: config.hidden,
            classes,
        };
        let mut theta = init_params(ModelKind::Sgc, dims, rng.gen())?;
        theta.hops = config.hops;
        Ok(theta)
    }

    /// Starts initialization `k` with a fresh model draw; the synthetic graph carries over.
    pub fn begin_init(&mut self, k: usize) -> Result<()> {
        if k > 0 {
            let (d, c) = (self.synthetic.features.ncols(), self.synthetic.num_classes);
            self.theta = Self::draw_theta(&self.config, d, c, &mut self.theta_rng)?;
        }
        self.init = k;
        self.absorber = None;
        Ok(())
    }

    /// Runs epoch `t` of the current initialization in the configured mode.
    pub fn epoch(&mut self, t: usize) -> Result<EpochRecord> {
        let start = Instant::now();
        let (update, distance, rounds) = match self.config.mode {
            Mode::Gcond => self.gcond_epoch(t)?,
            Mode::Groc => absorber::groc_epoch(self, t)?,
            Mode::Timgroc => absorber::timgroc_epoch(self, t)?,
        };
        let record = EpochRecord {
            init: self.init,
            epoch: t,
            update,
            distance,
            rounds,
            elapsed_ms: start.elapsed().as_secs_f64() * 1e3,
        };
        self.report.epochs.push(record.clone());
        Ok(record)
    }

    fn gcond_epoch(&mut self, t: usize) -> Result<(UpdateTarget, f64, Vec<RoundRecord>)> {
        let batches = self.sample_batches();
        let out = self.pass(&batches, None)?;
        let update = self.update_synthetic(t, &out.grad_features, &out.grad_generator);
        self.inner_step()?;
        Ok((update, out.distance, Vec::new()))
    }

    pub(crate) fn sample_batches(&mut self) -> Vec<Vec<usize>> {
        self.original.sample_batches(&mut self.batch_rng)
    }

    /// One full matching pass: original-side targets, then the synthetic tape.
    pub(crate) fn pass(&mut self, batches: &[Vec<usize>], perturbation: Option<PassPerturbation<'_>>) -> Result<PassOutput> {
        let targets = self.original.target_grads(batches, &self.theta)?;
        let out = matching_pass(
            &self.synthetic.features,
            &self.synthetic.labels,
            self.synthetic.num_classes,
            &self.generator,
            &self.theta,
            targets,
            perturbation,
        )?;
        self.passes += 1;
        Ok(out)
    }

    /// Descends either the features or the generator, per the alternation schedule.
    pub(crate) fn update_synthetic(&mut self, t: usize, grad_features: &Matrix, grad_generator: &GeneratorParams) -> UpdateTarget {
        if self.config.updates_features(t) {
            self.synthetic.features.scaled_add(-self.config.eta1, grad_features);
            UpdateTarget::Features
        } else {
            self.generator.scaled_add(-self.config.eta2, grad_generator);
            UpdateTarget::Generator
        }
    }

    /// Inner optimizer steps of the matching model on the clean synthetic graph.
    pub(crate) fn inner_step(&mut self) -> Result<()> {
        let adjacency = generate_adjacency(&self.synthetic.features, &self.generator)?;
        let norm = normalize_dense(&adjacency)?;
        let mut h = self.synthetic.features.clone();
        for _ in 0..self.theta.hops {
            h = norm.dot(&h);
        }
        self.config.inner.step_sgc(&h, &self.synthetic.labels, &mut self.theta)
    }

    /// The current synthetic graph with a freshly generated, sparsified adjacency.
    pub fn snapshot(&self) -> Result<SyntheticGraph> {
        let generated = generate_adjacency(&self.synthetic.features, &self.generator)?;
        Ok(SyntheticGraph {
            adjacency: sparsify(&generated, self.config.rho)?,
            ..self.synthetic.clone()
        })
    }

    pub fn features(&self) -> &Matrix {
        &self.synthetic.features
    }

    pub fn set_features(&mut self, features: Matrix) -> Result<()> {
        if features.dim() != self.synthetic.features.dim() {
            return Err(crate::error::shape_err!(
                "replacement features {:?} for {:?}",
                features.dim(),
                self.synthetic.features.dim()
            ));
        }
        self.synthetic.features = features;
        Ok(())
    }

    pub fn labels(&self) -> &[usize] {
        &self.synthetic.labels
    }

    pub fn generator(&self) -> &GeneratorParams {
        &self.generator
    }

    pub fn theta(&self) -> &ModelParams {
        &self.theta
    }

    pub fn settings(&self) -> &AbsorberSettings {
        &self.settings
    }

    pub fn absorber(&self) -> Option<&Absorber> {
        self.absorber.as_ref()
    }

    pub fn passes(&self) -> u64 {
        self.passes
    }

    pub fn config(&self) -> &CondenseConfig {
        &self.config
    }

    pub fn report(&self) -> MatchReport {
        MatchReport {
            passes: self.passes,
            ..self.report.clone()
        }
    }
}

#[derive(Debug, Clone)]
pub struct CondenseOutcome {
    pub graph: SyntheticGraph,
    pub report: MatchReport,
    pub settings: AbsorberSettings,
}

pub fn run_condense(config: &CondenseConfig, graph: &Graph) -> Result<CondenseOutcome> {
    run_condense_with(config, graph, |_, _| Ok(()))
}

/// [`run_condense`] with a callback after every epoch.
pub fn run_condense_with(
    config: &CondenseConfig,
    graph: &Graph,
    mut observer: impl FnMut(&Condenser, &EpochRecord) -> Result<()>,
) -> Result<CondenseOutcome> {
    let mut condenser = Condenser::new(config, graph)?;
    for k in 0..config.inits {
        condenser.begin_init(k)?;
        for t in 0..config.epochs {
            let record = condenser.epoch(t)?;
            observer(&condenser, &record)?;
        }
    }
    Ok(CondenseOutcome {
        graph: condenser.snapshot()?,
        report: condenser.report(),
        settings: condenser.settings,
    })
}
