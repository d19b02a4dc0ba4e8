//! Random, Herding and K-Center node selection at a per-class budget.
//!
//! Herding and K-Center work on 2-hop propagated features of the training nodes.

use std::fmt;
use std::str::FromStr;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{propagate_rows, Graph, NormAdj};
use crate::linalg::{CsrMatrix, Matrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CoresetMethod {
    Random,
    Herding,
    Kcenter,
}

impl CoresetMethod {
    pub const ALL: [CoresetMethod; 3] = [CoresetMethod::Random, CoresetMethod::Herding, CoresetMethod::Kcenter];
}

impl fmt::Display for CoresetMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CoresetMethod::Random => "random",
            CoresetMethod::Herding => "herding",
            CoresetMethod::Kcenter => "kcenter",
        })
    }
}

impl FromStr for CoresetMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "").as_str() {
            "random" => Ok(CoresetMethod::Random),
            "herding" => Ok(CoresetMethod::Herding),
            "kcenter" => Ok(CoresetMethod::Kcenter),
            other => Err(Error::InvalidArgument(format!(
                "unknown coreset method {other:?} (expected random, herding or kcenter)"
            ))),
        }
    }
}

/// Selected original nodes, grouped by class in class order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Coreset {
    pub method: CoresetMethod,
    pub budget: Vec<usize>,
    pub nodes: Vec<usize>,
    pub labels: Vec<usize>,
}

impl Coreset {
    /// Original adjacency restricted to the selected nodes.
    pub fn induced_adjacency(&self, graph: &Graph) -> CsrMatrix {
        graph.adjacency().select(&self.nodes, &self.nodes)
    }

    pub fn features(&self, graph: &Graph) -> Matrix {
        crate::linalg::gather_rows(graph.features(), &self.nodes)
    }
}

fn check_budget(graph: &Graph, budget: &[usize]) -> Result<Vec<Vec<usize>>> {
    if budget.len() != graph.num_classes() {
        return Err(Error::InvalidArgument(format!(
            "budget has {} entries for {} classes",
            budget.len(),
            graph.num_classes()
        )));
    }
    let by_class = graph.train_nodes_by_class();
    for (c, (&b, nodes)) in budget.iter().zip(&by_class).enumerate() {
        if b > nodes.len() {
            return Err(Error::InvalidArgument(format!(
                "class {c} budget {b} exceeds its {} training nodes",
                nodes.len()
            )));
        }
    }
    Ok(by_class)
}

fn assemble(method: CoresetMethod, budget: &[usize], picks: Vec<Vec<usize>>) -> Coreset {
    let labels = picks
        .iter()
        .enumerate()
        .flat_map(|(c, p)| std::iter::repeat_n(c, p.len()))
        .collect();
    Coreset {
        method,
        budget: budget.to_vec(),
        nodes: picks.into_iter().flatten().collect(),
        labels,
    }
}

pub fn random_coreset(graph: &Graph, budget: &[usize], seed: u64) -> Result<Coreset> {
    let by_class = check_budget(graph, budget)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picks = by_class
        .iter()
        .zip(budget)
        .map(|(nodes, &b)| {
            index::sample(&mut rng, nodes.len(), b)
                .into_iter()
                .map(|i| nodes[i])
                .collect()
        })
        .collect();
    Ok(assemble(CoresetMethod::Random, budget, picks))
}

/// 2-hop propagated features of each class's training nodes.
fn class_embeddings(graph: &Graph, by_class: &[Vec<usize>]) -> Result<Vec<Matrix>> {
    let NormAdj::Sparse(adj) = graph.normalized_adjacency()? else {
        unreachable!("original graphs normalize to sparse form")
    };
    by_class
        .iter()
        .map(|nodes| propagate_rows(&adj, graph.features(), nodes, 2))
        .collect()
}

fn select_with(
    method: CoresetMethod,
    graph: &Graph,
    budget: &[usize],
    pick: fn(&Matrix, usize) -> Vec<usize>,
) -> Result<Coreset> {
    let by_class = check_budget(graph, budget)?;
    let embeddings = class_embeddings(graph, &by_class)?;
    let picks = by_class
        .iter()
        .zip(&embeddings)
        .zip(budget)
        .map(|((nodes, emb), &b)| pick(emb, b).into_iter().map(|i| nodes[i]).collect())
        .collect();
    Ok(assemble(method, budget, picks))
}

pub fn herding_coreset(graph: &Graph, budget: &[usize]) -> Result<Coreset> {
    select_with(CoresetMethod::Herding, graph, budget, herding_select)
}

pub fn kcenter_coreset(graph: &Graph, budget: &[usize]) -> Result<Coreset> {
    select_with(CoresetMethod::Kcenter, graph, budget, kcenter_select)
}

pub fn build_coreset(method: CoresetMethod, graph: &Graph, budget: &[usize], seed: u64) -> Result<Coreset> {
    match method {
        CoresetMethod::Random => random_coreset(graph, budget, seed),
        CoresetMethod::Herding => herding_coreset(graph, budget),
        CoresetMethod::Kcenter => kcenter_coreset(graph, budget),
    }
}

fn mean_row(points: &Matrix) -> ndarray::Array1<f64> {
    points
        .mean_axis(ndarray::Axis(0))
        .unwrap_or_else(|| ndarray::Array1::zeros(points.ncols()))
}

/// First index attaining the maximum of `score` over `candidates`.
fn argmax(candidates: impl Iterator<Item = usize>, score: impl Fn(usize) -> f64) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for i in candidates {
        let s = score(i);
        if best.is_none_or(|(_, b)| s > b) {
            best = Some((i, s));
        }
    }
    best.map(|(i, _)| i)
}

/// Herding: pick `t` maximizes `<mu - (1/t) sum_{s<t} x_s, x>` over unpicked rows.
pub fn herding_select(points: &Matrix, count: usize) -> Vec<usize> {
    let mu = mean_row(points);
    let mut taken = vec![false; points.nrows()];
    let mut sum = ndarray::Array1::<f64>::zeros(points.ncols());
    let mut picks = Vec::with_capacity(count);
    for t in 1..=count.min(points.nrows()) {
        let direction = &mu - &(&sum / t as f64);
        let Some(i) = argmax((0..points.nrows()).filter(|&i| !taken[i]), |i| points.row(i).dot(&direction)) else {
            break;
        };
        taken[i] = true;
        sum += &points.row(i);
        picks.push(i);
    }
    picks
}

fn sq_dist(a: ndarray::ArrayView1<f64>, b: ndarray::ArrayView1<f64>) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Greedy K-Center: start at the row nearest the mean, then repeatedly add the row farthest
/// from its nearest center.
pub fn kcenter_select(points: &Matrix, count: usize) -> Vec<usize> {
    let n = points.nrows();
    if count == 0 || n == 0 {
        return Vec::new();
    }
    let mu = mean_row(points);
    let first = argmax(0..n, |i| -sq_dist(points.row(i), mu.view())).expect("nonempty");
    let mut picks = vec![first];
    let mut nearest: Vec<f64> = (0..n).map(|i| sq_dist(points.row(i), points.row(first))).collect();
    let mut taken = vec![false; n];
    taken[first] = true;
    while picks.len() < count.min(n) {
        let next = argmax((0..n).filter(|&i| !taken[i]), |i| nearest[i]).expect("rows remain");
        taken[next] = true;
        picks.push(next);
        for (i, near) in nearest.iter_mut().enumerate() {
            *near = near.min(sq_dist(points.row(i), points.row(next)));
        }
    }
    picks
}

/// Largest distance from any row to its nearest selected row.
pub fn covering_radius(points: &Matrix, centers: &[usize]) -> f64 {
    (0..points.nrows())
        .map(|i| {
            centers
                .iter()
                .map(|&c| sq_dist(points.row(i), points.row(c)))
                .fold(f64::INFINITY, f64::min)
                .sqrt()
        })
        .fold(0.0, f64::max)
}
