//! Planted-partition benchmark graphs with bag-of-words features.
//!
//! Used for fixtures, timing runs and demos when a real citation dataset is not at hand.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Graph, Splits};
use crate::error::{Error, Result};
use crate::linalg::Matrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedPartition {
    pub nodes: usize,
    pub classes: usize,
    pub features: usize,
    pub avg_degree: f64,
    /// Fraction of edges joining nodes of the same class.
    pub homophily: f64,
    pub words_per_node: usize,
    /// Size of each class's preferred vocabulary.
    pub topic_words: usize,
    /// Probability that a word is drawn from the node's class vocabulary.
    pub topic_prob: f64,
    pub train_per_class: usize,
    pub val: usize,
    pub test: usize,
    pub seed: u64,
}

impl PlantedPartition {
    /// Same size, class count, degree and split sizes as Cora's public split.
    pub fn cora_sized(seed: u64) -> Self {
        Self {
            nodes: 2708,
            classes: 7,
            features: 1433,
            avg_degree: 3.9,
            homophily: 0.81,
            words_per_node: 18,
            topic_words: 120,
            topic_prob: 0.35,
            train_per_class: 20,
            val: 500,
            test: 1000,
            seed,
        }
    }

    /// A few hundred nodes; quick enough for unit tests.
    pub fn small(seed: u64) -> Self {
        Self {
            nodes: 300,
            classes: 3,
            features: 60,
            avg_degree: 4.0,
            homophily: 0.8,
            words_per_node: 8,
            topic_words: 12,
            topic_prob: 0.5,
            train_per_class: 10,
            val: 60,
            test: 120,
            seed,
        }
    }

    pub fn generate(&self) -> Result<Graph> {
        if self.classes == 0 || self.nodes < self.classes * self.train_per_class + self.val + self.test {
            return Err(Error::InvalidArgument(
                "planted partition too small for the requested splits".into(),
            ));
        }
        if self.words_per_node > self.features || self.topic_words > self.features {
            return Err(Error::InvalidArgument(
                "vocabulary smaller than the words drawn per node".into(),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);

        let mut labels: Vec<usize> = (0..self.nodes).map(|i| i % self.classes).collect();
        labels.shuffle(&mut rng);
        let mut members = vec![Vec::new(); self.classes];
        for (i, &l) in labels.iter().enumerate() {
            members[l].push(i);
        }

        let mut vocab: Vec<usize> = (0..self.features).collect();
        let topics: Vec<Vec<usize>> = (0..self.classes)
            .map(|_| {
                vocab.shuffle(&mut rng);
                vocab[..self.topic_words].to_vec()
            })
            .collect();
        let mut features = Matrix::zeros((self.nodes, self.features));
        for i in 0..self.nodes {
            let mut placed = 0;
            while placed < self.words_per_node {
                let w = if rng.gen::<f64>() < self.topic_prob {
                    topics[labels[i]][rng.gen_range(0..self.topic_words)]
                } else {
                    rng.gen_range(0..self.features)
                };
                if features[[i, w]] == 0.0 {
                    features[[i, w]] = 1.0;
                    placed += 1;
                }
            }
        }

        let target_edges = (self.nodes as f64 * self.avg_degree / 2.0).round() as usize;
        let mut edges = Vec::with_capacity(target_edges);
        while edges.len() < target_edges {
            let u = rng.gen_range(0..self.nodes);
            let v = if rng.gen::<f64>() < self.homophily {
                let same = &members[labels[u]];
                same[rng.gen_range(0..same.len())]
            } else {
                rng.gen_range(0..self.nodes)
            };
            if u != v {
                edges.push((u, v));
            }
        }

        let mut splits = Splits::default();
        let mut rest = Vec::new();
        for class_members in &mut members {
            class_members.shuffle(&mut rng);
            splits.train.extend_from_slice(&class_members[..self.train_per_class]);
            rest.extend_from_slice(&class_members[self.train_per_class..]);
        }
        rest.shuffle(&mut rng);
        splits.val = rest[..self.val].to_vec();
        splits.test = rest[self.val..self.val + self.test].to_vec();
        for ids in [&mut splits.train, &mut splits.val, &mut splits.test] {
            ids.sort_unstable();
        }

        Graph::from_edges(self.nodes, &edges, features, labels, self.classes, splits)
    }
}
