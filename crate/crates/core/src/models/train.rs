//! Full-batch training with Adam and best-validation checkpoint selection.

use serde::{Deserialize, Serialize};

use super::{backward, forward_cached, init_params, nll_residual, ModelDims, ModelKind, ModelParams};
use crate::error::{Error, Result};
use crate::graph::NormAdj;
use crate::linalg::{gather_rows, FeatureMatrix, Matrix};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    /// L2 penalty added to the gradient before the Adam moments.
    pub weight_decay: f64,
    pub hidden: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 600,
            lr: 0.01,
            weight_decay: 5e-4,
            hidden: 256,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.hidden == 0 {
            return Err(Error::Config("training epochs and hidden width must be positive".into()));
        }
        if !(self.lr > 0.0) || !(self.weight_decay >= 0.0) {
            return Err(Error::Config(format!(
                "invalid learning rate {} or weight decay {}",
                self.lr, self.weight_decay
            )));
        }
        Ok(())
    }
}

/// A graph plus the labelled rows a model is fitted to or scored on.
#[derive(Debug, Clone, Copy)]
pub struct EvalTarget<'a> {
    pub adj: &'a NormAdj,
    pub features: &'a FeatureMatrix,
    pub labels: &'a [usize],
    pub train: &'a [usize],
    pub val: &'a [usize],
    pub test: &'a [usize],
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub best_epoch: usize,
    pub val_accuracy: f64,
    pub test_accuracy: f64,
}

/// Fraction of `rows` whose argmax logit (lowest index on ties) equals the label.
pub fn accuracy(logits: &Matrix, labels: &[usize], rows: &[usize]) -> f64 {
    if rows.is_empty() {
        return 0.0;
    }
    let correct = rows
        .iter()
        .filter(|&&r| {
            let row = logits.row(r);
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best == labels[r]
        })
        .count();
    correct as f64 / rows.len() as f64
}

struct Adam {
    m: [Matrix; 2],
    v: [Matrix; 2],
    t: i32,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(params: &ModelParams) -> Self {
        let z = |m: &Matrix| Matrix::zeros(m.dim());
        Self {
            m: [z(&params.w1), z(&params.w2)],
            v: [z(&params.w1), z(&params.w2)],
            t: 0,
        }
    }

    fn step(&mut self, params: &mut ModelParams, grads: [Matrix; 2], lr: f64, weight_decay: f64) {
        self.t += 1;
        let c1 = 1.0 - Self::BETA1.powi(self.t);
        let c2 = 1.0 - Self::BETA2.powi(self.t);
        for (i, (w, mut g)) in [&mut params.w1, &mut params.w2].into_iter().zip(grads).enumerate() {
            g.scaled_add(weight_decay, w);
            self.m[i].zip_mut_with(&g, |m, &g| *m = Self::BETA1 * *m + (1.0 - Self::BETA1) * g);
            self.v[i].zip_mut_with(&g, |v, &g| *v = Self::BETA2 * *v + (1.0 - Self::BETA2) * g * g);
            ndarray::Zip::from(w).and(&self.m[i]).and(&self.v[i]).for_each(|w, &m, &v| {
                *w -= lr * (m / c1) / ((v / c2).sqrt() + Self::EPS);
            });
        }
    }
}

/// Trains `kind` on `fit.train` rows of the `fit` graph and keeps the parameters with the
/// best validation accuracy on `score` (earliest epoch on ties).
///
/// `fit` and `score` may be the same graph, in which case one forward pass per epoch
/// serves both.
pub fn train_model(
    kind: ModelKind,
    fit: &EvalTarget<'_>,
    score: &EvalTarget<'_>,
    config: &TrainConfig,
    seed: u64,
) -> Result<TrainOutcome> {
    config.validate()?;
    if fit.train.is_empty() {
        return Err(Error::InvalidArgument("no training rows".into()));
    }
    let first = fit.labels[fit.train[0]];
    if fit.train.iter().all(|&r| fit.labels[r] == first) {
        return Err(Error::InvalidArgument(
            "training graph holds a single class; nothing to learn".into(),
        ));
    }
    let classes = fit.labels.iter().chain(score.labels).max().map_or(1, |m| m + 1);
    let dims = ModelDims {
        features: fit.features.ncols(),
        hidden: config.hidden,
        classes,
    };
    let mut params = init_params(kind, dims, seed)?;
    let mut adam = Adam::new(&params);
    let shared = std::ptr::eq(fit.adj, score.adj) && std::ptr::eq(fit.features, score.features);
    let fit_labels: Vec<usize> = fit.train.iter().map(|&r| fit.labels[r]).collect();

    let mut best: Option<TrainOutcome> = None;
    let mut consider = |epoch: usize, params: &ModelParams, logits: &Matrix| {
        let val = accuracy(logits, score.labels, score.val);
        if best.as_ref().is_none_or(|b| val > b.val_accuracy) {
            best = Some(TrainOutcome {
                params: params.clone(),
                best_epoch: epoch,
                val_accuracy: val,
                test_accuracy: accuracy(logits, score.labels, score.test),
            });
        }
    };

    for epoch in 0..config.epochs {
        let cache = forward_cached(fit.adj, fit.features, &params)?;
        if shared {
            consider(epoch, &params, &cache.logits);
        } else {
            let logits = forward_cached(score.adj, score.features, &params)?.logits;
            consider(epoch, &params, &logits);
        }
        let r = nll_residual(&gather_rows(&cache.logits, fit.train), &fit_labels);
        let mut d_logits = Matrix::zeros(cache.logits.dim());
        for (k, &row) in fit.train.iter().enumerate() {
            d_logits.row_mut(row).scaled_add(1.0, &r.row(k));
        }
        let (g1, g2) = backward(fit.adj, fit.features, &params, &cache, &d_logits)?;
        adam.step(&mut params, [g1, g2], config.lr, config.weight_decay);
        if !params.is_finite() {
            return Err(Error::NonFinite(format!("{kind} weights diverged at epoch {epoch}")));
        }
    }
    let logits = forward_cached(score.adj, score.features, &params)?.logits;
    consider(config.epochs, &params, &logits);
    Ok(best.expect("at least one checkpoint considered"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::synthetic::PlantedPartition;

    #[test]
    fn gcn_learns_planted_partition() {
        let g = PlantedPartition::small(7).generate().unwrap();
        let adj = g.normalized_adjacency().unwrap();
        let x = FeatureMatrix::auto(g.features(), 0.3);
        let s = g.splits();
        let target = EvalTarget {
            adj: &adj,
            features: &x,
            labels: g.labels(),
            train: &s.train,
            val: &s.val,
            test: &s.test,
        };
        let cfg = TrainConfig {
            epochs: 100,
            hidden: 32,
            ..Default::default()
        };
        let out = train_model(ModelKind::Gcn, &target, &target, &cfg, 0).unwrap();
        assert!(out.test_accuracy > 0.7, "{}", out.test_accuracy);
        let again = train_model(ModelKind::Gcn, &target, &target, &cfg, 0).unwrap();
        assert_eq!(out.test_accuracy.to_bits(), again.test_accuracy.to_bits());
        assert_eq!(out.params, again.params);
    }

    #[test]
    fn single_class_is_rejected() {
        let g = PlantedPartition::small(1).generate().unwrap();
        let adj = g.normalized_adjacency().unwrap();
        let x = FeatureMatrix::Dense(g.features().clone());
        let zeros = vec![0; g.num_nodes()];
        let t = EvalTarget {
            adj: &adj,
            features: &x,
            labels: &zeros,
            train: &g.splits().train,
            val: &g.splits().val,
            test: &g.splits().test,
        };
        assert!(train_model(ModelKind::Mlp, &t, &t, &TrainConfig::default(), 0).is_err());
    }

    #[test]
    fn accuracy_ties_take_lowest_index() {
        let logits = Matrix::zeros((2, 3));
        assert_eq!(accuracy(&logits, &[0, 1], &[0, 1]), 0.5);
        assert_eq!(accuracy(&logits, &[0, 1], &[]), 0.0);
    }
}
