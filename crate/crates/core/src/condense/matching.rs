//! Per-class gradient matching between the original and synthetic graphs.

use rand::seq::index;
use rand::Rng;

use super::generator::{record_adjacency, GeneratorParams};
use crate::autodiff::{cosine_column_distance, ExprId, Tape};
use crate::error::{shape_err, Error, Result};
use crate::graph::{propagate_rows, Graph, NormAdj};
use crate::linalg::{gather_rows, selection_matrix, Matrix};
use crate::models::{param_grad_exprs, sgc_param_grads, ModelParams, SgcWeights};

/// `sum over layers, sum over columns (1 - cos(Gs_i, Gt_i))`.
pub fn matching_distance(gs: &[Matrix], gt: &[Matrix]) -> Result<f64> {
    if gs.len() != gt.len() {
        return Err(shape_err!("{} synthetic layers vs {} original", gs.len(), gt.len()));
    }
    let mut total = 0.0;
    for (i, (s, t)) in gs.iter().zip(gt).enumerate() {
        if s.dim() != t.dim() {
            return Err(shape_err!("layer {i}: {:?} vs {:?}", s.dim(), t.dim()));
        }
        total += cosine_column_distance(s, t);
    }
    Ok(total)
}

/// Propagated training rows of the original graph, grouped by class.
#[derive(Debug, Clone)]
pub struct OriginalSide {
    /// `rows[c]` is `(adj^k X)` restricted to the training nodes of class `c`.
    pub rows: Vec<Matrix>,
    pub cap: usize,
}

impl OriginalSide {
    pub fn new(graph: &Graph, hops: usize, cap: usize) -> Result<Self> {
        if cap == 0 {
            return Err(Error::Config("original batch cap must be positive".into()));
        }
        let NormAdj::Sparse(adj) = graph.normalized_adjacency()? else {
            unreachable!("original graphs normalize to sparse form")
        };
        let rows = graph
            .train_nodes_by_class()
            .iter()
            .map(|nodes| propagate_rows(&adj, graph.features(), nodes, hops))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { rows, cap })
    }

    /// Row indices into `rows[c]` for one epoch: every row when the class fits the cap,
    /// otherwise a uniform sample of `cap` rows.
    pub fn sample_batches(&self, rng: &mut impl Rng) -> Vec<Vec<usize>> {
        self.rows
            .iter()
            .map(|m| {
                let n = m.nrows();
                if n <= self.cap {
                    (0..n).collect()
                } else {
                    let mut picked = index::sample(rng, n, self.cap).into_vec();
                    picked.sort_unstable();
                    picked
                }
            })
            .collect()
    }

    /// Per-class SGC gradients `[dW1, dW2]` of the original batch.
    pub fn target_grads(&self, batches: &[Vec<usize>], theta: &ModelParams) -> Result<Vec<[Matrix; 2]>> {
        self.rows
            .iter()
            .zip(batches)
            .enumerate()
            .map(|(c, (m, batch))| {
                let h = gather_rows(m, batch);
                sgc_param_grads(&h, &vec![c; batch.len()], theta)
            })
            .collect()
    }
}

/// Perturbation fed to a matching pass: raw `delta` and the located mask `m_g`.
#[derive(Debug, Clone, Copy)]
pub struct PassPerturbation<'a> {
    pub delta: &'a Matrix,
    pub mask: &'a Matrix,
}

#[derive(Debug, Clone)]
pub struct PassOutput {
    /// Summed per-class distance.
    pub distance: f64,
    pub per_class: Vec<f64>,
    pub grad_features: Matrix,
    pub grad_generator: GeneratorParams,
    /// Present when a perturbation was applied.
    pub grad_delta: Option<Matrix>,
    pub grad_carrier: Option<Matrix>,
}

/// `x + delta ⊙ carrier ⊙ mask` with `delta` and `carrier` kept differentiable.
pub fn apply_perturbation(
    tape: &mut Tape,
    x: ExprId,
    delta: ExprId,
    carrier: ExprId,
    mask: ExprId,
) -> Result<ExprId> {
    let carried = tape.hadamard(delta, carrier)?;
    let masked = tape.hadamard(carried, mask)?;
    tape.add(x, masked)
}

/// One forward and reverse pass of the summed per-class matching distance.
///
/// The generator sees the clean features; only the features propagated into the SGC model
/// carry the perturbation.
#[allow(clippy::too_many_arguments)]
pub fn matching_pass(
    features: &Matrix,
    labels: &[usize],
    num_classes: usize,
    generator: &GeneratorParams,
    theta: &ModelParams,
    targets: Vec<[Matrix; 2]>,
    perturbation: Option<PassPerturbation<'_>>,
) -> Result<PassOutput> {
    let (n, d) = features.dim();
    if labels.len() != n || targets.len() != num_classes {
        return Err(shape_err!(
            "{n} synthetic rows, {} labels, {} class targets for {num_classes} classes",
            labels.len(),
            targets.len()
        ));
    }
    let mut tape = Tape::new();
    let x = tape.input(n, d);
    let gen = generator.declare(&mut tape);
    let adjacency = record_adjacency(&mut tape, x, &gen)?;
    let norm = tape.normalize_adjacency(adjacency)?;

    let carrier_value = Matrix::ones((n, d));
    let (propagated_from, delta_ids) = match perturbation {
        None => (x, None),
        Some(p) => {
            if p.delta.dim() != (n, d) || p.mask.dim() != (n, d) {
                return Err(shape_err!(
                    "perturbation {:?} and mask {:?} for {n}x{d} features",
                    p.delta.dim(),
                    p.mask.dim()
                ));
            }
            let delta = tape.input(n, d);
            let carrier = tape.input(n, d);
            let mask = tape.constant(p.mask.clone());
            let perturbed = apply_perturbation(&mut tape, x, delta, carrier, mask)?;
            (perturbed, Some((delta, carrier, p.delta)))
        }
    };
    let mut h = propagated_from;
    for _ in 0..theta.hops {
        h = tape.matmul(norm, h)?;
    }

    let weights = SgcWeights::declare(&mut tape, theta)?;
    let mut class_distances = Vec::with_capacity(num_classes);
    for (c, target) in targets.into_iter().enumerate() {
        let rows: Vec<usize> = (0..n).filter(|&i| labels[i] == c).collect();
        if rows.is_empty() {
            continue;
        }
        let select = tape.constant(selection_matrix(&rows, n));
        let hc = tape.matmul(select, h)?;
        let grads = param_grad_exprs(&mut tape, hc, &vec![c; rows.len()], &weights)?;
        let mut layer_terms = Vec::with_capacity(2);
        for (g, t) in grads.iter().zip(target) {
            let t = tape.constant(t);
            layer_terms.push(tape.cosine_column_distance(*g, t)?);
        }
        class_distances.push((c, tape.add(layer_terms[0], layer_terms[1])?));
    }
    let mut total = class_distances
        .first()
        .map(|&(_, id)| id)
        .ok_or_else(|| Error::InvalidArgument("synthetic graph has no labelled rows".into()))?;
    for &(_, id) in &class_distances[1..] {
        total = tape.add(total, id)?;
    }

    let mut bindings: Vec<(ExprId, &Matrix)> = vec![(x, features)];
    bindings.extend(generator.bindings(&gen));
    if let Some((delta, carrier, value)) = delta_ids {
        bindings.push((delta, value));
        bindings.push((carrier, &carrier_value));
    }
    let distance = tape.evaluate(total, &bindings)?[[0, 0]];
    let mut per_class = vec![0.0; num_classes];
    for &(c, id) in &class_distances {
        per_class[c] = tape.value(id).expect("evaluated")[[0, 0]];
    }
    if !distance.is_finite() {
        return Err(Error::NonFinite(format!(
            "matching distance {distance}; per-class {per_class:?}"
        )));
    }

    let mut grads = tape.backward(total, 1.0)?;
    let mut take = |id: ExprId| grads.take(id).expect("every input has a gradient");
    let grad_features = take(x);
    let grad_generator = GeneratorParams {
        wa: take(gen.wa),
        wb: take(gen.wb),
        b1: take(gen.b1),
        w2: take(gen.w2),
        b2: take(gen.b2),
    };
    let (grad_delta, grad_carrier) = match delta_ids {
        Some((delta, carrier, _)) => (Some(take(delta)), Some(take(carrier))),
        None => (None, None),
    };
    Ok(PassOutput {
        distance,
        per_class,
        grad_features,
        grad_generator,
        grad_delta,
        grad_carrier,
    })
}
