//! SGC, GCN and MLP node classifiers.
//!
//! All models are two bias-free linear layers `W1: d x h`, `W2: h x C`:
//!
//! - SGC: `(adj^k X) W1 W2`
//! - GCN: `adj relu(adj X W1) W2`
//! - MLP: `relu(X W1) W2`

mod train;

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use train::{accuracy, train_model, EvalTarget, TrainConfig, TrainOutcome};

use crate::autodiff::{ExprId, Tape};
use crate::error::{Error, Result};
use crate::graph::NormAdj;
use crate::linalg::{one_hot, softmax_rows, FeatureMatrix, Matrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Sgc,
    Gcn,
    Mlp,
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelKind::Sgc => "sgc",
            ModelKind::Gcn => "gcn",
            ModelKind::Mlp => "mlp",
        })
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sgc" => Ok(ModelKind::Sgc),
            "gcn" => Ok(ModelKind::Gcn),
            "mlp" => Ok(ModelKind::Mlp),
            other => Err(Error::InvalidArgument(format!(
                "unknown model {other:?} (expected sgc, gcn or mlp)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelDims {
    pub features: usize,
    pub hidden: usize,
    pub classes: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub kind: ModelKind,
    /// Propagation steps for SGC; GCN always uses one per layer.
    pub hops: usize,
    pub w1: Matrix,
    pub w2: Matrix,
}

pub const DEFAULT_HOPS: usize = 2;

/// Uniform Glorot init in `[-s, s]`, `s = sqrt(6 / (fan_in + fan_out))`.
pub fn glorot(rows: usize, cols: usize, rng: &mut impl Rng) -> Matrix {
    let s = (6.0 / (rows + cols) as f64).sqrt();
    Matrix::from_shape_fn((rows, cols), |_| rng.gen_range(-s..=s))
}

pub fn init_params(kind: ModelKind, dims: ModelDims, seed: u64) -> Result<ModelParams> {
    if dims.features == 0 || dims.hidden == 0 || dims.classes == 0 {
        return Err(Error::InvalidArgument(format!("model dimensions must be positive, got {dims:?}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w1 = glorot(dims.features, dims.hidden, &mut rng);
    let w2 = glorot(dims.hidden, dims.classes, &mut rng);
    Ok(ModelParams {
        kind,
        hops: DEFAULT_HOPS,
        w1,
        w2,
    })
}

impl ModelParams {
    pub fn dims(&self) -> ModelDims {
        ModelDims {
            features: self.w1.nrows(),
            hidden: self.w1.ncols(),
            classes: self.w2.ncols(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.w1.iter().chain(self.w2.iter()).all(|v| v.is_finite())
    }
}

fn check_input(adj: &NormAdj, features: &FeatureMatrix, params: &ModelParams) -> Result<()> {
    if features.ncols() != params.w1.nrows() {
        return Err(crate::error::shape_err!(
            "{} feature columns for a model expecting {}",
            features.ncols(),
            params.w1.nrows()
        ));
    }
    if params.kind != ModelKind::Mlp && adj.dim() != features.nrows() {
        return Err(crate::error::shape_err!(
            "{} feature rows over a {}-node adjacency",
            features.nrows(),
            adj.dim()
        ));
    }
    Ok(())
}

/// Intermediate values kept for manual backpropagation.
pub(crate) struct ForwardCache {
    /// MLP/GCN: hidden pre-activation. SGC: `adj^k X W1`.
    pub hidden: Matrix,
    pub logits: Matrix,
}

pub(crate) fn forward_cached(adj: &NormAdj, features: &FeatureMatrix, params: &ModelParams) -> Result<ForwardCache> {
    check_input(adj, features, params)?;
    let xw = features.mul(&params.w1)?;
    let (hidden, logits) = match params.kind {
        ModelKind::Mlp => {
            let out = xw.mapv(|v| v.max(0.0)).dot(&params.w2);
            (xw, out)
        }
        ModelKind::Gcn => {
            let z = adj.apply(&xw)?;
            let out = adj.apply(&z.mapv(|v| v.max(0.0)).dot(&params.w2))?;
            (z, out)
        }
        ModelKind::Sgc => {
            let mut v = xw;
            for _ in 0..params.hops {
                v = adj.apply(&v)?;
            }
            let out = v.dot(&params.w2);
            (v, out)
        }
    };
    Ok(ForwardCache { hidden, logits })
}

/// Gradients of a loss with upstream `d_logits` with respect to `(W1, W2)`.
pub(crate) fn backward(
    adj: &NormAdj,
    features: &FeatureMatrix,
    params: &ModelParams,
    cache: &ForwardCache,
    d_logits: &Matrix,
) -> Result<(Matrix, Matrix)> {
    let relu_mask = |d: &mut Matrix, pre: &Matrix| {
        d.zip_mut_with(pre, |d, &z| {
            if z <= 0.0 {
                *d = 0.0
            }
        })
    };
    match params.kind {
        ModelKind::Mlp => {
            let h = cache.hidden.mapv(|v| v.max(0.0));
            let dw2 = h.t().dot(d_logits);
            let mut dz = d_logits.dot(&params.w2.t());
            relu_mask(&mut dz, &cache.hidden);
            Ok((features.transpose_mul(&dz)?, dw2))
        }
        ModelKind::Gcn => {
            let h = cache.hidden.mapv(|v| v.max(0.0));
            let dp = adj.apply_t(d_logits)?;
            let dw2 = h.t().dot(&dp);
            let mut dz = dp.dot(&params.w2.t());
            relu_mask(&mut dz, &cache.hidden);
            let dxw = adj.apply_t(&dz)?;
            Ok((features.transpose_mul(&dxw)?, dw2))
        }
        ModelKind::Sgc => {
            let dw2 = cache.hidden.t().dot(d_logits);
            let mut du = d_logits.dot(&params.w2.t());
            for _ in 0..params.hops {
                du = adj.apply_t(&du)?;
            }
            Ok((features.transpose_mul(&du)?, dw2))
        }
    }
}

pub fn forward(adj: &NormAdj, features: &FeatureMatrix, params: &ModelParams) -> Result<Matrix> {
    forward_cached(adj, features, params).map(|c| c.logits)
}

/// Mean negative log-likelihood over rows where `mask` is set.
pub fn nll_loss(logits: &Matrix, labels: &[usize], mask: &[bool]) -> Result<f64> {
    if labels.len() != logits.nrows() || mask.len() != logits.nrows() {
        return Err(crate::error::shape_err!(
            "{} logit rows, {} labels, {} mask entries",
            logits.nrows(),
            labels.len(),
            mask.len()
        ));
    }
    let mut total = 0.0;
    let mut count = 0usize;
    for ((row, &label), _) in logits.rows().into_iter().zip(labels).zip(mask).filter(|(_, &m)| m) {
        if label >= logits.ncols() {
            return Err(Error::InvalidArgument(format!("label {label} outside 0..{}", logits.ncols())));
        }
        let max = row.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        total += lse - row[label];
        count += 1;
    }
    if count == 0 {
        return Err(Error::InvalidArgument("loss mask selects no rows".into()));
    }
    Ok(total / count as f64)
}

/// `(softmax(logits) - onehot(labels)) / rows`: the gradient of mean NLL in the logits.
pub fn nll_residual(logits: &Matrix, labels: &[usize]) -> Matrix {
    let mut r = softmax_rows(logits);
    for (i, &l) in labels.iter().enumerate() {
        r[[i, l]] -= 1.0;
    }
    let n = labels.len().max(1) as f64;
    r.mapv_inplace(|v| v / n);
    r
}

/// `[dL/dW1, dL/dW2]` of mean NLL for a linear SGC head over propagated rows `h`.
pub fn sgc_param_grads(h: &Matrix, labels: &[usize], params: &ModelParams) -> Result<[Matrix; 2]> {
    if h.nrows() != labels.len() || h.ncols() != params.w1.nrows() {
        return Err(crate::error::shape_err!(
            "{}x{} propagated rows with {} labels for a {}-input model",
            h.nrows(),
            h.ncols(),
            labels.len(),
            params.w1.nrows()
        ));
    }
    let hw1 = h.dot(&params.w1);
    let r = nll_residual(&hw1.dot(&params.w2), labels);
    let g2 = hw1.t().dot(&r);
    let g1 = h.t().dot(&r.dot(&params.w2.t()));
    Ok([g1, g2])
}

/// SGC weights entered once as tape constants, shared by every class's gradient expressions.
#[derive(Debug, Clone, Copy)]
pub struct SgcWeights {
    w1: ExprId,
    w2: ExprId,
    w2t: ExprId,
    features: usize,
    classes: usize,
}

impl SgcWeights {
    pub fn declare(tape: &mut Tape, params: &ModelParams) -> Result<Self> {
        if params.kind != ModelKind::Sgc {
            return Err(Error::InvalidArgument(format!(
                "gradient matching needs an sgc model, got {}",
                params.kind
            )));
        }
        Ok(Self {
            w1: tape.constant(params.w1.clone()),
            w2: tape.constant(params.w2.clone()),
            w2t: tape.constant(params.w2.t().to_owned()),
            features: params.w1.nrows(),
            classes: params.w2.ncols(),
        })
    }
}

/// Records `[dL/dW1, dL/dW2]` of the SGC loss as forward expressions of `h`.
///
/// `h` holds already-propagated rows, so the returned expressions stay differentiable in
/// whatever produced `h`. Weights enter as constants.
pub fn param_grad_exprs(tape: &mut Tape, h: ExprId, labels: &[usize], weights: &SgcWeights) -> Result<[ExprId; 2]> {
    let (rows, cols) = tape.shape(h);
    if rows != labels.len() || cols != weights.features {
        return Err(crate::error::shape_err!(
            "{rows}x{cols} propagated rows with {} labels for a {}-input model",
            labels.len(),
            weights.features
        ));
    }
    let SgcWeights { w1, w2, w2t, .. } = *weights;
    let y = tape.constant(one_hot(labels, weights.classes));

    let hw1 = tape.matmul(h, w1)?;
    let logits = tape.matmul(hw1, w2)?;
    let p = tape.softmax_rows(logits);
    let diff = tape.sub(p, y)?;
    let r = tape.scale(diff, 1.0 / rows as f64);
    let hw1t = tape.transpose(hw1);
    let g2 = tape.matmul(hw1t, r)?;
    let rw2t = tape.matmul(r, w2t)?;
    let ht = tape.transpose(h);
    let g1 = tape.matmul(ht, rw2t)?;
    Ok([g1, g2])
}

/// Inner-loop optimizer for the matching model: plain gradient descent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InnerOptimizer {
    pub lr: f64,
    pub steps: usize,
}

impl Default for InnerOptimizer {
    fn default() -> Self {
        Self { lr: 0.01, steps: 1 }
    }
}

impl InnerOptimizer {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("inner learning rate must be positive, got {}", self.lr)));
        }
        Ok(())
    }

    /// Applies `steps` descent steps of the SGC loss on propagated rows `h`.
    pub fn step_sgc(&self, h: &Matrix, labels: &[usize], params: &mut ModelParams) -> Result<()> {
        for _ in 0..self.steps {
            let [g1, g2] = sgc_param_grads(h, labels, params)?;
            params.w1.scaled_add(-self.lr, &g1);
            params.w2.scaled_add(-self.lr, &g2);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::finite_diff_check;
    use crate::graph::normalize_dense;
    use ndarray::array;

    fn dims(features: usize, hidden: usize, classes: usize) -> ModelDims {
        ModelDims {
            features,
            hidden,
            classes,
        }
    }

    fn random(rows: usize, cols: usize, seed: u64) -> Matrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Matrix::from_shape_fn((rows, cols), |_| rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn init_is_seeded_and_bounded() {
        let a = init_params(ModelKind::Sgc, dims(1433, 256, 7), 1).unwrap();
        let b = init_params(ModelKind::Sgc, dims(1433, 256, 7), 1).unwrap();
        let c = init_params(ModelKind::Sgc, dims(1433, 256, 7), 2).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.w1.dim(), (1433, 256));
        assert_eq!(a.w2.dim(), (256, 7));
        assert!(crate::linalg::max_abs(&(&a.w1 - &c.w1)) > 0.0);
        let s1 = (6.0 / (1433.0 + 256.0f64)).sqrt();
        assert!(a.w1.iter().all(|v| v.abs() <= s1));
        assert!(init_params(ModelKind::Gcn, dims(0, 1, 1), 0).is_err());
    }

    #[test]
    fn zero_weights_give_zero_logits() {
        let adj = NormAdj::Dense(normalize_dense(&array![[0.0, 1.0], [1.0, 0.0]]).unwrap());
        let x = FeatureMatrix::Dense(random(2, 3, 0));
        for kind in [ModelKind::Sgc, ModelKind::Gcn, ModelKind::Mlp] {
            let p = ModelParams {
                kind,
                hops: 2,
                w1: Matrix::zeros((3, 4)),
                w2: Matrix::zeros((4, 2)),
            };
            assert_eq!(forward(&adj, &x, &p).unwrap(), Matrix::zeros((2, 2)));
        }
    }

    #[test]
    fn sgc_identity_composition() {
        let adj = NormAdj::Dense(Matrix::eye(3));
        let xm = random(3, 4, 1);
        let p = ModelParams {
            kind: ModelKind::Sgc,
            hops: 0,
            w1: Matrix::eye(4),
            w2: Matrix::eye(4).slice(ndarray::s![.., ..2]).to_owned(),
        };
        let out = forward(&adj, &FeatureMatrix::Dense(xm.clone()), &p).unwrap();
        assert_eq!(out, xm.slice(ndarray::s![.., ..2]).to_owned());
    }

    #[test]
    fn gcn_path_hand_computation() {
        // path 0-1-2, normalized: [[1/2, 1/sqrt6, 0], [1/sqrt6, 1/3, 1/sqrt6], [0, 1/sqrt6, 1/2]]
        let a = array![[0.0, 1.0, 0.0], [1.0, 0.0, 1.0], [0.0, 1.0, 0.0]];
        let adj = NormAdj::Dense(normalize_dense(&a).unwrap());
        let x = array![[1.0], [0.0], [-1.0]];
        let p = ModelParams {
            kind: ModelKind::Gcn,
            hops: 1,
            w1: array![[1.0, -1.0]],
            w2: array![[1.0], [1.0]],
        };
        // adj x = [1/2, 0, -1/2]; relu([v, -v]) summed = |v| = [1/2, 0, 1/2]
        // adj [1/2, 0, 1/2] = [1/4, 1/sqrt6, 1/4]
        let out = forward(&adj, &FeatureMatrix::Dense(x), &p).unwrap();
        let r6 = 1.0 / 6f64.sqrt();
        assert!(out.abs_diff_eq(&array![[0.25], [r6], [0.25]], 1e-15));
    }

    #[test]
    fn nll_cases() {
        let logits = Matrix::zeros((3, 4));
        let loss = nll_loss(&logits, &[0, 1, 3], &[true; 3]).unwrap();
        assert!((loss - 4f64.ln()).abs() < 1e-12);
        assert!(nll_loss(&logits, &[0, 1, 3], &[false; 3]).is_err());

        let mut prev = f64::INFINITY;
        for scale in [1.0, 5.0, 20.0, 100.0] {
            let l = nll_loss(&(Matrix::eye(3) * scale), &[0, 1, 2], &[true; 3]).unwrap();
            assert!(l < prev && l >= 0.0);
            prev = l;
        }

        let logits = random(5, 3, 2);
        let labels = [0, 2, 1, 1, 0];
        let mask = [true, false, true, true, false];
        let mut brute = 0.0;
        for i in [0, 2, 3] {
            let denom: f64 = (0..3).map(|j| logits[[i, j]].exp()).sum();
            brute -= (logits[[i, labels[i]]].exp() / denom).ln();
        }
        assert!((nll_loss(&logits, &labels, &mask).unwrap() - brute / 3.0).abs() < 1e-12);
    }

    #[test]
    fn closed_form_grads_match_finite_differences() {
        let h = random(6, 5, 3);
        let labels = vec![0, 1, 2, 1, 0, 2];
        let params = init_params(ModelKind::Sgc, dims(5, 4, 3), 4).unwrap();
        let [g1, g2] = sgc_param_grads(&h, &labels, &params).unwrap();
        let mask = vec![true; 6];
        let loss_at = |p: &ModelParams| nll_loss(&h.dot(&p.w1).dot(&p.w2), &labels, &mask).unwrap();
        let eps = 1e-5;
        for (layer, g) in [(0, &g1), (1, &g2)] {
            for idx in 0..g.len() {
                let (r, c) = (idx / g.ncols(), idx % g.ncols());
                let mut plus = params.clone();
                let mut minus = params.clone();
                let (wp, wm) = if layer == 0 {
                    (&mut plus.w1, &mut minus.w1)
                } else {
                    (&mut plus.w2, &mut minus.w2)
                };
                wp[[r, c]] += eps;
                wm[[r, c]] -= eps;
                let numeric = (loss_at(&plus) - loss_at(&minus)) / (2.0 * eps);
                let a = g[[r, c]];
                let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
                assert!(rel < 1e-4, "layer {layer} ({r},{c}): {a} vs {numeric}");
            }
        }

        let mut tape = Tape::new();
        let hi = tape.input(6, 5);
        let weights = SgcWeights::declare(&mut tape, &params).unwrap();
        let exprs = param_grad_exprs(&mut tape, hi, &labels, &weights).unwrap();
        for (e, g) in exprs.iter().zip([&g1, &g2]) {
            let v = tape.evaluate(*e, &[(hi, &h)]).unwrap();
            assert!(v.abs_diff_eq(g, 1e-14));
        }
    }

    #[test]
    fn grad_exprs_differentiate_through_h() {
        let h = random(4, 3, 5);
        let labels = vec![0, 1, 1, 0];
        let params = init_params(ModelKind::Sgc, dims(3, 4, 2), 6).unwrap();
        let mut tape = Tape::new();
        let hi = tape.input(4, 3);
        let weights = SgcWeights::declare(&mut tape, &params).unwrap();
        let [g1, g2] = param_grad_exprs(&mut tape, hi, &labels, &weights).unwrap();
        let target1 = tape.constant(random(3, 4, 7));
        let target2 = tape.constant(random(4, 2, 8));
        let d1 = tape.cosine_column_distance(g1, target1).unwrap();
        let d2 = tape.cosine_column_distance(g2, target2).unwrap();
        let d = tape.add(d1, d2).unwrap();
        let err = finite_diff_check(&mut tape, d, &[(hi, &h)], hi, 1e-5).unwrap();
        assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn saturated_and_degenerate_grads_vanish() {
        let h = Matrix::eye(3);
        let labels = vec![0, 1, 2];
        let params = ModelParams {
            kind: ModelKind::Sgc,
            hops: 2,
            w1: Matrix::eye(3) * 50.0,
            w2: Matrix::eye(3),
        };
        for g in sgc_param_grads(&h, &labels, &params).unwrap() {
            assert!(g.iter().map(|v| v * v).sum::<f64>().sqrt() < 1e-6);
        }
        let single = init_params(ModelKind::Sgc, dims(2, 3, 1), 0).unwrap();
        for g in sgc_param_grads(&array![[0.4, -1.0]], &[0], &single).unwrap() {
            assert_eq!(crate::linalg::max_abs(&g), 0.0);
        }
        let mut tape = Tape::new();
        let gcn = ModelParams {
            kind: ModelKind::Gcn,
            ..single
        };
        assert!(SgcWeights::declare(&mut tape, &gcn).is_err());
    }

    #[test]
    fn manual_backward_matches_finite_differences() {
        let a = array![[0.0, 1.0, 0.0, 1.0], [1.0, 0.0, 1.0, 0.0], [0.0, 1.0, 0.0, 0.0], [1.0, 0.0, 0.0, 0.0]];
        let adj = NormAdj::Dense(normalize_dense(&a).unwrap());
        let x = FeatureMatrix::Dense(random(4, 3, 9));
        let labels = [0, 1, 1, 0];
        let mask = [true, true, false, true];
        for kind in [ModelKind::Sgc, ModelKind::Gcn, ModelKind::Mlp] {
            let mut params = init_params(kind, dims(3, 5, 2), 10).unwrap();
            params.hops = 2;
            let cache = forward_cached(&adj, &x, &params).unwrap();
            let mut d = Matrix::zeros(cache.logits.dim());
            let rows: Vec<usize> = (0..4).filter(|&i| mask[i]).collect();
            let sub = crate::linalg::gather_rows(&cache.logits, &rows);
            let sub_labels: Vec<usize> = rows.iter().map(|&i| labels[i]).collect();
            let r = nll_residual(&sub, &sub_labels);
            for (k, &i) in rows.iter().enumerate() {
                d.row_mut(i).assign(&r.row(k));
            }
            let (g1, _) = backward(&adj, &x, &params, &cache, &d).unwrap();
            let eps = 1e-6;
            for idx in 0..g1.len() {
                let (rr, cc) = (idx / g1.ncols(), idx % g1.ncols());
                let mut plus = params.clone();
                plus.w1[[rr, cc]] += eps;
                let mut minus = params.clone();
                minus.w1[[rr, cc]] -= eps;
                let lp = nll_loss(&forward(&adj, &x, &plus).unwrap(), &labels, &mask).unwrap();
                let lm = nll_loss(&forward(&adj, &x, &minus).unwrap(), &labels, &mask).unwrap();
                let numeric = (lp - lm) / (2.0 * eps);
                let an = g1[[rr, cc]];
                assert!((an - numeric).abs() <= 1e-4 * an.abs().max(numeric.abs()).max(1e-6), "{kind}: {an} vs {numeric}");
            }
        }
    }
}
