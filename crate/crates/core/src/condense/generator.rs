//! Adjacency generator `A'_ij = sigmoid((MLP([x_i; x_j]) + MLP([x_j; x_i])) / 2)`.
//!
//! The MLP has one relu hidden layer. Its first layer is stored split as `W_a` (acting on
//! `x_i`) and `W_b` (acting on `x_j`), so `[x_i; x_j] W1 = x_i W_a + x_j W_b` and the
//! per-pair work after the split is only additions.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{ExprId, Tape};
use crate::error::{shape_err, Result};
use crate::linalg::{selection_matrix, Matrix};
use crate::models::glorot;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorParams {
    pub wa: Matrix,
    pub wb: Matrix,
    pub b1: Matrix,
    pub w2: Matrix,
    pub b2: Matrix,
}

/// Tape handles of the generator weights.
#[derive(Debug, Clone, Copy)]
pub struct GeneratorInputs {
    pub wa: ExprId,
    pub wb: ExprId,
    pub b1: ExprId,
    pub w2: ExprId,
    pub b2: ExprId,
}

impl GeneratorParams {
    /// Glorot-uniform weights over the full `2d -> hidden -> 1` shapes, zero biases.
    pub fn init(features: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        let first = glorot(2 * features, hidden, rng);
        let (wa, wb) = first.view().split_at(ndarray::Axis(0), features);
        Self {
            wa: wa.to_owned(),
            wb: wb.to_owned(),
            b1: Matrix::zeros((1, hidden)),
            w2: glorot(hidden, 1, rng),
            b2: Matrix::zeros((1, 1)),
        }
    }

    pub fn zeros_like(&self) -> Self {
        let z = |m: &Matrix| Matrix::zeros(m.dim());
        Self {
            wa: z(&self.wa),
            wb: z(&self.wb),
            b1: z(&self.b1),
            w2: z(&self.w2),
            b2: z(&self.b2),
        }
    }

    pub fn features(&self) -> usize {
        self.wa.nrows()
    }

    pub fn matrices(&self) -> [&Matrix; 5] {
        [&self.wa, &self.wb, &self.b1, &self.w2, &self.b2]
    }

    pub fn matrices_mut(&mut self) -> [&mut Matrix; 5] {
        [&mut self.wa, &mut self.wb, &mut self.b1, &mut self.w2, &mut self.b2]
    }

    /// `self += factor * other`, matrix by matrix.
    pub fn scaled_add(&mut self, factor: f64, other: &Self) {
        for (a, b) in self.matrices_mut().into_iter().zip(other.matrices()) {
            a.scaled_add(factor, b);
        }
    }

    pub fn declare(&self, tape: &mut Tape) -> GeneratorInputs {
        let mut input = |m: &Matrix| tape.input(m.nrows(), m.ncols());
        GeneratorInputs {
            wa: input(&self.wa),
            wb: input(&self.wb),
            b1: input(&self.b1),
            w2: input(&self.w2),
            b2: input(&self.b2),
        }
    }

    pub fn bindings<'a>(&'a self, inputs: &GeneratorInputs) -> [(ExprId, &'a Matrix); 5] {
        [
            (inputs.wa, &self.wa),
            (inputs.wb, &self.wb),
            (inputs.b1, &self.b1),
            (inputs.w2, &self.w2),
            (inputs.b2, &self.b2),
        ]
    }
}

impl GeneratorInputs {
    pub fn ids(&self) -> [ExprId; 5] {
        [self.wa, self.wb, self.b1, self.w2, self.b2]
    }
}

/// Records the generated `n x n` adjacency of features `x` on the tape.
pub fn record_adjacency(tape: &mut Tape, x: ExprId, g: &GeneratorInputs) -> Result<ExprId> {
    let (n, d) = tape.shape(x);
    if tape.shape(g.wa).0 != d || tape.shape(g.wb).0 != d {
        return Err(shape_err!(
            "generator expects {} features, got {d}",
            tape.shape(g.wa).0
        ));
    }
    // pair p = i * n + j
    let firsts: Vec<usize> = (0..n * n).map(|p| p / n).collect();
    let seconds: Vec<usize> = (0..n * n).map(|p| p % n).collect();
    let s1 = tape.constant(selection_matrix(&firsts, n));
    let s2 = tape.constant(selection_matrix(&seconds, n));
    let ones_pairs = tape.constant(Matrix::ones((n * n, 1)));

    let xa = tape.matmul(x, g.wa)?;
    let xb = tape.matmul(x, g.wb)?;
    let bias1 = tape.matmul(ones_pairs, g.b1)?;
    let bias2 = tape.matmul(ones_pairs, g.b2)?;
    let logit = |first: ExprId, second: ExprId, tape: &mut Tape| -> Result<ExprId> {
        let a = tape.matmul(first, xa)?;
        let b = tape.matmul(second, xb)?;
        let ab = tape.add(a, b)?;
        let pre = tape.add(ab, bias1)?;
        let hidden = tape.relu(pre);
        let out = tape.matmul(hidden, g.w2)?;
        tape.add(out, bias2)
    };
    let forward = logit(s1, s2, tape)?;
    let reverse = logit(s2, s1, tape)?;
    let both = tape.add(forward, reverse)?;
    let mean = tape.scale(both, 0.5);

    // reshape the n^2 column into n x n: L = S1^T (mean 1^T ⊙ S2)
    let ones_row = tape.constant(Matrix::ones((1, n)));
    let spread = tape.matmul(mean, ones_row)?;
    let picked = tape.hadamard(spread, s2)?;
    let s1t = tape.transpose(s1);
    let logits = tape.matmul(s1t, picked)?;
    let probs = tape.sigmoid(logits);
    let off_diagonal = tape.constant(Matrix::ones((n, n)) - Matrix::eye(n));
    tape.hadamard(probs, off_diagonal)
}

/// Dense generated adjacency, entries in `(0, 1)` off the diagonal and zero on it.
pub fn generate_adjacency(x: &Matrix, params: &GeneratorParams) -> Result<Matrix> {
    let mut tape = Tape::new();
    let xi = tape.input(x.nrows(), x.ncols());
    let g = params.declare(&mut tape);
    let adj = record_adjacency(&mut tape, xi, &g)?;
    let mut bindings = vec![(xi, x)];
    bindings.extend(params.bindings(&g));
    tape.evaluate(adj, &bindings)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{finite_diff_check, sigmoid};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn fixture(n: usize, d: usize, seed: u64) -> (Matrix, GeneratorParams) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Matrix::from_shape_fn((n, d), |_| rng.gen_range(-1.0..1.0));
        let mut p = GeneratorParams::init(d, 6, &mut rng);
        p.b1.mapv_inplace(|_| rng.gen_range(-0.5..0.5));
        (x, p)
    }

    fn mlp(p: &GeneratorParams, xi: ndarray::ArrayView1<f64>, xj: ndarray::ArrayView1<f64>) -> f64 {
        let pre = xi.dot(&p.wa) + xj.dot(&p.wb) + p.b1.row(0);
        pre.mapv(|v| v.max(0.0)).dot(&p.w2.column(0)) + p.b2[[0, 0]]
    }

    #[test]
    fn matches_direct_pairwise_formula() {
        let (x, p) = fixture(5, 4, 1);
        let a = generate_adjacency(&x, &p).unwrap();
        for i in 0..5 {
            for j in 0..5 {
                let expected = if i == j {
                    0.0
                } else {
                    sigmoid((mlp(&p, x.row(i), x.row(j)) + mlp(&p, x.row(j), x.row(i))) / 2.0)
                };
                assert!((a[[i, j]] - expected).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn zero_output_layer_gives_one_half() {
        let (x, mut p) = fixture(4, 3, 2);
        p.w2.fill(0.0);
        let a = generate_adjacency(&x, &p).unwrap();
        for ((i, j), &v) in a.indexed_iter() {
            assert_eq!(v, if i == j { 0.0 } else { 0.5 });
        }
    }

    #[test]
    fn symmetric_and_permutation_equivariant() {
        let (x, p) = fixture(6, 3, 3);
        let a = generate_adjacency(&x, &p).unwrap();
        assert!(crate::linalg::max_abs(&(&a - &a.t())) < 1e-12);
        assert!(a.indexed_iter().all(|((i, j), &v)| if i == j { v == 0.0 } else { v > 0.0 && v < 1.0 }));

        let mut swapped = x.clone();
        swapped.row_mut(1).assign(&x.row(4));
        swapped.row_mut(4).assign(&x.row(1));
        let b = generate_adjacency(&swapped, &p).unwrap();
        let perm = [0, 4, 2, 3, 1, 5];
        for i in 0..6 {
            for j in 0..6 {
                assert!((b[[i, j]] - a[[perm[i], perm[j]]]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn gradient_check_through_generator() {
        let (x, p) = fixture(4, 3, 4);
        let mut tape = Tape::new();
        let xi = tape.input(4, 3);
        let g = p.declare(&mut tape);
        let adj = record_adjacency(&mut tape, xi, &g).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let w = tape.constant(Matrix::from_shape_fn((4, 4), |_| rng.gen_range(-1.0..1.0)));
        let weighted = tape.hadamard(adj, w).unwrap();
        let f = tape.sum(weighted);
        let mut bindings = vec![(xi, &x)];
        bindings.extend(p.bindings(&g));
        for input in [xi, g.wa, g.wb, g.b1, g.w2, g.b2] {
            let err = finite_diff_check(&mut tape, f, &bindings, input, 1e-5).unwrap();
            assert!(err < 1e-4, "input {}: {err}", input.index());
        }
    }
}
