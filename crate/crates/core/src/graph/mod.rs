//! Original and synthetic graphs, GCN normalization and feature propagation.

mod budget;
mod io;
pub mod synthetic;

pub use budget::{derive_budget, split_budget, BudgetRule};
pub use io::{load_graph, save_graph, Meta};

use crate::error::{shape_err, Error, Result};
use crate::linalg::{CsrMatrix, Matrix};

/// Node index lists for the train / validation / test splits.
#[derive(Debug, Clone, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Splits {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// A node-classification dataset.
///
/// The adjacency is a symmetric 0/1 CSR matrix without self-loops; labels lie in
/// `0..num_classes` and every class occurs among the training nodes.
#[derive(Debug, Clone)]
pub struct Graph {
    adjacency: CsrMatrix,
    features: Matrix,
    labels: Vec<usize>,
    num_classes: usize,
    splits: Splits,
}

impl Graph {
    /// Builds a validated graph from an undirected edge list.
    ///
    /// Edges are symmetrized; duplicates and self-loops are dropped.
    pub fn from_edges(
        num_nodes: usize,
        edges: &[(usize, usize)],
        features: Matrix,
        labels: Vec<usize>,
        num_classes: usize,
        splits: Splits,
    ) -> Result<Self> {
        let mut pairs = Vec::with_capacity(edges.len() * 2);
        for &(u, v) in edges {
            if u >= num_nodes || v >= num_nodes {
                return Err(Error::Load(format!(
                    "edge ({u}, {v}) references a node outside 0..{num_nodes}"
                )));
            }
            if u != v {
                pairs.push((u.min(v), u.max(v)));
            }
        }
        pairs.sort_unstable();
        pairs.dedup();
        let triplets = pairs
            .iter()
            .flat_map(|&(u, v)| [(u, v, 1.0), (v, u, 1.0)]);
        let adjacency = CsrMatrix::from_triplets(num_nodes, num_nodes, triplets)?;
        Self::new(adjacency, features, labels, num_classes, splits)
    }

    pub fn new(
        adjacency: CsrMatrix,
        features: Matrix,
        labels: Vec<usize>,
        num_classes: usize,
        splits: Splits,
    ) -> Result<Self> {
        let n = adjacency.rows();
        if adjacency.cols() != n {
            return Err(Error::Load(format!(
                "adjacency must be square, got {}x{}",
                n,
                adjacency.cols()
            )));
        }
        if !adjacency.is_symmetric() {
            return Err(Error::Load("adjacency is not symmetric".into()));
        }
        if (0..n).any(|i| adjacency.get(i, i) != 0.0) {
            return Err(Error::Load("adjacency stores a self-loop".into()));
        }
        if features.nrows() != n {
            return Err(Error::Load(format!(
                "features have {} rows but the graph has {n} nodes",
                features.nrows()
            )));
        }
        if labels.len() != n {
            return Err(Error::Load(format!(
                "{} labels for {n} nodes",
                labels.len()
            )));
        }
        if num_classes == 0 {
            return Err(Error::Load("number of classes must be positive".into()));
        }
        if let Some((i, &l)) = labels.iter().enumerate().find(|(_, &l)| l >= num_classes) {
            return Err(Error::Load(format!(
                "label {l} of node {i} outside 0..{num_classes}"
            )));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::Load("features contain non-finite values".into()));
        }

        let mut owner = vec![None; n];
        for (name, ids) in [
            ("train", &splits.train),
            ("val", &splits.val),
            ("test", &splits.test),
        ] {
            for &i in ids {
                if i >= n {
                    return Err(Error::Load(format!("{name} split index {i} out of range")));
                }
                if let Some(prev) = owner[i] {
                    return Err(Error::Load(format!(
                        "node {i} appears in both {prev} and {name} splits"
                    )));
                }
                owner[i] = Some(name);
            }
        }
        let mut seen = vec![false; num_classes];
        for &i in &splits.train {
            seen[labels[i]] = true;
        }
        if let Some(c) = seen.iter().position(|s| !s) {
            return Err(Error::Load(format!("class {c} has no training node")));
        }

        Ok(Self {
            adjacency,
            features,
            labels,
            num_classes,
            splits,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.adjacency.rows()
    }

    pub fn num_features(&self) -> usize {
        self.features.ncols()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    /// Undirected edge count.
    pub fn num_edges(&self) -> usize {
        self.adjacency.nnz() / 2
    }

    pub fn adjacency(&self) -> &CsrMatrix {
        &self.adjacency
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn splits(&self) -> &Splits {
        &self.splits
    }

    pub fn train_mask(&self) -> Vec<bool> {
        mask(self.num_nodes(), &self.splits.train)
    }

    pub fn val_mask(&self) -> Vec<bool> {
        mask(self.num_nodes(), &self.splits.val)
    }

    pub fn test_mask(&self) -> Vec<bool> {
        mask(self.num_nodes(), &self.splits.test)
    }

    /// Training nodes of each class, in ascending node order.
    pub fn train_nodes_by_class(&self) -> Vec<Vec<usize>> {
        let mut by_class = vec![Vec::new(); self.num_classes];
        let mut train = self.splits.train.clone();
        train.sort_unstable();
        for i in train {
            by_class[self.labels[i]].push(i);
        }
        by_class
    }

    /// Undirected edges `(u, v)` with `u < v`, sorted.
    pub fn edge_list(&self) -> Vec<(usize, usize)> {
        (0..self.num_nodes())
            .flat_map(|u| self.adjacency.row(u).map(move |(v, _)| (u, v)))
            .filter(|(u, v)| u < v)
            .collect()
    }

    pub fn normalized_adjacency(&self) -> Result<NormAdj> {
        normalize_sparse(&self.adjacency).map(NormAdj::Sparse)
    }
}

fn mask(n: usize, ids: &[usize]) -> Vec<bool> {
    let mut m = vec![false; n];
    for &i in ids {
        m[i] = true;
    }
    m
}

/// The condensed graph: learned features, generated weighted adjacency, fixed labels.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticGraph {
    pub features: Matrix,
    pub adjacency: Matrix,
    pub labels: Vec<usize>,
    pub num_classes: usize,
}

impl SyntheticGraph {
    pub fn num_nodes(&self) -> usize {
        self.labels.len()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    /// Number of node pairs `i < j` joined by a nonzero weight.
    pub fn num_edges(&self) -> usize {
        let n = self.num_nodes();
        (0..n)
            .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
            .filter(|&(i, j)| self.adjacency[[i, j]] != 0.0)
            .count()
    }

    pub fn normalized_adjacency(&self) -> Result<NormAdj> {
        normalize_dense(&self.adjacency).map(NormAdj::Dense)
    }
}

/// `D^{-1/2} (A + I) D^{-1/2}` in sparse (original) or dense (synthetic) form.
#[derive(Debug, Clone)]
pub enum NormAdj {
    Sparse(CsrMatrix),
    Dense(Matrix),
}

impl NormAdj {
    pub fn dim(&self) -> usize {
        match self {
            NormAdj::Sparse(m) => m.rows(),
            NormAdj::Dense(m) => m.nrows(),
        }
    }

    /// `self * x`.
    pub fn apply(&self, x: &Matrix) -> Result<Matrix> {
        match self {
            NormAdj::Sparse(m) => m.mul_dense(x),
            NormAdj::Dense(m) => crate::linalg::checked_dot(m, x),
        }
    }

    /// `self^T * x`; equal to [`NormAdj::apply`] for symmetric adjacency.
    pub fn apply_t(&self, x: &Matrix) -> Result<Matrix> {
        match self {
            NormAdj::Sparse(m) => m.transpose_mul_dense(x),
            NormAdj::Dense(m) => crate::linalg::checked_dot(&m.t().to_owned(), x),
        }
    }

    pub fn to_dense(&self) -> Matrix {
        match self {
            NormAdj::Sparse(m) => m.to_dense(),
            NormAdj::Dense(m) => m.clone(),
        }
    }
}

fn inv_sqrt_degrees(row_sums: impl Iterator<Item = f64>) -> Vec<f64> {
    row_sums.map(|d| 1.0 / (d + 1.0).sqrt()).collect()
}

pub fn normalize_sparse(adjacency: &CsrMatrix) -> Result<CsrMatrix> {
    let n = adjacency.rows();
    if adjacency.cols() != n {
        return Err(shape_err!("adjacency {}x{} is not square", n, adjacency.cols()));
    }
    if adjacency.values().iter().any(|&v| v < 0.0 || !v.is_finite()) {
        return Err(Error::InvalidArgument(
            "adjacency has a negative or non-finite edge weight".into(),
        ));
    }
    let scale = inv_sqrt_degrees((0..n).map(|i| adjacency.row(i).map(|(_, v)| v).sum::<f64>()));
    let mut triplets = Vec::with_capacity(adjacency.nnz() + n);
    for i in 0..n {
        for (j, v) in adjacency.row(i) {
            triplets.push((i, j, v * scale[i] * scale[j]));
        }
        triplets.push((i, i, scale[i] * scale[i]));
    }
    CsrMatrix::from_triplets(n, n, triplets)
}

pub fn normalize_dense(adjacency: &Matrix) -> Result<Matrix> {
    let n = adjacency.nrows();
    if adjacency.ncols() != n {
        return Err(shape_err!("adjacency {}x{} is not square", n, adjacency.ncols()));
    }
    if adjacency.iter().any(|&v| v < 0.0 || !v.is_finite()) {
        return Err(Error::InvalidArgument(
            "adjacency has a negative or non-finite edge weight".into(),
        ));
    }
    let with_loops = adjacency + &Matrix::eye(n);
    let scale = inv_sqrt_degrees(adjacency.rows().into_iter().map(|r| r.sum()));
    Ok(Matrix::from_shape_fn((n, n), |(i, j)| {
        with_loops[[i, j]] * scale[i] * scale[j]
    }))
}

/// `adj^hops * x` by repeated multiplication.
pub fn propagate(adj: &NormAdj, x: &Matrix, hops: usize) -> Result<Matrix> {
    if x.nrows() != adj.dim() {
        return Err(shape_err!(
            "cannot propagate {}x{} features over {} nodes",
            x.nrows(),
            x.ncols(),
            adj.dim()
        ));
    }
    let mut out = x.clone();
    for _ in 0..hops {
        out = adj.apply(&out)?;
    }
    Ok(out)
}

/// Rows `rows` of `adj^hops * x`, touching only the `hops`-hop neighborhood of `rows`.
pub fn propagate_rows(adj: &CsrMatrix, x: &Matrix, rows: &[usize], hops: usize) -> Result<Matrix> {
    let n = adj.rows();
    if adj.cols() != n || x.nrows() != n {
        return Err(shape_err!(
            "cannot propagate {}x{} features over a {}x{} adjacency",
            x.nrows(),
            x.ncols(),
            n,
            adj.cols()
        ));
    }
    if let Some(&r) = rows.iter().find(|&&r| r >= n) {
        return Err(shape_err!("row {r} outside 0..{n}"));
    }
    // levels[h] = nodes whose hop-h value is needed, in first-seen order
    let mut levels = vec![rows.to_vec()];
    for _ in 0..hops {
        let mut seen = vec![false; n];
        let mut next = Vec::new();
        for &r in levels.last().expect("nonempty") {
            for (c, _) in adj.row(r) {
                if !seen[c] {
                    seen[c] = true;
                    next.push(c);
                }
            }
        }
        levels.push(next);
    }
    let mut values = crate::linalg::gather_rows(x, levels.last().expect("nonempty"));
    for h in (0..hops).rev() {
        let mut position = vec![usize::MAX; n];
        for (i, &c) in levels[h + 1].iter().enumerate() {
            position[c] = i;
        }
        let mut out = Matrix::zeros((levels[h].len(), x.ncols()));
        for (i, &r) in levels[h].iter().enumerate() {
            let mut row = out.row_mut(i);
            for (c, w) in adj.row(r) {
                row.scaled_add(w, &values.row(position[c]));
            }
        }
        values = out;
    }
    Ok(values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn path3() -> Graph {
        Graph::from_edges(
            3,
            &[(0, 1), (1, 2)],
            array![[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]],
            vec![0, 1, 0],
            2,
            Splits {
                train: vec![0, 1],
                val: vec![2],
                test: vec![],
            },
        )
        .unwrap()
    }

    #[test]
    fn path_graph_stores_both_directions() {
        let g = path3();
        assert_eq!(g.num_nodes(), 3);
        assert_eq!(g.adjacency().nnz(), 4);
        assert_eq!(g.num_edges(), 2);
        assert_eq!(g.edge_list(), vec![(0, 1), (1, 2)]);
    }

    #[test]
    fn rejects_bad_labels_and_overlapping_splits() {
        let feats = Matrix::zeros((2, 1));
        let bad_label = Graph::from_edges(
            2,
            &[(0, 1)],
            feats.clone(),
            vec![0, 5],
            2,
            Splits {
                train: vec![0, 1],
                ..Default::default()
            },
        );
        assert!(matches!(bad_label, Err(Error::Load(_))));
        let overlap = Graph::from_edges(
            2,
            &[],
            feats.clone(),
            vec![0, 1],
            2,
            Splits {
                train: vec![0, 1],
                val: vec![1],
                test: vec![],
            },
        );
        assert!(matches!(overlap, Err(Error::Load(_))));
        let missing_class = Graph::from_edges(
            2,
            &[],
            feats,
            vec![0, 1],
            2,
            Splits {
                train: vec![0],
                ..Default::default()
            },
        );
        assert!(matches!(missing_class, Err(Error::Load(_))));
    }

    #[test]
    fn isolated_node_normalizes_to_one() {
        let adj = CsrMatrix::from_triplets(1, 1, []).unwrap();
        assert_eq!(normalize_sparse(&adj).unwrap().to_dense(), array![[1.0]]);
        assert_eq!(normalize_dense(&array![[0.0]]).unwrap(), array![[1.0]]);
    }

    #[test]
    fn single_edge_normalizes_to_halves() {
        let dense = normalize_dense(&array![[0.0, 1.0], [1.0, 0.0]]).unwrap();
        assert!(dense.abs_diff_eq(&array![[0.5, 0.5], [0.5, 0.5]], 1e-15));
    }

    #[test]
    fn path_center_entry_is_one_third() {
        // degrees with self loops: 2, 3, 2
        let norm = path3().normalized_adjacency().unwrap().to_dense();
        let expected = array![
            [0.5, 1.0 / 6f64.sqrt(), 0.0],
            [1.0 / 6f64.sqrt(), 1.0 / 3.0, 1.0 / 6f64.sqrt()],
            [0.0, 1.0 / 6f64.sqrt(), 0.5]
        ];
        for (a, b) in norm.iter().zip(expected.iter()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn negative_weight_is_rejected() {
        assert!(normalize_dense(&array![[0.0, -1.0], [-1.0, 0.0]]).is_err());
    }

    #[test]
    fn propagation_cases() {
        let adj = NormAdj::Dense(normalize_dense(&array![[0.0, 1.0], [1.0, 0.0]]).unwrap());
        let ones = Matrix::ones((2, 3));
        assert_eq!(propagate(&adj, &ones, 0).unwrap(), ones);
        assert!(propagate(&adj, &ones, 1).unwrap().abs_diff_eq(&ones, 1e-15));
        let x = array![[1.0, 2.0], [3.0, -1.0]];
        let twice = propagate(&adj, &propagate(&adj, &x, 1).unwrap(), 1).unwrap();
        assert_eq!(propagate(&adj, &x, 2).unwrap(), twice);
        assert!(propagate(&adj, &Matrix::ones((3, 1)), 1).is_err());
    }

    #[test]
    fn row_propagation_matches_full() {
        let g = synthetic::PlantedPartition::small(1).generate().unwrap();
        let NormAdj::Sparse(adj) = g.normalized_adjacency().unwrap() else {
            unreachable!()
        };
        let full = propagate(&NormAdj::Sparse(adj.clone()), g.features(), 2).unwrap();
        let rows = [5, 17, 3, 200];
        let part = propagate_rows(&adj, g.features(), &rows, 2).unwrap();
        let expected = crate::linalg::gather_rows(&full, &rows);
        assert!(part.abs_diff_eq(&expected, 1e-12));
        assert_eq!(propagate_rows(&adj, g.features(), &rows, 0).unwrap(), crate::linalg::gather_rows(g.features(), &rows));
    }

    #[test]
    fn normalized_spectrum_is_bounded() {
        let g = path3();
        let m = g.normalized_adjacency().unwrap().to_dense();
        // power iteration on a symmetric matrix converges to the dominant |eigenvalue|
        let mut v = array![[1.0], [0.3], [-0.7]];
        let mut lambda = 0.0;
        for _ in 0..200 {
            let w = m.dot(&v);
            lambda = w.iter().map(|x| x * x).sum::<f64>().sqrt();
            v = w / lambda;
        }
        assert!(lambda <= 1.0 + 1e-9, "dominant eigenvalue {lambda}");
    }
}
