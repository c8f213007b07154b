//! Gaussian k-nearest-neighbor similarity graph over instances.

use crate::error::{PmlError, Result};
use crate::linalg::{ensure_finite, Mat};

/// Symmetric similarity matrix with zero diagonal and its row sums.
#[derive(Debug, Clone)]
pub struct SimilarityGraph {
    pub s: Mat,
    pub degree: Vec<f64>,
    pub k: usize,
    pub sigma: f64,
}

impl SimilarityGraph {
    pub fn n(&self) -> usize {
        self.degree.len()
    }

    pub fn max_degree(&self) -> f64 {
        self.degree.iter().copied().fold(0.0, f64::max)
    }

    /// Graph with no edges, used when the local term is disabled.
    pub fn empty(n: usize) -> Self {
        SimilarityGraph {
            s: Mat::zeros(n, n),
            degree: vec![0.0; n],
            k: 0,
            sigma: 0.0,
        }
    }

    /// Builds a graph from an explicit symmetric weight matrix.
    pub fn from_weights(s: Mat, k: usize, sigma: f64) -> Result<Self> {
        if !s.is_square() {
            return Err(PmlError::invalid("similarity matrix must be square"));
        }
        ensure_finite(&s, "similarity matrix")?;
        let n = s.nrows();
        for i in 0..n {
            for j in 0..n {
                if s[(i, j)] < 0.0 || (s[(i, j)] - s[(j, i)]).abs() > 0.0 {
                    return Err(PmlError::invalid(
                        "similarity matrix must be symmetric and non-negative",
                    ));
                }
            }
        }
        let degree = row_sums(&s);
        Ok(SimilarityGraph {
            s,
            degree,
            k,
            sigma,
        })
    }

    /// `D^s` as a dense diagonal matrix.
    pub fn degree_matrix(&self) -> Mat {
        degree_matrix(self)
    }
}

fn row_sums(s: &Mat) -> Vec<f64> {
    s.row_iter().map(|r| r.sum()).collect()
}

pub fn squared_distances(x: &Mat) -> Mat {
    let n = x.nrows();
    // columns of xt are instances, contiguous in memory
    let xt = x.transpose();
    let mut d = Mat::zeros(n, n);
    for i in 0..n {
        let a = xt.column(i);
        for j in (i + 1)..n {
            let b = xt.column(j);
            let v: f64 = a.iter().zip(b.iter()).map(|(p, q)| (p - q) * (p - q)).sum();
            d[(i, j)] = v;
            d[(j, i)] = v;
        }
    }
    d
}

/// Indices of the `k` nearest neighbors of `i` (excluding `i`), nearest first.
/// Equal distances keep the lower index.
fn nearest(dist: &Mat, i: usize, k: usize) -> Vec<usize> {
    let row = dist.column(i);
    let cmp = |a: &usize, b: &usize| row[*a].total_cmp(&row[*b]).then(a.cmp(b));
    let mut idx: Vec<usize> = (0..dist.nrows()).filter(|&j| j != i).collect();
    if k < idx.len() {
        idx.select_nth_unstable_by(k - 1, cmp);
        idx.truncate(k);
    }
    idx.sort_unstable_by(cmp);
    idx
}

/// Similarity `exp(-||x_i - x_j||^2 / sigma^2)` on the symmetrized kNN support
/// (an edge exists when either endpoint is among the other's `k` nearest).
/// `sigma` is the mean distance from each instance to its `k`-th neighbor.
pub fn knn_similarity(x: &Mat, k: usize) -> Result<SimilarityGraph> {
    let n = x.nrows();
    if k == 0 || k >= n {
        return Err(PmlError::invalid(format!(
            "neighborhood size must satisfy 1 <= k < n (k = {k}, n = {n})"
        )));
    }
    ensure_finite(x, "feature matrix")?;

    let dist = squared_distances(x);
    let neighbors: Vec<Vec<usize>> = (0..n).map(|i| nearest(&dist, i, k)).collect();
    let sigma = neighbors
        .iter()
        .enumerate()
        .map(|(i, nb)| dist[(i, nb[k - 1])].sqrt())
        .sum::<f64>()
        / n as f64;

    let kernel = |d2: f64| {
        if sigma > 0.0 {
            (-d2 / (sigma * sigma)).exp()
        } else if d2 == 0.0 {
            1.0
        } else {
            0.0
        }
    };

    let mut s = Mat::zeros(n, n);
    for (i, nb) in neighbors.iter().enumerate() {
        for &j in nb {
            let w = kernel(dist[(i, j)]);
            s[(i, j)] = w;
            s[(j, i)] = w;
        }
    }
    let degree = row_sums(&s);
    Ok(SimilarityGraph {
        s,
        degree,
        k,
        sigma,
    })
}

pub fn degree_matrix(g: &SimilarityGraph) -> Mat {
    let n = g.n();
    let mut d = Mat::zeros(n, n);
    for (i, v) in g.degree.iter().enumerate() {
        d[(i, i)] = *v;
    }
    d
}
