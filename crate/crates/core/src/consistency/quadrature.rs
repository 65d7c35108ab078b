//! Deterministic expectation rules for `E f(Z)`, `Z ~ N(0, I_q)`.

use nalgebra::{DMatrix, SymmetricEigen};

/// Largest dimension that gets a tensor Gauss-Hermite rule.
pub const TENSOR_MAX_DIM: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct GaussRule {
    pub dim: usize,
    /// Row-major `len x dim`.
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussRule {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn node(&self, i: usize) -> &[f64] {
        &self.nodes[i * self.dim..(i + 1) * self.dim]
    }

    /// Tensor Gauss-Hermite with `per_axis` points when `dim <= 3`; otherwise
    /// the `2 dim` point rule `+-sqrt(dim) e_j`, exact for cubics.
    pub fn standard_normal(dim: usize, per_axis: usize) -> Self {
        if dim == 0 {
            return Self {
                dim,
                nodes: vec![],
                weights: vec![1.0],
            };
        }
        if dim > TENSOR_MAX_DIM {
            let r = (dim as f64).sqrt();
            let mut nodes = Vec::with_capacity(2 * dim * dim);
            for j in 0..dim {
                for s in [r, -r] {
                    let mut z = vec![0.0; dim];
                    z[j] = s;
                    nodes.extend(z);
                }
            }
            return Self {
                dim,
                nodes,
                weights: vec![1.0 / (2 * dim) as f64; 2 * dim],
            };
        }
        let (x, w) = hermite_1d(per_axis);
        let n = x.len();
        let total = n.pow(dim as u32);
        let mut nodes = Vec::with_capacity(total * dim);
        let mut weights = Vec::with_capacity(total);
        for idx in 0..total {
            let mut rem = idx;
            let mut wt = 1.0;
            for _ in 0..dim {
                let i = rem % n;
                rem /= n;
                nodes.push(x[i]);
                wt *= w[i];
            }
            weights.push(wt);
        }
        Self {
            dim,
            nodes,
            weights,
        }
    }
}

/// Nodes and weights of the `n`-point rule for the standard normal weight,
/// from the eigen-decomposition of the Jacobi matrix of `He_n`.
pub fn hermite_1d(n: usize) -> (Vec<f64>, Vec<f64>) {
    let n = n.max(1);
    let mut jac = DMatrix::<f64>::zeros(n, n);
    for k in 1..n {
        let b = (k as f64).sqrt();
        jac[(k - 1, k)] = b;
        jac[(k, k - 1)] = b;
    }
    let eig = SymmetricEigen::new(jac);
    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|i| (eig.eigenvalues[i], eig.eigenvectors[(0, i)].powi(2)))
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    pairs.into_iter().unzip()
}
