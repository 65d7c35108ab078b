//! Evaluable maps `R^d -> R^d` produced by one training step.

use std::fmt;
use std::sync::OnceLock;

use kdtree::distance::squared_euclidean;
use kdtree::KdTree;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sample::EmpiricalSample;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum Model {
    Identity,
    Affine(AffineMap),
    Knn(KnnRegressor),
    Tabulated(TabulatedMap),
}

impl Model {
    pub fn evaluate(&self, x: &[f64]) -> Vec<f64> {
        match self {
            Model::Identity => x.to_vec(),
            Model::Affine(m) => m.apply(x),
            Model::Knn(m) => m.predict(x),
            Model::Tabulated(m) => m.evaluate(x),
        }
    }

    pub fn evaluate_batch(&self, points: &EmpiricalSample) -> EmpiricalSample {
        let d = points.dim();
        let rows: Vec<&[f64]> = points.rows().collect();
        let data: Vec<f64> = rows
            .par_iter()
            .flat_map_iter(|x| self.evaluate(x))
            .collect();
        EmpiricalSample::from_raw(d, data)
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            Model::Identity => "identity",
            Model::Affine(_) => "affine",
            Model::Knn(_) => "knn",
            Model::Tabulated(_) => "tabulated",
        }
    }
}

/// `x -> A x + b` with `A` stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffineMap {
    pub dim: usize,
    pub matrix: Vec<f64>,
    pub offset: Vec<f64>,
}

impl AffineMap {
    pub fn new(dim: usize, matrix: Vec<f64>, offset: Vec<f64>) -> Result<Self> {
        if matrix.len() != dim * dim || offset.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: offset.len(),
            });
        }
        Ok(Self {
            dim,
            matrix,
            offset,
        })
    }

    pub fn identity(dim: usize) -> Self {
        let mut matrix = vec![0.0; dim * dim];
        (0..dim).for_each(|i| matrix[i * dim + i] = 1.0);
        Self {
            dim,
            matrix,
            offset: vec![0.0; dim],
        }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let d = self.dim;
        (0..d)
            .map(|i| {
                let row = &self.matrix[i * d..(i + 1) * d];
                self.offset[i] + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>()
            })
            .collect()
    }

    /// `self o (x -> s x + c)`.
    pub fn compose_scaled(&self, s: f64, c: &[f64]) -> Self {
        let d = self.dim;
        let inner = self.apply(c);
        Self {
            dim: d,
            matrix: self.matrix.iter().map(|a| a * s).collect(),
            offset: inner,
        }
    }
}

/// k-nearest-neighbour regression with optional Gaussian kernel weights.
#[derive(Serialize, Deserialize)]
pub struct KnnRegressor {
    pub dim: usize,
    pub k: usize,
    pub bandwidth: Option<f64>,
    pub points: Vec<f64>,
    pub values: Vec<f64>,
    #[serde(skip)]
    tree: OnceLock<KdTree<f64, usize, Vec<f64>>>,
}

impl KnnRegressor {
    pub fn new(
        dim: usize,
        k: usize,
        bandwidth: Option<f64>,
        points: Vec<f64>,
        values: Vec<f64>,
    ) -> Result<Self> {
        if k == 0
            || points.is_empty()
            || points.len() != values.len()
            || !points.len().is_multiple_of(dim)
        {
            return Err(Error::Regressor(format!(
                "knn needs k >= 1 and matching non-empty point/value arrays (k = {k}, {} vs {})",
                points.len(),
                values.len()
            )));
        }
        Ok(Self {
            dim,
            k,
            bandwidth,
            points,
            values,
            tree: OnceLock::new(),
        })
    }

    pub fn len(&self) -> usize {
        self.points.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    fn tree(&self) -> &KdTree<f64, usize, Vec<f64>> {
        self.tree.get_or_init(|| {
            let mut tree = KdTree::with_capacity(self.dim, self.len().max(1));
            for (i, p) in self.points.chunks_exact(self.dim).enumerate() {
                tree.add(p.to_vec(), i).expect("finite training points");
            }
            tree
        })
    }

    pub fn predict(&self, x: &[f64]) -> Vec<f64> {
        let d = self.dim;
        let k = self.k.min(self.len());
        let found = self
            .tree()
            .nearest(x, k, &squared_euclidean)
            .expect("finite query point");
        let d2_min = found.first().map(|(d2, _)| *d2).unwrap_or(0.0);
        let mut out = vec![0.0; d];
        let mut total = 0.0;
        for (d2, &i) in &found {
            let w = match self.bandwidth {
                Some(h) => (-(d2 - d2_min) / (2.0 * h * h)).exp(),
                None => 1.0,
            };
            total += w;
            for (o, v) in out.iter_mut().zip(&self.values[i * d..(i + 1) * d]) {
                *o += w * v;
            }
        }
        out.iter_mut().for_each(|o| *o /= total);
        out
    }
}

impl Clone for KnnRegressor {
    fn clone(&self) -> Self {
        Self {
            dim: self.dim,
            k: self.k,
            bandwidth: self.bandwidth,
            points: self.points.clone(),
            values: self.values.clone(),
            tree: OnceLock::new(),
        }
    }
}

impl PartialEq for KnnRegressor {
    fn eq(&self, other: &Self) -> bool {
        self.dim == other.dim
            && self.k == other.k
            && self.bandwidth == other.bandwidth
            && self.points == other.points
            && self.values == other.values
    }
}

impl fmt::Debug for KnnRegressor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("KnnRegressor")
            .field("dim", &self.dim)
            .field("k", &self.k)
            .field("bandwidth", &self.bandwidth)
            .field("n", &self.len())
            .finish()
    }
}

/// A map that acts on an `m`-dimensional subspace through a grid table and
/// scales the orthogonal complement by a constant.
///
/// With orthonormal basis `Q` (d x m), `y = Q^T x` and
/// `f(x) = Q h(y) + perp_scale (x - Q y)`, where `h` interpolates a uniform
/// grid over `[lo, hi]^m`: tensor Catmull-Rom cubics in the interior and
/// multilinear in the edge cells, extrapolated linearly beyond the grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabulatedMap {
    pub dim: usize,
    pub sub_dim: usize,
    /// Column-major `d x m`.
    pub basis: Vec<f64>,
    pub lo: f64,
    pub hi: f64,
    pub nodes: usize,
    /// `m` values per node, node index `sum_a i_a nodes^a`.
    pub values: Vec<f64>,
    pub perp_scale: f64,
}

impl TabulatedMap {
    pub fn node_count(&self) -> usize {
        self.nodes.pow(self.sub_dim as u32)
    }

    pub fn spacing(&self) -> f64 {
        (self.hi - self.lo) / (self.nodes - 1) as f64
    }

    /// Subspace coordinates of node `index`.
    pub fn node_coords(&self, index: usize) -> Vec<f64> {
        let h = self.spacing();
        let mut rem = index;
        (0..self.sub_dim)
            .map(|_| {
                let i = rem % self.nodes;
                rem /= self.nodes;
                self.lo + i as f64 * h
            })
            .collect()
    }

    pub fn basis_col(&self, a: usize) -> &[f64] {
        &self.basis[a * self.dim..(a + 1) * self.dim]
    }

    pub fn project(&self, x: &[f64]) -> Vec<f64> {
        (0..self.sub_dim)
            .map(|a| self.basis_col(a).iter().zip(x).map(|(q, v)| q * v).sum())
            .collect()
    }

    pub fn lift(&self, y: &[f64]) -> Vec<f64> {
        let mut x = vec![0.0; self.dim];
        for (a, ya) in y.iter().enumerate() {
            for (xj, q) in x.iter_mut().zip(self.basis_col(a)) {
                *xj += ya * q;
            }
        }
        x
    }

    fn interpolate(&self, y: &[f64]) -> Vec<f64> {
        let m = self.sub_dim;
        let h = self.spacing();
        let mut cell = Vec::with_capacity(m);
        let mut frac = Vec::with_capacity(m);
        for &ya in y {
            let s = (ya - self.lo) / h;
            let i = (s.floor().max(0.0) as usize).min(self.nodes - 2);
            cell.push(i);
            frac.push(s - i as f64);
        }
        let interior = cell
            .iter()
            .zip(&frac)
            .all(|(&i, &f)| i >= 1 && i + 2 < self.nodes && (0.0..=1.0).contains(&f));
        let (taps, lo_off) = if interior { (4usize, 1usize) } else { (2, 0) };
        // per-axis tap weights
        let weights: Vec<[f64; 4]> = frac
            .iter()
            .map(|&f| {
                if interior {
                    catmull_rom(f)
                } else {
                    [1.0 - f, f, 0.0, 0.0]
                }
            })
            .collect();
        let mut out = vec![0.0; m];
        for corner in 0..taps.pow(m as u32) {
            let mut w = 1.0;
            let mut index = 0;
            let mut stride = 1;
            let mut rem = corner;
            for a in 0..m {
                let tap = rem % taps;
                rem /= taps;
                w *= weights[a][tap];
                index += (cell[a] + tap - lo_off) * stride;
                stride *= self.nodes;
            }
            for (o, v) in out.iter_mut().zip(&self.values[index * m..(index + 1) * m]) {
                *o += w * v;
            }
        }
        out
    }

    pub fn evaluate(&self, x: &[f64]) -> Vec<f64> {
        let y = self.project(x);
        let inside = self.lift(&y);
        let h = self.lift(&self.interpolate(&y));
        (0..self.dim)
            .map(|j| h[j] + self.perp_scale * (x[j] - inside[j]))
            .collect()
    }
}

/// Catmull-Rom tap weights for nodes `i - 1, i, i + 1, i + 2` at offset `f`.
fn catmull_rom(f: f64) -> [f64; 4] {
    let (f2, f3) = (f * f, f * f * f);
    [
        0.5 * (-f3 + 2.0 * f2 - f),
        0.5 * (3.0 * f3 - 5.0 * f2 + 2.0),
        0.5 * (-3.0 * f3 + 4.0 * f2 + f),
        0.5 * (f3 - f2),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn affine_apply_and_compose() {
        let a = AffineMap::new(2, vec![1.0, 2.0, 0.0, 3.0], vec![1.0, -1.0]).unwrap();
        assert_eq!(a.apply(&[1.0, 1.0]), vec![4.0, 2.0]);
        // a(2 x + (1, 0))
        let c = a.compose_scaled(2.0, &[1.0, 0.0]);
        assert_eq!(c.apply(&[1.0, 1.0]), a.apply(&[3.0, 2.0]));
        assert!(AffineMap::new(2, vec![1.0], vec![0.0, 0.0]).is_err());
    }

    #[test]
    fn knn_single_point_is_constant() {
        let m = KnnRegressor::new(2, 5, None, vec![0.0, 0.0], vec![3.0, 4.0]).unwrap();
        assert_eq!(m.predict(&[10.0, -7.0]), vec![3.0, 4.0]);
    }

    #[test]
    fn knn_averages_neighbours() {
        let pts = vec![0.0, 1.0, 2.0, 10.0];
        let vals = vec![1.0, 2.0, 3.0, 100.0];
        let m = KnnRegressor::new(1, 3, None, pts.clone(), vals.clone()).unwrap();
        assert!((m.predict(&[1.0])[0] - 2.0).abs() < 1e-15);
        let sharp = KnnRegressor::new(1, 3, Some(1e-3), pts, vals).unwrap();
        assert!((sharp.predict(&[0.1])[0] - 1.0).abs() < 1e-12);
        assert_eq!(m.clone(), m);
    }

    #[test]
    fn tabulated_reproduces_linear_functions() {
        // h(y) = 2 y + 1 on the first axis of R^2, perp scaled by 0.5
        let nodes = 11;
        let (lo, hi) = (-5.0, 5.0);
        let values: Vec<f64> = (0..nodes).map(|i| 2.0 * (lo + i as f64) + 1.0).collect();
        let t = TabulatedMap {
            dim: 2,
            sub_dim: 1,
            basis: vec![1.0, 0.0],
            lo,
            hi,
            nodes,
            values,
            perp_scale: 0.5,
        };
        for x in [[0.3, 2.0], [-4.9, -1.0], [7.5, 0.0], [-9.0, 4.0]] {
            let y = t.evaluate(&x);
            assert!((y[0] - (2.0 * x[0] + 1.0)).abs() < 1e-12);
            assert!((y[1] - 0.5 * x[1]).abs() < 1e-15);
        }
    }

    #[test]
    fn cubic_interior_is_exact_on_quadratics() {
        let nodes = 21;
        let mut t = TabulatedMap {
            dim: 1,
            sub_dim: 1,
            basis: vec![1.0],
            lo: -2.0,
            hi: 2.0,
            nodes,
            values: vec![],
            perp_scale: 0.0,
        };
        t.values = (0..nodes).map(|i| t.node_coords(i)[0].powi(2)).collect();
        for x in [-1.23, 0.0, 0.41, 1.77] {
            assert!((t.evaluate(&[x])[0] - x * x).abs() < 1e-13);
        }
    }

    #[test]
    fn bilinear_table_is_exact_on_bilinear_functions() {
        let nodes = 5;
        let mut t = TabulatedMap {
            dim: 2,
            sub_dim: 2,
            basis: vec![1.0, 0.0, 0.0, 1.0],
            lo: -1.0,
            hi: 1.0,
            nodes,
            values: vec![],
            perp_scale: 0.0,
        };
        let f = |y: &[f64]| vec![y[0] * y[1] + y[0], 3.0 - y[1]];
        t.values = (0..t.node_count())
            .flat_map(|i| f(&t.node_coords(i)))
            .collect();
        for x in [[0.1, 0.7], [-0.95, 0.33], [0.5, -0.5]] {
            let (a, b) = (t.evaluate(&x), f(&x));
            assert!((a[0] - b[0]).abs() < 1e-12 && (a[1] - b[1]).abs() < 1e-12);
        }
    }
}
