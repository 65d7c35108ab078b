//! Wasserstein-1 distances between equal-size empirical samples.

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::rng;
use crate::sample::EmpiricalSample;

/// Largest `n` accepted by the assignment solver (`O(n^3)` time, `O(n^2)` memory).
pub const ASSIGNMENT_CAP: usize = 512;

fn check_sizes(a: &EmpiricalSample, b: &EmpiricalSample) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            expected: a.dim(),
            got: b.dim(),
        });
    }
    if a.len() != b.len() {
        return Err(Error::SizeMismatch(a.len(), b.len()));
    }
    Ok(())
}

fn sorted(mut v: Vec<f64>) -> Vec<f64> {
    v.sort_by(f64::total_cmp);
    v
}

/// Mean absolute difference of order statistics; zero for empty input.
pub fn w1_sorted_values(a: Vec<f64>, b: Vec<f64>) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::SizeMismatch(a.len(), b.len()));
    }
    if a.is_empty() {
        return Ok(0.0);
    }
    let n = a.len() as f64;
    let (a, b) = (sorted(a), sorted(b));
    Ok(a.iter().zip(&b).map(|(x, y)| (x - y).abs()).sum::<f64>() / n)
}

/// Exact `W1` between two one-dimensional empirical measures.
pub fn w1_exact_1d(a: &EmpiricalSample, b: &EmpiricalSample) -> Result<f64> {
    check_sizes(a, b)?;
    if a.dim() != 1 {
        return Err(Error::Unsupported(format!(
            "w1_exact_1d needs d = 1, got d = {}",
            a.dim()
        )));
    }
    w1_sorted_values(a.as_slice().to_vec(), b.as_slice().to_vec())
}

/// Minimum-cost perfect matching for the row-major `n x n` cost matrix.
///
/// Shortest augmenting paths with dual potentials. Returns `assignment[row]`
/// and the total cost summed in row order.
pub fn min_cost_assignment(cost: &[f64], n: usize) -> (Vec<usize>, f64) {
    assert_eq!(cost.len(), n * n);
    if n == 0 {
        return (vec![], 0.0);
    }
    // 1-based columns; column 0 is the virtual root
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut owner = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for row in 1..=n {
        owner[0] = row;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost[(i0 - 1) * n + (j - 1)] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0; n];
    for j in 1..=n {
        assignment[owner[j] - 1] = j - 1;
    }
    let total = (0..n).map(|i| cost[i * n + assignment[i]]).sum();
    (assignment, total)
}

/// Exact `W1` under Euclidean cost via optimal assignment; `n <= 512`.
pub fn w1_assignment(a: &EmpiricalSample, b: &EmpiricalSample) -> Result<f64> {
    check_sizes(a, b)?;
    let n = a.len();
    if n > ASSIGNMENT_CAP {
        return Err(Error::SizeCap {
            n,
            cap: ASSIGNMENT_CAP,
        });
    }
    if n == 0 {
        return Ok(0.0);
    }
    let cost: Vec<f64> = a
        .rows()
        .flat_map(|x| {
            b.rows().map(move |y| {
                x.iter()
                    .zip(y)
                    .map(|(p, q)| (p - q) * (p - q))
                    .sum::<f64>()
                    .sqrt()
            })
        })
        .collect();
    Ok(min_cost_assignment(&cost, n).1 / n as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SlicedW1 {
    pub mean: f64,
    /// Standard error of the mean over projections (0 for one projection).
    pub std_error: f64,
    pub n_projections: usize,
}

/// Average of one-dimensional `W1` over uniform random directions.
pub fn sliced_w1<R: Rng + ?Sized>(
    a: &EmpiricalSample,
    b: &EmpiricalSample,
    n_projections: usize,
    rng: &mut R,
) -> Result<SlicedW1> {
    check_sizes(a, b)?;
    if n_projections == 0 {
        return Err(Error::Config("n_projections must be >= 1".into()));
    }
    let dirs: Vec<Vec<f64>> = (0..n_projections)
        .map(|_| rng::unit_vector(rng, a.dim()))
        .collect();
    let values: Vec<f64> = dirs
        .par_iter()
        .map(|th| w1_sorted_values(a.project(th), b.project(th)))
        .collect::<Result<_>>()?;
    let k = values.len() as f64;
    let mean = values.iter().sum::<f64>() / k;
    let std_error = if values.len() > 1 {
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1.0);
        (var / k).sqrt()
    } else {
        0.0
    };
    Ok(SlicedW1 {
        mean,
        std_error,
        n_projections,
    })
}
