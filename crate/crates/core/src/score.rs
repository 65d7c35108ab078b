//! Smoothed score `s_ab(x) = grad log p_{X(ab)}(x)`, its Jacobian, and the
//! posterior-moment matrix `J`.
//!
//! Two independent routes are kept on purpose. [`score_jacobian`] is the
//! Hessian of the log-mixture (per-component precision plus the weighted
//! covariance of the component scores); [`j_matrix_at`] is assembled from raw
//! posterior moments of `x - sqrt(ab) X0`. They agree through
//! `J = -(1 - ab) grad s`.

use nalgebra::DMatrix;
use rand::Rng;

use crate::error::Result;
use crate::schedule::Schedule;
use crate::targets::{check_alpha_bar, SmoothedPosterior, Target};

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreEvaluation {
    pub value: Vec<f64>,
    pub jacobian: Option<DMatrix<f64>>,
    pub j_matrix: Option<DMatrix<f64>>,
}

/// Per-component score `-(x - sqrt(ab) c_i) / v_i`, row-major.
fn component_scores(p: &SmoothedPosterior) -> Vec<f64> {
    let d = p.dim();
    let mut g = Vec::with_capacity(p.len() * d);
    for i in 0..p.len() {
        let v = p.smoothed_variances[i];
        g.extend(p.center(i).iter().zip(&p.x).map(|(c, x)| -(x - c) / v));
    }
    g
}

fn score_from_posterior(p: &SmoothedPosterior) -> Vec<f64> {
    let d = p.dim();
    let g = component_scores(p);
    let mut s = vec![0.0; d];
    for (i, w) in p.weights.iter().enumerate() {
        for j in 0..d {
            s[j] += w * g[i * d + j];
        }
    }
    s
}

fn jacobian_from_posterior(p: &SmoothedPosterior) -> DMatrix<f64> {
    let d = p.dim();
    let g = component_scores(p);
    let mean = score_from_posterior(p);
    let mut h = DMatrix::zeros(d, d);
    for (i, &w) in p.weights.iter().enumerate() {
        if w == 0.0 {
            continue;
        }
        let prec = w / p.smoothed_variances[i];
        for a in 0..d {
            h[(a, a)] -= prec;
            let da = g[i * d + a] - mean[a];
            for b in 0..d {
                h[(a, b)] += w * da * (g[i * d + b] - mean[b]);
            }
        }
    }
    h
}

/// `s_ab(x)`.
pub fn score(target: &Target, alpha_bar: f64, x: &[f64]) -> Result<Vec<f64>> {
    Ok(score_from_posterior(&target.posterior(alpha_bar, x)?))
}

/// `s_ab(x)` written into `out` without building the posterior; `log_terms`
/// is scratch space reused across calls. Inputs are not validated.
pub(crate) fn score_into(
    target: &Target,
    alpha_bar: f64,
    x: &[f64],
    out: &mut [f64],
    log_terms: &mut Vec<f64>,
) {
    let d = x.len();
    let sab = alpha_bar.sqrt();
    let noise = 1.0 - alpha_bar;
    let n = target.n_components();
    log_terms.clear();
    let mut max = f64::NEG_INFINITY;
    for i in 0..n {
        let c = target.center(i);
        let v = alpha_bar * target.component_variance(i) + noise;
        let sq: f64 = (0..d).map(|j| (x[j] - sab * c[j]).powi(2)).sum();
        let l = target.weights()[i].ln() - 0.5 * d as f64 * v.ln() - 0.5 * sq / v;
        max = max.max(l);
        log_terms.push(l);
    }
    out.iter_mut().for_each(|o| *o = 0.0);
    let mut total = 0.0;
    for (i, l) in log_terms.iter().enumerate() {
        let w = (l - max).exp();
        if w == 0.0 {
            continue;
        }
        total += w;
        let c = target.center(i);
        let v = alpha_bar * target.component_variance(i) + noise;
        for j in 0..d {
            out[j] -= w * (x[j] - sab * c[j]) / v;
        }
    }
    out.iter_mut().for_each(|o| *o /= total);
}

/// `grad s_ab(x)`, exact.
pub fn score_jacobian(target: &Target, alpha_bar: f64, x: &[f64]) -> Result<DMatrix<f64>> {
    Ok(jacobian_from_posterior(&target.posterior(alpha_bar, x)?))
}

/// `J(x) = I + (E[V] E[V]^T - E[V V^T]) / (1 - ab)` with `V = x - sqrt(ab) X0`
/// under the posterior given `X(ab) = x`.
pub fn j_matrix_at(target: &Target, alpha_bar: f64, x: &[f64]) -> Result<DMatrix<f64>> {
    let p = target.posterior(alpha_bar, x)?;
    let d = p.dim();
    let sab = alpha_bar.sqrt();
    let mut mean = vec![0.0; d];
    let mut second = DMatrix::<f64>::zeros(d, d);
    let mut v = vec![0.0; d];
    for (i, &w) in p.weights.iter().enumerate() {
        let m0 = p.x0_mean(i);
        for j in 0..d {
            v[j] = x[j] - sab * m0[j];
            mean[j] += w * v[j];
        }
        let within = alpha_bar * p.x0_variances[i];
        for a in 0..d {
            second[(a, a)] += w * within;
            for b in 0..d {
                second[(a, b)] += w * v[a] * v[b];
            }
        }
    }
    let mut j = DMatrix::identity(d, d);
    let scale = 1.0 / (1.0 - alpha_bar);
    for a in 0..d {
        for b in 0..d {
            j[(a, b)] += scale * (mean[a] * mean[b] - second[(a, b)]);
        }
    }
    Ok(j)
}

/// `J_t(x)` at schedule index `t`.
pub fn j_matrix(target: &Target, schedule: &Schedule, t: usize, x: &[f64]) -> Result<DMatrix<f64>> {
    schedule.check_index(t, 1)?;
    j_matrix_at(target, schedule.alpha_bar(t), x)
}

/// Score with optional Jacobian and `J`, sharing one posterior evaluation for
/// the score and the Jacobian.
pub fn evaluate(
    target: &Target,
    alpha_bar: f64,
    x: &[f64],
    with_jacobian: bool,
    with_j: bool,
) -> Result<ScoreEvaluation> {
    let p = target.posterior(alpha_bar, x)?;
    Ok(ScoreEvaluation {
        value: score_from_posterior(&p),
        jacobian: with_jacobian.then(|| jacobian_from_posterior(&p)),
        j_matrix: if with_j {
            Some(j_matrix_at(target, alpha_bar, x)?)
        } else {
            None
        },
    })
}

/// Central finite-difference Jacobian of `f` at `x` with step `1e-5 (1 + |x|)`.
pub fn finite_difference_jacobian<F>(f: F, x: &[f64]) -> Result<DMatrix<f64>>
where
    F: Fn(&[f64]) -> Result<Vec<f64>>,
{
    let d = x.len();
    let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    let h = 1e-5 * (1.0 + norm);
    let mut jac = DMatrix::zeros(d, d);
    let mut xp = x.to_vec();
    for col in 0..d {
        xp[col] = x[col] + h;
        let fp = f(&xp)?;
        xp[col] = x[col] - h;
        let fm = f(&xp)?;
        xp[col] = x[col];
        for row in 0..fp.len() {
            jac[(row, col)] = (fp[row] - fm[row]) / (2.0 * h);
        }
    }
    Ok(jac)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMcEstimate {
    pub value: Vec<f64>,
    /// Per-coordinate standard-error proxy of the self-normalized estimate.
    pub std_error: Vec<f64>,
    pub effective_sample_size: f64,
    /// Fewer than 10 effective samples, or every kernel underflows.
    pub degenerate: bool,
}

/// Self-normalized importance estimate of `E[-Z / sqrt(1 - ab) | X(ab) = x]`
/// using `n` prior draws of `X0` weighted by `N(x; sqrt(ab) X0, (1 - ab) I)`.
pub fn score_mc_estimate<R: Rng + ?Sized>(
    target: &Target,
    alpha_bar: f64,
    x: &[f64],
    n: usize,
    rng: &mut R,
) -> Result<ScoreMcEstimate> {
    check_alpha_bar(alpha_bar)?;
    // validates x
    target.posterior(alpha_bar, x)?;
    let d = target.dim();
    let n = n.max(1);
    let sab = alpha_bar.sqrt();
    let noise = 1.0 - alpha_bar;
    let sn = noise.sqrt();
    let draws = target.sample_x0(n, rng);

    let mut log_w = Vec::with_capacity(n);
    let mut h = Vec::with_capacity(n * d);
    for x0 in draws.rows() {
        let mut sq = 0.0;
        for j in 0..d {
            let r = x[j] - sab * x0[j];
            sq += r * r;
            // -Z / sqrt(1 - ab) with Z = (x - sqrt(ab) x0) / sqrt(1 - ab)
            h.push(-r / (sn * sn));
        }
        log_w.push(-0.5 * sq / noise);
    }
    let max = log_w.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = log_w.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = w.iter().sum();
    let wn: Vec<f64> = w.iter().map(|v| v / total).collect();
    let ess = 1.0 / wn.iter().map(|v| v * v).sum::<f64>();

    let mut value = vec![0.0; d];
    for (i, &wi) in wn.iter().enumerate() {
        for j in 0..d {
            value[j] += wi * h[i * d + j];
        }
    }
    let mut var = vec![0.0; d];
    for (i, &wi) in wn.iter().enumerate() {
        for j in 0..d {
            let e = h[i * d + j] - value[j];
            var[j] += wi * wi * e * e;
        }
    }
    Ok(ScoreMcEstimate {
        value,
        std_error: var.into_iter().map(f64::sqrt).collect(),
        effective_sample_size: ess,
        degenerate: ess < 10.0 || max < f64::MIN_POSITIVE.ln(),
    })
}
