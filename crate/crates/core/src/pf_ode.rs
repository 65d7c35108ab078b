//! Probability-flow ODE parametrized by `ab`.
//!
//! `g_t(x, ab)` solves `dg/dab = (g + s_ab(g)) / (2 ab)` from `g(ab_t) = x`.
//! We integrate the equivalent form `du/dab = s_ab(sqrt(ab) u) / (2 ab^{3/2})`
//! in `u = g / sqrt(ab)`, which drops the linear term, on a uniform `ab` grid.
//! Multi-index maps are compositions of one-interval steps so that every
//! intermediate state lands on a schedule node.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sample::EmpiricalSample;
use crate::schedule::Schedule;
use crate::score::{finite_difference_jacobian, score_into};
use crate::targets::Target;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Integrator {
    Rk4,
    Heun,
    Euler,
}

impl std::fmt::Display for Integrator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Integrator::Rk4 => "rk4",
            Integrator::Heun => "heun",
            Integrator::Euler => "euler",
        })
    }
}

impl std::str::FromStr for Integrator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rk4" => Ok(Integrator::Rk4),
            "heun" => Ok(Integrator::Heun),
            "euler" => Ok(Integrator::Euler),
            other => Err(Error::Config(format!("unknown integrator {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlowConfig {
    pub substeps_per_interval: usize,
    pub integrator: Integrator,
}

impl Default for FlowConfig {
    fn default() -> Self {
        Self {
            substeps_per_interval: 8,
            integrator: Integrator::Rk4,
        }
    }
}

impl FlowConfig {
    pub fn new(substeps_per_interval: usize, integrator: Integrator) -> Result<Self> {
        if substeps_per_interval == 0 {
            return Err(Error::Config("substeps_per_interval must be >= 1".into()));
        }
        Ok(Self {
            substeps_per_interval,
            integrator,
        })
    }

    pub fn rk4(substeps: usize) -> Self {
        Self {
            substeps_per_interval: substeps.max(1),
            integrator: Integrator::Rk4,
        }
    }

    pub fn describe(&self) -> String {
        format!("{}x{}", self.integrator, self.substeps_per_interval)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowSolution {
    pub start: usize,
    pub end: usize,
    pub end_alpha_bar: f64,
    pub input: Vec<f64>,
    pub output: Vec<f64>,
    pub jacobian: Option<DMatrix<f64>>,
}

/// Drift evaluation with reusable buffers.
struct Drift<'a> {
    target: &'a Target,
    g: Vec<f64>,
    scratch: Vec<f64>,
}

impl<'a> Drift<'a> {
    fn new(target: &'a Target) -> Self {
        Self {
            target,
            g: vec![0.0; target.dim()],
            scratch: Vec::with_capacity(target.n_components()),
        }
    }

    fn eval(&mut self, ab: f64, u: &[f64], out: &mut [f64]) {
        let sab = ab.sqrt();
        self.g.iter_mut().zip(u).for_each(|(g, u)| *g = sab * u);
        score_into(self.target, ab, &self.g, out, &mut self.scratch);
        let c = 1.0 / (2.0 * ab * sab);
        out.iter_mut().for_each(|v| *v *= c);
    }
}

/// Integrate from `(ab_start, x)` to `ab_end` with `substeps` uniform steps.
pub fn integrate_between(
    target: &Target,
    ab_start: f64,
    x: &[f64],
    ab_end: f64,
    substeps: usize,
    integrator: Integrator,
    t_label: usize,
) -> Result<Vec<f64>> {
    if !(ab_start > 0.0 && ab_start <= ab_end && ab_end < 1.0) {
        return Err(Error::AlphaBarOutOfRange(ab_end));
    }
    if ab_end == ab_start {
        return Ok(x.to_vec());
    }
    if x.len() != target.dim() {
        return Err(Error::DimensionMismatch {
            expected: target.dim(),
            got: x.len(),
        });
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinitePoint);
    }
    let d = x.len();
    let substeps = substeps.max(1);
    let h = (ab_end - ab_start) / substeps as f64;
    let mut drift = Drift::new(target);
    let mut u: Vec<f64> = x.iter().map(|v| v / ab_start.sqrt()).collect();
    let (mut k1, mut k2, mut k3, mut k4, mut tmp) = (
        vec![0.0; d],
        vec![0.0; d],
        vec![0.0; d],
        vec![0.0; d],
        vec![0.0; d],
    );
    for i in 0..substeps {
        let a = ab_start + i as f64 * h;
        let a_next = if i + 1 == substeps {
            ab_end
        } else {
            ab_start + (i + 1) as f64 * h
        };
        let step = a_next - a;
        match integrator {
            Integrator::Euler => {
                drift.eval(a, &u, &mut k1);
                (0..d).for_each(|j| u[j] += step * k1[j]);
            }
            Integrator::Heun => {
                drift.eval(a, &u, &mut k1);
                (0..d).for_each(|j| tmp[j] = u[j] + step * k1[j]);
                drift.eval(a_next, &tmp, &mut k2);
                (0..d).for_each(|j| u[j] += 0.5 * step * (k1[j] + k2[j]));
            }
            Integrator::Rk4 => {
                let mid = a + 0.5 * step;
                drift.eval(a, &u, &mut k1);
                (0..d).for_each(|j| tmp[j] = u[j] + 0.5 * step * k1[j]);
                drift.eval(mid, &tmp, &mut k2);
                (0..d).for_each(|j| tmp[j] = u[j] + 0.5 * step * k2[j]);
                drift.eval(mid, &tmp, &mut k3);
                (0..d).for_each(|j| tmp[j] = u[j] + step * k3[j]);
                drift.eval(a_next, &tmp, &mut k4);
                (0..d)
                    .for_each(|j| u[j] += step / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]));
            }
        }
        if u.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteFlow {
                t: t_label,
                alpha_bar: a_next,
            });
        }
    }
    let s = ab_end.sqrt();
    Ok(u.into_iter().map(|v| s * v).collect())
}

/// `g_t(x, ab_end)` for `ab_t <= ab_end < 1`.
pub fn integrate_g(
    target: &Target,
    schedule: &Schedule,
    t: usize,
    x: &[f64],
    ab_end: f64,
    cfg: &FlowConfig,
) -> Result<Vec<f64>> {
    schedule.check_index(t, 1)?;
    let ab_t = schedule.alpha_bar(t);
    if !(ab_end >= ab_t && ab_end < 1.0) {
        return Err(Error::AlphaBarOutOfRange(ab_end));
    }
    integrate_between(
        target,
        ab_t,
        x,
        ab_end,
        cfg.substeps_per_interval,
        cfg.integrator,
        t,
    )
}

/// `phi_t = Phi_{t -> t-1}`.
pub fn phi_step(
    target: &Target,
    schedule: &Schedule,
    t: usize,
    x: &[f64],
    cfg: &FlowConfig,
) -> Result<Vec<f64>> {
    schedule.check_index(t, 2)?;
    integrate_g(target, schedule, t, x, schedule.alpha_bar(t - 1), cfg)
}

/// `Phi_{t -> k} = phi_{k+1} o ... o phi_t`.
pub fn flow(
    target: &Target,
    schedule: &Schedule,
    t: usize,
    k: usize,
    x: &[f64],
    cfg: &FlowConfig,
) -> Result<Vec<f64>> {
    schedule.check_index(t, 1)?;
    schedule.check_index(k, 1)?;
    if k > t {
        return Err(Error::IndexOutOfRange {
            index: k,
            lo: 1,
            hi: t,
        });
    }
    let mut y = x.to_vec();
    for s in (k + 1..=t).rev() {
        y = phi_step(target, schedule, s, &y, cfg)?;
    }
    Ok(y)
}

/// Central finite-difference Jacobian of `Phi_{t -> k}` at `x`.
pub fn flow_jacobian_fd(
    target: &Target,
    schedule: &Schedule,
    t: usize,
    k: usize,
    x: &[f64],
    cfg: &FlowConfig,
) -> Result<DMatrix<f64>> {
    finite_difference_jacobian(|y| flow(target, schedule, t, k, y, cfg), x)
}

pub fn solve(
    target: &Target,
    schedule: &Schedule,
    t: usize,
    k: usize,
    x: &[f64],
    cfg: &FlowConfig,
    with_jacobian: bool,
) -> Result<FlowSolution> {
    let output = flow(target, schedule, t, k, x, cfg)?;
    let jacobian = if with_jacobian {
        Some(flow_jacobian_fd(target, schedule, t, k, x, cfg)?)
    } else {
        None
    };
    Ok(FlowSolution {
        start: t,
        end: k,
        end_alpha_bar: schedule.alpha_bar(k),
        input: x.to_vec(),
        output,
        jacobian,
    })
}

/// Push every row of `points` through `Phi_{t -> k}` in parallel.
pub fn flow_batch(
    target: &Target,
    schedule: &Schedule,
    t: usize,
    k: usize,
    points: &EmpiricalSample,
    cfg: &FlowConfig,
) -> Result<EmpiricalSample> {
    let rows: Vec<Vec<f64>> = points
        .rows()
        .collect::<Vec<_>>()
        .par_iter()
        .map(|x| flow(target, schedule, t, k, x, cfg))
        .collect::<Result<_>>()?;
    EmpiricalSample::from_rows(points.dim(), &rows)
}

/// Spectral norm of a square matrix.
pub fn operator_norm(m: &DMatrix<f64>) -> f64 {
    m.clone().singular_values().max()
}
