//! Iterative consistency training.
//!
//! Step `t` fits `f_t` to minimize `E |f(X_t) - f_{t-1}(X_{t-1})|^2` over
//! shared-noise pairs, starting from `f_1 = id`. The population minimizer is
//! `f_t^*(x) = E[f_{t-1}(X_{t-1}) | X_t = x]`. Under the shared-noise
//! coupling `X_{t-1} = r_t X_t + k_t X0` with
//! `r_t = sqrt((1 - ab_{t-1}) / (1 - ab_t))` and
//! `k_t = sqrt(ab_{t-1}) - r_t sqrt(ab_t)`, so `f_t^*` only needs the
//! posterior of `X0` given `X_t`.
//!
//! The exact oracle materializes every `f_t^*` so that evaluating `f_T` costs
//! one model evaluation instead of a tree of `n_components^T` branches:
//! single-component targets stay affine in closed form, and mixtures are
//! tabulated on a grid over the span of the component centers (the posterior
//! only depends on that projection when component variances agree) with the
//! orthogonal complement scaled exactly.

pub mod model;
pub mod quadrature;

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forward::{sample_marginal, sample_shared_noise_pair, CoupledPair};
use crate::rng;
use crate::sample::EmpiricalSample;
use crate::schedule::{Schedule, ScheduleParams};
use crate::targets::{SmoothedPosterior, Target};

pub use model::{AffineMap, KnnRegressor, Model, TabulatedMap};
use quadrature::GaussRule;

/// Gauss-Hermite points per axis for Gaussian-component expectations.
pub const GAUSS_HERMITE_POINTS: usize = 10;

pub const STACK_FORMAT: &str = "ict-consistency-stack";
pub const STACK_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegressorKind {
    KnnKernel,
    LinearFeatures,
    ExactOracle,
}

impl std::fmt::Display for RegressorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            RegressorKind::KnnKernel => "knn_kernel",
            RegressorKind::LinearFeatures => "linear_features",
            RegressorKind::ExactOracle => "exact_oracle",
        })
    }
}

fn default_batch() -> usize {
    10_000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegressorSpec {
    pub kind: RegressorKind,
    /// Neighbour count for `knn_kernel` (default 16).
    #[serde(default)]
    pub k: Option<usize>,
    /// Gaussian kernel width over the neighbours; uniform weights if absent.
    #[serde(default)]
    pub bandwidth: Option<f64>,
    #[serde(default = "default_batch")]
    pub training_batch: usize,
    /// Ridge penalty on the non-intercept coefficients of `linear_features`.
    #[serde(default)]
    pub ridge: f64,
    /// Grid points per axis for tabulated exact-oracle steps.
    #[serde(default)]
    pub grid_points: Option<usize>,
}

impl RegressorSpec {
    pub fn exact_oracle() -> Self {
        Self {
            kind: RegressorKind::ExactOracle,
            k: None,
            bandwidth: None,
            training_batch: 1,
            ridge: 0.0,
            grid_points: None,
        }
    }

    pub fn knn(k: usize, training_batch: usize) -> Self {
        Self {
            kind: RegressorKind::KnnKernel,
            k: Some(k),
            training_batch,
            ..Self::exact_oracle()
        }
    }

    pub fn linear(training_batch: usize, ridge: f64) -> Self {
        Self {
            kind: RegressorKind::LinearFeatures,
            training_batch,
            ridge,
            ..Self::exact_oracle()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.training_batch == 0 {
            return Err(Error::Regressor("training_batch must be >= 1".into()));
        }
        if let Some(h) = self.bandwidth {
            if !(h > 0.0 && h.is_finite()) {
                return Err(Error::Regressor(format!(
                    "bandwidth must be positive, got {h}"
                )));
            }
        }
        if self.k == Some(0) {
            return Err(Error::Regressor("k must be >= 1".into()));
        }
        if !(self.ridge >= 0.0 && self.ridge.is_finite()) {
            return Err(Error::Regressor(format!(
                "ridge must be >= 0, got {}",
                self.ridge
            )));
        }
        if matches!(self.grid_points, Some(n) if n < 3) {
            return Err(Error::Regressor("grid_points must be >= 3".into()));
        }
        Ok(())
    }

    pub fn neighbours(&self) -> usize {
        self.k.unwrap_or(16)
    }

    pub fn describe(&self) -> String {
        match self.kind {
            RegressorKind::KnnKernel => match self.bandwidth {
                Some(h) => format!(
                    "knn_kernel(k={},h={h},batch={})",
                    self.neighbours(),
                    self.training_batch
                ),
                None => format!(
                    "knn_kernel(k={},batch={})",
                    self.neighbours(),
                    self.training_batch
                ),
            },
            RegressorKind::LinearFeatures => format!(
                "linear_features(ridge={},batch={})",
                self.ridge, self.training_batch
            ),
            RegressorKind::ExactOracle => "exact_oracle".to_string(),
        }
    }
}

/// `(r_t, k_t)` of `X_{t-1} = r_t X_t + k_t X0`.
pub fn step_coefficients(schedule: &Schedule, t: usize) -> Result<(f64, f64)> {
    schedule.check_index(t, 2)?;
    let (ab, ab_prev) = (schedule.alpha_bar(t), schedule.alpha_bar(t - 1));
    let r = ((1.0 - ab_prev) / (1.0 - ab)).sqrt();
    Ok((r, ab_prev.sqrt() - r * ab.sqrt()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct FStar {
    pub value: Vec<f64>,
    /// Every component kernel underflowed; the weights come from log space.
    pub degenerate: bool,
}

/// `E[f_prev(r x + k X0) | X_t = x]`, integrating within-component Gaussian
/// noise along the columns of `basis` (column-major, `rule.dim` columns).
fn conditional_expectation<F>(
    post: &SmoothedPosterior,
    r: f64,
    k: f64,
    f_prev: &F,
    rule: Option<&GaussRule>,
    basis: &[f64],
) -> Vec<f64>
where
    F: Fn(&[f64]) -> Vec<f64> + ?Sized,
{
    let d = post.dim();
    let mut out = vec![0.0; d];
    let mut point = vec![0.0; d];
    for i in 0..post.len() {
        let w = post.weights[i];
        if w == 0.0 {
            continue;
        }
        let mean: Vec<f64> = post
            .x
            .iter()
            .zip(post.x0_mean(i))
            .map(|(x, m)| r * x + k * m)
            .collect();
        let sd = k * post.x0_variances[i].sqrt();
        match rule {
            Some(rule) if sd > 0.0 => {
                for q in 0..rule.len() {
                    point.copy_from_slice(&mean);
                    for (a, z) in rule.node(q).iter().enumerate() {
                        for (p, b) in point.iter_mut().zip(&basis[a * d..(a + 1) * d]) {
                            *p += sd * z * b;
                        }
                    }
                    let v = f_prev(&point);
                    let c = w * rule.weights[q];
                    out.iter_mut().zip(&v).for_each(|(o, v)| *o += c * v);
                }
            }
            _ => {
                let v = f_prev(&mean);
                out.iter_mut().zip(&v).for_each(|(o, v)| *o += w * v);
            }
        }
    }
    out
}

fn identity_basis(d: usize) -> Vec<f64> {
    let mut b = vec![0.0; d * d];
    (0..d).for_each(|i| b[i * d + i] = 1.0);
    b
}

fn has_noise(target: &Target) -> bool {
    (0..target.n_components()).any(|i| target.component_variance(i) > 0.0)
}

/// Reusable evaluator of `f_t^*` for one target.
struct StarEvaluator {
    rule: Option<GaussRule>,
    basis: Vec<f64>,
}

impl StarEvaluator {
    fn new(target: &Target) -> Self {
        let d = target.dim();
        Self {
            rule: has_noise(target).then(|| GaussRule::standard_normal(d, GAUSS_HERMITE_POINTS)),
            basis: identity_basis(d),
        }
    }

    fn eval<F>(
        &self,
        target: &Target,
        schedule: &Schedule,
        t: usize,
        f_prev: &F,
        x: &[f64],
    ) -> Result<FStar>
    where
        F: Fn(&[f64]) -> Vec<f64> + ?Sized,
    {
        let (r, k) = step_coefficients(schedule, t)?;
        let post = target.posterior(schedule.alpha_bar(t), x)?;
        Ok(FStar {
            value: conditional_expectation(&post, r, k, f_prev, self.rule.as_ref(), &self.basis),
            degenerate: post.is_degenerate(),
        })
    }
}

/// The regression target `f_t^*(x) = E[f_prev(X_{t-1}) | X_t = x]`.
///
/// Exact for atomic targets; Gaussian components are integrated with a
/// tensor Gauss-Hermite rule (`d <= 3`) or a `2d`-point cubature rule.
pub fn f_star<F>(
    target: &Target,
    schedule: &Schedule,
    t: usize,
    f_prev: F,
    x: &[f64],
) -> Result<FStar>
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    StarEvaluator::new(target).eval(target, schedule, t, &f_prev, x)
}

/// How the exact oracle stores `f_t^*` for a given target.
#[derive(Debug, Clone, PartialEq)]
enum ExactPlan {
    /// Posterior weights do not depend on `x`; every step is affine.
    Affine,
    /// Weights depend on `x` only through `Q^T x` for the `d x m` basis.
    Subspace {
        basis: Vec<f64>,
        sub_dim: usize,
        /// Common component variance, when the complement evolves linearly.
        shared_variance: Option<f64>,
        half_width: f64,
    },
}

fn exact_plan(target: &Target) -> Result<ExactPlan> {
    let d = target.dim();
    let n = target.n_components();
    let var0 = target.component_variance(0);
    let equal_var = (0..n).all(|i| target.component_variance(i) == var0);
    let centers = DMatrix::from_column_slice(d, n, target.centers());
    let max_var = (0..n)
        .map(|i| target.component_variance(i))
        .fold(0.0, f64::max);
    let half_width = target.radius() + 8.0 * max_var.sqrt().max(1.0);
    if n == 1 || (equal_var && centers.iter().all(|c| *c == 0.0)) {
        return Ok(ExactPlan::Affine);
    }
    if !equal_var {
        if d > quadrature::TENSOR_MAX_DIM {
            return Err(Error::Unsupported(format!(
                "exact_oracle tabulation of a mixture with unequal variances needs d <= {}, got {d}",
                quadrature::TENSOR_MAX_DIM
            )));
        }
        return Ok(ExactPlan::Subspace {
            basis: identity_basis(d),
            sub_dim: d,
            shared_variance: None,
            half_width,
        });
    }
    let svd = centers.svd(true, false);
    let u = svd.u.expect("left singular vectors requested");
    let smax = svd.singular_values.max();
    let mut cols: Vec<usize> = (0..svd.singular_values.len())
        .filter(|&j| svd.singular_values[j] > 1e-10 * smax)
        .collect();
    cols.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let m = cols.len();
    if m > quadrature::TENSOR_MAX_DIM {
        return Err(Error::Unsupported(format!(
            "exact_oracle tabulation needs the component centers to span at most {} dimensions, got {m}",
            quadrature::TENSOR_MAX_DIM
        )));
    }
    let mut basis = Vec::with_capacity(d * m);
    for &j in &cols {
        basis.extend(u.column(j).iter());
    }
    Ok(ExactPlan::Subspace {
        basis,
        sub_dim: m,
        shared_variance: Some(var0),
        half_width,
    })
}

fn default_grid_points(sub_dim: usize) -> usize {
    match sub_dim {
        1 => 8193,
        2 => 513,
        _ => 49,
    }
}

/// `gamma` of the linear part `gamma x` of `E[X0 | x, i]` for variance `var`.
fn posterior_gain(var: f64, ab: f64) -> f64 {
    var * ab.sqrt() / (ab * var + 1.0 - ab)
}

fn exact_affine_step(
    target: &Target,
    schedule: &Schedule,
    t: usize,
    prev: &Model,
) -> Result<Model> {
    let d = target.dim();
    let (r, k) = step_coefficients(schedule, t)?;
    let ab = schedule.alpha_bar(t);
    let prev = match prev {
        Model::Identity => AffineMap::identity(d),
        Model::Affine(a) => a.clone(),
        other => {
            return Err(Error::Regressor(format!(
                "affine exact step needs an affine predecessor, got {}",
                other.kind_name()
            )))
        }
    };
    let var = target.component_variance(0);
    let gamma = posterior_gain(var, ab);
    // E[X0 | x] = gamma x + sum_i w_i c_i (1 - var ab / v)
    let shrink = 1.0 - var * ab / (ab * var + 1.0 - ab);
    let mut shift = vec![0.0; d];
    for (i, w) in target.weights().iter().enumerate() {
        for (s, c) in shift.iter_mut().zip(target.center(i)) {
            *s += k * w * c * shrink;
        }
    }
    Ok(Model::Affine(prev.compose_scaled(r + k * gamma, &shift)))
}

fn exact_tabulated_step(
    target: &Target,
    schedule: &Schedule,
    t: usize,
    prev: &Model,
    plan: &ExactPlan,
    grid_points: Option<usize>,
) -> Result<Model> {
    let ExactPlan::Subspace {
        basis,
        sub_dim,
        shared_variance,
        half_width,
    } = plan
    else {
        unreachable!("tabulated step requires a subspace plan")
    };
    let d = target.dim();
    let m = *sub_dim;
    let (r, k) = step_coefficients(schedule, t)?;
    let ab = schedule.alpha_bar(t);
    let prev_perp = match prev {
        Model::Identity => 1.0,
        Model::Tabulated(p) => p.perp_scale,
        other => {
            return Err(Error::Regressor(format!(
                "tabulated exact step needs a tabulated predecessor, got {}",
                other.kind_name()
            )))
        }
    };
    let perp_scale = match shared_variance {
        Some(v) if m < d => prev_perp * (r + k * posterior_gain(*v, ab)),
        _ => 0.0,
    };
    let mut table = TabulatedMap {
        dim: d,
        sub_dim: m,
        basis: basis.clone(),
        lo: -half_width,
        hi: *half_width,
        nodes: grid_points.unwrap_or_else(|| default_grid_points(m)),
        values: Vec::new(),
        perp_scale,
    };
    let rule = has_noise(target).then(|| GaussRule::standard_normal(m, GAUSS_HERMITE_POINTS));
    let f_prev = |y: &[f64]| prev.evaluate(y);
    let values: Vec<Vec<f64>> = (0..table.node_count())
        .into_par_iter()
        .map(|i| {
            let x = table.lift(&table.node_coords(i));
            let post = target.posterior(ab, &x)?;
            let v = conditional_expectation(&post, r, k, &f_prev, rule.as_ref(), basis);
            Ok(table.project(&v))
        })
        .collect::<Result<_>>()?;
    table.values = values.concat();
    Ok(Model::Tabulated(table))
}

/// Ordinary (ridge) least squares on features `(1, x)`; returns the affine fit.
pub fn fit_linear(
    inputs: &EmpiricalSample,
    outputs: &EmpiricalSample,
    ridge: f64,
) -> Result<AffineMap> {
    let d = inputs.dim();
    let n = inputs.len();
    if outputs.len() != n {
        return Err(Error::SizeMismatch(n, outputs.len()));
    }
    let p = d + 1;
    let mut phi = DMatrix::<f64>::zeros(n, p);
    for (i, x) in inputs.rows().enumerate() {
        phi[(i, 0)] = 1.0;
        for j in 0..d {
            phi[(i, j + 1)] = x[j];
        }
    }
    let y = DMatrix::from_row_slice(n, outputs.dim(), outputs.as_slice());
    let mut gram = phi.transpose() * &phi;
    for j in 1..p {
        gram[(j, j)] += ridge;
    }
    let rhs = phi.transpose() * y;
    let coef = match gram.clone().cholesky() {
        Some(c) => c.solve(&rhs),
        None => {
            let scale = (gram.trace() / p as f64).max(1.0);
            let extra = 1e-8 * scale;
            log::warn!("singular normal equations; adding ridge {extra:e}");
            for j in 0..p {
                gram[(j, j)] += extra;
            }
            gram.cholesky()
                .ok_or_else(|| Error::Regressor("normal equations not positive definite".into()))?
                .solve(&rhs)
        }
    };
    let mut matrix = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..d {
            matrix[i * d + j] = coef[(j + 1, i)];
        }
    }
    let offset = (0..d).map(|i| coef[(0, i)]).collect();
    AffineMap::new(d, matrix, offset)
}

/// Fit one step from already drawn pairs.
pub fn fit_on_pairs(
    dim: usize,
    f_prev: &Model,
    pairs: &[CoupledPair],
    spec: &RegressorSpec,
) -> Result<Model> {
    spec.validate()?;
    if pairs.is_empty() {
        return Err(Error::Regressor("no training pairs".into()));
    }
    let inputs: Vec<f64> = pairs.iter().flat_map(|p| p.x_t.iter().copied()).collect();
    let targets: Vec<f64> = pairs
        .par_iter()
        .flat_map_iter(|p| f_prev.evaluate(&p.x_tm1))
        .collect();
    match spec.kind {
        RegressorKind::KnnKernel => Ok(Model::Knn(KnnRegressor::new(
            dim,
            spec.neighbours(),
            spec.bandwidth,
            inputs,
            targets,
        )?)),
        RegressorKind::LinearFeatures => Ok(Model::Affine(fit_linear(
            &EmpiricalSample::new(dim, inputs)?,
            &EmpiricalSample::new(dim, targets)?,
            spec.ridge,
        )?)),
        RegressorKind::ExactOracle => Err(Error::Regressor(
            "exact_oracle is not fitted from pairs".into(),
        )),
    }
}

/// One step of the recursion: fit `f_t` against `f_prev = f_{t-1}`.
pub fn fit_step<R: Rng + ?Sized>(
    target: &Target,
    schedule: &Schedule,
    t: usize,
    f_prev: &Model,
    spec: &RegressorSpec,
    rng: &mut R,
) -> Result<Model> {
    spec.validate()?;
    schedule.check_index(t, 2)?;
    match spec.kind {
        RegressorKind::ExactOracle => {
            let plan = exact_plan(target)?;
            exact_step(target, schedule, t, f_prev, &plan, spec.grid_points)
        }
        _ => {
            let pairs = sample_shared_noise_pair(target, schedule, t, spec.training_batch, rng)?;
            fit_on_pairs(target.dim(), f_prev, &pairs, spec)
        }
    }
}

fn exact_step(
    target: &Target,
    schedule: &Schedule,
    t: usize,
    f_prev: &Model,
    plan: &ExactPlan,
    grid_points: Option<usize>,
) -> Result<Model> {
    match plan {
        ExactPlan::Affine => exact_affine_step(target, schedule, t, f_prev),
        ExactPlan::Subspace { .. } => {
            exact_tabulated_step(target, schedule, t, f_prev, plan, grid_points)
        }
    }
}

/// Fitted maps `f_1 = id, f_2, ..., f_T`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConsistencyStack {
    schedule: Schedule,
    spec: RegressorSpec,
    dim: usize,
    models: Vec<Model>,
}

#[derive(Serialize, Deserialize)]
struct StackHeader {
    format: String,
    version: u32,
}

#[derive(Serialize, Deserialize)]
struct StackFile {
    format: String,
    version: u32,
    schedule: ScheduleParams,
    spec: RegressorSpec,
    dim: usize,
    models: Vec<Model>,
}

impl ConsistencyStack {
    pub fn schedule(&self) -> &Schedule {
        &self.schedule
    }

    pub fn spec(&self) -> &RegressorSpec {
        &self.spec
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn steps(&self) -> usize {
        self.schedule.steps()
    }

    /// `f_t` for `1 <= t <= T`.
    pub fn model(&self, t: usize) -> &Model {
        &self.models[t - 1]
    }

    pub fn evaluate_at(&self, t: usize, x: &[f64]) -> Result<Vec<f64>> {
        self.schedule.check_index(t, 1)?;
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: x.len(),
            });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinitePoint);
        }
        Ok(self.model(t).evaluate(x))
    }

    /// `f_T(x)`.
    pub fn evaluate(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.evaluate_at(self.steps(), x)
    }

    pub fn write<W: Write>(&self, out: W) -> Result<()> {
        let file = StackFile {
            format: STACK_FORMAT.into(),
            version: STACK_VERSION,
            schedule: self.schedule.params(),
            spec: self.spec.clone(),
            dim: self.dim,
            models: self.models.clone(),
        };
        serde_json::to_writer(out, &file)?;
        Ok(())
    }

    pub fn read<R: Read>(mut input: R) -> Result<Self> {
        let mut text = String::new();
        input.read_to_string(&mut text)?;
        let header: StackHeader = serde_json::from_str(&text)
            .map_err(|e| Error::StackFormat(format!("missing header: {e}")))?;
        if header.format != STACK_FORMAT {
            return Err(Error::StackFormat(format!(
                "unknown format {:?}",
                header.format
            )));
        }
        if header.version != STACK_VERSION {
            return Err(Error::StackFormat(format!(
                "version {} is not supported (expected {STACK_VERSION})",
                header.version
            )));
        }
        let file: StackFile = serde_json::from_str(&text)?;
        let schedule = Schedule::from_params(file.schedule)?;
        if file.models.len() != schedule.steps() || file.models.first() != Some(&Model::Identity) {
            return Err(Error::StackFormat(format!(
                "expected {} models starting with the identity, found {}",
                schedule.steps(),
                file.models.len()
            )));
        }
        Ok(Self {
            schedule,
            spec: file.spec,
            dim: file.dim,
            models: file.models,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(f);
        self.write(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read(std::io::BufReader::new(std::fs::File::open(path)?))
    }
}

/// Run the recursion for `t = 2, ..., T`.
pub fn train_stack<R: Rng + ?Sized>(
    target: &Target,
    schedule: &Schedule,
    spec: &RegressorSpec,
    rng: &mut R,
) -> Result<ConsistencyStack> {
    spec.validate()?;
    let plan = match spec.kind {
        RegressorKind::ExactOracle => Some(exact_plan(target)?),
        _ => None,
    };
    let mut models = vec![Model::Identity];
    for t in 2..=schedule.steps() {
        let prev = models.last().expect("f_1 is present");
        let next = match &plan {
            Some(plan) => exact_step(target, schedule, t, prev, plan, spec.grid_points),
            None => fit_step(target, schedule, t, prev, spec, rng),
        }
        .map_err(|e| Error::Training {
            t,
            source: Box::new(e),
        })?;
        log::debug!("trained f_{t} ({})", next.kind_name());
        models.push(next);
    }
    Ok(ConsistencyStack {
        schedule: schedule.clone(),
        spec: spec.clone(),
        dim: target.dim(),
        models,
    })
}

/// `f_T(X_T)` for `n` draws `X_T ~ N(0, I)`.
pub fn one_shot_sample<R: Rng + ?Sized>(
    stack: &ConsistencyStack,
    n: usize,
    rng: &mut R,
) -> EmpiricalSample {
    let d = stack.dim();
    let mut z = vec![0.0; n * d];
    rng::fill_normal(rng, &mut z);
    stack
        .model(stack.steps())
        .evaluate_batch(&EmpiricalSample::from_raw(d, z))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepError {
    pub t: usize,
    pub mean_distance: f64,
    pub degenerate_points: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ErrorReport {
    pub per_step: Vec<StepError>,
    /// Sum over `t` of the per-step mean distances.
    pub aggregate: f64,
}

/// Mean distance from each `f_t` to `f_t^*` built on the fitted `f_{t-1}`.
pub fn estimation_error<R: Rng + ?Sized>(
    stack: &ConsistencyStack,
    target: &Target,
    n_eval: usize,
    rng: &mut R,
) -> Result<ErrorReport> {
    if target.dim() != stack.dim() {
        return Err(Error::DimensionMismatch {
            expected: stack.dim(),
            got: target.dim(),
        });
    }
    let schedule = stack.schedule();
    let eval = StarEvaluator::new(target);
    let mut per_step = Vec::with_capacity(schedule.steps().saturating_sub(1));
    for t in 2..=schedule.steps() {
        let xs = sample_marginal(target, schedule, t, n_eval, rng)?;
        let prev = stack.model(t - 1);
        let f_prev = |y: &[f64]| prev.evaluate(y);
        let model = stack.model(t);
        let rows: Vec<&[f64]> = xs.rows().collect();
        let parts: Vec<(f64, bool)> = rows
            .par_iter()
            .map(|x| {
                let star = eval.eval(target, schedule, t, &f_prev, x)?;
                let fx = model.evaluate(x);
                let dist = fx
                    .iter()
                    .zip(&star.value)
                    .map(|(a, b)| (a - b).powi(2))
                    .sum::<f64>()
                    .sqrt();
                Ok((dist, star.degenerate))
            })
            .collect::<Result<_>>()?;
        let mean = if parts.is_empty() {
            0.0
        } else {
            parts.iter().map(|p| p.0).sum::<f64>() / parts.len() as f64
        };
        per_step.push(StepError {
            t,
            mean_distance: mean,
            degenerate_points: parts.iter().filter(|p| p.1).count(),
        });
    }
    let aggregate = per_step.iter().map(|s| s.mean_distance).sum();
    Ok(ErrorReport {
        per_step,
        aggregate,
    })
}
