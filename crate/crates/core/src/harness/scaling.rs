//! The `scaling` sweep: train one stack per `T`, compare one-shot samples
//! against fresh `X_1` draws, and fit the log-log slope of `W1` against `T`.

use std::fmt;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;
use statrs::distribution::{ContinuousCDF, StudentsT};

use super::config::ExperimentConfig;
use super::write_atomic;
use crate::consistency::{estimation_error, one_shot_sample, train_stack};
use crate::error::{Error, Result};
use crate::forward::sample_marginal;
use crate::rng::{self, child_stream};
use crate::sample::EmpiricalSample;
use crate::schedule::Schedule;
use crate::targets::Target;
use crate::theory_check::{estimate_lipschitz, max_lhs};
use crate::transport::{sliced_w1, w1_assignment};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Estimator {
    /// Sliced `W1` on the full samples.
    #[serde(rename = "sliced_w1")]
    Sliced,
    /// Exact `W1` by optimal assignment, averaged over disjoint subsamples.
    #[serde(rename = "assignment_w1")]
    Assignment,
}

impl fmt::Display for Estimator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Estimator::Sliced => "sliced_w1",
            Estimator::Assignment => "assignment_w1",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub steps: usize,
    pub dim: usize,
    pub estimator: Estimator,
    /// Points per sample entering the estimator.
    pub n: usize,
    pub seed: u64,
    pub regressor: String,
    pub integrator: String,
    pub lipschitz: f64,
    pub epsilon_hat: f64,
    pub w1: f64,
    pub w1_se: f64,
    /// Same estimator between two independent `X_1` samples.
    pub floor: f64,
    pub floor_se: f64,
    pub wall_time_s: f64,
}

const COLUMNS: [&str; 13] = [
    "steps",
    "dim",
    "estimator",
    "n",
    "seed",
    "regressor",
    "integrator",
    "lipschitz",
    "epsilon_hat",
    "w1",
    "w1_se",
    "floor",
    "floor_se",
];

pub fn write_rows<W: std::io::Write>(rows: &[SweepRow], wall_time: bool, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<&str> = COLUMNS.to_vec();
    if wall_time {
        header.push("wall_time_s");
    }
    w.write_record(&header)?;
    for r in rows {
        let mut rec = vec![
            r.steps.to_string(),
            r.dim.to_string(),
            r.estimator.to_string(),
            r.n.to_string(),
            r.seed.to_string(),
            r.regressor.clone(),
            r.integrator.clone(),
            r.lipschitz.to_string(),
            r.epsilon_hat.to_string(),
            r.w1.to_string(),
            r.w1_se.to_string(),
            r.floor.to_string(),
            r.floor_se.to_string(),
        ];
        if wall_time {
            rec.push(format!("{:.3}", r.wall_time_s));
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

fn block(s: &EmpiricalSample, i: usize, m: usize) -> EmpiricalSample {
    let d = s.dim();
    EmpiricalSample::new(d, s.as_slice()[i * m * d..(i + 1) * m * d].to_vec())
        .expect("block of a valid sample")
}

fn mean_se(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Mean and standard error of exact `W1` over disjoint subsample blocks.
fn assignment_estimate(
    a: &EmpiricalSample,
    b: &EmpiricalSample,
    m: usize,
    repeats: usize,
) -> Result<(f64, f64)> {
    let vals = (0..repeats)
        .map(|i| w1_assignment(&block(a, i, m), &block(b, i, m)))
        .collect::<Result<Vec<_>>>()?;
    Ok(mean_se(&vals))
}

/// One sweep cell. All randomness comes from streams derived from
/// `(seed, steps)`, so cells are independent of each other and of run order.
pub fn run_cell(cfg: &ExperimentConfig, target: &Target, steps: usize) -> Result<Vec<SweepRow>> {
    let start = Instant::now();
    let schedule = Schedule::new(steps, cfg.c0, cfg.c1)?;
    let spec = cfg.regressor_spec()?;
    let s = |label: u64| rng::stream(cfg.seed, child_stream(steps as u64, label));

    let stack = train_stack(target, &schedule, &spec, &mut s(0))?;
    let n = cfg.n_samples;
    let generated = one_shot_sample(&stack, n, &mut s(1));
    let fresh = sample_marginal(target, &schedule, 1, n, &mut s(2))?;
    let other = sample_marginal(target, &schedule, 1, n, &mut s(3))?;

    let epsilon_hat = estimation_error(&stack, target, cfg.n_eval, &mut s(4))?.aggregate;
    let lipschitz = max_lhs(&estimate_lipschitz(
        target,
        &schedule,
        &[(steps, 1)],
        cfg.lipschitz_points,
        &cfg.flow(),
        &mut s(5),
    )?);

    let sliced = sliced_w1(&generated, &fresh, cfg.n_projections, &mut s(6))?;
    let sliced_floor = sliced_w1(&other, &fresh, cfg.n_projections, &mut s(6))?;

    let m = cfg.assignment_subsample.min(n);
    let repeats = n
        .checked_div(m)
        .map_or(0, |b| cfg.assignment_repeats.min(b));
    let (exact, exact_se, exact_floor, exact_floor_se) = if repeats == 0 {
        (f64::NAN, f64::NAN, f64::NAN, f64::NAN)
    } else {
        let (w, se) = assignment_estimate(&generated, &fresh, m, repeats)?;
        let (f, fse) = assignment_estimate(&other, &fresh, m, repeats)?;
        (w, se, f, fse)
    };

    let wall = start.elapsed().as_secs_f64();
    log::info!(
        "T = {steps}: sliced {:.5} (floor {:.5}), assignment {exact:.5}, {wall:.1} s",
        sliced.mean,
        sliced_floor.mean
    );
    let row = |estimator, n, w1, w1_se, floor, floor_se| SweepRow {
        steps,
        dim: target.dim(),
        estimator,
        n,
        seed: cfg.seed,
        regressor: spec.describe(),
        integrator: cfg.flow().describe(),
        lipschitz,
        epsilon_hat,
        w1,
        w1_se,
        floor,
        floor_se,
        wall_time_s: wall,
    };
    Ok(vec![
        row(
            Estimator::Sliced,
            n,
            sliced.mean,
            sliced.std_error,
            sliced_floor.mean,
            sliced_floor.std_error,
        ),
        row(
            Estimator::Assignment,
            m,
            exact,
            exact_se,
            exact_floor,
            exact_floor_se,
        ),
    ])
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SlopeFit {
    pub estimator: Estimator,
    pub slope: f64,
    pub std_error: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub rows_used: usize,
    pub rows_excluded: usize,
    /// `W1` strictly decreasing in `T` over all rows of the estimator.
    pub decreasing: bool,
    /// The 95% interval of the slope contains zero.
    pub masked_by_floor: bool,
}

/// Least-squares slope of `ln W1` on `ln T` with a 95% Student-t interval.
/// Rows whose `epsilon_hat` exceeds `dominance * w1` are excluded.
pub fn fit_slope(rows: &[SweepRow], estimator: Estimator, dominance: f64) -> Option<SlopeFit> {
    let all: Vec<&SweepRow> = rows.iter().filter(|r| r.estimator == estimator).collect();
    let used: Vec<&SweepRow> = all
        .iter()
        .copied()
        .filter(|r| r.w1 > 0.0 && r.w1.is_finite() && r.epsilon_hat <= dominance * r.w1)
        .collect();
    if used.len() < 2 {
        return None;
    }
    let xs: Vec<f64> = used.iter().map(|r| (r.steps as f64).ln()).collect();
    let ys: Vec<f64> = used.iter().map(|r| r.w1.ln()).collect();
    let n = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let (std_error, half) = if used.len() > 2 {
        let ssr: f64 = xs
            .iter()
            .zip(&ys)
            .map(|(x, y)| (y - my - slope * (x - mx)).powi(2))
            .sum();
        let se = (ssr / (n - 2.0) / sxx).sqrt();
        let q = StudentsT::new(0.0, 1.0, n - 2.0)
            .expect("positive degrees of freedom")
            .inverse_cdf(0.975);
        (se, q * se)
    } else {
        (f64::NAN, f64::INFINITY)
    };
    let (ci_low, ci_high) = (slope - half, slope + half);
    Some(SlopeFit {
        estimator,
        slope,
        std_error,
        ci_low,
        ci_high,
        rows_used: used.len(),
        rows_excluded: all.len() - used.len(),
        decreasing: all.windows(2).all(|w| w[1].w1 < w[0].w1),
        masked_by_floor: !(ci_high < 0.0 || ci_low > 0.0),
    })
}

#[derive(Debug, Clone)]
pub struct ScalingOutcome {
    pub rows: Vec<SweepRow>,
    pub fits: Vec<SlopeFit>,
}

impl ScalingOutcome {
    pub fn fit(&self, estimator: Estimator) -> Option<&SlopeFit> {
        self.fits.iter().find(|f| f.estimator == estimator)
    }

    pub fn summary(&self) -> String {
        let mut s = Vec::new();
        for r in &self.rows {
            s.push(format!(
                "T = {:>5} {:>13} n = {:>6}: W1 = {:.5} +- {:.1e} (floor {:.5}), L_f = {:.4}, eps = {:.2e}, {:.1} s",
                r.steps, r.estimator, r.n, r.w1, r.w1_se, r.floor, r.lipschitz, r.epsilon_hat, r.wall_time_s
            ));
        }
        for f in &self.fits {
            let mut line = format!(
                "{}: slope {:.3} (95% CI [{:.3}, {:.3}]) over {} rows, {} excluded for epsilon dominance; {}",
                f.estimator,
                f.slope,
                f.ci_low,
                f.ci_high,
                f.rows_used,
                f.rows_excluded,
                if f.decreasing { "strictly decreasing" } else { "not monotone" }
            );
            if f.masked_by_floor {
                line.push_str("; rate masked by statistical floor");
            }
            s.push(line);
        }
        s.join("\n")
    }
}

fn write_fits<W: std::io::Write>(fits: &[SlopeFit], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for f in fits {
        w.serialize(f)?;
    }
    w.flush()?;
    Ok(())
}

/// Run the sweep on up to `cfg.workers` threads. Each finished cell is
/// written to `cells/` at once, so a failing cell leaves the others on disk;
/// the combined `scaling.csv`, `scaling_fit.csv` and `scaling_summary.txt`
/// follow when all cells succeed.
pub fn run_scaling(cfg: &ExperimentConfig) -> Result<ScalingOutcome> {
    if cfg.steps_list.len() < 3 {
        return Err(Error::Config(format!(
            "steps_list needs at least 3 entries, got {:?}",
            cfg.steps_list
        )));
    }
    for &t in &cfg.steps_list {
        Schedule::new(t, cfg.c0, cfg.c1).map_err(|e| Error::Config(e.to_string()))?;
    }
    let target = cfg.load_target()?;
    let dir = cfg.out_dir().to_path_buf();
    let cells = dir.join("cells");
    std::fs::create_dir_all(&cells)?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let results: Vec<Result<Vec<SweepRow>>> = pool.install(|| {
        cfg.steps_list
            .par_iter()
            .map(|&t| {
                let rows = run_cell(cfg, &target, t)?;
                write_cell(&cells, t, &rows, cfg.record_wall_time)?;
                Ok(rows)
            })
            .collect()
    });
    let mut rows = Vec::new();
    for r in results {
        rows.extend(r?);
    }
    let fits: Vec<SlopeFit> = [Estimator::Sliced, Estimator::Assignment]
        .into_iter()
        .filter_map(|e| fit_slope(&rows, e, cfg.epsilon_dominance))
        .collect();
    let outcome = ScalingOutcome { rows, fits };

    let mut buf = Vec::new();
    write_rows(&outcome.rows, cfg.record_wall_time, &mut buf)?;
    write_atomic(&dir.join("scaling.csv"), &buf)?;
    let mut buf = Vec::new();
    write_fits(&outcome.fits, &mut buf)?;
    write_atomic(&dir.join("scaling_fit.csv"), &buf)?;
    let header = format!(
        "target {}; c0 = {}, c1 = {}; seed {}\n",
        cfg.target_label(),
        cfg.c0,
        cfg.c1,
        cfg.seed
    );
    write_atomic(
        &dir.join("scaling_summary.txt"),
        format!("{header}{}\n", outcome.summary()).as_bytes(),
    )?;
    Ok(outcome)
}

fn write_cell(dir: &Path, steps: usize, rows: &[SweepRow], wall_time: bool) -> Result<()> {
    let mut buf = Vec::new();
    write_rows(rows, wall_time, &mut buf)?;
    write_atomic(&dir.join(format!("scaling_T{steps}.csv")), &buf)
}
