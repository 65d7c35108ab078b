//! Learning-rate schedule for the discrete forward process.
//!
//! `beta_1 = T^{-c0}` and, for `2 <= t <= T`,
//! `beta_t = (c1 ln T / T) * min(beta_1 (1 + c1 ln T / T)^t, 1)`,
//! with `alpha_t = 1 - beta_t` and `alpha_bar_t = prod_{k <= t} alpha_k`.
//! Indices are 1-based; `alpha_bar_0 = 1`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::report::{CheckReport, CheckRow};

pub const DEFAULT_C0: f64 = 2.0;
pub const DEFAULT_C1: f64 = 4.0;
pub const DEFAULT_TERMINAL_EXPONENT: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleParams {
    pub steps: usize,
    pub c0: f64,
    pub c1: f64,
}

/// Immutable `(beta, alpha, alpha_bar)` sequences. Storage is offset by one
/// so that slot 0 holds the `t = 0` convention (`beta = 0`, `alpha_bar = 1`).
#[derive(Debug, Clone, PartialEq)]
pub struct Schedule {
    params: ScheduleParams,
    beta: Vec<f64>,
    alpha: Vec<f64>,
    alpha_bar: Vec<f64>,
}

impl Schedule {
    pub fn new(steps: usize, c0: f64, c1: f64) -> Result<Self> {
        if steps < 2 {
            return Err(Error::Schedule(format!(
                "T must be at least 2, got {steps}"
            )));
        }
        if !(c0 > 0.0 && c0.is_finite()) || !(c1 > 0.0 && c1.is_finite()) {
            return Err(Error::Schedule(format!(
                "c0 and c1 must be positive and finite, got c0 = {c0}, c1 = {c1}"
            )));
        }
        let t_f = steps as f64;
        let rate = c1 * t_f.ln() / t_f;
        let beta1 = t_f.powf(-c0);

        let mut beta = Vec::with_capacity(steps + 1);
        beta.push(0.0);
        beta.push(beta1);
        for t in 2..=steps {
            beta.push(rate * (beta1 * (1.0 + rate).powf(t as f64)).min(1.0));
        }

        let mut alpha = Vec::with_capacity(steps + 1);
        let mut alpha_bar = Vec::with_capacity(steps + 1);
        alpha.push(1.0);
        alpha_bar.push(1.0);
        for t in 1..=steps {
            let b = beta[t];
            if !(b > 0.0 && b < 1.0) {
                return Err(Error::Schedule(format!(
                    "beta_{t} = {b} is outside (0, 1) for T = {steps}, c0 = {c0}, c1 = {c1}"
                )));
            }
            let a = 1.0 - b;
            if a < 0.5 {
                return Err(Error::Schedule(format!(
                    "alpha_{t} = {a} < 1/2 for T = {steps}, c0 = {c0}, c1 = {c1}"
                )));
            }
            alpha.push(a);
            alpha_bar.push(alpha_bar[t - 1] * a);
        }

        Ok(Self {
            params: ScheduleParams { steps, c0, c1 },
            beta,
            alpha,
            alpha_bar,
        })
    }

    pub fn from_params(p: ScheduleParams) -> Result<Self> {
        Self::new(p.steps, p.c0, p.c1)
    }

    pub fn params(&self) -> ScheduleParams {
        self.params
    }

    /// Number of steps `T`.
    pub fn steps(&self) -> usize {
        self.params.steps
    }

    pub fn c0(&self) -> f64 {
        self.params.c0
    }

    pub fn c1(&self) -> f64 {
        self.params.c1
    }

    /// `c1 ln T / T`.
    pub fn rate(&self) -> f64 {
        let t = self.steps() as f64;
        self.params.c1 * t.ln() / t
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.beta[self.index(t)]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alpha[self.index(t)]
    }

    /// `alpha_bar_t`, valid for `0 <= t <= T`.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        assert!(t <= self.steps(), "index {t} beyond T = {}", self.steps());
        self.alpha_bar[t]
    }

    pub fn betas(&self) -> &[f64] {
        &self.beta[1..]
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alpha[1..]
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bar[1..]
    }

    pub fn check_index(&self, t: usize, lo: usize) -> Result<()> {
        if t < lo || t > self.steps() {
            Err(Error::IndexOutOfRange {
                index: t,
                lo,
                hi: self.steps(),
            })
        } else {
            Ok(())
        }
    }

    /// `ln(1 / alpha_bar_T) / ln T`.
    pub fn terminal_exponent(&self) -> f64 {
        -self.alpha_bar(self.steps()).ln() / (self.steps() as f64).ln()
    }

    fn index(&self, t: usize) -> usize {
        assert!(
            (1..=self.steps()).contains(&t),
            "index {t} outside [1, {}]",
            self.steps()
        );
        t
    }

    /// CSV with columns `t,beta,alpha,alpha_bar`.
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["t", "beta", "alpha", "alpha_bar"])?;
        for t in 1..=self.steps() {
            w.write_record([
                t.to_string(),
                format!("{:e}", self.beta(t)),
                format!("{:e}", self.alpha(t)),
                format!("{:e}", self.alpha_bar(t)),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Evaluate the four schedule properties used by the convergence analysis.
///
/// Each asserted row carries the worst-case index over the checked range and
/// the signed margin of the tightest inequality. The achieved terminal
/// exponent is added as a report-only row.
pub fn verify_schedule_properties(s: &Schedule, terminal_exponent: f64) -> CheckReport {
    let steps = s.steps();
    let rate = s.rate();
    let mut report =
        CheckReport::new("schedule_properties").tolerance("terminal_exponent", terminal_exponent);

    // alpha_t >= 1 - rate >= 1/2 for all t
    let floor = 1.0 - rate;
    let (t1, m1) = (1..=steps)
        .map(|t| (t, s.alpha(t) - floor))
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .unwrap();
    let margin = m1.min(floor - 0.5);
    report.push(CheckRow {
        config: format!("alpha_lower_bound t=1..{steps}"),
        t: Some(t1),
        k: None,
        lhs: floor,
        rhs: s.alpha(t1),
        margin,
        passed: Some(margin >= 0.0),
    });

    let ceiling = 4.0 * rate;
    if steps >= 2 {
        // (1/2)(1-a)/(1-ab) <= (1/2)(1-a)/(a-ab) <= (1-a)/(1-ab_prev) <= 4 rate
        let mut worst = (2, f64::INFINITY, 0.0, 0.0);
        for t in 2..=steps {
            let b = s.beta(t);
            let ab = s.alpha_bar(t);
            let ab_prev = s.alpha_bar(t - 1);
            let first = 0.5 * b / (1.0 - ab);
            let second = 0.5 * b / (s.alpha(t) - ab);
            let third = b / (1.0 - ab_prev);
            let m = (second - first).min(third - second).min(ceiling - third);
            if m < worst.1 {
                worst = (t, m, third, ceiling);
            }
        }
        report.push(CheckRow {
            config: format!("step_ratio_chain t=2..{steps}"),
            t: Some(worst.0),
            k: None,
            lhs: worst.2,
            rhs: worst.3,
            margin: worst.1,
            passed: Some(worst.1 >= 0.0),
        });

        // 1 <= (1-ab_t)/(1-ab_{t-1}) <= 1 + 4 rate; equality at 1 is a failure
        // because beta_t > 0 makes the ratio strictly larger.
        let mut worst = (2, f64::INFINITY, 0.0);
        for t in 2..=steps {
            let ratio = (1.0 - s.alpha_bar(t)) / (1.0 - s.alpha_bar(t - 1));
            let m = (ratio - 1.0).min(1.0 + ceiling - ratio);
            if m < worst.1 {
                worst = (t, m, ratio);
            }
        }
        report.push(CheckRow {
            config: format!("noise_growth_ratio t=2..{steps}"),
            t: Some(worst.0),
            k: None,
            lhs: worst.2,
            rhs: 1.0 + ceiling,
            margin: worst.1,
            passed: Some(worst.1 > 0.0),
        });
    } else {
        report.note("T < 2: chain and growth-ratio properties are vacuous");
    }

    let bound = (steps as f64).powf(-terminal_exponent);
    let ab_t = s.alpha_bar(steps);
    report.push(CheckRow::upper("terminal_alpha_bar", ab_t, bound).at(steps));
    report.push(CheckRow::report(
        "achieved_terminal_exponent",
        s.terminal_exponent(),
        terminal_exponent,
    ));
    report.finalize()
}
