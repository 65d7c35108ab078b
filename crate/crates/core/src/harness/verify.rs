//! The `verify` suite: every check in `theory_check` on the configured target.

use rand::Rng;

use super::config::ExperimentConfig;
use super::write_atomic;
use crate::error::Result;
use crate::forward::sample_marginal;
use crate::pf_ode::FlowConfig;
use crate::report::{write_reports_csv, CheckReport};
use crate::rng::{self, StreamRng};
use crate::schedule::{verify_schedule_properties, Schedule};
use crate::targets::Target;
use crate::theory_check::{
    check_conditional_mean, check_discretization_shape, check_jacobian_identity,
    check_marginal_preservation, check_score_jacobian, check_score_moment, check_score_oracle,
    estimate_lipschitz, typical_event_probability,
};

#[derive(Debug)]
pub struct VerifyOutcome {
    pub reports: Vec<CheckReport>,
}

impl VerifyOutcome {
    pub fn passed(&self) -> bool {
        self.reports.iter().all(|r| r.passed())
    }

    pub fn summary(&self) -> String {
        let mut s: Vec<String> = self.reports.iter().map(|r| r.summary()).collect();
        let failed = self.reports.iter().filter(|r| !r.passed()).count();
        s.push(format!("{} checks, {} failed", self.reports.len(), failed));
        s.join("\n")
    }
}

/// A handful of indices spread over `1..=T`, always including both ends.
pub fn spread_indices(steps: usize, lo: usize, count: usize) -> Vec<usize> {
    let mut out: Vec<usize> = (0..count)
        .map(|i| lo + (i * (steps - lo)) / (count - 1).max(1))
        .collect();
    out.dedup();
    out
}

/// `(ab_t, x)` pairs with `t` uniform on the schedule and `x` a marginal draw.
pub fn marginal_queries<R: Rng + ?Sized>(
    target: &Target,
    schedule: &Schedule,
    n: usize,
    rng: &mut R,
) -> Result<Vec<(f64, Vec<f64>)>> {
    (0..n)
        .map(|_| {
            let t = rng.random_range(1..=schedule.steps());
            let x = sample_marginal(target, schedule, t, 1, rng)?;
            Ok((schedule.alpha_bar(t), x.row(0).to_vec()))
        })
        .collect()
}

fn merged(name: &str, parts: Vec<CheckReport>) -> CheckReport {
    let mut out = CheckReport::new(name);
    for p in parts {
        for (k, v) in p.tolerances {
            if !out.tolerances.iter().any(|(key, _)| *key == k) {
                out.tolerances.push((k, v));
            }
        }
        out.rows.extend(p.rows);
        out.notes.extend(p.notes);
    }
    out.finalize()
}

fn stream(cfg: &ExperimentConfig, id: u64) -> StreamRng {
    rng::stream(cfg.seed, id)
}

/// Run every check. Each check draws from its own stream so results do not
/// depend on which other checks ran.
pub fn run_checks(cfg: &ExperimentConfig) -> Result<VerifyOutcome> {
    let target = cfg.load_target()?;
    let schedule = cfg.schedule()?;
    let steps = schedule.steps();
    let mut reports = Vec::new();

    log::info!("schedule properties");
    reports.push(verify_schedule_properties(&schedule, cfg.terminal_exponent));

    log::info!("score oracle");
    let queries = marginal_queries(&target, &schedule, cfg.score_queries, &mut stream(cfg, 1))?;
    reports.push(check_score_oracle(
        &target,
        &queries,
        cfg.score_mc_samples,
        &mut stream(cfg, 2),
    )?);
    reports.push(check_score_jacobian(&target, &queries)?);

    log::info!("jacobian identity");
    let mut r = stream(cfg, 3);
    let parts = spread_indices(steps, 1, 5)
        .into_iter()
        .map(|t| {
            let pts = sample_marginal(&target, &schedule, t, cfg.identity_points, &mut r)?;
            check_jacobian_identity(&target, &schedule, t, &pts)
        })
        .collect::<Result<Vec<_>>>()?;
    reports.push(merged("jacobian_identity", parts));

    log::info!("score second moment");
    reports.push(check_score_moment(
        &target,
        &schedule,
        &spread_indices(steps, 1, 5),
        cfg.moment_samples,
        &mut stream(cfg, 4),
    )?);

    log::info!("conditional mean identity");
    let mut r = stream(cfg, 5);
    let parts = spread_indices(steps, 2, 5)
        .into_iter()
        .map(|t| {
            let pts = sample_marginal(&target, &schedule, t, cfg.identity_points, &mut r)?;
            check_conditional_mean(&target, &schedule, &(2..=steps).collect::<Vec<_>>(), &pts)
        })
        .collect::<Result<Vec<_>>>()?;
    reports.push(merged("conditional_mean_identity", parts));

    log::info!("marginal preservation");
    let marginal_flow = FlowConfig {
        substeps_per_interval: cfg.marginal_substeps,
        integrator: cfg.integrator,
    };
    reports.push(check_marginal_preservation(
        &target,
        &schedule,
        &[(steps, 1), (steps / 2, 1)],
        cfg.marginal_samples,
        &marginal_flow,
        &cfg.marginal_check(),
        &mut stream(cfg, 6),
    )?);

    log::info!("lipschitz estimate");
    reports.push(estimate_lipschitz(
        &target,
        &schedule,
        &[(steps, 1), (steps / 2, 1), (steps, steps / 2)],
        cfg.lipschitz_points,
        &cfg.flow(),
        &mut stream(cfg, 7),
    )?);

    log::info!("discretization shape");
    reports.push(check_discretization_shape(
        &target,
        &schedule,
        cfg.shape_points,
        &cfg.flow(),
        cfg.shape_ceiling,
        &mut stream(cfg, 8),
    )?);

    log::info!("typical event");
    let event = cfg.typical_event()?;
    let mut r = stream(cfg, 9);
    let parts = spread_indices(steps, 2, 3)
        .into_iter()
        .map(|t| {
            typical_event_probability(&target, &schedule, t, cfg.event_samples, &event, &mut r)
        })
        .collect::<Result<Vec<_>>>()?;
    reports.push(merged("typical_event", parts));

    Ok(VerifyOutcome { reports })
}

/// Run the suite and write `verify.csv` plus `verify_summary.txt` into the
/// output directory.
pub fn run_verify(cfg: &ExperimentConfig) -> Result<VerifyOutcome> {
    let outcome = run_checks(cfg)?;
    let dir = cfg.out_dir();
    std::fs::create_dir_all(dir)?;
    let mut buf = Vec::new();
    write_reports_csv(&outcome.reports, &mut buf)?;
    write_atomic(&dir.join("verify.csv"), &buf)?;
    let header = format!(
        "target {}; T = {}, c0 = {}, c1 = {}; seed {}\n",
        cfg.target_label(),
        cfg.steps,
        cfg.c0,
        cfg.c1,
        cfg.seed
    );
    write_atomic(
        &dir.join("verify_summary.txt"),
        format!("{header}{}\n", outcome.summary()).as_bytes(),
    )?;
    Ok(outcome)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spread_covers_both_ends() {
        assert_eq!(spread_indices(64, 1, 5), vec![1, 16, 32, 48, 64]);
        assert_eq!(spread_indices(3, 2, 5), vec![2, 3]);
    }

    fn small() -> ExperimentConfig {
        let text = "steps = 32\nscore_queries = 5\nscore_mc_samples = 20000\n\
                    identity_points = 20\nmoment_samples = 2000\nmarginal_samples = 300\n\
                    marginal_substeps = 8\nlipschitz_points = 4\nshape_points = 4\n\
                    event_samples = 2000\n";
        ExperimentConfig::parse(text, std::path::Path::new(".")).unwrap()
    }

    #[test]
    fn default_two_atom_suite_passes() {
        let out = run_checks(&small()).unwrap();
        assert!(out.passed(), "{}", out.summary());
        assert_eq!(out.reports.len(), 10);
    }

    #[test]
    fn tiny_event_constant_is_report_only() {
        let mut cfg = small();
        cfg.c4 = 0.1;
        let out = run_checks(&cfg).unwrap();
        let ev = out
            .reports
            .iter()
            .find(|r| r.name == "typical_event")
            .unwrap();
        assert!(ev.rows.iter().all(|r| r.passed.is_none() && r.lhs > 0.5));
        assert!(out.passed(), "{}", out.summary());
    }
}
