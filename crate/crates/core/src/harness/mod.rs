//! Command drivers: configuration, the verify suite, training, sampling and
//! the scaling sweep. Every driver writes CSV into the configured output
//! directory and returns a value the CLI maps to an exit code.

use std::path::Path;

use crate::consistency::{estimation_error, one_shot_sample, train_stack, ConsistencyStack};
use crate::error::Result;
use crate::report::CheckReport;
use crate::rng;
use crate::schedule::verify_schedule_properties;

pub mod config;
pub mod scaling;
pub mod verify;

pub use config::ExperimentConfig;
pub use scaling::{run_scaling, ScalingOutcome, SweepRow};
pub use verify::{run_verify, VerifyOutcome};

/// Write through a sibling temporary file and rename, so readers never see
/// a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".partial");
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

/// `schedule.csv` with the per-step coefficients and
/// `schedule_properties.csv` with the property checks.
pub fn run_schedule(cfg: &ExperimentConfig) -> Result<CheckReport> {
    let schedule = cfg.schedule()?;
    let dir = cfg.out_dir();
    std::fs::create_dir_all(dir)?;
    let mut buf = Vec::new();
    schedule.write_csv(&mut buf)?;
    write_atomic(&dir.join("schedule.csv"), &buf)?;
    let report = verify_schedule_properties(&schedule, cfg.terminal_exponent);
    let mut buf = Vec::new();
    report.write_csv(&mut buf)?;
    write_atomic(&dir.join("schedule_properties.csv"), &buf)?;
    Ok(report)
}

/// Train a stack, save it to the stack path and write the per-step
/// estimation error to `train_error.csv`.
pub fn run_train(cfg: &ExperimentConfig) -> Result<ConsistencyStack> {
    let target = cfg.load_target()?;
    let schedule = cfg.schedule()?;
    let spec = cfg.regressor_spec()?;
    let stack = train_stack(&target, &schedule, &spec, &mut rng::stream(cfg.seed, 0))?;
    let path = cfg.stack_path();
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let mut buf = Vec::new();
    stack.write(&mut buf)?;
    write_atomic(&path, &buf)?;

    let errors = estimation_error(&stack, &target, cfg.n_eval, &mut rng::stream(cfg.seed, 1))?;
    std::fs::create_dir_all(cfg.out_dir())?;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["t", "mean_distance", "degenerate_points"])?;
    for s in &errors.per_step {
        w.write_record([
            s.t.to_string(),
            s.mean_distance.to_string(),
            s.degenerate_points.to_string(),
        ])?;
    }
    let buf = w.into_inner().map_err(|e| e.into_error())?;
    write_atomic(&cfg.out_dir().join("train_error.csv"), &buf)?;
    log::info!(
        "trained {} steps with {}; epsilon_hat = {:e}",
        stack.steps(),
        spec.describe(),
        errors.aggregate
    );
    Ok(stack)
}

/// Load the stack and write `n_samples` one-shot samples to `samples.csv`.
pub fn run_sample(cfg: &ExperimentConfig) -> Result<usize> {
    let stack = ConsistencyStack::load(&cfg.stack_path())?;
    let samples = one_shot_sample(&stack, cfg.n_samples, &mut rng::stream(cfg.seed, 2));
    std::fs::create_dir_all(cfg.out_dir())?;
    let mut buf = Vec::new();
    samples.write_csv(&mut buf)?;
    write_atomic(&cfg.out_dir().join("samples.csv"), &buf)?;
    Ok(samples.len())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg_in(dir: &Path, text: &str) -> ExperimentConfig {
        let mut cfg = ExperimentConfig::parse(text, dir).unwrap();
        cfg.out = dir.join("out");
        cfg
    }

    #[test]
    fn point_mass_train_then_sample_has_linear_variance() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(
            dir.path().join("pm.toml"),
            "kind = \"atomic\"\natoms = [[0.0, 0.0]]\n",
        )
        .unwrap();
        let cfg = cfg_in(
            dir.path(),
            "target = \"pm.toml\"\nsteps = 32\nn_samples = 50000\nn_eval = 50\n",
        );
        run_train(&cfg).unwrap();
        assert_eq!(run_sample(&cfg).unwrap(), 50_000);
        let text = std::fs::read_to_string(cfg.out.join("samples.csv")).unwrap();
        let vals: Vec<f64> = text
            .lines()
            .skip(1)
            .map(|l| l.split(',').next().unwrap().parse().unwrap())
            .collect();
        let s = cfg.schedule().unwrap();
        let want = (1.0 - s.alpha_bar(1)) / (1.0 - s.alpha_bar(32));
        let var = vals.iter().map(|v| v * v).sum::<f64>() / vals.len() as f64;
        assert!((var / want - 1.0).abs() < 0.03, "{var} vs {want}");
    }

    #[test]
    fn zero_samples_give_header_only() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = cfg_in(
            dir.path(),
            "steps = 8\nc1 = 2.0\nn_samples = 0\nn_eval = 10\n",
        );
        run_train(&cfg).unwrap();
        assert_eq!(run_sample(&cfg).unwrap(), 0);
        let text = std::fs::read_to_string(cfg.out.join("samples.csv")).unwrap();
        assert_eq!(text.lines().count(), 1);
    }

    #[test]
    fn schedule_outputs() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = cfg_in(dir.path(), "steps = 100");
        assert!(run_schedule(&cfg).unwrap().passed());
        let text = std::fs::read_to_string(cfg.out.join("schedule.csv")).unwrap();
        assert_eq!(text.lines().count(), 101);
    }
}
