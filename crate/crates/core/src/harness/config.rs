//! Experiment configuration: a flat TOML key-value file.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::consistency::{RegressorKind, RegressorSpec};
use crate::error::{Error, Result};
use crate::pf_ode::{FlowConfig, Integrator};
use crate::schedule::Schedule;
use crate::targets::Target;
use crate::theory_check::{MarginalCheckConfig, TypicalEventConfig};

/// Target used when a config names none.
pub const BUNDLED_TARGET: &str = include_str!("../../targets/two_atoms_2d.toml");

/// Every key is optional; see `ExperimentConfig::default` for the values
/// used when a key is absent. Relative paths are resolved against the
/// directory holding the config file.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Target definition file; the bundled two-atom 2-D target when absent.
    pub target: Option<PathBuf>,
    /// `T` for schedule, verify, train and sample.
    pub steps: usize,
    /// `T` values of the scaling sweep, strictly increasing.
    pub steps_list: Vec<usize>,
    pub c0: f64,
    pub c1: f64,
    pub terminal_exponent: f64,

    pub regressor: RegressorKind,
    pub knn_neighbours: Option<usize>,
    pub knn_bandwidth: Option<f64>,
    pub training_batch: usize,
    pub ridge: f64,
    pub grid_points: Option<usize>,

    pub integrator: Integrator,
    pub substeps: usize,

    /// One-shot and fresh samples per sweep cell; output size of `sample`.
    pub n_samples: usize,
    /// Marginal draws per step for the estimation error.
    pub n_eval: usize,
    pub lipschitz_points: usize,
    pub n_projections: usize,
    /// Subsample size for the exact-assignment estimator.
    pub assignment_subsample: usize,
    /// Disjoint subsamples averaged by the exact-assignment estimator.
    pub assignment_repeats: usize,
    /// Rows with `epsilon_hat > epsilon_dominance * w1` are left out of the slope fit.
    pub epsilon_dominance: f64,
    /// Adds a wall-time column to the sweep CSV, which then differs between runs.
    pub record_wall_time: bool,

    pub score_queries: usize,
    pub score_mc_samples: usize,
    pub identity_points: usize,
    pub moment_samples: usize,
    pub marginal_samples: usize,
    pub marginal_substeps: usize,
    pub floor_factor: f64,
    pub shape_points: usize,
    /// Asserted ceiling on the discretization ratio; report-only when absent.
    pub shape_ceiling: Option<f64>,
    pub event_samples: usize,
    pub c3: f64,
    pub c4: f64,

    pub seed: u64,
    pub out: PathBuf,
    pub workers: usize,
    /// Stack read by `sample`; `<out>/stack.json` when absent.
    pub stack: Option<PathBuf>,

    #[serde(skip)]
    base_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            target: None,
            steps: 64,
            steps_list: vec![32, 64, 128, 256],
            c0: 2.0,
            c1: 4.0,
            terminal_exponent: 2.0,
            regressor: RegressorKind::ExactOracle,
            knn_neighbours: None,
            knn_bandwidth: None,
            training_batch: 10_000,
            ridge: 0.0,
            grid_points: None,
            integrator: Integrator::Rk4,
            substeps: 8,
            n_samples: 20_000,
            n_eval: 500,
            lipschitz_points: 16,
            n_projections: 256,
            assignment_subsample: 512,
            assignment_repeats: 8,
            epsilon_dominance: 0.5,
            record_wall_time: false,
            score_queries: 50,
            score_mc_samples: 100_000,
            identity_points: 200,
            moment_samples: 20_000,
            marginal_samples: 2_000,
            marginal_substeps: 32,
            floor_factor: 2.0,
            shape_points: 32,
            shape_ceiling: None,
            event_samples: 20_000,
            c3: 10.0,
            c4: 10.0,
            seed: 0,
            out: PathBuf::from("out"),
            workers: 1,
            stack: None,
            base_dir: PathBuf::from("."),
        }
    }
}

impl ExperimentConfig {
    /// Parse and validate; TOML errors carry line and column.
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self> {
        let mut cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.base_dir = base_dir.to_path_buf();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.steps < 2 {
            return fail(format!("steps must be at least 2, got {}", self.steps));
        }
        if self.steps_list.windows(2).any(|w| w[0] >= w[1]) {
            return fail(format!(
                "steps_list must be strictly increasing, got {:?}",
                self.steps_list
            ));
        }
        if self.steps_list.first().is_some_and(|&t| t < 2) {
            return fail("steps_list entries must be at least 2".into());
        }
        if self.substeps == 0 || self.marginal_substeps == 0 {
            return fail("substep counts must be at least 1".into());
        }
        if self.workers == 0 {
            return fail("workers must be at least 1".into());
        }
        if self.n_projections == 0 {
            return fail("n_projections must be at least 1".into());
        }
        if self.assignment_repeats == 0 {
            return fail("assignment_repeats must be at least 1".into());
        }
        if !(self.floor_factor > 0.0 && self.epsilon_dominance > 0.0) {
            return fail("floor_factor and epsilon_dominance must be positive".into());
        }
        if let Some(p) = self.target_path() {
            if !p.is_file() {
                return fail(format!("target file {} does not exist", p.display()));
            }
        }
        self.regressor_spec()?;
        self.typical_event()?;
        Ok(())
    }

    fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn target_path(&self) -> Option<PathBuf> {
        self.target.as_deref().map(|p| self.resolve(p))
    }

    pub fn load_target(&self) -> Result<Target> {
        match self.target_path() {
            Some(p) => Target::load(&p),
            None => Target::parse(BUNDLED_TARGET),
        }
    }

    pub fn target_label(&self) -> String {
        match &self.target {
            Some(p) => p.display().to_string(),
            None => "bundled:two_atoms_2d".into(),
        }
    }

    pub fn schedule(&self) -> Result<Schedule> {
        Schedule::new(self.steps, self.c0, self.c1)
    }

    pub fn regressor_spec(&self) -> Result<RegressorSpec> {
        let spec = RegressorSpec {
            kind: self.regressor,
            k: self.knn_neighbours,
            bandwidth: self.knn_bandwidth,
            training_batch: self.training_batch,
            ridge: self.ridge,
            grid_points: self.grid_points,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn flow(&self) -> FlowConfig {
        FlowConfig {
            substeps_per_interval: self.substeps,
            integrator: self.integrator,
        }
    }

    pub fn marginal_check(&self) -> MarginalCheckConfig {
        MarginalCheckConfig {
            n_projections: self.n_projections,
            floor_factor: self.floor_factor,
        }
    }

    pub fn typical_event(&self) -> Result<TypicalEventConfig> {
        TypicalEventConfig::new(self.c3, self.c4)
    }

    /// Output directory; relative paths resolve against the working directory.
    pub fn out_dir(&self) -> &Path {
        &self.out
    }

    pub fn stack_path(&self) -> PathBuf {
        match &self.stack {
            Some(p) => self.resolve(p),
            None => self.out.join("stack.json"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_is_the_default() {
        let cfg = ExperimentConfig::parse("", Path::new(".")).unwrap();
        assert_eq!(cfg, ExperimentConfig::default());
        assert_eq!(cfg.load_target().unwrap().dim(), 2);
    }

    #[test]
    fn unknown_key_reports_its_line() {
        let err = ExperimentConfig::parse("steps = 32\nstepz = 4\n", Path::new(".")).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("line 2"), "{msg}");
        assert!(msg.contains("stepz"), "{msg}");
    }

    #[test]
    fn rejects_bad_values() {
        for text in [
            "steps_list = [16, 16, 32]",
            "steps = 1",
            "workers = 0",
            "c4 = 0.0",
            "regressor = \"knn_kernel\"\nknn_neighbours = 0",
            "target = \"no/such/file.toml\"",
            "regressor = \"lasso\"",
        ] {
            let r = ExperimentConfig::parse(text, Path::new("."));
            assert!(
                matches!(r, Err(Error::Config(_)) | Err(Error::Regressor(_))),
                "{text}"
            );
        }
    }

    #[test]
    fn target_resolves_against_config_dir() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(
            dir.path().join("t.toml"),
            "kind = \"atomic\"\natoms = [[1.0]]\n",
        )
        .unwrap();
        let cfg = ExperimentConfig::parse("target = \"t.toml\"", dir.path()).unwrap();
        assert_eq!(cfg.load_target().unwrap().dim(), 1);
    }
}
