//! Target data distributions with exact oracles for the smoothed law
//! `X(ab) = sqrt(ab) X0 + sqrt(1 - ab) Z`.
//!
//! Both target families are finite mixtures of isotropic components
//! (`variance = 0` for atoms), so the smoothed law is again an isotropic
//! Gaussian mixture with component means `sqrt(ab) c_i` and variances
//! `ab * s_i^2 + (1 - ab)`. Every oracle below works in the log domain.

use std::path::Path;

use rand::Rng;
use serde::Deserialize;

use crate::error::{Error, Result};
use crate::rng;
use crate::sample::EmpiricalSample;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Finitely supported target.
#[derive(Debug, Clone, PartialEq)]
pub struct AtomicTarget {
    dim: usize,
    atoms: Vec<f64>,
    weights: Vec<f64>,
    radius: f64,
}

impl AtomicTarget {
    pub fn new(atoms: Vec<Vec<f64>>, weights: Vec<f64>, radius: f64) -> Result<Self> {
        let dim = check_rows(&atoms, "atoms")?;
        check_simplex(&weights, atoms.len(), true)?;
        if !(radius.is_finite() && radius >= 0.0) {
            return Err(Error::Target(format!(
                "radius must be finite and >= 0, got {radius}"
            )));
        }
        for (i, a) in atoms.iter().enumerate() {
            let n = norm(a);
            if n > radius {
                return Err(Error::Target(format!(
                    "atom {i} has norm {n} > radius {radius}"
                )));
            }
        }
        Ok(Self {
            dim,
            atoms: atoms.concat(),
            weights,
            radius,
        })
    }

    /// Equal weights, radius equal to the largest atom norm.
    pub fn uniform(atoms: Vec<Vec<f64>>) -> Result<Self> {
        let n = atoms.len();
        let radius = atoms.iter().map(|a| norm(a)).fold(0.0, f64::max);
        Self::new(atoms, vec![1.0 / n.max(1) as f64; n], radius)
    }

    pub fn point_mass(at: Vec<f64>) -> Result<Self> {
        Self::uniform(vec![at])
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn atom(&self, i: usize) -> &[f64] {
        &self.atoms[i * self.dim..(i + 1) * self.dim]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }
}

/// Mixture of isotropic Gaussians `N(mean_i, variance_i I)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMixtureTarget {
    dim: usize,
    means: Vec<f64>,
    variances: Vec<f64>,
    weights: Vec<f64>,
    radius: Option<f64>,
}

impl GaussianMixtureTarget {
    pub fn new(
        means: Vec<Vec<f64>>,
        variances: Vec<f64>,
        weights: Vec<f64>,
        radius: Option<f64>,
    ) -> Result<Self> {
        let dim = check_rows(&means, "means")?;
        check_simplex(&weights, means.len(), false)?;
        if variances.len() != means.len() {
            return Err(Error::Target(format!(
                "{} variances for {} components",
                variances.len(),
                means.len()
            )));
        }
        if let Some(v) = variances.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
            return Err(Error::Target(format!(
                "variances must be positive, got {v}"
            )));
        }
        if let Some(r) = radius {
            if !(r.is_finite() && r > 0.0) {
                return Err(Error::Target(format!("radius must be positive, got {r}")));
            }
        }
        Ok(Self {
            dim,
            means: means.concat(),
            variances,
            weights,
            radius,
        })
    }

    pub fn single(mean: Vec<f64>, variance: f64) -> Result<Self> {
        Self::new(vec![mean], vec![variance], vec![1.0], None)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn mean(&self, i: usize) -> &[f64] {
        &self.means[i * self.dim..(i + 1) * self.dim]
    }

    pub fn variances(&self) -> &[f64] {
        &self.variances
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Configured radius, or `max |mean| + 4 sqrt(d max variance)`.
    pub fn radius(&self) -> f64 {
        self.radius.unwrap_or_else(|| {
            let m = (0..self.weights.len())
                .map(|i| norm(self.mean(i)))
                .fold(0.0, f64::max);
            let v = self.variances.iter().cloned().fold(0.0, f64::max);
            m + 4.0 * (self.dim as f64 * v).sqrt()
        })
    }
}

/// Whether `|X0| <= R` holds exactly or only approximately.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Boundedness {
    Exact { radius: f64 },
    Approximate { radius: f64, mass_outside: f64 },
}

/// Any supported target.
#[derive(Debug, Clone, PartialEq)]
pub enum Target {
    Atomic(AtomicTarget),
    Mixture(GaussianMixtureTarget),
}

impl From<AtomicTarget> for Target {
    fn from(t: AtomicTarget) -> Self {
        Target::Atomic(t)
    }
}

impl From<GaussianMixtureTarget> for Target {
    fn from(t: GaussianMixtureTarget) -> Self {
        Target::Mixture(t)
    }
}

/// Posterior over mixture components of `X0` given `X(ab) = x`.
///
/// Within component `i`, `X0 | x` is `N(x0_means[i], x0_variances[i] I)`;
/// for atoms the variance is zero and the mean is the atom itself.
#[derive(Debug, Clone, PartialEq)]
pub struct SmoothedPosterior {
    pub x: Vec<f64>,
    pub alpha_bar: f64,
    pub weights: Vec<f64>,
    /// `sqrt(ab) c_i`, row-major.
    pub centers: Vec<f64>,
    pub x0_means: Vec<f64>,
    pub x0_variances: Vec<f64>,
    /// Smoothed component variances `ab s_i^2 + 1 - ab`.
    pub smoothed_variances: Vec<f64>,
    pub log_density: f64,
    /// Largest unnormalized log kernel; below the smallest positive double
    /// every kernel would underflow in the linear domain.
    pub max_log_kernel: f64,
}

impl SmoothedPosterior {
    pub fn dim(&self) -> usize {
        self.x.len()
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn center(&self, i: usize) -> &[f64] {
        let d = self.dim();
        &self.centers[i * d..(i + 1) * d]
    }

    pub fn x0_mean(&self, i: usize) -> &[f64] {
        let d = self.dim();
        &self.x0_means[i * d..(i + 1) * d]
    }

    /// All component kernels underflow in the linear domain.
    pub fn is_degenerate(&self) -> bool {
        self.max_log_kernel < f64::MIN_POSITIVE.ln()
    }

    /// `E[X0 | x]`.
    pub fn mean_x0(&self) -> Vec<f64> {
        let d = self.dim();
        let mut m = vec![0.0; d];
        for (i, w) in self.weights.iter().enumerate() {
            for (a, b) in m.iter_mut().zip(self.x0_mean(i)) {
                *a += w * b;
            }
        }
        m
    }
}

impl Target {
    pub fn dim(&self) -> usize {
        match self {
            Target::Atomic(t) => t.dim,
            Target::Mixture(t) => t.dim,
        }
    }

    pub fn n_components(&self) -> usize {
        self.weights().len()
    }

    pub fn weights(&self) -> &[f64] {
        match self {
            Target::Atomic(t) => &t.weights,
            Target::Mixture(t) => &t.weights,
        }
    }

    pub fn is_atomic(&self) -> bool {
        matches!(self, Target::Atomic(_))
    }

    /// Component centers (atoms or means), row-major.
    pub fn centers(&self) -> &[f64] {
        match self {
            Target::Atomic(t) => &t.atoms,
            Target::Mixture(t) => &t.means,
        }
    }

    pub fn center(&self, i: usize) -> &[f64] {
        let d = self.dim();
        &self.centers()[i * d..(i + 1) * d]
    }

    /// Component variance of `X0` (zero for atoms).
    pub fn component_variance(&self, i: usize) -> f64 {
        match self {
            Target::Atomic(_) => 0.0,
            Target::Mixture(t) => t.variances[i],
        }
    }

    pub fn radius(&self) -> f64 {
        match self {
            Target::Atomic(t) => t.radius,
            Target::Mixture(t) => t.radius(),
        }
    }

    /// Exact for atomic targets; Monte-Carlo estimate of the mass outside the
    /// radius for Gaussian mixtures (fixed internal stream, 10^5 draws).
    pub fn boundedness(&self) -> Boundedness {
        match self {
            Target::Atomic(t) => Boundedness::Exact { radius: t.radius },
            Target::Mixture(m) => {
                let radius = m.radius();
                let n = 100_000;
                let mut rng = rng::stream(0x5eed_b0d5, 0);
                let s = self.sample_x0(n, &mut rng);
                let outside = s.rows().filter(|r| norm(r) > radius).count();
                Boundedness::Approximate {
                    radius,
                    mass_outside: outside as f64 / n as f64,
                }
            }
        }
    }

    pub fn describe_boundedness(&self) -> String {
        match self.boundedness() {
            Boundedness::Exact { radius } => format!("exact (radius {radius})"),
            Boundedness::Approximate {
                radius,
                mass_outside,
            } => format!(
                "approximate (mass outside R = {:.4}%, R = {radius:.3})",
                100.0 * mass_outside
            ),
        }
    }

    /// I.i.d. draws from the data distribution.
    pub fn sample_x0<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> EmpiricalSample {
        let d = self.dim();
        let weights = self.weights();
        let mut cdf = Vec::with_capacity(weights.len());
        let mut acc = 0.0;
        for w in weights {
            acc += w;
            cdf.push(acc);
        }
        let mut data = Vec::with_capacity(n * d);
        for _ in 0..n {
            let u: f64 = rng.random::<f64>() * acc;
            let i = cdf.partition_point(|&c| c <= u).min(weights.len() - 1);
            let c = self.center(i);
            let var = self.component_variance(i);
            if var > 0.0 {
                let sd = var.sqrt();
                data.extend(c.iter().map(|m| m + sd * rng::normal(rng)));
            } else {
                data.extend_from_slice(c);
            }
        }
        EmpiricalSample::from_raw(d, data)
    }

    /// Log-density of `X(ab)` at `x`.
    pub fn smoothed_log_density(&self, alpha_bar: f64, x: &[f64]) -> Result<f64> {
        Ok(self.posterior(alpha_bar, x)?.log_density)
    }

    /// Component posterior of `X0` given `X(ab) = x`.
    pub fn posterior(&self, alpha_bar: f64, x: &[f64]) -> Result<SmoothedPosterior> {
        check_alpha_bar(alpha_bar)?;
        let d = self.dim();
        if x.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: x.len(),
            });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinitePoint);
        }
        let n = self.n_components();
        let sab = alpha_bar.sqrt();
        let noise = 1.0 - alpha_bar;
        let mut log_terms = Vec::with_capacity(n);
        let mut centers = Vec::with_capacity(n * d);
        let mut x0_means = Vec::with_capacity(n * d);
        let mut x0_variances = Vec::with_capacity(n);
        let mut smoothed_variances = Vec::with_capacity(n);
        for (i, &w) in self.weights().iter().enumerate() {
            let c = self.center(i);
            let s2 = self.component_variance(i);
            let v = alpha_bar * s2 + noise;
            let mut sq = 0.0;
            let gain = s2 * sab / v;
            for j in 0..d {
                let m = sab * c[j];
                let r = x[j] - m;
                sq += r * r;
                centers.push(m);
                x0_means.push(c[j] + gain * r);
            }
            x0_variances.push(s2 * noise / v);
            smoothed_variances.push(v);
            log_terms.push(w.ln() - 0.5 * d as f64 * (LN_2PI + v.ln()) - 0.5 * sq / v);
        }
        let max = log_terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let total: f64 = log_terms.iter().map(|l| (l - max).exp()).sum();
        let log_density = max + total.ln();
        let weights = log_terms.iter().map(|l| (l - max).exp() / total).collect();
        Ok(SmoothedPosterior {
            x: x.to_vec(),
            alpha_bar,
            weights,
            centers,
            x0_means,
            x0_variances,
            smoothed_variances,
            log_density,
            max_log_kernel: max,
        })
    }

    /// `E[X0 | X(ab) = x]`.
    pub fn posterior_mean_x0(&self, alpha_bar: f64, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.posterior(alpha_bar, x)?.mean_x0())
    }

    /// Load a target definition file.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            Error::Config(format!("cannot read target file {}: {e}", path.display()))
        })?;
        Self::parse(&text)
            .map_err(|e| Error::Config(format!("target file {}: {e}", path.display())))
    }

    /// Parse the TOML target format:
    ///
    /// ```toml
    /// kind = "atomic"            # or "gaussian_mixture"
    /// atoms = [[1.0], [-1.0]]    # "means" for mixtures
    /// weights = [0.5, 0.5]       # optional, uniform when omitted
    /// variances = [1.0]          # mixtures only
    /// radius = 1.0               # optional
    /// ```
    pub fn parse(text: &str) -> Result<Self> {
        let def: TargetFile = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        match def {
            TargetFile::Atomic {
                atoms,
                weights,
                radius,
            } => {
                let n = atoms.len();
                let weights = weights.unwrap_or_else(|| vec![1.0 / n.max(1) as f64; n]);
                let radius =
                    radius.unwrap_or_else(|| atoms.iter().map(|a| norm(a)).fold(0.0, f64::max));
                Ok(AtomicTarget::new(atoms, weights, radius)?.into())
            }
            TargetFile::GaussianMixture {
                means,
                variances,
                weights,
                radius,
            } => {
                let n = means.len();
                let weights = weights.unwrap_or_else(|| vec![1.0 / n.max(1) as f64; n]);
                Ok(GaussianMixtureTarget::new(means, variances, weights, radius)?.into())
            }
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
enum TargetFile {
    Atomic {
        atoms: Vec<Vec<f64>>,
        weights: Option<Vec<f64>>,
        radius: Option<f64>,
    },
    GaussianMixture {
        means: Vec<Vec<f64>>,
        variances: Vec<f64>,
        weights: Option<Vec<f64>>,
        radius: Option<f64>,
    },
}

pub(crate) fn check_alpha_bar(alpha_bar: f64) -> Result<()> {
    if alpha_bar > 0.0 && alpha_bar < 1.0 {
        Ok(())
    } else {
        Err(Error::AlphaBarOutOfRange(alpha_bar))
    }
}

pub(crate) fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn check_rows(rows: &[Vec<f64>], what: &str) -> Result<usize> {
    let first = rows
        .first()
        .ok_or_else(|| Error::Target(format!("{what} must be non-empty")))?;
    let dim = first.len();
    if dim == 0 {
        return Err(Error::Target(format!("{what} must have dimension >= 1")));
    }
    for (i, r) in rows.iter().enumerate() {
        if r.len() != dim {
            return Err(Error::Target(format!(
                "{what}[{i}] has dimension {} (expected {dim})",
                r.len()
            )));
        }
        if r.iter().any(|v| !v.is_finite()) {
            return Err(Error::Target(format!("{what}[{i}] is not finite")));
        }
    }
    Ok(dim)
}

fn check_simplex(weights: &[f64], n: usize, strict: bool) -> Result<()> {
    if weights.len() != n {
        return Err(Error::Target(format!(
            "{} weights for {n} components",
            weights.len()
        )));
    }
    if let Some(w) = weights
        .iter()
        .find(|w| !w.is_finite() || **w < 0.0 || (strict && **w == 0.0))
    {
        return Err(Error::Target(format!("invalid weight {w}")));
    }
    let sum: f64 = weights.iter().sum();
    if (sum - 1.0).abs() > 1e-12 {
        return Err(Error::Target(format!("weights sum to {sum}, not 1")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_atoms() -> Target {
        AtomicTarget::uniform(vec![vec![-1.0], vec![1.0]])
            .unwrap()
            .into()
    }

    #[test]
    fn validation() {
        assert!(AtomicTarget::new(vec![vec![2.0]], vec![1.0], 1.0).is_err());
        assert!(AtomicTarget::new(vec![vec![0.0]], vec![0.9], 1.0).is_err());
        assert!(AtomicTarget::new(vec![vec![0.0], vec![1.0]], vec![1.0, 0.0], 1.0).is_err());
        assert!(AtomicTarget::new(vec![vec![0.0], vec![1.0, 2.0]], vec![0.5, 0.5], 3.0).is_err());
        assert!(GaussianMixtureTarget::new(vec![vec![0.0]], vec![0.0], vec![1.0], None).is_err());
    }

    #[test]
    fn point_mass_samples_are_the_atom() {
        let t: Target = AtomicTarget::point_mass(vec![0.0, 0.0]).unwrap().into();
        let s = t.sample_x0(100, &mut rng::stream(1, 0));
        assert!(s.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn point_mass_log_density_closed_form() {
        let t: Target = AtomicTarget::point_mass(vec![0.0]).unwrap().into();
        let v = t.smoothed_log_density(0.5, &[0.0]).unwrap();
        let expected = -0.5 * (2.0 * std::f64::consts::PI * 0.5).ln();
        assert!((v - expected).abs() < 1e-14);
    }

    #[test]
    fn two_atom_log_density_at_origin() {
        let t = two_atoms();
        let ab: f64 = 0.3;
        let v = 1.0 - ab;
        let k = |m: f64| (-(m * m) / (2.0 * v)).exp() / (2.0 * std::f64::consts::PI * v).sqrt();
        let expected = (0.5 * k(ab.sqrt()) + 0.5 * k(-ab.sqrt())).ln();
        let got = t.smoothed_log_density(ab, &[0.0]).unwrap();
        assert!((got - expected).abs() < 1e-14);
    }

    #[test]
    fn far_queries_stay_finite() {
        let t = two_atoms();
        let v = t.smoothed_log_density(1.0 - 1e-12, &[1e6]).unwrap();
        assert!(v.is_finite());
        let p = t.posterior(1.0 - 1e-12, &[1e6]).unwrap();
        assert!(p.weights.iter().all(|w| w.is_finite()));
        assert!(p.is_degenerate());
    }

    #[test]
    fn rejects_bad_arguments() {
        let t = two_atoms();
        assert!(t.smoothed_log_density(1.0, &[0.0]).is_err());
        assert!(t.smoothed_log_density(0.0, &[0.0]).is_err());
        assert!(t.posterior(0.5, &[f64::NAN]).is_err());
        assert!(t.posterior(0.5, &[0.0, 1.0]).is_err());
    }

    #[test]
    fn posterior_examples() {
        let single: Target = AtomicTarget::point_mass(vec![3.0]).unwrap().into();
        assert_eq!(single.posterior(0.4, &[7.0]).unwrap().weights, vec![1.0]);
        assert_eq!(single.posterior_mean_x0(0.4, &[-2.0]).unwrap(), vec![3.0]);

        let t = two_atoms();
        let p = t.posterior(0.5, &[0.0]).unwrap();
        assert!((p.weights[0] - 0.5).abs() < 1e-15);
        assert_eq!(t.posterior_mean_x0(0.5, &[0.0]).unwrap(), vec![0.0]);

        let p = t.posterior(1.0 - 1e-6, &[1.0]).unwrap();
        assert!(p.weights[1] > 1.0 - 1e-12);
    }

    #[test]
    fn normalization_by_quadrature() {
        let targets: Vec<Target> = vec![
            two_atoms(),
            AtomicTarget::new(
                vec![vec![-2.0], vec![0.5], vec![1.5]],
                vec![0.2, 0.5, 0.3],
                2.0,
            )
            .unwrap()
            .into(),
            GaussianMixtureTarget::new(
                vec![vec![-1.0], vec![2.0]],
                vec![0.25, 1.5],
                vec![0.4, 0.6],
                None,
            )
            .unwrap()
            .into(),
        ];
        for t in &targets {
            for ab in [0.05, 0.5, 0.95] {
                // +-8 standard deviations beyond the extreme components
                let sd = (0..t.n_components())
                    .map(|i| (ab * t.component_variance(i) + 1.0 - ab).sqrt())
                    .fold(0.0, f64::max);
                let lo = -t.radius().max(2.0) * ab.sqrt() - 8.0 * sd;
                let hi = -lo;
                let n = 20_000;
                let h = (hi - lo) / n as f64;
                // composite Simpson
                let mut acc = 0.0;
                for i in 0..=n {
                    let x = lo + i as f64 * h;
                    let f = t.smoothed_log_density(ab, &[x]).unwrap().exp();
                    let c = if i == 0 || i == n {
                        1.0
                    } else if i % 2 == 1 {
                        4.0
                    } else {
                        2.0
                    };
                    acc += c * f;
                }
                let integral = acc * h / 3.0;
                assert!((integral - 1.0).abs() < 1e-6, "ab={ab}: {integral}");
            }
        }
    }

    #[test]
    fn posterior_weights_normalized_everywhere() {
        let t: Target = AtomicTarget::new(
            vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![-1.0, -1.0]],
            vec![0.2, 0.3, 0.5],
            2.0,
        )
        .unwrap()
        .into();
        let mut r = rng::stream(9, 0);
        for _ in 0..10_000 {
            let ab: f64 = r.random_range(1e-6..1.0 - 1e-9);
            let x = [10.0 * rng::normal(&mut r), 10.0 * rng::normal(&mut r)];
            let p = t.posterior(ab, &x).unwrap();
            let s: f64 = p.weights.iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
            // posterior mean is the weighted atom average
            let m = p.mean_x0();
            for (j, mj) in m.iter().enumerate() {
                let direct: f64 = (0..3).map(|i| p.weights[i] * t.center(i)[j]).sum();
                assert!((mj - direct).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn clt_mean_of_symmetric_atoms() {
        let t = two_atoms();
        let n = 1_000_000;
        let s = t.sample_x0(n, &mut rng::stream(3, 0));
        assert!(s.mean()[0].abs() < 3e-3);
    }

    #[test]
    fn gaussian_sample_mean() {
        let mu = vec![1.0, -2.0, 0.5];
        let t: Target = GaussianMixtureTarget::single(mu.clone(), 1.0)
            .unwrap()
            .into();
        let n = 100_000;
        let s = t.sample_x0(n, &mut rng::stream(4, 0));
        let m = s.mean();
        let err: f64 = m
            .iter()
            .zip(&mu)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt();
        assert!(err < 3.0 * (3.0 / n as f64).sqrt());
    }

    #[test]
    fn gaussian_posterior_mean_matches_conditional_monte_carlo() {
        // E[X0 | X(ab) in a thin shell around x] by rejection, compared with
        // the conjugate closed form.
        let mu = 0.7;
        let t: Target = GaussianMixtureTarget::single(vec![mu], 1.0).unwrap().into();
        let ab: f64 = 0.6;
        let x = 0.9;
        let mut r = rng::stream(5, 0);
        let (mut sum, mut cnt) = (0.0, 0usize);
        let n = 1_000_000;
        let draws = t.sample_x0(n, &mut r);
        let mut z = vec![0.0; n];
        rng::fill_normal(&mut r, &mut z);
        for (x0, z) in draws.as_slice().iter().zip(&z) {
            let xt = ab.sqrt() * x0 + (1.0 - ab).sqrt() * z;
            if (xt - x).abs() < 0.01 {
                sum += x0;
                cnt += 1;
            }
        }
        let mc = sum / cnt as f64;
        let exact = t.posterior_mean_x0(ab, &[x]).unwrap()[0];
        // conjugacy: mu + sqrt(ab) (x - sqrt(ab) mu) for unit variance
        assert!((exact - (mu + ab.sqrt() * (x - ab.sqrt() * mu))).abs() < 1e-14);
        assert!(
            (mc - exact).abs() / exact.abs() < 0.01,
            "mc {mc} exact {exact}"
        );
    }

    #[test]
    fn parse_target_files() {
        let t = Target::parse("kind = \"atomic\"\natoms = [[1.0, 0.0], [-1.0, 0.0]]\n").unwrap();
        assert_eq!(t.dim(), 2);
        assert_eq!(t.weights(), &[0.5, 0.5]);
        assert_eq!(t.radius(), 1.0);
        let m = Target::parse(
            "kind = \"gaussian_mixture\"\nmeans = [[0.0]]\nvariances = [2.0]\nradius = 5.0\n",
        )
        .unwrap();
        assert!(!m.is_atomic());
        assert!(matches!(m.boundedness(), Boundedness::Approximate { .. }));
        let err = Target::parse("kind = \"atomic\"\natoms = [[1.0]]\nbogus = 1\n").unwrap_err();
        assert!(err.to_string().contains("bogus"), "{err}");
    }
}
