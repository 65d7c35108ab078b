//! Forward diffusion marginals and the two `(X_t, X_{t-1})` couplings.
//!
//! The shared-noise coupling plugs one `(X0, Z)` draw into both marginal
//! formulas; this is the coupling of the consistency-training objective.
//! The Markov coupling runs one step of the forward chain from a draw of
//! `X_{t-1}`. Both have the same `t`-marginal but different conditional laws
//! of `X_{t-1}` given `X_t`.

use rand::Rng;

use crate::error::Result;
use crate::rng;
use crate::sample::EmpiricalSample;
use crate::schedule::Schedule;
use crate::targets::Target;

#[derive(Debug, Clone, PartialEq)]
pub struct CoupledPair {
    pub x_t: Vec<f64>,
    pub x_tm1: Vec<f64>,
    pub x0: Vec<f64>,
    /// Shared Gaussian draw (shared-noise) or the fresh innovation (Markov).
    pub z: Vec<f64>,
}

/// `n` draws of `sqrt(ab) X0 + sqrt(1 - ab) Z` for an arbitrary `ab` in (0, 1].
pub fn sample_at_alpha_bar<R: Rng + ?Sized>(
    target: &Target,
    alpha_bar: f64,
    n: usize,
    rng: &mut R,
) -> EmpiricalSample {
    let d = target.dim();
    let x0 = target.sample_x0(n, rng);
    let (a, b) = (alpha_bar.sqrt(), (1.0 - alpha_bar).max(0.0).sqrt());
    let data = x0
        .as_slice()
        .iter()
        .map(|v| a * v + b * rng::normal(rng))
        .collect();
    EmpiricalSample::from_raw(d, data)
}

/// I.i.d. draws of `X_t`.
pub fn sample_marginal<R: Rng + ?Sized>(
    target: &Target,
    schedule: &Schedule,
    t: usize,
    n: usize,
    rng: &mut R,
) -> Result<EmpiricalSample> {
    schedule.check_index(t, 1)?;
    Ok(sample_at_alpha_bar(target, schedule.alpha_bar(t), n, rng))
}

/// Pairs sharing `(X0, Z)` across indices `t - 1` and `t`.
pub fn sample_shared_noise_pair<R: Rng + ?Sized>(
    target: &Target,
    schedule: &Schedule,
    t: usize,
    n: usize,
    rng: &mut R,
) -> Result<Vec<CoupledPair>> {
    schedule.check_index(t, 2)?;
    let d = target.dim();
    let (ab_t, ab_p) = (schedule.alpha_bar(t), schedule.alpha_bar(t - 1));
    let (st, nt) = (ab_t.sqrt(), (1.0 - ab_t).sqrt());
    let (sp, np) = (ab_p.sqrt(), (1.0 - ab_p).sqrt());
    let x0s = target.sample_x0(n, rng);
    let mut out = Vec::with_capacity(n);
    for x0 in x0s.rows() {
        let mut z = vec![0.0; d];
        rng::fill_normal(rng, &mut z);
        let x_t = x0.iter().zip(&z).map(|(a, e)| st * a + nt * e).collect();
        let x_tm1 = x0.iter().zip(&z).map(|(a, e)| sp * a + np * e).collect();
        out.push(CoupledPair {
            x_t,
            x_tm1,
            x0: x0.to_vec(),
            z,
        });
    }
    Ok(out)
}

/// `X_{t-1}` from the marginal, then `X_t = sqrt(a_t) X_{t-1} + sqrt(b_t) W`.
pub fn sample_markov_pair<R: Rng + ?Sized>(
    target: &Target,
    schedule: &Schedule,
    t: usize,
    n: usize,
    rng: &mut R,
) -> Result<Vec<CoupledPair>> {
    schedule.check_index(t, 2)?;
    let d = target.dim();
    let ab_p = schedule.alpha_bar(t - 1);
    let (sp, np) = (ab_p.sqrt(), (1.0 - ab_p).sqrt());
    let (sa, sb) = (schedule.alpha(t).sqrt(), schedule.beta(t).sqrt());
    let x0s = target.sample_x0(n, rng);
    let mut out = Vec::with_capacity(n);
    for x0 in x0s.rows() {
        let x_tm1: Vec<f64> = x0.iter().map(|a| sp * a + np * rng::normal(rng)).collect();
        let mut w = vec![0.0; d];
        rng::fill_normal(rng, &mut w);
        let x_t = x_tm1.iter().zip(&w).map(|(p, e)| sa * p + sb * e).collect();
        out.push(CoupledPair {
            x_t,
            x_tm1,
            x0: x0.to_vec(),
            z: w,
        });
    }
    Ok(out)
}

/// Collect one side of a batch of pairs.
pub fn pair_side(pairs: &[CoupledPair], dim: usize, current: bool) -> EmpiricalSample {
    let mut data = Vec::with_capacity(pairs.len() * dim);
    for p in pairs {
        data.extend_from_slice(if current { &p.x_t } else { &p.x_tm1 });
    }
    EmpiricalSample::from_raw(dim, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::targets::AtomicTarget;

    fn point_mass(d: usize) -> Target {
        AtomicTarget::point_mass(vec![0.0; d]).unwrap().into()
    }

    #[test]
    fn point_mass_marginal_variance() {
        let s = Schedule::new(100, 2.0, 4.0).unwrap();
        let t = point_mass(2);
        for idx in [2, 50, 100] {
            let x = sample_marginal(&t, &s, idx, 100_000, &mut rng::stream(1, idx as u64)).unwrap();
            let target_var = 1.0 - s.alpha_bar(idx);
            for v in x.variance() {
                assert!((v / target_var - 1.0).abs() < 0.05);
            }
        }
    }

    #[test]
    fn terminal_mean_is_small() {
        let s = Schedule::new(100, 2.0, 4.0).unwrap();
        let t: Target = AtomicTarget::uniform(vec![vec![1.0, 1.0], vec![1.0, -1.0]])
            .unwrap()
            .into();
        let n = 50_000;
        let x = sample_marginal(&t, &s, 100, n, &mut rng::stream(2, 0)).unwrap();
        let m = x.mean();
        let norm = (m[0] * m[0] + m[1] * m[1]).sqrt();
        let bound = s.alpha_bar(100).sqrt() * t.radius() + 3.0 * (2.0 / n as f64).sqrt();
        assert!(norm <= bound);
    }

    #[test]
    fn no_noise_limit_reproduces_data() {
        let s = Schedule::new(10, 30.0, 0.5).unwrap();
        let t: Target = AtomicTarget::uniform(vec![vec![2.0], vec![-2.0]])
            .unwrap()
            .into();
        let x = sample_marginal(&t, &s, 1, 100, &mut rng::stream(3, 0)).unwrap();
        for v in x.as_slice() {
            assert!((v.abs() - 2.0).abs() < 1e-9);
        }
    }

    #[test]
    fn index_checks() {
        let s = Schedule::new(10, 2.0, 1.0).unwrap();
        let t = point_mass(1);
        let mut r = rng::stream(0, 0);
        assert!(sample_marginal(&t, &s, 0, 1, &mut r).is_err());
        assert!(sample_marginal(&t, &s, 11, 1, &mut r).is_err());
        assert!(sample_shared_noise_pair(&t, &s, 1, 1, &mut r).is_err());
        assert!(sample_markov_pair(&t, &s, 11, 1, &mut r).is_err());
        assert!(sample_shared_noise_pair(&t, &s, 2, 0, &mut r)
            .unwrap()
            .is_empty());
    }

    #[test]
    fn shared_noise_point_mass_is_a_rescaling() {
        let s = Schedule::new(50, 2.0, 2.0).unwrap();
        let t = point_mass(3);
        let idx = 20;
        let ratio = ((1.0 - s.alpha_bar(idx - 1)) / (1.0 - s.alpha_bar(idx))).sqrt();
        for p in sample_shared_noise_pair(&t, &s, idx, 100, &mut rng::stream(4, 0)).unwrap() {
            for (a, b) in p.x_tm1.iter().zip(&p.x_t) {
                assert!((a - ratio * b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn shared_noise_z_is_recoverable() {
        let s = Schedule::new(50, 2.0, 2.0).unwrap();
        let t: Target = AtomicTarget::uniform(vec![vec![1.0, 0.5], vec![-0.3, 2.0]])
            .unwrap()
            .into();
        let idx = 7;
        let ab = s.alpha_bar(idx);
        for p in sample_shared_noise_pair(&t, &s, idx, 200, &mut rng::stream(5, 0)).unwrap() {
            for j in 0..2 {
                let z = (p.x_t[j] - ab.sqrt() * p.x0[j]) / (1.0 - ab).sqrt();
                assert!((z - p.z[j]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn markov_pair_conditional_variance() {
        let s = Schedule::new(100, 2.0, 4.0).unwrap();
        let t = point_mass(1);
        let idx = 60;
        let pairs = sample_markov_pair(&t, &s, idx, 100_000, &mut rng::stream(6, 0)).unwrap();
        let sa = s.alpha(idx).sqrt();
        let resid: Vec<f64> = pairs.iter().map(|p| p.x_t[0] - sa * p.x_tm1[0]).collect();
        let var = resid.iter().map(|r| r * r).sum::<f64>() / resid.len() as f64;
        assert!((var / s.beta(idx) - 1.0).abs() < 0.05);
    }

    #[test]
    fn deterministic_given_seed() {
        let s = Schedule::new(20, 2.0, 1.0).unwrap();
        let t: Target = AtomicTarget::uniform(vec![vec![1.0], vec![-1.0]])
            .unwrap()
            .into();
        let a = sample_markov_pair(&t, &s, 5, 10, &mut rng::stream(8, 1)).unwrap();
        let b = sample_markov_pair(&t, &s, 5, 10, &mut rng::stream(8, 1)).unwrap();
        assert_eq!(a, b);
    }
}
