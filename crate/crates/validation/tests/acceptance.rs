//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero when any criterion fails. Tolerances are pinned below.

use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rand::Rng;

use ict_core::consistency::{estimation_error, train_stack, RegressorSpec};
use ict_core::forward::sample_marginal;
use ict_core::harness::scaling::Estimator;
use ict_core::harness::{run_scaling, ExperimentConfig};
use ict_core::pf_ode::{flow, FlowConfig};
use ict_core::rng::{self, StreamRng};
use ict_core::schedule::verify_schedule_properties;
use ict_core::targets::{AtomicTarget, GaussianMixtureTarget};
use ict_core::theory_check::{
    check_conditional_mean, check_jacobian_identity, check_marginal_preservation,
    check_score_jacobian, check_score_moment, check_score_oracle, MarginalCheckConfig,
};
use ict_core::transport::{sliced_w1, w1_assignment, w1_exact_1d};
use ict_core::{EmpiricalSample, Schedule, Target};

const SCHEDULE_BUDGET: Duration = Duration::from_secs(1);
const SCORE_MC_DRAWS: usize = 1_000_000;
const POINT_MASS_MOMENT_REL: f64 = 0.02;
const FLOW_ENDPOINT_TOL: f64 = 1e-8;
const RK4_CONTRACTION: (f64, f64) = (12.0, 20.0);
const SEMIGROUP_TOL: f64 = 1e-8;
const MARGINAL_BUDGET: Duration = Duration::from_secs(120);
const ASSIGNMENT_MATCH_TOL: f64 = 1e-12;
const GAUSSIAN_STACK_TOL: f64 = 1e-6;
const LINEAR_EPSILON_TOL: f64 = 1e-3;
const EXACT_EPSILON_TOL: f64 = 1e-12;
const SLOPE_BAND: (f64, f64) = (-1.5, -0.3);
const SCALING_BUDGET: Duration = Duration::from_secs(30 * 60);

type Criterion = (&'static str, fn() -> Outcome);

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        passed,
        detail: detail.into(),
    }
}

fn random_atomic(r: &mut StreamRng) -> Target {
    let d = r.random_range(1..=3usize);
    let n = r.random_range(1..=4usize);
    let atoms: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..d).map(|_| r.random_range(-2.0..2.0)).collect())
        .collect();
    let w: Vec<f64> = (0..n).map(|_| r.random_range(0.1..1.0)).collect();
    let total: f64 = w.iter().sum();
    AtomicTarget::new(
        atoms,
        w.iter().map(|v| v / total).collect(),
        2.0 * (d as f64).sqrt(),
    )
    .unwrap()
    .into()
}

fn two_atoms() -> Target {
    AtomicTarget::uniform(vec![vec![1.6, 1.2], vec![-1.6, -1.2]])
        .unwrap()
        .into()
}

fn gaussian() -> (Target, Vec<f64>) {
    let mu = vec![1.0, -0.5];
    (
        GaussianMixtureTarget::single(mu.clone(), 1.0)
            .unwrap()
            .into(),
        mu,
    )
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut failed = Vec::new();
    for steps in [100, 1_000, 10_000] {
        let s = Schedule::new(steps, 2.0, 4.0).unwrap();
        let report = verify_schedule_properties(&s, 2.0);
        if !report.passed() {
            failed.push(report.summary());
        }
    }
    let elapsed = start.elapsed();
    outcome(
        failed.is_empty() && elapsed < SCHEDULE_BUDGET,
        format!(
            "T in {{1e2, 1e3, 1e4}}, {} failing, {:.3} s",
            failed.len(),
            elapsed.as_secs_f64()
        ),
    )
}

fn criterion_2() -> Outcome {
    let mut r = rng::stream(2, 0);
    let (mut worst_z, mut worst_fd, mut worst_sym) = (0.0f64, 0.0f64, 0.0f64);
    let mut passed = true;
    for _ in 0..50 {
        let target = random_atomic(&mut r);
        let ab: f64 = r.random_range(0.02..0.98);
        let x0 = target.sample_x0(1, &mut r);
        let x: Vec<f64> = x0
            .row(0)
            .iter()
            .map(|v| ab.sqrt() * v + (1.0 - ab).sqrt() * rng::normal(&mut r))
            .collect();
        let q = vec![(ab, x)];
        let mc = check_score_oracle(&target, &q, SCORE_MC_DRAWS, &mut r).unwrap();
        let jac = check_score_jacobian(&target, &q).unwrap();
        passed &= mc.rows.iter().all(|row| row.passed == Some(true)) && jac.passed();
        worst_z = worst_z.max(mc.rows[0].lhs);
        worst_fd = worst_fd.max(jac.rows[0].lhs);
        worst_sym = worst_sym.max(jac.rows[1].lhs);
    }
    outcome(
        passed,
        format!(
            "50 configs, N = 1e6: max deviation {worst_z:.2} SE (< 3), Jacobian rel. err {worst_fd:.2e} (< 1e-4), asymmetry {worst_sym:.1e} (< 1e-8)"
        ),
    )
}

fn criterion_3() -> Outcome {
    let mut r = rng::stream(3, 0);
    let s = Schedule::new(64, 2.0, 4.0).unwrap();
    let (mut worst, mut points, mut passed) = (0.0f64, 0, true);
    for _ in 0..10 {
        let target = random_atomic(&mut r);
        for _ in 0..4 {
            let t = r.random_range(1..=64);
            let pts = sample_marginal(&target, &s, t, 25, &mut r).unwrap();
            let rep = check_jacobian_identity(&target, &s, t, &pts).unwrap();
            passed &= rep.passed();
            worst = rep.rows.iter().map(|row| row.lhs).fold(worst, f64::max);
            points += pts.len();
        }
    }
    outcome(
        passed,
        format!("{points} points over 10 targets, max deviation {worst:.2e} (< 1e-8)"),
    )
}

fn criterion_4() -> Outcome {
    let mut r = rng::stream(4, 0);
    let s = Schedule::new(100, 2.0, 4.0).unwrap();
    let t_list: Vec<usize> = (1..=10).map(|i| i * 10).collect();
    let (mut configs, mut failing) = (0, 0);
    for _ in 0..20 {
        let target = random_atomic(&mut r);
        let rep = check_score_moment(&target, &s, &t_list, 20_000, &mut r).unwrap();
        configs += rep.rows.len();
        failing += rep.failing_rows().count();
    }
    let pm: Target = AtomicTarget::point_mass(vec![0.3, -0.7]).unwrap().into();
    let rep = check_score_moment(&pm, &s, &[2, 50, 100], 100_000, &mut r).unwrap();
    let worst_ratio = rep
        .rows
        .iter()
        .map(|row| (row.lhs / (2.0 / (1.0 - s.alpha_bar(row.t.unwrap()))) - 1.0).abs())
        .fold(0.0, f64::max);
    outcome(
        failing == 0 && rep.passed() && worst_ratio < POINT_MASS_MOMENT_REL,
        format!("{configs} configs, {failing} failing (5 SE slack); point-mass equality off by {:.2}% (< 2%)", 100.0 * worst_ratio),
    )
}

fn criterion_5() -> Outcome {
    let mut r = rng::stream(5, 0);
    let s = Schedule::new(64, 2.0, 4.0).unwrap();
    let all_t: Vec<usize> = (2..=64).collect();
    let (mut worst, mut points, mut passed) = (0.0f64, 0, true);
    for _ in 0..5 {
        let target = random_atomic(&mut r);
        let t = r.random_range(1..=64);
        let pts = sample_marginal(&target, &s, t, 200, &mut r).unwrap();
        let rep = check_conditional_mean(&target, &s, &all_t, &pts).unwrap();
        passed &= rep.passed();
        worst = rep.rows.iter().map(|row| row.lhs).fold(worst, f64::max);
        points += pts.len();
    }
    outcome(
        passed,
        format!("{points} points, t = 2..64, max deviation {worst:.2e} (< 1e-8)"),
    )
}

fn criterion_6() -> Outcome {
    let s = Schedule::new(1000, 2.0, 4.0).unwrap();
    let cfg = FlowConfig::rk4(8);
    let mut r = rng::stream(6, 0);
    let a = [0.7, -0.4];
    let pm: Target = AtomicTarget::point_mass(a.to_vec()).unwrap().into();
    let (g, mu) = gaussian();
    let mut endpoint: f64 = 0.0;
    for _ in 0..20 {
        let x = [2.0 * rng::normal(&mut r), 2.0 * rng::normal(&mut r)];
        for (t, k) in [(1000, 1), (1000, 500), (300, 1)] {
            let (abt, abk) = (s.alpha_bar(t), s.alpha_bar(k));
            let c = ((1.0 - abk) / (1.0 - abt)).sqrt();
            let want: Vec<f64> = (0..2)
                .map(|j| abk.sqrt() * a[j] + c * (x[j] - abt.sqrt() * a[j]))
                .collect();
            endpoint = endpoint.max(max_abs_diff(&flow(&pm, &s, t, k, &x, &cfg).unwrap(), &want));
            let want: Vec<f64> = (0..2)
                .map(|j| x[j] + mu[j] * (abk.sqrt() - abt.sqrt()))
                .collect();
            endpoint = endpoint.max(max_abs_diff(&flow(&g, &s, t, k, &x, &cfg).unwrap(), &want));
        }
    }

    // error ratio per substep doubling on a coarse schedule
    let coarse = Schedule::new(100, 2.0, 4.0).unwrap();
    let x = [0.3, -0.1];
    let shift = coarse.alpha_bar(1).sqrt() - coarse.alpha_bar(100).sqrt();
    let err = |n| {
        let y = flow(&g, &coarse, 100, 1, &x, &FlowConfig::rk4(n)).unwrap();
        (0..2)
            .map(|j| (y[j] - x[j] - mu[j] * shift).abs())
            .fold(0.0, f64::max)
    };
    let contraction = err(4) / err(8);

    let target = two_atoms();
    let s64 = Schedule::new(64, 2.0, 4.0).unwrap();
    let mut semigroup: f64 = 0.0;
    for _ in 0..50 {
        let x = sample_marginal(&target, &s64, 64, 1, &mut r).unwrap();
        let direct = flow(&target, &s64, 64, 1, x.row(0), &cfg).unwrap();
        let mid = flow(&target, &s64, 64, 20, x.row(0), &cfg).unwrap();
        let composed = flow(&target, &s64, 20, 1, &mid, &cfg).unwrap();
        semigroup = semigroup.max(max_abs_diff(&direct, &composed));
    }
    outcome(
        endpoint < FLOW_ENDPOINT_TOL
            && (RK4_CONTRACTION.0..=RK4_CONTRACTION.1).contains(&contraction)
            && semigroup < SEMIGROUP_TOL,
        format!(
            "rk4x8 endpoint error {endpoint:.2e} (< 1e-8, T = 1000), contraction {contraction:.2} (16 +- 4), semigroup {semigroup:.2e} (< 1e-8)"
        ),
    )
}

fn criterion_7() -> Outcome {
    let start = Instant::now();
    let s = Schedule::new(64, 2.0, 4.0).unwrap();
    let check = MarginalCheckConfig {
        n_projections: 256,
        floor_factor: 2.0,
    };
    let rep = check_marginal_preservation(
        &two_atoms(),
        &s,
        &[(64, 1)],
        10_000,
        &FlowConfig::rk4(32),
        &check,
        &mut rng::stream(7, 0),
    )
    .unwrap();
    let elapsed = start.elapsed();
    let row = &rep.rows[0];
    outcome(
        rep.passed() && elapsed < MARGINAL_BUDGET,
        format!(
            "sliced W1 {:.5} vs 2 x floor {:.5} at n = 1e4, rk4x32, {:.1} s (< 120 s)",
            row.lhs,
            row.rhs,
            elapsed.as_secs_f64()
        ),
    )
}

fn criterion_8() -> Outcome {
    let mut r = rng::stream(8, 0);
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let n = r.random_range(1..=128usize);
        let a: Vec<f64> = (0..n).map(|_| r.random_range(-3.0..3.0)).collect();
        let b: Vec<f64> = (0..n).map(|_| 0.5 + 2.0 * rng::normal(&mut r)).collect();
        let (a, b) = (
            EmpiricalSample::new(1, a).unwrap(),
            EmpiricalSample::new(1, b).unwrap(),
        );
        worst = worst.max((w1_exact_1d(&a, &b).unwrap() - w1_assignment(&a, &b).unwrap()).abs());
    }
    let n = 4000;
    let mut data = vec![0.0; 2 * n];
    rng::fill_normal(&mut r, &mut data);
    let a = EmpiricalSample::new(2, data).unwrap();
    let v = [0.9, -1.2];
    let b = EmpiricalSample::new(
        2,
        a.rows().flat_map(|p| [p[0] + v[0], p[1] + v[1]]).collect(),
    )
    .unwrap();
    let s = sliced_w1(&a, &b, 512, &mut r).unwrap();
    let want = 2.0 * (v[0] * v[0] + v[1] * v[1]).sqrt() / std::f64::consts::PI;
    let z = (s.mean - want).abs() / s.std_error;
    outcome(
        worst <= ASSIGNMENT_MATCH_TOL && z <= 3.0,
        format!("1-D vs assignment max diff {worst:.1e} (<= 1e-12, 200 instances); translated cloud {:.5} vs 2|v|/pi = {want:.5}, {z:.2} SE", s.mean),
    )
}

fn criterion_9() -> Outcome {
    let (g, mu) = gaussian();
    let s100 = Schedule::new(100, 2.0, 4.0).unwrap();
    let exact = train_stack(
        &g,
        &s100,
        &RegressorSpec::exact_oracle(),
        &mut rng::stream(9, 0),
    )
    .unwrap();
    let shift = s100.alpha_bar(1).sqrt() - s100.alpha_bar(100).sqrt();
    let mut r = rng::stream(9, 1);
    let mut closed_form: f64 = 0.0;
    for _ in 0..200 {
        let x = [2.0 * rng::normal(&mut r), 2.0 * rng::normal(&mut r)];
        let want: Vec<f64> = (0..2).map(|j| x[j] + mu[j] * shift).collect();
        closed_form = closed_form.max(max_abs_diff(&exact.evaluate(&x).unwrap(), &want));
    }

    let s64 = Schedule::new(64, 2.0, 4.0).unwrap();
    let linear = train_stack(
        &g,
        &s64,
        &RegressorSpec::linear(100_000, 0.0),
        &mut rng::stream(9, 2),
    )
    .unwrap();
    let lin = estimation_error(&linear, &g, 2_000, &mut rng::stream(9, 3)).unwrap();
    let lin_max_step = lin
        .per_step
        .iter()
        .map(|e| e.mean_distance)
        .fold(0.0, f64::max);

    let mut exact_eps: f64 = 0.0;
    for target in [
        g.clone(),
        AtomicTarget::point_mass(vec![0.7, -0.4]).unwrap().into(),
    ] {
        let stack = train_stack(
            &target,
            &s64,
            &RegressorSpec::exact_oracle(),
            &mut rng::stream(9, 4),
        )
        .unwrap();
        let e = estimation_error(&stack, &target, 500, &mut rng::stream(9, 5)).unwrap();
        exact_eps = exact_eps.max(e.aggregate);
    }

    let parts = [
        closed_form <= GAUSSIAN_STACK_TOL,
        lin.aggregate < LINEAR_EPSILON_TOL,
        exact_eps <= EXACT_EPSILON_TOL,
    ];
    let mark = |ok: bool| if ok { "ok" } else { "MISS" };
    outcome(
        parts.iter().all(|&p| p),
        format!(
            "exact stack vs x + mu (sqrt(ab_1) - sqrt(ab_T)) max dev {closed_form:.2e} (<= 1e-6) {}; \
             linear eps_hat {:.2e} at batch 1e5 (< 1e-3; largest single step {lin_max_step:.2e}) {}; \
             exact-oracle eps_hat {exact_eps:.1e} (<= 1e-12) {}",
            mark(parts[0]),
            lin.aggregate,
            mark(parts[1]),
            mark(parts[2])
        ),
    )
}

fn config_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/configs")
}

fn criterion_10() -> Outcome {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ExperimentConfig::load(&config_dir().join("scaling.toml")).unwrap();
    cfg.out = dir.path().to_path_buf();
    let out = run_scaling(&cfg).unwrap();
    let elapsed = start.elapsed();
    let mut passed = elapsed < SCALING_BUDGET;
    let mut detail = Vec::new();
    for est in [Estimator::Sliced, Estimator::Assignment] {
        match out.fit(est) {
            Some(f) => {
                passed &= f.decreasing
                    && f.rows_excluded == 0
                    && (SLOPE_BAND.0..=SLOPE_BAND.1).contains(&f.slope);
                detail.push(
                    format!(
                        "{est} slope {:.3} [{}], {}",
                        f.slope,
                        if f.decreasing {
                            "strictly decreasing"
                        } else {
                            "not monotone"
                        },
                        f.rows_used
                    ) + " rows",
                );
            }
            None => {
                passed = false;
                detail.push(format!("{est}: no fit"));
            }
        }
    }
    outcome(
        passed,
        format!(
            "T = 16..128, n = 2e4: {}; band [-1.5, -0.3]; {:.1} s",
            detail.join("; "),
            elapsed.as_secs_f64()
        ),
    )
}

fn csv_files(root: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if p.extension().is_some_and(|x| x == "csv") {
                out.push(p.strip_prefix(root).unwrap().to_path_buf());
            }
        }
    }
    out.sort();
    out
}

fn criterion_11() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    std::fs::write(
        &cfg,
        format!(
            "target = \"{}\"\nsteps = 32\nsteps_list = [32, 64, 128]\nn_samples = 2000\nn_eval = 50\n\
             lipschitz_points = 4\nscore_queries = 10\nscore_mc_samples = 20000\nidentity_points = 20\n\
             moment_samples = 2000\nmarginal_samples = 500\nshape_points = 8\nevent_samples = 2000\n",
            config_dir().join("../targets/two_atoms_2d.toml").display()
        ),
    )
    .unwrap();
    let cfg = cfg.to_str().unwrap().to_owned();
    let run = |name: &str, workers: &str| -> PathBuf {
        let out = dir.path().join(name);
        let o = out.to_str().unwrap();
        for cmd in ["schedule", "verify", "train", "sample", "scaling"] {
            let code = ict_core::cli::run([
                "ict",
                cmd,
                "--config",
                &cfg,
                "--seed",
                "11",
                "--out",
                o,
                "--workers",
                workers,
            ]);
            assert_eq!(code, 0, "{cmd} exited with {code}");
        }
        out
    };
    let (a, b) = (run("a", "1"), run("b", "3"));
    let (fa, fb) = (csv_files(&a), csv_files(&b));
    let mut differing = Vec::new();
    for f in &fa {
        if std::fs::read(a.join(f)).unwrap() != std::fs::read(b.join(f)).unwrap_or_default() {
            differing.push(f.display().to_string());
        }
    }
    outcome(
        fa == fb && differing.is_empty() && fa.len() >= 8,
        format!(
            "{} CSV files from schedule, verify, train, sample, scaling (1 vs 3 workers), {} differing {:?}",
            fa.len(),
            differing.len(),
            differing
        ),
    )
}

fn main() {
    let criteria: [Criterion; 11] = [
        ("schedule properties", criterion_1),
        ("score oracle", criterion_2),
        ("jacobian identity", criterion_3),
        ("score second moment", criterion_4),
        ("conditional mean identity", criterion_5),
        ("flow correctness", criterion_6),
        ("marginal preservation", criterion_7),
        ("transport cross-oracle", criterion_8),
        ("consistency training", criterion_9),
        ("scaling trend", criterion_10),
        ("determinism", criterion_11),
    ];
    let mut failures = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let o = run();
        if !o.passed {
            failures += 1;
        }
        println!(
            "criterion {:>2} {} {name}: {}",
            i + 1,
            if o.passed { "PASS" } else { "FAIL" },
            o.detail
        );
    }
    println!("acceptance: {} of 11 criteria pass", 11 - failures);
    if failures > 0 {
        std::process::exit(1);
    }
}
