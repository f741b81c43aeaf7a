//! Acceptance suite: one test per release criterion, each printing a
//! `acceptance N (<name>): PASS` line on success (visible with
//! `cargo test --test acceptance -- --nocapture`). Tolerances are pinned
//! here, not configurable.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::time::Instant;

use grassopt::config::{parse_config, OptimizerSpec, OracleSpec};
use grassopt::error::Error;
use grassopt::evaluate::{auc, fd_gradient_check, fukunaga_koontz};
use grassopt::experiment::{
    cmd_covtable, cmd_evaluate, cmd_optimize, cmd_ratecheck, cmd_simulate, derive_seed,
    shared_test_scores, true_class_stats,
};
use grassopt::grassmann::{
    exp_map, project_tangent, random_point, random_tangent, subspace_distance,
};
use grassopt::objective::{
    jeffreys, ClassStats, NegJeffreys, Objective, ObjectiveConfig, RayleighObjective,
};
use grassopt::optimizer::{run_fixed_step, run_line_search, FixedStepConfig, LineSearchConfig, StepRule};
use grassopt::oracle::{GradientOracle, OracleKind};
use grassopt::simulate::{sample_covariance, sample_images, ClassId, GridSpec};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use tempfile::tempdir;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_spd(n: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let b = DMatrix::<f64>::from_fn(n, n, |_, _| rng.sample(StandardNormal));
    &b * b.transpose() / n as f64 + DMatrix::identity(n, n) * 0.5
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    v[v.len() / 2]
}

#[test]
fn acceptance_01_geometry_suite() {
    let started = Instant::now();
    let mut r = rng(0xACC1);
    for trial in 0..1000 {
        let n = 3 + (r.random::<u32>() % 30) as usize; // 3..=32
        let p = 1 + (r.random::<u32>() % 5) as usize; // 1..=5
        let p = p.min(n - 1);
        let x = random_point(n, p, &mut r).unwrap();
        assert!(x.orthonormality_residual() <= 1e-10);

        let g = DMatrix::<f64>::from_fn(n, p, |_, _| r.sample(StandardNormal));
        let once = project_tangent(&x, &g).unwrap();
        let twice = project_tangent(&x, once.mat()).unwrap();
        assert!(once.tangency_residual() <= 1e-10, "tangency at trial {trial}");
        assert!(
            (once.mat() - twice.mat()).norm() <= 1e-10,
            "idempotence at trial {trial}"
        );

        let v = random_tangent(&x, &mut r);
        let t: f64 = r.random::<f64>() * 4.0 - 2.0;
        let y = exp_map(&x, &v, t).unwrap();
        assert!(
            y.orthonormality_residual() <= 1e-10,
            "orthonormality at trial {trial}"
        );

        if let Some(unit) = v.normalized() {
            let t_small = 1e-4;
            let z = exp_map(&x, &unit, t_small).unwrap();
            let d = subspace_distance(&x, &z).unwrap();
            assert!(
                (d - t_small).abs() <= 1e-4 * t_small,
                "small-step distance {d} vs {t_small} at trial {trial}"
            );
        }
    }
    let elapsed = started.elapsed();
    assert!(elapsed.as_secs_f64() < 10.0, "geometry suite took {elapsed:?}");
    eprintln!("acceptance 1 (geometry suite, 1000 randomized checks in {elapsed:.2?}): PASS");
}

#[test]
fn acceptance_02_gradient_gate() {
    let mut r = rng(0xACC2);
    for trial in 0..20 {
        let n = 6 + (r.random::<u32>() % 27) as usize; // 6..=32
        let p = 1 + (r.random::<u32>() % 4) as usize; // 1..=4
        let p = p.min(n - 1);
        let with_mean = trial % 2 == 0;
        let s = if with_mean {
            DVector::from_fn(n, |_, _| r.sample(StandardNormal))
        } else {
            DVector::zeros(n)
        };
        let stats = ClassStats::new(random_spd(n, &mut r), random_spd(n, &mut r), s).unwrap();
        let obj = NegJeffreys::new(stats, ObjectiveConfig::for_subspace_dim(p));
        let x = random_point(n, p, &mut r).unwrap();
        let err = fd_gradient_check(&obj, &x, 7, 1e-5, &mut r).unwrap();
        assert!(
            err < 1e-5,
            "finite-difference relative error {err:.3e} at trial {trial} (n={n}, p={p})"
        );
    }
    eprintln!("acceptance 2 (gradient gate, 20 instances at rel tol 1e-5): PASS");
}

#[test]
fn acceptance_03_fk_optimality() {
    let mut r = rng(0xACC3);
    for trial in 0..20 {
        let stats = ClassStats::new(
            random_spd(16, &mut r),
            random_spd(16, &mut r),
            DVector::zeros(16),
        )
        .unwrap();
        let fk = fukunaga_koontz(&stats, 2).unwrap();
        let cfg = ObjectiveConfig::for_subspace_dim(2);
        let j_at_star = jeffreys(&stats, &fk.t_star, &cfg).unwrap();
        assert!(
            (j_at_star - fk.j_closed_form).abs() <= 1e-8 * fk.j_closed_form.abs(),
            "closed form mismatch at trial {trial}: {j_at_star} vs {}",
            fk.j_closed_form
        );
        for _ in 0..1000 {
            let t = random_point(16, 2, &mut r).unwrap();
            let j = jeffreys(&stats, &t, &cfg).unwrap();
            assert!(
                j <= fk.j_closed_form * (1.0 + 1e-12),
                "random subspace beat the analytic optimum at trial {trial}: {j} > {}",
                fk.j_closed_form
            );
        }
    }
    eprintln!("acceptance 3 (analytic-optimum optimality, 20 x 1000 subspaces): PASS");
}

#[test]
fn acceptance_04_rate_reproduction() {
    let started = Instant::now();
    let cfg = parse_config(r#"{"preset": "ratecheck"}"#).unwrap();
    let dir = tempdir().unwrap();
    let report = cmd_ratecheck(&cfg, dir.path()).unwrap();

    let case = |name: &str| report.cases.iter().find(|c| c.name == name).unwrap();
    let conforming = case("diminishing-error-constant-step");
    assert!(
        conforming.in_band,
        "conforming case median {} outside {:?} (slopes {:?})",
        conforming.median_slope, conforming.band, conforming.slopes
    );
    let exact = case("exact-oracle");
    assert!(exact.median_slope <= -0.8, "exact median {}", exact.median_slope);
    let control = case("constant-error-control");
    assert!(
        !control.in_band,
        "negative control conformed: median {} (slopes {:?})",
        control.median_slope, control.slopes
    );
    assert!(report.pass);
    let elapsed = started.elapsed();
    assert!(elapsed.as_secs_f64() < 60.0, "rate check took {elapsed:?}");
    eprintln!(
        "acceptance 4 (rate slope {:.3} in [-1.6,-0.8]; control {:.3} outside; {elapsed:.2?}): PASS",
        conforming.median_slope, control.median_slope
    );
}

#[test]
fn acceptance_05_line_search_contract() {
    let spectrum = DVector::from_fn(8, |i, _| (8 - i) as f64);
    let obj = RayleighObjective::new(DMatrix::from_diagonal(&spectrum)).unwrap();
    let lipschitz = obj.smoothness_bound();
    let (delta, sigma, beta, eta0) = (0.3, 1e-4, 0.7, 2.0);
    let eta_bar = 2.0 * (1.0 - delta - sigma * (1.0 - delta) * (1.0 - delta))
        / (lipschitz * (1.0 + delta) * (1.0 + delta));
    let bound = (eta_bar / eta0).log(beta).ceil() as u32 + 1;
    let cfg = LineSearchConfig::new(eta0, beta, sigma, 300);

    for seed in 0..5u64 {
        let x0 = random_point(8, 2, &mut rng(0xACC5 + seed)).unwrap();
        let mut oracle = GradientOracle::new(OracleKind::RelativeBounded { delta }, seed).unwrap();
        let (x_final, trace) = run_line_search(&obj, None, &mut oracle, &x0, &cfg).unwrap();
        for w in trace.records.windows(2) {
            let (a, b) = (&w[0], &w[1]);
            assert!(
                b.f_value <= a.f_value - sigma * a.eta_used * a.delta_norm * a.delta_norm,
                "sufficient decrease violated at seed {seed}, k={}",
                a.k
            );
        }
        let last = trace.records.last().unwrap();
        let f_final = obj.value(&x_final).unwrap();
        assert!(f_final <= last.f_value - sigma * last.eta_used * last.delta_norm * last.delta_norm);
        for rec in &trace.records {
            assert!(
                rec.backtracks <= bound,
                "seed {seed}, k={}: {} backtracks exceed the bound {bound}",
                rec.k,
                rec.backtracks
            );
            // The relative-error condition is assertable from the trace.
            let g = rec.true_grad_norm.unwrap();
            assert!(rec.err_norm.unwrap() <= delta * g + 1e-15);
        }
    }
    eprintln!("acceptance 5 (line-search decrease + backtrack bound {bound}): PASS");
}

#[test]
fn acceptance_06_monotone_descent_fixed_step() {
    let spectrum = DVector::from_fn(8, |i, _| (8 - i) as f64);
    let obj = RayleighObjective::new(DMatrix::from_diagonal(&spectrum)).unwrap();
    let lipschitz = obj.smoothness_bound();
    let cfg = FixedStepConfig {
        step_rule: StepRule::Constant { eta: 1.0 / lipschitz },
        max_iters: 500,
        grad_tol: 0.0,
    };
    for seed in 0..5u64 {
        let x0 = random_point(8, 2, &mut rng(0xACC6 + seed)).unwrap();
        let mut oracle =
            GradientOracle::new(OracleKind::RelativeBounded { delta: 0.3 }, seed).unwrap();
        let (_, trace) = run_fixed_step(&obj, None, &mut oracle, &x0, &cfg).unwrap();
        assert_eq!(trace.records.len(), 500);
        let f = trace.f_values();
        for (k, w) in f.windows(2).enumerate() {
            assert!(
                w[1] <= w[0] + 1e-12 * (1.0 + w[0].abs()),
                "seed {seed}: ascent at k={k}: {} -> {}",
                w[0],
                w[1]
            );
        }
    }
    eprintln!("acceptance 6 (monotone descent, eta = 1/L, delta = 0.3, 5 seeds x 500 iters): PASS");
}

#[test]
fn acceptance_07_covariance_error_trend() {
    let cfg = parse_config(
        r#"{"preset": "table1", "sample_sizes": [10, 100], "seeds": [0,1,2,3,4,5,6,7,8,9,10,11,12,13,14,15,16,17,18,19]}"#,
    )
    .unwrap();
    let dir = tempdir().unwrap();
    let table = cmd_covtable(&cfg, dir.path()).unwrap();
    assert_eq!(table.rows[0].n_samples, 10);
    assert_eq!(table.rows[1].n_samples, 100);
    assert!(table.rows[1].k1_err_mean < table.rows[0].k1_err_mean);
    assert!(table.rows[1].k2_err_mean < table.rows[0].k2_err_mean);

    // Per-seed ratio error(N=100)/error(N=10) for class 1; median over seeds.
    let ratios: Vec<f64> = (0..20)
        .map(|s| table.samples[1][s].0 / table.samples[0][s].0)
        .collect();
    let med = median(ratios.clone());
    assert!(
        (0.27..=0.37).contains(&med),
        "median error ratio {med:.4} outside [0.27, 0.37] ({ratios:?})"
    );
    eprintln!("acceptance 7 (covariance error ratio {med:.4} in [0.27, 0.37]): PASS");
}

#[test]
fn acceptance_08_detection_ordering() {
    let base = parse_config(r#"{"preset": "table2"}"#).unwrap(); // seeds 1..=5
    let stats = true_class_stats(&base.grid).unwrap();
    let fk = fukunaga_koontz(&stats, base.p).unwrap();
    let dir = tempdir().unwrap();

    let auc_of = |point: &grassopt::grassmann::GrassmannPoint, seed: u64| -> f64 {
        let (s1, s2) = shared_test_scores(&stats, point, base.test_per_class, seed).unwrap();
        auc(&s1, &s2).unwrap().auc
    };
    let fk_median = median(base.seeds.iter().map(|&s| auc_of(&fk.t_star, s)).collect());

    let arm = |oracle: OracleSpec, optimizer: OptimizerSpec, tag: &str| -> f64 {
        let mut cfg = base.clone();
        cfg.oracle = oracle;
        cfg.optimizer = optimizer;
        let out = cmd_optimize(&cfg, &dir.path().join(tag), false).unwrap();
        median(
            out.runs
                .iter()
                .map(|r| auc_of(&r.final_point, r.seed))
                .collect(),
        )
    };
    let fixed = OptimizerSpec::Fixed {
        step: StepRule::Constant { eta: 0.2 },
    };
    let ls = OptimizerSpec::LineSearch {
        eta0: 2.0,
        beta: 0.7,
        sigma: 1e-4,
        max_backtracks: 60,
    };
    let exact = arm(OracleSpec::Exact, fixed.clone(), "exact");
    let perturbed = arm(OracleSpec::SurrogatePerturb, fixed, "perturb");
    let sampled = arm(OracleSpec::SurrogateSample { n_train: 100 }, ls, "sample");

    const GAP_TOL: f64 = 0.02;
    assert!(fk_median >= exact - GAP_TOL, "FK {fk_median:.4} < exact {exact:.4} - tol");
    assert!(exact >= perturbed - GAP_TOL, "exact {exact:.4} < perturbed {perturbed:.4} - tol");
    assert!(
        perturbed >= sampled - GAP_TOL,
        "perturbed {perturbed:.4} < sampled {sampled:.4} - tol"
    );
    assert!(sampled >= 0.5, "sampled median AUC {sampled:.4} below chance");
    eprintln!(
        "acceptance 8 (median AUC ordering {fk_median:.3} >= {exact:.3} >= {perturbed:.3} >= {sampled:.3} >= 0.5): PASS"
    );
}

#[test]
fn acceptance_09_sample_divergence_biased_high() {
    let grid = GridSpec {
        side: 16,
        sigma1: 0.55,
        sigma2: 0.30,
        nugget: 1e-8,
    };
    let stats = true_class_stats(&grid).unwrap();
    let cfg_obj = ObjectiveConfig::for_subspace_dim(5);
    let t = random_point(256, 5, &mut rng(0xACC9)).unwrap();
    let j_true = jeffreys(&stats, &t, &cfg_obj).unwrap();

    let mut sum = 0.0;
    for rep in 0..50u64 {
        let mut ks = Vec::new();
        for (class, k) in [(ClassId::One, stats.k1()), (ClassId::Two, stats.k2())] {
            let seed = derive_seed(rep, "bias", if class == ClassId::One { 0 } else { 1 });
            let ds = sample_images(k, &DVector::zeros(256), 100, class, seed).unwrap();
            ks.push(sample_covariance(&ds).unwrap());
        }
        let k2 = ks.pop().unwrap();
        let k1 = ks.pop().unwrap();
        let est = ClassStats::new_unchecked(k1, k2, DVector::zeros(256)).unwrap();
        sum += jeffreys(&est, &t, &cfg_obj).unwrap();
    }
    let mean_sample_j = sum / 50.0;
    assert!(
        mean_sample_j > j_true,
        "mean sample divergence {mean_sample_j:.4} not above true {j_true:.4}"
    );
    eprintln!(
        "acceptance 9 (sample statistics biased high: {mean_sample_j:.4} > {j_true:.4}): PASS"
    );
}

#[test]
fn acceptance_10_bytewise_determinism() {
    // Each subcommand, run twice on a small config with identical seeds and
    // thread counts, must produce byte-identical artifacts.
    let sim_cfg = parse_config(
        r#"{
        "grid": {"side": 4, "sigma1": 0.8, "sigma2": 0.5},
        "p": 2,
        "oracle": {"kind": "surrogate-perturb"},
        "optimizer": {"kind": "fixed", "step": {"kind": "constant", "eta": 0.2}},
        "iters": 25,
        "seeds": [3, 4],
        "lambda": 0.6,
        "sample_sizes": [3, 6],
        "test_per_class": 50
    }"#,
    )
    .unwrap();
    let rate_cfg = parse_config(r#"{"preset": "ratecheck", "iters": 60, "seeds": [0, 1]}"#).unwrap();

    let run_all = |root: &Path| {
        cmd_simulate(&sim_cfg, &root.join("sim"), true).unwrap();
        cmd_covtable(&sim_cfg, &root.join("cov")).unwrap();
        cmd_optimize(&sim_cfg, &root.join("opt"), false).unwrap();
        cmd_evaluate(
            &root.join("opt").join("point_seed3.grmx"),
            &sim_cfg,
            &root.join("eval"),
        )
        .unwrap();
        cmd_ratecheck(&rate_cfg, &root.join("rate")).unwrap();
    };
    let dir_a = tempdir().unwrap();
    let dir_b = tempdir().unwrap();
    run_all(dir_a.path());
    run_all(dir_b.path());

    let (files_a, files_b) = (collect_files(dir_a.path()), collect_files(dir_b.path()));
    assert_eq!(
        files_a.keys().collect::<Vec<_>>(),
        files_b.keys().collect::<Vec<_>>()
    );
    let mut compared = 0;
    for (name, bytes) in &files_a {
        assert_eq!(bytes, &files_b[name], "artifact {name} differs between reruns");
        compared += 1;
    }
    assert!(compared >= 20, "expected a substantial artifact set, saw {compared}");
    eprintln!("acceptance 10 (bytewise determinism across {compared} artifacts): PASS");
}

#[test]
fn acceptance_10_hash_mismatch_guard() {
    // Companion to the determinism criterion: artifacts carry the config
    // hash and evaluation refuses a foreign config.
    let cfg = parse_config(
        r#"{
        "grid": {"side": 4, "sigma1": 0.8, "sigma2": 0.5},
        "p": 2,
        "oracle": {"kind": "exact"},
        "optimizer": {"kind": "fixed", "step": {"kind": "constant", "eta": 0.2}},
        "iters": 5,
        "seeds": [1],
        "lambda": 0.6,
        "sample_sizes": [3],
        "test_per_class": 20
    }"#,
    )
    .unwrap();
    let dir = tempdir().unwrap();
    cmd_optimize(&cfg, dir.path(), false).unwrap();
    let mut other = cfg.clone();
    other.lambda = 0.5;
    match cmd_evaluate(&dir.path().join("point_seed1.grmx"), &other, dir.path()) {
        Err(Error::HashMismatch { .. }) => {}
        o => panic!("expected hash mismatch, got {o:?}"),
    }
    eprintln!("acceptance 10b (config-hash guard on evaluation): PASS");
}

fn collect_files(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).unwrap() {
            let entry = entry.unwrap();
            let path = entry.path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.insert(rel, fs::read(&path).unwrap());
            }
        }
    }
    out
}
