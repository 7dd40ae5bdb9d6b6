//! Acceptance criteria, one pass/fail line each.
//!
//! Runs as a plain binary (no libtest harness) so every criterion reports exactly once
//! in order. Set `MODERR_ACCEPTANCE_SKIP_FULL=1` to skip the full-scale Darcy clause.

use std::path::Path;
use std::time::{Duration, Instant};

use moderr::gaussian::{posterior_update, PrecisionIteration};
use moderr::linalg::min_eigenvalue;
use moderr::models::{
    darcy2d_linearize, darcy2d_observe, darcy2d_pair, darcy2d_solve, Darcy2DConfig,
};
use moderr::particles::{standard_normal_vector, Purpose, RngSpec};
use moderr::{GaussianMeasure, LinearModelPair};
use moderr_cli::checks::{delta_kl_non_increasing, truth_error_settled};
use moderr_cli::config::ExperimentConfig;
use moderr_cli::experiments::darcy::{darcy_prior, run_darcy, DarcyReport};
use moderr_cli::experiments::rates::run_rates;
use moderr_cli::experiments::source1d::run_source1d;
use moderr_cli::experiments::toy::{consistency_replicate, consistency_toy, run_sqrt_n};
use moderr_cli::{execute, Command, RunOptions};
use nalgebra::{DMatrix, DVector};

const SEED: u64 = moderr_cli::config::DEFAULT_SEED;

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: String) -> Outcome {
    Outcome { passed, detail }
}

fn within(elapsed: Duration, secs: u64) -> bool {
    elapsed <= Duration::from_secs(secs)
}

fn source1d_criteria() -> [Outcome; 3] {
    let cfg = ExperimentConfig::default();
    let start = Instant::now();
    let report = run_source1d(&cfg.source1d, SEED).expect("source1d run");
    let elapsed = start.elapsed();

    let ratios: Vec<f64> = report.rows.iter().map(|r| r.slope_cov / r.slope_mean).collect();
    let c1 = outcome(
        ratios.iter().all(|q| (1.8..=2.2).contains(q)) && within(elapsed, 120),
        format!("cov/mean slope ratios {ratios:.3?} in {elapsed:.1?}"),
    );

    let mean_order = report.rows.iter().all(|r| r.mean_err_iter < r.mean_err_conv);
    let cov_order = report.rows.iter().all(|r| r.cov_err_iter > r.cov_err_conv);
    let pairs: Vec<String> = report
        .rows
        .iter()
        .map(|r| {
            format!(
                "n={} mean {:.3e}<{:.3e} cov {:.3e}>{:.3e}",
                r.level, r.mean_err_iter, r.mean_err_conv, r.cov_err_iter, r.cov_err_conv
            )
        })
        .collect();
    let c2 = outcome(mean_order && cov_order, pairs.join("; "));

    let r2_min = report.rows.iter().map(|r| r.r2_mean).fold(f64::INFINITY, f64::min);
    let slopes: Vec<f64> = report.rows.iter().map(|r| r.slope_mean).collect();
    let decreasing = slopes.windows(2).all(|w| w[1] < w[0]);
    let c3 = outcome(
        r2_min >= 0.99 && decreasing,
        format!("min R² {r2_min:.5}, mean slopes {slopes:.3?}"),
    );
    [c1, c2, c3]
}

fn criterion4() -> Outcome {
    let cfg = ExperimentConfig::default();
    let start = Instant::now();
    let report = run_rates(&cfg.rates, SEED).expect("rates run");
    let elapsed = start.elapsed();
    let mut ok = within(elapsed, 60);
    let mut parts = Vec::new();
    for r in report.rows.iter().filter(|r| r.bound > 0.0 && r.bound < 0.5) {
        let lb = r.bound.ln();
        ok &= r.mean_rate <= lb + 0.1 && r.cov_rate <= 2.0 * lb + 0.1;
        parts.push(format!(
            "δ={}: {:.3}≤{:.3}, {:.3}≤{:.3}",
            r.delta,
            r.mean_rate,
            lb + 0.1,
            r.cov_rate,
            2.0 * lb + 0.1
        ));
    }
    ok &= !parts.is_empty();
    outcome(ok, format!("{} in {elapsed:.1?}", parts.join("; ")))
}

fn random_instance(r: u64) -> LinearModelPair {
    let rng = RngSpec::new(SEED).child(r);
    let mut s = rng.stream(Purpose::Replicate, 0, 0);
    let mut draw = || standard_normal_vector(&mut s, 1)[0];
    let d = 2 + (draw().abs() * 2.0) as usize % 4;
    let j = 1 + (draw().abs() * 2.0) as usize % 4;
    let a = DMatrix::from_fn(j, d, |_, _| draw());
    let a_star = &a + DMatrix::from_fn(j, d, |_, _| draw()) * (0.2 + draw().abs());
    let l = DMatrix::from_fn(d, d, |_, _| draw());
    let c0 = &l * l.transpose() + DMatrix::identity(d, d) * 0.1;
    let gamma = DMatrix::from_diagonal_element(j, j, 0.01 + draw().powi(2));
    let prior = GaussianMeasure::new(DVector::zeros(d), c0).expect("SPD prior");
    LinearModelPair::new(a_star, a, gamma, prior).expect("instance")
}

fn criterion5() -> Outcome {
    let start = Instant::now();
    let mut worst_precision = f64::INFINITY;
    let mut worst_cov = f64::INFINITY;
    let mut ok = true;
    for r in 0..100 {
        let model = random_instance(r);
        let map = PrecisionIteration::new(&model).expect("precision map");
        let c_post_a = posterior_update(
            model.prior(),
            model.a(),
            model.gamma(),
            &DVector::zeros(model.data_dim()),
            &DVector::zeros(model.data_dim()),
        )
        .expect("posterior")
        .covariance()
        .clone();
        let mut b = map.prior_precision().clone();
        let mut c = model.prior().covariance().clone();
        for _ in 0..=50 {
            let next = map.apply(&b).expect("R(B)");
            let scale = b.norm();
            let step = min_eigenvalue(&(&next - &b)) / scale;
            worst_precision = worst_precision.min(step);
            ok &= step >= -1e-10;
            let c_next = next.clone().try_inverse().expect("invertible precision");
            let c_scale = c.norm();
            let dec = min_eigenvalue(&(&c - &c_next)) / c_scale;
            let floor = min_eigenvalue(&(&c_next - &c_post_a)) / c_scale;
            worst_cov = worst_cov.min(dec.min(floor));
            ok &= dec >= -1e-10 && floor >= -1e-10;
            b = next;
            c = c_next;
        }
    }
    let elapsed = start.elapsed();
    outcome(
        ok && within(elapsed, 30),
        format!(
            "min relative eig of B_(l+1)-B_l {worst_precision:.2e}, of covariance gaps {worst_cov:.2e} in {elapsed:.1?}"
        ),
    )
}

fn criterion6() -> Outcome {
    let start = Instant::now();
    let toy = consistency_toy(5).expect("toy");
    let master = RngSpec::new(SEED);
    let passes = (0..100u64)
        .filter(|r| consistency_replicate(&toy, 5000, &master.child(*r)).expect("replicate") <= 4.0)
        .count();
    let elapsed = start.elapsed();
    outcome(
        passes >= 95 && within(elapsed, 120),
        format!("{passes}/100 replicates within 4σ/√N for ℓ ≤ 5 in {elapsed:.1?}"),
    )
}

fn criterion7() -> Outcome {
    let cfg = ExperimentConfig::default();
    let start = Instant::now();
    let report = run_sqrt_n(&cfg.toy, SEED).expect("toy run");
    let elapsed = start.elapsed();
    let ok = report.slopes.iter().all(|(_, s)| (-0.6..=-0.4).contains(s));
    let detail: Vec<String> = report
        .slopes
        .iter()
        .map(|(rig, s)| format!("{} slope {s:.3}", rig.tag()))
        .collect();
    outcome(ok && within(elapsed, 300), format!("{} in {elapsed:.1?}", detail.join(", ")))
}

fn criterion8() -> Outcome {
    let start = Instant::now();
    let config = Darcy2DConfig::small();
    let pair = darcy2d_pair(&config).expect("pair");
    let grid = *pair.coarse_grid();
    let prior = darcy_prior(&pair, 0.1, 1.0).expect("prior");
    let root = prior.root().expect("root");
    let rng = RngSpec::new(SEED);
    let mut s = rng.stream(Purpose::Replicate, 8, 0);
    let u0 = root.apply(&standard_normal_vector(&mut s, grid.cells()));
    let lin = darcy2d_linearize(&u0, &grid, &config).expect("linearization");
    let forward = |u: &DVector<f64>| {
        let p = darcy2d_solve(u, &grid, |x, y| config.source(x, y)).expect("solve");
        darcy2d_observe(&p, &grid, &config).expect("observe")
    };
    let h = 1e-4;
    let mut worst: f64 = 0.0;
    for _ in 0..10 {
        let v = root.apply(&standard_normal_vector(&mut s, grid.cells()));
        let fd = (forward(&(&u0 + &v * h)) - forward(&(&u0 - &v * h))) / (2.0 * h);
        let jv = &lin.jacobian * &v;
        worst = worst.max((&jv - &fd).norm() / jv.norm());
    }
    let elapsed = start.elapsed();
    outcome(
        worst < 1e-5 && lin.pde_solves == 26 && pair.linearization().pde_solves == 26 && within(elapsed, 60),
        format!("max relative error {worst:.2e}, {} PDE solves per linearization, {elapsed:.1?}", lin.pde_solves),
    )
}

fn darcy_orderings(report: &DarcyReport) -> (bool, String) {
    let e = |r: &moderr::errormodels::ExperimentResult| r.final_truth_error().expect("truth error");
    let (c, h, i) = (e(&report.conventional), e(&report.enhanced), e(&report.iterative));
    let settled = truth_error_settled(&report.iterative.truth_error);
    (
        i < c && i < h && settled,
        format!("iterative {i:.4} vs conventional {c:.4}, enhanced {h:.4}, settled {settled}"),
    )
}

fn criterion9(small: &DarcyReport, small_time: Duration) -> Outcome {
    let (ok_small, small_detail) = darcy_orderings(small);
    let mut ok = ok_small && within(small_time, 90);
    let mut detail = format!("small: {small_detail} in {small_time:.1?}");
    if std::env::var_os("MODERR_ACCEPTANCE_SKIP_FULL").is_some() {
        detail.push_str("; full scale skipped by request");
        ok = false;
    } else {
        let cfg = ExperimentConfig::default();
        let start = Instant::now();
        let full = run_darcy(&cfg).expect("full-scale darcy");
        let elapsed = start.elapsed();
        let (ok_full, full_detail) = darcy_orderings(&full);
        ok &= ok_full && within(elapsed, 900);
        detail.push_str(&format!("; full: {full_detail} in {elapsed:.1?}"));
    }
    outcome(ok, detail)
}

fn read_csvs(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = std::fs::read_dir(dir)
        .expect("output dir")
        .map(|e| e.expect("entry").path())
        .filter(|p| p.extension().is_some_and(|x| x == "csv" || x == "toml"))
        .map(|p| {
            let name = p.file_name().unwrap().to_string_lossy().into_owned();
            (name, std::fs::read(&p).expect("read"))
        })
        .collect();
    files.sort();
    files
}

fn reruns_identical(command: Command, small: bool) -> bool {
    let run = |threads: usize| {
        let dir = tempfile::tempdir().expect("tempdir");
        let opts = RunOptions {
            command,
            config: ExperimentConfig::default(),
            config_source: "defaults".into(),
            out: dir.path().to_path_buf(),
            small,
            check: false,
        };
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().expect("pool");
        pool.install(|| execute(&opts)).expect("run");
        read_csvs(dir.path())
    };
    let first = run(1);
    !first.is_empty() && first == run(2)
}

fn criterion10(small: &DarcyReport) -> Outcome {
    let inflation = small.inflation_min_eig >= 0.0;
    let kl = delta_kl_non_increasing(small);
    let identical = [
        (Command::Source1d, false),
        (Command::Rates, false),
        (Command::Darcy, true),
    ]
    .iter()
    .all(|(c, s)| reruns_identical(*c, *s));
    outcome(
        inflation && kl && identical,
        format!(
            "λ_min(Σ) = {:.2e}, ΔKL non-increasing after 2: {kl}, reruns byte-identical: {identical}",
            small.inflation_min_eig
        ),
    )
}

fn main() {
    let mut results: Vec<(usize, Outcome)> = Vec::new();
    let mut report = |n: usize, o: Outcome| {
        println!("criterion {n:>2}: {} | {}", if o.passed { "PASS" } else { "FAIL" }, o.detail);
        results.push((n, o));
    };
    let [c1, c2, c3] = source1d_criteria();
    report(1, c1);
    report(2, c2);
    report(3, c3);
    report(4, criterion4());
    report(5, criterion5());
    report(6, criterion6());
    report(7, criterion7());
    report(8, criterion8());
    let mut small_cfg = ExperimentConfig::default();
    small_cfg.darcy = small_cfg.darcy.small();
    let start = Instant::now();
    let small = run_darcy(&small_cfg).expect("small darcy");
    let small_time = start.elapsed();
    report(9, criterion9(&small, small_time));
    report(10, criterion10(&small));

    let failed: Vec<usize> = results.iter().filter(|(_, o)| !o.passed).map(|(n, _)| *n).collect();
    if failed.is_empty() {
        println!("acceptance: all {} criteria passed", results.len());
    } else {
        println!("acceptance: failed criteria {failed:?}");
        std::process::exit(1);
    }
}
