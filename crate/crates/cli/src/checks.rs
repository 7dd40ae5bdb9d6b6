//! Self-verification of the published qualitative claims, used by `--check`.

use crate::experiments::darcy::DarcyReport;
use crate::experiments::rates::RatesReport;
use crate::experiments::source1d::Source1dReport;
use crate::experiments::toy::SqrtNReport;

/// Accepted range of the covariance-to-mean log-rate ratio.
pub const RATE_RATIO_RANGE: (f64, f64) = (1.8, 2.2);
/// Accepted range of the log-log slope of the operator distance against `N`.
pub const SQRT_N_SLOPE_RANGE: (f64, f64) = (-0.6, -0.4);
/// Slack on fitted rates against `log(β̂δ)`.
pub const RATE_SLACK: f64 = 0.1;
/// Iteration from which the Darcy truth error must have settled.
pub const STABLE_FROM: usize = 5;
/// Relative band around the final truth error counted as settled.
pub const STABLE_BAND: f64 = 0.05;
/// Standard errors of a ΔKL difference tolerated before calling it an increase.
pub const KL_SIGMAS: f64 = 2.0;

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(name: &str, passed: bool, detail: String) -> Self {
        Self {
            name: name.into(),
            passed,
            detail,
        }
    }
}

fn in_range(x: f64, (lo, hi): (f64, f64)) -> bool {
    (lo..=hi).contains(&x)
}

pub fn source1d_checks(report: &Source1dReport) -> Vec<Check> {
    let ratios: Vec<f64> = report.rows.iter().map(|r| r.slope_cov / r.slope_mean).collect();
    let mean_order = report.rows.iter().all(|r| r.mean_err_iter < r.mean_err_conv);
    let cov_order = report.rows.iter().all(|r| r.cov_err_iter > r.cov_err_conv);
    let monotone = report.rows.windows(2).all(|w| w[1].slope_mean < w[0].slope_mean);
    vec![
        Check::new(
            "slope ratio",
            ratios.iter().all(|q| in_range(*q, RATE_RATIO_RANGE)),
            format!("cov/mean slope ratios {ratios:.3?}"),
        ),
        Check::new("mean ordering", mean_order, "iterative mean beats conventional at every level".into()),
        Check::new("covariance ordering", cov_order, "iterative covariance slightly worse at every level".into()),
        Check::new("rate monotone in n", monotone, "mean slopes steepen with n".into()),
    ]
}

/// `ΔKL_{ℓ+1} ≤ ΔKL_ℓ + KL_SIGMAS·√(se_ℓ² + se_{ℓ+1}²)` for `ℓ ≥ 2` where both are defined.
pub fn delta_kl_non_increasing(report: &DarcyReport) -> bool {
    let kl: Vec<_> = report
        .particle_trace()
        .generations
        .iter()
        .filter_map(|g| g.delta_kl)
        .collect();
    kl.windows(2).skip(2).all(|w| {
        w[1].value <= w[0].value + KL_SIGMAS * (w[0].std_error.powi(2) + w[1].std_error.powi(2)).sqrt()
    })
}

/// `|e_ℓ − e_L| < STABLE_BAND·e_L` for all `ℓ ≥ STABLE_FROM`.
pub fn truth_error_settled(errors: &[f64]) -> bool {
    let last = *errors.last().unwrap_or(&f64::NAN);
    errors
        .iter()
        .skip(STABLE_FROM)
        .all(|e| (e - last).abs() < STABLE_BAND * last)
}

pub fn darcy_checks(report: &DarcyReport) -> Vec<Check> {
    let e = |r: &moderr::errormodels::ExperimentResult| r.final_truth_error().unwrap_or(f64::NAN);
    let (c, h, i) = (e(&report.conventional), e(&report.enhanced), e(&report.iterative));
    vec![
        Check::new(
            "iterative beats conventional and enhanced",
            i < c && i < h,
            format!("final truth errors {i:.5} (iterative), {c:.5} (conventional), {h:.5} (enhanced)"),
        ),
        Check::new(
            "truth error settled",
            truth_error_settled(&report.iterative.truth_error),
            format!("iterative trace {:.5?}", report.iterative.truth_error),
        ),
        Check::new(
            "variance inflation",
            report.inflation_min_eig >= 0.0,
            format!("λ_min(Σ) = {:.3e}", report.inflation_min_eig),
        ),
        Check::new("ΔKL non-increasing", delta_kl_non_increasing(report), "after iteration 2 within MC error".into()),
    ]
}

pub fn rates_checks(report: &RatesReport) -> Vec<Check> {
    let mut checks = Vec::new();
    for r in report.rows.iter().filter(|r| r.bound > 0.0 && r.bound < 0.5) {
        let log_b = r.bound.ln();
        checks.push(Check::new(
            &format!("rates at δ = {}", r.delta),
            r.mean_rate <= log_b + RATE_SLACK && r.cov_rate <= 2.0 * log_b + RATE_SLACK,
            format!("mean {:.3} cov {:.3} against log(β̂δ) = {log_b:.3}", r.mean_rate, r.cov_rate),
        ));
    }
    if let Some(r) = report.rows.iter().find(|r| r.delta == 0.0) {
        checks.push(Check::new(
            "δ = 0 converges at once",
            r.converged_at == Some(1),
            format!("converged_at = {:?}", r.converged_at),
        ));
    }
    checks
}

pub fn toy_checks(report: &SqrtNReport) -> Vec<Check> {
    report
        .slopes
        .iter()
        .map(|(rig, s)| {
            Check::new(
                &format!("1/√N slope ({})", rig.tag()),
                in_range(*s, SQRT_N_SLOPE_RANGE),
                format!("slope {s:.3}"),
            )
        })
        .collect()
}
