//! CSV tables, manifests and console summaries.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use moderr::gaussian::fmt_f64;
use moderr::models::DarcyGrid;
use nalgebra::DVector;

use crate::experiments::darcy::DarcyReport;
use crate::experiments::rates::RatesReport;
use crate::experiments::source1d::Source1dReport;
use crate::experiments::toy::SqrtNReport;
use crate::CliError;

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>, CliError> {
    Ok(BufWriter::new(File::create(dir.join(name))?))
}

fn opt(v: Option<usize>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Writes `lines` to `dir/name` and returns the file name.
fn write_lines(dir: &Path, name: &str, header: &str, lines: impl IntoIterator<Item = String>) -> Result<String, CliError> {
    let mut out = create(dir, name)?;
    writeln!(out, "{header}")?;
    for line in lines {
        writeln!(out, "{line}")?;
    }
    out.flush()?;
    Ok(name.to_string())
}

pub fn write_source1d(dir: &Path, report: &Source1dReport) -> Result<Vec<String>, CliError> {
    let mut files = vec![
        write_lines(
            dir,
            "table1.csv",
            "n,mean_err_iter,mean_err_conv,cov_err_iter,cov_err_conv",
            report.rows.iter().map(|r| {
                format!(
                    "{},{},{},{},{}",
                    r.level,
                    fmt_f64(r.mean_err_iter),
                    fmt_f64(r.mean_err_conv),
                    fmt_f64(r.cov_err_iter),
                    fmt_f64(r.cov_err_conv)
                )
            }),
        )?,
        write_lines(
            dir,
            "table2.csv",
            "n,slope_mean,slope_cov,opnorm_gap",
            report.rows.iter().map(|r| {
                format!(
                    "{},{},{},{}",
                    r.level,
                    fmt_f64(r.slope_mean),
                    fmt_f64(r.slope_cov),
                    fmt_f64(r.opnorm_gap)
                )
            }),
        )?,
    ];
    for r in &report.rows {
        files.push(write_lines(
            dir,
            &format!("trace_n{}.csv", r.level),
            "iter,mean_dev,cov_dev,mean_err_post,cov_err_post",
            (0..r.deviations.mean.len()).map(|l| {
                format!(
                    "{l},{},{},{},{}",
                    fmt_f64(r.deviations.mean[l]),
                    fmt_f64(r.deviations.cov[l]),
                    fmt_f64(r.post_mean_errors[l]),
                    fmt_f64(r.post_cov_errors[l])
                )
            }),
        )?);
    }
    Ok(files)
}

fn write_field(dir: &Path, name: &str, grid: &DarcyGrid, field: &DVector<f64>) -> Result<String, CliError> {
    write_lines(
        dir,
        name,
        "ix,iy,x,y,value",
        (0..grid.cells()).map(|k| {
            let (x, y) = grid.centre(k);
            format!("{},{},{},{},{}", k % grid.n, k / grid.n, fmt_f64(x), fmt_f64(y), fmt_f64(field[k]))
        }),
    )
}

pub fn write_darcy(dir: &Path, report: &DarcyReport) -> Result<Vec<String>, CliError> {
    let grid = DarcyGrid::new((report.grid_cells as f64).sqrt().round() as usize)?;
    let mut files = vec![
        write_field(dir, "truth.csv", &grid, &report.truth)?,
        write_field(dir, "estimate_conventional.csv", &grid, &report.conventional.estimate)?,
        write_field(dir, "estimate_enhanced.csv", &grid, &report.enhanced.estimate)?,
        write_field(dir, "estimate_iterative.csv", &grid, &report.iterative.estimate)?,
    ];
    let mut out = create(dir, "trace.csv")?;
    report.particle_trace().write_csv(&mut out)?;
    out.flush()?;
    files.push("trace.csv".into());
    files.push(write_lines(
        dir,
        "summary.csv",
        "method,final_truth_error,accurate_calls",
        [
            ("conventional", &report.conventional),
            ("enhanced", &report.enhanced),
            ("iterative", &report.iterative),
        ]
        .iter()
        .map(|(name, r)| {
            format!(
                "{name},{},{}",
                fmt_f64(r.final_truth_error().unwrap_or(f64::NAN)),
                r.metadata.accurate_calls
            )
        }),
    )?);
    files.push(write_lines(
        dir,
        "data.csv",
        "index,value",
        report.data.iter().enumerate().map(|(j, v)| format!("{j},{}", fmt_f64(*v))),
    )?);
    Ok(files)
}

pub fn write_rates(dir: &Path, report: &RatesReport) -> Result<Vec<String>, CliError> {
    Ok(vec![write_lines(
        dir,
        "rates.csv",
        "delta,beta_hat,bound,fitted_mean_rate,fitted_cov_rate,converged_at",
        report.rows.iter().map(|r| {
            format!(
                "{},{},{},{},{},{}",
                fmt_f64(r.delta),
                fmt_f64(report.beta_hat),
                fmt_f64(r.bound),
                fmt_f64(r.mean_rate),
                fmt_f64(r.cov_rate),
                opt(r.converged_at)
            )
        }),
    )?])
}

pub fn write_toy(dir: &Path, report: &SqrtNReport) -> Result<Vec<String>, CliError> {
    Ok(vec![
        write_lines(
            dir,
            "sqrtn.csv",
            "rig,particles,distance",
            report
                .rows
                .iter()
                .map(|r| format!("{},{},{}", r.rig.tag(), r.particles, fmt_f64(r.distance))),
        )?,
        write_lines(
            dir,
            "sqrtn_slopes.csv",
            "rig,slope",
            report.slopes.iter().map(|(rig, s)| format!("{},{}", rig.tag(), fmt_f64(*s))),
        )?,
    ])
}

/// `key=value` lines describing a run.
pub fn write_manifest(dir: &Path, entries: &[(String, String)]) -> Result<(), CliError> {
    let mut out = create(dir, "manifest.txt")?;
    for (k, v) in entries {
        writeln!(out, "{k}={v}")?;
    }
    out.flush()?;
    Ok(())
}

pub fn print_source1d(report: &Source1dReport) {
    println!(
        "{:>3} {:>12} {:>12} {:>12} {:>12} {:>10} {:>10} {:>10}",
        "n", "mean_iter", "mean_conv", "cov_iter", "cov_conv", "slope_m", "slope_c", "gap"
    );
    for r in &report.rows {
        println!(
            "{:>3} {:>12.4e} {:>12.4e} {:>12.4e} {:>12.4e} {:>10.3} {:>10.3} {:>10.4}",
            r.level, r.mean_err_iter, r.mean_err_conv, r.cov_err_iter, r.cov_err_conv, r.slope_mean, r.slope_cov, r.opnorm_gap
        );
    }
}

pub fn print_darcy(report: &DarcyReport) {
    println!("{:>13} {:>12}", "method", "truth_error");
    for (name, r) in [
        ("conventional", &report.conventional),
        ("enhanced", &report.enhanced),
        ("iterative", &report.iterative),
    ] {
        println!("{name:>13} {:>12.5}", r.final_truth_error().unwrap_or(f64::NAN));
    }
    println!("{:>4} {:>12} {:>8} {:>12}", "iter", "truth_error", "ess", "delta_kl");
    for g in &report.particle_trace().generations {
        let kl = g.delta_kl.map(|e| format!("{:.4}±{:.4}", e.value, e.std_error)).unwrap_or_default();
        println!("{:>4} {:>12.5} {:>8.1} {kl:>12}", g.generation, g.truth_error.unwrap_or(f64::NAN), g.ess);
    }
    for w in &report.particle_trace().warnings {
        eprintln!("warning: {w}");
    }
}

pub fn print_rates(report: &RatesReport) {
    println!("beta_hat = {:.4}", report.beta_hat);
    println!("{:>6} {:>8} {:>10} {:>10} {:>10}", "delta", "bound", "log bound", "mean_rate", "cov_rate");
    for r in &report.rows {
        println!(
            "{:>6.3} {:>8.4} {:>10.4} {:>10.4} {:>10.4}",
            r.delta,
            r.bound,
            r.bound.ln(),
            r.mean_rate,
            r.cov_rate
        );
    }
}

pub fn print_toy(report: &SqrtNReport) {
    println!("{:>10} {:>8} {:>12}", "rig", "N", "distance");
    for r in &report.rows {
        println!("{:>10} {:>8} {:>12.5e}", r.rig.tag(), r.particles, r.distance);
    }
    for (rig, s) in &report.slopes {
        println!("slope[{}] = {s:.3}", rig.tag());
    }
}
