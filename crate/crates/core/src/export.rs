//! CSV and JSON artifacts. Numbers are written with 17 significant digits in
//! scientific notation, independent of locale.

use std::io::Write;

use serde::Serialize;

use crate::closed_form::PsiSolution;
use crate::error::Result;
use crate::hjb::{ConvergenceReport, SolverDiagnostics, SpatialGrid, ValueGrid};
use crate::policy::PulsingPolicy;
use crate::simulate::{MCEstimate, Path, SweepRow};

pub fn format_number(x: f64) -> String {
    format!("{x:.16e}")
}

fn write_rows<W, I, const N: usize>(out: W, header: [&str; N], rows: I) -> Result<()>
where
    W: Write,
    I: IntoIterator<Item = [f64; N]>,
{
    let mut writer = csv::Writer::from_writer(out);
    writer.write_record(header)?;
    for row in rows {
        writer.write_record(row.iter().map(|&x| format_number(x)))?;
    }
    writer.flush()?;
    Ok(())
}

/// Columns `t, psi`; `dt` only matters for closed-form solutions.
pub fn write_psi_csv<W: Write>(out: W, psi: &PsiSolution, dt: f64) -> Result<()> {
    write_rows(
        out,
        ["t", "psi"],
        psi.table(dt).into_iter().map(|(t, v)| [t, v]),
    )
}

/// Columns `t_switch, sign`. The first row, at `t = 0`, carries the initial sign.
pub fn write_policy_csv<W: Write>(out: W, policy: &PulsingPolicy) -> Result<()> {
    let mut rows = vec![[0.0, f64::from(policy.initial_sign)]];
    let mut sign = policy.initial_sign;
    for &t in &policy.switch_times {
        sign = -sign;
        rows.push([t, f64::from(sign)]);
    }
    write_rows(out, ["t_switch", "sign"], rows)
}

/// Long format: one row per `(R, t)` with columns `R, t, v, mu_star`.
pub fn write_value_grid_csv<W: Write>(out: W, vg: &ValueGrid) -> Result<()> {
    let rows = vg.times.iter().enumerate().flat_map(|(j, &t)| {
        vg.nodes
            .iter()
            .enumerate()
            .map(move |(i, &r)| [r, t, vg.v[j][i], vg.mu_star[j][i]])
    });
    write_rows(out, ["R", "t", "v", "mu_star"], rows)
}

#[derive(Serialize)]
struct ValueGridSidecar<'a> {
    grid: &'a SpatialGrid,
    epsilon: f64,
    regime: crate::model::AnalyticRegime,
    diagnostics: &'a SolverDiagnostics,
}

pub fn write_value_grid_json<W: Write>(out: W, vg: &ValueGrid) -> Result<()> {
    let sidecar = ValueGridSidecar {
        grid: &vg.grid,
        epsilon: vg.problem.epsilon,
        regime: vg.problem.regime(),
        diagnostics: &vg.diagnostics,
    };
    serde_json::to_writer_pretty(out, &sidecar)?;
    Ok(())
}

/// Columns `t, R, mu`; the last stamp repeats the final control.
pub fn write_path_csv<W: Write>(out: W, path: &Path) -> Result<()> {
    let last = path.controls.last().copied().unwrap_or(0.0);
    let rows = path
        .times
        .iter()
        .zip(&path.reputations)
        .enumerate()
        .map(|(k, (&t, &r))| [t, r, path.controls.get(k).copied().unwrap_or(last)]);
    write_rows(out, ["t", "R", "mu"], rows)
}

#[derive(Serialize)]
struct EnsembleSummary {
    mean: f64,
    std_error: f64,
    n_paths: usize,
    seed: u64,
    dt: f64,
}

/// `{mean, std_error, n_paths, seed, dt}`.
pub fn write_estimate_json<W: Write>(out: W, est: &MCEstimate) -> Result<()> {
    let summary = EnsembleSummary {
        mean: est.mean,
        std_error: est.std_error,
        n_paths: est.n_paths,
        seed: est.seed,
        dt: est.dt,
    };
    serde_json::to_writer_pretty(out, &summary)?;
    Ok(())
}

pub fn write_sweep_csv<W: Write>(out: W, rows: &[SweepRow]) -> Result<()> {
    write_rows(
        out,
        ["t_switch", "mean", "std_error"],
        rows.iter().map(|r| [r.t_switch, r.mean, r.std_error]),
    )
}

/// Columns `factor, n_space, n_time, spacing, sup_error, sup_diff`; missing values are NaN.
pub fn write_convergence_csv<W: Write>(out: W, report: &ConvergenceReport) -> Result<()> {
    write_rows(
        out,
        [
            "factor",
            "n_space",
            "n_time",
            "spacing",
            "sup_error",
            "sup_diff",
        ],
        report.levels.iter().map(|l| {
            [
                l.factor as f64,
                l.n_space as f64,
                l.n_time as f64,
                l.spacing,
                l.sup_error.unwrap_or(f64::NAN),
                l.sup_diff.unwrap_or(f64::NAN),
            ]
        }),
    )
}
