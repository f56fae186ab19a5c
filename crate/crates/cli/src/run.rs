//! Task dispatch and artifact output.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::Serialize;

use repctl_core::closed_form::{integrate_psi, optimal_pulsing_policy, PsiSolution};
use repctl_core::hjb::{self, SolverOptions};
use repctl_core::simulate::{self, derive_seed, linspace, McOptions, SweepMode};
use repctl_core::{export, ControlPolicy, ControlProblem, Error, PulsingPolicy, Result};

use crate::config::{McSettings, PolicyConfig, Resolved, Task};

const MANIFEST: &str = "manifest.json";

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(dir.join(name))?))
}

fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<()> {
    let mut out = create(dir, name)?;
    serde_json::to_writer_pretty(&mut out, value)?;
    out.write_all(b"\n")?;
    out.flush()?;
    Ok(())
}

fn psi_for(problem: &ControlProblem, dt: f64) -> Result<PsiSolution> {
    let sigma = problem.dynamics.sigma();
    if problem.has_closed_form() {
        PsiSolution::closed_form_10(sigma, problem.epsilon, problem.horizon)
    } else {
        let gamma = problem
            .power_law_gamma()
            .ok_or_else(|| Error::Unsupported("psi needs the power-law/GBM instance".into()))?;
        integrate_psi(
            gamma,
            problem.rho,
            sigma,
            problem.epsilon,
            problem.horizon,
            dt,
        )
    }
}

fn solver_options(resolved: &Resolved) -> SolverOptions {
    SolverOptions {
        auto_raise: resolved.grid.is_none_or(|(_, a)| a),
        ..SolverOptions::default()
    }
}

fn mc_options(mc: &McSettings) -> McOptions {
    McOptions::new(mc.n_paths, mc.dt, mc.seed)
}

fn build_policy(resolved: &Resolved) -> Result<ControlPolicy> {
    let problem = &resolved.problem;
    let policy = resolved
        .policy
        .as_ref()
        .ok_or_else(|| Error::Unsupported("no policy configured".into()))?;
    Ok(match policy {
        PolicyConfig::Constant { mu } => ControlPolicy::Constant(*mu),
        PolicyConfig::OptimalPulsing => {
            let psi = psi_for(problem, 1e-4 * problem.horizon)?;
            ControlPolicy::Pulsing(optimal_pulsing_policy(&psi))
        }
        PolicyConfig::Pulsing {
            switch_times,
            initial_sign,
        } => ControlPolicy::Pulsing(PulsingPolicy {
            epsilon: problem.epsilon,
            switch_times: switch_times.clone(),
            initial_sign: *initial_sign,
        }),
        PolicyConfig::Feedback => {
            let (grid, _) = resolved
                .grid
                .ok_or_else(|| Error::Unsupported("feedback policy needs a grid".into()))?;
            let vg = hjb::solve(problem, &grid, &solver_options(resolved))?;
            ControlPolicy::Feedback(hjb::extract_policy(&vg))
        }
    })
}

#[derive(Serialize)]
struct SweepSummary {
    mode: SweepMode,
    argmax_t_switch: f64,
    argmax_mean: f64,
}

#[derive(Serialize)]
struct ConvergenceSummary<'a> {
    #[serde(flatten)]
    report: &'a hjb::ConvergenceReport,
    monotone: bool,
}

/// Runs the task, writes its artifacts and the manifest into the output
/// directory, and returns a one-line summary.
pub fn execute(resolved: &Resolved) -> Result<String> {
    let dir = Path::new(&resolved.output);
    fs::create_dir_all(dir)?;
    let problem = &resolved.problem;
    let summary = match resolved.task {
        Task::ClosedForm => {
            let dt = resolved.psi_dt.unwrap_or(1e-4 * problem.horizon);
            let psi = psi_for(problem, dt)?;
            let policy = optimal_pulsing_policy(&psi);
            export::write_psi_csv(create(dir, "psi.csv")?, &psi, dt)?;
            export::write_policy_csv(create(dir, "policy.csv")?, &policy)?;
            format!(
                "psi(0) = {:.10}, switch time = {}",
                psi.value(0.0)?,
                psi.switch_time()
                    .map_or_else(|| "none".to_string(), |s| format!("{s:.10}"))
            )
        }
        Task::SolveHjb => {
            let (grid, _) = resolved.grid.expect("validated");
            let vg = hjb::solve(problem, &grid, &solver_options(resolved))?;
            export::write_value_grid_csv(create(dir, "value.csv")?, &vg)?;
            export::write_value_grid_json(create(dir, "value.json")?, &vg)?;
            format!(
                "{} nodes x {} steps, cfl ratio {:.3}",
                vg.grid.n_space, vg.grid.n_time, vg.diagnostics.cfl_ratio
            )
        }
        Task::Simulate => {
            let mc = resolved.mc.expect("validated");
            let policy = build_policy(resolved)?;
            let path = simulate::simulate_path(
                &problem.dynamics,
                &policy,
                mc.r0,
                mc.t0,
                problem.horizon,
                mc.dt,
                derive_seed(mc.seed, 0),
            )?;
            export::write_path_csv(create(dir, "path.csv")?, &path)?;
            format!(
                "{} steps, R(end) = {:.6}",
                path.controls.len(),
                path.reputations.last().copied().unwrap_or(mc.r0)
            )
        }
        Task::Evaluate => {
            let mc = resolved.mc.expect("validated");
            let policy = build_policy(resolved)?;
            let est =
                simulate::evaluate_policy_mc(problem, &policy, mc.r0, mc.t0, &mc_options(&mc))?;
            export::write_estimate_json(create(dir, "estimate.json")?, &est)?;
            format!(
                "mean {:.8} +/- {:.2e} ({} paths)",
                est.mean, est.std_error, est.n_paths
            )
        }
        Task::SweepSwitch => {
            let mc = resolved.mc.expect("validated");
            let sweep = resolved.sweep.expect("validated");
            let times = linspace(sweep.t_min, sweep.t_max, sweep.n_points);
            let rows =
                simulate::sweep_switch_time(problem, mc.r0, &times, sweep.mode, &mc_options(&mc))?;
            export::write_sweep_csv(create(dir, "sweep.csv")?, &rows)?;
            let best = simulate::sweep_argmax(&rows).expect("at least one sweep point");
            write_json(
                dir,
                "sweep.json",
                &SweepSummary {
                    mode: sweep.mode,
                    argmax_t_switch: best.t_switch,
                    argmax_mean: best.mean,
                },
            )?;
            format!(
                "argmax t_switch = {:.6}, mean {:.8}",
                best.t_switch, best.mean
            )
        }
        Task::Convergence => {
            let (grid, _) = resolved.grid.expect("validated");
            let report = hjb::refine_and_compare(problem, &grid, &solver_options(resolved))?;
            export::write_convergence_csv(create(dir, "convergence.csv")?, &report)?;
            let monotone = report.is_monotone();
            write_json(
                dir,
                "convergence.json",
                &ConvergenceSummary {
                    report: &report,
                    monotone,
                },
            )?;
            format!("errors {:?}, monotone: {monotone}", report.sequence())
        }
    };
    write_json(dir, MANIFEST, &resolved.manifest)?;
    Ok(summary)
}
