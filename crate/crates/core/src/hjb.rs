//! Explicit finite-difference solver for the HJB equations of both models.
//!
//! Both problems share the form
//!
//! ```text
//! v_t + D v_yy + (mu + b0(y)) v_y + (1 - mu) e^{-rho t} h(R) = 0,   mu in {-eps, +eps},
//! ```
//!
//! in the solve coordinate `y`: `y = ln R` with `D = sigma^2/2`,
//! `b0 = -sigma^2/2` for GBM, and `y = R` with `D = sigma^2/2`, `b0 = -kappa R`
//! for Nerlove-Arrow. The maximizing control is `eps * sgn(v_y - e^{-rho t} h)`,
//! resolved from central differences on the current slice; the drift term is
//! then upwinded by the sign of `mu + b0`.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::closed_form::{integrate_psi, value_power_law, PsiSolution};
use crate::error::{domain, Error, Result};
use crate::model::{
    AnalyticRegime, ControlProblem, GrowthModel, ProcessingRate, ReputationDynamics,
};
use crate::parallel::Execution;
use crate::policy::FeedbackPolicy;

/// Default CFL ratio `dt * max(sigma^2/dy^2 + |drift|/dy)`.
pub const DEFAULT_CFL_TARGET: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GridKind {
    /// Uniform in `ln R`; requires `R_min > 0`.
    LogUniform,
    /// Uniform in `R`.
    Uniform,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpatialGrid {
    pub kind: GridKind,
    pub r_min: f64,
    pub r_max: f64,
    pub n_space: usize,
    pub n_time: usize,
    pub horizon: f64,
}

impl SpatialGrid {
    pub fn new(
        kind: GridKind,
        r_min: f64,
        r_max: f64,
        n_space: usize,
        n_time: usize,
        horizon: f64,
    ) -> Result<Self> {
        let grid = Self {
            kind,
            r_min,
            r_max,
            n_space,
            n_time,
            horizon,
        };
        grid.validate()?;
        Ok(grid)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.r_min >= 0.0 && self.r_max > self.r_min && self.r_max.is_finite()) {
            return Err(domain("grid.r_max", self.r_max));
        }
        if self.kind == GridKind::LogUniform && !(self.r_min > 0.0) {
            return Err(domain("grid.r_min", self.r_min));
        }
        if self.n_space < 3 {
            return Err(domain("grid.n_space", self.n_space as f64));
        }
        if self.n_time < 1 {
            return Err(domain("grid.n_time", self.n_time as f64));
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(domain("grid.horizon", self.horizon));
        }
        Ok(())
    }

    /// Log grid on `[1e-2, 1e2]`.
    pub fn default_gbm(horizon: f64, n_space: usize) -> Self {
        Self {
            kind: GridKind::LogUniform,
            r_min: 1e-2,
            r_max: 1e2,
            n_space,
            n_time: 1,
            horizon,
        }
    }

    /// Uniform grid on `[0, R_max]`, `R_max = max(10, 5 (sigma / sqrt(2 kappa) + eps / kappa))`.
    pub fn default_nerlove_arrow(problem: &ControlProblem, n_space: usize) -> Self {
        let r_max = match problem.dynamics {
            ReputationDynamics::NerloveArrow { kappa, sigma, .. } if kappa > 0.0 => {
                (5.0 * (sigma / (2.0 * kappa).sqrt() + problem.epsilon / kappa)).max(10.0)
            }
            _ => 10.0,
        };
        Self {
            kind: GridKind::Uniform,
            r_min: 0.0,
            r_max,
            n_space,
            n_time: 1,
            horizon: problem.horizon,
        }
    }

    /// First coordinate and spacing in the solve coordinate.
    pub fn coordinate_axis(&self) -> (f64, f64) {
        let (lo, hi) = match self.kind {
            GridKind::LogUniform => (self.r_min.ln(), self.r_max.ln()),
            GridKind::Uniform => (self.r_min, self.r_max),
        };
        (lo, (hi - lo) / (self.n_space - 1) as f64)
    }

    /// Reputation at each node; the end points are exact.
    pub fn nodes(&self) -> Vec<f64> {
        let (lo, d) = self.coordinate_axis();
        let last = self.n_space - 1;
        (0..self.n_space)
            .map(|i| {
                if i == 0 {
                    self.r_min
                } else if i == last {
                    self.r_max
                } else {
                    let y = lo + i as f64 * d;
                    match self.kind {
                        GridKind::LogUniform => y.exp(),
                        GridKind::Uniform => y,
                    }
                }
            })
            .collect()
    }

    /// Spatial refinement by `factor`; time steps scale by `factor^2`.
    pub fn refined(&self, factor: usize) -> Self {
        Self {
            n_space: (self.n_space - 1) * factor + 1,
            n_time: self.n_time * factor * factor,
            ..*self
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    pub cfl_target: f64,
    /// Raise `n_time` to the CFL minimum instead of refusing.
    pub auto_raise: bool,
    pub execution: Execution,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            cfl_target: DEFAULT_CFL_TARGET,
            auto_raise: true,
            execution: Execution::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolverDiagnostics {
    pub requested_n_time: usize,
    pub n_time: usize,
    pub cfl_ratio: f64,
    pub slices: usize,
    pub wall_time_secs: f64,
}

/// Solved value surface and extracted control, stored slice-major.
#[derive(Debug, Clone)]
pub struct ValueGrid {
    /// Grid actually used (`n_time` may exceed the request).
    pub grid: SpatialGrid,
    pub problem: ControlProblem,
    pub nodes: Vec<f64>,
    pub times: Vec<f64>,
    /// `v[j][i]`: value at time slice `j`, node `i`.
    pub v: Vec<Vec<f64>>,
    /// `mu_star[j][i]` in `{-eps, +eps}`.
    pub mu_star: Vec<Vec<f64>>,
    pub diagnostics: SolverDiagnostics,
}

impl ValueGrid {
    pub fn dt(&self) -> f64 {
        self.grid.horizon / self.grid.n_time as f64
    }

    /// Linear interpolation in the solve coordinate on slice `j`.
    pub fn interpolate(&self, r: f64, j: usize) -> Result<f64> {
        let (lo, d) = self.grid.coordinate_axis();
        if !(r >= self.grid.r_min && r <= self.grid.r_max) {
            return Err(domain("reputation", r));
        }
        let y = match self.grid.kind {
            GridKind::LogUniform => r.ln(),
            GridKind::Uniform => r,
        };
        let s = ((y - lo) / d).max(0.0);
        let i = (s as usize).min(self.grid.n_space - 2);
        let w = (s - i as f64).clamp(0.0, 1.0);
        let row = &self.v[j];
        Ok(row[i] * (1.0 - w) + row[i + 1] * w)
    }

    /// Earliest slice time from which node `i` stays at `-eps` until `T`.
    pub fn inferred_switch_time(&self, i: usize) -> f64 {
        let last_advertise = (0..self.times.len())
            .rev()
            .find(|&j| self.mu_star[j][i] > 0.0);
        match last_advertise {
            Some(j) => self.times[(j + 1).min(self.times.len() - 1)],
            None => 0.0,
        }
    }
}

struct Operator {
    diffusion: f64,
    base_drift: Vec<f64>,
    price: Vec<f64>,
    lower: Boundary,
    upper: Boundary,
}

#[derive(Clone, Copy)]
enum Boundary {
    /// `v = 0`.
    Zero,
    /// `v_0 = v_1 (R_0 / R_1)^gamma`, and likewise at the top.
    PowerScaling(f64),
    /// Zero second derivative in the solve coordinate.
    Linear,
}

/// Power-law / GBM problem on a log-uniform grid.
pub fn solve_gbm_power(
    problem: &ControlProblem,
    grid: &SpatialGrid,
    options: &SolverOptions,
) -> Result<ValueGrid> {
    let gamma = problem.power_law_gamma().ok_or_else(|| {
        Error::Unsupported(
            "solve_gbm_power needs GBM dynamics, power-law price, linear rate".into(),
        )
    })?;
    grid.validate()?;
    if grid.kind != GridKind::LogUniform {
        return Err(Error::Unsupported(
            "solve_gbm_power needs a log-uniform grid".into(),
        ));
    }
    let sigma = problem.dynamics.sigma();
    let nodes = grid.nodes();
    let op = Operator {
        diffusion: 0.5 * sigma * sigma,
        base_drift: vec![-0.5 * sigma * sigma; nodes.len()],
        price: nodes
            .iter()
            .map(|&r| problem.growth.eval_unchecked(r))
            .collect(),
        lower: Boundary::PowerScaling(gamma),
        upper: Boundary::PowerScaling(gamma),
    };
    march(problem, grid, nodes, &op, options)
}

/// Nerlove-Arrow / Mink-Seifert problem on a uniform grid starting at `R = 0`.
pub fn solve_nerlove_arrow(
    problem: &ControlProblem,
    grid: &SpatialGrid,
    options: &SolverOptions,
) -> Result<ValueGrid> {
    let ReputationDynamics::NerloveArrow { kappa, sigma, .. } = problem.dynamics else {
        return Err(Error::Unsupported(
            "solve_nerlove_arrow needs Nerlove-Arrow dynamics".into(),
        ));
    };
    if !matches!(problem.growth, GrowthModel::MinkSeifert { .. }) {
        return Err(Error::Unsupported(
            "solve_nerlove_arrow needs the Mink-Seifert price".into(),
        ));
    }
    if problem.processing != ProcessingRate::Linear {
        return Err(Error::Unsupported(
            "the HJB solvers need the linear processing rate".into(),
        ));
    }
    grid.validate()?;
    if grid.kind != GridKind::Uniform || grid.r_min != 0.0 {
        return Err(Error::Unsupported(
            "solve_nerlove_arrow needs a uniform grid with R_min = 0".into(),
        ));
    }
    let nodes = grid.nodes();
    let op = Operator {
        diffusion: 0.5 * sigma * sigma,
        base_drift: nodes.iter().map(|&r| -kappa * r).collect(),
        price: nodes
            .iter()
            .map(|&r| problem.growth.eval_unchecked(r))
            .collect(),
        lower: Boundary::Zero,
        upper: Boundary::Linear,
    };
    march(problem, grid, nodes, &op, options)
}

/// Dispatches on the problem's dynamics with the default grid for that model.
pub fn solve(
    problem: &ControlProblem,
    grid: &SpatialGrid,
    options: &SolverOptions,
) -> Result<ValueGrid> {
    match problem.dynamics {
        ReputationDynamics::Gbm { .. } => solve_gbm_power(problem, grid, options),
        ReputationDynamics::NerloveArrow { .. } => solve_nerlove_arrow(problem, grid, options),
    }
}

/// Minimum number of time steps meeting the CFL target.
pub fn required_time_steps(problem: &ControlProblem, grid: &SpatialGrid, cfl_target: f64) -> usize {
    let (_, d) = grid.coordinate_axis();
    let sigma = problem.dynamics.sigma();
    let max_drift = match problem.dynamics {
        ReputationDynamics::Gbm { .. } => problem.epsilon + 0.5 * sigma * sigma,
        ReputationDynamics::NerloveArrow { kappa, .. } => problem.epsilon + kappa * grid.r_max,
    };
    let rate = sigma * sigma / (d * d) + max_drift / d;
    ((grid.horizon * rate / cfl_target).ceil() as usize).max(1)
}

fn march(
    problem: &ControlProblem,
    grid: &SpatialGrid,
    nodes: Vec<f64>,
    op: &Operator,
    options: &SolverOptions,
) -> Result<ValueGrid> {
    let started = Instant::now();
    let required = required_time_steps(problem, grid, options.cfl_target);
    let n_time = if grid.n_time >= required {
        grid.n_time
    } else if options.auto_raise {
        required
    } else {
        return Err(Error::Cfl {
            requested: grid.n_time,
            required,
        });
    };
    let n = nodes.len();
    let (_, d) = grid.coordinate_axis();
    let dt = grid.horizon / n_time as f64;
    let eps = problem.epsilon;
    let max_drift = op
        .base_drift
        .iter()
        .map(|b| b.abs() + eps)
        .fold(0.0, f64::max);
    let cfl_ratio = dt * (2.0 * op.diffusion / (d * d) + max_drift / d);

    let times: Vec<f64> = (0..=n_time)
        .map(|j| {
            if j == n_time {
                grid.horizon
            } else {
                j as f64 * dt
            }
        })
        .collect();
    let mut v = vec![Vec::new(); n_time + 1];
    let mut mu_star = vec![Vec::new(); n_time + 1];
    v[n_time] = vec![0.0; n];

    let discount = |t: f64| {
        if problem.rho == 0.0 {
            1.0
        } else {
            (-problem.rho * t).exp()
        }
    };
    let resolve = |row: &[f64], i: usize, disc: f64| -> f64 {
        let slope = if i == 0 {
            (row[1] - row[0]) / d
        } else if i == n - 1 {
            (row[n - 1] - row[n - 2]) / d
        } else {
            (row[i + 1] - row[i - 1]) / (2.0 * d)
        };
        if slope - disc * op.price[i] > 0.0 {
            eps
        } else {
            -eps
        }
    };

    for j in (0..n_time).rev() {
        let disc = discount(times[j + 1]);
        let prev = &v[j + 1];
        let mut controls = vec![0.0; n];
        options
            .execution
            .fill(&mut controls, |i| resolve(prev, i, disc));
        let mut next = vec![0.0; n];
        options.execution.fill(&mut next, |i| {
            if i == 0 || i == n - 1 {
                return 0.0;
            }
            let mu = controls[i];
            let drift = mu + op.base_drift[i];
            let advection = if drift > 0.0 {
                drift * (prev[i + 1] - prev[i]) / d
            } else {
                drift * (prev[i] - prev[i - 1]) / d
            };
            let diffusion = op.diffusion * (prev[i + 1] - 2.0 * prev[i] + prev[i - 1]) / (d * d);
            prev[i] + dt * (diffusion + advection + (1.0 - mu) * disc * op.price[i])
        });
        next[0] = match op.lower {
            Boundary::Zero => 0.0,
            Boundary::PowerScaling(gamma) => next[1] * (nodes[0] / nodes[1]).powf(gamma),
            Boundary::Linear => 2.0 * next[1] - next[2],
        };
        next[n - 1] = match op.upper {
            Boundary::Zero => 0.0,
            Boundary::PowerScaling(gamma) => {
                next[n - 2] * (nodes[n - 1] / nodes[n - 2]).powf(gamma)
            }
            Boundary::Linear => 2.0 * next[n - 2] - next[n - 3],
        };
        if next.iter().any(|x| !x.is_finite()) {
            return Err(Error::Divergence {
                slice: j,
                time: times[j],
            });
        }
        mu_star[j + 1] = controls;
        v[j] = next;
    }
    let disc0 = discount(0.0);
    let mut controls = vec![0.0; n];
    options
        .execution
        .fill(&mut controls, |i| resolve(&v[0], i, disc0));
    mu_star[0] = controls;

    Ok(ValueGrid {
        grid: SpatialGrid { n_time, ..*grid },
        problem: problem.clone(),
        nodes,
        times,
        v,
        mu_star,
        diagnostics: SolverDiagnostics {
            requested_n_time: grid.n_time,
            n_time,
            cfl_ratio,
            slices: n_time + 1,
            wall_time_secs: started.elapsed().as_secs_f64(),
        },
    })
}

/// Nearest-node lookup policy over the solved control table.
pub fn extract_policy(vg: &ValueGrid) -> FeedbackPolicy {
    let (coord0, dcoord) = vg.grid.coordinate_axis();
    FeedbackPolicy {
        epsilon: vg.problem.epsilon,
        log_scale: vg.grid.kind == GridKind::LogUniform,
        coord0,
        dcoord,
        n_space: vg.grid.n_space,
        r_min: vg.grid.r_min,
        r_max: vg.grid.r_max,
        horizon: vg.grid.horizon,
        n_time: vg.grid.n_time,
        table: vg.mu_star.clone(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceLevel {
    pub factor: usize,
    pub n_space: usize,
    pub n_time: usize,
    pub spacing: f64,
    /// Sup-norm error at `t = 0` against the analytic value, when one exists.
    pub sup_error: Option<f64>,
    /// Sup-norm difference at `t = 0` against the previous level.
    pub sup_diff: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceReport {
    pub levels: Vec<ConvergenceLevel>,
    /// `log2` of the ratio of the last two errors (or differences).
    pub observed_order: Option<f64>,
}

impl ConvergenceReport {
    /// Errors against the oracle when available, else successive differences.
    pub fn sequence(&self) -> Vec<f64> {
        let errors: Vec<f64> = self.levels.iter().filter_map(|l| l.sup_error).collect();
        if errors.len() == self.levels.len() {
            errors
        } else {
            self.levels.iter().filter_map(|l| l.sup_diff).collect()
        }
    }

    pub fn is_monotone(&self) -> bool {
        self.sequence().windows(2).all(|w| w[1] < w[0])
    }
}

/// Solves at 1x, 2x and 4x refinement and compares on the coarse nodes at `t = 0`.
///
/// Power-law/GBM instances are measured against `e^{-rho t} psi(t) R^gamma`
/// (closed-form `psi` when available, otherwise a fine RK4 table). Other
/// instances report successive-refinement differences.
pub fn refine_and_compare(
    problem: &ControlProblem,
    coarse: &SpatialGrid,
    options: &SolverOptions,
) -> Result<ConvergenceReport> {
    let oracle = match problem.regime() {
        AnalyticRegime::PowerLawGbm => Some(if problem.has_closed_form() {
            PsiSolution::closed_form_10(problem.dynamics.sigma(), problem.epsilon, problem.horizon)?
        } else {
            integrate_psi(
                problem.power_law_gamma().unwrap_or(1.0),
                problem.rho,
                problem.dynamics.sigma(),
                problem.epsilon,
                problem.horizon,
                1e-4,
            )?
        }),
        AnalyticRegime::None => None,
    };
    let coarse_nodes = coarse.nodes();
    let interior = 1..coarse.n_space - 1;
    let mut levels = Vec::new();
    let mut previous: Option<Vec<f64>> = None;
    for factor in [1usize, 2, 4] {
        let grid = coarse.refined(factor);
        let vg = solve(problem, &grid, options)?;
        let sampled: Vec<f64> = interior.clone().map(|i| vg.v[0][i * factor]).collect();
        let sup_error = match &oracle {
            Some(psi) => {
                let mut worst: f64 = 0.0;
                for (k, i) in interior.clone().enumerate() {
                    let exact = value_power_law(coarse_nodes[i], 0.0, psi)?;
                    worst = worst.max((sampled[k] - exact).abs());
                }
                Some(worst)
            }
            None => None,
        };
        let sup_diff = previous.as_ref().map(|p| {
            p.iter()
                .zip(&sampled)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max)
        });
        levels.push(ConvergenceLevel {
            factor,
            n_space: grid.n_space,
            n_time: vg.grid.n_time,
            spacing: grid.coordinate_axis().1,
            sup_error,
            sup_diff,
        });
        previous = Some(sampled);
    }
    let mut report = ConvergenceReport {
        levels,
        observed_order: None,
    };
    let seq = report.sequence();
    if seq.len() >= 2 {
        let (a, b) = (seq[seq.len() - 2], seq[seq.len() - 1]);
        if a > 0.0 && b > 0.0 {
            report.observed_order = Some((a / b).log2());
        }
    }
    Ok(report)
}
