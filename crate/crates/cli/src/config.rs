//! Experiment configuration: JSON schema, defaults and validation.

use std::fmt;

use serde::{Deserialize, Serialize};

use repctl_core::hjb::{required_time_steps, GridKind, SpatialGrid, DEFAULT_CFL_TARGET};
use repctl_core::simulate::{SweepMode, DEFAULT_DT_FRACTION, DEFAULT_N_PATHS};
use repctl_core::{
    AnalyticRegime, ControlProblem, Error, FieldError, ProblemDocument, ReputationDynamics,
};

pub const SCHEMA_VERSION: u32 = 1;
const DEFAULT_OUTPUT: &str = "out";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    ClosedForm,
    SolveHjb,
    Simulate,
    Evaluate,
    SweepSwitch,
    Convergence,
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Task::ClosedForm => "closed-form",
            Task::SolveHjb => "solve-hjb",
            Task::Simulate => "simulate",
            Task::Evaluate => "evaluate",
            Task::SweepSwitch => "sweep-switch",
            Task::Convergence => "convergence",
        };
        f.write_str(name)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kind: Option<GridKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r_min: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r_max: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_space: Option<usize>,
    /// Requested steps; raised to the CFL minimum when `auto_raise` is set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_time: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub auto_raise: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_paths: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r0: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t0: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum PolicyConfig {
    Constant {
        mu: f64,
    },
    /// The closed-form optimum of the power-law/GBM model.
    OptimalPulsing,
    Pulsing {
        switch_times: Vec<f64>,
        initial_sign: i8,
    },
    /// Control extracted from an HJB solve on `grid`.
    Feedback,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode: Option<SweepMode>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_points: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_min: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_max: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PsiConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub task: Option<Task>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub problem: Option<ProblemDocument>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mc: Option<McConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub policy: Option<PolicyConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub psi: Option<PsiConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<String>,
    /// Written into manifests; ignored on input.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub toolkit_version: Option<String>,
}

/// Command-line overrides applied before validation.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub task: Option<Task>,
    pub output: Option<String>,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McSettings {
    pub n_paths: usize,
    pub dt: f64,
    pub seed: u64,
    pub r0: f64,
    pub t0: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepSettings {
    pub mode: SweepMode,
    pub n_points: usize,
    pub t_min: f64,
    pub t_max: f64,
}

/// A validated configuration with every default filled in.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub task: Task,
    pub problem: ControlProblem,
    pub grid: Option<(SpatialGrid, bool)>,
    pub mc: Option<McSettings>,
    pub policy: Option<PolicyConfig>,
    pub sweep: Option<SweepSettings>,
    pub psi_dt: Option<f64>,
    pub output: String,
    /// The configuration echoed into the manifest.
    pub manifest: ExperimentConfig,
}

pub fn parse(text: &str) -> Result<ExperimentConfig, Vec<FieldError>> {
    serde_json::from_str(text).map_err(|e| vec![FieldError::new("config", e.to_string())])
}

/// All validation errors for `config` under `overrides`; empty when it would run.
pub fn validate(config: &ExperimentConfig, overrides: &Overrides) -> Vec<FieldError> {
    match resolve(config, overrides) {
        Ok(_) => Vec::new(),
        Err(errors) => errors,
    }
}

fn needs_grid(task: Task, policy: Option<&PolicyConfig>) -> bool {
    match task {
        Task::SolveHjb | Task::Convergence => true,
        Task::Simulate | Task::Evaluate => matches!(policy, Some(PolicyConfig::Feedback)),
        Task::ClosedForm | Task::SweepSwitch => false,
    }
}

pub fn resolve(
    config: &ExperimentConfig,
    overrides: &Overrides,
) -> Result<Resolved, Vec<FieldError>> {
    let mut errors = Vec::new();
    if config.schema_version != SCHEMA_VERSION {
        errors.push(FieldError::new(
            "schema_version",
            format!(
                "unsupported version {}, expected {SCHEMA_VERSION}",
                config.schema_version
            ),
        ));
    }
    let task = match (overrides.task, config.task) {
        (Some(a), Some(b)) if a != b => {
            errors.push(FieldError::new(
                "task",
                format!("config says {b}, command says {a}"),
            ));
            None
        }
        (Some(t), _) | (None, Some(t)) => Some(t),
        (None, None) => {
            errors.push(FieldError::new("task", "missing"));
            None
        }
    };
    let problem = match &config.problem {
        None => {
            errors.push(FieldError::new("problem", "missing"));
            None
        }
        Some(doc) => match doc.to_problem() {
            Ok(p) => Some(p),
            Err(Error::InvalidProblem(list)) => {
                errors.extend(
                    list.into_iter()
                        .map(|e| FieldError::new(format!("problem.{}", e.field), e.message)),
                );
                None
            }
            Err(other) => {
                errors.push(FieldError::new("problem", other.to_string()));
                None
            }
        },
    };
    let (Some(task), Some(problem)) = (task, problem) else {
        return Err(errors);
    };
    let horizon = problem.horizon;
    let regime = problem.regime();

    if task == Task::ClosedForm && regime != AnalyticRegime::PowerLawGbm {
        errors.push(FieldError::new(
            "problem",
            "closed-form needs GBM dynamics, power-law growth and linear processing",
        ));
    }

    // policy
    let policy = match task {
        Task::Simulate | Task::Evaluate => match &config.policy {
            None => {
                errors.push(FieldError::new("policy", "missing"));
                None
            }
            Some(p) => {
                check_policy(p, &problem, &mut errors);
                Some(p.clone())
            }
        },
        _ => None,
    };

    // grid
    let grid = if needs_grid(task, policy.as_ref()) {
        match &config.grid {
            None => {
                errors.push(FieldError::new("grid", "missing"));
                None
            }
            Some(g) => resolve_grid(g, &problem, &mut errors),
        }
    } else {
        None
    };
    if matches!(task, Task::SolveHjb | Task::Convergence) || grid.is_some() {
        check_solver_regime(&problem, &mut errors);
    }

    // Monte Carlo
    let mc_required = matches!(task, Task::Simulate | Task::Evaluate);
    let mc = if matches!(task, Task::Simulate | Task::Evaluate | Task::SweepSwitch) {
        match (&config.mc, mc_required) {
            (None, true) => {
                errors.push(FieldError::new("mc", "missing"));
                None
            }
            (section, _) => {
                let empty = McConfig {
                    n_paths: None,
                    dt: None,
                    seed: None,
                    r0: None,
                    t0: None,
                };
                let section = section.as_ref().unwrap_or(&empty);
                Some(resolve_mc(section, &problem, overrides.seed, &mut errors))
            }
        }
    } else {
        None
    };

    if let (Some(PolicyConfig::Feedback), Some((g, _)), Some(m)) = (&policy, &grid, &mc) {
        if !(m.r0 >= g.r_min && m.r0 <= g.r_max) {
            errors.push(FieldError::new(
                "mc.r0",
                "must lie inside the grid for a feedback policy",
            ));
        }
    }

    // sweep
    let sweep = (task == Task::SweepSwitch).then(|| {
        let s = config.sweep.clone().unwrap_or(SweepConfig {
            mode: None,
            n_points: None,
            t_min: None,
            t_max: None,
        });
        let mode = s.mode.unwrap_or(if problem.has_closed_form() {
            SweepMode::Analytic
        } else {
            SweepMode::MonteCarlo
        });
        if mode == SweepMode::Analytic && !problem.has_closed_form() {
            errors.push(FieldError::new(
                "sweep.mode",
                "analytic mode needs GBM, gamma = 1, linear processing and rho = 0",
            ));
        }
        let settings = SweepSettings {
            mode,
            n_points: s.n_points.unwrap_or(1000),
            t_min: s.t_min.unwrap_or(0.0),
            t_max: s.t_max.unwrap_or(horizon),
        };
        if settings.n_points < 1 {
            errors.push(FieldError::new("sweep.n_points", "must be >= 1"));
        }
        if !(settings.t_min >= 0.0 && settings.t_max <= horizon && settings.t_min <= settings.t_max)
        {
            errors.push(FieldError::new(
                "sweep",
                "need 0 <= t_min <= t_max <= horizon",
            ));
        }
        if let Some(mc) = &mc {
            if mc.t0 != 0.0 {
                errors.push(FieldError::new("mc.t0", "sweeps start at t = 0"));
            }
        }
        settings
    });

    // psi table
    let psi_dt = (task == Task::ClosedForm).then(|| {
        let dt = config
            .psi
            .as_ref()
            .and_then(|p| p.dt)
            .unwrap_or(1e-4 * horizon);
        if !(dt > 0.0 && dt <= horizon) {
            errors.push(FieldError::new("psi.dt", "must lie in (0, horizon]"));
        }
        dt
    });

    let output = overrides
        .output
        .clone()
        .or_else(|| config.output.clone())
        .unwrap_or_else(|| DEFAULT_OUTPUT.to_string());

    if !errors.is_empty() {
        return Err(errors);
    }

    let manifest = ExperimentConfig {
        schema_version: SCHEMA_VERSION,
        task: Some(task),
        problem: Some(problem.to_document()),
        grid: grid.map(|(g, auto_raise)| GridConfig {
            kind: Some(g.kind),
            r_min: Some(g.r_min),
            r_max: Some(g.r_max),
            n_space: Some(g.n_space),
            n_time: Some(g.n_time),
            auto_raise: Some(auto_raise),
        }),
        mc: mc.map(|m| McConfig {
            n_paths: Some(m.n_paths),
            dt: Some(m.dt),
            seed: Some(m.seed),
            r0: Some(m.r0),
            t0: Some(m.t0),
        }),
        policy: policy.clone(),
        sweep: sweep.map(|s| SweepConfig {
            mode: Some(s.mode),
            n_points: Some(s.n_points),
            t_min: Some(s.t_min),
            t_max: Some(s.t_max),
        }),
        psi: psi_dt.map(|dt| PsiConfig { dt: Some(dt) }),
        output: Some(output.clone()),
        toolkit_version: Some(repctl_core::VERSION.to_string()),
    };
    Ok(Resolved {
        task,
        problem,
        grid,
        mc,
        policy,
        sweep,
        psi_dt,
        output,
        manifest,
    })
}

fn check_policy(policy: &PolicyConfig, problem: &ControlProblem, errors: &mut Vec<FieldError>) {
    let eps = problem.epsilon;
    match policy {
        PolicyConfig::Constant { mu } => {
            if !(mu.abs() <= eps) {
                errors.push(FieldError::new(
                    "policy.mu",
                    format!("|mu| must not exceed epsilon = {eps}"),
                ));
            }
        }
        PolicyConfig::OptimalPulsing => {
            if problem.regime() != AnalyticRegime::PowerLawGbm {
                errors.push(FieldError::new(
                    "policy.kind",
                    "optimal-pulsing needs the power-law/GBM instance",
                ));
            }
        }
        PolicyConfig::Pulsing {
            switch_times,
            initial_sign,
        } => {
            if !matches!(initial_sign, -1 | 1) {
                errors.push(FieldError::new("policy.initial_sign", "must be +1 or -1"));
            }
            let ordered = switch_times.windows(2).all(|w| w[0] < w[1]);
            let inside = switch_times
                .iter()
                .all(|&t| (0.0..=problem.horizon).contains(&t));
            if !(ordered && inside) {
                errors.push(FieldError::new(
                    "policy.switch_times",
                    "must be increasing and inside [0, horizon]",
                ));
            }
        }
        PolicyConfig::Feedback => {}
    }
}

fn check_solver_regime(problem: &ControlProblem, errors: &mut Vec<FieldError>) {
    use repctl_core::{GrowthModel, ProcessingRate};
    if problem.processing != ProcessingRate::Linear {
        errors.push(FieldError::new(
            "problem.processing",
            "the HJB solvers need the linear rate",
        ));
    }
    match problem.dynamics {
        ReputationDynamics::Gbm { .. } => {
            if !matches!(problem.growth, GrowthModel::PowerLaw { .. }) {
                errors.push(FieldError::new(
                    "problem.growth",
                    "GBM solves need the power-law price",
                ));
            }
        }
        ReputationDynamics::NerloveArrow { .. } => {
            if !matches!(problem.growth, GrowthModel::MinkSeifert { .. }) {
                errors.push(FieldError::new(
                    "problem.growth",
                    "Nerlove-Arrow solves need the Mink-Seifert price",
                ));
            }
        }
    }
}

fn resolve_grid(
    g: &GridConfig,
    problem: &ControlProblem,
    errors: &mut Vec<FieldError>,
) -> Option<(SpatialGrid, bool)> {
    let n_space = g.n_space.unwrap_or(401);
    let base = match problem.dynamics {
        ReputationDynamics::Gbm { .. } => SpatialGrid::default_gbm(problem.horizon, n_space),
        ReputationDynamics::NerloveArrow { .. } => {
            SpatialGrid::default_nerlove_arrow(problem, n_space)
        }
    };
    let grid = SpatialGrid {
        kind: g.kind.unwrap_or(base.kind),
        r_min: g.r_min.unwrap_or(base.r_min),
        r_max: g.r_max.unwrap_or(base.r_max),
        n_space,
        n_time: g.n_time.unwrap_or(1),
        horizon: problem.horizon,
    };
    if let Err(e) = grid.validate() {
        errors.push(FieldError::new("grid", e.to_string()));
        return None;
    }
    match problem.dynamics {
        ReputationDynamics::Gbm { .. } if grid.kind != GridKind::LogUniform => {
            errors.push(FieldError::new(
                "grid.kind",
                "GBM solves need a log-uniform grid",
            ));
        }
        ReputationDynamics::NerloveArrow { .. }
            if grid.kind != GridKind::Uniform || grid.r_min != 0.0 =>
        {
            errors.push(FieldError::new(
                "grid",
                "Nerlove-Arrow solves need a uniform grid with r_min = 0",
            ));
        }
        _ => {}
    }
    let auto_raise = g.auto_raise.unwrap_or(true);
    let required = required_time_steps(problem, &grid, DEFAULT_CFL_TARGET);
    if !auto_raise && grid.n_time < required {
        errors.push(FieldError::new(
            "grid.n_time",
            format!(
                "{} steps violate the CFL bound; need at least {required}",
                grid.n_time
            ),
        ));
    }
    Some((grid, auto_raise))
}

fn resolve_mc(
    m: &McConfig,
    problem: &ControlProblem,
    seed_override: Option<u64>,
    errors: &mut Vec<FieldError>,
) -> McSettings {
    let settings = McSettings {
        n_paths: m.n_paths.unwrap_or(DEFAULT_N_PATHS),
        dt: m.dt.unwrap_or(DEFAULT_DT_FRACTION * problem.horizon),
        seed: seed_override.or(m.seed).unwrap_or(0),
        r0: m.r0.unwrap_or(1.0),
        t0: m.t0.unwrap_or(0.0),
    };
    if settings.n_paths < 2 {
        errors.push(FieldError::new("mc.n_paths", "must be >= 2"));
    }
    if !(settings.dt > 0.0 && settings.dt <= problem.horizon) {
        errors.push(FieldError::new("mc.dt", "must lie in (0, horizon]"));
    }
    let r0_ok = match problem.dynamics {
        ReputationDynamics::Gbm { .. } => settings.r0 > 0.0,
        ReputationDynamics::NerloveArrow { .. } => settings.r0 >= 0.0,
    };
    if !(r0_ok && settings.r0.is_finite()) {
        errors.push(FieldError::new(
            "mc.r0",
            "invalid initial reputation for the dynamics",
        ));
    }
    if !(settings.t0 >= 0.0 && settings.t0 < problem.horizon) {
        errors.push(FieldError::new("mc.t0", "must lie in [0, horizon)"));
    }
    settings
}
