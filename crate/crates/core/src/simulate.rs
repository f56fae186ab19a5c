//! Seeded reputation paths and Monte-Carlo estimates of the revenue functional
//! `E[int_t0^{T ^ tau0} e^{-rho s} p(mu_s) h(R_s) ds]`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::closed_form::one_switch_expected_value;
use crate::error::{domain, Error, Result};
use crate::model::{ControlProblem, ReputationDynamics};
use crate::parallel::{mean_and_variance, Execution};
use crate::policy::{ControlPolicy, PulsingPolicy};

/// Default Monte-Carlo path count.
pub const DEFAULT_N_PATHS: usize = 100_000;

/// Default time step as a fraction of the horizon.
pub const DEFAULT_DT_FRACTION: f64 = 1e-3;

/// One simulated reputation trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct Path {
    pub times: Vec<f64>,
    pub reputations: Vec<f64>,
    /// Control held on `[times[k], times[k+1])`; one shorter than `times`.
    pub controls: Vec<f64>,
    pub absorbed_at: Option<f64>,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MCEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub n_paths: usize,
    pub seed: u64,
    pub rho: f64,
    pub dt: f64,
}

impl MCEstimate {
    fn from_samples(samples: &[f64], opts: &McOptions, rho: f64) -> Self {
        let (mean, var) = mean_and_variance(samples);
        Self {
            mean,
            std_error: (var / samples.len() as f64).sqrt(),
            n_paths: samples.len(),
            seed: opts.seed,
            rho,
            dt: opts.dt,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McOptions {
    pub n_paths: usize,
    pub dt: f64,
    pub seed: u64,
    pub execution: Execution,
}

impl McOptions {
    pub fn new(n_paths: usize, dt: f64, seed: u64) -> Self {
        Self {
            n_paths,
            dt,
            seed,
            execution: Execution::default(),
        }
    }

    /// `DEFAULT_N_PATHS` paths with `dt = 1e-3 T`.
    pub fn defaults_for(horizon: f64, seed: u64) -> Self {
        Self::new(DEFAULT_N_PATHS, DEFAULT_DT_FRACTION * horizon, seed)
    }

    fn validate(&self) -> Result<()> {
        if self.n_paths < 2 {
            return Err(domain("n_paths", self.n_paths as f64));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(domain("dt", self.dt));
        }
        Ok(())
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of path `index` under base seed `base`; independent of anything else
/// so that sweeps share noise across their points.
pub fn derive_seed(base: u64, index: u64) -> u64 {
    splitmix64(splitmix64(base) ^ index)
}

fn step_count(span: f64, dt: f64) -> usize {
    let x = span / dt;
    let rounded = x.round();
    if (x - rounded).abs() <= 1e-9 * rounded.max(1.0) {
        rounded as usize
    } else {
        x.ceil() as usize
    }
}

/// Walks one path, handing each step `(t0, r0, t1, r1, mu)` to `visit`.
/// Returns the absorption time, if any.
#[allow(clippy::too_many_arguments)]
fn walk<F>(
    dynamics: &ReputationDynamics,
    policy: &ControlPolicy,
    r0: f64,
    t0: f64,
    horizon: f64,
    dt: f64,
    seed: u64,
    mut visit: F,
) -> Result<Option<f64>>
where
    F: FnMut(f64, f64, f64, f64, f64),
{
    if !(dt > 0.0) {
        return Err(domain("dt", dt));
    }
    if !(t0 >= 0.0 && t0 <= horizon) {
        return Err(domain("start time", t0));
    }
    match *dynamics {
        ReputationDynamics::Gbm { .. } if !(r0 > 0.0 && r0.is_finite()) => {
            return Err(domain("initial reputation", r0))
        }
        ReputationDynamics::NerloveArrow { .. } if !(r0 >= 0.0 && r0.is_finite()) => {
            return Err(domain("initial reputation", r0))
        }
        _ => {}
    }
    if let ReputationDynamics::NerloveArrow {
        absorbing_at_zero: true,
        ..
    } = *dynamics
    {
        if r0 == 0.0 {
            return Ok(Some(t0));
        }
    }
    let n = step_count(horizon - t0, dt);
    if n == 0 {
        return Ok(None);
    }
    let h = (horizon - t0) / n as f64;
    let sqrt_h = h.sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut r = r0;
    for k in 0..n {
        let t = t0 + k as f64 * h;
        let t_next = if k + 1 == n {
            horizon
        } else {
            t0 + (k + 1) as f64 * h
        };
        let mu = policy.control(r, t)?;
        let z: f64 = StandardNormal.sample(&mut rng);
        match *dynamics {
            ReputationDynamics::Gbm { sigma } => {
                let next = r * ((mu - 0.5 * sigma * sigma) * h + sigma * sqrt_h * z).exp();
                visit(t, r, t_next, next, mu);
                r = next;
            }
            ReputationDynamics::NerloveArrow {
                kappa,
                sigma,
                absorbing_at_zero,
            } => {
                let next = r + (mu - kappa * r) * h + sigma * sqrt_h * z;
                if absorbing_at_zero && next <= 0.0 {
                    let tau = t + h * r / (r - next);
                    visit(t, r, tau, 0.0, mu);
                    return Ok(Some(tau));
                }
                visit(t, r, t_next, next, mu);
                r = next;
            }
        }
    }
    Ok(None)
}

/// Simulates one path. GBM steps use the exact lognormal update with the
/// control frozen at the left end of each step; Nerlove-Arrow uses
/// Euler-Maruyama and stops at the interpolated zero crossing.
pub fn simulate_path(
    dynamics: &ReputationDynamics,
    policy: &ControlPolicy,
    r0: f64,
    t0: f64,
    horizon: f64,
    dt: f64,
    seed: u64,
) -> Result<Path> {
    let mut times = vec![t0];
    let mut reputations = vec![r0];
    let mut controls = Vec::new();
    let absorbed_at = walk(
        dynamics,
        policy,
        r0,
        t0,
        horizon,
        dt,
        seed,
        |_, _, t1, r1, mu| {
            times.push(t1);
            reputations.push(r1);
            controls.push(mu);
        },
    )?;
    Ok(Path {
        times,
        reputations,
        controls,
        absorbed_at,
        seed,
    })
}

/// Trapezoid revenue of a single path seeded with `seed`.
pub fn path_revenue(
    problem: &ControlProblem,
    policy: &ControlPolicy,
    r0: f64,
    t0: f64,
    dt: f64,
    seed: u64,
) -> Result<f64> {
    let mut total = 0.0;
    walk(
        &problem.dynamics,
        policy,
        r0,
        t0,
        problem.horizon,
        dt,
        seed,
        |ta, ra, tb, rb, mu| {
            let fa = problem.revenue_rate(ra.max(0.0), mu, ta);
            let fb = problem.revenue_rate(rb.max(0.0), mu, tb);
            total += 0.5 * (tb - ta) * (fa + fb);
        },
    )?;
    Ok(total)
}

/// Per-path revenues in path-index order.
pub fn path_revenues(
    problem: &ControlProblem,
    policy: &ControlPolicy,
    r0: f64,
    t0: f64,
    opts: &McOptions,
) -> Result<Vec<f64>> {
    opts.validate()?;
    if policy.bound() > problem.epsilon * (1.0 + 1e-12) {
        return Err(domain("policy bound", policy.bound()));
    }
    opts.execution
        .map_indexed(opts.n_paths, |i| {
            path_revenue(
                problem,
                policy,
                r0,
                t0,
                opts.dt,
                derive_seed(opts.seed, i as u64),
            )
        })
        .into_iter()
        .collect()
}

pub fn evaluate_policy_mc(
    problem: &ControlProblem,
    policy: &ControlPolicy,
    r0: f64,
    t0: f64,
    opts: &McOptions,
) -> Result<MCEstimate> {
    let samples = path_revenues(problem, policy, r0, t0, opts)?;
    Ok(MCEstimate::from_samples(&samples, opts, problem.rho))
}

/// Two policies evaluated on common random numbers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PairedComparison {
    pub first: MCEstimate,
    pub second: MCEstimate,
    /// Mean of `first - second` path by path.
    pub diff_mean: f64,
    /// Standard error of the paired difference.
    pub diff_std_error: f64,
}

pub fn compare_policies(
    problem: &ControlProblem,
    first: &ControlPolicy,
    second: &ControlPolicy,
    r0: f64,
    t0: f64,
    opts: &McOptions,
) -> Result<PairedComparison> {
    let a = path_revenues(problem, first, r0, t0, opts)?;
    let b = path_revenues(problem, second, r0, t0, opts)?;
    let diffs: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x - y).collect();
    let (diff_mean, var) = mean_and_variance(&diffs);
    Ok(PairedComparison {
        first: MCEstimate::from_samples(&a, opts, problem.rho),
        second: MCEstimate::from_samples(&b, opts, problem.rho),
        diff_mean,
        diff_std_error: (var / diffs.len() as f64).sqrt(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepMode {
    /// Exact expectation; needs the power-law/GBM instance with `gamma = 1`, `rho = 0`.
    Analytic,
    /// Common-random-number Monte Carlo.
    MonteCarlo,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepRow {
    pub t_switch: f64,
    pub mean: f64,
    /// Zero in analytic mode.
    pub std_error: f64,
}

/// Evaluates the single-switch family (`+eps` until `t_switch`, `-eps` after)
/// from `(R0, t = 0)`.
pub fn sweep_switch_time(
    problem: &ControlProblem,
    r0: f64,
    switch_times: &[f64],
    mode: SweepMode,
    opts: &McOptions,
) -> Result<Vec<SweepRow>> {
    match mode {
        SweepMode::Analytic => {
            if !problem.has_closed_form() {
                return Err(Error::Unsupported(
                    "analytic sweep needs GBM, h(R) = R, linear rate and rho = 0".into(),
                ));
            }
            Ok(switch_times
                .iter()
                .map(|&s| SweepRow {
                    t_switch: s,
                    mean: one_switch_expected_value(r0, 0.0, s, problem.epsilon, problem.horizon),
                    std_error: 0.0,
                })
                .collect())
        }
        SweepMode::MonteCarlo => switch_times
            .iter()
            .map(|&s| {
                let policy =
                    ControlPolicy::Pulsing(PulsingPolicy::single_switch(problem.epsilon, s));
                let est = evaluate_policy_mc(problem, &policy, r0, 0.0, opts)?;
                Ok(SweepRow {
                    t_switch: s,
                    mean: est.mean,
                    std_error: est.std_error,
                })
            })
            .collect(),
    }
}

/// Row with the largest mean; the earliest wins ties.
pub fn sweep_argmax(rows: &[SweepRow]) -> Option<&SweepRow> {
    rows.iter()
        .fold(None, |best: Option<&SweepRow>, row| match best {
            Some(b) if b.mean >= row.mean => Some(b),
            _ => Some(row),
        })
}

/// `n` evenly spaced points on `[lo, hi]`, end points included.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..n)
            .map(|k| {
                if k == n - 1 {
                    hi
                } else {
                    lo + (hi - lo) * k as f64 / (n - 1) as f64
                }
            })
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::closed_form::{expected_value_constant_mu, switch_time};
    use crate::model::{GrowthModel, ProcessingRate};

    fn power_problem(sigma: f64) -> ControlProblem {
        ControlProblem::new(
            1.0,
            0.0,
            0.1,
            ReputationDynamics::Gbm { sigma },
            GrowthModel::PowerLaw { gamma: 1.0 },
            ProcessingRate::Linear,
        )
        .unwrap()
    }

    fn na_problem(sigma: f64) -> ControlProblem {
        ControlProblem::new(
            1.0,
            0.0,
            0.1,
            ReputationDynamics::nerlove_arrow(0.5, sigma),
            GrowthModel::MinkSeifert { a: 1.0, c: 2.5 },
            ProcessingRate::Linear,
        )
        .unwrap()
    }

    #[test]
    fn noiseless_gbm_path() {
        let path = simulate_path(
            &ReputationDynamics::Gbm { sigma: 0.0 },
            &ControlPolicy::Constant(-0.1),
            1.0,
            0.0,
            1.0,
            1e-3,
            7,
        )
        .unwrap();
        assert_eq!(path.times.len(), 1001);
        assert_eq!(path.controls.len(), 1000);
        assert_eq!(*path.times.last().unwrap(), 1.0);
        let end = *path.reputations.last().unwrap();
        assert!((end - (-0.1f64).exp()).abs() < 1e-12);
        for (t, r) in path.times.iter().zip(&path.reputations) {
            assert!((r - (-0.1 * t).exp()).abs() < 1e-12);
        }
    }

    #[test]
    fn noiseless_nerlove_arrow_path() {
        let dynamics = ReputationDynamics::nerlove_arrow(1.0, 0.0);
        let path = simulate_path(
            &dynamics,
            &ControlPolicy::Constant(0.0),
            1.0,
            0.0,
            1.0,
            1e-3,
            7,
        )
        .unwrap();
        assert!(path.absorbed_at.is_none());
        for (t, r) in path.times.iter().zip(&path.reputations) {
            assert!((r - (-t).exp()).abs() < 1e-3, "t={t}");
        }
    }

    #[test]
    fn invalid_starting_points() {
        let gbm = ReputationDynamics::Gbm { sigma: 0.2 };
        let c = ControlPolicy::Constant(0.0);
        assert!(simulate_path(&gbm, &c, 0.0, 0.0, 1.0, 1e-2, 1).is_err());
        let na = ReputationDynamics::nerlove_arrow(0.5, 0.3);
        assert!(simulate_path(&na, &c, -1.0, 0.0, 1.0, 1e-2, 1).is_err());
        assert!(simulate_path(&na, &c, 1.0, 0.0, 1.0, 0.0, 1).is_err());
    }

    #[test]
    fn absorption_truncates_path() {
        let na = ReputationDynamics::nerlove_arrow(0.5, 2.0);
        let c = ControlPolicy::Constant(-0.1);
        let mut absorbed = 0;
        for seed in 0..50 {
            let path = simulate_path(&na, &c, 0.2, 0.0, 1.0, 1e-3, seed).unwrap();
            assert!(path.times.windows(2).all(|w| w[1] > w[0]));
            if let Some(tau) = path.absorbed_at {
                absorbed += 1;
                assert_eq!(*path.times.last().unwrap(), tau);
                assert_eq!(*path.reputations.last().unwrap(), 0.0);
                assert!(path.reputations[..path.reputations.len() - 1]
                    .iter()
                    .all(|&r| r > 0.0));
            }
        }
        assert!(absorbed > 10);

        let immediate = simulate_path(&na, &c, 0.0, 0.0, 1.0, 1e-3, 3).unwrap();
        assert_eq!(immediate.absorbed_at, Some(0.0));
        assert_eq!(immediate.times, [0.0]);
    }

    #[test]
    fn paths_are_reproducible_and_match_ensemble_seeds() {
        let gbm = ReputationDynamics::Gbm { sigma: 0.3 };
        let pol = ControlPolicy::Pulsing(PulsingPolicy::single_switch(0.1, 0.3));
        let a = simulate_path(&gbm, &pol, 1.0, 0.0, 1.0, 1e-2, 99).unwrap();
        let b = simulate_path(&gbm, &pol, 1.0, 0.0, 1.0, 1e-2, 99).unwrap();
        assert_eq!(a, b);
        let c = simulate_path(&gbm, &pol, 1.0, 0.0, 1.0, 1e-2, 100).unwrap();
        assert_ne!(a.reputations, c.reputations);

        let p = power_problem(0.3);
        let opts = McOptions::new(4, 1e-2, 5);
        let revs = path_revenues(&p, &pol, 1.0, 0.0, &opts).unwrap();
        let direct = path_revenue(&p, &pol, 1.0, 0.0, 1e-2, derive_seed(5, 2)).unwrap();
        assert_eq!(revs[2], direct);
    }

    #[test]
    fn noiseless_estimate_has_zero_error() {
        let p = power_problem(0.0);
        let est = evaluate_policy_mc(
            &p,
            &ControlPolicy::Constant(-0.1),
            1.0,
            0.0,
            &McOptions::new(64, 1e-3, 1),
        )
        .unwrap();
        assert_eq!(est.std_error, 0.0);
        let exact = expected_value_constant_mu(1.0, 0.0, -0.1, 1.0);
        assert!((est.mean - exact).abs() < 1e-7);

        let na = na_problem(0.0);
        let est = evaluate_policy_mc(
            &na,
            &ControlPolicy::Constant(0.1),
            1.0,
            0.0,
            &McOptions::new(16, 1e-3, 1),
        )
        .unwrap();
        assert_eq!(est.std_error, 0.0);
    }

    #[test]
    fn constant_policy_estimate_matches_expectation() {
        let p = power_problem(0.2);
        let est = evaluate_policy_mc(
            &p,
            &ControlPolicy::Constant(-0.1),
            1.0,
            0.0,
            &McOptions::new(20_000, 1e-2, 11),
        )
        .unwrap();
        let exact = expected_value_constant_mu(1.0, 0.0, -0.1, 1.0);
        assert!(
            (est.mean - exact).abs() < 3.0 * est.std_error,
            "{est:?} vs {exact}"
        );
    }

    #[test]
    fn absorbed_start_is_exactly_zero() {
        let est = evaluate_policy_mc(
            &na_problem(0.3),
            &ControlPolicy::Constant(0.1),
            0.0,
            0.0,
            &McOptions::new(100, 1e-3, 1),
        )
        .unwrap();
        assert_eq!(est.mean, 0.0);
        assert_eq!(est.std_error, 0.0);
    }

    #[test]
    fn policy_bound_enforced() {
        let err = evaluate_policy_mc(
            &power_problem(0.2),
            &ControlPolicy::Constant(0.5),
            1.0,
            0.0,
            &McOptions::new(10, 1e-2, 1),
        );
        assert!(err.is_err());
        let err = evaluate_policy_mc(
            &power_problem(0.2),
            &ControlPolicy::Constant(0.0),
            1.0,
            0.0,
            &McOptions::new(1, 1e-2, 1),
        );
        assert!(err.is_err());
    }

    #[test]
    fn execution_modes_bit_identical() {
        let p = na_problem(0.3);
        let pol = ControlPolicy::Constant(0.1);
        let mut opts = McOptions::new(2_000, 1e-2, 42);
        opts.execution = Execution::Sequential;
        let a = evaluate_policy_mc(&p, &pol, 1.0, 0.0, &opts).unwrap();
        opts.execution = Execution::Parallel;
        let b = evaluate_policy_mc(&p, &pol, 1.0, 0.0, &opts).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn analytic_sweep_peaks_at_switch_time() {
        let p = power_problem(0.2);
        let grid = linspace(0.0, 1.0, 1001);
        let rows = sweep_switch_time(
            &p,
            1.0,
            &grid,
            SweepMode::Analytic,
            &McOptions::new(2, 1e-3, 0),
        )
        .unwrap();
        let best = sweep_argmax(&rows).unwrap();
        assert!((best.t_switch - switch_time(0.1, 1.0)).abs() <= 1e-3);
        assert!(sweep_switch_time(
            &na_problem(0.3),
            1.0,
            &grid,
            SweepMode::Analytic,
            &McOptions::new(2, 1e-3, 0)
        )
        .is_err());
    }

    #[test]
    fn linspace_endpoints() {
        let xs = linspace(0.0, 1.0, 11);
        assert_eq!(xs.len(), 11);
        assert_eq!(xs[0], 0.0);
        assert_eq!(xs[10], 1.0);
        assert_eq!(linspace(2.0, 3.0, 1), [2.0]);
    }

    #[test]
    fn step_count_tolerates_rounding() {
        assert_eq!(step_count(1.0, 1e-3), 1000);
        assert_eq!(step_count(1.0 - 0.046_898, 1e-3), 954);
        assert_eq!(step_count(0.3, 0.1), 3);
    }
}
