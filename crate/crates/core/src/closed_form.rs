//! Analytic results for the power-law / GBM model.
//!
//! With `h(R) = R^gamma`, GBM reputation and the linear processing rate the
//! value function separates as `v(R, t) = e^{-rho t} psi(t) R^gamma`, where
//! `psi` solves the terminal-value problem
//!
//! ```text
//! psi'(t) = -(1 - rho psi + sigma^2/2 gamma (gamma - 1) psi + epsilon |gamma psi - 1|),
//! psi(T)  = 0,
//! ```
//!
//! and the optimal control is `epsilon * sgn(gamma psi(t) - 1)`. For
//! `gamma = 1, rho = 0` this has an elementary closed form; otherwise it is
//! integrated numerically by [`integrate_psi`].

use serde::Serialize;

use crate::error::{domain, Error, Result};
use crate::policy::PulsingPolicy;

/// Tolerance used to bracket the crossing time of `gamma psi = 1`.
const CROSSING_TOL: f64 = 1e-12;

/// Parameters of the `psi` terminal-value problem.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PsiParams {
    pub gamma: f64,
    pub rho: f64,
    pub sigma: f64,
    pub epsilon: f64,
    pub horizon: f64,
}

impl PsiParams {
    /// `1 - rho psi + sigma^2/2 gamma (gamma-1) psi + epsilon * branch * (gamma psi - 1)`
    /// with the absolute value resolved to `branch = +-1`. This is `-psi'(t)`.
    #[inline]
    fn backward_rate(&self, psi: f64, branch: f64) -> f64 {
        let ito = 0.5 * self.sigma * self.sigma * self.gamma * (self.gamma - 1.0);
        1.0 - self.rho * psi + ito * psi + self.epsilon * branch * (self.gamma * psi - 1.0)
    }

    #[inline]
    fn backward_rate_abs(&self, psi: f64) -> f64 {
        let ito = 0.5 * self.sigma * self.sigma * self.gamma * (self.gamma - 1.0);
        1.0 - self.rho * psi + ito * psi + self.epsilon * (self.gamma * psi - 1.0).abs()
    }

    /// Branch of `|gamma psi - 1|` active just after `psi` when moving backward in time.
    fn branch(&self, psi: f64) -> f64 {
        let gap = self.gamma * psi - 1.0;
        if gap > 0.0 {
            1.0
        } else if gap < 0.0 {
            -1.0
        } else if self.backward_rate_abs(psi) >= 0.0 {
            1.0
        } else {
            -1.0
        }
    }

    /// One classical RK4 step of length `h` backward in time on a fixed branch.
    fn rk4(&self, psi: f64, h: f64, branch: f64) -> f64 {
        let k1 = self.backward_rate(psi, branch);
        let k2 = self.backward_rate(psi + 0.5 * h * k1, branch);
        let k3 = self.backward_rate(psi + 0.5 * h * k2, branch);
        let k4 = self.backward_rate(psi + h * k3, branch);
        psi + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum PsiKind {
    /// Elementary closed form, `gamma = 1, rho = 0`.
    ClosedForm10,
    /// Uniform-step RK4 table.
    NumericGrid,
}

/// `psi` as a closed form or as a uniform time table.
#[derive(Debug, Clone, PartialEq)]
pub struct PsiSolution {
    pub params: PsiParams,
    pub kind: PsiKind,
    step: f64,
    values: Vec<f64>,
    switch_time: Option<f64>,
}

impl PsiSolution {
    /// Closed-form `psi` for `gamma = 1, rho = 0`.
    pub fn closed_form_10(sigma: f64, epsilon: f64, horizon: f64) -> Result<Self> {
        check_epsilon(epsilon)?;
        if !(horizon > 0.0) {
            return Err(domain("horizon", horizon));
        }
        let t_star = switch_time(epsilon, horizon);
        Ok(Self {
            params: PsiParams {
                gamma: 1.0,
                rho: 0.0,
                sigma,
                epsilon,
                horizon,
            },
            kind: PsiKind::ClosedForm10,
            step: 0.0,
            values: Vec::new(),
            switch_time: (t_star > 0.0).then_some(t_star),
        })
    }

    /// Time where `gamma psi` crosses 1, if it does so inside `(0, T)`.
    pub fn switch_time(&self) -> Option<f64> {
        self.switch_time
    }

    pub fn horizon(&self) -> f64 {
        self.params.horizon
    }

    pub fn value(&self, t: f64) -> Result<f64> {
        let horizon = self.params.horizon;
        if !(0.0..=horizon).contains(&t) {
            return Err(domain("time", t));
        }
        match self.kind {
            PsiKind::ClosedForm10 => psi_closed_form_10(t, self.params.epsilon, horizon),
            PsiKind::NumericGrid => {
                let n = self.values.len() - 1;
                let k = ((t / self.step) as usize).min(n - 1);
                let (t0, t1) = (k as f64 * self.step, (k + 1) as f64 * self.step);
                let (y0, y1) = (self.values[k], self.values[k + 1]);
                let (d0, d1) = (
                    -self.params.backward_rate_abs(y0),
                    -self.params.backward_rate_abs(y1),
                );
                Ok(hermite(t0, t1, y0, y1, d0, d1, t))
            }
        }
    }

    /// `(t, psi)` pairs. Numeric solutions return their own grid and ignore `dt`.
    pub fn table(&self, dt: f64) -> Vec<(f64, f64)> {
        match self.kind {
            PsiKind::NumericGrid => self
                .values
                .iter()
                .enumerate()
                .map(|(k, &v)| (k as f64 * self.step, v))
                .collect(),
            PsiKind::ClosedForm10 => {
                let horizon = self.params.horizon;
                let n = (horizon / dt).ceil().max(1.0) as usize;
                (0..=n)
                    .map(|k| {
                        let t = if k == n {
                            horizon
                        } else {
                            horizon * k as f64 / n as f64
                        };
                        (
                            t,
                            psi_closed_form_10(t, self.params.epsilon, horizon).unwrap(),
                        )
                    })
                    .collect()
            }
        }
    }

    /// Checks the stored grid (or a fine sampling of the closed form) for strict decrease.
    pub fn is_strictly_decreasing(&self) -> bool {
        let table = self.table(self.params.horizon / 1000.0);
        table.windows(2).all(|w| w[1].1 < w[0].1)
    }
}

fn hermite(t0: f64, t1: f64, y0: f64, y1: f64, d0: f64, d1: f64, t: f64) -> f64 {
    let h = t1 - t0;
    let s = (t - t0) / h;
    let s2 = s * s;
    let s3 = s2 * s;
    (2.0 * s3 - 3.0 * s2 + 1.0) * y0
        + (s3 - 2.0 * s2 + s) * h * d0
        + (-2.0 * s3 + 3.0 * s2) * y1
        + (s3 - s2) * h * d1
}

fn check_epsilon(epsilon: f64) -> Result<()> {
    if (0.0..1.0).contains(&epsilon) {
        Ok(())
    } else {
        Err(domain("epsilon", epsilon))
    }
}

/// Closed-form `psi_{1,0}(t)`; `epsilon = 0` returns the limit `T - t`.
pub fn psi_closed_form_10(t: f64, epsilon: f64, horizon: f64) -> Result<f64> {
    check_epsilon(epsilon)?;
    if !(0.0..=horizon).contains(&t) {
        return Err(domain("time", t));
    }
    let remaining = horizon - t;
    if epsilon == 0.0 {
        return Ok(remaining);
    }
    let eps = epsilon;
    if t >= horizon - eps.ln_1p() / eps {
        Ok((1.0 + eps) / eps * -(-eps * remaining).exp_m1())
    } else {
        Ok(((eps * remaining).exp_m1() + eps * eps) / (eps * (1.0 + eps)))
    }
}

/// Optimal switch from advertising to processing, `max(0, T - ln(1+eps)/eps)`.
pub fn switch_time(epsilon: f64, horizon: f64) -> f64 {
    let window = if epsilon == 0.0 {
        1.0
    } else {
        epsilon.ln_1p() / epsilon
    };
    (horizon - window).max(0.0)
}

/// `v(R, t) = e^{-rho t} psi(t) R^gamma`.
pub fn value_power_law(r: f64, t: f64, psi: &PsiSolution) -> Result<f64> {
    if !(r > 0.0) {
        return Err(domain("reputation", r));
    }
    let p = &psi.params;
    Ok((-p.rho * t).exp() * psi.value(t)? * r.powf(p.gamma))
}

/// Integrates the `psi` equation backward from `psi(T) = 0` with RK4.
///
/// The step is shortened to `T / ceil(T / dt)`. When a step crosses
/// `gamma psi = 1` the crossing time is bisected to `1e-12` and the step is
/// finished on the other branch of the absolute value, so each branch is
/// integrated on its smooth piece only.
pub fn integrate_psi(
    gamma: f64,
    rho: f64,
    sigma: f64,
    epsilon: f64,
    horizon: f64,
    dt: f64,
) -> Result<PsiSolution> {
    check_epsilon(epsilon)?;
    if !(dt > 0.0) {
        return Err(domain("dt", dt));
    }
    if !(horizon > 0.0) {
        return Err(domain("horizon", horizon));
    }
    if !(gamma > 0.0 && gamma <= 1.0) {
        return Err(domain("gamma", gamma));
    }
    let params = PsiParams {
        gamma,
        rho,
        sigma,
        epsilon,
        horizon,
    };
    let n = (horizon / dt).ceil().max(1.0) as usize;
    let h = horizon / n as f64;
    let mut values = vec![0.0; n + 1];
    let mut switch = None;
    let mut psi = 0.0;
    for k in (0..n).rev() {
        let t_hi = (k + 1) as f64 * h;
        let branch = params.branch(psi);
        let mut next = params.rk4(psi, h, branch);
        if (gamma * next - 1.0) * branch < 0.0 {
            let (mut lo, mut hi) = (0.0, h);
            while hi - lo > CROSSING_TOL {
                let mid = 0.5 * (lo + hi);
                if (gamma * params.rk4(psi, mid, branch) - 1.0) * branch < 0.0 {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            let tau = 0.5 * (lo + hi);
            if switch.is_none() {
                switch = Some(t_hi - tau);
            }
            next = params.rk4(1.0 / gamma, h - tau, -branch);
        }
        if !next.is_finite() {
            return Err(Error::IntegrationFailure { time: k as f64 * h });
        }
        values[k] = next;
        psi = next;
    }
    Ok(PsiSolution {
        params,
        kind: PsiKind::NumericGrid,
        step: h,
        values,
        switch_time: switch,
    })
}

/// `+epsilon` while `gamma psi(t) > 1`, `-epsilon` otherwise (ties process).
///
/// `psi` is decreasing in `t`, so there is at most one switch and it goes
/// from advertising to processing.
pub fn optimal_pulsing_policy(psi: &PsiSolution) -> PulsingPolicy {
    let p = &psi.params;
    let psi0 = psi.value(0.0).expect("t = 0 is always in range");
    if p.gamma * psi0 > 1.0 {
        match psi.switch_time {
            Some(s) => PulsingPolicy::single_switch(p.epsilon, s),
            None => PulsingPolicy::constant_sign(p.epsilon, 1),
        }
    } else {
        PulsingPolicy::constant_sign(p.epsilon, -1)
    }
}

/// `E[int_t^T (1 - mu) R_s ds]` for constant `mu` under GBM, `gamma = 1, rho = 0`.
pub fn expected_value_constant_mu(r: f64, t: f64, mu: f64, horizon: f64) -> f64 {
    let remaining = horizon - t;
    if mu == 0.0 {
        r * remaining
    } else {
        (1.0 - mu) * r * (mu * remaining).exp_m1() / mu
    }
}

/// Upper bound on `v(R, t)` from the GBM comparison process with drift `+epsilon`:
/// `(1+eps) R^gamma int_t^T e^{-rho s} e^{(gamma eps + sigma^2/2 gamma(gamma-1))(s-t)} ds`.
pub fn lemma_upper_bound(
    r: f64,
    t: f64,
    gamma: f64,
    rho: f64,
    sigma: f64,
    epsilon: f64,
    horizon: f64,
) -> f64 {
    let remaining = horizon - t;
    if remaining <= 0.0 {
        return 0.0;
    }
    let growth = gamma * epsilon + 0.5 * sigma * sigma * gamma * (gamma - 1.0) - rho;
    let integral = if growth == 0.0 {
        remaining
    } else {
        (growth * remaining).exp_m1() / growth
    };
    (1.0 + epsilon) * r.max(0.0).powf(gamma) * (-rho * t).exp() * integral
}

/// Expected revenue on `[0, 1]` of advertising until `t` and processing after,
/// `gamma = 1, rho = 0`.
pub fn one_switch_objective(r: f64, t: f64, epsilon: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&t) {
        return Err(domain("switch time", t));
    }
    let eps = epsilon;
    let growth = (eps * t).exp_m1();
    // e^{eps t} - e^{2 eps t - eps} = -e^{eps t} (e^{eps (t-1)} - 1)
    let tail = -(eps * t).exp() * (eps * (t - 1.0)).exp_m1();
    Ok(r * ((1.0 - eps) / eps * growth + (1.0 + eps) / eps * tail))
}

/// Same objective on a general window `[t0, T]` with switch at `switch`.
pub fn one_switch_expected_value(r: f64, t0: f64, switch: f64, epsilon: f64, horizon: f64) -> f64 {
    let s = switch.clamp(t0, horizon);
    let lead = s - t0;
    let tail = horizon - s;
    let eps = epsilon;
    if eps == 0.0 {
        return r * (horizon - t0);
    }
    let advertise = (1.0 - eps) / eps * (eps * lead).exp_m1();
    let process = (1.0 + eps) / eps * (eps * lead).exp() * -(-eps * tail).exp_m1();
    r * (advertise + process)
}

/// Maximizer of [`one_switch_objective`] and its value per unit reputation.
pub fn one_switch_optimum(epsilon: f64) -> (f64, f64) {
    let eps = epsilon;
    let t1 = 1.0 - eps.ln_1p() / eps;
    let value = (eps.exp_m1() + eps * eps) / (eps * (1.0 + eps));
    (t1, value)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    const EPS: f64 = 0.1;

    // Independent evaluations with plain exp/ln, no shared code path.
    fn t_star_oracle(eps: f64, horizon: f64) -> f64 {
        horizon - (1.0 + eps).ln() / eps
    }

    #[test]
    fn psi_closed_form_anchor_values() {
        assert_eq!(psi_closed_form_10(1.0, EPS, 1.0).unwrap(), 0.0);
        let ts = t_star_oracle(EPS, 1.0);
        assert_abs_diff_eq!(ts, 0.046_898_2, epsilon = 1e-7);
        assert_abs_diff_eq!(
            psi_closed_form_10(ts, EPS, 1.0).unwrap(),
            1.0,
            epsilon = 1e-12
        );
        let direct = ((0.1f64).exp() - 0.99) / 0.11;
        assert_abs_diff_eq!(
            psi_closed_form_10(0.0, EPS, 1.0).unwrap(),
            direct,
            epsilon = 1e-14
        );
        assert_abs_diff_eq!(direct, 1.047_008_3, epsilon = 1e-7);
    }

    #[test]
    fn psi_closed_form_rejects_out_of_range_time() {
        assert!(psi_closed_form_10(-0.1, EPS, 1.0).is_err());
        assert!(psi_closed_form_10(1.1, EPS, 1.0).is_err());
        assert!(psi_closed_form_10(0.5, 1.0, 1.0).is_err());
    }

    #[test]
    fn branches_agree_at_switch() {
        for i in 1..=90 {
            let eps = i as f64 / 100.0;
            let window = (1.0 + eps).ln() / eps;
            for horizon in [window + 1e-3, window + 0.5, 3.0, 10.0] {
                let ts = horizon - window;
                let late = (1.0 + eps) / eps * (1.0 - (-eps * (horizon - ts)).exp());
                let early =
                    ((eps * (horizon - ts)).exp() - (1.0 - eps * eps)) / (eps * (1.0 + eps));
                assert_abs_diff_eq!(late, early, epsilon = 1e-12);
                assert_abs_diff_eq!(late, 1.0, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn switch_time_values() {
        assert_abs_diff_eq!(switch_time(EPS, 1.0), 0.046_898_2, epsilon = 1e-7);
        assert_eq!(switch_time(EPS, 0.5), 0.0);
        assert_abs_diff_eq!(switch_time(1e-9, 2.0), 1.0, epsilon = 1e-8);
        assert_eq!(switch_time(0.0, 2.0), 1.0);
    }

    #[test]
    fn value_power_law_cases() {
        let psi = PsiSolution::closed_form_10(0.2, EPS, 1.0).unwrap();
        assert_eq!(value_power_law(1.0, 1.0, &psi).unwrap(), 0.0);
        assert_abs_diff_eq!(
            value_power_law(2.0, 0.0, &psi).unwrap(),
            2.094_016_6,
            epsilon = 1e-7
        );
        assert!(value_power_law(0.0, 0.5, &psi).is_err());

        let num = integrate_psi(0.5, 0.0, 0.2, EPS, 1.0, 1e-4).unwrap();
        assert_abs_diff_eq!(
            value_power_law(4.0, 0.0, &num).unwrap(),
            2.0 * num.value(0.0).unwrap(),
            epsilon = 1e-14
        );
    }

    #[test]
    fn numeric_psi_matches_closed_form() {
        let num = integrate_psi(1.0, 0.0, 0.7, EPS, 1.0, 1e-4).unwrap();
        for (t, v) in num.table(0.0) {
            let exact = psi_closed_form_10(t, EPS, 1.0).unwrap();
            assert!((v - exact).abs() <= 1e-8, "t={t} {v} vs {exact}");
        }
        let ts = num.switch_time().unwrap();
        assert_abs_diff_eq!(ts, t_star_oracle(EPS, 1.0), epsilon = 1e-11);
        // interpolation between nodes
        for t in [0.012_345, 0.046_9, 0.333_33, 0.999_99] {
            assert_abs_diff_eq!(
                num.value(t).unwrap(),
                psi_closed_form_10(t, EPS, 1.0).unwrap(),
                epsilon = 1e-9
            );
        }
    }

    #[test]
    fn zero_epsilon_gives_remaining_time() {
        let num = integrate_psi(1.0, 0.0, 0.2, 0.0, 1.0, 1e-3).unwrap();
        for (t, v) in num.table(0.0) {
            assert_abs_diff_eq!(v, 1.0 - t, epsilon = 1e-12);
        }
    }

    #[test]
    fn general_psi_contract() {
        let num = integrate_psi(0.5, 0.05, 0.2, EPS, 1.0, 1e-3).unwrap();
        assert_eq!(num.kind, PsiKind::NumericGrid);
        assert_eq!(num.value(1.0).unwrap(), 0.0);
        assert!(num.is_strictly_decreasing());
        // gamma psi = 1 with gamma = 1/2 needs psi = 2, beyond a horizon of 1
        assert_eq!(num.switch_time(), None);
    }

    #[test]
    fn integrate_psi_rejects_bad_inputs() {
        assert!(integrate_psi(1.0, 0.0, 0.2, EPS, 1.0, 0.0).is_err());
        assert!(integrate_psi(1.0, 0.0, 0.2, 1.2, 1.0, 1e-3).is_err());
        assert!(integrate_psi(1.0, 1e308, 0.2, EPS, 1e10, 1e8).is_err());
    }

    #[test]
    fn optimal_policy_shapes() {
        let psi = PsiSolution::closed_form_10(0.2, EPS, 1.0).unwrap();
        let pol = optimal_pulsing_policy(&psi);
        assert_eq!(pol.initial_sign, 1);
        assert_eq!(pol.switch_times.len(), 1);
        assert_abs_diff_eq!(pol.switch_times[0], 0.046_898_2, epsilon = 1e-7);
        assert_eq!(pol.control_at(0.0), EPS);
        assert_eq!(pol.control_at(1.0), -EPS);

        let short = PsiSolution::closed_form_10(0.2, EPS, 0.5).unwrap();
        let pol = optimal_pulsing_policy(&short);
        assert!(pol.switch_times.is_empty());
        assert_eq!(pol.control_at(0.0), -EPS);

        let num = integrate_psi(1.0, 0.0, 0.2, EPS, 1.0, 1e-4).unwrap();
        let pol_num = optimal_pulsing_policy(&num);
        assert_abs_diff_eq!(pol_num.switch_times[0], 0.046_898_2, epsilon = 1e-7);
    }

    #[test]
    fn constant_mu_expectations() {
        let ts = t_star_oracle(EPS, 1.0);
        assert_abs_diff_eq!(
            expected_value_constant_mu(1.0, ts, -EPS, 1.0),
            1.0,
            epsilon = 1e-12
        );
        assert_eq!(expected_value_constant_mu(1.0, 0.0, 0.0, 1.0), 1.0);
        let direct = 2.0 * 0.9 * ((0.1f64).exp() - 1.0) / 0.1;
        assert_abs_diff_eq!(
            expected_value_constant_mu(2.0, 0.0, EPS, 1.0),
            direct,
            epsilon = 1e-14
        );
        assert_abs_diff_eq!(direct, 1.893_076_5, epsilon = 1e-7);
    }

    #[test]
    fn lemma_bound_cases() {
        let b = lemma_upper_bound(1.0, 0.0, 1.0, 0.0, 0.2, EPS, 1.0);
        let direct = 1.1 * ((0.1f64).exp() - 1.0) / 0.1;
        assert_abs_diff_eq!(b, direct, epsilon = 1e-14);
        assert!(b > psi_closed_form_10(0.0, EPS, 1.0).unwrap());
        assert_eq!(lemma_upper_bound(1.0, 1.0, 1.0, 0.0, 0.2, EPS, 1.0), 0.0);
        let tiny = lemma_upper_bound(1e-12, 0.0, 0.5, 0.05, 0.2, EPS, 1.0);
        assert!(tiny < 1e-5);
        // zero exponent: gamma eps + sigma^2/2 gamma (gamma-1) = rho
        let flat = lemma_upper_bound(1.0, 0.0, 1.0, 0.1, 0.2, EPS, 2.0);
        assert_abs_diff_eq!(flat, 1.1 * 2.0, epsilon = 1e-14);
    }

    #[test]
    fn one_switch_anchor_values() {
        let f0 = one_switch_objective(1.0, 0.0, EPS).unwrap();
        let f1 = one_switch_objective(1.0, 1.0, EPS).unwrap();
        let (t1, best) = one_switch_optimum(EPS);
        let ft1 = one_switch_objective(1.0, t1, EPS).unwrap();
        assert_abs_diff_eq!(f0, 1.1 * (1.0 - (-0.1f64).exp()) / 0.1, epsilon = 1e-14);
        assert_abs_diff_eq!(f0, 1.046_788_4, epsilon = 1e-7);
        assert_abs_diff_eq!(f1, 0.9 * ((0.1f64).exp() - 1.0) / 0.1, epsilon = 1e-14);
        assert_abs_diff_eq!(f1, 0.946_538_3, epsilon = 1e-7);
        assert_abs_diff_eq!(ft1, best, epsilon = 1e-14);
        assert_abs_diff_eq!(best, 1.047_008_3, epsilon = 1e-7);
        assert_abs_diff_eq!(t1, 0.046_898_2, epsilon = 1e-7);
        assert!(f1 < f0 && f0 < ft1);
        assert!(one_switch_objective(1.0, 1.01, EPS).is_err());

        let (t1, _) = one_switch_optimum(0.5);
        assert_abs_diff_eq!(t1, 1.0 - (1.5f64).ln() / 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(t1, 0.189_069_8, epsilon = 1e-7);
    }

    #[test]
    fn one_switch_general_window_matches_unit_horizon() {
        for t in [0.0, 0.2, 0.5, 1.0] {
            assert_abs_diff_eq!(
                one_switch_expected_value(1.3, 0.0, t, 0.3, 1.0),
                one_switch_objective(1.3, t, 0.3).unwrap(),
                epsilon = 1e-13
            );
        }
        assert_abs_diff_eq!(
            one_switch_expected_value(1.0, 0.0, 0.0, EPS, 1.0),
            expected_value_constant_mu(1.0, 0.0, -EPS, 1.0),
            epsilon = 1e-14
        );
    }
}
