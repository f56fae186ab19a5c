//! Control rules `mu(R, t)` with values in `[-epsilon, epsilon]`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative slack allowed when querying a feedback table just outside its grid.
pub const TABLE_DOMAIN_SLACK: f64 = 1e-6;

/// Bang-bang control of magnitude `epsilon` that flips sign at each switch time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PulsingPolicy {
    pub epsilon: f64,
    /// Increasing switch times in `[0, T]`.
    pub switch_times: Vec<f64>,
    /// `+1` advertises first, `-1` processes first.
    pub initial_sign: i8,
}

impl PulsingPolicy {
    /// Advertise (`+epsilon`) until `switch`, process (`-epsilon`) afterwards.
    /// A switch at or before time zero degenerates to constant processing.
    pub fn single_switch(epsilon: f64, switch: f64) -> Self {
        if switch <= 0.0 {
            Self::constant_sign(epsilon, -1)
        } else {
            Self {
                epsilon,
                switch_times: vec![switch],
                initial_sign: 1,
            }
        }
    }

    pub fn constant_sign(epsilon: f64, sign: i8) -> Self {
        Self {
            epsilon,
            switch_times: Vec::new(),
            initial_sign: sign,
        }
    }

    /// Control in force at time `t`; a switch takes effect at its own time stamp.
    pub fn control_at(&self, t: f64) -> f64 {
        let flips = self.switch_times.partition_point(|&s| s <= t);
        let sign = if flips % 2 == 0 {
            self.initial_sign
        } else {
            -self.initial_sign
        };
        f64::from(sign) * self.epsilon
    }
}

/// Lookup table of an extracted feedback control on a solver grid.
#[derive(Debug, Clone, PartialEq)]
pub struct FeedbackPolicy {
    pub(crate) epsilon: f64,
    pub(crate) log_scale: bool,
    /// Node coordinates in the solve coordinate (`ln R` when `log_scale`).
    pub(crate) coord0: f64,
    pub(crate) dcoord: f64,
    pub(crate) n_space: usize,
    pub(crate) r_min: f64,
    pub(crate) r_max: f64,
    pub(crate) horizon: f64,
    pub(crate) n_time: usize,
    /// `table[j][i]` is the control at time slice `j`, node `i`.
    pub(crate) table: Vec<Vec<f64>>,
}

impl FeedbackPolicy {
    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    /// Nearest-node lookup.
    pub fn control_at(&self, r: f64, t: f64) -> Result<f64> {
        let lo = self.r_min * (1.0 - TABLE_DOMAIN_SLACK);
        let hi = self.r_max * (1.0 + TABLE_DOMAIN_SLACK);
        let t_slack = self.horizon * TABLE_DOMAIN_SLACK;
        if !(r >= lo && r <= hi && t >= -t_slack && t <= self.horizon + t_slack) {
            return Err(Error::PolicyDomain { r, t });
        }
        let coord = if self.log_scale { r.ln() } else { r };
        let i = ((coord - self.coord0) / self.dcoord).round();
        let i = (i.max(0.0) as usize).min(self.n_space - 1);
        let j = (t / self.horizon * self.n_time as f64).round();
        let j = (j.max(0.0) as usize).min(self.n_time);
        Ok(self.table[j][i])
    }
}

/// Any admissible control rule.
#[derive(Debug, Clone, PartialEq)]
pub enum ControlPolicy {
    Constant(f64),
    Pulsing(PulsingPolicy),
    Feedback(FeedbackPolicy),
}

impl ControlPolicy {
    #[inline]
    pub fn control(&self, r: f64, t: f64) -> Result<f64> {
        match self {
            ControlPolicy::Constant(mu) => Ok(*mu),
            ControlPolicy::Pulsing(p) => Ok(p.control_at(t)),
            ControlPolicy::Feedback(f) => f.control_at(r, t),
        }
    }

    /// Largest `|mu|` the policy can return.
    pub fn bound(&self) -> f64 {
        match self {
            ControlPolicy::Constant(mu) => mu.abs(),
            ControlPolicy::Pulsing(p) => p.epsilon,
            ControlPolicy::Feedback(f) => f.epsilon,
        }
    }
}
