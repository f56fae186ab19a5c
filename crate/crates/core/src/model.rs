//! Price functions, processing-rate families, reputation dynamics and the
//! validated [`ControlProblem`] that ties them together.

use std::f64::consts::E;

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, FieldError, Result};

/// Price per unit as a function of reputation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GrowthModel {
    /// `h(R) = R^gamma`, `gamma` in (0, 1].
    PowerLaw { gamma: f64 },
    /// `h(R) = A + C (1 - 1 / ln(e + R))`.
    MinkSeifert { a: f64, c: f64 },
}

impl GrowthModel {
    pub fn eval(&self, r: f64) -> Result<f64> {
        if !(r >= 0.0) {
            return Err(domain("reputation", r));
        }
        Ok(self.eval_unchecked(r))
    }

    /// Hot-loop variant of [`eval`](Self::eval); the caller guarantees `r >= 0`.
    #[inline]
    pub(crate) fn eval_unchecked(&self, r: f64) -> f64 {
        match *self {
            GrowthModel::PowerLaw { gamma } => {
                if gamma == 1.0 {
                    r
                } else {
                    r.powf(gamma)
                }
            }
            GrowthModel::MinkSeifert { a, c } => a + c * (1.0 - 1.0 / (E + r).ln()),
        }
    }

    /// Least upper bound of `h` on `[0, inf)`, if finite.
    pub fn supremum(&self) -> Option<f64> {
        match *self {
            GrowthModel::PowerLaw { .. } => None,
            GrowthModel::MinkSeifert { a, c } => Some(a + c),
        }
    }

    fn validate(&self, errors: &mut Vec<FieldError>) {
        match *self {
            GrowthModel::PowerLaw { gamma } => {
                if !(gamma > 0.0 && gamma <= 1.0) {
                    errors.push(FieldError::new("growth.gamma", "must lie in (0, 1]"));
                }
            }
            GrowthModel::MinkSeifert { a, c } => {
                if !(a >= 0.0 && a.is_finite()) {
                    errors.push(FieldError::new("growth.A", "must be finite and >= 0"));
                }
                if !(c >= 0.0 && c.is_finite()) {
                    errors.push(FieldError::new("growth.C", "must be finite and >= 0"));
                }
            }
        }
    }
}

/// Units processed per unit time as a function of the control.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ProcessingRate {
    /// `p(mu) = 1 - mu`.
    Linear,
    /// `p(mu) = M / (1 + (M - 1) e^{c mu})`: `p(0) = 1`, `p -> 0` as `mu -> inf`,
    /// `p -> M` as `mu -> -inf`.
    Sigmoid { max_rate: f64, slope: f64 },
}

impl ProcessingRate {
    #[inline]
    pub fn eval(&self, mu: f64) -> f64 {
        match *self {
            ProcessingRate::Linear => 1.0 - mu,
            ProcessingRate::Sigmoid { max_rate, slope } => {
                // Rearranged so that mu = 0 gives exactly 1.
                let g = (slope * mu).exp();
                1.0 / (g + (1.0 - g) / max_rate)
            }
        }
    }

    fn validate(&self, errors: &mut Vec<FieldError>) {
        if let ProcessingRate::Sigmoid { max_rate, slope } = *self {
            if !(max_rate > 1.0 && max_rate.is_finite()) {
                errors.push(FieldError::new("processing.M", "must be finite and > 1"));
            }
            if !(slope > 0.0 && slope.is_finite()) {
                errors.push(FieldError::new("processing.c", "must be finite and > 0"));
            }
        }
    }
}

/// SDE family driving reputation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ReputationDynamics {
    /// `dR = R (mu dt + sigma dB)`.
    Gbm { sigma: f64 },
    /// `dR = (mu - kappa R) dt + sigma dB`, optionally stopped at the first
    /// hitting time of zero.
    NerloveArrow {
        kappa: f64,
        sigma: f64,
        absorbing_at_zero: bool,
    },
}

impl ReputationDynamics {
    pub fn nerlove_arrow(kappa: f64, sigma: f64) -> Self {
        ReputationDynamics::NerloveArrow {
            kappa,
            sigma,
            absorbing_at_zero: true,
        }
    }

    pub fn sigma(&self) -> f64 {
        match *self {
            ReputationDynamics::Gbm { sigma } | ReputationDynamics::NerloveArrow { sigma, .. } => {
                sigma
            }
        }
    }

    fn validate(&self, errors: &mut Vec<FieldError>) {
        let sigma = self.sigma();
        if !(sigma >= 0.0 && sigma.is_finite()) {
            errors.push(FieldError::new("dynamics.sigma", "must be finite and >= 0"));
        }
        if let ReputationDynamics::NerloveArrow { kappa, .. } = *self {
            if !(kappa >= 0.0 && kappa.is_finite()) {
                errors.push(FieldError::new("dynamics.kappa", "must be finite and >= 0"));
            }
        }
    }
}

/// Which closed-form results apply to a problem instance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum AnalyticRegime {
    None,
    /// GBM dynamics, power-law price, linear processing rate.
    PowerLawGbm,
}

/// One fully specified optimization instance.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlProblem {
    pub horizon: f64,
    pub rho: f64,
    pub epsilon: f64,
    pub dynamics: ReputationDynamics,
    pub growth: GrowthModel,
    pub processing: ProcessingRate,
    regime: AnalyticRegime,
}

impl ControlProblem {
    /// Validates every field and reports all violations at once.
    ///
    /// `epsilon = 0` is accepted as the uncontrolled limit.
    pub fn new(
        horizon: f64,
        rho: f64,
        epsilon: f64,
        dynamics: ReputationDynamics,
        growth: GrowthModel,
        processing: ProcessingRate,
    ) -> Result<Self> {
        let mut errors = Vec::new();
        if !(horizon > 0.0 && horizon.is_finite()) {
            errors.push(FieldError::new("horizon", "must be finite and > 0"));
        }
        if !(rho >= 0.0 && rho.is_finite()) {
            errors.push(FieldError::new("rho", "must be finite and >= 0"));
        }
        if !(0.0..1.0).contains(&epsilon) {
            errors.push(FieldError::new("epsilon", "out of [0, 1)"));
        }
        dynamics.validate(&mut errors);
        growth.validate(&mut errors);
        processing.validate(&mut errors);
        if !errors.is_empty() {
            return Err(Error::InvalidProblem(errors));
        }
        let regime = match (dynamics, growth, processing) {
            (
                ReputationDynamics::Gbm { .. },
                GrowthModel::PowerLaw { .. },
                ProcessingRate::Linear,
            ) => AnalyticRegime::PowerLawGbm,
            _ => AnalyticRegime::None,
        };
        Ok(Self {
            horizon,
            rho,
            epsilon,
            dynamics,
            growth,
            processing,
            regime,
        })
    }

    pub fn regime(&self) -> AnalyticRegime {
        self.regime
    }

    /// Power-law exponent when the instance is in the power-law/GBM regime.
    pub fn power_law_gamma(&self) -> Option<f64> {
        match (self.regime, self.growth) {
            (AnalyticRegime::PowerLawGbm, GrowthModel::PowerLaw { gamma }) => Some(gamma),
            _ => None,
        }
    }

    /// True when the elementary closed form for `gamma = 1, rho = 0` applies.
    pub fn has_closed_form(&self) -> bool {
        self.power_law_gamma() == Some(1.0) && self.rho == 0.0
    }

    /// Revenue rate `e^{-rho t} p(mu) h(R)`.
    #[inline]
    pub(crate) fn revenue_rate(&self, r: f64, mu: f64, t: f64) -> f64 {
        let discount = if self.rho == 0.0 {
            1.0
        } else {
            (-self.rho * t).exp()
        };
        discount * self.processing.eval(mu) * self.growth.eval_unchecked(r)
    }

    pub fn to_document(&self) -> ProblemDocument {
        ProblemDocument::from(self)
    }
}

/// JSON shape of a problem instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemDocument {
    pub horizon: f64,
    #[serde(default)]
    pub rho: f64,
    pub epsilon: f64,
    pub dynamics: DynamicsDocument,
    pub growth: GrowthDocument,
    #[serde(default)]
    pub processing: ProcessingDocument,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DynamicsKind {
    Gbm,
    NerloveArrow,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DynamicsDocument {
    pub kind: DynamicsKind,
    pub sigma: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kappa: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GrowthKind {
    PowerLaw,
    MinkSeifert,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GrowthDocument {
    pub kind: GrowthKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    #[serde(rename = "A", default, skip_serializing_if = "Option::is_none")]
    pub a: Option<f64>,
    #[serde(rename = "C", default, skip_serializing_if = "Option::is_none")]
    pub c: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProcessingKind {
    #[default]
    Linear,
    Sigmoid,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProcessingDocument {
    pub kind: ProcessingKind,
    #[serde(rename = "M", default, skip_serializing_if = "Option::is_none")]
    pub max_rate: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c: Option<f64>,
}

impl ProblemDocument {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Builds the validated problem, collecting every missing or invalid field.
    pub fn to_problem(&self) -> Result<ControlProblem> {
        let mut errors = Vec::new();
        let mut require = |value: Option<f64>, field: &str| -> f64 {
            value.unwrap_or_else(|| {
                errors.push(FieldError::new(field, "required for this kind"));
                f64::NAN
            })
        };
        let dynamics = match self.dynamics.kind {
            DynamicsKind::Gbm => ReputationDynamics::Gbm {
                sigma: self.dynamics.sigma,
            },
            DynamicsKind::NerloveArrow => ReputationDynamics::nerlove_arrow(
                require(self.dynamics.kappa, "dynamics.kappa"),
                self.dynamics.sigma,
            ),
        };
        let growth = match self.growth.kind {
            GrowthKind::PowerLaw => GrowthModel::PowerLaw {
                gamma: require(self.growth.gamma, "growth.gamma"),
            },
            GrowthKind::MinkSeifert => GrowthModel::MinkSeifert {
                a: require(self.growth.a, "growth.A"),
                c: require(self.growth.c, "growth.C"),
            },
        };
        let processing = match self.processing.kind {
            ProcessingKind::Linear => ProcessingRate::Linear,
            ProcessingKind::Sigmoid => ProcessingRate::Sigmoid {
                max_rate: require(self.processing.max_rate, "processing.M"),
                slope: require(self.processing.c, "processing.c"),
            },
        };
        if !errors.is_empty() {
            return Err(Error::InvalidProblem(errors));
        }
        ControlProblem::new(
            self.horizon,
            self.rho,
            self.epsilon,
            dynamics,
            growth,
            processing,
        )
    }
}

impl From<&ControlProblem> for ProblemDocument {
    fn from(p: &ControlProblem) -> Self {
        let dynamics = match p.dynamics {
            ReputationDynamics::Gbm { sigma } => DynamicsDocument {
                kind: DynamicsKind::Gbm,
                sigma,
                kappa: None,
            },
            ReputationDynamics::NerloveArrow { kappa, sigma, .. } => DynamicsDocument {
                kind: DynamicsKind::NerloveArrow,
                sigma,
                kappa: Some(kappa),
            },
        };
        let growth = match p.growth {
            GrowthModel::PowerLaw { gamma } => GrowthDocument {
                kind: GrowthKind::PowerLaw,
                gamma: Some(gamma),
                a: None,
                c: None,
            },
            GrowthModel::MinkSeifert { a, c } => GrowthDocument {
                kind: GrowthKind::MinkSeifert,
                gamma: None,
                a: Some(a),
                c: Some(c),
            },
        };
        let processing = match p.processing {
            ProcessingRate::Linear => ProcessingDocument::default(),
            ProcessingRate::Sigmoid { max_rate, slope } => ProcessingDocument {
                kind: ProcessingKind::Sigmoid,
                max_rate: Some(max_rate),
                c: Some(slope),
            },
        };
        ProblemDocument {
            horizon: p.horizon,
            rho: p.rho,
            epsilon: p.epsilon,
            dynamics,
            growth,
            processing,
        }
    }
}
