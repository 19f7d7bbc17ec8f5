//! Covariate-driven log-logistic accelerated failure time (AFT) model.
//!
//! Everything here is a pure function of immutable values. The model is
//! written in terms of a log-time location `mu` and the scale `gamma`:
//!
//! ```text
//! z(t)  = (ln t - mu) / gamma
//! S(t)  = 1 / (1 + e^z)
//! h(t)  = e^z / (gamma * t * (1 + e^z))
//! f(t)  = h(t) * S(t)
//! ```
//!
//! With [`Parameterization::ScaledLocation`] the location is `mu = gamma * bX`, so
//! that `S(t) = 1 / (1 + exp(-bX) t^(1/gamma))`. With
//! [`Parameterization::StandardAft`] the location is `mu = bX`, the form used
//! by conventional AFT packages (`ln T = bX + gamma * logistic noise`).

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numeric::{logistic, softplus};

/// Canonical coefficient names, intercept first.
pub const COVARIATE_NAMES: [&str; 5] = ["cons", "ud", "pd", "dab", "multiple"];

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SurvivalError {
    #[error("coefficient/covariate dimension mismatch: model expects {expected} covariate values, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("coefficient {position} is named `{found}` but the covariate vector supplies `{expected}` there")]
    CovariateOrder {
        position: usize,
        expected: String,
        found: String,
    },
    #[error("model needs at least the intercept coefficient")]
    NoCoefficients,
    #[error("coefficient `{0}` is not finite")]
    NonFiniteCoefficient(String),
    #[error("scale gamma must be positive and finite, got {0}")]
    InvalidGamma(f64),
    #[error("time must be finite and non-negative, got {0}")]
    InvalidTime(f64),
    #[error("hazard diverges at t = 0 when gamma > 1 (gamma = {gamma})")]
    HazardSingularity { gamma: f64 },
    #[error("probability level must lie strictly inside (0, 1), got {0}")]
    ProbabilityOutOfRange(f64),
    #[error("hazard has no interior mode for gamma = {gamma}; requires 0 < gamma < 1")]
    NoInteriorMode { gamma: f64 },
    #[error("invalid covariates: {0}")]
    InvalidCovariates(String),
}

pub type Result<T> = std::result::Result<T, SurvivalError>;

/// Distribution families considered for overtaking durations. Only
/// [`DistributionFamily::LogLogistic`] is implemented; the others are
/// reserved names.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistributionFamily {
    Exponential,
    LogLogistic,
    Weibull,
    Gamma,
}

/// A non-negative duration in seconds.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TimePoint(f64);

impl TimePoint {
    pub fn new(seconds: f64) -> Result<Self> {
        if seconds.is_finite() && seconds >= 0.0 {
            Ok(Self(seconds))
        } else {
            Err(SurvivalError::InvalidTime(seconds))
        }
    }

    pub fn seconds(self) -> f64 {
        self.0
    }
}

impl From<TimePoint> for f64 {
    fn from(t: TimePoint) -> f64 {
        t.0
    }
}

/// Covariates of one overtaking maneuver.
///
/// `dab` is in km/h and enters the linear predictor unconverted.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CovariateVector {
    /// Ultimate distance (lead to ego after return), m.
    pub ud: f64,
    /// Primary distance (ego to lead at maneuver start), m.
    pub pd: f64,
    /// Speed difference ego minus lead before the maneuver, km/h.
    pub dab: f64,
    /// More than one vehicle overtaken in the maneuver.
    pub multiple: bool,
}

impl CovariateVector {
    pub fn new(ud: f64, pd: f64, dab: f64, multiple: bool) -> Result<Self> {
        let x = Self {
            ud,
            pd,
            dab,
            multiple,
        };
        x.validate()?;
        Ok(x)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.ud.is_finite() && self.ud >= 0.0) {
            return Err(SurvivalError::InvalidCovariates(format!(
                "ud must be finite and >= 0, got {}",
                self.ud
            )));
        }
        if !(self.pd.is_finite() && self.pd >= 0.0) {
            return Err(SurvivalError::InvalidCovariates(format!(
                "pd must be finite and >= 0, got {}",
                self.pd
            )));
        }
        if !self.dab.is_finite() {
            return Err(SurvivalError::InvalidCovariates(format!(
                "dab must be finite, got {}",
                self.dab
            )));
        }
        Ok(())
    }

    /// Values in canonical order (ud, pd, dab, multiple).
    pub fn values(&self) -> [f64; 4] {
        [
            self.ud,
            self.pd,
            self.dab,
            if self.multiple { 1.0 } else { 0.0 },
        ]
    }
}

/// How the linear predictor enters the survival function.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Parameterization {
    /// `S(t) = 1 / (1 + exp(-bX) t^(1/gamma))`; median `exp(gamma * bX)`.
    #[default]
    #[serde(rename = "scaled")]
    ScaledLocation,
    /// `S(t) = 1 / (1 + (exp(-bX) t)^(1/gamma))`; median `exp(bX)`.
    #[serde(rename = "standard")]
    StandardAft,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coefficient {
    pub name: String,
    pub beta: f64,
}

impl Coefficient {
    pub fn new(name: impl Into<String>, beta: f64) -> Self {
        Self {
            name: name.into(),
            beta,
        }
    }
}

/// A log-logistic AFT model: named coefficients (intercept first), scale and
/// parameterization.
#[derive(Debug, Clone, PartialEq)]
pub struct LogLogisticAft {
    coefficients: Vec<Coefficient>,
    gamma: f64,
    mode: Parameterization,
}

impl LogLogisticAft {
    pub fn new(mode: Parameterization, gamma: f64, coefficients: Vec<Coefficient>) -> Result<Self> {
        if !(gamma.is_finite() && gamma > 0.0) {
            return Err(SurvivalError::InvalidGamma(gamma));
        }
        if coefficients.is_empty() {
            return Err(SurvivalError::NoCoefficients);
        }
        if let Some(c) = coefficients.iter().find(|c| !c.beta.is_finite()) {
            return Err(SurvivalError::NonFiniteCoefficient(c.name.clone()));
        }
        Ok(Self {
            coefficients,
            gamma,
            mode,
        })
    }

    /// Model over the canonical covariates `(cons, ud, pd, dab, multiple)`.
    pub fn with_betas(mode: Parameterization, gamma: f64, betas: [f64; 5]) -> Result<Self> {
        let coefficients = COVARIATE_NAMES
            .iter()
            .zip(betas)
            .map(|(name, beta)| Coefficient::new(*name, beta))
            .collect();
        Self::new(mode, gamma, coefficients)
    }

    /// Reference coefficient set: cons 2.589, UD 0.027, PD 0.049,
    /// dAB -0.053, Multiple 0.463, gamma 0.253.
    pub fn reference_table() -> Self {
        Self::with_betas(
            Parameterization::ScaledLocation,
            0.253,
            [2.589, 0.027, 0.049, -0.053, 0.463],
        )
        .expect("reference coefficients are valid")
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn mode(&self) -> Parameterization {
        self.mode
    }

    pub fn coefficients(&self) -> &[Coefficient] {
        &self.coefficients
    }

    pub fn betas(&self) -> Vec<f64> {
        self.coefficients.iter().map(|c| c.beta).collect()
    }

    pub fn beta(&self, name: &str) -> Option<f64> {
        self.coefficients
            .iter()
            .find(|c| c.name == name)
            .map(|c| c.beta)
    }

    /// `cons + sum(beta_i * x_i)` over raw covariate values (intercept
    /// excluded from `values`).
    pub fn linear_predictor_values(&self, values: &[f64]) -> Result<f64> {
        let expected = self.coefficients.len() - 1;
        if values.len() != expected {
            return Err(SurvivalError::DimensionMismatch {
                expected,
                actual: values.len(),
            });
        }
        let slopes = self.coefficients[1..].iter().zip(values);
        Ok(self.coefficients[0].beta + slopes.map(|(c, x)| c.beta * x).sum::<f64>())
    }

    pub fn linear_predictor(&self, x: &CovariateVector) -> Result<f64> {
        x.validate()?;
        let values = x.values();
        if self.coefficients.len() != values.len() + 1 {
            return Err(SurvivalError::DimensionMismatch {
                expected: self.coefficients.len() - 1,
                actual: values.len(),
            });
        }
        for (position, (c, expected)) in self.coefficients.iter().zip(COVARIATE_NAMES).enumerate() {
            if c.name != expected {
                return Err(SurvivalError::CovariateOrder {
                    position,
                    expected: expected.to_string(),
                    found: c.name.clone(),
                });
            }
        }
        self.linear_predictor_values(&values)
    }

    /// Distribution for a fixed linear predictor value.
    pub fn at_linear_predictor(&self, lp: f64) -> LogLogistic {
        let location = match self.mode {
            Parameterization::ScaledLocation => self.gamma * lp,
            Parameterization::StandardAft => lp,
        };
        LogLogistic {
            location,
            gamma: self.gamma,
        }
    }

    pub fn distribution(&self, x: &CovariateVector) -> Result<LogLogistic> {
        Ok(self.at_linear_predictor(self.linear_predictor(x)?))
    }

    pub fn survival_at(&self, x: &CovariateVector, t: f64) -> Result<f64> {
        self.distribution(x)?.survival(t)
    }

    pub fn cdf_at(&self, x: &CovariateVector, t: f64) -> Result<f64> {
        self.distribution(x)?.cdf(t)
    }

    pub fn hazard_at(&self, x: &CovariateVector, t: f64) -> Result<f64> {
        self.distribution(x)?.hazard(t)
    }

    pub fn density_at(&self, x: &CovariateVector, t: f64) -> Result<f64> {
        self.distribution(x)?.density(t)
    }

    pub fn quantile(&self, x: &CovariateVector, p: f64) -> Result<TimePoint> {
        self.distribution(x)?.quantile(p)
    }

    pub fn median_duration(&self, x: &CovariateVector) -> Result<TimePoint> {
        self.quantile(x, 0.5)
    }

    /// Time at which the hazard peaks, `exp(mu) (1/gamma - 1)^gamma`.
    pub fn hazard_mode(&self, x: &CovariateVector) -> Result<TimePoint> {
        self.distribution(x)?.hazard_mode()
    }
}

/// Log-logistic distribution on `t >= 0` with log-time location and scale.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogLogistic {
    pub location: f64,
    pub gamma: f64,
}

impl LogLogistic {
    fn check_time(t: f64) -> Result<()> {
        if t.is_finite() && t >= 0.0 {
            Ok(())
        } else {
            Err(SurvivalError::InvalidTime(t))
        }
    }

    /// Standardised log time; `-inf` at `t = 0`.
    #[inline]
    pub fn z(&self, t: f64) -> f64 {
        (t.ln() - self.location) / self.gamma
    }

    pub fn survival(&self, t: f64) -> Result<f64> {
        Self::check_time(t)?;
        Ok(logistic(-self.z(t)))
    }

    /// `-ln S(t)`, accurate where `S` is close to 1 or underflows.
    pub fn cumulative_hazard(&self, t: f64) -> Result<f64> {
        Self::check_time(t)?;
        Ok(softplus(self.z(t)))
    }

    pub fn cdf(&self, t: f64) -> Result<f64> {
        Self::check_time(t)?;
        Ok(logistic(self.z(t)))
    }

    pub fn hazard(&self, t: f64) -> Result<f64> {
        Self::check_time(t)?;
        if t == 0.0 {
            return if self.gamma < 1.0 {
                Ok(0.0)
            } else if self.gamma == 1.0 {
                Ok((-self.location).exp())
            } else {
                Err(SurvivalError::HazardSingularity { gamma: self.gamma })
            };
        }
        Ok(logistic(self.z(t)) / (self.gamma * t))
    }

    pub fn density(&self, t: f64) -> Result<f64> {
        let h = self.hazard(t)?;
        Ok(h * self.survival(t)?)
    }

    /// `ln f(t)` for `t > 0`, evaluated without forming `f`.
    pub fn ln_density(&self, t: f64) -> Result<f64> {
        if !(t.is_finite() && t > 0.0) {
            return Err(SurvivalError::InvalidTime(t));
        }
        let z = self.z(t);
        Ok(z - 2.0 * softplus(z) - self.gamma.ln() - t.ln())
    }

    /// Time `t` with `F(t) = p`.
    pub fn quantile(&self, p: f64) -> Result<TimePoint> {
        if !(p > 0.0 && p < 1.0) {
            return Err(SurvivalError::ProbabilityOutOfRange(p));
        }
        let logit = (p / (1.0 - p)).ln();
        TimePoint::new((self.location + self.gamma * logit).exp())
    }

    pub fn hazard_mode(&self) -> Result<TimePoint> {
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(SurvivalError::NoInteriorMode { gamma: self.gamma });
        }
        TimePoint::new(self.location.exp() * (1.0 / self.gamma - 1.0).powf(self.gamma))
    }
}

/// Characteristic intersection time `(1/gamma - 1)^gamma / gamma`. Differs
/// from [`LogLogistic::hazard_mode`] by a `1/gamma` factor.
pub fn inflection_point(gamma: f64) -> Result<TimePoint> {
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(SurvivalError::NoInteriorMode { gamma });
    }
    TimePoint::new((1.0 / gamma - 1.0).powf(gamma) / gamma)
}
