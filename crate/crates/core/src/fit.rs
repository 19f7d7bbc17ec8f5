//! Maximum-likelihood estimation of the log-logistic AFT model.
//!
//! Every observation is an exact (uncensored) completion time, so the
//! likelihood is the product of densities. Optimisation runs over
//! `(beta, ln gamma)`, which keeps the scale positive without constraints.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numeric::{logistic, pairwise_sum};
use crate::optim::{self, BfgsOptions, Objective, Termination};
use crate::survival::{
    CovariateVector, LogLogisticAft, Parameterization, SurvivalError, COVARIATE_NAMES,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FitError {
    #[error("observation {index}: duration must be finite and > 0, got {duration}")]
    InvalidDuration { index: usize, duration: f64 },
    #[error("insufficient data: {n} observations for {parameters} parameters (need at least {required})")]
    InsufficientData {
        n: usize,
        parameters: usize,
        required: usize,
    },
    #[error("design matrix is rank deficient (condition ratio {ratio:.3e}); covariates are collinear")]
    Collinear { ratio: f64 },
    #[error("degenerate data: {0}")]
    Degenerate(String),
    #[error("information matrix is not positive definite at the estimate; the fit is on a boundary or ill-conditioned")]
    NotPositiveDefinite,
    #[error("unknown covariate `{name}`; valid names: {valid}")]
    UnknownCovariate { name: String, valid: String },
    #[error(transparent)]
    Model(#[from] SurvivalError),
}

pub type Result<T> = std::result::Result<T, FitError>;

/// One completed maneuver: total duration and its covariates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DurationObservation {
    pub duration: f64,
    pub covariates: CovariateVector,
}

impl DurationObservation {
    pub fn new(duration: f64, covariates: CovariateVector) -> Result<Self> {
        if !(duration.is_finite() && duration > 0.0) {
            return Err(FitError::InvalidDuration { index: 0, duration });
        }
        covariates.validate()?;
        Ok(Self {
            duration,
            covariates,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradientMode {
    Analytic,
    /// Central finite differences of the log-likelihood.
    Numeric,
}

#[derive(Debug, Clone)]
pub struct FitOptions {
    pub mode: Parameterization,
    /// Starting point; defaults to the least-squares warm start.
    pub initial: Option<LogLogisticAft>,
    /// Gradient max-norm tolerance on the log-likelihood.
    pub tolerance: f64,
    pub max_iterations: usize,
    pub gradient: GradientMode,
    pub compute_standard_errors: bool,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            mode: Parameterization::ScaledLocation,
            initial: None,
            tolerance: 1e-8,
            max_iterations: 500,
            gradient: GradientMode::Analytic,
            compute_standard_errors: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StandardErrors {
    /// One per coefficient, intercept first.
    pub beta: Vec<f64>,
    pub gamma: f64,
    pub log_gamma: f64,
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub model: LogLogisticAft,
    /// `None` when the fit did not converge or SEs were not requested.
    pub standard_errors: Option<StandardErrors>,
    pub log_likelihood: f64,
    pub n_observations: usize,
    pub converged: bool,
    pub iterations: usize,
    pub gradient_max_norm: f64,
}

/// Per-coefficient row of the serialized fit summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientSummary {
    pub name: String,
    pub beta: f64,
    pub se: f64,
    /// Wald statistic `beta / se`.
    pub z: f64,
    pub ci_lower: f64,
    pub ci_upper: f64,
}

/// Fit diagnostics stored in the model document's `fit_meta` field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitMeta {
    pub log_likelihood: f64,
    pub n_observations: usize,
    pub converged: bool,
    pub iterations: usize,
    pub gradient_max_norm: f64,
    #[serde(default)]
    pub coefficients: Vec<CoefficientSummary>,
    pub gamma_se: Option<f64>,
    pub gamma_ci: Option<[f64; 2]>,
}

const Z_95: f64 = 1.96;

impl FitResult {
    pub fn meta(&self) -> FitMeta {
        let coefficients = match &self.standard_errors {
            Some(se) => self
                .model
                .coefficients()
                .iter()
                .zip(&se.beta)
                .map(|(c, &s)| CoefficientSummary {
                    name: c.name.clone(),
                    beta: c.beta,
                    se: s,
                    z: c.beta / s,
                    ci_lower: c.beta - Z_95 * s,
                    ci_upper: c.beta + Z_95 * s,
                })
                .collect(),
            None => Vec::new(),
        };
        let gamma = self.model.gamma();
        FitMeta {
            log_likelihood: self.log_likelihood,
            n_observations: self.n_observations,
            converged: self.converged,
            iterations: self.iterations,
            gradient_max_norm: self.gradient_max_norm,
            coefficients,
            gamma_se: self.standard_errors.as_ref().map(|s| s.gamma),
            gamma_ci: self
                .standard_errors
                .as_ref()
                .map(|s| [gamma - Z_95 * s.gamma, gamma + Z_95 * s.gamma]),
        }
    }
}

fn validate_data(data: &[DurationObservation]) -> Result<()> {
    for (index, obs) in data.iter().enumerate() {
        if !(obs.duration.is_finite() && obs.duration > 0.0) {
            return Err(FitError::InvalidDuration {
                index,
                duration: obs.duration,
            });
        }
        obs.covariates.validate()?;
    }
    Ok(())
}

/// Sum of `ln f(t_i | x_i)`. Terms are reduced by pairwise summation, so the
/// result is independent of how the work is split across threads.
pub fn log_likelihood(model: &LogLogisticAft, data: &[DurationObservation]) -> Result<f64> {
    validate_data(data)?;
    let terms = data
        .par_iter()
        .map(|obs| {
            model
                .distribution(&obs.covariates)?
                .ln_density(obs.duration)
        })
        .collect::<std::result::Result<Vec<f64>, SurvivalError>>()?;
    Ok(pairwise_sum(&terms))
}

/// Design rows `(1, ud, pd, dab, multiple)` and log durations.
struct Design {
    rows: Vec<[f64; 5]>,
    log_t: Vec<f64>,
    mode: Parameterization,
}

const N_PARAMS: usize = 6;

impl Design {
    fn new(data: &[DurationObservation], mode: Parameterization) -> Self {
        let rows = data
            .iter()
            .map(|o| {
                let v = o.covariates.values();
                [1.0, v[0], v[1], v[2], v[3]]
            })
            .collect();
        let log_t = data.iter().map(|o| o.duration.ln()).collect();
        Self { rows, log_t, mode }
    }

    fn z(&self, row: &[f64; 5], log_t: f64, beta: &[f64], gamma: f64) -> f64 {
        let lp: f64 = row.iter().zip(beta).map(|(x, b)| x * b).sum();
        match self.mode {
            Parameterization::ScaledLocation => log_t / gamma - lp,
            Parameterization::StandardAft => (log_t - lp) / gamma,
        }
    }

    fn log_likelihood(&self, theta: &[f64]) -> f64 {
        let (beta, log_gamma) = theta.split_at(5);
        let log_gamma = log_gamma[0];
        let gamma = log_gamma.exp();
        let terms: Vec<f64> = self
            .rows
            .iter()
            .zip(&self.log_t)
            .map(|(row, &lt)| {
                let z = self.z(row, lt, beta, gamma);
                z - 2.0 * crate::numeric::softplus(z) - log_gamma - lt
            })
            .collect();
        pairwise_sum(&terms)
    }

    fn log_likelihood_gradient(&self, theta: &[f64]) -> Vec<f64> {
        let (beta, log_gamma) = theta.split_at(5);
        let gamma = log_gamma[0].exp();
        let mut g = [0.0; N_PARAMS];
        for (row, &lt) in self.rows.iter().zip(&self.log_t) {
            let z = self.z(row, lt, beta, gamma);
            // d ln f / dz
            let w = 1.0 - 2.0 * logistic(z);
            match self.mode {
                Parameterization::ScaledLocation => {
                    for j in 0..5 {
                        g[j] -= w * row[j];
                    }
                    g[5] += -1.0 - w * lt / gamma;
                }
                Parameterization::StandardAft => {
                    for j in 0..5 {
                        g[j] -= w * row[j] / gamma;
                    }
                    g[5] += -1.0 - w * z;
                }
            }
        }
        g.to_vec()
    }
}

/// Negative log-likelihood as a minimisation objective.
struct NegLogLik<'a> {
    design: &'a Design,
    gradient: GradientMode,
}

impl Objective for NegLogLik<'_> {
    fn value(&self, x: &[f64]) -> f64 {
        -self.design.log_likelihood(x)
    }

    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        match self.gradient {
            GradientMode::Analytic => self
                .design
                .log_likelihood_gradient(x)
                .into_iter()
                .map(|v| -v)
                .collect(),
            GradientMode::Numeric => {
                optim::central_difference_gradient(|p| -self.design.log_likelihood(p), x, 1e-6)
            }
        }
    }
}

fn theta_of(model: &LogLogisticAft) -> Result<Vec<f64>> {
    let betas = model.betas();
    if betas.len() != 5 {
        return Err(SurvivalError::DimensionMismatch {
            expected: 4,
            actual: betas.len() - 1,
        }
        .into());
    }
    let mut theta = betas;
    theta.push(model.gamma().ln());
    Ok(theta)
}

fn model_of(theta: &[f64], mode: Parameterization) -> Result<LogLogisticAft> {
    let mut betas = [0.0; 5];
    betas.copy_from_slice(&theta[..5]);
    Ok(LogLogisticAft::with_betas(mode, theta[5].exp(), betas)?)
}

/// Least-squares warm start: regress `ln t` on X, take the logistic scale
/// from the residual spread (`sd = gamma * pi / sqrt(3)`).
fn warm_start(design: &Design) -> Result<Vec<f64>> {
    let n = design.rows.len();
    let x = DMatrix::from_fn(n, 5, |i, j| design.rows[i][j]);
    let y = DVector::from_vec(design.log_t.clone());

    let mut normalized = x.clone();
    for mut col in normalized.column_iter_mut() {
        let norm = col.norm();
        if norm > 0.0 {
            col /= norm;
        }
    }
    let sv = normalized.singular_values();
    let max = sv.max();
    let min = sv.min();
    let ratio = if max > 0.0 { min / max } else { 0.0 };
    if ratio < 1e-10 {
        return Err(FitError::Collinear { ratio });
    }

    let svd = x.clone().svd(true, true);
    let b = svd
        .solve(&y, 1e-14)
        .map_err(|e| FitError::Degenerate(e.to_string()))?;
    let resid = &y - &x * &b;
    let dof = (n - 5) as f64;
    let sd = (resid.norm_squared() / dof).sqrt();
    let scale = 1.0 + y.amax();
    if !(sd > 1e-10 * scale) {
        return Err(FitError::Degenerate(
            "log durations are fully explained by the covariates (zero residual spread); the scale collapses to 0"
                .into(),
        ));
    }
    let gamma = sd * 3f64.sqrt() / std::f64::consts::PI;
    let mut theta: Vec<f64> = match design.mode {
        Parameterization::ScaledLocation => b.iter().map(|v| v / gamma).collect(),
        Parameterization::StandardAft => b.iter().copied().collect(),
    };
    theta.push(gamma.ln());
    Ok(theta)
}

/// Fit the model by maximum likelihood.
///
/// Non-convergence within `max_iterations` is reported through
/// `converged = false`, never as a silent success.
pub fn fit_aft(data: &[DurationObservation], options: &FitOptions) -> Result<FitResult> {
    validate_data(data)?;
    let required = N_PARAMS + 2;
    if data.len() < required {
        return Err(FitError::InsufficientData {
            n: data.len(),
            parameters: N_PARAMS,
            required,
        });
    }

    let design = Design::new(data, options.mode);
    let warm = warm_start(&design)?;
    let start = match &options.initial {
        Some(m) => {
            let theta = theta_of(m)?;
            if m.mode() == options.mode {
                theta
            } else {
                // Same location, other parameterization.
                let gamma = m.gamma();
                let mut t = theta;
                match options.mode {
                    Parameterization::ScaledLocation => t[..5].iter_mut().for_each(|b| *b /= gamma),
                    Parameterization::StandardAft => t[..5].iter_mut().for_each(|b| *b *= gamma),
                }
                t
            }
        }
        None => warm,
    };

    let objective = NegLogLik {
        design: &design,
        gradient: options.gradient,
    };
    let bfgs = BfgsOptions {
        gradient_tolerance: options.tolerance,
        max_iterations: options.max_iterations,
        ..Default::default()
    };
    let outcome = optim::minimize(&objective, &start, &bfgs);
    if outcome.termination == Termination::NonFinite {
        return Err(FitError::Degenerate(
            "log-likelihood is not finite at the starting point".into(),
        ));
    }
    let log_gamma = outcome.x[5];
    if log_gamma < (1e-8f64).ln() || !outcome.x.iter().all(|v| v.is_finite()) {
        return Err(FitError::Degenerate(format!(
            "scale collapsed towards zero (ln gamma = {log_gamma:.3})"
        )));
    }

    let model = model_of(&outcome.x, options.mode)?;
    let converged = outcome.converged();
    let standard_errors = if converged && options.compute_standard_errors {
        Some(standard_errors(&model, data)?)
    } else {
        None
    };
    Ok(FitResult {
        model,
        standard_errors,
        log_likelihood: -outcome.value,
        n_observations: data.len(),
        converged,
        iterations: outcome.iterations,
        gradient_max_norm: optim::max_norm(&outcome.gradient),
    })
}

/// Standard errors from the inverse observed information, the information
/// being a symmetric central-difference Hessian of the log-likelihood in
/// `(beta, ln gamma)`. The gamma SE follows by the delta method.
pub fn standard_errors(model: &LogLogisticAft, data: &[DurationObservation]) -> Result<StandardErrors> {
    validate_data(data)?;
    let theta = theta_of(model)?;
    let design = Design::new(data, model.mode());
    let hess = optim::central_difference_hessian(|p| design.log_likelihood(p), &theta, 1e-4);
    let info = DMatrix::from_fn(N_PARAMS, N_PARAMS, |i, j| -hess[i * N_PARAMS + j]);
    let chol = info.cholesky().ok_or(FitError::NotPositiveDefinite)?;
    let cov = chol.inverse();
    let se: Vec<f64> = (0..N_PARAMS).map(|i| cov[(i, i)].sqrt()).collect();
    if se.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
        return Err(FitError::NotPositiveDefinite);
    }
    let log_gamma = se[5];
    Ok(StandardErrors {
        beta: se[..5].to_vec(),
        gamma: model.gamma() * log_gamma,
        log_gamma,
    })
}

/// Percent change in survival time per unit increase of a covariate,
/// `(exp(beta) - 1) * 100`.
pub fn covariate_effect_percent(model: &LogLogisticAft, name: &str) -> Result<f64> {
    let covariates = || {
        model
            .coefficients()
            .iter()
            .skip(1)
            .map(|c| c.name.as_str())
            .collect::<Vec<_>>()
            .join(", ")
    };
    match model.coefficients().iter().skip(1).find(|c| c.name == name) {
        Some(c) => Ok(c.beta.exp_m1() * 100.0),
        None => Err(FitError::UnknownCovariate {
            name: name.to_string(),
            valid: covariates(),
        }),
    }
}

/// Draw one duration per covariate row by inverse-CDF sampling.
pub fn simulate_durations(
    model: &LogLogisticAft,
    rows: &[CovariateVector],
    seed: u64,
) -> Result<Vec<DurationObservation>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(rows.len());
    for x in rows {
        let u = loop {
            let u: f64 = rng.random();
            if u > 0.0 {
                break u;
            }
        };
        let t = model.quantile(x, u)?.seconds();
        out.push(DurationObservation {
            duration: t,
            covariates: *x,
        });
    }
    Ok(out)
}

/// Names of the canonical covariates, intercept excluded.
pub fn covariate_names() -> &'static [&'static str] {
    &COVARIATE_NAMES[1..]
}
