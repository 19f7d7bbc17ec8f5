//! Go/no-go advice for an overtake from a live traffic snapshot.
//!
//! A snapshot is Unsafe when any rule fires:
//!
//! - (a) an oncoming vehicle is closer than the distance threshold,
//! - (b) the predicted duration with margin exceeds the time until the
//!   oncoming vehicle arrives,
//! - (c) the probability of still being mid-maneuver when it arrives exceeds
//!   the risk tolerance,
//! - (d) the predicted duration exceeds the time threshold.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::survival::{CovariateVector, LogLogisticAft, SurvivalError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AvoidanceError {
    #[error("invalid snapshot: {0}")]
    InvalidSnapshot(String),
    #[error("invalid decision config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Model(#[from] SurvivalError),
}

pub type Result<T> = std::result::Result<T, AvoidanceError>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EgoState {
    #[serde(rename = "position_m")]
    pub position: f64,
    #[serde(rename = "speed_mps")]
    pub speed: f64,
}

/// Another vehicle's gap from a reference point and its speed in its own
/// direction of travel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GapSpeed {
    #[serde(rename = "gap_m")]
    pub gap: f64,
    #[serde(rename = "speed_mps")]
    pub speed: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrafficSnapshot {
    #[serde(rename = "timestamp_s")]
    pub timestamp: f64,
    pub ego: EgoState,
    /// Vehicle to overtake; gap measured from the ego.
    pub lead: GapSpeed,
    /// Approaching vehicle in the opposite lane; gap measured from the ego.
    #[serde(default)]
    pub oncoming: Option<GapSpeed>,
    /// Next same-direction vehicle ahead of the lead; gap measured from the lead.
    #[serde(default)]
    pub follower_of_lead: Option<GapSpeed>,
    /// Gaps from the lead of any further same-direction vehicles ahead of it, m.
    #[serde(default)]
    pub platoon: Vec<f64>,
}

impl TrafficSnapshot {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(AvoidanceError::InvalidSnapshot(m));
        if !self.timestamp.is_finite() || !self.ego.position.is_finite() {
            return bad("timestamp and ego position must be finite".into());
        }
        if !(self.ego.speed.is_finite() && self.ego.speed >= 0.0) {
            return bad(format!("ego speed must be >= 0, got {}", self.ego.speed));
        }
        let others = [
            ("lead", Some(self.lead)),
            ("oncoming", self.oncoming),
            ("follower_of_lead", self.follower_of_lead),
        ];
        for (name, v) in others {
            if let Some(v) = v {
                if !(v.gap.is_finite() && v.gap >= 0.0) {
                    return bad(format!("{name} gap must be >= 0, got {}", v.gap));
                }
                if !(v.speed.is_finite() && v.speed >= 0.0) {
                    return bad(format!("{name} speed must be >= 0, got {}", v.speed));
                }
            }
        }
        if let Some(g) = self.platoon.iter().find(|g| !(g.is_finite() && **g >= 0.0)) {
            return bad(format!("platoon gaps must be >= 0, got {g}"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecisionConfig {
    /// Longest acceptable predicted duration, s.
    #[serde(rename = "time_threshold_s")]
    pub time_threshold: f64,
    /// Shortest acceptable gap to an oncoming vehicle, m.
    #[serde(rename = "distance_threshold_m")]
    pub distance_threshold: f64,
    pub risk_tolerance: f64,
    /// Multiplier on the predicted duration before comparing with the time
    /// available.
    pub time_margin: f64,
    /// Intended gap to the lead after returning, used as `ud`, m.
    #[serde(rename = "target_return_gap_m")]
    pub target_return_gap: f64,
    /// Vehicles this far ahead of the lead count as one platoon, m.
    #[serde(rename = "platoon_window_m")]
    pub platoon_window: f64,
}

impl Default for DecisionConfig {
    fn default() -> Self {
        Self {
            time_threshold: 6.5,
            distance_threshold: 115.0,
            risk_tolerance: 0.05,
            time_margin: 1.2,
            target_return_gap: 7.0,
            platoon_window: 30.0,
        }
    }
}

impl DecisionConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("time_threshold", self.time_threshold),
            ("distance_threshold", self.distance_threshold),
            ("time_margin", self.time_margin),
            ("platoon_window", self.platoon_window),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(AvoidanceError::InvalidConfig(format!("{name} must be > 0, got {v}")));
            }
        }
        if !(self.risk_tolerance > 0.0 && self.risk_tolerance < 1.0) {
            return Err(AvoidanceError::InvalidConfig(format!(
                "risk_tolerance must lie in (0, 1), got {}",
                self.risk_tolerance
            )));
        }
        if !(self.target_return_gap.is_finite() && self.target_return_gap >= 0.0) {
            return Err(AvoidanceError::InvalidConfig("target_return_gap must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Safe,
    Unsafe,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rule {
    /// (a)
    OncomingTooClose,
    /// (b)
    InsufficientTime,
    /// (c)
    OverrunRisk,
    /// (d)
    DurationTooLong,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub verdict: Verdict,
    pub reasons: Vec<Rule>,
    /// Predicted (median) maneuver duration, s.
    #[serde(rename = "t_pred_s")]
    pub t_pred: f64,
    /// Time until the oncoming vehicle arrives; `None` when unbounded.
    #[serde(rename = "t_avail_s")]
    pub t_avail: Option<f64>,
    /// Probability the maneuver outlasts `t_avail`.
    pub risk: f64,
}

/// Time until the oncoming vehicle reaches the ego, or `None` when there is
/// none or it is not closing.
pub fn available_time(snapshot: &TrafficSnapshot) -> Result<Option<f64>> {
    let Some(on) = snapshot.oncoming else {
        return Ok(None);
    };
    if on.gap < 0.0 || !on.gap.is_finite() {
        return Err(AvoidanceError::InvalidSnapshot(format!("oncoming gap must be >= 0, got {}", on.gap)));
    }
    let closing = snapshot.ego.speed + on.speed;
    Ok((closing > 0.0).then(|| on.gap / closing))
}

/// Covariates implied by a snapshot.
pub fn snapshot_covariates(snapshot: &TrafficSnapshot, config: &DecisionConfig) -> Result<CovariateVector> {
    let in_window = |gap: f64| gap <= config.platoon_window;
    let platoon = snapshot.platoon.iter().filter(|g| in_window(**g)).count()
        + snapshot.follower_of_lead.iter().filter(|f| in_window(f.gap)).count();
    Ok(CovariateVector::new(
        config.target_return_gap,
        snapshot.lead.gap,
        (snapshot.ego.speed - snapshot.lead.speed) * 3.6,
        platoon > 0,
    )?)
}

pub fn predicted_duration(model: &LogLogisticAft, x: &CovariateVector) -> Result<f64> {
    Ok(model.median_duration(x)?.seconds())
}

/// `P(T > t_avail)`; zero when the available time is unbounded.
pub fn overrun_risk(model: &LogLogisticAft, x: &CovariateVector, t_avail: Option<f64>) -> Result<f64> {
    match t_avail {
        None => Ok(0.0),
        Some(t) => Ok(model.survival_at(x, t)?),
    }
}

pub fn decide(snapshot: &TrafficSnapshot, model: &LogLogisticAft, config: &DecisionConfig) -> Result<Decision> {
    snapshot.validate()?;
    config.validate()?;
    let x = snapshot_covariates(snapshot, config)?;
    let t_pred = predicted_duration(model, &x)?;
    let t_avail = available_time(snapshot)?;
    let risk = overrun_risk(model, &x, t_avail)?;

    let mut reasons = Vec::new();
    if snapshot.oncoming.is_some_and(|o| o.gap < config.distance_threshold) {
        reasons.push(Rule::OncomingTooClose);
    }
    if t_avail.is_some_and(|avail| t_pred * config.time_margin > avail) {
        reasons.push(Rule::InsufficientTime);
    }
    if risk > config.risk_tolerance {
        reasons.push(Rule::OverrunRisk);
    }
    if t_pred > config.time_threshold {
        reasons.push(Rule::DurationTooLong);
    }
    let verdict = if reasons.is_empty() {
        Verdict::Safe
    } else {
        Verdict::Unsafe
    };
    Ok(Decision {
        verdict,
        reasons,
        t_pred,
        t_avail,
        risk,
    })
}
