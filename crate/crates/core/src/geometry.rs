//! Flat-ground monocular range estimation, gap-differenced speeds and the
//! calibration error metric.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("invalid camera: {0}")]
    InvalidCamera(String),
    #[error("target row {y_f} px is at or above the horizon row {y_g} px; distance is unbounded")]
    AtOrAboveHorizon { y_f: f64, y_g: f64 },
    #[error("depth must be positive and finite, got {0}")]
    InvalidDepth(f64),
    #[error("time step must be positive, got {0}")]
    InvalidTimeStep(f64),
    #[error("measured distance at index {index} must be > 0, got {value}")]
    NonPositiveMeasured { index: usize, value: f64 },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
}

pub type Result<T> = std::result::Result<T, GeometryError>;

/// Forward-looking pinhole camera mounted at height `y1_m` over flat ground.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraModel {
    /// Focal constant, px.
    #[serde(rename = "c_px")]
    pub c: f64,
    /// Mounting height above ground, m.
    #[serde(rename = "y1_m")]
    pub y1: f64,
    /// Horizon row, px.
    #[serde(rename = "y_g_px")]
    pub y_g: f64,
}

impl CameraModel {
    pub fn new(c: f64, y1: f64, y_g: f64) -> Result<Self> {
        let cam = Self { c, y1, y_g };
        cam.validate()?;
        Ok(cam)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.c.is_finite() && self.c > 0.0) {
            return Err(GeometryError::InvalidCamera(format!(
                "focal constant must be > 0, got {}",
                self.c
            )));
        }
        if !(self.y1.is_finite() && self.y1 > 0.0) {
            return Err(GeometryError::InvalidCamera(format!(
                "mounting height must be > 0, got {}",
                self.y1
            )));
        }
        if !self.y_g.is_finite() {
            return Err(GeometryError::InvalidCamera("horizon row must be finite".into()));
        }
        Ok(())
    }
}

/// Ground-contact row and lateral column offset of a target in one frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImageObservation {
    pub y_f: f64,
    pub x_offset: f64,
    pub t: f64,
}

/// `Z = c * y1 / (y_f - y_g)`.
pub fn longitudinal_distance(camera: &CameraModel, obs: &ImageObservation) -> Result<f64> {
    camera.validate()?;
    let rows_below = obs.y_f - camera.y_g;
    if !(rows_below > 0.0) {
        return Err(GeometryError::AtOrAboveHorizon {
            y_f: obs.y_f,
            y_g: camera.y_g,
        });
    }
    Ok(camera.c * camera.y1 / rows_below)
}

/// Signed lateral offset `x_offset * Z / c` of one observation at depth `z`.
pub fn lateral_offset(camera: &CameraModel, obs: &ImageObservation, z: f64) -> Result<f64> {
    if !(z.is_finite() && z > 0.0) {
        return Err(GeometryError::InvalidDepth(z));
    }
    Ok(obs.x_offset * z / camera.c)
}

/// Lateral separation of two image points at a common depth.
pub fn mutual_lateral_distance(
    camera: &CameraModel,
    a: &ImageObservation,
    b: &ImageObservation,
    z: f64,
) -> Result<f64> {
    camera.validate()?;
    if !(z.is_finite() && z > 0.0) {
        return Err(GeometryError::InvalidDepth(z));
    }
    Ok((a.x_offset - b.x_offset).abs() * z / camera.c)
}

/// Where a ground point `z` ahead and `lateral` to the side lands in the
/// image. Inverse of [`longitudinal_distance`] / [`lateral_offset`].
pub fn project_to_image(camera: &CameraModel, z: f64, lateral: f64, t: f64) -> Result<ImageObservation> {
    camera.validate()?;
    if !(z.is_finite() && z > 0.0) {
        return Err(GeometryError::InvalidDepth(z));
    }
    Ok(ImageObservation {
        y_f: camera.y_g + camera.c * camera.y1 / z,
        x_offset: camera.c * lateral / z,
        t,
    })
}

/// Speed of a vehicle ahead from the ego speed at both ends of the interval
/// and the gap change: `(A(t-1) + A(t)) / 2 + (Z(t) - Z(t-1)) / dt`.
///
/// The estimate is the vehicle's mean speed over the interval, exact when the
/// ego accelerates uniformly within it.
pub fn adjacent_vehicle_speed(
    ego_speed_prev: f64,
    ego_speed_now: f64,
    gap_prev: f64,
    gap_now: f64,
    dt: f64,
) -> Result<f64> {
    if !(dt.is_finite() && dt > 0.0) {
        return Err(GeometryError::InvalidTimeStep(dt));
    }
    Ok((ego_speed_prev + ego_speed_now) / 2.0 + (gap_now - gap_prev) / dt)
}

/// Speed of an oncoming vehicle in its own direction of travel, so that the
/// closing speed is `ego + oncoming`.
pub fn oncoming_vehicle_speed(
    ego_speed_prev: f64,
    ego_speed_now: f64,
    gap_prev: f64,
    gap_now: f64,
    dt: f64,
) -> Result<f64> {
    Ok(-adjacent_vehicle_speed(ego_speed_prev, ego_speed_now, gap_prev, gap_now, dt)?)
}

/// Mean absolute percentage error over `n` sessions of `p` repetitions:
/// `(1/n) sum_j (100/p) sum_c |Z_cj - Z_mj| / Z_mj`.
///
/// `calculated[j][c]` is session `j`'s estimate of target `c`, whose true
/// distance is `measured[c]`.
pub fn mape(calculated: &[Vec<f64>], measured: &[f64]) -> Result<f64> {
    if calculated.is_empty() || measured.is_empty() {
        return Err(GeometryError::ShapeMismatch(
            "need at least one session and one target".into(),
        ));
    }
    if let Some((index, &value)) = measured.iter().enumerate().find(|(_, v)| !(**v > 0.0)) {
        return Err(GeometryError::NonPositiveMeasured { index, value });
    }
    let p = measured.len();
    let mut total = 0.0;
    for (j, session) in calculated.iter().enumerate() {
        if session.len() != p {
            return Err(GeometryError::ShapeMismatch(format!(
                "session {j} has {} values for {p} targets",
                session.len()
            )));
        }
        let sum: f64 = session
            .iter()
            .zip(measured)
            .map(|(c, m)| ((c - m) / m).abs())
            .sum();
        total += 100.0 / p as f64 * sum;
    }
    Ok(total / calculated.len() as f64)
}

/// One calibration session: target distances with the observation of each.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationSession {
    pub id: String,
    pub entries: Vec<(f64, ImageObservation)>,
}

/// Calibration runs: every session observes the same set of targets.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationSet {
    pub sessions: Vec<CalibrationSession>,
}

impl CalibrationSet {
    /// Targets per session (`p`).
    pub fn repetitions(&self) -> usize {
        self.sessions.first().map_or(0, |s| s.entries.len())
    }

    /// MAPE of the camera's longitudinal estimates against the targets.
    pub fn mape(&self, camera: &CameraModel) -> Result<f64> {
        let Some(first) = self.sessions.first() else {
            return Err(GeometryError::ShapeMismatch("no calibration sessions".into()));
        };
        let sorted = |s: &CalibrationSession| {
            let mut e = s.entries.clone();
            e.sort_by(|a, b| a.0.total_cmp(&b.0));
            e
        };
        let reference = sorted(first);
        let measured: Vec<f64> = reference.iter().map(|(m, _)| *m).collect();
        let mut calculated = Vec::with_capacity(self.sessions.len());
        for session in &self.sessions {
            let entries = sorted(session);
            let targets: Vec<f64> = entries.iter().map(|(m, _)| *m).collect();
            if targets != measured {
                return Err(GeometryError::ShapeMismatch(format!(
                    "session `{}` observes targets {targets:?}, expected {measured:?}",
                    session.id
                )));
            }
            calculated.push(
                entries
                    .iter()
                    .map(|(_, obs)| longitudinal_distance(camera, obs))
                    .collect::<Result<Vec<_>>>()?,
            );
        }
        mape(&calculated, &measured)
    }
}
