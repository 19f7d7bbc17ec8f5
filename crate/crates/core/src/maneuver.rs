//! Overtaking segmentation and variable extraction.
//!
//! Lateral offsets are measured from the road centerline: the ego's own lane
//! is negative, the opposite lane positive. An overtake is split into five
//! periods:
//!
//! 1. moving toward the centerline while accelerating,
//! 2. from the centerline crossing until the ego draws level with the lead,
//! 3. passing the lead in the opposite lane until the return crossing,
//! 4. from the return crossing until re-centred in the own lane,
//! 5. speed recovery until back within tolerance of the pre-maneuver speed.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fit::DurationObservation;
use crate::geometry::{self, CameraModel, GeometryError, ImageObservation};
use crate::survival::CovariateVector;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ManeuverError {
    #[error("invalid trace for `{vehicle}`: {reason}")]
    InvalidTrace { vehicle: String, reason: String },
    #[error("no vehicle `{0}` in the trace set")]
    UnknownVehicle(String),
    #[error("no maneuver: {0}")]
    NoManeuver(String),
    #[error("phase boundaries do not match the trace: {0}")]
    PhaseMismatch(String),
    #[error("maneuver record cannot be used as a model observation: {0}")]
    NotUsable(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

pub type Result<T> = std::result::Result<T, ManeuverError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    WithEgo,
    Oncoming,
}

impl Direction {
    /// +1 for vehicles travelling with the ego along the road axis, -1 otherwise.
    pub fn sign(self) -> f64 {
        match self {
            Direction::WithEgo => 1.0,
            Direction::Oncoming => -1.0,
        }
    }
}

/// One timestamped vehicle state, as stored in the trace CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceSample {
    #[serde(rename = "t_s")]
    pub t: f64,
    pub vehicle_id: String,
    pub direction: Direction,
    /// Longitudinal position along the road axis, m.
    #[serde(rename = "s_m")]
    pub s: f64,
    /// Signed lateral offset from the centerline, m.
    #[serde(rename = "d_m")]
    pub d: f64,
    /// Speed in the vehicle's own direction of travel, m/s.
    #[serde(rename = "v_mps")]
    pub v: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VehicleState {
    pub s: f64,
    pub d: f64,
    pub v: f64,
}

/// All samples of one vehicle, strictly increasing in time.
#[derive(Debug, Clone, PartialEq)]
pub struct VehicleTrace {
    pub id: String,
    pub direction: Direction,
    pub samples: Vec<TraceSample>,
}

impl VehicleTrace {
    pub fn new(samples: Vec<TraceSample>) -> Result<Self> {
        let Some(first) = samples.first() else {
            return Err(ManeuverError::InvalidTrace {
                vehicle: String::new(),
                reason: "no samples".into(),
            });
        };
        let id = first.vehicle_id.clone();
        let direction = first.direction;
        let invalid = |reason: String| ManeuverError::InvalidTrace {
            vehicle: id.clone(),
            reason,
        };
        for (i, smp) in samples.iter().enumerate() {
            if smp.vehicle_id != id {
                return Err(invalid(format!("sample {i} belongs to `{}`", smp.vehicle_id)));
            }
            if smp.direction != direction {
                return Err(invalid(format!("sample {i} changes direction")));
            }
            if ![smp.t, smp.s, smp.d, smp.v].iter().all(|x| x.is_finite()) {
                return Err(invalid(format!("sample {i} has non-finite values")));
            }
            if i > 0 && !(smp.t > samples[i - 1].t) {
                return Err(invalid(format!(
                    "timestamps not strictly increasing at sample {i} ({} after {})",
                    smp.t,
                    samples[i - 1].t
                )));
            }
        }
        Ok(Self {
            id,
            direction,
            samples,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Linearly interpolated state; exact sample values at sample times.
    /// `None` outside the sampled time range.
    pub fn state_at(&self, t: f64) -> Option<VehicleState> {
        let smp = &self.samples;
        let first = smp.first()?;
        let last = smp.last()?;
        if t < first.t || t > last.t {
            return None;
        }
        let idx = smp.partition_point(|x| x.t < t);
        let b = &smp[idx];
        if b.t == t {
            return Some(VehicleState {
                s: b.s,
                d: b.d,
                v: b.v,
            });
        }
        let a = &smp[idx - 1];
        let w = (t - a.t) / (b.t - a.t);
        let lerp = |x: f64, y: f64| x + (y - x) * w;
        Some(VehicleState {
            s: lerp(a.s, b.s),
            d: lerp(a.d, b.d),
            v: lerp(a.v, b.v),
        })
    }

    /// Index of the sample taken exactly at `t`.
    pub fn index_of(&self, t: f64) -> Option<usize> {
        let idx = self.samples.partition_point(|x| x.t < t);
        (idx < self.samples.len() && self.samples[idx].t == t).then_some(idx)
    }
}

/// Traces of every vehicle in a scene, in first-appearance order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TraceSet {
    vehicles: Vec<VehicleTrace>,
}

impl TraceSet {
    pub fn new(vehicles: Vec<VehicleTrace>) -> Result<Self> {
        let mut seen = HashMap::new();
        for v in &vehicles {
            if seen.insert(v.id.clone(), ()).is_some() {
                return Err(ManeuverError::InvalidTrace {
                    vehicle: v.id.clone(),
                    reason: "duplicate vehicle id".into(),
                });
            }
        }
        Ok(Self { vehicles })
    }

    /// Group flat samples (any row order) by vehicle; per-vehicle order is kept.
    pub fn from_samples(samples: Vec<TraceSample>) -> Result<Self> {
        let mut order: Vec<String> = Vec::new();
        let mut groups: HashMap<String, Vec<TraceSample>> = HashMap::new();
        for s in samples {
            if !groups.contains_key(&s.vehicle_id) {
                order.push(s.vehicle_id.clone());
            }
            groups.entry(s.vehicle_id.clone()).or_default().push(s);
        }
        let vehicles = order
            .into_iter()
            .map(|id| VehicleTrace::new(groups.remove(&id).unwrap_or_default()))
            .collect::<Result<Vec<_>>>()?;
        Self::new(vehicles)
    }

    /// Flatten to rows ordered by time, ties broken by vehicle order.
    pub fn to_samples(&self) -> Vec<TraceSample> {
        let mut rows: Vec<(usize, &TraceSample)> = self
            .vehicles
            .iter()
            .enumerate()
            .flat_map(|(i, v)| v.samples.iter().map(move |s| (i, s)))
            .collect();
        rows.sort_by(|a, b| a.1.t.total_cmp(&b.1.t).then(a.0.cmp(&b.0)));
        rows.into_iter().map(|(_, s)| s.clone()).collect()
    }

    pub fn vehicles(&self) -> &[VehicleTrace] {
        &self.vehicles
    }

    pub fn get(&self, id: &str) -> Result<&VehicleTrace> {
        self.vehicles
            .iter()
            .find(|v| v.id == id)
            .ok_or_else(|| ManeuverError::UnknownVehicle(id.to_string()))
    }

    /// Check every lateral offset lies on the road.
    pub fn validate_road(&self, road: &RoadGeometry) -> Result<()> {
        let half = road.half_width();
        for v in &self.vehicles {
            if let Some(s) = v.samples.iter().find(|s| s.d.abs() > half) {
                return Err(ManeuverError::InvalidTrace {
                    vehicle: v.id.clone(),
                    reason: format!("lateral offset {} m at t = {} s is off the road", s.d, s.t),
                });
            }
        }
        Ok(())
    }

    /// Nearest same-direction vehicle ahead of `ego_id` in its lane at the
    /// ego's first sample.
    pub fn lead_of(&self, ego_id: &str) -> Result<&VehicleTrace> {
        let ego = self.get(ego_id)?;
        let t0 = ego.samples[0].t;
        let e = ego.state_at(t0).expect("first sample");
        self.vehicles
            .iter()
            .filter(|v| v.id != ego_id && v.direction == Direction::WithEgo)
            .filter_map(|v| v.state_at(t0).map(|st| (v, st)))
            .filter(|(_, st)| st.s > e.s && st.d < 0.0)
            .min_by(|a, b| a.1.s.total_cmp(&b.1.s))
            .map(|(v, _)| v)
            .ok_or_else(|| ManeuverError::NoManeuver(format!("no vehicle ahead of `{ego_id}` in its lane")))
    }
}

/// Two-lane road.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoadGeometry {
    #[serde(rename = "lane_width_m")]
    pub lane_width: f64,
}

impl Default for RoadGeometry {
    fn default() -> Self {
        Self { lane_width: 4.0 }
    }
}

impl RoadGeometry {
    pub const NUM_LANES: usize = 2;

    pub fn new(lane_width: f64) -> Result<Self> {
        if !(lane_width.is_finite() && lane_width > 0.0) {
            return Err(ManeuverError::InvalidTrace {
                vehicle: String::new(),
                reason: format!("lane width must be > 0, got {lane_width}"),
            });
        }
        Ok(Self { lane_width })
    }

    /// Lateral offset of the own-lane centre.
    pub fn own_lane_center(&self) -> f64 {
        -self.lane_width / 2.0
    }

    pub fn opposite_lane_center(&self) -> f64 {
        self.lane_width / 2.0
    }

    pub fn half_width(&self) -> f64 {
        self.lane_width
    }
}

/// Thresholds for [`segment_phases`]. Times in s, speeds in m/s.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegmentationConfig {
    /// Lateral speed toward the centerline that starts period 1.
    pub lateral_speed_threshold: f64,
    /// How long the lateral speed must stay above threshold.
    pub sustain: f64,
    /// Longitudinal acceleration required at the period-1 trigger, m/s^2.
    pub accel_threshold: f64,
    /// A centerline crossing counts only if the new side holds this long.
    pub crossing_hysteresis: f64,
    /// Period 5 ends once speed is within this fraction of the
    /// pre-maneuver speed.
    pub speed_return_tolerance: f64,
    /// Distance from the own-lane centre that counts as re-centred, m.
    pub recenter_tolerance: f64,
    /// Centered moving-average window applied to lateral offset and speed
    /// before thresholding; 0 disables smoothing. With smoothing on, the
    /// period-1 onset is located by a hinge fit on the speed series.
    pub smoothing_window: f64,
    /// How far before the first crossing the hinge fit looks.
    pub onset_lookback: f64,
}

impl Default for SegmentationConfig {
    fn default() -> Self {
        Self {
            lateral_speed_threshold: 0.1,
            sustain: 0.3,
            accel_threshold: 0.1,
            crossing_hysteresis: 0.2,
            speed_return_tolerance: 0.05,
            recenter_tolerance: 0.1,
            smoothing_window: 0.0,
            onset_lookback: 3.0,
        }
    }
}

impl SegmentationConfig {
    /// Settings for GPS-grade noise: 1 s smoothing.
    pub fn noisy() -> Self {
        Self {
            smoothing_window: 1.0,
            ..Self::default()
        }
    }
}

/// Boundaries `t0..t5` of the five periods; period `i` is `[t_{i-1}, t_i)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseBoundaries {
    pub times: [f64; 6],
    /// The ego entered the opposite lane (periods 2-4 non-empty).
    pub intrusion: bool,
}

impl PhaseBoundaries {
    /// `[start, end)` of period `1..=5`.
    pub fn period(&self, period: usize) -> (f64, f64) {
        assert!((1..=5).contains(&period), "periods are numbered 1 to 5");
        (self.times[period - 1], self.times[period])
    }

    pub fn duration(&self, period: usize) -> f64 {
        let (a, b) = self.period(period);
        b - a
    }

    pub fn start(&self) -> f64 {
        self.times[0]
    }

    pub fn end(&self) -> f64 {
        self.times[5]
    }

    /// Period containing `t`, or `None` outside the maneuver.
    pub fn period_of(&self, t: f64) -> Option<usize> {
        (1..=5).find(|&p| {
            let (a, b) = self.period(p);
            t >= a && t < b
        })
    }

    pub fn shifted(&self, offset: f64) -> Self {
        Self {
            times: self.times.map(|t| t + offset),
            intrusion: self.intrusion,
        }
    }

    fn validate(&self) -> Result<()> {
        let t = &self.times;
        let ordered = t[0] < t[1] && t[1] <= t[2] && t[2] <= t[3] && t[3] <= t[4] && t[4] < t[5];
        if !ordered || t.iter().any(|x| !x.is_finite()) {
            return Err(ManeuverError::PhaseMismatch(format!("boundaries not ordered: {t:?}")));
        }
        if !self.intrusion && !(t[1] == t[2] && t[2] == t[3] && t[3] == t[4]) {
            return Err(ManeuverError::PhaseMismatch(
                "periods 2-4 must be empty without intrusion".into(),
            ));
        }
        Ok(())
    }
}

/// Ego signals on the ego clock, with the lead interpolated onto it.
struct EgoSignals<'a> {
    ego: &'a VehicleTrace,
    t: Vec<f64>,
    /// Lateral offset used for thresholding (smoothed when configured).
    d: Vec<f64>,
    /// Speed used for thresholding (smoothed when configured).
    v: Vec<f64>,
    config: SegmentationConfig,
}

impl<'a> EgoSignals<'a> {
    fn new(ego: &'a VehicleTrace, config: &SegmentationConfig) -> Self {
        let t: Vec<f64> = ego.samples.iter().map(|s| s.t).collect();
        let d: Vec<f64> = ego.samples.iter().map(|s| s.d).collect();
        let v: Vec<f64> = ego.samples.iter().map(|s| s.v).collect();
        let (d, v) = if config.smoothing_window > 0.0 {
            (
                moving_average(&t, &d, config.smoothing_window),
                moving_average(&t, &v, config.smoothing_window),
            )
        } else {
            (d, v)
        };
        Self {
            ego,
            t,
            d,
            v,
            config: *config,
        }
    }

    fn len(&self) -> usize {
        self.t.len()
    }

    fn smoothing(&self) -> bool {
        self.config.smoothing_window > 0.0
    }

    /// Every sample from `i` up to (not including) `t_i + span` satisfies `pred`.
    fn holds_for(&self, i: usize, span: f64, pred: impl Fn(usize) -> bool) -> bool {
        let end = self.t[i] + span - 1e-9;
        (i..self.len()).take_while(|&l| self.t[l] < end).all(pred)
    }

    fn forward_rate(series: &[f64], t: &[f64], i: usize) -> f64 {
        (series[i + 1] - series[i]) / (t[i + 1] - t[i])
    }

    fn find_trigger(&self, from: usize) -> Option<usize> {
        let c = &self.config;
        let n = self.len();
        let lateral_ok = |l: usize| {
            l + 1 < n
                && self.d[l] < 0.0
                && Self::forward_rate(&self.d, &self.t, l) > c.lateral_speed_threshold
        };
        (from..n.saturating_sub(1)).find(|&i| {
            let window_complete = self.t[n - 1] >= self.t[i] + c.sustain - 1e-9;
            window_complete
                && self.holds_for(i, c.sustain, lateral_ok)
                && Self::forward_rate(&self.v, &self.t, i) > c.accel_threshold
        })
    }

    /// First sustained move into the opposite lane at or after `from`.
    fn find_crossing_out(&self, from: usize) -> Option<usize> {
        let h = self.config.crossing_hysteresis;
        (from..self.len()).find(|&i| self.d[i] > 0.0 && self.holds_for(i, h, |l| self.d[l] > 0.0))
    }

    fn find_crossing_back(&self, from: usize) -> Option<usize> {
        let h = self.config.crossing_hysteresis;
        (from..self.len()).find(|&i| self.d[i] <= 0.0 && self.holds_for(i, h, |l| self.d[l] <= 0.0))
    }

    /// Onset of acceleration before `crossing`, by least-squares hinge fit
    /// `v = a + b * max(0, t - tau)` on the raw speed.
    fn hinge_onset(&self, crossing: usize) -> Option<usize> {
        let lo_t = self.t[crossing] - self.config.onset_lookback;
        let lo = self.t.partition_point(|&x| x < lo_t);
        let idx: Vec<usize> = (lo..=crossing).collect();
        if idx.len() < 4 {
            return None;
        }
        let raw: Vec<f64> = idx.iter().map(|&i| self.ego.samples[i].v).collect();
        let mut best: Option<(f64, usize)> = None;
        for &c in &idx[1..idx.len() - 1] {
            let u: Vec<f64> = idx.iter().map(|&i| (self.t[i] - self.t[c]).max(0.0)).collect();
            let m = u.len() as f64;
            let mu = u.iter().sum::<f64>() / m;
            let mv = raw.iter().sum::<f64>() / m;
            let suu: f64 = u.iter().map(|x| (x - mu) * (x - mu)).sum();
            let suv: f64 = u.iter().zip(&raw).map(|(x, y)| (x - mu) * (y - mv)).sum();
            if suu <= 0.0 {
                continue;
            }
            let slope = suv / suu;
            if slope <= 0.0 {
                continue;
            }
            let icpt = mv - slope * mu;
            let sse: f64 = u
                .iter()
                .zip(&raw)
                .map(|(x, y)| (y - icpt - slope * x).powi(2))
                .sum();
            if best.is_none_or(|(b, _)| sse < b) {
                best = Some((sse, c));
            }
        }
        best.map(|(_, c)| c)
    }

    /// Speed before the maneuver: the sample at the onset, or with smoothing
    /// the trailing mean of raw speed over one window ending there.
    fn pre_maneuver_speed(&self, onset: usize) -> f64 {
        if !self.smoothing() {
            return self.v[onset];
        }
        let from = self.t[onset] - self.config.smoothing_window;
        let vals: Vec<f64> = (0..=onset)
            .filter(|&i| self.t[i] >= from - 1e-9)
            .map(|i| self.ego.samples[i].v)
            .collect();
        vals.iter().sum::<f64>() / vals.len() as f64
    }
}

fn moving_average(t: &[f64], x: &[f64], window: f64) -> Vec<f64> {
    let half = window / 2.0 + 1e-9;
    let mut lo = 0;
    let mut hi = 0;
    let mut out = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        while hi < x.len() && t[hi] <= t[i] + half {
            hi += 1;
        }
        while t[lo] < t[i] - half {
            lo += 1;
        }
        let window_sum: f64 = x[lo..hi].iter().sum();
        out.push(window_sum / (hi - lo) as f64);
    }
    out
}

/// Split an ego trace into the five overtaking periods relative to `lead`.
pub fn segment_phases(
    ego: &VehicleTrace,
    lead: &VehicleTrace,
    road: &RoadGeometry,
    config: &SegmentationConfig,
) -> Result<PhaseBoundaries> {
    if ego.len() < 3 {
        return Err(ManeuverError::NoManeuver("ego trace has fewer than 3 samples".into()));
    }
    if lead.direction != Direction::WithEgo {
        return Err(ManeuverError::NoManeuver(format!(
            "`{}` travels in the opposite direction and cannot be overtaken",
            lead.id
        )));
    }
    let t_first = ego.samples[0].t;
    let lead_first = lead.state_at(t_first).ok_or_else(|| {
        ManeuverError::PhaseMismatch(format!("lead `{}` has no sample at ego start {t_first}", lead.id))
    })?;
    if lead_first.s <= ego.samples[0].s {
        return Err(ManeuverError::NoManeuver(format!(
            "`{}` is not ahead of the ego",
            lead.id
        )));
    }

    let sig = EgoSignals::new(ego, config);
    let n = sig.len();

    let (onset, first_crossing) = if sig.smoothing() {
        match sig.find_crossing_out(0) {
            Some(j) => {
                let onset = sig.hinge_onset(j).ok_or_else(|| {
                    ManeuverError::NoManeuver("no acceleration onset before the crossing".into())
                })?;
                (onset, Some(j))
            }
            None => {
                let onset = sig
                    .find_trigger(0)
                    .ok_or_else(|| ManeuverError::NoManeuver("no period-1 trigger found".into()))?;
                (onset, None)
            }
        }
    } else {
        let onset = sig
            .find_trigger(0)
            .ok_or_else(|| ManeuverError::NoManeuver("no period-1 trigger found".into()))?;
        (onset, sig.find_crossing_out(onset))
    };

    let center = road.own_lane_center();
    let a1 = sig.pre_maneuver_speed(onset);
    let t = &sig.t;

    let (j, k, m, r) = if let Some(j) = first_crossing {
        let m = sig
            .find_crossing_back(j + 1)
            .ok_or_else(|| ManeuverError::NoManeuver("ego never returned to its own lane".into()))?;
        let mut k = m;
        for (i, (&ti, own)) in t.iter().zip(&ego.samples).enumerate().take(m).skip(j) {
            let lead_s = lead
                .state_at(ti)
                .ok_or_else(|| ManeuverError::PhaseMismatch(format!("lead has no sample at {ti}")))?
                .s;
            if own.s >= lead_s {
                k = i;
                break;
            }
        }
        let r = (m..n)
            .find(|&i| (sig.d[i] - center).abs() <= config.recenter_tolerance)
            .ok_or_else(|| ManeuverError::NoManeuver("ego never re-centred in its lane".into()))?;
        (j, k, m, r)
    } else {
        let mut excursion = 0.0f64;
        let r = (onset + 1..n)
            .find(|&i| {
                let dev = (sig.d[i] - center).abs();
                excursion = excursion.max(dev);
                excursion > config.recenter_tolerance && dev <= config.recenter_tolerance
            })
            .ok_or_else(|| ManeuverError::NoManeuver("lateral excursion never completed".into()))?;
        (r, r, r, r)
    };

    let tol = config.speed_return_tolerance * a1.abs();
    let q = (r + 1..n)
        .find(|&i| (sig.v[i] - a1).abs() <= tol)
        .ok_or_else(|| ManeuverError::NoManeuver("speed never returned to its pre-maneuver level".into()))?;

    let phases = PhaseBoundaries {
        times: [t[onset], t[j], t[k], t[m], t[r], t[q]],
        intrusion: first_crossing.is_some(),
    };
    phases.validate()?;
    Ok(phases)
}

/// Variables of one overtaking maneuver. Distances in m, times in s, speeds
/// in m/s except `dab` (km/h). Optional fields are `None` when the vehicle
/// they refer to is absent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManeuverRecord {
    /// Vehicles passed (N).
    pub n_overtaken: usize,
    pub t_total: f64,
    /// Durations of periods 1-4.
    pub tp: [f64; 4],
    pub t_period5: f64,
    pub d_total: f64,
    /// Distances travelled in periods 1-4.
    pub dp: [f64; 4],
    pub d_period5: f64,
    /// Primary distance: ego to lead at period-1 start.
    pub m1: f64,
    /// Ultimate distance: lead to ego at the end of period 4.
    pub m2: Option<f64>,
    /// Mutual distance: minimum lateral clearance to the lead in period 3.
    pub m: Option<f64>,
    /// Gap to the oncoming vehicle at the start of period 2.
    pub m3: Option<f64>,
    /// Gap from the lead to the next same-direction vehicle ahead of it.
    pub m4: Option<f64>,
    pub a1: f64,
    pub a12: f64,
    pub a11: f64,
    pub dab: f64,
    pub opposite_lane_time: f64,
    pub intrusion: bool,
    pub phases: PhaseBoundaries,
}

impl ManeuverRecord {
    /// Covariates and duration for model fitting. Maneuvers that passed
    /// nothing, or whose ultimate distance is unknown, are rejected.
    pub fn to_observation(&self) -> Result<DurationObservation> {
        if self.n_overtaken == 0 {
            return Err(ManeuverError::NotUsable("no vehicle was overtaken".into()));
        }
        let ud = self
            .m2
            .ok_or_else(|| ManeuverError::NotUsable("ultimate distance unavailable".into()))?;
        let covariates = CovariateVector::new(ud, self.m1.max(0.0), self.dab, self.n_overtaken > 1)
            .map_err(|e| ManeuverError::NotUsable(e.to_string()))?;
        DurationObservation::new(self.t_total, covariates).map_err(|e| ManeuverError::NotUsable(e.to_string()))
    }
}

fn ego_index(ego: &VehicleTrace, t: f64) -> Result<usize> {
    ego.index_of(t)
        .ok_or_else(|| ManeuverError::PhaseMismatch(format!("no ego sample at boundary t = {t}")))
}

fn state(trace: &VehicleTrace, t: f64) -> Result<VehicleState> {
    trace
        .state_at(t)
        .ok_or_else(|| ManeuverError::PhaseMismatch(format!("`{}` has no state at t = {t}", trace.id)))
}

/// Extract the full variable record of a segmented maneuver.
pub fn extract_variables(
    traces: &TraceSet,
    ego_id: &str,
    lead_id: &str,
    phases: &PhaseBoundaries,
    config: &SegmentationConfig,
) -> Result<ManeuverRecord> {
    phases.validate()?;
    let ego = traces.get(ego_id)?;
    let lead = traces.get(lead_id)?;
    let sig = EgoSignals::new(ego, config);
    let idx: Vec<usize> = phases
        .times
        .iter()
        .map(|&t| ego_index(ego, t))
        .collect::<Result<_>>()?;
    let s_at = |i: usize| ego.samples[i].s;
    let tb = &phases.times;

    let lead0 = state(lead, tb[0])?;
    let a1 = sig.pre_maneuver_speed(idx[0]);
    let m1 = lead0.s - s_at(idx[0]);
    let m2 = {
        let gap = s_at(idx[4]) - state(lead, tb[4])?.s;
        (gap >= 0.0).then_some(gap)
    };
    let m = (idx[2]..idx[3])
        .map(|i| {
            let l = state(lead, ego.samples[i].t)?;
            Ok((ego.samples[i].d - l.d).abs())
        })
        .collect::<Result<Vec<f64>>>()?
        .into_iter()
        .reduce(f64::min);

    let ego_s1 = s_at(idx[1]);
    let m3 = traces
        .vehicles()
        .iter()
        .filter(|v| v.direction == Direction::Oncoming)
        .filter_map(|v| v.state_at(tb[1]))
        .map(|st| st.s - ego_s1)
        .filter(|gap| *gap > 0.0)
        .reduce(f64::min);
    let lead_s1 = state(lead, tb[1])?.s;
    let m4 = traces
        .vehicles()
        .iter()
        .filter(|v| v.direction == Direction::WithEgo && v.id != ego_id && v.id != lead_id)
        .filter_map(|v| v.state_at(tb[1]))
        .map(|st| st.s - lead_s1)
        .filter(|gap| *gap > 0.0)
        .reduce(f64::min);

    let tp = [0, 1, 2, 3].map(|i| tb[i + 1] - tb[i]);
    let dp = [0, 1, 2, 3].map(|i| s_at(idx[i + 1]) - s_at(idx[i]));

    Ok(ManeuverRecord {
        n_overtaken: count_overtaken(traces, ego_id, phases)?,
        t_total: tb[5] - tb[0],
        tp,
        t_period5: tb[5] - tb[4],
        d_total: s_at(idx[5]) - s_at(idx[0]),
        dp,
        d_period5: s_at(idx[5]) - s_at(idx[4]),
        m1,
        m2,
        m,
        m3,
        m4,
        a1,
        a12: sig.v[idx[1]],
        a11: sig.v[idx[3]],
        dab: (a1 - lead0.v) * 3.6,
        opposite_lane_time: opposite_lane_occupancy(phases, ego),
        intrusion: phases.intrusion,
        phases: *phases,
    })
}

/// Time spent beyond the centerline between maneuver start and end, summed
/// over sample intervals whose starting sample is in the opposite lane.
pub fn opposite_lane_occupancy(phases: &PhaseBoundaries, ego: &VehicleTrace) -> f64 {
    if !phases.intrusion {
        return 0.0;
    }
    ego.samples
        .windows(2)
        .filter(|w| w[0].t >= phases.start() && w[0].t < phases.end() && w[0].d > 0.0)
        .map(|w| w[1].t - w[0].t)
        .sum()
}

/// Same-direction vehicles ahead of the ego at maneuver start and behind it
/// at maneuver end.
pub fn count_overtaken(traces: &TraceSet, ego_id: &str, phases: &PhaseBoundaries) -> Result<usize> {
    let ego = traces.get(ego_id)?;
    let e0 = state(ego, phases.start())?;
    let e5 = state(ego, phases.end())?;
    Ok(traces
        .vehicles()
        .iter()
        .filter(|v| v.id != ego_id && v.direction == Direction::WithEgo)
        .filter(|v| match (v.state_at(phases.start()), v.state_at(phases.end())) {
            (Some(a), Some(b)) => a.s > e0.s && b.s < e5.s,
            _ => false,
        })
        .count())
}

/// Segment and extract in one step, with the lead chosen as the nearest
/// vehicle ahead of the ego in its lane.
pub fn analyze(
    traces: &TraceSet,
    ego_id: &str,
    road: &RoadGeometry,
    config: &SegmentationConfig,
) -> Result<ManeuverRecord> {
    traces.validate_road(road)?;
    let ego = traces.get(ego_id)?;
    let lead = traces.lead_of(ego_id)?;
    let phases = segment_phases(ego, lead, road, config)?;
    extract_variables(traces, ego_id, &lead.id, &phases, config)
}

/// A camera observation of a named vehicle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VehicleObservation {
    pub vehicle_id: String,
    pub observation: ImageObservation,
}

/// Rebuild a vehicle's trace from the ego trace and camera observations of
/// it: range from the ground-contact row, lateral offset from the column,
/// speed by gap differencing between consecutive observations. After the
/// last observation the vehicle is dead-reckoned on the ego clock at its
/// last estimated speed up to `extend_until`.
pub fn trace_from_observations(
    ego: &VehicleTrace,
    observations: &[ImageObservation],
    camera: &CameraModel,
    vehicle_id: &str,
    direction: Direction,
    extend_until: Option<f64>,
) -> Result<VehicleTrace> {
    if observations.len() < 2 {
        return Err(ManeuverError::InvalidTrace {
            vehicle: vehicle_id.to_string(),
            reason: "need at least two observations to difference gaps".into(),
        });
    }
    let mut rows = Vec::with_capacity(observations.len());
    for obs in observations {
        let e = state(ego, obs.t)?;
        let z = geometry::longitudinal_distance(camera, obs)?;
        let lateral = geometry::lateral_offset(camera, obs, z)?;
        rows.push((obs.t, e, z, lateral));
    }
    let speed_between = |a: &(f64, VehicleState, f64, f64), b: &(f64, VehicleState, f64, f64)| {
        let dt = b.0 - a.0;
        match direction {
            Direction::WithEgo => geometry::adjacent_vehicle_speed(a.1.v, b.1.v, a.2, b.2, dt),
            Direction::Oncoming => geometry::oncoming_vehicle_speed(a.1.v, b.1.v, a.2, b.2, dt),
        }
    };
    let mut samples = Vec::with_capacity(rows.len());
    for i in 0..rows.len() {
        let v = if i == 0 {
            speed_between(&rows[0], &rows[1])?
        } else {
            speed_between(&rows[i - 1], &rows[i])?
        };
        let (t, e, z, lateral) = rows[i];
        samples.push(TraceSample {
            t,
            vehicle_id: vehicle_id.to_string(),
            direction,
            s: e.s + z,
            d: e.d + lateral,
            v,
        });
    }
    if let Some(until) = extend_until {
        let last = samples.last().cloned().expect("non-empty");
        for smp in ego.samples.iter().filter(|s| s.t > last.t && s.t <= until) {
            samples.push(TraceSample {
                t: smp.t,
                s: last.s + direction.sign() * last.v * (smp.t - last.t),
                ..last.clone()
            });
        }
    }
    VehicleTrace::new(samples)
}
