//! Deterministic two-lane traffic simulator.
//!
//! Vehicles follow closed-form piecewise-constant-acceleration profiles, so
//! every sample is an exact kinematic state rather than an integration
//! result. An optional ego script drives a full overtake and produces
//! ground-truth phase boundaries computed from the continuous-time plan.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{self, CameraModel, GeometryError};
use crate::maneuver::{
    Direction, ManeuverError, ManeuverRecord, PhaseBoundaries, RoadGeometry, TraceSample, TraceSet,
    VehicleObservation, VehicleTrace,
};
use crate::numeric::logistic;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("invalid scenario: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Trace(#[from] ManeuverError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

pub type Result<T> = std::result::Result<T, SimError>;

/// Constant acceleration from `start` until the next segment begins.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AccelSegment {
    #[serde(rename = "start_s")]
    pub start: f64,
    #[serde(rename = "accel_mps2")]
    pub accel: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VehicleSpec {
    pub id: String,
    pub direction: Direction,
    #[serde(rename = "s0_m")]
    pub s0: f64,
    #[serde(rename = "d0_m")]
    pub d0: f64,
    #[serde(rename = "speed_mps")]
    pub speed: f64,
    #[serde(default)]
    pub accel_profile: Vec<AccelSegment>,
}

/// Overtake plan for the ego. The maneuver starts at the first sample where
/// the gap to the lead is at most `trigger_gap`: the ego accelerates to
/// `peak_speed` while moving to the opposite lane centre over
/// `lateral_duration`, returns once `return_gap` ahead of the lead, then
/// decelerates back to its starting speed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EgoScript {
    pub ego_id: String,
    pub lead_id: String,
    #[serde(rename = "trigger_gap_m")]
    pub trigger_gap: f64,
    #[serde(rename = "peak_speed_mps")]
    pub peak_speed: f64,
    #[serde(rename = "accel_mps2")]
    pub accel: f64,
    #[serde(rename = "decel_mps2")]
    pub decel: f64,
    #[serde(rename = "lateral_duration_s")]
    pub lateral_duration: f64,
    #[serde(rename = "return_gap_m")]
    pub return_gap: f64,
    /// Logistic steepness of the lateral S-curve.
    pub steepness: f64,
}

impl Default for EgoScript {
    fn default() -> Self {
        Self {
            ego_id: "ego".into(),
            lead_id: "car1".into(),
            trigger_gap: 20.0,
            peak_speed: 18.0,
            accel: 1.5,
            decel: 1.5,
            lateral_duration: 2.45,
            return_gap: 8.0,
            steepness: 8.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GpsNoise {
    #[serde(rename = "sigma_pos_m")]
    pub sigma_pos: f64,
    #[serde(rename = "sigma_speed_mps")]
    pub sigma_speed: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    #[serde(default)]
    pub road: RoadGeometry,
    #[serde(rename = "dt_s", default = "default_dt")]
    pub dt: f64,
    #[serde(rename = "duration_s")]
    pub duration: f64,
    #[serde(default)]
    pub seed: u64,
    pub vehicles: Vec<VehicleSpec>,
    #[serde(default)]
    pub ego_script: Option<EgoScript>,
    #[serde(default)]
    pub gps_noise: Option<GpsNoise>,
}

fn default_dt() -> f64 {
    0.1
}

impl ScenarioSpec {
    /// Ego closes on a slower car, passes it with an oncoming car far away
    /// and a second motorcycle further ahead, spending about 4 s in the
    /// opposite lane.
    pub fn default_overtake() -> Self {
        let own = -2.0;
        let vehicle = |id: &str, direction, s0, d0, speed| VehicleSpec {
            id: id.into(),
            direction,
            s0,
            d0,
            speed,
            accel_profile: Vec::new(),
        };
        Self {
            road: RoadGeometry::default(),
            dt: 0.1,
            duration: 20.0,
            seed: 0,
            vehicles: vec![
                vehicle("ego", Direction::WithEgo, 0.0, own, 12.0),
                vehicle("car1", Direction::WithEgo, 40.0, own, 8.0),
                vehicle("bike2", Direction::WithEgo, 110.0, own, 11.0),
                vehicle("car2", Direction::Oncoming, 400.0, 2.0, 12.0),
            ],
            ego_script: Some(EgoScript::default()),
            gps_noise: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(SimError::InvalidSpec(m));
        if !(self.road.lane_width.is_finite() && self.road.lane_width > 0.0) {
            return bad(format!("lane width must be > 0, got {}", self.road.lane_width));
        }
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return bad(format!("dt must be > 0, got {}", self.dt));
        }
        if !(self.duration.is_finite() && self.duration >= 0.0) {
            return bad(format!("duration must be >= 0, got {}", self.duration));
        }
        let mut ids = std::collections::HashSet::new();
        for v in &self.vehicles {
            if !ids.insert(v.id.as_str()) {
                return bad(format!("duplicate vehicle id `{}`", v.id));
            }
            if ![v.s0, v.d0, v.speed].iter().all(|x| x.is_finite()) || v.speed < 0.0 {
                return bad(format!("vehicle `{}` has invalid initial state", v.id));
            }
            if v.d0.abs() > self.road.half_width() {
                return bad(format!("vehicle `{}` starts off the road", v.id));
            }
            if v.accel_profile.windows(2).any(|w| !(w[0].start < w[1].start))
                || v.accel_profile.iter().any(|a| !(a.start.is_finite() && a.accel.is_finite()))
            {
                return bad(format!("vehicle `{}` has an unordered acceleration profile", v.id));
            }
        }
        if let Some(g) = &self.gps_noise {
            if !(g.sigma_pos >= 0.0 && g.sigma_speed >= 0.0) {
                return bad("noise sigmas must be >= 0".into());
            }
        }
        if let Some(s) = &self.ego_script {
            let find = |id: &str| self.vehicles.iter().find(|v| v.id == id);
            let Some(ego) = find(&s.ego_id) else {
                return bad(format!("scripted ego `{}` not among vehicles", s.ego_id));
            };
            let Some(lead) = find(&s.lead_id) else {
                return bad(format!("scripted lead `{}` not among vehicles", s.lead_id));
            };
            if ego.direction != Direction::WithEgo || lead.direction != Direction::WithEgo {
                return bad("ego and lead must travel in the same direction".into());
            }
            if !ego.accel_profile.is_empty() {
                return bad("a scripted ego must start with an empty acceleration profile".into());
            }
            let positive = [s.peak_speed, s.accel, s.decel, s.lateral_duration, s.steepness];
            if positive.iter().any(|x| !(x.is_finite() && *x > 0.0)) || !(s.trigger_gap > 0.0) {
                return bad("script speeds, rates and durations must be > 0".into());
            }
            if !(s.return_gap >= 0.0) {
                return bad("return gap must be >= 0".into());
            }
        }
        Ok(())
    }

    fn sample_times(&self) -> Vec<f64> {
        let n = (self.duration / self.dt + 1e-9).floor() as usize;
        (0..=n).map(|i| i as f64 * self.dt).collect()
    }
}

/// Closed-form longitudinal motion. Speeds never go negative: a decelerating
/// vehicle that reaches zero stays stopped until the next segment.
#[derive(Debug, Clone)]
struct Longitudinal {
    s0: f64,
    v0: f64,
    sign: f64,
    segments: Vec<AccelSegment>,
}

impl Longitudinal {
    /// Position and speed at `t >= 0`.
    fn at(&self, t: f64) -> (f64, f64) {
        let (mut dist, mut v, mut now, mut accel) = (0.0, self.v0, 0.0, 0.0);
        for seg in self.segments.iter().take_while(|s| s.start < t) {
            if seg.start > now {
                let (dd, vv) = advance(v, accel, seg.start - now);
                dist += dd;
                v = vv;
                now = seg.start;
            }
            accel = seg.accel;
        }
        let (dd, vv) = advance(v, accel, t - now);
        (self.s0 + self.sign * (dist + dd), vv)
    }
}

fn advance(v: f64, a: f64, tau: f64) -> (f64, f64) {
    if a < 0.0 && v + a * tau < 0.0 {
        let stop = -v / a;
        return (v * stop + 0.5 * a * stop * stop, 0.0);
    }
    (v * tau + 0.5 * a * tau * tau, v + a * tau)
}

/// Normalised logistic S-curve on `[0, 1]` with `s(0) = 0`, `s(1) = 1`.
fn s_curve(u: f64, k: f64) -> f64 {
    let u = u.clamp(0.0, 1.0);
    let lo = logistic(-k / 2.0);
    let hi = logistic(k / 2.0);
    (logistic(k * (u - 0.5)) - lo) / (hi - lo)
}

/// `u` at which the S-curve reaches `level`.
fn s_curve_inverse(level: f64, k: f64) -> f64 {
    let lo = logistic(-k / 2.0);
    let hi = logistic(k / 2.0);
    let p = lo + level * (hi - lo);
    0.5 + (p / (1.0 - p)).ln() / k
}

/// Smallest `t` in `[a, b]` where `g` turns non-negative, by scanning at
/// `step` then bisecting; assumes `g(a) < 0`.
fn first_root(g: impl Fn(f64) -> f64, a: f64, b: f64, step: f64) -> Option<f64> {
    let mut lo = a;
    while lo < b {
        let hi = (lo + step).min(b);
        if g(hi) >= 0.0 {
            let (mut l, mut h) = (lo, hi);
            for _ in 0..200 {
                let mid = 0.5 * (l + h);
                if mid <= l || mid >= h {
                    break;
                }
                if g(mid) >= 0.0 {
                    h = mid;
                } else {
                    l = mid;
                }
            }
            return Some(h);
        }
        lo = hi;
    }
    None
}

#[derive(Debug, Clone)]
struct Lateral {
    d0: f64,
    /// `(start, from, to)` transitions, each lasting `duration`.
    transitions: Vec<(f64, f64, f64)>,
    duration: f64,
    steepness: f64,
}

impl Lateral {
    fn at(&self, t: f64) -> f64 {
        let mut d = self.d0;
        for &(start, from, to) in &self.transitions {
            if t >= start {
                d = from + (to - from) * s_curve((t - start) / self.duration, self.steepness);
            }
        }
        d
    }
}

/// The continuous-time overtake plan.
#[derive(Debug, Clone, Copy)]
struct Plan {
    start: f64,
    pre_speed: f64,
    return_start: Option<f64>,
    decel_start: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollisionReport {
    #[serde(rename = "t_s")]
    pub t: f64,
    pub vehicles: [String; 2],
    #[serde(rename = "longitudinal_gap_m")]
    pub longitudinal_gap: f64,
    #[serde(rename = "lateral_gap_m")]
    pub lateral_gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub phases: PhaseBoundaries,
    pub record: ManeuverRecord,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimOutput {
    pub traces: TraceSet,
    pub ground_truth: Option<GroundTruth>,
    /// Set when two vehicles came within collision distance; traces stop at
    /// that sample.
    pub collision: Option<CollisionReport>,
}

struct Motion {
    spec: VehicleSpec,
    lon: Longitudinal,
    lat: Lateral,
}

impl Motion {
    fn state(&self, t: f64) -> (f64, f64, f64) {
        let (s, v) = self.lon.at(t);
        (s, self.lat.at(t), v)
    }
}

const COLLISION_LONGITUDINAL: f64 = 2.0;
const COLLISION_LATERAL: f64 = 1.0;

/// Run a scenario. GPS noise in the spec is not applied here; see
/// [`add_gps_noise`].
pub fn run_scenario(spec: &ScenarioSpec) -> Result<SimOutput> {
    spec.validate()?;
    let times = spec.sample_times();
    let mut motions: Vec<Motion> = spec
        .vehicles
        .iter()
        .map(|v| Motion {
            spec: v.clone(),
            lon: Longitudinal {
                s0: v.s0,
                v0: v.speed,
                sign: v.direction.sign(),
                segments: v.accel_profile.clone(),
            },
            lat: Lateral {
                d0: v.d0,
                transitions: Vec::new(),
                duration: 1.0,
                steepness: 1.0,
            },
        })
        .collect();

    let plan = match &spec.ego_script {
        Some(script) => plan_overtake(spec, script, &times, &mut motions),
        None => None,
    };

    let mut per_vehicle: Vec<Vec<TraceSample>> = vec![Vec::with_capacity(times.len()); motions.len()];
    let mut collision = None;
    'clock: for &t in &times {
        let states: Vec<(f64, f64, f64)> = motions.iter().map(|m| m.state(t)).collect();
        for (i, m) in motions.iter().enumerate() {
            let (s, d, v) = states[i];
            per_vehicle[i].push(TraceSample {
                t,
                vehicle_id: m.spec.id.clone(),
                direction: m.spec.direction,
                s,
                d,
                v,
            });
        }
        for i in 0..states.len() {
            for j in i + 1..states.len() {
                let ds = (states[i].0 - states[j].0).abs();
                let dd = (states[i].1 - states[j].1).abs();
                if ds < COLLISION_LONGITUDINAL && dd < COLLISION_LATERAL {
                    collision = Some(CollisionReport {
                        t,
                        vehicles: [motions[i].spec.id.clone(), motions[j].spec.id.clone()],
                        longitudinal_gap: ds,
                        lateral_gap: dd,
                    });
                    break 'clock;
                }
            }
        }
    }

    let traces = TraceSet::new(
        per_vehicle
            .into_iter()
            .map(VehicleTrace::new)
            .collect::<std::result::Result<Vec<_>, _>>()?,
    )?;

    let ground_truth = match (&spec.ego_script, plan, &collision) {
        (Some(script), Some(plan), None) => ground_truth(spec, script, &plan, &motions, &times),
        _ => None,
    };
    Ok(SimOutput {
        traces,
        ground_truth,
        collision,
    })
}

/// Work out the overtake in continuous time and install it in the ego's
/// motion. Returns `None` when the trigger gap is never reached.
fn plan_overtake(spec: &ScenarioSpec, script: &EgoScript, times: &[f64], motions: &mut [Motion]) -> Option<Plan> {
    let ego_idx = motions.iter().position(|m| m.spec.id == script.ego_id)?;
    let lead_idx = motions.iter().position(|m| m.spec.id == script.lead_id)?;
    let lead = motions[lead_idx].lon.clone();
    let base = motions[ego_idx].lon.clone();
    let start = times.iter().copied().find(|&t| {
        let gap = lead.at(t).0 - base.at(t).0;
        gap > 0.0 && gap <= script.trigger_gap + 1e-9
    })?;
    let pre_speed = base.at(start).1;
    let end = *times.last()?;
    let width = spec.road.lane_width;
    let own = spec.road.own_lane_center();
    let opposite = spec.road.opposite_lane_center();
    let l = script.lateral_duration;

    let accel_time = ((script.peak_speed - pre_speed) / script.accel).max(0.0);
    let mut lon = Longitudinal {
        segments: vec![
            AccelSegment {
                start,
                accel: script.accel,
            },
            AccelSegment {
                start: start + accel_time,
                accel: 0.0,
            },
        ],
        ..base
    };
    let mut lat = Lateral {
        d0: motions[ego_idx].spec.d0,
        transitions: vec![(start, own, opposite)],
        duration: l,
        steepness: script.steepness,
    };
    debug_assert!((opposite - own - width).abs() < 1e-12);

    let ahead = |t: f64| lon.at(t).0 - lead.at(t).0 - script.return_gap;
    let earliest = start + l;
    let return_start = if ahead(earliest) >= 0.0 {
        Some(earliest)
    } else {
        first_root(ahead, earliest, end, spec.dt)
    };
    let mut decel_start = None;
    if let Some(tr) = return_start {
        lat.transitions.push((tr, opposite, own));
        let td = tr + l;
        let v_at = lon.at(td).1;
        let mut segments = vec![AccelSegment {
            start,
            accel: script.accel,
        }];
        if start + accel_time < td {
            segments.push(AccelSegment {
                start: start + accel_time,
                accel: 0.0,
            });
        }
        if v_at > pre_speed {
            segments.push(AccelSegment {
                start: td,
                accel: -script.decel,
            });
            segments.push(AccelSegment {
                start: td + (v_at - pre_speed) / script.decel,
                accel: 0.0,
            });
            decel_start = Some(td);
        }
        lon.segments = segments;
    }
    motions[ego_idx].lon = lon;
    motions[ego_idx].lat = lat;
    Some(Plan {
        start,
        pre_speed,
        return_start,
        decel_start,
    })
}

/// First sample time at or after `event` (strictly after when `strict`).
fn snap(times: &[f64], event: f64, strict: bool) -> Option<usize> {
    times.iter().position(|&t| if strict { t > event } else { t >= event })
}

/// Ground truth from the plan's continuous event times snapped to samples,
/// with distances and gaps from the exact kinematics.
fn ground_truth(
    spec: &ScenarioSpec,
    script: &EgoScript,
    plan: &Plan,
    motions: &[Motion],
    times: &[f64],
) -> Option<GroundTruth> {
    let ego = motions.iter().find(|m| m.spec.id == script.ego_id)?;
    let lead = motions.iter().find(|m| m.spec.id == script.lead_id)?;
    let l = script.lateral_duration;
    let tr = plan.return_start?;
    let td = plan.decel_start?;

    let i0 = snap(times, plan.start, false)?;
    let i1 = snap(times, plan.start + l / 2.0, true)?;
    let i3 = snap(times, tr + l / 2.0, false)?;
    let pass = first_root(
        |t| ego.state(t).0 - lead.state(t).0,
        plan.start,
        times[i3],
        spec.dt,
    );
    let i2 = pass
        .and_then(|e| snap(times, e, false))
        .filter(|&i| i < i3)
        .unwrap_or(i3)
        .max(i1);
    let recentered = 1.0 - 0.1 / spec.road.lane_width;
    let i4 = snap(times, tr + l * s_curve_inverse(recentered, script.steepness), false)?;
    let v_dec = ego.state(td).2;
    let band = plan.pre_speed * 1.05;
    let e5 = if v_dec > band {
        td + (v_dec - band) / script.decel
    } else {
        td
    };
    let i5 = snap(times, e5, false)?.max(i4 + 1);
    if i5 >= times.len() {
        return None;
    }
    let idx = [i0, i1, i2, i3, i4, i5];
    let tb = idx.map(|i| times[i]);
    let phases = PhaseBoundaries {
        times: tb,
        intrusion: true,
    };

    let ego_s = |t: f64| ego.state(t).0;
    let lead_at = |t: f64| lead.state(t);
    let m2 = {
        let gap = ego_s(tb[4]) - lead_at(tb[4]).0;
        (gap >= 0.0).then_some(gap)
    };
    let m = times[i2..i3]
        .iter()
        .map(|&t| (ego.state(t).1 - lead_at(t).1).abs())
        .reduce(f64::min);
    let others = || motions.iter().filter(|m| m.spec.id != ego.spec.id && m.spec.id != lead.spec.id);
    let m3 = others()
        .filter(|m| m.spec.direction == Direction::Oncoming)
        .map(|m| m.state(tb[1]).0 - ego_s(tb[1]))
        .filter(|g| *g > 0.0)
        .reduce(f64::min);
    let m4 = others()
        .filter(|m| m.spec.direction == Direction::WithEgo)
        .map(|m| m.state(tb[1]).0 - lead_at(tb[1]).0)
        .filter(|g| *g > 0.0)
        .reduce(f64::min);
    let n_overtaken = motions
        .iter()
        .filter(|m| m.spec.id != ego.spec.id && m.spec.direction == Direction::WithEgo)
        .filter(|m| m.state(tb[0]).0 > ego_s(tb[0]) && m.state(tb[5]).0 < ego_s(tb[5]))
        .count();
    let opposite_lane_time = (i0..i5)
        .filter(|&i| ego.state(times[i]).1 > 0.0)
        .map(|i| times[i + 1] - times[i])
        .sum();

    let record = ManeuverRecord {
        n_overtaken,
        t_total: tb[5] - tb[0],
        tp: [0, 1, 2, 3].map(|i| tb[i + 1] - tb[i]),
        t_period5: tb[5] - tb[4],
        d_total: ego_s(tb[5]) - ego_s(tb[0]),
        dp: [0, 1, 2, 3].map(|i| ego_s(tb[i + 1]) - ego_s(tb[i])),
        d_period5: ego_s(tb[5]) - ego_s(tb[4]),
        m1: lead_at(tb[0]).0 - ego_s(tb[0]),
        m2,
        m,
        m3,
        m4,
        a1: plan.pre_speed,
        a12: ego.state(tb[1]).2,
        a11: ego.state(tb[3]).2,
        dab: (plan.pre_speed - lead_at(tb[0]).2) * 3.6,
        opposite_lane_time,
        intrusion: true,
        phases,
    };
    Some(GroundTruth { phases, record })
}

/// Camera observations of every vehicle between 0 and 60 m ahead of the ego
/// at each ego sample, in time order.
pub fn render_observations(traces: &TraceSet, camera: &CameraModel, ego_id: &str) -> Result<Vec<VehicleObservation>> {
    const VISIBLE_RANGE: f64 = 60.0;
    camera.validate()?;
    let ego = traces.get(ego_id)?;
    let mut out = Vec::new();
    for e in &ego.samples {
        for v in traces.vehicles().iter().filter(|v| v.id != ego.id) {
            let Some(st) = v.state_at(e.t) else { continue };
            let z = st.s - e.s;
            if z > 0.0 && z <= VISIBLE_RANGE {
                out.push(VehicleObservation {
                    vehicle_id: v.id.clone(),
                    observation: geometry::project_to_image(camera, z, st.d - e.d, e.t)?,
                });
            }
        }
    }
    Ok(out)
}

/// Add independent zero-mean Gaussian noise to every `s`, `d` (sigma_pos)
/// and `v` (sigma_speed). Zero sigmas leave the traces untouched.
pub fn add_gps_noise(traces: &TraceSet, sigma_pos: f64, sigma_speed: f64, seed: u64) -> Result<TraceSet> {
    let normal = |sigma: f64| {
        Normal::new(0.0, sigma).map_err(|e| SimError::InvalidSpec(format!("noise sigma {sigma}: {e}")))
    };
    if !(sigma_pos >= 0.0 && sigma_speed >= 0.0) {
        return Err(SimError::InvalidSpec("noise sigmas must be >= 0".into()));
    }
    let pos = normal(sigma_pos)?;
    let spd = normal(sigma_speed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let vehicles = traces
        .vehicles()
        .iter()
        .map(|v| {
            let mut v = v.clone();
            for smp in &mut v.samples {
                if sigma_pos > 0.0 {
                    smp.s += pos.sample(&mut rng);
                    smp.d += pos.sample(&mut rng);
                }
                if sigma_speed > 0.0 {
                    smp.v += spd.sample(&mut rng);
                }
            }
            v
        })
        .collect();
    Ok(TraceSet::new(vehicles)?)
}
