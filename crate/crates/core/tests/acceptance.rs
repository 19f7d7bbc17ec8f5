//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on any
//! failure. Runs as a plain binary so the report is always printed.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use overtake_core::avoidance::{decide, DecisionConfig, EgoState, GapSpeed, TrafficSnapshot, Verdict};
use overtake_core::fit::{fit_aft, simulate_durations, FitOptions};
use overtake_core::geometry::{
    adjacent_vehicle_speed, project_to_image, CalibrationSession, CalibrationSet, CameraModel,
};
use overtake_core::maneuver::{self, SegmentationConfig};
use overtake_core::sim::{run_scenario, ScenarioSpec};
use overtake_core::survival::{inflection_point, CovariateVector, LogLogisticAft, Parameterization};
use overtake_core::io;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = Result<String, String>;
type Criterion = (&'static str, fn() -> Check);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within_budget(elapsed: Duration, budget_s: f64) -> Result<(), String> {
    ensure(elapsed.as_secs_f64() < budget_s, || {
        format!("took {:.2} s, budget {budget_s} s", elapsed.as_secs_f64())
    })
}

fn x(ud: f64, pd: f64, dab: f64, multiple: bool) -> CovariateVector {
    CovariateVector::new(ud, pd, dab, multiple).unwrap()
}

fn analytic_identities() -> Check {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let grid: Vec<f64> = (1..=1000).map(|i| i as f64 * 0.05).collect();
    let mut worst = [0.0f64; 4];
    let mut quantile_points = 0usize;
    for _ in 0..20 {
        let mode = if rng.random_bool(0.5) {
            Parameterization::ScaledLocation
        } else {
            Parameterization::StandardAft
        };
        let gamma = rng.random_range(0.1..1.0);
        let betas = [
            rng.random_range(-1.0..3.0),
            rng.random_range(-0.1..0.1),
            rng.random_range(-0.1..0.1),
            rng.random_range(-0.06..0.06),
            rng.random_range(-0.5..0.5),
        ];
        let model = LogLogisticAft::with_betas(mode, gamma, betas).map_err(|e| e.to_string())?;
        let cov = x(
            rng.random_range(0.0..15.0),
            rng.random_range(0.0..20.0),
            rng.random_range(-5.0..40.0),
            rng.random_bool(0.3),
        );
        let dist = model.distribution(&cov).map_err(|e| e.to_string())?;
        for &t in &grid {
            let s = dist.survival(t).unwrap();
            let f_cdf = dist.cdf(t).unwrap();
            let h = dist.hazard(t).unwrap();
            let f = dist.density(t).unwrap();
            if s > 0.0 {
                worst[0] = worst[0].max((h - f / s).abs());
            }
            worst[1] = worst[1].max((s + f_cdf - 1.0).abs());
            let step = 1e-5 * t;
            let cum = |u: f64| dist.cumulative_hazard(u).unwrap();
            let fd = (cum(t + step) - cum(t - step)) / (2.0 * step);
            worst[2] = worst[2].max(((fd - h) / h).abs());
            // Outside this band the CDF rounds to within a few ulps of 0 or 1
            // and the inverse is not resolvable in double precision.
            if f_cdf > 1e-6 && f_cdf < 1.0 - 1e-6 {
                let back = dist.quantile(f_cdf).unwrap().seconds();
                worst[3] = worst[3].max(((back - t) / t).abs());
                quantile_points += 1;
            }
        }
    }
    let elapsed = start.elapsed();
    ensure(worst[0] < 1e-9, || format!("|h - f/S| reached {:e}", worst[0]))?;
    ensure(worst[1] < 1e-12, || format!("|S + F - 1| reached {:e}", worst[1]))?;
    ensure(worst[2] < 1e-5, || format!("finite-difference hazard rel. error {:e}", worst[2]))?;
    ensure(worst[3] < 1e-9, || format!("quantile(cdf(t)) rel. error {:e}", worst[3]))?;
    within_budget(elapsed, 5.0)?;
    Ok(format!(
        "max errors: h-f/S {:.1e}, S+F-1 {:.1e}, FD hazard {:.1e}, quantile {:.1e} ({quantile_points} pts); {:.2} s",
        worst[0],
        worst[1],
        worst[2],
        worst[3],
        elapsed.as_secs_f64()
    ))
}

fn recovery_rows(n: usize, seed: u64) -> Vec<CovariateVector> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            x(
                rng.random_range(0.0..15.0),
                rng.random_range(0.0..20.0),
                rng.random_range(-5.0..40.0),
                rng.random_bool(0.3),
            )
        })
        .collect()
}

fn parameter_recovery() -> Check {
    let start = Instant::now();
    let truth = LogLogisticAft::with_betas(Parameterization::ScaledLocation, 0.25, [2.6, 0.03, 0.05, -0.05, 0.46])
        .map_err(|e| e.to_string())?;
    let mut successes = 0;
    let mut worst_z = 0.0f64;
    for seed in 0..10u64 {
        let rows = recovery_rows(5000, 1000 + seed);
        let data = simulate_durations(&truth, &rows, seed).map_err(|e| e.to_string())?;
        let fit = fit_aft(&data, &FitOptions::default()).map_err(|e| e.to_string())?;
        let Some(se) = fit.standard_errors.as_ref() else {
            continue;
        };
        let mut z: Vec<f64> = fit
            .model
            .betas()
            .iter()
            .zip(truth.betas())
            .zip(&se.beta)
            .map(|((b, t), s)| ((b - t) / s).abs())
            .collect();
        z.push(((fit.model.gamma() - truth.gamma()) / se.gamma).abs());
        let max_z = z.iter().cloned().fold(0.0, f64::max);
        worst_z = worst_z.max(max_z);
        if fit.converged && max_z <= 3.0 {
            successes += 1;
        }
    }
    let elapsed = start.elapsed();
    ensure(successes >= 9, || format!("{successes}/10 seeds recovered all parameters within 3 SE"))?;
    within_budget(elapsed, 60.0)?;
    Ok(format!(
        "{successes}/10 seeds within 3 SE (largest |z| {worst_z:.2}); {:.2} s",
        elapsed.as_secs_f64()
    ))
}

fn reference_fixture_ordering() -> Check {
    let model = LogLogisticAft::reference_table();
    let s: Vec<f64> = [5.7, 20.3, 34.9]
        .iter()
        .map(|&dab| model.survival_at(&x(6.9, 8.3, dab, false), 10.0).unwrap())
        .collect();
    ensure(s[0] > s[1] && s[1] > s[2], || format!("S(10) not strictly decreasing: {s:?}"))?;
    Ok(format!("S(10) = {:.4e} > {:.4e} > {:.4e}", s[0], s[1], s[2]))
}

/// Hazard at zero linear predictor written out directly:
/// `t^(1/g - 1) / (g (1 + t^(1/g)))`.
fn baseline_hazard(t: f64, gamma: f64) -> f64 {
    let p = 1.0 / gamma;
    t.powf(p - 1.0) / (gamma * (1.0 + t.powf(p)))
}

fn argmax_golden(f: impl Fn(f64) -> f64, lo: f64, hi: f64) -> f64 {
    // Coarse grid to bracket, then golden-section refinement.
    let n = 2000;
    let step = (hi - lo) / n as f64;
    let best = (0..=n)
        .map(|i| lo + i as f64 * step)
        .max_by(|a, b| f(*a).total_cmp(&f(*b)))
        .unwrap();
    let (mut a, mut b) = ((best - step).max(lo), (best + step).min(hi));
    let r = (5f64.sqrt() - 1.0) / 2.0;
    for _ in 0..200 {
        let c = b - r * (b - a);
        let d = a + r * (b - a);
        if f(c) > f(d) {
            b = d;
        } else {
            a = c;
        }
    }
    0.5 * (a + b)
}

fn inflection_and_mode() -> Check {
    let gamma = 0.253;
    let oracle_inflection = (1.0 / gamma - 1.0f64).powf(gamma) / gamma;
    let inflection = inflection_point(gamma).map_err(|e| e.to_string())?.seconds();
    ensure((inflection - 5.1984).abs() <= 1e-3 && (inflection - oracle_inflection).abs() < 1e-12, || {
        format!("inflection point {inflection}, expected 5.1984")
    })?;
    let numeric_mode = argmax_golden(|t| baseline_hazard(t, gamma), 1e-3, 20.0);
    let model = LogLogisticAft::with_betas(Parameterization::ScaledLocation, gamma, [0.0; 5]).unwrap();
    let mode = model
        .hazard_mode(&x(0.0, 0.0, 0.0, false))
        .map_err(|e| e.to_string())?
        .seconds();
    ensure((numeric_mode - 1.3152).abs() <= 1e-3, || {
        format!("numerically maximised hazard at {numeric_mode}, expected 1.3152")
    })?;
    ensure((mode - numeric_mode).abs() <= 1e-3, || {
        format!("closed-form hazard mode {mode} vs numeric {numeric_mode}")
    })?;
    Ok(format!(
        "inflection {inflection:.4}, hazard mode {mode:.4} (numeric {numeric_mode:.4})"
    ))
}

fn calibration_set(camera: &CameraModel, quantize: bool) -> CalibrationSet {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let targets: Vec<f64> = (5..=30).map(f64::from).collect();
    let sessions = (0..6)
        .map(|j| CalibrationSession {
            id: format!("s{j}"),
            entries: targets
                .iter()
                .map(|&z| {
                    let lateral = rng.random_range(-2.0..2.0);
                    let mut obs = project_to_image(camera, z, lateral, 0.0).unwrap();
                    if quantize {
                        // Sub-pixel placement of the target varies between sessions.
                        obs.y_f = (obs.y_f + rng.random_range(-0.5..0.5)).round();
                        obs.x_offset = obs.x_offset.round();
                    }
                    (z, obs)
                })
                .collect(),
        })
        .collect();
    CalibrationSet { sessions }
}

fn geometry_round_trip() -> Check {
    let start = Instant::now();
    let camera = CameraModel::new(1000.0, 1.2, 360.0).map_err(|e| e.to_string())?;
    let exact = calibration_set(&camera, false).mape(&camera).map_err(|e| e.to_string())?;
    let quantized = calibration_set(&camera, true).mape(&camera).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    ensure(exact < 0.01, || format!("noiseless MAPE {exact}%"))?;
    ensure(quantized < 5.0, || format!("1-px quantised MAPE {quantized}%"))?;
    within_budget(elapsed, 1.0)?;
    Ok(format!("MAPE noiseless {exact:.2e}%, 1-px quantised {quantized:.3}%"))
}

/// Lead and ego on closed-form constant-acceleration paths; speeds recovered
/// by gap differencing compared with the lead's mean speed per interval.
fn speed_recovery_error(lead_accel: f64, round: bool) -> f64 {
    let dt = 0.1;
    let ego = |t: f64| (10.37 * t + 0.5 * 0.83 * t * t, 10.37 + 0.83 * t);
    let lead = |t: f64| (25.4173 + 9.131 * t + 0.5 * lead_accel * t * t, 9.131 + lead_accel * t);
    let r = |v: f64, q: f64| if round { (v / q).round() * q } else { v };
    let mut worst = 0.0f64;
    for i in 1..=100 {
        let (t0, t1) = ((i - 1) as f64 * dt, i as f64 * dt);
        let (e0, e1) = (ego(t0), ego(t1));
        let (l0, l1) = (lead(t0), lead(t1));
        let est = adjacent_vehicle_speed(
            r(e0.1, 0.01),
            r(e1.1, 0.01),
            r(l0.0 - e0.0, 0.001),
            r(l1.0 - e1.0, 0.001),
            dt,
        )
        .unwrap();
        worst = worst.max((est - 0.5 * (l0.1 + l1.1)).abs());
    }
    worst
}

fn speed_recovery() -> Check {
    let exact = [speed_recovery_error(0.0, false), speed_recovery_error(0.617, false)];
    let rounded = [speed_recovery_error(0.0, true), speed_recovery_error(0.617, true)];
    let e = exact.iter().cloned().fold(0.0, f64::max);
    let r = rounded.iter().cloned().fold(0.0, f64::max);
    ensure(e < 1e-9, || format!("exact-sampling error {e:e} m/s"))?;
    ensure(r < 0.02, || format!("rounded-input error {r} m/s"))?;
    Ok(format!("max error exact {e:.1e} m/s, rounded {r:.4} m/s"))
}

fn end_to_end_pipeline() -> Check {
    let start = Instant::now();
    let spec = ScenarioSpec::default_overtake();
    let out = run_scenario(&spec).map_err(|e| e.to_string())?;
    let truth = out.ground_truth.ok_or("scenario produced no ground truth")?;
    let mut csv = Vec::new();
    io::traces_to_writer(&mut csv, &out.traces).map_err(|e| e.to_string())?;
    let traces = io::traces_from_reader(csv.as_slice()).map_err(|e| e.to_string())?;
    let rec = maneuver::analyze(&traces, "ego", &spec.road, &SegmentationConfig::default())
        .map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();

    let max_boundary = rec
        .phases
        .times
        .iter()
        .zip(truth.phases.times)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    ensure(max_boundary <= spec.dt + 1e-9, || {
        format!("boundaries {:?} vs truth {:?}", rec.phases.times, truth.phases.times)
    })?;
    let dt_total = (rec.t_total - truth.record.t_total).abs();
    ensure(dt_total <= 0.1 + 1e-9, || format!("t_total off by {dt_total} s"))?;

    let t = &truth.record;
    let opt = |a: Option<f64>, b: Option<f64>| match (a, b) {
        (Some(a), Some(b)) => (a - b).abs(),
        (None, None) => 0.0,
        _ => f64::INFINITY,
    };
    let distance_errors = [
        ("d_total", (rec.d_total - t.d_total).abs()),
        ("dp1", (rec.dp[0] - t.dp[0]).abs()),
        ("dp2", (rec.dp[1] - t.dp[1]).abs()),
        ("dp3", (rec.dp[2] - t.dp[2]).abs()),
        ("dp4", (rec.dp[3] - t.dp[3]).abs()),
        ("d_period5", (rec.d_period5 - t.d_period5).abs()),
        ("m1", (rec.m1 - t.m1).abs()),
        ("m2", opt(rec.m2, t.m2)),
        ("m", opt(rec.m, t.m)),
        ("m3", opt(rec.m3, t.m3)),
        ("m4", opt(rec.m4, t.m4)),
    ];
    let (worst_name, worst) = distance_errors
        .iter()
        .cloned()
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .unwrap();
    ensure(worst < 1e-6, || format!("{worst_name} off by {worst} m"))?;
    ensure(rec.n_overtaken == t.n_overtaken, || {
        format!("overtaken {} vs {}", rec.n_overtaken, t.n_overtaken)
    })?;
    let occupancy_error = (rec.opposite_lane_time - 4.0).abs();
    ensure(occupancy_error <= spec.dt + 1e-9, || {
        format!("opposite-lane occupancy {} s, target 4 s", rec.opposite_lane_time)
    })?;
    within_budget(elapsed, 2.0)?;
    Ok(format!(
        "boundary error {max_boundary:.1e} s, t_total {:.2} s (err {dt_total:.1e}), worst distance error {worst:.1e} m ({worst_name}), occupancy {:.2} s; {:.3} s",
        rec.t_total,
        rec.opposite_lane_time,
        elapsed.as_secs_f64()
    ))
}

fn snapshot(m3: f64, ego: f64, lead_gap: f64, lead_speed: f64, oncoming: f64) -> TrafficSnapshot {
    TrafficSnapshot {
        timestamp: 0.0,
        ego: EgoState {
            position: 0.0,
            speed: ego,
        },
        lead: GapSpeed {
            gap: lead_gap,
            speed: lead_speed,
        },
        oncoming: Some(GapSpeed {
            gap: m3,
            speed: oncoming,
        }),
        follower_of_lead: None,
        platoon: Vec::new(),
    }
}

fn decision_engine() -> Check {
    let model = LogLogisticAft::reference_table();
    let cfg = DecisionConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..2000 {
        let snap = snapshot(
            rng.random_range(0.0..115.0),
            rng.random_range(0.0..30.0),
            rng.random_range(0.0..60.0),
            rng.random_range(0.0..30.0),
            rng.random_range(0.0..30.0),
        );
        let d = decide(&snap, &model, &cfg).map_err(|e| e.to_string())?;
        ensure(d.verdict == Verdict::Unsafe, || format!("Safe verdict with m3 = {}", snap.oncoming.unwrap().gap))?;
    }

    let verdicts: Vec<Verdict> = (0..=1000)
        .map(|i| decide(&snapshot(i as f64 * 0.5, 14.0, 8.3, 10.0, 12.0), &model, &cfg).map(|d| d.verdict))
        .collect::<Result<_, _>>()
        .map_err(|e| e.to_string())?;
    let flips: Vec<usize> = (1..verdicts.len()).filter(|&i| verdicts[i] != verdicts[i - 1]).collect();
    ensure(
        verdicts[0] == Verdict::Unsafe && verdicts[verdicts.len() - 1] == Verdict::Safe && flips.len() == 1,
        || format!("m3 sweep has {} verdict changes", flips.len()),
    )?;
    let boundary = flips[0] as f64 * 0.5;

    let snap = snapshot(150.0, 14.0, 8.3, 10.0, 12.0);
    let first = decide(&snap, &model, &cfg).map_err(|e| e.to_string())?;
    for _ in 0..1000 {
        let again = decide(&snap, &model, &cfg).map_err(|e| e.to_string())?;
        ensure(again == first, || "decide returned differing results".to_string())?;
    }
    Ok(format!(
        "2000 random m3 < 115 m all Unsafe; sweep flips once at m3 = {boundary} m; 1000 repeat calls identical"
    ))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 8] = [
        ("analytic identities", analytic_identities),
        ("parameter recovery", parameter_recovery),
        ("reference-model ordering", reference_fixture_ordering),
        ("inflection point and hazard mode", inflection_and_mode),
        ("geometry round trip", geometry_round_trip),
        ("gap-differencing speed recovery", speed_recovery),
        ("end-to-end pipeline", end_to_end_pipeline),
        ("decision engine", decision_engine),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        match check() {
            Ok(detail) => println!("criterion {} PASS {name}: {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("criterion {} FAIL {name}: {why}", i + 1);
            }
        }
    }
    println!("acceptance: {}/{} passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
