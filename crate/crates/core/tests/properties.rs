use overtake_core::avoidance::{decide, DecisionConfig, EgoState, GapSpeed, TrafficSnapshot, Verdict};
use overtake_core::geometry::{adjacent_vehicle_speed, longitudinal_distance, mape, project_to_image, CameraModel};
use overtake_core::io;
use overtake_core::survival::{Coefficient, CovariateVector, LogLogisticAft, Parameterization};
use overtake_core::pairwise_sum;
use proptest::prelude::*;

fn mode() -> impl Strategy<Value = Parameterization> {
    prop_oneof![Just(Parameterization::ScaledLocation), Just(Parameterization::StandardAft)]
}

fn model() -> impl Strategy<Value = LogLogisticAft> {
    (
        mode(),
        0.1f64..1.5,
        -1.0f64..3.0,
        -0.1f64..0.1,
        -0.1f64..0.1,
        -0.06f64..0.06,
        -0.5f64..0.5,
    )
        .prop_map(|(m, g, b0, b1, b2, b3, b4)| LogLogisticAft::with_betas(m, g, [b0, b1, b2, b3, b4]).unwrap())
}

fn covariates() -> impl Strategy<Value = CovariateVector> {
    (0.0f64..15.0, 0.0f64..20.0, -5.0f64..40.0, any::<bool>())
        .prop_map(|(ud, pd, dab, m)| CovariateVector::new(ud, pd, dab, m).unwrap())
}

proptest! {
    #[test]
    fn survival_and_cdf_sum_to_one(m in model(), x in covariates(), t in 0.0f64..200.0) {
        let s = m.survival_at(&x, t).unwrap();
        let f = m.cdf_at(&x, t).unwrap();
        prop_assert!((s + f - 1.0).abs() < 1e-12);
    }

    #[test]
    fn hazard_is_density_over_survival(m in model(), x in covariates(), t in 0.1f64..50.0) {
        let d = m.distribution(&x).unwrap();
        let s = d.survival(t).unwrap();
        prop_assume!(s > 0.0);
        prop_assert!((d.hazard(t).unwrap() - d.density(t).unwrap() / s).abs() < 1e-9);
    }

    #[test]
    fn hazard_is_log_survival_slope(m in model(), x in covariates(), t in 0.1f64..50.0) {
        let d = m.distribution(&x).unwrap();
        let eps = 1e-6 * t;
        let fd = (d.cumulative_hazard(t + eps).unwrap() - d.cumulative_hazard(t - eps).unwrap()) / (2.0 * eps);
        let h = d.hazard(t).unwrap();
        prop_assert!(((fd - h) / h).abs() < 1e-5, "fd {} h {}", fd, h);
    }

    #[test]
    fn survival_decreases_in_time(m in model(), x in covariates(), t in 0.01f64..50.0, ratio in 1.01f64..10.0) {
        let d = m.distribution(&x).unwrap();
        let (a, b) = (d.survival(t).unwrap(), d.survival(t * ratio).unwrap());
        prop_assume!(a > 1e-300 && a < 1.0);
        prop_assert!(a > b);
    }

    #[test]
    fn larger_linear_predictor_lengthens_durations(m in model(), lp in -2.0f64..4.0, bump in 0.01f64..2.0, t in 0.1f64..50.0) {
        let s0 = m.at_linear_predictor(lp).survival(t).unwrap();
        let s1 = m.at_linear_predictor(lp + bump).survival(t).unwrap();
        prop_assume!(s0 > 1e-300 && s1 < 1.0);
        prop_assert!(s1 > s0);
    }

    #[test]
    fn survival_falls_with_speed_difference_under_reference_model(ud in 0.0f64..15.0, pd in 0.0f64..20.0, dab in -5.0f64..40.0, step in 0.5f64..20.0, t in 1.0f64..30.0) {
        let m = LogLogisticAft::reference_table();
        let lo = m.survival_at(&CovariateVector::new(ud, pd, dab, false).unwrap(), t).unwrap();
        let hi = m.survival_at(&CovariateVector::new(ud, pd, dab + step, false).unwrap(), t).unwrap();
        prop_assume!(lo > 1e-300);
        prop_assert!(hi < lo);
    }

    #[test]
    fn quantile_inverts_cdf(m in model(), x in covariates()) {
        let d = m.distribution(&x).unwrap();
        for t in [0.5, 1.0, 5.0, 20.0] {
            let p = d.cdf(t).unwrap();
            if p > 1e-6 && p < 1.0 - 1e-6 {
                let back = d.quantile(p).unwrap().seconds();
                prop_assert!(((back - t) / t).abs() < 1e-9, "t {} back {}", t, back);
            }
        }
    }

    #[test]
    fn projection_round_trip(z in 5.0f64..30.0, lateral in -4.0f64..4.0, c in 500.0f64..2000.0, y1 in 0.8f64..1.6) {
        let cam = CameraModel::new(c, y1, 360.0).unwrap();
        let obs = project_to_image(&cam, z, lateral, 0.0).unwrap();
        let back = longitudinal_distance(&cam, &obs).unwrap();
        prop_assert!(((back - z) / z).abs() < 1e-9);
    }

    #[test]
    fn gap_differencing_is_exact_for_uniform_acceleration(
        ve in 0.0f64..25.0, ae in -2.0f64..2.0, vl in 0.0f64..25.0, al in -2.0f64..2.0,
        gap in 5.0f64..50.0, t in 0.0f64..5.0,
    ) {
        let dt = 0.1;
        let pos = |v: f64, a: f64, t: f64| v * t + 0.5 * a * t * t;
        let z = |t: f64| gap + pos(vl, al, t) - pos(ve, ae, t);
        let est = adjacent_vehicle_speed(ve + ae * t, ve + ae * (t + dt), z(t), z(t + dt), dt).unwrap();
        let mean_lead = vl + al * (t + dt / 2.0);
        prop_assert!((est - mean_lead).abs() < 1e-9);
    }

    #[test]
    fn mape_is_scale_invariant(values in prop::collection::vec(1.0f64..40.0, 6), noise in prop::collection::vec(0.9f64..1.1, 12), k in 0.01f64..100.0) {
        let calc: Vec<Vec<f64>> = noise.chunks(6).map(|c| c.iter().zip(&values).map(|(n, v)| n * v).collect()).collect();
        let scaled: Vec<Vec<f64>> = calc.iter().map(|r| r.iter().map(|v| v * k).collect()).collect();
        let meas_scaled: Vec<f64> = values.iter().map(|v| v * k).collect();
        let a = mape(&calc, &values).unwrap();
        let b = mape(&scaled, &meas_scaled).unwrap();
        prop_assert!((a - b).abs() <= 1e-9 * a.max(1.0));
    }

    #[test]
    fn pairwise_sum_tracks_naive_sum(v in prop::collection::vec(-1e3f64..1e3, 0..5000)) {
        let naive: f64 = v.iter().sum();
        prop_assert!((pairwise_sum(&v) - naive).abs() <= 1e-9 * v.len().max(1) as f64);
    }
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

proptest! {
    #[test]
    fn more_oncoming_room_never_makes_a_pass_unsafe(
        m3 in 0.0f64..500.0, extra in 0.0f64..200.0, ego in 0.0f64..30.0,
        lead_gap in 0.0f64..60.0, lead_speed in 0.0f64..30.0, oncoming in 0.0f64..30.0,
    ) {
        let model = LogLogisticAft::reference_table();
        let cfg = DecisionConfig::default();
        let near = decide(&snapshot(m3, ego, lead_gap, lead_speed, oncoming), &model, &cfg).unwrap();
        let far = decide(&snapshot(m3 + extra, ego, lead_gap, lead_speed, oncoming), &model, &cfg).unwrap();
        prop_assert!(!(near.verdict == Verdict::Safe && far.verdict == Verdict::Unsafe));
    }

    #[test]
    fn faster_oncoming_traffic_never_makes_a_pass_safe(
        m3 in 0.0f64..500.0, ego in 0.0f64..30.0, lead_gap in 0.0f64..60.0,
        lead_speed in 0.0f64..30.0, oncoming in 0.0f64..30.0, extra in 0.0f64..20.0,
    ) {
        let model = LogLogisticAft::reference_table();
        let cfg = DecisionConfig::default();
        let slow = decide(&snapshot(m3, ego, lead_gap, lead_speed, oncoming), &model, &cfg).unwrap();
        let fast = decide(&snapshot(m3, ego, lead_gap, lead_speed, oncoming + extra), &model, &cfg).unwrap();
        prop_assert!(!(slow.verdict == Verdict::Unsafe && fast.verdict == Verdict::Safe));
    }

    #[test]
    fn decisions_are_self_consistent(
        m3 in 0.0f64..500.0, ego in 0.0f64..30.0, lead_gap in 0.0f64..60.0,
        lead_speed in 0.0f64..30.0, oncoming in 0.0f64..30.0,
    ) {
        let model = LogLogisticAft::reference_table();
        let cfg = DecisionConfig::default();
        let snap = snapshot(m3, ego, lead_gap, lead_speed, oncoming);
        let d = decide(&snap, &model, &cfg).unwrap();
        prop_assert_eq!(d.verdict == Verdict::Unsafe, !d.reasons.is_empty());
        let x = overtake_core::avoidance::snapshot_covariates(&snap, &cfg).unwrap();
        let expected = match d.t_avail {
            Some(t) => model.survival_at(&x, t).unwrap(),
            None => 0.0,
        };
        prop_assert_eq!(d.risk, expected);
        prop_assert_eq!(decide(&snap, &model, &cfg).unwrap(), d);
    }

    #[test]
    fn model_documents_round_trip_exactly(betas in prop::collection::vec(-1e6f64..1e6, 1..1000), gamma in 1e-6f64..10.0, m in mode()) {
        let coefficients = betas.iter().enumerate().map(|(i, b)| Coefficient::new(format!("x{i}"), *b)).collect();
        let model = LogLogisticAft::new(m, gamma, coefficients).unwrap();
        let back = io::model_from_json(&io::model_to_json(&model, None)).unwrap().model().unwrap();
        prop_assert_eq!(back, model);
    }
}

/// Adaptive Simpson quadrature.
fn simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    #[allow(clippy::too_many_arguments)]
    fn rec(f: &dyn Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        if depth == 0 || (left + right - whole).abs() <= 15.0 * tol {
            return left + right + (left + right - whole) / 15.0;
        }
        rec(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1) + rec(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
    }
    let (fa, fm, fb) = (f(a), f(0.5 * (a + b)), f(b));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    rec(f, a, b, fa, fm, fb, whole, tol, 50)
}

#[test]
fn density_integrates_to_one() {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
    for _ in 0..20 {
        let gamma = rng.random_range(0.1..1.5);
        let lp = rng.random_range(-2.0..4.0);
        let model = LogLogisticAft::with_betas(Parameterization::StandardAft, gamma, [0.0; 5]).unwrap();
        let d = model.at_linear_predictor(lp);
        // Integrate over log time: f(t) dt = f(e^u) e^u du.
        let integrand = |u: f64| {
            let t = u.exp();
            d.density(t).unwrap() * t
        };
        let span = 80.0 * gamma;
        let total = simpson(&integrand, d.location - span, d.location + span, 1e-12);
        assert!((total - 1.0).abs() < 1e-6, "gamma {gamma} lp {lp}: {total}");
    }
}
