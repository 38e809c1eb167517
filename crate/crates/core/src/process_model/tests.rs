use approx::{assert_abs_diff_eq, assert_relative_eq};
use proptest::prelude::*;

use super::*;
use crate::autodiff::{finite_difference_check, AdError, Tape, Var};

fn day(t_air: f64, vpd: f64, par: f64, precip: f64, fapar: f64, doy: u16) -> DriverRecord {
    DriverRecord {
        t_air,
        vpd,
        par,
        precip,
        fapar,
        co2: 380.0,
        doy,
    }
}

/// 30 days: a cloudburst, then a warm dry spell that draws a small bucket down, a cold snowy
/// week, then a gradual thaw melting into the depleted soil.
fn mixed_month() -> Vec<DriverRecord> {
    (0..30)
        .map(|k| {
            let kf = k as f64;
            let t = match k {
                0..=9 => 8.0 + 0.5 * kf,
                10..=17 => -3.0,
                _ => 0.5 + (kf - 18.0) * 0.7,
            };
            let precip = match k {
                1 => 40.0,
                11 | 14 => 3.0,
                24 => 6.0,
                _ => 0.0,
            };
            day(
                t,
                0.3 + 0.05 * kf,
                12.0 + kf * 0.7,
                precip,
                0.55 + 0.005 * kf,
                100 + k as u16,
            )
        })
        .collect()
}

fn small_bucket() -> PrelesParams {
    PrelesParams {
        soil_capacity: 15.0,
        ..PrelesParams::default()
    }
}

#[test]
fn light_modifier() {
    assert_eq!(modifier_light(0.0, 0.7), 1.0);
    assert_abs_diff_eq!(modifier_light(10.0, 0.1), 0.5, epsilon = 1e-15);
    assert!(modifier_light(1e12, 0.1) < 1e-10);
}

#[test]
fn vpd_modifier() {
    assert_eq!(modifier_vpd(0.0, -0.4), 1.0);
    assert_eq!(modifier_vpd(3.0, 0.0), 1.0);
    assert_abs_diff_eq!(modifier_vpd(1.0, -0.5), 0.606_530_659_712_633_4, epsilon = 1e-15);
    assert!(modifier_vpd(2.0, -0.5) < modifier_vpd(1.0, -0.5));
}

#[test]
fn soil_water_modifier_ramp() {
    let p = PrelesParams::default();
    let at = |soil: f64| {
        let s = ModelState {
            soil_water: soil,
            surface_water: 0.0,
            snow: 0.0,
            acclim: 0.0,
        };
        modifier_soil_water(&s, &p)
    };
    let cap = p.soil_capacity;
    assert_eq!(at(cap), 1.0);
    assert_abs_diff_eq!(at(p.wilting_fraction * cap), 0.0, epsilon = 1e-15);
    let mid = 0.5 * (p.wilting_fraction + GPP_WATER_THRESHOLD) * cap;
    assert_abs_diff_eq!(at(mid), 0.5, epsilon = 1e-12);
    assert_eq!(at(0.0), 0.0);
}

#[test]
fn acclimation_modifier_ramp() {
    assert_eq!(modifier_acclimation(-4.0, -4.0, 18.0), 0.0);
    assert_eq!(modifier_acclimation(18.0, -4.0, 18.0), 1.0);
    assert_abs_diff_eq!(modifier_acclimation(7.0, -4.0, 18.0), 0.5, epsilon = 1e-15);
    assert_eq!(modifier_acclimation(-30.0, -4.0, 18.0), 0.0);
}

#[test]
fn gpp_step_examples() {
    let p = PrelesParams::default();
    let s = ModelState::initial(&p, &day(10.0, 0.5, 20.0, 0.0, 0.6, 150));
    assert_eq!(gpp_step(&day(10.0, 0.5, 20.0, 0.0, 0.0, 150), &s, &p), 0.0);

    let ones = Modifiers {
        light: 1.0,
        vpd: 1.0,
        soil_water: 1.0,
        acclimation: 1.0,
    };
    assert_abs_diff_eq!(light_use(0.8, 10.0, 0.5, &ones), 4.0, epsilon = 1e-15);

    let d = day(10.0, 0.5, 20.0, 0.0, 0.6, 150);
    let mut p2 = p;
    p2.beta = 2.0 * p.beta;
    assert_eq!(gpp_step(&d, &s, &p2), 2.0 * gpp_step(&d, &s, &p));
}

#[test]
fn et_step_examples() {
    let d = day(15.0, 1.2, 25.0, 0.0, 0.7, 180);
    let mut p = PrelesParams::default();
    let s = ModelState::initial(&p, &d);
    p.chi = 0.0;
    assert_eq!(et_step(0.0, &d, &s, &p), 0.0);
    p.alpha = 0.0;
    assert_eq!(et_step(5.0, &d, &s, &p), 0.0);

    let mut p = PrelesParams::default();
    p.chi = 0.0;
    assert_abs_diff_eq!(
        et_step(6.0, &d, &s, &p),
        2.0 * et_step(3.0, &d, &s, &p),
        epsilon = 1e-15
    );
}

#[test]
fn water_balance_examples() {
    let p = PrelesParams::default();
    let s = ModelState {
        soil_water: 80.0,
        surface_water: 0.0,
        snow: 0.0,
        acclim: 5.0,
    };
    let wb = water_balance_step(&day(5.0, 0.5, 10.0, 0.0, 0.5, 10), &s, 0.0, &p);
    assert_eq!(wb.state, s);

    let wb = water_balance_step(&day(-5.0, 0.1, 5.0, 3.0, 0.5, 10), &s, 0.0, &p);
    assert_eq!(wb.state.snow, 3.0);
    assert_eq!(wb.state.soil_water, 80.0);

    // saturated soil: independent ledger of the 10 mm excess
    let full = ModelState {
        soil_water: p.soil_capacity,
        ..s
    };
    let wb = water_balance_step(&day(5.0, 0.5, 10.0, 10.0, 0.5, 10), &full, 0.0, &p);
    let expected_drainage = 10.0 * p.drainage_rate;
    assert_abs_diff_eq!(wb.drainage, expected_drainage, epsilon = 1e-12);
    assert_abs_diff_eq!(wb.state.surface_water, 10.0 - expected_drainage, epsilon = 1e-12);
    assert_eq!(wb.state.soil_water, p.soil_capacity);
    let delta = wb.state.storage() - full.storage();
    assert_abs_diff_eq!(delta, 10.0 - 0.0 - wb.drainage, epsilon = 1e-9);
}

#[test]
fn et_withdrawal_never_drives_soil_negative() {
    let p = PrelesParams::default();
    let s = ModelState {
        soil_water: 1.5,
        surface_water: 0.0,
        snow: 0.0,
        acclim: 5.0,
    };
    let wb = water_balance_step(&day(5.0, 0.5, 10.0, 0.0, 0.5, 10), &s, 4.0, &p);
    assert_eq!(wb.state.soil_water, 0.0);
    assert_eq!(wb.et, 1.5);
}

#[test]
fn single_day_matches_gpp_step() {
    let p = PrelesParams::default();
    let d = day(12.0, 0.8, 30.0, 1.0, 0.8, 200);
    let out = run(&p, &[d]).unwrap();
    let s = ModelState::initial(&p, &d);
    // acclimation starts at the first day's temperature, so the EMA update is a no-op
    assert_eq!(out[0].gpp, gpp_step(&d, &s, &p));
}

#[test]
fn soil_water_converges_to_bisection_fixed_point() {
    let p = PrelesParams::default();
    let d = day(12.0, 0.8, 20.0, 1.0, 0.7, 180);
    // soil-only step map with drained surface and no snow
    let step_soil = |soil: f64| {
        let s = ModelState {
            soil_water: soil,
            surface_water: 0.0,
            snow: 0.0,
            acclim: d.t_air,
        };
        step_day(&d, &s, &p).next.soil_water
    };
    let (mut lo, mut hi) = (0.0, p.soil_capacity);
    assert!(step_soil(lo) - lo > 0.0 && step_soil(hi) - hi < 0.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if step_soil(mid) - mid > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let fixed = 0.5 * (lo + hi);

    let out = run(&p, &vec![d; 3000]).unwrap();
    let last = out.last().unwrap();
    assert_abs_diff_eq!(last.soil_water, fixed, epsilon = 1e-6);
    // at the fixed point precipitation balances ET (nothing drains)
    assert_abs_diff_eq!(last.et, d.precip, epsilon = 1e-6);
}

#[test]
fn beta_derivative_of_total_gpp() {
    // default bucket keeps the soil modifier saturated, so no modifier depends on beta
    let drivers = mixed_month();
    let p = PrelesParams::default();
    let tape = Tape::new();
    let pv = p.map(|v| tape.param(v));
    let out = simulate(&pv, &drivers, ModelState::initial(&pv, &drivers[0])).unwrap();
    let total = out.iter().skip(1).fold(out[0].gpp, |acc, o| acc + o.gpp);
    let g = tape.backward(&total).unwrap();
    assert_relative_eq!(
        g.wrt(&pv.beta).unwrap(),
        total.value() / p.beta,
        max_relative = 1e-12
    );
}

fn total_gpp<'t>(tape: &'t Tape, x: &[Var<'t>]) -> Result<Var<'t>, AdError> {
    let drivers = mixed_month();
    let p = PrelesParams::from_slice(x).unwrap();
    let _ = tape;
    let out = simulate(&p, &drivers, ModelState::initial(&p, &drivers[0])).unwrap();
    Ok(out.iter().skip(1).fold(out[0].gpp, |acc, o| acc + o.gpp))
}

#[test]
fn total_gpp_gradient_matches_finite_differences() {
    let point = small_bucket().to_array();
    let err = finite_difference_check(total_gpp, &point, 1e-6).unwrap();
    assert!(err < 1e-5, "max relative error {err}");
}

#[test]
fn every_parameter_influences_some_output_on_the_mixed_month() {
    let drivers = mixed_month();
    let p = small_bucket();
    let tape = Tape::new();
    let pv = p.map(|v| tape.param(v));
    let out = simulate(&pv, &drivers, ModelState::initial(&pv, &drivers[0])).unwrap();
    let mut total = out[0].gpp + out[0].et;
    for o in &out[1..] {
        total = total + o.gpp + o.et;
    }
    let g = tape.backward(&total).unwrap();
    for (name, v) in PARAM_NAMES.iter().zip(pv.to_array()) {
        assert!(g.wrt(&v).unwrap() != 0.0, "{name} has no influence");
    }
}

#[test]
fn simulation_is_order_dependent() {
    let drivers = mixed_month();
    let p = small_bucket();
    let a = run(&p, &drivers).unwrap();
    let mut rev = drivers.clone();
    rev.reverse();
    let b = run(&p, &rev).unwrap();
    let b_aligned: Vec<_> = b.iter().rev().map(|o| o.gpp).collect();
    assert_ne!(a.iter().map(|o| o.gpp).collect::<Vec<_>>(), b_aligned);
}

#[test]
fn non_finite_intermediate_names_the_day() {
    let mut drivers = mixed_month();
    drivers[4].par = f64::INFINITY;
    let p = small_bucket();
    match run(&p, &drivers) {
        Err(ProcessError::NonFinite { day, .. }) => assert_eq!(day, 4),
        other => panic!("expected non-finite diagnostic, got {other:?}"),
    }
    assert_eq!(run(&p, &[]), Err(ProcessError::EmptyDrivers));
}

#[test]
fn parameter_validation() {
    let mut p = PrelesParams::default();
    assert!(p.validate().is_ok());
    p.kappa = 0.1;
    assert!(matches!(
        p.validate(),
        Err(ProcessError::InvalidParam { name: "kappa", .. })
    ));
}

#[test]
fn params_serialize_in_canonical_order() {
    let json = serde_json::to_string(&PrelesParams::default()).unwrap();
    let mut last = 0;
    for name in PARAM_NAMES {
        let pos = json.find(&format!("\"{name}\"")).unwrap();
        assert!(pos >= last);
        last = pos;
    }
    let back: PrelesParams = serde_json::from_str(&json).unwrap();
    assert_eq!(back, PrelesParams::default());
}

#[test]
fn spinup_repeats_first_year() {
    let drivers = mixed_month();
    let p = small_bucket();
    let s0 = spun_up_state(&p, &drivers, 0).unwrap();
    assert_eq!(s0, ModelState::initial(&p, &drivers[0]));
    let s1 = spun_up_state(&p, &drivers, 1).unwrap();
    assert!(s1.soil_water < p.soil_capacity);
}

fn arb_driver() -> impl Strategy<Value = DriverRecord> {
    (
        -25.0..30.0f64,
        0.0..3.0f64,
        0.0..60.0f64,
        prop_oneof![Just(0.0), 0.0..40.0f64],
        0.0..=1.0f64,
        1u16..=366,
    )
        .prop_map(|(t, v, par, r, f, d)| day(t, v, par, r, f, d))
}

proptest! {
    #[test]
    fn modifiers_bounded_and_gpp_capped(
        drivers in proptest::collection::vec(arb_driver(), 1..60)
    ) {
        let p = PrelesParams::default();
        let mut state = ModelState::initial(&p, &drivers[0]);
        for d in &drivers {
            let mut today = state;
            today.acclim = update_acclimation(state.acclim, d.t_air, p.tau);
            let m = modifiers(d, &today, &p);
            for f in [m.light, m.vpd, m.soil_water, m.acclimation] {
                prop_assert!((0.0..=1.0).contains(&f));
            }
            let et_soil = modifier_et_soil_water(&today, &p);
            prop_assert!((0.0..=1.0).contains(&et_soil));
            let step = step_day(d, &state, &p);
            prop_assert!(step.output.gpp >= 0.0);
            prop_assert!(step.output.gpp <= p.beta * d.par * d.fapar * (1.0 + 1e-12));
            prop_assert!(step.output.et >= 0.0);
            state = step.next;
        }
    }

    #[test]
    fn mass_balance_closes_each_step(
        drivers in proptest::collection::vec(arb_driver(), 1..120)
    ) {
        let p = PrelesParams::default();
        let mut state = ModelState::initial(&p, &drivers[0]);
        for d in &drivers {
            let step = step_day(d, &state, &p);
            let delta = step.next.storage() - state.storage();
            prop_assert!((delta - (d.precip - step.output.et - step.drainage)).abs() < 1e-9);
            prop_assert!(step.next.soil_water >= 0.0 && step.next.surface_water >= 0.0);
            prop_assert!(step.next.snow >= 0.0);
            prop_assert!(step.next.soil_water <= p.soil_capacity);
            state = step.next;
        }
    }

    #[test]
    fn gpp_exactly_linear_in_beta_and_fapar(scale in 0.1..5.0f64, d in arb_driver()) {
        let p = PrelesParams::default();
        let s = ModelState::initial(&p, &d);
        let base = gpp_step(&d, &s, &p);
        let mut p2 = p;
        p2.beta *= scale;
        let scaled = gpp_step(&d, &s, &p2);
        prop_assert!((scaled - scale * base).abs() <= 1e-12 * base.abs().max(1.0));
        let mut d2 = d;
        d2.fapar = (d.fapar * 0.5).min(1.0);
        let half = gpp_step(&d2, &s, &p);
        prop_assert!((half - 0.5 * base).abs() <= 1e-12 * base.abs().max(1.0));
    }
}

