use approx::assert_relative_eq;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::process_model::{run, PrelesParams};

const GOLDEN: &str = "\
# two sites, converted units
site,date,tair_c,vpd_kpa,par_molm2d,precip_mm,co2_ppm,fapar,gpp_gcm2d
hyy,2001-01-01,-5.5,0.05,1.2,0.8,370,0.4,0.01
hyy,2001-01-02,-3.25,0.1,2.5,0,370,0.41,0.02
sor,2001-01-01,2,0.2,3,4.5,371,0.6,0.5
hyy,2001-01-03,1,0.3,4,0,370,0.42,0.15
sor,2001-01-02,2.5,0.25,3.5,0,371,0.6,0.75
sor,2001-01-04,3,0.3,4,1,371,0.62,1
hyy,2001-01-04,0,0.2,5,0,370,0.43,0.1
hyy,2001-01-05,1.5,0.35,6,2,370,0.44,0.3
sor,2001-01-05,3.5,0.35,4.5,0,371,0.63,1.25
hyy,2001-01-06,2,0.4,7,0,370,0.45,0.5
";

#[test]
fn photon_energy_from_default_constants() {
    let c = PhysicalConstants::default();
    let e = 6.63e-34 * 2.99792458e8 / 2.2e-7;
    assert_eq!(c.photon_energy(), e);
    assert_relative_eq!(c.photon_energy(), 9.035e-19, max_relative = 1e-3);
}

#[test]
fn radiation_conversion() {
    let c = PhysicalConstants::default();
    assert_eq!(convert_radiation(0.0, &c).unwrap(), 0.0);
    let expected = 1e7 / (6.63e-34 * 2.99792458e8 / 2.2e-7 * 6.602e23);
    assert_relative_eq!(convert_radiation(1000.0, &c).unwrap(), expected, max_relative = 1e-6);
    assert_relative_eq!(convert_radiation(1000.0, &c).unwrap(), 16.76, max_relative = 1e-3);
    assert!(convert_radiation(-1.0, &c).is_err());
    let codata = PhysicalConstants::codata();
    assert!(convert_radiation(1000.0, &codata).unwrap() > 40.0);
}

#[test]
fn gpp_conversion() {
    let c = PhysicalConstants::default();
    assert_eq!(convert_gpp(0.0, SECONDS_PER_DAY, &c), 0.0);
    assert_relative_eq!(convert_gpp(1.0, SECONDS_PER_DAY, &c), 86400.0 * 12.011e-6, max_relative = 1e-15);
    assert_relative_eq!(convert_gpp(1.0, SECONDS_PER_DAY, &c), 1.0378, max_relative = 1e-4);
    assert_relative_eq!(
        convert_gpp(2.0, SECONDS_PER_DAY, &c),
        2.0 * convert_gpp(1.0, SECONDS_PER_DAY, &c),
        max_relative = 1e-15
    );
}

#[test]
fn fapar_gap_filling() {
    let daily = fill_fapar(&[Some(0.4), None, Some(0.6)], None).unwrap();
    assert_eq!(daily.len(), 24);
    assert!(daily[..8].iter().all(|v| *v == 0.4));
    assert!(daily[8..16].iter().all(|v| (*v - 0.5).abs() < 1e-15));
    assert!(daily[16..].iter().all(|v| *v == 0.6));

    let edges = fill_fapar(&[None, Some(0.3), None, None, Some(0.7), None], Some(45)).unwrap();
    assert_eq!(edges.len(), 45);
    assert_eq!(edges[0], 0.3);
    assert!((edges[16] - 0.5).abs() < 1e-15);
    assert!((edges[24] - 0.5).abs() < 1e-15);
    assert_eq!(edges[44], 0.7);

    assert!(matches!(fill_fapar(&[None, None], None), Err(DataError::AllGaps)));
    assert!(fill_fapar(&[Some(0.1)], Some(9)).is_err());
}

#[test]
fn doy_encoding() {
    let (s, c) = encode_doy(365.0).unwrap();
    assert!(s.abs() < 1e-10 && (c - 1.0).abs() < 1e-12);
    let dist = |a: (f64, f64), b: (f64, f64)| ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt();
    let e1 = encode_doy(1.0).unwrap();
    assert!(dist(encode_doy(365.0).unwrap(), e1) < dist(e1, encode_doy(30.0).unwrap()));
    let expected = (2.0 * std::f64::consts::PI * 91.0 / 365.0).sin();
    assert_relative_eq!(encode_doy(91.0).unwrap().0, expected, max_relative = 1e-15);
    // quoted as ≈ 0.99997; the direct value is 0.9999907
    assert!((expected - 0.99997).abs() < 5e-5);
    assert!(encode_doy(0.0).is_err());
    assert!(encode_doy(367.0).is_err());
}

#[test]
fn zscore_examples() {
    assert_eq!(zscore(3.0, 3.0, 2.0), 0.0);
    assert_eq!(zscore(5.0, 3.0, 2.0), 1.0);
    assert!(matches!(
        zscore_series(&[1.0], 1.0, 0.0, "tair"),
        Err(DataError::ZeroSpread(name)) if name == "tair"
    ));
    let rows: Vec<Vec<f64>> = (0..50).map(|i| vec![(i as f64).sin() * 3.0 + 1.0]).collect();
    let stats = NormalizationStats::fit(&["x"], &rows).unwrap();
    let mean: f64 = rows.iter().map(|r| stats.normalize(0, r[0])).sum::<f64>() / 50.0;
    assert!(mean.abs() < 1e-12);
    assert!(NormalizationStats::fit(&["x"], &[vec![1.0], vec![1.0]]).is_err());
}

#[test]
fn thinning() {
    let sites = read_csv(GOLDEN.as_bytes(), ConversionProfile::Converted).unwrap();
    let hyy = &sites[0];
    assert_eq!(hyy.len(), 6);
    let records = |n: usize| SiteDataset {
        site_id: "x".into(),
        records: vec![hyy.records[0]; n],
    };
    assert_eq!(thin_weekly(&records(1460)).len(), 209);
    assert_eq!(thin_weekly(&records(7)).len(), 1);
    for n in [1usize, 6, 8, 100, 1461] {
        assert_eq!(thin_weekly(&records(n)).len(), n.div_ceil(7));
    }
    let big = records(500);
    let mut by_index = big.clone();
    by_index.records = big.records.iter().step_by(49).copied().collect();
    assert_eq!(thin_weekly(&thin_weekly(&big)), by_index);
}

#[test]
fn golden_csv_parses() {
    let sites = read_csv(GOLDEN.as_bytes(), ConversionProfile::Converted).unwrap();
    assert_eq!(sites.len(), 2);
    assert_eq!(sites[0].site_id, "hyy");
    assert_eq!(sites[1].site_id, "sor");
    assert_eq!(sites[1].len(), 4);
    let r = sites[0].records[1];
    assert_eq!(r.date, NaiveDate::from_ymd_opt(2001, 1, 2).unwrap());
    assert_eq!(r.driver.t_air, -3.25);
    assert_eq!(r.driver.par, 2.5);
    assert_eq!(r.driver.doy, 2);
    assert_eq!(r.driver.co2, 370.0);
    assert_eq!(r.gpp, 0.02);
    assert_eq!(sites[1].records[2].driver.doy, 4);
    assert_eq!(sites[0].years(), vec![2001]);

    let mut buf = Vec::new();
    write_csv(&sites, &mut buf).unwrap();
    let again = read_csv(buf.as_slice(), ConversionProfile::Converted).unwrap();
    assert_eq!(again, sites);
}

#[test]
fn raw_profile_converts_units() {
    let text = "site,date,tair_c,vpd_kpa,par_molm2d,precip_mm,co2_ppm,fapar,gpp_gcm2d\n\
                a,2002-06-01,15,1,1000,0,380,0.7,1\n";
    let c = PhysicalConstants::default();
    let sites = read_csv(text.as_bytes(), ConversionProfile::Raw(c)).unwrap();
    let r = sites[0].records[0];
    assert_eq!(r.driver.par, convert_radiation(1000.0, &c).unwrap());
    assert_eq!(r.gpp, convert_gpp(1.0, SECONDS_PER_DAY, &c));
}

#[test]
fn csv_errors_are_specific() {
    let header = "site,date,tair_c,vpd_kpa,par_molm2d,precip_mm,co2_ppm,fapar,gpp_gcm2d\n";
    let dup = format!("{header}a,2001-01-01,1,1,1,1,380,0.5,1\na,2001-01-01,1,1,1,1,380,0.5,1\n");
    let err = read_csv(dup.as_bytes(), ConversionProfile::Converted).unwrap_err();
    assert!(err.to_string().contains("duplicate date 2001-01-01"), "{err}");
    assert!(err.to_string().starts_with("line 3"), "{err}");

    let back = format!("{header}a,2001-01-02,1,1,1,1,380,0.5,1\na,2001-01-01,1,1,1,1,380,0.5,1\n");
    assert!(read_csv(back.as_bytes(), ConversionProfile::Converted).is_err());

    let bad = format!("{header}a,2001-01-01,warm,1,1,1,380,0.5,1\n");
    let err = read_csv(bad.as_bytes(), ConversionProfile::Converted).unwrap_err();
    assert!(err.to_string().contains("tair_c"), "{err}");

    let missing = "site,date,tair_c\n";
    assert!(matches!(
        read_csv(missing.as_bytes(), ConversionProfile::Converted),
        Err(DataError::MissingColumn(c)) if c == "vpd_kpa"
    ));
    assert!(matches!(
        read_csv(header.as_bytes(), ConversionProfile::Converted),
        Err(DataError::Empty)
    ));
    assert!(read_csv("".as_bytes(), ConversionProfile::Converted).is_err());
}

#[test]
fn default_noise_covariance_is_psd() {
    assert!(WeatherSimConfig::default().validate().is_ok());
    let bad = [[1.0, 2.0], [2.0, 1.0]];
    assert!(matches!(cholesky_psd(&bad), Err(DataError::NotPsd)));
    let singular = [[1.0, 1.0], [1.0, 1.0]];
    let l = cholesky_psd(&singular).unwrap();
    assert_eq!(l, [[1.0, 0.0], [1.0, 0.0]]);
}

#[test]
fn noise_free_weather_is_the_harmonic_curve() {
    let mut cfg = WeatherSimConfig::default();
    cfg.noise_cov = vec![0.0; 25];
    let a = simulate_weather(&cfg, 730, "cool").unwrap();
    cfg.seed = 99;
    let b = simulate_weather(&cfg, 730, "cool").unwrap();
    assert_eq!(a, b);
    let curves = cfg.group("cool").unwrap();
    assert_eq!(a[0].t_air, curves.tair.eval(1.0));
    assert_eq!(a[365].doy, 1);
    assert_eq!(a[364].doy, 365);
    assert_eq!(a[0], a[365]);
    assert!((curves.tair.eval(1.0) - curves.tair.eval(366.0)).abs() < 1e-12);
    assert!(a.iter().all(|d| d.co2 == CO2_FIXED_PPM));
}

#[test]
fn weather_is_reproducible_and_group_specific() {
    let cfg = WeatherSimConfig::default();
    let a = simulate_weather(&cfg, 400, "cool").unwrap();
    assert_eq!(a, simulate_weather(&cfg, 400, "cool").unwrap());
    assert_ne!(a, simulate_weather(&cfg, 400, "warm").unwrap());
    assert!(a.iter().all(|d| (0.0..=1.0).contains(&d.fapar) && d.par >= 0.0 && d.vpd >= 0.0 && d.precip >= 0.0));
    assert!(a.iter().all(|d| d.validate().is_ok()));
    assert!(simulate_weather(&cfg, 10, "nowhere").is_err());
}

#[test]
fn mvn_sample_covariance_matches() {
    // Curves flat at values far from every clamp so the sample is pure noise.
    let mut cfg = WeatherSimConfig::default();
    let flat = |v: f64| HarmonicCurve {
        intercept: v,
        sin: vec![],
        cos: vec![],
    };
    let g = cfg.groups.get_mut("cool").unwrap();
    g.tair = flat(0.0);
    g.vpd = flat(10.0);
    g.par = flat(100.0);
    g.precip = flat(100.0);
    g.fapar = flat(0.5);
    let n = 100_000;
    let days = simulate_weather(&cfg, n, "cool").unwrap();
    let rows: Vec<[f64; 5]> = days
        .iter()
        .map(|d| [d.t_air, d.vpd, d.par, d.precip, d.fapar])
        .collect();
    let mean: Vec<f64> = (0..5)
        .map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n as f64)
        .collect();
    for i in 0..5 {
        for j in 0..5 {
            let cov = rows
                .iter()
                .map(|r| (r[i] - mean[i]) * (r[j] - mean[j]))
                .sum::<f64>()
                / (n - 1) as f64;
            let target = cfg.noise_cov[i * 5 + j];
            let scale = (cfg.noise_cov[i * 6] * cfg.noise_cov[j * 6]).sqrt();
            if target == 0.0 {
                assert!(cov.abs() < 0.02 * scale, "({i},{j}) {cov}");
            } else {
                assert!((cov - target).abs() <= 0.05 * target.abs(), "({i},{j}) {cov} vs {target}");
            }
        }
    }
}

#[test]
fn lhs_strata_are_a_permutation() {
    let prior = ParameterPrior::narrow();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let n = 10;
    let samples = sample_parameters_lhs(&prior, n, &mut rng);
    assert_eq!(samples.len(), n);
    let defaults = PrelesParams::default();
    for name in LHS_PARAMS {
        let k = crate::process_model::param_index(name).unwrap();
        let (lo, hi) = (prior.lo.to_array()[k], prior.hi.to_array()[k]);
        let mut strata: Vec<usize> = samples
            .iter()
            .map(|s| (((s.to_array()[k] - lo) / (hi - lo)) * n as f64).floor() as usize)
            .collect();
        strata.sort();
        assert_eq!(strata, (0..n).collect::<Vec<_>>(), "{name}");
    }
    for s in &samples {
        assert_eq!(s.kappa, defaults.kappa);
        assert_eq!(s.tau, defaults.tau);
        assert_eq!(s.soil_capacity, defaults.soil_capacity);
        assert!(prior.contains(s));
    }
    let one = sample_parameters_lhs(&prior, 1, &mut rng);
    assert!(prior.contains(&one[0]));
}

#[test]
fn priors_are_valid_and_squash_is_bounded() {
    for prior in [ParameterPrior::narrow(), ParameterPrior::wide()] {
        prior.validate().unwrap();
        prior.lo.validate().unwrap();
        prior.hi.validate().unwrap();
        let mid = prior.squash(&[0.0; 13]);
        let expected = prior.from_unit(&[0.5; 13]);
        for (a, b) in mid.to_array().iter().zip(expected.to_array()) {
            assert_relative_eq!(*a, b, max_relative = 1e-15);
        }
        let extreme = prior.squash(&[1e3; 13]);
        assert!(prior.contains(&extreme));
        let d = PrelesParams::default();
        let back = prior.squash(&prior.unsquash(&d));
        for (a, b) in back.to_array().iter().zip(d.to_array()) {
            assert_relative_eq!(*a, b, max_relative = 1e-9);
        }
    }
}

#[test]
fn pretraining_set_shape_and_degenerate_prior() {
    let mut weather = WeatherSimConfig::default();
    weather.seed = 3;
    let set = generate_pretraining_set(&ParameterPrior::narrow(), &weather, 4, 50).unwrap();
    assert_eq!(set.len(), 200);
    set.validate().unwrap();
    assert_eq!(set, generate_pretraining_set(&ParameterPrior::narrow(), &weather, 4, 50).unwrap());

    let point = ParameterPrior::point(PrelesParams::default());
    let one = generate_pretraining_set(&point, &weather, 1, 120).unwrap();
    let drivers = one.drivers();
    let pm: Vec<f64> = run(&PrelesParams::default(), &drivers)
        .unwrap()
        .iter()
        .map(|o| o.gpp)
        .collect();
    assert_eq!(one.targets(), pm);
}

proptest! {
    #[test]
    fn doy_on_unit_circle(d in 1u16..=366) {
        let (s, c) = encode_doy(d as f64).unwrap();
        prop_assert!((s * s + c * c - 1.0).abs() < 1e-12);
    }

    #[test]
    fn normalization_round_trip(x in -1e4f64..1e4, mean in -100.0f64..100.0, std in 1e-3f64..100.0) {
        let stats = NormalizationStats { names: vec!["x".into()], mean: vec![mean], std: vec![std] };
        let back = stats.denormalize(0, stats.normalize(0, x));
        prop_assert!((back - x).abs() <= 1e-12 * x.abs().max(1.0));
    }

    #[test]
    fn conversions_are_linear(x in 0.0f64..5000.0, k in 0.0f64..10.0) {
        let c = PhysicalConstants::default();
        let a = convert_radiation(k * x, &c).unwrap();
        let b = k * convert_radiation(x, &c).unwrap();
        prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
        let g1 = convert_gpp(k * x, SECONDS_PER_DAY, &c);
        let g2 = k * convert_gpp(x, SECONDS_PER_DAY, &c);
        prop_assert!((g1 - g2).abs() <= 1e-12 * g1.abs().max(1.0));
    }

    #[test]
    fn lhs_marginals_uniform(n in 1usize..40, seed in any::<u64>()) {
        let prior = ParameterPrior::wide();
        let samples = sample_parameters_lhs(&prior, n, &mut ChaCha8Rng::seed_from_u64(seed));
        let lo = prior.lo.beta;
        let hi = prior.hi.beta;
        let mut counts = vec![0usize; n];
        for s in &samples {
            let k = (((s.beta - lo) / (hi - lo)) * n as f64).floor() as usize;
            counts[k.min(n - 1)] += 1;
        }
        prop_assert!(counts.iter().all(|c| *c == 1));
    }
}
