use super::*;
use crate::couplings::{CouplingKind, ModelConfig, TrainingData};
use crate::data::SyntheticSites;

fn sites(years: usize, seed: u64) -> Vec<SiteDataset> {
    SyntheticSites {
        years,
        seed,
        ..SyntheticSites::default()
    }
    .generate()
    .unwrap()
}

fn model(kind: CouplingKind, s: &[SiteDataset], seed: u64) -> CoupledModel {
    CoupledModel::build(kind, &ModelConfig::new(&[8, 4]), &TrainingData::all(s), seed).unwrap()
}

fn r_squared(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    let slope = sxy / sxx;
    let sse: f64 = x
        .iter()
        .zip(y)
        .map(|(a, b)| (b - (my + slope * (a - mx))).powi(2))
        .sum();
    1.0 - sse / syy
}

#[test]
fn record_days_and_window_lengths() {
    let w = seasonal_windows(2001).unwrap();
    let doys: Vec<u32> = w.iter().map(|w| w.record_day.ordinal()).collect();
    assert_eq!(doys, [79, 172, 263, 355]);
    assert!(w.iter().all(|w| w.days.len() == 15));
    // Leap years shift the ordinal but not the calendar date.
    let leap = seasonal_windows(2004).unwrap();
    assert_eq!(leap[0].record_day.ordinal(), 80);
    let s = sites(1, 1);
    let idx = w[1].indices(&s[0]);
    assert_eq!(idx, (164..179).collect::<Vec<_>>());
}

#[test]
fn windows_never_cross_into_another_year() {
    for year in 1999..2010 {
        for w in seasonal_windows(year).unwrap() {
            assert!(w.days.iter().all(|d| d.year() == year));
            assert!(w.days.windows(2).all(|p| (p[1] - p[0]).num_days() == 1));
            assert_eq!(w.days[7], w.record_day);
        }
    }
}

#[test]
fn variable_names_round_trip_and_unknown_rejected() {
    for v in IceVariable::ALL {
        assert_eq!(v.name().parse::<IceVariable>().unwrap(), v);
    }
    assert!(matches!("co2".parse::<IceVariable>(), Err(AnalysisError::UnknownVariable(_))));
    assert_eq!("frozen-state".parse::<IceMode>().unwrap(), IceMode::FrozenState);
    assert!("frozen".parse::<IceMode>().is_err());
}

#[test]
fn default_grid_spans_observed_range() {
    let s = sites(1, 2);
    let g = default_grid(&s[0], IceVariable::Tair, DEFAULT_GRID_POINTS).unwrap();
    let obs: Vec<f64> = s[0].records.iter().map(|r| r.driver.t_air).collect();
    assert_eq!(g.len(), 50);
    assert_eq!(g[0], obs.iter().cloned().fold(f64::INFINITY, f64::min));
    assert_eq!(g[49], obs.iter().cloned().fold(f64::NEG_INFINITY, f64::max));
    assert!(g.windows(2).all(|w| w[0] < w[1]));
    assert!(default_grid(&s[0], IceVariable::Tair, 1).is_err());
}

#[test]
fn process_only_fapar_curve_is_linear() {
    let s = sites(1, 3);
    let m = model(CouplingKind::ProcessOnly, &s, 0);
    let grid: Vec<f64> = (0..50).map(|i| 0.02 * i as f64).collect();
    let days = seasonal_windows(2001).unwrap()[1].indices(&s[0]);
    for mode in [IceMode::FrozenState, IceMode::Resimulate] {
        let r = ice_curves(&m, &s[0], IceVariable::Fapar, &grid, &days, mode).unwrap();
        assert_eq!(r.curves.len(), days.len());
        for c in &r.curves {
            assert_eq!(c[0], 0.0);
            assert!(r_squared(&grid, c) >= 1.0 - 1e-10);
        }
    }
}

#[test]
fn zero_weight_naive_net_is_flat_at_its_bias() {
    let s = sites(1, 4);
    let mut m = model(CouplingKind::Naive, &s, 1);
    let net = m.net.as_mut().unwrap();
    net.params.fill(0.0);
    let last = net.spec.depth() - 1;
    net.layer_mut(last).1[0] = -0.4;
    let grid = default_grid(&s[0], IceVariable::Par, 20).unwrap();
    let r = ice_curves(&m, &s[0], IceVariable::Par, &grid, &[5, 100, 300], IceMode::Resimulate).unwrap();
    assert!(r.curves.iter().flatten().all(|&v| v == -0.4));
    assert!(r.pm.is_none());
}

#[test]
fn process_curve_decreases_in_vpd() {
    let s = sites(1, 5);
    let m = model(CouplingKind::ProcessOnly, &s, 0);
    assert!(crate::process_model::PrelesParams::default().kappa < 0.0);
    let grid = default_grid(&s[0], IceVariable::Vpd, 50).unwrap();
    let days = seasonal_windows(2001).unwrap()[1].indices(&s[0]);
    let r = ice_curves(&m, &s[0], IceVariable::Vpd, &grid, &days, IceMode::Resimulate).unwrap();
    for c in &r.curves {
        assert!(c.windows(2).all(|w| w[1] <= w[0]), "{c:?}");
        assert!(c[49] < c[0]);
    }
}

#[test]
fn parallel_curves_are_additive() {
    let s = sites(1, 6);
    let m = model(CouplingKind::ParallelPhysics, &s, 3);
    let days = seasonal_windows(2001).unwrap()[2].indices(&s[0]);
    for v in IceVariable::ALL {
        let grid = default_grid(&s[0], v, 12).unwrap();
        let r = ice_curves(&m, &s[0], v, &grid, &days, IceMode::Resimulate).unwrap();
        let (nn, pm) = (r.nn.as_ref().unwrap(), r.pm.as_ref().unwrap());
        for d in 0..days.len() {
            for g in 0..grid.len() {
                assert!((r.curves[d][g] - (nn[d][g] + pm[d][g])).abs() <= 1e-12);
            }
        }
    }
}

#[test]
fn curves_at_observed_values_match_ordinary_predictions() {
    let s = sites(1, 7);
    let drivers = s[0].drivers();
    for kind in CouplingKind::ALL {
        let m = model(kind, &s, 4);
        let full = m.predict(&drivers).unwrap();
        for v in IceVariable::ALL {
            for mode in [IceMode::Resimulate, IceMode::FrozenState] {
                for k in [0usize, 1, 171, 364] {
                    let r = ice_curves(&m, &s[0], v, &[v.get(&drivers[k])], &[k], mode).unwrap();
                    assert_eq!(r.curves[0][0], full[k], "{kind} {v} {mode} day {k}");
                }
            }
        }
    }
}

#[test]
fn modes_agree_except_on_the_first_day() {
    let s = sites(1, 8);
    let m = model(CouplingKind::ProcessOnly, &s, 0);
    let grid = default_grid(&s[0], IceVariable::Precip, 10).unwrap();
    let days: Vec<usize> = (1..40).collect();
    let a = ice_curves(&m, &s[0], IceVariable::Precip, &grid, &days, IceMode::Resimulate).unwrap();
    let b = ice_curves(&m, &s[0], IceVariable::Precip, &grid, &days, IceMode::FrozenState).unwrap();
    assert_eq!(a.curves, b.curves);
    // Day 0's start state depends on its own temperature.
    let grid = default_grid(&s[0], IceVariable::Tair, 10).unwrap();
    let a = ice_curves(&m, &s[0], IceVariable::Tair, &grid, &[0], IceMode::Resimulate).unwrap();
    let b = ice_curves(&m, &s[0], IceVariable::Tair, &grid, &[0], IceMode::FrozenState).unwrap();
    assert_ne!(a.curves, b.curves);
}

#[test]
fn invalid_requests_rejected() {
    let s = sites(1, 9);
    let m = model(CouplingKind::ProcessOnly, &s, 0);
    let v = IceVariable::Tair;
    assert!(ice_curves(&m, &s[0], v, &[], &[0], IceMode::Resimulate).is_err());
    assert!(ice_curves(&m, &s[0], v, &[1.0, 1.0], &[0], IceMode::Resimulate).is_err());
    assert!(ice_curves(&m, &s[0], v, &[1.0], &[], IceMode::Resimulate).is_err());
    assert!(ice_curves(&m, &s[0], v, &[1.0], &[365], IceMode::Resimulate).is_err());
}

fn result_of(curves: Vec<Vec<f64>>) -> IceResult {
    let n = curves[0].len();
    IceResult {
        variable: IceVariable::Tair,
        mode: IceMode::Resimulate,
        grid: (0..n).map(|i| i as f64).collect(),
        days: (0..curves.len()).collect(),
        curves,
        nn: None,
        pm: None,
    }
}

#[test]
fn summary_examples() {
    let s = summarize_ice(&result_of(vec![vec![3.0, 1.0]; 4])).unwrap();
    assert!(s.iter().all(|p| p.lower95 == p.upper95 && p.mean == p.lower95));
    let s = summarize_ice(&result_of(vec![vec![0.0], vec![2.0]])).unwrap();
    assert_eq!(s[0].mean, 1.0);
    assert_eq!(s[0].lower95, 0.05);
    assert_eq!(s[0].upper95, 1.95);
    let one = summarize_ice(&result_of(vec![vec![7.0]])).unwrap();
    assert_eq!((one[0].mean, one[0].lower95, one[0].upper95), (7.0, 7.0, 7.0));
    // 0..=100: percentiles fall exactly on 2.5 and 97.5.
    let s = summarize_ice(&result_of((0..=100).map(|i| vec![i as f64]).collect())).unwrap();
    assert!((s[0].lower95 - 2.5).abs() < 1e-12 && (s[0].upper95 - 97.5).abs() < 1e-12);
    // Skewed data can put the mean outside the band.
    let mut skew = vec![vec![0.0]; 99];
    skew.push(vec![1e6]);
    let s = summarize_ice(&result_of(skew)).unwrap();
    assert!(s[0].lower95 <= s[0].upper95);
    assert!(s[0].mean > s[0].upper95);
}

fn entries() -> Vec<IceEntry> {
    let s = sites(1, 10);
    let grids: Vec<_> = [IceVariable::Tair, IceVariable::Fapar]
        .into_iter()
        .map(|v| (v, default_grid(&s[0], v, 7).unwrap()))
        .collect();
    let mut out = Vec::new();
    for (label, kind) in [("process-only", CouplingKind::ProcessOnly), ("parallel", CouplingKind::ParallelPhysics)] {
        let m = model(kind, &s, 2);
        out.extend(seasonal_ice(label, &m, &s[0], 2001, &grids, IceMode::Resimulate).unwrap());
    }
    out
}

#[test]
fn export_row_counts_and_byte_identical_rerun() {
    let e = entries();
    assert_eq!(e.len(), 2 * 2 * 4);
    let dir = tempfile::tempdir().unwrap();
    export_report(&e, dir.path(), "ice").unwrap();
    let csv1 = std::fs::read(dir.path().join("ice.csv")).unwrap();
    let json1 = std::fs::read(dir.path().join("ice.json")).unwrap();
    let e2 = entries();
    export_report(&e2, dir.path(), "ice").unwrap();
    assert_eq!(csv1, std::fs::read(dir.path().join("ice.csv")).unwrap());
    assert_eq!(json1, std::fs::read(dir.path().join("ice.json")).unwrap());

    let mut r = csv::Reader::from_reader(csv1.as_slice());
    assert_eq!(r.headers().unwrap().iter().collect::<Vec<_>>(), ICE_CSV_COLUMNS);
    let rows: Vec<csv::StringRecord> = r.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 2 * 2 * 4 * 7);
    let meta: IceMetadata = serde_json::from_slice(&json1).unwrap();
    assert_eq!(meta.rows, rows.len());
    assert!(meta.entries.iter().all(|m| m.mode == IceMode::Resimulate));

    let mut it = rows.iter();
    for entry in &e {
        for p in &entry.summary {
            let row = it.next().unwrap();
            let got: Vec<f64> = (4..8).map(|j| row[j].parse().unwrap()).collect();
            assert_eq!(got, [p.grid, p.mean, p.lower95, p.upper95]);
        }
    }
}
