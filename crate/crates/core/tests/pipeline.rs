use csde::estimators::*;
use csde::inference::bootstrap;
use csde::nuisance::ModelSuite;
use csde::simulate::*;
use csde::tabular::{read_csv, ColumnMap};

#[test]
fn csv_round_trip_preserves_estimates() {
    let dgm = DgmSpec::preset("moderate-strong").unwrap();
    let d = draw_dataset(&dgm, 1500, 3).unwrap();
    let mut buf = Vec::new();
    d.write_csv(&mut buf).unwrap();
    let back = read_csv(
        buf.as_slice(),
        &ColumnMap::standard(&["W1", "W2"]).with_delta("delta"),
    )
    .unwrap();
    assert_eq!(back.a(), d.a());
    assert_eq!(back.y(), d.y());
    assert_eq!(back.delta(), d.delta());
    let config = AnalysisConfig::new(ModelSuite::correct());
    let x = analyze(&d, &config, &EstimatorKind::ALL).unwrap();
    let y = analyze(&back, &config, &EstimatorKind::ALL).unwrap();
    for (a, b) in x.estimates.iter().zip(&y.estimates) {
        assert_eq!(a.psi_csde.to_bits(), b.psi_csde.to_bits());
        assert_eq!(a.se.to_bits(), b.se.to_bits());
    }
}

#[test]
fn compressed_data_give_the_same_estimates() {
    let dgm = DgmSpec::preset("moderate-strong").unwrap();
    let d = draw_dataset(&dgm, 4000, 5).unwrap();
    let c = d.compress();
    assert!(c.n() < d.n());
    let config = AnalysisConfig::new(ModelSuite::correct());
    let x = analyze(&d, &config, &EstimatorKind::ALL).unwrap();
    let y = analyze(&c, &config, &EstimatorKind::ALL).unwrap();
    for (a, b) in x.estimates.iter().zip(&y.estimates) {
        assert!((a.psi_csde - b.psi_csde).abs() < 1e-9, "{:?}", a.estimator);
        assert!((a.se - b.se).abs() < 1e-9, "{:?}", a.estimator);
    }
}

#[test]
fn bootstrap_spread_tracks_the_wald_interval() {
    let dgm = DgmSpec::preset("moderate-strong").unwrap();
    let config = AnalysisConfig::new(ModelSuite::correct());
    let d = draw_dataset(&dgm, 4000, 8).unwrap();
    for data in [d.clone(), d.compress()] {
        let a = analyze(&data, &config, &[EstimatorKind::Ee]).unwrap();
        let wald = a.estimates[0].ci.hi - a.estimates[0].ci.lo;
        let b = bootstrap(&data, &config, &[EstimatorKind::Ee], 300, 21, 0.95).unwrap();
        let width = b[0].ci.hi - b[0].ci.lo;
        let ratio = width / wald;
        assert!(
            (0.75..1.33).contains(&ratio),
            "bootstrap/Wald width ratio {ratio}"
        );
    }
}

#[test]
fn reweighting_replaces_weights() {
    let dgm = DgmSpec::preset("moderate-strong").unwrap();
    let c = draw_dataset(&dgm, 3000, 9).unwrap().compress();
    let counts: Vec<f64> = (0..c.n()).map(|i| (i % 3) as f64).collect();
    let r = c.reweighted(&counts).unwrap();
    assert_eq!(r.total_weight(), counts.iter().sum::<f64>());
}

#[test]
fn simulation_is_independent_of_thread_count() {
    let mut s = ScenarioSpec::preset("moderate-strong-correct").unwrap();
    s.n = 300;
    let one = run_scenario(&s, 24, 77, Some(1)).unwrap();
    let many = run_scenario(&s, 24, 77, Some(4)).unwrap();
    assert_eq!(one.records, many.records);
    assert_eq!(
        serde_json::to_string(&one.report).unwrap(),
        serde_json::to_string(&many.report).unwrap()
    );
}

#[test]
fn sampled_basis_counts_sampled_units() {
    let dgm = DgmSpec::preset("moderate-strong").unwrap();
    let d = draw_sampled(&dgm, 500, 4).unwrap();
    assert_eq!(d.sampled_weight(), 500.0);
    let d = draw_dataset(&dgm, 500, 4).unwrap();
    assert_eq!(d.total_weight(), 500.0);
}
