//! Serialization round trips for Monte Carlo reports produced by a real run.

use tailquant::pickands::WeightScheme;
use tailquant::simulation::{
    reports_from_csv, reports_to_csv, run_mc, ErrorModel, EstimatorSpec, MetricReport, ParamGrid,
    Scenario, SelectionProtocol,
};

fn small_reports() -> Vec<MetricReport> {
    let sc = Scenario::new(ErrorModel::Student, 80, 3).unwrap();
    let grid = ParamGrid::paper()
        .with_h_points(5)
        .with_l_points(10)
        .with_alphas(vec![0.2, 0.4, 0.6]);
    let protocol = SelectionProtocol::OracleMsePerReplication;
    let rp = run_mc(
        &sc,
        &EstimatorSpec::rp(WeightScheme::Rp1, 0.05, 3, 1.0 / 3.0).unwrap(),
        4,
        &grid,
        protocol,
    )
    .unwrap();
    let rq = run_mc(&sc, &EstimatorSpec::rq(0.05).unwrap(), 4, &grid, protocol).unwrap();
    vec![rp, rq]
}

#[test]
fn json_round_trip_preserves_reports_exactly() {
    let reports = small_reports();
    let text = serde_json::to_string_pretty(&reports).unwrap();
    let back: Vec<MetricReport> = serde_json::from_str(&text).unwrap();
    assert_eq!(back, reports);
}

#[test]
fn csv_round_trip_preserves_summary_fields() {
    let reports = small_reports();
    let text = reports_to_csv(&reports);
    let back = reports_from_csv(&text).unwrap();
    assert_eq!(back.len(), reports.len());
    for (b, r) in back.iter().zip(&reports) {
        assert_eq!(b.scenario, r.scenario);
        assert_eq!(b.estimator, r.estimator);
        assert_eq!(b.beta, r.beta);
        assert_eq!(b.j_levels, r.j_levels);
        assert_eq!(b.ratio, r.ratio);
        assert_eq!(b.reps, r.reps);
        assert_eq!(b.failed_reps, r.failed_reps);
        // summary statistics survive the decimal text form exactly: the
        // writer uses the shortest round-trippable representation
        assert_eq!(b.mse.to_bits(), r.mse.to_bits());
        assert_eq!(b.bias.to_bits(), r.bias.to_bits());
    }
    // a second pass through the text form is the identity
    assert_eq!(reports_from_csv(&reports_to_csv(&back)).unwrap(), back);
}
