//! Evaluation metrics and diagnostics against hand-computed values.

mod common;

use std::collections::BTreeMap;

use elscreen::el::EstimatingMatrix;
use elscreen::evalkit::{
    coverage_proportions, minimal_model_size, proposition_diagnostics, quantile_summary,
    taylor_comparator, union_model_size, DiagnosticsInput, EvaluationReport, MMS_PROBS,
};
use elscreen::screening::ThresholdRecord;
use elscreen::simgen::{derive_seed, mvn_sample};
use nalgebra::DMatrix;

#[test]
fn minimal_model_size_is_the_deepest_active_position() {
    let ranking = vec![5, 3, 8, 1, 0, 9];
    assert_eq!(minimal_model_size(&ranking, &[3]).unwrap(), 2);
    assert_eq!(minimal_model_size(&ranking, &[3, 1]).unwrap(), 4);
    assert_eq!(minimal_model_size(&ranking, &[9, 5]).unwrap(), 6);
    // An active index missing from the ranking is an error, not a guess.
    assert!(minimal_model_size(&ranking, &[7]).is_err());
}

#[test]
fn union_model_size_needs_only_one_list_to_recover_each_active() {
    let rankings = vec![vec![0, 1, 2, 3], vec![2, 0, 1, 3]];
    // Size 1 gives {0, 2}; size 2 gives {0, 1, 2}.
    assert_eq!(union_model_size(&rankings, &[0, 2]).unwrap(), 1);
    assert_eq!(union_model_size(&rankings, &[1, 2]).unwrap(), 2);
    assert_eq!(union_model_size(&rankings, &[3]).unwrap(), 4);
}

#[test]
fn coverage_proportions_count_joint_and_marginal_hits() {
    let selections = vec![vec![0, 1], vec![1, 2], vec![1]];
    let (p_j, p_a) = coverage_proportions(&selections, &[1, 2]).unwrap();
    assert_eq!(p_j[&1], 1.0);
    assert!((p_j[&2] - 1.0 / 3.0).abs() < 1e-15);
    assert!((p_a - 1.0 / 3.0).abs() < 1e-15);
}

#[test]
fn quantile_summary_follows_the_interpolating_convention() {
    let values: Vec<f64> = (1..=10).map(|v| v as f64).collect();
    let q = quantile_summary(&values, &MMS_PROBS).unwrap();
    let expected = [1.45, 3.25, 5.5, 7.75, 9.55];
    for (a, b) in q.iter().zip(expected) {
        assert!((a - b).abs() <= 1e-12, "quantile {a} vs {b}");
    }
    // Order of the input must not matter.
    let shuffled = vec![7.0, 1.0, 10.0, 3.0, 5.0, 9.0, 2.0, 8.0, 6.0, 4.0];
    assert_eq!(quantile_summary(&shuffled, &MMS_PROBS).unwrap(), q);
}

#[test]
fn evaluation_report_summary_round_trips_through_json() {
    let mms = [2usize, 4, 6, 8, 10];
    let selections: Vec<Vec<usize>> = vec![
        vec![0, 1],
        vec![0, 1],
        vec![0],
        vec![0, 1],
        vec![1],
    ];
    let rule = ThresholdRecord::Hard { c: 1.0, d: 21 };
    let report =
        EvaluationReport::summarize("melsis", rule, &mms, &selections, &[0, 1], None).unwrap();
    assert_eq!(report.replications, 5);
    assert_eq!(report.mms_quantiles[2], 6.0);
    assert!((report.p_a - 0.6).abs() < 1e-15);
    assert!((report.p_j[&0] - 0.8).abs() < 1e-15);

    let parsed: EvaluationReport = serde_json::from_str(&report.to_json().unwrap()).unwrap();
    assert_eq!(parsed.method, "melsis");
    assert_eq!(parsed.mms_quantiles, report.mms_quantiles);

    let row = report.csv_row();
    assert_eq!(
        row.split(',').count(),
        EvaluationReport::csv_header().split(',').count(),
        "row misaligned with header: {row}"
    );
}

#[test]
fn report_invariants_reject_inconsistent_summaries() {
    let rule = ThresholdRecord::None;
    // Joint coverage above a marginal coverage is impossible.
    let mut p_j = BTreeMap::new();
    p_j.insert(0, 0.3);
    assert!(
        EvaluationReport::new("x", 1, rule.clone(), vec![1.0, 2.0], p_j, 0.9, None).is_err()
    );
    // Decreasing quantiles are impossible.
    assert!(EvaluationReport::new(
        "x",
        1,
        rule,
        vec![3.0, 2.0],
        BTreeMap::new(),
        0.0,
        None
    )
    .is_err());
}

/// Equicorrelated population at rho = 0.5 with three predictors: every
/// eigenvalue and cross term is computable by hand.
#[test]
fn proposition_diagnostics_match_hand_computed_eigenvalues() {
    let cov = DMatrix::from_fn(3, 3, |i, j| if i == j { 1.0 } else { 0.5 });
    // Moment rows: x1 and x2 carry signal 1 and 2; x3 none.
    let moments = DMatrix::from_row_slice(3, 1, &[1.0, 2.0, 0.0]);
    let input = DiagnosticsInput::from_population(cov, moments).unwrap();

    let diag = proposition_diagnostics(&input, &[0, 1], &[2], None).unwrap();
    let u = &diag.unconditional;
    // S_AA = [[1, .5], [.5, 1]] has eigenvalues {1.5, 0.5};
    // S_AI S_IA = [[.25, .25], [.25, .25]] has eigenvalues {0.5, 0}.
    assert!((u.lambda_min_active - 0.5).abs() <= 1e-12);
    assert!((u.lambda_max_cross - 0.5).abs() <= 1e-12);
    assert!((u.raw_ratio.unwrap() - 1.0).abs() <= 1e-12);
    assert!((u.scaled_ratio.unwrap() - 2.0).abs() <= 1e-12);
    assert!((u.rhs_min - 1.0).abs() <= 1e-12);
    assert!(!u.condition_holds, "2 > 1 must fail the bound");

    // Conditioning on x2 leaves residual covariance
    // [[.75, 0, .25], [0, 0, 0], [.25, 0, .75]] over (x1, x2, x3):
    // active shrinks to {x1}, lambda_min = .75, cross = .0625.
    let diag = proposition_diagnostics(&input, &[0, 1], &[2], Some(&[1])).unwrap();
    let c = diag.conditional.expect("conditional side present");
    assert_eq!(c.k, 1);
    assert!((c.lambda_min_active - 0.75).abs() <= 1e-12);
    assert!((c.lambda_max_cross - 0.0625).abs() <= 1e-12);
    assert!((c.raw_ratio.unwrap() - 1.0 / 12.0).abs() <= 1e-12);
    // Residual moment of x1: 1 - 0.5 * 2 = 0, so the bound cannot hold.
    assert!((c.rhs_min - 0.0).abs() <= 1e-12);
}

#[test]
fn proposition_diagnostics_reject_degenerate_sets() {
    let input = DiagnosticsInput::from_population(
        DMatrix::identity(3, 3),
        DMatrix::from_row_slice(3, 1, &[1.0, 0.0, 0.0]),
    )
    .unwrap();
    assert!(proposition_diagnostics(&input, &[], &[1], None).is_err());
    assert!(proposition_diagnostics(&input, &[0], &[0], None).is_err());
    assert!(proposition_diagnostics(&input, &[0], &[1], Some(&[0])).is_err());
    // Orthogonal design: the cross block vanishes and the bound holds.
    let diag = proposition_diagnostics(&input, &[0], &[1, 2], None).unwrap();
    assert_eq!(diag.unconditional.lambda_max_cross, 0.0);
    assert!(diag.unconditional.condition_holds);
}

#[test]
fn taylor_forms_collapse_for_orthogonal_columns() {
    // Columns with disjoint support have an exactly diagonal uncentered
    // second moment, so the full quadratic form equals the diagonal one.
    let exact = {
        let mut m = DMatrix::zeros(6, 2);
        m[(0, 0)] = 1.0;
        m[(1, 0)] = -0.8;
        m[(2, 0)] = 0.4;
        m[(3, 1)] = 0.9;
        m[(4, 1)] = -0.7;
        m[(5, 1)] = 0.5;
        m
    };
    let g = EstimatingMatrix::new(exact).unwrap();
    let cmp = taylor_comparator(&g).unwrap();
    assert!(
        (cmp.hotelling - cmp.avg_form).abs() <= 1e-8 * cmp.hotelling.max(1.0),
        "diagonal second moment: {} vs {}",
        cmp.hotelling,
        cmp.avg_form
    );
    assert!(cmp.max_form <= cmp.avg_form + 1e-12);
}

#[test]
fn el_ratio_tracks_hotelling_on_moderate_gaussian_draws() {
    let identity = DMatrix::<f64>::identity(4, 4);
    let draws = 50;
    let mut within = 0;
    for i in 0..draws {
        let rows = mvn_sample(&identity, 500, derive_seed(0x7A1, i)).unwrap();
        let g = EstimatingMatrix::new(rows).unwrap();
        let cmp = taylor_comparator(&g).unwrap();
        if (cmp.el_ratio - cmp.hotelling).abs() <= 0.05 * cmp.hotelling.max(1.0) {
            within += 1;
        }
        assert!(cmp.el_ratio >= -1e-12);
        assert!(cmp.max_form <= cmp.avg_form + 1e-12);
    }
    assert!(
        within * 100 >= draws * 94,
        "EL ratio strayed from the quadratic form in {}/{draws} draws",
        draws - within
    );
}
