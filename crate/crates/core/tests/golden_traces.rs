mod common;

use cal_core::confidence::{calibrate, evaluate_bias};
use cal_core::harness::{run_task, summarize, Mode};
use cal_core::search::{discover_length, exhaustive_argmax};
use cal_core::{formats, BiasModel, SearchConfig};
use common::*;

#[test]
fn reference_bias_matches_tabulated_values() {
    let model = BiasModel::reference();
    for (l, _, b, _) in CASE_STUDY {
        let got = evaluate_bias(&model, l);
        assert!((got - b).abs() <= 1e-3, "B({l}) = {got}, tabulated {b}");
    }
}

#[test]
fn underestimate_trace() {
    let backend = replay("case_study_underestimate.jsonl");
    let config = SearchConfig::code(4, 64).unwrap();
    let r = discover_length(&backend, &case_task(), &config, &BiasModel::reference()).unwrap();
    assert_eq!(r.l_hat, 10);
    assert_eq!(r.probed_lengths(), UNDERESTIMATE_TRACE);
    assert_eq!(r.probe_count, 14);
    assert!((r.phi_c_hat - 1.821).abs() <= 5e-3);
}

#[test]
fn overestimate_trace() {
    let backend = replay("case_study_overestimate.jsonl");
    let config = SearchConfig::code(16, 64).unwrap();
    let r = discover_length(&backend, &case_task(), &config, &BiasModel::reference()).unwrap();
    assert_eq!(r.l_hat, 10);
    assert_eq!(r.probed_lengths(), OVERESTIMATE_TRACE);
    assert_eq!(r.probe_count, 16);
}

#[test]
fn calibrated_values_match_tabulated_values() {
    let model = BiasModel::reference();
    for (l, phi, _, phi_c) in CASE_STUDY {
        let got = calibrate(phi, l, &model).unwrap();
        assert!(
            (got - phi_c).abs() <= 5e-3,
            "Φ_c({l}) = {got}, tabulated {phi_c}"
        );
    }
    assert!((calibrate(0.997, 10, &model).unwrap() - 1.82156).abs() < 1e-4);
}

#[test]
fn trace_entries_carry_calibrated_values() {
    let backend = replay("case_study_underestimate.jsonl");
    let config = SearchConfig::code(4, 64).unwrap();
    let r = discover_length(&backend, &case_task(), &config, &BiasModel::reference()).unwrap();
    for entry in &r.trace {
        let (_, phi, _, phi_c) = CASE_STUDY[entry.length - 1];
        assert_eq!(entry.phi, phi);
        assert!((entry.phi_c - phi_c).abs() <= 5e-3);
    }
}

#[test]
fn exhaustive_agrees_on_recorded_range() {
    let backend = replay("case_study_overestimate.jsonl");
    let r = exhaustive_argmax(&backend, &case_task(), 6, 21, &BiasModel::reference()).unwrap();
    assert_eq!(r.l_hat, 10);
    assert_eq!(r.probe_count, 16);
}

#[test]
fn case_study_pair_through_harness() {
    let backend = replay("case_study_log.jsonl");
    let tasks = formats::read_tasks(&fixture("case_study_tasks.jsonl")).unwrap();
    let model = BiasModel::reference();
    let results: Vec<_> = tasks
        .iter()
        .zip([4, 16])
        .map(|(t, l_init)| {
            run_task(
                &backend,
                t,
                Mode::Cal,
                &SearchConfig::code(l_init, 64).unwrap(),
                Some(&model),
            )
        })
        .collect();
    assert!(results
        .iter()
        .all(|r| r.l_used == Some(10) && r.error.is_none()));
    let report = summarize(&results, None).unwrap();
    let pooled = report.groups.iter().find(|g| g.l_init.is_none()).unwrap();
    assert_eq!(pooled.search_cost.unwrap().mean_probe_count, 15.0);
    assert_eq!(pooled.length_error.unwrap().exact_rate, 1.0);
}
