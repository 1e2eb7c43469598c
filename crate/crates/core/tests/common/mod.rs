#![allow(dead_code)]

use std::path::PathBuf;

use cal_core::backends::ReplayBackend;
use cal_core::formats;

/// `(L, Φ, B, Φ_c)` rows of the HumanEval/0/L3 case study, as tabulated.
pub const CASE_STUDY: [(usize, f64, f64, f64); 21] = [
    (1, 1.000, 0.938, 1.066),
    (2, 0.926, 0.766, 1.209),
    (3, 0.887, 0.713, 1.244),
    (4, 0.956, 0.681, 1.403),
    (5, 0.941, 0.655, 1.437),
    (6, 0.926, 0.631, 1.468),
    (7, 0.820, 0.608, 1.348),
    (8, 0.979, 0.587, 1.669),
    (9, 0.790, 0.566, 1.395),
    (10, 0.997, 0.547, 1.821),
    (11, 0.886, 0.529, 1.674),
    (12, 0.604, 0.513, 1.179),
    (13, 0.583, 0.497, 1.173),
    (14, 0.472, 0.482, 0.979),
    (15, 0.427, 0.468, 0.913),
    (16, 0.524, 0.454, 1.153),
    (17, 0.520, 0.442, 1.177),
    (18, 0.414, 0.430, 0.963),
    (19, 0.425, 0.419, 1.014),
    (20, 0.389, 0.409, 0.951),
    (21, 0.351, 0.399, 0.879),
];

pub const UNDERESTIMATE_TRACE: [usize; 14] = [4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 3, 2, 1];
pub const OVERESTIMATE_TRACE: [usize; 16] =
    [16, 17, 18, 19, 20, 21, 15, 14, 13, 12, 11, 10, 9, 8, 7, 6];

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("fixtures")
        .join(name)
}

pub fn replay(name: &str) -> ReplayBackend {
    ReplayBackend::from_records(formats::read_probe_log(&fixture(name)).unwrap())
}

pub fn case_task() -> cal_core::InfillTask {
    formats::read_tasks(&fixture("case_study_single_task.jsonl"))
        .unwrap()
        .remove(0)
}

use std::collections::HashMap;

use cal_core::backends::{synthetic_tasks, SyntheticBackend, SyntheticLandscapeSpec};
use cal_core::bias_fit::{prepare_fit_dataset, FitDataset, DEFAULT_PROBE_GRID, DEFAULT_WINDOW};
use cal_core::harness::record_probe_curves;
use cal_core::par::Execution;
use cal_core::BiasModel;

/// Probe curves for `n` tasks drawn from the reference bias with Gaussian
/// peaks at each task's oracle length and additive noise, pooled for fitting.
pub fn reference_fit_dataset(n: usize, seed: u64, noise_sigma: f64) -> FitDataset {
    let mut spec = SyntheticLandscapeSpec::new(BiasModel::reference(), 10, 0.5, 1.5);
    spec.noise_sigma = noise_sigma;
    spec.seed = seed;
    let backend = SyntheticBackend::new(spec).unwrap();
    let tasks = synthetic_tasks(n, seed, (3, 40));
    let rec =
        record_probe_curves(&tasks, &backend, &DEFAULT_PROBE_GRID, Execution::default()).unwrap();
    assert!(rec.failures.is_empty());
    let oracles: HashMap<String, usize> = tasks
        .iter()
        .map(|t| (t.task_id.clone(), t.oracle_length.unwrap()))
        .collect();
    prepare_fit_dataset(&rec.records, &oracles, DEFAULT_WINDOW).unwrap()
}

pub fn max_relative_error(
    fit: &BiasModel,
    truth: &BiasModel,
    lengths: std::ops::RangeInclusive<usize>,
) -> f64 {
    use cal_core::confidence::evaluate_bias;
    lengths
        .map(|l| {
            let t = evaluate_bias(truth, l);
            (evaluate_bias(fit, l) - t).abs() / t
        })
        .fold(0.0, f64::max)
}
