use cal_core::backends::{
    synthetic_tasks, PeakShape, SuiteRanges, SyntheticBackend, SyntheticLandscapeSpec,
    SyntheticSuite,
};
use cal_core::bias_fit::DEFAULT_PROBE_GRID;
use cal_core::harness::{record_probe_curves, run_task, Mode};
use cal_core::par::Execution;
use cal_core::search::exhaustive_argmax;
use cal_core::{BiasModel, SearchConfig};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

fn executions() -> [(&'static str, Execution); 2] {
    [
        ("sequential", Execution::Sequential),
        ("parallel", Execution::default()),
    ]
}

fn template() -> SyntheticLandscapeSpec {
    let mut spec = SyntheticLandscapeSpec::new(BiasModel::reference(), 10, 0.5, 1.0);
    spec.peak_shape = PeakShape::Lorentzian;
    spec
}

fn suite_evaluation(c: &mut Criterion) {
    let suite = SyntheticSuite::sample(200, 1, &SuiteRanges::default(), &template()).unwrap();
    let model = BiasModel::reference();
    let mut group = c.benchmark_group("suite_evaluation");
    group.sample_size(10);
    for (name, exec) in executions() {
        group.bench_function(BenchmarkId::new("cal", name), |b| {
            b.iter(|| {
                exec.map(&suite.cases, |case| {
                    let config = SearchConfig::code(case.l_init, 64).unwrap();
                    run_task(&suite.backend, &case.task, Mode::Cal, &config, Some(&model)).l_used
                })
            })
        });
        group.bench_function(BenchmarkId::new("exhaustive", name), |b| {
            b.iter(|| {
                exec.map(&suite.cases, |case| {
                    exhaustive_argmax(&suite.backend, &case.task, 1, 64, &model)
                        .unwrap()
                        .l_hat
                })
            })
        });
    }
    group.finish();
}

fn recording(c: &mut Criterion) {
    let mut spec = template();
    spec.noise_sigma = 0.01;
    let backend = SyntheticBackend::new(spec).unwrap();
    let tasks = synthetic_tasks(100, 1, (3, 40));
    let mut group = c.benchmark_group("recording");
    group.sample_size(10);
    for (name, exec) in executions() {
        group.bench_function(name, |b| {
            b.iter(|| {
                record_probe_curves(&tasks, &backend, &DEFAULT_PROBE_GRID, exec)
                    .unwrap()
                    .records
                    .len()
            })
        });
    }
    group.finish();
}

criterion_group!(benches, suite_evaluation, recording);
criterion_main!(benches);
