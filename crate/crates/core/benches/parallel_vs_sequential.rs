use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tnc_core::classifier::{self, Mode};
use tnc_core::dataset::{AmplitudeVector, Dataset};
use tnc_core::exec::Execution;
use tnc_core::mps::{self, BuildPlan};

/// Ten noisy clusters of non-negative 8-qubit images.
fn synthetic(per_class: usize) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let centres: Vec<Vec<f64>> = (0..10).map(|_| (0..256).map(|_| rng.gen::<f64>()).collect()).collect();
    let mut items = Vec::new();
    for i in 0..per_class * 10 {
        let c = &centres[i % 10];
        let v = c.iter().map(|x| x + 0.5 * rng.gen::<f64>()).collect();
        items.push(AmplitudeVector::new(v, i % 10).unwrap());
    }
    Dataset::new(items, 10).unwrap()
}

fn bench(c: &mut Criterion) {
    let data = synthetic(40);
    let plan = BuildPlan {
        d_encode: 8,
        d_batch: 8,
        d_final: 8,
        batch_size: 10,
        orthogonalise: true,
    };
    let readout = mps::train_classifier(&data, &plan, Execution::Sequential)
        .and_then(|m| m.readout())
        .unwrap();

    let mut group = c.benchmark_group("build");
    group.sample_size(10);
    for exec in [Execution::Sequential, Execution::Parallel] {
        group.bench_with_input(BenchmarkId::from_parameter(format!("{exec:?}")), &exec, |b, &exec| {
            b.iter(|| mps::train_classifier(&data, &plan, exec).unwrap())
        });
    }
    group.finish();

    let mut group = c.benchmark_group("evaluate");
    for exec in [Execution::Sequential, Execution::Parallel] {
        group.bench_with_input(BenchmarkId::from_parameter(format!("{exec:?}")), &exec, |b, &exec| {
            b.iter(|| classifier::evaluate(&readout, &data, Mode::Postselect, exec).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, bench);
criterion_main!(benches);
