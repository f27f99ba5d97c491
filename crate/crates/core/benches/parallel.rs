use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use tapdecode::dataset::bundled_corpus;
use tapdecode::dnd::{DndConfig, NeuralDecoder, Variant};
use tapdecode::par::Exec;
use tapdecode::simulator::{simulate_dataset, SimConfig};
use tapdecode::train::validation_loss;

const MODES: [(&str, Exec); 2] = [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)];

fn simulation(c: &mut Criterion) {
    let corpus = bundled_corpus();
    let cfg = SimConfig {
        phrases_per_user: 40,
        ..SimConfig::default()
    };
    let mut g = c.benchmark_group("simulate");
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| simulate_dataset(&cfg, &corpus, exec).unwrap())
        });
    }
    g.finish();
}

fn loss_and_gradient(c: &mut Criterion) {
    let corpus = bundled_corpus();
    let cfg = SimConfig {
        n_users: 2,
        phrases_per_user: 32,
        ..SimConfig::default()
    };
    let data = simulate_dataset(&cfg, &corpus, Exec::Parallel).unwrap();
    let model = NeuralDecoder::<f32>::new(&DndConfig::new(Variant::Dnd, 2, 64), 1).unwrap();
    let mut g = c.benchmark_group("validation_loss");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| validation_loss(&model, &data, exec).unwrap())
        });
    }
    g.finish();

    let train = tapdecode::train::TrainConfig {
        max_epochs: 1,
        model: DndConfig::new(Variant::Dnd, 1, 32),
        ..Default::default()
    };
    let mut g = c.benchmark_group("train_epoch");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| tapdecode::train::fit(&data, &data, &train, exec).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, simulation, loss_and_gradient);
criterion_main!(benches);
