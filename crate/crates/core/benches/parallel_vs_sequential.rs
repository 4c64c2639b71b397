use std::hint::black_box;

use cdpo_core::data::{generate_moons_dataset, MoonsConfig};
use cdpo_core::eval::{evaluate_w2, Conditioning};
use cdpo_core::exec::Exec;
use cdpo_core::genmodels::{Family, GenerativeModel, ModelConfig};
use cdpo_core::losses::{batch_gradient, LossContext, LossKind};
use cdpo_core::nn::Standardizer;
use cdpo_core::orthocheck::{run_suite, SuiteConfig};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

const STRATEGIES: [(&str, Exec); 2] = [("parallel", Exec::Parallel), ("sequential", Exec::Sequential)];

fn moons(n: usize) -> cdpo_core::data::MoonsData {
    generate_moons_dataset(&MoonsConfig {
        n_train: n,
        n_test: 64,
        seed: 3,
        ..Default::default()
    })
    .unwrap()
}

fn model(family: Family) -> GenerativeModel {
    GenerativeModel::new(ModelConfig::new(family, 2, 2), Standardizer::identity(2), 7).unwrap()
}

fn bench_batch_gradient(c: &mut Criterion) {
    let data = moons(256);
    let rows: Vec<usize> = (0..256).collect();
    let mut group = c.benchmark_group("batch_gradient");
    for family in [Family::Cnf, Family::Cvae] {
        let m = model(family);
        let ctx = LossContext::new(LossKind::PlugIn, &data.train, None);
        for (name, exec) in STRATEGIES {
            group.bench_with_input(BenchmarkId::new(name, family), &exec, |b, &exec| {
                b.iter(|| batch_gradient(&m, m.params(), &ctx, black_box(&rows), &[0, 1], true, 1, exec).unwrap())
            });
        }
    }
    group.finish();
}

fn bench_w2(c: &mut Criterion) {
    let data = moons(16);
    let m = model(Family::Cnf);
    let mut group = c.benchmark_group("evaluate_w2");
    group.sample_size(10);
    for (name, exec) in STRATEGIES {
        group.bench_function(name, |b| {
            b.iter(|| evaluate_w2(&m, &data.test, 0, 100, 16, Conditioning::FullX, 5, exec).unwrap())
        });
    }
    group.finish();
}

fn bench_orthocheck(c: &mut Criterion) {
    let cfg = SuiteConfig::default();
    let mut group = c.benchmark_group("orthocheck_suite");
    group.sample_size(10);
    for (name, exec) in STRATEGIES {
        group.bench_function(name, |b| b.iter(|| run_suite(black_box(&cfg), exec)));
    }
    group.finish();
}

criterion_group!(benches, bench_batch_gradient, bench_w2, bench_orthocheck);
criterion_main!(benches);
