use criterion::{black_box, criterion_group, criterion_main, BatchSize, Criterion};
use dlsched::multi::{self, select_into, MultiUserOptions, Scratch, SlotDecision};
use dlsched::special::{coupled_dominance_check, simulate_single_buffer};
use dlsched::{presets, FileLengthMode, ZooPolicy};

fn slot_decision(c: &mut Criterion) {
    let config = presets::table1();
    let active = vec![true; config.len()];
    let mut scratch = Scratch::default();
    let mut out = SlotDecision::default();
    c.bench_function("select_into/table1", |b| {
        b.iter(|| {
            select_into(
                black_box(&active),
                black_box(120.0),
                &config,
                &mut scratch,
                &mut out,
            )
        })
    });
}

fn runs(c: &mut Criterion) {
    let mut g = c.benchmark_group("simulate_100k_slots");
    g.sample_size(20);
    let table1 = presets::table1();
    for mode in [FileLengthMode::Memoryless, FileLengthMode::Packet] {
        let opts = MultiUserOptions {
            mode,
            thinning: 0,
            initial: None,
        };
        g.bench_function(format!("table1/{mode:?}"), |b| {
            b.iter(|| multi::simulate(&table1, 100_000, 1, 0, &opts, |_| {}).unwrap())
        });
    }
    let lambdas = [0.1, 0.3, 0.5, 0.7, 0.9];
    g.bench_function("single_buffer/max_lambda", |b| {
        b.iter(|| {
            simulate_single_buffer(&ZooPolicy::MaxLambda, &lambdas, 2, 100_000, 1, 0).unwrap()
        })
    });
    g.bench_function("coupling/random", |b| {
        b.iter_batched(
            || ZooPolicy::RandomWorkConserving,
            |p| coupled_dominance_check(&p, &lambdas, 2, 100_000, 1).unwrap(),
            BatchSize::SmallInput,
        )
    });
    g.finish();
}

criterion_group!(benches, slot_decision, runs);
criterion_main!(benches);
