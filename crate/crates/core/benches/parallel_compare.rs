//! Serial vs parallel throughput on the two replicated workloads: Monte
//! Carlo simulation batches and batched fluid integration. The serial
//! baselines run the identical per-replication computation through the
//! public single-item entry points, so outputs match bit for bit and the
//! comparison isolates the thread-pool speedup. Build with
//! `--no-default-features` to measure the fully sequential library instead.

use criterion::{criterion_group, criterion_main, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use spatial_aloha::fluid::{integrate, integrate_batch, FluidParams};
use spatial_aloha::graph::cycle;
use spatial_aloha::sim::{simulate_batch, simulate_stream, ArrivalModel};

const REPS: usize = 64;

fn bench_sim_replications(c: &mut Criterion) {
    let g = cycle(4).unwrap();
    let arrivals = ArrivalModel::poisson_symmetric(0.1, 4);
    let initial = vec![5u64; 4];
    let slots = 5_000;

    let mut group = c.benchmark_group("sim_replications_x64");
    group.sample_size(10);
    group.bench_function("serial", |b| {
        b.iter(|| {
            (0..REPS)
                .map(|r| {
                    simulate_stream(&g, &arrivals, slots, 7, r as u64, &initial, slots).unwrap()
                })
                .collect::<Vec<_>>()
        })
    });
    group.bench_function("parallel", |b| {
        b.iter(|| simulate_batch(&g, &arrivals, slots, 7, &initial, slots, REPS).unwrap())
    });
    group.finish();
}

fn bench_fluid_batch(c: &mut Criterion) {
    let g = cycle(4).unwrap();
    let params = FluidParams::new(g, vec![0.1; 4], 5.0);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let starts: Vec<Vec<f64>> = (0..REPS)
        .map(|_| {
            let draws: Vec<f64> = (0..4).map(|_| -rng.gen::<f64>().ln()).collect();
            let total: f64 = draws.iter().sum();
            draws.into_iter().map(|d| d / total).collect()
        })
        .collect();

    let mut group = c.benchmark_group("fluid_batch_x64");
    group.sample_size(10);
    group.bench_function("serial", |b| {
        b.iter(|| {
            starts
                .iter()
                .map(|z0| integrate(z0, &params).unwrap())
                .collect::<Vec<_>>()
        })
    });
    group.bench_function("parallel", |b| {
        b.iter(|| integrate_batch(&starts, &params))
    });
    group.finish();
}

criterion_group!(benches, bench_sim_replications, bench_fluid_batch);
criterion_main!(benches);
