use std::hint::black_box;

use chaoslab_core::experiments::{chaos_rate_with_flow, ReferenceSettings};
use chaoslab_core::model::{granular_media_model, Potential};
use chaoslab_core::par;
use chaoslab_core::sde::{simulate_particle_system, SimConfig};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

// threads = 0 is the default pool; 1 is effectively sequential
const POOLS: [usize; 2] = [1, 0];

fn particle_step(c: &mut Criterion) {
    let model = granular_media_model(Potential::Quadratic { strength: 1.0 }, Potential::Cubic { strength: 1.0 }, 2).unwrap();
    let cfg = SimConfig::new(0.01, 0.05, 2048, 1);
    let mut group = c.benchmark_group("particle_system_n2048_d2");
    group.sample_size(10);
    for threads in POOLS {
        group.bench_with_input(BenchmarkId::from_parameter(threads), &threads, |b, &t| {
            b.iter(|| par::with_threads(t, || black_box(simulate_particle_system(&model, &cfg, &cfg.noise()).unwrap())))
        });
    }
    group.finish();
}

fn replicas(c: &mut Criterion) {
    let model = granular_media_model(Potential::Quadratic { strength: 1.0 }, Potential::Quadratic { strength: 1.0 }, 1).unwrap();
    let cfg = SimConfig::new(0.02, 0.5, 128, 2);
    let flow = ReferenceSettings::with_m(2048).build(&model, &cfg, 128).unwrap();
    let mut group = c.benchmark_group("chaos_replicas_64");
    group.sample_size(10);
    for threads in POOLS {
        group.bench_with_input(BenchmarkId::from_parameter(threads), &threads, |b, &t| {
            b.iter(|| par::with_threads(t, || black_box(chaos_rate_with_flow(&model, &[32, 128], &cfg, 64, &flow).unwrap())))
        });
    }
    group.finish();
}

criterion_group!(benches, particle_step, replicas);
criterion_main!(benches);
