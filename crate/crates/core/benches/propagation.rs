use std::hint::black_box;

use barrier_smc::filters::{bootstrap_pf_step, BarrierKernel, ParticleEnsemble, SdeKernel};
use barrier_smc::harness::{ModelConfig, PriorConfig, TrialSetup};
use barrier_smc::metrics::{tv_discretized, HypercubeGrid};
use barrier_smc::sde::BarrierParams;
use barrier_smc::ssm::sample_prior;
use barrier_smc::{Execution, SeedNode};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};

fn setup() -> TrialSetup {
    let model = ModelConfig {
        d_x: 10,
        d_y: 6,
        forcing: 8.0,
        sigma_x: 0.5f64.sqrt(),
        sigma_y: 0.5,
        sigma_v: 5e-4,
        delta: 1e-3,
        delta_obs: 0.1,
        spinup: 5.0,
    };
    TrialSetup::generate(&model, 1, &SeedNode::new(1)).unwrap()
}

fn ensemble(setup: &TrialSetup, n: usize, offset: f64) -> ParticleEnsemble {
    let prior = setup
        .prior(&PriorConfig {
            offset,
            variance: 1.0,
        })
        .unwrap();
    let seed = SeedNode::new(2);
    ParticleEnsemble::uniform(
        (0..n)
            .map(|i| sample_prior(&prior, &mut seed.slot(i).stream()))
            .collect(),
    )
    .unwrap()
}

const MODES: [(&str, Execution); 2] = [
    ("sequential", Execution::Sequential),
    ("parallel", Execution::Parallel),
];

fn pf_step(c: &mut Criterion) {
    let s = setup();
    let obs = s.observation(1).unwrap();
    let plain = SdeKernel::new(&s.l96, 0.0, 0.1, s.grid.substeps()).unwrap();
    let params = BarrierParams::new(2.0, 1.0, 10.0).unwrap();
    let barrier = BarrierKernel::new(&s.l96, s.barrier_spec(1, params).unwrap(), s.grid).unwrap();
    let seed = SeedNode::new(3);

    let mut group = c.benchmark_group("bootstrap_step");
    group.sample_size(10);
    for n in [256usize, 1024] {
        let e = ensemble(&s, n, 0.0);
        group.throughput(Throughput::Elements(n as u64));
        for (name, exec) in MODES {
            group.bench_with_input(BenchmarkId::new(format!("plain/{name}"), n), &e, |b, e| {
                b.iter(|| bootstrap_pf_step(black_box(e), &plain, &obs, &seed, exec).unwrap())
            });
            group.bench_with_input(
                BenchmarkId::new(format!("barrier/{name}"), n),
                &e,
                |b, e| {
                    b.iter(|| bootstrap_pf_step(black_box(e), &barrier, &obs, &seed, exec).unwrap())
                },
            );
        }
    }
    group.finish();
}

fn total_variation(c: &mut Criterion) {
    let s = setup();
    let grid = HypercubeGrid::new(s.truth.states[0].clone(), 6.0, 3.0).unwrap();
    let mut group = c.benchmark_group("tv_discretized");
    for n in [4096usize, 65_536] {
        let a = ensemble(&s, n, -1.0);
        let b = ensemble(&s, n, 1.0);
        group.throughput(Throughput::Elements(2 * n as u64));
        group.bench_function(BenchmarkId::from_parameter(n), |bench| {
            bench.iter(|| tv_discretized(&grid, black_box(&a), black_box(&b)).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, pf_step, total_variation);
criterion_main!(benches);
