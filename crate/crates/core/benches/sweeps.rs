use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use fracspike::ansatz::{build_ansatz_cached, ProfileCache};
use fracspike::ground_state::{solve_ground_state, GroundStateOptions};
use fracspike::par;
use fracspike::potential::make_gaussian_well;
use fracspike::reduction::{solve_corrector, FixedPointOptions};
use fracspike::spectral::{FracParams, Grid};

fn corrector_sweep(c: &mut Criterion) {
    let params = FracParams::new(0.9, 3.0, 1).unwrap();
    let grid = Grid::new(1, 4096, 128.0).unwrap();
    let gs = solve_ground_state(&params, &grid, &GroundStateOptions::default()).unwrap();
    let v = make_gaussian_well(1.0, &[0.0], 2.0).unwrap();
    let opts = FixedPointOptions::for_params(&params);
    let cache = ProfileCache::new();
    let jobs: Vec<(f64, f64)> = [0.2, 0.1, 0.05, 0.025]
        .iter()
        .flat_map(|&e| [0.0, 0.7, 1.4].map(|x| (e, x)))
        .collect();
    let job = |&(eps, x): &(f64, f64)| {
        let ap = build_ansatz_cached(&cache, &gs, &v, &[x / eps], eps).unwrap();
        solve_corrector(&ap, &opts).unwrap().w_norm
    };
    // Warm the frozen-profile cache so both paths time the same work.
    par::map_sequential(&jobs, job);

    let mut group = c.benchmark_group("corrector_sweep");
    group.sample_size(10);
    group.bench_with_input(BenchmarkId::new("parallel", jobs.len()), &jobs, |b, j| b.iter(|| par::map(j, job)));
    group.bench_with_input(BenchmarkId::new("sequential", jobs.len()), &jobs, |b, j| {
        b.iter(|| par::map_sequential(j, job))
    });
    group.finish();
}

criterion_group!(benches, corrector_sweep);
criterion_main!(benches);
