use abp_bench::{adaptive_state, coupled_torus, double_well, empty_grid};
use abp_core::oracle::{a_infinity, poisson_1d};
use abp_core::{KernelSpec, PotentialSpec};
use criterion::{black_box, criterion_group, criterion_main, BatchSize, Criterion};

fn deposit(c: &mut Criterion) {
    let mut g = c.benchmark_group("deposit");
    for (m, size) in [(1, 256), (2, 64)] {
        let mut grid = empty_grid(size, m);
        let mut z = vec![0.1; m];
        g.bench_function(format!("m{m}_g{size}"), |b| {
            b.iter(|| {
                z[0] = (z[0] + 0.618_033_988_7) % 1.0;
                grid.deposit(black_box(&z), 1.0, 1e-3).unwrap();
            })
        });
    }
    g.finish();
}

fn abp_step(c: &mut Criterion) {
    let mut g = c.benchmark_group("abp_step");
    let mut one = adaptive_state(double_well(), 256);
    g.bench_function("double_well_g256", |b| b.iter(|| one.abp_step().unwrap()));
    let mut two = adaptive_state(coupled_torus(1), 256);
    g.bench_function("t2_m1_g256", |b| b.iter(|| two.abp_step().unwrap()));
    let mut both = adaptive_state(coupled_torus(2), 64);
    g.bench_function("t2_m2_g64", |b| b.iter(|| both.abp_step().unwrap()));
    g.finish();
}

fn oracle(c: &mut Criterion) {
    let v = PotentialSpec::preset("double-well-1d", 1.0).unwrap();
    let k = KernelSpec::default();
    let a = a_infinity(&v, 1, &k, 256).unwrap();
    let cos = |x: &[f64]| (2.0 * std::f64::consts::PI * x[0]).cos();
    c.bench_function("poisson_1d_r256", |b| b.iter(|| poisson_1d(&v, black_box(&a), cos, 256).unwrap()));
    c.bench_function("a_infinity_r256", |b| {
        b.iter_batched(|| k.clone(), |k| a_infinity(&v, 1, &k, 256).unwrap(), BatchSize::SmallInput)
    });
}

criterion_group!(benches, deposit, abp_step, oracle);
criterion_main!(benches);
