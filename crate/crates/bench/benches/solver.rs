use std::f64::consts::PI;
use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use circsim_bench::{reference_circuit, OMEGA_M};
use circsim_core::transient::{transient_pss, TransientOptions};
use circsim_core::{assemble, sweep, LptvSolver};

fn harmonic(c: &mut Criterion) {
    let circuit = reference_circuit();
    let w0 = 2.0 * PI * 2.52e9;
    let mut g = c.benchmark_group("harmonic");
    for k in [4usize, 8, 16] {
        g.bench_with_input(BenchmarkId::new("assemble", k), &k, |b, &k| {
            b.iter(|| assemble(black_box(&circuit), w0, OMEGA_M, k).unwrap())
        });
        let solver = LptvSolver::new(&circuit, OMEGA_M, k).unwrap();
        g.bench_with_input(BenchmarkId::new("solve", k), &k, |b, _| b.iter(|| solver.solve(black_box(w0)).unwrap()));
    }
    g.sample_size(10);
    g.bench_function("sweep_21_k8", |b| b.iter(|| sweep(&circuit, 2.5e9, 2.54e9, 21, OMEGA_M, 8).unwrap()));
    g.finish();
}

fn transient(c: &mut Criterion) {
    let circuit = reference_circuit();
    let opts = TransientOptions { steps_per_cycle: 64, extrapolate: false, sidebands: 2, ..TransientOptions::default() };
    let mut g = c.benchmark_group("transient");
    g.sample_size(10);
    g.bench_function("pss_64spc", |b| b.iter(|| transient_pss(&circuit, 2.52e9, OMEGA_M, 1, &opts).unwrap()));
    g.finish();
}

criterion_group!(benches, harmonic, transient);
criterion_main!(benches);
