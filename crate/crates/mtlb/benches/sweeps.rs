//! Sequential against rayon-parallel evaluation of a gain sweep. Without the
//! `parallel` feature only the sequential arm runs.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use mtlb::dispersion::solve_dispersion;
use mtlb::par;
use mtlb::sweep::sweep_values;
use mtlb::{spectral_data, validate_mtl, BeamParams, MtlSpectralData, Strictness};
use nalgebra::DMatrix;

fn four_lines() -> MtlSpectralData {
    let l = DMatrix::from_row_slice(4, 4, &[4.0, 1.0, 0.5, 0.2, 1.0, 5.0, 2.0, 0.3, 0.5, 2.0, 3.0, 0.4, 0.2, 0.3, 0.4, 2.0]);
    let c = DMatrix::from_row_slice(4, 4, &[2.0, 0.5, 0.3, 0.1, 0.5, 3.0, 0.2, 0.4, 0.3, 0.2, 2.5, 0.3, 0.1, 0.4, 0.3, 1.5]);
    spectral_data(&validate_mtl(l, c, None, Strictness::Strict).unwrap())
}

fn gain(spec: &MtlSpectralData, xi: f64) -> Option<f64> {
    let beam = BeamParams::new(0.25, xi).unwrap();
    solve_dispersion(spec, &beam, 1.0).ok().and_then(|s| s.gain)
}

fn bench_sweep(c: &mut Criterion) {
    let spec = four_lines();
    let mut group = c.benchmark_group("xi_sweep");
    for points in [64usize, 1024] {
        let xs = sweep_values(1e-6, 1e2, points, true).unwrap();
        group.bench_with_input(BenchmarkId::new("sequential", points), &xs, |b, xs| {
            b.iter(|| par::map_sequential(black_box(xs), |&x| gain(&spec, x)))
        });
        #[cfg(feature = "parallel")]
        group.bench_with_input(BenchmarkId::new("parallel", points), &xs, |b, xs| {
            b.iter(|| par::map_parallel(black_box(xs), |&x| gain(&spec, x)))
        });
    }
    group.finish();
}

criterion_group!(benches, bench_sweep);
criterion_main!(benches);
