use std::f64::consts::PI;

use criterion::{criterion_group, criterion_main, Criterion};
use ctrlcert::certify::phase;
use ctrlcert::flow::{sample_e, SampleProjection};
use ctrlcert::models::sector;
use ctrlcert::{cone_full, mc_reach, CertifyOptions, ControlSet, McOptions, OdeOptions};
use nalgebra::DVector;

fn rays(n: usize, k: usize) -> Vec<DVector<f64>> {
    (0..k)
        .map(|j| DVector::from_fn(n, |i, _| ((j * 7 + i * 13) as f64 * 0.61).sin()))
        .collect()
}

fn cone(c: &mut Criterion) {
    for k in [32, 256] {
        let g = rays(3, k);
        c.bench_function(&format!("cone_full/3x{k}"), |b| b.iter(|| cone_full(&g).unwrap()));
    }
}

fn sampling(c: &mut Criterion) {
    let sys = sector(0.3);
    let u = ControlSet::disk_sector(0.5);
    let proj = SampleProjection::Truncate {
        proj: sys.default_projection(),
    };
    c.bench_function("sample_e/sector/64", |b| {
        b.iter(|| sample_e(&sys, &u, &[0.0; 4], 0.0, 2.0 * PI, 64, &proj, OdeOptions::default()).unwrap())
    });
}

fn certify(c: &mut Criterion) {
    let u = ControlSet::disk_sector(0.5);
    let opts = CertifyOptions::default();
    for theta in [0.3, 0.7] {
        let sys = sector(theta);
        c.bench_function(&format!("phase/sector/{theta}"), |b| {
            b.iter(|| phase(&sys, &u, &[0.0; 4], &opts).unwrap())
        });
    }
    let sys = sector(0.3);
    let mopts = McOptions {
        projection: Some(sys.default_projection()),
        ..McOptions::default()
    };
    let mut group = c.benchmark_group("mc_reach");
    group.sample_size(10);
    group.bench_function("sector/200", |b| {
        b.iter(|| mc_reach(&sys, &u, &[0.0; 4], 2.0 * PI, 200, 1, &mopts).unwrap())
    });
    group.finish();
}

criterion_group!(benches, cone, sampling, certify);
criterion_main!(benches);
