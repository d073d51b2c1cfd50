use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use qvflab_core::engine::{exact_generator, init_product, replica_rng, simulate, RateTree, SimOptions};
use qvflab_core::hydro::HeatSolver;
use qvflab_core::kernels::BondKernel;
use qvflab_core::models::{ModelKind, ModelSpec};
use qvflab_core::nef::NefFamily;
use qvflab_core::rwalk::{build_walk, occupation_times};
use rand::Rng;
use std::hint::black_box;

fn rate_tree(c: &mut Criterion) {
    let rates: Vec<f64> = (0..1024).map(|i| 1.0 + (i % 7) as f64).collect();
    let mut tree = RateTree::new(&rates);
    let mut rng = replica_rng(1, 0);
    c.bench_function("rate_tree/select+set 1024", |b| {
        b.iter(|| {
            let i = tree.select(rng.random::<f64>() * tree.total());
            tree.set(i, 1.0 + rng.random::<f64>());
        })
    });
}

fn kernels(c: &mut Criterion) {
    let mut rng = replica_rng(2, 0);
    for (name, family, pair) in [
        ("poisson", NefFamily::Poisson, (3.0, 5.0)),
        ("gamma", NefFamily::Gamma { two_s: 1.0 }, (0.7, 1.9)),
        ("ghs", NefFamily::Ghs { r: 1.0 }, (0.4, -1.3)),
    ] {
        let k = BondKernel::new(family).unwrap();
        c.bench_function(&format!("thermalize/{name}"), |b| {
            b.iter(|| black_box(k.thermalize(pair.0, pair.1, &mut rng)))
        });
    }
}

fn sweeps(c: &mut Criterion) {
    let mut group = c.benchmark_group("simulate N=64 t=0.01");
    group.sample_size(20);
    for kind in [
        ModelKind::Redistribution { family: NefFamily::Poisson },
        ModelKind::Irw,
        ModelKind::Sip { two_s: 2.0 },
        ModelKind::GinzburgLandau { sigma2: 1.0 },
    ] {
        let rho = if matches!(kind, ModelKind::GinzburgLandau { .. }) { 0.0 } else { 1.0 };
        let spec = ModelSpec::new(kind, rho).unwrap();
        let model = spec.build().unwrap();
        group.bench_function(kind.name(), |b| {
            let mut rng = replica_rng(3, 0);
            b.iter_batched(
                || init_product(spec, rho, 64, &mut replica_rng(4, 0)).unwrap(),
                |mut cfg| simulate(&model, &mut cfg, 0.01, &[0.01], &mut rng, &mut (), SimOptions::default()).unwrap(),
                BatchSize::SmallInput,
            )
        });
    }
    group.finish();
}

fn exact(c: &mut Criterion) {
    let model = ModelSpec::new(ModelKind::Sip { two_s: 2.0 }, 1.0).unwrap().build().unwrap();
    c.bench_function("exact_generator SIP N=6 M=8", |b| b.iter(|| exact_generator(&model, 6, 8).unwrap()));
}

fn deterministic(c: &mut Criterion) {
    let rho: Vec<f64> = (0..1024).map(|x| 1.0 + 0.5 * (x as f64 * 0.01).cos()).collect();
    let heat = HeatSolver::new(&rho, 0.5).unwrap();
    c.bench_function("heat profile N=1024", |b| b.iter(|| black_box(heat.profile(0.01))));
    let walk = build_walk(128, 0.5, 0.25, 0.0).unwrap();
    c.bench_function("occupation_times N=128", |b| b.iter(|| occupation_times(&walk, 1.0).unwrap()));
}

criterion_group!(benches, rate_tree, kernels, sweeps, exact, deterministic);
criterion_main!(benches);
