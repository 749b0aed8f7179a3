use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use ndarray::Array2;

use vfm_core::autodiff::Tape;
use vfm_core::gbt::{boost, GbtConfig, GbtData};
use vfm_core::model::{ModelKind, ModelSpec, NetworkParams};
use vfm_core::synth::{generate, SyntheticConfig};
use vfm_core::training::{loss_on_tape, Samples};
use vfm_core::WellId;

fn samples(n: usize, wells: usize) -> Samples {
    let mut state = 0x9e37_79b9_7f4a_7c15u64;
    let mut next = move || {
        state ^= state << 13;
        state ^= state >> 7;
        state ^= state << 17;
        (state >> 11) as f64 / (1u64 << 53) as f64
    };
    let x = Array2::from_shape_fn((n, 6), |_| next());
    let y = (0..n).map(|_| next()).collect();
    Samples { x, y, w: vec![0.1; n], rows: (0..n).map(|i| i % wells).collect() }
}

fn network(c: &mut Criterion) {
    let wells: Vec<WellId> = (0..12).map(|j| WellId(format!("w{j}"))).collect();
    let spec = ModelSpec::mtl(ModelKind::MtlUniversal, 6, 32, 2);
    let params = NetworkParams::init(&spec, wells, 1).unwrap();
    let s = samples(1000, 12);
    let idx: Vec<usize> = (0..s.len()).collect();

    c.bench_function("mtl forward 1000x6x32", |b| b.iter(|| params.predict_batch(black_box(&s.x), &s.rows).unwrap()));
    c.bench_function("mtl loss+backward 1000x6x32", |b| {
        b.iter(|| {
            let mut tape = Tape::new();
            let bound = params.bind(&mut tape);
            let (loss, _) = loss_on_tape(&mut tape, &params, &bound, &s, &idx, 1e-5, 1e-3).unwrap();
            tape.backward(loss).unwrap();
            black_box(tape.grad(bound.layers[0].0))
        })
    });
}

fn gbt(c: &mut Criterion) {
    let s = samples(1000, 1);
    let config = GbtConfig { rounds: 50, ..GbtConfig::default() };
    c.bench_function("gbt 50 rounds 1000x6", |b| {
        b.iter(|| boost(GbtData { x: &s.x, y: &s.y, w: &s.w }, None, black_box(&config)).unwrap())
    });
}

fn simulation(c: &mut Criterion) {
    let config = SyntheticConfig::default();
    c.bench_function("generate default 12 wells", |b| b.iter(|| generate(black_box(&config)).unwrap()));
}

criterion_group! {
    name = kernels;
    config = Criterion::default().sample_size(10);
    targets = network, gbt, simulation
}
criterion_main!(kernels);
