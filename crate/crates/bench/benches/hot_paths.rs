use criterion::{black_box, criterion_group, criterion_main, Criterion};
use slm_bench::trained_default;
use slm_core::jare::combine;
use slm_core::CombinedDelta;

fn bench(c: &mut Criterion) {
    let (frozen, suite, run) = trained_default();
    let store = &run.store;
    let example = &suite.test_set(0).unwrap()[0];
    let q = frozen.encoder.encode(&example.tokens).unwrap();

    c.bench_function("encode", |b| b.iter(|| frozen.encoder.encode(black_box(&example.tokens)).unwrap()));
    c.bench_function("retrieve", |b| b.iter(|| store.retrieve(black_box(&q), store.top_k(), None).unwrap()));

    let hits = store.retrieve(&q, store.top_k(), None).unwrap();
    let parts: Vec<_> = hits
        .iter()
        .map(|h| (h.value_id, store.value(h.value_id).unwrap(), h.similarity))
        .collect();
    c.bench_function("combine", |b| b.iter(|| combine(black_box(&parts)).unwrap()));

    let delta = combine(&parts).unwrap();
    c.bench_function("forward_frozen", |b| {
        b.iter(|| frozen.net.forward(black_box(&example.tokens), &CombinedDelta::empty()).unwrap())
    });
    c.bench_function("forward_combined", |b| {
        b.iter(|| frozen.net.forward(black_box(&example.tokens), &delta).unwrap())
    });
    c.bench_function("loss_and_grads", |b| {
        let batch = [(example.tokens.as_slice(), example.label)];
        b.iter(|| frozen.net.loss_and_grads(black_box(&batch), &delta).unwrap())
    });
}

criterion_group!(benches, bench);
criterion_main!(benches);
