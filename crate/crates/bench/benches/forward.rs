use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use ctxcomp_core::compression::CompressorKind;
use ctxcomp_core::inference::generate_tokens;
use ctxcomp_core::model::Item;

fn forward(c: &mut Criterion) {
    let m = ctxcomp_bench::model(1024, CompressorKind::Full, 4);
    let mut g = c.benchmark_group("decoder_forward");
    for len in [64usize, 256] {
        let items: Vec<Item<f32>> = (0..len).map(|i| Item::Token((i % 1000) as u32 + 4)).collect();
        g.bench_with_input(BenchmarkId::from_parameter(len), &items, |b, items| {
            b.iter(|| m.decoder_forward(items).unwrap())
        });
    }
    g.finish();

    let mut g = c.benchmark_group("generate_16");
    for len in [32usize, 320] {
        let items: Vec<Item<f32>> = (0..len).map(|i| Item::Token((i % 1000) as u32 + 4)).collect();
        g.bench_with_input(BenchmarkId::from_parameter(len), &items, |b, items| {
            b.iter(|| generate_tokens(&m, items, 16, false).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, forward);
criterion_main!(benches);
