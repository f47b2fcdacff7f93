use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use ctxcomp_core::compression::{compress, CompressionConfig, CompressorKind};

fn compress_chunk(c: &mut Criterion) {
    let tokens: Vec<u32> = (0..64).map(|i| i * 7 % 1000 + 4).collect();
    let mut g = c.benchmark_group("compress_64");
    for kind in [CompressorKind::Full, CompressorKind::Light] {
        for rate in [4usize, 16, 64] {
            let m = ctxcomp_bench::model(1024, kind, rate);
            let cfg = CompressionConfig::new(rate, kind).unwrap();
            g.bench_with_input(BenchmarkId::new(format!("{kind:?}"), rate), &cfg, |b, cfg| {
                b.iter(|| compress("c", &tokens, cfg, &m).unwrap())
            });
        }
    }
    g.finish();
}

criterion_group!(benches, compress_chunk);
criterion_main!(benches);
