//! Analytic gradients against central finite differences, 64-bit.

use ctxcomp_core::compression::{CompressionConfig, CompressorKind};
use ctxcomp_core::corpus::TokenId;
use ctxcomp_core::model::{CompressorSpec, DecoderConfig, EncoderConfig, Model, ModelSpec};
use ctxcomp_core::training::{
    ae_loss, ft_loss, lmce_loss, ContextMode, ContextRef, FinetuneSample, PretrainSample,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-5;
const TOL: f64 = 1e-4;

fn decoder() -> DecoderConfig {
    DecoderConfig {
        n_layers: 2,
        dim: 8,
        n_heads: 2,
        d_ff: 32,
        vocab: 32,
        max_len: 40,
    }
}

fn model(compressor: CompressorSpec, seed: u64) -> Model<f64> {
    let mut m = Model::<f64>::init(
        ModelSpec {
            decoder: decoder(),
            compressor,
        },
        seed,
    )
    .unwrap();
    // Spread the weights so every path carries a visible gradient.
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
    for v in m.store.data.iter_mut() {
        *v += rng.random_range(-0.3..0.3);
    }
    m
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

/// Compares every parameter's analytic gradient to a central difference.
fn check<F>(mut m: Model<f64>, loss: F) -> f64
where
    F: Fn(&Model<f64>, Option<&mut [f64]>) -> f64,
{
    let mut grads = vec![0.0; m.store.len()];
    loss(&m, Some(&mut grads));
    let mut worst: f64 = 0.0;
    let mut worst_name = String::new();
    let specs = m.store.specs().to_vec();
    for s in &specs {
        for i in s.range() {
            let orig = m.store.data[i];
            m.store.data[i] = orig + H;
            let up = loss(&m, None);
            m.store.data[i] = orig - H;
            let down = loss(&m, None);
            m.store.data[i] = orig;
            let fd = (up - down) / (2.0 * H);
            let e = rel_err(grads[i], fd);
            if e > worst {
                worst = e;
                worst_name = format!("{}[{}] analytic {} fd {}", s.name, i - s.offset, grads[i], fd);
            }
        }
    }
    println!("worst relative error {worst:.2e} at {worst_name}");
    worst
}

fn tokens(rng: &mut ChaCha8Rng, n: usize) -> Vec<TokenId> {
    (0..n).map(|_| rng.random_range(16..32)).collect()
}

#[test]
fn ae_gradient_full_compressor() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let sample = PretrainSample::ae(tokens(&mut rng, 8));
    let cfg = CompressionConfig::new(2, CompressorKind::Full).unwrap();
    let worst = check(model(CompressorSpec::Full, 2), |m, g| ae_loss(m, &sample, &cfg, g).unwrap());
    assert!(worst <= TOL, "worst {worst}");
}

#[test]
fn lmce_gradient_full_compressor() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let sample = PretrainSample::lmce(tokens(&mut rng, 10), 4).unwrap();
    let cfg = CompressionConfig::new(2, CompressorKind::Full).unwrap();
    let worst = check(model(CompressorSpec::Full, 3), |m, g| lmce_loss(m, &sample, &cfg, g).unwrap());
    assert!(worst <= TOL, "worst {worst}");
}

fn light() -> CompressorSpec {
    CompressorSpec::Light {
        encoder: EncoderConfig {
            n_layers: 2,
            dim: 4,
            n_heads: 2,
            d_ff: 16,
            vocab: 32,
            max_len: 40,
        },
        rate: 3,
    }
}

#[test]
fn ae_gradient_light_compressor() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    // 7 tokens at rate 3: two blocks, the trailing token dropped.
    let sample = PretrainSample::ae(tokens(&mut rng, 7));
    let cfg = CompressionConfig::new(3, CompressorKind::Light).unwrap();
    let worst = check(model(light(), 4), |m, g| ae_loss(m, &sample, &cfg, g).unwrap());
    assert!(worst <= TOL, "worst {worst}");
}

fn ft_sample(rng: &mut ChaCha8Rng) -> FinetuneSample {
    FinetuneSample {
        id: "s".into(),
        question: "q".into(),
        instruction: tokens(rng, 4),
        contexts: (0..3)
            .map(|i| ContextRef {
                id: format!("c{i}"),
                tokens: tokens(rng, 5 + i),
            })
            .collect(),
        response: tokens(rng, 3),
    }
}

#[test]
fn ft_gradient_compressed_contexts() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let sample = ft_sample(&mut rng);
    let mode = ContextMode::Compressed(CompressionConfig::new(2, CompressorKind::Full).unwrap());
    let worst = check(model(CompressorSpec::Full, 5), |m, g| ft_loss(m, &sample, &mode, 3, g).unwrap());
    assert!(worst <= TOL, "worst {worst}");
}

#[test]
fn ft_gradient_light_contexts() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let sample = ft_sample(&mut rng);
    let mode = ContextMode::Compressed(CompressionConfig::new(3, CompressorKind::Light).unwrap());
    let worst = check(model(light(), 6), |m, g| ft_loss(m, &sample, &mode, 2, g).unwrap());
    assert!(worst <= TOL, "worst {worst}");
}

#[test]
fn ft_gradient_raw_and_closed_book() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let sample = ft_sample(&mut rng);
    for mode in [ContextMode::Raw, ContextMode::ClosedBook] {
        let worst = check(model(CompressorSpec::None, 7), |m, g| ft_loss(m, &sample, &mode, 2, g).unwrap());
        assert!(worst <= TOL, "{mode:?}: worst {worst}");
    }
}
