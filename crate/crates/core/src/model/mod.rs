//! Decoder language model, light encoder, block projection and the flat
//! parameter store holding all of them.

pub mod checkpoint;
pub mod config;
pub mod mixed;
pub mod params;
pub mod transformer;

pub use config::{CompressorSpec, DecoderConfig, EncoderConfig, ModelSpec};
pub use mixed::{Item, MixedSequence};
pub use params::{Group, ParameterStore};
pub use transformer::{StackCache, StackDims, StackLayout};

use crate::corpus::TokenId;
use crate::error::{Error, Result};
use crate::float::Float;
use params::Init;

/// Offsets of the `(rate * b) x d` block projection.
#[derive(Debug, Clone, Copy)]
pub struct ProjLayout {
    pub w: usize,
    pub b: usize,
    pub rate: usize,
    pub in_dim: usize,
    pub out_dim: usize,
}

/// All trainable components with their layouts.
#[derive(Debug, Clone)]
pub struct Model<T> {
    spec: ModelSpec,
    pub store: ParameterStore<T>,
    pub(crate) dec: StackLayout,
    pub(crate) comp: Option<StackLayout>,
    pub(crate) proj: Option<ProjLayout>,
}

impl<T: Float> Model<T> {
    /// Registers every tensor, zero-filled.
    pub fn zeroed(spec: ModelSpec) -> Result<Self> {
        spec.validate()?;
        let mut store = ParameterStore::default();
        let dc = spec.decoder;
        let dec_dims = StackDims {
            n_layers: dc.n_layers,
            dim: dc.dim,
            n_heads: dc.n_heads,
            d_ff: dc.d_ff,
            vocab: dc.vocab,
            max_len: dc.max_len,
            causal: true,
            head: true,
        };
        let dec = StackLayout::register(&mut store, "dec", dec_dims, Group::Decoder);
        let (comp, proj) = match spec.compressor {
            CompressorSpec::None => (None, None),
            CompressorSpec::Full => {
                let dims = StackDims { head: false, ..dec_dims };
                (Some(StackLayout::register(&mut store, "comp", dims, Group::Compressor)), None)
            }
            CompressorSpec::Light { encoder: e, rate } => {
                let dims = StackDims {
                    n_layers: e.n_layers,
                    dim: e.dim,
                    n_heads: e.n_heads,
                    d_ff: e.d_ff,
                    vocab: e.vocab,
                    max_len: e.max_len,
                    causal: false,
                    head: false,
                };
                let enc = StackLayout::register(&mut store, "enc", dims, Group::Compressor);
                let in_dim = rate * e.dim;
                let w = store.add("proj.w", &[in_dim, dc.dim], Group::Compressor, Init::Normal);
                let b = store.add("proj.b", &[dc.dim], Group::Compressor, Init::Zeros);
                (
                    Some(enc),
                    Some(ProjLayout {
                        w,
                        b,
                        rate,
                        in_dim,
                        out_dim: dc.dim,
                    }),
                )
            }
        };
        Ok(Self {
            spec,
            store,
            dec,
            comp,
            proj,
        })
    }

    /// Normal(0, 0.02) weights, zero biases, unit norm gains. A full
    /// compressor starts as a copy of the decoder trunk.
    pub fn init(spec: ModelSpec, seed: u64) -> Result<Self> {
        let mut m = Self::zeroed(spec)?;
        m.store.initialize(seed);
        if spec.compressor == CompressorSpec::Full {
            m.store.copy_prefix("dec.", "comp.");
        }
        Ok(m)
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn dim(&self) -> usize {
        self.spec.decoder.dim
    }

    pub fn vocab(&self) -> usize {
        self.spec.decoder.vocab
    }

    pub fn max_len(&self) -> usize {
        self.spec.decoder.max_len
    }

    pub fn decoder_layout(&self) -> &StackLayout {
        &self.dec
    }

    pub fn compressor_layout(&self) -> Option<&StackLayout> {
        self.comp.as_ref()
    }

    pub fn projection(&self) -> Option<&ProjLayout> {
        self.proj.as_ref()
    }

    /// Full-sequence logits, `items.len() x vocab`.
    pub fn decoder_forward(&self, items: &[Item<T>]) -> Result<Vec<T>> {
        let cache = transformer::forward(&self.dec, &self.store.data, items)?;
        let all: Vec<usize> = (0..items.len()).collect();
        Ok(transformer::logits_at(&self.dec, &self.store.data, &cache, &all))
    }

    /// Last hidden states of the light encoder, `tokens.len() x b`.
    pub fn encoder_forward(&self, tokens: &[TokenId]) -> Result<Vec<T>> {
        let enc = match (&self.spec.compressor, &self.comp) {
            (CompressorSpec::Light { .. }, Some(enc)) => enc,
            _ => return Err(Error::Config("model has no light encoder".into())),
        };
        let items: Vec<Item<T>> = mixed::tokens(tokens);
        Ok(transformer::forward(enc, &self.store.data, &items)?.y)
    }

    pub fn cast<U: Float>(&self) -> Model<U> {
        Model {
            spec: self.spec,
            store: self.store.cast(),
            dec: self.dec.clone(),
            comp: self.comp.clone(),
            proj: self.proj,
        }
    }
}

/// Seeded initialization in training precision.
pub fn init_params(spec: ModelSpec, seed: u64) -> Result<Model<f32>> {
    Model::init(spec, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Specials;

    fn tiny() -> ModelSpec {
        ModelSpec {
            decoder: DecoderConfig {
                n_layers: 2,
                dim: 8,
                n_heads: 2,
                d_ff: 32,
                vocab: 32,
                max_len: 16,
            },
            compressor: CompressorSpec::None,
        }
    }

    #[test]
    fn same_seed_same_store() {
        let a = init_params(tiny(), 9).unwrap();
        let b = init_params(tiny(), 9).unwrap();
        assert_eq!(a.store.data, b.store.data);
        let c = init_params(tiny(), 10).unwrap();
        assert_ne!(a.store.data, c.store.data);
    }

    #[test]
    fn decoder_parameter_count_closed_form() {
        let (l, d, f, v, heads, max_len) = (4usize, 64usize, 256usize, 4096usize, 4usize, 512usize);
        let spec = ModelSpec {
            decoder: DecoderConfig {
                n_layers: l,
                dim: d,
                n_heads: heads,
                d_ff: f,
                vocab: v,
                max_len,
            },
            compressor: CompressorSpec::None,
        };
        let m = Model::<f32>::zeroed(spec).unwrap();
        // embeddings + per-layer (2 norms, qkv, out, mlp) + final norm + head
        let per_layer = 4 * d + (3 * d * d + 3 * d) + (d * d + d) + (d * f + f) + (f * d + d);
        let want = v * d + max_len * d + l * per_layer + 2 * d + d * v;
        assert_eq!(want, 757_120);
        assert_eq!(m.store.len(), want);
    }

    #[test]
    fn full_compressor_starts_as_decoder_copy() {
        let spec = ModelSpec {
            compressor: CompressorSpec::Full,
            ..tiny()
        };
        let m = init_params(spec, 1).unwrap();
        assert_eq!(m.store.get("dec.l1.mlp.w2"), m.store.get("comp.l1.mlp.w2"));
        assert!(m.store.spec("comp.head.w").is_none());
    }

    #[test]
    fn encoder_shape_and_position_sensitivity() {
        let spec = ModelSpec {
            compressor: CompressorSpec::Light {
                encoder: EncoderConfig {
                    n_layers: 1,
                    dim: 4,
                    n_heads: 2,
                    d_ff: 16,
                    vocab: 32,
                    max_len: 16,
                },
                rate: 2,
            },
            ..tiny()
        };
        let m = init_params(spec, 2).unwrap();
        let toks: Vec<TokenId> = (20..30).collect();
        let h = m.encoder_forward(&toks).unwrap();
        assert_eq!(h.len(), 10 * 4);
        let mut swapped = toks.clone();
        swapped.swap(0, 1);
        assert_ne!(m.encoder_forward(&swapped).unwrap(), h);
        let long: Vec<TokenId> = vec![20; 17];
        assert!(matches!(m.encoder_forward(&long), Err(Error::LengthOverflow { .. })));
    }

    #[test]
    fn bidirectional_encoder_sees_the_future() {
        let spec = ModelSpec {
            compressor: CompressorSpec::Light {
                encoder: EncoderConfig {
                    n_layers: 1,
                    dim: 4,
                    n_heads: 1,
                    d_ff: 8,
                    vocab: 32,
                    max_len: 8,
                },
                rate: 2,
            },
            ..tiny()
        };
        let m = init_params(spec, 4).unwrap();
        let a = m.encoder_forward(&[20, 21, 22]).unwrap();
        let b = m.encoder_forward(&[20, 21, 23]).unwrap();
        assert_ne!(&a[..4], &b[..4]);
    }

    #[test]
    fn injected_vector_dimension_is_checked() {
        let m = init_params(tiny(), 1).unwrap();
        let items = vec![Item::Token(Specials::BOS), Item::Vector(vec![0.0; 7])];
        assert!(matches!(m.decoder_forward(&items), Err(Error::DimensionMismatch { .. })));
        let long: Vec<Item<f32>> = vec![Item::Token(Specials::BOS); 17];
        assert!(matches!(m.decoder_forward(&long), Err(Error::LengthOverflow { .. })));
    }
}
