use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::float::Float;

/// Standard deviation of the weight initialization.
pub const INIT_STD: f64 = 0.02;

/// Which trainable component a tensor belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Group {
    Decoder,
    Compressor,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Init {
    Normal,
    Zeros,
    Ones,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub group: Group,
    pub trainable: bool,
    pub init: Init,
    #[serde(skip)]
    pub offset: usize,
}

impl ParamSpec {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.numel()
    }
}

/// Named tensors laid out back to back in one flat buffer. Gradients and
/// optimizer state use the same layout.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterStore<T> {
    specs: Vec<ParamSpec>,
    index: HashMap<String, usize>,
    pub data: Vec<T>,
}

impl<T: Float> Default for ParameterStore<T> {
    fn default() -> Self {
        Self {
            specs: Vec::new(),
            index: HashMap::new(),
            data: Vec::new(),
        }
    }
}

impl<T: Float> ParameterStore<T> {
    /// Registers a zero-filled tensor and returns its offset.
    pub fn add(&mut self, name: impl Into<String>, shape: &[usize], group: Group, init: Init) -> usize {
        let name = name.into();
        assert!(!self.index.contains_key(&name), "duplicate parameter {name}");
        let offset = self.data.len();
        let spec = ParamSpec {
            name: name.clone(),
            shape: shape.to_vec(),
            group,
            trainable: true,
            init,
            offset,
        };
        self.data.resize(offset + spec.numel(), T::zero());
        self.index.insert(name, self.specs.len());
        self.specs.push(spec);
        offset
    }

    /// Fills every tensor per its init rule from one seeded stream, in
    /// registration order.
    pub fn initialize(&mut self, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, INIT_STD).unwrap();
        for s in &self.specs {
            let r = s.range();
            match s.init {
                Init::Normal => {
                    for v in &mut self.data[r] {
                        *v = T::of(normal.sample(&mut rng));
                    }
                }
                Init::Zeros => self.data[r].fill(T::zero()),
                Init::Ones => self.data[r].fill(T::one()),
            }
        }
    }

    pub fn specs(&self) -> &[ParamSpec] {
        &self.specs
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn spec(&self, name: &str) -> Option<&ParamSpec> {
        self.index.get(name).map(|&i| &self.specs[i])
    }

    pub fn get(&self, name: &str) -> Option<&[T]> {
        self.spec(name).map(|s| &self.data[s.range()])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut [T]> {
        let r = self.spec(name)?.range();
        Some(&mut self.data[r])
    }

    pub fn set_trainable(&mut self, group: Group, trainable: bool) {
        for s in self.specs.iter_mut().filter(|s| s.group == group) {
            s.trainable = trainable;
        }
    }

    pub fn is_group_trainable(&self, group: Group) -> bool {
        self.specs.iter().any(|s| s.group == group && s.trainable)
    }

    pub fn count(&self, group: Option<Group>) -> usize {
        self.specs
            .iter()
            .filter(|s| group.is_none_or(|g| s.group == g))
            .map(|s| s.numel())
            .sum()
    }

    /// Zeroes gradient entries of frozen tensors.
    pub fn mask_frozen(&self, grads: &mut [T]) {
        for s in self.specs.iter().filter(|s| !s.trainable) {
            grads[s.range()].fill(T::zero());
        }
    }

    /// Copies the values of one group's tensors into another prefix, matching
    /// by name suffix (`from.x` -> `to.x`).
    pub fn copy_prefix(&mut self, from: &str, to: &str) {
        let pairs: Vec<(std::ops::Range<usize>, std::ops::Range<usize>)> = self
            .specs
            .iter()
            .filter_map(|s| {
                let rest = s.name.strip_prefix(from)?;
                let dst = self.spec(&format!("{to}{rest}"))?;
                (dst.shape == s.shape).then(|| (s.range(), dst.range()))
            })
            .collect();
        for (src, dst) in pairs {
            let (lo, hi) = if src.start < dst.start {
                let (a, b) = self.data.split_at_mut(dst.start);
                (&a[src.clone()], &mut b[..dst.len()])
            } else {
                let (a, b) = self.data.split_at_mut(src.start);
                (&b[..src.len()], &mut a[dst.clone()])
            };
            hi.copy_from_slice(lo);
        }
    }

    /// Same layout in another precision.
    pub fn cast<U: Float>(&self) -> ParameterStore<U> {
        ParameterStore {
            specs: self.specs.clone(),
            index: self.index.clone(),
            data: self.data.iter().map(|v| U::of(v.as_f64())).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store() -> ParameterStore<f32> {
        let mut s = ParameterStore::default();
        s.add("dec.w", &[3, 4], Group::Decoder, Init::Normal);
        s.add("dec.b", &[4], Group::Decoder, Init::Zeros);
        s.add("dec.g", &[4], Group::Decoder, Init::Ones);
        s.add("comp.w", &[3, 4], Group::Compressor, Init::Normal);
        s
    }

    #[test]
    fn init_follows_rules_and_seed() {
        let mut a = store();
        a.initialize(1);
        let mut b = store();
        b.initialize(1);
        assert_eq!(a, b);
        assert!(a.get("dec.b").unwrap().iter().all(|&v| v == 0.0));
        assert!(a.get("dec.g").unwrap().iter().all(|&v| v == 1.0));
        let mut c = store();
        c.initialize(2);
        assert_ne!(a.get("dec.w"), c.get("dec.w"));
    }

    #[test]
    fn freeze_masks_group() {
        let mut s = store();
        s.set_trainable(Group::Compressor, false);
        let mut g = vec![1.0f32; s.len()];
        s.mask_frozen(&mut g);
        let r = s.spec("comp.w").unwrap().range();
        assert!(g[r.clone()].iter().all(|&v| v == 0.0));
        assert!(g[..r.start].iter().all(|&v| v == 1.0));
    }

    #[test]
    fn copy_prefix_copies_values() {
        let mut s = store();
        s.initialize(3);
        s.copy_prefix("dec.", "comp.");
        assert_eq!(s.get("dec.w"), s.get("comp.w"));
    }
}
